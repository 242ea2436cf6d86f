#pragma once

namespace lrm {

/// Axis-aligned rectangle in continuous pixel coordinates, corner encoded.
/// No +1 pixel convention: a box (0,0,2,2) has area 4.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

double area(const Box& b);

/// Intersection over union. Two zero-area boxes have IoU 0.
double iou(const Box& a, const Box& b);

Box from_center(double cx, double cy, double w, double h);

}  // namespace lrm

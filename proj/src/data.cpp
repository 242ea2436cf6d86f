#include "lrm/data.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "lrm/error.hpp"
#include "lrm/random.hpp"

namespace lrm {

namespace fs = std::filesystem;

void SceneConfig::validate() const {
  if (image_size <= 0) throw ContractError("scene image_size must be positive");
  if (class_count <= 0) throw ContractError("scene class_count must be positive");
  if (grid_size <= 0 || image_size % grid_size != 0) throw ContractError("scene grid_size must divide image_size");
  if (min_objects < 0 || max_objects < min_objects) throw ContractError("objects_per_image range is empty");
  if (!(min_object_fraction > 0.0) || max_object_fraction < min_object_fraction || max_object_fraction > 1.0) {
    throw ContractError("object size range must satisfy 0 < min <= max <= 1");
  }
  if (!(noise >= 0.0)) throw ContractError("noise amplitude must be non-negative");
  if (!(max_object_cell_fraction > 0.0 && max_object_cell_fraction <= 1.0)) {
    throw ContractError("max_object_cell_fraction must lie in (0, 1]");
  }
  if (!(overlap_budget >= 0.0 && overlap_budget <= 1.0)) throw ContractError("overlap_budget must lie in [0, 1]");
  if (max_attempts < 1) throw ContractError("max_attempts must be positive");
}

std::array<double, 3> class_color(int class_id) {
  static constexpr std::array<std::array<double, 3>, 6> kPalette = {{
      {0.85, 0.25, 0.2},
      {0.25, 0.8, 0.3},
      {0.25, 0.3, 0.85},
      {0.85, 0.8, 0.2},
      {0.8, 0.25, 0.8},
      {0.2, 0.8, 0.8},
  }};
  const auto& base = kPalette[static_cast<std::size_t>(class_id) % kPalette.size()];
  // Later cycles get darker so every class stays distinct.
  const double shade = 1.0 - 0.25 * static_cast<double>(class_id / static_cast<int>(kPalette.size()) % 3);
  return {base[0] * shade, base[1] * shade, base[2] * shade};
}

namespace {

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

struct Rect {
  int x0, y0, w, h;
};

}  // namespace

Sample generate_one(const SceneConfig& cfg, int index) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  const int size = cfg.image_size;
  const int stride = size / cfg.grid_size;
  const int max_cells = std::max(
      1, static_cast<int>(std::floor(cfg.max_object_cell_fraction * cfg.grid_size * cfg.grid_size + 1e-9)));

  const int wanted = static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects));
  if (wanted > max_cells) {
    throw RuntimeError("infeasible placement: " + std::to_string(wanted) + " objects exceed the cap of " +
                       std::to_string(max_cells) + " object cells");
  }

  std::vector<Rect> rects;
  std::vector<int> classes;
  std::set<std::pair<int, int>> used_cells;
  for (int n = 0; n < wanted; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const int cls = static_cast<int>(rng.uniform_int(0, cfg.class_count - 1));
      const double frac = rng.uniform(cfg.min_object_fraction, cfg.max_object_fraction);
      const int side = std::max(2, static_cast<int>(std::lround(frac * size)));
      const int longer = std::min(size, static_cast<int>(std::lround(1.6 * side)));
      int w = side, h = side;
      switch (cls % 3) {
        case 1: w = longer; break;
        case 2: h = longer; break;
        default: break;
      }
      w = std::min(w, size);
      h = std::min(h, size);
      const Rect r{static_cast<int>(rng.uniform_int(0, size - w)), static_cast<int>(rng.uniform_int(0, size - h)), w, h};
      // Integer corners; the center may sit on a half pixel.
      const double cx = r.x0 + 0.5 * r.w;
      const double cy = r.y0 + 0.5 * r.h;
      const std::pair<int, int> cell{std::min(cfg.grid_size - 1, static_cast<int>(cy / stride)),
                                     std::min(cfg.grid_size - 1, static_cast<int>(cx / stride))};
      if (used_cells.contains(cell)) continue;
      const Box candidate{double(r.x0), double(r.y0), double(r.x0 + r.w), double(r.y0 + r.h)};
      bool clash = false;
      for (const auto& o : rects) {
        const Box other{double(o.x0), double(o.y0), double(o.x0 + o.w), double(o.y0 + o.h)};
        const double overlap = iou(candidate, other);
        if (cfg.overlap_budget == 0.0 ? overlap > 0.0 : overlap > cfg.overlap_budget) {
          clash = true;
          break;
        }
      }
      if (clash) continue;
      rects.push_back(r);
      classes.push_back(cls);
      used_cells.insert(cell);
      placed = true;
    }
    if (!placed) {
      throw RuntimeError("infeasible placement for sample " + std::to_string(index) + " after " +
                         std::to_string(cfg.max_attempts) + " attempts");
    }
  }

  Sample s;
  char id[32];
  std::snprintf(id, sizeof id, "%06d", index);
  s.id = id;
  s.image = ImageTensor::zeros(size);
  s.paint_mask.assign(static_cast<std::size_t>(size) * size, -1);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = 0.5 + cfg.noise * rng.uniform(-1.0, 1.0);
    }
  }
  for (std::size_t n = 0; n < rects.size(); ++n) {
    const Rect& r = rects[n];
    const auto color = class_color(classes[n]);
    for (int y = r.y0; y < r.y0 + r.h; ++y) {
      for (int x = r.x0; x < r.x0 + r.w; ++x) {
        for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = color[static_cast<std::size_t>(c)] + 0.5 * cfg.noise * rng.uniform(-1.0, 1.0);
        s.paint_mask[static_cast<std::size_t>(y) * size + x] = static_cast<int>(n);
      }
    }
    s.truth.boxes.push_back({double(r.x0), double(r.y0), double(r.x0 + r.w), double(r.y0 + r.h)});
    s.truth.classes.push_back(classes[n]);
  }
  for (double& v : s.image.values) v = quantize(v);
  return s;
}

std::vector<Sample> generate(const SceneConfig& cfg, int count) {
  if (count < 1) throw ContractError("generate: count must be >= 1");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) out.push_back(generate_one(cfg, n));
  return out;
}

std::vector<std::string> default_class_names(int class_count) {
  static const std::array<std::string, 3> kNames = {"square", "wide", "tall"};
  std::vector<std::string> names;
  for (int c = 0; c < class_count; ++c) {
    names.push_back(c < 3 ? kNames[static_cast<std::size_t>(c)] : "class" + std::to_string(c));
  }
  return names;
}

std::string write_labels(const GroundTruth& gt, const std::vector<std::string>& classes) {
  if (gt.boxes.size() != gt.classes.size()) throw ContractError("ground truth boxes/classes length mismatch");
  std::string out;
  char buf[256];
  for (std::size_t n = 0; n < gt.size(); ++n) {
    const int c = gt.classes[n];
    if (c < 0 || static_cast<std::size_t>(c) >= classes.size()) throw ContractError("class id without a name");
    const Box& b = gt.boxes[n];
    std::snprintf(buf, sizeof buf, " %.6f %.6f %.6f %.6f\n", b.x_min, b.y_min, b.x_max, b.y_max);
    out += classes[static_cast<std::size_t>(c)];
    out += buf;
  }
  return out;
}

namespace {

struct Token {
  std::string_view text;
  int column;  // 1-based
};

std::vector<Token> tokenize(std::string_view line) {
  std::vector<Token> toks;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    toks.push_back({line.substr(start, i - start), static_cast<int>(start) + 1});
  }
  return toks;
}

double parse_coordinate(const Token& tok, int line) {
  const std::string s(tok.text);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
    throw ParseError("malformed coordinate '" + s + "'", line, tok.column);
  }
  return v;
}

}  // namespace

GroundTruth parse_labels(std::string_view text, const std::vector<std::string>& classes,
                         std::optional<int> image_size) {
  GroundTruth gt;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;

    const auto toks = tokenize(line);
    if (toks.empty()) continue;
    const auto it = std::find(classes.begin(), classes.end(), toks[0].text);
    if (it == classes.end()) {
      throw ParseError("unknown class '" + std::string(toks[0].text) + "'", line_no, toks[0].column);
    }
    if (toks.size() < 5) {
      throw ParseError("expected 4 coordinates after the class name, found " + std::to_string(toks.size() - 1),
                       line_no, static_cast<int>(line.size()) + 1);
    }
    if (toks.size() > 5) throw ParseError("unexpected extra field", line_no, toks[5].column);
    Box b{parse_coordinate(toks[1], line_no), parse_coordinate(toks[2], line_no), parse_coordinate(toks[3], line_no),
          parse_coordinate(toks[4], line_no)};
    if (!(b.x_min < b.x_max)) throw ParseError("x_max must exceed x_min", line_no, toks[3].column);
    if (!(b.y_min < b.y_max)) throw ParseError("y_max must exceed y_min", line_no, toks[4].column);
    if (image_size) {
      const double lim = *image_size;
      for (int t = 1; t <= 4; ++t) {
        const double v = t == 1 ? b.x_min : t == 2 ? b.y_min : t == 3 ? b.x_max : b.y_max;
        if (v < 0.0 || v > lim) throw ParseError("coordinate outside the image", line_no, toks[static_cast<std::size_t>(t)].column);
      }
    }
    gt.boxes.push_back(b);
    gt.classes.push_back(static_cast<int>(it - classes.begin()));
  }
  return gt;
}

std::string encode_ppm(const ImageTensor& img) {
  img.validate();
  std::string out = "P6\n" + std::to_string(img.size) + " " + std::to_string(img.size) + "\n255\n";
  out.reserve(out.size() + img.values.size());
  for (double v : img.values) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  return out;
}

ImageTensor decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  if (next_token() != "P6") throw RuntimeError("ppm: missing P6 magic");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw RuntimeError("ppm: malformed header");
  }
  if (w <= 0 || w != h) throw RuntimeError("ppm: only square images are supported");
  if (maxval != 255) throw RuntimeError("ppm: only 8-bit images are supported");
  ++pos;  // single whitespace byte after maxval
  const std::size_t n = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < pos + n) throw RuntimeError("ppm: truncated pixel data");
  ImageTensor img = ImageTensor::zeros(w);
  for (std::size_t e = 0; e < n; ++e) img.values[e] = static_cast<unsigned char>(bytes[pos + e]) / 255.0;
  return img;
}

namespace {

void write_file(const fs::path& path, std::string_view contents) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeError("cannot open " + path.string() + " for writing");
  f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!f) throw RuntimeError("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RuntimeError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

void write_dataset(const fs::path& dir, const std::vector<Sample>& samples, const std::vector<std::string>& classes) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw RuntimeError("cannot create " + (dir / "images").string() + ": " + ec.message());
  fs::create_directories(dir / "labels", ec);
  if (ec) throw RuntimeError("cannot create " + (dir / "labels").string() + ": " + ec.message());
  std::string names;
  for (const auto& c : classes) names += c + "\n";
  write_file(dir / "classes.txt", names);
  for (const auto& s : samples) {
    write_file(dir / "images" / (s.id + ".ppm"), encode_ppm(s.image));
    write_file(dir / "labels" / (s.id + ".txt"), write_labels(s.truth, classes));
  }
}

Dataset read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw RuntimeError("dataset directory " + dir.string() + " does not exist");
  Dataset ds;
  {
    std::istringstream names(read_file(dir / "classes.txt"));
    std::string line;
    while (std::getline(names, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) ds.classes.push_back(line);
    }
  }
  if (ds.classes.empty()) throw RuntimeError("classes.txt lists no classes");

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir / "labels")) {
    if (entry.path().extension() == ".txt") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    Sample s;
    s.id = id;
    s.image = decode_ppm(read_file(dir / "images" / (id + ".ppm")));
    try {
      s.truth = parse_labels(read_file(dir / "labels" / (id + ".txt")), ds.classes, s.image.size);
    } catch (const ParseError& e) {
      throw RuntimeError("labels/" + id + ".txt: " + e.what());
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

SplitIndices split_indices(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("split ratio must lie in (0, 1)");
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < n; ++k) order[k] = k;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split(const std::vector<Sample>& samples, double ratio,
                                                          std::uint64_t seed) {
  const auto idx = split_indices(samples.size(), ratio, seed);
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (auto k : idx.train) out.first.push_back(samples[k]);
  for (auto k : idx.test) out.second.push_back(samples[k]);
  return out;
}

}  // namespace lrm

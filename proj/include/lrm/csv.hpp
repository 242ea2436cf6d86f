#pragma once

#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace lrm {

/// Minimal RFC-4180 writer: fields containing ',', '"', CR or LF are quoted,
/// rows end in "\n".
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  void row(std::initializer_list<std::string_view> fields) { write(fields.begin(), fields.end()); }
  void row(const std::vector<std::string>& fields) { write(fields.begin(), fields.end()); }

 private:
  template <typename It>
  void write(It first, It last) {
    for (It it = first; it != last; ++it) {
      if (it != first) out_ << ',';
      field(*it);
    }
    out_ << '\n';
  }

  void field(std::string_view f) {
    if (f.find_first_of(",\"\r\n") == std::string_view::npos) {
      out_ << f;
      return;
    }
    out_ << '"';
    for (char c : f) {
      if (c == '"') out_ << '"';
      out_ << c;
    }
    out_ << '"';
  }

  std::ostream& out_;
};

/// Fixed-point formatting used for every real number written to CSV.
std::string format_real(double v, int decimals = 6);

}  // namespace lrm

#include "lrm/csv.hpp"

#include <cstdio>

namespace lrm {

std::string format_real(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s(buf);
  if (s == "-0" || (s.starts_with("-0.") && s.find_first_not_of("-0.") == std::string::npos)) s.erase(0, 1);
  return s;
}

}  // namespace lrm

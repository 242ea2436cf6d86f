#include "lrm/run_config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "lrm/error.hpp"

namespace lrm {

SceneConfig RunConfig::scene() const {
  SceneConfig s;
  s.image_size = grid.image_size;
  s.class_count = grid.class_count;
  s.grid_size = grid.grid_size;
  s.min_objects = objects_min;
  s.max_objects = objects_max;
  s.min_object_fraction = object_size_min;
  s.max_object_fraction = object_size_max;
  s.noise = noise;
  s.max_object_cell_fraction = max_object_cell_fraction;
  s.overlap_budget = overlap_budget;
  s.seed = data_seed;
  return s;
}

void RunConfig::validate() const {
  grid.validate();
  if (hidden <= 0) throw ContractError("net.hidden must be positive");
  weights.validate();
  if (!(ignore_iou >= 0.0 && ignore_iou <= 1.0)) throw ContractError("loss.ignore_iou must lie in [0, 1]");
  lrm.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ContractError("opt.lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("opt.momentum must lie in [0, 1)");
  if (batch < 1) throw ContractError("opt.batch must be positive");
  if (iters < 0) throw ContractError("opt.iters must be non-negative");
  if (data_count < 2) throw ContractError("data.count must be at least 2");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ContractError("data.split must lie in (0, 1)");
  if (data_dir.empty()) scene().validate();
  eval.validate();
}

namespace {

std::string format_double(double v) {
  char buf[64];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

struct ValueError {
  std::string message;
};

double to_double(const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(d)) throw ValueError{"expected a real number"};
  return d;
}

long long to_int(const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const long long n = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE) throw ValueError{"expected an integer"};
  return n;
}

std::uint64_t to_u64(const std::string& v) {
  if (v.empty() || v[0] == '-') throw ValueError{"expected a non-negative integer"};
  char* end = nullptr;
  errno = 0;
  const unsigned long long n = std::strtoull(v.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) throw ValueError{"expected a non-negative integer"};
  return n;
}

int to_int32(const std::string& v) {
  const long long n = to_int(v);
  if (n < -2147483647LL || n > 2147483647LL) throw ValueError{"integer out of range"};
  return static_cast<int>(n);
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ValueError{"expected true/false"};
}

std::vector<Anchor> to_anchors(const std::string& v) {
  std::vector<Anchor> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto x = item.find('x');
    if (x == std::string::npos) throw ValueError{"anchors are written WxH, comma separated"};
    out.push_back({to_double(trim(item.substr(0, x))), to_double(trim(item.substr(x + 1)))});
  }
  if (out.empty()) throw ValueError{"at least one anchor is required"};
  return out;
}

std::string from_anchors(const std::vector<Anchor>& anchors) {
  std::string s;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (a > 0) s += ",";
    s += format_double(anchors[a].w) + "x" + format_double(anchors[a].h);
  }
  return s;
}

ApProtocol to_protocol(const std::string& v) {
  if (v == "voc07") return ApProtocol::kVoc07ElevenPoint;
  if (v == "area") return ApProtocol::kAreaUnderCurve;
  throw ValueError{"expected voc07 or area"};
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      {"grid.size", [](RunConfig& c, const std::string& v) { c.grid.grid_size = to_int32(v); },
       [](const RunConfig& c) { return std::to_string(c.grid.grid_size); }},
      {"grid.image_size", [](RunConfig& c, const std::string& v) { c.grid.image_size = to_int32(v); },
       [](const RunConfig& c) { return std::to_string(c.grid.image_size); }},
      {"grid.classes", [](RunConfig& c, const std::string& v) { c.grid.class_count = to_int32(v); },
       [](const RunConfig& c) { return std::to_string(c.grid.class_count); }},
      {"grid.anchors",
       [](RunConfig& c, const std::string& v) {
         c.grid.anchors = to_anchors(v);
         c.grid.anchor_count = static_cast<int>(c.grid.anchors.size());
       },
       [](const RunConfig& c) { return from_anchors(c.grid.anchors); }},
      {"net.hidden", [](RunConfig& c, const std::string& v) { c.hidden = to_int32(v); },
       [](const RunConfig& c) { return std::to_string(c.hidden); }},
      {"loss.coord", [](RunConfig& c, const std::string& v) { c.weights.coord = to_double(v); },
       [](const RunConfig& c) { return format_double(c.weights.coord); }},
      {"loss.obj", [](RunConfig& c, const std::string& v) { c.weights.obj = to_double(v); },
       [](const RunConfig& c) { return format_double(c.weights.obj); }},
      {"loss.noobj", [](RunConfig& c, const std::string& v) { c.weights.noobj = to_double(v); },
       [](const RunConfig& c) { return format_double(c.weights.noobj); }},
      {"loss.cls", [](RunConfig& c, const std::string& v) { c.weights.cls = to_double(v); },
       [](const RunConfig& c) { return format_double(c.weights.cls); }},
      {"loss.ignore_iou", [](RunConfig& c, const std::string& v) { c.ignore_iou = to_double(v); },
       [](const RunConfig& c) { return format_double(c.ignore_iou); }},
      {"lrm.enabled", [](RunConfig& c, const std::string& v) { c.lrm.enabled = to_bool(v); },
       [](const RunConfig& c) { return std::string(c.lrm.enabled ? "true" : "false"); }},
      {"lrm.k", [](RunConfig& c, const std::string& v) { c.lrm.hard_example_count = to_int32(v); },
       [](const RunConfig& c) { return std::to_string(c.lrm.hard_example_count); }},
      {"lrm.nms",
       [](RunConfig& c, const std::string& v) {
         try {
           c.lrm.nms_threshold = parse_nms_value(v);
         } catch (const ContractError& e) {
           throw ValueError{e.what()};
         }
       },
       [](const RunConfig& c) { return format_nms_value(c.lrm.nms_threshold); }},
      {"lrm.force_keep_assigned", [](RunConfig& c, const std::string& v) { c.lrm.force_keep_assigned = to_bool(v); },
       [](const RunConfig& c) { return std::string(c.lrm.force_keep_assigned ? "true" : "false"); }},
      {"opt.lr", [](RunConfig& c, const std::string& v) { c.learning_rate = to_double(v); },
       [](const RunConfig& c) { return format_double(c.learning_rate); }},
      {"opt.momentum", [](RunConfig& c, const std::string& v) { c.momentum = to_double(v); },
       [](const RunConfig& c) { return format_double(c.momentum); }},
      {"opt.batch", [](RunConfig& c, const std::string& v) { c.batch = to_int32(v); },
       [](const RunConfig& c) { return std::to_string(c.batch); }},
      {"opt.iters", [](RunConfig& c, const std::string& v) { c.iters = to_int32(v); },
       [](const RunConfig& c) { return std::to_string(c.iters); }},
      {"data.dir", [](RunConfig& c, const std::string& v) { c.data_dir = v; },
       [](const RunConfig& c) { return c.data_dir; }},
      {"data.count", [](RunConfig& c, const std::string& v) { c.data_count = to_int32(v); },
       [](const RunConfig& c) { return std::to_string(c.data_count); }},
      {"data.split", [](RunConfig& c, const std::string& v) { c.split_ratio = to_double(v); },
       [](const RunConfig& c) { return format_double(c.split_ratio); }},
      {"data.seed", [](RunConfig& c, const std::string& v) { c.data_seed = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.data_seed); }},
      {"data.objects_min", [](RunConfig& c, const std::string& v) { c.objects_min = to_int32(v); },
       [](const RunConfig& c) { return std::to_string(c.objects_min); }},
      {"data.objects_max", [](RunConfig& c, const std::string& v) { c.objects_max = to_int32(v); },
       [](const RunConfig& c) { return std::to_string(c.objects_max); }},
      {"data.size_min", [](RunConfig& c, const std::string& v) { c.object_size_min = to_double(v); },
       [](const RunConfig& c) { return format_double(c.object_size_min); }},
      {"data.size_max", [](RunConfig& c, const std::string& v) { c.object_size_max = to_double(v); },
       [](const RunConfig& c) { return format_double(c.object_size_max); }},
      {"data.noise", [](RunConfig& c, const std::string& v) { c.noise = to_double(v); },
       [](const RunConfig& c) { return format_double(c.noise); }},
      {"data.max_cell_fraction", [](RunConfig& c, const std::string& v) { c.max_object_cell_fraction = to_double(v); },
       [](const RunConfig& c) { return format_double(c.max_object_cell_fraction); }},
      {"data.overlap_budget", [](RunConfig& c, const std::string& v) { c.overlap_budget = to_double(v); },
       [](const RunConfig& c) { return format_double(c.overlap_budget); }},
      {"eval.iou_threshold", [](RunConfig& c, const std::string& v) { c.eval.iou_threshold = to_double(v); },
       [](const RunConfig& c) { return format_double(c.eval.iou_threshold); }},
      {"eval.nms", [](RunConfig& c, const std::string& v) { c.eval.nms_threshold = to_double(v); },
       [](const RunConfig& c) { return format_double(c.eval.nms_threshold); }},
      {"eval.floor", [](RunConfig& c, const std::string& v) { c.eval.confidence_floor = to_double(v); },
       [](const RunConfig& c) { return format_double(c.eval.confidence_floor); }},
      {"eval.protocol", [](RunConfig& c, const std::string& v) { c.eval.protocol = to_protocol(v); },
       [](const RunConfig& c) {
         return std::string(c.eval.protocol == ApProtocol::kVoc07ElevenPoint ? "voc07" : "area");
       }},
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
  };
  return k;
}

}  // namespace

std::optional<double> parse_nms_value(std::string_view text) {
  const std::string v = trim(text);
  if (v == "none") return std::nullopt;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || !(d > 0.0 && d <= 1.0)) {
    throw ContractError("NMS threshold must be 'none' or a real in (0, 1], got '" + v + "'");
  }
  return d;
}

std::string format_nms_value(std::optional<double> nms) { return nms ? format_double(*nms) : "none"; }

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string line(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_no, 1);
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto& all = keys();
    const auto it = std::find_if(all.begin(), all.end(), [&](const Key& k) { return key == k.name; });
    const int value_col = static_cast<int>(line.find_first_not_of(" \t", eq + 1)) + 1;
    if (it == all.end()) throw ParseError("unknown key '" + key + "'", line_no, 1);
    try {
      it->set(cfg, value);
    } catch (const ValueError& e) {
      throw ParseError(key + ": " + e.message + ", got '" + value + "'", line_no, value_col > 0 ? value_col : 1);
    }
  }
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw RuntimeError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw RuntimeError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ParseError& e) {
    throw RuntimeError(path.string() + ": " + e.what());
  }
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace lrm

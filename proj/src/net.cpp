#include "lrm/net.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "lrm/error.hpp"
#include "lrm/random.hpp"

namespace lrm {

void ImageTensor::validate() const {
  if (size <= 0) throw ContractError("image size must be positive");
  if (values.size() != static_cast<std::size_t>(size) * size * 3) throw ContractError("image buffer size mismatch");
  for (double v : values) {
    if (!std::isfinite(v)) throw ContractError("image contains non-finite values");
  }
}

namespace {

constexpr std::array<const char*, kParamSlotCount> kSlotNames = {
    "proj_w", "proj_b", "hidden1_w", "hidden1_b", "hidden2_w", "hidden2_b", "out_w", "out_b"};

std::array<std::pair<int, int>, kParamSlotCount> slot_shapes(const GridSpec& spec, int hidden) {
  const int patch = spec.stride() * spec.stride() * 3;
  const int out = spec.channels();
  return {{{hidden, patch}, {hidden, 1}, {hidden, hidden}, {hidden, 1}, {hidden, hidden}, {hidden, 1}, {out, hidden},
           {out, 1}}};
}

// z[r] = b[r] + sum_c W[r][c] x[c]
void affine(const ParamTensor& w, const ParamTensor& b, const double* x, double* z) {
  for (int r = 0; r < w.rows; ++r) {
    const double* row = w.values.data() + static_cast<std::size_t>(r) * w.cols;
    double acc = b.values[static_cast<std::size_t>(r)];
    for (int c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    z[r] = acc;
  }
}

// dW += dz x^T, db += dz, dx = W^T dz (dx may be null)
void affine_backward(const ParamTensor& w, const double* x, const double* dz, std::vector<double>& dw,
                     std::vector<double>& db, double* dx) {
  if (dx != nullptr) std::fill(dx, dx + w.cols, 0.0);
  for (int r = 0; r < w.rows; ++r) {
    const double g = dz[r];
    db[static_cast<std::size_t>(r)] += g;
    if (g == 0.0) continue;
    const double* row = w.values.data() + static_cast<std::size_t>(r) * w.cols;
    double* drow = dw.data() + static_cast<std::size_t>(r) * w.cols;
    for (int c = 0; c < w.cols; ++c) {
      drow[c] += g * x[c];
      if (dx != nullptr) dx[c] += g * row[c];
    }
  }
}

}  // namespace

std::size_t DetectorParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

void DetectorParams::validate() const {
  spec.validate();
  if (hidden <= 0) throw ContractError("hidden size must be positive");
  const auto shapes = slot_shapes(spec, hidden);
  for (std::size_t s = 0; s < kParamSlotCount; ++s) {
    const auto& t = tensors[s];
    if (t.rows != shapes[s].first || t.cols != shapes[s].second ||
        t.values.size() != static_cast<std::size_t>(t.rows) * t.cols) {
      throw ContractError("parameter tensor " + std::string(kSlotNames[s]) + " has shape " + std::to_string(t.rows) +
                          "x" + std::to_string(t.cols) + ", expected " + std::to_string(shapes[s].first) + "x" +
                          std::to_string(shapes[s].second));
    }
    for (double v : t.values) {
      if (!std::isfinite(v)) throw ContractError("parameter tensor " + t.name + " has non-finite values");
    }
  }
}

DetectorParams zero_params(const GridSpec& spec, int hidden) {
  spec.validate();
  if (hidden <= 0) throw ContractError("hidden size must be positive");
  DetectorParams p;
  p.spec = spec;
  p.hidden = hidden;
  const auto shapes = slot_shapes(spec, hidden);
  for (std::size_t s = 0; s < kParamSlotCount; ++s) {
    p.tensors[s] = ParamTensor{kSlotNames[s], shapes[s].first, shapes[s].second,
                               std::vector<double>(static_cast<std::size_t>(shapes[s].first) * shapes[s].second, 0.0)};
  }
  return p;
}

DetectorParams init_params(const GridSpec& spec, int hidden, std::uint64_t seed) {
  DetectorParams p = zero_params(spec, hidden);
  p.seed = seed;
  Rng rng(seed);
  // Weight and bias of a layer share the layer's fan-in.
  for (std::size_t s = 0; s < kParamSlotCount; s += 2) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.tensors[s].cols));
    for (double& v : p.tensors[s].values) v = rng.uniform(-bound, bound);
    for (double& v : p.tensors[s + 1].values) v = rng.uniform(-bound, bound);
  }
  return p;
}

ParamGradients ParamGradients::zeros_like(const DetectorParams& p) {
  ParamGradients g;
  for (std::size_t s = 0; s < kParamSlotCount; ++s) g.values[s].assign(p.tensors[s].values.size(), 0.0);
  return g;
}

void ParamGradients::add(const ParamGradients& other) {
  for (std::size_t s = 0; s < kParamSlotCount; ++s) {
    if (values[s].size() != other.values[s].size()) throw ContractError("gradient shape mismatch");
    for (std::size_t e = 0; e < values[s].size(); ++e) values[s][e] += other.values[s][e];
  }
}

void ParamGradients::scale(double s) {
  for (auto& v : values) {
    for (double& e : v) e *= s;
  }
}

ForwardResult forward(const ImageTensor& img, const DetectorParams& p) {
  const GridSpec& spec = p.spec;
  if (img.size != spec.image_size) {
    throw ContractError("image size " + std::to_string(img.size) + " does not match grid image_size " +
                        std::to_string(spec.image_size));
  }
  if (img.values.size() != static_cast<std::size_t>(img.size) * img.size * 3) {
    throw ContractError("image buffer size mismatch");
  }
  const int S = spec.grid_size;
  const int stride = spec.stride();
  const int patch = p.patch_size();
  const int hidden = p.hidden;
  const int out_ch = spec.channels();
  const int cells = S * S;

  Activations acts;
  acts.cells = cells;
  acts.patch.resize(static_cast<std::size_t>(cells) * patch);
  acts.z0.resize(static_cast<std::size_t>(cells) * hidden);
  acts.h1.resize(acts.z0.size());
  acts.h2.resize(acts.z0.size());
  std::vector<double> out(spec.element_count());

  const auto& t = p.tensors;
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < S; ++j) {
      const std::size_t cell = static_cast<std::size_t>(i) * S + j;
      double* x = acts.patch.data() + cell * patch;
      for (int y = 0; y < stride; ++y) {
        for (int xx = 0; xx < stride; ++xx) {
          for (int c = 0; c < 3; ++c) *x++ = img.at(i * stride + y, j * stride + xx, c);
        }
      }
      const double* xp = acts.patch.data() + cell * patch;
      double* z0 = acts.z0.data() + cell * hidden;
      double* h1 = acts.h1.data() + cell * hidden;
      double* h2 = acts.h2.data() + cell * hidden;
      affine(t[kProjW], t[kProjB], xp, z0);
      affine(t[kHidden1W], t[kHidden1B], z0, h1);
      for (int d = 0; d < hidden; ++d) h1[d] = std::tanh(h1[d]);
      affine(t[kHidden2W], t[kHidden2B], h1, h2);
      for (int d = 0; d < hidden; ++d) h2[d] = std::tanh(h2[d]);
      affine(t[kOutW], t[kOutB], h2, out.data() + cell * out_ch);
    }
  }
  return ForwardResult{FeatureMap(spec, std::move(out)), std::move(acts)};
}

ParamGradients backward(std::span<const double> grad_fm, const Activations& acts, const DetectorParams& p) {
  const GridSpec& spec = p.spec;
  if (grad_fm.size() != spec.element_count()) throw ContractError("feature map gradient shape mismatch");
  const int hidden = p.hidden;
  const int patch = p.patch_size();
  const int out_ch = spec.channels();
  if (acts.cells != spec.grid_size * spec.grid_size ||
      acts.patch.size() != static_cast<std::size_t>(acts.cells) * patch) {
    throw ContractError("activations do not match parameters");
  }

  ParamGradients g = ParamGradients::zeros_like(p);
  const auto& t = p.tensors;
  std::vector<double> dh2(static_cast<std::size_t>(hidden));
  std::vector<double> dh1(static_cast<std::size_t>(hidden));
  std::vector<double> dz0(static_cast<std::size_t>(hidden));
  for (int cell = 0; cell < acts.cells; ++cell) {
    const double* dout = grad_fm.data() + static_cast<std::size_t>(cell) * out_ch;
    bool any = false;
    for (int c = 0; c < out_ch; ++c) any = any || dout[c] != 0.0;
    if (!any) continue;

    const std::size_t off = static_cast<std::size_t>(cell) * hidden;
    const double* x = acts.patch.data() + static_cast<std::size_t>(cell) * patch;
    const double* z0 = acts.z0.data() + off;
    const double* h1 = acts.h1.data() + off;
    const double* h2 = acts.h2.data() + off;

    affine_backward(t[kOutW], h2, dout, g.values[kOutW], g.values[kOutB], dh2.data());
    for (int d = 0; d < hidden; ++d) dh2[static_cast<std::size_t>(d)] *= 1.0 - h2[d] * h2[d];
    affine_backward(t[kHidden2W], h1, dh2.data(), g.values[kHidden2W], g.values[kHidden2B], dh1.data());
    for (int d = 0; d < hidden; ++d) dh1[static_cast<std::size_t>(d)] *= 1.0 - h1[d] * h1[d];
    affine_backward(t[kHidden1W], z0, dh1.data(), g.values[kHidden1W], g.values[kHidden1B], dz0.data());
    affine_backward(t[kProjW], x, dz0.data(), g.values[kProjW], g.values[kProjB], nullptr);
  }
  return g;
}

void sgd_step(DetectorParams& p, const ParamGradients& grads, SgdMomentum& opt) {
  for (std::size_t s = 0; s < kParamSlotCount; ++s) {
    if (grads.values[s].size() != p.tensors[s].values.size()) throw ContractError("gradient shape mismatch");
    for (double v : grads.values[s]) {
      if (!std::isfinite(v)) throw RuntimeError("non-finite gradient in tensor " + p.tensors[s].name);
    }
  }
  if (opt.velocity.values[0].empty()) opt.velocity = ParamGradients::zeros_like(p);
  for (std::size_t s = 0; s < kParamSlotCount; ++s) {
    auto& v = opt.velocity.values[s];
    auto& w = p.tensors[s].values;
    const auto& g = grads.values[s];
    for (std::size_t e = 0; e < w.size(); ++e) {
      v[e] = opt.momentum * v[e] - opt.learning_rate * g[e];
      w[e] += v[e];
    }
  }
}

namespace {

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_real(const std::string& tok, const std::string& what) {
  const char* begin = tok.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') throw RuntimeError("checkpoint: bad number '" + tok + "' in " + what);
  return v;
}

std::string expect_key(std::istream& in, const std::string& key) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string k;
    ls >> k;
    if (k != key) throw RuntimeError("checkpoint: expected '" + key + "', found '" + k + "'");
    std::string rest;
    std::getline(ls, rest);
    const auto first = rest.find_first_not_of(' ');
    return first == std::string::npos ? std::string() : rest.substr(first);
  }
  throw RuntimeError("checkpoint: unexpected end of file, expected '" + key + "'");
}

long parse_int(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) throw RuntimeError("checkpoint: bad integer '" + s + "' for " + what);
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const DetectorParams& p) {
  p.validate();
  out << "lrm-checkpoint 1\n";
  out << "grid_size " << p.spec.grid_size << "\n";
  out << "anchor_count " << p.spec.anchor_count << "\n";
  out << "class_count " << p.spec.class_count << "\n";
  out << "image_size " << p.spec.image_size << "\n";
  out << "anchors";
  for (const auto& a : p.spec.anchors) out << ' ' << hexfloat(a.w) << ' ' << hexfloat(a.h);
  out << "\n";
  out << "hidden " << p.hidden << "\n";
  out << "seed " << p.seed << "\n";
  for (const auto& t : p.tensors) {
    out << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << "\n";
    for (int r = 0; r < t.rows; ++r) {
      for (int c = 0; c < t.cols; ++c) {
        if (c > 0) out << ' ';
        out << hexfloat(t.values[static_cast<std::size_t>(r) * t.cols + c]);
      }
      out << "\n";
    }
  }
  out << "end\n";
}

DetectorParams read_checkpoint(std::istream& in) {
  if (expect_key(in, "lrm-checkpoint") != "1") throw RuntimeError("checkpoint: unsupported version");
  GridSpec spec;
  spec.grid_size = static_cast<int>(parse_int(expect_key(in, "grid_size"), "grid_size"));
  spec.anchor_count = static_cast<int>(parse_int(expect_key(in, "anchor_count"), "anchor_count"));
  spec.class_count = static_cast<int>(parse_int(expect_key(in, "class_count"), "class_count"));
  spec.image_size = static_cast<int>(parse_int(expect_key(in, "image_size"), "image_size"));
  {
    std::istringstream as(expect_key(in, "anchors"));
    spec.anchors.clear();
    std::string w, h;
    while (as >> w) {
      if (!(as >> h)) throw RuntimeError("checkpoint: odd number of anchor values");
      spec.anchors.push_back({parse_real(w, "anchors"), parse_real(h, "anchors")});
    }
  }
  try {
    spec.validate();
  } catch (const ContractError& e) {
    throw RuntimeError(std::string("checkpoint: invalid grid: ") + e.what());
  }
  const int hidden = static_cast<int>(parse_int(expect_key(in, "hidden"), "hidden"));
  if (hidden <= 0) throw RuntimeError("checkpoint: hidden must be positive");
  DetectorParams p = zero_params(spec, hidden);
  const std::string seed_text = expect_key(in, "seed");
  try {
    std::size_t pos = 0;
    p.seed = std::stoull(seed_text, &pos);
    if (pos != seed_text.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw RuntimeError("checkpoint: bad seed '" + seed_text + "'");
  }
  for (auto& t : p.tensors) {
    std::istringstream hs(expect_key(in, "tensor"));
    std::string name;
    int rows = -1, cols = -1;
    hs >> name >> rows >> cols;
    if (name != t.name) throw RuntimeError("checkpoint: expected tensor " + t.name + ", found " + name);
    if (rows != t.rows || cols != t.cols) {
      throw RuntimeError("checkpoint: tensor " + name + " is " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", expected " + std::to_string(t.rows) + "x" + std::to_string(t.cols));
    }
    std::string tok;
    for (double& v : t.values) {
      if (!(in >> tok)) throw RuntimeError("checkpoint: tensor " + name + " is truncated");
      v = parse_real(tok, name);
    }
  }
  if (!expect_key(in, "end").empty()) throw RuntimeError("checkpoint: trailing data after 'end'");
  std::string extra;
  if (in >> extra) throw RuntimeError("checkpoint: trailing data after 'end'");
  p.validate();
  return p;
}

}  // namespace lrm

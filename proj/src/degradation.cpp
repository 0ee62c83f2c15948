#include "dgve/degradation.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "dgve/errors.hpp"
#include "dgve/util.hpp"

namespace dgve {

namespace F = torch::nn::functional;

std::string to_string(DegradationKind kind) {
  switch (kind) {
    case DegradationKind::Noise: return "noise";
    case DegradationKind::MotionBlur: return "motion_blur";
    case DegradationKind::LowLight: return "low_light";
    case DegradationKind::Smoke: return "smoke";
    case DegradationKind::SesComposite: return "ses_composite";
  }
  return "unknown";
}

std::string to_string(DegradationLevel level) { return "L" + std::to_string(static_cast<int>(level)); }

DegradationKind parse_kind(const std::string& name) {
  static const std::map<std::string, DegradationKind> names = {
      {"noise", DegradationKind::Noise},       {"motion_blur", DegradationKind::MotionBlur},
      {"blur", DegradationKind::MotionBlur},   {"low_light", DegradationKind::LowLight},
      {"lowlight", DegradationKind::LowLight}, {"smoke", DegradationKind::Smoke},
      {"ses_composite", DegradationKind::SesComposite}, {"ses", DegradationKind::SesComposite}};
  auto it = names.find(name);
  if (it == names.end()) throw ParameterError("unknown degradation kind '" + name + "'");
  return it->second;
}

DegradationLevel parse_level(const std::string& name) {
  if (name.size() == 2 && (name[0] == 'L' || name[0] == 'l') && name[1] >= '1' && name[1] <= '4')
    return static_cast<DegradationLevel>(name[1] - '0');
  throw ParameterError("unknown degradation level '" + name + "'");
}

// ---------------------------------------------------------------------------
// Spatial maps

SpatialMap SpatialMap::uniform(double value) {
  SpatialMap m;
  m.constant = value;
  return m;
}

SpatialMap SpatialMap::smooth(double mean, double spread, uint64_t seed) {
  SpatialMap m;
  m.constant = mean;
  m.field = SmoothField{mean, spread, seed};
  return m;
}

SpatialMap SpatialMap::from_tensor(torch::Tensor hw) {
  if (hw.dim() != 2) throw ShapeError("spatial map must be [H,W]");
  SpatialMap m;
  m.map = std::move(hw);
  return m;
}

torch::Tensor realize_smooth_field(const SmoothField& f, int64_t height, int64_t width,
                                   torch::Dtype dtype) {
  auto gen = make_generator(f.seed);
  auto white = torch::randn({1, 1, height, width}, gen, torch::kFloat64);
  const double sigma = std::max<double>(height, width) / 8.0;
  auto smooth = ops::gaussian_blur(white, sigma)[0][0];
  auto centered = smooth - smooth.mean();
  const double peak = centered.abs().max().item<double>();
  auto unit = peak > 0 ? centered / peak : centered;
  return (f.mean + f.spread * unit).clamp(1e-3, 1.0).to(dtype);
}

torch::Tensor SpatialMap::realize(int64_t height, int64_t width, torch::Dtype dtype) const {
  if (map.defined()) {
    auto m = map.to(dtype);
    if (m.size(0) == height && m.size(1) == width) return m;
    return F::interpolate(m.view({1, 1, m.size(0), m.size(1)}),
                          F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{height, width})
                              .mode(torch::kBilinear)
                              .align_corners(false))[0][0];
  }
  if (field) return realize_smooth_field(*field, height, width, dtype);
  return torch::full({height, width}, constant, dtype);
}

// ---------------------------------------------------------------------------
// Validation and serialization

namespace {

void check_unit_interval_map(const SpatialMap& m, const char* name, bool allow_zero) {
  auto fail = [&](const std::string& why) { throw ParameterError(std::string(name) + ": " + why); };
  auto check = [&](double lo, double hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi)) fail("non-finite values");
    if (hi > 1.0 + 1e-12) fail("values must be <= 1");
    if (allow_zero ? lo < 0.0 : lo <= 0.0) fail(allow_zero ? "values must be >= 0" : "values must be > 0");
  };
  if (m.map.defined()) {
    check(m.map.min().item<double>(), m.map.max().item<double>());
  } else if (m.field) {
    check(m.field->mean - m.field->spread, m.field->mean + m.field->spread);
    if (m.field->spread < 0) fail("spread must be >= 0");
  } else {
    check(m.constant, m.constant);
  }
}

void check_kernel(const torch::Tensor& k) {
  if (!k.defined()) return;
  if (k.dim() != 2 || k.size(0) != k.size(1) || k.size(0) % 2 == 0)
    throw ParameterError("blur_kernel: must be square with odd side");
  if (!torch::isfinite(k).all().item<bool>()) throw ParameterError("blur_kernel: non-finite entries");
  if (k.min().item<double>() < 0.0) throw ParameterError("blur_kernel: negative entries");
  if (std::abs(k.to(torch::kFloat64).sum().item<double>() - 1.0) > 1e-6)
    throw ParameterError("blur_kernel: entries must sum to 1");
}

bool is_delta(const torch::Tensor& k) {
  if (!k.defined()) return true;
  const int64_t c = k.size(-1) / 2;
  auto d = torch::zeros_like(k);
  d.select(-1, c).select(-1, c).fill_(1.0);
  return torch::equal(k, d);
}

bool all_equal(const torch::Tensor& t, double v) { return !t.defined() || (t == v).all().item<bool>(); }

}  // namespace

void DegradationParameters::validate() const {
  if (scale < 1) throw ParameterError("scale: must be an integer >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ParameterError("alpha: must be > 0");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ParameterError("beta: must be > 0");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ParameterError("gamma: must be > 0");
  check_kernel(blur_kernel);
  check_unit_interval_map(illumination, "illumination", false);
  check_unit_interval_map(transmission, "transmission", false);
  if (airlight.size() != 1 && airlight.size() != 3)
    throw ParameterError("airlight: must have 1 or 3 values");
  for (double a : airlight)
    if (!(a >= 0.0 && a <= 1.0)) throw ParameterError("airlight: values must lie in [0,1]");
  // Noise std: per-pixel, [0, 0.5].
  if (noise.map.defined()) {
    if (noise.map.min().item<double>() < 0.0 || noise.map.max().item<double>() > 0.5)
      throw ParameterError("noise: std must lie in [0, 0.5]");
  } else {
    const double lo = noise.field ? noise.field->mean - noise.field->spread : noise.constant;
    const double hi = noise.field ? noise.field->mean + noise.field->spread : noise.constant;
    if (!(lo >= 0.0 && hi <= 0.5)) throw ParameterError("noise: std must lie in [0, 0.5]");
  }
}

namespace {

void put_map(std::ostringstream& ss, const std::string& key, const SpatialMap& m) {
  if (m.map.defined()) {
    ss << key << "_map_mean = " << format_double(m.map.mean().item<double>()) << "\n";
    ss << key << "_map_min = " << format_double(m.map.min().item<double>()) << "\n";
    ss << key << "_map_max = " << format_double(m.map.max().item<double>()) << "\n";
  } else if (m.field) {
    ss << key << "_mean = " << format_double(m.field->mean) << "\n";
    ss << key << "_spread = " << format_double(m.field->spread) << "\n";
    ss << key << "_seed = " << m.field->seed << "\n";
  } else {
    ss << key << " = " << format_double(m.constant) << "\n";
  }
}

}  // namespace

std::string DegradationParameters::to_key_values() const {
  std::ostringstream ss;
  ss << "kind = " << to_string(kind) << "\n";
  ss << "scale = " << scale << "\n";
  put_map(ss, "noise_std", noise);
  if (blur_kernel.defined()) {
    auto k = blur_kernel.to(torch::kFloat64).contiguous();
    ss << "blur_kernel_size = " << k.size(0) << "\n";
    ss << "blur_kernel = ";
    auto acc = k.flatten();
    for (int64_t i = 0; i < acc.numel(); ++i) ss << (i ? "," : "") << format_double(acc[i].item<double>());
    ss << "\n";
  }
  put_map(ss, "illumination", illumination);
  put_map(ss, "transmission", transmission);
  ss << "airlight = ";
  for (size_t i = 0; i < airlight.size(); ++i) ss << (i ? "," : "") << format_double(airlight[i]);
  ss << "\n";
  ss << "alpha = " << format_double(alpha) << "\n";
  ss << "beta = " << format_double(beta) << "\n";
  ss << "gamma = " << format_double(gamma) << "\n";
  return ss.str();
}

DegradationParameters DegradationParameters::from_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto csv = [](const std::string& s) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
    return v;
  };
  auto get_map = [&](const std::string& key, double dflt) {
    if (kv.count(key + "_map_mean"))
      throw ParameterError(key + ": explicit maps are not restorable from text");
    if (kv.count(key + "_mean"))
      return SpatialMap::smooth(std::stod(kv.at(key + "_mean")), std::stod(kv.at(key + "_spread")),
                                std::stoull(kv.at(key + "_seed")));
    return SpatialMap::uniform(kv.count(key) ? std::stod(kv.at(key)) : dflt);
  };
  DegradationParameters p;
  if (!kv.count("kind")) throw ParameterError("parameters text lacks 'kind'");
  p.kind = parse_kind(kv.at("kind"));
  if (kv.count("scale")) p.scale = std::stoll(kv.at("scale"));
  p.noise = get_map("noise_std", 0.0);
  if (kv.count("blur_kernel")) {
    const int64_t n = std::stoll(kv.at("blur_kernel_size"));
    auto vals = csv(kv.at("blur_kernel"));
    if (static_cast<int64_t>(vals.size()) != n * n) throw ParameterError("blur_kernel: size mismatch");
    p.blur_kernel = torch::tensor(vals, torch::kFloat64).view({n, n}).to(torch::kFloat32);
  }
  p.illumination = get_map("illumination", 1.0);
  p.transmission = get_map("transmission", 1.0);
  if (kv.count("airlight")) p.airlight = csv(kv.at("airlight"));
  if (kv.count("alpha")) p.alpha = std::stod(kv.at("alpha"));
  if (kv.count("beta")) p.beta = std::stod(kv.at("beta"));
  if (kv.count("gamma")) p.gamma = std::stod(kv.at("gamma"));
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Forward model

namespace {

torch::Tensor resample_map(const torch::Tensor& m, int64_t h, int64_t w) {
  if (m.size(2) == h && m.size(3) == w) return m;
  return F::interpolate(m, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::Tensor per_item(const torch::Tensor& v) { return v.view({-1, 1, 1, 1}); }

}  // namespace

torch::Tensor apply_pdm(const torch::Tensor& x, const PdmTensors& p, uint64_t noise_seed) {
  if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("apply_pdm expects [B,3,H,W]");
  if (p.scale < 1) throw ParameterError("scale: must be >= 1");
  const int64_t H = x.size(2), W = x.size(3);
  if (H % p.scale || W % p.scale) throw ShapeError("image sides must be divisible by the scale");
  auto y = x;
  if (!all_equal(p.alpha, 1.0)) y = y * per_item(p.alpha);
  if (p.kernel.defined() && !is_delta(p.kernel)) y = ops::convolve(y, p.kernel);
  if (!all_equal(p.gamma, 1.0)) y = y.clamp_min(1e-6).pow(per_item(p.gamma));
  if (!all_equal(p.beta, 1.0)) y = y * per_item(p.beta);
  if (!all_equal(p.illumination, 1.0)) y = y * resample_map(p.illumination, H, W);
  if (!all_equal(p.transmission, 1.0)) {
    if (!p.airlight.defined()) throw ParameterError("airlight: required with transmission");
    auto T = resample_map(p.transmission, H, W);
    auto A = p.airlight.view({p.airlight.size(0), p.airlight.size(1), 1, 1});
    y = y * T + A * (1.0 - T);
  }
  if (p.scale > 1) y = ops::resize_bicubic(y, H / p.scale, W / p.scale);
  if (!all_equal(p.noise_std, 0.0)) {
    auto gen = make_generator(noise_seed);
    auto z = torch::randn(y.sizes(), gen, torch::TensorOptions().dtype(y.scalar_type()));
    y = y + resample_map(p.noise_std, y.size(2), y.size(3)) * z;
  }
  // Identity parameters leave values in range already; clamping is then a no-op.
  return y.clamp(0.0, 1.0);
}

PdmTensors to_tensors(const DegradationParameters& p, int64_t height, int64_t width,
                      torch::Dtype dtype) {
  p.validate();
  auto opts = torch::TensorOptions().dtype(dtype);
  PdmTensors t;
  t.scale = p.scale;
  if (p.alpha != 1.0) t.alpha = torch::full({1}, p.alpha, opts);
  if (p.blur_kernel.defined()) t.kernel = p.blur_kernel.to(dtype).unsqueeze(0);
  if (p.gamma != 1.0) t.gamma = torch::full({1}, p.gamma, opts);
  if (p.beta != 1.0) t.beta = torch::full({1}, p.beta, opts);
  if (!(p.illumination.is_constant() && p.illumination.constant == 1.0))
    t.illumination = p.illumination.realize(height, width, dtype).view({1, 1, height, width});
  if (!(p.transmission.is_constant() && p.transmission.constant == 1.0)) {
    t.transmission = p.transmission.realize(height, width, dtype).view({1, 1, height, width});
    t.airlight = torch::tensor(p.airlight, torch::kFloat64).to(dtype).view({1, -1});
  }
  if (!(p.noise.is_constant() && p.noise.constant == 0.0)) {
    const int64_t oh = height / p.scale, ow = width / p.scale;
    t.noise_std = p.noise.realize(oh, ow, dtype).view({1, 1, oh, ow});
  }
  return t;
}

namespace {

ImageTensor run(const ImageTensor& J, const DegradationParameters& p, uint64_t seed) {
  auto t = to_tensors(p, J.height(), J.width(), J.data().scalar_type());
  auto y = apply_pdm(J.batched(), t, seed);
  return ImageTensor(y[0]);
}

}  // namespace

ImageTensor degrade_noise(const ImageTensor& J, double n_std, uint64_t seed) {
  if (!(n_std >= 0.0 && n_std <= 0.5)) throw ParameterError("noise: std must lie in [0, 0.5]");
  DegradationParameters p;
  p.kind = DegradationKind::Noise;
  p.noise = SpatialMap::uniform(n_std);
  return run(J, p, seed);
}

ImageTensor degrade_blur(const ImageTensor& J, const torch::Tensor& kernel) {
  DegradationParameters p;
  p.kind = DegradationKind::MotionBlur;
  p.blur_kernel = kernel;
  return run(J, p, 0);
}

ImageTensor degrade_lowlight(const ImageTensor& J, const SpatialMap& L, double n_std, uint64_t seed) {
  if (!(n_std >= 0.0 && n_std <= 0.5)) throw ParameterError("noise: std must lie in [0, 0.5]");
  DegradationParameters p;
  p.kind = DegradationKind::LowLight;
  p.illumination = L;
  p.noise = SpatialMap::uniform(n_std);
  return run(J, p, seed);
}

ImageTensor degrade_smoke(const ImageTensor& J, const SpatialMap& T, const std::vector<double>& A) {
  DegradationParameters p;
  p.kind = DegradationKind::Smoke;
  p.transmission = T;
  p.airlight = A;
  return run(J, p, 0);
}

ImageTensor degrade_ses(const ImageTensor& J, const DegradationParameters& p, uint64_t seed) {
  if (p.kind != DegradationKind::SesComposite) throw ParameterError("kind: expected ses_composite");
  return run(J, p, seed);
}

ImageTensor apply_degradation(const ImageTensor& J, const DegradationParameters& p, uint64_t seed) {
  return run(J, p, seed);
}

// ---------------------------------------------------------------------------
// Kernels and level presets

torch::Tensor motion_kernel(double length, double angle) {
  if (!(length >= 1.0)) throw ParameterError("blur_kernel: length must be >= 1");
  const int64_t half = static_cast<int64_t>(std::ceil(length / 2.0));
  const int64_t n = 2 * half + 1;
  std::vector<double> k(static_cast<size_t>(n * n), 0.0);
  const int64_t samples = static_cast<int64_t>(std::ceil(length * 16.0));
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (int64_t i = 0; i < samples; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(samples) - 0.5;
    const double px = half + t * (length - 1.0) * dx;
    const double py = half - t * (length - 1.0) * dy;
    const double fx = std::floor(px), fy = std::floor(py);
    const double ax = px - fx, ay = py - fy;
    for (int oy = 0; oy < 2; ++oy)
      for (int ox = 0; ox < 2; ++ox) {
        const int64_t xx = static_cast<int64_t>(fx) + ox, yy = static_cast<int64_t>(fy) + oy;
        if (xx < 0 || yy < 0 || xx >= n || yy >= n) continue;
        k[static_cast<size_t>(yy * n + xx)] += (ox ? ax : 1.0 - ax) * (oy ? ay : 1.0 - ay);
      }
  }
  auto t = torch::tensor(k, torch::kFloat64).view({n, n});
  return (t / t.sum()).to(torch::kFloat32);
}

torch::Tensor gaussian_kernel2d(double sigma) {
  auto g = ops::gaussian_kernel1d(sigma, torch::kFloat64);
  auto k = torch::outer(g, g);
  return (k / k.sum()).to(torch::kFloat32);
}

namespace {

using Range = std::pair<double, double>;

Range pick(DegradationLevel level, Range l1, Range l2, Range l3, Range l4) {
  switch (level) {
    case DegradationLevel::L1: return l1;
    case DegradationLevel::L2: return l2;
    case DegradationLevel::L3: return l3;
    case DegradationLevel::L4: return l4;
  }
  return l1;
}

double draw(SeededRng& rng, Range r) { return rng.uniform(r.first, r.second); }

double field_spread(double mean) { return std::min(0.15 * mean, 1.0 - mean); }

}  // namespace

std::pair<double, double> level_range(DegradationKind kind, DegradationLevel level) {
  switch (kind) {
    case DegradationKind::Noise:
      return pick(level, {0.02, 0.05}, {0.05, 0.10}, {0.10, 0.20}, {0.20, 0.35});
    case DegradationKind::MotionBlur:
      return pick(level, {3, 5}, {5, 9}, {9, 15}, {15, 25});
    case DegradationKind::LowLight:
      return pick(level, {0.6, 0.8}, {0.4, 0.6}, {0.25, 0.4}, {0.1, 0.25});
    case DegradationKind::Smoke:
      return pick(level, {0.75, 0.9}, {0.6, 0.75}, {0.4, 0.6}, {0.2, 0.4});
    case DegradationKind::SesComposite:  // gamma exponent
      return pick(level, {1.0, 1.2}, {1.2, 1.4}, {1.4, 1.7}, {1.7, 2.0});
  }
  return {0, 0};
}

DegradationParameters sample_parameters(DegradationKind kind, DegradationLevel level, uint64_t seed) {
  SeededRng rng(derive_seed({seed, static_cast<uint64_t>(kind), static_cast<uint64_t>(level)}));
  DegradationParameters p;
  p.kind = kind;
  const Range headline = level_range(kind, level);
  switch (kind) {
    case DegradationKind::Noise:
      p.noise = SpatialMap::uniform(draw(rng, headline));
      break;
    case DegradationKind::MotionBlur: {
      const double length = draw(rng, headline);
      const double angle = rng.uniform(0.0, M_PI);
      p.blur_kernel = motion_kernel(length, angle);
      break;
    }
    case DegradationKind::LowLight: {
      const double mean = draw(rng, headline);
      p.illumination = SpatialMap::smooth(mean, field_spread(mean), rng.next_u64());
      p.noise = SpatialMap::uniform(
          draw(rng, pick(level, {0.005, 0.01}, {0.01, 0.02}, {0.02, 0.03}, {0.03, 0.04})));
      break;
    }
    case DegradationKind::Smoke: {
      const double mean = draw(rng, headline);
      p.transmission = SpatialMap::smooth(mean, field_spread(mean), rng.next_u64());
      p.airlight = {rng.uniform(0.75, 0.95)};
      break;
    }
    case DegradationKind::SesComposite: {
      p.alpha = rng.uniform(0.9, 1.1);
      p.blur_kernel = gaussian_kernel2d(draw(rng, pick(level, {0.3, 0.6}, {0.6, 1.0}, {1.0, 1.5}, {1.5, 2.2})));
      p.gamma = draw(rng, headline);
      p.beta = draw(rng, pick(level, {0.85, 1.0}, {0.7, 0.85}, {0.55, 0.7}, {0.4, 0.55}));
      const double t = draw(rng, pick(level, {0.85, 0.95}, {0.75, 0.85}, {0.6, 0.75}, {0.45, 0.6}));
      p.transmission = SpatialMap::smooth(t, field_spread(t), rng.next_u64());
      p.airlight = {rng.uniform(0.75, 0.95)};
      p.noise = SpatialMap::uniform(
          draw(rng, pick(level, {0.01, 0.02}, {0.02, 0.04}, {0.04, 0.07}, {0.07, 0.1})));
      break;
    }
  }
  return p;
}

}  // namespace dgve

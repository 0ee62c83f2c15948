#include "dgve/cycle.hpp"

#include <cmath>

#include "dgve/errors.hpp"
#include "dgve/util.hpp"

namespace dgve {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }
double inv_softplus(double v) { return std::log(std::expm1(v)); }

torch::Tensor upsample(const torch::Tensor& grid, int64_t h, int64_t w) {
  return F::interpolate(grid, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{h, w})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
}

// Expands a batch-1 forced tensor to batch B.
torch::Tensor broadcast(const torch::Tensor& t, int64_t B) {
  if (!t.defined() || t.size(0) == B) return t;
  if (t.size(0) != 1) throw ShapeError("forced parameters must have batch 1 or the input batch");
  std::vector<int64_t> sizes(t.sizes().begin(), t.sizes().end());
  sizes[0] = B;
  return t.expand(sizes);
}

}  // namespace

// ---------------------------------------------------------------------------
// Regression heads

RegressionHeadsImpl::RegressionHeadsImpl(const RegressionConfig& cfg) : cfg_(cfg) {
  if (cfg.kernel_size < 1 || cfg.kernel_size % 2 == 0) throw ParameterError("kernel_size: must be odd");
  if (cfg.field_grid < 1) throw ParameterError("field_grid: must be >= 1");
  const int64_t G2 = cfg.field_grid * cfg.field_grid, K2 = cfg.kernel_size * cfg.kernel_size;
  for (auto kind : cfg.kinds) {
    if (heads_.count(kind)) continue;
    Head h;
    int64_t n = 0;
    auto add = [&](const std::string& name, int64_t len) {
      h.slots[name] = {n, len};
      n += len;
    };
    switch (kind) {
      case DegradationKind::Noise: add("noise", G2); break;
      case DegradationKind::MotionBlur: add("kernel", K2); break;
      case DegradationKind::LowLight:
        add("illumination", G2);
        add("noise", G2);
        break;
      case DegradationKind::Smoke:
        add("transmission", G2);
        add("airlight", 1);
        break;
      case DegradationKind::SesComposite:
        add("alpha", 1);
        add("kernel", K2);
        add("gamma", 1);
        add("beta", 1);
        add("transmission", G2);
        add("airlight", 1);
        add("noise", G2);
        break;
    }
    const std::string name = "head_" + to_string(kind);
    h.fc1 = register_module(name + "_fc1", nn::Linear(cfg.dc_dim, cfg.hidden));
    h.fc2 = register_module(name + "_fc2", nn::Linear(cfg.hidden, n));
    torch::NoGradGuard guard;
    h.fc2->weight.mul_(0.01);
    auto b = h.fc2->bias;
    b.zero_();
    for (const auto& [slot_name, range] : h.slots) {
      auto s = b.slice(0, range.first, range.first + range.second);
      if (slot_name == "noise") s.fill_(logit(cfg.prior_noise / kMaxNoiseStd));
      else if (slot_name == "illumination") s.fill_(logit(cfg.prior_illumination));
      else if (slot_name == "transmission") s.fill_(logit(cfg.prior_transmission));
      else if (slot_name == "airlight") s.fill_(logit(cfg.prior_airlight));
      else if (slot_name == "alpha") s.fill_(inv_softplus(cfg.prior_alpha));
      else if (slot_name == "beta") s.fill_(inv_softplus(cfg.prior_beta));
      else if (slot_name == "gamma") s.fill_(inv_softplus(cfg.prior_gamma));
      else if (slot_name == "kernel") s[K2 / 2] = cfg.prior_kernel_center;
    }
    heads_.emplace(kind, std::move(h));
  }
}

bool RegressionHeadsImpl::has_kind(DegradationKind kind) const { return heads_.count(kind) > 0; }

RegressionHeadsImpl::Head& RegressionHeadsImpl::head(DegradationKind kind) {
  auto it = heads_.find(kind);
  if (it == heads_.end()) throw ParameterError("no regression head for PDM kind '" + to_string(kind) + "'");
  return it->second;
}

torch::Tensor RegressionHeadsImpl::slot(const Head& h, const torch::Tensor& out, const std::string& name) const {
  const auto& r = h.slots.at(name);
  return out.slice(1, r.first, r.first + r.second);
}

PdmTensors RegressionHeadsImpl::forward(const torch::Tensor& dc, DegradationKind kind, int64_t height,
                                        int64_t width) {
  Head& h = head(kind);
  if (dc.dim() != 2 || dc.size(1) != cfg_.dc_dim) throw ShapeError("d_c must be [B, D_c]");
  const int64_t B = dc.size(0);
  PdmTensors p;
  p.scale = cfg_.scale;
  if (force_output) {
    const auto& f = *force_output;
    p.scale = f.scale;
    p.alpha = broadcast(f.alpha, B);
    p.kernel = broadcast(f.kernel, B);
    p.gamma = broadcast(f.gamma, B);
    p.beta = broadcast(f.beta, B);
    p.illumination = broadcast(f.illumination, B);
    p.transmission = broadcast(f.transmission, B);
    p.airlight = broadcast(f.airlight, B);
    p.noise_std = broadcast(f.noise_std, B);
    return p;
  }
  auto out = h.fc2->forward(F::leaky_relu(h.fc1->forward(dc), F::LeakyReLUFuncOptions().negative_slope(0.1)));
  const int64_t G = cfg_.field_grid, K = cfg_.kernel_size;
  const int64_t fh = std::max<int64_t>(1, height / 4), fw = std::max<int64_t>(1, width / 4);
  auto field = [&](const std::string& name) {
    return upsample(torch::sigmoid(slot(h, out, name)).view({B, 1, G, G}), fh, fw);
  };
  for (const auto& [name, range] : h.slots) {
    if (name == "noise") p.noise_std = field(name) * kMaxNoiseStd;
    else if (name == "illumination") p.illumination = field(name);
    else if (name == "transmission") p.transmission = field(name);
    else if (name == "airlight") p.airlight = torch::sigmoid(slot(h, out, name));
    else if (name == "kernel") p.kernel = torch::softmax(slot(h, out, name), 1).view({B, K, K});
    else if (name == "alpha") p.alpha = F::softplus(slot(h, out, name)).view({B});
    else if (name == "beta") p.beta = F::softplus(slot(h, out, name)).view({B});
    else if (name == "gamma") p.gamma = F::softplus(slot(h, out, name)).view({B});
  }
  return p;
}

DegradationParameters to_parameters(const PdmTensors& t, DegradationKind kind, int64_t index, int64_t height,
                                    int64_t width) {
  torch::NoGradGuard guard;
  DegradationParameters p;
  p.kind = kind;
  p.scale = t.scale;
  auto map = [&](const torch::Tensor& m) {
    auto item = m[index].unsqueeze(0).to(torch::kFloat64);
    if (item.size(2) != height || item.size(3) != width) item = upsample(item, height, width);
    return SpatialMap::from_tensor(item[0][0].to(torch::kFloat32).contiguous());
  };
  auto scalar = [&](const torch::Tensor& v) { return v[index].item<double>(); };
  if (t.alpha.defined()) p.alpha = scalar(t.alpha);
  if (t.beta.defined()) p.beta = scalar(t.beta);
  if (t.gamma.defined()) p.gamma = scalar(t.gamma);
  if (t.kernel.defined()) {
    auto k = t.kernel[index].to(torch::kFloat64);
    p.blur_kernel = (k / k.sum()).to(torch::kFloat32).contiguous();
  }
  if (t.illumination.defined()) p.illumination = map(t.illumination);
  if (t.transmission.defined()) p.transmission = map(t.transmission);
  if (t.airlight.defined()) {
    auto a = t.airlight[index].to(torch::kFloat64).contiguous();
    p.airlight.assign(a.data_ptr<double>(), a.data_ptr<double>() + a.numel());
  }
  if (t.noise_std.defined()) {
    const int64_t oh = height / t.scale, ow = width / t.scale;
    auto item = t.noise_std[index].unsqueeze(0).to(torch::kFloat64);
    if (item.size(2) != oh || item.size(3) != ow) item = upsample(item, oh, ow);
    p.noise = SpatialMap::from_tensor(item[0][0].to(torch::kFloat32).contiguous());
  }
  p.validate();
  return p;
}

torch::Tensor degrade_back(const torch::Tensor& x_enh, const torch::Tensor& dc, RegressionHeads& heads,
                           DegradationKind kind, uint64_t seed, PdmTensors* params_out) {
  if (x_enh.dim() != 4 || x_enh.size(1) != 3) throw ShapeError("degrade_back expects [B,3,H,W]");
  if (dc.dim() != 2 || dc.size(0) != x_enh.size(0)) throw ShapeError("d_c batch must match the image batch");
  auto p = heads->forward(dc, kind, x_enh.size(2), x_enh.size(3));
  auto y = apply_pdm(x_enh, p, seed);
  if (params_out) *params_out = std::move(p);
  return y;
}

std::pair<ImageTensor, DegradationParameters> degrade_back(const ImageTensor& x_enh, const torch::Tensor& dc,
                                                           RegressionHeads& heads, DegradationKind kind,
                                                           uint64_t seed) {
  torch::NoGradGuard guard;
  auto d = dc.dim() == 1 ? dc.unsqueeze(0) : dc;
  PdmTensors p;
  auto y = degrade_back(x_enh.data().unsqueeze(0), d.to(x_enh.data().scalar_type()), heads, kind, seed, &p);
  return {ImageTensor::from_batch(y, 0), to_parameters(p, kind, 0, x_enh.height(), x_enh.width())};
}

// ---------------------------------------------------------------------------
// Discriminators

DiscriminatorImpl::DiscriminatorImpl(int64_t base) {
  auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
  // The stride-1 layers pad by 2 so 16x16 low-resolution patches still yield a map.
  body = register_module(
      "body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(3, base, 4).stride(2).padding(1)), lrelu(),
                             nn::Conv2d(nn::Conv2dOptions(base, base * 2, 4).stride(2).padding(1)), lrelu(),
                             nn::Conv2d(nn::Conv2dOptions(base * 2, base * 4, 4).stride(2).padding(1)), lrelu(),
                             nn::Conv2d(nn::Conv2dOptions(base * 4, base * 8, 4).stride(1).padding(2)), lrelu(),
                             nn::Conv2d(nn::Conv2dOptions(base * 8, 1, 4).stride(1).padding(2)), nn::Sigmoid()));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("discriminator expects [B,3,H,W]");
  if (x.size(2) < 8 || x.size(3) < 8) throw ShapeError("discriminator input must be at least 8x8");
  return body->forward(x);
}

// ---------------------------------------------------------------------------
// Losses

void LossWeights::validate() const {
  for (auto [v, name] : {std::pair{adv, "adv"}, {cyc, "cyc"}, {hf, "hf"}, {cd, "cd"}})
    if (!std::isfinite(v) || v < 0.0) throw ParameterError(std::string("loss weight ") + name + ": must be >= 0");
}

torch::Tensor guard_probabilities(const torch::Tensor& d, const char* what) {
  auto v = d.detach();
  if (!torch::isfinite(v).all().item<bool>() || v.min().item<double>() < 0.0 || v.max().item<double>() > 1.0)
    throw NumericError(std::string(what) + ": discriminator output outside [0,1]");
  return d.clamp(kProbClamp, 1.0 - kProbClamp);
}

torch::Tensor adversarial_value(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  auto r = guard_probabilities(d_real, "real");
  auto f = guard_probabilities(d_fake, "fake");
  return r.log().mean() + (1.0 - f).log().mean();
}

torch::Tensor adv_loss_hf(const torch::Tensor& x_h, const torch::Tensor& x_enh, Discriminator& d_hf, double sigma) {
  return adversarial_value(d_hf->forward(ops::highpass(x_h, sigma)), d_hf->forward(ops::highpass(x_enh, sigma)));
}

torch::Tensor generator_adv_loss(const torch::Tensor& d_fake) {
  return -guard_probabilities(d_fake, "fake").log().mean();
}

CycleTerms cycle_loss(const torch::Tensor& x_l, const torch::Tensor& x_h, const EnhanceFn& g_h,
                      const DegradeFn& g_l, const RepresentFn& represent, const LossWeights& w, uint64_t seed) {
  w.validate();
  if (x_l.dim() != 4 || x_h.dim() != 4) throw ShapeError("cycle_loss expects [B,3,H,W] batches");
  if (x_l.size(0) != x_h.size(0)) throw ShapeError("x_l and x_h batches must have equal size");
  return cycle_loss(x_l, x_h, g_h(x_l), g_h, g_l, represent, w, seed);
}

CycleTerms cycle_loss(const torch::Tensor& x_l, const torch::Tensor& x_h, const EnhanceOutput& e,
                      const EnhanceFn& g_h, const DegradeFn& g_l, const RepresentFn& represent, const LossWeights& w,
                      uint64_t seed) {
  w.validate();
  if (x_l.dim() != 4 || x_h.dim() != 4) throw ShapeError("cycle_loss expects [B,3,H,W] batches");
  if (x_l.size(0) != x_h.size(0)) throw ShapeError("x_l and x_h batches must have equal size");
  CycleTerms t;
  t.x_enh = e.x;
  t.dc_l = e.dc;
  t.x_cl = g_l(t.x_enh, t.dc_l, derive_seed({seed, 1}));
  if (t.x_cl.sizes() != x_l.sizes()) throw ShapeError("G_L(G_H(x_l)) does not match x_l");
  t.cl = (t.x_cl - x_l).abs().mean();

  t.x_hl = g_l(x_h, t.dc_l, derive_seed({seed, 2}));
  t.x_ch = g_h(t.x_hl).x;
  if (t.x_ch.sizes() != x_h.sizes()) throw ShapeError("G_H(G_L(x_h)) does not match x_h");
  t.ch = (t.x_ch - x_h).abs().mean();

  auto r_fake = represent(t.x_hl), r_real = represent(x_l);
  if (r_fake.sizes() != r_real.sizes()) throw ShapeError("representations of G_L(x_h) and x_l differ in shape");
  t.cd = (r_fake - r_real).abs().mean();
  t.total = t.cl + t.ch + w.cd * t.cd;
  return t;
}

}  // namespace dgve

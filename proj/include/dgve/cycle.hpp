#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "dgve/degradation.hpp"
#include "dgve/flops.hpp"
#include "dgve/image.hpp"

namespace dgve {

struct RegressionConfig {
  int64_t dc_dim = 60;
  int64_t hidden = 64;
  int64_t field_grid = 4;  // side of the coarse grid each field head emits
  int64_t kernel_size = 7;
  int64_t scale = 2;
  std::vector<DegradationKind> kinds{DegradationKind::Noise, DegradationKind::MotionBlur,
                                     DegradationKind::LowLight, DegradationKind::Smoke,
                                     DegradationKind::SesComposite};
  // Values the heads emit at initialization.
  double prior_noise = 0.075;
  double prior_illumination = 0.5;
  double prior_transmission = 0.7;
  double prior_airlight = 0.85;
  double prior_alpha = 1.0;
  double prior_beta = 0.8;
  double prior_gamma = 1.2;
  double prior_kernel_center = 4.0;  // center logit; other logits start at 0
};

// Upper bound of regressed noise std, matching the parameter validator.
inline constexpr double kMaxNoiseStd = 0.5;

// One small MLP per PDM kind mapping d_c to that kind's explicit parameters.
class RegressionHeadsImpl : public torch::nn::Module {
 public:
  explicit RegressionHeadsImpl(const RegressionConfig& cfg = {});

  // dc: [B,D_c]. height/width: resolution of the image the parameters act on.
  PdmTensors forward(const torch::Tensor& dc, DegradationKind kind, int64_t height, int64_t width);
  bool has_kind(DegradationKind kind) const;
  const RegressionConfig& config() const { return cfg_; }

  // When set, forward ignores d_c and returns these (batch 1 entries are broadcast).
  std::optional<PdmTensors> force_output;

 private:
  struct Head {
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
    std::map<std::string, std::pair<int64_t, int64_t>> slots;  // name -> [offset, length)
  };
  Head& head(DegradationKind kind);
  torch::Tensor slot(const Head& h, const torch::Tensor& out, const std::string& name) const;

  RegressionConfig cfg_;
  std::map<DegradationKind, Head> heads_;
};
TORCH_MODULE(RegressionHeads);

// Explicit parameters of batch item `index` (maps resampled to height x width).
DegradationParameters to_parameters(const PdmTensors& t, DegradationKind kind, int64_t index, int64_t height,
                                    int64_t width);

// Batched G_L: regress d_p from d_c and synthesize the degraded image.
torch::Tensor degrade_back(const torch::Tensor& x_enh, const torch::Tensor& dc, RegressionHeads& heads,
                           DegradationKind kind, uint64_t seed, PdmTensors* params_out = nullptr);
std::pair<ImageTensor, DegradationParameters> degrade_back(const ImageTensor& x_enh, const torch::Tensor& dc,
                                                           RegressionHeads& heads, DegradationKind kind,
                                                           uint64_t seed);

// Strided 4x4 patch classifier with a sigmoid head.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(int64_t base = 64);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(Discriminator);

struct LossWeights {
  double adv = 1.0;
  double cyc = 10.0;
  double hf = 0.5;
  double cd = 1.0;
  void validate() const;
};

inline constexpr double kProbClamp = 1e-6;

// Throws NumericError for NaN or values outside [0,1], then clamps to [eps, 1-eps].
torch::Tensor guard_probabilities(const torch::Tensor& d, const char* what);

// mean log D(real) + mean log(1 - D(fake)); the discriminator ascends it.
torch::Tensor adversarial_value(const torch::Tensor& d_real, const torch::Tensor& d_fake);
inline torch::Tensor adv_loss_GH(const torch::Tensor& d_real_h, const torch::Tensor& d_fake_h) {
  return adversarial_value(d_real_h, d_fake_h);
}
inline torch::Tensor adv_loss_GL(const torch::Tensor& d_real_l, const torch::Tensor& d_fake_l) {
  return adversarial_value(d_real_l, d_fake_l);
}
torch::Tensor adv_loss_hf(const torch::Tensor& x_h, const torch::Tensor& x_enh, Discriminator& d_hf,
                          double sigma = 1.0);
// Non-saturating generator term: -mean log D(fake).
torch::Tensor generator_adv_loss(const torch::Tensor& d_fake);

struct EnhanceOutput {
  torch::Tensor x;   // enhanced, [B,3,sh,sw]
  torch::Tensor dc;  // [B,D_c]
};
using EnhanceFn = std::function<EnhanceOutput(const torch::Tensor& x_l)>;
using DegradeFn = std::function<torch::Tensor(const torch::Tensor& x_h, const torch::Tensor& dc, uint64_t seed)>;
using RepresentFn = std::function<torch::Tensor(const torch::Tensor& x)>;

struct CycleTerms {
  torch::Tensor cl, ch, cd, total;
  // Intermediates reused by the adversarial terms.
  torch::Tensor x_enh, dc_l, x_hl, x_cl, x_ch;
};

// L_cl = |G_L(G_H(x_l)) - x_l|, L_ch = |G_H(G_L(x_h)) - x_h|, L_cd = |R(G_L(x_h)) - R(x_l)|,
// total = L_cl + L_ch + cd * L_cd. G_L on item i of x_h uses d_c of G_H(x_l[i]).
CycleTerms cycle_loss(const torch::Tensor& x_l, const torch::Tensor& x_h, const EnhanceFn& g_h,
                      const DegradeFn& g_l, const RepresentFn& represent, const LossWeights& w, uint64_t seed);
// Same terms with G_H(x_l) supplied by the caller (e.g. enhanced with a propagated d_c).
CycleTerms cycle_loss(const torch::Tensor& x_l, const torch::Tensor& x_h, const EnhanceOutput& enhanced_l,
                      const EnhanceFn& g_h, const DegradeFn& g_l, const RepresentFn& represent, const LossWeights& w,
                      uint64_t seed);

}  // namespace dgve

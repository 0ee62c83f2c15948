#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dgve/image.hpp"

namespace dgve {

enum class DegradationKind { Noise, MotionBlur, LowLight, Smoke, SesComposite };
enum class DegradationLevel { L1 = 1, L2 = 2, L3 = 3, L4 = 4 };

inline constexpr std::array<DegradationKind, 4> kBasicKinds = {
    DegradationKind::Noise, DegradationKind::MotionBlur, DegradationKind::LowLight,
    DegradationKind::Smoke};
inline constexpr std::array<DegradationLevel, 4> kAllLevels = {
    DegradationLevel::L1, DegradationLevel::L2, DegradationLevel::L3, DegradationLevel::L4};

std::string to_string(DegradationKind kind);
std::string to_string(DegradationLevel level);
DegradationKind parse_kind(const std::string& name);
DegradationLevel parse_level(const std::string& name);

// Gaussian-blurred white noise rescaled to mean +- spread; realized lazily at the
// resolution it is applied to, so one recipe fits any crop size.
struct SmoothField {
  double mean = 1.0;
  double spread = 0.0;
  uint64_t seed = 0;
};

// A per-pixel map given as a constant, a smooth-field recipe or an explicit [H,W] tensor.
struct SpatialMap {
  double constant = 1.0;
  std::optional<SmoothField> field;
  torch::Tensor map;

  static SpatialMap uniform(double value);
  static SpatialMap smooth(double mean, double spread, uint64_t seed);
  static SpatialMap from_tensor(torch::Tensor hw);

  bool is_constant() const { return !field && !map.defined(); }
  // [H,W] tensor at the requested resolution (explicit maps are resampled bilinearly).
  torch::Tensor realize(int64_t height, int64_t width, torch::Dtype dtype) const;
};

torch::Tensor realize_smooth_field(const SmoothField& f, int64_t height, int64_t width,
                                   torch::Dtype dtype);

struct DegradationParameters {
  DegradationKind kind = DegradationKind::Noise;
  SpatialMap noise = SpatialMap::uniform(0.0);  // gaussian std, applied after downscaling
  torch::Tensor blur_kernel;                    // [k,k]; undefined means identity
  SpatialMap illumination = SpatialMap::uniform(1.0);
  SpatialMap transmission = SpatialMap::uniform(1.0);
  std::vector<double> airlight{1.0};  // one value, or one per channel
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  int64_t scale = 1;

  // Throws ParameterError naming the offending component.
  void validate() const;

  std::string to_key_values() const;
  static DegradationParameters from_key_values(const std::string& text);
};

// Differentiable, batched parameter set consumed by apply_pdm. Undefined tensors
// are identity components. Spatial maps may be at any resolution.
struct PdmTensors {
  int64_t scale = 1;
  torch::Tensor alpha;         // [B]
  torch::Tensor kernel;        // [B,k,k]
  torch::Tensor gamma;         // [B]
  torch::Tensor beta;          // [B]
  torch::Tensor illumination;  // [B,1,h,w]
  torch::Tensor transmission;  // [B,1,h,w]
  torch::Tensor airlight;      // [B,1] or [B,3]
  torch::Tensor noise_std;     // [B,1,h,w], resampled to the output resolution
};

// I = clamp(down_s(haze(beta * L * (conv(alpha * J, k))^gamma)) + n). The noise
// realization is drawn from `noise_seed`. Components equal to identity are skipped,
// so an all-identity parameter set returns x bit-exactly.
torch::Tensor apply_pdm(const torch::Tensor& x, const PdmTensors& p, uint64_t noise_seed);

PdmTensors to_tensors(const DegradationParameters& p, int64_t height, int64_t width,
                      torch::Dtype dtype = torch::kFloat32);

ImageTensor degrade_noise(const ImageTensor& J, double n_std, uint64_t seed);
ImageTensor degrade_blur(const ImageTensor& J, const torch::Tensor& kernel);
ImageTensor degrade_lowlight(const ImageTensor& J, const SpatialMap& L, double n_std, uint64_t seed);
ImageTensor degrade_smoke(const ImageTensor& J, const SpatialMap& T, const std::vector<double>& A);
ImageTensor degrade_ses(const ImageTensor& J, const DegradationParameters& p, uint64_t seed);
// Dispatches on p.kind; every kind runs the same ordered pipeline.
ImageTensor apply_degradation(const ImageTensor& J, const DegradationParameters& p, uint64_t seed);

// Anti-aliased line kernel of the given length (pixels) and angle (radians).
torch::Tensor motion_kernel(double length, double angle);
torch::Tensor gaussian_kernel2d(double sigma);

DegradationParameters sample_parameters(DegradationKind kind, DegradationLevel level, uint64_t seed);

// Inclusive-exclusive range of the headline severity quantity of a level
// (noise std, blur length, mean illumination, mean transmission).
std::pair<double, double> level_range(DegradationKind kind, DegradationLevel level);

}  // namespace dgve

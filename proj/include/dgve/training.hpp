#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dgve/checkpoint.hpp"
#include "dgve/cycle.hpp"
#include "dgve/dam.hpp"
#include "dgve/dgem.hpp"
#include "dgve/drpm.hpp"
#include "dgve/image.hpp"

namespace dgve {

struct ArchConfig {
  DamConfig dam;
  DgemConfig dgem;
  DrpmConfig drpm;
  RegressionConfig heads;
  int64_t disc_base = 64;
};

struct TrainConfig {
  // Epoch boundaries: stage 1 covers [0, n_d), stage 2 [n_d, n_d + n_s), stage 3 [n_d + n_s, n).
  int64_t n_d = 20, n_s = 60, n = 100;
  int64_t batch_size = 4;
  double lr_dam = 5e-5, lr_g = 5e-5, lr_d = 2e-4;
  double beta1 = 0.9, beta2 = 0.999;
  int64_t delta_t = 15;
  uint64_t seed = 0;
  LossWeights weights;
  bool cd_on_map = false;   // compare d_map instead of d_vec in L_cd
  double hf_sigma = 1.0;    // gaussian sigma of the highpass fed to D_hf
  int64_t scale = 2;
  DegradationKind gl_kind = DegradationKind::SesComposite;  // PDM used by G_L
  bool paired = false;      // stage 2: align x_h[i] with x_l[i] instead of shuffling independently
  bool train_dam = false;   // stage 2: fine-tune the DAM encoder with the generators
  int64_t max_steps = -1;   // stage 2/3 cap on steps per epoch, -1 for a full pass
  int64_t keep_checkpoints = 3;  // most recent epoch checkpoints kept per stage, 0 keeps all
  // Stage 1.
  int64_t dam_crop = 64;    // low-resolution crop side
  int64_t queue_size = 1024;
  double tau = 0.07;
  double momentum = 0.999;
  // Stage 3.
  int64_t clip_length = 30;
  bool unfreeze_dgem = false;
  double distill_weight = 0.1;
  ArchConfig arch;

  // Throws ParameterError; N_d = 0 is accepted (with a warning at run time).
  void validate() const;
  PretrainConfig pretrain_config() const;
};

// Every trainable component of the framework.
class ModelBundle {
 public:
  explicit ModelBundle(const ArchConfig& arch, uint64_t seed);

  ArchConfig arch;
  DamEncoder dam{nullptr};
  ProjectionHead dam_head{nullptr};
  Dgem dgem{nullptr};
  RegressionHeads heads{nullptr};
  Drpm drpm{nullptr};
  Discriminator d_l{nullptr}, d_h{nullptr}, d_hf{nullptr};

  std::vector<torch::nn::Module*> modules();
  std::vector<torch::Tensor> generator_parameters(bool include_dam);
  std::vector<torch::Tensor> discriminator_parameters();
  void to(torch::Dtype dtype);

  DegradationRepresentation represent(const torch::Tensor& x);
  EnhanceFn g_h();
  DegradeFn g_l(DegradationKind kind);
  RepresentFn representation_fn(bool on_map);

  void store(Checkpoint& ck) const;
  void restore(const Checkpoint& ck);
  void save(const std::filesystem::path& file) const;
  static ModelBundle load(const std::filesystem::path& file);
};

// Adopts the stage-1 query encoder and head.
void adopt_dam(ModelBundle& bundle, DamTrainer& trainer);

struct StepLosses {
  double adv_gh = 0, adv_gl = 0, adv_hf = 0;  // discriminator values
  double g_adv = 0, cl = 0, ch = 0, cd = 0, distill = 0;
  double g_total = 0, d_total = 0;
};

struct Batch {
  torch::Tensor x_h;  // [B,3,H,W]
  torch::Tensor x_l;  // [B,3,H/s,W/s]
};

// Alternating generator/discriminator optimizers of stage 2.
class GanTrainer {
 public:
  GanTrainer(ModelBundle& bundle, const TrainConfig& cfg);

  // Generator step with frozen discriminators, then discriminator step on detached fakes.
  StepLosses step(const Batch& batch, uint64_t step_seed);
  StepLosses generator_step(const Batch& batch, uint64_t step_seed, torch::Tensor* x_enh = nullptr,
                            torch::Tensor* x_hl = nullptr);
  double discriminator_step(const Batch& batch, const torch::Tensor& x_enh, const torch::Tensor& x_hl);

  void store(Checkpoint& ck) const;
  void restore(const Checkpoint& ck);

 private:
  ModelBundle& b_;
  TrainConfig cfg_;
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_;
};

// Unpaired stage-2 corpus of equal-sized patches.
struct GanData {
  std::vector<ImageTensor> hq;  // side = scale * lq side
  std::vector<ImageTensor> lq;
};

struct Stage3Data {
  std::vector<VideoSequence> clips;  // degraded, low resolution
  std::vector<ImageTensor> hq;
};

// Frame record of stage 3 logs.
struct FrameTag {
  int64_t clip = 0, frame = 0;
  RepresentationSource source = RepresentationSource::DAM;
};

struct RunControl {
  std::filesystem::path run_dir;  // empty: no artifacts
  bool resume = false;
  int64_t halt_after_epochs = -1;  // stop after this many epochs in this call (simulated interrupt)
  std::function<void(const std::string&)> on_epoch;
};

struct StageResult {
  std::vector<double> losses;  // one entry per step (generator total for stages 2 and 3)
  std::vector<StepLosses> steps;
  std::vector<FrameTag> tags;  // stage 3 only
  int64_t epochs_run = 0;
  int64_t steps_per_epoch = 0;
  bool completed = false;
};

StageResult run_stage1(const TrainConfig& cfg, const std::vector<ImageTensor>& corpus, ModelBundle& bundle,
                       const RunControl& ctl = {});
StageResult run_stage2(const TrainConfig& cfg, const GanData& data, ModelBundle& bundle,
                       const RunControl& ctl = {});
StageResult run_stage3(const TrainConfig& cfg, const Stage3Data& data, ModelBundle& bundle,
                       const RunControl& ctl = {});

// Number of key frames in a clip of `length` frames.
inline int64_t keyframe_count(int64_t length, int64_t delta_t) { return (length + delta_t - 1) / delta_t; }

}  // namespace dgve

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "dgve/checkpoint.hpp"
#include "dgve/degradation.hpp"
#include "dgve/flops.hpp"
#include "dgve/image.hpp"

namespace dgve {

struct DamConfig {
  int64_t base_channels = 64;   // doubled after each of the two downsamplings
  int64_t blocks_per_stage = 2;  // residual blocks per resolution
  int64_t proj_dim = 256;

  int64_t rep_channels() const { return base_channels * 4; }
};

class ResBlockImpl : public torch::nn::Module {
 public:
  explicit ResBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);
  double flops(int64_t h, int64_t w) const;

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResBlock);

// Residual encoder producing d_map at 1/4 resolution.
class DamEncoderImpl : public torch::nn::Module {
 public:
  explicit DamEncoderImpl(const DamConfig& cfg = {});
  torch::Tensor forward(const torch::Tensor& x);
  Budget budget(int64_t h, int64_t w) const;
  const DamConfig& config() const { return cfg_; }

 private:
  DamConfig cfg_;
  torch::nn::Conv2d stem_{nullptr}, down1_{nullptr}, down2_{nullptr}, tail_{nullptr};
  torch::nn::Sequential stage1_{nullptr}, stage2_{nullptr}, stage3_{nullptr};
};
TORCH_MODULE(DamEncoder);

// Two-layer MLP on the pooled d_map; output is L2-normalized.
class ProjectionHeadImpl : public torch::nn::Module {
 public:
  ProjectionHeadImpl(int64_t in_dim, int64_t proj_dim);
  torch::Tensor forward(const torch::Tensor& pooled);

 private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(ProjectionHead);

struct DegradationRepresentation {
  torch::Tensor d_map;  // [B, C_rep, H/4, W/4]
  torch::Tensor d_vec;  // [B, D_proj], unit norm
};

// Throws ShapeError unless H and W are divisible by 4.
DegradationRepresentation encode(DamEncoder& encoder, ProjectionHead& head, const torch::Tensor& x);
DegradationRepresentation encode(DamEncoder& encoder, ProjectionHead& head, const ImageTensor& image);

// Ring buffer of unit-norm keys used as contrastive negatives. Capacity 0 means
// negatives come from the other batch items instead.
class MomentumQueue {
 public:
  MomentumQueue(int64_t capacity, int64_t dim);

  int64_t capacity() const { return capacity_; }
  int64_t dim() const { return dim_; }
  int64_t size() const { return count_; }
  int64_t write_head() const { return head_; }
  // [size, dim], oldest entry first.
  torch::Tensor contents() const;
  void enqueue(const torch::Tensor& keys);

  void store(Checkpoint& ck, const std::string& prefix) const;
  void restore(const Checkpoint& ck, const std::string& prefix);

 private:
  int64_t capacity_, dim_, count_ = 0, head_ = 0;
  torch::Tensor entries_;
};

// Mean over the batch of -log softmax of the positive logit against the queue
// (or in-batch keys when the queue has capacity 0).
torch::Tensor info_nce_loss(const torch::Tensor& q, const torch::Tensor& k_pos, const MomentumQueue& queue,
                            double tau);

// key <- m * key + (1 - m) * query, parameter by parameter.
void momentum_update(const torch::nn::Module& query, torch::nn::Module& key, double m);

struct PretrainConfig {
  int64_t epochs = 20;
  int64_t batch_size = 4;
  int64_t crop = 160;  // side of each low-resolution crop fed to the encoder
  int64_t scale = 2;
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double tau = 0.07;
  int64_t queue_size = 1024;
  double momentum = 0.999;
  std::vector<DegradationKind> kinds{kBasicKinds.begin(), kBasicKinds.end()};
  std::vector<DegradationLevel> levels{kAllLevels.begin(), kAllLevels.end()};
  uint64_t seed = 0;
};

// Query/key encoders, projection heads, negatives queue and optimizer state.
class DamTrainer {
 public:
  DamTrainer(const DamConfig& arch, const PretrainConfig& cfg);

  int64_t steps_per_epoch(int64_t corpus_size) const;
  // One pass over the corpus; returns per-step losses.
  std::vector<double> run_epoch(const std::vector<ImageTensor>& corpus, int64_t epoch);

  DamEncoder& encoder() { return encoder_q_; }
  ProjectionHead& head() { return head_q_; }
  DamEncoder& key_encoder() { return encoder_k_; }
  const MomentumQueue& queue() const { return queue_; }
  const PretrainConfig& config() const { return cfg_; }

  void store(Checkpoint& ck) const;
  void restore(const Checkpoint& ck);

 private:
  DamConfig arch_;
  PretrainConfig cfg_;
  DamEncoder encoder_q_{nullptr}, encoder_k_{nullptr};
  ProjectionHead head_q_{nullptr}, head_k_{nullptr};
  MomentumQueue queue_;
  std::unique_ptr<torch::optim::Adam> opt_;
};

struct PretrainResult {
  std::vector<double> losses;
  int64_t steps_per_epoch = 0;
};

// Runs every epoch of contrastive pretraining on an HQ corpus.
PretrainResult pretrain_dam(DamTrainer& trainer, const std::vector<ImageTensor>& corpus);

// Degrades two different crops of `image` with the same parameters.
std::pair<torch::Tensor, torch::Tensor> make_positive_pair(const ImageTensor& image,
                                                           const DegradationParameters& params,
                                                           int64_t hq_crop, uint64_t seed);

}  // namespace dgve

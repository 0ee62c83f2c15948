#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include <torch/torch.h>

#include "dgve/flops.hpp"

namespace dgve {

enum class RepresentationSource { DAM, DRPM };
std::string to_string(RepresentationSource s);

struct HistoryEntry {
  int64_t index = 0;
  torch::Tensor dc;  // [D_c]
  RepresentationSource source = RepresentationSource::DAM;
};

struct PropagationState {
  int64_t capacity = 16;
  std::deque<HistoryEntry> history;
  int64_t last_keyframe_index = -1;

  bool empty() const { return history.empty(); }
  int64_t last_index() const { return history.empty() ? -1 : history.back().index; }
  // [T, D_c], oldest first.
  torch::Tensor stacked() const;
};

// Appends an entry, evicting the oldest beyond capacity. Throws StateError unless
// frame_index exceeds the last stored index.
PropagationState& update_state(PropagationState& state, int64_t frame_index, const torch::Tensor& dc,
                               RepresentationSource source);

struct DrpmConfig {
  int64_t dc_dim = 60;
  int64_t context = 16;
  int64_t d_model = 120;
  int64_t layers = 2;
  int64_t heads = 4;
  int64_t ff = 240;
  double step_gain = 10.0;  // frame-to-frame steps are small next to the values themselves
};

class DrpmLayerImpl : public torch::nn::Module {
 public:
  DrpmLayerImpl(int64_t d_model, int64_t heads, int64_t ff);
  torch::Tensor forward(const torch::Tensor& x);  // [B,T,d]
  double flops(int64_t tokens) const;

  int64_t heads;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(DrpmLayer);

// Pre-LN transformer over the history; predicts last entry + delta. The delta head
// is zero-initialized so an untrained model returns the last entry exactly.
class DrpmImpl : public torch::nn::Module {
 public:
  explicit DrpmImpl(const DrpmConfig& cfg = {});
  // history: [B,T,D_c] with 1 <= T <= context, oldest first. Returns [B,D_c].
  torch::Tensor forward(const torch::Tensor& history);
  Budget budget() const;  // one prediction from a full context
  const DrpmConfig& config() const { return cfg_; }

  torch::nn::Linear input{nullptr}, head{nullptr};
  torch::Tensor positions;  // [context, d_model], right-aligned to the newest entry
  torch::nn::ModuleList layers{nullptr};

 private:
  DrpmConfig cfg_;
};
TORCH_MODULE(Drpm);

// Prediction for frame last_index + 1. Throws StateError without a DAM entry.
torch::Tensor propagate(const PropagationState& state, Drpm& drpm);

struct SequenceFitConfig {
  int64_t steps = 2000;
  int64_t batch = 32;
  double lr = 1e-3;
  int64_t min_history = 2;
  bool cosine_decay = true;
  uint64_t seed = 0;
};

// Supervised next-step regression on whole sequences ([T_i, D_c] each): random
// windows of the history predict the following entry under an MSE loss.
std::vector<double> fit_sequences(Drpm& drpm, const std::vector<torch::Tensor>& sequences,
                                  const SequenceFitConfig& cfg);

}  // namespace dgve

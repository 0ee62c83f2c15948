#include "dgve/drpm.hpp"

#include <cmath>

#include "dgve/errors.hpp"
#include "dgve/util.hpp"

namespace dgve {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

std::string to_string(RepresentationSource s) { return s == RepresentationSource::DAM ? "DAM" : "DRPM"; }

torch::Tensor PropagationState::stacked() const {
  if (history.empty()) throw StateError("propagation history is empty");
  std::vector<torch::Tensor> v;
  v.reserve(history.size());
  for (const auto& e : history) v.push_back(e.dc);
  return torch::stack(v);
}

PropagationState& update_state(PropagationState& state, int64_t frame_index, const torch::Tensor& dc,
                               RepresentationSource source) {
  if (state.capacity < 1) throw ParameterError("propagation capacity must be >= 1");
  if (!state.history.empty() && frame_index <= state.last_index())
    throw StateError("frame index " + std::to_string(frame_index) + " does not exceed last index " +
                     std::to_string(state.last_index()));
  if (dc.dim() != 1) throw ShapeError("d_c entry must be one-dimensional");
  if (!state.history.empty() && dc.size(0) != state.history.back().dc.size(0))
    throw ShapeError("d_c dimension changed within a stream");
  state.history.push_back({frame_index, dc.detach(), source});
  while (static_cast<int64_t>(state.history.size()) > state.capacity) state.history.pop_front();
  if (source == RepresentationSource::DAM) state.last_keyframe_index = frame_index;
  return state;
}

// ---------------------------------------------------------------------------

DrpmLayerImpl::DrpmLayerImpl(int64_t d_model, int64_t heads_, int64_t ff) : heads(heads_) {
  if (d_model % heads_) throw ParameterError("d_model must be divisible by heads");
  norm1 = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({d_model})));
  qkv = register_module("qkv", nn::Linear(d_model, 3 * d_model));
  proj = register_module("proj", nn::Linear(d_model, d_model));
  norm2 = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({d_model})));
  fc1 = register_module("fc1", nn::Linear(d_model, ff));
  fc2 = register_module("fc2", nn::Linear(ff, d_model));
}

torch::Tensor DrpmLayerImpl::forward(const torch::Tensor& x) {
  const int64_t B = x.size(0), T = x.size(1), C = x.size(2), dh = C / heads;
  auto qkv_ = qkv->forward(norm1->forward(x)).view({B, T, 3, heads, dh}).permute({2, 0, 3, 1, 4});
  auto q = qkv_[0], k = qkv_[1], v = qkv_[2];
  auto a = torch::softmax(q.matmul(k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh)), -1);
  auto y = a.matmul(v).transpose(1, 2).reshape({B, T, C});
  auto h = x + proj->forward(y);
  return h + fc2->forward(F::gelu(fc1->forward(norm2->forward(h))));
}

double DrpmLayerImpl::flops(int64_t tokens) const {
  const double C = static_cast<double>(qkv->options.in_features());
  double f = linear_flops(*qkv, tokens) + linear_flops(*proj, tokens) + linear_flops(*fc1, tokens) +
             linear_flops(*fc2, tokens);
  f += 2.0 * 2.0 * tokens * tokens * C;  // QK^T and AV over all heads
  return f;
}

DrpmImpl::DrpmImpl(const DrpmConfig& cfg) : cfg_(cfg) {
  if (cfg.context < 1) throw ParameterError("DRPM context must be >= 1");
  input = register_module("input", nn::Linear(2 * cfg.dc_dim, cfg.d_model));
  positions = register_parameter("positions", torch::randn({cfg.context, cfg.d_model}) * 0.02);
  layers = register_module("layers", nn::ModuleList());
  for (int64_t i = 0; i < cfg.layers; ++i) layers->push_back(DrpmLayer(cfg.d_model, cfg.heads, cfg.ff));
  head = register_module("head", nn::Linear(cfg.d_model, cfg.dc_dim));
  torch::NoGradGuard guard;
  head->weight.zero_();
  head->bias.zero_();
}

torch::Tensor DrpmImpl::forward(const torch::Tensor& history) {
  if (history.dim() != 3 || history.size(2) != cfg_.dc_dim) throw ShapeError("DRPM history must be [B,T,D_c]");
  const int64_t T = history.size(1);
  if (T < 1 || T > cfg_.context) throw ShapeError("DRPM history length must lie in [1, context]");
  // Each token carries its value and its step from the previous entry (zero for the first).
  auto prev = torch::cat({history.slice(1, 0, 1), history.slice(1, 0, T - 1)}, 1);
  auto x = input->forward(torch::cat({history, (history - prev) * cfg_.step_gain}, 2)) + positions.slice(0, cfg_.context - T);
  for (const auto& m : *layers) x = m->as<DrpmLayerImpl>()->forward(x);
  auto last = history.select(1, T - 1);
  return last + head->forward(x.select(1, T - 1));
}

Budget DrpmImpl::budget() const {
  Budget b;
  b.params = count_params(*this);
  const int64_t T = cfg_.context;
  b.flops = linear_flops(*input, T) + linear_flops(*head, 1);
  for (const auto& m : *layers) b.flops += m->as<DrpmLayerImpl>()->flops(T);
  return b;
}

torch::Tensor propagate(const PropagationState& state, Drpm& drpm) {
  if (state.empty()) throw StateError("cannot propagate from an empty history");
  if (state.last_keyframe_index < 0) throw StateError("no DAM-sourced entry precedes the prediction");
  torch::NoGradGuard guard;
  auto hist = state.stacked();
  const int64_t ctx = drpm->config().context;
  if (hist.size(0) > ctx) hist = hist.slice(0, hist.size(0) - ctx);
  return drpm->forward(hist.unsqueeze(0))[0];
}

std::vector<double> fit_sequences(Drpm& drpm, const std::vector<torch::Tensor>& sequences,
                                  const SequenceFitConfig& cfg) {
  if (sequences.empty()) throw ParameterError("no sequences to fit");
  int64_t max_len = drpm->config().context;
  for (const auto& s : sequences) {
    if (s.dim() != 2 || s.size(0) < cfg.min_history + 1)
      throw ShapeError("each sequence must be [T,D_c] with T > min_history");
    max_len = std::min<int64_t>(max_len, s.size(0) - 1);
  }
  auto dtype = drpm->head->weight.scalar_type();
  torch::optim::Adam opt(drpm->parameters(), torch::optim::AdamOptions(cfg.lr));
  SeededRng rng(cfg.seed);
  std::vector<double> losses;
  losses.reserve(cfg.steps);
  for (int64_t step = 0; step < cfg.steps; ++step) {
    // One history length per batch keeps the batch rectangular.
    const int64_t len = rng.uniform_int(cfg.min_history, max_len);
    std::vector<torch::Tensor> hs, ys;
    for (int64_t b = 0; b < cfg.batch; ++b) {
      const auto& s = sequences[rng.uniform_int(0, static_cast<int64_t>(sequences.size()) - 1)];
      const int64_t start = rng.uniform_int(0, s.size(0) - len - 1);
      hs.push_back(s.slice(0, start, start + len));
      ys.push_back(s[start + len]);
    }
    if (cfg.cosine_decay) {
      const double lr = 0.5 * cfg.lr * (1.0 + std::cos(M_PI * static_cast<double>(step) / cfg.steps));
      for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
    }
    auto pred = drpm->forward(torch::stack(hs).to(dtype));
    auto loss = F::mse_loss(pred, torch::stack(ys).to(dtype));
    opt.zero_grad();
    loss.backward();
    opt.step();
    losses.push_back(loss.item<double>());
  }
  return losses;
}

}  // namespace dgve

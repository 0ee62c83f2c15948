#include "dgve/dam.hpp"

#include <cmath>

#include "dgve/errors.hpp"
#include "dgve/util.hpp"

namespace dgve {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

nn::Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.1)); }

}  // namespace

ResBlockImpl::ResBlockImpl(int64_t channels) {
  conv1_ = register_module("conv1", conv3(channels, channels));
  conv2_ = register_module("conv2", conv3(channels, channels));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) { return x + conv2_(lrelu(conv1_(x))); }

double ResBlockImpl::flops(int64_t h, int64_t w) const {
  return conv_flops(*conv1_, h, w) + conv_flops(*conv2_, h, w);
}

DamEncoderImpl::DamEncoderImpl(const DamConfig& cfg) : cfg_(cfg) {
  const int64_t c1 = cfg.base_channels, c2 = 2 * c1, c3 = 4 * c1;
  auto stage = [&](int64_t ch) {
    nn::Sequential s;
    for (int64_t i = 0; i < cfg.blocks_per_stage; ++i) s->push_back(ResBlock(ch));
    return s;
  };
  stem_ = register_module("stem", conv3(3, c1));
  stage1_ = register_module("stage1", stage(c1));
  down1_ = register_module("down1", conv3(c1, c2, 2));
  stage2_ = register_module("stage2", stage(c2));
  down2_ = register_module("down2", conv3(c2, c3, 2));
  stage3_ = register_module("stage3", stage(c3));
  tail_ = register_module("tail", conv3(c3, c3));
}

torch::Tensor DamEncoderImpl::forward(const torch::Tensor& x) {
  auto y = lrelu(stem_(x));
  y = stage1_->forward(y);
  y = lrelu(down1_(y));
  y = stage2_->forward(y);
  y = lrelu(down2_(y));
  y = stage3_->forward(y);
  return tail_(y);
}

Budget DamEncoderImpl::budget(int64_t h, int64_t w) const {
  Budget b;
  b.params = count_params(*this);
  auto stage_flops = [&](const nn::Sequential& s) {
    double f = 0;
    for (const auto& m : *s) f += m.get<ResBlock>()->flops(h, w);
    return f;
  };
  b.flops += conv_flops(*stem_, h, w);
  b.flops += stage_flops(stage1_);
  b.flops += conv_flops(*down1_, h, w);
  b.flops += stage_flops(stage2_);
  b.flops += conv_flops(*down2_, h, w);
  b.flops += stage_flops(stage3_);
  b.flops += conv_flops(*tail_, h, w);
  return b;
}

ProjectionHeadImpl::ProjectionHeadImpl(int64_t in_dim, int64_t proj_dim) {
  fc1_ = register_module("fc1", nn::Linear(in_dim, proj_dim));
  fc2_ = register_module("fc2", nn::Linear(proj_dim, proj_dim));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& pooled) {
  auto z = fc2_(lrelu(fc1_(pooled)));
  return F::normalize(z, F::NormalizeFuncOptions().dim(1));
}

DegradationRepresentation encode(DamEncoder& encoder, ProjectionHead& head, const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("encode expects [B,3,H,W]");
  if (x.size(2) % 4 || x.size(3) % 4) throw ShapeError("encode: image sides must be divisible by 4");
  DegradationRepresentation r;
  r.d_map = encoder->forward(x);
  r.d_vec = head->forward(r.d_map.mean({2, 3}));
  return r;
}

DegradationRepresentation encode(DamEncoder& encoder, ProjectionHead& head, const ImageTensor& image) {
  return encode(encoder, head, image.batched());
}

// ---------------------------------------------------------------------------

MomentumQueue::MomentumQueue(int64_t capacity, int64_t dim) : capacity_(capacity), dim_(dim) {
  if (capacity < 0 || dim < 1) throw ParameterError("queue: invalid capacity or dimension");
  entries_ = torch::zeros({capacity, dim});
}

torch::Tensor MomentumQueue::contents() const {
  if (count_ < capacity_) return entries_.slice(0, 0, count_);
  // Full: oldest entry sits at the write head.
  return torch::cat({entries_.slice(0, head_), entries_.slice(0, 0, head_)});
}

void MomentumQueue::enqueue(const torch::Tensor& keys) {
  if (keys.dim() != 2 || keys.size(1) != dim_) throw ShapeError("queue: key dimension mismatch");
  if (capacity_ == 0) return;
  auto k = keys.detach().to(entries_.scalar_type());
  auto norms = k.norm(2, 1);
  if ((norms - 1.0).abs().max().item<double>() > 1e-5) throw NumericError("queue: keys must be unit norm");
  for (int64_t i = 0; i < k.size(0); ++i) {
    entries_[head_].copy_(k[i]);
    head_ = (head_ + 1) % capacity_;
    count_ = std::min(count_ + 1, capacity_);
  }
}

void MomentumQueue::store(Checkpoint& ck, const std::string& prefix) const {
  ck.add(prefix + ".entries", entries_);
  ck.add(prefix + ".state", torch::tensor({capacity_, dim_, count_, head_}, torch::kInt64));
}

void MomentumQueue::restore(const Checkpoint& ck, const std::string& prefix) {
  auto st = ck.get(prefix + ".state");
  if (st[0].item<int64_t>() != capacity_ || st[1].item<int64_t>() != dim_)
    throw ShapeError("queue: checkpoint capacity/dimension mismatch");
  count_ = st[2].item<int64_t>();
  head_ = st[3].item<int64_t>();
  entries_ = ck.get(prefix + ".entries").clone();
}

torch::Tensor info_nce_loss(const torch::Tensor& q, const torch::Tensor& k_pos, const MomentumQueue& queue,
                            double tau) {
  if (!(tau > 0.0)) throw ParameterError("tau: must be > 0");
  if (q.dim() != 2 || q.sizes() != k_pos.sizes()) throw ShapeError("info_nce: q and k_pos must be [B,D] alike");
  const int64_t B = q.size(0);
  if (queue.capacity() == 0) {
    auto logits = q.matmul(k_pos.t()) / tau;
    return F::cross_entropy(logits, torch::arange(B, torch::kInt64));
  }
  if (queue.dim() != q.size(1)) throw ShapeError("info_nce: queue dimension mismatch");
  auto pos = (q * k_pos).sum(1, true);
  auto neg = q.matmul(queue.contents().to(q.scalar_type()).t());
  auto logits = torch::cat({pos, neg}, 1) / tau;
  return F::cross_entropy(logits, torch::zeros({B}, torch::kInt64));
}

void momentum_update(const torch::nn::Module& query, torch::nn::Module& key, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ParameterError("momentum: must lie in [0,1]");
  auto qp = query.named_parameters(true);
  auto kp = key.named_parameters(true);
  if (qp.size() != kp.size()) throw ShapeError("momentum_update: parameter lists differ");
  torch::NoGradGuard guard;
  for (size_t i = 0; i < qp.size(); ++i) {
    const auto& a = qp[i];
    auto& b = kp[i];
    if (a.key() != b.key() || a.value().sizes() != b.value().sizes())
      throw ShapeError("momentum_update: parameter '" + a.key() + "' shape mismatch");
    b.value().copy_(b.value() * m + a.value() * (1.0 - m));
  }
}

// ---------------------------------------------------------------------------

std::pair<torch::Tensor, torch::Tensor> make_positive_pair(const ImageTensor& image,
                                                           const DegradationParameters& params,
                                                           int64_t hq_crop, uint64_t seed) {
  if (hq_crop > image.height() || hq_crop > image.width()) throw ShapeError("patch exceeds image");
  SeededRng rng(derive_seed({seed, 0x70a1}));
  auto draw_crop = [&]() {
    const int64_t top = rng.uniform_int(0, image.height() - hq_crop);
    const int64_t left = rng.uniform_int(0, image.width() - hq_crop);
    return image.data().slice(1, top, top + hq_crop).slice(2, left, left + hq_crop).unsqueeze(0);
  };
  auto a = draw_crop();
  auto b = draw_crop();
  auto t = to_tensors(params, hq_crop, hq_crop, image.data().scalar_type());
  return {apply_pdm(a, t, derive_seed({seed, 1}))[0], apply_pdm(b, t, derive_seed({seed, 2}))[0]};
}

DamTrainer::DamTrainer(const DamConfig& arch, const PretrainConfig& cfg)
    : arch_(arch), cfg_(cfg), queue_(cfg.queue_size, arch.proj_dim) {
  if (cfg.batch_size < 1) throw ParameterError("batch_size: must be >= 1");
  if (!(cfg.lr > 0.0)) throw ParameterError("lr: must be > 0");
  if (cfg.kinds.empty() || cfg.levels.empty()) throw ParameterError("pretraining needs kinds and levels");
  torch::manual_seed(derive_seed({cfg.seed, 0xda}));
  encoder_q_ = DamEncoder(arch);
  head_q_ = ProjectionHead(arch.rep_channels(), arch.proj_dim);
  encoder_k_ = DamEncoder(arch);
  head_k_ = ProjectionHead(arch.rep_channels(), arch.proj_dim);
  momentum_update(*encoder_q_, *encoder_k_, 0.0);
  momentum_update(*head_q_, *head_k_, 0.0);
  for (auto& p : encoder_k_->parameters()) p.set_requires_grad(false);
  for (auto& p : head_k_->parameters()) p.set_requires_grad(false);
  std::vector<torch::Tensor> params = encoder_q_->parameters();
  for (auto& p : head_q_->parameters()) params.push_back(p);
  opt_ = std::make_unique<torch::optim::Adam>(
      params, torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}));
}

int64_t DamTrainer::steps_per_epoch(int64_t corpus_size) const {
  return (corpus_size + cfg_.batch_size - 1) / cfg_.batch_size;
}

std::vector<double> DamTrainer::run_epoch(const std::vector<ImageTensor>& corpus, int64_t epoch) {
  if (corpus.empty()) throw StateError("pretrain_dam: empty corpus");
  const int64_t N = static_cast<int64_t>(corpus.size());
  const uint64_t e = static_cast<uint64_t>(epoch);
  auto order = SeededRng(derive_seed({cfg_.seed, 1, e})).permutation(N);
  const int64_t hq_crop = cfg_.crop * cfg_.scale;
  std::vector<double> losses;
  for (int64_t s = 0; s < steps_per_epoch(N); ++s) {
    std::vector<torch::Tensor> qs, ks;
    for (int64_t i = s * cfg_.batch_size; i < std::min(N, (s + 1) * cfg_.batch_size); ++i) {
      const uint64_t item_seed = derive_seed({cfg_.seed, 1, e, static_cast<uint64_t>(s), static_cast<uint64_t>(i)});
      SeededRng rng(item_seed);
      const auto kind = cfg_.kinds[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(cfg_.kinds.size()) - 1))];
      const auto level = cfg_.levels[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(cfg_.levels.size()) - 1))];
      auto params = sample_parameters(kind, level, rng.next_u64());
      params.scale = cfg_.scale;
      auto [a, b] = make_positive_pair(corpus[static_cast<size_t>(order[static_cast<size_t>(i)])], params, hq_crop,
                                       rng.next_u64());
      qs.push_back(a);
      ks.push_back(b);
    }
    auto xq = torch::stack(qs), xk = torch::stack(ks);
    auto q = encode(encoder_q_, head_q_, xq).d_vec;
    torch::Tensor k;
    {
      torch::NoGradGuard guard;
      momentum_update(*encoder_q_, *encoder_k_, cfg_.momentum);
      momentum_update(*head_q_, *head_k_, cfg_.momentum);
      k = encode(encoder_k_, head_k_, xk).d_vec;
    }
    auto loss = info_nce_loss(q, k, queue_, cfg_.tau);
    const double v = loss.item<double>();
    if (!std::isfinite(v)) throw NumericError("pretrain_dam: non-finite contrastive loss");
    opt_->zero_grad();
    loss.backward();
    opt_->step();
    queue_.enqueue(k);
    losses.push_back(v);
  }
  return losses;
}

void DamTrainer::store(Checkpoint& ck) const {
  store_module(ck, "encoder_q", *encoder_q_);
  store_module(ck, "head_q", *head_q_);
  store_module(ck, "encoder_k", *encoder_k_);
  store_module(ck, "head_k", *head_k_);
  queue_.store(ck, "queue");
  store_adam(ck, "adam", *opt_);
}

void DamTrainer::restore(const Checkpoint& ck) {
  restore_module(ck, "encoder_q", *encoder_q_);
  restore_module(ck, "head_q", *head_q_);
  restore_module(ck, "encoder_k", *encoder_k_);
  restore_module(ck, "head_k", *head_k_);
  queue_.restore(ck, "queue");
  restore_adam(ck, "adam", *opt_);
}

PretrainResult pretrain_dam(DamTrainer& trainer, const std::vector<ImageTensor>& corpus) {
  if (corpus.empty()) throw StateError("pretrain_dam: empty corpus");
  PretrainResult r;
  r.steps_per_epoch = trainer.steps_per_epoch(static_cast<int64_t>(corpus.size()));
  for (int64_t e = 0; e < trainer.config().epochs; ++e) {
    auto l = trainer.run_epoch(corpus, e);
    r.losses.insert(r.losses.end(), l.begin(), l.end());
  }
  return r;
}

}  // namespace dgve

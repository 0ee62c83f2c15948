#include "dgve/dgem.hpp"

#include <cmath>

#include "dgve/errors.hpp"

namespace dgve {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.1));
}

nn::Conv2d conv(int64_t in, int64_t out, int64_t k) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).padding(k / 2));
}

// [B,H,W,C] -> [B*nW, w*w, C]
torch::Tensor partition(const torch::Tensor& x, int64_t w) {
  const int64_t B = x.size(0), H = x.size(1), W = x.size(2), C = x.size(3);
  return x.view({B, H / w, w, W / w, w, C}).permute({0, 1, 3, 2, 4, 5}).reshape({-1, w * w, C});
}

torch::Tensor merge(const torch::Tensor& win, int64_t w, int64_t B, int64_t H, int64_t W) {
  const int64_t C = win.size(2);
  return win.view({B, H / w, W / w, w, w, C}).permute({0, 1, 3, 2, 4, 5}).reshape({B, H, W, C});
}

}  // namespace

// ---------------------------------------------------------------------------

CompressionImpl::CompressionImpl(int64_t rep_channels, int64_t out_dim) {
  wc1 = register_module("wc1", nn::Conv2d(nn::Conv2dOptions(rep_channels, rep_channels / 2, 1)));
  wc2 = register_module("wc2", nn::Conv2d(nn::Conv2dOptions(rep_channels / 2, rep_channels, 1)));
  ws1 = register_module("ws1", nn::Conv2d(nn::Conv2dOptions(rep_channels, 1, 1)));
  proj = register_module("proj", nn::Linear(rep_channels, out_dim));
  torch::NoGradGuard guard;
  // Start near unit gains so modulation begins close to the identity.
  proj->weight.mul_(0.1);
  proj->bias.fill_(1.0);
}

torch::Tensor CompressionImpl::forward(const torch::Tensor& d_map) {
  if (d_map.dim() != 4) throw ShapeError("compress expects [B,C,h,w]");
  auto d1 = torch::sigmoid(wc2(F::relu(wc1(d_map)))) * d_map;
  auto d2 = torch::sigmoid(ws1(d1)) * d1;
  return proj(d2.mean({2, 3}));
}

Budget CompressionImpl::budget(int64_t h, int64_t w) const {
  Budget b;
  b.params = count_params(*this);
  int64_t hh = h, ww = w;
  b.flops += conv_flops(*wc1, hh, ww);
  hh = h, ww = w;
  b.flops += conv_flops(*wc2, hh, ww);
  hh = h, ww = w;
  b.flops += conv_flops(*ws1, hh, ww);
  b.flops += linear_flops(*proj, 1);
  return b;
}

// ---------------------------------------------------------------------------

WindowAttentionImpl::WindowAttentionImpl(int64_t dim_, int64_t heads_, int64_t window_)
    : dim(dim_), heads(heads_), window(window_) {
  if (dim % heads) throw ShapeError("attention width must be divisible by the head count");
  qkv = register_module("qkv", nn::Linear(dim, 3 * dim));
  proj = register_module("proj", nn::Linear(dim, dim));
  const int64_t span = 2 * window - 1;
  bias_table = register_parameter("bias_table", torch::randn({span * span, heads}) * 0.02);
  auto coords = torch::arange(window, torch::kInt64);
  auto yy = coords.view({window, 1}).expand({window, window}).reshape({-1});
  auto xx = coords.view({1, window}).expand({window, window}).reshape({-1});
  auto dy = yy.view({-1, 1}) - yy.view({1, -1}) + (window - 1);
  auto dx = xx.view({-1, 1}) - xx.view({1, -1}) + (window - 1);
  // Plain member: derived from the window size, and must stay integral under Module::to(dtype).
  bias_index = (dy * span + dx).reshape({-1});
}

torch::Tensor WindowAttentionImpl::position_bias() const {
  const int64_t T = window * window;
  return bias_table.index_select(0, bias_index).view({T, T, heads}).permute({2, 0, 1});
}

torch::Tensor WindowAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& dc,
                                           const torch::Tensor& mask, torch::Tensor* attn_out) {
  if (x.dim() != 3 || x.size(2) != dim) throw ShapeError("attention input must be [N,T,C] with C = width");
  const int64_t N = x.size(0), T = x.size(1), dh = dim / heads;
  if (T != window * window) throw ShapeError("attention input must hold window*window tokens");
  auto qkv_ = qkv(x).reshape({N, T, 3, heads, dh}).permute({2, 0, 3, 1, 4});
  auto q = qkv_[0] * (1.0 / std::sqrt(static_cast<double>(dh)));
  auto k = qkv_[1];
  auto v = qkv_[2];
  auto attn = q.matmul(k.transpose(-2, -1)) + position_bias().unsqueeze(0);
  if (mask.defined()) {
    const int64_t nW = mask.size(0);
    if (N % nW) throw ShapeError("window count does not divide the batch of windows");
    attn = (attn.view({N / nW, nW, heads, T, T}) + mask.unsqueeze(1).unsqueeze(0)).view({N, heads, T, T});
  }
  attn = torch::softmax(attn, -1);
  if (attn_out) *attn_out = attn;
  if (dc.defined()) {
    if (dc.dim() != 2 || dc.size(0) != N || dc.size(1) != dim)
      throw ShapeError("d_c dimension must equal the attention width");
    v = v * dc.view({N, heads, 1, dh});
  }
  auto out = attn.matmul(v).transpose(1, 2).reshape({N, T, dim});
  return proj(out);
}

double WindowAttentionImpl::flops(int64_t tokens_total) const {
  const double T = static_cast<double>(window * window);
  const double dh = static_cast<double>(dim / heads);
  const double windows = static_cast<double>(tokens_total) / T;
  // Q K^T and A V: each 2 * T^2 * d_h per head per window.
  const double core = windows * static_cast<double>(heads) * 2.0 * (2.0 * T * T * dh);
  return linear_flops(*qkv, tokens_total) + core + linear_flops(*proj, tokens_total);
}

torch::Tensor modulated_attention(const torch::Tensor& tokens, const torch::Tensor& dc,
                                  WindowAttentionImpl& attn) {
  return attn.forward(tokens, dc);
}

// ---------------------------------------------------------------------------

SwinBlockImpl::SwinBlockImpl(int64_t dim, int64_t heads, int64_t window, int64_t shift_, int64_t mlp_hidden)
    : shift(shift_) {
  norm1 = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim})));
  attn = register_module("attn", WindowAttention(dim, heads, window));
  norm2 = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim})));
  fc1 = register_module("fc1", nn::Linear(dim, mlp_hidden));
  fc2 = register_module("fc2", nn::Linear(mlp_hidden, dim));
}

torch::Tensor SwinBlockImpl::shift_mask(int64_t h, int64_t w, torch::Dtype dtype) const {
  const int64_t win = attn->window, s = shift;
  auto labels = torch::zeros({1, h, w, 1}, torch::kFloat64);
  const std::vector<std::pair<int64_t, int64_t>> hs = {{0, h - win}, {h - win, h - s}, {h - s, h}};
  const std::vector<std::pair<int64_t, int64_t>> ws = {{0, w - win}, {w - win, w - s}, {w - s, w}};
  double id = 0;
  for (const auto& a : hs)
    for (const auto& b : ws) {
      labels.slice(1, a.first, a.second).slice(2, b.first, b.second).fill_(id);
      id += 1;
    }
  auto lw = partition(labels, win).squeeze(-1);  // [nW, T]
  auto diff = lw.unsqueeze(1) - lw.unsqueeze(2);
  return torch::where(diff != 0, torch::full_like(diff, -100.0), torch::zeros_like(diff)).to(dtype);
}

torch::Tensor SwinBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& dc, torch::Tensor* attn_out) {
  const int64_t B = x.size(0), H = x.size(1), W = x.size(2), win = attn->window;
  const bool shifted = shift > 0 && H > win && W > win;
  auto y = norm1(x);
  if (shifted) y = torch::roll(y, {-shift, -shift}, {1, 2});
  auto windows = partition(y, win);
  const int64_t nW = (H / win) * (W / win);
  torch::Tensor dcw;
  if (dc.defined()) dcw = dc.repeat_interleave(nW, 0);
  torch::Tensor mask;
  if (shifted) mask = shift_mask(H, W, x.scalar_type());
  auto a = attn->forward(windows, dcw, mask, attn_out);
  y = merge(a, win, B, H, W);
  if (shifted) y = torch::roll(y, {shift, shift}, {1, 2});
  auto z = x + y;
  return z + fc2(F::gelu(fc1(norm2(z))));
}

double SwinBlockImpl::flops(int64_t h, int64_t w) const {
  const int64_t tokens = h * w;
  return attn->flops(tokens) + linear_flops(*fc1, tokens) + linear_flops(*fc2, tokens);
}

// ---------------------------------------------------------------------------

DgemImpl::DgemImpl(const DgemConfig& cfg) : cfg_(cfg) {
  if (cfg.embed_dim % cfg.heads) throw ShapeError("embed_dim must be divisible by heads");
  compression = register_module("compression", Compression(cfg.rep_channels, cfg.embed_dim));
  shallow1 = register_module("shallow1", conv(3, cfg.shallow_channels, 3));
  shallow2 = register_module("shallow2", conv(cfg.shallow_channels, cfg.shallow_channels, 3));
  embed = register_module("embed", conv(cfg.shallow_channels, cfg.embed_dim, 1));
  blocks = register_module("blocks", nn::ModuleList());
  for (int64_t i = 0; i < cfg.blocks; ++i)
    blocks->push_back(SwinBlock(cfg.embed_dim, cfg.heads, cfg.window, (i % 2) ? cfg.window / 2 : 0, cfg.mlp_hidden));
  norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({cfg.embed_dim})));
  recon1 = register_module("recon1", conv(cfg.embed_dim, cfg.recon_channels, 3));
  recon2 = register_module("recon2", conv(cfg.recon_channels, cfg.recon_channels, 3));
  recon3 = register_module("recon3", conv(cfg.recon_channels, 3 * cfg.scale * cfg.scale, 3));
  torch::NoGradGuard guard;
  recon3->weight.mul_(0.1);
  recon3->bias.zero_();
}

torch::Tensor DgemImpl::forward(const torch::Tensor& x_l, const torch::Tensor& dc, AttentionTrace* trace) {
  if (x_l.dim() != 4 || x_l.size(1) != 3) throw ShapeError("DGEM expects [B,3,h,w]");
  const int64_t h = x_l.size(2), w = x_l.size(3), win = cfg_.window, s = cfg_.scale;
  const int64_t hp = (h + win - 1) / win * win, wp = (w + win - 1) / win * win;
  auto x = (hp != h || wp != w) ? ops::reflect_pad(x_l, 0, hp - h, 0, wp - w) : x_l;
  auto f = shallow2(lrelu(shallow1(x)));
  auto t = embed(f).permute({0, 2, 3, 1});
  for (size_t i = 0; i < blocks->size(); ++i) {
    torch::Tensor a;
    t = blocks[i]->as<SwinBlockImpl>()->forward(t, dc, trace ? &a : nullptr);
    if (trace) {
      trace->attention.push_back(a);
      trace->outputs.push_back(t);
    }
  }
  auto g = norm(t).permute({0, 3, 1, 2});
  auto r = recon3(lrelu(recon2(lrelu(recon1(g)))));
  auto up = F::pixel_shuffle(r, F::PixelShuffleFuncOptions(s)).slice(2, 0, s * h).slice(3, 0, s * w);
  if (cfg_.bicubic_skip) up = up + ops::resize_bicubic(x_l, s * h, s * w);
  return up.clamp(0.0, 1.0);
}

DgemBudget DgemImpl::budget(int64_t h, int64_t w) const {
  const int64_t win = cfg_.window, s = cfg_.scale;
  const int64_t hp = (h + win - 1) / win * win, wp = (w + win - 1) / win * win;
  DgemBudget b;
  b.compression = compression->budget(h / 4, w / 4);

  int64_t hh = hp, ww = wp;
  b.shallow.params = count_params(*shallow1) + count_params(*shallow2);
  b.shallow.flops = conv_flops(*shallow1, hh, ww) + conv_flops(*shallow2, hh, ww);

  hh = hp, ww = wp;
  b.modulation.params = count_params(*embed) + count_params(*norm);
  b.modulation.flops = conv_flops(*embed, hh, ww);
  for (const auto& m : *blocks) {
    b.modulation.params += count_params(*m);
    b.modulation.flops += m->as<SwinBlockImpl>()->flops(hp, wp);
  }

  hh = hp, ww = wp;
  b.reconstruction.params = count_params(*recon1) + count_params(*recon2) + count_params(*recon3);
  b.reconstruction.flops = conv_flops(*recon1, hh, ww) + conv_flops(*recon2, hh, ww) + conv_flops(*recon3, hh, ww);
  if (cfg_.bicubic_skip) b.reconstruction.flops += 2.0 * 16.0 * 3.0 * static_cast<double>(s * h * s * w);
  return b;
}

EnhanceResult enhance(Dgem& dgem, const torch::Tensor& x_l, const DegradationRepresentation& d) {
  EnhanceResult r;
  r.d_c = dgem->compress(d.d_map);
  r.x_enh = dgem->forward(x_l, r.d_c);
  return r;
}

}  // namespace dgve

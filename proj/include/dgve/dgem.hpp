#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "dgve/dam.hpp"
#include "dgve/flops.hpp"
#include "dgve/image.hpp"

namespace dgve {

struct DgemConfig {
  int64_t rep_channels = 256;  // channels of the incoming d_map
  int64_t embed_dim = 60;      // D_c, also the attention width
  int64_t heads = 4;
  int64_t window = 8;
  int64_t blocks = 4;
  int64_t scale = 2;
  int64_t shallow_channels = 12;
  int64_t recon_channels = 112;
  int64_t mlp_hidden = 120;
  bool bicubic_skip = true;
};

// Channel then spatial gating of d_map, pooled and projected to D_c.
class CompressionImpl : public torch::nn::Module {
 public:
  CompressionImpl(int64_t rep_channels, int64_t out_dim);
  torch::Tensor forward(const torch::Tensor& d_map);
  Budget budget(int64_t h, int64_t w) const;  // h, w of d_map

  torch::nn::Conv2d wc1{nullptr}, wc2{nullptr}, ws1{nullptr};
  torch::nn::Linear proj{nullptr};
};
TORCH_MODULE(Compression);

// Multi-head window attention whose values are scaled per channel by d_c.
class WindowAttentionImpl : public torch::nn::Module {
 public:
  WindowAttentionImpl(int64_t dim, int64_t heads, int64_t window);

  // x: [N,T,C]. dc: [N,C] or undefined (unmodulated). mask: [nW,T,T] additive, or
  // undefined; N must then be a multiple of nW. attn_out receives [N,heads,T,T].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& dc, const torch::Tensor& mask = {},
                        torch::Tensor* attn_out = nullptr);
  // [heads,T,T] relative position bias.
  torch::Tensor position_bias() const;
  double flops(int64_t tokens_total) const;

  int64_t dim, heads, window;
  torch::nn::Linear qkv{nullptr}, proj{nullptr};
  torch::Tensor bias_table, bias_index;
};
TORCH_MODULE(WindowAttention);

// Functional form operating on explicit weights (used by tests and the block).
torch::Tensor modulated_attention(const torch::Tensor& tokens, const torch::Tensor& dc,
                                  WindowAttentionImpl& attn);

struct AttentionTrace {
  std::vector<torch::Tensor> attention;  // per block, [N,heads,T,T]
  std::vector<torch::Tensor> outputs;    // per block, [B,H,W,C]
};

class SwinBlockImpl : public torch::nn::Module {
 public:
  SwinBlockImpl(int64_t dim, int64_t heads, int64_t window, int64_t shift, int64_t mlp_hidden);
  // x: [B,H,W,C] with H, W multiples of the window.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& dc, torch::Tensor* attn_out = nullptr);
  double flops(int64_t h, int64_t w) const;

  int64_t shift;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  WindowAttention attn{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};

 private:
  torch::Tensor shift_mask(int64_t h, int64_t w, torch::Dtype dtype) const;
};
TORCH_MODULE(SwinBlock);

struct DgemBudget {
  Budget compression, shallow, modulation, reconstruction;
  Budget total() const {
    Budget b;
    b += compression;
    b += shallow;
    b += modulation;
    b += reconstruction;
    return b;
  }
};

class DgemImpl : public torch::nn::Module {
 public:
  explicit DgemImpl(const DgemConfig& cfg = {});

  torch::Tensor compress(const torch::Tensor& d_map) { return compression->forward(d_map); }
  // x_l: [B,3,h,w]; dc: [B,D_c] or undefined for the unmodulated path. Output [B,3,s*h,s*w].
  torch::Tensor forward(const torch::Tensor& x_l, const torch::Tensor& dc, AttentionTrace* trace = nullptr);
  DgemBudget budget(int64_t h, int64_t w) const;  // h, w of x_l
  const DgemConfig& config() const { return cfg_; }

  Compression compression{nullptr};
  torch::nn::Conv2d shallow1{nullptr}, shallow2{nullptr}, embed{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Conv2d recon1{nullptr}, recon2{nullptr}, recon3{nullptr};

 private:
  DgemConfig cfg_;
};
TORCH_MODULE(Dgem);

struct EnhanceResult {
  torch::Tensor x_enh;  // [B,3,sH,sW]
  torch::Tensor d_c;    // [B,D_c]
};

EnhanceResult enhance(Dgem& dgem, const torch::Tensor& x_l, const DegradationRepresentation& d);

}  // namespace dgve

#include "dgve/flops.hpp"

namespace dgve {

int64_t count_params(const torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters(true)) n += p.numel();
  return n;
}

int64_t conv_out_side(int64_t in, int64_t kernel, int64_t stride, int64_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

double conv_flops(const torch::nn::Conv2dImpl& conv, int64_t& h, int64_t& w) {
  const auto& o = conv.options;
  const auto k = *o.kernel_size();
  const auto s = *o.stride();
  const auto* pad = std::get_if<torch::ExpandingArray<2>>(&o.padding());
  const int64_t ph = pad ? (**pad)[0] : k[0] / 2;
  const int64_t pw = pad ? (**pad)[1] : k[1] / 2;
  h = conv_out_side(h, k[0], s[0], ph);
  w = conv_out_side(w, k[1], s[1], pw);
  const double macs_per_out = static_cast<double>(o.in_channels() / o.groups() * k[0] * k[1]) +
                              (o.bias() ? 1.0 : 0.0);
  return 2.0 * static_cast<double>(h * w * o.out_channels()) * macs_per_out;
}

double linear_flops(const torch::nn::LinearImpl& lin, int64_t rows) {
  const auto& o = lin.options;
  return 2.0 * static_cast<double>(rows * o.out_features()) *
         (static_cast<double>(o.in_features()) + (o.bias() ? 1.0 : 0.0));
}

Budget count_params_flops(const torch::nn::Conv2dImpl& conv, int64_t h, int64_t w) {
  Budget b;
  b.params = count_params(conv);
  b.flops = conv_flops(conv, h, w);
  return b;
}

}  // namespace dgve

#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace dgve {

// Parameter count and forward FLOPs (2 x multiply-accumulate, bias counted as one MAC).
struct Budget {
  int64_t params = 0;
  double flops = 0.0;

  Budget& operator+=(const Budget& o) {
    params += o.params;
    flops += o.flops;
    return *this;
  }
};

int64_t count_params(const torch::nn::Module& m);

// Output side of a convolution along one axis.
int64_t conv_out_side(int64_t in, int64_t kernel, int64_t stride, int64_t padding);

// FLOPs of one conv at input (h, w); h and w are updated to the output size.
double conv_flops(const torch::nn::Conv2dImpl& conv, int64_t& h, int64_t& w);
double linear_flops(const torch::nn::LinearImpl& lin, int64_t rows);

// Exact params plus analytic FLOPs for a single convolution layer.
Budget count_params_flops(const torch::nn::Conv2dImpl& conv, int64_t h, int64_t w);

}  // namespace dgve

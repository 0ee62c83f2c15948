#include "dgve/image.hpp"

#include <cmath>

#include "dgve/errors.hpp"

namespace dgve {

namespace F = torch::nn::functional;

ImageTensor::ImageTensor(torch::Tensor chw) {
  if (!chw.defined() || chw.dim() != 3 || chw.size(0) != 3)
    throw ShapeError("image must be a [3,H,W] tensor");
  if (chw.size(1) < kMinSide || chw.size(2) < kMinSide)
    throw ShapeError("image sides must be >= 8");
  if (!chw.is_floating_point()) throw ParameterError("image must be floating point");
  if (!torch::isfinite(chw).all().item<bool>()) throw NumericError("image contains non-finite values");
  if (chw.min().item<double>() < 0.0 || chw.max().item<double>() > 1.0)
    throw ParameterError("image values must lie in [0,1]");
  data_ = chw.detach().contiguous();
}

ImageTensor ImageTensor::clamped(const torch::Tensor& chw) {
  return ImageTensor(torch::nan_to_num(chw.detach(), 0.0).clamp(0.0, 1.0));
}

ImageTensor ImageTensor::filled(int64_t height, int64_t width, double value) {
  return ImageTensor(torch::full({3, height, width}, value, torch::kFloat32));
}

ImageTensor ImageTensor::from_batch(const torch::Tensor& bchw, int64_t index) {
  if (bchw.dim() != 4) throw ShapeError("expected [B,3,H,W]");
  return clamped(bchw[index].to(torch::kFloat32));
}

void VideoSequence::validate() const {
  if (frames.empty()) return;
  for (const auto& f : frames) {
    if (f.height() != frames.front().height() || f.width() != frames.front().width())
      throw ShapeError("video frames differ in size");
  }
}

std::vector<ImageTensor> crop_patches(const ImageTensor& image, int64_t size, int64_t stride) {
  if (stride < 1) throw ParameterError("stride must be >= 1");
  if (size > image.height() || size > image.width()) throw ShapeError("patch exceeds image");
  std::vector<ImageTensor> out;
  for (int64_t top = 0; top + size <= image.height(); top += stride)
    for (int64_t left = 0; left + size <= image.width(); left += stride)
      out.push_back(crop(image, top, left, size, size));
  return out;
}

ImageTensor crop(const ImageTensor& image, int64_t top, int64_t left, int64_t height, int64_t width) {
  if (top < 0 || left < 0 || top + height > image.height() || left + width > image.width())
    throw ShapeError("patch exceeds image");
  return ImageTensor(image.data().slice(1, top, top + height).slice(2, left, left + width).clone());
}

ImageTensor resize_bicubic(const ImageTensor& image, double scale) {
  if (!(scale > 0.0)) throw ParameterError("scale must be positive");
  const int64_t oh = ops::scaled_side(image.height(), scale);
  const int64_t ow = ops::scaled_side(image.width(), scale);
  if (oh < ImageTensor::kMinSide || ow < ImageTensor::kMinSide)
    throw ShapeError("resized image would be smaller than 8 pixels");
  // Resample in double so weight-sum rounding cannot perturb constant regions.
  auto x = image.batched().to(torch::kFloat64);
  auto y = ops::resize_bicubic(x, oh, ow).clamp(0.0, 1.0);
  return ImageTensor(y[0].to(image.data().scalar_type()));
}

torch::Tensor gaussian_blur(const ImageTensor& image, double sigma) {
  return ops::gaussian_blur(image.batched(), sigma)[0];
}

torch::Tensor highpass(const ImageTensor& image, double sigma) {
  return ops::highpass(image.batched(), sigma)[0];
}

namespace ops {

int64_t scaled_side(int64_t side, double scale) {
  return static_cast<int64_t>(std::llround(static_cast<double>(side) * scale));
}

namespace {

torch::Tensor reflect_index(int64_t n, int64_t before, int64_t after) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(n + before + after));
  const int64_t period = n > 1 ? 2 * (n - 1) : 1;
  for (int64_t i = -before; i < n + after; ++i) {
    int64_t j = i % period;
    if (j < 0) j += period;
    if (j >= n) j = period - j;
    idx.push_back(j);
  }
  return torch::tensor(idx, torch::kInt64);
}

}  // namespace

torch::Tensor reflect_pad(const torch::Tensor& x, int64_t top, int64_t bottom, int64_t left,
                          int64_t right) {
  if (x.dim() != 4) throw ShapeError("reflect_pad expects [B,C,H,W]");
  auto y = x;
  if (top || bottom) y = y.index_select(2, reflect_index(x.size(2), top, bottom));
  if (left || right) y = y.index_select(3, reflect_index(x.size(3), left, right));
  return y;
}

torch::Tensor convolve(const torch::Tensor& x, const torch::Tensor& kernel) {
  if (x.dim() != 4) throw ShapeError("convolve expects [B,C,H,W]");
  const bool batched = kernel.dim() == 3;
  if (!batched && kernel.dim() != 2) throw ShapeError("kernel must be [kh,kw] or [B,kh,kw]");
  const int64_t kh = kernel.size(-2), kw = kernel.size(-1);
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("kernel sides must be odd");
  const int64_t B = x.size(0), C = x.size(1);
  auto k = kernel.to(x.scalar_type()).flip({-2, -1});
  auto padded = reflect_pad(x, kh / 2, kh / 2, kw / 2, kw / 2);
  if (!batched) {
    auto w = k.reshape({1, 1, kh, kw}).expand({C, 1, kh, kw});
    return F::conv2d(padded, w, F::Conv2dFuncOptions().groups(C));
  }
  if (kernel.size(0) != B) throw ShapeError("kernel batch does not match input batch");
  auto w = k.unsqueeze(1).repeat_interleave(C, 0);  // [B*C,1,kh,kw]
  auto flat = padded.reshape({1, B * C, padded.size(2), padded.size(3)});
  auto y = F::conv2d(flat, w, F::Conv2dFuncOptions().groups(B * C));
  return y.reshape({B, C, x.size(2), x.size(3)});
}

torch::Tensor gaussian_kernel1d(double sigma, torch::Dtype dtype) {
  if (!(sigma > 0.0)) throw ParameterError("sigma must be positive");
  const int64_t r = static_cast<int64_t>(std::ceil(3.0 * sigma));
  auto t = torch::arange(-r, r + 1, torch::kFloat64);
  auto k = torch::exp(-(t * t) / (2.0 * sigma * sigma));
  return (k / k.sum()).to(dtype);
}

torch::Tensor gaussian_blur(const torch::Tensor& x, double sigma) {
  auto k = gaussian_kernel1d(sigma, x.scalar_type());
  auto rows = convolve(x, k.unsqueeze(0));
  return convolve(rows, k.unsqueeze(1));
}

torch::Tensor highpass(const torch::Tensor& x, double sigma) { return x - gaussian_blur(x, sigma); }

torch::Tensor resize_bicubic(const torch::Tensor& x, int64_t out_h, int64_t out_w) {
  if (out_h == x.size(2) && out_w == x.size(3)) return x;
  const bool shrink = out_h < x.size(2) || out_w < x.size(3);
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{out_h, out_w})
                               .mode(torch::kBicubic)
                               .align_corners(false)
                               .antialias(shrink));
}

}  // namespace ops

std::string frame_filename(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06lld.png", static_cast<long long>(index));
  return buf;
}

}  // namespace dgve

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <torch/torch.h>

namespace dgve {

// RGB image with values in [0,1], stored channel-first as a [3,H,W] tensor.
// Construction validates the range; use clamped() when clipping is intended.
class ImageTensor {
 public:
  static constexpr int64_t kMinSide = 8;

  ImageTensor() = default;
  explicit ImageTensor(torch::Tensor chw);

  static ImageTensor clamped(const torch::Tensor& chw);
  static ImageTensor filled(int64_t height, int64_t width, double value);
  // Picks item `index` of a [B,3,H,W] tensor, clamping to [0,1].
  static ImageTensor from_batch(const torch::Tensor& bchw, int64_t index = 0);

  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }
  bool empty() const { return !data_.defined(); }
  const torch::Tensor& data() const { return data_; }
  torch::Tensor batched() const { return data_.unsqueeze(0); }

 private:
  torch::Tensor data_;
};

struct VideoSequence {
  std::vector<ImageTensor> frames;
  double frame_rate = 30.0;

  // Throws ShapeError if frames differ in size.
  void validate() const;
};

std::vector<ImageTensor> crop_patches(const ImageTensor& image, int64_t size, int64_t stride);
ImageTensor crop(const ImageTensor& image, int64_t top, int64_t left, int64_t height, int64_t width);

// Output side = round(side * scale). Antialiased when shrinking.
ImageTensor resize_bicubic(const ImageTensor& image, double scale);

torch::Tensor gaussian_blur(const ImageTensor& image, double sigma = 1.0);
// image - gaussian_blur(image); values in [-1,1]. Returns [3,H,W].
torch::Tensor highpass(const ImageTensor& image, double sigma = 1.0);

// Batched tensor primitives on [B,C,H,W], differentiable, dtype-preserving.
namespace ops {

int64_t scaled_side(int64_t side, double scale);

// Mirror padding without edge repetition; works for any pad width.
torch::Tensor reflect_pad(const torch::Tensor& x, int64_t top, int64_t bottom, int64_t left,
                          int64_t right);

// Per-channel convolution (kernel flipped) with reflect padding, same output size.
// kernel: [kh,kw] shared, or [B,kh,kw] one per batch item. kh, kw odd.
torch::Tensor convolve(const torch::Tensor& x, const torch::Tensor& kernel);

// Normalized kernel of radius ceil(3 sigma).
torch::Tensor gaussian_kernel1d(double sigma, torch::Dtype dtype = torch::kFloat64);
torch::Tensor gaussian_blur(const torch::Tensor& x, double sigma);
torch::Tensor highpass(const torch::Tensor& x, double sigma);

torch::Tensor resize_bicubic(const torch::Tensor& x, int64_t out_h, int64_t out_w);

}  // namespace ops

ImageTensor load_png(const std::filesystem::path& path);
void save_png(const ImageTensor& image, const std::filesystem::path& path);

// Directory of frame_000000.png, ... plus video.txt holding "frame_rate = <fps>".
VideoSequence load_video(const std::filesystem::path& dir);
void save_video(const VideoSequence& video, const std::filesystem::path& dir);
std::string frame_filename(int64_t index);

}  // namespace dgve

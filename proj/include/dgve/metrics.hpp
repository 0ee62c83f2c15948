#pragma once

#include <array>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dgve/image.hpp"

namespace dgve {

// Returned by psnr() for identical inputs.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// 10 log10(1 / MSE) with the MSE taken jointly over all three channels.
double psnr(const ImageTensor& x, const ImageTensor& y);

// Mean local SSIM on BT.601 luma, 11x11 gaussian window (sigma 1.5), valid region only.
// Both sides must be at least 11.
double ssim(const ImageTensor& x, const ImageTensor& y);

// Multivariate gaussian over the 36 natural-scene statistics used by niqe().
struct NiqeModel {
  static constexpr int64_t kDims = 36;
  static constexpr int kFormatVersion = 1;

  std::string label;           // free text describing the fitting corpus
  torch::Tensor mu;            // [36] float64
  torch::Tensor cov;           // [36,36] float64

  void save(const std::filesystem::path& path) const;
  static NiqeModel load(const std::filesystem::path& path);
};

// Smallest side niqe() accepts.
inline constexpr int64_t kNiqeMinSide = 96;

// Per-block features at both scales, one row per 96x96 block: [blocks, 36] float64.
torch::Tensor niqe_features(const ImageTensor& image);

// Mean and covariance of all block features of the given images (NaN rows dropped).
NiqeModel fit_niqe(const std::vector<ImageTensor>& images, std::string label);

// Path of the model shipped with the sources; `override_path` wins when non-empty.
std::filesystem::path niqe_model_path(const std::string& override_path = "");
const NiqeModel& default_niqe_model();

double niqe(const ImageTensor& image, const NiqeModel& model);
double niqe(const ImageTensor& image);

// Block-based score in [0, 100]; lower is better.
double piqe(const ImageTensor& image);

struct ImageScores {
  std::string name;
  std::optional<double> psnr, ssim;  // present when a reference exists
  std::optional<double> niqe;        // absent when the image is below kNiqeMinSide
  double piqe = 0.0;
  double ms = 0.0;                   // enhancement wall time
};

struct MetricReport {
  std::vector<ImageScores> images;
  int64_t params = 0;
  double gflops = 0.0;

  struct Aggregate {
    std::optional<double> psnr, ssim, niqe;
    double piqe = 0.0;
    double ms_mean = 0.0, ms_std = 0.0;
  };
  // Plain means over the images that carry each score.
  Aggregate aggregate() const;

  // include_ms=false drops timing so the file is reproducible.
  std::string to_csv(bool include_ms = true) const;
  std::string summary(bool include_ms = true) const;
};

struct ProjectionLabel {
  std::string kind;
  std::string level;
};

struct ProjectionResult {
  std::vector<std::array<double, 2>> coords;
  std::array<double, 2> explained{0.0, 0.0};  // variance ratio of each component
  torch::Tensor components;                    // [2, D] float64, rows orthonormal
  std::vector<ProjectionLabel> labels;

  std::string to_csv() const;
};

// Mean-centred PCA onto the top two components. Each component's entry of
// largest magnitude is made positive. Needs at least 3 rows.
ProjectionResult pca_project(const torch::Tensor& vectors, std::vector<ProjectionLabel> labels);

// Mean silhouette over all points; points in singleton clusters count as 0.
double silhouette(const std::vector<std::array<double, 2>>& points, const std::vector<std::string>& labels);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Spearman correlation between level index and the per-level centroids of the
// first principal coordinate of `vectors`. Its sign follows the component sign convention.
double level_trend(const torch::Tensor& vectors, const std::vector<int64_t>& level_index);

// Scatter of the 2-D coordinates, one colour per kind, dot size growing with level.
ImageTensor render_scatter(const ProjectionResult& p, int64_t side = 512);

}  // namespace dgve

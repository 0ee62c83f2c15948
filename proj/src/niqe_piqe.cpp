// NIQE and PIQE following the MATLAB reference procedures. The tensor ops and
// dtypes track pyiqa 0.1.16 closely so its scores can serve as a regression oracle.
#include <cmath>
#include <fstream>
#include <sstream>

#include "dgve/errors.hpp"
#include "dgve/metrics.hpp"
#include "dgve/util.hpp"

#ifndef DGVE_DATA_DIR
#define DGVE_DATA_DIR "data"
#endif

namespace dgve {
namespace {

using torch::indexing::None;
using torch::indexing::Slice;
namespace F = torch::nn::functional;

// YIQ luma of [1,3,H,W] float32 as [1,1,H,W] float32.
torch::Tensor luma_yiq(const ImageTensor& image) {
  auto w = torch::tensor({0.299, 0.587, 0.114, 0.5959, -0.2746, -0.3213, 0.2115, -0.5227, 0.3112},
                         torch::kFloat32)
               .view({3, 3})
               .t();
  auto x = image.batched().to(torch::kFloat32);
  auto yiq = torch::matmul(x.permute({0, 2, 3, 1}), w).permute({0, 3, 1, 2});
  return yiq.index({Slice(), Slice(0, 1)});
}

// MATLAB fspecial('gaussian', size, sigma), rounded through float32.
torch::Tensor fspecial(int64_t size, double sigma) {
  const double m = (size - 1.0) / 2.0;
  std::vector<double> h(size * size);
  double hmax = 0.0;
  for (int64_t i = 0; i < size; ++i)
    for (int64_t j = 0; j < size; ++j) {
      const double y = i - m, x = j - m;
      h[i * size + j] = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      hmax = std::max(hmax, h[i * size + j]);
    }
  double sum = 0.0;
  for (auto& v : h) {
    if (v < std::numeric_limits<double>::epsilon() * hmax) v = 0.0;
    sum += v;
  }
  for (auto& v : h) v /= sum;
  return torch::tensor(h, torch::kFloat64).to(torch::kFloat32).view({1, 1, size, size});
}

// (x - mu) / (sigma + 1) with local gaussian moments and replicate padding.
torch::Tensor normalize_with_gauss(const torch::Tensor& img) {
  auto k = fspecial(7, 7.0 / 6.0).to(img.dtype());
  auto filt = [&](const torch::Tensor& t) {
    return F::conv2d(F::pad(t, F::PadFuncOptions({3, 3, 3, 3}).mode(torch::kReplicate)), k);
  };
  auto mu = filt(img);
  auto ex2 = filt(img.pow(2));
  const double eps = img.dtype() == torch::kFloat64 ? std::numeric_limits<double>::epsilon()
                                                    : std::numeric_limits<float>::epsilon();
  auto sigma = torch::sqrt((ex2 - mu.pow(2)).abs() + eps);
  return (img - mu) / (sigma + 1);
}

struct Aggd {
  torch::Tensor alpha, beta_l, beta_r;  // [n]
};

// Moment-matching fit of an asymmetric generalized gaussian per block [n,1,h,w].
Aggd estimate_aggd(const torch::Tensor& block) {
  auto gam = torch::arange(0.2, 10 + 0.001, 0.001).to(block.dtype());
  auto r_gam = (2 * torch::lgamma(2.0 / gam) - (torch::lgamma(1.0 / gam) + torch::lgamma(3.0 / gam))).exp();
  r_gam = r_gam.repeat({block.size(0), 1});

  auto mask_left = block < 0;
  auto mask_right = block > 0;
  auto count_left = mask_left.sum({-1, -2}, false, torch::kFloat32);
  auto count_right = mask_right.sum({-1, -2}, false, torch::kFloat32);
  auto left_std = torch::sqrt((block * mask_left).pow(2).sum({-1, -2}) / count_left);
  auto right_std = torch::sqrt((block * mask_right).pow(2).sum({-1, -2}) / count_right);

  auto gammahat = left_std / right_std;
  auto rhat = block.abs().mean({-1, -2}).pow(2) / block.pow(2).mean({-1, -2});
  auto rhatnorm = (rhat * (gammahat.pow(3) + 1) * (gammahat + 1)) / (gammahat.pow(2) + 1).pow(2);
  auto pos = (r_gam - rhatnorm).abs().argmin(-1);

  auto alpha = gam.index({pos});
  auto scale = (torch::lgamma(1 / alpha) - torch::lgamma(3 / alpha)).exp().sqrt();
  return {alpha, left_std.squeeze(-1) * scale, right_std.squeeze(-1) * scale};
}

// 18 features per block: shape and scale of the block, then of four neighbour products.
torch::Tensor block_features(const torch::Tensor& block) {
  const int64_t n = block.size(0);
  auto b0 = block.index({Slice(), Slice(0, 1)});
  std::vector<torch::Tensor> feat;
  auto a = estimate_aggd(b0);
  feat.push_back(a.alpha);
  feat.push_back((a.beta_l + a.beta_r) / 2);
  const int64_t shifts[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
  for (const auto& s : shifts) {
    auto shifted = torch::roll(b0, {s[0], s[1]}, {2, 3});
    auto p = estimate_aggd(b0 * shifted);
    auto mean = (p.beta_r - p.beta_l) * (torch::lgamma(2 / p.alpha) - torch::lgamma(1 / p.alpha)).exp();
    feat.insert(feat.end(), {p.alpha, mean, p.beta_l, p.beta_r});
  }
  for (auto& f : feat) f = f.reshape({n, 1});
  return torch::cat(feat, -1);
}

// Non-overlapping blocks in column-major block order, features per block: [1, blocks, 18].
torch::Tensor blockproc(const torch::Tensor& x, int64_t bh, int64_t bw) {
  const int64_t b = x.size(0), c = x.size(1);
  const int64_t nh = x.size(2) / bh, nw = x.size(3) / bw;
  auto blocks = F::unfold(x, F::UnfoldFuncOptions({bh, bw}).stride({bh, bw}));
  blocks = blocks.reshape({b, c, bh, bw, nh, nw}).permute({5, 4, 0, 1, 2, 3}).reshape({nh * nw * b, c, bh, bw});
  auto r = block_features(blocks);
  return r.reshape({nh * nw, b, r.size(1)}).transpose(0, 1);
}

// MATLAB-style reflect padding that repeats the edge sample, along dim 2 or 3.
torch::Tensor matlab_reflect_pad(const torch::Tensor& x, int64_t dim, int64_t pre, int64_t post) {
  const int64_t n = x.size(dim);
  std::vector<int64_t> idx;
  for (int64_t p = pre - 1; p >= 0; --p) idx.push_back(p);
  for (int64_t i = 0; i < n; ++i) idx.push_back(i);
  for (int64_t p = 0; p < post; ++p) idx.push_back(n - 1 - p);
  return x.index_select(dim, torch::tensor(idx, torch::kInt64));
}

float cubic(float ax) {
  const float a = -0.5f;
  ax = std::fabs(ax);
  const float ax2 = ax * ax, ax3 = ax * ax2;
  float c01 = ((a + 2) * ax3 - (a + 3) * ax2 + 1) * static_cast<float>(ax <= 1);
  float c12 = ((a * ax3) - (5 * a * ax2) + (8 * a * ax) - (4 * a)) * static_cast<float>(ax > 1 && ax <= 2);
  return c01 + c12;
}

// Antialiased bicubic halving of [1,1,H,W] float64, computed in float32 like the reference.
torch::Tensor imresize_half(const torch::Tensor& x) {
  auto r = torch::linspace(-1.75, 1.75, 8, torch::kFloat32);
  auto ra = r.accessor<float, 1>();
  std::vector<float> kv(8);
  for (int i = 0; i < 8; ++i) kv[i] = cubic(ra[i]);
  auto k1 = torch::tensor(kv, torch::kFloat32).view({-1, 1});
  auto k = torch::matmul(k1, k1.t());
  k /= k.sum();
  auto xf = x.to(torch::kFloat32);
  xf = matlab_reflect_pad(xf, 2, 3, 3);
  xf = matlab_reflect_pad(xf, 3, 3, 3);
  auto y = F::conv2d(xf, k.view({1, 1, 8, 8}), F::Conv2dFuncOptions().stride(2));
  return y.to(x.dtype());
}

// Rows without NaN; correction 1 unless only one row remains.
std::pair<torch::Tensor, torch::Tensor> nan_mean_cov(const torch::Tensor& feats) {
  auto nan = torch::isnan(feats);
  auto zeroed = feats.masked_fill(nan, 0);
  auto mu = zeroed.sum(0) / (~nan).to(torch::kFloat32).sum(0);
  auto keep = (~nan.any(1)).nonzero().squeeze(1);
  auto clean = feats.index_select(0, keep);
  const int64_t correction = clean.size(0) > 1 ? 1 : 0;
  auto cov = torch::cov(clean.t(), correction);
  return {mu, cov};
}

void check_model(const NiqeModel& m) {
  if (!m.mu.defined() || !m.cov.defined() || m.mu.numel() != NiqeModel::kDims ||
      m.cov.sizes() != torch::IntArrayRef({NiqeModel::kDims, NiqeModel::kDims}))
    throw ShapeError("NIQE model must hold a 36-vector and a 36x36 covariance");
}

std::string join_row(const torch::Tensor& row) {
  auto r = row.contiguous().to(torch::kFloat64);
  auto a = r.accessor<double, 1>();
  std::string s;
  for (int64_t i = 0; i < a.size(0); ++i) {
    if (i) s += ' ';
    s += format_double(a[i]);
  }
  return s;
}

std::vector<double> parse_row(const std::string& text, const std::filesystem::path& path) {
  std::istringstream in(text);
  std::vector<double> v;
  std::string tok;
  while (in >> tok) {
    try {
      size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw IoError("bad number '" + tok + "' in " + path.string());
    }
  }
  return v;
}

}  // namespace

torch::Tensor niqe_features(const ImageTensor& image) {
  if (image.height() < kNiqeMinSide || image.width() < kNiqeMinSide)
    throw ShapeError("NIQE needs both sides >= 96, got " + std::to_string(image.height()) + "x" +
                     std::to_string(image.width()));
  torch::NoGradGuard guard;
  auto img = (luma_yiq(image) * 255).round().to(torch::kFloat64);
  const int64_t bs = kNiqeMinSide;
  img = img.index({Slice(), Slice(), Slice(0, img.size(2) / bs * bs), Slice(0, img.size(3) / bs * bs)});

  std::vector<torch::Tensor> per_scale;
  for (int scale : {1, 2}) {
    auto normalized = normalize_with_gauss(img);
    per_scale.push_back(blockproc(normalized, bs / scale, bs / scale));
    if (scale == 1) img = imresize_half(img / 255.0) * 255.0;
  }
  return torch::cat(per_scale, -1).squeeze(0);
}

double niqe(const ImageTensor& image, const NiqeModel& model) {
  check_model(model);
  torch::NoGradGuard guard;
  auto feats = niqe_features(image);
  auto [mu_d, cov_d] = nan_mean_cov(feats);
  auto inv = torch::linalg_pinv((model.cov + cov_d) / 2);
  auto diff = (model.mu - mu_d).unsqueeze(0);
  auto q = torch::matmul(torch::matmul(diff, inv), diff.t()).squeeze();
  return std::sqrt(q.item<double>());
}

double niqe(const ImageTensor& image) { return niqe(image, default_niqe_model()); }

NiqeModel fit_niqe(const std::vector<ImageTensor>& images, std::string label) {
  if (images.empty()) throw ParameterError("fit_niqe needs at least one image");
  std::vector<torch::Tensor> rows;
  for (const auto& im : images) rows.push_back(niqe_features(im));
  auto all = torch::cat(rows, 0);
  auto keep = (~torch::isnan(all).any(1)).nonzero().squeeze(1);
  all = all.index_select(0, keep);
  if (all.size(0) < 2) throw StateError("fit_niqe needs at least two NaN-free blocks");
  NiqeModel m;
  m.label = std::move(label);
  m.mu = all.mean(0);
  m.cov = torch::cov(all.t(), 1);
  return m;
}

void NiqeModel::save(const std::filesystem::path& path) const {
  check_model(*this);
  std::string s = "# NIQE pristine model\nformat = " + std::to_string(kFormatVersion) + "\nlabel = " + label +
                  "\nmu = " + join_row(mu) + "\n";
  for (int64_t i = 0; i < kDims; ++i) s += "cov = " + join_row(cov[i]) + "\n";
  write_text(path, s);
}

NiqeModel NiqeModel::load(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  NiqeModel m;
  std::vector<double> mu, cov;
  int format = -1;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw IoError("malformed line in " + path.string() + ": " + line);
    const auto key = line.substr(0, eq), value = line.substr(eq + 3);
    if (key == "format") format = std::stoi(value);
    else if (key == "label") m.label = value;
    else if (key == "mu") mu = parse_row(value, path);
    else if (key == "cov") {
      auto row = parse_row(value, path);
      cov.insert(cov.end(), row.begin(), row.end());
    } else throw IoError("unknown key '" + key + "' in " + path.string());
  }
  if (format != kFormatVersion)
    throw IoError("unsupported NIQE model format " + std::to_string(format) + " in " + path.string());
  if (mu.size() != static_cast<size_t>(kDims) || cov.size() != static_cast<size_t>(kDims * kDims))
    throw IoError("NIQE model in " + path.string() + " has the wrong dimensions");
  m.mu = torch::tensor(mu, torch::kFloat64);
  m.cov = torch::tensor(cov, torch::kFloat64).view({kDims, kDims});
  return m;
}

std::filesystem::path niqe_model_path(const std::string& override_path) {
  if (!override_path.empty()) return override_path;
  return std::filesystem::path(DGVE_DATA_DIR) / "niqe_pristine_v1.txt";
}

const NiqeModel& default_niqe_model() {
  static const NiqeModel model = NiqeModel::load(niqe_model_path());
  return model;
}

double piqe(const ImageTensor& image) {
  constexpr int64_t N = 16;
  constexpr int64_t window = 6;
  constexpr double activity_threshold = 0.1, impaired_threshold = 0.1;
  torch::NoGradGuard guard;

  auto img = luma_yiq(image);
  const auto peak = img.max();
  // An all-black frame has no active blocks; avoid the 0/0 of the normalisation.
  img = peak.item<float>() > 0 ? torch::round(255 * (img / peak)) : torch::zeros_like(img);

  // Symmetric pad by the remainder (not up to the next multiple), as the reference does.
  const int64_t h = img.size(2), w = img.size(3);
  auto symm = [](int64_t n, int64_t extra) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < n + extra; ++i) {
      int64_t j = i;
      const int64_t period = 2 * n;
      j %= period;
      idx.push_back(j < n ? j : period - 1 - j);
    }
    return torch::tensor(idx, torch::kInt64);
  };
  img = img.index_select(2, symm(h, h % N)).index_select(3, symm(w, w % N));
  if (img.size(2) < N || img.size(3) < N) throw ShapeError("PIQE needs both sides >= 16");

  auto normalized = normalize_with_gauss(img);
  auto blocks = normalized.unfold(2, N, N).unfold(3, N, N).contiguous().view({1, -1, N, N});
  auto block_var = torch::var(blocks, {2, 3}, true);
  auto active = block_var > activity_threshold;

  // Centre-surround deviation. The surround removal mirrors the reference indexing.
  auto sigma = torch::sqrt(block_var);
  const int64_t c1 = N / 2, c2 = c1 + 1;
  auto center = torch::stack({blocks.index({"...", c1 - 1}), blocks.index({"...", c2 - 1})}, 3);
  auto sur = torch::cat({blocks.index({"...", Slice(0, c1 - 1)}), blocks.index({"...", Slice(c1, None)})}, -1);
  sur = torch::cat({sur.index({"...", Slice(0, c2 - 1)}), sur.index({"...", Slice(c2, None)})}, -1);
  auto ratio = torch::nan_to_num(torch::std(center, {2, 3}, true) / torch::std(sur, {2, 3}, true));
  auto beta = torch::abs(sigma - ratio) / torch::max(sigma, ratio);
  auto noise = sigma > 2 * beta;

  auto edge_flat = [&](const torch::Tensor& edge) {
    return (torch::std(edge.unfold(-1, window, 1), -1, true) < impaired_threshold).sum(2);
  };
  auto impaired = (edge_flat(blocks.index({Slice(), Slice(), 0, Slice()})) +
                   edge_flat(blocks.index({Slice(), Slice(), Slice(), N - 1})) +
                   edge_flat(blocks.index({Slice(), Slice(), N - 1, Slice()})) +
                   edge_flat(blocks.index({Slice(), Slice(), Slice(), 0}))) > 0;

  auto whsa = active.to(torch::kFloat32), wndc = impaired.to(torch::kFloat32), wnc = noise.to(torch::kFloat32);
  auto dist = (whsa * wndc * (1 - block_var) + whsa * wnc * block_var).sum(1);
  auto nhsa = active.sum(1);
  auto score = ((dist + 1) / (1 + nhsa)) * 100;
  return score.item<double>();
}

}  // namespace dgve

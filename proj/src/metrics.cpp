#include "dgve/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "dgve/errors.hpp"
#include "dgve/util.hpp"

namespace dgve {
namespace {

namespace F = torch::nn::functional;

void check_pair(const ImageTensor& x, const ImageTensor& y) {
  if (x.empty() || y.empty()) throw ShapeError("metric on an empty image");
  if (x.height() != y.height() || x.width() != y.width())
    throw ShapeError("metric inputs differ in size: " + std::to_string(x.height()) + "x" +
                     std::to_string(x.width()) + " vs " + std::to_string(y.height()) + "x" +
                     std::to_string(y.width()));
}

torch::Tensor luma601(const ImageTensor& im) {
  auto d = im.data().to(torch::kFloat64);
  return (0.299 * d[0] + 0.587 * d[1] + 0.114 * d[2]).unsqueeze(0).unsqueeze(0);
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

std::optional<double> mean_of(const std::vector<ImageScores>& s, std::optional<double> ImageScores::*field) {
  double sum = 0;
  int64_t n = 0;
  for (const auto& i : s)
    if (i.*field) {
      sum += *(i.*field);
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / n;
}

// Sort key of each value with tied values sharing their mean rank.
std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = (i + j) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) r[order[k]] = rank;
    i = j + 1;
  }
  return r;
}

}  // namespace

double psnr(const ImageTensor& x, const ImageTensor& y) {
  check_pair(x, y);
  const double mse = (x.data().to(torch::kFloat64) - y.data().to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageTensor& x, const ImageTensor& y) {
  check_pair(x, y);
  constexpr int64_t win = 11;
  if (x.height() < win || x.width() < win) throw ShapeError("SSIM needs both sides >= 11");
  torch::NoGradGuard guard;
  auto g = ops::gaussian_kernel1d(1.5, torch::kFloat64);
  // Radius ceil(3 sigma) = 5 gives the 11-tap window.
  auto k = torch::outer(g, g).view({1, 1, win, win});
  auto a = luma601(x), b = luma601(y);
  auto filt = [&](const torch::Tensor& t) { return F::conv2d(t, k); };
  auto mx = filt(a), my = filt(b);
  auto vx = filt(a * a) - mx * mx;
  auto vy = filt(b * b) - my * my;
  auto cxy = filt(a * b) - mx * my;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  auto map = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  return map.mean().item<double>();
}

MetricReport::Aggregate MetricReport::aggregate() const {
  Aggregate a;
  a.psnr = mean_of(images, &ImageScores::psnr);
  a.ssim = mean_of(images, &ImageScores::ssim);
  a.niqe = mean_of(images, &ImageScores::niqe);
  if (images.empty()) return a;
  double piqe_sum = 0, ms_sum = 0;
  for (const auto& i : images) {
    piqe_sum += i.piqe;
    ms_sum += i.ms;
  }
  const double n = static_cast<double>(images.size());
  a.piqe = piqe_sum / n;
  a.ms_mean = ms_sum / n;
  double var = 0;
  for (const auto& i : images) var += (i.ms - a.ms_mean) * (i.ms - a.ms_mean);
  a.ms_std = std::sqrt(var / n);
  return a;
}

std::string MetricReport::to_csv(bool include_ms) const {
  std::ostringstream o;
  o << "name,psnr_db,ssim,niqe,piqe" << (include_ms ? ",ms" : "") << "\n";
  for (const auto& i : images) {
    o << i.name << "," << opt(i.psnr) << "," << opt(i.ssim) << "," << opt(i.niqe) << "," << format_double(i.piqe);
    if (include_ms) o << "," << format_double(i.ms);
    o << "\n";
  }
  const auto a = aggregate();
  o << "mean," << opt(a.psnr) << "," << opt(a.ssim) << "," << opt(a.niqe) << "," << format_double(a.piqe);
  if (include_ms) o << "," << format_double(a.ms_mean);
  o << "\n";
  return o.str();
}

std::string MetricReport::summary(bool include_ms) const {
  const auto a = aggregate();
  std::ostringstream o;
  o << "images: " << images.size() << "\n"
    << "PSNR (dB): " << opt(a.psnr) << "\n"
    << "SSIM: " << opt(a.ssim) << "\n"
    << "NIQE: " << opt(a.niqe) << "  (relative to the shipped pristine model, not comparable across models)\n"
    << "PIQE: " << format_double(a.piqe) << "\n"
    << "params: " << params << "\n"
    << "GFLOPs/frame: " << format_double(gflops) << "\n";
  if (include_ms) o << "runtime (ms): mean " << format_double(a.ms_mean) << ", std " << format_double(a.ms_std) << "\n";
  return o.str();
}

std::string ProjectionResult::to_csv() const {
  std::ostringstream o;
  o << "# explained_variance_ratio=" << format_double(explained[0]) << "," << format_double(explained[1]) << "\n";
  o << "index,kind,level,pc1,pc2\n";
  for (size_t i = 0; i < coords.size(); ++i) {
    const auto& l = i < labels.size() ? labels[i] : ProjectionLabel{};
    o << i << "," << l.kind << "," << l.level << "," << format_double(coords[i][0]) << ","
      << format_double(coords[i][1]) << "\n";
  }
  return o.str();
}

ProjectionResult pca_project(const torch::Tensor& vectors, std::vector<ProjectionLabel> labels) {
  if (vectors.dim() != 2) throw ShapeError("pca_project expects a [N, D] matrix");
  const int64_t n = vectors.size(0), d = vectors.size(1);
  if (n < 3) throw ParameterError("pca_project needs at least 3 vectors, got " + std::to_string(n));
  if (d < 1) throw ShapeError("pca_project needs at least one dimension");
  if (!labels.empty() && static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("pca_project: label count differs from vector count");
  torch::NoGradGuard guard;
  auto x = vectors.detach().to(torch::kFloat64);
  if (!torch::isfinite(x).all().item<bool>()) throw NumericError("pca_project input has non-finite values");
  x = x - x.mean(0, true);
  auto cov = torch::matmul(x.t(), x) / static_cast<double>(n - 1);
  auto [evals, evecs] = torch::linalg_eigh(cov);  // ascending

  ProjectionResult r;
  r.labels = std::move(labels);
  r.components = torch::zeros({2, d}, torch::kFloat64);
  const double total = evals.clamp_min(0).sum().item<double>();
  for (int64_t c = 0; c < std::min<int64_t>(2, d); ++c) {
    auto v = evecs.select(1, d - 1 - c).clone();
    const auto big = v.abs().argmax().item<int64_t>();
    if (v[big].item<double>() < 0) v = -v;
    r.components[c] = v;
    const double lambda = std::max(0.0, evals[d - 1 - c].item<double>());
    r.explained[c] = total > 0 ? lambda / total : 0.0;
  }
  auto proj = torch::matmul(x, r.components.t()).contiguous();
  if (total <= 0) proj.zero_();
  auto acc = proj.accessor<double, 2>();
  r.coords.resize(n);
  for (int64_t i = 0; i < n; ++i) r.coords[i] = {acc[i][0], acc[i][1]};
  return r;
}

double silhouette(const std::vector<std::array<double, 2>>& points, const std::vector<std::string>& labels) {
  if (points.size() != labels.size()) throw ShapeError("silhouette: label count differs from point count");
  std::map<std::string, std::vector<size_t>> groups;
  for (size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  if (groups.size() < 2) throw ParameterError("silhouette needs at least two clusters");
  auto dist = [&](size_t a, size_t b) { return std::hypot(points[a][0] - points[b][0], points[a][1] - points[b][1]); };
  double total = 0;
  for (size_t i = 0; i < points.size(); ++i) {
    const auto& own = groups[labels[i]];
    if (own.size() < 2) continue;
    double a = 0;
    for (size_t j : own) a += dist(i, j);
    a /= static_cast<double>(own.size() - 1);
    double b = INFINITY;
    for (const auto& [name, members] : groups) {
      if (name == labels[i]) continue;
      double s = 0;
      for (size_t j : members) s += dist(i, j);
      b = std::min(b, s / static_cast<double>(members.size()));
    }
    const double m = std::max(a, b);
    total += m > 0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(points.size());
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("spearman: inputs differ in length");
  if (x.size() < 2) throw ParameterError("spearman needs at least two pairs");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double level_trend(const torch::Tensor& vectors, const std::vector<int64_t>& level_index) {
  if (static_cast<int64_t>(level_index.size()) != vectors.size(0))
    throw ShapeError("level_trend: one level per vector required");
  const auto p = pca_project(vectors, {});
  std::map<int64_t, std::pair<double, int64_t>> acc;
  for (size_t i = 0; i < level_index.size(); ++i) {
    auto& a = acc[level_index[i]];
    a.first += p.coords[i][0];
    ++a.second;
  }
  if (acc.size() < 2) throw ParameterError("level_trend needs at least two levels");
  std::vector<double> lv, centroid;
  for (const auto& [l, a] : acc) {
    lv.push_back(static_cast<double>(l));
    centroid.push_back(a.first / static_cast<double>(a.second));
  }
  return spearman(lv, centroid);
}

ImageTensor render_scatter(const ProjectionResult& p, int64_t side) {
  if (side < 32) throw ParameterError("scatter side must be >= 32");
  static const float palette[][3] = {{0.89f, 0.10f, 0.11f}, {0.22f, 0.49f, 0.72f}, {0.30f, 0.69f, 0.29f},
                                     {0.60f, 0.31f, 0.64f}, {1.00f, 0.50f, 0.00f}, {0.65f, 0.34f, 0.16f}};
  std::map<std::string, size_t> kind_colour;
  std::vector<std::string> levels;
  for (const auto& l : p.labels) {
    kind_colour.emplace(l.kind, 0);
    levels.push_back(l.level);
  }
  size_t next = 0;
  for (auto& [k, c] : kind_colour) c = next++ % 6;
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

  auto img = torch::ones({3, side, side}, torch::kFloat32);
  auto acc = img.accessor<float, 3>();
  double lo[2] = {INFINITY, INFINITY}, hi[2] = {-INFINITY, -INFINITY};
  for (const auto& c : p.coords)
    for (int a = 0; a < 2; ++a) {
      lo[a] = std::min(lo[a], c[a]);
      hi[a] = std::max(hi[a], c[a]);
    }
  const double margin = side * 0.06;
  auto to_px = [&](double v, int a) {
    const double span = hi[a] - lo[a];
    const double t = span > 0 ? (v - lo[a]) / span : 0.5;
    return margin + t * (side - 1 - 2 * margin);
  };
  // Axes through the origin when it is in view.
  for (int64_t i = 0; i < side; ++i) {
    const double ox = to_px(0.0, 0), oy = side - 1 - to_px(0.0, 1);
    if (ox >= 0 && ox < side)
      for (int ch = 0; ch < 3; ++ch) acc[ch][i][static_cast<int64_t>(ox)] = 0.8f;
    if (oy >= 0 && oy < side)
      for (int ch = 0; ch < 3; ++ch) acc[ch][static_cast<int64_t>(oy)][i] = 0.8f;
  }
  for (size_t i = 0; i < p.coords.size(); ++i) {
    const auto label = i < p.labels.size() ? p.labels[i] : ProjectionLabel{};
    const float* col = palette[kind_colour.count(label.kind) ? kind_colour[label.kind] : 0];
    const auto lvl = std::find(levels.begin(), levels.end(), label.level) - levels.begin();
    const double r = 2.0 + 1.5 * static_cast<double>(lvl);
    const double cx = to_px(p.coords[i][0], 0), cy = side - 1 - to_px(p.coords[i][1], 1);
    for (int64_t y = static_cast<int64_t>(cy - r); y <= static_cast<int64_t>(cy + r); ++y)
      for (int64_t x = static_cast<int64_t>(cx - r); x <= static_cast<int64_t>(cx + r); ++x) {
        if (x < 0 || y < 0 || x >= side || y >= side) continue;
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) > r * r) continue;
        for (int ch = 0; ch < 3; ++ch) acc[ch][y][x] = col[ch];
      }
  }
  return ImageTensor(img);
}

}  // namespace dgve

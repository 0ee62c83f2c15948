#include "dgve/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "dgve/errors.hpp"
#include "dgve/util.hpp"

namespace dgve {

namespace fs = std::filesystem;

std::string to_string(ItemKind k) { return k == ItemKind::Image ? "image" : "clip"; }

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ParameterError("unknown split '" + name + "' (expected train, val or test)");
}

namespace {

ItemKind parse_item_kind(const std::string& name) {
  if (name == "image") return ItemKind::Image;
  if (name == "clip") return ItemKind::Clip;
  throw ParameterError("unknown item kind '" + name + "'");
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, '\t')) out.push_back(tok);
  return out;
}

}  // namespace

std::vector<CorpusItem> CorpusManifest::select(Split split, ItemKind kind) const {
  std::vector<CorpusItem> out;
  for (const auto& it : items)
    if (it.split == split && it.kind == kind) out.push_back(it);
  return out;
}

int64_t CorpusManifest::count(Split split, ItemKind kind) const {
  return std::count_if(items.begin(), items.end(),
                       [&](const CorpusItem& it) { return it.split == split && it.kind == kind; });
}

std::string CorpusManifest::to_text() const {
  std::ostringstream ss;
  for (const auto& it : items)
    ss << it.path << '\t' << to_string(it.kind) << '\t' << to_string(it.split) << '\t' << it.hash << '\n';
  return ss.str();
}

CorpusManifest CorpusManifest::from_text(const std::string& text, const fs::path& root) {
  CorpusManifest m;
  m.root = root;
  std::istringstream in(text);
  std::string line;
  int64_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    auto f = split_tabs(line);
    if (f.size() != 4) throw IoError("manifest line " + std::to_string(n) + ": expected 4 tab-separated fields");
    m.items.push_back({f[0], parse_item_kind(f[1]), parse_split(f[2]), f[3]});
  }
  return m;
}

void CorpusManifest::save(const fs::path& file) const { write_text(file, to_text()); }

CorpusManifest CorpusManifest::load(const fs::path& file, const fs::path& root) {
  return from_text(read_text(file), root);
}

std::vector<int64_t> largest_remainder(int64_t n, const std::vector<double>& ratios) {
  if (n < 0) throw ParameterError("largest_remainder: n must be >= 0");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ParameterError("split ratios must be finite and >= 0");
    total += r;
  }
  if (!(total > 0.0)) throw ParameterError("split ratios must not all be zero");
  std::vector<int64_t> counts(ratios.size());
  std::vector<double> rem(ratios.size());
  int64_t used = 0;
  for (size_t i = 0; i < ratios.size(); ++i) {
    const double q = static_cast<double>(n) * ratios[i] / total;
    counts[i] = static_cast<int64_t>(std::floor(q + 1e-9));
    rem[i] = q - static_cast<double>(counts[i]);
    used += counts[i];
  }
  std::vector<size_t> order(ratios.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return rem[a] > rem[b] + 1e-12; });
  for (size_t k = 0; used < n; ++k, ++used) ++counts[order[k % order.size()]];
  return counts;
}

namespace {

std::string clip_hash(const fs::path& dir) {
  std::string joined;
  for (int64_t i = 0;; ++i) {
    const auto p = dir / frame_filename(i);
    if (!fs::exists(p)) break;
    joined += sha256_file(p);
  }
  if (joined.empty()) throw IoError("clip without frames: " + dir.string());
  return sha256_hex(joined);
}

}  // namespace

CorpusManifest build_manifest(const fs::path& root, const std::array<double, 3>& ratios, uint64_t seed) {
  if (!fs::is_directory(root)) throw IoError("corpus root is not a directory: " + root.string());
  CorpusManifest m;
  m.root = root;
  std::vector<fs::path> clip_dirs, images;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_directory() && fs::exists(it->path() / "video.txt")) {
      clip_dirs.push_back(it->path());
      it.disable_recursion_pending();
    } else if (it->is_regular_file() && it->path().extension() == ".png") {
      images.push_back(it->path());
    }
  }
  std::sort(clip_dirs.begin(), clip_dirs.end());
  std::sort(images.begin(), images.end());
  const size_t total = clip_dirs.size() + images.size();
  if (total == 0) throw StateError("empty corpus: no PNG images or clip directories under " + root.string());
  if (total < 10) throw StateError("corpus has " + std::to_string(total) + " items, at least 10 are required");
  if (!clip_dirs.empty()) log_warning("clips are split at clip level; clips of one patient may land in several splits");

  const std::vector<double> r(ratios.begin(), ratios.end());
  auto assign = [&](const std::vector<fs::path>& paths, ItemKind kind) {
    if (paths.empty()) return;
    std::vector<CorpusItem> items;
    for (const auto& p : paths)
      items.push_back({fs::relative(p, root).generic_string(), kind, Split::Train,
                       kind == ItemKind::Clip ? clip_hash(p) : sha256_file(p)});
    // Duplicate content moves as one unit.
    std::map<std::string, std::vector<size_t>> by_hash;
    for (size_t i = 0; i < items.size(); ++i) by_hash[items[i].hash].push_back(i);
    std::vector<std::vector<size_t>> groups;
    for (auto& [h, idx] : by_hash) groups.push_back(idx);
    const auto order = SeededRng(derive_seed({seed, static_cast<uint64_t>(kind)})).permutation(
        static_cast<int64_t>(groups.size()));
    const auto target = largest_remainder(static_cast<int64_t>(items.size()), r);
    std::array<int64_t, 3> filled{0, 0, 0};
    for (int64_t gi : order) {
      const auto& g = groups[static_cast<size_t>(gi)];
      const int64_t size = static_cast<int64_t>(g.size());
      int64_t pick = -1;
      for (int64_t s = 0; s < 3 && pick < 0; ++s)
        if (filled[s] + size <= target[static_cast<size_t>(s)]) pick = s;
      if (pick < 0) {
        pick = 0;
        for (int64_t s = 1; s < 3; ++s)
          if (target[s] - filled[s] > target[pick] - filled[pick]) pick = s;
      }
      filled[pick] += size;
      for (size_t i : g) items[i].split = static_cast<Split>(pick);
    }
    for (auto& it : items) m.items.push_back(std::move(it));
  };
  assign(images, ItemKind::Image);
  assign(clip_dirs, ItemKind::Clip);
  return m;
}

// ---------------------------------------------------------------------------
// Paired samples

std::string PairProvenance::to_key_values() const {
  std::ostringstream ss;
  ss << "source = " << source << "\n"
     << "top = " << top << "\n"
     << "left = " << left << "\n"
     << "patch = " << patch << "\n"
     << "level = " << to_string(level) << "\n"
     << "seed = " << seed << "\n"
     << params.to_key_values();
  return ss.str();
}

PairProvenance PairProvenance::from_key_values(const std::string& text) {
  PairProvenance p;
  std::istringstream in(text);
  std::string line;
  std::map<std::string, std::string> kv;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](const std::string& s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  for (const char* k : {"source", "top", "left", "patch", "level", "seed"})
    if (!kv.count(k)) throw ParameterError(std::string("provenance lacks '") + k + "'");
  p.source = kv["source"];
  p.top = std::stoll(kv["top"]);
  p.left = std::stoll(kv["left"]);
  p.patch = std::stoll(kv["patch"]);
  p.level = parse_level(kv["level"]);
  p.seed = std::stoull(kv["seed"]);
  p.params = DegradationParameters::from_key_values(text);
  return p;
}

void for_each_pair(const std::vector<NamedImage>& sources, const PairSpec& spec,
                   const std::function<void(PairedSample&&)>& sink) {
  if (spec.count <= 0) return;
  if (spec.kinds.empty() || spec.levels.empty()) throw ParameterError("pairs: kinds and levels must be non-empty");
  if (spec.scale < 1 || spec.patch % spec.scale) throw ParameterError("pairs: patch must be a multiple of scale");
  std::vector<size_t> usable;
  for (size_t i = 0; i < sources.size(); ++i)
    if (sources[i].image.height() >= spec.patch && sources[i].image.width() >= spec.patch) usable.push_back(i);
  if (usable.empty()) throw StateError("pairs: no HQ image is at least " + std::to_string(spec.patch) + " pixels wide");
  for (int64_t i = 0; i < spec.count; ++i) {
    const uint64_t ui = static_cast<uint64_t>(i);
    SeededRng rng(derive_seed({spec.seed, ui}));
    const auto& src = sources[usable[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(usable.size()) - 1))]];
    const auto kind = spec.kinds[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(spec.kinds.size()) - 1))];
    PairProvenance p;
    p.level = spec.levels[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(spec.levels.size()) - 1))];
    p.source = src.path;
    p.patch = spec.patch;
    p.top = rng.uniform_int(0, src.image.height() - spec.patch);
    p.left = rng.uniform_int(0, src.image.width() - spec.patch);
    p.seed = derive_seed({spec.seed, ui, 2});
    p.params = sample_parameters(kind, p.level, derive_seed({spec.seed, ui, 1}));
    p.params.scale = spec.scale;
    PairedSample s;
    s.x_h = crop(src.image, p.top, p.left, p.patch, p.patch);
    s.x_l = apply_degradation(s.x_h, p.params, p.seed);
    s.provenance = std::move(p);
    sink(std::move(s));
  }
}

std::vector<PairedSample> make_pairs(const std::vector<NamedImage>& sources, const PairSpec& spec) {
  std::vector<PairedSample> out;
  out.reserve(static_cast<size_t>(std::max<int64_t>(0, spec.count)));
  for_each_pair(sources, spec, [&](PairedSample&& s) { out.push_back(std::move(s)); });
  return out;
}

ImageTensor reproduce_pair(const PairProvenance& p, const ImageTensor& source) {
  return apply_degradation(crop(source, p.top, p.left, p.patch, p.patch), p.params, p.seed);
}

std::vector<NamedImage> load_images(const CorpusManifest& m, Split split) {
  std::vector<NamedImage> out;
  for (const auto& it : m.select(split, ItemKind::Image)) out.push_back({it.path, load_png(m.root / it.path)});
  return out;
}

std::vector<VideoSequence> load_clips(const CorpusManifest& m, Split split) {
  std::vector<VideoSequence> out;
  for (const auto& it : m.select(split, ItemKind::Clip)) out.push_back(load_video(m.root / it.path));
  return out;
}

VideoSequence sample_clip(const std::vector<VideoSequence>& clips, int64_t length, uint64_t seed,
                          int64_t* clip_index, int64_t* offset) {
  if (length < 1) throw ParameterError("clip length must be >= 1");
  std::vector<size_t> eligible;
  for (size_t i = 0; i < clips.size(); ++i)
    if (static_cast<int64_t>(clips[i].frames.size()) >= length) eligible.push_back(i);
  if (eligible.empty()) throw StateError("no clip has at least " + std::to_string(length) + " frames");
  SeededRng rng(seed);
  const size_t ci = eligible[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(eligible.size()) - 1))];
  const auto& clip = clips[ci];
  const int64_t start = rng.uniform_int(0, static_cast<int64_t>(clip.frames.size()) - length);
  VideoSequence v;
  v.frame_rate = clip.frame_rate;
  v.frames.assign(clip.frames.begin() + start, clip.frames.begin() + start + length);
  if (clip_index) *clip_index = static_cast<int64_t>(ci);
  if (offset) *offset = start;
  return v;
}

// ---------------------------------------------------------------------------
// Synthetic content

namespace {

torch::Tensor smooth_noise(int64_t h, int64_t w, double sigma, at::Generator& gen) {
  auto n = ops::gaussian_blur(torch::randn({1, 1, h, w}, gen, torch::kFloat64), sigma)[0][0];
  return n / n.std().clamp_min(1e-12);
}

}  // namespace

ImageTensor synthetic_scene(int64_t height, int64_t width, uint64_t seed) {
  if (height < ImageTensor::kMinSide || width < ImageTensor::kMinSide)
    throw ShapeError("synthetic_scene: side below " + std::to_string(ImageTensor::kMinSide));
  SeededRng rng(seed);
  auto gen = make_generator(derive_seed({seed, 1}));
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto ys = torch::linspace(0.0, 1.0, height, opts).view({height, 1}).expand({height, width});
  auto xs = torch::linspace(0.0, 1.0, width, opts).view({1, width}).expand({height, width});
  const double aspect = static_cast<double>(width) / static_cast<double>(height);

  // Tissue albedo with slow color variation.
  const double base_r = rng.uniform(0.65, 0.85), base_g = rng.uniform(0.28, 0.42), base_b = rng.uniform(0.22, 0.36);
  auto mottling = smooth_noise(height, width, std::max(height, width) / 10.0, gen);
  auto r = base_r + 0.06 * mottling;
  auto g = base_g + 0.05 * mottling;
  auto b = base_b + 0.04 * mottling;

  // Soft folds and blobs.
  const int64_t blobs = rng.uniform_int(4, 9);
  auto shade = torch::zeros({height, width}, opts);
  for (int64_t i = 0; i < blobs; ++i) {
    const double cy = rng.uniform(), cx = rng.uniform(), s = rng.uniform(0.05, 0.2), a = rng.uniform(-0.25, 0.2);
    shade += a * torch::exp(-((ys - cy).square() + ((xs - cx) * aspect).square()) / (2 * s * s));
  }

  // Vessels: thin dark curves from the level sets of a warped sinusoid.
  auto vessel = torch::zeros({height, width}, opts);
  const int64_t nv = rng.uniform_int(3, 6);
  for (int64_t i = 0; i < nv; ++i) {
    const double th = rng.uniform(0.0, M_PI), f = rng.uniform(2.0, 6.0), ph = rng.uniform(0.0, 2 * M_PI);
    const double wf = rng.uniform(2.0, 8.0), wa = rng.uniform(0.02, 0.08), width_px = rng.uniform(0.8, 2.2);
    auto u = std::cos(th) * xs * aspect + std::sin(th) * ys;
    auto v = -std::sin(th) * xs * aspect + std::cos(th) * ys;
    auto phase = f * (v + wa * torch::sin(wf * 2 * M_PI * u + ph)) + ph;
    auto d = torch::sin(phase).abs() / f * static_cast<double>(height) / (2 * M_PI);  // ~pixels to the curve
    vessel = torch::maximum(vessel, torch::exp(-(d / width_px).square()) * rng.uniform(0.4, 0.9));
  }

  // Illumination falloff from the scope light.
  const double ly = rng.uniform(0.3, 0.7), lx = rng.uniform(0.3, 0.7), lr = rng.uniform(0.6, 1.1);
  auto light = (1.0 - ((ys - ly).square() + ((xs - lx) * aspect).square()) / (lr * lr)).clamp(0.25, 1.0);

  auto texture = smooth_noise(height, width, 0.8, gen) * 0.03;
  auto img = torch::stack({r + shade - 0.35 * vessel, g + shade * 0.6 - 0.25 * vessel, b + shade * 0.5 - 0.2 * vessel});
  img = img * light.unsqueeze(0) + texture.unsqueeze(0);

  // Specular highlights.
  const int64_t spec = rng.uniform_int(1, 4);
  for (int64_t i = 0; i < spec; ++i) {
    const double cy = rng.uniform(), cx = rng.uniform(), s = rng.uniform(0.005, 0.02);
    img += 0.8 * torch::exp(-((ys - cy).square() + ((xs - cx) * aspect).square()) / (2 * s * s)).unsqueeze(0);
  }
  return ImageTensor::clamped(img.to(torch::kFloat32));
}

VideoSequence synthetic_clip(int64_t height, int64_t width, int64_t frames, uint64_t seed) {
  if (frames < 1) throw ParameterError("synthetic_clip: frames must be >= 1");
  SeededRng rng(seed);
  const double speed = rng.uniform(0.5, 1.5), angle = rng.uniform(0.0, 2 * M_PI);
  const double dy = std::sin(angle) * speed, dx = std::cos(angle) * speed;
  const int64_t span_y = static_cast<int64_t>(std::ceil(std::abs(dy) * (frames - 1))) + 1;
  const int64_t span_x = static_cast<int64_t>(std::ceil(std::abs(dx) * (frames - 1))) + 1;
  auto scene = synthetic_scene(height + span_y, width + span_x, derive_seed({seed, 1}));
  const double y0 = dy < 0 ? span_y - 1 : 0, x0 = dx < 0 ? span_x - 1 : 0;
  VideoSequence v;
  for (int64_t t = 0; t < frames; ++t) {
    const auto top = static_cast<int64_t>(std::lround(y0 + dy * t));
    const auto left = static_cast<int64_t>(std::lround(x0 + dx * t));
    v.frames.push_back(crop(scene, std::clamp<int64_t>(top, 0, span_y - 1), std::clamp<int64_t>(left, 0, span_x - 1),
                            height, width));
  }
  return v;
}

namespace {

torch::Tensor pad_kernel(const torch::Tensor& k, int64_t size) {
  if (!k.defined()) {
    auto d = torch::zeros({size, size}, torch::kFloat64);
    d[size / 2][size / 2] = 1.0;
    return d;
  }
  const int64_t p = (size - k.size(0)) / 2;
  return torch::constant_pad_nd(k.to(torch::kFloat64), {p, p, p, p});
}

}  // namespace

VideoSequence degrade_clip(const VideoSequence& clip, DegradationKind kind, DegradationLevel level, int64_t scale,
                           uint64_t seed) {
  clip.validate();
  if (clip.frames.empty()) throw ParameterError("degrade_clip: empty clip");
  const auto a = sample_parameters(kind, level, derive_seed({seed, 0}));
  const auto b = sample_parameters(kind, level, derive_seed({seed, 1}));
  const int64_t H = clip.frames[0].height(), W = clip.frames[0].width();
  const int64_t F = static_cast<int64_t>(clip.frames.size());
  auto map_pair = [&](const SpatialMap& x, const SpatialMap& y) {
    return std::pair{x.realize(H, W, torch::kFloat64), y.realize(H, W, torch::kFloat64)};
  };
  const auto noise = map_pair(a.noise, b.noise);
  const auto illum = map_pair(a.illumination, b.illumination);
  const auto trans = map_pair(a.transmission, b.transmission);
  torch::Tensor ka, kb;
  if (a.blur_kernel.defined() || b.blur_kernel.defined()) {
    const int64_t ks = std::max(a.blur_kernel.defined() ? a.blur_kernel.size(0) : 1,
                                b.blur_kernel.defined() ? b.blur_kernel.size(0) : 1);
    ka = pad_kernel(a.blur_kernel, ks);
    kb = pad_kernel(b.blur_kernel, ks);
  }
  VideoSequence out;
  out.frame_rate = clip.frame_rate;
  for (int64_t t = 0; t < F; ++t) {
    const double u = F > 1 ? static_cast<double>(t) / static_cast<double>(F - 1) : 0.0;
    auto lerp = [u](double x, double y) { return (1 - u) * x + u * y; };
    auto lerp_map = [u](const std::pair<torch::Tensor, torch::Tensor>& m) {
      return SpatialMap::from_tensor(((1 - u) * m.first + u * m.second).to(torch::kFloat32));
    };
    DegradationParameters p;
    p.kind = kind;
    p.scale = scale;
    p.noise = lerp_map(noise);
    p.illumination = lerp_map(illum);
    p.transmission = lerp_map(trans);
    if (ka.defined()) {
      auto k = (1 - u) * ka + u * kb;
      p.blur_kernel = (k / k.sum()).to(torch::kFloat32);
    }
    p.airlight.clear();
    const size_t na = std::max(a.airlight.size(), b.airlight.size());
    for (size_t c = 0; c < na; ++c)
      p.airlight.push_back(lerp(a.airlight[std::min(c, a.airlight.size() - 1)],
                                b.airlight[std::min(c, b.airlight.size() - 1)]));
    p.alpha = lerp(a.alpha, b.alpha);
    p.beta = lerp(a.beta, b.beta);
    p.gamma = lerp(a.gamma, b.gamma);
    out.frames.push_back(apply_degradation(clip.frames[static_cast<size_t>(t)], p, derive_seed({seed, 2, static_cast<uint64_t>(t)})));
  }
  return out;
}

}  // namespace dgve

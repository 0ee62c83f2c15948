#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "dgve/datasets.hpp"
#include "dgve/errors.hpp"
#include "dgve/flops.hpp"
#include "dgve/metrics.hpp"
#include "dgve/training.hpp"
#include "dgve/util.hpp"
#include "dgve/video.hpp"

namespace dgve::cli {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// Stream tags mixed into the global seed so each command draws independent data.
enum : uint64_t { kTagSynthImage = 0x51, kTagSynthClip, kTagPairs, kTagClips, kTagViz };

fs::path out_dir(const RunConfig& c) { return fs::path(c.out_dir); }

void prepare_out(const RunConfig& c) {
  fs::create_directories(out_dir(c));
  write_text(out_dir(c) / "config.txt", to_key_values(c));
}

const std::string& need(const std::string& value, const char* key) {
  if (value.empty()) throw ParameterError(std::string("--") + key + " is required for this command");
  return value;
}

ModelBundle load_bundle(const RunConfig& c) {
  if (c.checkpoint.empty()) {
    log_warning("no --checkpoint given; using freshly initialized weights");
    return ModelBundle(c.train.arch, c.train.seed);
  }
  return ModelBundle::load(c.checkpoint);
}

// The checkpoint's architecture wins over the configured one.
TrainConfig train_config_for(const RunConfig& c, const ModelBundle& b) {
  TrainConfig t = c.train;
  t.arch = b.arch;
  return t;
}

CorpusManifest corpus(const RunConfig& c) {
  auto m = build_manifest(need(c.data_dir, "data-dir"), c.split_ratios, c.train.seed);
  m.save(out_dir(c) / "manifest.tsv");
  return m;
}

std::vector<ImageTensor> images_only(const std::vector<NamedImage>& v) {
  std::vector<ImageTensor> out;
  for (const auto& n : v) out.push_back(n.image);
  return out;
}

PairSpec pair_spec(const RunConfig& c, int64_t count, uint64_t stream) {
  PairSpec s;
  s.kinds = c.kinds;
  s.levels = c.levels;
  s.count = count;
  s.patch = c.patch;
  s.scale = c.train.scale;
  s.seed = derive_seed({c.train.seed, kTagPairs, stream});
  return s;
}

std::vector<fs::path> list_pngs(const fs::path& p) {
  if (fs::is_regular_file(p)) return {p};
  if (!fs::is_directory(p)) throw IoError("no such file or directory: " + p.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no .png files in " + p.string());
  return out;
}

// Degraded clips of one split; kind and level cycle over the configured lists.
std::vector<VideoSequence> degraded_clips(const RunConfig& c, const CorpusManifest& m, Split split,
                                          std::vector<std::string>* names = nullptr) {
  const auto items = m.select(split, ItemKind::Clip);
  std::vector<VideoSequence> out;
  for (size_t j = 0; j < items.size(); ++j) {
    const auto kind = c.kinds[j % c.kinds.size()];
    const auto level = c.levels[(j / c.kinds.size()) % c.levels.size()];
    auto clip = load_video(m.root / items[j].path);
    out.push_back(degrade_clip(clip, kind, level, c.train.scale,
                               derive_seed({c.train.seed, kTagClips, static_cast<uint64_t>(split), j})));
    if (names) names->push_back(items[j].path + "\t" + to_string(kind) + "\t" + to_string(level));
  }
  return out;
}

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void report_stage(const StageResult& r, const char* name) {
  std::printf("%s: %lld epochs, %lld steps/epoch%s", name, static_cast<long long>(r.epochs_run),
              static_cast<long long>(r.steps_per_epoch), r.completed ? "" : " (stopped early)");
  if (!r.losses.empty()) std::printf(", final loss %s", format_double(r.losses.back()).c_str());
  std::printf("\n");
}

// --- commands ---------------------------------------------------------------

void cmd_synth(const RunConfig& c) {
  prepare_out(c);
  const auto dir = out_dir(c);
  for (int64_t i = 0; i < c.synth_count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04lld.png", static_cast<long long>(i));
    save_png(synthetic_scene(c.synth_size, c.synth_size, derive_seed({c.train.seed, kTagSynthImage, static_cast<uint64_t>(i)})),
             dir / "images" / name);
  }
  for (int64_t i = 0; i < c.synth_clips; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%04lld", static_cast<long long>(i));
    save_video(synthetic_clip(c.synth_clip_size, c.synth_clip_size, c.synth_frames,
                              derive_seed({c.train.seed, kTagSynthClip, static_cast<uint64_t>(i)})),
               dir / "clips" / name);
  }
  std::printf("wrote %lld images and %lld clips to %s\n", static_cast<long long>(c.synth_count),
              static_cast<long long>(c.synth_clips), dir.string().c_str());
}

void cmd_degrade(const RunConfig& c) {
  prepare_out(c);
  const auto m = corpus(c);
  const auto counts = largest_remainder(c.pairs, {c.split_ratios.begin(), c.split_ratios.end()});
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    const auto sdir = out_dir(c) / to_string(split);
    const auto sources = load_images(m, split);
    const int64_t count = counts[static_cast<size_t>(split)];
    if (!sources.empty() && count > 0) {
      fs::create_directories(sdir / "hq");
      fs::create_directories(sdir / "lq");
      std::string prov;
      int64_t i = 0;
      for_each_pair(sources, pair_spec(c, count, static_cast<uint64_t>(split)), [&](PairedSample&& s) {
        char name[32];
        std::snprintf(name, sizeof name, "%05lld.png", static_cast<long long>(i));
        save_png(s.x_h, sdir / "hq" / name);
        save_png(s.x_l, sdir / "lq" / name);
        prov += name + std::string("\t") + s.provenance.to_key_values() + "\n";
        ++i;
      });
      write_text(sdir / "pairs.txt", prov);
    }
    std::vector<std::string> names;
    auto clips = degraded_clips(c, m, split, &names);
    std::string listing;
    for (size_t j = 0; j < clips.size(); ++j) {
      char name[32];
      std::snprintf(name, sizeof name, "clip_%04zu", j);
      save_video(clips[j], sdir / "clips" / name);
      listing += std::string(name) + "\t" + names[j] + "\n";
    }
    if (!clips.empty()) write_text(sdir / "clips.txt", listing);
  }
  write_hash_manifest(out_dir(c));
  std::printf("degraded corpus written to %s\n", out_dir(c).string().c_str());
}

void cmd_pretrain_dam(const RunConfig& c) {
  prepare_out(c);
  const auto m = corpus(c);
  auto bundle = c.checkpoint.empty() ? ModelBundle(c.train.arch, c.train.seed) : ModelBundle::load(c.checkpoint);
  const auto cfg = train_config_for(c, bundle);
  const auto images = images_only(load_images(m, Split::Train));
  const auto r = run_stage1(cfg, images, bundle, {out_dir(c), c.resume, -1, {}});
  bundle.save(out_dir(c) / "model.ckpt");
  report_stage(r, "stage 1");
}

void cmd_train(const RunConfig& c) {
  prepare_out(c);
  const auto m = corpus(c);
  auto bundle = load_bundle(c);
  const auto cfg = train_config_for(c, bundle);
  GanData data;
  for_each_pair(load_images(m, Split::Train), pair_spec(c, c.pairs, 0), [&](PairedSample&& s) {
    data.hq.push_back(std::move(s.x_h));
    data.lq.push_back(std::move(s.x_l));
  });
  const auto r = run_stage2(cfg, data, bundle, {out_dir(c), c.resume, -1, {}});
  bundle.save(out_dir(c) / "model.ckpt");
  report_stage(r, "stage 2");
}

void cmd_train_drpm(const RunConfig& c) {
  prepare_out(c);
  const auto m = corpus(c);
  auto bundle = load_bundle(c);
  const auto cfg = train_config_for(c, bundle);
  Stage3Data data;
  data.clips = degraded_clips(c, m, Split::Train);
  for_each_pair(load_images(m, Split::Train), pair_spec(c, c.pairs, 0),
                [&](PairedSample&& s) { data.hq.push_back(std::move(s.x_h)); });
  const auto r = run_stage3(cfg, data, bundle, {out_dir(c), c.resume, -1, {}});
  bundle.save(out_dir(c) / "model.ckpt");
  report_stage(r, "stage 3");
}

void cmd_enhance(const RunConfig& c) {
  prepare_out(c);
  auto bundle = load_bundle(c);
  const auto x = load_png(need(c.input, "input"));
  const auto y = enhance_image(bundle, x);
  const fs::path out = c.output.empty() ? out_dir(c) / "enhanced.png" : fs::path(c.output);
  save_png(y, out);
  std::printf("%lldx%lld -> %lldx%lld: %s\n", static_cast<long long>(x.height()), static_cast<long long>(x.width()),
              static_cast<long long>(y.height()), static_cast<long long>(y.width()), out.string().c_str());
}

void cmd_enhance_video(const RunConfig& c) {
  prepare_out(c);
  auto bundle = load_bundle(c);
  const auto video = load_video(need(c.input, "input"));
  const auto sched = c.scheduler();
  std::vector<FrameRecord> best;
  for (int64_t rep = 0; rep < c.timing_repeats; ++rep) {
    VideoRunOptions o;
    o.keep_images = rep == 0;
    auto recs = enhance_video(video, bundle, sched, o);
    if (rep == 0) {
      best = std::move(recs);
    } else {
      for (size_t i = 0; i < recs.size(); ++i) best[i].ms = std::min(best[i].ms, recs[i].ms);
    }
  }
  VideoSequence out;
  out.frame_rate = video.frame_rate;
  for (const auto& r : best) out.frames.push_back(r.output);
  const fs::path frames_dir = c.output.empty() ? out_dir(c) / "frames" : fs::path(c.output);
  save_video(out, frames_dir);
  write_text(out_dir(c) / "frames.csv", frame_csv(best, false));
  std::string timing = "index,ms\n";
  double total = 0;
  int64_t keys = 0;
  for (const auto& r : best) {
    timing += std::to_string(r.index) + "," + format_double(r.ms) + "\n";
    total += r.ms;
    keys += r.source == RepresentationSource::DAM;
  }
  write_text(out_dir(c) / "timing.csv", timing);
  std::printf("%zu frames, %lld key frames, mean %.3f ms/frame\n", best.size(), static_cast<long long>(keys),
              best.empty() ? 0.0 : total / static_cast<double>(best.size()));
}

void cmd_eval(const RunConfig& c) {
  prepare_out(c);
  auto bundle = load_bundle(c);
  const auto inputs = list_pngs(need(c.input, "input"));
  const auto niqe_model = NiqeModel::load(niqe_model_path(c.niqe_model));
  MetricReport report;
  const fs::path save_dir = c.output.empty() ? out_dir(c) / "enhanced" : fs::path(c.output);
  fs::create_directories(save_dir);
  for (const auto& p : inputs) {
    const auto x = load_png(p);
    const auto t0 = Clock::now();
    const auto y = enhance_image(bundle, x);
    ImageScores s;
    s.ms = elapsed_ms(t0);
    s.name = p.filename().string();
    save_png(y, save_dir / s.name);
    if (!c.reference.empty()) {
      const fs::path ref = fs::is_directory(c.reference) ? fs::path(c.reference) / s.name : fs::path(c.reference);
      const auto r = load_png(ref);
      s.psnr = psnr(y, r);
      s.ssim = ssim(y, r);
    }
    if (y.height() >= kNiqeMinSide && y.width() >= kNiqeMinSide) s.niqe = niqe(y, niqe_model);
    s.piqe = piqe(y);
    report.images.push_back(s);
  }
  const auto first = load_png(inputs.front());
  report.params = count_params(*bundle.dam) + count_params(*bundle.dgem);
  const auto f = component_flops(bundle, first.height(), first.width());
  report.gflops = (f.dam + f.dgem) / 1e9;
  write_text(out_dir(c) / "metrics.csv", report.to_csv(false));
  write_text(out_dir(c) / "summary.txt", report.summary(false));
  std::string timing = "name,ms\n";
  for (const auto& s : report.images) timing += s.name + "," + format_double(s.ms) + "\n";
  write_text(out_dir(c) / "timing.csv", timing);
  std::cout << report.summary(true);
}

void cmd_viz_repr(const RunConfig& c) {
  prepare_out(c);
  const auto m = corpus(c);
  auto bundle = load_bundle(c);
  const auto sources = load_images(m, parse_split(c.split));
  if (sources.empty()) throw StateError("viz-repr: split '" + c.split + "' holds no images");
  std::vector<torch::Tensor> reps;
  std::vector<ProjectionLabel> labels;
  {
    torch::NoGradGuard g;
    for_each_pair(sources, pair_spec(c, c.pairs, kTagViz), [&](PairedSample&& s) {
      reps.push_back(bundle.represent(s.x_l.batched()).d_vec.squeeze(0));
      labels.push_back({to_string(s.provenance.params.kind), to_string(s.provenance.level)});
    });
  }
  const auto vectors = torch::stack(reps);
  const auto p = pca_project(vectors, labels);
  write_text(out_dir(c) / "coords.csv", p.to_csv());
  save_png(render_scatter(p), out_dir(c) / "scatter.png");

  std::vector<std::string> kinds;
  for (const auto& l : labels) kinds.push_back(l.kind);
  std::ostringstream stats;
  stats << "points = " << labels.size() << "\n";
  stats << "explained_variance = " << format_double(p.explained[0]) << "," << format_double(p.explained[1]) << "\n";
  stats << "silhouette_by_kind = " << format_double(silhouette(p.coords, kinds)) << "\n";
  for (auto kind : c.kinds) {
    std::vector<int64_t> rows;
    std::vector<int64_t> level_index;
    for (size_t i = 0; i < labels.size(); ++i)
      if (labels[i].kind == to_string(kind)) {
        rows.push_back(static_cast<int64_t>(i));
        level_index.push_back(static_cast<int64_t>(parse_level(labels[i].level)));
      }
    if (rows.size() < 3) continue;
    const double rho = level_trend(vectors.index_select(0, torch::tensor(rows)), level_index);
    stats << "level_trend." << to_string(kind) << " = " << format_double(rho) << "\n";
  }
  write_text(out_dir(c) / "stats.txt", stats.str());
  std::cout << stats.str();
}

void cmd_budget(const RunConfig& c) {
  prepare_out(c);
  ModelBundle b(c.train.arch, c.train.seed);
  const int64_t h = c.budget_height, w = c.budget_width;
  const auto dam = b.dam->budget(h, w);
  const auto dg = b.dgem->budget(h, w);
  const auto drpm = b.drpm->budget();
  std::ostringstream o;
  char line[160];
  auto row = [&](const char* name, const Budget& x) {
    std::snprintf(line, sizeof line, "%-44s %10.3f %12.3f\n", name, static_cast<double>(x.params) / 1e6, x.flops / 1e9);
    o << line;
  };
  std::snprintf(line, sizeof line, "input %lldx%lld (low resolution), scale %lld\n", static_cast<long long>(h),
                static_cast<long long>(w), static_cast<long long>(c.train.scale));
  o << line;
  std::snprintf(line, sizeof line, "%-44s %10s %12s\n", "component", "params(M)", "GFLOPs");
  o << line;
  row("DAM", dam);
  row("DGEM", dg.total());
  row("  Degradation Representation Compression", dg.compression);
  row("  Shallow Feature Extraction", dg.shallow);
  row("  Feature Modulation", dg.modulation);
  row("  Reconstruction", dg.reconstruction);
  row("DRPM (one prediction)", drpm);
  std::snprintf(line, sizeof line, "average GFLOPs/frame at delta_t=%lld: %.3f\n",
                static_cast<long long>(c.train.delta_t),
                estimate_avg_flops(c.train.delta_t, component_flops(b, h, w)) / 1e9);
  o << line;
  write_text(out_dir(c) / "budget.txt", o.str());
  std::cout << o.str();
}

void cmd_fit_niqe(const RunConfig& c) {
  prepare_out(c);
  const auto m = corpus(c);
  std::vector<ImageTensor> images;
  for (const auto& item : m.items)
    if (item.kind == ItemKind::Image) images.push_back(load_png(m.root / item.path));
  const auto model = fit_niqe(images, "fitted on " + std::to_string(images.size()) + " images");
  const fs::path out = c.output.empty() ? out_dir(c) / "niqe_pristine.txt" : fs::path(c.output);
  model.save(out);
  std::printf("fitted on %zu images: %s\n", images.size(), out.string().c_str());
}

}  // namespace

const std::vector<Command>& commands() {
  static const std::vector<Command> list = {
      {"synth", "write procedural HQ images and clips (a stand-in corpus)", cmd_synth},
      {"degrade", "synthesize the LQ corpus from an HQ corpus", cmd_degrade},
      {"pretrain-dam", "stage 1: contrastive DAM pretraining", cmd_pretrain_dam},
      {"train", "stage 2: image GAN training", cmd_train},
      {"train-drpm", "stage 3: DRPM training on clips", cmd_train_drpm},
      {"enhance", "enhance a single image", cmd_enhance},
      {"enhance-video", "enhance a frame directory with key-frame scheduling", cmd_enhance_video},
      {"eval", "enhance images and report quality metrics", cmd_eval},
      {"viz-repr", "PCA export of degradation representations", cmd_viz_repr},
      {"budget", "parameter and FLOP budget per component", cmd_budget},
      {"fit-niqe", "fit a NIQE pristine model on the corpus images", cmd_fit_niqe},
  };
  return list;
}

}  // namespace dgve::cli

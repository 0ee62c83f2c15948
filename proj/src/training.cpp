#include "dgve/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dgve/config.hpp"
#include "dgve/datasets.hpp"
#include "dgve/errors.hpp"
#include "dgve/util.hpp"

namespace dgve {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (n_d < 0 || n_s < 0 || n_d + n_s > n) throw ParameterError("epochs: need 0 <= n_d, 0 <= n_s, n_d + n_s <= n");
  if (batch_size < 1) throw ParameterError("batch_size: must be >= 1");
  for (auto [v, name] : {std::pair{lr_dam, "lr_dam"}, {lr_g, "lr_g"}, {lr_d, "lr_d"}})
    if (!(v > 0.0) || !std::isfinite(v)) throw ParameterError(std::string(name) + ": must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ParameterError("adam betas: must lie in [0,1)");
  if (delta_t < 1) throw ParameterError("delta_t: must be >= 1");
  if (scale < 1) throw ParameterError("scale: must be >= 1");
  if (clip_length < 1) throw ParameterError("clip_length: must be >= 1");
  if (dam_crop < 8 || dam_crop % 4) throw ParameterError("dam_crop: must be a multiple of 4, at least 8");
  if (distill_weight < 0.0) throw ParameterError("distill_weight: must be >= 0");
  weights.validate();
  if (arch.dgem.scale != scale || arch.heads.scale != scale)
    throw ParameterError("scale: generator and regression heads must use the training scale");
}

PretrainConfig TrainConfig::pretrain_config() const {
  PretrainConfig p;
  p.epochs = n_d;
  p.batch_size = batch_size;
  p.crop = dam_crop;
  p.scale = scale;
  p.lr = lr_dam;
  p.beta1 = beta1;
  p.beta2 = beta2;
  p.tau = tau;
  p.queue_size = queue_size;
  p.momentum = momentum;
  p.seed = seed;
  return p;
}

// ---------------------------------------------------------------------------
// Bundle

ModelBundle::ModelBundle(const ArchConfig& a, uint64_t seed) : arch(a) {
  if (a.dgem.rep_channels != a.dam.rep_channels())
    throw ParameterError("arch: DGEM rep_channels must equal the DAM representation width");
  if (a.heads.dc_dim != a.dgem.embed_dim || a.drpm.dc_dim != a.dgem.embed_dim)
    throw ParameterError("arch: regression heads and DRPM must use D_c = DGEM embed_dim");
  if (a.heads.scale != a.dgem.scale) throw ParameterError("arch: regression heads and DGEM scales differ");
  torch::manual_seed(derive_seed({seed, 0xb0}));
  dam = DamEncoder(a.dam);
  dam_head = ProjectionHead(a.dam.rep_channels(), a.dam.proj_dim);
  dgem = Dgem(a.dgem);
  heads = RegressionHeads(a.heads);
  drpm = Drpm(a.drpm);
  d_l = Discriminator(a.disc_base);
  d_h = Discriminator(a.disc_base);
  d_hf = Discriminator(a.disc_base);
}

std::vector<torch::nn::Module*> ModelBundle::modules() {
  return {dam.get(), dam_head.get(), dgem.get(), heads.get(), drpm.get(), d_l.get(), d_h.get(), d_hf.get()};
}

std::vector<torch::Tensor> ModelBundle::generator_parameters(bool include_dam) {
  std::vector<torch::Tensor> p;
  if (include_dam) {
    for (auto& t : dam->parameters()) p.push_back(t);
    for (auto& t : dam_head->parameters()) p.push_back(t);
  }
  for (auto& t : dgem->parameters()) p.push_back(t);
  for (auto& t : heads->parameters()) p.push_back(t);
  return p;
}

std::vector<torch::Tensor> ModelBundle::discriminator_parameters() {
  std::vector<torch::Tensor> p;
  for (auto* d : {d_l.get(), d_h.get(), d_hf.get()})
    for (auto& t : d->parameters()) p.push_back(t);
  return p;
}

void ModelBundle::to(torch::Dtype dtype) {
  for (auto* m : modules()) m->to(dtype);
}

DegradationRepresentation ModelBundle::represent(const torch::Tensor& x) { return encode(dam, dam_head, x); }

EnhanceFn ModelBundle::g_h() {
  return [this](const torch::Tensor& x) {
    auto r = enhance(dgem, x, represent(x));
    return EnhanceOutput{r.x_enh, r.d_c};
  };
}

DegradeFn ModelBundle::g_l(DegradationKind kind) {
  return [this, kind](const torch::Tensor& x, const torch::Tensor& dc, uint64_t seed) {
    return degrade_back(x, dc, heads, kind, seed);
  };
}

RepresentFn ModelBundle::representation_fn(bool on_map) {
  return [this, on_map](const torch::Tensor& x) {
    auto d = represent(x);
    return on_map ? d.d_map : d.d_vec;
  };
}

namespace {
const char* const kBundlePrefixes[] = {"dam", "dam_head", "dgem", "heads", "drpm", "d_l", "d_h", "d_hf"};
}

void ModelBundle::store(Checkpoint& ck) const {
  auto* self = const_cast<ModelBundle*>(this);
  auto mods = self->modules();
  for (size_t i = 0; i < mods.size(); ++i) store_module(ck, kBundlePrefixes[i], *mods[i]);
  ck.meta()["arch"] = arch_to_key_values(arch);
}

void ModelBundle::restore(const Checkpoint& ck) {
  auto mods = modules();
  for (size_t i = 0; i < mods.size(); ++i) restore_module(ck, kBundlePrefixes[i], *mods[i]);
}

void ModelBundle::save(const fs::path& file) const {
  Checkpoint ck("bundle");
  store(ck);
  ck.save(file);
}

ModelBundle ModelBundle::load(const fs::path& file) {
  auto ck = Checkpoint::load(file, "bundle");
  ModelBundle b(arch_from_key_values(ck.meta_at("arch")), 0);
  b.restore(ck);
  return b;
}

void adopt_dam(ModelBundle& bundle, DamTrainer& trainer) {
  torch::NoGradGuard guard;
  auto copy = [](torch::nn::Module& from, torch::nn::Module& to) {
    auto src = from.named_parameters();
    for (auto& p : to.named_parameters()) p.value().copy_(src[p.key()]);
    auto srcb = from.named_buffers();
    for (auto& b : to.named_buffers()) b.value().copy_(srcb[b.key()]);
  };
  copy(*trainer.encoder(), *bundle.dam);
  copy(*trainer.head(), *bundle.dam_head);
}

// ---------------------------------------------------------------------------
// Alternating optimizer steps

namespace {

void set_requires_grad(const std::vector<torch::Tensor>& ps, bool on) {
  for (auto t : ps) t.requires_grad_(on);
}

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& t : m.parameters()) t.requires_grad_(on);
}

// Disables gradients of a parameter set for one scope.
class FreezeScope {
 public:
  explicit FreezeScope(std::vector<torch::Tensor> ps) : ps_(std::move(ps)) {
    for (auto& t : ps_) {
      was_.push_back(t.requires_grad());
      t.requires_grad_(false);
    }
  }
  ~FreezeScope() {
    for (size_t i = 0; i < ps_.size(); ++i) ps_[i].requires_grad_(was_[i]);
  }

 private:
  std::vector<torch::Tensor> ps_;
  std::vector<bool> was_;
};

torch::optim::AdamOptions adam(double lr, const TrainConfig& cfg) {
  return torch::optim::AdamOptions(lr).betas({cfg.beta1, cfg.beta2});
}

}  // namespace

GanTrainer::GanTrainer(ModelBundle& bundle, const TrainConfig& cfg) : b_(bundle), cfg_(cfg) {
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(b_.generator_parameters(false), std::make_unique<torch::optim::AdamOptions>(adam(cfg.lr_g, cfg)));
  if (cfg.train_dam) {
    std::vector<torch::Tensor> dam_params = b_.dam->parameters();
    for (auto& t : b_.dam_head->parameters()) dam_params.push_back(t);
    groups.emplace_back(dam_params, std::make_unique<torch::optim::AdamOptions>(adam(cfg.lr_dam, cfg)));
  }
  opt_g_ = std::make_unique<torch::optim::Adam>(std::move(groups), adam(cfg.lr_g, cfg));
  opt_d_ = std::make_unique<torch::optim::Adam>(b_.discriminator_parameters(), adam(cfg.lr_d, cfg));
  set_requires_grad(*b_.dam, cfg.train_dam);
  set_requires_grad(*b_.dam_head, cfg.train_dam);
  set_requires_grad(b_.generator_parameters(false), true);
  set_requires_grad(b_.discriminator_parameters(), true);
}

StepLosses GanTrainer::generator_step(const Batch& batch, uint64_t step_seed, torch::Tensor* x_enh,
                                      torch::Tensor* x_hl) {
  FreezeScope frozen(b_.discriminator_parameters());
  const auto& w = cfg_.weights;
  auto t = cycle_loss(batch.x_l, batch.x_h, b_.g_h(), b_.g_l(cfg_.gl_kind), b_.representation_fn(cfg_.cd_on_map), w,
                      step_seed);
  auto g_adv = generator_adv_loss(b_.d_h->forward(t.x_enh)) + generator_adv_loss(b_.d_l->forward(t.x_hl));
  auto g_hf = generator_adv_loss(b_.d_hf->forward(ops::highpass(t.x_enh, cfg_.hf_sigma)));
  auto total = w.adv * g_adv + w.hf * g_hf + w.cyc * t.total;
  StepLosses s;
  s.g_adv = g_adv.item<double>() + g_hf.item<double>();
  s.cl = t.cl.item<double>();
  s.ch = t.ch.item<double>();
  s.cd = t.cd.item<double>();
  s.g_total = total.item<double>();
  if (!std::isfinite(s.g_total)) throw NumericError("generator loss is not finite");
  opt_g_->zero_grad();
  total.backward();
  opt_g_->step();
  if (x_enh) *x_enh = t.x_enh.detach();
  if (x_hl) *x_hl = t.x_hl.detach();
  return s;
}

double GanTrainer::discriminator_step(const Batch& batch, const torch::Tensor& x_enh, const torch::Tensor& x_hl) {
  auto v = adv_loss_GH(b_.d_h->forward(batch.x_h), b_.d_h->forward(x_enh)) +
           adv_loss_GL(b_.d_l->forward(batch.x_l), b_.d_l->forward(x_hl)) +
           adv_loss_hf(batch.x_h, x_enh, b_.d_hf, cfg_.hf_sigma);
  auto loss = -v;
  const double value = loss.item<double>();
  if (!std::isfinite(value)) throw NumericError("discriminator loss is not finite");
  opt_d_->zero_grad();
  loss.backward();
  opt_d_->step();
  return value;
}

StepLosses GanTrainer::step(const Batch& batch, uint64_t step_seed) {
  torch::Tensor x_enh, x_hl;
  auto s = generator_step(batch, step_seed, &x_enh, &x_hl);
  {
    torch::NoGradGuard guard;
    s.adv_gh = adv_loss_GH(b_.d_h->forward(batch.x_h), b_.d_h->forward(x_enh)).item<double>();
    s.adv_gl = adv_loss_GL(b_.d_l->forward(batch.x_l), b_.d_l->forward(x_hl)).item<double>();
    s.adv_hf = adv_loss_hf(batch.x_h, x_enh, b_.d_hf, cfg_.hf_sigma).item<double>();
  }
  s.d_total = discriminator_step(batch, x_enh, x_hl);
  return s;
}

void GanTrainer::store(Checkpoint& ck) const {
  store_adam(ck, "adam_g", *opt_g_);
  store_adam(ck, "adam_d", *opt_d_);
}

void GanTrainer::restore(const Checkpoint& ck) {
  restore_adam(ck, "adam_g", *opt_g_);
  restore_adam(ck, "adam_d", *opt_d_);
}

// ---------------------------------------------------------------------------
// Run-directory plumbing

namespace {

// CSV log rewritten atomically after every epoch. The first column is the epoch.
class CsvLog {
 public:
  CsvLog(fs::path path, std::string comment, std::string header)
      : path_(std::move(path)), comment_(std::move(comment)), header_(std::move(header)) {}

  // Keeps rows of epochs before `epoch` from an existing file.
  void load_before(int64_t epoch) {
    if (path_.empty() || !fs::exists(path_)) return;
    std::istringstream in(read_text(path_));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line == header_) continue;
      if (std::stoll(line.substr(0, line.find(','))) < epoch) rows_.push_back(line);
    }
  }
  const std::vector<std::string>& rows() const { return rows_; }
  void add(const std::string& row) { rows_.push_back(row); }
  void flush() const {
    if (path_.empty()) return;
    std::ostringstream ss;
    ss << "# " << comment_ << "\n" << header_ << "\n";
    for (const auto& r : rows_) ss << r << "\n";
    write_text(path_, ss.str());
  }

 private:
  fs::path path_;
  std::string comment_, header_;
  std::vector<std::string> rows_;
};

std::string weights_comment(const TrainConfig& cfg) {
  const auto& w = cfg.weights;
  return "lambda_adv=" + format_double(w.adv) + " lambda_cyc=" + format_double(w.cyc) +
         " lambda_hf=" + format_double(w.hf) + " lambda_cd=" + format_double(w.cd) +
         " distill_weight=" + format_double(cfg.distill_weight);
}

std::string checkpoint_name(int64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04lld.ckpt", static_cast<long long>(epoch));
  return buf;
}

// Latest epoch with a checkpoint in dir, or -1.
int64_t latest_checkpoint(const fs::path& dir) {
  if (dir.empty() || !fs::exists(dir)) return -1;
  int64_t best = -1;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("epoch_", 0) == 0 && e.path().extension() == ".ckpt")
      best = std::max<int64_t>(best, std::stoll(name.substr(6, name.size() - 11)));
  }
  return best;
}

void prune_checkpoints(const fs::path& dir, int64_t keep) {
  if (keep <= 0) return;
  std::vector<fs::path> all;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".ckpt") all.push_back(e.path());
  std::sort(all.begin(), all.end());
  for (size_t i = 0; i + static_cast<size_t>(keep) < all.size(); ++i) fs::remove(all[i]);
}

struct StageDirs {
  fs::path root, checkpoints, log;
};

StageDirs stage_dirs(const RunControl& ctl, const std::string& stage) {
  StageDirs d;
  if (ctl.run_dir.empty()) return d;
  d.root = ctl.run_dir / stage;
  d.checkpoints = d.root / "checkpoints";
  d.log = d.root / "loss.csv";
  fs::create_directories(d.checkpoints);
  return d;
}

void dump_batch(const fs::path& root, const Batch& b, int64_t epoch, int64_t step, const std::string& what) {
  if (root.empty()) return;
  const auto dir = root / "nan_dump";
  fs::create_directories(dir);
  for (int64_t i = 0; i < b.x_h.size(0); ++i) {
    save_png(ImageTensor::from_batch(b.x_h.detach().clamp(0, 1).to(torch::kFloat32), i),
             dir / ("x_h_" + std::to_string(i) + ".png"));
    save_png(ImageTensor::from_batch(b.x_l.detach().clamp(0, 1).to(torch::kFloat32), i),
             dir / ("x_l_" + std::to_string(i) + ".png"));
  }
  Checkpoint ck("nan_batch");
  ck.add("x_h", b.x_h.detach());
  ck.add("x_l", b.x_l.detach());
  ck.save(dir / "batch.ckpt");
  write_text(dir / "info.txt", "epoch = " + std::to_string(epoch) + "\nstep = " + std::to_string(step) +
                                   "\nerror = " + what + "\n");
}

std::string steps_row(int64_t epoch, int64_t step, const StepLosses& s) {
  std::ostringstream ss;
  ss << epoch << "," << step << "," << format_double(s.adv_gh) << "," << format_double(s.adv_gl) << ","
     << format_double(s.adv_hf) << "," << format_double(s.g_adv) << "," << format_double(s.cl) << ","
     << format_double(s.ch) << "," << format_double(s.cd) << "," << format_double(s.distill) << ","
     << format_double(s.g_total) << "," << format_double(s.d_total);
  return ss.str();
}

const char* const kStepsHeader = "epoch,step,adv_gh,adv_gl,adv_hf,g_adv,l_cl,l_ch,l_cd,distill,g_total,d_total";

// Restores per-step losses from kept CSV rows (generator total column).
void losses_from_rows(const std::vector<std::string>& rows, size_t column, StageResult& r) {
  for (const auto& row : rows) {
    std::istringstream in(row);
    std::string cell;
    for (size_t c = 0; std::getline(in, cell, ','); ++c)
      if (c == column) r.losses.push_back(std::stod(cell));
  }
}

torch::Tensor stack_images(const std::vector<const ImageTensor*>& v) {
  std::vector<torch::Tensor> t;
  t.reserve(v.size());
  for (auto* p : v) t.push_back(p->data());
  return torch::stack(t);
}

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

}  // namespace

// ---------------------------------------------------------------------------
// Stage 1

StageResult run_stage1(const TrainConfig& cfg, const std::vector<ImageTensor>& corpus, ModelBundle& bundle,
                       const RunControl& ctl) {
  cfg.validate();
  StageResult r;
  if (cfg.n_d == 0) {
    log_warning("n_d = 0: contrastive pretraining skipped, the DAM keeps its random initialization");
    r.completed = true;
    return r;
  }
  if (corpus.empty()) throw StateError("stage 1: empty HQ corpus");
  DamTrainer trainer(bundle.arch.dam, cfg.pretrain_config());
  const auto dirs = stage_dirs(ctl, "stage1");
  CsvLog log(dirs.log, "contrastive pretraining, tau=" + format_double(cfg.tau), "epoch,step,loss");
  r.steps_per_epoch = trainer.steps_per_epoch(static_cast<int64_t>(corpus.size()));
  int64_t start = 0;
  if (ctl.resume) {
    const int64_t last = latest_checkpoint(dirs.checkpoints);
    if (last >= 0) {
      trainer.restore(Checkpoint::load(dirs.checkpoints / checkpoint_name(last), "stage1"));
      start = last + 1;
    }
    log.load_before(start);
    losses_from_rows(log.rows(), 2, r);
  }
  for (int64_t e = start; e < cfg.n_d; ++e) {
    auto losses = trainer.run_epoch(corpus, e);
    for (size_t s = 0; s < losses.size(); ++s) {
      log.add(std::to_string(e) + "," + std::to_string(s) + "," + format_double(losses[s]));
      r.losses.push_back(losses[s]);
    }
    ++r.epochs_run;
    if (!dirs.root.empty()) {
      Checkpoint ck("stage1");
      trainer.store(ck);
      ck.meta()["epoch"] = std::to_string(e);
      ck.save(dirs.checkpoints / checkpoint_name(e));
      prune_checkpoints(dirs.checkpoints, cfg.keep_checkpoints);
      log.flush();
    }
    if (ctl.on_epoch) ctl.on_epoch("stage1 epoch " + std::to_string(e));
    if (ctl.halt_after_epochs >= 0 && r.epochs_run >= ctl.halt_after_epochs && e + 1 < cfg.n_d) return r;
  }
  adopt_dam(bundle, trainer);
  r.completed = true;
  return r;
}

// ---------------------------------------------------------------------------
// Stage 2

StageResult run_stage2(const TrainConfig& cfg, const GanData& data, ModelBundle& bundle, const RunControl& ctl) {
  cfg.validate();
  if (data.hq.empty() || data.lq.empty()) throw StateError("stage 2: HQ and LQ corpora must be non-empty");
  const auto& h0 = data.hq.front();
  const auto& l0 = data.lq.front();
  for (const auto& x : data.hq)
    if (x.height() != h0.height() || x.width() != h0.width()) throw ShapeError("stage 2: HQ patches differ in size");
  for (const auto& x : data.lq)
    if (x.height() != l0.height() || x.width() != l0.width()) throw ShapeError("stage 2: LQ patches differ in size");
  if (h0.height() != l0.height() * cfg.scale || h0.width() != l0.width() * cfg.scale)
    throw ShapeError("stage 2: HQ patch side must be scale x LQ patch side");
  if (cfg.paired && data.hq.size() != data.lq.size()) throw ShapeError("stage 2: paired corpora differ in size");

  GanTrainer trainer(bundle, cfg);
  const auto dirs = stage_dirs(ctl, "stage2");
  CsvLog log(dirs.log, weights_comment(cfg), kStepsHeader);
  StageResult r;
  const int64_t NL = static_cast<int64_t>(data.lq.size()), NH = static_cast<int64_t>(data.hq.size());
  r.steps_per_epoch = ceil_div(NL, cfg.batch_size);
  if (cfg.max_steps > 0) r.steps_per_epoch = std::min(r.steps_per_epoch, cfg.max_steps);
  int64_t start = 0;
  if (ctl.resume) {
    const int64_t last = latest_checkpoint(dirs.checkpoints);
    if (last >= 0) {
      auto ck = Checkpoint::load(dirs.checkpoints / checkpoint_name(last), "stage2");
      bundle.restore(ck);
      trainer.restore(ck);
      start = last + 1;
    }
    log.load_before(cfg.n_d + start);
    losses_from_rows(log.rows(), 10, r);
  }
  for (int64_t e = start; e < cfg.n_s; ++e) {
    const int64_t global_epoch = cfg.n_d + e;
    const uint64_t ue = static_cast<uint64_t>(e);
    auto order_l = SeededRng(derive_seed({cfg.seed, 2, ue, 1})).permutation(NL);
    auto order_h = cfg.paired ? order_l : SeededRng(derive_seed({cfg.seed, 2, ue, 2})).permutation(NH);
    for (int64_t s = 0; s < r.steps_per_epoch; ++s) {
      std::vector<const ImageTensor*> hs, ls;
      for (int64_t i = s * cfg.batch_size; i < std::min(NL, (s + 1) * cfg.batch_size); ++i) {
        ls.push_back(&data.lq[static_cast<size_t>(order_l[static_cast<size_t>(i)])]);
        hs.push_back(&data.hq[static_cast<size_t>(order_h[static_cast<size_t>(i % NH)])]);
      }
      Batch batch{stack_images(hs), stack_images(ls)};
      const auto dtype = bundle.dgem->recon3->weight.scalar_type();
      batch.x_h = batch.x_h.to(dtype);
      batch.x_l = batch.x_l.to(dtype);
      StepLosses sl;
      try {
        sl = trainer.step(batch, derive_seed({cfg.seed, 2, ue, static_cast<uint64_t>(s)}));
      } catch (const NumericError& err) {
        dump_batch(dirs.root, batch, global_epoch, s, err.what());
        log.flush();
        throw;
      }
      log.add(steps_row(global_epoch, s, sl));
      r.losses.push_back(sl.g_total);
      r.steps.push_back(sl);
    }
    ++r.epochs_run;
    if (!dirs.root.empty()) {
      Checkpoint ck("stage2");
      bundle.store(ck);
      trainer.store(ck);
      ck.meta()["epoch"] = std::to_string(e);
      ck.save(dirs.checkpoints / checkpoint_name(e));
      prune_checkpoints(dirs.checkpoints, cfg.keep_checkpoints);
      log.flush();
    }
    if (ctl.on_epoch) ctl.on_epoch("stage2 epoch " + std::to_string(global_epoch));
    if (ctl.halt_after_epochs >= 0 && r.epochs_run >= ctl.halt_after_epochs && e + 1 < cfg.n_s) return r;
  }
  r.completed = true;
  return r;
}

// ---------------------------------------------------------------------------
// Stage 3

StageResult run_stage3(const TrainConfig& cfg, const Stage3Data& data, ModelBundle& bundle, const RunControl& ctl) {
  cfg.validate();
  if (data.clips.empty()) throw StateError("stage 3: no video clips");
  if (data.hq.empty()) throw StateError("stage 3: no HQ patches");
  const int64_t epochs = cfg.n - cfg.n_d - cfg.n_s;
  const int64_t T = cfg.clip_length;
  if (cfg.delta_t == 1) log_warning("delta_t = 1: every frame is a key frame, the DRPM receives no training steps");

  // Frozen by default: DAM, DGEM and G_L heads. The DRPM and discriminators train.
  set_requires_grad(*bundle.dam, false);
  set_requires_grad(*bundle.dam_head, false);
  set_requires_grad(*bundle.heads, false);
  set_requires_grad(*bundle.dgem, cfg.unfreeze_dgem);
  set_requires_grad(*bundle.drpm, true);
  set_requires_grad(bundle.discriminator_parameters(), true);
  std::vector<torch::Tensor> g_params = bundle.drpm->parameters();
  if (cfg.unfreeze_dgem)
    for (auto& t : bundle.dgem->parameters()) g_params.push_back(t);
  torch::optim::Adam opt_g(g_params, adam(cfg.lr_g, cfg));
  torch::optim::Adam opt_d(bundle.discriminator_parameters(), adam(cfg.lr_d, cfg));

  const auto dirs = stage_dirs(ctl, "stage3");
  CsvLog log(dirs.log, weights_comment(cfg) + " delta_t=" + std::to_string(cfg.delta_t),
             "epoch,group,clip,frame,source,adv_gh,adv_gl,adv_hf,g_adv,l_cl,l_ch,l_cd,distill,g_total,d_total");
  StageResult r;
  const int64_t NC = static_cast<int64_t>(data.clips.size()), NH = static_cast<int64_t>(data.hq.size());
  r.steps_per_epoch = ceil_div(NC, cfg.batch_size);
  if (cfg.max_steps > 0) r.steps_per_epoch = std::min(r.steps_per_epoch, cfg.max_steps);
  int64_t start = 0;
  if (ctl.resume) {
    const int64_t last = latest_checkpoint(dirs.checkpoints);
    if (last >= 0) {
      auto ck = Checkpoint::load(dirs.checkpoints / checkpoint_name(last), "stage3");
      bundle.restore(ck);
      restore_adam(ck, "adam_g", opt_g);
      restore_adam(ck, "adam_d", opt_d);
      start = last + 1;
    }
    log.load_before(cfg.n_d + cfg.n_s + start);
    losses_from_rows(log.rows(), 13, r);
  }
  const auto dtype = bundle.dgem->recon3->weight.scalar_type();
  const auto& w = cfg.weights;

  for (int64_t e = start; e < epochs; ++e) {
    const int64_t global_epoch = cfg.n_d + cfg.n_s + e;
    const uint64_t ue = static_cast<uint64_t>(e);
    for (int64_t g = 0; g < r.steps_per_epoch; ++g) {
      const uint64_t ug = static_cast<uint64_t>(g);
      // B clip windows processed in lockstep.
      std::vector<VideoSequence> windows;
      std::vector<int64_t> clip_ids;
      for (int64_t i = 0; i < cfg.batch_size; ++i) {
        int64_t ci = 0;
        windows.push_back(sample_clip(data.clips, T, derive_seed({cfg.seed, 3, ue, ug, static_cast<uint64_t>(i)}), &ci));
        clip_ids.push_back(ci);
      }
      const int64_t B = static_cast<int64_t>(windows.size());
      std::vector<torch::Tensor> history;  // entries [B,D_c], oldest first
      for (int64_t t = 0; t < T; ++t) {
        std::vector<torch::Tensor> frames;
        for (const auto& wdw : windows) frames.push_back(wdw.frames[static_cast<size_t>(t)].data());
        auto x_l = torch::stack(frames).to(dtype);
        const bool key = t % cfg.delta_t == 0;
        for (int64_t i = 0; i < B; ++i)
          r.tags.push_back({clip_ids[static_cast<size_t>(i)], t, key ? RepresentationSource::DAM : RepresentationSource::DRPM});
        StepLosses sl;
        if (key) {
          torch::NoGradGuard guard;
          history.push_back(bundle.dgem->compress(bundle.represent(x_l).d_map));
        } else {
          SeededRng pick(derive_seed({cfg.seed, 3, ue, ug, 0x4b, static_cast<uint64_t>(t)}));
          std::vector<const ImageTensor*> hs;
          for (int64_t i = 0; i < B; ++i) hs.push_back(&data.hq[static_cast<size_t>(pick.uniform_int(0, NH - 1))]);
          Batch batch{stack_images(hs).to(dtype), x_l};
          const int64_t ctx = bundle.arch.drpm.context;
          const int64_t from = std::max<int64_t>(0, static_cast<int64_t>(history.size()) - ctx);
          auto hist = torch::stack(std::vector<torch::Tensor>(history.begin() + from, history.end()), 1);
          const uint64_t step_seed = derive_seed({cfg.seed, 3, ue, ug, static_cast<uint64_t>(t)});
          torch::Tensor x_enh, x_hl;
          try {
            FreezeScope frozen(bundle.discriminator_parameters());
            auto pred = bundle.drpm->forward(hist);
            auto enhanced = EnhanceOutput{bundle.dgem->forward(x_l, pred), pred};
            auto terms = cycle_loss(batch.x_l, batch.x_h, enhanced, bundle.g_h(), bundle.g_l(cfg.gl_kind),
                                    bundle.representation_fn(cfg.cd_on_map), w, step_seed);
            auto g_adv = generator_adv_loss(bundle.d_h->forward(terms.x_enh)) +
                         generator_adv_loss(bundle.d_l->forward(terms.x_hl));
            auto g_hf = generator_adv_loss(bundle.d_hf->forward(ops::highpass(terms.x_enh, cfg.hf_sigma)));
            torch::Tensor target;
            {
              torch::NoGradGuard guard;
              target = bundle.dgem->compress(bundle.represent(x_l).d_map);
            }
            auto distill = (pred - target).norm(2, {1}).mean();
            auto total = w.adv * g_adv + w.hf * g_hf + w.cyc * terms.total + cfg.distill_weight * distill;
            sl.g_adv = g_adv.item<double>() + g_hf.item<double>();
            sl.cl = terms.cl.item<double>();
            sl.ch = terms.ch.item<double>();
            sl.cd = terms.cd.item<double>();
            sl.distill = distill.item<double>();
            sl.g_total = total.item<double>();
            if (!std::isfinite(sl.g_total)) throw NumericError("stage 3 generator loss is not finite");
            opt_g.zero_grad();
            total.backward();
            opt_g.step();
            x_enh = terms.x_enh.detach();
            x_hl = terms.x_hl.detach();
            history.push_back(pred.detach());
          } catch (const NumericError& err) {
            dump_batch(dirs.root, batch, global_epoch, g, err.what());
            log.flush();
            throw;
          }
          // Discriminator step on the detached fakes.
          auto v = adv_loss_GH(bundle.d_h->forward(batch.x_h), bundle.d_h->forward(x_enh)) +
                   adv_loss_GL(bundle.d_l->forward(batch.x_l), bundle.d_l->forward(x_hl)) +
                   adv_loss_hf(batch.x_h, x_enh, bundle.d_hf, cfg.hf_sigma);
          auto d_loss = -v;
          sl.d_total = d_loss.item<double>();
          if (!std::isfinite(sl.d_total)) {
            dump_batch(dirs.root, batch, global_epoch, g, "stage 3 discriminator loss is not finite");
            log.flush();
            throw NumericError("stage 3 discriminator loss is not finite");
          }
          opt_d.zero_grad();
          d_loss.backward();
          opt_d.step();
          r.losses.push_back(sl.g_total);
          r.steps.push_back(sl);
        }
        for (int64_t i = 0; i < B; ++i) {
          std::ostringstream row;
          row << global_epoch << "," << g << "," << clip_ids[static_cast<size_t>(i)] << "," << t << ","
              << (key ? "DAM" : "DRPM") << steps_row(0, 0, sl).substr(3);
          log.add(row.str());
        }
      }
    }
    ++r.epochs_run;
    if (!dirs.root.empty()) {
      Checkpoint ck("stage3");
      bundle.store(ck);
      store_adam(ck, "adam_g", opt_g);
      store_adam(ck, "adam_d", opt_d);
      ck.meta()["epoch"] = std::to_string(e);
      ck.save(dirs.checkpoints / checkpoint_name(e));
      prune_checkpoints(dirs.checkpoints, cfg.keep_checkpoints);
      log.flush();
    }
    if (ctl.on_epoch) ctl.on_epoch("stage3 epoch " + std::to_string(global_epoch));
    if (ctl.halt_after_epochs >= 0 && r.epochs_run >= ctl.halt_after_epochs && e + 1 < epochs) return r;
  }
  r.completed = true;
  return r;
}

}  // namespace dgve

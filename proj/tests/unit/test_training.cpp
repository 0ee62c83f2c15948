#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dgve/datasets.hpp"
#include "dgve/errors.hpp"
#include "dgve/training.hpp"
#include "test_support.hpp"
#include "tiny_arch.hpp"

using namespace dgve;
using namespace dgve::testing;
namespace fs = std::filesystem;

namespace {

std::vector<ImageTensor> hq_corpus(int64_t n, int64_t side, uint64_t seed) {
  std::vector<ImageTensor> v;
  for (int64_t i = 0; i < n; ++i) v.push_back(synthetic_scene(side, side, derive_seed({seed, static_cast<uint64_t>(i)})));
  return v;
}

GanData gan_data(int64_t n, uint64_t seed) {
  GanData d;
  d.hq = hq_corpus(n, 32, seed);
  for (int64_t i = 0; i < n; ++i) {
    auto p = sample_parameters(DegradationKind::Noise, DegradationLevel::L2, derive_seed({seed, 9, static_cast<uint64_t>(i)}));
    p.scale = 2;
    d.lq.push_back(apply_degradation(synthetic_scene(32, 32, derive_seed({seed, 7, static_cast<uint64_t>(i)})), p, i));
  }
  return d;
}

Stage3Data stage3_data(uint64_t seed) {
  Stage3Data d;
  for (uint64_t c = 0; c < 3; ++c)
    d.clips.push_back(degrade_clip(synthetic_clip(32, 32, 8, derive_seed({seed, c})), DegradationKind::Smoke,
                                   DegradationLevel::L2, 2, derive_seed({seed, c, 1})));
  d.hq = hq_corpus(4, 32, seed + 1);
  return d;
}

void zero_discriminators(ModelBundle& b) {
  torch::NoGradGuard g;
  for (auto* d : {b.d_l.get(), b.d_h.get(), b.d_hf.get()}) {
    auto last = d->body[8]->as<torch::nn::Conv2dImpl>();
    last->weight.zero_();
    last->bias.zero_();
  }
}

std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

bool unchanged(torch::nn::Module& m, const std::vector<torch::Tensor>& before) {
  auto now = m.parameters();
  for (size_t i = 0; i < now.size(); ++i)
    if (!bit_equal(now[i].detach(), before[i])) return false;
  return true;
}

std::string file_hash(const fs::path& p) { return sha256_file(p); }

fs::path last_checkpoint(const fs::path& dir) {
  fs::path best;
  for (const auto& e : fs::directory_iterator(dir))
    if (best.empty() || e.path() > best) best = e.path();
  return best;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("config validation") {
    auto c = tiny_train_config();
    CHECK_NOTHROW(c.validate());
    c.n_s = 10;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = tiny_train_config();
    c.lr_g = 0.0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = tiny_train_config();
    c.delta_t = 0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = tiny_train_config();
    c.scale = 3;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    TrainConfig defaults;
    CHECK(defaults.lr_dam == 5e-5);
    CHECK(defaults.lr_g == 5e-5);
    CHECK(defaults.lr_d == 2e-4);
    CHECK(defaults.beta1 == 0.9);
    CHECK(defaults.beta2 == 0.999);
    CHECK(defaults.delta_t == 15);
    CHECK_NOTHROW(defaults.validate());
  }

  TEST_CASE("generator loss with discriminators frozen at one half") {
    auto c = tiny_train_config();
    c.weights.cyc = 0.0;
    ModelBundle b(c.arch, 1);
    zero_discriminators(b);
    GanTrainer t(b, c);
    auto d = gan_data(2, 3);
    Batch batch{torch::stack({d.hq[0].data(), d.hq[1].data()}), torch::stack({d.lq[0].data(), d.lq[1].data()})};
    auto s = t.generator_step(batch, 11);
    const double expect = c.weights.adv * 2 * std::log(2.0) + c.weights.hf * std::log(2.0);
    CHECK(s.g_total == doctest::Approx(expect).epsilon(1e-6));
    CHECK(s.g_adv == doctest::Approx(3 * std::log(2.0)).epsilon(1e-6));
  }

  TEST_CASE("alternation leaves the other side bit-identical") {
    auto c = tiny_train_config();
    ModelBundle b(c.arch, 2);
    GanTrainer t(b, c);
    auto d = gan_data(2, 4);
    Batch batch{torch::stack({d.hq[0].data(), d.hq[1].data()}), torch::stack({d.lq[0].data(), d.lq[1].data()})};
    auto dl = snapshot(*b.d_l), dh = snapshot(*b.d_h), dhf = snapshot(*b.d_hf);
    auto dgem = snapshot(*b.dgem), heads = snapshot(*b.heads), dam = snapshot(*b.dam);
    torch::Tensor x_enh, x_hl;
    t.generator_step(batch, 1, &x_enh, &x_hl);
    CHECK(unchanged(*b.d_l, dl));
    CHECK(unchanged(*b.d_h, dh));
    CHECK(unchanged(*b.d_hf, dhf));
    CHECK_FALSE(unchanged(*b.dgem, dgem));
    CHECK(unchanged(*b.dam, dam));  // frozen unless train_dam

    auto dgem2 = snapshot(*b.dgem), heads2 = snapshot(*b.heads);
    t.discriminator_step(batch, x_enh, x_hl);
    CHECK(unchanged(*b.dgem, dgem2));
    CHECK(unchanged(*b.heads, heads2));
    CHECK_FALSE(unchanged(*b.d_h, dh));
    (void)heads;
  }

  TEST_CASE("step equals a generator step followed by a discriminator step") {
    auto c = tiny_train_config();
    auto d = gan_data(2, 5);
    Batch batch{torch::stack({d.hq[0].data(), d.hq[1].data()}), torch::stack({d.lq[0].data(), d.lq[1].data()})};
    ModelBundle a(c.arch, 3), b(c.arch, 3);
    GanTrainer ta(a, c), tb(b, c);
    ta.step(batch, 9);
    torch::Tensor x_enh, x_hl;
    tb.generator_step(batch, 9, &x_enh, &x_hl);
    tb.discriminator_step(batch, x_enh, x_hl);
    auto pa = a.discriminator_parameters(), pb = b.discriminator_parameters();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(pa[i], pb[i]));
    auto ga = a.generator_parameters(false), gb = b.generator_parameters(false);
    for (size_t i = 0; i < ga.size(); ++i) CHECK(bit_equal(ga[i], gb[i]));
  }

  TEST_CASE("stage 1: history length, skip, resume") {
    auto c = tiny_train_config();
    auto corpus = hq_corpus(5, 40, 6);
    ModelBundle full(c.arch, 4);
    auto dir_a = scratch_dir("stage1_full");
    auto r = run_stage1(c, corpus, full, {dir_a});
    CHECK(r.completed);
    CHECK(r.steps_per_epoch == 3);
    CHECK(r.losses.size() == static_cast<size_t>(c.n_d * r.steps_per_epoch));

    auto dir_b = scratch_dir("stage1_resume");
    ModelBundle part(c.arch, 4);
    RunControl ctl{dir_b};
    ctl.halt_after_epochs = 1;
    auto r1 = run_stage1(c, corpus, part, ctl);
    CHECK_FALSE(r1.completed);
    ctl.halt_after_epochs = -1;
    ctl.resume = true;
    auto r2 = run_stage1(c, corpus, part, ctl);
    CHECK(r2.completed);
    CHECK(r2.epochs_run == 1);
    CHECK(r2.losses == r.losses);
    CHECK(file_hash(last_checkpoint(dir_a / "stage1/checkpoints")) ==
          file_hash(last_checkpoint(dir_b / "stage1/checkpoints")));
    auto pf = full.dam->parameters(), pp = part.dam->parameters();
    for (size_t i = 0; i < pf.size(); ++i) CHECK(bit_equal(pf[i], pp[i]));

    auto skip = c;
    skip.n_d = 0;
    ModelBundle fresh(c.arch, 4), untouched(c.arch, 4);
    auto rs = run_stage1(skip, corpus, fresh);
    CHECK(rs.completed);
    CHECK(rs.losses.empty());
    auto a = fresh.dam->parameters(), b = untouched.dam->parameters();
    for (size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(a[i], b[i]));
  }

  TEST_CASE("stage 2: history length, resume, determinism") {
    auto c = tiny_train_config();
    c.max_steps = 2;
    auto data = gan_data(5, 8);
    auto dir_a = scratch_dir("stage2_a");
    ModelBundle a(c.arch, 5);
    auto ra = run_stage2(c, data, a, {dir_a});
    CHECK(ra.steps_per_epoch == 2);
    CHECK(ra.losses.size() == static_cast<size_t>(c.n_s * 2));

    auto dir_b = scratch_dir("stage2_b");
    ModelBundle b(c.arch, 5);
    RunControl ctl{dir_b};
    ctl.halt_after_epochs = 2;
    run_stage2(c, data, b, ctl);
    ctl.halt_after_epochs = -1;
    ctl.resume = true;
    auto rb = run_stage2(c, data, b, ctl);
    CHECK(rb.completed);
    CHECK(rb.losses == ra.losses);
    CHECK(file_hash(last_checkpoint(dir_a / "stage2/checkpoints")) ==
          file_hash(last_checkpoint(dir_b / "stage2/checkpoints")));
    CHECK(read_text(dir_a / "stage2/loss.csv") == read_text(dir_b / "stage2/loss.csv"));
    CHECK(read_text(dir_a / "stage2/loss.csv").find("lambda_cyc=10") != std::string::npos);

    auto dir_c = scratch_dir("stage2_c");
    ModelBundle cc(c.arch, 5);
    run_stage2(c, data, cc, {dir_c});
    CHECK(file_hash(last_checkpoint(dir_a / "stage2/checkpoints")) ==
          file_hash(last_checkpoint(dir_c / "stage2/checkpoints")));

    // Rotation keeps the newest epochs only.
    int64_t kept = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir_a / "stage2/checkpoints")) ++kept;
    CHECK(kept == std::min<int64_t>(c.n_s, c.keep_checkpoints));
  }

  TEST_CASE("stage 2: a NaN aborts with a dump of the batch") {
    auto c = tiny_train_config();
    c.max_steps = 1;
    auto data = gan_data(2, 9);
    ModelBundle b(c.arch, 6);
    {
      torch::NoGradGuard g;
      b.dgem->recon3->bias.fill_(std::nan(""));
    }
    auto dir = scratch_dir("stage2_nan");
    CHECK_THROWS_AS(run_stage2(c, data, b, {dir}), NumericError);
    CHECK(fs::exists(dir / "stage2/nan_dump/info.txt"));
    CHECK(fs::exists(dir / "stage2/nan_dump/x_l_0.png"));
    CHECK(fs::exists(dir / "stage2/nan_dump/batch.ckpt"));
  }

  TEST_CASE("stage 3: freeze contract, source tags, determinism") {
    auto c = tiny_train_config();
    c.max_steps = 1;
    auto data = stage3_data(10);
    ModelBundle b(c.arch, 7);
    auto dam = snapshot(*b.dam), dgem = snapshot(*b.dgem), heads = snapshot(*b.heads), drpm = snapshot(*b.drpm);
    auto dir_a = scratch_dir("stage3_a");
    auto r = run_stage3(c, data, b, {dir_a});
    CHECK(r.completed);
    CHECK(unchanged(*b.dam, dam));
    CHECK(unchanged(*b.dgem, dgem));
    CHECK(unchanged(*b.heads, heads));
    CHECK_FALSE(unchanged(*b.drpm, drpm));

    const int64_t epochs = c.n - c.n_d - c.n_s;
    const int64_t clips = epochs * r.steps_per_epoch * c.batch_size;
    CHECK(r.tags.size() == static_cast<size_t>(clips * c.clip_length));
    int64_t dam_tags = 0;
    for (const auto& t : r.tags) {
      CHECK((t.source == RepresentationSource::DAM) == (t.frame % c.delta_t == 0));
      dam_tags += t.source == RepresentationSource::DAM;
    }
    CHECK(dam_tags == clips * keyframe_count(c.clip_length, c.delta_t));
    CHECK(keyframe_count(6, 3) == 2);
    CHECK(keyframe_count(120, 15) == 8);

    ModelBundle b2(c.arch, 7);
    auto dir_b = scratch_dir("stage3_b");
    auto r2 = run_stage3(c, data, b2, {dir_b});
    CHECK(r2.losses == r.losses);
    CHECK(read_text(dir_a / "stage3/loss.csv") == read_text(dir_b / "stage3/loss.csv"));
    for (size_t i = 0; i < r.tags.size(); ++i) CHECK(r.tags[i].clip == r2.tags[i].clip);

    auto unfrozen = c;
    unfrozen.unfreeze_dgem = true;
    ModelBundle b3(c.arch, 7);
    auto dgem3 = snapshot(*b3.dgem);
    run_stage3(unfrozen, data, b3);
    CHECK_FALSE(unchanged(*b3.dgem, dgem3));
  }

  TEST_CASE("bundle checkpoint round trip") {
    auto c = tiny_train_config();
    ModelBundle a(c.arch, 8);
    auto dir = scratch_dir("bundle");
    a.save(dir / "b.ckpt");
    auto b = ModelBundle::load(dir / "b.ckpt");
    CHECK(b.arch.dgem.embed_dim == c.arch.dgem.embed_dim);
    auto ma = a.modules(), mb = b.modules();
    for (size_t i = 0; i < ma.size(); ++i) {
      auto pa = ma[i]->parameters(), pb = mb[i]->parameters();
      REQUIRE(pa.size() == pb.size());
      for (size_t j = 0; j < pa.size(); ++j) CHECK(bit_equal(pa[j], pb[j]));
    }
    b.save(dir / "c.ckpt");
    CHECK(file_hash(dir / "b.ckpt") == file_hash(dir / "c.ckpt"));
  }
}

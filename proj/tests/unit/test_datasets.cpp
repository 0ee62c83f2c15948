#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "dgve/datasets.hpp"
#include "dgve/errors.hpp"
#include "test_support.hpp"

using namespace dgve;
using namespace dgve::testing;
namespace fs = std::filesystem;

namespace {

void write_images(const fs::path& dir, int64_t n, uint64_t seed, int64_t side = 16) {
  fs::create_directories(dir);
  for (int64_t i = 0; i < n; ++i)
    save_png(random_image(side, side, derive_seed({seed, static_cast<uint64_t>(i)})),
             dir / ("img_" + std::to_string(i) + ".png"));
}

void write_clips(const fs::path& dir, int64_t n, int64_t frames, uint64_t seed) {
  for (int64_t i = 0; i < n; ++i) {
    VideoSequence v;
    for (int64_t t = 0; t < frames; ++t)
      v.frames.push_back(random_image(8, 8, derive_seed({seed, static_cast<uint64_t>(i), static_cast<uint64_t>(t)})));
    save_video(v, dir / ("clip_" + std::to_string(i)));
  }
}

std::array<int64_t, 3> split_counts(const CorpusManifest& m, ItemKind k) {
  return {m.count(Split::Train, k), m.count(Split::Val, k), m.count(Split::Test, k)};
}

}  // namespace

TEST_SUITE("datasets") {
  TEST_CASE("largest remainder rounding") {
    CHECK(largest_remainder(240, {0.7, 0.2, 0.1}) == std::vector<int64_t>{168, 48, 24});
    CHECK(largest_remainder(10, {0.7, 0.2, 0.1}) == std::vector<int64_t>{7, 2, 1});
    CHECK(largest_remainder(2, {0.7, 0.2, 0.1}) == std::vector<int64_t>{2, 0, 0});  // tie goes to the earlier ratio
    CHECK(largest_remainder(3, {1, 1, 1}) == std::vector<int64_t>{1, 1, 1});
    CHECK(largest_remainder(4, {1, 1, 1}) == std::vector<int64_t>{2, 1, 1});
    CHECK(largest_remainder(0, {0.7, 0.2, 0.1}) == std::vector<int64_t>{0, 0, 0});
    CHECK_THROWS_AS(largest_remainder(5, {0, 0, 0}), ParameterError);
    CHECK_THROWS_AS(largest_remainder(5, {-1, 1, 1}), ParameterError);
  }

  TEST_CASE("manifest of 10 images splits 7/2/1 deterministically") {
    auto dir = scratch_dir("manifest10");
    write_images(dir, 10, 1);
    auto a = build_manifest(dir, {0.7, 0.2, 0.1}, 3);
    auto b = build_manifest(dir, {0.7, 0.2, 0.1}, 3);
    CHECK(split_counts(a, ItemKind::Image) == std::array<int64_t, 3>{7, 2, 1});
    CHECK(a.to_text() == b.to_text());
    auto c = build_manifest(dir, {0.7, 0.2, 0.1}, 4);
    CHECK(split_counts(c, ItemKind::Image) == std::array<int64_t, 3>{7, 2, 1});

    auto round = CorpusManifest::from_text(a.to_text(), dir);
    CHECK(round.to_text() == a.to_text());
    a.save(dir / "manifest.tsv");
    CHECK(CorpusManifest::load(dir / "manifest.tsv", dir).to_text() == a.to_text());

    // Hash-checked disjointness.
    std::map<std::string, Split> seen;
    for (const auto& it : a.items) {
      CHECK(it.hash == sha256_file(dir / it.path));
      auto [pos, fresh] = seen.emplace(it.hash, it.split);
      if (!fresh) CHECK(pos->second == it.split);
    }
  }

  TEST_CASE("manifest of 240 clips splits 168/48/24") {
    auto dir = scratch_dir("manifest240");
    write_clips(dir, 240, 1, 2);
    auto m = build_manifest(dir, {0.7, 0.2, 0.1}, 0);
    CHECK(split_counts(m, ItemKind::Clip) == std::array<int64_t, 3>{168, 48, 24});
    CHECK(split_counts(m, ItemKind::Image) == std::array<int64_t, 3>{0, 0, 0});
  }

  TEST_CASE("duplicate content never straddles splits") {
    auto dir = scratch_dir("manifest_dups");
    write_images(dir, 12, 5);
    for (int i = 0; i < 4; ++i) fs::copy_file(dir / "img_0.png", dir / ("dup_" + std::to_string(i) + ".png"));
    for (uint64_t seed = 0; seed < 8; ++seed) {
      auto m = build_manifest(dir, {0.7, 0.2, 0.1}, seed);
      std::map<std::string, std::set<Split>> by_hash;
      for (const auto& it : m.items) by_hash[it.hash].insert(it.split);
      for (const auto& [h, s] : by_hash) CHECK(s.size() == 1);
      CHECK(m.items.size() == 16);
    }
  }

  TEST_CASE("manifest errors") {
    auto empty = scratch_dir("manifest_empty");
    CHECK_THROWS_AS(build_manifest(empty, {0.7, 0.2, 0.1}, 0), StateError);
    auto few = scratch_dir("manifest_few");
    write_images(few, 9, 1);
    CHECK_THROWS_AS(build_manifest(few, {0.7, 0.2, 0.1}, 0), StateError);
    CHECK_THROWS_AS(build_manifest(few / "missing", {0.7, 0.2, 0.1}, 0), IoError);
    CHECK_THROWS_AS(CorpusManifest::from_text("a\tb\n", few), IoError);
    CHECK_THROWS_AS(parse_split("holdout"), ParameterError);
  }

  TEST_CASE("pairs are reproducible from their provenance") {
    std::vector<NamedImage> src;
    for (uint64_t i = 0; i < 3; ++i) src.push_back({"s" + std::to_string(i) + ".png", synthetic_scene(48, 40 + 8 * i, i)});
    PairSpec spec;
    spec.count = 100;
    spec.patch = 32;
    spec.seed = 17;
    spec.kinds = {kBasicKinds.begin(), kBasicKinds.end()};
    spec.kinds.push_back(DegradationKind::SesComposite);
    auto pairs = make_pairs(src, spec);
    REQUIRE(pairs.size() == 100);
    std::map<std::string, const ImageTensor*> by_name;
    for (const auto& s : src) by_name[s.path] = &s.image;
    for (const auto& p : pairs) {
      const auto& pr = p.provenance;
      const auto& image = *by_name.at(pr.source);
      CHECK(pr.top >= 0);
      CHECK(pr.left >= 0);
      CHECK(pr.top + pr.patch <= image.height());
      CHECK(pr.left + pr.patch <= image.width());
      CHECK(p.x_l.height() == p.x_h.height() / spec.scale);
      CHECK(p.x_l.width() == p.x_h.width() / spec.scale);
      auto back = PairProvenance::from_key_values(pr.to_key_values());
      CHECK(back.to_key_values() == pr.to_key_values());
      CHECK(bit_equal(reproduce_pair(back, image).data(), p.x_l.data()));
    }
    auto again = make_pairs(src, spec);
    for (size_t i = 0; i < pairs.size(); ++i) CHECK(bit_equal(again[i].x_l.data(), pairs[i].x_l.data()));

    spec.count = 0;
    CHECK(make_pairs(src, spec).empty());
  }

  TEST_CASE("kind distribution over 4000 samples") {
    std::vector<NamedImage> src{{"a.png", synthetic_scene(32, 32, 1)}};
    PairSpec spec;
    spec.count = 4000;
    spec.patch = 16;
    spec.seed = 3;
    std::map<DegradationKind, int64_t> counts;
    for_each_pair(src, spec, [&](PairedSample&& s) { ++counts[s.provenance.params.kind]; });
    REQUIRE(counts.size() == 4);
    for (auto [k, n] : counts) {
      CAPTURE(to_string(k));
      CHECK(n >= 900);
      CHECK(n <= 1100);
    }
  }

  TEST_CASE("pair generation errors") {
    std::vector<NamedImage> small{{"a.png", synthetic_scene(16, 16, 1)}};
    PairSpec spec;
    spec.count = 1;
    spec.patch = 32;
    CHECK_THROWS_AS(make_pairs(small, spec), StateError);
    spec.patch = 15;
    CHECK_THROWS_AS(make_pairs(small, spec), ParameterError);
  }

  TEST_CASE("clip windows") {
    std::vector<VideoSequence> clips{synthetic_clip(16, 16, 12, 1), synthetic_clip(16, 16, 5, 2)};
    int64_t ci = -1, off = -1;
    auto whole = sample_clip({clips[0]}, 12, 9, &ci, &off);
    CHECK(off == 0);
    CHECK(whole.frames.size() == 12);
    for (uint64_t s = 0; s < 20; ++s) {
      auto w = sample_clip(clips, 10, s, &ci, &off);
      CHECK(ci == 0);  // the only clip long enough
      CHECK(off >= 0);
      CHECK(off <= 2);
      for (int64_t t = 0; t < 10; ++t)
        CHECK(bit_equal(w.frames[t].data(), clips[0].frames[off + t].data()));
      int64_t ci2 = -1, off2 = -1;
      sample_clip(clips, 10, s, &ci2, &off2);
      CHECK(ci2 == ci);
      CHECK(off2 == off);
    }
    CHECK_THROWS_AS(sample_clip(clips, 13, 0), StateError);
    CHECK_THROWS_AS(sample_clip(clips, 0, 0), ParameterError);
  }

  TEST_CASE("synthetic content") {
    auto a = synthetic_scene(40, 56, 4), b = synthetic_scene(40, 56, 4), c = synthetic_scene(40, 56, 5);
    CHECK(bit_equal(a.data(), b.data()));
    CHECK_FALSE(bit_equal(a.data(), c.data()));
    CHECK(a.data().min().item<float>() >= 0.0f);
    CHECK(a.data().max().item<float>() <= 1.0f);
    CHECK(a.data().std().item<float>() > 0.02f);

    auto clip = synthetic_clip(24, 32, 6, 3);
    REQUIRE(clip.frames.size() == 6);
    CHECK(clip.frames[5].height() == 24);
    CHECK(clip.frames[5].width() == 32);
    auto deg = degrade_clip(clip, DegradationKind::LowLight, DegradationLevel::L3, 2, 1);
    REQUIRE(deg.frames.size() == 6);
    CHECK(deg.frames[0].height() == 12);
    CHECK(deg.frames[0].width() == 16);
    auto deg2 = degrade_clip(clip, DegradationKind::LowLight, DegradationLevel::L3, 2, 1);
    for (size_t t = 0; t < 6; ++t) CHECK(bit_equal(deg.frames[t].data(), deg2.frames[t].data()));
  }

  TEST_CASE("loading splits from disk") {
    auto dir = scratch_dir("manifest_load");
    write_images(dir / "images", 10, 3);
    write_clips(dir / "clips", 3, 4, 4);
    auto m = build_manifest(dir, {0.7, 0.2, 0.1}, 1);
    auto train = load_images(m, Split::Train);
    CHECK(train.size() == 7);
    auto clips = load_clips(m, Split::Train);
    CHECK(clips.size() == static_cast<size_t>(m.count(Split::Train, ItemKind::Clip)));
    for (const auto& c : clips) CHECK(c.frames.size() == 4);
  }
}

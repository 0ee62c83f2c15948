#include <doctest.h>

#include "dgve/checkpoint.hpp"
#include "dgve/dam.hpp"
#include "dgve/errors.hpp"
#include "test_support.hpp"

using namespace dgve;
using namespace dgve::testing;

TEST_SUITE("checkpoint") {
  TEST_CASE("save/load round trip is exact and byte-stable") {
    auto dir = scratch_dir("ckpt");
    torch::manual_seed(3);
    ProjectionHead head(8, 4);
    Checkpoint ck("head");
    ck.meta()["width"] = "8";
    store_module(ck, "head", *head);
    ck.add("counter", torch::tensor({int64_t{5}}));
    ck.save(dir / "a.ckpt");
    ck.save(dir / "b.ckpt");
    CHECK(sha256_file(dir / "a.ckpt") == sha256_file(dir / "b.ckpt"));

    auto back = Checkpoint::load(dir / "a.ckpt", "head");
    CHECK(back.meta_at("width") == "8");
    ProjectionHead other(8, 4);
    restore_module(back, "head", *other);
    auto pa = head->parameters(), pb = other->parameters();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(pa[i], pb[i]));
    CHECK(back.get("counter")[0].item<int64_t>() == 5);
  }

  TEST_CASE("loading validates module name and shapes") {
    auto dir = scratch_dir("ckpt_bad");
    ProjectionHead head(8, 4);
    Checkpoint ck("head");
    store_module(ck, "head", *head);
    ck.save(dir / "a.ckpt");
    CHECK_THROWS_AS(Checkpoint::load(dir / "a.ckpt", "dgem"), IoError);
    auto back = Checkpoint::load(dir / "a.ckpt");
    ProjectionHead wider(16, 4);
    CHECK_THROWS_AS(restore_module(back, "head", *wider), ShapeError);
    CHECK_THROWS_AS(restore_module(back, "other", *head), StateError);
    write_text(dir / "junk.ckpt", "not a checkpoint");
    CHECK_THROWS_AS(Checkpoint::load(dir / "junk.ckpt"), IoError);
  }

  TEST_CASE("optimizer state survives a round trip") {
    torch::manual_seed(1);
    auto w = torch::randn({4}, torch::requires_grad());
    torch::optim::Adam opt({w}, torch::optim::AdamOptions(0.1));
    for (int i = 0; i < 3; ++i) {
      opt.zero_grad();
      (w * w).sum().backward();
      opt.step();
    }
    Checkpoint ck("opt");
    ck.add("w", w);
    store_adam(ck, "adam", opt);

    auto w2 = ck.get("w").clone().set_requires_grad(true);
    torch::optim::Adam opt2({w2}, torch::optim::AdamOptions(0.1));
    restore_adam(ck, "adam", opt2);
    for (int i = 0; i < 2; ++i) {
      opt.zero_grad();
      (w * w).sum().backward();
      opt.step();
      opt2.zero_grad();
      (w2 * w2).sum().backward();
      opt2.step();
    }
    CHECK(bit_equal(w.detach(), w2.detach()));
  }
}

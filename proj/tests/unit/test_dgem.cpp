#include <doctest.h>

#include <cmath>

#include "dgve/dgem.hpp"
#include "dgve/errors.hpp"
#include "test_support.hpp"

using namespace dgve;
using namespace dgve::testing;

namespace {

// Plain per-window, per-head loops; no batching, no fused reshapes.
torch::Tensor loop_attention(WindowAttentionImpl& m, const torch::Tensor& x, const torch::Tensor& dc) {
  const int64_t N = x.size(0), T = x.size(1), C = m.dim, H = m.heads, dh = C / H;
  auto W = m.qkv->weight, b = m.qkv->bias;
  auto bias = m.position_bias();
  auto out = torch::zeros({N, T, C}, x.options());
  for (int64_t n = 0; n < N; ++n) {
    auto q = x[n].matmul(W.slice(0, 0, C).t()) + b.slice(0, 0, C);
    auto k = x[n].matmul(W.slice(0, C, 2 * C).t()) + b.slice(0, C, 2 * C);
    auto v = x[n].matmul(W.slice(0, 2 * C, 3 * C).t()) + b.slice(0, 2 * C, 3 * C);
    if (dc.defined()) v = v * dc[n];
    std::vector<torch::Tensor> heads;
    for (int64_t h = 0; h < H; ++h) {
      auto qh = q.slice(1, h * dh, (h + 1) * dh), kh = k.slice(1, h * dh, (h + 1) * dh);
      auto vh = v.slice(1, h * dh, (h + 1) * dh);
      auto a = torch::softmax(qh.matmul(kh.t()) / std::sqrt(static_cast<double>(dh)) + bias[h], -1);
      heads.push_back(a.matmul(vh));
    }
    out[n] = torch::cat(heads, 1).matmul(m.proj->weight.t()) + m.proj->bias;
  }
  return out;
}

}  // namespace

TEST_SUITE("dgem") {
  TEST_CASE("compression closed forms") {
    torch::manual_seed(1);
    Compression c(16, 6);
    c->to(torch::kFloat64);
    auto d = torch::rand({2, 16, 5, 7}, make_generator(2), torch::kFloat64);
    {
      torch::NoGradGuard g;
      for (auto& p : c->wc1->parameters()) p.zero_();
      for (auto& p : c->wc2->parameters()) p.zero_();
      for (auto& p : c->ws1->parameters()) p.zero_();
      c->proj->bias.zero_();
    }
    auto got = c->forward(d);
    auto expect = 0.25 * c->proj->forward(d.mean({2, 3}));
    CHECK(max_abs(got, expect) < 1e-12);

    torch::NoGradGuard g;
    c->proj->bias.fill_(0.3);
    auto zero = c->forward(torch::zeros({1, 16, 3, 3}, torch::kFloat64));
    CHECK(max_abs(zero, torch::full({1, 6}, 0.3, torch::kFloat64)) < 1e-12);
    CHECK(c->forward(torch::rand({3, 16, 11, 2}, torch::kFloat64)).size(1) == 6);
  }

  TEST_CASE("value modulation: identity, zeros, hand example") {
    torch::manual_seed(2);
    WindowAttention attn(8, 2, 4);
    auto x = torch::randn({3, 16, 8});
    auto plain = attn->forward(x, {});
    auto ones = attn->forward(x, torch::ones({3, 8}));
    CHECK(bit_equal(plain, ones));

    {
      torch::NoGradGuard g;
      attn->proj->bias.zero_();
    }
    auto zeros = attn->forward(x, torch::zeros({3, 8}));
    CHECK(zeros.abs().max().item<double>() == 0.0);
    CHECK_THROWS_AS(attn->forward(x, torch::ones({3, 7})), ShapeError);

    // One head, one token, four channels.
    WindowAttention tiny(4, 1, 1);
    tiny->to(torch::kFloat64);
    auto tok = torch::tensor({0.5, -1.0, 2.0, 0.25}, torch::kFloat64).view({1, 1, 4});
    auto dc = torch::tensor({2.0, 0.5, -1.0, 3.0}, torch::kFloat64).view({1, 4});
    auto got = tiny->forward(tok, dc)[0][0];
    auto Wq = tiny->qkv->weight, bq = tiny->qkv->bias;
    auto Wo = tiny->proj->weight, bo = tiny->proj->bias;
    for (int o = 0; o < 4; ++o) {
      double acc = bo[o].item<double>();
      for (int c = 0; c < 4; ++c) {
        double v = bq[8 + c].item<double>();
        for (int i = 0; i < 4; ++i) v += Wq[8 + c][i].item<double>() * tok[0][0][i].item<double>();
        acc += Wo[o][c].item<double>() * v * dc[0][c].item<double>();
      }
      CHECK(std::abs(got[o].item<double>() - acc) < 1e-12);
    }
  }

  TEST_CASE("attention matches a per-head loop reference and rows are normalized") {
    torch::manual_seed(3);
    WindowAttention attn(12, 3, 4);
    attn->to(torch::kFloat64);
    auto x = torch::randn({2, 16, 12}, torch::kFloat64);
    auto dc = torch::rand({2, 12}, torch::kFloat64) * 2;
    torch::Tensor a1, a2;
    auto got = attn->forward(x, dc, {}, &a1);
    CHECK(max_abs(got, loop_attention(*attn, x, dc)) < 1e-10);
    CHECK((a1.sum(-1) - 1.0).abs().max().item<double>() < 1e-6);
    attn->forward(x, torch::ones({2, 12}, torch::kFloat64), {}, &a2);
    CHECK(bit_equal(a1, a2));
  }

  TEST_CASE("enhance shapes, range, determinism") {
    torch::manual_seed(4);
    DamEncoder enc;
    ProjectionHead head(256, 256);
    Dgem dgem;
    torch::NoGradGuard g;
    auto x = random_image(160, 160, 5).batched();
    auto rep = encode(enc, head, x);
    auto r1 = enhance(dgem, x, rep);
    auto r2 = enhance(dgem, x, rep);
    CHECK(r1.x_enh.size(2) == 320);
    CHECK(r1.x_enh.size(3) == 320);
    CHECK(r1.d_c.size(1) == 60);
    CHECK(r1.x_enh.min().item<double>() >= 0.0);
    CHECK(r1.x_enh.max().item<double>() <= 1.0);
    CHECK(bit_equal(r1.x_enh, r2.x_enh));

    // Sides that are not window multiples are padded and cropped back.
    auto odd = dgem->forward(torch::rand({1, 3, 20, 12}), torch::ones({1, 60}));
    CHECK(odd.size(2) == 40);
    CHECK(odd.size(3) == 24);
  }

  TEST_CASE("modulation identity holds per block") {
    torch::manual_seed(5);
    Dgem dgem;
    torch::NoGradGuard g;
    auto x = torch::rand({2, 3, 24, 32}, make_generator(6));
    AttentionTrace ref, mod, rnd;
    auto a = dgem->forward(x, {}, &ref);
    auto b = dgem->forward(x, torch::ones({2, 60}), &mod);
    dgem->forward(x, torch::rand({2, 60}, make_generator(7)) * 3, &rnd);
    CHECK(bit_equal(a, b));
    REQUIRE(ref.attention.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
      CHECK(bit_equal(ref.outputs[i], mod.outputs[i]));
      CHECK(bit_equal(ref.attention[i], mod.attention[i]));
    }
    // Attention in the first block only depends on the inputs, never on d_c.
    CHECK(bit_equal(ref.attention[0], rnd.attention[0]));
  }

  TEST_CASE("enhance gradients match finite differences") {
    torch::manual_seed(6);
    DgemConfig cfg;
    cfg.rep_channels = 16;
    Dgem dgem(cfg);
    dgem->to(torch::kFloat64);
    auto x = torch::rand({1, 3, 16, 16}, make_generator(8), torch::kFloat64) * 0.6 + 0.2;
    auto d = torch::randn({1, 16, 4, 4}, make_generator(9), torch::kFloat64);
    auto probe = [&] {
      auto dc = dgem->compress(d);
      return dgem->forward(x, dc).sum();
    };
    auto r = finite_difference_check(dgem->parameters(), probe, 20, 11);
    CHECK(r.passed == r.checked);
    CHECK(r.worst_rel < 1e-3);
  }

  TEST_CASE("parameter and FLOP budgets") {
    torch::nn::Conv2d conv(torch::nn::Conv2dOptions(3, 64, 3).padding(1));
    auto b = count_params_flops(*conv, 320, 320);
    CHECK(b.params == 1792);
    CHECK(b.flops == 2.0 * 320 * 320 * 64 * 28);

    Dgem dgem;
    const double p = static_cast<double>(count_params(*dgem));
    CHECK(p >= 0.39e6 * 0.9);
    CHECK(p <= 0.39e6 * 1.1);
    auto s = dgem->budget(160, 160);
    CHECK(s.total().params == count_params(*dgem));
    CHECK(s.reconstruction.flops > s.modulation.flops);
    CHECK(s.modulation.flops > s.compression.flops);
    CHECK(s.compression.flops > s.shallow.flops);

    DamEncoder dam;
    CHECK(dam->budget(160, 160).params == count_params(*dam));
  }
}

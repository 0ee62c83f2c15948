#include <doctest.h>

#include "dgve/drpm.hpp"
#include "dgve/errors.hpp"
#include "test_support.hpp"

using namespace dgve;
using namespace dgve::testing;

namespace {

PropagationState filled_state(int64_t n, int64_t first_index, uint64_t seed) {
  PropagationState s;
  auto gen = make_generator(seed);
  for (int64_t i = 0; i < n; ++i)
    update_state(s, first_index + i, torch::rand({60}, gen),
                 i == 0 ? RepresentationSource::DAM : RepresentationSource::DRPM);
  return s;
}

}  // namespace

TEST_SUITE("drpm") {
  TEST_CASE("update_state ring buffer and key-frame tracking") {
    PropagationState s;
    CHECK_THROWS_AS(s.stacked(), StateError);
    for (int64_t i = 0; i < 20; ++i)
      update_state(s, i, torch::full({60}, static_cast<double>(i)),
                   i % 5 == 0 ? RepresentationSource::DAM : RepresentationSource::DRPM);
    CHECK(s.history.size() == 16);
    CHECK(s.history.front().index == 4);
    CHECK(s.last_keyframe_index == 15);
    for (size_t i = 1; i < s.history.size(); ++i) CHECK(s.history[i].index > s.history[i - 1].index);
    update_state(s, 25, torch::zeros({60}), RepresentationSource::DAM);
    CHECK(s.last_keyframe_index == 25);
    CHECK(s.history.size() == 16);
    CHECK_THROWS_AS(update_state(s, 25, torch::zeros({60}), RepresentationSource::DRPM), StateError);
    CHECK_THROWS_AS(update_state(s, 3, torch::zeros({60}), RepresentationSource::DRPM), StateError);
    CHECK_THROWS_AS(update_state(s, 30, torch::zeros({59}), RepresentationSource::DRPM), ShapeError);
  }

  TEST_CASE("untrained model persists the last entry exactly") {
    torch::manual_seed(1);
    Drpm drpm;
    for (int64_t n : {1, 2, 7, 16, 20}) {
      auto s = filled_state(n, 3, static_cast<uint64_t>(n));
      auto p = propagate(s, drpm);
      CHECK(p.sizes() == torch::IntArrayRef({60}));
      CHECK(bit_equal(p, s.history.back().dc));
    }
  }

  TEST_CASE("propagate preconditions") {
    torch::manual_seed(2);
    Drpm drpm;
    PropagationState empty;
    CHECK_THROWS_AS(propagate(empty, drpm), StateError);
    PropagationState no_key;
    update_state(no_key, 0, torch::rand({60}), RepresentationSource::DRPM);
    CHECK_THROWS_AS(propagate(no_key, drpm), StateError);
    CHECK_THROWS_AS(drpm->forward(torch::rand({1, 17, 60})), ShapeError);
  }

  TEST_CASE("prediction is invariant to absolute frame indices") {
    torch::manual_seed(3);
    Drpm drpm;
    {
      torch::NoGradGuard g;
      drpm->head->weight.normal_(0.0, 0.1);
    }
    for (int64_t n : {1, 5, 16}) {
      auto a = propagate(filled_state(n, 0, 9), drpm);
      auto b = propagate(filled_state(n, 1000, 9), drpm);
      CHECK(bit_equal(a, b));
      CHECK(!bit_equal(a, filled_state(n, 0, 9).history.back().dc));
    }
  }

  TEST_CASE("parameter budget lands the propagation path near 0.63M") {
    torch::manual_seed(4);
    Drpm drpm;
    const auto b = drpm->budget();
    CHECK(b.params == 256740);
    const double path = b.params + 391289.0;  // DGEM at its default configuration
    CHECK(std::abs(path / 0.63e6 - 1.0) < 0.15);
    CHECK(b.flops > 0.0);
  }

  TEST_CASE("learns linear drift to within 10% of the step") {
    torch::manual_seed(5);
    Drpm drpm;
    SeededRng rng(6);
    auto make = [&](int64_t T) {
      auto a = torch::rand({60}, make_generator(rng.next_u64())) * 0.6 + 0.2;
      auto b = (torch::rand({60}, make_generator(rng.next_u64())) - 0.5) * 0.04;
      auto t = torch::arange(T, torch::kFloat32).unsqueeze(1);
      return std::pair{a + t * b, b};
    };
    std::vector<torch::Tensor> train;
    for (int i = 0; i < 4096; ++i) train.push_back(make(24).first);
    SequenceFitConfig cfg;
    cfg.steps = 4000;
    cfg.seed = 7;
    auto losses = fit_sequences(drpm, train, cfg);
    CHECK(losses.back() < losses.front());

    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      auto [seq, b] = make(17);
      PropagationState s;
      for (int64_t i = 0; i < 16; ++i)
        update_state(s, i, seq[i], i == 0 ? RepresentationSource::DAM : RepresentationSource::DRPM);
      auto err = (propagate(s, drpm) - seq[16]).norm().item<double>() / b.norm().item<double>();
      worst = std::max(worst, err);
    }
    CAPTURE(worst);
    CHECK(worst < 0.1);
  }

  TEST_CASE("sequence fitting is deterministic") {
    auto run = [] {
      torch::manual_seed(8);
      Drpm drpm;
      std::vector<torch::Tensor> seqs{torch::rand({10, 60}, make_generator(1)),
                                      torch::rand({12, 60}, make_generator(2))};
      SequenceFitConfig cfg;
      cfg.steps = 5;
      cfg.batch = 4;
      fit_sequences(drpm, seqs, cfg);
      return drpm->head->weight.clone();
    };
    CHECK(bit_equal(run(), run()));
  }
}

#include "doctest.h"
#include "gradcheck.hpp"

#include "handlift/model.hpp"
#include "handlift/trainer.hpp"

#include <cmath>

using namespace handlift;
using handlift::testing::grad_check;
using handlift::testing::random_tensor;

namespace {

ModelConfig tiny(const std::string& preset) {
  ModelConfig c = model_preset(preset);
  c.width = 8;
  c.depth = 1;
  c.heads = 2;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST_CASE("presets") {
  const auto e = model_preset("table1_e");
  CHECK(e.spatial == SpatialKind::attention);
  CHECK(e.width == 256);
  CHECK(e.depth == 4);
  CHECK(e.heads == 8);
  CHECK(e.pe == PositionalEncoding::graph_distance);
  CHECK(model_preset("table1_b").spatial == SpatialKind::gcn_1hop);
  CHECK(model_preset("table1_b").width == 296);
  CHECK(model_preset("table1_c").spatial == SpatialKind::gcn_multihop);
  CHECK(model_preset("table1_d").spatial == SpatialKind::gat_skeleton);
  CHECK(model_preset("table2_a") == e);
  CHECK(model_preset("table2_b").pe == PositionalEncoding::none);
  CHECK(model_preset("table2_c").pe == PositionalEncoding::learnable);
  try {
    model_preset("table3_a");
    FAIL("expected an error");
  } catch (const std::invalid_argument& err) {
    const std::string msg = err.what();
    for (const auto& name : model_preset_names()) CHECK(msg.find(name) != std::string::npos);
  }
}

TEST_CASE("config validation and key-value round trip") {
  ModelConfig c;
  c.heads = 7;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.depth = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  ModelConfig d = model_preset("table1_c");
  d.dropout = 0.123456789012345;
  CHECK(ModelConfig::from_key_values(d.to_key_values()) == d);
  CHECK_THROWS(LiftingModel::build(c, build_hand_skeleton(), 0));
}

TEST_CASE("parameter counts") {
  const auto skel = build_hand_skeleton();
  auto count = [&](const std::string& p) { return count_parameters(LiftingModel::build(model_preset(p), skel, 0)); };
  const double a = static_cast<double>(count("table1_a"));
  const double b = static_cast<double>(count("table1_b"));
  const double e = static_cast<double>(count("table1_e"));
  CHECK(std::abs(a / 2.4e6 - 1.0) < 0.05);
  CHECK(std::abs(b / 3.2e6 - 1.0) < 0.05);
  CHECK(std::abs(e / 3.2e6 - 1.0) < 0.05);
  CHECK(std::abs(b / e - 1.0) < 0.05);
  // GAT and attention share every weight; only the mask differs.
  CHECK(count("table1_d") == count("table1_e"));

  // D = 1, L = 1, one head, attention with graph-distance PE, enumerated by hand:
  //   embedding: W_e 2, identity 21, pe table 5, LN 2              = 30
  //   layer: 2 LN (4), Q/K/V/O 4 x (1 + 1), FFN 1->4->1 (4+4+4+1)  = 25
  //   head: LN 2, hidden 1->1 (2), output 1->3 (3 + 3)             = 10
  ModelConfig toy{SpatialKind::attention, PositionalEncoding::graph_distance, 1, 1, 1, 0.0};
  CHECK(count_parameters(LiftingModel::build(toy, skel, 0)) == 65);
  toy.pe = PositionalEncoding::learnable;
  CHECK(count_parameters(LiftingModel::build(toy, skel, 0)) == 65 - 5 + 21);
  toy.pe = PositionalEncoding::none;
  CHECK(count_parameters(LiftingModel::build(toy, skel, 0)) == 60);
  // GCN swaps the four attention projections for one D x D transform with bias.
  toy = {SpatialKind::gcn_1hop, PositionalEncoding::graph_distance, 1, 1, 1, 0.0};
  CHECK(count_parameters(LiftingModel::build(toy, skel, 0)) == 65 - 8 + 2);
}

TEST_CASE("deterministic build and pure forward") {
  const auto skel = build_hand_skeleton();
  auto m1 = LiftingModel::build(tiny("table1_e"), skel, 5);
  auto m2 = LiftingModel::build(tiny("table1_e"), skel, 5);
  auto m3 = LiftingModel::build(tiny("table1_e"), skel, 6);
  const auto& p1 = m1.parameters().items();
  const auto& p2 = m2.parameters().items();
  bool differs = false;
  for (std::size_t k = 0; k < p1.size(); ++k) {
    for (std::size_t i = 0; i < p1[k].value.numel(); ++i) {
      CHECK(p1[k].value[i] == p2[k].value[i]);
      differs |= p1[k].value[i] != m3.parameters().items()[k].value[i];
    }
  }
  CHECK(differs);

  auto one = random_tensor({1, 21, 2}, 3, -1.0, 1.0, false);
  auto out = m1.forward(one, {}).prediction;
  CHECK(out.shape() == ad::Shape{1, 21, 3});

  std::vector<double> twice(one.values().begin(), one.values().end());
  twice.insert(twice.end(), one.values().begin(), one.values().end());
  auto dup = m1.forward(ad::Tensor::from_values({2, 21, 2}, twice), {}).prediction;
  for (std::size_t i = 0; i < 63; ++i) {
    CHECK(dup[i] == dup[63 + i]);
    CHECK(dup[i] == doctest::Approx(out[i]).epsilon(1e-12));
  }
  CHECK_THROWS(m1.forward(random_tensor({1, 20, 2}, 3, -1.0, 1.0, false), {}));
}

TEST_CASE("a sample's prediction does not depend on its batch or position") {
  const auto skel = build_hand_skeleton();
  const std::size_t batch = 131;
  auto x = random_tensor({batch, 21, 2}, 30, -1.0, 1.0, false);
  std::vector<double> v(x.values().begin(), x.values().end());
  for (std::size_t b = 1; b < batch; b += 7) std::copy_n(v.begin(), 42, v.begin() + static_cast<long>(b * 42));
  const auto xb = ad::Tensor::from_values({batch, 21, 2}, v);
  const auto x1 = ad::Tensor::from_values({1, 21, 2}, std::vector<double>(v.begin(), v.begin() + 42));
  for (const auto& name : model_preset_names()) {
    for (std::size_t width : {3, 16, 40}) {
      CAPTURE(name);
      CAPTURE(width);
      auto cfg = model_preset(name);
      cfg.width = width;
      cfg.depth = 2;
      cfg.heads = 1;
      const auto m = LiftingModel::build(cfg, skel, 4);
      const auto y = m.forward(xb, {}).prediction;
      const auto y1 = m.forward(x1, {}).prediction;
      std::size_t mismatches = 0;
      for (std::size_t b = 1; b < batch; b += 7)
        for (std::size_t i = 0; i < 63; ++i) mismatches += y[b * 63 + i] != y[i];
      for (std::size_t i = 0; i < 63; ++i) mismatches += y1[i] != y[i];
      CHECK(mismatches == 0);
    }
  }
}

TEST_CASE("gradients do not depend on where buffers land in memory") {
  const auto skel = build_hand_skeleton();
  const auto x = random_tensor({16, 21, 2}, 40, -1.0, 1.0, false);
  const auto y = random_tensor({16, 21, 3}, 41, -80.0, 80.0, false);
  for (const auto& name : model_preset_names()) {
    for (std::size_t width : {2, 8}) {
      CAPTURE(name);
      CAPTURE(width);
      auto cfg = model_preset(name);
      cfg.width = width;
      cfg.depth = 1;
      cfg.heads = 1;
      std::vector<std::vector<double>> first;
      for (std::size_t rep = 0; rep < 4; ++rep) {
        // Shift the heap so the tensors of each repetition get different
        // alignments.
        std::vector<double> shift(rep * 3 + 1, 1.0);
        auto m = LiftingModel::build(cfg, skel, 1);
        ad::GradTape tape;
        ad::Tensor loss;
        {
          ad::TapeScope scope(tape);
          loss = l1_loss(m.forward(x, {}).prediction, y);
        }
        tape.backward(loss);
        std::vector<std::vector<double>> grads;
        for (const auto& p : m.parameters().items()) grads.emplace_back(p.value.grad().begin(), p.value.grad().end());
        if (rep == 0) {
          first = grads;
        } else {
          CHECK(grads == first);
        }
        CHECK(shift.front() == 1.0);
      }
    }
  }
}

TEST_CASE("every preset builds, runs forward and backward") {
  const auto skel = build_hand_skeleton();
  for (const auto& name : model_preset_names()) {
    CAPTURE(name);
    auto cfg = model_preset(name);
    cfg.width = 16;
    cfg.depth = 2;
    auto m = LiftingModel::build(cfg, skel, 1);
    auto x = random_tensor({3, 21, 2}, 2, -1.0, 1.0, false);
    auto y = random_tensor({3, 21, 3}, 3, -50.0, 50.0, false);
    CounterRng rng(1, "dropout");
    ad::GradTape tape;
    ad::Tensor loss;
    ModelOutput out;
    {
      ad::TapeScope scope(tape);
      out = m.forward(x, {true, 0.1, &rng}, true);
      loss = l1_loss(out.prediction, y);
    }
    tape.backward(loss);
    CHECK(m.has_attention() == (cfg.spatial == SpatialKind::attention || cfg.spatial == SpatialKind::gat_skeleton));
    CHECK(out.attention.size() == (m.has_attention() ? 2u : 0u));
    for (const auto& p : m.parameters().items()) {
      CAPTURE(p.name);
      CHECK(p.value.grad().size() == p.value.numel());
    }
  }
}

TEST_CASE("gradient of the L1 loss matches finite differences for every table1 preset") {
  const auto skel = build_hand_skeleton();
  for (const char* name : {"table1_a", "table1_b", "table1_c", "table1_d", "table1_e"}) {
    CAPTURE(name);
    auto m = LiftingModel::build(tiny(name), skel, 11);
    auto x = random_tensor({2, 21, 2}, 12, -1.0, 1.0, true);
    auto y = random_tensor({2, 21, 3}, 13, -100.0, 100.0, false);
    std::vector<ad::Tensor> inputs{x};
    for (const auto& p : m.parameters().items()) inputs.push_back(p.value);
    // The loss is measured in head units so that finite-difference round-off
    // stays below the comparison floor.
    const auto r = grad_check(
        [&] { return ad::scale(l1_loss(m.forward(x, {}).prediction, y), 1.0 / nn::kHeadOutputScaleMm); }, inputs);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("positional encoding variants") {
  const auto skel = build_hand_skeleton();
  const auto hops = hop_distances(skel);
  auto cfg = tiny("table2_a");
  auto m = LiftingModel::build(cfg, skel, 2);
  auto p = m.embedding().positional();
  for (std::size_t i = 0; i < 21; ++i)
    for (std::size_t j = 0; j < 21; ++j)
      if (hops.wrist_dist[i] == hops.wrist_dist[j])
        for (std::size_t d = 0; d < cfg.width; ++d) CHECK(p[i * cfg.width + d] == p[j * cfg.width + d]);

  cfg.pe = PositionalEncoding::none;
  auto none = LiftingModel::build(cfg, skel, 2).embedding().positional();
  for (double v : none.values()) CHECK(v == 0.0);

  cfg.pe = PositionalEncoding::learnable;
  auto learn = LiftingModel::build(cfg, skel, 2).embedding().positional();
  CHECK(learn.values()[1 * cfg.width] != learn.values()[2 * cfg.width]);
}

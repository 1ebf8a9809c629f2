#include "doctest.h"

#include "handlift/data.hpp"
#include "handlift/metrics.hpp"
#include "handlift/rng.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace handlift;
using namespace handlift::metrics;

namespace {

std::vector<Pose3> random_poses(std::size_t n, std::uint64_t seed, double spread = 60.0) {
  CounterRng rng(seed, "test-poses");
  std::vector<Pose3> out(n);
  for (auto& p : out) {
    for (auto& q : p) q = {rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(-spread, spread)};
    p[0] = {0.0, 0.0, 0.0};
  }
  return out;
}

// Every joint of every pose at distance e from the target, in varying
// directions.
std::vector<Pose3> at_distance(const std::vector<Pose3>& gt, double e, std::uint64_t seed) {
  CounterRng rng(seed, "test-dir");
  auto out = gt;
  for (auto& p : out)
    for (auto& q : p) {
      const double a = rng.uniform(0.0, 6.283185307179586);
      const double b = rng.uniform(-1.0, 1.0);
      const double s = std::sqrt(1.0 - b * b);
      q = {q[0] + e * s * std::cos(a), q[1] + e * s * std::sin(a), q[2] + e * b};
    }
  return out;
}

ad::Tensor uniform_maps(std::size_t batch, std::size_t heads) {
  return ad::Tensor::full({batch, heads, kJointCount, kJointCount}, 1.0 / static_cast<double>(kJointCount));
}

ModelConfig tiny(const std::string& preset) {
  auto c = model_preset(preset);
  c.width = 8;
  c.depth = 2;
  c.heads = 2;
  return c;
}

}  // namespace

TEST_CASE("MPJPE matches a naive double loop") {
  const auto gt = random_poses(10, 1);
  const auto pred = random_poses(10, 2);
  double total = 0.0;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < kJointCount; ++j) {
      double sq = 0.0;
      for (int c = 0; c < 3; ++c) sq += (pred[i][j][c] - gt[i][j][c]) * (pred[i][j][c] - gt[i][j][c]);
      total += std::sqrt(sq);
    }
  CHECK(std::abs(mpjpe(pred, gt) - total / 210.0) < 1e-12);
  CHECK(mpjpe(gt, gt) == 0.0);

  auto shifted = gt;
  for (auto& p : shifted)
    for (auto& q : p) {
      q[0] += 3.0;
      q[1] += 4.0;
    }
  CHECK(mpjpe(shifted, gt) == doctest::Approx(5.0).epsilon(1e-14));
  for (double v : per_joint_mpjpe(shifted, gt)) CHECK(v == doctest::Approx(5.0).epsilon(1e-14));

  CHECK_THROWS_AS(mpjpe(std::span<const Pose3>(pred).first(9), gt), std::invalid_argument);
  CHECK_THROWS_AS(mpjpe(std::span<const Pose3>(), std::span<const Pose3>()), std::invalid_argument);
}

TEST_CASE("per-joint MPJPE") {
  const auto gt = random_poses(8, 3);
  const auto pred = random_poses(8, 4);
  const auto pj = per_joint_mpjpe(pred, gt);
  REQUIRE(pj.size() == kJointCount);
  CHECK(pj[0] == 0.0);
  double mean = 0.0;
  for (double v : pj) mean += v / kJointCount;
  CHECK(mean == doctest::Approx(mpjpe(pred, gt)).epsilon(1e-13));
  for (double v : per_joint_mpjpe(gt, gt)) CHECK(v == 0.0);
}

TEST_CASE("PCK curve and AUC") {
  const auto t = pck_thresholds();
  REQUIRE(t.size() == 51);
  for (std::size_t i = 0; i < 51; ++i) CHECK(t[i] == static_cast<double>(i));

  const auto gt = random_poses(12, 5);
  CHECK(pck_auc(gt, gt).auc == 1.0);
  for (const auto& p : pck_auc(gt, gt).curve) CHECK(p.fraction == 1.0);
  CHECK(pck_auc(at_distance(gt, 50.001, 1), gt, false).auc == 0.0);
  CHECK(pck_auc(at_distance(gt, 75.0, 1), gt).auc == 0.0);

  // A constant error of 25 mm is under the thresholds 26..50: 25 of 51.
  const std::vector<double> e25(300, 25.0);
  CHECK(pck_auc_from_errors(e25).auc == doctest::Approx(25.0 / 51.0).epsilon(1e-15));
  // A non-integer constant e is under the ceil(e)..50 thresholds.
  const std::vector<double> e_frac(10, 12.5);
  CHECK(pck_auc_from_errors(e_frac).auc == doctest::Approx(38.0 / 51.0).epsilon(1e-15));

  const auto pred = random_poses(12, 6, 30.0);
  const auto r = pck_auc(pred, gt);
  double mean = 0.0;
  for (std::size_t i = 0; i < r.curve.size(); ++i) {
    mean += r.curve[i].fraction / 51.0;
    if (i > 0) CHECK(r.curve[i].fraction >= r.curve[i - 1].fraction);
  }
  CHECK(r.auc == doctest::Approx(mean).epsilon(1e-14));

  // Direct count at every threshold.
  const auto e = joint_errors(pred, gt);
  for (const auto& p : r.curve) {
    std::size_t hit = 0;
    for (double v : e) hit += v < p.threshold_mm || (p.threshold_mm == 0.0 && v == 0.0);
    CHECK(p.fraction == doctest::Approx(static_cast<double>(hit) / static_cast<double>(e.size())).epsilon(1e-15));
  }

  // Dropping the wrist removes its guaranteed hits.
  const auto far = at_distance(gt, 100.0, 2);
  auto far_wrist = far;
  for (auto& p : far_wrist) p[0] = {0.0, 0.0, 0.0};
  CHECK(pck_auc(far_wrist, gt, true).auc == doctest::Approx(1.0 / 21.0).epsilon(1e-14));
  CHECK(pck_auc(far_wrist, gt, false).auc == 0.0);
  CHECK_THROWS_AS(pck_auc_from_errors(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("MPJPE and PCK are invariant under a shared rotation") {
  const auto gt = random_poses(10, 7);
  const auto pred = random_poses(10, 8, 40.0);
  const Eigen::Matrix3d r =
      (Eigen::AngleAxisd(0.7, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(-1.1, Eigen::Vector3d(1, 2, 3).normalized()))
          .toRotationMatrix();
  auto rotate = [&](std::vector<Pose3> v) {
    for (auto& p : v)
      for (auto& q : p) {
        const Eigen::Vector3d x = r * Eigen::Vector3d(q[0], q[1], q[2]);
        q = {x.x(), x.y(), x.z()};
      }
    return v;
  };
  const auto rp = rotate(pred);
  const auto rg = rotate(gt);
  CHECK(mpjpe(rp, rg) == doctest::Approx(mpjpe(pred, gt)).epsilon(1e-12));
  const auto a = pck_auc(pred, gt);
  const auto b = pck_auc(rp, rg);
  for (std::size_t i = 0; i < a.curve.size(); ++i) CHECK(a.curve[i].fraction == b.curve[i].fraction);
}

TEST_CASE("fingertip gap on a hand-built fixture") {
  std::vector<double> a(kJointCount, 0.0), b(kJointCount);
  for (std::size_t j = 0; j < kJointCount; ++j) b[j] = static_cast<double>(j);
  const auto g = fingertip_gap(a, b);
  // Tips 8 + 11 + 14 + 17 + 20 = 70; the other 15 non-wrist joints sum to
  // 1 + ... + 20 - 70 = 140.
  CHECK(g.tip_mm == doctest::Approx(14.0).epsilon(1e-15));
  CHECK(g.non_tip_mm == doctest::Approx(140.0 / 15.0).epsilon(1e-15));
  const auto swapped = fingertip_gap(b, a);
  CHECK(swapped.tip_mm == -g.tip_mm);
  CHECK_THROWS_AS(fingertip_gap(std::vector<double>(20), b), std::invalid_argument);
}

TEST_CASE("attention mass on skeleton edges") {
  const auto skel = build_hand_skeleton();
  // Independent count: 21 self entries plus both directions of every bone.
  std::size_t bones = 0;
  for (const auto& p : skel.parents()) bones += p.has_value();
  const double on = static_cast<double>(kJointCount + 2 * bones);
  const double expected_off = 1.0 - on / (21.0 * 21.0);
  CHECK(bones == 20);
  CHECK(expected_off == doctest::Approx(380.0 / 441.0).epsilon(1e-15));

  const auto s = attention_skeleton_mass({uniform_maps(3, 2), uniform_maps(3, 2)}, skel);
  CHECK(s.mass_off_skeleton == doctest::Approx(expected_off).epsilon(1e-12));
  CHECK(std::abs(s.mass_off_skeleton - 0.8617) < 1e-4);
  CHECK(s.mass_self == doctest::Approx(1.0 / 21.0).epsilon(1e-12));
  CHECK(s.mass_self + s.mass_skeleton + s.mass_off_skeleton == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.rows == 2u * 3u * 2u * 21u);
  REQUIRE(s.off_skeleton_by_layer_head.size() == 2);
  for (const auto& layer : s.off_skeleton_by_layer_head)
    for (double v : layer) CHECK(v == doctest::Approx(expected_off).epsilon(1e-12));

  std::vector<double> eye(kJointCount * kJointCount, 0.0);
  for (std::size_t j = 0; j < kJointCount; ++j) eye[j * kJointCount + j] = 1.0;
  const auto id = attention_skeleton_mass({ad::Tensor::from_values({1, 1, 21, 21}, eye)}, skel);
  CHECK(id.mass_off_skeleton == 0.0);
  CHECK(id.mass_self == 1.0);

  // Wrist attends only to the tip of the thumb: a single non-adjacent pair.
  auto tip = eye;
  tip[0] = 0.0;
  tip[kFingertips[0]] = 1.0;
  const auto t = attention_skeleton_mass({ad::Tensor::from_values({1, 1, 21, 21}, tip)}, skel);
  CHECK(t.mass_off_skeleton == doctest::Approx(1.0 / 21.0).epsilon(1e-15));
  REQUIRE_FALSE(t.top_nonadjacent.empty());
  CHECK(t.top_nonadjacent[0].from == 0);
  CHECK(t.top_nonadjacent[0].to == kFingertips[0]);
  CHECK(t.top_nonadjacent[0].mean_weight == 1.0);

  auto bad = uniform_maps(1, 1);
  bad.mutable_values()[5] += 0.01;
  CHECK_THROWS_AS(attention_skeleton_mass({bad}, skel), std::invalid_argument);
  CHECK_THROWS(attention_skeleton_mass({}, skel));
  CHECK_THROWS(attention_skeleton_mass({ad::Tensor::full({1, 1, 20, 20}, 0.05)}, skel));
}

TEST_CASE("model evaluation helpers") {
  const auto skel = build_hand_skeleton();
  auto cfg = default_synthetic_config();
  cfg.count = 40;
  const auto samples = generate_synthetic(cfg);
  const auto m = LiftingModel::build(tiny("table1_e"), skel, 3);

  const auto whole = predict(m, samples);
  const auto chunked = predict(m, samples, 7);
  REQUIRE(whole.size() == 40);
  for (std::size_t i = 0; i < 40; ++i) CHECK(whole[i] == chunked[i]);
  CHECK_THROWS(predict(m, samples, 0));

  const auto gt = targets(samples);
  const auto rep = evaluate(m, samples);
  CHECK(rep.mpjpe_mm == mpjpe(whole, gt));
  CHECK(rep.n_samples == 40);
  CHECK(rep.per_joint_mm.size() == kJointCount);
  CHECK(rep.pck.size() == 51);

  const auto x = pack_inputs(std::span<const PoseSample>(samples).first(2));
  CHECK(x.shape() == ad::Shape{2, 21, 2});
  CHECK(x[42 + 3] == samples[1].x2d[1][1]);

  const auto att = evaluate_attention(m, samples, skel, 16);
  CHECK(att.mass_self + att.mass_skeleton + att.mass_off_skeleton == doctest::Approx(1.0).epsilon(1e-9));
  const auto gat = evaluate_attention(LiftingModel::build(tiny("table1_d"), skel, 3), samples, skel);
  CHECK(gat.mass_off_skeleton == 0.0);
  CHECK_THROWS_AS(evaluate_attention(LiftingModel::build(tiny("table1_b"), skel, 3), samples, skel),
                  std::invalid_argument);
}

TEST_CASE("noise sweep") {
  const auto skel = build_hand_skeleton();
  auto cfg = default_synthetic_config();
  cfg.count = 30;
  const auto samples = generate_synthetic(cfg);
  const auto a = LiftingModel::build(tiny("table1_e"), skel, 1);
  const auto b = LiftingModel::build(tiny("table1_c"), skel, 1);
  const std::vector<double> sigmas{0.0, 2.0, 5.0};
  const auto rows = noise_sweep(a, &b, samples, sigmas, cfg.camera, 9);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].mpjpe_a == evaluate(a, samples).mpjpe_mm);
  CHECK(rows[0].mpjpe_b.value() == evaluate(b, samples).mpjpe_mm);
  CHECK(rows[1].relative_gap.value() == (rows[1].mpjpe_b.value() - rows[1].mpjpe_a) / rows[1].mpjpe_b.value());
  // Paired noise: the rows reproduce evaluation on the same noisy inputs.
  const auto noisy = add_2d_noise(samples, 5.0, cfg.camera, 9);
  CHECK(rows[2].mpjpe_a == evaluate(a, noisy).mpjpe_mm);
  CHECK(rows[2].mpjpe_b.value() == evaluate(b, noisy).mpjpe_mm);

  const auto again = noise_sweep(a, &b, samples, sigmas, cfg.camera, 9);
  CHECK(noise_sweep_csv(rows) == noise_sweep_csv(again));
  const auto csv = noise_sweep_csv(rows);
  CHECK(csv.rfind("sigma_px,mpjpe_a,mpjpe_b,relative_gap\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  const auto single = noise_sweep(a, nullptr, samples, sigmas, cfg.camera, 9);
  CHECK_FALSE(single[0].mpjpe_b.has_value());
  CHECK(noise_sweep_csv(single).rfind("sigma_px,mpjpe_a\n", 0) == 0);
  CHECK(single[1].mpjpe_a == rows[1].mpjpe_a);
}

TEST_CASE("serialisation") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 10.09, 123456789.0}) CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(0.5) == "0.5");

  const auto skel = build_hand_skeleton();
  std::vector<double> pj(kJointCount, 1.5), pj_b(kJointCount, 2.0);
  const auto csv = per_joint_csv(skel, pj, pj_b);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "joint,mpjpe_mm,mpjpe_b_mm");
  std::getline(is, line);
  CHECK(line == skel.joint_names()[0] + ",1.5,2");
  CHECK(per_joint_csv(skel, pj).rfind("joint,mpjpe_mm\n", 0) == 0);

  const auto gt = random_poses(4, 9);
  const auto rep = make_report(gt, gt);
  const auto json = report_to_json(rep, nullptr, &skel);
  CHECK(json.find("\"mpjpe_mm\": 0.0") != std::string::npos);
  CHECK(json.find("\"auc\": 1.0") != std::string::npos);
  CHECK(json.find("\"joint_names\"") != std::string::npos);
  const auto att = attention_skeleton_mass({uniform_maps(1, 1)}, skel);
  CHECK(report_to_json(rep, &att, &skel).find("\"mass_off_skeleton\"") != std::string::npos);
}

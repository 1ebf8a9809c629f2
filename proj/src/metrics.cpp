#include "handlift/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace handlift::metrics {

namespace {

void check_same(std::span<const Pose3> pred, std::span<const Pose3> gt) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("metrics: prediction count " + std::to_string(pred.size()) + " != target count " +
                                std::to_string(gt.size()));
  }
}

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::vector<double> joint_errors(std::span<const Pose3> pred, std::span<const Pose3> gt) {
  check_same(pred, gt);
  std::vector<double> e;
  e.reserve(pred.size() * kJointCount);
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < kJointCount; ++j) e.push_back(distance(pred[i][j], gt[i][j]));
  return e;
}

double mpjpe(std::span<const Pose3> pred, std::span<const Pose3> gt) {
  const auto e = joint_errors(pred, gt);
  if (e.empty()) throw std::invalid_argument("mpjpe: empty input");
  double total = 0.0;
  for (double v : e) total += v;
  return total / static_cast<double>(e.size());
}

std::vector<double> per_joint_mpjpe(std::span<const Pose3> pred, std::span<const Pose3> gt) {
  const auto e = joint_errors(pred, gt);
  if (e.empty()) throw std::invalid_argument("per_joint_mpjpe: empty input");
  std::vector<double> out(kJointCount, 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < kJointCount; ++j) out[j] += e[i * kJointCount + j];
  for (auto& v : out) v /= static_cast<double>(pred.size());
  return out;
}

std::vector<double> pck_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= kPckMaxThresholdMm; ++i) t.push_back(static_cast<double>(i));
  return t;
}

PckResult pck_auc_from_errors(std::span<const double> errors) {
  if (errors.empty()) throw std::invalid_argument("pck: empty input");
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  PckResult r;
  double total = 0.0;
  for (double t : pck_thresholds()) {
    // error < t, except that the t = 0 point counts exact zeros.
    const auto below = (t > 0.0 ? std::lower_bound(sorted.begin(), sorted.end(), t)
                                : std::upper_bound(sorted.begin(), sorted.end(), 0.0)) -
                       sorted.begin();
    const double frac = static_cast<double>(below) / static_cast<double>(sorted.size());
    r.curve.push_back({t, frac});
    total += frac;
  }
  r.auc = total / static_cast<double>(r.curve.size());
  return r;
}

PckResult pck_auc(std::span<const Pose3> pred, std::span<const Pose3> gt, bool include_wrist) {
  auto e = joint_errors(pred, gt);
  if (!include_wrist) {
    std::vector<double> kept;
    kept.reserve(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (i % kJointCount != kWrist) kept.push_back(e[i]);
    }
    e.swap(kept);
  }
  return pck_auc_from_errors(e);
}

EvalReport make_report(std::span<const Pose3> pred, std::span<const Pose3> gt, bool include_wrist) {
  EvalReport r;
  r.mpjpe_mm = mpjpe(pred, gt);
  const auto pck = pck_auc(pred, gt, include_wrist);
  r.auc = pck.auc;
  r.pck = pck.curve;
  r.per_joint_mm = per_joint_mpjpe(pred, gt);
  r.n_samples = pred.size();
  return r;
}

TipGap fingertip_gap(std::span<const double> a, std::span<const double> b) {
  if (a.size() != kJointCount || b.size() != kJointCount) {
    throw std::invalid_argument("fingertip_gap: expected per-joint vectors of length 21");
  }
  TipGap g;
  std::size_t tips = 0, others = 0;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    if (j == kWrist) continue;
    const double gain = b[j] - a[j];
    if (std::find(kFingertips.begin(), kFingertips.end(), j) != kFingertips.end()) {
      g.tip_mm += gain;
      ++tips;
    } else {
      g.non_tip_mm += gain;
      ++others;
    }
  }
  g.tip_mm /= static_cast<double>(tips);
  g.non_tip_mm /= static_cast<double>(others);
  return g;
}

// ---------------------------------------------------------------- attention mass

AttentionMassAccumulator::AttentionMassAccumulator(const SkeletonGraph& skeleton)
    : joints_(skeleton.joint_count()), pair_sum_(joints_ * joints_, 0.0) {
  adjacent_.assign(joints_, std::vector<bool>(joints_, false));
  for (const auto& e : skeleton.edges()) {
    adjacent_[e.parent][e.child] = true;
    adjacent_[e.child][e.parent] = true;
  }
}

void AttentionMassAccumulator::add(const std::vector<ad::Tensor>& weights) {
  if (weights.empty()) throw std::invalid_argument("attention mass: no attention maps");
  if (layers_ == 0) {
    layers_ = weights.size();
    heads_ = weights.front().dim(-3);
    off_by_layer_head_.assign(layers_, std::vector<double>(heads_, 0.0));
    rows_by_layer_head_.assign(layers_, std::vector<std::size_t>(heads_, 0));
  }
  if (weights.size() != layers_) throw std::invalid_argument("attention mass: layer count changed between batches");
  const std::size_t n = joints_;
  for (std::size_t l = 0; l < layers_; ++l) {
    const auto& w = weights[l];
    if (w.rank() < 3 || w.dim(-1) != n || w.dim(-2) != n || w.dim(-3) != heads_) {
      throw ad::ShapeError("attention mass: expected [.., H, J, J] maps, got " + ad::shape_string(w.shape()));
    }
    const auto v = w.values();
    const std::size_t maps = w.numel() / (n * n);
    for (std::size_t m = 0; m < maps; ++m) {
      const std::size_t head = m % heads_;
      const double* map = v.data() + m * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        double self = 0.0, skel = 0.0, off = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double x = map[i * n + j];
          if (i == j) {
            self += x;
          } else if (adjacent_[i][j]) {
            skel += x;
          } else {
            off += x;
          }
          pair_sum_[i * n + j] += x;
        }
        if (std::fabs(self + skel + off - 1.0) > 1e-9) {
          throw std::invalid_argument("attention mass: row " + std::to_string(i) + " sums to " +
                                      format_double(self + skel + off));
        }
        self_ += self;
        skeleton_ += skel;
        off_ += off;
        off_by_layer_head_[l][head] += off;
        ++rows_by_layer_head_[l][head];
        ++rows_;
      }
      ++maps_;
    }
  }
}

AttentionStats AttentionMassAccumulator::result(std::size_t top_k) const {
  if (rows_ == 0) throw std::logic_error("attention mass: nothing accumulated");
  AttentionStats s;
  const double r = static_cast<double>(rows_);
  s.mass_self = self_ / r;
  s.mass_skeleton = skeleton_ / r;
  s.mass_off_skeleton = off_ / r;
  s.rows = rows_;
  s.off_skeleton_by_layer_head = off_by_layer_head_;
  for (std::size_t l = 0; l < layers_; ++l)
    for (std::size_t h = 0; h < heads_; ++h)
      if (rows_by_layer_head_[l][h] > 0) s.off_skeleton_by_layer_head[l][h] /= static_cast<double>(rows_by_layer_head_[l][h]);
  for (std::size_t i = 0; i < joints_; ++i)
    for (std::size_t j = 0; j < joints_; ++j)
      if (i != j && !adjacent_[i][j]) {
        s.top_nonadjacent.push_back({i, j, pair_sum_[i * joints_ + j] / static_cast<double>(maps_)});
      }
  std::stable_sort(s.top_nonadjacent.begin(), s.top_nonadjacent.end(),
                   [](const PairWeight& a, const PairWeight& b) { return a.mean_weight > b.mean_weight; });
  if (s.top_nonadjacent.size() > top_k) s.top_nonadjacent.resize(top_k);
  return s;
}

AttentionStats attention_skeleton_mass(const std::vector<ad::Tensor>& weights, const SkeletonGraph& skeleton) {
  AttentionMassAccumulator acc(skeleton);
  acc.add(weights);
  return acc.result();
}

// ---------------------------------------------------------------- evaluation

ad::Tensor pack_inputs(std::span<const PoseSample> samples) {
  std::vector<double> v;
  v.reserve(samples.size() * kJointCount * 2);
  for (const auto& s : samples)
    for (const auto& uv : s.x2d) v.insert(v.end(), uv.begin(), uv.end());
  return ad::Tensor::from_values({samples.size(), kJointCount, 2}, std::move(v));
}

std::vector<Pose3> targets(std::span<const PoseSample> samples) {
  std::vector<Pose3> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.y3d);
  return out;
}

std::vector<Pose3> predict(const LiftingModel& model, std::span<const PoseSample> samples, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("predict: batch size must be positive");
  std::vector<Pose3> out;
  out.reserve(samples.size());
  const nn::ForwardContext eval_ctx{};
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const auto chunk = samples.subspan(start, std::min(batch_size, samples.size() - start));
    const ad::Tensor pred = model.forward(pack_inputs(chunk), eval_ctx).prediction;
    const auto y = pred.values();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      Pose3 p{};
      for (std::size_t j = 0; j < kJointCount; ++j)
        for (std::size_t c = 0; c < 3; ++c) p[j][c] = y[(i * kJointCount + j) * 3 + c];
      out.push_back(p);
    }
  }
  return out;
}

EvalReport evaluate(const LiftingModel& model, std::span<const PoseSample> samples, bool include_wrist) {
  const auto pred = predict(model, samples);
  const auto gt = targets(samples);
  return make_report(pred, gt, include_wrist);
}

AttentionStats evaluate_attention(const LiftingModel& model, std::span<const PoseSample> samples,
                                  const SkeletonGraph& skeleton, std::size_t batch_size) {
  if (!model.has_attention()) {
    throw std::invalid_argument("attention statistics requested for a " + to_string(model.config().spatial) +
                                " model, which has no attention maps");
  }
  AttentionMassAccumulator acc(skeleton);
  const nn::ForwardContext eval_ctx{};
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const auto chunk = samples.subspan(start, std::min(batch_size, samples.size() - start));
    acc.add(model.forward(pack_inputs(chunk), eval_ctx, true).attention);
  }
  return acc.result();
}

std::vector<NoiseRow> noise_sweep(const LiftingModel& model_a, const LiftingModel* model_b,
                                  std::span<const PoseSample> samples, std::span<const double> sigmas_px,
                                  const CameraIntrinsics& cam, std::uint64_t seed) {
  const std::vector<PoseSample> clean(samples.begin(), samples.end());
  const auto gt = targets(samples);
  std::vector<NoiseRow> rows;
  for (double sigma : sigmas_px) {
    const auto noisy = add_2d_noise(clean, sigma, cam, seed);
    NoiseRow row{sigma, mpjpe(predict(model_a, noisy), gt), std::nullopt, std::nullopt};
    if (model_b) {
      row.mpjpe_b = mpjpe(predict(*model_b, noisy), gt);
      row.relative_gap = (*row.mpjpe_b - row.mpjpe_a) / *row.mpjpe_b;
    }
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------- serialisation

std::string report_to_json(const EvalReport& report, const AttentionStats* attention, const SkeletonGraph* skeleton) {
  nlohmann::ordered_json j;
  j["mpjpe_mm"] = report.mpjpe_mm;
  j["auc"] = report.auc;
  j["n_samples"] = report.n_samples;
  auto pck = nlohmann::ordered_json::array();
  for (const auto& p : report.pck) pck.push_back({p.threshold_mm, p.fraction});
  j["pck"] = pck;
  j["per_joint_mm"] = report.per_joint_mm;
  if (skeleton) j["joint_names"] = skeleton->joint_names();
  if (attention) {
    nlohmann::ordered_json a;
    a["mass_self"] = attention->mass_self;
    a["mass_skeleton"] = attention->mass_skeleton;
    a["mass_off_skeleton"] = attention->mass_off_skeleton;
    a["off_skeleton_by_layer_head"] = attention->off_skeleton_by_layer_head;
    auto pairs = nlohmann::ordered_json::array();
    for (const auto& p : attention->top_nonadjacent) {
      nlohmann::ordered_json e;
      e["from"] = skeleton ? nlohmann::ordered_json(skeleton->joint_names()[p.from]) : nlohmann::ordered_json(p.from);
      e["to"] = skeleton ? nlohmann::ordered_json(skeleton->joint_names()[p.to]) : nlohmann::ordered_json(p.to);
      e["mean_weight"] = p.mean_weight;
      pairs.push_back(e);
    }
    a["top_nonadjacent"] = pairs;
    j["attention"] = a;
  }
  return j.dump(2) + "\n";
}

std::string noise_sweep_csv(std::span<const NoiseRow> rows) {
  const bool pair = !rows.empty() && rows.front().mpjpe_b.has_value();
  std::ostringstream os;
  os << "sigma_px,mpjpe_a" << (pair ? ",mpjpe_b,relative_gap" : "") << "\n";
  for (const auto& r : rows) {
    os << format_double(r.sigma_px) << ',' << format_double(r.mpjpe_a);
    if (pair) os << ',' << format_double(r.mpjpe_b.value()) << ',' << format_double(r.relative_gap.value());
    os << '\n';
  }
  return os.str();
}

std::string per_joint_csv(const SkeletonGraph& skeleton, std::span<const double> per_joint,
                          std::span<const double> per_joint_b) {
  std::ostringstream os;
  const bool pair = !per_joint_b.empty();
  os << "joint,mpjpe_mm" << (pair ? ",mpjpe_b_mm" : "") << "\n";
  for (std::size_t j = 0; j < per_joint.size(); ++j) {
    os << skeleton.joint_names().at(j) << ',' << format_double(per_joint[j]);
    if (pair) os << ',' << format_double(per_joint_b[j]);
    os << '\n';
  }
  return os.str();
}

}  // namespace handlift::metrics

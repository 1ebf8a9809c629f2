#pragma once

#include "handlift/data.hpp"
#include "handlift/model.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace handlift::metrics {

// PCK thresholds are the integers 0..50 mm inclusive; a joint counts as
// correct when its error is strictly below the threshold, and the 0 mm point
// counts exactly-zero errors. AUC is the arithmetic mean of the curve over
// those 51 points.
inline constexpr int kPckMaxThresholdMm = 50;

struct PckPoint {
  double threshold_mm;
  double fraction;
};

struct PckResult {
  std::vector<PckPoint> curve;
  double auc = 0.0;
};

struct EvalReport {
  double mpjpe_mm = 0.0;
  double auc = 0.0;
  std::vector<PckPoint> pck;
  std::vector<double> per_joint_mm;
  std::size_t n_samples = 0;
};

// Euclidean error of every (sample, joint) pair, sample-major.
std::vector<double> joint_errors(std::span<const Pose3> pred, std::span<const Pose3> gt);

double mpjpe(std::span<const Pose3> pred, std::span<const Pose3> gt);
std::vector<double> per_joint_mpjpe(std::span<const Pose3> pred, std::span<const Pose3> gt);

std::vector<double> pck_thresholds();
PckResult pck_auc_from_errors(std::span<const double> errors);
// include_wrist = false drops joint 0 (always zero error under wrist-relative
// targets) before computing the curve.
PckResult pck_auc(std::span<const Pose3> pred, std::span<const Pose3> gt, bool include_wrist = true);

EvalReport make_report(std::span<const Pose3> pred, std::span<const Pose3> gt, bool include_wrist = true);

// Mean per-joint improvement of model A over model B (positive = A better) on
// the fingertips versus the remaining non-wrist joints.
struct TipGap {
  double tip_mm = 0.0;
  double non_tip_mm = 0.0;
};
TipGap fingertip_gap(std::span<const double> per_joint_a, std::span<const double> per_joint_b);

// ---------------------------------------------------------------------------
// Attention mass on skeleton edges

struct PairWeight {
  std::size_t from;
  std::size_t to;
  double mean_weight;
};

struct AttentionStats {
  double mass_self = 0.0;
  double mass_skeleton = 0.0;
  double mass_off_skeleton = 0.0;
  std::vector<std::vector<double>> off_skeleton_by_layer_head;  // [layer][head]
  std::vector<PairWeight> top_nonadjacent;                      // descending weight
  std::size_t rows = 0;
};

// Averages over every attention row seen. Each row must sum to 1 within 1e-9.
class AttentionMassAccumulator {
 public:
  explicit AttentionMassAccumulator(const SkeletonGraph& skeleton);

  // weights: one [B, H, J, J] tensor per layer.
  void add(const std::vector<ad::Tensor>& weights);
  AttentionStats result(std::size_t top_k = 10) const;

 private:
  std::vector<std::vector<bool>> adjacent_;
  std::size_t joints_;
  std::size_t layers_ = 0, heads_ = 0;
  double self_ = 0.0, skeleton_ = 0.0, off_ = 0.0;
  std::size_t rows_ = 0;
  std::vector<std::vector<double>> off_by_layer_head_;
  std::vector<std::vector<std::size_t>> rows_by_layer_head_;
  std::vector<double> pair_sum_;  // J x J
  std::size_t maps_ = 0;          // number of J x J maps accumulated
};

AttentionStats attention_skeleton_mass(const std::vector<ad::Tensor>& weights, const SkeletonGraph& skeleton);

// ---------------------------------------------------------------------------
// Model evaluation

ad::Tensor pack_inputs(std::span<const PoseSample> samples);
std::vector<Pose3> predict(const LiftingModel& model, std::span<const PoseSample> samples, std::size_t batch_size = 256);
std::vector<Pose3> targets(std::span<const PoseSample> samples);

EvalReport evaluate(const LiftingModel& model, std::span<const PoseSample> samples, bool include_wrist = true);

// Throws std::invalid_argument for models without attention maps.
AttentionStats evaluate_attention(const LiftingModel& model, std::span<const PoseSample> samples,
                                  const SkeletonGraph& skeleton, std::size_t batch_size = 256);

struct NoiseRow {
  double sigma_px;
  double mpjpe_a;
  std::optional<double> mpjpe_b;
  std::optional<double> relative_gap;  // (b - a) / b
};

// Both models see the same noise realisation for a given sigma; the unit
// normal draws are also shared across sigmas.
std::vector<NoiseRow> noise_sweep(const LiftingModel& model_a, const LiftingModel* model_b,
                                  std::span<const PoseSample> samples, std::span<const double> sigmas_px,
                                  const CameraIntrinsics& cam, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Serialisation

std::string report_to_json(const EvalReport& report, const AttentionStats* attention = nullptr,
                           const SkeletonGraph* skeleton = nullptr);
// header: sigma_px,mpjpe_a[,mpjpe_b,relative_gap]
std::string noise_sweep_csv(std::span<const NoiseRow> rows);
// header: joint,mpjpe_mm[,mpjpe_b_mm]
std::string per_joint_csv(const SkeletonGraph& skeleton, std::span<const double> per_joint,
                          std::span<const double> per_joint_b = {});

// Round-trip exact decimal rendering of a double.
std::string format_double(double v);

}  // namespace handlift::metrics

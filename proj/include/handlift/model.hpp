#pragma once

#include "handlift/nn.hpp"
#include "handlift/skeleton.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace handlift {

enum class SpatialKind { gcn_1hop, gcn_multihop, gat_skeleton, attention };
using nn::PositionalEncoding;

std::string to_string(SpatialKind kind);
std::string to_string(PositionalEncoding pe);
SpatialKind parse_spatial_kind(std::string_view text);
PositionalEncoding parse_positional_encoding(std::string_view text);

struct ModelConfig {
  SpatialKind spatial = SpatialKind::attention;
  PositionalEncoding pe = PositionalEncoding::graph_distance;
  std::size_t width = 256;
  std::size_t depth = 4;
  std::size_t heads = 8;
  double dropout = 0.1;

  // Throws std::invalid_argument on width % heads != 0, depth == 0, or a
  // dropout rate outside [0, 1).
  void validate() const;

  std::map<std::string, std::string> to_key_values() const;
  static ModelConfig from_key_values(const std::map<std::string, std::string>& kv);

  bool operator==(const ModelConfig&) const = default;
};

// "table1_a".."table1_e" and "table2_a".."table2_c".
ModelConfig model_preset(std::string_view name);
const std::vector<std::string>& model_preset_names();

struct ModelOutput {
  ad::Tensor prediction;              // [B, J, 3], wrist-relative mm
  std::vector<ad::Tensor> attention;  // per layer [B, H, J, J]; empty for GCN variants
};

class LiftingModel {
 public:
  // Deterministic in `seed` (the "init" stream).
  static LiftingModel build(const ModelConfig& config, const SkeletonGraph& skeleton, std::uint64_t seed);

  LiftingModel(LiftingModel&&) = default;
  LiftingModel& operator=(LiftingModel&&) = default;
  LiftingModel(const LiftingModel&) = delete;
  LiftingModel& operator=(const LiftingModel&) = delete;

  // x is [B, J, 2] normalised coordinates.
  ModelOutput forward(const ad::Tensor& x, const nn::ForwardContext& ctx, bool return_attention = false) const;

  const ModelConfig& config() const { return config_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }
  std::size_t joint_count() const { return embedding_.joints; }
  bool has_attention() const;

  const nn::JointEmbedding& embedding() const { return embedding_; }

 private:
  LiftingModel() = default;

  using Block = std::variant<nn::AttentionLayer, nn::GcnBlock, nn::GatBlock>;

  ModelConfig config_;
  nn::ParameterSet params_;
  nn::JointEmbedding embedding_;
  std::vector<Block> layers_;
  nn::RegressionHead head_;
};

std::size_t count_parameters(const LiftingModel& model);

}  // namespace handlift

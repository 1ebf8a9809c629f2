#pragma once

#include "handlift/autodiff.hpp"
#include "handlift/rng.hpp"
#include "handlift/skeleton.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace handlift::nn {

struct Parameter {
  std::string name;
  ad::Tensor value;
  bool decay;  // receives decoupled weight decay
};

class ParameterSet {
 public:
  ad::Tensor add(std::string name, ad::Tensor value, bool decay);

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  const Parameter* find(std::string_view name) const;

  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Parameter> items_;
};

// Draws initial values in registration order from the "init" stream of a seed.
//   linear weights/biases: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
//   identity / positional tables: N(0, 0.02)
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed, "init") {}

  ad::Tensor uniform(ad::Shape shape, double bound);
  ad::Tensor normal(ad::Shape shape, double stddev);

 private:
  CounterRng rng_;
};

inline constexpr double kTableInitStd = 0.02;

// The head's linear output is read in units of this many millimetres, so
// hand-sized targets (tens of mm) sit at unit scale for the optimiser.
inline constexpr double kHeadOutputScaleMm = 100.0;

struct LayerNormParams {
  ad::Tensor gain;
  ad::Tensor bias;
};

struct Linear {
  ad::Tensor weight;  // [out, in]
  ad::Tensor bias;    // [out] or undefined
};

struct FeedForward {
  Linear up;    // D -> 4D
  Linear down;  // 4D -> D
};

// Dropout needs a stream only when training with a nonzero rate.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  CounterRng* rng = nullptr;
};

enum class PositionalEncoding { graph_distance, none, learnable };

struct JointEmbedding {
  std::size_t joints = 0;
  std::size_t width = 0;
  ad::Tensor projection;  // W_e [D, 2], no bias: e_j plays that role
  ad::Tensor identity;    // e [J, D]
  PositionalEncoding pe = PositionalEncoding::none;
  ad::Tensor pe_table;                // [5, D] graph_distance, [J, D] learnable
  std::vector<std::size_t> pe_index;  // row of pe_table used by each joint
  LayerNormParams ln;

  // p as a [J, D] tensor; all zeros for PositionalEncoding::none.
  ad::Tensor positional() const;
};

struct AttentionLayer {
  std::size_t heads = 1;
  LayerNormParams ln1, ln2;
  Linear query, key, value, output;
  FeedForward ffn;
};

struct GcnBlock {
  ad::Tensor adjacency;  // [J, J], constant
  LayerNormParams ln1, ln2;
  Linear transform;
  FeedForward ffn;
};

struct GatBlock {
  AttentionLayer attention;
  ad::Mask mask;  // skeleton edges + self
};

struct RegressionHead {
  LayerNormParams ln;
  Linear hidden;  // D -> max(1, D/2)
  Linear output;  // -> 3
};

struct BlockOutput {
  ad::Tensor hidden;
  ad::Tensor weights;  // [.., H, J, J] detached; undefined unless requested
};

std::size_t head_hidden_width(std::size_t width);

LayerNormParams make_layer_norm(ParameterSet& params, const std::string& prefix, std::size_t width);
Linear make_linear(ParameterSet& params, Initializer& init, const std::string& prefix, std::size_t in, std::size_t out,
                   bool with_bias = true);
JointEmbedding make_joint_embedding(ParameterSet& params, Initializer& init, const SkeletonGraph& skeleton,
                                    std::size_t width, PositionalEncoding pe);
AttentionLayer make_attention_layer(ParameterSet& params, Initializer& init, const std::string& prefix,
                                    std::size_t width, std::size_t heads);
GcnBlock make_gcn_block(ParameterSet& params, Initializer& init, const std::string& prefix, std::size_t width,
                        const AdjacencyMatrix& adjacency);
GatBlock make_gat_block(ParameterSet& params, Initializer& init, const std::string& prefix, std::size_t width,
                        std::size_t heads, const SkeletonGraph& skeleton);
RegressionHead make_regression_head(ParameterSet& params, Initializer& init, std::size_t width);

ad::Mask mask_from_adjacency(const AdjacencyMatrix& m);

// x [.., J, 2] -> LN(W_e x + e + p), [.., J, D].
ad::Tensor embed(const ad::Tensor& x, const JointEmbedding& emb);

ad::Tensor feed_forward(const ad::Tensor& x, const FeedForward& ffn, const ForwardContext& ctx);

// z = h + MHA(LN(h)); h' = z + FFN(LN(z)). With `mask`, logits outside it are
// excluded from the softmax.
BlockOutput attention_forward(const ad::Tensor& h, const AttentionLayer& layer, const ForwardContext& ctx,
                              bool return_weights, const ad::Mask* mask = nullptr);

// Same residual skeleton; the mixing sublayer is ReLU(W Â LN(h)).
ad::Tensor gcn_forward(const ad::Tensor& h, const GcnBlock& block, const ForwardContext& ctx);

BlockOutput gat_forward(const ad::Tensor& h, const GatBlock& block, const ForwardContext& ctx, bool return_weights);

// y_j = kHeadOutputScaleMm * W_o GELU(W_r LN(h_j)), [.., J, 3], in mm.
ad::Tensor head_forward(const ad::Tensor& h, const RegressionHead& head);

// ---------------------------------------------------------------------------
// Flat named-array file. Little-endian throughout:
//
//   "HLPF"            4 bytes magic
//   u32 version       = 1
//   u32 meta_len      followed by meta_len bytes of "key=value\n" lines
//   u32 array_count
//   per array:
//     u32 name_len, name bytes (UTF-8)
//     u32 rank, u64 dims[rank]
//     f64 values[prod(dims)]
// ---------------------------------------------------------------------------

struct NamedArray {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

struct ParameterFile {
  std::map<std::string, std::string> meta;
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const;
};

void write_parameter_file(const std::filesystem::path& path, const ParameterFile& file);
ParameterFile read_parameter_file(const std::filesystem::path& path);

// Every parameter of `params`, in registration order.
std::vector<NamedArray> snapshot(const ParameterSet& params);

// Copies values by name. Throws if a parameter is missing or its shape differs.
void restore(ParameterSet& params, const ParameterFile& file);

}  // namespace handlift::nn

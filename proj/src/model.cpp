#include "handlift/model.hpp"

#include <algorithm>
#include <charconv>
#include <stdexcept>

namespace handlift {

std::string to_string(SpatialKind kind) {
  switch (kind) {
    case SpatialKind::gcn_1hop: return "gcn_1hop";
    case SpatialKind::gcn_multihop: return "gcn_multihop";
    case SpatialKind::gat_skeleton: return "gat_skeleton";
    case SpatialKind::attention: return "attention";
  }
  return "?";
}

std::string to_string(PositionalEncoding pe) {
  switch (pe) {
    case PositionalEncoding::graph_distance: return "graph_distance";
    case PositionalEncoding::none: return "none";
    case PositionalEncoding::learnable: return "learnable";
  }
  return "?";
}

SpatialKind parse_spatial_kind(std::string_view text) {
  for (auto k : {SpatialKind::gcn_1hop, SpatialKind::gcn_multihop, SpatialKind::gat_skeleton, SpatialKind::attention}) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown spatial block '" + std::string(text) +
                              "' (expected gcn_1hop, gcn_multihop, gat_skeleton, attention)");
}

PositionalEncoding parse_positional_encoding(std::string_view text) {
  for (auto k : {PositionalEncoding::graph_distance, PositionalEncoding::none, PositionalEncoding::learnable}) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown positional encoding '" + std::string(text) +
                              "' (expected graph_distance, none, learnable)");
}

void ModelConfig::validate() const {
  if (depth == 0) throw std::invalid_argument("model config: depth must be >= 1");
  if (width == 0) throw std::invalid_argument("model config: width must be >= 1");
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("model config: width " + std::to_string(width) + " is not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model config: dropout must lie in [0, 1)");
}

std::map<std::string, std::string> ModelConfig::to_key_values() const {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, dropout);
  return {{"spatial", to_string(spatial)},
          {"pe", to_string(pe)},
          {"width", std::to_string(width)},
          {"depth", std::to_string(depth)},
          {"heads", std::to_string(heads)},
          {"dropout", std::string(buf, end)}};
}

namespace {

std::size_t parse_size(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw std::invalid_argument("model config: missing key '" + key + "'");
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc() || p != it->second.data() + it->second.size()) {
    throw std::invalid_argument("model config: '" + key + "' is not an integer: " + it->second);
  }
  return v;
}

}  // namespace

ModelConfig ModelConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument("model config: missing key '" + key + "'");
    return it->second;
  };
  c.spatial = parse_spatial_kind(need("spatial"));
  c.pe = parse_positional_encoding(need("pe"));
  c.width = parse_size(kv, "width");
  c.depth = parse_size(kv, "depth");
  c.heads = parse_size(kv, "heads");
  const auto& d = need("dropout");
  auto [p, ec] = std::from_chars(d.data(), d.data() + d.size(), c.dropout);
  if (ec != std::errc() || p != d.data() + d.size()) throw std::invalid_argument("model config: bad dropout " + d);
  c.validate();
  return c;
}

const std::vector<std::string>& model_preset_names() {
  static const std::vector<std::string> names = {"table1_a", "table1_b", "table1_c", "table1_d",
                                                 "table1_e", "table2_a", "table2_b", "table2_c"};
  return names;
}

ModelConfig model_preset(std::string_view name) {
  ModelConfig c;  // attention, graph-distance PE, D=256, L=4, 8 heads
  if (name == "table1_a") {
    c.spatial = SpatialKind::gcn_1hop;
  } else if (name == "table1_b") {
    c.spatial = SpatialKind::gcn_1hop;
    c.width = 296;
  } else if (name == "table1_c") {
    c.spatial = SpatialKind::gcn_multihop;
    c.width = 296;
  } else if (name == "table1_d") {
    c.spatial = SpatialKind::gat_skeleton;
  } else if (name == "table1_e" || name == "table2_a") {
  } else if (name == "table2_b") {
    c.pe = PositionalEncoding::none;
  } else if (name == "table2_c") {
    c.pe = PositionalEncoding::learnable;
  } else {
    std::string list;
    for (const auto& n : model_preset_names()) list += (list.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown preset '" + std::string(name) + "'; available: " + list);
  }
  return c;
}

LiftingModel LiftingModel::build(const ModelConfig& config, const SkeletonGraph& skeleton, std::uint64_t seed) {
  config.validate();
  LiftingModel m;
  m.config_ = config;
  nn::Initializer init(seed);
  m.embedding_ = nn::make_joint_embedding(m.params_, init, skeleton, config.width, config.pe);

  AdjacencyMatrix adjacency;
  if (config.spatial == SpatialKind::gcn_1hop) adjacency = normalized_adjacency(skeleton);
  if (config.spatial == SpatialKind::gcn_multihop) adjacency = multihop_adjacency(skeleton);

  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::string prefix = "layers." + std::to_string(l);
    switch (config.spatial) {
      case SpatialKind::attention:
        m.layers_.emplace_back(nn::make_attention_layer(m.params_, init, prefix, config.width, config.heads));
        break;
      case SpatialKind::gat_skeleton:
        m.layers_.emplace_back(nn::make_gat_block(m.params_, init, prefix, config.width, config.heads, skeleton));
        break;
      case SpatialKind::gcn_1hop:
      case SpatialKind::gcn_multihop:
        m.layers_.emplace_back(nn::make_gcn_block(m.params_, init, prefix, config.width, adjacency));
        break;
    }
  }
  m.head_ = nn::make_regression_head(m.params_, init, config.width);
  return m;
}

bool LiftingModel::has_attention() const {
  return config_.spatial == SpatialKind::attention || config_.spatial == SpatialKind::gat_skeleton;
}

ModelOutput LiftingModel::forward(const ad::Tensor& x, const nn::ForwardContext& ctx, bool return_attention) const {
  ModelOutput out;
  ad::Tensor h = nn::embed(x, embedding_);
  for (const auto& layer : layers_) {
    if (const auto* a = std::get_if<nn::AttentionLayer>(&layer)) {
      auto r = nn::attention_forward(h, *a, ctx, return_attention);
      h = std::move(r.hidden);
      if (return_attention) out.attention.push_back(std::move(r.weights));
    } else if (const auto* g = std::get_if<nn::GatBlock>(&layer)) {
      auto r = nn::gat_forward(h, *g, ctx, return_attention);
      h = std::move(r.hidden);
      if (return_attention) out.attention.push_back(std::move(r.weights));
    } else {
      h = nn::gcn_forward(h, std::get<nn::GcnBlock>(layer), ctx);
    }
  }
  out.prediction = nn::head_forward(h, head_);
  return out;
}

std::size_t count_parameters(const LiftingModel& model) { return model.parameters().scalar_count(); }

}  // namespace handlift

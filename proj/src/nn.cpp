#include "handlift/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace handlift::nn {

static_assert(std::endian::native == std::endian::little, "parameter files are written in host byte order");

ad::Tensor ParameterSet::add(std::string name, ad::Tensor value, bool decay) {
  if (find(name)) throw std::invalid_argument("parameter set: duplicate name " + name);
  if (!value.requires_grad()) value = ad::Tensor::from_values(value.shape(), {value.values().begin(), value.values().end()}, true);
  items_.push_back({std::move(name), value, decay});
  return value;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  auto it = std::find_if(items_.begin(), items_.end(), [&](const Parameter& p) { return p.name == name; });
  return it == items_.end() ? nullptr : &*it;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.value.zero_grad();
}

ad::Tensor Initializer::uniform(ad::Shape shape, double bound) {
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = rng_.uniform(-bound, bound);
  return ad::Tensor::from_values(std::move(shape), std::move(v), true);
}

ad::Tensor Initializer::normal(ad::Shape shape, double stddev) {
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = stddev * rng_.normal();
  return ad::Tensor::from_values(std::move(shape), std::move(v), true);
}

std::size_t head_hidden_width(std::size_t width) { return std::max<std::size_t>(1, width / 2); }

LayerNormParams make_layer_norm(ParameterSet& params, const std::string& prefix, std::size_t width) {
  return {params.add(prefix + ".gain", ad::Tensor::full({width}, 1.0, true), false),
          params.add(prefix + ".bias", ad::Tensor::zeros({width}, true), false)};
}

Linear make_linear(ParameterSet& params, Initializer& init, const std::string& prefix, std::size_t in,
                   std::size_t out, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = params.add(prefix + ".weight", init.uniform({out, in}, bound), true);
  if (with_bias) l.bias = params.add(prefix + ".bias", init.uniform({out}, bound), false);
  return l;
}

JointEmbedding make_joint_embedding(ParameterSet& params, Initializer& init, const SkeletonGraph& skeleton,
                                    std::size_t width, PositionalEncoding pe) {
  JointEmbedding e;
  e.joints = skeleton.joint_count();
  e.width = width;
  e.pe = pe;
  e.projection = params.add("embed.projection.weight", init.uniform({width, 2}, 1.0 / std::sqrt(2.0)), true);
  e.identity = params.add("embed.identity", init.normal({e.joints, width}, kTableInitStd), false);
  switch (pe) {
    case PositionalEncoding::graph_distance: {
      const auto hops = hop_distances(skeleton);
      const int max_hop = *std::max_element(hops.wrist_dist.begin(), hops.wrist_dist.end());
      e.pe_table = params.add("embed.pe", init.normal({static_cast<std::size_t>(max_hop) + 1, width}, kTableInitStd), false);
      e.pe_index.assign(hops.wrist_dist.begin(), hops.wrist_dist.end());
      break;
    }
    case PositionalEncoding::learnable:
      e.pe_table = params.add("embed.pe", init.normal({e.joints, width}, kTableInitStd), false);
      e.pe_index.resize(e.joints);
      for (std::size_t j = 0; j < e.joints; ++j) e.pe_index[j] = j;
      break;
    case PositionalEncoding::none:
      break;
  }
  e.ln = make_layer_norm(params, "embed.ln", width);
  return e;
}

ad::Tensor JointEmbedding::positional() const {
  switch (pe) {
    case PositionalEncoding::graph_distance:
      return ad::gather_rows(pe_table, pe_index);
    case PositionalEncoding::learnable:
      return pe_table;
    case PositionalEncoding::none:
      break;
  }
  return ad::Tensor::zeros({joints, width});
}

static FeedForward make_feed_forward(ParameterSet& params, Initializer& init, const std::string& prefix,
                                     std::size_t width) {
  return {make_linear(params, init, prefix + ".up", width, 4 * width),
          make_linear(params, init, prefix + ".down", 4 * width, width)};
}

AttentionLayer make_attention_layer(ParameterSet& params, Initializer& init, const std::string& prefix,
                                    std::size_t width, std::size_t heads) {
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("attention layer: width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  AttentionLayer a;
  a.heads = heads;
  a.ln1 = make_layer_norm(params, prefix + ".ln1", width);
  a.query = make_linear(params, init, prefix + ".attn.query", width, width);
  a.key = make_linear(params, init, prefix + ".attn.key", width, width);
  a.value = make_linear(params, init, prefix + ".attn.value", width, width);
  a.output = make_linear(params, init, prefix + ".attn.output", width, width);
  a.ln2 = make_layer_norm(params, prefix + ".ln2", width);
  a.ffn = make_feed_forward(params, init, prefix + ".ffn", width);
  return a;
}

GcnBlock make_gcn_block(ParameterSet& params, Initializer& init, const std::string& prefix, std::size_t width,
                        const AdjacencyMatrix& adjacency) {
  GcnBlock g;
  g.adjacency = ad::Tensor::from_values({adjacency.size, adjacency.size}, adjacency.values);
  g.ln1 = make_layer_norm(params, prefix + ".ln1", width);
  g.transform = make_linear(params, init, prefix + ".gcn.transform", width, width);
  g.ln2 = make_layer_norm(params, prefix + ".ln2", width);
  g.ffn = make_feed_forward(params, init, prefix + ".ffn", width);
  return g;
}

ad::Mask mask_from_adjacency(const AdjacencyMatrix& m) {
  ad::Mask mask{{m.size, m.size}, std::vector<std::uint8_t>(m.values.size())};
  for (std::size_t i = 0; i < m.values.size(); ++i) mask.keep[i] = m.values[i] != 0.0 ? 1 : 0;
  return mask;
}

GatBlock make_gat_block(ParameterSet& params, Initializer& init, const std::string& prefix, std::size_t width,
                        std::size_t heads, const SkeletonGraph& skeleton) {
  return {make_attention_layer(params, init, prefix, width, heads), mask_from_adjacency(skeleton_mask(skeleton))};
}

RegressionHead make_regression_head(ParameterSet& params, Initializer& init, std::size_t width) {
  RegressionHead h;
  h.ln = make_layer_norm(params, "head.ln", width);
  h.hidden = make_linear(params, init, "head.hidden", width, head_hidden_width(width));
  h.output = make_linear(params, init, "head.output", head_hidden_width(width), 3);
  return h;
}

// ---------------------------------------------------------------- forwards

namespace {

ad::Tensor apply(const ad::Tensor& x, const Linear& l) { return ad::linear(x, l.weight, l.bias); }
ad::Tensor apply(const ad::Tensor& x, const LayerNormParams& ln) { return ad::layer_norm(x, ln.gain, ln.bias); }

ad::Tensor maybe_dropout(const ad::Tensor& x, const ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout == 0.0) return x;
  if (ctx.rng == nullptr) throw std::invalid_argument("forward: training with dropout needs an rng stream");
  return ad::dropout(x, ctx.dropout, true, *ctx.rng);
}

void check_tokens(const ad::Tensor& h, std::size_t joints, const char* where) {
  if (h.rank() < 2 || h.dim(-2) != joints) {
    throw ad::ShapeError(std::string(where) + ": expected " + std::to_string(joints) + " joint tokens, got shape " +
                         ad::shape_string(h.shape()));
  }
}

}  // namespace

ad::Tensor embed(const ad::Tensor& x, const JointEmbedding& emb) {
  if (x.rank() < 2 || x.dim(-1) != 2) {
    throw ad::ShapeError("embed: expected [.., J, 2] input, got " + ad::shape_string(x.shape()));
  }
  check_tokens(x, emb.joints, "embed");
  ad::Tensor h = ad::add(ad::linear(x, emb.projection, {}), emb.identity);
  if (emb.pe != PositionalEncoding::none) h = ad::add(h, emb.positional());
  return apply(h, emb.ln);
}

ad::Tensor feed_forward(const ad::Tensor& x, const FeedForward& ffn, const ForwardContext& ctx) {
  return apply(maybe_dropout(ad::gelu(apply(x, ffn.up)), ctx), ffn.down);
}

BlockOutput attention_forward(const ad::Tensor& h, const AttentionLayer& layer, const ForwardContext& ctx,
                              bool return_weights, const ad::Mask* mask) {
  const std::size_t width = h.dim(-1);
  const std::size_t dk = width / layer.heads;
  const ad::Tensor a = apply(h, layer.ln1);
  const ad::Tensor q = ad::split_heads(apply(a, layer.query), layer.heads);
  const ad::Tensor k = ad::split_heads(apply(a, layer.key), layer.heads);
  const ad::Tensor v = ad::split_heads(apply(a, layer.value), layer.heads);
  const ad::Tensor logits = ad::scale(ad::matmul(q, ad::transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
  const ad::Tensor weights = ad::softmax_lastdim(logits, mask);

  BlockOutput out;
  if (return_weights) out.weights = weights.detach();
  const ad::Tensor mixed = apply(ad::merge_heads(ad::matmul(maybe_dropout(weights, ctx), v)), layer.output);
  const ad::Tensor z = ad::add(h, mixed);
  out.hidden = ad::add(z, feed_forward(apply(z, layer.ln2), layer.ffn, ctx));
  return out;
}

ad::Tensor gcn_forward(const ad::Tensor& h, const GcnBlock& block, const ForwardContext& ctx) {
  check_tokens(h, block.adjacency.dim(0), "gcn_forward");
  const ad::Tensor a = apply(h, block.ln1);
  const ad::Tensor mixed = ad::relu(apply(ad::matmul(block.adjacency, a), block.transform));
  const ad::Tensor z = ad::add(h, mixed);
  return ad::add(z, feed_forward(apply(z, block.ln2), block.ffn, ctx));
}

BlockOutput gat_forward(const ad::Tensor& h, const GatBlock& block, const ForwardContext& ctx, bool return_weights) {
  check_tokens(h, block.mask.shape.at(0), "gat_forward");
  return attention_forward(h, block.attention, ctx, return_weights, &block.mask);
}

ad::Tensor head_forward(const ad::Tensor& h, const RegressionHead& head) {
  return ad::scale(apply(ad::gelu(apply(apply(h, head.ln), head.hidden)), head.output), kHeadOutputScaleMm);
}

// ---------------------------------------------------------------- parameter files

namespace {

constexpr char kMagic[4] = {'H', 'L', 'P', 'F'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw std::runtime_error("parameter file " + path.string() + ": truncated");
  }
  return v;
}

}  // namespace

const NamedArray* ParameterFile::find(std::string_view name) const {
  auto it = std::find_if(arrays.begin(), arrays.end(), [&](const NamedArray& a) { return a.name == name; });
  return it == arrays.end() ? nullptr : &*it;
}

void write_parameter_file(const std::filesystem::path& path, const ParameterFile& file) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  std::string meta;
  for (const auto& [k, v] : file.meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("parameter file: meta entry '" + k + "' contains a reserved character");
    }
    meta += k + "=" + v + "\n";
  }
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(file.arrays.size()));
  for (const auto& a : file.arrays) {
    if (ad::shape_numel(a.shape) != a.values.size()) {
      throw std::invalid_argument("parameter file: array " + a.name + " has inconsistent shape");
    }
    put<std::uint32_t>(os, static_cast<std::uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * 8));
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

ParameterFile read_parameter_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open parameter file " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("parameter file " + path.string() + ": bad magic");
  }
  if (const auto v = get<std::uint32_t>(is, path); v != kVersion) {
    throw std::runtime_error("parameter file " + path.string() + ": unsupported version " + std::to_string(v));
  }
  ParameterFile file;
  std::string meta(get<std::uint32_t>(is, path), '\0');
  if (!is.read(meta.data(), static_cast<std::streamsize>(meta.size()))) {
    throw std::runtime_error("parameter file " + path.string() + ": truncated meta");
  }
  std::istringstream lines(meta);
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("parameter file " + path.string() + ": bad meta line");
    file.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = get<std::uint32_t>(is, path);
  file.arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name.resize(get<std::uint32_t>(is, path));
    if (!is.read(a.name.data(), static_cast<std::streamsize>(a.name.size()))) {
      throw std::runtime_error("parameter file " + path.string() + ": truncated name");
    }
    a.shape.resize(get<std::uint32_t>(is, path));
    for (auto& d : a.shape) d = static_cast<std::size_t>(get<std::uint64_t>(is, path));
    a.values.resize(ad::shape_numel(a.shape));
    if (!is.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * 8))) {
      throw std::runtime_error("parameter file " + path.string() + ": truncated array " + a.name);
    }
    file.arrays.push_back(std::move(a));
  }
  return file;
}

std::vector<NamedArray> snapshot(const ParameterSet& params) {
  std::vector<NamedArray> out;
  out.reserve(params.items().size());
  for (const auto& p : params.items()) {
    out.push_back({p.name, p.value.shape(), {p.value.values().begin(), p.value.values().end()}});
  }
  return out;
}

void restore(ParameterSet& params, const ParameterFile& file) {
  for (auto& p : params.items()) {
    const NamedArray* a = file.find(p.name);
    if (!a) throw std::runtime_error("checkpoint is missing parameter " + p.name);
    if (a->shape != p.value.shape()) {
      throw std::runtime_error("checkpoint parameter " + p.name + " has shape " + ad::shape_string(a->shape) +
                               ", model expects " + ad::shape_string(p.value.shape()));
    }
    std::copy(a->values.begin(), a->values.end(), p.value.mutable_values().begin());
  }
}

}  // namespace handlift::nn

#include "handlift/trainer.hpp"

#include "handlift/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <numeric>
#include <mutex>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace handlift {

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("train config: batch size must be >= 1");
  if (!(scale_lo < scale_hi) && !(scale_lo == 1.0 && scale_hi == 1.0)) {
    throw std::invalid_argument("train config: scale range must satisfy low < high");
  }
  if (!(scale_lo > 0.0)) throw std::invalid_argument("train config: scale range must be positive");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw std::invalid_argument("train config: flip probability outside [0, 1]");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw std::invalid_argument("train config: negative lr or weight decay");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("train config: clip norm must be positive");
  if (seeds.empty()) throw std::invalid_argument("train config: at least one seed is required");
}

AdamWState AdamWState::for_parameters(const nn::ParameterSet& params) {
  AdamWState s;
  for (const auto& p : params.items()) {
    s.m.emplace_back(p.value.numel(), 0.0);
    s.v.emplace_back(p.value.numel(), 0.0);
  }
  return s;
}

ad::Tensor l1_loss(const ad::Tensor& pred, const ad::Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ad::ShapeError("l1_loss: prediction " + ad::shape_string(pred.shape()) + " vs target " +
                         ad::shape_string(target.shape()));
  }
  if (pred.rank() < 2 || pred.dim(-1) != 3) {
    throw ad::ShapeError("l1_loss: expected [.., J, 3], got " + ad::shape_string(pred.shape()));
  }
  const double per_joint_rows = static_cast<double>(pred.numel() / 3);
  return ad::scale(ad::sum(ad::abs(ad::sub(pred, target))), 1.0 / per_joint_rows);
}

void adamw_step(nn::ParameterSet& params, AdamWState& state, double lr_t, double weight_decay) {
  auto& items = params.items();
  if (state.m.size() != items.size()) throw std::invalid_argument("adamw: optimizer state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto theta = items[k].value.mutable_values();
    auto grad = items[k].value.mutable_grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != theta.size()) throw std::invalid_argument("adamw: moment shape mismatch for " + items[k].name);
    const double decay = items[k].decay ? lr_t * weight_decay : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= decay * theta[i];
      theta[i] -= lr_t * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double cosine_lr(std::size_t epoch, const TrainConfig& cfg) {
  if (cfg.epochs <= 1) return cfg.lr;
  const double progress = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_gradients(std::span<const std::span<double>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& g : grads)
      for (double& x : g) x *= f;
  }
  return norm;
}

double clip_gradients(nn::ParameterSet& params, double max_norm) {
  std::vector<std::span<double>> grads;
  grads.reserve(params.items().size());
  for (auto& p : params.items()) grads.push_back(p.value.mutable_grad());
  return clip_gradients(grads, max_norm);
}

PoseSample flip_sample(const PoseSample& s) {
  PoseSample out = s;
  for (auto& uv : out.x2d) uv[0] = -uv[0];
  for (auto& p : out.y3d) p[0] = -p[0];
  return out;
}

PoseSample scale_sample(const PoseSample& s, double factor) {
  PoseSample out = s;
  for (auto& uv : out.x2d)
    for (auto& v : uv) v *= factor;
  for (auto& p : out.y3d)
    for (auto& v : p) v *= factor;
  return out;
}

PoseSample augment(const PoseSample& s, const TrainConfig& cfg, CounterRng& rng) {
  const bool flip = rng.bernoulli(cfg.flip_prob);
  const double factor = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  return scale_sample(flip ? flip_sample(s) : s, factor);
}

namespace {

ad::Tensor pack_targets(std::span<const PoseSample* const> batch) {
  std::vector<double> v;
  v.reserve(batch.size() * kJointCount * 3);
  for (const auto* s : batch)
    for (const auto& p : s->y3d) v.insert(v.end(), p.begin(), p.end());
  return ad::Tensor::from_values({batch.size(), kJointCount, 3}, std::move(v));
}

ad::Tensor pack_batch_inputs(std::span<const PoseSample* const> batch) {
  std::vector<double> v;
  v.reserve(batch.size() * kJointCount * 2);
  for (const auto* s : batch)
    for (const auto& uv : s->x2d) v.insert(v.end(), uv.begin(), uv.end());
  return ad::Tensor::from_values({batch.size(), kJointCount, 2}, std::move(v));
}

constexpr std::size_t kSliceSize = 32;

void keep_freed_memory() {
#ifdef __GLIBC__
  // Step-sized tensors are allocated and released continuously; keeping them
  // on the heap avoids re-faulting fresh pages every step.
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
#endif
}

}  // namespace

TrainResult train(LiftingModel& model, std::span<const PoseSample> train_set, std::span<const PoseSample> eval_set,
                  const TrainConfig& cfg, std::uint64_t seed, std::optional<TrainState> resume,
                  const std::function<void(const EpochLog&, const TrainState&)>& on_epoch) {
  cfg.validate();
  keep_freed_memory();
  if (train_set.empty()) throw std::invalid_argument("train: training set is empty");
  auto& params = model.parameters();
  TrainResult result;
  result.state = resume ? std::move(*resume) : TrainState{AdamWState::for_parameters(params), 0};

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::vector<PoseSample> augmented(cfg.augment ? n : 0);
  std::vector<const PoseSample*> batch;
  ad::GradTape tape;

  for (std::size_t epoch = result.state.next_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr_t = cosine_lr(epoch, cfg);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng order_rng(seed, "order", epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);

    CounterRng augment_rng(seed, "augment", epoch);
    CounterRng dropout_rng(seed, "dropout", epoch);
    const nn::ForwardContext ctx{true, model.config().dropout, &dropout_rng};

    double loss_total = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) {
        const PoseSample& s = train_set[order[i]];
        if (cfg.augment) {
          augmented[i] = augment(s, cfg, augment_rng);
          batch.push_back(&augmented[i]);
        } else {
          batch.push_back(&s);
        }
      }

      // The batch is pushed through in slices that keep activations in
      // cache; each slice's loss is weighted so the accumulated gradient is
      // the gradient of the full-batch mean.
      params.zero_grad();
      double batch_loss = 0.0;
      const std::size_t count = stop - start;
      for (std::size_t s = 0; s < count; s += kSliceSize) {
        const auto slice = std::span<const PoseSample* const>(batch).subspan(s, std::min(kSliceSize, count - s));
        tape.reset();
        ad::Tensor loss;
        {
          ad::TapeScope scope(tape);
          loss = ad::scale(l1_loss(model.forward(pack_batch_inputs(slice), ctx).prediction, pack_targets(slice)),
                           static_cast<double>(slice.size()) / static_cast<double>(count));
        }
        if (!std::isfinite(loss.item())) {
          throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                                ", batch starting at " + std::to_string(start) + " (seed " + std::to_string(seed) +
                                ")");
        }
        tape.backward(loss);
        batch_loss += loss.item();
      }
      clip_gradients(params, cfg.clip_norm);
      adamw_step(params, result.state.optimizer, lr_t, cfg.weight_decay);
      loss_total += batch_loss * static_cast<double>(count);
    }
    tape.reset();

    EpochLog entry{epoch, lr_t, loss_total / static_cast<double>(n), std::nullopt, std::nullopt};
    const bool last = epoch + 1 == cfg.epochs;
    if (!eval_set.empty() && cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      const auto report = metrics::evaluate(model, eval_set);
      entry.eval_mpjpe = report.mpjpe_mm;
      entry.eval_auc = report.auc;
    }
    result.state.next_epoch = epoch + 1;
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry, result.state);
  }
  return result;
}

std::string log_csv(std::span<const EpochLog> log) {
  std::ostringstream os;
  os << "epoch,lr,train_loss,eval_mpjpe,eval_auc\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << metrics::format_double(e.lr) << ',' << metrics::format_double(e.train_loss) << ','
       << (e.eval_mpjpe ? metrics::format_double(*e.eval_mpjpe) : "") << ','
       << (e.eval_auc ? metrics::format_double(*e.eval_auc) : "") << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const std::filesystem::path& path, const LiftingModel& model, const TrainState& state,
                     std::uint64_t seed) {
  nn::ParameterFile file;
  for (const auto& [k, v] : model.config().to_key_values()) file.meta["model." + k] = v;
  file.meta["epoch"] = std::to_string(state.next_epoch);
  file.meta["seed"] = std::to_string(seed);
  file.meta["adam.step"] = std::to_string(state.optimizer.step);
  file.arrays = nn::snapshot(model.parameters());
  const auto& items = model.parameters().items();
  if (state.optimizer.m.size() == items.size()) {
    for (std::size_t k = 0; k < items.size(); ++k) {
      file.arrays.push_back({"adam.m/" + items[k].name, items[k].value.shape(), state.optimizer.m[k]});
      file.arrays.push_back({"adam.v/" + items[k].name, items[k].value.shape(), state.optimizer.v[k]});
    }
  }
  nn::write_parameter_file(path, file);
}

namespace {

std::uint64_t meta_u64(const std::map<std::string, std::string>& meta, const std::string& key,
                       const std::filesystem::path& path) {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("checkpoint " + path.string() + ": missing meta '" + key + "'");
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc()) throw std::runtime_error("checkpoint " + path.string() + ": bad meta '" + key + "'");
  return v;
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const SkeletonGraph& skeleton) {
  const auto file = nn::read_parameter_file(path);
  std::map<std::string, std::string> model_kv;
  for (const auto& [k, v] : file.meta) {
    if (k.rfind("model.", 0) == 0) model_kv[k.substr(6)] = v;
  }
  Checkpoint info;
  info.config = ModelConfig::from_key_values(model_kv);
  info.seed = meta_u64(file.meta, "seed", path);
  info.meta = file.meta;
  LiftingModel model = LiftingModel::build(info.config, skeleton, info.seed);
  nn::restore(model.parameters(), file);

  info.state.next_epoch = meta_u64(file.meta, "epoch", path);
  info.state.optimizer = AdamWState::for_parameters(model.parameters());
  info.state.optimizer.step = meta_u64(file.meta, "adam.step", path);
  const auto& items = model.parameters().items();
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto* m = file.find("adam.m/" + items[k].name);
    const auto* v = file.find("adam.v/" + items[k].name);
    if (m && v && m->values.size() == items[k].value.numel() && v->values.size() == items[k].value.numel()) {
      info.state.optimizer.m[k] = m->values;
      info.state.optimizer.v[k] = v->values;
    }
  }
  return {std::move(model), std::move(info)};
}

}  // namespace handlift

#include "redae/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "redae/autodiff.hpp"
#include "redae/errors.hpp"

namespace redae::train {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError(fmt::format("learning_rate must be > 0, got {}", learning_rate));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError(fmt::format("momentum must lie in [0, 1), got {}", momentum));
  }
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError(fmt::format("val_fraction must lie in [0, 1), got {}", val_fraction));
  }
  for (double w : class_weights) {
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw ConfigError(fmt::format("class weights must be finite and positive, got {}", w));
    }
  }
  if (online_augment && !(online_augment->min_scale > 0.0 &&
                          online_augment->min_scale <= online_augment->max_scale)) {
    throw ConfigError("online_augment needs 0 < min_scale <= max_scale");
  }
}

OptimizerState OptimizerState::zeros(const std::vector<model::NamedParam>& params) {
  OptimizerState s;
  for (const auto& p : params) s.velocity.push_back(Tensor4::zeros(p.tensor.shape()));
  return s;
}

void sgdm_step(const std::vector<model::NamedParam>& params, OptimizerState& state,
               double learning_rate, double momentum) {
  if (state.velocity.size() != params.size()) {
    throw ConfigError(fmt::format("optimizer holds {} velocity buffers for {} parameters",
                                  state.velocity.size(), params.size()));
  }
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw TapeError(fmt::format("parameter '{}' has no gradient", p.name));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor4 w = params[i].tensor;
    Tensor4& v = state.velocity[i];
    if (v.shape() != w.shape()) {
      throw ShapeError(fmt::format("velocity for '{}' is {}, parameter is {}", params[i].name,
                                   v.shape().str(), w.shape().str()));
    }
    const auto g = w.grad();
    auto vd = v.mutable_data();
    auto wd = w.mutable_data();
    for (std::size_t j = 0; j < wd.size(); ++j) {
      vd[j] = momentum * vd[j] - learning_rate * g[j];
      wd[j] += vd[j];
    }
    check_finite(vd, params[i].name.c_str());
    check_finite(wd, params[i].name.c_str());
  }
}

std::string TrainLog::loss_csv() const {
  std::string out = "epoch,step,loss,seconds\n";
  for (const auto& s : steps) {
    out += fmt::format("{},{},{},{:.6f}\n", s.epoch, s.step, s.loss, s.seconds);
  }
  return out;
}

std::string TrainLog::metrics_csv() const {
  std::string out = metrics::csv_header("epoch");
  for (const auto& e : epochs) {
    if (e.validation) out += metrics::csv_rows(*e.validation, std::to_string(e.epoch));
  }
  return out;
}

namespace {

void clear_grads(const std::vector<model::NamedParam>& params) {
  for (const auto& p : params) p.tensor.clear_grad();
}

}  // namespace

TrainLog train(model::Network& net, std::span<const data::Sample> train_set,
               std::span<const data::Sample> val_set, const TrainConfig& cfg,
               const Callbacks& callbacks) {
  cfg.validate();
  if (train_set.empty()) throw DataError(DataErrorKind::kManifest, "training set is empty");
  for (const auto& s : train_set) data::validate(s);

  if (net.topology.variant == model::Variant::kSaReDae && !cfg.class_weights.empty()) {
    if (cfg.class_weights.size() != net.topology.classes) {
      throw ConfigError(fmt::format("class_weights has {} entries for {} classes",
                                    cfg.class_weights.size(), net.topology.classes));
    }
    net.class_weights = nn::ClassWeights{cfg.class_weights};
  } else if (net.topology.variant == model::Variant::kSaReDae) {
    net.class_weights = data::median_frequency_weights(train_set);
  } else {
    net.class_weights = nn::ClassWeights::unit(net.topology.classes);
  }
  nn::validate(net.class_weights);

  const auto params = net.parameters();
  OptimizerState state = OptimizerState::zeros(params);
  TrainLog log;
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(train_set.size());
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (cfg.shuffle) {
      Rng rng = Rng::derive(cfg.seed, epoch);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    net.set_mode(nn::BnMode::kTrain);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      std::vector<const data::Sample*> batch;
      for (std::size_t i = b; i < end; ++i) batch.push_back(&train_set[order[i]]);
      ++step;
      std::vector<data::Sample> redrawn;
      if (cfg.online_augment) {
        Rng rng = Rng::derive(Rng::derive(cfg.seed, 0x0a06).next_u64(), step);
        for (const auto* s : batch) redrawn.push_back(data::augment(*s, *cfg.online_augment, rng));
        for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = &redrawn[i];
      }

      model::Network last_good = net.clone();
      const OptimizerState last_state = [&] {
        OptimizerState s;
        for (const auto& v : state.velocity) s.velocity.push_back(v.clone());
        return s;
      }();
      double value = 0.0;
      try {
        Tape::current().clear();
        clear_grads(params);
        const Tensor4 l =
            model::loss(net, data::stack_images(batch), data::stack_masks(batch));
        value = l.item();
        backward(l);
        sgdm_step(params, state, cfg.learning_rate, cfg.momentum);
        clear_grads(params);
      } catch (const NumericError& e) {
        Tape::current().clear();
        // Copy values back so outstanding handles keep aliasing the network.
        auto good = last_good.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
          auto dst = Tensor4(params[i].tensor).mutable_data();
          const auto src = good[i].tensor.data();
          std::copy(src.begin(), src.end(), dst.begin());
          params[i].tensor.clear_grad();
        }
        auto bns = net.batch_norms();
        auto good_bns = last_good.batch_norms();
        for (std::size_t i = 0; i < bns.size(); ++i) {
          bns[i]->running_mean = good_bns[i]->running_mean;
          bns[i]->running_var = good_bns[i]->running_var;
        }
        state = last_state;
        net.set_mode(nn::BnMode::kEval);
        throw NumericError(fmt::format(
            "training aborted at epoch {}, step {}: {}; parameters restored to the last "
            "finite state",
            epoch, step, e.what()));
      }

      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log.steps.push_back(StepRecord{epoch, step, value, seconds});
      loss_sum += value;
      ++batches;
      if (callbacks.on_step && cfg.log_every > 0 && step % cfg.log_every == 0) {
        callbacks.on_step(log.steps.back());
      }
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches), std::nullopt};
    if (!val_set.empty()) {
      net.set_mode(nn::BnMode::kEval);
      rec.validation = evaluate(net, val_set, std::string(model::to_string(net.topology.variant)),
                                thread_budget());
    }
    log.epochs.push_back(rec);
    if (callbacks.on_epoch) callbacks.on_epoch(log.epochs.back());
  }
  net.set_mode(nn::BnMode::kEval);
  return log;
}

ValidationSplit carve_validation(std::vector<data::Sample> samples,
                                 const std::map<std::string, std::string>& group_of,
                                 double fraction, std::uint64_t seed) {
  auto group = [&](const data::Sample& s) -> const std::string& {
    auto it = group_of.find(s.id);
    return it == group_of.end() || it->second.empty() ? s.id : it->second;
  };
  std::set<std::string> unique;
  for (const auto& s : samples) unique.insert(group(s));
  std::vector<std::string> groups(unique.begin(), unique.end());

  std::size_t n_val = 0;
  if (fraction > 0.0 && groups.size() >= 2) {
    n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(groups.size()) + 0.5));
    n_val = std::clamp<std::size_t>(n_val, 1, groups.size() - 1);
  }
  Rng rng(seed);
  for (std::size_t i = groups.size(); i > 1; --i) std::swap(groups[i - 1], groups[rng.below(i)]);
  const std::set<std::string> val_groups(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(n_val));

  ValidationSplit out;
  for (auto& s : samples) {
    (val_groups.count(group(s)) ? out.val : out.train).push_back(std::move(s));
  }
  return out;
}

std::size_t thread_budget() {
  if (const char* env = std::getenv("REDAE_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

data::Mask predict_mask(model::Network& net, const data::Image& image) {
  const data::Image padded = data::pad_image(image, net.topology.spatial_multiple());
  const nn::LabelMask m = model::predict(net, data::image_tensor(padded));
  data::Mask full{m.h, m.w, m.labels};
  return data::crop_mask(full, data::CropRecord{image.h, image.w});
}

metrics::ConfusionCounts confusion(model::Network& net, std::span<const data::Sample> samples,
                                   std::size_t threads) {
  if (net.mode() != nn::BnMode::kEval) {
    throw ConfigError("evaluation requires the network in eval mode");
  }
  const std::size_t classes = net.topology.classes;
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, samples.size()));
  std::vector<metrics::ConfusionCounts> partial(threads, metrics::ConfusionCounts(classes));
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](std::size_t t) {
    try {
      for (std::size_t i = t; i < samples.size(); i += threads) {
        partial[t].accumulate(predict_mask(net, samples[i].image), samples[i].mask);
      }
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  metrics::ConfusionCounts total(classes);
  for (const auto& p : partial) total.merge(p);
  return total;
}

metrics::MetricsReport evaluate(model::Network& net, std::span<const data::Sample> samples,
                                const std::string& model_name, std::size_t threads) {
  if (samples.empty()) throw DataError(DataErrorKind::kManifest, "evaluation set is empty");
  return metrics::make_report(confusion(net, samples, threads), model_name);
}

}  // namespace redae::train

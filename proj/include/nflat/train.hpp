// Training loop, batched evaluation and prediction.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "nflat/metrics.hpp"
#include "nflat/model.hpp"
#include "nflat/optim.hpp"

namespace nflat {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Splits `corpus` into consecutive batches of at most `batch_size`.
inline std::vector<std::vector<const Sentence*>> chunk(const Corpus& corpus, std::size_t batch_size,
                                                      std::span<const std::size_t> order = {}) {
  std::vector<std::vector<const Sentence*>> out;
  for (std::size_t i = 0; i < corpus.size(); i += batch_size) {
    std::vector<const Sentence*> b;
    for (std::size_t k = i; k < std::min(corpus.size(), i + batch_size); ++k)
      b.push_back(&corpus[order.empty() ? k : order[k]]);
    out.push_back(std::move(b));
  }
  return out;
}

/// Viterbi tags for every sentence. Batches may be decoded by several worker
/// threads; results are written by index, so output order is fixed.
inline std::vector<std::vector<std::string>> predict(const NflatModel& model, const Corpus& corpus,
                                                     std::size_t workers = 1) {
  const auto batches = chunk(corpus, std::max<std::size_t>(model.config().batch_size, 1));
  std::vector<std::vector<std::vector<int>>> paths(batches.size());
  auto run = [&](std::size_t first, std::size_t step) {
    NoGradGuard guard;
    for (std::size_t b = first; b < batches.size(); b += step) paths[b] = model.decode(model.make_batch(batches[b]));
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(batches.size(), 1));
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          run(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::vector<std::vector<std::string>> out;
  for (const auto& batch_paths : paths) {
    for (const auto& p : batch_paths) {
      std::vector<std::string> tags;
      for (int y : p) tags.push_back(model.schema().label(y));
      out.push_back(std::move(tags));
    }
  }
  return out;
}

inline EvalReport evaluate(const NflatModel& model, const Corpus& corpus, std::size_t workers = 1) {
  std::vector<std::vector<std::string>> gold;
  for (const auto& s : corpus) {
    if (!s.labeled()) throw DataError("evaluation sentence " + s.id + " has no tags");
    for (const auto& t : s.tags) parse_tag(t, model.schema().scheme());
    gold.push_back(s.tags);
  }
  return evaluate_tags(gold, predict(model, corpus, workers), model.schema().scheme());
}

/// One optimizer update on `batch`; returns the pre-update loss.
inline double train_step(NflatModel& model, const Batch& batch, Adam& opt, double lr, Rng& rng) {
  model.params().zero_grad();
  auto loss = model.loss(batch, {.training = true, .rng = &rng});
  const double value = loss.item();
  if (!std::isfinite(value)) {
    std::ostringstream os;
    os << "non-finite loss " << value << " on batch [";
    for (std::size_t i = 0; i < batch.size(); ++i) os << (i ? ", " : "") << batch.ids[i];
    os << "]";
    throw TrainingError(os.str());
  }
  loss.backward();
  opt.step(lr, model.config().grad_clip);
  return value;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  EvalReport dev;
  double train_f1 = -1.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_dev_f1 = -1.0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j{{"epoch", r.epoch},        {"loss", r.loss},   {"dev_p", r.dev.precision},
                   {"dev_r", r.dev.recall},   {"dev_f1", r.dev.f1}, {"lr", r.lr},
                   {"wall_seconds", r.wall_seconds}};
  if (r.train_f1 >= 0.0) j["train_f1"] = r.train_f1;
  return j;
}

inline nlohmann::json config_json(const ModelConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  std::istringstream in(c.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

/// Adam on mean CRF NLL with warmup + linear decay. Tracks dev F1 each epoch,
/// stops after `patience` epochs without improvement and leaves the best-dev
/// parameters in the model. With `metrics` set, writes a config line followed
/// by one JSON object per epoch.
inline TrainResult train_model(NflatModel& model, const Corpus& train_set, const Corpus& dev,
                               std::ostream* metrics = nullptr, std::size_t workers = 1,
                               std::ostream* progress = nullptr) {
  const ModelConfig& cfg = model.config();
  cfg.validate();
  if (train_set.empty()) throw DataError("training corpus is empty");
  Rng rng(cfg.seed ^ 0x5EEDF00DULL, "train");
  const std::size_t steps_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  WarmupLinearSchedule schedule{cfg.lr, steps_per_epoch * std::max<std::size_t>(cfg.epochs, 1), cfg.warmup};
  Adam opt(model.params());

  if (metrics) *metrics << nlohmann::json{{"config", config_json(cfg)}}.dump() << "\n";

  TrainResult result;
  std::vector<std::vector<double>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& [_, t] : model.params().items()) best.emplace_back(t.data().begin(), t.data().end());
  };
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0, since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0.0;
    double lr = 0.0;
    const auto batches = chunk(train_set, cfg.batch_size, order);
    for (const auto& sentences : batches) {
      lr = schedule.at(++step);
      loss_sum += train_step(model, model.make_batch(sentences), opt, lr, rng);
    }
    model.params().zero_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(batches.size());
    rec.lr = lr;
    if (!dev.empty()) rec.dev = evaluate(model, dev, workers);
    if (cfg.log_train_f1) rec.train_f1 = evaluate(model, train_set, workers).f1;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (metrics) *metrics << to_json(rec).dump() << "\n" << std::flush;
    if (progress) {
      *progress << "epoch " << epoch << " loss " << rec.loss;
      if (!dev.empty()) *progress << " dev_f1 " << rec.dev.f1;
      if (rec.train_f1 >= 0.0) *progress << " train_f1 " << rec.train_f1;
      *progress << "\n" << std::flush;
    }
    result.epochs.push_back(rec);

    const double score = dev.empty() ? -rec.loss : rec.dev.f1;
    if (result.best_epoch == 0 || score > result.best_dev_f1) {
      result.best_dev_f1 = score;
      result.best_epoch = epoch;
      since_best = 0;
      snapshot();
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (!best.empty()) {
    auto& items = model.params().items();
    for (std::size_t p = 0; p < items.size(); ++p) std::copy(best[p].begin(), best[p].end(), items[p].second.mutable_data().begin());
  }
  if (dev.empty()) result.best_dev_f1 = -1.0;
  return result;
}

}  // namespace nflat

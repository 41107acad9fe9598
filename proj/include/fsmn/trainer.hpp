#pragma once

// Epoch loop: shuffled mini-batches, SGD steps, validation perplexity at the
// end of each epoch driving the learning-rate schedule, checkpoints.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "fsmn/checkpoint.hpp"
#include "fsmn/data.hpp"
#include "fsmn/model.hpp"
#include "fsmn/optim.hpp"

namespace fsmn {

struct TrainSettings {
  std::size_t batch_size = 200;
  std::size_t eval_batch_size = 200;
  std::size_t max_epochs = 30;  // total, counting epochs done before a resume
  std::size_t log_interval = 0;
  std::string checkpoint_dir;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // running mean over the epoch
  double valid_ppl = 0.0;
  double lr_scale = 1.0;    // scale the epoch was trained with
  ScheduleDecision decision = ScheduleDecision::continue_training;
};

struct TrainResult {
  Checkpoint state;
  std::vector<EpochRecord> history;
};

inline Checkpoint fresh_checkpoint(const ModelConfig& model, const OptimConfig& optim,
                                   std::uint64_t seed) {
  Checkpoint c;
  c.model = model;
  c.optim = optim;
  c.seed = seed;
  c.params = init_parameters(model, seed);
  c.optim_state = OptimState::zeros_like(c.params);
  return c;
}

inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return seed * 0x9E3779B97F4A7C15ULL + epoch;
}

inline std::string format_epoch(const EpochRecord& r) {
  return "epoch=" + std::to_string(r.epoch) + " train_loss=" + format_double(r.train_loss) +
         " train_ppl=" + format_double(std::exp(r.train_loss)) +
         " valid_ppl=" + format_double(r.valid_ppl) + " lr_scale=" + format_double(r.lr_scale) +
         " decision=" + decision_name(r.decision);
}

/// Trains from `start` (fresh or resumed) until the schedule stops or
/// `max_epochs` is reached. Throws NumericError on a non-finite loss.
inline TrainResult train(Checkpoint start, const std::vector<Sentence>& train_set,
                         const std::vector<Sentence>& valid_set, const TrainSettings& settings,
                         std::ostream* log = nullptr) {
  TrainResult result;
  Checkpoint& s = result.state;
  s = std::move(start);
  if (s.optim_state.velocity.empty()) s.optim_state = OptimState::zeros_like(s.params);
  namespace fs = std::filesystem;
  const bool save = !settings.checkpoint_dir.empty();
  if (save) fs::create_directories(settings.checkpoint_dir);
  auto ckpt_path = [&](const char* name) { return (fs::path(settings.checkpoint_dir) / name).string(); };

  bool stopped = false;
  while (!stopped && s.epoch < settings.max_epochs) {
    const std::size_t epoch = s.epoch + 1;
    const auto batches = make_batches(train_set, settings.batch_size, s.model.context_window,
                                      epoch_seed(s.seed, epoch));
    double nll = 0.0;
    std::size_t positions = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      auto lg = loss_and_grad(s.params, s.model, batches[b]);
      if (!std::isfinite(lg.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(b + 1));
      }
      sgd_step(s.params, lg.grads, s.optim_state, s.optim, s.schedule);
      nll += lg.loss * static_cast<double>(batches[b].positions());
      positions += batches[b].positions();
      if (log && settings.log_interval && (b + 1) % settings.log_interval == 0) {
        *log << "epoch=" << epoch << " batch=" << (b + 1) << '/' << batches.size()
             << " train_loss=" << format_double(nll / static_cast<double>(positions)) << '\n';
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = nll / static_cast<double>(positions);
    rec.lr_scale = s.schedule.current_scale;
    rec.valid_ppl = perplexity(s.params, s.model, valid_set, settings.eval_batch_size);
    rec.decision = schedule_update(s.schedule, rec.valid_ppl);
    s.epoch = epoch;
    const bool improved = rec.valid_ppl < s.best_val_ppl;
    if (improved) s.best_val_ppl = rec.valid_ppl;
    if (save) {
      if (improved) save_checkpoint(ckpt_path("best.ckpt"), s);
      save_checkpoint(ckpt_path("last.ckpt"), s);
    }
    if (log) *log << format_epoch(rec) << std::endl;
    result.history.push_back(rec);
    stopped = rec.decision == ScheduleDecision::stop;
  }
  if (save) save_checkpoint(ckpt_path("final.ckpt"), s);
  return result;
}

}  // namespace fsmn

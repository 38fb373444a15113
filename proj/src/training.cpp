#include "offramp/training.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>

#include <json.hpp>

#include "offramp/adam.hpp"

namespace offramp {

void TrainConfig::validate() const {
  if (epochs_stage1 < 1 || epochs_stage2 < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning_rate must be > 0");
  if (clip_norm < 0.0) throw std::invalid_argument("train config: clip_norm must be >= 0");
}

Tensor ramp_loss(const EarlyExitModel& model, const TokenBatch& batch, int ramp_index) {
  if (batch.batch == 0) throw std::invalid_argument("ramp_loss: empty batch");
  Tensor logits = model.forward_prefix(batch, ramp_index);
  return cross_entropy(logits, batch.labels);
}

namespace {

using LossFn = std::function<Tensor(const TokenBatch&)>;

StageReport run_stage(EarlyExitModel& model, const EncodedSplit& train_set, const TrainConfig& config,
                      int stage, std::vector<Tensor> trainable, const LossFn& loss_fn) {
  const auto start = std::chrono::steady_clock::now();

  // Structural freeze: only the trainable partition requires gradients and
  // only it is handed to the optimizer. Frozen parameters carry no gradient
  // storage at all for the duration of the stage.
  for (Tensor& p : model.parameters()) {
    p.set_requires_grad(false);
    p.clear_grad();
  }
  for (Tensor& p : trainable) p.set_requires_grad(true);

  AdamState optimizer = AdamState::init(trainable, AdamConfig{config.learning_rate, config.beta1,
                                                              config.beta2, config.epsilon});
  const std::string stage_tag = "stage" + std::to_string(stage);
  model.set_training_mode(true, derive_seed(config.seed, stage_tag + ".dropout"));

  StageReport report;
  report.stage = stage;
  for (int epoch = 1; epoch <= (stage == 1 ? config.epochs_stage1 : config.epochs_stage2); ++epoch) {
    const auto batches = make_batches(train_set.count, static_cast<std::size_t>(config.batch_size),
                                      derive_seed(config.seed, stage_tag + ".epoch." + std::to_string(epoch)),
                                      /*shuffle=*/true);
    double loss_sum = 0.0;
    std::size_t sample_count = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const TokenBatch batch = train_set.gather(batches[b]);
      for (Tensor& p : trainable) p.zero_grad();
      Tape tape;
      double loss_value = 0.0;
      {
        Tape::Scope scope(tape);
        Tensor loss = loss_fn(batch);
        loss_value = loss.value();
        if (!std::isfinite(loss_value)) {
          model.set_training_mode(false);
          throw std::runtime_error("stage " + std::to_string(stage) + " diverged: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(b + 1));
        }
        tape.backward(loss);
      }
      clip_grad_norm(trainable, config.clip_norm);
      adam_step(trainable, optimizer);
      loss_sum += loss_value * static_cast<double>(batch.batch);
      sample_count += batch.batch;
    }
    report.epochs.push_back({epoch, loss_sum / static_cast<double>(sample_count)});
  }
  model.set_training_mode(false);
  report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace

StageReport stage_one(EarlyExitModel& model, const EncodedSplit& train_set, const TrainConfig& config) {
  config.validate();
  const int last = model.config().n_layers;
  return run_stage(model, train_set, config, 1, model.backbone_parameters(),
                   [&](const TokenBatch& batch) { return ramp_loss(model, batch, last); });
}

StageReport stage_two(EarlyExitModel& model, const EncodedSplit& train_set, const TrainConfig& config) {
  config.validate();
  const int n = model.config().n_layers;
  if (n < 2) {
    // No intermediate ramps to train.
    StageReport report;
    report.stage = 2;
    return report;
  }
  return run_stage(model, train_set, config, 2, model.intermediate_ramp_parameters(),
                   [&](const TokenBatch& batch) {
                     // Unweighted sum of the intermediate ramp losses. The
                     // frozen backbone records no tape entries, so gradients
                     // exist only for the ramp parameters.
                     std::vector<Tensor> logits = model.forward_all(batch);
                     Tensor total = cross_entropy(logits[0], batch.labels);
                     for (int i = 2; i <= n - 1; ++i) {
                       total = add(total, cross_entropy(logits[static_cast<std::size_t>(i - 1)], batch.labels));
                     }
                     return total;
                   });
}

TrainReport train_two_stage(EarlyExitModel& model, const EncodedSplit& train_set, const TrainConfig& config) {
  TrainReport report;
  report.stage1 = stage_one(model, train_set, config);
  report.stage2 = stage_two(model, train_set, config);
  return report;
}

std::string TrainReport::to_json() const {
  nlohmann::json j;
  auto stage_json = [](const StageReport& s) {
    nlohmann::json out;
    out["stage"] = s.stage;
    out["wall_clock_s"] = s.wall_clock_s;
    out["epochs"] = nlohmann::json::array();
    for (const EpochStats& e : s.epochs) {
      out["epochs"].push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}});
    }
    return out;
  };
  j["stage1"] = stage_json(stage1);
  j["stage2"] = stage_json(stage2);
  j["final_ramp_dev_quality"] = final_ramp_dev_quality;
  return j.dump(2);
}

}  // namespace offramp

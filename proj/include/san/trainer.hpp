#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "san/data.hpp"
#include "san/model.hpp"

namespace san {

struct TrainConfig {
  int epochs = 20;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double label_smoothing = 0.1;
  Index batch_size = 64;
  std::uint64_t seed = 0;
  bool augment = true;
  Index eval_batch = 250;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// base_lr * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(double base_lr, Index step, Index total_steps);

// Mean over the batch of -sum_k target_k log softmax(logits)_k with target
// (1 - eps) on the label plus eps / classes on every class.
template <typename T>
Tensor<T> cross_entropy_smoothed(const Tensor<T>& logits, std::span<const int> labels, double epsilon);

// SGD with momentum and coupled L2 weight decay:
//   v <- momentum * v + (grad + weight_decay * w);  w <- w - lr * v
class SGD {
 public:
  SGD(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::vector<std::pair<std::string, Tensor<float>>>& params, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<float>> velocity_;
};

struct Accuracy {
  double top1 = 0;
  double top5 = 0;
  Index count = 0;
};

// A label counts as top-k when fewer than k logits are strictly larger.
Accuracy evaluate(Model<float>& model, const Dataset& data, const Normalization& norm, Index batch = 250);
void accumulate_topk(const Tensor<float>& logits, std::span<const int> labels, Index& top1, Index& top5);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0;  // learning rate of the epoch's last step
  double train_loss = 0;
  double val_top1 = 0;
  double val_top5 = 0;
};

struct RunReport {
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
  double best_top1 = 0;
  Index steps = 0;

  nlohmann::json to_json() const;
};

struct RunOutputs {
  // When set: metrics.csv, best.ckpt and last.ckpt are written here.
  std::filesystem::path directory;
  std::function<void(const EpochMetrics&)> on_epoch;
};

// Trains in place; `model` ends holding the last-epoch weights.
RunReport train(Model<float>& model, const Dataset& train_set, const Dataset& val_set, const Normalization& norm,
                const TrainConfig& config, const RunOutputs& outputs = {});

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& epochs);

}  // namespace san

#include "san/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "san/errors.hpp"
#include "san/ops.hpp"

namespace san {

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"base_lr", base_lr},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"label_smoothing", label_smoothing},
          {"batch_size", batch_size},
          {"seed", seed},
          {"augment", augment},
          {"eval_batch", eval_batch},
          {"schedule", "cosine"}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.base_lr = j.at("base_lr").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.label_smoothing = j.at("label_smoothing").get<double>();
  c.batch_size = j.at("batch_size").get<Index>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.augment = j.at("augment").get<bool>();
  c.eval_batch = j.at("eval_batch").get<Index>();
  return c;
}

double cosine_lr(double base_lr, Index step, Index total_steps) {
  if (total_steps <= 0) return base_lr;
  const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
Tensor<T> cross_entropy_smoothed(const Tensor<T>& logits, std::span<const int> labels, double epsilon) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size())) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (epsilon < 0 || epsilon >= 1) throw ConfigError("label smoothing must lie in [0, 1)");
  const Index n = logits.dim(0), classes = logits.dim(1);
  std::vector<T> target(static_cast<std::size_t>(n * classes), static_cast<T>(epsilon / static_cast<double>(classes)));
  for (Index i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= classes) throw DimensionError("label " + std::to_string(label) + " out of range");
    target[static_cast<std::size_t>(i * classes + label)] += static_cast<T>(1.0 - epsilon);
  }
  const Tensor<T> t(Shape{n, classes}, std::move(target));
  return scale(sum(hadamard(log_softmax(logits, 1), t)), static_cast<T>(-1.0 / static_cast<double>(n)));
}

void SGD::step(std::vector<std::pair<std::string, Tensor<float>>>& params, double lr) {
  if (velocity_.empty()) {
    for (auto& [name, p] : params) velocity_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
  }
  if (velocity_.size() != params.size()) throw UsageError("SGD: parameter list changed between steps");
  const auto m = static_cast<float>(momentum_), wd = static_cast<float>(weight_decay_), rate = static_cast<float>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float>& p = params[i].second;
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto& v = velocity_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = m * v[k] + (g[k] + wd * w[k]);
      w[k] -= rate * v[k];
    }
  }
}

void accumulate_topk(const Tensor<float>& logits, std::span<const int> labels, Index& top1, Index& top5) {
  const Index n = logits.dim(0), classes = logits.dim(1);
  const auto d = logits.data();
  for (Index i = 0; i < n; ++i) {
    const float* row = d.data() + i * classes;
    const float mine = row[labels[static_cast<std::size_t>(i)]];
    Index greater = 0;
    for (Index c = 0; c < classes; ++c) greater += row[c] > mine ? 1 : 0;
    top1 += greater < 1 ? 1 : 0;
    top5 += greater < 5 ? 1 : 0;
  }
}

Accuracy evaluate(Model<float>& model, const Dataset& data, const Normalization& norm, Index batch) {
  NoGradGuard guard;
  Index top1 = 0, top5 = 0;
  std::vector<Index> idx;
  for (Index start = 0; start < data.size(); start += batch) {
    idx.clear();
    for (Index i = start; i < std::min(data.size(), start + batch); ++i) idx.push_back(i);
    const Tensor<float> logits = model.forward(make_batch(data, idx, norm), Mode::eval);
    accumulate_topk(logits, std::span<const int>(data.labels).subspan(static_cast<std::size_t>(start), idx.size()), top1,
                    top5);
  }
  Accuracy a;
  a.count = data.size();
  if (a.count > 0) {
    a.top1 = static_cast<double>(top1) / static_cast<double>(a.count);
    a.top5 = static_cast<double>(top5) / static_cast<double>(a.count);
  }
  return a;
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"lr", e.lr},
                    {"train_loss", e.train_loss},
                    {"val_top1", e.val_top1},
                    {"val_top5", e.val_top5}});
  }
  return {{"epochs", rows}, {"best_epoch", best_epoch}, {"best_top1", best_top1}, {"steps", steps}};
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& epochs) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os << "epoch,lr,train_loss,val_top1,val_top5\n";
  char line[160];
  for (const auto& e : epochs) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.6f,%.6f\n", e.epoch, e.lr, e.train_loss, e.val_top1, e.val_top5);
    os << line;
  }
}

RunReport train(Model<float>& model, const Dataset& train_set, const Dataset& val_set, const Normalization& norm,
                const TrainConfig& config, const RunOutputs& outputs) {
  if (config.batch_size < 1 || config.epochs < 0) throw ConfigError("batch size must be positive, epochs >= 0");
  if (train_set.size() == 0) throw ConfigError("empty training set");
  if (train_set.classes != model.spec().classes) {
    throw ConfigError("dataset has " + std::to_string(train_set.classes) + " classes, model " +
                      std::to_string(model.spec().classes));
  }
  const Index steps_per_epoch = (train_set.size() + config.batch_size - 1) / config.batch_size;
  const Index total_steps = steps_per_epoch * config.epochs;
  const int pad = static_cast<int>(std::max<Index>(1, train_set.height / 8));
  auto params = model.parameters();
  SGD optimizer(config.momentum, config.weight_decay);
  std::mt19937_64 rng(config.seed);
  RunReport report;
  if (!outputs.directory.empty()) std::filesystem::create_directories(outputs.directory);

  Index step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<Index> order(static_cast<std::size_t>(train_set.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    Index seen = 0;
    double lr = config.base_lr;
    for (Index b = 0; b < steps_per_epoch; ++b, ++step) {
      const auto first = order.begin() + b * config.batch_size;
      const auto last = order.begin() + std::min<Index>(train_set.size(), (b + 1) * config.batch_size);
      const std::vector<Index> idx(first, last);
      std::vector<float> raw;
      std::vector<int> labels;
      for (Index i : idx) {
        const auto img = train_set.image(i);
        const std::size_t at = raw.size();
        raw.insert(raw.end(), img.begin(), img.end());
        if (config.augment) {
          augment(std::span<float>(raw).subspan(at), train_set.channels, train_set.height, train_set.width, rng, pad);
        }
        labels.push_back(train_set.labels[static_cast<std::size_t>(i)]);
      }
      lr = cosine_lr(config.base_lr, step, total_steps);
      try {
        const Tensor<float> x = normalize_images(raw, static_cast<Index>(idx.size()), train_set, norm);
        const Tensor<float> loss = cross_entropy_smoothed(model.forward(x, Mode::train), labels, config.label_smoothing);
        if (!std::isfinite(loss.item())) throw NumericError("loss is " + std::to_string(loss.item()));
        for (auto& [name, p] : params) p.zero_grad();
        backward(loss);
        optimizer.step(params, lr);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
        seen += static_cast<Index>(idx.size());
      } catch (const NumericError& e) {
        char where[160];
        std::snprintf(where, sizeof(where), " (epoch %d, batch %lld, lr %.6g)", epoch, static_cast<long long>(b), lr);
        throw NumericError(std::string("training diverged: ") + e.what() + where);
      }
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(std::max<Index>(seen, 1));
    const Accuracy acc = evaluate(model, val_set, norm, config.eval_batch);
    m.val_top1 = acc.top1;
    m.val_top5 = acc.top5;
    report.epochs.push_back(m);
    const bool best = report.best_epoch == 0 || m.val_top1 > report.best_top1;
    if (best) {
      report.best_epoch = epoch;
      report.best_top1 = m.val_top1;
    }
    if (!outputs.directory.empty()) {
      write_metrics_csv(outputs.directory / "metrics.csv", report.epochs);
      save_checkpoint(model, outputs.directory / "last.ckpt");
      if (best) save_checkpoint(model, outputs.directory / "best.ckpt");
    }
    if (outputs.on_epoch) outputs.on_epoch(m);
  }
  report.steps = step;
  if (!outputs.directory.empty() && config.epochs == 0) write_metrics_csv(outputs.directory / "metrics.csv", {});
  return report;
}

template Tensor<float> cross_entropy_smoothed<float>(const Tensor<float>&, std::span<const int>, double);
template Tensor<double> cross_entropy_smoothed<double>(const Tensor<double>&, std::span<const int>, double);

}  // namespace san

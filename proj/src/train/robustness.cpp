#include "san/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "san/errors.hpp"
#include "san/ops.hpp"

namespace san {

std::string_view to_string(Manipulation m) {
  switch (m) {
    case Manipulation::none: return "none";
    case Manipulation::cw90: return "cw90";
    case Manipulation::cw180: return "cw180";
    case Manipulation::cw270: return "cw270";
    case Manipulation::upside_down_flip: return "upside_down_flip";
  }
  return "?";
}

std::vector<Manipulation> all_manipulations() {
  return {Manipulation::none, Manipulation::cw90, Manipulation::cw180, Manipulation::cw270,
          Manipulation::upside_down_flip};
}

Manipulation parse_manipulation(std::string_view s) {
  for (Manipulation m : all_manipulations())
    if (to_string(m) == s) return m;
  throw ConfigError("unknown manipulation '" + std::string(s) +
                    "' (expected none, cw90, cw180, cw270 or upside_down_flip)");
}

std::vector<float> manipulate(std::span<const float> image, Index channels, Index height, Index width,
                              Manipulation m) {
  const bool rotation = m == Manipulation::cw90 || m == Manipulation::cw180 || m == Manipulation::cw270;
  if (rotation && height != width) {
    throw DimensionError("rotation needs a square image, got " + std::to_string(height) + "x" + std::to_string(width));
  }
  if (static_cast<Index>(image.size()) != channels * height * width) throw DimensionError("manipulate: size mismatch");
  std::vector<float> out(image.size());
  const Index n = height;
  for (Index c = 0; c < channels; ++c)
    for (Index i = 0; i < height; ++i)
      for (Index j = 0; j < width; ++j) {
        Index si = i, sj = j;
        switch (m) {
          case Manipulation::none: break;
          case Manipulation::cw90: si = n - 1 - j, sj = i; break;
          case Manipulation::cw180: si = n - 1 - i, sj = n - 1 - j; break;
          case Manipulation::cw270: si = j, sj = n - 1 - i; break;
          case Manipulation::upside_down_flip: si = height - 1 - i; break;
        }
        out[static_cast<std::size_t>((c * height + i) * width + j)] =
            image[static_cast<std::size_t>((c * height + si) * width + sj)];
      }
  return out;
}

Dataset manipulate(const Dataset& d, Manipulation m) {
  Dataset out = d;
  for (Index i = 0; i < d.size(); ++i) {
    const auto img = manipulate(d.image(i), d.channels, d.height, d.width, m);
    std::copy(img.begin(), img.end(), out.image(i).begin());
  }
  return out;
}

nlohmann::json AttackConfig::to_json() const {
  return {{"epsilon", epsilon}, {"step", step}, {"iterations", iterations}, {"seed", seed}};
}

nlohmann::json AttackResult::to_json() const {
  return {{"config", config.to_json()},
          {"images", images},
          {"clean_top1", clean_top1},
          {"attacked_top1", attacked_top1},
          {"success_rate", success_rate},
          {"linf_per_step", linf_per_step},
          {"targets", targets},
          {"success", success}};
}

std::vector<int> choose_targets(std::span<const int> labels, Index classes, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("targeted attack needs at least two classes");
  std::vector<int> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + i);
    const int r = std::uniform_int_distribution<int>(0, static_cast<int>(classes) - 2)(rng);
    out.push_back(r >= labels[i] ? r + 1 : r);
  }
  return out;
}

namespace {

std::vector<int> argmax_rows(const Tensor<float>& logits) {
  std::vector<int> out;
  const Index n = logits.dim(0), classes = logits.dim(1);
  for (Index i = 0; i < n; ++i) {
    const float* row = logits.data().data() + i * classes;
    out.push_back(static_cast<int>(std::max_element(row, row + classes) - row));
  }
  return out;
}

}  // namespace

AttackResult pgd_attack(Model<float>& model, const Dataset& data, const Normalization& norm, const AttackConfig& cfg,
                        Index batch) {
  if (cfg.epsilon < 0 || cfg.step < 0 || cfg.iterations < 0) throw ConfigError("attack: negative epsilon, step or iterations");
  if (!grad_enabled()) throw UsageError("pgd_attack: gradients are disabled in this scope");
  AttackResult r;
  r.config = cfg;
  r.images = data.size();
  r.targets = choose_targets(data.labels, data.classes, cfg.seed);
  r.adversarial = data.pixels;
  r.linf_per_step.assign(static_cast<std::size_t>(cfg.iterations), 0.0);
  const Index numel = data.image_numel();
  Index clean_correct = 0, still_correct = 0, hits = 0;

  for (Index start = 0; start < data.size(); start += batch) {
    const Index count = std::min(batch, data.size() - start);
    const auto offset = static_cast<std::size_t>(start * numel);
    const std::span<const float> clean(data.pixels.data() + offset, static_cast<std::size_t>(count * numel));
    const std::span<float> adv(r.adversarial.data() + offset, clean.size());
    const std::span<const int> targets(r.targets.data() + start, static_cast<std::size_t>(count));
    const std::span<const int> labels(data.labels.data() + start, static_cast<std::size_t>(count));
    {
      NoGradGuard guard;
      const auto pred = argmax_rows(model.forward(normalize_images(clean, count, data, norm), Mode::eval));
      for (Index i = 0; i < count; ++i) clean_correct += pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)];
    }
    for (int it = 0; it < cfg.iterations; ++it) {
      Tensor<float> x = normalize_images(adv, count, data, norm);
      x.set_requires_grad(true);
      const Tensor<float> loss = cross_entropy_smoothed(model.forward(x, Mode::eval), targets, 0.0);
      if (!loss.requires_grad()) throw UsageError("pgd_attack: model output carries no gradient");
      backward(loss);
      const auto g = x.grad();
      double linf = 0;
      for (Index i = 0; i < count * numel; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const float sign = g[k] > 0 ? 1.0f : (g[k] < 0 ? -1.0f : 0.0f);
        // d(loss)/d(raw) = d(loss)/d(normalized) / std has the same sign.
        float v = adv[k] - static_cast<float>(cfg.step) * sign;
        v = std::clamp(v, clean[k] - static_cast<float>(cfg.epsilon), clean[k] + static_cast<float>(cfg.epsilon));
        v = std::clamp(v, 0.0f, 255.0f);
        adv[k] = v;
        linf = std::max(linf, static_cast<double>(std::abs(v - clean[k])));
      }
      r.linf_per_step[static_cast<std::size_t>(it)] = std::max(r.linf_per_step[static_cast<std::size_t>(it)], linf);
    }
    NoGradGuard guard;
    const auto pred = argmax_rows(model.forward(normalize_images(adv, count, data, norm), Mode::eval));
    for (Index i = 0; i < count; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const bool hit = pred[k] == targets[k];
      r.success.push_back(hit);
      hits += hit;
      still_correct += pred[k] == labels[k];
    }
  }
  if (r.images > 0) {
    const auto n = static_cast<double>(r.images);
    r.clean_top1 = static_cast<double>(clean_correct) / n;
    r.attacked_top1 = static_cast<double>(still_correct) / n;
    r.success_rate = static_cast<double>(hits) / n;
  }
  return r;
}

std::string format_with_drop(double value, double drop) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f(%.1f)", 100.0 * value, 100.0 * drop);
  return buf;
}

nlohmann::json RobustnessReport::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json j{{"name", row.name},
                     {"top1", row.top1},
                     {"top5", row.top5},
                     {"drop_top1", row.drop1},
                     {"drop_top5", row.drop5},
                     {"top1_text", format_with_drop(row.top1, row.drop1)},
                     {"top5_text", format_with_drop(row.top5, row.drop5)}};
    if (row.success_rate >= 0) j["success_rate"] = row.success_rate;
    out.push_back(j);
  }
  return {{"rows", out}};
}

std::string RobustnessReport::to_csv() const {
  std::ostringstream os;
  os << "name,top1,top5,drop_top1,drop_top5,success_rate\n";
  char line[200];
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f,%.6f,", row.name.c_str(), row.top1, row.top5, row.drop1,
                  row.drop5);
    os << line;
    if (row.success_rate >= 0) {
      std::snprintf(line, sizeof(line), "%.6f", row.success_rate);
      os << line;
    }
    os << '\n';
  }
  return os.str();
}

RobustnessReport robustness_report(Model<float>& model, const Dataset& data, const Normalization& norm,
                                   const std::vector<Manipulation>& manipulations,
                                   const std::vector<AttackConfig>& attacks) {
  const Accuracy base = evaluate(model, data, norm);
  RobustnessReport report;
  for (Manipulation m : manipulations) {
    const Accuracy a = m == Manipulation::none ? base : evaluate(model, manipulate(data, m), norm);
    report.rows.push_back({std::string(to_string(m)), a.top1, a.top5, base.top1 - a.top1, base.top5 - a.top5, -1});
  }
  for (const AttackConfig& cfg : attacks) {
    const AttackResult r = pgd_attack(model, data, norm, cfg);
    Dataset adv = data;
    adv.pixels = r.adversarial;
    const Accuracy a = evaluate(model, adv, norm);
    char name[96];
    std::snprintf(name, sizeof(name), "pgd_eps%g_step%g_iters%d", cfg.epsilon, cfg.step, cfg.iterations);
    report.rows.push_back({name, a.top1, a.top5, base.top1 - a.top1, base.top5 - a.top5, r.success_rate});
  }
  return report;
}

}  // namespace san

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "san/data.hpp"
#include "san/model.hpp"
#include "san/trainer.hpp"

namespace san {

enum class Manipulation { none, cw90, cw180, cw270, upside_down_flip };

std::string_view to_string(Manipulation m);
Manipulation parse_manipulation(std::string_view s);
std::vector<Manipulation> all_manipulations();

// Exact pixel permutation of one CHW image. Rotations need H == W.
std::vector<float> manipulate(std::span<const float> image, Index channels, Index height, Index width,
                              Manipulation m);
Dataset manipulate(const Dataset& d, Manipulation m);

struct AttackConfig {
  double epsilon = 8;  // L-inf radius, raw pixel units
  double step = 4;     // per-iteration step, raw pixel units
  int iterations = 2;
  std::uint64_t seed = 0;  // target selection

  nlohmann::json to_json() const;
};

struct AttackResult {
  AttackConfig config;
  Index images = 0;
  double clean_top1 = 0;
  double attacked_top1 = 0;  // true label still predicted
  double success_rate = 0;   // target class predicted
  // max |adv - clean| over all images after each iteration.
  std::vector<double> linf_per_step;
  std::vector<int> targets;
  std::vector<bool> success;
  std::vector<float> adversarial;  // raw pixels, same layout as the dataset

  nlohmann::json to_json() const;  // omits the image payload
};

// Seeded uniform target per image, never the true label.
std::vector<int> choose_targets(std::span<const int> labels, Index classes, std::uint64_t seed);

// Targeted PGD from the clean image in raw pixel space:
//   x <- clip_{B(x0, eps) and [0,255]}(x - step * sign(grad_x CE(f(x), target)))
// The model runs in eval mode; the gradient reaches raw pixels through the
// normalization.
AttackResult pgd_attack(Model<float>& model, const Dataset& data, const Normalization& norm, const AttackConfig& cfg,
                        Index batch = 100);

struct RobustnessRow {
  std::string name;  // manipulation or attack label
  double top1 = 0;
  double top5 = 0;
  double drop1 = 0;  // percentage points below the unmanipulated top-1
  double drop5 = 0;
  double success_rate = -1;  // attacks only
};

struct RobustnessReport {
  std::vector<RobustnessRow> rows;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// "49.1(24.5)": value and drop in percent, one decimal.
std::string format_with_drop(double value, double drop);

// Rows follow the order of `manipulations` (enum order by default); the
// baseline for drops is always the unmanipulated set.
RobustnessReport robustness_report(Model<float>& model, const Dataset& data, const Normalization& norm,
                                   const std::vector<Manipulation>& manipulations,
                                   const std::vector<AttackConfig>& attacks = {});

}  // namespace san

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "san/attention.hpp"
#include "san/data.hpp"
#include "san/model.hpp"

namespace san::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailed = 1;
inline constexpr int kUsage = 2;

// Command-line overrides of a preset; unset fields keep the preset value.
struct SpecOverrides {
  std::optional<std::string> attention;
  std::optional<std::string> relation;
  std::optional<int> footprint;
  std::optional<int> gamma_depth;
  std::optional<int> r1;
  std::optional<int> r2;
  std::optional<int> share;
  std::optional<std::string> position;
  std::optional<std::string> sharing;
  std::optional<bool> normalize;

  nlohmann::json to_json() const;
};

// Preset name or JSON spec file, then overrides. Validates the result.
ModelSpec resolve_spec(const std::string& model, const std::string& spec_file, const SpecOverrides& o);

struct DataOptions {
  std::string source = "synthetic";  // synthetic | cifar10
  std::string root;                  // cifar10; falls back to $SAN_DATA_ROOT
  Index train_count = 2000;
  Index val_count = 1000;
  Index synthetic_size = 16;
  double synthetic_noise = 40;
  std::uint64_t seed = 0;

  // Fully resolved description, enough to rebuild both splits.
  nlohmann::json to_json() const;
};

// Throws UsageError when a cifar10 root is missing or does not exist.
nlohmann::json resolve_data(const DataOptions& o);
// {train, val} from a resolved description.
std::pair<Dataset, Dataset> load_splits(const nlohmann::json& data);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);
nlohmann::json read_json(const std::filesystem::path& path);

// manifest.json beside a command's outputs; the only file with a timestamp.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const std::vector<std::string>& argv,
                    const nlohmann::json& resolved);

int run(int argc, char** argv);

}  // namespace san::cli

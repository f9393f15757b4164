#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "san/accounting.hpp"
#include "san/errors.hpp"
#include "san/robustness.hpp"
#include "san/trainer.hpp"
#include "san/verify.hpp"

namespace san::cli {

using nlohmann::json;
namespace fs = std::filesystem;

nlohmann::json SpecOverrides::to_json() const {
  json j = json::object();
  if (attention) j["attention"] = *attention;
  if (relation) j["relation"] = *relation;
  if (footprint) j["footprint"] = *footprint;
  if (gamma_depth) j["gamma_depth"] = *gamma_depth;
  if (r1) j["r1"] = *r1;
  if (r2) j["r2"] = *r2;
  if (share) j["share"] = *share;
  if (position) j["position"] = *position;
  if (sharing) j["sharing"] = *sharing;
  if (normalize) j["normalize"] = *normalize;
  return j;
}

ModelSpec resolve_spec(const std::string& model, const std::string& spec_file, const SpecOverrides& o) {
  ModelSpec spec;
  if (!spec_file.empty()) {
    if (!model.empty()) throw UsageError("give either --model or --spec, not both");
    spec = ModelSpec::from_json(read_json(spec_file));
  } else {
    spec = model_preset(model);
  }
  const bool touches_attention = o.attention || o.relation || o.gamma_depth || o.r1 || o.r2 || o.share ||
                                 o.position || o.sharing || o.normalize;
  if (spec.family == ModelFamily::resnet && (touches_attention || o.footprint)) {
    throw ConfigError(spec.name + " is a convolutional baseline; attention overrides do not apply");
  }
  AttentionConfig& a = spec.attention;
  if (o.attention) {
    a.kind = parse_operator_kind(*o.attention);
    // The preset relation is pairwise; patchwise defaults to concatenation.
    if (a.kind == OperatorKind::patchwise && !o.relation) a.relation = Relation::concatenation;
  }
  if (o.relation) a.relation = parse_relation(*o.relation);
  if (o.gamma_depth) a.gamma_depth = *o.gamma_depth;
  if (o.r1) a.r1 = *o.r1;
  if (o.r2) a.r2 = *o.r2;
  if (o.share) a.share = *o.share;
  if (o.position) a.position = parse_position_mode(*o.position);
  if (o.sharing) a.sharing = parse_transform_sharing(*o.sharing);
  if (o.normalize) a.normalize = *o.normalize;
  if (o.footprint) set_footprint(spec, *o.footprint);
  spec.validate();
  return spec;
}

nlohmann::json DataOptions::to_json() const {
  return {{"source", source},
          {"root", root},
          {"train_count", train_count},
          {"val_count", val_count},
          {"synthetic_size", synthetic_size},
          {"synthetic_noise", synthetic_noise},
          {"seed", seed}};
}

nlohmann::json resolve_data(const DataOptions& o) {
  if (o.train_count < 1 || o.val_count < 1) throw ConfigError("train and val counts must be positive");
  if (o.source == "synthetic") {
    return {{"source", "synthetic"},
            {"train_count", o.train_count},
            {"val_count", o.val_count},
            {"size", o.synthetic_size},
            {"noise", o.synthetic_noise},
            {"max_shift", SyntheticSpec{}.max_shift},
            {"pattern_seed", SyntheticSpec{}.pattern_seed},
            {"train_seed", o.seed * 2 + 1},
            {"val_seed", o.seed * 2 + 2}};
  }
  if (o.source == "cifar10") {
    std::string root = o.root;
    if (root.empty()) {
      if (const char* env = std::getenv("SAN_DATA_ROOT")) root = env;
    }
    if (root.empty()) throw UsageError("cifar10 needs --data-root or SAN_DATA_ROOT");
    if (!fs::is_directory(root)) throw UsageError("dataset root " + root + " does not exist");
    return {{"source", "cifar10"},
            {"root", fs::absolute(root).string()},
            {"train_count", o.train_count},
            {"val_count", o.val_count},
            {"split_seed", o.seed}};
  }
  throw ConfigError("unknown data source '" + o.source + "' (expected synthetic or cifar10)");
}

std::pair<Dataset, Dataset> load_splits(const nlohmann::json& data) {
  const auto source = data.at("source").get<std::string>();
  if (source == "synthetic") {
    SyntheticSpec s;
    s.size = data.at("size").get<Index>();
    s.noise = data.at("noise").get<double>();
    s.max_shift = data.at("max_shift").get<int>();
    s.pattern_seed = data.at("pattern_seed").get<std::uint64_t>();
    s.count = data.at("train_count").get<Index>();
    s.seed = data.at("train_seed").get<std::uint64_t>();
    Dataset train = make_synthetic_blobs(s);
    s.count = data.at("val_count").get<Index>();
    s.seed = data.at("val_seed").get<std::uint64_t>();
    return {std::move(train), make_synthetic_blobs(s)};
  }
  // Validation images are drawn from the training batches, as in a held-out
  // split; the test batch stays untouched.
  const Index n_train = data.at("train_count").get<Index>(), n_val = data.at("val_count").get<Index>();
  const fs::path root = data.at("root").get<std::string>();
  if (!fs::is_directory(root)) throw UsageError("dataset root " + root.string() + " does not exist");
  const Dataset all = load_cifar10(root, true, n_train + n_val);
  if (all.size() < n_train + n_val) throw ConfigError("CIFAR-10 has only " + std::to_string(all.size()) + " images");
  const auto order = shuffled_indices(all.size(), data.at("split_seed").get<std::uint64_t>());
  const std::span<const Index> idx(order);
  return {all.subset(idx.subspan(static_cast<std::size_t>(n_val))),
          all.subset(idx.first(static_cast<std::size_t>(n_val)))};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& argv,
                    const nlohmann::json& resolved) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  write_json(dir / "manifest.json", {{"command", command},
                                     {"argv", argv},
                                     {"resolved", resolved},
                                     {"library_version", SAN_VERSION},
                                     {"created_utc", stamp}});
}

namespace {

struct SpecArgs {
  std::string model;
  std::string spec_file;
  std::string attention, relation, position, sharing;
  int footprint = 0, gamma_depth = 0, r1 = 0, r2 = 0, share = 0;
  bool normalize = false;
  std::vector<CLI::Option*> options;

  void add(CLI::App* app, const std::string& default_model) {
    model = default_model;
    app->add_option("--model", model, "preset: san10 san15 san19 san-tiny resnet26 resnet38 resnet50")
        ->capture_default_str();
    app->add_option("--spec", spec_file, "model spec JSON file (instead of --model)");
    options = {app->add_option("--attention", attention, "pairwise | patchwise | scalar | conv"),
               app->add_option("--relation", relation, "relation function"),
               app->add_option("--footprint", footprint, "footprint side of stages 2 onward"),
               app->add_option("--gamma-depth", gamma_depth, "linear layers in gamma (1-3)"),
               app->add_option("--r1", r1, "relation channel reduction"),
               app->add_option("--r2", r2, "value channel reduction"),
               app->add_option("--share", share, "value channels per attention weight"),
               app->add_option("--position", position, "none | absolute | relative"),
               app->add_option("--sharing", sharing, "distinct | phi_psi | all"),
               app->add_flag("--normalize", normalize, "softmax over the footprint (scalar attention)")};
  }

  SpecOverrides overrides() const {
    SpecOverrides o;
    auto given = [&](std::size_t i) { return options[i]->count() > 0; };
    if (given(0)) o.attention = attention;
    if (given(1)) o.relation = relation;
    if (given(2)) o.footprint = footprint;
    if (given(3)) o.gamma_depth = gamma_depth;
    if (given(4)) o.r1 = r1;
    if (given(5)) o.r2 = r2;
    if (given(6)) o.share = share;
    if (given(7)) o.position = position;
    if (given(8)) o.sharing = sharing;
    if (given(9)) o.normalize = normalize;
    return o;
  }

  ModelSpec resolve(const CLI::App* app) const {
    const bool model_given = app->get_option("--model")->count() > 0;
    return resolve_spec(spec_file.empty() || model_given ? model : "", spec_file, overrides());
  }
};

void print_mismatches(const RuntimeCheck& check) {
  for (const auto& m : check.mismatches) std::cerr << "  mismatch: " << m << "\n";
}

int cmd_count(const CLI::App* app, const SpecArgs& sa, const std::string& out, Index input_size, bool runtime,
              const std::vector<std::string>& argv) {
  const ModelSpec spec = sa.resolve(app);
  const Index size = input_size > 0 ? input_size : spec.input_size;
  const CostReport report = count_costs(spec, size);
  json result = report.to_json();
  result["spec"] = spec.to_json();
  int code = kOk;
  if (runtime) {
    const RuntimeCheck check = verify_against_runtime(spec);
    result["runtime_check"] = {{"symbolic", check.symbolic}, {"runtime", check.runtime}, {"ok", check.ok()},
                               {"mismatches", check.mismatches}};
    if (!check.ok()) {
      std::cerr << "runtime parameter count differs from the symbolic count\n";
      print_mismatches(check);
      code = kFailed;
    }
  }
  const fs::path dir = out;
  write_json(dir / "cost.json", result);
  write_text(dir / "cost.txt", report.to_table());
  write_manifest(dir, "count", argv, {{"spec", spec.to_json()}, {"input_size", size}, {"runtime_check", runtime}});
  std::printf("%s: params %.3fM, MACs %.3fG at %lldx%lld -> %s\n", spec.name.c_str(),
              static_cast<double>(report.params) / 1e6, static_cast<double>(report.macs) / 1e9,
              static_cast<long long>(size), static_cast<long long>(size), (dir / "cost.json").string().c_str());
  return code;
}

json run_cases(const std::vector<VerifyCase>& cases, std::uint64_t seed, bool& all_passed, double& worst) {
  json rows = json::array();
  for (const auto& c : cases) {
    CheckResult r = c.run(seed);
    json row = r.to_json();
    row["kind"] = c.kind;
    row["relation"] = c.relation;
    rows.push_back(row);
    all_passed = all_passed && r.passed;
    worst = std::max(worst, r.max_error);
    std::printf("%s %-52s %-14s err=%.3e tol=%.0e\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.shape.c_str(),
                r.max_error, r.tolerance);
    if (!r.passed) {
      std::fprintf(stderr, "failed: operator %s, shape %s, max error %.6e > %.1e\n", r.name.c_str(), r.shape.c_str(),
                   r.max_error, r.tolerance);
    }
  }
  return rows;
}

int cmd_gradcheck(const std::string& kind, const std::string& relation, std::uint64_t seed, bool inject_fault,
                  const std::string& out, const std::vector<std::string>& argv) {
  auto cases = filter_cases(gradcheck_cases(), kind, relation);
  if (inject_fault) cases.push_back(faulty_gradient_case());
  if (cases.empty()) throw UsageError("no gradient check matches kind '" + kind + "' relation '" + relation + "'");
  bool passed = true;
  double worst = 0;
  json rows = run_cases(cases, seed, passed, worst);
  const fs::path dir = out;
  write_json(dir / "gradcheck.json", {{"cases", rows}, {"count", rows.size()}, {"max_error", worst}, {"passed", passed}});
  write_manifest(dir, "gradcheck", argv,
                 {{"kind", kind}, {"relation", relation}, {"seed", seed}, {"inject_fault", inject_fault}});
  std::printf("%zu gradient checks, max relative error %.3e: %s\n", rows.size(), worst, passed ? "ok" : "FAILED");
  return passed ? kOk : kFailed;
}

int cmd_oracle(const std::string& kind, const std::string& relation, int count, bool properties, std::uint64_t seed,
               const std::string& out, const std::vector<std::string>& argv) {
  if (count < 1) throw ConfigError("--count must be positive");
  const auto oracles = filter_cases(oracle_cases(count), kind, relation);
  const auto props = properties ? filter_cases(property_cases(), kind, relation) : std::vector<VerifyCase>{};
  if (oracles.empty() && props.empty()) {
    throw UsageError("no oracle or property case matches kind '" + kind + "' relation '" + relation + "'");
  }
  bool passed = true;
  double worst_oracle = 0, worst_property = 0;
  json oracle_rows = run_cases(oracles, seed, passed, worst_oracle);
  json property_rows = run_cases(props, seed, passed, worst_property);
  const fs::path dir = out;
  write_json(dir / "oracle.json", {{"oracle", oracle_rows},
                                   {"property", property_rows},
                                   {"max_oracle_error", worst_oracle},
                                   {"max_property_error", worst_property},
                                   {"passed", passed}});
  write_manifest(dir, "oracle", argv,
                 {{"kind", kind}, {"relation", relation}, {"count", count}, {"properties", properties}, {"seed", seed}});
  std::printf("%zu oracle cases (max abs diff %.3e), %zu property cases: %s\n", oracle_rows.size(), worst_oracle,
              property_rows.size(), passed ? "ok" : "FAILED");
  return passed ? kOk : kFailed;
}

int cmd_train(const CLI::App* app, const SpecArgs& sa, DataOptions data_opt, const TrainConfig& cfg,
              const std::string& out, const std::vector<std::string>& argv) {
  const ModelSpec spec = sa.resolve(app);
  data_opt.seed = cfg.seed;
  const json data = resolve_data(data_opt);
  const auto [train_set, val_set] = load_splits(data);
  const Normalization norm = Normalization::fit(train_set);
  Model<float> model = Model<float>::build(spec, cfg.seed);
  const fs::path dir = out;
  const json config{{"model", spec.to_json()},
                    {"train", cfg.to_json()},
                    {"data", data},
                    {"normalization", norm.to_json()}};
  write_json(dir / "config.json", config);
  write_manifest(dir, "train", argv, config);
  std::printf("training %s on %s: %lld train / %lld val images, %lld parameters\n", spec.name.c_str(),
              data.at("source").get<std::string>().c_str(), static_cast<long long>(train_set.size()),
              static_cast<long long>(val_set.size()), static_cast<long long>(model.parameter_count()));
  RunOutputs outputs;
  outputs.directory = dir;
  outputs.on_epoch = [](const EpochMetrics& m) {
    std::printf("epoch %3d  lr %.5f  loss %.4f  val top1 %.4f  top5 %.4f\n", m.epoch, m.lr, m.train_loss, m.val_top1,
                m.val_top5);
    std::fflush(stdout);
  };
  const RunReport report = train(model, train_set, val_set, norm, cfg, outputs);
  write_json(dir / "report.json", report.to_json());
  std::printf("best val top1 %.4f at epoch %d -> %s\n", report.best_top1, report.best_epoch, dir.string().c_str());
  return kOk;
}

struct LoadedRun {
  json config;
  Model<float> model;
  Normalization norm;
  Dataset val;
};

LoadedRun load_run(const fs::path& run, const std::string& checkpoint) {
  if (!fs::is_directory(run)) throw UsageError("run directory " + run.string() + " does not exist");
  json config = read_json(run / "config.json");
  fs::path ckpt = checkpoint.empty() ? run / "best.ckpt" : fs::path(checkpoint);
  if (!fs::exists(ckpt)) throw UsageError("checkpoint " + ckpt.string() + " does not exist");
  Model<float> model = load_checkpoint<float>(ckpt);
  Normalization norm = Normalization::from_json(config.at("normalization"));
  auto splits = load_splits(config.at("data"));
  return {std::move(config), std::move(model), std::move(norm), std::move(splits.second)};
}

Dataset first_images(const Dataset& d, Index count) {
  if (count < 0 || count >= d.size()) return d;
  std::vector<Index> idx(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i;
  return d.subset(idx);
}

std::string default_out(const std::string& out, const std::string& run, const std::string& leaf) {
  return out.empty() ? (fs::path(run) / leaf).string() : out;
}

int cmd_eval(const std::string& run, const std::string& checkpoint, Index images, const std::string& out,
             const std::vector<std::string>& argv) {
  LoadedRun r = load_run(run, checkpoint);
  const Dataset data = first_images(r.val, images);
  const Accuracy acc = evaluate(r.model, data, r.norm);
  const fs::path dir = default_out(out, run, "eval");
  write_json(dir / "eval.json", {{"images", acc.count}, {"top1", acc.top1}, {"top5", acc.top5}});
  write_manifest(dir, "eval", argv,
                 {{"run", fs::absolute(run).string()}, {"checkpoint", checkpoint}, {"images", images}, {"config", r.config}});
  std::printf("%lld images: top1 %.4f  top5 %.4f\n", static_cast<long long>(acc.count), acc.top1, acc.top5);
  return kOk;
}

std::string attack_label(const AttackConfig& a) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "attack_eps%g_step%g_iters%d", a.epsilon, a.step, a.iterations);
  return buf;
}

int cmd_robust(const std::string& run, const std::string& checkpoint, const std::vector<std::string>& names,
               const AttackConfig& attack, Index images, const std::string& out, const std::vector<std::string>& argv) {
  std::vector<Manipulation> manipulations;
  for (const auto& n : names) manipulations.push_back(parse_manipulation(n));
  if (manipulations.empty()) manipulations = all_manipulations();
  LoadedRun r = load_run(run, checkpoint);
  const Dataset data = first_images(r.val, images);
  std::vector<AttackConfig> attacks;
  if (attack.iterations > 0) attacks.push_back(attack);
  const RobustnessReport report = robustness_report(r.model, data, r.norm, manipulations, attacks);
  const fs::path dir = default_out(out, run, "robust");
  json result = report.to_json();
  result["images"] = data.size();
  write_json(dir / "robust.json", result);
  write_text(dir / "robust.csv", report.to_csv());
  std::ostringstream table;
  char line[160];
  std::snprintf(line, sizeof(line), "%-28s %14s %14s\n", "test", "top1(drop)", "top5(drop)");
  table << line;
  for (const auto& row : report.rows) {
    std::snprintf(line, sizeof(line), "%-28s %14s %14s\n", row.name.c_str(),
                  format_with_drop(row.top1, row.drop1).c_str(), format_with_drop(row.top5, row.drop5).c_str());
    table << line;
  }
  write_text(dir / "robust.txt", table.str());
  json names_json = json::array();
  for (Manipulation m : manipulations) names_json.push_back(std::string(to_string(m)));
  write_manifest(dir, "robust", argv,
                 {{"run", fs::absolute(run).string()},
                  {"checkpoint", checkpoint},
                  {"manipulations", names_json},
                  {"attack", attacks.empty() ? json() : attack.to_json()},
                  {"images", images},
                  {"config", r.config}});
  std::cout << table.str();
  return kOk;
}

int cmd_attack(const std::string& run, const std::string& checkpoint, const AttackConfig& cfg, Index images,
               const std::string& out, const std::vector<std::string>& argv) {
  LoadedRun r = load_run(run, checkpoint);
  const Dataset data = first_images(r.val, images);
  const AttackResult result = pgd_attack(r.model, data, r.norm, cfg);
  const fs::path dir = default_out(out, run, attack_label(cfg));
  write_json(dir / "attack.json", result.to_json());
  write_manifest(dir, "attack", argv,
                 {{"run", fs::absolute(run).string()},
                  {"checkpoint", checkpoint},
                  {"attack", cfg.to_json()},
                  {"images", images},
                  {"config", r.config}});
  const double linf = result.linf_per_step.empty() ? 0.0 : *std::max_element(result.linf_per_step.begin(),
                                                                              result.linf_per_step.end());
  std::printf("%lld images, eps %g step %g iters %d: clean top1 %.4f, under attack %.4f, success %.4f, max Linf %g\n",
              static_cast<long long>(result.images), cfg.epsilon, cfg.step, cfg.iterations, result.clean_top1,
              result.attacked_top1, result.success_rate, linf);
  return kOk;
}

}  // namespace

int run(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Self-attention network kernels: accounting, verification, training and robustness probes", "san"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SAN_VERSION);

  // count
  auto* count = app.add_subcommand("count", "parameter and multiply-accumulate counts");
  SpecArgs count_spec;
  count_spec.add(count, "san10");
  std::string count_out = "runs/count";
  Index input_size = 0;
  bool runtime = false;
  count->add_option("--input-size", input_size, "input side in pixels (default: the model's)");
  count->add_flag("--runtime-check", runtime, "also build the model and compare allocated scalars");
  count->add_option("--out", count_out, "output directory")->capture_default_str();

  // gradcheck / oracle
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks in double precision");
  std::string g_kind, g_relation, g_out = "runs/gradcheck";
  std::uint64_t g_seed = 0;
  bool inject = false;
  gradcheck->add_option("--kind", g_kind, "primitive | pairwise | patchwise | scalar | conv | block");
  gradcheck->add_option("--relation", g_relation, "relation or variant label");
  gradcheck->add_option("--seed", g_seed)->capture_default_str();
  gradcheck->add_flag("--inject-fault", inject, "append an operator with a wrong-sign gradient");
  gradcheck->add_option("--out", g_out, "output directory")->capture_default_str();

  auto* oracle = app.add_subcommand("oracle", "vectorized operators against naive loops, plus structural properties");
  std::string o_kind, o_relation, o_out = "runs/oracle";
  std::uint64_t o_seed = 0;
  int o_count = 20;
  bool no_properties = false;
  oracle->add_option("--kind", o_kind, "primitive | pairwise | patchwise | scalar | conv | block");
  oracle->add_option("--relation", o_relation, "relation or variant label");
  oracle->add_option("--count", o_count, "random configurations per operator kind")->capture_default_str();
  oracle->add_flag("--no-properties", no_properties, "skip the structural property checks");
  oracle->add_option("--seed", o_seed)->capture_default_str();
  oracle->add_option("--out", o_out, "output directory")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model; writes a run directory");
  SpecArgs train_spec;
  train_spec.add(train_cmd, "san-tiny");
  DataOptions data_opt;
  TrainConfig cfg;
  Index train_count = -1, val_count = -1;
  bool no_augment = false;
  std::string t_out = "runs/train";
  train_cmd->add_option("--data", data_opt.source, "synthetic | cifar10")->capture_default_str();
  train_cmd->add_option("--data-root", data_opt.root, "cifar-10-batches-bin directory (default: $SAN_DATA_ROOT)");
  train_cmd->add_option("--train-count", train_count, "training images (synthetic 2000, cifar10 5000)");
  train_cmd->add_option("--val-count", val_count, "validation images (default 1000)");
  train_cmd->add_option("--synthetic-size", data_opt.synthetic_size, "synthetic image side")->capture_default_str();
  train_cmd->add_option("--noise", data_opt.synthetic_noise, "synthetic pixel noise sigma")->capture_default_str();
  train_cmd->add_option("--epochs", cfg.epochs)->capture_default_str();
  train_cmd->add_option("--lr", cfg.base_lr, "base learning rate (cosine schedule)")->capture_default_str();
  train_cmd->add_option("--momentum", cfg.momentum)->capture_default_str();
  train_cmd->add_option("--weight-decay", cfg.weight_decay)->capture_default_str();
  train_cmd->add_option("--label-smoothing", cfg.label_smoothing)->capture_default_str();
  train_cmd->add_option("--batch-size", cfg.batch_size)->capture_default_str();
  train_cmd->add_flag("--no-augment", no_augment, "disable random crop and flip");
  train_cmd->add_option("--seed", cfg.seed)->capture_default_str();
  train_cmd->add_option("--out", t_out, "run directory")->capture_default_str();

  // eval / robust / attack
  struct RunArgs {
    std::string run, checkpoint, out;
    Index images = -1;
    void add(CLI::App* c, Index default_images) {
      images = default_images;
      c->add_option("--run", run, "run directory written by train")->required();
      c->add_option("--checkpoint", checkpoint, "checkpoint (default: RUN/best.ckpt)");
      c->add_option("--images", images, "use the first N validation images (-1: all)")->capture_default_str();
      c->add_option("--out", out, "output directory (default: inside the run directory)");
    }
  };
  auto add_attack = [](CLI::App* c, AttackConfig& a) {
    c->add_option("--eps", a.epsilon, "L-inf radius in 0-255 pixel units")->capture_default_str();
    c->add_option("--step", a.step, "step size in pixel units")->capture_default_str();
    c->add_option("--iters", a.iterations, "PGD iterations")->capture_default_str();
    c->add_option("--target-seed", a.seed, "seed of the per-image target classes")->capture_default_str();
  };

  auto* eval_cmd = app.add_subcommand("eval", "top-1 / top-5 of a trained run");
  RunArgs eval_args;
  eval_args.add(eval_cmd, -1);

  auto* robust = app.add_subcommand("robust", "zero-shot rotation / flip evaluation, optional PGD row");
  RunArgs robust_args;
  robust_args.add(robust, -1);
  std::vector<std::string> manipulations;
  AttackConfig robust_attack;
  robust_attack.iterations = 0;
  robust->add_option("--manipulation", manipulations, "none cw90 cw180 cw270 upside_down_flip (default: all)");
  add_attack(robust, robust_attack);

  auto* attack = app.add_subcommand("attack", "white-box targeted PGD");
  RunArgs attack_args;
  attack_args.add(attack, 500);
  AttackConfig attack_cfg;
  add_attack(attack, attack_cfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*count) return cmd_count(count, count_spec, count_out, input_size, runtime, args);
    if (*gradcheck) return cmd_gradcheck(g_kind, g_relation, g_seed, inject, g_out, args);
    if (*oracle) return cmd_oracle(o_kind, o_relation, o_count, !no_properties, o_seed, o_out, args);
    if (*train_cmd) {
      cfg.augment = !no_augment;
      const bool cifar = data_opt.source == "cifar10";
      data_opt.train_count = train_count > 0 ? train_count : (cifar ? 5000 : 2000);
      data_opt.val_count = val_count > 0 ? val_count : 1000;
      return cmd_train(train_cmd, train_spec, data_opt, cfg, t_out, args);
    }
    if (*eval_cmd) return cmd_eval(eval_args.run, eval_args.checkpoint, eval_args.images, eval_args.out, args);
    if (*robust) {
      return cmd_robust(robust_args.run, robust_args.checkpoint, manipulations, robust_attack, robust_args.images,
                        robust_args.out, args);
    }
    if (*attack) {
      return cmd_attack(attack_args.run, attack_args.checkpoint, attack_cfg, attack_args.images, attack_args.out, args);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kUsage;
  } catch (const DimensionError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kFailed;
  } catch (const json::exception& e) {
    std::cerr << "malformed JSON: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}

}  // namespace san::cli

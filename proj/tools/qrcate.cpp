// qrcate command-line driver.
//
// Every subcommand reads an optional YAML config (--config), whose keys are
// the long flag names; flags given on the command line win. The resolved
// settings are written to <output-dir>/resolved_config.yaml.
//
// Exit codes: 0 ok, 1 runtime failure, 2 bad config or flags, 3 missing
// input file or column. Errors are one line on stderr:
//   qrcate: error code=<n> kind=<kind> message="<text>"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "qrcate/qrcate.hpp"

namespace fs = std::filesystem;
using namespace qrcate;

namespace {

struct ExitError {
  int code;
  std::string kind;
  std::string message;
};

[[noreturn]] void fail(int code, std::string kind, std::string message) {
  throw ExitError{code, std::move(kind), std::move(message)};
}

using Target = std::variant<int*, long*, double*, std::string*, std::uint64_t*, bool*,
                            std::vector<long>*, std::vector<double>*, std::vector<std::string>*>;

struct Setting {
  std::string name;
  std::string help;
  Target target;
};

/// Settings shared by a subcommand's flags, its YAML config and its snapshot.
class SettingTable {
 public:
  template <class T>
  void add(std::string name, T* target, std::string help) {
    settings_.push_back({std::move(name), std::move(help), target});
  }

  void bind(CLI::App& app) {
    for (auto& s : settings_) {
      std::visit(
          [&](auto* target) {
            using T = std::remove_pointer_t<decltype(target)>;
            if constexpr (std::is_same_v<T, bool>) {
              app.add_flag("--" + s.name, *target, s.help);
            } else if constexpr (std::is_same_v<T, std::vector<long>> || std::is_same_v<T, std::vector<double>> ||
                                 std::is_same_v<T, std::vector<std::string>>) {
              app.add_option("--" + s.name, *target, s.help)->delimiter(',')->capture_default_str();
            } else {
              app.add_option("--" + s.name, *target, s.help)->capture_default_str();
            }
          },
          s.target);
    }
  }

  void load(const YAML::Node& root, const std::string& command) {
    if (!root.IsMap()) fail(2, "config", "config must be a key-value mapping");
    std::set<std::string> known;
    for (const auto& s : settings_) known.insert(s.name);
    for (const auto& item : root) {
      const auto key = item.first.as<std::string>();
      if (key == "command") {
        if (item.second.as<std::string>() != command) {
          fail(2, "config", "config is for command '" + item.second.as<std::string>() + "'");
        }
        continue;
      }
      if (!known.count(key)) fail(2, "config", "unknown config key '" + key + "'");
    }
    for (auto& s : settings_) {
      const YAML::Node node = root[s.name];
      if (!node) continue;
      try {
        std::visit(
            [&](auto* target) {
              using T = std::remove_pointer_t<decltype(target)>;
              if constexpr (std::is_same_v<T, std::vector<long>> || std::is_same_v<T, std::vector<double>> ||
                            std::is_same_v<T, std::vector<std::string>>) {
                if (node.IsSequence()) {
                  *target = node.as<T>();
                } else {
                  *target = T{node.as<typename T::value_type>()};
                }
              } else {
                *target = node.as<T>();
              }
            },
            s.target);
      } catch (const YAML::Exception&) {
        fail(2, "config", "bad value for config key '" + s.name + "'");
      }
    }
  }

  std::string snapshot(const std::string& command) const {
    YAML::Emitter out;
    out << YAML::BeginMap << YAML::Key << "command" << YAML::Value << command;
    for (const auto& s : settings_) {
      out << YAML::Key << s.name << YAML::Value;
      std::visit(
          [&](auto* target) {
            using T = std::remove_pointer_t<decltype(target)>;
            if constexpr (std::is_same_v<T, std::vector<long>> || std::is_same_v<T, std::vector<double>> ||
                          std::is_same_v<T, std::vector<std::string>>) {
              out << YAML::Flow << YAML::BeginSeq;
              for (const auto& v : *target) out << v;
              out << YAML::EndSeq;
            } else if constexpr (std::is_same_v<T, double>) {
              char buffer[32];
              auto [end, ec] = std::to_chars(buffer, buffer + sizeof buffer, *target);
              (void)ec;
              out << std::string(buffer, end);
            } else {
              out << *target;
            }
          },
          s.target);
    }
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
  }

 private:
  std::vector<Setting> settings_;
};

struct Common {
  std::uint64_t seed = 0;
  int threads = default_threads();
  std::string output_dir = [] {
    const char* env = std::getenv("QRCATE_OUTPUT_DIR");
    return std::string(env != nullptr && *env != '\0' ? env : ".");
  }();
  std::string config;
};

struct LearnerOptions {
  std::string stage1 = "gbrt";
  double stage1_ridge = 0.0;
  int rounds = 100;
  double learning_rate = 0.1;
  int max_depth = 3;
  int min_leaf = 20;
  int bins = 255;
  std::string stage2 = "ridge-linear";
  double stage2_ridge = 1e-6;
  int folds = 2;
  int combine_folds = 3;

  void add_to(SettingTable& t) {
    t.add("stage1", &stage1, "nuisance regressor: gbrt | linear | ridge-linear");
    t.add("stage1-ridge", &stage1_ridge, "ridge penalty of a linear nuisance regressor");
    t.add("rounds", &rounds, "boosting rounds");
    t.add("learning-rate", &learning_rate, "boosting learning rate");
    t.add("max-depth", &max_depth, "tree depth");
    t.add("min-leaf", &min_leaf, "minimum rows per leaf");
    t.add("bins", &bins, "histogram bins per feature");
    t.add("stage2", &stage2, "final CATE regressor: linear | ridge-linear | gbrt");
    t.add("stage2-ridge", &stage2_ridge, "ridge penalty of the final regression");
    t.add("folds", &folds, "cross-fitting folds");
    t.add("combine-folds", &combine_folds, "CV folds of the combined learner");
  }

  LearnerConfig resolve() const {
    GbrtConfig gbrt{rounds, learning_rate, max_depth, min_leaf, bins};
    auto spec = [&](const std::string& kind, double ridge) {
      RegressorSpec s{parse_regressor_kind(kind), ridge, gbrt};
      if (s.kind == RegressorKind::linear) s.ridge = 0.0;
      return s;
    };
    LearnerConfig cfg;
    cfg.stage1 = spec(stage1, stage1_ridge);
    cfg.stage2 = spec(stage2, stage2_ridge);
    cfg.folds = folds;
    cfg.combine_folds = combine_folds;
    cfg.validate();
    return cfg;
  }
};

void add_common(SettingTable& t, Common& c) {
  t.add("seed", &c.seed, "global seed");
  t.add("threads", &c.threads, "worker threads (results do not depend on it)");
  t.add("output-dir", &c.output_dir, "output directory (default $QRCATE_OUTPUT_DIR or .)");
}

/// Schema flags for CSV ingestion.
struct SchemaOptions {
  std::vector<std::string> x;
  std::vector<std::string> categorical;
  std::string s;
  std::string a = "a";
  std::string y = "y";
  std::string e;
  double e_constant = 0.5;

  void add_to(SettingTable& t) {
    t.add("x", &x, "numeric covariate columns (default: every other column)");
    t.add("categorical", &categorical, "categorical covariate columns (one-hot, lexicographic levels)");
    t.add("s-column", &s, "source column (1 = trial), default s; fit excludes it from the covariates");
    t.add("a-column", &a, "treatment column");
    t.add("y-column", &y, "outcome column");
    t.add("e-column", &e, "trial propensity column (default: e if present, else --e-constant)");
    t.add("e-constant", &e_constant, "constant trial propensity when no e column is named");
  }

  CsvSchema resolve(const CsvTable& table, std::optional<int> fixed_source) const {
    CsvSchema schema;
    schema.categorical = categorical;
    schema.a = a;
    schema.y = y;
    if (!e.empty()) {
      schema.e = e;
    } else if (table.find("e")) {
      schema.e = "e";
    }
    schema.e_constant = e_constant;
    if (fixed_source) {
      schema.s_constant = *fixed_source;
    } else {
      schema.s = s.empty() ? std::string("s") : s;
    }
    if (!x.empty()) {
      schema.x = x;
    } else {
      std::set<std::string> reserved(categorical.begin(), categorical.end());
      reserved.insert({a, y});
      if (schema.s) reserved.insert(*schema.s);
      if (!s.empty()) reserved.insert(s);
      if (schema.e) reserved.insert(*schema.e);
      for (const auto& h : table.header) {
        if (!reserved.count(h)) schema.x.push_back(h);
      }
    }
    return schema;
  }
};

void prepare_output(const Common& c, const SettingTable& table, const std::string& command) {
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) fail(3, "output", "cannot create output directory '" + c.output_dir + "'");
  std::ofstream out(fs::path(c.output_dir) / "resolved_config.yaml");
  if (!out) fail(3, "output", "cannot write to '" + c.output_dir + "'");
  out << table.snapshot(command);
}

std::string out_path(const Common& c, const std::string& name) { return (fs::path(c.output_dir) / name).string(); }

std::vector<Index> to_indices(const std::vector<long>& v) { return {v.begin(), v.end()}; }

std::vector<LearnerKind> to_learners(const std::vector<std::string>& names) {
  std::vector<LearnerKind> out;
  for (const auto& n : names) out.push_back(parse_learner_kind(n));
  return out;
}

/// One input block of `fit`: rows enter the merged table with a fixed source.
struct Block {
  const CsvTable* table;
  int source;
  bool labeled;
  bool trial_e;
};

/// Stacks the blocks into one table so categorical levels are shared.
/// Columns come from each block by name; a missing column is reported by name.
CsvTable merge_blocks(const std::vector<Block>& blocks, const CsvSchema& schema) {
  CsvTable out;
  out.header = schema.x;
  out.header.insert(out.header.end(), schema.categorical.begin(), schema.categorical.end());
  out.header.insert(out.header.end(), {"__a", "__y", "__s", "__e"});
  const std::string e_fill = detail::format_double(schema.e_constant);
  for (const Block& b : blocks) {
    std::vector<std::size_t> cols;
    for (const auto& name : schema.x) cols.push_back(b.table->column(name));
    for (const auto& name : schema.categorical) cols.push_back(b.table->column(name));
    std::optional<std::size_t> a_col;
    std::optional<std::size_t> y_col;
    std::optional<std::size_t> e_col;
    if (b.labeled) {
      a_col = b.table->column(schema.a);
      y_col = b.table->column(schema.y);
    }
    if (b.trial_e && schema.e) e_col = b.table->column(*schema.e);
    for (const auto& row : b.table->rows) {
      std::vector<std::string> cells;
      for (std::size_t c : cols) cells.push_back(row[c]);
      cells.push_back(a_col ? row[*a_col] : "0");
      cells.push_back(y_col ? row[*y_col] : "0");
      cells.push_back(std::to_string(b.source));
      cells.push_back(e_col ? row[*e_col] : e_fill);
      out.rows.push_back(std::move(cells));
    }
  }
  return out;
}

CsvSchema merged_schema(const CsvSchema& schema) {
  CsvSchema out = schema;
  out.a = "__a";
  out.y = "__y";
  out.s = "__s";
  out.e = "__e";
  return out;
}

CsvTable read_input(const std::string& path, const std::string& flag) {
  if (path.empty()) fail(2, "config", "--" + flag + " is required");
  if (!fs::exists(path)) throw FileError(path);
  return read_csv_table(path);
}

Vector to_vector(const std::vector<double>& v) {
  return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())));
}

nlohmann::json to_json(const TestResult& t) {
  auto number = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return std::isnan(v) ? nlohmann::json("nan") : nlohmann::json(v > 0 ? "inf" : "-inf");
  };
  return {{"method", t.method},         {"estimate", number(t.estimate)}, {"se", number(t.se)},
          {"ci_lo", number(t.ci_lo)},   {"ci_hi", number(t.ci_hi)},       {"p_value", number(t.p_value)},
          {"rejected", t.rejected},     {"statistic", number(t.statistic)}, {"dof", number(t.dof)}};
}

struct SynthOptions {
  bool synthetic = false;
  long n_rural = 2811;
  long n_urban = 1407;

  void add_to(SettingTable& t) {
    t.add("synthetic", &synthetic, "use generated STAR-shaped records instead of --input");
    t.add("synth-rural", &n_rural, "rural rows of the synthetic table");
    t.add("synth-urban", &n_urban, "urban rows of the synthetic table");
  }

  StarRaw load(const std::string& input, std::uint64_t seed) const {
    if (synthetic) {
      if (!input.empty()) fail(2, "config", "--input and --synthetic are exclusive");
      StarSynthConfig cfg;
      cfg.n_rural = n_rural;
      cfg.n_urban = n_urban;
      cfg.seed = seed;
      return synth_star(cfg);
    }
    if (input.empty()) fail(2, "config", "STAR commands need --input or --synthetic");
    if (!fs::exists(input)) throw FileError(input);
    return load_star_csv(input);
  }
};

class Command {
 public:
  virtual ~Command() = default;
  virtual const char* name() const = 0;
  virtual const char* description() const = 0;
  virtual void run() = 0;

  SettingTable table;
  Common common;
};

class SimulateRmse : public Command {
 public:
  SimulateRmse() {
    table.add("scenario", &scenario_, "aligned | violated");
    table.add("n1", &n1_, "trial size");
    table.add("n0", &n0_, "external sizes (comma list)");
    table.add("learners", &learners_, "learners to compare (comma list)");
    table.add("reps", &reps_, "replications");
    table.add("eval-n", &eval_n_, "evaluation draw size");
    table.add("alpha0", &alpha0_, "external propensity intercept");
    table.add("alpha", &alpha_, "external propensity slopes (d values; empty = 1/sqrt(d))");
    learner_.add_to(table);
    add_common(table, common);
  }
  const char* name() const override { return "simulate-rmse"; }
  const char* description() const override { return "RMSE of CATE learners on the synthetic DGP"; }

  void run() override {
    RmseSpec spec;
    spec.scenario = parse_scenario(scenario_);
    spec.n1 = n1_;
    spec.n0s = to_indices(n0_);
    spec.learners = to_learners(learners_);
    spec.reps = reps_;
    spec.eval_n = eval_n_;
    spec.seed = common.seed;
    spec.threads = common.threads;
    spec.learner = learner_.resolve();
    spec.alpha0 = alpha0_;
    spec.alpha = to_vector(alpha_);
    spec.validate();
    spec.dgp(spec.n0s.front(), 0).validate();
    prepare_output(common, table, name());
    const auto rows = run_rmse_experiment(spec);
    const std::string path = out_path(common, "rmse_results.csv");
    write_file(path, rows, [](std::ostream& out, const auto& r) { write_rmse_csv(out, r); });
    std::cout << path << '\n';
  }

 private:
  std::string scenario_ = "aligned";
  long n1_ = 250;
  std::vector<long> n0_ = {100, 1000, 10000};
  std::vector<std::string> learners_ = {"dr", "qr"};
  int reps_ = 100;
  long eval_n_ = 2000;
  double alpha0_ = 0.0;
  std::vector<double> alpha_;
  LearnerOptions learner_;
};

class SimulatePower : public Command {
 public:
  SimulatePower() {
    table.add("n1", &n1_, "trial sizes (comma list)");
    table.add("n0", &n0_, "external size");
    table.add("beta", &beta_, "interaction strength of the effect-present setting");
    table.add("methods", &methods_, "cov-adj | pooled-cov-adj | dr-pseudo | qr-pseudo | asiaee-pseudo");
    table.add("settings", &settings_, "absent | present (comma list)");
    table.add("reps", &reps_, "replications");
    table.add("alpha0", &alpha0_, "external propensity intercept");
    table.add("alpha", &alpha_, "external propensity slopes (d values; empty = 1/sqrt(d))");
    learner_.add_to(table);
    add_common(table, common);
  }
  const char* name() const override { return "simulate-power"; }
  const char* description() const override { return "rejection rates of effect-modification tests"; }

  void run() override {
    PowerSpec spec;
    spec.n1s = to_indices(n1_);
    spec.n0 = n0_;
    spec.beta = beta_;
    spec.methods.clear();
    for (const auto& m : methods_) spec.methods.push_back(parse_power_method(m));
    spec.absent = false;
    spec.present = false;
    for (const auto& s : settings_) {
      if (s == "absent") {
        spec.absent = true;
      } else if (s == "present") {
        spec.present = true;
      } else {
        fail(2, "config", "unknown power setting '" + s + "'");
      }
    }
    spec.reps = reps_;
    spec.seed = common.seed;
    spec.threads = common.threads;
    spec.learner = learner_.resolve();
    spec.alpha0 = alpha0_;
    spec.alpha = to_vector(alpha_);
    spec.validate();
    DGPConfig probe = DGPConfig::power(spec.n1s.front(), spec.n0, spec.beta);
    probe.alpha = spec.alpha;
    probe.validate();
    prepare_output(common, table, name());
    const auto rows = run_power_experiment(spec);
    const std::string path = out_path(common, "power_results.csv");
    write_file(path, rows, [](std::ostream& out, const auto& r) { write_power_csv(out, r); });
    std::cout << path << '\n';
  }

 private:
  std::vector<long> n1_ = {250, 500, 1000};
  long n0_ = 1000;
  double beta_ = 0.03;
  std::vector<std::string> methods_ = {"cov-adj", "pooled-cov-adj", "dr-pseudo", "qr-pseudo", "asiaee-pseudo"};
  std::vector<std::string> settings_ = {"absent", "present"};
  int reps_ = 500;
  double alpha0_ = 0.0;
  std::vector<double> alpha_;
  LearnerOptions learner_;
};

class StarPrep : public Command {
 public:
  StarPrep() {
    table.add("input", &input_, "raw STAR CSV");
    synth_.add_to(table);
    table.add("trial-e", &trial_e_, "trial propensity written to the partitions");
    add_common(table, common);
  }
  const char* name() const override { return "star-prep"; }
  const char* description() const override { return "split raw STAR records into trial and external CSVs"; }

  void run() override {
    const StarRaw raw = synth_.load(input_, common.seed);
    const StarPartition part = build_star_partition(raw, common.seed, trial_e_);
    prepare_output(common, table, name());
    if (synth_.synthetic) write_star_csv(out_path(common, "star_raw.csv"), raw);
    write_csv(out_path(common, "star_trial.csv"), part.trial);
    write_csv(out_path(common, "star_external.csv"), part.external);
    std::cout << "trial=" << part.trial.n() << " external=" << part.external.n() << " dropped=" << part.dropped
              << " d=" << part.dim << '\n';
  }

 private:
  std::string input_;
  SynthOptions synth_;
  double trial_e_ = 0.5;
};

class StarEval : public Command {
 public:
  StarEval() {
    learner_.stage2_ridge = 10.0;
    table.add("input", &input_, "raw STAR CSV");
    synth_.add_to(table);
    table.add("n1", &n1_, "trial subsample size");
    table.add("n0", &n0_, "external subsample sizes (comma list)");
    table.add("learners", &learners_, "learners to compare (comma list)");
    table.add("reps", &reps_, "replications");
    table.add("holdout", &holdout_, "held-out fraction of the trial subsample");
    table.add("hist-bins", &bins_, "bins of the overlap histogram");
    table.add("trial-e", &trial_e_, "trial propensity");
    learner_.add_to(table);
    add_common(table, common);
  }
  const char* name() const override { return "star-eval"; }
  const char* description() const override { return "proxy-RMSE sweep over external sample size on STAR"; }

  void run() override {
    StarSpec spec;
    spec.n1 = n1_;
    spec.n0s = to_indices(n0_);
    spec.learners = to_learners(learners_);
    spec.reps = reps_;
    spec.holdout = holdout_;
    spec.seed = common.seed;
    spec.threads = common.threads;
    spec.learner = learner_.resolve();
    spec.validate();
    if (bins_ < 1) fail(2, "config", "hist-bins must be >= 1");
    const StarRaw raw = synth_.load(input_, common.seed);
    const StarPartition part = build_star_partition(raw, common.seed, trial_e_);
    prepare_output(common, table, name());
    const auto rows = run_star_experiment(part, spec);
    const std::string path = out_path(common, "star_results.csv");
    write_file(path, rows, [](std::ostream& out, const auto& r) { write_star_csv_results(out, r); });
    const auto hist = overlap_histogram(part, bins_, spec.learner.classifier);
    write_file(out_path(common, "overlap_histogram.csv"), hist,
               [](std::ostream& out, const auto& r) { write_histogram_csv(out, r); });
    std::cout << path << '\n';
  }

 private:
  std::string input_;
  SynthOptions synth_;
  long n1_ = 1000;
  std::vector<long> n0_ = {100, 500, 1000, 1500};
  std::vector<std::string> learners_ = {"t", "pooled-t", "dr", "qr", "asiaee", "combined"};
  int reps_ = 50;
  double holdout_ = 0.3;
  int bins_ = 20;
  double trial_e_ = 0.5;
  LearnerOptions learner_;
};

class TransportTest : public Command {
 public:
  TransportTest() {
    table.add("input", &input_, "CSV with trial and external rows (needs a source column)");
    table.add("star-input", &star_input_, "raw STAR CSV; tests its trial/external partition");
    synth_.add_to(table);
    schema_.add_to(table);
    add_common(table, common);
  }
  const char* name() const override { return "transport-test"; }
  const char* description() const override { return "test whether Y and S are independent given X and A"; }

  void run() override {
    Dataset data;
    if (!input_.empty()) {
      if (synth_.synthetic || !star_input_.empty()) fail(2, "config", "give one of --input, --star-input, --synthetic");
      const CsvTable t = read_input(input_, "input");
      data = table_to_dataset(t, schema_.resolve(t, std::nullopt));
      validate(data);
    } else {
      const StarPartition part = build_star_partition(synth_.load(star_input_, common.seed), common.seed);
      data = Dataset::concat(part.trial, part.external);
    }
    prepare_output(common, table, name());
    nlohmann::json out = to_json(transportability_test(data));
    out["n"] = data.n();
    out["d"] = data.d();
    std::ofstream(out_path(common, "transport_test.json")) << out.dump(2) << '\n';
    std::cout << out.dump() << '\n';
  }

 private:
  std::string input_;
  std::string star_input_;
  SynthOptions synth_;
  SchemaOptions schema_;
};

class Fit : public Command {
 public:
  Fit() {
    table.add("learner", &learner_name_, "dr | t | pooled-t | ate | qr | asiaee | kallus | combined");
    table.add("trial", &trial_, "trial CSV");
    table.add("external", &external_, "external CSV (optional)");
    table.add("predict", &predict_, "CSV of covariates to predict (default: the trial rows)");
    schema_.add_to(table);
    learner_.add_to(table);
    add_common(table, common);
  }
  const char* name() const override { return "fit"; }
  const char* description() const override { return "fit one learner and write CATE predictions"; }

  void run() override {
    const LearnerKind kind = parse_learner_kind(learner_name_);
    LearnerConfig cfg = learner_.resolve();
    cfg.seed = common.seed;
    const CsvTable trial = read_input(trial_, "trial");
    std::optional<CsvTable> external;
    std::optional<CsvTable> predict;
    if (!external_.empty()) external = read_input(external_, "external");
    if (!predict_.empty()) predict = read_input(predict_, "predict");

    const CsvSchema schema = schema_.resolve(trial, 1);
    std::vector<Block> blocks = {{&trial, 1, true, true}};
    if (external) blocks.push_back({&*external, 0, true, false});
    if (predict) blocks.push_back({&*predict, 1, false, false});
    const Dataset merged = table_to_dataset(merge_blocks(blocks, schema), merged_schema(schema));
    const Index n_fit = trial.rows.size() + (external ? external->rows.size() : 0);
    RowList fit_rows(static_cast<std::size_t>(n_fit));
    for (Index i = 0; i < n_fit; ++i) fit_rows[static_cast<std::size_t>(i)] = i;
    const Dataset data = merged.subset(fit_rows);
    validate(data);
    RowList target_rows;
    if (predict) {
      for (Index i = n_fit; i < merged.n(); ++i) target_rows.push_back(i);
    } else {
      for (Index i = 0; i < static_cast<Index>(trial.rows.size()); ++i) target_rows.push_back(i);
    }

    prepare_output(common, table, name());
    const CATEModel model = fit_learner(kind, data, cfg);
    const Vector tau = model.predict(merged.x_rows(target_rows));
    {
      const std::string path = out_path(common, "predictions.csv");
      std::ofstream out(path);
      if (!out) throw FileError(path);
      out << "row,tau_hat\n";
      for (Index i = 0; i < tau.size(); ++i) out << i << ',' << detail::format_double(tau(i)) << '\n';
    }
    nlohmann::json summary = {{"learner", model.provenance.learner},
                              {"folds", model.provenance.folds},
                              {"seed", model.provenance.seed},
                              {"n_trial", trial.rows.size()},
                              {"n_external", external ? external->rows.size() : 0},
                              {"warnings", model.provenance.warnings}};
    summary["lambda"] = model.provenance.lambda ? nlohmann::json(*model.provenance.lambda) : nlohmann::json();
    std::ofstream(out_path(common, "fit_summary.json")) << summary.dump(2) << '\n';
    std::cout << out_path(common, "predictions.csv") << '\n';
  }

 private:
  std::string learner_name_ = "qr";
  std::string trial_;
  std::string external_;
  std::string predict_;
  SchemaOptions schema_;
  LearnerOptions learner_;
};

std::string quote(const std::string& text) {
  std::string out = "\"";
  for (char c : text) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c == '\n' ? ' ' : c);
  }
  return out + "\"";
}

int report(int code, const std::string& kind, const std::string& message, const std::string& extra = "") {
  std::cerr << "qrcate: error code=" << code << " kind=" << kind << extra << " message=" << quote(message) << '\n';
  return code;
}

/// Value of --config in argv, read before CLI11 so flags can override it.
std::string find_config(int argc, char** argv) {
  std::string path;
  for (int i = 1; i < argc; ++i) {
    const std::string_view arg = argv[i];
    if (arg == "--config" && i + 1 < argc) path = argv[++i];
    if (arg.rfind("--config=", 0) == 0) path = std::string(arg.substr(9));
  }
  return path;
}

int run_cli(int argc, char** argv) {
  std::vector<std::unique_ptr<Command>> commands;
  commands.push_back(std::make_unique<SimulateRmse>());
  commands.push_back(std::make_unique<SimulatePower>());
  commands.push_back(std::make_unique<StarPrep>());
  commands.push_back(std::make_unique<StarEval>());
  commands.push_back(std::make_unique<TransportTest>());
  commands.push_back(std::make_unique<Fit>());

  CLI::App app{"Trial-focused CATE estimation with external data"};
  app.require_subcommand(1);
  std::map<CLI::App*, Command*> by_app;
  for (auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c->name(), c->description());
    c->table.bind(*sub);
    sub->add_option("--config", c->common.config, "YAML file of settings (keys are flag names)");
    by_app[sub] = c.get();
  }

  // The config must be applied before CLI11 assigns flag values.
  Command* chosen = nullptr;
  if (argc > 1) {
    for (auto& c : commands) {
      if (argv[1] == std::string_view(c->name())) chosen = c.get();
    }
  }
  const std::string config = find_config(argc, argv);
  if (chosen != nullptr && !config.empty()) {
    if (!fs::exists(config)) throw FileError(config);
    YAML::Node root;
    try {
      root = YAML::LoadFile(config);
    } catch (const YAML::Exception& e) {
      fail(2, "config", "cannot parse config: " + e.msg);
    }
    chosen->table.load(root, chosen->name());
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const CLI::App* sub = chosen != nullptr ? app.get_subcommand(chosen->name()) : &app;
    std::cerr << sub->help();
    return report(2, "usage", e.what());
  }
  for (auto& [sub, c] : by_app) {
    if (sub->parsed()) c->run();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ExitError& e) {
    return report(e.code, e.kind, e.message);
  } catch (const MissingColumnError& e) {
    return report(3, "missing_column", e.what(), " column=" + e.column());
  } catch (const FileError& e) {
    return report(3, "missing_file", e.what(), " path=" + quote(e.path()));
  } catch (const ConfigError& e) {
    return report(2, "config", e.what());
  } catch (const ParseError& e) {
    return report(1, "parse", e.what(), " row=" + std::to_string(e.row()) + " column=" + e.column());
  } catch (const DataError& e) {
    return report(1, "data", e.what(), " tag=" + e.kind());
  } catch (const FitError& e) {
    return report(1, "fit", e.what());
  } catch (const std::exception& e) {
    return report(1, "runtime", e.what());
  }
}

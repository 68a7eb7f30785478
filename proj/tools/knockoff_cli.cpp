// knockoff: command-line front end for the knockoff filter library.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "knockoff/knockoff.hpp"

using namespace knockoff;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;
constexpr int kExitUsage = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::Io: return kExitIo;
    case ErrorCode::InvalidSpec:
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidWeight:
    case ErrorCode::EmptyInput: return kExitUsage;
    default: return kExitNumerical;
  }
}

struct Common {
  std::string stat = "ls";
  double q = 0.2;
  bool plus = true;
  std::uint64_t seed = 1;
  std::string method = "msdp";
  double alpha = 0.5;
  double beta = 0.75;
  bool header = false;
  std::string out;
};

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json one_based(const std::vector<Index>& idx) {
  json a = json::array();
  for (Index i : idx) a.push_back(i + 1);
  return a;
}

// Finite doubles as numbers, infinities as strings so the JSON stays valid.
json number_json(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : "-inf";
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(out);
  if (!f) throw Error(ErrorCode::Io, "cannot write '" + out + "'");
  f << text;
  if (!f) throw Error(ErrorCode::Io, "write to '" + out + "' failed");
}

SBuildOptions s_options(const Common& c) {
  const auto m = parse_s_method(c.method);
  if (!m) throw UsageError("unknown --method '" + c.method + "' (equi, sdp, msdp)");
  return {*m, c.alpha, c.beta};
}

StatKind stat_kind(const std::string& name) {
  const auto k = parse_stat_kind(name);
  if (!k) throw UsageError("unknown --stat '" + name + "'");
  return *k;
}

Offset offset_of(const Common& c) { return c.plus ? Offset::KnockoffPlus : Offset::Knockoff; }

void check_q(double q) {
  if (!(q > 0.0 && q <= 1.0)) throw UsageError("--q must lie in (0, 1]");
}

json common_json(const Common& c) {
  return {{"stat", c.stat}, {"q", c.q},         {"offset", c.plus ? "knockoff+" : "knockoff"},
          {"seed", c.seed}, {"method", c.method}, {"alpha", c.alpha},
          {"beta", c.beta}, {"header", c.header}};
}

void add_common(CLI::App* sub, Common& c, bool with_stat) {
  if (with_stat) sub->add_option("--stat", c.stat, "statistic: mc, ls, half-lasso, weighted-half-lasso, neg-half-lasso, lasso-path, fs, omp");
  sub->add_option("--q", c.q, "target FDR");
  sub->add_flag("--plus,!--no-plus", c.plus, "knockoff+ offset (default on)");
  sub->add_option("--seed", c.seed, "seed for randomized steps");
  sub->add_option("--method", c.method, "s construction: equi, sdp, msdp");
  sub->add_option("--alpha", c.alpha, "modified SDP lower bound factor");
  sub->add_option("--beta", c.beta, "modified SDP constraint factor");
  sub->add_flag("--header", c.header, "skip one header line in CSV inputs");
  sub->add_option("--out", c.out, "output file (default stdout)");
}

int cmd_select(const Common& c, const std::string& xpath, const std::string& ypath) {
  check_q(c.q);
  const Matrix x = read_csv_matrix(xpath, c.header);
  const Vector y = read_csv_vector(ypath, c.header);
  if (y.size() != x.rows()) throw UsageError("y has " + std::to_string(y.size()) + " rows, X has " + std::to_string(x.rows()));
  const StatKind kind = stat_kind(c.stat);
  const KnockoffModel m = make_knockoffs(normalize_columns(x), s_options(c));
  const StatVector w = compute_statistic(m, y, StatisticOptions(kind));
  const SelectionResult sel = knockoff_threshold(w.w, c.q, offset_of(c));
  json out = {{"config", common_json(c)},
              {"x", xpath},
              {"y", ypath},
              {"n", x.rows()},
              {"p", x.cols()},
              {"selected", one_based(sel.selected)},
              {"threshold", number_json(sel.threshold)},
              {"w", vec_json(w.w)},
              {"s", vec_json(m.s_values())}};
  if (m.u().cols() > 0) out["sigma_hat"] = estimate_sigma(m, y).sigma_hat;
  emit(out.dump(2) + "\n", c.out);
  return kExitOk;
}

int cmd_group_select(const Common& c, const std::string& xpath, const std::string& ypath, const std::string& groups,
                     const std::string& filter, Index prototypes) {
  check_q(c.q);
  if (groups.empty()) throw UsageError("group-select needs --groups");
  const Matrix x = normalize_columns(read_csv_matrix(xpath, c.header));
  const Vector y = read_csv_vector(ypath, c.header);
  if (y.size() != x.rows()) throw UsageError("y and X row counts differ");
  const GroupStructure g = read_groups_json(groups, x.cols());
  GroupSelectionResult r;
  if (filter == "pca") {
    PcaFilterOptions o;
    o.prototypes_per_group = prototypes;
    o.stat = StatisticOptions(stat_kind(c.stat));
    o.q = c.q;
    o.offset = offset_of(c);
    o.alpha = c.alpha;
    o.beta = c.beta;
    r = pca_prototype_filter(x, y, g, o);
  } else if (filter == "group-knockoff") {
    GroupKnockoffOptions o;
    o.q = c.q;
    o.offset = offset_of(c);
    r = group_knockoff_filter(x, y, g, o);
  } else if (filter == "reid-tibshirani") {
    RtOptions o;
    o.split_seed = c.seed;
    o.s = s_options(c);
    o.stat = StatisticOptions(stat_kind(c.stat));
    o.q = c.q;
    o.offset = offset_of(c);
    r = reid_tibshirani_filter(x, y, g, o);
  } else {
    throw UsageError("unknown --filter '" + filter + "' (pca, group-knockoff, reid-tibshirani)");
  }
  json cfg = common_json(c);
  cfg["filter"] = filter;
  cfg["groups"] = groups;
  cfg["prototypes"] = prototypes;
  const json out = {{"config", cfg},
                    {"x", xpath},
                    {"y", ypath},
                    {"selected_groups", one_based(r.selected)},
                    {"threshold", number_json(r.threshold)},
                    {"w_group", vec_json(r.w_group)}};
  emit(out.dump(2) + "\n", c.out);
  return kExitOk;
}

json read_overrides(const std::string& arg) {
  if (arg.empty()) return json();
  std::string text = arg;
  if (arg.front() == '@') {
    std::ifstream in(arg.substr(1));
    if (!in) throw Error(ErrorCode::Io, "cannot open '" + arg.substr(1) + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("--overrides is not valid JSON: ") + e.what());
  }
}

struct ExperimentArgs {
  std::string preset;
  std::string scale = "desk";
  std::string overrides;
  std::string format = "csv";
  int trials = 0;
  int designs = 0;
  int threads = 0;
  bool timing = false;
  bool list = false;
};

int cmd_experiment(const Common& c, const ExperimentArgs& a, bool seed_given) {
  if (a.list) {
    for (const auto& name : preset_names()) std::cout << name << "\n";
    return kExitOk;
  }
  if (a.preset.empty()) throw UsageError("experiment needs a preset name (try --list)");
  if (!preset_config(a.preset, a.scale)) throw UsageError("unknown preset '" + a.preset + "'");
  json o = read_overrides(a.overrides);
  if (o.is_null()) o = json::object();
  if (!o.is_object()) throw UsageError("--overrides must be a JSON object");
  if (seed_given) o["seed"] = c.seed;
  if (a.trials > 0) o["trials"] = a.trials;
  if (a.designs > 0) o["designs"] = a.designs;
  const ExperimentConfig cfg = resolve_config(a.preset, a.scale, o);
  const ExperimentReport rep = run_experiment(cfg, RunOptions{a.threads});
  if (a.format == "csv") {
    emit(report_csv(rep, a.timing), c.out);
    if (!c.out.empty() && c.out != "-") emit(report_json(rep, a.timing).dump(2) + "\n", c.out + ".json");
  } else if (a.format == "json") {
    emit(report_json(rep, a.timing).dump(2) + "\n", c.out);
  } else {
    throw UsageError("--format must be csv or json");
  }
  return kExitOk;
}

int cmd_validate(const Common& c, const std::string& xpath) {
  const Matrix x = normalize_columns(read_csv_matrix(xpath, c.header));
  const KnockoffModel m = make_knockoffs(x, s_options(c));
  const KnockoffReport r = validate_knockoff(m);
  json out = {{"config", common_json(c)},
              {"x", xpath},
              {"gram_error", r.gram_error},
              {"cross_error", r.cross_error},
              {"complement_error", r.complement_error},
              {"difference_error", r.difference_error},
              {"s", vec_json(m.s_values())},
              {"unselectable", one_based(r.unselectable)},
              {"pass", r.pass}};
  for (Index j : r.unselectable) {
    std::cerr << "warning: s_" << j + 1 << " = " << m.s_values()(j)
              << " is effectively zero; feature " << j + 1 << " cannot be selected\n";
  }
  emit(out.dump(2) + "\n", c.out);
  return r.pass ? kExitOk : kExitNumerical;
}

int cmd_estimate_sigma(const Common& c, const std::string& xpath, const std::string& ypath) {
  const Matrix x = normalize_columns(read_csv_matrix(xpath, c.header));
  const Vector y = read_csv_vector(ypath, c.header);
  if (y.size() != x.rows()) throw UsageError("y and X row counts differ");
  const KnockoffModel m = make_knockoffs(x, s_options(c));
  const NoiseEstimate e = estimate_sigma(m, y);
  const json out = {{"config", common_json(c)}, {"x", xpath}, {"y", ypath}, {"sigma_hat", e.sigma_hat}, {"dof", e.dof}};
  emit(out.dump(2) + "\n", c.out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knockoff filter: FDR-controlled variable selection"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags win");

  Common c;
  std::string xpath, ypath, groups, filter = "pca";
  Index prototypes = 1;
  ExperimentArgs ex;

  auto* sel = app.add_subcommand("select", "select features from X.csv and y.csv");
  sel->add_option("x", xpath, "design matrix CSV")->required();
  sel->add_option("y", ypath, "response CSV")->required();
  add_common(sel, c, true);

  auto* grp = app.add_subcommand("group-select", "select groups of features");
  grp->add_option("x", xpath, "design matrix CSV")->required();
  grp->add_option("y", ypath, "response CSV")->required();
  grp->add_option("--groups", groups, "JSON file of 1-based index arrays");
  grp->add_option("--filter", filter, "pca, group-knockoff or reid-tibshirani");
  grp->add_option("--prototypes", prototypes, "PCA prototypes per group");
  add_common(grp, c, true);

  auto* exp = app.add_subcommand("experiment", "run a simulation preset");
  exp->add_option("preset", ex.preset, "preset name");
  exp->add_option("--scale", ex.scale, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  exp->add_option("--overrides", ex.overrides, "JSON merge patch (or @file) applied to the preset");
  exp->add_option("--trials", ex.trials, "override the number of trials");
  exp->add_option("--designs", ex.designs, "override the number of designs");
  exp->add_option("--threads", ex.threads, "worker threads (0 = hardware)");
  exp->add_option("--format", ex.format, "csv or json");
  exp->add_flag("--timing", ex.timing, "add wall-clock columns");
  exp->add_flag("--list", ex.list, "list preset names");
  auto* exp_seed = exp->add_option("--seed", c.seed, "master seed");
  exp->add_option("--out", c.out, "output file; with csv a .json copy is written beside it");

  auto* val = app.add_subcommand("validate", "build knockoffs for X.csv and check the invariants");
  val->add_option("x", xpath, "design matrix CSV")->required();
  add_common(val, c, false);

  auto* sig = app.add_subcommand("estimate-sigma", "noise level from the complement of [X X~]");
  sig->add_option("x", xpath, "design matrix CSV")->required();
  sig->add_option("y", ypath, "response CSV")->required();
  add_common(sig, c, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sel) return cmd_select(c, xpath, ypath);
    if (*grp) return cmd_group_select(c, xpath, ypath, groups, filter, prototypes);
    if (*exp) return cmd_experiment(c, ex, exp_seed->count() > 0);
    if (*val) return cmd_validate(c, xpath);
    if (*sig) return cmd_estimate_sigma(c, xpath, ypath);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}

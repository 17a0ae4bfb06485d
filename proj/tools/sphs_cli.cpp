// Command-line front end. Reports are JSON on stdout.
//
// Exit codes: 0 certified / pass, 1 refuted / fail, 2 usage or input error,
// 3 numerical failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sphs/sphs.hpp"

namespace {

using sphs::Json;
using sphs::Matrix;
using sphs::Vector;

constexpr const char* kFormatVersion = "1.0";

enum Exit : int { kPass = 0, kFail = 1, kUsage = 2, kNumerical = 3 };

/// Input problem detected by the front end itself (missing file, bad flag value).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  double rel_tol = 1e-9;
  double abs_floor = 1e-12;

  [[nodiscard]] sphs::TolerancePolicy tol() const { return {rel_tol, abs_floor}; }
};

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write file '" + path + "'");
  out << text;
}

Json base_report(const std::string& command, const Common& common) {
  Json r;
  r["format_version"] = kFormatVersion;
  r["command"] = command;
  r["tolerance"] = {{"rel_tol", common.rel_tol}, {"abs_floor", common.abs_floor}};
  return r;
}

void emit(const Json& report) { std::cout << report.dump(2) << "\n"; }

/// A loaded system: PHS documents are compiled and carry their Q.
struct Loaded {
  sphs::SLTIS sys;
  std::optional<sphs::SymMatrix> q;
  std::optional<sphs::PHSForm> phs;
};

Loaded load_system(const std::string& path, const sphs::TolerancePolicy& tol) {
  auto doc = sphs::parse_system(read_text(path), tol);
  if (auto* phs = std::get_if<sphs::PHSForm>(&doc.model)) {
    return Loaded{sphs::compile_phs(*phs), sphs::SymMatrix(phs->Q()), *phs};
  }
  return Loaded{std::get<sphs::SLTIS>(doc.model), doc.storage, std::nullopt};
}

sphs::QuadraticStorage resolve_storage(const Loaded& loaded, const std::string& q_file,
                                       const sphs::TolerancePolicy& tol, const std::string& command) {
  if (!q_file.empty()) {
    const Json doc = [&] {
      try {
        return Json::parse(read_text(q_file));
      } catch (const Json::parse_error& e) {
        throw sphs::ParseError(std::string("invalid JSON in Q file: ") + e.what());
      }
    }();
    const Json& m = doc.is_object() ? sphs::json_detail::member(doc, "Q") : doc;
    const auto d = loaded.sys.state_dim();
    return sphs::make_storage(loaded.sys, sphs::json_detail::matrix_from_json(m, "Q", d, d), tol);
  }
  if (loaded.q) return sphs::QuadraticStorage{*loaded.q, tol};
  throw UsageError(command + ": no storage matrix Q given; pass --q or compute one with the `storage` command");
}

Json matrix_json(const Matrix& m) { return sphs::json_detail::matrix_to_json(m); }

Vector parse_vector(const std::string& text, const std::string& what) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(what + ": cannot parse '" + item + "' as a number");
    }
  }
  Vector v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Eigen::Index>(i)) = values[i];
  return v;
}

/// zero | constant:v1,v2,... | @file.json with {"constant": [...]},
/// {"times": [...], "values": [[...], ...]} or {"gain": [[...]]}.
sphs::ControlSpec parse_control(const std::string& text, Eigen::Index d, Eigen::Index n) {
  if (text == "zero") return sphs::ZeroControl{};
  if (text.rfind("constant:", 0) == 0) return sphs::ConstantControl{parse_vector(text.substr(9), "--control")};
  if (!text.empty() && text[0] == '@') {
    Json doc;
    try {
      doc = Json::parse(read_text(text.substr(1)));
    } catch (const Json::parse_error& e) {
      throw sphs::ParseError(std::string("invalid JSON in control file: ") + e.what());
    }
    using sphs::json_detail::matrix_from_json;
    if (doc.contains("constant")) {
      const Matrix m = matrix_from_json(Json::array({doc["constant"]}), "constant", 1, n);
      return sphs::ConstantControl{m.row(0).transpose()};
    }
    if (doc.contains("gain")) return sphs::StateFeedbackControl{matrix_from_json(doc["gain"], "gain", n, d)};
    if (doc.contains("times") && doc.contains("values")) {
      sphs::PiecewiseConstantControl pc;
      for (const auto& t : doc["times"]) pc.times.push_back(sphs::json_detail::number(t, "times"));
      const Matrix values = matrix_from_json(doc["values"], "values", static_cast<Eigen::Index>(pc.times.size()), n);
      for (Eigen::Index i = 0; i < values.rows(); ++i) pc.values.emplace_back(values.row(i).transpose());
      return pc;
    }
    throw sphs::ParseError("control file needs \"constant\", \"gain\" or \"times\"/\"values\"");
  }
  throw UsageError("--control must be zero, constant:v1,..., or @file.json");
}

Json passivity_json(const sphs::PassivityReport& r) {
  Json v;
  for (auto n : sphs::kAllNotions) v[sphs::notion_name(n)] = sphs::verdict_name(r.verdict(n));
  return {{"lmi_ok", r.lmi_ok},
          {"lmi_max_eig", r.lmi_max_eig},
          {"lmi_threshold", r.lmi_threshold},
          {"diffusion_ok", r.diffusion_ok},
          {"diffusion_max_violation", r.diffusion_max_violation},
          {"diffusion_threshold", r.diffusion_threshold},
          {"pathwise_lmi_ok", r.pathwise_lmi_ok},
          {"pathwise_max_eig", r.pathwise_max_eig},
          {"verdicts", v}};
}

// ---------------------------------------------------------------------------
// Commands

int cmd_check(const Common& common, const std::string& file, const std::string& q_file) {
  const auto tol = common.tol();
  const Loaded loaded = load_system(file, tol);
  const auto storage = resolve_storage(loaded, q_file, tol, "check");
  const auto report = sphs::certify(loaded.sys, storage);
  Json out = base_report("check", common);
  out["input"] = file;
  out["Q"] = matrix_json(storage.Q.matrix());
  out["MQ"] = matrix_json(sphs::build_MQ(loaded.sys, storage).matrix());
  out["passivity"] = passivity_json(report);
  out["kernel_condition"] = sphs::check_kernel_condition(loaded.sys, storage).holds;
  emit(out);
  return report.lmi_ok ? kPass : kFail;
}

int cmd_phs(const Common& common, const std::string& action, const std::string& file, const std::string& q_file,
            const std::string& out_file) {
  const auto tol = common.tol();
  Json out = base_report("phs " + action, common);
  out["input"] = file;
  std::string text;
  if (action == "extract") {
    const Loaded loaded = load_system(file, tol);
    const auto storage = resolve_storage(loaded, q_file, tol, "phs extract");
    const auto phs = sphs::extract_phs(loaded.sys, storage);
    const auto roundtrip = sphs::compile_phs(phs);
    double mismatch = sphs::max_abs(roundtrip.A() - loaded.sys.A());
    mismatch = std::max({mismatch, sphs::max_abs(roundtrip.B() - loaded.sys.B()),
                         sphs::max_abs(roundtrip.C() - loaded.sys.C()), sphs::max_abs(roundtrip.D() - loaded.sys.D())});
    for (std::size_t j = 0; j < loaded.sys.noise_dim(); ++j) {
      mismatch = std::max({mismatch, sphs::max_abs(roundtrip.noise_state(j) - loaded.sys.noise_state(j)),
                           sphs::max_abs(roundtrip.noise_input(j) - loaded.sys.noise_input(j))});
    }
    out["roundtrip_max_abs_error"] = mismatch;
    text = sphs::serialize_system(phs);
  } else {
    auto doc = sphs::parse_system(read_text(file), tol);
    const auto* phs = std::get_if<sphs::PHSForm>(&doc.model);
    if (phs == nullptr) throw UsageError("phs " + action + ": input must be a PHS document");
    if (action == "compile") {
      text = sphs::serialize_system(sphs::compile_phs(*phs), sphs::SymMatrix(phs->Q()));
    } else {
      const auto normalized = sphs::normalize_q(*phs, tol);
      text = sphs::serialize_system(normalized);
    }
  }
  out["output"] = out_file;
  write_text(out_file, text);
  if (out_file != "-") emit(out);
  return kPass;
}

int cmd_observability(const Common& common, const std::string& file, int max_len) {
  const auto tol = common.tol();
  const Loaded loaded = load_system(file, tol);
  sphs::ObservabilityOptions opts;
  opts.max_word_length = max_len;
  const auto report = sphs::unobservable_subspace(loaded.sys, opts, tol);
  Json out = base_report("observability", common);
  out["input"] = file;
  out["observable"] = report.observable;
  out["rank"] = report.rank;
  out["unobservable_dim"] = report.unobservable_dim;
  out["unobservable_basis"] = matrix_json(report.unobservable_basis.transpose());
  out["margin"] = report.margin;
  out["iterations"] = report.iterations;
  emit(out);
  return report.observable ? kPass : kFail;
}

int cmd_storage(const Common& common, const std::string& file, const sphs::RiccatiConfig& base, const std::string& out_file) {
  const auto tol = common.tol();
  const Loaded loaded = load_system(file, tol);
  sphs::RiccatiConfig cfg = base;
  cfg.tol = tol;
  Json out = base_report("storage", common);
  out["input"] = file;
  out["config"] = {{"step", cfg.step},
                   {"horizon", cfg.max_horizon},
                   {"convergence_tol", cfg.convergence_tol},
                   {"eps_reg", cfg.eps_reg}};
  try {
    const auto res = sphs::value_iteration(loaded.sys, cfg);
    out["feasible"] = true;
    out["Q_min"] = matrix_json(res.Q_min.matrix());
    out["converged"] = res.converged;
    out["horizon_reached"] = res.horizon;
    out["steps"] = res.steps;
    out["last_change_rate"] = res.last_change_rate;
    out["riccati_residual"] = {{"value", res.riccati_residual.value},
                               {"equation", res.riccati_residual.equation},
                               {"curvature", res.riccati_residual.curvature},
                               {"compatibility", res.riccati_residual.compatibility}};
    out["lmi_margin"] = res.lmi_margin;
    out["positive_definite"] = res.positive_definite;
    out["trace_monotonicity_violation"] = sphs::trace_monotonicity_violation(res);
    if (!out_file.empty()) {
      write_text(out_file, Json{{"Q", matrix_json(res.Q_min.matrix())}}.dump(2) + "\n");
      out["output"] = out_file;
    }
    emit(out);
    return kPass;
  } catch (const sphs::InfeasibleError& e) {
    out["feasible"] = false;
    out["reason"] = e.what();
    emit(out);
    return kFail;
  }
}

struct SimulateArgs {
  std::string q_file;
  double t_end = 1.0;
  double dt = 1e-3;
  std::size_t paths = 1000;
  std::uint64_t seed = 0;
  std::string control = "zero";
  std::string x0;
  std::string out;
  unsigned threads = 0;
  double multiplier = 3.0;
  std::vector<double> restarts;
};

int cmd_simulate(const Common& common, const std::string& file, const SimulateArgs& a) {
  const auto tol = common.tol();
  const Loaded loaded = load_system(file, tol);
  const auto storage = resolve_storage(loaded, a.q_file, tol, "simulate");
  const auto d = loaded.sys.state_dim();
  const auto n = loaded.sys.input_dim();
  sphs::SimConfig cfg;
  cfg.t_end = a.t_end;
  cfg.dt = a.dt;
  cfg.n_paths = a.paths;
  cfg.seed = a.seed;
  cfg.threads = a.threads;
  cfg.x0 = a.x0.empty() ? Vector(Vector::Zero(d)) : parse_vector(a.x0, "--x0");
  cfg.control = parse_control(a.control, d, n);

  const auto ens = sphs::simulate_paths(loaded.sys, storage, cfg);
  const auto test = sphs::decreasing_test(ens, a.multiplier);
  Json out = base_report("simulate", common);
  out["input"] = file;
  out["config"] = {{"t_end", cfg.t_end}, {"dt", cfg.dt},       {"paths", cfg.n_paths},
                   {"seed", cfg.seed},   {"control", a.control}, {"x0", std::vector<double>(cfg.x0.data(), cfg.x0.data() + d)},
                   {"threads", cfg.threads}};
  out["decreasing_test"] = {{"pass", test.pass},
                            {"multiplier", a.multiplier},
                            {"worst_pair", {test.worst_index, test.worst_index + 1}},
                            {"worst_excess", test.worst_excess},
                            {"label", sphs::DecreasingTestResult::kLabel}};
  out["final"] = {{"t", ens.times.back()},
                  {"mean_Z", ens.mean_Z.back()},
                  {"se_Z", ens.se_Z.back()},
                  {"mean_H", ens.mean_H.back()},
                  {"se_H", ens.se_H.back()}};
  bool ok = test.pass;
  if (!a.restarts.empty()) {
    const auto defects = sphs::supermartingale_defect(loaded.sys, storage, cfg, a.restarts);
    Json arr = Json::array();
    for (const auto& r : defects) {
      arr.push_back({{"restart_time", r.restart_time},
                     {"max_defect", r.max_defect},
                     {"se", r.se},
                     {"worst_excess", r.worst_excess},
                     {"ok", r.ok}});
      ok = ok && r.ok;
    }
    out["supermartingale_defect"] = arr;
  }
  if (!a.out.empty()) {
    std::ostringstream csv;
    sphs::write_csv(csv, ens);
    write_text(a.out, csv.str());
    out["output"] = a.out;
  }
  if (a.out != "-") emit(out);
  return ok ? kPass : kFail;
}

Json read_coupling(const std::string& path, sphs::InterconnectSpec& spec) {
  Json doc;
  try {
    doc = Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw sphs::ParseError(std::string("invalid JSON in coupling file: ") + e.what());
  }
  if (!doc.is_object()) throw sphs::ParseError("coupling file must be an object");
  spec.n_hat = sphs::json_detail::dimension(doc, "n_hat", true);
  spec.K = sphs::json_detail::matrix_from_json(sphs::json_detail::member(doc, "K"), "K", 2 * spec.n_hat,
                                               2 * spec.n_hat);
  return doc;
}

int cmd_interconnect(const Common& common, const std::string& f1, const std::string& f2, const std::string& k_file,
                     const std::string& out_file) {
  const auto tol = common.tol();
  sphs::InterconnectSpec spec;
  read_coupling(k_file, spec);
  const Loaded s1 = load_system(f1, tol);
  const Loaded s2 = load_system(f2, tol);
  Json out = base_report("interconnect", common);
  out["inputs"] = {f1, f2};
  out["n_hat"] = spec.n_hat;
  std::string text;
  if (s1.phs && s2.phs) {
    const auto phs = sphs::interconnect_phs(*s1.phs, *s2.phs, spec, tol);
    out["kind"] = "phs";
    out["state_dim"] = phs.state_dim();
    out["input_dim"] = phs.input_dim();
    text = sphs::serialize_system(phs);
  } else {
    const auto sys = sphs::interconnect(s1.sys, s2.sys, spec, tol);
    std::optional<sphs::SymMatrix> q;
    if (s1.q && s2.q) q = sphs::SymMatrix(sphs::block_diagonal(s1.q->matrix(), s2.q->matrix()));
    out["kind"] = "sltis";
    out["state_dim"] = sys.state_dim();
    out["input_dim"] = sys.input_dim();
    out["A"] = matrix_json(sys.A());
    text = sphs::serialize_system(sys, q);
  }
  out["output"] = out_file;
  write_text(out_file, text);
  if (out_file != "-") emit(out);
  return kPass;
}

struct DemoArgs {
  double m = 1, c = 1, kappa = 1, sigma = 1;
  double r = 1, l = 1, cap = 1, s1 = 1, s2 = 1;
  std::string out;
};

int cmd_demo(const Common& common, const std::string& which, const DemoArgs& a) {
  sphs::DemoSystem demo = [&] {
    if (which == "msd") return sphs::demo_msd(a.m, a.c, a.kappa, a.sigma);
    if (which == "rlc") return sphs::demo_rlc(a.r, a.l, a.cap, a.s1, a.s2);
    return sphs::demo_coupled(sphs::demo_msd(a.m, a.c, a.kappa, a.sigma), sphs::demo_rlc(a.r, a.l, a.cap, a.s1, a.s2));
  }();
  const std::string path = a.out.empty() ? which + ".json" : a.out;
  write_text(path, sphs::serialize_system(demo.sys, demo.Q));
  if (path != "-") {
    Json out = base_report("demo " + which, common);
    out["output"] = path;
    out["state_dim"] = demo.sys.state_dim();
    out["input_dim"] = demo.sys.input_dim();
    emit(out);
  }
  return kPass;
}

int report_error(const std::string& kind, const std::string& message, int code) {
  Json err;
  err["format_version"] = kFormatVersion;
  err["error"] = {{"kind", kind}, {"message", message}};
  std::cout << err.dump(2) << "\n";
  std::cerr << "error: " << message << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Passivity analysis of stochastic linear port-Hamiltonian systems"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--tol", common.rel_tol, "Relative tolerance")->capture_default_str();
  app.add_option("--abs-floor", common.abs_floor, "Absolute tolerance floor")->capture_default_str();

  std::string file, file2, q_file, out_file, action, k_file;

  auto* check = app.add_subcommand("check", "Certify the passivity notions for a storage matrix Q");
  check->add_option("system", file, "System JSON file")->required();
  check->add_option("--q", q_file, "Q matrix JSON file");

  auto* phs = app.add_subcommand("phs", "Port-Hamiltonian extraction, compilation and normalization");
  phs->add_option("action", action, "extract | compile | normalize")
      ->required()
      ->check(CLI::IsMember({"extract", "compile", "normalize"}));
  phs->add_option("system", file, "Input JSON file")->required();
  phs->add_option("--q", q_file, "Q matrix JSON file (extract)");
  phs->add_option("--out", out_file, "Output file ('-' for stdout)")->default_val("-");

  int max_len = -1;
  auto* obs = app.add_subcommand("observability", "Unobservable subspace and rank test");
  obs->add_option("system", file, "System JSON file")->required();
  obs->add_option("--max-word-length", max_len, "Longest word considered (default d-1)");

  sphs::RiccatiConfig riccati;
  auto* storage = app.add_subcommand("storage", "Minimal quadratic storage by value iteration");
  storage->add_option("system", file, "System JSON file")->required();
  storage->add_option("--step", riccati.step, "Time step h")->capture_default_str();
  storage->add_option("--horizon", riccati.max_horizon, "Maximal horizon T_max")->capture_default_str();
  storage->add_option("--convergence-tol", riccati.convergence_tol, "Stopping rule on the relative rate of change of K")
      ->capture_default_str();
  storage->add_option("--eps-reg", riccati.eps_reg, "Curvature regularization")->capture_default_str();
  storage->add_option("--out", out_file, "Write {\"Q\": Q_min} to this file");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Euler-Maruyama ensemble of the storage-balance process");
  simulate->add_option("system", file, "System JSON file")->required();
  simulate->add_option("--q", sim.q_file, "Q matrix JSON file");
  simulate->add_option("--t", sim.t_end, "Final time")->capture_default_str();
  simulate->add_option("--dt", sim.dt, "Time step")->capture_default_str();
  simulate->add_option("--paths", sim.paths, "Number of paths")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  simulate->add_option("--control", sim.control, "zero | constant:v1,... | @file.json")->capture_default_str();
  simulate->add_option("--x0", sim.x0, "Initial state, comma separated (default 0)");
  simulate->add_option("--out", sim.out, "CSV output file ('-' for stdout)");
  simulate->add_option("--threads", sim.threads, "Worker threads (0 = all cores)")->capture_default_str();
  simulate->add_option("--multiplier", sim.multiplier, "Confidence multiplier")->capture_default_str();
  simulate->add_option("--restart", sim.restarts, "Restart times for the supermartingale defect test");

  auto* inter = app.add_subcommand("interconnect", "Power-conserving interconnection of two systems");
  inter->add_option("first", file, "First system JSON file")->required();
  inter->add_option("second", file2, "Second system JSON file")->required();
  inter->add_option("--k", k_file, "Coupling file {\"K\": [[...]], \"n_hat\": 1}")->required();
  inter->add_option("--out", out_file, "Output file ('-' for stdout)")->default_val("-");

  DemoArgs demo;
  auto* demo_cmd = app.add_subcommand("demo", "Write a demo system (msd, rlc, coupled)");
  demo_cmd->add_option("which", action, "msd | rlc | coupled")->required()->check(CLI::IsMember({"msd", "rlc", "coupled"}));
  demo_cmd->add_option("--m", demo.m, "Mass")->capture_default_str();
  demo_cmd->add_option("--c", demo.c, "Damping")->capture_default_str();
  demo_cmd->add_option("--kappa", demo.kappa, "Spring constant")->capture_default_str();
  demo_cmd->add_option("--sigma", demo.sigma, "Force noise intensity")->capture_default_str();
  demo_cmd->add_option("--r", demo.r, "Resistance")->capture_default_str();
  demo_cmd->add_option("--l", demo.l, "Inductance")->capture_default_str();
  demo_cmd->add_option("--cap", demo.cap, "Capacitance")->capture_default_str();
  demo_cmd->add_option("--s1", demo.s1, "Charge noise intensity")->capture_default_str();
  demo_cmd->add_option("--s2", demo.s2, "Flux noise intensity")->capture_default_str();
  demo_cmd->add_option("--out", demo.out, "Output file (default <which>.json, '-' for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }

  try {
    if (!(common.rel_tol > 0.0) || !(common.abs_floor > 0.0)) throw UsageError("tolerances must be positive");
    if (*check) return cmd_check(common, file, q_file);
    if (*phs) return cmd_phs(common, action, file, q_file, out_file);
    if (*obs) return cmd_observability(common, file, max_len);
    if (*storage) return cmd_storage(common, file, riccati, out_file);
    if (*simulate) return cmd_simulate(common, file, sim);
    if (*inter) return cmd_interconnect(common, file, file2, k_file, out_file);
    if (*demo_cmd) return cmd_demo(common, action, demo);
  } catch (const UsageError& e) {
    return report_error("usage", e.what(), kUsage);
  } catch (const sphs::ParseError& e) {
    return report_error("parse", e.what(), kUsage);
  } catch (const sphs::ShapeError& e) {
    return report_error("shape", e.what(), kUsage);
  } catch (const sphs::StructureError& e) {
    return report_error("structure", e.what(), kUsage);
  } catch (const sphs::InvalidArgument& e) {
    return report_error("invalid_argument", e.what(), kUsage);
  } catch (const sphs::NotPsdError& e) {
    return report_error("not_psd", e.what(), kUsage);
  } catch (const sphs::PreconditionFailed& e) {
    return report_error("precondition_failed", e.what(), kFail);
  } catch (const sphs::InfeasibleError& e) {
    return report_error("infeasible", e.what(), kFail);
  } catch (const sphs::Error& e) {
    return report_error("numerical", e.what(), kNumerical);
  }
  return kUsage;
}

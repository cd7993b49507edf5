#include "nkpc/harness/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace nkpc::harness {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& s) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ParameterError("expected a number, got '" + s + "'");
  }
  if (pos != s.size()) throw ParameterError("expected a number, got '" + s + "'");
  return v;
}

template <typename Int>
Int to_int(const std::string& s) {
  Int v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ParameterError("expected an integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ParameterError("expected true/false, got '" + s + "'");
}

InverseMethod to_inverse_method(const std::string& s) {
  if (s == "neumann") return InverseMethod::kNeumann;
  if (s == "direct") return InverseMethod::kDirectInverse;
  throw ParameterError("expected neumann|direct, got '" + s + "'");
}
const char* inverse_method_name(InverseMethod m) { return m == InverseMethod::kNeumann ? "neumann" : "direct"; }

UpdateOrder to_order(const std::string& s) {
  if (s == "incremental") return UpdateOrder::kIncremental;
  if (s == "batch") return UpdateOrder::kBatch;
  throw ParameterError("expected incremental|batch, got '" + s + "'");
}

StoragePolicy to_policy(const std::string& s) {
  if (s == "store-all") return StoragePolicy::kStoreAll;
  if (s == "relearn") return StoragePolicy::kRelearnEachStep;
  if (s == "reuse-k") return StoragePolicy::kReuseK;
  throw ParameterError("expected store-all|relearn|reuse-k, got '" + s + "'");
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// Ordered so the echo groups keys by section.
using Table = std::vector<std::pair<std::string, Field>>;

#define NKPC_FIELD(sec, key, member, parse, format)                                  \
  {                                                                                   \
    std::string(sec) + "." + key, Field {                                             \
      [](ExperimentConfig& c, const std::string& v) { c.member = parse(v); },         \
          [](const ExperimentConfig& c) { return std::string(format(c.member)); }     \
    }                                                                                 \
  }

std::string fmt_size(std::size_t v) { return std::to_string(v); }
std::string fmt_long(long v) { return std::to_string(v); }
std::string fmt_int(int v) { return std::to_string(v); }
std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }
std::string fmt_str(const std::string& v) { return v; }
std::string fmt_vec(const VectorXd& v) { return format_matrix(v.transpose()); }
std::string fmt_opt(const std::optional<MatrixXd>& m) { return m ? format_matrix(*m) : ""; }
std::string fmt_order(UpdateOrder o) { return o == UpdateOrder::kIncremental ? "incremental" : "batch"; }
std::string fmt_policy(StoragePolicy p) { return to_string(p); }

std::size_t to_size(const std::string& s) { return to_int<std::size_t>(s); }
long to_long(const std::string& s) { return to_int<long>(s); }
int to_int32(const std::string& s) { return to_int<int>(s); }
std::uint64_t to_u64(const std::string& s) { return to_int<std::uint64_t>(s); }
std::string to_str(const std::string& s) { return s; }
VectorXd to_vec(const std::string& s) {
  const MatrixXd m = parse_matrix(s);
  if (m.rows() != 1) throw ParameterError("expected a single row vector");
  return m.transpose();
}
std::optional<MatrixXd> to_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_matrix(s);
}

const Table& table() {
  static const Table t = {
      NKPC_FIELD("run", "seed", seed, to_u64, fmt_u64),
      NKPC_FIELD("model", "f_deg", model.f_deg, to_double, fmt_double),
      NKPC_FIELD("model", "h_deg", model.h_deg, to_double, fmt_double),
      NKPC_FIELD("model", "q", model.q, to_double, fmt_double),
      NKPC_FIELD("model", "rho", model.rho, to_double, fmt_double),
      NKPC_FIELD("model", "F", model.F, to_opt, fmt_opt),
      NKPC_FIELD("model", "H", model.H, to_opt, fmt_opt),
      NKPC_FIELD("model", "B", model.B, to_opt, fmt_opt),
      NKPC_FIELD("model", "Q", model.Q, to_opt, fmt_opt),
      NKPC_FIELD("model", "R", model.R, to_opt, fmt_opt),
      NKPC_FIELD("model", "g", model.g, to_opt, fmt_opt),
      NKPC_FIELD("model", "r", model.r, to_opt, fmt_opt),
      NKPC_FIELD("model", "x0_mean", model.x0_mean, to_vec, fmt_vec),
      NKPC_FIELD("model", "p0", model.p0, to_double, fmt_double),
      NKPC_FIELD("fig2", "seeds", fig2.seeds, to_size, fmt_size),
      NKPC_FIELD("fig2", "n_feat", fig2.n_feat, to_size, fmt_size),
      NKPC_FIELD("fig2", "steps", fig2.steps, to_size, fmt_size),
      NKPC_FIELD("fig2", "single_steps", fig2.single_steps, to_size, fmt_size),
      NKPC_FIELD("fig2", "z_method", fig2.z_method, to_inverse_method, inverse_method_name),
      NKPC_FIELD("fig2", "order", fig2.order, to_order, fmt_order),
      NKPC_FIELD("fig2", "gamma_z", fig2.gamma_z, to_double, fmt_double),
      NKPC_FIELD("fig2", "gamma_z_single", fig2.gamma_z_single, to_double, fmt_double),
      NKPC_FIELD("fig2", "gamma_f", fig2.gamma_f, to_double, fmt_double),
      NKPC_FIELD("fig2", "gamma_f_initial", fig2.gamma_f_initial, to_double, fmt_double),
      NKPC_FIELD("fig2", "adaptive", fig2.adaptive, to_bool, fmt_bool),
      NKPC_FIELD("fig2", "neumann_passes", fig2.neumann_passes, to_int32, fmt_int),
      NKPC_FIELD("fig2", "neumann_tol", fig2.neumann_tol, to_double, fmt_double),
      NKPC_FIELD("control", "seeds", control.seeds, to_size, fmt_size),
      NKPC_FIELD("control", "t0", control.t0, to_long, fmt_long),
      NKPC_FIELD("control", "horizon", control.horizon, to_long, fmt_long),
      NKPC_FIELD("control", "n_w", control.n_w, to_size, fmt_size),
      NKPC_FIELD("control", "t_method", control.t_method, to_inverse_method, inverse_method_name),
      NKPC_FIELD("control", "gamma_t", control.gamma_t, to_double, fmt_double),
      NKPC_FIELD("control", "t_iterations", control.t_iterations, to_int32, fmt_int),
      NKPC_FIELD("control", "policy", control.policy, to_policy, fmt_policy),
      NKPC_FIELD("control", "reuse_k", control.reuse_k, to_size, fmt_size),
      NKPC_FIELD("control", "g_samples", control.g_samples, to_size, fmt_size),
      NKPC_FIELD("control", "train_n_feat", control.train_n_feat, to_size, fmt_size),
      NKPC_FIELD("control", "train_steps", control.train_steps, to_size, fmt_size),
      NKPC_FIELD("appendix_c", "seeds", appendix_c.seeds, to_size, fmt_size),
      NKPC_FIELD("appendix_c", "steps", appendix_c.steps, to_size, fmt_size),
      NKPC_FIELD("appendix_c", "k_arb_scale", appendix_c.k_arb_scale, to_double, fmt_double),
      NKPC_FIELD("appendix_c", "offset_factor", appendix_c.offset_factor, to_double, fmt_double),
      NKPC_FIELD("appendix_c", "asymptotic_from", appendix_c.asymptotic_from, to_size, fmt_size),
      NKPC_FIELD("regime", "seeds", regime.seeds, to_size, fmt_size),
      NKPC_FIELD("regime", "initial_steps", regime.initial_steps, to_size, fmt_size),
      NKPC_FIELD("regime", "warmup", regime.warmup, to_size, fmt_size),
      NKPC_FIELD("regime", "stationary_steps", regime.stationary_steps, to_size, fmt_size),
      NKPC_FIELD("regime", "window", regime.window, to_size, fmt_size),
      NKPC_FIELD("regime", "baseline", regime.baseline, to_size, fmt_size),
      NKPC_FIELD("regime", "k", regime.k, to_double, fmt_double),
      NKPC_FIELD("regime", "detect_limit", regime.detect_limit, to_size, fmt_size),
      NKPC_FIELD("regime", "relearn_raw_steps", regime.relearn_raw_steps, to_size, fmt_size),
      NKPC_FIELD("regime", "relearn_steps", regime.relearn_steps, to_size, fmt_size),
      NKPC_FIELD("regime", "gamma_f_raw", regime.gamma_f_raw, to_double, fmt_double),
      NKPC_FIELD("regime", "gamma_f", regime.gamma_f, to_double, fmt_double),
      NKPC_FIELD("regime", "gamma_z", regime.gamma_z, to_double, fmt_double),
      NKPC_FIELD("regime", "rotate_deg", regime.rotate_deg, to_double, fmt_double),
      NKPC_FIELD("regime", "p0", regime.p0, to_double, fmt_double),
      NKPC_FIELD("invariants", "features", invariants.features, to_size, fmt_size),
      NKPC_FIELD("invariants", "steps", invariants.steps, to_size, fmt_size),
      NKPC_FIELD("invariants", "members", invariants.members, to_size, fmt_size),
      NKPC_FIELD("invariants", "models", invariants.models, to_size, fmt_size),
      NKPC_FIELD("output", "dir", out_dir, to_str, fmt_str),
      NKPC_FIELD("output", "svg", svg, to_bool, fmt_bool),
  };
  return t;
}

const Field* find_field(const std::string& name) {
  for (const auto& [k, f] : table())
    if (k == name) return &f;
  return nullptr;
}

}  // namespace

MatrixXd parse_matrix(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::stringstream ss(text);
  std::string row;
  while (std::getline(ss, row, ';')) {
    std::stringstream rs(row);
    std::vector<double> vals;
    std::string tok;
    while (rs >> tok) vals.push_back(to_double(tok));
    if (vals.empty()) throw ParameterError("empty matrix row in '" + text + "'");
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw ParameterError("empty matrix");
  MatrixXd m(Eigen::Index(rows.size()), Eigen::Index(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw ParameterError("ragged matrix '" + text + "'");
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];
  }
  return m;
}

std::string format_matrix(const MatrixXd& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (i) out += "; ";
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ' ';
      out += fmt_double(m(i, j));
    }
  }
  return out;
}

LdsModel<double> ModelSpec::build() const {
  LdsModel<double> m = rotation_model<double>(f_deg, h_deg, q, rho);
  if (F) m.F = *F;
  const Eigen::Index dx = m.F.rows();
  const auto I = [](Eigen::Index n) { return MatrixXd::Identity(n, n); };
  if (F && dx != 2) {
    // Non-default dimension: fall back to identity maps and isotropic noise.
    m.H = I(dx);
    m.B = I(dx);
    m.Q = q * I(dx);
    m.R_true = rho * I(dx);
    m.g = I(dx);
    m.r = I(dx);
  }
  if (H) m.H = *H;
  if (B) m.B = *B;
  if (Q) m.Q = *Q;
  if (g) m.g = *g;
  if (r) m.r = *r;
  if (H && !R) m.R_true = rho * I(m.H.rows());
  if (R) m.R_true = *R;
  if (B && !g) m.g = I(m.B.cols());
  m.validate();
  return m;
}

InitialStateDistribution<double> ModelSpec::initial_state() const {
  const LdsModel<double> m = build();
  InitialStateDistribution<double> d = InitialStateDistribution<double>::standard(m.dx());
  if (x0_mean.size() == m.dx()) {
    d.mean = x0_mean;
  } else {
    throw ParameterError("model.x0_mean has " + std::to_string(x0_mean.size()) + " entries, state has " +
                         std::to_string(m.dx()));
  }
  d.cov = p0 * MatrixXd::Identity(m.dx(), m.dx());
  return d;
}

void ExperimentConfig::validate() const {
  const auto model_built = model.build();
  (void)model.initial_state();
  if (model.p0 < 0) throw ParameterError("model.p0 must be >= 0");
  if (fig2.seeds < 1 || fig2.n_feat < 1 || fig2.steps < 1 || fig2.single_steps < 1)
    throw ParameterError("fig2 counts must be >= 1");
  if (!(fig2.gamma_z > 0) || !(fig2.gamma_z_single > 0) || !(fig2.gamma_f >= 0) || !(fig2.gamma_f_initial >= 0))
    throw ParameterError("fig2 rates must be positive");
  if (fig2.neumann_passes < 1 || !(fig2.neumann_tol > 0)) throw ParameterError("bad fig2 Neumann settings");
  if (control.seeds < 1 || control.n_w < 1 || control.g_samples < 1 || control.train_n_feat < 1)
    throw ParameterError("control counts must be >= 1");
  if (control.t0 < 0 || control.horizon < 1) throw ParameterError("control needs t0 >= 0 and horizon >= 1");
  if (!(control.gamma_t >= 0 && control.gamma_t <= 1)) throw ParameterError("control.gamma_t must be in [0, 1]");
  if (control.t_iterations < 1 || control.reuse_k < 1) throw ParameterError("control iteration counts must be >= 1");
  if (appendix_c.seeds < 1 || appendix_c.steps < 11 || appendix_c.asymptotic_from >= appendix_c.steps)
    throw ParameterError("appendix_c needs steps > 10 and asymptotic_from < steps");
  if (!(appendix_c.offset_factor > 0)) throw ParameterError("appendix_c.offset_factor must be > 0");
  if (regime.seeds < 1 || regime.window < 1 || !(regime.k > 1) || regime.p0 < 0)
    throw ParameterError("bad regime settings");
  if (invariants.features < 2 || invariants.members < 2 || invariants.steps < 1 || invariants.models < 1)
    throw ParameterError("bad invariants settings");
  if (out_dir.empty()) throw ParameterError("output.dir must not be empty");
  (void)model_built;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line, section;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ParameterError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& [k, f] : table())
        if (k.compare(0, section.size() + 1, section + ".") == 0) known = true;
      if (!known) throw ParameterError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParameterError(where + "expected 'key = value'");
    if (section.empty()) throw ParameterError(where + "key outside of a section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string name = section + "." + key;
    const Field* f = find_field(name);
    if (!f) throw ParameterError(where + "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(name).second) throw ParameterError(where + "duplicate key '" + name + "'");
    try {
      f->set(cfg, value);
    } catch (const ParameterError& e) {
      throw ParameterError(where + name + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string echo_config(const ExperimentConfig& config) {
  std::string out, section;
  for (const auto& [name, f] : table()) {
    const auto dot = name.find('.');
    const std::string sec = name.substr(0, dot);
    const std::string value = f.get(config);
    if (value.empty()) continue;
    if (sec != section) {
      if (!section.empty()) out += '\n';
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += name.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

}  // namespace nkpc::harness

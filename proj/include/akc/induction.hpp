#pragma once

#include "akc/analytic.hpp"
#include "akc/combinatorics.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

namespace akc {

enum class Mode { demo, certified };
inline const char* to_string(Mode m) { return m == Mode::demo ? "demo" : "certified"; }
inline Mode parse_mode(const std::string& s) {
  if (s == "demo") return Mode::demo;
  if (s == "certified") return Mode::certified;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TowerConfig {
  unsigned stages = 3;
  double rho = 0;
  Mode mode = Mode::demo;
  double epsilon = 1e-3;
  double delta = 0.5;
  std::optional<long> precision_digits;
  double piece_sharpness_cap = 1e6;
  BigInt k_cap = BigInt(1) << 64;
  BigInt l_cap = 2;  // demo only
  std::uint64_t seed = 0;
  std::uint64_t norm_res = 256;
  std::optional<BigInt> force_k;  // synthetic towers for checker soundness
  SlopeChoice slope = SlopeChoice::next_q;

  void validate() const {
    if (rho < 0) throw std::invalid_argument("rho must be non-negative");
    if (piece_sharpness_cap <= 0 || k_cap < 1 || l_cap < 2) throw std::invalid_argument("caps must be positive (l cap >= 2)");
    if (!(epsilon > 0) || !(delta > 0 && delta < 1)) throw std::invalid_argument("need epsilon > 0 and 0 < delta < 1");
    if (stages == 0) throw std::invalid_argument("need at least one stage");
  }
};

struct StageNorms {
  double dh0 = 1;       // ‖DH_n‖_0
  double dh_rho = 1;    // ‖DH_n‖_ρ (equal to dh0 at ρ = 0)
  double cauchy = 0;    // ‖T_{n+1} − T_n‖_0 on the norm grid
  double k_bound = 0;   // 1/(2^n ‖DH_n‖)
  double k_cauchy = 0;  // ‖h^{-1} φ^{1/q'} h − I‖
  double k_shadow = 0;  // max over the checked i ≤ q_n
  int k_trials = 0;
};

struct StageFlags {
  bool fit_certified = false;
  bool norms_certified = false;  // grid estimates are never certified
  bool k_capped = false;
  bool k_forced = false;
  bool k_floor = false;  // k_n > n²
  bool l_floor = false;  // l_n > 2^n ‖DH_n‖_0
  BigInt l_unclamped = 2;
  Precision precision = Precision::dbl;
};

struct StageRecord {
  ScheduleState schedule;  // n, l_n, k_n, q_n, p_n
  Mode mode = Mode::demo;
  double epsilon = 0, delta = 0;
  BigInt slope = 0;
  EntireStepApprox psi1, psi2, psi3;
  StageNorms norms;
  StageFlags flags;

  StageFits fits() const {
    StageFits f;
    f.psi1 = std::make_shared<const EntireStepApprox>(psi1);
    f.psi2 = std::make_shared<const EntireStepApprox>(psi2);
    f.psi3 = std::make_shared<const EntireStepApprox>(psi3);
    f.slope = slope;
    return f;
  }
  ScheduleState next() const { return advance_schedule(schedule, schedule.k, schedule.l); }
};

// Records 0..m-1 describe h_1..h_m; the tower carries T_0..T_m.
struct Tower {
  TowerConfig config;
  std::vector<StageRecord> stages;
  mutable std::vector<StageFits> fits_;

  std::size_t size() const { return stages.size(); }
  const StageFits& fits(std::size_t i) const {
    if (fits_.size() != stages.size()) {
      fits_.clear();
      for (const auto& s : stages) fits_.push_back(s.fits());
    }
    return fits_[i];
  }
  ScheduleState state(std::size_t n) const {
    if (n < stages.size()) return stages[n].schedule;
    if (n == stages.size() && !stages.empty()) return stages.back().next();
    if (n == 0) return ScheduleState::seed();
    throw std::out_of_range("stage " + std::to_string(n) + " not built");
  }
  BigRational alpha(std::size_t n) const { return state(n).alpha(); }

  // H_n = h_n ∘ … ∘ h_1
  ShearStack H(std::size_t n) const {
    ShearStack s;
    s.label = "H_" + std::to_string(n);
    for (std::size_t i = 0; i < n; ++i) s = s.then(fits(i).h());
    return s;
  }
  // T_n^i through the reduced newest stage when its h3, h4 cancel
  ShearStack T(std::size_t n, const BigInt& power = 1) const {
    BigRational a = (alpha(n) * BigRational(power)).frac();
    ShearStack s;
    s.label = "T_" + std::to_string(n);
    if (n == 0) return s.then(AnalyticShear::translate(a));
    const StageFits& f = fits(n - 1);
    bool cancels = (BigRational(f.slope) * alpha(n)).is_integer();
    ShearStack inner = cancels ? f.h_reduced() : f.h();
    ShearStack outer = H(n - 1).then(inner);
    return outer.then(AnalyticShear::translate(a)).then(outer.inverse());
  }
  // the unreduced form, for the cancellation check
  ShearStack T_full(std::size_t n) const {
    ShearStack outer = H(n);
    return outer.then(AnalyticShear::translate(alpha(n))).then(outer.inverse());
  }
};

inline Precision precision_for(const TowerConfig& cfg, const BigInt& scale) {
  if (cfg.precision_digits) return precision_from_digits(*cfg.precision_digits);
  return working_precision(scale);
}

inline double cauchy_estimate(const Tower& t, std::size_t n, std::uint64_t res) {
  ShearStack a = t.T(n + 1), b = t.T(n);
  BigInt scale = std::max(a.scale(), b.scale());
  return with_precision(precision_for(t.config, scale), [&](auto r) {
    using Real = decltype(r);
    return dist_rho<Real>(a, b, 0, res).value;
  });
}

inline double dh_estimate(const Tower& t, std::size_t n, double rho) {
  if (n == 0) return 1;
  ShearStack H = t.H(n);
  return with_precision(precision_for(t.config, H.scale()), [&](auto r) {
    using Real = decltype(r);
    return dh_norm<Real>(H, rho, t.config.norm_res).value;
  });
}

// One stage of the induction: l, step functions, fits, k, advance.
inline StageRecord build_stage(const Tower& t, unsigned n) {
  const TowerConfig& cfg = t.config;
  StageRecord rec;
  rec.mode = cfg.mode;
  ScheduleState s = t.state(n);
  s.n = n;
  rec.norms.dh0 = dh_estimate(t, n, 0);
  rec.norms.dh_rho = cfg.rho > 0 ? dh_estimate(t, n, cfg.rho) : rec.norms.dh0;

  BigInt l = select_l(n, rec.norms.dh0);
  rec.flags.l_unclamped = l;
  if (cfg.mode == Mode::demo && l > cfg.l_cap) l = cfg.l_cap;
  if (l > 1000000) throw InfeasibleError("infeasible: stage " + std::to_string(n) + " needs l = " + l.get_str());
  s.l = l;
  rec.flags.l_floor = BigRational(l) > BigRational(BigInt(1) << n) * BigRational(mpq_class(rec.norms.dh0));

  if (cfg.mode == Mode::certified) {
    std::pair<BigRational, BigRational> ed;
    try {
      ed = certified_coupling(s);
    } catch (const std::overflow_error&) {
      throw InfeasibleError("infeasible: coupled epsilon at stage " + std::to_string(n) + " underflows");
    }
    rec.epsilon = ed.first.to<double>();
    rec.delta = ed.second.to<double>();
    if (!(rec.epsilon > 0)) throw InfeasibleError("infeasible: coupled epsilon at stage " + std::to_string(n) + " underflows");
  } else {
    rec.epsilon = cfg.epsilon;
    rec.delta = cfg.delta;
  }
  FitOptions opt;
  opt.piece_sharpness_cap = cfg.piece_sharpness_cap;
  StageFits fits;
  try {
    fits = build_stage_maps(s, rec.epsilon, rec.delta, 0, opt);
  } catch (const FitFailure& e) {
    if (cfg.mode == Mode::certified) throw InfeasibleError(std::string("infeasible: ") + e.what());
    throw;
  }
  rec.psi1 = *fits.psi1;
  rec.psi2 = *fits.psi2;
  rec.psi3 = *fits.psi3;
  rec.flags.fit_certified = rec.psi1.cert.certified && rec.psi2.cert.certified && rec.psi3.cert.certified;

  if (cfg.force_k) {
    s.k = *cfg.force_k;
    rec.flags.k_forced = true;
    rec.norms.k_bound = 1.0 / (std::ldexp(1.0, static_cast<int>(n)) * rec.norms.dh_rho);
  } else {
    double bound = 1.0 / (std::ldexp(1.0, static_cast<int>(n)) * rec.norms.dh_rho);
    // the search runs in phase coordinates; only the size of the bound decides the type
    KSelection ks;
    if (bound < 1e-31) {
      ks.bound = bound;
      ks.k = cfg.k_cap;
      ks.capped = true;
    } else if (bound < 1e-15) {
      ks = select_k<quad>(s, fits, rec.norms.dh_rho, cfg.k_cap, cfg.norm_res);
    } else {
      ks = select_k<long double>(s, fits, rec.norms.dh_rho, cfg.k_cap, cfg.norm_res);
    }
    s.k = ks.k;
    rec.norms.k_bound = ks.bound;
    rec.norms.k_cauchy = ks.cauchy_norm;
    rec.norms.k_shadow = ks.shadow_norm;
    rec.norms.k_trials = ks.trials;
    rec.flags.k_capped = ks.capped;
    if (ks.capped && cfg.mode == Mode::certified)
      throw InfeasibleError("infeasible: k cap reached at stage " + std::to_string(n));
  }
  rec.flags.k_floor = s.k > BigInt(static_cast<unsigned long>(n) * n);
  rec.schedule = s;
  rec.slope = h4_slope(s, cfg.slope);
  return rec;
}

inline Tower run_tower(const TowerConfig& cfg) {
  cfg.validate();
  if (cfg.mode == Mode::certified && cfg.stages > 3) throw InfeasibleError("infeasible at desk scale beyond 3 stages");
  Tower t;
  t.config = cfg;
  for (unsigned n = 0; n < cfg.stages; ++n) {
    StageRecord rec = build_stage(t, n);
    t.stages.push_back(rec);
    t.fits_.clear();
    ShearStack probe = t.T(n + 1);
    t.stages.back().flags.precision = precision_for(cfg, probe.scale());
    t.stages.back().norms.cauchy = cauchy_estimate(t, n, cfg.norm_res);
  }
  return t;
}

// ---------------------------------------------------------------- persistence

inline std::string format_real(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put(std::ostream& os, const std::string& k, const std::string& v) { os << k << " = " << v << "\n"; }

inline std::string join(const std::vector<BigRational>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + v[i].str();
  return s;
}

inline void put_approx(std::ostream& os, const std::string& name, const EntireStepApprox& f) {
  os << "[" << name << "]\n";
  put(os, "N", f.N.get_str());
  put(os, "k", std::to_string(f.k()));
  put(os, "breaks", join(f.breaks));
  put(os, "values", join(f.values));
  put(os, "A", format_real(f.A));
  put(os, "W", std::to_string(f.W));
  put(os, "epsilon", format_real(f.epsilon));
  put(os, "delta", format_real(f.delta));
  put(os, "cert.grid_step", format_real(f.cert.grid_step));
  put(os, "cert.grid_points", std::to_string(f.cert.grid_points));
  put(os, "cert.derivative_bound", format_real(f.cert.derivative_bound));
  put(os, "cert.grid_error", format_real(f.cert.grid_error));
  put(os, "cert.tail_bound", format_real(f.cert.tail_bound));
  put(os, "cert.certified_error", format_real(f.cert.certified_error));
  put(os, "cert.certified", f.cert.certified ? "true" : "false");
}

using Sections = std::map<std::string, std::map<std::string, std::pair<std::string, int>>>;

inline Sections parse_sections(std::istream& in, const std::string& source, const std::string& version) {
  std::string line;
  int lineno = 1;
  if (!std::getline(in, line) || line != version)
    throw ParseError(source + ":1: expected format version '" + version + "', found '" + line + "'");
  Sections out;
  std::string cur;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(source + ":" + std::to_string(lineno) + ": malformed section header");
      cur = line.substr(1, line.size() - 2);
      out[cur];
      continue;
    }
    auto eq = line.find(" = ");
    if (eq == std::string::npos || cur.empty())
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected 'key = value' inside a section");
    out[cur][line.substr(0, eq)] = {line.substr(eq + 3), lineno};
  }
  return out;
}

struct Fields {
  const Sections& sec;
  std::string source;

  const std::pair<std::string, int>& raw(const std::string& s, const std::string& k) const {
    auto it = sec.find(s);
    if (it == sec.end()) throw ParseError(source + ": missing section [" + s + "]");
    auto jt = it->second.find(k);
    if (jt == it->second.end()) throw ParseError(source + ": missing field '" + k + "' in [" + s + "]");
    return jt->second;
  }
  [[noreturn]] void bad(const std::string& s, const std::string& k, const std::string& why) const {
    throw ParseError(source + ":" + std::to_string(raw(s, k).second) + ": field '" + k + "' in [" + s + "]: " + why);
  }
  std::string str(const std::string& s, const std::string& k) const { return raw(s, k).first; }
  BigInt integer(const std::string& s, const std::string& k) const {
    try {
      return bigint_parse(str(s, k));
    } catch (const std::invalid_argument& e) {
      bad(s, k, e.what());
    }
  }
  long small(const std::string& s, const std::string& k) const {
    BigInt v = integer(s, k);
    if (!v.fits_slong_p()) bad(s, k, "out of range");
    return v.get_si();
  }
  double real(const std::string& s, const std::string& k) const {
    const std::string& v = str(s, k);
    double d = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), d);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(s, k, "not a real number: '" + v + "'");
    return d;
  }
  bool boolean(const std::string& s, const std::string& k) const {
    const std::string& v = str(s, k);
    if (v == "true") return true;
    if (v == "false") return false;
    bad(s, k, "expected true or false");
  }
  BigRational rational(const std::string& s, const std::string& k) const {
    try {
      return BigRational::parse(str(s, k));
    } catch (const std::exception& e) {
      bad(s, k, e.what());
    }
  }
  std::vector<BigRational> rationals(const std::string& s, const std::string& k) const {
    std::istringstream is(str(s, k));
    std::vector<BigRational> out;
    std::string tok;
    while (is >> tok) {
      try {
        out.push_back(BigRational::parse(tok));
      } catch (const std::exception& e) {
        bad(s, k, e.what());
      }
    }
    return out;
  }
};

inline EntireStepApprox get_approx(const Fields& f, const std::string& s) {
  EntireStepApprox a;
  a.N = f.integer(s, "N");
  a.breaks = f.rationals(s, "breaks");
  a.values = f.rationals(s, "values");
  long k = f.small(s, "k");
  if (k < 1 || static_cast<std::size_t>(k) != a.values.size() || a.breaks.size() != a.values.size())
    f.bad(s, "k", "does not match the number of breaks/values");
  if (a.N < 1) f.bad(s, "N", "must be positive");
  a.A = f.real(s, "A");
  a.W = f.small(s, "W");
  if (!(a.A > 0)) f.bad(s, "A", "must be positive");
  if (a.W < 1) f.bad(s, "W", "must be positive");
  a.epsilon = f.real(s, "epsilon");
  a.delta = f.real(s, "delta");
  a.cert.grid_step = f.real(s, "cert.grid_step");
  a.cert.grid_points = static_cast<std::uint64_t>(f.small(s, "cert.grid_points"));
  a.cert.derivative_bound = f.real(s, "cert.derivative_bound");
  a.cert.grid_error = f.real(s, "cert.grid_error");
  a.cert.tail_bound = f.real(s, "cert.tail_bound");
  a.cert.certified_error = f.real(s, "cert.certified_error");
  a.cert.certified = f.boolean(s, "cert.certified");
  return a;
}

}  // namespace detail

inline std::string serialize_stage(const StageRecord& r) {
  std::ostringstream os;
  os << "akc-stage-v1\n[schedule]\n";
  using detail::put;
  put(os, "n", std::to_string(r.schedule.n));
  put(os, "l", r.schedule.l.get_str());
  put(os, "k", r.schedule.k.get_str());
  put(os, "q", r.schedule.q.get_str());
  put(os, "p", r.schedule.p.get_str());
  put(os, "alpha", r.schedule.alpha().str());
  put(os, "slope", r.slope.get_str());
  put(os, "mode", to_string(r.mode));
  put(os, "epsilon", format_real(r.epsilon));
  put(os, "delta", format_real(r.delta));
  detail::put_approx(os, "psi1", r.psi1);
  detail::put_approx(os, "psi2", r.psi2);
  detail::put_approx(os, "psi3", r.psi3);
  os << "[norms]\n";
  put(os, "dh0", format_real(r.norms.dh0));
  put(os, "dh_rho", format_real(r.norms.dh_rho));
  put(os, "cauchy", format_real(r.norms.cauchy));
  put(os, "k_bound", format_real(r.norms.k_bound));
  put(os, "k_cauchy", format_real(r.norms.k_cauchy));
  put(os, "k_shadow", format_real(r.norms.k_shadow));
  put(os, "k_trials", std::to_string(r.norms.k_trials));
  os << "[flags]\n";
  auto b = [](bool v) { return v ? "true" : "false"; };
  put(os, "fit_certified", b(r.flags.fit_certified));
  put(os, "norms_certified", b(r.flags.norms_certified));
  put(os, "k_capped", b(r.flags.k_capped));
  put(os, "k_forced", b(r.flags.k_forced));
  put(os, "k_floor", b(r.flags.k_floor));
  put(os, "l_floor", b(r.flags.l_floor));
  put(os, "l_unclamped", r.flags.l_unclamped.get_str());
  put(os, "precision", std::to_string(mantissa_bits(r.flags.precision)));
  return os.str();
}

inline StageRecord parse_stage(std::istream& in, const std::string& source = "<stage>") {
  auto sec = detail::parse_sections(in, source, "akc-stage-v1");
  detail::Fields f{sec, source};
  StageRecord r;
  const std::string S = "schedule";
  long n = f.small(S, "n");
  if (n < 0) f.bad(S, "n", "must be non-negative");
  r.schedule.n = static_cast<unsigned>(n);
  r.schedule.l = f.integer(S, "l");
  r.schedule.k = f.integer(S, "k");
  r.schedule.q = f.integer(S, "q");
  r.schedule.p = f.integer(S, "p");
  if (r.schedule.q < 1) f.bad(S, "q", "must be positive");
  if (r.schedule.k < 1) f.bad(S, "k", "must be positive");
  if (r.schedule.l < 1) f.bad(S, "l", "must be positive");
  if (f.rational(S, "alpha") != r.schedule.alpha()) f.bad(S, "alpha", "disagrees with p/q");
  r.slope = f.integer(S, "slope");
  try {
    r.mode = parse_mode(f.str(S, "mode"));
  } catch (const std::invalid_argument& e) {
    f.bad(S, "mode", e.what());
  }
  r.epsilon = f.real(S, "epsilon");
  r.delta = f.real(S, "delta");
  r.psi1 = detail::get_approx(f, "psi1");
  r.psi2 = detail::get_approx(f, "psi2");
  r.psi3 = detail::get_approx(f, "psi3");
  const std::string Nm = "norms";
  r.norms.dh0 = f.real(Nm, "dh0");
  r.norms.dh_rho = f.real(Nm, "dh_rho");
  r.norms.cauchy = f.real(Nm, "cauchy");
  r.norms.k_bound = f.real(Nm, "k_bound");
  r.norms.k_cauchy = f.real(Nm, "k_cauchy");
  r.norms.k_shadow = f.real(Nm, "k_shadow");
  r.norms.k_trials = static_cast<int>(f.small(Nm, "k_trials"));
  const std::string F = "flags";
  r.flags.fit_certified = f.boolean(F, "fit_certified");
  r.flags.norms_certified = f.boolean(F, "norms_certified");
  r.flags.k_capped = f.boolean(F, "k_capped");
  r.flags.k_forced = f.boolean(F, "k_forced");
  r.flags.k_floor = f.boolean(F, "k_floor");
  r.flags.l_floor = f.boolean(F, "l_floor");
  r.flags.l_unclamped = f.integer(F, "l_unclamped");
  long bits = f.small(F, "precision");
  if (bits == 53) r.flags.precision = Precision::dbl;
  else if (bits == 64) r.flags.precision = Precision::ldbl;
  else if (bits == 113) r.flags.precision = Precision::quad;
  else f.bad(F, "precision", "expected 53, 64 or 113");
  return r;
}

inline void save_stage(const StageRecord& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << serialize_stage(r);
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline StageRecord load_stage(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return parse_stage(in, path);
}

inline std::string stage_file_name(std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "stage-%03zu.akc", n);
  return buf;
}

inline std::string serialize_manifest(const Tower& t) {
  std::ostringstream os;
  const auto& c = t.config;
  os << "akc-tower-v1\n[config]\n";
  using detail::put;
  put(os, "stages", std::to_string(t.size()));
  put(os, "mode", to_string(c.mode));
  put(os, "rho", format_real(c.rho));
  put(os, "epsilon", format_real(c.epsilon));
  put(os, "delta", format_real(c.delta));
  put(os, "seed", std::to_string(c.seed));
  put(os, "l_cap", c.l_cap.get_str());
  put(os, "k_cap", c.k_cap.get_str());
  put(os, "piece_sharpness_cap", format_real(c.piece_sharpness_cap));
  put(os, "norm_res", std::to_string(c.norm_res));
  put(os, "slope", c.slope == SlopeChoice::next_q ? "next_q" : "current_q");
  put(os, "precision_digits", c.precision_digits ? std::to_string(*c.precision_digits) : "auto");
  os << "[schedule]\n";
  for (std::size_t n = 0; n <= t.size(); ++n) {
    put(os, "q." + std::to_string(n), t.state(n).q.get_str());
    put(os, "alpha." + std::to_string(n), t.alpha(n).str());
  }
  os << "[files]\n";
  for (std::size_t n = 0; n < t.size(); ++n) put(os, "stage." + std::to_string(n), stage_file_name(n));
  return os.str();
}

inline void save_tower(const Tower& t, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir + ": " + ec.message());
  for (std::size_t n = 0; n < t.size(); ++n) save_stage(t.stages[n], (fs::path(dir) / stage_file_name(n)).string());
  std::ofstream out(fs::path(dir) / "tower.manifest", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir);
  out << serialize_manifest(t);
}

inline Tower load_tower(const std::string& dir) {
  namespace fs = std::filesystem;
  std::string mpath = (fs::path(dir) / "tower.manifest").string();
  std::ifstream in(mpath, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + mpath);
  auto sec = detail::parse_sections(in, mpath, "akc-tower-v1");
  detail::Fields f{sec, mpath};
  Tower t;
  auto& c = t.config;
  long stages = f.small("config", "stages");
  if (stages < 1) f.bad("config", "stages", "must be positive");
  c.stages = static_cast<unsigned>(stages);
  try {
    c.mode = parse_mode(f.str("config", "mode"));
  } catch (const std::invalid_argument& e) {
    f.bad("config", "mode", e.what());
  }
  c.rho = f.real("config", "rho");
  c.epsilon = f.real("config", "epsilon");
  c.delta = f.real("config", "delta");
  c.seed = static_cast<std::uint64_t>(f.small("config", "seed"));
  c.l_cap = f.integer("config", "l_cap");
  c.k_cap = f.integer("config", "k_cap");
  c.piece_sharpness_cap = f.real("config", "piece_sharpness_cap");
  c.norm_res = static_cast<std::uint64_t>(f.small("config", "norm_res"));
  c.slope = f.str("config", "slope") == "current_q" ? SlopeChoice::current_q : SlopeChoice::next_q;
  std::string pd = f.str("config", "precision_digits");
  if (pd != "auto") c.precision_digits = f.small("config", "precision_digits");
  for (long n = 0; n < stages; ++n) {
    std::string name = f.str("files", "stage." + std::to_string(n));
    t.stages.push_back(load_stage((fs::path(dir) / name).string()));
  }
  return t;
}

}  // namespace akc

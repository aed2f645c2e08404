#include "akc/diagnostics.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace akc;

namespace {

enum Exit { ok = 0, usage = 1, infeasible = 2, verification = 3 };

TorusPoint parse_point(const std::string& s) {
  auto comma = s.find(',');
  if (comma == std::string::npos) throw std::invalid_argument("point must be 'a/b,c/d'");
  return {BigRational::parse(s.substr(0, comma)), BigRational::parse(s.substr(comma + 1))};
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

// checks that throw (e.g. on a structurally broken record) become failed sections
template <class Fn>
CheckSection guarded(const std::string& name, const Tower& t, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    CheckSection s;
    s.name = name;
    s.mode = t.config.mode;
    s.seed = t.config.seed;
    CheckEntry en;
    en.instance = "error";
    en.inequality = "check runs to completion";
    en.detail = e.what();
    s.add(en);
    return s;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"akc: finite stages of an approximation-by-conjugation construction on the torus"};
  app.require_subcommand(1);

  // build
  TowerConfig cfg;
  std::string mode = "demo", out_dir, k_cap = cfg.k_cap.get_str(), l_cap = "2", force_k;
  auto* build = app.add_subcommand("build", "construct a tower and write its stage files");
  build->add_option("--stages", cfg.stages, "number of stages")->required();
  build->add_option("--mode", mode, "demo or certified")->check(CLI::IsMember({"demo", "certified"}));
  build->add_option("--rho", cfg.rho, "strip width")->check(CLI::NonNegativeNumber);
  build->add_option("--epsilon", cfg.epsilon, "demo approximation tolerance");
  build->add_option("--delta", cfg.delta, "demo exceptional-measure budget");
  build->add_option("--out", out_dir, "output directory")->required();
  build->add_option("--seed", cfg.seed, "seed for sampled checks");
  build->add_option("--l-cap", l_cap, "demo cap on l_n");
  build->add_option("--k-cap", k_cap, "cap on k_n");
  build->add_option("--force-k", force_k, "use this k_n at every stage (synthetic towers)");
  build->add_option("--norm-res", cfg.norm_res, "grid per side for norm estimates")->check(CLI::Range(16, 4096));
  build->add_option("--sharpness-cap", cfg.piece_sharpness_cap, "cap on A/(kN)");

  // verify
  std::string tower_dir, checks = "combinatorics,norms,birkhoff,shadowing,conjugacy,diameter", report_path;
  std::size_t max_stage = SIZE_MAX;
  std::string functions = "one,cos2pi_x1,sin2pi_x2,cos2pi_x1_plus_x2";
  std::uint64_t birkhoff_cap = BirkhoffOptions{}.sample_cap;
  auto* verify = app.add_subcommand("verify", "run checks on a stored tower");
  verify->add_option("--tower", tower_dir, "tower directory")->required();
  verify->add_option("--checks", checks, "comma-separated checks");
  verify->add_option("--report", report_path, "report file")->required();
  verify->add_option("--max-stage", max_stage, "highest stage index checked");
  verify->add_option("--functions", functions, "Birkhoff test functions");
  verify->add_option("--birkhoff-samples", birkhoff_cap, "orbit indices per start before subsampling");

  // orbit
  std::string point, orbit_out;
  std::uint64_t iters = 1;
  long orbit_stage = -1;
  auto* orbit = app.add_subcommand("orbit", "write an orbit of T_m as CSV");
  orbit->add_option("--tower", tower_dir, "tower directory")->required();
  orbit->add_option("--point", point, "start point a/b,c/d")->required();
  orbit->add_option("--iters", iters, "iterations")->required();
  orbit->add_option("--out", orbit_out, "CSV path")->required();
  orbit->add_option("--stage", orbit_stage, "m (default: top of the tower)");

  // raster
  std::string what = "T", rl = "2", rq = "1", rk = "1", raster_out, fit_a;
  int res = 256;
  auto* raster = app.add_subcommand("raster", "write a partition or approximant raster (PGM)");
  raster->add_option("--what", what, "T, G, error-set, htilde-image or approx")
      ->check(CLI::IsMember({"T", "G", "error-set", "htilde-image", "approx"}));
  raster->add_option("--l", rl, "l");
  raster->add_option("--q", rq, "q");
  raster->add_option("--k", rk, "k (fixes the h4 slope k l^2 q)");
  raster->add_option("--res", res, "pixels per side");
  raster->add_option("--A", fit_a, "sharpness for --what approx (target: indicator of [1/4,3/4))");
  raster->add_option("--out", raster_out, "PGM path")->required();

  // report
  std::string summary_out;
  auto* report = app.add_subcommand("report", "summarize a stored tower");
  report->add_option("--tower", tower_dir, "tower directory")->required();
  report->add_option("--out", summary_out, "summary path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? Exit::ok : Exit::usage;
  }

  try {
    if (*build) {
      cfg.mode = parse_mode(mode);
      cfg.k_cap = bigint_parse(k_cap);
      cfg.l_cap = bigint_parse(l_cap);
      if (!force_k.empty()) cfg.force_k = bigint_parse(force_k);
      if (const char* env = std::getenv("AKC_PRECISION_DIGITS")) {
        char* end = nullptr;
        long d = std::strtol(env, &end, 10);
        if (!end || *end != '\0') throw std::invalid_argument("AKC_PRECISION_DIGITS must be an integer");
        precision_from_digits(d);
        cfg.precision_digits = d;
      }
      Tower t;
      try {
        t = run_tower(cfg);
      } catch (const InfeasibleError& e) {
        std::cerr << e.what() << "\n";
        return Exit::infeasible;
      }
      save_tower(t, out_dir);
      for (std::size_t n = 0; n <= t.size(); ++n) std::cout << "q_" << n << " = " << t.state(n).q.get_str() << "\n";
      return Exit::ok;
    }

    if (*verify) {
      Tower t = load_tower(tower_dir);
      std::size_t top = max_stage == SIZE_MAX ? SIZE_MAX : max_stage + 1;
      DiagnosticsReport rep;
      std::vector<TestFunction> gs;
      for (const auto& name : split(functions, ',')) gs.push_back(find_test_function(name));
      for (const auto& c : split(checks, ',')) {
        if (c == "combinatorics") {
          rep.sections.push_back(guarded(c, t, [&] { return combinatorics_check(t); }));
        } else if (c == "norms") {
          rep.sections.push_back(guarded(c, t, [&] { return norms_check(t); }));
        } else if (c == "birkhoff") {
          rep.sections.push_back(guarded(c, t, [&] {
            std::vector<std::size_t> st;
            for (std::size_t n = 0; n < t.size() && n < top; ++n) st.push_back(n);
            BirkhoffOptions bo;
            bo.sample_cap = birkhoff_cap;
            return birkhoff_check(t, st, gs, bo);
          }));
        } else if (c == "shadowing") {
          rep.sections.push_back(guarded(c, t, [&] { return shadowing_check(t, {}, top); }));
        } else if (c == "conjugacy") {
          rep.sections.push_back(guarded(c, t, [&] { return rotation_conjugacy_check(t, {}, top == SIZE_MAX ? top : top - 1); }));
        } else if (c == "diameter") {
          rep.sections.push_back(guarded(c, t, [&] { return diameter_check(t, {}, top); }));
        } else {
          throw std::invalid_argument("unknown check '" + c + "'");
        }
      }
      write_file(report_path, rep.serialize());
      for (const auto& s : rep.sections) std::cout << s.name << ": " << (s.pass() ? "pass" : "FAIL") << "\n";
      return rep.all_pass() ? Exit::ok : Exit::verification;
    }

    if (*orbit) {
      TorusPoint start = parse_point(point);
      Tower t = load_tower(tower_dir);
      std::size_t m = orbit_stage < 0 ? t.size() : static_cast<std::size_t>(orbit_stage);
      emit_orbit_csv(t, m, start, iters, orbit_out);
      return Exit::ok;
    }

    if (*raster) {
      if (res < 16) throw std::invalid_argument("--res must be at least 16");
      if (what == "approx") {
        if (fit_a.empty()) throw std::invalid_argument("--what approx needs --A");
        double A = std::stod(fit_a);
        if (!(A > 0)) throw std::invalid_argument("--A must be positive");
        PeriodicForm pf{1, {BigRational(0), BigRational(1, 4), BigRational(3, 4)}, {BigRational(0), BigRational(1), BigRational(0)}};
        EntireStepApprox f = approx_with(pf, A, 1e-3, 0.5);
        plot_approximant(f, res).write(raster_out);
        return Exit::ok;
      }
      ScheduleState s = ScheduleState::seed(bigint_parse(rq));
      s.l = bigint_parse(rl);
      s.k = bigint_parse(rk);
      if (s.k < 1) throw std::invalid_argument("--k must be positive");
      RasterWhat w = what == "T" ? RasterWhat::T
                     : what == "G" ? RasterWhat::G
                     : what == "error-set" ? RasterWhat::error_set
                                           : RasterWhat::htilde_image;
      emit_partition_raster(s, w, res).write(raster_out);
      return Exit::ok;
    }

    if (*report) {
      Tower t = load_tower(tower_dir);
      std::ostringstream os;
      os << serialize_manifest(t);
      os << "[summary]\n";
      for (std::size_t n = 0; n < t.size(); ++n) {
        const auto& r = t.stages[n];
        std::string p = "stage." + std::to_string(n) + ".";
        detail::put(os, p + "l", r.schedule.l.get_str());
        detail::put(os, p + "k", r.schedule.k.get_str());
        detail::put(os, p + "dh0", format_real(r.norms.dh0));
        detail::put(os, p + "cauchy", format_real(r.norms.cauchy));
        detail::put(os, p + "k_capped", r.flags.k_capped ? "true" : "false");
        detail::put(os, p + "fit_certified", r.flags.fit_certified ? "true" : "false");
      }
      if (summary_out.empty()) std::cout << os.str();
      else write_file(summary_out, os.str());
      return Exit::ok;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return Exit::usage;
  }
  return Exit::usage;
}

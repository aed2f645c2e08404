#include <catch_amalgamated.hpp>

#include "akc/diagnostics.hpp"

using namespace akc;

namespace {

const Tower& two_stage() {
  static const Tower t = [] {
    TowerConfig c;
    c.stages = 2;
    return run_tower(c);
  }();
  return t;
}

// plain pullback of the orbit φ^{j/q'} through a generic compiled h^{-1}
std::vector<double> orbit_oracle(const StageRecord& rec, const std::vector<TestFunction>& gs, double x1, double x2) {
  CompiledStack<long double> hinv(rec.fits().h().inverse());
  std::uint64_t q = to_u64(rec.next().q);
  std::vector<long double> acc(gs.size(), 0);
  for (std::uint64_t j = 0; j < q; ++j) {
    long double shift = static_cast<long double>(j) / static_cast<long double>(q);
    Pt<long double> y = hinv.apply(Pt<long double>{frac_part(x1 + shift), static_cast<long double>(x2)});
    for (std::size_t i = 0; i < gs.size(); ++i) acc[i] += gs[i](y.x1, y.x2);
  }
  std::vector<double> out;
  for (auto a : acc) out.push_back(static_cast<double>(a / q));
  return out;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("test functions") {
  auto one = find_test_function("one");
  CHECK(one.lipschitz() == 0);
  CHECK(one.mean() == 1);
  CHECK(one(0.3, 0.7) == 1);
  auto c = find_test_function("cos2pi_x1");
  CHECK(c.lipschitz() == Catch::Approx(2 * M_PI));
  CHECK(c.mean() == 0);
  CHECK(c(0.5, 0.1) == Catch::Approx(-1));
  CHECK(find_test_function("mixed").mean() == 0.5);
  CHECK_THROWS(find_test_function("x1"));
  // integrals against the midpoint rule
  for (const auto& g : test_catalog()) {
    double s = 0;
    for (int i = 0; i < 64; ++i)
      for (int j = 0; j < 64; ++j) s += g((i + 0.5) / 64, (j + 0.5) / 64);
    CHECK(s / 4096 == Catch::Approx(g.mean()).margin(1e-12));
  }
}

TEST_CASE("torus metric") {
  CHECK(torus_distance(Pt<double>{0.99, 0}, Pt<double>{0.01, 0}) == Catch::Approx(0.02));
  CHECK(torus_distance(Pt<double>{0.3, 0.95}, Pt<double>{0.3, 0.05}) == Catch::Approx(0.1));
  CHECK(torus_distance(Pt<double>{0.2, 0.4}, Pt<double>{0.2, 0.4}) == 0);
  CHECK(circle_diameter({0.1, 0.9}) == Catch::Approx(0.2));
  CHECK(circle_diameter({0.0, 0.5}) == Catch::Approx(0.5));
  CHECK(circle_diameter({0.25}) == 0);
}

TEST_CASE("Birkhoff averages against a generic orbit oracle") {
  const Tower& t = two_stage();
  auto gs = test_catalog();
  for (std::size_t n = 0; n < t.size(); ++n) {
    const StageRecord& rec = t.stages[n];
    for (auto [x1, x2] : {std::pair{1, 3}, {5, 7}}) {
      TorusPoint start(BigRational(x1, 8), BigRational(x2, 8));
      std::uint64_t samples = 0;
      bool statistical = true;
      auto got = birkhoff_averages<long double>(rec, gs, start, 1u << 20, samples, statistical);
      CHECK_FALSE(statistical);
      CHECK(samples == to_u64(rec.next().q));
      auto want = orbit_oracle(rec, gs, x1 / 8.0, x2 / 8.0);
      for (std::size_t i = 0; i < gs.size(); ++i) CHECK(got[i] == Catch::Approx(want[i]).margin(1e-9));
      CHECK(got[0] == Catch::Approx(1).margin(1e-15));  // g = 1
    }
  }
}

TEST_CASE("Birkhoff check report") {
  const Tower& t = two_stage();
  std::vector<TestFunction> gs{find_test_function("one"), find_test_function("sin2pi_x2")};
  BirkhoffOptions bo;
  bo.starts = 4;
  bo.sample_cap = 1024;
  auto sec = birkhoff_check(t, {0, 1}, gs, bo);
  REQUIRE(sec.entries.size() == 4);
  CHECK(sec.entries[0].instance == "n0.one");
  CHECK(sec.entries[0].value < 1e-12);
  CHECK(std::isinf(sec.entries[0].bound));
  CHECK(sec.entries[2].statistical);  // q_2 > 1024
  CHECK(sec.entries[3].detail.find("vacuous") != std::string::npos);
  CHECK(sec.pass());
  CHECK_THROWS(birkhoff_check(t, {5}, gs, bo));
}

TEST_CASE("shadowing and Cauchy checks") {
  const Tower& t = two_stage();
  ShadowOptions so;
  so.starts = 8;
  auto sh = shadowing_check(t, so);
  REQUIRE(sh.entries.size() == 2);
  CHECK(sh.pass());
  CHECK_FALSE(sh.entries[0].statistical);
  auto c = cauchy_check(t, 0, 128);
  CHECK(c.pass());
  for (std::size_t n = 0; n < c.entries.size(); ++n) CHECK(c.entries[n].bound == std::ldexp(1.0, -static_cast<int>(n)));

  bool sampled = false;
  auto few = iteration_sample(BigInt(5), so, sampled);
  CHECK_FALSE(sampled);
  CHECK(few.size() == 5);
  auto many = iteration_sample(BigInt(1000000), so, sampled);
  CHECK(sampled);
  CHECK(many.size() == so.sampled_iterations);
  CHECK(many.back() == 1000000);
}

TEST_CASE("rotation conjugacy") {
  const Tower& t = two_stage();
  auto sec = rotation_conjugacy_check(t, {2000, 0.99, 1e-6});
  REQUIRE(sec.entries.size() == 6);
  for (const auto& e : sec.entries) CHECK(e.pass);

  Tower bad = t;
  bad.stages[0].schedule.q = 4;
  bad.stages[0].schedule.p = 2;
  auto b = rotation_conjugacy_check(bad, {200, 0.99, 1e-6}, 0);
  CHECK_FALSE(b.entries[0].pass);
  CHECK(b.entries[0].detail.find("gcd(p,q) = 2") != std::string::npos);

  bool sampled = false;
  CHECK_FALSE(rotation_permutation_mismatch(BigInt(4), BigInt(1), 100, sampled));
}

TEST_CASE("combinatorics and norms checks") {
  const Tower& t = two_stage();
  CHECK(combinatorics_check(t).pass());
  auto nc = norms_check(t, 128);
  CHECK(nc.pass());
  CHECK(nc.entries.back().instance == "telescoping");

  Tower bad = t;
  bad.stages[1].psi2.values[1] = bad.stages[1].psi2.values[0];
  auto cc = combinatorics_check(bad);
  CHECK_FALSE(cc.entries[1].pass);
  CHECK(cc.entries[0].pass);

  Tower forced = t;
  forced.stages[1].flags.k_forced = true;
  CHECK_FALSE(norms_check(forced, 64).pass());
}

TEST_CASE("diameter check") {
  const Tower& t = two_stage();
  DiameterOptions o;
  o.max_atoms = 4;
  o.points = 200;
  auto sec = diameter_check(t, o);
  REQUIRE(sec.entries.size() == 2);
  CHECK(sec.pass());
  Tower bad = t;
  bad.stages[0].schedule.l = 1;
  auto b = diameter_check(bad, o, 1);
  CHECK_FALSE(b.pass());
  CHECK(b.entries[0].detail.find("degenerate") != std::string::npos);
}

TEST_CASE("orbits") {
  const Tower& t = two_stage();
  TorusPoint start(BigRational(1, 3), BigRational(1, 5));
  auto one = lines(orbit_csv(t, 2, start, 1));
  REQUIRE(one.size() == 3);
  CHECK(one[0] == "iter,x1,x2");
  CHECK(one[1] == "0," + format17(1.0 / 3) + "," + format17(0.2));

  // T_0 is a rotation in x1 only
  auto rot = lines(orbit_csv(t, 0, start, 5));
  for (std::size_t i = 1; i < rot.size(); ++i) CHECK(rot[i].substr(rot[i].rfind(',')) == "," + format17(0.2));

  // T_1 has period q_1
  auto q1 = to_u64(t.state(1).q);
  auto per = lines(orbit_csv(t, 1, start, q1));
  REQUIRE(per.size() == q1 + 2);
  double a1, a2;
  std::sscanf(per.back().c_str(), "%*[0-9],%lf,%lf", &a1, &a2);
  CHECK(torus_distance(Pt<double>{a1, a2}, Pt<double>{1.0 / 3, 0.2}) < 1e-6);
  CHECK_THROWS(orbit_csv(t, 3, start, 1));
  CHECK_THROWS(orbit_csv(t, 1, start, 0));
}

TEST_CASE("report serialization has one section per check") {
  const Tower& t = two_stage();
  DiagnosticsReport rep;
  rep.sections.push_back(combinatorics_check(t));
  rep.sections.push_back(cauchy_check(t, 0, 64));
  std::istringstream in(rep.serialize());
  auto sec = detail::parse_sections(in, "report", "akc-report-v1");
  CHECK(sec.size() == 2);
  CHECK(sec.count("combinatorics") == 1);
  CHECK(sec["cauchy"]["entries"].first == "2");
  CHECK(sec["cauchy"]["n1.pass"].first == "true");
  CHECK(rep.all_pass());
}

TEST_CASE("approximant rasters sharpen with A") {
  PeriodicForm pf{1, {BigRational(0), BigRational(1, 4), BigRational(3, 4)}, {BigRational(0), BigRational(1), BigRational(0)}};
  auto misfit = [&](double A) {
    auto f = approx_with(pf, A, 1e-3, 0.5);
    Raster r = plot_approximant(f, 128);
    int dark = 0;
    for (auto v : r.px) dark += v == 0;
    CHECK(dark >= 128);
    double err = 0;
    for (int c = 0; c < 128; ++c) {
      double x = (c + 0.5) / 128;
      err += std::fabs(eval<double>(f, x) - (x >= 0.25 && x < 0.75 ? 1.0 : 0.0));
    }
    return err / 128;
  };
  double e10 = misfit(10), e25 = misfit(25), e45 = misfit(45);
  CHECK(e25 < e10);
  CHECK(e45 < e25);
  CHECK_THROWS(plot_approximant(approx_with(pf, 10, 1e-3, 0.5), 8));
}

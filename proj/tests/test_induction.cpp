#include <catch_amalgamated.hpp>

#include "akc/induction.hpp"

#include <random>

using namespace akc;

namespace {

TowerConfig demo(unsigned stages) {
  TowerConfig c;
  c.stages = stages;
  return c;
}

const Tower& two_stage() {
  static const Tower t = run_tower(demo(2));
  return t;
}

std::string tmpdir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("akc-induction-" + name);
  std::filesystem::remove_all(p);
  return p.string();
}

std::vector<Pt<long double>> random_points(int count, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Pt<long double>> out;
  for (int i = 0; i < count; ++i) out.push_back({u(rng), u(rng)});
  return out;
}

}  // namespace

TEST_CASE("first stage") {
  Tower t = run_tower(demo(1));
  REQUIRE(t.size() == 1);
  const auto& s0 = t.stages[0].schedule;
  CHECK(s0.n == 0);
  CHECK(s0.l == 2);
  CHECK(s0.k == 1);
  CHECK(s0.q == 1);
  CHECK(s0.p == 0);
  CHECK(t.state(1).q == 4);  // k0 l0² q0
  CHECK(t.state(1).p == 1);
  CHECK(t.alpha(1) == BigRational(1, 4));
  CHECK(t.stages[0].norms.dh0 == 1);
  CHECK(t.stages[0].flags.fit_certified);
  CHECK(t.stages[0].slope == 4);
}

TEST_CASE("schedule recursion and norm targets") {
  const Tower& t = two_stage();
  for (std::size_t n = 0; n < t.size(); ++n) {
    auto s = t.state(n), s1 = t.state(n + 1);
    CHECK(s1.q == s.k * s.l * s.l * s.q);
    CHECK(s1.p == s.k * s.l * s.l * s.p + 1);
    BigInt g;
    mpz_gcd(g.get_mpz_t(), s1.p.get_mpz_t(), s1.q.get_mpz_t());
    CHECK(g == 1);
    CHECK(s.l % 2 == 0);
    CHECK(s.k > BigInt(static_cast<unsigned long>(n * n)));
    CHECK(t.stages[n].flags.k_floor);
    CHECK_FALSE(t.stages[n].flags.k_capped);
    CHECK(t.stages[n].norms.cauchy < std::ldexp(1.0, -static_cast<int>(n)));
    CHECK(t.stages[n].norms.k_cauchy < t.stages[n].norms.k_bound);
    CHECK(t.stages[n].norms.k_shadow < t.stages[n].norms.k_bound);
    CHECK(t.stages[n].slope == s1.q);
  }
  CHECK(t.stages[1].norms.dh0 > 1);
  CHECK(t.stages[1].schedule.k > 1);
}

TEST_CASE("successive rotations are close at random points") {
  // sampled independently of the grid used at build time
  const Tower& t = two_stage();
  for (std::size_t n = 0; n < t.size(); ++n) {
    CompiledStack<long double> a(t.T(n + 1)), b(t.T(n));
    long double worst = 0;
    for (auto p : random_points(2000, 7 + n)) worst = std::max(worst, torus_distance(a.apply(p), b.apply(p)));
    CHECK(worst < std::ldexp(1.0L, -static_cast<int>(n)));
  }
}

TEST_CASE("reduced and full forms of T agree") {
  const Tower& t = two_stage();
  for (std::size_t n = 1; n <= t.size(); ++n) {
    long double worst = 0;
    with_precision(n == 1 ? Precision::ldbl : Precision::quad, [&](auto r) {
      using Real = decltype(r);
      CompiledStack<Real> red(t.T(n)), full(t.T_full(n));
      REQUIRE(red.size() < full.size());
      for (auto p : random_points(1000, 11)) {
        Pt<Real> x{Real(p.x1), Real(p.x2)};
        worst = std::max<long double>(worst, static_cast<long double>(torus_distance(red.apply(x), full.apply(x))));
      }
      return 0;
    });
    CHECK(worst < 1e-12L);
  }
}

TEST_CASE("T_1 is periodic with period q_1 and preserves area") {
  const Tower& t = two_stage();
  CompiledStack<long double> T1(t.T(1));
  auto q = to_u64(t.state(1).q);
  for (auto p : random_points(200, 3)) {
    Pt<long double> x = p;
    for (std::uint64_t i = 0; i < q; ++i) x = T1.apply(x);
    CHECK(torus_distance(x, p) < 1e-9L);
    Jac<long double> J;
    T1.apply(p, J);
    CHECK(std::fabs(J.a * J.d - J.b * J.c - 1) < 1e-9L);
  }
  CompiledStack<long double> Tq(t.T(1, t.state(1).q));
  for (auto p : random_points(50, 4)) CHECK(torus_distance(Tq.apply(p), p) < 1e-12L);
}

TEST_CASE("builds are deterministic") {
  Tower a = run_tower(demo(2));
  const Tower& b = two_stage();
  for (std::size_t n = 0; n < a.size(); ++n) CHECK(serialize_stage(a.stages[n]) == serialize_stage(b.stages[n]));
  CHECK(serialize_manifest(a) == serialize_manifest(b));
}

TEST_CASE("stage records round trip") {
  const Tower& t = two_stage();
  for (const auto& r : t.stages) {
    std::string text = serialize_stage(r);
    std::istringstream in(text);
    StageRecord back = parse_stage(in);
    CHECK(back.schedule == r.schedule);
    CHECK(back.psi1 == r.psi1);
    CHECK(back.psi2 == r.psi2);
    CHECK(back.psi3 == r.psi3);
    CHECK(back.norms.cauchy == r.norms.cauchy);
    CHECK(back.flags.precision == r.flags.precision);
    CHECK(serialize_stage(back) == text);
  }
}

TEST_CASE("rotation numbers are stored as reduced fractions") {
  StageRecord r;
  r.schedule = ScheduleState::seed(54, 19);
  r.schedule.l = 2;
  r.psi1 = r.psi2 = r.psi3 = fit_entire_step(step_psi(1, 2, 1), 1e-3, 0.5);
  std::string text = serialize_stage(r);
  CHECK(text.find("alpha = 19/54\n") != std::string::npos);
  std::istringstream in(text);
  StageRecord back = parse_stage(in);
  CHECK(back.schedule.alpha() == BigRational(19, 54));
}

TEST_CASE("towers reload to the same maps") {
  const Tower& t = two_stage();
  std::string dir = tmpdir("reload");
  save_tower(t, dir);
  CHECK(std::filesystem::exists(std::filesystem::path(dir) / "tower.manifest"));
  CHECK(std::filesystem::exists(std::filesystem::path(dir) / "stage-000.akc"));
  CHECK(std::filesystem::exists(std::filesystem::path(dir) / "stage-001.akc"));
  Tower u = load_tower(dir);
  REQUIRE(u.size() == t.size());
  CHECK(serialize_manifest(u) == serialize_manifest(t));
  for (std::size_t n = 0; n <= t.size(); ++n) {
    CompiledStack<long double> a(t.T(n)), b(u.T(n));
    for (auto p : random_points(300, 5)) CHECK(torus_distance(a.apply(p), b.apply(p)) < 1e-12L);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed stage files are rejected with a location") {
  std::string text = serialize_stage(two_stage().stages[1]);
  SECTION("missing field") {
    auto pos = text.find("\nq = ");
    auto end = text.find('\n', pos + 1);
    std::string cut = text.substr(0, pos) + text.substr(end);
    std::istringstream in(cut);
    try {
      parse_stage(in, "s.akc");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("missing field 'q' in [schedule]") != std::string::npos);
    }
  }
  SECTION("truncated") {
    std::istringstream in(text.substr(0, text.size() / 3));
    CHECK_THROWS_AS(parse_stage(in), ParseError);
  }
  SECTION("wrong version") {
    std::istringstream in("akc-stage-v0\n");
    try {
      parse_stage(in, "s.akc");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("s.akc:1:") != std::string::npos);
    }
  }
  SECTION("stray line") {
    std::istringstream in("akc-stage-v1\n[schedule]\nnonsense\n");
    try {
      parse_stage(in, "s.akc");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("s.akc:3:") != std::string::npos);
    }
  }
  CHECK_THROWS(load_tower("/nonexistent/akc"));
}

TEST_CASE("configuration errors and infeasible requests") {
  TowerConfig c = demo(5);
  c.mode = Mode::certified;
  CHECK_THROWS_AS(run_tower(c), InfeasibleError);
  c.stages = 2;
  CHECK_THROWS_AS(run_tower(c), InfeasibleError);
  TowerConfig bad = demo(1);
  bad.epsilon = 0;
  CHECK_THROWS_AS(run_tower(bad), std::invalid_argument);
  bad = demo(0);
  CHECK_THROWS_AS(run_tower(bad), std::invalid_argument);
  bad = demo(1);
  bad.precision_digits = 50;
  CHECK_THROWS(run_tower(bad));
}

TEST_CASE("certified first stage uses the coupled tolerances") {
  TowerConfig c = demo(1);
  c.mode = Mode::certified;
  Tower t = run_tower(c);
  CHECK(t.stages[0].epsilon == Catch::Approx(1.0 / 192));
  CHECK(t.stages[0].delta == Catch::Approx(1.0 / 64));
  CHECK(t.stages[0].flags.fit_certified);
}

TEST_CASE("forced k and precision override") {
  TowerConfig c = demo(2);
  c.force_k = BigInt(1);
  c.precision_digits = 18;
  Tower t = run_tower(c);
  for (const auto& r : t.stages) {
    CHECK(r.schedule.k == 1);
    CHECK(r.flags.k_forced);
    CHECK(r.flags.precision == Precision::ldbl);
  }
  CHECK_FALSE(t.stages[1].flags.k_floor);
  TowerConfig q = demo(1);
  q.precision_digits = 30;
  CHECK(run_tower(q).stages[0].flags.precision == Precision::quad);
}

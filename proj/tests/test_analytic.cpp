#include <catch_amalgamated.hpp>

#include "akc/analytic.hpp"

#include <random>

using namespace akc;

namespace {

BigRational R(long n, long d = 1) { return BigRational(n, d); }

// Definition-level sum, straight from the double bump formula (no Abel regrouping, no cutoffs).
long double direct_sum(const EntireStepApprox& f, long double x) {
  long double N = f.N.get_d();
  long double xr = x * N - std::floor(x * N);  // phase
  long double c = f.A / N;
  auto E = [](long double u) { return std::exp(-std::exp(-u)); };
  long double s = 0;
  std::size_t k = f.k();
  for (long n = -f.W; n <= f.W; ++n)
    for (std::size_t m = 0; m < k; ++m) {
      long double b0 = f.breaks[m].to<long double>() + n;
      long double b1 = (m + 1 < k ? f.breaks[m + 1].to<long double>() : 1.0L) + n;
      long double u0 = c * (xr - b0), u1 = c * (xr - b1);
      if (u0 < -40) continue;  // both bumps are exp(-e^40) small
      s += f.values[m].to<long double>() * (E(u0) - E(u1));
    }
  return s;
}

bool in_F(const EntireStepApprox& f, double x) {
  double y = x * f.N.get_d();
  y -= std::floor(y);
  double h = f.delta / (2.0 * f.k());
  for (const auto& b : f.breaks) {
    double d = std::fabs(y - b.to<double>());
    d = std::min(d, 1 - d);
    if (d < h) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("psi1 fit for l=2, q=1 meets the approximation contract") {
  auto target = step_psi(1, 2, 1);
  auto f = fit_entire_step(target, 1e-3, 1.0 / 20);
  REQUIRE(f.cert.certified);
  CHECK(f.cert.certified_error < 1e-3);
  CHECK(f.cert.tail_bound < 1e-4);
  CHECK(std::fabs(eval<double>(f, 0.75) - 0.25) < 1e-3);
  CHECK(std::fabs(eval<double>(f, 0.25)) < 1e-3);
  // independent dense-grid sup outside F
  double worst = 0;
  int used = 0;
  for (int i = 0; i < 100000; ++i) {
    double x = (i + 0.5) / 100000;
    if (in_F(f, x)) continue;
    ++used;
    worst = std::max(worst, std::fabs(static_cast<double>(direct_sum(f, x)) - target(BigRational(BigInt(2 * i + 1), BigInt(200000))).to<double>()));
  }
  CHECK(used > 90000);
  CHECK(worst < 1e-3);
  // the measure of F is delta
  CHECK(2 * f.k() * f.exceptional_half_width() * f.N.get_d() == Catch::Approx(1.0 / 20));
}

TEST_CASE("the Abel form agrees with the definition") {
  for (auto [which, l, q] : {std::tuple{1, 2L, 1L}, {2, 3L, 3L}, {3, 4L, 2L}}) {
    auto f = fit_entire_step(step_psi(which, l, q), 1e-3, 0.5);
    for (int i = 0; i < 200; ++i) {
      double x = (i + 0.31) / 200;
      CHECK(std::fabs(eval<long double>(f, x) - direct_sum(f, x)) < 1e-13L);
    }
  }
}

TEST_CASE("constant targets telescope") {
  PeriodicForm pf{1, {R(0)}, {R(3, 7)}};
  for (double c : {1.0, 5.0, 40.0}) {
    auto f = approx_with(pf, c, 1e-6, 0.5);
    for (double x : {0.0, 0.1, 0.5, 0.99}) CHECK(eval<double>(f, x) == Catch::Approx(3.0 / 7).margin(1e-6));
  }
}

TEST_CASE("periodicity and restriction to the real line") {
  auto f = fit_entire_step(step_psi(2, 3, 3), 1e-3, 0.5);
  REQUIRE(f.N == 9);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 100; ++i) {
    long double x = u(rng) * 0.8L;
    CHECK(std::fabs(eval<long double>(f, x) - eval<long double>(f, x + 1.0L / 9)) < 1e-12L);
    auto z = eval_complex<long double>(f, Cplx<long double>(x, 0));
    CHECK(std::fabs(z.re - eval<long double>(f, x)) < 1e-15L);
    CHECK(std::fabs(z.im) < 1e-15L);
  }
}

TEST_CASE("analytic derivative matches central differences") {
  for (auto [which, l, q] : {std::tuple{1, 2L, 1L}, {2, 2L, 1L}, {2, 3L, 3L}, {3, 3L, 3L}}) {
    auto f = fit_entire_step(step_psi(which, l, q), 1e-3, 0.5);
    std::mt19937_64 rng(which * 100 + l);
    std::uniform_real_distribution<double> u(0, 1);
    int compared = 0;
    for (int i = 0; i < 100; ++i) {
      long double x = u(rng);
      long double h = 1e-6L;
      long double fd = (eval<long double>(f, x + h) - eval<long double>(f, x - h)) / (2 * h);
      long double an = eval_derivative<long double>(f, x);
      // relative comparison where the slope is not negligible
      if (std::fabs(an) < 1e-6L * f.A) {
        CHECK(std::fabs(fd - an) < 1e-6L * f.A);
        continue;
      }
      ++compared;
      CHECK(std::fabs(fd - an) <= 1e-4L * std::fabs(an));
    }
    CHECK(compared > 0);
    auto d = eval_derivative<long double>(f, Cplx<long double>(0.3L, 0));
    CHECK(std::fabs(d.re - eval_derivative<long double>(f, 0.3L)) < 1e-9L * f.A);
  }
}

TEST_CASE("derivative is small at interval midpoints") {
  auto f = fit_entire_step(step_psi(1, 2, 1), 1e-3, 1.0 / 20);
  double k = 2, N = 1, A = f.A;
  for (double mid : {0.25, 0.75}) CHECK(std::fabs(eval_derivative<double>(f, mid)) < 10 * k * N * A * std::exp(-A / (4 * k * N)));
}

TEST_CASE("strip guard") {
  auto f = fit_entire_step(step_psi(1, 2, 1), 1e-3, 1.0 / 20);
  CHECK_NOTHROW(eval_complex<double>(f, Cplx<double>(0.3, 1.0 / f.A)));
  CHECK_THROWS_AS(eval_complex<double>(f, Cplx<double>(0.3, 2.0 / f.A)), StripTooWide);
}

TEST_CASE("fit failure reports the best error") {
  FitOptions opt;
  opt.piece_sharpness_cap = 2;
  try {
    fit_periodic(step_psi(1, 2, 1).periodic_form(), 1e-3, 1.0 / 20, opt);
    FAIL("expected a fit failure");
  } catch (const FitFailure& e) {
    CHECK(e.best_error > 1e-3);
  }
  CHECK_THROWS(fit_entire_step(step_psi(1, 2, 1), 0, 0.5));
  CHECK_THROWS(fit_entire_step(step_psi(1, 2, 1), 1e-3, 1.5));
}

TEST_CASE("coupled epsilon and delta") {
  ScheduleState s;
  s.l = 2;
  s.q = 1;
  auto [eps, delta] = certified_coupling(s);
  CHECK(eps == R(1, 192));
  CHECK(delta == R(1, 64));
  s.q = 5000;
  CHECK_THROWS(certified_coupling(s));
}

TEST_CASE("stage maps") {
  ScheduleState s = ScheduleState::seed(3, 1);
  s.l = 3;
  auto m = build_stage_maps(s, 1e-3, 0.5, 54);
  CHECK(m.psi1->N == 1);
  CHECK(m.psi2->N == 9);
  CHECK(m.psi3->N == 1);
  CHECK(m.psi2->values == std::vector<BigRational>{R(0), R(1, 3), R(2, 3)});
  auto h = m.h();
  REQUIRE(h.maps.size() == 4);
  CHECK(h.maps[0].kind == AKind::x1_plus_f_x2);
  CHECK(h.maps[1].kind == AKind::x2_plus_f_x1);
  CHECK(h.maps[2].kind == AKind::x1_minus_f_x2);
  CHECK(h.maps[3].kind == AKind::x2_plus_linear_x1);
  CHECK(h.maps[3].slope == 54);
  ScheduleState s0 = ScheduleState::seed();
  auto m0 = build_stage_maps(s0, 1e-3, 0.5, 4);
  CHECK(m0.psi1->values == std::vector<BigRational>{R(0), R(1, 4)});
}

TEST_CASE("stacks invert exactly up to rounding") {
  ScheduleState s = ScheduleState::seed(3, 1);
  s.l = 3;
  auto h = build_stage_maps(s, 1e-3, 0.5, 54).h().then(AnalyticShear::translate(R(2, 7)));
  CompiledStack<double> f(h), g(h.inverse());
  CompiledStack<double> id{ShearStack{}};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    Pt<double> p{u(rng), u(rng)};
    worst = std::max(worst, torus_distance(g.apply(f.apply(p)), p));
    CHECK(torus_distance(id.apply(p), p) == 0);
  }
  CHECK(worst < 1e-12);
  // strip points
  double cw = 0;
  for (int i = 0; i < 1000; ++i) {
    Pt<Cplx<double>> p{{u(rng), 1e-4 * u(rng)}, {u(rng), -1e-4 * u(rng)}};
    auto r = g.apply(f.apply(p));
    cw = std::max({cw, std::fabs(wrap(r.x1.re - p.x1.re)), std::fabs(r.x1.im - p.x1.im), std::fabs(wrap(r.x2.re - p.x2.re)),
                   std::fabs(r.x2.im - p.x2.im)});
  }
  CHECK(cw < 1e-10);
}

TEST_CASE("analytic maps commute with the current rotation") {
  ScheduleState s = ScheduleState::seed(4, 1);
  s.l = 2;
  s.k = 3;
  auto h = build_stage_maps(s, 1e-3, 0.5, s.k * s.l * s.l * s.q).h();
  CompiledStack<long double> f(h);
  long double a = 0.25L;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  long double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    Pt<long double> p{u(rng), u(rng)}, rp{frac_part(p.x1 + a), p.x2};
    Pt<long double> lhs = f.apply(rp), rhs = f.apply(p);
    rhs.x1 = frac_part(rhs.x1 + a);
    worst = std::max(worst, torus_distance(lhs, rhs));
  }
  CHECK(worst < 1e-12L);
}

TEST_CASE("norms") {
  for (long m : {2L, 3L, 10L}) {
    ShearStack t;
    t.maps.push_back(AnalyticShear::translate(R(1, m)));
    auto e = strip_norm<double>(t, 0.1);
    CHECK(e.value == Catch::Approx(1.0 / m));
    CHECK(e.certified);
    // the same value through the general grid path
    CHECK(dist_rho<double>(t, ShearStack{}, 0, 64).value == Catch::Approx(1.0 / m));
  }
  ScheduleState s = ScheduleState::seed();
  auto h = build_stage_maps(s, 1e-3, 0.5, 4).h();
  double narrow = 1e-3 / (h.maps[0].f->A * h.maps[1].f->A);  // images stay inside every strip
  CHECK(dist_rho<double>(h, h, 0, 64).value == 0);
  CHECK(dist_rho<double>(h, h, narrow, 32).value == 0);
  CHECK(dh_norm<double>(ShearStack{}, 0.1).value == 1);
  CHECK(dh_norm<double>(h, 0, 128).value > 4);
  CHECK_FALSE(dh_norm<double>(h, 0, 128).certified);
  auto strip = dh_norm<long double>(h, narrow, 64);
  CHECK(strip.im_lines == 3);
  CHECK(strip.value >= dh_norm<long double>(h, 0, 64).value * (1 - 1e-6));
  CHECK_THROWS(dist_rho<double>(h, h, -1));

  // pseudometric on sampled triples
  ShearStack a = h, b = h.then(AnalyticShear::translate(R(1, 9))), c = build_stage_maps(s, 1e-3, 0.5, 8).h();
  double ab = dist_rho<double>(a, b, 0, 64).value, ba = dist_rho<double>(b, a, 0, 64).value;
  double bc = dist_rho<double>(b, c, 0, 64).value, ac = dist_rho<double>(a, c, 0, 64).value;
  CHECK(ab == Catch::Approx(ba));
  CHECK(ac <= ab + bc + 1e-12);
}

TEST_CASE("select_k") {
  ScheduleState s0 = ScheduleState::seed();
  auto m0 = build_stage_maps(s0, 1e-3, 0.5, 0);
  auto k0 = select_k<long double>(s0, m0, 1.0, BigInt(1) << 40);
  CHECK(k0.k == 1);
  CHECK(k0.cauchy_norm < 1);
  // determinism
  auto again = select_k<long double>(s0, m0, 1.0, BigInt(1) << 40);
  CHECK(again.k == k0.k);
  CHECK(again.cauchy_norm == k0.cauchy_norm);

  ScheduleState s3 = ScheduleState::seed(4, 1);
  s3.n = 3;
  auto m3 = build_stage_maps(s3, 1e-3, 0.5, 0);
  auto k3 = select_k<long double>(s3, m3, 1.0, BigInt(1) << 40, 128);
  CHECK(k3.k > 9);
  CHECK(k3.shadow_norm < k3.bound);
  // a tight bound needs a larger k, and a cap stops the search
  auto tight = select_k<long double>(s0, m0, 1000.0, BigInt(1) << 40, 128);
  CHECK(tight.k > 1);
  CHECK(tight.cauchy_norm < 1e-3);
  auto capped = select_k<long double>(s0, m0, 1000.0, BigInt(4), 128);
  CHECK(capped.capped);
}

TEST_CASE("select_l") {
  CHECK(select_l(0, 1.0) == 2);
  CHECK(select_l(2, 3.0) == 14);
  CHECK(select_l(1, 2.5) == 6);
  BigInt prev = 0;
  for (double v = 0.5; v < 50; v += 0.37) {
    BigInt l = select_l(1, v);
    CHECK(l >= prev);
    CHECK(l % 2 == 0);
    CHECK(l.get_d() > 2 * v);
    prev = l;
  }
}

TEST_CASE("precision selection") {
  CHECK(auto_precision(BigInt(1000)) == Precision::dbl);
  CHECK(auto_precision(BigInt(1) << 20) == Precision::ldbl);
  CHECK(auto_precision(BigInt(1) << 60) == Precision::quad);
  CHECK(precision_from_digits(15) == Precision::dbl);
  CHECK(precision_from_digits(18) == Precision::ldbl);
  CHECK(precision_from_digits(30) == Precision::quad);
  CHECK_THROWS(precision_from_digits(50));
  CHECK_THROWS(precision_from_digits(0));
  auto f = fit_entire_step(step_psi(2, 2, 1), 1e-3, 0.5);
  quad x = quad(0.3);
  CHECK(std::fabs(static_cast<double>(eval<quad>(f, x)) - eval<double>(f, 0.3)) < 1e-14);
}

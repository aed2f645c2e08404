#pragma once

#include "akc/exact_core.hpp"

#include <boost/multiprecision/float128.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace akc {

using quad = boost::multiprecision::float128;

// ---------------------------------------------------------------- scalars

template <class Real>
struct Cplx {
  Real re{0}, im{0};
  Cplx() = default;
  Cplx(Real r, Real i = Real(0)) : re(r), im(i) {}
  friend Cplx operator+(const Cplx& a, const Cplx& b) { return {a.re + b.re, a.im + b.im}; }
  friend Cplx operator-(const Cplx& a, const Cplx& b) { return {a.re - b.re, a.im - b.im}; }
  friend Cplx operator-(const Cplx& a) { return {-a.re, -a.im}; }
  friend Cplx operator*(const Cplx& a, const Cplx& b) { return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re}; }
  friend Cplx operator*(const Real& s, const Cplx& a) { return {s * a.re, s * a.im}; }
};

template <class Real>
Real abs_value(const Real& x) {
  using std::fabs;
  return fabs(x);
}
template <class Real>
Real abs_value(const Cplx<Real>& z) {
  using std::sqrt;
  return sqrt(z.re * z.re + z.im * z.im);
}
template <class Real>
Cplx<Real> cexp(const Cplx<Real>& z) {
  using std::cos;
  using std::exp;
  using std::sin;
  Real m = exp(z.re);
  return {m * cos(z.im), m * sin(z.im)};
}

template <class Real>
Real frac_part(const Real& x) {
  using std::floor;
  Real r = x - floor(x);
  return r >= Real(1) ? Real(0) : r;
}
// representative of x mod 1 nearest to 0, in [-1/2, 1/2]
template <class Real>
Real wrap(const Real& x) {
  using std::floor;
  return x - floor(x + Real(0.5));
}

template <class Real>
double to_double(const Real& x) {
  return static_cast<double>(x);
}

struct StripTooWide : std::runtime_error {
  StripTooWide() : std::runtime_error("strip too wide for this sharpness") {}
};

struct FitFailure : std::runtime_error {
  double best_error;
  explicit FitFailure(double best)
      : std::runtime_error("fit failure: sharpness cap reached, best certified error " + std::to_string(best)), best_error(best) {}
};

// ---------------------------------------------------------------- approximant

struct FitRecord {
  double grid_step = 0;
  std::uint64_t grid_points = 0;
  double derivative_bound = 0;  // max over cells outside F, per unit of x
  double grid_error = 0;        // max node error outside F
  double tail_bound = 0;        // truncation of the bi-infinite sum
  double certified_error = 0;
  bool certified = false;
};

// s(x) = Σ_n Σ_m α_m [E(A(x - b_m - n/N)) - E(A(x - b_{m+1} - n/N))], E(u) = exp(-exp(-u)),
// evaluated at the phase y = frac(xN) with the translates n ∈ [-W, W].
struct EntireStepApprox {
  BigInt N = 1;
  std::vector<BigRational> breaks;  // one period, phase units, breaks[0] == 0
  std::vector<BigRational> values;
  double A = 1;  // sharpness in units of x
  long W = 1;
  double epsilon = 0, delta = 0;
  FitRecord cert;

  std::size_t k() const { return values.size(); }
  double per_period() const { return A / N.get_d(); }
  double exceptional_half_width() const { return delta / (2.0 * static_cast<double>(k()) * N.get_d()); }

  friend bool operator==(const EntireStepApprox& a, const EntireStepApprox& b) {
    return a.N == b.N && a.breaks == b.breaks && a.values == b.values && a.A == b.A && a.W == b.W &&
           a.epsilon == b.epsilon && a.delta == b.delta;
  }
};

inline double tail_bound(double c, long W, double amax) {
  return amax * std::exp(-c * static_cast<double>(W - 1)) / (1.0 - std::exp(-c));
}

inline long choose_window(double c, double epsilon, double amax) {
  long W = 1;
  double target = std::min(epsilon / 10.0, 1e-20);
  while (tail_bound(c, W, amax) >= target && W < 100000) ++W;
  return W;
}

// Precomputed Abel form of the truncated sum in phase units:
// s(y) = Σ_j coef_j E(c (y - b_j)).
template <class Real>
struct PhaseKernel {
  Real c;
  std::vector<Real> b, coef;
  Real N;

  explicit PhaseKernel(const EntireStepApprox& f) {
    c = Real(f.A) / BigRational(f.N).to<Real>();
    N = BigRational(f.N).to<Real>();
    std::size_t k = f.k();
    long W = f.W;
    std::size_t K = (2 * static_cast<std::size_t>(W) + 1) * k;
    std::vector<Real> beta, alpha;
    for (std::size_t m = 0; m < k; ++m) {
      beta.push_back(f.breaks[m].to<Real>());
      alpha.push_back(f.values[m].to<Real>());
    }
    for (std::size_t j = 0; j <= K; ++j) {
      std::size_t m = j % k;
      long n = static_cast<long>(j / k) - W;
      Real pos = (j == K ? Real(0) : beta[m]) + Real(n);
      Real cf = j == 0 ? alpha[0] : (j == K ? -alpha[(K - 1) % k] : alpha[m] - alpha[(j - 1) % k]);
      if (cf == Real(0)) continue;
      b.push_back(pos);
      coef.push_back(cf);
    }
  }

  static Real E(const Real& v) {
    using std::exp;
    if (v < Real(-6)) return Real(0);
    return exp(-exp(-v));
  }
  // e^{-v} E(v): derivative of E
  static Real G(const Real& v) {
    using std::exp;
    if (v < Real(-6)) return Real(0);
    Real e = exp(-v);
    return e * exp(-e);
  }

  Real value(const Real& y) const {
    Real s(0);
    for (std::size_t j = 0; j < b.size(); ++j) s += coef[j] * E(c * (y - b[j]));
    return s;
  }
  // ds/dy
  Real slope(const Real& y) const {
    Real s(0);
    for (std::size_t j = 0; j < b.size(); ++j) s += coef[j] * G(c * (y - b[j]));
    return c * s;
  }
  void value_and_slope(const Real& y, Real& v, Real& d) const {
    using std::exp;
    v = Real(0);
    d = Real(0);
    for (std::size_t j = 0; j < b.size(); ++j) {
      Real u = c * (y - b[j]);
      if (u < Real(-6)) continue;
      Real e = exp(-u);
      Real E = exp(-e);
      v += coef[j] * E;
      d += coef[j] * e * E;
    }
    d *= c;
  }

  Cplx<Real> value(const Cplx<Real>& y) const {
    using std::cos;
    using std::exp;
    using std::fabs;
    Real ang = c * y.im;
    if (fabs(ang) >= Real(1.5707963267948966)) throw StripTooWide();
    Cplx<Real> s;
    Real ca = cos(ang);
    for (std::size_t j = 0; j < b.size(); ++j) {
      Real u = c * (y.re - b[j]);
      // |E| = exp(-e^{-u} cos(ang)): negligible once that exponent is large
      if (u < Real(-30) || exp(-u) * ca > Real(400)) continue;
      Cplx<Real> inner = cexp(Cplx<Real>(-u, -ang));
      s = s + coef[j] * cexp(-inner);
    }
    return s;
  }
  Cplx<Real> slope(const Cplx<Real>& y) const {
    using std::cos;
    using std::exp;
    using std::fabs;
    Real ang = c * y.im;
    if (fabs(ang) >= Real(1.5707963267948966)) throw StripTooWide();
    Cplx<Real> s;
    Real ca = cos(ang);
    for (std::size_t j = 0; j < b.size(); ++j) {
      Real u = c * (y.re - b[j]);
      if (u < Real(-30) || exp(-u) * ca > Real(400)) continue;
      Cplx<Real> inner = cexp(Cplx<Real>(-u, -ang));
      s = s + coef[j] * (inner * cexp(-inner));
    }
    return c * s;
  }

  // function of x (period 1/N)
  Real at(const Real& x) const { return value(frac_part(x * N)); }
  Real derivative_at(const Real& x) const { return N * slope(frac_part(x * N)); }
  Cplx<Real> at(const Cplx<Real>& z) const { return value(Cplx<Real>(frac_part(z.re * N), z.im * N)); }
  Cplx<Real> derivative_at(const Cplx<Real>& z) const {
    return N * slope(Cplx<Real>(frac_part(z.re * N), z.im * N));
  }
};

template <class Real>
Real eval(const EntireStepApprox& f, const Real& x) {
  return PhaseKernel<Real>(f).at(x);
}
template <class Real>
Cplx<Real> eval_complex(const EntireStepApprox& f, const Cplx<Real>& z) {
  return PhaseKernel<Real>(f).at(z);
}
template <class Real>
Real eval_derivative(const EntireStepApprox& f, const Real& x) {
  return PhaseKernel<Real>(f).derivative_at(x);
}
template <class Real>
Cplx<Real> eval_derivative(const EntireStepApprox& f, const Cplx<Real>& z) {
  return PhaseKernel<Real>(f).derivative_at(z);
}

// ---------------------------------------------------------------- fitting

struct FitOptions {
  double piece_sharpness_cap = 1e6;  // cap on A/(kN)
  std::uint64_t grid = 1u << 15;     // certification nodes per unit of phase
  std::uint64_t grid_max = 1u << 19;
  int bisect_rounds = 20;
};

// Certified sup of |s - target| on the complement of F, in phase units:
// node errors plus (cell derivative bound) * h / 2 on every cell.
inline FitRecord certify(const EntireStepApprox& f, std::uint64_t grid) {
  using Real = long double;
  PhaseKernel<Real> ker(f);
  FitRecord rec;
  std::size_t k = f.k();
  Real hF = Real(f.delta) / (2 * Real(k));
  double amax = 0;
  for (const auto& v : f.values) amax = std::max(amax, std::fabs(v.to<double>()));
  rec.tail_bound = tail_bound(to_double(ker.c), f.W, amax);
  Real worst(0), worst_node(0), worst_deriv(0);
  std::uint64_t nodes = 0;
  Real e1 = std::exp(Real(-1));
  for (std::size_t m = 0; m < k; ++m) {
    Real lo = f.breaks[m].to<Real>() + hF;
    Real hi = (m + 1 < k ? f.breaks[m + 1].to<Real>() : Real(1)) - hF;
    if (hi <= lo) continue;
    Real target = f.values[m].to<Real>();
    std::uint64_t cells = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil((hi - lo) * Real(grid))));
    Real h = (hi - lo) / Real(cells);
    Real prev_err = std::fabs(ker.value(lo) - target);
    worst_node = std::max(worst_node, prev_err);
    ++nodes;
    for (std::uint64_t i = 0; i < cells; ++i) {
      Real ya = lo + h * Real(i), yb = i + 1 == cells ? hi : lo + h * Real(i + 1);
      Real err = std::fabs(ker.value(yb) - target);
      ++nodes;
      Real D(0);
      for (std::size_t j = 0; j < ker.b.size(); ++j) {
        Real bj = ker.b[j];
        Real v = bj < ya ? ker.c * (ya - bj) : (bj > yb ? ker.c * (yb - bj) : Real(0));
        D += std::fabs(ker.coef[j]) * (v == Real(0) ? e1 : std::exp(-v - std::exp(-v)));
      }
      D = ker.c * D + ker.c * Real(rec.tail_bound);
      Real cell = std::max(prev_err, err) + D * (yb - ya) / 2;
      worst = std::max(worst, cell);
      worst_node = std::max(worst_node, err);
      worst_deriv = std::max(worst_deriv, D);
      prev_err = err;
    }
  }
  rec.grid_points = nodes;
  rec.grid_step = 1.0 / static_cast<double>(grid) / f.N.get_d();
  rec.derivative_bound = static_cast<double>(worst_deriv) * f.N.get_d();
  rec.grid_error = static_cast<double>(worst_node);
  rec.certified_error = static_cast<double>(worst) + rec.tail_bound;
  rec.certified = rec.certified_error < f.epsilon;
  return rec;
}

inline EntireStepApprox approx_with(const PeriodicForm& pf, double c, double epsilon, double delta) {
  EntireStepApprox f;
  f.N = pf.N;
  f.breaks = pf.breaks;
  f.values = pf.values;
  f.A = c * pf.N.get_d();
  f.epsilon = epsilon;
  f.delta = delta;
  double amax = 0;
  for (const auto& v : pf.values) amax = std::max(amax, std::fabs(v.to<double>()));
  f.W = choose_window(f.per_period(), epsilon, amax);
  return f;
}

// Certify, refining the grid while the derivative term is what keeps the bound above epsilon.
inline FitRecord certify_refined(const EntireStepApprox& f, const FitOptions& opt) {
  FitRecord r = certify(f, opt.grid);
  for (std::uint64_t g = opt.grid * 2; !r.certified && g <= opt.grid_max && r.grid_error + r.tail_bound < 0.9 * f.epsilon; g *= 2)
    r = certify(f, g);
  return r;
}

inline EntireStepApprox fit_periodic(const PeriodicForm& pf, double epsilon, double delta, const FitOptions& opt = {}) {
  if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be positive");
  if (!(delta > 0 && delta < 1)) throw std::invalid_argument("delta must lie in (0,1)");
  double k = static_cast<double>(pf.values.size());
  double cap = opt.piece_sharpness_cap * k;
  double c = 4.0 * k * std::log(1.0 / epsilon);
  if (c < 1) c = 1;
  double best = std::numeric_limits<double>::infinity();
  double lo = 0;
  EntireStepApprox pass;
  for (;;) {
    EntireStepApprox f = approx_with(pf, c, epsilon, delta);
    f.cert = certify_refined(f, opt);
    best = std::min(best, f.cert.certified_error);
    if (f.cert.certified) {
      pass = f;
      break;
    }
    lo = c;
    if (c * 2 > cap) throw FitFailure(best);
    c *= 2;
  }
  double hi = c;
  for (int r = 0; r < opt.bisect_rounds && lo > 0; ++r) {
    double mid = 0.5 * (lo + hi);
    EntireStepApprox f = approx_with(pf, mid, epsilon, delta);
    f.cert = certify_refined(f, opt);
    if (f.cert.certified) {
      hi = mid;
      pass = f;
    } else {
      lo = mid;
    }
  }
  return pass;
}

// Certificates are computed in phase units (N = 1); convert the x-unit fields for period 1/N.
inline FitRecord rescale_record(FitRecord unit, const BigInt& N) {
  double n = N.get_d();
  unit.grid_step /= n;
  unit.derivative_bound *= n;
  return unit;
}

// Fits are independent of N in phase units, so repeated patterns reuse one search.
inline EntireStepApprox fit_entire_step(const StepFunction& target, double epsilon, double delta, const FitOptions& opt = {}) {
  PeriodicForm pf = target.periodic_form();
  static std::mutex mu;
  static std::map<std::string, std::pair<double, FitRecord>> cache;
  std::string key = std::to_string(epsilon) + "|" + std::to_string(delta) + "|" + std::to_string(opt.piece_sharpness_cap) + "|" +
                    std::to_string(opt.grid) + "|";
  for (std::size_t i = 0; i < pf.values.size(); ++i) key += pf.breaks[i].str() + ":" + pf.values[i].str() + ";";
  std::pair<double, FitRecord> hit;
  bool found = false;
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) {
      hit = it->second;
      found = true;
    }
  }
  if (!found) {
    PeriodicForm unit = pf;
    unit.N = 1;
    EntireStepApprox f = fit_periodic(unit, epsilon, delta, opt);
    hit = {f.per_period(), f.cert};
    std::lock_guard<std::mutex> lock(mu);
    cache.emplace(key, hit);
  }
  EntireStepApprox out = approx_with(pf, hit.first, epsilon, delta);
  out.cert = rescale_record(hit.second, pf.N);
  return out;
}

// ---------------------------------------------------------------- shears and stacks

enum class AKind { x1_plus_f_x2, x1_minus_f_x2, x2_plus_f_x1, x2_minus_f_x1, x2_plus_linear_x1, x1_translate };

struct AnalyticShear {
  AKind kind = AKind::x1_translate;
  std::shared_ptr<const EntireStepApprox> f;
  BigInt slope = 0;
  BigRational shift;

  static AnalyticShear of(AKind k, std::shared_ptr<const EntireStepApprox> f) { return {k, std::move(f), 0, {}}; }
  static AnalyticShear linear(const BigInt& s) { return {AKind::x2_plus_linear_x1, nullptr, s, {}}; }
  static AnalyticShear translate(const BigRational& t) { return {AKind::x1_translate, nullptr, 0, t.frac()}; }

  AnalyticShear inverse() const {
    AnalyticShear r = *this;
    switch (kind) {
      case AKind::x1_plus_f_x2: r.kind = AKind::x1_minus_f_x2; break;
      case AKind::x1_minus_f_x2: r.kind = AKind::x1_plus_f_x2; break;
      case AKind::x2_plus_f_x1: r.kind = AKind::x2_minus_f_x1; break;
      case AKind::x2_minus_f_x1: r.kind = AKind::x2_plus_f_x1; break;
      case AKind::x2_plus_linear_x1: r.slope = -slope; break;
      case AKind::x1_translate: r.shift = (-shift).frac(); break;
    }
    return r;
  }
};

struct ShearStack {
  std::vector<AnalyticShear> maps;  // applied first to last
  std::string label;

  ShearStack inverse() const {
    ShearStack r;
    r.label = label.empty() ? "" : label + "^-1";
    for (auto it = maps.rbegin(); it != maps.rend(); ++it) r.maps.push_back(it->inverse());
    return r;
  }
  // this, then other
  ShearStack then(const ShearStack& other) const {
    ShearStack r = *this;
    r.maps.insert(r.maps.end(), other.maps.begin(), other.maps.end());
    r.label = label + (other.label.empty() ? "" : "," + other.label);
    return r;
  }
  ShearStack then(const AnalyticShear& s) const {
    ShearStack r = *this;
    r.maps.push_back(s);
    return r;
  }
  // largest integer multiplier (slope or N) the evaluation will meet
  BigInt scale() const {
    BigInt s = 1;
    for (const auto& m : maps) {
      if (m.f) s = std::max(s, m.f->N);
      s = std::max<BigInt>(s, abs(m.slope));
    }
    return s;
  }
};

template <class Real>
struct Pt {
  Real x1{0}, x2{0};
};

template <class Real>
struct Jac {
  Real a{1}, b{0}, c{0}, d{1};  // [[a,b],[c,d]] = ∂(F1,F2)/∂(x1,x2)
  Real max_entry() const {
    using std::fabs;
    return std::max(std::max(fabs(a), fabs(b)), std::max(fabs(c), fabs(d)));
  }
};

// A stack with every constant converted to Real once.
template <class Real>
class CompiledStack {
 public:
  CompiledStack() = default;
  explicit CompiledStack(const ShearStack& s) {
    std::map<const EntireStepApprox*, std::size_t> seen;
    for (const auto& m : s.maps) {
      Op op;
      op.kind = m.kind;
      if (m.f) {
        auto it = seen.find(m.f.get());
        if (it == seen.end()) {
          kernels_.push_back(std::make_shared<PhaseKernel<Real>>(*m.f));
          it = seen.emplace(m.f.get(), kernels_.size() - 1).first;
        }
        op.ker = kernels_[it->second].get();
      }
      op.slope = BigRational(m.slope).to<Real>();
      op.shift = m.shift.to<Real>();
      ops_.push_back(op);
    }
  }

  Pt<Real> apply(Pt<Real> p) const {
    for (const auto& op : ops_) step(op, p);
    return p;
  }
  Pt<Real> apply(Pt<Real> p, Jac<Real>& J) const {
    for (const auto& op : ops_) step(op, p, &J);
    return p;
  }
  Pt<Cplx<Real>> apply(Pt<Cplx<Real>> p) const {
    for (const auto& op : ops_) {
      switch (op.kind) {
        case AKind::x1_plus_f_x2: p.x1 = reduce(p.x1 + op.ker->at(p.x2)); break;
        case AKind::x1_minus_f_x2: p.x1 = reduce(p.x1 - op.ker->at(p.x2)); break;
        case AKind::x2_plus_f_x1: p.x2 = reduce(p.x2 + op.ker->at(p.x1)); break;
        case AKind::x2_minus_f_x1: p.x2 = reduce(p.x2 - op.ker->at(p.x1)); break;
        case AKind::x2_plus_linear_x1: p.x2 = reduce(p.x2 + op.slope * p.x1); break;
        case AKind::x1_translate: p.x1 = reduce(p.x1 + Cplx<Real>(op.shift)); break;
      }
    }
    return p;
  }
  std::size_t size() const { return ops_.size(); }

 private:
  struct Op {
    AKind kind;
    const PhaseKernel<Real>* ker = nullptr;
    Real slope{0}, shift{0};
  };
  static Cplx<Real> reduce(const Cplx<Real>& z) { return {frac_part(z.re), z.im}; }

  static void step(const Op& op, Pt<Real>& p, Jac<Real>* J = nullptr) {
    Real d(0);
    switch (op.kind) {
      case AKind::x1_plus_f_x2:
      case AKind::x1_minus_f_x2: {
        Real sgn = op.kind == AKind::x1_plus_f_x2 ? Real(1) : Real(-1);
        Real v(0);
        Real y = frac_part(p.x2 * op.ker->N);
        if (J) {
          op.ker->value_and_slope(y, v, d);
          d *= op.ker->N * sgn;
          // row1 += d * row2
          J->a += d * J->c;
          J->b += d * J->d;
        } else {
          v = op.ker->value(y);
        }
        p.x1 = frac_part(p.x1 + sgn * v);
        break;
      }
      case AKind::x2_plus_f_x1:
      case AKind::x2_minus_f_x1: {
        Real sgn = op.kind == AKind::x2_plus_f_x1 ? Real(1) : Real(-1);
        Real v(0);
        Real y = frac_part(p.x1 * op.ker->N);
        if (J) {
          op.ker->value_and_slope(y, v, d);
          d *= op.ker->N * sgn;
          J->c += d * J->a;
          J->d += d * J->b;
        } else {
          v = op.ker->value(y);
        }
        p.x2 = frac_part(p.x2 + sgn * v);
        break;
      }
      case AKind::x2_plus_linear_x1:
        if (J) {
          J->c += op.slope * J->a;
          J->d += op.slope * J->b;
        }
        p.x2 = frac_part(p.x2 + frac_part(op.slope * p.x1));
        break;
      case AKind::x1_translate:
        p.x1 = frac_part(p.x1 + op.shift);
        break;
    }
  }

  std::vector<std::shared_ptr<PhaseKernel<Real>>> kernels_;
  std::vector<Op> ops_;
};

template <class Real>
Pt<Real> apply_stack(const ShearStack& s, Pt<Real> p) {
  return CompiledStack<Real>(s).apply(p);
}
template <class Real>
Pt<Real> apply_stack_inverse(const ShearStack& s, Pt<Real> p) {
  return CompiledStack<Real>(s.inverse()).apply(p);
}

template <class Real>
Real torus_distance(const Pt<Real>& a, const Pt<Real>& b) {
  using std::fabs;
  return std::max(fabs(wrap(a.x1 - b.x1)), fabs(wrap(a.x2 - b.x2)));
}

// ---------------------------------------------------------------- stage maps

struct StageFits {
  std::shared_ptr<const EntireStepApprox> psi1, psi2, psi3;
  BigInt slope;

  ShearStack h() const {
    ShearStack s;
    s.maps = {AnalyticShear::of(AKind::x1_plus_f_x2, psi1), AnalyticShear::of(AKind::x2_plus_f_x1, psi2),
              AnalyticShear::of(AKind::x1_minus_f_x2, psi3), AnalyticShear::linear(slope)};
    return s;
  }
  // h1 then h2: the part of h that survives conjugating a rotation by a multiple of 1/q_{n+1}
  ShearStack h_reduced() const {
    ShearStack s;
    s.maps = {AnalyticShear::of(AKind::x1_plus_f_x2, psi1), AnalyticShear::of(AKind::x2_plus_f_x1, psi2)};
    return s;
  }
};

// 3ε = δ = 1/(2^{l²q} l²q)
inline std::pair<BigRational, BigRational> certified_coupling(const ScheduleState& s) {
  BigInt P = s.l * s.l * s.q;
  if (P > 4096) throw std::overflow_error("coupled epsilon underflows any representation");
  BigRational delta = pow2_inverse(mpz_get_ui(P.get_mpz_t())) / BigRational(P);
  return {delta / BigRational(3), delta};
}

inline StageFits build_stage_maps(const ScheduleState& s, double epsilon, double delta, const BigInt& slope,
                                  const FitOptions& opt = {}) {
  StageFits f;
  f.psi1 = std::make_shared<const EntireStepApprox>(fit_entire_step(step_psi(1, s.l, s.q), epsilon, delta, opt));
  f.psi2 = std::make_shared<const EntireStepApprox>(fit_entire_step(step_psi(2, s.l, s.q), epsilon, delta, opt));
  f.psi3 = std::make_shared<const EntireStepApprox>(fit_entire_step(step_psi(3, s.l, s.q), epsilon, delta, opt));
  f.slope = slope;
  return f;
}

// ---------------------------------------------------------------- norms

struct StripNormEstimate {
  double rho = 0;
  double value = 0;
  std::uint64_t re_points = 0;  // per coordinate
  int im_lines = 1;
  double modulus_bound = 0;
  bool certified = false;
};

template <class Real>
std::vector<Real> grid_axis(std::uint64_t n, Real lo = Real(0), Real hi = Real(1)) {
  std::vector<Real> g;
  for (std::uint64_t i = 0; i < n; ++i) g.push_back(lo + (hi - lo) * (Real(i) + Real(0.5)) / Real(n));
  return g;
}

template <class Real>
std::vector<Real> im_lines(double rho) {
  if (rho == 0) return {Real(0)};
  return {Real(-rho), Real(0), Real(rho)};
}

// d_ρ(F, G) over a res x res grid of each Im line pair.
template <class Real>
StripNormEstimate dist_rho(const ShearStack& F, const ShearStack& G, double rho, std::uint64_t res = 512) {
  if (rho < 0) throw std::invalid_argument("rho must be non-negative");
  CompiledStack<Real> f(F), g(G);
  auto axis = grid_axis<Real>(res);
  StripNormEstimate est;
  est.rho = rho;
  est.re_points = res;
  Real worst(0);
  if (rho == 0) {
    for (const auto& a : axis)
      for (const auto& b : axis) worst = std::max(worst, torus_distance(f.apply(Pt<Real>{a, b}), g.apply(Pt<Real>{a, b})));
  } else {
    auto lines = im_lines<Real>(rho);
    est.im_lines = static_cast<int>(lines.size());
    for (const auto& i1 : lines)
      for (const auto& i2 : lines)
        for (const auto& a : axis)
          for (const auto& b : axis) {
            Pt<Cplx<Real>> z{{a, i1}, {b, i2}};
            auto u = f.apply(z), v = g.apply(z);
            Cplx<Real> d1 = u.x1 - v.x1, d2 = u.x2 - v.x2;
            d1.re = wrap(d1.re);
            d2.re = wrap(d2.re);
            worst = std::max(worst, std::max(abs_value(d1), abs_value(d2)));
          }
  }
  est.value = to_double(worst);
  return est;
}

// ‖F - id‖ for a translation is its shift; general stacks go through dist_rho.
template <class Real>
StripNormEstimate strip_norm(const ShearStack& F, double rho, std::uint64_t res = 512) {
  bool pure_translation = std::all_of(F.maps.begin(), F.maps.end(), [](const AnalyticShear& m) { return m.kind == AKind::x1_translate; });
  if (pure_translation) {
    BigRational t = 0;
    for (const auto& m : F.maps) t += m.shift;
    t = t.frac();
    if (t > BigRational(1, 2)) t = BigRational(1) - t;
    StripNormEstimate e;
    e.rho = rho;
    e.value = t.to<double>();
    e.certified = true;
    return e;
  }
  return dist_rho<Real>(F, ShearStack{}, rho, res);
}

// max entry of DF over the grid (real line and, for ρ > 0, the sampled strip lines)
template <class Real>
StripNormEstimate dh_norm(const ShearStack& F, double rho, std::uint64_t res = 512) {
  StripNormEstimate est;
  est.rho = rho;
  est.re_points = res;
  if (F.maps.empty() || std::all_of(F.maps.begin(), F.maps.end(), [](const AnalyticShear& m) { return m.kind == AKind::x1_translate; })) {
    est.value = 1;
    est.certified = true;
    return est;
  }
  CompiledStack<Real> f(F);
  auto axis = grid_axis<Real>(res);
  Real worst(0);
  for (const auto& a : axis)
    for (const auto& b : axis) {
      Jac<Real> J;
      f.apply(Pt<Real>{a, b}, J);
      worst = std::max(worst, J.max_entry());
    }
  if (rho > 0) {
    // off the real line: central differences along the real directions give the complex
    // derivative of the holomorphic extension; uncertified
    auto lines = im_lines<Real>(rho);
    est.im_lines = static_cast<int>(lines.size());
    auto coarse = grid_axis<Real>(std::max<std::uint64_t>(res / 4, 8));
    Real h(1e-7);
    for (const auto& i1 : lines)
      for (const auto& i2 : lines) {
        if (i1 == Real(0) && i2 == Real(0)) continue;
        for (const auto& a : coarse)
          for (const auto& b : coarse)
            for (int dir = 0; dir < 2; ++dir) {
              Pt<Cplx<Real>> zp{{a, i1}, {b, i2}}, zm = zp;
              (dir == 0 ? zp.x1 : zp.x2).re += h;
              (dir == 0 ? zm.x1 : zm.x2).re -= h;
              auto u = f.apply(zp), v = f.apply(zm);
              Cplx<Real> d1 = u.x1 - v.x1, d2 = u.x2 - v.x2;
              d1.re = wrap(d1.re);
              d2.re = wrap(d2.re);
              worst = std::max(worst, std::max(abs_value(d1), abs_value(d2)) / (Real(2) * h));
            }
      }
  }
  est.value = to_double(worst);
  return est;
}

// ‖h^{-1} φ^t h − I‖ with h4, h3 dropped (they conjugate such rotations to themselves),
// evaluated in phase coordinates of ψ_2 so tiny t loses no precision.
template <class Real>
double conjugated_shift_norm(const StageFits& f, const BigRational& t, std::uint64_t res = 512) {
  PhaseKernel<Real> k1(*f.psi1), k2(*f.psi2);
  Real tt = t.to<Real>();
  Real dy = (t * BigRational(f.psi2->N)).frac().to<Real>();
  auto ys = grid_axis<Real>(res);
  auto xs = grid_axis<Real>(res);
  std::vector<Real> dx2(res);
  for (std::uint64_t i = 0; i < res; ++i) dx2[i] = k2.value(ys[i]) - k2.value(frac_part(ys[i] + dy));
  Real worst(0);
  for (const auto& x2 : xs) {
    Real base = k1.at(x2);
    for (std::uint64_t i = 0; i < res; ++i) {
      Real d2 = wrap(dx2[i]);
      Real d1 = wrap(tt + base - k1.at(x2 + dx2[i]));
      using std::fabs;
      worst = std::max(worst, std::max(fabs(d1), fabs(d2)));
    }
  }
  return to_double(worst);
}

struct KSelection {
  BigInt k = 1;
  double bound = 0;
  double cauchy_norm = 0;
  double shadow_norm = 0;
  bool capped = false;
  int trials = 0;
};

// Smallest k = k0 * 2^j (k0 = n² + 1) whose one-step and q_n-step conjugated shifts are
// below 1/(2^n ‖DH_n‖).  The q_n-step variant is checked at t = i/q_{n+1} for i = 1, 2, 4, …, q_n.
template <class Real>
KSelection select_k(const ScheduleState& s, const StageFits& f, double prev_dh, const BigInt& k_cap,
                    std::uint64_t res = 512) {
  KSelection out;
  out.bound = 1.0 / (std::ldexp(1.0, static_cast<int>(s.n)) * prev_dh);
  BigInt k = BigInt(static_cast<unsigned long>(s.n) * s.n + 1);
  BigInt l2 = s.l * s.l;
  for (;;) {
    ++out.trials;
    BigInt qn1 = k * l2 * s.q;
    out.cauchy_norm = conjugated_shift_norm<Real>(f, BigRational(BigInt(1), qn1), res);
    out.shadow_norm = out.cauchy_norm;
    bool ok = out.cauchy_norm < out.bound;
    for (BigInt i = 2; ok; i *= 2) {
      BigInt ii = i > s.q ? s.q : i;
      if (ii <= 1) break;
      out.shadow_norm = std::max(out.shadow_norm, conjugated_shift_norm<Real>(f, BigRational(ii, qn1), res));
      ok = out.shadow_norm < out.bound;
      if (ii == s.q) break;
    }
    if (ok) break;
    if (k * 2 > k_cap) {
      out.capped = true;
      break;
    }
    k *= 2;
  }
  out.k = k;
  return out;
}

// smallest even integer strictly above 2^n * norm
inline BigInt select_l(unsigned n, double prev_dh0) {
  double v = std::ldexp(prev_dh0, static_cast<int>(n));
  BigInt l(std::floor(v));
  l += 1;
  if (l % 2 != 0) l += 1;
  return l;
}

// ---------------------------------------------------------------- precision

enum class Precision { dbl, ldbl, quad };

inline const char* to_string(Precision p) {
  switch (p) {
    case Precision::dbl: return "double";
    case Precision::ldbl: return "long double";
    case Precision::quad: return "float128";
  }
  return "?";
}
inline int mantissa_bits(Precision p) { return p == Precision::dbl ? 53 : p == Precision::ldbl ? 64 : 113; }

// Enough bits to keep ~40 after multiplying by the largest slope or period count.
inline Precision auto_precision(const BigInt& scale) {
  long bits = static_cast<long>(mpz_sizeinbase(scale.get_mpz_t(), 2)) + 40;
  if (bits <= 53) return Precision::dbl;
  if (bits <= 64) return Precision::ldbl;
  return Precision::quad;
}

inline Precision precision_from_digits(long digits) {
  if (digits <= 0) throw std::invalid_argument("precision digits must be positive");
  if (digits <= 15) return Precision::dbl;
  if (digits <= 18) return Precision::ldbl;
  if (digits <= 33) return Precision::quad;
  throw std::invalid_argument("precision of " + std::to_string(digits) + " digits not supported (max 33)");
}

// AKC_PRECISION_DIGITS, when set, fixes the working type; otherwise the scale decides.
inline Precision working_precision(const BigInt& scale) {
  if (const char* env = std::getenv("AKC_PRECISION_DIGITS")) {
    char* end = nullptr;
    long d = std::strtol(env, &end, 10);
    if (!end || *end != '\0') throw std::invalid_argument("AKC_PRECISION_DIGITS must be an integer");
    return precision_from_digits(d);
  }
  return auto_precision(scale);
}

template <class Fn>
auto with_precision(Precision p, Fn&& fn) {
  switch (p) {
    case Precision::dbl: return fn(double{});
    case Precision::ldbl: return fn((long double){});
    default: return fn(quad{});
  }
}

}  // namespace akc

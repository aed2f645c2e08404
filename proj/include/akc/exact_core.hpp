#pragma once

#include "akc/rational.hpp"

#include <algorithm>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace akc {

// ---------------------------------------------------------------- points

struct TorusPoint {
  BigRational x1, x2;

  TorusPoint() = default;
  TorusPoint(const BigRational& a, const BigRational& b) : x1(a.frac()), x2(b.frac()) {}

  // "a/b,c/d"
  static TorusPoint parse(std::string_view s) {
    auto comma = s.find(',');
    if (comma == std::string_view::npos) throw std::invalid_argument("point needs two coordinates: '" + std::string(s) + "'");
    return {BigRational::parse(s.substr(0, comma)), BigRational::parse(s.substr(comma + 1))};
  }
  friend bool operator==(const TorusPoint& a, const TorusPoint& b) { return a.x1 == b.x1 && a.x2 == b.x2; }
  friend bool operator!=(const TorusPoint& a, const TorusPoint& b) { return !(a == b); }
};

inline TorusPoint rotation(const BigRational& alpha, const TorusPoint& pt) {
  return {pt.x1 + alpha, pt.x2};
}

// ---------------------------------------------------------------- step functions

// One period of a periodic step function, in phase units: piece j occupies
// [breaks[j], breaks[j+1]) of [0,1) (breaks[0] == 0), repeated N times on [0,1).
struct PeriodicForm {
  BigInt N;
  std::vector<BigRational> breaks;
  std::vector<BigRational> values;
};

// Right-continuous piecewise constant function on [0,1).  Two storage modes:
// explicit breakpoint lists, or a uniform grid of `pieces` equal pieces whose
// values cycle through `pattern` (needed when the piece count is astronomical).
class StepFunction {
 public:
  StepFunction(std::vector<BigRational> breakpoints, std::vector<BigRational> values,
               BigRational period = BigRational(1))
      : breaks_(std::move(breakpoints)), values_(std::move(values)), period_(std::move(period)) {
    if (breaks_.empty() || breaks_.size() != values_.size())
      throw std::invalid_argument("step function needs equally many breakpoints and values");
    if (breaks_.front() != BigRational(0)) throw std::invalid_argument("first breakpoint must be 0");
    for (std::size_t i = 0; i < breaks_.size(); ++i) {
      if (breaks_[i] < BigRational(0) || breaks_[i] >= BigRational(1))
        throw std::invalid_argument("breakpoint outside [0,1)");
      if (i && breaks_[i] <= breaks_[i - 1]) throw std::invalid_argument("breakpoints must increase strictly");
    }
    check_period();
  }

  static StepFunction uniform(const BigInt& pieces, std::vector<BigRational> pattern,
                              BigRational period = BigRational(1)) {
    if (pieces < 1 || pattern.empty()) throw std::invalid_argument("uniform step function needs pieces and a pattern");
    StepFunction f;
    f.uniform_ = true;
    f.pieces_ = pieces;
    f.values_ = std::move(pattern);
    f.period_ = std::move(period);
    f.check_period();
    return f;
  }

  bool is_uniform() const { return uniform_; }
  BigInt size() const { return uniform_ ? pieces_ : BigInt(static_cast<unsigned long>(breaks_.size())); }
  const BigRational& period() const { return period_; }

  BigRational breakpoint(const BigInt& i) const {
    if (uniform_) return BigRational(i, pieces_);
    return breaks_.at(index(i));
  }
  BigRational piece_end(const BigInt& i) const {
    if (uniform_) return BigRational(i + 1, pieces_);
    std::size_t j = index(i);
    return j + 1 < breaks_.size() ? breaks_[j + 1] : BigRational(1);
  }
  const BigRational& value(const BigInt& i) const {
    if (uniform_) {
      BigInt r = i % static_cast<unsigned long>(values_.size());
      return values_[mpz_get_ui(r.get_mpz_t())];
    }
    return values_.at(index(i));
  }

  BigInt piece_index(const BigRational& x) const {
    BigRational y = x.frac();
    if (uniform_) return (y * BigRational(pieces_)).floor();
    auto it = std::upper_bound(breaks_.begin(), breaks_.end(), y);
    return BigInt(static_cast<unsigned long>(it - breaks_.begin() - 1));
  }
  const BigRational& operator()(const BigRational& x) const { return value(piece_index(x)); }

  // Materialized lists; refuses astronomically large uniform functions.
  std::vector<BigRational> breakpoints() const {
    if (!uniform_) return breaks_;
    std::vector<BigRational> out;
    std::uint64_t n = small_size();
    for (std::uint64_t i = 0; i < n; ++i) out.emplace_back(BigInt(static_cast<unsigned long>(i)), pieces_);
    return out;
  }
  std::vector<BigRational> values() const {
    if (!uniform_) return values_;
    std::vector<BigRational> out;
    std::uint64_t n = small_size();
    for (std::uint64_t i = 0; i < n; ++i) out.push_back(values_[i % values_.size()]);
    return out;
  }
  const std::vector<BigRational>& pattern() const { return values_; }

  bool shift_invariant(const BigRational& t) const {
    BigRational s = t.frac();
    if (s == BigRational(0)) return true;
    if (uniform_) {
      BigRational steps = s * BigRational(pieces_);
      if (!steps.is_integer()) return false;
      BigInt r = steps.num() % static_cast<unsigned long>(values_.size());
      std::size_t off = mpz_get_ui(r.get_mpz_t()), k = values_.size();
      for (std::size_t i = 0; i < k; ++i)
        if (values_[(i + off) % k] != values_[i]) return false;
      return true;
    }
    for (std::size_t i = 0; i < breaks_.size(); ++i) {
      BigRational moved = (breaks_[i] + s).frac();
      auto it = std::lower_bound(breaks_.begin(), breaks_.end(), moved);
      if (it == breaks_.end() || *it != moved) return false;
      if (values_[static_cast<std::size_t>(it - breaks_.begin())] != values_[i]) return false;
    }
    return true;
  }

  // Copy with one piece value replaced; the result is stored explicitly and
  // declares period 1 since the perturbation generally breaks periodicity.
  StepFunction with_value(const BigInt& piece, const BigRational& v) const {
    auto b = breakpoints();
    auto vals = values();
    vals.at(index(piece, vals.size())) = v;
    return StepFunction(std::move(b), std::move(vals));
  }

  PeriodicForm periodic_form() const {
    PeriodicForm pf;
    if (uniform_) {
      std::size_t k = values_.size();
      if (pieces_ % static_cast<unsigned long>(k) != 0) {
        // pattern does not tile [0,1): fall back to an explicit single period
        pf.N = 1;
        std::uint64_t n = small_size();
        for (std::uint64_t i = 0; i < n; ++i) {
          pf.breaks.emplace_back(BigInt(static_cast<unsigned long>(i)), pieces_);
          pf.values.push_back(values_[i % k]);
        }
        return compress(std::move(pf));
      }
      std::size_t d = k;
      for (std::size_t c = 1; c < k; ++c) {
        if (k % c) continue;
        bool ok = true;
        for (std::size_t i = 0; i < k && ok; ++i) ok = values_[i] == values_[i % c];
        if (ok) { d = c; break; }
      }
      pf.N = pieces_ / static_cast<unsigned long>(d);
      for (std::size_t j = 0; j < d; ++j) {
        pf.breaks.emplace_back(static_cast<long>(j), static_cast<long>(d));
        pf.values.push_back(values_[j]);
      }
      return pf;
    }
    BigRational inv = BigRational(1) / period_;
    pf.N = inv.num();
    for (std::size_t i = 0; i < breaks_.size() && breaks_[i] < period_; ++i) {
      pf.breaks.push_back(breaks_[i] * inv);
      pf.values.push_back(values_[i]);
    }
    return compress(std::move(pf));
  }

  friend bool operator==(const StepFunction& a, const StepFunction& b) {
    if (a.uniform_ && b.uniform_)
      return a.pieces_ == b.pieces_ && a.values_ == b.values_ && a.period_ == b.period_;
    return a.period_ == b.period_ && a.breakpoints() == b.breakpoints() && a.values() == b.values();
  }

 private:
  StepFunction() = default;

  static constexpr std::uint64_t kMaterializeLimit = 1u << 22;

  std::uint64_t small_size() const {
    if (pieces_ > static_cast<unsigned long>(kMaterializeLimit))
      throw std::length_error("step function too large to materialize (" + pieces_.get_str() + " pieces)");
    return mpz_get_ui(pieces_.get_mpz_t());
  }
  std::size_t index(const BigInt& i, std::size_t n = 0) const {
    if (!n) n = breaks_.size();
    if (i < 0 || i >= static_cast<unsigned long>(n)) throw std::out_of_range("piece index out of range");
    return mpz_get_ui(i.get_mpz_t());
  }
  void check_period() const {
    if (period_ <= BigRational(0) || period_ > BigRational(1)) throw std::invalid_argument("period must lie in (0,1]");
    if (!(BigRational(1) / period_).is_integer()) throw std::invalid_argument("period must divide 1");
    if (!shift_invariant(period_)) throw std::invalid_argument("data not invariant under its declared period");
  }
  // merge adjacent equal pieces
  static PeriodicForm compress(PeriodicForm pf) {
    PeriodicForm out;
    out.N = pf.N;
    for (std::size_t i = 0; i < pf.values.size(); ++i) {
      if (i && pf.values[i] == out.values.back()) continue;
      out.breaks.push_back(pf.breaks[i]);
      out.values.push_back(pf.values[i]);
    }
    return out;
  }

  bool uniform_ = false;
  BigInt pieces_;
  std::vector<BigRational> breaks_;
  std::vector<BigRational> values_;
  BigRational period_{1};
};

// which ∈ {1,2,3}; l ≥ 2, q ≥ 1.
inline StepFunction step_psi(int which, const BigInt& l, const BigInt& q) {
  if (l < 2) throw std::invalid_argument("step_psi: l must be at least 2");
  if (q < 1) throw std::invalid_argument("step_psi: q must be at least 1");
  if (l > 1000000) throw std::invalid_argument("step_psi: l too large");
  std::size_t L = mpz_get_ui(l.get_mpz_t());
  BigInt l2q = l * l * q;
  std::vector<BigRational> pattern;
  switch (which) {
    case 1:
      pattern.emplace_back(0);
      for (std::size_t i = 1; i < L; ++i) pattern.emplace_back(l - static_cast<unsigned long>(i), l2q);
      return StepFunction::uniform(l, std::move(pattern));
    case 2:
      for (std::size_t i = 0; i < L; ++i) pattern.emplace_back(BigInt(static_cast<unsigned long>(i)), l);
      return StepFunction::uniform(l2q, std::move(pattern), BigRational(BigInt(1), q));
    case 3:
      for (std::size_t i = 0; i < L; ++i) pattern.emplace_back(BigInt(static_cast<unsigned long>(i)), l2q);
      return StepFunction::uniform(l, std::move(pattern));
    default:
      throw std::invalid_argument("step_psi: which must be 1, 2 or 3");
  }
}

// ---------------------------------------------------------------- regions

// {(x1, y + slope*x1 mod 1) : a ≤ x1 < b, c ≤ y < d}, with 0 ≤ a < b ≤ 1 and
// 0 ≤ c < d ≤ 1.  slope == 0 is an axis-aligned rectangle.
struct Cell {
  BigRational a, b, c, d;
  BigInt slope = 0;

  BigRational measure() const { return (b - a) * (d - c); }
  bool is_rect() const { return slope == 0; }
  friend bool operator==(const Cell& u, const Cell& v) {
    return u.a == v.a && u.b == v.b && u.c == v.c && u.d == v.d && u.slope == v.slope;
  }
};

// [lo, hi) + v reduced mod 1, as one or two intervals inside [0,1].
inline std::vector<std::pair<BigRational, BigRational>> shift_interval(const BigRational& lo, const BigRational& hi,
                                                                       const BigRational& v) {
  BigRational width = hi - lo;
  BigRational s = (lo + v).frac();
  BigRational e = s + width;
  if (e <= BigRational(1)) return {{s, e}};
  return {{s, BigRational(1)}, {BigRational(0), e - BigRational(1)}};
}

// Two cells of equal slope overlap in positive measure?
inline bool cells_overlap(const Cell& u, const Cell& v) {
  if (u.slope != v.slope) throw std::invalid_argument("cells_overlap: slopes differ");
  return std::max(u.a, v.a) < std::min(u.b, v.b) && std::max(u.c, v.c) < std::min(u.d, v.d);
}

// ---------------------------------------------------------------- shears

enum class ShearKind { x1_plus_step_x2, x1_minus_step_x2, x2_plus_step_x1, x2_minus_step_x1, x2_plus_linear_x1, x1_translate };

inline const char* to_string(ShearKind k) {
  switch (k) {
    case ShearKind::x1_plus_step_x2: return "x1-plus-step-of-x2";
    case ShearKind::x1_minus_step_x2: return "x1-minus-step-of-x2";
    case ShearKind::x2_plus_step_x1: return "x2-plus-step-of-x1";
    case ShearKind::x2_minus_step_x1: return "x2-minus-step-of-x1";
    case ShearKind::x2_plus_linear_x1: return "x2-plus-linear-in-x1";
    case ShearKind::x1_translate: return "x1-translate";
  }
  return "?";
}

struct PiecewiseShear {
  ShearKind kind = ShearKind::x1_translate;
  std::shared_ptr<const StepFunction> step;
  BigInt slope = 0;
  BigRational shift;

  static PiecewiseShear of_step(ShearKind k, StepFunction f) {
    return {k, std::make_shared<const StepFunction>(std::move(f)), 0, {}};
  }
  static PiecewiseShear linear(const BigInt& s) { return {ShearKind::x2_plus_linear_x1, nullptr, s, {}}; }
  static PiecewiseShear translate(const BigRational& t) { return {ShearKind::x1_translate, nullptr, 0, t}; }

  PiecewiseShear inverse() const {
    PiecewiseShear r = *this;
    switch (kind) {
      case ShearKind::x1_plus_step_x2: r.kind = ShearKind::x1_minus_step_x2; break;
      case ShearKind::x1_minus_step_x2: r.kind = ShearKind::x1_plus_step_x2; break;
      case ShearKind::x2_plus_step_x1: r.kind = ShearKind::x2_minus_step_x1; break;
      case ShearKind::x2_minus_step_x1: r.kind = ShearKind::x2_plus_step_x1; break;
      case ShearKind::x2_plus_linear_x1: r.slope = -slope; break;
      case ShearKind::x1_translate: r.shift = -shift; break;
    }
    return r;
  }

  TorusPoint apply(const TorusPoint& p) const {
    switch (kind) {
      case ShearKind::x1_plus_step_x2: return {p.x1 + (*step)(p.x2), p.x2};
      case ShearKind::x1_minus_step_x2: return {p.x1 - (*step)(p.x2), p.x2};
      case ShearKind::x2_plus_step_x1: return {p.x1, p.x2 + (*step)(p.x1)};
      case ShearKind::x2_minus_step_x1: return {p.x1, p.x2 - (*step)(p.x1)};
      case ShearKind::x2_plus_linear_x1: return {p.x1, p.x2 + BigRational(slope) * p.x1};
      case ShearKind::x1_translate: return {p.x1 + shift, p.x2};
    }
    return p;
  }

  // Is x on a breakpoint line of this map (where right-continuity decides)?
  bool on_breakpoint(const TorusPoint& p) const {
    if (!step) return false;
    const BigRational& x = (kind == ShearKind::x1_plus_step_x2 || kind == ShearKind::x1_minus_step_x2) ? p.x2 : p.x1;
    return step->breakpoint(step->piece_index(x)) == x.frac();
  }

  // Exact image of a cell as a list of cells.  Step kinds need rectangles.
  std::vector<Cell> image(const Cell& r) const {
    std::vector<Cell> out;
    switch (kind) {
      case ShearKind::x2_plus_linear_x1: {
        Cell c = r;
        c.slope += slope;
        out.push_back(c);
        return out;
      }
      case ShearKind::x1_translate: {
        // y = x2 - s*x1 changes by -s*shift
        for (auto [a, b] : shift_interval(r.a, r.b, shift))
          for (auto [c, d] : shift_interval(r.c, r.d, -BigRational(r.slope) * shift)) out.push_back({a, b, c, d, r.slope});
        return out;
      }
      default: break;
    }
    if (!r.is_rect()) throw std::invalid_argument("step shear image needs an axis-aligned rectangle");
    bool along_x2 = kind == ShearKind::x1_plus_step_x2 || kind == ShearKind::x1_minus_step_x2;
    bool minus = kind == ShearKind::x1_minus_step_x2 || kind == ShearKind::x2_minus_step_x1;
    const BigRational& lo = along_x2 ? r.c : r.a;
    const BigRational& hi = along_x2 ? r.d : r.b;
    BigInt first = step->piece_index(lo);
    BigInt last = step->size() - 1;
    if (hi < BigRational(1)) {
      last = step->piece_index(hi);
      if (step->breakpoint(last) == hi) last -= 1;
    }
    if (last - first > 1000000) throw std::length_error("rectangle spans too many step pieces");
    for (BigInt i = first; i <= last; ++i) {
      BigRational s = std::max(lo, step->breakpoint(i));
      BigRational e = std::min(hi, step->piece_end(i));
      if (s >= e) continue;
      BigRational v = minus ? -step->value(i) : step->value(i);
      if (along_x2) {
        for (auto [a, b] : shift_interval(r.a, r.b, v)) out.push_back({a, b, s, e, 0});
      } else {
        for (auto [c, d] : shift_interval(r.c, r.d, v)) out.push_back({s, e, c, d, 0});
      }
    }
    return out;
  }
};

inline TorusPoint apply_shear(const PiecewiseShear& m, const TorusPoint& p) { return m.apply(p); }
inline TorusPoint apply_shear_inverse(const PiecewiseShear& m, const TorusPoint& p) { return m.inverse().apply(p); }

// ---------------------------------------------------------------- partitions

enum class PartitionKind { T, G, C };

struct Partition {
  PartitionKind kind = PartitionKind::T;
  BigInt l = 1, q = 1;

  static Partition T(const BigInt& q) { return {PartitionKind::T, 1, check(q)}; }
  static Partition G(const BigInt& l, const BigInt& q) { return {PartitionKind::G, check(l), check(q)}; }
  static Partition C(const BigInt& q) { return {PartitionKind::C, 1, check(q)}; }

  BigInt atom_count() const { return kind == PartitionKind::G ? l * l * q : q; }
  BigRational atom_measure() const { return BigRational(BigInt(1), atom_count()); }

  // G atoms are indexed by (i1, i2) with x1 ∈ [i1/(lq), (i1+1)/(lq)) and
  // x2 ∈ [i2/l, (i2+1)/l); the linear index is i1*l + i2.
  BigInt atom_of(const TorusPoint& p) const {
    switch (kind) {
      case PartitionKind::T:
      case PartitionKind::C: return (p.x1 * BigRational(q)).floor();
      case PartitionKind::G: {
        BigInt i1 = (p.x1 * BigRational(l * q)).floor();
        BigInt i2 = (p.x2 * BigRational(l)).floor();
        return i1 * l + i2;
      }
    }
    return 0;
  }
  // Circle arcs take the x coordinate only.
  BigInt arc_of(const BigRational& x) const { return (x.frac() * BigRational(q)).floor(); }

  std::pair<BigInt, BigInt> g_index(const BigInt& linear) const { return {linear / l, linear % l}; }

  Cell atom(const BigInt& idx) const {
    switch (kind) {
      case PartitionKind::T:
      case PartitionKind::C: return {BigRational(idx, q), BigRational(idx + 1, q), 0, 1, 0};
      case PartitionKind::G: {
        auto [i1, i2] = g_index(idx);
        return {BigRational(i1, l * q), BigRational(i1 + 1, l * q), BigRational(i2, l), BigRational(i2 + 1, l), 0};
      }
    }
    return {};
  }

 private:
  static BigInt check(const BigInt& v) {
    if (v < 1) throw std::invalid_argument("partition parameters must be positive");
    return v;
  }
};

inline BigInt atom_of(const Partition& part, const TorusPoint& p) { return part.atom_of(p); }

// ---------------------------------------------------------------- schedule

struct ScheduleState {
  unsigned n = 0;
  BigInt l = 2;
  BigInt k = 1;
  BigInt q = 1;
  BigInt p = 0;

  BigRational alpha() const { return BigRational(p, q); }

  static ScheduleState seed(const BigInt& q0 = 1, const BigInt& p0 = 0) {
    ScheduleState s;
    s.q = q0;
    s.p = p0;
    if (q0 < 1 || p0 < 0 || p0 >= q0) throw std::invalid_argument("seed needs 0 <= p < q");
    return s;
  }
  friend bool operator==(const ScheduleState& a, const ScheduleState& b) {
    return a.n == b.n && a.l == b.l && a.k == b.k && a.q == b.q && a.p == b.p;
  }
};

// q' = k l² q, p' = k l² p + 1.  The chosen k, l are carried into the new state.
inline ScheduleState advance_schedule(const ScheduleState& s, const BigInt& k, const BigInt& l) {
  if (k < 1) throw std::invalid_argument("advance_schedule: k must be positive");
  if (l < 2) throw std::invalid_argument("advance_schedule: l must be at least 2");
  ScheduleState r;
  r.n = s.n + 1;
  r.l = l;
  r.k = k;
  r.q = k * l * l * s.q;
  r.p = k * l * l * s.p + 1;
  if (r.p >= r.q) throw std::logic_error("advance_schedule: p' >= q'");
  return r;
}

}  // namespace akc

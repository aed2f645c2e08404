#pragma once

#include "akc/exact_core.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace akc {

// ---------------------------------------------------------------- stage map

enum class SlopeChoice { next_q, current_q };

inline BigInt h4_slope(const ScheduleState& s, SlopeChoice c = SlopeChoice::next_q) {
  return c == SlopeChoice::next_q ? s.k * s.l * s.l * s.q : s.q;
}

struct DiscontinuousStageMap {
  ScheduleState stage;
  std::vector<PiecewiseShear> shears;  // h1, h2, h3, h4 in application order

  TorusPoint apply(TorusPoint p) const {
    for (const auto& s : shears) p = s.apply(p);
    return p;
  }
  TorusPoint apply_inverse(TorusPoint p) const {
    for (auto it = shears.rbegin(); it != shears.rend(); ++it) p = it->inverse().apply(p);
    return p;
  }
  bool on_breakpoint(TorusPoint p) const {
    for (const auto& s : shears) {
      if (s.on_breakpoint(p)) return true;
      p = s.apply(p);
    }
    return false;
  }
  // Image of a rectangle through the step shears only (h4 keeps every T column fixed).
  std::vector<Cell> step_image(const Cell& r) const {
    std::vector<Cell> cur{r};
    for (const auto& s : shears) {
      if (s.kind == ShearKind::x2_plus_linear_x1) continue;
      std::vector<Cell> next;
      for (const auto& c : cur)
        for (auto& d : s.image(c)) next.push_back(std::move(d));
      cur = std::move(next);
    }
    return cur;
  }
  std::vector<Cell> step_preimage(const Cell& r) const {
    std::vector<Cell> cur{r};
    for (auto it = shears.rbegin(); it != shears.rend(); ++it) {
      if (it->kind == ShearKind::x2_plus_linear_x1) continue;
      std::vector<Cell> next;
      for (const auto& c : cur)
        for (auto& d : it->inverse().image(c)) next.push_back(std::move(d));
      cur = std::move(next);
    }
    return cur;
  }
};

inline DiscontinuousStageMap build_htilde(const ScheduleState& s, SlopeChoice slope = SlopeChoice::next_q) {
  DiscontinuousStageMap m;
  m.stage = s;
  m.shears.push_back(PiecewiseShear::of_step(ShearKind::x1_plus_step_x2, step_psi(1, s.l, s.q)));
  m.shears.push_back(PiecewiseShear::of_step(ShearKind::x2_plus_step_x1, step_psi(2, s.l, s.q)));
  m.shears.push_back(PiecewiseShear::of_step(ShearKind::x1_minus_step_x2, step_psi(3, s.l, s.q)));
  m.shears.push_back(PiecewiseShear::linear(h4_slope(s, slope)));
  return m;
}

// Same map with ψ̃_2 replaced (used to exercise the checker).
inline DiscontinuousStageMap with_psi2(DiscontinuousStageMap m, StepFunction psi2) {
  m.shears.at(1) = PiecewiseShear::of_step(ShearKind::x2_plus_step_x1, std::move(psi2));
  return m;
}

// ---------------------------------------------------------------- rearrangement

struct RearrangementResult {
  bool ok = false;
  BigInt pieces = 0;                 // total image pieces over all G atoms
  std::vector<BigInt> column_of;     // G linear index -> receiving T_{l²q} column
  std::vector<unsigned> received;    // pieces received by each column
  std::string witness;               // first failure, human readable
};

inline RearrangementResult verify_rearrangement(const DiscontinuousStageMap& m) {
  RearrangementResult res;
  const ScheduleState& s = m.stage;
  Partition G = Partition::G(s.l, s.q);
  Partition T = Partition::T(s.l * s.l * s.q);
  std::uint64_t nG = to_u64(G.atom_count()), nT = to_u64(T.atom_count());
  if (nG > 2000000) throw std::length_error("verify_rearrangement: too many atoms");
  std::uint64_t L = to_u64(s.l);
  res.column_of.assign(nG, -1);
  res.received.assign(nT, 0);
  std::vector<std::vector<Cell>> by_column(nT);
  auto fail = [&](std::string why) {
    if (res.witness.empty()) res.witness = std::move(why);
    res.ok = false;
  };
  for (std::uint64_t g = 0; g < nG; ++g) {
    auto [i1, i2] = G.g_index(BigInt(static_cast<unsigned long>(g)));
    auto img = m.step_image(G.atom(BigInt(static_cast<unsigned long>(g))));
    BigInt col = -1;
    for (const auto& c : img) {
      BigInt lo = T.atom_of({c.a, 0});
      if (!(c.b <= BigRational(lo + 1, T.q))) {
        fail("G atom (" + i1.get_str() + "," + i2.get_str() + ") image crosses T column boundary at column " + lo.get_str());
        break;
      }
      if (col == -1) col = lo;
      if (col != lo) {
        fail("G atom (" + i1.get_str() + "," + i2.get_str() + ") image spans T columns " + col.get_str() + " and " + lo.get_str());
        break;
      }
      res.pieces += 1;
      by_column[mpz_get_ui(lo.get_mpz_t())].push_back(c);
      res.received[mpz_get_ui(lo.get_mpz_t())] += 1;
    }
    res.column_of[g] = col;
  }
  if (!res.witness.empty()) return res;
  for (std::uint64_t t = 0; t < nT; ++t) {
    const auto& cells = by_column[t];
    BigRational total = 0;
    for (const auto& c : cells) total += c.measure();
    for (std::size_t i = 0; i < cells.size() && res.witness.empty(); ++i)
      for (std::size_t j = i + 1; j < cells.size(); ++j)
        if (cells_overlap(cells[i], cells[j])) {
          fail("T column " + std::to_string(t) + " receives overlapping pieces");
          break;
        }
    if (total != T.atom_measure()) fail("T column " + std::to_string(t) + " covered with measure " + total.str());
    if (res.received[t] != L)
      fail("T column " + std::to_string(t) + " receives " + std::to_string(res.received[t]) + " pieces, expected " + std::to_string(L));
    if (!res.witness.empty()) return res;
  }
  if (res.pieces != s.l * BigInt(static_cast<unsigned long>(nT))) fail("piece count " + res.pieces.get_str());
  res.ok = res.witness.empty();
  return res;
}

inline RearrangementResult verify_rearrangement(const ScheduleState& s) { return verify_rearrangement(build_htilde(s)); }

// ---------------------------------------------------------------- error set

// c1*t + c2*t^2 with t = 2^{-E}; exact when E is small enough to expand.
struct SymbolicMeasure {
  BigInt E;
  BigRational c1, c2;

  static constexpr unsigned long kExpandLimit = 1ul << 16;

  bool expandable() const { return E <= kExpandLimit; }
  BigRational exact() const {
    if (!expandable()) throw std::overflow_error("measure exponent too large to expand: 2^" + E.get_str());
    BigRational t = pow2_inverse(mpz_get_ui(E.get_mpz_t()));
    return c1 * t + c2 * t * t;
  }
  // sign of (this - c*t) over the single value t = 2^{-E}
  int compare_linear(const BigRational& c) const {
    BigRational a1 = c1 - c;
    if (expandable()) return (a1 * pow2_inverse(mpz_get_ui(E.get_mpz_t())) + c2 * pow2_inverse(2 * mpz_get_ui(E.get_mpz_t()))).sign();
    // a1 + c2*t with t < 2^{-65536}: the linear coefficient decides unless it is 0 or tiny
    if (a1.sign() == 0) return c2.sign();
    BigRational ratio = c2 / a1;
    BigInt r = abs(ratio.num()) / ratio.den();
    if (mpz_sizeinbase(r.get_mpz_t(), 2) + 2 < kExpandLimit) return a1.sign();
    throw std::overflow_error("measure comparison undecidable symbolically");
  }
  std::string str() const { return "(" + c1.str() + ")*2^-" + E.get_str() + " + (" + c2.str() + ")*2^-" + BigInt(2 * E).get_str(); }
};

struct ErrorSet {
  ScheduleState stage;
  BigInt slope;
  BigInt exponent;  // l²q
  SymbolicMeasure vertical, diagonal, total;

  BigInt vertical_count() const { return stage.l * stage.l * stage.q; }
  BigInt diagonal_count() const { return stage.l; }
  bool exact_half_width() const { return exponent <= 4096; }
  BigRational half_width() const {
    if (!exact_half_width()) throw std::overflow_error("half-width below exact representation limit");
    return pow2_inverse(mpz_get_ui(exponent.get_mpz_t())) / BigRational(exponent);
  }
  // (2/2^E)(1 + 1/(lq))
  BigRational union_bound_coefficient() const { return BigRational(2) * (BigRational(1) + BigRational(BigInt(1), stage.l * stage.q)); }
  bool within_union_bound() const { return total.compare_linear(union_bound_coefficient()) <= 0; }
  bool within_stated_bound() const { return total.compare_linear(BigRational(2)) <= 0; }
  bool vertical_exact() const { return vertical.c1 == BigRational(2) && vertical.c2 == BigRational(0); }

  static bool near(const BigRational& y, const BigRational& spacing, const BigRational& w) {
    // distance from y to the lattice spacing*Z, compared with w (closed at the centre, half-open strips)
    BigRational r = (y / spacing).frac() * spacing;  // in [0, spacing)
    return r < w || spacing - r <= w;
  }
  bool in_vertical(const TorusPoint& p) const {
    return near(p.x1, BigRational(BigInt(1), exponent), half_width());
  }
  bool in_diagonal(const TorusPoint& p) const {
    BigRational y = (p.x2 - BigRational(slope) * p.x1).frac();
    return near(y, BigRational(BigInt(1), stage.l), half_width());
  }
  bool contains(const TorusPoint& p) const { return in_vertical(p) || in_diagonal(p); }

  // A point on the line x2 = c outside the diagonal part: the line never lies inside it.
  TorusPoint line_escape_witness(const BigRational& c) const {
    if (slope == 0) throw std::logic_error("zero slope: horizontal bands contain whole lines");
    BigRational target = (c - BigRational(BigInt(1), 2 * stage.l)).frac();
    BigRational x1 = target / BigRational(abs(slope));
    if (slope < 0) x1 = BigRational(0) - x1;
    return {x1, c};
  }
};

inline ErrorSet build_error_set(const ScheduleState& s, SlopeChoice slope = SlopeChoice::next_q) {
  ErrorSet e;
  e.stage = s;
  e.slope = h4_slope(s, slope);
  e.exponent = s.l * s.l * s.q;
  BigRational lq(s.l * s.q);
  // vertical: l²q strips of width 2/(2^E l²q); diagonal: l strips of the same width
  e.vertical = {e.exponent, BigRational(2), BigRational(0)};
  e.diagonal = {e.exponent, BigRational(2) / lq, BigRational(0)};
  // every x1-fibre of the diagonal part has the same length, so the overlap is the product
  e.total = {e.exponent, e.vertical.c1 + e.diagonal.c1, -(e.vertical.c1 * e.diagonal.c1)};
  return e;
}

// ---------------------------------------------------------------- conjugacy

struct ConjugacyReport {
  ScheduleState stage;
  bool permutation_verified = false;
  bool arc_permutation_verified = false;
  bool inclusion_verified = false;
  bool error_invariance_verified = false;
  bool sampled = false;
  BigRational diameter_bound;
  std::string first_failure;
  bool ok() const {
    return permutation_verified && arc_permutation_verified && inclusion_verified && error_invariance_verified;
  }
};

// Indices of up to `cap` atoms out of `count`, evenly spread and deterministic.
inline std::vector<BigInt> spread_indices(const BigInt& count, std::uint64_t cap, bool& sampled) {
  std::vector<BigInt> out;
  sampled = count > static_cast<unsigned long>(cap);
  if (!sampled) {
    for (std::uint64_t i = 0; i < to_u64(count); ++i) out.emplace_back(static_cast<unsigned long>(i));
    return out;
  }
  for (std::uint64_t i = 0; i < cap; ++i) out.push_back(count * static_cast<unsigned long>(i) / static_cast<unsigned long>(cap));
  out.push_back(count - 1);
  return out;
}

// Rotation by p/q on T_q: atom i goes to atom (i+p) mod q.  Returns the first bad index.
inline std::optional<BigInt> rotation_permutation_mismatch(const BigInt& q, const BigInt& p, std::uint64_t cap, bool& sampled) {
  Partition T = Partition::T(q);
  PiecewiseShear rot = PiecewiseShear::translate(BigRational(p, q));
  for (const auto& i : spread_indices(q, cap, sampled)) {
    auto img = rot.image(T.atom(i));
    BigInt want = (i + p) % q;
    if (img.size() != 1 || !(img[0] == T.atom(want))) return i;
  }
  return std::nullopt;
}

// stages: the constructed stages 0..n (stages[m].k, .l are the choices made at stage m).
inline ConjugacyReport finite_conjugacy_check(const ScheduleState& prev, const ScheduleState& cur,
                                              const std::vector<ScheduleState>& held = {}, std::uint64_t cap = 4096) {
  ConjugacyReport r;
  r.stage = prev;
  auto fail = [&](const std::string& why) {
    if (r.first_failure.empty()) r.first_failure = why;
  };
  if (cur.q != prev.k * prev.l * prev.l * prev.q || cur.p != prev.k * prev.l * prev.l * prev.p + 1)
    fail("schedule recurrence broken between stages " + std::to_string(prev.n) + " and " + std::to_string(cur.n));
  if (prev.l < 2) {
    fail("stage " + std::to_string(prev.n) + ": l = " + prev.l.get_str() + " is degenerate");
    return r;
  }
  bool s1 = false, s2 = false, s3 = false;
  // (a) rotation permutes T_q and C_q by i -> i+p
  auto bad = rotation_permutation_mismatch(prev.q, prev.p, cap, s1);
  r.permutation_verified = !bad;
  if (bad) fail("rotation does not send T atom " + bad->get_str() + " to atom i+p");
  r.arc_permutation_verified = true;
  {
    Partition C = Partition::C(prev.q);
    for (const auto& i : spread_indices(prev.q, cap, s2)) {
      BigRational mid = BigRational(2 * i + 1, 2 * prev.q) + prev.alpha();
      if (C.arc_of(mid) != (i + prev.p) % prev.q) {
        r.arc_permutation_verified = false;
        fail("circle arc " + i.get_str() + " not sent to i+p");
        break;
      }
    }
  }
  // (b) h̃^{-1} of each fine column lies in one G atom inside column floor(i'/l²) of T_q,
  // and each T_{q'} atom lies in the fine column floor(i/k).
  r.inclusion_verified = true;
  {
    DiscontinuousStageMap m = build_htilde(prev);
    BigInt P = prev.l * prev.l * prev.q;
    Partition T = Partition::T(P), G = Partition::G(prev.l, prev.q);
    for (const auto& col : spread_indices(P, cap, s3)) {
      auto pre = m.step_preimage(T.atom(col));
      BigInt j = col / (prev.l * prev.l);
      BigInt g = -1;
      for (const auto& c : pre) {
        BigInt gi = G.atom_of({c.a, c.c});
        Cell ga = G.atom(gi);
        bool inside = c.a >= ga.a && c.b <= ga.b && c.c >= ga.c && c.d <= ga.d;
        bool in_col = c.a >= BigRational(j, prev.q) && c.b <= BigRational(j + 1, prev.q);
        if (!inside || !in_col || (g != -1 && g != gi)) {
          r.inclusion_verified = false;
          fail("preimage of fine column " + col.get_str() + " leaves G atom / T_q column " + j.get_str());
          break;
        }
        g = gi;
      }
      if (!r.inclusion_verified) break;
    }
    bool s4 = false;
    for (const auto& i : spread_indices(cur.q, 64, s4)) {
      BigInt ip = i / prev.k;
      if (!(BigRational(i, cur.q) >= BigRational(ip, P) && BigRational(i + 1, cur.q) <= BigRational(ip + 1, P))) {
        r.inclusion_verified = false;
        fail("T_{q'} atom " + i.get_str() + " not inside fine column " + ip.get_str());
        break;
      }
    }
  }
  // (c) invariance of every held error set E_{q_{m+1}} (m >= n) under φ^{α_n}
  r.error_invariance_verified = true;
  std::vector<ScheduleState> stages = held.empty() ? std::vector<ScheduleState>{prev} : held;
  for (const auto& sm : stages) {
    if (sm.n < prev.n || sm.l < 2) continue;
    BigRational spacing(BigInt(1), sm.l * sm.l * sm.q);
    bool v_ok = (prev.alpha() / spacing).is_integer();
    bool d_ok = (BigRational(h4_slope(sm)) * prev.alpha()).is_integer();
    if (!v_ok || !d_ok) {
      r.error_invariance_verified = false;
      fail("error set of stage " + std::to_string(sm.n) + " not invariant under rotation by alpha_" + std::to_string(prev.n));
      break;
    }
  }
  r.sampled = s1 || s2 || s3;
  r.diameter_bound = BigRational(BigInt(1), prev.l);  // max-metric diameter of a G atom: max(1/(lq), 1/l)
  return r;
}

// ---------------------------------------------------------------- rasters

struct Raster {
  int width = 0, height = 0;
  std::vector<unsigned char> px;  // row-major from the top-left

  Raster(int w, int h, unsigned char fill = 255) : width(w), height(h), px(static_cast<std::size_t>(w) * h, fill) {}
  unsigned char& at(int row, int col) { return px[static_cast<std::size_t>(row) * width + col]; }
  unsigned char at(int row, int col) const { return px[static_cast<std::size_t>(row) * width + col]; }

  std::string pgm() const {
    std::ostringstream os;
    os << "P2\n" << width << ' ' << height << "\n255\n";
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        os << static_cast<int>(at(r, c));
        os << ((c + 1) % 16 == 0 || c + 1 == width ? '\n' : ' ');
      }
    }
    return os.str();
  }
  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << pgm();
    if (!f) throw std::runtime_error("write failed: " + path);
  }
};

enum class RasterWhat { T, G, error_set, htilde_image };

inline unsigned char atom_gray(const BigInt& idx, const BigInt& count) {
  BigInt g = idx * 255 / count;
  return static_cast<unsigned char>(mpz_get_ui(g.get_mpz_t()));
}

// Pixel (row, col) samples the point at its centre; row 0 is the top (x2 near 1).
inline TorusPoint pixel_centre(int row, int col, int res) {
  return {BigRational(2 * col + 1, 2L * res), BigRational(2L * (res - 1 - row) + 1, 2L * res)};
}

inline Raster emit_partition_raster(const ScheduleState& s, RasterWhat what, int res, SlopeChoice slope = SlopeChoice::next_q) {
  if (res < 16) throw std::invalid_argument("raster resolution must be at least 16");
  Raster img(res, res);
  switch (what) {
    case RasterWhat::T:
    case RasterWhat::G: {
      Partition part = what == RasterWhat::T ? Partition::T(s.q) : Partition::G(s.l, s.q);
      BigInt count = part.atom_count();
      for (int r = 0; r < res; ++r)
        for (int c = 0; c < res; ++c) img.at(r, c) = atom_gray(part.atom_of(pixel_centre(r, c, res)), count);
      return img;
    }
    case RasterWhat::htilde_image: {
      DiscontinuousStageMap m = build_htilde(s, slope);
      Partition G = Partition::G(s.l, s.q);
      BigInt count = G.atom_count();
      for (int r = 0; r < res; ++r)
        for (int c = 0; c < res; ++c) img.at(r, c) = atom_gray(G.atom_of(m.apply_inverse(pixel_centre(r, c, res))), count);
      return img;
    }
    case RasterWhat::error_set: {
      // The strips are far narrower than a pixel: a pixel is dark when its closed
      // square meets a strip centre line.
      ErrorSet e = build_error_set(s, slope);
      BigRational spacing_v(BigInt(1), e.exponent), spacing_d(BigInt(1), s.l), sl(e.slope);
      for (int r = 0; r < res; ++r) {
        BigRational y0(res - 1 - r, res), y1(res - r, res);
        for (int c = 0; c < res; ++c) {
          BigRational x0(c, res), x1(c + 1, res);
          bool dark = (x1 / spacing_v).floor() >= (x0 / spacing_v).ceil();
          if (!dark) {
            // y = x2 - slope*x1 sweeps [lo, hi] over the square
            BigRational lo = sl >= 0 ? y0 - sl * x1 : y0 - sl * x0;
            BigRational hi = sl >= 0 ? y1 - sl * x0 : y1 - sl * x1;
            dark = (hi / spacing_d).floor() >= (lo / spacing_d).ceil();
          }
          if (dark) img.at(r, c) = 0;
        }
      }
      return img;
    }
  }
  return img;
}

}  // namespace akc

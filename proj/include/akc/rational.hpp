#pragma once

#include <gmpxx.h>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace akc {

using BigInt = mpz_class;

// Exact rational in lowest terms, denominator > 0. Thin wrapper over mpq_class.
class BigRational {
 public:
  BigRational() = default;
  BigRational(long v) : q_(v) {}
  BigRational(int v) : q_(static_cast<long>(v)) {}
  BigRational(const BigInt& v) : q_(v) {}
  template <class U>
  BigRational(const __gmp_expr<mpz_t, U>& e) : q_(BigInt(e)) {}
  BigRational(const BigInt& num, const BigInt& den) {
    if (den == 0) throw std::domain_error("zero denominator");
    q_ = mpq_class(num, den);
    q_.canonicalize();
  }
  BigRational(long num, long den) : BigRational(BigInt(num), BigInt(den)) {}
  explicit BigRational(const mpq_class& q) : q_(q) { q_.canonicalize(); }

  // Accepts "n", "n/d", optionally signed.
  static BigRational parse(std::string_view s) {
    std::string str(s);
    if (str.empty()) throw std::invalid_argument("empty rational");
    auto slash = str.find('/');
    auto check = [](const std::string& part) {
      std::size_t i = (!part.empty() && (part[0] == '-' || part[0] == '+')) ? 1 : 0;
      if (i == part.size()) return false;
      for (; i < part.size(); ++i)
        if (part[i] < '0' || part[i] > '9') return false;
      return true;
    };
    std::string num = str.substr(0, slash);
    std::string den = slash == std::string::npos ? "1" : str.substr(slash + 1);
    if (!check(num) || !check(den) || den[0] == '-' || den[0] == '+')
      throw std::invalid_argument("malformed rational '" + str + "'");
    if (num[0] == '+') num.erase(0, 1);
    return BigRational(BigInt(num), BigInt(den));
  }

  const mpq_class& raw() const { return q_; }
  BigInt num() const { return q_.get_num(); }
  BigInt den() const { return q_.get_den(); }

  BigInt floor() const {
    BigInt r;
    mpz_fdiv_q(r.get_mpz_t(), q_.get_num_mpz_t(), q_.get_den_mpz_t());
    return r;
  }
  BigInt ceil() const {
    BigInt r;
    mpz_cdiv_q(r.get_mpz_t(), q_.get_num_mpz_t(), q_.get_den_mpz_t());
    return r;
  }
  // x - floor(x), in [0,1)
  BigRational frac() const {
    BigInt r;
    mpz_fdiv_r(r.get_mpz_t(), q_.get_num_mpz_t(), q_.get_den_mpz_t());
    return BigRational(r, den());
  }
  int sign() const { return sgn(q_); }
  bool is_integer() const { return q_.get_den() == 1; }

  std::string str() const { return q_.get_num().get_str() + "/" + q_.get_den().get_str(); }

  // Nearest-ish conversion: exact to within one unit in the last place of Real.
  template <class Real>
  Real to() const {
    if (q_ == 0) return Real(0);
    BigInt n = abs(q_.get_num());
    const BigInt& d = q_.get_den();
    long shift = 120 - static_cast<long>(mpz_sizeinbase(n.get_mpz_t(), 2)) +
                 static_cast<long>(mpz_sizeinbase(d.get_mpz_t(), 2));
    BigInt scaled;
    if (shift >= 0) {
      mpz_mul_2exp(scaled.get_mpz_t(), n.get_mpz_t(), static_cast<mp_bitcnt_t>(shift));
      mpz_tdiv_q(scaled.get_mpz_t(), scaled.get_mpz_t(), d.get_mpz_t());
    } else {
      BigInt dd;
      mpz_mul_2exp(dd.get_mpz_t(), d.get_mpz_t(), static_cast<mp_bitcnt_t>(-shift));
      mpz_tdiv_q(scaled.get_mpz_t(), n.get_mpz_t(), dd.get_mpz_t());
    }
    // scaled has ~120 bits; split into two 60-bit limbs
    BigInt hi = scaled >> 60;
    BigInt lo = scaled - (hi << 60);
    Real r = Real(static_cast<std::uint64_t>(mpz_get_ui(hi.get_mpz_t())));
    r = r * Real(1152921504606846976.0L) + Real(static_cast<std::uint64_t>(mpz_get_ui(lo.get_mpz_t())));
    using std::ldexp;
    r = ldexp(r, static_cast<int>(-shift));
    return sgn(q_) < 0 ? -r : r;
  }

  BigRational& operator+=(const BigRational& o) { q_ += o.q_; return *this; }
  BigRational& operator-=(const BigRational& o) { q_ -= o.q_; return *this; }
  BigRational& operator*=(const BigRational& o) { q_ *= o.q_; return *this; }
  BigRational& operator/=(const BigRational& o) {
    if (o.q_ == 0) throw std::domain_error("division by zero");
    q_ /= o.q_;
    return *this;
  }
  friend BigRational operator+(BigRational a, const BigRational& b) { return a += b; }
  friend BigRational operator-(BigRational a, const BigRational& b) { return a -= b; }
  friend BigRational operator*(BigRational a, const BigRational& b) { return a *= b; }
  friend BigRational operator/(BigRational a, const BigRational& b) { return a /= b; }
  friend BigRational operator-(const BigRational& a) { return BigRational(mpq_class(-a.q_)); }

  friend bool operator==(const BigRational& a, const BigRational& b) { return a.q_ == b.q_; }
  friend bool operator!=(const BigRational& a, const BigRational& b) { return a.q_ != b.q_; }
  friend bool operator<(const BigRational& a, const BigRational& b) { return a.q_ < b.q_; }
  friend bool operator<=(const BigRational& a, const BigRational& b) { return a.q_ <= b.q_; }
  friend bool operator>(const BigRational& a, const BigRational& b) { return a.q_ > b.q_; }
  friend bool operator>=(const BigRational& a, const BigRational& b) { return a.q_ >= b.q_; }

 private:
  mpq_class q_{0};
};

inline BigRational frac(const BigRational& x) { return x.frac(); }
inline BigRational pow2_inverse(unsigned long e) {
  BigInt d;
  mpz_ui_pow_ui(d.get_mpz_t(), 2, e);
  return BigRational(BigInt(1), d);
}
inline BigInt bigint_parse(const std::string& s) {
  BigInt r;
  if (s.empty() || r.set_str(s, 10) != 0) throw std::invalid_argument("malformed integer '" + s + "'");
  return r;
}
inline std::uint64_t to_u64(const BigInt& v) {
  if (v < 0 || mpz_sizeinbase(v.get_mpz_t(), 2) > 64) throw std::overflow_error("integer exceeds 64 bits: " + v.get_str());
  return static_cast<std::uint64_t>(mpz_get_ui(v.get_mpz_t()));
}

}  // namespace akc

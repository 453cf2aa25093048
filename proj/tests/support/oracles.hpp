#pragma once

// Straightforward scalar reference implementations used as test oracles.
// They share no code with the library beyond plain data containers.

#include <cmath>
#include <cstdint>
#include <ctime>
#include <vector>

namespace crnn::test {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;  // row-major, m[row][col]

inline double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// z_j = sum_i in_i * W[i][j]
inline Vec affine(const Vec& in, const Mat& w, const Vec& b) {
  Vec z(b);
  for (std::size_t j = 0; j < b.size(); ++j)
    for (std::size_t i = 0; i < in.size(); ++i) z[j] += in[i] * w[i][j];
  return z;
}

inline Vec cat(const Vec& a, const Vec& b) {
  Vec out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

struct GateWeights {
  Mat wu, wr, wh;
  Vec bu, br, bh;
};

// Plain GRU with optional per-gate elementwise scaling of the matrix
// product (scale vectors of ones reduce to the standard cell).
inline Vec gru_reference(const Vec& x, const Vec& h, const GateWeights& w, const Vec* su = nullptr,
                         const Vec* sr = nullptr, const Vec* sh = nullptr) {
  const std::size_t k = h.size();
  const Vec xh = cat(x, h);
  Vec zero(k, 0.0);
  Vec pu = affine(xh, w.wu, zero), pr = affine(xh, w.wr, zero);
  Vec u(k), r(k), hr(k);
  for (std::size_t j = 0; j < k; ++j) {
    u[j] = sig(pu[j] * (su ? (*su)[j] : 1.0) + w.bu[j]);
    r[j] = sig(pr[j] * (sr ? (*sr)[j] : 1.0) + w.br[j]);
    hr[j] = h[j] * r[j];
  }
  Vec ph = affine(cat(x, hr), w.wh, zero);
  Vec out(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double g = std::tanh(ph[j] * (sh ? (*sh)[j] : 1.0) + w.bh[j]);
    out[j] = (1.0 - u[j]) * h[j] + u[j] * g;
  }
  return out;
}

// Sum of the rows of proj selected by a one-hot context's active indices.
inline Vec project_context(const Mat& proj, const std::vector<std::size_t>& active) {
  Vec out(proj.at(0).size(), 0.0);
  for (std::size_t idx : active)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += proj[idx][j];
  return out;
}

struct CalendarOracle {
  int month;  // 0-based
  int hour;
  int weekday;  // 0 = Monday
};

inline CalendarOracle calendar_oracle(std::int64_t t) {
  const std::time_t tt = static_cast<std::time_t>(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  return {tm.tm_mon, tm.tm_hour, (tm.tm_wday + 6) % 7};
}

// Largest b with 2^b <= delta + 1, by repeated doubling, then capped.
inline std::size_t bucket_oracle(std::int64_t delta, std::size_t cap) {
  std::size_t b = 0;
  std::int64_t p = 2;
  while (p <= delta + 1) {
    ++b;
    p *= 2;
  }
  return b < cap ? b : cap;
}

}  // namespace crnn::test

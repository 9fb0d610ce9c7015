//
// Copyright 2026 The LightDP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Independent reference implementations used by the tests. Nothing here
// calls into the library's numerics: matrices are plain nested vectors,
// inverses come from Gauss-Jordan elimination and randomness from
// std::mt19937_64.

#ifndef LIGHTDP_TESTS_ORACLES_H_
#define LIGHTDP_TESTS_ORACLES_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix Identity(int n) {
  Matrix m(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) m[i][i] = 1.0;
  return m;
}

// Gauss-Jordan with partial pivoting.
inline Matrix Invert(Matrix a) {
  const int n = static_cast<int>(a.size());
  Matrix inv = Identity(n);
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    std::swap(a[col], a[pivot]);
    std::swap(inv[col], inv[pivot]);
    const double p = a[col][col];
    for (int k = 0; k < n; ++k) {
      a[col][k] /= p;
      inv[col][k] /= p;
    }
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (int k = 0; k < n; ++k) {
        a[r][k] -= f * a[col][k];
        inv[r][k] -= f * inv[col][k];
      }
    }
  }
  return inv;
}

// Covariance of the unrevealed disturbances of I1 from explicit per-pair and
// per-client variances. pair_var(i, j) and client_var(i) are callables.
template <typename PairVar, typename ClientVar>
Matrix Covariance(const std::vector<int>& i1, const std::vector<int>& i2,
                  PairVar pair_var, ClientVar client_var) {
  const int n = static_cast<int>(i1.size());
  Matrix c(n, std::vector<double>(n, 0.0));
  for (int a = 0; a < n; ++a) {
    double diag = client_var(i1[a]);
    for (int b = 0; b < n; ++b) {
      if (b == a) continue;
      diag += pair_var(i1[a], i1[b]);
      c[a][b] = -pair_var(i1[a], i1[b]);
    }
    for (int j : i2) diag += pair_var(i1[a], j);
    c[a][a] = diag;
  }
  return c;
}

inline Matrix HomogeneousCovariance(int n1, int n2, double k, double u) {
  std::vector<int> i1, i2;
  for (int i = 0; i < n1; ++i) i1.push_back(i);
  for (int j = 0; j < n2; ++j) i2.push_back(n1 + j);
  return Covariance(
      i1, i2, [k](int, int) { return k; }, [u](int) { return u; });
}

// sum_j (C^-1_ij)^2 C_jj and C^-1_ii for row i.
inline std::pair<double, double> LossVariances(const Matrix& c, int row) {
  const Matrix inv = Invert(c);
  double spread = 0.0;
  for (size_t j = 0; j < c.size(); ++j) {
    spread += inv[row][j] * inv[row][j] * c[j][j];
  }
  return {spread, inv[row][row]};
}

// Closed-form constraint for the (Cbar, 0, 0) realization with n = N - Cbar.
inline double BindingLhs(double k, double u, int n) {
  return ((n - 1) * k + u) * ((n - 1) * k * k + (k + u) * (k + u)) /
         std::pow(n * k + u, 2) / (u * u);
}

inline double Mu(int num_clients, const std::vector<double>& g) {
  double num = 0.0, den = 0.0;
  for (size_t s = 0; s < g.size(); ++s) {
    num += g[s] * static_cast<double>(s) / (num_clients - static_cast<double>(s));
    den += g[s] / (num_clients - static_cast<double>(s));
  }
  return num / den;
}

// Polynomials as ascending coefficient lists.
using Poly = std::vector<double>;

inline Poly Mul(const Poly& a, const Poly& b) {
  Poly out(a.size() + b.size() - 1, 0.0);
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}
inline Poly Add(Poly a, const Poly& b, double scale = 1.0) {
  if (a.size() < b.size()) a.resize(b.size(), 0.0);
  for (size_t i = 0; i < b.size(); ++i) a[i] += scale * b[i];
  return a;
}
inline Poly Derive(const Poly& a) {
  Poly out;
  for (size_t i = 1; i < a.size(); ++i) out.push_back(i * a[i]);
  return out;
}

// Stationarity condition of (mu g + 1) h(g), h(g) the binding constraint
// with u = 1 and k = g: numerator of the derivative divided by (n g + 1).
inline Poly StationarityPolynomial(int honest, double mu) {
  const double n = honest;
  const Poly lin = {1.0, n - 1};                        // (n-1) g + 1
  const Poly quad = {1.0, 2.0, n};                      // (n-1) g^2 + (g+1)^2
  const Poly f = Mul(Poly{1.0, mu}, Mul(lin, quad));    // (mu g + 1) P
  const Poly q1 = {1.0, n};                             // n g + 1
  return Add(Mul(Derive(f), q1), f, -2.0 * n);
}

inline double ObjectiveProfile(int honest, double mu, double g) {
  const double n = honest;
  return (mu * g + 1) * ((n - 1) * g + 1) * ((n - 1) * g * g + (g + 1) * (g + 1)) /
         std::pow(n * g + 1, 2);
}

inline double Expected(const std::vector<double>& g, int num_clients,
                       double k, double u) {
  double total = 0.0;
  for (size_t s = 0; s < g.size(); ++s) {
    total += g[s] * (s * k + u) / (num_clients - static_cast<double>(s));
  }
  return total;
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  double n = 0.0;
};

inline Moments Summarize(const std::vector<double>& x) {
  Moments m;
  m.n = static_cast<double>(x.size());
  for (double v : x) m.mean += v;
  m.mean /= m.n;
  for (double v : x) m.var += (v - m.mean) * (v - m.mean);
  m.var /= (m.n - 1);
  return m;
}

inline double Correlation(const std::vector<double>& a,
                          const std::vector<double>& b) {
  const Moments ma = Summarize(a), mb = Summarize(b);
  double cov = 0.0;
  for (size_t k = 0; k < a.size(); ++k) {
    cov += (a[k] - ma.mean) * (b[k] - mb.mean);
  }
  cov /= (ma.n - 1);
  return cov / std::sqrt(ma.var * mb.var);
}

}  // namespace oracle

#endif  // LIGHTDP_TESTS_ORACLES_H_

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

// Noise-variance planner for homogeneous plans.
//
// With gamma = sigma_k^2 / sigma_u^2 and n = N - Cbar honest clients, the
// binding privacy constraint is
//   [(n-1) k + u] [(n-1) k^2 + (k + u)^2] / ([n k + u]^2 u^2)
//       <= epsilon^2 / (2 log(2/delta) Delta^2),        k = sigma_k^2, u = ...
// and the objective E_S[(S k + u) / (N - S)] is proportional to (mu gamma + 1)
// u. The optimal gamma is the smallest root in (0, 1) of the quartic
// G(gamma) = sum_k kappa_k gamma^k below; sigma_u then makes the constraint
// tight.

#ifndef LIGHTDP_PLANNER_H_
#define LIGHTDP_PLANNER_H_

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_join.h"
#include "lightdp/masking.h"
#include "lightdp/noise.h"
#include "lightdp/privacy_audit.h"
#include "lightdp/status_macros.h"

namespace lightdp {

// Grid used to bracket the quartic's first sign change in (0, 1).
inline constexpr int kRootScanPoints = 10000;
// Bisection and companion-matrix roots must agree to this absolute tolerance.
inline constexpr double kRootAgreement = 1e-8;
// Planner output is scaled up by this factor so the tight constraint survives
// rounding in the matrix-based audit.
inline constexpr double kPlanInflation = 1.0 + 1e-10;

// Distribution g(s) of the per-round straggler count on {0, ..., Sbar}.
class StragglerDistribution {
 public:
  static StragglerDistribution Uniform(int max_stragglers) {
    const int n = std::max(max_stragglers, 0) + 1;
    return StragglerDistribution(std::vector<double>(n, 1.0 / n));
  }

  static absl::StatusOr<StragglerDistribution> FromProbabilities(
      std::vector<double> probabilities) {
    if (probabilities.empty()) {
      return absl::InvalidArgumentError(
          "StragglerDistribution: need at least P(S = 0)");
    }
    double total = 0.0;
    for (double p : probabilities) {
      if (!(p >= 0.0) || !std::isfinite(p)) {
        return absl::InvalidArgumentError(
            "StragglerDistribution: probabilities must be finite and >= 0");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      return absl::InvalidArgumentError(absl::StrCat(
          "StragglerDistribution: probabilities sum to ", total, ", not 1"));
    }
    for (double& p : probabilities) p /= total;
    return StragglerDistribution(std::move(probabilities));
  }

  int max_stragglers() const {
    return static_cast<int>(probabilities_.size()) - 1;
  }
  double probability(int s) const {
    return s < 0 || s > max_stragglers() ? 0.0 : probabilities_[s];
  }
  const std::vector<double>& probabilities() const { return probabilities_; }

  // Inverse-CDF draw.
  int Sample(StreamEngine& engine) const {
    const double u = engine.UniformUnit();
    double cdf = 0.0;
    for (int s = 0; s < max_stragglers(); ++s) {
      cdf += probabilities_[s];
      if (u < cdf) return s;
    }
    return max_stragglers();
  }

  double Mean() const {
    double m = 0.0;
    for (int s = 0; s <= max_stragglers(); ++s) m += s * probabilities_[s];
    return m;
  }

 private:
  explicit StragglerDistribution(std::vector<double> p)
      : probabilities_(std::move(p)) {}

  std::vector<double> probabilities_;
};

struct ThreatModel {
  int num_clients = 50;
  int max_colluders = 10;
  StragglerDistribution stragglers = StragglerDistribution::Uniform(10);

  int max_stragglers() const { return stragglers.max_stragglers(); }

  absl::Status Validate() const {
    return internal::CheckThreat(num_clients, max_colluders, max_stragglers());
  }
};

// mu = E[S / (N - S)] / E[1 / (N - S)].
inline absl::StatusOr<double> ExpectedStragglerRatio(
    const StragglerDistribution& dist, int num_clients) {
  if (dist.max_stragglers() >= num_clients) {
    return absl::InvalidArgumentError(absl::StrCat(
        "ExpectedStragglerRatio: Sbar=", dist.max_stragglers(),
        " must be < N=", num_clients));
  }
  double num = 0.0;
  double den = 0.0;
  for (int s = 0; s <= dist.max_stragglers(); ++s) {
    const double g = dist.probability(s);
    num += g * s / (num_clients - s);
    den += g / (num_clients - s);
  }
  return num / den;
}

struct QuarticSpec {
  double mu = 0.0;
  int honest = 0;                   // N - Cbar
  std::array<double, 5> kappa{};    // kappa[k] multiplies gamma^k

  double Evaluate(double gamma) const {
    double acc = 0.0;
    for (int k = 4; k >= 0; --k) acc = acc * gamma + kappa[k];
    return acc;
  }
  double MaxAbsCoefficient() const {
    double m = 0.0;
    for (double c : kappa) m = std::max(m, std::abs(c));
    return m;
  }
  std::string DebugString() const {
    return absl::StrCat("G(g) = ", kappa[4], " g^4 + ", kappa[3], " g^3 + ",
                        kappa[2], " g^2 + ", kappa[1], " g + ", kappa[0],
                        " (mu=", mu, ", N-Cbar=", honest, ")");
  }
};

inline absl::StatusOr<QuarticSpec> QuarticCoefficients(int num_clients,
                                                       int max_colluders,
                                                       double mu) {
  const int honest = num_clients - max_colluders;
  if (honest < 2) {
    return absl::FailedPreconditionError(absl::StrCat(
        "planner infeasible: N - Cbar = ", honest,
        " < 2 leaves no honest pair to share pairwise noise"));
  }
  if (!(mu >= 0.0) || !std::isfinite(mu)) {
    return absl::InvalidArgumentError(
        absl::StrCat("QuarticCoefficients: mu must be >= 0, got ", mu));
  }
  const double n = honest;
  QuarticSpec spec;
  spec.mu = mu;
  spec.honest = honest;
  spec.kappa[4] = 2 * mu * n * n * n - 2 * mu * n * n;
  spec.kappa[3] = n * n * n - n * n + 7 * mu * n * n - 6 * mu * n;
  spec.kappa[2] = 3 * n * n - 3 * n + 9 * mu * n - 6 * mu;
  spec.kappa[1] = -n * n + 5 * n - 4 + mu * n + 2 * mu;
  spec.kappa[0] = -n + 1 + mu;
  return spec;
}

namespace internal {

// Real roots of the polynomial (after dropping vanishing leading terms) via
// eigenvalues of its companion matrix.
inline std::vector<double> CompanionRealRoots(const QuarticSpec& spec) {
  const double scale = spec.MaxAbsCoefficient();
  int degree = 4;
  while (degree > 0 && std::abs(spec.kappa[degree]) <= 1e-14 * scale) {
    --degree;
  }
  std::vector<double> roots;
  if (degree == 0) return roots;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int r = 1; r < degree; ++r) companion(r, r - 1) = 1.0;
  for (int r = 0; r < degree; ++r) {
    companion(r, degree - 1) = -spec.kappa[r] / spec.kappa[degree];
  }
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  for (const std::complex<double>& z : solver.eigenvalues()) {
    if (std::abs(z.imag()) <= 1e-9 * (1.0 + std::abs(z.real()))) {
      roots.push_back(z.real());
    }
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

}  // namespace internal

// Smallest root of G in (0, 1): first sign change on a uniform grid, refined
// by bisection, cross-checked against the companion-matrix roots.
inline absl::StatusOr<double> SolveGamma0(const QuarticSpec& spec) {
  for (double c : spec.kappa) {
    if (!std::isfinite(c)) {
      return absl::InvalidArgumentError("SolveGamma0: non-finite coefficient");
    }
  }
  std::optional<double> root;
  double prev_x = 0.0;
  double prev_g = spec.Evaluate(0.0);
  for (int k = 1; k <= kRootScanPoints && !root; ++k) {
    const double x = static_cast<double>(k) / kRootScanPoints;
    const double g = spec.Evaluate(x);
    if (g == 0.0 && x < 1.0) {
      root = x;
    } else if (prev_g != 0.0 && std::signbit(g) != std::signbit(prev_g)) {
      double lo = prev_x;
      double hi = x;
      const bool lo_negative = std::signbit(prev_g);
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const double gm = spec.Evaluate(mid);
        if (gm == 0.0) {
          lo = hi = mid;
          break;
        }
        (std::signbit(gm) == lo_negative ? lo : hi) = mid;
      }
      root = 0.5 * (lo + hi);
    }
    prev_x = x;
    prev_g = g;
  }

  std::optional<double> companion;
  for (double r : internal::CompanionRealRoots(spec)) {
    if (r > 0.0 && r < 1.0) {
      companion = r;
      break;
    }
  }
  if (!root && !companion) {
    return absl::FailedPreconditionError(absl::StrCat(
        "planner infeasible: no root of the quartic in (0, 1); ",
        spec.DebugString()));
  }
  if (!root || !companion || std::abs(*root - *companion) > kRootAgreement) {
    return absl::InternalError(absl::StrCat(
        "SolveGamma0: bisection (",
        root ? absl::StrCat(*root) : std::string("none"),
        ") and companion matrix (",
        companion ? absl::StrCat(*companion) : std::string("none"),
        ") disagree; ", spec.DebugString()));
  }
  if (std::abs(spec.Evaluate(*root)) > 1e-10 * spec.MaxAbsCoefficient()) {
    return absl::InternalError(absl::StrCat(
        "SolveGamma0: residual too large at ", *root, "; ",
        spec.DebugString()));
  }
  return *root;
}

// Left-hand side of the binding (C = Cbar, no stragglers) privacy constraint.
inline absl::StatusOr<double> ConstraintLhs(double sigma_k, double sigma_u,
                                            int num_clients,
                                            int max_colluders) {
  if (!(sigma_u > 0.0)) {
    return absl::InvalidArgumentError("ConstraintLhs: sigma_u must be > 0");
  }
  if (!(sigma_k >= 0.0)) {
    return absl::InvalidArgumentError("ConstraintLhs: sigma_k must be >= 0");
  }
  const double n = num_clients - max_colluders;
  if (n < 1) {
    return absl::InvalidArgumentError("ConstraintLhs: N - Cbar must be >= 1");
  }
  const double k = sigma_k * sigma_k;
  const double u = sigma_u * sigma_u;
  const double outer = (n * k + u);
  return ((n - 1) * k + u) * ((n - 1) * k * k + (k + u) * (k + u)) /
         (outer * outer * u * u);
}

// epsilon^2 / (2 log(2/delta) Delta^2).
inline double ConstraintThreshold(const DpBudget& budget) {
  const double scale = budget.RequiredScale();
  return 1.0 / (scale * scale);
}

// E_S[(S sigma_k^2 + sigma_u^2) / (N - S)]: expected per-coordinate variance
// of the aggregate noise.
inline double ExpectedAggregateNoise(const NoisePlan& plan, int num_clients,
                                     const StragglerDistribution& dist) {
  double total = 0.0;
  for (int s = 0; s <= dist.max_stragglers(); ++s) {
    total += dist.probability(s) *
             (s * plan.sigma_k * plan.sigma_k + plan.sigma_u * plan.sigma_u) /
             (num_clients - s);
  }
  return total;
}

struct PlannerResult {
  NoisePlan plan;
  double gamma0 = 0.0;
  QuarticSpec quartic;
  double constraint_lhs = 0.0;
  double threshold = 0.0;
  double objective = 0.0;
};

inline absl::StatusOr<PlannerResult> OptimalVariances(
    const ThreatModel& threat, const DpBudget& budget) {
  LIGHTDP_RETURN_IF_ERROR(threat.Validate());
  LIGHTDP_RETURN_IF_ERROR(budget.Validate());
  if (!(budget.sensitivity > 0.0)) {
    return absl::InvalidArgumentError(
        "OptimalVariances: sensitivity must be > 0");
  }
  const int n = threat.num_clients;
  const int c = threat.max_colluders;
  LIGHTDP_ASSIGN_OR_RETURN(const double mu,
                           ExpectedStragglerRatio(threat.stragglers, n));
  LIGHTDP_ASSIGN_OR_RETURN(const QuarticSpec spec,
                           QuarticCoefficients(n, c, mu));
  LIGHTDP_ASSIGN_OR_RETURN(const double g, SolveGamma0(spec));

  const double h = n - c;
  const double sigma_u =
      std::sqrt(2.0 * std::log(2.0 / budget.delta) * ((h - 1) * g + 1) *
                ((h - 1) * g * g + (g + 1) * (g + 1))) *
      budget.sensitivity / (budget.epsilon * (h * g + 1));

  PlannerResult out;
  out.gamma0 = g;
  out.quartic = spec;
  out.threshold = ConstraintThreshold(budget);
  LIGHTDP_ASSIGN_OR_RETURN(const double tight,
                           ConstraintLhs(std::sqrt(g) * sigma_u, sigma_u, n, c));
  if (std::abs(tight / out.threshold - 1.0) > 1e-6) {
    return absl::InternalError(absl::StrCat(
        "OptimalVariances: constraint not tight (lhs=", tight,
        ", threshold=", out.threshold, ")"));
  }
  out.plan.sigma_u = sigma_u * kPlanInflation;
  out.plan.sigma_k = std::sqrt(g) * out.plan.sigma_u;
  LIGHTDP_ASSIGN_OR_RETURN(
      out.constraint_lhs,
      ConstraintLhs(out.plan.sigma_k, out.plan.sigma_u, n, c));
  out.objective = ExpectedAggregateNoise(out.plan, n, threat.stragglers);
  return out;
}

enum class Scheme { kLightDp, kVanillaLdp, kSmpcDpWorstCase };

inline std::string_view SchemeName(Scheme scheme) {
  switch (scheme) {
    case Scheme::kLightDp:
      return "lightdp";
    case Scheme::kVanillaLdp:
      return "vanilla-ldp";
    case Scheme::kSmpcDpWorstCase:
      return "smpc-dp-worstcase";
  }
  return "unknown";
}

inline absl::StatusOr<Scheme> ParseScheme(std::string_view name) {
  for (Scheme s :
       {Scheme::kLightDp, Scheme::kVanillaLdp, Scheme::kSmpcDpWorstCase}) {
    if (SchemeName(s) == name) return s;
  }
  return absl::InvalidArgumentError(absl::StrCat(
      "unknown scheme '", std::string(name),
      "' (expected lightdp, vanilla-ldp or smpc-dp-worstcase)"));
}

// Per-client standard deviation formula of each baseline.
inline std::string_view BaselineFormula(Scheme scheme) {
  switch (scheme) {
    case Scheme::kVanillaLdp:
      return "sqrt(1.25*log(2/delta))*Delta/epsilon";
    case Scheme::kSmpcDpWorstCase:
      return "sqrt(1.25*log(2/delta))*Delta/(epsilon*(N-Cbar-Sbar))";
    case Scheme::kLightDp:
      break;
  }
  return "";
}

// Individual-noise-only plans. vanilla-ldp protects each upload on its own;
// smpc-dp-worstcase models secure aggregation as exact summation and splits
// the vanilla noise across the N - Cbar - Sbar guaranteed honest survivors.
inline absl::StatusOr<NoisePlan> BaselineVariances(int num_clients,
                                                   int max_colluders,
                                                   int max_stragglers,
                                                   const DpBudget& budget,
                                                   Scheme scheme) {
  LIGHTDP_RETURN_IF_ERROR(budget.Validate());
  LIGHTDP_RETURN_IF_ERROR(
      internal::CheckThreat(num_clients, max_colluders, max_stragglers));
  const double vanilla = std::sqrt(1.25 * std::log(2.0 / budget.delta)) *
                         budget.sensitivity / budget.epsilon;
  NoisePlan plan;
  switch (scheme) {
    case Scheme::kVanillaLdp:
      plan.sigma_u = vanilla;
      return plan;
    case Scheme::kSmpcDpWorstCase: {
      const int divisor = num_clients - max_colluders - max_stragglers;
      if (divisor <= 0) {
        return absl::FailedPreconditionError(absl::StrCat(
            "smpc-dp-worstcase: N - Cbar - Sbar = ", divisor, " <= 0"));
      }
      plan.sigma_u = vanilla / divisor;
      return plan;
    }
    case Scheme::kLightDp:
      break;
  }
  return absl::InvalidArgumentError(
      "BaselineVariances: lightdp is not a baseline; use OptimalVariances");
}

}  // namespace lightdp

#endif  // LIGHTDP_PLANNER_H_

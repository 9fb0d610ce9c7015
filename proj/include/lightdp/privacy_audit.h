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

// Exact (epsilon, delta) analysis of the masking protocol for one round.
//
// For a realization of colluders N_C and stragglers N_S the adversary cannot
// remove the disturbance m_i of each honest survivor i in I1. The vector
// (m_i)_{i in I1} is jointly Gaussian with covariance
//   C_ii = sum_{j != i, j in I1 u I2} sigma_ij^2 + sigma_i^2,
//   C_ij = -sigma_ij^2,
// and the privacy loss of client i is Gaussian with mean C^-1_ii ||v||^2 / 2.
// The sufficient condition checked per client is
//   1 / sqrt(sum_j (C^-1_ij)^2 C_jj) >= sqrt(2 log(2/delta)) Delta / epsilon.

#ifndef LIGHTDP_PRIVACY_AUDIT_H_
#define LIGHTDP_PRIVACY_AUDIT_H_

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "lightdp/masking.h"
#include "lightdp/noise.h"
#include "lightdp/status_macros.h"

namespace lightdp {

// Smallest eigenvalue allowed relative to the largest before the covariance
// is declared singular.
inline constexpr double kMinRelativeEigenvalue = 1e-12;

struct DpBudget {
  double epsilon = 1.0;
  double delta = 1e-5;
  // L2 bound on the change of a whole local parameter vector between
  // adjacent datasets.
  double sensitivity = 1.0;
  int rounds = 1;

  bool operator==(const DpBudget&) const = default;

  absl::Status Validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
      return absl::InvalidArgumentError(
          absl::StrCat("DpBudget: epsilon must be > 0, got ", epsilon));
    }
    if (!(delta > 0.0 && delta < 1.0)) {
      return absl::InvalidArgumentError(
          absl::StrCat("DpBudget: delta must be in (0, 1), got ", delta));
    }
    if (!(sensitivity >= 0.0) || !std::isfinite(sensitivity)) {
      return absl::InvalidArgumentError(absl::StrCat(
          "DpBudget: sensitivity must be >= 0, got ", sensitivity));
    }
    if (rounds < 1) {
      return absl::InvalidArgumentError(
          absl::StrCat("DpBudget: rounds must be >= 1, got ", rounds));
    }
    return absl::OkStatus();
  }

  // sqrt(2 log(2/delta)) Delta / epsilon: the right-hand side of the check.
  double RequiredScale() const {
    return std::sqrt(2.0 * std::log(2.0 / delta)) * sensitivity / epsilon;
  }
};

// Sizes of I1 and I2 for C colluders, S stragglers and A = |N_S n N_C|.
struct RealizationCounts {
  int colluders = 0;
  int stragglers = 0;
  int overlap = 0;
  int n1 = 0;
  int n2 = 0;

  static absl::StatusOr<RealizationCounts> FromThreat(int num_clients,
                                                      int colluders,
                                                      int stragglers,
                                                      int overlap) {
    if (colluders < 0 || stragglers < 0 || overlap < 0 ||
        overlap > std::min(colluders, stragglers) ||
        colluders > num_clients || stragglers > num_clients) {
      return absl::InvalidArgumentError(absl::StrCat(
          "RealizationCounts: invalid (N, C, S, A) = (", num_clients, ", ",
          colluders, ", ", stragglers, ", ", overlap, ")"));
    }
    RealizationCounts out{colluders, stragglers, overlap,
                          num_clients - colluders - stragglers + overlap,
                          stragglers - overlap};
    if (out.n1 < 0) {
      return absl::InvalidArgumentError("RealizationCounts: n1 < 0");
    }
    return out;
  }
};

class DisturbanceCovariance {
 public:
  // Homogeneous plan: n1 x n1 matrix with diagonal (n1 - 1 + n2) sigma_k^2 +
  // sigma_u^2 and off-diagonal -sigma_k^2.
  static absl::StatusOr<DisturbanceCovariance> FromCounts(
      int n1, int n2, const NoisePlan& plan) {
    if (n1 < 1 || n2 < 0) {
      return absl::InvalidArgumentError(absl::StrCat(
          "DisturbanceCovariance: need n1 >= 1, n2 >= 0 (n1=", n1,
          ", n2=", n2, ")"));
    }
    LIGHTDP_RETURN_IF_ERROR(plan.Validate());
    if (!plan.IsHomogeneous()) {
      return absl::InvalidArgumentError(
          "DisturbanceCovariance::FromCounts needs a homogeneous plan");
    }
    const double ks = plan.sigma_k * plan.sigma_k;
    const double us = plan.sigma_u * plan.sigma_u;
    Eigen::MatrixXd c = Eigen::MatrixXd::Constant(n1, n1, -ks);
    c.diagonal().setConstant((n1 - 1 + n2) * ks + us);
    std::vector<int> labels(n1);
    std::iota(labels.begin(), labels.end(), 0);
    return FromMatrix(std::move(c), std::move(labels));
  }

  // Explicit sets; supports heterogeneous plans.
  static absl::StatusOr<DisturbanceCovariance> FromSets(
      std::span<const int> honest_survivors,
      std::span<const int> honest_stragglers, const NoisePlan& plan) {
    LIGHTDP_RETURN_IF_ERROR(
        internal::CheckDisjoint(honest_survivors, honest_stragglers));
    const int n1 = static_cast<int>(honest_survivors.size());
    if (n1 < 1) {
      return absl::InvalidArgumentError("DisturbanceCovariance: I1 is empty");
    }
    Eigen::MatrixXd c(n1, n1);
    for (int a = 0; a < n1; ++a) {
      const int i = honest_survivors[a];
      LIGHTDP_ASSIGN_OR_RETURN(
          c(a, a), LocalDisturbanceVariance(i, honest_survivors,
                                            honest_stragglers, plan));
      for (int b = a + 1; b < n1; ++b) {
        LIGHTDP_ASSIGN_OR_RETURN(const PairKey pair,
                                 PairKey::Create(i, honest_survivors[b]));
        c(a, b) = c(b, a) = -std::pow(plan.PairSigma(pair), 2);
      }
    }
    return FromMatrix(std::move(c), std::vector<int>(honest_survivors.begin(),
                                                     honest_survivors.end()));
  }

  // Validates symmetry and positive definiteness, then factorizes.
  static absl::StatusOr<DisturbanceCovariance> FromMatrix(
      Eigen::MatrixXd c, std::vector<int> labels) {
    if (c.rows() == 0 || c.rows() != c.cols() ||
        static_cast<size_t>(c.rows()) != labels.size()) {
      return absl::InvalidArgumentError(
          "DisturbanceCovariance: matrix must be square and labelled");
    }
    if (!c.allFinite() || !c.isApprox(c.transpose(), 0.0)) {
      return absl::InvalidArgumentError(
          "DisturbanceCovariance: matrix must be finite and symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
        c, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(hi > 0.0) || lo < kMinRelativeEigenvalue * hi) {
      return absl::FailedPreconditionError(absl::StrCat(
          "DisturbanceCovariance: not positive definite (eigenvalues in [", lo,
          ", ", hi, "]); sigma_u = 0 leaves the honest disturbances singular"));
    }
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() != Eigen::Success) {
      return absl::FailedPreconditionError(
          "DisturbanceCovariance: Cholesky factorization failed");
    }
    DisturbanceCovariance out;
    out.inverse_ =
        llt.solve(Eigen::MatrixXd::Identity(c.rows(), c.cols()));
    out.inverse_ = 0.5 * (out.inverse_ + out.inverse_.transpose()).eval();
    out.cholesky_ = llt.matrixL();
    out.matrix_ = std::move(c);
    out.labels_ = std::move(labels);
    out.condition_number_ = hi / lo;
    return out;
  }

  int size() const { return static_cast<int>(matrix_.rows()); }
  const Eigen::MatrixXd& matrix() const { return matrix_; }
  const Eigen::MatrixXd& inverse() const { return inverse_; }
  // Lower Cholesky factor L with L L^T = C.
  const Eigen::MatrixXd& cholesky() const { return cholesky_; }
  double condition_number() const { return condition_number_; }
  // Client id of each row (0..n1-1 for count-level matrices).
  const std::vector<int>& labels() const { return labels_; }

 private:
  DisturbanceCovariance() = default;

  Eigen::MatrixXd matrix_;
  Eigen::MatrixXd inverse_;
  Eigen::MatrixXd cholesky_;
  std::vector<int> labels_;
  double condition_number_ = 0.0;
};

struct PrivacyLossMoments {
  double mean = 0.0;
  // sum_j (C^-1_ij)^2 C_jj ||v||^2, the form used by the sufficient condition.
  double variance = 0.0;
  // C^-1_ii ||v||^2, the variance when the disturbances follow C exactly.
  // Never larger than `variance`.
  double exact_variance = 0.0;
};

inline absl::StatusOr<PrivacyLossMoments> ComputePrivacyLossMoments(
    const DisturbanceCovariance& cov, int row, double v_norm) {
  if (row < 0 || row >= cov.size()) {
    return absl::InvalidArgumentError(
        absl::StrCat("PrivacyLossMoments: row ", row, " outside matrix"));
  }
  if (!(v_norm >= 0.0) || !std::isfinite(v_norm)) {
    return absl::InvalidArgumentError("PrivacyLossMoments: ||v|| must be >= 0");
  }
  const double v2 = v_norm * v_norm;
  const Eigen::MatrixXd& inv = cov.inverse();
  double spread = 0.0;
  for (int j = 0; j < cov.size(); ++j) {
    spread += inv(row, j) * inv(row, j) * cov.matrix()(j, j);
  }
  return PrivacyLossMoments{0.5 * inv(row, row) * v2, spread * v2,
                            inv(row, row) * v2};
}

struct ClientVerdict {
  int client = 0;     // label of the row
  double lhs = 0.0;   // 1 / sqrt(sum_j (C^-1_ij)^2 C_jj), per-round scale
  double rhs = 0.0;   // sqrt(2 log(2/delta)) Delta / epsilon
  double margin = 0.0;
  bool holds = false;
};

// Checks the sufficient condition for every row. When `per_round` is false
// the covariance describes noise calibrated for `budget.rounds` rounds in
// total, so each round only carries variance C / sqrt(T).
inline absl::StatusOr<std::vector<ClientVerdict>> CheckDpCondition(
    const DisturbanceCovariance& cov, const DpBudget& budget,
    bool per_round = true) {
  LIGHTDP_RETURN_IF_ERROR(budget.Validate());
  const double rhs = budget.RequiredScale();
  const double round_scale =
      per_round ? 1.0 : std::pow(static_cast<double>(budget.rounds), 0.25);
  std::vector<ClientVerdict> out;
  out.reserve(cov.size());
  for (int i = 0; i < cov.size(); ++i) {
    LIGHTDP_ASSIGN_OR_RETURN(const PrivacyLossMoments m,
                             ComputePrivacyLossMoments(cov, i, 1.0));
    const double lhs = 1.0 / std::sqrt(m.variance) / round_scale;
    out.push_back({cov.labels()[i], lhs, rhs, lhs - rhs, lhs >= rhs});
  }
  return out;
}

struct RealizationResult {
  RealizationCounts counts;
  // Explicit sets for subset-level audits; empty for count-level audits.
  std::vector<int> colluders;
  std::vector<int> stragglers;
  std::vector<double> margins;  // one per client in I1
  double min_margin = 0.0;
  int binding_client = 0;
  double condition_number = 0.0;
  bool holds = false;
};

struct AuditReport {
  int num_clients = 0;
  int max_colluders = 0;
  int max_stragglers = 0;
  bool per_round = true;
  DpBudget budget;
  std::vector<RealizationResult> realizations;
  size_t binding_index = 0;
  double min_margin = std::numeric_limits<double>::infinity();
  size_t skipped = 0;  // realizations with n1 = 0
  bool passed = true;

  const RealizationResult& binding() const {
    return realizations[binding_index];
  }
};

namespace internal {

inline absl::Status CheckThreat(int num_clients, int max_colluders,
                                int max_stragglers) {
  if (num_clients < 1 || max_colluders < 0 || max_stragglers < 0 ||
      max_colluders > num_clients || max_stragglers >= num_clients) {
    return absl::InvalidArgumentError(absl::StrCat(
        "threat model needs N >= 1, 0 <= C <= N, 0 <= S < N (N=", num_clients,
        ", C=", max_colluders, ", S=", max_stragglers, ")"));
  }
  return absl::OkStatus();
}

inline absl::Status Record(AuditReport& report, RealizationResult result,
                           const std::vector<ClientVerdict>& verdicts) {
  result.min_margin = std::numeric_limits<double>::infinity();
  for (const ClientVerdict& v : verdicts) {
    result.margins.push_back(v.margin);
    if (v.margin < result.min_margin) {
      result.min_margin = v.margin;
      result.binding_client = v.client;
    }
  }
  result.holds = result.min_margin >= 0.0;
  if (report.realizations.empty() || result.min_margin < report.min_margin) {
    report.min_margin = result.min_margin;
    report.binding_index = report.realizations.size();
  }
  report.passed = report.passed && result.holds;
  report.realizations.push_back(std::move(result));
  return absl::OkStatus();
}

}  // namespace internal

// Enumerates every C in [0, max_c], S in [0, max_s], A in [0, min(C, S)].
// Homogeneous symmetry makes the counts sufficient. Ties keep the first
// realization in that order.
inline absl::StatusOr<AuditReport> WorstCaseAudit(int num_clients,
                                                  int max_colluders,
                                                  int max_stragglers,
                                                  const NoisePlan& plan,
                                                  const DpBudget& budget,
                                                  bool per_round = true) {
  LIGHTDP_RETURN_IF_ERROR(
      internal::CheckThreat(num_clients, max_colluders, max_stragglers));
  LIGHTDP_RETURN_IF_ERROR(budget.Validate());
  AuditReport report;
  report.num_clients = num_clients;
  report.max_colluders = max_colluders;
  report.max_stragglers = max_stragglers;
  report.per_round = per_round;
  report.budget = budget;
  for (int c = 0; c <= max_colluders; ++c) {
    for (int s = 0; s <= max_stragglers; ++s) {
      for (int a = 0; a <= std::min(c, s); ++a) {
        if (c + s - a > num_clients) continue;
        LIGHTDP_ASSIGN_OR_RETURN(
            const RealizationCounts counts,
            RealizationCounts::FromThreat(num_clients, c, s, a));
        if (counts.n1 < 1) {
          ++report.skipped;
          continue;
        }
        LIGHTDP_ASSIGN_OR_RETURN(
            const DisturbanceCovariance cov,
            DisturbanceCovariance::FromCounts(counts.n1, counts.n2, plan));
        LIGHTDP_ASSIGN_OR_RETURN(const auto verdicts,
                                 CheckDpCondition(cov, budget, per_round));
        RealizationResult result;
        result.counts = counts;
        result.condition_number = cov.condition_number();
        LIGHTDP_RETURN_IF_ERROR(
            internal::Record(report, std::move(result), verdicts));
      }
    }
  }
  return report;
}

// Brute force over every colluder subset (|N_C| <= max_c) and straggler subset
// (|N_S| <= max_s). Exponential; restricted to N <= 8. Supports
// heterogeneous plans.
inline absl::StatusOr<AuditReport> WorstCaseAuditSubsets(
    int num_clients, int max_colluders, int max_stragglers,
    const NoisePlan& plan, const DpBudget& budget, bool per_round = true) {
  constexpr int kMaxClients = 8;
  LIGHTDP_RETURN_IF_ERROR(
      internal::CheckThreat(num_clients, max_colluders, max_stragglers));
  if (num_clients > kMaxClients) {
    return absl::InvalidArgumentError(absl::StrCat(
        "WorstCaseAuditSubsets: N=", num_clients, " exceeds ", kMaxClients));
  }
  LIGHTDP_RETURN_IF_ERROR(budget.Validate());
  AuditReport report;
  report.num_clients = num_clients;
  report.max_colluders = max_colluders;
  report.max_stragglers = max_stragglers;
  report.per_round = per_round;
  report.budget = budget;
  const uint32_t full = 1u << num_clients;
  auto members = [num_clients](uint32_t mask) {
    std::set<int> out;
    for (int i = 0; i < num_clients; ++i) {
      if (mask & (1u << i)) out.insert(i);
    }
    return out;
  };
  for (uint32_t cmask = 0; cmask < full; ++cmask) {
    if (std::popcount(cmask) > max_colluders) continue;
    for (uint32_t smask = 0; smask < full; ++smask) {
      if (std::popcount(smask) > max_stragglers) continue;
      const std::set<int> colluders = members(cmask);
      const std::set<int> stragglers = members(smask);
      LIGHTDP_ASSIGN_OR_RETURN(
          const ClientPartition part,
          PartitionClients(num_clients, colluders, stragglers));
      if (part.honest_survivors.empty()) {
        ++report.skipped;
        continue;
      }
      LIGHTDP_ASSIGN_OR_RETURN(
          const DisturbanceCovariance cov,
          DisturbanceCovariance::FromSets(part.honest_survivors,
                                          part.honest_stragglers, plan));
      LIGHTDP_ASSIGN_OR_RETURN(const auto verdicts,
                               CheckDpCondition(cov, budget, per_round));
      RealizationResult result;
      const int c = std::popcount(cmask);
      const int s = std::popcount(smask);
      result.counts = {c, s, std::popcount(cmask & smask),
                       static_cast<int>(part.honest_survivors.size()),
                       static_cast<int>(part.honest_stragglers.size())};
      result.colluders.assign(colluders.begin(), colluders.end());
      result.stragglers.assign(stragglers.begin(), stragglers.end());
      result.condition_number = cov.condition_number();
      LIGHTDP_RETURN_IF_ERROR(
          internal::Record(report, std::move(result), verdicts));
    }
  }
  return report;
}

// Standard normal upper tail Pr(Z >= x).
inline double NormalUpperTail(double x) {
  return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

// Pr(|mean + sd Z| >= epsilon).
inline double TwoSidedTail(double mean, double sd, double epsilon) {
  if (sd == 0.0) return std::abs(mean) >= epsilon ? 1.0 : 0.0;
  return NormalUpperTail((epsilon - mean) / sd) +
         NormalUpperTail((epsilon + mean) / sd);
}

struct TailCheckResult {
  int64_t samples = 0;
  int64_t exceedances = 0;
  double empirical_tail = 0.0;  // Pr(|L_i| >= epsilon) by simulation
  double binomial_se = 0.0;     // sqrt(delta (1 - delta) / samples)
  // Gaussian-CDF tails of N(mean, var) with the mean shift kept.
  double analytic_tail = 0.0;        // exact variance
  double analytic_tail_bound = 0.0;  // variance of the sufficient condition
  bool within_delta = false;  // empirical <= delta + 3 SE
};

// Samples disturbance vectors x ~ N(0, C), evaluates the privacy loss of row
// `row` for a worst-case shift ||v|| = Delta,
//   L = Delta (C^-1 x)_row + C^-1_row,row Delta^2 / 2,
// and counts |L| >= epsilon. Requires samples * delta >= 10 so the tail is
// resolvable.
inline absl::StatusOr<TailCheckResult> MonteCarloTailCheck(
    const DisturbanceCovariance& cov, int row, const DpBudget& budget,
    int64_t samples, const MasterSeed& seed) {
  LIGHTDP_RETURN_IF_ERROR(budget.Validate());
  if (row < 0 || row >= cov.size()) {
    return absl::InvalidArgumentError("MonteCarloTailCheck: bad row");
  }
  if (samples < 1 || static_cast<double>(samples) * budget.delta < 10.0) {
    return absl::InvalidArgumentError(absl::StrCat(
        "MonteCarloTailCheck: ", samples, " samples cannot resolve a tail of ",
        budget.delta, " (need samples * delta >= 10)"));
  }
  const int n = cov.size();
  const double v = budget.sensitivity;
  const Eigen::VectorXd weights = cov.inverse().row(row).transpose();
  // L = v * w^T L_chol z + shift, so only the projected row matters.
  const Eigen::VectorXd projected = cov.cholesky().transpose() * weights;
  const double shift = 0.5 * cov.inverse()(row, row) * v * v;

  const DerivedSeed stream = DeriveAuxiliarySeed(seed, "tail-check", row);
  constexpr int64_t kChunk = 1 << 14;
  std::vector<double> z(static_cast<size_t>(kChunk) * n);
  int64_t hits = 0;
  for (int64_t start = 0; start < samples; start += kChunk) {
    const int64_t count = std::min(kChunk, samples - start);
    std::span<double> chunk(z.data(), static_cast<size_t>(count) * n);
    FillStandardNormal(stream, 0, static_cast<uint64_t>(start) * n, chunk);
    for (int64_t k = 0; k < count; ++k) {
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += projected[j] * chunk[k * n + j];
      if (std::abs(v * dot + shift) >= budget.epsilon) ++hits;
    }
  }
  LIGHTDP_ASSIGN_OR_RETURN(const PrivacyLossMoments m,
                           ComputePrivacyLossMoments(cov, row, v));
  TailCheckResult out;
  out.samples = samples;
  out.exceedances = hits;
  out.empirical_tail = static_cast<double>(hits) / samples;
  out.binomial_se = std::sqrt(budget.delta * (1.0 - budget.delta) / samples);
  out.analytic_tail =
      TwoSidedTail(m.mean, std::sqrt(m.exact_variance), budget.epsilon);
  out.analytic_tail_bound =
      TwoSidedTail(m.mean, std::sqrt(m.variance), budget.epsilon);
  out.within_delta = out.empirical_tail <= budget.delta + 3.0 * out.binomial_se;
  return out;
}

// Spreads a T-round budget over the rounds: every variance is multiplied by
// sqrt(T), i.e. every standard deviation by T^(1/4).
inline absl::StatusOr<NoisePlan> ComposeOverRounds(const NoisePlan& plan,
                                                   int rounds) {
  if (rounds < 1) {
    return absl::InvalidArgumentError(
        absl::StrCat("ComposeOverRounds: rounds must be >= 1, got ", rounds));
  }
  LIGHTDP_RETURN_IF_ERROR(plan.Validate());
  const double factor = std::pow(static_cast<double>(rounds), 0.25);
  NoisePlan out = plan;
  if (rounds == 1) return out;
  out.sigma_k *= factor;
  out.sigma_u *= factor;
  for (auto& [pair, s] : out.pair_sigma) s *= factor;
  for (auto& [client, s] : out.client_sigma) s *= factor;
  return out;
}

}  // namespace lightdp

#endif  // LIGHTDP_PRIVACY_AUDIT_H_

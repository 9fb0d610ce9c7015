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

// Monte Carlo self-checks run by `lightdp selftest`. Sample counts scale with
// the caller's budget; every tolerance is a multiple of the estimator's
// standard error.

#ifndef LIGHTDP_VALIDATION_H_
#define LIGHTDP_VALIDATION_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "absl/strings/str_cat.h"
#include "lightdp/masking.h"
#include "lightdp/noise.h"
#include "lightdp/planner.h"
#include "lightdp/privacy_audit.h"

namespace lightdp {

struct SelfTestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace internal {

inline SelfTestCheck CheckMaskCancellation(const MasterSeed& master) {
  constexpr int kClients = 8;
  constexpr int kDim = 16;
  NoisePlan plan;
  plan.sigma_k = 1.3;
  plan.sigma_u = 0.7;
  const DerivedSeed data = DeriveAuxiliarySeed(master, "selftest-params");
  std::vector<MaskedUpdate> masked;
  std::vector<double> truth(kDim, 0.0), noise_mean(kDim, 0.0);
  std::set<int> all;
  for (int i = 0; i < kClients; ++i) {
    ClientUpdate u{i, std::vector<double>(kDim)};
    FillStandardNormal(data, i, 0, u.params);
    auto m = MaskUpdate(u, 1, plan, kClients, master);
    auto n = IndividualNoise(DeriveClientSeed(master, i), 1, kDim, plan.sigma_u);
    if (!m.ok() || !n.ok()) return {"mask-cancellation", false, "mask error"};
    for (int k = 0; k < kDim; ++k) {
      truth[k] += u.params[k] / kClients;
      noise_mean[k] += (*n)[k] / kClients;
    }
    masked.push_back(*std::move(m));
    all.insert(i);
  }
  auto agg = Aggregate(masked, all);
  if (!agg.ok()) return {"mask-cancellation", false, "aggregate error"};
  double worst = 0.0;
  for (int k = 0; k < kDim; ++k) {
    worst = std::max(worst, std::abs((*agg)[k] - truth[k] - noise_mean[k]));
  }
  const bool ok = worst <= 1e-9 * plan.sigma_k;
  return {"mask-cancellation", ok,
          absl::StrCat("max residual ", worst, " (limit ",
                       1e-9 * plan.sigma_k, ")")};
}

// Disturbances of I1 reconstructed from real masked uploads, compared with
// the closed-form covariance entrywise.
inline SelfTestCheck CheckCovariance(const MasterSeed& master,
                                     int64_t samples) {
  constexpr int kClients = 6;
  constexpr int kDim = 4096;
  const std::set<int> colluders = {0};
  const std::set<int> stragglers = {1, 2};
  NoisePlan plan;
  plan.sigma_k = 0.8;
  plan.sigma_u = 0.6;
  auto part = PartitionClients(kClients, colluders, stragglers);
  if (!part.ok()) return {"disturbance-covariance", false, "setup"};
  auto cov = DisturbanceCovariance::FromSets(part->honest_survivors,
                                             part->honest_stragglers, plan);
  if (!cov.ok()) return {"disturbance-covariance", false, "setup"};
  const int n1 = cov->size();
  const int rounds = static_cast<int>(std::max<int64_t>(1, samples / kDim));
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n1, n1);
  std::vector<std::vector<double>> m(n1);
  for (int r = 1; r <= rounds; ++r) {
    for (int a = 0; a < n1; ++a) {
      const int i = part->honest_survivors[a];
      auto up = MaskUpdate({i, std::vector<double>(kDim, 0.0)}, r, plan,
                           kClients, master);
      if (!up.ok()) return {"disturbance-covariance", false, "mask error"};
      m[a] = up->params;
      for (int c : colluders) {
        const PairKey pair = *PairKey::Create(i, c);
        auto r_ic = PairwiseNoise({DerivePairSeed(master, pair), uint64_t(r),
                                   kDim}, plan.sigma_k);
        const double sign = i == pair.lo() ? 1.0 : -1.0;
        for (int k = 0; k < kDim; ++k) m[a][k] -= sign * (*r_ic)[k];
      }
    }
    for (int a = 0; a < n1; ++a) {
      for (int b = 0; b < n1; ++b) {
        double acc = 0.0;
        for (int k = 0; k < kDim; ++k) acc += m[a][k] * m[b][k];
        sum(a, b) += acc;
      }
    }
  }
  const double n = static_cast<double>(rounds) * kDim;
  const Eigen::MatrixXd& c = cov->matrix();
  double worst_z = 0.0;
  for (int a = 0; a < n1; ++a) {
    for (int b = 0; b < n1; ++b) {
      const double se = std::sqrt((c(a, a) * c(b, b) + c(a, b) * c(a, b)) / n);
      worst_z = std::max(worst_z, std::abs(sum(a, b) / n - c(a, b)) / se);
    }
  }
  return {"disturbance-covariance", worst_z <= 4.0,
          absl::StrCat(n, " samples, worst entry ", worst_z, " SE")};
}

inline SelfTestCheck CheckPrivacyLoss(const MasterSeed& master,
                                      int64_t samples) {
  NoisePlan plan;
  plan.sigma_k = 1.0;
  plan.sigma_u = 1.0;
  auto cov = DisturbanceCovariance::FromCounts(2, 1, plan);
  if (!cov.ok()) return {"privacy-loss-moments", false, "setup"};
  auto moments = ComputePrivacyLossMoments(*cov, 0, 1.0);
  if (!moments.ok()) return {"privacy-loss-moments", false, "setup"};
  const Eigen::VectorXd w =
      cov->cholesky().transpose() * cov->inverse().row(0).transpose();
  const DerivedSeed stream = DeriveAuxiliarySeed(master, "selftest-loss");
  std::vector<double> z(2 * static_cast<size_t>(samples));
  FillStandardNormal(stream, 0, 0, z);
  double s1 = 0.0, s2 = 0.0;
  for (int64_t k = 0; k < samples; ++k) {
    const double l = w[0] * z[2 * k] + w[1] * z[2 * k + 1] + moments->mean;
    s1 += l;
    s2 += l * l;
  }
  const double mean = s1 / samples;
  const double var = s2 / samples - mean * mean;
  const double mean_se = std::sqrt(moments->exact_variance / samples);
  const double var_se = moments->exact_variance * std::sqrt(2.0 / samples);
  const bool ok = std::abs(mean - moments->mean) <= 4.0 * mean_se &&
                  std::abs(var - moments->exact_variance) <= 4.0 * var_se;
  return {"privacy-loss-moments", ok,
          absl::StrCat("mean ", mean, " vs ", moments->mean, "; variance ",
                       var, " vs ", moments->exact_variance,
                       " (sufficient-condition form ", moments->variance,
                       ")")};
}

inline SelfTestCheck CheckTail(const MasterSeed& master, int64_t samples) {
  const DpBudget budget{1.0, 0.05, 1.0, 1};
  NoisePlan plan;
  plan.sigma_k = 0.5;
  plan.sigma_u = 1.0;
  auto cov = DisturbanceCovariance::FromCounts(5, 2, plan);
  if (!cov.ok()) return {"dp-tail", false, "setup"};
  auto v = CheckDpCondition(*cov, budget);
  if (!v.ok()) return {"dp-tail", false, "setup"};
  const double scale = budget.RequiredScale() / v->front().lhs;
  plan.sigma_k *= scale;
  plan.sigma_u *= scale;
  auto tight = DisturbanceCovariance::FromCounts(5, 2, plan);
  if (!tight.ok()) return {"dp-tail", false, "setup"};
  auto tail = MonteCarloTailCheck(*tight, 0, budget, samples, master);
  if (!tail.ok()) {
    return {"dp-tail", false, std::string(tail.status().message())};
  }
  return {"dp-tail", tail->within_delta,
          absl::StrCat("empirical ", tail->empirical_tail, " vs delta ",
                       budget.delta, " + 3 SE ", 3.0 * tail->binomial_se)};
}

inline SelfTestCheck CheckPlannerAudit() {
  const ThreatModel threat{50, 10, StragglerDistribution::Uniform(10)};
  const DpBudget budget{6.0, 1e-5, 1.0, 1};
  auto result = OptimalVariances(threat, budget);
  if (!result.ok()) {
    return {"planner-audit", false, std::string(result.status().message())};
  }
  auto audit = WorstCaseAudit(50, 10, 10, result->plan, budget);
  if (!audit.ok()) {
    return {"planner-audit", false, std::string(audit.status().message())};
  }
  return {"planner-audit", audit->passed,
          absl::StrCat("min margin ", audit->min_margin, " over ",
                       audit->realizations.size(), " realizations")};
}

}  // namespace internal

inline std::vector<SelfTestCheck> RunSelfTest(int64_t samples, uint64_t seed) {
  const MasterSeed master = MasterSeed::FromU64(seed);
  samples = std::max<int64_t>(samples, 1000);
  return {internal::CheckMaskCancellation(master),
          internal::CheckCovariance(master, samples),
          internal::CheckPrivacyLoss(master, samples),
          internal::CheckTail(master, samples),
          internal::CheckPlannerAudit()};
}

}  // namespace lightdp

#endif  // LIGHTDP_VALIDATION_H_

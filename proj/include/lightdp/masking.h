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

// Protocol arithmetic: local masking with pairwise and individual noise,
// FedAvg aggregation over the clients that survive a round, and the
// closed-form per-coordinate variances of every disturbance term.
//
// Sign convention (part of the wire contract): for a pair (lo, hi), client lo
// adds r_{lo,hi} and client hi subtracts it. Clients are indexed 0..N-1.

#ifndef LIGHTDP_MASKING_H_
#define LIGHTDP_MASKING_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "lightdp/noise.h"
#include "lightdp/status_macros.h"

namespace lightdp {

// Standard deviations of the pairwise (sigma_k) and individual (sigma_u)
// terms. The per-pair / per-client overrides describe heterogeneous plans and
// are used by the privacy audit; the planner only emits homogeneous plans.
struct NoisePlan {
  double sigma_k = 0.0;
  double sigma_u = 0.0;
  std::map<PairKey, double> pair_sigma;
  std::map<int, double> client_sigma;

  double PairSigma(const PairKey& pair) const {
    auto it = pair_sigma.find(pair);
    return it == pair_sigma.end() ? sigma_k : it->second;
  }
  double ClientSigma(int client) const {
    auto it = client_sigma.find(client);
    return it == client_sigma.end() ? sigma_u : it->second;
  }
  bool IsHomogeneous() const {
    return pair_sigma.empty() && client_sigma.empty();
  }
  bool operator==(const NoisePlan&) const = default;

  absl::Status Validate() const {
    auto ok = [](double s) { return std::isfinite(s) && s >= 0.0; };
    if (!ok(sigma_k) || !ok(sigma_u)) {
      return absl::InvalidArgumentError(absl::StrCat(
          "NoisePlan: sigmas must be finite and >= 0 (sigma_k=", sigma_k,
          ", sigma_u=", sigma_u, ")"));
    }
    for (const auto& [pair, s] : pair_sigma) {
      if (!ok(s)) {
        return absl::InvalidArgumentError(absl::StrCat(
            "NoisePlan: bad sigma for pair (", pair.lo(), ",", pair.hi(), ")"));
      }
    }
    for (const auto& [client, s] : client_sigma) {
      if (!ok(s)) {
        return absl::InvalidArgumentError(
            absl::StrCat("NoisePlan: bad sigma for client ", client));
      }
    }
    return absl::OkStatus();
  }
};

struct ClientUpdate {
  int client = 0;
  std::vector<double> params;
};

struct MaskedUpdate {
  int client = 0;
  std::vector<double> params;
};

// One protocol round as seen by the simulator.
struct RoundTrace {
  uint64_t round = 0;
  std::vector<int> stragglers;        // N_S, ascending
  std::vector<MaskedUpdate> masked;   // survivors only; empty unless recorded
  std::vector<double> aggregate;      // omega^(t)
  std::vector<double> global_noise;   // n_D: aggregate minus survivor mean
};

namespace internal {

template <typename PairSeedFn, typename ClientSeedFn>
absl::StatusOr<MaskedUpdate> MaskWith(const ClientUpdate& update,
                                      uint64_t round, const NoisePlan& plan,
                                      int num_clients, PairSeedFn pair_seed,
                                      ClientSeedFn client_seed) {
  const int self = update.client;
  if (self < 0 || self >= num_clients) {
    return absl::InvalidArgumentError(absl::StrCat(
        "MaskUpdate: client ", self, " outside [0, ", num_clients, ")"));
  }
  const size_t dim = update.params.size();
  if (dim == 0) {
    return absl::InvalidArgumentError("MaskUpdate: empty parameter vector");
  }
  for (double x : update.params) {
    if (!std::isfinite(x)) {
      return absl::InvalidArgumentError(absl::StrCat(
          "MaskUpdate: client ", self, " has non-finite parameters"));
    }
  }
  LIGHTDP_RETURN_IF_ERROR(plan.Validate());

  MaskedUpdate out{self, update.params};
  for (int other = 0; other < num_clients; ++other) {
    if (other == self) continue;
    LIGHTDP_ASSIGN_OR_RETURN(const PairKey pair, PairKey::Create(self, other));
    const double sigma = plan.PairSigma(pair);
    if (sigma == 0.0) continue;
    LIGHTDP_ASSIGN_OR_RETURN(
        const std::vector<double> noise,
        PairwiseNoise({pair_seed(pair), round, dim}, sigma));
    if (noise.size() != dim) {
      return absl::InternalError("MaskUpdate: pairwise noise size mismatch");
    }
    const double sign = self == pair.lo() ? 1.0 : -1.0;
    for (size_t k = 0; k < dim; ++k) out.params[k] += sign * noise[k];
  }
  const double sigma_u = plan.ClientSigma(self);
  if (sigma_u > 0.0) {
    LIGHTDP_ASSIGN_OR_RETURN(
        const std::vector<double> noise,
        IndividualNoise(client_seed(self), round, dim, sigma_u));
    for (size_t k = 0; k < dim; ++k) out.params[k] += noise[k];
  }
  return out;
}

}  // namespace internal

// Masks one client's local parameters:
//   masked_i = w_i + sum_{a > i} r_ia - sum_{b < i} r_bi + n_i.
inline absl::StatusOr<MaskedUpdate> MaskUpdate(const ClientUpdate& update,
                                               uint64_t round,
                                               const NoisePlan& plan,
                                               int num_clients,
                                               const MasterSeed& master) {
  return internal::MaskWith(
      update, round, plan, num_clients,
      [&master](const PairKey& pair) { return DerivePairSeed(master, pair); },
      [&master](int client) { return DeriveClientSeed(master, client); });
}

// Pair and client seeds for one run. They do not depend on the round, so a
// simulator derives them once.
class SeedBook {
 public:
  SeedBook(int num_clients, const MasterSeed& master)
      : num_clients_(std::max(num_clients, 0)) {
    clients_.reserve(num_clients_);
    for (int i = 0; i < num_clients_; ++i) {
      clients_.push_back(DeriveClientSeed(master, i));
    }
    pairs_.reserve(static_cast<size_t>(num_clients_) * (num_clients_ - 1) / 2);
    for (int a = 0; a < num_clients_; ++a) {
      for (int b = a + 1; b < num_clients_; ++b) {
        pairs_.push_back(DerivePairSeed(master, *PairKey::Create(a, b)));
      }
    }
  }

  int num_clients() const { return num_clients_; }
  const DerivedSeed& client(int i) const { return clients_[i]; }
  const DerivedSeed& pair(const PairKey& key) const {
    const size_t lo = key.lo();
    const size_t row_start = lo * num_clients_ - lo * (lo + 1) / 2;
    return pairs_[row_start + (key.hi() - lo - 1)];
  }

 private:
  int num_clients_;
  std::vector<DerivedSeed> clients_;
  std::vector<DerivedSeed> pairs_;
};

inline absl::StatusOr<MaskedUpdate> MaskUpdate(const ClientUpdate& update,
                                               uint64_t round,
                                               const NoisePlan& plan,
                                               const SeedBook& seeds) {
  return internal::MaskWith(
      update, round, plan, seeds.num_clients(),
      [&seeds](const PairKey& pair) -> const DerivedSeed& {
        return seeds.pair(pair);
      },
      [&seeds](int client) -> const DerivedSeed& {
        return seeds.client(client);
      });
}

namespace internal {

// Survivor updates in ascending client order; errors on gaps or mismatch.
inline absl::StatusOr<std::vector<const MaskedUpdate*>> CollectSurvivors(
    std::span<const MaskedUpdate> masked, const std::set<int>& survivors) {
  if (survivors.empty()) {
    return absl::FailedPreconditionError(
        "protocol failure: no client survived the round");
  }
  std::map<int, const MaskedUpdate*> by_client;
  for (const MaskedUpdate& m : masked) by_client[m.client] = &m;
  std::vector<const MaskedUpdate*> picked;
  picked.reserve(survivors.size());
  for (int client : survivors) {
    auto it = by_client.find(client);
    if (it == by_client.end()) {
      return absl::InvalidArgumentError(
          absl::StrCat("Aggregate: no masked update for survivor ", client));
    }
    picked.push_back(it->second);
  }
  const size_t dim = picked.front()->params.size();
  for (const MaskedUpdate* m : picked) {
    if (m->params.size() != dim) {
      return absl::InvalidArgumentError(absl::StrCat(
          "Aggregate: dimension mismatch (client ", m->client, " has ",
          m->params.size(), ", expected ", dim, ")"));
    }
  }
  return picked;
}

}  // namespace internal

// FedAvg with equal dataset sizes: mean of the survivors' masked updates,
// summed in ascending client order.
inline absl::StatusOr<std::vector<double>> Aggregate(
    std::span<const MaskedUpdate> masked, const std::set<int>& survivors) {
  LIGHTDP_ASSIGN_OR_RETURN(const auto picked,
                           internal::CollectSurvivors(masked, survivors));
  std::vector<double> sum(picked.front()->params.size(), 0.0);
  for (const MaskedUpdate* m : picked) {
    for (size_t k = 0; k < sum.size(); ++k) sum[k] += m->params[k];
  }
  const double inv = 1.0 / static_cast<double>(picked.size());
  for (double& x : sum) x *= inv;
  return sum;
}

// FedAvg weighted by dataset size. The privacy analysis in this library
// assumes equal weights; weights must be supplied explicitly.
inline absl::StatusOr<std::vector<double>> WeightedAggregate(
    std::span<const MaskedUpdate> masked, const std::set<int>& survivors,
    const std::map<int, double>& dataset_sizes) {
  LIGHTDP_ASSIGN_OR_RETURN(const auto picked,
                           internal::CollectSurvivors(masked, survivors));
  std::vector<double> sum(picked.front()->params.size(), 0.0);
  double total = 0.0;
  for (const MaskedUpdate* m : picked) {
    auto it = dataset_sizes.find(m->client);
    if (it == dataset_sizes.end() || !(it->second > 0.0)) {
      return absl::InvalidArgumentError(absl::StrCat(
          "WeightedAggregate: missing or non-positive size for client ",
          m->client));
    }
    total += it->second;
    for (size_t k = 0; k < sum.size(); ++k) {
      sum[k] += it->second * m->params[k];
    }
  }
  for (double& x : sum) x /= total;
  return sum;
}

// I1 (honest survivors) and I2 (honest stragglers) of one realization.
struct ClientPartition {
  std::vector<int> honest_survivors;
  std::vector<int> honest_stragglers;
};

inline absl::StatusOr<ClientPartition> PartitionClients(
    int num_clients, const std::set<int>& colluders,
    const std::set<int>& stragglers) {
  for (const std::set<int>* s : {&colluders, &stragglers}) {
    if (!s->empty() && (*s->begin() < 0 || *s->rbegin() >= num_clients)) {
      return absl::InvalidArgumentError(
          "PartitionClients: client index out of range");
    }
  }
  ClientPartition out;
  for (int i = 0; i < num_clients; ++i) {
    if (colluders.contains(i)) continue;
    (stragglers.contains(i) ? out.honest_stragglers : out.honest_survivors)
        .push_back(i);
  }
  return out;
}

// Per-coordinate variance of n_D for a homogeneous plan and S stragglers:
// (S sigma_k^2 + sigma_u^2) / (N - S).
inline absl::StatusOr<double> GlobalNoiseVariance(int num_clients,
                                                  int num_stragglers,
                                                  const NoisePlan& plan) {
  if (num_stragglers < 0 || num_stragglers >= num_clients) {
    return absl::InvalidArgumentError(
        absl::StrCat("GlobalNoiseVariance: need 0 <= S < N, got S=",
                     num_stragglers, ", N=", num_clients));
  }
  LIGHTDP_RETURN_IF_ERROR(plan.Validate());
  if (!plan.IsHomogeneous()) {
    return absl::InvalidArgumentError(
        "GlobalNoiseVariance: heterogeneous plan needs the straggler set");
  }
  const double ks = plan.sigma_k * plan.sigma_k;
  const double us = plan.sigma_u * plan.sigma_u;
  return (num_stragglers * ks + us) / (num_clients - num_stragglers);
}

// General form for an explicit straggler set:
// sum_{i not in N_S} (sum_{j in N_S} sigma_ij^2 + sigma_i^2) / (N - S)^2.
inline absl::StatusOr<double> GlobalNoiseVariance(
    int num_clients, const std::set<int>& stragglers, const NoisePlan& plan) {
  const int s = static_cast<int>(stragglers.size());
  if (s >= num_clients) {
    return absl::InvalidArgumentError(
        "GlobalNoiseVariance: every client straggles");
  }
  LIGHTDP_RETURN_IF_ERROR(plan.Validate());
  double total = 0.0;
  for (int i = 0; i < num_clients; ++i) {
    if (stragglers.contains(i)) continue;
    for (int j : stragglers) {
      if (j < 0 || j >= num_clients) {
        return absl::InvalidArgumentError(
            "GlobalNoiseVariance: straggler index out of range");
      }
      LIGHTDP_ASSIGN_OR_RETURN(const PairKey pair, PairKey::Create(i, j));
      total += std::pow(plan.PairSigma(pair), 2);
    }
    total += std::pow(plan.ClientSigma(i), 2);
  }
  const double denom = static_cast<double>(num_clients - s);
  return total / (denom * denom);
}

namespace internal {

inline absl::Status CheckDisjoint(std::span<const int> a,
                                  std::span<const int> b) {
  const std::set<int> sa(a.begin(), a.end());
  if (sa.size() != a.size()) {
    return absl::InvalidArgumentError("client set has duplicates");
  }
  const std::set<int> sb(b.begin(), b.end());
  if (sb.size() != b.size()) {
    return absl::InvalidArgumentError("client set has duplicates");
  }
  for (int x : b) {
    if (sa.contains(x)) {
      return absl::InvalidArgumentError(
          absl::StrCat("I1 and I2 overlap at client ", x));
    }
  }
  return absl::OkStatus();
}

}  // namespace internal

// Per-coordinate variance of m_i, the part of client i's mask the adversary
// cannot remove: sum_{j != i, j in I1 u I2} sigma_ij^2 + sigma_i^2.
inline absl::StatusOr<double> LocalDisturbanceVariance(
    int client, std::span<const int> honest_survivors,
    std::span<const int> honest_stragglers, const NoisePlan& plan) {
  LIGHTDP_RETURN_IF_ERROR(
      internal::CheckDisjoint(honest_survivors, honest_stragglers));
  if (std::find(honest_survivors.begin(), honest_survivors.end(), client) ==
      honest_survivors.end()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "LocalDisturbanceVariance: client ", client, " is not in I1"));
  }
  LIGHTDP_RETURN_IF_ERROR(plan.Validate());
  double total = std::pow(plan.ClientSigma(client), 2);
  for (std::span<const int> group : {honest_survivors, honest_stragglers}) {
    for (int j : group) {
      if (j == client) continue;
      LIGHTDP_ASSIGN_OR_RETURN(const PairKey pair, PairKey::Create(client, j));
      total += std::pow(plan.PairSigma(pair), 2);
    }
  }
  return total;
}

// Per-coordinate variance of m_D, the unrevealed and uncanceled part of the
// global noise: sum_{i in I1} (sum_{j in I2} sigma_ij^2 + sigma_i^2)/(N-S)^2.
inline absl::StatusOr<double> ResidualDisturbanceVariance(
    std::span<const int> honest_survivors,
    std::span<const int> honest_stragglers, const NoisePlan& plan,
    int num_clients, int num_stragglers) {
  LIGHTDP_RETURN_IF_ERROR(
      internal::CheckDisjoint(honest_survivors, honest_stragglers));
  if (num_stragglers < 0 || num_stragglers >= num_clients) {
    return absl::InvalidArgumentError(
        "ResidualDisturbanceVariance: need 0 <= S < N");
  }
  LIGHTDP_RETURN_IF_ERROR(plan.Validate());
  double total = 0.0;
  for (int i : honest_survivors) {
    for (int j : honest_stragglers) {
      LIGHTDP_ASSIGN_OR_RETURN(const PairKey pair, PairKey::Create(i, j));
      total += std::pow(plan.PairSigma(pair), 2);
    }
    total += std::pow(plan.ClientSigma(i), 2);
  }
  const double denom = static_cast<double>(num_clients - num_stragglers);
  return total / (denom * denom);
}

}  // namespace lightdp

#endif  // LIGHTDP_MASKING_H_

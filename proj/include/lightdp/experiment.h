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

// Experiment configuration, reports and sweep driver behind the command-line
// tool. Configs are JSON documents; unknown keys are rejected with the JSON
// pointer of the offending value.

#ifndef LIGHTDP_EXPERIMENT_H_
#define LIGHTDP_EXPERIMENT_H_

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <sodium.h>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_join.h"
#include "json.hpp"
#include "lightdp/fl_sim.h"
#include "lightdp/masking.h"
#include "lightdp/noise.h"
#include "lightdp/planner.h"
#include "lightdp/privacy_audit.h"
#include "lightdp/status_macros.h"
#include "lightdp/task.h"

namespace lightdp {

inline constexpr std::string_view kVersion = "lightdp 0.1.0";
inline constexpr std::string_view kExplicitScheme = "explicit";

enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 1,
  kExitInfeasible = 2,
  kExitAuditFailure = 3,
  kExitDivergence = 4,
  kExitSelftestFailure = 5,
};

using Json = nlohmann::ordered_json;

struct ThreatSpec {
  int num_clients = 50;
  int max_colluders = 10;
  int max_stragglers = 10;
  // g(0..Sbar); empty means uniform.
  std::vector<double> straggler_probabilities;

  bool operator==(const ThreatSpec&) const = default;
};

struct PlanSpec {
  // lightdp, vanilla-ldp, smpc-dp-worstcase or explicit.
  std::string scheme = "lightdp";
  // Per-round standard deviations; explicit scheme only.
  double sigma_k = 0.0;
  double sigma_u = 0.0;

  bool operator==(const PlanSpec&) const = default;
};

struct TrainingSpec {
  int epochs = 1;
  double learning_rate = 0.05;
  int batch_size = 32;
  int num_seeds = 5;

  bool operator==(const TrainingSpec&) const = default;
};

// Empty axes fall back to the base value.
struct SweepSpec {
  std::vector<std::string> schemes;
  std::vector<double> epsilon;
  std::vector<int> max_colluders;
  std::vector<int> max_stragglers;

  bool empty() const {
    return schemes.empty() && epsilon.empty() && max_colluders.empty() &&
           max_stragglers.empty();
  }
  bool operator==(const SweepSpec&) const = default;
};

struct ExperimentConfig {
  uint64_t seed = 1;
  ThreatSpec threat;
  DpBudget budget{6.0, 1e-5, 1.0, 100};
  PlanSpec plan;
  TaskOptions task;
  TrainingSpec training;
  SweepSpec sweep;

  bool operator==(const ExperimentConfig&) const = default;
};

namespace internal {

inline std::string FormatDouble(double x) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, result.ptr);
}

inline std::string Pointer(std::string_view path, std::string_view key) {
  return absl::StrCat(std::string(path), "/", std::string(key));
}

inline absl::Status ConfigError(std::string_view where, std::string_view what) {
  return absl::InvalidArgumentError(
      absl::StrCat("config error at ", where.empty() ? "/" : std::string(where),
                   ": ", std::string(what)));
}

inline absl::Status ExpectObject(const Json& j, std::string_view path,
                                 std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) return ConfigError(path, "expected an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (std::string_view k : keys) known = known || k == key;
    if (!known) return ConfigError(Pointer(path, key), "unknown key");
  }
  return absl::OkStatus();
}

inline absl::Status ReadDouble(const Json& obj, std::string_view key,
                               std::string_view path, double& out) {
  auto it = obj.find(std::string(key));
  if (it == obj.end()) return absl::OkStatus();
  if (!it->is_number()) {
    return ConfigError(Pointer(path, key), "expected a number");
  }
  out = it->get<double>();
  return absl::OkStatus();
}

inline absl::Status ReadInt(const Json& obj, std::string_view key,
                            std::string_view path, int& out) {
  auto it = obj.find(std::string(key));
  if (it == obj.end()) return absl::OkStatus();
  if (!it->is_number_integer() ||
      it->get<int64_t>() < std::numeric_limits<int>::min() ||
      it->get<int64_t>() > std::numeric_limits<int>::max()) {
    return ConfigError(Pointer(path, key), "expected an integer");
  }
  out = static_cast<int>(it->get<int64_t>());
  return absl::OkStatus();
}

inline absl::Status ReadU64(const Json& obj, std::string_view key,
                            std::string_view path, uint64_t& out) {
  auto it = obj.find(std::string(key));
  if (it == obj.end()) return absl::OkStatus();
  if (it->is_number_unsigned()) {
    out = it->get<uint64_t>();
    return absl::OkStatus();
  }
  if (it->is_number_integer() && it->get<int64_t>() >= 0) {
    out = static_cast<uint64_t>(it->get<int64_t>());
    return absl::OkStatus();
  }
  return ConfigError(Pointer(path, key), "expected a non-negative integer");
}

inline absl::Status ReadString(const Json& obj, std::string_view key,
                               std::string_view path, std::string& out) {
  auto it = obj.find(std::string(key));
  if (it == obj.end()) return absl::OkStatus();
  if (!it->is_string()) {
    return ConfigError(Pointer(path, key), "expected a string");
  }
  out = it->get<std::string>();
  return absl::OkStatus();
}

template <typename T>
absl::Status ReadList(const Json& obj, std::string_view key,
                      std::string_view path, std::vector<T>& out) {
  auto it = obj.find(std::string(key));
  if (it == obj.end()) return absl::OkStatus();
  const std::string where = Pointer(path, key);
  if (!it->is_array()) return ConfigError(where, "expected an array");
  out.clear();
  for (size_t k = 0; k < it->size(); ++k) {
    const Json& v = (*it)[k];
    const std::string at = absl::StrCat(where, "/", k);
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) return ConfigError(at, "expected a number");
      out.push_back(v.get<double>());
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) return ConfigError(at, "expected an integer");
      out.push_back(static_cast<int>(v.get<int64_t>()));
    } else {
      if (!v.is_string()) return ConfigError(at, "expected a string");
      out.push_back(v.get<std::string>());
    }
  }
  return absl::OkStatus();
}

inline absl::Status CheckScheme(std::string_view scheme, std::string_view at) {
  if (scheme == kExplicitScheme) return absl::OkStatus();
  if (!ParseScheme(scheme).ok()) {
    return ConfigError(at, absl::StrCat("unknown scheme '", std::string(scheme),
                                        "'"));
  }
  return absl::OkStatus();
}

// Semantic checks after parsing, with the pointer of the first bad field.
inline absl::Status ValidateConfig(const ExperimentConfig& c) {
  const ThreatSpec& t = c.threat;
  if (t.num_clients < 2) {
    return ConfigError("/threat/num_clients", "must be >= 2");
  }
  if (t.max_colluders < 0 || t.max_colluders >= t.num_clients) {
    return ConfigError("/threat/max_colluders", "must be in [0, N)");
  }
  if (t.max_stragglers < 0 || t.max_stragglers >= t.num_clients) {
    return ConfigError("/threat/max_stragglers", "must be in [0, N)");
  }
  if (!t.straggler_probabilities.empty()) {
    if (static_cast<int>(t.straggler_probabilities.size()) !=
        t.max_stragglers + 1) {
      return ConfigError("/threat/straggler_probabilities",
                         "needs max_stragglers + 1 entries");
    }
    if (auto s = StragglerDistribution::FromProbabilities(
            t.straggler_probabilities);
        !s.ok()) {
      return ConfigError("/threat/straggler_probabilities",
                         std::string(s.status().message()));
    }
    if (!c.sweep.max_stragglers.empty()) {
      return ConfigError("/sweep/max_stragglers",
                         "cannot sweep Sbar with explicit probabilities");
    }
  }
  if (!(c.budget.epsilon > 0.0) || !std::isfinite(c.budget.epsilon)) {
    return ConfigError("/budget/epsilon", "must be > 0");
  }
  if (!(c.budget.delta > 0.0 && c.budget.delta < 1.0)) {
    return ConfigError("/budget/delta", "must be in (0, 1)");
  }
  if (!(c.budget.sensitivity > 0.0) || !std::isfinite(c.budget.sensitivity)) {
    return ConfigError("/budget/sensitivity", "must be > 0");
  }
  if (c.budget.rounds < 1) return ConfigError("/budget/rounds", "must be >= 1");
  LIGHTDP_RETURN_IF_ERROR(CheckScheme(c.plan.scheme, "/plan/scheme"));
  if (c.plan.scheme == kExplicitScheme) {
    if (!(c.plan.sigma_u > 0.0) || !std::isfinite(c.plan.sigma_u)) {
      return ConfigError("/plan/sigma_u", "explicit plans need sigma_u > 0");
    }
    if (!(c.plan.sigma_k >= 0.0) || !std::isfinite(c.plan.sigma_k)) {
      return ConfigError("/plan/sigma_k", "must be >= 0");
    }
  }
  if (auto s = c.task.Validate(); !s.ok()) {
    return ConfigError("/task", std::string(s.message()));
  }
  if (c.training.epochs < 1) {
    return ConfigError("/training/epochs", "must be >= 1");
  }
  if (!(c.training.learning_rate >= 0.0) ||
      !std::isfinite(c.training.learning_rate)) {
    return ConfigError("/training/learning_rate", "must be >= 0");
  }
  if (c.training.batch_size < 1 ||
      c.training.batch_size > c.task.samples_per_client) {
    return ConfigError("/training/batch_size",
                       "must be in [1, task.samples_per_client]");
  }
  if (c.training.num_seeds < 1) {
    return ConfigError("/training/num_seeds", "must be >= 1");
  }
  for (size_t k = 0; k < c.sweep.schemes.size(); ++k) {
    LIGHTDP_RETURN_IF_ERROR(CheckScheme(c.sweep.schemes[k],
                                        absl::StrCat("/sweep/schemes/", k)));
  }
  for (size_t k = 0; k < c.sweep.epsilon.size(); ++k) {
    if (!(c.sweep.epsilon[k] > 0.0) || !std::isfinite(c.sweep.epsilon[k])) {
      return ConfigError(absl::StrCat("/sweep/epsilon/", k), "must be > 0");
    }
  }
  for (size_t k = 0; k < c.sweep.max_colluders.size(); ++k) {
    const int v = c.sweep.max_colluders[k];
    if (v < 0 || v >= t.num_clients) {
      return ConfigError(absl::StrCat("/sweep/max_colluders/", k),
                         "must be in [0, N)");
    }
  }
  for (size_t k = 0; k < c.sweep.max_stragglers.size(); ++k) {
    const int v = c.sweep.max_stragglers[k];
    if (v < 0 || v >= t.num_clients) {
      return ConfigError(absl::StrCat("/sweep/max_stragglers/", k),
                         "must be in [0, N)");
    }
  }
  return absl::OkStatus();
}

}  // namespace internal

inline absl::StatusOr<ExperimentConfig> ConfigFromJson(const Json& root) {
  using internal::ExpectObject;
  using internal::ReadDouble;
  using internal::ReadInt;
  using internal::ReadList;
  using internal::ReadString;
  using internal::ReadU64;
  ExperimentConfig c;
  LIGHTDP_RETURN_IF_ERROR(ExpectObject(
      root, "",
      {"seed", "threat", "budget", "plan", "task", "training", "sweep"}));
  LIGHTDP_RETURN_IF_ERROR(ReadU64(root, "seed", "", c.seed));

  if (auto it = root.find("threat"); it != root.end()) {
    const std::string p = "/threat";
    LIGHTDP_RETURN_IF_ERROR(ExpectObject(
        *it, p,
        {"num_clients", "max_colluders", "max_stragglers",
         "straggler_probabilities"}));
    LIGHTDP_RETURN_IF_ERROR(
        ReadInt(*it, "num_clients", p, c.threat.num_clients));
    LIGHTDP_RETURN_IF_ERROR(
        ReadInt(*it, "max_colluders", p, c.threat.max_colluders));
    LIGHTDP_RETURN_IF_ERROR(
        ReadInt(*it, "max_stragglers", p, c.threat.max_stragglers));
    LIGHTDP_RETURN_IF_ERROR(ReadList(*it, "straggler_probabilities", p,
                                     c.threat.straggler_probabilities));
  }
  if (auto it = root.find("budget"); it != root.end()) {
    const std::string p = "/budget";
    LIGHTDP_RETURN_IF_ERROR(ExpectObject(
        *it, p, {"epsilon", "delta", "sensitivity", "rounds"}));
    LIGHTDP_RETURN_IF_ERROR(ReadDouble(*it, "epsilon", p, c.budget.epsilon));
    LIGHTDP_RETURN_IF_ERROR(ReadDouble(*it, "delta", p, c.budget.delta));
    LIGHTDP_RETURN_IF_ERROR(
        ReadDouble(*it, "sensitivity", p, c.budget.sensitivity));
    LIGHTDP_RETURN_IF_ERROR(ReadInt(*it, "rounds", p, c.budget.rounds));
  }
  if (auto it = root.find("plan"); it != root.end()) {
    const std::string p = "/plan";
    LIGHTDP_RETURN_IF_ERROR(
        ExpectObject(*it, p, {"scheme", "sigma_k", "sigma_u"}));
    LIGHTDP_RETURN_IF_ERROR(ReadString(*it, "scheme", p, c.plan.scheme));
    LIGHTDP_RETURN_IF_ERROR(ReadDouble(*it, "sigma_k", p, c.plan.sigma_k));
    LIGHTDP_RETURN_IF_ERROR(ReadDouble(*it, "sigma_u", p, c.plan.sigma_u));
  }
  if (auto it = root.find("task"); it != root.end()) {
    const std::string p = "/task";
    LIGHTDP_RETURN_IF_ERROR(ExpectObject(
        *it, p,
        {"kind", "dim", "samples_per_client", "heterogeneity",
         "min_feature_variance", "max_feature_variance", "label_noise",
         "regularization", "seed"}));
    std::string kind(TaskKindName(c.task.kind));
    LIGHTDP_RETURN_IF_ERROR(ReadString(*it, "kind", p, kind));
    auto parsed = ParseTaskKind(kind);
    if (!parsed.ok()) {
      return internal::ConfigError("/task/kind",
                                   std::string(parsed.status().message()));
    }
    c.task.kind = *parsed;
    LIGHTDP_RETURN_IF_ERROR(ReadInt(*it, "dim", p, c.task.dim));
    LIGHTDP_RETURN_IF_ERROR(
        ReadInt(*it, "samples_per_client", p, c.task.samples_per_client));
    LIGHTDP_RETURN_IF_ERROR(
        ReadDouble(*it, "heterogeneity", p, c.task.heterogeneity));
    LIGHTDP_RETURN_IF_ERROR(ReadDouble(*it, "min_feature_variance", p,
                                       c.task.min_feature_variance));
    LIGHTDP_RETURN_IF_ERROR(ReadDouble(*it, "max_feature_variance", p,
                                       c.task.max_feature_variance));
    LIGHTDP_RETURN_IF_ERROR(
        ReadDouble(*it, "label_noise", p, c.task.label_noise));
    LIGHTDP_RETURN_IF_ERROR(
        ReadDouble(*it, "regularization", p, c.task.regularization));
    LIGHTDP_RETURN_IF_ERROR(ReadU64(*it, "seed", p, c.task.seed));
  }
  if (auto it = root.find("training"); it != root.end()) {
    const std::string p = "/training";
    LIGHTDP_RETURN_IF_ERROR(ExpectObject(
        *it, p, {"epochs", "learning_rate", "batch_size", "num_seeds"}));
    LIGHTDP_RETURN_IF_ERROR(ReadInt(*it, "epochs", p, c.training.epochs));
    LIGHTDP_RETURN_IF_ERROR(
        ReadDouble(*it, "learning_rate", p, c.training.learning_rate));
    LIGHTDP_RETURN_IF_ERROR(
        ReadInt(*it, "batch_size", p, c.training.batch_size));
    LIGHTDP_RETURN_IF_ERROR(ReadInt(*it, "num_seeds", p, c.training.num_seeds));
  }
  if (auto it = root.find("sweep"); it != root.end()) {
    const std::string p = "/sweep";
    LIGHTDP_RETURN_IF_ERROR(ExpectObject(
        *it, p, {"schemes", "epsilon", "max_colluders", "max_stragglers"}));
    LIGHTDP_RETURN_IF_ERROR(ReadList(*it, "schemes", p, c.sweep.schemes));
    LIGHTDP_RETURN_IF_ERROR(ReadList(*it, "epsilon", p, c.sweep.epsilon));
    LIGHTDP_RETURN_IF_ERROR(
        ReadList(*it, "max_colluders", p, c.sweep.max_colluders));
    LIGHTDP_RETURN_IF_ERROR(
        ReadList(*it, "max_stragglers", p, c.sweep.max_stragglers));
  }
  c.task.num_clients = c.threat.num_clients;
  LIGHTDP_RETURN_IF_ERROR(internal::ValidateConfig(c));
  return c;
}

inline absl::StatusOr<ExperimentConfig> ParseConfig(std::string_view text,
                                                    std::string_view source) {
  Json root;
  try {
    root = Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    return absl::InvalidArgumentError(absl::StrCat(
        std::string(source), ": malformed JSON at byte ", e.byte, ": ",
        e.what()));
  }
  auto config = ConfigFromJson(root);
  if (!config.ok()) {
    return absl::InvalidArgumentError(
        absl::StrCat(std::string(source), ": ", config.status().message()));
  }
  return config;
}

inline absl::StatusOr<std::string> ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    return absl::InvalidArgumentError(absl::StrCat("cannot open ", path));
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline absl::StatusOr<ExperimentConfig> LoadConfig(const std::string& path) {
  LIGHTDP_ASSIGN_OR_RETURN(const std::string text, ReadFile(path));
  return ParseConfig(text, path);
}

inline Json ConfigToJson(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["threat"] = {{"num_clients", c.threat.num_clients},
                 {"max_colluders", c.threat.max_colluders},
                 {"max_stragglers", c.threat.max_stragglers}};
  if (!c.threat.straggler_probabilities.empty()) {
    j["threat"]["straggler_probabilities"] = c.threat.straggler_probabilities;
  }
  j["budget"] = {{"epsilon", c.budget.epsilon},
                 {"delta", c.budget.delta},
                 {"sensitivity", c.budget.sensitivity},
                 {"rounds", c.budget.rounds}};
  j["plan"] = {{"scheme", c.plan.scheme}};
  if (c.plan.scheme == kExplicitScheme) {
    j["plan"]["sigma_k"] = c.plan.sigma_k;
    j["plan"]["sigma_u"] = c.plan.sigma_u;
  }
  j["task"] = {{"kind", std::string(TaskKindName(c.task.kind))},
               {"dim", c.task.dim},
               {"samples_per_client", c.task.samples_per_client},
               {"heterogeneity", c.task.heterogeneity},
               {"min_feature_variance", c.task.min_feature_variance},
               {"max_feature_variance", c.task.max_feature_variance},
               {"label_noise", c.task.label_noise},
               {"regularization", c.task.regularization},
               {"seed", c.task.seed}};
  j["training"] = {{"epochs", c.training.epochs},
                   {"learning_rate", c.training.learning_rate},
                   {"batch_size", c.training.batch_size},
                   {"num_seeds", c.training.num_seeds}};
  j["sweep"] = {{"schemes", c.sweep.schemes},
                {"epsilon", c.sweep.epsilon},
                {"max_colluders", c.sweep.max_colluders},
                {"max_stragglers", c.sweep.max_stragglers}};
  return j;
}

inline std::string SerializeConfig(const ExperimentConfig& c) {
  return ConfigToJson(c).dump(2) + "\n";
}

// BLAKE2b-128 of the canonical serialization.
inline std::string ConfigHash(const ExperimentConfig& c) {
  internal::EnsureSodium();
  const std::string text = ConfigToJson(c).dump();
  std::array<uint8_t, 16> digest;
  crypto_generichash(digest.data(), digest.size(),
                     reinterpret_cast<const uint8_t*>(text.data()), text.size(),
                     nullptr, 0);
  return internal::ToHex(digest);
}

inline Json Provenance(const ExperimentConfig& c) {
  return {{"version", std::string(kVersion)},
          {"seed", c.seed},
          {"config_hash", ConfigHash(c)}};
}

inline ThreatModel MakeThreat(const ExperimentConfig& c, int max_colluders,
                              int max_stragglers) {
  ThreatModel threat;
  threat.num_clients = c.threat.num_clients;
  threat.max_colluders = max_colluders;
  threat.stragglers =
      c.threat.straggler_probabilities.empty()
          ? StragglerDistribution::Uniform(max_stragglers)
          : *StragglerDistribution::FromProbabilities(
                c.threat.straggler_probabilities);
  return threat;
}

// One point of a sweep.
struct CellSpec {
  std::string scheme;
  double epsilon = 0.0;
  int max_colluders = 0;
  int max_stragglers = 0;

  std::string Id() const {
    return absl::StrCat(scheme, "-eps", internal::FormatDouble(epsilon), "-c",
                        max_colluders, "-s", max_stragglers);
  }
};

inline CellSpec BaseCell(const ExperimentConfig& c) {
  return {c.plan.scheme, c.budget.epsilon, c.threat.max_colluders,
          c.threat.max_stragglers};
}

// Cartesian product in the order scheme, epsilon, Cbar, Sbar.
inline std::vector<CellSpec> SweepCells(const ExperimentConfig& c) {
  const CellSpec base = BaseCell(c);
  auto or_base = [](const auto& axis, auto value) {
    using T = decltype(value);
    return axis.empty() ? std::vector<T>{value}
                        : std::vector<T>(axis.begin(), axis.end());
  };
  std::vector<CellSpec> out;
  for (const std::string& scheme : or_base(c.sweep.schemes, base.scheme)) {
    for (double eps : or_base(c.sweep.epsilon, base.epsilon)) {
      for (int cbar : or_base(c.sweep.max_colluders, base.max_colluders)) {
        for (int sbar : or_base(c.sweep.max_stragglers, base.max_stragglers)) {
          out.push_back({scheme, eps, cbar, sbar});
        }
      }
    }
  }
  return out;
}

struct CellPlan {
  CellSpec cell;
  DpBudget budget;
  ThreatModel threat;
  NoisePlan plan;      // per-round calibration
  NoisePlan composed;  // what the simulator injects over budget.rounds
  std::optional<PlannerResult> planner;
  std::string formula;
};

inline absl::StatusOr<CellPlan> PlanCell(const ExperimentConfig& c,
                                         const CellSpec& cell) {
  CellPlan out;
  out.cell = cell;
  out.budget = c.budget;
  out.budget.epsilon = cell.epsilon;
  out.threat = MakeThreat(c, cell.max_colluders, cell.max_stragglers);
  if (cell.scheme == kExplicitScheme) {
    out.plan.sigma_k = c.plan.sigma_k;
    out.plan.sigma_u = c.plan.sigma_u;
  } else {
    LIGHTDP_ASSIGN_OR_RETURN(const Scheme scheme, ParseScheme(cell.scheme));
    if (scheme == Scheme::kLightDp) {
      LIGHTDP_ASSIGN_OR_RETURN(PlannerResult result,
                               OptimalVariances(out.threat, out.budget));
      out.plan = result.plan;
      out.planner = std::move(result);
    } else {
      LIGHTDP_ASSIGN_OR_RETURN(
          out.plan,
          BaselineVariances(out.threat.num_clients, cell.max_colluders,
                            cell.max_stragglers, out.budget, scheme));
      out.formula = std::string(BaselineFormula(scheme));
    }
  }
  LIGHTDP_ASSIGN_OR_RETURN(out.composed,
                           ComposeOverRounds(out.plan, out.budget.rounds));
  return out;
}

inline Json PlanToJson(const NoisePlan& plan) {
  return {{"sigma_k", plan.sigma_k}, {"sigma_u", plan.sigma_u}};
}

inline Json AuditSummaryJson(const AuditReport& report) {
  Json j;
  j["passed"] = report.passed;
  j["min_margin"] = report.min_margin;
  j["realizations"] = report.realizations.size();
  j["skipped"] = report.skipped;
  if (!report.realizations.empty()) {
    const RealizationResult& b = report.binding();
    j["binding"] = {{"colluders", b.counts.colluders},
                    {"stragglers", b.counts.stragglers},
                    {"overlap", b.counts.overlap},
                    {"n1", b.counts.n1},
                    {"n2", b.counts.n2},
                    {"min_margin", b.min_margin},
                    {"condition_number", b.condition_number}};
  }
  return j;
}

inline std::string DescribeBinding(const AuditReport& report) {
  if (report.realizations.empty()) return "no realization audited";
  const RealizationCounts& c = report.binding().counts;
  return absl::StrCat("binding realization C=", c.colluders,
                      " S=", c.stragglers, " A=", c.overlap, " (n1=", c.n1,
                      ", n2=", c.n2, "), margin ",
                      internal::FormatDouble(report.min_margin));
}

inline absl::StatusOr<Json> PlanReport(const ExperimentConfig& c) {
  LIGHTDP_ASSIGN_OR_RETURN(const CellPlan cell, PlanCell(c, BaseCell(c)));
  LIGHTDP_ASSIGN_OR_RETURN(
      const AuditReport audit,
      WorstCaseAudit(cell.threat.num_clients, cell.threat.max_colluders,
                     cell.threat.max_stragglers(), cell.plan, cell.budget));
  Json j;
  j["provenance"] = Provenance(c);
  j["config"] = ConfigToJson(c);
  j["scheme"] = c.plan.scheme;
  j["plan"] = PlanToJson(cell.plan);
  j["composed_plan"] = PlanToJson(cell.composed);
  j["composed_plan"]["rounds"] = cell.budget.rounds;
  if (cell.planner) {
    const PlannerResult& p = *cell.planner;
    j["planner"] = {{"mu", p.quartic.mu},
                    {"kappa", std::vector<double>(p.quartic.kappa.begin(),
                                                  p.quartic.kappa.end())},
                    {"gamma0", p.gamma0},
                    {"constraint_lhs", p.constraint_lhs},
                    {"threshold", p.threshold},
                    {"objective", p.objective}};
  } else {
    if (!cell.formula.empty()) j["formula"] = cell.formula;
    j["objective"] =
        ExpectedAggregateNoise(cell.plan, cell.threat.num_clients,
                               cell.threat.stragglers);
  }
  j["audit"] = AuditSummaryJson(audit);
  return j;
}

// Audit of an explicit per-round plan under the config's threat and budget.
inline absl::StatusOr<std::pair<Json, bool>> AuditReportFor(
    const ExperimentConfig& c, const NoisePlan& plan) {
  LIGHTDP_ASSIGN_OR_RETURN(
      const AuditReport audit,
      WorstCaseAudit(c.threat.num_clients, c.threat.max_colluders,
                     c.threat.max_stragglers, plan, c.budget));
  Json j;
  j["provenance"] = Provenance(c);
  j["plan"] = PlanToJson(plan);
  j["audit"] = AuditSummaryJson(audit);
  Json rows = Json::array();
  for (const RealizationResult& r : audit.realizations) {
    rows.push_back({{"colluders", r.counts.colluders},
                    {"stragglers", r.counts.stragglers},
                    {"overlap", r.counts.overlap},
                    {"n1", r.counts.n1},
                    {"n2", r.counts.n2},
                    {"min_margin", r.min_margin},
                    {"holds", r.holds}});
  }
  j["realizations"] = std::move(rows);
  return std::make_pair(std::move(j), audit.passed);
}

struct SeedOutcome {
  uint64_t seed = 0;
  std::string status = "ok";  // ok, diverged, error
  std::string message;
  double initial_gap = 0.0;
  double final_gap = std::numeric_limits<double>::quiet_NaN();
  double mean_stragglers = 0.0;
};

struct CellResult {
  CellSpec cell;
  std::string status = "ok";  // ok, infeasible, diverged, error
  std::string message;
  NoisePlan plan;
  NoisePlan composed;
  double audit_min_margin = std::numeric_limits<double>::quiet_NaN();
  bool audit_passed = false;
  std::vector<SeedOutcome> seeds;
  double mean_gap = std::numeric_limits<double>::quiet_NaN();
  double sd_gap = std::numeric_limits<double>::quiet_NaN();
  double se_gap = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<uint64_t> TrainingSeeds(const ExperimentConfig& c) {
  std::vector<uint64_t> out;
  for (int k = 0; k < c.training.num_seeds; ++k) out.push_back(c.seed + k);
  return out;
}

// Plans, audits and trains one cell over every training seed. Traces go to
// <trace_dir>/<cell id>/seed-<seed>.csv when trace_dir is set.
inline CellResult RunCell(const ExperimentConfig& c, const CellSpec& spec,
                          const SyntheticTask& task,
                          const std::optional<std::filesystem::path>& trace_dir) {
  CellResult out;
  out.cell = spec;
  auto planned = PlanCell(c, spec);
  if (!planned.ok()) {
    out.status = absl::IsFailedPrecondition(planned.status()) ? "infeasible"
                                                               : "error";
    out.message = std::string(planned.status().message());
    return out;
  }
  out.plan = planned->plan;
  out.composed = planned->composed;
  auto audit = WorstCaseAudit(planned->threat.num_clients, spec.max_colluders,
                              spec.max_stragglers, planned->plan,
                              planned->budget);
  if (audit.ok()) {
    out.audit_min_margin = audit->min_margin;
    out.audit_passed = audit->passed;
  }
  std::optional<std::filesystem::path> cell_dir;
  if (trace_dir) {
    cell_dir = *trace_dir / spec.Id();
    std::filesystem::create_directories(*cell_dir);
  }
  std::vector<double> gaps;
  for (uint64_t seed : TrainingSeeds(c)) {
    SeedOutcome o;
    o.seed = seed;
    TrainingConfig tc;
    tc.rounds = c.budget.rounds;
    tc.epochs = c.training.epochs;
    tc.learning_rate = c.training.learning_rate;
    tc.batch_size = c.training.batch_size;
    tc.clip_bound = c.budget.sensitivity / 2.0;
    tc.plan = planned->composed;
    tc.threat = planned->threat;
    tc.seed = seed;
    auto trace = RunTraining(tc, task);
    if (!trace.ok()) {
      o.status = absl::IsAborted(trace.status()) ? "diverged" : "error";
      o.message = std::string(trace.status().message());
      if (out.status == "ok") out.status = o.status;
    } else {
      o.initial_gap = trace->initial_gap();
      o.final_gap = trace->final_gap();
      double s = 0.0;
      for (int k : trace->straggler_counts) s += k;
      o.mean_stragglers = s / trace->straggler_counts.size();
      gaps.push_back(o.final_gap);
      if (cell_dir) {
        std::ofstream f(*cell_dir / absl::StrCat("seed-", seed, ".csv"));
        f << trace->ToCsv();
      }
    }
    out.seeds.push_back(std::move(o));
  }
  if (!gaps.empty()) {
    double mean = 0.0;
    for (double g : gaps) mean += g;
    mean /= gaps.size();
    double ss = 0.0;
    for (double g : gaps) ss += (g - mean) * (g - mean);
    out.mean_gap = mean;
    out.sd_gap = gaps.size() > 1 ? std::sqrt(ss / (gaps.size() - 1)) : 0.0;
    out.se_gap = out.sd_gap / std::sqrt(static_cast<double>(gaps.size()));
  }
  return out;
}

// Runs every cell on a pool of `parallel` workers. Results are in cell order
// regardless of scheduling.
inline absl::StatusOr<std::vector<CellResult>> RunCells(
    const ExperimentConfig& c, const std::vector<CellSpec>& cells,
    int parallel, const std::optional<std::filesystem::path>& trace_dir) {
  TaskOptions options = c.task;
  options.num_clients = c.threat.num_clients;
  LIGHTDP_ASSIGN_OR_RETURN(const SyntheticTask task,
                           SyntheticTask::Generate(options));
  std::vector<CellResult> results(cells.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t k = next++; k < cells.size(); k = next++) {
      results[k] = RunCell(c, cells[k], task, trace_dir);
    }
  };
  const int workers =
      std::max(1, std::min<int>(parallel, static_cast<int>(cells.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  return results;
}

inline std::string CellsCsv(const ExperimentConfig& c,
                            const std::vector<CellResult>& results) {
  using internal::FormatDouble;
  const std::string hash = ConfigHash(c);
  std::string out =
      "cell,scheme,epsilon,max_colluders,max_stragglers,status,sigma_k,"
      "sigma_u,audit_min_margin,seeds,mean_gap,sd_gap,se_gap,config_hash\n";
  for (const CellResult& r : results) {
    std::vector<std::string> seeds;
    for (const SeedOutcome& s : r.seeds) seeds.push_back(absl::StrCat(s.seed));
    absl::StrAppend(&out, r.cell.Id(), ",", r.cell.scheme, ",",
                    FormatDouble(r.cell.epsilon), ",", r.cell.max_colluders,
                    ",", r.cell.max_stragglers, ",", r.status, ",",
                    FormatDouble(r.plan.sigma_k), ",",
                    FormatDouble(r.plan.sigma_u), ",",
                    FormatDouble(r.audit_min_margin), ",",
                    absl::StrJoin(seeds, ";"), ",", FormatDouble(r.mean_gap),
                    ",", FormatDouble(r.sd_gap), ",", FormatDouble(r.se_gap),
                    ",", hash, "\n");
  }
  return out;
}

inline std::string SeedsCsv(const ExperimentConfig& c,
                            const std::vector<CellResult>& results) {
  using internal::FormatDouble;
  const std::string hash = ConfigHash(c);
  std::string out =
      "cell,scheme,epsilon,max_colluders,max_stragglers,seed,status,"
      "initial_gap,final_gap,mean_stragglers,config_hash\n";
  for (const CellResult& r : results) {
    for (const SeedOutcome& s : r.seeds) {
      absl::StrAppend(&out, r.cell.Id(), ",", r.cell.scheme, ",",
                      FormatDouble(r.cell.epsilon), ",", r.cell.max_colluders,
                      ",", r.cell.max_stragglers, ",", s.seed, ",", s.status,
                      ",", FormatDouble(s.initial_gap), ",",
                      FormatDouble(s.final_gap), ",",
                      FormatDouble(s.mean_stragglers), ",", hash, "\n");
    }
  }
  return out;
}

inline Json SummaryJson(const ExperimentConfig& c,
                        const std::vector<CellResult>& results) {
  Json j;
  j["provenance"] = Provenance(c);
  j["config"] = ConfigToJson(c);
  Json cells = Json::array();
  const std::string hash = ConfigHash(c);
  for (const CellResult& r : results) {
    Json cell = {{"cell", r.cell.Id()},
                 {"scheme", r.cell.scheme},
                 {"epsilon", r.cell.epsilon},
                 {"max_colluders", r.cell.max_colluders},
                 {"max_stragglers", r.cell.max_stragglers},
                 {"status", r.status}};
    if (!r.message.empty()) cell["message"] = r.message;
    cell["plan"] = PlanToJson(r.plan);
    cell["composed_plan"] = PlanToJson(r.composed);
    if (std::isfinite(r.audit_min_margin)) {
      cell["audit"] = {{"passed", r.audit_passed},
                       {"min_margin", r.audit_min_margin}};
    }
    if (std::isfinite(r.mean_gap)) {
      cell["final_gap"] = {
          {"mean", r.mean_gap}, {"sd", r.sd_gap}, {"se", r.se_gap}};
    }
    Json seeds = Json::array();
    for (const SeedOutcome& s : r.seeds) {
      Json row = {{"seed", s.seed}, {"config_hash", hash}, {"status", s.status}};
      if (std::isfinite(s.final_gap)) {
        row["initial_gap"] = s.initial_gap;
        row["final_gap"] = s.final_gap;
        row["mean_stragglers"] = s.mean_stragglers;
      }
      if (!s.message.empty()) row["message"] = s.message;
      seeds.push_back(std::move(row));
    }
    cell["seeds"] = std::move(seeds);
    cells.push_back(std::move(cell));
  }
  j["cells"] = std::move(cells);
  return j;
}

// Divergence outranks infeasibility; errors count as divergence of the run.
inline int ExitCodeFor(const std::vector<CellResult>& results) {
  int code = kExitOk;
  for (const CellResult& r : results) {
    if (r.status == "diverged" || r.status == "error") return kExitDivergence;
    if (r.status == "infeasible") code = kExitInfeasible;
  }
  return code;
}

inline absl::Status WriteSweepOutputs(const ExperimentConfig& c,
                                      const std::vector<CellResult>& results,
                                      const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    return absl::InvalidArgumentError(
        absl::StrCat("cannot create ", dir.string(), ": ", ec.message()));
  }
  std::ofstream(dir / "cells.csv") << CellsCsv(c, results);
  std::ofstream(dir / "seeds.csv") << SeedsCsv(c, results);
  std::ofstream(dir / "summary.json") << SummaryJson(c, results).dump(2) << "\n";
  std::ofstream(dir / "config.json") << SerializeConfig(c);
  return absl::OkStatus();
}

inline int ExitCodeForStatus(const absl::Status& status) {
  if (absl::IsFailedPrecondition(status)) return kExitInfeasible;
  if (absl::IsAborted(status)) return kExitDivergence;
  return kExitConfigError;
}

}  // namespace lightdp

#endif  // LIGHTDP_EXPERIMENT_H_

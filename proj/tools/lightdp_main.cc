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

// lightdp: plan, audit, simulate and sweep noise plans for masked federated
// averaging.
//
// Precedence: command-line flags override config-file values, which
// override built-in defaults.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lightdp/experiment.h"
#include "lightdp/validation.h"

namespace {

using lightdp::ExperimentConfig;
using lightdp::Json;

struct Flags {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
  int64_t samples = 200000;
  int parallel = 1;
  std::string plan;
};

int Fail(const absl::Status& status) {
  std::cerr << "lightdp: " << status.message() << "\n";
  return lightdp::ExitCodeForStatus(status);
}

absl::StatusOr<ExperimentConfig> Load(const Flags& flags) {
  ExperimentConfig config;
  if (!flags.config.empty()) {
    LIGHTDP_ASSIGN_OR_RETURN(config, lightdp::LoadConfig(flags.config));
  }
  if (flags.seed) config.seed = *flags.seed;
  return config;
}

void Emit(const Flags& flags, const std::string& file, const std::string& text) {
  std::cout << text;
  if (flags.out.empty()) return;
  std::filesystem::create_directories(flags.out);
  std::ofstream(std::filesystem::path(flags.out) / file) << text;
}

int RunPlan(const Flags& flags) {
  auto config = Load(flags);
  if (!config.ok()) return Fail(config.status());
  auto report = lightdp::PlanReport(*config);
  if (!report.ok()) return Fail(report.status());
  Emit(flags, "plan.json", report->dump(2) + "\n");
  return lightdp::kExitOk;
}

absl::StatusOr<std::string> ReadPlanInput(const std::string& path) {
  if (path == "-") {
    return std::string(std::istreambuf_iterator<char>(std::cin),
                       std::istreambuf_iterator<char>());
  }
  return lightdp::ReadFile(path);
}

int RunAudit(const Flags& flags) {
  if (flags.config.empty() && flags.plan.empty()) {
    return Fail(absl::InvalidArgumentError("audit needs --config or --plan"));
  }
  ExperimentConfig config;
  lightdp::NoisePlan plan;
  if (!flags.plan.empty()) {
    auto text = ReadPlanInput(flags.plan);
    if (!text.ok()) return Fail(text.status());
    Json doc;
    try {
      doc = Json::parse(*text);
    } catch (const Json::parse_error& e) {
      return Fail(absl::InvalidArgumentError(
          absl::StrCat(flags.plan, ": malformed plan report: ", e.what())));
    }
    const Json* sigmas = doc.contains("plan") ? &doc["plan"] : nullptr;
    if (sigmas == nullptr || !sigmas->is_object() ||
        !(*sigmas)["sigma_k"].is_number() ||
        !(*sigmas)["sigma_u"].is_number()) {
      return Fail(absl::InvalidArgumentError(absl::StrCat(
          flags.plan, ": config error at /plan: expected sigma_k and sigma_u")));
    }
    plan.sigma_k = (*sigmas)["sigma_k"].get<double>();
    plan.sigma_u = (*sigmas)["sigma_u"].get<double>();
    if (flags.config.empty()) {
      if (!doc.contains("config")) {
        return Fail(absl::InvalidArgumentError(absl::StrCat(
            flags.plan, ": plan report has no /config; pass --config")));
      }
      auto embedded = lightdp::ConfigFromJson(doc["config"]);
      if (!embedded.ok()) return Fail(embedded.status());
      config = *embedded;
      if (flags.seed) config.seed = *flags.seed;
    }
  }
  if (!flags.config.empty()) {
    auto loaded = Load(flags);
    if (!loaded.ok()) return Fail(loaded.status());
    config = *loaded;
  }
  if (flags.plan.empty()) {
    auto cell = lightdp::PlanCell(config, lightdp::BaseCell(config));
    if (!cell.ok()) return Fail(cell.status());
    plan = cell->plan;
  }
  auto report = lightdp::AuditReportFor(config, plan);
  if (!report.ok()) return Fail(report.status());
  Emit(flags, "audit.json", report->first.dump(2) + "\n");
  if (!report->second) {
    const Json& b = report->first["audit"]["binding"];
    std::cerr << "lightdp: audit failed; binding realization C="
              << b["colluders"] << " S=" << b["stragglers"]
              << " A=" << b["overlap"] << " margin "
              << report->first["audit"]["min_margin"] << "\n";
    return lightdp::kExitAuditFailure;
  }
  return lightdp::kExitOk;
}

int RunCells(const Flags& flags, bool sweep) {
  auto config = Load(flags);
  if (!config.ok()) return Fail(config.status());
  if (sweep && config->sweep.empty()) {
    return Fail(absl::InvalidArgumentError(
        "config error at /sweep: sweep needs at least one nonempty axis"));
  }
  const std::vector<lightdp::CellSpec> cells =
      sweep ? lightdp::SweepCells(*config)
            : std::vector<lightdp::CellSpec>{lightdp::BaseCell(*config)};
  std::optional<std::filesystem::path> traces;
  if (!flags.out.empty()) {
    traces = std::filesystem::path(flags.out) / "traces";
  }
  auto results = lightdp::RunCells(*config, cells, flags.parallel, traces);
  if (!results.ok()) return Fail(results.status());
  if (!flags.out.empty()) {
    if (auto s = lightdp::WriteSweepOutputs(*config, *results, flags.out);
        !s.ok()) {
      return Fail(s);
    }
  }
  if (sweep) {
    std::cout << lightdp::CellsCsv(*config, *results);
  } else {
    std::cout << lightdp::SummaryJson(*config, *results).dump(2) << "\n";
  }
  for (const lightdp::CellResult& r : *results) {
    if (r.status != "ok") {
      std::cerr << "lightdp: cell " << r.cell.Id() << " " << r.status;
      for (const lightdp::SeedOutcome& s : r.seeds) {
        if (s.status != "ok") {
          std::cerr << "; seed " << s.seed << ": " << s.message;
          break;
        }
      }
      if (!r.message.empty()) std::cerr << ": " << r.message;
      std::cerr << "\n";
    }
  }
  return lightdp::ExitCodeFor(*results);
}

int RunSelfTest(const Flags& flags) {
  const auto checks =
      lightdp::RunSelfTest(flags.samples, flags.seed.value_or(1));
  bool ok = true;
  for (const lightdp::SelfTestCheck& c : checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail
              << "\n";
    ok = ok && c.passed;
  }
  return ok ? lightdp::kExitOk : lightdp::kExitSelftestFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lightdp: noise planning and simulation for masked FedAvg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(lightdp::kVersion));
  Flags flags;
  auto add_seed = [&flags](CLI::App* cmd) {
    cmd->add_option_function<uint64_t>(
        "--seed", [&flags](uint64_t v) { flags.seed = v; },
        "Master seed (overrides the config)");
  };

  CLI::App* plan = app.add_subcommand("plan", "Compute a noise plan");
  plan->add_option("--config", flags.config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  add_seed(plan);
  plan->add_option("--out", flags.out, "Also write plan.json here");

  CLI::App* audit =
      app.add_subcommand("audit", "Check a plan against every realization");
  audit->add_option("--config", flags.config, "Experiment config (JSON)")
      ->check(CLI::ExistingFile);
  audit->add_option("--plan", flags.plan,
                    "Plan report from `lightdp plan`, or - for stdin");
  add_seed(audit);
  audit->add_option("--out", flags.out, "Also write audit.json here");

  CLI::App* simulate =
      app.add_subcommand("simulate", "Train the base cell over every seed");
  simulate->add_option("--config", flags.config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  add_seed(simulate);
  simulate->add_option("--out", flags.out, "Directory for traces and summary");

  CLI::App* sweep = app.add_subcommand("sweep", "Train every sweep cell");
  sweep->add_option("--config", flags.config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  add_seed(sweep);
  sweep->add_option("--out", flags.out, "Directory for traces and summary");
  sweep->add_option("--parallel", flags.parallel, "Worker threads")
      ->check(CLI::PositiveNumber);

  CLI::App* selftest =
      app.add_subcommand("selftest", "Run the Monte Carlo validation suite");
  selftest->add_option("--samples", flags.samples, "Samples per check")
      ->check(CLI::Range(int64_t{1000}, int64_t{1} << 40));
  add_seed(selftest);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : lightdp::kExitConfigError;
  }
  if (plan->parsed()) return RunPlan(flags);
  if (audit->parsed()) return RunAudit(flags);
  if (simulate->parsed()) return RunCells(flags, false);
  if (sweep->parsed()) return RunCells(flags, true);
  return RunSelfTest(flags);
}

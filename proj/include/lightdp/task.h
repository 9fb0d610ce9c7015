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

// Synthetic convex federated tasks with computable regularity constants.
//
// Quadratic:  F_i(w) = 1/(2m) ||A_i w - b_i||^2
// Logistic:   F_i(w) = 1/m sum log(1 + exp(-y a^T w)) + lambda/2 ||w||^2
// The global loss is the unweighted client mean. All data is drawn from the
// library's Gaussian streams, so a task is a pure function of its options.

#ifndef LIGHTDP_TASK_H_
#define LIGHTDP_TASK_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "lightdp/noise.h"
#include "lightdp/status_macros.h"

namespace lightdp {

enum class TaskKind { kQuadratic, kLogistic };

inline std::string_view TaskKindName(TaskKind kind) {
  return kind == TaskKind::kQuadratic ? "quadratic" : "logistic";
}

inline absl::StatusOr<TaskKind> ParseTaskKind(std::string_view name) {
  if (name == "quadratic") return TaskKind::kQuadratic;
  if (name == "logistic") return TaskKind::kLogistic;
  return absl::InvalidArgumentError(absl::StrCat(
      "unknown task kind '", std::string(name),
      "' (expected quadratic or logistic)"));
}

struct TaskOptions {
  TaskKind kind = TaskKind::kQuadratic;
  int num_clients = 50;
  int dim = 20;
  int samples_per_client = 64;
  // Per-client shift of the feature mean and of the local optimum.
  double heterogeneity = 0.5;
  // Feature variances are spread linearly over [min, max].
  double min_feature_variance = 0.5;
  double max_feature_variance = 2.0;
  double label_noise = 0.1;
  double regularization = 0.01;  // logistic only
  uint64_t seed = 1;

  bool operator==(const TaskOptions&) const = default;

  absl::Status Validate() const {
    if (num_clients < 1 || dim < 1 || samples_per_client < 1) {
      return absl::InvalidArgumentError(
          "TaskOptions: num_clients, dim and samples_per_client must be >= 1");
    }
    if (!(heterogeneity >= 0.0) || !(label_noise >= 0.0)) {
      return absl::InvalidArgumentError(
          "TaskOptions: heterogeneity and label_noise must be >= 0");
    }
    if (!(min_feature_variance > 0.0) ||
        !(max_feature_variance >= min_feature_variance)) {
      return absl::InvalidArgumentError(
          "TaskOptions: need 0 < min_feature_variance <= max_feature_variance");
    }
    if (kind == TaskKind::kLogistic && !(regularization > 0.0)) {
      return absl::InvalidArgumentError(
          "TaskOptions: logistic regularization must be > 0");
    }
    return absl::OkStatus();
  }
};

struct ClientData {
  Eigen::MatrixXd features;  // m x d
  Eigen::VectorXd targets;   // m; +-1 labels for logistic
};

// Assumption constants of the convergence analysis. rho and l are exact;
// beta is a bound over the ball of radius `radius` around the optimum; B is
// measured on a trajectory and inflated.
struct TaskConstants {
  double rho = 0.0;
  double l = 0.0;
  double beta = 0.0;
  double gradient_ratio = 0.0;  // B
  double radius = 0.0;
};

inline constexpr double kGradientRatioInflation = 2.0;

class SyntheticTask {
 public:
  using Vector = Eigen::VectorXd;
  using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

  static absl::StatusOr<SyntheticTask> Generate(const TaskOptions& options) {
    LIGHTDP_RETURN_IF_ERROR(options.Validate());
    SyntheticTask task(options);
    const int d = options.dim;
    const int m = options.samples_per_client;
    const MasterSeed root = MasterSeed::FromU64(options.seed);

    Vector truth(d);
    FillStandardNormal(DeriveAuxiliarySeed(root, "task-optimum"), 0, 0,
                       std::span<double>(truth.data(), d));
    Vector scale(d);
    for (int k = 0; k < d; ++k) {
      const double frac = d == 1 ? 0.0 : static_cast<double>(k) / (d - 1);
      scale[k] = std::sqrt(options.min_feature_variance +
                           frac * (options.max_feature_variance -
                                   options.min_feature_variance));
    }

    for (int i = 0; i < options.num_clients; ++i) {
      const DerivedSeed seed = DeriveAuxiliarySeed(root, "task-client", i);
      Vector feature_shift(d), optimum_shift(d), noise(m);
      FillStandardNormal(seed, 0, 0,
                         std::span<double>(feature_shift.data(), d));
      FillStandardNormal(seed, 1, 0,
                         std::span<double>(optimum_shift.data(), d));
      FillStandardNormal(seed, 2, 0, std::span<double>(noise.data(), m));
      std::vector<double> z(static_cast<size_t>(m) * d);
      FillStandardNormal(seed, 3, 0, z);

      ClientData data;
      data.features.resize(m, d);
      for (int r = 0; r < m; ++r) {
        for (int k = 0; k < d; ++k) {
          data.features(r, k) = z[static_cast<size_t>(r) * d + k] * scale[k] +
                                0.5 * options.heterogeneity * feature_shift[k];
        }
      }
      const Vector local = truth + options.heterogeneity * optimum_shift;
      Vector signal = data.features * local + options.label_noise * noise;
      if (options.kind == TaskKind::kLogistic) {
        for (int r = 0; r < m; ++r) signal[r] = signal[r] >= 0.0 ? 1.0 : -1.0;
      }
      data.targets = std::move(signal);
      task.clients_.push_back(std::move(data));
    }
    LIGHTDP_RETURN_IF_ERROR(task.Solve());
    return task;
  }

  // Task over caller-supplied data; shape fields of `options` must match.
  static absl::StatusOr<SyntheticTask> FromClients(
      const TaskOptions& options, std::vector<ClientData> clients) {
    LIGHTDP_RETURN_IF_ERROR(options.Validate());
    if (static_cast<int>(clients.size()) != options.num_clients) {
      return absl::InvalidArgumentError(absl::StrCat(
          "FromClients: ", clients.size(), " datasets for ",
          options.num_clients, " clients"));
    }
    for (const ClientData& data : clients) {
      if (data.features.rows() != options.samples_per_client ||
          data.features.cols() != options.dim ||
          data.targets.size() != options.samples_per_client) {
        return absl::InvalidArgumentError("FromClients: dataset shape mismatch");
      }
    }
    SyntheticTask task(options);
    task.clients_ = std::move(clients);
    LIGHTDP_RETURN_IF_ERROR(task.Solve());
    return task;
  }

  const TaskOptions& options() const { return options_; }
  TaskKind kind() const { return options_.kind; }
  int num_clients() const { return static_cast<int>(clients_.size()); }
  int dim() const { return options_.dim; }
  int samples_per_client() const { return options_.samples_per_client; }
  const ClientData& client(int i) const { return clients_[i]; }
  const Vector& optimum() const { return optimum_; }
  double optimal_loss() const { return optimal_loss_; }
  // Largest Hessian eigenvalue of F_i (an upper bound for logistic).
  double client_smoothness(int i) const { return client_smoothness_[i]; }
  // Smallest Hessian eigenvalue of F (quadratic) or lambda (logistic).
  double strong_convexity() const { return strong_convexity_; }

  // Mean gradient over the listed rows of client i.
  Vector BatchGradient(int i, const VectorRef& w,
                       std::span<const int> rows) const {
    const ClientData& data = clients_[i];
    Vector g = Vector::Zero(dim());
    for (int r : rows) {
      const double z = data.features.row(r).dot(w);
      if (kind() == TaskKind::kQuadratic) {
        g += (z - data.targets[r]) * data.features.row(r).transpose();
      } else {
        const double y = data.targets[r];
        g -= y * Sigmoid(-y * z) * data.features.row(r).transpose();
      }
    }
    if (!rows.empty()) g /= static_cast<double>(rows.size());
    if (kind() == TaskKind::kLogistic) g += options_.regularization * w;
    return g;
  }

  Vector ClientGradient(int i, const VectorRef& w) const {
    const ClientData& data = clients_[i];
    const Vector z = data.features * w;
    const double m = static_cast<double>(data.targets.size());
    if (kind() == TaskKind::kQuadratic) {
      return data.features.transpose() * (z - data.targets) / m;
    }
    Vector weights(z.size());
    for (int r = 0; r < z.size(); ++r) {
      const double y = data.targets[r];
      weights[r] = -y * Sigmoid(-y * z[r]);
    }
    return data.features.transpose() * weights / m +
           options_.regularization * w;
  }

  double ClientLoss(int i, const VectorRef& w) const {
    const ClientData& data = clients_[i];
    const Vector z = data.features * w;
    const double m = static_cast<double>(data.targets.size());
    if (kind() == TaskKind::kQuadratic) {
      return 0.5 * (z - data.targets).squaredNorm() / m;
    }
    double total = 0.0;
    for (int r = 0; r < z.size(); ++r) {
      total += Softplus(-data.targets[r] * z[r]);
    }
    return total / m + 0.5 * options_.regularization * w.squaredNorm();
  }

  double Loss(const VectorRef& w) const {
    double total = 0.0;
    for (int i = 0; i < num_clients(); ++i) total += ClientLoss(i, w);
    return total / num_clients();
  }

  Vector Gradient(const VectorRef& w) const {
    Vector g = Vector::Zero(dim());
    for (int i = 0; i < num_clients(); ++i) g += ClientGradient(i, w);
    return g / num_clients();
  }

  double LossGap(const VectorRef& w) const { return Loss(w) - optimal_loss_; }

  // Exact rho and l; beta over the ball reaching every trajectory point; B as
  // the inflated largest ||grad F_i|| / ||grad F|| seen on the trajectory.
  absl::StatusOr<TaskConstants> Constants(
      std::span<const Vector> trajectory) const {
    if (trajectory.empty()) {
      return absl::InvalidArgumentError(
          "Constants: need at least one trajectory point");
    }
    TaskConstants out;
    out.rho = *std::max_element(client_smoothness_.begin(),
                                client_smoothness_.end());
    out.l = strong_convexity_;
    double ratio = 0.0;
    for (const Vector& w : trajectory) {
      if (w.size() != dim()) {
        return absl::InvalidArgumentError("Constants: dimension mismatch");
      }
      out.radius = std::max(out.radius, (w - optimum_).norm());
      const double global = Gradient(w).norm();
      if (global == 0.0) continue;
      for (int i = 0; i < num_clients(); ++i) {
        ratio = std::max(ratio, ClientGradient(i, w).norm() / global);
      }
    }
    out.gradient_ratio = kGradientRatioInflation * ratio;
    for (int i = 0; i < num_clients(); ++i) {
      out.beta = std::max(out.beta, ClientGradient(i, optimum_).norm() +
                                        client_smoothness_[i] * out.radius);
    }
    return out;
  }

 private:
  explicit SyntheticTask(const TaskOptions& options) : options_(options) {}

  static double Sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  }
  static double Softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }

  absl::Status Solve() {
    const int d = dim();
    Eigen::MatrixXd hessian = Eigen::MatrixXd::Zero(d, d);
    Vector rhs = Vector::Zero(d);
    client_smoothness_.clear();
    for (const ClientData& data : clients_) {
      const double m = static_cast<double>(data.targets.size());
      const Eigen::MatrixXd h = data.features.transpose() * data.features / m;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
          h, Eigen::EigenvaluesOnly);
      const double top = eig.eigenvalues().maxCoeff();
      if (kind() == TaskKind::kQuadratic) {
        client_smoothness_.push_back(top);
        hessian += h;
        rhs += data.features.transpose() * data.targets / m;
      } else {
        client_smoothness_.push_back(0.25 * top + options_.regularization);
      }
    }
    if (kind() == TaskKind::kQuadratic) {
      hessian /= num_clients();
      rhs /= num_clients();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
          hessian, Eigen::EigenvaluesOnly);
      strong_convexity_ = eig.eigenvalues().minCoeff();
      if (!(strong_convexity_ > 0.0)) {
        return absl::FailedPreconditionError(
            "SyntheticTask: quadratic Hessian is singular");
      }
      optimum_ = hessian.ldlt().solve(rhs);
    } else {
      strong_convexity_ = options_.regularization;
      optimum_ = Vector::Zero(d);
      for (int it = 0; it < 100; ++it) {
        const Vector g = Gradient(optimum_);
        if (g.norm() <= 1e-13) break;
        Eigen::MatrixXd h =
            options_.regularization * Eigen::MatrixXd::Identity(d, d);
        for (const ClientData& data : clients_) {
          const double m = static_cast<double>(data.targets.size());
          const Vector z = data.features * optimum_;
          for (int r = 0; r < z.size(); ++r) {
            const double p = Sigmoid(z[r]);
            h += p * (1.0 - p) / (m * num_clients()) *
                 data.features.row(r).transpose() * data.features.row(r);
          }
        }
        optimum_ -= h.ldlt().solve(g);
      }
      if (!(Gradient(optimum_).norm() <= 1e-9)) {
        return absl::InternalError(
            "SyntheticTask: Newton iteration did not converge");
      }
    }
    optimal_loss_ = Loss(optimum_);
    return absl::OkStatus();
  }

  TaskOptions options_;
  std::vector<ClientData> clients_;
  std::vector<double> client_smoothness_;
  double strong_convexity_ = 0.0;
  Vector optimum_;
  double optimal_loss_ = 0.0;
};

}  // namespace lightdp

#endif  // LIGHTDP_TASK_H_

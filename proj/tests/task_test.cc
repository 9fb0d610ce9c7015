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

#include "lightdp/task.h"

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "gtest/gtest.h"

namespace lightdp {
namespace {

using Vector = Eigen::VectorXd;

TaskOptions Small(TaskKind kind, uint64_t seed = 3) {
  TaskOptions o;
  o.kind = kind;
  o.num_clients = 6;
  o.dim = 5;
  o.samples_per_client = 16;
  o.seed = seed;
  return o;
}

Vector RandomPoint(std::mt19937_64& rng, int d, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector w(d);
  for (int k = 0; k < d; ++k) w[k] = normal(rng);
  return w;
}

class TaskKindTest : public ::testing::TestWithParam<TaskKind> {};

TEST_P(TaskKindTest, GenerationIsDeterministic) {
  auto a = SyntheticTask::Generate(Small(GetParam()));
  auto b = SyntheticTask::Generate(Small(GetParam()));
  auto c = SyntheticTask::Generate(Small(GetParam(), 4));
  ASSERT_TRUE(a.ok() && b.ok() && c.ok());
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(a->client(i).features, b->client(i).features);
    EXPECT_EQ(a->client(i).targets, b->client(i).targets);
  }
  EXPECT_NE(a->client(0).features, c->client(0).features);
  EXPECT_EQ(a->optimum(), b->optimum());
}

TEST_P(TaskKindTest, GradientsMatchFiniteDifferences) {
  auto task = SyntheticTask::Generate(Small(GetParam()));
  ASSERT_TRUE(task.ok());
  std::mt19937_64 rng(1);
  constexpr double kH = 1e-6;
  for (int trial = 0; trial < 5; ++trial) {
    const Vector w = RandomPoint(rng, 5, 1.0);
    for (int i = 0; i < 6; ++i) {
      const Vector g = task->ClientGradient(i, w);
      for (int k = 0; k < 5; ++k) {
        Vector hi = w, lo = w;
        hi[k] += kH;
        lo[k] -= kH;
        const double fd =
            (task->ClientLoss(i, hi) - task->ClientLoss(i, lo)) / (2 * kH);
        EXPECT_NEAR(g[k], fd, 1e-6 * std::max(1.0, std::abs(fd)));
      }
      std::vector<int> all(16);
      std::iota(all.begin(), all.end(), 0);
      EXPECT_LT((task->BatchGradient(i, w, all) - g).norm(), 1e-12);
    }
    Vector mean = Vector::Zero(5);
    for (int i = 0; i < 6; ++i) mean += task->ClientGradient(i, w) / 6.0;
    EXPECT_LT((task->Gradient(w) - mean).norm(), 1e-12);
  }
}

TEST_P(TaskKindTest, OptimumIsStationaryAndMinimal) {
  auto task = SyntheticTask::Generate(Small(GetParam()));
  ASSERT_TRUE(task.ok());
  EXPECT_LT(task->Gradient(task->optimum()).norm(), 1e-9);
  EXPECT_NEAR(task->LossGap(task->optimum()), 0.0, 1e-12);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector w = task->optimum() + RandomPoint(rng, 5, 0.5);
    EXPECT_GT(task->LossGap(w), 0.0);
  }
}

// Curvature bounds: l/2 ||h||^2 <= F(w* + h) - F(w*) and
// F_i(w + h) <= F_i(w) + <grad F_i(w), h> + rho_i/2 ||h||^2.
TEST_P(TaskKindTest, CurvatureConstantsBoundTheLoss) {
  auto task = SyntheticTask::Generate(Small(GetParam()));
  ASSERT_TRUE(task.ok());
  std::mt19937_64 rng(3);
  const double l = task->strong_convexity();
  EXPECT_GT(l, 0.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector h = RandomPoint(rng, 5, 1.0);
    EXPECT_GE(task->LossGap(task->optimum() + h),
              0.5 * l * h.squaredNorm() * (1 - 1e-9));
    const Vector w = RandomPoint(rng, 5, 1.0);
    for (int i = 0; i < 6; ++i) {
      EXPECT_LE(task->ClientLoss(i, w + h),
                task->ClientLoss(i, w) + task->ClientGradient(i, w).dot(h) +
                    0.5 * task->client_smoothness(i) * h.squaredNorm() +
                    1e-9);
    }
  }
}

TEST_P(TaskKindTest, ConstantsBoundTheTrajectory) {
  auto task = SyntheticTask::Generate(Small(GetParam()));
  ASSERT_TRUE(task.ok());
  std::vector<Vector> path;
  Vector w = Vector::Zero(5);
  for (int t = 0; t < 30; ++t) {
    path.push_back(w);
    w -= 0.1 * task->Gradient(w);
  }
  auto c = task->Constants(path);
  ASSERT_TRUE(c.ok()) << c.status();
  double rho = 0.0;
  for (int i = 0; i < 6; ++i) rho = std::max(rho, task->client_smoothness(i));
  EXPECT_EQ(c->rho, rho);
  EXPECT_EQ(c->l, task->strong_convexity());
  EXPECT_GE(c->rho, c->l);
  for (const Vector& p : path) {
    EXPECT_LE((p - task->optimum()).norm(), c->radius + 1e-12);
    const double global = task->Gradient(p).norm();
    for (int i = 0; i < 6; ++i) {
      const double local = task->ClientGradient(i, p).norm();
      EXPECT_LE(local, c->beta + 1e-12);
      EXPECT_LE(local, 0.5 * c->gradient_ratio * global * (1 + 1e-12));
    }
  }
  EXPECT_FALSE(task->Constants({}).ok());
}

INSTANTIATE_TEST_SUITE_P(Kinds, TaskKindTest,
                         ::testing::Values(TaskKind::kQuadratic,
                                           TaskKind::kLogistic),
                         [](const auto& info) {
                           return std::string(TaskKindName(info.param));
                         });

TEST(QuadraticTaskTest, ConstantsAreHessianEigenvalues) {
  auto task = SyntheticTask::Generate(Small(TaskKind::kQuadratic));
  ASSERT_TRUE(task.ok());
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(5, 5);
  for (int i = 0; i < 6; ++i) {
    const Eigen::MatrixXd& a = task->client(i).features;
    const Eigen::MatrixXd h = a.transpose() * a / 16.0;
    mean += h / 6.0;
    // Power iteration for the top eigenvalue.
    Vector v = Vector::Ones(5);
    for (int it = 0; it < 2000; ++it) v = (h * v).normalized();
    EXPECT_NEAR(task->client_smoothness(i), v.dot(h * v), 1e-9);
  }
  // Inverse iteration for the bottom one.
  Vector v = Vector::Ones(5);
  const Eigen::MatrixXd inv = mean.inverse();
  for (int it = 0; it < 2000; ++it) v = (inv * v).normalized();
  EXPECT_NEAR(task->strong_convexity(), v.dot(mean * v), 1e-9);
}

TEST(QuadraticTaskTest, HeterogeneitySpreadsLocalOptima) {
  TaskOptions iid = Small(TaskKind::kQuadratic);
  iid.heterogeneity = 0.0;
  TaskOptions skew = iid;
  skew.heterogeneity = 1.0;
  auto a = SyntheticTask::Generate(iid);
  auto b = SyntheticTask::Generate(skew);
  ASSERT_TRUE(a.ok() && b.ok());
  double spread_a = 0.0, spread_b = 0.0;
  for (int i = 0; i < 6; ++i) {
    spread_a += a->ClientGradient(i, a->optimum()).norm();
    spread_b += b->ClientGradient(i, b->optimum()).norm();
  }
  EXPECT_GT(spread_b, 2.0 * spread_a);
}

TEST(TaskOptionsTest, Validation) {
  TaskOptions o;
  EXPECT_TRUE(o.Validate().ok());
  o.dim = 0;
  EXPECT_FALSE(o.Validate().ok());
  o = TaskOptions{};
  o.min_feature_variance = 3.0;
  EXPECT_FALSE(o.Validate().ok());
  o = TaskOptions{};
  o.kind = TaskKind::kLogistic;
  o.regularization = 0.0;
  EXPECT_FALSE(o.Validate().ok());
  EXPECT_EQ(*ParseTaskKind("logistic"), TaskKind::kLogistic);
  EXPECT_FALSE(ParseTaskKind("svm").ok());
}

TEST(FromClientsTest, RebuildsGeneratedTask) {
  auto task = SyntheticTask::Generate(Small(TaskKind::kQuadratic));
  ASSERT_TRUE(task.ok());
  std::vector<ClientData> data;
  for (int i = 0; i < 6; ++i) data.push_back(task->client(i));
  auto copy = SyntheticTask::FromClients(task->options(), data);
  ASSERT_TRUE(copy.ok());
  EXPECT_EQ(copy->optimum(), task->optimum());
  data.pop_back();
  EXPECT_FALSE(SyntheticTask::FromClients(task->options(), data).ok());
}

}  // namespace
}  // namespace lightdp

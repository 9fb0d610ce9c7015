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

#ifndef LIGHTDP_STATUS_MACROS_H_
#define LIGHTDP_STATUS_MACROS_H_

#include <utility>

#include "absl/status/status.h"
#include "absl/status/statusor.h"

#define LIGHTDP_STATUS_CONCAT_INNER_(x, y) x##y
#define LIGHTDP_STATUS_CONCAT_(x, y) LIGHTDP_STATUS_CONCAT_INNER_(x, y)

// Returns early from the enclosing function if `expr` is not OK.
#define LIGHTDP_RETURN_IF_ERROR(expr)              \
  do {                                             \
    const ::absl::Status lightdp_status_ = (expr); \
    if (!lightdp_status_.ok()) {                   \
      return lightdp_status_;                      \
    }                                              \
  } while (false)

// Evaluates `rexpr` (a StatusOr), returning its status on error and otherwise
// moving the value into `lhs`.
#define LIGHTDP_ASSIGN_OR_RETURN(lhs, rexpr)                               \
  LIGHTDP_ASSIGN_OR_RETURN_IMPL_(                                          \
      LIGHTDP_STATUS_CONCAT_(lightdp_statusor_, __LINE__), lhs, rexpr)

#define LIGHTDP_ASSIGN_OR_RETURN_IMPL_(statusor, lhs, rexpr) \
  auto statusor = (rexpr);                                   \
  if (!statusor.ok()) {                                      \
    return std::move(statusor).status();                     \
  }                                                          \
  lhs = std::move(statusor).value()

#endif  // LIGHTDP_STATUS_MACROS_H_

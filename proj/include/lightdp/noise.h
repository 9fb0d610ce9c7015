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

// Seed derivation and counter-mode Gaussian streams for pairwise and
// individual masks.
//
// Every noise vector is a pure function of (master seed, domain, structural
// indices, round, coordinate). Seeds are derived with keyed BLAKE2b; the
// uniform source is the ChaCha20 keystream of the derived key with the round
// as nonce, so any coordinate can be produced without generating its
// predecessors. Both members of a pair derive the same key and therefore the
// same mask, bit for bit.

#ifndef LIGHTDP_NOISE_H_
#define LIGHTDP_NOISE_H_

#include <sodium.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdlib>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"

namespace lightdp {

inline constexpr size_t kSeedBytes = 32;

namespace internal {

inline void EnsureSodium() {
  static const bool initialized = [] { return sodium_init() >= 0; }();
  if (!initialized) std::abort();
}

inline void AppendLe64(std::vector<uint8_t>& out, uint64_t value) {
  for (int k = 0; k < 8; ++k) {
    out.push_back(static_cast<uint8_t>(value >> (8 * k)));
  }
}

inline uint64_t LoadLe64(const uint8_t* bytes) {
  uint64_t value = 0;
  for (int k = 7; k >= 0; --k) value = (value << 8) | bytes[k];
  return value;
}

inline std::string ToHex(std::span<const uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * bytes.size());
  for (uint8_t b : bytes) {
    hex.push_back(kDigits[b >> 4]);
    hex.push_back(kDigits[b & 0xf]);
  }
  return hex;
}

}  // namespace internal

// Opaque 32-byte experiment seed. Fixed for a run.
class MasterSeed {
 public:
  MasterSeed() = default;
  explicit MasterSeed(const std::array<uint8_t, kSeedBytes>& bytes)
      : bytes_(bytes) {}

  // Expands a 64-bit integer (e.g. a --seed flag) into a full seed.
  static MasterSeed FromU64(uint64_t value) {
    internal::EnsureSodium();
    std::vector<uint8_t> message = {'l', 'i', 'g', 'h', 't', 'd', 'p',
                                    '.', 'm', 'a', 's', 't', 'e', 'r'};
    internal::AppendLe64(message, value);
    std::array<uint8_t, kSeedBytes> bytes;
    crypto_generichash(bytes.data(), bytes.size(), message.data(),
                       message.size(), nullptr, 0);
    return MasterSeed(bytes);
  }

  const std::array<uint8_t, kSeedBytes>& bytes() const { return bytes_; }
  std::string ToHex() const { return internal::ToHex(bytes_); }

  friend bool operator==(const MasterSeed&, const MasterSeed&) = default;

 private:
  std::array<uint8_t, kSeedBytes> bytes_{};
};

// Key of a single noise stream.
struct DerivedSeed {
  std::array<uint8_t, kSeedBytes> bytes{};

  std::string ToHex() const { return internal::ToHex(bytes); }
  friend bool operator==(const DerivedSeed&, const DerivedSeed&) = default;
};

// Unordered client pair, stored normalized as lo < hi.
class PairKey {
 public:
  static absl::StatusOr<PairKey> Create(int a, int b) {
    if (a < 0 || b < 0) {
      return absl::InvalidArgumentError(
          absl::StrCat("PairKey: negative client index (", a, ", ", b, ")"));
    }
    if (a == b) {
      return absl::InvalidArgumentError(
          absl::StrCat("PairKey: a client cannot pair with itself (", a, ")"));
    }
    return a < b ? PairKey(a, b) : PairKey(b, a);
  }

  int lo() const { return lo_; }
  int hi() const { return hi_; }

  friend auto operator<=>(const PairKey&, const PairKey&) = default;

 private:
  PairKey(int lo, int hi) : lo_(lo), hi_(hi) {}

  int lo_;
  int hi_;
};

// A d-dimensional standard normal stream for one (key, round).
struct GaussianStream {
  DerivedSeed seed;
  uint64_t round = 0;
  size_t dim = 0;
};

namespace internal {

inline DerivedSeed KeyedHash(const MasterSeed& key,
                             std::span<const uint8_t> message) {
  EnsureSodium();
  DerivedSeed out;
  crypto_generichash(out.bytes.data(), out.bytes.size(), message.data(),
                     message.size(), key.bytes().data(), key.bytes().size());
  return out;
}

inline std::vector<uint8_t> Tag(std::string_view tag) {
  std::vector<uint8_t> message(tag.begin(), tag.end());
  message.push_back(0);
  return message;
}

// Writes the ChaCha20 keystream blocks [first_block, first_block + n) of
// (key, round) into `out` (n * 64 bytes).
inline void KeystreamBlocks(const DerivedSeed& key, uint64_t round,
                            uint32_t first_block, std::span<uint8_t> out) {
  EnsureSodium();
  std::array<uint8_t, crypto_stream_chacha20_ietf_NONCEBYTES> nonce{};
  for (int k = 0; k < 8; ++k) nonce[k] = static_cast<uint8_t>(round >> (8 * k));
  std::fill(out.begin(), out.end(), 0);
  crypto_stream_chacha20_ietf_xor_ic(out.data(), out.data(), out.size(),
                                     nonce.data(), first_block,
                                     key.bytes.data());
}

// Box-Muller on two 64-bit words. Returns the (cos, sin) pair.
inline std::pair<double, double> BoxMuller(uint64_t a, uint64_t b) {
  constexpr double kTwoPow53Inv = 1.0 / 9007199254740992.0;
  const double u1 = static_cast<double>((a >> 11) + 1) * kTwoPow53Inv;
  const double u2 = static_cast<double>(b >> 11) * kTwoPow53Inv;
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

// Each 64-byte block holds 4 Box-Muller word pairs, i.e. 8 coordinates.
inline constexpr uint64_t kPairsPerBlock = 4;

}  // namespace internal

// Domain separation tags; pair and individual streams never share a key.
inline constexpr std::string_view kPairTag = "lightdp.pair.v1";
inline constexpr std::string_view kIndividualTag = "lightdp.individual.v1";
inline constexpr std::string_view kAuxiliaryTag = "lightdp.aux.v1";

inline DerivedSeed DerivePairSeed(const MasterSeed& master,
                                  const PairKey& pair) {
  std::vector<uint8_t> message = internal::Tag(kPairTag);
  internal::AppendLe64(message, static_cast<uint64_t>(pair.lo()));
  internal::AppendLe64(message, static_cast<uint64_t>(pair.hi()));
  return internal::KeyedHash(master, message);
}

inline DerivedSeed DeriveClientSeed(const MasterSeed& master, int client) {
  std::vector<uint8_t> message = internal::Tag(kIndividualTag);
  internal::AppendLe64(message, static_cast<uint64_t>(client));
  return internal::KeyedHash(master, message);
}

// Seeds for everything that is not a mask: straggler sampling, minibatch
// order, synthetic data, Monte Carlo validation.
inline DerivedSeed DeriveAuxiliarySeed(const MasterSeed& master,
                                       std::string_view purpose, uint64_t a = 0,
                                       uint64_t b = 0) {
  std::vector<uint8_t> message = internal::Tag(kAuxiliaryTag);
  message.insert(message.end(), purpose.begin(), purpose.end());
  message.push_back(0);
  internal::AppendLe64(message, a);
  internal::AppendLe64(message, b);
  return internal::KeyedHash(master, message);
}

// Reinterprets a derived seed as the master seed of a sub-experiment.
inline MasterSeed AsMasterSeed(const DerivedSeed& seed) {
  return MasterSeed(seed.bytes);
}

// The standard normal at coordinate `index` of (seed, round).
inline double StandardNormalAt(const DerivedSeed& seed, uint64_t round,
                               uint64_t index) {
  const uint64_t pair = index / 2;
  std::array<uint8_t, 64> block;
  internal::KeystreamBlocks(
      seed, round, static_cast<uint32_t>(pair / internal::kPairsPerBlock),
      block);
  const uint8_t* words = block.data() + 16 * (pair % internal::kPairsPerBlock);
  const auto [c, s] = internal::BoxMuller(internal::LoadLe64(words),
                                          internal::LoadLe64(words + 8));
  return index % 2 == 0 ? c : s;
}

// Fills out[k] = StandardNormalAt(stream.seed, stream.round, first + k).
inline void FillStandardNormal(const DerivedSeed& seed, uint64_t round,
                               uint64_t first, std::span<double> out) {
  if (out.empty()) return;
  const uint64_t first_pair = first / 2;
  const uint64_t last_pair = (first + out.size() - 1) / 2;
  const uint64_t first_block = first_pair / internal::kPairsPerBlock;
  const uint64_t last_block = last_pair / internal::kPairsPerBlock;
  std::vector<uint8_t> stream(64 * (last_block - first_block + 1));
  internal::KeystreamBlocks(seed, round, static_cast<uint32_t>(first_block),
                            stream);
  for (uint64_t pair = first_pair; pair <= last_pair; ++pair) {
    const uint8_t* words =
        stream.data() + 16 * (pair - first_block * internal::kPairsPerBlock);
    const auto [c, s] = internal::BoxMuller(internal::LoadLe64(words),
                                            internal::LoadLe64(words + 8));
    const uint64_t even = 2 * pair;
    if (even >= first && even - first < out.size()) out[even - first] = c;
    if (even + 1 >= first && even + 1 - first < out.size()) {
      out[even + 1 - first] = s;
    }
  }
}

inline void FillStandardNormal(const GaussianStream& stream,
                               std::span<double> out) {
  FillStandardNormal(stream.seed, stream.round, 0,
                     out.first(std::min(out.size(), stream.dim)));
}

namespace internal {

inline absl::StatusOr<std::vector<double>> ScaledNormal(
    const DerivedSeed& seed, uint64_t round, size_t dim, double sigma,
    std::string_view what) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    return absl::InvalidArgumentError(
        absl::StrCat(std::string(what),
                     ": standard deviation must be finite and >= 0, got ",
                     sigma));
  }
  if (dim == 0) {
    return absl::InvalidArgumentError(
        absl::StrCat(std::string(what), ": dim must be >= 1"));
  }
  std::vector<double> out(dim, 0.0);
  if (sigma == 0.0) return out;
  FillStandardNormal(seed, round, 0, out);
  for (double& x : out) x *= sigma;
  return out;
}

}  // namespace internal

// r_ij for one round: i.i.d. N(0, sigma_k^2) per coordinate.
inline absl::StatusOr<std::vector<double>> PairwiseNoise(
    const GaussianStream& stream, double sigma_k) {
  return internal::ScaledNormal(stream.seed, stream.round, stream.dim, sigma_k,
                                "PairwiseNoise");
}

// n_i for one round: i.i.d. N(0, sigma_u^2) per coordinate.
inline absl::StatusOr<std::vector<double>> IndividualNoise(
    const DerivedSeed& client_seed, uint64_t round, size_t dim,
    double sigma_u) {
  return internal::ScaledNormal(client_seed, round, dim, sigma_u,
                                "IndividualNoise");
}

// A deterministic 64-bit engine over an auxiliary seed, for sampling that is
// not Gaussian (straggler sets, minibatch order). Satisfies
// UniformRandomBitGenerator.
class StreamEngine {
 public:
  using result_type = uint64_t;

  StreamEngine(const DerivedSeed& seed, uint64_t round)
      : seed_(seed), round_(round) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() {
    if (offset_ == buffer_.size()) Refill();
    const uint64_t word = internal::LoadLe64(buffer_.data() + offset_);
    offset_ += 8;
    return word;
  }

  // Uniform integer in [0, n) by rejection; n >= 1.
  uint64_t UniformIndex(uint64_t n) {
    const uint64_t limit = max() - max() % n;
    uint64_t x;
    do {
      x = (*this)();
    } while (x >= limit);
    return x % n;
  }

  // Uniform double in [0, 1).
  double UniformUnit() {
    return static_cast<double>((*this)() >> 11) * (1.0 / 9007199254740992.0);
  }

 private:
  void Refill() {
    internal::KeystreamBlocks(seed_, round_, block_, buffer_);
    block_ += static_cast<uint32_t>(buffer_.size() / 64);
    offset_ = 0;
  }

  DerivedSeed seed_;
  uint64_t round_;
  uint32_t block_ = 0;
  std::array<uint8_t, 256> buffer_{};
  size_t offset_ = 256;
};

}  // namespace lightdp

#endif  // LIGHTDP_NOISE_H_

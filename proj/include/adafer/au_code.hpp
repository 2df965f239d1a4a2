#pragma once

#include <bit>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace adafer {

inline constexpr double kDefaultBinarizeThreshold = 0.5;

/// Fixed-length bit vector holding a binarized AU activation pattern.
class AuCode {
 public:
  AuCode() = default;
  explicit AuCode(std::size_t size) : size_(size), words_((size + 63) / 64, 0) {}

  static AuCode from_string(const std::string& bits) {
    AuCode code(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i] == '1') {
        code.set(i, true);
      } else if (bits[i] != '0') {
        throw std::invalid_argument("AuCode: expected '0' or '1' in \"" + bits + "\"");
      }
    }
    return code;
  }

  std::size_t size() const noexcept { return size_; }

  bool test(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1U; }

  void set(std::size_t i, bool value) {
    const std::uint64_t mask = std::uint64_t{1} << (i % 64);
    if (value) {
      words_[i / 64] |= mask;
    } else {
      words_[i / 64] &= ~mask;
    }
  }

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  std::size_t hamming(const AuCode& other) const {
    if (other.size_ != size_) throw std::invalid_argument("AuCode: length mismatch");
    std::size_t n = 0;
    for (std::size_t i = 0; i < words_.size(); ++i) {
      n += static_cast<std::size_t>(std::popcount(words_[i] ^ other.words_[i]));
    }
    return n;
  }

  std::string to_string() const {
    std::string s(size_, '0');
    for (std::size_t i = 0; i < size_; ++i) {
      if (test(i)) s[i] = '1';
    }
    return s;
  }

  std::size_t hash() const noexcept {
    std::uint64_t h = 1469598103934665603ULL ^ size_;
    for (auto w : words_) {
      h ^= w;
      h *= 1099511628211ULL;
      h ^= h >> 29;
    }
    return static_cast<std::size_t>(h);
  }

  friend bool operator==(const AuCode&, const AuCode&) = default;

 private:
  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

struct AuCodeHash {
  std::size_t operator()(const AuCode& code) const noexcept { return code.hash(); }
};

/// Bit i is set iff scores[i] >= threshold.
inline AuCode binarize(const Eigen::VectorXd& scores,
                       double threshold = kDefaultBinarizeThreshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("binarize: threshold must lie in (0,1)");
  }
  AuCode code(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!(scores[i] >= 0.0 && scores[i] <= 1.0)) {
      throw std::invalid_argument("binarize: au_score out of range");
    }
    code.set(static_cast<std::size_t>(i), scores[i] >= threshold);
  }
  return code;
}

}  // namespace adafer

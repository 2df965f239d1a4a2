#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "adafer/au_code.hpp"
#include "adafer/dataset.hpp"

namespace adafer {

/// Exact-match lookup from AU code to the ids of one domain's samples.
class AuIndex {
 public:
  AuIndex(Domain domain, std::size_t K) : domain_(domain), K_(K) {}

  Domain domain() const noexcept { return domain_; }
  std::size_t K() const noexcept { return K_; }
  std::size_t num_codes() const noexcept { return buckets_.size(); }
  std::size_t num_samples() const noexcept { return num_samples_; }

  /// Ascending ids of every indexed sample whose code equals `code`.
  const std::vector<SampleId>& query_exact(const AuCode& code) const {
    if (code.size() != K_) throw std::invalid_argument("query_exact: code length mismatch");
    static const std::vector<SampleId> kEmpty;
    auto it = buckets_.find(code);
    return it == buckets_.end() ? kEmpty : it->second;
  }

  /// Distinct codes present, in unspecified order.
  template <class Fn>
  void for_each_code(Fn&& fn) const {
    for (const auto& [code, ids] : buckets_) fn(code, ids);
  }

 private:
  friend AuIndex build_index(std::span<const Sample>, Domain, std::size_t);

  Domain domain_;
  std::size_t K_;
  std::size_t num_samples_ = 0;
  std::unordered_map<AuCode, std::vector<SampleId>, AuCodeHash> buckets_;
};

inline AuIndex build_index(std::span<const Sample> samples, Domain domain, std::size_t K) {
  AuIndex index(domain, K);
  for (const auto& s : samples) {
    if (s.domain != domain) throw std::invalid_argument("build_index: mixed domains");
    if (s.au_code.size() != K) throw std::invalid_argument("build_index: inconsistent AU count");
    index.buckets_[s.au_code].push_back(s.id);
  }
  for (auto& [code, ids] : index.buckets_) std::sort(ids.begin(), ids.end());
  index.num_samples_ = samples.size();
  return index;
}

inline AuIndex build_index(const Dataset& dataset, Domain domain) {
  return build_index(dataset.samples(), domain, dataset.dims().K);
}

/// Cosine similarity of two AU score vectors, 0 when either has zero norm.
inline double au_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("au_similarity: length mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), 0.0, 1.0);
}

/// Row c holds, for each AU, the fraction of class-c samples with that AU active.
struct AuClassDistribution {
  Eigen::MatrixXd frequency;        // C x K
  std::vector<std::size_t> counts;  // samples per class

  /// AU indices of row c ordered by decreasing frequency (ties: lower index first).
  std::vector<std::size_t> ranked_aus(std::size_t c) const {
    std::vector<std::size_t> order(static_cast<std::size_t>(frequency.cols()));
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return frequency(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)) >
             frequency(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(b));
    });
    return order;
  }
};

inline AuClassDistribution au_class_distribution(std::span<const Sample> samples, std::size_t C,
                                                 std::size_t K) {
  AuClassDistribution dist{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(C),
                                                 static_cast<Eigen::Index>(K)),
                           std::vector<std::size_t>(C, 0)};
  for (const auto& s : samples) {
    if (!s.label) throw std::invalid_argument("au_class_distribution: unlabeled sample");
    if (*s.label >= C) throw std::invalid_argument("au_class_distribution: label out of range");
    const auto c = static_cast<Eigen::Index>(*s.label);
    ++dist.counts[*s.label];
    for (std::size_t k = 0; k < K; ++k) {
      if (s.au_code.test(k)) dist.frequency(c, static_cast<Eigen::Index>(k)) += 1.0;
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (dist.counts[c] > 0) dist.frequency.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(dist.counts[c]);
  }
  return dist;
}

inline AuClassDistribution au_class_distribution(const Dataset& labeled) {
  return au_class_distribution(labeled.samples(), labeled.dims().C, labeled.dims().K);
}

inline void write_au_stats_csv(std::ostream& out, const AuClassDistribution& dist) {
  out << "class";
  for (Eigen::Index k = 0; k < dist.frequency.cols(); ++k) out << ",AU_" << (k + 1);
  out << '\n';
  for (Eigen::Index c = 0; c < dist.frequency.rows(); ++c) {
    out << c;
    for (Eigen::Index k = 0; k < dist.frequency.cols(); ++k) out << ',' << io::format_double(dist.frequency(c, k));
    out << '\n';
  }
}

}  // namespace adafer

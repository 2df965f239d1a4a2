#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "adafer/dataset.hpp"

namespace adafer::testing {

inline std::vector<std::string> class_names(std::size_t C) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < C; ++c) names.push_back("c" + std::to_string(c));
  return names;
}

/// Scores that binarize to `code` (a string of '0'/'1').
inline Eigen::VectorXd scores_for(const std::string& code, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> hi(0.5, 1.0), lo(0.0, 0.49);
  Eigen::VectorXd s(static_cast<Eigen::Index>(code.size()));
  for (std::size_t k = 0; k < code.size(); ++k) s[static_cast<Eigen::Index>(k)] = code[k] == '1' ? hi(rng) : lo(rng);
  return s;
}

inline Eigen::VectorXd scores_for(const std::string& code) {
  std::mt19937_64 rng(17);
  return scores_for(code, rng);
}

inline Sample sample(SampleId id, Domain domain, const std::string& code, std::optional<ClassId> label,
                     std::size_t D = 2) {
  return make_sample(id, domain, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(D), static_cast<double>(id)),
                     scores_for(code), label);
}

inline Dataset dataset(std::size_t C, std::vector<Sample> samples) {
  const auto K = static_cast<std::size_t>(samples.front().au_scores.size());
  const auto D = static_cast<std::size_t>(samples.front().features.size());
  return Dataset({D, K, C}, class_names(C), std::move(samples));
}

/// Random dataset whose codes come from a small pool so that exact matches
/// are common.
inline Dataset random_dataset(std::mt19937_64& rng, Domain domain, std::size_t n, std::size_t K, std::size_t C,
                              std::size_t code_pool, SampleId first_id, std::size_t D = 3) {
  std::vector<std::string> pool;
  std::bernoulli_distribution bit(0.4);
  for (std::size_t i = 0; i < code_pool; ++i) {
    std::string code;
    for (std::size_t k = 0; k < K; ++k) code += bit(rng) ? '1' : '0';
    pool.push_back(code);
  }
  std::uniform_int_distribution<std::size_t> pick(0, code_pool - 1), label(0, C - 1);
  std::normal_distribution<double> g;
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(D));
    for (auto& v : x) v = g(rng);
    samples.push_back(make_sample(first_id + i, domain, x, scores_for(pool[pick(rng)], rng), label(rng)));
  }
  return Dataset({D, K, C}, class_names(C), std::move(samples));
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("adafer_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace adafer::testing

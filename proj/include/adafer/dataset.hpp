#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "adafer/au_code.hpp"
#include "adafer/io.hpp"
#include "adafer/rng.hpp"

namespace adafer {

using SampleId = std::uint64_t;
using ClassId = std::size_t;

enum class Domain { Source, Target };

inline const char* to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

struct Dims {
  std::size_t D = 0;  // feature length
  std::size_t K = 0;  // AU count
  std::size_t C = 0;  // class count

  friend bool operator==(const Dims&, const Dims&) = default;
};

class DatasetError : public std::runtime_error {
 public:
  explicit DatasetError(const std::string& what, std::optional<std::size_t> line = std::nullopt)
      : std::runtime_error(line ? "line " + std::to_string(*line) + ": " + what : what),
        line_(line) {}

  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  std::optional<std::size_t> line_;
};

struct EvalAccess;

/// Ground-truth label of a target sample. Only evaluation and serialization
/// code can read it, through EvalAccess.
class HiddenLabel {
 public:
  HiddenLabel() = default;
  explicit HiddenLabel(std::optional<ClassId> value) : value_(value) {}

  friend bool operator==(const HiddenLabel&, const HiddenLabel&) = default;

 private:
  friend struct EvalAccess;
  std::optional<ClassId> value_;
};

struct Sample {
  SampleId id = 0;
  Domain domain = Domain::Source;
  Eigen::VectorXd features;
  Eigen::VectorXd au_scores;
  AuCode au_code;                // always derived from au_scores
  std::optional<ClassId> label;  // visible label, source samples only
  HiddenLabel hidden_label;      // target samples only

  friend bool operator==(const Sample& a, const Sample& b) {
    return a.id == b.id && a.domain == b.domain && a.features.size() == b.features.size() &&
           a.features == b.features && a.au_scores.size() == b.au_scores.size() &&
           a.au_scores == b.au_scores && a.au_code == b.au_code && a.label == b.label &&
           a.hidden_label == b.hidden_label;
  }
};

struct EvalAccess {
  /// Label used for scoring: the visible label for source samples, the
  /// hidden one for target samples.
  static std::optional<ClassId> label_of(const Sample& s) {
    return s.domain == Domain::Source ? s.label : s.hidden_label.value_;
  }

  static void set_hidden(Sample& s, std::optional<ClassId> label) { s.hidden_label.value_ = label; }
};

/// Convenience constructor that derives the AU code and routes the label to
/// the visible or hidden slot according to the domain.
inline Sample make_sample(SampleId id, Domain domain, Eigen::VectorXd features,
                          Eigen::VectorXd au_scores, std::optional<ClassId> label) {
  Sample s;
  s.id = id;
  s.domain = domain;
  s.features = std::move(features);
  s.au_scores = std::move(au_scores);
  s.au_code = binarize(s.au_scores);
  if (domain == Domain::Source) {
    s.label = label;
  } else {
    EvalAccess::set_hidden(s, label);
  }
  return s;
}

/// Immutable, validated collection of samples sharing one set of dimensions.
class Dataset {
 public:
  Dataset(Dims dims, std::vector<std::string> class_names, std::vector<Sample> samples)
      : dims_(dims), class_names_(std::move(class_names)), samples_(std::move(samples)) {
    validate_header(dims_, class_names_);
    if (samples_.empty()) throw DatasetError("empty dataset");
    by_id_.reserve(samples_.size());
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      auto& s = samples_[i];
      validate_sample(s, dims_);
      s.au_code = binarize(s.au_scores);
      if (!by_id_.emplace(s.id, i).second) {
        throw DatasetError("duplicate id " + std::to_string(s.id));
      }
    }
  }

  const Dims& dims() const noexcept { return dims_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  std::span<const Sample> samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  const Sample* find(SampleId id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &samples_[it->second];
  }

  const Sample& at(SampleId id) const {
    const Sample* s = find(id);
    if (!s) throw std::out_of_range("no sample with id " + std::to_string(id));
    return *s;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.dims_ == b.dims_ && a.class_names_ == b.class_names_ && a.samples_ == b.samples_;
  }

  static void validate_header(const Dims& dims, const std::vector<std::string>& names) {
    if (dims.C < 2) throw DatasetError("class count C must be >= 2");
    if (dims.K < 1) throw DatasetError("AU count K must be >= 1");
    if (dims.D < 1) throw DatasetError("feature length D must be >= 1");
    if (names.size() != dims.C) throw DatasetError("class_names length must equal C");
  }

  static void validate_sample(const Sample& s, const Dims& dims,
                              std::optional<std::size_t> line = std::nullopt) {
    if (static_cast<std::size_t>(s.features.size()) != dims.D) {
      throw DatasetError("dimension mismatch: features length " +
                             std::to_string(s.features.size()) + ", expected " +
                             std::to_string(dims.D),
                         line);
    }
    if (static_cast<std::size_t>(s.au_scores.size()) != dims.K) {
      throw DatasetError("dimension mismatch: au_scores length " +
                             std::to_string(s.au_scores.size()) + ", expected " +
                             std::to_string(dims.K),
                         line);
    }
    if (!s.features.allFinite()) throw DatasetError("non-finite feature value", line);
    for (Eigen::Index k = 0; k < s.au_scores.size(); ++k) {
      if (!(s.au_scores[k] >= 0.0 && s.au_scores[k] <= 1.0)) {
        throw DatasetError("au_score out of range", line);
      }
    }
    const auto label = EvalAccess::label_of(s);
    if (s.domain == Domain::Source && !s.label) {
      throw DatasetError("source sample " + std::to_string(s.id) + " missing label", line);
    }
    if (s.domain == Domain::Target && s.label) {
      throw DatasetError("target sample " + std::to_string(s.id) + " has a visible label", line);
    }
    if (label && *label >= dims.C) {
      throw DatasetError("label " + std::to_string(*label) + " out of range", line);
    }
  }

 private:
  Dims dims_;
  std::vector<std::string> class_names_;
  std::vector<Sample> samples_;
  std::unordered_map<SampleId, std::size_t> by_id_;
};

namespace detail {

inline Eigen::VectorXd json_to_vector(const nlohmann::json& j, const char* field,
                                      std::size_t line) {
  if (!j.is_array()) throw DatasetError(std::string("malformed line: \"") + field + "\" must be an array", line);
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      throw DatasetError(std::string("malformed line: non-numeric entry in \"") + field + "\"", line);
    }
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline std::size_t json_to_count(const nlohmann::json& header, const char* key) {
  if (!header.contains(key) || !header[key].is_number_unsigned()) {
    throw DatasetError(std::string("malformed header: missing or invalid \"") + key + "\"", 1);
  }
  return header[key].get<std::size_t>();
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& path,
                            std::optional<Dims> expected_dims = std::nullopt) {
  auto in = io::open_for_read(path);
  std::string line;
  std::size_t line_no = 0;

  nlohmann::json header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(std::string("malformed line: ") + e.what(), line_no);
    }
    break;
  }
  if (header.is_null()) throw DatasetError("empty dataset");
  if (!header.is_object()) throw DatasetError("malformed header", line_no);

  Dims dims;
  dims.D = detail::json_to_count(header, "D");
  dims.K = detail::json_to_count(header, "K");
  dims.C = detail::json_to_count(header, "C");
  if (expected_dims && !(*expected_dims == dims)) throw DatasetError("dimension mismatch with expected dims", line_no);
  std::vector<std::string> names;
  if (!header.contains("class_names") || !header["class_names"].is_array()) {
    throw DatasetError("malformed header: missing \"class_names\"", line_no);
  }
  for (const auto& n : header["class_names"]) {
    if (!n.is_string()) throw DatasetError("malformed header: class name must be a string", line_no);
    names.push_back(n.get<std::string>());
  }
  Dataset::validate_header(dims, names);

  std::vector<Sample> samples;
  std::unordered_map<SampleId, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(std::string("malformed line: ") + e.what(), line_no);
    }
    if (!rec.is_object()) throw DatasetError("malformed line: record must be an object", line_no);
    for (const char* key : {"id", "domain", "features", "au_scores", "label"}) {
      if (!rec.contains(key)) throw DatasetError(std::string("malformed line: missing \"") + key + "\"", line_no);
    }
    if (!rec["id"].is_number_unsigned()) throw DatasetError("malformed line: id must be a non-negative integer", line_no);
    const auto id = rec["id"].get<SampleId>();
    const auto& dom = rec["domain"];
    if (!dom.is_string() || (dom != "source" && dom != "target")) {
      throw DatasetError("malformed line: domain must be \"source\" or \"target\"", line_no);
    }
    const Domain domain = dom == "source" ? Domain::Source : Domain::Target;
    std::optional<ClassId> label;
    if (!rec["label"].is_null()) {
      if (!rec["label"].is_number_unsigned()) throw DatasetError("malformed line: label must be a non-negative integer or null", line_no);
      label = rec["label"].get<ClassId>();
    }
    Sample s;
    s.id = id;
    s.domain = domain;
    s.features = detail::json_to_vector(rec["features"], "features", line_no);
    s.au_scores = detail::json_to_vector(rec["au_scores"], "au_scores", line_no);
    if (domain == Domain::Source) {
      s.label = label;
    } else {
      EvalAccess::set_hidden(s, label);
    }
    Dataset::validate_sample(s, dims, line_no);
    if (!seen.emplace(id, line_no).second) throw DatasetError("duplicate id " + std::to_string(id), line_no);
    s.au_code = binarize(s.au_scores);
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw DatasetError("empty dataset");
  return Dataset(dims, std::move(names), std::move(samples));
}

inline void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  auto out = io::open_for_write(path);
  const auto& d = dataset.dims();
  out << "{\"D\":" << d.D << ",\"K\":" << d.K << ",\"C\":" << d.C
      << ",\"class_names\":" << nlohmann::json(dataset.class_names()).dump() << "}\n";
  std::string line;
  for (const auto& s : dataset.samples()) {
    line.clear();
    line += "{\"id\":" + std::to_string(s.id);
    line += ",\"domain\":\"";
    line += to_string(s.domain);
    line += "\",\"features\":";
    io::append_json_array(line, s.features);
    line += ",\"au_scores\":";
    io::append_json_array(line, s.au_scores);
    line += ",\"label\":";
    const auto label = EvalAccess::label_of(s);
    line += label ? std::to_string(*label) : "null";
    line += "}\n";
    out << line;
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

/// Dataset holding only the samples of one domain, or nullopt if none.
inline std::optional<Dataset> filter_domain(const Dataset& dataset, Domain domain) {
  std::vector<Sample> kept;
  for (const auto& s : dataset.samples()) {
    if (s.domain == domain) kept.push_back(s);
  }
  if (kept.empty()) return std::nullopt;
  return Dataset(dataset.dims(), dataset.class_names(), std::move(kept));
}

/// Seeded partition into (first, second) with |first| = round(fraction * N).
/// Stratified over visible labels; hidden target labels are never consulted.
inline std::pair<Dataset, Dataset> split(const Dataset& dataset, double fraction,
                                         std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw DatasetError("split fraction must lie in (0,1)");
  const std::size_t n = dataset.size();
  const auto first_total = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (first_total == 0 || first_total == n) throw DatasetError("empty split");

  // Group indices by visible label; unlabeled samples form their own group
  // keyed after every class.
  const std::size_t unlabeled_key = dataset.dims().C;
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = dataset[i];
    groups[s.label ? *s.label : unlabeled_key].push_back(i);
  }

  // Largest-remainder allocation so the per-group quotas add up exactly.
  struct Quota {
    std::size_t key;
    std::size_t take;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t allocated = 0;
  for (const auto& [key, idx] : groups) {
    const double exact = fraction * static_cast<double>(idx.size());
    const auto take = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({key, take, exact - static_cast<double>(take)});
    allocated += take;
  }
  std::vector<std::size_t> by_remainder(quotas.size());
  for (std::size_t i = 0; i < quotas.size(); ++i) by_remainder[i] = i;
  std::stable_sort(by_remainder.begin(), by_remainder.end(), [&](std::size_t a, std::size_t b) {
    return quotas[a].remainder > quotas[b].remainder;
  });
  for (std::size_t r = 0; allocated < first_total; r = (r + 1) % by_remainder.size()) {
    auto& q = quotas[by_remainder[r]];
    if (q.take < groups[q.key].size()) {
      ++q.take;
      ++allocated;
    }
  }

  std::vector<bool> in_first(n, false);
  for (const auto& q : quotas) {
    const auto& idx = groups[q.key];
    auto engine = keyed_engine(seed, Stream::Split, {q.key});
    const auto order = random_permutation(idx.size(), engine);
    for (std::size_t j = 0; j < q.take; ++j) in_first[idx[order[j]]] = true;
  }

  std::vector<Sample> first, second;
  for (std::size_t i = 0; i < n; ++i) (in_first[i] ? first : second).push_back(dataset[i]);
  return {Dataset(dataset.dims(), dataset.class_names(), std::move(first)),
          Dataset(dataset.dims(), dataset.class_names(), std::move(second))};
}

}  // namespace adafer

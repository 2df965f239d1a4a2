#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "adafer/au_index.hpp"
#include "adafer/dataset.hpp"
#include "adafer/io.hpp"

namespace adafer {

/// Pseudo-label record for one target sample.
struct Annotation {
  SampleId target_id = 0;
  std::optional<ClassId> s_hard;
  std::optional<ClassId> t_hard;
  std::optional<Eigen::VectorXd> t_soft;  // probability vector of length C
  std::size_t support = 0;                // number of retrieved source samples
  bool fallback = false;                  // retrieved by nearest code, not exact match

  friend bool operator==(const Annotation& a, const Annotation& b) {
    const bool soft_eq = a.t_soft.has_value() == b.t_soft.has_value() &&
                         (!a.t_soft || (a.t_soft->size() == b.t_soft->size() && *a.t_soft == *b.t_soft));
    return a.target_id == b.target_id && a.s_hard == b.s_hard && a.t_hard == b.t_hard && soft_eq &&
           a.support == b.support && a.fallback == b.fallback;
  }
};

enum class AssignmentStrategy { SHard, THard, TSoft, SHardTSoft };

inline const char* to_string(AssignmentStrategy s) {
  switch (s) {
    case AssignmentStrategy::SHard: return "s-hard";
    case AssignmentStrategy::THard: return "t-hard";
    case AssignmentStrategy::TSoft: return "t-soft";
    case AssignmentStrategy::SHardTSoft: return "s-hard+t-soft";
  }
  return "?";
}

inline AssignmentStrategy parse_strategy(const std::string& s) {
  for (auto v : {AssignmentStrategy::SHard, AssignmentStrategy::THard, AssignmentStrategy::TSoft,
                 AssignmentStrategy::SHardTSoft}) {
    if (s == to_string(v)) return v;
  }
  throw std::invalid_argument("unknown assignment strategy: " + s);
}

struct AnnotateOptions {
  // Unmatched targets borrow the label of the nearest source code within
  // max_fallback_distance bits (ties: lowest source id).
  bool nearest_code_fallback = false;
  std::size_t max_fallback_distance = 1;
};

using LabelLookup = std::unordered_map<SampleId, ClassId>;

inline LabelLookup visible_labels(const Dataset& source) {
  LabelLookup labels;
  labels.reserve(source.size());
  for (const auto& s : source.samples()) {
    if (s.label) labels.emplace(s.id, *s.label);
  }
  return labels;
}

namespace detail {

// Index of the most frequent class; ties go to the lowest class index.
inline ClassId histogram_mode(const std::vector<std::size_t>& hist) {
  ClassId best = 0;
  for (ClassId c = 1; c < hist.size(); ++c) {
    if (hist[c] > hist[best]) best = c;
  }
  return best;
}

struct Retrieval {
  std::vector<SampleId> ids;
  bool fallback = false;
};

inline std::optional<SampleId> nearest_code_source(const AuCode& code, const AuIndex& source_index,
                                                   std::size_t max_distance) {
  std::size_t best_distance = std::numeric_limits<std::size_t>::max();
  std::optional<SampleId> best;
  source_index.for_each_code([&](const AuCode& c, const std::vector<SampleId>& ids) {
    const std::size_t d = c.hamming(code);
    if (d > max_distance || ids.empty()) return;
    if (d < best_distance || (d == best_distance && ids.front() < *best)) {
      best_distance = d;
      best = ids.front();
    }
  });
  return best;
}

inline Retrieval retrieve(const Sample& target, const AuIndex& source_index,
                          const AnnotateOptions& opts) {
  Retrieval r{source_index.query_exact(target.au_code), false};
  if (r.ids.empty() && opts.nearest_code_fallback) {
    if (auto id = nearest_code_source(target.au_code, source_index, opts.max_fallback_distance)) {
      r.ids.push_back(*id);
      r.fallback = true;
    }
  }
  return r;
}

inline std::vector<std::size_t> label_histogram(const std::vector<SampleId>& ids,
                                                const LabelLookup& labels, std::size_t C) {
  std::vector<std::size_t> hist(C, 0);
  for (auto id : ids) {
    auto it = labels.find(id);
    if (it == labels.end()) throw std::invalid_argument("no label for source sample " + std::to_string(id));
    ++hist.at(it->second);
  }
  return hist;
}

inline std::vector<const Sample*> sorted_by_id(const Dataset& d) {
  std::vector<const Sample*> out;
  out.reserve(d.size());
  for (const auto& s : d.samples()) out.push_back(&s);
  std::sort(out.begin(), out.end(), [](const Sample* a, const Sample* b) { return a->id < b->id; });
  return out;
}

}  // namespace detail

/// Source-query assignment: every source sample votes its label onto the
/// targets sharing its code; each target keeps the majority vote.
inline std::vector<Annotation> s_hard_assign(const Dataset& source, const Dataset& target,
                                             const AuIndex& target_index,
                                             const AnnotateOptions& opts = {}) {
  if (target_index.domain() != Domain::Target) throw std::invalid_argument("s_hard_assign: index must cover the target domain");
  const std::size_t C = target.dims().C;
  std::unordered_map<SampleId, std::vector<std::size_t>> votes;
  for (const auto& s : source.samples()) {
    for (auto tid : target_index.query_exact(s.au_code)) {
      auto& hist = votes[tid];
      if (hist.empty()) hist.assign(C, 0);
      ++hist.at(*s.label);
    }
  }

  std::optional<AuIndex> source_index;
  if (opts.nearest_code_fallback) source_index = build_index(source, Domain::Source);

  std::vector<Annotation> out;
  out.reserve(target.size());
  for (const Sample* t : detail::sorted_by_id(target)) {
    Annotation a;
    a.target_id = t->id;
    if (auto it = votes.find(t->id); it != votes.end()) {
      a.s_hard = detail::histogram_mode(it->second);
      for (auto v : it->second) a.support += v;
    } else if (source_index) {
      if (auto sid = detail::nearest_code_source(t->au_code, *source_index, opts.max_fallback_distance)) {
        a.s_hard = *source.at(*sid).label;
        a.support = 1;
        a.fallback = true;
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

/// Target-query assignment: the mode of the retrieved source labels.
inline std::vector<Annotation> t_hard_assign(const Dataset& target, const AuIndex& source_index,
                                             const LabelLookup& source_labels,
                                             const AnnotateOptions& opts = {}) {
  std::vector<Annotation> out;
  out.reserve(target.size());
  for (const Sample* t : detail::sorted_by_id(target)) {
    Annotation a;
    a.target_id = t->id;
    const auto r = detail::retrieve(*t, source_index, opts);
    a.support = r.ids.size();
    a.fallback = r.fallback;
    if (a.support > 0) {
      a.t_hard = detail::histogram_mode(detail::label_histogram(r.ids, source_labels, target.dims().C));
    }
    out.push_back(std::move(a));
  }
  return out;
}

/// Target-query soft assignment: the normalized retrieved label histogram.
inline std::vector<Annotation> t_soft_assign(const Dataset& target, const AuIndex& source_index,
                                             const LabelLookup& source_labels,
                                             const AnnotateOptions& opts = {}) {
  const std::size_t C = target.dims().C;
  std::vector<Annotation> out;
  out.reserve(target.size());
  for (const Sample* t : detail::sorted_by_id(target)) {
    Annotation a;
    a.target_id = t->id;
    const auto r = detail::retrieve(*t, source_index, opts);
    a.support = r.ids.size();
    a.fallback = r.fallback;
    if (a.support > 0) {
      const auto hist = detail::label_histogram(r.ids, source_labels, C);
      Eigen::VectorXd soft(static_cast<Eigen::Index>(C));
      for (std::size_t c = 0; c < C; ++c) {
        soft[static_cast<Eigen::Index>(c)] = static_cast<double>(hist[c]) / static_cast<double>(a.support);
      }
      a.t_soft = std::move(soft);
    }
    out.push_back(std::move(a));
  }
  return out;
}

/// Field-wise merge of the three assignment lists; all must list the same
/// target ids in the same order.
inline std::vector<Annotation> merge_annotations(const std::vector<Annotation>& s_hard,
                                                 const std::vector<Annotation>& t_hard,
                                                 const std::vector<Annotation>& t_soft) {
  if (s_hard.size() != t_hard.size() || s_hard.size() != t_soft.size()) {
    throw std::invalid_argument("merge_annotations: lists cover different targets");
  }
  std::vector<Annotation> out;
  out.reserve(s_hard.size());
  for (std::size_t i = 0; i < s_hard.size(); ++i) {
    if (s_hard[i].target_id != t_hard[i].target_id || s_hard[i].target_id != t_soft[i].target_id) {
      throw std::invalid_argument("merge_annotations: target id mismatch at position " + std::to_string(i));
    }
    Annotation a = t_soft[i];
    a.s_hard = s_hard[i].s_hard;
    a.t_hard = t_hard[i].t_hard;
    a.support = std::max({s_hard[i].support, t_hard[i].support, t_soft[i].support});
    a.fallback = s_hard[i].fallback || t_hard[i].fallback || t_soft[i].fallback;
    out.push_back(std::move(a));
  }
  return out;
}

/// Drops the fields a strategy does not consume. Samples with zero support
/// carry no labels under any strategy.
inline std::vector<Annotation> select_for_strategy(std::vector<Annotation> annotations,
                                                   AssignmentStrategy strategy) {
  const bool keep_s = strategy == AssignmentStrategy::SHard || strategy == AssignmentStrategy::SHardTSoft;
  const bool keep_th = strategy == AssignmentStrategy::THard;
  const bool keep_ts = strategy == AssignmentStrategy::TSoft || strategy == AssignmentStrategy::SHardTSoft;
  for (auto& a : annotations) {
    if (!keep_s || a.support == 0) a.s_hard.reset();
    if (!keep_th || a.support == 0) a.t_hard.reset();
    if (!keep_ts || a.support == 0) a.t_soft.reset();
  }
  return annotations;
}

inline std::vector<Annotation> combine_annotations(const std::vector<Annotation>& s_hard,
                                                   const std::vector<Annotation>& t_hard,
                                                   const std::vector<Annotation>& t_soft,
                                                   AssignmentStrategy strategy = AssignmentStrategy::SHardTSoft) {
  return select_for_strategy(merge_annotations(s_hard, t_hard, t_soft), strategy);
}

/// Runs all three assignments and merges them, keeping every field.
inline std::vector<Annotation> annotate_all(const Dataset& source, const Dataset& target,
                                            const AnnotateOptions& opts = {}) {
  const auto source_index = build_index(source, Domain::Source);
  const auto target_index = build_index(target, Domain::Target);
  const auto labels = visible_labels(source);
  return merge_annotations(s_hard_assign(source, target, target_index, opts),
                           t_hard_assign(target, source_index, labels, opts),
                           t_soft_assign(target, source_index, labels, opts));
}

inline void write_annotations_jsonl(std::ostream& out, const std::vector<Annotation>& annotations) {
  auto opt = [](const std::optional<ClassId>& v) { return v ? std::to_string(*v) : std::string("null"); };
  std::string line;
  for (const auto& a : annotations) {
    line = "{\"target_id\":" + std::to_string(a.target_id) + ",\"s_hard\":" + opt(a.s_hard) +
           ",\"t_hard\":" + opt(a.t_hard) + ",\"t_soft\":";
    if (a.t_soft) {
      io::append_json_array(line, *a.t_soft);
    } else {
      line += "null";
    }
    line += ",\"support\":" + std::to_string(a.support) + "}\n";
    out << line;
  }
}

inline std::vector<Annotation> read_annotations_jsonl(std::istream& in) {
  std::vector<Annotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Annotation a;
      a.target_id = j.at("target_id").get<SampleId>();
      if (!j.at("s_hard").is_null()) a.s_hard = j["s_hard"].get<ClassId>();
      if (!j.at("t_hard").is_null()) a.t_hard = j["t_hard"].get<ClassId>();
      if (!j.at("t_soft").is_null()) a.t_soft = detail::json_to_vector(j["t_soft"], "t_soft", line_no);
      a.support = j.at("support").get<std::size_t>();
      out.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(std::string("malformed annotation: ") + e.what(), line_no);
    }
  }
  return out;
}

}  // namespace adafer

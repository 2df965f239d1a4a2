#pragma once

#include <algorithm>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adafer/au_index.hpp"
#include "adafer/dataset.hpp"
#include "adafer/rng.hpp"

namespace adafer {

enum class TripletDirection { SourceAnchored = 0, TargetAnchored = 1 };

inline const char* to_string(TripletDirection d) {
  return d == TripletDirection::SourceAnchored ? "source" : "target";
}

/// Cross-domain triplet. Source-anchored triplets take positive and negative
/// from the target domain; target-anchored ones take them from the source.
struct Triplet {
  SampleId anchor_id = 0;
  SampleId positive_id = 0;
  SampleId negative_id = 0;
  TripletDirection direction = TripletDirection::SourceAnchored;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

enum class AnchorSet { SourceOnly, TargetOnly, Both };

inline const char* to_string(AnchorSet a) {
  switch (a) {
    case AnchorSet::SourceOnly: return "source";
    case AnchorSet::TargetOnly: return "target";
    case AnchorSet::Both: return "both";
  }
  return "?";
}

inline AnchorSet parse_anchor_set(const std::string& s) {
  if (s == "source") return AnchorSet::SourceOnly;
  if (s == "target") return AnchorSet::TargetOnly;
  if (s == "both") return AnchorSet::Both;
  throw std::invalid_argument("unknown anchor set: " + s);
}

struct MiningConfig {
  double tau_n = 0.5;  // hard-negative AU similarity threshold, strict >
  AnchorSet anchors = AnchorSet::Both;
  std::uint64_t seed = 0;
  std::size_t triplets_per_anchor = 1;

  void validate() const {
    if (!(tau_n >= 0.0 && tau_n <= 1.0)) throw std::invalid_argument("tau_n must lie in [0,1]");
    if (triplets_per_anchor == 0) throw std::invalid_argument("triplets_per_anchor must be positive");
  }
};

/// Candidates whose AU similarity to the anchor exceeds tau_n, in ascending
/// id order. When none qualifies the whole candidate list is returned.
inline std::vector<SampleId> hard_negative_pool(const Sample& anchor,
                                                std::span<const Sample* const> candidates,
                                                double tau_n) {
  std::vector<SampleId> pool;
  for (const Sample* c : candidates) {
    if (au_similarity(anchor.au_scores, c->au_scores) > tau_n) pool.push_back(c->id);
  }
  if (pool.empty()) {
    for (const Sample* c : candidates) pool.push_back(c->id);
  }
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline std::vector<SampleId> hard_negative_pool(const Sample& anchor, std::span<const Sample> candidates,
                                                double tau_n) {
  std::vector<const Sample*> ptrs;
  ptrs.reserve(candidates.size());
  for (const auto& c : candidates) ptrs.push_back(&c);
  return hard_negative_pool(anchor, std::span<const Sample* const>(ptrs), tau_n);
}

namespace detail {

inline void mine_direction(const Dataset& anchors, const Dataset& others, TripletDirection direction,
                           const MiningConfig& config, std::vector<Triplet>& out) {
  const Domain other_domain = direction == TripletDirection::SourceAnchored ? Domain::Target : Domain::Source;
  const AuIndex other_index = build_index(others, other_domain);

  std::vector<const Sample*> ordered;
  for (const auto& s : anchors.samples()) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(), [](const Sample* a, const Sample* b) { return a->id < b->id; });

  std::vector<const Sample*> candidates;
  for (const Sample* anchor : ordered) {
    const auto& positives = other_index.query_exact(anchor->au_code);
    if (positives.empty()) continue;
    candidates.clear();
    for (const auto& o : others.samples()) {
      if (!(o.au_code == anchor->au_code)) candidates.push_back(&o);
    }
    if (candidates.empty()) continue;
    const auto pool = hard_negative_pool(*anchor, std::span<const Sample* const>(candidates), config.tau_n);

    auto engine = keyed_engine(config.seed, Stream::Mining,
                               {static_cast<std::uint64_t>(direction), anchor->id});
    std::uniform_int_distribution<std::size_t> pick_pos(0, positives.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_neg(0, pool.size() - 1);
    for (std::size_t k = 0; k < config.triplets_per_anchor; ++k) {
      const SampleId p = positives[pick_pos(engine)];
      const SampleId n = pool[pick_neg(engine)];
      out.push_back({anchor->id, p, n, direction});
    }
  }
}

}  // namespace detail

/// Offline cross-domain triplet mining. Output is ordered by (direction,
/// anchor id) and depends only on the inputs and config.
inline std::vector<Triplet> mine_triplets(const Dataset& source, const Dataset& target,
                                          const MiningConfig& config) {
  config.validate();
  if (source.dims().K != target.dims().K) throw std::invalid_argument("mine_triplets: AU count differs between domains");
  std::vector<Triplet> out;
  if (config.anchors != AnchorSet::TargetOnly) {
    detail::mine_direction(source, target, TripletDirection::SourceAnchored, config, out);
  }
  if (config.anchors != AnchorSet::SourceOnly) {
    detail::mine_direction(target, source, TripletDirection::TargetAnchored, config, out);
  }
  return out;
}

struct TripletViolation {
  std::size_t index;
  std::string message;
};

struct TripletReport {
  std::size_t checked = 0;
  std::vector<TripletViolation> violations;

  bool ok() const noexcept { return violations.empty(); }
};

inline TripletReport validate_triplets(std::span<const Triplet> triplets, const Dataset& source,
                                       const Dataset& target) {
  TripletReport report;
  report.checked = triplets.size();
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    const bool src_anchor = t.direction == TripletDirection::SourceAnchored;
    const Dataset& anchor_set = src_anchor ? source : target;
    const Dataset& other_set = src_anchor ? target : source;
    const Domain anchor_domain = src_anchor ? Domain::Source : Domain::Target;
    const Sample* a = anchor_set.find(t.anchor_id);
    const Sample* p = other_set.find(t.positive_id);
    const Sample* n = other_set.find(t.negative_id);
    auto flag = [&](std::string msg) { report.violations.push_back({i, std::move(msg)}); };
    if (!a || a->domain != anchor_domain) {
      flag("anchor " + std::to_string(t.anchor_id) + " not found in anchor domain");
      continue;
    }
    if (!p || p->domain == a->domain) flag("positive " + std::to_string(t.positive_id) + " is not a cross-domain sample");
    if (!n || n->domain == a->domain) flag("negative " + std::to_string(t.negative_id) + " is not a cross-domain sample");
    if (p && !(p->au_code == a->au_code)) flag("positive code differs from anchor code");
    if (n && n->au_code == a->au_code) flag("negative code equals anchor code");
  }
  return report;
}

inline void write_triplets_csv(std::ostream& out, std::span<const Triplet> triplets) {
  out << "direction,anchor_id,positive_id,negative_id\n";
  for (const auto& t : triplets) {
    out << to_string(t.direction) << ',' << t.anchor_id << ',' << t.positive_id << ',' << t.negative_id << '\n';
  }
}

inline std::vector<Triplet> read_triplets_csv(std::istream& in) {
  std::vector<Triplet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 || line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1) {
      cells.push_back(line.substr(start, pos - start));
    }
    cells.push_back(line.substr(start));
    if (cells.size() != 4 || (cells[0] != "source" && cells[0] != "target")) {
      throw DatasetError("malformed triplet row", line_no);
    }
    try {
      out.push_back({std::stoull(cells[1]), std::stoull(cells[2]), std::stoull(cells[3]),
                     cells[0] == "source" ? TripletDirection::SourceAnchored : TripletDirection::TargetAnchored});
    } catch (const std::exception&) {
      throw DatasetError("malformed triplet row", line_no);
    }
  }
  return out;
}

}  // namespace adafer

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "adafer/annotate.hpp"
#include "adafer/dataset.hpp"
#include "adafer/io.hpp"
#include "adafer/model.hpp"
#include "adafer/rng.hpp"
#include "adafer/triplets.hpp"

namespace adafer {

struct TrainConfig {
  double beta = 1.0;
  double epsilon = 1.0;
  double gamma = 0.5;       // fixed margin, or the starting value when learned
  bool learn_gamma = false;
  double lr = 0.001;
  double lr_decay = 0.9;    // per epoch
  std::size_t epochs = 40;
  std::size_t batch_size = 128;
  std::size_t hidden_dim = 64;
  std::uint64_t seed = 0;
  AssignmentStrategy strategy = AssignmentStrategy::SHardTSoft;
  KlDirection kl_direction = KlDirection::TargetToPrediction;
  // Re-mine triplets at the start of every epoch after the first with seed
  // mining.seed + epoch.
  bool remine_each_epoch = false;
  MiningConfig mining;

  void validate() const {
    if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
    if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be >= 0");
    if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(lr_decay > 0.0)) throw std::invalid_argument("lr_decay must be positive");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (hidden_dim < 1) throw std::invalid_argument("hidden_dim must be >= 1");
  }

  LossConfig loss() const { return {beta, epsilon, gamma, kl_direction}; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double L_c = 0.0;
  double L_tri = 0.0;
  double L_all = 0.0;
  double active_triplet_fraction = 0.0;
  double gamma_value = 0.0;
  std::optional<double> target_accuracy;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  HeadParams params;
  TrainHistory history;
};

struct Metrics {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;  // 0 for classes without samples
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t n = 0;
};

/// Scores predictions against visible source labels or hidden target labels.
inline Metrics evaluate(const HeadParams& params, const Dataset& dataset) {
  const std::size_t C = dataset.dims().C;
  Metrics m;
  m.confusion.assign(C, std::vector<std::size_t>(C, 0));
  std::size_t correct = 0;
  for (const auto& s : dataset.samples()) {
    const auto label = EvalAccess::label_of(s);
    if (!label) throw std::invalid_argument("evaluate: sample " + std::to_string(s.id) + " has no label");
    const ClassId pred = predict_class(forward(params, s.features).probs);
    ++m.confusion[*label][pred];
    if (pred == *label) ++correct;
  }
  m.n = dataset.size();
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n);
  m.per_class_accuracy.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t row = 0;
    for (auto v : m.confusion[c]) row += v;
    if (row > 0) m.per_class_accuracy[c] = static_cast<double>(m.confusion[c][c]) / static_cast<double>(row);
  }
  return m;
}

namespace detail {

struct TargetItem {
  const Eigen::VectorXd* x;
  std::optional<ClassId> hard;
  const Eigen::VectorXd* soft;
};

inline std::vector<TargetItem> target_items(const Dataset& target, const std::vector<Annotation>& selected) {
  std::vector<TargetItem> items;
  for (const auto& a : selected) {
    const auto hard = a.s_hard ? a.s_hard : a.t_hard;
    if (!hard && !a.t_soft) continue;
    const Sample* s = target.find(a.target_id);
    if (!s) throw std::invalid_argument("annotation for unknown target id " + std::to_string(a.target_id));
    if (a.t_soft && static_cast<std::size_t>(a.t_soft->size()) != target.dims().C) {
      throw std::invalid_argument("soft label length differs from class count");
    }
    items.push_back({&s->features, hard, a.t_soft ? &*a.t_soft : nullptr});
  }
  return items;
}

inline std::vector<TripletInput> triplet_items(const Dataset& source, const Dataset& target,
                                               const std::vector<Triplet>& triplets) {
  std::vector<TripletInput> items;
  items.reserve(triplets.size());
  for (const auto& t : triplets) {
    const bool src = t.direction == TripletDirection::SourceAnchored;
    const Dataset& anchors = src ? source : target;
    const Dataset& others = src ? target : source;
    items.push_back({&anchors.at(t.anchor_id).features, &others.at(t.positive_id).features,
                     &others.at(t.negative_id).features});
  }
  return items;
}

}  // namespace detail

/// Joint training of the head on labeled source samples, pseudo-labeled
/// target samples and cross-domain triplets. Target ground truth is never
/// read; `eval` (optional) is only scored for the history.
inline TrainResult train(const Dataset& source, const Dataset& target, const std::vector<Annotation>& annotations,
                         std::vector<Triplet> triplets, const TrainConfig& config,
                         std::optional<HeadParams> init = std::nullopt, const Dataset* eval = nullptr) {
  config.validate();
  if (source.size() == 0) throw std::invalid_argument("train: empty source dataset");
  if (source.dims().D != target.dims().D || source.dims().C != target.dims().C) {
    throw std::invalid_argument("train: source and target dims differ");
  }

  TrainResult result{init ? std::move(*init)
                          : init_head(source.dims().D, config.hidden_dim, source.dims().C, config.seed,
                                      config.learn_gamma ? std::optional<double>(config.gamma) : std::nullopt),
                     {}};
  HeadParams& params = result.params;
  if (params.input_dim() != source.dims().D || params.num_classes() != source.dims().C) {
    throw std::invalid_argument("train: initial params do not match dataset dims");
  }
  AdamState adam = AdamState::for_params(params);
  const LossConfig loss_cfg = config.loss();
  const std::size_t B = config.batch_size;

  std::vector<LabeledInput> src_items;
  src_items.reserve(source.size());
  for (const auto& s : source.samples()) src_items.push_back({&s.features, *s.label});

  const auto selected = select_for_strategy(annotations, config.strategy);
  const auto tgt_items = config.beta != 0.0 ? detail::target_items(target, selected) : std::vector<detail::TargetItem>{};
  auto tri_items = config.epsilon != 0.0 ? detail::triplet_items(source, target, triplets) : std::vector<TripletInput>{};

  // An epoch is one pass over the largest pool in use; smaller pools cycle.
  const std::size_t largest = std::max({src_items.size(), tgt_items.size(), tri_items.size()});
  const std::size_t steps = (largest + B - 1) / B;
  Batch batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (epoch > 0 && config.remine_each_epoch && config.epsilon != 0.0) {
      MiningConfig mc = config.mining;
      mc.seed = config.mining.seed + epoch;
      triplets = mine_triplets(source, target, mc);
      tri_items = detail::triplet_items(source, target, triplets);
    }
    const double lr = lr_at(epoch, config.lr, config.lr_decay);
    auto src_engine = keyed_engine(config.seed, Stream::ShuffleSource, {epoch});
    auto tgt_engine = keyed_engine(config.seed, Stream::ShuffleTarget, {epoch});
    auto tri_engine = keyed_engine(config.seed, Stream::ShuffleTriplets, {epoch});
    const auto src_order = random_permutation(src_items.size(), src_engine);
    const auto tgt_order = random_permutation(tgt_items.size(), tgt_engine);
    const auto tri_order = random_permutation(tri_items.size(), tri_engine);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    std::size_t active = 0, counted = 0;
    for (std::size_t step = 0; step < steps; ++step) {
      batch.source.clear();
      batch.target_hard.clear();
      batch.target_soft.clear();
      batch.triplets.clear();
      for (std::size_t b = 0; b < B; ++b) {
        batch.source.push_back(src_items[src_order[(step * B + b) % src_items.size()]]);
      }
      if (!tgt_items.empty()) {
        for (std::size_t b = 0; b < B; ++b) {
          const auto& t = tgt_items[tgt_order[(step * B + b) % tgt_items.size()]];
          if (t.hard) batch.target_hard.push_back({t.x, *t.hard});
          if (t.soft) batch.target_soft.push_back({t.x, t.soft});
        }
      }
      if (!tri_items.empty()) {
        for (std::size_t b = 0; b < B; ++b) batch.triplets.push_back(tri_items[tri_order[(step * B + b) % tri_items.size()]]);
      }

      const auto lg = backward(batch, params, loss_cfg);
      rec.L_c += lg.loss.L_c;
      rec.L_tri += lg.loss.L_tri;
      rec.L_all += lg.loss.L_all;
      active += lg.loss.active_triplets;
      counted += lg.loss.num_triplets;
      adam_step(params, lg.grad, adam, lr);
    }
    rec.L_c /= static_cast<double>(steps);
    rec.L_tri /= static_cast<double>(steps);
    rec.L_all /= static_cast<double>(steps);
    rec.active_triplet_fraction = counted == 0 ? 0.0 : static_cast<double>(active) / static_cast<double>(counted);
    rec.gamma_value = params.margin(config.gamma);
    if (eval) rec.target_accuracy = evaluate(params, *eval).accuracy;
    result.history.epochs.push_back(rec);
  }
  return result;
}

inline void write_history_csv(std::ostream& out, const TrainHistory& history) {
  out << "epoch,lr,L_c,L_tri,L_all,active_triplet_fraction,gamma_value,target_accuracy\n";
  for (const auto& r : history.epochs) {
    out << r.epoch << ',' << io::format_double(r.lr) << ',' << io::format_double(r.L_c) << ','
        << io::format_double(r.L_tri) << ',' << io::format_double(r.L_all) << ','
        << io::format_double(r.active_triplet_fraction) << ',' << io::format_double(r.gamma_value) << ','
        << (r.target_accuracy ? io::format_double(*r.target_accuracy) : std::string()) << '\n';
  }
}

namespace detail {

inline void append_matrix(std::string& out, const Eigen::MatrixXd& m) {
  out += '[';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (i) out += ',';
    io::append_json_array(out, m.row(i).transpose());
  }
  out += ']';
}

inline Eigen::MatrixXd json_to_matrix(const nlohmann::json& j, const char* field) {
  if (!j.is_array() || j.empty()) throw DatasetError(std::string("params: \"") + field + "\" must be a non-empty array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::VectorXd first = json_to_vector(j[0], field, 1);
  Eigen::MatrixXd m(rows, first.size());
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Eigen::VectorXd r = json_to_vector(j[static_cast<std::size_t>(i)], field, 1);
    if (r.size() != first.size()) throw DatasetError(std::string("params: ragged \"") + field + "\"");
    m.row(i) = r.transpose();
  }
  return m;
}

}  // namespace detail

/// Single JSON object; numbers with 17 significant digits.
inline void save_params(const HeadParams& p, const std::filesystem::path& path) {
  std::string s = "{\"D\":" + std::to_string(p.input_dim()) + ",\"H\":" + std::to_string(p.hidden_dim()) +
                  ",\"C\":" + std::to_string(p.num_classes()) + ",\"W1\":";
  detail::append_matrix(s, p.W1);
  s += ",\"b1\":";
  io::append_json_array(s, p.b1);
  s += ",\"W2\":";
  detail::append_matrix(s, p.W2);
  s += ",\"b2\":";
  io::append_json_array(s, p.b2);
  s += ",\"margin_raw\":";
  s += p.margin_raw ? io::format_double(*p.margin_raw) : std::string("null");
  s += "}\n";
  auto out = io::open_for_write(path);
  out << s;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline HeadParams load_params(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("params: ") + e.what());
  }
  HeadParams p;
  p.W1 = detail::json_to_matrix(j.at("W1"), "W1");
  p.b1 = detail::json_to_vector(j.at("b1"), "b1", 1);
  p.W2 = detail::json_to_matrix(j.at("W2"), "W2");
  p.b2 = detail::json_to_vector(j.at("b2"), "b2", 1);
  if (!j.at("margin_raw").is_null()) p.margin_raw = j["margin_raw"].get<double>();
  if (p.b1.size() != p.W1.rows() || p.W2.cols() != p.W1.rows() || p.b2.size() != p.W2.rows()) {
    throw DatasetError("params: inconsistent shapes");
  }
  return p;
}

}  // namespace adafer

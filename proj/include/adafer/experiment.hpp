#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "adafer/annotate.hpp"
#include "adafer/au_index.hpp"
#include "adafer/dataset.hpp"
#include "adafer/io.hpp"
#include "adafer/synth.hpp"
#include "adafer/trainer.hpp"
#include "adafer/triplets.hpp"

namespace adafer {

/// Raised by the pipeline with the failing stage in front of the message.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage " + stage + ": " + what), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

namespace detail {

inline double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("config: " + key + " expects a number, got \"" + v + "\"");
  return out;
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("config: " + key + " expects an integer, got \"" + v + "\"");
  return out;
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: " + key + " expects a boolean, got \"" + v + "\"");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Everything a pipeline run depends on. Keys match the CLI flag names.
struct ExperimentConfig {
  SynthConfig synth;
  TrainConfig train;
  AnnotateOptions annotate;
  std::uint64_t seed = 0;
  std::string source_path;  // empty: generate synthetic data
  std::string target_path;
  bool withhold_labels = false;  // train on a target copy with hidden labels removed

  struct Key {
    const char* name;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
  };

  static const std::vector<Key>& keys() {
    using detail::parse_count;
    using detail::parse_flag;
    using detail::parse_real;
    using io::format_double;
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    static const std::vector<Key> table = {
        {"seed", [](const auto& c) { return std::to_string(c.seed); },
         [](auto& c, const auto& v) { c.seed = parse_count("seed", v); }},
        {"source", [](const auto& c) { return c.source_path; }, [](auto& c, const auto& v) { c.source_path = v; }},
        {"target", [](const auto& c) { return c.target_path; }, [](auto& c, const auto& v) { c.target_path = v; }},
        {"beta", [](const auto& c) { return format_double(c.train.beta); },
         [](auto& c, const auto& v) { c.train.beta = parse_real("beta", v); }},
        {"epsilon", [](const auto& c) { return format_double(c.train.epsilon); },
         [](auto& c, const auto& v) { c.train.epsilon = parse_real("epsilon", v); }},
        {"gamma",
         [](const auto& c) { return c.train.learn_gamma ? std::string("learn") : format_double(c.train.gamma); },
         [](auto& c, const auto& v) {
           if (v == "learn") {
             c.train.learn_gamma = true;
           } else {
             c.train.learn_gamma = false;
             c.train.gamma = parse_real("gamma", v);
           }
         }},
        {"gamma-init", [](const auto& c) { return format_double(c.train.gamma); },
         [](auto& c, const auto& v) { c.train.gamma = parse_real("gamma-init", v); }},
        {"tau-n", [](const auto& c) { return format_double(c.train.mining.tau_n); },
         [](auto& c, const auto& v) { c.train.mining.tau_n = parse_real("tau-n", v); }},
        {"strategy", [](const auto& c) { return std::string(to_string(c.train.strategy)); },
         [](auto& c, const auto& v) { c.train.strategy = parse_strategy(v); }},
        {"anchors", [](const auto& c) { return std::string(to_string(c.train.mining.anchors)); },
         [](auto& c, const auto& v) { c.train.mining.anchors = parse_anchor_set(v); }},
        {"triplets-per-anchor", [](const auto& c) { return std::to_string(c.train.mining.triplets_per_anchor); },
         [](auto& c, const auto& v) { c.train.mining.triplets_per_anchor = parse_count("triplets-per-anchor", v); }},
        {"remine", [b](const auto& c) { return b(c.train.remine_each_epoch); },
         [](auto& c, const auto& v) { c.train.remine_each_epoch = parse_flag("remine", v); }},
        {"kl-direction",
         [](const auto& c) {
           return std::string(c.train.kl_direction == KlDirection::TargetToPrediction ? "target-to-prediction"
                                                                                      : "prediction-to-target");
         },
         [](auto& c, const auto& v) {
           if (v == "target-to-prediction") c.train.kl_direction = KlDirection::TargetToPrediction;
           else if (v == "prediction-to-target") c.train.kl_direction = KlDirection::PredictionToTarget;
           else throw std::invalid_argument("config: unknown kl-direction \"" + v + "\"");
         }},
        {"lr", [](const auto& c) { return format_double(c.train.lr); },
         [](auto& c, const auto& v) { c.train.lr = parse_real("lr", v); }},
        {"lr-decay", [](const auto& c) { return format_double(c.train.lr_decay); },
         [](auto& c, const auto& v) { c.train.lr_decay = parse_real("lr-decay", v); }},
        {"epochs", [](const auto& c) { return std::to_string(c.train.epochs); },
         [](auto& c, const auto& v) { c.train.epochs = parse_count("epochs", v); }},
        {"batch-size", [](const auto& c) { return std::to_string(c.train.batch_size); },
         [](auto& c, const auto& v) { c.train.batch_size = parse_count("batch-size", v); }},
        {"hidden-dim", [](const auto& c) { return std::to_string(c.train.hidden_dim); },
         [](auto& c, const auto& v) { c.train.hidden_dim = parse_count("hidden-dim", v); }},
        {"nearest-code-fallback", [b](const auto& c) { return b(c.annotate.nearest_code_fallback); },
         [](auto& c, const auto& v) { c.annotate.nearest_code_fallback = parse_flag("nearest-code-fallback", v); }},
        {"max-fallback-distance", [](const auto& c) { return std::to_string(c.annotate.max_fallback_distance); },
         [](auto& c, const auto& v) { c.annotate.max_fallback_distance = parse_count("max-fallback-distance", v); }},
        {"withhold-labels", [b](const auto& c) { return b(c.withhold_labels); },
         [](auto& c, const auto& v) { c.withhold_labels = parse_flag("withhold-labels", v); }},
        {"classes", [](const auto& c) { return std::to_string(c.synth.C); },
         [](auto& c, const auto& v) { c.synth.C = parse_count("classes", v); }},
        {"feature-dim", [](const auto& c) { return std::to_string(c.synth.D); },
         [](auto& c, const auto& v) { c.synth.D = parse_count("feature-dim", v); }},
        {"au-count", [](const auto& c) { return std::to_string(c.synth.K); },
         [](auto& c, const auto& v) { c.synth.K = parse_count("au-count", v); }},
        {"n-source", [](const auto& c) { return std::to_string(c.synth.n_source); },
         [](auto& c, const auto& v) { c.synth.n_source = parse_count("n-source", v); }},
        {"n-target", [](const auto& c) { return std::to_string(c.synth.n_target); },
         [](auto& c, const auto& v) { c.synth.n_target = parse_count("n-target", v); }},
        {"feature-shift", [](const auto& c) { return format_double(c.synth.feature_shift); },
         [](auto& c, const auto& v) { c.synth.feature_shift = parse_real("feature-shift", v); }},
        {"feature-noise", [](const auto& c) { return format_double(c.synth.feature_noise); },
         [](auto& c, const auto& v) { c.synth.feature_noise = parse_real("feature-noise", v); }},
        {"au-flip-rate", [](const auto& c) { return format_double(c.synth.au_flip_rate); },
         [](auto& c, const auto& v) { c.synth.au_flip_rate = parse_real("au-flip-rate", v); }},
        {"au-score-noise", [](const auto& c) { return format_double(c.synth.au_score_noise); },
         [](auto& c, const auto& v) { c.synth.au_score_noise = parse_real("au-score-noise", v); }},
        {"label-prior-skew", [](const auto& c) { return format_double(c.synth.label_prior_skew); },
         [](auto& c, const auto& v) { c.synth.label_prior_skew = parse_real("label-prior-skew", v); }},
        {"class-separation", [](const auto& c) { return format_double(c.synth.class_separation); },
         [](auto& c, const auto& v) { c.synth.class_separation = parse_real("class-separation", v); }},
        {"au-feature-coupling", [](const auto& c) { return format_double(c.synth.au_feature_coupling); },
         [](auto& c, const auto& v) { c.synth.au_feature_coupling = parse_real("au-feature-coupling", v); }},
    };
    return table;
  }

  static const Key* find_key(const std::string& name) {
    for (const auto& k : keys()) {
      if (name == k.name) return &k;
    }
    return nullptr;
  }

  /// Accepts snake_case spellings and a leading "--".
  void set(std::string key, const std::string& value) {
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    std::replace(key.begin(), key.end(), '_', '-');
    const Key* k = find_key(key);
    if (!k) throw std::invalid_argument("config: unknown key \"" + key + "\"");
    k->set(*this, value);
  }

  std::string get(const std::string& key) const {
    const Key* k = find_key(key);
    if (!k) throw std::invalid_argument("config: unknown key \"" + key + "\"");
    return k->get(*this);
  }

  /// One "key=value" line per key in table order.
  std::string canonical() const {
    std::string out;
    for (const auto& k : keys()) {
      out += k.name;
      out += '=';
      out += k.get(*this);
      out += '\n';
    }
    return out;
  }

  std::string hash() const { return io::hex64(io::fnv1a(canonical())); }

  /// The run seed drives synthesis, mining and training alike.
  SynthConfig synth_config() const {
    SynthConfig s = synth;
    s.seed = seed;
    return s;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    t.mining.seed = seed;
    return t;
  }

  void validate() const {
    train_config().validate();
    train_config().mining.validate();
    if (source_path.empty() != target_path.empty()) {
      throw std::invalid_argument("config: source and target must be given together");
    }
    if (source_path.empty()) synth_config().validate();
  }
};

/// Flat key/value text. '#' starts a comment; "key = value" and
/// "key value" are both accepted.
inline void apply_config_text(ExperimentConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto sep = line.find('=');
    if (sep == std::string::npos) sep = line.find_first_of(" \t");
    if (sep == std::string::npos) throw DatasetError("config: expected key=value", line_no);
    try {
      cfg.set(detail::trim(line.substr(0, sep)), detail::trim(line.substr(sep + 1)));
    } catch (const std::invalid_argument& e) {
      throw DatasetError(e.what(), line_no);
    }
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  ExperimentConfig cfg;
  apply_config_text(cfg, io::read_file(path));
  return cfg;
}

enum class Method {
  Baseline1SourceOnly,
  Baseline2AuQuery,
  Baseline3HardPseudo,
  Baseline4SoftPseudo,
  Baseline5AuConcat,
  AdaFER,
  AgaOnly,
  AgtOnly,
};

inline constexpr std::array<Method, 8> kAllMethods = {
    Method::Baseline1SourceOnly, Method::Baseline2AuQuery, Method::Baseline3HardPseudo,
    Method::Baseline4SoftPseudo, Method::Baseline5AuConcat, Method::AdaFER,
    Method::AgaOnly,             Method::AgtOnly};

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Baseline1SourceOnly: return "baseline1_source_only";
    case Method::Baseline2AuQuery: return "baseline2_au_query";
    case Method::Baseline3HardPseudo: return "baseline3_hard_pseudo";
    case Method::Baseline4SoftPseudo: return "baseline4_soft_pseudo";
    case Method::Baseline5AuConcat: return "baseline5_au_concat";
    case Method::AdaFER: return "adafer";
    case Method::AgaOnly: return "aga_only";
    case Method::AgtOnly: return "agt_only";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (auto m : kAllMethods) {
    if (s == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown method: " + s);
}

/// Datasets and derived artifacts shared by every method of a run.
struct Prepared {
  Dataset source;
  Dataset target;       // what training sees
  Dataset eval_target;  // scored after training
  std::vector<Annotation> annotations;
  std::vector<Triplet> triplets;
  AuClassDistribution au_stats;
  std::optional<SynthMeta> meta;
};

inline Dataset strip_hidden_labels(const Dataset& d) {
  std::vector<Sample> samples(d.samples().begin(), d.samples().end());
  for (auto& s : samples) {
    if (s.domain == Domain::Target) EvalAccess::set_hidden(s, std::nullopt);
  }
  return Dataset(d.dims(), d.class_names(), std::move(samples));
}

namespace detail {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace detail

inline Prepared prepare(const ExperimentConfig& cfg) {
  detail::stage("config", [&] { cfg.validate(); return 0; });
  std::optional<SynthMeta> meta;
  auto [source, target] = detail::stage("load", [&]() -> std::pair<Dataset, Dataset> {
    if (!cfg.source_path.empty()) {
      Dataset s = load_dataset(cfg.source_path);
      Dataset t = load_dataset(cfg.target_path, s.dims());
      return {std::move(s), std::move(t)};
    }
    auto r = generate(cfg.synth_config());
    meta = std::move(r.meta);
    return {std::move(r.source), std::move(r.target)};
  });
  Dataset train_target = cfg.withhold_labels ? strip_hidden_labels(target) : target;
  auto stats = detail::stage("stats", [&] { return au_class_distribution(source); });
  auto annotations = detail::stage("annotate", [&] { return annotate_all(source, train_target, cfg.annotate); });
  auto triplets = detail::stage("mine", [&] { return mine_triplets(source, train_target, cfg.train_config().mining); });
  return {std::move(source), std::move(train_target), std::move(target), std::move(annotations),
          std::move(triplets), std::move(stats), std::move(meta)};
}

struct MethodResult {
  Method method = Method::AdaFER;
  Metrics metrics;
  std::optional<double> coverage;  // baseline2 only
  double wall_seconds = 0.0;
  std::optional<TrainHistory> history;
  std::optional<HeadParams> params;
};

namespace detail {

inline Dataset concat_au_scores(const Dataset& d) {
  std::vector<Sample> samples(d.samples().begin(), d.samples().end());
  const auto D = static_cast<Eigen::Index>(d.dims().D);
  const auto K = static_cast<Eigen::Index>(d.dims().K);
  for (auto& s : samples) {
    Eigen::VectorXd x(D + K);
    x << s.features, s.au_scores;
    s.features = std::move(x);
  }
  return Dataset({d.dims().D + d.dims().K, d.dims().K, d.dims().C}, d.class_names(), std::move(samples));
}

// Self-predicted pseudo-labels for every target sample.
inline std::vector<Annotation> self_pseudo_labels(const HeadParams& params, const Dataset& target, bool soft) {
  std::vector<Annotation> out;
  for (const Sample* s : sorted_by_id(target)) {
    const auto f = forward(params, s->features);
    Annotation a;
    a.target_id = s->id;
    a.support = 1;
    if (soft) a.t_soft = f.probs;
    else a.s_hard = predict_class(f.probs);
    out.push_back(std::move(a));
  }
  return out;
}

inline Metrics score_predictions(const Dataset& eval, const std::vector<ClassId>& predictions) {
  const std::size_t C = eval.dims().C;
  Metrics m;
  m.confusion.assign(C, std::vector<std::size_t>(C, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const auto label = EvalAccess::label_of(eval[i]);
    if (!label) throw std::invalid_argument("evaluate: sample " + std::to_string(eval[i].id) + " has no label");
    ++m.confusion[*label][predictions[i]];
    if (predictions[i] == *label) ++correct;
  }
  m.n = eval.size();
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n);
  m.per_class_accuracy.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t row = 0;
    for (auto v : m.confusion[c]) row += v;
    if (row > 0) m.per_class_accuracy[c] = static_cast<double>(m.confusion[c][c]) / static_cast<double>(row);
  }
  return m;
}

}  // namespace detail

/// Runs methods against one Prepared bundle. The source-only head is
/// trained once and reused by the two-phase baselines.
class MethodRunner {
 public:
  MethodRunner(const Prepared& data, const ExperimentConfig& cfg) : data_(data), cfg_(cfg) {}

  MethodResult run(Method m) {
    const auto t0 = std::chrono::steady_clock::now();
    MethodResult r = detail::stage(to_string(m), [&] { return dispatch(m); });
    r.method = m;
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }

  /// Joint training with the given weights on the shared inputs.
  TrainResult train_joint(const TrainConfig& tc, const std::vector<Triplet>* triplets = nullptr) const {
    return train(data_.source, data_.target, data_.annotations, triplets ? *triplets : data_.triplets, tc,
                 std::nullopt, &data_.eval_target);
  }

 private:
  TrainConfig weights(double beta, double epsilon) const {
    TrainConfig tc = cfg_.train_config();
    tc.beta = beta;
    tc.epsilon = epsilon;
    return tc;
  }

  const TrainResult& source_only() {
    if (!source_only_) source_only_ = train_joint(weights(0.0, 0.0));
    return *source_only_;
  }

  MethodResult from_training(TrainResult tr, const Dataset& eval) const {
    MethodResult r;
    r.metrics = evaluate(tr.params, eval);
    r.history = std::move(tr.history);
    r.params = std::move(tr.params);
    return r;
  }

  TrainResult fine_tune(const Dataset& source, const Dataset& target, HeadParams init, bool soft) const {
    TrainConfig tc = weights(1.0, 0.0);
    tc.strategy = soft ? AssignmentStrategy::TSoft : AssignmentStrategy::SHard;
    auto pseudo = detail::self_pseudo_labels(init, target, soft);
    return train(source, target, pseudo, {}, tc, std::move(init));
  }

  MethodResult dispatch(Method m) {
    switch (m) {
      case Method::Baseline1SourceOnly:
        return from_training(source_only(), data_.eval_target);
      case Method::Baseline2AuQuery: {
        std::map<SampleId, ClassId> predicted;
        std::size_t covered = 0;
        for (const auto& a : data_.annotations) {
          if (a.t_hard) {
            predicted[a.target_id] = *a.t_hard;
            ++covered;
          }
        }
        std::vector<ClassId> preds;
        for (const auto& s : data_.eval_target.samples()) {
          auto it = predicted.find(s.id);
          preds.push_back(it == predicted.end() ? 0 : it->second);
        }
        MethodResult r;
        r.metrics = detail::score_predictions(data_.eval_target, preds);
        r.coverage = static_cast<double>(covered) / static_cast<double>(data_.target.size());
        return r;
      }
      case Method::Baseline3HardPseudo:
      case Method::Baseline4SoftPseudo: {
        const bool soft = m == Method::Baseline4SoftPseudo;
        return from_training(fine_tune(data_.source, data_.target, source_only().params, soft), data_.eval_target);
      }
      case Method::Baseline5AuConcat: {
        const Dataset src = detail::concat_au_scores(data_.source);
        const Dataset tgt = detail::concat_au_scores(data_.target);
        const Dataset eval = detail::concat_au_scores(data_.eval_target);
        auto phase1 = train(src, tgt, data_.annotations, data_.triplets, weights(0.0, 0.0));
        return from_training(fine_tune(src, tgt, std::move(phase1.params), true), eval);
      }
      case Method::AdaFER:
        return from_training(train_joint(weights(cfg_.train.beta, cfg_.train.epsilon)), data_.eval_target);
      case Method::AgaOnly:
        return from_training(train_joint(weights(cfg_.train.beta, 0.0)), data_.eval_target);
      case Method::AgtOnly:
        return from_training(train_joint(weights(0.0, cfg_.train.epsilon)), data_.eval_target);
    }
    throw std::invalid_argument("unknown method");
  }

  const Prepared& data_;
  const ExperimentConfig& cfg_;
  std::optional<TrainResult> source_only_;
};

struct ExperimentReport {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
  std::vector<MethodResult> methods;

  const MethodResult& at(Method m) const {
    for (const auto& r : methods) {
      if (r.method == m) return r;
    }
    throw std::out_of_range(std::string("method not in report: ") + to_string(m));
  }
};

/// Deterministic CSV: accuracies to 4 decimals, no timings.
inline std::string report_csv(const ExperimentReport& report) {
  std::string out = "method,accuracy";
  for (const auto& name : report.class_names) out += ",acc_" + name;
  out += ",coverage,config_hash,seed\n";
  for (const auto& r : report.methods) {
    out += to_string(r.method);
    out += ',' + io::format_fixed(r.metrics.accuracy, 4);
    for (double a : r.metrics.per_class_accuracy) out += ',' + io::format_fixed(a, 4);
    out += ',' + (r.coverage ? io::format_fixed(*r.coverage, 4) : std::string());
    out += ',' + report.config_hash + ',' + std::to_string(report.seed) + '\n';
  }
  return out;
}

inline nlohmann::json report_json(const ExperimentReport& report, const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  j["class_names"] = report.class_names;
  nlohmann::json c = nlohmann::json::object();
  for (const auto& k : ExperimentConfig::keys()) c[k.name] = k.get(cfg);
  j["config"] = c;
  j["methods"] = nlohmann::json::array();
  for (const auto& r : report.methods) {
    nlohmann::json m;
    m["method"] = to_string(r.method);
    m["accuracy"] = r.metrics.accuracy;
    m["per_class_accuracy"] = r.metrics.per_class_accuracy;
    m["confusion"] = r.metrics.confusion;
    m["coverage"] = r.coverage ? nlohmann::json(*r.coverage) : nlohmann::json(nullptr);
    m["config_hash"] = report.config_hash;
    m["seed"] = report.seed;
    m["wall_time_s"] = r.wall_seconds;
    j["methods"].push_back(std::move(m));
  }
  return j;
}

inline ExperimentReport run_methods(const Prepared& data, const ExperimentConfig& cfg,
                                    std::span<const Method> methods = kAllMethods) {
  ExperimentReport report{cfg.hash(), cfg.seed, data.source.class_names(), {}};
  MethodRunner runner(data, cfg);
  for (auto m : methods) report.methods.push_back(runner.run(m));
  return report;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = io::open_for_write(path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

/// synth/load, stats, annotate, mine, then every method in fixed order.
/// Artifacts land in out_dir.
inline ExperimentReport run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  detail::stage("output", [&] { std::filesystem::create_directories(out_dir); return 0; });
  const Prepared data = prepare(cfg);
  const ExperimentReport report = run_methods(data, cfg);
  detail::stage("write", [&] {
    {
      std::ostringstream s;
      write_au_stats_csv(s, data.au_stats);
      write_text(out_dir / "au_stats.csv", s.str());
    }
    {
      std::ostringstream s;
      write_annotations_jsonl(s, data.annotations);
      write_text(out_dir / "annotations.jsonl", s.str());
    }
    {
      std::ostringstream s;
      write_triplets_csv(s, data.triplets);
      write_text(out_dir / "triplets.csv", s.str());
    }
    {
      std::ostringstream s;
      write_history_csv(s, *report.at(Method::AdaFER).history);
      write_text(out_dir / "history.csv", s.str());
    }
    write_text(out_dir / "report.csv", report_csv(report));
    write_text(out_dir / "report.json", report_json(report, cfg).dump(2) + "\n");
    return 0;
  });
  return report;
}

enum class SweepKnob { Margin, Beta, Epsilon, TauN, Strategy, Anchors };

inline SweepKnob parse_knob(const std::string& s) {
  if (s == "margin" || s == "gamma") return SweepKnob::Margin;
  if (s == "beta") return SweepKnob::Beta;
  if (s == "epsilon") return SweepKnob::Epsilon;
  if (s == "tau_n" || s == "tau-n") return SweepKnob::TauN;
  if (s == "strategy") return SweepKnob::Strategy;
  if (s == "anchors") return SweepKnob::Anchors;
  throw std::invalid_argument("unknown sweep knob: " + s);
}

inline const char* knob_key(SweepKnob k) {
  switch (k) {
    case SweepKnob::Margin: return "gamma";
    case SweepKnob::Beta: return "beta";
    case SweepKnob::Epsilon: return "epsilon";
    case SweepKnob::TauN: return "tau-n";
    case SweepKnob::Strategy: return "strategy";
    case SweepKnob::Anchors: return "anchors";
  }
  return "?";
}

struct SweepRow {
  std::string value;
  double accuracy = 0.0;
};

/// One adafer run per value with everything else fixed. Annotation and
/// data preparation are shared; mining is redone only for mining knobs.
inline std::vector<SweepRow> run_sweep(SweepKnob knob, const std::vector<std::string>& values,
                                       const ExperimentConfig& base) {
  if (values.empty()) throw std::invalid_argument("sweep: no values");
  const Prepared data = prepare(base);
  std::vector<SweepRow> rows;
  for (const auto& v : values) {
    ExperimentConfig cfg = base;
    cfg.set(knob_key(knob), v);
    detail::stage("config", [&] { cfg.validate(); return 0; });
    MethodRunner runner(data, cfg);
    const TrainConfig tc = cfg.train_config();
    std::optional<std::vector<Triplet>> remined;
    if (knob == SweepKnob::TauN || knob == SweepKnob::Anchors) {
      remined = detail::stage("mine", [&] { return mine_triplets(data.source, data.target, tc.mining); });
    }
    const auto tr = detail::stage("adafer", [&] { return runner.train_joint(tc, remined ? &*remined : nullptr); });
    rows.push_back({v, evaluate(tr.params, data.eval_target).accuracy});
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "value,accuracy\n";
  for (const auto& r : rows) out += r.value + ',' + io::format_fixed(r.accuracy, 4) + '\n';
  return out;
}

}  // namespace adafer

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "adafer/au_code.hpp"
#include "adafer/dataset.hpp"
#include "adafer/io.hpp"
#include "adafer/rng.hpp"

namespace adafer {

struct SynthConfig {
  std::size_t C = 7;
  std::size_t D = 32;
  std::size_t K = 17;
  std::size_t n_source = 2000;
  std::size_t n_target = 2000;
  double feature_shift = 1.0;     // scales both the target rotation angle and translation
  double feature_noise = 0.7;     // within-class standard deviation
  double au_flip_rate = 0.05;     // per-bit probability of landing on the wrong side
  double au_score_noise = 0.15;   // mean distance of a score from its extreme (0 or 1)
  double label_prior_skew = 0.5;  // 0 gives a uniform target prior
  double class_separation = 3.0;  // typical norm of a source class mean
  double au_feature_coupling = 1.0;  // share of the class mean explained by its AU template
  std::uint64_t seed = 0;

  void validate() const {
    if (C < 2) throw std::invalid_argument("synth: C must be >= 2");
    if (D < 1) throw std::invalid_argument("synth: D must be >= 1");
    if (K < 2) throw std::invalid_argument("synth: K must be >= 2");
    if (n_source < C || n_target < C) throw std::invalid_argument("synth: sample counts must be >= C");
    if (!(feature_shift >= 0.0)) throw std::invalid_argument("synth: feature_shift must be >= 0");
    if (!(feature_noise >= 0.0)) throw std::invalid_argument("synth: feature_noise must be >= 0");
    if (!(au_flip_rate >= 0.0 && au_flip_rate <= 0.5)) throw std::invalid_argument("synth: au_flip_rate must lie in [0,0.5]");
    if (!(au_score_noise > 0.0 && au_score_noise < 0.5)) throw std::invalid_argument("synth: au_score_noise must lie in (0,0.5)");
    if (!(label_prior_skew >= 0.0)) throw std::invalid_argument("synth: label_prior_skew must be >= 0");
    if (!(class_separation >= 0.0)) throw std::invalid_argument("synth: class_separation must be >= 0");
    if (!(au_feature_coupling >= 0.0 && au_feature_coupling <= 1.0)) throw std::invalid_argument("synth: au_feature_coupling must lie in [0,1]");
    // Templates have 2..4 active bits and must be pairwise distinct.
    double capacity = 0.0;
    for (std::size_t a = 2; a <= std::min<std::size_t>(4, K); ++a) {
      double comb = 1.0;
      for (std::size_t i = 0; i < a; ++i) comb = comb * static_cast<double>(K - i) / static_cast<double>(i + 1);
      capacity += comb;
    }
    if (capacity < static_cast<double>(C)) throw std::invalid_argument("synth: K too small for C distinct templates");
  }
};

struct SynthMeta {
  std::vector<AuCode> templates;   // per class
  Eigen::MatrixXd source_means;    // C x D
  Eigen::MatrixXd target_means;    // C x D
  Eigen::VectorXd target_prior;    // C
  Eigen::MatrixXd rotation;        // D x D
  Eigen::VectorXd translation;     // D
  std::vector<std::string> class_names;
};

struct SynthResult {
  Dataset source;
  Dataset target;
  SynthMeta meta;
};

namespace detail {

inline std::vector<std::string> default_class_names(std::size_t C) {
  if (C == 7) return {"neutral", "happiness", "surprise", "sadness", "anger", "disgust", "fear"};
  std::vector<std::string> names;
  for (std::size_t c = 0; c < C; ++c) names.push_back("class_" + std::to_string(c));
  return names;
}

template <class Engine>
Eigen::VectorXd gaussian_vector(Eigen::Index n, Engine& engine) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(engine);
  return v;
}

template <class Engine>
double beta_draw(double a, double b, Engine& engine) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(engine);
  const double y = gb(engine);
  return x + y > 0.0 ? x / (x + y) : 0.5;
}

// Random rotation Q * blockdiag(R(theta_i)) * Q^T acting on D/2 random planes.
template <class Engine>
Eigen::MatrixXd random_rotation(std::size_t D, double angle_scale, Engine& engine) {
  const auto n = static_cast<Eigen::Index>(D);
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index j = 0; j < n; ++j) g.col(j) = gaussian_vector(n, engine);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd Q = qr.householderQ();
  Eigen::MatrixXd blocks = Eigen::MatrixXd::Identity(n, n);
  std::uniform_real_distribution<double> spread(0.5, 1.5);
  for (Eigen::Index i = 0; i + 1 < n; i += 2) {
    const double theta = angle_scale * spread(engine);
    blocks(i, i) = std::cos(theta);
    blocks(i, i + 1) = -std::sin(theta);
    blocks(i + 1, i) = std::sin(theta);
    blocks(i + 1, i + 1) = std::cos(theta);
  }
  return Q * blocks * Q.transpose();
}

// Rotation angle (radians) and translation length at feature_shift = 1.
inline constexpr double kRotationPerShift = 1.0;
inline constexpr double kTranslationPerShift = 3.0;

}  // namespace detail

inline SynthMeta make_meta(const SynthConfig& cfg) {
  cfg.validate();
  auto engine = keyed_engine(cfg.seed, Stream::SynthMeta);
  const auto C = static_cast<Eigen::Index>(cfg.C);
  const auto D = static_cast<Eigen::Index>(cfg.D);
  const auto K = static_cast<Eigen::Index>(cfg.K);

  SynthMeta meta;
  meta.class_names = detail::default_class_names(cfg.C);
  std::uniform_int_distribution<std::size_t> active_count(2, std::min<std::size_t>(4, cfg.K));
  while (meta.templates.size() < cfg.C) {
    const std::size_t count = active_count(engine);
    const auto order = random_permutation(cfg.K, engine);
    AuCode code(cfg.K);
    for (std::size_t i = 0; i < count; ++i) code.set(order[i], true);
    if (std::find(meta.templates.begin(), meta.templates.end(), code) == meta.templates.end()) {
      meta.templates.push_back(code);
    }
  }

  // Class means mix a projection of the AU template with an independent
  // component, so classes sharing AUs also sit closer in feature space.
  Eigen::MatrixXd projection(D, K);
  for (Eigen::Index k = 0; k < K; ++k) projection.col(k) = detail::gaussian_vector(D, engine);
  meta.source_means.resize(C, D);
  const double w_au = std::sqrt(cfg.au_feature_coupling);
  const double w_free = std::sqrt(1.0 - cfg.au_feature_coupling);
  for (Eigen::Index c = 0; c < C; ++c) {
    Eigen::VectorXd t(K);
    for (Eigen::Index k = 0; k < K; ++k) t[k] = meta.templates[static_cast<std::size_t>(c)].test(static_cast<std::size_t>(k)) ? 1.0 : 0.0;
    Eigen::VectorXd au_part = projection * t;
    au_part /= std::max(au_part.norm(), 1e-12);
    Eigen::VectorXd free_part = detail::gaussian_vector(D, engine);
    free_part /= std::max(free_part.norm(), 1e-12);
    meta.source_means.row(c) = (cfg.class_separation * (w_au * au_part + w_free * free_part)).transpose();
  }

  meta.rotation = detail::random_rotation(cfg.D, cfg.feature_shift * detail::kRotationPerShift, engine);
  Eigen::VectorXd dir = detail::gaussian_vector(D, engine);
  dir /= std::max(dir.norm(), 1e-12);
  meta.translation = cfg.feature_shift * detail::kTranslationPerShift * dir;
  meta.target_means = (meta.source_means * meta.rotation.transpose()).rowwise() + meta.translation.transpose();

  meta.target_prior = Eigen::VectorXd::Constant(C, 1.0 / static_cast<double>(cfg.C));
  if (cfg.label_prior_skew > 0.0) {
    std::gamma_distribution<double> g(1.0 / cfg.label_prior_skew, 1.0);
    for (Eigen::Index c = 0; c < C; ++c) meta.target_prior[c] = g(engine);
    const double total = meta.target_prior.sum();
    if (total > 0.0) {
      meta.target_prior /= total;
    } else {
      meta.target_prior.setConstant(1.0 / static_cast<double>(cfg.C));
    }
  }
  return meta;
}

namespace detail {

inline Sample synth_sample(const SynthConfig& cfg, const SynthMeta& meta, Domain domain, std::size_t index,
                           SampleId id) {
  auto engine = keyed_engine(cfg.seed, Stream::SynthSample, {static_cast<std::uint64_t>(domain), index});
  ClassId label;
  if (domain == Domain::Source) {
    label = index % cfg.C;
  } else {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = u(engine);
    double acc = 0.0;
    label = cfg.C - 1;
    for (std::size_t c = 0; c < cfg.C; ++c) {
      acc += meta.target_prior[static_cast<Eigen::Index>(c)];
      if (r < acc) {
        label = c;
        break;
      }
    }
  }
  const auto D = static_cast<Eigen::Index>(cfg.D);
  const auto& means = domain == Domain::Source ? meta.source_means : meta.target_means;
  Eigen::VectorXd features = means.row(static_cast<Eigen::Index>(label)).transpose() +
                             cfg.feature_noise * gaussian_vector(D, engine);

  // Score offsets from the nearest extreme follow a Beta law with mean
  // 2 * au_score_noise, scaled into half of [0,1].
  const double mean = 2.0 * cfg.au_score_noise;
  const double concentration = 6.0;
  std::bernoulli_distribution flip(cfg.au_flip_rate);
  Eigen::VectorXd scores(static_cast<Eigen::Index>(cfg.K));
  const AuCode& tmpl = meta.templates[label];
  constexpr double kBelowHalf = 0.49999999999999994;
  for (std::size_t k = 0; k < cfg.K; ++k) {
    const bool on = tmpl.test(k) != flip(engine);
    const double v = beta_draw(concentration * mean, concentration * (1.0 - mean), engine);
    scores[static_cast<Eigen::Index>(k)] = on ? 1.0 - 0.5 * v : std::min(0.5 * v, kBelowHalf);
  }
  return make_sample(id, domain, std::move(features), std::move(scores), label);
}

}  // namespace detail

/// Draws a labeled source domain and a shifted target domain whose labels are
/// hidden. Target ids follow the source ids.
inline SynthResult generate(const SynthConfig& cfg) {
  SynthMeta meta = make_meta(cfg);
  std::vector<Sample> src, tgt;
  src.reserve(cfg.n_source);
  tgt.reserve(cfg.n_target);
  for (std::size_t i = 0; i < cfg.n_source; ++i) src.push_back(detail::synth_sample(cfg, meta, Domain::Source, i, i));
  for (std::size_t i = 0; i < cfg.n_target; ++i) {
    tgt.push_back(detail::synth_sample(cfg, meta, Domain::Target, i, cfg.n_source + i));
  }
  const Dims dims{cfg.D, cfg.K, cfg.C};
  Dataset source(dims, meta.class_names, std::move(src));
  Dataset target(dims, meta.class_names, std::move(tgt));
  return {std::move(source), std::move(target), std::move(meta)};
}

/// CSV dump: one row per class.
inline std::string describe(const SynthMeta& meta) {
  std::ostringstream out;
  out << "class,name,template,active_aus,source_mean_norm,target_mean_norm,target_prior\n";
  for (std::size_t c = 0; c < meta.templates.size(); ++c) {
    const auto r = static_cast<Eigen::Index>(c);
    out << c << ',' << meta.class_names[c] << ',' << meta.templates[c].to_string() << ','
        << meta.templates[c].count() << ',' << io::format_fixed(meta.source_means.row(r).norm(), 6) << ','
        << io::format_fixed(meta.target_means.row(r).norm(), 6) << ','
        << io::format_fixed(meta.target_prior[r], 6) << '\n';
  }
  return out.str();
}

inline nlohmann::json meta_to_json(const SynthMeta& meta) {
  auto rows = [](const Eigen::MatrixXd& m) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
      j.push_back(std::move(row));
    }
    return j;
  };
  nlohmann::json j;
  j["class_names"] = meta.class_names;
  std::vector<std::string> templates;
  for (const auto& t : meta.templates) templates.push_back(t.to_string());
  j["templates"] = templates;
  j["source_means"] = rows(meta.source_means);
  j["target_means"] = rows(meta.target_means);
  j["target_prior"] = std::vector<double>(meta.target_prior.data(), meta.target_prior.data() + meta.target_prior.size());
  j["translation"] = std::vector<double>(meta.translation.data(), meta.translation.data() + meta.translation.size());
  j["rotation"] = rows(meta.rotation);
  return j;
}

}  // namespace adafer

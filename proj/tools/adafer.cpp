// Command-line front end: synth, stats, annotate, mine, train, eval,
// pipeline and sweep.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adafer/experiment.hpp"

namespace fs = std::filesystem;
using namespace adafer;

namespace {

struct Globals {
  std::string config_path;
  std::string out_dir = ".";
  std::map<std::string, std::string> overrides;  // config key -> raw flag value
};

// Every config key becomes a --key flag on the root app. Subcommands fall
// through to it, so `adafer train --beta 0` works.
void add_config_flags(CLI::App& app, Globals& g) {
  for (const auto& k : ExperimentConfig::keys()) {
    app.add_option(std::string("--") + k.name, g.overrides[k.name], "config key " + std::string(k.name));
  }
}

ExperimentConfig resolve_config(const CLI::App& app, const Globals& g) {
  ExperimentConfig cfg;
  if (!g.config_path.empty()) cfg = load_config(g.config_path);
  for (const auto& [key, value] : g.overrides) {
    if (app.count("--" + key) > 0) cfg.set(key, value);
  }
  return cfg;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

std::pair<Dataset, Dataset> load_pair(const ExperimentConfig& cfg) {
  if (cfg.source_path.empty() || cfg.target_path.empty()) {
    throw std::invalid_argument("--source and --target are required");
  }
  Dataset s = load_dataset(cfg.source_path);
  Dataset t = load_dataset(cfg.target_path, s.dims());
  return {std::move(s), std::move(t)};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void print_metrics(const Metrics& m, const std::vector<std::string>& names) {
  std::cout << "accuracy," << io::format_fixed(m.accuracy, 4) << "\n";
  for (std::size_t c = 0; c < m.per_class_accuracy.size(); ++c) {
    std::cout << "acc_" << names[c] << ',' << io::format_fixed(m.per_class_accuracy[c], 4) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AU-guided unsupervised domain adaptation for expression recognition"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "flat key=value config file")->check(CLI::ExistingFile);
  app.add_option("--out-dir", g.out_dir, "directory for outputs");
  add_config_flags(app, g);

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic source/target pair");
  auto* stats_cmd = app.add_subcommand("stats", "per-class AU occurrence frequencies of the source");
  auto* annotate_cmd = app.add_subcommand("annotate", "pseudo-label target samples by AU code");
  auto* mine_cmd = app.add_subcommand("mine", "mine cross-domain triplets");
  auto* train_cmd = app.add_subcommand("train", "train the head");
  auto* eval_cmd = app.add_subcommand("eval", "score a params file on a labeled dataset");
  auto* pipeline_cmd = app.add_subcommand("pipeline", "run every method and write the report");
  auto* sweep_cmd = app.add_subcommand("sweep", "vary one knob of the adafer run");

  std::string annotations_in, triplets_in, params_out = "params.json";
  train_cmd->add_option("--annotations", annotations_in, "annotations.jsonl (computed when absent)");
  train_cmd->add_option("--triplets", triplets_in, "triplets.csv (mined when absent)");
  train_cmd->add_option("--out", params_out, "params file, relative to --out-dir");

  std::string params_in, data_in;
  eval_cmd->add_option("--params", params_in, "params file")->required();
  eval_cmd->add_option("--data", data_in, "dataset to score")->required();

  std::string knob, values;
  sweep_cmd->add_option("--knob", knob, "margin, beta, epsilon, tau_n, strategy or anchors")->required();
  sweep_cmd->add_option("--values", values, "comma separated values")->required();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig cfg = resolve_config(app, g);

    if (*synth_cmd) {
      cfg.synth_config().validate();
      const auto r = generate(cfg.synth_config());
      save_dataset(r.source, out_path(g, "source.jsonl"));
      save_dataset(r.target, out_path(g, "target.jsonl"));
      write_text(out_path(g, "meta.json"), meta_to_json(r.meta).dump(2) + "\n");
      std::cerr << "wrote " << r.source.size() << " source and " << r.target.size() << " target samples to "
                << g.out_dir << "\n";
    } else if (*stats_cmd) {
      if (cfg.source_path.empty()) throw std::invalid_argument("--source is required");
      const Dataset source = load_dataset(cfg.source_path);
      std::ostringstream s;
      write_au_stats_csv(s, au_class_distribution(source));
      write_text(out_path(g, "au_stats.csv"), s.str());
      std::cerr << "AU statistics over " << source.size() << " source samples\n";
    } else if (*annotate_cmd) {
      const auto [source, target] = load_pair(cfg);
      const auto annotations = annotate_all(source, target, cfg.annotate);
      std::ostringstream s;
      write_annotations_jsonl(s, annotations);
      write_text(out_path(g, "annotations.jsonl"), s.str());
      const auto covered = std::count_if(annotations.begin(), annotations.end(),
                                         [](const Annotation& a) { return a.support > 0; });
      std::cerr << covered << " of " << annotations.size() << " target samples matched a source AU code\n";
    } else if (*mine_cmd) {
      const auto [source, target] = load_pair(cfg);
      const auto triplets = mine_triplets(source, target, cfg.train_config().mining);
      std::ostringstream s;
      write_triplets_csv(s, triplets);
      write_text(out_path(g, "triplets.csv"), s.str());
      std::cerr << triplets.size() << " triplets\n";
    } else if (*train_cmd) {
      const auto [source, target] = load_pair(cfg);
      const TrainConfig tc = cfg.train_config();
      std::vector<Annotation> annotations;
      if (annotations_in.empty()) {
        annotations = annotate_all(source, target, cfg.annotate);
      } else {
        auto in = io::open_for_read(annotations_in);
        annotations = read_annotations_jsonl(in);
      }
      std::vector<Triplet> triplets;
      if (triplets_in.empty()) {
        triplets = mine_triplets(source, target, tc.mining);
      } else {
        auto in = io::open_for_read(triplets_in);
        triplets = read_triplets_csv(in);
        const auto report = validate_triplets(triplets, source, target);
        if (!report.ok()) {
          throw std::invalid_argument("triplet " + std::to_string(report.violations.front().index) + ": " +
                                      report.violations.front().message);
        }
      }
      const auto result = train(source, target, annotations, std::move(triplets), tc);
      save_params(result.params, out_path(g, params_out));
      std::ostringstream s;
      write_history_csv(s, result.history);
      write_text(out_path(g, "history.csv"), s.str());
      std::cerr << "trained " << tc.epochs << " epochs, final L_all "
                << io::format_fixed(result.history.epochs.back().L_all, 6) << "\n";
    } else if (*eval_cmd) {
      const HeadParams params = load_params(params_in);
      const Dataset data = load_dataset(data_in);
      if (params.input_dim() != data.dims().D || params.num_classes() != data.dims().C) {
        throw std::invalid_argument("params do not match dataset dims");
      }
      print_metrics(evaluate(params, data), data.class_names());
    } else if (*pipeline_cmd) {
      const auto report = run_pipeline(cfg, g.out_dir);
      std::cout << report_csv(report);
    } else if (*sweep_cmd) {
      const auto rows = run_sweep(parse_knob(knob), split_list(values), cfg);
      const std::string csv = sweep_csv(rows);
      write_text(out_path(g, "sweep_" + std::string(knob_key(parse_knob(knob))) + ".csv"), csv);
      std::cout << csv;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

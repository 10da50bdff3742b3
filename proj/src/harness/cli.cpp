#include "dlsim/harness/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dlsim/errors.hpp"
#include "dlsim/harness/config.hpp"
#include "dlsim/harness/experiment.hpp"
#include "dlsim/harness/report.hpp"

namespace dlsim::harness {

namespace fs = std::filesystem;

namespace {

// A run directory stands in for its config: the manifest carries a copy.
ExperimentConfig config_from(const fs::path& source) {
  if (fs::is_directory(source)) {
    const fs::path manifest_path = source / "manifest.json";
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw IoError("cannot read " + manifest_path.string());
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError(manifest_path.string() + ": " + e.what());
    }
    ExperimentConfig cfg = parse_config(manifest.at("config"));
    resolve_paths(cfg, manifest.value("config_dir", source.string()));
    return cfg;
  }
  return load_config(source);
}

fs::path default_out(const std::string& prefix, const ExperimentConfig& cfg) {
  return fs::path("runs") / (prefix + config_hash(cfg.source).substr(0, 12));
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Deterministic simulator of decentralized and federated learning with privacy "
               "attacks and defenses"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  bool record_updates = false;

  auto* run = app.add_subcommand("run", "Execute a config and persist its round logs");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("-o,--out", out_dir, "Run directory (default runs/run-<hash>)");
  run->add_flag("--record-updates", record_updates, "Persist every exchanged update");

  std::string attack_name;
  auto* attack = app.add_subcommand("attack", "Run an attack against a config or a run directory");
  attack->add_option("source", config_path, "Config file or existing run directory")->required();
  attack->add_option("-a,--attack", attack_name, "Attack name")
      ->required()
      ->check(CLI::IsMember(attack_names()));
  attack->add_option("-o,--out", out_dir, "Output directory (default runs/<attack>-<hash>)");
  attack->add_flag("--record-updates", record_updates, "Capture updates (needed by mia-passive)");

  std::vector<std::string> inputs;
  std::string kind;
  std::string out_file;
  std::string gnuplot;
  auto* report = app.add_subcommand("report", "Merge run or attack outputs into a tidy CSV");
  report->add_option("inputs", inputs, "Run or attack directories")->required();
  report->add_option("-k,--kind", kind, "privacy | consensus | influence")->required();
  report->add_option("-o,--out", out_file, "CSV output path")->required();
  report->add_option("--gnuplot", gnuplot, "Also write a gnuplot data file");

  auto* validate = app.add_subcommand("validate", "Check a config against the schema");
  validate->add_option("config", config_path, "Experiment config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*validate) {
      const ExperimentConfig cfg = load_config(config_path);
      std::cout << "ok " << config_hash(cfg.source) << '\n';
      return 0;
    }
    if (*run) {
      ExperimentConfig cfg = load_config(config_path);
      cfg.record_updates = cfg.record_updates || record_updates;
      const fs::path dir = out_dir.empty() ? default_out("run-", cfg) : fs::path(out_dir);
      const Setup setup = make_setup(cfg);
      const RunResult r = run_to_dir(cfg, setup, cfg.engine, dir);
      std::cout << r.dir.string() << ": " << r.summary.rounds_run << " rounds"
                << (r.summary.stopped_early ? " (early stop)" : "") << '\n';
      return 0;
    }
    if (*attack) {
      ExperimentConfig cfg = config_from(config_path);
      cfg.record_updates = cfg.record_updates || record_updates;
      const fs::path dir =
          out_dir.empty() ? default_out(attack_name + "-", cfg) : fs::path(out_dir);
      std::cout << run_attack(attack_name, cfg, dir).string() << '\n';
      return 0;
    }
    if (*report) {
      const ReportKind k = parse_report_kind(kind);
      std::vector<fs::path> dirs(inputs.begin(), inputs.end());
      const Table table = build_report(dirs, k);
      write_csv(table, out_file);
      if (!gnuplot.empty()) {
        const std::vector<std::string> keys =
            k == ReportKind::kInfluence ? std::vector<std::string>{"run", "rounds", "node"}
                                        : std::vector<std::string>{"run", "engine", "victim"};
        write_gnuplot(table, keys, gnuplot);
      }
      std::cout << out_file << ": " << table.rows.size() << " rows\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error:\n" << e.what() << '\n';
    return 2;
  } catch (const PreconditionError& e) {
    std::cerr << "precondition failed: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace dlsim::harness

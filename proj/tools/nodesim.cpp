#include "nodesim/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace cli = nodesim::cli;

int main(int argc, char** argv) {
  CLI::App app{"nodesim: atom-photon entanglement node simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", cli::kVersion);

  std::string preset;
  std::vector<std::string> configs, assignments;
  std::optional<std::uint64_t> seed, shots;
  std::string out_dir = "out";
  unsigned threads = 0;
  bool svg = false;
  app.add_option("--preset", preset, "preset name, searched in NODE_SIM_PRESETS then the bundled presets");
  app.add_option("--config", configs, "INI file layered on top of the preset (repeatable)");
  app.add_option("--set", assignments, "section.key=value override (repeatable)");
  app.add_option("--seed", seed, "experiment.seed");
  app.add_option("--shots", shots, "experiment.shots (attempts per setting)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--threads", threads, "worker threads, 0 for all cores");
  app.add_flag("--svg", svg, "also write SVG plots");

  auto* budget = app.add_subcommand("budget", "efficiency and rate budget of the cavity node");
  auto* simulate = app.add_subcommand("simulate", "Monte-Carlo run of the entanglement sequence");
  std::string plan = "full";
  bool shot_log = false;
  simulate->add_option("--plan", plan, "full, tomo or z")->check(CLI::IsMember({"full", "tomo", "z"}));
  simulate->add_flag("--log", shot_log, "write shots.jsonl");
  auto* tomo = app.add_subcommand("tomo", "fidelity analysis of summary CSV files");
  std::vector<std::string> summaries;
  tomo->add_option("summaries", summaries, "summary.csv files")->required();
  auto* calibrate = app.add_subcommand("calibrate", "fit the fiber and waveplates to a reflection heat map");
  std::string heatmap;
  calibrate->add_option("heatmap", heatmap, "heat map CSV")->required();
  auto* ramsey = app.add_subcommand("ramsey", "Ramsey coherence of the Zeeman and hyperfine qubits");
  auto* synth = app.add_subcommand("synth-heatmap", "synthetic reflection heat map from the jones section");
  auto* verify = app.add_subcommand("verify", "check the config hash of a manifest.json");
  std::string manifest;
  verify->add_option("manifest", manifest)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitValidation;
  }

  return cli::run_guarded(
      [&] {
        if (verify->parsed()) {
          const bool ok = cli::verify_manifest(manifest);
          std::cout << (ok ? "ok" : "hash mismatch") << '\n';
          if (!ok) throw cli::ValidationError("config hash in " + manifest + " does not match its config");
          return;
        }
        cli::Invocation inv;
        cli::Origins origins;
        if (!preset.empty()) {
          const auto path = cli::find_preset(preset);
          cli::apply_ini(inv.settings, cli::read_file(path), path.filename().string(), &origins);
        }
        for (const auto& c : configs) cli::apply_ini(inv.settings, cli::read_file(c), c, &origins);
        for (const auto& a : assignments) cli::apply_assignment(inv.settings, a, "--set " + a, &origins);
        if (seed) cli::apply_assignment(inv.settings, "experiment.seed=" + std::to_string(*seed), "--seed", &origins);
        if (shots) cli::apply_assignment(inv.settings, "experiment.shots=" + std::to_string(*shots), "--shots", &origins);
        cli::validate(inv.settings, origins);
        inv.command_line.assign(argv, argv + argc);
        inv.out_dir = out_dir;
        inv.threads = threads;
        inv.svg = svg;

        if (budget->parsed()) cli::cmd_budget(inv, std::cout, std::cerr);
        else if (simulate->parsed()) cli::cmd_simulate(inv, {plan, shot_log}, std::cout, std::cerr);
        else if (tomo->parsed()) cli::cmd_tomo(inv, {summaries.begin(), summaries.end()}, std::cout, std::cerr);
        else if (calibrate->parsed()) cli::cmd_calibrate(inv, heatmap, std::cout, std::cerr);
        else if (ramsey->parsed()) cli::cmd_ramsey(inv, std::cout, std::cerr);
        else if (synth->parsed()) cli::cmd_synth_heatmap(inv, std::cout, std::cerr);
      },
      std::cerr);
}

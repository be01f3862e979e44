#include "dfedpgp/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dfedpgp/config.hpp"
#include "dfedpgp/consensus.hpp"
#include "dfedpgp/engine.hpp"
#include "dfedpgp/error.hpp"
#include "dfedpgp/report.hpp"
#include "dfedpgp/rng.hpp"

namespace dfedpgp {

namespace {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config_path;
  std::string out_dir = ".";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& opts, bool with_out) {
  cmd->add_option("--config", opts.config_path, "JSON config file (defaults if omitted)");
  if (with_out) cmd->add_option("--out", opts.out_dir, "Output directory");
  cmd->add_option("--set", opts.overrides, "Override a config key: dotted.key=value")
      ->take_all()
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  cmd->add_option("--seed", opts.seed, "Master seed override");
}

ExperimentConfig resolve(const CommonOptions& opts) {
  std::vector<std::string> overrides = opts.overrides;
  if (opts.seed) overrides.push_back("seed=" + std::to_string(*opts.seed));
  return load_config(opts.config_path, overrides);
}

std::string out_path(const CommonOptions& opts, const std::string& name) {
  return (fs::path(opts.out_dir) / name).string();
}

int cmd_run(const CommonOptions& opts, std::ostream& out, std::ostream& err) {
  const ExperimentConfig config = resolve(opts);
  const ExperimentResult result = run_experiment(config);
  for (const auto& w : result.warnings) err << "warning: " << w << '\n';
  write_file_atomic(out_path(opts, "metrics.csv"),
                    metrics_csv(config.algorithm, result.metrics));
  write_file_atomic(out_path(opts, "summary.json"),
                    summary_json(config, result).dump(2) + "\n");
  out << to_string(config.algorithm) << ": accuracy " << std::fixed
      << std::setprecision(4) << result.initial_accuracy << " -> "
      << result.final_accuracy << " after " << config.rounds << " rounds\n";
  return kExitOk;
}

int cmd_ablation(const CommonOptions& opts, std::size_t seeds, std::ostream& out,
                 std::ostream& err) {
  const ExperimentConfig base = resolve(opts);
  if (seeds == 0) throw ConfigError("--seeds must be >= 1");
  std::ostringstream csv;
  csv << "algo,seed,mean_acc,std_acc,loss,initial_acc\n";
  std::map<std::string, double> totals;
  for (Algorithm algo : kAblationAlgorithms) {
    for (std::size_t s = 0; s < seeds; ++s) {
      ExperimentConfig c = with_algorithm(base, algo);
      c.seed = base.seed + s;
      c.validate();
      const ExperimentResult r = run_experiment(c);
      for (const auto& w : r.warnings) err << "warning: " << to_string(algo) << ": " << w << '\n';
      const auto& last = r.metrics.back();
      csv << to_string(algo) << ',' << c.seed << ',' << format_double(last.mean_accuracy)
          << ',' << format_double(last.std_accuracy) << ','
          << format_double(last.mean_loss) << ',' << format_double(r.initial_accuracy)
          << '\n';
      totals[to_string(algo)] += last.mean_accuracy;
    }
  }
  write_file_atomic(out_path(opts, "ablation.csv"), csv.str());
  out << "algorithm     mean accuracy over " << seeds << " seed(s)\n";
  for (Algorithm algo : kAblationAlgorithms) {
    out << std::left << std::setw(14) << to_string(algo) << std::fixed
        << std::setprecision(4) << totals[to_string(algo)] / static_cast<double>(seeds)
        << '\n';
  }
  return kExitOk;
}

struct DemoOptions {
  std::size_t m = 8;
  std::string scheme = "push";
  std::string topology = "random_directed";
  std::size_t degree = 2;
  std::size_t rounds = 100;
  std::size_t dim = 4;
  std::uint64_t seed = 1;
};

int cmd_consensus_demo(const DemoOptions& o, std::ostream& out) {
  const MixingScheme scheme = parse_mixing_scheme(o.scheme);
  const TopologyKind kind = parse_topology_kind(o.topology);
  if (kind == TopologyKind::kFromFile) {
    throw ConfigError("consensus-demo does not read topology files");
  }
  if (o.m == 0 || o.rounds == 0) throw ConfigError("--m and --rounds must be >= 1");
  const TopologySchedule schedule(o.m, kind, o.degree, stream_seed(o.seed, Purpose::kTopology));

  Rng rng = make_stream(o.seed, Purpose::kDemo);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<PushSumCell> cells;
  std::vector<ParamVector> initial;
  for (std::size_t i = 0; i < o.m; ++i) {
    ParamVector x(o.dim);
    for (double& c : x) c = dist(rng);
    initial.push_back(x);
    cells.emplace_back(std::move(x));
  }
  ParamVector mean(o.dim);
  for (const auto& x : initial) mean.axpy(1.0 / static_cast<double>(o.m), x);

  std::vector<MixingMatrix> matrices;
  out << "round,spread\n" << 0 << ',' << format_double(spread(cells)) << '\n';
  for (std::size_t t = 0; t < o.rounds; ++t) {
    matrices.push_back(build_mixing_matrix(schedule.graph(t), scheme));
    cells = mix_step(cells, matrices.back());
    out << t + 1 << ',' << format_double(spread(cells)) << '\n';
  }
  const std::vector<double> ones(o.m, 1.0);
  const auto oracle = consensus_oracle(matrices, initial, ones);
  double dev_oracle = 0.0;
  double dev_mean = 0.0;
  for (std::size_t i = 0; i < o.m; ++i) {
    for (std::size_t c = 0; c < o.dim; ++c) {
      dev_oracle = std::max(dev_oracle, std::abs(cells[i].z()[c] - oracle[i][c]));
      dev_mean = std::max(dev_mean, std::abs(cells[i].z()[c] - mean[c]));
    }
  }
  out << "final_spread " << format_double(spread(cells)) << '\n';
  out << "deviation_from_oracle " << format_double(dev_oracle) << '\n';
  out << "deviation_from_mean " << format_double(dev_mean) << '\n';
  out << "mu";
  for (const auto& c : cells) out << ' ' << format_double(c.mu());
  out << '\n';
  return kExitOk;
}

int cmd_check_topology(const CommonOptions& opts, std::ostream& out) {
  const ExperimentConfig config = resolve(opts);
  const TopologySchedule schedule = make_schedule(config);
  const std::size_t window = config.topology.window;
  bool all_ok = true;
  for (std::size_t w = 0; w < 20; ++w) {
    const std::size_t start = w * window;
    const bool ok = check_window_connectivity(schedule, start, window);
    all_ok = all_ok && ok;
    out << "window " << w << " rounds [" << start << ", " << start + window
        << "): " << (ok ? "pass" : "fail") << '\n';
  }
  out << (all_ok ? "all windows strongly connected\n"
                 : "B-bounded strong connectivity violated\n");
  return all_ok ? kExitOk : kExitAssumption;
}

int cmd_partition_stats(const CommonOptions& opts, bool export_shards, std::ostream& out) {
  const ExperimentConfig config = resolve(opts);
  const ExperimentSetup setup = make_setup(config);
  const std::size_t classes = config.data.pool.classes;
  const auto counts = class_counts(setup.shards, classes);

  std::ostringstream csv;
  csv << "client";
  for (std::size_t k = 0; k < classes; ++k) csv << ",class_" << k;
  csv << ",train_size,test_size,entropy\n";
  double entropy_sum = 0.0;
  double entropy_min = 1e300;
  double entropy_max = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    csv << i;
    for (std::size_t n : counts[i]) csv << ',' << n;
    const double h = label_entropy(counts[i]);
    entropy_sum += h;
    entropy_min = std::min(entropy_min, h);
    entropy_max = std::max(entropy_max, h);
    csv << ',' << setup.shards[i].train.size() << ',' << setup.shards[i].test.size()
        << ',' << format_double(h) << '\n';
  }
  write_file_atomic(out_path(opts, "partition.csv"), csv.str());
  if (export_shards) {
    for (std::size_t i = 0; i < setup.shards.size(); ++i) {
      const auto& sh = setup.shards[i];
      std::ostringstream train;
      std::ostringstream test;
      write_shard_csv(train, sh.train_index, sh.train);
      write_shard_csv(test, sh.test_index, sh.test);
      write_file_atomic(out_path(opts, "shards/client_" + std::to_string(i) + "_train.csv"),
                        train.str());
      write_file_atomic(out_path(opts, "shards/client_" + std::to_string(i) + "_test.csv"),
                        test.str());
    }
  }
  const double n = static_cast<double>(counts.size());
  out << "clients " << counts.size() << ", label entropy (nats) mean "
      << format_double(entropy_sum / n) << " min " << format_double(entropy_min)
      << " max " << format_double(entropy_max) << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Decentralized personalized federated learning simulator"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  auto* run = app.add_subcommand("run", "Run one experiment; writes metrics.csv and summary.json");
  add_common(run, run_opts, true);

  CommonOptions abl_opts;
  std::size_t seeds = 3;
  auto* abl = app.add_subcommand(
      "ablation", "DFedPGP, DFedAvgM-P, OSGP, DFedAvgM and Local on shared seeds; writes ablation.csv");
  add_common(abl, abl_opts, true);
  abl->add_option("--seeds", seeds, "Number of consecutive seeds");

  DemoOptions demo;
  auto* dem = app.add_subcommand("consensus-demo", "Pure push-sum mixing of random vectors");
  dem->add_option("--m", demo.m, "Client count");
  dem->add_option("--scheme", demo.scheme, "push, pull or doubly");
  dem->add_option("--topology", demo.topology,
                  "random_directed, random_undirected, ring or complete");
  dem->add_option("--degree", demo.degree, "Out-degree of random topologies");
  dem->add_option("--rounds", demo.rounds, "Mixing rounds");
  dem->add_option("--dim", demo.dim, "Vector dimension");
  dem->add_option("--seed", demo.seed, "Seed");

  CommonOptions topo_opts;
  auto* topo = app.add_subcommand("check-topology",
                                  "Check B-bounded strong connectivity over 20 windows");
  add_common(topo, topo_opts, false);

  CommonOptions part_opts;
  bool export_shards = false;
  auto* part = app.add_subcommand("partition-stats",
                                  "Write the client x class count matrix to partition.csv");
  add_common(part, part_opts, true);
  part->add_flag("--export-shards", export_shards,
                 "Also write per-client shards as CSV under shards/");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_opts, out, err);
    if (*abl) return cmd_ablation(abl_opts, seeds, out, err);
    if (*dem) return cmd_consensus_demo(demo, out);
    if (*topo) return cmd_check_topology(topo_opts, out);
    if (*part) return cmd_partition_stats(part_opts, export_shards, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace dfedpgp

#include "dfedpgp/report.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dfedpgp/error.hpp"

namespace dfedpgp {

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) throw Error("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string metrics_csv(Algorithm algorithm, std::span<const RoundMetrics> metrics) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  const std::string algo = to_string(algorithm);
  for (const auto& m : metrics) {
    out << m.round << ',' << algo << ',' << format_double(m.mean_accuracy) << ','
        << format_double(m.std_accuracy) << ',' << format_double(m.delta_u) << ','
        << format_double(m.delta_v) << ',' << format_double(m.mean_loss) << ','
        << format_double(m.spread) << ',' << format_double(m.lr_u) << ','
        << format_double(m.lr_v) << '\n';
  }
  return out.str();
}

Json summary_json(const ExperimentConfig& config, const ExperimentResult& result) {
  Json accuracies = Json::array();
  for (double a : result.client_accuracy) {
    accuracies.push_back(std::isnan(a) ? Json(nullptr) : Json(a));
  }
  Json targets = Json::array();
  for (const auto& t : result.rounds_to_target) {
    targets.push_back({{"target", t.target},
                       {"round", t.round ? Json(*t.round) : Json(nullptr)}});
  }
  Json summary;
  summary["config"] = to_json(config);
  summary["algorithm"] = to_string(config.algorithm);
  summary["initial_accuracy"] = result.initial_accuracy;
  summary["final_accuracy"] = result.final_accuracy;
  summary["final_std_accuracy"] = result.metrics.back().std_accuracy;
  summary["client_accuracy"] = accuracies;
  summary["rounds_to_target"] = targets;
  summary["warnings"] = result.warnings;
  return summary;
}

}  // namespace dfedpgp

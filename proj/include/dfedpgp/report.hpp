#pragma once

#include <span>
#include <string>

#include "dfedpgp/config.hpp"
#include "dfedpgp/engine.hpp"

namespace dfedpgp {

inline constexpr const char* kMetricsHeader =
    "round,algo,mean_acc,std_acc,delta_u,delta_v,loss,spread,lr_u,lr_v";

/// Writes `content` to `path` through a sibling temp file and a rename, so
/// readers never see a partial file.
void write_file_atomic(const std::string& path, const std::string& content);

/// Shortest text that reads back to the same double.
std::string format_double(double x);

std::string metrics_csv(Algorithm algorithm, std::span<const RoundMetrics> metrics);

Json summary_json(const ExperimentConfig& config, const ExperimentResult& result);

}  // namespace dfedpgp

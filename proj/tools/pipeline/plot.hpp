#pragma once

// Plain SVG charts. Each writer emits <stem>.svg and the numbers behind it as
// <stem>.csv.

#include <filesystem>
#include <string>
#include <vector>

#include "report.hpp"
#include "snigl/training.hpp"

namespace snigl::pipeline {

struct LossSeries {
  std::string label;
  std::vector<training::EpochLog> rows;
};

/// Environment-averaged risk terms per epoch, one line per series.
void write_loss_curves(const std::vector<LossSeries>& series, const std::filesystem::path& stem);
/// Mean accuracy per variant with one-standard-deviation whiskers.
void write_ablation_bars(const MetricsReport& report, const std::filesystem::path& stem);
/// Up to `max_graphs` graphs from a mask export on a circular layout, edge
/// opacity set by probability, planted motif edges outlined.
void write_mask_overlay(const std::filesystem::path& masks, std::size_t max_graphs, const std::filesystem::path& stem);

}  // namespace snigl::pipeline

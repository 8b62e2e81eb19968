// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Self-contained SVG renderings of run reports.

#pragma once

#include "agseg/evaluation.hpp"
#include "agseg/training.hpp"

#include <string>
#include <utility>
#include <vector>

namespace agseg::plot {

/// Train (solid) and validation (dashed) loss per epoch, one colour per fold.
std::string loss_curves_svg(const train::TrainRunReport& report);

/// 2x2 heatmap, rows = actual, columns = predicted, cells shaded by the row
/// fraction and labelled with the count.
std::string confusion_svg(const eval::ConfusionMatrix& cm, const std::string& title);

/// Grouped bars of iou, accuracy, precision, recall and f1 per fold plus the
/// aggregate.
std::string fold_metrics_svg(const train::TrainRunReport& report);

/// Every figure for a report as (file name, SVG text): loss_curves.svg,
/// confusion_fold<f>.svg per fold, confusion_aggregate.svg, fold_metrics.svg.
std::vector<std::pair<std::string, std::string>> render_report(const train::TrainRunReport& report);

} // namespace agseg::plot

#pragma once

#include <array>
#include <optional>
#include <string>

#include "dlf/dataio.hpp"
#include "dlf/tensor.hpp"

namespace dlf {

// KITTI-style scene-flow evaluation. Outlier thresholds are conjunctions:
// 2D: endpoint error > 3 px AND relative error > 5%;
// 3D: endpoint error > 0.3 m AND relative error > 10%.
// All aggregates are std::nullopt when no valid pixel contributes.

struct MetricsReport {
  std::optional<double> d0, d1, fl, sf;   // outlier percentages
  std::optional<double> sf_epe, fl_epe;   // pixels
  std::optional<double> sf_3d;            // percentage
  std::optional<double> sf_epe_3d;        // meters
  long valid_count = 0;
  long excluded_3d = 0;  // points dropped from 3D eval for non-positive disparity
};

// pred/gt are (h, w, c) with c = 1 (disparity) or 2 (flow); the endpoint
// error is the absolute error resp. the 2-vector norm, the relative error
// divides by the ground-truth magnitude.
std::optional<double> component_outlier_rate(const Tensor& pred, const Tensor& gt,
                                             const Tensor& valid, double abs_thresh = 3.0,
                                             double rel_thresh = 0.05);

// Union over the D0, D1, Fl component outlier sets on (h, w, 4) fields.
std::optional<double> sf_outlier_rate(const Tensor& pred, const Tensor& gt, const Tensor& valid);

// Mean 4-channel Euclidean endpoint error over valid pixels.
std::optional<double> sf_epe(const Tensor& pred, const Tensor& gt, const Tensor& valid);
// Mean 2-vector flow endpoint error (channels 0..1).
std::optional<double> fl_epe(const Tensor& pred, const Tensor& gt, const Tensor& valid);

// Pinhole back-projection: Z = focal*baseline/disparity, X/Y from the
// principal-point offset. Requires disparity > 0.
std::array<double, 3> project_3d(double x, double y, double disparity, const Calibration& c);

struct SparseEval3d {
  std::optional<double> sf_3d, sf_epe_3d;  // 3D outlier %, 3D EPE in meters
  std::optional<double> fl, fl_epe;        // 2D flow metrics over the same points
  long evaluated = 0;
  long excluded = 0;  // non-positive predicted or ground-truth disparity
};

// Evaluation restricted to the sparse LiDAR input locations: 3D motion
// vectors from (u, v, d0, d1) at both time steps via project_3d.
SparseEval3d sparse_eval_3d(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                            const Calibration& calib);

// Full dense report (plus 3D numbers over all valid pixels).
MetricsReport evaluate(const Tensor& pred, const Tensor& gt, const Tensor& valid,
                       const Calibration& calib);

// Per-pixel 4-channel EPE through the 10-bin logarithmic error colormap,
// written as a lossless PNG; invalid pixels neutral gray.
void render_error_map(const Tensor& pred, const Tensor& gt, const Tensor& valid,
                      const std::string& path);
// Bin index helper exposed for tests: log2 bins starting at 0.1875 px.
int error_map_bin(double epe);

std::string format_metrics_table(const MetricsReport& r);
void write_metrics_csv(const std::string& path, const std::vector<std::string>& row_names,
                       const std::vector<MetricsReport>& rows);

}  // namespace dlf

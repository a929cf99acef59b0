#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dlf/backbone.hpp"
#include "dlf/dataio.hpp"
#include "dlf/fusion.hpp"
#include "dlf/matching.hpp"
#include "dlf/params.hpp"

namespace dlf {

// Full model configuration, serializable as flat "key value" text so
// checkpoints are self-describing and runs are reproducible.
struct ModelConfig {
  std::vector<int> channels{16, 32, 64, 96, 128, 192};
  int levels = 6;
  int out_level = 2;
  int radius = 4;
  std::vector<int> estimator_widths{128, 128, 96, 64, 32};
  std::vector<int> context_widths{128, 128, 128, 96, 64, 32, 32};
  std::vector<int> context_dilations{1, 2, 4, 8, 16, 1, 1};
  double leaky_slope = 0.1;
  bool use_confidence_conv = true;     // confidence-aware LiDAR pyramid
  bool use_confidence_concat = true;   // confidence joins the fusion concat
  // Per-level loss weights, coarse to fine (levels .. out_level).
  std::vector<double> level_weights{0.32, 0.08, 0.02, 0.01, 0.005};
  unsigned seed = 0;

  std::string serialize() const;
  static ModelConfig deserialize(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

struct MultiScalePrediction {
  std::map<int, ag::Var> levels;  // raw estimator fields, level -> (h,w,4)
  ag::Var refined;                // context-refined finest level
  ag::Var full;                   // refined field upsampled to input resolution
};

class Model {
public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg), ps_(cfg.seed) {}

  // Inputs must already be divisible by 2^levels; forward_padded handles
  // arbitrary sizes (reflect-pad images, zero-confidence-pad LiDAR, crop
  // the full-resolution field back).
  MultiScalePrediction forward(const Tensor& image_t, const Tensor& image_t1,
                               const SparseDepthInput& depth_t, const SparseDepthInput& depth_t1);
  MultiScalePrediction forward_padded(const Tensor& image_t, const Tensor& image_t1,
                                      const SparseDepthInput& depth_t,
                                      const SparseDepthInput& depth_t1);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  void save_checkpoint(const std::string& path) const;
  // Throws with a shape diff if the stored blobs disagree with the config.
  static Model load_checkpoint(const std::string& path);

private:
  ModelConfig cfg_;
  ParamStore ps_;
};

struct LossBreakdown {
  ag::Var total;                        // scalar graph root
  std::map<int, double> level_losses;   // level -> unweighted loss value
  bool any_valid = false;
};

// Multi-level supervision: gt downsampled per level by valid-pixel block
// averaging (a cell is valid when it covers >= 1 valid pixel), pixel
// channels scaled by 2^-l, per-level valid-mean Euclidean error norm,
// combined with the configured coarse-to-fine weights.
LossBreakdown multiscale_loss(const MultiScalePrediction& pred, const Tensor& gt,
                              const Tensor& valid, const ModelConfig& cfg, bool robust = false);

// Block-average downsample of a (h, w, 4) field by factor 2^l with value
// rescaling; exposed for the reference-oracle tests.
void downsample_gt(const Tensor& gt, const Tensor& valid, int level, Tensor& gt_out,
                   Tensor& valid_out);

struct TrainConfig {
  int steps = 2000;
  double lr = 1e-4;
  bool robust_loss = false;
  unsigned seed = 0;
  // LiDAR simulation per step; density drawn uniformly per step when
  // randomize_density, else fixed_fraction is used.
  bool randomize_density = true;
  double density_lo = 0.002, density_hi = 0.2;
  double fixed_fraction = 0.05;
  double noise_sigma = 0.1;
  bool augment = false;
  // Plateau schedule: halve lr when the windowed mean loss stops improving.
  int plateau_window = 200;
  double plateau_factor = 0.5;
  int log_every = 10;
  int checkpoint_every = 0;           // 0 = only final
  std::string out_dir;                // loss CSV + checkpoints when non-empty
};

struct TrainStepLog {
  int step;
  double total;
  double lr;
  std::map<int, double> level_losses;
};

struct TrainResult {
  std::vector<TrainStepLog> curve;
  double final_train_sf_epe = 0.0;  // dense SF-EPE over the training samples
};

// Adam over all registered parameters; aborts with diagnostics on a
// non-finite loss. Deterministic given (cfg.seed, model seed).
TrainResult train(Model& model, const std::vector<Sample>& samples, const TrainConfig& cfg);

// Dense evaluation helper: runs the model on a sample at the given LiDAR
// density and returns the full-resolution prediction (cropped).
Tensor predict(Model& model, const Sample& sample, const SparseDepthInput& depth_t,
               const SparseDepthInput& depth_t1);

}  // namespace dlf

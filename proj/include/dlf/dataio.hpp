#pragma once

#include <random>
#include <string>
#include <vector>

#include "dlf/backbone.hpp"
#include "dlf/tensor.hpp"

namespace dlf {

struct Calibration {
  double focal = 0.0;      // pixels
  double cx = 0.0, cy = 0.0;  // principal point, pixels
  double baseline = 0.0;   // meters
};

// One training/evaluation instance. Dense disparity maps are kept so LiDAR
// sparsification can be redrawn at a different density every step; the
// ground truth is a (h, w, 4) field (u, v, d0, d1) in pixels, d1 warped to
// the reference frame.
struct Sample {
  Tensor image_t, image_t1;                    // (h, w, 3) in [0,1]
  Tensor dense_disp0, dense_disp0_valid;       // reference-frame disparity
  Tensor dense_disp1, dense_disp1_valid;       // second-frame disparity source
  Tensor gt;                                   // (h, w, 4)
  Tensor gt_valid;                             // (h, w, 1), {0,1}
  Calibration calib;
};

// --- KITTI scene-flow PNG codecs -------------------------------------------
// Flow: 16-bit RGB PNG, u/v stored as value*64 + 2^15, third channel validity.
// Disparity: 16-bit grayscale PNG, value*256, raw 0 = invalid.
void write_kitti_flow_png(const std::string& path, const Tensor& flow, const Tensor& valid);
void read_kitti_flow_png(const std::string& path, Tensor& flow, Tensor& valid);
void write_kitti_disp_png(const std::string& path, const Tensor& disp, const Tensor& valid);
void read_kitti_disp_png(const std::string& path, Tensor& disp, Tensor& valid);

// KITTI camera calibration file: picks focal/principal point from the
// rectified projection matrices and the stereo baseline from their offset.
Calibration parse_kitti_calib(const std::string& path);
// Flat "key value" calibration file (focal, cx, cy, baseline).
Calibration parse_simple_calib(const std::string& path);
void write_simple_calib(const std::string& path, const Calibration& c);

// --- PFM float maps ---------------------------------------------------------
// "Pf"/"PF" header, width height, scale (sign = endianness), rows bottom-up.
Tensor read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Tensor& t);

struct KittiSamplePaths {
  std::string image_t, image_t1, disp0, disp1, flow, calib;
};
Sample load_kitti_sample(const KittiSamplePaths& paths);

struct Ft3dSamplePaths {
  std::string image_t, image_t1, disp0, disp1, flow;  // images PNG, maps PFM
  Calibration calib;                                  // FT3D ships fixed intrinsics
};
Sample load_ft3d_sample(const Ft3dSamplePaths& paths);

// --- LiDAR simulation -------------------------------------------------------
// Uniform sampling without replacement among valid dense pixels.
// Fraction mode enforces the configured density window.
SparseDepthInput sample_lidar_fraction(const Tensor& disp, const Tensor& valid, double fraction,
                                       std::mt19937_64& rng);
// Fixed-count mode; saturates at the number of valid pixels.
SparseDepthInput sample_lidar_count(const Tensor& disp, const Tensor& valid, int count,
                                    std::mt19937_64& rng);

// Zero-mean Gaussian disparity noise on valid cells, clamped positive.
SparseDepthInput add_noise(const SparseDepthInput& in, double sigma, std::mt19937_64& rng);

// --- Augmentation (photometric only; geometry and gt untouched) -------------
struct AugmentConfig {
  double brightness = 0.1;   // additive, uniform in +-brightness
  double contrast = 0.2;     // multiplicative, uniform in 1 +- contrast
  double gamma = 0.3;        // exponent uniform in [1-gamma, 1+gamma]
  double color = 0.1;        // per-channel multiplicative, 1 +- color
  double noise_sigma = 0.02; // additive Gaussian image noise
  double shared_prob = 0.5;  // probability both frames draw the same transform
};
Sample augment(const Sample& s, const AugmentConfig& cfg, std::mt19937_64& rng);

// --- Synthetic scenes -------------------------------------------------------
struct SynthConfig {
  int height = 64, width = 128;
  int min_rects = 2, max_rects = 5;
  double max_shift = 6.0;    // pixels of rigid motion per rectangle
  double max_ddisp = 1.0;    // disparity change between frames
  bool dewarped_disp1 = false;  // sample D^{t+1} in the second frame's geometry
};
Sample synth_generate(unsigned seed, const SynthConfig& cfg);

// Line-delimited manifest "seed height width" for exact regeneration.
void write_synth_manifest(const std::string& path, const std::vector<unsigned>& seeds,
                          const SynthConfig& cfg);
std::vector<Sample> load_synth_manifest(const std::string& path);

}  // namespace dlf

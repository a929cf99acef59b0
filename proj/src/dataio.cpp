#include "dlf/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>

namespace dlf {

namespace {

[[noreturn]] void io_fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

cv::Mat read_png16(const std::string& path, int channels) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) io_fail("cannot read image", path);
  if (m.depth() != CV_16U) io_fail("expected 16-bit PNG", path);
  if (m.channels() != channels)
    io_fail("expected " + std::to_string(channels) + "-channel PNG", path);
  return m;
}

}  // namespace

// --- KITTI PNG codecs -------------------------------------------------------

void write_kitti_flow_png(const std::string& path, const Tensor& flow, const Tensor& valid) {
  const int h = flow.h(), w = flow.w();
  cv::Mat m(h, w, CV_16UC3);  // BGR on disk order: B=valid, G=v, R=u
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto& px = m.at<cv::Vec3w>(y, x);
      const bool v = valid.at(y, x, 0) > 0.0;
      auto enc = [](double f) {
        double r = std::round(f * 64.0 + 32768.0);
        return uint16_t(std::clamp(r, 0.0, 65535.0));
      };
      px[0] = v ? 1 : 0;
      px[1] = v ? enc(flow.at(y, x, 1)) : 0;
      px[2] = v ? enc(flow.at(y, x, 0)) : 0;
    }
  if (!cv::imwrite(path, m)) io_fail("cannot write PNG", path);
}

void read_kitti_flow_png(const std::string& path, Tensor& flow, Tensor& valid) {
  cv::Mat m = read_png16(path, 3);
  flow = Tensor::hwc(m.rows, m.cols, 2);
  valid = Tensor::hw(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto& px = m.at<cv::Vec3w>(y, x);
      if (px[0] == 0) continue;
      valid.at(y, x, 0) = 1.0;
      flow.at(y, x, 0) = (double(px[2]) - 32768.0) / 64.0;
      flow.at(y, x, 1) = (double(px[1]) - 32768.0) / 64.0;
    }
}

void write_kitti_disp_png(const std::string& path, const Tensor& disp, const Tensor& valid) {
  cv::Mat m(disp.h(), disp.w(), CV_16UC1);
  for (int y = 0; y < disp.h(); ++y)
    for (int x = 0; x < disp.w(); ++x) {
      double v = 0.0;
      if (valid.at(y, x, 0) > 0.0)
        v = std::clamp(std::round(disp.at(y, x, 0) * 256.0), 1.0, 65535.0);
      m.at<uint16_t>(y, x) = uint16_t(v);
    }
  if (!cv::imwrite(path, m)) io_fail("cannot write PNG", path);
}

void read_kitti_disp_png(const std::string& path, Tensor& disp, Tensor& valid) {
  cv::Mat m = read_png16(path, 1);
  disp = Tensor::hw(m.rows, m.cols);
  valid = Tensor::hw(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const uint16_t raw = m.at<uint16_t>(y, x);
      if (raw == 0) continue;
      valid.at(y, x, 0) = 1.0;
      disp.at(y, x, 0) = double(raw) / 256.0;
    }
}

// --- Calibration ------------------------------------------------------------

Calibration parse_kitti_calib(const std::string& path) {
  std::ifstream in(path);
  if (!in) io_fail("cannot open calibration file", path);
  std::vector<double> p2, p3;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "P_rect_02:" || key == "P2:") {
      p2.assign(std::istream_iterator<double>(ss), std::istream_iterator<double>());
    } else if (key == "P_rect_03:" || key == "P3:") {
      p3.assign(std::istream_iterator<double>(ss), std::istream_iterator<double>());
    }
  }
  if (p2.size() != 12 || p3.size() != 12) io_fail("missing projection matrices", path);
  Calibration c;
  c.focal = p2[0];
  c.cx = p2[2];
  c.cy = p2[6];
  c.baseline = (p2[3] - p3[3]) / c.focal;  // camera offsets along x, meters
  if (c.focal <= 0 || c.baseline <= 0) io_fail("degenerate calibration", path);
  return c;
}

Calibration parse_simple_calib(const std::string& path) {
  std::ifstream in(path);
  if (!in) io_fail("cannot open calibration file", path);
  Calibration c;
  std::string key;
  double val;
  while (in >> key >> val) {
    if (key == "focal") c.focal = val;
    else if (key == "cx") c.cx = val;
    else if (key == "cy") c.cy = val;
    else if (key == "baseline") c.baseline = val;
  }
  if (c.focal <= 0 || c.baseline <= 0) io_fail("incomplete calibration", path);
  return c;
}

void write_simple_calib(const std::string& path, const Calibration& c) {
  std::ofstream out(path);
  out << "focal " << c.focal << "\ncx " << c.cx << "\ncy " << c.cy << "\nbaseline "
      << c.baseline << "\n";
  if (!out) io_fail("cannot write calibration file", path);
}

// --- PFM --------------------------------------------------------------------

Tensor read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail("cannot open PFM", path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  if (magic != "Pf" && magic != "PF") io_fail("bad PFM magic", path);
  if (w <= 0 || h <= 0 || scale == 0.0) io_fail("bad PFM header", path);
  in.get();  // single whitespace after the header
  const int c = magic == "PF" ? 3 : 1;
  std::vector<float> row(std::size_t(w) * c);
  Tensor t = Tensor::hwc(h, w, c);
  const bool little = scale < 0.0;
  for (int y = h - 1; y >= 0; --y) {  // bottom-up row order
    in.read(reinterpret_cast<char*>(row.data()), row.size() * sizeof(float));
    if (!in) io_fail("truncated PFM payload", path);
    for (int x = 0; x < w; ++x)
      for (int i = 0; i < c; ++i) {
        float f = row[std::size_t(x) * c + i];
        if (!little) {  // big-endian payload: swap bytes
          uint32_t u;
          std::memcpy(&u, &f, 4);
          u = __builtin_bswap32(u);
          std::memcpy(&f, &u, 4);
        }
        t.at(y, x, i) = double(f);
      }
  }
  return t;
}

void write_pfm(const std::string& path, const Tensor& t) {
  if (t.c() != 1 && t.c() != 3) throw std::invalid_argument("PFM stores 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) io_fail("cannot write PFM", path);
  out << (t.c() == 3 ? "PF" : "Pf") << "\n" << t.w() << " " << t.h() << "\n-1.0\n";
  std::vector<float> row(std::size_t(t.w()) * t.c());
  for (int y = t.h() - 1; y >= 0; --y) {
    for (int x = 0; x < t.w(); ++x)
      for (int i = 0; i < t.c(); ++i) row[std::size_t(x) * t.c() + i] = float(t.at(y, x, i));
    out.write(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float));
  }
  if (!out) io_fail("short write on PFM", path);
}

// --- Sample loaders ---------------------------------------------------------

namespace {

Tensor read_rgb_image(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) io_fail("cannot read image", path);
  Tensor t = Tensor::hwc(m.rows, m.cols, 3);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto& px = m.at<cv::Vec3b>(y, x);  // BGR
      t.at(y, x, 0) = px[2] / 255.0;
      t.at(y, x, 1) = px[1] / 255.0;
      t.at(y, x, 2) = px[0] / 255.0;
    }
  return t;
}

void assemble_gt(Sample& s, const Tensor& flow, const Tensor& flow_valid) {
  const int h = flow.h(), w = flow.w();
  s.gt = Tensor::hwc(h, w, 4);
  s.gt_valid = Tensor::hw(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (flow_valid.at(y, x, 0) <= 0.0 || s.dense_disp0_valid.at(y, x, 0) <= 0.0 ||
          s.dense_disp1_valid.at(y, x, 0) <= 0.0)
        continue;
      s.gt_valid.at(y, x, 0) = 1.0;
      s.gt.at(y, x, 0) = flow.at(y, x, 0);
      s.gt.at(y, x, 1) = flow.at(y, x, 1);
      s.gt.at(y, x, 2) = s.dense_disp0.at(y, x, 0);
      s.gt.at(y, x, 3) = s.dense_disp1.at(y, x, 0);
    }
}

}  // namespace

Sample load_kitti_sample(const KittiSamplePaths& paths) {
  Sample s;
  s.image_t = read_rgb_image(paths.image_t);
  s.image_t1 = read_rgb_image(paths.image_t1);
  read_kitti_disp_png(paths.disp0, s.dense_disp0, s.dense_disp0_valid);
  read_kitti_disp_png(paths.disp1, s.dense_disp1, s.dense_disp1_valid);
  Tensor flow, flow_valid;
  read_kitti_flow_png(paths.flow, flow, flow_valid);
  if (!flow.same_spatial(s.image_t) || !s.dense_disp0.same_spatial(s.image_t))
    io_fail("inconsistent grid sizes in sample", paths.image_t);
  assemble_gt(s, flow, flow_valid);
  s.calib = parse_kitti_calib(paths.calib);
  return s;
}

Sample load_ft3d_sample(const Ft3dSamplePaths& paths) {
  Sample s;
  s.image_t = read_rgb_image(paths.image_t);
  s.image_t1 = read_rgb_image(paths.image_t1);
  Tensor d0 = read_pfm(paths.disp0);
  Tensor d1 = read_pfm(paths.disp1);
  Tensor fl = read_pfm(paths.flow);
  if (d0.c() != 1 || d1.c() != 1) io_fail("expected scalar disparity PFM", paths.disp0);
  if (fl.c() != 3 && fl.c() != 1) io_fail("expected flow PFM", paths.flow);
  if (!d0.same_spatial(s.image_t) || !fl.same_spatial(s.image_t))
    io_fail("inconsistent grid sizes in sample", paths.image_t);
  const int h = d0.h(), w = d0.w();
  s.dense_disp0 = Tensor::hw(h, w);
  s.dense_disp1 = Tensor::hw(h, w);
  s.dense_disp0_valid = Tensor::hw(h, w);
  s.dense_disp1_valid = Tensor::hw(h, w);
  Tensor flow = Tensor::hwc(h, w, 2);
  Tensor flow_valid = Tensor::hw(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // FT3D disparities are sometimes stored negative; magnitudes are valid
      // everywhere.
      s.dense_disp0.at(y, x, 0) = std::fabs(d0.at(y, x, 0));
      s.dense_disp1.at(y, x, 0) = std::fabs(d1.at(y, x, 0));
      s.dense_disp0_valid.at(y, x, 0) = 1.0;
      s.dense_disp1_valid.at(y, x, 0) = 1.0;
      flow.at(y, x, 0) = fl.at(y, x, 0);
      flow.at(y, x, 1) = fl.c() == 3 ? fl.at(y, x, 1) : 0.0;
      flow_valid.at(y, x, 0) = 1.0;
    }
  assemble_gt(s, flow, flow_valid);
  s.calib = paths.calib;
  return s;
}

// --- LiDAR simulation -------------------------------------------------------

namespace {

SparseDepthInput pick_points(const Tensor& disp, const Tensor& valid, std::size_t count,
                             std::mt19937_64& rng) {
  std::vector<std::pair<int, int>> cells;
  for (int y = 0; y < disp.h(); ++y)
    for (int x = 0; x < disp.w(); ++x)
      if (valid.at(y, x, 0) > 0.0) cells.emplace_back(y, x);
  count = std::min(count, cells.size());
  std::vector<std::pair<int, int>> chosen;
  std::sample(cells.begin(), cells.end(), std::back_inserter(chosen), count, rng);
  SparseDepthInput out;
  out.disparity = Tensor::hw(disp.h(), disp.w());
  out.validity = Tensor::hw(disp.h(), disp.w());
  for (auto [y, x] : chosen) {
    out.disparity.at(y, x, 0) = disp.at(y, x, 0);
    out.validity.at(y, x, 0) = 1.0;
  }
  return out;
}

}  // namespace

SparseDepthInput sample_lidar_fraction(const Tensor& disp, const Tensor& valid, double fraction,
                                       std::mt19937_64& rng) {
  if (fraction < 0.002 || fraction > 0.2)
    throw std::invalid_argument("lidar density fraction outside [0.002, 0.2]");
  std::size_t n_valid = 0;
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i] > 0.0) ++n_valid;
  return pick_points(disp, valid, std::size_t(std::llround(fraction * double(n_valid))), rng);
}

SparseDepthInput sample_lidar_count(const Tensor& disp, const Tensor& valid, int count,
                                    std::mt19937_64& rng) {
  if (count < 0) throw std::invalid_argument("negative lidar point count");
  return pick_points(disp, valid, std::size_t(count), rng);
}

SparseDepthInput add_noise(const SparseDepthInput& in, double sigma, std::mt19937_64& rng) {
  if (sigma < 0) throw std::invalid_argument("negative noise sigma");
  SparseDepthInput out = in;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> n(0.0, sigma);
  for (int y = 0; y < out.disparity.h(); ++y)
    for (int x = 0; x < out.disparity.w(); ++x)
      if (out.validity.at(y, x, 0) > 0.0)
        out.disparity.at(y, x, 0) = std::max(out.disparity.at(y, x, 0) + n(rng), 1e-3);
  return out;
}

// --- Augmentation -----------------------------------------------------------

namespace {

struct Photometric {
  double brightness, contrast, gamma;
  double color[3];
};

Photometric draw_photometric(const AugmentConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Photometric p;
  p.brightness = cfg.brightness * u(rng);
  p.contrast = 1.0 + cfg.contrast * u(rng);
  p.gamma = 1.0 + cfg.gamma * u(rng);
  for (double& c : p.color) c = 1.0 + cfg.color * u(rng);
  return p;
}

void apply_photometric(Tensor& img, const Photometric& p, double noise_sigma,
                       std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, noise_sigma);
  for (int y = 0; y < img.h(); ++y)
    for (int x = 0; x < img.w(); ++x)
      for (int c = 0; c < 3; ++c) {
        double v = img.at(y, x, c);
        if (p.gamma != 1.0) v = std::pow(std::clamp(v, 0.0, 1.0), p.gamma);
        if (p.contrast != 1.0 || p.brightness != 0.0)
          v = (v - 0.5) * p.contrast + 0.5 + p.brightness;
        if (p.color[c] != 1.0) v *= p.color[c];
        if (noise_sigma > 0.0) v += n(rng);
        img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
      }
}

}  // namespace

Sample augment(const Sample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
  Sample out = s;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Photometric p0 = draw_photometric(cfg, rng);
  const Photometric p1 = u01(rng) < cfg.shared_prob ? p0 : draw_photometric(cfg, rng);
  apply_photometric(out.image_t, p0, cfg.noise_sigma, rng);
  apply_photometric(out.image_t1, p1, cfg.noise_sigma, rng);
  return out;
}

// --- Synthetic scenes -------------------------------------------------------

namespace {

// A textured planar surface at constant disparity, moving rigidly between
// the two frames. The background is a full-frame static surface.
struct Surface {
  double x0 = 0, y0 = 0, w = 0, h = 0;  // frame-t extent (background: whole frame)
  double du = 0, dv = 0;                // motion per frame step, pixels
  double d0 = 0, dd = 0;                // disparity at t and its change
  bool background = false;
  double base[3];
  double amp[3][3], fx[3], fy[3], ph[3][3];

  double disp_at(int frame) const { return d0 + frame * dd; }

  bool covers(double x, double y, int frame) const {
    if (background) return true;
    const double ox = x0 + frame * du, oy = y0 + frame * dv;
    return x >= ox && x < ox + w && y >= oy && y < oy + h;
  }

  double tex(double x, double y, int frame, int c) const {
    const double xl = x - frame * du, yl = y - frame * dv;  // object-anchored
    double v = base[c];
    for (int k = 0; k < 3; ++k) v += amp[c][k] * std::sin(fx[k] * xl + fy[k] * yl + ph[c][k]);
    return std::clamp(v, 0.02, 0.98);
  }
};

const Surface& top_surface(const std::vector<Surface>& surfs, double x, double y, int frame) {
  const Surface* best = nullptr;
  for (const auto& s : surfs)
    if (s.covers(x, y, frame) && (!best || s.disp_at(frame) > best->disp_at(frame))) best = &s;
  return *best;  // the background always covers
}

}  // namespace

Sample synth_generate(unsigned seed, const SynthConfig& cfg) {
  if (cfg.height < 64 || cfg.width < 64)
    throw std::invalid_argument("synthetic scenes need at least 64x64");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  auto texture = [&](Surface& s) {
    for (int k = 0; k < 3; ++k) {
      // Strong mid-frequency texture so local matching is well-posed.
      s.fx[k] = 0.3 + 1.4 * u(rng);
      s.fy[k] = 0.3 + 1.4 * u(rng);
    }
    for (int c = 0; c < 3; ++c) {
      s.base[c] = 0.3 + 0.4 * u(rng);
      for (int k = 0; k < 3; ++k) {
        s.amp[c][k] = 0.05 + 0.12 * u(rng);
        s.ph[c][k] = 6.2831853 * u(rng);
      }
    }
  };

  std::vector<Surface> surfs;
  Surface bg;
  bg.background = true;
  bg.d0 = 3.0 + 3.0 * u(rng);  // far plane
  texture(bg);
  surfs.push_back(bg);

  std::uniform_int_distribution<int> nr(cfg.min_rects, cfg.max_rects);
  const int n = nr(rng);
  for (int i = 0; i < n; ++i) {
    Surface s;
    s.w = cfg.width * (0.15 + 0.25 * u(rng));
    s.h = cfg.height * (0.15 + 0.25 * u(rng));
    s.x0 = u(rng) * (cfg.width - s.w);
    s.y0 = u(rng) * (cfg.height - s.h);
    s.du = cfg.max_shift * (2.0 * u(rng) - 1.0);
    s.dv = cfg.max_shift * (2.0 * u(rng) - 1.0);
    s.d0 = 8.0 + 22.0 * u(rng);  // always nearer than the background
    s.dd = cfg.max_ddisp * (2.0 * u(rng) - 1.0);
    texture(s);
    surfs.push_back(s);
  }

  const int h = cfg.height, w = cfg.width;
  Sample out;
  out.image_t = Tensor::hwc(h, w, 3);
  out.image_t1 = Tensor::hwc(h, w, 3);
  out.dense_disp0 = Tensor::hw(h, w);
  out.dense_disp0_valid = Tensor::hw(h, w);
  out.dense_disp1 = Tensor::hw(h, w);
  out.dense_disp1_valid = Tensor::hw(h, w);
  out.gt = Tensor::hwc(h, w, 4);
  out.gt_valid = Tensor::hw(h, w);
  out.calib = {100.0, w / 2.0, h / 2.0, 0.5};

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Surface& s0 = top_surface(surfs, x, y, 0);
      const Surface& s1 = top_surface(surfs, x, y, 1);
      for (int c = 0; c < 3; ++c) {
        out.image_t.at(y, x, c) = s0.tex(x, y, 0, c);
        out.image_t1.at(y, x, c) = s1.tex(x, y, 1, c);
      }
      out.dense_disp0.at(y, x, 0) = s0.disp_at(0);
      out.dense_disp0_valid.at(y, x, 0) = 1.0;

      // Default D^{t+1} source: the surface's t+1 disparity aligned to the
      // reference pixel; dewarped mode uses the second frame's own geometry.
      out.dense_disp1.at(y, x, 0) = cfg.dewarped_disp1 ? s1.disp_at(1) : s0.disp_at(1);
      out.dense_disp1_valid.at(y, x, 0) = 1.0;

      out.gt.at(y, x, 0) = s0.du;
      out.gt.at(y, x, 1) = s0.dv;
      out.gt.at(y, x, 2) = s0.disp_at(0);
      out.gt.at(y, x, 3) = s0.disp_at(1);

      // Validity: the motion target must stay inside the frame and must not
      // be covered by a nearer surface at t+1 (z-buffer occlusion test).
      const double tx = x + s0.du, ty = y + s0.dv;
      bool valid = tx >= 0 && tx < w && ty >= 0 && ty < h;
      if (valid) {
        const Surface& occ = top_surface(surfs, tx, ty, 1);
        if (&occ != &s0 && occ.disp_at(1) > s0.disp_at(1)) valid = false;
      }
      out.gt_valid.at(y, x, 0) = valid ? 1.0 : 0.0;
    }
  return out;
}

void write_synth_manifest(const std::string& path, const std::vector<unsigned>& seeds,
                          const SynthConfig& cfg) {
  std::ofstream out(path);
  if (!out) io_fail("cannot write manifest", path);
  for (unsigned s : seeds) out << s << " " << cfg.height << " " << cfg.width << "\n";
}

std::vector<Sample> load_synth_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) io_fail("cannot open manifest", path);
  std::vector<Sample> samples;
  unsigned seed;
  SynthConfig cfg;
  while (in >> seed >> cfg.height >> cfg.width) samples.push_back(synth_generate(seed, cfg));
  return samples;
}

}  // namespace dlf

#include "dlf/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>

namespace dlf {

namespace {

bool is_outlier_2d(double epe, double gt_mag, double abs_thresh, double rel_thresh) {
  return epe > abs_thresh && epe > rel_thresh * gt_mag;
}

double flow_err(const Tensor& pred, const Tensor& gt, int y, int x) {
  const double du = pred.at(y, x, 0) - gt.at(y, x, 0);
  const double dv = pred.at(y, x, 1) - gt.at(y, x, 1);
  return std::sqrt(du * du + dv * dv);
}

double flow_mag(const Tensor& gt, int y, int x) {
  const double u = gt.at(y, x, 0), v = gt.at(y, x, 1);
  return std::sqrt(u * u + v * v);
}

}  // namespace

std::optional<double> component_outlier_rate(const Tensor& pred, const Tensor& gt,
                                             const Tensor& valid, double abs_thresh,
                                             double rel_thresh) {
  if (pred.c() != 1 && pred.c() != 2)
    throw std::invalid_argument("component metrics take 1- or 2-channel fields");
  long n = 0, out = 0;
  for (int y = 0; y < pred.h(); ++y)
    for (int x = 0; x < pred.w(); ++x) {
      if (valid.at(y, x, 0) <= 0.0) continue;
      ++n;
      double epe, mag;
      if (pred.c() == 2) {
        epe = flow_err(pred, gt, y, x);
        mag = flow_mag(gt, y, x);
      } else {
        epe = std::fabs(pred.at(y, x, 0) - gt.at(y, x, 0));
        mag = std::fabs(gt.at(y, x, 0));
      }
      if (is_outlier_2d(epe, mag, abs_thresh, rel_thresh)) ++out;
    }
  if (n == 0) return std::nullopt;
  return 100.0 * double(out) / double(n);
}

std::optional<double> sf_outlier_rate(const Tensor& pred, const Tensor& gt,
                                      const Tensor& valid) {
  long n = 0, out = 0;
  for (int y = 0; y < pred.h(); ++y)
    for (int x = 0; x < pred.w(); ++x) {
      if (valid.at(y, x, 0) <= 0.0) continue;
      ++n;
      const double fe = flow_err(pred, gt, y, x);
      const double fm = flow_mag(gt, y, x);
      const double e0 = std::fabs(pred.at(y, x, 2) - gt.at(y, x, 2));
      const double e1 = std::fabs(pred.at(y, x, 3) - gt.at(y, x, 3));
      const bool o = is_outlier_2d(fe, fm, 3.0, 0.05) ||
                     is_outlier_2d(e0, std::fabs(gt.at(y, x, 2)), 3.0, 0.05) ||
                     is_outlier_2d(e1, std::fabs(gt.at(y, x, 3)), 3.0, 0.05);
      if (o) ++out;
    }
  if (n == 0) return std::nullopt;
  return 100.0 * double(out) / double(n);
}

std::optional<double> sf_epe(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
  long n = 0;
  double sum = 0.0;
  for (int y = 0; y < pred.h(); ++y)
    for (int x = 0; x < pred.w(); ++x) {
      if (valid.at(y, x, 0) <= 0.0) continue;
      ++n;
      double s = 0.0;
      for (int c = 0; c < 4; ++c) {
        const double e = pred.at(y, x, c) - gt.at(y, x, c);
        s += e * e;
      }
      sum += std::sqrt(s);
    }
  if (n == 0) return std::nullopt;
  return sum / double(n);
}

std::optional<double> fl_epe(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
  long n = 0;
  double sum = 0.0;
  for (int y = 0; y < pred.h(); ++y)
    for (int x = 0; x < pred.w(); ++x) {
      if (valid.at(y, x, 0) <= 0.0) continue;
      ++n;
      sum += flow_err(pred, gt, y, x);
    }
  if (n == 0) return std::nullopt;
  return sum / double(n);
}

std::array<double, 3> project_3d(double x, double y, double disparity, const Calibration& c) {
  if (disparity <= 0.0) throw std::invalid_argument("project_3d needs disparity > 0");
  const double z = c.focal * c.baseline / disparity;
  return {(x - c.cx) * z / c.focal, (y - c.cy) * z / c.focal, z};
}

SparseEval3d sparse_eval_3d(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                            const Calibration& calib) {
  SparseEval3d r;
  long out3d = 0, outfl = 0;
  double sum3d = 0.0, sumfl = 0.0;
  long nfl = 0;
  for (int y = 0; y < pred.h(); ++y)
    for (int x = 0; x < pred.w(); ++x) {
      if (mask.at(y, x, 0) <= 0.0) continue;

      const double fe = flow_err(pred, gt, y, x);
      ++nfl;
      sumfl += fe;
      if (is_outlier_2d(fe, flow_mag(gt, y, x), 3.0, 0.05)) ++outfl;

      const double pd0 = pred.at(y, x, 2), pd1 = pred.at(y, x, 3);
      const double gd0 = gt.at(y, x, 2), gd1 = gt.at(y, x, 3);
      if (pd0 <= 0.0 || pd1 <= 0.0 || gd0 <= 0.0 || gd1 <= 0.0) {
        ++r.excluded;
        continue;
      }
      const auto p0 = project_3d(x, y, pd0, calib);
      const auto p1 = project_3d(x + pred.at(y, x, 0), y + pred.at(y, x, 1), pd1, calib);
      const auto g0 = project_3d(x, y, gd0, calib);
      const auto g1 = project_3d(x + gt.at(y, x, 0), y + gt.at(y, x, 1), gd1, calib);
      double err = 0.0, mag = 0.0;
      for (int i = 0; i < 3; ++i) {
        const double mp = p1[i] - p0[i], mg = g1[i] - g0[i];
        err += (mp - mg) * (mp - mg);
        mag += mg * mg;
      }
      err = std::sqrt(err);
      mag = std::sqrt(mag);
      ++r.evaluated;
      sum3d += err;
      if (err > 0.3 && err > 0.1 * mag) ++out3d;
    }
  if (nfl > 0) {
    r.fl = 100.0 * double(outfl) / double(nfl);
    r.fl_epe = sumfl / double(nfl);
  }
  if (r.evaluated > 0) {
    r.sf_3d = 100.0 * double(out3d) / double(r.evaluated);
    r.sf_epe_3d = sum3d / double(r.evaluated);
  }
  return r;
}

MetricsReport evaluate(const Tensor& pred, const Tensor& gt, const Tensor& valid,
                       const Calibration& calib) {
  MetricsReport r;
  const int h = pred.h(), w = pred.w();
  Tensor pf = Tensor::hwc(h, w, 2), gf = Tensor::hwc(h, w, 2);
  Tensor p0 = Tensor::hw(h, w), g0 = Tensor::hw(h, w);
  Tensor p1 = Tensor::hw(h, w), g1 = Tensor::hw(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      pf.at(y, x, 0) = pred.at(y, x, 0);
      pf.at(y, x, 1) = pred.at(y, x, 1);
      gf.at(y, x, 0) = gt.at(y, x, 0);
      gf.at(y, x, 1) = gt.at(y, x, 1);
      p0.at(y, x, 0) = pred.at(y, x, 2);
      g0.at(y, x, 0) = gt.at(y, x, 2);
      p1.at(y, x, 0) = pred.at(y, x, 3);
      g1.at(y, x, 0) = gt.at(y, x, 3);
      if (valid.at(y, x, 0) > 0.0) ++r.valid_count;
    }
  r.fl = component_outlier_rate(pf, gf, valid);
  r.d0 = component_outlier_rate(p0, g0, valid);
  r.d1 = component_outlier_rate(p1, g1, valid);
  r.sf = sf_outlier_rate(pred, gt, valid);
  r.sf_epe = sf_epe(pred, gt, valid);
  r.fl_epe = fl_epe(pred, gt, valid);
  SparseEval3d s = sparse_eval_3d(pred, gt, valid, calib);
  r.sf_3d = s.sf_3d;
  r.sf_epe_3d = s.sf_epe_3d;
  r.excluded_3d = s.excluded;
  return r;
}

// --- Error map rendering ----------------------------------------------------

namespace {

// 10-bin logarithmic scheme: thresholds double from 0.1875 px upward; the
// color ramp runs dark blue (small) to dark red (large).
constexpr double kBin0 = 0.1875;
constexpr unsigned char kBinColors[10][3] = {
    {49, 54, 149},   {69, 117, 180},  {116, 173, 209}, {171, 217, 233}, {224, 243, 248},
    {254, 224, 144}, {253, 174, 97},  {244, 109, 67},  {215, 48, 39},   {165, 0, 38}};

}  // namespace

int error_map_bin(double epe) {
  double t = kBin0;
  for (int b = 0; b < 9; ++b) {
    if (epe <= t) return b;
    t *= 2.0;
  }
  return 9;
}

void render_error_map(const Tensor& pred, const Tensor& gt, const Tensor& valid,
                      const std::string& path) {
  cv::Mat img(pred.h(), pred.w(), CV_8UC3);
  for (int y = 0; y < pred.h(); ++y)
    for (int x = 0; x < pred.w(); ++x) {
      if (valid.at(y, x, 0) <= 0.0) {
        img.at<cv::Vec3b>(y, x) = {128, 128, 128};
        continue;
      }
      double s = 0.0;
      for (int c = 0; c < 4; ++c) {
        const double e = pred.at(y, x, c) - gt.at(y, x, c);
        s += e * e;
      }
      const auto& rgb = kBinColors[error_map_bin(std::sqrt(s))];
      img.at<cv::Vec3b>(y, x) = {rgb[2], rgb[1], rgb[0]};  // file wants BGR
    }
  if (!cv::imwrite(path, img)) throw std::runtime_error("cannot write error map: " + path);
}

// --- Reports ----------------------------------------------------------------

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream ss;
  ss.precision(6);
  ss << *v;
  return ss.str();
}

}  // namespace

std::string format_metrics_table(const MetricsReport& r) {
  std::ostringstream ss;
  ss << "metric        value\n"
     << "D0 [%]        " << fmt(r.d0) << "\n"
     << "D1 [%]        " << fmt(r.d1) << "\n"
     << "Fl [%]        " << fmt(r.fl) << "\n"
     << "SF [%]        " << fmt(r.sf) << "\n"
     << "SF-EPE [px]   " << fmt(r.sf_epe) << "\n"
     << "Fl-EPE [px]   " << fmt(r.fl_epe) << "\n"
     << "SF-3D [%]     " << fmt(r.sf_3d) << "\n"
     << "SF-EPE-3D [m] " << fmt(r.sf_epe_3d) << "\n"
     << "valid pixels  " << r.valid_count << "\n"
     << "excluded (3D) " << r.excluded_3d << "\n";
  return ss.str();
}

void write_metrics_csv(const std::string& path, const std::vector<std::string>& row_names,
                       const std::vector<MetricsReport>& rows) {
  if (row_names.size() != rows.size())
    throw std::invalid_argument("metrics CSV: name/row count mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics CSV: " + path);
  out << "name,D0,D1,Fl,SF,SF_EPE,Fl_EPE,SF_3D,SF_EPE_3D,valid_count,excluded_3d\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const MetricsReport& r = rows[i];
    out << row_names[i] << "," << fmt(r.d0) << "," << fmt(r.d1) << "," << fmt(r.fl) << ","
        << fmt(r.sf) << "," << fmt(r.sf_epe) << "," << fmt(r.fl_epe) << "," << fmt(r.sf_3d)
        << "," << fmt(r.sf_epe_3d) << "," << r.valid_count << "," << r.excluded_3d << "\n";
  }
}

}  // namespace dlf

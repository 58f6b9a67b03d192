#pragma once

#include <span>
#include <string>
#include <vector>

#include "cbct/volume.hpp"

namespace cbct {

// 10 log10(L^2 / MSE). Identical inputs give +infinity.
double psnr(std::span<const double> x, std::span<const double> ref, double data_range);

struct SSIMConfig {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

// Mean SSIM over every window position fully inside a width x height image
// (row-major, x fastest), with Gaussian-weighted local statistics.
double ssim(std::span<const double> x, std::span<const double> ref, std::size_t width,
            std::size_t height, const SSIMConfig& cfg);

// Mean of the axial-slice SSIMs.
double ssim_volume(const Volume3D& x, const Volume3D& ref, const SSIMConfig& cfg);

// Largest value of the reference, the data-range convention for metrics.
double reference_range(const Volume3D& ref);

struct MetricRow {
  std::string volume_id;
  std::string method;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

// volume_id,method,psnr_db,ssim
std::string metrics_to_csv(const std::vector<MetricRow>& rows);

} // namespace cbct

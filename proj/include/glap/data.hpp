#pragma once

#include "glap/net.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace glap {

// x ~ U[lo, hi], y = sin(x) + N(0, noise_sd^2).
Dataset generate_sine(std::size_t n, double noise_sd, std::uint64_t seed, double lo = -3.141592653589793,
                      double hi = 3.141592653589793);

// Two isotropic Gaussian classes of n/2 points each, labels 0 and 1.
Dataset generate_mixture(std::size_t n, const std::array<double, 2>& mean0, const std::array<double, 2>& mean1,
                         double sd, std::uint64_t seed);

// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
// Pixels are scaled to [0, 1]; at most `limit` items are kept.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t limit);

// Writes images (N x rows*cols, values in [0, 1]) and labels as IDX files.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const Matrix& images, std::size_t rows, std::size_t cols, const std::vector<int>& labels);

// Rotates square images counterclockwise about their centre with bilinear
// interpolation; samples falling outside the image read as zero.
Dataset rotate_inputs(const Dataset& data, double degrees);

}  // namespace glap

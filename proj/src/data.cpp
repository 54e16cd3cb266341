#include "glap/data.hpp"

#include "glap/binary_io.hpp"
#include "glap/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace glap {

Dataset generate_sine(std::size_t n, double noise_sd, std::uint64_t seed, double lo, double hi) {
  if (n == 0) throw ConfigError("sine dataset needs n >= 1");
  if (noise_sd < 0.0) throw ConfigError("noise_sd must be nonnegative");
  Rng rng(seed, {0x51e});
  Dataset d;
  d.inputs.resize(static_cast<Eigen::Index>(n), 1);
  d.targets.resize(static_cast<Eigen::Index>(n), 1);
  for (Eigen::Index i = 0; i < d.inputs.rows(); ++i) {
    const double x = rng.uniform(lo, hi);
    d.inputs(i, 0) = x;
    d.targets(i, 0) = std::sin(x) + noise_sd * rng.normal();
  }
  return d;
}

Dataset generate_mixture(std::size_t n, const std::array<double, 2>& mean0, const std::array<double, 2>& mean1,
                         double sd, std::uint64_t seed) {
  if (n == 0 || n % 2 != 0) throw ConfigError("mixture dataset needs a positive even n");
  if (sd < 0.0) throw ConfigError("mixture sd must be nonnegative");
  Rng rng(seed, {0x313});
  Dataset d;
  d.inputs.resize(static_cast<Eigen::Index>(n), 2);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const auto& mean = label == 0 ? mean0 : mean1;
    d.inputs(static_cast<Eigen::Index>(i), 0) = mean[0] + sd * rng.normal();
    d.inputs(static_cast<Eigen::Index>(i), 1) = mean[1] + sd * rng.normal();
    d.labels[i] = label;
  }
  return d;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t limit) {
  if (limit == 0) throw ConfigError("IDX limit must be positive");
  std::ifstream img(images, std::ios::binary);
  if (!img) throw Error("cannot open " + images.string());
  std::ifstream lab(labels, std::ios::binary);
  if (!lab) throw Error("cannot open " + labels.string());

  if (io::read_u32_be(img) != 0x00000803) throw Error("bad IDX image magic in " + images.string());
  const std::size_t count = io::read_u32_be(img);
  const std::size_t rows = io::read_u32_be(img);
  const std::size_t cols = io::read_u32_be(img);
  if (io::read_u32_be(lab) != 0x00000801) throw Error("bad IDX label magic in " + labels.string());
  const std::size_t label_count = io::read_u32_be(lab);
  if (label_count != count) {
    throw Error("IDX count mismatch: " + std::to_string(count) + " images, " + std::to_string(label_count) +
                " labels");
  }

  const std::size_t n = std::min(count, limit);
  const std::size_t pixels = rows * cols;
  std::vector<unsigned char> buffer(n * pixels);
  img.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
  if (!img) throw Error("truncated IDX image file " + images.string());
  std::vector<unsigned char> label_bytes(n);
  lab.read(reinterpret_cast<char*>(label_bytes.data()), static_cast<std::streamsize>(n));
  if (!lab) throw Error("truncated IDX label file " + labels.string());

  Dataset d;
  d.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pixels));
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      d.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = buffer[i * pixels + p] / 255.0;
    }
    d.labels[i] = label_bytes[i];
    if (d.labels[i] > 9) throw Error("IDX label " + std::to_string(d.labels[i]) + " out of range 0..9");
  }
  return d;
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const Matrix& images, std::size_t rows, std::size_t cols, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(images.cols()) != rows * cols) throw DimensionError("image width mismatch");
  if (labels.size() != static_cast<std::size_t>(images.rows())) throw DimensionError("label count mismatch");
  std::ostringstream img(std::ios::binary);
  io::write_u32_be(img, 0x00000803);
  io::write_u32_be(img, static_cast<std::uint32_t>(images.rows()));
  io::write_u32_be(img, static_cast<std::uint32_t>(rows));
  io::write_u32_be(img, static_cast<std::uint32_t>(cols));
  for (Eigen::Index i = 0; i < images.rows(); ++i) {
    for (Eigen::Index p = 0; p < images.cols(); ++p) {
      const double v = std::clamp(images(i, p), 0.0, 1.0);
      img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  std::ostringstream lab(std::ios::binary);
  io::write_u32_be(lab, 0x00000801);
  io::write_u32_be(lab, static_cast<std::uint32_t>(labels.size()));
  for (int y : labels) lab.put(static_cast<char>(static_cast<unsigned char>(y)));
  io::atomic_write(images_path, img.str());
  io::atomic_write(labels_path, lab.str());
}

Dataset rotate_inputs(const Dataset& data, double degrees) {
  const auto pixels = data.inputs.cols();
  const auto side = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(pixels))));
  if (side * side != pixels) throw DimensionError("rotation needs square images, got " + std::to_string(pixels) + " inputs");
  Dataset out = data;
  if (degrees == 0.0) return out;

  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double centre = 0.5 * static_cast<double>(side - 1);
  auto at = [&](Eigen::Index n, Eigen::Index r, Eigen::Index col) -> double {
    if (r < 0 || r >= side || col < 0 || col >= side) return 0.0;
    return data.inputs(n, r * side + col);
  };
  for (Eigen::Index n = 0; n < data.inputs.rows(); ++n) {
    for (Eigen::Index r = 0; r < side; ++r) {
      for (Eigen::Index col = 0; col < side; ++col) {
        // Output pixel in centred coordinates with y pointing up; sample the
        // source at the inverse rotation.
        const double x = static_cast<double>(col) - centre;
        const double y = centre - static_cast<double>(r);
        const double xs = c * x + s * y;
        const double ys = -s * x + c * y;
        const double src_col = centre + xs;
        const double src_row = centre - ys;
        const double r0 = std::floor(src_row);
        const double c0 = std::floor(src_col);
        const double fr = src_row - r0;
        const double fc = src_col - c0;
        const auto ri = static_cast<Eigen::Index>(r0);
        const auto ci = static_cast<Eigen::Index>(c0);
        out.inputs(n, r * side + col) = (1 - fr) * (1 - fc) * at(n, ri, ci) + (1 - fr) * fc * at(n, ri, ci + 1) +
                                        fr * (1 - fc) * at(n, ri + 1, ci) + fr * fc * at(n, ri + 1, ci + 1);
      }
    }
  }
  return out;
}

}  // namespace glap

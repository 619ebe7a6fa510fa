#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "floodopt/common.hpp"
#include "floodopt/reservoir.hpp"

// Seeded generation and persistence of permeability-field ensembles:
// per-cell lognormal fields built from Gaussian white noise, separable
// truncated-Gaussian smoothing, and an exact per-cell variance
// normalization (so the marginal law is the same with or without
// smoothing, including at grid boundaries).

namespace floodopt {

struct EnsembleSpec {
  int n_d = 20;
  std::uint64_t seed = 0;
  double log_mean = -29.9336;  // log(1e-13 m^2), a desk-scale default
  double log_std = 0.7;
  double corr_len = 3.0;    // smoothing std in cells (geometric mean of the two axes)
  double anisotropy = 1.0;  // sigma_x/sigma_y ratio; > 1 elongates features along x
  int nx = 15;
  int ny = 15;

  void validate() const {
    if (n_d < 1) throw std::invalid_argument("ensemble: member count must be at least 1");
    if (nx < 1 || ny < 1) throw std::invalid_argument("ensemble: grid must be at least 1x1");
    if (!(log_std >= 0.0)) throw std::invalid_argument("ensemble: log_std must be nonnegative");
    if (!(corr_len >= 0.0)) throw std::invalid_argument("ensemble: corr_len must be nonnegative");
    if (!(anisotropy > 0.0)) throw std::invalid_argument("ensemble: anisotropy must be positive");
    if (!std::isfinite(log_mean)) throw std::invalid_argument("ensemble: log_mean must be finite");
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Standard normals via Box-Muller on top of mt19937_64. The generator and
// the transform are both pinned by construction, so streams are reproducible
// across standard libraries (std::normal_distribution is not).
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1p-53;  // (0, 1]
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1p-53;          // [0, 1)
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Truncated Gaussian taps exp(-t^2 / (2 sigma^2)) for t in [-radius, radius].
inline std::vector<double> smoothing_taps(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  for (int t = -radius; t <= radius; ++t)
    taps[t + radius] = std::exp(-0.5 * (t / sigma) * (t / sigma));
  return taps;
}

// One smoothing pass along an axis of length n applied to every line of the
// field, plus the per-position sum of squared taps actually used (the
// truncation at the boundary shrinks the window, and with it the variance of
// the smoothed value; the caller divides it back out).
inline void smooth_axis(std::vector<double>& field, int n_along, int n_lines, int stride_along,
                        int stride_line, const std::vector<double>& taps,
                        std::vector<double>& sumsq) {
  const int radius = static_cast<int>(taps.size() / 2);
  sumsq.assign(n_along, 0.0);
  for (int i = 0; i < n_along; ++i)
    for (int t = -radius; t <= radius; ++t)
      if (i + t >= 0 && i + t < n_along) sumsq[i] += taps[t + radius] * taps[t + radius];
  std::vector<double> line(n_along);
  for (int l = 0; l < n_lines; ++l) {
    double* base = field.data() + static_cast<std::ptrdiff_t>(l) * stride_line;
    for (int i = 0; i < n_along; ++i) line[i] = base[static_cast<std::ptrdiff_t>(i) * stride_along];
    for (int i = 0; i < n_along; ++i) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t)
        if (i + t >= 0 && i + t < n_along) acc += taps[t + radius] * line[i + t];
      base[static_cast<std::ptrdiff_t>(i) * stride_along] = acc;
    }
  }
}

}  // namespace detail

// Permeability field of one member, in m^2, row-major (cell (i,j) at
// j*nx + i). Depends only on (seed, member), never on n_d, so growing an
// ensemble keeps its existing members.
inline std::vector<double> generate_member(const EnsembleSpec& spec, int member) {
  spec.validate();
  if (member < 0) throw std::invalid_argument("ensemble: member index must be nonnegative");
  detail::GaussianStream gauss(
      detail::splitmix64(spec.seed ^ (0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(member) + 1))));
  const int nx = spec.nx, ny = spec.ny;
  std::vector<double> z(static_cast<std::size_t>(nx) * ny);
  for (auto& v : z) v = gauss.next();

  const double sx = spec.corr_len * std::sqrt(spec.anisotropy);
  const double sy = spec.corr_len / std::sqrt(spec.anisotropy);
  std::vector<double> sumsq_x, sumsq_y;
  detail::smooth_axis(z, nx, ny, 1, nx, detail::smoothing_taps(sx), sumsq_x);
  detail::smooth_axis(z, ny, nx, nx, 1, detail::smoothing_taps(sy), sumsq_y);

  // The two passes read disjoint noise, so the smoothed variance factors as
  // sumsq_x[i] * sumsq_y[j]; dividing by its root makes every cell exactly
  // standard normal again.
  std::vector<double> field(z.size());
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const std::size_t c = static_cast<std::size_t>(j) * nx + i;
      const double unit = z[c] / std::sqrt(sumsq_x[i] * sumsq_y[j]);
      field[c] = std::exp(spec.log_mean + spec.log_std * unit);
    }
  return field;
}

inline std::vector<std::vector<double>> generate_ensemble(const EnsembleSpec& spec) {
  spec.validate();
  std::vector<std::vector<double>> fields(static_cast<std::size_t>(spec.n_d));
  for (int m = 0; m < spec.n_d; ++m) fields[static_cast<std::size_t>(m)] = generate_member(spec, m);
  return fields;
}

// Stamps the ensemble's permeability fields onto copies of a base model.
inline std::vector<ReservoirModel> ensemble_models(const ReservoirModel& base,
                                                   const std::vector<std::vector<double>>& fields) {
  std::vector<ReservoirModel> models;
  models.reserve(fields.size());
  for (const auto& f : fields) {
    if (f.size() != base.n_cells())
      throw std::invalid_argument("ensemble_models: field size does not match the grid");
    models.push_back(base);
    models.back().perm = f;
  }
  return models;
}

struct LoadedEnsemble {
  EnsembleSpec spec;
  std::vector<std::vector<double>> fields;
};

namespace detail {

inline std::string member_file_name(int m) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "member_%04d.csv", m);
  return buf;
}

}  // namespace detail

// Writes one CSV per member (ny rows of nx full-precision values) plus a
// JSON manifest echoing the spec; load_ensemble(save_ensemble(...)) is a
// bit-exact round trip.
inline void save_ensemble(const std::filesystem::path& dir, const EnsembleSpec& spec,
                          const std::vector<std::vector<double>>& fields) {
  spec.validate();
  if (fields.size() != static_cast<std::size_t>(spec.n_d))
    throw std::invalid_argument("save_ensemble: field count does not match n_d");
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["n_d"] = spec.n_d;
  manifest["seed"] = spec.seed;
  manifest["log_mean"] = spec.log_mean;
  manifest["log_std"] = spec.log_std;
  manifest["corr_len"] = spec.corr_len;
  manifest["anisotropy"] = spec.anisotropy;
  manifest["nx"] = spec.nx;
  manifest["ny"] = spec.ny;
  auto files = nlohmann::ordered_json::array();
  for (int m = 0; m < spec.n_d; ++m) {
    const auto& f = fields[static_cast<std::size_t>(m)];
    if (f.size() != static_cast<std::size_t>(spec.nx) * spec.ny)
      throw std::invalid_argument("save_ensemble: field size does not match the grid");
    const std::string name = detail::member_file_name(m);
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("save_ensemble: cannot write " + (dir / name).string());
    for (int j = 0; j < spec.ny; ++j) {
      for (int i = 0; i < spec.nx; ++i) {
        if (i) out << ',';
        out << format_full(f[static_cast<std::size_t>(j) * spec.nx + i]);
      }
      out << '\n';
    }
    files.push_back(name);
  }
  manifest["members"] = files;
  std::ofstream out(dir / "ensemble_manifest.json");
  if (!out)
    throw std::runtime_error("save_ensemble: cannot write " + (dir / "ensemble_manifest.json").string());
  out << manifest.dump(2) << '\n';
}

inline LoadedEnsemble load_ensemble(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "ensemble_manifest.json";
  std::ifstream min(manifest_path);
  if (!min) throw std::runtime_error("load_ensemble: cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    min >> manifest;
  } catch (const std::exception& e) {
    throw std::runtime_error("parse error at " + manifest_path.string() + ": " + e.what());
  }
  LoadedEnsemble loaded;
  try {
    loaded.spec.n_d = manifest.at("n_d").get<int>();
    loaded.spec.seed = manifest.at("seed").get<std::uint64_t>();
    loaded.spec.log_mean = manifest.at("log_mean").get<double>();
    loaded.spec.log_std = manifest.at("log_std").get<double>();
    loaded.spec.corr_len = manifest.at("corr_len").get<double>();
    loaded.spec.anisotropy = manifest.at("anisotropy").get<double>();
    loaded.spec.nx = manifest.at("nx").get<int>();
    loaded.spec.ny = manifest.at("ny").get<int>();
  } catch (const std::exception& e) {
    throw std::runtime_error("parse error at " + manifest_path.string() + ": " + e.what());
  }
  const auto files = manifest.at("members");
  if (static_cast<int>(files.size()) != loaded.spec.n_d)
    throw std::runtime_error("load_ensemble: manifest n_d mismatch (" +
                             std::to_string(loaded.spec.n_d) + " vs " +
                             std::to_string(files.size()) + " member files)");
  for (const auto& name : files) {
    const auto path = dir / name.get<std::string>();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_ensemble: cannot open " + path.string());
    std::vector<double> field;
    field.reserve(static_cast<std::size_t>(loaded.spec.nx) * loaded.spec.ny);
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
      ++row;
      if (row > loaded.spec.ny)
        throw std::runtime_error("parse error at " + path.string() + ":" + std::to_string(row) +
                                 ": more rows than the grid height");
      std::stringstream ss(line);
      std::string cellText;
      int col = 0;
      while (std::getline(ss, cellText, ',')) {
        ++col;
        std::size_t used = 0;
        double value = 0.0;
        try {
          value = std::stod(cellText, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used == 0 || used != cellText.size())
          throw std::runtime_error("parse error at " + path.string() + ":" + std::to_string(row) +
                                   ": bad value '" + cellText + "'");
        field.push_back(value);
      }
      if (col != loaded.spec.nx)
        throw std::runtime_error("parse error at " + path.string() + ":" + std::to_string(row) +
                                 ": expected " + std::to_string(loaded.spec.nx) + " values, got " +
                                 std::to_string(col));
    }
    if (row != loaded.spec.ny)
      throw std::runtime_error("parse error at " + path.string() + ":" + std::to_string(row + 1) +
                               ": expected " + std::to_string(loaded.spec.ny) + " rows, got " +
                               std::to_string(row));
    loaded.fields.push_back(std::move(field));
  }
  return loaded;
}

}  // namespace floodopt

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "floodopt/ensemble.hpp"

using namespace floodopt;
using Catch::Approx;

namespace fs = std::filesystem;

namespace {

struct MomentStats {
  double mean = 0.0;
  double var = 0.0;
};

MomentStats log_moments(const std::vector<double>& field) {
  MomentStats s;
  for (double k : field) s.mean += std::log(k);
  s.mean /= static_cast<double>(field.size());
  for (double k : field) {
    const double d = std::log(k) - s.mean;
    s.var += d * d;
  }
  s.var /= static_cast<double>(field.size());
  return s;
}

fs::path scratch_dir(const char* leaf) {
  const fs::path dir = fs::temp_directory_path() / "floodopt_ensemble_tests" / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("generation is deterministic and members are index-keyed", "[ensemble]") {
  EnsembleSpec spec;
  spec.n_d = 10;
  spec.seed = 42;
  const auto a = generate_ensemble(spec);
  const auto b = generate_ensemble(spec);
  CHECK(a == b);

  // Growing the ensemble keeps existing members bit-identical.
  EnsembleSpec small = spec;
  small.n_d = 4;
  const auto c = generate_ensemble(small);
  for (int m = 0; m < 4; ++m) CHECK(c[m] == a[m]);

  // Different seeds decorrelate.
  EnsembleSpec other = spec;
  other.seed = 43;
  CHECK(generate_ensemble(other)[0] != a[0]);
}

TEST_CASE("degenerate spreads collapse to a homogeneous field", "[ensemble]") {
  EnsembleSpec spec;
  spec.n_d = 3;
  spec.log_std = 0.0;
  const auto fields = generate_ensemble(spec);
  const double expect = std::exp(spec.log_mean);
  for (const auto& f : fields)
    for (double k : f) CHECK(k == Approx(expect));
  CHECK(fields[0] == fields[1]);
}

TEST_CASE("uncorrelated cells reproduce the log-normal moments", "[ensemble]") {
  EnsembleSpec spec;
  spec.n_d = 1;
  spec.seed = 7;
  spec.corr_len = 0.0;
  spec.nx = spec.ny = 100;
  spec.log_std = 0.7;
  const auto field = generate_member(spec, 0);
  for (double k : field) CHECK(k > 0.0);
  const auto s = log_moments(field);
  CHECK(s.var == Approx(0.49).epsilon(0.05));
  CHECK(s.mean == Approx(spec.log_mean).margin(4.0 * 0.7 / 100.0));
}

TEST_CASE("boundary-exact normalization keeps the marginal variance under smoothing",
          "[ensemble]") {
  EnsembleSpec spec;
  spec.n_d = 1;
  spec.seed = 11;
  spec.corr_len = 2.0;
  spec.nx = spec.ny = 200;
  spec.log_std = 0.5;
  const auto field = generate_member(spec, 0);
  const auto s = log_moments(field);
  // Smoothing correlates neighbours, which widens the estimator's noise but
  // must not bias the per-cell variance itself.
  CHECK(s.var == Approx(0.25).epsilon(0.10));
  CHECK(s.mean == Approx(spec.log_mean).margin(0.05));
}

TEST_CASE("anisotropic smoothing elongates features along x", "[ensemble]") {
  EnsembleSpec spec;
  spec.n_d = 1;
  spec.seed = 5;
  spec.corr_len = 2.0;
  spec.anisotropy = 4.0;
  spec.nx = spec.ny = 150;
  const auto field = generate_member(spec, 0);
  auto idx = [&](int i, int j) { return static_cast<std::size_t>(j) * spec.nx + i; };
  // Mean squared log-increment at lag 3: smaller along the smoother axis.
  double along_x = 0.0, along_y = 0.0;
  int count = 0;
  for (int j = 0; j + 3 < spec.ny; ++j)
    for (int i = 0; i + 3 < spec.nx; ++i) {
      const double base = std::log(field[idx(i, j)]);
      along_x += std::pow(std::log(field[idx(i + 3, j)]) - base, 2);
      along_y += std::pow(std::log(field[idx(i, j + 3)]) - base, 2);
      ++count;
    }
  CHECK(along_x / count < 0.5 * along_y / count);
}

TEST_CASE("save/load round trip is bit exact", "[ensemble]") {
  const auto dir = scratch_dir("roundtrip");
  EnsembleSpec spec;
  spec.n_d = 6;
  spec.seed = 99;
  spec.nx = 9;
  spec.ny = 7;
  const auto fields = generate_ensemble(spec);
  save_ensemble(dir, spec, fields);
  const auto loaded = load_ensemble(dir);
  CHECK(loaded.fields == fields);
  CHECK(loaded.spec.n_d == spec.n_d);
  CHECK(loaded.spec.seed == spec.seed);
  CHECK(loaded.spec.log_mean == spec.log_mean);
  CHECK(loaded.spec.log_std == spec.log_std);
  CHECK(loaded.spec.corr_len == spec.corr_len);
  CHECK(loaded.spec.anisotropy == spec.anisotropy);
  CHECK(loaded.spec.nx == spec.nx);
  CHECK(loaded.spec.ny == spec.ny);
}

TEST_CASE("malformed ensemble files fail with located parse errors", "[ensemble]") {
  const auto dir = scratch_dir("malformed");
  EnsembleSpec spec;
  spec.n_d = 2;
  spec.nx = 5;
  spec.ny = 4;
  const auto fields = generate_ensemble(spec);
  save_ensemble(dir, spec, fields);

  SECTION("truncated member file") {
    // Drop the last row of member 0.
    std::ifstream in(dir / "member_0000.csv");
    std::string keep, line;
    for (int row = 0; row < 3 && std::getline(in, line); ++row) keep += line + "\n";
    in.close();
    std::ofstream(dir / "member_0000.csv") << keep;
    CHECK_THROWS_WITH(load_ensemble(dir),
                      Catch::Matchers::ContainsSubstring("member_0000.csv:4") &&
                          Catch::Matchers::ContainsSubstring("expected 4 rows"));
  }

  SECTION("non-numeric cell") {
    std::ofstream(dir / "member_0001.csv") << "1,2,3,4,5\n1,2,oops,4,5\n1,2,3,4,5\n1,2,3,4,5\n";
    CHECK_THROWS_WITH(load_ensemble(dir),
                      Catch::Matchers::ContainsSubstring("member_0001.csv:2") &&
                          Catch::Matchers::ContainsSubstring("oops"));
  }

  SECTION("short row") {
    std::ofstream(dir / "member_0001.csv") << "1,2,3,4,5\n1,2,3\n1,2,3,4,5\n1,2,3,4,5\n";
    CHECK_THROWS_WITH(load_ensemble(dir),
                      Catch::Matchers::ContainsSubstring("member_0001.csv:2") &&
                          Catch::Matchers::ContainsSubstring("expected 5 values, got 3"));
  }

  SECTION("manifest member-count mismatch") {
    auto manifest_path = dir / "ensemble_manifest.json";
    std::ifstream in(manifest_path);
    nlohmann::json manifest;
    in >> manifest;
    in.close();
    manifest["n_d"] = 3;
    std::ofstream(manifest_path) << manifest.dump(2);
    CHECK_THROWS_WITH(load_ensemble(dir), Catch::Matchers::ContainsSubstring("n_d mismatch"));
  }

  SECTION("missing manifest") {
    fs::remove(dir / "ensemble_manifest.json");
    CHECK_THROWS_WITH(load_ensemble(dir), Catch::Matchers::ContainsSubstring("cannot open"));
  }
}

TEST_CASE("spec validation", "[ensemble]") {
  EnsembleSpec spec;
  spec.n_d = 0;
  CHECK_THROWS_AS(generate_ensemble(spec), std::invalid_argument);
  spec.n_d = 1;
  spec.log_std = -0.1;
  CHECK_THROWS_AS(generate_ensemble(spec), std::invalid_argument);
  spec.log_std = 0.5;
  spec.corr_len = -1.0;
  CHECK_THROWS_AS(generate_ensemble(spec), std::invalid_argument);
}

TEST_CASE("ensemble_models stamps fields onto the base model", "[ensemble]") {
  ReservoirModel base;
  base.nx = 3;
  base.ny = 2;
  base.perm.assign(6, 1e-13);
  EnsembleSpec spec;
  spec.n_d = 2;
  spec.nx = 3;
  spec.ny = 2;
  const auto fields = generate_ensemble(spec);
  const auto models = ensemble_models(base, fields);
  REQUIRE(models.size() == 2);
  CHECK(models[0].perm == fields[0]);
  CHECK(models[1].perm == fields[1]);
  CHECK(models[0].nx == base.nx);

  std::vector<std::vector<double>> wrong{std::vector<double>(5, 1.0)};
  CHECK_THROWS_WITH(ensemble_models(base, wrong),
                    Catch::Matchers::ContainsSubstring("does not match the grid"));
}

#include <doctest.h>

#include <cmath>
#include <sstream>

#include "test_support.hpp"
#include "xmerge/error.hpp"
#include "xmerge/subspace_pca.hpp"

using namespace xmerge;
using xmerge::testing::abs_cosine;
using xmerge::testing::random_states;
using xmerge::testing::svd_top_direction;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kUsage;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("symmetric pair") {
  const std::vector<ParameterVector> s{{1, 0, 0}, {-1, 0, 0}};
  const auto g = gram_pca(s);
  CHECK(g.gram(0, 0) == 1.0);
  CHECK(g.gram(0, 1) == -1.0);
  CHECK(g.gram(1, 0) == -1.0);
  CHECK(g.gram(1, 1) == 1.0);
  CHECK(g.eigvals[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(g.eigvals[1] == doctest::Approx(0.0));
  const auto u = top_direction(g, s);
  CHECK(std::abs(u[0]) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(u[1] == 0.0);
  CHECK(u[2] == 0.0);
}

TEST_CASE("identical states are degenerate") {
  const std::vector<ParameterVector> s(3, ParameterVector{4, 5, 6});
  const auto g = gram_pca(s);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(g.gram(i, j) == 0.0);
  for (double e : g.eigvals) CHECK(e == 0.0);
  CHECK(message_of([&] { top_direction(g, s); }).find("no dominant direction") != std::string::npos);
  CHECK(kind_of([&] { evr_spectrum(g); }) == ErrorKind::kNumerical);
}

TEST_CASE("three points in the plane against a dense covariance eigensolve") {
  const std::vector<ParameterVector> s{{0, 0}, {1, 0}, {2, 1}};
  const auto g = gram_pca(s);
  // Centered: (-1,-1/3), (0,-1/3), (1,2/3)
  const double x[3][2] = {{-1, -1.0 / 3}, {0, -1.0 / 3}, {1, 2.0 / 3}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(g.gram(i, j) == doctest::Approx(x[i][0] * x[j][0] + x[i][1] * x[j][1]).epsilon(1e-14));
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (auto& r : x) cov += Eigen::Vector2d(r[0], r[1]) * Eigen::RowVector2d(r[0], r[1]);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  CHECK(g.eigvals[0] == doctest::Approx(es.eigenvalues()(1)).epsilon(1e-12));
  CHECK(g.eigvals[1] == doctest::Approx(es.eigenvalues()(0)).epsilon(1e-12));
  CHECK(g.eigvals[2] == doctest::Approx(0.0));
  CHECK(abs_cosine(top_direction(g, s), es.eigenvectors().col(1)) >= 1 - 1e-12);
}

TEST_CASE("collinear states recover the line") {
  const ParameterVector w{3, -4, 12};
  std::vector<ParameterVector> s;
  for (int i = 0; i < 5; ++i) s.push_back(ParameterVector{i * w[0], i * w[1], i * w[2]});
  const auto u = top_direction(gram_pca(s), s);
  CHECK(std::abs(dot(u.span(), w.span())) / 13.0 == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("random 5 states in d=20 match the SVD oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_states(rng, 5, 20);
    const auto u = top_direction(gram_pca(s), s);
    CHECK(norm2(u.span()) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(abs_cosine(u, svd_top_direction(s)) >= 1 - 1e-8);
    const auto sv = xmerge::testing::svd_singular_values(s);
    const auto g = gram_pca(s);
    for (int k = 0; k < 4; ++k) CHECK(g.eigvals[static_cast<std::size_t>(k)] == doctest::Approx(sv(k) * sv(k)).epsilon(1e-9));
  }
}

TEST_CASE("evr examples") {
  GramDecomposition g;
  g.gram = DenseMatrix(2);
  g.eigvals = {2, 0};
  CHECK(evr_spectrum(g) == std::vector<double>{1.0, 0.0});
  g.eigvals = {3, 1};
  CHECK(evr_spectrum(g) == std::vector<double>{0.75, 0.25});
}

TEST_CASE("orient examples") {
  CHECK(orient({1, 0}, {2, 0}, {0, 0}) == ParameterVector{1, 0});
  const auto flipped = orient({1, 0}, {-3, 1}, {0, 0});
  CHECK(flipped[0] == -1.0);
  CHECK(flipped[1] == 0.0);
  CHECK(message_of([] { orient({0, 1}, {5, 0}, {0, 0}); }).find("orientation undefined") != std::string::npos);
}

TEST_CASE("project examples") {
  CHECK(project({3, 4}, {1, 0}) == 3.0);
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(project({r, r}, {r, r}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(project({0, 0, 0}, {0.6, 0.8, 0}) == 0.0);
  CHECK(kind_of([] { project({1, 2}, {1, 0, 0}); }) == ErrorKind::kData);
}

TEST_CASE("interpolation scan examples") {
  SUBCASE("quadratic bowl") {
    const LossFn sq = [](const ParameterVector& p) { return dot(p.span(), p.span()); };
    const auto prof = interpolation_scan({1, 0}, {-1, 0}, 5, sq);
    CHECK(prof.alphas == std::vector<double>{0, 0.25, 0.5, 0.75, 1});
    CHECK(prof.losses == std::vector<double>{1, 0.25, 0, 0.25, 1});
    CHECK(prof.classification == ProfileShape::kConvexBasin);
  }
  SUBCASE("linear descent") {
    const LossFn lin = [](const ParameterVector& p) { return p[0]; };
    const auto prof = interpolation_scan({1}, {0}, 3, lin);
    CHECK(prof.losses == std::vector<double>{1, 0.5, 0});
    CHECK(prof.classification == ProfileShape::kMonotoneDecreasing);
  }
  SUBCASE("identical endpoints") {
    const LossFn any = [](const ParameterVector& p) { return 2.0 + p[0]; };
    CHECK(interpolation_scan({1, 1}, {1, 1}, 7, any).classification == ProfileShape::kOther);
  }
  SUBCASE("rising profile is other") {
    CHECK(classify_profile(std::vector<double>{0, 1, 2}) == ProfileShape::kOther);
  }
  SUBCASE("grid too small") { CHECK_THROWS_AS(interpolation_scan({1}, {0}, 2, [](const ParameterVector&) { return 0.0; }), Error); }
}

TEST_CASE("interpolation csv") {
  const LossFn lin = [](const ParameterVector& p) { return p[0]; };
  std::ostringstream out;
  write_profile_csv(out, interpolation_scan({1}, {0}, 3, lin));
  CHECK(out.str() == "# classification=monotone-decreasing\nalpha,loss\n0,1\n0.5,0.5\n1,0\n");
  std::ostringstream evr;
  write_evr_csv(evr, std::vector<double>{0.75, 0.25});
  CHECK(evr.str() == "k,evr\n1,0.75\n2,0.25\n");
}

TEST_CASE("property: translation invariance") {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k = 2 + rng.below(5), d = 2 + rng.below(40);
    const auto s = random_states(rng, k, d);
    auto shifted = s;
    std::vector<double> c(d);
    for (double& x : c) x = 10 * rng.normal();
    for (auto& x : shifted) axpy(1.0, c, x.span());
    const auto g0 = gram_pca(s), g1 = gram_pca(shifted);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(std::abs(g0.eigvals[i] - g1.eigvals[i]) <= 1e-9 * std::max(1.0, g0.eigvals[0]));
      for (std::size_t j = 0; j < k; ++j) CHECK(std::abs(g0.gram(i, j) - g1.gram(i, j)) <= 1e-9 * std::max(1.0, g0.eigvals[0]));
    }
    const auto e0 = evr_spectrum(g0), e1 = evr_spectrum(g1);
    for (std::size_t i = 0; i < k; ++i) CHECK(std::abs(e0[i] - e1[i]) <= 1e-9);
    const auto u0 = top_direction(g0, s), u1 = top_direction(g1, shifted);
    CHECK(std::abs(std::abs(dot(u0.span(), u1.span())) - 1.0) <= 1e-9);
  }
}

TEST_CASE("property: rotation equivariance") {
  Rng rng(37);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k = 2 + rng.below(5), d = 2 + rng.below(30);
    const auto s = random_states(rng, k, d);
    Eigen::MatrixXd m(d, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
    std::vector<ParameterVector> rotated;
    for (const auto& x : s) {
      const Eigen::VectorXd y = q * Eigen::Map<const Eigen::VectorXd>(x.values().data(), static_cast<Eigen::Index>(d));
      rotated.push_back(ParameterVector(std::vector<double>(y.data(), y.data() + d)));
    }
    const auto u = top_direction(gram_pca(s), s);
    const Eigen::VectorXd qu = q * Eigen::Map<const Eigen::VectorXd>(u.values().data(), static_cast<Eigen::Index>(d));
    CHECK(abs_cosine(top_direction(gram_pca(rotated), rotated), qu) >= 1 - 1e-8);
  }
}

TEST_CASE("property: scaling") {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k = 2 + rng.below(5), d = 2 + rng.below(30);
    const auto s = random_states(rng, k, d);
    const double f = std::exp(2 * rng.normal());
    auto scaled = s;
    for (auto& x : scaled)
      for (double& v : x) v *= f;
    const auto g0 = gram_pca(s), g1 = gram_pca(scaled);
    for (std::size_t i = 0; i < k; ++i)
      CHECK(std::abs(g1.eigvals[i] - f * f * g0.eigvals[i]) <= 1e-9 * f * f * g0.eigvals[0]);
    const auto e0 = evr_spectrum(g0), e1 = evr_spectrum(g1);
    for (std::size_t i = 0; i < k; ++i) CHECK(std::abs(e0[i] - e1[i]) <= 1e-9);
    CHECK(std::abs(std::abs(dot(top_direction(g0, s).span(), top_direction(g1, scaled).span())) - 1.0) <= 1e-9);
  }
}

TEST_CASE("property: subspace result invariants and orientation") {
  Rng rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.below(6), d = 2 + rng.below(30);
    const auto s = random_states(rng, k, d);
    const auto r = analyze_subspace(s);
    CHECK(std::abs(norm2(r.u1.span()) - 1.0) <= 1e-10);
    CHECK(r.oriented);
    double sum = 0.0;
    for (std::size_t i = 0; i < r.evr.size(); ++i) {
      sum += r.evr[i];
      CHECK(r.evr[i] >= 0.0);
      CHECK(r.evr[i] <= 1.0);
      if (i) CHECK(r.evr[i] <= r.evr[i - 1]);
    }
    CHECK(sum <= 1 + 1e-9);
    std::vector<double> diff(d);
    for (std::size_t j = 0; j < d; ++j) diff[j] = s[k - 1][j] - s[k - 2][j];
    CHECK(dot(diff, r.direction.span()) >= 0.0);
    for (std::size_t i = 0; i < k; ++i) CHECK(r.projections[i] == project(s[i], r.direction));
    const auto g = gram_pca(s);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) CHECK(std::abs(g.gram(i, j) - g.gram(j, i)) <= 1e-10);
  }
}

TEST_CASE("property: interpolation endpoints are exact oracle values") {
  Rng rng(47);
  const LossFn f = [](const ParameterVector& p) {
    double acc = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) acc += std::sin(p[j]) * (1.0 + 0.1 * static_cast<double>(j));
    return acc;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_states(rng, 2, 7);
    const auto prof = interpolation_scan(s[0], s[1], 3 + rng.below(20), f);
    CHECK(prof.losses.front() == f(s[0]));
    CHECK(prof.losses.back() == f(s[1]));
    CHECK(prof.alphas.front() == 0.0);
    CHECK(prof.alphas.back() == 1.0);
    CHECK(std::is_sorted(prof.alphas.begin(), prof.alphas.end()));
  }
}

TEST_CASE("gram_pca input checks") {
  CHECK(kind_of([] { gram_pca(std::vector<ParameterVector>{{1, 2}}); }) == ErrorKind::kUsage);
  CHECK(kind_of([] { gram_pca(std::vector<ParameterVector>{{1, 2}, {1}}); }) == ErrorKind::kData);
}

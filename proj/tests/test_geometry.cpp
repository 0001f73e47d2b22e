#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "srg/geometry.hpp"

using namespace srg;
using namespace srg::geo;

namespace {

std::vector<Vec3> random_centers(Rng& rng, int n, real span = 3) {
  std::vector<Vec3> cs;
  for (int i = 0; i < n; ++i)
    cs.push_back({rng.uniform(-span, span), rng.uniform(-span, span), rng.uniform(0.1, 2.0)});
  return cs;
}

const real* row(const Tensor& f, int n, int i, int j) {
  return f.data.data() + size_t(i * n + j) * kPairFeatureDim;
}

}  // namespace

TEST_CASE("pairwise features on axis-aligned pairs") {
  std::vector<Vec3> cs = {{0, 0, 0}, {1, 0, 0}};
  Tensor f = pairwise_features(cs);
  const real* ab = row(f, 2, 0, 1);
  CHECK(ab[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ab[1] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(ab[2] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ab[3] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(ab[4] == doctest::Approx(1.0).epsilon(1e-15));

  std::vector<Vec3> up = {{0, 0, 0}, {0, 0, 1}};
  Tensor fu = pairwise_features(up);
  const real* a2 = row(fu, 2, 0, 1);
  CHECK(a2[0] == doctest::Approx(1.0));
  CHECK(std::abs(a2[1]) < 1e-9);       // th = 0 at zero horizontal offset
  CHECK(a2[2] == doctest::Approx(1.0));
  CHECK(a2[3] == doctest::Approx(1.0)); // tv = pi/2
  CHECK(std::abs(a2[4]) < 1e-9);
}

TEST_CASE("pairwise features: diagonal convention and symmetry properties") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    auto cs = random_centers(rng, 8);
    Tensor f = pairwise_features(cs);
    const int n = 8;
    for (int i = 0; i < n; ++i) {
      const real* fi = row(f, n, i, i);
      CHECK(fi[0] == real(0));
      CHECK(fi[1] == real(0));
      CHECK(fi[2] == real(1));
      CHECK(fi[3] == real(0));
      CHECK(fi[4] == real(1));
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const real* ij = row(f, n, i, j);
        const real* ji = row(f, n, j, i);
        CHECK(std::abs(ij[1] * ij[1] + ij[2] * ij[2] - 1) < 1e-9);
        CHECK(std::abs(ij[3] * ij[3] + ij[4] * ij[4] - 1) < 1e-9);
        CHECK(std::abs(ij[0] - ji[0]) < 1e-9);  // d symmetric
        CHECK(ij[0] >= real(0));
        if (i != j) {
          CHECK(std::abs(ij[3] + ji[3]) < 1e-9);  // sin tv antisymmetric
          CHECK(std::abs(ij[4] - ji[4]) < 1e-9);  // cos tv symmetric
          CHECK(std::abs(ij[1] + ji[1]) < 1e-9);  // th shifts by pi: sin flips
          CHECK(std::abs(ij[2] + ji[2]) < 1e-9);  // and cos flips
        }
      }
  }
}

TEST_CASE("bottom_center variant measures elevation between bottom faces") {
  std::vector<Vec3> cs = {{0, 0, 0.5}, {1, 0, 0.75}};
  std::vector<real> ext = {1.0, 1.5};  // both bottoms at z = 0
  Tensor f = pairwise_features(cs, PairVariant::BottomCenter, &ext);
  const real* ab = row(f, 2, 0, 1);
  CHECK(ab[0] == doctest::Approx(std::sqrt(1.0 + 0.0625)));  // d still from centers
  CHECK(std::abs(ab[3]) < 1e-12);                             // flat between bottoms
  CHECK(ab[4] == doctest::Approx(1.0));

  // center variant sees the 0.25 height difference
  Tensor fc = pairwise_features(cs);
  CHECK(row(fc, 2, 0, 1)[3] > 0.2);

  CHECK_THROWS_AS(pairwise_features(cs, PairVariant::BottomCenter, nullptr), Error);
  std::vector<Vec3> bad = {{0, 0, 0}, {std::nan(""), 0, 0}};
  CHECK_THROWS_AS(pairwise_features(bad), Error);
}

TEST_CASE("feature masks zero the right columns") {
  Rng rng(5);
  Tensor f = pairwise_features(random_centers(rng, 4));
  Tensor d_only = mask_distance_only(f);
  Tensor o_only = mask_orientation_only(f);
  for (int r = 0; r < f.rows(); ++r) {
    CHECK(d_only.at(r, 0) == f.at(r, 0));
    for (int c = 1; c < kPairFeatureDim; ++c) CHECK(d_only.at(r, c) == real(0));
    CHECK(o_only.at(r, 0) == real(0));
    for (int c = 1; c < kPairFeatureDim; ++c) CHECK(o_only.at(r, c) == f.at(r, c));
  }
}

TEST_CASE("quarter-turn rotations: identity, composition, validation") {
  Vec3 v = {1.25, -0.5, 2.0};
  Vec3 same = rotate_vec(v, 0);
  CHECK(same[0] == v[0]);
  CHECK(same[1] == v[1]);
  CHECK(same[2] == v[2]);

  Vec3 twice = rotate_vec(rotate_vec(v, 90), 90);
  Vec3 once = rotate_vec(v, 180);
  for (int c = 0; c < 3; ++c) CHECK(twice[size_t(c)] == once[size_t(c)]);

  Vec3 full = rotate_vec(rotate_vec(v, 270), 90);
  for (int c = 0; c < 3; ++c) CHECK(full[size_t(c)] == doctest::Approx(v[size_t(c)]).epsilon(1e-15));

  CHECK_THROWS_AS(rotate_vec(v, 45), Error);
  Tensor pts(2, 3);
  CHECK_THROWS_AS(rotate_points_xyz(pts, -90), Error);
}

TEST_CASE("rotation preserves distances and vertical angles, shifts horizontal angle") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    auto cs = random_centers(rng, 6);
    const int deg = std::array<int, 4>{0, 90, 180, 270}[size_t(rng.uniform_int(4))];
    std::vector<Vec3> rot;
    for (const Vec3& c : cs) rot.push_back(rotate_vec(c, deg));

    Tensor f0 = pairwise_features(cs);
    Tensor f1 = pairwise_features(rot);
    const real a = real(deg) * M_PI / 180;
    const real ca = std::cos(a), sa = std::sin(a);
    for (int r = 0; r < f0.rows(); ++r) {
      CHECK(std::abs(f0.at(r, 0) - f1.at(r, 0)) < 1e-9);  // rigid motion
      CHECK(std::abs(f0.at(r, 3) - f1.at(r, 3)) < 1e-9);  // elevation unchanged
      CHECK(std::abs(f0.at(r, 4) - f1.at(r, 4)) < 1e-9);
      if (f0.at(r, 0) > 0) {
        // th' = th + a
        const real want_sin = f0.at(r, 1) * ca + f0.at(r, 2) * sa;
        const real want_cos = f0.at(r, 2) * ca - f0.at(r, 1) * sa;
        CHECK(std::abs(f1.at(r, 1) - want_sin) < 1e-9);
        CHECK(std::abs(f1.at(r, 2) - want_cos) < 1e-9);
      }
    }
  }
}

TEST_CASE("rotate_points_xyz keeps non-xyz columns and pairwise distances") {
  Rng rng(41);
  Tensor pts(10, 6);
  for (auto& x : pts.data) x = rng.uniform(-2, 2);
  Tensor orig = pts;
  rotate_points_xyz(pts, 90);
  for (int i = 0; i < 10; ++i)
    for (int c = 3; c < 6; ++c) CHECK(pts.at(i, c) == orig.at(i, c));
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j) {
      real d0 = 0, d1 = 0;
      for (int c = 0; c < 3; ++c) {
        d0 += (orig.at(i, c) - orig.at(j, c)) * (orig.at(i, c) - orig.at(j, c));
        d1 += (pts.at(i, c) - pts.at(j, c)) * (pts.at(i, c) - pts.at(j, c));
      }
      CHECK(std::abs(std::sqrt(d0) - std::sqrt(d1)) < 1e-9);
    }
}

TEST_CASE("dominant_colors: degenerate single color") {
  Tensor rgb(50, 3);
  for (int i = 0; i < 50; ++i) {
    rgb.at(i, 0) = real(0.3);
    rgb.at(i, 1) = real(0.6);
    rgb.at(i, 2) = real(0.9);
  }
  Rng rng(7);
  ColorSummary s = dominant_colors(rgb, 3, rng);
  real wsum = 0;
  for (int j = 0; j < 3; ++j) {
    CHECK(s.means.at(j, 0) == doctest::Approx(0.3).epsilon(1e-9));
    CHECK(s.means.at(j, 1) == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(s.means.at(j, 2) == doctest::Approx(0.9).epsilon(1e-9));
    wsum += s.weights[size_t(j)];
  }
  CHECK(std::abs(wsum - 1) < 1e-9);
}

TEST_CASE("dominant_colors: two tight clusters recovered") {
  Rng rng(11);
  Tensor rgb(60, 3);
  for (int i = 0; i < 60; ++i) {
    const bool red = i < 30;
    rgb.at(i, 0) = (red ? real(1) : real(0)) + real(rng.uniform(-0.01, 0.01));
    rgb.at(i, 1) = real(rng.uniform(-0.01, 0.01));
    rgb.at(i, 2) = (red ? real(0) : real(1)) + real(rng.uniform(-0.01, 0.01));
  }
  Rng em(13);
  ColorSummary s = dominant_colors(rgb, 3, em);
  auto near = [&](real r, real g, real b) {
    for (int j = 0; j < 3; ++j) {
      const real d = std::sqrt((s.means.at(j, 0) - r) * (s.means.at(j, 0) - r) +
                               (s.means.at(j, 1) - g) * (s.means.at(j, 1) - g) +
                               (s.means.at(j, 2) - b) * (s.means.at(j, 2) - b));
      if (d < real(0.05)) return true;
    }
    return false;
  };
  CHECK(near(1, 0, 0));
  CHECK(near(0, 0, 1));
  // The redundant third component at most splits one cluster evenly (weight
  // 0.25); it never claims more than either genuine cluster.
  real min_w = 1;
  for (int j = 0; j < 3; ++j) min_w = std::min(min_w, s.weights[size_t(j)]);
  CHECK(min_w < real(0.3));
}

TEST_CASE("dominant_colors: weights normalized, means in range, order-invariant") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 20 + rng.uniform_int(80);
    Tensor rgb(n, 3);
    for (auto& x : rgb.data) x = rng.uniform(0, 1);

    Rng em1(trial), em2(trial);
    ColorSummary a = dominant_colors(rgb, 3, em1);

    // reversed point order, same rng → identical fit (pre-sorting)
    Tensor rev(n, 3);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) rev.at(i, c) = rgb.at(n - 1 - i, c);
    ColorSummary b = dominant_colors(rev, 3, em2);

    real wsum = 0;
    for (int j = 0; j < 3; ++j) {
      wsum += a.weights[size_t(j)];
      CHECK(a.weights[size_t(j)] >= real(0));
      for (int c = 0; c < 3; ++c) {
        CHECK(a.means.at(j, c) >= real(0));
        CHECK(a.means.at(j, c) <= real(1));
        CHECK(a.means.at(j, c) == b.means.at(j, c));
      }
      CHECK(a.weights[size_t(j)] == b.weights[size_t(j)]);
    }
    CHECK(std::abs(wsum - 1) < 1e-9);
  }
}

TEST_CASE("dominant_colors: fewer points than components falls back to global mean") {
  Tensor rgb(2, 3);
  rgb.at(0, 0) = 1;
  rgb.at(1, 0) = 0;
  Rng rng(3);
  ColorSummary s = dominant_colors(rgb, 3, rng);
  for (int j = 0; j < 3; ++j) {
    CHECK(s.means.at(j, 0) == doctest::Approx(0.5));
    CHECK(s.weights[size_t(j)] == doctest::Approx(1.0 / 3));
  }
}

TEST_CASE("box pair encoding concatenates and swaps") {
  std::array<real, 6> a = {1, 2, 3, 4, 5, 6}, b = {7, 8, 9, 10, 11, 12};
  auto ab = box_pair_encoding(a, b);
  auto ba = box_pair_encoding(b, a);
  auto aa = box_pair_encoding(a, a);
  CHECK(ab.size() == 12);
  for (int c = 0; c < 6; ++c) {
    CHECK(ab[size_t(c)] == a[size_t(c)]);
    CHECK(ab[size_t(c + 6)] == b[size_t(c)]);
    CHECK(ab[size_t(c)] == ba[size_t(c + 6)]);
    CHECK(aa[size_t(c)] == aa[size_t(c + 6)]);
  }

  Tensor locs(2, 6);
  for (int i = 0; i < 12; ++i) locs.data[size_t(i)] = real(i);
  Tensor m = box_pair_matrix(locs);
  CHECK(m.rows() == 4);
  CHECK(m.cols() == 12);
  // row (i=1, j=0): first half = locs row 1, second half = locs row 0
  for (int c = 0; c < 6; ++c) {
    CHECK(m.at(2, c) == locs.at(1, c));
    CHECK(m.at(2, c + 6) == locs.at(0, c));
  }
}

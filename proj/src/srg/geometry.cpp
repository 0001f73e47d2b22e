#include "srg/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace srg::geo {

Tensor pairwise_features(const std::vector<Vec3>& centers, PairVariant variant,
                         const std::vector<real>* z_extent) {
  const int n = int(centers.size());
  if (n < 1) fail_numeric("pairwise_features: empty center list");
  for (const Vec3& c : centers)
    for (real v : c)
      if (!std::isfinite(v)) fail_numeric("pairwise_features: non-finite center");
  if (variant == PairVariant::BottomCenter) {
    if (!z_extent || int(z_extent->size()) != n)
      fail_config("pairwise_features: bottom_center variant needs one z extent per center");
  }

  Tensor out(n * n, kPairFeatureDim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      real* f = out.data.data() + size_t(i * n + j) * kPairFeatureDim;
      const real dx = centers[size_t(j)][0] - centers[size_t(i)][0];
      const real dy = centers[size_t(j)][1] - centers[size_t(i)][1];
      const real dz = centers[size_t(j)][2] - centers[size_t(i)][2];
      const real d = std::sqrt(dx * dx + dy * dy + dz * dz);
      f[0] = d;
      if (d == real(0)) {  // convention: zero angles at zero distance
        f[1] = 0; f[2] = 1; f[3] = 0; f[4] = 1;
        continue;
      }
      const real dxy = std::sqrt(dx * dx + dy * dy);
      const real th = std::atan2(dy, dx);
      f[1] = std::sin(th);
      f[2] = std::cos(th);
      real dzv = dz;
      if (variant == PairVariant::BottomCenter) {
        const real bot_i = centers[size_t(i)][2] - (*z_extent)[size_t(i)] / 2;
        const real bot_j = centers[size_t(j)][2] - (*z_extent)[size_t(j)] / 2;
        dzv = bot_j - bot_i;
      }
      const real tv = std::atan2(dzv, dxy);
      f[3] = std::sin(tv);
      f[4] = std::cos(tv);
    }
  }
  return out;
}

Tensor mask_distance_only(Tensor features) {
  for (int r = 0; r < features.rows(); ++r)
    for (int c = 1; c < kPairFeatureDim; ++c) features.at(r, c) = 0;
  return features;
}

Tensor mask_orientation_only(Tensor features) {
  for (int r = 0; r < features.rows(); ++r) features.at(r, 0) = 0;
  return features;
}

void check_rotation_angle(int deg) {
  if (deg != 0 && deg != 90 && deg != 180 && deg != 270)
    fail_config("rotation angle must be one of {0, 90, 180, 270}, got " + std::to_string(deg));
}

namespace {
// (cos, sin) pairs for the allowed quarter turns — exact in floating point.
void quarter_cos_sin(int deg, real& c, real& s) {
  switch (deg) {
    case 0: c = 1; s = 0; break;
    case 90: c = 0; s = 1; break;
    case 180: c = -1; s = 0; break;
    default: c = 0; s = -1; break;  // 270
  }
}
}  // namespace

Vec3 rotate_vec(const Vec3& v, int deg) {
  check_rotation_angle(deg);
  if (deg == 0) return v;
  real c, s;
  quarter_cos_sin(deg, c, s);
  return Vec3{c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]};
}

void rotate_points_xyz(Tensor& points, int deg) {
  check_rotation_angle(deg);
  if (deg == 0) return;
  real c, s;
  quarter_cos_sin(deg, c, s);
  const int cols = points.cols();
  if (cols < 3) fail_numeric("rotate_points_xyz: rows need at least xyz columns");
  for (int r = 0; r < points.rows(); ++r) {
    const real x = points.at(r, 0), y = points.at(r, 1);
    points.at(r, 0) = c * x - s * y;
    points.at(r, 1) = s * x + c * y;
  }
}

namespace {
real sq_dist3(const real* a, const real* b) {
  real s = 0;
  for (int i = 0; i < 3; ++i) {
    const real d = a[i] - b[i];
    s += d * d;
  }
  return s;
}
}  // namespace

ColorSummary dominant_colors(const Tensor& rgb, int k, Rng& rng) {
  const int n = rgb.rows();
  if (rgb.cols() != 3) fail_numeric("dominant_colors: expected K x 3 rgb, got " + rgb.shape_str());
  ColorSummary out;
  out.means = Tensor(k, 3);
  out.weights = Tensor(std::vector<int>{k});

  if (n < k) {  // degenerate input: repeat the global mean, uniform weights
    real mean[3] = {0, 0, 0};
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) mean[c] += rgb.at(i, c);
    for (int c = 0; c < 3; ++c) mean[c] = n > 0 ? mean[c] / n : real(0);
    for (int j = 0; j < k; ++j) {
      for (int c = 0; c < 3; ++c) out.means.at(j, c) = mean[c];
      out.weights[size_t(j)] = real(1) / k;
    }
    return out;
  }

  // Sort rows lexicographically so the fit ignores input point order.
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    for (int c = 0; c < 3; ++c) {
      if (rgb.at(a, c) != rgb.at(b, c)) return rgb.at(a, c) < rgb.at(b, c);
    }
    return false;
  });
  Tensor x(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) x.at(i, c) = rgb.at(order[size_t(i)], c);

  // k-means++ seeding.
  std::vector<const real*> centers;
  centers.push_back(x.data.data() + size_t(rng.uniform_int(n)) * 3);
  std::vector<real> d2(static_cast<std::size_t>(n));
  while (int(centers.size()) < k) {
    real total = 0;
    for (int i = 0; i < n; ++i) {
      real best = sq_dist3(x.data.data() + size_t(i) * 3, centers[0]);
      for (size_t c = 1; c < centers.size(); ++c)
        best = std::min(best, sq_dist3(x.data.data() + size_t(i) * 3, centers[c]));
      d2[size_t(i)] = best;
      total += best;
    }
    int pick;
    if (total <= real(0)) {
      pick = rng.uniform_int(n);  // all mass on existing centers
    } else {
      real u = rng.uniform() * total;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        u -= d2[size_t(i)];
        if (u <= 0) { pick = i; break; }
      }
    }
    centers.push_back(x.data.data() + size_t(pick) * 3);
  }
  Tensor mu(k, 3);
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < 3; ++c) mu.at(j, c) = centers[size_t(j)][c];

  constexpr real kVarFloor = real(1e-4);
  std::vector<real> var(size_t(k), real(0.01));
  std::vector<real> w(size_t(k), real(1) / k);
  Tensor resp(n, k);

  for (int iter = 0; iter < 10; ++iter) {
    // E step: responsibilities by isotropic log-density, row-normalized.
    for (int i = 0; i < n; ++i) {
      real mx = -1e300;
      for (int j = 0; j < k; ++j) {
        const real dd = sq_dist3(x.data.data() + size_t(i) * 3, mu.data.data() + size_t(j) * 3);
        const real lg = std::log(std::max(w[size_t(j)], real(1e-300))) -
                        real(1.5) * std::log(var[size_t(j)]) - dd / (2 * var[size_t(j)]);
        resp.at(i, j) = lg;
        mx = std::max(mx, lg);
      }
      real z = 0;
      for (int j = 0; j < k; ++j) {
        resp.at(i, j) = std::exp(resp.at(i, j) - mx);
        z += resp.at(i, j);
      }
      for (int j = 0; j < k; ++j) resp.at(i, j) /= z;
    }
    // M step.
    for (int j = 0; j < k; ++j) {
      real rs = 0, m[3] = {0, 0, 0};
      for (int i = 0; i < n; ++i) {
        const real r = resp.at(i, j);
        rs += r;
        for (int c = 0; c < 3; ++c) m[c] += r * x.at(i, c);
      }
      w[size_t(j)] = rs / n;
      if (rs > real(1e-12)) {
        for (int c = 0; c < 3; ++c) mu.at(j, c) = m[c] / rs;
        real v = 0;
        for (int i = 0; i < n; ++i)
          v += resp.at(i, j) * sq_dist3(x.data.data() + size_t(i) * 3, mu.data.data() + size_t(j) * 3);
        var[size_t(j)] = std::max(v / (3 * rs), kVarFloor);
      } else {
        var[size_t(j)] = kVarFloor;  // starved component keeps its mean
      }
    }
  }

  out.means = std::move(mu);
  for (int j = 0; j < k; ++j) out.weights[size_t(j)] = w[size_t(j)];
  return out;
}

std::array<real, 12> box_pair_encoding(const std::array<real, 6>& box_i,
                                       const std::array<real, 6>& box_j) {
  std::array<real, 12> out;
  for (int c = 0; c < 6; ++c) {
    out[size_t(c)] = box_i[size_t(c)];
    out[size_t(c + 6)] = box_j[size_t(c)];
  }
  return out;
}

Tensor box_pair_matrix(const Tensor& locs) {
  const int n = locs.rows();
  if (locs.cols() != 6) fail_numeric("box_pair_matrix: expected N x 6 locs, got " + locs.shape_str());
  Tensor out(n * n, 12);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int c = 0; c < 6; ++c) {
        out.at(i * n + j, c) = locs.at(i, c);
        out.at(i * n + j, c + 6) = locs.at(j, c);
      }
  return out;
}

}  // namespace srg::geo

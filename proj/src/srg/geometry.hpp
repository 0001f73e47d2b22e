#pragma once

#include <array>
#include <vector>

#include "srg/rng.hpp"
#include "srg/tensor.hpp"

namespace srg::geo {

using Vec3 = std::array<real, 3>;

// Pairwise feature layout: row i*N+j holds [d, sin th, cos th, sin tv, cos tv].
constexpr int kPairFeatureDim = 5;

enum class PairVariant { Center, BottomCenter };

// Pairwise distances and horizontal/vertical angles between object centers.
// d_ij = |c_i - c_j|; th = atan2(dy, dx); tv = elevation. Zero distance
// (including the diagonal) takes th = tv = 0, so f_ii = [0, 0, 1, 0, 1].
// BottomCenter keeps d and th from centers but measures elevation between
// bottom-face heights (center z minus half extent); z_extent is required then.
// Angles use atan2 against the horizontal distance, so sin^2+cos^2 = 1 always.
Tensor pairwise_features(const std::vector<Vec3>& centers, PairVariant variant = PairVariant::Center,
                         const std::vector<real>* z_extent = nullptr);

// Apply a column mask to pairwise features: dist_only zeroes the four angle
// columns, ort_only zeroes the distance column. Returns a modified copy.
Tensor mask_distance_only(Tensor features);
Tensor mask_orientation_only(Tensor features);

// Quarter-turn rotation about the z axis with exact {0, +-1} coefficients.
// Allowed angles: 0, 90, 180, 270 degrees.
void check_rotation_angle(int deg);
Vec3 rotate_vec(const Vec3& v, int deg);
// Rotates the first three columns of every row in place (rows are xyz... records).
void rotate_points_xyz(Tensor& points, int deg);

// Mixture summary of an object's point colors: k isotropic components.
struct ColorSummary {
  Tensor means;    // k x 3, entries in [0, 1]
  Tensor weights;  // k, nonnegative, sums to 1
};

// Isotropic-variance EM over rgb rows with k-means++ init, 10 iterations,
// variance floor 1e-4. Points are pre-sorted lexicographically, so the fit is
// invariant to input point order. K < k falls back to the repeated global
// mean with uniform weights.
ColorSummary dominant_colors(const Tensor& rgb, int k, Rng& rng);

// [c_i; z_i; c_j; z_j] concatenation for the learned box-pair variant.
std::array<real, 12> box_pair_encoding(const std::array<real, 6>& box_i,
                                       const std::array<real, 6>& box_j);
// All-pairs version: locs is N x 6, result is N*N x 12 with row i*N+j.
Tensor box_pair_matrix(const Tensor& locs);

}  // namespace srg::geo

#include "egopose/rotation.hpp"

#include <algorithm>

#include "egopose/errors.hpp"

namespace egopose {

namespace {

constexpr double kDegenerateNorm = 1e-9;

}  // namespace

RotationMatrix rot6d_to_matrix(const Rot6D& r) {
  const Vec3 a1 = r.first();
  const Vec3 a2 = r.second();
  const double n1 = norm(a1);
  if (!(n1 > kDegenerateNorm)) {
    throw Error(ErrorCode::kDegenerateInput, "first 6D column has norm <= 1e-9");
  }
  const Vec3 b1 = a1 * (1.0 / n1);
  const Vec3 u2 = a2 - b1 * dot(b1, a2);
  const double n2 = norm(u2);
  if (!(n2 > kDegenerateNorm)) {
    throw Error(ErrorCode::kDegenerateInput, "6D columns are parallel");
  }
  const Vec3 b2 = u2 * (1.0 / n2);
  return Mat3::from_columns(b1, b2, cross(b1, b2));
}

Rot6D rot6d_to_matrix_backward(const Rot6D& r, const Mat3& grad_matrix) {
  const Vec3 a1 = r.first();
  const Vec3 a2 = r.second();
  const double n1 = norm(a1);
  const Vec3 b1 = a1 * (1.0 / n1);
  const double proj = dot(b1, a2);
  const Vec3 u2 = a2 - b1 * proj;
  const double n2 = norm(u2);
  const Vec3 b2 = u2 * (1.0 / n2);

  Vec3 g_b1 = grad_matrix.col(0);
  Vec3 g_b2 = grad_matrix.col(1);
  const Vec3 g_b3 = grad_matrix.col(2);

  // b3 = b1 x b2
  g_b1 += cross(b2, g_b3);
  g_b2 += cross(g_b3, b1);

  // b2 = u2 / |u2|
  const Vec3 g_u2 = (g_b2 - b2 * dot(b2, g_b2)) * (1.0 / n2);

  // u2 = a2 - (b1 . a2) b1
  const Vec3 g_a2 = g_u2 - b1 * dot(b1, g_u2);
  g_b1 -= g_u2 * proj + a2 * dot(b1, g_u2);

  // b1 = a1 / |a1|
  const Vec3 g_a1 = (g_b1 - b1 * dot(b1, g_b1)) * (1.0 / n1);

  return Rot6D{{g_a1.x, g_a1.y, g_a1.z, g_a2.x, g_a2.y, g_a2.z}};
}

Rot6D matrix_to_rot6d(const RotationMatrix& rotation) {
  const Vec3 c0 = rotation.col(0);
  const Vec3 c1 = rotation.col(1);
  return Rot6D{{c0.x, c0.y, c0.z, c1.x, c1.y, c1.z}};
}

RotationMatrix compose(const RotationMatrix& a, const RotationMatrix& b) { return a * b; }

RotationMatrix relative_rotation(const RotationMatrix& prev, const RotationMatrix& cur) {
  return prev.transposed() * cur;
}

RotationMatrix axis_angle(const Vec3& axis, double angle_rad) {
  const double n = norm(axis);
  if (n == 0.0 || angle_rad == 0.0) return Mat3::identity();
  const Vec3 k = axis * (1.0 / n);
  const double c = std::cos(angle_rad);
  const double s = std::sin(angle_rad);
  const double t = 1.0 - c;
  return Mat3{{t * k.x * k.x + c, t * k.x * k.y - s * k.z, t * k.x * k.z + s * k.y,
               t * k.x * k.y + s * k.z, t * k.y * k.y + c, t * k.y * k.z - s * k.x,
               t * k.x * k.z - s * k.y, t * k.y * k.z + s * k.x, t * k.z * k.z + c}};
}

double rotation_angle(const RotationMatrix& rotation) {
  const double trace = rotation(0, 0) + rotation(1, 1) + rotation(2, 2);
  return std::acos(std::clamp((trace - 1.0) * 0.5, -1.0, 1.0));
}

bool is_valid_rotation(const RotationMatrix& rotation, double tolerance) {
  const Mat3 gram = rotation.transposed() * rotation;
  if (max_abs_diff(gram, Mat3::identity()) > tolerance) return false;
  return std::abs(rotation.determinant() - 1.0) <= tolerance;
}

double max_abs_diff(const Mat3& a, const Mat3& b) {
  double worst = 0.0;
  for (int i = 0; i < 9; ++i) worst = std::max(worst, std::abs(a.m[i] - b.m[i]));
  return worst;
}

}  // namespace egopose

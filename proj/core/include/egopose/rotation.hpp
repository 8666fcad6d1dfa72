// Rotation representations shared by every stage of the pipeline.
//
// Conventions: right-handed world frame with +z up and the ground plane at
// z = 0. Matrices are row-major 3x3 and act on column vectors. The 6D
// encoding stores the first two matrix columns, column-major:
// (R00, R10, R20, R01, R11, R21).
#pragma once

#include <array>
#include <cmath>

namespace egopose {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }

  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

/// Row-major 3x3 matrix. Used both for rotations and for their gradients.
struct Mat3 {
  std::array<double, 9> m{};

  static constexpr Mat3 identity() { return Mat3{{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
  static constexpr Mat3 zero() { return Mat3{}; }
  static constexpr Mat3 from_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
    return Mat3{{c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z}};
  }
  /// Outer product a * b^T.
  static constexpr Mat3 outer(const Vec3& a, const Vec3& b) {
    return Mat3{{a.x * b.x, a.x * b.y, a.x * b.z, a.y * b.x, a.y * b.y, a.y * b.z, a.z * b.x,
                 a.z * b.y, a.z * b.z}};
  }

  constexpr double& operator()(int r, int c) { return m[r * 3 + c]; }
  constexpr double operator()(int r, int c) const { return m[r * 3 + c]; }

  constexpr Vec3 col(int c) const { return {m[c], m[3 + c], m[6 + c]}; }
  constexpr Vec3 row(int r) const { return {m[r * 3], m[r * 3 + 1], m[r * 3 + 2]}; }

  constexpr Mat3 transposed() const {
    return Mat3{{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}};
  }

  constexpr double determinant() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  constexpr Mat3& operator+=(const Mat3& o) {
    for (int i = 0; i < 9; ++i) m[i] += o.m[i];
    return *this;
  }
  friend constexpr Mat3 operator+(Mat3 a, const Mat3& b) { return a += b; }

  friend constexpr Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        out(r, c) = a(r, 0) * b(0, c) + a(r, 1) * b(1, c) + a(r, 2) * b(2, c);
      }
    }
    return out;
  }
  friend constexpr Vec3 operator*(const Mat3& a, const Vec3& v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
            a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
  }
  friend constexpr bool operator==(const Mat3&, const Mat3&) = default;
};

/// Rotation matrices share the Mat3 storage; validity is a runtime property
/// checked by is_valid_rotation().
using RotationMatrix = Mat3;

/// Continuous 6D rotation encoding. Raw network outputs are stored here
/// unconstrained; rot6d_to_matrix re-orthonormalizes.
struct Rot6D {
  std::array<double, 6> v{1, 0, 0, 0, 1, 0};

  constexpr double& operator[](int i) { return v[i]; }
  constexpr double operator[](int i) const { return v[i]; }
  constexpr Vec3 first() const { return {v[0], v[1], v[2]}; }
  constexpr Vec3 second() const { return {v[3], v[4], v[5]}; }

  static constexpr Rot6D identity() { return Rot6D{}; }
  friend constexpr bool operator==(const Rot6D&, const Rot6D&) = default;
};

/// Gram-Schmidt decoding. Throws Error(kDegenerateInput) when the first
/// column is (near) zero or the two columns are (near) parallel.
RotationMatrix rot6d_to_matrix(const Rot6D& r);

/// Reverse-mode derivative of rot6d_to_matrix: maps dL/dR to dL/dr.
Rot6D rot6d_to_matrix_backward(const Rot6D& r, const Mat3& grad_matrix);

Rot6D matrix_to_rot6d(const RotationMatrix& rotation);

RotationMatrix compose(const RotationMatrix& a, const RotationMatrix& b);

/// prev^T * cur: the rotation that takes prev to cur in prev's local frame.
RotationMatrix relative_rotation(const RotationMatrix& prev, const RotationMatrix& cur);

/// Rodrigues rotation about a (not necessarily unit) axis.
RotationMatrix axis_angle(const Vec3& axis, double angle_rad);

inline RotationMatrix rotation_x(double angle_rad) { return axis_angle({1, 0, 0}, angle_rad); }
inline RotationMatrix rotation_y(double angle_rad) { return axis_angle({0, 1, 0}, angle_rad); }
inline RotationMatrix rotation_z(double angle_rad) { return axis_angle({0, 0, 1}, angle_rad); }

/// Geodesic angle of a rotation in radians, from the trace.
double rotation_angle(const RotationMatrix& rotation);

bool is_valid_rotation(const RotationMatrix& rotation, double tolerance = 1e-6);

/// Largest absolute element-wise difference.
double max_abs_diff(const Mat3& a, const Mat3& b);

constexpr double deg_to_rad(double deg) { return deg * 3.14159265358979323846 / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / 3.14159265358979323846; }

}  // namespace egopose

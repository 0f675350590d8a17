#pragma once

#include <Eigen/Dense>

namespace surfsplat {

// Quaternions are stored scalar-first: q = (w, x, y, z).
using Quat = Eigen::Vector4d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline Quat quat_identity() { return Quat(1, 0, 0, 0); }

inline Quat quat_mul(const Quat& a, const Quat& b) {
    return Quat(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

// Left product matrix: quat_mul(a, b) = QL(a) * b.
inline Eigen::Matrix4d quat_left(const Quat& a) {
    Eigen::Matrix4d m;
    m << a[0], -a[1], -a[2], -a[3],
         a[1],  a[0], -a[3],  a[2],
         a[2],  a[3],  a[0], -a[1],
         a[3], -a[2],  a[1],  a[0];
    return m;
}

// Right product matrix: quat_mul(a, b) = QR(b) * a.
inline Eigen::Matrix4d quat_right(const Quat& b) {
    Eigen::Matrix4d m;
    m << b[0], -b[1], -b[2], -b[3],
         b[1],  b[0],  b[3], -b[2],
         b[2], -b[3],  b[0],  b[1],
         b[3],  b[2], -b[1],  b[0];
    return m;
}

inline Quat quat_conj(const Quat& q) { return Quat(q[0], -q[1], -q[2], -q[3]); }

// Rotation matrix from a unit quaternion.
inline Mat3 quat_to_mat(const Quat& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
         2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y);
    return r;
}

inline Vec3 quat_rotate(const Quat& q, const Vec3& v) { return quat_to_mat(q) * v; }

// dR/dq_i for a unit quaternion, treating R as a function of the 4 raw
// components (no normalization folded in).
inline void quat_to_mat_jacobian(const Quat& q, Mat3 dR[4]) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    dR[0] <<  0, -2 * z,  2 * y,
              2 * z,  0, -2 * x,
             -2 * y,  2 * x,  0;
    dR[1] <<  0,      2 * y,  2 * z,
              2 * y, -4 * x, -2 * w,
              2 * z,  2 * w, -4 * x;
    dR[2] << -4 * y,  2 * x,  2 * w,
              2 * x,  0,      2 * z,
             -2 * w,  2 * z, -4 * y;
    dR[3] << -4 * z, -2 * w,  2 * x,
              2 * w, -4 * z,  2 * y,
              2 * x,  2 * y,  0;
}

// Backprop through R(q): given dL/dR, return dL/dq (raw components).
inline Quat quat_rotation_grad(const Quat& q, const Mat3& dL_dR) {
    Mat3 dR[4];
    quat_to_mat_jacobian(q, dR);
    Quat g;
    for (int i = 0; i < 4; ++i) g[i] = (dL_dR.array() * dR[i].array()).sum();
    return g;
}

// Jacobian of q/|q| with respect to raw q: (I - n n^T) / |q|.
inline Eigen::Matrix4d quat_normalize_jacobian(const Quat& q_raw) {
    const double n = q_raw.norm();
    const Quat u = q_raw / n;
    return (Eigen::Matrix4d::Identity() - u * u.transpose()) / n;
}

inline Mat3 skew(const Vec3& v) {
    Mat3 m;
    m <<     0, -v[2],  v[1],
          v[2],     0, -v[0],
         -v[1],  v[0],     0;
    return m;
}

}  // namespace surfsplat

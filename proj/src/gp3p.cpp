#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "mcloc/solvers.hpp"

namespace mcloc {

namespace {

// Dense univariate polynomial, coefficient of x^i at [i], degree <= 8.
using Poly = std::array<double, 9>;

Poly poly_zero() { return Poly{}; }

Poly poly_const(double c) {
  Poly p{};
  p[0] = c;
  return p;
}

Poly poly_linear(double c0, double c1) {
  Poly p{};
  p[0] = c0;
  p[1] = c1;
  return p;
}

Poly operator+(const Poly& a, const Poly& b) {
  Poly r;
  for (int i = 0; i < 9; ++i) r[i] = a[i] + b[i];
  return r;
}

Poly operator-(const Poly& a, const Poly& b) {
  Poly r;
  for (int i = 0; i < 9; ++i) r[i] = a[i] - b[i];
  return r;
}

Poly operator*(const Poly& a, const Poly& b) {
  Poly r{};
  for (int i = 0; i < 9; ++i) {
    if (a[i] == 0.0) continue;
    for (int j = 0; j + i < 9; ++j) r[i + j] += a[i] * b[j];
  }
  return r;
}

Poly operator*(double s, const Poly& a) {
  Poly r;
  for (int i = 0; i < 9; ++i) r[i] = s * a[i];
  return r;
}

double poly_eval(const Poly& p, double x) {
  double acc = 0.0;
  for (int i = 8; i >= 0; --i) acc = acc * x + p[i];
  return acc;
}

std::vector<double> real_roots(const Poly& p) {
  double max_abs = 0.0;
  for (double c : p) max_abs = std::max(max_abs, std::abs(c));
  if (max_abs == 0.0) return {};

  int deg = 8;
  while (deg > 0 && std::abs(p[deg]) < 1e-12 * max_abs) --deg;
  if (deg == 0) return {};

  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
  for (int i = 0; i < deg; ++i) comp(0, i) = -p[deg - 1 - i] / p[deg];
  for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;

  Eigen::EigenSolver<Eigen::MatrixXd> es(comp, /*computeEigenvectors=*/false);
  std::vector<double> roots;
  for (int i = 0; i < deg; ++i) {
    const std::complex<double> z = es.eigenvalues()[i];
    if (std::abs(z.imag()) < 1e-6 * (1.0 + std::abs(z.real()))) roots.push_back(z.real());
  }
  return roots;
}

struct DepthSystem {
  // f_ij(li, lj) = li^2 + lj^2 - 2 dot_ij li lj
  //               + 2 (v_ij . d_i) li - 2 (v_ij . d_j) lj + (|v_ij|^2 - D_ij^2)
  double d12, d13, d23;          // direction dot products
  double v12d1, v12d2;           // v12 . d1, v12 . d2
  double v13d1, v13d3;
  double v23d2, v23d3;
  double k12, k13, k23;          // |v_ij|^2 - D_ij^2

  Vec3 f(const Vec3& l) const {
    return Vec3(
        l[0] * l[0] + l[1] * l[1] - 2 * d12 * l[0] * l[1] + 2 * v12d1 * l[0] -
            2 * v12d2 * l[1] + k12,
        l[0] * l[0] + l[2] * l[2] - 2 * d13 * l[0] * l[2] + 2 * v13d1 * l[0] -
            2 * v13d3 * l[2] + k13,
        l[1] * l[1] + l[2] * l[2] - 2 * d23 * l[1] * l[2] + 2 * v23d2 * l[1] -
            2 * v23d3 * l[2] + k23);
  }

  Mat3 jac(const Vec3& l) const {
    Mat3 J;
    J << 2 * l[0] - 2 * d12 * l[1] + 2 * v12d1, 2 * l[1] - 2 * d12 * l[0] - 2 * v12d2, 0.0,
        2 * l[0] - 2 * d13 * l[2] + 2 * v13d1, 0.0, 2 * l[2] - 2 * d13 * l[0] - 2 * v13d3,
        0.0, 2 * l[1] - 2 * d23 * l[2] + 2 * v23d2, 2 * l[2] - 2 * d23 * l[1] - 2 * v23d3;
    return J;
  }
};

// Exact rigid alignment of three point pairs (Kabsch).
Pose align_three(const std::array<Vec3, 3>& from, const std::array<Vec3, 3>& to) {
  const Vec3 cf = (from[0] + from[1] + from[2]) / 3.0;
  const Vec3 ct = (to[0] + to[1] + to[2]) / 3.0;
  Mat3 H = Mat3::Zero();
  for (int i = 0; i < 3; ++i) H += (from[i] - cf) * (to[i] - ct).transpose();
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixV() * svd.matrixU().transpose();
  if (R.determinant() < 0.0) {
    Mat3 V = svd.matrixV();
    V.col(2) *= -1.0;
    R = V * svd.matrixU().transpose();
  }
  return Pose(R, ct - R * cf);
}

}  // namespace

double ray_point_angle(const Pose& world_from_rig, const RayPoint& c) {
  const Vec3 dir_rig =
      world_from_rig.q.conjugate() * (c.point - world_from_rig.t) - c.origin;
  return angle_between(c.direction, dir_rig);
}

std::vector<Pose> gp3p_solve(const std::array<RayPoint, 3>& corrs) {
  const Vec3 p1 = corrs[0].point, p2 = corrs[1].point, p3 = corrs[2].point;
  const double area = 0.5 * (p2 - p1).cross(p3 - p1).norm();
  if (area <= 1e-10)
    throw DegenerateError("gp3p: world points are collinear");
  for (int i = 0; i < 3; ++i) {
    const double n = corrs[i].direction.norm();
    if (std::abs(n - 1.0) > 1e-6) throw DegenerateError("gp3p: ray direction not unit");
    for (int j = i + 1; j < 3; ++j) {
      if ((corrs[i].direction - corrs[j].direction).norm() < 1e-12 &&
          (corrs[i].origin - corrs[j].origin).norm() < 1e-12)
        throw DegenerateError("gp3p: duplicated rays");
    }
  }

  // Work at unit scale for conditioning of the octic.
  const double scale =
      ((p1 - p2).norm() + (p1 - p3).norm() + (p2 - p3).norm()) / 3.0;
  const double inv_s = 1.0 / scale;

  const Vec3 o1 = corrs[0].origin * inv_s, o2 = corrs[1].origin * inv_s,
             o3 = corrs[2].origin * inv_s;
  const Vec3 d1 = corrs[0].direction.normalized(), d2 = corrs[1].direction.normalized(),
             d3 = corrs[2].direction.normalized();
  const Vec3 v12 = o1 - o2, v13 = o1 - o3, v23 = o2 - o3;

  DepthSystem sys;
  sys.d12 = d1.dot(d2);
  sys.d13 = d1.dot(d3);
  sys.d23 = d2.dot(d3);
  sys.v12d1 = v12.dot(d1);
  sys.v12d2 = v12.dot(d2);
  sys.v13d1 = v13.dot(d1);
  sys.v13d3 = v13.dot(d3);
  sys.v23d2 = v23.dot(d2);
  sys.v23d3 = v23.dot(d3);
  sys.k12 = v12.squaredNorm() - (p1 - p2).squaredNorm() * inv_s * inv_s;
  sys.k13 = v13.squaredNorm() - (p1 - p3).squaredNorm() * inv_s * inv_s;
  sys.k23 = v23.squaredNorm() - (p2 - p3).squaredNorm() * inv_s * inv_s;

  // f12 as a monic quadratic in l2 with coefficients in l1, f13 likewise in
  // l3. Reducing f23 modulo both yields the bilinear form
  //   S l2 l3 + G l2 + H l3 + K = 0,
  // whose elimination against f13 gives a second quadratic in l2; the
  // resultant of the two quadratics in l2 is the octic in l1.
  const Poly B = poly_linear(-2.0 * sys.v12d2, -2.0 * sys.d12);
  Poly C = poly_zero();
  C[0] = sys.k12;
  C[1] = 2.0 * sys.v12d1;
  C[2] = 1.0;
  const Poly E = poly_linear(-2.0 * sys.v13d3, -2.0 * sys.d13);
  Poly F = poly_zero();
  F[0] = sys.k13;
  F[1] = 2.0 * sys.v13d1;
  F[2] = 1.0;

  const Poly S = poly_const(-2.0 * sys.d23);
  const Poly G = poly_const(2.0 * sys.v23d2) - B;
  const Poly H = poly_const(-2.0 * sys.v23d3) - E;
  const Poly K = poly_const(sys.k23) - C - F;

  const Poly a = G * G - E * (G * S) + F * (S * S);
  const Poly b = 2.0 * (G * K) - E * (G * H + K * S) + 2.0 * (F * (S * H));
  const Poly c = K * K - E * (K * H) + F * (H * H);

  const Poly t1 = c - C * a;
  const Poly octic = t1 * t1 - (b - B * a) * (B * c - C * b);

  std::vector<Pose> solutions;
  for (double l1 : real_roots(octic)) {
    // Recover l2 from the shared root of f12 and the eliminated quadratic,
    // with the two-root fallback when the linear formula degenerates.
    const double Bv = poly_eval(B, l1), Cv = poly_eval(C, l1);
    const double av = poly_eval(a, l1), bv = poly_eval(b, l1), cv = poly_eval(c, l1);
    const double Ev = poly_eval(E, l1), Fv = poly_eval(F, l1);
    const double Sv = poly_eval(S, l1), Gv = poly_eval(G, l1), Hv = poly_eval(H, l1),
                 Kv = poly_eval(K, l1);

    std::vector<double> l2_candidates;
    const double denom2 = bv - av * Bv;
    if (std::abs(denom2) > 1e-9 * (std::abs(bv) + std::abs(av * Bv) + 1e-300)) {
      l2_candidates.push_back((av * Cv - cv) / denom2);
    } else {
      const double disc = Bv * Bv - 4.0 * Cv;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        l2_candidates.push_back(0.5 * (-Bv + sq));
        l2_candidates.push_back(0.5 * (-Bv - sq));
      }
    }

    for (double l2 : l2_candidates) {
      std::vector<double> l3_candidates;
      const double denom3 = Sv * l2 + Hv;
      if (std::abs(denom3) > 1e-9) {
        l3_candidates.push_back(-(Gv * l2 + Kv) / denom3);
      } else {
        const double disc = Ev * Ev - 4.0 * Fv;
        if (disc >= 0.0) {
          const double sq = std::sqrt(disc);
          l3_candidates.push_back(0.5 * (-Ev + sq));
          l3_candidates.push_back(0.5 * (-Ev - sq));
        }
      }

      for (double l3 : l3_candidates) {
        Vec3 depths(l1, l2, l3);
        // Newton polish on the three distance constraints.
        bool ok = false;
        for (int it = 0; it < 20; ++it) {
          const Vec3 r = sys.f(depths);
          if (r.norm() < 1e-13) {
            ok = true;
            break;
          }
          const Mat3 J = sys.jac(depths);
          const Vec3 step = J.fullPivLu().solve(r);
          if (!step.allFinite()) break;
          depths -= step;
          if (step.norm() > 1e4) break;  // diverging
        }
        if (!ok && sys.f(depths).norm() > 1e-10) continue;

        const std::array<Vec3, 3> rig_pts = {o1 + depths[0] * d1, o2 + depths[1] * d2,
                                             o3 + depths[2] * d3};
        std::array<Vec3, 3> rig_pts_m, world_pts;
        for (int i = 0; i < 3; ++i) {
          rig_pts_m[i] = rig_pts[i] * scale;
          world_pts[i] = corrs[i].point;
        }
        const Pose pose = align_three(rig_pts_m, world_pts);

        double max_angle = 0.0;
        for (const auto& corr : corrs)
          max_angle = std::max(max_angle, ray_point_angle(pose, corr));
        if (max_angle >= 1e-9) continue;

        bool duplicate = false;
        for (const Pose& s : solutions) {
          if (s.translation_distance_to(pose) < 1e-6 &&
              s.rotation_angle_to(pose) < 1e-8) {
            duplicate = true;
            break;
          }
        }
        if (!duplicate) solutions.push_back(pose);
      }
    }
  }
  return solutions;
}

}  // namespace mcloc

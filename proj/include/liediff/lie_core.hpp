#pragma once

#include "liediff/core.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace liediff {

enum class GroupId { TranslationN, SO2Dilation, SO3Dilation, SO4Dilation, SONDilation, Torsion, BondAngle, GlobalSE3 };
enum class RadiusConvention { log_radius, raw_radius };
enum class PivotVariant { origin_pivot, centered };
enum class CoordDomain { unbounded, angular };

inline const char* to_string(GroupId id) {
  switch (id) {
    case GroupId::TranslationN: return "TranslationN";
    case GroupId::SO2Dilation: return "SO2Dilation";
    case GroupId::SO3Dilation: return "SO3Dilation";
    case GroupId::SO4Dilation: return "SO4Dilation";
    case GroupId::SONDilation: return "SONDilation";
    case GroupId::Torsion: return "Torsion";
    case GroupId::BondAngle: return "BondAngle";
    case GroupId::GlobalSE3: return "GlobalSE3";
  }
  return "?";
}

inline std::optional<GroupId> parse_group_id(const std::string& s) {
  for (auto id : {GroupId::TranslationN, GroupId::SO2Dilation, GroupId::SO3Dilation, GroupId::SO4Dilation,
                  GroupId::SONDilation, GroupId::Torsion, GroupId::BondAngle, GroupId::GlobalSE3})
    if (s == to_string(id)) return id;
  return std::nullopt;
}

struct FlowCoords {
  Vec values;
  std::vector<CoordDomain> domains;
  Eigen::Index size() const { return values.size(); }
};

// ---------------------------------------------------------------- geometry

inline Mat3 cross_matrix(const Vec3& a) {
  Mat3 m;
  m << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return m;
}

inline Vec3 rotate_about(const Vec3& unit_axis, double angle, const Vec3& v) {
  return v * std::cos(angle) + unit_axis.cross(v) * std::sin(angle) +
         unit_axis * unit_axis.dot(v) * (1.0 - std::cos(angle));
}

inline Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }
inline Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }

inline Vec3 point(const Vec& x, Eigen::Index j) { return x.segment<3>(3 * j); }

inline Vec flatten_points(const Mat& positions) {
  require(positions.cols() == 3, ErrorKind::InvalidParams, "positions must be N x 3");
  Vec x(positions.size());
  for (Eigen::Index j = 0; j < positions.rows(); ++j) x.segment<3>(3 * j) = positions.row(j).transpose();
  return x;
}

inline Mat unflatten_points(const Vec& x) {
  Mat p(x.size() / 3, 3);
  for (Eigen::Index j = 0; j < p.rows(); ++j) p.row(j) = x.segment<3>(3 * j).transpose();
  return p;
}

// signed dihedral over p0-p1-p2-p3; right-handed rotation of p3 about (p2 - p1) increases it
inline double dihedral(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3) {
  const Vec3 b0 = p1 - p0, b1 = p2 - p1, b2 = p3 - p2;
  const Vec3 n1 = b0.cross(b1), n2 = b1.cross(b2);
  return std::atan2(b1.norm() * b0.dot(n2), n1.dot(n2));
}

inline double bond_angle(const Vec3& prev, const Vec3& vertex, const Vec3& next) {
  const Vec3 a = prev - vertex, b = next - vertex;
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

// ---------------------------------------------------------------- structured operators

// 3x3-block operator on R^{3N}: (A x)_j = axis x (x_j - x_pivot) for j >= gate, zero otherwise.
// pivot < 0 means rotation about the origin.
class StructuredOperator {
 public:
  StructuredOperator(Eigen::Index n_points, Eigen::Index gate, Vec3 axis, Eigen::Index pivot)
      : n_points_(n_points), gate_(gate), axis_(axis), pivot_(pivot) {}

  Eigen::Index n_points() const { return n_points_; }
  Eigen::Index gate() const { return gate_; }
  Eigen::Index pivot() const { return pivot_; }
  const Vec3& axis() const { return axis_; }

  Vec apply(const Vec& x) const {
    Vec out = Vec::Zero(x.size());
    const Vec3 c = pivot_ >= 0 ? point(x, pivot_) : Vec3::Zero();
    for (Eigen::Index j = gate_; j < n_points_; ++j) out.segment<3>(3 * j) = axis_.cross(point(x, j) - c);
    return out;
  }

  // exact flow exp(tau A) x; the axis may be unnormalized, in which case the angle scales with its norm
  Vec flow(double tau, const Vec& x) const {
    Vec out = x;
    const double len = axis_.norm();
    if (len == 0.0) return out;
    const Vec3 u = axis_ / len;
    const Vec3 c = pivot_ >= 0 ? point(x, pivot_) : Vec3::Zero();
    for (Eigen::Index j = gate_; j < n_points_; ++j)
      out.segment<3>(3 * j) = c + rotate_about(u, tau * len, point(x, j) - c);
    return out;
  }

  Mat dense() const {
    require(n_points_ <= 64, ErrorKind::TooLarge, "dense materialization is limited to N <= 64");
    Mat m = Mat::Zero(3 * n_points_, 3 * n_points_);
    const Mat3 k = cross_matrix(axis_);
    for (Eigen::Index j = gate_; j < n_points_; ++j) {
      m.block<3, 3>(3 * j, 3 * j) += k;
      if (pivot_ >= 0) m.block<3, 3>(3 * j, 3 * pivot_) -= k;
    }
    return m;
  }

 private:
  Eigen::Index n_points_, gate_;
  Vec3 axis_;
  Eigen::Index pivot_;
};

inline StructuredOperator torsion_operator(const Mat& positions, Eigen::Index i, PivotVariant variant) {
  const Eigen::Index n = positions.rows();
  require(i >= 1 && i <= n - 3, ErrorKind::InvalidParams,
          "torsion bond index " + std::to_string(i) + " outside [1, N-3]");
  const Vec3 bond = (positions.row(i + 1) - positions.row(i)).transpose();
  require(bond.norm() > kSingularEps, ErrorKind::DegenerateBond,
          "points " + std::to_string(i) + " and " + std::to_string(i + 1) + " coincide");
  return StructuredOperator(n, i + 2, bond.normalized(), variant == PivotVariant::centered ? i + 1 : -1);
}

inline StructuredOperator bond_angle_operator(const Mat& positions, Eigen::Index i, PivotVariant variant,
                                              bool normalized_axis = true) {
  const Eigen::Index n = positions.rows();
  require(i >= 1 && i <= n - 2, ErrorKind::InvalidParams,
          "bond-angle vertex " + std::to_string(i) + " outside [1, N-2]");
  const Vec3 next = (positions.row(i + 1) - positions.row(i)).transpose();
  const Vec3 prev = (positions.row(i - 1) - positions.row(i)).transpose();
  const Vec3 c = next.cross(prev);
  require(c.norm() > kSingularEps, ErrorKind::DegenerateAngle,
          "bonds at vertex " + std::to_string(i) + " are parallel");
  // next x prev closes the angle; the flipped unit axis opens it at unit rate
  const Vec3 axis = normalized_axis ? Vec3(-c.normalized()) : c;
  return StructuredOperator(n, i + 1, axis, variant == PivotVariant::centered ? i : -1);
}

// ---------------------------------------------------------------- group implementations

namespace groups {

struct Translation {
  int n;
  int dim_x() const { return n; }
  int dim_g() const { return n; }
  Mat field(const Vec&) const { return Mat::Identity(n, n); }
  Vec casimir(const Vec&) const { return Vec::Zero(n); }
  std::optional<Vec> divergence(const Vec&) const { return Vec::Zero(n); }
  Vec to_flow(const Vec& x) const { return x; }
  Vec from_flow(const Vec& t) const { return t; }
  Vec flow(int i, double s, const Vec& x) const {
    Vec y = x;
    y[i] += s;
    return y;
  }
  std::optional<Mat> generator(int, const Vec&) const { return std::nullopt; }
  double singular_margin(const Vec&) const { return std::numeric_limits<double>::infinity(); }
  void check(const Vec&) const {}
  std::vector<CoordDomain> domains() const { return std::vector<CoordDomain>(n, CoordDomain::unbounded); }
  Vec reference() const { return Vec::Zero(n); }
};

struct PlanarDilation {
  int dim_x() const { return 2; }
  int dim_g() const { return 2; }
  Mat field(const Vec& x) const {
    Mat m(2, 2);
    m << x[0], -x[1], x[1], x[0];
    return m;
  }
  Vec casimir(const Vec&) const { return Vec::Zero(2); }
  std::optional<Vec> divergence(const Vec&) const { return Vec{{2.0, 0.0}}; }
  Vec to_flow(const Vec& x) const { return Vec{{std::log(x.norm()), std::atan2(x[1], x[0])}}; }
  Vec from_flow(const Vec& t) const {
    return std::exp(t[0]) * Vec{{std::cos(t[1]), std::sin(t[1])}};
  }
  Vec flow(int i, double s, const Vec& x) const {
    if (i == 0) return std::exp(s) * x;
    const double c = std::cos(s), sn = std::sin(s);
    return Vec{{c * x[0] - sn * x[1], sn * x[0] + c * x[1]}};
  }
  std::optional<Mat> generator(int i, const Vec&) const {
    Mat a(2, 2);
    if (i == 0)
      a.setIdentity();
    else
      a << 0, -1, 1, 0;
    return a;
  }
  double singular_margin(const Vec& x) const { return x.norm(); }
  void check(const Vec& x) const {
    require(x.norm() >= kSingularEps, ErrorKind::SingularPoint, "SO2Dilation: point at the origin");
  }
  std::vector<CoordDomain> domains() const { return {CoordDomain::unbounded, CoordDomain::angular}; }
  Vec reference() const { return Vec{{1.0, 0.0}}; }
};

// coordinates (r, polar, azimuth); the polar generator rotates about (-sin az, cos az, 0)
struct SphericalDilation {
  int dim_x() const { return 3; }
  int dim_g() const { return 3; }

  static Vec3 polar_axis(const Vec& x) {
    const double az = std::atan2(x[1], x[0]);
    return {-std::sin(az), std::cos(az), 0.0};
  }
  Mat field(const Vec& x) const {
    const double rho = std::hypot(x[0], x[1]);
    Mat m(3, 3);
    m.col(0) = x;
    m.col(1) = Vec{{x[2] * x[0] / rho, x[2] * x[1] / rho, -rho}};
    m.col(2) = Vec{{-x[1], x[0], 0.0}};
    return m;
  }
  Vec casimir(const Vec& x) const { return Vec{{-x[0], -x[1], 0.0}}; }
  std::optional<Vec> divergence(const Vec& x) const {
    return Vec{{3.0, x[2] / std::hypot(x[0], x[1]), 0.0}};
  }
  Vec to_flow(const Vec& x) const {
    return Vec{{std::log(x.norm()), std::atan2(std::hypot(x[0], x[1]), x[2]), std::atan2(x[1], x[0])}};
  }
  Vec from_flow(const Vec& t) const {
    const double r = std::exp(t[0]);
    return Vec{{r * std::sin(t[1]) * std::cos(t[2]), r * std::sin(t[1]) * std::sin(t[2]), r * std::cos(t[1])}};
  }
  Vec flow(int i, double s, const Vec& x) const {
    if (i == 0) return std::exp(s) * x;
    const Vec3 axis = i == 1 ? polar_axis(x) : Vec3::UnitZ();
    return rotate_about(axis, s, Vec3(x));
  }
  std::optional<Mat> generator(int i, const Vec& x) const {
    if (i == 0) return Mat(Mat::Identity(3, 3));
    return Mat(cross_matrix(i == 1 ? polar_axis(x) : Vec3::UnitZ()));
  }
  double singular_margin(const Vec& x) const { return std::min(x.norm(), std::hypot(x[0], x[1])); }
  void check(const Vec& x) const {
    require(x.norm() >= kSingularEps, ErrorKind::SingularPoint, "SO3Dilation: point at the origin");
    require(std::hypot(x[0], x[1]) >= kSingularEps, ErrorKind::SingularPoint,
            "SO3Dilation: point on the z-axis, azimuth undefined");
  }
  std::vector<CoordDomain> domains() const {
    return {CoordDomain::unbounded, CoordDomain::angular, CoordDomain::angular};
  }
  Vec reference() const { return Vec{{0.0, 0.0, 1.0}}; }
};

// hyperspherical chart x_1 = e^r cos a_1, ..., x_n = e^r sin a_1 ... sin a_{n-1}
struct Hyperspherical {
  int n;
  int dim_x() const { return n; }
  int dim_g() const { return n; }

  // norm of the trailing block x[k+1..n)
  double tail_norm(const Vec& x, int k) const { return x.tail(n - k - 1).norm(); }

  // A x for angular generator k (0-based angle index)
  Vec angular_column(const Vec& x, int k) const {
    Vec c = Vec::Zero(n);
    if (k == n - 2) {
      c[n - 2] = -x[n - 1];
      c[n - 1] = x[n - 2];
      return c;
    }
    const double rho = tail_norm(x, k);
    c.tail(n - k - 1) = x[k] * x.tail(n - k - 1) / rho;
    c[k] = -rho;
    return c;
  }
  Mat field(const Vec& x) const {
    Mat m(n, n);
    m.col(0) = x;
    for (int k = 0; k < n - 1; ++k) m.col(k + 1) = angular_column(x, k);
    return m;
  }
  Vec casimir(const Vec& x) const {
    Vec acc = x;
    for (int k = 0; k < n - 1; ++k) acc += *generator(k + 1, x) * angular_column(x, k);
    return acc;
  }
  std::optional<Vec> divergence(const Vec&) const { return std::nullopt; }
  Vec to_flow(const Vec& x) const {
    Vec t(n);
    t[0] = std::log(x.norm());
    for (int k = 0; k < n - 2; ++k) t[k + 1] = std::atan2(tail_norm(x, k), x[k]);
    t[n - 1] = std::atan2(x[n - 1], x[n - 2]);
    return t;
  }
  Vec from_flow(const Vec& t) const {
    Vec x(n);
    double s = std::exp(t[0]);
    for (int k = 0; k < n - 1; ++k) {
      x[k] = s * std::cos(t[k + 1]);
      s *= std::sin(t[k + 1]);
    }
    x[n - 1] = s;
    return x;
  }
  Vec flow(int i, double s, const Vec& x) const {
    if (i == 0) return std::exp(s) * x;
    const Vec ax = angular_column(x, i - 1);
    const Vec aax = *generator(i, x) * ax;
    return x + std::sin(s) * ax + (1.0 - std::cos(s)) * aax;
  }
  std::optional<Mat> generator(int i, const Vec& x) const {
    if (i == 0) return Mat(Mat::Identity(n, n));
    const int k = i - 1;
    Mat a = Mat::Zero(n, n);
    if (k == n - 2) {
      a(n - 2, n - 1) = -1.0;
      a(n - 1, n - 2) = 1.0;
      return a;
    }
    Vec u = Vec::Zero(n);
    u.tail(n - k - 1) = x.tail(n - k - 1) / tail_norm(x, k);
    a.col(k) += u;
    a.row(k) -= u.transpose();
    return a;
  }
  double singular_margin(const Vec& x) const {
    double m = x.norm();
    for (int k = 0; k < n - 2; ++k) m = std::min(m, tail_norm(x, k));
    return m;
  }
  void check(const Vec& x) const {
    require(x.norm() >= kSingularEps, ErrorKind::SingularPoint, "SONDilation: point at the origin");
    for (int k = 0; k < n - 2; ++k)
      require(tail_norm(x, k) >= kSingularEps, ErrorKind::SingularPoint,
              "SONDilation: hyperspherical angle " + std::to_string(k + 1) + " undefined");
  }
  std::vector<CoordDomain> domains() const {
    std::vector<CoordDomain> d(n, CoordDomain::angular);
    d[0] = CoordDomain::unbounded;
    return d;
  }
  Vec reference() const {
    Vec r = Vec::Zero(n);
    r[0] = 1.0;
    return r;
  }
};

// all torsions (or all bond angles) of a chain, each rotating the tail of the chain
struct ChainInternal {
  bool torsion;
  Mat reference_positions;
  PivotVariant variant;
  bool normalized_axis;

  Eigen::Index n_points() const { return reference_positions.rows(); }
  int dim_x() const { return static_cast<int>(3 * n_points()); }
  int dim_g() const { return static_cast<int>(torsion ? n_points() - 3 : n_points() - 2); }

  StructuredOperator op(int i, const Vec& x) const {
    const Mat p = unflatten_points(x);
    return torsion ? torsion_operator(p, i + 1, variant) : bond_angle_operator(p, i + 1, variant, normalized_axis);
  }
  Mat field(const Vec& x) const {
    Mat m(dim_x(), dim_g());
    for (int i = 0; i < dim_g(); ++i) m.col(i) = op(i, x).apply(x);
    return m;
  }
  Vec casimir(const Vec& x) const {
    Vec acc = Vec::Zero(dim_x());
    for (int i = 0; i < dim_g(); ++i) {
      const auto a = op(i, x);
      // frozen operator: the pivot point is itself fixed, so the square acts on the same offsets
      StructuredOperator linear(a.n_points(), a.gate(), a.axis(), -1);
      acc += linear.apply(a.apply(x));
    }
    return acc;
  }
  std::optional<Vec> divergence(const Vec&) const { return std::nullopt; }
  Vec internal(const Vec& x) const {
    Vec v(dim_g());
    for (int i = 0; i < dim_g(); ++i) {
      const int k = i + 1;
      v[i] = torsion ? dihedral(point(x, k - 1), point(x, k), point(x, k + 1), point(x, k + 2))
                     : bond_angle(point(x, k - 1), point(x, k), point(x, k + 1));
    }
    return v;
  }
  Vec to_flow(const Vec& x) const {
    Vec d = internal(x) - internal(flatten_points(reference_positions));
    if (torsion)
      for (auto& v : d) v = wrap_angle(v);
    return d;
  }
  Vec from_flow(const Vec& t) const {
    Vec x = flatten_points(reference_positions);
    for (int i = 0; i < dim_g(); ++i) x = flow(i, t[i], x);
    return x;
  }
  Vec flow(int i, double s, const Vec& x) const { return op(i, x).flow(s, x); }
  std::optional<Mat> generator(int, const Vec&) const { return std::nullopt; }
  double singular_margin(const Vec& x) const {
    double m = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j + 1 < n_points(); ++j) m = std::min(m, (point(x, j + 1) - point(x, j)).norm());
    if (!torsion)
      for (Eigen::Index j = 1; j + 1 < n_points(); ++j)
        m = std::min(m, (point(x, j + 1) - point(x, j)).cross(point(x, j - 1) - point(x, j)).norm());
    return m;
  }
  void check(const Vec& x) const {
    for (int i = 0; i < dim_g(); ++i) (void)op(i, x);
  }
  std::vector<CoordDomain> domains() const {
    return std::vector<CoordDomain>(dim_g(), torsion ? CoordDomain::angular : CoordDomain::unbounded);
  }
  Vec reference() const { return flatten_points(reference_positions); }
};

// rigid motions of a point cloud about its center of mass; chart X = Rz(a1) Ry(b1) Rz(a2) X_hat + c
struct RigidBody {
  Mat canonical;  // N x 3, centered, first point on +z, second in the xz half-plane x > 0

  Eigen::Index n_points() const { return canonical.rows(); }
  int dim_x() const { return static_cast<int>(3 * n_points()); }
  int dim_g() const { return 6; }

  static Vec3 center(const Vec& x) {
    Vec3 c = Vec3::Zero();
    const Eigen::Index n = x.size() / 3;
    for (Eigen::Index j = 0; j < n; ++j) c += point(x, j);
    return c / static_cast<double>(n);
  }

  struct Angles {
    double az1, polar1, az2;
  };

  static Angles angles(const Vec& x) {
    const Vec3 c = center(x);
    const Vec3 p1 = point(x, 0) - c;
    require(p1.norm() >= kSingularEps, ErrorKind::GimbalDegeneracy, "point 0 coincides with the center of mass");
    // on the polar axis the first azimuth is undefined; 0 by convention, so a canonical cloud reads as all zeros
    const bool on_axis = std::hypot(p1.x(), p1.y()) < kSingularEps;
    const double az1 = on_axis ? 0.0 : std::atan2(p1.y(), p1.x());
    const double polar1 = std::acos(std::clamp(p1.z() / p1.norm(), -1.0, 1.0));
    const Vec3 p2 = rot_y(-polar1) * rot_z(-az1) * (point(x, 1) - c);
    require(std::hypot(p2.x(), p2.y()) >= kSingularEps, ErrorKind::GimbalDegeneracy,
            "point 1 lies on the axis through point 0");
    return {az1, polar1, std::atan2(p2.y(), p2.x())};
  }

  static Mat canonicalize(const Mat& positions) {
    const Vec x = flatten_points(positions);
    const Angles a = angles(x);
    const Vec3 c = center(x);
    const Mat3 r = rot_z(a.az1) * rot_y(a.polar1) * rot_z(a.az2);
    Mat out(positions.rows(), 3);
    for (Eigen::Index j = 0; j < positions.rows(); ++j) out.row(j) = (r.transpose() * (point(x, j) - c)).transpose();
    return out;
  }

  std::array<Mat3, 3> rotation_generators(const Vec& x) const {
    const Angles a = angles(x);
    const Vec3 n{std::sin(a.polar1) * std::cos(a.az1), std::sin(a.polar1) * std::sin(a.az1), std::cos(a.polar1)};
    return {cross_matrix(Vec3::UnitZ()), cross_matrix(Vec3(-std::sin(a.az1), std::cos(a.az1), 0.0)),
            cross_matrix(n)};
  }

  Mat field(const Vec& x) const {
    const auto gens = rotation_generators(x);
    const Vec3 c = center(x);
    Mat m = Mat::Zero(dim_x(), 6);
    for (Eigen::Index j = 0; j < n_points(); ++j) {
      for (int k = 0; k < 3; ++k) m.block<3, 1>(3 * j, k) = gens[k] * (point(x, j) - c);
      m.block<3, 3>(3 * j, 3).setIdentity();
    }
    return m;
  }
  Vec casimir(const Vec& x) const {
    const auto gens = rotation_generators(x);
    const Vec3 c = center(x);
    Vec out(dim_x());
    for (Eigen::Index j = 0; j < n_points(); ++j) {
      Vec3 acc = Vec3::Zero();
      for (const auto& g : gens) acc += g * (g * (point(x, j) - c));
      out.segment<3>(3 * j) = acc;
    }
    return out;
  }
  std::optional<Vec> divergence(const Vec&) const { return std::nullopt; }
  Vec to_flow(const Vec& x) const {
    const Angles a = angles(x);
    const Vec3 c = center(x);
    return Vec{{a.az1, a.polar1, a.az2, c.x(), c.y(), c.z()}};
  }
  Vec from_flow(const Vec& t) const {
    const Mat3 r = rot_z(t[0]) * rot_y(t[1]) * rot_z(t[2]);
    const Vec3 c{t[3], t[4], t[5]};
    Vec x(dim_x());
    for (Eigen::Index j = 0; j < n_points(); ++j) x.segment<3>(3 * j) = r * canonical.row(j).transpose() + c;
    return x;
  }
  Vec flow(int i, double s, const Vec& x) const {
    Vec y = x;
    if (i >= 3) {
      for (Eigen::Index j = 0; j < n_points(); ++j) y[3 * j + (i - 3)] += s;
      return y;
    }
    const Angles a = angles(x);
    Vec3 axis = Vec3::UnitZ();
    if (i == 1) axis = {-std::sin(a.az1), std::cos(a.az1), 0.0};
    if (i == 2) axis = {std::sin(a.polar1) * std::cos(a.az1), std::sin(a.polar1) * std::sin(a.az1), std::cos(a.polar1)};
    const Vec3 c = center(x);
    for (Eigen::Index j = 0; j < n_points(); ++j) y.segment<3>(3 * j) = c + rotate_about(axis, s, point(x, j) - c);
    return y;
  }
  std::optional<Mat> generator(int, const Vec&) const { return std::nullopt; }
  double singular_margin(const Vec& x) const {
    const Vec3 c = center(x);
    const Vec3 p1 = point(x, 0) - c;
    const double m1 = std::hypot(p1.x(), p1.y());
    if (m1 < kSingularEps) return m1;
    const double az1 = std::atan2(p1.y(), p1.x());
    const double polar1 = std::acos(std::clamp(p1.z() / p1.norm(), -1.0, 1.0));
    const Vec3 p2 = rot_y(-polar1) * rot_z(-az1) * (point(x, 1) - c);
    return std::min(m1, std::hypot(p2.x(), p2.y()));
  }
  // the two azimuthal generators coincide on the polar axis
  void check(const Vec& x) const {
    const Vec3 p1 = point(x, 0) - center(x);
    require(std::hypot(p1.x(), p1.y()) >= kSingularEps, ErrorKind::GimbalDegeneracy,
            "point 0 lies on the z-axis of the centered frame");
    (void)angles(x);
  }
  std::vector<CoordDomain> domains() const {
    return {CoordDomain::angular, CoordDomain::angular, CoordDomain::angular,
            CoordDomain::unbounded, CoordDomain::unbounded, CoordDomain::unbounded};
  }
  Vec reference() const { return flatten_points(canonical); }
};

using Any = std::variant<Translation, PlanarDilation, SphericalDilation, Hyperspherical, ChainInternal, RigidBody>;

}  // namespace groups

struct GroupParams {
  int n = 2;                       // ambient dimension (TranslationN, SONDilation) or point count (GlobalSE3)
  Mat chain;                       // reference positions for Torsion / BondAngle, N x 3
  Mat reference_cloud;             // optional GlobalSE3 shape, N x 3
  PivotVariant variant = PivotVariant::centered;
  bool normalized_axis = true;
  RadiusConvention radius = RadiusConvention::log_radius;
};

// default rigid shape for GlobalSE3 when none is supplied
inline Mat default_cloud(int n) {
  Mat p(n, 3);
  for (int j = 0; j < n; ++j)
    p.row(j) << std::cos(1.3 * j + 0.2) + 0.1 * j, std::sin(0.7 * j + 0.5), 0.4 * j - 0.3 * std::cos(2.1 * j);
  return p;
}

class GroupAction {
  template <class F>
  decltype(auto) visit(F&& f) const {
    return std::visit(std::forward<F>(f), impl_);
  }

 public:
  GroupAction(GroupId id, groups::Any impl, RadiusConvention radius)
      : id_(id), impl_(std::move(impl)), radius_(radius) {}

  GroupId id() const { return id_; }
  RadiusConvention radius_convention() const { return radius_; }
  int dim_x() const { return visit([](const auto& g) { return g.dim_x(); }); }
  int dim_g() const { return visit([](const auto& g) { return g.dim_g(); }); }
  bool constrained() const {
    return id_ == GroupId::Torsion || id_ == GroupId::BondAngle || id_ == GroupId::GlobalSE3;
  }
  bool has_radial() const {
    return id_ == GroupId::SO2Dilation || id_ == GroupId::SO3Dilation || id_ == GroupId::SO4Dilation ||
           id_ == GroupId::SONDilation;
  }
  std::string name() const {
    std::string s = to_string(id_);
    if (id_ == GroupId::TranslationN || id_ == GroupId::SONDilation || id_ == GroupId::GlobalSE3 ||
        id_ == GroupId::Torsion || id_ == GroupId::BondAngle)
      s += "(" + std::to_string(param_count()) + ")";
    return s;
  }
  int param_count() const {
    if (id_ == GroupId::GlobalSE3 || id_ == GroupId::Torsion || id_ == GroupId::BondAngle) return dim_x() / 3;
    return dim_x();
  }
  std::vector<CoordDomain> domains() const { return visit([](const auto& g) { return g.domains(); }); }
  Vec reference_point() const { return visit([](const auto& g) { return g.reference(); }); }
  const groups::Any& impl() const { return impl_; }

  void check_point(const Vec& x) const {
    require(x.size() == dim_x(), ErrorKind::SizeMismatch,
            "state has " + std::to_string(x.size()) + " entries, group expects " + std::to_string(dim_x()));
    visit([&](const auto& g) { g.check(x); });
  }
  double singular_margin(const Vec& x) const { return visit([&](const auto& g) { return g.singular_margin(x); }); }

  Mat fundamental_matrix(const Vec& x) const {
    check_point(x);
    return visit([&](const auto& g) { return g.field(x); });
  }
  Vec casimir_field(const Vec& x) const {
    check_point(x);
    return visit([&](const auto& g) { return g.casimir(x); });
  }
  std::optional<Vec> closed_form_divergence(const Vec& x) const {
    check_point(x);
    return visit([&](const auto& g) { return g.divergence(x); });
  }
  Vec fd_divergence(const Vec& x) const {
    const double h = 1e-6 * (1.0 + x.norm());
    Vec d = Vec::Zero(dim_g());
    for (int k = 0; k < dim_x(); ++k) {
      Vec xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      d += (fundamental_matrix(xp).row(k) - fundamental_matrix(xm).row(k)).transpose() / (2.0 * h);
    }
    return d;
  }
  // per-generator scalars div(A_i x)
  Vec divergence_scalars(const Vec& x) const {
    if (auto d = closed_form_divergence(x)) return *d;
    return fd_divergence(x);
  }
  Vec divergence_field(const Vec& x) const { return fundamental_matrix(x) * divergence_scalars(x); }

  // native coordinates: log-radius always; the convention only changes the exported radial value
  Vec to_flow(const Vec& x) const {
    require(x.size() == dim_x(), ErrorKind::SizeMismatch, "state length mismatch");
    if (id_ != GroupId::GlobalSE3) check_point(x);
    return visit([&](const auto& g) { return g.to_flow(x); });
  }
  Vec from_flow(const Vec& tau) const {
    require(tau.size() == dim_g(), ErrorKind::SizeMismatch, "flow coordinate length mismatch");
    return visit([&](const auto& g) { return g.from_flow(tau); });
  }
  FlowCoords to_flow_coords(const Vec& x) const {
    Vec t = to_flow(x);
    if (has_radial() && radius_ == RadiusConvention::raw_radius) t[0] = std::exp(t[0]);
    return {t, domains()};
  }
  Vec from_flow_coords(const FlowCoords& tau) const {
    Vec t = tau.values;
    if (has_radial() && radius_ == RadiusConvention::raw_radius) t[0] = std::log(t[0]);
    return from_flow(t);
  }

  // exact one-parameter flow of generator i started at x
  Vec flow(int i, double s, const Vec& x) const {
    check_point(x);
    return visit([&](const auto& g) { return g.flow(i, s, x); });
  }
  // applies the generators in sequence, each evaluated at the point it acts on
  Vec group_exp_apply(const Vec& tau, const Vec& x) const {
    require(tau.size() == dim_g(), ErrorKind::SizeMismatch, "flow coordinate length mismatch");
    Vec y = x;
    for (int i = 0; i < dim_g(); ++i)
      if (tau[i] != 0.0) y = flow(i, tau[i], y);
    return y;
  }
  std::optional<Mat> generator_matrix(int i, const Vec& x) const {
    return visit([&](const auto& g) { return g.generator(i, x); });
  }

 private:
  GroupId id_;
  groups::Any impl_;
  RadiusConvention radius_;
};

inline GroupAction make_group(GroupId id, const GroupParams& p = {}) {
  using namespace groups;
  switch (id) {
    case GroupId::TranslationN:
      require(p.n >= 1, ErrorKind::InvalidParams, "TranslationN needs n >= 1");
      return {id, Translation{p.n}, p.radius};
    case GroupId::SO2Dilation: return {id, PlanarDilation{}, p.radius};
    case GroupId::SO3Dilation: return {id, SphericalDilation{}, p.radius};
    case GroupId::SO4Dilation: return {id, Hyperspherical{4}, p.radius};
    case GroupId::SONDilation:
      require(p.n >= 4, ErrorKind::InvalidParams, "SONDilation needs n >= 4, got " + std::to_string(p.n));
      return {id, Hyperspherical{p.n}, p.radius};
    case GroupId::Torsion:
    case GroupId::BondAngle: {
      const bool torsion = id == GroupId::Torsion;
      require(p.chain.cols() == 3, ErrorKind::InvalidParams, "chain must be N x 3");
      require(p.chain.rows() >= (torsion ? 4 : 3), ErrorKind::InvalidParams,
              torsion ? "Torsion needs a chain of length >= 4" : "BondAngle needs a chain of length >= 3");
      ChainInternal g{torsion, p.chain, p.variant, p.normalized_axis};
      g.check(flatten_points(p.chain));
      return {id, g, p.radius};
    }
    case GroupId::GlobalSE3: {
      const Mat cloud = p.reference_cloud.size() ? p.reference_cloud : default_cloud(p.n);
      require(cloud.rows() >= 2 && cloud.cols() == 3, ErrorKind::InvalidParams, "GlobalSE3 needs N >= 2 points");
      return {id, RigidBody{RigidBody::canonicalize(cloud)}, p.radius};
    }
  }
  fail(ErrorKind::InvalidParams, "unknown group");
}

inline GroupAction global_se3_group(int n_points) {
  GroupParams p;
  p.n = n_points;
  return make_group(GroupId::GlobalSE3, p);
}

inline FlowCoords angles_from_positions(const GroupAction& g, const Mat& positions) {
  require(g.id() == GroupId::GlobalSE3, ErrorKind::InvalidParams, "angles_from_positions needs a GlobalSE3 group");
  return g.to_flow_coords(flatten_points(positions));
}

// Equivalent flow coordinates describing the same point, with the sign pattern
// mapping a gradient in the image back to the principal chart.
struct FlowImage {
  Vec tau;
  Vec sign;
};

inline std::vector<FlowImage> flow_images(const GroupAction& g, const Vec& tau, int wraps = 2) {
  std::vector<FlowImage> out;
  const Vec ones = Vec::Ones(tau.size());
  if (g.id() == GroupId::SO2Dilation) {
    for (int k = -wraps; k <= wraps; ++k) {
      Vec t = tau;
      t[1] += 2.0 * kPi * k;
      out.push_back({t, ones});
    }
  } else if (g.id() == GroupId::SO3Dilation) {
    Vec flip = ones;
    flip[1] = -1.0;
    for (int k = -wraps; k <= wraps; ++k)
      for (int m = -wraps; m <= wraps; ++m) {
        Vec t = tau;
        t[1] += 2.0 * kPi * k;
        t[2] += 2.0 * kPi * m;
        out.push_back({t, ones});
        Vec r = tau;
        r[1] = -tau[1] + 2.0 * kPi * k;
        r[2] = tau[2] + kPi + 2.0 * kPi * m;
        out.push_back({r, flip});
      }
  } else {
    out.push_back({tau, ones});
  }
  return out;
}

// representative of tau's equivalence class closest to a previous value, with the sign pattern that maps
// derivatives in that representative to the principal chart
inline FlowImage lift_flow_image(const GroupAction& g, const Vec& tau, const Vec& previous) {
  FlowImage best{tau, Vec::Ones(tau.size())};
  double best_d = (tau - previous).squaredNorm();
  const auto dom = g.domains();
  Vec shifted = tau;
  for (Eigen::Index i = 0; i < tau.size(); ++i)
    if (dom[i] == CoordDomain::angular)
      shifted[i] = previous[i] + wrap_angle(tau[i] - previous[i]);
  if ((shifted - previous).squaredNorm() < best_d) {
    best.tau = shifted;
    best_d = (shifted - previous).squaredNorm();
  }
  if (g.id() == GroupId::SO3Dilation) {
    Vec r = tau;
    r[1] = -tau[1];
    r[2] = tau[2] + kPi;
    for (int i : {1, 2}) r[i] = previous[i] + wrap_angle(r[i] - previous[i]);
    if ((r - previous).squaredNorm() < best_d) {
      best.tau = r;
      best.sign[1] = -1.0;
    }
  }
  return best;
}

// sign pattern taking derivatives in the representative tau of x to the principal chart at x
inline Vec representative_sign(const GroupAction& g, const Vec& x, const Vec& tau) {
  if (g.id() != GroupId::SO3Dilation) return Vec::Ones(tau.size());
  return lift_flow_image(g, g.to_flow(x), tau).sign;
}

inline Vec lift_flow_coords(const GroupAction& g, const Vec& tau, const Vec& previous) {
  return lift_flow_image(g, tau, previous).tau;
}

}  // namespace liediff

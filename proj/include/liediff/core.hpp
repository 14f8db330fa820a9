#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace liediff {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSingularEps = 1e-8;

enum class ErrorKind {
  InvalidParams,
  SingularPoint,
  DegenerateBond,
  DegenerateAngle,
  GimbalDegeneracy,
  DegenerateTime,
  NonFiniteState,
  NonFiniteLoss,
  SizeMismatch,
  TooLarge,
  SchemaError,
  IoError,
  VersionMismatch,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidParams: return "InvalidParams";
    case ErrorKind::SingularPoint: return "SingularPoint";
    case ErrorKind::DegenerateBond: return "DegenerateBond";
    case ErrorKind::DegenerateAngle: return "DegenerateAngle";
    case ErrorKind::GimbalDegeneracy: return "GimbalDegeneracy";
    case ErrorKind::DegenerateTime: return "DegenerateTime";
    case ErrorKind::NonFiniteState: return "NonFiniteState";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::SizeMismatch: return "SizeMismatch";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

struct Seed {
  std::uint64_t value = 0;
};

// splitmix64 finalizer, used to derive independent per-chain streams
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(Seed seed) : engine_(seed.value) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  Vec normal_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Rng split(std::uint64_t stream) { return Rng(mix_seed(engine_(), stream)); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// wrap to (-pi, pi]
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

// rows are samples in Cartesian coordinates
struct SampleBatch {
  Mat x;
  std::string group;
  int time_index = 0;
  Seed seed{};
  std::size_t dropped = 0;

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }
};

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// writes to a sibling temporary and renames, so readers never see a partial file
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::IoError, "cannot open " + tmp + " for writing");
    out << text;
    out.flush();
    require(static_cast<bool>(out), ErrorKind::IoError, "write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorKind::IoError, "cannot move " + tmp + " to " + path.string() + ": " + ec.message());
}

}  // namespace liediff

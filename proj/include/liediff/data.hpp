#pragma once

#include "liediff/core.hpp"

#include <charconv>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace liediff {

enum class DatasetName { mog2d, mog3d, mog4d, circles2d, line2d, torus3d, moebius3d, angular1d, radial1d, bridge_pair };

inline const char* to_string(DatasetName d) {
  switch (d) {
    case DatasetName::mog2d: return "mog2d";
    case DatasetName::mog3d: return "mog3d";
    case DatasetName::mog4d: return "mog4d";
    case DatasetName::circles2d: return "circles2d";
    case DatasetName::line2d: return "line2d";
    case DatasetName::torus3d: return "torus3d";
    case DatasetName::moebius3d: return "moebius3d";
    case DatasetName::angular1d: return "angular1d";
    case DatasetName::radial1d: return "radial1d";
    case DatasetName::bridge_pair: return "bridge_pair";
  }
  return "unknown";
}

inline std::optional<DatasetName> parse_dataset_name(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(DatasetName::bridge_pair); ++i)
    if (s == to_string(static_cast<DatasetName>(i))) return static_cast<DatasetName>(i);
  return std::nullopt;
}

// Shape parameters; the meaning of each field depends on the dataset (see default_params).
struct DatasetParams {
  int modes = 8;             // mixture components
  double radius = 3.0;       // mode shell radius, ring radius, outer circle, line half-length
  double inner = 1.0;        // tube radius, inner circle, strip half-width, line offset
  double spread = 0.3;       // per-component sd (mixtures)
  double jitter = 0.05;      // isotropic Gaussian noise added to manifold datasets
  std::vector<double> weights;  // empty means uniform
};

struct DatasetSpec {
  DatasetName name = DatasetName::mog2d;
  std::size_t n = 1000;
  Seed seed{0};
  DatasetParams params;
};

inline int dataset_dim(DatasetName d) {
  switch (d) {
    case DatasetName::mog3d:
    case DatasetName::torus3d:
    case DatasetName::moebius3d: return 3;
    case DatasetName::mog4d: return 4;
    case DatasetName::bridge_pair: return 4;  // source (x1, x2), target (x3, x4)
    default: return 2;
  }
}

inline DatasetParams default_params(DatasetName d) {
  DatasetParams p;
  switch (d) {
    case DatasetName::mog2d: break;
    case DatasetName::mog3d: break;  // cube vertices on the radius-3 sphere
    case DatasetName::mog4d: break;  // +-radius along each axis of R^4
    case DatasetName::circles2d:
      p.modes = 2;
      p.radius = 2.0;
      p.inner = 1.0;
      break;
    case DatasetName::line2d:
      p.modes = 1;
      p.radius = 3.0;  // x in [-3, 3]
      p.inner = 1.0;   // y = 1
      break;
    case DatasetName::torus3d:
      p.modes = 1;
      p.radius = 2.0;
      p.inner = 0.7;
      break;
    case DatasetName::moebius3d:
      p.modes = 1;
      p.radius = 2.0;
      p.inner = 0.6;
      break;
    case DatasetName::angular1d:  // radius fixed, angle a three-component mixture
      p.modes = 3;
      p.radius = 2.0;
      p.spread = 0.25;
      break;
    case DatasetName::radial1d:  // angle uniform, radius a two-component mixture
      p.modes = 2;
      p.radius = 2.5;
      p.inner = 1.0;
      p.spread = 0.1;
      break;
    case DatasetName::bridge_pair:
      p.modes = 1;
      p.radius = 2.0;  // radii uniform in [inner, radius]
      p.inner = 1.0;
      p.jitter = 0.0;
      break;
  }
  return p;
}

inline DatasetSpec default_spec(DatasetName d, std::size_t n, Seed seed) { return {d, n, seed, default_params(d)}; }

namespace detail {

inline Mat mixture_means(DatasetName d, const DatasetParams& p) {
  if (d == DatasetName::mog2d) {
    Mat m(p.modes, 2);
    for (int k = 0; k < p.modes; ++k) m.row(k) << p.radius * std::cos(2 * kPi * k / p.modes), p.radius * std::sin(2 * kPi * k / p.modes);
    return m;
  }
  if (d == DatasetName::mog3d) {
    Mat m(8, 3);
    for (int k = 0; k < 8; ++k) m.row(k) << (k & 1 ? 1 : -1), (k & 2 ? 1 : -1), (k & 4 ? 1 : -1);
    return m * (p.radius / std::sqrt(3.0));
  }
  Mat m(8, 4);
  m.setZero();
  for (int k = 0; k < 8; ++k) m(k, k / 2) = (k % 2 ? -1.0 : 1.0) * p.radius;
  return m;
}

inline std::size_t pick(Rng& rng, const std::vector<double>& w, std::size_t k) {
  if (w.empty()) return rng.index(k);
  double u = rng.uniform(), acc = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return i;
  }
  return w.size() - 1;
}

}  // namespace detail

inline SampleBatch generate(const DatasetSpec& spec) {
  const auto& p = spec.params;
  require(spec.n >= 1, ErrorKind::InvalidParams, "dataset needs n >= 1");
  require(p.spread >= 0 && p.jitter >= 0, ErrorKind::InvalidParams, "noise scales must be non-negative");
  if (!p.weights.empty()) {
    double sum = 0;
    for (double w : p.weights) {
      require(w >= 0, ErrorKind::InvalidParams, "mixture weights must be non-negative");
      sum += w;
    }
    require(std::abs(sum - 1.0) < 1e-9, ErrorKind::InvalidParams, "mixture weights must sum to 1");
  }
  const int dim = dataset_dim(spec.name);
  Rng rng(spec.seed);
  SampleBatch out;
  out.x.resize(spec.n, dim);
  out.seed = spec.seed;
  auto jit = [&] { return p.jitter * rng.normal(); };

  switch (spec.name) {
    case DatasetName::mog2d:
    case DatasetName::mog3d:
    case DatasetName::mog4d: {
      const Mat means = detail::mixture_means(spec.name, p);
      require(p.weights.empty() || p.weights.size() == static_cast<std::size_t>(means.rows()), ErrorKind::InvalidParams,
              "weights must match the mode count");
      for (std::size_t i = 0; i < spec.n; ++i) {
        const auto k = detail::pick(rng, p.weights, means.rows());
        out.x.row(i) = means.row(k) + p.spread * rng.normal_vec(dim).transpose();
      }
      break;
    }
    case DatasetName::circles2d:
      for (std::size_t i = 0; i < spec.n; ++i) {
        const double r = detail::pick(rng, p.weights, 2) == 0 ? p.inner : p.radius;
        const double a = rng.uniform(0, 2 * kPi);
        out.x.row(i) << r * std::cos(a) + jit(), r * std::sin(a) + jit();
      }
      break;
    case DatasetName::line2d:
      for (std::size_t i = 0; i < spec.n; ++i) out.x.row(i) << rng.uniform(-p.radius, p.radius) + jit(), p.inner + jit();
      break;
    case DatasetName::torus3d:
      for (std::size_t i = 0; i < spec.n; ++i) {
        const double u = rng.uniform(0, 2 * kPi), v = rng.uniform(0, 2 * kPi);
        const double ring = p.radius + p.inner * std::cos(v);
        out.x.row(i) << ring * std::cos(u) + jit(), ring * std::sin(u) + jit(), p.inner * std::sin(v) + jit();
      }
      break;
    case DatasetName::moebius3d:
      for (std::size_t i = 0; i < spec.n; ++i) {
        const double v = rng.uniform(0, 2 * kPi), w = rng.uniform(-p.inner, p.inner);
        const double ring = p.radius + w * std::cos(v / 2);
        out.x.row(i) << ring * std::cos(v) + jit(), ring * std::sin(v) + jit(), w * std::sin(v / 2) + jit();
      }
      break;
    case DatasetName::angular1d:
      for (std::size_t i = 0; i < spec.n; ++i) {
        const auto k = detail::pick(rng, p.weights, p.modes);
        const double a = 2 * kPi * k / p.modes + p.spread * rng.normal();
        out.x.row(i) << p.radius * std::cos(a) + jit(), p.radius * std::sin(a) + jit();
      }
      break;
    case DatasetName::radial1d:
      for (std::size_t i = 0; i < spec.n; ++i) {
        const auto k = detail::pick(rng, p.weights, 2);
        const double r = (k == 0 ? p.inner : p.radius) + p.spread * rng.normal();
        const double a = rng.uniform(0, 2 * kPi);
        out.x.row(i) << r * std::cos(a), r * std::sin(a);
      }
      break;
    case DatasetName::bridge_pair:
      for (std::size_t i = 0; i < spec.n; ++i) {
        const double r = rng.uniform(p.inner, p.radius);
        const double a = rng.uniform(-kPi, kPi);
        out.x.row(i) << r * std::cos(a), r * std::sin(a), r + jit(), jit();
      }
      break;
  }
  return out;
}

// ---------------------------------------------------------------- CSV

inline std::string csv_header(Eigen::Index cols) {
  std::string h;
  for (Eigen::Index j = 0; j < cols; ++j) h += (j ? ",x" : "x") + std::to_string(j + 1);
  return h;
}

inline std::string to_csv(const Mat& x) {
  std::string out = csv_header(x.cols()) + "\n";
  char buf[32];
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", x(i, j));
      if (j) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

inline Mat parse_csv(const std::string& text, const std::string& source = "<memory>") {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    pos = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  require(!lines.empty(), ErrorKind::SchemaError, source + ": missing header");
  const std::string& header = lines[0];
  const Eigen::Index cols = std::count(header.begin(), header.end(), ',') + 1;
  require(header == csv_header(cols), ErrorKind::SchemaError, source + ":1: header must be x1..x" + std::to_string(cols));
  Mat x(lines.size() - 1, cols);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    const char* p = line.data();
    const char* end = p + line.size();
    for (Eigen::Index j = 0; j < cols; ++j) {
      double v = 0;
      auto [next, ec] = std::from_chars(p, end, v);
      require(ec == std::errc() && (j + 1 < cols ? next < end && *next == ',' : next == end), ErrorKind::SchemaError,
              source + ":" + std::to_string(i + 1) + ": malformed row");
      x(i - 1, j) = v;
      p = next + 1;
    }
  }
  return x;
}

inline void save_csv(const SampleBatch& batch, const std::filesystem::path& path) {
  write_text_atomic(path, to_csv(batch.x));
}

inline SampleBatch load_csv(const std::filesystem::path& path) {
  SampleBatch b;
  b.x = parse_csv(read_text(path), path.string());
  return b;
}

}  // namespace liediff

#pragma once

// Shared aliases, the error taxonomy, and the deterministic RNG used by
// every component. All randomness in the project flows through Rng so that
// a (code, seed) pair pins the exact byte output on any platform.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssr {

// Dense row-major matrix templated on scalar. Row-major keeps token/sentence
// rows contiguous, which is also the on-disk layout of every artifact.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

// ---------------------------------------------------------------------------
// Error taxonomy. Everything thrown on purpose derives from Error; the CLI
// maps the leaf classes onto its exit codes.

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shapes disagree (matmul inner dims, elementwise operands, ...).
struct DimensionError : Error {
  using Error::Error;
};

// An API was called outside its contract (non-scalar loss, missing mask
// plan, dropout rate outside [0,1), ...).
struct ContractError : Error {
  using Error::Error;
};

// An index or extent is out of the valid range.
struct RangeError : Error {
  using Error::Error;
};

// Structurally valid call on input that is semantically empty (empty token
// list, all-masked loss, empty candidate set, ...).
struct DegenerateInputError : Error {
  using Error::Error;
};

// A numeric result left the finite domain.
struct NumericError : Error {
  using Error::Error;
};

// A binary or CSV artifact failed validation while being read.
struct FormatError : Error {
  using Error::Error;
};

// Corpus text violates the corpus contract.
struct CorpusError : Error {
  using Error::Error;
};

// A run configuration file or value is invalid.
struct ConfigError : Error {
  using Error::Error;
};

// A pipeline stage was invoked before the artifact it consumes exists.
struct MissingArtifactError : Error {
  using Error::Error;
};

// A command-line argument is malformed.
struct ArgumentError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 is seeded directly; the derived draws below
// are hand-rolled (instead of std::*_distribution) because libstdc++/libc++
// disagree on distribution algorithms and we require byte-identical runs.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double real01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform index in [0, n). Lemire multiply-shift; n must be positive.
  std::size_t index(std::size_t n) {
    if (n == 0) throw ContractError("Rng::index: n must be positive");
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(gen_()) * n) >> 64);
  }

  // Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = real01();
    } while (u1 <= 0.0);
    const double u2 = real01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates; the draw order is part of the determinism contract.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices drawn from [0, n), in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k) {
    if (k > n)
      throw ContractError("Rng::sample_distinct: k exceeds population size");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + index(n - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Gaussian-filled matrix, row-major fill order.
template <class S>
Mat<S> randn(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev) {
  Mat<S> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = static_cast<S>(rng.normal() * stddev);
  return m;
}

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace ssr

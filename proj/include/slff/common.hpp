#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace slff {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

// Error hierarchy. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Raised when a data file, panel, or report violates its contract.
class DataError : public Error {
 public:
  using Error::Error;
};

// Raised when a caller asks for something the computation graph forbids,
// e.g. a gradient across a stop-gradient boundary.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// A statistic is undefined for the given input (zero variance, rank 0, ...).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class NumericalFailure : public Error {
 public:
  NumericalFailure(const std::string& what, int iterate)
      : Error(what + " (iterate " + std::to_string(iterate) + ")"), iterate_(iterate) {}
  int iterate() const { return iterate_; }

 private:
  int iterate_;
};

// Deterministic seed derivation: every random stream is named and derived from
// one master seed, so adding a stream never perturbs the others.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index);

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, std::string_view stream) {
  return Rng(derive_seed(master, stream));
}

// Standard normal draw that does not depend on std::normal_distribution's
// implementation-specific caching (Box-Muller on two uniform draws).
double standard_normal(Rng& rng);
double uniform01(Rng& rng);

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace slff

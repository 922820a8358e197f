#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dsfnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;
using Complex = std::complex<double>;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  GenerationError(const std::string& what, int retries)
      : Error(what + " (after " + std::to_string(retries) + " retries)"),
        retries_(retries) {}
  int retries() const noexcept { return retries_; }

 private:
  int retries_;
};

class SimulationDiverged : public Error {
 public:
  explicit SimulationDiverged(long step)
      : Error("simulation diverged at step " + std::to_string(step)),
        step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class FilterDiverged : public Error {
 public:
  explicit FilterDiverged(long step)
      : Error("Kalman filter diverged at step " + std::to_string(step)),
        step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class IdentifiabilityError : public Error {
 public:
  using Error::Error;
};

class UnsupportedSize : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace dsfnet

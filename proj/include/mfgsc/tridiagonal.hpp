#pragma once

#include <cstddef>
#include <vector>

#include "mfgsc/errors.hpp"

namespace mfgsc {

/// Thomas algorithm for a fixed tridiagonal matrix, factored once and reused
/// for many right-hand sides. lower[0] and upper[n-1] are ignored.
class TridiagonalSolver {
 public:
  TridiagonalSolver() = default;
  TridiagonalSolver(std::vector<double> lower, std::vector<double> diag,
                    std::vector<double> upper)
      : lower_(std::move(lower)), upper_(std::move(upper)) {
    const std::size_t n = diag.size();
    require(n >= 1 && lower_.size() == n && upper_.size() == n,
            "tridiagonal: inconsistent band sizes");
    inv_pivot_.resize(n);
    c_prime_.resize(n);
    double pivot = diag[0];
    require(pivot != 0.0, "tridiagonal: zero pivot");
    inv_pivot_[0] = 1.0 / pivot;
    c_prime_[0] = upper_[0] * inv_pivot_[0];
    for (std::size_t i = 1; i < n; ++i) {
      pivot = diag[i] - lower_[i] * c_prime_[i - 1];
      require(pivot != 0.0, "tridiagonal: zero pivot");
      inv_pivot_[i] = 1.0 / pivot;
      c_prime_[i] = upper_[i] * inv_pivot_[i];
    }
  }

  std::size_t size() const { return inv_pivot_.size(); }

  /// Solves in place.
  void solve(std::vector<double>& rhs) const {
    const std::size_t n = size();
    require(rhs.size() == n, "tridiagonal: rhs size mismatch");
    rhs[0] *= inv_pivot_[0];
    for (std::size_t i = 1; i < n; ++i) {
      rhs[i] = (rhs[i] - lower_[i] * rhs[i - 1]) * inv_pivot_[i];
    }
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= c_prime_[i] * rhs[i + 1];
  }

 private:
  std::vector<double> lower_;
  std::vector<double> upper_;
  std::vector<double> inv_pivot_;
  std::vector<double> c_prime_;
};

}  // namespace mfgsc

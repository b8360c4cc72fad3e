#pragma once

#include <Eigen/Dense>

namespace symvar {

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Index = Eigen::Index;

// Central numeric tolerances. Each constant is referenced by the operation
// that owns it; tests pin against the same values.
namespace tol {
inline constexpr double orthogonality = 1e-9;   // ||R^T R - I||_max for isometries
inline constexpr double dedup = 1e-9;           // group element identification
inline constexpr double rank = 1e-9;            // SVD rank cutoff (fixed subspaces)
inline constexpr double decomposition = 1e-8;   // ||sum c_i P_i - P_E||_max
inline constexpr double trace_identity = 1e-8;  // |sum c_i dim E_i - dim E|
inline constexpr double gap_certificate = 1e-8; // Cayley eigenvector equality
inline constexpr double gap_zero = 1e-10;       // "zero eigenvalue" threshold
inline constexpr double invariance = 1e-8;      // potential/membership invariance
inline constexpr double hessian_symmetry = 1e-8;
inline constexpr double gradient_fd = 1e-5;     // relative, vs central differences
inline constexpr double quadrature = 1e-10;     // adaptive quadrature target
inline constexpr double tail_mass = 1e-10;      // grid domain certificate
inline constexpr double conditional_defect = 1e-8; // centered-conditional checks
}  // namespace tol

struct ValueWithError {
  double value = 0.0;
  double error = 0.0;  // one standard error (or a deterministic error bound)
};

}  // namespace symvar

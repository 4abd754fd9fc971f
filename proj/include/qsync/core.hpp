#pragma once
#include <Eigen/Dense>
#include <complex>
#include <vector>

namespace qsync {

using Complex    = std::complex<double>;
using Matrix     = Eigen::MatrixXcd;
using Vector     = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;
using RealMatrix = Eigen::MatrixXd;

inline Matrix pauli_x() { Matrix m(2, 2); m << 0, 1, 1, 0; return m; }
inline Matrix pauli_y() { Matrix m(2, 2); m << 0, Complex(0, -1), Complex(0, 1), 0; return m; }
inline Matrix pauli_z() { Matrix m(2, 2); m << 1, 0, 0, -1; return m; }
inline Matrix id2()     { return Matrix::Identity(2, 2); }

Matrix kron(const Matrix& a, const Matrix& b);

// Tensor product of 2x2 factors, site 1 = leftmost (most significant bit).
Matrix kron_chain(const std::vector<Matrix>& factors);

// op acting on one site of an n-site chain, identity elsewhere; site is 1-based.
Matrix site_operator(int n_sites, int site, const Matrix& op);

struct Eigh {
    RealVector values;  // ascending
    Matrix vectors;     // orthonormal columns, deterministic phase
};

// Hermitian eigendecomposition with a fixed phase convention: in every column
// the entry of largest magnitude is made real and positive.
Eigh eigh(const Matrix& m);

double expectation(const Vector& psi, const Matrix& a);
double expectation(const Matrix& rho, const Matrix& a);

inline Matrix dyad(const Vector& psi) { return psi * psi.adjoint(); }

double purity(const Matrix& rho);

// Uhlmann fidelity F = (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2 via spectral
// decomposition; eigenvalues in (-1e-6, 0) are clamped to zero, anything more
// negative throws.
double fidelity(const Matrix& rho, const Matrix& sigma);

double trace_distance(const Matrix& a, const Matrix& b);

struct PurityAmplitude {
    double purity;
    double amplitude;  // oscillation amplitude of a precessing qubit observable
    double coherence;  // l1 coherence, equals twice the amplitude
};

// Single-qubit relation between Bloch vector, purity and the amplitude of
// free-precession oscillations: P = (1+|a|^2)/2, A = sqrt(ax^2+ay^2), C = 2A.
// These satisfy A^2 + az^2 = 2P - 1 exactly.
PurityAmplitude purity_amplitude(double ax, double ay, double az);

struct PureEnsemble {
    std::vector<double> weights;
    std::vector<Vector> states;
};

Matrix ensemble_density(const PureEnsemble& ens);

} // namespace qsync

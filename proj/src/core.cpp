#include "qsync/core.hpp"
#include <algorithm>
#include <stdexcept>

namespace qsync {

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Matrix kron_chain(const std::vector<Matrix>& factors) {
    if (factors.empty()) throw std::invalid_argument("kron_chain: empty factor list");
    for (const auto& f : factors)
        if (f.rows() != 2 || f.cols() != 2)
            throw std::invalid_argument("kron_chain: factors must be 2x2");
    Matrix out = factors.front();
    for (std::size_t k = 1; k < factors.size(); ++k) out = kron(out, factors[k]);
    return out;
}

Matrix site_operator(int n_sites, int site, const Matrix& op) {
    if (site < 1 || site > n_sites) throw std::invalid_argument("site_operator: site out of range");
    std::vector<Matrix> factors(static_cast<std::size_t>(n_sites), id2());
    factors[static_cast<std::size_t>(site - 1)] = op;
    return kron_chain(factors);
}

Eigh eigh(const Matrix& m) {
    if (m.rows() != m.cols()) throw std::invalid_argument("eigh: matrix not square");
    if ((m - m.adjoint()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff()))
        throw std::invalid_argument("eigh: matrix not Hermitian");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
    if (solver.info() != Eigen::Success) throw std::runtime_error("eigh: eigensolver failed");
    Eigh out{solver.eigenvalues(), solver.eigenvectors()};
    for (Eigen::Index c = 0; c < out.vectors.cols(); ++c) {
        Eigen::Index imax = 0;
        double best = -1.0;
        for (Eigen::Index r = 0; r < out.vectors.rows(); ++r) {
            const double mag = std::abs(out.vectors(r, c));
            if (mag > best + 1e-15) { best = mag; imax = r; }
        }
        const Complex z = out.vectors(imax, c);
        if (std::abs(z) > 0) out.vectors.col(c) *= std::conj(z) / std::abs(z);
    }
    return out;
}

double expectation(const Vector& psi, const Matrix& a) {
    return std::real(Complex(psi.adjoint() * (a * psi)));
}

double expectation(const Matrix& rho, const Matrix& a) {
    return std::real((rho * a).trace());
}

double purity(const Matrix& rho) {
    return std::real((rho * rho).trace());
}

namespace {

// spectral square root with the same clamping policy as fidelity()
Matrix psd_sqrt(const Matrix& rho) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(rho);
    RealVector vals = solver.eigenvalues();
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (vals[i] < -1e-6)
            throw std::runtime_error("fidelity: matrix has eigenvalue below -1e-6");
        vals[i] = vals[i] > 0 ? std::sqrt(vals[i]) : 0.0;
    }
    return solver.eigenvectors() * vals.asDiagonal() * solver.eigenvectors().adjoint();
}

} // namespace

double fidelity(const Matrix& rho, const Matrix& sigma) {
    const Matrix sr = psd_sqrt(rho);
    const Matrix inner = sr * sigma * sr;
    Eigen::SelfAdjointEigenSolver<Matrix> solver(inner);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
        const double v = solver.eigenvalues()[i];
        if (v < -1e-6) throw std::runtime_error("fidelity: inner matrix eigenvalue below -1e-6");
        if (v > 0) sum += std::sqrt(v);
    }
    const double f = sum * sum;
    if (f > 1.0 + 1e-6) throw std::runtime_error("fidelity: result above 1 beyond tolerance");
    return std::clamp(f, 0.0, 1.0);
}

double trace_distance(const Matrix& a, const Matrix& b) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(a - b);
    return 0.5 * solver.eigenvalues().cwiseAbs().sum();
}

PurityAmplitude purity_amplitude(double ax, double ay, double az) {
    const double a2 = ax * ax + ay * ay + az * az;
    if (a2 > 1.0 + 1e-12) throw std::invalid_argument("purity_amplitude: |a| > 1");
    const double amp = std::sqrt(ax * ax + ay * ay);
    return {0.5 * (1.0 + a2), amp, 2.0 * amp};
}

Matrix ensemble_density(const PureEnsemble& ens) {
    if (ens.weights.size() != ens.states.size() || ens.states.empty())
        throw std::invalid_argument("ensemble_density: malformed ensemble");
    Matrix rho = Matrix::Zero(ens.states.front().size(), ens.states.front().size());
    for (std::size_t m = 0; m < ens.states.size(); ++m)
        rho += ens.weights[m] * dyad(ens.states[m]);
    return rho;
}

} // namespace qsync

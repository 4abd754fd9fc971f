#pragma once
#include "qsync/core.hpp"
#include <Eigen/Sparse>

namespace qsync {

struct ChainParams {
    int n = 2;          // number of qubits, 2..10
    int site = 1;       // monitored site u, 1-based
    double j = 1.0;     // hopping J
    double h = 1.0;     // transverse field
    double gamma = 1.0; // measurement rate
};

void validate(const ChainParams& p);

// open-boundary XY chain: (J/2) sum (sx sx + sy sy) + h sum sz
Matrix build_hamiltonian(const ChainParams& p);

// homodyne jump operator L = sqrt(gamma*J) * sz at the monitored site
Matrix build_measurement(const ChainParams& p);

// operator coupled to the classical field: H_noise(t) = xi(t) G, G = sqrt(gamma*J) sz
Matrix build_classical_noise_generator(const ChainParams& p);

// diagonal of sz at a given site in the computational basis (site 1 = leftmost bit)
RealVector sz_diagonal(int n_sites, int site);

struct ChainModel {
    ChainParams params;
    Matrix hamiltonian;
    Matrix measurement;
    Matrix noise_generator;
    std::vector<RealVector> site_z; // sz diagonals, one per site
};

ChainModel build_chain_model(const ChainParams& p);

// Smallest subspace spanned by computational-basis states that contains the
// given support and is closed under H (and the diagonal L). Trajectories never
// leave it, so integrators run on its dimension instead of 2^N. Configs are
// grouped by total magnetization, which H conserves, so the restricted H is
// block diagonal in that ordering.
struct Carrier {
    int n_sites = 0;
    std::vector<Eigen::Index> configs;        // full-space basis indices
    Matrix h;                                 // restricted Hamiltonian
    Eigen::SparseMatrix<Complex> h_sparse;
    RealVector l_diag;                        // restricted measurement diagonal
    RealMatrix site_z;                        // dim x n_sites
    bool use_sparse = false;

    Eigen::Index dim() const { return static_cast<Eigen::Index>(configs.size()); }
};

Carrier build_carrier(const ChainModel& model, const std::vector<Vector>& support,
                      double tol = 1e-12);

Vector restrict_to_carrier(const Carrier& carrier, const Vector& full);
Vector expand_from_carrier(const Carrier& carrier, const Vector& reduced);
Matrix restrict_to_carrier(const Carrier& carrier, const Matrix& full);
Matrix expand_from_carrier(const Carrier& carrier, const Matrix& reduced);

} // namespace qsync

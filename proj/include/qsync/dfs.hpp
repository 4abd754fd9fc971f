#pragma once
#include "qsync/chain.hpp"
#include <optional>

namespace qsync {

// Simultaneous eigenvectors of (H, L) sharing one L eigenvalue c. `basis`
// holds the oscillatory core: the members that couple to at least one site
// magnetization, i.e. the part that can synchronize. Before refinement the
// core equals the full common eigenspace.
struct DfsSubspace {
    double c = 0.0;
    Matrix basis;            // core, energy-ascending columns
    RealVector energies;     // core energies
    Matrix projector;        // onto the core
    Matrix full_basis;       // entire common eigenspace for this c
    RealVector full_energies;
    std::vector<double> frequencies; // observable Bohr frequencies, set by refinement

    Eigen::Index dim() const { return basis.cols(); }
    Eigen::Index full_dim() const { return full_basis.cols(); }
};

struct DfsDecomposition {
    std::vector<DfsSubspace> subspaces; // ordered by c ascending
    Matrix complement_projector;
    bool refined = false;

    Eigen::Index dim() const { return complement_projector.rows(); }
};

// Detect decoherence-free subspaces: diagonalize H, diagonalize the
// restriction of L inside each degenerate eigenspace, keep vectors with
// residual ||Lv - (v'Lv)v|| <= tol, group by the L eigenvalue.
DfsDecomposition find_dfs(const Matrix& h, const Matrix& l, double tol = 1e-8);

// Restrict each subspace to its oscillatory core with respect to the chain's
// site magnetizations, and record the observable Bohr frequencies. Dark states
// invisible to every sz_j join the complement.
DfsDecomposition refine_oscillatory(const DfsDecomposition& dec, const ChainModel& model,
                                    double vis_tol = 1e-8, double freq_tol = 1e-9);

DfsDecomposition analyze_chain(const ChainModel& model, double tol = 1e-8);

// all distinct positive gaps |E_i - E_j| of the subspace core
std::vector<double> bohr_frequencies(const DfsSubspace& sub, double tol = 1e-9);

// Signed per-site oscillation pattern of <sz_j>(t) for the equal superposition
// of the lowest visible eigenstate pair; unit-max normalized, first nonzero
// entry positive. Requires a refined subspace with exactly one frequency.
RealVector synchronized_eigenmode(const ChainModel& model, const DfsSubspace& sub);

// Equal superposition of the lowest-energy visible eigenstate pair, the state
// that oscillates at a single Bohr frequency inside the subspace. A frequency
// selector is required when the subspace supports several; errors list the
// available ones.
Vector dfs_pair_state(const ChainModel& model, const DfsSubspace& sub,
                      std::optional<double> frequency = std::nullopt);

// per-subspace overlaps Tr[rho P_k], complement appended last
std::vector<double> overlaps(const Vector& psi, const DfsDecomposition& dec);
std::vector<double> overlaps(const Matrix& rho, const DfsDecomposition& dec);

// Invariant blocks of the non-dark sector: connected components of the
// L-coupling graph over non-dark H eigenvectors.
struct ComplementBlock {
    Matrix basis;
    RealVector energies;
};

std::vector<ComplementBlock> complement_blocks(const ChainModel& model,
                                               const DfsDecomposition& dec,
                                               double tol = 1e-8);

// deterministic reference state of the smallest complement block
Vector complement_reference_state(const ChainModel& model, const DfsDecomposition& dec);

// dimension of the kernel of the Lindblad generator restricted to a block
int lindblad_kernel_dim(const ChainModel& model, const Matrix& block_basis, double tol = 1e-7);

} // namespace qsync

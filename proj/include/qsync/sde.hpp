#pragma once
#include "qsync/chain.hpp"
#include "qsync/dfs.hpp"
#include "qsync/rng.hpp"
#include <optional>

namespace qsync {

enum class Scheme {
    EulerMaruyamaIto,     // quantum trajectories, plain Ito Euler
    SplitStepMeasurement, // quantum trajectories, exact unitary x exact diagonal measurement
    HeunStratonovich,     // classical noise, predictor-corrector
    SplitStepUnitary,     // classical noise, exactly unitary per step
    DeterministicRk4,     // Lindblad
};

struct IntegratorConfig {
    Scheme scheme = Scheme::EulerMaruyamaIto;
    double dt = 1e-3;
    bool renormalize = true;
    double norm_floor = 1e-6;
    int max_halvings = 3;
};

struct NoisePath {
    double dt = 0.0;
    std::vector<double> increments; // Wiener increments dW
};

// one Ito Euler-Maruyama step of the normalized homodyne SSE
Vector step_sse(const Vector& psi, const Matrix& h, const Matrix& l, double dt, double dw);

// one Ito Euler-Maruyama step of the homodyne stochastic master equation
Matrix step_sme(const Matrix& rho, const Matrix& h, const Matrix& l, double dt, double dw);

// deterministic Lindblad right-hand side
Matrix lindblad_rhs(const Matrix& rho, const Matrix& h, const Matrix& l);

struct RunGrid {
    double t_final = 60.0;
    double sample_stride = 0.05;
    double snapshot_stride = 0.0; // 0 disables state snapshots
};

struct TrapConfig {
    double epsilon = 1e-3;  // trapping threshold 1 - epsilon
    double dwell = 1.0;     // time the threshold must hold
};

// One magnetization sector of the carrier, with its Hamiltonian eigensystem.
// exp(-i H dt) is applied sector by sector, which both cuts the cost and keeps
// the H eigenphases exact (no amplitude distortion between eigencomponents).
struct SectorBlock {
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
    Matrix vectors;     // eigenvectors of the sector Hamiltonian
    RealVector values;  // its eigenvalues
};

// Shared per-scenario evolution data: the carrier subspace plus the DFS core
// bases restricted to it. Built once, used by every trajectory.
struct EvolutionContext {
    Carrier carrier;
    std::vector<Matrix> dfs_bases;  // carrier-restricted core bases
    int n_subspaces = 0;
    std::vector<SectorBlock> blocks;
};

EvolutionContext make_context(const ChainModel& model, const DfsDecomposition& dec,
                              const std::vector<Vector>& support);

// exp(-i H dt) per sector, for the split-step schemes
std::vector<Matrix> block_propagators(const EvolutionContext& ctx, double dt);

void apply_propagators(const std::vector<Matrix>& props, const EvolutionContext& ctx, Vector& psi);

struct TrajectoryRecord {
    int stream_id = 0;
    double dt_used = 0.0;
    RealVector times;
    RealMatrix sites;     // samples x n_sites
    RealMatrix overlap;   // samples x (n_subspaces + 1), complement last
    RealVector purity;    // filled for classical mixed-state runs
    Vector final_state;   // carrier coordinates (first member for classical runs)
    std::vector<double> snapshot_times;
    std::vector<Vector> snapshots;  // classical runs concatenate all members per snapshot
    int trapped_in = -1;  // 0..K-1 = subspace, K = complement, -1 = undecided
    double hit_time = -1.0;
};

// classify trapping on the sampled overlap series
void classify_trapping(TrajectoryRecord& rec, const TrapConfig& trap);

TrajectoryRecord evolve_trajectory_ctx(const Vector& psi0_carrier, const EvolutionContext& ctx,
                                       const IntegratorConfig& integ, const RunGrid& grid,
                                       const TrapConfig& trap, RngStream rng,
                                       const NoisePath* path = nullptr);

// convenience wrapper: full-space initial state, context built internally
TrajectoryRecord evolve_trajectory(const Vector& psi0, const ChainModel& model,
                                   const DfsDecomposition& dec, const IntegratorConfig& integ,
                                   const RunGrid& grid, const TrapConfig& trap, RngStream rng);

// classical Stratonovich noise acting on a (possibly mixed) ensemble; all
// members ride the same noise realization
TrajectoryRecord evolve_classical_noise_ctx(const PureEnsemble& ens_carrier,
                                            const EvolutionContext& ctx,
                                            const IntegratorConfig& integ, const RunGrid& grid,
                                            const TrapConfig& trap, RngStream rng);

TrajectoryRecord evolve_classical_noise(const PureEnsemble& ens, const ChainModel& model,
                                        const DfsDecomposition& dec, const IntegratorConfig& integ,
                                        const RunGrid& grid, const TrapConfig& trap, RngStream rng);

struct LindbladRun {
    RealVector times;
    RealMatrix sites;
    RealMatrix overlap;
    Matrix final_rho;        // carrier coordinates
    Matrix window_mean_rho;  // time average over the trailing window
    double trace_drift = 0.0;
};

LindbladRun evolve_lindblad_ctx(const Matrix& rho0_carrier, const EvolutionContext& ctx,
                                double dt, const RunGrid& grid, double mean_window_fraction = 0.2);

LindbladRun evolve_lindblad(const Matrix& rho0, const ChainModel& model,
                            const DfsDecomposition& dec, double dt, const RunGrid& grid,
                            double mean_window_fraction = 0.2);

} // namespace qsync

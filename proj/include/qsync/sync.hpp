#pragma once
#include "qsync/sde.hpp"
#include <optional>

namespace qsync {

enum class RelativePhase { InPhase, AntiPhase };

// a(t) ~ amplitude * cos(frequency * t + phase) + offset over the fit window
struct SinusoidFit {
    double frequency = 0.0;
    double amplitude = 0.0;
    double phase = 0.0;
    double offset = 0.0;
    double residual_rms = 0.0;
    double amplitude_drift = 0.0; // relative amplitude change between window halves
};

struct SyncThresholds {
    double frequency_rel = 0.01;  // max relative frequency mismatch
    double residual_rel = 0.05;   // residual rms as a fraction of amplitude
    double drift_rel = 0.02;      // amplitude drift across window halves
    double phase_window = 0.1;    // rad, width of the (anti)phase acceptance band
    double amplitude_floor = 0.02; // below this the series counts as flat/noise
};

struct SyncVerdict {
    bool synchronized = false;
    std::optional<double> frequency;
    std::optional<RelativePhase> relative_phase;
    double amplitude = 0.0;
    double residual_noise = 0.0; // max relative residual of the two fits
};

// least squares with the frequency scanned over a periodogram grid, then
// golden-section refined; throws when the window holds < 2 periods of the
// dominant frequency or too few samples
SinusoidFit fit_sinusoid(const RealVector& times, const RealVector& values, double t_lo,
                         double t_hi);

SyncVerdict detect_sync(const RealVector& times, const RealVector& series_a,
                        const RealVector& series_b, double t_lo, double t_hi,
                        const SyncThresholds& thr = {});

struct TrapStats {
    std::vector<int> counts;      // per subspace, complement last
    std::vector<double> fractions; // over classified records
    int undecided = 0;
    int total = 0;
};

TrapStats stationary_histogram(const std::vector<TrajectoryRecord>& records, int n_subspaces);

struct FidelityStats {
    double empirical_mean = 0.0;
    double predicted = 0.0;     // sum of squared block weights
    double empirical_variance = 0.0;
    double predicted_variance = 0.0; // sum w^3 - (sum w^2)^2
    double popoviciu_bound = 0.0;    // (1 - 1/n_blocks)^2 / 4
    double std_error = 0.0;
    int n = 0;
};

// time-averaged trajectory states against the ensemble steady state
FidelityStats ergodicity_fidelity(const std::vector<Matrix>& mean_states, const Matrix& steady,
                                  const std::vector<double>& weights);

// average of |psi><psi| over the stored snapshots in the trailing window;
// throws when no snapshot falls inside it
Matrix window_mean_state(const TrajectoryRecord& rec, double fraction = 0.5);

// same for a classical-noise record whose snapshots concatenate the ensemble
// members: averages sum_m w_m |psi_m><psi_m| over the window
Matrix window_mean_ensemble(const TrajectoryRecord& rec, const std::vector<double>& weights,
                            double fraction = 0.5);

struct HittingStats {
    int count = 0; // zero signals empty statistics, not an error
    double mean = 0.0;
    double variance = 0.0;
    std::vector<double> bin_edges;
    std::vector<int> bin_counts;
};

// only records trapped in a DFS contribute; complement and undecided are skipped
HittingStats hitting_time_stats(const std::vector<TrajectoryRecord>& records, int n_subspaces,
                                int bins = 20);

struct FrequencyHistogram {
    std::vector<double> frequencies; // cluster representatives, ascending
    std::vector<int> counts;
    std::vector<double> fractions; // over synchronized records
    std::vector<double> ci3;       // 3 sigma binomial half widths
    int unsynchronized = 0;
    int total = 0;
};

FrequencyHistogram multiplexing_report(const std::vector<SyncVerdict>& verdicts,
                                       double cluster_rel = 0.02);

} // namespace qsync

#pragma once
#include "qsync/initial.hpp"
#include "qsync/sde.hpp"
#include "qsync/sync.hpp"
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

namespace qsync {

// bad input (config file, labels, parameter ranges); the CLI maps it to exit 2
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class NoiseKind { QuantumHomodyne, ClassicalStratonovich, LindbladOnly };

struct EnsembleConfig {
    int size = 500;
    std::uint64_t seed = 1;
    int workers = 0;  // 0 = hardware concurrency
};

struct AnalysisConfig {
    double window_fraction = 0.5;       // trailing fraction fed to detect_sync
    std::vector<int> sync_sites;        // two 1-based sites; empty disables verdicts
    SyncThresholds thresholds;
    double mean_window_fraction = 0.2;  // trailing average for the Lindblad run
};

struct OutputConfig {
    std::string directory = "out";
    int csv_trajectories = 0;   // per-trajectory CSV for the first k records
    bool lindblad_csv = false;
    bool summary_series = false;  // embed the mean-overlap series in summary.json
};

// ergodicity scan: reweight a two-term mixture as {w, 1-w} per grid point
struct FidelitySweep {
    std::vector<double> weights;
    std::vector<double> classical_weights;  // empty = same as weights
    bool quantum = true;
    bool classical = true;
    double snapshot_stride = 0.5;
};

struct ScenarioConfig {
    std::string name = "scenario";
    ChainParams model;
    InitialStateSpec initial;
    NoiseKind noise = NoiseKind::QuantumHomodyne;
    IntegratorConfig integrator;
    RunGrid grid;
    TrapConfig trap;
    EnsembleConfig ensemble;
    AnalysisConfig analysis;
    OutputConfig outputs;
    std::optional<FidelitySweep> fidelity_sweep;
};

// strict parser: unknown keys anywhere are a ConfigError
ScenarioConfig parse_config(const std::string& json_text);
std::string serialize_config(const ScenarioConfig& cfg);

// literal file path, else <name>.json under QSYNC_PRESET_DIR, else ./presets
ScenarioConfig load_config(const std::string& path_or_name);
std::string preset_directory();
std::vector<std::string> list_presets();

struct RunManifest {
    std::string code_version;
    std::string config_json;  // canonical snapshot of the executed config
    std::uint64_t seed = 0;
    std::uint64_t stream_first = 0;
    int stream_count = 0;
    double wall_seconds = 0.0;
    std::map<std::string, std::string> file_digests;  // filename -> fnv1a-64 hex
};

struct ScenarioResult {
    ScenarioConfig config;                 // as executed (env overrides applied)
    Eigen::Index carrier_dim = 0;
    std::vector<double> initial_overlaps;  // per subspace, complement last
    std::vector<TrajectoryRecord> records; // carrier coordinates
    std::vector<SyncVerdict> verdicts;     // aligned with records when sites set
    TrapStats trap;
    FrequencyHistogram frequencies;
    HittingStats hitting;
    RealVector mean_times;                 // ensemble mean overlap vs time
    RealMatrix mean_overlap;
    RealMatrix overlap_se;
    std::optional<LindbladRun> lindblad;
    std::optional<SyncVerdict> lindblad_verdict;
    RunManifest manifest;
};

// executes the ensemble, writes CSV + summary.json + manifest.json; byte
// deterministic for a given (config, seed) regardless of worker count
ScenarioResult run_scenario(const ScenarioConfig& cfg);

struct FidelitySweepResult {
    std::vector<double> quantum_weights;
    std::vector<FidelityStats> quantum;
    std::vector<double> classical_weights;
    std::vector<FidelityStats> classical;
    std::vector<double> classical_purity_drift;  // max |purity(t)-purity(0)| per point
    RunManifest manifest;
};

FidelitySweepResult run_fidelity_sweep(const ScenarioConfig& cfg);

struct SweepPoint {
    double gamma = 0.0;
    TrapStats trap;
    HittingStats hitting;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    RunManifest manifest;
};

// hitting-time statistics of the base scenario across a measurement-rate grid
SweepResult sweep_sync_time(const ScenarioConfig& base, const std::vector<double>& gammas);

// JSON report of the DFS decomposition for the given chain
std::string analyze_report(const ChainParams& p);

} // namespace qsync

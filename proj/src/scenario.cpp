#include "qsync/scenario.hpp"
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace qsync {

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

constexpr const char* kCodeVersion = "qsync 0.1.0";

[[noreturn]] void bad(const std::string& msg) { throw ConfigError("config: " + msg); }

void check_keys(const Json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) bad(path + " must be an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known) bad("unknown key '" + path + "." + item.key() + "'");
    }
}

double num_or(const Json& j, const char* key, double def, const std::string& path) {
    if (!j.contains(key)) return def;
    const Json& v = j.at(key);
    if (!v.is_number()) bad(path + "." + key + " must be a number");
    return v.get<double>();
}

int int_or(const Json& j, const char* key, int def, const std::string& path) {
    if (!j.contains(key)) return def;
    const Json& v = j.at(key);
    if (!v.is_number_integer()) bad(path + "." + key + " must be an integer");
    return v.get<int>();
}

std::uint64_t u64_or(const Json& j, const char* key, std::uint64_t def, const std::string& path) {
    if (!j.contains(key)) return def;
    const Json& v = j.at(key);
    if (!(v.is_number_integer() && v.get<long long>() >= 0))
        bad(path + "." + key + " must be a non-negative integer");
    return v.get<std::uint64_t>();
}

bool bool_or(const Json& j, const char* key, bool def, const std::string& path) {
    if (!j.contains(key)) return def;
    const Json& v = j.at(key);
    if (!v.is_boolean()) bad(path + "." + key + " must be a boolean");
    return v.get<bool>();
}

std::string str_or(const Json& j, const char* key, const std::string& def,
                   const std::string& path) {
    if (!j.contains(key)) return def;
    const Json& v = j.at(key);
    if (!v.is_string()) bad(path + "." + key + " must be a string");
    return v.get<std::string>();
}

NoiseKind parse_noise(const std::string& s) {
    if (s == "quantum") return NoiseKind::QuantumHomodyne;
    if (s == "classical") return NoiseKind::ClassicalStratonovich;
    if (s == "lindblad") return NoiseKind::LindbladOnly;
    bad("noise must be one of quantum, classical, lindblad (got '" + s + "')");
}

std::string noise_name(NoiseKind k) {
    switch (k) {
    case NoiseKind::QuantumHomodyne: return "quantum";
    case NoiseKind::ClassicalStratonovich: return "classical";
    case NoiseKind::LindbladOnly: return "lindblad";
    }
    return "quantum";
}

Scheme parse_scheme(const std::string& s) {
    if (s == "euler-maruyama") return Scheme::EulerMaruyamaIto;
    if (s == "split-step") return Scheme::SplitStepMeasurement;
    if (s == "heun") return Scheme::HeunStratonovich;
    if (s == "split-step-unitary") return Scheme::SplitStepUnitary;
    if (s == "rk4") return Scheme::DeterministicRk4;
    bad("integrator.scheme '" + s +
        "' unknown (euler-maruyama, split-step, heun, split-step-unitary, rk4)");
}

std::string scheme_name(Scheme s) {
    switch (s) {
    case Scheme::EulerMaruyamaIto: return "euler-maruyama";
    case Scheme::SplitStepMeasurement: return "split-step";
    case Scheme::HeunStratonovich: return "heun";
    case Scheme::SplitStepUnitary: return "split-step-unitary";
    case Scheme::DeterministicRk4: return "rk4";
    }
    return "split-step";
}

Scheme default_scheme(NoiseKind k) {
    switch (k) {
    case NoiseKind::QuantumHomodyne: return Scheme::SplitStepMeasurement;
    case NoiseKind::ClassicalStratonovich: return Scheme::SplitStepUnitary;
    case NoiseKind::LindbladOnly: return Scheme::DeterministicRk4;
    }
    return Scheme::SplitStepMeasurement;
}

InitialStateSpec parse_initial(const Json& j, int n_sites) {
    check_keys(j, "initial", {"kind", "terms", "amplitudes"});
    InitialStateSpec spec;
    const std::string kind = str_or(j, "kind", "", "initial");
    if (kind == "mixture")
        spec.kind = InitialStateSpec::Kind::Mixture;
    else if (kind == "superposition")
        spec.kind = InitialStateSpec::Kind::Superposition;
    else if (kind == "explicit")
        spec.kind = InitialStateSpec::Kind::Explicit;
    else
        bad("initial.kind must be mixture, superposition or explicit");

    if (spec.kind == InitialStateSpec::Kind::Explicit) {
        if (!j.contains("amplitudes") || !j.at("amplitudes").is_array())
            bad("initial.amplitudes must be an array of [re, im] pairs");
        const auto& arr = j.at("amplitudes");
        const Eigen::Index dim = Eigen::Index(1) << n_sites;
        if (static_cast<Eigen::Index>(arr.size()) != dim)
            bad("initial.amplitudes must list 2^n entries");
        spec.amplitudes.resize(dim);
        for (Eigen::Index i = 0; i < dim; ++i) {
            const auto& e = arr[static_cast<std::size_t>(i)];
            if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
                bad("initial.amplitudes entries must be [re, im] pairs");
            spec.amplitudes[i] = Complex(e[0].get<double>(), e[1].get<double>());
        }
        return spec;
    }

    if (!j.contains("terms") || !j.at("terms").is_array() || j.at("terms").empty())
        bad("initial.terms must be a non-empty array");
    for (const auto& t : j.at("terms")) {
        check_keys(t, "initial.terms[]", {"label", "weight", "frequency"});
        InitialTerm term;
        term.label = str_or(t, "label", "", "initial.terms[]");
        term.weight = num_or(t, "weight", 1.0, "initial.terms[]");
        if (t.contains("frequency")) term.frequency = num_or(t, "frequency", 0.0, "initial.terms[]");
        spec.terms.push_back(std::move(term));
    }
    return spec;
}

Json initial_json(const InitialStateSpec& spec) {
    Json j;
    switch (spec.kind) {
    case InitialStateSpec::Kind::Mixture: j["kind"] = "mixture"; break;
    case InitialStateSpec::Kind::Superposition: j["kind"] = "superposition"; break;
    case InitialStateSpec::Kind::Explicit: j["kind"] = "explicit"; break;
    }
    if (spec.kind == InitialStateSpec::Kind::Explicit) {
        Json arr = Json::array();
        for (Eigen::Index i = 0; i < spec.amplitudes.size(); ++i)
            arr.push_back({spec.amplitudes[i].real(), spec.amplitudes[i].imag()});
        j["amplitudes"] = std::move(arr);
        return j;
    }
    Json terms = Json::array();
    for (const auto& t : spec.terms) {
        Json e;
        e["label"] = t.label;
        e["weight"] = t.weight;
        if (t.frequency) e["frequency"] = *t.frequency;
        terms.push_back(std::move(e));
    }
    j["terms"] = std::move(terms);
    return j;
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text, RunManifest& man) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
    out.close();
    man.file_digests[p.filename().string()] = fnv1a_hex(text);
}

std::string g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string series_csv(int n_sites, int n_subspaces, const RealVector& times,
                       const RealMatrix& sites, const RealMatrix& overlap) {
    std::string out = "time";
    for (int s = 1; s <= n_sites; ++s) out += ",site_" + std::to_string(s);
    for (int k = 1; k <= n_subspaces; ++k) out += ",overlap_q" + std::to_string(k);
    out += ",overlap_p\n";
    for (Eigen::Index i = 0; i < times.size(); ++i) {
        out += g17(times[i]);
        for (int s = 0; s < n_sites; ++s) out += "," + g17(sites(i, s));
        for (int k = 0; k <= n_subspaces; ++k) out += "," + g17(overlap(i, k));
        out += "\n";
    }
    return out;
}

// everything a scenario shares across trajectories, built once
struct EnginePack {
    ChainModel model;
    DfsDecomposition dec;
    PureEnsemble members;           // carrier coordinates, normalized
    EvolutionContext ctx;
    Matrix rho0;                    // carrier coordinates
    std::vector<double> initial_overlaps;
};

std::vector<double> carrier_overlaps(const EvolutionContext& ctx, const Matrix& rho) {
    std::vector<double> out;
    double total = 0.0;
    for (const auto& b : ctx.dfs_bases) {
        const double w = std::real((b.adjoint() * rho * b).trace());
        out.push_back(w);
        total += w;
    }
    out.push_back(std::max(0.0, 1.0 - total));
    return out;
}

EnginePack build_pack(const ScenarioConfig& cfg) {
    EnginePack pack;
    try {
        pack.model = build_chain_model(cfg.model);
        pack.dec = analyze_chain(pack.model);
        const PureEnsemble full = realize_initial_state(cfg.initial, pack.model, pack.dec);
        pack.ctx = make_context(pack.model, pack.dec, full.states);
        pack.members.weights = full.weights;
        for (const auto& s : full.states) {
            Vector v = restrict_to_carrier(pack.ctx.carrier, s);
            v.normalize();
            pack.members.states.push_back(std::move(v));
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    pack.rho0 = Matrix::Zero(pack.ctx.carrier.dim(), pack.ctx.carrier.dim());
    for (std::size_t m = 0; m < pack.members.states.size(); ++m)
        pack.rho0 += pack.members.weights[m] * dyad(pack.members.states[m]);
    pack.initial_overlaps = carrier_overlaps(pack.ctx, pack.rho0);
    return pack;
}

void check_scheme(const ScenarioConfig& cfg) {
    const Scheme s = cfg.integrator.scheme;
    switch (cfg.noise) {
    case NoiseKind::QuantumHomodyne:
        if (s != Scheme::EulerMaruyamaIto && s != Scheme::SplitStepMeasurement)
            bad("quantum noise needs scheme euler-maruyama or split-step");
        break;
    case NoiseKind::ClassicalStratonovich:
        if (s != Scheme::HeunStratonovich && s != Scheme::SplitStepUnitary)
            bad("classical noise needs scheme heun or split-step-unitary");
        break;
    case NoiseKind::LindbladOnly:
        if (s != Scheme::DeterministicRk4) bad("lindblad runs use scheme rk4");
        break;
    }
}

int pick_member(const PureEnsemble& ens, RngStream& rng) {
    if (ens.states.size() == 1) return 0;
    const double u = rng.next_double();
    double acc = 0.0;
    for (std::size_t m = 0; m < ens.weights.size(); ++m) {
        acc += ens.weights[m];
        if (u < acc) return static_cast<int>(m);
    }
    return static_cast<int>(ens.states.size()) - 1;
}

std::vector<TrajectoryRecord> run_ensemble(const EnginePack& pack, const ScenarioConfig& cfg,
                                           const RunGrid& grid, std::uint64_t stream_first) {
    const int m = cfg.ensemble.size;
    std::vector<TrajectoryRecord> records(static_cast<std::size_t>(m));

    const auto run_one = [&](int i) {
        RngStream rng(cfg.ensemble.seed, stream_first + static_cast<std::uint64_t>(i));
        TrajectoryRecord rec;
        try {
            if (cfg.noise == NoiseKind::QuantumHomodyne) {
                const int pick = pick_member(pack.members, rng);
                rec = evolve_trajectory_ctx(pack.members.states[static_cast<std::size_t>(pick)],
                                            pack.ctx, cfg.integrator, grid, cfg.trap, rng);
            } else {
                rec = evolve_classical_noise_ctx(pack.members, pack.ctx, cfg.integrator, grid,
                                                 cfg.trap, rng);
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("trajectory " + std::to_string(stream_first + i) + ": " +
                                     e.what());
        }
        rec.stream_id = static_cast<int>(stream_first) + i;
        records[static_cast<std::size_t>(i)] = std::move(rec);
    };

    int workers = cfg.ensemble.workers > 0
                      ? cfg.ensemble.workers
                      : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min(workers, m));
    if (workers == 1) {
        for (int i = 0; i < m; ++i) run_one(i);
        return records;
    }

    std::atomic<int> cursor{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mx;
    const auto work = [&] {
        for (;;) {
            const int i = cursor.fetch_add(1);
            if (i >= m || failed.load()) break;
            try {
                run_one(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mx);
                if (!failed.exchange(true)) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (failed.load()) std::rethrow_exception(error);
    return records;
}

// Long-time limit of the Lindblad evolution: per dark subspace the initial
// block dephased in energy, per complement block its unique steady state
// weighted by the initial population. Cross-block coherences decay and are
// dropped.
Matrix block_steady_state(const ChainModel& model, const Matrix& block_basis) {
    const Eigen::Index k = block_basis.cols();
    const Matrix hb = block_basis.adjoint() * model.hamiltonian * block_basis;
    const Matrix lb = block_basis.adjoint() * model.measurement * block_basis;
    const Matrix id = Matrix::Identity(k, k);
    const Matrix lsq = lb.adjoint() * lb;
    const Matrix gen = Complex(0, -1) * (kron(id, hb) - kron(hb.transpose(), id)) +
                       kron(lb.conjugate(), lb) -
                       0.5 * (kron(id, lsq) + kron(lsq.transpose(), id));
    const Eigh e = eigh(gen.adjoint() * gen);
    const double scale = std::max(1.0, e.values.cwiseAbs().maxCoeff());
    if (e.values.size() > 1 && e.values[1] < 1e-14 * scale)
        throw ConfigError("complement block has a degenerate steady state; the block-weight "
                          "fidelity model does not apply");
    Matrix rho = Eigen::Map<const Matrix>(e.vectors.col(0).data(), k, k);
    rho = 0.5 * (rho + rho.adjoint());
    const double tr = rho.trace().real();
    if (std::abs(tr) < 1e-12)
        throw std::runtime_error("complement block kernel element is traceless");
    rho /= tr;
    const Eigh er = eigh(rho);
    if (er.values.minCoeff() < -1e-8)
        throw std::runtime_error("complement block steady state not positive");
    return rho;
}

Matrix steady_state_projection(const EnginePack& pack) {
    const Carrier& carrier = pack.ctx.carrier;
    const Eigen::Index d = carrier.dim();
    Matrix sigma = Matrix::Zero(d, d);
    double placed = 0.0;

    for (const auto& sub : pack.dec.subspaces) {
        Matrix b(d, sub.full_basis.cols());
        for (Eigen::Index c = 0; c < sub.full_basis.cols(); ++c)
            b.col(c) = restrict_to_carrier(carrier, Vector(sub.full_basis.col(c)));
        Matrix m = b.adjoint() * pack.rho0 * b;
        const double tol =
            1e-9 * std::max(1.0, sub.full_energies.cwiseAbs().maxCoeff());
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                if (std::abs(sub.full_energies[i] - sub.full_energies[j]) > tol) m(i, j) = 0;
        sigma += b * m * b.adjoint();
        placed += m.trace().real();
    }

    for (const auto& blk : complement_blocks(pack.model, pack.dec)) {
        Matrix b(d, blk.basis.cols());
        for (Eigen::Index c = 0; c < blk.basis.cols(); ++c)
            b.col(c) = restrict_to_carrier(carrier, Vector(blk.basis.col(c)));
        const double w = std::real((b.adjoint() * pack.rho0 * b).trace());
        if (w <= 1e-10) continue;
        if (lindblad_kernel_dim(pack.model, blk.basis) != 1)
            throw ConfigError("a populated complement block lacks a unique steady state; "
                              "the block-weight fidelity model does not apply");
        sigma += w * (b * block_steady_state(pack.model, blk.basis) * b.adjoint());
        placed += w;
    }

    if (std::abs(placed - 1.0) > 1e-8)
        throw std::runtime_error("steady-state projection lost weight: trace " +
                                 std::to_string(placed));
    return sigma;
}

void summarize(const std::vector<TrajectoryRecord>& records, RealVector& times, RealMatrix& mean,
               RealMatrix& se) {
    if (records.empty()) return;
    const Eigen::Index ns = records.front().overlap.rows();
    const Eigen::Index nc = records.front().overlap.cols();
    times = records.front().times;
    RealMatrix sum = RealMatrix::Zero(ns, nc);
    RealMatrix sumsq = RealMatrix::Zero(ns, nc);
    for (const auto& r : records) {
        sum += r.overlap;
        sumsq += r.overlap.cwiseAbs2();
    }
    const double m = static_cast<double>(records.size());
    mean = sum / m;
    if (records.size() > 1) {
        se = ((sumsq - m * mean.cwiseAbs2()) / (m - 1.0)).cwiseMax(0.0).cwiseSqrt() /
             std::sqrt(m);
    } else {
        se = RealMatrix::Zero(ns, nc);
    }
}

Json verdict_json(const SyncVerdict& v) {
    Json j;
    j["synchronized"] = v.synchronized;
    if (v.frequency) j["frequency"] = *v.frequency;
    if (v.relative_phase)
        j["relative_phase"] = *v.relative_phase == RelativePhase::AntiPhase ? "anti" : "in";
    j["amplitude"] = v.amplitude;
    j["residual_noise"] = v.residual_noise;
    return j;
}

std::string effective_outdir(const ScenarioConfig& cfg) {
    if (const char* env = std::getenv("QSYNC_OUTPUT_DIR")) {
        if (*env) return env;
    }
    return cfg.outputs.directory;
}

} // namespace

ScenarioConfig parse_config(const std::string& json_text) {
    Json j;
    try {
        j = Json::parse(json_text);
    } catch (const Json::parse_error& e) {
        bad(std::string("not valid JSON: ") + e.what());
    }
    check_keys(j, "", {"name", "model", "initial", "noise", "integrator", "run", "trap",
                       "ensemble", "analysis", "outputs", "fidelity_sweep"});

    ScenarioConfig cfg;
    cfg.name = str_or(j, "name", "scenario", "");

    if (!j.contains("model")) bad("model section missing");
    const Json& jm = j.at("model");
    check_keys(jm, "model", {"n", "site", "j", "h", "gamma"});
    cfg.model.n = int_or(jm, "n", 0, "model");
    cfg.model.site = int_or(jm, "site", 0, "model");
    cfg.model.j = num_or(jm, "j", 1.0, "model");
    cfg.model.h = num_or(jm, "h", 1.0, "model");
    cfg.model.gamma = num_or(jm, "gamma", 1.0, "model");
    try {
        validate(cfg.model);
    } catch (const std::invalid_argument& e) {
        bad(e.what());
    }

    if (!j.contains("initial")) bad("initial section missing");
    cfg.initial = parse_initial(j.at("initial"), cfg.model.n);
    try {
        validate(cfg.initial);
    } catch (const std::invalid_argument& e) {
        bad(e.what());
    }

    cfg.noise = parse_noise(str_or(j, "noise", "quantum", ""));

    cfg.integrator.scheme = default_scheme(cfg.noise);
    if (j.contains("integrator")) {
        const Json& ji = j.at("integrator");
        check_keys(ji, "integrator", {"scheme", "dt", "renormalize", "norm_floor", "max_halvings"});
        if (ji.contains("scheme"))
            cfg.integrator.scheme = parse_scheme(str_or(ji, "scheme", "", "integrator"));
        cfg.integrator.dt = num_or(ji, "dt", cfg.integrator.dt, "integrator");
        cfg.integrator.renormalize =
            bool_or(ji, "renormalize", cfg.integrator.renormalize, "integrator");
        cfg.integrator.norm_floor = num_or(ji, "norm_floor", cfg.integrator.norm_floor, "integrator");
        cfg.integrator.max_halvings =
            int_or(ji, "max_halvings", cfg.integrator.max_halvings, "integrator");
    }
    if (!(cfg.integrator.dt > 0)) bad("integrator.dt must be positive");
    check_scheme(cfg);

    if (j.contains("run")) {
        const Json& jr = j.at("run");
        check_keys(jr, "run", {"t_final", "sample_stride", "snapshot_stride"});
        cfg.grid.t_final = num_or(jr, "t_final", cfg.grid.t_final, "run");
        cfg.grid.sample_stride = num_or(jr, "sample_stride", cfg.grid.sample_stride, "run");
        cfg.grid.snapshot_stride = num_or(jr, "snapshot_stride", cfg.grid.snapshot_stride, "run");
    }
    if (cfg.grid.t_final < cfg.integrator.dt) bad("run.t_final must be at least one step");
    if (!(cfg.grid.sample_stride > 0)) bad("run.sample_stride must be positive");

    if (j.contains("trap")) {
        const Json& jt = j.at("trap");
        check_keys(jt, "trap", {"epsilon", "dwell"});
        cfg.trap.epsilon = num_or(jt, "epsilon", cfg.trap.epsilon, "trap");
        cfg.trap.dwell = num_or(jt, "dwell", cfg.trap.dwell, "trap");
    }
    if (!(cfg.trap.epsilon > 0 && cfg.trap.epsilon < 1)) bad("trap.epsilon must be in (0,1)");

    if (j.contains("ensemble")) {
        const Json& je = j.at("ensemble");
        check_keys(je, "ensemble", {"size", "seed", "workers"});
        cfg.ensemble.size = int_or(je, "size", cfg.ensemble.size, "ensemble");
        cfg.ensemble.seed = u64_or(je, "seed", cfg.ensemble.seed, "ensemble");
        cfg.ensemble.workers = int_or(je, "workers", cfg.ensemble.workers, "ensemble");
    }
    if (cfg.ensemble.size < 1) bad("ensemble.size must be positive");

    if (j.contains("analysis")) {
        const Json& ja = j.at("analysis");
        check_keys(ja, "analysis",
                   {"window_fraction", "sync_sites", "mean_window_fraction", "thresholds"});
        cfg.analysis.window_fraction =
            num_or(ja, "window_fraction", cfg.analysis.window_fraction, "analysis");
        cfg.analysis.mean_window_fraction =
            num_or(ja, "mean_window_fraction", cfg.analysis.mean_window_fraction, "analysis");
        if (ja.contains("sync_sites")) {
            if (!ja.at("sync_sites").is_array()) bad("analysis.sync_sites must be an array");
            for (const auto& s : ja.at("sync_sites")) {
                if (!s.is_number_integer()) bad("analysis.sync_sites must hold integers");
                cfg.analysis.sync_sites.push_back(s.get<int>());
            }
        }
        if (ja.contains("thresholds")) {
            const Json& jt = ja.at("thresholds");
            check_keys(jt, "analysis.thresholds",
                       {"frequency_rel", "residual_rel", "drift_rel", "phase_window",
                        "amplitude_floor"});
            SyncThresholds& t = cfg.analysis.thresholds;
            t.frequency_rel = num_or(jt, "frequency_rel", t.frequency_rel, "analysis.thresholds");
            t.residual_rel = num_or(jt, "residual_rel", t.residual_rel, "analysis.thresholds");
            t.drift_rel = num_or(jt, "drift_rel", t.drift_rel, "analysis.thresholds");
            t.phase_window = num_or(jt, "phase_window", t.phase_window, "analysis.thresholds");
            t.amplitude_floor =
                num_or(jt, "amplitude_floor", t.amplitude_floor, "analysis.thresholds");
        }
    }
    if (!(cfg.analysis.window_fraction > 0 && cfg.analysis.window_fraction <= 1))
        bad("analysis.window_fraction must be in (0,1]");
    if (!cfg.analysis.sync_sites.empty()) {
        if (cfg.analysis.sync_sites.size() != 2) bad("analysis.sync_sites needs exactly two sites");
        for (int s : cfg.analysis.sync_sites)
            if (s < 1 || s > cfg.model.n) bad("analysis.sync_sites out of range");
        if (cfg.analysis.sync_sites[0] == cfg.analysis.sync_sites[1])
            bad("analysis.sync_sites must differ");
    }

    if (j.contains("outputs")) {
        const Json& jo = j.at("outputs");
        check_keys(jo, "outputs",
                   {"directory", "csv_trajectories", "lindblad_csv", "summary_series"});
        cfg.outputs.directory = str_or(jo, "directory", cfg.outputs.directory, "outputs");
        cfg.outputs.csv_trajectories =
            int_or(jo, "csv_trajectories", cfg.outputs.csv_trajectories, "outputs");
        cfg.outputs.lindblad_csv = bool_or(jo, "lindblad_csv", cfg.outputs.lindblad_csv, "outputs");
        cfg.outputs.summary_series =
            bool_or(jo, "summary_series", cfg.outputs.summary_series, "outputs");
    }

    if (j.contains("fidelity_sweep")) {
        const Json& jf = j.at("fidelity_sweep");
        check_keys(jf, "fidelity_sweep",
                   {"weights", "classical_weights", "quantum", "classical", "snapshot_stride"});
        FidelitySweep sweep;
        if (!jf.contains("weights") || !jf.at("weights").is_array() || jf.at("weights").empty())
            bad("fidelity_sweep.weights must be a non-empty array");
        for (const auto& w : jf.at("weights")) {
            if (!w.is_number()) bad("fidelity_sweep.weights must hold numbers");
            sweep.weights.push_back(w.get<double>());
        }
        if (jf.contains("classical_weights")) {
            if (!jf.at("classical_weights").is_array())
                bad("fidelity_sweep.classical_weights must be an array");
            for (const auto& w : jf.at("classical_weights")) {
                if (!w.is_number()) bad("fidelity_sweep.classical_weights must hold numbers");
                sweep.classical_weights.push_back(w.get<double>());
            }
        }
        sweep.quantum = bool_or(jf, "quantum", sweep.quantum, "fidelity_sweep");
        sweep.classical = bool_or(jf, "classical", sweep.classical, "fidelity_sweep");
        sweep.snapshot_stride =
            num_or(jf, "snapshot_stride", sweep.snapshot_stride, "fidelity_sweep");
        for (double w : sweep.weights)
            if (w < 0 || w > 1) bad("fidelity_sweep.weights must lie in [0,1]");
        for (double w : sweep.classical_weights)
            if (w < 0 || w > 1) bad("fidelity_sweep.classical_weights must lie in [0,1]");
        if (!(sweep.snapshot_stride > 0)) bad("fidelity_sweep.snapshot_stride must be positive");
        cfg.fidelity_sweep = std::move(sweep);
    }
    return cfg;
}

std::string serialize_config(const ScenarioConfig& cfg) {
    Json j;
    j["name"] = cfg.name;
    j["model"] = {{"n", cfg.model.n},
                  {"site", cfg.model.site},
                  {"j", cfg.model.j},
                  {"h", cfg.model.h},
                  {"gamma", cfg.model.gamma}};
    j["initial"] = initial_json(cfg.initial);
    j["noise"] = noise_name(cfg.noise);
    j["integrator"] = {{"scheme", scheme_name(cfg.integrator.scheme)},
                       {"dt", cfg.integrator.dt},
                       {"renormalize", cfg.integrator.renormalize},
                       {"norm_floor", cfg.integrator.norm_floor},
                       {"max_halvings", cfg.integrator.max_halvings}};
    j["run"] = {{"t_final", cfg.grid.t_final},
                {"sample_stride", cfg.grid.sample_stride},
                {"snapshot_stride", cfg.grid.snapshot_stride}};
    j["trap"] = {{"epsilon", cfg.trap.epsilon}, {"dwell", cfg.trap.dwell}};
    j["ensemble"] = {{"size", cfg.ensemble.size},
                     {"seed", cfg.ensemble.seed},
                     {"workers", cfg.ensemble.workers}};
    Json ja;
    ja["window_fraction"] = cfg.analysis.window_fraction;
    ja["mean_window_fraction"] = cfg.analysis.mean_window_fraction;
    if (!cfg.analysis.sync_sites.empty()) ja["sync_sites"] = cfg.analysis.sync_sites;
    ja["thresholds"] = {{"frequency_rel", cfg.analysis.thresholds.frequency_rel},
                        {"residual_rel", cfg.analysis.thresholds.residual_rel},
                        {"drift_rel", cfg.analysis.thresholds.drift_rel},
                        {"phase_window", cfg.analysis.thresholds.phase_window},
                        {"amplitude_floor", cfg.analysis.thresholds.amplitude_floor}};
    j["analysis"] = std::move(ja);
    j["outputs"] = {{"directory", cfg.outputs.directory},
                    {"csv_trajectories", cfg.outputs.csv_trajectories},
                    {"lindblad_csv", cfg.outputs.lindblad_csv},
                    {"summary_series", cfg.outputs.summary_series}};
    if (cfg.fidelity_sweep) {
        Json jf;
        jf["weights"] = cfg.fidelity_sweep->weights;
        if (!cfg.fidelity_sweep->classical_weights.empty())
            jf["classical_weights"] = cfg.fidelity_sweep->classical_weights;
        jf["quantum"] = cfg.fidelity_sweep->quantum;
        jf["classical"] = cfg.fidelity_sweep->classical;
        jf["snapshot_stride"] = cfg.fidelity_sweep->snapshot_stride;
        j["fidelity_sweep"] = std::move(jf);
    }
    return j.dump(2) + "\n";
}

std::string preset_directory() {
    if (const char* env = std::getenv("QSYNC_PRESET_DIR")) {
        if (*env) return env;
    }
    return "presets";
}

ScenarioConfig load_config(const std::string& path_or_name) {
    fs::path p = path_or_name;
    if (!fs::exists(p)) {
        const fs::path candidate = fs::path(preset_directory()) / (path_or_name + ".json");
        if (!fs::exists(candidate)) {
            std::string msg = "no config file or preset named '" + path_or_name + "'";
            const auto names = list_presets();
            if (!names.empty()) {
                msg += "; available presets:";
                for (const auto& n : names) msg += " " + n;
            }
            throw ConfigError(msg);
        }
        p = candidate;
    }
    return parse_config(read_file(p));
}

std::vector<std::string> list_presets() {
    std::vector<std::string> names;
    const fs::path dir = preset_directory();
    if (!fs::is_directory(dir)) return names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json") names.push_back(e.path().stem().string());
    std::sort(names.begin(), names.end());
    return names;
}

ScenarioResult run_scenario(const ScenarioConfig& cfg_in) {
    const auto t0 = std::chrono::steady_clock::now();
    ScenarioResult res;
    res.config = cfg_in;
    res.config.outputs.directory = effective_outdir(cfg_in);
    const ScenarioConfig& cfg = res.config;
    check_scheme(cfg);

    const EnginePack pack = build_pack(cfg);
    res.carrier_dim = pack.ctx.carrier.dim();
    res.initial_overlaps = pack.initial_overlaps;
    const int n_sub = pack.ctx.n_subspaces;

    if (cfg.noise != NoiseKind::LindbladOnly)
        res.records = run_ensemble(pack, cfg, cfg.grid, 0);

    if (cfg.noise != NoiseKind::ClassicalStratonovich) {
        res.lindblad = evolve_lindblad_ctx(pack.rho0, pack.ctx, cfg.integrator.dt, cfg.grid,
                                           cfg.analysis.mean_window_fraction);
    }

    const double t_hi = cfg.grid.t_final;
    const double t_lo = t_hi * (1.0 - cfg.analysis.window_fraction);
    const auto site_verdict = [&](const RealVector& times, const RealMatrix& sites) {
        const int a = cfg.analysis.sync_sites[0] - 1;
        const int b = cfg.analysis.sync_sites[1] - 1;
        return detect_sync(times, sites.col(a), sites.col(b), t_lo, t_hi,
                           cfg.analysis.thresholds);
    };
    if (cfg.analysis.sync_sites.size() == 2) {
        res.verdicts.reserve(res.records.size());
        for (const auto& rec : res.records) res.verdicts.push_back(site_verdict(rec.times, rec.sites));
        if (res.lindblad) res.lindblad_verdict = site_verdict(res.lindblad->times, res.lindblad->sites);
    }

    res.trap = stationary_histogram(res.records, n_sub);
    res.frequencies = multiplexing_report(res.verdicts);
    res.hitting = hitting_time_stats(res.records, n_sub);
    summarize(res.records, res.mean_times, res.mean_overlap, res.overlap_se);

    RunManifest& man = res.manifest;
    man.code_version = kCodeVersion;
    man.seed = cfg.ensemble.seed;
    man.stream_first = 0;
    man.stream_count = static_cast<int>(res.records.size());
    man.config_json = serialize_config(cfg);

    const fs::path outdir = cfg.outputs.directory;
    fs::create_directories(outdir);
    const int n_csv = std::min<int>(cfg.outputs.csv_trajectories,
                                    static_cast<int>(res.records.size()));
    for (int i = 0; i < n_csv; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "traj_%04d.csv", i);
        const auto& r = res.records[static_cast<std::size_t>(i)];
        write_file(outdir / name, series_csv(cfg.model.n, n_sub, r.times, r.sites, r.overlap),
                   man);
    }
    if (cfg.outputs.lindblad_csv && res.lindblad) {
        write_file(outdir / "lindblad.csv",
                   series_csv(cfg.model.n, n_sub, res.lindblad->times, res.lindblad->sites,
                              res.lindblad->overlap),
                   man);
    }

    Json summary;
    summary["name"] = cfg.name;
    summary["carrier_dim"] = res.carrier_dim;
    {
        Json subs = Json::array();
        const double root_gamma = std::sqrt(cfg.model.gamma * cfg.model.j);
        for (const auto& sub : pack.dec.subspaces) {
            Json s;
            s["c_over_root_gamma"] = root_gamma > 0 ? sub.c / root_gamma : sub.c;
            s["dim"] = sub.dim();
            s["full_dim"] = sub.full_dim();
            s["frequencies"] = sub.frequencies;
            subs.push_back(std::move(s));
        }
        summary["subspaces"] = std::move(subs);
    }
    summary["initial_overlaps"] = res.initial_overlaps;
    summary["trapping"] = {{"counts", res.trap.counts},
                           {"fractions", res.trap.fractions},
                           {"undecided", res.trap.undecided},
                           {"total", res.trap.total}};
    summary["synchronization"] = {{"frequencies", res.frequencies.frequencies},
                                  {"counts", res.frequencies.counts},
                                  {"fractions", res.frequencies.fractions},
                                  {"ci3", res.frequencies.ci3},
                                  {"unsynchronized", res.frequencies.unsynchronized},
                                  {"total", res.frequencies.total}};
    summary["hitting"] = {{"count", res.hitting.count},
                          {"mean", res.hitting.mean},
                          {"variance", res.hitting.variance}};
    if (res.lindblad) {
        Json jl;
        jl["trace_drift"] = res.lindblad->trace_drift;
        if (res.lindblad_verdict) jl["verdict"] = verdict_json(*res.lindblad_verdict);
        summary["lindblad"] = std::move(jl);
    }
    if (cfg.outputs.summary_series && res.mean_times.size() > 0) {
        Json series;
        series["times"] = std::vector<double>(res.mean_times.begin(), res.mean_times.end());
        Json mean = Json::array(), se = Json::array();
        for (Eigen::Index c = 0; c < res.mean_overlap.cols(); ++c) {
            mean.push_back(std::vector<double>(res.mean_overlap.col(c).begin(),
                                               res.mean_overlap.col(c).end()));
            se.push_back(
                std::vector<double>(res.overlap_se.col(c).begin(), res.overlap_se.col(c).end()));
        }
        series["mean_overlap"] = std::move(mean);
        series["std_error"] = std::move(se);
        summary["mean_series"] = std::move(series);
    }

    const auto t1 = std::chrono::steady_clock::now();
    man.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    summary["wall_seconds"] = man.wall_seconds;
    write_file(outdir / "summary.json", summary.dump(2) + "\n", man);

    Json manifest;
    manifest["code_version"] = man.code_version;
    manifest["seed"] = man.seed;
    manifest["streams"] = {{"first", man.stream_first}, {"count", man.stream_count}};
    manifest["wall_seconds"] = man.wall_seconds;
    manifest["files"] = man.file_digests;
    manifest["config"] = Json::parse(man.config_json);
    std::ofstream mf(outdir / "manifest.json", std::ios::binary);
    mf << manifest.dump(2) << "\n";
    return res;
}

FidelitySweepResult run_fidelity_sweep(const ScenarioConfig& cfg_in) {
    const auto t0 = std::chrono::steady_clock::now();
    ScenarioConfig cfg = cfg_in;
    cfg.outputs.directory = effective_outdir(cfg_in);
    if (!cfg.fidelity_sweep) throw ConfigError("scenario has no fidelity_sweep section");
    if (cfg.initial.kind != InitialStateSpec::Kind::Mixture || cfg.initial.terms.size() != 2)
        throw ConfigError("fidelity sweeps need a two-term mixture initial state");
    const FidelitySweep& sweep = *cfg.fidelity_sweep;

    FidelitySweepResult out;
    RunManifest& man = out.manifest;
    man.code_version = kCodeVersion;
    man.seed = cfg.ensemble.seed;
    man.config_json = serialize_config(cfg);

    std::uint64_t stream = 0;
    const auto pack_for = [&](double w) {
        ScenarioConfig point = cfg;
        point.initial.terms[0].weight = w;
        point.initial.terms[1].weight = 1.0 - w;
        return point;
    };

    RunGrid grid = cfg.grid;
    grid.snapshot_stride = sweep.snapshot_stride;

    // snapshot-heavy records are reduced chunk by chunk; the stream offsets
    // match an unchunked run, so results do not depend on the chunk size
    const auto reduce_ensemble = [](const EnginePack& pack, const ScenarioConfig& point,
                                    const RunGrid& g, std::uint64_t first, auto&& sink) {
        const int total = point.ensemble.size;
        const int chunk = 50;
        for (int done = 0; done < total; done += chunk) {
            ScenarioConfig part = point;
            part.ensemble.size = std::min(chunk, total - done);
            for (const auto& r :
                 run_ensemble(pack, part, g, first + static_cast<std::uint64_t>(done)))
                sink(r);
        }
        return static_cast<std::uint64_t>(total);
    };

    std::string csv = "noise,w,mean_fidelity,std_error,predicted,empirical_variance,"
                      "predicted_variance,popoviciu_bound,n,purity_drift\n";

    if (sweep.quantum) {
        for (double w : sweep.weights) {
            ScenarioConfig point = pack_for(w);
            point.noise = NoiseKind::QuantumHomodyne;
            point.integrator.scheme = cfg.noise == NoiseKind::QuantumHomodyne
                                          ? cfg.integrator.scheme
                                          : Scheme::SplitStepMeasurement;
            const EnginePack pack = build_pack(point);
            const Matrix steady = steady_state_projection(pack);
            std::vector<Matrix> means;
            means.reserve(static_cast<std::size_t>(point.ensemble.size));
            stream += reduce_ensemble(pack, point, grid, stream, [&](const TrajectoryRecord& r) {
                means.push_back(window_mean_state(r, cfg.analysis.window_fraction));
            });
            const FidelityStats st =
                ergodicity_fidelity(means, steady, pack.initial_overlaps);
            out.quantum_weights.push_back(w);
            out.quantum.push_back(st);
            csv += "quantum," + g17(w) + "," + g17(st.empirical_mean) + "," + g17(st.std_error) +
                   "," + g17(st.predicted) + "," + g17(st.empirical_variance) + "," +
                   g17(st.predicted_variance) + "," + g17(st.popoviciu_bound) + "," +
                   std::to_string(st.n) + ",\n";
        }
    }
    if (sweep.classical) {
        const auto& ws = sweep.classical_weights.empty() ? sweep.weights : sweep.classical_weights;
        for (double w : ws) {
            ScenarioConfig point = pack_for(w);
            point.noise = NoiseKind::ClassicalStratonovich;
            point.integrator.scheme = Scheme::SplitStepUnitary;
            const EnginePack pack = build_pack(point);
            const Matrix steady = steady_state_projection(pack);
            std::vector<Matrix> means;
            means.reserve(static_cast<std::size_t>(point.ensemble.size));
            double drift = 0.0;
            stream += reduce_ensemble(pack, point, grid, stream, [&](const TrajectoryRecord& r) {
                means.push_back(window_mean_ensemble(r, pack.members.weights,
                                                     cfg.analysis.window_fraction));
                if (r.purity.size() > 0)
                    drift = std::max(drift,
                                     (r.purity.array() - r.purity[0]).abs().maxCoeff());
            });
            const FidelityStats st =
                ergodicity_fidelity(means, steady, pack.initial_overlaps);
            out.classical_weights.push_back(w);
            out.classical.push_back(st);
            out.classical_purity_drift.push_back(drift);
            csv += "classical," + g17(w) + "," + g17(st.empirical_mean) + "," +
                   g17(st.std_error) + "," + g17(st.predicted) + "," +
                   g17(st.empirical_variance) + "," + g17(st.predicted_variance) + "," +
                   g17(st.popoviciu_bound) + "," + std::to_string(st.n) + "," + g17(drift) + "\n";
        }
    }
    man.stream_count = static_cast<int>(stream);

    const fs::path outdir = cfg.outputs.directory;
    fs::create_directories(outdir);
    write_file(outdir / "fidelity_curve.csv", csv, man);
    const auto t1 = std::chrono::steady_clock::now();
    man.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

    Json manifest;
    manifest["code_version"] = man.code_version;
    manifest["seed"] = man.seed;
    manifest["streams"] = {{"first", 0}, {"count", man.stream_count}};
    manifest["wall_seconds"] = man.wall_seconds;
    manifest["files"] = man.file_digests;
    manifest["config"] = Json::parse(man.config_json);
    std::ofstream mf(outdir / "manifest.json", std::ios::binary);
    mf << manifest.dump(2) << "\n";
    return out;
}

SweepResult sweep_sync_time(const ScenarioConfig& base_in, const std::vector<double>& gammas) {
    const auto t0 = std::chrono::steady_clock::now();
    ScenarioConfig base = base_in;
    base.outputs.directory = effective_outdir(base_in);
    if (gammas.empty()) throw ConfigError("sweep: empty gamma grid");
    for (double g : gammas)
        if (!(g > 0)) throw ConfigError("sweep: gamma values must be positive");

    SweepResult out;
    RunManifest& man = out.manifest;
    man.code_version = kCodeVersion;
    man.seed = base.ensemble.seed;
    man.config_json = serialize_config(base);

    std::string csv = "gamma,n_trapped,mean_hitting_time,hitting_time_variance,"
                      "dfs_fraction,undecided\n";
    std::uint64_t stream = 0;
    for (double g : gammas) {
        ScenarioConfig point = base;
        point.model.gamma = g;
        const EnginePack pack = build_pack(point);
        const auto records = run_ensemble(pack, point, point.grid, stream);
        stream += static_cast<std::uint64_t>(records.size());
        SweepPoint sp;
        sp.gamma = g;
        sp.trap = stationary_histogram(records, pack.ctx.n_subspaces);
        sp.hitting = hitting_time_stats(records, pack.ctx.n_subspaces);
        double dfs_fraction = 0.0;
        for (int k = 0; k < pack.ctx.n_subspaces; ++k)
            dfs_fraction += sp.trap.fractions.empty() ? 0.0
                                                      : sp.trap.fractions[static_cast<std::size_t>(k)];
        csv += g17(g) + "," + std::to_string(sp.hitting.count) + "," + g17(sp.hitting.mean) +
               "," + g17(sp.hitting.variance) + "," + g17(dfs_fraction) + "," +
               std::to_string(sp.trap.undecided) + "\n";
        out.points.push_back(std::move(sp));
    }
    man.stream_count = static_cast<int>(stream);

    const fs::path outdir = base.outputs.directory;
    fs::create_directories(outdir);
    write_file(outdir / "sweep_sync_time.csv", csv, man);
    const auto t1 = std::chrono::steady_clock::now();
    man.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

    Json manifest;
    manifest["code_version"] = man.code_version;
    manifest["seed"] = man.seed;
    manifest["gammas"] = gammas;
    manifest["streams"] = {{"first", 0}, {"count", man.stream_count}};
    manifest["wall_seconds"] = man.wall_seconds;
    manifest["files"] = man.file_digests;
    manifest["config"] = Json::parse(man.config_json);
    std::ofstream mf(outdir / "manifest.json", std::ios::binary);
    mf << manifest.dump(2) << "\n";
    return out;
}

std::string analyze_report(const ChainParams& p) {
    ChainModel model;
    DfsDecomposition dec;
    try {
        model = build_chain_model(p);
        dec = analyze_chain(model);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    Json j;
    j["model"] = {{"n", p.n}, {"site", p.site}, {"j", p.j}, {"h", p.h}, {"gamma", p.gamma}};
    j["dim"] = dec.dim();
    const double root_gamma = std::sqrt(p.gamma * p.j);
    Json subs = Json::array();
    Eigen::Index dark_total = 0;
    for (const auto& sub : dec.subspaces) {
        Json s;
        s["c_over_root_gamma"] = root_gamma > 0 ? sub.c / root_gamma : sub.c;
        s["dim"] = sub.dim();
        s["full_dim"] = sub.full_dim();
        s["energies"] = std::vector<double>(sub.energies.begin(), sub.energies.end());
        s["frequencies"] = sub.frequencies;
        if (sub.frequencies.size() == 1) {
            const RealVector mode = synchronized_eigenmode(model, sub);
            s["eigenmode"] = std::vector<double>(mode.begin(), mode.end());
        }
        dark_total += sub.full_dim();
        subs.push_back(std::move(s));
    }
    j["subspaces"] = std::move(subs);

    Json blocks = Json::array();
    for (const auto& blk : complement_blocks(model, dec)) {
        Json b;
        b["dim"] = blk.basis.cols();
        b["energies"] = std::vector<double>(blk.energies.begin(), blk.energies.end());
        blocks.push_back(std::move(b));
    }
    j["complement"] = {{"dim", dec.dim() - dark_total}, {"blocks", std::move(blocks)}};
    return j.dump(2) + "\n";
}

} // namespace qsync

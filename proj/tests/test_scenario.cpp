#include "qsync/scenario.hpp"
#include "doctest.h"
#include <nlohmann/json.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace qsync;
namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// a 2-qubit scenario with an explicit state; cheap enough for smoke runs
std::string tiny_config(const std::string& outdir) {
    Json j;
    j["name"] = "tiny";
    j["model"] = {{"n", 2}, {"site", 1}, {"gamma", 0.6}, {"h", 0.5}};
    j["initial"] = {{"kind", "explicit"},
                    {"amplitudes", Json::array({Json::array({0.6, 0.0}), Json::array({0.0, 0.0}),
                                                Json::array({0.0, 0.0}), Json::array({0.8, 0.0})})}};
    j["integrator"] = {{"dt", 5e-3}};
    j["run"] = {{"t_final", 2.0}, {"sample_stride", 0.05}};
    j["ensemble"] = {{"size", 6}, {"seed", 42}, {"workers", 1}};
    j["outputs"] = {{"directory", outdir},
                    {"csv_trajectories", 2},
                    {"lindblad_csv", true},
                    {"summary_series", true}};
    return j.dump();
}

std::string five_site_config() {
    Json j;
    j["name"] = "labels";
    j["model"] = {{"n", 5}, {"site", 3}, {"gamma", 0.4}};
    j["initial"] = {{"kind", "mixture"},
                    {"terms", Json::array({Json{{"label", "q1"}, {"weight", 0.4}},
                                           Json{{"label", "p"}, {"weight", 0.6}}})}};
    j["integrator"] = {{"dt", 5e-3}};
    j["run"] = {{"t_final", 1.0}, {"sample_stride", 0.05}};
    j["ensemble"] = {{"size", 2}, {"seed", 7}, {"workers", 1}};
    j["outputs"] = {{"directory", "scenario_out/labels"}, {"csv_trajectories", 0}};
    return j.dump();
}

struct EnvGuard {
    EnvGuard() {
        unsetenv("QSYNC_OUTPUT_DIR");
        unsetenv("QSYNC_PRESET_DIR");
    }
    ~EnvGuard() {
        unsetenv("QSYNC_OUTPUT_DIR");
        unsetenv("QSYNC_PRESET_DIR");
    }
};

} // namespace

TEST_CASE("config parsing fills defaults") {
    EnvGuard env;
    const ScenarioConfig cfg = parse_config(tiny_config("out/tiny"));
    CHECK(cfg.name == "tiny");
    CHECK(cfg.noise == NoiseKind::QuantumHomodyne);
    CHECK(cfg.integrator.scheme == Scheme::SplitStepMeasurement); // default for quantum noise
    CHECK(cfg.integrator.renormalize);
    CHECK(cfg.trap.epsilon == doctest::Approx(1e-3));
    CHECK(cfg.trap.dwell == doctest::Approx(1.0));
    CHECK(cfg.analysis.window_fraction == doctest::Approx(0.5));
    CHECK(cfg.analysis.sync_sites.empty());
    CHECK(cfg.ensemble.size == 6);
    CHECK_FALSE(cfg.fidelity_sweep.has_value());

    const ScenarioConfig classical = parse_config(
        R"({"model":{"n":2,"site":1},"noise":"classical",
            "initial":{"kind":"explicit","amplitudes":[[1,0],[0,0],[0,0],[0,0]]}})");
    CHECK(classical.integrator.scheme == Scheme::SplitStepUnitary);

    const ScenarioConfig lind = parse_config(
        R"({"model":{"n":2,"site":1},"noise":"lindblad",
            "initial":{"kind":"explicit","amplitudes":[[1,0],[0,0],[0,0],[0,0]]}})");
    CHECK(lind.integrator.scheme == Scheme::DeterministicRk4);
}

TEST_CASE("config parsing rejects unknown keys with their path") {
    EnvGuard env;
    Json j = Json::parse(tiny_config("out"));
    j["model"]["bogus"] = 1;
    CHECK_THROWS_WITH_AS(parse_config(j.dump()), "config: unknown key 'model.bogus'", ConfigError);

    Json j2 = Json::parse(tiny_config("out"));
    j2["extra_section"] = Json::object();
    CHECK_THROWS_AS(parse_config(j2.dump()), ConfigError);

    Json j3 = Json::parse(tiny_config("out"));
    j3["integrator"]["step"] = 0.1;
    CHECK_THROWS_WITH_AS(parse_config(j3.dump()), "config: unknown key 'integrator.step'",
                         ConfigError);

    Json j4 = Json::parse(tiny_config("out"));
    j4["analysis"] = {{"thresholds", {{"freq", 0.1}}}};
    CHECK_THROWS_WITH_AS(parse_config(j4.dump()),
                         "config: unknown key 'analysis.thresholds.freq'", ConfigError);
}

TEST_CASE("config parsing rejects invalid values") {
    EnvGuard env;
    const auto mutate = [](const char* pointer, Json value) {
        Json j = Json::parse(tiny_config("out"));
        j[Json::json_pointer(pointer)] = std::move(value);
        return j.dump();
    };
    CHECK_THROWS_AS(parse_config("not json at all"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"model":{"n":2,"site":1}})"), ConfigError); // no initial
    CHECK_THROWS_AS(parse_config(R"({"initial":{"kind":"mixture","terms":[{"label":"p"}]}})"),
                    ConfigError); // no model
    CHECK_THROWS_AS(parse_config(mutate("/model/n", 11)), ConfigError);
    CHECK_THROWS_AS(parse_config(mutate("/model/site", 3)), ConfigError);
    CHECK_THROWS_AS(parse_config(mutate("/integrator/dt", -1.0)), ConfigError);
    CHECK_THROWS_AS(parse_config(mutate("/run/t_final", 1e-9)), ConfigError);
    CHECK_THROWS_AS(parse_config(mutate("/trap", Json{{"epsilon", 1.5}})), ConfigError);
    CHECK_THROWS_AS(parse_config(mutate("/ensemble/size", 0)), ConfigError);
    CHECK_THROWS_AS(parse_config(mutate("/noise", "thermal")), ConfigError);
    CHECK_THROWS_AS(parse_config(mutate("/integrator/scheme", "heun")), ConfigError); // quantum+heun
    CHECK_THROWS_AS(parse_config(mutate("/analysis", Json{{"sync_sites", {1, 1}}})), ConfigError);
    CHECK_THROWS_AS(parse_config(mutate("/analysis", Json{{"sync_sites", {0, 2}}})), ConfigError);
    CHECK_THROWS_AS(parse_config(mutate("/analysis", Json{{"sync_sites", {1, 2, 1}}})), ConfigError);
    CHECK_THROWS_AS(parse_config(mutate("/initial/amplitudes", Json::array({Json::array({1, 0})}))),
                    ConfigError); // wrong length
    CHECK_THROWS_AS(
        parse_config(mutate("/initial", Json{{"kind", "mixture"}, {"terms", Json::array()}})),
        ConfigError);
}

TEST_CASE("serialization round trip is idempotent") {
    EnvGuard env;
    Json j = Json::parse(tiny_config("out/rt"));
    j["analysis"] = {{"sync_sites", {1, 2}}, {"window_fraction", 0.25}};
    j["fidelity_sweep"] = {{"weights", {0.0, 0.5, 1.0}}, {"classical_weights", {0.5}}};
    j["noise"] = "quantum";

    const std::string s1 = serialize_config(parse_config(j.dump()));
    const std::string s2 = serialize_config(parse_config(s1));
    CHECK(s1 == s2);

    const ScenarioConfig cfg = parse_config(s1);
    CHECK(cfg.analysis.sync_sites == std::vector<int>{1, 2});
    REQUIRE(cfg.fidelity_sweep.has_value());
    CHECK(cfg.fidelity_sweep->weights.size() == 3);
    CHECK(cfg.fidelity_sweep->classical_weights == std::vector<double>{0.5});
}

TEST_CASE("shipped presets load, validate and round trip") {
    EnvGuard env;
    setenv("QSYNC_PRESET_DIR", QSYNC_SOURCE_PRESETS, 1);
    const std::vector<std::string> names = list_presets();
    const std::vector<std::string> expected = {"fig1", "fig1-superposition", "fig2",
                                               "fig3a", "fig3c", "zeno5"};
    CHECK(names == expected);
    for (const auto& n : names) {
        const ScenarioConfig cfg = load_config(n);
        CHECK(cfg.name == n);
        const std::string s1 = serialize_config(cfg);
        CHECK(serialize_config(parse_config(s1)) == s1);
    }
    // a literal path bypasses the preset directory
    const fs::path direct = fs::path(QSYNC_SOURCE_PRESETS) / "fig1.json";
    CHECK(load_config(direct.string()).model.n == 8);

    try {
        load_config("does-not-exist");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("available presets") != std::string::npos);
        CHECK(std::string(e.what()).find("fig1") != std::string::npos);
    }
}

TEST_CASE("a small run writes its outputs deterministically") {
    EnvGuard env;
    fs::remove_all("scenario_out");
    ScenarioConfig cfg = parse_config(tiny_config("scenario_out/a"));
    const ScenarioResult ra = run_scenario(cfg);

    const fs::path dir = "scenario_out/a";
    REQUIRE(fs::exists(dir / "traj_0000.csv"));
    REQUIRE(fs::exists(dir / "traj_0001.csv"));
    REQUIRE(fs::exists(dir / "lindblad.csv"));
    REQUIRE(fs::exists(dir / "summary.json"));
    REQUIRE(fs::exists(dir / "manifest.json"));

    const std::string csv = slurp(dir / "traj_0000.csv");
    CHECK(csv.rfind("time,site_1,site_2,overlap_p\n", 0) == 0);
    CHECK(csv.find("\n0,") != std::string::npos);

    const Json summary = Json::parse(slurp(dir / "summary.json"));
    CHECK(summary.at("name") == "tiny");
    CHECK(summary.at("trapping").at("total") == 6);
    CHECK(summary.at("lindblad").at("trace_drift").get<double>() < 1e-8);
    CHECK(summary.at("mean_series").at("times").size() == ra.mean_times.size());

    const Json manifest = Json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest.at("code_version").get<std::string>().rfind("qsync", 0) == 0);
    CHECK(manifest.at("streams").at("count") == 6);
    CHECK(manifest.at("files").contains("traj_0000.csv"));
    CHECK(manifest.at("config").at("model").at("n") == 2);

    // same seed, more workers: byte-identical trajectory files
    ScenarioConfig cfg2 = parse_config(tiny_config("scenario_out/b"));
    cfg2.ensemble.workers = 2;
    run_scenario(cfg2);
    CHECK(slurp("scenario_out/b/traj_0000.csv") == slurp(dir / "traj_0000.csv"));
    CHECK(slurp("scenario_out/b/traj_0001.csv") == slurp(dir / "traj_0001.csv"));
    CHECK(slurp("scenario_out/b/lindblad.csv") == slurp(dir / "lindblad.csv"));

    // the environment override wins over the configured directory
    setenv("QSYNC_OUTPUT_DIR", "scenario_out/override", 1);
    const ScenarioResult rc = run_scenario(cfg);
    CHECK(rc.config.outputs.directory == "scenario_out/override");
    CHECK(fs::exists("scenario_out/override/summary.json"));
    unsetenv("QSYNC_OUTPUT_DIR");
}

TEST_CASE("labelled initial states recover the subspace weights") {
    EnvGuard env;
    const ScenarioConfig cfg = parse_config(five_site_config());
    const ScenarioResult res = run_scenario(cfg);
    REQUIRE(res.initial_overlaps.size() == 3); // q1, q2, complement
    CHECK(res.initial_overlaps[0] == doctest::Approx(0.4).epsilon(1e-9));
    CHECK(res.initial_overlaps[1] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(res.initial_overlaps[2] == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(res.carrier_dim < 32); // support closure beats the full space

    Json j = Json::parse(five_site_config());
    j["initial"] = {{"kind", "superposition"},
                    {"terms", Json::array({Json{{"label", "q2"}, {"weight", 0.5}},
                                           Json{{"label", "p"}, {"weight", 0.5}}})}};
    const ScenarioResult sup = run_scenario(parse_config(j.dump()));
    CHECK(sup.initial_overlaps[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(sup.initial_overlaps[1] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(sup.initial_overlaps[2] == doctest::Approx(0.5).epsilon(1e-9));

    Json bad = Json::parse(five_site_config());
    bad["initial"]["terms"][0]["label"] = "q7";
    CHECK_THROWS_AS(run_scenario(parse_config(bad.dump())), ConfigError);
}

TEST_CASE("fidelity sweeps emit the curve with conserved classical purity") {
    EnvGuard env;
    fs::remove_all("scenario_out/sweep");
    Json j = Json::parse(five_site_config());
    j["run"] = {{"t_final", 4.0}, {"sample_stride", 0.05}};
    j["ensemble"] = {{"size", 3}, {"seed", 9}, {"workers", 1}};
    j["outputs"] = {{"directory", "scenario_out/sweep"}};
    j["fidelity_sweep"] = {{"weights", {0.3}},
                           {"classical_weights", {0.3}},
                           {"snapshot_stride", 0.5}};
    const FidelitySweepResult res = run_fidelity_sweep(parse_config(j.dump()));

    REQUIRE(res.quantum.size() == 1);
    CHECK(res.quantum[0].n == 3);
    CHECK(res.quantum[0].predicted == doctest::Approx(0.58)); // 0.3^2 + 0 + 0.7^2
    REQUIRE(res.classical.size() == 1);
    CHECK(res.classical[0].n == 3); // one field realization per trajectory
    REQUIRE(res.classical_purity_drift.size() == 1);
    CHECK(res.classical_purity_drift[0] < 1e-8); // exactly unitary member evolution

    REQUIRE(fs::exists("scenario_out/sweep/fidelity_curve.csv"));
    REQUIRE(fs::exists("scenario_out/sweep/manifest.json"));
    const std::string csv = slurp("scenario_out/sweep/fidelity_curve.csv");
    CHECK(csv.rfind("noise,w,mean_fidelity,std_error,predicted,empirical_variance,"
                    "predicted_variance,popoviciu_bound,n,purity_drift\n",
                    0) == 0);
    CHECK(csv.find("\nquantum,") != std::string::npos);
    CHECK(csv.find("\nclassical,") != std::string::npos);

    // a sweep needs a two-term mixture
    Json nosweep = Json::parse(five_site_config());
    CHECK_THROWS_AS(run_fidelity_sweep(parse_config(nosweep.dump())), ConfigError);
    Json sup = Json::parse(j.dump());
    sup["initial"]["kind"] = "superposition";
    CHECK_THROWS_AS(run_fidelity_sweep(parse_config(sup.dump())), ConfigError);
}

TEST_CASE("gamma sweeps walk the grid and keep their bookkeeping") {
    EnvGuard env;
    fs::remove_all("scenario_out/gamma");
    Json j = Json::parse(five_site_config());
    j["initial"] = {{"kind", "superposition"},
                    {"terms", Json::array({Json{{"label", "q2"}, {"weight", 0.5}},
                                           Json{{"label", "p"}, {"weight", 0.5}}})}};
    j["run"] = {{"t_final", 8.0}, {"sample_stride", 0.05}};
    j["ensemble"] = {{"size", 3}, {"seed", 5}, {"workers", 1}};
    j["outputs"] = {{"directory", "scenario_out/gamma"}};
    const ScenarioConfig cfg = parse_config(j.dump());

    const SweepResult res = sweep_sync_time(cfg, {0.5, 2.0});
    REQUIRE(res.points.size() == 2);
    CHECK(res.points[0].gamma == doctest::Approx(0.5));
    CHECK(res.points[1].gamma == doctest::Approx(2.0));
    CHECK(res.points[0].trap.total == 3);
    REQUIRE(fs::exists("scenario_out/gamma/sweep_sync_time.csv"));
    const std::string csv = slurp("scenario_out/gamma/sweep_sync_time.csv");
    CHECK(csv.rfind("gamma,n_trapped,mean_hitting_time,hitting_time_variance,"
                    "dfs_fraction,undecided\n",
                    0) == 0);

    CHECK_THROWS_AS(sweep_sync_time(cfg, {}), ConfigError);
    CHECK_THROWS_AS(sweep_sync_time(cfg, {0.5, -1.0}), ConfigError);
}

TEST_CASE("analysis reports cover every chain size") {
    EnvGuard env;
    ChainParams p2;
    p2.n = 2;
    p2.site = 1;
    const Json r2 = Json::parse(analyze_report(p2));
    CHECK(r2.at("dim") == 4);
    CHECK(r2.at("subspaces").empty()); // nothing oscillates inside the 1-dim dark states
    CHECK(r2.at("complement").at("blocks").size() > 0);

    ChainParams p5;
    p5.n = 5;
    p5.site = 3;
    p5.gamma = 0.4;
    const Json r5 = Json::parse(analyze_report(p5));
    REQUIRE(r5.at("subspaces").size() == 2);
    for (const auto& s : r5.at("subspaces")) {
        CHECK(s.at("dim") == 2);
        REQUIRE(s.at("frequencies").size() == 1);
        CHECK(std::abs(s.at("frequencies")[0].get<double>() - 2.0) < 1e-9);
        CHECK(std::abs(std::abs(s.at("c_over_root_gamma").get<double>()) - 1.0) < 1e-9);
    }
    const double c0 = r5.at("subspaces")[0].at("c_over_root_gamma").get<double>();
    const double c1 = r5.at("subspaces")[1].at("c_over_root_gamma").get<double>();
    CHECK(c0 * c1 < 0); // one subspace per measurement sign
}

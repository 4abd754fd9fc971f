#include "CLI11.hpp"
#include "qsync/scenario.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace {

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
        if (used != tok.size()) throw qsync::ConfigError("bad number in list: '" + tok + "'");
        out.push_back(v);
    }
    if (out.empty()) throw qsync::ConfigError("empty number list");
    return out;
}

void print_scenario(const qsync::ScenarioResult& res) {
    std::printf("scenario %s: carrier dim %ld, %zu trajectories\n", res.config.name.c_str(),
                static_cast<long>(res.carrier_dim), res.records.size());
    std::printf("  initial overlaps:");
    for (std::size_t k = 0; k < res.initial_overlaps.size(); ++k) {
        const std::string label =
            k + 1 == res.initial_overlaps.size() ? "p" : "q" + std::to_string(k + 1);
        std::printf(" %s=%.4f", label.c_str(), res.initial_overlaps[k]);
    }
    std::printf("\n");
    if (res.trap.total > 0) {
        std::printf("  trapped:");
        for (std::size_t k = 0; k < res.trap.counts.size(); ++k) {
            const std::string label =
                k + 1 == res.trap.counts.size() ? "p" : "q" + std::to_string(k + 1);
            std::printf(" %s=%d", label.c_str(), res.trap.counts[k]);
        }
        std::printf(" undecided=%d\n", res.trap.undecided);
    }
    if (res.frequencies.total > 0) {
        std::printf("  synchronized %d/%d", res.frequencies.total - res.frequencies.unsynchronized,
                    res.frequencies.total);
        for (std::size_t i = 0; i < res.frequencies.frequencies.size(); ++i)
            std::printf("  f=%.6f (%d)", res.frequencies.frequencies[i], res.frequencies.counts[i]);
        std::printf("\n");
    }
    if (res.hitting.count > 0)
        std::printf("  hitting time: mean %.4f var %.4f over %d records\n", res.hitting.mean,
                    res.hitting.variance, res.hitting.count);
    if (res.lindblad_verdict)
        std::printf("  lindblad mean: %s\n",
                    res.lindblad_verdict->synchronized ? "synchronized" : "unsynchronized");
    std::printf("  outputs in %s\n", res.config.outputs.directory.c_str());
}

void print_fidelity(const qsync::FidelitySweepResult& res) {
    for (std::size_t i = 0; i < res.quantum.size(); ++i) {
        const auto& st = res.quantum[i];
        std::printf("quantum   w=%.2f  F=%.4f +- %.4f  predicted %.4f\n", res.quantum_weights[i],
                    st.empirical_mean, st.std_error, st.predicted);
    }
    for (std::size_t i = 0; i < res.classical.size(); ++i) {
        const auto& st = res.classical[i];
        std::printf("classical w=%.2f  F=%.4f +- %.4f  purity drift %.2e\n",
                    res.classical_weights[i], st.empirical_mean, st.std_error,
                    res.classical_purity_drift[i]);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"quantum trajectory simulator for continuously monitored XY spin chains"};
    app.require_subcommand(1);

    std::string run_config;
    auto* cmd_run = app.add_subcommand("run", "execute a scenario config file or preset");
    cmd_run->add_option("config", run_config, "config file path or preset name")->required();

    qsync::ChainParams chain;
    auto* cmd_analyze = app.add_subcommand("analyze", "print the DFS report for a chain");
    cmd_analyze->add_option("--n", chain.n, "number of qubits")->required();
    cmd_analyze->add_option("--site", chain.site, "monitored site, 1-based")->required();
    cmd_analyze->add_option("--j", chain.j, "hopping J");
    cmd_analyze->add_option("--field", chain.h, "transverse field h");
    cmd_analyze->add_option("--gamma", chain.gamma, "measurement rate");

    std::string sweep_config, gamma_list;
    auto* cmd_sweep =
        app.add_subcommand("sweep-sync-time", "hitting-time statistics over a gamma grid");
    cmd_sweep->add_option("config", sweep_config, "base config file path or preset name")
        ->required();
    cmd_sweep->add_option("--gammas", gamma_list, "comma-separated measurement rates")->required();

    std::string preset_action;
    auto* cmd_presets = app.add_subcommand("presets", "preset utilities");
    cmd_presets->add_option("action", preset_action, "only 'list' is supported")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*cmd_run) {
            const qsync::ScenarioConfig cfg = qsync::load_config(run_config);
            if (cfg.fidelity_sweep) {
                print_fidelity(qsync::run_fidelity_sweep(cfg));
                std::printf("outputs in %s\n", cfg.outputs.directory.c_str());
            } else {
                print_scenario(qsync::run_scenario(cfg));
            }
        } else if (*cmd_analyze) {
            std::fputs(qsync::analyze_report(chain).c_str(), stdout);
        } else if (*cmd_sweep) {
            const qsync::ScenarioConfig base = qsync::load_config(sweep_config);
            const auto gammas = parse_double_list(gamma_list);
            const qsync::SweepResult res = qsync::sweep_sync_time(base, gammas);
            for (const auto& pt : res.points)
                std::printf("gamma=%-8.4g  mean tau=%.4f  var=%.4f  trapped=%d  undecided=%d\n",
                            pt.gamma, pt.hitting.mean, pt.hitting.variance, pt.hitting.count,
                            pt.trap.undecided);
        } else if (*cmd_presets) {
            if (preset_action != "list")
                throw qsync::ConfigError("unknown presets action '" + preset_action +
                                         "' (expected: list)");
            for (const auto& name : qsync::list_presets()) std::printf("%s\n", name.c_str());
        }
    } catch (const qsync::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "failure: %s\n", e.what());
        return 3;
    }
    return 0;
}

#include "qsync/initial.hpp"
#include <cmath>
#include <stdexcept>

namespace qsync {

void validate(const InitialStateSpec& spec) {
    if (spec.kind == InitialStateSpec::Kind::Explicit) {
        if (spec.amplitudes.size() == 0)
            throw std::invalid_argument("initial state: explicit amplitudes missing");
        if (std::abs(spec.amplitudes.squaredNorm() - 1.0) > 1e-8)
            throw std::invalid_argument("initial state: explicit amplitudes not normalized");
        return;
    }
    if (spec.terms.empty()) throw std::invalid_argument("initial state: no terms");
    double total = 0.0;
    for (const auto& t : spec.terms) {
        if (t.weight < 0) throw std::invalid_argument("initial state: negative weight");
        if (t.label.empty()) throw std::invalid_argument("initial state: empty label");
        total += t.weight;
    }
    if (std::abs(total - 1.0) > 1e-10)
        throw std::invalid_argument("initial state: weights must sum to 1");
}

Vector resolve_label(const std::string& label, std::optional<double> frequency,
                     const ChainModel& model, const DfsDecomposition& dec) {
    if (label == "p") {
        if (frequency)
            throw std::invalid_argument("initial state: the complement label takes no frequency");
        return complement_reference_state(model, dec);
    }
    if (label.size() >= 2 && label.front() == 'q') {
        std::size_t pos = 0;
        int k = 0;
        try {
            k = std::stoi(label.substr(1), &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == label.size() - 1 && k >= 1 &&
            k <= static_cast<int>(dec.subspaces.size()))
            return dfs_pair_state(model, dec.subspaces[static_cast<std::size_t>(k - 1)],
                                  frequency);
        if (pos == label.size() - 1 && k >= 1)
            throw std::invalid_argument("initial state: label '" + label + "' but only " +
                                        std::to_string(dec.subspaces.size()) +
                                        " subspaces were found");
    }
    throw std::invalid_argument("initial state: unknown label '" + label +
                                "' (expected q1..q" + std::to_string(dec.subspaces.size()) +
                                " or p)");
}

namespace {

void fix_global_phase(Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v[i]) > 1e-12) {
            v *= std::conj(v[i]) / std::abs(v[i]);
            return;
        }
    }
}

} // namespace

PureEnsemble realize_initial_state(const InitialStateSpec& spec, const ChainModel& model,
                                   const DfsDecomposition& dec) {
    validate(spec);
    PureEnsemble ens;
    if (spec.kind == InitialStateSpec::Kind::Explicit) {
        Vector v = spec.amplitudes;
        v.normalize();
        fix_global_phase(v);
        ens.weights = {1.0};
        ens.states = {std::move(v)};
        return ens;
    }
    if (spec.kind == InitialStateSpec::Kind::Superposition) {
        Vector v = Vector::Zero(dec.dim());
        for (const auto& t : spec.terms)
            v += std::sqrt(t.weight) * resolve_label(t.label, t.frequency, model, dec);
        v.normalize();
        fix_global_phase(v);
        ens.weights = {1.0};
        ens.states = {std::move(v)};
        return ens;
    }
    for (const auto& t : spec.terms) {
        if (t.weight == 0.0) continue;
        Vector v = resolve_label(t.label, t.frequency, model, dec);
        v.normalize();
        fix_global_phase(v);
        ens.weights.push_back(t.weight);
        ens.states.push_back(std::move(v));
    }
    return ens;
}

} // namespace qsync

#pragma once
#include "qsync/dfs.hpp"
#include <optional>
#include <string>

namespace qsync {

// One entry of an initial-state recipe. Labels: "q1".."qK" pick the k-th
// subspace's lowest visible eigenstate pair (frequency selects among several
// Bohr modes), "p" the deterministic reference state of the smallest
// complement block. weight is a probability for mixtures and a squared
// amplitude for superpositions.
struct InitialTerm {
    std::string label;
    double weight = 1.0;
    std::optional<double> frequency;
};

struct InitialStateSpec {
    enum class Kind { Mixture, Superposition, Explicit };
    Kind kind = Kind::Mixture;
    std::vector<InitialTerm> terms;
    Vector amplitudes;  // Explicit only: full-space state vector
};

void validate(const InitialStateSpec& spec);

// underlying pure state for one label
Vector resolve_label(const std::string& label, std::optional<double> frequency,
                     const ChainModel& model, const DfsDecomposition& dec);

// Mixture -> one normalized member per term with the stated weights;
// Superposition / Explicit -> a single member of weight 1. Every member's
// global phase is fixed (first nonzero amplitude real positive).
PureEnsemble realize_initial_state(const InitialStateSpec& spec, const ChainModel& model,
                                   const DfsDecomposition& dec);

} // namespace qsync

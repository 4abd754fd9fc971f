#include "qsync/chain.hpp"
#include <algorithm>
#include <bit>
#include <set>
#include <stdexcept>

namespace qsync {

void validate(const ChainParams& p) {
    if (p.n < 1 || p.n > 10) throw std::invalid_argument("chain: n must be in [1,10]");
    if (p.site < 1 || p.site > p.n) throw std::invalid_argument("chain: site must be in [1,n]");
    if (p.gamma < 0) throw std::invalid_argument("chain: gamma must be >= 0");
    if (!(p.j > 0)) throw std::invalid_argument("chain: j must be > 0, it sets the rate unit");
    if (!(p.h == p.h)) throw std::invalid_argument("chain: non-finite parameter");
}

Matrix build_hamiltonian(const ChainParams& p) {
    validate(p);
    const Eigen::Index dim = Eigen::Index(1) << p.n;
    Matrix h = Matrix::Zero(dim, dim);
    for (int j = 1; j < p.n; ++j) {
        h += (p.j / 2.0) * (site_operator(p.n, j, pauli_x()) * site_operator(p.n, j + 1, pauli_x()) +
                            site_operator(p.n, j, pauli_y()) * site_operator(p.n, j + 1, pauli_y()));
    }
    for (int j = 1; j <= p.n; ++j) h += p.h * site_operator(p.n, j, pauli_z());
    return h;
}

Matrix build_measurement(const ChainParams& p) {
    validate(p);
    return std::sqrt(p.gamma * p.j) * site_operator(p.n, p.site, pauli_z());
}

Matrix build_classical_noise_generator(const ChainParams& p) {
    // same operator as the measurement; it plays the role of a noise
    // Hamiltonian instead of a Lindblad operator
    return build_measurement(p);
}

RealVector sz_diagonal(int n_sites, int site) {
    const Eigen::Index dim = Eigen::Index(1) << n_sites;
    RealVector d(dim);
    const int shift = n_sites - site; // site 1 owns the most significant bit
    for (Eigen::Index b = 0; b < dim; ++b) d[b] = ((b >> shift) & 1) ? -1.0 : 1.0;
    return d;
}

ChainModel build_chain_model(const ChainParams& p) {
    ChainModel m;
    m.params = p;
    m.hamiltonian = build_hamiltonian(p);
    m.measurement = build_measurement(p);
    m.noise_generator = build_classical_noise_generator(p);
    m.site_z.reserve(static_cast<std::size_t>(p.n));
    for (int j = 1; j <= p.n; ++j) m.site_z.push_back(sz_diagonal(p.n, j));
    return m;
}

Carrier build_carrier(const ChainModel& model, const std::vector<Vector>& support, double tol) {
    const Eigen::Index dim = model.hamiltonian.rows();
    std::set<Eigen::Index> seen;
    std::vector<Eigen::Index> frontier;
    for (const auto& v : support) {
        if (v.size() != dim) throw std::invalid_argument("build_carrier: support vector has wrong dimension");
        for (Eigen::Index i = 0; i < dim; ++i)
            if (std::abs(v[i]) > tol && seen.insert(i).second) frontier.push_back(i);
    }
    if (seen.empty()) throw std::invalid_argument("build_carrier: empty support");

    // close under the sparsity pattern of H; L is diagonal and adds nothing
    while (!frontier.empty()) {
        std::vector<Eigen::Index> next;
        for (const Eigen::Index col : frontier) {
            for (Eigen::Index row = 0; row < dim; ++row) {
                if (std::abs(model.hamiltonian(row, col)) > 1e-14 && seen.insert(row).second)
                    next.push_back(row);
            }
        }
        frontier.swap(next);
    }

    Carrier c;
    c.n_sites = model.params.n;
    c.configs.assign(seen.begin(), seen.end());
    // group by excitation number so the restricted H comes out block diagonal
    std::sort(c.configs.begin(), c.configs.end(), [](Eigen::Index a, Eigen::Index b) {
        const int pa = std::popcount(static_cast<std::uint64_t>(a));
        const int pb = std::popcount(static_cast<std::uint64_t>(b));
        return pa != pb ? pa < pb : a < b;
    });
    const Eigen::Index d = c.dim();
    c.h.resize(d, d);
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = 0; b < d; ++b)
            c.h(a, b) = model.hamiltonian(c.configs[a], c.configs[b]);

    c.l_diag.resize(d);
    const RealVector lz = sz_diagonal(model.params.n, model.params.site);
    const double root_gamma = std::sqrt(model.params.gamma * model.params.j);
    for (Eigen::Index a = 0; a < d; ++a) c.l_diag[a] = root_gamma * lz[c.configs[a]];

    c.site_z.resize(d, model.params.n);
    for (int j = 0; j < model.params.n; ++j)
        for (Eigen::Index a = 0; a < d; ++a)
            c.site_z(a, j) = model.site_z[static_cast<std::size_t>(j)][c.configs[a]];

    c.use_sparse = d > 48;
    if (c.use_sparse) {
        std::vector<Eigen::Triplet<Complex>> trips;
        for (Eigen::Index a = 0; a < d; ++a)
            for (Eigen::Index b = 0; b < d; ++b)
                if (std::abs(c.h(a, b)) > 1e-14) trips.emplace_back(a, b, c.h(a, b));
        c.h_sparse.resize(d, d);
        c.h_sparse.setFromTriplets(trips.begin(), trips.end());
        c.h_sparse.makeCompressed();
    }
    return c;
}

Vector restrict_to_carrier(const Carrier& carrier, const Vector& full) {
    Vector out(carrier.dim());
    for (Eigen::Index a = 0; a < carrier.dim(); ++a) out[a] = full[carrier.configs[a]];
    return out;
}

Vector expand_from_carrier(const Carrier& carrier, const Vector& reduced) {
    Vector out = Vector::Zero(Eigen::Index(1) << carrier.n_sites);
    for (Eigen::Index a = 0; a < carrier.dim(); ++a) out[carrier.configs[a]] = reduced[a];
    return out;
}

Matrix restrict_to_carrier(const Carrier& carrier, const Matrix& full) {
    const Eigen::Index d = carrier.dim();
    Matrix out(d, d);
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = 0; b < d; ++b)
            out(a, b) = full(carrier.configs[a], carrier.configs[b]);
    return out;
}

Matrix expand_from_carrier(const Carrier& carrier, const Matrix& reduced) {
    const Eigen::Index full = Eigen::Index(1) << carrier.n_sites;
    Matrix out = Matrix::Zero(full, full);
    for (Eigen::Index a = 0; a < carrier.dim(); ++a)
        for (Eigen::Index b = 0; b < carrier.dim(); ++b)
            out(carrier.configs[a], carrier.configs[b]) = reduced(a, b);
    return out;
}

} // namespace qsync

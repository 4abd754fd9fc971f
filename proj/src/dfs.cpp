#include "qsync/dfs.hpp"
#include <algorithm>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>

namespace qsync {

namespace {

struct DarkVector {
    double c;
    double energy;
    Vector v;
};

Matrix columns(const std::vector<Vector>& vs, Eigen::Index dim) {
    Matrix m(dim, static_cast<Eigen::Index>(vs.size()));
    for (std::size_t k = 0; k < vs.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = vs[k];
    return m;
}

// deterministic gauge: rotate so the first largest-modulus entry is real positive
Vector fix_phase(Vector v) {
    Eigen::Index imax = 0;
    double best = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double a = std::abs(v[i]);
        if (a > best + 1e-15) {
            best = a;
            imax = i;
        }
    }
    if (best > 0.0) v *= std::conj(v[imax] / best);
    return v;
}

} // namespace

DfsDecomposition find_dfs(const Matrix& h, const Matrix& l, double tol) {
    if (h.rows() != l.rows() || h.rows() != h.cols() || l.rows() != l.cols())
        throw std::invalid_argument("find_dfs: dimension mismatch");
    const Eigen::Index dim = h.rows();
    const Eigh eh = eigh(h);
    const double escale = std::max(1.0, eh.values.cwiseAbs().maxCoeff());

    std::vector<DarkVector> dark;
    Eigen::Index i = 0;
    while (i < dim) {
        Eigen::Index j = i;
        while (j + 1 < dim && eh.values[j + 1] - eh.values[i] < 1e-9 * escale) ++j;
        const Eigen::Index b = j - i + 1;
        const Matrix vb = eh.vectors.middleCols(i, b);
        const Matrix lr = vb.adjoint() * l * vb;
        const Eigh el = eigh((lr + lr.adjoint()) / 2.0);
        const Matrix cand = vb * el.vectors;
        for (Eigen::Index k = 0; k < b; ++k) {
            const Vector v = fix_phase(cand.col(k));
            const Complex c = (v.adjoint() * l * v)(0);
            if ((l * v - c * v).norm() <= tol)
                dark.push_back({std::real(c), std::real((v.adjoint() * h * v)(0)), v});
        }
        i = j + 1;
    }

    // group by c, tolerance-merged, c ascending
    std::sort(dark.begin(), dark.end(), [](const DarkVector& a, const DarkVector& b) {
        return a.c < b.c || (a.c == b.c && a.energy < b.energy);
    });
    const double cscale = std::max(1.0, l.cwiseAbs().maxCoeff());

    DfsDecomposition dec;
    dec.complement_projector = Matrix::Identity(dim, dim);
    std::size_t a = 0;
    while (a < dark.size()) {
        std::size_t b = a;
        while (b + 1 < dark.size() && dark[b + 1].c - dark[a].c <= 1e-8 * cscale) ++b;
        std::vector<DarkVector> grp(dark.begin() + static_cast<std::ptrdiff_t>(a),
                                    dark.begin() + static_cast<std::ptrdiff_t>(b) + 1);
        std::sort(grp.begin(), grp.end(),
                  [](const DarkVector& x, const DarkVector& y) { return x.energy < y.energy; });
        DfsSubspace sub;
        double csum = 0.0;
        std::vector<Vector> vs;
        sub.full_energies.resize(static_cast<Eigen::Index>(grp.size()));
        for (std::size_t k = 0; k < grp.size(); ++k) {
            csum += grp[k].c;
            sub.full_energies[static_cast<Eigen::Index>(k)] = grp[k].energy;
            vs.push_back(grp[k].v);
        }
        sub.c = csum / static_cast<double>(grp.size());
        sub.full_basis = columns(vs, dim);
        sub.basis = sub.full_basis;
        sub.energies = sub.full_energies;
        sub.projector = sub.basis * sub.basis.adjoint();
        sub.frequencies = bohr_frequencies(sub);
        dec.complement_projector -= sub.projector;
        dec.subspaces.push_back(std::move(sub));
        a = b + 1;
    }
    return dec;
}

DfsDecomposition refine_oscillatory(const DfsDecomposition& dec, const ChainModel& model,
                                    double vis_tol, double freq_tol) {
    DfsDecomposition out;
    out.refined = true;
    const Eigen::Index dim = dec.dim();
    out.complement_projector = Matrix::Identity(dim, dim);
    for (const auto& sub : dec.subspaces) {
        const Eigen::Index d = sub.full_dim();
        // degenerate energy levels inside the group
        std::vector<std::pair<Eigen::Index, Eigen::Index>> levels; // [begin, end)
        const double esc = std::max(1.0, sub.full_energies.cwiseAbs().maxCoeff());
        for (Eigen::Index p = 0; p < d;) {
            Eigen::Index q = p;
            while (q + 1 < d && sub.full_energies[q + 1] - sub.full_energies[p] < 1e-9 * esc) ++q;
            levels.emplace_back(p, q + 1);
            p = q + 1;
        }
        // canonical basis per level: eigenvectors of the visibility Gram operator
        // built from all site-magnetization elements to the other levels; its
        // zero modes never show up in any <sigma^z_j> and fall out of the core
        Matrix basis = sub.full_basis;
        std::vector<bool> core_flag(static_cast<std::size_t>(d), false);
        const double gram_tol = vis_tol * vis_tol;
        for (const auto& [b0, b1] : levels) {
            const Eigen::Index m = b1 - b0;
            Matrix gram = Matrix::Zero(m, m);
            for (const auto& [c0, c1] : levels) {
                if (c0 == b0) continue;
                for (const auto& z : model.site_z) {
                    const Matrix mj = basis.middleCols(b0, m).adjoint() *
                                      (z.asDiagonal() * basis.middleCols(c0, c1 - c0));
                    gram.noalias() += mj * mj.adjoint();
                }
            }
            if (m > 1) {
                const Eigh eg = eigh(gram);
                basis.middleCols(b0, m) = basis.middleCols(b0, m) * eg.vectors;
                for (Eigen::Index k = 0; k < m; ++k)
                    core_flag[static_cast<std::size_t>(b0 + k)] = eg.values[k] > gram_tol;
            } else {
                core_flag[static_cast<std::size_t>(b0)] = std::real(gram(0, 0)) > gram_tol;
            }
        }
        for (Eigen::Index k = 0; k < d; ++k) basis.col(k) = fix_phase(basis.col(k));

        std::vector<double> freqs;
        for (Eigen::Index p = 0; p < d; ++p) {
            if (!core_flag[static_cast<std::size_t>(p)]) continue;
            for (Eigen::Index q = p + 1; q < d; ++q) {
                if (!core_flag[static_cast<std::size_t>(q)]) continue;
                const double gap = std::abs(sub.full_energies[q] - sub.full_energies[p]);
                if (gap <= freq_tol) continue;
                for (const auto& z : model.site_z) {
                    const Complex m =
                        (basis.col(p).adjoint() * (z.asDiagonal() * basis.col(q)))(0);
                    if (std::abs(m) > vis_tol) {
                        freqs.push_back(gap);
                        break;
                    }
                }
            }
        }
        DfsSubspace r;
        r.c = sub.c;
        r.full_basis = basis;
        r.full_energies = sub.full_energies;
        std::vector<Vector> vs;
        std::vector<double> es;
        for (Eigen::Index k = 0; k < d; ++k) {
            if (core_flag[static_cast<std::size_t>(k)]) {
                vs.push_back(basis.col(k));
                es.push_back(sub.full_energies[k]);
            }
        }
        if (vs.empty()) continue; // nothing in this group can oscillate
        r.basis = columns(vs, dim);
        r.energies = Eigen::Map<RealVector>(es.data(), static_cast<Eigen::Index>(es.size()));
        r.projector = r.basis * r.basis.adjoint();
        std::sort(freqs.begin(), freqs.end());
        for (double f : freqs) {
            if (r.frequencies.empty() || f - r.frequencies.back() > freq_tol)
                r.frequencies.push_back(f);
        }
        out.complement_projector -= r.projector;
        out.subspaces.push_back(std::move(r));
    }
    return out;
}

DfsDecomposition analyze_chain(const ChainModel& model, double tol) {
    return refine_oscillatory(find_dfs(model.hamiltonian, model.measurement, tol), model);
}

std::vector<double> bohr_frequencies(const DfsSubspace& sub, double tol) {
    std::vector<double> gaps;
    for (Eigen::Index i = 0; i < sub.energies.size(); ++i)
        for (Eigen::Index j = i + 1; j < sub.energies.size(); ++j) {
            const double g = std::abs(sub.energies[j] - sub.energies[i]);
            if (g > tol) gaps.push_back(g);
        }
    std::sort(gaps.begin(), gaps.end());
    std::vector<double> out;
    for (double g : gaps)
        if (out.empty() || g - out.back() > tol) out.push_back(g);
    return out;
}

namespace {

// lowest-energy visible eigenstate pair with the requested gap
std::pair<Eigen::Index, Eigen::Index> visible_pair(const ChainModel& model, const DfsSubspace& sub,
                                                   double target_gap, double rel_tol = 1e-6) {
    for (Eigen::Index p = 0; p < sub.dim(); ++p) {
        for (Eigen::Index q = p + 1; q < sub.dim(); ++q) {
            const double gap = std::abs(sub.energies[q] - sub.energies[p]);
            if (std::abs(gap - target_gap) > rel_tol * std::max(1.0, target_gap)) continue;
            for (const auto& z : model.site_z) {
                const Complex m =
                    (sub.basis.col(p).adjoint() * (z.asDiagonal() * sub.basis.col(q)))(0);
                if (std::abs(m) > 1e-8) return {p, q};
            }
        }
    }
    throw std::invalid_argument("no visible eigenstate pair at the requested frequency");
}

} // namespace

RealVector synchronized_eigenmode(const ChainModel& model, const DfsSubspace& sub) {
    if (sub.frequencies.size() != 1)
        throw std::invalid_argument("synchronized_eigenmode: subspace must carry exactly one frequency");
    const auto [p, q] = visible_pair(model, sub, sub.frequencies.front());
    RealVector pattern(model.params.n);
    for (int j = 0; j < model.params.n; ++j) {
        const Complex m = (sub.basis.col(p).adjoint() *
                           (model.site_z[static_cast<std::size_t>(j)].asDiagonal() * sub.basis.col(q)))(0);
        if (std::abs(std::imag(m)) > 1e-9)
            throw std::runtime_error("synchronized_eigenmode: unexpected complex matrix element");
        pattern[j] = std::real(m);
    }
    const double peak = pattern.cwiseAbs().maxCoeff();
    if (peak > 0) pattern /= peak;
    for (Eigen::Index j = 0; j < pattern.size(); ++j) {
        if (std::abs(pattern[j]) > 1e-9) {
            if (pattern[j] < 0) pattern = -pattern;
            break;
        }
    }
    return pattern;
}

Vector dfs_pair_state(const ChainModel& model, const DfsSubspace& sub,
                      std::optional<double> frequency) {
    const auto list_freqs = [&sub] {
        std::string s;
        for (double f : sub.frequencies) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.9g", f);
            s += s.empty() ? buf : std::string(", ") + buf;
        }
        return s.empty() ? std::string("none") : s;
    };
    double target = 0.0;
    if (frequency) {
        target = *frequency;
        const bool known = std::any_of(sub.frequencies.begin(), sub.frequencies.end(),
                                       [&](double f) { return std::abs(f - target) <= 1e-6 * std::max(1.0, f); });
        if (!known)
            throw std::invalid_argument("requested mode frequency absent from subspace; available: " +
                                        list_freqs());
    } else if (sub.frequencies.size() == 1) {
        target = sub.frequencies.front();
    } else {
        throw std::invalid_argument("subspace supports several frequencies, pick one of: " +
                                    list_freqs());
    }
    const auto [p, q] = visible_pair(model, sub, target);

    // Phase the pair so its initial site signal is sign(c) times the subspace
    // pattern. Spin-flip partner subspaces (c -> -c, sz -> -sz) then oscillate
    // in exact antiphase, so a cross-subspace superposition has a flat
    // ensemble mean while every trajectory keeps the full oscillation.
    double sign = 1.0;
    for (const auto& site : model.site_z) {
        const Complex m = (sub.basis.col(p).conjugate().array() *
                           site.array().cast<Complex>() * sub.basis.col(q).array())
                              .sum();
        if (std::abs(m.real()) > 1e-8) {
            const double want = sub.c < 0 ? -1.0 : 1.0;
            if (m.real() * want < 0) sign = -1.0;
            break;
        }
    }
    return ((sub.basis.col(p) + sign * sub.basis.col(q)) / std::sqrt(2.0)).eval();
}

std::vector<double> overlaps(const Vector& psi, const DfsDecomposition& dec) {
    std::vector<double> out;
    double total = 0.0;
    for (const auto& sub : dec.subspaces) {
        const double w = (sub.basis.adjoint() * psi).squaredNorm();
        out.push_back(w);
        total += w;
    }
    out.push_back(std::max(0.0, 1.0 - total));
    return out;
}

std::vector<double> overlaps(const Matrix& rho, const DfsDecomposition& dec) {
    std::vector<double> out;
    double total = 0.0;
    for (const auto& sub : dec.subspaces) {
        const double w = std::real((sub.projector * rho).trace());
        out.push_back(w);
        total += w;
    }
    out.push_back(std::max(0.0, 1.0 - total));
    return out;
}

std::vector<ComplementBlock> complement_blocks(const ChainModel& model,
                                               const DfsDecomposition& dec, double tol) {
    const Eigen::Index dim = dec.dim();
    // non-dark projector: remove the full common eigenspaces, not just the cores
    Matrix q = Matrix::Identity(dim, dim);
    for (const auto& sub : dec.subspaces) q -= sub.full_basis * sub.full_basis.adjoint();

    // orthonormal basis of the non-dark space; raw H eigenvectors can mix dark
    // and non-dark directions inside degenerate levels, so project first
    const Eigh eq = eigh(q);
    std::vector<Vector> span;
    for (Eigen::Index k = 0; k < dim; ++k)
        if (eq.values[k] > 0.5) span.push_back(eq.vectors.col(k));
    if (span.empty()) return {};
    const Matrix qbasis = columns(span, dim);
    const Eigh eh = eigh(qbasis.adjoint() * model.hamiltonian * qbasis);
    const Matrix vecs = qbasis * eh.vectors; // non-dark H eigenvectors

    const Eigen::Index m = vecs.cols();
    // connected components of the L-coupling graph
    const Matrix lcouple = vecs.adjoint() * model.measurement * vecs;
    std::vector<int> comp(static_cast<std::size_t>(m), -1);
    int ncomp = 0;
    for (Eigen::Index s = 0; s < m; ++s) {
        if (comp[static_cast<std::size_t>(s)] >= 0) continue;
        std::vector<Eigen::Index> stack{s};
        comp[static_cast<std::size_t>(s)] = ncomp;
        while (!stack.empty()) {
            const Eigen::Index a = stack.back();
            stack.pop_back();
            for (Eigen::Index b = 0; b < m; ++b) {
                if (comp[static_cast<std::size_t>(b)] < 0 && std::abs(lcouple(b, a)) > tol) {
                    comp[static_cast<std::size_t>(b)] = ncomp;
                    stack.push_back(b);
                }
            }
        }
        ++ncomp;
    }

    std::vector<ComplementBlock> blocks(static_cast<std::size_t>(ncomp));
    for (int cidx = 0; cidx < ncomp; ++cidx) {
        std::vector<Vector> vs;
        std::vector<double> es;
        for (Eigen::Index a = 0; a < m; ++a) {
            if (comp[static_cast<std::size_t>(a)] == cidx) {
                vs.push_back(vecs.col(a));
                es.push_back(eh.values[a]);
            }
        }
        blocks[static_cast<std::size_t>(cidx)].basis = columns(vs, dim);
        blocks[static_cast<std::size_t>(cidx)].energies =
            Eigen::Map<RealVector>(es.data(), static_cast<Eigen::Index>(es.size()));
    }
    std::sort(blocks.begin(), blocks.end(), [](const ComplementBlock& a, const ComplementBlock& b) {
        if (a.basis.cols() != b.basis.cols()) return a.basis.cols() < b.basis.cols();
        return a.energies.minCoeff() < b.energies.minCoeff();
    });
    return blocks;
}

Vector complement_reference_state(const ChainModel& model, const DfsDecomposition& dec) {
    const auto blocks = complement_blocks(model, dec);
    if (blocks.empty()) throw std::runtime_error("complement_reference_state: no complement block");
    const auto& blk = blocks.front();
    Vector psi = Vector::Zero(dec.dim());
    for (Eigen::Index k = 0; k < blk.basis.cols(); ++k) psi += blk.basis.col(k);
    psi.normalize();
    return psi;
}

int lindblad_kernel_dim(const ChainModel& model, const Matrix& block_basis, double tol) {
    const Eigen::Index k = block_basis.cols();
    const Matrix hb = block_basis.adjoint() * model.hamiltonian * block_basis;
    const Matrix lb = block_basis.adjoint() * model.measurement * block_basis;
    const Matrix id = Matrix::Identity(k, k);
    const Matrix lsq = lb.adjoint() * lb;
    // vec(A rho B) = kron(B^T, A) vec(rho), column-major stacking
    const Matrix gen = Complex(0, -1) * (kron(id, hb) - kron(hb.transpose(), id)) +
                       kron(lb.conjugate(), lb) -
                       0.5 * (kron(id, lsq) + kron(lsq.transpose(), id));
    const Eigh e = eigh(gen.adjoint() * gen);
    const double scale = std::max(1.0, e.values.cwiseAbs().maxCoeff());
    int null = 0;
    for (Eigen::Index i = 0; i < e.values.size(); ++i)
        if (e.values[i] < tol * tol * scale) ++null;
    return null;
}

} // namespace qsync

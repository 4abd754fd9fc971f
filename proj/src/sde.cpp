#include "qsync/sde.hpp"
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace qsync {

namespace {

struct StepFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

double real_dot(const Vector& a, const Vector& b) { return std::real(a.dot(b)); }

} // namespace

Vector step_sse(const Vector& psi, const Matrix& h, const Matrix& l, double dt, double dw) {
    const Vector lpsi = l * psi;
    const double x = 2.0 * real_dot(psi, lpsi); // <L + L^dag> for Hermitian L
    Vector out = psi;
    out.noalias() += dt * (Complex(0, -1) * (h * psi));
    out.noalias() -= (0.5 * dt) * (l * lpsi);
    out += (0.5 * dt * x + dw) * lpsi;
    out -= (0.125 * dt * x * x + 0.5 * dw * x) * psi;
    return out;
}

Matrix step_sme(const Matrix& rho, const Matrix& h, const Matrix& l, double dt, double dw) {
    const Matrix lrho = l * rho;
    const double x = std::real(lrho.trace()) + std::real((rho * l.adjoint()).trace());
    const Matrix diff = lrho + lrho.adjoint() - x * rho;
    Matrix out = rho + dt * lindblad_rhs(rho, h, l) + dw * diff;
    out = Matrix(0.5 * (out + out.adjoint()));
    out /= out.trace().real();
    return out;
}

Matrix lindblad_rhs(const Matrix& rho, const Matrix& h, const Matrix& l) {
    const Matrix lsq = l.adjoint() * l;
    return Complex(0, -1) * (h * rho - rho * h) + l * rho * l.adjoint() -
           0.5 * (lsq * rho + rho * lsq);
}

EvolutionContext make_context(const ChainModel& model, const DfsDecomposition& dec,
                              const std::vector<Vector>& support) {
    EvolutionContext ctx;
    ctx.carrier = build_carrier(model, support);
    ctx.n_subspaces = static_cast<int>(dec.subspaces.size());
    ctx.dfs_bases.reserve(dec.subspaces.size());
    for (const auto& sub : dec.subspaces) {
        Matrix b(ctx.carrier.dim(), sub.basis.cols());
        for (Eigen::Index k = 0; k < sub.basis.cols(); ++k)
            b.col(k) = restrict_to_carrier(ctx.carrier, Vector(sub.basis.col(k)));
        ctx.dfs_bases.push_back(std::move(b));
    }

    // carrier configs arrive grouped by excitation number; cut at the jumps
    const auto& cfg = ctx.carrier.configs;
    Eigen::Index start = 0;
    for (Eigen::Index i = 1; i <= ctx.carrier.dim(); ++i) {
        if (i == ctx.carrier.dim() ||
            std::popcount(static_cast<std::uint64_t>(cfg[static_cast<std::size_t>(i)])) !=
                std::popcount(static_cast<std::uint64_t>(cfg[static_cast<std::size_t>(start)]))) {
            SectorBlock blk;
            blk.offset = start;
            blk.size = i - start;
            const Eigh e = eigh(ctx.carrier.h.block(start, start, blk.size, blk.size));
            blk.vectors = e.vectors;
            blk.values = e.values;
            ctx.blocks.push_back(std::move(blk));
            start = i;
        }
    }
    return ctx;
}

std::vector<Matrix> block_propagators(const EvolutionContext& ctx, double dt) {
    std::vector<Matrix> props;
    props.reserve(ctx.blocks.size());
    for (const auto& blk : ctx.blocks) {
        const Vector phases =
            (Complex(0, -1) * dt * blk.values.cast<Complex>().array()).exp().matrix();
        props.push_back(blk.vectors * phases.asDiagonal() * blk.vectors.adjoint());
    }
    return props;
}

void apply_propagators(const std::vector<Matrix>& props, const EvolutionContext& ctx,
                       Vector& psi) {
    for (std::size_t b = 0; b < props.size(); ++b) {
        const auto& blk = ctx.blocks[b];
        psi.segment(blk.offset, blk.size) =
            (props[b] * psi.segment(blk.offset, blk.size)).eval();
    }
}

namespace {

// shared sampling machinery for the trajectory engines
class SampleWriter {
public:
    SampleWriter(TrajectoryRecord& rec, const EvolutionContext& ctx, const RunGrid& grid,
                 double dt, bool with_purity)
        : rec_(rec), ctx_(ctx), dt_(dt) {
        stride_steps_ = std::max<long>(1, std::lround(grid.sample_stride / dt));
        n_steps_ = std::lround(grid.t_final / dt);
        const Eigen::Index n_samples = n_steps_ / stride_steps_ + 1;
        rec_.times.resize(n_samples);
        rec_.sites.resize(n_samples, ctx.carrier.n_sites);
        rec_.overlap.resize(n_samples, ctx.n_subspaces + 1);
        if (with_purity) rec_.purity.resize(n_samples);
    }

    long n_steps() const { return n_steps_; }
    bool due(long step) const { return step % stride_steps_ == 0; }

    void write(long step, const Vector& psi) {
        const Eigen::Index i = next_++;
        rec_.times[i] = static_cast<double>(step) * dt_;
        const RealVector prob = psi.cwiseAbs2();
        rec_.sites.row(i) = (ctx_.carrier.site_z.transpose() * prob).transpose();
        double total = 0.0;
        for (int k = 0; k < ctx_.n_subspaces; ++k) {
            const double w =
                (ctx_.dfs_bases[static_cast<std::size_t>(k)].adjoint() * psi).squaredNorm();
            rec_.overlap(i, k) = w;
            total += w;
        }
        rec_.overlap(i, ctx_.n_subspaces) = std::max(0.0, 1.0 - total);
    }

    void write_ensemble(long step, const std::vector<Vector>& members,
                        const std::vector<double>& weights) {
        const Eigen::Index i = next_++;
        rec_.times[i] = static_cast<double>(step) * dt_;
        RealVector sites = RealVector::Zero(ctx_.carrier.n_sites);
        RealVector over = RealVector::Zero(ctx_.n_subspaces);
        for (std::size_t m = 0; m < members.size(); ++m) {
            sites.noalias() += weights[m] * (ctx_.carrier.site_z.transpose() * members[m].cwiseAbs2());
            for (int k = 0; k < ctx_.n_subspaces; ++k)
                over[k] +=
                    weights[m] *
                    (ctx_.dfs_bases[static_cast<std::size_t>(k)].adjoint() * members[m]).squaredNorm();
        }
        rec_.sites.row(i) = sites.transpose();
        for (int k = 0; k < ctx_.n_subspaces; ++k) rec_.overlap(i, k) = over[k];
        rec_.overlap(i, ctx_.n_subspaces) = std::max(0.0, 1.0 - over.sum());
        double purity = 0.0;
        for (std::size_t m = 0; m < members.size(); ++m)
            for (std::size_t n = 0; n < members.size(); ++n)
                purity += weights[m] * weights[n] * std::norm(members[m].dot(members[n]));
        rec_.purity[i] = purity;
    }

private:
    TrajectoryRecord& rec_;
    const EvolutionContext& ctx_;
    double dt_;
    long stride_steps_ = 1;
    long n_steps_ = 0;
    Eigen::Index next_ = 0;
};

Vector apply_h(const EvolutionContext& ctx, const Vector& psi) {
    if (ctx.carrier.use_sparse) return ctx.carrier.h_sparse * psi;
    return ctx.carrier.h * psi;
}

void check_norm(double n2, double floor2) {
    if (!std::isfinite(n2) || n2 < floor2 || std::abs(n2 - 1.0) > 0.5)
        throw StepFailure("state norm left the stable regime");
}

TrajectoryRecord run_sse_once(const Vector& psi0, const EvolutionContext& ctx,
                              const IntegratorConfig& integ, const RunGrid& grid, double dt,
                              RngStream rng, const NoisePath* path) {
    if (path) {
        if (std::abs(path->dt - dt) > 1e-12 * std::max(path->dt, dt))
            throw std::invalid_argument("noise path dt does not match the integrator dt");
        if (static_cast<long>(path->increments.size()) < std::lround(grid.t_final / dt))
            throw std::invalid_argument("noise path shorter than the run");
    }
    TrajectoryRecord rec;
    rec.dt_used = dt;
    SampleWriter writer(rec, ctx, grid, dt, false);

    const double root_dt = std::sqrt(dt);
    const double floor2 = integ.norm_floor * integ.norm_floor;
    const RealVector& ld = ctx.carrier.l_diag;
    const Vector lc = ld.cast<Complex>();
    const Vector l2c = ld.cwiseAbs2().cast<Complex>();
    const long snap_steps = grid.snapshot_stride > 0
                                ? std::max<long>(1, std::lround(grid.snapshot_stride / dt))
                                : 0;

    const bool split = integ.scheme == Scheme::SplitStepMeasurement;
    std::vector<Matrix> props;
    RealVector l2dt;
    if (split) {
        props = block_propagators(ctx, dt);
        l2dt = dt * ld.cwiseAbs2();
    }

    Vector psi = psi0;
    psi.normalize();
    writer.write(0, psi);
    if (snap_steps > 0) {
        rec.snapshot_times.push_back(0.0);
        rec.snapshots.push_back(psi);
    }
    for (long step = 0; step < writer.n_steps(); ++step) {
        const double dw = path ? path->increments[static_cast<std::size_t>(step)]
                               : root_dt * rng.next_normal();
        const double x = 2.0 * ld.dot(psi.cwiseAbs2());
        if (split) {
            // linear filtering form: weight by the record likelihood, then
            // rotate exactly; dark amplitude ratios are preserved to roundoff.
            // The gain moves the norm by the Born weight of the record, so a
            // large change is legitimate here; only collapse or overflow count
            // as failures, unlike the Euler branch below.
            const double dy = x * dt + dw;
            const RealVector gain = (dy * ld.array() - l2dt.array()).exp();
            psi.array() *= gain.array().cast<Complex>();
            apply_propagators(props, ctx, psi);
            const double n2 = psi.squaredNorm();
            if (!std::isfinite(n2) || n2 < floor2)
                throw StepFailure("state norm left the stable regime");
            psi /= std::sqrt(n2);
        } else {
            const Vector lpsi = lc.cwiseProduct(psi);
            Vector next = psi;
            next.noalias() += dt * (Complex(0, -1) * apply_h(ctx, psi));
            next -= (0.5 * dt) * l2c.cwiseProduct(psi);
            next += (0.5 * dt * x + dw) * lpsi;
            next -= (0.125 * dt * x * x + 0.5 * dw * x) * psi;
            const double n2 = next.squaredNorm();
            check_norm(n2, floor2);
            psi = integ.renormalize ? Vector(next / std::sqrt(n2)) : next;
        }
        const long s = step + 1;
        if (writer.due(s)) writer.write(s, psi);
        if (snap_steps > 0 && s % snap_steps == 0) {
            rec.snapshot_times.push_back(static_cast<double>(s) * dt);
            rec.snapshots.push_back(psi);
        }
    }
    rec.final_state = psi;
    return rec;
}

TrajectoryRecord run_classical_once(const PureEnsemble& ens, const EvolutionContext& ctx,
                                    const IntegratorConfig& integ, const RunGrid& grid, double dt,
                                    RngStream rng) {
    TrajectoryRecord rec;
    rec.dt_used = dt;
    SampleWriter writer(rec, ctx, grid, dt, true);

    const double root_dt = std::sqrt(dt);
    const double floor2 = integ.norm_floor * integ.norm_floor;
    const RealVector& ld = ctx.carrier.l_diag; // sqrt(gamma) * z pattern at the probe
    const Vector lc = ld.cast<Complex>();

    std::vector<Vector> members = ens.states;
    for (auto& m : members) m.normalize();
    const std::vector<double>& w = ens.weights;

    std::vector<Matrix> props;
    if (integ.scheme == Scheme::SplitStepUnitary) {
        props = block_propagators(ctx, dt);
    } else if (integ.scheme != Scheme::HeunStratonovich) {
        throw std::invalid_argument("classical noise runs need a Stratonovich scheme");
    }

    const long snap_steps = grid.snapshot_stride > 0
                                ? std::max<long>(1, std::lround(grid.snapshot_stride / dt))
                                : 0;
    const auto snapshot = [&](double t) {
        Vector flat(ctx.carrier.dim() * static_cast<Eigen::Index>(members.size()));
        for (std::size_t m = 0; m < members.size(); ++m)
            flat.segment(static_cast<Eigen::Index>(m) * ctx.carrier.dim(), ctx.carrier.dim()) =
                members[m];
        rec.snapshot_times.push_back(t);
        rec.snapshots.push_back(std::move(flat));
    };

    writer.write_ensemble(0, members, w);
    if (snap_steps > 0) snapshot(0.0);
    for (long step = 0; step < writer.n_steps(); ++step) {
        const double dw = root_dt * rng.next_normal();
        if (integ.scheme == Scheme::SplitStepUnitary) {
            const Vector half_phase =
                (Complex(0, -0.5) * dw * ld.cast<Complex>().array()).exp().matrix();
            for (auto& m : members) {
                m = half_phase.cwiseProduct(m);
                apply_propagators(props, ctx, m);
                m = half_phase.cwiseProduct(m);
            }
        } else {
            for (auto& m : members) {
                const Vector a0 = Complex(0, -1) * apply_h(ctx, m);
                const Vector b0 = Complex(0, -1) * lc.cwiseProduct(m);
                const Vector pred = m + dt * a0 + dw * b0;
                const Vector a1 = Complex(0, -1) * apply_h(ctx, pred);
                const Vector b1 = Complex(0, -1) * lc.cwiseProduct(pred);
                Vector next = m + (0.5 * dt) * (a0 + a1) + (0.5 * dw) * (b0 + b1);
                const double n2 = next.squaredNorm();
                check_norm(n2, floor2);
                m = integ.renormalize ? Vector(next / std::sqrt(n2)) : next;
            }
        }
        const long s = step + 1;
        if (writer.due(s)) writer.write_ensemble(s, members, w);
        if (snap_steps > 0 && s % snap_steps == 0) snapshot(static_cast<double>(s) * dt);
    }
    rec.final_state = members.front();
    return rec;
}

} // namespace

void classify_trapping(TrajectoryRecord& rec, const TrapConfig& trap) {
    rec.trapped_in = -1;
    rec.hit_time = -1.0;
    const Eigen::Index n = rec.times.size();
    if (n < 2) return;
    const double dt_s = rec.times[1] - rec.times[0];
    const Eigen::Index dwell_n =
        static_cast<Eigen::Index>(std::ceil(trap.dwell / dt_s - 1e-9));
    const double thresh = 1.0 - trap.epsilon;

    Eigen::Index best_start = -1;
    int best_k = -1;
    for (Eigen::Index k = 0; k < rec.overlap.cols(); ++k) {
        Eigen::Index run = 0;
        Eigen::Index start = -1;
        for (Eigen::Index i = n - 1; i >= 0; --i) {
            run = rec.overlap(i, k) >= thresh ? run + 1 : 0;
            if (run >= dwell_n + 1) start = i;
        }
        if (start >= 0 && (best_start < 0 || start < best_start)) {
            best_start = start;
            best_k = static_cast<int>(k);
        }
    }
    if (best_k < 0) return;
    rec.trapped_in = best_k;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (rec.overlap(i, best_k) >= thresh) {
            rec.hit_time = rec.times[i];
            break;
        }
    }
}

TrajectoryRecord evolve_trajectory_ctx(const Vector& psi0_carrier, const EvolutionContext& ctx,
                                       const IntegratorConfig& integ, const RunGrid& grid,
                                       const TrapConfig& trap, RngStream rng,
                                       const NoisePath* path) {
    if (integ.scheme != Scheme::EulerMaruyamaIto && integ.scheme != Scheme::SplitStepMeasurement)
        throw std::invalid_argument("quantum trajectories need an Ito scheme");
    const int attempts = path ? 1 : integ.max_halvings + 1;
    double dt = integ.dt;
    for (int r = 0; r < attempts; ++r, dt *= 0.5) {
        try {
            TrajectoryRecord rec = run_sse_once(psi0_carrier, ctx, integ, grid, dt, rng, path);
            classify_trapping(rec, trap);
            return rec;
        } catch (const StepFailure&) {
            if (r + 1 == attempts) break;
        }
    }
    throw std::runtime_error("trajectory failed to integrate after dt halvings");
}

TrajectoryRecord evolve_trajectory(const Vector& psi0, const ChainModel& model,
                                   const DfsDecomposition& dec, const IntegratorConfig& integ,
                                   const RunGrid& grid, const TrapConfig& trap, RngStream rng) {
    const EvolutionContext ctx = make_context(model, dec, {psi0});
    const Vector psi0_c = restrict_to_carrier(ctx.carrier, psi0);
    TrajectoryRecord rec = evolve_trajectory_ctx(psi0_c, ctx, integ, grid, trap, rng);
    rec.final_state = expand_from_carrier(ctx.carrier, rec.final_state);
    for (auto& s : rec.snapshots) s = expand_from_carrier(ctx.carrier, s);
    return rec;
}

TrajectoryRecord evolve_classical_noise_ctx(const PureEnsemble& ens_carrier,
                                            const EvolutionContext& ctx,
                                            const IntegratorConfig& integ, const RunGrid& grid,
                                            const TrapConfig& trap, RngStream rng) {
    const int attempts = integ.scheme == Scheme::SplitStepUnitary ? 1 : integ.max_halvings + 1;
    double dt = integ.dt;
    for (int r = 0; r < attempts; ++r, dt *= 0.5) {
        try {
            TrajectoryRecord rec = run_classical_once(ens_carrier, ctx, integ, grid, dt, rng);
            classify_trapping(rec, trap);
            return rec;
        } catch (const StepFailure&) {
            if (r + 1 == attempts) break;
        }
    }
    throw std::runtime_error("classical run failed to integrate after dt halvings");
}

TrajectoryRecord evolve_classical_noise(const PureEnsemble& ens, const ChainModel& model,
                                        const DfsDecomposition& dec, const IntegratorConfig& integ,
                                        const RunGrid& grid, const TrapConfig& trap,
                                        RngStream rng) {
    const EvolutionContext ctx = make_context(model, dec, ens.states);
    PureEnsemble ens_c;
    ens_c.weights = ens.weights;
    for (const auto& s : ens.states) ens_c.states.push_back(restrict_to_carrier(ctx.carrier, s));
    TrajectoryRecord rec = evolve_classical_noise_ctx(ens_c, ctx, integ, grid, trap, rng);
    rec.final_state = expand_from_carrier(ctx.carrier, rec.final_state);
    return rec;
}

LindbladRun evolve_lindblad_ctx(const Matrix& rho0_carrier, const EvolutionContext& ctx,
                                double dt, const RunGrid& grid, double mean_window_fraction) {
    const Eigen::Index d = ctx.carrier.dim();
    const Matrix& h = ctx.carrier.h;
    const RealVector& ld = ctx.carrier.l_diag;
    // diagonal L: dissipator acts elementwise, D_ij = -(l_i - l_j)^2 / 2
    RealMatrix dmat(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
            const double diff = ld[i] - ld[j];
            dmat(i, j) = -0.5 * diff * diff;
        }
    const Matrix dc = dmat.cast<Complex>();
    const auto rhs = [&](const Matrix& rho) -> Matrix {
        return Complex(0, -1) * (h * rho - rho * h) + dc.cwiseProduct(rho);
    };

    const long stride_steps = std::max<long>(1, std::lround(grid.sample_stride / dt));
    const long n_steps = std::lround(grid.t_final / dt);
    const Eigen::Index n_samples = n_steps / stride_steps + 1;

    LindbladRun run;
    run.times.resize(n_samples);
    run.sites.resize(n_samples, ctx.carrier.n_sites);
    run.overlap.resize(n_samples, ctx.n_subspaces + 1);

    const double window_start = grid.t_final * (1.0 - mean_window_fraction) - 1e-12;
    Matrix window_sum = Matrix::Zero(d, d);
    long window_count = 0;

    Matrix rho = rho0_carrier;
    rho /= rho.trace().real();
    Eigen::Index isample = 0;
    const auto record = [&](long step, const Matrix& r) {
        const double t = static_cast<double>(step) * dt;
        run.times[isample] = t;
        const RealVector pop = r.diagonal().real();
        run.sites.row(isample) = (ctx.carrier.site_z.transpose() * pop).transpose();
        double total = 0.0;
        for (int k = 0; k < ctx.n_subspaces; ++k) {
            const auto& b = ctx.dfs_bases[static_cast<std::size_t>(k)];
            const double w = std::real((b.adjoint() * r * b).trace());
            run.overlap(isample, k) = w;
            total += w;
        }
        run.overlap(isample, ctx.n_subspaces) = std::max(0.0, 1.0 - total);
        ++isample;
        if (t >= window_start) {
            window_sum += r;
            ++window_count;
        }
    };

    record(0, rho);
    for (long step = 0; step < n_steps; ++step) {
        const Matrix k1 = rhs(rho);
        const Matrix k2 = rhs(rho + (0.5 * dt) * k1);
        const Matrix k3 = rhs(rho + (0.5 * dt) * k2);
        const Matrix k4 = rhs(rho + dt * k3);
        rho += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        const long s = step + 1;
        if (s % stride_steps == 0) record(s, rho);
    }
    run.final_rho = rho;
    run.window_mean_rho =
        window_count > 0 ? Matrix(window_sum / static_cast<double>(window_count)) : rho;
    run.trace_drift = std::abs(rho.trace().real() - 1.0);
    return run;
}

LindbladRun evolve_lindblad(const Matrix& rho0, const ChainModel& model,
                            const DfsDecomposition& dec, double dt, const RunGrid& grid,
                            double mean_window_fraction) {
    std::vector<Vector> support;
    for (Eigen::Index c = 0; c < rho0.cols(); ++c) {
        Vector col = rho0.col(c);
        if (col.norm() > 1e-14) support.push_back(std::move(col));
    }
    const EvolutionContext ctx = make_context(model, dec, support);
    const Matrix rho0_c = restrict_to_carrier(ctx.carrier, rho0);
    LindbladRun run = evolve_lindblad_ctx(rho0_c, ctx, dt, grid, mean_window_fraction);
    run.final_rho = expand_from_carrier(ctx.carrier, run.final_rho);
    run.window_mean_rho = expand_from_carrier(ctx.carrier, run.window_mean_rho);
    return run;
}

} // namespace qsync

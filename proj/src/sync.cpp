#include "qsync/sync.hpp"
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace qsync {

namespace {

struct WindowView {
    const double* t = nullptr;
    const double* y = nullptr;
    Eigen::Index n = 0;
    double span() const { return n > 1 ? t[n - 1] - t[0] : 0.0; }
};

WindowView slice(const RealVector& times, const RealVector& values, double t_lo, double t_hi) {
    if (times.size() != values.size()) throw std::invalid_argument("series length mismatch");
    Eigen::Index lo = 0;
    while (lo < times.size() && times[lo] < t_lo - 1e-12) ++lo;
    Eigen::Index hi = times.size();
    while (hi > lo && times[hi - 1] > t_hi + 1e-12) --hi;
    if (hi - lo < 8) throw std::invalid_argument("fit window holds too few samples");
    return {times.data() + lo, values.data() + lo, hi - lo};
}

// linear LS of y ~ a cos(wt) + b sin(wt) + c at fixed w; returns (a, b, c)
Eigen::Vector3d ls_at_frequency(const WindowView& w, double omega, double* sse) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    for (Eigen::Index i = 0; i < w.n; ++i) {
        const double c = std::cos(omega * w.t[i]);
        const double s = std::sin(omega * w.t[i]);
        m(0, 0) += c * c;
        m(0, 1) += c * s;
        m(0, 2) += c;
        m(1, 1) += s * s;
        m(1, 2) += s;
        rhs[0] += c * w.y[i];
        rhs[1] += s * w.y[i];
        rhs[2] += w.y[i];
    }
    m(1, 0) = m(0, 1);
    m(2, 0) = m(0, 2);
    m(2, 1) = m(1, 2);
    m(2, 2) = static_cast<double>(w.n);
    const Eigen::Vector3d sol = m.ldlt().solve(rhs);
    if (sse) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < w.n; ++i) {
            const double fit = sol[0] * std::cos(omega * w.t[i]) +
                               sol[1] * std::sin(omega * w.t[i]) + sol[2];
            const double r = w.y[i] - fit;
            acc += r * r;
        }
        *sse = acc;
    }
    return sol;
}

double sse_at(const WindowView& w, double omega) {
    double sse = 0.0;
    ls_at_frequency(w, omega, &sse);
    return sse;
}

// discrete periodogram at the Fourier frequencies of the window
double periodogram_peak(const WindowView& w) {
    const double span = w.span();
    const double mean = std::accumulate(w.y, w.y + w.n, 0.0) / static_cast<double>(w.n);
    double best_power = -1.0;
    double best_omega = 0.0;
    const Eigen::Index kmax = w.n / 2;
    for (Eigen::Index k = 1; k <= kmax; ++k) {
        const double omega = 2.0 * M_PI * static_cast<double>(k) / span;
        double c = 0.0, s = 0.0;
        for (Eigen::Index i = 0; i < w.n; ++i) {
            const double y = w.y[i] - mean;
            c += y * std::cos(omega * w.t[i]);
            s += y * std::sin(omega * w.t[i]);
        }
        const double power = c * c + s * s;
        if (power > best_power) {
            best_power = power;
            best_omega = omega;
        }
    }
    return best_omega;
}

double golden_refine(const WindowView& w, double lo, double hi) {
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = sse_at(w, x1), f2 = sse_at(w, x2);
    for (int it = 0; it < 80 && (b - a) > 1e-10 * b; ++it) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = sse_at(w, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = sse_at(w, x2);
        }
    }
    return 0.5 * (a + b);
}

double wrap_angle(double x) {
    x = std::fmod(x + M_PI, 2.0 * M_PI);
    if (x < 0) x += 2.0 * M_PI;
    return x - M_PI;
}

double half_amplitude(const WindowView& w, double omega, bool second) {
    WindowView h = w;
    const Eigen::Index m = w.n / 2;
    if (second) {
        h.t += m;
        h.y += m;
        h.n = w.n - m;
    } else {
        h.n = m;
    }
    const Eigen::Vector3d sol = ls_at_frequency(h, omega, nullptr);
    return std::hypot(sol[0], sol[1]);
}

} // namespace

SinusoidFit fit_sinusoid(const RealVector& times, const RealVector& values, double t_lo,
                         double t_hi) {
    const WindowView w = slice(times, values, t_lo, t_hi);
    const double span = w.span();
    const double seed = periodogram_peak(w);
    if (seed * span < 2.0 * 2.0 * M_PI)
        throw std::invalid_argument("fit window shorter than two periods of the dominant frequency");
    const double bin = 2.0 * M_PI / span;
    const double omega = golden_refine(w, std::max(bin, seed - bin), seed + bin);

    double sse = 0.0;
    const Eigen::Vector3d sol = ls_at_frequency(w, omega, &sse);
    SinusoidFit fit;
    fit.frequency = omega;
    fit.amplitude = std::hypot(sol[0], sol[1]);
    fit.phase = std::atan2(-sol[1], sol[0]);
    fit.offset = sol[2];
    fit.residual_rms = std::sqrt(sse / static_cast<double>(w.n));
    const double a1 = half_amplitude(w, omega, false);
    const double a2 = half_amplitude(w, omega, true);
    fit.amplitude_drift = std::abs(a2 - a1) / std::max(fit.amplitude, 1e-300);
    return fit;
}

SyncVerdict detect_sync(const RealVector& times, const RealVector& series_a,
                        const RealVector& series_b, double t_lo, double t_hi,
                        const SyncThresholds& thr) {
    SyncVerdict verdict;
    SinusoidFit fa, fb;
    try {
        fa = fit_sinusoid(times, series_a, t_lo, t_hi);
        fb = fit_sinusoid(times, series_b, t_lo, t_hi);
    } catch (const std::invalid_argument&) {
        return verdict; // no resolvable oscillation in the window
    }
    verdict.amplitude = 0.5 * (fa.amplitude + fb.amplitude);
    verdict.residual_noise = std::max(fa.residual_rms / std::max(fa.amplitude, 1e-300),
                                      fb.residual_rms / std::max(fb.amplitude, 1e-300));

    const double fmax = std::max(fa.frequency, fb.frequency);
    const bool same_freq = std::abs(fa.frequency - fb.frequency) <= thr.frequency_rel * fmax;
    const bool clean = fa.residual_rms <= thr.residual_rel * fa.amplitude &&
                       fb.residual_rms <= thr.residual_rel * fb.amplitude;
    const bool stable = fa.amplitude_drift <= thr.drift_rel && fb.amplitude_drift <= thr.drift_rel;
    const bool loud = fa.amplitude >= thr.amplitude_floor && fb.amplitude >= thr.amplitude_floor;
    verdict.synchronized = same_freq && clean && stable && loud;
    if (!verdict.synchronized) return verdict;

    verdict.frequency = 0.5 * (fa.frequency + fb.frequency);
    const double dphi = wrap_angle(fa.phase - fb.phase);
    if (std::abs(std::abs(dphi) - M_PI) < thr.phase_window)
        verdict.relative_phase = RelativePhase::AntiPhase;
    else if (std::abs(dphi) < thr.phase_window)
        verdict.relative_phase = RelativePhase::InPhase;
    return verdict;
}

TrapStats stationary_histogram(const std::vector<TrajectoryRecord>& records, int n_subspaces) {
    if (records.empty()) throw std::invalid_argument("stationary_histogram: no records");
    TrapStats st;
    st.counts.assign(static_cast<std::size_t>(n_subspaces) + 1, 0);
    st.total = static_cast<int>(records.size());
    for (const auto& r : records) {
        if (r.trapped_in < 0)
            ++st.undecided;
        else
            ++st.counts[static_cast<std::size_t>(r.trapped_in)];
    }
    const int classified = st.total - st.undecided;
    st.fractions.resize(st.counts.size());
    for (std::size_t k = 0; k < st.counts.size(); ++k)
        st.fractions[k] = classified > 0 ? static_cast<double>(st.counts[k]) / classified : 0.0;
    return st;
}

FidelityStats ergodicity_fidelity(const std::vector<Matrix>& mean_states, const Matrix& steady,
                                  const std::vector<double>& weights) {
    if (mean_states.empty()) throw std::invalid_argument("ergodicity_fidelity: no states");
    FidelityStats st;
    st.n = static_cast<int>(mean_states.size());
    std::vector<double> f(mean_states.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < mean_states.size(); ++i) {
        f[i] = fidelity(mean_states[i], steady);
        acc += f[i];
    }
    st.empirical_mean = acc / static_cast<double>(st.n);
    double var = 0.0;
    for (const double v : f) var += (v - st.empirical_mean) * (v - st.empirical_mean);
    st.empirical_variance = st.n > 1 ? var / static_cast<double>(st.n - 1) : 0.0;
    st.std_error = std::sqrt(st.empirical_variance / static_cast<double>(st.n));

    double w2 = 0.0, w3 = 0.0;
    for (const double w : weights) {
        w2 += w * w;
        w3 += w * w * w;
    }
    st.predicted = w2;
    st.predicted_variance = w3 - w2 * w2;
    const double nb = static_cast<double>(weights.size());
    st.popoviciu_bound = (1.0 - 1.0 / nb) * (1.0 - 1.0 / nb) / 4.0;
    if (st.predicted < 1.0 / nb - 1e-12)
        throw std::logic_error("ergodicity_fidelity: participation ratio below 1/n_blocks");
    return st;
}

Matrix window_mean_state(const TrajectoryRecord& rec, double fraction) {
    if (rec.snapshots.empty())
        throw std::invalid_argument("window_mean_state: record holds no state snapshots");
    const double t_end = rec.snapshot_times.back();
    const double t_start = t_end * (1.0 - fraction) - 1e-12;
    Matrix acc;
    long count = 0;
    for (std::size_t i = 0; i < rec.snapshots.size(); ++i) {
        if (rec.snapshot_times[i] < t_start) continue;
        if (count == 0)
            acc = dyad(rec.snapshots[i]);
        else
            acc += dyad(rec.snapshots[i]);
        ++count;
    }
    if (count == 0) throw std::invalid_argument("window_mean_state: no snapshots in the window");
    return acc / static_cast<double>(count);
}

Matrix window_mean_ensemble(const TrajectoryRecord& rec, const std::vector<double>& weights,
                            double fraction) {
    if (rec.snapshots.empty())
        throw std::invalid_argument("window_mean_ensemble: record holds no state snapshots");
    const Eigen::Index members = static_cast<Eigen::Index>(weights.size());
    if (members == 0 || rec.snapshots.front().size() % members != 0)
        throw std::invalid_argument("window_mean_ensemble: snapshot size not a member multiple");
    const Eigen::Index d = rec.snapshots.front().size() / members;
    const double t_end = rec.snapshot_times.back();
    const double t_start = t_end * (1.0 - fraction) - 1e-12;
    Matrix acc = Matrix::Zero(d, d);
    long count = 0;
    for (std::size_t i = 0; i < rec.snapshots.size(); ++i) {
        if (rec.snapshot_times[i] < t_start) continue;
        for (Eigen::Index m = 0; m < members; ++m) {
            const Vector psi = rec.snapshots[i].segment(m * d, d);
            acc += weights[static_cast<std::size_t>(m)] * dyad(psi);
        }
        ++count;
    }
    if (count == 0) throw std::invalid_argument("window_mean_ensemble: no snapshots in the window");
    return acc / static_cast<double>(count);
}

HittingStats hitting_time_stats(const std::vector<TrajectoryRecord>& records, int n_subspaces,
                                int bins) {
    HittingStats st;
    std::vector<double> taus;
    for (const auto& r : records)
        if (r.trapped_in >= 0 && r.trapped_in < n_subspaces) taus.push_back(r.hit_time);
    st.count = static_cast<int>(taus.size());
    if (taus.empty()) return st;
    const double mean = std::accumulate(taus.begin(), taus.end(), 0.0) / taus.size();
    double var = 0.0;
    for (const double t : taus) var += (t - mean) * (t - mean);
    st.mean = mean;
    st.variance = taus.size() > 1 ? var / (taus.size() - 1.0) : 0.0;

    const double lo = *std::min_element(taus.begin(), taus.end());
    const double hi = *std::max_element(taus.begin(), taus.end());
    const double width = std::max(hi - lo, 1e-12) / bins;
    st.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b) st.bin_edges[static_cast<std::size_t>(b)] = lo + b * width;
    st.bin_counts.assign(static_cast<std::size_t>(bins), 0);
    for (const double t : taus) {
        int b = static_cast<int>((t - lo) / width);
        b = std::clamp(b, 0, bins - 1);
        ++st.bin_counts[static_cast<std::size_t>(b)];
    }
    return st;
}

FrequencyHistogram multiplexing_report(const std::vector<SyncVerdict>& verdicts,
                                       double cluster_rel) {
    FrequencyHistogram h;
    h.total = static_cast<int>(verdicts.size());
    std::vector<double> freqs;
    for (const auto& v : verdicts) {
        if (v.synchronized && v.frequency)
            freqs.push_back(*v.frequency);
        else
            ++h.unsynchronized;
    }
    std::sort(freqs.begin(), freqs.end());
    std::size_t i = 0;
    while (i < freqs.size()) {
        std::size_t j = i + 1;
        double sum = freqs[i];
        while (j < freqs.size() && freqs[j] - freqs[i] <= cluster_rel * freqs[i]) {
            sum += freqs[j];
            ++j;
        }
        h.frequencies.push_back(sum / static_cast<double>(j - i));
        h.counts.push_back(static_cast<int>(j - i));
        i = j;
    }
    const double n_sync = static_cast<double>(freqs.size());
    for (const int c : h.counts) {
        const double p = n_sync > 0 ? c / n_sync : 0.0;
        h.fractions.push_back(p);
        h.ci3.push_back(n_sync > 0 ? 3.0 * std::sqrt(p * (1.0 - p) / n_sync) : 0.0);
    }
    return h;
}

} // namespace qsync

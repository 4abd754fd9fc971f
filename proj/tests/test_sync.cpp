#include "qsync/sync.hpp"
#include "qsync/rng.hpp"
#include "doctest.h"
#include <cmath>

using namespace qsync;

namespace {

RealVector time_grid(double t_final, double dt) {
    const Eigen::Index n = static_cast<Eigen::Index>(std::lround(t_final / dt)) + 1;
    RealVector t(n);
    for (Eigen::Index i = 0; i < n; ++i) t[i] = i * dt;
    return t;
}

template <class F>
RealVector sample(const RealVector& t, F f) {
    RealVector y(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) y[i] = f(t[i]);
    return y;
}

RealVector noisy(const RealVector& y, double sigma, std::uint64_t seed) {
    RngStream rng(seed, 0);
    RealVector out = y;
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += sigma * rng.next_normal();
    return out;
}

TrajectoryRecord record_with(int trapped, double hit) {
    TrajectoryRecord r;
    r.trapped_in = trapped;
    r.hit_time = hit;
    return r;
}

} // namespace

TEST_CASE("sinusoid fit recovers frequency, amplitude, phase and offset") {
    const RealVector t = time_grid(20.0, 0.05);
    for (const double w : {0.7, 1.3, 2.0, 3.7}) {
        const RealVector y = sample(t, [&](double x) { return 0.42 * std::cos(w * x + 0.6) + 0.1; });
        const SinusoidFit fit = fit_sinusoid(t, y, 0.0, 20.0);
        CHECK(std::abs(fit.frequency - w) < 1e-5 * w);
        CHECK(std::abs(fit.amplitude - 0.42) < 1e-6);
        CHECK(std::abs(fit.phase - 0.6) < 1e-5);
        CHECK(std::abs(fit.offset - 0.1) < 1e-6);
        CHECK(fit.residual_rms < 1e-8);
        CHECK(fit.amplitude_drift < 1e-6);
    }
}

TEST_CASE("sinusoid fit tolerates realistic noise") {
    const RealVector t = time_grid(30.0, 0.05);
    for (const double w : {0.5, 1.0, 2.2}) {
        const RealVector clean = sample(t, [&](double x) { return 0.3 * std::cos(w * x - 0.4); });
        const RealVector y = noisy(clean, 0.003, 17 + static_cast<std::uint64_t>(10 * w));
        const SinusoidFit fit = fit_sinusoid(t, y, 5.0, 30.0);
        CHECK(std::abs(fit.frequency - w) < 1e-3 * w);
        CHECK(std::abs(fit.amplitude - 0.3) < 0.01);
        CHECK(fit.residual_rms < 0.006);
    }
}

TEST_CASE("sinusoid fit refuses windows without two periods") {
    const RealVector t = time_grid(20.0, 0.05);
    const RealVector y = sample(t, [&](double x) { return std::cos(0.2 * x); });
    CHECK_THROWS_AS(fit_sinusoid(t, y, 10.0, 20.0), std::invalid_argument);

    const RealVector t2 = time_grid(1.0, 0.25);
    const RealVector y2 = sample(t2, [](double x) { return std::cos(x); });
    CHECK_THROWS_AS(fit_sinusoid(t2, y2, 0.0, 1.0), std::invalid_argument); // too few samples
}

TEST_CASE("sync detection separates phase-locked pairs from the rest") {
    const RealVector t = time_grid(40.0, 0.05);
    const double w = 2.0;
    const RealVector a =
        noisy(sample(t, [&](double x) { return 0.3 * std::cos(w * x); }), 0.003, 31);
    const double t_lo = 20.0, t_hi = 40.0;

    SUBCASE("anti-phase") {
        const RealVector b =
            noisy(sample(t, [&](double x) { return -0.28 * std::cos(w * x + 0.01); }), 0.003, 32);
        const SyncVerdict v = detect_sync(t, a, b, t_lo, t_hi);
        REQUIRE(v.synchronized);
        REQUIRE(v.frequency.has_value());
        CHECK(std::abs(*v.frequency - w) < 1e-3 * w);
        REQUIRE(v.relative_phase.has_value());
        CHECK(*v.relative_phase == RelativePhase::AntiPhase);
        CHECK(v.amplitude == doctest::Approx(0.29).epsilon(0.05));
    }
    SUBCASE("in-phase") {
        const RealVector b =
            noisy(sample(t, [&](double x) { return 0.25 * std::cos(w * x - 0.02); }), 0.003, 33);
        const SyncVerdict v = detect_sync(t, a, b, t_lo, t_hi);
        REQUIRE(v.synchronized);
        REQUIRE(v.relative_phase.has_value());
        CHECK(*v.relative_phase == RelativePhase::InPhase);
    }
    SUBCASE("detuned partner fails") {
        const RealVector b =
            noisy(sample(t, [&](double x) { return 0.3 * std::cos(1.1 * w * x); }), 0.003, 34);
        CHECK_FALSE(detect_sync(t, a, b, t_lo, t_hi).synchronized);
    }
    SUBCASE("flat partner fails") {
        const RealVector b = noisy(sample(t, [](double) { return 0.0; }), 0.004, 35);
        CHECK_FALSE(detect_sync(t, a, b, t_lo, t_hi).synchronized);
    }
    SUBCASE("decaying partner fails") {
        const RealVector b = sample(t, [&](double x) {
            return 0.3 * (1.0 - 0.3 * x / 40.0) * std::cos(w * x);
        });
        CHECK_FALSE(detect_sync(t, a, b, t_lo, t_hi).synchronized);
    }
    SUBCASE("window without oscillations fails quietly") {
        const RealVector slow = sample(t, [](double x) { return std::cos(0.1 * x); });
        CHECK_FALSE(detect_sync(t, slow, slow, 30.0, 40.0).synchronized);
    }
}

TEST_CASE("trap histogram counts subspaces, complement and undecided") {
    std::vector<TrajectoryRecord> recs;
    for (int i = 0; i < 6; ++i) recs.push_back(record_with(0, 1.0));
    for (int i = 0; i < 3; ++i) recs.push_back(record_with(2, 5.0)); // complement
    recs.push_back(record_with(-1, -1.0));

    const TrapStats st = stationary_histogram(recs, 2);
    CHECK(st.total == 10);
    CHECK(st.undecided == 1);
    REQUIRE(st.counts.size() == 3);
    CHECK(st.counts[0] == 6);
    CHECK(st.counts[1] == 0);
    CHECK(st.counts[2] == 3);
    CHECK(st.fractions[0] == doctest::Approx(6.0 / 9.0));
    CHECK(st.fractions[2] == doctest::Approx(3.0 / 9.0));
    CHECK_THROWS_AS(stationary_histogram({}, 2), std::invalid_argument);
}

TEST_CASE("hitting statistics use only subspace-trapped records") {
    std::vector<TrajectoryRecord> recs;
    recs.push_back(record_with(0, 2.0));
    recs.push_back(record_with(1, 4.0));
    recs.push_back(record_with(0, 6.0));
    recs.push_back(record_with(2, 50.0)); // complement, ignored
    recs.push_back(record_with(-1, -1.0));

    const HittingStats st = hitting_time_stats(recs, 2, 4);
    CHECK(st.count == 3);
    CHECK(st.mean == doctest::Approx(4.0));
    CHECK(st.variance == doctest::Approx(4.0));
    REQUIRE(st.bin_edges.size() == 5);
    CHECK(st.bin_edges.front() == doctest::Approx(2.0));
    CHECK(st.bin_edges.back() == doctest::Approx(6.0));
    int total = 0;
    for (const int c : st.bin_counts) total += c;
    CHECK(total == 3);

    const HittingStats empty = hitting_time_stats({record_with(2, 1.0)}, 2);
    CHECK(empty.count == 0);
}

TEST_CASE("frequency histogram clusters verdicts and tracks the rest") {
    std::vector<SyncVerdict> vs;
    const auto sync_at = [](double f) {
        SyncVerdict v;
        v.synchronized = true;
        v.frequency = f;
        return v;
    };
    vs.push_back(sync_at(1.0000));
    vs.push_back(sync_at(0.9995));
    vs.push_back(sync_at(1.0005));
    vs.push_back(sync_at(2.0));
    vs.push_back(sync_at(2.001));
    vs.push_back(SyncVerdict{});
    vs.push_back(SyncVerdict{});

    const FrequencyHistogram h = multiplexing_report(vs);
    CHECK(h.total == 7);
    CHECK(h.unsynchronized == 2);
    REQUIRE(h.frequencies.size() == 2);
    CHECK(h.frequencies[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(h.frequencies[1] == doctest::Approx(2.0005).epsilon(1e-3));
    CHECK(h.counts[0] == 3);
    CHECK(h.counts[1] == 2);
    CHECK(h.fractions[0] == doctest::Approx(0.6));
    CHECK(h.ci3[0] == doctest::Approx(3.0 * std::sqrt(0.6 * 0.4 / 5.0)));
}

TEST_CASE("windowed state means average the trailing snapshots") {
    Vector e0 = Vector::Zero(2), e1 = Vector::Zero(2);
    e0[0] = 1.0;
    e1[1] = 1.0;

    TrajectoryRecord rec;
    rec.snapshot_times = {0.0, 1.0, 2.0, 3.0, 4.0};
    rec.snapshots = {e0, e0, e0, e1, e1};

    const Matrix m = window_mean_state(rec, 0.5); // t >= 2
    CHECK(std::abs(m(0, 0).real() - 1.0 / 3.0) < 1e-12);
    CHECK(std::abs(m(1, 1).real() - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(m.trace().real() - 1.0) < 1e-12);

    TrajectoryRecord bare;
    CHECK_THROWS_AS(window_mean_state(bare, 0.5), std::invalid_argument);
}

TEST_CASE("windowed ensemble means weight the stacked members") {
    Vector e0 = Vector::Zero(2), e1 = Vector::Zero(2);
    e0[0] = 1.0;
    e1[1] = 1.0;
    Vector snap(4);
    snap << e0, e1; // member 1 = e0, member 2 = e1

    TrajectoryRecord rec;
    rec.snapshot_times = {0.0, 1.0};
    rec.snapshots = {snap, snap};

    const Matrix m = window_mean_ensemble(rec, {0.25, 0.75}, 1.0);
    CHECK(std::abs(m(0, 0).real() - 0.25) < 1e-12);
    CHECK(std::abs(m(1, 1).real() - 0.75) < 1e-12);

    CHECK_THROWS_AS(window_mean_ensemble(rec, {0.2, 0.3, 0.5}, 1.0), std::invalid_argument);
}

TEST_CASE("ergodicity fidelity matches the block-weight prediction exactly") {
    Vector e0 = Vector::Zero(2), e1 = Vector::Zero(2);
    e0[0] = 1.0;
    e1[1] = 1.0;
    Matrix steady = Matrix::Zero(2, 2);
    steady(0, 0) = 0.3;
    steady(1, 1) = 0.7;

    // trapped fractions mirror the weights: 3 of 10 in block one
    std::vector<Matrix> means;
    for (int i = 0; i < 3; ++i) means.push_back(dyad(e0));
    for (int i = 0; i < 7; ++i) means.push_back(dyad(e1));

    const FidelityStats st = ergodicity_fidelity(means, steady, {0.3, 0.7});
    CHECK(st.n == 10);
    CHECK(st.predicted == doctest::Approx(0.58));
    CHECK(st.empirical_mean == doctest::Approx(0.58).epsilon(1e-9));
    CHECK(st.predicted_variance == doctest::Approx(0.0336));
    CHECK(st.empirical_variance == doctest::Approx(0.0336 * 10.0 / 9.0).epsilon(1e-9));
    CHECK(st.popoviciu_bound == doctest::Approx(0.0625));
    CHECK(st.std_error == doctest::Approx(std::sqrt(st.empirical_variance / 10.0)));

    // weights that do not form a distribution violate the participation bound
    CHECK_THROWS_AS(ergodicity_fidelity(means, steady, {0.1, 0.1}), std::logic_error);
}

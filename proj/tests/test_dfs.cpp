#include "doctest.h"
#include "qsync/dfs.hpp"
#include "qsync/rng.hpp"

#include <algorithm>
#include <cmath>

using namespace qsync;

namespace {

Matrix random_unitary(Eigen::Index d, RngStream& rng) {
    Matrix a(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            a(i, j) = Complex(rng.next_normal(), rng.next_normal());
    return eigh(0.5 * (a + a.adjoint())).vectors;
}

ChainModel model_for(int n, int site, double gamma = 1.0) {
    ChainParams p;
    p.n = n;
    p.site = site;
    p.gamma = gamma;
    return build_chain_model(p);
}

} // namespace

TEST_CASE("planted common eigenvectors are recovered") {
    RngStream rng(31, 0);
    for (int rep = 0; rep < 50; ++rep) {
        const Eigen::Index d = 6 + static_cast<Eigen::Index>(rng.next_u64() % 27); // 6..32
        const int k = 1 + static_cast<int>(rng.next_u64() % 3);                    // dark count
        const double c = 2.0 * rng.next_double() - 1.0;
        const Matrix v = random_unitary(d, rng);

        RealVector energies(d);
        for (Eigen::Index i = 0; i < d; ++i) energies[i] = 3.0 * (2.0 * rng.next_double() - 1.0);
        // make two of the dark energies degenerate now and then
        if (k >= 2 && rep % 3 == 0) energies[1] = energies[0];

        Matrix lv = Matrix::Zero(d, d);
        for (int i = 0; i < k; ++i) lv(i, i) = c;
        Matrix bright(d - k, d - k);
        for (Eigen::Index i = 0; i < d - k; ++i)
            for (Eigen::Index j = 0; j < d - k; ++j)
                bright(i, j) = Complex(rng.next_normal(), rng.next_normal());
        lv.bottomRightCorner(d - k, d - k) = 0.5 * (bright + bright.adjoint());

        const Matrix h = v * energies.asDiagonal() * v.adjoint();
        const Matrix l = v * lv * v.adjoint();

        const DfsDecomposition dec = find_dfs(h, l);
        Eigen::Index found = 0;
        for (const auto& sub : dec.subspaces) {
            if (std::abs(sub.c - c) < 1e-6) {
                found += sub.full_dim();
                // recovered vectors live in the planted span
                const Matrix planted = v.leftCols(k);
                const Matrix proj = planted * planted.adjoint();
                CHECK((proj * sub.full_basis - sub.full_basis).cwiseAbs().maxCoeff() < 1e-7);
            }
        }
        CHECK(found == k);
    }
}

TEST_CASE("N=8 site-3 chain: two single-frequency subspaces at 2J") {
    const ChainModel model = model_for(8, 3, 0.81);
    const DfsDecomposition dec = analyze_chain(model);
    REQUIRE(dec.subspaces.size() == 2);
    const double root_gamma = std::sqrt(0.81 * 1.0);

    CHECK(dec.subspaces[0].c / root_gamma == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(dec.subspaces[1].c / root_gamma == doctest::Approx(1.0).epsilon(1e-9));
    for (const auto& sub : dec.subspaces) {
        CHECK(sub.dim() == 2);
        REQUIRE(sub.frequencies.size() == 1);
        CHECK(sub.frequencies[0] == doctest::Approx(2.0).epsilon(1e-9));
    }
    CHECK(dec.subspaces[0].energies[0] == doctest::Approx(-7.0).epsilon(1e-9));
    CHECK(dec.subspaces[0].energies[1] == doctest::Approx(-5.0).epsilon(1e-9));
    CHECK(dec.subspaces[1].energies[0] == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(dec.subspaces[1].energies[1] == doctest::Approx(7.0).epsilon(1e-9));
}

TEST_CASE("N=8 synchronized eigenmode matches (1,-1,0,-1,1,0,1,-1)") {
    const ChainModel model = model_for(8, 3);
    const DfsDecomposition dec = analyze_chain(model);
    const double expected[8] = {1, -1, 0, -1, 1, 0, 1, -1};
    for (const auto& sub : dec.subspaces) {
        const RealVector mode = synchronized_eigenmode(model, sub);
        REQUIRE(mode.size() == 8);
        for (int s = 0; s < 8; ++s) CHECK(mode[s] == doctest::Approx(expected[s]).epsilon(1e-8));
    }
}

TEST_CASE("N=5 site-3 chain mirrors the N=8 structure") {
    const ChainModel model = model_for(5, 3);
    const DfsDecomposition dec = analyze_chain(model);
    REQUIRE(dec.subspaces.size() == 2);
    for (const auto& sub : dec.subspaces) {
        CHECK(sub.dim() == 2);
        REQUIRE(sub.frequencies.size() == 1);
        CHECK(sub.frequencies[0] == doctest::Approx(2.0).epsilon(1e-9));
    }
    CHECK(dec.subspaces[0].energies[0] == doctest::Approx(-4.0).epsilon(1e-9));
    CHECK(dec.subspaces[0].energies[1] == doctest::Approx(-2.0).epsilon(1e-9));
    CHECK(dec.subspaces[1].energies[0] == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(dec.subspaces[1].energies[1] == doctest::Approx(4.0).epsilon(1e-9));

    const double expected[5] = {1, -1, 0, -1, 1};
    const RealVector mode = synchronized_eigenmode(model, dec.subspaces[0]);
    for (int s = 0; s < 5; ++s) CHECK(mode[s] == doctest::Approx(expected[s]).epsilon(1e-8));
}

TEST_CASE("N=9 site-5 chain: four visible frequencies per subspace") {
    const ChainModel model = model_for(9, 5);
    const DfsDecomposition dec = analyze_chain(model);
    REQUIRE(dec.subspaces.size() == 2);
    const double r5 = std::sqrt(5.0);
    const double expected[4] = {1.0, r5 - 1.0, r5, r5 + 1.0};
    for (const auto& sub : dec.subspaces) {
        std::vector<double> freqs = sub.frequencies;
        std::sort(freqs.begin(), freqs.end());
        REQUIRE(freqs.size() == 4);
        std::vector<double> want(expected, expected + 4);
        std::sort(want.begin(), want.end());
        for (int i = 0; i < 4; ++i) CHECK(freqs[i] == doctest::Approx(want[i]).epsilon(1e-9));
    }
}

TEST_CASE("projectors resolve the identity") {
    // the complement keeps everything outside the oscillatory cores, including
    // dark vectors invisible to the site magnetizations, so the resolution
    // uses the core projectors rather than the full common eigenspaces
    const ChainModel model = model_for(5, 3);
    const DfsDecomposition dec = analyze_chain(model);
    Matrix sum = dec.complement_projector;
    for (const auto& sub : dec.subspaces) sum += sub.projector;
    CHECK((sum - Matrix::Identity(32, 32)).cwiseAbs().maxCoeff() < 1e-9);
    for (const auto& sub : dec.subspaces)
        CHECK(sub.full_dim() >= sub.dim());
}

TEST_CASE("overlaps sum to one and match projector traces") {
    const ChainModel model = model_for(5, 3);
    const DfsDecomposition dec = analyze_chain(model);
    RngStream rng(5, 1);
    Vector psi(32);
    for (Eigen::Index i = 0; i < 32; ++i) psi[i] = Complex(rng.next_normal(), rng.next_normal());
    psi.normalize();
    const auto w = overlaps(psi, dec);
    REQUIRE(w.size() == dec.subspaces.size() + 1);
    double total = 0;
    for (double x : w) {
        CHECK(x >= -1e-12);
        total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
    const auto wr = overlaps(Matrix(dyad(psi)), dec);
    for (std::size_t i = 0; i < w.size(); ++i)
        CHECK(w[i] == doctest::Approx(wr[i]).epsilon(1e-9));
}

TEST_CASE("complement blocks partition the complement and stay closed") {
    const ChainModel model = model_for(5, 3);
    const DfsDecomposition dec = analyze_chain(model);
    const auto blocks = complement_blocks(model, dec);
    Eigen::Index total = 0;
    for (const auto& b : blocks) total += b.basis.cols();
    Eigen::Index dark = 0;
    for (const auto& sub : dec.subspaces) dark += sub.full_dim();
    CHECK(total == 32 - dark);

    // smallest block leads and blocks are H- and L-invariant
    for (std::size_t i = 1; i < blocks.size(); ++i)
        CHECK(blocks[i].basis.cols() >= blocks[i - 1].basis.cols());
    for (const auto& b : blocks) {
        const Matrix pb = b.basis * b.basis.adjoint();
        CHECK((model.hamiltonian * pb - pb * model.hamiltonian * pb).cwiseAbs().maxCoeff() <
              1e-8);
        CHECK((model.measurement * pb - pb * model.measurement * pb).cwiseAbs().maxCoeff() <
              1e-8);
    }
}

TEST_CASE("N=5 lowest complement block has the documented spectrum") {
    const ChainModel model = model_for(5, 3);
    const DfsDecomposition dec = analyze_chain(model);
    const auto blocks = complement_blocks(model, dec);
    REQUIRE(!blocks.empty());
    REQUIRE(blocks.front().basis.cols() == 3);
    CHECK(blocks.front().energies[0] == doctest::Approx(-3.0 - std::sqrt(3.0)).epsilon(1e-9));
    CHECK(blocks.front().energies[1] == doctest::Approx(-3.0).epsilon(1e-9));
    CHECK(blocks.front().energies[2] == doctest::Approx(-3.0 + std::sqrt(3.0)).epsilon(1e-9));
}

TEST_CASE("complement reference state is normalized, dark-free and deterministic") {
    const ChainModel model = model_for(5, 3);
    const DfsDecomposition dec = analyze_chain(model);
    const Vector p1 = complement_reference_state(model, dec);
    const Vector p2 = complement_reference_state(model, dec);
    CHECK(std::abs(p1.norm() - 1.0) < 1e-12);
    CHECK((p1 - p2).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((dec.complement_projector * p1 - p1).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("dfs_pair_state: selection and errors") {
    const ChainModel model5 = model_for(5, 3);
    const DfsDecomposition dec5 = analyze_chain(model5);
    const Vector pair = dfs_pair_state(model5, dec5.subspaces[0]);
    CHECK(std::abs(pair.norm() - 1.0) < 1e-12);
    // equal superposition of the two core eigenvectors
    const Matrix& b = dec5.subspaces[0].basis;
    CHECK(std::abs(std::abs(b.col(0).dot(pair)) - 1.0 / std::sqrt(2.0)) < 1e-10);
    CHECK(std::abs(std::abs(b.col(1).dot(pair)) - 1.0 / std::sqrt(2.0)) < 1e-10);

    const ChainModel model9 = model_for(9, 5);
    const DfsDecomposition dec9 = analyze_chain(model9);
    // several frequencies: selector required
    CHECK_THROWS_AS((void)dfs_pair_state(model9, dec9.subspaces[0]), std::invalid_argument);
    CHECK_THROWS_AS((void)dfs_pair_state(model9, dec9.subspaces[0], 0.123),
                    std::invalid_argument);
    for (double f : dec9.subspaces[0].frequencies) {
        const Vector v = dfs_pair_state(model9, dec9.subspaces[0], f);
        CHECK(std::abs(v.norm() - 1.0) < 1e-12);
    }
}

TEST_CASE("lindblad kernel dimension distinguishes mixing from dephasing blocks") {
    // single qubit, L = sqrt(gamma) sz: every diagonal state is steady
    const ChainModel q1 = model_for(1, 1);
    CHECK(lindblad_kernel_dim(q1, Matrix::Identity(2, 2)) == 2);

    // the N=5 lowest complement block relaxes to a unique state
    const ChainModel model = model_for(5, 3);
    const DfsDecomposition dec = analyze_chain(model);
    const auto blocks = complement_blocks(model, dec);
    CHECK(lindblad_kernel_dim(model, blocks.front().basis) == 1);
}

#include <doctest.h>

#include <cmath>

#include "evflow/ssm.hpp"

using namespace evflow;
using ssm::cplx;

namespace {

ssm::DiagonalizedSystem standalone_system(int n, int d, uint64_t seed, double scale = 0.1) {
    ssm::StateMatrix a = ssm::hippo_legs(n);
    ssm::DiagonalizedSystem sys;
    for (uint64_t attempt = 0;; ++attempt) {
        try {
            sys = ssm::perturb_then_diagonalize(a, ssm::sample_perturbation(a, scale, seed + attempt));
            break;
        } catch (const DecompositionRejected&) {
        }
    }
    ssm::init_selective_params(sys, d, derive_seed(seed, "proj"));
    return sys;
}

Tensor randn(std::vector<int> shape, uint64_t seed, double sd = 1.0) {
    Tensor t(std::move(shape));
    RandomStream rng(seed);
    rng.fill_normal(t, sd);
    return t;
}

}  // namespace

TEST_CASE("hippo_legs entries follow the closed form") {
    SUBCASE("n=1") {
        ssm::StateMatrix a = ssm::hippo_legs(1);
        CHECK(a.entries.at(0, 0) == doctest::Approx(-1.0));
    }
    SUBCASE("n=2") {
        ssm::StateMatrix a = ssm::hippo_legs(2);
        CHECK(a.entries.at(0, 0) == doctest::Approx(-1.0));
        CHECK(a.entries.at(0, 1) == 0.0);
        CHECK(a.entries.at(1, 0) == doctest::Approx(-std::sqrt(3.0)));
        CHECK(a.entries.at(1, 1) == doctest::Approx(-2.0));
    }
    SUBCASE("n=0 rejected") { CHECK_THROWS_AS(ssm::hippo_legs(0), ValidationError); }
    SUBCASE("triangular spectrum is the diagonal") {
        // lower triangular, so eigenvalues are exactly the diagonal entries
        ssm::StateMatrix a = ssm::hippo_legs(8);
        for (int r = 0; r < 8; ++r) {
            CHECK(a.entries.at(r, r) == -static_cast<double>(r + 1));
            for (int c = r + 1; c < 8; ++c) CHECK(a.entries.at(r, c) == 0.0);
        }
    }
}

TEST_CASE("sample_perturbation hits the Frobenius ratio exactly") {
    ssm::StateMatrix a = ssm::hippo_legs(16);
    ssm::PerturbationMatrix e = ssm::sample_perturbation(a, 0.1, 42);
    double ratio = e.entries.frobenius_norm() / a.entries.frobenius_norm();
    CHECK(std::abs(ratio - 0.1) < 1e-9);

    ssm::PerturbationMatrix e2 = ssm::sample_perturbation(a, 0.1, 42);
    CHECK(e.entries.data == e2.entries.data);  // determinism

    ssm::PerturbationMatrix e3 = ssm::sample_perturbation(a, 0.1, 43);
    bool differs = false;
    for (size_t i = 0; i < e.entries.data.size(); ++i)
        if (e.entries.data[i] != e3.entries.data[i]) differs = true;
    CHECK(differs);

    CHECK_THROWS_AS(ssm::sample_perturbation(a, 0.0, 1), ValidationError);
}

TEST_CASE("perturb_then_diagonalize") {
    SUBCASE("zero perturbation of hippo(4) keeps the triangular spectrum") {
        ssm::StateMatrix a = ssm::hippo_legs(4);
        ssm::PerturbationMatrix e;
        e.entries = Tensor({4, 4});
        e.scale = 0.0;
        ssm::DiagonalizedSystem sys = ssm::perturb_then_diagonalize(a, e);
        std::vector<double> re;
        for (auto lam : sys.eigenvalues) {
            re.push_back(lam.real());
            CHECK(std::abs(lam.imag()) < 1e-9);
        }
        std::sort(re.begin(), re.end());
        for (int i = 0; i < 4; ++i) CHECK(re[static_cast<size_t>(i)] == doctest::Approx(-4.0 + i).epsilon(1e-7));
    }
    SUBCASE("accepted decompositions reconstruct within 1e-6") {
        for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
            ssm::DiagonalizedSystem sys = standalone_system(16, 8, seed);
            CHECK(sys.recon_error <= 1e-6);
        }
    }
    SUBCASE("all eigenvalues stable after projection") {
        for (uint64_t seed = 0; seed < 8; ++seed) {
            ssm::DiagonalizedSystem sys = standalone_system(16, 8, 100 + seed);
            for (auto lam : sys.eigenvalues) CHECK(lam.real() < 0.0);
        }
    }
    SUBCASE("defective matrix raises the resample signal") {
        ssm::StateMatrix jordan;
        jordan.n = 2;
        jordan.entries = Tensor({2, 2}, {-1.0, 1.0, 0.0, -1.0});
        ssm::PerturbationMatrix e;
        e.entries = Tensor({2, 2});
        CHECK_THROWS_AS(ssm::perturb_then_diagonalize(jordan, e), DecompositionRejected);
    }
}

TEST_CASE("discretize_zoh") {
    CHECK(ssm::discretize_zoh(cplx(-1.0, 0.0), 0.1).a_bar.real() == doctest::Approx(std::exp(-0.1)));
    CHECK(ssm::discretize_zoh(cplx(-1.0, 0.0), 0.1).b_scale == doctest::Approx(0.1));
    SUBCASE("identity limit as delta -> 0") {
        auto f = ssm::discretize_zoh(cplx(-3.0, 2.0), 1e-12);
        CHECK(std::abs(f.a_bar - cplx(1.0, 0.0)) < 1e-10);
        CHECK(f.b_scale == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("stability") {
        CHECK(std::abs(ssm::discretize_zoh(cplx(-2.0, 0.0), 0.5).a_bar) == doctest::Approx(std::exp(-1.0)));
        CHECK(std::abs(ssm::discretize_zoh(cplx(-2.0, 0.0), 0.5).a_bar) < 1.0);
    }
    CHECK_THROWS_AS(ssm::discretize_zoh(cplx(-1.0, 0.0), 0.0), ValidationError);
}

TEST_CASE("selective_params") {
    ssm::DiagonalizedSystem sys = standalone_system(4, 6, 7);
    SUBCASE("zero input with zero weights gives the clamped softplus bias") {
        sys.w_delta.fill(0.0);
        sys.bias_delta.fill(0.5);
        Tensor x({3, 6});
        ssm::SelectiveParams sp = ssm::selective_params(x, sys);
        double expect = std::min(sys.delta_max, std::max(sys.delta_min, std::log1p(std::exp(0.5))));
        for (double v : sp.delta.data) CHECK(v == doctest::Approx(expect));
    }
    SUBCASE("delta always within the clamp range") {
        Tensor x = randn({32, 6}, 8, 3.0);
        ssm::SelectiveParams sp = ssm::selective_params(x, sys);
        for (double v : sp.delta.data) {
            CHECK(v >= sys.delta_min);
            CHECK(v <= sys.delta_max);
        }
    }
    SUBCASE("projection rows are linear in the weights") {
        Tensor x = randn({5, 6}, 9);
        ssm::SelectiveParams sp1 = ssm::selective_params(x, sys);
        for (int d = 0; d < 6; ++d) sys.w_b.at(d, 2) *= 2.0;
        ssm::SelectiveParams sp2 = ssm::selective_params(x, sys);
        for (int l = 0; l < 5; ++l) {
            CHECK(sp2.b.at(l, 2) == doctest::Approx(2.0 * sp1.b.at(l, 2)));
            CHECK(sp2.b.at(l, 1) == doctest::Approx(sp1.b.at(l, 1)));
        }
    }
    SUBCASE("non-finite input is a numeric error naming the position") {
        Tensor x({2, 6});
        x.at(1, 3) = std::numeric_limits<double>::quiet_NaN();
        try {
            ssm::selective_params(x, sys);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("position 1") != std::string::npos);
        }
    }
}

TEST_CASE("scan") {
    SUBCASE("zero input with zero skip gives zero output") {
        ssm::DiagonalizedSystem sys = standalone_system(4, 3, 11);
        sys.d_skip.fill(0.0);
        Tensor x({7, 3});
        Tensor y = ssm::scan(x, sys, ssm::ScanMode::Recurrent);
        CHECK(y.abs_max() == 0.0);
    }
    SUBCASE("single step closed form") {
        ssm::DiagonalizedSystem sys = standalone_system(4, 3, 12);
        Tensor x = randn({1, 3}, 13);
        ssm::SelectiveParams sp = ssm::selective_params(x, sys);
        Tensor y = ssm::scan(x, sys, ssm::ScanMode::Recurrent);
        for (int d = 0; d < 3; ++d) {
            double expect = sys.d_skip.at(d) * x.at(0, d);
            for (int n = 0; n < 4; ++n) {
                // h_1 = delta*b*x (a_bar multiplies the zero initial state)
                expect += sp.c.at(0, n) * sp.delta.at(0, d) * sp.b.at(0, n) * x.at(0, d);
            }
            CHECK(y.at(0, d) == doctest::Approx(expect).epsilon(1e-10));
        }
    }
    SUBCASE("recurrent and parallel modes agree") {
        ssm::DiagonalizedSystem sys = standalone_system(16, 8, 14);
        Tensor x = randn({64, 8}, 15);
        Tensor yr = ssm::scan(x, sys, ssm::ScanMode::Recurrent);
        Tensor yp = ssm::scan(x, sys, ssm::ScanMode::Parallel);
        double max_y = yr.abs_max();
        for (int64_t i = 0; i < yr.numel(); ++i)
            CHECK(std::abs(yr.data[static_cast<size_t>(i)] - yp.data[static_cast<size_t>(i)]) <=
                  1e-5 * (1.0 + max_y));
    }
    SUBCASE("property: scan-mode equivalence over random systems") {
        RandomStream rng(16);
        for (int trial = 0; trial < 10; ++trial) {
            int n = 2 + rng.uniform_int(15);
            int d = 1 + rng.uniform_int(8);
            int l = 1 + rng.uniform_int(96);
            ssm::DiagonalizedSystem sys = standalone_system(n, d, 1000 + static_cast<uint64_t>(trial));
            Tensor x = randn({l, d}, 2000 + static_cast<uint64_t>(trial));
            Tensor yr = ssm::scan(x, sys, ssm::ScanMode::Recurrent);
            Tensor yp = ssm::scan(x, sys, ssm::ScanMode::Parallel);
            double max_y = yr.abs_max();
            double max_diff = 0.0;
            for (int64_t i = 0; i < yr.numel(); ++i)
                max_diff = std::max(max_diff, std::abs(yr.data[static_cast<size_t>(i)] -
                                                       yp.data[static_cast<size_t>(i)]));
            CHECK(max_diff <= 1e-5 * (1.0 + max_y));
        }
    }
    SUBCASE("discrete stability across the delta clamp range") {
        ssm::DiagonalizedSystem sys = standalone_system(16, 4, 17);
        for (int g = 0; g <= 20; ++g) {
            double delta = 1e-3 + (1e-1 - 1e-3) * g / 20.0;
            for (auto lam : sys.eigenvalues) CHECK(std::abs(ssm::discretize_zoh(lam, delta).a_bar) < 1.0);
        }
    }
}

TEST_CASE("hippo spectrum system is the exact diagonal form") {
    ssm::DiagonalizedSystem sys = ssm::hippo_spectrum_system(8);
    for (int i = 0; i < 8; ++i) {
        CHECK(sys.eigenvalues[static_cast<size_t>(i)].real() == -static_cast<double>(i + 1));
        CHECK(sys.eigenvalues[static_cast<size_t>(i)].imag() == 0.0);
    }
    CHECK(sys.recon_error == 0.0);
}

TEST_CASE("perturbation magnitude is the Frobenius norm") {
    ssm::PerturbationMatrix e;
    e.entries = Tensor({2, 2});
    CHECK(ssm::perturbation_magnitude(e) == 0.0);
    e.entries.at(1, 0) = 3.0;
    CHECK(ssm::perturbation_magnitude(e) == doctest::Approx(3.0));
}

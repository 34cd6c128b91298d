#include <doctest.h>

#include <cmath>
#include <functional>

#include "evflow/autodiff.hpp"
#include "evflow/ssm.hpp"

using namespace evflow;
using ad::Tape;
using ad::Var;

namespace {

// Finite-difference oracle: max relative error of d(scalar)/d(inputs) over
// every entry of every input tensor.
double fd_check(std::vector<Tensor> inputs,
                const std::function<Var(Tape&, std::vector<Var>&)>& build, double eps = 1e-6) {
    auto eval = [&](const std::vector<Tensor>& vals) {
        Tape t;
        std::vector<Var> vars;
        for (const Tensor& v : vals) vars.push_back(t.leaf(v, nullptr));
        return build(t, vars).val().data[0];
    };
    Tape t;
    std::vector<Var> vars;
    for (const Tensor& v : inputs) vars.push_back(t.leaf(v, nullptr));
    Var loss = build(t, vars);
    t.backward(loss);
    std::vector<Tensor> analytic;
    for (const Var& v : vars) analytic.push_back(t.grad(v));

    double max_rel = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (int64_t j = 0; j < inputs[i].numel(); ++j) {
            double orig = inputs[i].data[static_cast<size_t>(j)];
            inputs[i].data[static_cast<size_t>(j)] = orig + eps;
            double fp = eval(inputs);
            inputs[i].data[static_cast<size_t>(j)] = orig - eps;
            double fm = eval(inputs);
            inputs[i].data[static_cast<size_t>(j)] = orig;
            double fd = (fp - fm) / (2.0 * eps);
            double an = analytic[i].data[static_cast<size_t>(j)];
            double rel = std::abs(an - fd) / (std::abs(an) + std::abs(fd) + 1e-8);
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

Tensor randn(std::vector<int> shape, uint64_t seed, double sd = 1.0) {
    Tensor t(std::move(shape));
    RandomStream rng(seed);
    rng.fill_normal(t, sd);
    return t;
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    auto sq = [](Tape&, std::vector<Var>& v) { return ad::sum_sq_half(v[0]); };
    CHECK(fd_check({randn({3, 4}, 1)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::add(v[0], v[1]));
          }) < 1e-7);
    CHECK(fd_check({randn({3, 4}, 2), randn({3, 4}, 3)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::mul(v[0], v[1]));
          }) < 1e-7);
    CHECK(fd_check({randn({3, 4}, 4), randn({3, 4}, 5)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::sub(v[0], v[1]));
          }) < 1e-7);
    CHECK(fd_check({randn({5}, 6)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::affine(v[0], 2.5, -0.5));
          }) < 1e-7);
    CHECK(fd_check({randn({2, 3, 4}, 7), randn({4}, 8)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::add_bias(v[0], v[1]));
          }) < 1e-7);
    (void)sq;
}

TEST_CASE("activations match finite differences") {
    for (auto fn : {+[](Var x) { return ad::sigmoid(x); }, +[](Var x) { return ad::tanh_op(x); },
                    +[](Var x) { return ad::softplus(x); }, +[](Var x) { return ad::silu(x); }}) {
        CHECK(fd_check({randn({4, 5}, 11)}, [fn](Tape&, std::vector<Var>& v) {
                  return ad::sum_sq_half(fn(v[0]));
              }) < 1e-6);
    }
    // keep relu/clamp inputs away from their kinks
    Tensor x = randn({4, 4}, 12);
    for (double& v : x.data) v = v > 0 ? v + 0.5 : v - 0.5;
    CHECK(fd_check({x}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::relu(v[0]));
          }) < 1e-7);
    CHECK(fd_check({x}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::clamp(v[0], -0.25, 0.25));
          }) < 1e-7);
}

TEST_CASE("matmul matches finite differences") {
    CHECK(fd_check({randn({3, 5}, 21), randn({5, 2}, 22)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::matmul(v[0], v[1]));
          }) < 1e-7);
}

TEST_CASE("convolutions match finite differences") {
    CHECK(fd_check({randn({6, 5, 3}, 31), randn({3, 3, 3, 4}, 32), randn({4}, 33)},
                   [](Tape&, std::vector<Var>& v) {
                       return ad::sum_sq_half(ad::conv2d(v[0], v[1], v[2], 1, 1));
                   }) < 1e-6);
    CHECK(fd_check({randn({8, 6, 2}, 34), randn({3, 3, 2, 3}, 35), randn({3}, 36)},
                   [](Tape&, std::vector<Var>& v) {
                       return ad::sum_sq_half(ad::conv2d(v[0], v[1], v[2], 2, 1));
                   }) < 1e-6);
    CHECK(fd_check({randn({6, 6, 3}, 37), randn({7, 7, 3}, 38), randn({3}, 39)},
                   [](Tape&, std::vector<Var>& v) {
                       return ad::sum_sq_half(ad::depthwise_conv2d(v[0], v[1], v[2], 3));
                   }) < 1e-6);
}

TEST_CASE("layer_norm matches finite differences") {
    CHECK(fd_check({randn({3, 2, 6}, 41), randn({6}, 42, 0.3), randn({6}, 43)},
                   [](Tape&, std::vector<Var>& v) {
                       return ad::sum_sq_half(ad::layer_norm(v[0], v[1], v[2]));
                   }) < 1e-6);
}

TEST_CASE("shape ops match finite differences") {
    CHECK(fd_check({randn({4, 6}, 51)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::reshape(v[0], {2, 12}));
          }) < 1e-7);
    CHECK(fd_check({randn({2, 3, 2}, 52), randn({2, 3, 3}, 53)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::concat_last({v[0], v[1]}));
          }) < 1e-7);
    CHECK(fd_check({randn({2, 3, 5}, 54)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::slice_last(v[0], 1, 4));
          }) < 1e-7);
    std::vector<int> idx = {3, 0, 2, 1};
    CHECK(fd_check({randn({4, 3}, 55)}, [idx](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::permute_rows(v[0], idx));
          }) < 1e-7);
    CHECK(fd_check({randn({5, 4, 2}, 56)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::crop_topleft(v[0], 3, 2));
          }) < 1e-7);
}

TEST_CASE("sampling ops match finite differences") {
    // flows chosen non-integer so bilinear interpolation is locally smooth
    Tensor flow = randn({5, 5, 2}, 61, 0.7);
    for (double& v : flow.data) v += 0.3;
    CHECK(fd_check({randn({5, 5, 3}, 62), flow}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::bilinear_warp(v[0], v[1]));
          }) < 1e-6);
    CHECK(fd_check({randn({4, 5, 3}, 63)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::resize_bilinear(v[0], 7, 3));
          }) < 1e-6);
    CHECK(fd_check({randn({3, 4, 2}, 64)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::upsample_flow8(v[0]));
          }) < 1e-6);
    CHECK(fd_check({randn({6, 5, 5}, 65)}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::avg_pool_targets(v[0]));
          }) < 1e-7);
    Tensor f2 = randn({3, 2, 2}, 66, 0.6);
    for (double& v : f2.data) v += 0.25;
    CHECK(fd_check({randn({6, 3, 2}, 67), f2}, [](Tape&, std::vector<Var>& v) {
              return ad::sum_sq_half(ad::corr_lookup(v[0], v[1], 0.5, 1));
          }) < 1e-6);
}

TEST_CASE("masked l1 matches finite differences away from zero residuals") {
    Tensor gt = randn({4, 4, 2}, 71);
    Tensor pred = gt;
    for (double& v : pred.data) v += 0.4;  // keep |pred-gt| away from the kink
    Tensor mask = Tensor::full({4, 4}, 1.0);
    mask.at(0, 0) = 0.0;
    CHECK(fd_check({pred}, [&](Tape&, std::vector<Var>& v) {
              return ad::masked_l1_mean(v[0], gt, mask);
          }) < 1e-7);
}

TEST_CASE("masked l1 rejects an empty mask") {
    Tape t;
    Tensor pred = randn({2, 2, 2}, 72);
    Tensor mask({2, 2});
    CHECK_THROWS_AS(ad::masked_l1_mean(t.leaf(pred, nullptr), pred, mask), ValidationError);
}

TEST_CASE("selective scan op matches finite differences") {
    int L = 6, D = 3, N = 4;
    Tensor x = randn({L, D}, 81);
    Tensor delta = Tensor::full({L, D}, 0.05);
    for (int64_t i = 0; i < delta.numel(); ++i) delta.data[static_cast<size_t>(i)] += 0.02 * std::sin(static_cast<double>(i));
    Tensor b = randn({L, N}, 82, 0.5);
    Tensor c = randn({L, N}, 83, 0.5);
    Tensor dsk = randn({D}, 84, 0.5);
    Tensor lr = randn({N}, 85, 0.5);
    for (double& v : lr.data) v = -std::abs(v) - 0.2;
    Tensor li = randn({N}, 86, 0.8);
    double err = fd_check({x, delta, b, c, dsk, lr, li}, [](Tape&, std::vector<Var>& v) {
        return ad::sum_sq_half(
            ssm::scan_op(v[0], v[1], v[2], v[3], v[4], v[5], v[6], ssm::ScanMode::Recurrent));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("tape basics") {
    Tape t;
    Var c = t.constant(Tensor::scalar(2.0));
    Var x = t.leaf(Tensor::scalar(3.0), nullptr);
    Var y = ad::mul(c, x);
    t.backward(y);
    CHECK(t.grad(x).data[0] == doctest::Approx(2.0));
    CHECK_FALSE(t.needs_grad(c));

    Tape t2;
    Var v = t2.leaf(Tensor({2, 2}), nullptr);
    CHECK_THROWS_AS(t2.backward(v), ValidationError);
}

TEST_CASE("parameter store binds leaves with grad sinks") {
    ad::ParamStore ps;
    ad::Param& p = ps.create("w", {2, 2});
    p.value.fill(1.5);
    Tape t;
    Var w = ps.use(t, "w");
    t.backward(ad::sum_sq_half(w));
    for (double g : p.grad.data) CHECK(g == doctest::Approx(1.5));
    ps.zero_grads();
    for (double g : p.grad.data) CHECK(g == 0.0);
}

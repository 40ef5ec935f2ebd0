#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "medconv/optimizers.hpp"
#include "medconv/rng.hpp"

using namespace medconv;

namespace {

// Scalar quadratic 0.5*a*(w-c)^2 as a LossFn over a single parameter.
template <typename T>
LossFn<T> quadratic(const TensorPtr<T>& w, T a, T c) {
    return [=]() -> T {
        w->ensure_grad();
        w->zero_grad();
        const T d = w->data[0] - c;
        w->grad[0] = a * d;
        return T(0.5) * a * d * d;
    };
}

}  // namespace

TEST_CASE("sgd_momentum_step: closed-form first and second steps") {
    auto w = make_tensor<double>(Shape{1});
    w->data[0] = 1.0;
    w->ensure_grad();
    w->grad[0] = 1.0;
    std::vector<TensorPtr<double>> params{w};
    SgdState<double> state;

    sgd_momentum_step(params, state, 0.1, 0.9);
    CHECK(w->data[0] == 0.9);  // v=1, w=1-0.1

    w->grad[0] = 1.0;
    sgd_momentum_step(params, state, 0.1, 0.9);
    CHECK(state.velocity[0][0] == doctest::Approx(1.9).epsilon(1e-15));
    CHECK(w->data[0] == doctest::Approx(0.71).epsilon(1e-15));

    // zero gradient with zero velocity leaves parameters untouched
    auto w2 = make_tensor<double>(Shape{2});
    w2->data = {3.0, -4.0};
    w2->ensure_grad();
    std::vector<TensorPtr<double>> params2{w2};
    SgdState<double> state2;
    sgd_momentum_step(params2, state2, 0.5, 0.9);
    CHECK(w2->data == std::vector<double>{3.0, -4.0});
}

TEST_CASE("sgd_momentum_step: missing gradient and mismatched state are errors") {
    auto w = make_tensor<double>(Shape{2});
    std::vector<TensorPtr<double>> params{w};
    SgdState<double> state;
    CHECK_THROWS_AS(sgd_momentum_step(params, state, 0.1, 0.9), Error);

    w->ensure_grad();
    SgdState<double> bad;
    bad.velocity.push_back(std::vector<double>(5, 0.0));
    CHECK_THROWS_AS(sgd_momentum_step(params, bad, 0.1, 0.9), Error);
}

TEST_CASE("sam_step: quadratic closed form gives exactly 0.89") {
    auto w = make_tensor<double>(Shape{1});
    w->data[0] = 1.0;
    std::vector<TensorPtr<double>> params{w};
    SgdState<double> state;
    // f(w)=0.5w^2: g=1, ||g||=1, w+eps=1.1, g_sam=1.1, w -> 1 - 0.1*1.1
    sam_step(params, quadratic<double>(w, 1.0, 0.0), state, 0.1, 0.0, 0.1);
    CHECK(w->data[0] == 0.89);
}

TEST_CASE("sam_step: rho=0 is trajectory-identical to sgd_momentum_step") {
    Rng rng(61);
    auto make_params = [&](std::uint64_t seed) {
        Rng r(seed);
        auto a = make_tensor<double>(Shape{3});
        auto b = make_tensor<double>(Shape{2});
        for (auto& v : a->data) v = r.uniform(-1.0, 1.0);
        for (auto& v : b->data) v = r.uniform(-1.0, 1.0);
        return std::vector<TensorPtr<double>>{a, b};
    };
    auto params_sgd = make_params(5);
    auto params_sam = make_params(5);

    // shared synthetic gradient schedule
    auto loss_with_grads = [&](std::vector<TensorPtr<double>>& params, int step) -> double {
        double loss = 0.0;
        for (auto& p : params) {
            p->ensure_grad();
            p->zero_grad();
            for (std::size_t i = 0; i < p->data.size(); ++i) {
                p->grad[i] = std::sin(static_cast<double>(step + 1) * p->data[i]);
                loss += p->data[i] * p->data[i];
            }
        }
        return loss;
    };

    SgdState<double> state_sgd, state_sam;
    for (int step = 0; step < 25; ++step) {
        loss_with_grads(params_sgd, step);
        sgd_momentum_step(params_sgd, state_sgd, 0.05, 0.9);
        sam_step(params_sam, LossFn<double>([&]() { return loss_with_grads(params_sam, step); }), state_sam,
                 0.05, 0.9, 0.0);
    }
    for (std::size_t i = 0; i < params_sgd.size(); ++i) {
        CHECK(params_sgd[i]->data == params_sam[i]->data);  // bitwise
    }
}

TEST_CASE("sam_step: zero gradient falls through without division by zero") {
    auto w = make_tensor<double>(Shape{1});
    w->data[0] = 2.0;
    std::vector<TensorPtr<double>> params{w};
    SgdState<double> state;
    auto flat = [&]() -> double {
        w->ensure_grad();
        w->zero_grad();
        return 1.0;
    };
    sam_step(params, LossFn<double>(flat), state, 0.1, 0.9, 0.05);
    CHECK(w->data[0] == 2.0);

    auto bad = [&]() -> double {
        w->ensure_grad();
        w->zero_grad();
        return std::numeric_limits<double>::quiet_NaN();
    };
    CHECK_THROWS_AS(sam_step(params, LossFn<double>(bad), state, 0.1, 0.9, 0.05), NumericError);
}

TEST_CASE("schedulefree_step: first step collapses to a plain gradient step") {
    auto w = make_tensor<double>(Shape{1});
    w->data[0] = 10.0;
    std::vector<TensorPtr<double>> params{w};
    ScheduleFreeState<double> state;
    // f(w)=0.5(w-3)^2 at y0=z0=x0=10 -> g=7; z1 = 10 - 0.1*7 = 9.3; c=1 -> x1=z1
    schedulefree_step(params, quadratic<double>(w, 1.0, 3.0), state, 0.1, 0.9);
    CHECK(state.z[0][0] == doctest::Approx(9.3).epsilon(1e-15));
    CHECK(state.x[0][0] == doctest::Approx(9.3).epsilon(1e-15));
    CHECK(state.t == 1);

    // gamma = 0: neither sequence moves
    ScheduleFreeState<double> frozen;
    auto w2 = make_tensor<double>(Shape{1});
    w2->data[0] = 4.0;
    std::vector<TensorPtr<double>> params2{w2};
    for (int i = 0; i < 5; ++i) schedulefree_step(params2, quadratic<double>(w2, 1.0, 3.0), frozen, 0.0, 0.9);
    CHECK(frozen.z[0][0] == 4.0);
    CHECK(frozen.x[0][0] == 4.0);
}

TEST_CASE("schedulefree_step: converges on the shifted quadratic within 10k steps") {
    auto w = make_tensor<double>(Shape{1});
    w->data[0] = 0.0;
    std::vector<TensorPtr<double>> params{w};
    ScheduleFreeState<double> state;
    bool reached = false;
    for (int step = 0; step < 10000 && !reached; ++step) {
        schedulefree_step(params, quadratic<double>(w, 1.0, 3.0), state, 0.1, 0.9);
        reached = std::abs(state.x[0][0] - 3.0) < 1e-3;
    }
    CHECK(reached);
    schedulefree_apply_average(params, state);
    CHECK(std::abs(w->data[0] - 3.0) < 1e-3);
}

TEST_CASE("schedulefree_step: x equals the running average of z when beta=0") {
    Rng rng(71);
    auto w = make_tensor<double>(Shape{1});
    w->data[0] = 5.0;
    std::vector<TensorPtr<double>> params{w};
    ScheduleFreeState<double> state;
    std::vector<double> zs;
    for (int step = 0; step < 100; ++step) {
        const double slope = rng.uniform(0.1, 2.0);
        schedulefree_step(params, quadratic<double>(w, slope, 1.0), state, 0.05, 0.0);
        zs.push_back(state.z[0][0]);
        double mean_z = 0.0;
        for (double z : zs) mean_z += z;
        mean_z /= static_cast<double>(zs.size());
        CHECK(std::abs(state.x[0][0] - mean_z) <= 1e-10);
    }
}

TEST_CASE("schedulefree_step: parameter validation") {
    auto w = make_tensor<double>(Shape{1});
    std::vector<TensorPtr<double>> params{w};
    ScheduleFreeState<double> state;
    CHECK_THROWS_AS(schedulefree_step(params, quadratic<double>(w, 1.0, 0.0), state, -0.1, 0.9), Error);
    CHECK_THROWS_AS(schedulefree_step(params, quadratic<double>(w, 1.0, 0.0), state, 0.1, 1.0), Error);

    auto nan_grad = [&]() -> double {
        w->ensure_grad();
        w->grad[0] = std::numeric_limits<double>::quiet_NaN();
        return 1.0;
    };
    CHECK_THROWS_AS(schedulefree_step(params, LossFn<double>(nan_grad), state, 0.1, 0.9), NumericError);
}

TEST_CASE("sgd contracts |w| monotonically on the quadratic when eta < 2/lambda") {
    const double lambda = 4.0, eta = 0.4;  // eta < 2/lambda = 0.5
    auto w = make_tensor<double>(Shape{1});
    w->data[0] = 2.0;
    std::vector<TensorPtr<double>> params{w};
    SgdState<double> state;
    double prev = std::abs(w->data[0]);
    for (int step = 0; step < 50; ++step) {
        quadratic<double>(w, lambda, 0.0)();
        sgd_momentum_step(params, state, eta, 0.0);
        const double cur = std::abs(w->data[0]);
        CHECK(cur <= prev);
        prev = cur;
    }
    CHECK(prev < 1e-6);
}

TEST_CASE("optimizer steps preserve shapes and finiteness") {
    Rng rng(81);
    auto a = make_tensor<double>(Shape{3, 2});
    auto b = make_tensor<double>(Shape{4});
    for (auto& v : a->data) v = rng.uniform(-1.0, 1.0);
    for (auto& v : b->data) v = rng.uniform(-1.0, 1.0);
    std::vector<TensorPtr<double>> params{a, b};
    SgdState<double> state;
    for (int step = 0; step < 10; ++step) {
        for (auto& p : params) {
            p->ensure_grad();
            for (std::size_t i = 0; i < p->data.size(); ++i) p->grad[i] = rng.uniform(-1.0, 1.0);
        }
        sgd_momentum_step(params, state, 0.05, 0.9, 0.01);
    }
    CHECK(a->shape == Shape{3, 2});
    CHECK(b->shape == Shape{4});
    CHECK(a->all_finite());
    CHECK(b->all_finite());
}

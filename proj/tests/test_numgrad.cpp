#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "hat/adam.hpp"
#include "hat/gradcheck.hpp"
#include "hat/tape.hpp"

using namespace hat;

TEST_CASE("matmul identity and hand arithmetic") {
    TapeF t;
    int a = t.leaf(Tensor::from(2, 2, {1, 0, 0, 1}));
    int b = t.leaf(Tensor::from(2, 2, {3, 4, 5, 6}));
    int c = t.matmul(a, b);
    CHECK(t.val(c) == std::vector<float>{3, 4, 5, 6});

    int x = t.leaf(Tensor::from(1, 2, {1, 2}));
    int y = t.leaf(Tensor::from(2, 1, {3, 4}));
    CHECK(t.scalar(t.matmul(x, y)) == doctest::Approx(11));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    TapeF t;
    int a = t.leaf(Tensor::from(1, 2, {1, 2}));
    int b = t.leaf(Tensor::from(3, 1, {1, 2, 3}));
    CHECK_THROWS_WITH_AS(t.matmul(a, b), doctest::Contains("[1x2]"), ShapeError);
    try {
        t.matmul(a, b);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[3x1]") != std::string::npos);
    }
}

TEST_CASE("gradient of sum(A*B) wrt A matches finite differences") {
    // independent central-difference oracle, h = 1e-3
    const std::vector<double> a0 = {1, 2};
    const std::vector<double> b0 = {3, 4};
    auto f = [&](const std::vector<double>& a) {
        return a[0] * b0[0] + a[1] * b0[1];
    };
    const double h = 1e-3;
    std::vector<double> fd(2);
    for (int i = 0; i < 2; ++i) {
        auto ap = a0, am = a0;
        ap[i] += h;
        am[i] -= h;
        fd[i] = (f(ap) - f(am)) / (2 * h);
    }
    CHECK(fd[0] == doctest::Approx(3).epsilon(1e-9));
    CHECK(fd[1] == doctest::Approx(4).epsilon(1e-9));

    TapeF t;
    int a = t.leaf(Tensor::from(1, 2, {1, 2}));
    int b = t.leaf(Tensor::from(2, 1, {3, 4}));
    int loss = t.sum(t.matmul(a, b));
    t.backward(loss);
    CHECK(t.grad(a)[0] == doctest::Approx(fd[0]).epsilon(1e-6));
    CHECK(t.grad(a)[1] == doctest::Approx(fd[1]).epsilon(1e-6));
}

TEST_CASE("relu forward and backward") {
    TapeF t;
    int x = t.leaf(Tensor::from(1, 3, {-1, 0, 2}));
    int y = t.relu(x);
    CHECK(t.val(y) == std::vector<float>{0, 0, 2});

    // all-negative input: zero output, zero gradient
    TapeF t2;
    int xn = t2.leaf(Tensor::from(1, 3, {-1, -2, -3}));
    int loss = t2.sum(t2.relu(xn));
    CHECK(t2.scalar(loss) == 0);
    t2.backward(loss);
    CHECK(t2.grad(xn) == std::vector<double>{0, 0, 0});

    TapeF t3;
    int x3 = t3.leaf(Tensor::from(1, 2, {3, -3}));
    int l3 = t3.sum(t3.relu(x3));
    t3.backward(l3);
    CHECK(t3.grad(x3) == std::vector<double>{1, 0});
}

TEST_CASE("concat including empty-left edge and gradient split") {
    TapeF t;
    int a = t.leaf(Tensor::from(1, 2, {1, 2}));
    int b = t.leaf(Tensor::from(1, 1, {3}));
    int c = t.concat_cols(a, b);
    CHECK(t.val(c) == std::vector<float>{1, 2, 3});

    int e = t.leaf(Tensor::from(1, 0, {}));
    int f = t.leaf(Tensor::from(1, 1, {5}));
    CHECK(t.val(t.concat_cols(e, f)) == std::vector<float>{5});

    // gradient split of [g1,g2,g3] at p=2
    TapeF t2;
    int a2 = t2.leaf(Tensor::from(1, 2, {1, 2}));
    int b2 = t2.leaf(Tensor::from(1, 1, {3}));
    int w = t2.leaf(Tensor::from(3, 1, {7, 11, 13}));
    int loss = t2.sum(t2.matmul(t2.concat_cols(a2, b2), w));
    t2.backward(loss);
    CHECK(t2.grad(a2) == std::vector<double>{7, 11});
    CHECK(t2.grad(b2) == std::vector<double>{13});

    // non-matching rows
    TapeF t3;
    int r1 = t3.leaf(Tensor::from(1, 2, {1, 2}));
    int r2 = t3.leaf(Tensor::from(2, 1, {1, 2}));
    CHECK_THROWS_AS(t3.concat_cols(r1, r2), ShapeError);
}

TEST_CASE("sigmoid, l2norm, mean") {
    TapeF t;
    CHECK(t.val(t.sigmoid(t.leaf(Tensor::from(1, 1, {0}))))[0] == doctest::Approx(0.5));
    CHECK(t.scalar(t.l2norm(t.leaf(Tensor::from(1, 2, {3, 4})))) == doctest::Approx(5));

    int x = t.leaf(Tensor::from(1, 4, {1, 2, 3, 4}));
    int m = t.mean(x);
    t.backward(m);
    for (double g : t.grad(x)) CHECK(g == doctest::Approx(0.25));
}

TEST_CASE("backward basics") {
    TapeF t;
    int p = t.leaf(Tensor::from(2, 2, {1, 2, 3, 4}));
    int loss = t.sum(p);
    t.backward(loss);
    CHECK(t.grad(p) == std::vector<double>{1, 1, 1, 1});

    // loss constant wrt p -> exactly zero gradient
    TapeF t2;
    int p2 = t2.leaf(Tensor::from(1, 2, {1, 2}));
    int q = t2.leaf(Tensor::from(1, 2, {5, 6}));
    int l2 = t2.sum(q);
    t2.backward(l2);
    CHECK(t2.grad(p2) == std::vector<double>{0, 0});

    // non-scalar loss rejected
    TapeF t3;
    int p3 = t3.leaf(Tensor::from(1, 2, {1, 2}));
    CHECK_THROWS_AS(t3.backward(p3), ContractError);
}

TEST_CASE("random 3-layer composition matches central finite differences") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-1, 1);
    auto rnd = [&](int r, int c) {
        std::vector<float> v(static_cast<size_t>(r) * c);
        for (auto& x : v) x = static_cast<float>(dist(rng));
        return Tensor::from(r, c, std::move(v));
    };

    GradCheckProblem prob;
    prob.add_param(rnd(3, 5));
    prob.add_param(rnd(1, 5));
    prob.add_param(rnd(5, 4));
    prob.add_param(rnd(1, 4));
    prob.add_param(rnd(4, 1));
    const Tensor input = rnd(2, 3);
    prob.build = [&](Tape<double>& tp, const std::vector<int>& ids) {
        int h = tp.sigmoid(tp.add_bias(tp.matmul(tp.leaf(input), ids[0]), ids[1]));
        int h2 = tp.relu(tp.add_bias(tp.matmul(h, ids[2]), ids[3]));
        int out = tp.matmul(h2, ids[4]);
        return tp.mean(tp.l2norm_rows(out));
    };
    auto report = grad_check(prob, 1e-3);
    CHECK(report.checked > 0);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("adam first step, zero gradient, two-step hand sequence") {
    Tensor theta = Tensor::from(1, 2, {0.5f, -0.25f});
    std::vector<double> g = {1, 1};
    AdamConfig cfg;
    cfg.lr = 0.1;
    AdamState st({&theta}, cfg);
    Tensor* params[] = {&theta};
    const std::vector<double>* grads[] = {&g};
    st.step(params, grads);
    // bias-corrected first step is -lr * g / (|g| + eps)
    CHECK(theta.data[0] == doctest::Approx(0.5 - 0.1 / (1 + 1e-8)).epsilon(1e-6));
    CHECK(theta.data[1] == doctest::Approx(-0.25 - 0.1 / (1 + 1e-8)).epsilon(1e-6));

    // hand-computed second step with constant g=1:
    // m2 = 0.9*0.1 + 0.1 = 0.19, v2 = 0.999*0.001 + 0.001 = 0.001999
    // mhat = 0.19/(1-0.81) = 1, vhat = 0.001999/(1-0.998001) = 1 -> another -0.1 step
    const float after1 = theta.data[0];
    st.step(params, grads);
    CHECK(theta.data[0] == doctest::Approx(after1 - 0.1).epsilon(1e-5));

    // zero gradients at t>0 change nothing
    std::vector<double> z = {0, 0};
    const std::vector<double>* zg[] = {&z};
    Tensor before = theta;
    // m decays but update is m/(sqrt(v)+eps) — not exactly zero for plain Adam
    // unless m is already zero, so check the dedicated contract: fresh state.
    AdamState st0({&theta}, cfg);
    st0.step(params, zg);
    CHECK(theta.data == before.data);
}

TEST_CASE("adam shape mismatch") {
    Tensor a = Tensor::from(1, 2, {1, 2});
    Tensor b = Tensor::from(1, 3, {1, 2, 3});
    AdamState st({&a});
    std::vector<double> g = {1, 1, 1};
    Tensor* params[] = {&b};
    const std::vector<double>* grads[] = {&g};
    CHECK_THROWS_AS(st.step(params, grads), ShapeError);
}

TEST_CASE("grad_check: linear model exact, kink flagged") {
    // y = w*x, loss = y^2
    GradCheckProblem prob;
    prob.add_param(Tensor::from(1, 1, {0.7f}));
    prob.build = [](Tape<double>& tp, const std::vector<int>& ids) {
        int x = tp.leaf_values(1, 1, {2.0});
        int y = tp.matmul(ids[0], x);
        return tp.sum(tp.matmul(y, y));  // scalar y*y
    };
    auto rep = grad_check(prob, 1e-3);
    CHECK(rep.max_rel_err < 1e-6);
    CHECK(rep.skipped_kinks == 0);

    // a parameter sitting exactly on a ReLU kink is skipped, not reported
    GradCheckProblem kink;
    kink.add_param(Tensor::from(1, 1, {0.0f}));
    kink.build = [](Tape<double>& tp, const std::vector<int>& ids) {
        return tp.sum(tp.relu(ids[0]));
    };
    auto krep = grad_check(kink, 1e-3);
    CHECK(krep.skipped_kinks == 1);
    CHECK(krep.checked == 0);
}

TEST_CASE("determinism: identical graphs produce bit-identical values and grads") {
    auto run = [] {
        TapeF t;
        int a = t.leaf(Tensor::from(2, 3, {0.1f, -0.2f, 0.3f, 1.5f, -2.5f, 0.7f}));
        int w = t.leaf(Tensor::from(3, 2, {0.5f, -0.5f, 0.25f, 1.0f, -1.0f, 2.0f}));
        int loss = t.mean(t.sigmoid(t.matmul(a, w)));
        t.backward(loss);
        return std::make_pair(t.scalar(loss), t.grad(w));
    };
    auto r1 = run();
    auto r2 = run();
    CHECK(r1.first == r2.first);
    CHECK(r1.second == r2.second);
}

TEST_CASE("log clamp keeps gradient finite at zero") {
    TapeF t;
    int x = t.leaf(Tensor::from(1, 1, {0.0f}));
    int loss = t.sum(t.log_clamped(x));
    CHECK(t.scalar(loss) == doctest::Approx(std::log(1e-12f)));
    t.backward(loss);
    CHECK(t.grad(x)[0] == 0.0);  // clamped region
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hat/gradcheck.hpp"
#include "hat/hallucinator.hpp"

using namespace hat;

namespace {

std::vector<float> randvec(int n, std::mt19937_64& rng, float lo = 0.0f, float hi = 2.0f) {
    std::uniform_real_distribution<float> d(lo, hi);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

Quadruplet random_quad(int D, std::mt19937_64& rng) {
    Quadruplet q;
    q.xa1 = randvec(D, rng);
    q.xa2 = randvec(D, rng);
    q.xb1 = randvec(D, rng);
    q.xb2 = randvec(D, rng);
    q.identity_a = 0;
    q.identity_b = 1;
    return q;
}

DiscriminatorModel zero_disc(int D, int hidden) {
    DiscriminatorModel d = DiscriminatorModel::create(D, hidden, 1);
    for (Tensor* t : {&d.net.w1, &d.net.b1, &d.net.w2, &d.net.b2})
        std::fill(t->data.begin(), t->data.end(), 0.0f);
    return d;
}

// discriminator whose pre-sigmoid logit is w^T u in a neighborhood of the
// inputs: W1 = I with a large positive bias so the hidden ReLU is affine.
DiscriminatorModel linear_disc(const std::vector<float>& w, float bias_shift = 100.0f) {
    const int W = static_cast<int>(w.size());
    DiscriminatorModel d;
    d.feat_dim = W / 2;
    d.net.out_act = Act::Sigmoid;
    d.net.w1 = Tensor(W, W);
    for (int i = 0; i < W; ++i) d.net.w1.at(i, i) = 1.0f;
    d.net.b1 = Tensor(1, W);
    std::fill(d.net.b1.data.begin(), d.net.b1.data.end(), bias_shift);
    d.net.w2 = Tensor::from(W, 1, w);
    d.net.b2 = Tensor(1, 1);
    return d;
}

}  // namespace

TEST_CASE("adversarial discriminator loss values") {
    std::mt19937_64 rng(1);
    const int D = 8;
    DiscriminatorModel z = zero_disc(D, 16);
    auto x1 = randvec(D, rng), x2 = randvec(D, rng), xh = randvec(D, rng);
    // D = 0.5 on both -> -2 log 0.5
    CHECK(adv_loss_discriminator(z, x1, x2, x1, xh) ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-5));

    // perfect discriminator: push the output bias to saturation
    DiscriminatorModel strong = zero_disc(D, 16);
    strong.net.b2.data[0] = 40.0f;  // D(real) -> 1
    double l_real_perfect = adv_loss_generator(strong, x1, x2);
    CHECK(l_real_perfect == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("adversarial generator loss values and limits") {
    std::mt19937_64 rng(2);
    const int D = 8;
    auto x1 = randvec(D, rng), xh = randvec(D, rng);
    DiscriminatorModel z = zero_disc(D, 16);
    CHECK(adv_loss_generator(z, x1, xh) == doctest::Approx(std::log(2.0)).epsilon(1e-5));
    DiscriminatorModel one = zero_disc(D, 16);
    one.net.b2.data[0] = 40.0f;
    CHECK(adv_loss_generator(one, x1, xh) == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("generator gradient reaches encoder and decoder") {
    std::mt19937_64 rng(3);
    const int D = 8;
    HallucinatorModel g = HallucinatorModel::create(D, 4, 16, 5);
    DiscriminatorModel d = DiscriminatorModel::create(D, 16, 6);
    Quadruplet q = random_quad(D, rng);

    TapeF tp;
    HallucinatorNodes gn = push_hallucinator(tp, g);
    Mlp3Nodes dn = push_mlp(tp, d.net);
    int xa1 = tp.leaf(Tensor::row(q.xa1));
    int xa2 = tp.leaf(Tensor::row(q.xa2));
    int xb1 = tp.leaf(Tensor::row(q.xb1));
    int xhat = fake_sample_node(tp, gn, xa1, xa2, xb1);
    int loss = adv_loss_g_node(tp, dn, tp.concat_cols(xb1, xhat));
    tp.backward(loss);
    auto norm = [&](int id) {
        double acc = 0;
        for (double v : tp.grad(id)) acc += v * v;
        return std::sqrt(acc);
    };
    CHECK(norm(gn.encoder.w1) > 0.0);
    CHECK(norm(gn.decoder.w1) > 0.0);
}

TEST_CASE("losses match finite differences at toy size") {
    std::mt19937_64 rng(4);
    const int D = 8, C = 4, H = 16;
    HallucinatorModel g = HallucinatorModel::create(D, C, H, 7);
    DiscriminatorModel d = DiscriminatorModel::create(D, H, 8);
    Quadruplet q = random_quad(D, rng);
    const Tensor xa1 = Tensor::row(q.xa1), xa2 = Tensor::row(q.xa2),
                 xb1 = Tensor::row(q.xb1), xb2 = Tensor::row(q.xb2);

    auto add_g = [&](GradCheckProblem& p) {
        p.add_param(g.encoder.w1);
        p.add_param(g.encoder.b1);
        p.add_param(g.encoder.w2);
        p.add_param(g.encoder.b2);
        p.add_param(g.decoder.w1);
        p.add_param(g.decoder.b1);
        p.add_param(g.decoder.w2);
        p.add_param(g.decoder.b2);
    };
    auto add_d = [&](GradCheckProblem& p) {
        p.add_param(d.net.w1);
        p.add_param(d.net.b1);
        p.add_param(d.net.w2);
        p.add_param(d.net.b2);
    };
    auto g_nodes = [](const std::vector<int>& ids, int off) {
        return HallucinatorNodes{{ids[off], ids[off + 1], ids[off + 2], ids[off + 3]},
                                 {ids[off + 4], ids[off + 5], ids[off + 6], ids[off + 7]}};
    };

    SUBCASE("dr loss") {
        GradCheckProblem p;
        add_g(p);
        p.build = [&](Tape<double>& tp, const std::vector<int>& ids) {
            HallucinatorNodes gn = g_nodes(ids, 0);
            int a1 = tp.leaf(xa1), a2 = tp.leaf(xa2), b1 = tp.leaf(xb1);
            int xhat = fake_sample_node(tp, gn, a1, a2, b1);
            return dr_loss_node(tp, gn, a1, a2, b1, xhat);
        };
        auto rep = grad_check(p, 1e-3);
        CHECK(rep.max_rel_err < 1e-4);
    }

    SUBCASE("discriminator adversarial loss") {
        GradCheckProblem p;
        add_d(p);
        auto fake = hallucinate(g, q.xa1, q.xa2, q.xb1);
        const Tensor xhat = Tensor::row(fake);
        p.build = [&](Tape<double>& tp, const std::vector<int>& ids) {
            Mlp3Nodes dn{ids[0], ids[1], ids[2], ids[3]};
            int real = tp.concat_cols(tp.leaf(xb1), tp.leaf(xb2));
            int fk = tp.concat_cols(tp.leaf(xb1), tp.leaf(xhat));
            return adv_loss_d_node(tp, dn, real, fk);
        };
        auto rep = grad_check(p, 1e-3);
        CHECK(rep.max_rel_err < 1e-4);
    }

    SUBCASE("overall generator loss through both networks") {
        GradCheckProblem p;
        add_g(p);
        p.build = [&](Tape<double>& tp, const std::vector<int>& ids) {
            HallucinatorNodes gn = g_nodes(ids, 0);
            Mlp3Nodes dn = push_mlp(tp, d.net);
            int a1 = tp.leaf(xa1), a2 = tp.leaf(xa2), b1 = tp.leaf(xb1);
            int xhat = fake_sample_node(tp, gn, a1, a2, b1);
            int adv = adv_loss_g_node(tp, dn, tp.concat_cols(b1, xhat));
            int def = dr_loss_node(tp, gn, a1, a2, b1, xhat);
            return tp.add(adv, tp.scale(def, 0.5));
        };
        auto rep = grad_check(p, 1e-3);
        CHECK(rep.max_rel_err < 1e-4);
    }
}

TEST_CASE("gradient penalty: linear discriminator analytic value") {
    std::mt19937_64 rng(5);
    std::vector<float> w = {0.3f, -0.4f, 0.2f, 0.6f, -0.1f, 0.5f, 0.25f, -0.7f};
    DiscriminatorModel d = linear_disc(w);
    double wnorm = 0;
    for (float v : w) wnorm += static_cast<double>(v) * v;
    wnorm = std::sqrt(wnorm);

    std::vector<std::vector<float>> real = {randvec(8, rng)}, fake = {randvec(8, rng)};
    GpResult r = gradient_penalty(d, real, fake, 10.0, rng, false);
    CHECK(r.value == doctest::Approx(10.0 * (wnorm - 1) * (wnorm - 1)).epsilon(1e-4));

    // unit-norm weight vector -> zero penalty
    for (float& v : w) v = static_cast<float>(v / wnorm);
    DiscriminatorModel du = linear_disc(w);
    GpResult ru = gradient_penalty(du, real, fake, 10.0, rng, false);
    CHECK(ru.value == doctest::Approx(0.0).epsilon(1e-4));
}

TEST_CASE("gradient penalty value matches finite-difference norm estimate") {
    std::mt19937_64 rng(6);
    const int D = 6;
    DiscriminatorModel d = DiscriminatorModel::create(D, 12, 17);
    std::vector<std::vector<float>> real = {randvec(2 * D, rng)}, fake = {randvec(2 * D, rng)};

    std::mt19937_64 rng_a(99);
    GpResult r = gradient_penalty(d, real, fake, 10.0, rng_a, false);

    // independent estimate: finite differences on the logit at the same u
    std::mt19937_64 rng_b(99);
    std::uniform_real_distribution<double> uni(0, 1);
    const float eps = static_cast<float>(uni(rng_b));
    std::vector<float> u(2 * D);
    for (int j = 0; j < 2 * D; ++j) u[j] = eps * real[0][j] + (1 - eps) * fake[0][j];
    auto logit = [&](const std::vector<float>& x) {
        Mlp3 lin = d.net;
        lin.out_act = Act::Identity;
        return static_cast<double>(mlp3_forward(lin, x)[0]);
    };
    const double h = 1e-3;
    double acc = 0;
    for (int j = 0; j < 2 * D; ++j) {
        auto up = u, um = u;
        up[j] += static_cast<float>(h);
        um[j] -= static_cast<float>(h);
        const double gj = (logit(up) - logit(um)) / (2 * h);
        acc += gj * gj;
    }
    const double n = std::sqrt(acc);
    CHECK(r.value == doctest::Approx(10.0 * (n - 1) * (n - 1)).epsilon(1e-3));
}

TEST_CASE("gradient penalty parameter gradients match direct finite differences") {
    std::mt19937_64 rng(7);
    const int D = 4;
    DiscriminatorModel d = DiscriminatorModel::create(D, 8, 23);
    std::vector<std::vector<float>> real = {randvec(2 * D, rng), randvec(2 * D, rng)};
    std::vector<std::vector<float>> fake = {randvec(2 * D, rng), randvec(2 * D, rng)};

    std::mt19937_64 ga(5);
    GpResult r = gradient_penalty(d, real, fake, 10.0, ga, true);
    REQUIRE(r.grads.size() == 4);

    // FD over a few parameter coordinates, same epsilon draw each time
    Tensor* params[] = {&d.net.w1, &d.net.b1, &d.net.w2, &d.net.b2};
    const double h = 1e-4;
    for (int p = 0; p < 4; ++p) {
        for (size_t i : {size_t(0), params[p]->size() / 2}) {
            const float saved = params[p]->data[i];
            params[p]->data[i] = saved + static_cast<float>(h);
            std::mt19937_64 g1(5);
            const double fp = gradient_penalty(d, real, fake, 10.0, g1, false).value;
            params[p]->data[i] = saved - static_cast<float>(h);
            std::mt19937_64 g2(5);
            const double fm = gradient_penalty(d, real, fake, 10.0, g2, false).value;
            params[p]->data[i] = saved;
            const double fd = (fp - fm) / (2 * h);
            CHECK(r.grads[p][i] == doctest::Approx(fd).epsilon(5e-2).scale(1.0));
        }
    }
}

TEST_CASE("dr loss zero cases and Eq.3 identities") {
    std::mt19937_64 rng(8);
    const int D = 8;
    HallucinatorModel g = HallucinatorModel::create(D, 4, 16, 31);
    DiscriminatorModel d = DiscriminatorModel::create(D, 16, 32);

    // zero-weight generator: decoder output 0, loss = ||xa2||
    HallucinatorModel z = g;
    for (Tensor* t : {&z.encoder.w1, &z.encoder.b1, &z.encoder.w2, &z.encoder.b2,
                      &z.decoder.w1, &z.decoder.b1, &z.decoder.w2, &z.decoder.b2})
        std::fill(t->data.begin(), t->data.end(), 0.0f);
    Quadruplet q = random_quad(D, rng);
    double norm = 0;
    for (float v : q.xa2) norm += static_cast<double>(v) * v;
    CHECK(dr_loss(z, q) == doctest::Approx(std::sqrt(norm)).epsilon(1e-5));

    // lambda = 0 collapses to the adversarial term
    auto fake = hallucinate(g, q.xa1, q.xa2, q.xb1);
    CHECK(overall_generator_loss(g, d, q, 0.0) ==
          doctest::Approx(adv_loss_generator(d, q.xb1, fake)).epsilon(1e-6));

    // linearity: loss(1) - loss(0) = dr_loss
    const double l1 = overall_generator_loss(g, d, q, 1.0);
    const double l0 = overall_generator_loss(g, d, q, 0.0);
    CHECK(l1 - l0 == doctest::Approx(dr_loss(g, q)).epsilon(1e-4));

    // decomposition at the default lambda over random inputs
    for (int i = 0; i < 20; ++i) {
        Quadruplet qi = random_quad(D, rng);
        const double overall = overall_generator_loss(g, d, qi, 0.5);
        auto fk = hallucinate(g, qi.xa1, qi.xa2, qi.xb1);
        const double adv = adv_loss_generator(d, qi.xb1, fk);
        const double def = dr_loss(g, qi);
        CHECK(std::abs(overall - 0.5 * def - adv) < 1e-5);
        CHECK(def >= 0.0);
    }
}

TEST_CASE("train_offline: zero iterations returns initialization, deterministic report") {
    const int D = 8;
    std::mt19937_64 seedgen(0);
    QuadrupletSampler sampler = [D](std::mt19937_64& rng) {
        Quadruplet q = random_quad(D, rng);
        return q;
    };
    TrainConfig cfg;
    cfg.feat_dim = D;
    cfg.code_dim = 4;
    cfg.hidden = 16;
    cfg.batch = 4;
    cfg.seed = 12;
    cfg.iterations = 0;
    auto [g0, d0, rep0] = train_offline(sampler, cfg);
    CHECK(rep0.records.empty());
    std::mt19937_64 check(12);
    HallucinatorModel init = HallucinatorModel::create(D, 4, 16, check());
    CHECK(g0.encoder.w1.data == init.encoder.w1.data);

    cfg.iterations = 20;
    cfg.log_interval = 5;
    auto [g1, d1, rep1] = train_offline(sampler, cfg);
    auto [g2, d2, rep2] = train_offline(sampler, cfg);
    REQUIRE(rep1.records.size() == 4);
    CHECK(rep1.to_csv() == rep2.to_csv());
    CHECK(g1.encoder.w1.data == g2.encoder.w1.data);
}

TEST_CASE("discriminator separates real from fixed fakes after warmup") {
    // trainable direction: reals cluster at high values, fakes at low values
    const int D = 8;
    QuadrupletSampler sampler = [D](std::mt19937_64& rng) {
        std::uniform_real_distribution<float> hi(1.5f, 2.0f);
        Quadruplet q;
        q.xa1 = q.xa2 = q.xb1 = q.xb2 = std::vector<float>(D);
        for (int j = 0; j < D; ++j) {
            q.xa1[j] = hi(rng);
            q.xa2[j] = hi(rng);
            q.xb1[j] = hi(rng);
            q.xb2[j] = hi(rng);
        }
        q.identity_b = 1;
        return q;
    };
    TrainConfig cfg;
    cfg.feat_dim = D;
    cfg.code_dim = 4;
    cfg.hidden = 32;
    cfg.batch = 16;
    cfg.seed = 3;
    cfg.iterations = 200;
    cfg.lambda_def = 0.0;
    cfg.lr = 1e-3;
    auto [g, d, rep] = train_offline(sampler, cfg);
    REQUIRE(!rep.records.empty());
    const TrainRecord& last = rep.records.back();
    CHECK(last.d_real_mean > last.d_fake_mean);
}

TEST_CASE("nearest_real_audit exact cases and brute-force agreement") {
    std::mt19937_64 rng(9);
    const int D = 16;
    std::vector<std::vector<float>> pool;
    std::vector<uint32_t> ids;
    for (int i = 0; i < 1000; ++i) {
        pool.push_back(randvec(D, rng, -1, 1));
        ids.push_back(static_cast<uint32_t>(i));
    }
    std::vector<std::vector<float>> samples;
    for (int i = 0; i < 100; ++i) samples.push_back(randvec(D, rng, -1, 1));
    samples[0] = pool[417];  // exact member

    auto audit = nearest_real_audit(samples, pool, ids);
    CHECK(audit[0].pool_id == 417);
    CHECK(audit[0].distance == doctest::Approx(0.0));

    // independent double-loop oracle
    for (const AuditEntry& e : audit) {
        double best = 1e300;
        uint32_t bid = 0;
        for (size_t p = 0; p < pool.size(); ++p) {
            double acc = 0;
            for (int j = 0; j < D; ++j) {
                double dv = static_cast<double>(samples[e.sample_index][j]) -
                            static_cast<double>(pool[p][j]);
                acc += dv * dv;
            }
            acc = std::sqrt(acc);
            if (acc < best) {
                best = acc;
                bid = ids[p];
            }
        }
        CHECK(e.pool_id == bid);
        CHECK(e.distance == doctest::Approx(best).epsilon(1e-9));
    }

    // pool of one
    auto single = nearest_real_audit(samples, {pool[3]}, {7});
    for (const auto& e : single) CHECK(e.pool_id == 7);

    CHECK_THROWS_AS(nearest_real_audit(samples, {}, {}), ContractError);

    // tie broken by smallest id
    std::vector<std::vector<float>> tied = {{1.0f, 0.0f}, {1.0f, 0.0f}};
    auto t = nearest_real_audit({{0.0f, 0.0f}}, tied, {9, 4});
    CHECK(t[0].pool_id == 4);
}

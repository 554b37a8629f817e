#include "hat/hallucinator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace hat {

namespace {

Tensor single_row(const std::vector<float>& v) {
    return Tensor::from(1, static_cast<int>(v.size()), v);
}

Tensor pair_row(const std::vector<float>& a, const std::vector<float>& b) {
    std::vector<float> d;
    d.reserve(a.size() + b.size());
    d.insert(d.end(), a.begin(), a.end());
    d.insert(d.end(), b.begin(), b.end());
    const int n = static_cast<int>(d.size());
    return Tensor::from(1, n, std::move(d));
}

Tensor stack_rows(const std::vector<std::vector<float>>& rows) {
    if (rows.empty()) throw ContractError("stack_rows: empty batch");
    const int cols = static_cast<int>(rows[0].size());
    std::vector<float> d;
    d.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != cols)
            throw ShapeError("stack_rows: ragged batch");
        d.insert(d.end(), r.begin(), r.end());
    }
    const int n = static_cast<int>(rows.size());
    return Tensor::from(n, cols, std::move(d));
}

// mean of a batch column on a finished tape node
double mean_val(const TapeF& tp, int id) {
    const auto& v = tp.val(id);
    double acc = 0;
    for (float x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

}  // namespace

void TrainReport::write_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << to_csv();
}

std::string TrainReport::to_csv() const {
    std::ostringstream os;
    os << "iteration,l_adv_d,l_adv_g,l_def,gp,d_real_mean,d_fake_mean\n";
    char buf[256];
    for (const TrainRecord& r : records) {
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.iteration,
                      r.l_adv_d, r.l_adv_g, r.l_def, r.gp, r.d_real_mean, r.d_fake_mean);
        os << buf;
    }
    return os.str();
}

double adv_loss_discriminator(const DiscriminatorModel& d, const std::vector<float>& real_x1,
                              const std::vector<float>& real_x2,
                              const std::vector<float>& fake_x1,
                              const std::vector<float>& fake_xhat) {
    TapeF tp;
    Mlp3Nodes dn = push_mlp(tp, d.net);
    int real = tp.leaf(pair_row(real_x1, real_x2));
    int fake = tp.leaf(pair_row(fake_x1, fake_xhat));
    return tp.scalar(adv_loss_d_node(tp, dn, real, fake));
}

double adv_loss_generator(const DiscriminatorModel& d, const std::vector<float>& fake_x1,
                          const std::vector<float>& fake_xhat) {
    TapeF tp;
    Mlp3Nodes dn = push_mlp(tp, d.net);
    int fake = tp.leaf(pair_row(fake_x1, fake_xhat));
    return tp.scalar(adv_loss_g_node(tp, dn, fake));
}

double dr_loss(const HallucinatorModel& g, const Quadruplet& q) {
    TapeF tp;
    HallucinatorNodes gn = push_hallucinator(tp, g);
    int xa1 = tp.leaf(single_row(q.xa1));
    int xa2 = tp.leaf(single_row(q.xa2));
    int xb1 = tp.leaf(single_row(q.xb1));
    int xhat = fake_sample_node(tp, gn, xa1, xa2, xb1);
    return tp.scalar(dr_loss_node(tp, gn, xa1, xa2, xb1, xhat));
}

double overall_generator_loss(const HallucinatorModel& g, const DiscriminatorModel& d,
                              const Quadruplet& q, double lambda_def) {
    TapeF tp;
    HallucinatorNodes gn = push_hallucinator(tp, g);
    Mlp3Nodes dn = push_mlp(tp, d.net);
    int xa1 = tp.leaf(single_row(q.xa1));
    int xa2 = tp.leaf(single_row(q.xa2));
    int xb1 = tp.leaf(single_row(q.xb1));
    int xhat = fake_sample_node(tp, gn, xa1, xa2, xb1);
    int adv = adv_loss_g_node(tp, dn, tp.concat_cols(xb1, xhat));
    int def = dr_loss_node(tp, gn, xa1, xa2, xb1, xhat);
    return tp.scalar(tp.add(adv, tp.scale(def, static_cast<float>(lambda_def))));
}

namespace {

// Pre-sigmoid logit of the discriminator over a [B x 2D] input leaf; the
// per-row outputs are weighted by `weights` (a constant leaf) and summed so
// one backward pass yields all row input-gradients at once.
struct LogitGraph {
    TapeF tp;
    Mlp3Nodes dn;
    int input = -1;
    int weighted = -1;
};

void build_logit_graph(LogitGraph& lg, const DiscriminatorModel& d, const Tensor& u,
                       const Tensor& weights) {
    lg.tp.reset();
    lg.dn = push_mlp(lg.tp, d.net);
    lg.input = lg.tp.leaf(u);
    int h = lg.tp.relu(lg.tp.add_bias(lg.tp.matmul(lg.input, lg.dn.w1), lg.dn.b1));
    int logit = lg.tp.add_bias(lg.tp.matmul(h, lg.dn.w2), lg.dn.b2);  // [B x 1]
    int w = lg.tp.leaf(weights);                                      // [1 x B]
    lg.weighted = lg.tp.sum(lg.tp.matmul(w, logit));
}

}  // namespace

GpResult gradient_penalty(const DiscriminatorModel& d,
                          const std::vector<std::vector<float>>& real_pairs,
                          const std::vector<std::vector<float>>& fake_pairs, double lambda_gp,
                          std::mt19937_64& rng, bool want_grads) {
    if (real_pairs.size() != fake_pairs.size() || real_pairs.empty())
        throw ContractError("gradient_penalty: real/fake batch sizes disagree or empty");
    const int B = static_cast<int>(real_pairs.size());
    const int W = 2 * d.feat_dim;
    Tensor u(B, W);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int i = 0; i < B; ++i) {
        if (static_cast<int>(real_pairs[i].size()) != W ||
            static_cast<int>(fake_pairs[i].size()) != W)
            throw ShapeError("gradient_penalty: pair width != 2*feat_dim");
        const float eps = static_cast<float>(uni(rng));
        for (int j = 0; j < W; ++j)
            u.at(i, j) = eps * real_pairs[i][j] + (1.0f - eps) * fake_pairs[i][j];
    }

    Tensor ones(1, B);
    std::fill(ones.data.begin(), ones.data.end(), 1.0f);

    // grad_u logit(u) by one backward pass
    LogitGraph lg;
    build_logit_graph(lg, d, u, ones);
    lg.tp.backward(lg.weighted);
    const std::vector<double>& gu = lg.tp.grad(lg.input);

    std::vector<double> norms(B, 0.0);
    for (int i = 0; i < B; ++i) {
        double acc = 0;
        for (int j = 0; j < W; ++j) {
            const double v = gu[static_cast<size_t>(i) * W + j];
            acc += v * v;
        }
        norms[i] = std::sqrt(acc);
    }

    GpResult out;
    for (int i = 0; i < B; ++i) out.value += (norms[i] - 1.0) * (norms[i] - 1.0);
    out.value *= lambda_gp / B;
    if (!want_grads) return out;

    // d(penalty)/d(theta) via a directional finite difference in the input:
    // for each row, the directional derivative ghat_i^T grad_u logit equals
    // [logit(u_i + h ghat_i) - logit(u_i - h ghat_i)] / 2h, so its parameter
    // gradient is the difference of two ordinary backward passes. Rows are
    // weighted by a_i = 2 lambda (n_i - 1) / B.
    const double h = 1e-2;  // logit is piecewise linear; exact away from kinks
    Tensor up(B, W), um(B, W), wts(1, B);
    for (int i = 0; i < B; ++i) {
        const double n = std::max(norms[i], 1e-12);
        wts.data[i] = static_cast<float>(2.0 * lambda_gp * (norms[i] - 1.0) / B);
        for (int j = 0; j < W; ++j) {
            const double dir = gu[static_cast<size_t>(i) * W + j] / n;
            up.at(i, j) = static_cast<float>(u.at(i, j) + h * dir);
            um.at(i, j) = static_cast<float>(u.at(i, j) - h * dir);
        }
    }

    auto param_grads = [&](const Tensor& input) {
        LogitGraph g2;
        build_logit_graph(g2, d, input, wts);
        g2.tp.backward(g2.weighted);
        return std::array<std::vector<double>, 4>{g2.tp.grad(g2.dn.w1), g2.tp.grad(g2.dn.b1),
                                                  g2.tp.grad(g2.dn.w2), g2.tp.grad(g2.dn.b2)};
    };
    auto gp_ = param_grads(up);
    auto gm_ = param_grads(um);
    out.grads.resize(4);
    for (int p = 0; p < 4; ++p) {
        out.grads[p].resize(gp_[p].size());
        for (size_t i = 0; i < gp_[p].size(); ++i)
            out.grads[p][i] = (gp_[p][i] - gm_[p][i]) / (2.0 * h);
    }
    return out;
}

namespace {

struct GBatch {
    Tensor xa1, xa2, xb1, xb2;
};

GBatch draw_batch(const QuadrupletSampler& sampler, std::mt19937_64& rng, int batch,
                  int feat_dim) {
    std::vector<std::vector<float>> a1, a2, b1, b2;
    a1.reserve(batch);
    a2.reserve(batch);
    b1.reserve(batch);
    b2.reserve(batch);
    for (int i = 0; i < batch; ++i) {
        Quadruplet q = sampler(rng);
        if (q.identity_a == q.identity_b)
            throw ContractError("quadruplet sampler returned identical identities");
        if (static_cast<int>(q.xa1.size()) != feat_dim)
            throw ShapeError("quadruplet feature dim " + std::to_string(q.xa1.size()) +
                             " != configured " + std::to_string(feat_dim));
        a1.push_back(std::move(q.xa1));
        a2.push_back(std::move(q.xa2));
        b1.push_back(std::move(q.xb1));
        b2.push_back(std::move(q.xb2));
    }
    return {stack_rows(a1), stack_rows(a2), stack_rows(b1), stack_rows(b2)};
}

// fake samples without building generator gradients (discriminator step)
Tensor fake_batch_detached(const HallucinatorModel& g, const Tensor& xa1, const Tensor& xa2,
                           const Tensor& xb1) {
    const int B = xa1.rows, D = g.feat_dim;
    Tensor out(B, D);
    std::vector<float> row1(D), row2(D), rowe(D);
    for (int i = 0; i < B; ++i) {
        std::copy_n(&xa1.data[static_cast<size_t>(i) * D], D, row1.begin());
        std::copy_n(&xa2.data[static_cast<size_t>(i) * D], D, row2.begin());
        std::copy_n(&xb1.data[static_cast<size_t>(i) * D], D, rowe.begin());
        auto fake = decode(g, encode(g, row1, row2), rowe);
        std::copy_n(fake.begin(), D, &out.data[static_cast<size_t>(i) * D]);
    }
    return out;
}

std::vector<std::vector<float>> rows_of(const Tensor& t) {
    std::vector<std::vector<float>> out(t.rows);
    for (int i = 0; i < t.rows; ++i)
        out[i].assign(t.data.begin() + static_cast<size_t>(i) * t.cols,
                      t.data.begin() + static_cast<size_t>(i + 1) * t.cols);
    return out;
}

std::vector<std::vector<float>> paired_rows(const Tensor& a, const Tensor& b) {
    std::vector<std::vector<float>> out(a.rows);
    for (int i = 0; i < a.rows; ++i) {
        out[i].reserve(a.cols + b.cols);
        out[i].insert(out[i].end(), a.data.begin() + static_cast<size_t>(i) * a.cols,
                      a.data.begin() + static_cast<size_t>(i + 1) * a.cols);
        out[i].insert(out[i].end(), b.data.begin() + static_cast<size_t>(i) * b.cols,
                      b.data.begin() + static_cast<size_t>(i + 1) * b.cols);
    }
    return out;
}

}  // namespace

std::tuple<HallucinatorModel, DiscriminatorModel, TrainReport> train_offline(
    const QuadrupletSampler& sampler, const TrainConfig& cfg) {
    if (cfg.feat_dim <= 0) throw ContractError("train_offline: feat_dim must be set");
    if (cfg.lr <= 0) throw ContractError("train_offline: learning rate must be positive");
    if (cfg.lambda_def < 0) throw ContractError("train_offline: lambda_def must be >= 0");

    std::mt19937_64 rng(cfg.seed);
    HallucinatorModel g = HallucinatorModel::create(cfg.feat_dim, cfg.code_dim, cfg.hidden,
                                                    rng());
    DiscriminatorModel d = DiscriminatorModel::create(cfg.feat_dim, cfg.hidden, rng());

    AdamConfig ac;
    ac.lr = cfg.lr;
    AdamState g_adam({&g.encoder.w1, &g.encoder.b1, &g.encoder.w2, &g.encoder.b2,
                      &g.decoder.w1, &g.decoder.b1, &g.decoder.w2, &g.decoder.b2},
                     ac);
    AdamState d_adam({&d.net.w1, &d.net.b1, &d.net.w2, &d.net.b2}, ac);

    TrainReport report;
    TapeF tp;
    for (long long it = 1; it <= cfg.iterations; ++it) {
        GBatch batch = draw_batch(sampler, rng, cfg.batch, cfg.feat_dim);

        // discriminator step; fakes are detached
        Tensor fake = fake_batch_detached(g, batch.xa1, batch.xa2, batch.xb1);
        tp.reset();
        Mlp3Nodes dn = push_mlp(tp, d.net);
        int real_pair = tp.concat_cols(tp.leaf(batch.xb1), tp.leaf(batch.xb2));
        int fake_pair = tp.concat_cols(tp.leaf(batch.xb1), tp.leaf(fake));
        int d_loss = adv_loss_d_node(tp, dn, real_pair, fake_pair);
        const double l_adv_d = tp.scalar(d_loss);
        tp.backward(d_loss);
        std::vector<std::vector<double>> dg = {tp.grad(dn.w1), tp.grad(dn.b1),
                                               tp.grad(dn.w2), tp.grad(dn.b2)};

        GpResult gp = gradient_penalty(d, paired_rows(batch.xb1, batch.xb2),
                                       paired_rows(batch.xb1, fake), cfg.lambda_gp, rng, true);
        for (int p = 0; p < 4; ++p)
            for (size_t i = 0; i < dg[p].size(); ++i) dg[p][i] += gp.grads[p][i];

        // mean scores for the report
        double d_real_mean = 0, d_fake_mean = 0;
        {
            TapeF sp;
            Mlp3Nodes sdn = push_mlp(sp, d.net);
            int pr = discriminator_prob_node(sp, sdn,
                                             sp.concat_cols(sp.leaf(batch.xb1), sp.leaf(batch.xb2)));
            int pf = discriminator_prob_node(sp, sdn,
                                             sp.concat_cols(sp.leaf(batch.xb1), sp.leaf(fake)));
            d_real_mean = mean_val(sp, pr);
            d_fake_mean = mean_val(sp, pf);
        }

        {
            Tensor* params[] = {&d.net.w1, &d.net.b1, &d.net.w2, &d.net.b2};
            const std::vector<double>* grads[] = {&dg[0], &dg[1], &dg[2], &dg[3]};
            d_adam.step(params, grads);
        }

        // generator step
        tp.reset();
        HallucinatorNodes gn = push_hallucinator(tp, g);
        Mlp3Nodes dn2 = push_mlp(tp, d.net);
        int xa1 = tp.leaf(batch.xa1);
        int xa2 = tp.leaf(batch.xa2);
        int xb1 = tp.leaf(batch.xb1);
        int xhat = fake_sample_node(tp, gn, xa1, xa2, xb1);
        int adv_g = adv_loss_g_node(tp, dn2, tp.concat_cols(xb1, xhat));
        int def = dr_loss_node(tp, gn, xa1, xa2, xb1, xhat);
        int g_loss = tp.add(adv_g, tp.scale(def, static_cast<float>(cfg.lambda_def)));
        const double l_adv_g = tp.scalar(adv_g);
        const double l_def = tp.scalar(def);
        tp.backward(g_loss);
        {
            std::vector<std::vector<double>> gg = {
                tp.grad(gn.encoder.w1), tp.grad(gn.encoder.b1), tp.grad(gn.encoder.w2),
                tp.grad(gn.encoder.b2), tp.grad(gn.decoder.w1), tp.grad(gn.decoder.b1),
                tp.grad(gn.decoder.w2), tp.grad(gn.decoder.b2)};
            Tensor* params[] = {&g.encoder.w1, &g.encoder.b1, &g.encoder.w2, &g.encoder.b2,
                                &g.decoder.w1, &g.decoder.b1, &g.decoder.w2, &g.decoder.b2};
            const std::vector<double>* grads[] = {&gg[0], &gg[1], &gg[2], &gg[3],
                                                  &gg[4], &gg[5], &gg[6], &gg[7]};
            g_adam.step(params, grads);
        }

        if (!std::isfinite(l_adv_d) || !std::isfinite(l_adv_g) || !std::isfinite(l_def) ||
            !std::isfinite(gp.value))
            throw NumericError("train_offline: non-finite loss at iteration " +
                               std::to_string(it));

        if (cfg.log_interval > 0 && it % cfg.log_interval == 0)
            report.records.push_back(
                {it, l_adv_d, l_adv_g, l_def, gp.value, d_real_mean, d_fake_mean});
    }
    return {std::move(g), std::move(d), std::move(report)};
}

double generator_step(HallucinatorModel& g, const DiscriminatorModel& d, const Tensor& xa1,
                      const Tensor& xa2, const Tensor& xb1, double lambda_def,
                      AdamState& adam) {
    TapeF tp;
    HallucinatorNodes gn = push_hallucinator(tp, g);
    Mlp3Nodes dn = push_mlp(tp, d.net);
    int a1 = tp.leaf(xa1);
    int a2 = tp.leaf(xa2);
    int b1 = tp.leaf(xb1);
    int xhat = fake_sample_node(tp, gn, a1, a2, b1);
    int adv = adv_loss_g_node(tp, dn, tp.concat_cols(b1, xhat));
    int def = dr_loss_node(tp, gn, a1, a2, b1, xhat);
    int loss = tp.add(adv, tp.scale(def, static_cast<float>(lambda_def)));
    const double value = tp.scalar(loss);
    if (!std::isfinite(value)) throw NumericError("generator_step: non-finite loss");
    tp.backward(loss);
    std::vector<std::vector<double>> gg = {
        tp.grad(gn.encoder.w1), tp.grad(gn.encoder.b1), tp.grad(gn.encoder.w2),
        tp.grad(gn.encoder.b2), tp.grad(gn.decoder.w1), tp.grad(gn.decoder.b1),
        tp.grad(gn.decoder.w2), tp.grad(gn.decoder.b2)};
    Tensor* params[] = {&g.encoder.w1, &g.encoder.b1, &g.encoder.w2, &g.encoder.b2,
                        &g.decoder.w1, &g.decoder.b1, &g.decoder.w2, &g.decoder.b2};
    const std::vector<double>* grads[] = {&gg[0], &gg[1], &gg[2], &gg[3],
                                          &gg[4], &gg[5], &gg[6], &gg[7]};
    adam.step(params, grads);
    return value;
}

std::vector<float> hallucinate(const HallucinatorModel& g, std::span<const float> x1,
                               std::span<const float> x2, std::span<const float> exemplar) {
    return decode(g, encode(g, x1, x2), exemplar);
}

std::vector<AuditEntry> nearest_real_audit(const std::vector<std::vector<float>>& samples,
                                           const std::vector<std::vector<float>>& pool,
                                           const std::vector<uint32_t>& pool_ids) {
    if (pool.empty()) throw ContractError("nearest_real_audit: empty pool");
    if (pool_ids.size() != pool.size())
        throw ContractError("nearest_real_audit: pool/id size mismatch");
    std::vector<AuditEntry> out;
    out.reserve(samples.size());
    for (size_t s = 0; s < samples.size(); ++s) {
        double best = std::numeric_limits<double>::infinity();
        uint32_t best_id = 0;
        for (size_t p = 0; p < pool.size(); ++p) {
            if (pool[p].size() != samples[s].size())
                throw ShapeError("nearest_real_audit: dimension mismatch at pool entry " +
                                 std::to_string(p));
            double acc = 0;
            for (size_t j = 0; j < pool[p].size(); ++j) {
                const double dv = static_cast<double>(samples[s][j]) - pool[p][j];
                acc += dv * dv;
            }
            const double dist = std::sqrt(acc);
            if (dist < best || (dist == best && pool_ids[p] < best_id)) {
                best = dist;
                best_id = pool_ids[p];
            }
        }
        out.push_back({s, best_id, best});
    }
    return out;
}

}  // namespace hat

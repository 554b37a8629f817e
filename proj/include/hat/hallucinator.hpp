#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "hat/adam.hpp"
#include "hat/nets.hpp"
#include "hat/tape.hpp"

namespace hat {

// Deformation-source pair of identity a plus transfer-target pair of identity b.
struct Quadruplet {
    std::vector<float> xa1, xa2, xb1, xb2;
    uint32_t identity_a = 0;
    uint32_t identity_b = 0;
};

struct TrainConfig {
    double lambda_def = 0.5;
    double lambda_gp = 10.0;
    double lr = 2e-4;
    long long iterations = 0;
    int batch = 32;
    uint64_t seed = 0;
    int feat_dim = 0;
    int code_dim = 64;
    int hidden = 2048;
    int log_interval = 50;
};

struct TrainRecord {
    long long iteration;
    double l_adv_d, l_adv_g, l_def, gp, d_real_mean, d_fake_mean;
};

struct TrainReport {
    std::vector<TrainRecord> records;
    void write_csv(const std::string& path) const;
    std::string to_csv() const;
};

using QuadrupletSampler = std::function<Quadruplet(std::mt19937_64&)>;

// --- tape graph builders (shared by training and the gradient checker) ---

struct HallucinatorNodes {
    Mlp3Nodes encoder, decoder;
};

template <class T>
HallucinatorNodes push_hallucinator(Tape<T>& tape, const HallucinatorModel& m) {
    return {push_mlp(tape, m.encoder), push_mlp(tape, m.decoder)};
}

// x_hat = D_e([E_n([xa1, xa2]), xb1]); inputs are [B x D] batches.
template <class T>
int fake_sample_node(Tape<T>& tp, const HallucinatorNodes& g, int xa1, int xa2, int xb1) {
    int z = mlp3_apply(tp, g.encoder, tp.concat_cols(xa1, xa2), Act::Relu);
    return mlp3_apply(tp, g.decoder, tp.concat_cols(z, xb1), Act::Relu);
}

template <class T>
int discriminator_prob_node(Tape<T>& tp, const Mlp3Nodes& d, int pair) {
    return mlp3_apply(tp, d, pair, Act::Sigmoid);
}

// -(log D(real) + log(1 - D(fake))), batch mean. The discriminator minimizes this.
template <class T>
int adv_loss_d_node(Tape<T>& tp, const Mlp3Nodes& d, int real_pair, int fake_pair) {
    int pr = discriminator_prob_node(tp, d, real_pair);
    int pf = discriminator_prob_node(tp, d, fake_pair);
    int lr = tp.mean(tp.log_clamped(pr));
    int lf = tp.mean(tp.log_clamped(tp.affine(pf, T(-1), T(1))));
    return tp.scale(tp.add(lr, lf), T(-1));
}

// Non-saturating generator objective: -log D(fake), batch mean.
template <class T>
int adv_loss_g_node(Tape<T>& tp, const Mlp3Nodes& d, int fake_pair) {
    int pf = discriminator_prob_node(tp, d, fake_pair);
    return tp.scale(tp.mean(tp.log_clamped(pf)), T(-1));
}

// ||D_e([z_b, xa1]) - xa2||_2 per row, batch mean, with
// z_b = E_n([xb1, x_hat]) and x_hat the generated sample.
template <class T>
int dr_loss_node(Tape<T>& tp, const HallucinatorNodes& g, int xa1, int xa2, int xb1,
                 int x_hat) {
    int zb = mlp3_apply(tp, g.encoder, tp.concat_cols(xb1, x_hat), Act::Relu);
    int rec = mlp3_apply(tp, g.decoder, tp.concat_cols(zb, xa1), Act::Relu);
    return tp.mean(tp.l2norm_rows(tp.sub(rec, xa2)));
}

// --- scalar-value entry points ---

double adv_loss_discriminator(const DiscriminatorModel& d, const std::vector<float>& real_x1,
                              const std::vector<float>& real_x2,
                              const std::vector<float>& fake_x1,
                              const std::vector<float>& fake_xhat);
double adv_loss_generator(const DiscriminatorModel& d, const std::vector<float>& fake_x1,
                          const std::vector<float>& fake_xhat);
double dr_loss(const HallucinatorModel& g, const Quadruplet& q);
double overall_generator_loss(const HallucinatorModel& g, const DiscriminatorModel& d,
                              const Quadruplet& q, double lambda_def);

// Gradient penalty lambda_gp * mean_i (||grad_u logit(u_i)|| - 1)^2 at
// u_i = eps_i * real_i + (1 - eps_i) * fake_i, eps_i ~ U(0,1).
// The inner function is the discriminator's pre-sigmoid logit.
struct GpResult {
    double value = 0.0;
    // aligned with {w1, b1, w2, b2}; empty unless gradients were requested
    std::vector<std::vector<double>> grads;
};

GpResult gradient_penalty(const DiscriminatorModel& d,
                          const std::vector<std::vector<float>>& real_pairs,
                          const std::vector<std::vector<float>>& fake_pairs, double lambda_gp,
                          std::mt19937_64& rng, bool want_grads);

// Offline adversarial training over quadruplets: one discriminator step
// (adv loss + gradient penalty), then one generator step (Eq. 3 objective)
// per iteration. Deterministic under a fixed seed.
std::tuple<HallucinatorModel, DiscriminatorModel, TrainReport> train_offline(
    const QuadrupletSampler& sampler, const TrainConfig& cfg);

// One generator step on the overall loss for a batch of (xa1, xa2, xb1)
// triples against a frozen discriminator. Used by the online tracker.
// Returns the loss value before the update.
double generator_step(HallucinatorModel& g, const DiscriminatorModel& d, const Tensor& xa1,
                      const Tensor& xa2, const Tensor& xb1, double lambda_def,
                      AdamState& adam);

// D_e([E_n([x1, x2]), exemplar]) — a hallucinated positive.
std::vector<float> hallucinate(const HallucinatorModel& g, std::span<const float> x1,
                               std::span<const float> x2, std::span<const float> exemplar);

struct AuditEntry {
    size_t sample_index;
    uint32_t pool_id;
    double distance;
};

// Exact Euclidean nearest neighbor per sample; ties broken by smallest pool id.
std::vector<AuditEntry> nearest_real_audit(const std::vector<std::vector<float>>& samples,
                                           const std::vector<std::vector<float>>& pool,
                                           const std::vector<uint32_t>& pool_ids);

}  // namespace hat

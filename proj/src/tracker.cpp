#include "hat/tracker.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "hat/errors.hpp"
#include "hat/hallucinator.hpp"

namespace hat {

int hallucinated_count(Ratio r, int base_pos) {
    switch (r) {
        case Ratio::R13: return 0;
        case Ratio::R23: return base_pos;
        case Ratio::R11: return 2 * base_pos;
    }
    throw ContractError("hallucinated_count: bad ratio");
}

std::string ratio_str(Ratio r) {
    switch (r) {
        case Ratio::R13: return "1/3";
        case Ratio::R23: return "2/3";
        case Ratio::R11: return "1/1";
    }
    return "?";
}

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
    uint64_t x = a * 0x9e3779b97f4a7c15ull + b * 0xbf58476d1ce4e5b9ull +
                 c * 0x94d049bb133111ebull + 0x2545f4914f6cdd1dull;
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

// --- synthetic videos ---------------------------------------------------

namespace {

double dist(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

std::vector<double> jittered(std::span<const double> center, double sigma,
                             std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, sigma);
    std::vector<double> out(center.begin(), center.end());
    for (double& x : out) x += g(rng);
    return out;
}

}  // namespace

SimVideo gen_sim_video(const SyntheticWorld& world, uint32_t identity,
                       const SimVideoConfig& cfg, uint64_t seed) {
    if (cfg.n_near < 1 || cfg.n_near > cfg.n_candidates)
        throw ContractError("gen_sim_video: n_near out of range");
    if (!(cfg.rho_pos < cfg.rho_neg))
        throw ContractError("gen_sim_video: rho_pos must be below rho_neg");
    std::mt19937_64 rng(seed);
    const std::vector<double>& anchor = world.anchor(identity);
    const int cluster = world.cluster_of(identity);
    const std::vector<double>& dir = world.cluster_direction(cluster);
    const int k = static_cast<int>(anchor.size());

    SimVideo video;
    video.rho_pos = cfg.rho_pos;
    video.rho_neg = cfg.rho_neg;
    video.identity = identity;
    video.cluster = cluster;
    video.exemplar = world.feature(anchor);
    video.exemplar_semantic = world.semantic(cluster, anchor);

    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // the video never deforms further than this identity's own snippets do,
    // so transfer pairs from 𝔻_T can cover the whole pose range
    const DeformParams last = world.frame_deform(identity, world.config().frames_per_snippet - 1);
    double id_reach = 0.0;
    for (double v : last.delta) id_reach += v * v;
    id_reach = std::sqrt(id_reach);
    const double travel = id_reach > 0.0 ? std::min(cfg.travel_limit, id_reach) : cfg.travel_limit;

    double disp = 0.0, vel = cfg.step;
    std::vector<double> prev_truth = anchor;
    for (int t = 0; t < cfg.n_frames; ++t) {
        if (t > 0) {
            disp += vel;
            if (std::abs(disp) > travel) {  // ping-pong within bounds
                vel = -vel;
                disp += 2.0 * vel;
            }
        }
        SimFrame frame;
        frame.truth.resize(k);
        for (int j = 0; j < k; ++j)
            frame.truth[j] = anchor[j] + disp * dir[j] + cfg.wobble * gauss(rng);

        const double pj = cfg.pos_jitter * (t == 0 ? cfg.init_tightness : 1.0);
        std::vector<std::vector<double>> latents;
        for (int c = 0; c < cfg.n_near; ++c) {
            std::vector<double> cand = jittered(frame.truth, pj, rng);
            if (dist(cand, frame.truth) > cfg.rho_pos) {
                // pull the offset inside the positive radius
                const double want = unit(rng) * 0.8 * cfg.rho_pos;
                const double have = dist(cand, frame.truth);
                for (int j = 0; j < k; ++j)
                    cand[j] = frame.truth[j] + (cand[j] - frame.truth[j]) * want / have;
            }
            latents.push_back(std::move(cand));
        }
        for (int c = cfg.n_near; c < cfg.n_candidates; ++c)
            latents.push_back(jittered(prev_truth, cfg.neg_jitter, rng));
        std::shuffle(latents.begin(), latents.end(), rng);

        for (const auto& lat : latents) {
            Candidate cand;
            cand.feature = world.feature(lat);
            cand.latent_dist = dist(lat, frame.truth);
            frame.candidates.push_back(std::move(cand));
        }
        prev_truth = frame.truth;
        video.frames.push_back(std::move(frame));
    }
    return video;
}

// --- detection ----------------------------------------------------------

size_t detect(const ClassifierHead& cls, const std::vector<Candidate>& candidates) {
    if (candidates.empty()) throw ContractError("detect: empty candidate set");
    size_t best = 0;
    double best_p = -1.0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        const double p = classify(cls, candidates[i].feature).first;
        if (p > best_p) {
            best_p = p;
            best = i;
        }
    }
    return best;
}

// --- online training loop -----------------------------------------------

namespace {

struct LabeledFrame {
    std::vector<std::vector<float>> pos;
    std::vector<std::pair<double, std::vector<float>>> neg;  // (latent dist, feature)
};

LabeledFrame label_frame(const SimFrame& frame, double rho_pos, double rho_neg) {
    LabeledFrame out;
    for (const Candidate& c : frame.candidates) {
        if (c.latent_dist <= rho_pos)
            out.pos.push_back(c.feature);
        else if (c.latent_dist >= rho_neg)
            out.neg.emplace_back(c.latent_dist, c.feature);
        // gap candidates never enter a training batch
    }
    return out;
}

void classifier_step(ClassifierHead& cls, const Tensor& x, const std::vector<int>& labels,
                     AdamState& adam) {
    TapeF tp;
    ClassifierNodes n = push_classifier(tp, cls);
    int loss = tp.softmax_xent(classifier_logits(tp, n, tp.leaf(x)), labels);
    tp.backward(loss);
    const std::vector<double> g1 = tp.grad(n.w1), g2 = tp.grad(n.b1), g3 = tp.grad(n.w2),
                              g4 = tp.grad(n.b2), g5 = tp.grad(n.w3), g6 = tp.grad(n.b3);
    Tensor* params[] = {&cls.w1, &cls.b1, &cls.w2, &cls.b2, &cls.w3, &cls.b3};
    const std::vector<double>* grads[] = {&g1, &g2, &g3, &g4, &g5, &g6};
    adam.step(params, grads);
}

struct OnlineTrainer {
    const SimVideo& video;
    const InstanceStore& store;
    const std::vector<PairSample>& pool;  // D_S when SDT is on, otherwise D_T
    HallucinatorModel& g;
    const DiscriminatorModel& disc;
    ClassifierHead& cls;
    const TrackConfig& cfg;
    std::mt19937_64& rng;
    AdamState cls_adam, g_adam;
    std::deque<LabeledFrame> buffer;
    TrackResult& stats;

    OnlineTrainer(const SimVideo& v, const InstanceStore& s, const std::vector<PairSample>& p,
                  HallucinatorModel& gg, const DiscriminatorModel& dd, ClassifierHead& cc,
                  const TrackConfig& c, std::mt19937_64& r, TrackResult& st)
        : video(v), store(s), pool(p), g(gg), disc(dd), cls(cc), cfg(c), rng(r), stats(st) {
        const Tensor* cp[] = {&cls.w1, &cls.b1, &cls.w2, &cls.b2, &cls.w3, &cls.b3};
        cls_adam = AdamState(cp, AdamConfig{cfg.online_lr, 0.9, 0.999, 1e-8});
        const Tensor* gp[] = {&g.encoder.w1, &g.encoder.b1, &g.encoder.w2, &g.encoder.b2,
                              &g.decoder.w1, &g.decoder.b1, &g.decoder.w2, &g.decoder.b2};
        g_adam = AdamState(gp, AdamConfig{cfg.online_lr, 0.9, 0.999, 1e-8});
    }

    void push_frame(const SimFrame& frame) {
        buffer.push_back(label_frame(frame, video.rho_pos, video.rho_neg));
        while (static_cast<int>(buffer.size()) > cfg.recent_frames) buffer.pop_front();
    }

    void train(int iterations) {
        if (iterations <= 0) return;
        std::vector<const std::vector<float>*> all_pos;
        std::vector<const std::pair<double, std::vector<float>>*> all_neg;
        for (const LabeledFrame& f : buffer) {
            for (const auto& p : f.pos) all_pos.push_back(&p);
            for (const auto& n : f.neg) all_neg.push_back(&n);
        }
        if (all_pos.empty() || all_neg.empty())
            throw ContractError("online training: no labeled positives or negatives in buffer");
        // hard negatives: farthest first, distractors resampled to fill
        std::sort(all_neg.begin(), all_neg.end(),
                  [](const auto* a, const auto* b) { return a->first > b->first; });

        const int h = hallucinated_count(cfg.ratio, cfg.base_pos);
        if (h > 0 && pool.empty())
            throw ContractError("online training: empty transfer pair pool");
        const int d = store.feat_dim;
        std::uniform_int_distribution<size_t> pick_pos(0, all_pos.size() - 1);
        std::uniform_int_distribution<size_t> pick_neg(0, all_neg.size() - 1);
        std::uniform_int_distribution<size_t> pick_pair(0, pool.empty() ? 0 : pool.size() - 1);

        for (int it = 0; it < iterations; ++it) {
            const int rows = cfg.base_pos + h + cfg.base_neg;
            std::vector<float> batch;
            batch.reserve(static_cast<size_t>(rows) * d);
            std::vector<int> labels;
            labels.reserve(rows);

            for (int i = 0; i < cfg.base_pos; ++i) {
                const auto& f = *all_pos[pick_pos(rng)];
                batch.insert(batch.end(), f.begin(), f.end());
                labels.push_back(0);
            }
            std::vector<float> xa1, xa2;
            for (int i = 0; i < h; ++i) {
                const PairSample& p = pool[pick_pair(rng)];
                const auto& a = store.items[p.a].feature;
                const auto& b = store.items[p.b].feature;
                std::vector<float> hal = hallucinate(g, a, b, video.exemplar);
                batch.insert(batch.end(), hal.begin(), hal.end());
                labels.push_back(0);
                if (cfg.update_ah) {
                    xa1.insert(xa1.end(), a.begin(), a.end());
                    xa2.insert(xa2.end(), b.begin(), b.end());
                }
            }
            for (int i = 0; i < cfg.base_neg; ++i) {
                const auto& f = i < static_cast<int>(all_neg.size())
                                    ? all_neg[i]->second
                                    : all_neg[pick_neg(rng)]->second;
                batch.insert(batch.end(), f.begin(), f.end());
                labels.push_back(1);
            }

            classifier_step(cls, Tensor::from(rows, d, std::move(batch)), labels, cls_adam);
            stats.cls_steps += 1;
            stats.real_pos_used += cfg.base_pos;
            stats.halluc_used += h;
            stats.neg_used += cfg.base_neg;

            if (cfg.update_ah && h > 0) {
                std::vector<float> xb1;
                xb1.reserve(static_cast<size_t>(h) * d);
                for (int i = 0; i < h; ++i)
                    xb1.insert(xb1.end(), video.exemplar.begin(), video.exemplar.end());
                generator_step(g, disc, Tensor::from(h, d, std::move(xa1)),
                               Tensor::from(h, d, std::move(xa2)),
                               Tensor::from(h, d, std::move(xb1)), cfg.lambda_def, g_adam);
                stats.g_steps += 1;
            }
        }
    }
};

}  // namespace

TrackResult track_video(const SimVideo& video, const InstanceStore& store,
                        const std::vector<PairSample>& dt, const SnippetIndex* index,
                        HallucinatorModel& g, const DiscriminatorModel& disc,
                        ClassifierHead& cls, const TrackConfig& cfg) {
    if (video.frames.empty()) throw ContractError("track_video: empty video");
    std::mt19937_64 rng(cfg.seed);

    std::vector<PairSample> ds;
    const std::vector<PairSample>* pool = &dt;
    if (cfg.sdt_on && hallucinated_count(cfg.ratio, cfg.base_pos) > 0) {
        if (index == nullptr)
            throw ContractError("track_video: SDT enabled but no snippet index given");
        const size_t t = std::min(cfg.top_t, index->size());
        auto ranked = rank_snippets(*index, video.exemplar_semantic, t);
        std::vector<uint32_t> ids;
        for (const RankedSnippet& r : ranked) ids.push_back(r.id);
        try {
            ds = assemble_ds(store, ids, 20, cfg.pool_budget, mix_seed(cfg.seed, 17, 0));
        } catch (const ContractError&) {
            throw ContractError(
                "track_video: selected snippets yield no transfer pairs; "
                "lower T or disable SDT");
        }
        pool = &ds;
    }

    TrackResult result;
    OnlineTrainer trainer(video, store, *pool, g, disc, cls, cfg, rng, result);
    trainer.push_frame(video.frames[0]);
    trainer.train(cfg.n1);

    for (size_t t = 1; t < video.frames.size(); ++t) {
        const SimFrame& frame = video.frames[t];
        size_t chosen = 0;
        switch (cfg.policy) {
            case DetectPolicy::Learned: chosen = detect(cls, frame.candidates); break;
            case DetectPolicy::OracleDistance: {
                double best = frame.candidates[0].latent_dist;
                for (size_t i = 1; i < frame.candidates.size(); ++i)
                    if (frame.candidates[i].latent_dist < best) {
                        best = frame.candidates[i].latent_dist;
                        chosen = i;
                    }
                break;
            }
            case DetectPolicy::Random: {
                std::uniform_int_distribution<size_t> pick(0, frame.candidates.size() - 1);
                chosen = pick(rng);
                break;
            }
        }
        result.chosen.push_back(chosen);
        result.success.push_back(frame.candidates[chosen].latent_dist <= video.rho_pos);
        trainer.push_frame(frame);
        trainer.train(cfg.n2);
    }
    result.success_rate =
        result.success.empty()
            ? 0.0
            : std::accumulate(result.success.begin(), result.success.end(), 0.0) /
                  static_cast<double>(result.success.size());
    return result;
}

// --- ablation harness ---------------------------------------------------

namespace {

struct Variant {
    std::string name;
    Ratio ratio;
    bool sdt, update_ah;
};

std::vector<Variant> variant_grid() {
    std::vector<Variant> v;
    v.push_back({"base_r13", Ratio::R13, false, false});
    for (Ratio r : {Ratio::R23, Ratio::R11})
        for (bool sdt : {false, true})
            for (bool ah : {false, true}) {
                std::string name = std::string("hat_r") + (r == Ratio::R23 ? "23" : "11") +
                                   (sdt ? "_sdt" : "") + (ah ? "_up" : "");
                v.push_back({name, r, sdt, ah});
            }
    return v;
}

}  // namespace

std::string AblationTable::cells_csv() const {
    std::ostringstream os;
    os << "variant,r,sdt,update_ah,seed,video_id,success_rate\n";
    for (const AblationCell& c : cells) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.9g", c.success_rate);
        os << c.variant << ',' << ratio_str(c.ratio) << ',' << (c.sdt ? 1 : 0) << ','
           << (c.update_ah ? 1 : 0) << ',' << c.seed << ',' << c.video_id << ',' << buf << '\n';
    }
    return os.str();
}

std::string AblationTable::agg_csv() const {
    std::ostringstream os;
    os << "variant,r,sdt,update_ah,mean,std\n";
    for (const AblationAgg& a : agg) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.9g,%.9g", a.mean, a.stddev);
        os << a.variant << ',' << ratio_str(a.ratio) << ',' << (a.sdt ? 1 : 0) << ','
           << (a.update_ah ? 1 : 0) << ',' << buf << '\n';
    }
    return os.str();
}

AblationTable run_ablation(const SyntheticWorld& world, const InstanceStore& store,
                           const std::vector<PairSample>& dt, const SnippetIndex& index,
                           const HallucinatorModel& g0, const DiscriminatorModel& d0,
                           const AblationConfig& cfg, std::ostream* progress) {
    if (cfg.n_seeds < 5) throw ContractError("run_ablation: need at least 5 seeds");
    const auto variants = variant_grid();
    AblationTable table;

    // (seed, video) cells are independent; run them on a thread pool and merge
    // results in deterministic cell order afterwards
    const int n_cells = cfg.n_seeds * cfg.n_videos;
    std::vector<double> rates(static_cast<size_t>(n_cells) * variants.size());
    std::atomic<int> next{0}, done{0};
    std::mutex progress_mu;
    auto worker = [&] {
        for (int cell = next.fetch_add(1); cell < n_cells; cell = next.fetch_add(1)) {
            const int s = cell / cfg.n_videos;
            const int v = cell % cfg.n_videos;
            const uint64_t cell_seed = mix_seed(cfg.suite_seed, static_cast<uint64_t>(s),
                                                static_cast<uint64_t>(v));
            const uint32_t identity =
                static_cast<uint32_t>(v % world.config().n_identities);
            const SimVideo video = gen_sim_video(world, identity, cfg.video, cell_seed);
            const uint64_t cls_seed = mix_seed(cell_seed, 999, 0);

            for (size_t vi = 0; vi < variants.size(); ++vi) {
                const Variant& var = variants[vi];
                TrackConfig tc = cfg.track;
                tc.ratio = var.ratio;
                tc.sdt_on = var.sdt;
                tc.update_ah = var.update_ah;
                tc.seed = cell_seed;
                HallucinatorModel g = g0;
                ClassifierHead cls =
                    ClassifierHead::create(store.feat_dim, cls_seed, cfg.cls_h1, cfg.cls_h2);
                TrackResult r = track_video(video, store, dt, &index, g, d0, cls, tc);
                rates[static_cast<size_t>(cell) * variants.size() + vi] = r.success_rate;
            }
            if (progress) {
                std::lock_guard<std::mutex> lock(progress_mu);
                (*progress) << "ablation: cell " << done.fetch_add(1) + 1 << "/" << n_cells
                            << "\n";
            }
        }
    };
    const unsigned n_threads =
        std::max(1u, std::min(std::thread::hardware_concurrency(),
                              static_cast<unsigned>(n_cells)));
    std::vector<std::thread> threads;
    for (unsigned t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();

    for (int cell = 0; cell < n_cells; ++cell)
        for (size_t vi = 0; vi < variants.size(); ++vi)
            table.cells.push_back({variants[vi].name, variants[vi].ratio, variants[vi].sdt,
                                   variants[vi].update_ah,
                                   static_cast<uint64_t>(cell / cfg.n_videos),
                                   cell % cfg.n_videos,
                                   rates[static_cast<size_t>(cell) * variants.size() + vi]});

    for (const Variant& var : variants) {
        double sum = 0, sum2 = 0;
        int n = 0;
        for (const AblationCell& c : table.cells)
            if (c.variant == var.name) {
                sum += c.success_rate;
                sum2 += c.success_rate * c.success_rate;
                ++n;
            }
        const double mean = sum / n;
        const double var_ = n > 1 ? std::max(0.0, (sum2 - n * mean * mean) / (n - 1)) : 0.0;
        table.agg.push_back({var.name, var.ratio, var.sdt, var.update_ah, mean, std::sqrt(var_)});
    }
    return table;
}

}  // namespace hat

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "hat/hallucinator.hpp"
#include "hat/sdt.hpp"
#include "hat/tracker.hpp"

namespace fs = std::filesystem;
using namespace hat;

namespace {

// Plain-text key=value config ('#' starts a comment). Every value actually
// used is recorded so the resolved config can be written next to the outputs.
class Config {
public:
    Config() = default;

    explicit Config(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open config file " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            if (trim(line).empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw IoError("config line " + std::to_string(lineno) + ": expected key=value");
            raw_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
    }

    std::string get_str(const std::string& key, const std::string& def) {
        const auto it = raw_.find(key);
        const std::string v = it == raw_.end() ? def : it->second;
        resolved_[key] = v;
        return v;
    }

    double get_num(const std::string& key, double def) {
        const auto it = raw_.find(key);
        if (it == raw_.end()) {
            std::ostringstream os;
            os << def;
            resolved_[key] = os.str();
            return def;
        }
        resolved_[key] = it->second;
        try {
            return std::stod(it->second);
        } catch (const std::exception&) {
            throw IoError("config key " + key + ": not a number: " + it->second);
        }
    }

    long long get_int(const std::string& key, long long def) {
        return static_cast<long long>(get_num(key, static_cast<double>(def)));
    }

    void note(const std::string& key, const std::string& value) { resolved_[key] = value; }

    void write_resolved(const std::string& path) const {
        std::ofstream os(path, std::ios::trunc);
        for (const auto& [k, v] : resolved_) os << k << " = " << v << "\n";
    }

private:
    std::map<std::string, std::string> raw_;
    std::map<std::string, std::string> resolved_;  // sorted, deterministic
};

WorldConfig world_from(Config& cfg) {
    WorldConfig w;
    w.latent_dim = static_cast<int>(cfg.get_int("world.latent_dim", w.latent_dim));
    w.feat_dim = static_cast<int>(cfg.get_int("world.feat_dim", w.feat_dim));
    w.sem_dim = static_cast<int>(cfg.get_int("world.sem_dim", w.sem_dim));
    w.n_identities = static_cast<int>(cfg.get_int("world.n_identities", w.n_identities));
    w.n_clusters = static_cast<int>(cfg.get_int("world.n_clusters", w.n_clusters));
    w.frames_per_snippet =
        static_cast<int>(cfg.get_int("world.frames_per_snippet", w.frames_per_snippet));
    w.cluster_center_scale = cfg.get_num("world.cluster_center_scale", w.cluster_center_scale);
    w.cluster_spread = cfg.get_num("world.cluster_spread", w.cluster_spread);
    w.max_translation = cfg.get_num("world.max_translation", w.max_translation);
    w.max_angle = cfg.get_num("world.max_angle", w.max_angle);
    w.max_log_scale = cfg.get_num("world.max_log_scale", w.max_log_scale);
    w.direction_noise = cfg.get_num("world.direction_noise", w.direction_noise);
    w.sem_latent_weight = cfg.get_num("world.sem_latent_weight", w.sem_latent_weight);
    const std::string fam = cfg.get_str("world.families", "translation,rotation,scaling,composite");
    w.families.clear();
    std::stringstream ss(fam);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok == "translation") w.families.push_back(DeformFamily::Translation);
        else if (tok == "rotation") w.families.push_back(DeformFamily::Rotation);
        else if (tok == "scaling") w.families.push_back(DeformFamily::Scaling);
        else if (tok == "composite") w.families.push_back(DeformFamily::Composite);
        else throw IoError("world.families: unknown family '" + tok + "'");
    }
    return w;
}

SimVideoConfig video_from(Config& cfg) {
    SimVideoConfig v;
    v.n_frames = static_cast<int>(cfg.get_int("video.n_frames", v.n_frames));
    v.n_candidates = static_cast<int>(cfg.get_int("video.n_candidates", v.n_candidates));
    v.n_near = static_cast<int>(cfg.get_int("video.n_near", v.n_near));
    v.rho_pos = cfg.get_num("video.rho_pos", v.rho_pos);
    v.rho_neg = cfg.get_num("video.rho_neg", v.rho_neg);
    v.step = cfg.get_num("video.step", v.step);
    v.travel_limit = cfg.get_num("video.travel_limit", v.travel_limit);
    v.wobble = cfg.get_num("video.wobble", v.wobble);
    v.pos_jitter = cfg.get_num("video.pos_jitter", v.pos_jitter);
    v.neg_jitter = cfg.get_num("video.neg_jitter", v.neg_jitter);
    v.init_tightness = cfg.get_num("video.init_tightness", v.init_tightness);
    return v;
}

Ratio ratio_from(const std::string& s) {
    if (s == "1/3") return Ratio::R13;
    if (s == "2/3") return Ratio::R23;
    if (s == "1/1") return Ratio::R11;
    throw IoError("track.ratio: expected 1/3, 2/3 or 1/1, got '" + s + "'");
}

TrackConfig track_from(Config& cfg) {
    TrackConfig t;
    t.ratio = ratio_from(cfg.get_str("track.ratio", "1/3"));
    t.base_pos = static_cast<int>(cfg.get_int("track.base_pos", t.base_pos));
    t.base_neg = static_cast<int>(cfg.get_int("track.base_neg", t.base_neg));
    t.n1 = static_cast<int>(cfg.get_int("track.n1", t.n1));
    t.n2 = static_cast<int>(cfg.get_int("track.n2", t.n2));
    t.online_lr = cfg.get_num("track.online_lr", t.online_lr);
    t.lambda_def = cfg.get_num("track.lambda_def", t.lambda_def);
    t.sdt_on = cfg.get_int("track.sdt", 0) != 0;
    t.top_t = static_cast<size_t>(cfg.get_int("track.top_t", 2000));
    t.update_ah = cfg.get_int("track.update_ah", 0) != 0;
    t.recent_frames = static_cast<int>(cfg.get_int("track.recent_frames", t.recent_frames));
    t.pool_budget = static_cast<size_t>(cfg.get_int("track.pool_budget", 10000));
    t.seed = static_cast<uint64_t>(cfg.get_int("track.seed", 0));
    return t;
}

TrainConfig offline_from(Config& cfg, int feat_dim) {
    TrainConfig t;
    t.iterations = cfg.get_int("offline.iters", 0);
    t.lambda_def = cfg.get_num("offline.lambda_def", 0.5);
    t.lambda_gp = cfg.get_num("offline.lambda_gp", 10.0);
    t.lr = cfg.get_num("offline.lr", 2e-4);
    t.batch = static_cast<int>(cfg.get_int("offline.batch", 32));
    t.seed = static_cast<uint64_t>(cfg.get_int("offline.seed", 0));
    t.code_dim = static_cast<int>(cfg.get_int("offline.code_dim", 64));
    t.hidden = static_cast<int>(cfg.get_int("offline.hidden", 2048));
    t.log_interval = static_cast<int>(cfg.get_int("offline.log_interval", 50));
    t.feat_dim = feat_dim;
    return t;
}

void write_text(const fs::path& path, const std::string& body) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << body;
}

int cmd_synth_gen(const std::string& config_path, const std::string& out_dir,
                  long long seed_override) {
    Config cfg = config_path.empty() ? Config() : Config(config_path);
    WorldConfig wc = world_from(cfg);
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("world.seed", 0));
    if (seed_override >= 0) {
        seed = static_cast<uint64_t>(seed_override);
        cfg.note("world.seed", std::to_string(seed));
    }
    fs::create_directories(out_dir);
    auto [world, store] = gen_world(wc, seed);
    const fs::path out(out_dir);
    write_features(store, (out / "features_phi.bin").string(), FeatureSpace::Phi);
    write_features(store, (out / "features_sem.bin").string(), FeatureSpace::Varphi);
    write_manifest((out / "manifest.txt").string(),
                   {{"instances", std::to_string(store.items.size())},
                    {"identities", std::to_string(wc.n_identities)},
                    {"feat_dim", std::to_string(wc.feat_dim)},
                    {"sem_dim", std::to_string(wc.sem_dim)},
                    {"seed", std::to_string(seed)}});
    cfg.write_resolved((out / "config.resolved.txt").string());
    std::cerr << "wrote " << store.items.size() << " instances to " << out_dir << "\n";
    return 0;
}

int cmd_train_ah(const std::string& features, const std::string& out_dir, long long iters,
                 double lambda_def, double lr, long long seed, long long code_dim,
                 long long hidden, long long batch, long long log_interval,
                 long long window) {
    InstanceStore store = read_features(features, FeatureSpace::Phi);
    auto dt = build_dt(store, static_cast<uint32_t>(window));
    auto sampler = make_quadruplet_sampler(store, dt);
    TrainConfig tc;
    tc.iterations = iters;
    tc.lambda_def = lambda_def;
    tc.lr = lr;
    tc.seed = static_cast<uint64_t>(seed);
    tc.feat_dim = store.feat_dim;
    tc.code_dim = static_cast<int>(code_dim);
    tc.hidden = static_cast<int>(hidden);
    tc.batch = static_cast<int>(batch);
    tc.log_interval = static_cast<int>(log_interval);

    fs::create_directories(out_dir);
    auto [g, d, report] = train_offline(sampler, tc);
    const fs::path out(out_dir);
    save_model(g, (out / "ah.model").string());
    save_model(d, (out / "disc.model").string());
    report.write_csv((out / "report.csv").string());
    Config resolved;
    resolved.note("offline.iters", std::to_string(iters));
    resolved.note("offline.lambda_def", std::to_string(lambda_def));
    resolved.note("offline.lr", std::to_string(lr));
    resolved.note("offline.seed", std::to_string(seed));
    resolved.note("offline.code_dim", std::to_string(code_dim));
    resolved.note("offline.hidden", std::to_string(hidden));
    resolved.note("offline.batch", std::to_string(batch));
    resolved.note("offline.log_interval", std::to_string(log_interval));
    resolved.note("offline.window", std::to_string(window));
    resolved.note("offline.feat_dim", std::to_string(store.feat_dim));
    resolved.write_resolved((out / "config.resolved.txt").string());
    return 0;
}

int cmd_sdt_index(const std::string& sem_features, const std::string& out_path) {
    InstanceStore store = read_features(sem_features, FeatureSpace::Varphi);
    SnippetIndex index = build_index(store);
    save_index(index, out_path);
    std::cerr << "indexed " << index.size() << " snippets, dim " << index.sem_dim << "\n";
    return 0;
}

int cmd_sdt_query(const std::string& index_path, const std::string& sem_features,
                  long long exemplar_row, long long top, const std::string& out_path) {
    SnippetIndex index = load_index(index_path);
    InstanceStore store = read_features(sem_features, FeatureSpace::Varphi);
    if (exemplar_row < 0 || exemplar_row >= static_cast<long long>(store.items.size()))
        throw ContractError("exemplar row " + std::to_string(exemplar_row) +
                            " out of range (file has " + std::to_string(store.items.size()) +
                            " instances)");
    if (top > static_cast<long long>(index.size()))
        throw ContractError("top T=" + std::to_string(top) + " exceeds snippet count N=" +
                            std::to_string(index.size()));
    const std::vector<float>& exemplar = store.items[exemplar_row].semantic;
    const double secs = query_timing(index, exemplar, static_cast<size_t>(top));
    auto ranked = rank_snippets(index, exemplar, static_cast<size_t>(top));
    std::ostringstream os;
    os << "rank,id,distance\n";
    for (size_t i = 0; i < ranked.size(); ++i) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "%.9g", ranked[i].distance);
        os << i + 1 << ',' << ranked[i].id << ',' << buf << '\n';
    }
    if (out_path.empty())
        std::cout << os.str();
    else
        write_text(out_path, os.str());
    std::cerr << "query time: " << secs << " s\n";
    return 0;
}

struct Pipeline {
    SyntheticWorld world;
    InstanceStore store;
    std::vector<PairSample> dt;
    SnippetIndex index;
    HallucinatorModel g;
    DiscriminatorModel d;
};

Pipeline build_pipeline(Config& cfg) {
    WorldConfig wc = world_from(cfg);
    const uint64_t world_seed = static_cast<uint64_t>(cfg.get_int("world.seed", 0));
    auto [world, store] = gen_world(wc, world_seed);
    auto dt = build_dt(store, 20);
    auto index = build_index(store);
    TrainConfig oc = offline_from(cfg, store.feat_dim);
    auto sampler = make_quadruplet_sampler(store, dt);
    auto [g, d, report] = train_offline(sampler, oc);
    return Pipeline{std::move(world), std::move(store), std::move(dt), std::move(index),
                    std::move(g), std::move(d)};
}

int cmd_track(const std::string& config_path, const std::string& out_dir) {
    Config cfg = config_path.empty() ? Config() : Config(config_path);
    Pipeline p = build_pipeline(cfg);
    SimVideoConfig vc = video_from(cfg);
    TrackConfig tc = track_from(cfg);
    const uint32_t identity = static_cast<uint32_t>(cfg.get_int("track.video_identity", 0));
    const uint64_t video_seed = static_cast<uint64_t>(cfg.get_int("track.video_seed", 1));
    const int h1 = static_cast<int>(cfg.get_int("track.cls_h1", 512));
    const int h2 = static_cast<int>(cfg.get_int("track.cls_h2", 512));
    const uint64_t cls_seed = static_cast<uint64_t>(cfg.get_int("track.cls_seed", 2));

    SimVideo video = gen_sim_video(p.world, identity, vc, video_seed);
    ClassifierHead cls = ClassifierHead::create(p.store.feat_dim, cls_seed, h1, h2);
    TrackResult r = track_video(video, p.store, p.dt, &p.index, p.g, p.d, cls, tc);

    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    std::ostringstream frames;
    frames << "frame,chosen,success\n";
    for (size_t t = 0; t < r.chosen.size(); ++t)
        frames << t + 1 << ',' << r.chosen[t] << ',' << int(r.success[t]) << '\n';
    write_text(out / "frames.csv", frames.str());
    std::ostringstream summary;
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", r.success_rate);
    summary << "success_rate,real_pos,halluc,neg,cls_steps,g_steps\n"
            << buf << ',' << r.real_pos_used << ',' << r.halluc_used << ',' << r.neg_used
            << ',' << r.cls_steps << ',' << r.g_steps << '\n';
    write_text(out / "summary.csv", summary.str());
    cfg.write_resolved((out / "config.resolved.txt").string());
    std::cerr << "success rate: " << r.success_rate << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir) {
    Config cfg = config_path.empty() ? Config() : Config(config_path);
    Pipeline p = build_pipeline(cfg);
    AblationConfig ac;
    ac.video = video_from(cfg);
    ac.track = track_from(cfg);
    ac.n_seeds = static_cast<int>(cfg.get_int("ablate.n_seeds", 5));
    ac.n_videos = static_cast<int>(cfg.get_int("ablate.n_videos", 20));
    ac.suite_seed = static_cast<uint64_t>(cfg.get_int("ablate.suite_seed", 0));
    ac.cls_h1 = static_cast<int>(cfg.get_int("track.cls_h1", 512));
    ac.cls_h2 = static_cast<int>(cfg.get_int("track.cls_h2", 512));

    AblationTable table = run_ablation(p.world, p.store, p.dt, p.index, p.g, p.d, ac, &std::cerr);
    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    write_text(out / "cells.csv", table.cells_csv());
    write_text(out / "aggregate.csv", table.agg_csv());
    cfg.write_resolved((out / "config.resolved.txt").string());
    return 0;
}

int cmd_audit(const std::string& model_path, const std::string& samples_path,
              const std::string& pool_path, long long count, long long exemplar_row,
              const std::string& out_path) {
    HallucinatorModel g = load_hallucinator(model_path);
    InstanceStore samples = read_features(samples_path, FeatureSpace::Phi);
    InstanceStore pool = read_features(pool_path, FeatureSpace::Phi);
    if (pool.items.empty()) throw ContractError("audit: empty pool");
    if (exemplar_row < 0 || exemplar_row >= static_cast<long long>(samples.items.size()))
        throw ContractError("audit: exemplar row out of range");

    auto dt = build_dt(samples, 20);
    if (dt.empty()) throw ContractError("audit: no transfer pairs in the samples file");
    std::vector<std::vector<float>> generated;
    const auto& exemplar = samples.items[exemplar_row].feature;
    for (size_t i = 0; i < dt.size() && static_cast<long long>(i) < count; ++i)
        generated.push_back(hallucinate(g, samples.items[dt[i].a].feature,
                                        samples.items[dt[i].b].feature, exemplar));
    std::vector<std::vector<float>> pool_feats;
    std::vector<uint32_t> pool_ids;
    for (size_t i = 0; i < pool.items.size(); ++i) {
        pool_feats.push_back(pool.items[i].feature);
        pool_ids.push_back(static_cast<uint32_t>(i));
    }
    auto audit = nearest_real_audit(generated, pool_feats, pool_ids);
    std::ostringstream os;
    os << "sample_index,pool_id,distance\n";
    for (const AuditEntry& e : audit) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "%.9g", e.distance);
        os << e.sample_index << ',' << e.pool_id << ',' << buf << '\n';
    }
    if (out_path.empty())
        std::cout << os.str();
    else
        write_text(out_path, os.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial hallucination tracking pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, out_path, features, sem_features, index_path;
    std::string model_path, samples_path, pool_path;
    long long seed = -1, iters = 1000, code_dim = 64, hidden = 2048, batch = 32;
    long long log_interval = 50, window = 20, top = 2000, exemplar_row = 0, count = 200;
    double lambda_def = 0.5, lr = 2e-4;

    auto* synth = app.add_subcommand("synth-gen", "generate a synthetic feature corpus");
    synth->add_option("--config", config_path);
    synth->add_option("--out", out_dir)->required();
    synth->add_option("--seed", seed);

    auto* train = app.add_subcommand("train-ah", "offline adversarial hallucinator training");
    train->add_option("--features", features)->required();
    train->add_option("--out", out_dir)->required();
    train->add_option("--iters", iters);
    train->add_option("--lambda-def", lambda_def);
    train->add_option("--lr", lr);
    train->add_option("--seed", seed);
    train->add_option("--code-dim", code_dim);
    train->add_option("--hidden", hidden);
    train->add_option("--batch", batch);
    train->add_option("--log-interval", log_interval);
    train->add_option("--window", window);

    auto* sindex = app.add_subcommand("sdt-index", "build the snippet descriptor index");
    sindex->add_option("--semantic-features", sem_features)->required();
    sindex->add_option("--out", out_path)->required();

    auto* squery = app.add_subcommand("sdt-query", "rank snippets for an exemplar");
    squery->add_option("--index", index_path)->required();
    squery->add_option("--semantic-features", sem_features)->required();
    squery->add_option("--exemplar", exemplar_row);
    squery->add_option("--top", top);
    squery->add_option("--out", out_path);

    auto* track = app.add_subcommand("track", "track one synthetic video");
    track->add_option("--config", config_path);
    track->add_option("--out-dir", out_dir)->required();

    auto* ablate = app.add_subcommand("ablate", "run the ablation grid");
    ablate->add_option("--config", config_path);
    ablate->add_option("--out-dir", out_dir)->required();

    auto* audit = app.add_subcommand("audit", "nearest real neighbors of hallucinated samples");
    audit->add_option("--model", model_path)->required();
    audit->add_option("--samples", samples_path)->required();
    audit->add_option("--pool", pool_path)->required();
    audit->add_option("--count", count);
    audit->add_option("--exemplar", exemplar_row);
    audit->add_option("--out", out_path);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth_gen(config_path, out_dir, seed);
        if (train->parsed())
            return cmd_train_ah(features, out_dir, iters, lambda_def, lr,
                                seed < 0 ? 0 : seed, code_dim, hidden, batch, log_interval,
                                window);
        if (sindex->parsed()) return cmd_sdt_index(sem_features, out_path);
        if (squery->parsed())
            return cmd_sdt_query(index_path, sem_features, exemplar_row, top, out_path);
        if (track->parsed()) return cmd_track(config_path, out_dir);
        if (ablate->parsed()) return cmd_ablate(config_path, out_dir);
        if (audit->parsed())
            return cmd_audit(model_path, samples_path, pool_path, count, exemplar_row, out_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

#include "hat/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>

#include "hat/binio.hpp"

namespace hat {

std::vector<SnippetRange> InstanceStore::snippets() const {
    std::vector<SnippetRange> out;
    size_t i = 0;
    while (i < items.size()) {
        size_t j = i;
        while (j < items.size() && items[j].identity == items[i].identity) ++j;
        out.push_back({items[i].identity, i, j});
        i = j;
    }
    return out;
}

void InstanceStore::sort_and_check() {
    std::stable_sort(items.begin(), items.end(), [](const Instance& a, const Instance& b) {
        return a.identity != b.identity ? a.identity < b.identity : a.frame < b.frame;
    });
    for (const Instance& it : items) {
        if (static_cast<int>(it.feature.size()) != feat_dim)
            throw ShapeError("InstanceStore: feature dim " + std::to_string(it.feature.size()) +
                             " != " + std::to_string(feat_dim));
        if (sem_dim > 0 && !it.semantic.empty() &&
            static_cast<int>(it.semantic.size()) != sem_dim)
            throw ShapeError("InstanceStore: semantic dim mismatch");
    }
}

std::vector<PairSample> build_dt(const InstanceStore& store, uint32_t window) {
    std::vector<PairSample> out;
    for (const SnippetRange& s : store.snippets()) {
        for (size_t i = s.begin; i < s.end; ++i) {
            for (size_t j = i + 1; j < s.end; ++j) {
                const uint32_t fi = store.items[i].frame;
                const uint32_t fj = store.items[j].frame;
                const uint32_t gap = fj >= fi ? fj - fi : fi - fj;
                if (gap <= window) out.push_back({s.identity, i, j});
            }
        }
    }
    return out;
}

namespace {

size_t count_identities(const std::vector<PairSample>& dt) {
    size_t n = 0;
    uint32_t last = 0;
    bool first = true;
    for (const PairSample& p : dt) {
        if (first || p.identity != last) {
            ++n;
            last = p.identity;
            first = false;
        }
    }
    return n;
}

}  // namespace

std::vector<QuadrupletSample> build_dq(const std::vector<PairSample>& dt,
                                       const InstanceStore& store, size_t count,
                                       uint64_t seed) {
    (void)store;
    if (count_identities(dt) < 2)
        throw ContractError("build_dq: need pairs from at least two identities");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<size_t> pick(0, dt.size() - 1);
    std::vector<QuadrupletSample> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        const size_t a = pick(rng);
        size_t b = pick(rng);
        while (dt[b].identity == dt[a].identity) b = pick(rng);
        out.push_back({a, b});
    }
    return out;
}

Quadruplet make_quadruplet(const InstanceStore& store, const std::vector<PairSample>& dt,
                           const QuadrupletSample& q) {
    const PairSample& pa = dt[q.pair_a];
    const PairSample& pb = dt[q.pair_b];
    Quadruplet out;
    out.xa1 = store.items[pa.a].feature;
    out.xa2 = store.items[pa.b].feature;
    out.xb1 = store.items[pb.a].feature;
    out.xb2 = store.items[pb.b].feature;
    out.identity_a = pa.identity;
    out.identity_b = pb.identity;
    return out;
}

QuadrupletSampler make_quadruplet_sampler(const InstanceStore& store,
                                          const std::vector<PairSample>& dt) {
    if (count_identities(dt) < 2)
        throw ContractError("quadruplet sampler: need pairs from at least two identities");
    // copies keep the sampler self-contained
    auto store_ptr = std::make_shared<InstanceStore>(store);
    auto dt_ptr = std::make_shared<std::vector<PairSample>>(dt);
    return [store_ptr, dt_ptr](std::mt19937_64& rng) {
        std::uniform_int_distribution<size_t> pick(0, dt_ptr->size() - 1);
        const size_t a = pick(rng);
        size_t b = pick(rng);
        while ((*dt_ptr)[b].identity == (*dt_ptr)[a].identity) b = pick(rng);
        return make_quadruplet(*store_ptr, *dt_ptr, {a, b});
    };
}

// --- feature files ------------------------------------------------------

void write_features(const InstanceStore& store, const std::string& path, FeatureSpace space) {
    auto os = binio::open_out(path);
    binio::write_bytes(os, "HATF", 4);
    binio::write_u16(os, kFeatureVersion);
    binio::write_u8(os, static_cast<uint8_t>(space));
    const int dim = space == FeatureSpace::Phi ? store.feat_dim : store.sem_dim;
    if (dim <= 0) throw ContractError("write_features: requested space has no vectors");
    binio::write_u32(os, static_cast<uint32_t>(dim));
    binio::write_u32(os, static_cast<uint32_t>(store.items.size()));
    for (const Instance& it : store.items) {
        const std::vector<float>& v = space == FeatureSpace::Phi ? it.feature : it.semantic;
        if (static_cast<int>(v.size()) != dim)
            throw ShapeError("write_features: instance vector dim mismatch");
        binio::write_u32(os, it.identity);
        binio::write_u32(os, it.frame);
        binio::write_f32(os, v.data(), v.size());
    }
}

InstanceStore read_features(const std::string& path, FeatureSpace expect) {
    auto is = binio::open_in(path);
    binio::check_magic(is, "HATF", path);
    const uint16_t ver = binio::read_u16(is, "version of " + path);
    if (ver != kFeatureVersion)
        throw VersionError("unsupported feature file version " + std::to_string(ver) + " in " +
                           path);
    const uint8_t tag = binio::read_u8(is, "space tag of " + path);
    if (tag != static_cast<uint8_t>(expect))
        throw IoError("feature space tag mismatch in " + path + ": expected " +
                      std::to_string(static_cast<int>(expect)) + ", got " + std::to_string(tag));
    const uint32_t dim = binio::read_u32(is, "dim of " + path);
    const uint32_t count = binio::read_u32(is, "count of " + path);
    if (dim == 0 || dim > (1u << 24))
        throw ShapeError("feature file " + path + ": implausible dim " + std::to_string(dim));
    InstanceStore store;
    if (expect == FeatureSpace::Phi)
        store.feat_dim = static_cast<int>(dim);
    else
        store.sem_dim = static_cast<int>(dim);
    store.items.resize(count);
    for (uint32_t i = 0; i < count; ++i) {
        Instance& it = store.items[i];
        it.identity = binio::read_u32(is, "record identity");
        it.frame = binio::read_u32(is, "record frame");
        std::vector<float>& v = expect == FeatureSpace::Phi ? it.feature : it.semantic;
        v.resize(dim);
        binio::read_f32(is, v.data(), dim, "record data");
        for (float x : v)
            if (!std::isfinite(x))
                throw NumericError("feature file " + path + ": non-finite value in record " +
                                   std::to_string(i));
    }
    binio::check_eof(is, path);
    store.sort_and_check();
    return store;
}

void attach_semantic(InstanceStore& store, const std::string& path) {
    InstanceStore sem = read_features(path, FeatureSpace::Varphi);
    std::map<std::pair<uint32_t, uint32_t>, const Instance*> lookup;
    for (const Instance& it : sem.items) lookup[{it.identity, it.frame}] = &it;
    for (Instance& it : store.items) {
        auto found = lookup.find({it.identity, it.frame});
        if (found == lookup.end())
            throw ContractError("attach_semantic: no semantic vector for identity " +
                                std::to_string(it.identity) + " frame " +
                                std::to_string(it.frame));
        it.semantic = found->second->semantic;
    }
    store.sem_dim = sem.sem_dim;
}

void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& kv) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
}

// --- synthetic world ----------------------------------------------------

namespace {

double softplus(double x) {
    // numerically stable log(1 + e^x)
    return x > 30.0 ? x : std::log1p(std::exp(x));
}

std::vector<double> random_matrix(size_t n, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> out(n);
    for (double& v : out) v = d(rng);
    return out;
}

std::vector<double> unit_vector(int dim, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(dim);
    double norm = 0;
    do {
        norm = 0;
        for (double& x : v) {
            x = d(rng);
            norm += x * x;
        }
        norm = std::sqrt(norm);
    } while (norm < 1e-9);
    for (double& x : v) x /= norm;
    return v;
}

// y = softplus(A x + c + bias), A is [out x in] row-major
void affine_softplus(std::span<const double> a, std::span<const double> c,
                     std::span<const double> x, double bias, std::vector<double>& y) {
    const size_t out = c.size();
    const size_t in = x.size();
    y.assign(out, 0.0);
    for (size_t i = 0; i < out; ++i) {
        double acc = c[i] + bias;
        const double* row = a.data() + i * in;
        for (size_t j = 0; j < in; ++j) acc += row[j] * x[j];
        y[i] = softplus(acc);
    }
}

}  // namespace

SyntheticWorld::SyntheticWorld(WorldConfig cfg, uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    if (cfg_.latent_dim < 2) throw ContractError("SyntheticWorld: latent_dim must be >= 2");
    if (cfg_.feat_dim < cfg_.latent_dim)
        throw ContractError("SyntheticWorld: feat_dim must be >= latent_dim");
    if (cfg_.n_clusters < 1 || cfg_.n_identities < 1 || cfg_.sem_dim < 1)
        throw ContractError("SyntheticWorld: invalid counts");
    if (cfg_.families.empty()) throw ContractError("SyntheticWorld: no deformation families");

    std::mt19937_64 rng(seed);
    const int k = cfg_.latent_dim;

    // fixed nonlinear maps
    f_a1_ = random_matrix(static_cast<size_t>(cfg_.feat_dim) * k, 1.0 / std::sqrt(double(k)), rng);
    f_c1_ = random_matrix(cfg_.feat_dim, 0.1, rng);
    f_a2_ = random_matrix(static_cast<size_t>(cfg_.feat_dim) * cfg_.feat_dim,
                          1.0 / std::sqrt(double(cfg_.feat_dim)), rng);
    f_c2_ = random_matrix(cfg_.feat_dim, 0.1, rng);
    s_center_ = random_matrix(static_cast<size_t>(cfg_.sem_dim) * k, 1.0 / std::sqrt(double(k)), rng);
    s_latent_ = random_matrix(static_cast<size_t>(cfg_.sem_dim) * k, 1.0 / std::sqrt(double(k)), rng);

    std::normal_distribution<double> gauss(0.0, 1.0);
    centers_.resize(cfg_.n_clusters);
    cluster_dirs_.resize(cfg_.n_clusters);
    for (int c = 0; c < cfg_.n_clusters; ++c) {
        centers_[c].resize(k);
        for (double& v : centers_[c]) v = cfg_.cluster_center_scale * gauss(rng);
        cluster_dirs_[c] = unit_vector(k, rng);
    }

    std::uniform_real_distribution<double> mag(0.5, 1.0);
    identities_.resize(cfg_.n_identities);
    for (int i = 0; i < cfg_.n_identities; ++i) {
        IdentityInfo& id = identities_[i];
        id.cluster = i % cfg_.n_clusters;
        id.anchor.resize(k);
        for (int j = 0; j < k; ++j)
            id.anchor[j] = centers_[id.cluster][j] + cfg_.cluster_spread * gauss(rng);
        id.family = cfg_.families[i % cfg_.families.size()];
        // deformation direction follows the cluster's characteristic direction
        std::vector<double> dir(k);
        double norm = 0;
        for (int j = 0; j < k; ++j) {
            dir[j] = cluster_dirs_[id.cluster][j] + cfg_.direction_noise * gauss(rng);
            norm += dir[j] * dir[j];
        }
        norm = std::sqrt(norm);
        for (double& v : dir) v /= norm;
        id.direction = std::move(dir);
        std::uniform_int_distribution<int> ax(0, k - 1);
        id.axis_p = ax(rng);
        do {
            id.axis_q = ax(rng);
        } while (id.axis_q == id.axis_p);
        id.max_angle = mag(rng) * cfg_.max_angle;
        id.max_log_scale = mag(rng) * cfg_.max_log_scale;
        id.max_translation = mag(rng) * cfg_.max_translation;
    }
}

std::vector<float> SyntheticWorld::feature(std::span<const double> latent) const {
    if (static_cast<int>(latent.size()) != cfg_.latent_dim)
        throw ShapeError("SyntheticWorld::feature: latent dim mismatch");
    std::vector<double> h, o;
    affine_softplus(f_a1_, f_c1_, latent, cfg_.feat_bias, h);
    affine_softplus(f_a2_, f_c2_, h, cfg_.feat_bias, o);
    std::vector<float> out(o.size());
    for (size_t i = 0; i < o.size(); ++i) out[i] = static_cast<float>(o[i]);
    return out;
}

std::vector<float> SyntheticWorld::semantic(int cluster, std::span<const double> latent) const {
    if (cluster < 0 || cluster >= cfg_.n_clusters)
        throw ContractError("SyntheticWorld::semantic: bad cluster");
    const int k = cfg_.latent_dim;
    std::vector<float> out(cfg_.sem_dim);
    for (int i = 0; i < cfg_.sem_dim; ++i) {
        double acc = 0;
        for (int j = 0; j < k; ++j) {
            acc += s_center_[static_cast<size_t>(i) * k + j] * centers_[cluster][j];
            acc += cfg_.sem_latent_weight * s_latent_[static_cast<size_t>(i) * k + j] * latent[j];
        }
        out[i] = static_cast<float>(softplus(acc));
    }
    return out;
}

std::vector<double> SyntheticWorld::apply(const DeformParams& p,
                                          std::span<const double> v) const {
    const int k = cfg_.latent_dim;
    if (static_cast<int>(v.size()) != k)
        throw ShapeError("SyntheticWorld::apply: latent dim mismatch");
    std::vector<double> out(v.begin(), v.end());
    switch (p.family) {
        case DeformFamily::Translation:
            if (static_cast<int>(p.delta.size()) != k)
                throw ShapeError("apply: translation delta dim mismatch");
            for (int j = 0; j < k; ++j) out[j] += p.delta[j];
            break;
        case DeformFamily::Rotation: {
            if (p.axis_p < 0 || p.axis_p >= k || p.axis_q < 0 || p.axis_q >= k ||
                p.axis_p == p.axis_q)
                throw ContractError("apply: bad rotation plane");
            const double c = std::cos(p.angle), s = std::sin(p.angle);
            const double a = out[p.axis_p], b = out[p.axis_q];
            out[p.axis_p] = c * a - s * b;
            out[p.axis_q] = s * a + c * b;
            break;
        }
        case DeformFamily::Scaling: {
            const double s = std::exp(p.log_scale);
            for (double& x : out) x *= s;
            break;
        }
        case DeformFamily::Composite: {
            DeformParams rot = p;
            rot.family = DeformFamily::Rotation;
            out = apply(rot, out);
            if (static_cast<int>(p.delta.size()) != k)
                throw ShapeError("apply: composite delta dim mismatch");
            for (int j = 0; j < k; ++j) out[j] += p.delta[j];
            break;
        }
        default:
            throw ContractError("apply: unknown deformation family");
    }
    return out;
}

std::vector<float> SyntheticWorld::oracle_transfer(const DeformParams& p,
                                                   std::span<const double> v) const {
    return feature(apply(p, v));
}

int SyntheticWorld::cluster_of(uint32_t identity) const {
    return identities_.at(identity).cluster;
}

const std::vector<double>& SyntheticWorld::anchor(uint32_t identity) const {
    return identities_.at(identity).anchor;
}

const std::vector<double>& SyntheticWorld::cluster_direction(int cluster) const {
    return cluster_dirs_.at(cluster);
}

DeformFamily SyntheticWorld::family_of(uint32_t identity) const {
    return identities_.at(identity).family;
}

DeformParams SyntheticWorld::frame_deform(uint32_t identity, int frame) const {
    const IdentityInfo& id = identities_.at(identity);
    const int L = cfg_.frames_per_snippet;
    const double t = L > 1 ? static_cast<double>(frame) / (L - 1) : 0.0;
    DeformParams p;
    p.family = id.family;
    p.axis_p = id.axis_p;
    p.axis_q = id.axis_q;
    switch (id.family) {
        case DeformFamily::Translation: {
            p.delta.resize(cfg_.latent_dim);
            for (int j = 0; j < cfg_.latent_dim; ++j)
                p.delta[j] = t * id.max_translation * id.direction[j];
            break;
        }
        case DeformFamily::Rotation:
            p.angle = t * id.max_angle;
            break;
        case DeformFamily::Scaling:
            p.log_scale = t * id.max_log_scale;
            break;
        case DeformFamily::Composite: {
            p.angle = t * id.max_angle * 0.5;
            p.delta.resize(cfg_.latent_dim);
            for (int j = 0; j < cfg_.latent_dim; ++j)
                p.delta[j] = t * id.max_translation * 0.5 * id.direction[j];
            break;
        }
    }
    return p;
}

InstanceStore SyntheticWorld::make_store() const {
    InstanceStore store;
    store.feat_dim = cfg_.feat_dim;
    store.sem_dim = cfg_.sem_dim;
    store.items.reserve(static_cast<size_t>(cfg_.n_identities) * cfg_.frames_per_snippet);
    for (int i = 0; i < cfg_.n_identities; ++i) {
        for (int f = 0; f < cfg_.frames_per_snippet; ++f) {
            const DeformParams p = frame_deform(static_cast<uint32_t>(i), f);
            const std::vector<double> latent = apply(p, identities_[i].anchor);
            Instance inst;
            inst.identity = static_cast<uint32_t>(i);
            inst.frame = static_cast<uint32_t>(f);
            inst.feature = feature(latent);
            inst.semantic = semantic(identities_[i].cluster, latent);
            store.items.push_back(std::move(inst));
        }
    }
    return store;
}

GenWorldResult gen_world(const WorldConfig& cfg, uint64_t seed) {
    SyntheticWorld world(cfg, seed);
    InstanceStore store = world.make_store();
    return {std::move(world), std::move(store)};
}

}  // namespace hat

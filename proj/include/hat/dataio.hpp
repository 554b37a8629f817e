#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hat/hallucinator.hpp"
#include "hat/tensor.hpp"

namespace hat {

// One tracked instance. `feature` lives in the hallucination space (phi),
// `semantic` in the descriptor space (varphi); semantic may be empty.
struct Instance {
    uint32_t identity = 0;
    uint32_t frame = 0;
    std::vector<float> feature;
    std::vector<float> semantic;
};

struct SnippetRange {
    uint32_t identity;
    size_t begin, end;  // [begin, end) into items
};

struct InstanceStore {
    int feat_dim = 0;
    int sem_dim = 0;  // 0 when semantic vectors are absent
    std::vector<Instance> items;  // sorted by (identity, frame)

    std::vector<SnippetRange> snippets() const;
    void sort_and_check();
};

// Same-identity pair within the frame window; indices into store.items.
struct PairSample {
    uint32_t identity;
    size_t a, b;
};

// Indices into a D_T pair list; identities of the two pairs differ.
struct QuadrupletSample {
    size_t pair_a, pair_b;
};

// All same-identity pairs whose frame distance is within the window,
// deterministic order (identity ascending, then storage order).
std::vector<PairSample> build_dt(const InstanceStore& store, uint32_t window = 20);

std::vector<QuadrupletSample> build_dq(const std::vector<PairSample>& dt,
                                       const InstanceStore& store, size_t count,
                                       uint64_t seed);

Quadruplet make_quadruplet(const InstanceStore& store, const std::vector<PairSample>& dt,
                           const QuadrupletSample& q);

// Sampler over fresh quadruplets for offline training.
QuadrupletSampler make_quadruplet_sampler(const InstanceStore& store,
                                          const std::vector<PairSample>& dt);

// Feature file: magic "HATF", u16 version, u8 space tag (0=phi, 1=varphi),
// u32 dim, u32 count, then records (u32 identity, u32 frame, f32 data).
constexpr uint16_t kFeatureVersion = 1;
enum class FeatureSpace : uint8_t { Phi = 0, Varphi = 1 };

void write_features(const InstanceStore& store, const std::string& path, FeatureSpace space);
InstanceStore read_features(const std::string& path, FeatureSpace expect);
// attach varphi vectors from a second file, matched on (identity, frame)
void attach_semantic(InstanceStore& store, const std::string& path);

void write_manifest(const std::string& path, const std::vector<std::pair<std::string, std::string>>& kv);

// --- synthetic world ---------------------------------------------------

enum class DeformFamily : uint8_t { Translation = 0, Rotation = 1, Scaling = 2, Composite = 3 };

struct DeformParams {
    DeformFamily family = DeformFamily::Translation;
    std::vector<double> delta;  // translation component
    int axis_p = 0, axis_q = 1; // rotation plane
    double angle = 0.0;
    double log_scale = 0.0;
};

struct WorldConfig {
    int latent_dim = 8;
    int feat_dim = 128;
    int sem_dim = 64;
    int n_identities = 200;
    int n_clusters = 8;
    int frames_per_snippet = 24;
    double cluster_center_scale = 3.0;
    double cluster_spread = 0.5;
    double max_translation = 2.0;
    double max_angle = 1.5707963267948966;  // pi/2
    double max_log_scale = 0.4;
    double direction_noise = 0.2;
    double feat_bias = 0.0;  // shifts softplus pre-activations; larger = milder curvature
    double sem_latent_weight = 0.25;
    std::vector<DeformFamily> families = {DeformFamily::Translation, DeformFamily::Rotation,
                                          DeformFamily::Scaling, DeformFamily::Composite};
};

// Latent-space identity anchors drawn from a Gaussian mixture, per-identity
// parametric deformation trajectories, and fixed seeded nonlinear maps into
// feature and semantic space. Provides exact transfer oracles.
class SyntheticWorld {
public:
    SyntheticWorld(WorldConfig cfg, uint64_t seed);

    const WorldConfig& config() const { return cfg_; }
    uint64_t seed() const { return seed_; }

    std::vector<float> feature(std::span<const double> latent) const;
    std::vector<float> semantic(int cluster, std::span<const double> latent) const;

    std::vector<double> apply(const DeformParams& p, std::span<const double> v) const;
    std::vector<float> oracle_transfer(const DeformParams& p, std::span<const double> v) const;

    int cluster_of(uint32_t identity) const;
    const std::vector<double>& anchor(uint32_t identity) const;
    const std::vector<double>& cluster_direction(int cluster) const;
    DeformFamily family_of(uint32_t identity) const;
    // deformation applied to the anchor at the given frame (magnitude ramps
    // with the frame index, so frames are temporally coherent)
    DeformParams frame_deform(uint32_t identity, int frame) const;

    InstanceStore make_store() const;

private:
    struct IdentityInfo {
        int cluster;
        std::vector<double> anchor;
        DeformFamily family;
        std::vector<double> direction;  // unit, for translation/composite
        int axis_p, axis_q;
        double max_angle, max_log_scale, max_translation;
    };

    WorldConfig cfg_;
    uint64_t seed_;
    std::vector<std::vector<double>> centers_;
    std::vector<std::vector<double>> cluster_dirs_;
    std::vector<IdentityInfo> identities_;
    // feature map: two affine+softplus layers, k -> D -> D
    std::vector<double> f_a1_, f_c1_, f_a2_, f_c2_;
    // semantic map: softplus(S1 * center + w * S2 * latent)
    std::vector<double> s_center_, s_latent_;
};

struct GenWorldResult {
    SyntheticWorld world;
    InstanceStore store;
};

GenWorldResult gen_world(const WorldConfig& cfg, uint64_t seed);

}  // namespace hat

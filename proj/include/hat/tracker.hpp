#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hat/dataio.hpp"
#include "hat/sdt.hpp"

namespace hat {

// Positive-to-negative sample ratio; determines how many hallucinated
// positives join the 32 real ones (0, 32, or 64 at the default base count).
enum class Ratio : uint8_t { R13 = 0, R23 = 1, R11 = 2 };

int hallucinated_count(Ratio r, int base_pos);
std::string ratio_str(Ratio r);

enum class DetectPolicy : uint8_t { Learned = 0, OracleDistance = 1, Random = 2 };

struct TrackConfig {
    Ratio ratio = Ratio::R13;
    int base_pos = 32;
    int base_neg = 96;
    int n1 = 35;            // init iterations
    int n2 = 15;            // per-frame update iterations
    double online_lr = 1.2e-4;
    double lambda_def = 0.5;
    bool sdt_on = false;
    size_t top_t = 2000;    // clamped to the snippet count
    bool update_ah = false;
    int recent_frames = 5;
    size_t pool_budget = 10000;
    DetectPolicy policy = DetectPolicy::Learned;
    uint64_t seed = 0;
};

struct Candidate {
    std::vector<float> feature;
    double latent_dist = 0.0;  // to the current true state
};

struct SimFrame {
    std::vector<double> truth;
    std::vector<Candidate> candidates;
};

// Feature-space stand-in for a tracking sequence: a true latent state per
// frame and candidates sampled around the previous true state.
struct SimVideo {
    double rho_pos = 0.0, rho_neg = 0.0;
    uint32_t identity = 0;
    int cluster = 0;
    std::vector<float> exemplar;           // feature of the frame-0 state
    std::vector<float> exemplar_semantic;
    std::vector<SimFrame> frames;
};

struct SimVideoConfig {
    int n_frames = 100;
    int n_candidates = 64;
    int n_near = 8;          // candidates constructed within rho_pos
    double rho_pos = 0.35;
    double rho_neg = 0.70;
    double step = 0.12;      // per-frame motion along the identity's deformation direction
    double travel_limit = 2.0;
    double wobble = 0.02;
    double pos_jitter = 0.10;
    double neg_jitter = 0.80;
    double init_tightness = 0.3;  // frame-0 positives use pos_jitter * this
};

SimVideo gen_sim_video(const SyntheticWorld& world, uint32_t identity,
                       const SimVideoConfig& cfg, uint64_t seed);

// Argmax of positive-class probability; exact ties break on the lowest index.
size_t detect(const ClassifierHead& cls, const std::vector<Candidate>& candidates);

struct TrackResult {
    std::vector<size_t> chosen;       // per tracked frame (frames 1..F-1)
    std::vector<uint8_t> success;     // chosen candidate within rho_pos
    double success_rate = 0.0;
    // ratio accounting, totalled over all init/update iterations
    long long real_pos_used = 0;
    long long halluc_used = 0;
    long long neg_used = 0;
    long long cls_steps = 0;
    long long g_steps = 0;
};

// Joint init on frame 0, then detect + joint update per frame. `index` may be
// null when cfg.sdt_on is false. G and the classifier are updated in place.
TrackResult track_video(const SimVideo& video, const InstanceStore& store,
                        const std::vector<PairSample>& dt, const SnippetIndex* index,
                        HallucinatorModel& g, const DiscriminatorModel& disc,
                        ClassifierHead& cls, const TrackConfig& cfg);

struct AblationCell {
    std::string variant;
    Ratio ratio;
    bool sdt, update_ah;
    uint64_t seed;
    int video_id;
    double success_rate;
};

struct AblationAgg {
    std::string variant;
    Ratio ratio;
    bool sdt, update_ah;
    double mean, stddev;
};

struct AblationTable {
    std::vector<AblationCell> cells;
    std::vector<AblationAgg> agg;

    std::string cells_csv() const;
    std::string agg_csv() const;
};

struct AblationConfig {
    int n_seeds = 5;
    int n_videos = 20;
    uint64_t suite_seed = 0;
    SimVideoConfig video;
    TrackConfig track;  // ratio / sdt / update_ah / seed overridden per cell
    int cls_h1 = 512, cls_h2 = 512;
};

// The nine-variant grid: baseline r=1/3, plus {r=2/3, r=1/1} x {SDT on, off}
// x {update-AH on, off}. Videos are generated once per (seed, video) cell and
// shared across variants.
AblationTable run_ablation(const SyntheticWorld& world, const InstanceStore& store,
                           const std::vector<PairSample>& dt, const SnippetIndex& index,
                           const HallucinatorModel& g0, const DiscriminatorModel& d0,
                           const AblationConfig& cfg, std::ostream* progress = nullptr);

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c);

}  // namespace hat

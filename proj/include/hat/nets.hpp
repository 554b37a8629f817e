#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hat/tape.hpp"
#include "hat/tensor.hpp"

namespace hat {

enum class Act : uint8_t { Identity, Relu, Sigmoid };

// Three-layer perceptron: input, one ReLU hidden layer, output.
struct Mlp3 {
    Tensor w1, b1, w2, b2;  // biases are 1 x n
    Act out_act = Act::Identity;

    int in_dim() const { return w1.rows; }
    int hidden_dim() const { return w1.cols; }
    int out_dim() const { return w2.cols; }
    size_t param_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
};

// Scaled uniform init, bound sqrt(6 / (fan_in + fan_out)); biases zero.
// Deterministic for a given seed.
Mlp3 init_mlp(int in, int hidden, int out, Act out_act, uint64_t seed);

// Parameter leaves of an Mlp3 on a tape.
struct Mlp3Nodes {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

template <class T>
Mlp3Nodes push_mlp(Tape<T>& tape, const Mlp3& m) {
    return {tape.leaf(m.w1), tape.leaf(m.b1), tape.leaf(m.w2), tape.leaf(m.b2)};
}

template <class T>
int apply_act(Tape<T>& tape, int x, Act act) {
    switch (act) {
        case Act::Relu: return tape.relu(x);
        case Act::Sigmoid: return tape.sigmoid(x);
        default: return x;
    }
}

template <class T>
int mlp3_apply(Tape<T>& tape, const Mlp3Nodes& n, int x, Act out_act) {
    int h = tape.relu(tape.add_bias(tape.matmul(x, n.w1), n.b1));
    int o = tape.add_bias(tape.matmul(h, n.w2), n.b2);
    return apply_act(tape, o, out_act);
}

// Plain inference forward, no tape.
std::vector<float> mlp3_forward(const Mlp3& m, std::span<const float> x);

// Encoder/decoder pair of the hallucinator: E_n [2D -> C], D_e [C+D -> D],
// both with ReLU output.
struct HallucinatorModel {
    Mlp3 encoder, decoder;
    int feat_dim = 0;
    int code_dim = 0;

    static HallucinatorModel create(int feat_dim, int code_dim, int hidden, uint64_t seed);
};

std::vector<float> encode(const HallucinatorModel& m, std::span<const float> x1,
                          std::span<const float> x2);
std::vector<float> decode(const HallucinatorModel& m, std::span<const float> code,
                          std::span<const float> x1);

// Pair discriminator [2D -> 1], sigmoid output.
struct DiscriminatorModel {
    Mlp3 net;
    int feat_dim = 0;

    static DiscriminatorModel create(int feat_dim, int hidden, uint64_t seed);
};

double discriminate(const DiscriminatorModel& m, std::span<const float> x1,
                    std::span<const float> x2);

// Three affine layers D -> h1 -> h2 -> 2 with ReLU between, softmax output.
struct ClassifierHead {
    Tensor w1, b1, w2, b2, w3, b3;
    int in_dim = 0, h1 = 0, h2 = 0;

    static ClassifierHead create(int in_dim, uint64_t seed, int h1 = 512, int h2 = 512);
};

struct ClassifierNodes {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1, w3 = -1, b3 = -1;
};

template <class T>
ClassifierNodes push_classifier(Tape<T>& tape, const ClassifierHead& c) {
    return {tape.leaf(c.w1), tape.leaf(c.b1), tape.leaf(c.w2),
            tape.leaf(c.b2), tape.leaf(c.w3), tape.leaf(c.b3)};
}

template <class T>
int classifier_logits(Tape<T>& tape, const ClassifierNodes& n, int x) {
    int h1 = tape.relu(tape.add_bias(tape.matmul(x, n.w1), n.b1));
    int h2 = tape.relu(tape.add_bias(tape.matmul(h1, n.w2), n.b2));
    return tape.add_bias(tape.matmul(h2, n.w3), n.b3);
}

// (p_pos, p_neg); class 0 is positive.
std::pair<double, double> classify(const ClassifierHead& c, std::span<const float> x);

// Model file: magic "HATM", u16 version, u8 kind, then per-layer records
// (u32 rows, u32 cols, f32 data), little-endian.
constexpr uint16_t kModelVersion = 1;
enum class ModelKind : uint8_t { Hallucinator = 1, Discriminator = 2, Classifier = 3 };

void save_model(const HallucinatorModel& m, const std::string& path);
void save_model(const DiscriminatorModel& m, const std::string& path);
void save_model(const ClassifierHead& m, const std::string& path);
HallucinatorModel load_hallucinator(const std::string& path);
DiscriminatorModel load_discriminator(const std::string& path);
ClassifierHead load_classifier(const std::string& path);

// In-memory serialization (same byte layout), used for bit-identity checks.
std::vector<char> serialize_model(const HallucinatorModel& m);

}  // namespace hat

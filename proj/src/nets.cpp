#include "hat/nets.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "hat/binio.hpp"

namespace hat {

Mlp3 init_mlp(int in, int hidden, int out, Act out_act, uint64_t seed) {
    if (in <= 0 || hidden <= 0 || out <= 0)
        throw ContractError("init_mlp: dimensions must be positive (" + std::to_string(in) +
                            ", " + std::to_string(hidden) + ", " + std::to_string(out) + ")");
    std::mt19937_64 rng(seed);
    auto fill = [&](Tensor& t, int fan_in, int fan_out) {
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (float& v : t.data) v = static_cast<float>(dist(rng));
    };
    Mlp3 m;
    m.out_act = out_act;
    m.w1 = Tensor(in, hidden);
    m.b1 = Tensor(1, hidden);
    m.w2 = Tensor(hidden, out);
    m.b2 = Tensor(1, out);
    fill(m.w1, in, hidden);
    fill(m.w2, hidden, out);
    return m;
}

namespace {

void affine_forward(const Tensor& w, const Tensor& b, std::span<const float> x,
                    std::vector<float>& out) {
    if (static_cast<int>(x.size()) != w.rows)
        throw ShapeError("forward: input size " + std::to_string(x.size()) +
                         " does not match weight " + w.shape_str());
    out.assign(w.cols, 0.0f);
    for (int i = 0; i < w.rows; ++i) {
        const float xi = x[i];
        if (xi == 0.0f) continue;
        const float* row = w.data.data() + static_cast<size_t>(i) * w.cols;
        for (int j = 0; j < w.cols; ++j) out[j] += xi * row[j];
    }
    for (int j = 0; j < w.cols; ++j) out[j] += b.data[j];
}

void act_inplace(std::vector<float>& v, Act act) {
    switch (act) {
        case Act::Relu:
            for (float& x : v) x = x > 0.0f ? x : 0.0f;
            break;
        case Act::Sigmoid:
            for (float& x : v) x = 1.0f / (1.0f + std::exp(-x));
            break;
        case Act::Identity:
            break;
    }
}

std::vector<float> concat2(std::span<const float> a, std::span<const float> b) {
    std::vector<float> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

}  // namespace

std::vector<float> mlp3_forward(const Mlp3& m, std::span<const float> x) {
    std::vector<float> h, o;
    affine_forward(m.w1, m.b1, x, h);
    act_inplace(h, Act::Relu);
    affine_forward(m.w2, m.b2, h, o);
    act_inplace(o, m.out_act);
    return o;
}

HallucinatorModel HallucinatorModel::create(int feat_dim, int code_dim, int hidden,
                                            uint64_t seed) {
    HallucinatorModel m;
    m.feat_dim = feat_dim;
    m.code_dim = code_dim;
    m.encoder = init_mlp(2 * feat_dim, hidden, code_dim, Act::Relu, seed);
    m.decoder = init_mlp(code_dim + feat_dim, hidden, feat_dim, Act::Relu, seed + 0x9e3779b97f4a7c15ull);
    return m;
}

std::vector<float> encode(const HallucinatorModel& m, std::span<const float> x1,
                          std::span<const float> x2) {
    if (static_cast<int>(x1.size()) != m.feat_dim || static_cast<int>(x2.size()) != m.feat_dim)
        throw ShapeError("encode: expected two " + std::to_string(m.feat_dim) +
                         "-d vectors, got " + std::to_string(x1.size()) + "/" +
                         std::to_string(x2.size()));
    return mlp3_forward(m.encoder, concat2(x1, x2));
}

std::vector<float> decode(const HallucinatorModel& m, std::span<const float> code,
                          std::span<const float> x1) {
    if (static_cast<int>(code.size()) != m.code_dim)
        throw ShapeError("decode: code size " + std::to_string(code.size()) + " != " +
                         std::to_string(m.code_dim));
    if (static_cast<int>(x1.size()) != m.feat_dim)
        throw ShapeError("decode: feature size " + std::to_string(x1.size()) + " != " +
                         std::to_string(m.feat_dim));
    return mlp3_forward(m.decoder, concat2(code, x1));
}

DiscriminatorModel DiscriminatorModel::create(int feat_dim, int hidden, uint64_t seed) {
    DiscriminatorModel m;
    m.feat_dim = feat_dim;
    m.net = init_mlp(2 * feat_dim, hidden, 1, Act::Sigmoid, seed);
    return m;
}

double discriminate(const DiscriminatorModel& m, std::span<const float> x1,
                    std::span<const float> x2) {
    if (static_cast<int>(x1.size()) != m.feat_dim || static_cast<int>(x2.size()) != m.feat_dim)
        throw ShapeError("discriminate: expected two " + std::to_string(m.feat_dim) +
                         "-d vectors, got " + std::to_string(x1.size()) + "/" +
                         std::to_string(x2.size()));
    return mlp3_forward(m.net, concat2(x1, x2))[0];
}

ClassifierHead ClassifierHead::create(int in_dim, uint64_t seed, int h1, int h2) {
    if (in_dim <= 0 || h1 <= 0 || h2 <= 0)
        throw ContractError("ClassifierHead::create: dimensions must be positive");
    ClassifierHead c;
    c.in_dim = in_dim;
    c.h1 = h1;
    c.h2 = h2;
    std::mt19937_64 rng(seed);
    auto fill = [&](Tensor& t, int fan_in, int fan_out) {
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (float& v : t.data) v = static_cast<float>(dist(rng));
    };
    c.w1 = Tensor(in_dim, h1);
    c.b1 = Tensor(1, h1);
    c.w2 = Tensor(h1, h2);
    c.b2 = Tensor(1, h2);
    c.w3 = Tensor(h2, 2);
    c.b3 = Tensor(1, 2);
    fill(c.w1, in_dim, h1);
    fill(c.w2, h1, h2);
    fill(c.w3, h2, 2);
    return c;
}

std::pair<double, double> classify(const ClassifierHead& c, std::span<const float> x) {
    if (static_cast<int>(x.size()) != c.in_dim)
        throw ShapeError("classify: input size " + std::to_string(x.size()) + " != " +
                         std::to_string(c.in_dim));
    std::vector<float> h1, h2, logits;
    affine_forward(c.w1, c.b1, x, h1);
    act_inplace(h1, Act::Relu);
    affine_forward(c.w2, c.b2, h1, h2);
    act_inplace(h2, Act::Relu);
    affine_forward(c.w3, c.b3, h2, logits);
    const double mx = std::max(logits[0], logits[1]);
    const double e0 = std::exp(static_cast<double>(logits[0]) - mx);
    const double e1 = std::exp(static_cast<double>(logits[1]) - mx);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

// --- serialization -----------------------------------------------------

namespace {

void write_layer(std::ostream& os, const Tensor& t) {
    binio::write_u32(os, static_cast<uint32_t>(t.rows));
    binio::write_u32(os, static_cast<uint32_t>(t.cols));
    binio::write_f32(os, t.data.data(), t.size());
}

Tensor read_layer(std::istream& is, const std::string& what) {
    const uint32_t rows = binio::read_u32(is, what + " rows");
    const uint32_t cols = binio::read_u32(is, what + " cols");
    if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24))
        throw ShapeError("model layer " + what + ": implausible shape " +
                         Tensor::shape_str(static_cast<int>(rows), static_cast<int>(cols)));
    Tensor t(static_cast<int>(rows), static_cast<int>(cols));
    binio::read_f32(is, t.data.data(), t.size(), what + " data");
    t.check_finite();
    return t;
}

void write_header(std::ostream& os, ModelKind kind) {
    binio::write_bytes(os, "HATM", 4);
    binio::write_u16(os, kModelVersion);
    binio::write_u8(os, static_cast<uint8_t>(kind));
}

void read_header(std::istream& is, ModelKind expect, const std::string& path) {
    binio::check_magic(is, "HATM", path);
    const uint16_t ver = binio::read_u16(is, "version of " + path);
    if (ver != kModelVersion)
        throw VersionError("unsupported model version " + std::to_string(ver) + " in " + path);
    const uint8_t kind = binio::read_u8(is, "model kind of " + path);
    if (kind != static_cast<uint8_t>(expect))
        throw IoError("model kind mismatch in " + path + ": expected " +
                      std::to_string(static_cast<int>(expect)) + ", got " + std::to_string(kind));
}

void write_mlp(std::ostream& os, const Mlp3& m) {
    write_layer(os, m.w1);
    write_layer(os, m.b1);
    write_layer(os, m.w2);
    write_layer(os, m.b2);
}

Mlp3 read_mlp(std::istream& is, Act out_act, const std::string& name) {
    Mlp3 m;
    m.out_act = out_act;
    m.w1 = read_layer(is, name + ".w1");
    m.b1 = read_layer(is, name + ".b1");
    m.w2 = read_layer(is, name + ".w2");
    m.b2 = read_layer(is, name + ".b2");
    if (m.b1.rows != 1 || m.b1.cols != m.w1.cols)
        throw ShapeError("model layer " + name + ".b1: shape " + m.b1.shape_str() +
                         " does not match " + name + ".w1 " + m.w1.shape_str());
    if (m.w2.rows != m.w1.cols)
        throw ShapeError("model layer " + name + ".w2: shape " + m.w2.shape_str() +
                         " does not match hidden width " + std::to_string(m.w1.cols));
    if (m.b2.rows != 1 || m.b2.cols != m.w2.cols)
        throw ShapeError("model layer " + name + ".b2: shape " + m.b2.shape_str() +
                         " does not match " + name + ".w2 " + m.w2.shape_str());
    return m;
}

}  // namespace

void save_model(const HallucinatorModel& m, const std::string& path) {
    auto os = binio::open_out(path);
    write_header(os, ModelKind::Hallucinator);
    write_mlp(os, m.encoder);
    write_mlp(os, m.decoder);
}

void save_model(const DiscriminatorModel& m, const std::string& path) {
    auto os = binio::open_out(path);
    write_header(os, ModelKind::Discriminator);
    write_mlp(os, m.net);
}

void save_model(const ClassifierHead& m, const std::string& path) {
    auto os = binio::open_out(path);
    write_header(os, ModelKind::Classifier);
    write_layer(os, m.w1);
    write_layer(os, m.b1);
    write_layer(os, m.w2);
    write_layer(os, m.b2);
    write_layer(os, m.w3);
    write_layer(os, m.b3);
}

HallucinatorModel load_hallucinator(const std::string& path) {
    auto is = binio::open_in(path);
    read_header(is, ModelKind::Hallucinator, path);
    HallucinatorModel m;
    m.encoder = read_mlp(is, Act::Relu, "encoder");
    m.decoder = read_mlp(is, Act::Relu, "decoder");
    m.code_dim = m.encoder.out_dim();
    m.feat_dim = m.decoder.out_dim();
    if (m.encoder.in_dim() != 2 * m.feat_dim)
        throw ShapeError("model layer encoder.w1: input " + std::to_string(m.encoder.in_dim()) +
                         " != 2 * feature dim " + std::to_string(m.feat_dim));
    if (m.decoder.in_dim() != m.code_dim + m.feat_dim)
        throw ShapeError("model layer decoder.w1: input " + std::to_string(m.decoder.in_dim()) +
                         " != code+feature dim " + std::to_string(m.code_dim + m.feat_dim));
    binio::check_eof(is, path);
    return m;
}

DiscriminatorModel load_discriminator(const std::string& path) {
    auto is = binio::open_in(path);
    read_header(is, ModelKind::Discriminator, path);
    DiscriminatorModel m;
    m.net = read_mlp(is, Act::Sigmoid, "discriminator");
    if (m.net.out_dim() != 1)
        throw ShapeError("model layer discriminator.w2: output must be 1, got " +
                         std::to_string(m.net.out_dim()));
    if (m.net.in_dim() % 2 != 0)
        throw ShapeError("model layer discriminator.w1: input must be even (pair), got " +
                         std::to_string(m.net.in_dim()));
    m.feat_dim = m.net.in_dim() / 2;
    binio::check_eof(is, path);
    return m;
}

ClassifierHead load_classifier(const std::string& path) {
    auto is = binio::open_in(path);
    read_header(is, ModelKind::Classifier, path);
    ClassifierHead c;
    c.w1 = read_layer(is, "classifier.w1");
    c.b1 = read_layer(is, "classifier.b1");
    c.w2 = read_layer(is, "classifier.w2");
    c.b2 = read_layer(is, "classifier.b2");
    c.w3 = read_layer(is, "classifier.w3");
    c.b3 = read_layer(is, "classifier.b3");
    if (c.b1.cols != c.w1.cols || c.w2.rows != c.w1.cols || c.b2.cols != c.w2.cols ||
        c.w3.rows != c.w2.cols || c.b3.cols != c.w3.cols || c.w3.cols != 2)
        throw ShapeError("model layer classifier: inconsistent layer shapes in " + path);
    c.in_dim = c.w1.rows;
    c.h1 = c.w1.cols;
    c.h2 = c.w2.cols;
    binio::check_eof(is, path);
    return c;
}

std::vector<char> serialize_model(const HallucinatorModel& m) {
    std::ostringstream os(std::ios::binary);
    write_header(os, ModelKind::Hallucinator);
    write_mlp(os, m.encoder);
    write_mlp(os, m.decoder);
    const std::string s = os.str();
    return {s.begin(), s.end()};
}

}  // namespace hat

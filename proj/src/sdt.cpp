#include "hat/sdt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "hat/errors.hpp"

namespace hat {

std::vector<float> snippet_descriptor(const std::vector<std::vector<float>>& instances) {
    if (instances.empty()) throw ContractError("snippet_descriptor: empty snippet");
    const size_t dim = instances[0].size();
    std::vector<double> acc(dim, 0.0);
    for (const auto& v : instances) {
        if (v.size() != dim)
            throw ShapeError("snippet_descriptor: mixed dimensions (" +
                             std::to_string(v.size()) + " vs " + std::to_string(dim) + ")");
        for (size_t j = 0; j < dim; ++j) acc[j] += v[j];
    }
    std::vector<float> out(dim);
    for (size_t j = 0; j < dim; ++j)
        out[j] = static_cast<float>(acc[j] / static_cast<double>(instances.size()));
    return out;
}

SnippetIndex build_index(
    const std::vector<std::pair<uint32_t, std::vector<std::vector<float>>>>& snippets) {
    SnippetIndex index;
    std::set<uint32_t> seen;
    for (const auto& [id, inst] : snippets) {
        if (!seen.insert(id).second)
            throw ContractError("build_index: duplicate snippet id " + std::to_string(id));
        SnippetDescriptor d;
        d.id = id;
        d.count = static_cast<uint32_t>(inst.size());
        d.psi = snippet_descriptor(inst);
        if (index.sem_dim == 0) index.sem_dim = static_cast<int>(d.psi.size());
        if (static_cast<int>(d.psi.size()) != index.sem_dim)
            throw ShapeError("build_index: descriptor dimension mismatch at id " +
                             std::to_string(id));
        index.descriptors.push_back(std::move(d));
    }
    std::sort(index.descriptors.begin(), index.descriptors.end(),
              [](const SnippetDescriptor& a, const SnippetDescriptor& b) { return a.id < b.id; });
    return index;
}

SnippetIndex build_index(const InstanceStore& store) {
    if (store.sem_dim == 0)
        throw ContractError("build_index: store has no semantic vectors");
    std::vector<std::pair<uint32_t, std::vector<std::vector<float>>>> snippets;
    uint32_t next_id = 0;
    for (const SnippetRange& r : store.snippets()) {
        std::vector<std::vector<float>> inst;
        for (size_t i = r.begin; i < r.end; ++i) inst.push_back(store.items[i].semantic);
        snippets.emplace_back(next_id++, std::move(inst));
    }
    return build_index(snippets);
}

namespace {

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw TruncatedError(std::string("index file truncated reading ") + what);
    return v;
}

}  // namespace

void save_index(const SnippetIndex& index, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("save_index: cannot open " + path);
    os.write("HATI", 4);
    put<uint16_t>(os, kIndexVersion);
    put<uint32_t>(os, static_cast<uint32_t>(index.descriptors.size()));
    put<uint32_t>(os, static_cast<uint32_t>(index.sem_dim));
    for (const SnippetDescriptor& d : index.descriptors) {
        put<uint32_t>(os, d.id);
        put<uint32_t>(os, d.count);
        os.write(reinterpret_cast<const char*>(d.psi.data()),
                 static_cast<std::streamsize>(d.psi.size() * sizeof(float)));
    }
    if (!os) throw IoError("save_index: write failed for " + path);
}

SnippetIndex load_index(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_index: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is) throw TruncatedError("index file truncated reading magic");
    if (std::string(magic, 4) != "HATI")
        throw MagicError("not an index file: bad magic in " + path);
    const auto ver = get<uint16_t>(is, "version");
    if (ver != kIndexVersion)
        throw VersionError("index version " + std::to_string(ver) + " unsupported");
    const auto count = get<uint32_t>(is, "count");
    const auto dim = get<uint32_t>(is, "sem_dim");
    SnippetIndex index;
    index.sem_dim = static_cast<int>(dim);
    index.descriptors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        SnippetDescriptor d;
        d.id = get<uint32_t>(is, "snippet id");
        d.count = get<uint32_t>(is, "instance count");
        d.psi.resize(dim);
        is.read(reinterpret_cast<char*>(d.psi.data()),
                static_cast<std::streamsize>(dim * sizeof(float)));
        if (!is) throw TruncatedError("index file truncated reading descriptor data");
        index.descriptors.push_back(std::move(d));
    }
    return index;
}

std::vector<RankedSnippet> rank_snippets(const SnippetIndex& index,
                                         std::span<const float> exemplar, size_t top_t) {
    if (index.descriptors.empty())
        throw ContractError("rank_snippets: empty index");
    if (static_cast<int>(exemplar.size()) != index.sem_dim)
        throw ShapeError("rank_snippets: exemplar dim " + std::to_string(exemplar.size()) +
                         " vs index dim " + std::to_string(index.sem_dim));
    if (top_t < 1 || top_t > index.descriptors.size())
        throw ContractError("rank_snippets: T=" + std::to_string(top_t) +
                            " out of range [1, " + std::to_string(index.descriptors.size()) + "]");
    std::vector<RankedSnippet> all;
    all.reserve(index.descriptors.size());
    for (const SnippetDescriptor& d : index.descriptors) {
        double s = 0;
        for (size_t j = 0; j < exemplar.size(); ++j) {
            const double dv = static_cast<double>(exemplar[j]) - static_cast<double>(d.psi[j]);
            s += dv * dv;
        }
        all.push_back({d.id, std::sqrt(s)});
    }
    std::sort(all.begin(), all.end(), [](const RankedSnippet& a, const RankedSnippet& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.id < b.id;
    });
    all.resize(top_t);
    return all;
}

std::vector<PairSample> assemble_ds(const InstanceStore& store,
                                    const std::vector<uint32_t>& snippet_ids,
                                    uint32_t window, size_t budget, uint64_t seed) {
    const auto snippets = store.snippets();
    // all valid pairs within the selected snippets
    std::vector<PairSample> pool;
    for (uint32_t id : snippet_ids) {
        if (id >= snippets.size())
            throw ContractError("assemble_ds: snippet id " + std::to_string(id) +
                                " not in store (" + std::to_string(snippets.size()) +
                                " snippets)");
        const SnippetRange& r = snippets[id];
        for (size_t i = r.begin; i < r.end; ++i)
            for (size_t j = i + 1; j < r.end; ++j) {
                const int64_t d = static_cast<int64_t>(store.items[j].frame) -
                                  static_cast<int64_t>(store.items[i].frame);
                if (std::llabs(d) <= window)
                    pool.push_back({r.identity, i, j});
            }
    }
    if (pool.empty())
        throw ContractError("assemble_ds: no valid pair in the selected snippets "
                            "(window " + std::to_string(window) + ")");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    std::vector<PairSample> out;
    out.reserve(budget);
    for (size_t n = 0; n < budget; ++n) out.push_back(pool[pick(rng)]);
    return out;
}

double query_timing(const SnippetIndex& index, std::span<const float> exemplar, size_t top_t) {
    const auto t0 = std::chrono::steady_clock::now();
    volatile double sink = rank_snippets(index, exemplar, top_t).back().distance;
    (void)sink;
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count();
}

}  // namespace hat

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hat/dataio.hpp"

namespace hat {

// Mean of the per-instance semantic vectors of one snippet.
struct SnippetDescriptor {
    uint32_t id = 0;
    uint32_t count = 0;  // instances contributing to the mean
    std::vector<float> psi;
};

std::vector<float> snippet_descriptor(const std::vector<std::vector<float>>& instances);

// Immutable after build; descriptors ordered by ascending snippet id.
struct SnippetIndex {
    int sem_dim = 0;
    std::vector<SnippetDescriptor> descriptors;

    size_t size() const { return descriptors.size(); }
};

SnippetIndex build_index(const std::vector<std::pair<uint32_t, std::vector<std::vector<float>>>>& snippets);
// snippet id = position of the snippet in store.snippets(); requires semantics
SnippetIndex build_index(const InstanceStore& store);

constexpr uint16_t kIndexVersion = 1;
void save_index(const SnippetIndex& index, const std::string& path);
SnippetIndex load_index(const std::string& path);

struct RankedSnippet {
    uint32_t id;
    double distance;
};

// Top-T snippet ids by ascending Euclidean distance between the exemplar
// descriptor and each snippet descriptor; exact ties break on smaller id.
std::vector<RankedSnippet> rank_snippets(const SnippetIndex& index,
                                         std::span<const float> exemplar, size_t top_t);

// Same-identity pairs within the frame window, drawn uniformly (seeded) from
// the selected snippets only, up to the budget.
std::vector<PairSample> assemble_ds(const InstanceStore& store,
                                    const std::vector<uint32_t>& snippet_ids,
                                    uint32_t window = 20, size_t budget = 10000,
                                    uint64_t seed = 0);

// Wall-clock seconds for one rank_snippets call.
double query_timing(const SnippetIndex& index, std::span<const float> exemplar, size_t top_t);

}  // namespace hat

#pragma once

#include "iti/common.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace iti {

// Shift applied to one head: alpha * sigma * direction, added after the
// attention operator and before the output projection.
struct SpecEntry {
    HeadId head;
    std::vector<double> direction; // unit norm, length head_dim
    double sigma = 0.0;
    std::vector<std::uint8_t> mask; // point-wise selector only; empty otherwise
};

struct InterventionSpec {
    double alpha = 0.0;
    SelectorKind selector = SelectorKind::head_wise;
    std::vector<SpecEntry> entries; // sorted by head, no duplicates
    std::map<std::string, std::string> provenance;

    bool is_noop() const;
    const SpecEntry * find(HeadId head) const;
    bool touches_layer(int layer) const;

    // n_heads x head_dim row-major shift for one layer, zero rows for heads
    // without an entry
    std::vector<float> layer_shift(int layer, int n_heads, int head_dim) const;

    // throws std::invalid_argument on out-of-range heads, bad direction
    // lengths, non-unit directions, negative alpha/sigma or duplicates
    void validate(int n_layers, int n_heads, int head_dim) const;
};

// Returns head_outputs (n_heads x head_dim) with the layer's shift applied.
std::vector<float> intervene_layer(std::span<const float> head_outputs, int layer, const InterventionSpec & spec,
                                   int n_heads, int head_dim);

// In-place form used by the forward pass; shift comes from layer_shift().
void add_shift_inplace(std::span<float> head_outputs, std::span<const float> shift);

std::string spec_to_json(const InterventionSpec & spec);
InterventionSpec spec_from_json(const std::string & text);

InterventionSpec load_spec(const std::filesystem::path & path);
void save_spec(const InterventionSpec & spec, const std::filesystem::path & path);

} // namespace iti

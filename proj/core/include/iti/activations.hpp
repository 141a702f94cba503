#pragma once

#include "iti/common.hpp"
#include "iti/data.hpp"
#include "iti/model.hpp"
#include "iti/tokenizer.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace iti {

// Last-token head activations, one record per collected QA pair.
// values layout: [record][layer][head][dim].
struct ActivationDataset {
    int n_layers = 0;
    int n_heads = 0;
    int head_dim = 0;
    std::vector<std::uint8_t> labels;
    std::vector<std::int32_t> question_ids;
    std::vector<std::uint32_t> pair_indices; // index into flatten_qa_pairs() order
    std::vector<float> values;

    std::size_t size() const { return labels.size(); }
    std::size_t record_stride() const { return static_cast<std::size_t>(n_layers) * n_heads * head_dim; }

    std::span<const float> head(std::size_t record, int layer, int head) const;
    std::span<float> head(std::size_t record, int layer, int head);
    std::span<const float> record(std::size_t record) const;

    // Record indices for the given pair indices, in the same order; pairs that
    // were skipped at collection time are left out.
    std::vector<std::size_t> records_for_pairs(std::span<const std::size_t> pairs) const;

    void append(int label, int question_id, std::uint32_t pair_index, std::span<const float> record_values);

    friend bool operator==(const ActivationDataset &, const ActivationDataset &) = default;
};

struct SkippedPair {
    std::uint32_t pair_index = 0;
    int question_id = 0;
    std::string reason;
};

struct CollectResult {
    ActivationDataset dataset;
    std::vector<SkippedPair> skipped;
};

// Runs the model over format_input(q, a, probe) for every pair and keeps the
// final-position activation of every head. Inputs longer than max_seq_len
// are skipped with a reason.
CollectResult collect_activations(const Model & model, const Tokenizer & tokenizer, const std::vector<LabeledPair> & pairs,
                                  const std::vector<Question> & questions);

constexpr std::uint32_t kActivationFormatVersion = 1;

std::string serialize_dataset(const ActivationDataset & ds);
ActivationDataset parse_dataset(std::string_view bytes);
void save_dataset(const ActivationDataset & ds, const std::filesystem::path & path);
ActivationDataset load_dataset(const std::filesystem::path & path);

std::string skipped_manifest(const std::vector<SkippedPair> & skipped);

} // namespace iti

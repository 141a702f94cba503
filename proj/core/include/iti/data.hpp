#pragma once

#include "iti/common.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace iti {

struct Question {
    int id = 0;
    std::string type;
    std::string category;
    std::string question;
    std::string best_answer;
    std::vector<std::string> correct_answers;
    std::vector<std::string> incorrect_answers;
    std::string source;

    friend bool operator==(const Question &, const Question &) = default;
};

struct LabeledPair {
    int question_id = 0;
    std::string answer;
    int label = 0; // 1 iff the answer came from correct_answers

    friend bool operator==(const LabeledPair &, const LabeledPair &) = default;
};

enum class PairRole : std::uint8_t { train, validation };

// Question-level folds plus a 4:1 train/validation split of each fold's pairs.
// Pair-indexed vectors follow flatten_qa_pairs() order.
struct SplitPlan {
    int n_folds = 0;
    std::uint64_t seed = 0;
    std::vector<int> question_ids;  // same order as the input question list
    std::vector<int> question_fold; // parallel to question_ids
    std::vector<int> pair_fold;
    std::vector<PairRole> pair_role;

    int fold_of_question(int question_id) const;
    std::vector<int> fold_sizes() const;

    // Pair indices used for fitting when held_out is excluded (all folds when
    // held_out is empty), split by role.
    std::vector<std::size_t> development_pairs(std::optional<int> held_out, std::optional<PairRole> role = {}) const;
    std::vector<std::size_t> fold_pairs(int fold) const;
};

// Parse a TruthfulQA-style delimited table (comma or tab, RFC 4180 quoting).
// Answer cells are split on ';' and trimmed. Question ids are row indices.
std::vector<Question> parse_truthfulqa_csv(const std::filesystem::path & path);
std::vector<Question> parse_truthfulqa_text(std::string_view text);

std::vector<LabeledPair> flatten_qa_pairs(const std::vector<Question> & questions);

enum class PromptMode { probe, generation };

// Instruction and few-shot block placed before generation-mode questions.
extern const std::string_view kQaPrimer;

std::string format_input(std::string_view question, const std::optional<std::string> & answer, PromptMode mode);

SplitPlan split_folds(const std::vector<Question> & questions, int n_folds, std::uint64_t seed);

// Structured text round trips.
std::string questions_to_json(const std::vector<Question> & questions);
std::vector<Question> questions_from_json(const std::string & text);
std::string pairs_to_json(const std::vector<LabeledPair> & pairs);
std::string plan_to_json(const SplitPlan & plan);

} // namespace iti

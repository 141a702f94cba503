#pragma once

#include "iti/activations.hpp"
#include "iti/data.hpp"
#include "iti/directions.hpp"
#include "iti/intervention.hpp"
#include "iti/model.hpp"
#include "iti/probing.hpp"
#include "iti/tokenizer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace iti {

struct EvalOptions {
    bool use_qa_primer = true;      // MC prompts carry the instruction/few-shot block
    bool length_normalized = false; // MC scores divided by continuation length
    bool kl_reverse = false;        // KL(post || pre) instead of KL(pre || post)
    int no_comment_max_new = 0;     // > 0: generate answers and count "I have no comment"
    int min_category = 10;
};

struct QuestionResult {
    int question_id = 0;
    std::string category;
    bool correct = false;
    double best_correct = 0.0;
    double best_incorrect = 0.0;
};

struct McResult {
    double accuracy = 0.0;
    std::vector<QuestionResult> per_question;
};

// Scores every candidate answer by conditional log-probability after the
// generation prompt. A question counts when its best correct candidate
// strictly beats every incorrect one.
McResult mc_evaluate(const Model & model, const Tokenizer & tokenizer, const std::vector<Question> & questions,
                     const InterventionSpec * spec = nullptr, const EvalOptions & options = {});
double mc_accuracy(const Model & model, const Tokenizer & tokenizer, const std::vector<Question> & questions,
                   const InterventionSpec * spec = nullptr, const EvalOptions & options = {});

// Splits a token stream into consecutive windows of at most window tokens,
// dropping a trailing window shorter than 2.
std::vector<std::vector<Token>> segment_corpus(std::span<const Token> tokens, int window);

// Mean negative log-likelihood per predicted token, in nats.
double cross_entropy(const Model & model, const std::vector<std::vector<Token>> & corpus, const InterventionSpec * spec = nullptr);

// KL(p || q) in nats.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Mean over prompts of KL(pre || post) between next-token distributions
// without and with spec (reversed when reverse is set).
double kl_pre_post(const Model & model, const InterventionSpec & spec, const std::vector<std::vector<Token>> & prompts,
                   bool reverse = false);

int count_no_comment(const Model & model, const Tokenizer & tokenizer, const std::vector<Question> & questions,
                     const InterventionSpec * spec, int max_new);

struct CategoryRow {
    std::string category;
    int count = 0;
    double accuracy = 0.0;
    bool shown = true; // count >= min_count
};

std::vector<CategoryRow> category_report(const std::vector<QuestionResult> & results, const std::vector<Question> & questions,
                                         int min_count = 10);

struct EvalReport {
    double mc_accuracy = 0.0;
    double ce = 0.0;
    double kl = 0.0;
    int n_questions = 0;
    int no_comment = -1; // -1 when not measured
    std::vector<CategoryRow> categories;
    std::vector<QuestionResult> per_question;

    int k = 0;
    double alpha = 0.0;
    DirectionMethod method = DirectionMethod::mass_mean;
    SelectorKind selector = SelectorKind::head_wise;
    std::uint64_t seed = 0;
    int fold = -1; // -1: pooled over folds
    std::string error;
};

// Everything a fitting + evaluation run needs.
struct PipelineInputs {
    const Model * model = nullptr;
    const Tokenizer * tokenizer = nullptr;
    const std::vector<Question> * questions = nullptr;
    const ActivationDataset * dataset = nullptr;
    std::vector<std::vector<Token>> ce_corpus;
    std::vector<std::vector<Token>> kl_prompts;
    DirectionMethod method = DirectionMethod::mass_mean;
    SelectorKind selector = SelectorKind::head_wise;
    EvalOptions eval;
    ProbeSettings probe;
    CcsSettings ccs;
};

// Probes, directions and (for point-wise) the concatenated probe fitted on
// one development set. Reads only development records.
struct FoldFit {
    HeadProbes probes;
    DirectionSet directions;
    std::optional<ConcatProbeResult> concat;
    int n_point_heads = 0; // k used for concat; point-wise selections are prefixes of its ranking
};

FoldFit fit_development(const ActivationDataset & ds, const DevelopmentRecords & dev, const PipelineInputs & inputs,
                        std::uint64_t seed);
FoldFit fit_fold(const ActivationDataset & ds, const SplitPlan & plan, std::optional<int> held_out, const PipelineInputs & inputs,
                 std::uint64_t seed);

HeadSelection selection_for(const FoldFit & fit, SelectorKind selector, int k, int head_dim);

// Metrics on the given questions plus the corpus-level CE/KL.
EvalReport evaluate(const PipelineInputs & inputs, const std::vector<Question> & questions, const InterventionSpec * spec);

struct CvResult {
    EvalReport combined;
    std::vector<EvalReport> folds;
    std::vector<InterventionSpec> specs; // one per fold
};

// Each fold is evaluated with heads, directions and sigmas fitted on the
// other folds only; MC is pooled over all questions, CE/KL averaged over folds.
CvResult cross_validate(const PipelineInputs & inputs, int k, double alpha, int n_folds, std::uint64_t seed);

struct SweepResult {
    std::vector<EvalReport> cells; // k-major, then alpha, then seed; input order
    std::vector<EvalReport> means; // one per (k, alpha), same order
};

SweepResult sweep_grid(const PipelineInputs & inputs, const std::vector<int> & k_list, const std::vector<double> & alpha_list,
                       const std::vector<std::uint64_t> & seeds, int n_folds = 2);

struct TrainsizePoint {
    double fraction = 0.0;
    int n_questions = 0;
    double cosine = 0.0;
    std::optional<EvalReport> report;
};

struct TrainsizeResult {
    HeadId head;
    std::vector<TrainsizePoint> points;
};

// Fold 0 of a 2-fold split is held out; the development fold is subsampled
// by question. Cosine compares the designated head's direction (default: the
// top-ranked head of the full fit) with the full-data direction.
TrainsizeResult trainsize_curve(const PipelineInputs & inputs, const std::vector<double> & fractions, std::uint64_t seed, int k,
                                double alpha, std::optional<HeadId> head = {}, bool evaluate_metrics = true);

std::string report_to_json(const EvalReport & report);

} // namespace iti

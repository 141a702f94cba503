#include "iti/evaluation.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

using json = nlohmann::json;

namespace iti {

namespace {

std::string mc_prompt(const Question & q, const EvalOptions & options) {
    if (options.use_qa_primer) {
        return format_input(q.question, std::nullopt, PromptMode::generation);
    }
    return "Q: " + q.question + "\nA:";
}

} // namespace

McResult mc_evaluate(const Model & model, const Tokenizer & tokenizer, const std::vector<Question> & questions,
                     const InterventionSpec * spec, const EvalOptions & options) {
    McResult out;
    if (questions.empty()) {
        return out;
    }
    int positives = 0;
    for (const auto & q : questions) {
        if (q.correct_answers.empty() || q.incorrect_answers.empty()) {
            throw std::invalid_argument("mc_accuracy: question " + std::to_string(q.id) + " lacks a correct or incorrect candidate");
        }
        const auto prompt = tokenizer.encode(mc_prompt(q, options));
        auto score = [&](const std::string & answer) {
            const auto cont = tokenizer.encode(" " + answer);
            double lp = conditional_logprob(model, prompt, cont, spec);
            if (options.length_normalized && !cont.empty()) {
                lp /= static_cast<double>(cont.size());
            }
            return lp;
        };
        QuestionResult r;
        r.question_id = q.id;
        r.category = q.category;
        r.best_correct = -std::numeric_limits<double>::infinity();
        r.best_incorrect = -std::numeric_limits<double>::infinity();
        for (const auto & a : q.correct_answers) r.best_correct = std::max(r.best_correct, score(a));
        for (const auto & a : q.incorrect_answers) r.best_incorrect = std::max(r.best_incorrect, score(a));
        // a tie with any incorrect candidate is a miss
        r.correct = r.best_correct > r.best_incorrect;
        positives += r.correct ? 1 : 0;
        out.per_question.push_back(std::move(r));
    }
    out.accuracy = static_cast<double>(positives) / static_cast<double>(questions.size());
    return out;
}

double mc_accuracy(const Model & model, const Tokenizer & tokenizer, const std::vector<Question> & questions,
                   const InterventionSpec * spec, const EvalOptions & options) {
    return mc_evaluate(model, tokenizer, questions, spec, options).accuracy;
}

std::vector<std::vector<Token>> segment_corpus(std::span<const Token> tokens, int window) {
    if (window < 2) {
        throw std::invalid_argument("segment_corpus: window must be >= 2");
    }
    std::vector<std::vector<Token>> out;
    for (std::size_t i = 0; i < tokens.size(); i += static_cast<std::size_t>(window)) {
        const std::size_t end = std::min(tokens.size(), i + static_cast<std::size_t>(window));
        if (end - i >= 2) {
            out.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(end));
        }
    }
    return out;
}

double cross_entropy(const Model & model, const std::vector<std::vector<Token>> & corpus, const InterventionSpec * spec) {
    if (corpus.empty()) {
        throw std::invalid_argument("cross_entropy: empty corpus");
    }
    double total = 0.0;
    std::size_t count = 0;
    ForwardOptions opt;
    opt.spec = spec;
    const int V = model.config.vocab_size;
    for (const auto & seq : corpus) {
        if (seq.size() < 2) {
            throw std::invalid_argument("cross_entropy: every sequence needs at least two tokens");
        }
        const auto r = forward(model, seq, opt);
        for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
            const auto lp = log_softmax(r.logits_at(static_cast<int>(t), V));
            total -= lp[static_cast<std::size_t>(seq[t + 1])];
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) {
        throw std::invalid_argument("kl_divergence: size mismatch");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += p[i] * (std::log(p[i]) - std::log(q[i]));
    }
    return std::max(0.0, kl);
}

double kl_pre_post(const Model & model, const InterventionSpec & spec, const std::vector<std::vector<Token>> & prompts, bool reverse) {
    if (prompts.empty()) {
        throw std::invalid_argument("kl_pre_post: no prompts");
    }
    double total = 0.0;
    for (const auto & p : prompts) {
        const auto pre = next_token_distribution(model, p, nullptr);
        const auto post = next_token_distribution(model, p, &spec);
        total += reverse ? kl_divergence(post, pre) : kl_divergence(pre, post);
    }
    return total / static_cast<double>(prompts.size());
}

int count_no_comment(const Model & model, const Tokenizer & tokenizer, const std::vector<Question> & questions,
                     const InterventionSpec * spec, int max_new) {
    int count = 0;
    for (const auto & q : questions) {
        const auto prompt = tokenizer.encode(format_input(q.question, std::nullopt, PromptMode::generation));
        const int room = model.config.max_seq_len - static_cast<int>(prompt.size());
        const int n = std::min(max_new, room);
        if (n <= 0) continue;
        const auto cont = generate_greedy(model, prompt, n, spec);
        auto text = tokenizer.decode(cont);
        const auto stop = text.find("\n\n");
        if (stop != std::string::npos) text.resize(stop);
        if (text.find("I have no comment") != std::string::npos) ++count;
    }
    return count;
}

std::vector<CategoryRow> category_report(const std::vector<QuestionResult> & results, const std::vector<Question> & questions,
                                         int min_count) {
    std::map<int, std::string> category_of;
    for (const auto & q : questions) category_of[q.id] = q.category;
    std::map<std::string, std::pair<int, int>> tally; // category -> (count, correct)
    for (const auto & r : results) {
        auto it = category_of.find(r.question_id);
        const std::string & cat = it != category_of.end() ? it->second : r.category;
        auto & t = tally[cat];
        ++t.first;
        t.second += r.correct ? 1 : 0;
    }
    std::vector<CategoryRow> rows;
    for (const auto & [cat, t] : tally) {
        rows.push_back({cat, t.first, static_cast<double>(t.second) / t.first, t.first >= min_count});
    }
    return rows;
}

// ---- pipeline -------------------------------------------------------------------------

FoldFit fit_development(const ActivationDataset & ds, const DevelopmentRecords & dev, const PipelineInputs & inputs,
                        std::uint64_t seed) {
    FoldFit fit;
    fit.probes = probe_all_heads_on(ds, dev, inputs.probe);
    DirectionOptions opt;
    opt.method = inputs.method;
    opt.seed = seed;
    opt.ccs = inputs.ccs;
    fit.directions = compute_directions_on(ds, dev, opt, &fit.probes);
    if (inputs.selector == SelectorKind::point_wise) {
        fit.n_point_heads = ds.n_layers * ds.n_heads;
        fit.concat = train_concat_probe_on(ds, dev, fit.n_point_heads, inputs.probe);
    }
    return fit;
}

FoldFit fit_fold(const ActivationDataset & ds, const SplitPlan & plan, std::optional<int> held_out, const PipelineInputs & inputs,
                 std::uint64_t seed) {
    return fit_development(ds, development_records(ds, plan, held_out), inputs, seed);
}

HeadSelection selection_for(const FoldFit & fit, SelectorKind selector, int k, int head_dim) {
    switch (selector) {
        case SelectorKind::head_wise:
            return select_heads(fit.probes.accuracy, k);
        case SelectorKind::all_heads:
            return select_all_heads(fit.probes.accuracy);
        case SelectorKind::point_wise: {
            if (!fit.concat) {
                throw std::invalid_argument("point-wise selection requires a concatenated probe");
            }
            if (k < 0 || k > fit.n_point_heads) {
                throw std::invalid_argument("point-wise selection: K out of range");
            }
            HeadSelection sel;
            sel.kind = SelectorKind::point_wise;
            const auto & all = fit.concat->selection.coordinates;
            sel.coordinates.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(k) * head_dim));
            return sel;
        }
    }
    throw std::invalid_argument("unknown selector");
}

EvalReport evaluate(const PipelineInputs & inputs, const std::vector<Question> & questions, const InterventionSpec * spec) {
    if (!inputs.model || !inputs.tokenizer) {
        throw std::invalid_argument("evaluate: pipeline has no model/tokenizer");
    }
    EvalReport rep;
    const auto mc = mc_evaluate(*inputs.model, *inputs.tokenizer, questions, spec, inputs.eval);
    rep.mc_accuracy = mc.accuracy;
    rep.per_question = mc.per_question;
    rep.n_questions = static_cast<int>(questions.size());
    rep.categories = category_report(mc.per_question, questions, inputs.eval.min_category);
    if (!inputs.ce_corpus.empty()) {
        rep.ce = cross_entropy(*inputs.model, inputs.ce_corpus, spec);
    }
    if (spec && !inputs.kl_prompts.empty()) {
        rep.kl = kl_pre_post(*inputs.model, *spec, inputs.kl_prompts, inputs.eval.kl_reverse);
    }
    if (inputs.eval.no_comment_max_new > 0) {
        rep.no_comment = count_no_comment(*inputs.model, *inputs.tokenizer, questions, spec, inputs.eval.no_comment_max_new);
    }
    if (spec) {
        rep.alpha = spec->alpha;
        rep.selector = spec->selector;
    }
    return rep;
}

namespace {

void check_pipeline(const PipelineInputs & inputs) {
    if (!inputs.questions || !inputs.dataset) {
        throw std::invalid_argument("pipeline: questions and activation dataset are required");
    }
}

std::vector<Question> questions_in_fold(const std::vector<Question> & questions, const SplitPlan & plan, int fold) {
    std::vector<Question> out;
    for (std::size_t i = 0; i < questions.size(); ++i) {
        if (plan.question_fold[i] == fold) out.push_back(questions[i]);
    }
    return out;
}

CvResult cv_with_fits(const PipelineInputs & inputs, const SplitPlan & plan, const std::vector<FoldFit> & fits, int k, double alpha,
                      std::uint64_t seed) {
    CvResult cv;
    const auto & ds = *inputs.dataset;
    int positives = 0, total = 0;
    double ce = 0.0, kl = 0.0;
    for (int f = 0; f < plan.n_folds; ++f) {
        const auto sel = selection_for(fits[f], inputs.selector, k, ds.head_dim);
        auto spec = build_spec(sel, fits[f].directions, alpha);
        spec.provenance["fold"] = std::to_string(f);
        spec.provenance["split_seed"] = std::to_string(seed);
        const auto fold_questions = questions_in_fold(*inputs.questions, plan, f);
        auto rep = evaluate(inputs, fold_questions, &spec);
        rep.k = k;
        rep.alpha = alpha;
        rep.method = inputs.method;
        rep.selector = inputs.selector;
        rep.seed = seed;
        rep.fold = f;
        for (const auto & q : rep.per_question) {
            positives += q.correct ? 1 : 0;
            ++total;
        }
        ce += rep.ce;
        kl += rep.kl;
        cv.combined.per_question.insert(cv.combined.per_question.end(), rep.per_question.begin(), rep.per_question.end());
        if (rep.no_comment >= 0) {
            cv.combined.no_comment = std::max(0, cv.combined.no_comment) + rep.no_comment;
        }
        cv.folds.push_back(std::move(rep));
        cv.specs.push_back(std::move(spec));
    }
    auto & c = cv.combined;
    c.mc_accuracy = total ? static_cast<double>(positives) / total : 0.0;
    c.n_questions = total;
    c.ce = ce / plan.n_folds;
    c.kl = kl / plan.n_folds;
    c.categories = category_report(c.per_question, *inputs.questions, inputs.eval.min_category);
    c.k = k;
    c.alpha = alpha;
    c.method = inputs.method;
    c.selector = inputs.selector;
    c.seed = seed;
    c.fold = -1;
    return cv;
}

std::vector<FoldFit> fit_all_folds(const PipelineInputs & inputs, const SplitPlan & plan, std::uint64_t seed) {
    std::vector<FoldFit> fits;
    for (int f = 0; f < plan.n_folds; ++f) {
        const auto dev = development_records(*inputs.dataset, plan, f);
        if (dev.train.size() < 2) {
            throw std::invalid_argument("cross_validate: fold " + std::to_string(f) + " leaves too few records for probe training");
        }
        fits.push_back(fit_development(*inputs.dataset, dev, inputs, seed));
    }
    return fits;
}

} // namespace

CvResult cross_validate(const PipelineInputs & inputs, int k, double alpha, int n_folds, std::uint64_t seed) {
    check_pipeline(inputs);
    if (n_folds < 2) {
        throw std::invalid_argument("cross_validate: n_folds must be >= 2");
    }
    const auto plan = split_folds(*inputs.questions, n_folds, seed);
    const auto fits = fit_all_folds(inputs, plan, seed);
    return cv_with_fits(inputs, plan, fits, k, alpha, seed);
}

SweepResult sweep_grid(const PipelineInputs & inputs, const std::vector<int> & k_list, const std::vector<double> & alpha_list,
                       const std::vector<std::uint64_t> & seeds, int n_folds) {
    check_pipeline(inputs);
    if (k_list.empty() || alpha_list.empty() || seeds.empty()) {
        throw std::invalid_argument("sweep_grid: K, alpha and seed lists must be nonempty");
    }
    // fits depend only on the seed
    std::vector<SplitPlan> plans;
    std::vector<std::vector<FoldFit>> fits;
    std::vector<std::string> fit_errors;
    for (auto s : seeds) {
        plans.push_back(split_folds(*inputs.questions, n_folds, s));
        try {
            fits.push_back(fit_all_folds(inputs, plans.back(), s));
            fit_errors.emplace_back();
        } catch (const std::invalid_argument & ex) {
            fits.emplace_back();
            fit_errors.emplace_back(ex.what());
        }
    }

    SweepResult out;
    for (int k : k_list) {
        for (double alpha : alpha_list) {
            EvalReport mean;
            mean.k = k;
            mean.alpha = alpha;
            mean.method = inputs.method;
            mean.selector = inputs.selector;
            mean.fold = -1;
            int ok = 0;
            for (std::size_t si = 0; si < seeds.size(); ++si) {
                EvalReport cell;
                if (!fit_errors[si].empty()) {
                    cell.error = fit_errors[si];
                } else {
                    try {
                        cell = cv_with_fits(inputs, plans[si], fits[si], k, alpha, seeds[si]).combined;
                        cell.per_question.clear();
                    } catch (const std::invalid_argument & ex) {
                        cell.error = ex.what();
                    }
                }
                cell.k = k;
                cell.alpha = alpha;
                cell.method = inputs.method;
                cell.selector = inputs.selector;
                cell.seed = seeds[si];
                if (cell.error.empty()) {
                    mean.mc_accuracy += cell.mc_accuracy;
                    mean.ce += cell.ce;
                    mean.kl += cell.kl;
                    mean.n_questions = cell.n_questions;
                    ++ok;
                }
                out.cells.push_back(std::move(cell));
            }
            if (ok > 0) {
                mean.mc_accuracy /= ok;
                mean.ce /= ok;
                mean.kl /= ok;
            } else {
                mean.error = "no successful seeds";
            }
            out.means.push_back(std::move(mean));
        }
    }
    return out;
}

TrainsizeResult trainsize_curve(const PipelineInputs & inputs, const std::vector<double> & fractions, std::uint64_t seed, int k,
                                double alpha, std::optional<HeadId> head, bool evaluate_metrics) {
    check_pipeline(inputs);
    if (fractions.empty()) {
        throw std::invalid_argument("trainsize_curve: empty fraction list");
    }
    for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0)) {
            throw std::invalid_argument("trainsize_curve: fractions must lie in (0, 1]");
        }
    }
    const auto & ds = *inputs.dataset;
    const auto plan = split_folds(*inputs.questions, 2, seed);
    const auto full_dev = development_records(ds, plan, 0);
    const auto full = fit_development(ds, full_dev, inputs, seed);

    TrainsizeResult out;
    out.head = head ? *head : select_heads(full.probes.accuracy, 1).heads.front();
    const auto & full_dir = full.directions.at(out.head).vector;
    if (full_dir.empty()) {
        throw std::invalid_argument("trainsize_curve: no full-data direction for the designated head");
    }

    // development questions in a seeded order; a fraction keeps a prefix
    std::vector<int> dev_questions;
    {
        std::set<int> seen;
        for (auto r : full_dev.all()) {
            if (seen.insert(ds.question_ids[r]).second) dev_questions.push_back(ds.question_ids[r]);
        }
        std::sort(dev_questions.begin(), dev_questions.end());
        Rng rng(seed ^ 0x7a11f00dULL);
        seeded_shuffle(dev_questions, rng);
    }
    const auto test_questions = questions_in_fold(*inputs.questions, plan, 0);

    for (double frac : fractions) {
        const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(frac * static_cast<double>(dev_questions.size()) - 1e-9)));
        const std::set<int> keep(dev_questions.begin(), dev_questions.begin() + static_cast<std::ptrdiff_t>(std::min(n, dev_questions.size())));
        DevelopmentRecords sub;
        for (auto r : full_dev.train) if (keep.count(ds.question_ids[r])) sub.train.push_back(r);
        for (auto r : full_dev.validation) if (keep.count(ds.question_ids[r])) sub.validation.push_back(r);
        const auto ytr = record_labels(ds, sub.train);
        if (std::count(ytr.begin(), ytr.end(), 1) == 0 || std::count(ytr.begin(), ytr.end(), 0) == 0) {
            throw std::invalid_argument("trainsize_curve: fraction " + std::to_string(frac) + " yields a single-class subsample");
        }
        const auto fit = fit_development(ds, sub, inputs, seed);
        TrainsizePoint pt;
        pt.fraction = frac;
        pt.n_questions = static_cast<int>(keep.size());
        const auto & dir = fit.directions.at(out.head).vector;
        pt.cosine = dir.empty() ? 0.0 : cosine_similarity(dir, full_dir);
        if (evaluate_metrics) {
            const auto spec = build_spec(selection_for(fit, inputs.selector, k, ds.head_dim), fit.directions, alpha);
            auto rep = evaluate(inputs, test_questions, &spec);
            rep.k = k;
            rep.alpha = alpha;
            rep.method = inputs.method;
            rep.selector = inputs.selector;
            rep.seed = seed;
            rep.fold = 0;
            rep.per_question.clear();
            pt.report = std::move(rep);
        }
        out.points.push_back(std::move(pt));
    }
    return out;
}

std::string report_to_json(const EvalReport & r) {
    json j;
    j["format"] = "iti-report";
    j["version"] = 1;
    j["mc_accuracy"] = r.mc_accuracy;
    j["ce"] = r.ce;
    j["kl"] = r.kl;
    j["n_questions"] = r.n_questions;
    if (r.no_comment >= 0) j["no_comment"] = r.no_comment;
    j["config"] = {{"k", r.k},
                   {"alpha", r.alpha},
                   {"method", std::string(to_string(r.method))},
                   {"selector", std::string(to_string(r.selector))},
                   {"seed", r.seed},
                   {"fold", r.fold}};
    j["categories"] = json::array();
    for (const auto & c : r.categories) {
        j["categories"].push_back({{"category", c.category}, {"count", c.count}, {"accuracy", c.accuracy}, {"shown", c.shown}});
    }
    if (!r.per_question.empty()) {
        j["per_question"] = json::array();
        for (const auto & q : r.per_question) {
            j["per_question"].push_back({{"question_id", q.question_id},
                                         {"category", q.category},
                                         {"correct", q.correct},
                                         {"best_correct", q.best_correct},
                                         {"best_incorrect", q.best_incorrect}});
        }
    }
    if (!r.error.empty()) j["error"] = r.error;
    return j.dump(1) + "\n";
}

} // namespace iti

#include "doctest.h"

#include "fixtures.hpp"
#include "iti/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace iti;
using namespace iti::testing;

namespace {

// constant next-token logits: 'y' scores 5, everything else 0
Model constant_logit_model() {
    const auto cfg = make_config(1, 2, 4, 258, 96);
    Model m = Model::zeros(cfg);
    std::fill(m.final_ln_gain.begin(), m.final_ln_gain.end(), 0.0f);
    m.final_ln_bias[0] = 1.0f;
    m.unembedding[static_cast<std::size_t>('y') * cfg.hidden_dim + 0] = 5.0f;
    return m;
}

Question mcq(int id, std::vector<std::string> correct, std::vector<std::string> incorrect, std::string cat = "c") {
    Question q;
    q.id = id;
    q.category = std::move(cat);
    q.question = "q" + std::to_string(id) + "?";
    q.correct_answers = std::move(correct);
    q.incorrect_answers = std::move(incorrect);
    q.best_answer = q.correct_answers.front();
    return q;
}

struct PipelineFixture {
    Model model;
    ByteTokenizer tok;
    std::vector<Question> questions;
    ActivationDataset dataset;
    PipelineInputs inputs;

    explicit PipelineFixture(int n_questions = 40) {
        const auto cfg = make_config(2, 2, 4, 258, 64);
        model = dense_random_model(cfg, 77);
        questions = synthetic_questions(n_questions);
        dataset = collect_activations(model, tok, flatten_qa_pairs(questions), questions).dataset;
        inputs.model = &model;
        inputs.tokenizer = &tok;
        inputs.questions = &questions;
        inputs.dataset = &dataset;
        inputs.eval.use_qa_primer = false;
        const auto text = tok.encode("a small corpus of plain text for scoring purposes only");
        inputs.ce_corpus = segment_corpus(text, 16);
        inputs.kl_prompts = inputs.ce_corpus;
    }
};

} // namespace

TEST_CASE("uniform model has cross-entropy ln V") {
    const auto cfg = make_config(1, 2, 4, 32, 16);
    auto m = dense_random_model(cfg, 3);
    std::fill(m.unembedding.begin(), m.unembedding.end(), 0.0f);
    Rng rng(3);
    std::vector<std::vector<Token>> corpus{random_tokens(16, 32, rng), random_tokens(5, 32, rng)};
    CHECK(cross_entropy(m, corpus) == doctest::Approx(std::log(32.0)).epsilon(1e-9));
    CHECK_THROWS(cross_entropy(m, {}));
    CHECK_THROWS(cross_entropy(m, {{1}}));
}

TEST_CASE("two-token KL") {
    const std::vector<double> p{0.5, 0.5}, q{0.9, 0.1};
    CHECK(kl_divergence(p, q) == doctest::Approx(0.5108256).epsilon(1e-6));
    CHECK(kl_divergence(p, p) == 0.0);
    CHECK(std::isinf(kl_divergence(p, std::vector<double>{1.0, 0.0})));
    CHECK(kl_divergence(std::vector<double>{1.0, 0.0}, q) == doctest::Approx(-std::log(0.9)));

    const auto toy = kl_toy();
    std::vector<std::vector<Token>> prompts{{0, 1, 1}, {1}};
    CHECK(kl_pre_post(toy.model, toy.spec, prompts) == doctest::Approx(0.5108256).epsilon(1e-5));
    const double reverse = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
    CHECK(kl_pre_post(toy.model, toy.spec, prompts, true) == doctest::Approx(reverse).epsilon(1e-5));
}

TEST_CASE("segment_corpus") {
    std::vector<Token> t(10);
    const auto s = segment_corpus(t, 4);
    REQUIRE(s.size() == 3);
    CHECK(s[2].size() == 2);
    CHECK(segment_corpus(std::vector<Token>(9), 4).size() == 2);
    CHECK_THROWS(segment_corpus(t, 1));
}

TEST_CASE("MC accuracy on the always-correct construction and ties") {
    const auto m = constant_logit_model();
    ByteTokenizer tok;
    EvalOptions opt;
    opt.use_qa_primer = false;
    std::vector<Question> qs{mcq(0, {"yy", "a"}, {"zz", "b"}), mcq(1, {"y"}, {"q", "r"})};
    CHECK(mc_accuracy(m, tok, qs, nullptr, opt) == 1.0);
    // equal scores count as incorrect
    std::vector<Question> tie{mcq(0, {"ab"}, {"ba"})};
    const auto r = mc_evaluate(m, tok, tie, nullptr, opt);
    CHECK(r.per_question[0].best_correct == r.per_question[0].best_incorrect);
    CHECK(r.accuracy == 0.0);
    // a long answer with one likely token loses on the sum but wins per token
    std::vector<Question> ln{mcq(0, {"yqqq"}, {"q"})};
    CHECK(mc_accuracy(m, tok, ln, nullptr, opt) == 0.0);
    opt.length_normalized = true;
    CHECK(mc_accuracy(m, tok, ln, nullptr, opt) == 1.0);
    std::vector<Question> bad{mcq(0, {"y"}, {})};
    CHECK_THROWS(mc_accuracy(m, tok, bad, nullptr, opt));
}

TEST_CASE("category report flags small categories") {
    std::vector<Question> qs;
    std::vector<QuestionResult> rs;
    for (int i = 0; i < 13; ++i) {
        const std::string cat = i < 10 ? "big" : "small";
        qs.push_back(mcq(i, {"a"}, {"b"}, cat));
        rs.push_back({i, cat, i % 2 == 0, 0, 0});
    }
    const auto rows = category_report(rs, qs, 10);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].category == "big");
    CHECK(rows[0].count == 10);
    CHECK(rows[0].shown);
    CHECK(rows[0].accuracy == doctest::Approx(0.5));
    CHECK_FALSE(rows[1].shown);
}

TEST_CASE("no-comment counter") {
    // a model whose greedy output is a fixed byte never says "I have no comment"
    const auto m = constant_logit_model();
    const auto cfg = make_config(1, 2, 4, 258, 1024);
    Model big = Model::zeros(cfg);
    big.final_ln_gain = m.final_ln_gain;
    big.final_ln_bias = m.final_ln_bias;
    big.unembedding = m.unembedding;
    std::vector<Question> qs{mcq(0, {"a"}, {"b"})};
    CHECK(count_no_comment(big, ByteTokenizer{}, qs, nullptr, 8) == 0);
}

TEST_CASE("cross-validation evaluates every question exactly once") {
    PipelineFixture fx(30);
    const auto cv = cross_validate(fx.inputs, 2, 5.0, 3, 11);
    std::vector<int> ids;
    for (const auto & q : cv.combined.per_question) ids.push_back(q.question_id);
    std::sort(ids.begin(), ids.end());
    REQUIRE(ids.size() == 30);
    for (int i = 0; i < 30; ++i) CHECK(ids[i] == i);
    CHECK(cv.folds.size() == 3);
    CHECK(cv.specs.size() == 3);
    for (const auto & s : cv.specs) CHECK(s.entries.size() == 2);
    CHECK(cv.combined.n_questions == 30);
    CHECK(cv.combined.kl > 0.0);
}

TEST_CASE("held-out activations never influence the fitted directions") {
    PipelineFixture fx(30);
    const auto plan = split_folds(fx.questions, 3, 5);
    for (auto method : {DirectionMethod::mass_mean, DirectionMethod::probe_weight}) {
        fx.inputs.method = method;
        const auto before = fit_fold(fx.dataset, plan, 1, fx.inputs, 5);
        auto mutated = fx.dataset;
        for (std::size_t r = 0; r < mutated.size(); ++r) {
            if (plan.fold_of_question(mutated.question_ids[r]) == 1) {
                for (auto & v : std::span<float>(mutated.values).subspan(r * mutated.record_stride(), mutated.record_stride())) v = -50.0f;
            }
        }
        const auto after = fit_fold(mutated, plan, 1, fx.inputs, 5);
        for (std::size_t i = 0; i < before.directions.heads.size(); ++i) {
            CHECK(before.directions.heads[i].vector == after.directions.heads[i].vector);
            CHECK(before.directions.heads[i].sigma == after.directions.heads[i].sigma);
        }
        CHECK(before.probes.accuracy.values == after.probes.accuracy.values);
    }
}

TEST_CASE("sweep grid has one cell per (K, alpha, seed)") {
    PipelineFixture fx(20);
    const auto res = sweep_grid(fx.inputs, {0, 1, 2}, {0.0, 3.0}, {1, 2}, 2);
    CHECK(res.cells.size() == 12);
    CHECK(res.means.size() == 6);
    // alpha 0 cells match the unintervened baseline
    const auto base = evaluate(fx.inputs, fx.questions, nullptr);
    for (const auto & c : res.cells) {
        CHECK(c.error.empty());
        if (c.alpha == 0.0 || c.k == 0) {
            CHECK(c.kl == 0.0);
            CHECK(c.ce == doctest::Approx(base.ce).epsilon(1e-12));
            CHECK(c.mc_accuracy == base.mc_accuracy);
        }
    }
    CHECK(res.cells[0].k == 0);
    CHECK(res.cells[0].seed == 1);
    CHECK(res.cells[1].seed == 2);
    CHECK(res.cells[2].alpha == 3.0);
}

TEST_CASE("point-wise and all-heads selectors run through cross-validation") {
    PipelineFixture fx(20);
    fx.inputs.selector = SelectorKind::point_wise;
    auto cv = cross_validate(fx.inputs, 1, 2.0, 2, 3);
    for (const auto & s : cv.specs) {
        std::size_t n = 0;
        for (const auto & e : s.entries)
            for (auto b : e.mask) n += b;
        CHECK(n == 4);
    }
    fx.inputs.selector = SelectorKind::all_heads;
    cv = cross_validate(fx.inputs, 0, 2.0, 2, 3);
    for (const auto & s : cv.specs) CHECK(s.entries.size() == 4);
}

TEST_CASE("trainsize at fraction 1 reproduces the full direction") {
    PipelineFixture fx(30);
    const auto res = trainsize_curve(fx.inputs, {0.5, 1.0}, 4, 1, 2.0, HeadId{1, 1}, true);
    REQUIRE(res.points.size() == 2);
    CHECK(res.head == HeadId{1, 1});
    CHECK(res.points[1].cosine == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.points[1].report.has_value());
    CHECK(res.points[0].n_questions < res.points[1].n_questions);
    CHECK_THROWS(trainsize_curve(fx.inputs, {}, 4, 1, 2.0));
    CHECK_THROWS(trainsize_curve(fx.inputs, {1.5}, 4, 1, 2.0));
}

TEST_CASE("report json carries the config") {
    EvalReport r;
    r.k = 3;
    r.alpha = 1.5;
    r.seed = 9;
    const auto s = report_to_json(r);
    CHECK(s.find("\"k\": 3") != std::string::npos);
    CHECK(s.find("\"seed\": 9") != std::string::npos);
}

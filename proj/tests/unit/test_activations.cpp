#include "doctest.h"

#include "fixtures.hpp"
#include "iti/activations.hpp"
#include "iti/tokenizer.hpp"

#include <cstring>
#include <filesystem>

using namespace iti;
using namespace iti::testing;

TEST_CASE("collect keeps the last-position head outputs of each QA prompt") {
    const auto cfg = make_config(2, 2, 4, 258, 64);
    const auto m = dense_random_model(cfg, 31);
    const auto qs = synthetic_questions(3, 1, 2);
    const auto pairs = flatten_qa_pairs(qs);
    ByteTokenizer tok;
    const auto res = collect_activations(m, tok, pairs, qs);
    REQUIRE(res.skipped.empty());
    const auto & ds = res.dataset;
    REQUIRE(ds.size() == pairs.size());
    CHECK(ds.n_layers == 2);
    CHECK(ds.n_heads == 2);
    CHECK(ds.head_dim == 4);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(ds.labels[i] == pairs[i].label);
        CHECK(ds.question_ids[i] == pairs[i].question_id);
        CHECK(ds.pair_indices[i] == i);
        const auto toks = tok.encode(format_input(qs[pairs[i].question_id].question, pairs[i].answer, PromptMode::probe));
        const auto tr = forward_with_taps(m, toks).trace;
        const int last = static_cast<int>(toks.size()) - 1;
        for (int l = 0; l < 2; ++l)
            for (int h = 0; h < 2; ++h) {
                const auto a = ds.head(i, l, h), b = tr.at(l, h, last);
                CHECK(std::equal(a.begin(), a.end(), b.begin()));
            }
    }
}

TEST_CASE("over-length inputs are skipped with a reason") {
    const auto cfg = make_config(1, 1, 2, 258, 24);
    const auto m = random_model(cfg, 32);
    auto qs = synthetic_questions(2);
    qs[1].correct_answers[0] = std::string(40, 'x');
    const auto pairs = flatten_qa_pairs(qs);
    const auto res = collect_activations(m, ByteTokenizer{}, pairs, qs);
    CHECK(res.dataset.size() == 3);
    REQUIRE(res.skipped.size() == 1);
    CHECK(res.skipped[0].pair_index == 2);
    CHECK(res.skipped[0].question_id == 1);
    CHECK_FALSE(res.skipped[0].reason.empty());
    CHECK(skipped_manifest(res.skipped).find("\t1\t") != std::string::npos);
    // record lookup drops the skipped pair
    const std::vector<std::size_t> want{0, 2, 3};
    CHECK(res.dataset.records_for_pairs(want) == std::vector<std::size_t>{0, 2});
}

TEST_CASE("activation file round trip and errors") {
    const auto qs = synthetic_questions(4);
    const auto ds = synthetic_dataset(qs, 2, 3, 4, 9, [](std::span<float> r, int, int, Rng & rng) {
        for (auto & v : r) v = static_cast<float>(standard_normal(rng));
    });
    const auto bytes = serialize_dataset(ds);
    CHECK(parse_dataset(bytes) == ds);
    CHECK(serialize_dataset(parse_dataset(bytes)) == bytes);

    CHECK_THROWS(parse_dataset(bytes.substr(0, bytes.size() - 1)));
    CHECK_THROWS(parse_dataset(bytes + "x"));
    CHECK_THROWS(parse_dataset("NOTACTS" + bytes.substr(7)));
    auto bad_version = bytes;
    const std::uint32_t v = 99;
    std::memcpy(bad_version.data() + 8, &v, 4);
    CHECK_THROWS(parse_dataset(bad_version));
    auto nan = bytes;
    const float q = std::nanf("");
    std::memcpy(nan.data() + nan.size() - 4, &q, 4);
    CHECK_THROWS(parse_dataset(nan));

    const auto dir = std::filesystem::temp_directory_path() / "iti_acts_test";
    std::filesystem::create_directories(dir);
    save_dataset(ds, dir / "a.bin");
    CHECK(load_dataset(dir / "a.bin") == ds);
    std::filesystem::remove_all(dir);
}

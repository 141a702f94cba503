#include "doctest.h"

#include "fixtures.hpp"
#include "iti/intervention.hpp"
#include "iti/spec.hpp"

using namespace iti;
using namespace iti::testing;

namespace {

InterventionSpec one_entry(double alpha, double sigma, std::vector<double> dir, HeadId h = {0, 1}) {
    InterventionSpec s;
    s.alpha = alpha;
    s.entries.push_back({h, std::move(dir), sigma, {}});
    return s;
}

} // namespace

TEST_CASE("intervene_layer adds alpha * sigma * direction to the selected head only") {
    const int H = 3, D = 4;
    std::vector<float> x(H * D);
    for (int i = 0; i < H * D; ++i) x[i] = 0.25f * i;
    const auto spec = one_entry(3.0, 2.0, {1, 0, 0, 0});
    const auto y = intervene_layer(x, 0, spec, H, D);
    for (int i = 0; i < H * D; ++i) {
        const float expect = (i == D) ? x[i] + 6.0f : x[i];
        CHECK(y[i] == expect);
    }
    // other layers untouched
    CHECK(intervene_layer(x, 1, spec, H, D) == x);
    CHECK_THROWS(intervene_layer(std::vector<float>(5), 0, spec, H, D));
}

TEST_CASE("no-op specs") {
    CHECK(one_entry(0.0, 2.0, {1, 0}).is_noop());
    CHECK(InterventionSpec{}.is_noop());
    CHECK_FALSE(one_entry(1.0, 2.0, {1, 0}).is_noop());
}

TEST_CASE("spec validation") {
    CHECK_NOTHROW(one_entry(1, 1, {0.6, 0.8}).validate(2, 2, 2));
    CHECK_THROWS(one_entry(1, 1, {0.6, 0.8}, {2, 0}).validate(2, 2, 2));
    CHECK_THROWS(one_entry(1, 1, {0.6, 0.8, 0.0}).validate(2, 2, 2));
    CHECK_THROWS(one_entry(1, 1, {1, 1}).validate(2, 2, 2));
    CHECK_THROWS(one_entry(-1, 1, {1, 0}).validate(2, 2, 2));
    CHECK_THROWS(one_entry(1, -1, {1, 0}).validate(2, 2, 2));
    auto dup = one_entry(1, 1, {1, 0});
    dup.entries.push_back(dup.entries.front());
    CHECK_THROWS(dup.validate(2, 2, 2));
}

TEST_CASE("spec json round trip") {
    Rng rng(4);
    auto s = random_spec(make_config(2, 4, 8, 10, 10), rng, 5, 12.5);
    s.selector = SelectorKind::point_wise;
    s.entries[0].mask = {1, 0, 1, 0, 0, 0, 0, 1};
    s.provenance["seed"] = "4";
    const auto back = spec_from_json(spec_to_json(s));
    CHECK(back.alpha == s.alpha);
    CHECK(back.selector == s.selector);
    CHECK(back.provenance == s.provenance);
    REQUIRE(back.entries.size() == s.entries.size());
    for (std::size_t i = 0; i < s.entries.size(); ++i) {
        CHECK(back.entries[i].head == s.entries[i].head);
        CHECK(back.entries[i].direction == s.entries[i].direction);
        CHECK(back.entries[i].sigma == s.entries[i].sigma);
        CHECK(back.entries[i].mask == s.entries[i].mask);
    }
    CHECK_THROWS(spec_from_json("{\"format\":\"something-else\"}"));
    CHECK_THROWS(spec_from_json("not json"));
}

TEST_CASE("baked bias equals the hooked forward pass") {
    const auto cfg = make_config(2, 4, 4, 30, 16);
    const auto m = dense_random_model(cfg, 21);
    Rng rng(21);
    const auto spec = random_spec(cfg, rng, 3, 4.0);
    const auto baked = bake_bias(m, spec);
    const auto toks = random_tokens(10, cfg.vocab_size, rng);
    const auto a = forward(m, toks, {&spec}).logits;
    const auto b = forward(baked, toks).logits;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-5);
}

TEST_CASE("baking twice doubles the bias shift; alpha 0 leaves weights unchanged") {
    const auto cfg = make_config(2, 2, 4, 30, 16);
    const auto m = random_model(cfg, 22);
    Rng rng(22);
    const auto spec = random_spec(cfg, rng, 2, 1.75);
    const auto once = bake_bias(m, spec);
    const auto twice = bake_bias(once, spec);
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int i = 0; i < cfg.hidden_dim; ++i) {
            CHECK(twice.layers[l].out_bias[i] == 2.0f * once.layers[l].out_bias[i]);
        }
    }
    auto zero = spec;
    zero.alpha = 0;
    CHECK(bake_bias(m, zero) == m);
}

TEST_CASE("layer_bias_delta matches an independent Q * shift product") {
    const auto cfg = make_config(1, 3, 4, 10, 8);
    const auto m = random_model(cfg, 23);
    const auto spec = one_entry(2.0, 1.5, {0.5, 0.5, 0.5, 0.5}, {0, 2});
    const auto delta = layer_bias_delta(m, spec, 0);
    const int A = cfg.n_heads * cfg.head_dim;
    for (int i = 0; i < cfg.hidden_dim; ++i) {
        double acc = 0;
        for (int d = 0; d < 4; ++d) acc += m.layers[0].out_proj[i * A + 2 * 4 + d] * 1.5;
        CHECK(delta[i] == doctest::Approx(acc).epsilon(1e-6));
    }
}

#include "doctest.h"

#include "fixtures.hpp"
#include "iti/directions.hpp"

#include <cmath>

using namespace iti;
using namespace iti::testing;

namespace {

// labelled rows with class means +/- mu / 2 plus unit noise
void planted_means(int n, const std::vector<double> & mu, std::uint64_t seed, FeatureMatrix & x, std::vector<int> & y) {
    Rng rng(seed);
    const std::size_t d = mu.size();
    x = FeatureMatrix(static_cast<std::size_t>(n), d);
    y.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        y[i] = i % 2;
        auto r = x.row(i);
        for (std::size_t j = 0; j < d; ++j) r[j] = standard_normal(rng) + (y[i] ? 0.5 : -0.5) * mu[j];
    }
}

// pairs sharing a per-question base of scale base_sd, separated by +/- s * u
void planted_pairs(int n, const std::vector<double> & u, double s, double base_sd, std::uint64_t seed, FeatureMatrix & t,
                   FeatureMatrix & f) {
    Rng rng(seed);
    const std::size_t d = u.size();
    t = FeatureMatrix(static_cast<std::size_t>(n), d);
    f = FeatureMatrix(static_cast<std::size_t>(n), d);
    for (int i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double base = base_sd * standard_normal(rng);
            t.row(i)[j] = base + s * u[j] + 0.3 * standard_normal(rng);
            f.row(i)[j] = base - s * u[j] + 0.3 * standard_normal(rng);
        }
    }
}

} // namespace

TEST_CASE("direction method names") {
    for (auto m : {DirectionMethod::probe_weight, DirectionMethod::mass_mean, DirectionMethod::ccs, DirectionMethod::random}) {
        CHECK(parse_direction_method(to_string(m)) == m);
    }
    CHECK_THROWS(parse_direction_method("pca"));
}

TEST_CASE("mass-mean recovers a planted mean difference") {
    Rng rng(1);
    const auto mu = random_unit(8, rng);
    FeatureMatrix x;
    std::vector<int> y;
    std::vector<double> scaled(mu);
    for (auto & v : scaled) v *= 2.0;
    planted_means(1000, scaled, 2, x, y);
    CHECK(cosine_similarity(mass_mean_direction(x, y), mu) >= 0.99);
}

TEST_CASE("mass-mean is antisymmetric in the labels") {
    FeatureMatrix x;
    std::vector<int> y;
    planted_means(50, {1, 2, 3}, 3, x, y);
    const auto a = mass_mean_direction(x, y);
    for (auto & v : y) v = 1 - v;
    const auto b = mass_mean_direction(x, y);
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == doctest::Approx(-b[j]));
}

TEST_CASE("mass-mean errors") {
    FeatureMatrix x(4, 2);
    x.data = {1, 1, 1, 1, 1, 1, 1, 1};
    CHECK_THROWS_AS(mass_mean_direction(x, std::vector<int>{1, 0, 1, 0}), std::invalid_argument);
    CHECK_THROWS_AS(mass_mean_direction(x, std::vector<int>{1, 1, 1, 1}), std::invalid_argument);
}

TEST_CASE("probe-weight direction normalizes theta") {
    Probe p;
    p.theta = {3, 4, 0, 0};
    const auto d = probe_weight_direction(p);
    CHECK(d[0] == doctest::Approx(0.6));
    CHECK(d[1] == doctest::Approx(0.8));
    p.theta = {0, 0};
    CHECK_THROWS(probe_weight_direction(p));
}

TEST_CASE("random directions are unit, seeded and isotropic") {
    CHECK(random_direction(8, 5) == random_direction(8, 5));
    CHECK(random_direction(8, 5) != random_direction(8, 6));
    std::vector<double> mean(8, 0.0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto d = random_direction(8, static_cast<std::uint64_t>(i));
        CHECK(norm2(d) == doctest::Approx(1.0));
        for (int j = 0; j < 8; ++j) mean[j] += d[j] / n;
    }
    CHECK(norm2(mean) <= 0.05);
}

TEST_CASE("CCS recovers a planted pair direction with the right sign") {
    Rng rng(7);
    const auto u = random_unit(8, rng);
    FeatureMatrix t, f;
    planted_pairs(300, u, 1.0, 0.5, 8, t, f);
    CcsSettings s;
    s.seed = 9;
    const auto r = ccs_direction(t, f, s);
    CHECK(cosine_similarity(r.direction, u) >= 0.9);
    CHECK_FALSE(r.low_confidence);
    CHECK(r.loss < s.low_confidence_loss);
    // sign resolution is a pure function of the labels: swapping the roles flips it
    const auto r2 = ccs_direction(f, t, s);
    CHECK(cosine_similarity(r2.direction, u) <= -0.9);
}

TEST_CASE("CCS on unstructured noise reports low confidence") {
    Rng rng(10);
    for (int n : {50, 200}) {
        FeatureMatrix t(n, 8), f(n, 8);
        for (auto & v : t.data) v = standard_normal(rng);
        for (auto & v : f.data) v = standard_normal(rng);
        CcsSettings s;
        s.seed = 3;
        const auto r = ccs_direction(t, f, s);
        CHECK(r.low_confidence);
    }
}

TEST_CASE("CCS input errors") {
    FeatureMatrix a(3, 2), b(2, 2);
    CHECK_THROWS(ccs_direction(a, b));
    FeatureMatrix c(3, 2);
    CHECK_THROWS(ccs_direction(a, c)); // all pairs identical
}

TEST_CASE("sigma is the population std of the projection") {
    const auto qs = synthetic_questions(2);
    const auto ds = synthetic_dataset(qs, 1, 1, 2, 1, [](std::span<float> r, int label, int qid, Rng &) {
        r[0] = static_cast<float>(label + 2 * qid);
        r[1] = 5.0f;
    });
    // projections onto e_1: 1, 0, 3, 2
    const std::vector<std::size_t> recs{0, 1, 2, 3};
    CHECK(estimate_sigma(ds, {0, 0}, std::vector<double>{1, 0}, recs) == doctest::Approx(std::sqrt(1.25)));
    CHECK(estimate_sigma(ds, {0, 0}, std::vector<double>{0, 1}, recs) == 0.0);
    CHECK_THROWS(estimate_sigma(ds, {0, 0}, std::vector<double>{1, 1}, recs));
    CHECK_THROWS(estimate_sigma(ds, {0, 0}, std::vector<double>{1, 0}, std::vector<std::size_t>{}));
}

TEST_CASE("compute_directions covers every head and records failures") {
    const auto qs = synthetic_questions(150);
    auto ds = synthetic_dataset(qs, 2, 2, 4, 2, planted_head_filler(2, 4, {1, 0}, {0, 1, 0, 0}, 1.0));
    // head (0, 1) constant: no direction
    for (std::size_t r = 0; r < ds.size(); ++r)
        for (auto & v : ds.head(r, 0, 1)) v = 1.0f;
    const auto plan = split_folds(qs, 2, 4);
    for (auto m : {DirectionMethod::mass_mean, DirectionMethod::probe_weight, DirectionMethod::ccs, DirectionMethod::random}) {
        DirectionOptions opt;
        opt.method = m;
        opt.seed = 5;
        opt.ccs.restarts = 2;
        opt.ccs.iterations = 300;
        const auto set = compute_directions(ds, plan, 1, opt);
        CHECK(set.heads.size() == 4);
        if (m != DirectionMethod::random) {
            CHECK(set.at({0, 1}).vector.empty());
            CHECK_FALSE(set.at({0, 1}).error.empty());
            CHECK(cosine_similarity(set.at({1, 0}).vector, std::vector<double>{0, 1, 0, 0}) > 0.9);
        }
        CHECK(set.at({1, 0}).sigma > 0.0);
        const auto back = directions_from_json(directions_to_json(set));
        CHECK(back.at({1, 0}).vector == set.at({1, 0}).vector);
        CHECK(back.at({1, 0}).sigma == set.at({1, 0}).sigma);
        CHECK(back.method == m);
    }
}

#pragma once

// Fixtures and independent oracles shared by the unit and acceptance tests.

#include "iti/activations.hpp"
#include "iti/common.hpp"
#include "iti/data.hpp"
#include "iti/model.hpp"
#include "iti/spec.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace iti::testing {

// random_model() plus nonzero layer-norm gains/biases and MLP biases
inline Model dense_random_model(const ModelConfig & c, std::uint64_t seed, float scale = 0.2f) {
    Model m = random_model(c, seed, scale);
    Rng rng(seed ^ 0x51ed2701ULL);
    auto jitter = [&](std::vector<float> & v, float base, float amp) {
        for (auto & x : v) x = base + amp * static_cast<float>(standard_normal(rng));
    };
    for (auto & l : m.layers) {
        jitter(l.ln1_gain, 1.0f, 0.1f);
        jitter(l.ln1_bias, 0.0f, 0.1f);
        jitter(l.ln2_gain, 1.0f, 0.1f);
        jitter(l.ln2_bias, 0.0f, 0.1f);
        jitter(l.mlp_in_bias, 0.0f, 0.1f);
        jitter(l.mlp_out_bias, 0.0f, 0.1f);
    }
    jitter(m.final_ln_gain, 1.0f, 0.1f);
    jitter(m.final_ln_bias, 0.0f, 0.1f);
    return m;
}

inline std::vector<double> random_unit(int dim, Rng & rng) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    double n = 0.0;
    while (n < 1e-6) {
        for (auto & x : v) x = standard_normal(rng);
        n = norm2(v);
    }
    for (auto & x : v) x /= n;
    return v;
}

inline InterventionSpec random_spec(const ModelConfig & c, Rng & rng, int n_entries, double alpha) {
    std::vector<HeadId> all;
    for (int l = 0; l < c.n_layers; ++l)
        for (int h = 0; h < c.n_heads; ++h) all.push_back({l, h});
    seeded_shuffle(all, rng);
    all.resize(std::min<std::size_t>(all.size(), static_cast<std::size_t>(n_entries)));
    std::sort(all.begin(), all.end());
    InterventionSpec s;
    s.alpha = alpha;
    for (auto h : all) {
        s.entries.push_back({h, random_unit(c.head_dim, rng), 0.5 + 1.5 * uniform_unit(rng), {}});
    }
    return s;
}

inline std::vector<Token> random_tokens(int n, int vocab, Rng & rng) {
    std::vector<Token> t(static_cast<std::size_t>(n));
    for (auto & x : t) x = static_cast<Token>(uniform_index(rng, static_cast<std::uint64_t>(vocab)));
    return t;
}

// ---- reference forward pass ----------------------------------------------------
// Straightforward double-precision decoder written without sharing any code
// with the library; used to cross-check logits and stream deltas.

struct Reference {
    std::vector<std::vector<double>> logits;                    // [t][v]
    std::vector<std::vector<std::vector<double>>> attn_delta;   // [l][t][e]
};

inline std::vector<double> ref_layer_norm(const std::vector<double> & x, const std::vector<float> & g, const std::vector<float> & b) {
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g[i] + b[i];
    return y;
}

inline std::vector<double> ref_matvec(const std::vector<float> & w, const std::vector<double> & x, std::size_t rows) {
    std::vector<double> y(rows, 0.0);
    const std::size_t cols = x.size();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) y[r] += static_cast<double>(w[r * cols + c]) * x[c];
    return y;
}

inline Reference reference_forward(const Model & m, const std::vector<Token> & tokens, const InterventionSpec * spec = nullptr) {
    const auto & c = m.config;
    const std::size_t T = tokens.size(), E = c.hidden_dim, H = c.n_heads, D = c.head_dim, A = H * D;
    std::vector<std::vector<double>> x(T, std::vector<double>(E));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < E; ++i)
            x[t][i] = m.token_embedding[tokens[t] * E + i] + m.position_embedding[t * E + i];
    Reference ref;
    for (int l = 0; l < c.n_layers; ++l) {
        const auto & w = m.layers[l];
        std::vector<std::vector<double>> q(T), k(T), v(T);
        for (std::size_t t = 0; t < T; ++t) {
            const auto n = ref_layer_norm(x[t], w.ln1_gain, w.ln1_bias);
            q[t] = ref_matvec(w.query_proj, n, A);
            k[t] = ref_matvec(w.key_proj, n, A);
            v[t] = ref_matvec(w.value_proj, n, A);
        }
        std::vector<std::vector<double>> delta(T, std::vector<double>(E, 0.0));
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> heads(A, 0.0);
            for (std::size_t h = 0; h < H; ++h) {
                std::vector<double> s(t + 1);
                for (std::size_t u = 0; u <= t; ++u) {
                    double d = 0.0;
                    for (std::size_t j = 0; j < D; ++j) d += q[t][h * D + j] * k[u][h * D + j];
                    s[u] = d / std::sqrt(static_cast<double>(D));
                }
                const double mx = *std::max_element(s.begin(), s.end());
                double z = 0.0;
                for (auto & e : s) z += (e = std::exp(e - mx));
                for (std::size_t u = 0; u <= t; ++u)
                    for (std::size_t j = 0; j < D; ++j) heads[h * D + j] += s[u] / z * v[u][h * D + j];
                if (spec && spec->alpha != 0.0) {
                    if (const auto * e = spec->find({l, static_cast<int>(h)})) {
                        for (std::size_t j = 0; j < D; ++j) heads[h * D + j] += spec->alpha * e->sigma * e->direction[j];
                    }
                }
            }
            delta[t] = ref_matvec(w.out_proj, heads, E);
            for (std::size_t i = 0; i < E; ++i) delta[t][i] += w.out_bias[i];
        }
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t i = 0; i < E; ++i) x[t][i] += delta[t][i];
            const auto n = ref_layer_norm(x[t], w.ln2_gain, w.ln2_bias);
            auto hid = ref_matvec(w.mlp_in, n, c.mlp_dim);
            for (std::size_t i = 0; i < hid.size(); ++i) {
                const double a = hid[i] + w.mlp_in_bias[i];
                hid[i] = 0.5 * a * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (a + 0.044715 * a * a * a)));
            }
            const auto out = ref_matvec(w.mlp_out, hid, E);
            for (std::size_t i = 0; i < E; ++i) x[t][i] += out[i] + w.mlp_out_bias[i];
        }
        ref.attn_delta.push_back(std::move(delta));
    }
    for (std::size_t t = 0; t < T; ++t) {
        const auto n = ref_layer_norm(x[t], m.final_ln_gain, m.final_ln_bias);
        ref.logits.push_back(ref_matvec(m.unembedding, n, c.vocab_size));
    }
    return ref;
}

// ---- synthetic question sets and activation datasets ---------------------------------

// n questions, each with n_true correct and n_false incorrect answers
inline std::vector<Question> synthetic_questions(int n, int n_true = 1, int n_false = 1) {
    std::vector<Question> qs;
    for (int i = 0; i < n; ++i) {
        Question q;
        q.id = i;
        q.category = i % 3 == 0 ? "alpha" : (i % 3 == 1 ? "beta" : "gamma");
        q.question = "question " + std::to_string(i) + "?";
        for (int a = 0; a < n_true; ++a) q.correct_answers.push_back("yes " + std::to_string(a));
        for (int a = 0; a < n_false; ++a) q.incorrect_answers.push_back("no " + std::to_string(a));
        q.best_answer = q.correct_answers.front();
        qs.push_back(std::move(q));
    }
    return qs;
}

// One record per flattened pair; fill(record_values, label, question_id, rng)
// writes the L*H*D activations.
using RecordFiller = std::function<void(std::span<float>, int, int, Rng &)>;

inline ActivationDataset synthetic_dataset(const std::vector<Question> & qs, int L, int H, int D, std::uint64_t seed,
                                           const RecordFiller & fill) {
    ActivationDataset ds;
    ds.n_layers = L;
    ds.n_heads = H;
    ds.head_dim = D;
    Rng rng(seed);
    const auto pairs = flatten_qa_pairs(qs);
    std::vector<float> rec(static_cast<std::size_t>(L) * H * D);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        fill(rec, pairs[i].label, pairs[i].question_id, rng);
        ds.append(pairs[i].label, pairs[i].question_id, static_cast<std::uint32_t>(i), rec);
    }
    return ds;
}

// Standard normal noise everywhere, plus label * signal * dir on one head.
inline RecordFiller planted_head_filler(int H, int D, HeadId planted, std::vector<double> dir, double signal) {
    return [=](std::span<float> rec, int label, int, Rng & rng) {
        for (auto & v : rec) v = static_cast<float>(standard_normal(rng));
        const std::size_t off = (static_cast<std::size_t>(planted.layer) * H + planted.head) * D;
        const double s = label ? signal : -signal;
        for (int j = 0; j < D; ++j) rec[off + j] += static_cast<float>(s * dir[j]);
    };
}

// ---- analytic toy models ---------------------------------------------------------------

// Byte-level model whose final stream is gap * e_b at every position, so the
// greedy answer is 'F'. Head (1, 2) writes its shift into coordinate a through
// an output projection Q = e_a d^T, so a shift of s along d makes the stream
// gap * e_b + s * e_a and the answer flips to 'T' exactly when s > gap.
struct TruthToy {
    Model model;
    HeadId head{1, 2};
    std::vector<double> direction;
    int coord_true = 3;   // a
    int coord_false = 17; // b
    Token token_true = 'T';
    Token token_false = 'F';
};

inline TruthToy truth_toy(double gap) {
    TruthToy toy;
    const auto cfg = make_config(2, 4, 8, 258, 64);
    toy.model = Model::zeros(cfg);
    const int E = cfg.hidden_dim, D = cfg.head_dim, A = cfg.n_heads * D;
    for (int v = 0; v < cfg.vocab_size; ++v) toy.model.token_embedding[static_cast<std::size_t>(v) * E + toy.coord_false] = static_cast<float>(gap);
    toy.direction.assign(D, 0.0);
    for (int j = 0; j < D; ++j) toy.direction[j] = (j % 2 ? -1.0 : 1.0) / std::sqrt(static_cast<double>(D));
    auto & out = toy.model.layers[toy.head.layer].out_proj;
    for (int j = 0; j < D; ++j) {
        out[static_cast<std::size_t>(toy.coord_true) * A + toy.head.head * D + j] = static_cast<float>(toy.direction[j]);
    }
    toy.model.unembedding[static_cast<std::size_t>(toy.token_true) * E + toy.coord_true] = 10.0f;
    toy.model.unembedding[static_cast<std::size_t>(toy.token_false) * E + toy.coord_false] = 10.0f;
    return toy;
}

inline InterventionSpec toy_spec(const TruthToy & toy, double alpha, double sigma) {
    InterventionSpec s;
    s.alpha = alpha;
    s.entries.push_back({toy.head, toy.direction, sigma, {}});
    return s;
}

// Two-token model: zero stream gives a uniform next-token distribution; a
// shift along head (0, 0) raises token 0's logit to exactly ln 9 above token 1.
struct KlToy {
    Model model;
    InterventionSpec spec;
};

inline KlToy kl_toy(double shift = 1.0) {
    KlToy toy;
    const auto cfg = make_config(1, 2, 4, 2, 16);
    toy.model = Model::zeros(cfg);
    const int E = cfg.hidden_dim, A = cfg.n_heads * cfg.head_dim;
    // Q_0^0 maps the first direction coordinate to stream coordinate 0
    toy.model.layers[0].out_proj[0 * A + 0] = 1.0f;
    // layer-normed value of coordinate 0 for stream shift * e_0
    const double n = E;
    const double mean = shift / n;
    const double var = ((shift - mean) * (shift - mean) + (n - 1) * mean * mean) / n;
    const double normed = (shift - mean) / std::sqrt(var + 1e-5);
    toy.model.unembedding[0] = static_cast<float>(std::log(9.0) / normed);
    toy.spec.alpha = 1.0;
    toy.spec.entries.push_back({{0, 0}, {1.0, 0.0, 0.0, 0.0}, shift, {}});
    return toy;
}

} // namespace iti::testing

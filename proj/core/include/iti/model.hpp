#pragma once

#include "iti/common.hpp"
#include "iti/spec.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace iti {

struct ModelConfig {
    int n_layers    = 1;
    int n_heads     = 1;
    int head_dim    = 1;
    int hidden_dim  = 1; // n_heads * head_dim
    int vocab_size  = 1;
    int max_seq_len = 1;
    int mlp_dim     = 4;

    // throws std::invalid_argument when a count is < 1 or hidden_dim != n_heads * head_dim
    void validate() const;

    friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

ModelConfig make_config(int n_layers, int n_heads, int head_dim, int vocab_size, int max_seq_len, int mlp_dim = 0);

// Weight matrices are row-major (out x in). For head h the rows
// [h*D, (h+1)*D) of value_proj form P_l^h and the matching columns of
// out_proj form Q_l^h.
struct LayerWeights {
    std::vector<float> ln1_gain, ln1_bias;             // hidden
    std::vector<float> query_proj, key_proj, value_proj; // (H*D) x hidden
    std::vector<float> out_proj;                        // hidden x (H*D)
    std::vector<float> out_bias;                        // hidden; zero unless baked
    std::vector<float> ln2_gain, ln2_bias;              // hidden
    std::vector<float> mlp_in, mlp_in_bias;             // mlp x hidden, mlp
    std::vector<float> mlp_out, mlp_out_bias;           // hidden x mlp, hidden

    friend bool operator==(const LayerWeights &, const LayerWeights &) = default;
};

struct Model {
    ModelConfig config;
    std::vector<float> token_embedding;    // vocab x hidden
    std::vector<float> position_embedding; // max_seq_len x hidden
    std::vector<LayerWeights> layers;
    std::vector<float> final_ln_gain, final_ln_bias; // hidden
    std::vector<float> unembedding;                   // vocab x hidden

    // Model with every parameter sized for config and set to zero, layer-norm
    // gains set to one.
    static Model zeros(const ModelConfig & config);

    // Q_l^h applied to a head_dim vector, accumulated into out (hidden).
    void add_head_output(int layer, int head, std::span<const float> head_vec, std::span<double> out) const;

    friend bool operator==(const Model &, const Model &) = default;
};

// Gaussian weights with the given scale, seeded; biases zero.
Model random_model(const ModelConfig & config, std::uint64_t seed, float scale = 0.2f);

// ---- file format -----------------------------------------------------------
// One text line "itimodel v1 key=value ... order=<names>\n" followed by the
// parameters as little-endian float32 in the order named by the header.

Model load_model(const std::filesystem::path & path);
void save_model(const Model & model, const std::filesystem::path & path);
std::string serialize_model(const Model & model);
Model parse_model(std::string_view bytes);

// ---- forward pass -----------------------------------------------------------

// Head activations x_l^h, layout [layer][head][position][dim].
struct ActivationTrace {
    int n_layers = 0, n_heads = 0, n_positions = 0, head_dim = 0;
    std::vector<float> values;

    std::span<const float> at(int layer, int head, int position) const;
    std::span<float> at(int layer, int head, int position);
};

// Residual stream snapshots, each n_positions x hidden.
struct StreamTrace {
    std::vector<std::vector<float>> layer_input;   // x_l
    std::vector<std::vector<float>> after_attention; // x_l + MHA delta
    std::vector<std::vector<float>> mlp_delta;
    std::vector<float> final_stream;                 // before final norm
};

struct ForwardOptions {
    const InterventionSpec * spec = nullptr;
    bool capture_trace   = false;
    bool capture_streams = false;
};

struct ForwardResult {
    int n_positions = 0;
    std::vector<float> logits; // n_positions x vocab
    std::optional<ActivationTrace> trace;
    std::optional<StreamTrace> streams;

    std::span<const float> logits_at(int position, int vocab) const;
};

// Runs the decoder over tokens. The trace holds the head activations that feed
// the output projection, i.e. after any intervention shift.
ForwardResult forward(const Model & model, std::span<const Token> tokens, const ForwardOptions & options = {});

struct TapResult {
    std::vector<float> logits;
    ActivationTrace trace;
};
TapResult forward_with_taps(const Model & model, std::span<const Token> tokens);

std::vector<double> softmax(std::span<const float> logits);
std::vector<double> log_softmax(std::span<const float> logits);

std::vector<double> next_token_distribution(const Model & model, std::span<const Token> tokens,
                                            const InterventionSpec * spec = nullptr);

std::vector<Token> generate_greedy(const Model & model, std::span<const Token> prompt, int max_new,
                                   const InterventionSpec * spec = nullptr);

// Per-step final-position logits captured alongside the greedy continuation.
struct GreedyTrace {
    std::vector<Token> tokens;
    std::vector<std::vector<float>> step_logits;
};
GreedyTrace generate_greedy_traced(const Model & model, std::span<const Token> prompt, int max_new,
                                   const InterventionSpec * spec = nullptr);

// Sum of log p(continuation[i] | prompt ++ continuation[:i]); 0 for an empty continuation.
double conditional_logprob(const Model & model, std::span<const Token> prompt, std::span<const Token> continuation,
                           const InterventionSpec * spec = nullptr);

} // namespace iti

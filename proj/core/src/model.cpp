#include "iti/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "model files are little-endian float32");

namespace iti {

namespace {

constexpr double kLayerNormEps = 1e-5;

constexpr const char * kMagic = "itimodel";
constexpr const char * kVersion = "v1";
constexpr const char * kOrder =
    "token_embedding,position_embedding,"
    "layers[ln1_gain,ln1_bias,query_proj,key_proj,value_proj,out_proj,out_bias,ln2_gain,ln2_bias,"
    "mlp_in,mlp_in_bias,mlp_out,mlp_out_bias],final_ln_gain,final_ln_bias,unembedding";

// Parameter tensors in file order, paired with their expected element counts.
template <typename M, typename F>
void for_each_param(M & model, F && fn) {
    const auto & c = model.config;
    const std::size_t V = c.vocab_size, S = c.max_seq_len, E = c.hidden_dim, A = static_cast<std::size_t>(c.n_heads) * c.head_dim,
                      F_ = c.mlp_dim;
    fn(model.token_embedding, V * E);
    fn(model.position_embedding, S * E);
    for (auto & l : model.layers) {
        fn(l.ln1_gain, E);
        fn(l.ln1_bias, E);
        fn(l.query_proj, A * E);
        fn(l.key_proj, A * E);
        fn(l.value_proj, A * E);
        fn(l.out_proj, E * A);
        fn(l.out_bias, E);
        fn(l.ln2_gain, E);
        fn(l.ln2_bias, E);
        fn(l.mlp_in, F_ * E);
        fn(l.mlp_in_bias, F_);
        fn(l.mlp_out, E * F_);
        fn(l.mlp_out_bias, E);
    }
    fn(model.final_ln_gain, E);
    fn(model.final_ln_bias, E);
    fn(model.unembedding, V * E);
}

// y = W x (+ b), W row-major out x in, accumulated in double
void linear(const float * W, const float * bias, const float * x, int out, int in, float * y) {
    for (int o = 0; o < out; ++o) {
        const float * row = W + static_cast<std::size_t>(o) * in;
        double acc = bias ? static_cast<double>(bias[o]) : 0.0;
        for (int i = 0; i < in; ++i) {
            acc += static_cast<double>(row[i]) * static_cast<double>(x[i]);
        }
        y[o] = static_cast<float>(acc);
    }
}

void layer_norm(const float * x, const float * gain, const float * bias, int n, float * y) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) {
        mean += x[i];
    }
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = x[i] - mean;
        var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int i = 0; i < n; ++i) {
        y[i] = static_cast<float>((x[i] - mean) * inv * gain[i] + bias[i]);
    }
}

float gelu(float v) {
    const double x = v;
    constexpr double k = 0.7978845608028654; // sqrt(2/pi)
    return static_cast<float>(0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x))));
}

void check_tokens(const ModelConfig & c, std::span<const Token> tokens) {
    if (tokens.empty()) {
        throw std::invalid_argument("forward: empty input");
    }
    if (static_cast<int>(tokens.size()) > c.max_seq_len) {
        throw std::invalid_argument("forward: input longer than max_seq_len");
    }
    for (Token t : tokens) {
        if (t < 0 || t >= c.vocab_size) {
            throw std::invalid_argument("forward: token id out of range");
        }
    }
}

} // namespace

void ModelConfig::validate() const {
    if (n_layers < 1 || n_heads < 1 || head_dim < 1 || hidden_dim < 1 || vocab_size < 1 || max_seq_len < 1 || mlp_dim < 1) {
        throw std::invalid_argument("model config: all counts must be >= 1");
    }
    if (hidden_dim != n_heads * head_dim) {
        throw std::invalid_argument("model config: hidden_dim must equal n_heads * head_dim");
    }
}

ModelConfig make_config(int n_layers, int n_heads, int head_dim, int vocab_size, int max_seq_len, int mlp_dim) {
    ModelConfig c;
    c.n_layers = n_layers;
    c.n_heads = n_heads;
    c.head_dim = head_dim;
    c.hidden_dim = n_heads * head_dim;
    c.vocab_size = vocab_size;
    c.max_seq_len = max_seq_len;
    c.mlp_dim = mlp_dim > 0 ? mlp_dim : 4 * c.hidden_dim;
    c.validate();
    return c;
}

Model Model::zeros(const ModelConfig & config) {
    config.validate();
    Model m;
    m.config = config;
    m.layers.resize(config.n_layers);
    for_each_param(m, [](std::vector<float> & v, std::size_t n) { v.assign(n, 0.0f); });
    for (auto & l : m.layers) {
        std::fill(l.ln1_gain.begin(), l.ln1_gain.end(), 1.0f);
        std::fill(l.ln2_gain.begin(), l.ln2_gain.end(), 1.0f);
    }
    std::fill(m.final_ln_gain.begin(), m.final_ln_gain.end(), 1.0f);
    return m;
}

void Model::add_head_output(int layer, int head, std::span<const float> head_vec, std::span<double> out) const {
    const int E = config.hidden_dim, D = config.head_dim, A = config.n_heads * config.head_dim;
    const auto & W = layers.at(layer).out_proj;
    for (int o = 0; o < E; ++o) {
        const float * row = W.data() + static_cast<std::size_t>(o) * A + static_cast<std::size_t>(head) * D;
        double acc = 0.0;
        for (int d = 0; d < D; ++d) {
            acc += static_cast<double>(row[d]) * static_cast<double>(head_vec[d]);
        }
        out[o] += acc;
    }
}

Model random_model(const ModelConfig & config, std::uint64_t seed, float scale) {
    Model m = Model::zeros(config);
    Rng rng(seed);
    auto fill = [&](std::vector<float> & v) {
        for (auto & x : v) {
            x = static_cast<float>(scale * standard_normal(rng));
        }
    };
    fill(m.token_embedding);
    fill(m.position_embedding);
    for (auto & l : m.layers) {
        fill(l.query_proj);
        fill(l.key_proj);
        fill(l.value_proj);
        fill(l.out_proj);
        fill(l.mlp_in);
        fill(l.mlp_out);
    }
    fill(m.unembedding);
    return m;
}

// ---- serialization -----------------------------------------------------------

std::string serialize_model(const Model & model) {
    const auto & c = model.config;
    std::ostringstream hdr;
    hdr << kMagic << ' ' << kVersion << " n_layers=" << c.n_layers << " n_heads=" << c.n_heads << " head_dim=" << c.head_dim
        << " hidden_dim=" << c.hidden_dim << " vocab_size=" << c.vocab_size << " max_seq_len=" << c.max_seq_len
        << " mlp_dim=" << c.mlp_dim << " order=" << kOrder << '\n';
    std::string out = hdr.str();
    for_each_param(model, [&](const std::vector<float> & v, std::size_t n) {
        if (v.size() != n) {
            throw std::invalid_argument("save_model: parameter size does not match config");
        }
        out.append(reinterpret_cast<const char *>(v.data()), n * sizeof(float));
    });
    return out;
}

Model parse_model(std::string_view bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string_view::npos) {
        throw std::runtime_error("model file: missing header line");
    }
    std::istringstream hdr{std::string(bytes.substr(0, nl))};
    std::string magic, version;
    hdr >> magic >> version;
    if (magic != kMagic) {
        throw std::runtime_error("model file: bad magic");
    }
    if (version != kVersion) {
        throw std::runtime_error("model file: unsupported version " + version);
    }
    ModelConfig c;
    bool seen[8] = {};
    std::string order;
    std::string kv;
    while (hdr >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("model file: malformed header field '" + kv + "'");
        }
        const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
        if (key == "order") {
            order = value;
            seen[7] = true;
            continue;
        }
        int parsed = 0;
        try {
            std::size_t used = 0;
            parsed = std::stoi(value, &used);
            if (used != value.size()) {
                throw std::invalid_argument(value);
            }
        } catch (const std::exception &) {
            throw std::runtime_error("model file: bad integer for " + key);
        }
        if (key == "n_layers") { c.n_layers = parsed; seen[0] = true; }
        else if (key == "n_heads") { c.n_heads = parsed; seen[1] = true; }
        else if (key == "head_dim") { c.head_dim = parsed; seen[2] = true; }
        else if (key == "hidden_dim") { c.hidden_dim = parsed; seen[3] = true; }
        else if (key == "vocab_size") { c.vocab_size = parsed; seen[4] = true; }
        else if (key == "max_seq_len") { c.max_seq_len = parsed; seen[5] = true; }
        else if (key == "mlp_dim") { c.mlp_dim = parsed; seen[6] = true; }
        else throw std::runtime_error("model file: unknown header key " + key);
    }
    if (!std::all_of(std::begin(seen), std::end(seen), [](bool b) { return b; })) {
        throw std::runtime_error("model file: header is missing a required key");
    }
    if (order != kOrder) {
        throw std::runtime_error("model file: unsupported parameter order");
    }
    try {
        c.validate();
    } catch (const std::invalid_argument & ex) {
        throw std::runtime_error(std::string("model file: ") + ex.what());
    }

    Model m;
    m.config = c;
    m.layers.resize(c.n_layers);
    std::size_t expected = 0;
    for_each_param(m, [&](std::vector<float> &, std::size_t n) { expected += n; });
    const std::string_view payload = bytes.substr(nl + 1);
    if (payload.size() != expected * sizeof(float)) {
        throw std::runtime_error("model file: payload size mismatch (expected " + std::to_string(expected * sizeof(float)) +
                                 " bytes, found " + std::to_string(payload.size()) + ")");
    }
    std::size_t offset = 0;
    for_each_param(m, [&](std::vector<float> & v, std::size_t n) {
        v.resize(n);
        std::memcpy(v.data(), payload.data() + offset, n * sizeof(float));
        offset += n * sizeof(float);
        for (float x : v) {
            if (!std::isfinite(x)) {
                throw std::runtime_error("model file: non-finite parameter value");
            }
        }
    });
    return m;
}

Model load_model(const std::filesystem::path & path) {
    if (!std::filesystem::exists(path)) {
        throw std::runtime_error("model file not found: " + path.string());
    }
    return parse_model(read_file(path));
}

void save_model(const Model & model, const std::filesystem::path & path) {
    write_file_atomic(path, serialize_model(model));
}

// ---- forward -------------------------------------------------------------------

std::span<const float> ActivationTrace::at(int layer, int head, int position) const {
    const std::size_t idx = ((static_cast<std::size_t>(layer) * n_heads + head) * n_positions + position) * head_dim;
    return {values.data() + idx, static_cast<std::size_t>(head_dim)};
}

std::span<float> ActivationTrace::at(int layer, int head, int position) {
    const std::size_t idx = ((static_cast<std::size_t>(layer) * n_heads + head) * n_positions + position) * head_dim;
    return {values.data() + idx, static_cast<std::size_t>(head_dim)};
}

std::span<const float> ForwardResult::logits_at(int position, int vocab) const {
    return {logits.data() + static_cast<std::size_t>(position) * vocab, static_cast<std::size_t>(vocab)};
}

ForwardResult forward(const Model & model, std::span<const Token> tokens, const ForwardOptions & options) {
    const auto & c = model.config;
    check_tokens(c, tokens);
    const InterventionSpec * spec = options.spec;
    if (spec) {
        spec->validate(c.n_layers, c.n_heads, c.head_dim);
    }

    const int T = static_cast<int>(tokens.size());
    const int E = c.hidden_dim, H = c.n_heads, D = c.head_dim, A = H * D, F = c.mlp_dim, V = c.vocab_size;
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));

    ForwardResult res;
    res.n_positions = T;
    if (options.capture_trace) {
        ActivationTrace tr;
        tr.n_layers = c.n_layers;
        tr.n_heads = H;
        tr.n_positions = T;
        tr.head_dim = D;
        tr.values.assign(static_cast<std::size_t>(c.n_layers) * H * T * D, 0.0f);
        res.trace = std::move(tr);
    }
    if (options.capture_streams) {
        res.streams.emplace();
    }

    std::vector<float> x(static_cast<std::size_t>(T) * E);
    for (int t = 0; t < T; ++t) {
        const float * te = model.token_embedding.data() + static_cast<std::size_t>(tokens[t]) * E;
        const float * pe = model.position_embedding.data() + static_cast<std::size_t>(t) * E;
        for (int i = 0; i < E; ++i) {
            x[static_cast<std::size_t>(t) * E + i] = te[i] + pe[i];
        }
    }

    std::vector<float> normed(static_cast<std::size_t>(T) * E);
    std::vector<float> q(static_cast<std::size_t>(T) * A), k(q.size()), v(q.size()), heads(q.size());
    std::vector<float> proj(E), hidden(F);
    std::vector<double> probs(T);

    for (int l = 0; l < c.n_layers; ++l) {
        const auto & w = model.layers[l];
        if (res.streams) {
            res.streams->layer_input.push_back(x);
        }
        for (int t = 0; t < T; ++t) {
            const std::size_t ro = static_cast<std::size_t>(t) * E, ra = static_cast<std::size_t>(t) * A;
            layer_norm(&x[ro], w.ln1_gain.data(), w.ln1_bias.data(), E, &normed[ro]);
            linear(w.query_proj.data(), nullptr, &normed[ro], A, E, &q[ra]);
            linear(w.key_proj.data(), nullptr, &normed[ro], A, E, &k[ra]);
            linear(w.value_proj.data(), nullptr, &normed[ro], A, E, &v[ra]);
        }
        // causal attention per head
        for (int h = 0; h < H; ++h) {
            for (int t = 0; t < T; ++t) {
                const float * qt = &q[static_cast<std::size_t>(t) * A + static_cast<std::size_t>(h) * D];
                double max_s = -std::numeric_limits<double>::infinity();
                for (int s = 0; s <= t; ++s) {
                    const float * ks = &k[static_cast<std::size_t>(s) * A + static_cast<std::size_t>(h) * D];
                    double acc = 0.0;
                    for (int d = 0; d < D; ++d) {
                        acc += static_cast<double>(qt[d]) * ks[d];
                    }
                    probs[s] = acc * scale;
                    max_s = std::max(max_s, probs[s]);
                }
                double z = 0.0;
                for (int s = 0; s <= t; ++s) {
                    probs[s] = std::exp(probs[s] - max_s);
                    z += probs[s];
                }
                float * out = &heads[static_cast<std::size_t>(t) * A + static_cast<std::size_t>(h) * D];
                for (int d = 0; d < D; ++d) {
                    double acc = 0.0;
                    for (int s = 0; s <= t; ++s) {
                        acc += probs[s] * v[static_cast<std::size_t>(s) * A + static_cast<std::size_t>(h) * D + d];
                    }
                    out[d] = static_cast<float>(acc / z);
                }
            }
        }
        if (spec && spec->alpha != 0.0 && spec->touches_layer(l)) {
            const auto shift = spec->layer_shift(l, H, D);
            for (int t = 0; t < T; ++t) {
                add_shift_inplace(std::span(&heads[static_cast<std::size_t>(t) * A], A), shift);
            }
        }
        if (res.trace) {
            for (int h = 0; h < H; ++h) {
                for (int t = 0; t < T; ++t) {
                    const float * src = &heads[static_cast<std::size_t>(t) * A + static_cast<std::size_t>(h) * D];
                    std::copy(src, src + D, res.trace->at(l, h, t).begin());
                }
            }
        }
        for (int t = 0; t < T; ++t) {
            linear(w.out_proj.data(), w.out_bias.data(), &heads[static_cast<std::size_t>(t) * A], E, A, proj.data());
            float * xt = &x[static_cast<std::size_t>(t) * E];
            for (int i = 0; i < E; ++i) {
                xt[i] += proj[i];
            }
        }
        if (res.streams) {
            res.streams->after_attention.push_back(x);
        }
        std::vector<float> mlp_delta;
        if (res.streams) {
            mlp_delta.resize(static_cast<std::size_t>(T) * E);
        }
        for (int t = 0; t < T; ++t) {
            const std::size_t ro = static_cast<std::size_t>(t) * E;
            layer_norm(&x[ro], w.ln2_gain.data(), w.ln2_bias.data(), E, &normed[ro]);
            linear(w.mlp_in.data(), w.mlp_in_bias.data(), &normed[ro], F, E, hidden.data());
            for (auto & hv : hidden) {
                hv = gelu(hv);
            }
            linear(w.mlp_out.data(), w.mlp_out_bias.data(), hidden.data(), E, F, proj.data());
            for (int i = 0; i < E; ++i) {
                x[ro + i] += proj[i];
            }
            if (res.streams) {
                std::copy(proj.begin(), proj.end(), mlp_delta.begin() + static_cast<std::ptrdiff_t>(ro));
            }
        }
        if (res.streams) {
            res.streams->mlp_delta.push_back(std::move(mlp_delta));
        }
    }
    if (res.streams) {
        res.streams->final_stream = x;
    }

    res.logits.resize(static_cast<std::size_t>(T) * V);
    for (int t = 0; t < T; ++t) {
        const std::size_t ro = static_cast<std::size_t>(t) * E;
        layer_norm(&x[ro], model.final_ln_gain.data(), model.final_ln_bias.data(), E, &normed[ro]);
        linear(model.unembedding.data(), nullptr, &normed[ro], V, E, &res.logits[static_cast<std::size_t>(t) * V]);
    }
    return res;
}

TapResult forward_with_taps(const Model & model, std::span<const Token> tokens) {
    ForwardOptions opt;
    opt.capture_trace = true;
    auto r = forward(model, tokens, opt);
    return {std::move(r.logits), std::move(*r.trace)};
}

std::vector<double> softmax(std::span<const float> logits) {
    std::vector<double> p(logits.size());
    double m = -std::numeric_limits<double>::infinity();
    for (float x : logits) {
        m = std::max(m, static_cast<double>(x));
    }
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(static_cast<double>(logits[i]) - m);
        z += p[i];
    }
    for (auto & x : p) {
        x /= z;
    }
    return p;
}

std::vector<double> log_softmax(std::span<const float> logits) {
    std::vector<double> lp(logits.size());
    double m = -std::numeric_limits<double>::infinity();
    for (float x : logits) {
        m = std::max(m, static_cast<double>(x));
    }
    double z = 0.0;
    for (float x : logits) {
        z += std::exp(static_cast<double>(x) - m);
    }
    const double lz = m + std::log(z);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        lp[i] = static_cast<double>(logits[i]) - lz;
    }
    return lp;
}

std::vector<double> next_token_distribution(const Model & model, std::span<const Token> tokens, const InterventionSpec * spec) {
    ForwardOptions opt;
    opt.spec = spec;
    const auto r = forward(model, tokens, opt);
    return softmax(r.logits_at(r.n_positions - 1, model.config.vocab_size));
}

GreedyTrace generate_greedy_traced(const Model & model, std::span<const Token> prompt, int max_new, const InterventionSpec * spec) {
    if (prompt.empty()) {
        throw std::invalid_argument("generate: empty prompt");
    }
    if (max_new < 0 || static_cast<long>(prompt.size()) + max_new > model.config.max_seq_len) {
        throw std::invalid_argument("generate: prompt length + max_new exceeds max_seq_len");
    }
    GreedyTrace out;
    std::vector<Token> ctx(prompt.begin(), prompt.end());
    ForwardOptions opt;
    opt.spec = spec;
    const int V = model.config.vocab_size;
    for (int step = 0; step < max_new; ++step) {
        const auto r = forward(model, ctx, opt);
        const auto last = r.logits_at(r.n_positions - 1, V);
        // argmax, first index wins ties
        const auto best = static_cast<Token>(std::max_element(last.begin(), last.end()) - last.begin());
        out.step_logits.emplace_back(last.begin(), last.end());
        out.tokens.push_back(best);
        ctx.push_back(best);
    }
    return out;
}

std::vector<Token> generate_greedy(const Model & model, std::span<const Token> prompt, int max_new, const InterventionSpec * spec) {
    return generate_greedy_traced(model, prompt, max_new, spec).tokens;
}

double conditional_logprob(const Model & model, std::span<const Token> prompt, std::span<const Token> continuation,
                           const InterventionSpec * spec) {
    if (prompt.size() + continuation.size() > static_cast<std::size_t>(model.config.max_seq_len)) {
        throw std::invalid_argument("conditional_logprob: combined length exceeds max_seq_len");
    }
    if (continuation.empty()) {
        return 0.0;
    }
    if (prompt.empty()) {
        throw std::invalid_argument("conditional_logprob: empty prompt");
    }
    std::vector<Token> seq(prompt.begin(), prompt.end());
    seq.insert(seq.end(), continuation.begin(), continuation.end());
    ForwardOptions opt;
    opt.spec = spec;
    const auto r = forward(model, seq, opt);
    const int V = model.config.vocab_size;
    double total = 0.0;
    for (std::size_t i = 0; i < continuation.size(); ++i) {
        const int pos = static_cast<int>(prompt.size() + i) - 1;
        const auto lp = log_softmax(r.logits_at(pos, V));
        total += lp[static_cast<std::size_t>(continuation[i])];
    }
    return total;
}

} // namespace iti

#include "iti/activations.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace iti {

namespace {

constexpr char kMagic[8] = {'I', 'T', 'I', 'A', 'C', 'T', 'S', '\0'};

template <typename T>
void put(std::string & out, T v) {
    out.append(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
void put_array(std::string & out, const std::vector<T> & v) {
    out.append(reinterpret_cast<const char *>(v.data()), v.size() * sizeof(T));
}

struct Reader {
    std::string_view bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (bytes.size() - pos < n) {
            throw std::runtime_error("activation file: truncated");
        }
    }
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    template <typename T>
    std::vector<T> get_array(std::size_t n) {
        if (n > (bytes.size() - pos) / sizeof(T)) {
            throw std::runtime_error("activation file: truncated");
        }
        std::vector<T> v(n);
        std::memcpy(v.data(), bytes.data() + pos, n * sizeof(T));
        pos += n * sizeof(T);
        return v;
    }
};

} // namespace

std::span<const float> ActivationDataset::head(std::size_t r, int layer, int h) const {
    const std::size_t off = r * record_stride() + (static_cast<std::size_t>(layer) * n_heads + h) * head_dim;
    return {values.data() + off, static_cast<std::size_t>(head_dim)};
}

std::span<float> ActivationDataset::head(std::size_t r, int layer, int h) {
    const std::size_t off = r * record_stride() + (static_cast<std::size_t>(layer) * n_heads + h) * head_dim;
    return {values.data() + off, static_cast<std::size_t>(head_dim)};
}

std::span<const float> ActivationDataset::record(std::size_t r) const {
    return {values.data() + r * record_stride(), record_stride()};
}

std::vector<std::size_t> ActivationDataset::records_for_pairs(std::span<const std::size_t> pairs) const {
    std::unordered_map<std::uint32_t, std::size_t> index;
    index.reserve(pair_indices.size());
    for (std::size_t r = 0; r < pair_indices.size(); ++r) {
        index.emplace(pair_indices[r], r);
    }
    std::vector<std::size_t> out;
    out.reserve(pairs.size());
    for (auto p : pairs) {
        auto it = index.find(static_cast<std::uint32_t>(p));
        if (it != index.end()) {
            out.push_back(it->second);
        }
    }
    return out;
}

void ActivationDataset::append(int label, int question_id, std::uint32_t pair_index, std::span<const float> record_values) {
    if (record_values.size() != record_stride()) {
        throw std::invalid_argument("activation dataset: record size mismatch");
    }
    labels.push_back(static_cast<std::uint8_t>(label));
    question_ids.push_back(question_id);
    pair_indices.push_back(pair_index);
    values.insert(values.end(), record_values.begin(), record_values.end());
}

CollectResult collect_activations(const Model & model, const Tokenizer & tokenizer, const std::vector<LabeledPair> & pairs,
                                  const std::vector<Question> & questions) {
    if (pairs.empty()) {
        throw std::invalid_argument("collect_activations: no pairs");
    }
    const auto & c = model.config;
    std::map<int, const Question *> by_id;
    for (const auto & q : questions) {
        by_id[q.id] = &q;
    }

    CollectResult out;
    auto & ds = out.dataset;
    ds.n_layers = c.n_layers;
    ds.n_heads = c.n_heads;
    ds.head_dim = c.head_dim;
    std::vector<float> rec(ds.record_stride());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto & p = pairs[i];
        auto it = by_id.find(p.question_id);
        if (it == by_id.end()) {
            throw std::invalid_argument("collect_activations: pair references unknown question " + std::to_string(p.question_id));
        }
        const auto text = format_input(it->second->question, p.answer, PromptMode::probe);
        const auto tokens = tokenizer.encode(text);
        if (tokens.empty()) {
            out.skipped.push_back({static_cast<std::uint32_t>(i), p.question_id, "empty tokenization"});
            continue;
        }
        if (static_cast<int>(tokens.size()) > c.max_seq_len) {
            out.skipped.push_back({static_cast<std::uint32_t>(i), p.question_id,
                                   "length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                                       std::to_string(c.max_seq_len)});
            continue;
        }
        const auto taps = forward_with_taps(model, tokens);
        const int last = static_cast<int>(tokens.size()) - 1;
        for (int l = 0; l < c.n_layers; ++l) {
            for (int h = 0; h < c.n_heads; ++h) {
                const auto v = taps.trace.at(l, h, last);
                std::copy(v.begin(), v.end(), rec.begin() + static_cast<std::ptrdiff_t>((l * c.n_heads + h) * c.head_dim));
            }
        }
        ds.append(p.label, p.question_id, static_cast<std::uint32_t>(i), rec);
    }
    return out;
}

std::string serialize_dataset(const ActivationDataset & ds) {
    const std::size_t n = ds.size();
    if (ds.question_ids.size() != n || ds.pair_indices.size() != n || ds.values.size() != n * ds.record_stride()) {
        throw std::invalid_argument("save_dataset: inconsistent dataset");
    }
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kActivationFormatVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.n_layers));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.n_heads));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.head_dim));
    put<std::uint64_t>(out, n);
    put_array(out, ds.labels);
    put_array(out, ds.question_ids);
    put_array(out, ds.pair_indices);
    put_array(out, ds.values);
    return out;
}

ActivationDataset parse_dataset(std::string_view bytes) {
    Reader rd{bytes};
    rd.need(sizeof(kMagic));
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("activation file: bad magic");
    }
    rd.pos = sizeof(kMagic);
    const auto version = rd.get<std::uint32_t>();
    if (version != kActivationFormatVersion) {
        throw std::runtime_error("activation file: version mismatch (" + std::to_string(version) + ")");
    }
    ActivationDataset ds;
    ds.n_layers = static_cast<int>(rd.get<std::uint32_t>());
    ds.n_heads = static_cast<int>(rd.get<std::uint32_t>());
    ds.head_dim = static_cast<int>(rd.get<std::uint32_t>());
    const auto n = rd.get<std::uint64_t>();
    if (ds.n_layers < 1 || ds.n_heads < 1 || ds.head_dim < 1) {
        throw std::runtime_error("activation file: bad shape");
    }
    ds.labels = rd.get_array<std::uint8_t>(n);
    ds.question_ids = rd.get_array<std::int32_t>(n);
    ds.pair_indices = rd.get_array<std::uint32_t>(n);
    ds.values = rd.get_array<float>(n * ds.record_stride());
    if (rd.pos != bytes.size()) {
        throw std::runtime_error("activation file: trailing bytes after payload");
    }
    for (auto y : ds.labels) {
        if (y > 1) {
            throw std::runtime_error("activation file: label out of range");
        }
    }
    for (float v : ds.values) {
        if (!std::isfinite(v)) {
            throw std::runtime_error("activation file: non-finite activation");
        }
    }
    return ds;
}

void save_dataset(const ActivationDataset & ds, const std::filesystem::path & path) {
    write_file_atomic(path, serialize_dataset(ds));
}

ActivationDataset load_dataset(const std::filesystem::path & path) {
    return parse_dataset(read_file(path));
}

std::string skipped_manifest(const std::vector<SkippedPair> & skipped) {
    std::ostringstream ss;
    ss << "pair_index\tquestion_id\treason\n";
    for (const auto & s : skipped) {
        ss << s.pair_index << '\t' << s.question_id << '\t' << s.reason << '\n';
    }
    return ss.str();
}

} // namespace iti

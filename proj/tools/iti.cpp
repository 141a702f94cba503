// iti: command-line front end for collecting activations, fitting truthful
// directions, building/baking intervention specs and evaluating them.

#include "iti/activations.hpp"
#include "iti/common.hpp"
#include "iti/data.hpp"
#include "iti/directions.hpp"
#include "iti/evaluation.hpp"
#include "iti/intervention.hpp"
#include "iti/model.hpp"
#include "iti/probing.hpp"
#include "iti/spec.hpp"
#include "iti/tokenizer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// flag values shared by the subcommands; each subcommand registers the ones it takes
struct RunConfig {
    std::string command;
    std::string model, data, acts, spec, corpus, out;
    std::vector<int> k;
    std::vector<double> alpha;
    std::string dir_method = "mass-mean";
    std::string selector = "head";
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds;
    int folds = 2;
    std::optional<int> held_out;
    int min_category = 10;
    bool kl_reverse = false;
    bool len_norm = false;
    bool no_primer = false;

    std::string prompt;
    int max_new = 32;
    std::vector<double> fractions{0.1, 0.25, 0.5, 0.75, 1.0};
    std::string head;
    bool no_eval = false;

    // init-model
    int layers = 2, heads = 4, head_dim = 8, seq_len = 1024, mlp_dim = 0;
    float scale = 0.2f;
};

// config echo + input hashes written into every artifact
class Provenance {
public:
    explicit Provenance(std::string command) : command_(std::move(command)) {}

    void config(const std::string & key, const std::string & value) { config_[key] = value; }
    void input(const std::string & path) {
        if (!path.empty()) inputs_[path] = iti::file_hash_hex(path);
    }

    json to_json() const { return {{"command", command_}, {"config", config_}, {"inputs", inputs_}}; }

    std::string tsv_header() const {
        std::ostringstream os;
        os << "# command=" << command_ << "\n";
        for (const auto & [k, v] : config_) os << "# config " << k << "=" << v << "\n";
        for (const auto & [p, h] : inputs_) os << "# input " << p << " fnv1a64=" << h << "\n";
        return os.str();
    }

    std::map<std::string, std::string> flat() const {
        std::map<std::string, std::string> m{{"command", command_}};
        for (const auto & [k, v] : config_) m["config." + k] = v;
        for (const auto & [p, h] : inputs_) m["input." + p] = h;
        return m;
    }

private:
    std::string command_;
    std::map<std::string, std::string> config_;
    std::map<std::string, std::string> inputs_;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

template <typename T>
std::string join(const std::vector<T> & v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_floating_point_v<T>) s += fmt(v[i]);
        else s += std::to_string(v[i]);
    }
    return s;
}

void write_json(const std::string & path, json j, const Provenance & prov) {
    j["provenance"] = prov.to_json();
    iti::write_file_atomic(path, j.dump(1, ' ', false, json::error_handler_t::replace) + "\n");
}

void write_sidecar(const std::string & path, const Provenance & prov) {
    iti::write_file_atomic(path + ".provenance.json", prov.to_json().dump(1) + "\n");
}

iti::HeadId parse_head(const std::string & s) {
    const auto comma = s.find(',');
    if (comma == std::string::npos) throw UsageError("--head expects LAYER,HEAD");
    try {
        return {std::stoi(s.substr(0, comma)), std::stoi(s.substr(comma + 1))};
    } catch (const std::exception &) {
        throw UsageError("--head expects LAYER,HEAD");
    }
}

std::vector<std::vector<iti::Token>> load_corpus(const std::string & path, const iti::Tokenizer & tok, int window) {
    const auto text = iti::read_file(path);
    const auto tokens = tok.encode(text);
    auto segments = iti::segment_corpus(tokens, window);
    if (segments.empty()) throw std::invalid_argument("corpus " + path + " has fewer than two tokens");
    return segments;
}

void check_dataset_shape(const iti::ActivationDataset & ds, const iti::ModelConfig * cfg, std::size_t n_pairs) {
    if (cfg && (ds.n_layers != cfg->n_layers || ds.n_heads != cfg->n_heads || ds.head_dim != cfg->head_dim)) {
        throw std::invalid_argument("activation file shape does not match the model");
    }
    for (auto p : ds.pair_indices) {
        if (p >= n_pairs) throw std::invalid_argument("activation file references pairs beyond the question file");
    }
}

// ---- validation -------------------------------------------------------------

void require(bool ok, const std::string & message) {
    if (!ok) throw UsageError(message);
}

void validate(const RunConfig & c, const CLI::App & sub) {
    auto given = [&](const char * flag) { return sub.count(flag) > 0; };
    const auto & cmd = c.command;
    for (int k : c.k) require(k >= 0, "--k must be >= 0");
    for (double a : c.alpha) require(std::isfinite(a) && a >= 0.0, "--alpha must be finite and >= 0");
    require(c.folds >= 2, "--folds must be >= 2");
    require(c.min_category >= 0, "--min-category must be >= 0");
    require(c.max_new >= 0, "--max-new must be >= 0");
    if (c.held_out) require(*c.held_out >= 0 && *c.held_out < c.folds, "--held-out must name one of the folds");
    try {
        iti::parse_direction_method(c.dir_method);
    } catch (const std::exception &) {
        throw UsageError("--dir-method must be one of mass-mean, probe-weight, ccs, random");
    }
    iti::SelectorKind sel;
    try {
        sel = iti::parse_selector(c.selector);
    } catch (const std::exception &) {
        throw UsageError("--selector must be one of head, pointwise, all");
    }
    if (cmd == "spec" || cmd == "cv" || cmd == "sweep" || cmd == "trainsize") {
        if (sel == iti::SelectorKind::point_wise) require(given("--k"), "--selector pointwise requires --k");
        if (sel == iti::SelectorKind::head_wise) require(given("--k"), "--selector head requires --k");
        require(given("--alpha") || cmd == "trainsize", "--alpha is required");
    }
    if (cmd == "spec" || cmd == "cv" || cmd == "trainsize") {
        require(c.k.size() <= 1 && c.alpha.size() <= 1, "--k and --alpha take a single value here (lists are for sweep)");
    }
    if (cmd == "sweep") require(!c.seeds.empty(), "--seeds is required");
    if (cmd == "trainsize") {
        for (double f : c.fractions) require(f > 0.0 && f <= 1.0, "--fractions must lie in (0, 1]");
        require(!c.fractions.empty(), "--fractions must be nonempty");
        if (!c.head.empty()) parse_head(c.head);
    }
    if (cmd == "init-model") {
        require(c.layers >= 1 && c.heads >= 1 && c.head_dim >= 1 && c.seq_len >= 2, "model dimensions must be positive");
    }
    if (!c.out.empty()) {
        const auto parent = fs::path(c.out).parent_path();
        require(parent.empty() || fs::is_directory(parent), "output directory " + parent.string() + " does not exist");
    }
}

// ---- shared loading ---------------------------------------------------------

struct Loaded {
    iti::ByteTokenizer tokenizer;
    std::optional<iti::Model> model;
    std::vector<iti::Question> questions;
    std::vector<iti::LabeledPair> pairs;
    std::optional<iti::ActivationDataset> dataset;
    std::optional<iti::InterventionSpec> spec;
};

Loaded load_inputs(const RunConfig & c, Provenance & prov) {
    Loaded in;
    if (!c.model.empty()) {
        in.model = iti::load_model(c.model);
        prov.input(c.model);
    }
    if (!c.data.empty()) {
        in.questions = iti::parse_truthfulqa_csv(c.data);
        in.pairs = iti::flatten_qa_pairs(in.questions);
        prov.input(c.data);
    }
    if (!c.acts.empty()) {
        in.dataset = iti::load_dataset(c.acts);
        prov.input(c.acts);
        check_dataset_shape(*in.dataset, in.model ? &in.model->config : nullptr, in.pairs.size());
    }
    if (!c.spec.empty()) {
        in.spec = iti::load_spec(c.spec);
        prov.input(c.spec);
        if (in.model) {
            const auto & m = in.model->config;
            in.spec->validate(m.n_layers, m.n_heads, m.head_dim);
        }
    }
    if (!c.corpus.empty()) prov.input(c.corpus);
    return in;
}

iti::PipelineInputs pipeline(const RunConfig & c, const Loaded & in) {
    iti::PipelineInputs p;
    p.model = in.model ? &*in.model : nullptr;
    p.tokenizer = &in.tokenizer;
    p.questions = &in.questions;
    p.dataset = in.dataset ? &*in.dataset : nullptr;
    p.method = iti::parse_direction_method(c.dir_method);
    p.selector = iti::parse_selector(c.selector);
    p.eval.use_qa_primer = !c.no_primer;
    p.eval.length_normalized = c.len_norm;
    p.eval.kl_reverse = c.kl_reverse;
    p.eval.min_category = c.min_category;
    p.ccs.seed = c.seed;
    if (!c.corpus.empty() && in.model) {
        p.ce_corpus = load_corpus(c.corpus, in.tokenizer, in.model->config.max_seq_len);
        p.kl_prompts = p.ce_corpus;
    }
    return p;
}

void common_config(const RunConfig & c, Provenance & prov) {
    prov.config("seed", std::to_string(c.seed));
    prov.config("folds", std::to_string(c.folds));
    prov.config("held_out", c.held_out ? std::to_string(*c.held_out) : "none");
}

json report_json(const iti::EvalReport & r) { return json::parse(iti::report_to_json(r)); }

// ---- subcommands ------------------------------------------------------------

int run_init_model(const RunConfig & c) {
    Provenance prov(c.command);
    prov.config("layers", std::to_string(c.layers));
    prov.config("heads", std::to_string(c.heads));
    prov.config("head_dim", std::to_string(c.head_dim));
    prov.config("seq_len", std::to_string(c.seq_len));
    prov.config("seed", std::to_string(c.seed));
    prov.config("scale", fmt(c.scale));
    const auto cfg = iti::make_config(c.layers, c.heads, c.head_dim, iti::ByteTokenizer{}.vocab_size(), c.seq_len, c.mlp_dim);
    iti::save_model(iti::random_model(cfg, c.seed, c.scale), c.out);
    write_sidecar(c.out, prov);
    return 0;
}

int run_collect(const RunConfig & c) {
    Provenance prov(c.command);
    auto in = load_inputs(c, prov);
    auto res = iti::collect_activations(*in.model, in.tokenizer, in.pairs, in.questions);
    iti::save_dataset(res.dataset, c.out);
    write_sidecar(c.out, prov);
    iti::write_file_atomic(c.out + ".skipped.tsv", prov.tsv_header() + iti::skipped_manifest(res.skipped));
    std::cerr << "collected " << res.dataset.size() << " of " << in.pairs.size() << " pairs (" << res.skipped.size()
              << " skipped)\n";
    return 0;
}

int run_probe(const RunConfig & c) {
    Provenance prov(c.command);
    common_config(c, prov);
    auto in = load_inputs(c, prov);
    const auto plan = iti::split_folds(in.questions, c.folds, c.seed);
    const auto probes = iti::probe_all_heads(*in.dataset, plan, c.held_out);
    write_json(c.out, json::parse(iti::head_probes_to_json(probes)), prov);
    return 0;
}

int run_direction(const RunConfig & c) {
    Provenance prov(c.command);
    common_config(c, prov);
    prov.config("dir_method", c.dir_method);
    auto in = load_inputs(c, prov);
    const auto plan = iti::split_folds(in.questions, c.folds, c.seed);
    iti::DirectionOptions opt;
    opt.method = iti::parse_direction_method(c.dir_method);
    opt.seed = c.seed;
    opt.ccs.seed = c.seed;
    std::optional<iti::HeadProbes> probes;
    if (opt.method == iti::DirectionMethod::probe_weight) probes = iti::probe_all_heads(*in.dataset, plan, c.held_out);
    auto dirs = iti::compute_directions(*in.dataset, plan, c.held_out, opt, probes ? &*probes : nullptr);
    for (const auto & [k, v] : prov.flat()) dirs.provenance["run." + k] = v;
    iti::write_file_atomic(c.out, iti::directions_to_json(dirs));
    return 0;
}

int run_spec(const RunConfig & c) {
    Provenance prov(c.command);
    common_config(c, prov);
    prov.config("dir_method", c.dir_method);
    prov.config("selector", c.selector);
    prov.config("k", join(c.k));
    prov.config("alpha", join(c.alpha));
    auto in = load_inputs(c, prov);
    const auto p = pipeline(c, in);
    const auto plan = iti::split_folds(in.questions, c.folds, c.seed);
    const auto fit = iti::fit_fold(*in.dataset, plan, c.held_out, p, c.seed);
    const int k = c.k.empty() ? 0 : c.k.front();
    auto spec = iti::build_spec(iti::selection_for(fit, p.selector, k, in.dataset->head_dim), fit.directions,
                                c.alpha.empty() ? 0.0 : c.alpha.front());
    for (const auto & [key, v] : prov.flat()) spec.provenance["run." + key] = v;
    iti::save_spec(spec, c.out);
    return 0;
}

int run_bake(const RunConfig & c) {
    Provenance prov(c.command);
    auto in = load_inputs(c, prov);
    iti::save_model(iti::bake_bias(*in.model, *in.spec), c.out);
    write_sidecar(c.out, prov);
    return 0;
}

int run_generate(const RunConfig & c) {
    Provenance prov(c.command);
    prov.config("prompt", c.prompt);
    prov.config("max_new", std::to_string(c.max_new));
    auto in = load_inputs(c, prov);
    const auto prompt = in.tokenizer.encode(c.prompt);
    const int room = in.model->config.max_seq_len - static_cast<int>(prompt.size());
    if (room < c.max_new) throw std::invalid_argument("prompt plus --max-new exceeds the model context");
    const auto tokens = iti::generate_greedy(*in.model, prompt, c.max_new, in.spec ? &*in.spec : nullptr);
    const auto text = in.tokenizer.decode(tokens);
    if (c.out.empty()) {
        std::cout << text << "\n";
    } else {
        write_json(c.out, {{"prompt", c.prompt}, {"tokens", tokens}, {"text", text}}, prov);
    }
    return 0;
}

int run_eval_mc(const RunConfig & c) {
    Provenance prov(c.command);
    prov.config("len_norm", c.len_norm ? "1" : "0");
    prov.config("primer", c.no_primer ? "0" : "1");
    prov.config("min_category", std::to_string(c.min_category));
    auto in = load_inputs(c, prov);
    const auto p = pipeline(c, in);
    const auto mc = iti::mc_evaluate(*in.model, in.tokenizer, in.questions, in.spec ? &*in.spec : nullptr, p.eval);
    iti::EvalReport rep;
    rep.mc_accuracy = mc.accuracy;
    rep.per_question = mc.per_question;
    rep.n_questions = static_cast<int>(in.questions.size());
    rep.categories = iti::category_report(mc.per_question, in.questions, c.min_category);
    if (in.spec) {
        rep.alpha = in.spec->alpha;
        rep.selector = in.spec->selector;
        rep.k = static_cast<int>(in.spec->entries.size());
    }
    write_json(c.out, report_json(rep), prov);
    std::cout << "mc_accuracy\t" << fmt(mc.accuracy) << "\n";
    return 0;
}

int run_eval_ce(const RunConfig & c) {
    Provenance prov(c.command);
    auto in = load_inputs(c, prov);
    const auto corpus = load_corpus(c.corpus, in.tokenizer, in.model->config.max_seq_len);
    const double ce = iti::cross_entropy(*in.model, corpus, in.spec ? &*in.spec : nullptr);
    write_json(c.out, {{"ce", ce}, {"n_segments", corpus.size()}}, prov);
    std::cout << "ce\t" << fmt(ce) << "\n";
    return 0;
}

int run_eval_kl(const RunConfig & c) {
    Provenance prov(c.command);
    prov.config("kl_reverse", c.kl_reverse ? "1" : "0");
    auto in = load_inputs(c, prov);
    const auto prompts = load_corpus(c.corpus, in.tokenizer, in.model->config.max_seq_len);
    const double kl = iti::kl_pre_post(*in.model, *in.spec, prompts, c.kl_reverse);
    write_json(c.out, {{"kl", kl}, {"reverse", c.kl_reverse}, {"n_prompts", prompts.size()}}, prov);
    std::cout << "kl\t" << fmt(kl) << "\n";
    return 0;
}

void sweep_config(const RunConfig & c, Provenance & prov) {
    prov.config("dir_method", c.dir_method);
    prov.config("selector", c.selector);
    prov.config("folds", std::to_string(c.folds));
    prov.config("len_norm", c.len_norm ? "1" : "0");
    prov.config("kl_reverse", c.kl_reverse ? "1" : "0");
    prov.config("primer", c.no_primer ? "0" : "1");
}

int run_cv(const RunConfig & c) {
    Provenance prov(c.command);
    sweep_config(c, prov);
    prov.config("seed", std::to_string(c.seed));
    prov.config("k", join(c.k));
    prov.config("alpha", join(c.alpha));
    auto in = load_inputs(c, prov);
    const auto p = pipeline(c, in);
    const auto cv = iti::cross_validate(p, c.k.empty() ? 0 : c.k.front(), c.alpha.front(), c.folds, c.seed);
    json j = report_json(cv.combined);
    j["folds"] = json::array();
    for (const auto & f : cv.folds) j["folds"].push_back(report_json(f));
    write_json(c.out, std::move(j), prov);
    std::cout << "mc_accuracy\t" << fmt(cv.combined.mc_accuracy) << "\nce\t" << fmt(cv.combined.ce) << "\nkl\t"
              << fmt(cv.combined.kl) << "\n";
    return 0;
}

std::string report_row(const iti::EvalReport & r, const std::string & seed) {
    std::ostringstream os;
    os << r.k << "\t" << fmt(r.alpha) << "\t" << seed << "\t" << fmt(r.mc_accuracy) << "\t" << fmt(r.ce) << "\t" << fmt(r.kl)
       << "\t" << r.n_questions << "\t" << (r.error.empty() ? "-" : r.error) << "\n";
    return os.str();
}

int run_sweep(const RunConfig & c) {
    Provenance prov(c.command);
    sweep_config(c, prov);
    prov.config("k", join(c.k));
    prov.config("alpha", join(c.alpha));
    prov.config("seeds", join(c.seeds));
    auto in = load_inputs(c, prov);
    const auto p = pipeline(c, in);
    const std::vector<int> ks = c.k.empty() ? std::vector<int>{0} : c.k;
    const auto res = iti::sweep_grid(p, ks, c.alpha, c.seeds, c.folds);
    const std::string columns = "k\talpha\tseed\tmc_accuracy\tce\tkl\tn_questions\terror\n";
    std::string cells = prov.tsv_header() + columns;
    int failed = 0;
    for (const auto & r : res.cells) {
        cells += report_row(r, std::to_string(r.seed));
        failed += r.error.empty() ? 0 : 1;
    }
    std::string means = prov.tsv_header() + columns;
    for (const auto & r : res.means) means += report_row(r, "mean");
    iti::write_file_atomic(c.out, cells);
    iti::write_file_atomic(c.out + ".means.tsv", means);
    if (failed) std::cerr << "warning: " << failed << " sweep cells recorded an error\n";
    return 0;
}

int run_trainsize(const RunConfig & c) {
    Provenance prov(c.command);
    sweep_config(c, prov);
    prov.config("seed", std::to_string(c.seed));
    prov.config("k", join(c.k));
    prov.config("alpha", join(c.alpha));
    prov.config("fractions", join(c.fractions));
    prov.config("head", c.head.empty() ? "top" : c.head);
    auto in = load_inputs(c, prov);
    const auto p = pipeline(c, in);
    std::optional<iti::HeadId> head;
    if (!c.head.empty()) head = parse_head(c.head);
    const bool metrics = !c.no_eval && in.model.has_value();
    const auto res = iti::trainsize_curve(p, c.fractions, c.seed, c.k.empty() ? 0 : c.k.front(),
                                          c.alpha.empty() ? 0.0 : c.alpha.front(), head, metrics);
    std::ostringstream os;
    os << prov.tsv_header() << "# head " << res.head.layer << "," << res.head.head << "\n";
    os << "fraction\tn_questions\tcosine\tmc_accuracy\tce\tkl\n";
    for (const auto & pt : res.points) {
        os << fmt(pt.fraction) << "\t" << pt.n_questions << "\t" << fmt(pt.cosine);
        if (pt.report) {
            os << "\t" << fmt(pt.report->mc_accuracy) << "\t" << fmt(pt.report->ce) << "\t" << fmt(pt.report->kl);
        } else {
            os << "\t-\t-\t-";
        }
        os << "\n";
    }
    iti::write_file_atomic(c.out, os.str());
    return 0;
}

int run_plot_data(const RunConfig & c) {
    Provenance prov(c.command);
    common_config(c, prov);
    prov.config("head", c.head.empty() ? "top" : c.head);
    auto in = load_inputs(c, prov);
    const auto & ds = *in.dataset;
    const auto plan = iti::split_folds(in.questions, c.folds, c.seed);
    const auto probes = iti::probe_all_heads(ds, plan, c.held_out);
    const auto & acc = probes.accuracy;
    if (acc.n_layers != ds.n_layers || acc.n_heads != ds.n_heads) {
        throw std::invalid_argument("probe set shape does not match the activation file");
    }
    fs::create_directories(c.out);
    const fs::path dir(c.out);

    std::ostringstream heat, sorted;
    heat << prov.tsv_header() << "# rows=layers cols=heads\n";
    sorted << prov.tsv_header() << "# rows=layers, each row sorted by accuracy (descending)\n";
    for (int l = 0; l < acc.n_layers; ++l) {
        std::vector<double> row;
        for (int h = 0; h < acc.n_heads; ++h) row.push_back(acc.at(l, h));
        auto srow = row;
        std::stable_sort(srow.begin(), srow.end(), std::greater<>());
        for (int h = 0; h < acc.n_heads; ++h) {
            heat << (h ? "\t" : "") << fmt(row[h]);
            sorted << (h ? "\t" : "") << fmt(srow[h]);
        }
        heat << "\n";
        sorted << "\n";
    }
    iti::write_file_atomic(dir / "heatmap.tsv", heat.str());
    iti::write_file_atomic(dir / "heatmap_sorted.tsv", sorted.str());

    // projections onto the head's probe direction and the best direction orthogonal to it
    const iti::HeadId head = c.head.empty() ? iti::select_heads(acc, 1).heads.front() : parse_head(c.head);
    if (head.layer < 0 || head.layer >= ds.n_layers || head.head < 0 || head.head >= ds.n_heads) {
        throw std::invalid_argument("--head outside the activation file");
    }
    const auto dev = iti::development_records(ds, plan, c.held_out);
    const auto xtr = iti::head_features(ds, dev.train, head.layer, head.head);
    const auto ytr = iti::record_labels(ds, dev.train);
    const auto xva = iti::head_features(ds, dev.validation, head.layer, head.head);
    const auto yva = iti::record_labels(ds, dev.validation);
    const auto * val = dev.validation.empty() ? nullptr : &xva;
    const auto first = iti::train_probe(xtr, ytr, val, yva);
    const auto second = iti::train_orthogonal_probe(xtr, ytr, val, yva, first);
    auto unit = [](std::vector<double> v) {
        const double n = iti::norm2(v);
        if (n > 0) for (auto & x : v) x /= n;
        return v;
    };
    const auto t1 = unit(first.theta);
    const auto t2 = unit(second.theta);
    std::ostringstream scatter;
    scatter << prov.tsv_header() << "# head " << head.layer << "," << head.head << "\n";
    scatter << "# theta1 " << join(t1) << "\n# theta2 " << join(t2) << "\n";
    scatter << "record\tpair_index\tquestion_id\tlabel\tproj_theta1\tproj_theta2\n";
    std::vector<double> x(static_cast<std::size_t>(ds.head_dim));
    for (std::size_t r = 0; r < ds.size(); ++r) {
        const auto v = ds.head(r, head.layer, head.head);
        std::copy(v.begin(), v.end(), x.begin());
        scatter << r << "\t" << ds.pair_indices[r] << "\t" << ds.question_ids[r] << "\t" << int(ds.labels[r]) << "\t"
                << fmt(iti::dot(x, t1)) << "\t" << fmt(iti::dot(x, t2)) << "\n";
    }
    iti::write_file_atomic(dir / "scatter.tsv", scatter.str());
    return 0;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"inference-time intervention toolkit"};
    app.require_subcommand(1, 1);
    RunConfig c;

    auto existing = CLI::ExistingFile;
    auto add = [&](const std::string & name, const std::string & desc) {
        auto * s = app.add_subcommand(name, desc);
        s->callback([&c, name] { c.command = name; });
        return s;
    };
    auto model = [&](CLI::App * s, bool required = true) { s->add_option("--model", c.model, "model file")->required(required)->check(existing); };
    auto data = [&](CLI::App * s) { s->add_option("--data", c.data, "question table (csv/tsv)")->required()->check(existing); };
    auto acts = [&](CLI::App * s) { s->add_option("--acts", c.acts, "activation file")->required()->check(existing); };
    auto spec = [&](CLI::App * s, bool required) { s->add_option("--spec", c.spec, "intervention spec")->required(required)->check(existing); };
    auto corpus = [&](CLI::App * s, bool required) { s->add_option("--corpus", c.corpus, "plain-text corpus")->required(required)->check(existing); };
    auto out = [&](CLI::App * s, bool required = true) { s->add_option("--out", c.out, "output path")->required(required); };
    auto seed = [&](CLI::App * s) { s->add_option("--seed", c.seed, "split / direction seed"); };
    auto folds = [&](CLI::App * s) { s->add_option("--folds", c.folds, "number of question folds"); };
    auto held_out = [&](CLI::App * s) { s->add_option("--held-out", c.held_out, "fold excluded from fitting"); };
    auto method = [&](CLI::App * s) {
        s->add_option("--dir-method", c.dir_method, "mass-mean | probe-weight | ccs | random");
    };
    auto selector = [&](CLI::App * s) { s->add_option("--selector", c.selector, "head | pointwise | all"); };
    auto k_single = [&](CLI::App * s) { s->add_option("--k", c.k, "number of heads")->expected(1); };
    auto alpha_single = [&](CLI::App * s) { s->add_option("--alpha", c.alpha, "intervention strength")->expected(1); };
    auto eval_flags = [&](CLI::App * s) {
        s->add_option("--min-category", c.min_category, "smallest category shown in reports");
        s->add_flag("--len-norm", c.len_norm, "length-normalize MC scores");
        s->add_flag("--no-primer", c.no_primer, "score MC answers after a bare Q/A prompt");
    };
    auto kl_flag = [&](CLI::App * s) { s->add_flag("--kl-reverse", c.kl_reverse, "report KL(post || pre)"); };

    auto * init = add("init-model", "write a randomly initialized byte-level model");
    out(init);
    seed(init);
    init->add_option("--layers", c.layers);
    init->add_option("--heads", c.heads);
    init->add_option("--head-dim", c.head_dim);
    init->add_option("--seq-len", c.seq_len);
    init->add_option("--mlp-dim", c.mlp_dim, "0: 4 * hidden");
    init->add_option("--scale", c.scale, "weight standard deviation");

    auto * collect = add("collect", "record last-token head activations for every QA pair");
    model(collect);
    data(collect);
    out(collect);

    auto * probe = add("probe", "train one probe per head");
    acts(probe);
    data(probe);
    out(probe);
    seed(probe);
    folds(probe);
    held_out(probe);

    auto * direction = add("direction", "compute a direction and sigma per head");
    acts(direction);
    data(direction);
    out(direction);
    seed(direction);
    folds(direction);
    held_out(direction);
    method(direction);

    auto * spec_cmd = add("spec", "select heads and write an intervention spec");
    acts(spec_cmd);
    data(spec_cmd);
    out(spec_cmd);
    seed(spec_cmd);
    folds(spec_cmd);
    held_out(spec_cmd);
    method(spec_cmd);
    selector(spec_cmd);
    k_single(spec_cmd);
    alpha_single(spec_cmd);

    auto * bake = add("bake", "fold a spec into the output-projection biases");
    model(bake);
    spec(bake, true);
    out(bake);

    auto * gen = add("generate", "greedy decoding");
    model(gen);
    spec(gen, false);
    out(gen, false);
    gen->add_option("--prompt", c.prompt, "prompt text")->required();
    gen->add_option("--max-new", c.max_new, "tokens to generate");

    auto * mc = add("eval-mc", "multiple-choice accuracy");
    model(mc);
    data(mc);
    spec(mc, false);
    out(mc);
    eval_flags(mc);

    auto * ce = add("eval-ce", "cross-entropy on a text corpus");
    model(ce);
    spec(ce, false);
    corpus(ce, true);
    out(ce);

    auto * kl = add("eval-kl", "KL between next-token distributions without and with a spec");
    model(kl);
    spec(kl, true);
    corpus(kl, true);
    out(kl);
    kl_flag(kl);

    auto * cv = add("cv", "cross-validated fit and evaluation");
    model(cv);
    data(cv);
    acts(cv);
    corpus(cv, false);
    out(cv);
    seed(cv);
    folds(cv);
    method(cv);
    selector(cv);
    k_single(cv);
    alpha_single(cv);
    eval_flags(cv);
    kl_flag(cv);

    auto * sweep = add("sweep", "cross-validated grid over K, alpha and seeds");
    model(sweep);
    data(sweep);
    acts(sweep);
    corpus(sweep, false);
    out(sweep);
    folds(sweep);
    method(sweep);
    selector(sweep);
    sweep->add_option("--k", c.k, "comma-separated K values")->delimiter(',');
    sweep->add_option("--alpha", c.alpha, "comma-separated alpha values")->delimiter(',');
    sweep->add_option("--seeds", c.seeds, "comma-separated seeds")->delimiter(',');
    eval_flags(sweep);
    kl_flag(sweep);

    auto * ts = add("trainsize", "direction stability and metrics versus training fraction");
    model(ts, false);
    data(ts);
    acts(ts);
    corpus(ts, false);
    out(ts);
    seed(ts);
    method(ts);
    selector(ts);
    k_single(ts);
    alpha_single(ts);
    eval_flags(ts);
    kl_flag(ts);
    ts->add_option("--fractions", c.fractions, "comma-separated fractions in (0, 1]")->delimiter(',');
    ts->add_option("--head", c.head, "LAYER,HEAD whose direction is tracked (default: top head)");
    ts->add_flag("--no-eval", c.no_eval, "skip MC/CE/KL at each point");

    auto * plot = add("plot-data", "heatmap and scatter tables");
    acts(plot);
    data(plot);
    out(plot);
    seed(plot);
    folds(plot);
    held_out(plot);
    plot->add_option("--head", c.head, "LAYER,HEAD for the scatter (default: top head)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        return app.exit(e);
    }

    try {
        validate(c, *app.get_subcommands().front());
        if (c.command == "trainsize" && !c.no_eval && c.model.empty()) {
            throw UsageError("trainsize needs --model unless --no-eval is given");
        }
        static const std::map<std::string, int (*)(const RunConfig &)> table{
            {"init-model", run_init_model}, {"collect", run_collect},     {"probe", run_probe},
            {"direction", run_direction},   {"spec", run_spec},           {"bake", run_bake},
            {"generate", run_generate},     {"eval-mc", run_eval_mc},     {"eval-ce", run_eval_ce},
            {"eval-kl", run_eval_kl},       {"cv", run_cv},               {"sweep", run_sweep},
            {"trainsize", run_trainsize},   {"plot-data", run_plot_data},
        };
        return table.at(c.command)(c);
    } catch (const UsageError & e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

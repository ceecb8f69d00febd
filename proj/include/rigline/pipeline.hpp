#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rigline/dataset.hpp"
#include "rigline/em.hpp"
#include "rigline/error.hpp"
#include "rigline/evaluation.hpp"
#include "rigline/imbalance.hpp"
#include "rigline/learners.hpp"
#include "rigline/model_io.hpp"
#include "rigline/random.hpp"
#include "rigline/stacking.hpp"
#include "rigline/text_io.hpp"

namespace rigline {

/// A failure inside one pipeline stage; what() is prefixed with the stage.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

// ---------------------------------------------------------------------------
// Configuration

/// automatic keeps labels the data already has and clusters unlabeled data;
/// em always relabels by clustering; none requires labels in the data.
enum class LabelMode { automatic, em, none };

inline std::string_view label_mode_name(LabelMode m) {
    switch (m) {
        case LabelMode::automatic: return "auto";
        case LabelMode::em: return "em";
        case LabelMode::none: return "none";
    }
    return "?";
}

inline LabelMode parse_label_mode(std::string_view s) {
    s = trim(s);
    if (s == "auto") return LabelMode::automatic;
    if (s == "em") return LabelMode::em;
    if (s == "none") return LabelMode::none;
    throw ConfigError("label mode must be auto, em or none, got '" + std::string(s) + "'");
}

struct EmSettings {
    double tol = 1e-6;
    std::size_t max_iter = 200;
    bool standardize = true;           // cluster on z-scores; output keeps raw values
    std::vector<std::string> columns;  // empty: every feature column
};

enum class SamplingKind { none, smote, under, cost };

/// One class-imbalance regime applied to the training split.
struct SamplingChoice {
    SamplingKind kind = SamplingKind::none;
    SmoteConfig smote{};             // seed ignored: the stage seed wins
    std::optional<CostMatrix> cost;  // empty: balanced for the training split

    /// Short name used in file names and seeds.
    std::string name() const {
        switch (kind) {
            case SamplingKind::none: return "none";
            case SamplingKind::smote: return "smote";
            case SamplingKind::under: return "under";
            case SamplingKind::cost: return "cost";
        }
        return "?";
    }

    /// Canonical token, accepted back by parse_sampling.
    std::string to_string() const {
        switch (kind) {
            case SamplingKind::smote:
                return "smote:k=" + std::to_string(smote.k_neighbors) + ",ratio=" + format_double(smote.target_ratio);
            case SamplingKind::cost:
                if (cost) return "cost:" + format_double(cost->cost[0][1]) + "," + format_double(cost->cost[1][0]);
                return "cost";
            default: return name();
        }
    }
};

/// "none", "under", "smote[:k=5,ratio=1.0]" or "cost[:a,b]".
inline SamplingChoice parse_sampling(std::string_view text) {
    const auto t = trim(text);
    const auto colon = t.find(':');
    const auto head = t.substr(0, colon);
    const auto args = colon == std::string_view::npos ? std::string_view{} : trim(t.substr(colon + 1));
    SamplingChoice c;
    if (head == "none" || head == "under") {
        if (!args.empty()) throw ConfigError("sampling '" + std::string(head) + "' takes no arguments");
        c.kind = head == "none" ? SamplingKind::none : SamplingKind::under;
    } else if (head == "smote") {
        c.kind = SamplingKind::smote;
        if (!args.empty()) {
            for (auto& item : split(args, ',')) {
                const auto eq = item.find('=');
                if (eq == std::string::npos) throw ConfigError("smote option '" + item + "' lacks '='");
                const auto key = trim(std::string_view(item).substr(0, eq));
                const auto value = trim(std::string_view(item).substr(eq + 1));
                if (key == "k") {
                    const auto k = parse_int(value, "smote k");
                    if (k < 1) throw ConfigError("smote k must be at least 1");
                    c.smote.k_neighbors = static_cast<std::size_t>(k);
                } else if (key == "ratio") {
                    c.smote.target_ratio = parse_double(value, "smote ratio");
                } else {
                    throw ConfigError("unknown smote option '" + std::string(key) + "'");
                }
            }
        }
        c.smote.validate();
    } else if (head == "cost") {
        c.kind = SamplingKind::cost;
        if (!args.empty()) c.cost = parse_cost_pair(args);
    } else {
        throw ConfigError("sampling must be none, smote, under or cost, got '" + std::string(t) + "'");
    }
    return c;
}

/// "rows=5000,frac=0.13,shift=2" (every key optional).
inline SyntheticGenConfig parse_synthetic(std::string_view text) {
    std::size_t rows = 5000;
    double frac = 0.13;
    double shift = 2.0;
    for (auto& item : split(trim(text), ',')) {
        if (trim(item).empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("synthetic option '" + item + "' lacks '='");
        const auto key = trim(std::string_view(item).substr(0, eq));
        const auto value = trim(std::string_view(item).substr(eq + 1));
        if (key == "rows") {
            const auto r = parse_int(value, "synthetic rows");
            if (r < 1) throw ConfigError("synthetic rows must be positive");
            rows = static_cast<std::size_t>(r);
        } else if (key == "frac") {
            frac = parse_double(value, "synthetic frac");
        } else if (key == "shift") {
            shift = parse_double(value, "synthetic shift");
        } else {
            throw ConfigError("unknown synthetic option '" + std::string(key) + "'");
        }
    }
    SyntheticGenConfig cfg{rows, frac, 0, default_sensor_columns(shift)};
    cfg.validate();
    return cfg;
}

inline std::string synthetic_to_string(const SyntheticGenConfig& s) {
    const auto shift = s.columns.size() > 1 ? s.columns[1].failure_shift : 0.0;
    return "rows=" + std::to_string(s.row_count) + ",frac=" + format_double(s.failure_fraction) +
           ",shift=" + format_double(shift);
}

inline bool parse_bool(std::string_view s, std::string_view what) {
    s = trim(s);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(std::string(what) + " must be true or false, got '" + std::string(s) + "'");
}

inline constexpr std::uint64_t kDefaultSeed = 42;

struct PipelineConfig {
    std::optional<std::string> input;               // CSV path
    std::optional<SyntheticGenConfig> synthetic;    // seed ignored: the stage seed wins
    LabelMode label = LabelMode::automatic;
    EmSettings em;
    SamplingChoice sampling;
    std::string learner = "smo";
    std::optional<StackSpec> stack;                 // when set, replaces `learner`
    LearnerSettings learners;
    double split = 0.66;
    std::uint64_t seed = kDefaultSeed;
    std::string output = "rigline-out";

    void validate() const {
        if (input.has_value() == synthetic.has_value()) {
            throw ConfigError("exactly one data source is required (input or synthetic)");
        }
        if (synthetic) synthetic->validate();
        if (!(split > 0.0 && split < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
        if (!(em.tol >= 0.0) || em.max_iter == 0) throw ConfigError("EM needs tol >= 0 and max_iter >= 1");
        if (stack) stack->validate();
        else if (!is_learner_id(learner)) make_learner(learner);  // throws the registry's message
        if (sampling.kind == SamplingKind::smote) sampling.smote.validate();
        if (sampling.cost) sampling.cost->validate();
        if (output.empty()) throw ConfigError("output directory must be named");
    }
};

/// Applies one key=value setting. Setting input clears synthetic and vice
/// versa, so a later layer (flags over file) can switch the data source.
inline void apply_setting(PipelineConfig& cfg, std::string_view key_in, std::string_view value_in) {
    const auto key = trim(key_in);
    const auto value = trim(value_in);
    const std::string v(value);
    if (key == "input") {
        cfg.input = v;
        cfg.synthetic.reset();
    } else if (key == "synthetic") {
        cfg.synthetic = parse_synthetic(value);
        cfg.input.reset();
    } else if (key == "label") {
        cfg.label = parse_label_mode(value);
    } else if (key == "em.tol") {
        cfg.em.tol = parse_double(value, "em.tol");
    } else if (key == "em.max_iter") {
        cfg.em.max_iter = static_cast<std::size_t>(std::max<std::int64_t>(0, parse_int(value, "em.max_iter")));
    } else if (key == "em.standardize") {
        cfg.em.standardize = parse_bool(value, "em.standardize");
    } else if (key == "em.columns") {
        cfg.em.columns.clear();
        for (auto& c : split(value, ';')) {
            if (!trim(c).empty()) cfg.em.columns.emplace_back(trim(c));
        }
    } else if (key == "sample") {
        cfg.sampling = parse_sampling(value);
    } else if (key == "cost") {
        cfg.sampling.kind = SamplingKind::cost;
        cfg.sampling.cost = parse_cost_pair(value);
    } else if (key == "learner") {
        make_learner(value);  // validates the id
        cfg.learner = v;
        cfg.stack.reset();
    } else if (key == "stack") {
        cfg.stack = parse_stack_spec(value);
    } else if (key == "split") {
        cfg.split = parse_double(value, "split");
    } else if (key == "seed") {
        const auto s = parse_int(value, "seed");
        if (s < 0) throw ConfigError("seed must be nonnegative");
        cfg.seed = static_cast<std::uint64_t>(s);
    } else if (key == "output") {
        cfg.output = v;
    } else if (key == "smo.c") {
        cfg.learners.smo.C = parse_double(value, "smo.c");
    } else if (key == "smo.kernel") {
        cfg.learners.smo.kernel.kind = parse_kernel_kind(value);
    } else if (key == "smo.gamma") {
        cfg.learners.smo.kernel.gamma = parse_double(value, "smo.gamma");
    } else if (key == "rf.trees") {
        cfg.learners.forest.n_trees = static_cast<std::size_t>(std::max<std::int64_t>(1, parse_int(value, "rf.trees")));
    } else if (key == "mlp.epochs") {
        cfg.learners.mlp.epochs = static_cast<std::size_t>(std::max<std::int64_t>(1, parse_int(value, "mlp.epochs")));
    } else if (key == "mlp.hidden") {
        cfg.learners.mlp.hidden = static_cast<std::size_t>(std::max<std::int64_t>(0, parse_int(value, "mlp.hidden")));
    } else {
        throw ConfigError("unknown setting '" + std::string(key) + "'");
    }
}

/// Plain-text key = value lines; '#' starts a comment.
inline void read_config(std::istream& in, PipelineConfig& cfg) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        const auto body = trim(std::string_view(line).substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        try {
            apply_setting(cfg, body.substr(0, eq), body.substr(eq + 1));
        } catch (const Error& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

inline PipelineConfig load_config(const std::string& path, PipelineConfig cfg = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    read_config(in, cfg);
    return cfg;
}

/// Every setting as key = value lines; read_config of the result rebuilds `cfg`.
inline std::string config_to_string(const PipelineConfig& cfg) {
    std::ostringstream os;
    if (cfg.input) os << "input = " << *cfg.input << '\n';
    if (cfg.synthetic) os << "synthetic = " << synthetic_to_string(*cfg.synthetic) << '\n';
    os << "label = " << label_mode_name(cfg.label) << '\n';
    os << "em.tol = " << format_double(cfg.em.tol) << '\n';
    os << "em.max_iter = " << cfg.em.max_iter << '\n';
    os << "em.standardize = " << (cfg.em.standardize ? "true" : "false") << '\n';
    os << "em.columns = ";
    for (std::size_t j = 0; j < cfg.em.columns.size(); ++j) os << (j ? ";" : "") << cfg.em.columns[j];
    os << '\n';
    os << "sample = " << cfg.sampling.to_string() << '\n';
    if (cfg.stack) os << "stack = " << cfg.stack->to_string() << '\n';
    else os << "learner = " << cfg.learner << '\n';
    os << "split = " << format_double(cfg.split) << '\n';
    os << "seed = " << cfg.seed << '\n';
    os << "output = " << cfg.output << '\n';
    os << "smo.c = " << format_double(cfg.learners.smo.C) << '\n';
    os << "smo.kernel = " << kernel_name(cfg.learners.smo.kernel.kind) << '\n';
    os << "smo.gamma = " << format_double(cfg.learners.smo.kernel.gamma) << '\n';
    os << "rf.trees = " << cfg.learners.forest.n_trees << '\n';
    os << "mlp.epochs = " << cfg.learners.mlp.epochs << '\n';
    os << "mlp.hidden = " << cfg.learners.mlp.hidden << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Seeds

/// Every stage seed is a fixed-offset derivation of the master seed.
struct StageSeeds {
    std::uint64_t data, label, split, sample, train;

    static StageSeeds from(std::uint64_t master) {
        return {derive_seed(master, 1), derive_seed(master, 2), derive_seed(master, 3), derive_seed(master, 4),
                derive_seed(master, 5)};
    }
};

/// FNV-1a, so cell seeds depend on names rather than grid positions.
inline std::uint64_t name_hash(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
    return h;
}

inline std::uint64_t sampling_seed(const StageSeeds& s, const SamplingChoice& c) {
    return derive_seed(s.sample, name_hash(c.name()));
}

inline std::uint64_t training_seed(const StageSeeds& s, const SamplingChoice& c, std::string_view model_key) {
    return derive_seed(s.train, name_hash(c.name() + "/" + std::string(model_key)));
}

// ---------------------------------------------------------------------------
// Stages

/// True when the header's last cell is a class column.
inline bool csv_has_class_column(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto cells = split(trim(line), ',');
        auto last = detail::normalized_header(cells.back());
        return last == "class" || last == "label";
    }
    throw EmptyDatasetError("CSV input is empty (no header row)");
}

inline Dataset load_source(const PipelineConfig& cfg, const StageSeeds& seeds) {
    if (cfg.synthetic) {
        auto s = *cfg.synthetic;
        s.seed = seeds.data;
        return generate_synthetic(s);
    }
    return load_csv(*cfg.input, csv_has_class_column(*cfg.input));
}

/// Projects onto the EM columns and optionally standardizes them.
inline Dataset em_view(const Dataset& d, const EmSettings& em) {
    std::vector<std::size_t> cols;
    if (em.columns.empty()) {
        cols = iota_indices(d.arity());
    } else {
        for (auto& name : em.columns) {
            std::size_t j = 0;
            while (j < d.arity() && d.schema()[j].name != name) ++j;
            if (j == d.arity()) throw ConfigError("EM column '" + name + "' is not in the data");
            cols.push_back(j);
        }
    }
    std::vector<Column> schema;
    for (auto j : cols) schema.push_back(d.schema()[j]);
    std::vector<double> values;
    values.reserve(d.rows() * cols.size());
    for (std::size_t i = 0; i < d.rows(); ++i) {
        for (auto j : cols) values.push_back(d.row(i)[j]);
    }
    Dataset v(std::move(schema), std::move(values));
    return em.standardize ? Standardizer::fit(v).apply(v) : v;
}

/// Labels from a two-component mixture fitted on the EM view of `d`.
inline Dataset em_label(const Dataset& d, const EmSettings& em, std::uint64_t seed,
                        GaussianMixtureModel* fitted = nullptr) {
    const auto view = em_view(d, em);
    const auto m = em_fit(view, EmConfig{2, seed, em.tol, em.max_iter});
    const auto labeled = em_assign_labels(m, view);
    if (fitted) *fitted = m;
    return d.with_labels(labeled.labels());
}

inline Dataset label_stage(const Dataset& d, const PipelineConfig& cfg, const StageSeeds& seeds) {
    const bool has = d.labeled() && !d.labels().empty();
    switch (cfg.label) {
        case LabelMode::none:
            if (!has) throw LabelError("data has no class column and labeling is disabled");
            return d;
        case LabelMode::automatic:
            if (has) return d;
            return em_label(d, cfg.em, seeds.label);
        case LabelMode::em: return em_label(d.without_labels(), cfg.em, seeds.label);
    }
    return d;
}

/// Training data after the regime, plus the cost matrix for the cost regime.
struct SampledTrain {
    Dataset data;
    std::optional<CostMatrix> cost;
};

inline SampledTrain apply_sampling(const SamplingChoice& c, const Dataset& train, std::uint64_t seed) {
    switch (c.kind) {
        case SamplingKind::none: return {train, std::nullopt};
        case SamplingKind::smote: {
            auto sc = c.smote;
            sc.seed = seed;
            return {smote(train, sc), std::nullopt};
        }
        case SamplingKind::under: return {undersample(train, seed), std::nullopt};
        case SamplingKind::cost: return {train, c.cost ? *c.cost : CostMatrix::balanced_for(train)};
    }
    return {train, std::nullopt};
}

/// Learner id or stack preset number/spec, with a table heading.
struct ModelChoice {
    std::string key;  // "smo", "model3", or a stack spec string
    std::string display;
    std::optional<StackSpec> stack;

    static ModelChoice learner(const std::string& id) { return {id, learner_display_name(id), std::nullopt}; }
    static ModelChoice preset(int model) {
        return {"model" + std::to_string(model), stack_preset_name(model), stack_preset(model)};
    }
    static ModelChoice from_stack(const StackSpec& s) {
        for (int m = 1; m <= 5; ++m) {
            if (stack_preset(m) == s) return preset(m);
        }
        return {s.to_string(), "Stack", s};
    }
};

inline ModelChoice model_choice(const PipelineConfig& cfg) {
    return cfg.stack ? ModelChoice::from_stack(*cfg.stack) : ModelChoice::learner(cfg.learner);
}

inline TrainedModel train_choice(const ModelChoice& m, const SampledTrain& train, std::uint64_t seed,
                                 const LearnerSettings& settings) {
    TrainedModel model = m.stack ? TrainedModel(train_stack(train.data, *m.stack, seed, settings))
                                 : make_learner(m.key, settings).train(train.data, seed);
    if (train.cost) model = cost_sensitive_wrap(model, *train.cost);
    return model;
}

template <typename F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

/// Writes through a temporary file and a rename, so readers never see a
/// partially written artifact.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw Error("cannot write '" + tmp.string() + "'");
        os << content;
        if (!os) throw Error("failed writing '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline std::string manifest_text(const PipelineConfig& cfg, const StageSeeds& s, const std::string& extra = {}) {
    std::ostringstream os;
    os << "# rigline run manifest; read back as a config file to reproduce every artifact\n";
    os << config_to_string(cfg);
    os << "# derived seeds: data " << s.data << ", label " << s.label << ", split " << s.split << ", sample "
       << s.sample << ", train " << s.train << '\n';
    os << extra;
    return os.str();
}

/// Labeled data split once into train and test parts.
struct PreparedData {
    Dataset labeled;
    Dataset train;
    Dataset test;
};

inline PreparedData prepare_data(const PipelineConfig& cfg, const StageSeeds& seeds) {
    auto raw = run_stage("load", [&] { return load_source(cfg, seeds); });
    auto labeled = run_stage("label", [&] { return label_stage(raw, cfg, seeds); });
    auto [train, test] = run_stage("split", [&] { return split_train_test(labeled, cfg.split, seeds.split); });
    return {std::move(labeled), std::move(train), std::move(test)};
}

struct PipelineResult {
    PreparedData data;
    TrainedModel model;
    std::string name;
    EvalReport report;
    ComparisonTable table;
};

/// load -> label -> split -> sample -> train -> evaluate. Writes labeled.csv,
/// model.txt, report.csv, detail.txt and manifest.txt into cfg.output.
inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
    run_stage("config", [&] { cfg.validate(); });
    const auto seeds = StageSeeds::from(cfg.seed);
    PipelineResult r{prepare_data(cfg, seeds), nullptr, {}, {}, {}};
    const auto choice = model_choice(cfg);
    r.name = choice.display;
    const auto sampled = run_stage("sample", [&] {
        return apply_sampling(cfg.sampling, r.data.train, sampling_seed(seeds, cfg.sampling));
    });
    r.model = run_stage("train", [&] {
        return train_choice(choice, sampled, training_seed(seeds, cfg.sampling, choice.key), cfg.learners);
    });
    r.report = run_stage("evaluate", [&] { return evaluate(*r.model, r.data.test); });
    r.table.columns.push_back({r.name, r.report, {}});
    run_stage("write", [&] {
        const std::filesystem::path out(cfg.output);
        std::filesystem::create_directories(out);
        std::ostringstream labeled, model, detail;
        write_csv(labeled, r.data.labeled);
        write_model(model, *r.model);
        write_detail(detail, r.name, r.report);
        write_file_atomic(out / "labeled.csv", labeled.str());
        write_file_atomic(out / "model.txt", model.str());
        write_file_atomic(out / "report.csv", r.table.to_csv());
        write_file_atomic(out / "detail.txt", detail.str());
        write_file_atomic(out / "manifest.txt", manifest_text(cfg, seeds));
    });
    return r;
}

// ---------------------------------------------------------------------------
// Experiment grid

struct GridSpec {
    std::vector<SamplingChoice> regimes;
    std::vector<std::string> learners;
    std::vector<int> stacks;  // preset numbers; empty skips the ensemble tables

    /// Four regimes x six learners, then Models I-V and the best one vs all.
    static GridSpec defaults() {
        GridSpec g;
        for (auto r : {"none", "smote", "under", "cost"}) g.regimes.push_back(parse_sampling(r));
        for (auto id : kLearnerIds) g.learners.emplace_back(id);
        g.stacks = {1, 2, 3, 4, 5};
        return g;
    }

    void validate() const {
        if (regimes.empty() && stacks.empty()) throw ConfigError("grid needs at least one regime or stack");
        if (!regimes.empty() && learners.empty()) throw ConfigError("grid regimes need at least one learner");
        for (auto& l : learners) make_learner(l);
        for (int s : stacks) stack_preset(s);
    }
};

struct GridTable {
    std::string file;
    ComparisonTable table;
};

struct GridResult {
    std::vector<GridTable> tables;
    std::string summary;
};

/// Index of the best column: highest ROC, then highest TP rate, then the
/// earliest column. Failed cells never win. Returns npos when all failed.
inline std::size_t best_column(const ComparisonTable& t) {
    std::size_t best = std::string::npos;
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        if (!t.columns[c].report) continue;
        if (best == std::string::npos) {
            best = c;
            continue;
        }
        const auto& a = t.columns[c].report->weighted;
        const auto& b = t.columns[best].report->weighted;
        const double ra = a.roc_auc.value_or(0.0), rb = b.roc_auc.value_or(0.0);
        if (ra > rb || (ra == rb && a.tp_rate > b.tp_rate)) best = c;
    }
    return best;
}

namespace detail {

inline TableColumn grid_cell(const ModelChoice& m, const SampledTrain& train, const Dataset& test, std::uint64_t seed,
                             const LearnerSettings& settings) {
    try {
        auto model = train_choice(m, train, seed, settings);
        return {m.display, evaluate(*model, test), {}};
    } catch (const std::exception& e) {
        return {m.display, std::nullopt, e.what()};
    }
}

inline std::string describe_best(const std::string& label, const ComparisonTable& t) {
    const auto b = best_column(t);
    if (b == std::string::npos) return label + ": none (every cell failed)\n";
    const auto& w = t.columns[b].report->weighted;
    return label + ": " + t.columns[b].name + " (ROC " + format_fixed(w.roc_auc.value_or(0.0), 3) + ", TP Rate " +
           format_fixed(w.tp_rate, 3) + ")\n";
}

}  // namespace detail

/// Runs every regime x learner cell on one shared split, then the stack
/// presets and the best stack against the unsampled learners. Cells that
/// throw are recorded as ERROR columns. Writes one CSV per table, the
/// labeled data, summary.txt and manifest.txt into cfg.output.
inline GridResult run_experiment_grid(const PipelineConfig& cfg, const GridSpec& grid) {
    run_stage("config", [&] {
        cfg.validate();
        grid.validate();
    });
    const auto seeds = StageSeeds::from(cfg.seed);
    const auto data = prepare_data(cfg, seeds);
    GridResult out;
    std::ostringstream summary;
    std::size_t table_no = 0;
    std::optional<ComparisonTable> unsampled;

    for (auto& regime : grid.regimes) {
        ComparisonTable t;
        try {
            const auto sampled = apply_sampling(regime, data.train, sampling_seed(seeds, regime));
            for (auto& id : grid.learners) {
                const auto m = ModelChoice::learner(id);
                t.columns.push_back(
                    detail::grid_cell(m, sampled, data.test, training_seed(seeds, regime, m.key), cfg.learners));
            }
        } catch (const std::exception& e) {
            for (auto& id : grid.learners) {
                t.columns.push_back({learner_display_name(id), std::nullopt, std::string("sample: ") + e.what()});
            }
        }
        if (regime.kind == SamplingKind::none && !unsampled) unsampled = t;
        summary << detail::describe_best("best under " + regime.to_string(), t);
        out.tables.push_back({"table" + std::to_string(++table_no) + "_" + regime.name() + ".csv", std::move(t)});
    }

    if (!grid.stacks.empty()) {
        const SamplingChoice none;
        const SampledTrain raw{data.train, std::nullopt};
        ComparisonTable ens;
        for (int s : grid.stacks) {
            const auto m = ModelChoice::preset(s);
            ens.columns.push_back(
                detail::grid_cell(m, raw, data.test, training_seed(seeds, none, m.key), cfg.learners));
        }
        summary << detail::describe_best("best ensemble", ens);
        const auto best = best_column(ens);
        out.tables.push_back({"table" + std::to_string(++table_no) + "_ensembles.csv", ens});

        if (!grid.learners.empty()) {
            ComparisonTable vs;
            if (unsampled) {
                vs = *unsampled;
            } else {
                for (auto& id : grid.learners) {
                    const auto m = ModelChoice::learner(id);
                    vs.columns.push_back(
                        detail::grid_cell(m, raw, data.test, training_seed(seeds, none, m.key), cfg.learners));
                }
            }
            if (best != std::string::npos) vs.columns.push_back(ens.columns[best]);
            summary << detail::describe_best("best overall", vs);
            out.tables.push_back({"table" + std::to_string(++table_no) + "_best_vs_all.csv", std::move(vs)});
        }
    }
    out.summary = summary.str();

    run_stage("write", [&] {
        const std::filesystem::path dir(cfg.output);
        std::filesystem::create_directories(dir);
        std::ostringstream labeled;
        write_csv(labeled, data.labeled);
        write_file_atomic(dir / "labeled.csv", labeled.str());
        for (auto& t : out.tables) write_file_atomic(dir / t.file, t.table.to_csv());
        write_file_atomic(dir / "summary.txt", out.summary);
        std::string extra = "# grid regimes:";
        for (auto& r : grid.regimes) extra += " " + r.to_string();
        extra += "\n# grid learners:";
        for (auto& l : grid.learners) extra += " " + l;
        extra += "\n# grid stacks:";
        for (int s : grid.stacks) extra += " model" + std::to_string(s);
        extra += "\n";
        write_file_atomic(dir / "manifest.txt", manifest_text(cfg, seeds, extra));
    });
    return out;
}

}  // namespace rigline

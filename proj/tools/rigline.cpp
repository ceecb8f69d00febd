#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rigline/rigline.hpp"

using namespace rigline;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Usage problems found after CLI11 parsing (bad tokens, conflicting flags).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Ordered key=value overrides; later entries win.
using Settings = std::vector<std::pair<std::string, std::string>>;

struct PipelineFlags {
    std::string config_file;
    std::string input;
    std::string synthetic;
    std::string label;
    std::string sample;
    std::string cost;
    std::string learner;
    std::string stack;
    std::string split;
    std::string seed;
    std::string output;
    std::vector<std::string> set;

    void add_to(CLI::App* app) {
        app->add_option("--config", config_file, "Key = value config file (flags override it)");
        app->add_option("--input", input, "CSV readings (a trailing 'class' column marks labeled data)");
        app->add_option("--synthetic", synthetic, "Synthetic data, e.g. rows=5000,frac=0.13,shift=2");
        app->add_option("--label", label, "auto | em | none");
        app->add_option("--sample", sample, "none | smote[:k=5,ratio=1.0] | under | cost[:a,b]");
        app->add_option("--cost", cost, "Cost-sensitive regime 'a,b': false alarm cost, missed failure cost");
        app->add_option("--learner", learner, "tree | part | mlp | nb | rf | smo");
        app->add_option("--stack", stack, "model1..model5 or stack:meta=smo;base=part,mlp,nb;folds=5");
        app->add_option("--split", split, "Train fraction in (0, 1)");
        app->add_option("--seed", seed, "Master seed (overrides RIGLINE_SEED)");
        app->add_option("--out", output, "Output directory");
        app->add_option("--set", set, "Extra key=value setting, repeatable (e.g. smo.c=10)");
    }

    PipelineConfig resolve() const {
        if (!input.empty() && !synthetic.empty()) throw UsageError("--input and --synthetic are mutually exclusive");
        if (!learner.empty() && !stack.empty()) throw UsageError("--learner and --stack are mutually exclusive");
        if (!sample.empty() && !cost.empty()) throw UsageError("--sample and --cost are mutually exclusive");
        PipelineConfig cfg;
        if (!config_file.empty()) cfg = load_config(config_file);
        Settings s;
        if (const char* env = std::getenv("RIGLINE_SEED"); env && *env) s.emplace_back("seed", env);
        auto add = [&](const char* key, const std::string& v) {
            if (!v.empty()) s.emplace_back(key, v);
        };
        add("input", input);
        add("synthetic", synthetic);
        add("label", label);
        add("sample", sample);
        add("cost", cost);
        add("learner", learner);
        add("stack", stack);
        add("split", split);
        add("seed", seed);
        add("output", output);
        for (auto& kv : set) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
            s.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
        }
        for (auto& [k, v] : s) apply_setting(cfg, k, v);
        if (!cfg.input && !cfg.synthetic) cfg.synthetic = parse_synthetic("");
        cfg.validate();
        return cfg;
    }
};

std::uint64_t resolve_seed(const std::string& flag) {
    std::string v = flag;
    if (v.empty()) {
        if (const char* env = std::getenv("RIGLINE_SEED"); env && *env) v = env;
    }
    if (v.empty()) return kDefaultSeed;
    const auto s = parse_int(v, "seed");
    if (s < 0) throw ConfigError("seed must be nonnegative");
    return static_cast<std::uint64_t>(s);
}

void print_report(const std::string& name, const EvalReport& rep) { write_detail(std::cout, name, rep); }

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    write_file_atomic(p, text);
}

Dataset load_any(const std::string& path) { return load_csv(path, csv_has_class_column(path)); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rigline: sensor failure classification pipeline"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "Write a synthetic labeled sensor dataset");
    std::string gen_spec = "rows=5000,frac=0.13,shift=2", gen_seed, gen_out;
    gen->add_option("--synthetic", gen_spec, "rows=..,frac=..,shift=..");
    gen->add_option("--seed", gen_seed, "Master seed");
    gen->add_option("--out", gen_out, "Output CSV (stdout when omitted)");

    // label
    auto* lab = app.add_subcommand("label", "Label readings with a two-component Gaussian mixture");
    std::string lab_in, lab_out, lab_mix, lab_seed, lab_cols;
    bool lab_raw = false;
    lab->add_option("--input", lab_in, "CSV readings")->required();
    lab->add_option("--out", lab_out, "Labeled CSV (stdout when omitted)");
    lab->add_option("--mixture", lab_mix, "Also write the fitted mixture document here");
    lab->add_option("--columns", lab_cols, "Feature columns used for clustering, ';'-separated");
    lab->add_flag("--raw", lab_raw, "Cluster raw values instead of z-scores");
    lab->add_option("--seed", lab_seed, "Master seed");

    // sample
    auto* smp = app.add_subcommand("sample", "Resample a labeled training CSV");
    std::string smp_in, smp_out, smp_spec, smp_seed;
    smp->add_option("--input", smp_in, "Labeled CSV")->required();
    smp->add_option("--sample", smp_spec, "smote[:k=5,ratio=1.0] | under | none")->required();
    smp->add_option("--out", smp_out, "Output CSV (stdout when omitted)");
    smp->add_option("--seed", smp_seed, "Master seed");

    // train
    auto* trn = app.add_subcommand("train", "Train one learner or stack on a labeled CSV");
    std::string trn_in, trn_out, trn_learner, trn_stack, trn_sample, trn_cost, trn_seed;
    trn->add_option("--input", trn_in, "Labeled training CSV")->required();
    trn->add_option("--out", trn_out, "Model document (stdout when omitted)");
    trn->add_option("--learner", trn_learner, "tree | part | mlp | nb | rf | smo");
    trn->add_option("--stack", trn_stack, "model1..model5 or stack:...");
    trn->add_option("--sample", trn_sample, "none | smote[:..] | under | cost[:a,b]");
    trn->add_option("--cost", trn_cost, "Cost-sensitive regime 'a,b'");
    trn->add_option("--seed", trn_seed, "Master seed");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Evaluate a saved model on a labeled CSV");
    std::string ev_model, ev_in, ev_out, ev_name = "Model";
    ev->add_option("--model", ev_model, "Model document")->required();
    ev->add_option("--input", ev_in, "Labeled test CSV")->required();
    ev->add_option("--out", ev_out, "Report CSV (stdout when omitted)");
    ev->add_option("--name", ev_name, "Column heading");

    // run / grid
    auto* run = app.add_subcommand("run", "load -> label -> split -> sample -> train -> evaluate");
    PipelineFlags run_flags;
    run_flags.add_to(run);

    auto* grid = app.add_subcommand("grid", "Regimes x learners tables, then stacked models");
    PipelineFlags grid_flags;
    grid_flags.add_to(grid);
    std::string grid_regimes, grid_learners, grid_stacks;
    grid->add_option("--regimes", grid_regimes, "Space-separated regimes (default: none smote under cost)");
    grid->add_option("--learners", grid_learners, "Comma-separated learner ids (default: all six)");
    grid->add_option("--stacks", grid_stacks, "Comma-separated presets 1..5, or 'none' (default: 1,2,3,4,5)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    // Config-time failures are usage errors (exit 2) and happen before any
    // artifact is written; later failures exit 1 naming the stage.
    try {
        if (*gen) {
            const auto seeds = StageSeeds::from(resolve_seed(gen_seed));
            auto cfg = parse_synthetic(gen_spec);
            cfg.seed = seeds.data;
            const auto d = run_stage("generate", [&] { return generate_synthetic(cfg); });
            std::ostringstream os;
            write_csv(os, d);
            write_text(gen_out, os.str());
        } else if (*lab) {
            const auto seeds = StageSeeds::from(resolve_seed(lab_seed));
            EmSettings em;
            em.standardize = !lab_raw;
            for (auto& c : split(lab_cols, ';')) {
                if (!trim(c).empty()) em.columns.emplace_back(trim(c));
            }
            const auto d = run_stage("load", [&] { return load_csv(lab_in, csv_has_class_column(lab_in)); });
            GaussianMixtureModel mix;
            const auto labeled =
                run_stage("label", [&] { return em_label(d.without_labels(), em, seeds.label, &mix); });
            std::ostringstream os;
            write_csv(os, labeled);
            write_text(lab_out, os.str());
            if (!lab_mix.empty()) {
                std::ostringstream ms;
                write_mixture(ms, mix);
                write_text(lab_mix, ms.str());
            }
            for (auto& w : mix.warnings) std::cerr << "warning: " << w << '\n';
            const auto counts = labeled.class_counts();
            std::cerr << "labeled " << labeled.rows() << " rows: normal " << counts[kNormal] << ", failure "
                      << counts[kFailure] << '\n';
        } else if (*smp) {
            const auto seeds = StageSeeds::from(resolve_seed(smp_seed));
            const auto choice = parse_sampling(smp_spec);
            if (choice.kind == SamplingKind::cost) throw UsageError("cost is a training regime; use train --cost");
            const auto d = run_stage("load", [&] { return load_csv(smp_in, true); });
            const auto out = run_stage("sample", [&] { return apply_sampling(choice, d, sampling_seed(seeds, choice)); });
            std::ostringstream os;
            write_csv(os, out.data);
            write_text(smp_out, os.str());
        } else if (*trn) {
            if (!trn_learner.empty() && !trn_stack.empty()) throw UsageError("--learner and --stack are mutually exclusive");
            if (!trn_sample.empty() && !trn_cost.empty()) throw UsageError("--sample and --cost are mutually exclusive");
            const auto seeds = StageSeeds::from(resolve_seed(trn_seed));
            PipelineConfig cfg;
            if (!trn_learner.empty()) apply_setting(cfg, "learner", trn_learner);
            if (!trn_stack.empty()) apply_setting(cfg, "stack", trn_stack);
            if (!trn_sample.empty()) apply_setting(cfg, "sample", trn_sample);
            if (!trn_cost.empty()) apply_setting(cfg, "cost", trn_cost);
            const auto choice = model_choice(cfg);
            const auto d = run_stage("load", [&] { return load_csv(trn_in, true); });
            const auto sampled =
                run_stage("sample", [&] { return apply_sampling(cfg.sampling, d, sampling_seed(seeds, cfg.sampling)); });
            const auto model = run_stage("train", [&] {
                return train_choice(choice, sampled, training_seed(seeds, cfg.sampling, choice.key), cfg.learners);
            });
            std::ostringstream os;
            write_model(os, *model);
            write_text(trn_out, os.str());
        } else if (*ev) {
            const auto model = run_stage("load", [&] { return load_model(ev_model); });
            const auto d = run_stage("load", [&] { return load_any(ev_in); });
            const auto rep = run_stage("evaluate", [&] { return evaluate(*model, d); });
            ComparisonTable t;
            t.columns.push_back({ev_name, rep, {}});
            write_text(ev_out, t.to_csv());
            if (!ev_out.empty()) print_report(ev_name, rep);
        } else if (*run) {
            const auto cfg = run_flags.resolve();
            const auto r = run_pipeline(cfg);
            print_report(r.name, r.report);
            std::cout << "artifacts written to " << cfg.output << '\n';
        } else if (*grid) {
            const auto cfg = grid_flags.resolve();
            auto spec = GridSpec::defaults();
            if (!grid_regimes.empty()) {
                spec.regimes.clear();
                std::istringstream is(grid_regimes);
                for (std::string tok; is >> tok;) spec.regimes.push_back(parse_sampling(tok));
            }
            if (!grid_learners.empty()) {
                spec.learners.clear();
                for (auto& id : split(grid_learners, ',')) {
                    if (!trim(id).empty()) spec.learners.emplace_back(trim(id));
                }
            }
            if (!grid_stacks.empty()) {
                spec.stacks.clear();
                if (trim(grid_stacks) != "none") {
                    for (auto& s : split(grid_stacks, ',')) {
                        auto t = std::string(trim(s));
                        if (t.starts_with("model")) t = t.substr(5);
                        spec.stacks.push_back(static_cast<int>(parse_int(t, "stack preset")));
                    }
                }
            }
            spec.validate();
            const auto r = run_experiment_grid(cfg, spec);
            for (auto& t : r.tables) std::cout << "== " << t.file << '\n' << t.table.to_csv();
            std::cout << r.summary << "artifacts written to " << cfg.output << '\n';
        }
    } catch (const StageError& e) {
        if (e.stage() == "config") {
            std::cerr << "usage error: " << e.what() << '\n';
            return kExitUsage;
        }
        std::cerr << "error in stage " << e.what() << '\n';
        return kExitRuntime;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ParseError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}

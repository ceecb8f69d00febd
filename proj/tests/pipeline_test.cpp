#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "rigline/rigline.hpp"

using namespace rigline;
namespace fs = std::filesystem;

namespace {

const std::string kSample = std::string(RIGLINE_DATA_DIR) + "/sample_readings.csv";
const std::string kCli = RIGLINE_CLI_PATH;

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("rigline_pipeline_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

PipelineConfig small_config(const fs::path& out, const std::string& learner = "nb") {
    PipelineConfig cfg;
    cfg.synthetic = parse_synthetic("rows=600,frac=0.13");
    cfg.learner = learner;
    cfg.output = out.string();
    cfg.seed = 7;
    return cfg;
}

int run_cli(const std::string& args, const std::string& env = {}) {
    const auto cmd = env + (env.empty() ? "" : " ") + "\"" + kCli + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, SamplingTokens) {
    EXPECT_EQ(parse_sampling("none").kind, SamplingKind::none);
    EXPECT_EQ(parse_sampling("under").kind, SamplingKind::under);
    const auto s = parse_sampling("smote:k=3,ratio=0.5");
    EXPECT_EQ(s.kind, SamplingKind::smote);
    EXPECT_EQ(s.smote.k_neighbors, 3u);
    EXPECT_DOUBLE_EQ(s.smote.target_ratio, 0.5);
    const auto c = parse_sampling("cost:1,6.5");
    ASSERT_TRUE(c.cost.has_value());
    EXPECT_DOUBLE_EQ(c.cost->cost[kFailure][kNormal], 6.5);
    EXPECT_FALSE(parse_sampling("cost").cost.has_value());
    for (auto bad : {"oversample", "smote:k=0", "smote:q=1", "under:1", "cost:1", "smote:ratio=-1", ""}) {
        EXPECT_THROW(parse_sampling(bad), Error) << bad;
    }
    for (auto tok : {"none", "under", "smote:k=3,ratio=0.5", "cost", "cost:1,6.5"}) {
        EXPECT_EQ(parse_sampling(tok).to_string(), tok);
    }
}

TEST(Config, SyntheticAndLabelTokens) {
    const auto s = parse_synthetic("rows=1200,frac=0.2");
    EXPECT_EQ(s.row_count, 1200u);
    EXPECT_DOUBLE_EQ(s.failure_fraction, 0.2);
    EXPECT_EQ(synthetic_to_string(s), "rows=1200,frac=0.2,shift=2");
    EXPECT_THROW(parse_synthetic("rows=0"), ConfigError);
    EXPECT_THROW(parse_synthetic("frac=1.5"), ConfigError);
    EXPECT_THROW(parse_synthetic("size=3"), ConfigError);
    EXPECT_EQ(parse_label_mode("auto"), LabelMode::automatic);
    EXPECT_EQ(parse_label_mode("em"), LabelMode::em);
    EXPECT_THROW(parse_label_mode("kmeans"), ConfigError);
}

TEST(Config, ValidationRequiresExactlyOneSourceAndOpenSplit) {
    PipelineConfig cfg;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.synthetic = parse_synthetic("");
    EXPECT_NO_THROW(cfg.validate());
    cfg.input = kSample;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.input.reset();
    for (double bad : {0.0, 1.0, -0.1, 1.5}) {
        cfg.split = bad;
        EXPECT_THROW(cfg.validate(), ConfigError);
    }
}

TEST(Config, FileThenOverridesAndRoundTrip) {
    std::istringstream file(
        "# comment\n"
        "synthetic = rows=800,frac=0.1\n"
        "sample = smote:k=4,ratio=1\n"
        "stack = model3  # trailing comment\n"
        "split = 0.5\n"
        "seed = 11\n");
    PipelineConfig cfg;
    read_config(file, cfg);
    EXPECT_EQ(cfg.synthetic->row_count, 800u);
    ASSERT_TRUE(cfg.stack.has_value());
    EXPECT_EQ(*cfg.stack, stack_preset(3));
    EXPECT_EQ(cfg.seed, 11u);
    apply_setting(cfg, "learner", "rf");  // flag layer
    apply_setting(cfg, "input", kSample);
    EXPECT_FALSE(cfg.stack.has_value());
    EXPECT_FALSE(cfg.synthetic.has_value());
    EXPECT_EQ(cfg.learner, "rf");

    apply_setting(cfg, "em.columns", "Operating Pressure (in psi);Gas Detector (in PPM)");
    apply_setting(cfg, "smo.c", "10");
    const auto text = config_to_string(cfg);
    PipelineConfig back;
    std::istringstream is(text);
    read_config(is, back);
    EXPECT_EQ(config_to_string(back), text);
    EXPECT_EQ(back.em.columns.size(), 2u);

    std::istringstream bad("learner = svm\n");
    EXPECT_THROW(read_config(bad, back), ConfigError);
    std::istringstream unknown("colour = blue\n");
    EXPECT_THROW(read_config(unknown, back), ConfigError);
}

TEST(Seeds, StageSeedsAreDistinctAndFixed) {
    const auto a = StageSeeds::from(5), b = StageSeeds::from(5), c = StageSeeds::from(6);
    std::set<std::uint64_t> all{a.data, a.label, a.split, a.sample, a.train};
    EXPECT_EQ(all.size(), 5u);
    EXPECT_EQ(a.train, b.train);
    EXPECT_NE(a.train, c.train);
    SamplingChoice none, under = parse_sampling("under");
    EXPECT_NE(training_seed(a, none, "smo"), training_seed(a, under, "smo"));
    EXPECT_NE(training_seed(a, none, "smo"), training_seed(a, none, "nb"));
}

TEST(Labeling, AutoKeepsLabelsEmRelabelsNoneRequiresThem) {
    const auto seeds = StageSeeds::from(3);
    PipelineConfig cfg;
    cfg.synthetic = parse_synthetic("rows=400");
    const auto raw = load_source(cfg, seeds);
    EXPECT_EQ(label_stage(raw, cfg, seeds).labels(), raw.labels());
    cfg.label = LabelMode::em;
    const auto relabeled = label_stage(raw, cfg, seeds);
    EXPECT_EQ(relabeled.rows(), raw.rows());
    const auto counts = relabeled.class_counts();
    EXPECT_GE(counts[kNormal], counts[kFailure]);  // larger cluster is normal
    cfg.label = LabelMode::none;
    EXPECT_THROW(label_stage(raw.without_labels(), cfg, seeds), LabelError);
    cfg.label = LabelMode::automatic;
    EXPECT_EQ(label_stage(raw.without_labels(), cfg, seeds).labels(), relabeled.labels());
}

TEST(Labeling, EmColumnsSelectAndStandardize) {
    const auto d = load_csv(kSample, false);
    EmSettings em;
    em.columns = {"Gas Detector (in PPM)", "Operating Pressure (in psi)"};
    const auto v = em_view(d, em);
    ASSERT_EQ(v.arity(), 2u);
    EXPECT_EQ(v.schema()[0].name, "Gas Detector (in PPM)");
    double mean = 0.0;
    for (std::size_t i = 0; i < v.rows(); ++i) mean += v.row(i)[0];
    EXPECT_NEAR(mean / static_cast<double>(v.rows()), 0.0, 1e-12);
    em.standardize = false;
    EXPECT_DOUBLE_EQ(em_view(d, em).row(0)[1], d.row(0)[1]);
    em.columns = {"Humidity"};
    EXPECT_THROW(em_view(d, em), ConfigError);
    EXPECT_FALSE(csv_has_class_column(kSample));
}

TEST(Pipeline, SmokeRunWritesAllArtifacts) {
    const auto out = scratch("smoke");
    const auto r = run_pipeline(small_config(out, "smo"));
    for (auto f : {"labeled.csv", "model.txt", "report.csv", "detail.txt", "manifest.txt"}) {
        EXPECT_TRUE(fs::exists(out / f)) << f;
        EXPECT_FALSE(fs::exists(out / (std::string(f) + ".tmp"))) << f;
    }
    const auto parsed = parse_table_csv(slurp(out / "report.csv"));
    ASSERT_EQ(parsed.size(), 1u);
    EXPECT_EQ(parsed[0].first, "SMO");
    EXPECT_GT(parsed[0].second[5], 0.9);
    EXPECT_EQ(r.data.labeled.rows(), 600u);
    EXPECT_EQ(r.data.train.rows(), 396u);

    const auto model = load_model((out / "model.txt").string());
    for (std::size_t i = 0; i < r.data.test.rows(); ++i) {
        const auto a = model->predict_proba(r.data.test.row(i));
        const auto b = r.model->predict_proba(r.data.test.row(i));
        ASSERT_NEAR(a[1], b[1], 1e-12);
    }
}

TEST(Pipeline, ManifestAloneReproducesEveryArtifact) {
    const auto out = scratch("manifest_a");
    auto cfg = small_config(out, "rf");
    cfg.sampling = parse_sampling("smote:k=5,ratio=1");
    run_pipeline(cfg);
    auto again = load_config((out / "manifest.txt").string());
    const auto out2 = scratch("manifest_b");
    again.output = out2.string();
    run_pipeline(again);
    for (auto f : {"labeled.csv", "model.txt", "report.csv", "detail.txt"}) {
        EXPECT_EQ(slurp(out / f), slurp(out2 / f)) << f;
    }
}

TEST(Pipeline, StackAndCostRegimes) {
    const auto out = scratch("stack");
    auto cfg = small_config(out);
    cfg.stack = parse_stack_spec("model3");
    cfg.sampling = parse_sampling("cost");
    const auto r = run_pipeline(cfg);
    EXPECT_EQ(r.name, "Model III");
    EXPECT_EQ(r.model->kind(), "cost");
    const auto model = load_model((out / "model.txt").string());
    EXPECT_EQ(model->predict(r.data.test.row(0)), r.model->predict(r.data.test.row(0)));
}

TEST(Pipeline, SplitIsDisjointAndSamplingTouchesOnlyTrain) {
    auto cfg = small_config(scratch("split"));
    const auto seeds = StageSeeds::from(cfg.seed);
    const auto data = prepare_data(cfg, seeds);
    std::set<std::size_t> train(data.train.row_ids().begin(), data.train.row_ids().end());
    for (auto id : data.test.row_ids()) EXPECT_EQ(train.count(id), 0u);
    EXPECT_EQ(train.size() + data.test.rows(), data.labeled.rows());
    for (auto tok : {"smote", "under"}) {
        const auto s = apply_sampling(parse_sampling(tok), data.train, 1);
        for (auto id : s.data.row_ids()) {
            const bool original = id < data.labeled.rows();
            if (original) {
                EXPECT_EQ(train.count(id), 1u) << tok;
            }
        }
    }
}

TEST(Pipeline, StageErrorsNameTheStage) {
    auto cfg = small_config(scratch("errors"));
    cfg.synthetic.reset();
    cfg.input = "/nonexistent/readings.csv";
    try {
        run_pipeline(cfg);
        FAIL() << "expected a load error";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "load");
    }
    cfg.input = kSample;
    cfg.label = LabelMode::none;
    try {
        run_pipeline(cfg);
        FAIL() << "expected a label error";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "label");
    }
    cfg.split = 1.0;
    try {
        run_pipeline(cfg);
        FAIL() << "expected a config error";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "config");
    }
    EXPECT_FALSE(fs::exists(cfg.output));
}

TEST(Grid, BestColumnOrdersByRocThenTpRate) {
    auto col = [](std::string name, double roc, double tp) {
        EvalReport r;
        r.weighted.roc_auc = roc;
        r.weighted.tp_rate = tp;
        return TableColumn{std::move(name), r, {}};
    };
    ComparisonTable t;
    t.columns = {col("a", 0.9, 0.9), col("b", 0.95, 0.8), col("c", 0.95, 0.85), col("d", 0.95, 0.85)};
    EXPECT_EQ(best_column(t), 2u);
    t.columns.insert(t.columns.begin(), TableColumn{"broken", std::nullopt, "boom"});
    EXPECT_EQ(best_column(t), 3u);
    ComparisonTable failed;
    failed.columns = {TableColumn{"x", std::nullopt, "boom"}};
    EXPECT_EQ(best_column(failed), std::string::npos);
}

TEST(Grid, DegenerateGridMatchesRunPipeline) {
    const auto run_dir = scratch("degenerate_run");
    const auto grid_dir = scratch("degenerate_grid");
    auto cfg = small_config(run_dir, "mlp");
    const auto r = run_pipeline(cfg);
    cfg.output = grid_dir.string();
    GridSpec g;
    g.regimes = {parse_sampling("none")};
    g.learners = {"mlp"};
    const auto res = run_experiment_grid(cfg, g);
    ASSERT_EQ(res.tables.size(), 1u);
    EXPECT_EQ(res.tables[0].file, "table1_none.csv");
    EXPECT_EQ(res.tables[0].table.to_csv(), r.table.to_csv());
    EXPECT_EQ(slurp(grid_dir / "table1_none.csv"), slurp(run_dir / "report.csv"));
}

TEST(Grid, ShapesErrorsAndDeterminism) {
    auto cfg = small_config(scratch("grid_a"));
    cfg.synthetic = parse_synthetic("rows=300,frac=0.13");
    cfg.learners.forest.n_trees = 10;
    cfg.learners.mlp.epochs = 20;
    GridSpec g;
    g.regimes = {parse_sampling("none"), parse_sampling("smote:k=200"), parse_sampling("under")};
    g.learners = {"nb", "tree", "rf"};
    g.stacks = {2, 3};
    const auto a = run_experiment_grid(cfg, g);
    ASSERT_EQ(a.tables.size(), 5u);
    EXPECT_EQ(a.tables[3].file, "table4_ensembles.csv");
    EXPECT_EQ(a.tables[4].file, "table5_best_vs_all.csv");
    for (auto& c : a.tables[1].table.columns) {
        EXPECT_FALSE(c.report.has_value());  // SMOTE needs more minority rows than k
        EXPECT_NE(c.error.find("sample"), std::string::npos);
    }
    EXPECT_NE(a.tables[1].table.to_csv().find("ERROR"), std::string::npos);
    EXPECT_EQ(a.tables[4].table.columns.size(), 4u);
    EXPECT_NE(a.summary.find("best overall"), std::string::npos);

    const fs::path dir_a = cfg.output;
    cfg.output = scratch("grid_b").string();
    const auto b = run_experiment_grid(cfg, g);
    for (std::size_t t = 0; t < a.tables.size(); ++t) {
        EXPECT_EQ(slurp(fs::path(cfg.output) / a.tables[t].file), slurp(dir_a / a.tables[t].file));
        EXPECT_EQ(a.tables[t].table.to_csv(), b.tables[t].table.to_csv());
    }
}

TEST(Cli, InvalidSamplingTokenIsUsageErrorWithoutArtifacts) {
    const auto out = scratch("cli_bad");
    EXPECT_EQ(run_cli("run --synthetic rows=300 --sample oversample --out \"" + out.string() + "\""), 2);
    EXPECT_FALSE(fs::exists(out));
    EXPECT_EQ(run_cli("run --synthetic rows=300 --learner svm --out \"" + out.string() + "\""), 2);
    EXPECT_EQ(run_cli("run --synthetic rows=300 --input x.csv --out \"" + out.string() + "\""), 2);
    EXPECT_EQ(run_cli("frobnicate"), 2);
    EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, RunAndSeedEnvironment) {
    const auto a = scratch("cli_a"), b = scratch("cli_b"), c = scratch("cli_c");
    const std::string base = "run --synthetic rows=400,frac=0.13 --label em --learner nb --split 0.66 --out ";
    ASSERT_EQ(run_cli(base + "\"" + a.string() + "\"", "RIGLINE_SEED=9"), 0);
    ASSERT_EQ(run_cli(base + "\"" + b.string() + "\" --seed 9"), 0);
    ASSERT_EQ(run_cli(base + "\"" + c.string() + "\" --seed 10"), 0);
    EXPECT_EQ(slurp(a / "report.csv"), slurp(b / "report.csv"));
    EXPECT_EQ(slurp(a / "labeled.csv"), slurp(b / "labeled.csv"));
    EXPECT_NE(slurp(a / "labeled.csv"), slurp(c / "labeled.csv"));
    const auto rows = parse_table_csv(slurp(a / "report.csv"));
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_NE(slurp(a / "manifest.txt").find("seed = 9"), std::string::npos);
}

TEST(Cli, StepwiseCommandsChain) {
    const auto dir = scratch("cli_steps");
    fs::create_directories(dir);
    const auto q = [&](const char* f) { return "\"" + (dir / f).string() + "\""; };
    ASSERT_EQ(run_cli("generate --synthetic rows=300,frac=0.2 --seed 4 --out " + q("gen.csv")), 0);
    ASSERT_EQ(run_cli("label --input " + q("gen.csv") + " --out " + q("lab.csv") + " --mixture " + q("mix.txt")), 0);
    ASSERT_EQ(run_cli("sample --input " + q("gen.csv") + " --sample under --out " + q("under.csv")), 0);
    ASSERT_EQ(run_cli("train --input " + q("under.csv") + " --learner tree --out " + q("model.txt")), 0);
    ASSERT_EQ(run_cli("evaluate --model " + q("model.txt") + " --input " + q("gen.csv") + " --out " + q("rep.csv")), 0);
    const auto under = load_csv((dir / "under.csv").string(), true).class_counts();
    EXPECT_EQ(under[kNormal], under[kFailure]);
    EXPECT_EQ(parse_table_csv(slurp(dir / "rep.csv")).size(), 1u);
    std::ifstream mix(dir / "mix.txt");
    EXPECT_EQ(read_mixture(mix).components, 2u);
    EXPECT_EQ(run_cli("sample --input " + q("gen.csv") + " --sample cost"), 2);
    EXPECT_EQ(run_cli("evaluate --model " + q("missing.txt") + " --input " + q("gen.csv")), 1);
}

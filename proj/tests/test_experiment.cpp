#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "gradfeat/error.hpp"
#include "gradfeat/experiment.hpp"

using namespace gradfeat;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "gradfeat_test_experiment";
    fs::create_directories(dir);
    return dir / name;
}

TrainConfig few(std::size_t iterations, double lr) {
    TrainConfig c;
    c.iterations = iterations;
    c.base_lr = lr;
    c.lr_period = 1000;
    c.batch_size = 16;
    return c;
}

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.data.synthetic.classes = 3;
    c.data.synthetic.per_class = 12;
    c.data.test_per_class = 6;
    c.pretrain = few(10, 2e-3);
    c.probe = few(20, 1e-2);
    c.linear = few(10, 1e-3);
    c.finetune_adam = few(5, 1e-3);
    c.finetune_sgd = TrainConfig::sgd_finetune();
    c.finetune_sgd.iterations = 5;
    c.finetune_sgd.lr_period = 1000;
    c.seed = 4;
    return c;
}

std::size_t count_lines(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

} // namespace

TEST(Grid, ParseCodes) {
    const auto all = parse_grid("all");
    ASSERT_EQ(all.size(), 8u);
    EXPECT_EQ(all.front().code(), "ppp");
    EXPECT_EQ(all.back().code(), "rrr");
    const auto two = parse_grid("prp,rrr");
    ASSERT_EQ(two.size(), 2u);
    EXPECT_EQ(two[0].theta1, Provenance::pretrained);
    EXPECT_EQ(two[0].theta2, Provenance::random);
    EXPECT_EQ(two[0].omega, Provenance::pretrained);
    EXPECT_FALSE(two[1].needs_pretrained());
    EXPECT_THROW(parse_grid("xyz"), ConfigError);
    EXPECT_THROW(parse_grid("pp"), ConfigError);
    EXPECT_THROW(parse_grid(""), ConfigError);
}

TEST(Config, JsonRoundTrip) {
    ExperimentConfig c = tiny_config();
    c.theta2 = {{"conv3"}, {"conv2", "conv3"}};
    c.grid = parse_grid("ppp,rrr");
    c.kinds = {ModelKind::full};
    const ExperimentConfig back = experiment_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(back.grid, c.grid);
}

TEST(Config, FileLoadAndErrors) {
    const fs::path p = scratch("cfg.json");
    std::ofstream(p) << R"({"version": 1, "seed": 9, "grid": "rrr", "pretrain": {"task": "none"}})";
    const ExperimentConfig c = load_experiment_config(p);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.pretrain_task, PretrainTask::none);
    EXPECT_NO_THROW(c.validate());

    std::ofstream(p) << R"({"version": 2})";
    EXPECT_THROW(load_experiment_config(p), ConfigError);
    std::ofstream(p) << "{not json";
    EXPECT_THROW(load_experiment_config(p), ConfigError);
    EXPECT_THROW(load_experiment_config(scratch("absent.json")), IoError);
}

TEST(Config, ValidationErrors) {
    ExperimentConfig c = tiny_config();
    c.checkpoint = scratch("missing.gfck").string();
    EXPECT_THROW(c.validate(), ConfigError);

    c = tiny_config();
    c.pretrain_task = PretrainTask::none;
    EXPECT_THROW(c.validate(), ConfigError);  // grid ppp needs a pretrained backbone
    c.grid = parse_grid("rrr");
    EXPECT_NO_THROW(c.validate());

    c = tiny_config();
    c.theta2 = {{"conv1"}};
    EXPECT_THROW(c.validate(), ConfigError);

    c = tiny_config();
    c.pretrain_task = PretrainTask::source_classes;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Report, CsvAndJson) {
    std::vector<ResultRecord> recs(3);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        recs[i].variant = "full";
        recs[i].theta2 = "conv2+conv3";
        recs[i].metric = 0.123456 * double(i + 1);
        recs[i].epochs = i;
        recs[i].seed = 42;
        recs[i].wall["train"] = 1.5;
    }
    emit_report(recs, scratch("r.csv"), ReportFormat::csv);
    EXPECT_EQ(count_lines(scratch("r.csv")), recs.size() + 1);

    emit_report(recs, scratch("r.json"), ReportFormat::json);
    const auto back = read_report_json(scratch("r.json"));
    ASSERT_EQ(back.size(), recs.size());
    EXPECT_EQ(back[1].metric, 0.2469);
    EXPECT_EQ(back[2].theta2, "conv2+conv3");
    EXPECT_EQ(back[0].seed, 42u);

    EXPECT_THROW(emit_report({}, scratch("e.csv"), ReportFormat::csv), InputError);
    EXPECT_THROW(emit_report(recs, scratch("no/such/dir/r.csv"), ReportFormat::csv), IoError);
    EXPECT_THROW(report_format_from_string("xml"), InputError);
}

TEST(Data, SelectClassesRelabels) {
    SyntheticSpec s;
    s.classes = 4;
    s.per_class = 3;
    const Dataset d = gen_synthetic(s, 1);
    const Dataset in = select_classes(d, {1, 3}, true), out = select_classes(d, {1, 3}, false);
    EXPECT_EQ(in.size(), 6u);
    EXPECT_EQ(out.size(), 6u);
    EXPECT_EQ(in.num_classes, 2u);
    for (int y : in.labels) EXPECT_TRUE(y == 0 || y == 1);
}

TEST(Ablation, SingleCellRunCount) {
    const ExperimentConfig c = tiny_config();
    const auto recs = run_ablation(c);
    // activation, gradient, full, finetune
    ASSERT_EQ(recs.size(), 4u);
    EXPECT_EQ(recs[0].variant, "activation");
    EXPECT_EQ(recs[1].variant, "gradient");
    EXPECT_EQ(recs[2].variant, "full");
    EXPECT_EQ(recs[3].variant, "finetune");
    EXPECT_EQ(recs[2].theta2, "conv3");
    EXPECT_TRUE(recs[2].detail.contains("jvp_ratio"));
    EXPECT_GT(recs[2].wall.at("jvp_forward"), 0.0);
    EXPECT_GT(recs[2].wall.at("forward_control"), 0.0);
}

TEST(Ablation, TwoSelectionsTimesEightCells) {
    ExperimentConfig c = tiny_config();
    c.theta2 = {{"conv3"}, {"conv2", "conv3"}};
    c.grid = parse_grid("all");
    c.kinds = {ModelKind::full};
    c.run_finetune = false;
    const auto recs = run_ablation(c);
    ASSERT_EQ(recs.size(), 1u + 2u * 8u);
    EXPECT_EQ(recs[1].provenance.omega, Provenance::pretrained);
    EXPECT_TRUE(recs[1].detail.at("omega_seed").is_null());
    EXPECT_EQ(recs[8].provenance, GridCell::parse("rrr"));
    EXPECT_FALSE(recs[8].detail.at("omega_seed").is_null());
    EXPECT_EQ(recs[9].theta2, "conv2+conv3");
}

TEST(Ablation, DeterministicForFixedSeed) {
    ExperimentConfig c = tiny_config();
    c.grid = parse_grid("ppp,rrr");
    const auto a = run_ablation(c), b = run_ablation(c);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].metric, b[i].metric);
        EXPECT_EQ(a[i].final_loss, b[i].final_loss);
        EXPECT_EQ(a[i].initial_loss, b[i].initial_loss);
    }
}

TEST(Ablation, WithoutPretrainingEverythingIsRandom) {
    ExperimentConfig c = tiny_config();
    c.pretrain_task = PretrainTask::none;
    c.grid = parse_grid("rrr");
    c.run_finetune = false;
    const auto recs = run_ablation(c);
    for (const auto& r : recs) EXPECT_EQ(r.provenance, GridCell::parse("rrr"));
}

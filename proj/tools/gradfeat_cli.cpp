// gradfeat command-line driver.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradfeat/checkpoint.hpp"
#include "gradfeat/error.hpp"
#include "gradfeat/experiment.hpp"
#include "gradfeat/models.hpp"
#include "gradfeat/oracle.hpp"
#include "gradfeat/pretrain.hpp"

namespace fs = std::filesystem;
using namespace gradfeat;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string theta2;
    std::string grid;
    std::string checkpoint;
    std::string head;
    std::string model;
    std::string kind = "full";
    std::string in;
    std::string format = "csv";
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "Experiment config (JSON)");
    app->add_option("--seed", c.seed, "Seed overriding the config");
    app->add_option("--out", c.out, "Output directory");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) parts.push_back(item);
    return parts;
}

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? desk_config() : load_experiment_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.out = c.out;
    if (!c.theta2.empty()) {
        cfg.theta2.clear();
        for (const auto& sel : split(c.theta2, ';')) cfg.theta2.push_back(split(sel, ','));
    }
    if (!c.grid.empty()) cfg.grid = parse_grid(c.grid);
    if (!c.checkpoint.empty()) cfg.checkpoint = c.checkpoint;
    return cfg;
}

fs::path prepare_out(const ExperimentConfig& cfg) {
    fs::path out(cfg.out);
    fs::create_directories(out);
    std::ofstream(out / "config.json") << to_json(cfg).dump(2) << '\n';
    return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    f << j.dump(2) << '\n';
}

// Target-task splits; the source classes are removed when the config names them.
DataSplits target_data(const ExperimentConfig& cfg) {
    DataSplits data = load_data(cfg.data, cfg.seed);
    if (cfg.pretrain_task == PretrainTask::source_classes && !cfg.source_classes.empty()) {
        std::set<int> src(cfg.source_classes.begin(), cfg.source_classes.end());
        data.train = select_classes(data.train, src, false);
        data.test = select_classes(data.test, src, false);
    }
    return data;
}

std::shared_ptr<const Backbone> load_backbone(const ExperimentConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("a backbone checkpoint is required (--checkpoint)");
    auto [def, params] = load_checkpoint(cfg.checkpoint);
    return std::make_shared<const Backbone>(Backbone{std::move(def), std::move(params)});
}

std::vector<std::string> theta2_selection(const ExperimentConfig& cfg, const NetworkDef& def) {
    if (cfg.theta2.size() > 1) throw ConfigError("this command takes a single theta2 selection");
    return cfg.theta2.empty() ? def.theta2_names() : cfg.theta2.front();
}

std::shared_ptr<const Backbone> gradient_backbone(const Backbone& base, const std::vector<std::string>& sel) {
    auto [def, params] = adopt_ntk(with_theta2(base.def, sel), base.params);
    return std::make_shared<const Backbone>(Backbone{std::move(def), std::move(params)});
}

int cmd_pretrain(const Common& c) {
    ExperimentConfig cfg = resolve(c);
    cfg.checkpoint.clear();
    const fs::path out = prepare_out(cfg);
    DataSplits data = load_data(cfg.data, cfg.seed);
    const Shape input(data.train.images.shape().begin() + 1, data.train.images.shape().end());
    const NetworkDef def = cfg.resolved_network(input);
    TrainConfig tc = cfg.pretrain;
    tc.seed = cfg.seed;
    nlohmann::json report{{"task", to_string(cfg.pretrain_task)}};
    PretrainResult r;
    if (cfg.pretrain_task == PretrainTask::rotation) {
        r = pretrain_rotation(def, data.train, tc);
        report["rotation_accuracy_train"] = rotation_accuracy(def, r.params, r.head, data.train);
        report["rotation_accuracy_test"] = rotation_accuracy(def, r.params, r.head, data.test);
    } else if (cfg.pretrain_task == PretrainTask::source_classes) {
        std::set<int> src(cfg.source_classes.begin(), cfg.source_classes.end());
        const Dataset source = select_classes(data.train, src, true);
        r = train_backbone(def, source, tc);
        report["source_accuracy_train"] = evaluate(Backbone{def, r.params}, r.head, source);
    } else {
        throw ConfigError("pretraining task is 'none'");
    }
    report["initial_loss"] = r.curve.initial_loss;
    report["epoch_loss"] = r.curve.epoch_loss;
    save_checkpoint(out / "backbone.gfck", def, r.params);
    write_json(out / "pretrain.json", report);
    std::cout << "pretrain: wrote " << (out / "backbone.gfck").string() << '\n';
    return 0;
}

int cmd_fit_probe(const Common& c) {
    const ExperimentConfig cfg = resolve(c);
    const fs::path out = prepare_out(cfg);
    const auto base = load_backbone(cfg);
    const DataSplits data = target_data(cfg);
    TrainConfig pc = cfg.probe;
    pc.seed = cfg.seed;
    TrainCurve curve;
    const LinearHead head = fit_probe(base, data.train, pc, &curve);
    save_head(out / "head.gfck", head);
    const double test = evaluate(*base, head, data.test);
    write_json(out / "probe.json", {{"train_accuracy", evaluate(*base, head, data.train)},
                                    {"test_accuracy", test},
                                    {"initial_loss", curve.initial_loss},
                                    {"epoch_loss", curve.epoch_loss}});
    std::cout << "fit-probe: test accuracy " << test << '\n';
    return 0;
}

int cmd_train(const Common& c) {
    const ExperimentConfig cfg = resolve(c);
    const ModelKind kind = model_kind_from_string(c.kind);
    const fs::path out = prepare_out(cfg);
    const auto base = load_backbone(cfg);
    const DataSplits data = target_data(cfg);
    std::optional<LinearHead> omega;
    if (!c.head.empty()) omega = load_head(c.head);
    if (kind != ModelKind::activation && !omega) throw ConfigError("--head is required for the " + c.kind + " model");
    const auto gnet = gradient_backbone(*base, theta2_selection(cfg, base->def));
    const Tensor omega_w = omega ? omega->weight : Tensor{};
    TrainConfig lc = kind == ModelKind::activation ? cfg.probe : cfg.linear;
    lc.seed = cfg.seed;
    FullModel m = make_model(kind, base, gnet, omega, omega_w, data.train.num_classes);
    const TrainedModel tm = train_linear(std::move(m), data.train, lc);
    save_model(out / "model.gfck", tm.model);
    const double test = evaluate(tm.model, data.test);
    write_json(out / "train.json", {{"kind", c.kind},
                                    {"train_accuracy", evaluate(tm.model, data.train)},
                                    {"test_accuracy", test},
                                    {"initial_loss", tm.curve.initial_loss},
                                    {"epoch_loss", tm.curve.epoch_loss}});
    std::cout << "train " << c.kind << ": test accuracy " << test << '\n';
    return 0;
}

int cmd_finetune(const Common& c) {
    const ExperimentConfig cfg = resolve(c);
    const fs::path out = prepare_out(cfg);
    const auto base = load_backbone(cfg);
    const DataSplits data = target_data(cfg);
    if (c.head.empty()) throw ConfigError("--head is required for fine-tuning");
    const LinearHead omega = load_head(c.head);
    const Backbone start{with_theta2(base->def, theta2_selection(cfg, base->def)), base->params};
    nlohmann::json report;
    std::optional<FineTuned> best;
    double best_acc = -1.0;
    for (const TrainConfig* tc : {&cfg.finetune_adam, &cfg.finetune_sgd}) {
        TrainConfig t = *tc;
        t.seed = cfg.seed;
        FineTuned ft = finetune(start, omega, data.train, t);
        const double acc = evaluate(ft, data.test);
        report[to_string(t.optimizer)] = {{"test_accuracy", acc}, {"epoch_loss", ft.curve.epoch_loss}};
        if (acc > best_acc) {
            best_acc = acc;
            best = std::move(ft);
        }
    }
    report["best"] = to_string(best->optimizer);
    report["test_accuracy"] = best_acc;
    save_checkpoint(out / "finetuned.gfck", best->net->def, best->net->params);
    save_head(out / "finetuned_head.gfck", best->head);
    write_json(out / "finetune.json", report);
    std::cout << "finetune: best " << to_string(best->optimizer) << " test accuracy " << best_acc << '\n';
    return 0;
}

int cmd_ablate(const Common& c) {
    const ExperimentConfig cfg = resolve(c);
    const fs::path out = prepare_out(cfg);
    const auto records = run_ablation(cfg);
    emit_report(records, out / "results.csv", ReportFormat::csv);
    emit_report(records, out / "results.json", ReportFormat::json);
    for (const auto& r : records)
        std::cout << r.variant << ' ' << (r.theta2.empty() ? "-" : r.theta2) << ' ' << r.provenance.code() << ' '
                  << r.metric << '\n';
    return 0;
}

int cmd_verify(const Common& c) {
    const ExperimentConfig cfg = resolve(c);
    const fs::path out = prepare_out(cfg);
    const std::uint64_t seed = cfg.seed;
    NetworkDef def = cfg.network ? *cfg.network : default_network();
    if (!cfg.theta2.empty()) def = with_theta2(def, cfg.theta2.front());
    auto [ntk_def, ntk_params] = adopt_ntk(def, build_network(def, seed));
    const NetworkDef tiny = oracle::tiny_network();
    std::vector<oracle::OracleReport> reports{
        oracle::verify_jvp(ntk_def, ntk_params, 100, seed),
        oracle::verify_jacobian(tiny, oracle::tiny_params(tiny, seed), 10, seed),
        oracle::verify_adjoint(ntk_def, ntk_params, 100, seed),
        oracle::verify_taylor(ntk_def, ntk_params, 256, seed),
    };
    nlohmann::json j = nlohmann::json::array();
    bool ok = true;
    for (const auto& r : reports) {
        j.push_back(r.to_json());
        ok = ok && r.passed;
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " max=" << r.max_error << " excluded=" << r.excluded
                  << '\n';
    }
    write_json(out / "verify.json", j);
    return ok ? 0 : 1;
}

int cmd_eval(const Common& c) {
    const ExperimentConfig cfg = resolve(c);
    const auto base = load_backbone(cfg);
    const DataSplits data = target_data(cfg);
    double acc = 0.0;
    if (!c.model.empty()) {
        const auto gnet = gradient_backbone(*base, theta2_selection(cfg, base->def));
        acc = evaluate(load_model(c.model, base, gnet), data.test);
    } else if (!c.head.empty()) {
        acc = evaluate(*base, load_head(c.head), data.test);
    } else {
        throw ConfigError("eval needs --head or --model");
    }
    std::cout << "accuracy " << acc << '\n';
    if (!c.out.empty()) {
        fs::create_directories(cfg.out);
        write_json(fs::path(cfg.out) / "eval.json", {{"test_accuracy", acc}, {"test_size", data.test.size()}});
    }
    return 0;
}

int cmd_report(const Common& c) {
    if (c.in.empty()) throw ConfigError("report needs --in <results.json>");
    const auto records = read_report_json(c.in);
    const ReportFormat f = report_format_from_string(c.format);
    fs::path out = c.out.empty() ? fs::path(c.in).parent_path() : fs::path(c.out);
    fs::create_directories(out);
    const fs::path file = out / (f == ReportFormat::csv ? "report.csv" : "report.json");
    emit_report(records, file, f);
    std::cout << "report: wrote " << file.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient features from pretrained convolutional networks"};
    app.require_subcommand(1);
    Common c;

    auto* pretrain = app.add_subcommand("pretrain", "Pretrain a backbone on the configured pretext task");
    add_common(pretrain, c);

    auto* probe = app.add_subcommand("fit-probe", "Fit the activation baseline (omega-bar)");
    add_common(probe, c);
    probe->add_option("--checkpoint", c.checkpoint, "Backbone checkpoint");

    auto* train = app.add_subcommand("train", "Train an activation, gradient or full linear model");
    add_common(train, c);
    train->add_option("--kind", c.kind, "Model kind")->check(CLI::IsMember({"activation", "gradient", "full"}));
    train->add_option("--checkpoint", c.checkpoint, "Backbone checkpoint");
    train->add_option("--head", c.head, "Fitted activation head (omega-bar)");
    train->add_option("--theta2", c.theta2, "Comma-separated theta2 layers");

    auto* ft = app.add_subcommand("finetune", "Fine-tune theta2 and the head (Adam and SGD)");
    add_common(ft, c);
    ft->add_option("--checkpoint", c.checkpoint, "Backbone checkpoint");
    ft->add_option("--head", c.head, "Fitted activation head (omega-bar)");
    ft->add_option("--theta2", c.theta2, "Comma-separated theta2 layers");

    auto* ablate = app.add_subcommand("ablate", "Run the provenance ablation grid");
    add_common(ablate, c);
    ablate->add_option("--theta2", c.theta2, "theta2 selections: 'conv3;conv2,conv3'");
    ablate->add_option("--grid", c.grid, "Grid cells: 'all' or codes like 'ppp,rrr' (theta1 theta2 omega)");
    ablate->add_option("--checkpoint", c.checkpoint, "Pretrained backbone instead of pretext training");

    auto* verify = app.add_subcommand("verify", "Check the JVP/VJP machinery against brute-force oracles");
    add_common(verify, c);
    verify->add_option("--theta2", c.theta2, "Comma-separated theta2 layers");

    auto* eval = app.add_subcommand("eval", "Evaluate a head or a trained model on the test split");
    add_common(eval, c);
    eval->add_option("--checkpoint", c.checkpoint, "Backbone checkpoint");
    eval->add_option("--head", c.head, "Activation head");
    eval->add_option("--model", c.model, "Trained linear model");
    eval->add_option("--theta2", c.theta2, "theta2 layers the model was trained with");

    auto* report = app.add_subcommand("report", "Re-emit a results file as CSV or JSON");
    report->add_option("--in", c.in, "results.json")->required();
    report->add_option("--format", c.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    report->add_option("--out", c.out, "Output directory");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*pretrain) return cmd_pretrain(c);
        if (*probe) return cmd_fit_probe(c);
        if (*train) return cmd_train(c);
        if (*ft) return cmd_finetune(c);
        if (*ablate) return cmd_ablate(c);
        if (*verify) return cmd_verify(c);
        if (*eval) return cmd_eval(c);
        if (*report) return cmd_report(c);
    } catch (const gradfeat::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

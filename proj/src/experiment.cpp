#include "gradfeat/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "gradfeat/checkpoint.hpp"
#include "gradfeat/error.hpp"
#include "gradfeat/pretrain.hpp"
#include "gradfeat/tangent.hpp"

namespace gradfeat {

const char* to_string(PretrainTask t) {
    switch (t) {
    case PretrainTask::rotation: return "rotation";
    case PretrainTask::source_classes: return "source-classes";
    case PretrainTask::none: return "none";
    }
    return "?";
}

PretrainTask pretrain_task_from_string(const std::string& s) {
    if (s == "rotation") return PretrainTask::rotation;
    if (s == "source-classes") return PretrainTask::source_classes;
    if (s == "none") return PretrainTask::none;
    throw ConfigError("unknown pretraining task '" + s + "'");
}

std::string GridCell::code() const {
    auto c = [](Provenance p) { return p == Provenance::pretrained ? 'p' : 'r'; };
    return {c(theta1), c(theta2), c(omega)};
}

GridCell GridCell::parse(const std::string& code) {
    if (code.size() != 3) throw ConfigError("grid cell '" + code + "' must be three letters from {p,r}");
    auto p = [&](char ch) {
        if (ch == 'p') return Provenance::pretrained;
        if (ch == 'r') return Provenance::random;
        throw ConfigError("grid cell '" + code + "' must be three letters from {p,r}");
    };
    return {p(code[0]), p(code[1]), p(code[2])};
}

bool GridCell::needs_pretrained() const {
    return theta1 == Provenance::pretrained || theta2 == Provenance::pretrained || omega == Provenance::pretrained;
}

std::vector<GridCell> parse_grid(const std::string& spec) {
    std::vector<GridCell> cells;
    if (spec == "all") {
        for (const char* c : {"ppp", "ppr", "prp", "prr", "rpp", "rpr", "rrp", "rrr"}) cells.push_back(GridCell::parse(c));
        return cells;
    }
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) cells.push_back(GridCell::parse(item));
    if (cells.empty()) throw ConfigError("empty grid specification");
    return cells;
}

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL + 0x94D049BB133111EBULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

nlohmann::json data_to_json(const DataConfig& d) {
    nlohmann::json j{{"kind", d.kind}, {"limit_train", d.limit_train}, {"limit_test", d.limit_test}};
    if (d.kind == "synthetic") {
        j["synthetic"] = to_json(d.synthetic);
        j["test_per_class"] = d.test_per_class;
    } else if (d.kind == "idx") {
        j["train_images"] = d.train_images;
        j["train_labels"] = d.train_labels;
        j["test_images"] = d.test_images;
        j["test_labels"] = d.test_labels;
    } else {
        j["train_files"] = d.train_files;
        j["test_file"] = d.test_file;
    }
    return j;
}

DataConfig data_from_json(const nlohmann::json& j) {
    DataConfig d;
    d.kind = j.value("kind", d.kind);
    if (d.kind != "synthetic" && d.kind != "idx" && d.kind != "cifar")
        throw ConfigError("unknown data kind '" + d.kind + "'");
    if (j.contains("synthetic")) d.synthetic = synthetic_spec_from_json(j.at("synthetic"));
    d.test_per_class = j.value("test_per_class", d.test_per_class);
    d.train_images = j.value("train_images", std::string{});
    d.train_labels = j.value("train_labels", std::string{});
    d.test_images = j.value("test_images", std::string{});
    d.test_labels = j.value("test_labels", std::string{});
    d.train_files = j.value("train_files", std::vector<std::string>{});
    d.test_file = j.value("test_file", std::string{});
    d.limit_train = j.value("limit_train", d.limit_train);
    d.limit_test = j.value("limit_test", d.limit_test);
    return d;
}

} // namespace

void ExperimentConfig::validate() const {
    if (version != kConfigVersion)
        throw ConfigError("config version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kConfigVersion) + ")");
    const NetworkDef def = network ? *network : default_network();
    gradfeat::validate(def);
    for (const auto& sel : theta2) (void)with_theta2(def, sel);
    if (grid.empty()) throw ConfigError("the ablation grid is empty");
    if (kinds.empty()) throw ConfigError("no model kinds requested");
    const bool wants_pretrained =
        std::any_of(grid.begin(), grid.end(), [](const GridCell& c) { return c.needs_pretrained(); });
    if (wants_pretrained && pretrain_task == PretrainTask::none && checkpoint.empty())
        throw ConfigError("grid requests pretrained parameters but no checkpoint or pretraining task is given");
    if (!checkpoint.empty() && !std::filesystem::exists(checkpoint))
        throw ConfigError("checkpoint '" + checkpoint + "' does not exist");
    if (pretrain_task == PretrainTask::source_classes && checkpoint.empty() && source_classes.empty())
        throw ConfigError("source-classes pretraining needs a non-empty source_classes list");
    for (const auto* t : {&pretrain, &probe, &linear, &finetune_adam, &finetune_sgd}) t->validate();
}

NetworkDef ExperimentConfig::resolved_network(const Shape& input) const {
    NetworkDef def = network ? *network : default_network(input);
    if (def.input != input)
        throw ConfigError("network expects input " + shape_str(def.input) + " but the data is " + shape_str(input));
    gradfeat::validate(def);
    return def;
}

nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["version"] = c.version;
    if (c.network) j["network"] = to_json(*c.network);
    j["pretrain"] = {{"task", to_string(c.pretrain_task)},
                     {"checkpoint", c.checkpoint},
                     {"source_classes", c.source_classes},
                     {"train", to_json(c.pretrain)}};
    j["probe"] = to_json(c.probe);
    j["linear"] = to_json(c.linear);
    j["finetune"] = {{"enabled", c.run_finetune}, {"adam", to_json(c.finetune_adam)}, {"sgd", to_json(c.finetune_sgd)}};
    std::vector<std::string> kinds, grid;
    for (auto k : c.kinds) kinds.push_back(to_string(k));
    for (const auto& g : c.grid) grid.push_back(g.code());
    j["kinds"] = kinds;
    j["theta2"] = c.theta2;
    j["grid"] = grid;
    j["data"] = data_to_json(c.data);
    j["out"] = c.out;
    j["seed"] = c.seed;
    return j;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig c = desk_config();
    try {
        c.version = j.at("version").get<int>();
        if (c.version != kConfigVersion)
            throw ConfigError("config version " + std::to_string(c.version) + " is not supported");
        if (j.contains("network")) c.network = network_from_json(j.at("network"));
        if (j.contains("pretrain")) {
            const auto& p = j.at("pretrain");
            if (p.contains("task")) c.pretrain_task = pretrain_task_from_string(p.at("task"));
            c.checkpoint = p.value("checkpoint", c.checkpoint);
            c.source_classes = p.value("source_classes", c.source_classes);
            if (p.contains("train")) c.pretrain = train_config_from_json(p.at("train"), c.pretrain);
        }
        if (j.contains("probe")) c.probe = train_config_from_json(j.at("probe"), c.probe);
        if (j.contains("linear")) c.linear = train_config_from_json(j.at("linear"), c.linear);
        if (j.contains("finetune")) {
            const auto& f = j.at("finetune");
            c.run_finetune = f.value("enabled", c.run_finetune);
            if (f.contains("adam")) c.finetune_adam = train_config_from_json(f.at("adam"), c.finetune_adam);
            if (f.contains("sgd")) c.finetune_sgd = train_config_from_json(f.at("sgd"), c.finetune_sgd);
        }
        if (j.contains("kinds")) {
            c.kinds.clear();
            for (const auto& k : j.at("kinds")) c.kinds.push_back(model_kind_from_string(k.get<std::string>()));
        }
        if (j.contains("theta2")) c.theta2 = j.at("theta2").get<std::vector<std::vector<std::string>>>();
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            if (g.is_string()) {
                c.grid = parse_grid(g.get<std::string>());
            } else {
                c.grid.clear();
                for (const auto& cell : g) c.grid.push_back(GridCell::parse(cell.get<std::string>()));
            }
        }
        if (j.contains("data")) c.data = data_from_json(j.at("data"));
        c.out = j.value("out", c.out);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad experiment config: ") + e.what());
    }
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return experiment_config_from_json(j);
}

ExperimentConfig desk_config() {
    ExperimentConfig c;
    c.pretrain.iterations = 1500;
    c.pretrain.base_lr = 2e-3;
    c.pretrain.lr_period = 750;
    c.probe.iterations = 8000;
    c.probe.base_lr = 1e-2;
    c.probe.lr_period = 2000;
    c.linear.iterations = 3000;
    c.linear.base_lr = 3e-3;
    c.linear.lr_period = 1500;
    c.finetune_adam.iterations = 1500;
    c.finetune_adam.base_lr = 1e-3;
    c.finetune_adam.lr_period = 750;
    c.finetune_sgd = TrainConfig::sgd_finetune();
    c.finetune_sgd.iterations = 1500;
    c.finetune_sgd.base_lr = 1e-2;
    c.finetune_sgd.lr_period = 750;
    return c;
}

namespace {

Dataset limit(Dataset d, std::size_t n) {
    if (n == 0 || n >= d.size()) return d;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return d.subset(idx);
}

Dataset concat(const std::vector<Dataset>& parts) {
    Dataset out = parts.front();
    std::vector<float> images(out.images.values().begin(), out.images.values().end());
    for (std::size_t i = 1; i < parts.size(); ++i) {
        images.insert(images.end(), parts[i].images.values().begin(), parts[i].images.values().end());
        out.labels.insert(out.labels.end(), parts[i].labels.begin(), parts[i].labels.end());
        out.num_classes = std::max(out.num_classes, parts[i].num_classes);
    }
    Shape s = out.images.shape();
    s[0] = out.labels.size();
    out.images = Tensor(s, std::move(images));
    return out;
}

} // namespace

Dataset select_classes(const Dataset& d, const std::set<int>& classes, bool inside) {
    std::vector<int> kept;
    for (std::size_t c = 0; c < d.num_classes; ++c)
        if (classes.count(static_cast<int>(c)) == static_cast<std::size_t>(inside)) kept.push_back(static_cast<int>(c));
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (std::find(kept.begin(), kept.end(), d.labels[i]) != kept.end()) rows.push_back(i);
    if (rows.empty()) throw ConfigError("class selection leaves no samples");
    Dataset out = d.subset(rows);
    for (auto& y : out.labels)
        y = static_cast<int>(std::find(kept.begin(), kept.end(), y) - kept.begin());
    out.num_classes = kept.size();
    return out;
}

DataSplits load_data(const DataConfig& cfg, std::uint64_t seed) {
    DataSplits s;
    if (cfg.kind == "synthetic") {
        SyntheticSpec test_spec = cfg.synthetic;
        test_spec.per_class = cfg.test_per_class;
        s.train = gen_synthetic(cfg.synthetic, derive(seed, 101), Split::train);
        s.test = gen_synthetic(test_spec, derive(seed, 102), Split::test);
    } else if (cfg.kind == "idx") {
        s.train = load_idx(cfg.train_images, cfg.train_labels, Split::train);
        s.test = load_idx(cfg.test_images, cfg.test_labels, Split::test);
    } else {
        if (cfg.train_files.empty()) throw ConfigError("cifar data needs at least one training file");
        std::vector<Dataset> parts;
        for (const auto& f : cfg.train_files) parts.push_back(load_cifar_binary(f, Split::train));
        s.train = concat(parts);
        s.test = load_cifar_binary(cfg.test_file, Split::test);
    }
    s.train = limit(std::move(s.train), cfg.limit_train);
    s.test = limit(std::move(s.test), cfg.limit_test);
    s.test.num_classes = s.train.num_classes = std::max(s.train.num_classes, s.test.num_classes);
    s.train.validate();
    s.test.validate();
    return s;
}

nlohmann::json to_json(const ResultRecord& r) {
    auto r4 = [](double v) { return std::round(v * 1e4) / 1e4; };
    nlohmann::json wall = nlohmann::json::object();
    for (const auto& [k, v] : r.wall) wall[k] = r4(v);
    return {{"variant", r.variant},
            {"theta2", r.theta2},
            {"provenance",
             {{"theta1", to_string(r.provenance.theta1)},
              {"theta2", to_string(r.provenance.theta2)},
              {"omega", to_string(r.provenance.omega)}}},
            {"metric", r4(r.metric)},
            {"train_metric", r4(r.train_metric)},
            {"initial_loss", r4(r.initial_loss)},
            {"final_loss", r4(r.final_loss)},
            {"epochs", r.epochs},
            {"wall", wall},
            {"seed", r.seed},
            {"detail", r.detail}};
}

ResultRecord result_record_from_json(const nlohmann::json& j) {
    try {
        ResultRecord r;
        r.variant = j.at("variant");
        r.theta2 = j.at("theta2");
        const auto& p = j.at("provenance");
        r.provenance = {provenance_from_string(p.at("theta1")), provenance_from_string(p.at("theta2")),
                        provenance_from_string(p.at("omega"))};
        r.metric = j.at("metric");
        r.train_metric = j.at("train_metric");
        r.initial_loss = j.at("initial_loss");
        r.final_loss = j.at("final_loss");
        r.epochs = j.at("epochs");
        for (const auto& [k, v] : j.at("wall").items()) r.wall[k] = v.get<double>();
        r.seed = j.at("seed");
        r.detail = j.value("detail", nlohmann::json::object());
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad result record: ") + e.what());
    }
}

std::optional<PretrainedState> obtain_backbone(const ExperimentConfig& cfg, const Dataset& train) {
    if (!cfg.checkpoint.empty()) {
        auto [def, params] = load_checkpoint(cfg.checkpoint);
        return PretrainedState{std::move(def), std::move(params)};
    }
    if (cfg.pretrain_task == PretrainTask::none) return std::nullopt;
    const NetworkDef def = cfg.resolved_network(Shape(train.images.shape().begin() + 1, train.images.shape().end()));
    TrainConfig tc = cfg.pretrain;
    tc.seed = derive(cfg.seed, 1);
    PretrainResult r = cfg.pretrain_task == PretrainTask::rotation ? pretrain_rotation(def, train, tc)
                                                                   : train_backbone(def, train, tc);
    return PretrainedState{def, std::move(r.params)};
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string join(const std::vector<std::string>& names) {
    std::string s;
    for (const auto& n : names) s += (s.empty() ? "" : "+") + n;
    return s;
}

void fill_curve(ResultRecord& r, const TrainCurve& c) {
    r.initial_loss = c.initial_loss;
    r.final_loss = c.epoch_loss.empty() ? c.initial_loss : c.epoch_loss.back();
    r.epochs = c.epoch_loss.size();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

TimingResult time_jvp(const NetworkDef& def, const ParamSet& params, const Tensor& x, std::size_t runs) {
    const TangentParams w2 = TangentParams::random(def, params, 7);
    const std::size_t boundary = def.boundary_layer();
    std::vector<double> fwd, jvp, th1;
    volatile float sink = 0.0f;
    for (std::size_t r = 0; r < runs; ++r) {
        auto t0 = Clock::now();
        const FeatureResult f = forward_features(def, params, x);
        fwd.push_back(since(t0));
        t0 = Clock::now();
        const Tensor z0 = forward_range(def, params, x, 0, boundary);
        th1.push_back(since(t0));
        t0 = Clock::now();
        const JvpResult j = jvp_forward(def, params, w2, z0);
        jvp.push_back(since(t0));
        sink = sink + f.features[0] + j.tangent[0];
    }
    return {median(fwd), median(jvp), median(th1)};
}

std::vector<ResultRecord> run_ablation(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t_start = Clock::now();
    DataSplits data = load_data(cfg.data, cfg.seed);
    Dataset source;
    if (cfg.pretrain_task == PretrainTask::source_classes && cfg.checkpoint.empty()) {
        std::set<int> src;
        for (auto c : cfg.source_classes) src.insert(static_cast<int>(c));
        source = select_classes(data.train, src, true);
        data.train = select_classes(data.train, src, false);
        data.test = select_classes(data.test, src, false);
    }
    const Dataset& train = data.train;
    const Dataset& test = data.test;
    const Shape input(train.images.shape().begin() + 1, train.images.shape().end());
    const std::size_t classes = train.num_classes;

    auto t0 = Clock::now();
    std::optional<PretrainedState> pre =
        obtain_backbone(cfg, cfg.pretrain_task == PretrainTask::source_classes ? source : train);
    const double pretrain_seconds = since(t0);
    NetworkDef def = pre ? pre->def : cfg.resolved_network(input);
    if (def.input != input) throw ConfigError("backbone input " + shape_str(def.input) + " does not match the data");
    ParamSet params = pre ? std::move(pre->params) : build_network(def, derive(cfg.seed, 1));
    const Provenance base_prov = pre ? Provenance::pretrained : Provenance::random;
    auto base = std::make_shared<const Backbone>(Backbone{def, params});

    std::vector<ResultRecord> records;
    t0 = Clock::now();
    TrainConfig pc = cfg.probe;
    pc.seed = derive(cfg.seed, 2);
    TrainCurve probe_curve;
    const LinearHead omega_bar = fit_probe(base, train, pc, &probe_curve);
    {
        ResultRecord r;
        r.variant = "activation";
        r.theta2 = "";
        r.provenance = {base_prov, base_prov, base_prov};
        r.metric = evaluate(*base, omega_bar, test);
        r.train_metric = evaluate(*base, omega_bar, train);
        fill_curve(r, probe_curve);
        r.wall["pretrain"] = pretrain_seconds;
        r.wall["train"] = since(t0);
        r.seed = cfg.seed;
        records.push_back(std::move(r));
    }

    std::vector<std::vector<std::string>> selections = cfg.theta2;
    if (selections.empty()) selections.push_back(def.theta2_names());
    const std::size_t d = def.feature_dim();
    const Tensor timing_batch = test.images.slice_rows(0, std::min<std::size_t>(test.size(), 64));

    for (const auto& sel : selections) {
        const NetworkDef split_def = with_theta2(def, sel);
        const auto [ntk_def, ntk_params] = adopt_ntk(split_def, params);
        const ParamSet random_params = build_network(ntk_def, derive(cfg.seed, 3));
        const auto theta2_names = ntk_def.theta2_names();
        const std::set<std::string> theta2_set(theta2_names.begin(), theta2_names.end());

        for (const auto& cell : cfg.grid) {
            ParamSet g;
            for (const auto& name : ntk_def.param_names()) {
                const Provenance want = theta2_set.count(name) ? cell.theta2 : cell.theta1;
                const bool use_pre = want == Provenance::pretrained && pre;
                g.layers[name] = use_pre ? ntk_params.at(name) : random_params.at(name);
                g.provenance[name] = use_pre ? Provenance::pretrained : Provenance::random;
            }
            const bool omega_pre = cell.omega == Provenance::pretrained && pre;
            const Tensor omega = omega_pre ? omega_bar.weight : LinearHead::random(d, classes, derive(cfg.seed, 4)).weight;
            auto gnet = std::make_shared<const Backbone>(Backbone{ntk_def, std::move(g)});
            const TimingResult timing = time_jvp(gnet->def, gnet->params, timing_batch, 3);

            for (const ModelKind kind : cfg.kinds) {
                if (kind == ModelKind::activation) continue;
                t0 = Clock::now();
                TrainConfig lc = cfg.linear;
                lc.seed = derive(cfg.seed, 5);
                FullModel m = make_model(kind, base, gnet, omega_bar, omega, classes);
                TrainedModel tm = train_linear(std::move(m), train, lc);
                const double train_seconds = since(t0);
                t0 = Clock::now();
                ResultRecord r;
                r.variant = to_string(kind);
                r.theta2 = join(sel);
                r.provenance = {pre ? cell.theta1 : Provenance::random, pre ? cell.theta2 : Provenance::random,
                                omega_pre ? Provenance::pretrained : Provenance::random};
                r.metric = evaluate(tm.model, test);
                r.train_metric = evaluate(tm.model, train);
                fill_curve(r, tm.curve);
                r.wall["train"] = train_seconds;
                r.wall["eval"] = since(t0);
                r.wall["forward_control"] = timing.forward_seconds;
                r.wall["jvp_forward"] = timing.jvp_seconds;
                r.wall["theta1_forward"] = timing.theta1_seconds;
                r.seed = cfg.seed;
                r.detail["omega_seed"] = omega_pre ? nlohmann::json(nullptr) : nlohmann::json(derive(cfg.seed, 4));
                r.detail["jvp_ratio"] = timing.ratio();
                r.detail["jvp_end_to_end_ratio"] = timing.end_to_end_ratio();
                records.push_back(std::move(r));
            }
        }

        if (cfg.run_finetune) {
            const Backbone start{split_def, params};
            ResultRecord r;
            r.variant = "finetune";
            r.theta2 = join(sel);
            r.provenance = {base_prov, base_prov, base_prov};
            r.seed = cfg.seed;
            double best = -1.0;
            for (const TrainConfig* tc : {&cfg.finetune_adam, &cfg.finetune_sgd}) {
                t0 = Clock::now();
                TrainConfig c = *tc;
                c.seed = derive(cfg.seed, 6);
                const FineTuned ft = finetune(start, omega_bar, train, c);
                const double acc = evaluate(ft, test);
                const std::string name = to_string(c.optimizer);
                r.detail[name] = {{"metric", std::round(acc * 1e4) / 1e4}};
                r.wall["train_" + name] = since(t0);
                if (acc > best) {
                    best = acc;
                    r.metric = acc;
                    r.train_metric = evaluate(ft, train);
                    fill_curve(r, ft.curve);
                    r.detail["optimizer"] = name;
                }
            }
            records.push_back(std::move(r));
        }
    }
    records.front().wall["total"] = since(t_start);
    return records;
}

ReportFormat report_format_from_string(const std::string& s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    throw InputError("unknown report format '" + s + "'");
}

void emit_report(const std::vector<ResultRecord>& records, const std::filesystem::path& path, ReportFormat format) {
    if (records.empty()) throw InputError("no records to report");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write report '" + path.string() + "'");
    if (format == ReportFormat::json) {
        nlohmann::json j{{"schema_version", kReportSchemaVersion}, {"records", nlohmann::json::array()}};
        for (const auto& r : records) j["records"].push_back(to_json(r));
        out << j.dump(2) << '\n';
    } else {
        out << "variant,theta2,theta1_provenance,theta2_provenance,omega_provenance,metric,train_metric,"
               "initial_loss,final_loss,epochs,seed\n";
        char buf[512];
        for (const auto& r : records) {
            std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%s,%.4f,%.4f,%.4f,%.4f,%zu,%llu\n", r.variant.c_str(),
                          r.theta2.c_str(), to_string(r.provenance.theta1), to_string(r.provenance.theta2),
                          to_string(r.provenance.omega), r.metric, r.train_metric, r.initial_loss, r.final_loss,
                          r.epochs, static_cast<unsigned long long>(r.seed));
            out << buf;
        }
    }
    if (!out) throw IoError("failed writing report '" + path.string() + "'");
}

std::vector<ResultRecord> read_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("report '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (j.value("schema_version", 0) != kReportSchemaVersion)
        throw FormatError("report '" + path.string() + "' has an unsupported schema version");
    std::vector<ResultRecord> records;
    for (const auto& r : j.at("records")) records.push_back(result_record_from_json(r));
    return records;
}

} // namespace gradfeat

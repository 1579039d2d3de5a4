// Acceptance run: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradfeat/checkpoint.hpp"
#include "gradfeat/dataset.hpp"
#include "gradfeat/experiment.hpp"
#include "gradfeat/models.hpp"
#include "gradfeat/oracle.hpp"

using namespace gradfeat;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::printf("%s %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Net {
    NetworkDef def;
    ParamSet params;
};

Net default_ntk(std::uint64_t seed, std::vector<std::string> theta2 = {"conv3"}) {
    const NetworkDef def = with_theta2(default_network(), theta2);
    auto [nd, np] = adopt_ntk(def, build_network(def, seed));
    return {nd, np};
}

fs::path workdir() {
    const fs::path p = fs::current_path() / "acceptance_work";
    fs::create_directories(p);
    return p;
}

// Independent decoders used by criterion 9.
std::uint64_t fnv(const std::vector<float>& v) {
    std::uint64_t h = 1469598103934665603ull;
    const auto* b = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < v.size() * sizeof(float); ++i) h = (h ^ b[i]) * 1099511628211ull;
    return h;
}

std::vector<unsigned char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string slurp_text(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run(const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    return rc;
}

} // namespace

int main() {
    std::printf("acceptance: %s\n", GRADFEAT_CLI_PATH);
    std::fflush(stdout);

    report(1, "jvp-vs-finite-differences", [] {
        const Net n = default_ntk(101);
        const auto r = oracle::verify_jvp(n.def, n.params, 100, 1, 1e-4, 1e-3);
        const bool ok = r.passed && r.max_error < 1e-3 && r.excluded < 5 && r.seconds < 60.0;
        return Outcome{ok, fmt("max rel err %.3g < 1e-3, excluded %zu < 5, %zu trials, %.1fs < 60s", r.max_error,
                               r.excluded, r.trials, r.seconds)};
    });

    report(2, "explicit-jacobian", [] {
        const NetworkDef def = oracle::tiny_network();
        const ParamSet p = oracle::tiny_params(def, 102);
        const std::size_t np = TangentParams::zeros(def, p).numel();
        const auto r = oracle::verify_jacobian(def, p, 5, 2, 1e-5);
        const bool ok = r.passed && np <= 1000 && r.max_error < 1e-5 && r.seconds < 30.0;
        return Outcome{ok, fmt("|theta2| = %zu, max abs err %.3g < 1e-5, %.1fs < 30s", np, r.max_error, r.seconds)};
    });

    report(3, "adjoint-identity", [] {
        const Net n = default_ntk(103);
        const auto r = oracle::verify_adjoint(n.def, n.params, 100, 3, 1e-4);
        const std::size_t passing = r.detail.value("passing_trials", std::size_t{0});
        return Outcome{r.passed && passing == 100,
                       fmt("%zu/100 within 1e-4 relative, max %.3g", passing, r.max_error)};
    });

    report(4, "taylor-scaling", [] {
        const Net n = default_ntk(104);
        const auto r = oracle::verify_taylor(n.def, n.params, 256, 4);
        const double zero = r.detail.value("residual_at_zero", -1.0);
        std::string ratios;
        for (const auto& x : r.detail.at("ratios")) ratios += fmt("%.3f ", x.get<double>());
        return Outcome{r.passed && zero == 0.0,
                       fmt("ratios [ %s] in [3,5], residual at zero %.1f, excluded %zu", ratios.c_str(), zero,
                           r.excluded)};
    });

    report(5, "zero-init-equivalence", [] {
        const NetworkDef def = default_network();
        auto net = std::make_shared<const Backbone>(Backbone{def, build_network(def, 105)});
        SyntheticSpec s;
        s.per_class = 30;
        const Dataset data = gen_synthetic(s, 5);
        TrainConfig c;
        c.iterations = 200;
        c.base_lr = 1e-2;
        const LinearHead omega = fit_probe(net, data, c);
        const NetworkDef split = default_network();
        auto [nd, np] = adopt_ntk(split, net->params);
        auto gnet = std::make_shared<const Backbone>(Backbone{nd, np});
        const FullModel m = make_model(ModelKind::full, net, gnet, omega, omega.weight, data.num_classes);
        const Tensor x = data.images.slice_rows(0, 64);
        const Tensor full = full_logits(m, x);
        const Tensor act = activation_logits(omega, forward_features(def, net->params, x).features);
        const bool same = full == act && checksum(full) == checksum(act);
        return Outcome{same, fmt("64-sample batch, max |diff| = %.3g, checksums %s", max_abs_diff(full, act),
                                 same ? "equal" : "differ")};
    });

    report(6, "directional-ablation", [] {
        double gain = 0.0, rand_gap = 0.0;
        std::string per_seed;
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            ExperimentConfig c = desk_config();
            c.grid = parse_grid("ppp,rrr");
            c.kinds = {ModelKind::full};
            c.run_finetune = false;
            c.seed = seed;
            const auto recs = run_ablation(c);
            double act = 0.0, ppp = 0.0, rrr = 0.0;
            for (const auto& r : recs) {
                if (r.variant == "activation") act = r.metric;
                if (r.variant == "full" && r.provenance.code() == "ppp") ppp = r.metric;
                if (r.variant == "full" && r.provenance.code() == "rrr") rrr = r.metric;
            }
            gain += (ppp - act) * 100.0 / 3.0;
            rand_gap += (rrr - act) * 100.0 / 3.0;
            per_seed += fmt("[seed %llu act %.2f ppp %.2f rrr %.2f] ", static_cast<unsigned long long>(seed),
                            act * 100, ppp * 100, rrr * 100);
        }
        const bool ok = gain >= 1.0 && std::abs(rand_gap) <= 1.5;
        return Outcome{ok, fmt("mean full(ppp) - act = %+.2f pts (>= 1.0), |full(rrr) - act| = %.2f pts (<= 1.5) %s",
                               gain, std::abs(rand_gap), per_seed.c_str())};
    });

    report(7, "jvp-cost", [] {
        SyntheticSpec s;
        s.per_class = 11;
        const Tensor x = gen_synthetic(s, 7).images.slice_rows(0, 64);
        const Net top = default_ntk(107);
        const Net two = default_ntk(107, {"conv2", "conv3"});
        const TimingResult t1 = time_jvp(top.def, top.params, x, 20);
        const TimingResult t2 = time_jvp(two.def, two.params, x, 20);
        const bool ok = t1.end_to_end_ratio() <= 1.5 && t2.end_to_end_ratio() <= 2.5;
        return Outcome{ok, fmt("topmost %.2fx <= 1.5 (jvp only %.2fx), two layers %.2fx <= 2.5 (jvp only %.2fx)",
                               t1.end_to_end_ratio(), t1.ratio(), t2.end_to_end_ratio(), t2.ratio())};
    });

    report(8, "frozen-backbone", [] {
        const Net n = default_ntk(108);
        auto net = std::make_shared<const Backbone>(Backbone{n.def, n.params});
        SyntheticSpec s;
        s.per_class = 20;
        const Dataset data = gen_synthetic(s, 8);
        TrainConfig c;
        c.iterations = 60;
        c.base_lr = 1e-2;
        const LinearHead omega = fit_probe(net, data, c);
        const auto theta = net->params.checksum();
        const auto om = omega.checksum();
        bool ok = true;
        for (auto kind : {ModelKind::activation, ModelKind::gradient, ModelKind::full}) {
            const auto tm = train_linear(kind, net, omega, data, c);
            ok = ok && net->params.checksum() == theta && omega.checksum() == om &&
                 tm.model.gradient_net->params.checksum() == theta;
            if (kind != ModelKind::activation) ok = ok && tm.model.omega == omega.weight;
        }
        return Outcome{ok, fmt("theta checksum %016llx, omega checksum %016llx unchanged over 3 kinds",
                               static_cast<unsigned long long>(theta), static_cast<unsigned long long>(om))};
    });

    report(9, "format-fidelity", [] {
        const fs::path dir = workdir();
        const Net n = default_ntk(109, {"conv2", "conv3"});
        save_checkpoint(dir / "net.gfck", n.def, n.params);
        const auto [d2, p2] = load_checkpoint(dir / "net.gfck");
        bool ckpt = p2.checksum() == n.params.checksum() && to_json(d2) == to_json(n.def);
        for (const auto& [name, lp] : n.params.layers) ckpt = ckpt && p2.at(name).weight == lp.weight;

        // IDX files written byte by byte, decoded by hand.
        std::mt19937_64 rng(9);
        std::vector<unsigned char> img{0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 28, 0, 0, 0, 28};
        for (int i = 0; i < 3 * 28 * 28; ++i) img.push_back(static_cast<unsigned char>(rng() & 0xff));
        std::vector<unsigned char> lbl{0, 0, 8, 1, 0, 0, 0, 3, 4, 1, 9};
        std::ofstream(dir / "img.idx", std::ios::binary).write(reinterpret_cast<char*>(img.data()), std::streamsize(img.size()));
        std::ofstream(dir / "lbl.idx", std::ios::binary).write(reinterpret_cast<char*>(lbl.data()), std::streamsize(lbl.size()));
        const Dataset idx = load_idx(dir / "img.idx", dir / "lbl.idx");
        std::vector<float> first_idx;
        const auto raw_img = slurp(dir / "img.idx");
        for (std::size_t i = 16; i < 16 + 28 * 28; ++i) first_idx.push_back(float(raw_img[i]) / 255.0f);
        const std::vector<float> lib_idx(idx.images.data(), idx.images.data() + 28 * 28);
        const bool idx_ok = fnv(first_idx) == fnv(lib_idx) && idx.labels[0] == slurp(dir / "lbl.idx")[8];

        std::vector<unsigned char> cifar;
        for (int r = 0; r < 2; ++r) {
            cifar.push_back(static_cast<unsigned char>(7 - r));
            for (int i = 0; i < 3072; ++i) cifar.push_back(static_cast<unsigned char>(rng() & 0xff));
        }
        std::ofstream(dir / "c.bin", std::ios::binary).write(reinterpret_cast<char*>(cifar.data()), std::streamsize(cifar.size()));
        const Dataset cf = load_cifar_binary(dir / "c.bin");
        const auto raw_c = slurp(dir / "c.bin");
        std::vector<float> first_c;
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t p = 0; p < 1024; ++p) first_c.push_back(float(raw_c[1 + ch * 1024 + p]) / 255.0f);
        const std::vector<float> lib_c(cf.images.data(), cf.images.data() + 3072);
        const bool cifar_ok = fnv(first_c) == fnv(lib_c) && cf.labels[0] == raw_c[0];

        return Outcome{ckpt && idx_ok && cifar_ok,
                       fmt("checkpoint round trip %s, IDX first record %016llx %s, CIFAR first record %016llx %s",
                           ckpt ? "bit-exact" : "DIFFERS", static_cast<unsigned long long>(fnv(lib_idx)),
                           idx_ok ? "agrees" : "DISAGREES", static_cast<unsigned long long>(fnv(lib_c)),
                           cifar_ok ? "agrees" : "DISAGREES")};
    });

    report(10, "cli-determinism", [] {
        const fs::path dir = workdir();
        nlohmann::json cfg = to_json(desk_config());
        cfg["data"]["synthetic"]["per_class"] = 40;
        cfg["data"]["test_per_class"] = 30;
        cfg["pretrain"]["train"]["iterations"] = 150;
        cfg["probe"]["iterations"] = 300;
        cfg["linear"]["iterations"] = 100;
        cfg["finetune"]["adam"]["iterations"] = 60;
        cfg["finetune"]["sgd"]["iterations"] = 60;
        cfg["grid"] = "ppp,rrr";
        std::ofstream(dir / "det.json") << cfg.dump(2);
        for (const char* run_dir : {"run_a", "run_b"}) {
            fs::remove_all(dir / run_dir);
            const std::string cmd = std::string("\"") + GRADFEAT_CLI_PATH + "\" ablate --config \"" +
                                    (dir / "det.json").string() + "\" --seed 11 --out \"" + (dir / run_dir).string() +
                                    "\" > /dev/null";
            if (run(cmd) != 0) return Outcome{false, std::string("ablate failed in ") + run_dir};
        }
        const std::string a = slurp_text(dir / "run_a" / "results.csv"), b = slurp_text(dir / "run_b" / "results.csv");
        const auto ra = read_report_json(dir / "run_a" / "results.json");
        const auto rb = read_report_json(dir / "run_b" / "results.json");
        bool same = !a.empty() && a == b && ra.size() == rb.size();
        for (std::size_t i = 0; same && i < ra.size(); ++i)
            same = ra[i].metric == rb[i].metric && ra[i].train_metric == rb[i].train_metric &&
                   ra[i].final_loss == rb[i].final_loss && ra[i].initial_loss == rb[i].initial_loss;
        return Outcome{same, fmt("%zu records from two fresh processes are %s", ra.size(), same ? "identical" : "DIFFERENT")};
    });

    std::printf("acceptance: %d failing\n", failures);
    return failures == 0 ? 0 : 1;
}

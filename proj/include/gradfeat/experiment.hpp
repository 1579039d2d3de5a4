#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradfeat/dataset.hpp"
#include "gradfeat/models.hpp"
#include "gradfeat/netdef.hpp"
#include "gradfeat/optim.hpp"

namespace gradfeat {

inline constexpr int kConfigVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

enum class PretrainTask { rotation, source_classes, none };

const char* to_string(PretrainTask t);
PretrainTask pretrain_task_from_string(const std::string& s);

/// Provenance of (theta1, theta2, omega) for one ablation cell.
struct GridCell {
    Provenance theta1 = Provenance::pretrained;
    Provenance theta2 = Provenance::pretrained;
    Provenance omega = Provenance::pretrained;

    /// Three letters, 'p' or 'r', in the order theta1 theta2 omega.
    std::string code() const;
    static GridCell parse(const std::string& code);
    bool needs_pretrained() const;
    auto operator<=>(const GridCell&) const = default;
};

/// "all" for the eight cells, otherwise comma-separated codes such as "ppp,rrr".
std::vector<GridCell> parse_grid(const std::string& spec);

struct DataConfig {
    std::string kind = "synthetic"; // synthetic | idx | cifar
    SyntheticSpec synthetic;
    std::size_t test_per_class = 100;
    std::string train_images, train_labels, test_images, test_labels; // idx
    std::vector<std::string> train_files;                             // cifar batches
    std::string test_file;
    std::size_t limit_train = 0; // 0 keeps everything
    std::size_t limit_test = 0;
};

struct ExperimentConfig {
    int version = kConfigVersion;
    std::optional<NetworkDef> network;  // default architecture when absent
    PretrainTask pretrain_task = PretrainTask::rotation;
    std::string checkpoint;             // pretrained backbone to load instead of training
    std::vector<std::size_t> source_classes;
    TrainConfig pretrain;
    TrainConfig probe;
    TrainConfig linear;
    TrainConfig finetune_adam;
    TrainConfig finetune_sgd;
    bool run_finetune = true;
    std::vector<ModelKind> kinds{ModelKind::gradient, ModelKind::full};
    std::vector<std::vector<std::string>> theta2;  // each entry is one theta2 selection
    std::vector<GridCell> grid{GridCell{}};
    DataConfig data;
    std::string out = "out";
    std::uint64_t seed = 0;

    /// Checks version, layer names and grid/checkpoint consistency.
    void validate() const;
    NetworkDef resolved_network(const Shape& input) const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Desk-scale defaults tuned for a single CPU core.
ExperimentConfig desk_config();

struct DataSplits {
    Dataset train;
    Dataset test;
};

DataSplits load_data(const DataConfig& cfg, std::uint64_t seed);

/// Rows whose label is (inside = true) or is not in `classes`, relabelled to 0..k-1
/// in ascending class order.
Dataset select_classes(const Dataset& d, const std::set<int>& classes, bool inside);

struct ResultRecord {
    std::string variant;   // activation | gradient | full | finetune
    std::string theta2;    // '+'-joined layer names
    GridCell provenance;
    double metric = 0.0;   // test accuracy
    double train_metric = 0.0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::size_t epochs = 0;
    std::map<std::string, double> wall;  // seconds per phase
    std::uint64_t seed = 0;
    nlohmann::json detail = nlohmann::json::object();
};

nlohmann::json to_json(const ResultRecord& r);
ResultRecord result_record_from_json(const nlohmann::json& j);

struct PretrainedState {
    NetworkDef def;
    ParamSet params;
};

/// Pretrained backbone per the config: loaded checkpoint, pretext training, or none.
std::optional<PretrainedState> obtain_backbone(const ExperimentConfig& cfg, const Dataset& train);

/// Full ablation: backbone, activation probe, gradient/full cells per theta2
/// selection and grid cell, and fine-tuning rows.
std::vector<ResultRecord> run_ablation(const ExperimentConfig& cfg);

enum class ReportFormat { csv, json };
ReportFormat report_format_from_string(const std::string& s);

void emit_report(const std::vector<ResultRecord>& records, const std::filesystem::path& path, ReportFormat format);
std::vector<ResultRecord> read_report_json(const std::filesystem::path& path);

/// Median wall time of jvp_forward and of forward_features over `runs` repetitions.
struct TimingResult {
    double forward_seconds = 0.0;
    double jvp_seconds = 0.0;          // from the cached boundary activation
    double theta1_seconds = 0.0;       // computing the boundary activation
    double ratio() const { return jvp_seconds / forward_seconds; }
    double end_to_end_ratio() const { return (theta1_seconds + jvp_seconds) / forward_seconds; }
};

TimingResult time_jvp(const NetworkDef& def, const ParamSet& params, const Tensor& x, std::size_t runs);

} // namespace gradfeat

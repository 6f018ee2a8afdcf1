#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "brain3d/align.hpp"
#include "brain3d/diffusion.hpp"
#include "brain3d/geometry.hpp"
#include "brain3d/metrics.hpp"
#include "brain3d/providers.hpp"
#include "brain3d/reasoning.hpp"
#include "brain3d/renderer.hpp"
#include "brain3d/report.hpp"

namespace brain3d::pipe {

// "mock" providers are the deterministic in-process stand-ins; "http"
// adapters speak the JSON wire contract; decode additionally supports
// "toy" (trained alignment + toy diffusion checkpoints). "scripted" and
// "fail-match" reasoners exist for failure-path tests.
struct ProviderSpec {
    std::string kind = "mock";
    std::string id;
    std::string endpoint;
    std::vector<std::string> script;  // scripted reasoner responses
    std::string match;                // fail-match: image_id substring that fails
};

struct MetricsConfig {
    std::string embedder = "histogram";
    int histogram_bins = 4;
    std::string features = "gradient";
    int gradient_levels = 3;
    std::string classifier = "template";
    double classifier_tau = 0.05;
    int is_splits = 10;
    std::string feature_file;  // embedder = "feature-file"
    std::string feature_ids_file;
};

struct PipelineConfig {
    std::string manifest_path;

    ProviderSpec decode{.kind = "mock", .id = "mock-decode", .endpoint = "", .script = {}, .match = ""};
    ProviderSpec reasoner{.kind = "mock", .id = "mock-reasoner", .endpoint = "", .script = {}, .match = ""};
    ProviderSpec t2i{.kind = "mock", .id = "mock-t2i", .endpoint = "", .script = {}, .match = ""};
    ProviderSpec to3d{.kind = "mock", .id = "mock-to3d", .endpoint = "", .script = {}, .match = ""};
    int inflight_limit = 4;

    align::AlignConfig align_cfg;
    std::string align_checkpoint;
    diff::DiffusionConfig diff_cfg;
    std::string diff_checkpoint;
    geom::GenStageConfig gen;
    render::ViewSetConfig views;

    std::vector<std::pair<int, int>> nway_settings = {{2, 1}, {10, 1}, {10, 2}, {50, 1}, {50, 2}};
    int nway_trials = 20;
    uint64_t nway_seed = 0;
    MetricsConfig metrics_cfg;

    std::string template_path;  // empty = built-in v1
    int reason_max_retries = 3;
    std::vector<double> reason_backoff_s = {1, 2, 4};

    std::string mode = "full";  // or "direct"
    std::string cache_dir = ".brain3d-cache";
    std::string out_dir = "brain3d-out";
    int worker_limit = 4;
    uint64_t seed = 0;
    std::string backbone_label = "mock";

    void validate() const;
};

PipelineConfig default_config();
nlohmann::json config_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& cfg, const std::filesystem::path& path);

// BRAIN3D_{DECODE,REASON,T2I,TO3D}_ENDPOINT override provider endpoints
// (and nothing else).
void apply_env_overrides(PipelineConfig& cfg);

// Content-addressed cache key over a canonical serialization; mode and seed
// always participate.
std::string cache_key(const std::string& stage, const std::vector<std::string>& input_hashes,
                      const std::string& config_hash, uint64_t seed, const std::string& mode);

class DiskCache {
public:
    explicit DiskCache(std::filesystem::path dir);
    std::optional<std::string> get(const std::string& stage, const std::string& key) const;
    void put(const std::string& stage, const std::string& key, const std::string& bytes) const;

private:
    std::filesystem::path dir_;
};

struct StageRecord {
    std::string stage;
    std::string input_hash;
    std::string config_hash;
    std::string artifact_path;
    std::string provider_id;
    std::string timestamp;
    std::string status;  // "computed" | "cached" | "failed"
};

struct TrialFailure {
    std::string trial_id;
    std::string stage;
    std::string message;
};

struct ProviderSet {
    std::unique_ptr<providers::EegDecodeProvider> decode;
    std::unique_ptr<providers::ReasonerProvider> reasoner;
    std::unique_ptr<providers::TextToImageProvider> t2i;
    std::unique_ptr<providers::ImageToMeshProvider> to3d;

    std::map<std::string, long> call_counts() const;
};

// Providers per config; the mock decoder needs the per-class stimulus
// images from the manifest.
ProviderSet build_providers(const PipelineConfig& cfg, const std::vector<Image>& class_images);

struct RunResult {
    metrics::MetricReport vs_gt;
    metrics::MetricReport vs_intermediate;
    std::vector<TrialFailure> failures;
    std::map<std::string, long> provider_calls;
    std::string report_gt_text;
    std::string report_intermediate_text;
    int trials_attempted = 0;
    int trials_succeeded = 0;
};

// Full pipeline over the selected trials (empty = every manifest entry):
// decode -> (reason -> t2i, full mode only) -> to3d -> render -> evaluate,
// against both the ground-truth stimulus and the decoded image. Artifacts
// land under out_dir, stage outputs are cached under cache_dir, failing
// trials are quarantined into the failures list.
RunResult run_pipeline(const PipelineConfig& cfg, const std::vector<std::string>& trial_ids = {});

struct AblationResult {
    RunResult full;
    RunResult direct;
    std::string report_ablation_text;
};

// Runs both modes on identical trials and seeds; the ablation table pairs
// full rows with direct baselines.
AblationResult run_ablation(const PipelineConfig& cfg, const std::vector<std::string>& trial_ids = {});

// Rebuilds one of the three tables from a run directory produced by
// run_pipeline / run_ablation.
std::string report_from_run_dir(const std::filesystem::path& out_dir, report::Layout layout);

}  // namespace brain3d::pipe

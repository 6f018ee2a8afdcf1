#include "brain3d/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <thread>

namespace brain3d::pipe {

namespace fs = std::filesystem;
using nlohmann::json;

void PipelineConfig::validate() const {
    align_cfg.validate();
    diff_cfg.validate();
    gen.validate();
    if (mode != "full" && mode != "direct")
        throw ValidationError("mode must be 'full' or 'direct', got '" + mode + "'");
    if (worker_limit < 1) throw ValidationError("worker_limit must be >= 1");
    if (inflight_limit < 1) throw ValidationError("inflight_limit must be >= 1");
    if (nway_trials < 1) throw ValidationError("nway trials must be >= 1");
    if (backbone_label.empty() || backbone_label.find_first_of(" \t") != std::string::npos)
        throw ValidationError("backbone_label must be non-empty and whitespace-free");
    for (const auto& [n, k] : nway_settings)
        if (n < 2 || k < 1 || k >= n)
            throw ValidationError("bad n-way setting (" + std::to_string(n) + ", " + std::to_string(k) + ")");
}

PipelineConfig default_config() {
    return PipelineConfig{};
}

namespace {
json provider_json(const ProviderSpec& p) {
    json j;
    j["kind"] = p.kind;
    j["id"] = p.id;
    j["endpoint"] = p.endpoint;
    j["script"] = p.script;
    j["match"] = p.match;
    return j;
}

ProviderSpec provider_from_json(const json& j, const ProviderSpec& defaults) {
    ProviderSpec p = defaults;
    if (j.contains("kind")) p.kind = j["kind"].get<std::string>();
    if (j.contains("id")) p.id = j["id"].get<std::string>();
    if (j.contains("endpoint")) p.endpoint = j["endpoint"].get<std::string>();
    if (j.contains("script")) p.script = j["script"].get<std::vector<std::string>>();
    if (j.contains("match")) p.match = j["match"].get<std::string>();
    return p;
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j[key].get<T>();
}
}  // namespace

json config_json(const PipelineConfig& cfg) {
    json j;
    j["dataset"]["manifest"] = cfg.manifest_path;

    j["providers"]["decode"] = provider_json(cfg.decode);
    j["providers"]["reason"] = provider_json(cfg.reasoner);
    j["providers"]["t2i"] = provider_json(cfg.t2i);
    j["providers"]["to3d"] = provider_json(cfg.to3d);
    j["providers"]["inflight_limit"] = cfg.inflight_limit;

    json a;
    a["embed_dim"] = cfg.align_cfg.embed_dim;
    a["cond_dim"] = cfg.align_cfg.cond_dim;
    a["hidden_eeg"] = cfg.align_cfg.hidden_eeg;
    a["hidden_img"] = cfg.align_cfg.hidden_img;
    a["image_side"] = cfg.align_cfg.image_side;
    a["temperature"] = cfg.align_cfg.temperature;
    a["learning_rate"] = cfg.align_cfg.learning_rate;
    a["batch_size"] = cfg.align_cfg.batch_size;
    a["epochs"] = cfg.align_cfg.epochs;
    a["seed"] = cfg.align_cfg.seed;
    a["checkpoint"] = cfg.align_checkpoint;
    j["align"] = a;

    json d;
    d["timesteps"] = cfg.diff_cfg.timesteps;
    d["beta_start"] = cfg.diff_cfg.beta_start;
    d["beta_end"] = cfg.diff_cfg.beta_end;
    d["guidance_scale"] = cfg.diff_cfg.guidance_scale;
    d["drop_prob"] = cfg.diff_cfg.drop_prob;
    d["image_side"] = cfg.diff_cfg.image_side;
    d["channels"] = cfg.diff_cfg.channels;
    d["cond_dim"] = cfg.diff_cfg.cond_dim;
    d["temb_dim"] = cfg.diff_cfg.temb_dim;
    d["hidden"] = cfg.diff_cfg.hidden;
    d["learning_rate"] = cfg.diff_cfg.learning_rate;
    d["batch_size"] = cfg.diff_cfg.batch_size;
    d["train_steps"] = cfg.diff_cfg.train_steps;
    d["seed"] = cfg.diff_cfg.seed;
    d["checkpoint"] = cfg.diff_checkpoint;
    j["diffusion"] = d;

    json g;
    g["t2i_steps"] = cfg.gen.t2i_steps;
    g["t2i_guidance"] = cfg.gen.t2i_guidance;
    g["texture_resolution"] = cfg.gen.texture_resolution;
    g["seed"] = cfg.gen.seed;
    j["genstage"] = g;

    json v;
    v["azimuth_start"] = cfg.views.azimuth_start;
    v["azimuth_step"] = cfg.views.azimuth_step;
    v["elevation"] = cfg.views.elevation;
    v["distance"] = cfg.views.distance;
    v["fov"] = cfg.views.fov;
    v["width"] = cfg.views.width;
    v["height"] = cfg.views.height;
    j["views"] = v;

    json nw;
    nw["settings"] = cfg.nway_settings;
    nw["trials"] = cfg.nway_trials;
    nw["seed"] = cfg.nway_seed;
    j["nway"] = nw;

    json m;
    m["embedder"] = cfg.metrics_cfg.embedder;
    m["histogram_bins"] = cfg.metrics_cfg.histogram_bins;
    m["features"] = cfg.metrics_cfg.features;
    m["gradient_levels"] = cfg.metrics_cfg.gradient_levels;
    m["classifier"] = cfg.metrics_cfg.classifier;
    m["classifier_tau"] = cfg.metrics_cfg.classifier_tau;
    m["is_splits"] = cfg.metrics_cfg.is_splits;
    m["feature_file"] = cfg.metrics_cfg.feature_file;
    m["feature_ids_file"] = cfg.metrics_cfg.feature_ids_file;
    j["metrics"] = m;

    json r;
    r["template_path"] = cfg.template_path;
    r["max_retries"] = cfg.reason_max_retries;
    r["transport_backoff_s"] = cfg.reason_backoff_s;
    j["reasoning"] = r;

    json o;
    o["mode"] = cfg.mode;
    o["cache_dir"] = cfg.cache_dir;
    o["out_dir"] = cfg.out_dir;
    o["worker_limit"] = cfg.worker_limit;
    o["seed"] = cfg.seed;
    o["backbone_label"] = cfg.backbone_label;
    j["orchestrator"] = o;
    return j;
}

PipelineConfig config_from_json(const json& j) {
    PipelineConfig cfg;
    if (j.contains("dataset")) maybe(j["dataset"], "manifest", cfg.manifest_path);
    if (j.contains("providers")) {
        const json& p = j["providers"];
        if (p.contains("decode")) cfg.decode = provider_from_json(p["decode"], cfg.decode);
        if (p.contains("reason")) cfg.reasoner = provider_from_json(p["reason"], cfg.reasoner);
        if (p.contains("t2i")) cfg.t2i = provider_from_json(p["t2i"], cfg.t2i);
        if (p.contains("to3d")) cfg.to3d = provider_from_json(p["to3d"], cfg.to3d);
        maybe(p, "inflight_limit", cfg.inflight_limit);
    }
    if (j.contains("align")) {
        const json& a = j["align"];
        maybe(a, "embed_dim", cfg.align_cfg.embed_dim);
        maybe(a, "cond_dim", cfg.align_cfg.cond_dim);
        maybe(a, "hidden_eeg", cfg.align_cfg.hidden_eeg);
        maybe(a, "hidden_img", cfg.align_cfg.hidden_img);
        maybe(a, "image_side", cfg.align_cfg.image_side);
        maybe(a, "temperature", cfg.align_cfg.temperature);
        maybe(a, "learning_rate", cfg.align_cfg.learning_rate);
        maybe(a, "batch_size", cfg.align_cfg.batch_size);
        maybe(a, "epochs", cfg.align_cfg.epochs);
        maybe(a, "seed", cfg.align_cfg.seed);
        maybe(a, "checkpoint", cfg.align_checkpoint);
    }
    if (j.contains("diffusion")) {
        const json& d = j["diffusion"];
        maybe(d, "timesteps", cfg.diff_cfg.timesteps);
        maybe(d, "beta_start", cfg.diff_cfg.beta_start);
        maybe(d, "beta_end", cfg.diff_cfg.beta_end);
        maybe(d, "guidance_scale", cfg.diff_cfg.guidance_scale);
        maybe(d, "drop_prob", cfg.diff_cfg.drop_prob);
        maybe(d, "image_side", cfg.diff_cfg.image_side);
        maybe(d, "channels", cfg.diff_cfg.channels);
        maybe(d, "cond_dim", cfg.diff_cfg.cond_dim);
        maybe(d, "temb_dim", cfg.diff_cfg.temb_dim);
        maybe(d, "hidden", cfg.diff_cfg.hidden);
        maybe(d, "learning_rate", cfg.diff_cfg.learning_rate);
        maybe(d, "batch_size", cfg.diff_cfg.batch_size);
        maybe(d, "train_steps", cfg.diff_cfg.train_steps);
        maybe(d, "seed", cfg.diff_cfg.seed);
        maybe(d, "checkpoint", cfg.diff_checkpoint);
    }
    if (j.contains("genstage")) {
        const json& g = j["genstage"];
        maybe(g, "t2i_steps", cfg.gen.t2i_steps);
        maybe(g, "t2i_guidance", cfg.gen.t2i_guidance);
        maybe(g, "texture_resolution", cfg.gen.texture_resolution);
        maybe(g, "seed", cfg.gen.seed);
    }
    if (j.contains("views")) {
        const json& v = j["views"];
        maybe(v, "azimuth_start", cfg.views.azimuth_start);
        maybe(v, "azimuth_step", cfg.views.azimuth_step);
        maybe(v, "elevation", cfg.views.elevation);
        maybe(v, "distance", cfg.views.distance);
        maybe(v, "fov", cfg.views.fov);
        maybe(v, "width", cfg.views.width);
        maybe(v, "height", cfg.views.height);
    }
    if (j.contains("nway")) {
        const json& nw = j["nway"];
        maybe(nw, "settings", cfg.nway_settings);
        maybe(nw, "trials", cfg.nway_trials);
        maybe(nw, "seed", cfg.nway_seed);
    }
    if (j.contains("metrics")) {
        const json& m = j["metrics"];
        maybe(m, "embedder", cfg.metrics_cfg.embedder);
        maybe(m, "histogram_bins", cfg.metrics_cfg.histogram_bins);
        maybe(m, "features", cfg.metrics_cfg.features);
        maybe(m, "gradient_levels", cfg.metrics_cfg.gradient_levels);
        maybe(m, "classifier", cfg.metrics_cfg.classifier);
        maybe(m, "classifier_tau", cfg.metrics_cfg.classifier_tau);
        maybe(m, "is_splits", cfg.metrics_cfg.is_splits);
        maybe(m, "feature_file", cfg.metrics_cfg.feature_file);
        maybe(m, "feature_ids_file", cfg.metrics_cfg.feature_ids_file);
    }
    if (j.contains("reasoning")) {
        const json& r = j["reasoning"];
        maybe(r, "template_path", cfg.template_path);
        maybe(r, "max_retries", cfg.reason_max_retries);
        maybe(r, "transport_backoff_s", cfg.reason_backoff_s);
    }
    if (j.contains("orchestrator")) {
        const json& o = j["orchestrator"];
        maybe(o, "mode", cfg.mode);
        maybe(o, "cache_dir", cfg.cache_dir);
        maybe(o, "out_dir", cfg.out_dir);
        maybe(o, "worker_limit", cfg.worker_limit);
        maybe(o, "seed", cfg.seed);
        maybe(o, "backbone_label", cfg.backbone_label);
    }
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad config: ") + e.what(), path.string(), 1);
    }
    return config_from_json(j);
}

void save_config(const PipelineConfig& cfg, const std::filesystem::path& path) {
    write_file_atomic(path, config_json(cfg).dump(2) + "\n");
}

void apply_env_overrides(PipelineConfig& cfg) {
    struct {
        const char* var;
        ProviderSpec* spec;
    } table[] = {{"BRAIN3D_DECODE_ENDPOINT", &cfg.decode},
                 {"BRAIN3D_REASON_ENDPOINT", &cfg.reasoner},
                 {"BRAIN3D_T2I_ENDPOINT", &cfg.t2i},
                 {"BRAIN3D_TO3D_ENDPOINT", &cfg.to3d}};
    for (const auto& row : table) {
        const char* v = std::getenv(row.var);
        if (v && *v) row.spec->endpoint = v;
    }
}

std::string cache_key(const std::string& stage, const std::vector<std::string>& input_hashes,
                      const std::string& config_hash, uint64_t seed, const std::string& mode) {
    std::string canon = "stage=" + stage + "\n";
    for (const auto& h : input_hashes) canon += "input=" + h + "\n";
    canon += "config=" + config_hash + "\nseed=" + std::to_string(seed) + "\nmode=" + mode + "\n";
    return sha256_hex(canon);
}

DiskCache::DiskCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::optional<std::string> DiskCache::get(const std::string& stage, const std::string& key) const {
    fs::path p = dir_ / stage / key;
    if (!fs::exists(p)) return std::nullopt;
    return read_text_file(p);
}

void DiskCache::put(const std::string& stage, const std::string& key, const std::string& bytes) const {
    write_file_atomic(dir_ / stage / key, bytes);
}

// ---------------------------------------------------------------------------
// Config-only providers.

namespace {
// Trained alignment + toy diffusion as an in-process decode backbone.
class ToyEegDecodeProvider : public providers::EegDecodeProvider {
public:
    ToyEegDecodeProvider(const PipelineConfig& cfg)
        : align_(align::load_checkpoint(cfg.align_checkpoint)),
          den_(diff::load_checkpoint(cfg.diff_checkpoint)),
          cfg_(cfg.diff_cfg),
          seed_(cfg.seed),
          id_(cfg.decode.id.empty() ? "toy-decode" : cfg.decode.id) {}

    std::string id() const override { return id_; }

protected:
    Image do_decode(const data::EegTrial& trial) override {
        align::Embedding z = align::encode_eeg(trial, align_);
        align::ConditioningVector zc = align::align_project(z, align_);
        Eigen::VectorXd cond = zc.values;
        if (cond.size() != cfg_.cond_dim) {
            Eigen::VectorXd fit = Eigen::VectorXd::Zero(cfg_.cond_dim);
            fit.head(std::min(cond.size(), fit.size())) = cond.head(std::min(cond.size(), fit.size()));
            cond = fit;
        }
        uint64_t seed = sha256_seed("toy-decode:" + std::to_string(seed_) + ":" + trial.trial_id);
        Eigen::VectorXd x = diff::sample(&cond, cfg_, den_, seed);
        Image img = diff::unit_to_image(x, cfg_.image_side, cfg_.channels);
        img.image_id = "decoded_" + trial.trial_id;
        img.class_label = trial.class_label;
        return img;
    }

private:
    align::AlignParams align_;
    diff::DenoiserParams den_;
    diff::DiffusionConfig cfg_;
    uint64_t seed_;
    std::string id_;
};

// Emits a bulleted (invalid) response for images whose id contains `match`;
// exercises per-trial failure quarantine.
class SelectiveFailReasoner : public providers::ReasonerProvider {
public:
    SelectiveFailReasoner(std::string match, std::string id)
        : match_(std::move(match)), id_(std::move(id)) {}
    std::string id() const override { return id_; }

protected:
    std::string do_generate(const providers::ReasonRequest& req) override {
        if (req.image && req.image->image_id.find(match_) != std::string::npos)
            return "- a bulleted list\n- that never validates";
        return inner_.generate(req);
    }

private:
    std::string match_;
    std::string id_;
    providers::ProceduralReasoner inner_;
};
}  // namespace

std::map<std::string, long> ProviderSet::call_counts() const {
    return {{"decode", decode->call_count()},
            {"reason", reasoner->call_count()},
            {"t2i", t2i->call_count()},
            {"to3d", to3d->call_count()}};
}

ProviderSet build_providers(const PipelineConfig& cfg, const std::vector<Image>& class_images) {
    ProviderSet set;
    const auto& d = cfg.decode;
    if (d.kind == "mock") {
        set.decode = std::make_unique<providers::MockEegDecode>(class_images,
                                                                d.id.empty() ? "mock-decode" : d.id);
    } else if (d.kind == "toy") {
        set.decode = std::make_unique<ToyEegDecodeProvider>(cfg);
    } else if (d.kind == "http") {
        set.decode = std::make_unique<providers::HttpEegDecodeProvider>(d.endpoint,
                                                                        d.id.empty() ? "http-decode" : d.id);
    } else {
        throw ValidationError("unknown decode provider kind '" + d.kind + "'");
    }

    const auto& r = cfg.reasoner;
    if (r.kind == "mock") {
        set.reasoner = std::make_unique<providers::ProceduralReasoner>(r.id.empty() ? "mock-reasoner" : r.id);
    } else if (r.kind == "scripted") {
        set.reasoner = std::make_unique<providers::MockReasoner>(r.script, r.id.empty() ? "scripted" : r.id);
    } else if (r.kind == "fail-match") {
        set.reasoner = std::make_unique<SelectiveFailReasoner>(r.match, r.id.empty() ? "fail-match" : r.id);
    } else if (r.kind == "http") {
        set.reasoner = std::make_unique<providers::HttpReasonerProvider>(r.endpoint,
                                                                         r.id.empty() ? "http-reasoner" : r.id);
    } else {
        throw ValidationError("unknown reasoner provider kind '" + r.kind + "'");
    }

    const auto& t = cfg.t2i;
    if (t.kind == "mock") {
        set.t2i = std::make_unique<providers::MockTextToImage>(64, t.id.empty() ? "mock-t2i" : t.id);
    } else if (t.kind == "http") {
        set.t2i = std::make_unique<providers::HttpTextToImageProvider>(t.endpoint,
                                                                       t.id.empty() ? "http-t2i" : t.id);
    } else {
        throw ValidationError("unknown t2i provider kind '" + t.kind + "'");
    }

    const auto& m = cfg.to3d;
    if (m.kind == "mock") {
        set.to3d = std::make_unique<providers::MockImageToMesh>(m.id.empty() ? "mock-to3d" : m.id);
    } else if (m.kind == "constant") {
        // input-independent unit cube; makes full and direct modes coincide
        static const char* kCube =
            "v -0.5 -0.5 -0.5\nv 0.5 -0.5 -0.5\nv 0.5 -0.5 0.5\nv -0.5 -0.5 0.5\n"
            "v -0.5 0.5 -0.5\nv 0.5 0.5 -0.5\nv 0.5 0.5 0.5\nv -0.5 0.5 0.5\n"
            "f 1 2 3 4\nf 5 8 7 6\nf 1 5 6 2\nf 3 7 8 4\nf 2 6 7 3\nf 4 8 5 1\n";
        set.to3d = std::make_unique<providers::ScriptedImageToMesh>(kCube,
                                                                    m.id.empty() ? "constant-to3d" : m.id);
    } else if (m.kind == "http") {
        set.to3d = std::make_unique<providers::HttpImageToMeshProvider>(m.endpoint,
                                                                        m.id.empty() ? "http-to3d" : m.id);
    } else {
        throw ValidationError("unknown to3d provider kind '" + m.kind + "'");
    }
    return set;
}

// ---------------------------------------------------------------------------
// Run machinery.

namespace {
struct MetricProviders {
    std::unique_ptr<metrics::EmbeddingProvider> embedder;
    std::unique_ptr<metrics::PerceptualFeatureProvider> features;
    std::unique_ptr<metrics::ClassProbProvider> classifier;
};

MetricProviders build_metric_providers(const PipelineConfig& cfg, const std::vector<Image>& class_images) {
    MetricProviders mp;
    const auto& m = cfg.metrics_cfg;
    if (m.embedder == "histogram") {
        mp.embedder = std::make_unique<metrics::HistogramEmbedder>(m.histogram_bins);
    } else if (m.embedder == "feature-file") {
        mp.embedder = std::make_unique<metrics::FeatureFileEmbedder>(m.feature_file, m.feature_ids_file);
    } else {
        throw ValidationError("unknown embedder kind '" + m.embedder + "'");
    }
    if (m.features == "gradient") {
        mp.features = std::make_unique<metrics::GradientFeatureProvider>(m.gradient_levels);
    } else {
        throw ValidationError("unknown perceptual feature kind '" + m.features + "'");
    }
    if (m.classifier == "template") {
        mp.classifier = std::make_unique<metrics::TemplateClassifier>(class_images, m.classifier_tau);
    } else {
        throw ValidationError("unknown classifier kind '" + m.classifier + "'");
    }
    return mp;
}

struct TrialWork {
    data::ManifestEntry entry;
    bool ok = false;
    TrialFailure failure;
    Image gt;
    Image decoded;
    std::optional<reason::SemanticDescription> desc;
    std::optional<Image> refined;
    geom::TriMesh mesh;
    std::vector<render::RenderedView> views;
    json eval;
};

std::string now_iso8601() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%FT%TZ", std::gmtime(&t));
    return buf;
}

struct RunContext {
    const PipelineConfig& cfg;
    DiskCache cache;
    ProviderSet* prov;
    MetricProviders* metric;
    providers::InflightLimiter* limiter;
    reason::PromptTemplate tpl;
    std::vector<render::ViewSpec> views;
    std::string vshash;
    std::string decode_cfg_hash, reason_cfg_hash, t2i_cfg_hash, to3d_cfg_hash, eval_cfg_hash;
    std::mutex records_mu;
    std::vector<StageRecord> records;

    void record(const std::string& stage, const std::string& input_hash, const std::string& cfg_hash,
                const std::string& artifact, const std::string& provider_id, const std::string& status) {
        std::lock_guard lock(records_mu);
        records.push_back({stage, input_hash, cfg_hash, artifact, provider_id, now_iso8601(), status});
    }
};

// content_tag is a hash of the evaluated artifacts, so identical inputs get
// identical negative draws and the evaluate cache stays coherent.
json eval_one_target(const Image& reference, const std::vector<render::RenderedView>& views,
                     const RunContext& ctx, const std::string& content_tag, const std::string& target) {
    json out;
    auto& mp = *ctx.metric;
    int num_classes = mp.classifier->num_classes();

    metrics::ProbVector gt_probs = mp.classifier->class_probs(reference);
    std::vector<metrics::ProbVector> view_probs;
    for (const auto& v : views) view_probs.push_back(mp.classifier->class_probs(v.image));

    std::map<std::string, std::vector<double>> nway_per_view;
    for (const auto& [n, k] : ctx.cfg.nway_settings) {
        metrics::NwayConfig nc;
        nc.n = n;
        nc.k = k;
        nc.trials = ctx.cfg.nway_trials;
        nc.num_classes = num_classes;
        nc.seed = sha256_seed("nway:" + std::to_string(ctx.cfg.nway_seed) + ":" + content_tag + ":" +
                              target + ":" + std::to_string(n) + ":" + std::to_string(k));
        metrics::NwayResult res = metrics::nway_topk(gt_probs, view_probs, nc);
        nway_per_view[std::to_string(n) + "way-top" + std::to_string(k)] = res.per_view;
    }

    for (size_t i = 0; i < views.size(); ++i) {
        json row;
        row["clipscore"] = metrics::clip_score(reference, views[i].image, *mp.embedder);
        row["lpips"] = metrics::lpips_distance(reference, views[i].image, *mp.features);
        for (const auto& [metric, per_view] : nway_per_view) row[metric] = per_view[i];
        out[views[i].view.label] = row;
    }
    return out;
}

void process_trial(TrialWork& work, const data::Manifest& manifest, RunContext& ctx) {
    const auto& cfg = ctx.cfg;
    const auto& entry = work.entry;
    auto stage_guard = [&](const char* stage, auto&& fn) {
        try {
            return fn();
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(stage, e.what());
        }
    };

    data::EegTrial trial = stage_guard("dataset", [&] {
        data::EegTrial t = data::read_eeg(manifest.resolve(entry.eeg_path));
        t.trial_id = entry.trial_id;
        t.subject_id = entry.subject_id;
        t.class_label = entry.class_label;
        t.split = entry.split;
        return t;
    });
    work.gt = stage_guard("dataset", [&] {
        Image img = read_ppm(manifest.resolve(entry.image_path));
        img.class_label = entry.class_label;
        return img;
    });
    std::string h_trial = sha256_hex(data::eeg_bytes(trial));
    std::string h_gt = sha256_hex(ppm_bytes(work.gt));

    // decode
    std::string decode_key = cache_key("decode", {h_trial}, ctx.decode_cfg_hash, cfg.seed, cfg.mode);
    stage_guard("decode", [&] {
        if (auto hit = ctx.cache.get("decode", decode_key)) {
            work.decoded = parse_ppm(std::vector<uint8_t>(hit->begin(), hit->end()), "cache:decode");
            ctx.record("decode", h_trial, ctx.decode_cfg_hash, decode_key, ctx.prov->decode->id(), "cached");
        } else {
            providers::InflightLimiter::Guard g(*ctx.limiter);
            work.decoded = ctx.prov->decode->decode(trial);
            ctx.cache.put("decode", decode_key, ppm_bytes(work.decoded));
            ctx.record("decode", h_trial, ctx.decode_cfg_hash, decode_key, ctx.prov->decode->id(),
                       "computed");
        }
        work.decoded.image_id = "decoded_" + entry.trial_id;
        work.decoded.class_label = entry.class_label;
        return 0;
    });
    std::string h_dec = sha256_hex(ppm_bytes(work.decoded));

    const Image* mesh_input = &work.decoded;
    if (cfg.mode == "full") {
        // reason
        std::string reason_key = cache_key("reason", {h_dec}, ctx.reason_cfg_hash, cfg.seed, cfg.mode);
        stage_guard("reason", [&] {
            if (auto hit = ctx.cache.get("reason", reason_key)) {
                json cached = json::parse(*hit);
                reason::SemanticDescription d;
                d.text = cached.at("text").get<std::string>();
                d.provider_id = cached.at("provider_id").get<std::string>();
                d.attempt = cached.at("attempt").get<int>();
                d.source_image_id = work.decoded.image_id;
                work.desc = d;
                ctx.record("reason", h_dec, ctx.reason_cfg_hash, reason_key, d.provider_id, "cached");
            } else {
                reason::RetryPolicy policy;
                policy.max_retries = cfg.reason_max_retries;
                policy.transport_backoff_s = cfg.reason_backoff_s;
                providers::InflightLimiter::Guard g(*ctx.limiter);
                work.desc = reason::reason(work.decoded, ctx.tpl, *ctx.prov->reasoner, policy);
                json blob;
                blob["text"] = work.desc->text;
                blob["provider_id"] = work.desc->provider_id;
                blob["attempt"] = work.desc->attempt;
                ctx.cache.put("reason", reason_key, blob.dump());
                ctx.record("reason", h_dec, ctx.reason_cfg_hash, reason_key, work.desc->provider_id,
                           "computed");
            }
            return 0;
        });

        // t2i
        std::string h_desc = sha256_hex(work.desc->text);
        std::string t2i_key = cache_key("t2i", {h_desc}, ctx.t2i_cfg_hash, cfg.seed, cfg.mode);
        stage_guard("t2i", [&] {
            if (auto hit = ctx.cache.get("t2i", t2i_key)) {
                work.refined = parse_ppm(std::vector<uint8_t>(hit->begin(), hit->end()), "cache:t2i");
                ctx.record("t2i", h_desc, ctx.t2i_cfg_hash, t2i_key, ctx.prov->t2i->id(), "cached");
            } else {
                providers::InflightLimiter::Guard g(*ctx.limiter);
                geom::GeneratedImage gen = geom::text_to_image(*work.desc, cfg.gen, *ctx.prov->t2i);
                work.refined = gen.image;
                ctx.cache.put("t2i", t2i_key, ppm_bytes(*work.refined));
                ctx.record("t2i", h_desc, ctx.t2i_cfg_hash, t2i_key, ctx.prov->t2i->id(), "computed");
            }
            work.refined->image_id = "refined_" + entry.trial_id;
            return 0;
        });
        mesh_input = &*work.refined;
    }

    // to3d
    std::string h_mesh_input = sha256_hex(ppm_bytes(*mesh_input));
    std::string to3d_key = cache_key("to3d", {h_mesh_input}, ctx.to3d_cfg_hash, cfg.seed, cfg.mode);
    stage_guard("to3d", [&] {
        std::string obj;
        if (auto hit = ctx.cache.get("to3d", to3d_key)) {
            obj = *hit;
            ctx.record("to3d", h_mesh_input, ctx.to3d_cfg_hash, to3d_key, ctx.prov->to3d->id(), "cached");
            work.mesh = geom::parse_obj(obj, "cache:to3d");
        } else {
            providers::InflightLimiter::Guard g(*ctx.limiter);
            geom::GeneratedMesh gen = cfg.mode == "full"
                                          ? geom::image_to_mesh(*mesh_input, cfg.gen, *ctx.prov->to3d)
                                          : geom::ablation_bypass(*mesh_input, cfg.gen, *ctx.prov->to3d);
            work.mesh = gen.mesh;
            ctx.cache.put("to3d", to3d_key, geom::obj_text(work.mesh));
            ctx.record("to3d", h_mesh_input, ctx.to3d_cfg_hash, to3d_key, ctx.prov->to3d->id(), "computed");
        }
        return 0;
    });
    std::string h_mesh = sha256_hex(geom::obj_text(work.mesh));

    // render (normalized mesh, six canonical views)
    std::string render_key = cache_key("render", {h_mesh, ctx.vshash}, ctx.vshash, cfg.seed, cfg.mode);
    stage_guard("render", [&] {
        geom::TriMesh normalized = geom::normalize_to_unit_sphere(work.mesh);
        if (auto hit = ctx.cache.get("render", render_key)) {
            json cached = json::parse(*hit);
            for (size_t i = 0; i < ctx.views.size(); ++i) {
                const auto& label = ctx.views[i].label;
                auto bytes = base64_decode(cached.at(label).get<std::string>());
                render::RenderedView rv;
                rv.image = parse_ppm(bytes, "cache:render");
                rv.image.image_id = entry.trial_id + "_" + label;
                rv.view = ctx.views[i];
                rv.object_id = entry.trial_id;
                work.views.push_back(std::move(rv));
            }
            ctx.record("render", h_mesh, ctx.vshash, render_key, "renderer", "cached");
        } else {
            work.views = render::render_all(normalized, ctx.views, entry.trial_id);
            json blob;
            for (const auto& rv : work.views) blob[rv.view.label] = base64_encode(ppm_bytes(rv.image));
            ctx.cache.put("render", render_key, blob.dump());
            ctx.record("render", h_mesh, ctx.vshash, render_key, "renderer", "computed");
        }
        return 0;
    });

    // evaluate, against ground truth and against the decoded image
    std::string eval_key =
        cache_key("evaluate", {h_mesh, h_gt, h_dec, ctx.vshash}, ctx.eval_cfg_hash, cfg.seed, cfg.mode);
    stage_guard("evaluate", [&] {
        if (auto hit = ctx.cache.get("evaluate", eval_key)) {
            work.eval = json::parse(*hit);
            ctx.record("evaluate", h_mesh, ctx.eval_cfg_hash, eval_key, "metrics", "cached");
        } else {
            work.eval["vs_gt"] = eval_one_target(work.gt, work.views, ctx, h_mesh + h_gt, "gt");
            work.eval["vs_intermediate"] =
                eval_one_target(work.decoded, work.views, ctx, h_mesh + h_dec, "dec");
            ctx.cache.put("evaluate", eval_key, work.eval.dump());
            ctx.record("evaluate", h_mesh, ctx.eval_cfg_hash, eval_key, "metrics", "computed");
        }
        return 0;
    });

    // artifact tree
    stage_guard("artifacts", [&] {
        fs::path dir = fs::path(cfg.out_dir) / "trials" / entry.trial_id;
        write_ppm(work.decoded, dir / "decoded.ppm");
        if (work.desc) write_file_atomic(dir / "description.txt", work.desc->text + "\n");
        if (work.refined) write_ppm(*work.refined, dir / "refined.ppm");
        geom::write_obj(work.mesh, dir / "mesh.obj");
        for (const auto& rv : work.views) write_ppm(rv.image, dir / "views" / (rv.view.label + ".ppm"));
        json m;
        m["trial_id"] = entry.trial_id;
        m["mode"] = cfg.mode;
        m["class_label"] = entry.class_label;
        m["provenance"] = {{"decode", decode_key}, {"to3d", to3d_key}, {"render", render_key},
                           {"evaluate", eval_key}};
        m["metrics"] = work.eval;
        write_file_atomic(dir / "metrics.json", m.dump(2) + "\n");
        return 0;
    });

    work.ok = true;
}

std::vector<Image> class_images_from_manifest(const data::Manifest& manifest) {
    std::map<int, Image> by_class;
    for (const auto& e : manifest.entries) {
        if (by_class.count(e.class_label)) continue;
        Image img = read_ppm(manifest.resolve(e.image_path));
        img.class_label = e.class_label;
        by_class[e.class_label] = std::move(img);
    }
    if (by_class.empty()) throw ValidationError("manifest has no entries");
    int max_label = by_class.rbegin()->first;
    std::vector<Image> out;
    for (int c = 0; c <= max_label; ++c) {
        auto it = by_class.find(c);
        if (it == by_class.end())
            throw ValidationError("manifest is missing class " + std::to_string(c) +
                                  " (class labels must be dense for the template classifier)");
        out.push_back(it->second);
    }
    return out;
}

double column_value(const metrics::MetricReport& rep, const std::string& column) {
    auto sl = rep.set_level.find(column);
    if (sl != rep.set_level.end()) return sl->second.first;
    auto g = rep.global.find(column);
    if (g == rep.global.end()) throw ValidationError("report is missing metric column '" + column + "'");
    return g->second.first;
}
}  // namespace

RunResult run_pipeline(const PipelineConfig& cfg, const std::vector<std::string>& trial_ids) {
    cfg.validate();
    if (cfg.manifest_path.empty()) throw ValidationError("config has no dataset.manifest");
    data::Manifest manifest = data::load_manifest(cfg.manifest_path);

    std::vector<data::ManifestEntry> selected;
    if (trial_ids.empty()) {
        selected = manifest.entries;
    } else {
        std::map<std::string, const data::ManifestEntry*> by_id;
        for (const auto& e : manifest.entries) by_id[e.trial_id] = &e;
        for (const auto& id : trial_ids) {
            auto it = by_id.find(id);
            if (it == by_id.end()) throw ValidationError("unknown trial id '" + id + "'");
            selected.push_back(*it->second);
        }
    }
    if (selected.size() < 2)
        throw ValidationError("need at least 2 trials for set-level metrics, got " +
                              std::to_string(selected.size()));

    std::vector<Image> class_images = class_images_from_manifest(manifest);
    int num_classes = int(class_images.size());
    for (const auto& [n, k] : cfg.nway_settings)
        if (n > num_classes)
            throw ValidationError("n-way setting n=" + std::to_string(n) + " exceeds the " +
                                  std::to_string(num_classes) + " dataset classes");

    ProviderSet prov = build_providers(cfg, class_images);
    MetricProviders metric = build_metric_providers(cfg, class_images);
    providers::InflightLimiter limiter(cfg.inflight_limit);

    RunContext ctx{cfg,
                   DiskCache(cfg.cache_dir),
                   &prov,
                   &metric,
                   &limiter,
                   cfg.template_path.empty() ? reason::PromptTemplate::default_v1()
                                             : reason::load_template(cfg.template_path),
                   render::canonical_views(cfg.views),
                   "",
                   "", "", "", "", "",
                   {},
                   {}};
    ctx.vshash = render::view_set_hash(ctx.views);
    ctx.decode_cfg_hash = sha256_hex("decode|" + cfg.decode.kind + "|" + prov.decode->id() + "|" +
                                     cfg.align_checkpoint + "|" + cfg.diff_checkpoint);
    ctx.reason_cfg_hash = sha256_hex("reason|" + cfg.reasoner.kind + "|" + prov.reasoner->id() + "|" +
                                     reason::template_hash(ctx.tpl) + "|" +
                                     std::to_string(cfg.reason_max_retries));
    ctx.t2i_cfg_hash = sha256_hex("t2i|" + cfg.t2i.kind + "|" + prov.t2i->id() + "|" +
                                  geom::gen_config_hash(cfg.gen));
    ctx.to3d_cfg_hash = sha256_hex("to3d|" + cfg.to3d.kind + "|" + prov.to3d->id() + "|" +
                                   geom::gen_config_hash(cfg.gen));
    {
        json e;
        e["metrics"] = {{"embedder", metric.embedder->id()},
                        {"features", metric.features->id()},
                        {"classifier", metric.classifier->id()}};
        e["nway"] = {{"settings", cfg.nway_settings}, {"trials", cfg.nway_trials}, {"seed", cfg.nway_seed}};
        ctx.eval_cfg_hash = sha256_hex(e.dump());
    }

    std::vector<TrialWork> works(selected.size());
    for (size_t i = 0; i < selected.size(); ++i) works[i].entry = selected[i];

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= works.size()) return;
            try {
                process_trial(works[i], manifest, ctx);
            } catch (const StageError& e) {
                works[i].failure = {works[i].entry.trial_id, e.stage(), e.what()};
            } catch (const std::exception& e) {
                works[i].failure = {works[i].entry.trial_id, "pipeline", e.what()};
            }
        }
    };
    int nthreads = std::min<int>(cfg.worker_limit, int(works.size()));
    std::vector<std::thread> pool;
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    RunResult result;
    result.trials_attempted = int(works.size());
    for (const auto& w : works) {
        if (w.ok)
            ++result.trials_succeeded;
        else
            result.failures.push_back(w.failure);
    }

    fs::path out_dir(cfg.out_dir);
    fs::create_directories(out_dir);

    // failures listing, stable order
    {
        std::string ftext;
        for (const auto& f : result.failures)
            ftext += f.trial_id + "\t" + f.stage + "\t" + f.message + "\n";
        write_file_atomic(out_dir / "failures.txt", ftext);
    }

    json settings;
    settings["backbone"] = cfg.backbone_label;
    settings["mode"] = cfg.mode;
    settings["providers"] = {{"decode", prov.decode->id()},
                             {"reason", prov.reasoner->id()},
                             {"t2i", prov.t2i->id()},
                             {"to3d", prov.to3d->id()}};
    settings["metric_providers"] = {{"embedder", metric.embedder->id()},
                                    {"features", metric.features->id()},
                                    {"classifier", metric.classifier->id()}};
    settings["nway"] = {{"settings", cfg.nway_settings},
                        {"trials", cfg.nway_trials},
                        {"seed", cfg.nway_seed},
                        {"tie_break", "ascending class index"},
                        {"negatives", "uniform without replacement per trial and view"}};
    settings["view_set_hash"] = ctx.vshash;
    settings["fid_pooling"] = "all rendered views vs all reference images";
    settings["std"] = "population";
    settings["trials_attempted"] = result.trials_attempted;
    settings["trials_succeeded"] = result.trials_succeeded;
    {
        json jf = json::array();
        for (const auto& f : result.failures)
            jf.push_back({{"trial_id", f.trial_id}, {"stage", f.stage}, {"message", f.message}});
        settings["failures"] = jf;
    }

    if (result.trials_succeeded >= 2) {
        std::map<metrics::ViewKey, metrics::MetricValues> pv_gt, pv_dec;
        std::vector<Image> all_views, all_gt, all_dec;
        for (const auto& w : works) {
            if (!w.ok) continue;
            for (const auto& rv : w.views) {
                metrics::ViewKey key{w.entry.trial_id, rv.view.label};
                for (const std::string target : {"vs_gt", "vs_intermediate"}) {
                    metrics::MetricValues values;
                    for (const auto& [metric_name, value] : w.eval[target][rv.view.label].items())
                        values[metric_name] = value.get<double>();
                    (target == std::string("vs_gt") ? pv_gt : pv_dec)[key] = std::move(values);
                }
                all_views.push_back(rv.image);
            }
            all_gt.push_back(w.gt);
            all_dec.push_back(w.decoded);
        }

        result.vs_gt = metrics::aggregate(pv_gt);
        result.vs_intermediate = metrics::aggregate(pv_dec);

        int splits = std::min<int>(cfg.metrics_cfg.is_splits, int(all_views.size()));
        auto is = metrics::inception_score(all_views, *metric.classifier, splits);
        settings["is_splits_used"] = splits;

        auto embed_all = [&](const std::vector<Image>& images) {
            std::vector<Eigen::VectorXd> out;
            for (const auto& img : images) out.push_back(metric.embedder->embed(img));
            return out;
        };
        auto view_features = embed_all(all_views);
        metrics::FidStats fid_gt_stats, fid_dec_stats;
        double fid_gt = metrics::fid(view_features, embed_all(all_gt), &fid_gt_stats);
        double fid_dec = metrics::fid(view_features, embed_all(all_dec), &fid_dec_stats);
        settings["fid_regularized"] = {{"vs_gt", fid_gt_stats.regularized},
                                       {"vs_intermediate", fid_dec_stats.regularized}};

        for (auto* rep : {&result.vs_gt, &result.vs_intermediate}) {
            rep->set_level["is"] = is;
            rep->settings = settings;
        }
        result.vs_gt.set_level["fid"] = {fid_gt, 0.0};
        result.vs_intermediate.set_level["fid"] = {fid_dec, 0.0};

        auto columns = report::standard_columns(cfg.nway_settings);
        report::ReportDoc gt_doc;
        gt_doc.layout = report::Layout::gt_table;
        gt_doc.columns = columns;
        report::TableRow gt_row{cfg.backbone_label, {}};
        report::TableRow int_row{cfg.backbone_label, {}};
        for (const auto& col : columns) {
            gt_row.values.push_back(column_value(result.vs_gt, col));
            int_row.values.push_back(column_value(result.vs_intermediate, col));
        }
        gt_doc.rows = {gt_row};
        result.report_gt_text = report::render_report(gt_doc);

        report::ReportDoc int_doc;
        int_doc.layout = report::Layout::intermediate_table;
        int_doc.columns = columns;
        int_doc.rows = {int_row};
        int_doc.baseline_rows = {gt_row};
        result.report_intermediate_text = report::render_report(int_doc);

        write_file_atomic(out_dir / "report_gt.txt", result.report_gt_text);
        write_file_atomic(out_dir / "report_intermediate.txt", result.report_intermediate_text);
        write_file_atomic(out_dir / "metrics_gt.json",
                          metrics::report_json(result.vs_gt).dump(2) + "\n");
        write_file_atomic(out_dir / "metrics_intermediate.json",
                          metrics::report_json(result.vs_intermediate).dump(2) + "\n");
        json rd;
        rd["columns"] = columns;
        rd["label"] = cfg.backbone_label;
        rd["gt"] = gt_row.values;
        rd["intermediate"] = int_row.values;
        write_file_atomic(out_dir / "report_data.json", rd.dump(2) + "\n");
    } else {
        std::string note = "# insufficient successful trials for table rendering\n";
        result.report_gt_text = note;
        result.report_intermediate_text = note;
        write_file_atomic(out_dir / "report_gt.txt", note);
        write_file_atomic(out_dir / "report_intermediate.txt", note);
    }

    // stage records, outside the artifact tree
    {
        std::string lines;
        for (const auto& r : ctx.records) {
            json rec;
            rec["stage"] = r.stage;
            rec["input_hash"] = r.input_hash;
            rec["config_hash"] = r.config_hash;
            rec["artifact_path"] = r.artifact_path;
            rec["provider_id"] = r.provider_id;
            rec["timestamp"] = r.timestamp;
            rec["status"] = r.status;
            lines += rec.dump() + "\n";
        }
        fs::create_directories(cfg.cache_dir);
        std::ofstream log(fs::path(cfg.cache_dir) / "records.jsonl", std::ios::app);
        log << lines;
    }

    result.provider_calls = prov.call_counts();
    return result;
}

AblationResult run_ablation(const PipelineConfig& cfg, const std::vector<std::string>& trial_ids) {
    AblationResult res;
    PipelineConfig full_cfg = cfg;
    full_cfg.mode = "full";
    full_cfg.out_dir = (fs::path(cfg.out_dir) / "full").string();
    PipelineConfig direct_cfg = cfg;
    direct_cfg.mode = "direct";
    direct_cfg.out_dir = (fs::path(cfg.out_dir) / "direct").string();

    res.full = run_pipeline(full_cfg, trial_ids);
    res.direct = run_pipeline(direct_cfg, trial_ids);
    if (res.full.trials_succeeded < 2 || res.direct.trials_succeeded < 2)
        throw Error("ablation table needs at least 2 successful trials in both modes");

    auto columns = report::standard_columns(cfg.nway_settings);
    report::ReportDoc doc;
    doc.layout = report::Layout::ablation_table;
    doc.columns = columns;
    report::TableRow full_row{cfg.backbone_label, {}}, direct_row{cfg.backbone_label, {}};
    for (const auto& col : columns) {
        full_row.values.push_back(column_value(res.full.vs_gt, col));
        direct_row.values.push_back(column_value(res.direct.vs_gt, col));
    }
    doc.rows = {full_row};
    doc.baseline_rows = {direct_row};
    res.report_ablation_text = report::render_report(doc);

    fs::create_directories(cfg.out_dir);
    write_file_atomic(fs::path(cfg.out_dir) / "report_ablation.txt", res.report_ablation_text);
    json rd;
    rd["columns"] = columns;
    rd["label"] = cfg.backbone_label;
    rd["full_gt"] = full_row.values;
    rd["direct_gt"] = direct_row.values;
    write_file_atomic(fs::path(cfg.out_dir) / "report_data.json", rd.dump(2) + "\n");
    return res;
}

std::string report_from_run_dir(const std::filesystem::path& out_dir, report::Layout layout) {
    fs::path data = out_dir / "report_data.json";
    if (!fs::exists(data)) throw IoError("no report_data.json under " + out_dir.string());
    json j = json::parse(read_text_file(data));
    auto columns = j.at("columns").get<std::vector<std::string>>();
    std::string label = j.at("label").get<std::string>();

    report::ReportDoc doc;
    doc.layout = layout;
    doc.columns = columns;
    switch (layout) {
        case report::Layout::gt_table:
            doc.rows = {{label, j.at("gt").get<std::vector<double>>()}};
            break;
        case report::Layout::intermediate_table:
            doc.rows = {{label, j.at("intermediate").get<std::vector<double>>()}};
            doc.baseline_rows = {{label, j.at("gt").get<std::vector<double>>()}};
            break;
        case report::Layout::ablation_table:
            doc.rows = {{label, j.at("full_gt").get<std::vector<double>>()}};
            doc.baseline_rows = {{label, j.at("direct_gt").get<std::vector<double>>()}};
            break;
    }
    return report::render_report(doc);
}

}  // namespace brain3d::pipe

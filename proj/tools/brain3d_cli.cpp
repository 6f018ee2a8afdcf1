// brain3d command line front end: dataset tooling, training, pipeline runs,
// rendering and report generation.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "brain3d/pipeline.hpp"

namespace fs = std::filesystem;
using namespace brain3d;

namespace {
struct GlobalOpts {
    std::string config_path;
    std::string cache_dir;
    std::string mode;
    int workers = -1;
    long long seed = -1;
};

pipe::PipelineConfig effective_config(const GlobalOpts& g) {
    pipe::PipelineConfig cfg = g.config_path.empty() ? pipe::default_config()
                                                     : pipe::load_config(g.config_path);
    if (!g.cache_dir.empty()) cfg.cache_dir = g.cache_dir;
    if (!g.mode.empty()) cfg.mode = g.mode;
    if (g.workers > 0) cfg.worker_limit = g.workers;
    if (g.seed >= 0) cfg.seed = uint64_t(g.seed);
    pipe::apply_env_overrides(cfg);
    return cfg;
}

std::vector<std::string> split_ids(const std::string& csv) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos < csv.size()) {
        size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        if (comma > pos) out.push_back(csv.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return out;
}

int finish_run(const pipe::RunResult& result) {
    std::printf("trials: %d attempted, %d succeeded, %zu failed\n", result.trials_attempted,
                result.trials_succeeded, result.failures.size());
    for (const auto& f : result.failures)
        std::printf("  FAILED %s at stage %s: %s\n", f.trial_id.c_str(), f.stage.c_str(),
                    f.message.c_str());
    if (!result.report_gt_text.empty()) std::fputs(result.report_gt_text.c_str(), stdout);
    return result.failures.empty() ? 0 : 2;
}
}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Brain3D pipeline orchestrator and evaluation harness"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    GlobalOpts g;
    app.add_option("--config", g.config_path, "pipeline config file (JSON)");
    app.add_option("--cache-dir", g.cache_dir, "override cache directory");
    app.add_option("--workers", g.workers, "override worker limit");
    app.add_option("--mode", g.mode, "override pipeline mode (full|direct)");
    app.add_option("--seed", g.seed, "override orchestrator seed");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "validate a dataset manifest, optionally re-split");
    std::string ingest_manifest, ingest_out, stratify = "class";
    bool resplit = false;
    long long split_seed = 0;
    ingest->add_option("--manifest", ingest_manifest, "manifest path")->required();
    ingest->add_option("--out", ingest_out, "write the (re-split) manifest here");
    ingest->add_flag("--resplit", resplit, "reassign 80/10/10 split tags");
    ingest->add_option("--split-seed", split_seed, "split seed");
    ingest->add_option("--stratify", stratify, "stratify by 'class' or 'subject'");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic desk-scale dataset");
    std::string synth_out = "synth-data";
    int s_classes = 8, s_trials = 20, s_channels = 8, s_samples = 32;
    double s_sigma = 0.1;
    long long s_seed = 0;
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--classes", s_classes, "number of classes");
    synth->add_option("--trials-per-class", s_trials, "trials per class");
    synth->add_option("--channels", s_channels, "EEG channels");
    synth->add_option("--samples", s_samples, "EEG samples per trial");
    synth->add_option("--sigma", s_sigma, "per-trial Gaussian noise sigma");
    synth->add_option("--synth-seed", s_seed, "dataset seed");

    // train-align
    auto* train = app.add_subcommand("train-align", "train the EEG/image alignment encoders");
    std::string train_manifest, train_out = "align.ckpt", loss_curve;
    train->add_option("--manifest", train_manifest, "manifest path")->required();
    train->add_option("--out", train_out, "checkpoint output path");
    train->add_option("--loss-curve", loss_curve, "write epoch/loss pairs here");

    // run / ablate
    auto* run = app.add_subcommand("run", "run the pipeline end to end");
    std::string run_trials;
    run->add_option("--trials", run_trials, "comma-separated trial ids (default: all)");
    auto* ablate = app.add_subcommand("ablate", "run full and direct modes, emit the ablation table");
    std::string ablate_trials;
    ablate->add_option("--trials", ablate_trials, "comma-separated trial ids (default: all)");

    // render-views
    auto* rviews = app.add_subcommand("render-views", "render the six canonical views of a mesh");
    std::string mesh_path, views_out = "views";
    rviews->add_option("--mesh", mesh_path, "OBJ mesh path")->required();
    rviews->add_option("--out", views_out, "output directory");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "evaluate rendered views against a reference image");
    std::string eval_reference, eval_views_dir, eval_templates;
    eval->add_option("--reference", eval_reference, "reference image (PPM)")->required();
    eval->add_option("--views-dir", eval_views_dir, "directory with <label>.ppm views")->required();
    eval->add_option("--templates", eval_templates, "directory of class template images for n-way");

    // report
    auto* rep = app.add_subcommand("report", "re-render a table from a run directory");
    std::string report_dir, report_layout = "gt_table";
    rep->add_option("--run-dir", report_dir, "run output directory")->required();
    rep->add_option("--layout", report_layout, "gt_table | intermediate_table | ablation_table");

    // export-cameras
    auto* excam = app.add_subcommand("export-cameras", "write the camera configuration file");
    std::string cam_out = "cameras.txt";
    excam->add_option("--out", cam_out, "output path");

    // default-config
    auto* defcfg = app.add_subcommand("default-config", "write the default config with every default");
    std::string cfg_out = "brain3d.json";
    defcfg->add_option("--out", cfg_out, "output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            data::Manifest m = data::load_manifest(ingest_manifest);
            if (resplit) {
                auto strat = stratify == "subject" ? data::Stratify::by_subject : data::Stratify::by_class;
                m = data::make_splits(m, data::SplitRatios{}, uint64_t(split_seed), strat);
            }
            std::map<data::Split, int> counts;
            for (const auto& e : m.entries) ++counts[e.split];
            std::printf("entries: %zu, classes: %zu, train/val/test: %d/%d/%d\n", m.entries.size(),
                        m.class_names.size(), counts[data::Split::train], counts[data::Split::val],
                        counts[data::Split::test]);
            if (!ingest_out.empty()) data::save_manifest(m, ingest_out);
            return 0;
        }
        if (*synth) {
            data::SynthSpec spec;
            spec.num_classes = s_classes;
            spec.trials_per_class = s_trials;
            spec.channels = s_channels;
            spec.samples = s_samples;
            spec.noise_sigma = s_sigma;
            spec.seed = uint64_t(s_seed);
            auto ds = data::synth_dataset(spec);
            fs::path manifest = data::write_synth_dataset(ds, synth_out);
            std::printf("wrote %zu trials, %d classes to %s\n", ds.trials.size(), s_classes,
                        manifest.string().c_str());
            return 0;
        }
        if (*train) {
            pipe::PipelineConfig cfg = effective_config(g);
            data::Manifest m = data::load_manifest(train_manifest);
            align::TrainResult result = align::train_alignment(m, cfg.align_cfg);
            align::save_checkpoint(result.params, train_out);
            if (!loss_curve.empty()) align::write_loss_curve(result.epoch_losses, loss_curve);
            std::printf("epochs: %zu, loss %.6f -> %.6f, checkpoint %s\n",
                        result.epoch_losses.size() - 1, result.epoch_losses.front(),
                        result.epoch_losses.back(), train_out.c_str());
            return 0;
        }
        if (*run) {
            pipe::PipelineConfig cfg = effective_config(g);
            return finish_run(pipe::run_pipeline(cfg, split_ids(run_trials)));
        }
        if (*ablate) {
            pipe::PipelineConfig cfg = effective_config(g);
            pipe::AblationResult res = pipe::run_ablation(cfg, split_ids(ablate_trials));
            std::fputs(res.report_ablation_text.c_str(), stdout);
            bool failed = !res.full.failures.empty() || !res.direct.failures.empty();
            return failed ? 2 : 0;
        }
        if (*rviews) {
            pipe::PipelineConfig cfg = effective_config(g);
            geom::TriMesh mesh = geom::normalize_to_unit_sphere(geom::load_obj(mesh_path));
            auto views = render::canonical_views(cfg.views);
            for (const auto& rv : render::render_all(mesh, views, fs::path(mesh_path).stem().string()))
                write_ppm(rv.image, fs::path(views_out) / (rv.view.label + ".ppm"));
            std::printf("wrote %zu views to %s\n", views.size(), views_out.c_str());
            return 0;
        }
        if (*eval) {
            pipe::PipelineConfig cfg = effective_config(g);
            Image reference = read_ppm(eval_reference);
            auto views = render::canonical_views(cfg.views);
            metrics::HistogramEmbedder embedder(cfg.metrics_cfg.histogram_bins);
            metrics::GradientFeatureProvider features(cfg.metrics_cfg.gradient_levels);
            for (const auto& v : views) {
                Image img = read_ppm(fs::path(eval_views_dir) / (v.label + ".ppm"));
                std::printf("%s clipscore %.3f lpips %.3f\n", v.label.c_str(),
                            metrics::clip_score(reference, img, embedder),
                            metrics::lpips_distance(reference, img, features));
            }
            if (!eval_templates.empty()) {
                std::vector<Image> templates;
                std::vector<fs::path> files;
                for (const auto& e : fs::directory_iterator(eval_templates))
                    if (e.path().extension() == ".ppm") files.push_back(e.path());
                std::sort(files.begin(), files.end());
                for (const auto& f : files) templates.push_back(read_ppm(f));
                metrics::TemplateClassifier classifier(templates, cfg.metrics_cfg.classifier_tau);
                metrics::ProbVector gt_probs = classifier.class_probs(reference);
                std::vector<metrics::ProbVector> view_probs;
                for (const auto& v : views)
                    view_probs.push_back(
                        classifier.class_probs(read_ppm(fs::path(eval_views_dir) / (v.label + ".ppm"))));
                for (const auto& [n, k] : cfg.nway_settings) {
                    if (n > int(templates.size())) continue;
                    metrics::NwayConfig nc{n, k, cfg.nway_trials, cfg.nway_seed, int(templates.size())};
                    auto res = metrics::nway_topk(gt_probs, view_probs, nc);
                    std::printf("%d-way top-%d %.3f (std %.3f)\n", n, k, res.mean, res.stddev);
                }
            }
            return 0;
        }
        if (*rep) {
            std::fputs(
                pipe::report_from_run_dir(report_dir, report::layout_from_name(report_layout)).c_str(),
                stdout);
            return 0;
        }
        if (*excam) {
            pipe::PipelineConfig cfg = effective_config(g);
            render::export_camera_config(render::canonical_views(cfg.views), cam_out);
            std::printf("wrote %s\n", cam_out.c_str());
            return 0;
        }
        if (*defcfg) {
            pipe::save_config(pipe::default_config(), cfg_out);
            std::printf("wrote %s\n", cfg_out.c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}

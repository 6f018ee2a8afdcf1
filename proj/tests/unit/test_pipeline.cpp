#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>
#include <thread>

#include "brain3d/pipeline.hpp"

#include "httplib.h"

using namespace brain3d;
using namespace brain3d::pipe;
namespace fs = std::filesystem;

namespace {
fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Synth dataset on disk plus a hermetic all-mock config.
PipelineConfig hermetic_config(const fs::path& root, int classes = 4, int per_class = 6) {
    data::SynthSpec spec;
    spec.num_classes = classes;
    spec.trials_per_class = per_class;
    spec.channels = 4;
    spec.samples = 8;
    spec.noise_sigma = 0.1;
    spec.seed = 3;
    spec.image_size = 32;
    data::SynthDataset ds = data::synth_dataset(spec);
    fs::path manifest = data::write_synth_dataset(ds, root / "data");

    PipelineConfig cfg;
    cfg.manifest_path = manifest.string();
    cfg.cache_dir = (root / "cache").string();
    cfg.out_dir = (root / "out").string();
    cfg.views.width = 64;
    cfg.views.height = 64;
    cfg.nway_settings = {{2, 1}, {4, 1}, {4, 2}};
    cfg.nway_trials = 8;
    cfg.worker_limit = 2;
    cfg.backbone_label = "mockbb";
    return cfg;
}

// one trial per class: every stage sees distinct content, so cold-run
// provider call counts are deterministic
std::vector<std::string> first_ids(const PipelineConfig& cfg, size_t n) {
    data::Manifest m = data::load_manifest(cfg.manifest_path);
    std::vector<std::string> ids;
    std::set<int> seen;
    for (const auto& e : m.entries) {
        if (ids.size() >= n) break;
        if (seen.insert(e.class_label).second) ids.push_back(e.trial_id);
    }
    for (const auto& e : m.entries) {
        if (ids.size() >= n) break;
        if (std::find(ids.begin(), ids.end(), e.trial_id) == ids.end()) ids.push_back(e.trial_id);
    }
    return ids;
}

std::string slurp(const fs::path& p) {
    return read_text_file(p);
}
}  // namespace

TEST_CASE("cache keys separate stages, modes, and seeds") {
    std::string h1 = sha256_hex(std::string("input-a"));
    std::string c1 = sha256_hex(std::string("config-a"));
    CHECK(cache_key("decode", {h1}, c1, 0, "full") == cache_key("decode", {h1}, c1, 0, "full"));
    CHECK(cache_key("decode", {h1}, c1, 0, "full") != cache_key("decode", {h1}, c1, 0, "direct"));
    CHECK(cache_key("decode", {h1}, c1, 0, "full") != cache_key("reason", {h1}, c1, 0, "full"));
    CHECK(cache_key("decode", {h1}, c1, 0, "full") != cache_key("decode", {h1}, c1, 1, "full"));

    // differing only in the t2i seed flows through the gen-config hash
    geom::GenStageConfig a, b;
    b.seed = 99;
    CHECK(cache_key("t2i", {h1}, geom::gen_config_hash(a), 0, "full") !=
          cache_key("t2i", {h1}, geom::gen_config_hash(b), 0, "full"));
}

TEST_CASE("config round trips through json and disk") {
    auto dir = fresh_dir("b3d_cfg");
    PipelineConfig cfg = default_config();
    cfg.manifest_path = "some/manifest.jsonl";
    cfg.nway_settings = {{2, 1}, {8, 2}};
    cfg.backbone_label = "GWIT";
    save_config(cfg, dir / "cfg.json");
    PipelineConfig back = load_config(dir / "cfg.json");
    CHECK(config_json(back) == config_json(cfg));
    fs::remove_all(dir);
}

TEST_CASE("default config materializes the documented defaults") {
    nlohmann::json j = config_json(default_config());
    CHECK(j["genstage"]["t2i_steps"] == 30);
    CHECK(j["genstage"]["t2i_guidance"] == 4.5);
    CHECK(j["genstage"]["texture_resolution"] == 1024);
    CHECK(j["align"]["temperature"] == 0.07);
    CHECK(j["diffusion"]["guidance_scale"] == 2.0);
    CHECK(j["diffusion"]["drop_prob"] == 0.1);
    CHECK(j["diffusion"]["timesteps"] == 50);
    CHECK(j["views"]["azimuth_step"] == 60.0);
    CHECK(j["views"]["elevation"] == 20.0);
    CHECK(j["views"]["distance"] == 2.5);
    CHECK(j["views"]["fov"] == 40.0);
    CHECK(j["views"]["width"] == 512);
    CHECK(j["nway"]["settings"] == nlohmann::json({{2, 1}, {10, 1}, {10, 2}, {50, 1}, {50, 2}}));
    CHECK(j["nway"]["trials"] == 20);
    CHECK(j["metrics"]["is_splits"] == 10);
    CHECK(j["reasoning"]["max_retries"] == 3);
    CHECK(j["reasoning"]["transport_backoff_s"] == nlohmann::json({1.0, 2.0, 4.0}));
    CHECK(j["providers"]["inflight_limit"] == 4);
    CHECK(j["orchestrator"]["mode"] == "full");
    CHECK(j["orchestrator"]["worker_limit"] == 4);
}

TEST_CASE("environment variables override endpoints only") {
    PipelineConfig cfg = default_config();
    cfg.reasoner.kind = "http";
    cfg.reasoner.endpoint = "old:1/reason";
    setenv("BRAIN3D_REASON_ENDPOINT", "new:2/reason", 1);
    apply_env_overrides(cfg);
    unsetenv("BRAIN3D_REASON_ENDPOINT");
    CHECK(cfg.reasoner.endpoint == "new:2/reason");
    CHECK(cfg.reasoner.kind == "http");
    CHECK(cfg.decode.endpoint.empty());
}

TEST_CASE("hermetic run: counts, artifacts, determinism, warm cache") {
    auto dir = fresh_dir("b3d_run");
    PipelineConfig cfg = hermetic_config(dir);
    auto ids = first_ids(cfg, 4);

    RunResult first = run_pipeline(cfg, ids);
    CHECK(first.failures.empty());
    CHECK(first.trials_succeeded == 4);
    CHECK(first.vs_gt.per_object.size() == 4);
    CHECK(first.vs_gt.per_view.size() == 24);
    CHECK(first.vs_intermediate.per_view.size() == 24);
    CHECK(first.provider_calls["decode"] == 4);
    CHECK(first.provider_calls["reason"] == 4);
    CHECK(first.provider_calls["t2i"] == 4);
    CHECK(first.provider_calls["to3d"] == 4);

    // artifact tree
    for (const auto& id : ids) {
        fs::path tdir = dir / "out" / "trials" / id;
        for (const char* f : {"decoded.ppm", "description.txt", "refined.ppm", "mesh.obj", "metrics.json"})
            CHECK(fs::exists(tdir / f));
        for (const char* v : {"front", "front-left", "left", "back", "right", "front-right"})
            CHECK(fs::exists(tdir / "views" / (std::string(v) + ".ppm")));
    }
    std::string report1 = slurp(dir / "out" / "report_gt.txt");
    std::string metrics1 = slurp(dir / "out" / "metrics_gt.json");
    std::string mesh1 = slurp(dir / "out" / "trials" / ids[0] / "mesh.obj");

    // warm rerun: identical bytes, zero provider calls
    PipelineConfig warm = cfg;
    warm.out_dir = (dir / "out2").string();
    RunResult second = run_pipeline(warm, ids);
    CHECK(second.provider_calls["decode"] == 0);
    CHECK(second.provider_calls["reason"] == 0);
    CHECK(second.provider_calls["t2i"] == 0);
    CHECK(second.provider_calls["to3d"] == 0);
    CHECK(slurp(dir / "out2" / "report_gt.txt") == report1);
    CHECK(slurp(dir / "out2" / "metrics_gt.json") == metrics1);
    CHECK(slurp(dir / "out2" / "trials" / ids[0] / "mesh.obj") == mesh1);
    CHECK(second.report_gt_text == first.report_gt_text);
    CHECK(second.report_intermediate_text == first.report_intermediate_text);

    // cold rerun into a fresh cache is bitwise identical too
    PipelineConfig cold = cfg;
    cold.cache_dir = (dir / "cache2").string();
    cold.out_dir = (dir / "out3").string();
    RunResult third = run_pipeline(cold, ids);
    CHECK(slurp(dir / "out3" / "report_gt.txt") == report1);
    CHECK(third.provider_calls["decode"] == 4);
    fs::remove_all(dir);
}

TEST_CASE("report rows carry the configured columns and parse back") {
    auto dir = fresh_dir("b3d_run_report");
    PipelineConfig cfg = hermetic_config(dir);
    auto ids = first_ids(cfg, 3);
    RunResult r = run_pipeline(cfg, ids);
    report::ReportDoc doc = report::parse_report(r.report_gt_text);
    CHECK(doc.columns == report::standard_columns(cfg.nway_settings));
    REQUIRE(doc.rows.size() == 1);
    CHECK(doc.rows[0].label == "mockbb");
    CHECK(doc.rows[0].values.size() == doc.columns.size());

    // re-rendered from the run dir
    CHECK(report_from_run_dir(dir / "out", report::Layout::gt_table) == r.report_gt_text);
    CHECK(report_from_run_dir(dir / "out", report::Layout::intermediate_table) ==
          r.report_intermediate_text);
    fs::remove_all(dir);
}

TEST_CASE("per-trial failures are quarantined and tagged with the stage") {
    auto dir = fresh_dir("b3d_fail");
    PipelineConfig cfg = hermetic_config(dir);
    auto ids = first_ids(cfg, 4);
    cfg.reasoner.kind = "fail-match";
    cfg.reasoner.match = ids[1];  // decoded image ids embed the trial id

    RunResult r = run_pipeline(cfg, ids);
    CHECK(r.trials_succeeded == 3);
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].trial_id == ids[1]);
    CHECK(r.failures[0].stage == "reason");
    CHECK(r.vs_gt.per_object.size() == 3);

    std::string failures = slurp(dir / "out" / "failures.txt");
    CHECK(failures.find(ids[1]) != std::string::npos);
    CHECK(failures.find("reason") != std::string::npos);
    CHECK(r.vs_gt.settings["failures"].size() == 1);
    CHECK(r.vs_gt.settings["trials_succeeded"] == 3);

    // failure isolation: the surviving trials score identically to a clean run
    auto dir2 = fresh_dir("b3d_fail_clean");
    PipelineConfig clean = hermetic_config(dir2);
    std::vector<std::string> surviving = {ids[0], ids[2], ids[3]};
    RunResult c = run_pipeline(clean, surviving);
    for (const auto& id : surviving) {
        for (const auto& [metric, value] : r.vs_gt.per_object.at(id))
            CHECK(c.vs_gt.per_object.at(id).at(metric) == doctest::Approx(value).epsilon(1e-12));
    }
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("orchestrated run equals manual stage composition") {
    auto dir = fresh_dir("b3d_eq6");
    PipelineConfig cfg = hermetic_config(dir);
    auto ids = first_ids(cfg, 2);
    run_pipeline(cfg, ids);

    data::Manifest manifest = data::load_manifest(cfg.manifest_path);
    std::vector<Image> class_images;
    for (int c = 0; c < 4; ++c) class_images.push_back(data::class_glyph_image(c, 4, 32));

    for (const auto& id : ids) {
        data::EegTrial trial;
        for (const auto& e : manifest.entries) {
            if (e.trial_id != id) continue;
            trial = data::read_eeg(manifest.resolve(e.eeg_path));
            trial.trial_id = e.trial_id;
            trial.class_label = e.class_label;
        }
        // fresh provider instances with the same deterministic behavior
        providers::MockEegDecode decode(class_images);
        providers::ProceduralReasoner reasoner;
        providers::MockTextToImage t2i;
        providers::MockImageToMesh to3d;

        Image decoded = decode.decode(trial);
        decoded.image_id = "decoded_" + id;
        reason::SemanticDescription desc =
            reason::reason(decoded, reason::PromptTemplate::default_v1(), reasoner);
        geom::GeneratedImage refined = geom::text_to_image(desc, cfg.gen, t2i);
        geom::GeneratedMesh mesh = geom::image_to_mesh(refined.image, cfg.gen, to3d);

        fs::path tdir = dir / "out" / "trials" / id;
        CHECK(slurp(tdir / "description.txt") == desc.text + "\n");
        CHECK(slurp(tdir / "decoded.ppm") == ppm_bytes(decoded));
        CHECK(slurp(tdir / "refined.ppm") == ppm_bytes(refined.image));
        CHECK(slurp(tdir / "mesh.obj") == geom::obj_text(mesh.mesh));

        // and the rendered views match a manual render of the same mesh
        auto views = render::canonical_views(cfg.views);
        auto rendered = render::render_all(geom::normalize_to_unit_sphere(mesh.mesh), views, id);
        for (const auto& rv : rendered)
            CHECK(slurp(tdir / "views" / (rv.view.label + ".ppm")) == ppm_bytes(rv.image));
    }
    fs::remove_all(dir);
}

TEST_CASE("ablation with a constant mesh provider yields all-zero deltas") {
    auto dir = fresh_dir("b3d_ablate_zero");
    PipelineConfig cfg = hermetic_config(dir);
    cfg.to3d.kind = "constant";
    auto ids = first_ids(cfg, 3);
    AblationResult r = run_ablation(cfg, ids);
    report::ReportDoc doc = report::parse_report(r.report_ablation_text);
    REQUIRE(doc.rows.size() == 1);
    REQUIRE(doc.baseline_rows.size() == 1);
    for (size_t i = 0; i < doc.rows[0].values.size(); ++i)
        CHECK(doc.rows[0].values[i] == doctest::Approx(doc.baseline_rows[0].values[i]).epsilon(1e-12));
    for (const auto& line : {std::string("mockbb full"), std::string("mockbb direct"),
                             std::string("mockbb delta")})
        CHECK(r.report_ablation_text.find(line) != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("ablation runs never share cache entries across modes") {
    auto dir = fresh_dir("b3d_ablate_sep");
    PipelineConfig cfg = hermetic_config(dir);
    auto ids = first_ids(cfg, 2);
    AblationResult r = run_ablation(cfg, ids);
    // full ran decode+reason+t2i+to3d, direct re-ran decode and to3d under its own keys
    CHECK(r.full.provider_calls["decode"] == 2);
    CHECK(r.direct.provider_calls["decode"] == 2);
    CHECK(r.direct.provider_calls["reason"] == 0);
    CHECK(r.direct.provider_calls["t2i"] == 0);
    CHECK(r.direct.provider_calls["to3d"] == 2);
    CHECK(fs::exists(dir / "out" / "report_ablation.txt"));
    CHECK(report_from_run_dir(dir / "out", report::Layout::ablation_table) == r.report_ablation_text);
    fs::remove_all(dir);
}

TEST_CASE("http adapters speak the documented wire contract") {
    httplib::Server server;
    nlohmann::json seen_t2i, seen_reason;

    server.Post("/reason", [&](const httplib::Request& req, httplib::Response& res) {
        seen_reason = nlohmann::json::parse(req.body);
        res.set_content(nlohmann::json{{"text", "A carved wooden chess piece as a 3D model on a white "
                                                "background."}}
                            .dump(),
                        "application/json");
    });
    server.Post("/t2i", [&](const httplib::Request& req, httplib::Response& res) {
        seen_t2i = nlohmann::json::parse(req.body);
        Image img(8, 8, {10, 20, 30});
        res.set_content(nlohmann::json{{"image_b64", base64_encode(ppm_bytes(img))}}.dump(),
                        "application/json");
    });
    server.Post("/to3d", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        CHECK(body.contains("image_b64"));
        std::string obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        res.set_content(nlohmann::json{{"obj_b64", base64_encode(obj)}}.dump(), "application/json");
    });

    int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    while (!server.is_running()) std::this_thread::yield();
    std::string base = "127.0.0.1:" + std::to_string(port);

    providers::HttpReasonerProvider reasoner(base + "/reason");
    Image img = data::class_glyph_image(0, 2, 16);
    img.image_id = "wire_img";
    providers::ReasonRequest rr{"sys", "usr", &img};
    std::string text = reasoner.generate(rr);
    CHECK(text.find("chess piece") != std::string::npos);
    CHECK(seen_reason["system"] == "sys");
    CHECK(seen_reason["user"] == "usr");
    CHECK(seen_reason["mime"] == "image/x-portable-pixmap");
    Image round = parse_ppm(base64_decode(seen_reason["image_b64"].get<std::string>()));
    CHECK(round.same_pixels(img));

    // the request inspector sees exactly steps=30 and guidance=4.5
    providers::HttpTextToImageProvider t2i(base + "/t2i");
    geom::GenStageConfig gen;
    Image generated = t2i.generate("a prompt", gen);
    CHECK(generated.width == 8);
    CHECK(seen_t2i["steps"] == 30);
    CHECK(seen_t2i["guidance"] == 4.5);
    CHECK(seen_t2i["texture_resolution"] == 1024);

    providers::HttpImageToMeshProvider to3d(base + "/to3d");
    std::string obj = to3d.generate_obj(img, gen);
    CHECK(geom::parse_obj(obj).triangles.size() == 1);

    providers::HttpReasonerProvider dead("127.0.0.1:1/reason");
    CHECK_THROWS_AS(dead.generate(rr), TransportError);

    server.stop();
    server_thread.join();
}

TEST_CASE("runs with too few trials or oversized n-way settings fail fast") {
    auto dir = fresh_dir("b3d_bad_cfg");
    PipelineConfig cfg = hermetic_config(dir);
    CHECK_THROWS_AS(run_pipeline(cfg, first_ids(cfg, 1)), ValidationError);
    cfg.nway_settings = {{50, 1}};
    CHECK_THROWS_AS(run_pipeline(cfg, first_ids(cfg, 3)), ValidationError);
    fs::remove_all(dir);
}

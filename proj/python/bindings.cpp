// Python bindings for the main brain3d operations: dataset tooling,
// alignment training/encoding, toy diffusion sampling, rendering, the
// metric suite, and full pipeline runs.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "brain3d/pipeline.hpp"

namespace py = pybind11;
using namespace brain3d;

namespace {
Image image_from_array(py::array_t<uint8_t, py::array::c_style | py::array::forcecast> arr,
                       const std::string& image_id = "") {
    auto buf = arr.request();
    if (buf.ndim != 3 || buf.shape[2] != 3)
        throw ValidationError("image array must have shape (H, W, 3) uint8");
    Image img;
    img.image_id = image_id;
    img.height = int(buf.shape[0]);
    img.width = int(buf.shape[1]);
    const uint8_t* p = static_cast<const uint8_t*>(buf.ptr);
    img.pixels.assign(p, p + size_t(img.width) * img.height * 3);
    return img;
}

py::array_t<uint8_t> image_to_array(const Image& img) {
    py::array_t<uint8_t> arr({img.height, img.width, 3});
    std::memcpy(arr.mutable_data(), img.pixels.data(), img.pixels.size());
    return arr;
}

Eigen::MatrixXf eeg_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> arr) {
    auto buf = arr.request();
    if (buf.ndim != 2) throw ValidationError("EEG array must have shape (channels, samples)");
    Eigen::MatrixXf m(buf.shape[0], buf.shape[1]);
    const float* p = static_cast<const float*>(buf.ptr);
    for (long c = 0; c < m.rows(); ++c)
        for (long s = 0; s < m.cols(); ++s) m(c, s) = p[c * m.cols() + s];
    return m;
}

std::vector<Eigen::VectorXd> rows_from_array(
    py::array_t<double, py::array::c_style | py::array::forcecast> arr) {
    auto buf = arr.request();
    if (buf.ndim != 2) throw ValidationError("feature array must have shape (N, d)");
    std::vector<Eigen::VectorXd> out;
    const double* p = static_cast<const double*>(buf.ptr);
    for (long i = 0; i < buf.shape[0]; ++i) {
        Eigen::VectorXd v(buf.shape[1]);
        for (long j = 0; j < buf.shape[1]; ++j) v[j] = p[i * buf.shape[1] + j];
        out.push_back(std::move(v));
    }
    return out;
}

py::dict run_summary(const pipe::RunResult& r) {
    py::dict d;
    d["trials_attempted"] = r.trials_attempted;
    d["trials_succeeded"] = r.trials_succeeded;
    py::list failures;
    for (const auto& f : r.failures) {
        py::dict fd;
        fd["trial_id"] = f.trial_id;
        fd["stage"] = f.stage;
        fd["message"] = f.message;
        failures.append(fd);
    }
    d["failures"] = failures;
    d["report_gt"] = r.report_gt_text;
    d["report_intermediate"] = r.report_intermediate_text;
    py::dict calls;
    for (const auto& [name, count] : r.provider_calls) calls[py::str(name)] = count;
    d["provider_calls"] = calls;
    return d;
}
}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "EEG-to-3D pipeline orchestrator and evaluation harness";

    py::register_exception<Error>(m, "Brain3dError");

    // dataset
    m.def(
        "synth_dataset",
        [](const std::string& out_dir, int classes, int trials_per_class, int channels, int samples,
           double sigma, uint64_t seed) {
            data::SynthSpec spec;
            spec.num_classes = classes;
            spec.trials_per_class = trials_per_class;
            spec.channels = channels;
            spec.samples = samples;
            spec.noise_sigma = sigma;
            spec.seed = seed;
            auto ds = data::synth_dataset(spec);
            return data::write_synth_dataset(ds, out_dir).string();
        },
        py::arg("out_dir"), py::arg("classes") = 8, py::arg("trials_per_class") = 20,
        py::arg("channels") = 8, py::arg("samples") = 32, py::arg("sigma") = 0.1, py::arg("seed") = 0,
        "Generate a synthetic dataset on disk; returns the manifest path.");

    m.def("read_eeg", [](const std::string& path) {
        data::EegTrial t = data::read_eeg(path);
        py::array_t<float> arr({t.channels(), t.samples()});
        for (int c = 0; c < t.channels(); ++c)
            for (int s = 0; s < t.samples(); ++s) arr.mutable_at(c, s) = t.data(c, s);
        return arr;
    });
    m.def("write_eeg", [](const std::string& path, py::array_t<float> data) {
        data::EegTrial t;
        t.trial_id = "py";
        t.data = eeg_from_array(data);
        data::write_eeg(t, path);
    });
    m.def("read_ppm", [](const std::string& path) { return image_to_array(read_ppm(path)); });
    m.def("write_ppm", [](const std::string& path, py::array_t<uint8_t> img) {
        write_ppm(image_from_array(img), path);
    });

    // alignment
    m.def(
        "train_align",
        [](const std::string& manifest_path, const std::string& checkpoint_out, int epochs, double lr,
           int batch_size, uint64_t seed) {
            align::AlignConfig cfg;
            if (epochs > 0) cfg.epochs = epochs;
            if (lr >= 0) cfg.learning_rate = lr;
            if (batch_size > 1) cfg.batch_size = batch_size;
            cfg.seed = seed;
            data::Manifest mf = data::load_manifest(manifest_path);
            align::TrainResult r = align::train_alignment(mf, cfg);
            align::save_checkpoint(r.params, checkpoint_out);
            return r.epoch_losses;
        },
        py::arg("manifest"), py::arg("checkpoint_out"), py::arg("epochs") = -1, py::arg("lr") = -1.0,
        py::arg("batch_size") = 0, py::arg("seed") = 0,
        "Train the EEG/image alignment encoders; returns the loss curve.");

    m.def("encode_eeg", [](const std::string& checkpoint, py::array_t<float> eeg) {
        align::AlignParams p = align::load_checkpoint(checkpoint);
        data::EegTrial t;
        t.trial_id = "py";
        t.data = eeg_from_array(eeg);
        align::Embedding e = align::encode_eeg(t, p);
        return py::array_t<double>(std::vector<py::ssize_t>{py::ssize_t(e.values.size())},
                                   std::vector<py::ssize_t>{sizeof(double)}, e.values.data());
    });
    m.def("encode_image", [](const std::string& checkpoint, py::array_t<uint8_t> img) {
        align::AlignParams p = align::load_checkpoint(checkpoint);
        align::Embedding e = align::encode_image(image_from_array(img), p);
        return py::array_t<double>(std::vector<py::ssize_t>{py::ssize_t(e.values.size())},
                                   std::vector<py::ssize_t>{sizeof(double)}, e.values.data());
    });

    // rendering
    m.def(
        "render_views",
        [](const std::string& obj_path, int width, int height, double azimuth_step, double elevation,
           double distance, double fov) {
            geom::TriMesh mesh = geom::normalize_to_unit_sphere(geom::load_obj(obj_path));
            render::ViewSetConfig cfg;
            cfg.width = width;
            cfg.height = height;
            cfg.azimuth_step = azimuth_step;
            cfg.elevation = elevation;
            cfg.distance = distance;
            cfg.fov = fov;
            py::dict out;
            for (const auto& rv : render::render_all(mesh, render::canonical_views(cfg)))
                out[py::str(rv.view.label)] = image_to_array(rv.image);
            return out;
        },
        py::arg("obj_path"), py::arg("width") = 256, py::arg("height") = 256,
        py::arg("azimuth_step") = 60.0, py::arg("elevation") = 20.0, py::arg("distance") = 2.5,
        py::arg("fov") = 40.0, "Render the six canonical views; returns {label: (H,W,3) uint8}.");

    m.def("export_cameras", [](const std::string& path) {
        render::export_camera_config(render::canonical_views(), path);
    });

    // metrics
    m.def(
        "clip_score",
        [](py::array_t<uint8_t> a, py::array_t<uint8_t> b, int bins) {
            metrics::HistogramEmbedder embedder(bins);
            return metrics::clip_score(image_from_array(a), image_from_array(b), embedder);
        },
        py::arg("a"), py::arg("b"), py::arg("bins") = 4);
    m.def(
        "lpips",
        [](py::array_t<uint8_t> a, py::array_t<uint8_t> b, int levels) {
            metrics::GradientFeatureProvider features(levels);
            return metrics::lpips_distance(image_from_array(a), image_from_array(b), features);
        },
        py::arg("a"), py::arg("b"), py::arg("levels") = 3);
    m.def("fid", [](py::array_t<double> a, py::array_t<double> b) {
        return metrics::fid(rows_from_array(a), rows_from_array(b));
    });
    m.def(
        "nway_topk",
        [](py::array_t<double> gt_probs, py::array_t<double> view_probs, int n, int k, int trials,
           uint64_t seed) {
            auto gtb = gt_probs.request();
            Eigen::VectorXd gt(gtb.shape[0]);
            for (long i = 0; i < gt.size(); ++i) gt[i] = static_cast<const double*>(gtb.ptr)[i];
            std::vector<metrics::ProbVector> views;
            for (auto& row : rows_from_array(view_probs)) views.push_back({row});
            metrics::NwayConfig cfg{n, k, trials, seed, int(gt.size())};
            metrics::NwayResult r = metrics::nway_topk({gt}, views, cfg);
            return py::make_tuple(r.mean, r.stddev);
        },
        py::arg("gt_probs"), py::arg("view_probs"), py::arg("n"), py::arg("k"), py::arg("trials") = 20,
        py::arg("seed") = 0);

    // reasoning
    m.def("prompt_template", [] {
        reason::PromptTemplate tpl = reason::PromptTemplate::default_v1();
        return py::make_tuple(tpl.system_text, tpl.user_text);
    });
    m.def("prompt_template_hash",
          [] { return reason::template_hash(reason::PromptTemplate::default_v1()); });

    // orchestration
    m.def("default_config", [] { return pipe::config_json(pipe::default_config()).dump(2); });
    m.def(
        "run_pipeline",
        [](const std::string& config_path, const std::vector<std::string>& trial_ids) {
            pipe::PipelineConfig cfg = pipe::load_config(config_path);
            pipe::apply_env_overrides(cfg);
            return run_summary(pipe::run_pipeline(cfg, trial_ids));
        },
        py::arg("config_path"), py::arg("trial_ids") = std::vector<std::string>{});
    m.def(
        "run_ablation",
        [](const std::string& config_path, const std::vector<std::string>& trial_ids) {
            pipe::PipelineConfig cfg = pipe::load_config(config_path);
            pipe::apply_env_overrides(cfg);
            pipe::AblationResult r = pipe::run_ablation(cfg, trial_ids);
            py::dict d;
            d["full"] = run_summary(r.full);
            d["direct"] = run_summary(r.direct);
            d["report_ablation"] = r.report_ablation_text;
            return d;
        },
        py::arg("config_path"), py::arg("trial_ids") = std::vector<std::string>{});
}

#include "brain3d/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace brain3d::data {

using nlohmann::json;

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw Error("bad split value");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ValidationError("unknown split tag: " + name);
}

void EegTrial::validate() const {
    if (data.rows() <= 0 || data.cols() <= 0)
        throw ValidationError("trial " + trial_id + ": empty data matrix");
    if (!data.allFinite())
        throw ValidationError("trial " + trial_id + ": non-finite sample values");
}

std::filesystem::path Manifest::resolve(const std::string& rel) const {
    std::filesystem::path p(rel);
    if (p.is_absolute() || root.empty()) return p;
    return root / p;
}

std::map<int, int> Manifest::per_class_counts() const {
    std::map<int, int> counts;
    for (const auto& e : entries) ++counts[e.class_label];
    return counts;
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    Manifest m;
    m.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("bad record: ") + e.what(), path.string(), lineno);
        }
        if (obj.contains("class_names")) {
            m.class_names = obj.at("class_names").get<std::vector<std::string>>();
            continue;
        }
        ManifestEntry e;
        try {
            e.trial_id = obj.at("trial_id").get<std::string>();
            e.subject_id = obj.at("subject_id").get<int>();
            e.class_label = obj.at("class_label").get<int>();
            e.eeg_path = obj.at("eeg_path").get<std::string>();
            e.image_path = obj.at("image_path").get<std::string>();
            e.split = split_from_name(obj.at("split").get<std::string>());
        } catch (const json::exception& ex) {
            throw ParseError(std::string("missing or mistyped field: ") + ex.what(), path.string(), lineno);
        } catch (const ValidationError& ex) {
            throw ParseError(ex.what(), path.string(), lineno);
        }
        if (!seen.insert(e.trial_id).second)
            throw ParseError("duplicate trial_id: " + e.trial_id, path.string(), lineno);
        for (const std::string* p : {&e.eeg_path, &e.image_path}) {
            if (!std::filesystem::exists(m.resolve(*p)))
                throw ParseError("referenced path does not exist: " + *p, path.string(), lineno);
        }
        m.entries.push_back(std::move(e));
    }
    if (m.class_names.empty()) {
        int max_label = -1;
        for (const auto& e : m.entries) max_label = std::max(max_label, e.class_label);
        for (int c = 0; c <= max_label; ++c) m.class_names.push_back("class_" + std::to_string(c));
    }
    return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
    std::string out;
    json header;
    header["class_names"] = m.class_names;
    out += header.dump() + "\n";
    for (const auto& e : m.entries) {
        json obj;
        obj["trial_id"] = e.trial_id;
        obj["subject_id"] = e.subject_id;
        obj["class_label"] = e.class_label;
        obj["eeg_path"] = e.eeg_path;
        obj["image_path"] = e.image_path;
        obj["split"] = split_name(e.split);
        out += obj.dump() + "\n";
    }
    write_file_atomic(path, out);
}

std::vector<uint8_t> eeg_bytes(const EegTrial& trial) {
    trial.validate();
    std::vector<uint8_t> out;
    size_t n = size_t(trial.channels()) * size_t(trial.samples());
    out.reserve(16 + n * 4);
    out.insert(out.end(), {'E', 'E', 'G', '1'});
    put_u32le(out, uint32_t(trial.channels()));
    put_u32le(out, uint32_t(trial.samples()));
    put_u32le(out, 0);  // reserved
    for (int c = 0; c < trial.channels(); ++c)
        for (int s = 0; s < trial.samples(); ++s) put_f32le(out, trial.data(c, s));
    return out;
}

EegTrial parse_eeg(const std::vector<uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "EEG1", 4) != 0)
        throw ParseError("bad magic, expected EEG1", origin, 1);
    uint32_t channels = get_u32le(bytes.data() + 4);
    uint32_t samples = get_u32le(bytes.data() + 8);
    if (channels == 0 || samples == 0)
        throw ParseError("zero channel or sample count", origin, 1);
    size_t need = 16 + size_t(channels) * samples * 4;
    if (bytes.size() < need)
        throw ParseError("truncated payload: have " + std::to_string(bytes.size()) + " bytes, need " +
                             std::to_string(need),
                         origin, 1);
    EegTrial trial;
    trial.data.resize(channels, samples);
    const uint8_t* p = bytes.data() + 16;
    for (uint32_t c = 0; c < channels; ++c) {
        for (uint32_t s = 0; s < samples; ++s) {
            float v = get_f32le(p);
            p += 4;
            if (!std::isfinite(v))
                throw ParseError("non-finite value at channel " + std::to_string(c) + " sample " +
                                     std::to_string(s),
                                 origin, 1);
            trial.data(c, s) = v;
        }
    }
    return trial;
}

EegTrial read_eeg(const std::filesystem::path& path) {
    EegTrial t = parse_eeg(read_file(path), path.string());
    t.trial_id = path.stem().string();
    return t;
}

void write_eeg(const EegTrial& trial, const std::filesystem::path& path) {
    write_file_atomic(path, eeg_bytes(trial));
}

namespace {
// Largest-remainder split counts for one stratum of n entries.
std::array<size_t, 3> split_counts(size_t n, const SplitRatios& r) {
    double ratios[3] = {r.train, r.val, r.test};
    std::array<size_t, 3> counts{};
    double rem[3];
    size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        double exact = double(n) * ratios[i];
        counts[size_t(i)] = size_t(std::floor(exact));
        rem[i] = exact - std::floor(exact);
        assigned += counts[size_t(i)];
    }
    while (assigned < n) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (rem[i] > rem[best]) best = i;
        ++counts[size_t(best)];
        rem[best] = -1.0;
        ++assigned;
    }
    return counts;
}
}  // namespace

Manifest make_splits(const Manifest& m, const SplitRatios& ratios, uint64_t seed, Stratify stratify) {
    double sum = ratios.train + ratios.val + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError("split ratios must sum to 1, got " + std::to_string(sum));

    std::map<int, std::vector<size_t>> strata;
    for (size_t i = 0; i < m.entries.size(); ++i) {
        int key = stratify == Stratify::by_class ? m.entries[i].class_label : m.entries[i].subject_id;
        strata[key].push_back(i);
    }
    Manifest out = m;
    for (auto& [key, idx] : strata) {
        if (idx.size() < 3)
            throw ValidationError("stratum " + std::to_string(key) + " has fewer entries than splits (" +
                                  std::to_string(idx.size()) + ")");
        Rng rng(sha256_seed("splits:" + std::to_string(seed) + ":" + std::to_string(key)));
        // Fisher-Yates
        for (size_t i = idx.size(); i > 1; --i) {
            size_t j = size_t(rng.uniform_int(i));
            std::swap(idx[i - 1], idx[j]);
        }
        auto counts = split_counts(idx.size(), ratios);
        size_t pos = 0;
        for (int s = 0; s < 3; ++s) {
            for (size_t k = 0; k < counts[size_t(s)]; ++k, ++pos)
                out.entries[idx[pos]].split = Split(s);
        }
    }
    return out;
}

namespace {
void hsv_to_rgb(double h, double s, double v, uint8_t rgb[3]) {
    double r = 0, g = 0, b = 0;
    int i = int(h * 6.0) % 6;
    double f = h * 6.0 - std::floor(h * 6.0);
    double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
    rgb[0] = clamp_channel(r * 255.0);
    rgb[1] = clamp_channel(g * 255.0);
    rgb[2] = clamp_channel(b * 255.0);
}
}  // namespace

Image class_glyph_image(int class_label, int num_classes, int size) {
    if (num_classes <= 0 || class_label < 0 || class_label >= num_classes)
        throw ValidationError("class label out of range");
    uint8_t bg[3], fg[3];
    hsv_to_rgb(double(class_label) / num_classes, 0.55, 0.95, bg);
    hsv_to_rgb(std::fmod(double(class_label) / num_classes + 0.5, 1.0), 0.9, 0.45, fg);
    Image img(size, size, {bg[0], bg[1], bg[2]});
    img.image_id = "class_" + std::to_string(class_label);
    img.class_label = class_label;

    double cx = (size - 1) / 2.0, cy = (size - 1) / 2.0;
    double r = size * 0.3;
    int glyph = class_label % 6;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double dx = x - cx, dy = y - cy;
            bool inside = false;
            switch (glyph) {
                case 0: inside = std::max(std::abs(dx), std::abs(dy)) <= r; break;            // square
                case 1: inside = dx * dx + dy * dy <= r * r; break;                           // disc
                case 2: inside = dy >= -r && std::abs(dx) <= (dy + r) * 0.5; break;           // triangle
                case 3: {                                                                     // ring
                    double d2 = dx * dx + dy * dy;
                    inside = d2 <= r * r && d2 >= r * r * 0.35;
                    break;
                }
                case 4: inside = std::abs(dx) <= r * 0.3 || std::abs(dy) <= r * 0.3; break;   // cross
                default: inside = std::abs(dx) + std::abs(dy) <= r; break;                    // diamond
            }
            if (inside) img.set(x, y, fg[0], fg[1], fg[2]);
        }
    }
    return img;
}

SynthDataset synth_dataset(const SynthSpec& spec) {
    if (spec.num_classes <= 0 || spec.trials_per_class <= 0 || spec.channels <= 0 || spec.samples <= 0 ||
        spec.image_size <= 0 || spec.subjects <= 0)
        throw ValidationError("synth_dataset: all counts must be positive");
    if (spec.noise_sigma < 0) throw ValidationError("synth_dataset: noise_sigma must be >= 0");

    SynthDataset ds;
    ds.manifest.root.clear();
    for (int c = 0; c < spec.num_classes; ++c) {
        ds.manifest.class_names.push_back("class_" + std::to_string(c));
        ds.class_images.push_back(class_glyph_image(c, spec.num_classes, spec.image_size));

        Rng trng(sha256_seed("synth-template:" + std::to_string(spec.seed) + ":" + std::to_string(c)));
        Eigen::MatrixXf tpl(spec.channels, spec.samples);
        for (int i = 0; i < spec.channels; ++i)
            for (int j = 0; j < spec.samples; ++j) tpl(i, j) = float(trng.normal());
        ds.templates.push_back(tpl);
    }
    for (int c = 0; c < spec.num_classes; ++c) {
        for (int k = 0; k < spec.trials_per_class; ++k) {
            EegTrial t;
            t.trial_id = "synth_c" + std::to_string(c) + "_t" + std::to_string(k);
            t.subject_id = 1 + (c * spec.trials_per_class + k) % spec.subjects;
            t.class_label = c;
            Rng nrng(sha256_seed("synth-noise:" + std::to_string(spec.seed) + ":" + t.trial_id));
            t.data = ds.templates[size_t(c)];
            if (spec.noise_sigma > 0) {
                for (int i = 0; i < spec.channels; ++i)
                    for (int j = 0; j < spec.samples; ++j)
                        t.data(i, j) += float(spec.noise_sigma * nrng.normal());
            }
            ManifestEntry e;
            e.trial_id = t.trial_id;
            e.subject_id = t.subject_id;
            e.class_label = c;
            e.eeg_path = "eeg/" + t.trial_id + ".eeg";
            e.image_path = "images/class_" + std::to_string(c) + ".ppm";
            ds.manifest.entries.push_back(e);
            ds.trials.push_back(std::move(t));
        }
    }
    ds.manifest = make_splits(ds.manifest, SplitRatios{}, spec.seed);
    for (size_t i = 0; i < ds.trials.size(); ++i) ds.trials[i].split = ds.manifest.entries[i].split;
    return ds;
}

const EegTrial& SynthDataset::trial_by_id(const std::string& id) const {
    for (const auto& t : trials)
        if (t.trial_id == id) return t;
    throw Error("unknown trial id: " + id);
}

std::filesystem::path write_synth_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "eeg");
    fs::create_directories(dir / "images");
    for (const auto& t : ds.trials) write_eeg(t, dir / "eeg" / (t.trial_id + ".eeg"));
    for (const auto& img : ds.class_images) write_ppm(img, dir / "images" / (img.image_id + ".ppm"));
    fs::path manifest_path = dir / "manifest.jsonl";
    save_manifest(ds.manifest, manifest_path);
    return manifest_path;
}

}  // namespace brain3d::data

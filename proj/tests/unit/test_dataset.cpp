#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "brain3d/dataset.hpp"

using namespace brain3d;
using namespace brain3d::data;
namespace fs = std::filesystem;

namespace {
fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}


bool same_matrix(const Eigen::MatrixXf& a, const Eigen::MatrixXf& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

EegTrial make_trial(const std::string& id, int label, int c, int t, uint64_t seed) {
    EegTrial trial;
    trial.trial_id = id;
    trial.class_label = label;
    trial.data.resize(c, t);
    Rng rng(seed);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < t; ++j) trial.data(i, j) = float(rng.normal());
    return trial;
}
}  // namespace

TEST_CASE("eeg container header echo") {
    auto dir = fresh_dir("b3d_eeg1");
    EegTrial t = make_trial("t0", 0, 2, 4, 1);
    write_eeg(t, dir / "t0.eeg");
    EegTrial r = read_eeg(dir / "t0.eeg");
    CHECK(r.channels() == 2);
    CHECK(r.samples() == 4);
    CHECK(same_matrix(r.data, t.data));
    CHECK(fs::file_size(dir / "t0.eeg") == 16 + 2 * 4 * 4);
    fs::remove_all(dir);
}

TEST_CASE("eeg container truncation and bad magic") {
    auto dir = fresh_dir("b3d_eeg2");
    EegTrial t = make_trial("t0", 0, 2, 4, 1);
    auto bytes = eeg_bytes(t);
    bytes.resize(bytes.size() - 4);
    CHECK_THROWS_AS(parse_eeg(bytes), ParseError);

    auto bad = eeg_bytes(t);
    bad[0] = 'X';
    CHECK_THROWS_AS(parse_eeg(bad), ParseError);

    auto nan_bytes = eeg_bytes(t);
    // float32 NaN into the first payload slot
    nan_bytes[16] = 0x00;
    nan_bytes[17] = 0x00;
    nan_bytes[18] = 0xc0;
    nan_bytes[19] = 0x7f;
    CHECK_THROWS_AS(parse_eeg(nan_bytes), ParseError);
    fs::remove_all(dir);
}

TEST_CASE("eeg container 128x500 byte arithmetic") {
    EegTrial t = make_trial("big", 0, 128, 500, 2);
    auto bytes = eeg_bytes(t);
    CHECK(bytes.size() == 16 + 128 * 500 * 4);  // 256000-byte payload
    EegTrial r = parse_eeg(bytes);
    CHECK(r.data.size() == 64000);
}

TEST_CASE("eeg round trip is the identity") {
    for (uint64_t seed : {3u, 4u, 5u}) {
        EegTrial t = make_trial("rt", 0, 5, 7, seed);
        EegTrial r = parse_eeg(eeg_bytes(t));
        CHECK(same_matrix(r.data, t.data));
    }
}

TEST_CASE("manifest load, duplicates, bad split") {
    auto dir = fresh_dir("b3d_manifest");
    EegTrial t = make_trial("t0", 0, 2, 2, 1);
    write_eeg(t, dir / "t.eeg");
    Image img(4, 4);
    write_ppm(img, dir / "i.ppm");

    auto line = [&](const std::string& id, const std::string& split) {
        return "{\"trial_id\":\"" + id +
               "\",\"subject_id\":1,\"class_label\":0,\"eeg_path\":\"t.eeg\",\"image_path\":\"i.ppm\","
               "\"split\":\"" +
               split + "\"}\n";
    };

    write_file_atomic(dir / "ok.jsonl", line("a", "train") + line("b", "val") + line("c", "test"));
    Manifest m = load_manifest(dir / "ok.jsonl");
    CHECK(m.entries.size() == 3);

    write_file_atomic(dir / "dup.jsonl", line("a", "train") + line("a", "val"));
    CHECK_THROWS_WITH_AS(load_manifest(dir / "dup.jsonl"),
                         doctest::Contains("duplicate trial_id"), ParseError);

    write_file_atomic(dir / "split.jsonl", line("a", "train") + line("b", "holdout"));
    try {
        load_manifest(dir / "split.jsonl");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }

    write_file_atomic(dir / "missing.jsonl",
                      "{\"trial_id\":\"a\",\"subject_id\":1,\"class_label\":0,\"eeg_path\":\"nope.eeg\","
                      "\"image_path\":\"i.ppm\",\"split\":\"train\"}\n");
    CHECK_THROWS_AS(load_manifest(dir / "missing.jsonl"), ParseError);
    fs::remove_all(dir);
}

TEST_CASE("manifest with 2000 entries, 40 classes, 50 each") {
    auto dir = fresh_dir("b3d_manifest_big");
    EegTrial t = make_trial("t0", 0, 2, 2, 1);
    write_eeg(t, dir / "t.eeg");
    write_ppm(Image(4, 4), dir / "i.ppm");
    std::string text;
    for (int c = 0; c < 40; ++c)
        for (int i = 0; i < 50; ++i)
            text += "{\"trial_id\":\"c" + std::to_string(c) + "_" + std::to_string(i) +
                    "\",\"subject_id\":1,\"class_label\":" + std::to_string(c) +
                    ",\"eeg_path\":\"t.eeg\",\"image_path\":\"i.ppm\",\"split\":\"train\"}\n";
    write_file_atomic(dir / "big.jsonl", text);
    Manifest m = load_manifest(dir / "big.jsonl");
    CHECK(m.entries.size() == 2000);
    auto counts = m.per_class_counts();
    CHECK(counts.size() == 40);
    for (const auto& [label, n] : counts) CHECK(n == 50);
    fs::remove_all(dir);
}

TEST_CASE("manifest save/load round trip") {
    auto dir = fresh_dir("b3d_manifest_rt");
    SynthDataset ds = synth_dataset({.num_classes = 3, .trials_per_class = 4, .channels = 2, .samples = 3,
                                     .noise_sigma = 0.0, .seed = 1, .image_size = 8, .subjects = 2});
    fs::path mpath = write_synth_dataset(ds, dir);
    Manifest m = load_manifest(mpath);
    CHECK(m.entries.size() == ds.manifest.entries.size());
    CHECK(m.class_names == ds.manifest.class_names);
    for (size_t i = 0; i < m.entries.size(); ++i) {
        CHECK(m.entries[i].trial_id == ds.manifest.entries[i].trial_id);
        CHECK(m.entries[i].split == ds.manifest.entries[i].split);
    }
    fs::remove_all(dir);
}

namespace {
Manifest synthetic_manifest(int classes, int per_class) {
    Manifest m;
    for (int c = 0; c < classes; ++c) {
        m.class_names.push_back("class_" + std::to_string(c));
        for (int i = 0; i < per_class; ++i) {
            ManifestEntry e;
            e.trial_id = "c" + std::to_string(c) + "_" + std::to_string(i);
            e.class_label = c;
            e.subject_id = 1 + i % 3;
            e.eeg_path = "x.eeg";
            e.image_path = "x.ppm";
            m.entries.push_back(e);
        }
    }
    return m;
}
}  // namespace

TEST_CASE("make_splits stratified 50 per class gives 40/5/5") {
    Manifest m = synthetic_manifest(40, 50);
    Manifest s = make_splits(m, SplitRatios{}, 0);
    std::map<int, std::array<int, 3>> per_class;
    for (const auto& e : s.entries) ++per_class[e.class_label][size_t(int(e.split))];
    for (const auto& [c, counts] : per_class) {
        CHECK(counts[0] == 40);
        CHECK(counts[1] == 5);
        CHECK(counts[2] == 5);
    }
}

TEST_CASE("make_splits 10 entries one class gives 8/1/1") {
    Manifest m = synthetic_manifest(1, 10);
    Manifest s = make_splits(m, SplitRatios{}, 3);
    std::array<int, 3> counts{};
    for (const auto& e : s.entries) ++counts[size_t(int(e.split))];
    CHECK(counts[0] == 8);
    CHECK(counts[1] == 1);
    CHECK(counts[2] == 1);
}

TEST_CASE("make_splits determinism and union preservation") {
    Manifest m = synthetic_manifest(5, 13);
    Manifest a = make_splits(m, SplitRatios{}, 9);
    Manifest b = make_splits(m, SplitRatios{}, 9);
    for (size_t i = 0; i < a.entries.size(); ++i) CHECK(a.entries[i].split == b.entries[i].split);

    // no loss, no duplication
    std::multiset<std::string> before, after;
    for (const auto& e : m.entries) before.insert(e.trial_id);
    for (const auto& e : a.entries) after.insert(e.trial_id);
    CHECK(before == after);

    Manifest c = make_splits(m, SplitRatios{}, 10);
    bool any_diff = false;
    for (size_t i = 0; i < a.entries.size(); ++i) any_diff |= a.entries[i].split != c.entries[i].split;
    CHECK(any_diff);
}

TEST_CASE("make_splits rejects bad ratios and tiny strata") {
    Manifest m = synthetic_manifest(1, 10);
    CHECK_THROWS_AS(make_splits(m, SplitRatios{0.8, 0.1, 0.2}, 0), ValidationError);
    Manifest tiny = synthetic_manifest(1, 2);
    CHECK_THROWS_AS(make_splits(tiny, SplitRatios{}, 0), ValidationError);
}

TEST_CASE("make_splits by subject") {
    Manifest m = synthetic_manifest(2, 30);
    Manifest s = make_splits(m, SplitRatios{}, 0, Stratify::by_subject);
    std::map<int, std::array<int, 3>> per_subject;
    for (const auto& e : s.entries) ++per_subject[e.subject_id][size_t(int(e.split))];
    for (const auto& [subj, counts] : per_subject) {
        int total = counts[0] + counts[1] + counts[2];
        CHECK(std::abs(counts[0] - 0.8 * total) <= 1.0);
    }
}

TEST_CASE("synth_dataset zero noise duplicates the template") {
    SynthDataset ds = synth_dataset({.num_classes = 2, .trials_per_class = 3, .channels = 4, .samples = 5,
                                     .noise_sigma = 0.0, .seed = 7, .image_size = 16, .subjects = 1});
    for (const auto& t : ds.trials) CHECK(same_matrix(t.data, ds.templates[size_t(t.class_label)]));
}

TEST_CASE("synth_dataset counts and distinct images") {
    SynthDataset ds = synth_dataset({.num_classes = 4, .trials_per_class = 10, .channels = 8, .samples = 32,
                                     .noise_sigma = 0.1, .seed = 7, .image_size = 32, .subjects = 1});
    CHECK(ds.trials.size() == 40);
    CHECK(ds.class_images.size() == 4);
    for (size_t a = 0; a < ds.class_images.size(); ++a)
        for (size_t b = a + 1; b < ds.class_images.size(); ++b)
            CHECK(!ds.class_images[a].same_pixels(ds.class_images[b]));
}

TEST_CASE("synth trials classified perfectly by nearest template") {
    SynthDataset ds = synth_dataset({.num_classes = 8, .trials_per_class = 5, .channels = 8, .samples = 32,
                                     .noise_sigma = 0.1, .seed = 11, .image_size = 16, .subjects = 1});
    // brute-force nearest-template oracle
    int correct = 0;
    for (const auto& t : ds.trials) {
        int best = -1;
        float best_d = std::numeric_limits<float>::infinity();
        for (size_t c = 0; c < ds.templates.size(); ++c) {
            float d = (t.data - ds.templates[c]).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = int(c);
            }
        }
        correct += best == t.class_label;
    }
    CHECK(correct == int(ds.trials.size()));
}

TEST_CASE("synth_dataset is bit-reproducible for a fixed seed") {
    SynthSpec spec{.num_classes = 3, .trials_per_class = 4, .channels = 4, .samples = 6,
                   .noise_sigma = 0.2, .seed = 21, .image_size = 16, .subjects = 1};
    SynthDataset a = synth_dataset(spec);
    SynthDataset b = synth_dataset(spec);
    for (size_t i = 0; i < a.trials.size(); ++i) {
        CHECK(same_matrix(a.trials[i].data, b.trials[i].data));
        CHECK(a.trials[i].split == b.trials[i].split);
    }
    for (size_t c = 0; c < a.class_images.size(); ++c)
        CHECK(a.class_images[c].same_pixels(b.class_images[c]));
}

TEST_CASE("ppm round trip is bit exact") {
    Image img(5, 3);
    Rng rng(1);
    for (auto& p : img.pixels) p = uint8_t(rng.uniform_int(256));
    std::string bytes = ppm_bytes(img);
    Image back = parse_ppm(std::vector<uint8_t>(bytes.begin(), bytes.end()));
    CHECK(back.same_pixels(img));
}

#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>

#include "brain3d/dataset.hpp"
#include "brain3d/metrics.hpp"
#include "oracles.hpp"

using namespace brain3d;
using namespace brain3d::metrics;

namespace {
// Embedder with a scripted vector per image id.
class ScriptedEmbedder : public EmbeddingProvider {
public:
    std::map<std::string, Eigen::VectorXd> table;
    Eigen::VectorXd embed(const Image& image) override { return table.at(image.image_id); }
    std::string id() const override { return "scripted"; }
};

// Single-layer feature provider with a scripted layer per image id.
class ScriptedFeatures : public PerceptualFeatureProvider {
public:
    std::map<std::string, std::vector<Layer>> table;
    std::vector<Layer> features(const Image& image) override { return table.at(image.image_id); }
    std::string id() const override { return "scripted"; }
};

// Fixed probability table per image id.
class ScriptedClassifier : public ClassProbProvider {
public:
    std::map<std::string, Eigen::VectorXd> table;
    int k = 0;
    ProbVector class_probs(const Image& image) override { return {table.at(image.image_id)}; }
    int num_classes() const override { return k; }
    std::string id() const override { return "scripted"; }
};

Image tagged(const std::string& id) {
    Image img(2, 2);
    img.image_id = id;
    return img;
}

ProbVector probs(std::initializer_list<double> v) {
    Eigen::VectorXd p(long(v.size()));
    long i = 0;
    for (double x : v) p[i++] = x;
    return {p};
}
}  // namespace

TEST_CASE("clip_score: identical, orthogonal, and hand-computed histogram") {
    HistogramEmbedder hist(4);
    Image img = data::class_glyph_image(0, 4, 16);
    CHECK(clip_score(img, img, hist) == doctest::Approx(1.0).epsilon(1e-9));

    ScriptedEmbedder se;
    se.table["a"] = (Eigen::VectorXd(3) << 1, 0, 0).finished();
    se.table["b"] = (Eigen::VectorXd(3) << 0, 2, 0).finished();
    CHECK(clip_score(tagged("a"), tagged("b"), se) == doctest::Approx(0.0).epsilon(1e-12));

    // two-pixel fixtures, 3 bins per channel, cosine computed by hand:
    // x: pixels (10,10,10), (200,200,200) -> per-channel bins (.5,0,.5)
    // v: pixels (10,10,10), (100,100,100) -> per-channel bins (.5,.5,0)
    // cos = 3*(0.25) / (sqrt(3*0.5) * sqrt(3*0.5)) = 0.5
    HistogramEmbedder h3(3);
    Image x(2, 1);
    x.set(0, 0, 10, 10, 10);
    x.set(1, 0, 200, 200, 200);
    Image v(2, 1);
    v.set(0, 0, 10, 10, 10);
    v.set(1, 0, 100, 100, 100);
    CHECK(clip_score(x, v, h3) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(clip_score(v, x, h3) == doctest::Approx(0.5).epsilon(1e-9));  // symmetry
}

TEST_CASE("clip_score is invariant to positive scaling and rejects zero norms") {
    ScriptedEmbedder se;
    se.table["a"] = (Eigen::VectorXd(3) << 1, 2, 3).finished();
    se.table["b"] = (Eigen::VectorXd(3) << 10, 20, 30).finished();  // 10x scale
    CHECK(clip_score(tagged("a"), tagged("b"), se) == doctest::Approx(1.0).epsilon(1e-12));

    se.table["z"] = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(clip_score(tagged("a"), tagged("z"), se), ValidationError);
}

TEST_CASE("lpips: zero on identical, closed form on orthogonal unit features") {
    GradientFeatureProvider grad(2, 16);
    Image img = data::class_glyph_image(1, 4, 32);
    CHECK(lpips_distance(img, img, grad) == doctest::Approx(0.0).epsilon(1e-12));

    ScriptedFeatures sf;
    PerceptualFeatureProvider::Layer la{2, 1, 1, {1.0, 0.0}, 1.0};
    PerceptualFeatureProvider::Layer lb{2, 1, 1, {0.0, 1.0}, 1.0};
    sf.table["a"] = {la};
    sf.table["b"] = {lb};
    CHECK(lpips_distance(tagged("a"), tagged("b"), sf) == doctest::Approx(2.0).epsilon(1e-12));

    // doubling raw features changes nothing (unit normalization)
    PerceptualFeatureProvider::Layer la2{2, 1, 1, {2.0, 0.0}, 1.0};
    sf.table["a2"] = {la2};
    CHECK(lpips_distance(tagged("a2"), tagged("b"), sf) == doctest::Approx(2.0).epsilon(1e-12));

    // mismatched shapes are an error
    PerceptualFeatureProvider::Layer wide{2, 1, 2, {1.0, 0.0, 0.0, 1.0}, 1.0};
    sf.table["w"] = {wide};
    CHECK_THROWS_AS(lpips_distance(tagged("a"), tagged("w"), sf), DimensionError);
}

TEST_CASE("inception score closed forms") {
    ScriptedClassifier sc;
    sc.k = 4;

    // identical distribution on every image -> IS = 1
    std::vector<Image> views;
    for (int i = 0; i < 8; ++i) {
        std::string id = "v" + std::to_string(i);
        sc.table[id] = (Eigen::VectorXd(4) << 0.4, 0.3, 0.2, 0.1).finished();
        views.push_back(tagged(id));
    }
    auto [m1, s1] = inception_score(views, sc, 2);
    CHECK(m1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s1 == doctest::Approx(0.0).epsilon(1e-12));

    // K one-hot images, splits=1 -> IS = K
    ScriptedClassifier oh;
    oh.k = 4;
    std::vector<Image> onehot;
    for (int c = 0; c < 4; ++c) {
        Eigen::VectorXd p = Eigen::VectorXd::Zero(4);
        p[c] = 1.0;
        std::string id = "oh" + std::to_string(c);
        oh.table[id] = p;
        onehot.push_back(tagged(id));
    }
    auto [mk, sk] = inception_score(onehot, oh, 1);
    CHECK(mk == doctest::Approx(4.0).epsilon(1e-12));

    // uniform classifier -> IS = 1
    ScriptedClassifier uni;
    uni.k = 4;
    std::vector<Image> uviews;
    for (int i = 0; i < 4; ++i) {
        std::string id = "u" + std::to_string(i);
        uni.table[id] = Eigen::VectorXd::Constant(4, 0.25);
        uviews.push_back(tagged(id));
    }
    auto [mu, su] = inception_score(uviews, uni, 2);
    CHECK(mu == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(inception_score(uviews, uni, 5), ValidationError);  // fewer images than splits
}

TEST_CASE("fid: identity, degenerate means, symmetry") {
    Rng rng(3);
    std::vector<Eigen::VectorXd> a, b;
    for (int i = 0; i < 40; ++i) {
        Eigen::VectorXd v(3);
        for (int j = 0; j < 3; ++j) v[j] = rng.normal();
        a.push_back(v);
        Eigen::VectorXd w(3);
        for (int j = 0; j < 3; ++j) w[j] = 0.5 * rng.normal() + 1.0;
        b.push_back(w);
    }
    CHECK(fid(a, a) <= 1e-6);
    CHECK(std::abs(fid(a, b) - fid(b, a)) < 1e-6);

    // all (0,0) vs all (2,0): zero covariance, squared mean distance
    std::vector<Eigen::VectorXd> za(5, Eigen::VectorXd::Zero(2));
    std::vector<Eigen::VectorXd> zb(5, (Eigen::VectorXd(2) << 2, 0).finished());
    FidStats stats;
    CHECK(fid(za, zb, &stats) == doctest::Approx(4.0).epsilon(1e-9));

    CHECK_THROWS_AS(fid({za[0]}, zb), ValidationError);  // N < 2
    std::vector<Eigen::VectorXd> wrong(5, Eigen::VectorXd::Zero(3));
    CHECK_THROWS_AS(fid(za, wrong), DimensionError);
}

TEST_CASE("fid matches the closed-form diagonal Gaussian distance within 2%") {
    const long d = 8;
    const int n = 10000;
    Eigen::VectorXd mu1(d), mu2(d), v1(d), v2(d);
    Rng setup(7);
    for (long i = 0; i < d; ++i) {
        mu1[i] = setup.uniform() - 0.5;
        mu2[i] = mu1[i] + 1.5;
        v1[i] = 0.5 + setup.uniform();
        v2[i] = 0.5 + setup.uniform();
    }
    double expect = testsupport::gaussian_frechet_diag(mu1, v1, mu2, v2);

    Rng rng(8);
    std::vector<Eigen::VectorXd> a, b;
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd x(d), y(d);
        for (long j = 0; j < d; ++j) {
            x[j] = mu1[j] + std::sqrt(v1[j]) * rng.normal();
            y[j] = mu2[j] + std::sqrt(v2[j]) * rng.normal();
        }
        a.push_back(x);
        b.push_back(y);
    }
    double got = fid(a, b);
    CHECK(std::abs(got - expect) <= 0.02 * expect);
}

TEST_CASE("nway: oracle classifier scores 1.0 with zero deviation") {
    Eigen::VectorXd gt = Eigen::VectorXd::Zero(6);
    gt[2] = 1.0;
    std::vector<ProbVector> views(6, ProbVector{gt});
    NwayConfig cfg{4, 1, 50, 0, 6};
    NwayResult r = nway_topk({gt}, views, cfg);
    CHECK(r.mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.stddev == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("nway: positive ranked strictly last scores zero even at k=n-1") {
    // positive class 0 has the lowest score in every view
    ProbVector gt = probs({0.9, 0.05, 0.03, 0.02});
    ProbVector view = probs({0.01, 0.39, 0.35, 0.25});
    std::vector<ProbVector> views(6, view);
    NwayConfig cfg{3, 2, 100, 1, 4};
    NwayResult r = nway_topk(gt, views, cfg);
    CHECK(r.mean == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("nway matches exhaustive candidate-set enumeration") {
    // K=5, n=3, k=1: all C(4,2)=6 negative pairs enumerable
    const int K = 5, n = 3, k = 1;
    ProbVector gt = probs({0.6, 0.1, 0.1, 0.1, 0.1});  // positive = 0
    std::vector<ProbVector> views = {probs({0.30, 0.40, 0.10, 0.15, 0.05}),
                                     probs({0.50, 0.10, 0.20, 0.10, 0.10}),
                                     probs({0.10, 0.30, 0.25, 0.20, 0.15}),
                                     probs({0.25, 0.25, 0.20, 0.15, 0.15}),
                                     probs({0.40, 0.05, 0.30, 0.15, 0.10}),
                                     probs({0.20, 0.20, 0.25, 0.20, 0.15})};

    // exhaustive oracle: expected accuracy per view over all negative pairs
    auto beats = [&](const ProbVector& view, int c) {
        return view.probs[c] > view.probs[0] || (view.probs[c] == view.probs[0] && c < 0);
    };
    double expect = 0.0;
    for (const auto& view : views) {
        int sets = 0, wins = 0;
        for (int a = 1; a < K; ++a)
            for (int b = a + 1; b < K; ++b) {
                ++sets;
                int better = int(beats(view, a)) + int(beats(view, b));
                if (better < k) ++wins;
            }
        expect += double(wins) / double(sets);
    }
    expect /= double(views.size());

    NwayConfig cfg{n, k, 10000, 3, K};
    NwayResult r = nway_topk(gt, views, cfg);
    double stderr_mc = r.stddev / std::sqrt(double(cfg.trials));
    CHECK(std::abs(r.mean - expect) <= 3.0 * std::max(stderr_mc, 1e-6));
}

TEST_CASE("nway is monotone in k and deterministic in seed") {
    Rng rng(9);
    auto rand_probs = [&](int k) {
        Eigen::VectorXd p(k);
        for (int i = 0; i < k; ++i) p[i] = rng.uniform() + 0.01;
        p /= p.sum();
        return ProbVector{p};
    };
    ProbVector gt = rand_probs(6);
    std::vector<ProbVector> views;
    for (int i = 0; i < 6; ++i) views.push_back(rand_probs(6));

    double prev = -1.0;
    for (int k = 1; k <= 3; ++k) {
        NwayConfig cfg{4, k, 400, 5, 6};
        NwayResult r = nway_topk(gt, views, cfg);
        CHECK(r.mean >= prev);
        prev = r.mean;
    }

    NwayConfig cfg{4, 2, 400, 5, 6};
    CHECK(nway_topk(gt, views, cfg).mean == nway_topk(gt, views, cfg).mean);

    NwayConfig bad{7, 1, 10, 0, 6};
    CHECK_THROWS_AS(nway_topk(gt, views, bad), ValidationError);  // n > K
}

TEST_CASE("aggregate: means, stds, and incomplete view sets") {
    std::map<ViewKey, MetricValues> pv;
    const char* labels[] = {"front", "front-left", "left", "back", "right", "front-right"};

    // one object, six equal values
    for (const char* l : labels) pv[{"obj0", l}] = {{"clipscore", 0.5}};
    MetricReport r1 = aggregate(pv);
    CHECK(r1.per_object["obj0"]["clipscore"] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r1.global["clipscore"].first == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r1.global["clipscore"].second == doctest::Approx(0.0).epsilon(1e-12));

    // second object with per-object mean 0.8 against 0.2
    std::map<ViewKey, MetricValues> pv2;
    for (const char* l : labels) {
        pv2[{"a", l}] = {{"m", 0.2}};
        pv2[{"b", l}] = {{"m", 0.8}};
    }
    MetricReport r2 = aggregate(pv2);
    CHECK(r2.global["m"].first == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r2.global["m"].second == doctest::Approx(0.3).epsilon(1e-12));  // population std

    // missing "back" view is rejected, naming the view
    std::map<ViewKey, MetricValues> pv3 = pv2;
    pv3.erase({"b", "back"});
    CHECK_THROWS_WITH_AS(aggregate(pv3), doctest::Contains("back"), ValidationError);
}

TEST_CASE("aggregation is exactly linear in the per-view scores") {
    Rng rng(11);
    const char* labels[] = {"front", "front-left", "left", "back", "right", "front-right"};
    std::map<ViewKey, MetricValues> pv, scaled;
    const double alpha = 3.25;  // power-of-two-ish scale keeps fp exact
    for (int o = 0; o < 3; ++o) {
        for (const char* l : labels) {
            double v = rng.uniform();
            pv[{"o" + std::to_string(o), l}] = {{"m", v}};
            scaled[{"o" + std::to_string(o), l}] = {{"m", alpha * v}};
        }
    }
    MetricReport a = aggregate(pv);
    MetricReport b = aggregate(scaled);
    for (const auto& [obj, values] : a.per_object)
        CHECK(b.per_object[obj]["m"] == doctest::Approx(alpha * values.at("m")).epsilon(1e-12));
    CHECK(b.global["m"].first == doctest::Approx(alpha * a.global["m"].first).epsilon(1e-12));
}

TEST_CASE("per-object equals the mean of the six per-view scores on random inputs") {
    Rng rng(13);
    const char* labels[] = {"front", "front-left", "left", "back", "right", "front-right"};
    std::map<ViewKey, MetricValues> pv;
    std::map<std::string, double> sums;
    for (int o = 0; o < 4; ++o) {
        std::string obj = "obj" + std::to_string(o);
        for (const char* l : labels) {
            double v = rng.uniform() * 10.0 - 5.0;
            pv[{obj, l}] = {{"m", v}};
            sums[obj] += v;
        }
    }
    MetricReport r = aggregate(pv);
    for (const auto& [obj, total] : sums)
        CHECK(std::abs(r.per_object[obj]["m"] - total / 6.0) < 1e-9);
}

TEST_CASE("feature files round trip and feed the lookup embedder") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "b3d_fea";
    fs::remove_all(dir);
    std::vector<std::pair<std::string, Eigen::VectorXd>> rows = {
        {"img_a", (Eigen::VectorXd(3) << 1, 2, 3).finished()},
        {"img_b", (Eigen::VectorXd(3) << 4, 5, 6).finished()}};
    write_feature_file(rows, dir / "f.fea", dir / "f.ids");
    auto back = read_feature_file(dir / "f.fea", dir / "f.ids");
    REQUIRE(back.size() == 2);
    CHECK(back[0].first == "img_a");
    CHECK(testsupport::exact_equal(back[1].second, rows[1].second));

    FeatureFileEmbedder embedder(dir / "f.fea", dir / "f.ids");
    CHECK(testsupport::exact_equal(embedder.embed(tagged("img_a")), rows[0].second));
    CHECK_THROWS_AS(embedder.embed(tagged("missing")), ValidationError);
    fs::remove_all(dir);
}

TEST_CASE("probability vectors validate") {
    CHECK_NOTHROW(probs({0.5, 0.5}).validate());
    ProbVector bad;
    bad.probs = (Eigen::VectorXd(2) << 0.7, 0.7).finished();
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad.probs = (Eigen::VectorXd(2) << -0.5, 1.5).finished();
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

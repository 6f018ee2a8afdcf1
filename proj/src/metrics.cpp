#include "brain3d/metrics.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

namespace brain3d::metrics {

void ProbVector::validate() const {
    if (probs.size() == 0) throw ValidationError("empty probability vector");
    double sum = 0.0;
    for (long i = 0; i < probs.size(); ++i) {
        if (!(probs[i] >= 0.0)) throw ValidationError("probability entries must be >= 0");
        sum += probs[i];
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw ValidationError("probabilities sum to " + std::to_string(sum) + ", expected 1");
}

int ProbVector::argmax() const {
    int best = 0;
    for (long i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = int(i);
    return best;
}

void NwayConfig::validate() const {
    if (n < 2) throw ValidationError("n must be >= 2");
    if (k < 1 || k >= n) throw ValidationError("k must satisfy 1 <= k < n");
    if (trials < 1) throw ValidationError("trials must be >= 1");
    if (num_classes < n)
        throw ValidationError("n (" + std::to_string(n) + ") exceeds class count (" +
                              std::to_string(num_classes) + ")");
}

double clip_score(const Image& x, const Image& v, EmbeddingProvider& embedder) {
    Eigen::VectorXd fx = embedder.embed(x);
    Eigen::VectorXd fv = embedder.embed(v);
    if (fx.size() != fv.size()) throw DimensionError("embedding dimensions differ");
    if (!fx.allFinite() || !fv.allFinite()) throw ValidationError("non-finite embedding");
    double nx = fx.norm(), nv = fv.norm();
    if (nx < 1e-12 || nv < 1e-12) throw ValidationError("zero-norm embedding");
    return fx.dot(fv) / (nx * nv);
}

namespace {
// Unit-normalizes feature vectors along the channel axis at each spatial
// position; zero vectors stay zero.
void channel_normalize(const PerceptualFeatureProvider::Layer& layer, std::vector<double>& out) {
    out.assign(layer.data.size(), 0.0);
    long hw = long(layer.h) * layer.w;
    for (long p = 0; p < hw; ++p) {
        double norm2 = 0.0;
        for (int c = 0; c < layer.channels; ++c) {
            double v = layer.data[size_t(c * hw + p)];
            norm2 += v * v;
        }
        double norm = std::sqrt(norm2);
        if (norm < 1e-12) continue;
        for (int c = 0; c < layer.channels; ++c)
            out[size_t(c * hw + p)] = layer.data[size_t(c * hw + p)] / norm;
    }
}
}  // namespace

double lpips_distance(const Image& x, const Image& v, PerceptualFeatureProvider& features) {
    auto fx = features.features(x);
    auto fv = features.features(v);
    if (fx.empty()) throw ValidationError("feature provider returned no layers");
    if (fx.size() != fv.size()) throw DimensionError("layer counts differ between the two images");
    double total = 0.0;
    std::vector<double> nx, nv;
    for (size_t l = 0; l < fx.size(); ++l) {
        const auto& a = fx[l];
        const auto& b = fv[l];
        if (a.channels != b.channels || a.h != b.h || a.w != b.w)
            throw DimensionError("layer " + std::to_string(l) + " shapes differ");
        if (a.data.size() != size_t(a.channels) * a.h * a.w)
            throw DimensionError("layer " + std::to_string(l) + " buffer size mismatch");
        channel_normalize(a, nx);
        channel_normalize(b, nv);
        long hw = long(a.h) * a.w;
        double acc = 0.0;
        for (long p = 0; p < hw; ++p) {
            for (int c = 0; c < a.channels; ++c) {
                double d = nx[size_t(c * hw + p)] - nv[size_t(c * hw + p)];
                acc += d * d;
            }
        }
        total += a.weight * acc / double(hw);
    }
    return total;
}

std::pair<double, double> inception_score(const std::vector<Image>& views, ClassProbProvider& classifier,
                                          int splits) {
    if (splits < 1) throw ValidationError("splits must be >= 1");
    if (int(views.size()) < splits)
        throw ValidationError("need at least one image per split: " + std::to_string(views.size()) +
                              " images, " + std::to_string(splits) + " splits");
    std::vector<ProbVector> probs;
    probs.reserve(views.size());
    for (const auto& img : views) {
        ProbVector p = classifier.class_probs(img);
        p.validate();
        probs.push_back(std::move(p));
    }

    std::vector<double> scores;
    size_t n = probs.size();
    for (int s = 0; s < splits; ++s) {
        size_t lo = n * size_t(s) / size_t(splits);
        size_t hi = n * size_t(s + 1) / size_t(splits);
        Eigen::VectorXd marginal = Eigen::VectorXd::Zero(probs[0].probs.size());
        for (size_t i = lo; i < hi; ++i) marginal += probs[i].probs;
        marginal /= double(hi - lo);
        double mean_kl = 0.0;
        for (size_t i = lo; i < hi; ++i) {
            double kl = 0.0;
            for (long c = 0; c < marginal.size(); ++c) {
                double p = probs[i].probs[c];
                if (p > 0.0) kl += p * std::log(p / marginal[c]);
            }
            mean_kl += kl;
        }
        mean_kl /= double(hi - lo);
        scores.push_back(std::exp(mean_kl));
    }
    double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / double(scores.size());
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= double(scores.size());
    return {mean, std::sqrt(var)};
}

namespace {
Eigen::MatrixXd sqrt_spd(const Eigen::MatrixXd& m, double clamp_tol, FidStats* stats) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw Error("eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    double min_ev = ev.minCoeff();
    if (stats) stats->min_eigenvalue = std::min(stats->min_eigenvalue, min_ev);
    if (min_ev < -clamp_tol)
        throw ValidationError("matrix square root: eigenvalue " + std::to_string(min_ev) +
                              " below clamp tolerance");
    Eigen::VectorXd root = ev.cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

void mean_cov(const std::vector<Eigen::VectorXd>& set, Eigen::VectorXd& mu, Eigen::MatrixXd& sigma) {
    size_t n = set.size();
    long d = set[0].size();
    mu = Eigen::VectorXd::Zero(d);
    for (const auto& v : set) {
        if (v.size() != d) throw DimensionError("feature dimension mismatch within a set");
        mu += v;
    }
    mu /= double(n);
    sigma = Eigen::MatrixXd::Zero(d, d);
    for (const auto& v : set) {
        Eigen::VectorXd c = v - mu;
        sigma += c * c.transpose();
    }
    sigma /= double(n - 1);
}
}  // namespace

double fid(const std::vector<Eigen::VectorXd>& set_a, const std::vector<Eigen::VectorXd>& set_b,
           FidStats* stats) {
    if (set_a.size() < 2 || set_b.size() < 2)
        throw ValidationError("FID needs at least 2 samples per set");
    if (set_a[0].size() != set_b[0].size()) throw DimensionError("feature dimensions differ between sets");

    Eigen::VectorXd mu1, mu2;
    Eigen::MatrixXd s1, s2;
    mean_cov(set_a, mu1, s1);
    mean_cov(set_b, mu2, s2);

    constexpr double kClampTol = 1e-10;
    FidStats local;
    auto compute = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
        Eigen::MatrixXd ra = sqrt_spd(a, kClampTol, &local);
        Eigen::MatrixXd inner = ra * b * ra;
        inner = (inner + inner.transpose()) / 2.0;  // symmetrize fp noise
        return sqrt_spd(inner, kClampTol, &local);
    };

    Eigen::MatrixXd cross;
    local.min_eigenvalue = 0.0;
    cross = compute(s1, s2);
    if (local.min_eigenvalue < 0.0) {
        // small negative eigenvalues: regularize and redo, reported
        local.regularized = true;
        Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(s1.rows(), s1.cols());
        cross = compute(s1 + kClampTol * eye, s2 + kClampTol * eye);
    }
    if (stats) *stats = local;

    double d2 = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * cross.trace();
    return std::max(0.0, d2);
}

NwayResult nway_topk(const ProbVector& gt_probs, const std::vector<ProbVector>& view_probs,
                     const NwayConfig& cfg) {
    cfg.validate();
    gt_probs.validate();
    if (view_probs.empty()) throw ValidationError("no view probability vectors");
    for (const auto& p : view_probs) {
        p.validate();
        if (p.probs.size() != gt_probs.probs.size())
            throw DimensionError("view and ground-truth class counts differ");
    }
    if (int(gt_probs.probs.size()) != cfg.num_classes)
        throw DimensionError("probability vector length != configured class count");

    int positive = gt_probs.argmax();
    int k_classes = cfg.num_classes;
    size_t n_views = view_probs.size();

    Rng rng(sha256_seed("nway:" + std::to_string(cfg.seed)));
    std::vector<double> trial_acc(size_t(cfg.trials));
    std::vector<double> view_acc(n_views, 0.0);
    std::vector<int> candidates;
    for (int t = 0; t < cfg.trials; ++t) {
        double acc = 0.0;
        for (size_t vi = 0; vi < n_views; ++vi) {
            candidates.clear();
            candidates.push_back(positive);
            // n-1 distinct negatives, uniform without replacement
            while (int(candidates.size()) < cfg.n) {
                int c = int(rng.uniform_int(uint64_t(k_classes)));
                if (std::find(candidates.begin(), candidates.end(), c) == candidates.end())
                    candidates.push_back(c);
            }
            const Eigen::VectorXd& scores = view_probs[vi].probs;
            // rank of the positive: count candidates that strictly beat it,
            // ties resolved by ascending class index
            int better = 0;
            for (int c : candidates) {
                if (c == positive) continue;
                if (scores[c] > scores[positive] || (scores[c] == scores[positive] && c < positive))
                    ++better;
            }
            if (better < cfg.k) {
                acc += 1.0;
                view_acc[vi] += 1.0;
            }
        }
        trial_acc[size_t(t)] = acc / double(n_views);
    }
    for (auto& a : view_acc) a /= double(cfg.trials);

    NwayResult res;
    res.mean = std::accumulate(trial_acc.begin(), trial_acc.end(), 0.0) / double(trial_acc.size());
    double var = 0.0;
    for (double a : trial_acc) var += (a - res.mean) * (a - res.mean);
    res.stddev = std::sqrt(var / double(trial_acc.size()));
    res.per_view = std::move(view_acc);
    return res;
}

MetricReport aggregate(const std::map<ViewKey, MetricValues>& per_view_scores) {
    if (per_view_scores.empty()) throw ValidationError("no per-view scores to aggregate");

    std::set<std::string> labels;
    std::map<std::string, std::vector<const MetricValues*>> by_object;
    for (const auto& [key, values] : per_view_scores) {
        labels.insert(key.view_label);
        by_object[key.object_id].push_back(&values);
    }
    for (const auto& [obj, rows] : by_object) {
        std::set<std::string> got;
        for (const auto& [key, values] : per_view_scores)
            if (key.object_id == obj) got.insert(key.view_label);
        if (got != labels) {
            std::string missing;
            for (const auto& l : labels)
                if (!got.count(l)) missing += (missing.empty() ? "" : ", ") + l;
            throw ValidationError("object '" + obj + "' is missing views: " + missing);
        }
    }

    MetricReport report;
    report.per_view = per_view_scores;
    std::map<std::string, std::vector<double>> global_values;
    for (const auto& [obj, rows] : by_object) {
        MetricValues mean;
        for (const auto* row : rows) {
            for (const auto& [metric, value] : *row) mean[metric] += value;
        }
        for (auto& [metric, value] : mean) {
            value /= double(rows.size());
            global_values[metric].push_back(value);
        }
        report.per_object[obj] = std::move(mean);
    }
    for (const auto& [metric, values] : global_values) {
        double mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= double(values.size());
        report.global[metric] = {mean, std::sqrt(var)};
    }
    return report;
}

nlohmann::json report_json(const MetricReport& report) {
    nlohmann::json j;
    j["per_view"] = nlohmann::json::array();
    for (const auto& [key, values] : report.per_view) {
        nlohmann::json row;
        row["object_id"] = key.object_id;
        row["view_label"] = key.view_label;
        row["values"] = values;
        j["per_view"].push_back(row);
    }
    j["per_object"] = report.per_object;
    nlohmann::json g;
    for (const auto& [metric, ms] : report.global) g[metric] = {{"mean", ms.first}, {"std", ms.second}};
    j["global"] = g;
    nlohmann::json sl;
    for (const auto& [metric, ms] : report.set_level) sl[metric] = {{"mean", ms.first}, {"std", ms.second}};
    j["set_level"] = sl;
    j["settings"] = report.settings;
    return j;
}

// ---------------------------------------------------------------------------

HistogramEmbedder::HistogramEmbedder(int bins_per_channel) : bins_(bins_per_channel) {
    if (bins_ < 1) throw ValidationError("bins_per_channel must be >= 1");
}

Eigen::VectorXd HistogramEmbedder::embed(const Image& image) {
    image.validate();
    Eigen::VectorXd h = Eigen::VectorXd::Zero(3 * bins_);
    size_t n = image.pixels.size() / 3;
    for (size_t i = 0; i < image.pixels.size(); i += 3) {
        for (int c = 0; c < 3; ++c) {
            int bin = int(image.pixels[i + size_t(c)]) * bins_ / 256;
            h[c * bins_ + bin] += 1.0;
        }
    }
    return h / double(n);
}

std::string HistogramEmbedder::id() const {
    return "histogram-" + std::to_string(bins_);
}

GradientFeatureProvider::GradientFeatureProvider(int levels, int base_side)
    : levels_(levels), base_side_(base_side) {
    if (levels_ < 1 || base_side_ < 4) throw ValidationError("bad gradient feature configuration");
}

std::vector<PerceptualFeatureProvider::Layer> GradientFeatureProvider::features(const Image& image) {
    std::vector<Layer> out;
    int side = base_side_;
    for (int l = 0; l < levels_; ++l, side = std::max(4, side / 2)) {
        Image small = resize(image, side, side);
        std::vector<double> gray(size_t(side) * side);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                const uint8_t* p = small.at(x, y);
                gray[size_t(y) * side + x] = (p[0] + p[1] + p[2]) / (3.0 * 255.0);
            }
        Layer layer;
        layer.channels = 2;
        layer.h = side;
        layer.w = side;
        layer.weight = 1.0 / double(levels_);
        layer.data.assign(size_t(2) * side * side, 0.0);
        long hw = long(side) * side;
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                double gx = x + 1 < side ? gray[size_t(y) * side + x + 1] - gray[size_t(y) * side + x] : 0.0;
                double gy = y + 1 < side ? gray[size_t(y + 1) * side + x] - gray[size_t(y) * side + x] : 0.0;
                layer.data[size_t(y) * side + x] = gx;
                layer.data[size_t(hw) + size_t(y) * side + x] = gy;
            }
        out.push_back(std::move(layer));
    }
    return out;
}

std::string GradientFeatureProvider::id() const {
    return "gradient-" + std::to_string(levels_) + "x" + std::to_string(base_side_);
}

TemplateClassifier::TemplateClassifier(std::vector<Image> templates, double tau, int side)
    : tau_(tau), side_(side) {
    if (templates.empty()) throw ValidationError("template classifier needs templates");
    if (tau_ <= 0) throw ValidationError("tau must be positive");
    for (const auto& t : templates) {
        Image small = resize(t, side_, side_);
        Eigen::VectorXd v(long(small.pixels.size()));
        for (size_t i = 0; i < small.pixels.size(); ++i) v[long(i)] = small.pixels[i] / 255.0;
        templates_.push_back(std::move(v));
    }
}

ProbVector TemplateClassifier::class_probs(const Image& image) {
    Image small = resize(image, side_, side_);
    Eigen::VectorXd v(long(small.pixels.size()));
    for (size_t i = 0; i < small.pixels.size(); ++i) v[long(i)] = small.pixels[i] / 255.0;

    Eigen::VectorXd logits(long(templates_.size()));
    for (size_t c = 0; c < templates_.size(); ++c)
        logits[long(c)] = -(v - templates_[c]).squaredNorm() / double(v.size()) / tau_;
    double m = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - m).exp();
    ProbVector p;
    p.probs = e / e.sum();
    return p;
}

std::string TemplateClassifier::id() const {
    return "template-" + std::to_string(templates_.size()) + "c";
}

// ---------------------------------------------------------------------------

void write_feature_file(const std::vector<std::pair<std::string, Eigen::VectorXd>>& rows,
                        const std::filesystem::path& fea_path, const std::filesystem::path& ids_path) {
    if (rows.empty()) throw ValidationError("no feature rows to write");
    long dim = rows[0].second.size();
    std::vector<uint8_t> out;
    out.insert(out.end(), {'F', 'E', 'A', '1'});
    put_u32le(out, uint32_t(rows.size()));
    put_u32le(out, uint32_t(dim));
    std::string ids;
    for (const auto& [id, vec] : rows) {
        if (vec.size() != dim) throw DimensionError("inconsistent feature dimensions");
        for (long i = 0; i < dim; ++i) put_f32le(out, float(vec[i]));
        ids += id + "\n";
    }
    write_file_atomic(fea_path, out);
    write_file_atomic(ids_path, ids);
}

std::vector<std::pair<std::string, Eigen::VectorXd>> read_feature_file(
    const std::filesystem::path& fea_path, const std::filesystem::path& ids_path) {
    auto bytes = read_file(fea_path);
    const std::string origin = fea_path.string();
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "FEA1", 4) != 0)
        throw ParseError("bad magic, expected FEA1", origin, 1);
    uint32_t count = get_u32le(bytes.data() + 4);
    uint32_t dim = get_u32le(bytes.data() + 8);
    if (bytes.size() < 12 + size_t(count) * dim * 4)
        throw ParseError("truncated feature matrix", origin, 1);

    std::vector<std::string> ids;
    {
        std::ifstream in(ids_path);
        if (!in) throw IoError("cannot open id list: " + ids_path.string());
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) ids.push_back(line);
    }
    if (ids.size() != count)
        throw ParseError("id list has " + std::to_string(ids.size()) + " entries, feature file has " +
                             std::to_string(count),
                         ids_path.string(), 1);

    std::vector<std::pair<std::string, Eigen::VectorXd>> rows;
    const uint8_t* p = bytes.data() + 12;
    for (uint32_t r = 0; r < count; ++r) {
        Eigen::VectorXd v(dim);
        for (uint32_t i = 0; i < dim; ++i) {
            v[i] = double(get_f32le(p));
            p += 4;
        }
        rows.emplace_back(ids[r], std::move(v));
    }
    return rows;
}

FeatureFileEmbedder::FeatureFileEmbedder(const std::filesystem::path& fea_path,
                                         const std::filesystem::path& ids_path, std::string id)
    : id_(std::move(id)) {
    for (auto& [rid, vec] : read_feature_file(fea_path, ids_path)) rows_[rid] = std::move(vec);
}

Eigen::VectorXd FeatureFileEmbedder::embed(const Image& image) {
    auto it = rows_.find(image.image_id);
    if (it == rows_.end())
        throw ValidationError("no precomputed feature for image id '" + image.image_id + "'");
    return it->second;
}

}  // namespace brain3d::metrics

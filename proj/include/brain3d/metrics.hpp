#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "brain3d/image.hpp"

#include "json.hpp"

namespace brain3d::metrics {

struct ProbVector {
    Eigen::VectorXd probs;

    void validate() const;  // entries >= 0, sum 1 within 1e-6
    int argmax() const;
};

struct NwayConfig {
    int n = 2;
    int k = 1;
    int trials = 20;
    uint64_t seed = 0;
    int num_classes = 0;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Pluggable feature / classifier providers.

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual Eigen::VectorXd embed(const Image& image) = 0;
    virtual std::string id() const = 0;
};

class PerceptualFeatureProvider {
public:
    struct Layer {
        int channels = 0;
        int h = 0;
        int w = 0;
        std::vector<double> data;  // channel-major: data[c*h*w + y*w + x]
        double weight = 1.0;
    };
    virtual ~PerceptualFeatureProvider() = default;
    virtual std::vector<Layer> features(const Image& image) = 0;
    virtual std::string id() const = 0;
};

class ClassProbProvider {
public:
    virtual ~ClassProbProvider() = default;
    virtual ProbVector class_probs(const Image& image) = 0;
    virtual int num_classes() const = 0;
    virtual std::string id() const = 0;
};

// ---------------------------------------------------------------------------
// Metrics.

// Cosine similarity of the two image embeddings, in [-1, 1].
double clip_score(const Image& x, const Image& v, EmbeddingProvider& embedder);

// Sum over layers of weight * spatial mean of squared distance between
// channel-unit-normalized features.
double lpips_distance(const Image& x, const Image& v, PerceptualFeatureProvider& features);

// Mean/std over `splits` chunks of exp(mean KL(p(y|x) || p_bar)).
std::pair<double, double> inception_score(const std::vector<Image>& views, ClassProbProvider& classifier,
                                          int splits = 10);

struct FidStats {
    bool regularized = false;
    double min_eigenvalue = 0.0;
};

// Frechet distance between Gaussian fits of the two feature sets.
// Covariances use 1/(N-1); the matrix square root goes through the
// symmetric eigendecomposition of S1^(1/2) S2 S1^(1/2); eigenvalues below
// -1e-10 are an error, small negatives trigger a reported +1e-10*I retry.
double fid(const std::vector<Eigen::VectorXd>& set_a, const std::vector<Eigen::VectorXd>& set_b,
           FidStats* stats = nullptr);

struct NwayResult {
    double mean = 0.0;
    double stddev = 0.0;             // population std over trials
    std::vector<double> per_view;    // mean accuracy per view
};

// Classifier-based n-way top-k protocol: per trial and view, rank the
// positive class against n-1 sampled negatives by the view's class
// probabilities (ties broken by ascending class index), count success if
// the positive lands in the top k, average over the views per trial.
NwayResult nway_topk(const ProbVector& gt_probs, const std::vector<ProbVector>& view_probs,
                     const NwayConfig& cfg);

// ---------------------------------------------------------------------------
// Aggregation: per-view -> per-object -> global.

struct ViewKey {
    std::string object_id;
    std::string view_label;
    auto operator<=>(const ViewKey&) const = default;
};

using MetricValues = std::map<std::string, double>;

struct MetricReport {
    std::map<ViewKey, MetricValues> per_view;
    std::map<std::string, MetricValues> per_object;                    // mean over views
    std::map<std::string, std::pair<double, double>> global;           // mean/std over objects
    std::map<std::string, std::pair<double, double>> set_level;        // is, fid
    nlohmann::json settings;
};

// Builds per-object and global blocks; every object must contribute the
// same view-label set.
MetricReport aggregate(const std::map<ViewKey, MetricValues>& per_view_scores);

nlohmann::json report_json(const MetricReport& report);

// ---------------------------------------------------------------------------
// Toy deterministic providers for hermetic runs.

// Per-channel intensity histogram, L1-normalized per channel.
class HistogramEmbedder : public EmbeddingProvider {
public:
    explicit HistogramEmbedder(int bins_per_channel = 4);
    Eigen::VectorXd embed(const Image& image) override;
    std::string id() const override;

private:
    int bins_;
};

// Multiscale finite-difference gradients: per level a 2-channel (dx, dy)
// map on a box-downsampled grayscale image.
class GradientFeatureProvider : public PerceptualFeatureProvider {
public:
    explicit GradientFeatureProvider(int levels = 3, int base_side = 32);
    std::vector<Layer> features(const Image& image) override;
    std::string id() const override;

private:
    int levels_;
    int base_side_;
};

// Softmax over negative mean-squared distance to class template images.
class TemplateClassifier : public ClassProbProvider {
public:
    TemplateClassifier(std::vector<Image> templates, double tau = 0.05, int side = 16);
    ProbVector class_probs(const Image& image) override;
    int num_classes() const override { return int(templates_.size()); }
    std::string id() const override;

private:
    std::vector<Eigen::VectorXd> templates_;
    double tau_;
    int side_;
};

// ---------------------------------------------------------------------------
// Precomputed-feature files: "FEA1", u32 count, u32 dim, row-major
// little-endian float32, plus a text id list (one id per line).

void write_feature_file(const std::vector<std::pair<std::string, Eigen::VectorXd>>& rows,
                        const std::filesystem::path& fea_path, const std::filesystem::path& ids_path);
std::vector<std::pair<std::string, Eigen::VectorXd>> read_feature_file(
    const std::filesystem::path& fea_path, const std::filesystem::path& ids_path);

// Embedding lookups by image_id from a precomputed-feature file.
class FeatureFileEmbedder : public EmbeddingProvider {
public:
    FeatureFileEmbedder(const std::filesystem::path& fea_path, const std::filesystem::path& ids_path,
                        std::string id = "feature-file");
    Eigen::VectorXd embed(const Image& image) override;
    std::string id() const override { return id_; }

private:
    std::map<std::string, Eigen::VectorXd> rows_;
    std::string id_;
};

}  // namespace brain3d::metrics

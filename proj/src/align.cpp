#include "brain3d/align.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace brain3d::align {

namespace {
constexpr double kNormFloor = 1e-12;

Eigen::VectorXd flatten_trial(const data::EegTrial& trial) {
    Eigen::VectorXd v(long(trial.channels()) * trial.samples());
    long k = 0;
    for (int c = 0; c < trial.channels(); ++c)
        for (int s = 0; s < trial.samples(); ++s) v[k++] = double(trial.data(c, s));
    return v;
}

double logsumexp(const Eigen::VectorXd& v) {
    double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
}
}  // namespace

void Embedding::check_normalized() const {
    if (!normalized || std::abs(values.norm() - 1.0) > 1e-6)
        throw ValidationError("embedding is not unit-normalized");
}

void AlignConfig::validate() const {
    if (temperature <= 0) throw ValidationError("temperature must be positive");
    if (learning_rate < 0) throw ValidationError("learning_rate must be non-negative");
    if (embed_dim <= 0 || cond_dim <= 0 || hidden_eeg <= 0 || hidden_img <= 0 || image_side <= 0)
        throw ValidationError("all dimensions must be positive");
    if (batch_size < 2) throw ValidationError("batch_size must be at least 2");
    if (epochs < 0) throw ValidationError("epochs must be non-negative");
}

long Mlp2::param_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size();
}

namespace {
Mlp2 init_mlp(int in, int hidden, int out, Rng& rng) {
    Mlp2 net;
    net.w1.resize(hidden, in);
    net.b1 = Eigen::VectorXd::Zero(hidden);
    net.w2.resize(out, hidden);
    net.b2 = Eigen::VectorXd::Zero(out);
    double s1 = 1.0 / std::sqrt(double(in));
    for (long i = 0; i < net.w1.rows(); ++i)
        for (long j = 0; j < net.w1.cols(); ++j) net.w1(i, j) = rng.normal() * s1;
    double s2 = 1.0 / std::sqrt(double(hidden));
    for (long i = 0; i < net.w2.rows(); ++i)
        for (long j = 0; j < net.w2.cols(); ++j) net.w2(i, j) = rng.normal() * s2;
    return net;
}
}  // namespace

AlignParams init_params(const AlignConfig& cfg, int eeg_channels, int eeg_samples) {
    cfg.validate();
    if (eeg_channels <= 0 || eeg_samples <= 0) throw ValidationError("EEG dims must be positive");
    AlignParams p;
    p.config = cfg;
    p.eeg_channels = eeg_channels;
    p.eeg_samples = eeg_samples;
    Rng rng(sha256_seed("align-init:" + std::to_string(cfg.seed)));
    p.eeg = init_mlp(eeg_channels * eeg_samples, cfg.hidden_eeg, cfg.embed_dim, rng);
    p.img = init_mlp(cfg.image_side * cfg.image_side * 3, cfg.hidden_img, cfg.embed_dim, rng);
    if (cfg.cond_dim == cfg.embed_dim) {
        p.proj_w = Eigen::MatrixXd::Identity(cfg.cond_dim, cfg.embed_dim);
    } else {
        p.proj_w.resize(cfg.cond_dim, cfg.embed_dim);
        double s = 1.0 / std::sqrt(double(cfg.embed_dim));
        for (long i = 0; i < p.proj_w.rows(); ++i)
            for (long j = 0; j < p.proj_w.cols(); ++j) p.proj_w(i, j) = rng.normal() * s;
    }
    p.proj_b = Eigen::VectorXd::Zero(cfg.cond_dim);
    return p;
}

Embedding encode_vector(const Eigen::VectorXd& input, const Mlp2& net) {
    if (input.size() != net.w1.cols())
        throw DimensionError("encoder input has dimension " + std::to_string(input.size()) + ", expected " +
                             std::to_string(net.w1.cols()));
    Eigen::VectorXd h = (net.w1 * input + net.b1).array().tanh();
    Eigen::VectorXd v = net.w2 * h + net.b2;
    Embedding e;
    double n = v.norm();
    if (n < kNormFloor) {
        e.values = Eigen::VectorXd::Zero(v.size());
        e.values[0] = 1.0;
        e.degenerate = true;
    } else {
        e.values = v / n;
    }
    e.normalized = true;
    return e;
}

Embedding encode_eeg(const data::EegTrial& trial, const AlignParams& params) {
    trial.validate();
    if (trial.channels() != params.eeg_channels || trial.samples() != params.eeg_samples)
        throw DimensionError("trial dims (" + std::to_string(trial.channels()) + "," +
                             std::to_string(trial.samples()) + ") do not match encoder (" +
                             std::to_string(params.eeg_channels) + "," + std::to_string(params.eeg_samples) +
                             ")");
    return encode_vector(flatten_trial(trial), params.eeg);
}

Embedding encode_image(const Image& image, const AlignParams& params) {
    return encode_vector(centered_pixel_vector(image, params.config.image_side), params.img);
}

ConditioningVector align_project(const Embedding& z_eeg, const AlignParams& params) {
    if (z_eeg.values.size() != params.proj_w.cols())
        throw DimensionError("embedding dim " + std::to_string(z_eeg.values.size()) +
                             " does not match alignment operator input " +
                             std::to_string(params.proj_w.cols()));
    Eigen::VectorXd v = params.proj_w * z_eeg.values + params.proj_b;
    double n = v.norm();
    if (n > 1.0) v /= n;
    return ConditioningVector{std::move(v)};
}

double contrastive_loss(std::span<const Embedding> batch_eeg, std::span<const Embedding> batch_img,
                        double temperature) {
    if (batch_eeg.size() != batch_img.size())
        throw DimensionError("batch length mismatch");
    size_t b = batch_eeg.size();
    if (b < 2) throw ValidationError("contrastive loss needs a batch of at least 2");
    if (temperature <= 0) throw ValidationError("temperature must be positive");
    for (const auto& e : batch_eeg) e.check_normalized();
    for (const auto& e : batch_img) e.check_normalized();

    long n = long(b);
    Eigen::MatrixXd sim(n, n);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < n; ++j)
            sim(i, j) = batch_eeg[size_t(i)].values.dot(batch_img[size_t(j)].values) / temperature;

    double loss = 0.0;
    for (long i = 0; i < n; ++i) {
        loss += logsumexp(sim.row(i)) - sim(i, i);        // EEG -> image
        loss += logsumexp(sim.col(i)) - sim(i, i);        // image -> EEG
    }
    return loss / (2.0 * double(n));
}

namespace {
struct ForwardCache {
    Eigen::MatrixXd inputs;   // in x B
    Eigen::MatrixXd hidden;   // hidden x B (post-tanh)
    Eigen::MatrixXd pre;      // out x B (pre-norm)
    Eigen::MatrixXd z;        // out x B (unit)
    Eigen::VectorXd norms;    // B
};

ForwardCache forward_batch(const std::vector<Eigen::VectorXd>& inputs, const Mlp2& net) {
    long b = long(inputs.size());
    ForwardCache c;
    c.inputs.resize(net.w1.cols(), b);
    for (long i = 0; i < b; ++i) {
        if (inputs[size_t(i)].size() != net.w1.cols()) throw DimensionError("batch input dim mismatch");
        c.inputs.col(i) = inputs[size_t(i)];
    }
    c.hidden = ((net.w1 * c.inputs).colwise() + net.b1).array().tanh();
    c.pre = (net.w2 * c.hidden).colwise() + net.b2;
    c.z.resize(c.pre.rows(), b);
    c.norms.resize(b);
    for (long i = 0; i < b; ++i) {
        double n = c.pre.col(i).norm();
        c.norms[i] = n;
        if (n < kNormFloor) {
            c.z.col(i).setZero();
            c.z(0, i) = 1.0;
        } else {
            c.z.col(i) = c.pre.col(i) / n;
        }
    }
    return c;
}

void backward_batch(const ForwardCache& c, const Mlp2& net, const Eigen::MatrixXd& grad_z, Mlp2& grad) {
    long b = c.z.cols();
    Eigen::MatrixXd grad_pre(c.pre.rows(), b);
    for (long i = 0; i < b; ++i) {
        if (c.norms[i] < kNormFloor) {
            grad_pre.col(i).setZero();  // basis fallback is constant
            continue;
        }
        const auto z = c.z.col(i);
        const auto g = grad_z.col(i);
        grad_pre.col(i) = (g - z * z.dot(g)) / c.norms[i];
    }
    grad.w2 = grad_pre * c.hidden.transpose();
    grad.b2 = grad_pre.rowwise().sum();
    Eigen::MatrixXd grad_hidden = net.w2.transpose() * grad_pre;
    Eigen::MatrixXd grad_a1 = grad_hidden.array() * (1.0 - c.hidden.array().square());
    grad.w1 = grad_a1 * c.inputs.transpose();
    grad.b1 = grad_a1.rowwise().sum();
}
}  // namespace

double contrastive_loss_grad(const std::vector<Eigen::VectorXd>& eeg_inputs,
                             const std::vector<Eigen::VectorXd>& img_inputs, const AlignParams& params,
                             double temperature, Gradients& grads) {
    if (eeg_inputs.size() != img_inputs.size()) throw DimensionError("batch length mismatch");
    long b = long(eeg_inputs.size());
    if (b < 2) throw ValidationError("contrastive loss needs a batch of at least 2");
    if (temperature <= 0) throw ValidationError("temperature must be positive");

    ForwardCache ce = forward_batch(eeg_inputs, params.eeg);
    ForwardCache ci = forward_batch(img_inputs, params.img);

    Eigen::MatrixXd sim = (ce.z.transpose() * ci.z) / temperature;  // b x b

    Eigen::MatrixXd p_row(b, b), p_col(b, b);
    double loss = 0.0;
    for (long i = 0; i < b; ++i) {
        Eigen::VectorXd row = sim.row(i);
        double lse = logsumexp(row);
        loss += lse - sim(i, i);
        p_row.row(i) = (row.array() - lse).exp();
        Eigen::VectorXd col = sim.col(i);
        lse = logsumexp(col);
        loss += lse - sim(i, i);
        p_col.col(i) = (col.array() - lse).exp();
    }
    loss /= 2.0 * double(b);

    Eigen::MatrixXd g = (p_row + p_col - 2.0 * Eigen::MatrixXd::Identity(b, b)) / (2.0 * double(b) * temperature);
    Eigen::MatrixXd grad_ze = ci.z * g.transpose();  // D x b
    Eigen::MatrixXd grad_zi = ce.z * g;              // D x b

    backward_batch(ce, params.eeg, grad_ze, grads.eeg);
    backward_batch(ci, params.img, grad_zi, grads.img);
    return loss;
}

namespace {
void sgd_step(Mlp2& net, const Mlp2& grad, double lr) {
    net.w1 -= lr * grad.w1;
    net.b1 -= lr * grad.b1;
    net.w2 -= lr * grad.w2;
    net.b2 -= lr * grad.b2;
}
}  // namespace

TrainResult train_alignment(const std::vector<std::pair<data::EegTrial, Image>>& train_pairs,
                            const AlignConfig& cfg) {
    cfg.validate();
    if (train_pairs.empty()) throw ValidationError("train split is empty");
    int channels = train_pairs.front().first.channels();
    int samples = train_pairs.front().first.samples();

    std::vector<Eigen::VectorXd> eeg_vecs, img_vecs;
    eeg_vecs.reserve(train_pairs.size());
    img_vecs.reserve(train_pairs.size());
    for (const auto& [trial, image] : train_pairs) {
        if (trial.channels() != channels || trial.samples() != samples)
            throw DimensionError("inconsistent trial dimensions in training set");
        eeg_vecs.push_back(flatten_trial(trial));
        img_vecs.push_back(centered_pixel_vector(image, cfg.image_side));
    }

    TrainResult result;
    result.params = init_params(cfg, channels, samples);
    Gradients grads;

    size_t n = train_pairs.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng(sha256_seed("align-shuffle:" + std::to_string(cfg.seed)));

    auto epoch_pass = [&](bool update) {
        double total = 0.0;
        int batches = 0;
        for (size_t start = 0; start + 2 <= n; start += size_t(cfg.batch_size)) {
            size_t end = std::min(n, start + size_t(cfg.batch_size));
            if (end - start < 2) break;
            std::vector<Eigen::VectorXd> be, bi;
            for (size_t i = start; i < end; ++i) {
                be.push_back(eeg_vecs[order[i]]);
                bi.push_back(img_vecs[order[i]]);
            }
            double loss = contrastive_loss_grad(be, bi, result.params, cfg.temperature, grads);
            if (!std::isfinite(loss))
                throw DivergenceError("alignment training loss became non-finite");
            total += loss;
            ++batches;
            if (update) {
                sgd_step(result.params.eeg, grads.eeg, cfg.learning_rate);
                sgd_step(result.params.img, grads.img, cfg.learning_rate);
            }
        }
        return total / std::max(1, batches);
    };

    // The loss curve is measured over one fixed, class-mixed batch partition
    // so it is comparable across epochs; training batches are reshuffled.
    // (Datasets arrive grouped by class; unmixed batches would pin the loss
    // at its ln(B) duplicate floor.)
    std::vector<size_t> canonical = order;
    {
        Rng eval_rng(sha256_seed("align-eval-order:" + std::to_string(cfg.seed)));
        for (size_t i = n; i > 1; --i) {
            size_t j = size_t(eval_rng.uniform_int(i));
            std::swap(canonical[i - 1], canonical[j]);
        }
    }
    auto eval_loss = [&] {
        std::swap(order, canonical);
        double loss = epoch_pass(false);
        std::swap(order, canonical);
        return loss;
    };

    result.epoch_losses.push_back(eval_loss());
    for (int e = 0; e < cfg.epochs; ++e) {
        for (size_t i = n; i > 1; --i) {
            size_t j = size_t(shuffle_rng.uniform_int(i));
            std::swap(order[i - 1], order[j]);
        }
        epoch_pass(true);
        result.epoch_losses.push_back(eval_loss());
    }
    return result;
}

TrainResult train_alignment(const data::Manifest& manifest, const AlignConfig& cfg) {
    std::vector<std::pair<data::EegTrial, Image>> pairs;
    for (const auto& e : manifest.entries) {
        if (e.split != data::Split::train) continue;
        data::EegTrial t = data::read_eeg(manifest.resolve(e.eeg_path));
        t.trial_id = e.trial_id;
        t.class_label = e.class_label;
        t.subject_id = e.subject_id;
        Image img = read_ppm(manifest.resolve(e.image_path));
        img.class_label = e.class_label;
        pairs.emplace_back(std::move(t), std::move(img));
    }
    if (pairs.empty()) throw ValidationError("manifest has no train-split entries");
    return train_alignment(pairs, cfg);
}

namespace {
void append_matrix(std::vector<uint8_t>& out, const Eigen::MatrixXd& m) {
    for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) put_f32le(out, float(m(i, j)));
}
void append_vector(std::vector<uint8_t>& out, const Eigen::VectorXd& v) {
    for (long i = 0; i < v.size(); ++i) put_f32le(out, float(v[i]));
}
const uint8_t* read_matrix(const uint8_t* p, Eigen::MatrixXd& m) {
    for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) {
            m(i, j) = double(get_f32le(p));
            p += 4;
        }
    return p;
}
const uint8_t* read_vector(const uint8_t* p, Eigen::VectorXd& v) {
    for (long i = 0; i < v.size(); ++i) {
        v[i] = double(get_f32le(p));
        p += 4;
    }
    return p;
}
}  // namespace

void save_checkpoint(const AlignParams& params, const std::filesystem::path& path) {
    std::vector<uint8_t> out;
    out.insert(out.end(), {'A', 'L', 'N', '1'});
    std::vector<uint32_t> dims = {uint32_t(params.eeg_channels),    uint32_t(params.eeg_samples),
                                  uint32_t(params.config.image_side), uint32_t(params.config.embed_dim),
                                  uint32_t(params.config.cond_dim),  uint32_t(params.config.hidden_eeg),
                                  uint32_t(params.config.hidden_img)};
    put_u32le(out, uint32_t(dims.size()));
    for (uint32_t d : dims) put_u32le(out, d);
    uint64_t count = uint64_t(params.eeg.param_count() + params.img.param_count() + params.proj_w.size() +
                              params.proj_b.size());
    put_u32le(out, uint32_t(count & 0xffffffff));
    put_u32le(out, uint32_t(count >> 32));
    for (const Mlp2* net : {&params.eeg, &params.img}) {
        append_matrix(out, net->w1);
        append_vector(out, net->b1);
        append_matrix(out, net->w2);
        append_vector(out, net->b2);
    }
    append_matrix(out, params.proj_w);
    append_vector(out, params.proj_b);
    write_file_atomic(path, out);
}

AlignParams load_checkpoint(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    const std::string origin = path.string();
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "ALN1", 4) != 0)
        throw ParseError("bad magic, expected ALN1", origin, 1);
    uint32_t ndims = get_u32le(bytes.data() + 4);
    if (ndims != 7) throw ParseError("unexpected header dim count", origin, 1);
    size_t pos = 8;
    auto next_u32 = [&]() {
        uint32_t v = get_u32le(bytes.data() + pos);
        pos += 4;
        return v;
    };
    AlignParams p;
    p.eeg_channels = int(next_u32());
    p.eeg_samples = int(next_u32());
    p.config.image_side = int(next_u32());
    p.config.embed_dim = int(next_u32());
    p.config.cond_dim = int(next_u32());
    p.config.hidden_eeg = int(next_u32());
    p.config.hidden_img = int(next_u32());
    uint64_t count = uint64_t(next_u32());
    count |= uint64_t(next_u32()) << 32;

    p.eeg.w1.resize(p.config.hidden_eeg, p.eeg_channels * p.eeg_samples);
    p.eeg.b1.resize(p.config.hidden_eeg);
    p.eeg.w2.resize(p.config.embed_dim, p.config.hidden_eeg);
    p.eeg.b2.resize(p.config.embed_dim);
    p.img.w1.resize(p.config.hidden_img, p.config.image_side * p.config.image_side * 3);
    p.img.b1.resize(p.config.hidden_img);
    p.img.w2.resize(p.config.embed_dim, p.config.hidden_img);
    p.img.b2.resize(p.config.embed_dim);
    p.proj_w.resize(p.config.cond_dim, p.config.embed_dim);
    p.proj_b.resize(p.config.cond_dim);

    uint64_t expect = uint64_t(p.eeg.param_count() + p.img.param_count() + p.proj_w.size() + p.proj_b.size());
    if (count != expect) throw ParseError("parameter count mismatch", origin, 1);
    if (bytes.size() < pos + count * 4) throw ParseError("truncated parameter blob", origin, 1);

    const uint8_t* ptr = bytes.data() + pos;
    for (Mlp2* net : {&p.eeg, &p.img}) {
        ptr = read_matrix(ptr, net->w1);
        ptr = read_vector(ptr, net->b1);
        ptr = read_matrix(ptr, net->w2);
        ptr = read_vector(ptr, net->b2);
    }
    ptr = read_matrix(ptr, p.proj_w);
    read_vector(ptr, p.proj_b);
    return p;
}

void write_loss_curve(const std::vector<double>& losses, const std::filesystem::path& path) {
    std::string out;
    for (size_t i = 0; i < losses.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%zu %.9g\n", i, losses[i]);
        out += buf;
    }
    write_file_atomic(path, out);
}

double retrieval_accuracy(const std::vector<data::EegTrial>& trials, const std::vector<Image>& class_images,
                          const AlignParams& params, int ways, uint64_t seed) {
    if (trials.empty()) throw ValidationError("no trials for retrieval");
    int k = int(class_images.size());
    if (ways < 2 || ways > k) throw ValidationError("ways must be in [2, class count]");

    std::vector<Embedding> img_emb;
    img_emb.reserve(class_images.size());
    for (const auto& img : class_images) img_emb.push_back(encode_image(img, params));

    int correct = 0;
    for (size_t idx = 0; idx < trials.size(); ++idx) {
        const auto& trial = trials[idx];
        Embedding z = encode_eeg(trial, params);
        std::vector<int> candidates = {trial.class_label};
        Rng rng(sha256_seed("retrieval:" + std::to_string(seed) + ":" + trial.trial_id));
        while (int(candidates.size()) < ways) {
            int c = int(rng.uniform_int(uint64_t(k)));
            if (std::find(candidates.begin(), candidates.end(), c) == candidates.end())
                candidates.push_back(c);
        }
        int best = candidates[0];
        double best_sim = -2.0;
        for (int c : candidates) {
            double s = z.values.dot(img_emb[size_t(c)].values);
            if (s > best_sim || (s == best_sim && c < best)) {
                best_sim = s;
                best = c;
            }
        }
        if (best == trial.class_label) ++correct;
    }
    return double(correct) / double(trials.size());
}

}  // namespace brain3d::align

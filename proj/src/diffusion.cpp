#include "brain3d/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace brain3d::diff {

std::vector<double> DiffusionConfig::betas() const {
    if (!beta_override.empty()) return beta_override;
    std::vector<double> b(static_cast<size_t>(timesteps));
    if (timesteps == 1) {
        b[0] = beta_end;
        return b;
    }
    for (int t = 0; t < timesteps; ++t)
        b[size_t(t)] = beta_start + (beta_end - beta_start) * double(t) / double(timesteps - 1);
    return b;
}

std::vector<double> DiffusionConfig::alpha_bars() const {
    auto b = betas();
    std::vector<double> abar(b.size() + 1);
    abar[0] = 1.0;
    for (size_t t = 0; t < b.size(); ++t) abar[t + 1] = abar[t] * (1.0 - b[t]);
    return abar;
}

void DiffusionConfig::validate() const {
    if (timesteps < 1) throw ValidationError("timesteps must be >= 1");
    if (guidance_scale < 0) throw ValidationError("guidance_scale must be >= 0");
    if (drop_prob < 0 || drop_prob > 1) throw ValidationError("drop_prob must be in [0, 1]");
    if (image_side <= 0 || channels <= 0 || cond_dim <= 0 || temb_dim <= 0 || hidden <= 0)
        throw ValidationError("all dimensions must be positive");
    auto b = betas();
    if (int(b.size()) != timesteps) throw ValidationError("beta schedule length != timesteps");
    for (size_t t = 0; t < b.size(); ++t) {
        if (!(b[t] > 0.0 && b[t] < 1.0)) throw ValidationError("beta values must lie in (0, 1)");
        if (t > 0 && b[t] < b[t - 1]) throw ValidationError("beta schedule must be non-decreasing");
    }
}

long DenoiserParams::param_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size() + null_token.size();
}

DenoiserParams init_denoiser(const DiffusionConfig& cfg) {
    cfg.validate();
    DenoiserParams p;
    p.image_side = cfg.image_side;
    p.channels = cfg.channels;
    p.cond_dim = cfg.cond_dim;
    p.temb_dim = cfg.temb_dim;
    int in = cfg.data_dim() + cfg.temb_dim + cfg.cond_dim;
    p.w1.setZero(cfg.hidden, in);
    p.b1 = Eigen::VectorXd::Zero(cfg.hidden);
    p.w2.setZero(cfg.data_dim(), cfg.hidden);
    p.b2 = Eigen::VectorXd::Zero(cfg.data_dim());
    p.null_token = Eigen::VectorXd::Zero(cfg.cond_dim);

    Rng rng(sha256_seed("denoiser-init:" + std::to_string(cfg.seed)));
    double s1 = 1.0 / std::sqrt(double(in));
    // conditioning columns stay zero; see header note
    int data_temb = cfg.data_dim() + cfg.temb_dim;
    for (long i = 0; i < p.w1.rows(); ++i)
        for (long j = 0; j < data_temb; ++j) p.w1(i, j) = rng.normal() * s1;
    double s2 = 1.0 / std::sqrt(double(cfg.hidden));
    for (long i = 0; i < p.w2.rows(); ++i)
        for (long j = 0; j < p.w2.cols(); ++j) p.w2(i, j) = rng.normal() * s2;
    return p;
}

Eigen::VectorXd time_embedding(int t, int timesteps, int temb_dim) {
    Eigen::VectorXd e(temb_dim);
    double tv = double(t) / double(std::max(1, timesteps));
    for (int i = 0; i < temb_dim; ++i) {
        double freq = std::pow(2.0, double(i / 2)) * M_PI;
        e[i] = (i % 2 == 0) ? std::sin(tv * freq) : std::cos(tv * freq);
    }
    return e;
}

NoisySample forward_noise(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                          const DiffusionConfig& cfg) {
    if (t < 0 || t > cfg.timesteps)
        throw ValidationError("timestep " + std::to_string(t) + " outside [0, " +
                              std::to_string(cfg.timesteps) + "]");
    if (eps.size() != x0.size()) throw DimensionError("noise shape does not match x0");
    auto abar = cfg.alpha_bars();
    NoisySample s;
    s.t = t;
    if (t == 0) {
        s.x = x0;  // abar_0 = 1 exactly
        return s;
    }
    double a = abar[size_t(t)];
    s.x = std::sqrt(a) * x0 + std::sqrt(1.0 - a) * eps;
    return s;
}

namespace {
Eigen::VectorXd assemble_input(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd* z_c,
                               const DenoiserParams& params, const DiffusionConfig& cfg) {
    if (x_t.size() != cfg.data_dim()) throw DimensionError("x_t has wrong dimension");
    const Eigen::VectorXd& cond = z_c ? *z_c : params.null_token;
    if (cond.size() != params.cond_dim) throw DimensionError("conditioning vector has wrong dimension");
    Eigen::VectorXd in(x_t.size() + params.temb_dim + params.cond_dim);
    in << x_t, time_embedding(t, cfg.timesteps, params.temb_dim), cond;
    return in;
}
}  // namespace

namespace {
// The dense net predicts the bounded clean image x0_hat; epsilon comes out
// of the forward-process algebra. A plain tanh net cannot carry the steep
// x_t / sqrt(1-abar_t) component of direct epsilon regression.
Eigen::VectorXd x0_net(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd* z_c,
                       const DenoiserParams& params, const DiffusionConfig& cfg) {
    Eigen::VectorXd in = assemble_input(x_t, t, z_c, params, cfg);
    Eigen::VectorXd h = (params.w1 * in + params.b1).array().tanh();
    return params.w2 * h + params.b2;
}

// eps_hat = (x_t - sqrt(abar_t) x0_hat) / sqrt(1 - abar_t); at t = 0 the
// forward process is the identity and epsilon is unconstrained (zero).
void eps_coefficients(int t, const DiffusionConfig& cfg, double& inv_sig, double& gain) {
    auto abar = cfg.alpha_bars();
    double a = abar[size_t(t)];
    double sig = std::sqrt(1.0 - a);
    inv_sig = t == 0 ? 0.0 : 1.0 / sig;
    gain = std::sqrt(a);
}
}  // namespace

Eigen::VectorXd denoise_net(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd* z_c,
                            const DenoiserParams& params, const DiffusionConfig& cfg) {
    double inv_sig, gain;
    eps_coefficients(t, cfg, inv_sig, gain);
    Eigen::VectorXd x0 = x0_net(x_t, t, z_c, params, cfg);
    return inv_sig * (x_t - gain * x0);
}

Eigen::VectorXd guided_noise_prediction(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd* z_c,
                                        double w, const DenoiserParams& params, const DiffusionConfig& cfg) {
    Eigen::VectorXd eps_u = denoise_net(x_t, t, nullptr, params, cfg);
    if (!z_c) return eps_u;
    Eigen::VectorXd eps_c = denoise_net(x_t, t, z_c, params, cfg);
    return (1.0 - w) * eps_u + w * eps_c;
}

Eigen::VectorXd sample(const Eigen::VectorXd* z_c, const DiffusionConfig& cfg, const DenoiserParams& params,
                       uint64_t seed) {
    cfg.validate();
    auto betas = cfg.betas();
    auto abar = cfg.alpha_bars();
    Rng rng(sha256_seed("diffusion-sample:" + std::to_string(seed)));
    Eigen::VectorXd x(cfg.data_dim());
    for (long i = 0; i < x.size(); ++i) x[i] = rng.normal();

    for (int t = cfg.timesteps; t >= 1; --t) {
        Eigen::VectorXd eps_hat = guided_noise_prediction(x, t, z_c, cfg.guidance_scale, params, cfg);
        double beta = betas[size_t(t - 1)];
        double a = 1.0 - beta;
        double ab = abar[size_t(t)];
        Eigen::VectorXd mean = (x - beta / std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(a);
        if (t > 1) {
            double ab_prev = abar[size_t(t - 1)];
            double var = (1.0 - ab_prev) / (1.0 - ab) * beta;
            double sigma = std::sqrt(var);
            for (long i = 0; i < x.size(); ++i) mean[i] += sigma * rng.normal();
        }
        x = std::move(mean);
        if (!x.allFinite())
            throw DivergenceError("sampler diverged at timestep " + std::to_string(t));
    }
    return x.cwiseMax(-1.0).cwiseMin(1.0);
}

double denoiser_loss_grad(const std::vector<DenoiserBatchItem>& batch, const DenoiserParams& params,
                          const DiffusionConfig& cfg, DenoiserGradients& grads) {
    if (batch.empty()) throw ValidationError("empty denoiser batch");
    grads.w1.setZero(params.w1.rows(), params.w1.cols());
    grads.b1 = Eigen::VectorXd::Zero(params.b1.size());
    grads.w2.setZero(params.w2.rows(), params.w2.cols());
    grads.b2 = Eigen::VectorXd::Zero(params.b2.size());
    grads.null_token = Eigen::VectorXd::Zero(params.null_token.size());

    double loss = 0.0;
    long data = cfg.data_dim();
    double scale = 1.0 / (double(batch.size()) * double(data));
    long cond_offset = data + params.temb_dim;

    for (const auto& item : batch) {
        Eigen::VectorXd in = assemble_input(item.x_t, item.t, item.z_c, params, cfg);
        Eigen::VectorXd a1 = params.w1 * in + params.b1;
        Eigen::VectorXd h = a1.array().tanh();
        Eigen::VectorXd x0 = params.w2 * h + params.b2;
        double inv_sig, gain;
        eps_coefficients(item.t, cfg, inv_sig, gain);
        Eigen::VectorXd eps_hat = inv_sig * (item.x_t - gain * x0);
        Eigen::VectorXd diff = eps_hat - item.eps_target;
        loss += diff.squaredNorm() * scale;

        Eigen::VectorXd g_out = (-2.0 * scale * inv_sig * gain) * diff;
        grads.w2 += g_out * h.transpose();
        grads.b2 += g_out;
        Eigen::VectorXd g_h = params.w2.transpose() * g_out;
        Eigen::VectorXd g_a1 = g_h.array() * (1.0 - h.array().square());
        grads.w1 += g_a1 * in.transpose();
        grads.b1 += g_a1;
        if (!item.z_c) {
            grads.null_token +=
                params.w1.block(0, cond_offset, params.w1.rows(), params.cond_dim).transpose() * g_a1;
        }
    }
    return loss;
}

namespace {
// Adam state over the full parameter set, flattened in a fixed order.
struct Adam {
    double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;
    Eigen::VectorXd m, v;

    explicit Adam(double lr_, long n) : lr(lr_), m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}

    void update(Eigen::VectorXd& theta, const Eigen::VectorXd& g) {
        ++step;
        m = beta1 * m + (1 - beta1) * g;
        v = beta2 * v + (1 - beta2) * g.cwiseProduct(g);
        double bc1 = 1 - std::pow(beta1, double(step));
        double bc2 = 1 - std::pow(beta2, double(step));
        theta -= (lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());
    }
};

Eigen::VectorXd flatten_params(const DenoiserParams& p) {
    Eigen::VectorXd out(p.param_count());
    long k = 0;
    for (const Eigen::MatrixXd* m : {&p.w1, &p.w2})
        for (long i = 0; i < m->rows(); ++i)
            for (long j = 0; j < m->cols(); ++j) out[k++] = (*m)(i, j);
    for (const Eigen::VectorXd* v : {&p.b1, &p.b2, &p.null_token})
        for (long i = 0; i < v->size(); ++i) out[k++] = (*v)[i];
    return out;
}

void unflatten_params(const Eigen::VectorXd& flat, DenoiserParams& p) {
    long k = 0;
    for (Eigen::MatrixXd* m : {&p.w1, &p.w2})
        for (long i = 0; i < m->rows(); ++i)
            for (long j = 0; j < m->cols(); ++j) (*m)(i, j) = flat[k++];
    for (Eigen::VectorXd* v : {&p.b1, &p.b2, &p.null_token})
        for (long i = 0; i < v->size(); ++i) (*v)[i] = flat[k++];
}

Eigen::VectorXd flatten_grads(const DenoiserGradients& g) {
    long n = g.w1.size() + g.w2.size() + g.b1.size() + g.b2.size() + g.null_token.size();
    Eigen::VectorXd out(n);
    long k = 0;
    for (const Eigen::MatrixXd* m : {&g.w1, &g.w2})
        for (long i = 0; i < m->rows(); ++i)
            for (long j = 0; j < m->cols(); ++j) out[k++] = (*m)(i, j);
    for (const Eigen::VectorXd* v : {&g.b1, &g.b2, &g.null_token})
        for (long i = 0; i < v->size(); ++i) out[k++] = (*v)[i];
    return out;
}
}  // namespace

DiffTrainResult train_denoiser(const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& dataset,
                               const DiffusionConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw ValidationError("empty denoiser training set");
    for (const auto& [x0, zc] : dataset) {
        if (x0.size() != cfg.data_dim()) throw DimensionError("training image has wrong dimension");
        if (zc.size() != cfg.cond_dim) throw DimensionError("training condition has wrong dimension");
    }

    DiffTrainResult result;
    result.params = init_denoiser(cfg);

    // Fixed validation batch: first samples with frozen (t, eps, drop).
    Rng vrng(sha256_seed("denoiser-val:" + std::to_string(cfg.seed)));
    std::vector<DenoiserBatchItem> val;
    size_t val_n = std::min<size_t>(64, dataset.size() * 4);
    std::vector<Eigen::VectorXd> val_eps(val_n);
    for (size_t i = 0; i < val_n; ++i) {
        const auto& [x0, zc] = dataset[i % dataset.size()];
        int t = 1 + int(vrng.uniform_int(uint64_t(cfg.timesteps)));
        val_eps[i].resize(cfg.data_dim());
        for (long j = 0; j < cfg.data_dim(); ++j) val_eps[i][j] = vrng.normal();
        bool drop = vrng.uniform() < cfg.drop_prob;
        DenoiserBatchItem item;
        item.x_t = forward_noise(x0, t, val_eps[i], cfg).x;
        item.t = t;
        item.z_c = drop ? nullptr : &zc;
        item.eps_target = val_eps[i];
        val.push_back(std::move(item));
    }
    DenoiserGradients scratch;
    auto val_mse = [&]() { return denoiser_loss_grad(val, result.params, cfg, scratch); };
    result.val_mse_initial = val_mse();

    Adam adam(cfg.learning_rate, result.params.param_count());
    Eigen::VectorXd theta = flatten_params(result.params);
    Rng rng(sha256_seed("denoiser-train:" + std::to_string(cfg.seed)));
    DenoiserGradients grads;

    std::vector<Eigen::VectorXd> eps_store(size_t(cfg.batch_size));
    for (int step = 0; step < cfg.train_steps; ++step) {
        std::vector<DenoiserBatchItem> batch;
        batch.reserve(size_t(cfg.batch_size));
        for (int i = 0; i < cfg.batch_size; ++i) {
            const auto& [x0, zc] = dataset[rng.uniform_int(dataset.size())];
            int t = 1 + int(rng.uniform_int(uint64_t(cfg.timesteps)));
            auto& eps = eps_store[size_t(i)];
            eps.resize(cfg.data_dim());
            for (long j = 0; j < cfg.data_dim(); ++j) eps[j] = rng.normal();
            bool drop = rng.uniform() < cfg.drop_prob;
            DenoiserBatchItem item;
            item.x_t = forward_noise(x0, t, eps, cfg).x;
            item.t = t;
            item.z_c = drop ? nullptr : &zc;
            item.eps_target = eps;
            batch.push_back(std::move(item));
        }
        double loss = denoiser_loss_grad(batch, result.params, cfg, grads);
        if (!std::isfinite(loss)) throw DivergenceError("denoiser training loss became non-finite");
        if (step % 50 == 0) result.losses.push_back(loss);
        if (cfg.learning_rate > 0) {
            adam.update(theta, flatten_grads(grads));
            unflatten_params(theta, result.params);
        }
    }
    result.val_mse_final = val_mse();
    return result;
}

void save_checkpoint(const DenoiserParams& params, const std::filesystem::path& path) {
    std::vector<uint8_t> out;
    out.insert(out.end(), {'D', 'I', 'F', '1'});
    std::vector<uint32_t> dims = {uint32_t(params.image_side), uint32_t(params.channels),
                                  uint32_t(params.cond_dim), uint32_t(params.temb_dim),
                                  uint32_t(params.w1.rows())};
    put_u32le(out, uint32_t(dims.size()));
    for (uint32_t d : dims) put_u32le(out, d);
    uint64_t count = uint64_t(params.param_count());
    put_u32le(out, uint32_t(count & 0xffffffff));
    put_u32le(out, uint32_t(count >> 32));
    auto append_matrix = [&](const Eigen::MatrixXd& m) {
        for (long i = 0; i < m.rows(); ++i)
            for (long j = 0; j < m.cols(); ++j) put_f32le(out, float(m(i, j)));
    };
    auto append_vector = [&](const Eigen::VectorXd& v) {
        for (long i = 0; i < v.size(); ++i) put_f32le(out, float(v[i]));
    };
    append_matrix(params.w1);
    append_vector(params.b1);
    append_matrix(params.w2);
    append_vector(params.b2);
    append_vector(params.null_token);
    write_file_atomic(path, out);
}

DenoiserParams load_checkpoint(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    const std::string origin = path.string();
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "DIF1", 4) != 0)
        throw ParseError("bad magic, expected DIF1", origin, 1);
    if (get_u32le(bytes.data() + 4) != 5) throw ParseError("unexpected header dim count", origin, 1);
    size_t pos = 8;
    auto next_u32 = [&]() {
        uint32_t v = get_u32le(bytes.data() + pos);
        pos += 4;
        return v;
    };
    DenoiserParams p;
    p.image_side = int(next_u32());
    p.channels = int(next_u32());
    p.cond_dim = int(next_u32());
    p.temb_dim = int(next_u32());
    int hidden = int(next_u32());
    uint64_t count = uint64_t(next_u32());
    count |= uint64_t(next_u32()) << 32;

    long data = long(p.image_side) * p.image_side * p.channels;
    p.w1.resize(hidden, data + p.temb_dim + p.cond_dim);
    p.b1.resize(hidden);
    p.w2.resize(data, hidden);
    p.b2.resize(data);
    p.null_token.resize(p.cond_dim);
    if (count != uint64_t(p.param_count())) throw ParseError("parameter count mismatch", origin, 1);
    if (bytes.size() < pos + count * 4) throw ParseError("truncated parameter blob", origin, 1);

    const uint8_t* ptr = bytes.data() + pos;
    auto read_matrix = [&](Eigen::MatrixXd& m) {
        for (long i = 0; i < m.rows(); ++i)
            for (long j = 0; j < m.cols(); ++j) {
                m(i, j) = double(get_f32le(ptr));
                ptr += 4;
            }
    };
    auto read_vector = [&](Eigen::VectorXd& v) {
        for (long i = 0; i < v.size(); ++i) {
            v[i] = double(get_f32le(ptr));
            ptr += 4;
        }
    };
    read_matrix(p.w1);
    read_vector(p.b1);
    read_matrix(p.w2);
    read_vector(p.b2);
    read_vector(p.null_token);
    return p;
}

Eigen::VectorXd image_to_unit(const Image& img) {
    img.validate();
    Eigen::VectorXd v(long(img.pixels.size()));
    for (size_t i = 0; i < img.pixels.size(); ++i) v[long(i)] = img.pixels[i] / 127.5 - 1.0;
    return v;
}

Image unit_to_image(const Eigen::VectorXd& v, int side, int channels) {
    if (channels != 3) throw ValidationError("only 3-channel images supported");
    if (v.size() != long(side) * side * channels) throw DimensionError("vector size != side*side*channels");
    Image img(side, side);
    for (long i = 0; i < v.size(); ++i) img.pixels[size_t(i)] = clamp_channel((v[i] + 1.0) * 127.5);
    return img;
}

}  // namespace brain3d::diff

#pragma once

#include <cmath>

#include "mindkit/model_common.hpp"
#include "mindkit/ops.hpp"

namespace mindkit {

struct AutoencoderConfig {
    int height = 32;
    int width = 32;
    int latent_channels = 4;
    int latent_h = 8;
    int latent_w = 8;
    int hidden = 384;

    int pixel_dim() const { return height * width * 3; }
    // latent flattening is channel-major, then row-major within a channel:
    // index = c*(latent_h*latent_w) + y*latent_w + x
    int latent_dim() const { return latent_channels * latent_h * latent_w; }
};

// Continuous-latent image autoencoder (no quantization): two-layer MLP
// encoder and decoder over the flattened image, with a squashing output so
// decoded pixels stay in [0,1]. Latents are standardized per dimension with
// statistics frozen after training so the diffusion model sees unit scale.
struct AutoencoderParams {
    AutoencoderConfig cfg;
    Tensor enc_w1, enc_b1, enc_w2, enc_b2;
    Tensor dec_w1, dec_b1, dec_w2, dec_b2;
    Tensor latent_mean, latent_std;

    static AutoencoderParams init(const AutoencoderConfig& cfg, Rng rng) {
        AutoencoderParams p;
        p.cfg = cfg;
        auto glorot = [&rng](int in, int out) {
            return Tensor::randn({in, out}, rng, std::sqrt(2.0f / static_cast<float>(in + out)));
        };
        p.enc_w1 = glorot(cfg.pixel_dim(), cfg.hidden);
        p.enc_b1 = Tensor::zeros({cfg.hidden});
        p.enc_w2 = glorot(cfg.hidden, cfg.latent_dim());
        p.enc_b2 = Tensor::zeros({cfg.latent_dim()});
        p.dec_w1 = glorot(cfg.latent_dim(), cfg.hidden);
        p.dec_b1 = Tensor::zeros({cfg.hidden});
        p.dec_w2 = glorot(cfg.hidden, cfg.pixel_dim());
        p.dec_b2 = Tensor::zeros({cfg.pixel_dim()});
        p.latent_mean = Tensor::zeros({cfg.latent_dim()});
        p.latent_std = Tensor::full({cfg.latent_dim()}, 1.0f);
        return p;
    }

    NamedParams named_params() {
        return {{"enc_w1", &enc_w1}, {"enc_b1", &enc_b1}, {"enc_w2", &enc_w2}, {"enc_b2", &enc_b2},
                {"dec_w1", &dec_w1}, {"dec_b1", &dec_b1}, {"dec_w2", &dec_w2}, {"dec_b2", &dec_b2}};
    }
    NamedParams named_all() {
        NamedParams np = named_params();
        np.emplace_back("latent_mean", &latent_mean);
        np.emplace_back("latent_std", &latent_std);
        return np;
    }

    TensorBundle bundle() { return to_bundle(named_all()); }
    static AutoencoderParams from(const AutoencoderConfig& cfg, const TensorBundle& b) {
        AutoencoderParams p = init(cfg, Rng(0));
        from_bundle(b, p.named_all());
        return p;
    }
};

namespace detail {

inline void check_image(const AutoencoderConfig& cfg, const Tensor& image) {
    if (image.rank() != 3 || image.shape[0] != cfg.height || image.shape[1] != cfg.width || image.shape[2] != 3)
        throw BadResolution("expected " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                            "x3 image, got " + shape_str(image.shape));
    for (float v : image.data)
        if (v < 0.0f || v > 1.0f) throw OutOfRange("pixel values must lie in [0,1]");
}

// sigmoid built from the tanh op: 0.5 * tanh(x/2) + 0.5
inline Tensor squash01(const Tensor& x) { return add_const(scale(tanh_op(scale(x, 0.5f)), 0.5f), 0.5f); }

// batched: rows are flattened images / latents
inline Tensor encode_rows(AutoencoderParams& p, const Tensor& pixels, Tape* tape) {
    Tensor w1 = tape ? tape->constant(p.enc_w1) : p.enc_w1;
    Tensor b1 = tape ? tape->constant(p.enc_b1) : p.enc_b1;
    Tensor w2 = tape ? tape->constant(p.enc_w2) : p.enc_w2;
    Tensor b2 = tape ? tape->constant(p.enc_b2) : p.enc_b2;
    Tensor h = silu(add(matmul(pixels, w1), b1));
    Tensor z = add(matmul(h, w2), b2);
    // standardize with frozen statistics
    int d = static_cast<int>(p.latent_std.data.size());
    std::vector<float> inv(static_cast<size_t>(d));
    for (size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0f / p.latent_std.data[i];
    return multiply(subtract(z, p.latent_mean), Tensor({d}, std::move(inv)));
}

inline Tensor decode_rows(AutoencoderParams& p, const Tensor& z, Tape* tape) {
    Tensor w1 = tape ? tape->constant(p.dec_w1) : p.dec_w1;
    Tensor b1 = tape ? tape->constant(p.dec_b1) : p.dec_b1;
    Tensor w2 = tape ? tape->constant(p.dec_w2) : p.dec_w2;
    Tensor b2 = tape ? tape->constant(p.dec_b2) : p.dec_b2;
    Tensor raw = add(multiply(z, p.latent_std), p.latent_mean);
    Tensor h = silu(add(matmul(raw, w1), b1));
    return squash01(add(matmul(h, w2), b2));
}

}  // namespace detail

// image (H x W x 3) in [0,1] -> standardized latent (latent_dim).
// Deterministic; differentiable when the input is on a tape.
inline Tensor encode(AutoencoderParams& p, const Tensor& image) {
    detail::check_image(p.cfg, image);
    Tape* tape = detail::resolve_tape({&image});
    Tensor rows = reshape(image, {1, p.cfg.pixel_dim()});
    Tensor z = detail::encode_rows(p, rows, tape);
    return reshape(z, {p.cfg.latent_dim()});
}

// standardized latent -> image (H x W x 3) in [0,1]; differentiable w.r.t. z
inline Tensor decode(AutoencoderParams& p, const Tensor& z) {
    if (static_cast<int>(z.numel()) != p.cfg.latent_dim())
        throw ShapeMismatch("latent size " + std::to_string(z.numel()) + " != " +
                            std::to_string(p.cfg.latent_dim()));
    Tape* tape = detail::resolve_tape({&z});
    Tensor rows = reshape(z, {1, p.cfg.latent_dim()});
    Tensor px = detail::decode_rows(p, rows, tape);
    return reshape(px, {p.cfg.height, p.cfg.width, 3});
}

struct AutoencoderTrainHyper {
    int epochs = 40;
    int batch = 16;
    float lr = 2e-3f;
    uint64_t seed = 0;
    int min_images = 100;
};

// Plain pixel-MSE reconstruction training. After the last epoch the latent
// standardization statistics are frozen from the training set.
inline TrainLog train_autoencoder(AutoencoderParams& p, const Tensor& images, const AutoencoderTrainHyper& hyper) {
    if (images.rank() != 2 || images.shape[1] != p.cfg.pixel_dim())
        throw BadResolution("expected (N x " + std::to_string(p.cfg.pixel_dim()) + ") flattened images");
    int N = images.shape[0];
    if (N < hyper.min_images)
        throw EmptyDataset("autoencoder training needs at least " + std::to_string(hyper.min_images) + " images");
    Rng rng(derive_seed(hyper.seed, 0xae));
    NamedParams np = p.named_params();
    AdamState adam(hyper.lr);
    TrainLog log;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        auto order = shuffled_indices(N, rng);
        double epoch_loss = 0.0;
        int batches = 0;
        for (int lo = 0; lo < N; lo += hyper.batch) {
            int hi = std::min(N, lo + hyper.batch);
            Tensor batch = gather_batch(images, order, lo, hi);
            Tape tape;
            std::vector<Tensor> leaves = watch_all(tape, np);  // order matches named_params()
            Tensor pixels = tape.constant(batch);
            Tensor h = silu(add(matmul(pixels, leaves[0]), leaves[1]));
            Tensor z = add(matmul(h, leaves[2]), leaves[3]);
            Tensor h2 = silu(add(matmul(z, leaves[4]), leaves[5]));
            Tensor recon = detail::squash01(add(matmul(h2, leaves[6]), leaves[7]));
            Tensor loss = mse(recon, batch);
            GradMap grads = backward(loss);
            if (hyper.lr != 0.0f) apply_adam(np, leaves, grads, adam);
            epoch_loss += loss.hi();
            batches += 1;
        }
        log.epoch_loss.push_back(epoch_loss / batches);
    }
    // freeze latent statistics from raw encoder outputs on the training set
    p.latent_mean = Tensor::zeros({p.cfg.latent_dim()});
    p.latent_std = Tensor::full({p.cfg.latent_dim()}, 1.0f);
    Tensor raw = detail::encode_rows(p, images, nullptr);
    int D = p.cfg.latent_dim();
    for (int j = 0; j < D; ++j) {
        double mu = 0.0, sq = 0.0;
        for (int i = 0; i < N; ++i) {
            double v = raw.at(i, j);
            mu += v;
            sq += v * v;
        }
        mu /= N;
        double var = sq / N - mu * mu;
        p.latent_mean.data[static_cast<size_t>(j)] = static_cast<float>(mu);
        p.latent_std.data[static_cast<size_t>(j)] = static_cast<float>(std::sqrt(std::max(var, 1e-6)));
    }
    return log;
}

}  // namespace mindkit

#include <catch2/catch_amalgamated.hpp>

#include "mindkit/autoencoder.hpp"
#include "mindkit/gradcheck.hpp"
#include "mindkit/neurosim.hpp"

using namespace mindkit;

namespace {

// flattened scene images drawn from the simulator's distribution
Tensor scene_images(int n, uint64_t seed) {
    std::vector<float> data;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        Tensor img = render(sample_scene(rng));
        data.insert(data.end(), img.data.begin(), img.data.end());
    }
    return Tensor({n, 32 * 32 * 3}, std::move(data));
}

AutoencoderParams& shared_trained_autoencoder() {
    static AutoencoderParams params = [] {
        AutoencoderParams p = AutoencoderParams::init(AutoencoderConfig{}, Rng(17));
        AutoencoderTrainHyper hyper;
        hyper.epochs = 60;
        hyper.seed = 17;
        train_autoencoder(p, scene_images(240, 901), hyper);
        return p;
    }();
    return params;
}

}  // namespace

TEST_CASE("latent dimension is the declared 4x8x8 desk-scale analog", "[autoencoder]") {
    AutoencoderConfig cfg;
    CHECK(cfg.latent_dim() == 4 * 8 * 8);
    CHECK(cfg.latent_dim() == 256);
    AutoencoderParams p = AutoencoderParams::init(cfg, Rng(1));
    Rng rng(2);
    Tensor img = render(sample_scene(rng));
    CHECK(encode(p, img).shape == Shape{256});
}

TEST_CASE("encode is deterministic and rejects bad inputs", "[autoencoder]") {
    AutoencoderParams p = AutoencoderParams::init(AutoencoderConfig{}, Rng(3));
    Rng rng(4);
    Tensor img = render(sample_scene(rng));
    Tensor z1 = encode(p, img);
    Tensor z2 = encode(p, img);
    CHECK(z1.data == z2.data);
    CHECK_THROWS_AS(encode(p, Tensor::zeros({16, 16, 3})), BadResolution);
    Tensor bad = img;
    bad.data[0] = 1.5f;
    CHECK_THROWS_AS(encode(p, bad), OutOfRange);
}

TEST_CASE("decode output stays inside [0,1] and round-trips the shape", "[autoencoder]") {
    AutoencoderParams p = AutoencoderParams::init(AutoencoderConfig{}, Rng(5));
    Rng rng(6);
    Tensor z = Tensor::randn({256}, rng, 2.0f);
    Tensor img = decode(p, z);
    CHECK(img.shape == Shape{32, 32, 3});
    for (float v : img.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    Tensor rt = decode(p, encode(p, render(sample_scene(rng))));
    CHECK(rt.shape == Shape{32, 32, 3});
    CHECK_THROWS_AS(decode(p, Tensor::zeros({255})), ShapeMismatch);
}

TEST_CASE("decode is differentiable w.r.t. the latent", "[autoencoder]") {
    AutoencoderParams p = AutoencoderParams::init(AutoencoderConfig{}, Rng(7));
    Rng rng(8);
    Tensor z = Tensor::randn({256}, rng);
    auto f = [&](Tape&, const Tensor& latent) {
        Tensor img = decode(p, latent);
        return scale(sum(img), 1.0f / static_cast<float>(img.numel()));  // mean pixel
    };
    auto report = grad_check(f, z, 2e-3);
    CHECK(report.max_rel_err <= 1e-3);
}

TEST_CASE("latent flattening order is channel-major and documented", "[autoencoder]") {
    AutoencoderConfig cfg;
    // index = c*(h*w) + y*w + x; decode(encode(x)) consumes exactly this order
    int idx = 3 * (cfg.latent_h * cfg.latent_w) + 2 * cfg.latent_w + 5;
    CHECK(idx == 3 * 64 + 2 * 8 + 5);
    AutoencoderParams p = AutoencoderParams::init(cfg, Rng(9));
    Rng rng(10);
    Tensor img = render(sample_scene(rng));
    Tensor z = encode(p, img);
    Tensor grid = reshape(z, {cfg.latent_channels, cfg.latent_h, cfg.latent_w});
    Tensor flat_again = reshape(grid, {cfg.latent_dim()});
    Tensor a = decode(p, z);
    Tensor b = decode(p, flat_again);
    CHECK(a.data == b.data);
}

TEST_CASE("training needs at least the configured image count", "[autoencoder]") {
    AutoencoderParams p = AutoencoderParams::init(AutoencoderConfig{}, Rng(11));
    AutoencoderTrainHyper hyper;
    CHECK_THROWS_AS(train_autoencoder(p, scene_images(10, 12), hyper), EmptyDataset);
}

TEST_CASE("lr=0 training step leaves parameters unchanged", "[autoencoder]") {
    AutoencoderParams p = AutoencoderParams::init(AutoencoderConfig{}, Rng(13));
    auto before = to_bundle(p.named_params()).content_hash();
    AutoencoderTrainHyper hyper;
    hyper.epochs = 1;
    hyper.lr = 0.0f;
    hyper.min_images = 8;
    train_autoencoder(p, scene_images(8, 14), hyper);
    CHECK(to_bundle(p.named_params()).content_hash() == before);
}

TEST_CASE("an overfit run memorizes a single image", "[autoencoder]") {
    AutoencoderConfig cfg;
    cfg.hidden = 128;
    AutoencoderParams p = AutoencoderParams::init(cfg, Rng(15));
    Tensor one = scene_images(1, 16);
    AutoencoderTrainHyper hyper;
    hyper.epochs = 400;
    hyper.batch = 1;
    hyper.lr = 3e-3f;
    hyper.min_images = 1;
    auto log = train_autoencoder(p, one, hyper);
    INFO("final loss " << log.epoch_loss.back());
    CHECK(log.epoch_loss.back() < 1e-3);
}

TEST_CASE("training halves the loss and decays under a moving average", "[autoencoder]") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        AutoencoderParams p = AutoencoderParams::init(AutoencoderConfig{}, Rng(derive_seed(20, seed)));
        AutoencoderTrainHyper hyper;
        hyper.epochs = 25;
        hyper.seed = seed;
        hyper.min_images = 100;
        auto log = train_autoencoder(p, scene_images(120, derive_seed(21, seed)), hyper);
        INFO("seed " << seed << " first " << log.epoch_loss.front() << " last " << log.epoch_loss.back());
        CHECK(log.epoch_loss.back() <= 0.5 * log.epoch_loss.front());
        // 5-epoch moving average is non-increasing
        auto ma = [&](size_t i) {
            double s = 0.0;
            for (size_t k = i; k < i + 5; ++k) s += log.epoch_loss[k];
            return s / 5.0;
        };
        for (size_t i = 0; i + 6 <= log.epoch_loss.size(); ++i)
            CHECK(ma(i + 1) <= ma(i) + 1e-6 * log.epoch_loss.front());
    }
}

TEST_CASE("trained autoencoder reconstructs test scenes at 20 dB or better", "[autoencoder]") {
    AutoencoderParams& p = shared_trained_autoencoder();
    Rng rng(902);  // held-out scenes
    double mse_acc = 0.0;
    const int n = 24;
    for (int i = 0; i < n; ++i) {
        Tensor img = render(sample_scene(rng));
        Tensor rec = decode(p, encode(p, img));
        double m = 0.0;
        for (size_t j = 0; j < img.numel(); ++j) {
            double d = static_cast<double>(img.data[j]) - rec.data[j];
            m += d * d;
        }
        mse_acc += m / static_cast<double>(img.numel());
    }
    double psnr = -10.0 * std::log10(mse_acc / n);
    INFO("mean PSNR " << psnr << " dB");
    CHECK(psnr >= 20.0);
}

TEST_CASE("distinct scenes map to distinct latents after training", "[autoencoder]") {
    AutoencoderParams& p = shared_trained_autoencoder();
    Rng rng(903);
    Tensor a = render(sample_scene(rng));
    Tensor b = render(sample_scene(rng));
    Tensor za = encode(p, a);
    Tensor zb = encode(p, b);
    double dist = 0.0;
    for (size_t i = 0; i < za.numel(); ++i) {
        double d = static_cast<double>(za.data[i]) - zb.data[i];
        dist += d * d;
    }
    CHECK(dist > 0.0);
}

TEST_CASE("frozen latent statistics give roughly unit-scale latents", "[autoencoder]") {
    AutoencoderParams& p = shared_trained_autoencoder();
    Rng rng(904);
    double acc = 0.0, acc2 = 0.0;
    int count = 0;
    for (int i = 0; i < 20; ++i) {
        Tensor z = encode(p, render(sample_scene(rng)));
        for (float v : z.data) {
            acc += v;
            acc2 += static_cast<double>(v) * v;
            count += 1;
        }
    }
    double mean = acc / count;
    double var = acc2 / count - mean * mean;
    CHECK(std::abs(mean) < 0.3);
    CHECK(var == Catch::Approx(1.0).margin(0.5));
}

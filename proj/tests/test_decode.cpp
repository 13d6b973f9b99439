#include <catch2/catch_amalgamated.hpp>

#include "mindkit/decode.hpp"

using namespace mindkit;

TEST_CASE("one-dimensional least squares by hand", "[decode]") {
    // X=[[1,2]], y=[2,4]: exact fit y = 2x
    Tensor X({1, 2}, {1, 2});
    Tensor Y({1, 2}, {2, 4});
    RidgeDecoder d = fit_ridge(X, Y, 0.0f);
    Tensor w = d.effective_weights();
    CHECK(w.at(0, 0) == Catch::Approx(2.0).margin(1e-4));
    CHECK(d.predict_one(Tensor({1}, {1.0f})).data[0] == Catch::Approx(2.0).margin(1e-4));
    CHECK(d.predict_one(Tensor({1}, {2.0f})).data[0] == Catch::Approx(4.0).margin(1e-4));
    CHECK(d.predict_one(Tensor({1}, {3.0f})).data[0] == Catch::Approx(6.0).margin(1e-4));
}

TEST_CASE("raw ridge solve matches the hand-evaluated closed form", "[decode]") {
    // uncentered: w = X y^T / (X X^T + lambda) = 10 / (5 + 5) = 1
    Tensor X({1, 2}, {1, 2});
    Tensor Y({1, 2}, {2, 4});
    RidgeOptions raw;
    raw.standardize = false;
    RidgeDecoder d = fit_ridge(X, Y, 5.0f, raw);
    CHECK(d.weights.at(0, 0) == Catch::Approx(1.0).margin(1e-6));
    CHECK(d.bias.data[0] == 0.0f);
    CHECK(d.predict_one(Tensor({1}, {3.0f})).data[0] == Catch::Approx(3.0).margin(1e-5));
}

TEST_CASE("planted linear model is recovered", "[decode]") {
    const int V = 12, N = 80, D = 6;
    Rng rng(5);
    Tensor X = Tensor::randn({V, N}, rng);
    Tensor M = Tensor::randn({D, V}, rng);
    Tensor Y = Tensor::zeros({D, N});
    for (int d = 0; d < D; ++d)
        for (int n = 0; n < N; ++n) {
            double acc = 0.0;
            for (int v = 0; v < V; ++v) acc += static_cast<double>(M.at(d, v)) * X.at(v, n);
            Y.at(d, n) = static_cast<float>(acc);
        }
    RidgeDecoder dec = fit_ridge(X, Y, 1e-8f);
    Tensor W = dec.effective_weights();
    float max_abs = 0.0f;
    for (int d = 0; d < D; ++d)
        for (int v = 0; v < V; ++v) max_abs = std::max(max_abs, std::abs(W.at(d, v) - M.at(d, v)));
    CHECK(max_abs <= 1e-3f);

    // training-sample prediction reproduces the truth
    Tensor x0 = Tensor::zeros({V});
    for (int v = 0; v < V; ++v) x0.data[static_cast<size_t>(v)] = X.at(v, 0);
    Tensor p = dec.predict_one(x0);
    for (int d = 0; d < D; ++d) CHECK(p.data[static_cast<size_t>(d)] == Catch::Approx(Y.at(d, 0)).margin(1e-3));
}

TEST_CASE("ridge objective is locally optimal", "[decode]") {
    const int V = 8, N = 40, D = 4;
    Rng rng(7);
    Tensor X = Tensor::randn({V, N}, rng);
    Tensor Y = Tensor::randn({D, N}, rng);
    float lambda = 2.0f;
    RidgeDecoder dec = fit_ridge(X, Y, lambda);

    // objective on standardized X / centered Y, the space the solver works in
    auto objective = [&](const Tensor& W) {
        double obj = 0.0;
        for (int n = 0; n < N; ++n)
            for (int d = 0; d < D; ++d) {
                double pred = 0.0;
                for (int v = 0; v < V; ++v)
                    pred += static_cast<double>(W.at(d, v)) *
                            ((X.at(v, n) - dec.x_mean.data[static_cast<size_t>(v)]) / dec.x_std.data[static_cast<size_t>(v)]);
                double resid = (Y.at(d, n) - dec.bias.data[static_cast<size_t>(d)]) - pred;
                obj += resid * resid;
            }
        for (int d = 0; d < D; ++d)
            for (int v = 0; v < V; ++v) obj += lambda * static_cast<double>(W.at(d, v)) * W.at(d, v);
        return obj;
    };
    double base = objective(dec.weights);
    Rng prng(8);
    for (int rep = 0; rep < 100; ++rep) {
        Tensor W = dec.weights;
        for (auto& v : W.data) v += static_cast<float>(prng.gaussian()) * 0.01f;
        CHECK(objective(W) >= base - 1e-9);
    }
}

TEST_CASE("cv folds recover a noiseless linear target", "[decode]") {
    const int V = 10, N = 60, D = 5;
    Rng rng(9);
    Tensor X = Tensor::randn({V, N}, rng);
    Tensor M = Tensor::randn({D, V}, rng);
    Tensor Y = Tensor::zeros({D, N});
    for (int d = 0; d < D; ++d)
        for (int n = 0; n < N; ++n) {
            double acc = 0.0;
            for (int v = 0; v < V; ++v) acc += static_cast<double>(M.at(d, v)) * X.at(v, n);
            Y.at(d, n) = static_cast<float>(acc);
        }
    auto r = cv_accuracy(X, Y, 1e-6f, 5, 3);
    for (float v : r) CHECK(v >= 0.999f);
}

TEST_CASE("zero-variance targets get r = 0 by convention", "[decode]") {
    const int V = 6, N = 30;
    Rng rng(11);
    Tensor X = Tensor::randn({V, N}, rng);
    Tensor Y = Tensor::full({2, N}, 0.0f);  // constant targets
    auto r = cv_accuracy(X, Y, 1.0f, 5, 1);
    CHECK(r[0] == 0.0f);
    CHECK(r[1] == 0.0f);
}

TEST_CASE("cv validates sample counts", "[decode]") {
    Tensor X({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor Y({1, 3}, {1, 2, 3});
    CHECK_THROWS_AS(cv_accuracy(X, Y, 1.0f, 5, 0), TooFewSamples);
}

TEST_CASE("lambda=0 on a rank-deficient system reports singularity", "[decode]") {
    // duplicated voxel rows make the Gram matrix singular
    Tensor X({2, 4}, {1, 2, 3, 4, 1, 2, 3, 4});
    Tensor Y({1, 4}, {1, 2, 3, 4});
    CHECK_THROWS_AS(fit_ridge(X, Y, 0.0f), SingularSystem);
    CHECK_NOTHROW(fit_ridge(X, Y, 0.1f));
}

TEST_CASE("dimension mismatches are rejected", "[decode]") {
    Tensor X({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor Y({1, 3}, {1, 2, 3});
    CHECK_THROWS_AS(fit_ridge(X, Y, 1.0f), DimensionMismatch);
    RidgeDecoder d = fit_ridge(Tensor({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}), Tensor({1, 4}, {1, 2, 3, 4}), 1.0f);
    CHECK_THROWS_AS(d.predict_one(Tensor({3}, {1, 2, 3})), DimensionMismatch);
}

TEST_CASE("top-fraction selection keeps round(fraction*D) with index ties", "[decode]") {
    FeatureMask m = select_features({0.9f, 0.1f, 0.5f, 0.5f}, 0.5f);
    CHECK(m.kept_count() == 2);
    CHECK(m.keep[0] == 1);
    CHECK(m.keep[2] == 1);  // tie at 0.5 broken toward the lower index
    CHECK(m.keep[3] == 0);

    FeatureMask all = select_features({0.3f, 0.2f}, 1.0f);
    CHECK(all.kept_count() == 2);

    // the paper-scale arithmetic: 25% of 38400 = 9600
    std::vector<float> big(38400);
    for (size_t i = 0; i < big.size(); ++i) big[i] = static_cast<float>((i * 2654435761u) % 10007) / 10007.0f;
    CHECK(select_features(big, 0.25f).kept_count() == 9600);

    CHECK_THROWS_AS(select_features({0.1f}, 0.0f), BadFraction);
    CHECK_THROWS_AS(select_features({0.1f}, 1.5f), BadFraction);
}

TEST_CASE("selection agrees with a brute-force sort oracle", "[decode]") {
    Rng rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        int D = 5 + rng.uniform_int(40);
        std::vector<float> r(static_cast<size_t>(D));
        for (auto& v : r) v = static_cast<float>(rng.uniform_int(6)) / 5.0f;  // deliberate ties
        float fraction = 0.25f + 0.5f * static_cast<float>(rng.uniform());
        FeatureMask m = select_features(r, fraction);

        // oracle: enumerate (r, index) pairs, sort, take the top k
        std::vector<std::pair<float, int>> pairs;
        for (int i = 0; i < D; ++i) pairs.emplace_back(r[static_cast<size_t>(i)], i);
        std::sort(pairs.begin(), pairs.end(), [](auto a, auto b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        int k = static_cast<int>(std::lround(static_cast<double>(fraction) * D));
        std::vector<char> want(static_cast<size_t>(D), 0);
        for (int i = 0; i < k; ++i) want[static_cast<size_t>(pairs[static_cast<size_t>(i)].second)] = 1;
        CHECK(m.keep == want);
    }
}

TEST_CASE("masking selects kept predictions without rescaling them", "[decode]") {
    const int V = 8, N = 50, D = 12;
    Rng rng(15);
    Tensor X = Tensor::randn({V, N}, rng);
    Tensor Y = Tensor::randn({D, N}, rng);
    auto r = cv_accuracy(X, Y, 1.0f, 5, 2);
    FeatureMask mask = select_features(r, 0.5f);
    MaskedDecoder md = refit_masked(X, Y, mask, 1.0f);

    // reference refit built by hand on the same kept rows
    RidgeDecoder ref = fit_ridge(X, take_target_rows(Y, mask.kept_indices()), 1.0f);
    Tensor x = Tensor::randn({V}, rng);
    MaskedPrediction p = md.predict(x);
    Tensor want = ref.predict_one(x);
    auto kept = mask.kept_indices();
    for (size_t i = 0; i < kept.size(); ++i) {
        CHECK(p.valid[static_cast<size_t>(kept[i])] == 1);
        CHECK(p.values.data[static_cast<size_t>(kept[i])] == want.data[i]);
    }
    for (int d = 0; d < D; ++d)
        if (!p.valid[static_cast<size_t>(d)]) CHECK(p.values.data[static_cast<size_t>(d)] == 0.0f);
    CHECK(md.predict(x).values.data == p.values.data);  // deterministic
}

TEST_CASE("prediction is affine: responses add once the bias is removed", "[decode]") {
    const int V = 6, N = 40, D = 3;
    Rng rng(17);
    Tensor X = Tensor::randn({V, N}, rng);
    Tensor Y = Tensor::randn({D, N}, rng);
    RidgeDecoder dec = fit_ridge(X, Y, 0.5f);
    Tensor a = Tensor::randn({V}, rng);
    Tensor b = Tensor::randn({V}, rng);
    Tensor ab = add(a, b);
    Tensor p0 = dec.predict_one(Tensor::zeros({V}));
    Tensor pa = dec.predict_one(a);
    Tensor pb = dec.predict_one(b);
    Tensor pab = dec.predict_one(ab);
    for (int d = 0; d < D; ++d)
        CHECK(pab.data[static_cast<size_t>(d)] + p0.data[static_cast<size_t>(d)] ==
              Catch::Approx(pa.data[static_cast<size_t>(d)] + pb.data[static_cast<size_t>(d)]).margin(1e-4));
}

TEST_CASE("per-dimension r is invariant to target dimension order", "[decode]") {
    const int V = 6, N = 35, D = 4;
    Rng rng(19);
    Tensor X = Tensor::randn({V, N}, rng);
    Tensor Y = Tensor::randn({D, N}, rng);
    auto r = cv_accuracy(X, Y, 1.0f, 5, 4);
    // permute target dims and check the r values follow the permutation
    std::vector<int> perm = {2, 0, 3, 1};
    Tensor Yp = take_target_rows(Y, perm);
    auto rp = cv_accuracy(X, Yp, 1.0f, 5, 4);
    for (size_t i = 0; i < perm.size(); ++i)
        CHECK(rp[i] == Catch::Approx(r[static_cast<size_t>(perm[i])]).margin(1e-6));
}

TEST_CASE("decoding accuracy degrades monotonically with simulator noise", "[decode]") {
    // joint property with the simulator: higher sigma, lower test-set r
    const int fdim = 48, n_voxels = 40, n_train = 120, n_test = 40;
    Rng rng(21);
    Tensor basis = Tensor::randn({6, fdim}, rng);
    auto make_features = [&](Rng& r) {
        std::vector<float> f(fdim, 0.0f);
        for (int b = 0; b < 6; ++b) {
            float wgt = static_cast<float>(r.gaussian());
            for (int d = 0; d < fdim; ++d) f[static_cast<size_t>(d)] += wgt * basis.at(b, d);
        }
        return Tensor({fdim}, f);
    };
    double prev_r = 2.0;
    for (float sigma : {0.0f, 0.1f, 0.5f, 1.0f}) {
        SubjectModel subject = make_subject(77, n_voxels, fdim, 0.25f, sigma, "h");
        Rng data_rng(23);  // same features across sigmas
        Rng noise_rng(29);
        Tensor X = Tensor::zeros({n_voxels, n_train});
        Tensor Y = Tensor::zeros({fdim, n_train});
        Tensor Xt = Tensor::zeros({n_voxels, n_test});
        Tensor Yt = Tensor::zeros({fdim, n_test});
        for (int i = 0; i < n_train + n_test; ++i) {
            Tensor f = make_features(data_rng);
            auto clean = subject.project(f);
            for (int v = 0; v < n_voxels; ++v) {
                float val = clean[static_cast<size_t>(v)] + sigma * static_cast<float>(noise_rng.gaussian());
                if (i < n_train) X.at(v, i) = val;
                else Xt.at(v, i - n_train) = val;
            }
            for (int d = 0; d < fdim; ++d) {
                if (i < n_train) Y.at(d, i) = f.data[static_cast<size_t>(d)];
                else Yt.at(d, i - n_train) = f.data[static_cast<size_t>(d)];
            }
        }
        RidgeDecoder dec = fit_ridge(X, Y, 1.0f);
        // mean per-dim test r
        double mean_r = 0.0;
        std::vector<double> pred(static_cast<size_t>(n_test)), truth(static_cast<size_t>(n_test));
        for (int d = 0; d < fdim; ++d) {
            for (int i = 0; i < n_test; ++i) {
                Tensor x = Tensor::zeros({n_voxels});
                for (int v = 0; v < n_voxels; ++v) x.data[static_cast<size_t>(v)] = Xt.at(v, i);
                pred[static_cast<size_t>(i)] = dec.predict_one(x).data[static_cast<size_t>(d)];
                truth[static_cast<size_t>(i)] = Yt.at(d, i);
            }
            mean_r += detail::pearson(pred.data(), truth.data(), n_test);
        }
        mean_r /= fdim;
        INFO("sigma " << sigma << " mean test r " << mean_r);
        CHECK(mean_r < prev_r);
        prev_r = mean_r;
    }
}

TEST_CASE("decoder set fits, persists and reloads", "[decode]") {
    AutoencoderParams ae = AutoencoderParams::init(AutoencoderConfig{}, Rng(31));
    EncoderParams enc = EncoderParams::init(EncoderConfig{}, Rng(32));
    DatasetConfig dcfg;
    dcfg.n_train = 40;
    dcfg.n_test = 6;
    dcfg.n_subjects = 1;
    dcfg.master_seed = 3;
    Dataset ds = build_dataset(dcfg, &ae, &enc);
    DecodeConfig cfg;
    cfg.lambda_grid = {1.0f, 10.0f};
    DecoderSet set = fit_decoders(ds, 0, 3, cfg);
    CHECK(set.c.decoder.n_targets == 192);
    CHECK(set.z.decoder.n_targets == 256);
    REQUIRE(set.taps.size() == 3);
    CHECK(set.taps[0].masked.mask.kept_count() == 192);  // round(0.25 * 768)

    auto dir = std::filesystem::temp_directory_path() / "mindkit_decoders";
    std::filesystem::remove_all(dir);
    save_decoders(set, dir.string());
    DecoderSet back = load_decoders(dir.string());
    CHECK(back.weights_hash == set.weights_hash);
    CHECK(back.c.decoder.weights.data == set.c.decoder.weights.data);
    CHECK(back.taps[2].masked.mask.keep == set.taps[2].masked.mask.keep);
    Rng rng(41);
    Tensor x = Tensor::randn({ds.cfg.n_voxels}, rng);
    CHECK(back.z.decoder.predict_one(x).data == set.z.decoder.predict_one(x).data);
}

TEST_CASE("fitting decoders without voxels is an upstream error", "[decode]") {
    DatasetConfig dcfg;
    dcfg.n_train = 4;
    dcfg.n_test = 2;
    Dataset ds = build_dataset(dcfg, nullptr, nullptr);
    CHECK_THROWS_AS(fit_decoders(ds, 0, 3, DecodeConfig{}), UpstreamMissing);
}

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "mindkit/neurosim.hpp"
#include "mindkit/tnsr.hpp"

#include "json.hpp"

namespace mindkit {

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;

inline EMat to_eigen(const Tensor& t) {
    EMat m(t.shape[0], t.shape[1]);
    for (int r = 0; r < t.shape[0]; ++r)
        for (int c = 0; c < t.shape[1]; ++c) m(r, c) = t.at(r, c);
    return m;
}

// Pearson r with the zero-variance convention: r = 0 when either side is
// constant.
inline double pearson(const double* a, const double* b, int n) {
    double ma = 0.0, mb = 0.0;
    for (int i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (int i = 0; i < n; ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace detail

struct RidgeOptions {
    bool standardize = true;  // z-score voxels with training statistics
};

// Closed-form ridge map from voxels to a feature space. Weights live in the
// standardized voxel space; standardization statistics are frozen at fit
// time and applied identically at predict time.
struct RidgeDecoder {
    int n_voxels = 0;
    int n_targets = 0;
    float lambda = 0.0f;
    bool standardized = true;
    Tensor weights;  // (targets x voxels)
    Tensor bias;     // (targets)
    Tensor x_mean;   // (voxels)
    Tensor x_std;    // (voxels); 1 where the training voxel was constant

    Tensor predict_one(const Tensor& x) const {
        if (static_cast<int>(x.numel()) != n_voxels)
            throw DimensionMismatch("voxel dim " + std::to_string(x.numel()) + " != " + std::to_string(n_voxels));
        std::vector<float> out(static_cast<size_t>(n_targets));
        std::vector<float> xs(static_cast<size_t>(n_voxels));
        for (int v = 0; v < n_voxels; ++v)
            xs[static_cast<size_t>(v)] = (x.data[static_cast<size_t>(v)] - x_mean.data[static_cast<size_t>(v)]) /
                                         x_std.data[static_cast<size_t>(v)];
        for (int t = 0; t < n_targets; ++t) {
            const float* row = weights.data.data() + static_cast<size_t>(t) * n_voxels;
            double acc = 0.0;
            for (int v = 0; v < n_voxels; ++v) acc += static_cast<double>(row[v]) * xs[static_cast<size_t>(v)];
            out[static_cast<size_t>(t)] = static_cast<float>(acc + bias.data[static_cast<size_t>(t)]);
        }
        return Tensor({n_targets}, std::move(out));
    }

    // weights mapped back to raw voxel units: dy/dx
    Tensor effective_weights() const {
        Tensor w = weights;
        for (int t = 0; t < n_targets; ++t)
            for (int v = 0; v < n_voxels; ++v) w.at(t, v) /= x_std.data[static_cast<size_t>(v)];
        return w;
    }
};

// W = Yc Xs^T (Xs Xs^T + lambda I)^-1 via Cholesky; bias from target means.
// X is (voxels x N), Y is (targets x N). With standardize=false the system is
// solved raw: no centering, no scaling, zero bias.
inline RidgeDecoder fit_ridge(const Tensor& X, const Tensor& Y, float lambda, RidgeOptions opt = {}) {
    if (X.rank() != 2 || Y.rank() != 2) throw DimensionMismatch("fit_ridge expects matrices");
    if (X.shape[1] != Y.shape[1]) throw DimensionMismatch("X and Y sample counts differ");
    if (X.shape[1] < 2) throw TooFewSamples("ridge needs at least 2 samples");
    if (lambda < 0.0f) throw BadRange("lambda must be >= 0");
    int V = X.shape[0], N = X.shape[1], D = Y.shape[0];

    RidgeDecoder dec;
    dec.n_voxels = V;
    dec.n_targets = D;
    dec.lambda = lambda;
    dec.standardized = opt.standardize;
    dec.x_mean = Tensor::zeros({V});
    dec.x_std = Tensor::full({V}, 1.0f);
    dec.bias = Tensor::zeros({D});

    detail::EMat Xs = detail::to_eigen(X);
    detail::EMat Yc = detail::to_eigen(Y);
    if (opt.standardize) {
        for (int v = 0; v < V; ++v) {
            double mu = Xs.row(v).mean();
            double var = (Xs.row(v).array() - mu).square().mean();
            double sd = std::sqrt(var);
            if (sd <= 0.0) sd = 1.0;  // constant voxel carries no signal
            dec.x_mean.data[static_cast<size_t>(v)] = static_cast<float>(mu);
            dec.x_std.data[static_cast<size_t>(v)] = static_cast<float>(sd);
            Xs.row(v) = (Xs.row(v).array() - mu) / sd;
        }
        for (int d = 0; d < D; ++d) {
            double mu = Yc.row(d).mean();
            dec.bias.data[static_cast<size_t>(d)] = static_cast<float>(mu);
            Yc.row(d).array() -= mu;
        }
    }

    detail::EMat gram = Xs * Xs.transpose();
    gram.diagonal().array() += static_cast<double>(lambda);
    Eigen::LLT<detail::EMat> llt(gram);
    if (llt.info() != Eigen::Success)
        throw SingularSystem("voxel Gram matrix is singular; use lambda > 0");
    // A W^T = Xs Yc^T
    detail::EMat wt = llt.solve(Xs * Yc.transpose());
    dec.weights = Tensor::zeros({D, V});
    for (int d = 0; d < D; ++d)
        for (int v = 0; v < V; ++v) dec.weights.at(d, v) = static_cast<float>(wt(v, d));
    return dec;
}

// 5-fold cross-validated per-dimension prediction accuracy. Folds partition
// the samples contiguously by index after a seeded shuffle; each dimension's
// r correlates the concatenated out-of-fold predictions with the truth.
inline std::vector<float> cv_accuracy(const Tensor& X, const Tensor& Y, float lambda, int k_folds = 5,
                                      uint64_t fold_seed = 0, RidgeOptions opt = {}) {
    if (X.rank() != 2 || Y.rank() != 2 || X.shape[1] != Y.shape[1]) throw DimensionMismatch("bad cv inputs");
    int N = X.shape[1], V = X.shape[0], D = Y.shape[0];
    if (N < k_folds) throw TooFewSamples("need at least one sample per fold");
    Rng rng(derive_seed(fold_seed, 0xcf));
    std::vector<int> order = shuffled_indices(N, rng);

    std::vector<double> preds(static_cast<size_t>(D) * N);
    for (int f = 0; f < k_folds; ++f) {
        int lo = f * N / k_folds, hi = (f + 1) * N / k_folds;
        std::vector<int> train_cols;
        for (int i = 0; i < N; ++i)
            if (i < lo || i >= hi) train_cols.push_back(order[static_cast<size_t>(i)]);
        auto take = [&](const Tensor& M, const std::vector<int>& cols) {
            Tensor out = Tensor::zeros({M.shape[0], static_cast<int>(cols.size())});
            for (int r = 0; r < M.shape[0]; ++r)
                for (size_t c = 0; c < cols.size(); ++c) out.at(r, static_cast<int>(c)) = M.at(r, cols[c]);
            return out;
        };
        RidgeDecoder dec = fit_ridge(take(X, train_cols), take(Y, train_cols), lambda, opt);
        for (int i = lo; i < hi; ++i) {
            int col = order[static_cast<size_t>(i)];
            Tensor x = Tensor::zeros({V});
            for (int v = 0; v < V; ++v) x.data[static_cast<size_t>(v)] = X.at(v, col);
            Tensor p = dec.predict_one(x);
            for (int d = 0; d < D; ++d) preds[static_cast<size_t>(d) * N + col] = p.data[static_cast<size_t>(d)];
        }
    }
    std::vector<float> r(static_cast<size_t>(D));
    std::vector<double> truth(static_cast<size_t>(N));
    for (int d = 0; d < D; ++d) {
        for (int i = 0; i < N; ++i) truth[static_cast<size_t>(i)] = Y.at(d, i);
        r[static_cast<size_t>(d)] =
            static_cast<float>(detail::pearson(preds.data() + static_cast<size_t>(d) * N, truth.data(), N));
    }
    return r;
}

// Top-fraction selection by CV accuracy; keeps exactly round(fraction * D)
// dimensions, ties broken toward the lower index.
struct FeatureMask {
    std::vector<float> cv_r;
    std::vector<char> keep;
    float fraction = 1.0f;

    int kept_count() const { return static_cast<int>(std::count(keep.begin(), keep.end(), 1)); }
    std::vector<int> kept_indices() const {
        std::vector<int> out;
        for (size_t i = 0; i < keep.size(); ++i)
            if (keep[i]) out.push_back(static_cast<int>(i));
        return out;
    }
};

inline FeatureMask select_features(const std::vector<float>& r, float fraction) {
    if (!(fraction > 0.0f) || fraction > 1.0f) throw BadFraction("fraction must be in (0, 1]");
    int D = static_cast<int>(r.size());
    int k = static_cast<int>(std::lround(static_cast<double>(fraction) * D));
    k = std::min(k, D);
    std::vector<int> idx(r.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (r[static_cast<size_t>(a)] != r[static_cast<size_t>(b)]) return r[static_cast<size_t>(a)] > r[static_cast<size_t>(b)];
        return a < b;
    });
    FeatureMask m;
    m.cv_r = r;
    m.fraction = fraction;
    m.keep.assign(r.size(), 0);
    for (int i = 0; i < k; ++i) m.keep[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 1;
    return m;
}

// prediction with absent (non-kept) dimensions flagged invalid
struct MaskedPrediction {
    Tensor values;            // full target width; absent dims hold 0
    std::vector<char> valid;  // one per target dim
};

// Decoder refit on the kept dimensions only, with the mask remembering the
// original width.
struct MaskedDecoder {
    RidgeDecoder decoder;  // targets = kept dims
    FeatureMask mask;      // width = original dims

    MaskedPrediction predict(const Tensor& x) const {
        MaskedPrediction out;
        out.values = Tensor::zeros({static_cast<int>(mask.keep.size())});
        out.valid.assign(mask.keep.size(), 0);
        Tensor kept = decoder.predict_one(x);
        auto kept_idx = mask.kept_indices();
        for (size_t i = 0; i < kept_idx.size(); ++i) {
            out.values.data[static_cast<size_t>(kept_idx[i])] = kept.data[i];
            out.valid[static_cast<size_t>(kept_idx[i])] = 1;
        }
        return out;
    }
};

inline Tensor take_target_rows(const Tensor& Y, const std::vector<int>& rows) {
    Tensor out = Tensor::zeros({static_cast<int>(rows.size()), Y.shape[1]});
    for (size_t r = 0; r < rows.size(); ++r)
        for (int c = 0; c < Y.shape[1]; ++c) out.at(static_cast<int>(r), c) = Y.at(rows[r], c);
    return out;
}

inline MaskedDecoder refit_masked(const Tensor& X, const Tensor& Y, const FeatureMask& mask, float lambda,
                                  RidgeOptions opt = {}) {
    MaskedDecoder md;
    md.mask = mask;
    md.decoder = fit_ridge(X, take_target_rows(Y, mask.kept_indices()), lambda, opt);
    return md;
}

// mean CV accuracy per candidate lambda; the winner maximizes the mean
inline float choose_lambda(const Tensor& X, const Tensor& Y, const std::vector<float>& grid, int k_folds,
                           uint64_t fold_seed, RidgeOptions opt = {}) {
    float best = grid.front();
    double best_score = -2.0;
    for (float lam : grid) {
        auto r = cv_accuracy(X, Y, lam, k_folds, fold_seed, opt);
        double mean = 0.0;
        for (float v : r) mean += v;
        mean /= static_cast<double>(r.size());
        if (mean > best_score) {
            best_score = mean;
            best = lam;
        }
    }
    return best;
}

// --------------------------------------------------------------------------
// the three per-subject feature-space decoders of the pipeline

struct DecodeConfig {
    std::vector<float> lambda_grid = {0.1f, 1.0f, 10.0f, 100.0f};
    int k_folds = 5;
    float keep_fraction = 0.25f;  // applied to the tap spaces only
    uint64_t fold_seed = 0;
    bool standardize = true;
};

struct FittedSpace {
    RidgeDecoder decoder;     // c and z: full width
    float lambda = 0.0f;
    std::vector<float> cv_r;  // per-dim, at the chosen lambda
};

struct FittedTapSpace {
    MaskedDecoder masked;
    float lambda = 0.0f;
};

struct DecoderSet {
    FittedSpace c;
    FittedSpace z;
    std::vector<FittedTapSpace> taps;
    int tap_width = 0;  // per-layer tap dimension
    std::string weights_hash;
    uint64_t subject_seed = 0;
    DecodeConfig cfg;
};

namespace detail {

// (dim x N) matrices of cached features and (voxels x N) of averaged trials
struct TrainMatrices {
    Tensor X;
    Tensor c;
    Tensor z;
    std::vector<Tensor> taps;
};

inline TrainMatrices training_matrices(const Dataset& ds, int subject_index, int n_tap_layers) {
    const auto& vox = ds.voxels.at(static_cast<size_t>(subject_index));
    auto ids = ds.train_ids();
    int N = static_cast<int>(ids.size());
    int V = ds.cfg.n_voxels;
    int c_dim = static_cast<int>(ds.scenes[0].features.c_keep.numel());
    int z_dim = static_cast<int>(ds.scenes[0].features.z.numel());
    int tap_total = static_cast<int>(ds.scenes[0].features.taps.numel());
    int tap_width = tap_total / n_tap_layers;
    TrainMatrices m;
    m.X = Tensor::zeros({V, N});
    m.c = Tensor::zeros({c_dim, N});
    m.z = Tensor::zeros({z_dim, N});
    for (int l = 0; l < n_tap_layers; ++l) m.taps.push_back(Tensor::zeros({tap_width, N}));
    for (int i = 0; i < N; ++i) {
        const SceneRecord& rec = ds.scenes[static_cast<size_t>(ids[static_cast<size_t>(i)])];
        const VoxelRecord& vr = vox[static_cast<size_t>(ids[static_cast<size_t>(i)])];
        for (int v = 0; v < V; ++v) m.X.at(v, i) = vr.averaged.data[static_cast<size_t>(v)];
        for (int d = 0; d < c_dim; ++d) m.c.at(d, i) = rec.features.c_keep.data[static_cast<size_t>(d)];
        for (int d = 0; d < z_dim; ++d) m.z.at(d, i) = rec.features.z.data[static_cast<size_t>(d)];
        for (int l = 0; l < n_tap_layers; ++l)
            for (int d = 0; d < tap_width; ++d)
                m.taps[static_cast<size_t>(l)].at(d, i) =
                    rec.features.taps.data[static_cast<size_t>(l) * tap_width + d];
    }
    return m;
}

}  // namespace detail

// Fits f_c, f_z and one masked f_tap per layer for one subject. Lambda is
// chosen per feature space on the CV grid; the top-fraction mask applies to
// the tap spaces only and the kept dims are refit on all training data.
inline DecoderSet fit_decoders(const Dataset& ds, int subject_index, int n_tap_layers, DecodeConfig cfg = {}) {
    if (!ds.has_voxels()) throw UpstreamMissing("dataset has no voxel responses; regenerate it with models");
    RidgeOptions opt{cfg.standardize};
    auto m = detail::training_matrices(ds, subject_index, n_tap_layers);
    DecoderSet out;
    out.cfg = cfg;
    out.weights_hash = ds.weights_hash;
    out.subject_seed = ds.subject_seeds.at(static_cast<size_t>(subject_index));
    out.tap_width = m.taps[0].shape[0];

    auto fit_plain = [&](const Tensor& Y) {
        FittedSpace fs;
        fs.lambda = choose_lambda(m.X, Y, cfg.lambda_grid, cfg.k_folds, cfg.fold_seed, opt);
        fs.cv_r = cv_accuracy(m.X, Y, fs.lambda, cfg.k_folds, cfg.fold_seed, opt);
        fs.decoder = fit_ridge(m.X, Y, fs.lambda, opt);
        return fs;
    };
    out.c = fit_plain(m.c);
    out.z = fit_plain(m.z);
    for (const Tensor& Y : m.taps) {
        FittedTapSpace ts;
        ts.lambda = choose_lambda(m.X, Y, cfg.lambda_grid, cfg.k_folds, cfg.fold_seed, opt);
        auto r = cv_accuracy(m.X, Y, ts.lambda, cfg.k_folds, cfg.fold_seed, opt);
        FeatureMask mask = select_features(r, cfg.keep_fraction);
        ts.masked = refit_masked(m.X, Y, mask, ts.lambda, opt);
        out.taps.push_back(std::move(ts));
    }
    return out;
}

// --------------------------------------------------------------------------
// persistence: TNSR bundles plus a JSON meta file per decoder set

namespace detail {

inline TensorBundle ridge_bundle(const RidgeDecoder& d) {
    TensorBundle b;
    b["weights"] = d.weights;
    b["bias"] = d.bias;
    b["x_mean"] = d.x_mean;
    b["x_std"] = d.x_std;
    return b;
}

inline RidgeDecoder ridge_from_bundle(const TensorBundle& b, float lambda, bool standardized) {
    RidgeDecoder d;
    d.weights = b.at("weights");
    d.bias = b.at("bias");
    d.x_mean = b.at("x_mean");
    d.x_std = b.at("x_std");
    d.n_targets = d.weights.shape[0];
    d.n_voxels = d.weights.shape[1];
    d.lambda = lambda;
    d.standardized = standardized;
    return d;
}

}  // namespace detail

inline void save_decoders(const DecoderSet& set, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json meta;
    meta["format"] = "mindkit-decoders";
    meta["weights_hash"] = set.weights_hash;
    meta["subject_seed"] = set.subject_seed;
    meta["fold_seed"] = set.cfg.fold_seed;
    meta["standardize"] = set.cfg.standardize;
    meta["keep_fraction"] = set.cfg.keep_fraction;
    meta["tap_width"] = set.tap_width;
    meta["lambda_c"] = set.c.lambda;
    meta["lambda_z"] = set.z.lambda;
    auto save_space = [&](const FittedSpace& fsp, const std::string& name) {
        TensorBundle b = detail::ridge_bundle(fsp.decoder);
        b["cv_r"] = Tensor({static_cast<int>(fsp.cv_r.size())}, fsp.cv_r);
        b.save(dir + "/" + name);
    };
    save_space(set.c, "c");
    save_space(set.z, "z");
    auto& lam_taps = meta["lambda_taps"] = nlohmann::json::array();
    for (size_t l = 0; l < set.taps.size(); ++l) {
        const FittedTapSpace& ts = set.taps[l];
        TensorBundle b = detail::ridge_bundle(ts.masked.decoder);
        b["cv_r"] = Tensor({static_cast<int>(ts.masked.mask.cv_r.size())}, ts.masked.mask.cv_r);
        std::vector<float> keepf(ts.masked.mask.keep.begin(), ts.masked.mask.keep.end());
        b["mask"] = Tensor({static_cast<int>(keepf.size())}, keepf);
        b.save(dir + "/tap" + std::to_string(l));
        lam_taps.push_back(ts.lambda);
    }
    meta["n_taps"] = set.taps.size();
    std::ofstream out(dir + "/decoders.json");
    if (!out) throw IOFailure("cannot write decoder meta in " + dir);
    out << meta.dump(2) << "\n";
}

inline DecoderSet load_decoders(const std::string& dir) {
    std::ifstream in(dir + "/decoders.json");
    if (!in) throw UpstreamMissing("no decoder set at " + dir);
    nlohmann::json meta = nlohmann::json::parse(in);
    DecoderSet set;
    set.weights_hash = meta.at("weights_hash").get<std::string>();
    set.subject_seed = meta.at("subject_seed").get<uint64_t>();
    set.cfg.fold_seed = meta.at("fold_seed").get<uint64_t>();
    set.cfg.standardize = meta.at("standardize").get<bool>();
    set.cfg.keep_fraction = meta.at("keep_fraction").get<float>();
    set.tap_width = meta.at("tap_width").get<int>();
    bool std_on = set.cfg.standardize;
    auto load_space = [&](const std::string& name, float lambda) {
        TensorBundle b = TensorBundle::load(dir + "/" + name);
        FittedSpace fsp;
        fsp.decoder = detail::ridge_from_bundle(b, lambda, std_on);
        fsp.lambda = lambda;
        const Tensor& r = b.at("cv_r");
        fsp.cv_r.assign(r.data.begin(), r.data.end());
        return fsp;
    };
    set.c = load_space("c", meta.at("lambda_c").get<float>());
    set.z = load_space("z", meta.at("lambda_z").get<float>());
    size_t n_taps = meta.at("n_taps").get<size_t>();
    for (size_t l = 0; l < n_taps; ++l) {
        TensorBundle b = TensorBundle::load(dir + "/tap" + std::to_string(l));
        FittedTapSpace ts;
        ts.lambda = meta.at("lambda_taps")[l].get<float>();
        ts.masked.decoder = detail::ridge_from_bundle(b, ts.lambda, std_on);
        const Tensor& r = b.at("cv_r");
        const Tensor& k = b.at("mask");
        ts.masked.mask.cv_r.assign(r.data.begin(), r.data.end());
        ts.masked.mask.keep.assign(k.data.size(), 0);
        for (size_t i = 0; i < k.data.size(); ++i) ts.masked.mask.keep[i] = k.data[i] != 0.0f ? 1 : 0;
        ts.masked.mask.fraction = set.cfg.keep_fraction;
        set.taps.push_back(std::move(ts));
    }
    return set;
}

}  // namespace mindkit

#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mindkit/autoencoder.hpp"
#include "mindkit/contrastive.hpp"
#include "mindkit/ppm.hpp"
#include "mindkit/tnsr.hpp"

#include "json.hpp"

namespace mindkit {

// --------------------------------------------------------------------------
// scenes

constexpr int kNumClasses = 8;
constexpr int kNumColors = 8;
constexpr float kPosMin = 0.26f;
constexpr float kPosMax = 0.74f;
constexpr float kSizeMin = 0.12f;
constexpr float kSizeMax = 0.34f;

inline const char* class_name(int c) {
    static const char* names[kNumClasses] = {"disk", "square", "triangle", "diamond",
                                             "ring", "plus",   "bar",      "wedge"};
    return names[c];
}

// palettes live on the 1/255 grid so PPM round trips are exact
inline std::array<float, 3> fg_palette(int i) {
    static const std::array<std::array<int, 3>, kNumColors> p = {{{220, 50, 40},
                                                                  {60, 180, 70},
                                                                  {50, 90, 220},
                                                                  {230, 220, 60},
                                                                  {200, 60, 200},
                                                                  {70, 200, 210},
                                                                  {235, 235, 235},
                                                                  {240, 150, 50}}};
    return {p[static_cast<size_t>(i)][0] / 255.0f, p[static_cast<size_t>(i)][1] / 255.0f,
            p[static_cast<size_t>(i)][2] / 255.0f};
}

inline std::array<float, 3> bg_palette(int i) {
    static const std::array<std::array<int, 3>, kNumColors> p = {{{25, 25, 30},
                                                                  {70, 40, 25},
                                                                  {30, 60, 35},
                                                                  {25, 40, 70},
                                                                  {60, 25, 60},
                                                                  {35, 65, 70},
                                                                  {90, 90, 95},
                                                                  {50, 50, 20}}};
    return {p[static_cast<size_t>(i)][0] / 255.0f, p[static_cast<size_t>(i)][1] / 255.0f,
            p[static_cast<size_t>(i)][2] / 255.0f};
}

struct SceneSpec {
    int object_class = 0;
    float x = 0.5f;  // center, in [kPosMin, kPosMax] so every shape fits the frame
    float y = 0.5f;
    float size = 0.2f;  // fraction of the frame, [kSizeMin, kSizeMax]
    float orientation = 0.0f;
    int fg_color = 0;
    int bg_color = 0;
};

inline SceneSpec sample_scene(Rng& rng) {
    SceneSpec s;
    s.object_class = rng.uniform_int(kNumClasses);
    s.x = static_cast<float>(rng.uniform(kPosMin, kPosMax));
    s.y = static_cast<float>(rng.uniform(kPosMin, kPosMax));
    s.size = static_cast<float>(rng.uniform(kSizeMin, kSizeMax));
    s.orientation = static_cast<float>(rng.uniform(0.0, 6.283185307179586));
    s.fg_color = rng.uniform_int(kNumColors);
    s.bg_color = rng.uniform_int(kNumColors);
    return s;
}

namespace detail {

inline bool inside_shape(int object_class, float u, float v) {
    float r2 = u * u + v * v;
    switch (object_class) {
        case 0: return r2 <= 1.0f;                                              // disk
        case 1: return std::abs(u) <= 1.0f && std::abs(v) <= 1.0f;              // square
        case 2: return v <= 1.0f && v >= 2.0f * std::abs(u) - 1.0f;             // triangle
        case 3: return std::abs(u) + std::abs(v) <= 1.0f;                       // diamond
        case 4: return r2 <= 1.0f && r2 >= 0.45f * 0.45f;                       // ring
        case 5:
            return (std::abs(u) <= 0.33f && std::abs(v) <= 1.0f) ||
                   (std::abs(v) <= 0.33f && std::abs(u) <= 1.0f);               // plus
        case 6: return std::abs(u) <= 1.0f && std::abs(v) <= 0.35f;             // bar
        case 7: return r2 <= 1.0f && u >= 0.0f && v >= 0.0f;                    // wedge
        default: return false;
    }
}

}  // namespace detail

// Deterministic rasterization at 32x32x3 with pixel-center inside tests; no
// anti-aliasing, so identical specs give bit-identical images.
inline Tensor render(const SceneSpec& spec, int height = 32, int width = 32) {
    auto fg = fg_palette(spec.fg_color);
    auto bg = bg_palette(spec.bg_color);
    std::vector<float> px(static_cast<size_t>(height) * width * 3);
    float half = 0.5f * spec.size;
    float c = std::cos(spec.orientation), s = std::sin(spec.orientation);
    for (int yi = 0; yi < height; ++yi) {
        for (int xi = 0; xi < width; ++xi) {
            float pxf = (static_cast<float>(xi) + 0.5f) / static_cast<float>(width);
            float pyf = (static_cast<float>(yi) + 0.5f) / static_cast<float>(height);
            float dx = pxf - spec.x;
            float dy = pyf - spec.y;
            float u = (c * dx + s * dy) / half;
            float v = (-s * dx + c * dy) / half;
            const auto& col = detail::inside_shape(spec.object_class, u, v) ? fg : bg;
            size_t base = (static_cast<size_t>(yi) * width + xi) * 3;
            px[base + 0] = col[0];
            px[base + 1] = col[1];
            px[base + 2] = col[2];
        }
    }
    return Tensor({height, width, 3}, std::move(px));
}

// --------------------------------------------------------------------------
// captions: [class, fg-color, position bucket, size bucket, bg-color]

constexpr int kVocabSize = 37;  // pad + 8 classes + 8 fg + 9 positions + 3 sizes + 8 bg

inline std::vector<std::string> vocabulary() {
    std::vector<std::string> v;
    v.push_back("pad");
    for (int i = 0; i < kNumClasses; ++i) v.push_back(std::string("class:") + class_name(i));
    for (int i = 0; i < kNumColors; ++i) v.push_back("fg:" + std::to_string(i));
    for (int i = 0; i < 9; ++i) v.push_back("pos:" + std::to_string(i / 3) + std::to_string(i % 3));
    for (int i = 0; i < 3; ++i) v.push_back("size:" + std::to_string(i));
    for (int i = 0; i < kNumColors; ++i) v.push_back("bg:" + std::to_string(i));
    return v;
}

namespace detail {

inline int bucket3(float v, float lo, float hi) {
    int b = static_cast<int>((v - lo) / (hi - lo) * 3.0f);
    return std::clamp(b, 0, 2);
}

}  // namespace detail

inline std::vector<int> caption_tokens(const SceneSpec& spec) {
    int pos_bucket = detail::bucket3(spec.y, kPosMin, kPosMax) * 3 + detail::bucket3(spec.x, kPosMin, kPosMax);
    int size_bucket = detail::bucket3(spec.size, kSizeMin, kSizeMax);
    return {1 + spec.object_class, 1 + kNumClasses + spec.fg_color, 1 + kNumClasses + kNumColors + pos_bucket,
            1 + kNumClasses + kNumColors + 9 + size_bucket,
            1 + kNumClasses + kNumColors + 9 + 3 + spec.bg_color};
}

// --------------------------------------------------------------------------
// ground-truth features cached per scene

struct FeatureSet {
    Tensor c_keep;  // truncated text embedding, flattened
    Tensor z;       // standardized autoencoder latent
    Tensor taps;    // concatenated shallow image-encoder taps

    Tensor concat_all() const { return concat({c_keep, z, taps}); }
    int total_dim() const { return static_cast<int>(c_keep.numel() + z.numel() + taps.numel()); }
};

inline FeatureSet compute_features(AutoencoderParams& ae, EncoderParams& enc, const Tensor& image,
                                   const std::vector<int>& tokens) {
    FeatureSet f;
    Tensor c = embed_text(enc, tokens);
    f.c_keep = condition_from_c(enc.cfg, c);
    f.z = encode(ae, image);
    auto feats = image_features(enc, image);
    f.taps = concat(feats.taps);
    return f;
}

// hash of the models whose outputs are cached in a dataset
inline std::string feature_weights_hash(AutoencoderParams& ae, EncoderParams& enc) {
    Hasher h;
    h.update(ae.bundle().content_hash());
    h.update(enc.bundle().content_hash());
    return h.hex();
}

struct SceneRecord {
    int id = 0;
    SceneSpec spec;
    Tensor image;
    std::vector<int> tokens;
    bool has_features = false;
    FeatureSet features;
    std::string weights_hash;  // hash of the models the cache was computed with
};

// --------------------------------------------------------------------------
// voxel forward model

struct SubjectModel {
    uint64_t subject_seed = 0;
    int n_voxels = 0;
    int feature_dim = 0;
    std::vector<float> mixing;      // n_voxels x feature_dim, zero off the sparsity mask
    std::vector<float> noise_sigma;  // per voxel
    std::string weights_hash;

    std::vector<float> project(const Tensor& features) const {
        std::vector<float> out(static_cast<size_t>(n_voxels));
        for (int v = 0; v < n_voxels; ++v) {
            const float* row = mixing.data() + static_cast<size_t>(v) * feature_dim;
            double acc = 0.0;
            for (int d = 0; d < feature_dim; ++d) acc += static_cast<double>(row[d]) * features.data[static_cast<size_t>(d)];
            out[static_cast<size_t>(v)] = static_cast<float>(acc);
        }
        return out;
    }
};

// Each voxel reads a random ~25% subset of the concatenated features with
// gaussian weights; fixed per subject seed.
inline SubjectModel make_subject(uint64_t subject_seed, int n_voxels, int feature_dim, float sparsity,
                                 float sigma, const std::string& weights_hash) {
    SubjectModel m;
    m.subject_seed = subject_seed;
    m.n_voxels = n_voxels;
    m.feature_dim = feature_dim;
    m.weights_hash = weights_hash;
    m.mixing.assign(static_cast<size_t>(n_voxels) * feature_dim, 0.0f);
    m.noise_sigma.assign(static_cast<size_t>(n_voxels), sigma);
    Rng rng(derive_seed(subject_seed, 0x50bull));
    float scale = 1.0f / std::sqrt(std::max(1.0f, sparsity * static_cast<float>(feature_dim)));
    for (int v = 0; v < n_voxels; ++v) {
        float* row = m.mixing.data() + static_cast<size_t>(v) * feature_dim;
        for (int d = 0; d < feature_dim; ++d)
            if (rng.uniform() < sparsity) row[d] = static_cast<float>(rng.gaussian()) * scale;
    }
    return m;
}

struct VoxelRecord {
    std::vector<Tensor> trials;
    Tensor averaged;
    uint64_t subject_seed = 0;

    void compute_average() {
        int n = static_cast<int>(trials.size());
        averaged = Tensor::zeros(trials[0].shape);
        for (size_t i = 0; i < averaged.numel(); ++i) {
            double acc = 0.0;
            for (const auto& t : trials) acc += t.data[i];
            averaged.data[i] = static_cast<float>(acc / n);
        }
    }
};

// trial = W_subject * concat(c, z, taps) + gaussian noise; averaged field is
// the arithmetic mean across trials
inline VoxelRecord respond(const SceneRecord& record, const SubjectModel& subject, int n_trials, Rng& rng) {
    if (n_trials < 1 || n_trials > 3) throw OutOfRange("trial count must be 1..3");
    if (!record.has_features) throw StaleFeatureCache("scene record has no cached features");
    if (record.weights_hash != subject.weights_hash)
        throw StaleFeatureCache("feature cache was built with different model weights");
    Tensor f = record.features.concat_all();
    if (static_cast<int>(f.numel()) != subject.feature_dim)
        throw DimensionMismatch("feature dim " + std::to_string(f.numel()) + " != subject's " +
                                std::to_string(subject.feature_dim));
    std::vector<float> clean = subject.project(f);
    VoxelRecord out;
    out.subject_seed = subject.subject_seed;
    for (int t = 0; t < n_trials; ++t) {
        std::vector<float> trial(clean);
        for (int v = 0; v < subject.n_voxels; ++v)
            if (subject.noise_sigma[static_cast<size_t>(v)] > 0.0f)
                trial[static_cast<size_t>(v)] += subject.noise_sigma[static_cast<size_t>(v)] *
                                                 static_cast<float>(rng.gaussian());
        out.trials.emplace_back(Shape{subject.n_voxels}, std::move(trial));
    }
    out.compute_average();
    return out;
}

// --------------------------------------------------------------------------
// dataset build / persistence

struct DatasetConfig {
    int n_train = 2000;
    int n_test = 200;  // shared across all subjects
    int n_subjects = 4;
    uint64_t master_seed = 7;
    float noise_sigma = 0.1f;
    int n_trials = 3;
    int n_voxels = 512;
    float voxel_sparsity = 0.25f;
};

struct Dataset {
    DatasetConfig cfg;
    std::vector<SceneRecord> scenes;  // ids [0, n_train) train, rest the shared test split
    std::vector<uint64_t> subject_seeds;
    // voxels[subject][scene id]; empty until features exist
    std::vector<std::vector<VoxelRecord>> voxels;
    std::string weights_hash;  // empty while features are pending

    bool has_voxels() const { return !voxels.empty(); }
    int n_scenes() const { return static_cast<int>(scenes.size()); }
    std::vector<int> train_ids() const {
        std::vector<int> out;
        for (int i = 0; i < cfg.n_train; ++i) out.push_back(i);
        return out;
    }
    std::vector<int> test_ids() const {
        std::vector<int> out;
        for (int i = cfg.n_train; i < cfg.n_train + cfg.n_test; ++i) out.push_back(i);
        return out;
    }
};

inline uint64_t subject_seed_for(uint64_t master_seed, int subject_index) {
    return derive_seed(master_seed, 0xab0ull + static_cast<uint64_t>(subject_index));
}

// Scene generation is independent of the models; features and voxels need
// trained models and are filled in when `ae`/`enc` are provided.
inline Dataset build_dataset(const DatasetConfig& cfg, AutoencoderParams* ae, EncoderParams* enc) {
    if (cfg.n_train < 1 || cfg.n_test < 1) throw BadRange("dataset needs n_train >= 1 and n_test >= 1");
    Dataset ds;
    ds.cfg = cfg;
    for (int i = 0; i < cfg.n_subjects; ++i) ds.subject_seeds.push_back(subject_seed_for(cfg.master_seed, i));
    int total = cfg.n_train + cfg.n_test;
    for (int id = 0; id < total; ++id) {
        Rng rng(derive_seed(cfg.master_seed, 0x5ce0ull + static_cast<uint64_t>(id)));
        SceneRecord rec;
        rec.id = id;
        rec.spec = sample_scene(rng);
        rec.image = render(rec.spec);
        rec.tokens = caption_tokens(rec.spec);
        ds.scenes.push_back(std::move(rec));
    }
    if (ae && enc) {
        ds.weights_hash = feature_weights_hash(*ae, *enc);
        for (auto& rec : ds.scenes) {
            rec.features = compute_features(*ae, *enc, rec.image, rec.tokens);
            rec.has_features = true;
            rec.weights_hash = ds.weights_hash;
        }
        int feature_dim = ds.scenes[0].features.total_dim();
        ds.voxels.resize(static_cast<size_t>(cfg.n_subjects));
        for (int s = 0; s < cfg.n_subjects; ++s) {
            SubjectModel subject = make_subject(ds.subject_seeds[static_cast<size_t>(s)], cfg.n_voxels,
                                                feature_dim, cfg.voxel_sparsity, cfg.noise_sigma, ds.weights_hash);
            for (auto& rec : ds.scenes) {
                Rng rng(derive_seed(ds.subject_seeds[static_cast<size_t>(s)],
                                    0x40d0ull + static_cast<uint64_t>(rec.id)));
                ds.voxels[static_cast<size_t>(s)].push_back(respond(rec, subject, cfg.n_trials, rng));
            }
        }
    }
    return ds;
}

namespace detail {

inline nlohmann::json spec_to_json(const SceneSpec& s) {
    return {{"class", s.object_class}, {"x", s.x},  {"y", s.y},          {"size", s.size},
            {"orientation", s.orientation},         {"fg", s.fg_color},  {"bg", s.bg_color}};
}

inline SceneSpec spec_from_json(const nlohmann::json& j) {
    SceneSpec s;
    s.object_class = j.at("class").get<int>();
    s.x = j.at("x").get<float>();
    s.y = j.at("y").get<float>();
    s.size = j.at("size").get<float>();
    s.orientation = j.at("orientation").get<float>();
    s.fg_color = j.at("fg").get<int>();
    s.bg_color = j.at("bg").get<int>();
    return s;
}

inline std::string scene_file(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%05d", id);
    return buf;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir + "/images");
    nlohmann::json m;
    m["format"] = "mindkit-dataset";
    m["version"] = 1;
    m["master_seed"] = ds.cfg.master_seed;
    m["n_train"] = ds.cfg.n_train;
    m["n_test"] = ds.cfg.n_test;
    m["n_subjects"] = ds.cfg.n_subjects;
    m["noise_sigma"] = ds.cfg.noise_sigma;
    m["n_trials"] = ds.cfg.n_trials;
    m["n_voxels"] = ds.cfg.n_voxels;
    m["voxel_sparsity"] = ds.cfg.voxel_sparsity;
    m["subject_seeds"] = ds.subject_seeds;
    m["weights_hash"] = ds.weights_hash;
    if (!ds.scenes.empty() && ds.scenes[0].has_features) {
        const FeatureSet& f = ds.scenes[0].features;
        m["feature_layout"] = {{"c_keep", f.c_keep.numel()}, {"z", f.z.numel()}, {"taps", f.taps.numel()}};
    }
    auto& scenes = m["scenes"] = nlohmann::json::array();
    for (const auto& rec : ds.scenes) {
        nlohmann::json s;
        s["id"] = rec.id;
        s["split"] = rec.id < ds.cfg.n_train ? "train" : "test";
        s["spec"] = detail::spec_to_json(rec.spec);
        s["tokens"] = rec.tokens;
        scenes.push_back(std::move(s));
        write_ppm(dir + "/images/" + detail::scene_file(rec.id) + ".ppm", rec.image);
    }
    if (!ds.scenes.empty() && ds.scenes[0].has_features) {
        fs::create_directories(dir + "/features");
        for (const auto& rec : ds.scenes)
            write_tnsr(dir + "/features/" + detail::scene_file(rec.id) + ".tnsr", rec.features.concat_all());
    }
    for (size_t s = 0; s < ds.voxels.size(); ++s) {
        std::string vdir = dir + "/voxels/subject" + std::to_string(s);
        fs::create_directories(vdir);
        for (const auto& rec : ds.scenes) {
            const VoxelRecord& vr = ds.voxels[s][static_cast<size_t>(rec.id)];
            int n_trials = static_cast<int>(vr.trials.size());
            std::vector<float> mat;
            for (const auto& t : vr.trials) mat.insert(mat.end(), t.data.begin(), t.data.end());
            write_tnsr(vdir + "/" + detail::scene_file(rec.id) + ".tnsr",
                       Tensor({n_trials, static_cast<int>(vr.trials[0].numel())}, std::move(mat)));
        }
    }
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw IOFailure("cannot write manifest in " + dir);
    out << m.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw DatasetMissing("no manifest at " + dir + "/manifest.json");
    nlohmann::json m = nlohmann::json::parse(in);
    if (m.value("format", "") != "mindkit-dataset") throw IOFailure("not a dataset directory: " + dir);
    Dataset ds;
    ds.cfg.master_seed = m.at("master_seed").get<uint64_t>();
    ds.cfg.n_train = m.at("n_train").get<int>();
    ds.cfg.n_test = m.at("n_test").get<int>();
    ds.cfg.n_subjects = m.at("n_subjects").get<int>();
    ds.cfg.noise_sigma = m.at("noise_sigma").get<float>();
    ds.cfg.n_trials = m.at("n_trials").get<int>();
    ds.cfg.n_voxels = m.at("n_voxels").get<int>();
    ds.cfg.voxel_sparsity = m.at("voxel_sparsity").get<float>();
    ds.subject_seeds = m.at("subject_seeds").get<std::vector<uint64_t>>();
    ds.weights_hash = m.at("weights_hash").get<std::string>();
    bool with_features = !ds.weights_hash.empty();
    int c_dim = 0, z_dim = 0, tap_dim = 0;
    if (with_features) {
        c_dim = m.at("feature_layout").at("c_keep").get<int>();
        z_dim = m.at("feature_layout").at("z").get<int>();
        tap_dim = m.at("feature_layout").at("taps").get<int>();
    }
    for (const auto& s : m.at("scenes")) {
        SceneRecord rec;
        rec.id = s.at("id").get<int>();
        rec.spec = detail::spec_from_json(s.at("spec"));
        rec.tokens = s.at("tokens").get<std::vector<int>>();
        rec.image = read_ppm(dir + "/images/" + detail::scene_file(rec.id) + ".ppm");
        if (with_features) {
            Tensor f = read_tnsr(dir + "/features/" + detail::scene_file(rec.id) + ".tnsr");
            rec.features.c_keep = Tensor({c_dim}, {f.data.begin(), f.data.begin() + c_dim});
            rec.features.z = Tensor({z_dim}, {f.data.begin() + c_dim, f.data.begin() + c_dim + z_dim});
            rec.features.taps = Tensor({tap_dim}, {f.data.begin() + c_dim + z_dim, f.data.end()});
            rec.has_features = true;
            rec.weights_hash = ds.weights_hash;
        }
        ds.scenes.push_back(std::move(rec));
    }
    if (with_features) {
        ds.voxels.resize(static_cast<size_t>(ds.cfg.n_subjects));
        for (int s = 0; s < ds.cfg.n_subjects; ++s) {
            std::string vdir = dir + "/voxels/subject" + std::to_string(s);
            for (const auto& rec : ds.scenes) {
                Tensor mat = read_tnsr(vdir + "/" + detail::scene_file(rec.id) + ".tnsr");
                VoxelRecord vr;
                vr.subject_seed = ds.subject_seeds[static_cast<size_t>(s)];
                for (int t = 0; t < mat.shape[0]; ++t)
                    vr.trials.emplace_back(Shape{mat.shape[1]},
                                           std::vector<float>(mat.data.begin() + static_cast<size_t>(t) * mat.shape[1],
                                                              mat.data.begin() + static_cast<size_t>(t + 1) * mat.shape[1]));
                vr.compute_average();
                ds.voxels[static_cast<size_t>(s)].push_back(std::move(vr));
            }
        }
    }
    return ds;
}

}  // namespace mindkit

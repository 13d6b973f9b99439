#pragma once

#include <cmath>
#include <vector>

#include "mindkit/model_common.hpp"
#include "mindkit/ops.hpp"

namespace mindkit {

struct EncoderConfig {
    int vocab_size = 37;
    int max_tokens = 8;
    int keep_tokens = 6;  // rows of c used downstream, analog of a truncated token grid
    int d_txt = 32;
    int image_h = 32;
    int image_w = 32;
    int patch = 8;
    int d_img = 48;
    int n_blocks = 6;
    std::vector<int> eq5_taps = {1, 2, 3};  // shallow half of the blocks (1-indexed)
    int d_emb = 64;
    float temperature = 0.07f;  // fixed, not learned

    int patch_dim() const { return patch * patch * 3; }
    int n_patches() const { return (image_h / patch) * (image_w / patch); }
    int tap_dim() const { return n_patches() * d_img; }
    int cond_dim() const { return keep_tokens * d_txt; }
};

// Dual encoder trained with symmetric InfoNCE. The text branch produces the
// condition c; the image branch exposes per-block feature taps (structure
// supervision) and a unit-normalized final embedding (semantic metric).
struct EncoderParams {
    EncoderConfig cfg;
    Tensor tok_embed, pos_embed;
    Tensor txt_w1, txt_b1, txt_w2, txt_b2;
    Tensor txt_proj, txt_proj_b;
    Tensor patch_proj, patch_b;
    struct Block {
        Tensor w1, b1, w2, b2;
    };
    std::vector<Block> blocks;
    Tensor img_proj, img_proj_b;

    static EncoderParams init(const EncoderConfig& cfg, Rng rng) {
        EncoderParams p;
        p.cfg = cfg;
        auto glorot = [&rng](int in, int out) {
            return Tensor::randn({in, out}, rng, std::sqrt(2.0f / static_cast<float>(in + out)));
        };
        p.tok_embed = Tensor::randn({cfg.vocab_size, cfg.d_txt}, rng, 0.5f);
        p.pos_embed = Tensor::randn({cfg.max_tokens, cfg.d_txt}, rng, 0.1f);
        p.txt_w1 = glorot(cfg.d_txt, cfg.d_txt);
        p.txt_b1 = Tensor::zeros({cfg.d_txt});
        p.txt_w2 = glorot(cfg.d_txt, cfg.d_txt);
        p.txt_b2 = Tensor::zeros({cfg.d_txt});
        p.txt_proj = glorot(cfg.max_tokens * cfg.d_txt, cfg.d_emb);
        p.txt_proj_b = Tensor::zeros({cfg.d_emb});
        p.patch_proj = glorot(cfg.patch_dim(), cfg.d_img);
        p.patch_b = Tensor::zeros({cfg.d_img});
        for (int b = 0; b < cfg.n_blocks; ++b) {
            Block blk;
            blk.w1 = glorot(cfg.d_img, 2 * cfg.d_img);
            blk.b1 = Tensor::zeros({2 * cfg.d_img});
            blk.w2 = glorot(2 * cfg.d_img, cfg.d_img);
            blk.b2 = Tensor::zeros({cfg.d_img});
            p.blocks.push_back(std::move(blk));
        }
        p.img_proj = glorot(cfg.d_img, cfg.d_emb);
        p.img_proj_b = Tensor::zeros({cfg.d_emb});
        return p;
    }

    NamedParams named_params() {
        NamedParams out = {{"tok_embed", &tok_embed}, {"pos_embed", &pos_embed}, {"txt_w1", &txt_w1},
                           {"txt_b1", &txt_b1},       {"txt_w2", &txt_w2},       {"txt_b2", &txt_b2},
                           {"txt_proj", &txt_proj},   {"txt_proj_b", &txt_proj_b}, {"patch_proj", &patch_proj},
                           {"patch_b", &patch_b}};
        for (size_t b = 0; b < blocks.size(); ++b) {
            std::string pre = "block" + std::to_string(b) + ".";
            out.emplace_back(pre + "w1", &blocks[b].w1);
            out.emplace_back(pre + "b1", &blocks[b].b1);
            out.emplace_back(pre + "w2", &blocks[b].w2);
            out.emplace_back(pre + "b2", &blocks[b].b2);
        }
        out.emplace_back("img_proj", &img_proj);
        out.emplace_back("img_proj_b", &img_proj_b);
        return out;
    }

    TensorBundle bundle() { return to_bundle(named_params()); }
    static EncoderParams from(const EncoderConfig& cfg, const TensorBundle& b) {
        EncoderParams p = init(cfg, Rng(0));
        from_bundle(b, p.named_params());
        return p;
    }
};

namespace detail {

// pixel gather order that groups each patch's pixels into one row
inline std::vector<int> patch_indices(const EncoderConfig& cfg, int batch) {
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(batch) * cfg.image_h * cfg.image_w);
    int per_row = cfg.image_w / cfg.patch;
    for (int b = 0; b < batch; ++b) {
        int base = b * cfg.image_h * cfg.image_w;
        for (int p = 0; p < cfg.n_patches(); ++p) {
            int py = (p / per_row) * cfg.patch;
            int px = (p % per_row) * cfg.patch;
            for (int dy = 0; dy < cfg.patch; ++dy)
                for (int dx = 0; dx < cfg.patch; ++dx) idx.push_back(base + (py + dy) * cfg.image_w + (px + dx));
        }
    }
    return idx;
}

inline std::vector<int> padded_ids(const EncoderConfig& cfg, const std::vector<int>& tokens) {
    if (static_cast<int>(tokens.size()) > cfg.max_tokens)
        throw TooLong("caption has " + std::to_string(tokens.size()) + " tokens, max " +
                      std::to_string(cfg.max_tokens));
    for (int id : tokens)
        if (id < 0 || id >= cfg.vocab_size) throw UnknownToken("token id " + std::to_string(id) + " not in vocabulary");
    std::vector<int> ids(static_cast<size_t>(cfg.max_tokens), 0);  // 0 is the pad token
    std::copy(tokens.begin(), tokens.end(), ids.begin());
    return ids;
}

struct TextWeightsOnTape {
    Tensor tok_embed, pos_embed, w1, b1, w2, b2;
};

inline TextWeightsOnTape text_weights(EncoderParams& p, Tape* tape, bool watch, std::vector<Tensor>* leaves) {
    auto wrap = [&](Tensor& t) {
        if (!tape) return t;
        Tensor wt = watch ? tape->leaf(t) : tape->constant(t);
        if (leaves) leaves->push_back(wt);
        return wt;
    };
    return {wrap(p.tok_embed), wrap(p.pos_embed), wrap(p.txt_w1), wrap(p.txt_b1), wrap(p.txt_w2), wrap(p.txt_b2)};
}

// (batch*max_tokens x d_txt) token grid for a batch of padded id sequences
inline Tensor embed_text_rows(const TextWeightsOnTape& w, const EncoderConfig& cfg, const std::vector<int>& ids) {
    int total = static_cast<int>(ids.size());
    std::vector<int> pos(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i) pos[static_cast<size_t>(i)] = i % cfg.max_tokens;
    Tensor x = add(take_rows(w.tok_embed, ids), take_rows(w.pos_embed, pos));
    Tensor h = silu(add(matmul(x, w.w1), w.b1));
    return add(matmul(h, w.w2), w.b2);
}

}  // namespace detail

// caption token ids -> c, a (max_tokens x d_txt) grid with pad rows for short
// sequences. Downstream consumers use the first keep_tokens rows.
inline Tensor embed_text(EncoderParams& p, const std::vector<int>& tokens) {
    auto ids = detail::padded_ids(p.cfg, tokens);
    auto w = detail::text_weights(p, nullptr, false, nullptr);
    Tensor c = detail::embed_text_rows(w, p.cfg, ids);
    return reshape(c, {p.cfg.max_tokens, p.cfg.d_txt});
}

// first keep_tokens rows of c, flattened: the decode target and condition
inline Tensor condition_from_c(const EncoderConfig& cfg, const Tensor& c) {
    Tensor kept = row_slice(c, 0, cfg.keep_tokens);
    return reshape(kept, {cfg.cond_dim()});
}

struct ImageFeatures {
    std::vector<Tensor> taps;  // flattened per-block features, tap_dim() each
    Tensor embedding;          // unit-normalized final embedding (d_emb)
};

namespace detail {

struct ImageWeightsOnTape {
    Tensor patch_proj, patch_b, img_proj, img_proj_b;
    std::vector<EncoderParams::Block> blocks;
};

inline ImageWeightsOnTape image_weights(EncoderParams& p, Tape* tape, bool watch, std::vector<Tensor>* leaves) {
    auto wrap = [&](Tensor& t) {
        if (!tape) return t;
        Tensor wt = watch ? tape->leaf(t) : tape->constant(t);
        if (leaves) leaves->push_back(wt);
        return wt;
    };
    ImageWeightsOnTape w;
    w.patch_proj = wrap(p.patch_proj);
    w.patch_b = wrap(p.patch_b);
    for (auto& blk : p.blocks) {
        EncoderParams::Block b;
        b.w1 = wrap(blk.w1);
        b.b1 = wrap(blk.b1);
        b.w2 = wrap(blk.w2);
        b.b2 = wrap(blk.b2);
        w.blocks.push_back(std::move(b));
    }
    w.img_proj = wrap(p.img_proj);
    w.img_proj_b = wrap(p.img_proj_b);
    return w;
}

struct ImageForward {
    std::vector<Tensor> block_states;  // (batch*n_patches x d_img) after each block
    Tensor embedding;                  // (batch x d_emb), unit rows
};

// pixels: (batch x H*W*3) rows
inline ImageForward image_forward(const ImageWeightsOnTape& w, const EncoderConfig& cfg, const Tensor& pixels) {
    int batch = pixels.shape[0];
    Tensor px = reshape(pixels, {batch * cfg.image_h * cfg.image_w, 3});
    Tensor patches = reshape(take_rows(px, patch_indices(cfg, batch)),
                             {batch * cfg.n_patches(), cfg.patch_dim()});
    Tensor x = add(matmul(patches, w.patch_proj), w.patch_b);
    ImageForward out;
    for (const auto& blk : w.blocks) {
        Tensor h = layer_norm(x);
        h = silu(add(matmul(h, blk.w1), blk.b1));
        h = add(matmul(h, blk.w2), blk.b2);
        x = add(x, h);
        out.block_states.push_back(x);
    }
    // mean-pool patches, project, normalize
    Tensor pooler = Tensor::zeros({batch, batch * cfg.n_patches()});
    for (int b = 0; b < batch; ++b)
        for (int t = 0; t < cfg.n_patches(); ++t)
            pooler.at(b, b * cfg.n_patches() + t) = 1.0f / static_cast<float>(cfg.n_patches());
    Tensor pooled = matmul(pooler, reshape(x, {batch * cfg.n_patches(), cfg.d_img}));
    out.embedding = l2_normalize(add(matmul(pooled, w.img_proj), w.img_proj_b));
    return out;
}

}  // namespace detail

// image -> {tap features for the configured shallow blocks, final embedding}.
// Pure and deterministic; differentiable when the image is on a tape.
inline ImageFeatures image_features(EncoderParams& p, const Tensor& image) {
    const EncoderConfig& cfg = p.cfg;
    if (image.rank() != 3 || image.shape[0] != cfg.image_h || image.shape[1] != cfg.image_w || image.shape[2] != 3)
        throw BadResolution("expected " + std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w) +
                            "x3 image, got " + shape_str(image.shape));
    Tape* tape = detail::resolve_tape({&image});
    auto w = detail::image_weights(p, tape, false, nullptr);
    auto fwd = detail::image_forward(w, cfg, reshape(image, {1, cfg.image_h * cfg.image_w * 3}));
    ImageFeatures out;
    for (int tap : cfg.eq5_taps)
        out.taps.push_back(reshape(fwd.block_states[static_cast<size_t>(tap - 1)], {cfg.tap_dim()}));
    out.embedding = reshape(fwd.embedding, {cfg.d_emb});
    return out;
}

// final-layer text embedding used by the contrastive objective
inline Tensor text_embedding(EncoderParams& p, const std::vector<int>& tokens) {
    Tensor c = embed_text(p, tokens);
    Tensor flat = reshape(c, {1, p.cfg.max_tokens * p.cfg.d_txt});
    return reshape(l2_normalize(add(matmul(flat, p.txt_proj), p.txt_proj_b)), {p.cfg.d_emb});
}

struct ContrastiveTrainHyper {
    int epochs = 30;
    int batch = 16;
    float lr = 2e-3f;
    uint64_t seed = 0;
    int min_pairs = 200;
    float val_fraction = 0.2f;
};

struct ContrastiveLog {
    std::vector<double> epoch_loss;
    std::vector<double> retrieval_accuracy;  // held-out top-1, per epoch
};

// symmetric InfoNCE over in-batch pairs; fixed temperature
inline Tensor info_nce(const Tensor& img_emb, const Tensor& txt_emb, float temperature) {
    int B = img_emb.shape[0];
    if (B < 4) throw BatchTooSmall("contrastive batch needs >= 4 pairs, got " + std::to_string(B));
    Tensor logits = scale(matmul(img_emb, transpose(txt_emb)), 1.0f / temperature);
    std::vector<int> diag(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) diag[static_cast<size_t>(i)] = i;
    Tensor a = softmax_cross_entropy(logits, diag);
    Tensor b = softmax_cross_entropy(transpose(logits), diag);
    Tensor loss = scale(add(a, b), 0.5f);
    loss.hi_value = 0.5 * (a.hi() + b.hi());
    return loss;
}

inline ContrastiveLog train_contrastive(EncoderParams& p, const Tensor& images,
                                        const std::vector<std::vector<int>>& captions,
                                        const ContrastiveTrainHyper& hyper) {
    const EncoderConfig& cfg = p.cfg;
    int N = images.rank() == 2 ? images.shape[0] : 0;
    if (N == 0 || captions.size() != static_cast<size_t>(N)) throw EmptyDataset("image/caption pairs required");
    if (N < hyper.min_pairs)
        throw EmptyDataset("contrastive training needs at least " + std::to_string(hyper.min_pairs) + " pairs");
    int n_val = std::max(4, static_cast<int>(static_cast<float>(N) * hyper.val_fraction));
    int n_train = N - n_val;
    Rng rng(derive_seed(hyper.seed, 0xc0));
    NamedParams np = p.named_params();
    AdamState adam(hyper.lr);
    ContrastiveLog log;

    auto all_padded = [&](const std::vector<int>& order, int lo, int hi) {
        std::vector<int> ids;
        for (int i = lo; i < hi; ++i) {
            auto one = detail::padded_ids(cfg, captions[static_cast<size_t>(order[static_cast<size_t>(i)])]);
            ids.insert(ids.end(), one.begin(), one.end());
        }
        return ids;
    };

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        auto order = shuffled_indices(n_train, rng);
        double epoch_loss = 0.0;
        int batches = 0;
        for (int lo = 0; lo + 4 <= n_train; lo += hyper.batch) {
            int hi = std::min(n_train, lo + hyper.batch);
            if (hi - lo < 4) break;
            int B = hi - lo;
            Tensor img_batch = gather_batch(images, order, lo, hi);
            auto ids = all_padded(order, lo, hi);
            Tape tape;
            std::vector<Tensor> leaves;
            auto tw = detail::text_weights(p, &tape, true, &leaves);
            auto iw = detail::image_weights(p, &tape, true, &leaves);
            Tensor txt_proj = tape.leaf(p.txt_proj);
            Tensor txt_proj_b = tape.leaf(p.txt_proj_b);
            leaves.push_back(txt_proj);
            leaves.push_back(txt_proj_b);

            auto fwd = detail::image_forward(iw, cfg, tape.constant(img_batch));
            Tensor c_rows = detail::embed_text_rows(tw, cfg, ids);
            Tensor txt_flat = reshape(c_rows, {B, cfg.max_tokens * cfg.d_txt});
            Tensor txt_emb = l2_normalize(add(matmul(txt_flat, txt_proj), txt_proj_b));
            Tensor loss = info_nce(fwd.embedding, txt_emb, cfg.temperature);
            GradMap grads = backward(loss);
            if (hyper.lr != 0.0f) {
                // leaves order: text weights (6), image weights, then the two text projections
                NamedParams ordered;
                ordered.emplace_back("tok_embed", &p.tok_embed);
                ordered.emplace_back("pos_embed", &p.pos_embed);
                ordered.emplace_back("txt_w1", &p.txt_w1);
                ordered.emplace_back("txt_b1", &p.txt_b1);
                ordered.emplace_back("txt_w2", &p.txt_w2);
                ordered.emplace_back("txt_b2", &p.txt_b2);
                ordered.emplace_back("patch_proj", &p.patch_proj);
                ordered.emplace_back("patch_b", &p.patch_b);
                for (auto& blk : p.blocks) {
                    ordered.emplace_back("w1", &blk.w1);
                    ordered.emplace_back("b1", &blk.b1);
                    ordered.emplace_back("w2", &blk.w2);
                    ordered.emplace_back("b2", &blk.b2);
                }
                ordered.emplace_back("img_proj", &p.img_proj);
                ordered.emplace_back("img_proj_b", &p.img_proj_b);
                ordered.emplace_back("txt_proj", &p.txt_proj);
                ordered.emplace_back("txt_proj_b", &p.txt_proj_b);
                apply_adam(ordered, leaves, grads, adam);
            }
            epoch_loss += loss.hi();
            batches += 1;
        }
        log.epoch_loss.push_back(batches ? epoch_loss / batches : 0.0);

        // held-out top-1 retrieval: image -> caption
        int correct = 0;
        std::vector<Tensor> vtxt;
        for (int i = n_train; i < N; ++i) vtxt.push_back(text_embedding(p, captions[static_cast<size_t>(i)]));
        for (int i = n_train; i < N; ++i) {
            Tensor img({cfg.image_h, cfg.image_w, 3},
                       std::vector<float>(images.data.begin() + static_cast<size_t>(i) * cfg.image_h * cfg.image_w * 3,
                                          images.data.begin() + static_cast<size_t>(i + 1) * cfg.image_h * cfg.image_w * 3));
            Tensor emb = image_features(p, img).embedding;
            int best = -1;
            double best_sim = -2.0;
            for (int j = 0; j < n_val; ++j) {
                double sim = 0.0;
                for (int k = 0; k < cfg.d_emb; ++k)
                    sim += static_cast<double>(emb.data[static_cast<size_t>(k)]) * vtxt[static_cast<size_t>(j)].data[static_cast<size_t>(k)];
                if (sim > best_sim) {
                    best_sim = sim;
                    best = j;
                }
            }
            if (best == i - n_train) correct += 1;
        }
        log.retrieval_accuracy.push_back(static_cast<double>(correct) / n_val);
    }
    return log;
}

}  // namespace mindkit

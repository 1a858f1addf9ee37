#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "felab/kernels.hpp"
#include "felab/rng.hpp"
#include "felab/tensor.hpp"

namespace felab {

// Masked-LM encoder: learned token + absolute position embeddings, post-LN
// residual blocks (attention then GELU FFN), and a prediction head over the
// hidden state at the single [MASK] position. The input embedding matrix is
// reused as the output projection by default (separate output bias always).
struct ModelConfig {
    int32_t vocab_size{0};
    int32_t d_model{128};
    int32_t n_heads{4};
    int32_t n_blocks{2};
    int32_t ffn_mult{4};
    int32_t max_seq_len{32};
    int32_t mask_token_id{-1};
    bool tie_output_embedding{true};
    double layer_norm_eps{1e-5};

    void validate() const {
        if (vocab_size <= 0) throw ConfigError("model.vocab_size must be positive");
        if (d_model <= 0) throw ConfigError("model.d_model must be positive");
        if (n_heads <= 0) throw ConfigError("model.n_heads must be positive");
        if (d_model % n_heads != 0) throw ConfigError("model.d_model must be divisible by model.n_heads");
        if (n_blocks < 0) throw ConfigError("model.n_blocks must be nonnegative");
        if (ffn_mult <= 0) throw ConfigError("model.ffn_mult must be positive");
        if (max_seq_len <= 0) throw ConfigError("model.max_seq_len must be positive");
        if (mask_token_id < 0 || mask_token_id >= vocab_size)
            throw ConfigError("model.mask_token_id must be a valid vocab id");
        if (layer_norm_eps <= 0) throw ConfigError("model.layer_norm_eps must be positive");
    }

    bool operator==(const ModelConfig&) const = default;
};

// Parameter group tags; blocks use their index >= 0.
inline constexpr int32_t kGroupEmbeddings = -1;
inline constexpr int32_t kGroupHead = -2;

template <typename T>
struct ParamEntry {
    std::string name;
    Tensor<T> value;
    int32_t group{kGroupEmbeddings};
    bool trainable{true};
};

// Ordered collection of named parameter tensors. Insertion order is the
// canonical order: initialization draws, checkpoint layout, optimizer state
// and flattened coordinate indexing all follow it.
template <typename T>
class ParamSet {
public:
    size_t add(std::string name, Tensor<T> value, int32_t group) {
        if (index_.count(name)) throw ValueError("ParamSet: duplicate tensor name " + name);
        const size_t i = entries_.size();
        index_.emplace(name, i);
        entries_.push_back(ParamEntry<T>{std::move(name), std::move(value), group, true});
        return i;
    }

    size_t size() const { return entries_.size(); }
    ParamEntry<T>& entry(size_t i) { return entries_[i]; }
    const ParamEntry<T>& entry(size_t i) const { return entries_[i]; }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValueError("ParamSet: no tensor named " + name);
        return it->second;
    }

    Tensor<T>& at(const std::string& name) { return entries_[index_of(name)].value; }
    const Tensor<T>& at(const std::string& name) const { return entries_[index_of(name)].value; }

    // Same names, shapes, groups and order; values may differ.
    bool same_schema(const ParamSet& other) const {
        if (entries_.size() != other.entries_.size()) return false;
        for (size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].name != other.entries_[i].name) return false;
            if (entries_[i].group != other.entries_[i].group) return false;
            if (entries_[i].value.shape() != other.entries_[i].value.shape()) return false;
        }
        return true;
    }

    // Copy of the schema (including trainable flags) with zero values.
    ParamSet zeros_like() const {
        ParamSet z;
        for (const auto& e : entries_) {
            z.add(e.name, Tensor<T>(e.value.shape()), e.group);
            z.entries_.back().trainable = e.trainable;
        }
        return z;
    }

    size_t total_numel() const {
        size_t n = 0;
        for (const auto& e : entries_) n += e.value.numel();
        return n;
    }

    size_t trainable_numel() const {
        size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.value.numel();
        return n;
    }

    void set_all_trainable(bool v) {
        for (auto& e : entries_) e.trainable = v;
    }

    void zero_nontrainable() {
        for (auto& e : entries_)
            if (!e.trainable) e.value.fill(T(0));
    }

    bool bitwise_equal(const ParamSet& other) const {
        if (!same_schema(other)) return false;
        for (size_t i = 0; i < entries_.size(); ++i)
            if (!(entries_[i].value == other.entries_[i].value)) return false;
        return true;
    }

    // FNV-1a over names, shapes and raw value bytes; binds derived artifacts
    // (for example a retrieval datastore) to the exact weights they came from.
    uint64_t content_hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        auto mix_bytes = [&h](const void* p, size_t n) {
            const auto* b = static_cast<const unsigned char*>(p);
            for (size_t i = 0; i < n; ++i) {
                h ^= b[i];
                h *= 0x100000001b3ull;
            }
        };
        for (const auto& e : entries_) {
            mix_bytes(e.name.data(), e.name.size());
            for (size_t d : e.value.shape()) {
                uint64_t v = d;
                mix_bytes(&v, sizeof v);
            }
            mix_bytes(e.value.data(), e.value.numel() * sizeof(T));
        }
        return h;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::vector<ParamEntry<T>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Group tag for a tensor name: "b<idx>." prefixed tensors belong to that
// block, "head." to the head, embeddings otherwise. Checkpoints store only
// names, so loading recovers groups from here.
inline int32_t group_for_name(const std::string& name) {
    if (name.rfind("head.", 0) == 0) return kGroupHead;
    if (name.size() > 1 && name[0] == 'b' && std::isdigit(static_cast<unsigned char>(name[1]))) {
        size_t i = 1;
        while (i < name.size() && std::isdigit(static_cast<unsigned char>(name[i]))) ++i;
        if (i < name.size() && name[i] == '.') return static_cast<int32_t>(std::stol(name.substr(1, i - 1)));
    }
    return kGroupEmbeddings;
}

// Fresh parameters: truncated-normal weights with realized std 0.02, zero
// biases, unit LayerNorm gains. One RNG stream, draws in canonical order.
template <typename T>
ParamSet<T> init_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const size_t v = cfg.vocab_size, d = cfg.d_model, f = static_cast<size_t>(cfg.ffn_mult) * d;
    constexpr double kInitStd = 0.02;
    ParamSet<T> p;
    auto add_normal = [&](const std::string& name, std::vector<size_t> shape, int32_t group) {
        Tensor<T> t(std::move(shape));
        for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.truncated_normal(kInitStd));
        p.add(name, std::move(t), group);
    };
    auto add_zeros = [&](const std::string& name, std::vector<size_t> shape, int32_t group) {
        p.add(name, Tensor<T>(std::move(shape)), group);
    };
    auto add_ones = [&](const std::string& name, std::vector<size_t> shape, int32_t group) {
        p.add(name, Tensor<T>::full(std::move(shape), T(1)), group);
    };

    add_normal("tok_emb", {v, d}, kGroupEmbeddings);
    add_normal("pos_emb", {static_cast<size_t>(cfg.max_seq_len), d}, kGroupEmbeddings);
    for (int32_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string pre = "b" + std::to_string(b) + ".";
        add_normal(pre + "attn.wq", {d, d}, b);
        add_zeros(pre + "attn.bq", {d}, b);
        add_normal(pre + "attn.wk", {d, d}, b);
        add_zeros(pre + "attn.bk", {d}, b);
        add_normal(pre + "attn.wv", {d, d}, b);
        add_zeros(pre + "attn.bv", {d}, b);
        add_normal(pre + "attn.wo", {d, d}, b);
        add_zeros(pre + "attn.bo", {d}, b);
        add_ones(pre + "ln1.g", {d}, b);
        add_zeros(pre + "ln1.b", {d}, b);
        add_normal(pre + "ffn.w1", {d, f}, b);
        add_zeros(pre + "ffn.b1", {f}, b);
        add_normal(pre + "ffn.w2", {f, d}, b);
        add_zeros(pre + "ffn.b2", {d}, b);
        add_ones(pre + "ln2.g", {d}, b);
        add_zeros(pre + "ln2.b", {d}, b);
    }
    if (!cfg.tie_output_embedding) add_normal("head.w", {v, d}, kGroupHead);
    add_zeros("head.b", {v}, kGroupHead);
    return p;
}

// One training example: token ids with exactly one mask position and the id
// the model should predict there.
struct TokenizedExample {
    std::vector<int32_t> tokens;
    size_t mask_pos{0};
    int32_t gold{-1};
};

// Which parameters a training regime may update. Embeddings train only under
// All. When specific blocks are selected the head trains too by default
// (include_head=false is the ablation flag for freezing it).
struct Selector {
    enum class Kind { All, Blocks, HeadOnly };
    Kind kind{Kind::All};
    std::vector<int32_t> blocks;  // used when kind == Blocks
    bool include_head{true};

    static Selector all() { return Selector{}; }
    static Selector head_only() { return Selector{Kind::HeadOnly, {}, true}; }
    static Selector single_block(int32_t b, bool with_head = true) { return Selector{Kind::Blocks, {b}, with_head}; }

    bool operator==(const Selector&) const = default;

    std::string to_string() const {
        switch (kind) {
            case Kind::All:
                return "all";
            case Kind::HeadOnly:
                return "head";
            case Kind::Blocks: {
                std::string s;
                for (size_t i = 0; i < blocks.size(); ++i) {
                    if (i) s += '+';
                    s += "block" + std::to_string(blocks[i]);
                }
                if (include_head) s += "+head";
                return s.empty() ? "head" : s;
            }
        }
        return "all";
    }

    // Inverse of to_string: "all", "head", "block0", "block0+block1+head", ...
    // A trailing absence of "+head" freezes the head.
    static Selector parse(const std::string& text) {
        if (text == "all") return all();
        if (text == "head") return head_only();
        Selector s;
        s.kind = Kind::Blocks;
        s.include_head = false;
        size_t pos = 0;
        while (pos <= text.size()) {
            const size_t next = text.find('+', pos);
            const std::string part = text.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
            if (part == "head") {
                s.include_head = true;
            } else if (part.rfind("block", 0) == 0 && part.size() > 5) {
                try {
                    s.blocks.push_back(std::stoi(part.substr(5)));
                } catch (const std::exception&) {
                    throw ConfigError("selector: bad block index in \"" + text + "\"");
                }
            } else {
                throw ConfigError("selector: cannot parse \"" + text + "\" (expected all, head, or blockN[+blockM][+head])");
            }
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        if (s.blocks.empty()) return head_only();
        std::sort(s.blocks.begin(), s.blocks.end());
        s.blocks.erase(std::unique(s.blocks.begin(), s.blocks.end()), s.blocks.end());
        return s;
    }
};

// Sets trainable flags per the selector. Throws on block indices the config
// does not have.
template <typename T>
void select_trainable(ParamSet<T>& params, const ModelConfig& cfg, const Selector& sel) {
    if (sel.kind == Selector::Kind::Blocks) {
        for (int32_t b : sel.blocks)
            if (b < 0 || b >= cfg.n_blocks) throw ValueError("select_trainable: unknown block index " + std::to_string(b));
        if (sel.blocks.empty()) throw ValueError("select_trainable: block selector with no blocks");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        auto& e = params.entry(i);
        switch (sel.kind) {
            case Selector::Kind::All:
                e.trainable = true;
                break;
            case Selector::Kind::HeadOnly:
                e.trainable = e.group == kGroupHead;
                break;
            case Selector::Kind::Blocks:
                if (e.group == kGroupHead)
                    e.trainable = sel.include_head;
                else if (e.group >= 0)
                    e.trainable = std::find(sel.blocks.begin(), sel.blocks.end(), e.group) != sel.blocks.end();
                else
                    e.trainable = false;
                break;
        }
    }
}

template <typename T>
struct BlockCache {
    Tensor<T> x;         // block input [n,d]
    Tensor<T> q, k, v;   // projections [n,d]
    Tensor<T> att;       // softmaxed attention, head-major rows [H*n, n]
    Tensor<T> ctx;       // attention-weighted values [n,d]
    Tensor<T> r1;        // x + attn_out [n,d]
    Tensor<T> y1;        // LN1(r1) [n,d]
    Tensor<T> h_pre;     // FFN pre-activation [n, f]
    Tensor<T> h_act;     // gelu(h_pre) [n, f]
    Tensor<T> r2;        // y1 + ffn_out [n,d]
    Tensor<T> y2;        // LN2(r2), the block output [n,d]
    LayerNormCache<T> ln1, ln2;
};

template <typename T>
struct ForwardCache {
    Tensor<T> x0;      // embeddings [n,d]
    std::vector<BlockCache<T>> blocks;
    Tensor<T> hidden;  // final hidden state at the mask position [d]
    Tensor<T> logits;  // [V]
};

template <typename T>
const Tensor<T>& output_matrix(const ModelConfig& cfg, const ParamSet<T>& p) {
    return cfg.tie_output_embedding ? p.at("tok_emb") : p.at("head.w");
}

namespace detail {

// Head-major attention scores S[h*n+i, j] = <q_i, k_j>_h / sqrt(dh), then
// softmax rows and the per-head weighted sum of values.
template <typename T>
void attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, size_t n_heads, Tensor<T>& att,
                    Tensor<T>& ctx) {
    const size_t n = q.rows(), d = q.cols(), dh = d / n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Tensor<T> scores({n_heads * n, n});
    for (size_t h = 0; h < n_heads; ++h) {
        const size_t off = h * dh;
        for (size_t i = 0; i < n; ++i) {
            T* srow = scores.data() + (h * n + i) * n;
            const T* qrow = q.data() + i * d + off;
            for (size_t j = 0; j < n; ++j) {
                const T* krow = k.data() + j * d + off;
                T acc = 0;
                for (size_t c = 0; c < dh; ++c) acc += qrow[c] * krow[c];
                srow[j] = acc * scale;
            }
        }
    }
    att = softmax_rows(scores);
    ctx = Tensor<T>({n, d});
    for (size_t h = 0; h < n_heads; ++h) {
        const size_t off = h * dh;
        for (size_t i = 0; i < n; ++i) {
            const T* arow = att.data() + (h * n + i) * n;
            T* crow = ctx.data() + i * d + off;
            for (size_t j = 0; j < n; ++j) {
                const T a = arow[j];
                const T* vrow = v.data() + j * d + off;
                for (size_t c = 0; c < dh; ++c) crow[c] += a * vrow[c];
            }
        }
    }
}

}  // namespace detail

// Logits over the vocabulary at the mask position. Throws ValueError when the
// mask token is absent at mask_pos or any token id is out of range. Passing a
// cache keeps every intermediate needed for the backward pass.
template <typename T>
Tensor<T> forward_mask_logits(const ModelConfig& cfg, const ParamSet<T>& p, std::span<const int32_t> tokens,
                              size_t mask_pos, ForwardCache<T>* cache = nullptr) {
    const size_t n = tokens.size(), d = cfg.d_model;
    if (n == 0) throw ValueError("forward: empty token sequence");
    if (n > static_cast<size_t>(cfg.max_seq_len))
        throw ValueError("forward: sequence length " + std::to_string(n) + " exceeds max_seq_len");
    if (mask_pos >= n) throw ValueError("forward: mask_pos out of range");
    for (int32_t t : tokens)
        if (t < 0 || t >= cfg.vocab_size) throw ValueError("forward: token id out of vocab range");
    if (tokens[mask_pos] != cfg.mask_token_id)
        throw ValueError("forward: mask token absent at mask position " + std::to_string(mask_pos));

    const Tensor<T>& tok_emb = p.at("tok_emb");
    const Tensor<T>& pos_emb = p.at("pos_emb");
    Tensor<T> x({n, d});
    for (size_t i = 0; i < n; ++i) {
        const T* te = tok_emb.data() + static_cast<size_t>(tokens[i]) * d;
        const T* pe = pos_emb.data() + i * d;
        T* row = x.data() + i * d;
        for (size_t j = 0; j < d; ++j) row[j] = te[j] + pe[j];
    }
    if (cache) {
        cache->x0 = x;
        cache->blocks.clear();
        cache->blocks.resize(cfg.n_blocks);
    }

    const T ln_eps = static_cast<T>(cfg.layer_norm_eps);
    for (int32_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string pre = "b" + std::to_string(b) + ".";
        BlockCache<T> local;
        BlockCache<T>& bc = cache ? cache->blocks[b] : local;
        bc.x = x;

        bc.q = gemm(x, p.at(pre + "attn.wq"));
        add_bias_rows(bc.q, p.at(pre + "attn.bq"));
        bc.k = gemm(x, p.at(pre + "attn.wk"));
        add_bias_rows(bc.k, p.at(pre + "attn.bk"));
        bc.v = gemm(x, p.at(pre + "attn.wv"));
        add_bias_rows(bc.v, p.at(pre + "attn.bv"));
        detail::attention_core(bc.q, bc.k, bc.v, cfg.n_heads, bc.att, bc.ctx);
        Tensor<T> attn_out = gemm(bc.ctx, p.at(pre + "attn.wo"));
        add_bias_rows(attn_out, p.at(pre + "attn.bo"));

        bc.r1 = x;
        for (size_t i = 0; i < bc.r1.numel(); ++i) bc.r1[i] += attn_out[i];
        bc.y1 = layer_norm(bc.r1, p.at(pre + "ln1.g"), p.at(pre + "ln1.b"), ln_eps, &bc.ln1);

        bc.h_pre = gemm(bc.y1, p.at(pre + "ffn.w1"));
        add_bias_rows(bc.h_pre, p.at(pre + "ffn.b1"));
        bc.h_act = gelu(bc.h_pre);
        Tensor<T> ffn_out = gemm(bc.h_act, p.at(pre + "ffn.w2"));
        add_bias_rows(ffn_out, p.at(pre + "ffn.b2"));

        bc.r2 = bc.y1;
        for (size_t i = 0; i < bc.r2.numel(); ++i) bc.r2[i] += ffn_out[i];
        bc.y2 = layer_norm(bc.r2, p.at(pre + "ln2.g"), p.at(pre + "ln2.b"), ln_eps, &bc.ln2);
        x = bc.y2;
    }

    Tensor<T> hidden({d});
    for (size_t j = 0; j < d; ++j) hidden[j] = x(mask_pos, j);
    Tensor<T> logits = matvec(output_matrix(cfg, p), hidden);
    for (size_t j = 0; j < logits.numel(); ++j) logits[j] += p.at("head.b")[j];
    if (cache) {
        cache->hidden = hidden;
        cache->logits = logits;
    }
    return logits;
}

// Final-block hidden state at the mask position (the retrieval key function).
template <typename T>
Tensor<T> forward_mask_hidden(const ModelConfig& cfg, const ParamSet<T>& p, std::span<const int32_t> tokens,
                              size_t mask_pos) {
    ForwardCache<T> cache;
    forward_mask_logits(cfg, p, tokens, mask_pos, &cache);
    return cache.hidden;
}

template <typename T>
Tensor<T> head_logits(const ModelConfig& cfg, const ParamSet<T>& p, const Tensor<T>& hidden) {
    Tensor<T> logits = matvec(output_matrix(cfg, p), hidden);
    const Tensor<T>& hb = p.at("head.b");
    for (size_t j = 0; j < logits.numel(); ++j) logits[j] += hb[j];
    return logits;
}

template <typename T>
int32_t predict_token(const ModelConfig& cfg, const ParamSet<T>& p, std::span<const int32_t> tokens, size_t mask_pos) {
    return argmax_lowest(forward_mask_logits(cfg, p, tokens, mask_pos));
}

namespace detail {

template <typename T>
void tensor_add_into(Tensor<T>& dst, const Tensor<T>& src) {
    for (size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

// Accumulates d(weight * loss)/dtheta for one example into grads, given the
// forward cache and the already-weighted logit gradient.
template <typename T>
void backward_into(const ModelConfig& cfg, const ParamSet<T>& p, std::span<const int32_t> tokens, size_t mask_pos,
                   const ForwardCache<T>& cache, const Tensor<T>& dlogits, ParamSet<T>& grads) {
    const size_t n = tokens.size(), d = cfg.d_model, voc = cfg.vocab_size;
    const size_t n_heads = cfg.n_heads, dh = d / n_heads;

    // Head: logits = W_out * hidden + head.b
    const Tensor<T>& w_out = output_matrix(cfg, p);
    Tensor<T>& dw_out = cfg.tie_output_embedding ? grads.at("tok_emb") : grads.at("head.w");
    Tensor<T> dhidden({d});
    for (size_t t = 0; t < voc; ++t) {
        const T dl = dlogits[t];
        if (dl == T(0)) continue;
        const T* wrow = w_out.data() + t * d;
        T* gwrow = dw_out.data() + t * d;
        const T* hid = cache.hidden.data();
        for (size_t j = 0; j < d; ++j) {
            dhidden[j] += dl * wrow[j];
            gwrow[j] += dl * hid[j];
        }
    }
    detail::tensor_add_into(grads.at("head.b"), dlogits);

    // Gradient w.r.t. the final block output: nonzero only at the mask row.
    Tensor<T> dy({n, d});
    for (size_t j = 0; j < d; ++j) dy(mask_pos, j) = dhidden[j];

    const T ln_eps = static_cast<T>(cfg.layer_norm_eps);
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    for (int32_t b = cfg.n_blocks - 1; b >= 0; --b) {
        const std::string pre = "b" + std::to_string(b) + ".";
        const BlockCache<T>& bc = cache.blocks[b];

        auto ln2g = layer_norm_backward(bc.r2, p.at(pre + "ln2.g"), bc.ln2, dy);
        detail::tensor_add_into(grads.at(pre + "ln2.g"), ln2g.dgain);
        detail::tensor_add_into(grads.at(pre + "ln2.b"), ln2g.dbias);
        const Tensor<T>& dr2 = ln2g.dx;

        // FFN path: r2 = y1 + gelu(y1*w1 + b1)*w2 + b2
        Tensor<T> dh_act = gemm_nt(dr2, p.at(pre + "ffn.w2"));
        detail::tensor_add_into(grads.at(pre + "ffn.w2"), gemm_tn(bc.h_act, dr2));
        detail::tensor_add_into(grads.at(pre + "ffn.b2"), colsum(dr2));
        Tensor<T> dh_pre = gelu_backward(bc.h_pre, dh_act);
        detail::tensor_add_into(grads.at(pre + "ffn.w1"), gemm_tn(bc.y1, dh_pre));
        detail::tensor_add_into(grads.at(pre + "ffn.b1"), colsum(dh_pre));
        Tensor<T> dy1 = gemm_nt(dh_pre, p.at(pre + "ffn.w1"));
        detail::tensor_add_into(dy1, dr2);  // residual branch of r2

        auto ln1g = layer_norm_backward(bc.r1, p.at(pre + "ln1.g"), bc.ln1, dy1);
        detail::tensor_add_into(grads.at(pre + "ln1.g"), ln1g.dgain);
        detail::tensor_add_into(grads.at(pre + "ln1.b"), ln1g.dbias);
        const Tensor<T>& dr1 = ln1g.dx;

        // Attention path: r1 = x + (ctx * wo + bo)
        Tensor<T> dctx = gemm_nt(dr1, p.at(pre + "attn.wo"));
        detail::tensor_add_into(grads.at(pre + "attn.wo"), gemm_tn(bc.ctx, dr1));
        detail::tensor_add_into(grads.at(pre + "attn.bo"), colsum(dr1));

        Tensor<T> datt({n_heads * n, n});
        Tensor<T> dv({n, d});
        for (size_t h = 0; h < n_heads; ++h) {
            const size_t off = h * dh;
            for (size_t i = 0; i < n; ++i) {
                const T* dcrow = dctx.data() + i * d + off;
                const T* arow = bc.att.data() + (h * n + i) * n;
                T* darow = datt.data() + (h * n + i) * n;
                for (size_t j = 0; j < n; ++j) {
                    const T* vrow = bc.v.data() + j * d + off;
                    T acc = 0;
                    for (size_t c = 0; c < dh; ++c) acc += dcrow[c] * vrow[c];
                    darow[j] = acc;
                    T* dvrow = dv.data() + j * d + off;
                    const T a = arow[j];
                    for (size_t c = 0; c < dh; ++c) dvrow[c] += a * dcrow[c];
                }
            }
        }
        Tensor<T> dscores = softmax_rows_backward(bc.att, datt);
        Tensor<T> dq({n, d});
        Tensor<T> dk({n, d});
        for (size_t h = 0; h < n_heads; ++h) {
            const size_t off = h * dh;
            for (size_t i = 0; i < n; ++i) {
                const T* dsrow = dscores.data() + (h * n + i) * n;
                T* dqrow = dq.data() + i * d + off;
                const T* qrow = bc.q.data() + i * d + off;
                for (size_t j = 0; j < n; ++j) {
                    const T ds = dsrow[j] * scale;
                    const T* krow = bc.k.data() + j * d + off;
                    T* dkrow = dk.data() + j * d + off;
                    for (size_t c = 0; c < dh; ++c) {
                        dqrow[c] += ds * krow[c];
                        dkrow[c] += ds * qrow[c];
                    }
                }
            }
        }

        Tensor<T> dx = dr1;  // residual branch of r1
        detail::tensor_add_into(dx, gemm_nt(dq, p.at(pre + "attn.wq")));
        detail::tensor_add_into(dx, gemm_nt(dk, p.at(pre + "attn.wk")));
        detail::tensor_add_into(dx, gemm_nt(dv, p.at(pre + "attn.wv")));
        detail::tensor_add_into(grads.at(pre + "attn.wq"), gemm_tn(bc.x, dq));
        detail::tensor_add_into(grads.at(pre + "attn.bq"), colsum(dq));
        detail::tensor_add_into(grads.at(pre + "attn.wk"), gemm_tn(bc.x, dk));
        detail::tensor_add_into(grads.at(pre + "attn.bk"), colsum(dk));
        detail::tensor_add_into(grads.at(pre + "attn.wv"), gemm_tn(bc.x, dv));
        detail::tensor_add_into(grads.at(pre + "attn.bv"), colsum(dv));
        dy = std::move(dx);
    }

    // Embedding rows: x0[p] = tok_emb[tokens[p]] + pos_emb[p]
    Tensor<T>& dtok = grads.at("tok_emb");
    Tensor<T>& dpos = grads.at("pos_emb");
    for (size_t i = 0; i < n; ++i) {
        const T* dyr = dy.data() + i * d;
        T* dte = dtok.data() + static_cast<size_t>(tokens[i]) * d;
        T* dpe = dpos.data() + i * d;
        for (size_t j = 0; j < d; ++j) {
            dte[j] += dyr[j];
            dpe[j] += dyr[j];
        }
    }
}

}  // namespace detail

// Weighted-sum loss over a batch and its parameter gradient. With empty
// weights every example gets 1/batch_size, i.e. the batch mean. Gradients of
// non-trainable tensors are zeroed before returning. Examples are always
// reduced in batch order, so results are bitwise reproducible regardless of
// the OpenMP thread count.
template <typename T>
std::pair<double, ParamSet<T>> loss_and_grads(const ModelConfig& cfg, const ParamSet<T>& p,
                                              std::span<const TokenizedExample> batch,
                                              std::span<const double> weights = {}) {
    if (batch.empty()) throw ValueError("loss_and_grads: empty batch");
    if (!weights.empty() && weights.size() != batch.size())
        throw ValueError("loss_and_grads: weights size does not match batch size");
    // Validate up front: exceptions must not escape the parallel region below.
    for (const auto& ex : batch) {
        if (ex.tokens.empty() || ex.mask_pos >= ex.tokens.size() ||
            ex.tokens.size() > static_cast<size_t>(cfg.max_seq_len))
            throw ValueError("loss_and_grads: malformed example");
        if (ex.tokens[ex.mask_pos] != cfg.mask_token_id)
            throw ValueError("loss_and_grads: mask token absent at mask position");
        if (ex.gold < 0 || ex.gold >= cfg.vocab_size) throw ValueError("loss_and_grads: gold id out of vocab range");
        for (int32_t t : ex.tokens)
            if (t < 0 || t >= cfg.vocab_size) throw ValueError("loss_and_grads: token id out of vocab range");
    }

    ParamSet<T> grads = p.zeros_like();
    double loss = 0.0;
    auto example_weight = [&](size_t i) {
        return weights.empty() ? 1.0 / static_cast<double>(batch.size()) : weights[i];
    };

    // Every example's gradient lands in its own buffer and the buffers merge
    // into the total strictly in batch order, so the grouping of additions
    // (hence the bits) never depends on the thread count. Buffers are
    // chunk-recycled to bound memory on large batches.
#ifdef _OPENMP
    const size_t n_threads = static_cast<size_t>(omp_get_max_threads());
#else
    const size_t n_threads = 1;
#endif
    const size_t chunk = std::min(batch.size(), std::max<size_t>(1, 2 * n_threads));
    std::vector<ParamSet<T>> bufs;
    bufs.reserve(chunk);
    for (size_t c = 0; c < chunk; ++c) bufs.push_back(p.zeros_like());
    std::vector<double> losses(chunk, 0.0);

    for (size_t base = 0; base < batch.size(); base += chunk) {
        const size_t count = std::min(chunk, batch.size() - base);
#pragma omp parallel for schedule(dynamic) if (count > 1)
        for (size_t c = 0; c < count; ++c) {
            const auto& ex = batch[base + c];
            for (auto& e : bufs[c]) e.value.fill(T(0));
            ForwardCache<T> cache;
            Tensor<T> logits = forward_mask_logits(cfg, p, ex.tokens, ex.mask_pos, &cache);
            const double w = example_weight(base + c);
            losses[c] = w * cross_entropy_from_logits(logits, ex.gold);
            Tensor<T> dlogits = cross_entropy_backward(logits, ex.gold);
            for (size_t j = 0; j < dlogits.numel(); ++j) dlogits[j] *= static_cast<T>(w);
            detail::backward_into(cfg, p, ex.tokens, ex.mask_pos, cache, dlogits, bufs[c]);
        }
        for (size_t c = 0; c < count; ++c) {
            loss += losses[c];
            for (size_t e = 0; e < grads.size(); ++e)
                detail::tensor_add_into(grads.entry(e).value, bufs[c].entry(e).value);
        }
    }

    grads.zero_nontrainable();
    return {loss, std::move(grads)};
}

// Weighted batch loss without gradients (uniform 1/n weights by default);
// for finite-difference checks and cheap convergence probes.
template <typename T>
double batch_loss(const ModelConfig& cfg, const ParamSet<T>& p, std::span<const TokenizedExample> batch,
                  std::span<const double> weights = {}) {
    if (batch.empty()) throw ValueError("batch_loss: empty batch");
    if (!weights.empty() && weights.size() != batch.size())
        throw ValueError("batch_loss: weights size does not match batch size");
    double loss = 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
        const auto& ex = batch[i];
        const Tensor<T> logits = forward_mask_logits(cfg, p, ex.tokens, ex.mask_pos);
        const double w = weights.empty() ? 1.0 / static_cast<double>(batch.size()) : weights[i];
        loss += w * cross_entropy_from_logits(logits, ex.gold);
    }
    return loss;
}

}  // namespace felab

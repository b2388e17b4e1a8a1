#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "circkit/common.hpp"
#include "circkit/dataset.hpp"
#include "circkit/optim.hpp"
#include "circkit/tensor.hpp"

namespace circkit {

enum class Task { ssd, ssp };

inline const char* task_name(Task t) { return t == Task::ssd ? "ssd" : "ssp"; }
inline Task task_from_name(const std::string& s) {
    if (s == "ssd") return Task::ssd;
    if (s == "ssp") return Task::ssp;
    throw std::invalid_argument("unknown task '" + s + "' (expected ssd or ssp)");
}

enum class AttentionKind { favor, exact };

struct ModelConfig {
    Task task = Task::ssd;
    int embed_dim = 64;
    int conv_blocks = 4;
    int kernel = 9;
    std::vector<int> dilations = {1, 2, 4, 8};  // cycled when shorter than conv_blocks
    int attn_blocks = 2;
    int heads = 4;
    int random_features = 64;
    AttentionKind attention = AttentionKind::favor;
    std::vector<std::string> species;
    bool moe = true;  // false: one shared head pair serves every species (ablation)
    std::uint64_t seed = 0;

    int channels() const { return task == Task::ssd ? 5 : 6; }
    const char* alphabet() const { return task == Task::ssd ? kSsdAlphabet : kSspAlphabet; }
    int head_dim() const { return embed_dim / heads; }
    int dilation_for(int block) const {
        return dilations.empty() ? 1 : dilations[static_cast<std::size_t>(block) % dilations.size()];
    }

    void validate() const {
        if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
            throw std::invalid_argument("ModelConfig: embed_dim must be positive and divisible by heads");
        if (random_features < 1) throw std::invalid_argument("ModelConfig: random_features must be >= 1");
        if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("ModelConfig: kernel must be odd");
        if (species.empty()) throw std::invalid_argument("ModelConfig: species list must not be empty");
        std::set<std::string> uniq(species.begin(), species.end());
        if (uniq.size() != species.size())
            throw std::invalid_argument("ModelConfig: species list contains duplicates");
    }

    std::string serialize() const {
        std::ostringstream os;
        os << "task=" << task_name(task) << '\n'
           << "embed_dim=" << embed_dim << '\n'
           << "conv_blocks=" << conv_blocks << '\n'
           << "kernel=" << kernel << '\n'
           << "dilations=";
        for (std::size_t i = 0; i < dilations.size(); ++i) os << (i ? "," : "") << dilations[i];
        os << '\n'
           << "attn_blocks=" << attn_blocks << '\n'
           << "heads=" << heads << '\n'
           << "random_features=" << random_features << '\n'
           << "attention=" << (attention == AttentionKind::favor ? "favor" : "exact") << '\n'
           << "species=";
        for (std::size_t i = 0; i < species.size(); ++i) os << (i ? "," : "") << species[i];
        os << '\n' << "moe=" << (moe ? 1 : 0) << '\n' << "seed=" << seed << '\n';
        return os.str();
    }

    static ModelConfig deserialize(const std::string& text) {
        ModelConfig cfg;
        cfg.dilations.clear();
        cfg.species.clear();
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            if (key == "task") cfg.task = task_from_name(val);
            else if (key == "embed_dim") cfg.embed_dim = std::stoi(val);
            else if (key == "conv_blocks") cfg.conv_blocks = std::stoi(val);
            else if (key == "kernel") cfg.kernel = std::stoi(val);
            else if (key == "dilations") {
                if (!val.empty())
                    for (const auto& t : split(val, ',')) cfg.dilations.push_back(std::stoi(t));
            } else if (key == "attn_blocks") cfg.attn_blocks = std::stoi(val);
            else if (key == "heads") cfg.heads = std::stoi(val);
            else if (key == "random_features") cfg.random_features = std::stoi(val);
            else if (key == "attention")
                cfg.attention = val == "exact" ? AttentionKind::exact : AttentionKind::favor;
            else if (key == "species") {
                if (!val.empty())
                    for (const auto& t : split(val, ',')) cfg.species.push_back(t);
            } else if (key == "moe") cfg.moe = val != "0";
            else if (key == "seed") cfg.seed = std::stoull(val);
        }
        return cfg;
    }
};

/// Fixed Gaussian projection for the positive random-feature map. Entries are
/// drawn once at construction and are bit-exactly regenerable from (seed, shape).
template <class S>
struct RandomFeatureMapT {
    int dim = 0;       // input dimension (per-head)
    int features = 0;  // m
    std::vector<S> w;  // [dim x features], row-major

    static RandomFeatureMapT gaussian(int dim, int features, std::uint64_t seed) {
        RandomFeatureMapT map;
        map.dim = dim;
        map.features = features;
        map.w.resize(static_cast<std::size_t>(dim) * features);
        Rng rng(seed);
        for (auto& v : map.w) v = static_cast<S>(rng.normal());
        return map;
    }

    TensorT<S> as_tensor() const {
        return TensorT<S>::from_vector(w, {dim, features});
    }
};

/// phi(x)[l,j] = exp(w[:,j] . x[l] - |x[l]|^2 / 2) / sqrt(m). Strictly positive.
template <class S>
TensorT<S> random_feature_map(const TensorT<S>& x, const RandomFeatureMapT<S>& map) {
    if (x.rank() != 2 || x.dim(1) != map.dim)
        throw std::invalid_argument("random_feature_map: input must be [L x " + std::to_string(map.dim) + "]");
    auto proj = matmul(x, map.as_tensor());                      // [L x m]
    auto sq = row_sum(mul(x, x));                                // [L x 1]
    auto arg = rowwise_add(proj, scale(sq, S(-0.5)));            // w.x - |x|^2/2
    auto phi = scale(exp(arg), S(1) / std::sqrt(static_cast<S>(map.features)));
    for (S v : phi.values())
        if (!std::isfinite(v))
            throw std::runtime_error("random_feature_map: overflow to non-finite value; inputs too large");
    return phi;
}

/// Reference attention: softmax(Q K^T / sqrt(d)) V. Quadratic in L; used as the
/// verification oracle and as an optional execution path.
template <class S>
TensorT<S> exact_attention(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0))
        throw std::invalid_argument("exact_attention: incompatible shapes");
    const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(q.dim(1)));
    auto scores = scale(matmul(q, transpose(k)), inv_sqrt_d);  // [Lq x Lk]
    return matmul(softmax_rows(scores), v);
}

/// Kernelized attention: D^-1 phi(Q') (phi(K')^T V) with Q' = Q d^-1/4,
/// K' = K d^-1/4, so phi(q')^T phi(k') estimates exp(q.k / sqrt(d)). The
/// normalizer D = diag(phi(Q')(phi(K')^T 1)) recovers the softmax denominator.
/// Association order is (phi(K)^T V) first: O(L m d), no L x L matrix.
template <class S>
TensorT<S> favor_plus_attention(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                                const RandomFeatureMapT<S>& map) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0))
        throw std::invalid_argument("favor_plus_attention: incompatible shapes");
    const int L = k.dim(0);
    const S pre = S(1) / std::pow(static_cast<S>(q.dim(1)), S(0.25));
    auto phi_q = random_feature_map(scale(q, pre), map);  // [Lq x m]
    auto phi_k = random_feature_map(scale(k, pre), map);  // [Lk x m]
    auto phi_k_t = transpose(phi_k);                      // [m x Lk]
    auto kv = matmul(phi_k_t, v);                         // [m x d]
    auto ones = TensorT<S>::full({L, 1}, S(1));
    auto k_mass = matmul(phi_k_t, ones);                  // [m x 1]
    auto numer = matmul(phi_q, kv);                       // [Lq x d]
    auto denom = matmul(phi_q, k_mass);                   // [Lq x 1]
    for (S d : denom.values())
        if (!(d > S(0)))
            throw std::runtime_error("favor_plus_attention: non-positive normalizer row (numeric fault)");
    return rowwise_div(numer, denom);
}

/// Sinusoidal positional encoding, [L x D] flattened row-major.
template <class S>
std::vector<S> positional_encoding(int length, int dim) {
    std::vector<S> pe(static_cast<std::size_t>(length) * dim);
    for (int l = 0; l < length; ++l)
        for (int j = 0; j < dim; ++j) {
            const double rate = std::pow(10000.0, -2.0 * (j / 2) / static_cast<double>(dim));
            const double angle = l * rate;
            pe[static_cast<std::size_t>(l) * dim + j] =
                static_cast<S>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

/// Reference to one species' task head (a D->1 map plus scalar bias).
template <class S>
struct ExpertHeadRef {
    Parameter<S>* weight;
    Parameter<S>* bias;
};

/// The splice-site model: shared input/local/global encoders and hard-routed
/// per-species expert heads for detection (per-position logit) and pairing
/// (per-sample logit). Samples are dispatched to the head of their known
/// species label; there is no learned gate.
template <class S>
class ModelT {
public:
    explicit ModelT(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(Rng::mix(cfg_.seed, 0xC1BCull));
        const int D = cfg_.embed_dim;
        const int C = cfg_.channels();
        const int K = cfg_.kernel;

        add_param("backbone.embed.weight", fan_in_uniform({1, C, D}, C, rng));
        add_param("backbone.embed.bias", TensorT<S>::zeros({D}));
        for (int b = 0; b < cfg_.conv_blocks; ++b) {
            const std::string p = "backbone.conv" + std::to_string(b);
            add_param(p + ".norm.gain", TensorT<S>::full({D}, S(1)));
            add_param(p + ".norm.offset", TensorT<S>::zeros({D}));
            add_param(p + ".weight", fan_in_uniform({K, D, D}, K * D, rng));
            add_param(p + ".bias", TensorT<S>::zeros({D}));
        }
        for (int b = 0; b < cfg_.attn_blocks; ++b) {
            const std::string p = "backbone.attn" + std::to_string(b);
            add_param(p + ".norm.gain", TensorT<S>::full({D}, S(1)));
            add_param(p + ".norm.offset", TensorT<S>::zeros({D}));
            for (const char* n : {".wq", ".wk", ".wv", ".wo"})
                add_param(p + n, fan_in_uniform({D, D}, D, rng));
        }
        add_param("backbone.final_norm.gain", TensorT<S>::full({D}, S(1)));
        add_param("backbone.final_norm.offset", TensorT<S>::zeros({D}));

        for (const auto& sp : head_owners()) {
            add_param("expert." + sp + ".ssd.weight", fan_in_uniform({D, 1}, D, rng));
            add_param("expert." + sp + ".ssd.bias", TensorT<S>::zeros({1}));
            add_param("expert." + sp + ".ssp.weight", fan_in_uniform({D, 1}, D, rng));
            add_param("expert." + sp + ".ssp.bias", TensorT<S>::zeros({1}));
        }

        // One fixed feature map per (attention block, head); never redrawn.
        const int dh = cfg_.head_dim();
        for (int b = 0; b < cfg_.attn_blocks; ++b)
            for (int h = 0; h < cfg_.heads; ++h)
                rf_maps_.push_back(RandomFeatureMapT<S>::gaussian(
                    dh, cfg_.random_features,
                    Rng::mix(cfg_.seed, 0xFEA7ull + 1000ull * static_cast<std::uint64_t>(b) +
                                            static_cast<std::uint64_t>(h))));
    }

    const ModelConfig& config() const { return cfg_; }
    std::vector<Parameter<S>>& params() { return params_; }
    const std::vector<Parameter<S>>& params() const { return params_; }

    Parameter<S>& param(const std::string& name) {
        const auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("unknown parameter '" + name + "'");
        return params_[it->second];
    }
    bool has_param(const std::string& name) const { return index_.count(name) != 0; }

    void zero_grad() { zero_grads(params_); }

    int species_index(const std::string& species) const {
        for (std::size_t i = 0; i < cfg_.species.size(); ++i)
            if (cfg_.species[i] == species) return static_cast<int>(i);
        std::string known;
        for (const auto& s : cfg_.species) known += (known.empty() ? "" : ", ") + s;
        throw std::runtime_error("unregistered species '" + species + "' (known: " + known + ")");
    }

    /// Hard routing: the unique head for (species, task). Routing uses the
    /// known species label only.
    ExpertHeadRef<S> route_to_expert(const std::string& species, Task task) {
        species_index(species);  // validates
        const std::string owner = cfg_.moe ? species : "shared";
        const std::string base = "expert." + owner + (task == Task::ssd ? ".ssd" : ".ssp");
        return {&param(base + ".weight"), &param(base + ".bias")};
    }

    /// Input encoder: one-hot [B x L x C] -> embedding + positional signal.
    TensorT<S> input_encoder(const TensorT<S>& x) {
        if (x.rank() != 3 || x.dim(2) != cfg_.channels())
            throw std::invalid_argument("input_encoder: expected [B x L x " +
                                        std::to_string(cfg_.channels()) + "], got " + shape_str(x.shape()));
        auto h = conv1d(x, param("backbone.embed.weight").tensor, param("backbone.embed.bias").tensor, 1);
        const int B = h.dim(0), L = h.dim(1), D = h.dim(2);
        auto pe_row = positional_encoding<S>(L, D);
        std::vector<S> pe_batch(static_cast<std::size_t>(B) * pe_row.size());
        for (int b = 0; b < B; ++b)
            std::copy(pe_row.begin(), pe_row.end(), pe_batch.begin() + static_cast<std::size_t>(b) * pe_row.size());
        return add(h, TensorT<S>::from_vector(std::move(pe_batch), {B, L, D}));
    }

    /// Local encoder: dilated conv residual blocks, y = x + conv(relu(norm(x))).
    TensorT<S> local_encoder_forward(const TensorT<S>& x) {
        auto h = x;
        for (int b = 0; b < cfg_.conv_blocks; ++b) {
            const std::string p = "backbone.conv" + std::to_string(b);
            auto n = layer_norm(h, param(p + ".norm.gain").tensor, param(p + ".norm.offset").tensor);
            auto c = conv1d(relu(n), param(p + ".weight").tensor, param(p + ".bias").tensor,
                            cfg_.dilation_for(b));
            h = add(h, c);
        }
        return h;
    }

    /// Global encoder: pre-norm attention blocks followed by a final norm.
    TensorT<S> global_encoder_forward(const TensorT<S>& x) {
        auto h = x;
        for (int b = 0; b < cfg_.attn_blocks; ++b) h = attention_block(h, b);
        return layer_norm(h, param("backbone.final_norm.gain").tensor,
                          param("backbone.final_norm.offset").tensor);
    }

    /// Shared backbone H; identical for identical inputs regardless of species.
    TensorT<S> backbone(const TensorT<S>& x) {
        return global_encoder_forward(local_encoder_forward(input_encoder(x)));
    }

    /// Per-position detection logits [B x L]. Each sample is routed to its own
    /// species' detection head (a 1x1 length-preserving map over H).
    TensorT<S> forward_ssd(const TensorT<S>& x, std::span<const std::string> species) {
        auto h = backbone(x);
        check_batch(h.dim(0), species, "forward_ssd");
        std::vector<TensorT<S>> logits;
        logits.reserve(static_cast<std::size_t>(h.dim(0)));
        for (int b = 0; b < h.dim(0); ++b) {
            auto head = route_to_expert(species[static_cast<std::size_t>(b)], Task::ssd);
            auto per_pos = add_bcast(matmul(batch_slice(h, b), head.weight->tensor), head.bias->tensor);
            logits.push_back(reshape(per_pos, {h.dim(1)}));
        }
        return stack(logits);  // [B x L]
    }

    /// Per-sample pairing logits [B]: pooled backbone features through the
    /// species' pairing head.
    TensorT<S> forward_ssp(const TensorT<S>& x, std::span<const std::string> species) {
        auto h = backbone(x);
        check_batch(h.dim(0), species, "forward_ssp");
        auto pooled = global_avg_pool(h);  // [B x D]
        std::vector<TensorT<S>> logits;
        logits.reserve(static_cast<std::size_t>(h.dim(0)));
        for (int b = 0; b < h.dim(0); ++b) {
            auto head = route_to_expert(species[static_cast<std::size_t>(b)], Task::ssp);
            auto row = reshape(batch_slice(pooled, b), {1, h.dim(2)});
            auto logit = add_bcast(matmul(row, head.weight->tensor), head.bias->tensor);
            logits.push_back(reshape(logit, {1}));
        }
        return stack(logits);  // [B]
    }

    const RandomFeatureMapT<S>& feature_map(int block, int head) const {
        return rf_maps_[static_cast<std::size_t>(block) * cfg_.heads + head];
    }

    /// Owners of expert heads: the species list, or "shared" for the ablation.
    std::vector<std::string> head_owners() const {
        if (cfg_.moe) return cfg_.species;
        return {"shared"};
    }

private:
    void add_param(std::string name, TensorT<S> t) {
        index_[name] = params_.size();
        params_.emplace_back(std::move(name), std::move(t));
    }

    TensorT<S> fan_in_uniform(Shape shape, int fan_in, Rng& rng) {
        const S bound = S(1) / std::sqrt(static_cast<S>(fan_in));
        return TensorT<S>::uniform(std::move(shape), -bound, bound, rng);
    }

    static void check_batch(int batch, std::span<const std::string> species, const char* op) {
        if (static_cast<int>(species.size()) != batch)
            throw std::invalid_argument(std::string(op) + ": " + std::to_string(species.size()) +
                                        " species labels for batch of " + std::to_string(batch));
    }

    TensorT<S> attention_block(const TensorT<S>& x, int block) {
        const std::string p = "backbone.attn" + std::to_string(block);
        auto n = layer_norm(x, param(p + ".norm.gain").tensor, param(p + ".norm.offset").tensor);
        const int B = x.dim(0), D = x.dim(2);
        const int dh = cfg_.head_dim();
        std::vector<TensorT<S>> outs;
        outs.reserve(static_cast<std::size_t>(B));
        for (int b = 0; b < B; ++b) {
            auto xb = batch_slice(n, b);  // [L x D]
            auto q = matmul(xb, param(p + ".wq").tensor);
            auto k = matmul(xb, param(p + ".wk").tensor);
            auto v = matmul(xb, param(p + ".wv").tensor);
            std::vector<TensorT<S>> heads;
            heads.reserve(static_cast<std::size_t>(cfg_.heads));
            for (int h = 0; h < cfg_.heads; ++h) {
                auto qh = col_slice(q, h * dh, (h + 1) * dh);
                auto kh = col_slice(k, h * dh, (h + 1) * dh);
                auto vh = col_slice(v, h * dh, (h + 1) * dh);
                heads.push_back(cfg_.attention == AttentionKind::favor
                                    ? favor_plus_attention(qh, kh, vh, feature_map(block, h))
                                    : exact_attention(qh, kh, vh));
            }
            outs.push_back(matmul(col_concat(heads), param(p + ".wo").tensor));
        }
        (void)D;
        return add(x, stack(outs));
    }

    ModelConfig cfg_;
    std::vector<Parameter<S>> params_;
    std::map<std::string, std::size_t> index_;
    std::vector<RandomFeatureMapT<S>> rf_maps_;
};

using Model = ModelT<float>;

/// Sigmoid on plain values; model outputs are logits.
template <class S>
inline double sigmoid_value(S z) {
    const double x = static_cast<double>(z);
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace circkit

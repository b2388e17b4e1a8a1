#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "circkit/dataset.hpp"
#include "circkit/model.hpp"
#include "circkit/optim.hpp"
#include "circkit/tensor.hpp"

namespace circkit {

inline constexpr double kSsdFallbackPosWeight = 285.0;
inline constexpr double kSspFallbackPosWeight = 10.0;

struct TrainConfig {
    Task task = Task::ssd;
    int epochs = 30;
    int batch_size = 20;
    double lr = 1e-3;
    double pos_weight = 0;      // 0: derive from the data's N/P ratio (rounded); see resolve_pos_weight
    int pos_weight_epochs = 10; // the weight applies to epochs [0, pos_weight_epochs)
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
    std::vector<std::string> species;  // subset to train on; empty = all model species

    static TrainConfig ssd_defaults() {
        TrainConfig c;
        c.task = Task::ssd;
        c.pos_weight_epochs = 10;
        return c;
    }
    static TrainConfig ssp_defaults() {
        TrainConfig c;
        c.task = Task::ssp;
        c.pos_weight_epochs = 5;
        return c;
    }
};

/// The scheduled positive-class weight is exact at epoch boundaries: the
/// configured value through epochs 0..pos_weight_epochs-1, then 1.
inline double scheduled_pos_weight(double resolved_weight, int pos_weight_epochs, int epoch) {
    return epoch < pos_weight_epochs ? resolved_weight : 1.0;
}

/// Mean weighted binary cross entropy on logits (log-sum-exp form).
template <class S>
TensorT<S> weighted_bce_loss(const TensorT<S>& logits, const std::vector<S>& labels, S pos_weight) {
    return weighted_bce_with_logits(logits, labels, pos_weight);
}

struct EpochStats {
    int epoch = 0;
    Task task = Task::ssd;
    double mean_loss = 0;
    double mean_grad_norm = 0;
    double pos_weight = 1;
    std::int64_t batches = 0;
    std::map<std::string, std::int64_t> species_counts;

    std::string log_line() const {
        std::ostringstream os;
        os << "epoch=" << epoch << " task=" << task_name(task) << " loss=" << mean_loss
           << " w_pos=" << pos_weight << " grad_norm=" << mean_grad_norm << " species=";
        bool first = true;
        for (const auto& [sp, n] : species_counts) {
            os << (first ? "" : ",") << sp << ':' << n;
            first = false;
        }
        return os.str();
    }
};

/// Derives the positive-class weight from the data when the config leaves it
/// at 0: the rounded N/P position ratio for detection, the rounded
/// negative:positive sample ratio for pairing. Falls back to the reference
/// constants (285 / 10) if the ratio is degenerate.
inline double resolve_pos_weight_ssd(const std::vector<std::vector<SsdSample>>& pools) {
    std::int64_t total = 0, pos = 0;
    for (const auto& pool : pools)
        for (const auto& s : pool) {
            total += static_cast<std::int64_t>(s.window.size());
            pos += static_cast<std::int64_t>(s.label_positions.size());
        }
    if (pos == 0) return kSsdFallbackPosWeight;
    return std::max(1.0, std::round(static_cast<double>(total - pos) / static_cast<double>(pos)));
}

inline double resolve_pos_weight_ssp(const std::vector<std::vector<SspSample>>& pools) {
    std::int64_t pos = 0, neg = 0;
    for (const auto& pool : pools)
        for (const auto& s : pool) (s.label ? pos : neg)++;
    if (pos == 0) return kSspFallbackPosWeight;
    return std::max(1.0, std::round(static_cast<double>(neg) / static_cast<double>(pos)));
}

/// One optimization loop over species-balanced batches. Pools are aligned
/// with the active species list (config subset, or the model's full list).
template <class S>
class Trainer {
public:
    Trainer(ModelT<S>& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
        active_species_ = cfg_.species.empty() ? model_.config().species : cfg_.species;
        for (const auto& sp : active_species_) model_.species_index(sp);  // validate
        adam_.lr = cfg_.lr;
    }

    const std::vector<std::string>& active_species() const { return active_species_; }

    EpochStats run_epoch_ssd(const std::vector<std::vector<SsdSample>>& pools, int epoch) {
        if (cfg_.task != Task::ssd) throw std::logic_error("Trainer: config task is not ssd");
        if (resolved_pos_weight_ == 0)
            resolved_pos_weight_ = cfg_.pos_weight > 0 ? cfg_.pos_weight : resolve_pos_weight_ssd(pools);
        return run_epoch<SsdSample>(pools, epoch, [&](const SsdSample& s, std::vector<S>& labels) {
            auto x = one_hot_encode<S>(s.window, kSsdAlphabet);
            std::vector<S> row(s.window.size(), S(0));
            for (int p : s.label_positions) row[static_cast<std::size_t>(p)] = S(1);
            labels.insert(labels.end(), row.begin(), row.end());
            return x;
        });
    }

    EpochStats run_epoch_ssp(const std::vector<std::vector<SspSample>>& pools, int epoch) {
        if (cfg_.task != Task::ssp) throw std::logic_error("Trainer: config task is not ssp");
        if (resolved_pos_weight_ == 0)
            resolved_pos_weight_ = cfg_.pos_weight > 0 ? cfg_.pos_weight : resolve_pos_weight_ssp(pools);
        return run_epoch<SspSample>(pools, epoch, [&](const SspSample& s, std::vector<S>& labels) {
            labels.push_back(static_cast<S>(s.label));
            return one_hot_encode<S>(s.sequence, kSspAlphabet);
        });
    }

    double resolved_pos_weight() const { return resolved_pos_weight_; }
    std::int64_t steps() const { return steps_; }

private:
    template <class Sample, class Encode>
    EpochStats run_epoch(const std::vector<std::vector<Sample>>& pools, int epoch, Encode&& encode) {
        if (pools.size() != active_species_.size())
            throw std::invalid_argument("Trainer: " + std::to_string(pools.size()) + " pools for " +
                                        std::to_string(active_species_.size()) + " active species");
        if (!iterator_) {
            std::vector<std::int64_t> sizes;
            for (const auto& p : pools) sizes.push_back(static_cast<std::int64_t>(p.size()));
            iterator_.emplace(sizes, cfg_.batch_size, cfg_.seed);
        }
        const double w_pos = scheduled_pos_weight(resolved_pos_weight_, cfg_.pos_weight_epochs, epoch);

        EpochStats stats;
        stats.epoch = epoch;
        stats.task = cfg_.task;
        stats.pos_weight = w_pos;
        double loss_acc = 0, norm_acc = 0;
        const std::int64_t n_batches = iterator_->batches_per_epoch();

        for (std::int64_t bi = 0; bi < n_batches; ++bi) {
            const auto picks = iterator_->next();
            std::vector<TensorT<S>> rows;
            std::vector<std::string> species;
            std::vector<S> labels;
            rows.reserve(picks.size());
            for (const auto& [sp, idx] : picks) {
                const auto& sample = pools[static_cast<std::size_t>(sp)][static_cast<std::size_t>(idx)];
                rows.push_back(encode(sample, labels));
                species.push_back(active_species_[static_cast<std::size_t>(sp)]);
                ++stats.species_counts[active_species_[static_cast<std::size_t>(sp)]];
            }
            auto x = stack(rows);
            auto logits = cfg_.task == Task::ssd
                              ? model_.forward_ssd(x, std::span<const std::string>(species))
                              : model_.forward_ssp(x, std::span<const std::string>(species));
            auto loss = weighted_bce_with_logits(logits, labels, static_cast<S>(w_pos));
            const double loss_v = static_cast<double>(loss.item());
            if (!std::isfinite(loss_v)) {
                std::string mix;
                for (const auto& sp : species) mix += (mix.empty() ? "" : ",") + sp;
                throw std::runtime_error("train_epoch: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(bi) + " (species mix: " + mix + ")");
            }
            model_.zero_grad();
            loss.backward();
            norm_acc += clip_grad_norm(model_.params(), cfg_.clip_norm);
            adam_step(model_.params(), adam_);
            ++steps_;
            loss_acc += loss_v;
        }
        stats.batches = n_batches;
        stats.mean_loss = loss_acc / static_cast<double>(n_batches);
        stats.mean_grad_norm = norm_acc / static_cast<double>(n_batches);
        return stats;
    }

    ModelT<S>& model_;
    TrainConfig cfg_;
    std::vector<std::string> active_species_;
    std::optional<BalancedBatchIterator> iterator_;
    AdamConfig adam_;
    double resolved_pos_weight_ = 0;
    std::int64_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: magic "CFME", u32 LE version, length-prefixed config text,
// parameter records (u32 name length, name, u32 rank, u32 dims, raw f32 LE),
// trailing CRC-32 over everything after the 8-byte header.

struct TrainProgress {
    std::int64_t epoch = 0;
    std::int64_t step = 0;
    std::string rng_state;
};

struct Checkpoint {
    ModelConfig config;
    TrainProgress progress;
    std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>> params;
};

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf.append(b, 4);
}

inline std::uint32_t get_u32(const std::string& buf, std::size_t& off) {
    if (off + 4 > buf.size()) throw std::runtime_error("checkpoint: truncated file");
    std::uint32_t v;
    std::memcpy(&v, buf.data() + off, 4);
    off += 4;
    return v;
}

}  // namespace detail

inline void save_checkpoint(const ModelT<float>& model, const std::filesystem::path& path,
                            const TrainProgress& progress = {}) {
    std::string payload;
    std::ostringstream cfg_text;
    cfg_text << model.config().serialize();
    cfg_text << "progress.epoch=" << progress.epoch << '\n';
    cfg_text << "progress.step=" << progress.step << '\n';
    if (!progress.rng_state.empty()) cfg_text << "progress.rng=" << progress.rng_state << '\n';
    const std::string cfg_str = cfg_text.str();
    detail::put_u32(payload, static_cast<std::uint32_t>(cfg_str.size()));
    payload += cfg_str;

    for (const auto& p : model.params()) {
        detail::put_u32(payload, static_cast<std::uint32_t>(p.name.size()));
        payload += p.name;
        detail::put_u32(payload, static_cast<std::uint32_t>(p.tensor.shape().size()));
        for (int d : p.tensor.shape()) detail::put_u32(payload, static_cast<std::uint32_t>(d));
        const auto& v = p.tensor.values();
        payload.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path.string() + "' for writing");
    out.write("CFME", 4);
    const std::uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    const std::uint32_t crc = crc32(payload.data(), payload.size());
    out.write(reinterpret_cast<const char*>(&crc), 4);
    if (!out) throw std::runtime_error("save_checkpoint: write failure on '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path.string() + "'");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() < 12) throw std::runtime_error("load_checkpoint: truncated file");
    if (data.compare(0, 4, "CFME") != 0)
        throw std::runtime_error("load_checkpoint: bad magic (not a checkpoint file)");
    std::uint32_t version;
    std::memcpy(&version, data.data() + 4, 4);
    if (version != 1)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));

    const std::string payload = data.substr(8, data.size() - 12);
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, data.data() + data.size() - 4, 4);
    if (crc32(payload.data(), payload.size()) != stored_crc)
        throw std::runtime_error("load_checkpoint: CRC mismatch; file is corrupt");

    Checkpoint ck;
    std::size_t off = 0;
    const std::uint32_t cfg_len = detail::get_u32(payload, off);
    if (off + cfg_len > payload.size()) throw std::runtime_error("checkpoint: truncated config text");
    const std::string cfg_str = payload.substr(off, cfg_len);
    off += cfg_len;
    ck.config = ModelConfig::deserialize(cfg_str);
    {
        std::istringstream is(cfg_str);
        std::string line;
        while (std::getline(is, line)) {
            if (line.rfind("progress.epoch=", 0) == 0) ck.progress.epoch = std::stoll(line.substr(15));
            else if (line.rfind("progress.step=", 0) == 0) ck.progress.step = std::stoll(line.substr(14));
            else if (line.rfind("progress.rng=", 0) == 0) ck.progress.rng_state = line.substr(13);
        }
    }

    while (off < payload.size()) {
        const std::uint32_t name_len = detail::get_u32(payload, off);
        if (off + name_len > payload.size()) throw std::runtime_error("checkpoint: truncated parameter name");
        std::string name = payload.substr(off, name_len);
        off += name_len;
        const std::uint32_t rank = detail::get_u32(payload, off);
        if (rank > 3) throw std::runtime_error("checkpoint: parameter '" + name + "' has rank > 3");
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i)
            shape.push_back(static_cast<int>(detail::get_u32(payload, off)));
        const auto count = static_cast<std::size_t>(shape_numel(shape));
        if (off + count * sizeof(float) > payload.size())
            throw std::runtime_error("checkpoint: truncated data for parameter '" + name + "'");
        std::vector<float> values(count);
        std::memcpy(values.data(), payload.data() + off, count * sizeof(float));
        off += count * sizeof(float);
        ck.params.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(values)));
    }
    return ck;
}

/// Instantiates a model from a checkpoint; every parameter the config implies
/// must be present with a matching shape.
inline ModelT<float> model_from_checkpoint(const Checkpoint& ck) {
    ModelT<float> model(ck.config);
    std::map<std::string, const std::pair<Shape, std::vector<float>>*> blobs;
    for (const auto& [name, blob] : ck.params) blobs[name] = &blob;
    for (auto& p : model.params()) {
        const auto it = blobs.find(p.name);
        if (it == blobs.end()) {
            if (p.name.rfind("expert.", 0) == 0) {
                const auto rest = p.name.substr(7);
                const auto dot = rest.find('.');
                throw std::runtime_error("checkpoint missing parameters for species '" +
                                         rest.substr(0, dot) + "'");
            }
            throw std::runtime_error("checkpoint missing parameter '" + p.name + "'");
        }
        if (it->second->first != p.tensor.shape())
            throw std::runtime_error("checkpoint parameter '" + p.name + "' has shape " +
                                     shape_str(it->second->first) + ", expected " +
                                     shape_str(p.tensor.shape()));
        p.tensor.values() = it->second->second;
        blobs.erase(it);
    }
    if (!blobs.empty())
        throw std::runtime_error("checkpoint contains unknown parameter '" + blobs.begin()->first + "'");
    return model;
}

inline ModelT<float> load_model(const std::filesystem::path& path) {
    return model_from_checkpoint(load_checkpoint(path));
}

/// Builds a pairing-task model from a detection checkpoint: the 5-channel
/// input embedding grows a freshly initialized 'M' row, every other parameter
/// is copied bit-exactly.
inline ModelT<float> make_ssp_model_from(const Checkpoint& task1) {
    if (task1.config.task == Task::ssp) return model_from_checkpoint(task1);
    ModelConfig cfg2 = task1.config;
    cfg2.task = Task::ssp;
    ModelT<float> model(cfg2);
    std::map<std::string, const std::pair<Shape, std::vector<float>>*> blobs;
    for (const auto& [name, blob] : task1.params) blobs[name] = &blob;
    for (auto& p : model.params()) {
        const auto it = blobs.find(p.name);
        if (it == blobs.end()) throw std::runtime_error("task-1 checkpoint missing parameter '" + p.name + "'");
        const auto& [shape, values] = *it->second;
        if (p.name == "backbone.embed.weight") {
            // [1 x 5 x D] -> [1 x 6 x D]; rows A,C,G,T,N copied, row M keeps init
            const int D = cfg2.embed_dim;
            if (shape != Shape{1, 5, D})
                throw std::runtime_error("task-1 embedding has unexpected shape " + shape_str(shape));
            for (int c = 0; c < 5; ++c)
                for (int d = 0; d < D; ++d) p.tensor.at(0, c, d) = values[static_cast<std::size_t>(c) * D + d];
        } else {
            if (shape != p.tensor.shape())
                throw std::runtime_error("checkpoint parameter '" + p.name + "' has shape " +
                                         shape_str(shape) + ", expected " + shape_str(p.tensor.shape()));
            p.tensor.values() = values;
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// Pretrain-then-finetune workflow

struct PretrainFinetunePlan {
    ModelConfig model;          // species must cover every pool
    TrainConfig pretrain;       // detection task, all species
    TrainConfig finetune_ssd;   // applied per species
    TrainConfig finetune_ssp;   // applied per species, model initialized from the pretrain backbone
    std::filesystem::path out_dir;
};

struct PretrainFinetuneResult {
    std::filesystem::path pretrain_checkpoint;
    std::map<std::pair<std::string, std::string>, std::filesystem::path> finetuned;  // (species, task)
    std::vector<std::string> log_lines;
};

/// Pretrains detection across all species, then fine-tunes one model per
/// (species, task). Pairing models start from the pretrained backbone with a
/// fresh spacer-channel embedding row.
inline PretrainFinetuneResult pretrain_then_finetune(
    const std::vector<std::vector<SsdSample>>& ssd_pools,
    const std::vector<std::vector<SspSample>>& ssp_pools, const PretrainFinetunePlan& plan) {
    namespace fs = std::filesystem;
    fs::create_directories(plan.out_dir);
    PretrainFinetuneResult result;

    ModelT<float> model(plan.model);
    {
        Trainer<float> trainer(model, plan.pretrain);
        for (int e = 0; e < plan.pretrain.epochs; ++e)
            result.log_lines.push_back(trainer.run_epoch_ssd(ssd_pools, e).log_line());
        result.pretrain_checkpoint = plan.out_dir / "pretrain_ssd.ckpt";
        save_checkpoint(model, result.pretrain_checkpoint,
                        {plan.pretrain.epochs, trainer.steps(), {}});
    }

    for (std::size_t si = 0; si < plan.model.species.size(); ++si) {
        const std::string& sp = plan.model.species[si];
        {
            auto ft = model_from_checkpoint(load_checkpoint(result.pretrain_checkpoint));
            TrainConfig cfg = plan.finetune_ssd;
            cfg.species = {sp};
            Trainer<float> trainer(ft, cfg);
            for (int e = 0; e < cfg.epochs; ++e)
                result.log_lines.push_back(trainer.run_epoch_ssd({ssd_pools[si]}, e).log_line());
            const auto path = plan.out_dir / ("finetune_ssd_" + sp + ".ckpt");
            save_checkpoint(ft, path, {cfg.epochs, trainer.steps(), {}});
            result.finetuned[{sp, "ssd"}] = path;
        }
        if (si < ssp_pools.size() && !ssp_pools[si].empty()) {
            auto ft = make_ssp_model_from(load_checkpoint(result.pretrain_checkpoint));
            TrainConfig cfg = plan.finetune_ssp;
            cfg.species = {sp};
            Trainer<float> trainer(ft, cfg);
            for (int e = 0; e < cfg.epochs; ++e)
                result.log_lines.push_back(trainer.run_epoch_ssp({ssp_pools[si]}, e).log_line());
            const auto path = plan.out_dir / ("finetune_ssp_" + sp + ".ckpt");
            save_checkpoint(ft, path, {cfg.epochs, trainer.steps(), {}});
            result.finetuned[{sp, "ssp"}] = path;
        }
    }
    return result;
}

}  // namespace circkit

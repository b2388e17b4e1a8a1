#include <catch2/catch.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "circkit/eval.hpp"
#include "circkit/train.hpp"
#include "synthetic.hpp"

using namespace circkit;
namespace fs = std::filesystem;

namespace {

struct MiniData {
    std::vector<std::string> species;
    std::vector<std::vector<SsdSample>> ssd_train, ssd_eval;
    std::vector<std::vector<SspSample>> ssp_train, ssp_eval;
};

MiniData mini_data(std::uint64_t seed, int n_species = 2) {
    synthetic::CorpusSpec spec;
    spec.n_species = n_species;
    spec.genome_len = 16000;
    spec.n_circs = 18;
    spec.min_span = 60;
    spec.max_span = 800;
    spec.decoys_per_species = 10;
    spec.seed = seed;
    auto corpus = synthetic::make_corpus(spec);

    MiniData data;
    data.species = corpus.species;
    for (const auto& sp : corpus.species) {
        SsdBuildConfig scfg;
        scfg.window = 65;
        scfg.neg_per_pos_window = 0.5;
        scfg.seed = seed;
        scfg.species = {sp};
        auto ds = build_ssd_dataset(corpus.genome, corpus.annotations, scfg);
        auto parts = split_dataset(ds.samples, {0.8, 0.0, 0.2}, seed);
        data.ssd_train.push_back(parts[0]);
        data.ssd_eval.push_back(parts[2]);

        SspBuildConfig pcfg;
        pcfg.context = 41;
        pcfg.neg_ratio = 3;
        pcfg.seed = seed;
        pcfg.species = {sp};
        auto ps = build_ssp_dataset(corpus.genome, corpus.annotations, pcfg);
        auto pparts = split_dataset(ps.samples, {0.8, 0.0, 0.2}, seed);
        data.ssp_train.push_back(pparts[0]);
        data.ssp_eval.push_back(pparts[2]);
    }
    return data;
}

ModelConfig mini_model_config(const std::vector<std::string>& species, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.embed_dim = 16;
    cfg.conv_blocks = 2;
    cfg.kernel = 9;
    cfg.dilations = {1, 2};
    cfg.attn_blocks = 1;
    cfg.heads = 2;
    cfg.random_features = 16;
    cfg.species = species;
    cfg.seed = seed;
    return cfg;
}

fs::path temp_dir(const std::string& tag) {
    auto dir = fs::temp_directory_path() / ("circkit_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("weighted bce closed forms", "[training]") {
    // z=0, y=1, w=1: ln 2
    auto z1 = Tensor64::from_vector({0.0}, {1});
    REQUIRE(weighted_bce_loss(z1, {1.0}, 1.0).item() == Approx(std::log(2.0)).epsilon(1e-12));
    // the positive weight scales linearly: 285 ln 2
    auto z2 = Tensor64::from_vector({0.0}, {1});
    REQUIRE(weighted_bce_loss(z2, {1.0}, 285.0).item() == Approx(285.0 * std::log(2.0)).epsilon(1e-12));
    // the weight leaves negatives untouched
    auto z3 = Tensor64::from_vector({0.0}, {1});
    REQUIRE(weighted_bce_loss(z3, {0.0}, 285.0).item() == Approx(std::log(2.0)).epsilon(1e-12));
    // numerically stable at extreme logits
    auto z4 = Tensor64::from_vector({80.0, -80.0}, {2});
    const double loss = weighted_bce_loss(z4, {0.0, 1.0}, 5.0).item();
    REQUIRE(std::isfinite(loss));
    REQUIRE(loss == Approx((80.0 + 5.0 * 80.0) / 2).epsilon(1e-6));
}

TEST_CASE("pos-weight schedule switches exactly at the epoch boundary", "[training]") {
    REQUIRE(scheduled_pos_weight(285.0, 10, 0) == 285.0);
    REQUIRE(scheduled_pos_weight(285.0, 10, 9) == 285.0);
    REQUIRE(scheduled_pos_weight(285.0, 10, 10) == 1.0);
    REQUIRE(scheduled_pos_weight(10.0, 5, 4) == 10.0);
    REQUIRE(scheduled_pos_weight(10.0, 5, 5) == 1.0);
}

TEST_CASE("trainer resolves the positive weight from the data ratio", "[training]") {
    auto data = mini_data(3);
    ModelT<float> model(mini_model_config(data.species, 3));
    TrainConfig cfg = TrainConfig::ssd_defaults();
    cfg.batch_size = 8;
    cfg.epochs = 1;
    Trainer<float> trainer(model, cfg);
    auto stats = trainer.run_epoch_ssd(data.ssd_train, 0);
    // the schedule applies the rounded N/P ratio of the training pools
    std::int64_t total = 0, pos = 0;
    for (const auto& pool : data.ssd_train)
        for (const auto& s : pool) {
            total += static_cast<std::int64_t>(s.window.size());
            pos += static_cast<std::int64_t>(s.label_positions.size());
        }
    REQUIRE(stats.pos_weight ==
            Approx(std::round(static_cast<double>(total - pos) / static_cast<double>(pos))));
    REQUIRE(stats.batches > 0);
    // per-batch species counts are balanced
    REQUIRE(stats.species_counts.at("sp0") == stats.species_counts.at("sp1"));
}

TEST_CASE("zero learning rate leaves parameters unchanged", "[training]") {
    auto data = mini_data(5);
    ModelT<float> model(mini_model_config(data.species, 5));
    std::vector<std::vector<float>> before;
    for (const auto& p : model.params()) before.push_back(p.tensor.values());
    TrainConfig cfg = TrainConfig::ssd_defaults();
    cfg.batch_size = 8;
    cfg.lr = 0.0;
    Trainer<float> trainer(model, cfg);
    trainer.run_epoch_ssd(data.ssd_train, 0);
    for (std::size_t i = 0; i < before.size(); ++i)
        REQUIRE(model.params()[i].tensor.values() == before[i]);
}

TEST_CASE("identical seeds give identical loss trajectories", "[training]") {
    auto run = [] {
        auto data = mini_data(7);
        ModelT<float> model(mini_model_config(data.species, 7));
        TrainConfig cfg = TrainConfig::ssd_defaults();
        cfg.batch_size = 8;
        cfg.seed = 11;
        Trainer<float> trainer(model, cfg);
        std::vector<std::string> log;
        for (int e = 0; e < 2; ++e) log.push_back(trainer.run_epoch_ssd(data.ssd_train, e).log_line());
        return log;
    };
    REQUIRE(run() == run());
}

TEST_CASE("loss decreases over the first epochs on separable data", "[training]") {
    int successes = 0;
    for (std::uint64_t seed : {21ull, 22ull, 23ull}) {
        auto data = mini_data(seed);
        ModelT<float> model(mini_model_config(data.species, seed));
        TrainConfig cfg = TrainConfig::ssd_defaults();
        cfg.batch_size = 8;
        cfg.seed = seed;
        cfg.pos_weight_epochs = 3;
        Trainer<float> trainer(model, cfg);
        std::vector<double> losses;
        for (int e = 0; e < 5; ++e) losses.push_back(trainer.run_epoch_ssd(data.ssd_train, e).mean_loss);
        // compare within the constant-weight tail of the schedule
        if (losses[4] < losses[3]) ++successes;
    }
    REQUIRE(successes >= 2);  // median over 3 seeds
}

TEST_CASE("checkpoint round-trip is bit-exact", "[training]") {
    auto dir = temp_dir("ckpt");
    auto data = mini_data(9);
    ModelT<float> model(mini_model_config(data.species, 9));
    TrainConfig cfg = TrainConfig::ssd_defaults();
    cfg.batch_size = 8;
    Trainer<float> trainer(model, cfg);
    trainer.run_epoch_ssd(data.ssd_train, 0);

    const auto path = dir / "model.ckpt";
    save_checkpoint(model, path, {1, trainer.steps(), "rngstate"});
    auto ck = load_checkpoint(path);
    REQUIRE(ck.progress.epoch == 1);
    REQUIRE(ck.progress.step == trainer.steps());
    REQUIRE(ck.progress.rng_state == "rngstate");
    auto loaded = model_from_checkpoint(ck);

    for (std::size_t i = 0; i < model.params().size(); ++i) {
        REQUIRE(loaded.params()[i].name == model.params()[i].name);
        REQUIRE(loaded.params()[i].tensor.values() == model.params()[i].tensor.values());
    }

    // bit-identical forward on a fixed batch
    const auto& sample = data.ssd_train[0][0];
    auto x = one_hot_encode<float>(sample.window, kSsdAlphabet);
    auto batch = reshape(x, {1, static_cast<int>(sample.window.size()), 5});
    std::vector<std::string> sp{sample.species};
    auto a = model.forward_ssd(batch, sp);
    auto x2 = one_hot_encode<float>(sample.window, kSsdAlphabet);
    auto batch2 = reshape(x2, {1, static_cast<int>(sample.window.size()), 5});
    auto b = loaded.forward_ssd(batch2, sp);
    REQUIRE(a.values() == b.values());
}

TEST_CASE("checkpoint integrity and compatibility failures", "[training]") {
    auto dir = temp_dir("ckpt_bad");
    auto data = mini_data(13);
    ModelT<float> model(mini_model_config(data.species, 13));
    const auto path = dir / "model.ckpt";
    save_checkpoint(model, path);

    // corrupt one payload byte: the integrity check must fail
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(200);
        char c;
        f.seekg(200);
        f.get(c);
        f.seekp(200);
        f.put(static_cast<char>(c ^ 0x40));
    }
    REQUIRE_THROWS_WITH(load_checkpoint(path), Catch::Contains("CRC"));

    // bad magic
    {
        std::ofstream f(dir / "junk.ckpt", std::ios::binary);
        f << "NOPEnope-not-a-checkpoint";
    }
    REQUIRE_THROWS_WITH(load_checkpoint(dir / "junk.ckpt"), Catch::Contains("magic"));

    // truncated file
    save_checkpoint(model, path);
    {
        auto size = fs::file_size(path);
        fs::resize_file(path, size - 9);
    }
    REQUIRE_THROWS(load_checkpoint(path));

    // a checkpoint stripped of one species' head parameters names the species
    save_checkpoint(model, path);
    auto ck = load_checkpoint(path);
    std::erase_if(ck.params, [](const auto& p) { return p.first.rfind("expert.sp1.", 0) == 0; });
    REQUIRE_THROWS_WITH(model_from_checkpoint(ck),
                        Catch::Contains("missing parameters for species 'sp1'"));
}

TEST_CASE("pairing model initialization copies the detection backbone", "[training]") {
    auto dir = temp_dir("task2");
    auto data = mini_data(17);
    ModelT<float> model(mini_model_config(data.species, 17));
    const auto path = dir / "pre.ckpt";
    save_checkpoint(model, path);

    auto ssp_model = make_ssp_model_from(load_checkpoint(path));
    REQUIRE(ssp_model.config().task == Task::ssp);
    REQUIRE(ssp_model.config().channels() == 6);

    for (const auto& p : ssp_model.params()) {
        if (p.name == "backbone.embed.weight") {
            // rows A,C,G,T,N copied from the 5-channel embedding
            const auto& src = model.param("backbone.embed.weight").tensor;
            for (int c = 0; c < 5; ++c)
                for (int d = 0; d < 16; ++d) REQUIRE(p.tensor.at(0, c, d) == src.at(0, c, d));
        } else {
            REQUIRE(p.tensor.values() == model.param(p.name).tensor.values());
        }
    }
}

TEST_CASE("fine-tuning updates only the backbone and the tuned species head", "[training]") {
    auto dir = temp_dir("ftiso");
    auto data = mini_data(19);
    PretrainFinetunePlan plan;
    plan.model = mini_model_config(data.species, 19);
    plan.pretrain = TrainConfig::ssd_defaults();
    plan.pretrain.epochs = 1;
    plan.pretrain.batch_size = 8;
    plan.finetune_ssd = TrainConfig::ssd_defaults();
    plan.finetune_ssd.epochs = 1;
    plan.finetune_ssd.batch_size = 4;
    plan.finetune_ssp = TrainConfig::ssp_defaults();
    plan.finetune_ssp.epochs = 1;
    plan.finetune_ssp.batch_size = 4;
    plan.out_dir = dir;

    auto result = pretrain_then_finetune(data.ssd_train, data.ssp_train, plan);
    REQUIRE(fs::exists(result.pretrain_checkpoint));
    auto pre = load_checkpoint(result.pretrain_checkpoint);
    auto ft = load_checkpoint(result.finetuned.at({"sp0", "ssd"}));

    std::map<std::string, std::vector<float>> pre_params;
    for (const auto& [name, blob] : pre.params) pre_params[name] = blob.second;
    bool backbone_changed = false, own_head_changed = false;
    for (const auto& [name, blob] : ft.params) {
        if (name.rfind("expert.sp1.", 0) == 0) {
            REQUIRE(blob.second == pre_params.at(name));  // untouched species: bit-identical
        } else if (name.rfind("expert.sp0.ssd", 0) == 0) {
            own_head_changed = own_head_changed || blob.second != pre_params.at(name);
        } else if (name.rfind("backbone.", 0) == 0) {
            backbone_changed = backbone_changed || blob.second != pre_params.at(name);
        }
    }
    REQUIRE(backbone_changed);
    REQUIRE(own_head_changed);
}

TEST_CASE("fine-tuning does not hurt held-out detection", "[training]") {
    int improved = 0;
    for (std::uint64_t seed : {31ull, 32ull, 33ull}) {
        auto data = mini_data(seed);
        auto dir = temp_dir("ftgain" + std::to_string(seed));
        PretrainFinetunePlan plan;
        plan.model = mini_model_config(data.species, seed);
        plan.pretrain = TrainConfig::ssd_defaults();
        plan.pretrain.epochs = 2;
        plan.pretrain.batch_size = 8;
        plan.pretrain.pos_weight_epochs = 1;
        plan.pretrain.seed = seed;
        plan.finetune_ssd = plan.pretrain;
        plan.finetune_ssd.epochs = 4;
        plan.finetune_ssd.batch_size = 4;
        plan.finetune_ssp = TrainConfig::ssp_defaults();
        plan.finetune_ssp.epochs = 0;  // pairing not needed for this comparison
        plan.out_dir = dir;
        auto result = pretrain_then_finetune(data.ssd_train, {{}, {}}, plan);

        auto pre_model = load_model(result.pretrain_checkpoint);
        auto ft_model = load_model(result.finetuned.at({"sp0", "ssd"}));
        const double pre = evaluate_ssd(pre_model, data.ssd_eval[0]).top_k;
        const double ft = evaluate_ssd(ft_model, data.ssd_eval[0]).top_k;
        if (ft >= pre) ++improved;
    }
    REQUIRE(improved >= 2);  // median over 3 seeds
}

TEST_CASE("non-finite loss aborts with batch diagnostics", "[training]") {
    auto data = mini_data(23);
    ModelT<float> model(mini_model_config(data.species, 23));
    // poison a head parameter so the logits (and the loss) go non-finite
    auto& w = model.param("expert.sp0.ssd.weight").tensor;
    for (auto& v : w.values()) v = std::numeric_limits<float>::infinity();
    TrainConfig cfg = TrainConfig::ssd_defaults();
    cfg.batch_size = 8;
    Trainer<float> trainer(model, cfg);
    REQUIRE_THROWS_WITH(trainer.run_epoch_ssd(data.ssd_train, 0),
                        Catch::Contains("non-finite loss") && Catch::Contains("batch") &&
                            Catch::Contains("species mix"));
}

TEST_CASE("unknown checkpoint versions are rejected", "[training]") {
    auto dir = temp_dir("ckpt_ver");
    auto data = mini_data(29);
    ModelT<float> model(mini_model_config(data.species, 29));
    const auto path = dir / "model.ckpt";
    save_checkpoint(model, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const std::uint32_t bad = 99;
        f.write(reinterpret_cast<const char*>(&bad), 4);
    }
    REQUIRE_THROWS_WITH(load_checkpoint(path), Catch::Contains("unsupported version"));
}

// circkit command-line tool: dataset preparation, training, evaluation,
// genome-scale prediction and calling, and interpretability outputs.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "circkit/circkit.hpp"

namespace fs = std::filesystem;
using namespace circkit;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open input file '" + path + "'");
    return in;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open output file '" + path.string() + "'");
    return out;
}

Genome load_genome(const std::string& path) {
    auto in = open_input(path);
    Genome g;
    g.records = parse_fasta(in);
    if (g.records.empty()) throw std::runtime_error("genome file '" + path + "' contains no records");
    return g;
}

std::vector<CircRnaAnnotation> load_annotations(const std::string& path, const Genome& genome) {
    auto in = open_input(path);
    return parse_annotations(in, genome);
}

/// Echo of the effective subcommand configuration plus run metadata;
/// sufficient to re-execute the identical run.
void write_run_manifest(const fs::path& out_dir, CLI::App* sub, double elapsed_seconds) {
    fs::create_directories(out_dir);
    auto out = open_output(out_dir / "run_manifest.txt");
    out << "tool=circkit " << kVersion << '\n';
    out << "subcommand=" << sub->get_name() << '\n';
    out << "elapsed_seconds=" << elapsed_seconds << '\n';
    out << "# effective configuration\n";
    out << sub->config_to_str(true, false);
}

std::array<double, 3> parse_split(const std::string& text) {
    const auto parts = split(text, ',');
    if (parts.size() != 3) throw std::runtime_error("--split expects three comma-separated fractions");
    return {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
}

template <class Sample>
void write_split_files(const fs::path& dir, const std::string& stem, const std::vector<Sample>& samples,
                       const std::string& split_spec, std::uint64_t seed,
                       void (*writer)(std::ostream&, const std::vector<Sample>&)) {
    if (split_spec.empty()) return;
    auto parts = split_dataset(samples, parse_split(split_spec), seed);
    const char* names[3] = {"train", "val", "test"};
    for (int i = 0; i < 3; ++i) {
        auto out = open_output(dir / (stem + "." + names[i] + ".tsv"));
        writer(out, parts[static_cast<std::size_t>(i)]);
    }
}

template <class Sample>
std::vector<std::string> species_of(const std::vector<Sample>& samples) {
    std::set<std::string> s;
    for (const auto& x : samples) s.insert(x.species);
    return {s.begin(), s.end()};
}

struct ModelFlags {
    int embed_dim = 64;
    int conv_blocks = 4;
    int kernel = 9;
    std::string dilations = "1,2,4,8";
    int attn_blocks = 2;
    int heads = 4;
    int random_features = 64;
    std::string attention = "favor";
    bool no_moe = false;

    void attach(CLI::App* sub) {
        sub->add_option("--embed-dim", embed_dim, "Hidden width D");
        sub->add_option("--conv-blocks", conv_blocks, "Number of dilated conv residual blocks");
        sub->add_option("--kernel", kernel, "Conv kernel size (odd)");
        sub->add_option("--dilations", dilations, "Comma-separated dilation cycle");
        sub->add_option("--attn-blocks", attn_blocks, "Number of attention blocks");
        sub->add_option("--heads", heads, "Attention heads");
        sub->add_option("--random-features", random_features, "Random features m per head");
        sub->add_option("--attention", attention, "Attention path: favor|exact")
            ->check(CLI::IsMember({"favor", "exact"}));
        sub->add_flag("--no-moe", no_moe, "Single shared head instead of per-species experts");
    }

    ModelConfig to_config(Task task, std::vector<std::string> species, std::uint64_t seed) const {
        ModelConfig cfg;
        cfg.task = task;
        cfg.embed_dim = embed_dim;
        cfg.conv_blocks = conv_blocks;
        cfg.kernel = kernel;
        cfg.dilations.clear();
        for (const auto& tok : split(dilations, ',')) cfg.dilations.push_back(std::stoi(tok));
        cfg.attn_blocks = attn_blocks;
        cfg.heads = heads;
        cfg.random_features = random_features;
        cfg.attention = attention == "exact" ? AttentionKind::exact : AttentionKind::favor;
        cfg.species = std::move(species);
        cfg.moe = !no_moe;
        cfg.seed = seed;
        cfg.validate();
        return cfg;
    }
};

struct TrainFlags {
    int epochs = 30;
    int batch = 20;
    double lr = 1e-3;
    double pos_weight = 0;
    int pos_weight_epochs = -1;  // -1: task default (10 for detection, 5 for pairing)
    double clip_norm = 5.0;

    void attach(CLI::App* sub) {
        sub->add_option("--epochs", epochs, "Training epochs");
        sub->add_option("--batch", batch, "Batch size (divisible by species count)");
        sub->add_option("--lr", lr, "Learning rate");
        sub->add_option("--pos-weight", pos_weight,
                        "Positive-class weight; 0 derives it from the data's N/P ratio");
        sub->add_option("--pos-weight-epochs", pos_weight_epochs,
                        "Epochs the positive weight applies to (-1: task default)");
        sub->add_option("--clip-norm", clip_norm, "Global gradient-norm clip");
    }

    TrainConfig to_config(Task task, std::uint64_t seed) const {
        TrainConfig cfg = task == Task::ssd ? TrainConfig::ssd_defaults() : TrainConfig::ssp_defaults();
        cfg.epochs = epochs;
        cfg.batch_size = batch;
        cfg.lr = lr;
        cfg.pos_weight = pos_weight;
        if (pos_weight_epochs >= 0) cfg.pos_weight_epochs = pos_weight_epochs;
        cfg.clip_norm = clip_norm;
        cfg.seed = seed;
        return cfg;
    }
};

template <class Sample>
void run_training_loop(ModelT<float>& model, Trainer<float>& trainer,
                       const std::vector<std::vector<Sample>>& pools, const TrainConfig& cfg,
                       const fs::path& out_dir) {
    fs::create_directories(out_dir);
    auto log = open_output(out_dir / "train_log.txt");
    for (int e = 0; e < cfg.epochs; ++e) {
        EpochStats stats;
        if constexpr (std::is_same_v<Sample, SsdSample>)
            stats = trainer.run_epoch_ssd(pools, e);
        else
            stats = trainer.run_epoch_ssp(pools, e);
        log << stats.log_line() << '\n';
        std::cout << stats.log_line() << std::endl;
    }
    save_checkpoint(model, out_dir / "model.ckpt", {cfg.epochs, trainer.steps(), {}});
}

template <class Sample>
std::vector<std::vector<Sample>> pool_by(const ModelT<float>& model_config_owner,
                                         std::vector<Sample> samples,
                                         const std::vector<std::string>& species) {
    (void)model_config_owner;
    std::vector<std::vector<Sample>> pools(species.size());
    for (auto& s : samples) {
        bool placed = false;
        for (std::size_t i = 0; i < species.size(); ++i)
            if (species[i] == s.species) {
                pools[i].push_back(std::move(s));
                placed = true;
                break;
            }
        if (!placed)
            throw std::runtime_error("sample species '" + s.species + "' is not in the training species list");
    }
    for (std::size_t i = 0; i < species.size(); ++i)
        if (pools[i].empty()) throw std::runtime_error("no samples for species '" + species[i] + "'");
    return pools;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"circkit: circRNA splice-site detection and pairing toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Configuration file (key=value; [subcommand] sections)");

    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "Seed for every randomized step")->capture_default_str();

    // ---- prepare-ssd ----
    auto* prep_ssd = app.add_subcommand("prepare-ssd", "Build the splice-site detection dataset");
    std::string ps_genome, ps_ann, ps_out, ps_species, ps_split;
    int ps_window = 5001;
    double ps_neg = 0.5;
    prep_ssd->add_option("--genome", ps_genome, "Genome FASTA")->required();
    prep_ssd->add_option("--ann", ps_ann, "Annotation TSV")->required();
    prep_ssd->add_option("--out", ps_out, "Output directory")->required();
    prep_ssd->add_option("--window", ps_window, "Window length W (odd)")->capture_default_str();
    prep_ssd->add_option("--neg-per-pos", ps_neg, "Negative windows per positive window")
        ->capture_default_str();
    prep_ssd->add_option("--species", ps_species, "Comma-separated species subset");
    prep_ssd->add_option("--split", ps_split, "Write train/val/test files, e.g. 0.8,0.1,0.1");

    // ---- prepare-ssp ----
    auto* prep_ssp = app.add_subcommand("prepare-ssp", "Build the splice-site pairing dataset");
    std::string pp_genome, pp_ann, pp_out, pp_species, pp_split;
    int pp_context = 1001;
    double pp_ratio = 10.0;
    prep_ssp->add_option("--genome", pp_genome, "Genome FASTA")->required();
    prep_ssp->add_option("--ann", pp_ann, "Annotation TSV")->required();
    prep_ssp->add_option("--out", pp_out, "Output directory")->required();
    prep_ssp->add_option("--context", pp_context, "Context length C per site (odd)")->capture_default_str();
    prep_ssp->add_option("--neg-ratio", pp_ratio, "Negative:positive sample ratio")->capture_default_str();
    prep_ssp->add_option("--species", pp_species, "Comma-separated species subset");
    prep_ssp->add_option("--split", pp_split, "Write train/val/test files, e.g. 0.8,0.1,0.1");

    // ---- train ----
    auto* train = app.add_subcommand("train", "Train a model from scratch on a prepared dataset");
    std::string tr_task = "ssd", tr_data, tr_out, tr_species;
    ModelFlags tr_model;
    TrainFlags tr_flags;
    train->add_option("--task", tr_task, "ssd|ssp")->check(CLI::IsMember({"ssd", "ssp"}));
    train->add_option("--data", tr_data, "Dataset TSV")->required();
    train->add_option("--out", tr_out, "Output directory")->required();
    train->add_option("--species", tr_species, "Species list (default: all species in the data)");
    tr_model.attach(train);
    tr_flags.attach(train);

    // ---- finetune ----
    auto* finetune = app.add_subcommand("finetune", "Fine-tune a pretrained checkpoint on one species");
    std::string ft_ckpt, ft_task = "ssd", ft_species, ft_data, ft_out;
    TrainFlags ft_flags;
    finetune->add_option("--checkpoint", ft_ckpt, "Pretrained checkpoint")->required();
    finetune->add_option("--task", ft_task, "ssd|ssp")->check(CLI::IsMember({"ssd", "ssp"}));
    finetune->add_option("--species", ft_species, "Species to fine-tune on")->required();
    finetune->add_option("--data", ft_data, "Dataset TSV")->required();
    finetune->add_option("--out", ft_out, "Output directory")->required();
    ft_flags.attach(finetune);

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a prepared dataset");
    std::string ev_task = "ssd", ev_data, ev_ckpt, ev_out;
    double ev_threshold = 0.5;
    eval->add_option("--task", ev_task, "ssd|ssp")->check(CLI::IsMember({"ssd", "ssp"}));
    eval->add_option("--data", ev_data, "Dataset TSV")->required();
    eval->add_option("--checkpoint", ev_ckpt, "Checkpoint")->required();
    eval->add_option("--out", ev_out, "Output directory")->required();
    eval->add_option("--threshold", ev_threshold, "Decision threshold")->capture_default_str();

    // ---- predict ----
    auto* predict = app.add_subcommand("predict", "Per-position probability tracks over a genome");
    std::string pr_genome, pr_species, pr_ckpt, pr_out;
    int pr_window = 5001, pr_stride = 0, pr_workers = 1;
    bool pr_binary = false;
    predict->add_option("--genome", pr_genome, "Genome FASTA")->required();
    predict->add_option("--species", pr_species, "Species (routes to its expert head)")->required();
    predict->add_option("--checkpoint", pr_ckpt, "Detection checkpoint")->required();
    predict->add_option("--out", pr_out, "Output directory")->required();
    predict->add_option("--window", pr_window, "Sliding window length")->capture_default_str();
    predict->add_option("--stride", pr_stride, "Stride (0: W - ceil(W/3), one-third overlap)");
    predict->add_option("--workers", pr_workers, "Parallel window-scoring workers");
    predict->add_flag("--binary", pr_binary, "Also write compact binary tracks");

    // ---- call ----
    auto* call = app.add_subcommand("call", "End-to-end circRNA calling on a genome");
    std::string ca_genome, ca_species, ca_ssd, ca_ssp, ca_out;
    CallConfig ca_cfg;
    call->add_option("--genome", ca_genome, "Genome FASTA")->required();
    call->add_option("--species", ca_species, "Species")->required();
    call->add_option("--ssd-checkpoint", ca_ssd, "Detection checkpoint")->required();
    call->add_option("--ssp-checkpoint", ca_ssp, "Pairing checkpoint")->required();
    call->add_option("--out", ca_out, "Output directory")->required();
    call->add_option("--window", ca_cfg.sliding.window, "Sliding window length")->capture_default_str();
    call->add_option("--stride", ca_cfg.sliding.stride, "Stride (0: one-third overlap default)");
    call->add_option("--workers", ca_cfg.sliding.workers, "Parallel window-scoring workers");
    call->add_option("--peak-threshold", ca_cfg.peak_threshold, "Detection probability threshold")
        ->capture_default_str();
    call->add_option("--min-separation", ca_cfg.min_separation, "Minimum peak separation")
        ->capture_default_str();
    call->add_option("--max-span", ca_cfg.max_span, "Maximum site-pair span")->capture_default_str();
    call->add_option("--pair-threshold", ca_cfg.pair_threshold, "Pairing probability threshold")
        ->capture_default_str();
    call->add_option("--context", ca_cfg.context, "Pairing context length C")->capture_default_str();

    // ---- saliency ----
    auto* saliency = app.add_subcommand("saliency", "Species-averaged saliency profile around sites");
    std::string sa_genome, sa_ann, sa_species, sa_ckpt, sa_out;
    int sa_radius = 2500, sa_limit = 0;
    saliency->add_option("--genome", sa_genome, "Genome FASTA")->required();
    saliency->add_option("--ann", sa_ann, "Annotation TSV")->required();
    saliency->add_option("--species", sa_species, "Species")->required();
    saliency->add_option("--checkpoint", sa_ckpt, "Detection checkpoint")->required();
    saliency->add_option("--out", sa_out, "Output directory")->required();
    saliency->add_option("--radius", sa_radius, "Bases on each side of the site")->capture_default_str();
    saliency->add_option("--limit", sa_limit, "Cap on the number of sites (0: all)");

    // ---- logo ----
    auto* logo = app.add_subcommand("logo", "Saliency-weighted sequence logo around sites");
    std::string lo_genome, lo_ann, lo_species, lo_ckpt, lo_out, lo_svg;
    int lo_radius = 50, lo_window_radius = 100, lo_limit = 0;
    logo->add_option("--genome", lo_genome, "Genome FASTA")->required();
    logo->add_option("--ann", lo_ann, "Annotation TSV")->required();
    logo->add_option("--species", lo_species, "Species")->required();
    logo->add_option("--checkpoint", lo_ckpt, "Detection checkpoint")->required();
    logo->add_option("--out", lo_out, "Output directory")->required();
    logo->add_option("--radius", lo_radius, "Logo half-width in bases")->capture_default_str();
    logo->add_option("--window-radius", lo_window_radius, "Model input half-width per site")
        ->capture_default_str();
    logo->add_option("--limit", lo_limit, "Cap on the number of sites (0: all)");
    logo->add_option("--svg", lo_svg, "Also render an SVG with this filename (inside --out)");

    // ---- scan-polyat ----
    auto* scan = app.add_subcommand("scan-polyat", "PolyA/T run enrichment around annotated sites");
    std::string sc_genome, sc_ann, sc_out;
    int sc_window = 100, sc_min_run = 5;
    std::int64_t sc_trials = 100000;
    scan->add_option("--genome", sc_genome, "Genome FASTA")->required();
    scan->add_option("--ann", sc_ann, "Annotation TSV")->required();
    scan->add_option("--out", sc_out, "Output directory")->required();
    scan->add_option("--window", sc_window, "Nominal window size around the site")->capture_default_str();
    scan->add_option("--min-run", sc_min_run, "Minimum run length")->capture_default_str();
    scan->add_option("--trials", sc_trials, "Monte Carlo trials")->capture_default_str();

    // ---- selftest ----
    auto* selftest_cmd =
        app.add_subcommand("selftest", "Run the gradient, attention, and metric verification suites");

    for (auto* sub : app.get_subcommands(static_cast<std::function<bool(CLI::App*)>>(nullptr)))
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    Timer timer;
    try {
        if (*prep_ssd) {
            auto genome = load_genome(ps_genome);
            auto anns = load_annotations(ps_ann, genome);
            SsdBuildConfig cfg;
            cfg.window = ps_window;
            cfg.neg_per_pos_window = ps_neg;
            cfg.seed = seed;
            if (!ps_species.empty()) cfg.species = split(ps_species, ',');
            auto ds = build_ssd_dataset(genome, anns, cfg);
            for (const auto& w : ds.manifest.warnings) std::cerr << "warning: " << w << '\n';
            fs::create_directories(ps_out);
            {
                auto out = open_output(fs::path(ps_out) / "ssd.tsv");
                write_ssd_dataset(out, ds.samples);
            }
            {
                auto out = open_output(fs::path(ps_out) / "ssd.manifest.txt");
                write_manifest(out, ds.manifest);
            }
            write_split_files<SsdSample>(ps_out, "ssd", ds.samples, ps_split, seed, &write_ssd_dataset);
            write_run_manifest(ps_out, prep_ssd, timer.seconds());
        } else if (*prep_ssp) {
            auto genome = load_genome(pp_genome);
            auto anns = load_annotations(pp_ann, genome);
            SspBuildConfig cfg;
            cfg.context = pp_context;
            cfg.neg_ratio = pp_ratio;
            cfg.seed = seed;
            if (!pp_species.empty()) cfg.species = split(pp_species, ',');
            auto ds = build_ssp_dataset(genome, anns, cfg);
            fs::create_directories(pp_out);
            {
                auto out = open_output(fs::path(pp_out) / "ssp.tsv");
                write_ssp_dataset(out, ds.samples);
            }
            {
                auto out = open_output(fs::path(pp_out) / "ssp.manifest.txt");
                write_manifest(out, ds.manifest);
            }
            write_split_files<SspSample>(pp_out, "ssp", ds.samples, pp_split, seed, &write_ssp_dataset);
            write_run_manifest(pp_out, prep_ssp, timer.seconds());
        } else if (*train) {
            const Task task = task_from_name(tr_task);
            auto in = open_input(tr_data);
            if (task == Task::ssd) {
                auto samples = read_ssd_dataset(in);
                auto species = tr_species.empty() ? species_of(samples) : split(tr_species, ',');
                ModelT<float> model(tr_model.to_config(task, species, seed));
                auto pools = pool_by(model, std::move(samples), species);
                TrainConfig cfg = tr_flags.to_config(task, seed);
                Trainer<float> trainer(model, cfg);
                run_training_loop(model, trainer, pools, cfg, tr_out);
            } else {
                auto samples = read_ssp_dataset(in);
                auto species = tr_species.empty() ? species_of(samples) : split(tr_species, ',');
                ModelT<float> model(tr_model.to_config(task, species, seed));
                auto pools = pool_by(model, std::move(samples), species);
                TrainConfig cfg = tr_flags.to_config(task, seed);
                Trainer<float> trainer(model, cfg);
                run_training_loop(model, trainer, pools, cfg, tr_out);
            }
            write_run_manifest(tr_out, train, timer.seconds());
        } else if (*finetune) {
            const Task task = task_from_name(ft_task);
            auto ck = load_checkpoint(ft_ckpt);
            if (task == Task::ssd && ck.config.task != Task::ssd)
                throw std::runtime_error("checkpoint is a pairing model; cannot fine-tune for detection");
            ModelT<float> model = task == Task::ssp ? make_ssp_model_from(ck) : model_from_checkpoint(ck);
            TrainConfig cfg = ft_flags.to_config(task, seed);
            cfg.species = {ft_species};
            Trainer<float> trainer(model, cfg);
            auto in = open_input(ft_data);
            if (task == Task::ssd) {
                auto samples = read_ssd_dataset(in);
                std::vector<SsdSample> own;
                for (auto& s : samples)
                    if (s.species == ft_species) own.push_back(std::move(s));
                if (own.empty())
                    throw std::runtime_error("no samples for species '" + ft_species + "' in " + ft_data);
                run_training_loop(model, trainer, std::vector<std::vector<SsdSample>>{own}, cfg, ft_out);
            } else {
                auto samples = read_ssp_dataset(in);
                std::vector<SspSample> own;
                for (auto& s : samples)
                    if (s.species == ft_species) own.push_back(std::move(s));
                if (own.empty())
                    throw std::runtime_error("no samples for species '" + ft_species + "' in " + ft_data);
                run_training_loop(model, trainer, std::vector<std::vector<SspSample>>{own}, cfg, ft_out);
            }
            write_run_manifest(ft_out, finetune, timer.seconds());
        } else if (*eval) {
            const Task task = task_from_name(ev_task);
            auto model = load_model(ev_ckpt);
            auto in = open_input(ev_data);
            std::vector<ReportRow> rows;
            if (task == Task::ssd) {
                auto samples = read_ssd_dataset(in);
                auto [species, pools] = group_by_species(samples);
                for (std::size_t i = 0; i < species.size(); ++i) {
                    auto ev = evaluate_ssd(model, pools[i], ev_threshold);
                    rows.push_back({species[i], "ssd", "precision", ev.prf.precision});
                    rows.push_back({species[i], "ssd", "recall", ev.prf.recall});
                    rows.push_back({species[i], "ssd", "f1", ev.prf.f1});
                    rows.push_back({species[i], "ssd", "top_k_accuracy", ev.top_k});
                    rows.push_back({species[i], "ssd", "aupr", ev.aupr});
                }
                auto overall = evaluate_ssd(model, samples, ev_threshold);
                rows.push_back({"ALL", "ssd", "precision", overall.prf.precision});
                rows.push_back({"ALL", "ssd", "recall", overall.prf.recall});
                rows.push_back({"ALL", "ssd", "f1", overall.prf.f1});
                rows.push_back({"ALL", "ssd", "top_k_accuracy", overall.top_k});
            } else {
                auto samples = read_ssp_dataset(in);
                auto [species, pools] = group_by_species(samples);
                for (std::size_t i = 0; i < species.size(); ++i) {
                    auto ev = evaluate_ssp(model, pools[i], ev_threshold);
                    rows.push_back({species[i], "ssp", "balanced_accuracy", ev.balanced_accuracy});
                    rows.push_back({species[i], "ssp", "precision", ev.precision});
                    rows.push_back({species[i], "ssp", "recall", ev.recall});
                    rows.push_back({species[i], "ssp", "f1", ev.f1});
                }
                auto overall = evaluate_ssp(model, samples, ev_threshold);
                rows.push_back({"ALL", "ssp", "balanced_accuracy", overall.balanced_accuracy});
                rows.push_back({"ALL", "ssp", "precision", overall.precision});
                rows.push_back({"ALL", "ssp", "recall", overall.recall});
                rows.push_back({"ALL", "ssp", "f1", overall.f1});
            }
            fs::create_directories(ev_out);
            auto out = open_output(fs::path(ev_out) / "report.tsv");
            write_report(out, rows,
                         {{"checkpoint", ev_ckpt},
                          {"data", ev_data},
                          {"threshold", std::to_string(ev_threshold)},
                          {"seed", std::to_string(seed)}});
            write_run_manifest(ev_out, eval, timer.seconds());
        } else if (*predict) {
            auto model = load_model(pr_ckpt);
            auto genome = load_genome(pr_genome);
            SlidingConfig cfg;
            cfg.window = pr_window;
            cfg.stride = pr_stride;
            cfg.workers = pr_workers;
            fs::create_directories(pr_out);
            for (const auto& chrom : genome.records) {
                auto track = sliding_window_predict(model, chrom, pr_species, cfg);
                {
                    auto out = open_output(fs::path(pr_out) / ("track_" + chrom.id + ".tsv"));
                    write_track_tsv(out, track);
                }
                if (pr_binary) {
                    std::ofstream out(fs::path(pr_out) / ("track_" + chrom.id + ".cftk"), std::ios::binary);
                    write_track_binary(out, track);
                }
            }
            write_run_manifest(pr_out, predict, timer.seconds());
        } else if (*call) {
            auto ssd_model = load_model(ca_ssd);
            auto ssp_model = load_model(ca_ssp);
            auto genome = load_genome(ca_genome);
            auto calls = call_circrnas(ssd_model, ssp_model, genome, ca_species, ca_cfg);
            fs::create_directories(ca_out);
            auto out = open_output(fs::path(ca_out) / "calls.tsv");
            write_calls_tsv(out, calls);
            std::cout << calls.size() << " circRNA calls written\n";
            write_run_manifest(ca_out, call, timer.seconds());
        } else if (*saliency) {
            auto model = load_model(sa_ckpt);
            auto genome = load_genome(sa_genome);
            auto anns = load_annotations(sa_ann, genome);
            auto sites = collect_sites(anns);
            std::vector<std::vector<float>> maps;
            for (const auto& [key, positions] : sites) {
                if (key.first != sa_species) continue;
                const auto& rec = genome.find(key.second);
                for (std::int64_t pos : positions) {
                    if (sa_limit > 0 && static_cast<int>(maps.size()) >= sa_limit) break;
                    const auto window = extract_window(rec, pos, sa_radius);
                    maps.push_back(saliency_map(model, window, sa_species));
                }
            }
            if (maps.empty()) throw std::runtime_error("no sites found for species '" + sa_species + "'");
            SaliencyProfile profile;
            profile.values = average_saliency(maps);
            profile.center_index = sa_radius;
            profile.species = sa_species;
            profile.n_sequences = static_cast<int>(maps.size());
            fs::create_directories(sa_out);
            auto out = open_output(fs::path(sa_out) / ("saliency_" + sa_species + ".tsv"));
            write_profile_tsv(out, profile);
            write_run_manifest(sa_out, saliency, timer.seconds());
        } else if (*logo) {
            auto model = load_model(lo_ckpt);
            auto genome = load_genome(lo_genome);
            auto anns = load_annotations(lo_ann, genome);
            auto sites = collect_sites(anns);
            std::vector<std::string> windows;
            std::vector<std::vector<float>> maps;
            for (const auto& [key, positions] : sites) {
                if (key.first != lo_species) continue;
                const auto& rec = genome.find(key.second);
                for (std::int64_t pos : positions) {
                    if (lo_limit > 0 && static_cast<int>(maps.size()) >= lo_limit) break;
                    auto window = extract_window(rec, pos, lo_window_radius);
                    maps.push_back(saliency_map(model, window, lo_species));
                    windows.push_back(std::move(window));
                }
            }
            if (maps.empty()) throw std::runtime_error("no sites found for species '" + lo_species + "'");
            auto matrix = saliency_logo<float>(windows, maps, lo_radius);
            fs::create_directories(lo_out);
            {
                auto out = open_output(fs::path(lo_out) / ("logo_" + lo_species + ".tsv"));
                write_logo_tsv(out, matrix);
            }
            if (!lo_svg.empty()) {
                auto out = open_output(fs::path(lo_out) / lo_svg);
                render_logo_svg(out, matrix);
            }
            write_run_manifest(lo_out, logo, timer.seconds());
        } else if (*scan) {
            auto genome = load_genome(sc_genome);
            auto anns = load_annotations(sc_ann, genome);
            auto sites = collect_sites(anns);
            std::int64_t hits = 0, total = 0;
            for (const auto& [key, positions] : sites) {
                const auto& rec = genome.find(key.second);
                for (std::int64_t pos : positions) {
                    ++total;
                    if (polyat_scan(rec.sequence, pos, sc_window, sc_min_run)) ++hits;
                }
            }
            if (total == 0) throw std::runtime_error("no annotated sites to scan");
            const int scanned_bases = sc_window + 1;  // site +- window/2, inclusive of the site
            const double observed = static_cast<double>(hits) / static_cast<double>(total);
            const double mc = polyat_random_baseline(scanned_bases, sc_min_run, sc_trials, seed);
            const double dp = exact_polyat_probability(scanned_bases, sc_min_run);
            const double dp_nominal = exact_polyat_probability(sc_window, sc_min_run);
            fs::create_directories(sc_out);
            auto out = open_output(fs::path(sc_out) / "polyat_report.txt");
            out << "sites_scanned=" << total << '\n';
            out << "window_nominal=" << sc_window << '\n';
            out << "window_scanned_bases=" << scanned_bases
                << "  # site +- window/2, inclusive of the site\n";
            out << "min_run=" << sc_min_run << '\n';
            out << "observed_fraction=" << observed << '\n';
            out << "random_monte_carlo=" << mc << "  # " << sc_trials << " trials, seed " << seed << '\n';
            out << "random_exact_dp=" << dp << '\n';
            out << "random_exact_dp_nominal_window=" << dp_nominal << "  # " << sc_window
                << "-base convention\n";
            out << "enrichment_vs_random=" << (dp > 0 ? observed / dp : 0.0) << '\n';
            std::cout << "observed " << observed << ", random (exact) " << dp << ", random (mc) " << mc
                      << '\n';
            write_run_manifest(sc_out, scan, timer.seconds());
        } else if (*selftest_cmd) {
            auto results = selftest::run_all();
            int failures = 0;
            for (const auto& r : results) {
                std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << " (" << r.detail << ")\n";
                if (!r.pass) ++failures;
            }
            std::cout << (failures == 0 ? "selftest: all checks passed\n"
                                        : "selftest: " + std::to_string(failures) + " check(s) failed\n");
            return failures == 0 ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

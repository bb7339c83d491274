#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "xlsor/augment.hpp"
#include "xlsor/cca.hpp"
#include "xlsor/dataset.hpp"
#include "xlsor/errors.hpp"
#include "xlsor/gradcheck.hpp"
#include "xlsor/metrics.hpp"
#include "xlsor/rng.hpp"
#include "xlsor/segnet.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitCheckFailed = 3;

// ---- run configuration ----------------------------------------------------

struct DataSection {
    int height = 64, width = 64, n_phantoms = 0;
    std::uint64_t seed = 0;
};

struct AugmentSection {
    int n_normal = 0, per_normal = 5, rounds = 1;
    std::uint64_t seed = 0;
};

struct EvalSection {
    double threshold = 0.5;
};

struct RunConfig {
    std::optional<DataSection> data;
    std::optional<AugmentSection> augment;
    std::optional<xlsor::SegmentorConfig> model;
    std::optional<xlsor::TrainConfig> train;
    std::optional<EvalSection> eval;
};

void check_keys(const ordered_json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw xlsor::ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (key == a) {
                known = true;
                break;
            }
        if (!known) throw xlsor::ConfigError("unknown key \"" + key + "\" in " + where);
    }
}

std::uint64_t require_seed(const ordered_json& sec, const std::string& where) {
    if (!sec.contains("seed"))
        throw xlsor::ConfigError(where + ".seed is mandatory (no wall-clock defaults)");
    return sec.at("seed").get<std::uint64_t>();
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw xlsor::ConfigError("cannot open config " + path.string());
    ordered_json doc;
    try {
        doc = ordered_json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw xlsor::ConfigError("malformed JSON in " + path.string() + ": " + e.what());
    }

    RunConfig cfg;
    check_keys(doc, "config", {"data", "augment", "model", "train", "eval"});

    if (doc.contains("data")) {
        const auto& sec = doc.at("data");
        check_keys(sec, "data", {"height", "width", "n_phantoms", "seed"});
        DataSection d;
        d.height = sec.value("height", d.height);
        d.width = sec.value("width", d.width);
        if (!sec.contains("n_phantoms")) throw xlsor::ConfigError("data.n_phantoms is mandatory");
        d.n_phantoms = sec.at("n_phantoms").get<int>();
        d.seed = require_seed(sec, "data");
        if (d.n_phantoms < 1) throw xlsor::ConfigError("data.n_phantoms must be >= 1");
        cfg.data = d;
    }

    if (doc.contains("augment")) {
        const auto& sec = doc.at("augment");
        check_keys(sec, "augment", {"n_normal", "per_normal", "rounds", "seed"});
        AugmentSection a;
        if (!sec.contains("n_normal")) throw xlsor::ConfigError("augment.n_normal is mandatory");
        a.n_normal = sec.at("n_normal").get<int>();
        a.per_normal = sec.value("per_normal", a.per_normal);
        a.rounds = sec.value("rounds", a.rounds);
        a.seed = require_seed(sec, "augment");
        if (a.n_normal < 1 || a.per_normal < 1 || a.rounds < 1)
            throw xlsor::ConfigError("augment counts must be >= 1");
        cfg.augment = a;
    }

    if (doc.contains("model")) {
        const auto& sec = doc.at("model");
        check_keys(sec, "model",
                   {"input_size", "base_channels", "encoder_stride", "cca_passes", "seed"});
        xlsor::SegmentorConfig m;
        if (sec.contains("input_size")) {
            const auto& sz = sec.at("input_size");
            if (!sz.is_array() || sz.size() != 2)
                throw xlsor::ConfigError("model.input_size must be [height, width]");
            m.input_h = sz.at(0).get<int>();
            m.input_w = sz.at(1).get<int>();
        }
        m.base_channels = sec.value("base_channels", m.base_channels);
        m.encoder_stride = sec.value("encoder_stride", m.encoder_stride);
        m.cca_passes = sec.value("cca_passes", m.cca_passes);
        m.seed = require_seed(sec, "model");
        m.validate();
        cfg.model = m;
    }

    if (doc.contains("train")) {
        const auto& sec = doc.at("train");
        check_keys(sec, "train",
                   {"initial_lr", "momentum", "weight_decay", "power", "batch_size", "max_iter",
                    "seed"});
        xlsor::TrainConfig t;
        t.initial_lr = sec.value("initial_lr", t.initial_lr);
        t.momentum = sec.value("momentum", t.momentum);
        t.weight_decay = sec.value("weight_decay", t.weight_decay);
        t.power = sec.value("power", t.power);
        t.batch_size = sec.value("batch_size", t.batch_size);
        if (!sec.contains("max_iter")) throw xlsor::ConfigError("train.max_iter is mandatory");
        t.max_iter = sec.at("max_iter").get<int>();
        t.seed = require_seed(sec, "train");
        t.validate();
        cfg.train = t;
    }

    if (doc.contains("eval")) {
        const auto& sec = doc.at("eval");
        check_keys(sec, "eval", {"threshold"});
        EvalSection e;
        e.threshold = sec.value("threshold", e.threshold);
        if (!(e.threshold > 0.0 && e.threshold < 1.0))
            throw xlsor::ConfigError("eval.threshold must lie in (0, 1)");
        cfg.eval = e;
    }

    return cfg;
}

const DataSection& need_data(const RunConfig& cfg) {
    if (!cfg.data) throw xlsor::ConfigError("config is missing the \"data\" section");
    return *cfg.data;
}

void write_json_file(const fs::path& path, const ordered_json& j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw xlsor::InputError("cannot open " + path.string() + " for writing");
    f << j.dump(2) << "\n";
}

// ---- subcommands ------------------------------------------------------------

int cmd_gen_data(const fs::path& config_path, const fs::path& out_dir) {
    const RunConfig cfg = load_run_config(config_path);
    const DataSection& d = need_data(cfg);
    xlsor::Dataset ds = xlsor::dataset_from_phantoms(d.n_phantoms, d.height, d.width, d.seed);
    xlsor::save_dataset(out_dir, ds);
    int n_train = 0, n_val = 0, n_test = 0;
    for (const auto& p : ds.pairs) {
        if (p.split == "train") ++n_train;
        else if (p.split == "val") ++n_val;
        else ++n_test;
    }
    std::printf("gen-data: %d phantoms (%dx%d) -> %s (train %d / val %d / test %d)\n",
                d.n_phantoms, d.height, d.width, out_dir.string().c_str(), n_train, n_val, n_test);
    return kExitOk;
}

int cmd_augment(const fs::path& config_path, const fs::path& ckpt, const fs::path& data_dir,
                const fs::path& out_dir) {
    const RunConfig cfg = load_run_config(config_path);
    if (!cfg.augment) throw xlsor::ConfigError("config is missing the \"augment\" section");
    const AugmentSection& a = *cfg.augment;

    const xlsor::Dataset source = xlsor::load_dataset(data_dir);
    if (cfg.data && (cfg.data->height != source.height || cfg.data->width != source.width))
        throw xlsor::ConfigError("augment: config data extent differs from --data manifest");

    const xlsor::SegmentorParams params = xlsor::load_segmentor(ckpt);
    const auto pairs = xlsor::build_augmented_series(a.rounds, a.n_normal, a.per_normal, params,
                                                     a.seed, source.height, source.width);
    xlsor::Dataset out = xlsor::dataset_from_augmented(pairs, source.height, source.width, a.seed);
    xlsor::save_dataset(out_dir, out);
    std::printf("augment: %d round(s) x %d normal x (1+%d) -> %zu pairs -> %s\n", a.rounds,
                a.n_normal, a.per_normal, pairs.size(), out_dir.string().c_str());
    return kExitOk;
}

int cmd_train(const fs::path& config_path, const fs::path& data_dir,
              const std::vector<std::string>& aug_dirs, bool aug_only, const fs::path& out_ckpt,
              std::string log_path) {
    const RunConfig cfg = load_run_config(config_path);
    if (!cfg.model) throw xlsor::ConfigError("config is missing the \"model\" section");
    if (!cfg.train) throw xlsor::ConfigError("config is missing the \"train\" section");

    const xlsor::Dataset base = xlsor::load_dataset(data_dir);
    if (cfg.model->input_h != base.height || cfg.model->input_w != base.width)
        throw xlsor::ConfigError("train: model.input_size differs from dataset extent");

    std::vector<xlsor::MaskPair> train_pairs;
    if (!aug_only) train_pairs = base.split_pairs("train");
    for (const auto& dir : aug_dirs) {
        const xlsor::Dataset aug = xlsor::load_dataset(dir);
        if (aug.height != base.height || aug.width != base.width)
            throw xlsor::ConfigError("train: augmented set extent differs from --data extent");
        auto pairs = aug.split_pairs("train");
        train_pairs.insert(train_pairs.end(), std::make_move_iterator(pairs.begin()),
                           std::make_move_iterator(pairs.end()));
    }
    const std::vector<xlsor::MaskPair> val_pairs = base.split_pairs("val");

    const xlsor::TrainResult result = xlsor::train(train_pairs, val_pairs, *cfg.model, *cfg.train);
    xlsor::save_segmentor(out_ckpt, result.params);
    if (log_path.empty()) log_path = out_ckpt.string() + ".log.csv";
    xlsor::write_train_log(log_path, result.log);

    std::printf("train: %zu pairs, %d iters -> %s (best iter %d, val dice %.4f)\n",
                train_pairs.size(), cfg.train->max_iter, out_ckpt.string().c_str(),
                result.best_iter, result.best_val_dice);
    return kExitOk;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data_dir, const fs::path& out_path,
             const std::string& config_path, const std::string& split, double threshold_flag,
             double corrupt_intensity, std::uint64_t corrupt_seed, bool corrupt_seed_given) {
    double threshold = 0.5;
    if (!config_path.empty()) {
        const RunConfig cfg = load_run_config(config_path);
        if (cfg.eval) threshold = cfg.eval->threshold;
    }
    if (threshold_flag > 0.0) threshold = threshold_flag;
    if (!(threshold > 0.0 && threshold < 1.0))
        throw xlsor::ArgumentError("eval: threshold must lie in (0, 1)");
    if (corrupt_intensity < 0.0 || corrupt_intensity > 1.0)
        throw xlsor::ArgumentError("eval: corrupt intensity must lie in [0, 1]");
    if (corrupt_intensity > 0.0 && !corrupt_seed_given)
        throw xlsor::ArgumentError("eval: --corrupt-seed is required with --corrupt-intensity");

    const xlsor::SegmentorParams params = xlsor::load_segmentor(ckpt);
    const xlsor::Dataset ds = xlsor::load_dataset(data_dir);

    std::vector<xlsor::DatasetPair> selected;
    for (const auto& p : ds.pairs)
        if (split == "all" || p.split == split) selected.push_back(p);
    if (selected.empty())
        throw xlsor::InputError("eval: no pairs in split \"" + split + "\" of " + data_dir.string());

    std::vector<xlsor::BinaryMask> preds, gts;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        xlsor::Tensor image = selected[i].image;
        if (corrupt_intensity > 0.0) {
            xlsor::AbnormalityStyle style;
            style.kind = static_cast<xlsor::StyleKind>(i % xlsor::kStyleCount);
            style.intensity = corrupt_intensity;
            style.seed = xlsor::Rng::derive(corrupt_seed, i);
            image = xlsor::apply_style(image, selected[i].mask, style);
        }
        xlsor::Tensor batch({1, 1, ds.height, ds.width}, image.data);
        preds.push_back(xlsor::binarize(xlsor::predict(params, batch), threshold));
        gts.push_back(selected[i].mask);
    }

    const xlsor::MetricReport report = xlsor::evaluate_dataset(preds, gts);
    write_json_file(out_path, xlsor::report_to_json(report));
    std::printf("eval: %zu image(s), split %s -> %s (dice %.4f +- %.4f)\n", selected.size(),
                split.c_str(), out_path.string().c_str(), report.dice.mean, report.dice.stdev);
    return kExitOk;
}

int cmd_bench(const std::string& sizes_csv, const fs::path& out_path, int channels, int repeats) {
    std::vector<int> sizes;
    std::size_t start = 0;
    while (start <= sizes_csv.size()) {
        const std::size_t comma = sizes_csv.find(',', start);
        const std::string item = sizes_csv.substr(
            start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!item.empty()) {
            try {
                sizes.push_back(std::stoi(item));
            } catch (const std::exception&) {
                throw xlsor::ArgumentError("bench: bad size \"" + item + "\"");
            }
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (sizes.empty()) throw xlsor::ArgumentError("bench: --sizes must name at least one size");

    ordered_json doc;
    doc["channels"] = channels;
    doc["reduced_channels"] = xlsor::reduced_channels(channels);
    doc["sizes"] = sizes;
    doc["results"] = ordered_json::array();
    for (int size : sizes) {
        const xlsor::AttentionBench b = xlsor::bench_attention(size, channels, 42, repeats);
        ordered_json j;
        j["h"] = b.h;
        j["w"] = b.w;
        j["crisscross_multiplies"] = b.crisscross_multiplies;
        j["nonlocal_multiplies"] = b.nonlocal_multiplies;
        j["multiply_ratio"] =
            static_cast<double>(b.nonlocal_multiplies) / static_cast<double>(b.crisscross_multiplies);
        j["crisscross_seconds"] = b.crisscross_seconds;
        j["nonlocal_seconds"] = b.nonlocal_seconds;
        j["seconds_ratio"] = b.nonlocal_seconds / b.crisscross_seconds;
        doc["results"].push_back(std::move(j));
        std::printf("bench %dx%d: ops ratio %.2f, time ratio %.2f (cc %.4fs, nl %.4fs)\n", size,
                    size,
                    static_cast<double>(b.nonlocal_multiplies) /
                        static_cast<double>(b.crisscross_multiplies),
                    b.nonlocal_seconds / b.crisscross_seconds, b.crisscross_seconds,
                    b.nonlocal_seconds);
    }
    write_json_file(out_path, doc);
    return kExitOk;
}

int cmd_gradcheck(int trials, std::uint64_t seed) {
    const auto checks = xlsor::run_gradient_suite(trials, seed);
    bool ok = true;
    for (const auto& c : checks) {
        std::printf("%-18s %3d cases  max rel err %.3e  (tol %.0e)  %s\n", c.name.c_str(),
                    c.cases, c.max_err, c.tolerance, c.passed ? "PASS" : "FAIL");
        ok = ok && c.passed;
    }
    if (!ok) {
        std::fprintf(stderr, "gradcheck: FAILED\n");
        return kExitCheckFailed;
    }
    std::printf("gradcheck: all %zu checks passed\n", checks.size());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"xlsor: criss-cross attention lung-field segmentation pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_dir, ckpt_path, log_path;
    std::vector<std::string> aug_dirs;
    bool aug_only = false;

    auto* gen = app.add_subcommand("gen-data", "Generate a phantom dataset with 70/10/20 splits");
    gen->add_option("--config", config_path, "Run configuration JSON")->required();
    gen->add_option("--out", out_path, "Output dataset directory")->required();

    auto* aug = app.add_subcommand("augment", "Construct augmented pairs with propagated masks");
    aug->add_option("--config", config_path, "Run configuration JSON")->required();
    aug->add_option("--checkpoint", ckpt_path, "Initial segmentor checkpoint")->required();
    aug->add_option("--data", data_dir, "Source dataset directory")->required();
    aug->add_option("--out", out_path, "Output dataset directory")->required();

    auto* tr = app.add_subcommand("train", "Train a segmentor");
    tr->add_option("--config", config_path, "Run configuration JSON")->required();
    tr->add_option("--data", data_dir, "Dataset directory (train/val splits)")->required();
    tr->add_option("--aug", aug_dirs, "Augmented dataset directory (repeatable)");
    tr->add_flag("--aug-only", aug_only, "Train on augmented pairs only");
    tr->add_option("--out", out_path, "Output checkpoint path")->required();
    tr->add_option("--log", log_path, "Training log CSV (default: <out>.log.csv)");

    std::string split = "test";
    double threshold_flag = 0.0, corrupt_intensity = 0.0;
    std::uint64_t corrupt_seed = 0;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint with the five-metric protocol");
    ev->add_option("--checkpoint", ckpt_path, "Segmentor checkpoint")->required();
    ev->add_option("--data", data_dir, "Dataset directory")->required();
    ev->add_option("--out", out_path, "Report JSON path")->required();
    ev->add_option("--config", config_path, "Optional config (eval.threshold)");
    ev->add_option("--split", split, "Split to evaluate: train|val|test|all (default test)");
    ev->add_option("--threshold", threshold_flag, "Binarization threshold override");
    ev->add_option("--corrupt-intensity", corrupt_intensity,
                   "Apply abnormality styles round-robin at this intensity");
    auto* cs = ev->add_option("--corrupt-seed", corrupt_seed, "Seed for the corruption draws");

    std::string sizes_csv = "16,32,64";
    int channels = 16, repeats = 2;
    auto* be = app.add_subcommand("bench", "Benchmark criss-cross vs non-local attention");
    be->add_option("--sizes", sizes_csv, "Comma-separated square map sizes");
    be->add_option("--out", out_path, "Benchmark JSON path")->required();
    be->add_option("--channels", channels, "Feature channels (default 16)");
    be->add_option("--repeats", repeats, "Timing repeats, best taken (default 2)");

    int trials = 20;
    std::uint64_t gc_seed = 1234;
    auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
    gc->add_option("--trials", trials, "Random cases per check (default 20)");
    gc->add_option("--seed", gc_seed, "Suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_path);
        if (aug->parsed()) return cmd_augment(config_path, ckpt_path, data_dir, out_path);
        if (tr->parsed())
            return cmd_train(config_path, data_dir, aug_dirs, aug_only, out_path, log_path);
        if (ev->parsed())
            return cmd_eval(ckpt_path, data_dir, out_path, config_path, split, threshold_flag,
                            corrupt_intensity, corrupt_seed, cs->count() > 0);
        if (be->parsed()) return cmd_bench(sizes_csv, out_path, channels, repeats);
        if (gc->parsed()) return cmd_gradcheck(trials, gc_seed);
    } catch (const xlsor::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInvalid;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInvalid;
    }
    return kExitUsage;
}

// Command-line surface: dataset synthesis/ingestion, self-distillation
// training, feature extraction, evaluation, and invariance checking.
#include <omp.h>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "ript/checkpoint.hpp"
#include "ript/evalmetrics.hpp"
#include "ript/runconfig.hpp"
#include "ript/sdmm.hpp"
#include "ript/synth.hpp"

namespace fs = std::filesystem;
using namespace ript;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void apply_workers(int workers) {
    if (workers <= 0) {
        if (const char* env = std::getenv("RIPT_WORKERS")) workers = std::atoi(env);
    }
    if (workers > 0) {
        omp_set_num_threads(workers);
        Eigen::setNbThreads(workers);
    }
}

struct LabeledDataset {
    std::vector<OrientedPointSet> samples;
    std::vector<std::string> label_names;  // sorted unique
};

// Uniform resampling to exactly n points (subsample without replacement or
// duplicate), matching the trainer's sample-size contract.
OrientedPointSet resample_to(const OrientedPointSet& ps, int n, std::mt19937_64& rng) {
    if (ps.size() == n) return ps;
    OrientedPointSet out;
    out.label = ps.label;
    out.points.reserve(n);
    out.orientations.reserve(n);
    if (ps.size() > n) {
        std::vector<int> pool(ps.size());
        for (int i = 0; i < ps.size(); ++i) pool[i] = i;
        for (int i = 0; i < n; ++i) {
            int j = std::uniform_int_distribution<int>(i, ps.size() - 1)(rng);
            std::swap(pool[i], pool[j]);
            out.points.push_back(ps.points[pool[i]]);
            out.orientations.push_back(ps.orientations[pool[i]]);
        }
    } else {
        out.points = ps.points;
        out.orientations = ps.orientations;
        std::uniform_int_distribution<int> pick(0, ps.size() - 1);
        while (out.size() < n) {
            int i = pick(rng);
            out.points.push_back(ps.points[i]);
            out.orientations.push_back(ps.orientations[i]);
        }
    }
    return out;
}

LabeledDataset load_dataset(const std::string& manifest_path, int n_points, uint64_t seed) {
    const auto entries = load_manifest(manifest_path);
    std::set<std::string> names;
    for (const auto& e : entries) names.insert(e.label);
    LabeledDataset ds;
    ds.label_names.assign(names.begin(), names.end());
    std::map<std::string, int> ids;
    for (size_t i = 0; i < ds.label_names.size(); ++i) ids[ds.label_names[i]] = static_cast<int>(i);

    ds.samples.resize(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        const bool off = fs::path(e.path).extension() == ".off";
        auto rng = make_rng(derive_seed(seed, {0x10AD, i}));
        OrientedPointSet ps =
            off ? load_point_set(e.path, PointSetFormat::OffMesh, n_points, derive_seed(seed, {i}))
                : load_point_set(e.path, PointSetFormat::XyznText);
        validate_point_set(ps);
        ps = resample_to(normalize_pose(ps), n_points, rng);
        ps.label = ids[e.label];
        ds.samples[i] = std::move(ps);
    }
    return ds;
}

// Model-shape metadata stored next to the weights so extraction can rebuild
// the encoder from the archive alone.
void append_config_meta(std::vector<std::pair<std::string, const ad::Tensor<double>*>>& entries,
                        std::vector<std::unique_ptr<ad::Tensor<double>>>& scratch,
                        const RunConfig& cfg) {
    auto add = [&](const std::string& name, double v) {
        scratch.push_back(std::make_unique<ad::Tensor<double>>(ad::Tensor<double>::full({1, 1}, v)));
        entries.emplace_back(name, scratch.back().get());
    };
    add("cfg/token_count", cfg.tokenizer.token_count);
    add("cfg/grid", cfg.tokenizer.grid);
    add("cfg/feature_width", cfg.tokenizer.feature_width);
    add("cfg/region_scale", cfg.tokenizer.region_scale);
    add("cfg/centered_orientation_moment", cfg.tokenizer.centered_orientation_moment ? 1 : 0);
    add("cfg/num_blocks", cfg.transformer.num_blocks);
    for (int i = 0; i < cfg.transformer.num_blocks; ++i) {
        add("cfg/k" + std::to_string(i), cfg.transformer.neighbor_counts[i]);
    }
    add("cfg/latent_width", cfg.transformer.latent_width);
    add("cfg/projector_hidden0", cfg.transformer.projector_hidden[0]);
    add("cfg/projector_hidden1", cfg.transformer.projector_hidden[1]);
    add("cfg/pseudo_label_dim", cfg.transformer.pseudo_label_dim);
    add("cfg/positional_encoding", cfg.transformer.positional_encoding ? 1 : 0);
    add("cfg/sample_points", cfg.trainer.sample_points);
}

std::pair<TokenizerConfig, TransformerConfig> configs_from_archive(
    const std::map<std::string, ad::Tensor<double>>& archive, const std::string& path) {
    auto scalar = [&](const std::string& name) {
        auto it = archive.find(name);
        if (it == archive.end()) throw FormatError(path + ": missing config entry " + name);
        return it->second.values.at(0);
    };
    TokenizerConfig tok;
    tok.token_count = static_cast<int>(scalar("cfg/token_count"));
    tok.grid = static_cast<int>(scalar("cfg/grid"));
    tok.feature_width = static_cast<int>(scalar("cfg/feature_width"));
    tok.region_scale = scalar("cfg/region_scale");
    tok.centered_orientation_moment = scalar("cfg/centered_orientation_moment") != 0.0;
    TransformerConfig tr;
    tr.num_blocks = static_cast<int>(scalar("cfg/num_blocks"));
    tr.neighbor_counts.clear();
    for (int i = 0; i < tr.num_blocks; ++i) {
        tr.neighbor_counts.push_back(static_cast<int>(scalar("cfg/k" + std::to_string(i))));
    }
    tr.width = tok.feature_width;
    tr.latent_width = static_cast<int>(scalar("cfg/latent_width"));
    tr.projector_hidden = {static_cast<int>(scalar("cfg/projector_hidden0")),
                           static_cast<int>(scalar("cfg/projector_hidden1"))};
    tr.pseudo_label_dim = static_cast<int>(scalar("cfg/pseudo_label_dim"));
    tr.positional_encoding = scalar("cfg/positional_encoding") != 0.0;
    tok.validate();
    tr.validate(tok);
    return {tok, tr};
}

int stored_sample_points(const std::map<std::string, ad::Tensor<double>>& archive) {
    auto it = archive.find("cfg/sample_points");
    return it == archive.end() ? 0 : static_cast<int>(it->second.values.at(0));
}

RiptModel<double> model_from_archive(const std::string& path, const std::string& which) {
    auto archive = load_checkpoint(path);
    auto [tok, tr] = configs_from_archive(archive, path);
    RiptModel<double> model = init_model<double>(tok, tr, 0);
    model.visit_all([&](const std::string& n, ad::Tensor<double>& t) {
        auto it = archive.find(which + "/" + n);
        if (it == archive.end()) throw FormatError(path + ": missing tensor " + which + "/" + n);
        if (it->second.values.size() != t.values.size()) {
            throw FormatError(path + ": shape mismatch for " + which + "/" + n);
        }
        t.values = it->second.values;
        t.requires_grad = false;
    });
    return model;
}

void save_training_checkpoint(const std::string& path, sdmm::DistillState& state,
                              const RunConfig& cfg) {
    // The distill state plus config metadata in one archive.
    sdmm::save_distill_state(path + ".tmp", state);
    auto archive = load_checkpoint(path + ".tmp");
    std::vector<std::pair<std::string, const ad::Tensor<double>*>> entries;
    for (const auto& [name, tensor] : archive) entries.emplace_back(name, &tensor);
    std::vector<std::unique_ptr<ad::Tensor<double>>> scratch;
    append_config_meta(entries, scratch, cfg);
    save_checkpoint(path, entries);
    fs::remove(path + ".tmp");
}

// ---- subcommands ---------------------------------------------------------------

int cmd_synth(const std::string& classes_arg, int per_class, int n_points, uint64_t seed,
              const std::string& out_dir) {
    std::vector<std::string> classes;
    std::stringstream ss(classes_arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) classes.push_back(item);
    }
    if (classes.empty()) throw ArgumentError("no classes given");
    const std::string manifest = synth::write_dataset(classes, per_class, n_points, seed, out_dir);
    std::cout << "wrote " << classes.size() * per_class << " samples, manifest " << manifest
              << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume) {
    const RunConfig cfg = parse_run_config(config_path);
    if (cfg.dataset_manifest.empty()) throw ConfigError("dataset_manifest is required");
    apply_workers(cfg.workers);

    LabeledDataset ds =
        load_dataset(cfg.dataset_manifest, cfg.trainer.sample_points, cfg.trainer.seed);
    if (static_cast<int>(ds.samples.size()) < cfg.trainer.batch_size) {
        throw DataError("dataset has fewer samples than one minibatch");
    }
    const int64_t steps_per_epoch =
        static_cast<int64_t>(ds.samples.size()) / cfg.trainer.batch_size;

    sdmm::DistillState state =
        resume.empty() ? sdmm::init_distill(cfg.tokenizer, cfg.transformer, cfg.trainer, steps_per_epoch)
                       : sdmm::load_distill_state(resume, cfg.tokenizer, cfg.transformer);
    if (!resume.empty() &&
        state.total_steps != static_cast<int64_t>(cfg.trainer.epochs) * steps_per_epoch) {
        throw ConfigError("resume checkpoint does not match the configured schedule");
    }

    fs::create_directories(cfg.checkpoint_dir);
    const fs::path metrics_path = fs::path(cfg.checkpoint_dir) / "metrics.csv";
    std::ofstream metrics(metrics_path, state.epochs_done > 0 ? std::ios::app : std::ios::trunc);
    if (!metrics) throw DataError("cannot write " + metrics_path.string());
    if (state.epochs_done == 0) metrics << "epoch,loss,teacher_entropy,lr,lambda\n";

    for (int epoch = state.epochs_done; epoch < cfg.trainer.epochs; ++epoch) {
        sdmm::EpochMetrics m;
        try {
            m = sdmm::train_epoch(ds.samples, state, cfg.trainer, epoch);
        } catch (const NumericError& e) {
            const std::string snapshot =
                (fs::path(cfg.checkpoint_dir) / "diagnostic_snapshot.ckpt").string();
            save_training_checkpoint(snapshot, state, cfg);
            std::cerr << "error: " << e.what() << "\nsnapshot: " << snapshot << "\n";
            return kExitNumeric;
        }
        char line[256];
        std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g\n", epoch, m.loss,
                      m.teacher_entropy, m.lr, m.lambda);
        metrics << line;
        metrics.flush();
        std::cout << "epoch " << epoch << " loss " << m.loss << " teacher_entropy "
                  << m.teacher_entropy << "\n";
        if ((epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.trainer.epochs) {
            char name[64];
            std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch + 1);
            save_training_checkpoint((fs::path(cfg.checkpoint_dir) / name).string(), state, cfg);
        }
    }
    const std::string final_path = (fs::path(cfg.checkpoint_dir) / "final.ckpt").string();
    save_training_checkpoint(final_path, state, cfg);
    std::cout << "final checkpoint: " << final_path << "\n";
    return 0;
}

int cmd_extract(const std::string& checkpoint, const std::string& manifest,
                const std::string& rotation, const std::string& out, uint64_t seed,
                const std::string& which, int workers, const std::string& tokens_out) {
    apply_workers(workers);
    if (rotation != "nr" && rotation != "rr") {
        throw ConfigError("rotation must be nr or rr");
    }
    auto archive = load_checkpoint(checkpoint);
    auto [tok, tr] = configs_from_archive(archive, checkpoint);
    RiptModel<double> model = model_from_archive(checkpoint, which);
    const int n_points = std::max(stored_sample_points(archive), tok.token_count);

    LabeledDataset ds = load_dataset(manifest, n_points, derive_seed(seed, {0xDA7A}));
    eval::FeatureTable table = eval::rotation_harness(
        ds.samples, ds.label_names, model,
        rotation == "rr" ? eval::RotationSetting::RrRr : eval::RotationSetting::NrNr, seed);

    std::vector<Eigen::VectorXd> rows;
    rows.reserve(table.size());
    for (int i = 0; i < table.size(); ++i) rows.push_back(table.feats.row(i).transpose());
    save_features(out, rows);
    std::cout << "wrote " << rows.size() << " features of width " << tr.latent_width << " to "
              << out << "\n";

    if (!tokens_out.empty()) {
        std::ofstream tf(tokens_out, std::ios::binary);
        if (!tf) throw DataError("cannot write " + tokens_out);
        for (size_t i = 0; i < ds.samples.size(); ++i) {
            auto rng = make_rng(derive_seed(seed, {0x70C5, i}));
            OrientedPointSet ps = normalize_pose(ds.samples[i]);
            if (rotation == "rr") ps = apply_rotation(ps, random_rotation(rng));
            append_token_set(tf, tokenize(ps, tok, model.tokenizer, rng));
        }
        std::cout << "wrote " << ds.samples.size() << " token sets to " << tokens_out << "\n";
    }
    return 0;
}

eval::FeatureTable table_from_files(const std::string& features, const std::string& manifest,
                                    const std::string& split) {
    const auto rows = load_features(features);
    const auto entries = load_manifest(manifest);
    if (rows.size() != entries.size()) {
        throw DataError("label mismatch: " + features + " has " + std::to_string(rows.size()) +
                        " rows but " + manifest + " lists " + std::to_string(entries.size()));
    }
    std::set<std::string> names;
    for (const auto& e : entries) names.insert(e.label);
    eval::FeatureTable t;
    t.split = split;
    t.label_names.assign(names.begin(), names.end());
    std::map<std::string, int> ids;
    for (size_t i = 0; i < t.label_names.size(); ++i) ids[t.label_names[i]] = static_cast<int>(i);
    t.feats.resize(static_cast<int>(rows.size()), rows.empty() ? 0 : rows[0].size());
    t.labels.resize(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        t.feats.row(static_cast<int>(i)) = rows[i].transpose();
        t.labels[i] = ids[entries[i].label];
    }
    t.validate();
    return t;
}

int cmd_eval(const std::string& task, const std::string& features, const std::string& manifest,
             const std::string& train_features, const std::string& train_manifest,
             const std::string& out_csv, int restarts, uint64_t seed) {
    std::vector<std::pair<std::string, double>> metrics;
    if (task == "retrieval") {
        auto table = table_from_files(features, manifest, "test");
        metrics.emplace_back("macro_map", eval::macro_map(table).percent);
    } else if (task == "probe") {
        if (train_features.empty() || train_manifest.empty()) {
            throw ConfigError("probe needs --train-features and --train-manifest");
        }
        auto train = table_from_files(train_features, train_manifest, "train");
        auto test = table_from_files(features, manifest, "test");
        if (train.label_names != test.label_names) {
            throw DataError("label mismatch between train and test feature files");
        }
        metrics.emplace_back("linear_probe_macro_accuracy", eval::linear_probe(train, test, seed));
    } else if (task == "cluster") {
        auto table = table_from_files(features, manifest, "test");
        const int k = static_cast<int>(table.label_names.size());
        metrics.emplace_back("kmeans_nmi", eval::kmeans_nmi(table, k, restarts, seed));
    } else {
        throw ConfigError("task must be retrieval, probe, or cluster");
    }

    std::ostringstream csv;
    csv << "task,metric,value\n";
    for (const auto& [name, value] : metrics) {
        char line[128];
        std::snprintf(line, sizeof line, "%s,%s,%.17g\n", task.c_str(), name.c_str(), value);
        csv << line;
        std::cout << name << " = " << value << "\n";
    }
    if (!out_csv.empty()) {
        std::ofstream out(out_csv);
        if (!out) throw DataError("cannot write " + out_csv);
        out << csv.str();
    }
    return 0;
}

int cmd_check_invariance(const std::string& checkpoint, const std::string& config_path,
                         const std::string& manifest, int trials, double threshold,
                         const std::string& precision, uint64_t seed, int workers) {
    apply_workers(workers);
    if (trials < 1) throw ArgumentError("trials must be >= 1");
    if (precision != "f32" && precision != "f64") throw ConfigError("precision must be f32 or f64");

    RiptModel<double> model;
    int n_points = 0;
    if (!checkpoint.empty()) {
        auto archive = load_checkpoint(checkpoint);
        model = model_from_archive(checkpoint, "teacher");
        n_points = stored_sample_points(archive);
    } else {
        if (config_path.empty()) {
            throw ConfigError("need --checkpoint or --random-init with --config");
        }
        const RunConfig cfg = parse_run_config(config_path);
        model = init_model<double>(cfg.tokenizer, cfg.transformer, derive_seed(seed, {0x1417}));
        n_points = cfg.trainer.sample_points;
    }
    n_points = std::max(n_points, model.tok.token_count);
    if (threshold <= 0.0) threshold = precision == "f32" ? 1.0 - 1e-3 : 1.0 - 1e-6;

    LabeledDataset ds = load_dataset(manifest, n_points, derive_seed(seed, {0xDA7A}));
    RiptModel<float> model32 = model.cast<float>();

    double min_cos = 1.0, mean_cos = 0.0;
    int64_t count = 0;
#pragma omp parallel for schedule(dynamic)
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        auto rng = make_rng(derive_seed(seed, {0x10CB, i}));
        const OrientedPointSet& ps = ds.samples[i];
        Eigen::VectorXd base;
        {
            std::mt19937_64 fwd = make_rng(derive_seed(seed, {0xF0, i}));
            base = precision == "f32" ? ript_forward_f32(ps, model32, fwd)
                                      : ript_forward(ps, model, false, fwd);
        }
        double local_min = 1.0, local_sum = 0.0;
        for (int t = 0; t < trials; ++t) {
            const OrientedPointSet rotated = apply_rotation(ps, random_rotation(rng));
            std::mt19937_64 fwd = make_rng(derive_seed(seed, {0xF0, i}));
            const Eigen::VectorXd lat = precision == "f32"
                                            ? ript_forward_f32(rotated, model32, fwd)
                                            : ript_forward(rotated, model, false, fwd);
            const double c = base.dot(lat);
            local_min = std::min(local_min, c);
            local_sum += c;
        }
#pragma omp critical
        {
            min_cos = std::min(min_cos, local_min);
            mean_cos += local_sum;
            count += trials;
        }
    }
    mean_cos /= static_cast<double>(count);

    std::cout << "samples " << ds.samples.size() << " trials " << trials << " precision "
              << precision << "\n";
    std::cout << "min_cosine " << min_cos << "\nmean_cosine " << mean_cos << "\nthreshold "
              << threshold << "\n";
    if (min_cos < threshold) {
        std::cerr << "invariance check FAILED: min cosine " << min_cos << " < threshold "
                  << threshold << "\n";
        return kExitNumeric;
    }
    std::cout << "invariance check passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rotation-invariant point-set feature learning"};
    app.require_subcommand(1);

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    std::string classes = "sphere,box,cylinder,cone";
    int per_class = 50, n_points = 256;
    uint64_t synth_seed = 1;
    std::string out_dir;
    synth_cmd->add_option("--classes", classes, "comma-separated class list");
    synth_cmd->add_option("--per-class", per_class, "samples per class");
    synth_cmd->add_option("--points", n_points, "points per sample");
    synth_cmd->add_option("--seed", synth_seed, "rng seed");
    synth_cmd->add_option("--out", out_dir, "output directory")->required();

    auto* train_cmd = app.add_subcommand("train", "run self-distillation training");
    std::string config_path, resume;
    train_cmd->add_option("--config", config_path, "run config file")->required();
    train_cmd->add_option("--resume", resume, "checkpoint to resume from");

    auto* extract_cmd = app.add_subcommand("extract", "extract latent features");
    std::string ckpt, manifest, rotation = "nr", out_features, which_model = "teacher";
    std::string tokens_out;
    uint64_t seed = 1;
    int workers = 0;
    extract_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
    extract_cmd->add_option("--manifest", manifest, "dataset manifest")->required();
    extract_cmd->add_option("--rotation", rotation, "nr or rr");
    extract_cmd->add_option("--out", out_features, "output feature file")->required();
    extract_cmd->add_option("--seed", seed, "rng seed");
    extract_cmd->add_option("--model", which_model, "teacher or student");
    extract_cmd->add_option("--workers", workers, "worker cap (0 = default)");
    extract_cmd->add_option("--tokens", tokens_out, "also dump per-sample token sets");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate extracted features");
    std::string task, eval_features, eval_manifest, train_features, train_manifest, out_csv;
    int restarts = 10;
    uint64_t eval_seed = 1;
    eval_cmd->add_option("--task", task, "retrieval | probe | cluster")->required();
    eval_cmd->add_option("--features", eval_features, "feature file")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "matching manifest")->required();
    eval_cmd->add_option("--train-features", train_features, "train features (probe)");
    eval_cmd->add_option("--train-manifest", train_manifest, "train manifest (probe)");
    eval_cmd->add_option("--out", out_csv, "metrics CSV path");
    eval_cmd->add_option("--restarts", restarts, "k-means restarts");
    eval_cmd->add_option("--seed", eval_seed, "rng seed");

    auto* check_cmd = app.add_subcommand("check-invariance", "verify rotation invariance");
    std::string check_ckpt, check_config, check_manifest, precision = "f32";
    int trials = 16;
    double threshold = 0.0;
    bool random_init = false;
    uint64_t check_seed = 1;
    int check_workers = 0;
    check_cmd->add_option("--checkpoint", check_ckpt, "trained checkpoint");
    check_cmd->add_flag("--random-init", random_init, "use a randomly initialized model");
    check_cmd->add_option("--config", check_config, "config for --random-init");
    check_cmd->add_option("--manifest", check_manifest, "dataset manifest")->required();
    check_cmd->add_option("--trials", trials, "rotations per sample");
    check_cmd->add_option("--threshold", threshold, "min cosine gate (0 = per-precision default)");
    check_cmd->add_option("--precision", precision, "f32 or f64");
    check_cmd->add_option("--seed", check_seed, "rng seed");
    check_cmd->add_option("--workers", check_workers, "worker cap (0 = default)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth_cmd) return cmd_synth(classes, per_class, n_points, synth_seed, out_dir);
        if (*train_cmd) return cmd_train(config_path, resume);
        if (*extract_cmd) {
            return cmd_extract(ckpt, manifest, rotation, out_features, seed, which_model, workers,
                               tokens_out);
        }
        if (*eval_cmd) {
            return cmd_eval(task, eval_features, eval_manifest, train_features, train_manifest,
                            out_csv, restarts, eval_seed);
        }
        if (*check_cmd) {
            if (!random_init && check_ckpt.empty()) {
                throw ConfigError("need --checkpoint or --random-init");
            }
            return cmd_check_invariance(random_init ? "" : check_ckpt, check_config,
                                        check_manifest, trials, threshold, precision, check_seed,
                                        check_workers);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ArgumentError& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {  // data, format, geometry
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}

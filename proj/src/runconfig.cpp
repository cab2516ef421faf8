#include "ript/runconfig.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace ript {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key \"" + key + "\": expected integer, got \"" + v + "\"");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key \"" + key + "\": expected number, got \"" + v + "\"");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key \"" + key + "\": expected boolean, got \"" + v + "\"");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(to_int(key, item));
    }
    if (out.empty()) throw ConfigError("config key \"" + key + "\": expected integer list");
    return out;
}

}  // namespace

void RunConfig::validate() const {
    tokenizer.validate();
    transformer.validate(tokenizer);
    trainer.validate();
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    if (workers < 0) throw ConfigError("workers must be >= 0");
    if (trainer.sample_points < tokenizer.token_count) {
        throw ConfigError("sample_points must be >= token_count");
    }
    // Local views halve the point count; they must still carry enough points
    // to tokenize.
    if (trainer.use_local_views && trainer.sample_points / 2 < tokenizer.token_count) {
        throw ConfigError("sample_points/2 must be >= token_count when local views are enabled");
    }
}

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": expected \"key = value\"");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key or value");
        }
        if (kv.count(key)) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key \"" + key +
                              "\"");
        }
        kv[key] = value;
    }

    RunConfig cfg;
    auto take = [&](const std::string& key) -> std::string {
        auto it = kv.find(key);
        if (it == kv.end()) return "";
        std::string v = it->second;
        kv.erase(it);
        return v;
    };

    if (auto v = take("dataset_manifest"); !v.empty()) cfg.dataset_manifest = v;
    if (auto v = take("checkpoint_dir"); !v.empty()) cfg.checkpoint_dir = v;
    if (auto v = take("checkpoint_every"); !v.empty()) cfg.checkpoint_every = to_int("checkpoint_every", v);
    if (auto v = take("workers"); !v.empty()) cfg.workers = to_int("workers", v);

    if (auto v = take("token_count"); !v.empty()) cfg.tokenizer.token_count = to_int("token_count", v);
    if (auto v = take("grid"); !v.empty()) cfg.tokenizer.grid = to_int("grid", v);
    if (auto v = take("feature_width"); !v.empty()) {
        cfg.tokenizer.feature_width = to_int("feature_width", v);
    }
    if (auto v = take("region_scale"); !v.empty()) {
        cfg.tokenizer.region_scale = to_double("region_scale", v);
    }
    if (auto v = take("centered_orientation_moment"); !v.empty()) {
        cfg.tokenizer.centered_orientation_moment = to_bool("centered_orientation_moment", v);
    }

    if (auto v = take("block_ks"); !v.empty()) {
        cfg.transformer.neighbor_counts = to_int_list("block_ks", v);
        cfg.transformer.num_blocks = static_cast<int>(cfg.transformer.neighbor_counts.size());
    }
    if (auto v = take("latent_width"); !v.empty()) {
        cfg.transformer.latent_width = to_int("latent_width", v);
    }
    if (auto v = take("projector_hidden"); !v.empty()) {
        cfg.transformer.projector_hidden = to_int_list("projector_hidden", v);
    }
    if (auto v = take("pseudo_label_dim"); !v.empty()) {
        cfg.transformer.pseudo_label_dim = to_int("pseudo_label_dim", v);
    }
    if (auto v = take("attention"); !v.empty()) {
        if (v == "vector") cfg.transformer.attention = AttentionKind::Vector;
        else if (v == "scalar") cfg.transformer.attention = AttentionKind::Scalar;
        else if (v == "none") cfg.transformer.attention = AttentionKind::None;
        else throw ConfigError("config key \"attention\": expected vector|scalar|none");
    }
    if (auto v = take("positional_encoding"); !v.empty()) {
        cfg.transformer.positional_encoding = to_bool("positional_encoding", v);
    }

    if (auto v = take("batch_size"); !v.empty()) cfg.trainer.batch_size = to_int("batch_size", v);
    if (auto v = take("tau_s"); !v.empty()) cfg.trainer.tau_s = to_double("tau_s", v);
    if (auto v = take("tau_t"); !v.empty()) cfg.trainer.tau_t = to_double("tau_t", v);
    if (auto v = take("center_momentum"); !v.empty()) {
        cfg.trainer.center_momentum = to_double("center_momentum", v);
    }
    if (auto v = take("center_on_probs"); !v.empty()) {
        cfg.trainer.center_on_probs = to_bool("center_on_probs", v);
    }
    if (auto v = take("lambda_base"); !v.empty()) cfg.trainer.lambda_base = to_double("lambda_base", v);
    if (auto v = take("epochs"); !v.empty()) cfg.trainer.epochs = to_int("epochs", v);
    if (auto v = take("warmup_epochs"); !v.empty()) {
        cfg.trainer.warmup_epochs = to_int("warmup_epochs", v);
    }
    if (auto v = take("lr_init"); !v.empty()) cfg.trainer.lr_init = to_double("lr_init", v);
    if (auto v = take("lr_peak"); !v.empty()) cfg.trainer.lr_peak = to_double("lr_peak", v);
    if (auto v = take("lr_final"); !v.empty()) cfg.trainer.lr_final = to_double("lr_final", v);
    if (auto v = take("sample_points"); !v.empty()) {
        cfg.trainer.sample_points = to_int("sample_points", v);
    }
    if (auto v = take("use_local_views"); !v.empty()) {
        cfg.trainer.use_local_views = to_bool("use_local_views", v);
    }
    if (auto v = take("use_mixed_view"); !v.empty()) {
        cfg.trainer.use_mixed_view = to_bool("use_mixed_view", v);
    }
    if (auto v = take("train_rotation"); !v.empty()) {
        cfg.trainer.train_rotation = to_bool("train_rotation", v);
    }
    if (auto v = take("seed"); !v.empty()) {
        cfg.trainer.seed = static_cast<uint64_t>(std::stoull(v));
    }

    if (!kv.empty()) {
        throw ConfigError(origin + ": unknown config key \"" + kv.begin()->first + "\"");
    }
    cfg.transformer.width = cfg.tokenizer.feature_width;
    cfg.validate();
    return cfg;
}

RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config_text(buf.str(), path);
}

}  // namespace ript

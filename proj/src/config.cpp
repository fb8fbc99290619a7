#include "claire/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace claire {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

/// Strip a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_str = !in_str;
        if (line[i] == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

double parse_number(const std::string& key, const std::string& raw) {
    try {
        std::size_t used = 0;
        const double v = std::stod(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw config_error("config: value of '" + key + "' is not a number: " + raw);
    }
}

}  // namespace

ConfigFile ConfigFile::parse_string(const std::string& text) {
    ConfigFile cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw config_error("config: malformed section header at line " +
                                   std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw config_error("config: empty section name at line " + std::to_string(lineno));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config: expected 'key = value' at line " + std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw config_error("config: empty key or value at line " + std::to_string(lineno));
        if (section.empty())
            throw config_error("config: key '" + key + "' outside any [section] at line " +
                               std::to_string(lineno));
        const std::string full = section + "." + key;
        if (cfg.values_.count(full))
            throw config_error("config: duplicate key '" + full + "' at line " +
                               std::to_string(lineno));
        cfg.values_[full] = value;
    }
    return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw config_error("config: cannot open " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_string(buf.str());
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::string v = it->second;
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    return v;
}

double ConfigFile::get_number(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_number(key, it->second);
}

long long ConfigFile::get_int(const std::string& key, long long fallback) const {
    const double v = get_number(key, static_cast<double>(fallback));
    const auto r = static_cast<long long>(v);
    if (static_cast<double>(r) != v)
        throw config_error("config: value of '" + key + "' must be an integer");
    return r;
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw config_error("config: value of '" + key + "' must be true or false");
}

std::vector<double> ConfigFile::get_array(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return {};
    const std::string& raw = it->second;
    if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']')
        throw config_error("config: value of '" + key + "' must be an [array]");
    std::vector<double> out;
    std::string item;
    std::istringstream is(raw.substr(1, raw.size() - 2));
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_number(key, item));
    }
    return out;
}

namespace {

void reject_unknown(const ConfigFile& cfg, const std::string& section,
                    const std::set<std::string>& known) {
    for (const auto& [key, value] : cfg.raw()) {
        const std::size_t dot = key.find('.');
        if (dot == std::string::npos || key.substr(0, dot) != section) continue;
        if (!known.count(key.substr(dot + 1)))
            throw config_error("config: unknown key '" + key + "'");
    }
}

}  // namespace

TrainConfig train_config_from(const ConfigFile& cfg) {
    reject_unknown(cfg, "model",
                   {"stage_channels", "se_reduction", "dropout", "num_classes",
                    "optical_channels", "sar_channels"});
    reject_unknown(cfg, "loss",
                   {"family", "alpha", "beta", "gamma", "eps", "class_weights",
                    "allow_gamma_above_one"});
    reject_unknown(cfg, "train",
                   {"epochs", "batch_size", "lr", "weight_decay", "plateau_factor",
                    "plateau_patience", "seed", "checkpoint_dir", "verbose"});

    TrainConfig tc;
    const auto stages = cfg.get_array("model.stage_channels");
    if (!stages.empty()) {
        tc.model.encoder.stage_channels.clear();
        for (double v : stages) {
            if (v < 1 || v != std::floor(v))
                throw config_error("config: model.stage_channels must be positive integers");
            tc.model.encoder.stage_channels.push_back(static_cast<std::size_t>(v));
        }
    }
    tc.model.encoder.se_reduction = static_cast<std::size_t>(
        cfg.get_int("model.se_reduction", static_cast<long long>(tc.model.encoder.se_reduction)));
    tc.model.encoder.dropout_rate = cfg.get_number("model.dropout", tc.model.encoder.dropout_rate);
    tc.model.num_classes = static_cast<std::size_t>(
        cfg.get_int("model.num_classes", static_cast<long long>(tc.model.num_classes)));
    tc.model.optical_channels = static_cast<std::size_t>(cfg.get_int(
        "model.optical_channels", static_cast<long long>(tc.model.optical_channels)));
    tc.model.sar_channels = static_cast<std::size_t>(
        cfg.get_int("model.sar_channels", static_cast<long long>(tc.model.sar_channels)));

    tc.loss.family = loss_family_from_string(cfg.get_string("loss.family", to_string(tc.loss.family)));
    tc.loss.alpha = cfg.get_number("loss.alpha", tc.loss.alpha);
    tc.loss.beta = cfg.get_number("loss.beta", tc.loss.beta);
    tc.loss.gamma = cfg.get_number("loss.gamma", tc.loss.gamma);
    tc.loss.eps = cfg.get_number("loss.eps", tc.loss.eps);
    tc.loss.class_weights = cfg.get_array("loss.class_weights");
    tc.loss.allow_gamma_above_one =
        cfg.get_bool("loss.allow_gamma_above_one", tc.loss.allow_gamma_above_one);

    tc.epochs = static_cast<int>(cfg.get_int("train.epochs", tc.epochs));
    tc.batch_size = static_cast<int>(cfg.get_int("train.batch_size", tc.batch_size));
    tc.lr = cfg.get_number("train.lr", tc.lr);
    tc.weight_decay = cfg.get_number("train.weight_decay", tc.weight_decay);
    tc.plateau_factor = cfg.get_number("train.plateau_factor", tc.plateau_factor);
    tc.plateau_patience = static_cast<int>(cfg.get_int("train.plateau_patience", tc.plateau_patience));
    tc.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 0));
    tc.checkpoint_dir = cfg.get_string("train.checkpoint_dir", tc.checkpoint_dir);
    tc.verbose = cfg.get_bool("train.verbose", tc.verbose);
    tc.validate();
    return tc;
}

SynthSpec synth_spec_from(const ConfigFile& cfg) {
    reject_unknown(cfg, "synth",
                   {"num_classes", "patches", "patch_size", "class_proportions", "cloud_fraction",
                    "speckle_level", "seed"});
    SynthSpec sp;
    sp.num_classes = static_cast<int>(cfg.get_int("synth.num_classes", sp.num_classes));
    sp.patches = static_cast<int>(cfg.get_int("synth.patches", sp.patches));
    sp.patch_size = static_cast<int>(cfg.get_int("synth.patch_size", sp.patch_size));
    sp.class_proportions = cfg.get_array("synth.class_proportions");
    sp.cloud_fraction = cfg.get_number("synth.cloud_fraction", sp.cloud_fraction);
    sp.speckle_level = cfg.get_number("synth.speckle_level", sp.speckle_level);
    sp.seed = static_cast<std::uint64_t>(cfg.get_int("synth.seed", 0));
    sp.validate();
    return sp;
}

}  // namespace claire

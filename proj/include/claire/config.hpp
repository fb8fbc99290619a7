#pragma once

#include <map>
#include <string>
#include <vector>

#include "claire/synth.hpp"
#include "claire/train.hpp"

namespace claire {

/// TOML-style key-value config: [section] headers, `key = value` lines,
/// `#` comments. Values: numbers, booleans, "strings", [arrays].
class ConfigFile {
public:
    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_number(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_array(const std::string& key) const;  // empty when absent

    const std::map<std::string, std::string>& raw() const { return values_; }

private:
    std::map<std::string, std::string> values_;  // "section.key" -> raw value text
};

/// Build configs from the [model]/[loss]/[train]/[synth] sections; unknown keys
/// are rejected so typos fail loudly.
TrainConfig train_config_from(const ConfigFile& cfg);
SynthSpec synth_spec_from(const ConfigFile& cfg);

}  // namespace claire

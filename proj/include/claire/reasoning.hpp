#pragma once

#include <string>
#include <vector>

#include "claire/metrics.hpp"

namespace claire {

/// Structured prompt built from a MetricsReport: persona header, metric block
/// (fixed order, 4-decimal formatting), contextual notes.
struct ReasoningPrompt {
    std::string text;
    std::vector<std::string> fields_included;
    std::vector<std::string> class_names;  // carried through for the templater
    std::string sample_id;
};

struct Explanation {
    std::string text;
    enum class Source { Template, External } source = Source::Template;
    std::string sample_id;
};

struct EndpointConfig {
    std::string url;                            // e.g. http://host:port/v1/chat/completions
    std::string model = "default";
    std::string api_key_env = "CLAIRE_API_KEY"; // key read from this environment variable
    double timeout_seconds = 10.0;
    int max_in_flight = 2;

    void validate() const;
};

ReasoningPrompt build_prompt(const MetricsReport& report, const std::vector<std::string>& class_names,
                             const std::string& sample_id);

/// Deterministic rule-based explanation; never fails on a valid report.
Explanation explain_template(const ReasoningPrompt& prompt, const MetricsReport& report);

/// Chat-completion-style HTTP request (single retry). Any failure degrades to
/// the template output with a warning on stderr; never throws past a valid
/// endpoint config.
Explanation explain_external(const ReasoningPrompt& prompt, const MetricsReport& report,
                             const EndpointConfig& endpoint);

}  // namespace claire

#include "claire/reasoning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace claire {

namespace {

std::string fmt4(double v) {
    if (std::isnan(v)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string fmt_vec(const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt4(v[i]);
    return s + "]";
}

std::string class_label(const std::vector<std::string>& names, std::size_t c) {
    return c < names.size() ? names[c] : "class " + std::to_string(c);
}

/// Index of the max/min IoU among defined entries; -1 when none are defined.
int arg_extreme(const std::vector<double>& v, bool want_max) {
    int best = -1;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (std::isnan(v[i])) continue;
        if (best < 0 || (want_max ? v[i] > v[static_cast<std::size_t>(best)]
                                  : v[i] < v[static_cast<std::size_t>(best)]))
            best = static_cast<int>(i);
    }
    return best;
}

}  // namespace

ReasoningPrompt build_prompt(const MetricsReport& report,
                             const std::vector<std::string>& class_names,
                             const std::string& sample_id) {
    ReasoningPrompt p;
    p.sample_id = sample_id;
    p.class_names = class_names;

    std::string& t = p.text;
    t += "You are a satellite imagery domain expert analyzing a land-cover "
         "segmentation result produced by an optical+SAR fusion model.\n";
    t += "Sample: " + sample_id + "\n";
    t += "Classes: ";
    for (std::size_t i = 0; i < class_names.size(); ++i) t += (i ? ", " : "") + class_names[i];
    t += "\nExplain the result concisely using the metrics below.\n\n";

    t += "== Metrics ==\n";
    auto field = [&](const std::string& name, const std::string& value) {
        t += name + ": " + value + "\n";
        p.fields_included.push_back(name);
    };
    field("per_class_iou", fmt_vec(report.per_class_iou));
    field("per_class_dice", fmt_vec(report.per_class_dice));
    field("miou", fmt4(report.miou));
    field("mean_dice", fmt4(report.mean_dice));
    field("oa", fmt4(report.oa));
    field("kappa", fmt4(report.kappa));
    field("per_class_coverage_pred", fmt_vec(report.per_class_coverage_pred));
    field("per_class_coverage_gt", fmt_vec(report.per_class_coverage_gt));
    field("per_class_signed_error", fmt_vec(report.per_class_signed_error));
    field("detection_rate", fmt_vec(report.detection_rate));
    field("prediction_precision", fmt_vec(report.prediction_precision));
    field("systematic_bias", fmt4(report.systematic_bias));
    if (report.rgb_dominance) field("rgb_dominance", fmt4(*report.rgb_dominance));
    if (report.sar_dominance) field("sar_dominance", fmt4(*report.sar_dominance));
    if (report.complementarity) field("complementarity", fmt4(*report.complementarity));
    if (report.fusion_quality) field("fusion_quality", fmt4(*report.fusion_quality));
    if (report.cloud_fraction) field("cloud_fraction", fmt4(*report.cloud_fraction));

    std::vector<std::string> notes;
    for (std::size_t c = 0; c < report.detection_rate.size(); ++c)
        if (!std::isnan(report.detection_rate[c]) && report.detection_rate[c] < 0.5)
            notes.push_back("low detection rate for " + class_label(class_names, c) + " (" +
                            fmt4(report.detection_rate[c]) + ")");
    for (std::size_t c = 0; c < report.per_class_signed_error.size(); ++c)
        if (std::abs(report.per_class_signed_error[c]) > 5.0)
            notes.push_back("coverage of " + class_label(class_names, c) +
                            (report.per_class_signed_error[c] > 0 ? " over" : " under") +
                            "-predicted by " + fmt4(std::abs(report.per_class_signed_error[c])) +
                            " percentage points");
    if (report.rgb_dominance && *report.rgb_dominance > 0.65)
        notes.push_back("prediction predominantly driven by optical features");
    if (report.sar_dominance && *report.sar_dominance > 0.65)
        notes.push_back("prediction predominantly driven by SAR features");

    if (!notes.empty()) {
        t += "\n== Contextual notes ==\n";
        for (const auto& n : notes) t += "- " + n + "\n";
    }
    return p;
}

Explanation explain_template(const ReasoningPrompt& prompt, const MetricsReport& report) {
    Explanation e;
    e.sample_id = prompt.sample_id;
    e.source = Explanation::Source::Template;
    std::string& t = e.text;

    const int best = arg_extreme(report.per_class_iou, true);
    const int worst = arg_extreme(report.per_class_iou, false);
    if (best >= 0 && worst >= 0 && best != worst) {
        t += "The model segmented " + class_label(prompt.class_names, best) +
             " most reliably (IoU " + fmt4(report.per_class_iou[best]) + ") and struggled most with " +
             class_label(prompt.class_names, worst) + " (IoU " +
             fmt4(report.per_class_iou[worst]) + "). ";
    } else if (best >= 0) {
        t += "Per-class quality was uniform; " + class_label(prompt.class_names, best) +
             " reached IoU " + fmt4(report.per_class_iou[best]) + ". ";
    }
    if (report.oa >= 0.999 && report.miou >= 0.999)
        t += "All classes were segmented correctly. ";

    const bool cloudy = report.cloud_fraction && *report.cloud_fraction >= 0.3;
    if (report.sar_dominance && *report.sar_dominance > 0.65) {
        if (cloudy)
            t += "The segmentation favored SAR features because optical data was obscured by "
                 "cloud cover. ";
        else
            t += "The gating masks leaned on SAR features over the optical branch. ";
    } else if (report.rgb_dominance && *report.rgb_dominance > 0.65) {
        t += "The gating masks leaned on optical features over the SAR branch. ";
    } else if (report.rgb_dominance && report.sar_dominance) {
        t += "Optical and SAR features contributed in balance (optical share " +
             fmt4(*report.rgb_dominance) + "). ";
    } else {
        t += "No fusion gating was recorded, so the optical/SAR balance is unknown. ";
    }

    if (report.complementarity) {
        if (*report.complementarity > 0.6)
            t += "High gate complementarity (" + fmt4(*report.complementarity) +
                 ") indicates the modalities were used jointly rather than one replacing the "
                 "other. ";
        else
            t += "Low gate complementarity (" + fmt4(*report.complementarity) +
                 ") indicates one modality dominated per pixel. ";
    }

    if (report.systematic_bias > 5.0)
        t += "Coverage shows a systematic bias of " + fmt4(report.systematic_bias) +
             " percentage points against the ground truth. ";
    else
        t += "Predicted class coverage tracks the ground truth closely (max deviation " +
             fmt4(report.systematic_bias) + " points). ";

    if (report.fusion_quality)
        t += "Fusing both modalities changed overall accuracy by " + fmt4(*report.fusion_quality) +
             " relative to the best single modality.";
    return e;
}

void EndpointConfig::validate() const {
    if (url.empty()) throw config_error("explain: endpoint url must be set");
    if (url.rfind("http://", 0) != 0 && url.rfind("https://", 0) != 0)
        throw config_error("explain: endpoint url must start with http:// or https://");
    if (timeout_seconds <= 0) throw config_error("explain: timeout must be > 0");
    if (max_in_flight < 1) throw config_error("explain: max_in_flight must be >= 1");
}

Explanation explain_external(const ReasoningPrompt& prompt, const MetricsReport& report,
                             const EndpointConfig& endpoint) {
    endpoint.validate();

    // split the url into origin + path for the client
    const std::size_t scheme_end = endpoint.url.find("://") + 3;
    const std::size_t path_pos = endpoint.url.find('/', scheme_end);
    const std::string origin =
        path_pos == std::string::npos ? endpoint.url : endpoint.url.substr(0, path_pos);
    const std::string path = path_pos == std::string::npos ? "/" : endpoint.url.substr(path_pos);

    nlohmann::json body = {
        {"model", endpoint.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt.text}}})},
    };

    httplib::Client client(origin);
    const auto secs = static_cast<time_t>(endpoint.timeout_seconds);
    const auto usecs =
        static_cast<time_t>((endpoint.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    httplib::Headers headers;
    if (const char* key = std::getenv(endpoint.api_key_env.c_str()))
        headers.emplace("Authorization", std::string("Bearer ") + key);

    for (int attempt = 0; attempt < 2; ++attempt) {
        auto resp = client.Post(path, headers, body.dump(), "application/json");
        if (!resp || resp->status != 200) continue;  // one retry
        Explanation e;
        e.sample_id = prompt.sample_id;
        e.source = Explanation::Source::External;
        e.text = resp->body;
        // unwrap a chat-completion payload when the body is one
        try {
            auto j = nlohmann::json::parse(resp->body);
            if (j.contains("choices"))
                e.text = j["choices"].at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            // plain text body: pass through verbatim
        }
        if (!e.text.empty()) return e;
    }
    std::fprintf(stderr, "warning: external explanation endpoint %s unavailable; "
                         "falling back to template output\n",
                 endpoint.url.c_str());
    return explain_template(prompt, report);
}

}  // namespace claire

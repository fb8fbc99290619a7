#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "claire/checkpoint.hpp"
#include "claire/config.hpp"
#include "claire/gradcheck.hpp"
#include "claire/image.hpp"
#include "claire/npy.hpp"
#include "claire/reasoning.hpp"
#include "claire/synth.hpp"
#include "claire/train.hpp"

namespace fs = std::filesystem;
using claire::config_error;
using nlohmann::json;

namespace {

std::optional<std::uint64_t> env_seed() {
    if (const char* s = std::getenv("CLAIRE_SEED")) return std::stoull(s);
    return std::nullopt;
}

std::string apply_out_override(const std::string& out) {
    if (const char* d = std::getenv("CLAIRE_OUT_DIR")) return d;
    return out;
}

claire::ConfigFile load_config(const std::string& path) {
    return path.empty() ? claire::ConfigFile{} : claire::ConfigFile::parse_file(path);
}

void write_json(const std::string& path, const json& j) {
    std::ofstream os(path);
    if (!os) throw claire::invalid_input_error("cannot write " + path);
    os << j.dump(2) << "\n";
}

json read_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw claire::invalid_input_error("cannot open " + path);
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw config_error(path + ": " + e.what());
    }
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int cmd_synth(const std::string& config_path, std::string out_dir, int patches_override,
              double cloud_override, long long seed_override) {
    claire::SynthSpec spec = claire::synth_spec_from(load_config(config_path));
    if (patches_override > 0) spec.patches = patches_override;
    if (cloud_override >= 0) spec.cloud_fraction = cloud_override;
    if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
    if (auto s = env_seed()) spec.seed = *s;
    out_dir = apply_out_override(out_dir);

    claire::SynthDataset ds = claire::generate_synthetic(spec);
    fs::create_directories(out_dir);
    claire::save_samples(out_dir + "/train.samples", ds.train, spec.num_classes);
    claire::save_samples(out_dir + "/val.samples", ds.val, spec.num_classes);
    claire::save_samples(out_dir + "/test.samples", ds.test, spec.num_classes);

    json meta = {
        {"num_classes", spec.num_classes},
        {"patch_size", spec.patch_size},
        {"cloud_fraction", spec.cloud_fraction},
        {"speckle_level", spec.speckle_level},
        {"seed", spec.seed},
        {"class_proportions", spec.resolved_proportions()},
        {"splits",
         {{"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()}}},
        {"train_class_frequencies", claire::class_frequencies(ds.train, spec.num_classes)},
    };
    write_json(out_dir + "/dataset.json", meta);
    std::printf("wrote %zu/%zu/%zu samples to %s\n", ds.train.size(), ds.val.size(),
                ds.test.size(), out_dir.c_str());
    return 0;
}

int cmd_preprocess(const std::string& manifest_path, std::size_t patch_size,
                   std::string out_dir) {
    out_dir = apply_out_override(out_dir);
    json manifest = read_json(manifest_path);
    const json records = manifest.is_array() ? manifest : manifest.at("records");
    fs::create_directories(out_dir);

    json index = json::array();
    std::size_t sample_no = 0;
    for (const auto& rec : records) {
        claire::RawScene scene;
        scene.optical = claire::read_npy(rec.at("optical_path").get<std::string>());
        claire::Tensor sar = claire::read_npy(rec.at("sar_path").get<std::string>());
        if (sar.rank() == 2) sar = claire::Tensor::from_data({1, sar.dim(0), sar.dim(1)}, sar.vec());
        scene.sar = sar;
        scene.label = claire::read_npy_labels(rec.at("label_path").get<std::string>());
        const int num_classes = rec.at("num_classes").get<int>();
        const std::string mode_str = rec.value("mode", "auto");
        claire::VegIndexMode mode = claire::VegIndexMode::Auto;
        if (mode_str == "ndvi") mode = claire::VegIndexMode::NDVI;
        else if (mode_str == "vari") mode = claire::VegIndexMode::VARI;
        else if (mode_str != "auto") throw config_error("preprocess: unknown mode " + mode_str);

        claire::ExtractResult res = claire::extract_samples(scene, patch_size, num_classes, mode);
        for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
        json files = json::array();
        for (const auto& s : res.samples) {
            const std::string f = "sample_" + std::to_string(sample_no++) + ".bin";
            claire::save_samples(out_dir + "/" + f, {s}, num_classes);
            files.push_back(f);
        }
        index.push_back({{"optical_path", rec.at("optical_path")},
                         {"num_classes", num_classes},
                         {"samples", files},
                         {"warnings", res.warnings}});
    }
    write_json(out_dir + "/index.json", index);
    std::printf("wrote %zu samples to %s\n", sample_no, out_dir.c_str());
    return 0;
}

json log_to_json(const claire::TrainingLog& log) {
    json epochs = json::array();
    for (const auto& e : log.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss},
                          {"val_mean_dice", e.val_mean_dice},
                          {"lr", e.lr}});
    return {{"epochs", epochs},
            {"best_val_dice", log.best_val_dice},
            {"best_epoch", log.best_epoch},
            {"steps", log.steps},
            {"best_checkpoint", log.best_checkpoint_path}};
}

int cmd_train(const std::string& config_path, const std::string& data_dir, std::string out_dir) {
    out_dir = apply_out_override(out_dir);
    claire::TrainConfig cfg = claire::train_config_from(load_config(config_path));
    if (auto s = env_seed()) cfg.seed = *s;
    if (cfg.checkpoint_dir.empty()) cfg.checkpoint_dir = out_dir;

    int nc_train = 0, nc_val = 0;
    auto train_set = claire::load_samples(data_dir + "/train.samples", &nc_train);
    auto val_set = claire::load_samples(data_dir + "/val.samples", &nc_val);
    if (nc_train != static_cast<int>(cfg.model.num_classes))
        throw config_error("train: dataset has " + std::to_string(nc_train) +
                           " classes but model.num_classes is " +
                           std::to_string(cfg.model.num_classes));

    claire::Rng rng(cfg.seed);
    claire::SegmentationModel model(cfg.model, rng);
    claire::TrainingLog log = claire::train(model, train_set, val_set, cfg);

    fs::create_directories(out_dir);
    write_json(out_dir + "/training_log.json", log_to_json(log));
    std::printf("best val dice %.4f at epoch %d (%lld steps)\n", log.best_val_dice,
                log.best_epoch, log.steps);
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& split,
             std::string report_path, const std::string& gates_dir, bool per_modality) {
    claire::CheckpointMeta meta = claire::peek_checkpoint(ckpt_path);
    claire::Rng rng(0);
    claire::SegmentationModel model(meta.config, rng);
    claire::load_checkpoint(ckpt_path, model);

    auto samples = claire::load_samples(data_dir + "/" + split + ".samples");

    claire::EvalOptions opts;
    opts.per_modality = per_modality;
    const std::string ds_meta = data_dir + "/dataset.json";
    if (fs::exists(ds_meta)) {
        json m = read_json(ds_meta);
        if (m.contains("cloud_fraction")) opts.cloud_fraction = m["cloud_fraction"].get<double>();
    }
    claire::EvalResult res = claire::evaluate(model, samples, opts);

    if (!report_path.empty()) write_json(report_path, res.report.to_json());
    if (!gates_dir.empty()) {
        fs::create_directories(gates_dir);
        claire::write_png_gray(gates_dir + "/gate_optical.png", res.mean_g1);
        claire::write_png_gray(gates_dir + "/gate_sar.png", res.mean_g2);
    }
    std::printf("oa %.4f  miou %.4f  mean_dice %.4f  kappa %.4f\n", res.report.oa,
                res.report.miou, res.report.mean_dice, res.report.kappa);
    return 0;
}

int cmd_gradcheck(const std::string& component, std::uint64_t seed) {
    std::vector<std::string> comps;
    if (component == "all") comps = {"losses", "cmaf", "network"};
    else comps = {component};
    bool ok = true;
    for (const auto& c : comps) {
        const double tol = (c == "losses") ? 1e-4 : 1e-3;
        claire::GradCheckResult r = claire::grad_check(c, seed);
        const bool pass = r.max_rel_err < tol;
        ok = ok && pass;
        std::printf("%-8s max rel err %.3e over %zu probes (worst %s): %s\n", c.c_str(),
                    r.max_rel_err, r.checked, r.worst.c_str(), pass ? "ok" : "FAIL");
    }
    if (!ok) throw claire::numerical_error("gradient check failed");
    return 0;
}

int cmd_explain(const std::string& report_path, const std::string& mode,
                const std::string& endpoint_url, const std::string& model_name,
                const std::string& classes_csv, const std::string& sample_id,
                const std::string& out_path) {
    claire::MetricsReport report = claire::MetricsReport::from_json(read_json(report_path));
    std::vector<std::string> class_names = split_csv(classes_csv);
    if (class_names.empty())
        for (std::size_t c = 0; c < report.per_class_iou.size(); ++c)
            class_names.push_back("class " + std::to_string(c));

    claire::ReasoningPrompt prompt = claire::build_prompt(report, class_names, sample_id);
    claire::Explanation expl;
    if (mode == "template") {
        expl = claire::explain_template(prompt, report);
    } else if (mode == "external") {
        claire::EndpointConfig ep;
        ep.url = endpoint_url;
        if (!model_name.empty()) ep.model = model_name;
        expl = claire::explain_external(prompt, report, ep);
    } else {
        throw config_error("explain: mode must be template or external");
    }

    json line = {{"sample_id", expl.sample_id},
                 {"source", expl.source == claire::Explanation::Source::External ? "external"
                                                                                : "template"},
                 {"text", expl.text}};
    if (!out_path.empty()) {
        std::ofstream os(out_path, std::ios::app);
        if (!os) throw claire::invalid_input_error("cannot write " + out_path);
        os << line.dump() << "\n";
    }
    std::printf("%s\n", expl.text.c_str());
    return 0;
}

int cmd_plot(const std::string& report_path, const std::string& out_path) {
    claire::MetricsReport report = claire::MetricsReport::from_json(read_json(report_path));
    claire::write_bar_plot(out_path, report.per_class_iou);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CLAIRE: multimodal land-cover segmentation toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", manifest, data_dir, ckpt, split = "test";
    std::string report_path, gates_dir, component = "all", mode = "template", endpoint, model_name;
    std::string classes_csv, sample_id = "sample-0", jsonl_out, plot_out = "iou.png";
    int patches_override = -1;
    double cloud_override = -1.0;
    long long seed_override = -1;
    std::size_t patch_size = 256;
    std::uint64_t gc_seed = 0;
    bool per_modality = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", config_path, "config file");
    synth->add_option("--out", out_dir, "output directory");
    synth->add_option("--patches", patches_override, "override patch count");
    synth->add_option("--cloud-fraction", cloud_override, "override cloud fraction");
    synth->add_option("--seed", seed_override, "override seed");

    auto* prep = app.add_subcommand("preprocess", "tile raw scenes into samples");
    prep->add_option("--manifest", manifest, "dataset manifest JSON")->required();
    prep->add_option("--patch-size", patch_size, "patch side length");
    prep->add_option("--out", out_dir, "output directory");

    auto* tr = app.add_subcommand("train", "train a model");
    tr->add_option("--config", config_path, "config file");
    tr->add_option("--data", data_dir, "dataset directory (synth output)")->required();
    tr->add_option("--out", out_dir, "output directory");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--split", split, "train|val|test");
    ev->add_option("--report", report_path, "write MetricsReport JSON here");
    ev->add_option("--dump-gates", gates_dir, "write gate heatmap PNGs here");
    ev->add_flag("--per-modality", per_modality, "also evaluate single-modality accuracy");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_option("--component", component, "losses|cmaf|network|all");
    gc->add_option("--seed", gc_seed, "seed");

    auto* ex = app.add_subcommand("explain", "metric-driven explanation");
    ex->add_option("--report", report_path, "MetricsReport JSON")->required();
    ex->add_option("--mode", mode, "template|external");
    ex->add_option("--endpoint", endpoint, "chat-completion endpoint URL");
    ex->add_option("--model", model_name, "model name for the request body");
    ex->add_option("--classes", classes_csv, "comma-separated class names");
    ex->add_option("--sample-id", sample_id, "identifier for the report");
    ex->add_option("--out", jsonl_out, "append explanation JSONL here");

    auto* pl = app.add_subcommand("plot", "render per-class IoU bars as PNG");
    pl->add_option("--report", report_path, "MetricsReport JSON")->required();
    pl->add_option("--out", plot_out, "output PNG path");

    try {
        app.parse(argc, argv);
        if (synth->parsed())
            return cmd_synth(config_path, out_dir, patches_override, cloud_override,
                             seed_override);
        if (prep->parsed()) return cmd_preprocess(manifest, patch_size, out_dir);
        if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir);
        if (ev->parsed())
            return cmd_eval(ckpt, data_dir, split, report_path, gates_dir, per_modality);
        if (gc->parsed()) return cmd_gradcheck(component, gc_seed);
        if (ex->parsed())
            return cmd_explain(report_path, mode, endpoint, model_name, classes_csv, sample_id,
                               jsonl_out);
        if (pl->parsed()) return cmd_plot(report_path, plot_out);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const claire::config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const claire::invalid_input_error& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 2;
    } catch (const claire::numerical_error& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

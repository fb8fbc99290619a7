#include "claire/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace claire {

namespace {

constexpr char kModelMagic[8] = {'C', 'L', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr char kSampleMagic[8] = {'C', 'L', 'R', 'S', 'M', 'P', 'L', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

void write_doubles(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::istream& is, std::vector<double>& v) {
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::ifstream open_in(const std::string& path, const char magic[8]) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw invalid_input_error("cannot open " + path);
    char buf[8];
    is.read(buf, 8);
    if (!is || std::memcmp(buf, magic, 8) != 0)
        throw invalid_input_error(path + ": unrecognized file format");
    return is;
}

nlohmann::json read_header(std::istream& is, const std::string& path) {
    const std::uint64_t len = read_u64(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw invalid_input_error(path + ": truncated header");
    return nlohmann::json::parse(text);
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return {
        {"stage_channels", cfg.encoder.stage_channels},
        {"se_reduction", cfg.encoder.se_reduction},
        {"dropout_rate", cfg.encoder.dropout_rate},
        {"num_classes", cfg.num_classes},
        {"optical_channels", cfg.optical_channels},
        {"sar_channels", cfg.sar_channels},
    };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.encoder.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
    cfg.encoder.se_reduction = j.at("se_reduction").get<std::size_t>();
    cfg.encoder.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.num_classes = j.at("num_classes").get<std::size_t>();
    cfg.optical_channels = j.at("optical_channels").get<std::size_t>();
    cfg.sar_channels = j.at("sar_channels").get<std::size_t>();
    return cfg;
}

void save_checkpoint(const std::string& path, SegmentationModel& model,
                     const CheckpointMeta& meta) {
    std::vector<NamedTensor> state;
    model.collect_state("model", state);

    nlohmann::json header;
    header["config"] = model_config_to_json(meta.config);
    header["epoch"] = meta.epoch;
    header["best_val_dice"] = meta.best_val_dice;
    nlohmann::json dir = nlohmann::json::array();
    for (const auto& nt : state)
        dir.push_back({{"name", nt.name}, {"shape", nt.tensor->shape()}});
    header["tensors"] = dir;

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw invalid_input_error("cannot write " + path);
    os.write(kModelMagic, 8);
    const std::string text = header.dump();
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& nt : state) write_doubles(os, nt.tensor->vec());
    if (!os) throw invalid_input_error("write failed for " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, SegmentationModel& model) {
    std::ifstream is = open_in(path, kModelMagic);
    const nlohmann::json header = read_header(is, path);

    CheckpointMeta meta;
    meta.config = model_config_from_json(header.at("config"));
    meta.epoch = header.at("epoch").get<int>();
    meta.best_val_dice = header.at("best_val_dice").get<double>();

    std::vector<NamedTensor> state;
    model.collect_state("model", state);
    const auto& dir = header.at("tensors");
    if (dir.size() != state.size())
        throw invalid_input_error(path + ": tensor count mismatch (checkpoint " +
                                  std::to_string(dir.size()) + ", model " +
                                  std::to_string(state.size()) + ")");
    for (std::size_t i = 0; i < state.size(); ++i) {
        const auto& entry = dir[i];
        if (entry.at("name").get<std::string>() != state[i].name)
            throw invalid_input_error(path + ": tensor name mismatch at index " +
                                      std::to_string(i) + " (" +
                                      entry.at("name").get<std::string>() + " vs " +
                                      state[i].name + ")");
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape != state[i].tensor->shape())
            throw invalid_input_error(path + ": shape mismatch for " + state[i].name);
        read_doubles(is, state[i].tensor->vec());
    }
    if (!is) throw invalid_input_error(path + ": truncated tensor data");
    return meta;
}

CheckpointMeta peek_checkpoint(const std::string& path) {
    std::ifstream is = open_in(path, kModelMagic);
    const nlohmann::json header = read_header(is, path);
    CheckpointMeta meta;
    meta.config = model_config_from_json(header.at("config"));
    meta.epoch = header.at("epoch").get<int>();
    meta.best_val_dice = header.at("best_val_dice").get<double>();
    return meta;
}

void save_samples(const std::string& path, const std::vector<Sample>& samples, int num_classes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw invalid_input_error("cannot write " + path);
    os.write(kSampleMagic, 8);
    nlohmann::json header;
    header["num_classes"] = num_classes;
    header["count"] = samples.size();
    if (!samples.empty()) {
        header["patch_size"] = samples.front().label.height();
        header["optical_channels"] = samples.front().optical.dim(0);
        header["sar_channels"] = samples.front().sar.dim(0);
    }
    const std::string text = header.dump();
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& s : samples) {
        write_doubles(os, s.optical.vec());
        write_doubles(os, s.sar.vec());
        std::vector<std::int32_t> lab(s.label.vec().begin(), s.label.vec().end());
        os.write(reinterpret_cast<const char*>(lab.data()),
                 static_cast<std::streamsize>(lab.size() * sizeof(std::int32_t)));
    }
    if (!os) throw invalid_input_error("write failed for " + path);
}

std::vector<Sample> load_samples(const std::string& path, int* num_classes) {
    std::ifstream is = open_in(path, kSampleMagic);
    const nlohmann::json header = read_header(is, path);
    if (num_classes) *num_classes = header.at("num_classes").get<int>();
    const std::size_t count = header.at("count").get<std::size_t>();
    std::vector<Sample> samples;
    if (count == 0) return samples;
    const std::size_t p = header.at("patch_size").get<std::size_t>();
    const std::size_t oc = header.at("optical_channels").get<std::size_t>();
    const std::size_t sc = header.at("sar_channels").get<std::size_t>();
    samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Sample s;
        s.optical = Tensor({oc, p, p}, 0.0);
        s.sar = Tensor({sc, p, p}, 0.0);
        read_doubles(is, s.optical.vec());
        read_doubles(is, s.sar.vec());
        std::vector<std::int32_t> lab(p * p);
        is.read(reinterpret_cast<char*>(lab.data()),
                static_cast<std::streamsize>(lab.size() * sizeof(std::int32_t)));
        s.label = LabelMap(p, p);
        std::copy(lab.begin(), lab.end(), s.label.vec().begin());
        samples.push_back(std::move(s));
    }
    if (!is) throw invalid_input_error(path + ": truncated sample data");
    return samples;
}

}  // namespace claire

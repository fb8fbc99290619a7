#include "claire/npy.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace claire {

namespace {

const char kMagic[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

std::string header_field(const std::string& header, const std::string& key) {
    const std::size_t kpos = header.find("'" + key + "'");
    if (kpos == std::string::npos) throw invalid_input_error("npy: missing header key " + key);
    std::size_t pos = header.find(':', kpos);
    if (pos == std::string::npos) throw invalid_input_error("npy: malformed header");
    ++pos;
    while (pos < header.size() && header[pos] == ' ') ++pos;
    std::size_t end;
    if (header[pos] == '\'') {
        end = header.find('\'', pos + 1);
        return header.substr(pos + 1, end - pos - 1);
    }
    if (header[pos] == '(') {
        end = header.find(')', pos);
        return header.substr(pos, end - pos + 1);
    }
    end = header.find_first_of(",}", pos);
    return header.substr(pos, end - pos);
}

template <typename T>
void convert(const std::vector<char>& raw, std::vector<double>& out) {
    const T* src = reinterpret_cast<const T*>(raw.data());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(src[i]);
}

}  // namespace

Tensor read_npy(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw invalid_input_error("cannot open " + path);
    char magic[6];
    is.read(magic, 6);
    if (!is || std::memcmp(magic, kMagic, 6) != 0)
        throw invalid_input_error(path + ": not an NPY file");
    char version[2];
    is.read(version, 2);
    std::uint32_t header_len = 0;
    if (version[0] == 1) {
        std::uint16_t len16 = 0;
        is.read(reinterpret_cast<char*>(&len16), 2);
        header_len = len16;
    } else {
        is.read(reinterpret_cast<char*>(&header_len), 4);
    }
    std::string header(header_len, '\0');
    is.read(header.data(), header_len);
    if (!is) throw invalid_input_error(path + ": truncated NPY header");

    if (header_field(header, "fortran_order") != "False")
        throw invalid_input_error(path + ": Fortran-order NPY arrays are not supported");
    const std::string descr = header_field(header, "descr");
    const std::string shape_str = header_field(header, "shape");

    std::vector<std::size_t> shape;
    std::size_t pos = 1;
    while (pos < shape_str.size()) {
        while (pos < shape_str.size() && !std::isdigit(shape_str[pos])) ++pos;
        if (pos >= shape_str.size()) break;
        std::size_t end = pos;
        while (end < shape_str.size() && std::isdigit(shape_str[end])) ++end;
        shape.push_back(std::stoul(shape_str.substr(pos, end - pos)));
        pos = end;
    }
    if (shape.size() != 2 && shape.size() != 3)
        throw invalid_input_error(path + ": expected a rank-2 or rank-3 array, got rank " +
                                  std::to_string(shape.size()));

    std::size_t count = 1;
    for (auto d : shape) count *= d;
    std::size_t item = 0;
    if (descr == "|u1" || descr == "|i1") item = 1;
    else if (descr == "<u2" || descr == "<i2") item = 2;
    else if (descr == "<i4" || descr == "<f4" || descr == "<u4") item = 4;
    else if (descr == "<i8" || descr == "<f8") item = 8;
    else throw invalid_input_error(path + ": unsupported dtype " + descr);

    std::vector<char> raw(count * item);
    is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!is) throw invalid_input_error(path + ": truncated NPY data");

    Tensor t(shape, 0.0);
    std::vector<double>& out = t.vec();
    if (descr == "|u1") convert<std::uint8_t>(raw, out);
    else if (descr == "|i1") convert<std::int8_t>(raw, out);
    else if (descr == "<u2") convert<std::uint16_t>(raw, out);
    else if (descr == "<i2") convert<std::int16_t>(raw, out);
    else if (descr == "<u4") convert<std::uint32_t>(raw, out);
    else if (descr == "<i4") convert<std::int32_t>(raw, out);
    else if (descr == "<i8") convert<std::int64_t>(raw, out);
    else if (descr == "<f4") convert<float>(raw, out);
    else convert<double>(raw, out);
    return t;
}

void write_npy(const std::string& path, const Tensor& t) {
    std::string shape = "(";
    for (std::size_t i = 0; i < t.rank(); ++i) shape += std::to_string(t.dim(i)) + ", ";
    shape += ")";
    std::string header =
        "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape + ", }";
    // pad so that magic(6)+version(2)+len(2)+header is a multiple of 64
    const std::size_t base = 10 + header.size() + 1;
    header += std::string((64 - base % 64) % 64, ' ');
    header += '\n';

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw invalid_input_error("cannot write " + path);
    os.write(kMagic, 6);
    os.put(1);
    os.put(0);
    const std::uint16_t len = static_cast<std::uint16_t>(header.size());
    os.write(reinterpret_cast<const char*>(&len), 2);
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!os) throw invalid_input_error("write failed for " + path);
}

LabelMap read_npy_labels(const std::string& path) {
    Tensor t = read_npy(path);
    if (t.rank() != 2) throw invalid_input_error(path + ": label raster must be 2-D");
    LabelMap lab(t.dim(0), t.dim(1));
    for (std::size_t i = 0; i < t.numel(); ++i)
        lab.vec()[i] = static_cast<int>(std::lround(t[i]));
    return lab;
}

}  // namespace claire

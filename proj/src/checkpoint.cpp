#include "cdst/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cdst {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'D', 'S', 'T', 'C', 'K', 'P', 'T'};

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kMagic, sizeof(kMagic));
    write_u32(os, kCheckpointVersion);
    write_u32(os, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, tensor] : entries) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(tensor.shape().size()));
        for (size_t d : tensor.shape()) write_u32(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(tensor.value().data()),
                 static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " +
                                 std::to_string(version));
    uint32_t count = read_u32(is);
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint32_t rank = read_u32(is);
        Shape shape(rank);
        size_t n = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            shape[r] = read_u32(is);
            n *= shape[r];
        }
        std::vector<double> data(n);
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated file");
        out.emplace(std::move(name), Tensor::from(shape, std::move(data)));
    }
    return out;
}

}  // namespace cdst

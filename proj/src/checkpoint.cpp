#include "evflow/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace evflow {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("checkpoint: truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw ValidationError("checkpoint: truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& manifest,
                     const ad::ParamStore& ps) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot write checkpoint: " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    std::string mtxt = manifest.dump();
    write_u64(os, mtxt.size());
    os.write(mtxt.data(), static_cast<std::streamsize>(mtxt.size()));
    write_u64(os, ps.all().size());
    for (const auto& [name, p] : ps.all()) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(p.value.rank()));
        for (int d : p.value.shape) write_u32(os, static_cast<uint32_t>(d));
        for (double v : p.value.data) {
            uint64_t bits;
            std::memcpy(&bits, &v, 8);
            write_u64(os, bits);
        }
    }
    if (!os) throw ValidationError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::string file = resolve_checkpoint_path(path);
    std::ifstream is(file, std::ios::binary);
    if (!is) throw ValidationError("cannot open checkpoint: " + file);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw ValidationError("bad checkpoint magic: " + file);
    uint32_t ver = read_u32(is);
    if (ver != kVersion) throw ValidationError("unsupported checkpoint version");
    Checkpoint ck;
    uint64_t mlen = read_u64(is);
    std::string mtxt(mlen, '\0');
    if (!is.read(mtxt.data(), static_cast<std::streamsize>(mlen)))
        throw ValidationError("checkpoint: truncated manifest");
    ck.manifest = nlohmann::json::parse(mtxt);
    uint64_t count = read_u64(is);
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t nlen = read_u32(is);
        std::string name(nlen, '\0');
        if (!is.read(name.data(), nlen)) throw ValidationError("checkpoint: truncated name");
        uint32_t rank = read_u32(is);
        std::vector<int> shape;
        for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(read_u32(is)));
        Tensor t(shape);
        for (int64_t j = 0; j < t.numel(); ++j) {
            uint64_t bits = read_u64(is);
            double v;
            std::memcpy(&v, &bits, 8);
            t.data[static_cast<size_t>(j)] = v;
        }
        ck.tensors.emplace(std::move(name), std::move(t));
    }
    return ck;
}

void apply_checkpoint(const Checkpoint& ck, ad::ParamStore& ps) {
    for (auto& [name, p] : ps.all()) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw ValidationError("checkpoint missing tensor: " + name);
        if (it->second.shape != p.value.shape)
            throw ValidationError("checkpoint shape mismatch for " + name);
        p.value = it->second;
    }
}

std::string resolve_checkpoint_path(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::is_directory(path)) return (fs::path(path) / "checkpoint.evck").string();
    return path;
}

}  // namespace evflow

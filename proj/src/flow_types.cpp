#include "evflow/flow_types.hpp"

#include <cstring>
#include <fstream>

namespace evflow {

namespace {
constexpr char kMagic[4] = {'F', 'L', 'O', '1'};

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("flo: truncated header");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
}  // namespace

void write_flo(const std::string& path, const FlowField& f) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot write flow file: " + path);
    os.write(kMagic, 4);
    write_u32(os, static_cast<uint32_t>(f.height()));
    write_u32(os, static_cast<uint32_t>(f.width()));
    for (double v : f.data.data) {
        float fv = static_cast<float>(v);
        static_assert(sizeof(float) == 4);
        uint32_t bits;
        std::memcpy(&bits, &fv, 4);
        write_u32(os, bits);
    }
    if (!os) throw ValidationError("write failed: " + path);
}

FlowField read_flo(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open flow file: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw ValidationError("bad magic in flow file: " + path);
    uint32_t h = read_u32(is), w = read_u32(is);
    FlowField f;
    f.data = Tensor({static_cast<int>(h), static_cast<int>(w), 2});
    for (int64_t i = 0; i < f.data.numel(); ++i) {
        uint32_t bits = read_u32(is);
        float fv;
        std::memcpy(&fv, &bits, 4);
        f.data.data[static_cast<size_t>(i)] = fv;
    }
    return f;
}

}  // namespace evflow

#include "evflow/events.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace evflow {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'T', '1'};

template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool read_le(std::istream& is, T& v) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
    uint64_t acc = 0;
    for (size_t i = 0; i < sizeof(T); ++i) acc |= static_cast<uint64_t>(buf[i]) << (8 * i);
    v = static_cast<T>(acc);
    return true;
}

}  // namespace

void validate_stream(const EventStream& s) {
    int64_t prev_t = -1;
    for (size_t i = 0; i < s.events.size(); ++i) {
        const Event& e = s.events[i];
        if (e.x < 0 || e.x >= s.sensor_w || e.y < 0 || e.y >= s.sensor_h)
            throw ValidationError("event " + std::to_string(i) + " outside sensor bounds");
        if (e.p != 1 && e.p != -1)
            throw ValidationError("event " + std::to_string(i) + " has invalid polarity");
        if (e.t < 0) throw ValidationError("event " + std::to_string(i) + " has negative timestamp");
        if (e.t < prev_t)
            throw ValidationError("timestamps not sorted at record " + std::to_string(i));
        prev_t = e.t;
    }
}

EventStream load_events(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open event file: " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw ValidationError("bad magic in event file (byte offset 0): " + path);
    EventStream s;
    uint16_t w = 0, h = 0;
    uint64_t count = 0;
    if (!read_le(f, w) || !read_le(f, h) || !read_le(f, count))
        throw ValidationError("truncated header in event file: " + path);
    s.sensor_w = w;
    s.sensor_h = h;
    s.events.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        int64_t offset = 16 + static_cast<int64_t>(i) * 16;
        uint64_t t;
        uint16_t ex, ey;
        int8_t p;
        char pad[3];
        if (!read_le(f, t) || !read_le(f, ex) || !read_le(f, ey) ||
            !f.read(reinterpret_cast<char*>(&p), 1) || !f.read(pad, 3))
            throw ValidationError("malformed record " + std::to_string(i) + " at byte offset " +
                                  std::to_string(offset) + " in " + path);
        Event e;
        e.t = static_cast<int64_t>(t);
        e.x = ex;
        e.y = ey;
        e.p = p;
        s.events.push_back(e);
    }
    validate_stream(s);
    return s;
}

void save_events(const std::string& path, const EventStream& s) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write event file: " + path);
    f.write(kMagic, 4);
    write_le<uint16_t>(f, static_cast<uint16_t>(s.sensor_w));
    write_le<uint16_t>(f, static_cast<uint16_t>(s.sensor_h));
    write_le<uint64_t>(f, s.events.size());
    for (const Event& e : s.events) {
        write_le<uint64_t>(f, static_cast<uint64_t>(e.t));
        write_le<uint16_t>(f, static_cast<uint16_t>(e.x));
        write_le<uint16_t>(f, static_cast<uint16_t>(e.y));
        f.put(static_cast<char>(e.p));
        f.put(0);
        f.put(0);
        f.put(0);
    }
    if (!f) throw ValidationError("write failed: " + path);
}

EventStream load_events_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open event file: " + path);
    EventStream s;
    std::string line;
    size_t lineno = 0;
    int max_x = -1, max_y = -1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Event e;
        char c1, c2, c3;
        long long t, x, y, p;
        if (!(ls >> t >> c1 >> x >> c2 >> y >> c3 >> p) || c1 != ',' || c2 != ',' || c3 != ',')
            throw ValidationError("malformed csv record at line " + std::to_string(lineno));
        e.t = t;
        e.x = static_cast<int32_t>(x);
        e.y = static_cast<int32_t>(y);
        e.p = static_cast<int8_t>(p);
        max_x = std::max(max_x, e.x);
        max_y = std::max(max_y, e.y);
        s.events.push_back(e);
    }
    // CSV carries no header; infer sensor dims from the extent.
    s.sensor_w = max_x + 1;
    s.sensor_h = max_y + 1;
    validate_stream(s);
    return s;
}

EventStream slice_window(const EventStream& s, int64_t t_a, int64_t t_b) {
    if (t_a >= t_b) throw ValidationError("slice_window: t_a must be < t_b");
    EventStream out;
    out.sensor_h = s.sensor_h;
    out.sensor_w = s.sensor_w;
    for (const Event& e : s.events)
        if (e.t >= t_a && e.t <= t_b) out.events.push_back(e);
    return out;
}

EventRepresentation build_time_surface(const EventStream& s, int64_t t_ref, double tau,
                                       int channels_per_polarity) {
    if (tau <= 0.0) throw ValidationError("build_time_surface: tau must be positive");
    if (channels_per_polarity < 1) throw ValidationError("build_time_surface: need >= 1 channel");
    int k = channels_per_polarity;
    EventRepresentation rep;
    rep.kind = RepKind::TimeSurface;
    rep.t_start = s.events.empty() ? t_ref : s.events.front().t;
    rep.t_end = t_ref;
    if (rep.t_start >= rep.t_end) rep.t_start = rep.t_end - 1;
    rep.data = Tensor({s.sensor_h, s.sensor_w, 2 * k});
    // recency[pix][pol] holds the k most recent event times, newest first
    std::vector<int64_t> recency(static_cast<size_t>(s.sensor_h) * s.sensor_w * 2 * k, -1);
    for (const Event& e : s.events) {
        if (e.t > t_ref) throw ValidationError("build_time_surface: event after t_ref");
        size_t base = (static_cast<size_t>(e.y) * s.sensor_w + e.x) * 2 * k + (e.p > 0 ? 0 : static_cast<size_t>(k));
        for (int j = k - 1; j > 0; --j) recency[base + j] = recency[base + j - 1];
        recency[base] = e.t;
    }
    for (int y = 0; y < s.sensor_h; ++y)
        for (int x = 0; x < s.sensor_w; ++x)
            for (int c = 0; c < 2 * k; ++c) {
                int64_t tl = recency[(static_cast<size_t>(y) * s.sensor_w + x) * 2 * k + c];
                if (tl >= 0) rep.data.at(y, x, c) = std::exp(-static_cast<double>(t_ref - tl) / tau);
            }
    return rep;
}

EventRepresentation build_binned_representation(const EventStream& s, int64_t t_a, int64_t t_b,
                                                int bins) {
    if (t_a >= t_b) throw ValidationError("build_binned_representation: t_a must be < t_b");
    if (bins < 1) throw ValidationError("build_binned_representation: bins must be >= 1");
    EventRepresentation rep;
    rep.kind = RepKind::Binned12;
    rep.t_start = t_a;
    rep.t_end = t_b;
    rep.data = Tensor({s.sensor_h, s.sensor_w, bins});
    double span = static_cast<double>(t_b - t_a);
    for (const Event& e : s.events) {
        double nt = static_cast<double>(e.t - t_a) / span;
        if (nt < 0.0 || nt > 1.0) continue;
        int c = static_cast<int>(nt * bins);
        if (c >= bins) c = bins - 1;  // right-closed final bin
        rep.data.at(e.y, e.x, c) += static_cast<double>(e.p);
    }
    return rep;
}

std::vector<EventStream> window_slices(const EventStream& s,
                                       const std::vector<int64_t>& timestamps) {
    if (timestamps.size() < 2) throw ValidationError("window_slices: need >= 2 timestamps");
    std::vector<EventStream> out;
    for (size_t i = 0; i + 1 < timestamps.size(); ++i) {
        bool last = (i + 2 == timestamps.size());
        int64_t hi = last ? timestamps[i + 1] : timestamps[i + 1] - 1;
        out.push_back(slice_window(s, timestamps[i], hi));
    }
    return out;
}

}  // namespace evflow

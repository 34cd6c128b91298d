#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evflow/tensor.hpp"

namespace evflow {

// One DVS event: pixel, microsecond timestamp, polarity +1/-1.
struct Event {
    int32_t x = 0;
    int32_t y = 0;
    int64_t t = 0;
    int8_t p = 1;
};

struct EventStream {
    std::vector<Event> events;
    int sensor_h = 0;
    int sensor_w = 0;

    size_t size() const { return events.size(); }
    bool empty() const { return events.empty(); }
};

// Throws ValidationError when coordinates/polarity/order violate invariants.
void validate_stream(const EventStream& s);

enum class RepKind { TimeSurface, Binned12 };

// Dense H x W x C aggregation of an event window.
struct EventRepresentation {
    Tensor data;  // [H, W, C]
    int64_t t_start = 0;
    int64_t t_end = 0;
    RepKind kind = RepKind::Binned12;

    int height() const { return data.dim(0); }
    int width() const { return data.dim(1); }
    int channels() const { return data.dim(2); }
};

// Binary event file, magic "EVT1": sensor_w/h as u16 LE, record count as u64
// LE, then 16-byte records (t u64, x u16, y u16, p i8, 3 zero pad bytes).
EventStream load_events(const std::string& path);
void save_events(const std::string& path, const EventStream& s);

// Plain-text loader, one "t,x,y,p" per line.
EventStream load_events_csv(const std::string& path);

// Events with t in [t_a, t_b] (both ends inclusive), order preserved.
EventStream slice_window(const EventStream& s, int64_t t_a, int64_t t_b);

// Per pixel/polarity channel: exp(-(t_ref - t_last)/tau) of the most recent
// event, 0 where none. channels_per_polarity k stores the k most recent ages;
// layout is the positive channels first.
EventRepresentation build_time_surface(const EventStream& s, int64_t t_ref, double tau,
                                       int channels_per_polarity = 1);

// Signed polarity counts over `bins` equal time slices of [t_a, t_b); final
// bin right-closed.
EventRepresentation build_binned_representation(const EventStream& s, int64_t t_a, int64_t t_b,
                                                int bins = 12);

// Partition a stream into per-window slices of [timestamps[i], timestamps[i+1]).
// Left boundaries are included; the right boundary only in the final window.
std::vector<EventStream> window_slices(const EventStream& s,
                                       const std::vector<int64_t>& timestamps);

}  // namespace evflow

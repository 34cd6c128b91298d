#include "evflow/simulator.hpp"

#include <algorithm>
#include <cmath>

namespace evflow {

namespace {

struct Affine2 {
    // [x'; y'] = [a b; c d] [x; y] + [tx; ty]
    double a = 1, b = 0, c = 0, d = 1, tx = 0, ty = 0;

    void apply(double x, double y, double& ox, double& oy) const {
        ox = a * x + b * y + tx;
        oy = c * x + d * y + ty;
    }
    // this after other
    Affine2 compose(const Affine2& o) const {
        Affine2 r;
        r.a = a * o.a + b * o.c;
        r.b = a * o.b + b * o.d;
        r.c = c * o.a + d * o.c;
        r.d = c * o.b + d * o.d;
        r.tx = a * o.tx + b * o.ty + tx;
        r.ty = c * o.tx + d * o.ty + ty;
        return r;
    }
    Affine2 inverse() const {
        double det = a * d - b * c;
        Affine2 r;
        r.a = d / det;
        r.b = -b / det;
        r.c = -c / det;
        r.d = a / det;
        r.tx = -(r.a * tx + r.b * ty);
        r.ty = -(r.c * tx + r.d * ty);
        return r;
    }
};

Affine2 segment_affine(const MotionSegment& m, double cx, double cy, double frac) {
    double th = m.rot_deg * frac * M_PI / 180.0;
    double ca = std::cos(th), sa = std::sin(th);
    Affine2 r;
    r.a = ca;
    r.b = -sa;
    r.c = sa;
    r.d = ca;
    // rotate about (cx, cy), then translate
    r.tx = cx - (ca * cx - sa * cy) + m.dx * frac;
    r.ty = cy - (sa * cx + ca * cy) + m.dy * frac;
    return r;
}

uint64_t hash2(uint64_t seed, int64_t ix, int64_t iy) {
    uint64_t z = seed ^ (static_cast<uint64_t>(ix) * 0x9e3779b97f4a7c15ULL) ^
                 (static_cast<uint64_t>(iy) * 0xc2b2ae3d27d4eb4fULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double hash2u(uint64_t seed, int64_t ix, int64_t iy) {
    return static_cast<double>(hash2(seed, ix, iy) >> 11) * 0x1.0p-53;
}

struct Blob {
    double cx, cy, sigma, amp;
};

class SceneRenderer {
public:
    SceneRenderer(const SceneSpec& spec, uint64_t seed) : spec_(spec), seed_(seed) {
        if (spec.pattern == ScenePattern::GradientBlobs) {
            RandomStream rng(derive_seed(seed, "blobs"));
            for (int i = 0; i < 6; ++i) {
                Blob b;
                b.cx = rng.uniform(0.0, spec.w);
                b.cy = rng.uniform(0.0, spec.h);
                b.sigma = rng.uniform(3.0, 9.0);
                b.amp = rng.uniform(0.25, 0.55) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
                blobs_.push_back(b);
            }
        }
    }

    // Intensity in roughly [0.05, 0.95] at pattern coordinates (x, y).
    double intensity(double x, double y) const {
        switch (spec_.pattern) {
            case ScenePattern::Checkerboard: {
                double a = spec_.checker_size;
                auto soft_square = [](double u) { return std::tanh(std::sin(2.0 * M_PI * u) / 0.15); };
                double s = soft_square(x / (2.0 * a)) * soft_square(y / (2.0 * a));
                int64_t ix = static_cast<int64_t>(std::floor(x / a));
                int64_t iy = static_cast<int64_t>(std::floor(y / a));
                double jitter = (hash2u(seed_, ix, iy) - 0.5) * 0.3;
                return std::min(0.95, std::max(0.05, 0.5 + 0.35 * s + jitter));
            }
            case ScenePattern::GradientBlobs: {
                double v = 0.2 + 0.3 * (x + y) / (spec_.w + spec_.h);
                for (const Blob& b : blobs_) {
                    double dx = x - b.cx, dy = y - b.cy;
                    v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
                }
                return std::min(0.95, std::max(0.05, v));
            }
            case ScenePattern::TexturedNoise: {
                double cell = 6.0;
                double gx = x / cell, gy = y / cell;
                int64_t x0 = static_cast<int64_t>(std::floor(gx));
                int64_t y0 = static_cast<int64_t>(std::floor(gy));
                double fx = gx - x0, fy = gy - y0;
                double v00 = hash2u(seed_, x0, y0), v01 = hash2u(seed_, x0 + 1, y0);
                double v10 = hash2u(seed_, x0, y0 + 1), v11 = hash2u(seed_, x0 + 1, y0 + 1);
                double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
                return 0.15 + 0.7 * v;
            }
        }
        return 0.5;
    }

private:
    SceneSpec spec_;
    uint64_t seed_;
    std::vector<Blob> blobs_;
};

double log_intensity(double i) { return std::log(0.1 + i); }

}  // namespace

ScenePattern pattern_from_string(const std::string& s) {
    if (s == "checkerboard") return ScenePattern::Checkerboard;
    if (s == "gradient_blobs") return ScenePattern::GradientBlobs;
    if (s == "textured_noise") return ScenePattern::TexturedNoise;
    throw ValidationError("unknown pattern: " + s);
}

std::string pattern_to_string(ScenePattern p) {
    switch (p) {
        case ScenePattern::Checkerboard: return "checkerboard";
        case ScenePattern::GradientBlobs: return "gradient_blobs";
        case ScenePattern::TexturedNoise: return "textured_noise";
    }
    return "checkerboard";
}

SynthSequence gen_synthetic_sequence(const SceneSpec& spec, uint64_t seed) {
    if (spec.h < 1 || spec.w < 1) throw ValidationError("scene: bad size");
    if (spec.windows < 1) throw ValidationError("scene: need >= 1 window");
    if (static_cast<int>(spec.motion.size()) != spec.windows)
        throw ValidationError("scene: motion segment count must equal windows");
    if (spec.substeps < 1 || spec.window_us < spec.substeps)
        throw ValidationError("scene: bad time discretization");
    if (spec.contrast <= 0.0) throw ValidationError("scene: contrast must be positive");

    double cx = 0.5 * (spec.w - 1), cy = 0.5 * (spec.h - 1);

    // Ground truth: forward flow at center c is segment c+1's displacement,
    // backward flow is the inverse of segment c.
    SynthSequence out;
    auto fill_field = [&](const Affine2& t, FlowDirection dir) {
        FlowField f = FlowField::zeros(spec.h, spec.w, 1, dir);
        for (int y = 0; y < spec.h; ++y)
            for (int x = 0; x < spec.w; ++x) {
                double ox, oy;
                t.apply(x, y, ox, oy);
                double u = ox - x, v = oy - y;
                if (std::hypot(u, v) > spec.max_disp)
                    throw ValidationError("scene: displacement bound exceeded");
                f.data.at(y, x, 0) = u;
                f.data.at(y, x, 1) = v;
            }
        return f;
    };
    // Representation c covers window c = [T_c, T_{c+1}] and is centered at its
    // end time T_{c+1}; the forward flow spans window c+1 and the backward
    // flow reverses window c.
    for (int c = 1; c <= spec.windows - 2; ++c) {
        Affine2 fwd = segment_affine(spec.motion[static_cast<size_t>(c) + 1], cx, cy, 1.0);
        out.gt_fwd.push_back(fill_field(fwd, FlowDirection::Forward));
        Affine2 bwd = segment_affine(spec.motion[static_cast<size_t>(c)], cx, cy, 1.0).inverse();
        out.gt_bwd.push_back(fill_field(bwd, FlowDirection::Backward));
    }

    for (int s = 0; s <= spec.windows; ++s)
        out.timestamps.push_back(static_cast<int64_t>(s) * spec.window_us);

    SceneRenderer renderer(spec, seed);
    out.events.sensor_h = spec.h;
    out.events.sensor_w = spec.w;

    std::vector<double> ref(static_cast<size_t>(spec.h) * spec.w);
    std::vector<double> prev(static_cast<size_t>(spec.h) * spec.w);
    for (int y = 0; y < spec.h; ++y)
        for (int x = 0; x < spec.w; ++x) {
            double l = log_intensity(renderer.intensity(x, y));
            ref[static_cast<size_t>(y) * spec.w + x] = l;
            prev[static_cast<size_t>(y) * spec.w + x] = l;
        }

    std::vector<Event> events;
    Affine2 world;       // pattern -> image at the current window start
    Affine2 world_inv;
    for (int s = 0; s < spec.windows; ++s) {
        const MotionSegment& seg = spec.motion[static_cast<size_t>(s)];
        int64_t t_base = out.timestamps[static_cast<size_t>(s)];
        int64_t t0 = t_base;
        for (int sub = 1; sub <= spec.substeps; ++sub) {
            double frac = static_cast<double>(sub) / spec.substeps;
            Affine2 inv = world_inv.compose(segment_affine(seg, cx, cy, frac).inverse());
            int64_t t1 = t_base + spec.window_us * sub / spec.substeps;
            for (int y = 0; y < spec.h; ++y) {
                for (int x = 0; x < spec.w; ++x) {
                    size_t pix = static_cast<size_t>(y) * spec.w + x;
                    double px, py;
                    inv.apply(x, y, px, py);
                    double l1 = log_intensity(renderer.intensity(px, py));
                    double l0 = prev[pix];
                    double& r = ref[pix];
                    double c = spec.contrast;
                    if (l1 > l0) {
                        while (l1 - r >= c) {
                            r += c;
                            double f = (r - l0) / (l1 - l0);
                            int64_t tc = t0 + static_cast<int64_t>(std::lround(f * static_cast<double>(t1 - t0)));
                            events.push_back(Event{x, y, std::min(tc, t1), +1});
                        }
                    } else if (l1 < l0) {
                        while (r - l1 >= c) {
                            r -= c;
                            double f = (r - l0) / (l1 - l0);
                            int64_t tc = t0 + static_cast<int64_t>(std::lround(f * static_cast<double>(t1 - t0)));
                            events.push_back(Event{x, y, std::min(tc, t1), -1});
                        }
                    }
                    prev[pix] = l1;
                }
            }
            t0 = t1;
        }
        world = segment_affine(seg, cx, cy, 1.0).compose(world);
        world_inv = world.inverse();

        if (spec.noise_rate > 0.0) {
            RandomStream rng(derive_seed(seed, "noise.w" + std::to_string(s)));
            int count = rng.poisson(spec.noise_rate * spec.h * spec.w);
            for (int i = 0; i < count; ++i) {
                Event e;
                e.x = rng.uniform_int(spec.w);
                e.y = rng.uniform_int(spec.h);
                e.t = t_base + static_cast<int64_t>(rng.uniform() * static_cast<double>(spec.window_us));
                e.p = rng.uniform() < 0.5 ? static_cast<int8_t>(-1) : static_cast<int8_t>(1);
                events.push_back(e);
            }
        }
    }

    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        if (a.t != b.t) return a.t < b.t;
        if (a.y != b.y) return a.y < b.y;
        if (a.x != b.x) return a.x < b.x;
        return a.p < b.p;
    });
    out.events.events = std::move(events);
    validate_stream(out.events);
    return out;
}

}  // namespace evflow

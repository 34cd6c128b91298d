#pragma once

#include <vector>

#include "evflow/events.hpp"
#include "evflow/flow_types.hpp"

namespace evflow {

enum class ScenePattern { Checkerboard, GradientBlobs, TexturedNoise };

// Affine motion over one window: rotation (degrees) about the image center,
// then translation (pixels).
struct MotionSegment {
    double dx = 0.0;
    double dy = 0.0;
    double rot_deg = 0.0;
};

struct SceneSpec {
    ScenePattern pattern = ScenePattern::Checkerboard;
    std::vector<MotionSegment> motion;  // one per window
    double noise_rate = 0.0;            // spurious events per pixel per window
    int h = 64, w = 64;
    int windows = 3;
    double max_disp = 5.0;  // bound on ground-truth displacement magnitude
    int substeps = 8;
    double contrast = 0.15;  // log-intensity threshold
    int64_t window_us = 10000;
    double checker_size = 8.0;
};

struct SynthSequence {
    EventStream events;
    std::vector<int64_t> timestamps;  // window boundaries, size windows+1
    // Ground truth per center representation index c in [1, windows-2]:
    // gt_fwd[c-1] maps t_c -> t_{c+1}; gt_bwd[c-1] maps t_c -> t_{c-1}.
    std::vector<FlowField> gt_fwd;
    std::vector<FlowField> gt_bwd;
};

// Renders the moving pattern at sub-steps and emits an event whenever the
// per-pixel log intensity crosses +-contrast since that pixel's last event.
// Deterministic per seed. Throws ValidationError when a ground-truth
// displacement exceeds max_disp.
SynthSequence gen_synthetic_sequence(const SceneSpec& spec, uint64_t seed);

ScenePattern pattern_from_string(const std::string& s);
std::string pattern_to_string(ScenePattern p);

}  // namespace evflow

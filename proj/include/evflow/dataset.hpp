#pragma once

#include <json.hpp>

#include "evflow/events.hpp"
#include "evflow/flow_types.hpp"
#include "evflow/simulator.hpp"

namespace evflow {

// Dataset generation request ("spec.json" of the gen-data command). A null
// `motion` samples random bounded affine motion per sample.
struct GenSpec {
    ScenePattern pattern = ScenePattern::Checkerboard;
    int h = 64, w = 64;
    int windows = 3;           // 3 for triplet mode, 5 for propagation mode
    int samples = 200;
    double max_disp = 5.0;
    double min_disp = 0.5;
    double rot_max_deg = 1.0;
    double noise_rate = 0.05;
    int64_t window_us = 10000;
    std::string rep = "binned12";  // or "time_surface"
    int bins = 12;
    double tau_us = 5000.0;
    std::vector<MotionSegment> fixed_motion;  // optional, size==windows when set

    static GenSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct DatasetSample {
    std::string events_file;
    std::vector<int64_t> timestamps;
    std::vector<int> centers;  // representation indices with ground truth
};

struct Dataset {
    std::string dir;
    std::string mode;  // "trof" or "mop"
    int h = 0, w = 0, windows = 0;
    int64_t window_us = 0;
    std::string rep = "binned12";
    int bins = 12;
    double tau_us = 5000.0;
    std::vector<DatasetSample> samples;

    int size() const { return static_cast<int>(samples.size()); }
};

Dataset generate_dataset(const GenSpec& spec, uint64_t seed, const std::string& out_dir);
Dataset load_dataset(const std::string& dir);

// One sample materialized: per-window representations and per-center GT.
struct LoadedSample {
    std::vector<EventRepresentation> reps;
    std::vector<int> centers;
    std::vector<FlowField> gt_fwd, gt_bwd;  // parallel to centers
};

LoadedSample load_sample(const Dataset& ds, int index);

std::string gt_flow_name(int sample, int center, FlowDirection dir);

}  // namespace evflow

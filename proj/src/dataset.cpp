#include "evflow/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace evflow {

namespace fs = std::filesystem;
using nlohmann::json;

GenSpec GenSpec::from_json(const json& j) {
    GenSpec s;
    if (j.contains("pattern")) s.pattern = pattern_from_string(j["pattern"].get<std::string>());
    if (j.contains("h")) s.h = j["h"].get<int>();
    if (j.contains("w")) s.w = j["w"].get<int>();
    if (j.contains("windows")) s.windows = j["windows"].get<int>();
    if (j.contains("samples")) s.samples = j["samples"].get<int>();
    if (j.contains("max_disp")) s.max_disp = j["max_disp"].get<double>();
    if (j.contains("min_disp")) s.min_disp = j["min_disp"].get<double>();
    if (j.contains("rot_max_deg")) s.rot_max_deg = j["rot_max_deg"].get<double>();
    if (j.contains("noise_rate")) s.noise_rate = j["noise_rate"].get<double>();
    if (j.contains("window_us")) s.window_us = j["window_us"].get<int64_t>();
    if (j.contains("rep")) s.rep = j["rep"].get<std::string>();
    if (j.contains("bins")) s.bins = j["bins"].get<int>();
    if (j.contains("tau_us")) s.tau_us = j["tau_us"].get<double>();
    if (j.contains("motion") && !j["motion"].is_null()) {
        for (const auto& m : j["motion"]) {
            MotionSegment seg;
            seg.dx = m.at(0).get<double>();
            seg.dy = m.at(1).get<double>();
            seg.rot_deg = m.size() > 2 ? m.at(2).get<double>() : 0.0;
            s.fixed_motion.push_back(seg);
        }
    }
    if (s.windows != 3 && s.windows != 5)
        throw ValidationError("gen spec: windows must be 3 (trof) or 5 (mop)");
    if (s.rep != "binned12" && s.rep != "time_surface")
        throw ValidationError("gen spec: rep must be binned12 or time_surface");
    return s;
}

json GenSpec::to_json() const {
    json j;
    j["pattern"] = pattern_to_string(pattern);
    j["h"] = h;
    j["w"] = w;
    j["windows"] = windows;
    j["samples"] = samples;
    j["max_disp"] = max_disp;
    j["min_disp"] = min_disp;
    j["rot_max_deg"] = rot_max_deg;
    j["noise_rate"] = noise_rate;
    j["window_us"] = window_us;
    j["rep"] = rep;
    j["bins"] = bins;
    j["tau_us"] = tau_us;
    return j;
}

std::string gt_flow_name(int sample, int center, FlowDirection dir) {
    std::ostringstream os;
    os << "s" << std::setw(4) << std::setfill('0') << sample << "_c" << center << "_"
       << (dir == FlowDirection::Forward ? "fwd" : "bwd") << ".flo";
    return os.str();
}

namespace {

std::string events_name(int sample) {
    std::ostringstream os;
    os << "s" << std::setw(4) << std::setfill('0') << sample << ".evt";
    return os.str();
}

std::vector<MotionSegment> sample_motion(const GenSpec& spec, RandomStream& rng) {
    if (!spec.fixed_motion.empty()) {
        if (static_cast<int>(spec.fixed_motion.size()) != spec.windows)
            throw ValidationError("gen spec: fixed motion size must equal windows");
        return spec.fixed_motion;
    }
    // One smooth base motion per sample with slight per-window jitter, scaled
    // so rotation plus translation stays inside the displacement bound.
    double diag = 0.5 * std::hypot(spec.w - 1.0, spec.h - 1.0);
    double rot = spec.rot_max_deg * (2.0 * rng.uniform() - 1.0);
    double rot_disp = diag * std::abs(rot) * M_PI / 180.0;
    double budget = spec.max_disp * 0.92 - rot_disp;
    double lo = std::min(spec.min_disp, budget);
    double mag = rng.uniform(lo, std::max(lo, budget / 1.1));
    double theta = rng.uniform(0.0, 2.0 * M_PI);
    std::vector<MotionSegment> motion;
    for (int s = 0; s < spec.windows; ++s) {
        double jitter = 1.0 + 0.1 * (2.0 * rng.uniform() - 1.0);
        MotionSegment seg;
        seg.dx = mag * jitter * std::cos(theta);
        seg.dy = mag * jitter * std::sin(theta);
        seg.rot_deg = rot;
        motion.push_back(seg);
    }
    return motion;
}

}  // namespace

Dataset generate_dataset(const GenSpec& spec, uint64_t seed, const std::string& out_dir) {
    fs::create_directories(out_dir);
    Dataset ds;
    ds.dir = out_dir;
    ds.mode = spec.windows == 3 ? "trof" : "mop";
    ds.h = spec.h;
    ds.w = spec.w;
    ds.windows = spec.windows;
    ds.window_us = spec.window_us;
    ds.rep = spec.rep;
    ds.bins = spec.bins;
    ds.tau_us = spec.tau_us;

    json jsamples = json::array();
    for (int i = 0; i < spec.samples; ++i) {
        RandomStream rng(derive_seed(seed, "sample" + std::to_string(i)));
        SceneSpec scene;
        scene.pattern = spec.pattern;
        scene.h = spec.h;
        scene.w = spec.w;
        scene.windows = spec.windows;
        scene.noise_rate = spec.noise_rate;
        scene.max_disp = spec.max_disp;
        scene.window_us = spec.window_us;
        scene.motion = sample_motion(spec, rng);
        SynthSequence seq = gen_synthetic_sequence(scene, derive_seed(seed, "scene" + std::to_string(i)));

        DatasetSample rec;
        rec.events_file = events_name(i);
        rec.timestamps = seq.timestamps;
        save_events((fs::path(out_dir) / rec.events_file).string(), seq.events);
        for (int c = 1; c <= spec.windows - 2; ++c) {
            rec.centers.push_back(c);
            write_flo((fs::path(out_dir) / gt_flow_name(i, c, FlowDirection::Forward)).string(),
                      seq.gt_fwd[static_cast<size_t>(c) - 1]);
            write_flo((fs::path(out_dir) / gt_flow_name(i, c, FlowDirection::Backward)).string(),
                      seq.gt_bwd[static_cast<size_t>(c) - 1]);
        }
        json js;
        js["events"] = rec.events_file;
        js["timestamps"] = rec.timestamps;
        js["centers"] = rec.centers;
        jsamples.push_back(js);
        ds.samples.push_back(std::move(rec));
    }

    json manifest;
    manifest["format_version"] = 1;
    manifest["mode"] = ds.mode;
    manifest["h"] = ds.h;
    manifest["w"] = ds.w;
    manifest["windows"] = ds.windows;
    manifest["window_us"] = ds.window_us;
    manifest["rep"] = ds.rep;
    manifest["bins"] = ds.bins;
    manifest["tau_us"] = ds.tau_us;
    manifest["gen_spec"] = spec.to_json();
    manifest["seed"] = seed;
    manifest["samples"] = jsamples;
    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw ValidationError("cannot write dataset manifest");
    return ds;
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw ValidationError("cannot open dataset manifest in " + dir);
    json manifest = json::parse(mf);
    Dataset ds;
    ds.dir = dir;
    ds.mode = manifest.at("mode").get<std::string>();
    ds.h = manifest.at("h").get<int>();
    ds.w = manifest.at("w").get<int>();
    ds.windows = manifest.at("windows").get<int>();
    ds.window_us = manifest.at("window_us").get<int64_t>();
    ds.rep = manifest.at("rep").get<std::string>();
    ds.bins = manifest.at("bins").get<int>();
    ds.tau_us = manifest.value("tau_us", 5000.0);
    for (const auto& js : manifest.at("samples")) {
        DatasetSample rec;
        rec.events_file = js.at("events").get<std::string>();
        rec.timestamps = js.at("timestamps").get<std::vector<int64_t>>();
        rec.centers = js.at("centers").get<std::vector<int>>();
        ds.samples.push_back(std::move(rec));
    }
    return ds;
}

LoadedSample load_sample(const Dataset& ds, int index) {
    if (index < 0 || index >= ds.size()) throw ValidationError("load_sample: index out of range");
    const DatasetSample& rec = ds.samples[static_cast<size_t>(index)];
    EventStream stream = load_events((fs::path(ds.dir) / rec.events_file).string());
    std::vector<EventStream> windows = window_slices(stream, rec.timestamps);
    LoadedSample out;
    for (size_t wdx = 0; wdx < windows.size(); ++wdx) {
        if (ds.rep == "binned12") {
            out.reps.push_back(build_binned_representation(windows[wdx], rec.timestamps[wdx],
                                                           rec.timestamps[wdx + 1], ds.bins));
        } else {
            out.reps.push_back(
                build_time_surface(windows[wdx], rec.timestamps[wdx + 1], ds.tau_us));
        }
    }
    out.centers = rec.centers;
    for (int c : rec.centers) {
        FlowField fwd = read_flo((fs::path(ds.dir) / gt_flow_name(index, c, FlowDirection::Forward)).string());
        fwd.direction = FlowDirection::Forward;
        FlowField bwd = read_flo((fs::path(ds.dir) / gt_flow_name(index, c, FlowDirection::Backward)).string());
        bwd.direction = FlowDirection::Backward;
        out.gt_fwd.push_back(std::move(fwd));
        out.gt_bwd.push_back(std::move(bwd));
    }
    return out;
}

}  // namespace evflow

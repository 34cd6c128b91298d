#pragma once

#include <map>

#include <json.hpp>

#include "evflow/flow_types.hpp"

namespace evflow {

struct EvalReport {
    double epe = 0.0;       // mean endpoint error, pixels
    double ae = 0.0;        // mean angular error of (u, v, 1) vectors, degrees
    std::map<int, double> npe;  // N in {1,2,3} -> percent of valid pixels with error > N
    int64_t n_valid = 0;

    nlohmann::json to_json() const;
};

// Mean L2 distance over valid pixels. mask: [h, w], >0.5 marks valid.
double epe(const FlowField& pred, const FlowField& gt, const Tensor& mask);
// Mean angle between homogeneous (u, v, 1) vectors, in degrees.
double angular_error(const FlowField& pred, const FlowField& gt, const Tensor& mask);
// Percent of valid pixels whose endpoint error strictly exceeds n.
double npe(const FlowField& pred, const FlowField& gt, const Tensor& mask, double n);

EvalReport evaluate_flow(const FlowField& pred, const FlowField& gt, const Tensor& mask);

// Pixel-weighted pooling across samples.
EvalReport pool_reports(const std::vector<EvalReport>& reports);

Tensor full_mask(int h, int w);

}  // namespace evflow

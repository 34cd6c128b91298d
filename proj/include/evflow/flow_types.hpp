#pragma once

#include <string>

#include "evflow/tensor.hpp"

namespace evflow {

enum class FlowDirection { Forward, Backward };

// Dense displacement field; data [h, w, 2] holds (u, v) in pixels at the
// field's stride.
struct FlowField {
    Tensor data;
    int stride = 1;
    FlowDirection direction = FlowDirection::Forward;

    int height() const { return data.dim(0); }
    int width() const { return data.dim(1); }

    static FlowField zeros(int h, int w, int stride, FlowDirection dir) {
        FlowField f;
        f.data = Tensor({h, w, 2});
        f.stride = stride;
        f.direction = dir;
        return f;
    }
};

// "FLO1" file: magic, h and w as u32 LE, then h*w*2 float32 LE row-major,
// (u, v) interleaved.
void write_flo(const std::string& path, const FlowField& f);
FlowField read_flo(const std::string& path);

}  // namespace evflow

#pragma once

#include "evflow/triplet_flow.hpp"

namespace evflow {

// Backward bilinear warp of a motion-state map by a stride-8 flow field;
// out-of-range samples read zero.
Tensor warp(const Tensor& m, const FlowField& flow);

// Channel concatenation [M_center | m_f | m_b].
Tensor mop_fuse(const Tensor& m_center, const Tensor& m_f, const Tensor& m_b);

// Differentiable propagation over five representations: three overlapping
// triplet sessions advance in lockstep, exchanging warped motion states
// between iterations. With exchange disabled every session sees zero motion
// features and reproduces three independent triplet runs bit-for-bit.
struct MopVars {
    std::vector<TrofSession> sessions;  // centers at representation indices 1, 2, 3
};

MopVars mop_forward_ad(ad::Tape& t, ad::ParamStore& ps, const FlowModel& m,
                       const std::vector<Tensor>& reps, int k_iters, bool exchange,
                       uint64_t state_seed);

struct MopResult {
    std::vector<TrofResult> centers;  // size 3
};

MopResult mop_forward(const FlowModel& m, ad::ParamStore& ps,
                      const std::vector<EventRepresentation>& reps, int k_iters,
                      bool exchange = true, uint64_t state_seed = 7);

}  // namespace evflow

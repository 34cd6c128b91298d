#pragma once

#include <utility>
#include <vector>

#include "evflow/encoder.hpp"
#include "evflow/flow_types.hpp"

namespace evflow {

// All-pairs similarity pyramid between two stride-8 feature maps. Level 0 is
// the full (h*w) x (h*w) dot-product volume scaled by 1/sqrt(d), viewed as
// [P, ht, wt]; deeper levels average-pool the target dims by 2 (ceil).
struct CorrelationVolume {
    std::vector<Tensor> pyramid;
    int radius = 3;
    int src_h = 0, src_w = 0;
};

struct FlowModelConfig {
    EncoderConfig enc;
    int levels = 2;
    int radius = 3;
    int corr_fused = 32;  // CorrelationFusion output width
    int flow_fused = 16;  // FlowFusion output width
    int me_inner = 64;    // motion encoder mixing width
    int motion_w = 32;    // motion feature width
    int m_state = 32;     // motion state width
    int k_iters = 6;
};

FlowModelConfig flow_config_for_variant(const std::string& variant, int in_channels);

// Triplet flow network: shared encoder, two correlation volumes, K gated
// recurrent refinements of the bidirectional flows.
struct FlowModel {
    FlowModelConfig cfg;
    EncoderModel encoder;
    std::string prefix;  // for refinement parameters

    std::string pn(const std::string& leaf) const { return prefix + "." + leaf; }
};

FlowModel build_flow_model(const FlowModelConfig& cfg, InitKind init, uint64_t seed,
                           ad::ParamStore& ps, bool train_perturbation);

// ---- differentiable pieces ----

struct CorrVolumeVars {
    std::vector<ad::Var> levels;  // each [P, ht, wt]
    int radius = 3;
    int h = 0, w = 0;
};

CorrVolumeVars build_corr_volume_ad(ad::Tape& t, ad::Var f_src, ad::Var f_tgt, int levels,
                                    int radius);
// Multi-level lookup -> [h, w, levels*(2r+1)^2].
ad::Var lookup_ad(const CorrVolumeVars& vol, ad::Var flow);

// One refinement context over an event triplet. Owned Vars live on the tape
// passed at setup.
struct TrofSession {
    ad::Tape* t = nullptr;
    ad::ParamStore* ps = nullptr;
    const FlowModel* model = nullptr;
    CorrVolumeVars vol_fwd, vol_bwd;
    ad::Var ctx, h;
    ad::Var f_fwd, f_bwd;  // stride-8 flows
    ad::Var motion_state;  // valid after the first step
    int cells_h = 0, cells_w = 0;
    int orig_h = 0, orig_w = 0;
    int k = 0;
    std::vector<ad::Var> iter_fwd_full, iter_bwd_full;  // per-iteration, stride 1

    // One refinement iteration; f_mop is [h, w, 3*m_state] (zeros standalone).
    void step(ad::Var f_mop);
    ad::Var zero_mop_features() const;
};

TrofSession trof_setup(ad::Tape& t, ad::ParamStore& ps, const FlowModel& m, const Tensor& e_prev,
                       const Tensor& e_ctr, const Tensor& e_next);

// ---- plain operation surface ----

CorrelationVolume build_correlation_volume(const FeatureMap& f_src, const FeatureMap& f_tgt,
                                           int levels, int radius);
// Correlation features for the current flow estimate; flow must live on the
// volume's source grid.
Tensor lookup(const CorrelationVolume& vol, const FlowField& flow);

struct FusedFeatures {
    Tensor f_corr;
    Tensor f_flow;
};
FusedFeatures fuse_features(const FlowModel& m, ad::ParamStore& ps, const Tensor& c_bwd,
                            const Tensor& c_fwd, const FlowField& f_bwd, const FlowField& f_fwd);

// Returns (F_motion, M_next).
std::pair<Tensor, Tensor> motion_encoder(const FlowModel& m, ad::ParamStore& ps,
                                         const Tensor& f_corr, const Tensor& f_flow,
                                         const Tensor& f_mop);

struct RefinementState {
    Tensor h;
    FlowField f_fwd, f_bwd;
    int k = 0;
};
RefinementState update_and_decode(const FlowModel& m, ad::ParamStore& ps, const Tensor& f_motion,
                                  const Tensor& ctx, const RefinementState& state);

// Bilinear x8 upsampling with x8 vector scaling; requires stride 8.
FlowField upsample_flow(const FlowField& f);

struct TrofResult {
    FlowField f_fwd, f_bwd;  // stride 1, cropped to the input resolution
    Tensor motion_state;     // [h, w, m_state]
    std::vector<std::pair<FlowField, FlowField>> per_iter;  // (fwd, bwd) per iteration
};

TrofResult trof_forward(const FlowModel& m, ad::ParamStore& ps, const EventRepresentation& e_prev,
                        const EventRepresentation& e_ctr, const EventRepresentation& e_next,
                        int k_iters);

}  // namespace evflow

#include "evflow/motion_prop.hpp"

namespace evflow {

using ad::ParamStore;
using ad::Tape;
using ad::Var;

Tensor warp(const Tensor& m, const FlowField& flow) {
    if (m.dim(0) != flow.height() || m.dim(1) != flow.width())
        throw ValidationError("warp: spatial shape mismatch");
    Tape t;
    return ad::bilinear_warp(t.constant(m), t.constant(flow.data)).val();
}

Tensor mop_fuse(const Tensor& m_center, const Tensor& m_f, const Tensor& m_b) {
    if (m_center.shape != m_f.shape || m_center.shape != m_b.shape)
        throw ValidationError("mop_fuse: shape mismatch");
    Tape t;
    return ad::concat_last({t.constant(m_center), t.constant(m_f), t.constant(m_b)}).val();
}

MopVars mop_forward_ad(Tape& t, ParamStore& ps, const FlowModel& m,
                       const std::vector<Tensor>& reps, int k_iters, bool exchange,
                       uint64_t state_seed) {
    if (reps.size() != 5) throw ValidationError("mop_forward: exactly 5 representations required");
    if (k_iters < 1) throw ValidationError("mop_forward: need K >= 1");
    for (size_t i = 1; i < reps.size(); ++i)
        if (reps[i].shape != reps[0].shape)
            throw ValidationError("mop_forward: representation shapes differ");

    std::vector<EncodeVars> enc;
    enc.reserve(5);
    for (const Tensor& r : reps) enc.push_back(encode_ad(t, ps, m.encoder, r));

    MopVars out;
    for (int c = 1; c <= 3; ++c) {
        TrofSession s;
        s.t = &t;
        s.ps = &ps;
        s.model = &m;
        s.vol_fwd = build_corr_volume_ad(t, enc[static_cast<size_t>(c)].features,
                                         enc[static_cast<size_t>(c) + 1].features, m.cfg.levels,
                                         m.cfg.radius);
        s.vol_bwd = build_corr_volume_ad(t, enc[static_cast<size_t>(c)].features,
                                         enc[static_cast<size_t>(c) - 1].features, m.cfg.levels,
                                         m.cfg.radius);
        s.ctx = enc[static_cast<size_t>(c)].context;
        s.h = ad::tanh_op(s.ctx);
        s.cells_h = s.ctx.shape()[0];
        s.cells_w = s.ctx.shape()[1];
        s.orig_h = enc[static_cast<size_t>(c)].orig_h;
        s.orig_w = enc[static_cast<size_t>(c)].orig_w;
        s.f_fwd = t.constant(Tensor({s.cells_h, s.cells_w, 2}));
        s.f_bwd = t.constant(Tensor({s.cells_h, s.cells_w, 2}));
        out.sessions.push_back(s);
    }

    int hc = out.sessions[0].cells_h, wc = out.sessions[0].cells_w;
    std::vector<Var> cur_m(3);
    for (int j = 0; j < 3; ++j) {
        Tensor m0({hc, wc, m.cfg.m_state});
        RandomStream rng(derive_seed(state_seed, "mop.M" + std::to_string(j)));
        rng.fill_normal(m0, 0.01);
        cur_m[static_cast<size_t>(j)] = t.constant(std::move(m0));
    }

    for (int k = 0; k < k_iters; ++k) {
        // Barrier semantics: all sessions consume the states and flows from
        // the previous iteration.
        std::vector<Var> snap_m = cur_m;
        std::vector<Var> snap_ffwd, snap_fbwd;
        for (const TrofSession& s : out.sessions) {
            snap_ffwd.push_back(s.f_fwd);
            snap_fbwd.push_back(s.f_bwd);
        }
        for (int j = 0; j < 3; ++j) {
            TrofSession& s = out.sessions[static_cast<size_t>(j)];
            Var f_mop;
            if (exchange) {
                Var zero_state = t.constant(Tensor({hc, wc, m.cfg.m_state}));
                Var m_f = j + 1 < 3 ? ad::bilinear_warp(snap_m[static_cast<size_t>(j) + 1],
                                                        snap_ffwd[static_cast<size_t>(j)])
                                    : zero_state;
                Var m_b = j - 1 >= 0 ? ad::bilinear_warp(snap_m[static_cast<size_t>(j) - 1],
                                                         snap_fbwd[static_cast<size_t>(j)])
                                     : zero_state;
                f_mop = ad::concat_last({snap_m[static_cast<size_t>(j)], m_f, m_b});
            } else {
                f_mop = s.zero_mop_features();
            }
            s.step(f_mop);
            cur_m[static_cast<size_t>(j)] = s.motion_state;
        }
    }
    return out;
}

MopResult mop_forward(const FlowModel& m, ParamStore& ps,
                      const std::vector<EventRepresentation>& reps, int k_iters, bool exchange,
                      uint64_t state_seed) {
    std::vector<Tensor> data;
    data.reserve(reps.size());
    for (const EventRepresentation& r : reps) data.push_back(r.data);
    Tape t;
    MopVars mv = mop_forward_ad(t, ps, m, data, k_iters, exchange, state_seed);
    MopResult out;
    for (TrofSession& s : mv.sessions) {
        TrofResult r;
        r.f_fwd = FlowField{s.iter_fwd_full.back().val(), 1, FlowDirection::Forward};
        r.f_bwd = FlowField{s.iter_bwd_full.back().val(), 1, FlowDirection::Backward};
        r.motion_state = s.motion_state.val();
        for (int k = 0; k < k_iters; ++k)
            r.per_iter.push_back(
                {FlowField{s.iter_fwd_full[static_cast<size_t>(k)].val(), 1, FlowDirection::Forward},
                 FlowField{s.iter_bwd_full[static_cast<size_t>(k)].val(), 1, FlowDirection::Backward}});
        out.centers.push_back(std::move(r));
    }
    return out;
}

}  // namespace evflow

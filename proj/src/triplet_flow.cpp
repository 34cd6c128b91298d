#include "evflow/triplet_flow.hpp"

#include <cmath>

namespace evflow {

using ad::ParamStore;
using ad::Tape;
using ad::Var;

FlowModelConfig flow_config_for_variant(const std::string& variant, int in_channels) {
    FlowModelConfig cfg;
    cfg.enc = encoder_config_for_variant(variant, in_channels);
    int d = cfg.enc.d_model;
    cfg.corr_fused = d;
    cfg.flow_fused = 16;
    cfg.me_inner = d + 32;
    cfg.motion_w = d;
    cfg.m_state = 32;
    return cfg;
}

namespace {

void init_normal_param(ad::Param& p, uint64_t seed, double sd) {
    RandomStream rng(seed);
    rng.fill_normal(p.value, sd);
}

void create_conv3(ParamStore& ps, const std::string& name, int ci, int co, uint64_t master,
                  double sd_scale = 1.0) {
    ad::Param& w = ps.create(name + ".w", {3, 3, ci, co});
    init_normal_param(w, derive_seed(master, name + ".w"), sd_scale / std::sqrt(9.0 * ci));
    ps.create(name + ".b", {co});
}

void create_pw(ParamStore& ps, const std::string& name, int ci, int co, uint64_t master) {
    ad::Param& w = ps.create(name + ".w", {ci, co});
    init_normal_param(w, derive_seed(master, name + ".w"), 1.0 / std::sqrt(static_cast<double>(ci)));
    ps.create(name + ".b", {co});
}

Var pointwise(Tape& t, ParamStore& ps, const std::string& name, Var x) {
    const auto& sh = x.shape();
    Var flat = ad::reshape(x, {sh[0] * sh[1], sh[2]});
    Var y = ad::add_bias(ad::matmul(flat, ps.use(t, name + ".w")), ps.use(t, name + ".b"));
    return ad::reshape(y, {sh[0], sh[1], y.shape()[1]});
}

Var conv3(Tape& t, ParamStore& ps, const std::string& name, Var x) {
    return ad::conv2d(x, ps.use(t, name + ".w"), ps.use(t, name + ".b"), 1, 1);
}

// level-0 correlation: out[p, q] = dot(a[p], b[q]) * scale
Var all_pairs_dot(Var a, Var b, double scale) {
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.shape != bv.shape) throw ValidationError("correlation: feature shape mismatch");
    int p = av.dim(0), d = av.dim(1);
    Tensor out({p, p});
    for (int i = 0; i < p; ++i) {
        const double* ar = av.ptr() + static_cast<int64_t>(i) * d;
        for (int q = 0; q < p; ++q) {
            const double* br = bv.ptr() + static_cast<int64_t>(q) * d;
            double s = 0.0;
            for (int j = 0; j < d; ++j) s += ar[j] * br[j];
            out.at(i, q) = s * scale;
        }
    }
    int ia = a.id, ib = b.id;
    return a.tape->make_node(std::move(out), {a, b}, [ia, ib, p, d, scale](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& av = tp.val_of(ia);
        const Tensor& bv = tp.val_of(ib);
        bool na = tp.needs_grad(ia), nb = tp.needs_grad(ib);
        Tensor* ga = na ? &tp.grad_of(ia) : nullptr;
        Tensor* gb = nb ? &tp.grad_of(ib) : nullptr;
        for (int i = 0; i < p; ++i) {
            for (int q = 0; q < p; ++q) {
                double gv = g.at(i, q) * scale;
                if (gv == 0.0) continue;
                if (na) {
                    double* gar = ga->ptr() + static_cast<int64_t>(i) * d;
                    const double* br = bv.ptr() + static_cast<int64_t>(q) * d;
                    for (int j = 0; j < d; ++j) gar[j] += gv * br[j];
                }
                if (nb) {
                    double* gbr = gb->ptr() + static_cast<int64_t>(q) * d;
                    const double* ar = av.ptr() + static_cast<int64_t>(i) * d;
                    for (int j = 0; j < d; ++j) gbr[j] += gv * ar[j];
                }
            }
        }
    });
}

}  // namespace

FlowModel build_flow_model(const FlowModelConfig& cfg, InitKind init, uint64_t seed,
                           ParamStore& ps, bool train_perturbation) {
    FlowModel m;
    m.cfg = cfg;
    m.prefix = "flow";
    m.encoder = build_encoder(cfg.enc, init, seed, ps, train_perturbation);
    int corr_ch = cfg.levels * (2 * cfg.radius + 1) * (2 * cfg.radius + 1);
    int d = cfg.enc.d_model;
    create_pw(ps, m.pn("fuse.corr"), 2 * corr_ch, cfg.corr_fused, seed);
    create_conv3(ps, m.pn("fuse.flow"), 4, cfg.flow_fused, seed);
    create_pw(ps, m.pn("me.pw1"), cfg.corr_fused + cfg.flow_fused + 3 * cfg.m_state, cfg.me_inner, seed);
    ad::Param& dw = ps.create(m.pn("me.dw.w"), {7, 7, cfg.me_inner});
    init_normal_param(dw, derive_seed(seed, m.pn("me.dw.w")), 1.0 / 7.0);
    ps.create(m.pn("me.dw.b"), {cfg.me_inner});
    create_pw(ps, m.pn("me.pw2"), cfg.me_inner, cfg.motion_w + cfg.m_state, seed);
    int gin = cfg.motion_w + d;  // motion features + context
    create_conv3(ps, m.pn("gru.z"), d + gin, d, seed);
    create_conv3(ps, m.pn("gru.r"), d + gin, d, seed);
    create_conv3(ps, m.pn("gru.h"), d + gin, d, seed);
    create_conv3(ps, m.pn("dec.c1"), d, d + 16, seed);
    create_conv3(ps, m.pn("dec.c2"), d + 16, 4, seed, 0.01);
    return m;
}

CorrVolumeVars build_corr_volume_ad(Tape& t, Var f_src, Var f_tgt, int levels, int radius) {
    (void)t;
    if (levels < 1) throw ValidationError("correlation: need >= 1 level");
    const auto& sh = f_src.shape();
    int h = sh[0], w = sh[1], d = sh[2];
    CorrVolumeVars vol;
    vol.radius = radius;
    vol.h = h;
    vol.w = w;
    Var a = ad::reshape(f_src, {h * w, d});
    Var b = ad::reshape(f_tgt, {h * w, d});
    Var l0 = ad::reshape(all_pairs_dot(a, b, 1.0 / std::sqrt(static_cast<double>(d))), {h * w, h, w});
    vol.levels.push_back(l0);
    for (int l = 1; l < levels; ++l) vol.levels.push_back(ad::avg_pool_targets(vol.levels.back()));
    return vol;
}

Var lookup_ad(const CorrVolumeVars& vol, Var flow) {
    std::vector<Var> per_level;
    double inv = 1.0;
    for (const Var& lvl : vol.levels) {
        per_level.push_back(ad::corr_lookup(lvl, flow, inv, vol.radius));
        inv *= 0.5;
    }
    return per_level.size() == 1 ? per_level[0] : ad::concat_last(per_level);
}

Var TrofSession::zero_mop_features() const {
    return t->constant(Tensor({cells_h, cells_w, 3 * model->cfg.m_state}));
}

void TrofSession::step(Var f_mop) {
    Tape& tp = *t;
    const FlowModel& m = *model;
    Var c_fwd = lookup_ad(vol_fwd, f_fwd);
    Var c_bwd = lookup_ad(vol_bwd, f_bwd);
    Var f_corr = ad::silu(pointwise(tp, *ps, m.pn("fuse.corr"), ad::concat_last({c_bwd, c_fwd})));
    Var f_flow = ad::silu(conv3(tp, *ps, m.pn("fuse.flow"), ad::concat_last({f_bwd, f_fwd})));

    Var cat = ad::concat_last({f_corr, f_flow, f_mop});
    Var t1 = ad::silu(pointwise(tp, *ps, m.pn("me.pw1"), cat));
    Var t2 = ad::silu(ad::depthwise_conv2d(t1, ps->use(tp, m.pn("me.dw.w")),
                                           ps->use(tp, m.pn("me.dw.b")), 3));
    Var t3 = pointwise(tp, *ps, m.pn("me.pw2"), t2);
    Var f_motion = ad::slice_last(t3, 0, m.cfg.motion_w);
    motion_state = ad::slice_last(t3, m.cfg.motion_w, m.cfg.motion_w + m.cfg.m_state);

    Var gin = ad::concat_last({f_motion, ctx});
    Var hz = ad::concat_last({h, gin});
    Var z = ad::sigmoid(conv3(tp, *ps, m.pn("gru.z"), hz));
    Var r = ad::sigmoid(conv3(tp, *ps, m.pn("gru.r"), hz));
    Var hc = ad::tanh_op(conv3(tp, *ps, m.pn("gru.h"), ad::concat_last({ad::mul(r, h), gin})));
    h = ad::add(ad::mul(ad::affine(z, -1.0, 1.0), h), ad::mul(z, hc));

    Var dec = conv3(tp, *ps, m.pn("dec.c2"), ad::silu(conv3(tp, *ps, m.pn("dec.c1"), h)));
    if (!dec.val().all_finite())
        throw NumericError("refinement overflow at iteration " + std::to_string(k));
    f_bwd = ad::add(f_bwd, ad::slice_last(dec, 0, 2));
    f_fwd = ad::add(f_fwd, ad::slice_last(dec, 2, 4));
    ++k;
    Var up_f = ad::upsample_flow8(f_fwd);
    Var up_b = ad::upsample_flow8(f_bwd);
    if (orig_h != up_f.shape()[0] || orig_w != up_f.shape()[1]) {
        up_f = ad::crop_topleft(up_f, orig_h, orig_w);
        up_b = ad::crop_topleft(up_b, orig_h, orig_w);
    }
    iter_fwd_full.push_back(up_f);
    iter_bwd_full.push_back(up_b);
}

TrofSession trof_setup(Tape& t, ParamStore& ps, const FlowModel& m, const Tensor& e_prev,
                       const Tensor& e_ctr, const Tensor& e_next) {
    if (e_prev.shape != e_ctr.shape || e_ctr.shape != e_next.shape)
        throw ValidationError("trof: representation shapes differ");
    TrofSession s;
    s.t = &t;
    s.ps = &ps;
    s.model = &m;
    EncodeVars prev = encode_ad(t, ps, m.encoder, e_prev);
    EncodeVars ctr = encode_ad(t, ps, m.encoder, e_ctr);
    EncodeVars next = encode_ad(t, ps, m.encoder, e_next);
    s.vol_fwd = build_corr_volume_ad(t, ctr.features, next.features, m.cfg.levels, m.cfg.radius);
    s.vol_bwd = build_corr_volume_ad(t, ctr.features, prev.features, m.cfg.levels, m.cfg.radius);
    s.ctx = ctr.context;
    s.h = ad::tanh_op(s.ctx);
    s.cells_h = ctr.features.shape()[0];
    s.cells_w = ctr.features.shape()[1];
    s.orig_h = ctr.orig_h;
    s.orig_w = ctr.orig_w;
    s.f_fwd = t.constant(Tensor({s.cells_h, s.cells_w, 2}));
    s.f_bwd = t.constant(Tensor({s.cells_h, s.cells_w, 2}));
    return s;
}

CorrelationVolume build_correlation_volume(const FeatureMap& f_src, const FeatureMap& f_tgt,
                                           int levels, int radius) {
    if (f_src.data.shape != f_tgt.data.shape)
        throw ValidationError("build_correlation_volume: feature shape mismatch");
    Tape t;
    CorrVolumeVars v = build_corr_volume_ad(t, t.constant(f_src.data), t.constant(f_tgt.data),
                                            levels, radius);
    CorrelationVolume vol;
    vol.radius = radius;
    vol.src_h = f_src.height();
    vol.src_w = f_src.width();
    for (const Var& lvl : v.levels) vol.pyramid.push_back(lvl.val());
    return vol;
}

Tensor lookup(const CorrelationVolume& vol, const FlowField& flow) {
    if (flow.height() != vol.src_h || flow.width() != vol.src_w)
        throw ValidationError("lookup: flow grid does not match volume source grid");
    Tape t;
    CorrVolumeVars v;
    v.radius = vol.radius;
    v.h = vol.src_h;
    v.w = vol.src_w;
    for (const Tensor& lvl : vol.pyramid) v.levels.push_back(t.constant(lvl));
    return lookup_ad(v, t.constant(flow.data)).val();
}

FusedFeatures fuse_features(const FlowModel& m, ParamStore& ps, const Tensor& c_bwd,
                            const Tensor& c_fwd, const FlowField& f_bwd, const FlowField& f_fwd) {
    if (c_bwd.shape != c_fwd.shape || f_bwd.data.shape != f_fwd.data.shape)
        throw ValidationError("fuse_features: shape mismatch");
    Tape t;
    FusedFeatures out;
    out.f_corr = ad::silu(pointwise(t, ps, m.pn("fuse.corr"),
                                    ad::concat_last({t.constant(c_bwd), t.constant(c_fwd)})))
                     .val();
    out.f_flow = ad::silu(conv3(t, ps, m.pn("fuse.flow"),
                                ad::concat_last({t.constant(f_bwd.data), t.constant(f_fwd.data)})))
                     .val();
    return out;
}

std::pair<Tensor, Tensor> motion_encoder(const FlowModel& m, ParamStore& ps, const Tensor& f_corr,
                                         const Tensor& f_flow, const Tensor& f_mop) {
    if (f_corr.dim(0) != f_flow.dim(0) || f_corr.dim(0) != f_mop.dim(0) ||
        f_corr.dim(1) != f_flow.dim(1) || f_corr.dim(1) != f_mop.dim(1))
        throw ValidationError("motion_encoder: spatial shape mismatch");
    Tape t;
    Var cat = ad::concat_last({t.constant(f_corr), t.constant(f_flow), t.constant(f_mop)});
    Var t1 = ad::silu(pointwise(t, ps, m.pn("me.pw1"), cat));
    Var t2 = ad::silu(ad::depthwise_conv2d(t1, ps.use(t, m.pn("me.dw.w")), ps.use(t, m.pn("me.dw.b")), 3));
    Var t3 = pointwise(t, ps, m.pn("me.pw2"), t2);
    return {ad::slice_last(t3, 0, m.cfg.motion_w).val(),
            ad::slice_last(t3, m.cfg.motion_w, m.cfg.motion_w + m.cfg.m_state).val()};
}

RefinementState update_and_decode(const FlowModel& m, ParamStore& ps, const Tensor& f_motion,
                                  const Tensor& ctx, const RefinementState& state) {
    Tape t;
    Var h = t.constant(state.h);
    Var gin = ad::concat_last({t.constant(f_motion), t.constant(ctx)});
    Var hz = ad::concat_last({h, gin});
    Var z = ad::sigmoid(conv3(t, ps, m.pn("gru.z"), hz));
    Var r = ad::sigmoid(conv3(t, ps, m.pn("gru.r"), hz));
    Var hc = ad::tanh_op(conv3(t, ps, m.pn("gru.h"), ad::concat_last({ad::mul(r, h), gin})));
    Var h_new = ad::add(ad::mul(ad::affine(z, -1.0, 1.0), h), ad::mul(z, hc));
    Var dec = conv3(t, ps, m.pn("dec.c2"), ad::silu(conv3(t, ps, m.pn("dec.c1"), h_new)));
    if (!dec.val().all_finite())
        throw NumericError("refinement overflow at iteration " + std::to_string(state.k));
    RefinementState out;
    out.h = h_new.val();
    out.f_bwd = state.f_bwd;
    out.f_fwd = state.f_fwd;
    out.f_bwd.data.add_(ad::slice_last(dec, 0, 2).val());
    out.f_fwd.data.add_(ad::slice_last(dec, 2, 4).val());
    out.k = state.k + 1;
    return out;
}

FlowField upsample_flow(const FlowField& f) {
    if (f.stride != 8) throw ValidationError("upsample_flow: expected a stride-8 field");
    Tape t;
    FlowField out;
    out.data = ad::upsample_flow8(t.constant(f.data)).val();
    out.stride = 1;
    out.direction = f.direction;
    return out;
}

TrofResult trof_forward(const FlowModel& m, ParamStore& ps, const EventRepresentation& e_prev,
                        const EventRepresentation& e_ctr, const EventRepresentation& e_next,
                        int k_iters) {
    if (k_iters < 1) throw ValidationError("trof_forward: need K >= 1");
    Tape t;
    TrofSession s = trof_setup(t, ps, m, e_prev.data, e_ctr.data, e_next.data);
    for (int k = 0; k < k_iters; ++k) s.step(s.zero_mop_features());
    TrofResult r;
    r.f_fwd = FlowField{s.iter_fwd_full.back().val(), 1, FlowDirection::Forward};
    r.f_bwd = FlowField{s.iter_bwd_full.back().val(), 1, FlowDirection::Backward};
    r.motion_state = s.motion_state.val();
    for (int k = 0; k < k_iters; ++k)
        r.per_iter.push_back({FlowField{s.iter_fwd_full[static_cast<size_t>(k)].val(), 1, FlowDirection::Forward},
                              FlowField{s.iter_bwd_full[static_cast<size_t>(k)].val(), 1, FlowDirection::Backward}});
    return r;
}

}  // namespace evflow

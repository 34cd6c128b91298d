#include "evflow/encoder.hpp"

#include <cmath>

namespace evflow {

using ad::ParamStore;
using ad::Tape;
using ad::Var;

EncoderConfig encoder_config_for_variant(const std::string& variant, int in_channels) {
    EncoderConfig cfg;
    cfg.in_channels = in_channels;
    if (variant == "base") {
        cfg.d_model = 64;
        cfg.n_blocks = 4;
    } else if (variant == "small") {
        cfg.d_model = 48;
        cfg.n_blocks = 3;
    } else if (variant == "nano") {
        cfg.d_model = 32;
        cfg.n_blocks = 2;
    } else {
        throw ValidationError("unknown variant: " + variant);
    }
    return cfg;
}

namespace {

void init_normal(ad::Param& p, uint64_t seed, double sd) {
    RandomStream rng(seed);
    rng.fill_normal(p.value, sd);
}

ad::Param& create_conv(ParamStore& ps, const std::string& name, int kh, int kw, int ci, int co,
                       uint64_t master) {
    ad::Param& w = ps.create(name + ".w", {kh, kw, ci, co});
    init_normal(w, derive_seed(master, name + ".w"), 1.0 / std::sqrt(static_cast<double>(kh * kw * ci)));
    ps.create(name + ".b", {co});
    return w;
}

ad::Param& create_linear(ParamStore& ps, const std::string& name, int ci, int co, uint64_t master,
                         double sd_scale = 1.0) {
    ad::Param& w = ps.create(name + ".w", {ci, co});
    init_normal(w, derive_seed(master, name + ".w"), sd_scale / std::sqrt(static_cast<double>(ci)));
    ps.create(name + ".b", {co});
    return w;
}

int stem_mid(const EncoderConfig& cfg) { return std::max(16, cfg.d_model / 2); }

}  // namespace

EncoderModel build_encoder(const EncoderConfig& cfg, InitKind init, uint64_t seed, ParamStore& ps,
                           bool train_perturbation, const std::string& prefix) {
    if (train_perturbation && init != InitKind::Ptd)
        throw ValidationError("trainable perturbation requires ptd init");
    EncoderModel m;
    m.cfg = cfg;
    m.prefix = prefix;
    m.init = init;
    m.train_perturbation = train_perturbation;

    int d = cfg.d_model, n = cfg.n_state, mid = stem_mid(cfg);
    create_conv(ps, prefix + ".stem.c1", 3, 3, cfg.in_channels, mid, seed);
    create_conv(ps, prefix + ".stem.c2", 3, 3, mid, d, seed);
    create_conv(ps, prefix + ".stem.c3", 3, 3, d, d, seed);
    ad::Param& pos = ps.create(prefix + ".pos", {cfg.pos_h, cfg.pos_w, d});
    init_normal(pos, derive_seed(seed, prefix + ".pos"), 0.02);

    ssm::StateMatrix a = ssm::hippo_legs(n);
    m.systems.resize(static_cast<size_t>(cfg.n_blocks));
    for (int blk = 0; blk < cfg.n_blocks; ++blk) {
        ps.create(m.bn(blk, "ln.gamma"), {d}).value.fill(1.0);
        ps.create(m.bn(blk, "ln.beta"), {d});
        create_linear(ps, m.bn(blk, "gate"), d, d, seed);
        create_linear(ps, m.bn(blk, "out"), d, d, seed, 0.1);
        for (int dir = 0; dir < cfg.scan_dirs; ++dir) {
            std::string base = m.spn(blk, dir, "");
            ssm::DiagonalizedSystem sys;
            Tensor e_init({n, n});
            if (init == InitKind::Ptd) {
                uint64_t s0 = derive_seed(seed, base + "E");
                for (int attempt = 0;; ++attempt) {
                    if (attempt >= 64)
                        throw NumericError("could not find a diagonalizable perturbation for " + base);
                    ssm::PerturbationMatrix e =
                        ssm::sample_perturbation(a, cfg.perturb_scale, s0 + static_cast<uint64_t>(attempt));
                    try {
                        sys = ssm::perturb_then_diagonalize(a, e);
                    } catch (const DecompositionRejected&) {
                        continue;
                    }
                    e_init = e.entries;
                    break;
                }
            } else {
                sys = ssm::hippo_spectrum_system(n);
            }
            sys.d_model = d;
            sys.delta_min = cfg.delta_min;
            sys.delta_max = cfg.delta_max;
            sys.lambda_grad_re = Tensor({n});
            sys.lambda_grad_im = Tensor({n});
            m.systems[static_cast<size_t>(blk)].push_back(std::move(sys));

            ad::Param& e_param = ps.create(m.spn(blk, dir, "E"), {n, n},
                                           train_perturbation && init == InitKind::Ptd);
            e_param.value = e_init;
            create_linear(ps, m.spn(blk, dir, "w_b"), d, n, seed);
            create_linear(ps, m.spn(blk, dir, "w_c"), d, n, seed);
            ad::Param& wd = ps.create(m.spn(blk, dir, "w_delta.w"), {d, d});
            init_normal(wd, derive_seed(seed, m.spn(blk, dir, "w_delta.w")),
                        0.1 / std::sqrt(static_cast<double>(d)));
            ps.create(m.spn(blk, dir, "w_delta.b"), {d}).value.fill(std::log(std::expm1(1e-2)));
            ps.create(m.spn(blk, dir, "d_skip"), {d}).value.fill(1.0);
        }
    }
    create_linear(ps, prefix + ".head.feat", d, d, seed);
    create_linear(ps, prefix + ".head.ctx", d, d, seed);
    return m;
}

void refresh_spectra(EncoderModel& m, ParamStore& ps) {
    if (m.init != InitKind::Ptd) return;
    ssm::StateMatrix a = ssm::hippo_legs(m.cfg.n_state);
    for (int blk = 0; blk < m.cfg.n_blocks; ++blk) {
        for (int dir = 0; dir < m.cfg.scan_dirs; ++dir) {
            ssm::PerturbationMatrix e;
            e.scale = m.cfg.perturb_scale;
            e.entries = ps.at(m.spn(blk, dir, "E")).value;
            ssm::DiagonalizedSystem fresh = ssm::perturb_then_diagonalize(a, e);
            ssm::DiagonalizedSystem& sys = m.systems[static_cast<size_t>(blk)][static_cast<size_t>(dir)];
            sys.eigenvalues = std::move(fresh.eigenvalues);
            sys.basis = std::move(fresh.basis);
            sys.basis_inv = std::move(fresh.basis_inv);
            sys.recon_error = fresh.recon_error;
            sys.projected_count = fresh.projected_count;
        }
    }
}

void propagate_lambda_grads(EncoderModel& m, ParamStore& ps) {
    if (!m.train_perturbation) return;
    int n = m.cfg.n_state;
    for (int blk = 0; blk < m.cfg.n_blocks; ++blk) {
        for (int dir = 0; dir < m.cfg.scan_dirs; ++dir) {
            ssm::DiagonalizedSystem& sys = m.systems[static_cast<size_t>(blk)][static_cast<size_t>(dir)];
            Tensor& eg = ps.at(m.spn(blk, dir, "E")).grad;
            for (int k = 0; k < n; ++k) {
                ssm::cplx lhat(sys.lambda_grad_re.at(k), sys.lambda_grad_im.at(k));
                if (lhat == ssm::cplx(0.0)) continue;
                for (int i = 0; i < n; ++i) {
                    ssm::cplx u = sys.basis_inv[static_cast<size_t>(k) * n + i];
                    for (int j = 0; j < n; ++j) {
                        ssm::cplx v = sys.basis[static_cast<size_t>(j) * n + k];
                        eg.at(i, j) += (std::conj(lhat) * u * v).real();
                    }
                }
            }
            sys.lambda_grad_re.fill(0.0);
            sys.lambda_grad_im.fill(0.0);
        }
    }
}

void zero_lambda_grads(EncoderModel& m) {
    for (auto& blk : m.systems)
        for (auto& sys : blk) {
            sys.lambda_grad_re.fill(0.0);
            sys.lambda_grad_im.fill(0.0);
        }
}

Tensor pad_to_multiple(const Tensor& x, int multiple) {
    int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    int ph = (h + multiple - 1) / multiple * multiple;
    int pw = (w + multiple - 1) / multiple * multiple;
    if (ph == h && pw == w) return x;
    Tensor out({ph, pw, c});
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
            for (int j = 0; j < c; ++j) out.at(y, xx, j) = x.at(y, xx, j);
    return out;
}

std::vector<int> scan_order(int h, int w, int dir) {
    int l = h * w;
    std::vector<int> idx(static_cast<size_t>(l));
    switch (dir) {
        case 0:  // row-major raster
            for (int i = 0; i < l; ++i) idx[static_cast<size_t>(i)] = i;
            break;
        case 1:  // reversed raster
            for (int i = 0; i < l; ++i) idx[static_cast<size_t>(i)] = l - 1 - i;
            break;
        case 2:  // column-major
            for (int i = 0; i < l; ++i) idx[static_cast<size_t>(i)] = (i % h) * w + i / h;
            break;
        case 3:  // reversed column-major
            for (int i = 0; i < l; ++i) {
                int r = l - 1 - i;
                idx[static_cast<size_t>(i)] = (r % h) * w + r / h;
            }
            break;
        default:
            throw ValidationError("scan_order: bad direction");
    }
    return idx;
}

std::vector<int> inverse_order(const std::vector<int>& idx) {
    std::vector<int> inv(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) inv[static_cast<size_t>(idx[i])] = static_cast<int>(i);
    return inv;
}

namespace {

Var pointwise(Tape& t, ParamStore& ps, const std::string& name, Var x) {
    const auto& sh = x.shape();
    int h = sh[0], w = sh[1], c = sh[2];
    Var flat = ad::reshape(x, {h * w, c});
    Var y = ad::add_bias(ad::matmul(flat, ps.use(t, name + ".w")), ps.use(t, name + ".b"));
    return ad::reshape(y, {h, w, y.shape()[1]});
}

Var conv_layer(Tape& t, ParamStore& ps, const std::string& name, Var x, int stride, int pad) {
    return ad::conv2d(x, ps.use(t, name + ".w"), ps.use(t, name + ".b"), stride, pad);
}

}  // namespace

Var stem_ad(Tape& t, ParamStore& ps, const EncoderModel& m, Var x) {
    const auto& sh = x.shape();
    if (sh[0] % 8 != 0 || sh[1] % 8 != 0)
        throw ValidationError("stem: input dims must be multiples of 8 (pad first)");
    if (sh[2] != m.cfg.in_channels) throw ValidationError("stem: channel count mismatch");
    Var h1 = ad::silu(conv_layer(t, ps, m.prefix + ".stem.c1", x, 2, 1));
    Var h2 = ad::silu(conv_layer(t, ps, m.prefix + ".stem.c2", h1, 2, 1));
    return conv_layer(t, ps, m.prefix + ".stem.c3", h2, 2, 1);
}

Var pse_block_ad(Tape& t, ParamStore& ps, const EncoderModel& m, int blk, Var x,
                 ssm::ScanMode mode) {
    const auto& sh = x.shape();
    int h = sh[0], w = sh[1], d = sh[2];
    int l = h * w;
    const ssm::DiagonalizedSystem& sys0 = m.systems[static_cast<size_t>(blk)][0];
    Var u = ad::layer_norm(x, ps.use(t, m.bn(blk, "ln.gamma")), ps.use(t, m.bn(blk, "ln.beta")));
    Var uflat = ad::reshape(u, {l, d});
    std::vector<Var> dirs;
    for (int dir = 0; dir < m.cfg.scan_dirs; ++dir) {
        const ssm::DiagonalizedSystem& sys = m.systems[static_cast<size_t>(blk)][static_cast<size_t>(dir)];
        std::vector<int> order = scan_order(h, w, dir);
        Var seq = ad::permute_rows(uflat, order);
        Var b = ad::matmul(seq, ps.use(t, m.spn(blk, dir, "w_b.w")));
        b = ad::add_bias(b, ps.use(t, m.spn(blk, dir, "w_b.b")));
        Var c = ad::matmul(seq, ps.use(t, m.spn(blk, dir, "w_c.w")));
        c = ad::add_bias(c, ps.use(t, m.spn(blk, dir, "w_c.b")));
        Var dpre = ad::add_bias(ad::matmul(seq, ps.use(t, m.spn(blk, dir, "w_delta.w"))),
                                ps.use(t, m.spn(blk, dir, "w_delta.b")));
        Var delta = ad::clamp(ad::softplus(dpre), sys.delta_min, sys.delta_max);
        int n = sys.n_state;
        Tensor lr({n}), li({n});
        for (int k = 0; k < n; ++k) {
            lr.at(k) = sys.eigenvalues[static_cast<size_t>(k)].real();
            li.at(k) = sys.eigenvalues[static_cast<size_t>(k)].imag();
        }
        Var lam_re, lam_im;
        if (m.train_perturbation) {
            auto& mut = const_cast<ssm::DiagonalizedSystem&>(sys);
            lam_re = t.leaf(lr, &mut.lambda_grad_re);
            lam_im = t.leaf(li, &mut.lambda_grad_im);
        } else {
            lam_re = t.constant(lr);
            lam_im = t.constant(li);
        }
        Var d_skip = ps.use(t, m.spn(blk, dir, "d_skip"));
        Var y;
        try {
            y = ssm::scan_op(seq, delta, b, c, d_skip, lam_re, lam_im, mode);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (block " + std::to_string(blk) + ")");
        }
        dirs.push_back(ad::permute_rows(y, inverse_order(order)));
    }
    (void)sys0;
    Var ym = ad::mean_of(dirs);
    Var g = ad::sigmoid(ad::add_bias(ad::matmul(uflat, ps.use(t, m.bn(blk, "gate.w"))),
                                     ps.use(t, m.bn(blk, "gate.b"))));
    Var mixed = ad::add_bias(ad::matmul(ad::mul(g, ym), ps.use(t, m.bn(blk, "out.w"))),
                             ps.use(t, m.bn(blk, "out.b")));
    return ad::add(x, ad::reshape(mixed, {h, w, d}));
}

EncodeVars encode_ad(Tape& t, ParamStore& ps, const EncoderModel& m, const Tensor& rep_data) {
    if (!rep_data.all_finite()) throw NumericError("encode: non-finite input representation");
    EncodeVars out;
    out.orig_h = rep_data.dim(0);
    out.orig_w = rep_data.dim(1);
    Tensor padded = pad_to_multiple(rep_data, 8);
    Var x = stem_ad(t, ps, m, t.constant(std::move(padded)));
    const auto& sh = x.shape();
    Var pos = ps.use(t, m.prefix + ".pos");
    if (sh[0] != m.cfg.pos_h || sh[1] != m.cfg.pos_w)
        pos = ad::resize_bilinear(pos, sh[0], sh[1]);
    x = ad::add(x, pos);
    for (int blk = 0; blk < m.cfg.n_blocks; ++blk) x = pse_block_ad(t, ps, m, blk, x);
    out.features = pointwise(t, ps, m.prefix + ".head.feat", x);
    out.context = pointwise(t, ps, m.prefix + ".head.ctx", x);
    return out;
}

FeatureMap stem(const EncoderModel& m, ParamStore& ps, const EventRepresentation& rep) {
    Tape t;
    Tensor padded = pad_to_multiple(rep.data, 8);
    Var y = stem_ad(t, ps, m, t.constant(std::move(padded)));
    FeatureMap f;
    f.data = y.val();
    f.stride = 8;
    f.orig_h = rep.height();
    f.orig_w = rep.width();
    return f;
}

FeatureMap pse_block(const EncoderModel& m, ParamStore& ps, int blk, const FeatureMap& f) {
    Tape t;
    Var y = pse_block_ad(t, ps, m, blk, t.constant(f.data));
    FeatureMap out = f;
    out.data = y.val();
    return out;
}

EncodeResult encode(const EncoderModel& m, ParamStore& ps, const EventRepresentation& rep) {
    Tape t;
    EncodeVars v = encode_ad(t, ps, m, rep.data);
    EncodeResult r;
    r.features = FeatureMap{v.features.val(), 8, v.orig_h, v.orig_w};
    r.context = FeatureMap{v.context.val(), 8, v.orig_h, v.orig_w};
    return r;
}

}  // namespace evflow

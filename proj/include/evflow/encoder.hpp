#pragma once

#include <string>
#include <vector>

#include "evflow/autodiff.hpp"
#include "evflow/events.hpp"
#include "evflow/ssm.hpp"

namespace evflow {

// Dense feature map at a fixed downsampling stride. orig_h/orig_w are the
// pre-padding input dimensions (h = ceil(orig_h/stride)).
struct FeatureMap {
    Tensor data;  // [h, w, d]
    int stride = 8;
    int orig_h = 0;
    int orig_w = 0;

    int height() const { return data.dim(0); }
    int width() const { return data.dim(1); }
    int channels() const { return data.dim(2); }
};

enum class InitKind { Ptd, Hippo };

struct EncoderConfig {
    int in_channels = 12;
    int d_model = 64;
    int n_blocks = 4;
    int n_state = 16;
    int scan_dirs = 4;  // 4: both rasters + both column orders; 2: rasters only
    int pos_h = 8, pos_w = 8;
    double delta_min = 1e-3;
    double delta_max = 1e-1;
    double perturb_scale = 0.1;
};

// Encoder trunk: x8 strided stem, learned positional embedding, n_blocks of
// layer-normed multi-directional selective scans with gated mixing and
// residuals, then separate feature/context heads.
struct EncoderModel {
    EncoderConfig cfg;
    std::string prefix;
    bool train_perturbation = false;
    InitKind init = InitKind::Ptd;
    // systems[block][dir]; projection tensors live in the ParamStore, these
    // hold the spectral data (eigenvalues, bases, grad buffers).
    std::vector<std::vector<ssm::DiagonalizedSystem>> systems;

    std::string spn(int blk, int dir, const std::string& leaf) const {
        return prefix + ".blk" + std::to_string(blk) + ".dir" + std::to_string(dir) + "." + leaf;
    }
    std::string bn(int blk, const std::string& leaf) const {
        return prefix + ".blk" + std::to_string(blk) + "." + leaf;
    }
};

EncoderConfig encoder_config_for_variant(const std::string& variant, int in_channels);

// Registers all parameters in `ps` (seeded per name) and constructs the
// per-direction systems. PTD systems resample the perturbation seed until the
// decomposition passes the reconstruction gate.
EncoderModel build_encoder(const EncoderConfig& cfg, InitKind init, uint64_t seed,
                           ad::ParamStore& ps, bool train_perturbation,
                           const std::string& prefix = "enc");

// Rebuild spectra from the E parameters currently in the store (used when the
// perturbation is trainable, and after checkpoint load).
void refresh_spectra(EncoderModel& m, ad::ParamStore& ps);

// Map accumulated eigenvalue gradients onto the E parameters via first-order
// perturbation theory (d lambda_k = u_k^T dE v_k) and clear the buffers.
void propagate_lambda_grads(EncoderModel& m, ad::ParamStore& ps);
void zero_lambda_grads(EncoderModel& m);

struct EncodeVars {
    ad::Var features;
    ad::Var context;
    int orig_h = 0, orig_w = 0;
};

// Differentiable pipeline pieces.
ad::Var stem_ad(ad::Tape& t, ad::ParamStore& ps, const EncoderModel& m, ad::Var x);
ad::Var pse_block_ad(ad::Tape& t, ad::ParamStore& ps, const EncoderModel& m, int blk, ad::Var x,
                     ssm::ScanMode mode = ssm::ScanMode::Recurrent);
EncodeVars encode_ad(ad::Tape& t, ad::ParamStore& ps, const EncoderModel& m,
                     const Tensor& rep_data);

// Plain wrappers used by tests and inference.
FeatureMap stem(const EncoderModel& m, ad::ParamStore& ps, const EventRepresentation& rep);
FeatureMap pse_block(const EncoderModel& m, ad::ParamStore& ps, int blk, const FeatureMap& f);
struct EncodeResult {
    FeatureMap features;
    FeatureMap context;
};
EncodeResult encode(const EncoderModel& m, ad::ParamStore& ps, const EventRepresentation& rep);

// Zero-pad [h,w,c] on the bottom/right to multiples of `multiple`.
Tensor pad_to_multiple(const Tensor& x, int multiple);

// Scan orderings for an h x w grid. Forward index maps sequence position to
// flat position; the inverse scatters scan outputs back.
std::vector<int> scan_order(int h, int w, int dir);
std::vector<int> inverse_order(const std::vector<int>& idx);

}  // namespace evflow

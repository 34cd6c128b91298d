#pragma once

#include <functional>
#include <optional>
#include <ostream>

#include <json.hpp>

#include "evflow/dataset.hpp"
#include "evflow/metrics.hpp"
#include "evflow/motion_prop.hpp"
#include "evflow/triplet_flow.hpp"

namespace evflow {

struct TrainConfig {
    double lr_max = 4e-4;
    int total_steps = 2000;
    int batch = 2;
    uint64_t seed = 1;
    double lambda_ptd = 0.0;
    double gamma = 0.8;  // per-iteration loss weight
    std::string variant = "nano";
    std::string init = "ptd";  // or "hippo"
    std::string mode = "trof"; // or "mop"
    int k_iters = 6;
    int n_state = 16;
    int scan_dirs = 4;
    bool train_perturbation = false;
    double weight_decay = 1e-4;
    double grad_clip = 1.0;
    int in_channels = 12;

    static TrainConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;
};

struct LossReport {
    double total = 0.0;
    double flow_l1 = 0.0;
    double ptd_penalty = 0.0;
    std::vector<double> per_iteration;
};

// Gamma-weighted bidirectional L1 over the per-iteration flow estimates:
// sum_k gamma^{K-1-k} * mean_valid(|f_fwd^k - gt_fwd|_1 + |f_bwd^k - gt_bwd|_1).
ad::Var bidirectional_l1_loss_ad(ad::Tape& t,
                                 const std::vector<std::pair<ad::Var, ad::Var>>& per_iter,
                                 const FlowField& gt_fwd, const FlowField& gt_bwd,
                                 const Tensor& valid_mask, double gamma,
                                 std::vector<double>* per_iteration = nullptr);

// Plain variant for tests.
LossReport bidirectional_l1_loss(const std::vector<std::pair<FlowField, FlowField>>& per_iter,
                                 const FlowField& gt_fwd, const FlowField& gt_bwd,
                                 const Tensor& valid_mask, double gamma);

double ptd_penalty(const ssm::PerturbationMatrix& e);

// Linear warmup from lr_max/25 over the first 30% of steps, then cosine decay
// to lr_max/1e4 at the final step.
double lr_schedule(int step, int total_steps, double lr_max);

struct GradCheckResult {
    double max_rel_err = 0.0;
    int checked = 0;
};

// Central finite differences on <= max_params randomly chosen trainable
// entries. `grad_fn` must run backward (grads accumulate into ps);
// `value_fn` only evaluates. Throws ValidationError on non-determinism.
GradCheckResult grad_check(ad::ParamStore& ps, const std::function<double()>& value_fn,
                           const std::function<double()>& grad_fn, int max_params, uint64_t seed,
                           double eps = 1e-4);

// A model plus its parameters and the settings it was built from.
struct ModelBundle {
    TrainConfig cfg;
    ad::ParamStore ps;
    FlowModel model;
};

ModelBundle build_model_bundle(const TrainConfig& cfg);
void save_model(const std::string& out_path, const ModelBundle& mb);
ModelBundle load_model(const std::string& ckpt_path);

struct TrainResult {
    std::vector<std::string> log_lines;  // one JSON object per step
    LossReport last;
    int steps_run = 0;
};

// Deterministic single-threaded training; aborts with NumericError (carrying
// the step index and an eigenvalue summary) when the loss goes non-finite.
TrainResult train_toy(ModelBundle& mb, const Dataset& data, std::ostream* log_stream = nullptr);

struct EvalOptions {
    int k_iters = -1;  // -1: use the checkpoint's config
    bool mop_exchange = true;
    std::string dump_flows_dir;  // empty: skip writing flow files
};

struct EvalResult {
    EvalReport aggregate;
    std::optional<EvalReport> central;  // propagation mode only
    std::vector<EvalReport> per_sample;
    nlohmann::json to_json() const;
};

EvalResult run_eval(ModelBundle& mb, const Dataset& data, const std::string& mode,
                    const EvalOptions& opts = {});

// Trains under init=ptd and init=hippo with a shared seed and reports both
// evaluation errors side by side.
nlohmann::json ablate_init(const TrainConfig& base, const Dataset& train_data,
                           const Dataset& eval_data, std::ostream* table_out);

// Spectral report: eigenvalues, Frobenius ratio, min eigenvalue gap, max
// |exp(delta*lambda)| over a delta grid, per system.
nlohmann::json inspect_ssm(const ModelBundle& mb);

}  // namespace evflow

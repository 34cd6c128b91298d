#include "evflow/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "evflow/checkpoint.hpp"

namespace evflow {

namespace fs = std::filesystem;
using ad::ParamStore;
using ad::Tape;
using ad::Var;
using nlohmann::json;

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    if (j.contains("lr_max")) c.lr_max = j["lr_max"].get<double>();
    if (j.contains("total_steps")) c.total_steps = j["total_steps"].get<int>();
    if (j.contains("batch")) c.batch = j["batch"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("lambda_ptd")) c.lambda_ptd = j["lambda_ptd"].get<double>();
    if (j.contains("gamma")) c.gamma = j["gamma"].get<double>();
    if (j.contains("variant")) c.variant = j["variant"].get<std::string>();
    if (j.contains("init")) c.init = j["init"].get<std::string>();
    if (j.contains("mode")) c.mode = j["mode"].get<std::string>();
    if (j.contains("k_iters")) c.k_iters = j["k_iters"].get<int>();
    if (j.contains("n_state")) c.n_state = j["n_state"].get<int>();
    if (j.contains("scan_dirs")) c.scan_dirs = j["scan_dirs"].get<int>();
    if (j.contains("train_perturbation")) c.train_perturbation = j["train_perturbation"].get<bool>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("grad_clip")) c.grad_clip = j["grad_clip"].get<double>();
    if (j.contains("in_channels")) c.in_channels = j["in_channels"].get<int>();
    c.validate();
    return c;
}

json TrainConfig::to_json() const {
    json j;
    j["lr_max"] = lr_max;
    j["total_steps"] = total_steps;
    j["batch"] = batch;
    j["seed"] = seed;
    j["lambda_ptd"] = lambda_ptd;
    j["gamma"] = gamma;
    j["variant"] = variant;
    j["init"] = init;
    j["mode"] = mode;
    j["k_iters"] = k_iters;
    j["n_state"] = n_state;
    j["scan_dirs"] = scan_dirs;
    j["train_perturbation"] = train_perturbation;
    j["weight_decay"] = weight_decay;
    j["grad_clip"] = grad_clip;
    j["in_channels"] = in_channels;
    return j;
}

void TrainConfig::validate() const {
    if (lr_max <= 0.0) throw ValidationError("config: lr_max must be positive");
    if (gamma <= 0.0 || gamma > 1.0) throw ValidationError("config: gamma must be in (0, 1]");
    if (lambda_ptd < 0.0) throw ValidationError("config: lambda_ptd must be >= 0");
    if (total_steps < 0) throw ValidationError("config: total_steps must be >= 0");
    if (batch < 1) throw ValidationError("config: batch must be >= 1");
    if (k_iters < 1) throw ValidationError("config: k_iters must be >= 1");
    if (init != "ptd" && init != "hippo") throw ValidationError("config: init must be ptd or hippo");
    if (mode != "trof" && mode != "mop") throw ValidationError("config: mode must be trof or mop");
    if (scan_dirs != 2 && scan_dirs != 4) throw ValidationError("config: scan_dirs must be 2 or 4");
    if (train_perturbation && init != "ptd")
        throw ValidationError("config: train_perturbation requires init=ptd");
}

Var bidirectional_l1_loss_ad(Tape& t, const std::vector<std::pair<Var, Var>>& per_iter,
                             const FlowField& gt_fwd, const FlowField& gt_bwd,
                             const Tensor& valid_mask, double gamma,
                             std::vector<double>* per_iteration) {
    if (per_iter.empty()) throw ValidationError("loss: no iterations");
    int k_total = static_cast<int>(per_iter.size());
    Var total;
    if (per_iteration) per_iteration->clear();
    for (int k = 0; k < k_total; ++k) {
        Var lf = ad::masked_l1_mean(per_iter[static_cast<size_t>(k)].first, gt_fwd.data, valid_mask);
        Var lb = ad::masked_l1_mean(per_iter[static_cast<size_t>(k)].second, gt_bwd.data, valid_mask);
        Var lk = ad::add(lf, lb);
        if (per_iteration) per_iteration->push_back(lk.val().data[0]);
        double wk = std::pow(gamma, k_total - 1 - k);
        Var term = ad::scale(lk, wk);
        total = (k == 0) ? term : ad::add(total, term);
    }
    return total;
}

LossReport bidirectional_l1_loss(const std::vector<std::pair<FlowField, FlowField>>& per_iter,
                                 const FlowField& gt_fwd, const FlowField& gt_bwd,
                                 const Tensor& valid_mask, double gamma) {
    Tape t;
    std::vector<std::pair<Var, Var>> vars;
    for (const auto& [f, b] : per_iter)
        vars.push_back({t.constant(f.data), t.constant(b.data)});
    LossReport r;
    Var total = bidirectional_l1_loss_ad(t, vars, gt_fwd, gt_bwd, valid_mask, gamma,
                                         &r.per_iteration);
    r.flow_l1 = total.val().data[0];
    r.total = r.flow_l1;
    return r;
}

double ptd_penalty(const ssm::PerturbationMatrix& e) { return e.entries.frobenius_norm(); }

double lr_schedule(int step, int total_steps, double lr_max) {
    if (step < 0 || step >= total_steps) throw ValidationError("lr_schedule: step out of range");
    double warm = 0.3 * total_steps;
    double lr_start = lr_max / 25.0;
    double lr_end = lr_max / 1e4;
    if (step <= warm && warm > 0.0) return lr_start + (lr_max - lr_start) * (step / warm);
    double span = std::max(1e-9, (total_steps - 1.0) - warm);
    double p = std::min(1.0, (step - warm) / span);
    return lr_end + (lr_max - lr_end) * 0.5 * (1.0 + std::cos(M_PI * p));
}

GradCheckResult grad_check(ParamStore& ps, const std::function<double()>& value_fn,
                           const std::function<double()>& grad_fn, int max_params, uint64_t seed,
                           double eps) {
    double v1 = value_fn();
    double v2 = value_fn();
    if (v1 != v2) throw ValidationError("grad_check: fragment is not deterministic");

    ps.zero_grads();
    grad_fn();
    std::map<std::string, Tensor> analytic;
    for (auto& [name, p] : ps.all())
        if (p.trainable) analytic.emplace(name, p.grad);

    // Gather a global index over all trainable entries, then sample.
    std::vector<std::pair<std::string, int64_t>> entries;
    for (auto& [name, p] : ps.all())
        if (p.trainable)
            for (int64_t i = 0; i < p.value.numel(); ++i) entries.push_back({name, i});
    if (entries.empty()) throw ValidationError("grad_check: no trainable parameters");

    RandomStream rng(seed);
    int n_check = std::min<int>(max_params, static_cast<int>(entries.size()));
    GradCheckResult res;
    for (int c = 0; c < n_check; ++c) {
        size_t pick = static_cast<size_t>(rng.uniform_int(static_cast<int>(entries.size())));
        auto [name, idx] = entries[pick];
        ad::Param& p = ps.at(name);
        double orig = p.value.data[static_cast<size_t>(idx)];
        p.value.data[static_cast<size_t>(idx)] = orig + eps;
        double fp = value_fn();
        p.value.data[static_cast<size_t>(idx)] = orig - eps;
        double fm = value_fn();
        p.value.data[static_cast<size_t>(idx)] = orig;
        double g_fd = (fp - fm) / (2.0 * eps);
        double g_an = analytic.at(name).data[static_cast<size_t>(idx)];
        double rel = std::abs(g_an - g_fd) / (std::abs(g_an) + std::abs(g_fd) + 1e-8);
        res.max_rel_err = std::max(res.max_rel_err, rel);
        ++res.checked;
    }
    return res;
}

ModelBundle build_model_bundle(const TrainConfig& cfg) {
    cfg.validate();
    ModelBundle mb;
    mb.cfg = cfg;
    FlowModelConfig fc = flow_config_for_variant(cfg.variant, cfg.in_channels);
    fc.enc.n_state = cfg.n_state;
    fc.enc.scan_dirs = cfg.scan_dirs;
    fc.k_iters = cfg.k_iters;
    InitKind init = cfg.init == "ptd" ? InitKind::Ptd : InitKind::Hippo;
    mb.model = build_flow_model(fc, init, cfg.seed, mb.ps, cfg.train_perturbation);
    return mb;
}

void save_model(const std::string& out_path, const ModelBundle& mb) {
    std::string file = out_path;
    if (fs::is_directory(out_path) || !fs::path(out_path).has_extension()) {
        fs::create_directories(out_path);
        file = (fs::path(out_path) / "checkpoint.evck").string();
    }
    json manifest;
    manifest["version"] = 1;
    manifest["config"] = mb.cfg.to_json();
    manifest["seed"] = mb.cfg.seed;
    save_checkpoint(file, manifest, mb.ps);
}

ModelBundle load_model(const std::string& ckpt_path) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    TrainConfig cfg = TrainConfig::from_json(ck.manifest.at("config"));
    ModelBundle mb = build_model_bundle(cfg);
    apply_checkpoint(ck, mb.ps);
    // Spectra follow the stored perturbations, not the construction seed.
    refresh_spectra(mb.model.encoder, mb.ps);
    return mb;
}

namespace {

double model_ptd_penalty(const ModelBundle& mb) {
    double s = 0.0;
    const EncoderModel& enc = mb.model.encoder;
    for (int blk = 0; blk < enc.cfg.n_blocks; ++blk)
        for (int dir = 0; dir < enc.cfg.scan_dirs; ++dir)
            s += mb.ps.at(enc.spn(blk, dir, "E")).value.frobenius_norm();
    return s;
}

void add_penalty_grads(ModelBundle& mb, double lambda_ptd) {
    if (lambda_ptd <= 0.0 || !mb.cfg.train_perturbation) return;
    EncoderModel& enc = mb.model.encoder;
    for (int blk = 0; blk < enc.cfg.n_blocks; ++blk)
        for (int dir = 0; dir < enc.cfg.scan_dirs; ++dir) {
            ad::Param& e = mb.ps.at(enc.spn(blk, dir, "E"));
            double norm = e.value.frobenius_norm();
            if (norm < 1e-12) continue;
            for (size_t i = 0; i < e.value.data.size(); ++i)
                e.grad.data[i] += lambda_ptd * e.value.data[i] / norm;
        }
}

void clip_grads(ParamStore& ps, double clip) {
    if (clip <= 0.0) return;
    double sq = 0.0;
    for (auto& [name, p] : ps.all())
        if (p.trainable)
            for (double g : p.grad.data) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm <= clip) return;
    double s = clip / norm;
    for (auto& [name, p] : ps.all())
        if (p.trainable) p.grad.scale_(s);
}

void adamw_step(ParamStore& ps, double lr, double weight_decay, int64_t t) {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (auto& [name, p] : ps.all()) {
        if (!p.trainable) continue;
        for (size_t i = 0; i < p.value.data.size(); ++i) {
            double g = p.grad.data[i];
            p.adam_m.data[i] = b1 * p.adam_m.data[i] + (1.0 - b1) * g;
            p.adam_v.data[i] = b2 * p.adam_v.data[i] + (1.0 - b2) * g * g;
            double mhat = p.adam_m.data[i] / c1;
            double vhat = p.adam_v.data[i] / c2;
            p.value.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.value.data[i]);
        }
    }
}

std::string eigen_summary(const ModelBundle& mb) {
    double re_min = 0.0, re_max = -1e18;
    for (const auto& blk : mb.model.encoder.systems)
        for (const auto& sys : blk)
            for (const auto& lam : sys.eigenvalues) {
                re_min = std::min(re_min, lam.real());
                re_max = std::max(re_max, lam.real());
            }
    std::ostringstream os;
    os << "eigenvalue real parts in [" << re_min << ", " << re_max << "]";
    return os.str();
}

struct SampleLoss {
    double flow_l1 = 0.0;
    double epe_final = 0.0;
    std::vector<double> per_iteration;
};

// Forward + backward for one sample; returns the (unweighted) flow loss.
SampleLoss train_sample(ModelBundle& mb, const LoadedSample& sample, double inv_batch) {
    Tape t;
    const TrainConfig& cfg = mb.cfg;
    Tensor mask = full_mask(sample.gt_fwd[0].height(), sample.gt_fwd[0].width());
    std::vector<Var> losses;
    SampleLoss out;
    std::vector<const TrofSession*> sessions;

    MopVars mop;
    TrofSession trof;
    if (cfg.mode == "trof") {
        if (sample.reps.size() != 3) throw ValidationError("train: trof mode needs 3 windows");
        trof = trof_setup(t, mb.ps, mb.model, sample.reps[0].data, sample.reps[1].data,
                          sample.reps[2].data);
        for (int k = 0; k < cfg.k_iters; ++k) trof.step(trof.zero_mop_features());
        sessions.push_back(&trof);
    } else {
        if (sample.reps.size() != 5) throw ValidationError("train: mop mode needs 5 windows");
        std::vector<Tensor> reps;
        for (const auto& r : sample.reps) reps.push_back(r.data);
        mop = mop_forward_ad(t, mb.ps, mb.model, reps, cfg.k_iters, true, cfg.seed);
        for (const TrofSession& s : mop.sessions) sessions.push_back(&s);
    }

    Var total;
    for (size_t c = 0; c < sessions.size(); ++c) {
        const TrofSession& s = *sessions[c];
        std::vector<std::pair<Var, Var>> per_iter;
        for (int k = 0; k < cfg.k_iters; ++k)
            per_iter.push_back({s.iter_fwd_full[static_cast<size_t>(k)],
                                s.iter_bwd_full[static_cast<size_t>(k)]});
        std::vector<double> per_iter_vals;
        Var lc = bidirectional_l1_loss_ad(t, per_iter, sample.gt_fwd[c], sample.gt_bwd[c], mask,
                                          cfg.gamma, &per_iter_vals);
        losses.push_back(lc);
        if (out.per_iteration.empty()) out.per_iteration.assign(per_iter_vals.size(), 0.0);
        for (size_t k = 0; k < per_iter_vals.size(); ++k)
            out.per_iteration[k] += per_iter_vals[k] / static_cast<double>(sessions.size());

        FlowField pred_f{s.iter_fwd_full.back().val(), 1, FlowDirection::Forward};
        out.epe_final += epe(pred_f, sample.gt_fwd[c], mask) / static_cast<double>(sessions.size());
    }
    total = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
    total = ad::scale(total, 1.0 / static_cast<double>(losses.size()));
    out.flow_l1 = total.val().data[0];
    t.backward(ad::scale(total, inv_batch));
    return out;
}

}  // namespace

TrainResult train_toy(ModelBundle& mb, const Dataset& data, std::ostream* log_stream) {
    const TrainConfig& cfg = mb.cfg;
    if (cfg.mode == "trof" && data.windows != 3)
        throw ValidationError("train: dataset arity does not match trof mode");
    if (cfg.mode == "mop" && data.windows != 5)
        throw ValidationError("train: dataset arity does not match mop mode");
    if (data.size() == 0) throw ValidationError("train: empty dataset");

    TrainResult res;
    std::vector<int> order(static_cast<size_t>(data.size()));
    for (int i = 0; i < data.size(); ++i) order[static_cast<size_t>(i)] = i;
    int cursor = 0;
    int epoch = 0;
    auto reshuffle = [&]() {
        RandomStream rng(derive_seed(cfg.seed, "shuffle" + std::to_string(epoch)));
        for (int i = data.size() - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);
        cursor = 0;
        ++epoch;
    };
    reshuffle();

    for (int step = 0; step < cfg.total_steps; ++step) {
        double lr = lr_schedule(step, cfg.total_steps, cfg.lr_max);
        mb.ps.zero_grads();
        zero_lambda_grads(mb.model.encoder);

        double flow_l1 = 0.0, epe_train = 0.0;
        std::vector<double> per_iter;
        for (int b = 0; b < cfg.batch; ++b) {
            if (cursor >= data.size()) reshuffle();
            LoadedSample sample = load_sample(data, order[static_cast<size_t>(cursor++)]);
            SampleLoss sl = train_sample(mb, sample, 1.0 / cfg.batch);
            flow_l1 += sl.flow_l1 / cfg.batch;
            epe_train += sl.epe_final / cfg.batch;
            if (per_iter.empty()) per_iter.assign(sl.per_iteration.size(), 0.0);
            for (size_t k = 0; k < sl.per_iteration.size(); ++k)
                per_iter[k] += sl.per_iteration[k] / cfg.batch;
        }
        propagate_lambda_grads(mb.model.encoder, mb.ps);
        add_penalty_grads(mb, cfg.lambda_ptd);

        double penalty = model_ptd_penalty(mb);
        LossReport rep;
        rep.flow_l1 = flow_l1;
        rep.ptd_penalty = penalty;
        rep.total = flow_l1 + cfg.lambda_ptd * penalty;
        rep.per_iteration = per_iter;
        if (!std::isfinite(rep.total))
            throw NumericError("training loss non-finite at step " + std::to_string(step) + "; " +
                               eigen_summary(mb));

        clip_grads(mb.ps, cfg.grad_clip);
        adamw_step(mb.ps, lr, cfg.weight_decay, step + 1);
        if (cfg.train_perturbation) {
            try {
                refresh_spectra(mb.model.encoder, mb.ps);
            } catch (const DecompositionRejected& e) {
                throw NumericError("perturbation update broke diagonalizability at step " +
                                   std::to_string(step) + ": " + e.what());
            }
        }

        json line;
        line["step"] = step;
        line["lr"] = lr;
        line["total"] = rep.total;
        line["flow_l1"] = rep.flow_l1;
        line["ptd_penalty"] = rep.ptd_penalty;
        line["epe_train"] = epe_train;
        std::string txt = line.dump();
        res.log_lines.push_back(txt);
        if (log_stream) (*log_stream) << txt << "\n";
        res.last = rep;
        ++res.steps_run;
    }
    return res;
}

json EvalResult::to_json() const {
    json j;
    j["aggregate"] = aggregate.to_json();
    if (central) j["central"] = central->to_json();
    json per = json::array();
    for (const EvalReport& r : per_sample) per.push_back(r.to_json());
    j["per_sample"] = per;
    j["n_samples"] = per_sample.size();
    return j;
}

EvalResult run_eval(ModelBundle& mb, const Dataset& data, const std::string& mode,
                    const EvalOptions& opts) {
    if (mode != "trof" && mode != "mop") throw ValidationError("eval: mode must be trof or mop");
    int need = mode == "trof" ? 3 : 5;
    if (data.windows != need)
        throw ValidationError("eval: dataset windows (" + std::to_string(data.windows) +
                              ") do not match mode arity (" + std::to_string(need) + ")");
    int k = opts.k_iters > 0 ? opts.k_iters : mb.cfg.k_iters;
    bool dump = !opts.dump_flows_dir.empty();
    if (dump) fs::create_directories(opts.dump_flows_dir);

    EvalResult out;
    std::vector<EvalReport> central_reports;
    Tensor mask = full_mask(data.h, data.w);
    for (int i = 0; i < data.size(); ++i) {
        LoadedSample sample = load_sample(data, i);
        std::vector<EvalReport> sample_reports;
        if (mode == "trof") {
            TrofResult r = trof_forward(mb.model, mb.ps, sample.reps[0], sample.reps[1],
                                        sample.reps[2], k);
            sample_reports.push_back(evaluate_flow(r.f_fwd, sample.gt_fwd[0], mask));
            EvalReport bwd = evaluate_flow(r.f_bwd, sample.gt_bwd[0], mask);
            sample_reports.push_back(bwd);
            if (dump) {
                write_flo((fs::path(opts.dump_flows_dir) / gt_flow_name(i, sample.centers[0], FlowDirection::Forward)).string(), r.f_fwd);
                write_flo((fs::path(opts.dump_flows_dir) / gt_flow_name(i, sample.centers[0], FlowDirection::Backward)).string(), r.f_bwd);
            }
        } else {
            MopResult r = mop_forward(mb.model, mb.ps, sample.reps, k, opts.mop_exchange, mb.cfg.seed);
            for (size_t c = 0; c < r.centers.size(); ++c) {
                EvalReport f = evaluate_flow(r.centers[c].f_fwd, sample.gt_fwd[c], mask);
                EvalReport b = evaluate_flow(r.centers[c].f_bwd, sample.gt_bwd[c], mask);
                sample_reports.push_back(f);
                sample_reports.push_back(b);
                if (c == 1) central_reports.push_back(pool_reports({f, b}));
                if (dump) {
                    write_flo((fs::path(opts.dump_flows_dir) / gt_flow_name(i, sample.centers[c], FlowDirection::Forward)).string(), r.centers[c].f_fwd);
                    write_flo((fs::path(opts.dump_flows_dir) / gt_flow_name(i, sample.centers[c], FlowDirection::Backward)).string(), r.centers[c].f_bwd);
                }
            }
        }
        out.per_sample.push_back(pool_reports(sample_reports));
    }
    out.aggregate = pool_reports(out.per_sample);
    if (!central_reports.empty()) out.central = pool_reports(central_reports);
    return out;
}

json ablate_init(const TrainConfig& base, const Dataset& train_data, const Dataset& eval_data,
                 std::ostream* table_out) {
    json rows = json::array();
    for (const std::string& init : {std::string("ptd"), std::string("hippo")}) {
        TrainConfig cfg = base;
        cfg.init = init;
        ModelBundle mb = build_model_bundle(cfg);
        TrainResult tr = train_toy(mb, train_data);
        EvalResult ev = run_eval(mb, eval_data, cfg.mode);
        json row;
        row["init"] = init;
        row["variant"] = cfg.variant;
        row["epe"] = ev.aggregate.epe;
        row["ae"] = ev.aggregate.ae;
        row["final_total_loss"] = tr.last.total;
        row["steps"] = tr.steps_run;
        rows.push_back(row);
    }
    json out;
    out["rows"] = rows;
    out["seed"] = base.seed;
    if (table_out) {
        std::ostream& os = *table_out;
        os << "Initialization comparison (variant=" << base.variant << ", seed=" << base.seed
           << ", steps=" << base.total_steps << ")\n";
        os << std::left << std::setw(12) << "Method" << std::setw(16) << "Initialization"
           << std::setw(10) << "EPE" << "\n";
        for (const auto& row : rows)
            os << std::left << std::setw(12) << base.variant << std::setw(16)
               << row["init"].get<std::string>() << std::setw(10) << std::setprecision(4)
               << std::fixed << row["epe"].get<double>() << "\n";
        os.unsetf(std::ios::fixed);
    }
    return out;
}

json inspect_ssm(const ModelBundle& mb) {
    const EncoderModel& enc = mb.model.encoder;
    ssm::StateMatrix a = ssm::hippo_legs(enc.cfg.n_state);
    double a_norm = a.entries.frobenius_norm();
    json systems = json::array();
    for (int blk = 0; blk < enc.cfg.n_blocks; ++blk) {
        for (int dir = 0; dir < enc.cfg.scan_dirs; ++dir) {
            const ssm::DiagonalizedSystem& sys = enc.systems[static_cast<size_t>(blk)][static_cast<size_t>(dir)];
            json js;
            js["block"] = blk;
            js["direction"] = dir;
            json eig = json::array();
            for (const auto& lam : sys.eigenvalues) eig.push_back({lam.real(), lam.imag()});
            js["eigenvalues"] = eig;
            js["frobenius_ratio"] = mb.ps.at(enc.spn(blk, dir, "E")).value.frobenius_norm() / a_norm;
            js["min_eigenvalue_gap"] = ssm::min_eigenvalue_gap(sys);
            js["reconstruction_error"] = sys.recon_error;
            js["projected_eigenvalues"] = sys.projected_count;
            double max_abar = 0.0;
            for (int g = 0; g < 50; ++g) {
                double delta = 1e-3 * std::pow(100.0, g / 49.0);  // log grid over [1e-3, 1e-1]
                for (const auto& lam : sys.eigenvalues)
                    max_abar = std::max(max_abar, std::abs(ssm::discretize_zoh(lam, delta).a_bar));
            }
            js["max_abar_on_delta_grid"] = max_abar;
            systems.push_back(js);
        }
    }
    json out;
    out["n_state"] = enc.cfg.n_state;
    out["init"] = mb.cfg.init;
    out["systems"] = systems;
    return out;
}

}  // namespace evflow

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "evflow/checkpoint.hpp"
#include "evflow/dataset.hpp"
#include "evflow/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw evflow::ValidationError("cannot open " + path);
    return json::parse(f);
}

int run(int argc, char** argv) {
    CLI::App app{"event-based multi-frame optical flow with a perturbed state-space encoder"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic event dataset");
    std::string gen_spec, gen_out;
    uint64_t gen_seed = 1;
    gen->add_option("--spec", gen_spec, "scene spec JSON")->required();
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--out", gen_out, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "train a model");
    std::string tr_cfg, tr_data, tr_out;
    train->add_option("--config", tr_cfg, "train config JSON")->required();
    train->add_option("--data", tr_data, "dataset directory")->required();
    train->add_option("--out", tr_out, "checkpoint output directory")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_mode = "trof", ev_report, ev_dump;
    int ev_k = -1;
    bool ev_no_exchange = false;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint file or directory")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--mode", ev_mode, "trof or mop");
    ev->add_option("--report", ev_report, "report JSON path")->required();
    ev->add_option("--k", ev_k, "refinement iterations (default: checkpoint config)");
    ev->add_flag("--no-exchange", ev_no_exchange, "disable motion-state exchange (mop)");
    ev->add_option("--dump-flows", ev_dump, "directory for predicted .flo files");

    // inspect-ssm
    auto* insp = app.add_subcommand("inspect-ssm", "report the state-space spectra");
    std::string in_ckpt, in_out;
    insp->add_option("--ckpt", in_ckpt, "checkpoint file or directory")->required();
    insp->add_option("--out", in_out, "write JSON here instead of stdout");

    // ablate-init
    auto* abl = app.add_subcommand("ablate-init", "compare ptd vs hippo initialization");
    std::string ab_cfg, ab_data, ab_eval, ab_out;
    abl->add_option("--config", ab_cfg, "train config JSON")->required();
    abl->add_option("--data", ab_data, "training dataset directory")->required();
    abl->add_option("--eval-data", ab_eval, "evaluation dataset (default: --data)");
    abl->add_option("--out", ab_out, "write comparison JSON here");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        evflow::GenSpec spec = evflow::GenSpec::from_json(read_json_file(gen_spec));
        evflow::Dataset ds = evflow::generate_dataset(spec, gen_seed, gen_out);
        std::cout << "wrote " << ds.size() << " samples (" << ds.mode << ", " << ds.h << "x"
                  << ds.w << ") to " << gen_out << "\n";
    } else if (train->parsed()) {
        evflow::TrainConfig cfg = evflow::TrainConfig::from_json(read_json_file(tr_cfg));
        evflow::Dataset data = evflow::load_dataset(tr_data);
        evflow::ModelBundle mb = evflow::build_model_bundle(cfg);
        fs::create_directories(tr_out);
        std::ofstream log((fs::path(tr_out) / "train_log.jsonl").string());
        evflow::TrainResult res = evflow::train_toy(mb, data, &log);
        evflow::save_model(tr_out, mb);
        std::ofstream cf((fs::path(tr_out) / "config.json").string());
        cf << cfg.to_json().dump(2) << "\n";
        std::cout << "trained " << res.steps_run << " steps";
        if (res.steps_run > 0)
            std::cout << "; final total=" << res.last.total << " flow_l1=" << res.last.flow_l1;
        std::cout << "; checkpoint in " << tr_out << "\n";
    } else if (ev->parsed()) {
        evflow::ModelBundle mb = evflow::load_model(ev_ckpt);
        evflow::Dataset data = evflow::load_dataset(ev_data);
        evflow::EvalOptions opts;
        opts.k_iters = ev_k;
        opts.mop_exchange = !ev_no_exchange;
        opts.dump_flows_dir = ev_dump.empty() && !ev_report.empty()
                                  ? (fs::path(ev_report).parent_path() / (fs::path(ev_report).stem().string() + "_flows")).string()
                                  : ev_dump;
        evflow::EvalResult res = evflow::run_eval(mb, data, ev_mode, opts);
        json report = res.to_json();
        report["mode"] = ev_mode;
        report["k_iters"] = ev_k > 0 ? ev_k : mb.cfg.k_iters;
        report["exchange"] = !ev_no_exchange;
        std::ofstream rf(ev_report);
        if (!rf) throw evflow::ValidationError("cannot write report: " + ev_report);
        rf << report.dump(2) << "\n";
        std::cout << "epe=" << res.aggregate.epe << " ae=" << res.aggregate.ae << " (report "
                  << ev_report << ")\n";
    } else if (insp->parsed()) {
        evflow::ModelBundle mb = evflow::load_model(in_ckpt);
        json j = evflow::inspect_ssm(mb);
        if (in_out.empty()) {
            std::cout << j.dump(2) << "\n";
        } else {
            std::ofstream f(in_out);
            f << j.dump(2) << "\n";
        }
    } else if (abl->parsed()) {
        evflow::TrainConfig cfg = evflow::TrainConfig::from_json(read_json_file(ab_cfg));
        evflow::Dataset train_data = evflow::load_dataset(ab_data);
        evflow::Dataset eval_data = evflow::load_dataset(ab_eval.empty() ? ab_data : ab_eval);
        json j = evflow::ablate_init(cfg, train_data, eval_data, &std::cout);
        if (!ab_out.empty()) {
            std::ofstream f(ab_out);
            f << j.dump(2) << "\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const evflow::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const evflow::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

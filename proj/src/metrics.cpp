#include "evflow/metrics.hpp"

#include <cmath>

namespace evflow {

namespace {

void check_inputs(const FlowField& pred, const FlowField& gt, const Tensor& mask) {
    if (pred.data.shape != gt.data.shape) throw ValidationError("metrics: pred/gt shape mismatch");
    if (mask.rank() != 2 || mask.dim(0) != pred.height() || mask.dim(1) != pred.width())
        throw ValidationError("metrics: mask shape mismatch");
    bool any = false;
    for (double v : mask.data)
        if (v > 0.5) {
            any = true;
            break;
        }
    if (!any) throw ValidationError("metrics: empty valid mask");
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["epe"] = epe;
    j["ae"] = ae;
    j["n_valid"] = n_valid;
    nlohmann::json jn;
    for (const auto& [n, v] : npe) jn[std::to_string(n)] = v;
    j["npe"] = jn;
    return j;
}

double epe(const FlowField& pred, const FlowField& gt, const Tensor& mask) {
    check_inputs(pred, gt, mask);
    double s = 0.0;
    int64_t n = 0;
    for (int y = 0; y < pred.height(); ++y)
        for (int x = 0; x < pred.width(); ++x) {
            if (mask.at(y, x) <= 0.5) continue;
            double du = pred.data.at(y, x, 0) - gt.data.at(y, x, 0);
            double dv = pred.data.at(y, x, 1) - gt.data.at(y, x, 1);
            s += std::sqrt(du * du + dv * dv);
            ++n;
        }
    return s / static_cast<double>(n);
}

double angular_error(const FlowField& pred, const FlowField& gt, const Tensor& mask) {
    check_inputs(pred, gt, mask);
    double s = 0.0;
    int64_t n = 0;
    for (int y = 0; y < pred.height(); ++y)
        for (int x = 0; x < pred.width(); ++x) {
            if (mask.at(y, x) <= 0.5) continue;
            double u1 = pred.data.at(y, x, 0), v1 = pred.data.at(y, x, 1);
            double u2 = gt.data.at(y, x, 0), v2 = gt.data.at(y, x, 1);
            double dot = u1 * u2 + v1 * v2 + 1.0;
            double na = std::sqrt(u1 * u1 + v1 * v1 + 1.0);
            double nb = std::sqrt(u2 * u2 + v2 * v2 + 1.0);
            double c = std::min(1.0, std::max(-1.0, dot / (na * nb)));
            s += std::acos(c) * 180.0 / M_PI;
            ++n;
        }
    return s / static_cast<double>(n);
}

double npe(const FlowField& pred, const FlowField& gt, const Tensor& mask, double n) {
    if (n <= 0.0) throw ValidationError("npe: threshold must be positive");
    check_inputs(pred, gt, mask);
    int64_t over = 0, valid = 0;
    for (int y = 0; y < pred.height(); ++y)
        for (int x = 0; x < pred.width(); ++x) {
            if (mask.at(y, x) <= 0.5) continue;
            double du = pred.data.at(y, x, 0) - gt.data.at(y, x, 0);
            double dv = pred.data.at(y, x, 1) - gt.data.at(y, x, 1);
            if (std::sqrt(du * du + dv * dv) > n) ++over;
            ++valid;
        }
    return 100.0 * static_cast<double>(over) / static_cast<double>(valid);
}

EvalReport evaluate_flow(const FlowField& pred, const FlowField& gt, const Tensor& mask) {
    EvalReport r;
    r.epe = epe(pred, gt, mask);
    r.ae = angular_error(pred, gt, mask);
    for (int n = 1; n <= 3; ++n) r.npe[n] = npe(pred, gt, mask, n);
    for (double v : mask.data)
        if (v > 0.5) ++r.n_valid;
    return r;
}

EvalReport pool_reports(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw ValidationError("pool_reports: nothing to pool");
    EvalReport out;
    double wsum = 0.0;
    for (const EvalReport& r : reports) {
        double w = static_cast<double>(r.n_valid);
        out.epe += w * r.epe;
        out.ae += w * r.ae;
        for (const auto& [n, v] : r.npe) out.npe[n] += w * v;
        out.n_valid += r.n_valid;
        wsum += w;
    }
    out.epe /= wsum;
    out.ae /= wsum;
    for (auto& [n, v] : out.npe) v /= wsum;
    return out;
}

Tensor full_mask(int h, int w) { return Tensor::full({h, w}, 1.0); }

}  // namespace evflow

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "evflow/tensor.hpp"

namespace evflow::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; invalid when default-constructed.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& val() const;
    const std::vector<int>& shape() const;
};

// Reverse-mode tape. Nodes are appended in execution order; backward() walks
// them in reverse. Single-threaded and deterministic by construction.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Non-differentiable input.
    Var constant(Tensor v);
    // Differentiable leaf; gradients accumulate into *sink after backward()
    // (sink may be null when only tape-local grads are wanted).
    Var leaf(const Tensor& v, Tensor* sink);

    // Generic node creation for custom ops defined in other modules.
    // `backward` receives the tape and the node's own id; it must route
    // grad_of(self) into the dependencies' grad buffers.
    Var make_node(Tensor value, const std::vector<Var>& deps,
                  std::function<void(Tape&, int)> backward);

    void backward(Var scalar_loss);

    const Tensor& val_of(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    bool needs_grad(const Var& v) const { return needs_grad(v.id); }
    // Grad buffer, allocated (zeroed) on first touch.
    Tensor& grad_of(int id);
    // Grad of a node after backward(); zeros if the node was never reached.
    Tensor grad(Var v);

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool grad_live = false;
        bool requires_grad = false;
        std::function<void(Tape&, int)> backward;
        Tensor* sink = nullptr;
    };
    std::vector<Node> nodes_;
    friend struct Var;
};

// ---- elementwise & shape ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var affine(Var a, double scale, double shift);  // scale*a + shift
inline Var scale(Var a, double s) { return affine(a, s, 0.0); }
inline Var neg(Var a) { return affine(a, -1.0, 0.0); }
Var add_bias(Var x, Var b);  // b broadcast over the last dimension
Var sigmoid(Var a);
Var tanh_op(Var a);
Var relu(Var a);
Var softplus(Var a);
Var silu(Var a);
Var clamp(Var a, double lo, double hi);
Var reshape(Var a, std::vector<int> shape);
Var concat_last(const std::vector<Var>& xs);          // concat along last dim
Var slice_last(Var x, int from, int to);              // [from, to) of last dim
Var permute_rows(Var x, const std::vector<int>& idx); // x: [L, D] -> y[l] = x[idx[l]]
Var mean_of(const std::vector<Var>& xs);              // elementwise mean

// ---- linear algebra ----
Var matmul(Var a, Var b);  // [m,k] x [k,n]

// ---- convolutions (channel-last feature maps [h, w, c]) ----
Var conv2d(Var x, Var w, Var b, int stride, int pad);  // w: [kh,kw,ci,co]
Var depthwise_conv2d(Var x, Var w, Var b, int pad);    // w: [kh,kw,c]

// ---- normalization ----
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);  // over last dim

// ---- spatial sampling ----
// Backward warp: out[y,x,:] samples m at (x+u, y+v); out-of-range corners read 0.
Var bilinear_warp(Var m, Var flow);
// Bilinear resize with align-corners mapping (identity when sizes match).
Var resize_bilinear(Var x, int out_h, int out_w);
// Flow upsampling: x8 spatial, values scaled x8, edge-clamped sampling.
Var upsample_flow8(Var f);
// Pool the target dimensions of one correlation level [P, ht, wt] by 2 (ceil,
// mean over covered cells).
Var avg_pool_targets(Var level);
// Correlation lookup at one pyramid level: for source cell (y,x) sample the
// level at (x + u*inv_scale + dx, y + v*inv_scale + dy), dx,dy in [-r, r].
// Returns [h, w, (2r+1)^2]; out-of-range corners read 0.
Var corr_lookup(Var level, Var flow, double inv_scale, int radius);

// Top-left crop of a [H, W, C] map.
Var crop_topleft(Var x, int out_h, int out_w);

// ---- reductions ----
Var sum_sq_half(Var x);  // 0.5 * sum(x^2), scalar
// Mean over valid pixels of |pred-gt| summed over the last dim.
// mask: [h,w], >0.5 marks valid; throws ValidationError when empty.
Var masked_l1_mean(Var pred, const Tensor& gt, const Tensor& mask);

// Named parameter storage shared by model construction, the optimizer and
// checkpointing. std::map keeps iteration order deterministic.
struct Param {
    Tensor value;
    Tensor grad;
    Tensor adam_m, adam_v;
    bool trainable = true;
};

class ParamStore {
public:
    Param& create(const std::string& name, std::vector<int> shape, bool trainable = true);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    Param* find(const std::string& name);
    bool has(const std::string& name) const { return params_.count(name) > 0; }

    void zero_grads();
    int64_t total_entries(bool trainable_only) const;

    std::map<std::string, Param>& all() { return params_; }
    const std::map<std::string, Param>& all() const { return params_; }

    // Bind a parameter as a tape leaf (value copied, grads flow to the slot).
    Var use(Tape& t, const std::string& name);

private:
    std::map<std::string, Param> params_;
};

}  // namespace evflow::ad

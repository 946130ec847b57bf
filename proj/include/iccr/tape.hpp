#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "iccr/tensor.hpp"

namespace iccr::ad {

using VarId = std::int32_t;

enum class Op : std::uint8_t {
    kLeaf,
    kMatmul,        // A B
    kMatmulNT,      // A B^T
    kAdd,
    kSub,
    kMul,           // Hadamard
    kAffine,        // a*x + b elementwise
    kAddRow,        // matrix + broadcast row
    kGelu,
    kTanh,
    kSigmoid,
    kSoftmaxCausal,
    kLayerNorm,
    kConcatCols,
    kConcatRows,
    kGatherRows,
    kSum,           // all elements -> 1x1
};

// Reverse-mode tape over dense tensors. Records every primitive application
// in topological order; backward() walks the records once in reverse.
// Single-threaded by construction; distinct tapes are independent.
class Tape {
  public:
    explicit Tape(bool deterministic = true);

    VarId leaf(Tensor value, bool requires_grad = true);

    VarId matmul(VarId a, VarId b);
    VarId matmul_nt(VarId a, VarId b);  // a * b^T, used for attention scores
    VarId add(VarId a, VarId b);
    VarId sub(VarId a, VarId b);
    VarId mul(VarId a, VarId b);
    VarId affine(VarId x, double scale, double shift);
    VarId scale(VarId x, double s) { return affine(x, s, 0.0); }
    VarId add_row(VarId x, VarId row);
    VarId gelu(VarId x);
    VarId tanh(VarId x);
    VarId sigmoid(VarId x);
    VarId softmax_causal(VarId logits);
    VarId layer_norm(VarId x, VarId gain, VarId bias);
    VarId concat_cols(const std::vector<VarId>& parts);
    VarId concat_rows(const std::vector<VarId>& parts);
    VarId gather_rows(VarId x, std::vector<int> indices);
    VarId sum(VarId x);

    // Sum of squared differences between x and a constant target, times scale.
    VarId scaled_sq_error(VarId x, const Tensor& target, double scale);

    void backward(VarId loss);

    const Tensor& value(VarId id) const { return nodes_[id].value; }
    const Tensor& grad(VarId id);
    double scalar_value(VarId id) const { return nodes_[id].value[0]; }
    std::size_t node_count() const { return nodes_.size(); }
    bool deterministic() const { return deterministic_; }

  private:
    struct Node {
        Tensor value;
        Op op = Op::kLeaf;
        double a = 1.0;  // affine scale
        double b = 0.0;  // affine shift
        std::vector<VarId> parents;
        std::vector<int> indices;    // gather targets / concat offsets
        Tensor aux;                  // layer_norm: normalized activations
        std::vector<double> aux_v;   // layer_norm: per-row inverse stddev
    };

    VarId push(Node node, const char* op_name);
    void accumulate(VarId id, const Tensor& delta);
    Tensor& grad_slot(VarId id);
    void node_backward(VarId id);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<std::uint8_t> touched_;
    bool deterministic_;
};

// Max relative error between the analytic gradient of a recorded scalar
// function and central finite differences at `point`.
double grad_check(const std::function<VarId(Tape&, VarId)>& scalar_fn, const Tensor& point,
                  double step);

}  // namespace iccr::ad

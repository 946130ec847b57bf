#include "iccr/tape.hpp"

#include <cmath>
#include <cstring>
#include <mutex>
#include <string>

#if __has_include(<malloc.h>)
#include <malloc.h>
#endif

#include "iccr/errors.hpp"

namespace iccr::ad {

namespace {

// Tapes allocate and free about a megabyte per sequence; with the default
// glibc trim threshold every teardown shrinks the heap with a syscall and the
// next tape grows it back, page faults included. Keeping freed chunks cached
// makes the round trip sub-microsecond.
void tune_allocator_once() {
#if defined(M_TRIM_THRESHOLD) && defined(M_MMAP_THRESHOLD)
    static std::once_flag flag;
    std::call_once(flag, [] {
        mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
        mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    });
#endif
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kLayerNormEps = 1e-5;

void matmul_nn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    const double* __restrict__ pa = a.data();
    const double* __restrict__ pb = b.data();
    double* __restrict__ pc = out.data();
    for (int i = 0; i < m; ++i) {
        const double* arow = pa + static_cast<std::size_t>(i) * k;
        double* crow = pc + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = pb + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

Tape::Tape(bool deterministic) : deterministic_(deterministic) {
    tune_allocator_once();
    nodes_.reserve(64);
}

VarId Tape::push(Node node, const char* op_name) {
    if (!node.value.all_finite()) {
        throw NumericError(std::string(op_name) + " produced non-finite values");
    }
    nodes_.push_back(std::move(node));
    return static_cast<VarId>(nodes_.size() - 1);
}

VarId Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.op = Op::kLeaf;
    n.a = requires_grad ? 1.0 : 0.0;
    return push(std::move(n), "leaf");
}

VarId Tape::matmul(VarId a, VarId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    Node n;
    n.value = Tensor::uninitialized(ta.rows(), tb.cols());
    matmul_into(ta, tb, n.value);
    n.op = Op::kMatmul;
    n.parents = {a, b};
    return push(std::move(n), "matmul");
}

VarId Tape::matmul_nt(VarId a, VarId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    Node n;
    n.value = Tensor::uninitialized(ta.rows(), tb.rows());
    matmul_nt_into(ta, tb, n.value);
    n.op = Op::kMatmulNT;
    n.parents = {a, b};
    return push(std::move(n), "matmul_nt");
}

VarId Tape::add(VarId a, VarId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (!ta.same_shape(tb)) throw DimensionError("add: shape mismatch");
    Node n;
    n.value = Tensor::uninitialized(ta.rows(), ta.cols());
    const double* __restrict__ pa = ta.data();
    const double* __restrict__ pb = tb.data();
    double* __restrict__ po = n.value.data();
    const std::size_t count = ta.size();
    for (std::size_t i = 0; i < count; ++i) po[i] = pa[i] + pb[i];
    n.op = Op::kAdd;
    n.parents = {a, b};
    return push(std::move(n), "add");
}

VarId Tape::sub(VarId a, VarId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (!ta.same_shape(tb)) throw DimensionError("sub: shape mismatch");
    Node n;
    n.value = Tensor::uninitialized(ta.rows(), ta.cols());
    const double* __restrict__ pa = ta.data();
    const double* __restrict__ pb = tb.data();
    double* __restrict__ po = n.value.data();
    const std::size_t count = ta.size();
    for (std::size_t i = 0; i < count; ++i) po[i] = pa[i] - pb[i];
    n.op = Op::kSub;
    n.parents = {a, b};
    return push(std::move(n), "sub");
}

VarId Tape::mul(VarId a, VarId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (!ta.same_shape(tb)) throw DimensionError("mul: shape mismatch");
    Node n;
    n.value = Tensor::uninitialized(ta.rows(), ta.cols());
    const double* __restrict__ pa = ta.data();
    const double* __restrict__ pb = tb.data();
    double* __restrict__ po = n.value.data();
    const std::size_t count = ta.size();
    for (std::size_t i = 0; i < count; ++i) po[i] = pa[i] * pb[i];
    n.op = Op::kMul;
    n.parents = {a, b};
    return push(std::move(n), "mul");
}

VarId Tape::affine(VarId x, double scale, double shift) {
    const Tensor& tx = nodes_[x].value;
    Node n;
    n.value = Tensor::uninitialized(tx.rows(), tx.cols());
    const double* __restrict__ px = tx.data();
    double* __restrict__ po = n.value.data();
    const std::size_t count = tx.size();
    for (std::size_t i = 0; i < count; ++i) po[i] = scale * px[i] + shift;
    n.op = Op::kAffine;
    n.a = scale;
    n.b = shift;
    n.parents = {x};
    return push(std::move(n), "affine");
}

VarId Tape::add_row(VarId x, VarId row) {
    const Tensor& tx = nodes_[x].value;
    const Tensor& tr = nodes_[row].value;
    if (tr.rows() != 1 || tr.cols() != tx.cols()) throw DimensionError("add_row: broadcast mismatch");
    Node n;
    const int rows = tx.rows(), cols = tx.cols();
    n.value = Tensor::uninitialized(rows, cols);
    const double* __restrict__ px = tx.data();
    const double* __restrict__ pr = tr.data();
    double* __restrict__ po = n.value.data();
    for (int i = 0; i < rows; ++i) {
        const double* xrow = px + static_cast<std::size_t>(i) * cols;
        double* orow = po + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) orow[j] = xrow[j] + pr[j];
    }
    n.op = Op::kAddRow;
    n.parents = {x, row};
    return push(std::move(n), "add_row");
}

VarId Tape::gelu(VarId x) {
    const Tensor& tx = nodes_[x].value;
    Node n;
    n.value = Tensor::uninitialized(tx.rows(), tx.cols());
    const double* __restrict__ px = tx.data();
    double* __restrict__ po = n.value.data();
    const std::size_t count = tx.size();
    for (std::size_t i = 0; i < count; ++i) {
        const double v = px[i];
        po[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    n.op = Op::kGelu;
    n.parents = {x};
    return push(std::move(n), "gelu");
}

VarId Tape::tanh(VarId x) {
    const Tensor& tx = nodes_[x].value;
    Node n;
    n.value = Tensor::uninitialized(tx.rows(), tx.cols());
    const double* __restrict__ px = tx.data();
    double* __restrict__ po = n.value.data();
    const std::size_t count = tx.size();
    for (std::size_t i = 0; i < count; ++i) po[i] = std::tanh(px[i]);
    n.op = Op::kTanh;
    n.parents = {x};
    return push(std::move(n), "tanh");
}

VarId Tape::sigmoid(VarId x) {
    const Tensor& tx = nodes_[x].value;
    Node n;
    n.value = Tensor::uninitialized(tx.rows(), tx.cols());
    const double* __restrict__ px = tx.data();
    double* __restrict__ po = n.value.data();
    const std::size_t count = tx.size();
    for (std::size_t i = 0; i < count; ++i) po[i] = 1.0 / (1.0 + std::exp(-px[i]));
    n.op = Op::kSigmoid;
    n.parents = {x};
    return push(std::move(n), "sigmoid");
}

VarId Tape::softmax_causal(VarId logits) {
    const Tensor& tl = nodes_[logits].value;
    const int t = tl.rows();
    if (tl.cols() != t) throw DimensionError("softmax_causal: matrix must be square");
    Node n;
    n.value = Tensor::uninitialized(t, t);
    const double* __restrict__ pl = tl.data();
    double* __restrict__ po = n.value.data();
    for (int r = 0; r < t; ++r) {
        const double* lrow = pl + static_cast<std::size_t>(r) * t;
        double* orow = po + static_cast<std::size_t>(r) * t;
        double mx = lrow[0];
        for (int c = 1; c <= r; ++c) mx = std::max(mx, lrow[c]);
        double denom = 0.0;
        for (int c = 0; c <= r; ++c) {
            const double e = std::exp(lrow[c] - mx);
            orow[c] = e;
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (int c = 0; c <= r; ++c) orow[c] *= inv;
        for (int c = r + 1; c < t; ++c) orow[c] = 0.0;
    }
    n.op = Op::kSoftmaxCausal;
    n.parents = {logits};
    return push(std::move(n), "softmax_causal");
}

VarId Tape::layer_norm(VarId x, VarId gain, VarId bias) {
    const Tensor& tx = nodes_[x].value;
    const Tensor& tg = nodes_[gain].value;
    const Tensor& tb = nodes_[bias].value;
    const int rows = tx.rows(), cols = tx.cols();
    if (tg.size() != static_cast<std::size_t>(cols) || tb.size() != static_cast<std::size_t>(cols)) {
        throw DimensionError("layer_norm: gain/bias length must match feature dim");
    }
    Node n;
    n.value = Tensor::uninitialized(rows, cols);
    n.aux = Tensor::uninitialized(rows, cols);
    n.aux_v.resize(static_cast<std::size_t>(rows));
    const double* __restrict__ px = tx.data();
    const double* __restrict__ pg = tg.data();
    const double* __restrict__ pb = tb.data();
    double* __restrict__ po = n.value.data();
    double* __restrict__ ph = n.aux.data();
    for (int i = 0; i < rows; ++i) {
        const double* xrow = px + static_cast<std::size_t>(i) * cols;
        double* orow = po + static_cast<std::size_t>(i) * cols;
        double* hrow = ph + static_cast<std::size_t>(i) * cols;
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += xrow[j];
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double d = xrow[j] - mean;
            var += d * d;
        }
        var /= cols;
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        n.aux_v[static_cast<std::size_t>(i)] = inv_std;
        for (int j = 0; j < cols; ++j) {
            const double xhat = (xrow[j] - mean) * inv_std;
            hrow[j] = xhat;
            orow[j] = xhat * pg[j] + pb[j];
        }
    }
    n.op = Op::kLayerNorm;
    n.parents = {x, gain, bias};
    return push(std::move(n), "layer_norm");
}

VarId Tape::concat_cols(const std::vector<VarId>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const int rows = nodes_[parts[0]].value.rows();
    int total = 0;
    for (VarId p : parts) {
        if (nodes_[p].value.rows() != rows) throw DimensionError("concat_cols: row mismatch");
        total += nodes_[p].value.cols();
    }
    Node n;
    n.value = Tensor::uninitialized(rows, total);
    n.indices.reserve(parts.size());
    int offset = 0;
    for (VarId p : parts) {
        const Tensor& tp = nodes_[p].value;
        const int w = tp.cols();
        for (int i = 0; i < rows; ++i) {
            std::memcpy(n.value.data() + static_cast<std::size_t>(i) * total + offset,
                        tp.data() + static_cast<std::size_t>(i) * w, static_cast<std::size_t>(w) * sizeof(double));
        }
        n.indices.push_back(offset);
        offset += w;
    }
    n.op = Op::kConcatCols;
    n.parents = parts;
    return push(std::move(n), "concat_cols");
}

VarId Tape::concat_rows(const std::vector<VarId>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const int cols = nodes_[parts[0]].value.cols();
    int total = 0;
    for (VarId p : parts) {
        if (nodes_[p].value.cols() != cols) throw DimensionError("concat_rows: column mismatch");
        total += nodes_[p].value.rows();
    }
    Node n;
    n.value = Tensor::uninitialized(total, cols);
    n.indices.reserve(parts.size());
    int offset = 0;
    for (VarId p : parts) {
        const Tensor& tp = nodes_[p].value;
        std::memcpy(n.value.data() + static_cast<std::size_t>(offset) * cols, tp.data(),
                    tp.size() * sizeof(double));
        n.indices.push_back(offset);
        offset += tp.rows();
    }
    n.op = Op::kConcatRows;
    n.parents = parts;
    return push(std::move(n), "concat_rows");
}

VarId Tape::gather_rows(VarId x, std::vector<int> indices) {
    const Tensor& tx = nodes_[x].value;
    const int cols = tx.cols();
    Node n;
    n.value = Tensor::uninitialized(static_cast<int>(indices.size()), cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int r = indices[i];
        if (r < 0 || r >= tx.rows()) throw DimensionError("gather_rows: index out of range");
        std::memcpy(n.value.data() + i * static_cast<std::size_t>(cols),
                    tx.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols) * sizeof(double));
    }
    n.op = Op::kGatherRows;
    n.parents = {x};
    n.indices = std::move(indices);
    return push(std::move(n), "gather_rows");
}

VarId Tape::sum(VarId x) {
    const Tensor& tx = nodes_[x].value;
    const double* __restrict__ px = tx.data();
    double acc = 0.0;
    const std::size_t count = tx.size();
    for (std::size_t i = 0; i < count; ++i) acc += px[i];
    Node n;
    n.value = Tensor::scalar(acc);
    n.op = Op::kSum;
    n.parents = {x};
    return push(std::move(n), "sum");
}

VarId Tape::scaled_sq_error(VarId x, const Tensor& target, double s) {
    VarId t = leaf(target, /*requires_grad=*/false);
    VarId d = sub(x, t);
    VarId sq = mul(d, d);
    return scale(sum(sq), s);
}

Tensor& Tape::grad_slot(VarId id) {
    if (!touched_[id]) {
        grads_[id] = Tensor(nodes_[id].value.shape());
        touched_[id] = 1;
    }
    return grads_[id];
}

void Tape::accumulate(VarId id, const Tensor& delta) {
    Tensor& g = grad_slot(id);
    double* __restrict__ pg = g.data();
    const double* __restrict__ pd = delta.data();
    const std::size_t count = g.size();
    for (std::size_t i = 0; i < count; ++i) pg[i] += pd[i];
}

const Tensor& Tape::grad(VarId id) {
    if (grads_.empty()) throw ConfigError("grad: backward has not run");
    return grad_slot(id);
}

void Tape::backward(VarId loss) {
    if (!nodes_[loss].value.is_scalar()) {
        throw ConfigError("backward: loss must be a scalar");
    }
    grads_.assign(nodes_.size(), Tensor());
    touched_.assign(nodes_.size(), 0);
    grad_slot(loss)[0] = 1.0;
    for (VarId id = loss; id >= 0; --id) {
        if (!touched_[id]) continue;
        node_backward(id);
    }
}

void Tape::node_backward(VarId id) {
    Node& n = nodes_[id];
    const Tensor& g = grads_[id];
    switch (n.op) {
        case Op::kLeaf:
            break;
        case Op::kMatmul: {
            const Tensor& a = nodes_[n.parents[0]].value;
            const Tensor& b = nodes_[n.parents[1]].value;
            matmul_nt_acc(g, b, grad_slot(n.parents[0]));
            matmul_tn_acc(a, g, grad_slot(n.parents[1]));
            break;
        }
        case Op::kMatmulNT: {
            const Tensor& a = nodes_[n.parents[0]].value;
            const Tensor& b = nodes_[n.parents[1]].value;
            matmul_nn_acc(g, b, grad_slot(n.parents[0]));
            matmul_tn_acc(g, a, grad_slot(n.parents[1]));
            break;
        }
        case Op::kAdd: {
            accumulate(n.parents[0], g);
            accumulate(n.parents[1], g);
            break;
        }
        case Op::kSub: {
            accumulate(n.parents[0], g);
            Tensor& gb = grad_slot(n.parents[1]);
            double* __restrict__ pb = gb.data();
            const double* __restrict__ pg = g.data();
            const std::size_t count = gb.size();
            for (std::size_t i = 0; i < count; ++i) pb[i] -= pg[i];
            break;
        }
        case Op::kMul: {
            const Tensor& a = nodes_[n.parents[0]].value;
            const Tensor& b = nodes_[n.parents[1]].value;
            Tensor& ga = grad_slot(n.parents[0]);
            Tensor& gb = grad_slot(n.parents[1]);
            const double* __restrict__ pa = a.data();
            const double* __restrict__ pb = b.data();
            double* __restrict__ pga = ga.data();
            double* __restrict__ pgb = gb.data();
            const double* __restrict__ pg = g.data();
            const std::size_t count = ga.size();
            for (std::size_t i = 0; i < count; ++i) {
                pga[i] += pg[i] * pb[i];
                pgb[i] += pg[i] * pa[i];
            }
            break;
        }
        case Op::kAffine: {
            Tensor& gx = grad_slot(n.parents[0]);
            double* __restrict__ pgx = gx.data();
            const double* __restrict__ pg = g.data();
            const double s = n.a;
            const std::size_t count = gx.size();
            for (std::size_t i = 0; i < count; ++i) pgx[i] += s * pg[i];
            break;
        }
        case Op::kAddRow: {
            accumulate(n.parents[0], g);
            Tensor& gr = grad_slot(n.parents[1]);
            double* __restrict__ pgr = gr.data();
            const double* __restrict__ pg = g.data();
            const int rows = g.rows(), cols = g.cols();
            for (int i = 0; i < rows; ++i) {
                const double* grow = pg + static_cast<std::size_t>(i) * cols;
                for (int j = 0; j < cols; ++j) pgr[j] += grow[j];
            }
            break;
        }
        case Op::kGelu: {
            const Tensor& x = nodes_[n.parents[0]].value;
            Tensor& gx = grad_slot(n.parents[0]);
            const double* __restrict__ px = x.data();
            double* __restrict__ pgx = gx.data();
            const double* __restrict__ pg = g.data();
            const std::size_t count = gx.size();
            for (std::size_t i = 0; i < count; ++i) {
                const double v = px[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                pgx[i] += pg[i] * (cdf + v * pdf);
            }
            break;
        }
        case Op::kTanh: {
            Tensor& gx = grad_slot(n.parents[0]);
            double* __restrict__ pgx = gx.data();
            const double* __restrict__ pg = g.data();
            const double* __restrict__ py = n.value.data();
            const std::size_t count = gx.size();
            for (std::size_t i = 0; i < count; ++i) pgx[i] += pg[i] * (1.0 - py[i] * py[i]);
            break;
        }
        case Op::kSigmoid: {
            Tensor& gx = grad_slot(n.parents[0]);
            double* __restrict__ pgx = gx.data();
            const double* __restrict__ pg = g.data();
            const double* __restrict__ py = n.value.data();
            const std::size_t count = gx.size();
            for (std::size_t i = 0; i < count; ++i) pgx[i] += pg[i] * py[i] * (1.0 - py[i]);
            break;
        }
        case Op::kSoftmaxCausal: {
            Tensor& gx = grad_slot(n.parents[0]);
            const int t = n.value.rows();
            double* __restrict__ pgx = gx.data();
            const double* __restrict__ pg = g.data();
            const double* __restrict__ py = n.value.data();
            for (int r = 0; r < t; ++r) {
                const double* grow = pg + static_cast<std::size_t>(r) * t;
                const double* yrow = py + static_cast<std::size_t>(r) * t;
                double* orow = pgx + static_cast<std::size_t>(r) * t;
                double dot = 0.0;
                for (int c = 0; c <= r; ++c) dot += grow[c] * yrow[c];
                for (int c = 0; c <= r; ++c) orow[c] += yrow[c] * (grow[c] - dot);
            }
            break;
        }
        case Op::kLayerNorm: {
            const Tensor& tg = nodes_[n.parents[1]].value;
            Tensor& gx = grad_slot(n.parents[0]);
            Tensor& gg = grad_slot(n.parents[1]);
            Tensor& gb = grad_slot(n.parents[2]);
            const int rows = n.value.rows(), cols = n.value.cols();
            const double* __restrict__ pg = g.data();
            const double* __restrict__ ph = n.aux.data();
            const double* __restrict__ pgain = tg.data();
            double* __restrict__ pgx = gx.data();
            double* __restrict__ pgg = gg.data();
            double* __restrict__ pgb = gb.data();
            for (int i = 0; i < rows; ++i) {
                const double* grow = pg + static_cast<std::size_t>(i) * cols;
                const double* hrow = ph + static_cast<std::size_t>(i) * cols;
                double* xrow = pgx + static_cast<std::size_t>(i) * cols;
                double sum_dxhat = 0.0;
                double sum_dxhat_xhat = 0.0;
                for (int j = 0; j < cols; ++j) {
                    const double dy = grow[j];
                    const double xhat = hrow[j];
                    pgg[j] += dy * xhat;
                    pgb[j] += dy;
                    const double dxhat = dy * pgain[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                const double inv_std = n.aux_v[static_cast<std::size_t>(i)];
                const double mean_dxhat = sum_dxhat / cols;
                const double mean_dxhat_xhat = sum_dxhat_xhat / cols;
                for (int j = 0; j < cols; ++j) {
                    const double dxhat = grow[j] * pgain[j];
                    xrow[j] += inv_std * (dxhat - mean_dxhat - hrow[j] * mean_dxhat_xhat);
                }
            }
            break;
        }
        case Op::kConcatCols: {
            const int rows = n.value.rows();
            const int total = n.value.cols();
            const double* __restrict__ pg = g.data();
            for (std::size_t p = 0; p < n.parents.size(); ++p) {
                Tensor& gp = grad_slot(n.parents[p]);
                double* __restrict__ pgp = gp.data();
                const int w = gp.cols();
                const int offset = n.indices[p];
                for (int i = 0; i < rows; ++i) {
                    const double* grow = pg + static_cast<std::size_t>(i) * total + offset;
                    double* prow = pgp + static_cast<std::size_t>(i) * w;
                    for (int j = 0; j < w; ++j) prow[j] += grow[j];
                }
            }
            break;
        }
        case Op::kConcatRows: {
            const int cols = n.value.cols();
            const double* __restrict__ pg = g.data();
            for (std::size_t p = 0; p < n.parents.size(); ++p) {
                Tensor& gp = grad_slot(n.parents[p]);
                double* __restrict__ pgp = gp.data();
                const int offset = n.indices[p];
                const std::size_t count = gp.size();
                const double* src = pg + static_cast<std::size_t>(offset) * cols;
                for (std::size_t i = 0; i < count; ++i) pgp[i] += src[i];
            }
            break;
        }
        case Op::kGatherRows: {
            Tensor& gx = grad_slot(n.parents[0]);
            const int cols = g.cols();
            double* __restrict__ pgx = gx.data();
            const double* __restrict__ pg = g.data();
            for (std::size_t i = 0; i < n.indices.size(); ++i) {
                const int r = n.indices[i];
                const double* grow = pg + i * static_cast<std::size_t>(cols);
                double* xrow = pgx + static_cast<std::size_t>(r) * cols;
                for (int j = 0; j < cols; ++j) xrow[j] += grow[j];
            }
            break;
        }
        case Op::kSum: {
            Tensor& gx = grad_slot(n.parents[0]);
            double* __restrict__ pgx = gx.data();
            const double gv = g[0];
            const std::size_t count = gx.size();
            for (std::size_t i = 0; i < count; ++i) pgx[i] += gv;
            break;
        }
    }
}

double grad_check(const std::function<VarId(Tape&, VarId)>& scalar_fn, const Tensor& point,
                  double step) {
    if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
    Tape tape;
    const VarId x = tape.leaf(point);
    const VarId loss = scalar_fn(tape, x);
    if (!tape.value(loss).is_scalar()) throw ConfigError("grad_check: function must be scalar");
    tape.backward(loss);
    const Tensor analytic = tape.grad(x);

    auto eval = [&](const Tensor& p) {
        Tape t;
        const VarId xi = t.leaf(p);
        const VarId l = scalar_fn(t, xi);
        const double v = t.scalar_value(l);
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite evaluation");
        return v;
    };

    Tensor probe = point;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double up = eval(probe);
        probe[i] = orig - step;
        const double down = eval(probe);
        probe[i] = orig;
        const double fd = (up - down) / (2.0 * step);
        const double an = analytic[i];
        const double rel = std::abs(an - fd) / (std::abs(an) + std::abs(fd) + 1e-12);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace iccr::ad

#include "ccoma/tensor.hpp"

#include <cmath>
#include <stdexcept>

#include "ccoma/kernels.hpp"

namespace ccoma {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.dims) +
                                " vs " + shape_str(b.dims));
}

void require_matrix(const char* op, const Tensor& a) {
    if (a.dims.size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + shape_str(a.dims));
}

bool is_bias_for(const Tensor& a, const Tensor& b) {
    // b broadcast over the leading axis of a: [n x d] + [d] or [n x d] + [1 x d]
    if (a.dims.size() != 2) return false;
    if (b.dims.size() == 1) return b.dims[0] == a.dims[1];
    if (b.dims.size() == 2) return b.dims[0] == 1 && b.dims[1] == a.dims[1];
    return false;
}

}  // namespace

double Tensor::scalar() const {
    if (numel() != 1) throw std::invalid_argument("scalar(): tensor has shape " + shape_str(dims));
    return data[0];
}

Value make_tensor(std::vector<int> dims, std::vector<double> data, bool requires_grad) {
    std::size_t n = 1;
    for (int d : dims) {
        if (d <= 0) throw std::invalid_argument("make_tensor: non-positive dim in " + shape_str(dims));
        n *= static_cast<std::size_t>(d);
    }
    if (n != data.size())
        throw std::invalid_argument("make_tensor: " + shape_str(dims) + " needs " +
                                    std::to_string(n) + " values, got " + std::to_string(data.size()));
    auto t = std::make_shared<Tensor>();
    t->dims = std::move(dims);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

Value zeros(std::vector<int> dims, bool requires_grad) {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    return make_tensor(std::move(dims), std::vector<double>(n, 0.0), requires_grad);
}

Value scalar_tensor(double v) { return make_tensor({1}, {v}); }

std::string shape_str(const std::vector<int>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

bool same_dims(const Tensor& a, const Tensor& b) { return a.dims == b.dims; }

bool Tape::tracked(const Value& v) const { return v->requires_grad || v->node >= 0; }

Value Tape::record(Op op, Value out, std::vector<Value> in, std::vector<int> iaux, double daux) {
    if (!recording_) return out;
    bool needs = false;
    for (const auto& v : in) needs = needs || tracked(v);
    if (!needs) return out;
    out->requires_grad = true;
    out->node = static_cast<int>(steps_.size());
    steps_.push_back(Step{op, out, std::move(in), std::move(iaux), daux});
    return out;
}

Value Tape::matmul(const Value& a, const Value& b) {
    require_matrix("matmul", *a);
    require_matrix("matmul", *b);
    if (a->dims[1] != b->dims[0]) shape_error("matmul", *a, *b);
    const int m = a->dims[0], k = a->dims[1], n = b->dims[1];
    Value out = zeros({m, n});
    kernels::matmul(a->data.data(), b->data.data(), out->data.data(), m, k, n);
    return record(Op::Matmul, std::move(out), {a, b});
}

Value Tape::transpose(const Value& a) {
    require_matrix("transpose", *a);
    const int m = a->dims[0], n = a->dims[1];
    Value out = zeros({n, m});
    kernels::transpose(a->data.data(), out->data.data(), m, n);
    return record(Op::Transpose, std::move(out), {a});
}

Value Tape::add(const Value& a, const Value& b) {
    if (is_bias_for(*a, *b)) {
        const int n = a->dims[0], d = a->dims[1];
        Value out = zeros(a->dims);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
                out->data[static_cast<std::size_t>(i) * d + j] =
                    a->data[static_cast<std::size_t>(i) * d + j] + b->data[j];
        return record(Op::AddBias, std::move(out), {a, b});
    }
    if (!same_dims(*a, *b)) shape_error("add", *a, *b);
    Value out = zeros(a->dims);
    kernels::binary(kernels::Binary::Add, a->data.data(), b->data.data(), out->data.data(), a->numel());
    return record(Op::Add, std::move(out), {a, b});
}

Value Tape::sub(const Value& a, const Value& b) {
    if (!same_dims(*a, *b)) shape_error("sub", *a, *b);
    Value out = zeros(a->dims);
    kernels::binary(kernels::Binary::Sub, a->data.data(), b->data.data(), out->data.data(), a->numel());
    return record(Op::Sub, std::move(out), {a, b});
}

Value Tape::mul(const Value& a, const Value& b) {
    if (!same_dims(*a, *b)) shape_error("mul", *a, *b);
    Value out = zeros(a->dims);
    kernels::binary(kernels::Binary::Mul, a->data.data(), b->data.data(), out->data.data(), a->numel());
    return record(Op::Mul, std::move(out), {a, b});
}

Value Tape::scale(const Value& a, double c) {
    Value out = zeros(a->dims);
    for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * c;
    return record(Op::Scale, std::move(out), {a}, {}, c);
}

Value Tape::concat(const std::vector<Value>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
    for (const auto& p : parts) require_matrix("concat", *p);
    const int fixed = parts[0]->dims[1 - axis];
    int total = 0;
    for (const auto& p : parts) {
        if (p->dims[1 - axis] != fixed) shape_error("concat", *parts[0], *p);
        total += p->dims[axis];
    }
    std::vector<int> od = axis == 0 ? std::vector<int>{total, fixed} : std::vector<int>{fixed, total};
    Value out = zeros(od);
    if (axis == 0) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
            off += p->numel();
        }
    } else {
        const int rows = fixed;
        int col0 = 0;
        for (const auto& p : parts) {
            const int pc = p->dims[1];
            for (int i = 0; i < rows; ++i)
                std::copy(p->data.begin() + static_cast<std::size_t>(i) * pc,
                          p->data.begin() + static_cast<std::size_t>(i + 1) * pc,
                          out->data.begin() + static_cast<std::size_t>(i) * total + col0);
            col0 += pc;
        }
    }
    return record(Op::Concat, std::move(out), parts, {axis});
}

Value Tape::slice_cols(const Value& a, int start, int len) {
    require_matrix("slice_cols", *a);
    if (start < 0 || len <= 0 || start + len > a->dims[1])
        throw std::invalid_argument("slice_cols: [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") out of " + shape_str(a->dims));
    const int rows = a->dims[0], cols = a->dims[1];
    Value out = zeros({rows, len});
    for (int i = 0; i < rows; ++i)
        std::copy(a->data.begin() + static_cast<std::size_t>(i) * cols + start,
                  a->data.begin() + static_cast<std::size_t>(i) * cols + start + len,
                  out->data.begin() + static_cast<std::size_t>(i) * len);
    return record(Op::SliceCols, std::move(out), {a}, {start, len});
}

Value Tape::gather_rows(const Value& a, const std::vector<int>& indices) {
    require_matrix("gather_rows", *a);
    const int rows = a->dims[0], cols = a->dims[1];
    Value out = zeros({static_cast<int>(indices.size()), cols});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int r = indices[i];
        if (r < 0 || r >= rows)
            throw std::invalid_argument("gather_rows: index " + std::to_string(r) + " out of " +
                                        shape_str(a->dims));
        std::copy(a->data.begin() + static_cast<std::size_t>(r) * cols,
                  a->data.begin() + static_cast<std::size_t>(r + 1) * cols,
                  out->data.begin() + i * cols);
    }
    return record(Op::GatherRows, std::move(out), {a}, indices);
}

Value Tape::sum_all(const Value& a) {
    double s = 0.0;
    for (double v : a->data) s += v;
    return record(Op::SumAll, make_tensor({1}, {s}), {a});
}

Value Tape::mean_all(const Value& a) {
    double s = 0.0;
    for (double v : a->data) s += v;
    return record(Op::MeanAll, make_tensor({1}, {s / static_cast<double>(a->numel())}), {a});
}

Value Tape::sum_axis(const Value& a, int axis) {
    require_matrix("sum_axis", *a);
    if (axis != 0 && axis != 1) throw std::invalid_argument("sum_axis: axis must be 0 or 1");
    const int rows = a->dims[0], cols = a->dims[1];
    if (axis == 0) {
        Value out = zeros({cols});
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                out->data[j] += a->data[static_cast<std::size_t>(i) * cols + j];
        return record(Op::SumAxis0, std::move(out), {a});
    }
    Value out = zeros({rows});
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += a->data[static_cast<std::size_t>(i) * cols + j];
        out->data[i] = s;
    }
    return record(Op::SumAxis1, std::move(out), {a});
}

Value Tape::mean_axis(const Value& a, int axis) {
    require_matrix("mean_axis", *a);
    if (axis != 0 && axis != 1) throw std::invalid_argument("mean_axis: axis must be 0 or 1");
    const int rows = a->dims[0], cols = a->dims[1];
    if (axis == 0) {
        Value out = zeros({cols});
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                out->data[j] += a->data[static_cast<std::size_t>(i) * cols + j];
        for (int j = 0; j < cols; ++j) out->data[j] /= rows;
        return record(Op::MeanAxis0, std::move(out), {a});
    }
    Value out = zeros({rows});
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += a->data[static_cast<std::size_t>(i) * cols + j];
        out->data[i] = s / cols;
    }
    return record(Op::MeanAxis1, std::move(out), {a});
}

Value Tape::relu(const Value& a) {
    Value out = zeros(a->dims);
    kernels::unary(kernels::Unary::Relu, a->data.data(), out->data.data(), a->numel());
    return record(Op::Relu, std::move(out), {a});
}

Value Tape::tanh(const Value& a) {
    Value out = zeros(a->dims);
    kernels::unary(kernels::Unary::Tanh, a->data.data(), out->data.data(), a->numel());
    return record(Op::Tanh, std::move(out), {a});
}

Value Tape::sigmoid(const Value& a) {
    Value out = zeros(a->dims);
    kernels::unary(kernels::Unary::Sigmoid, a->data.data(), out->data.data(), a->numel());
    return record(Op::Sigmoid, std::move(out), {a});
}

Value Tape::exp(const Value& a) {
    Value out = zeros(a->dims);
    kernels::unary(kernels::Unary::Exp, a->data.data(), out->data.data(), a->numel());
    return record(Op::Exp, std::move(out), {a});
}

Value Tape::log(const Value& a) {
    Value out = zeros(a->dims);
    kernels::unary(kernels::Unary::Log, a->data.data(), out->data.data(), a->numel());
    return record(Op::Log, std::move(out), {a});
}

Value Tape::row_softmax(const Value& logits) {
    const int rows = logits->dims.size() == 2 ? logits->dims[0] : 1;
    const int cols = logits->dims.size() == 2 ? logits->dims[1] : static_cast<int>(logits->numel());
    Value out = zeros(logits->dims);
    kernels::row_softmax(logits->data.data(), nullptr, 0.0, out->data.data(), rows, cols);
    return record(Op::RowSoftmax, std::move(out), {logits});
}

Value Tape::masked_row_softmax(const Value& logits, const Value& mask, double neg_fill) {
    if (!same_dims(*logits, *mask)) shape_error("masked_row_softmax", *logits, *mask);
    const int rows = logits->dims.size() == 2 ? logits->dims[0] : 1;
    const int cols = logits->dims.size() == 2 ? logits->dims[1] : static_cast<int>(logits->numel());
    Value out = zeros(logits->dims);
    const int bad = kernels::row_softmax(logits->data.data(), mask->data.data(), neg_fill,
                                         out->data.data(), rows, cols);
    if (bad >= 0)
        throw std::invalid_argument("masked_row_softmax: row " + std::to_string(bad) +
                                    " has every entry masked out");
    return record(Op::MaskedRowSoftmax, std::move(out), {logits, mask}, {}, neg_fill);
}

std::vector<double>* Tape::grad_slot(const Value& v) {
    if (v->node >= 0) {
        auto& g = node_grads_[static_cast<std::size_t>(v->node)];
        return g.empty() ? nullptr : &g;
    }
    auto it = leaf_grads_.find(v.get());
    return it == leaf_grads_.end() ? nullptr : &it->second;
}

std::vector<double>& Tape::grad_accum(const Value& v) {
    if (v->node >= 0) {
        auto& g = node_grads_[static_cast<std::size_t>(v->node)];
        if (g.empty()) g.assign(v->numel(), 0.0);
        return g;
    }
    auto [it, inserted] = leaf_grads_.try_emplace(v.get());
    if (inserted) it->second.assign(v->numel(), 0.0);
    return it->second;
}

void Tape::backward(const Value& loss) {
    if (loss->numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss->dims));
    if (loss->node < 0)
        throw std::invalid_argument("backward: loss was not produced on this tape");
    node_grads_.assign(steps_.size(), {});
    leaf_grads_.clear();
    grad_accum(loss)[0] = 1.0;

    for (std::size_t si = steps_.size(); si-- > 0;) {
        const Step& s = steps_[si];
        const auto* gp = grad_slot(s.out);
        if (gp == nullptr) continue;
        const std::vector<double>& g = *gp;
        const auto want = [&](int i) { return tracked(s.in[static_cast<std::size_t>(i)]); };

        switch (s.op) {
            case Op::Matmul: {
                const Value &a = s.in[0], &b = s.in[1];
                const int m = a->dims[0], k = a->dims[1], n = b->dims[1];
                if (want(0)) {
                    std::vector<double> bt(b->numel());
                    kernels::transpose(b->data.data(), bt.data(), k, n);
                    kernels::matmul_acc(g.data(), bt.data(), grad_accum(a).data(), m, n, k);
                }
                if (want(1)) {
                    std::vector<double> at(a->numel());
                    kernels::transpose(a->data.data(), at.data(), m, k);
                    kernels::matmul_acc(at.data(), g.data(), grad_accum(b).data(), k, m, n);
                }
                break;
            }
            case Op::Transpose: {
                const Value& a = s.in[0];
                if (want(0)) {
                    std::vector<double> gt(g.size());
                    kernels::transpose(g.data(), gt.data(), s.out->dims[0], s.out->dims[1]);
                    auto& ga = grad_accum(a);
                    for (std::size_t i = 0; i < gt.size(); ++i) ga[i] += gt[i];
                }
                break;
            }
            case Op::Add: {
                for (int i = 0; i < 2; ++i)
                    if (want(i)) {
                        auto& ga = grad_accum(s.in[static_cast<std::size_t>(i)]);
                        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
                    }
                break;
            }
            case Op::AddBias: {
                const Value& a = s.in[0];
                const int n = a->dims[0], d = a->dims[1];
                if (want(0)) {
                    auto& ga = grad_accum(a);
                    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
                }
                if (want(1)) {
                    auto& gb = grad_accum(s.in[1]);
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < d; ++j)
                            gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * d + j];
                }
                break;
            }
            case Op::Sub: {
                if (want(0)) {
                    auto& ga = grad_accum(s.in[0]);
                    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
                }
                if (want(1)) {
                    auto& gb = grad_accum(s.in[1]);
                    for (std::size_t j = 0; j < g.size(); ++j) gb[j] -= g[j];
                }
                break;
            }
            case Op::Mul: {
                const Value &a = s.in[0], &b = s.in[1];
                if (want(0)) {
                    auto& ga = grad_accum(a);
                    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * b->data[j];
                }
                if (want(1)) {
                    auto& gb = grad_accum(b);
                    for (std::size_t j = 0; j < g.size(); ++j) gb[j] += g[j] * a->data[j];
                }
                break;
            }
            case Op::Scale: {
                if (want(0)) {
                    auto& ga = grad_accum(s.in[0]);
                    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * s.daux;
                }
                break;
            }
            case Op::Concat: {
                const int axis = s.iaux[0];
                if (axis == 0) {
                    std::size_t off = 0;
                    for (std::size_t pi = 0; pi < s.in.size(); ++pi) {
                        const Value& p = s.in[pi];
                        if (tracked(p)) {
                            auto& gp2 = grad_accum(p);
                            for (std::size_t j = 0; j < p->numel(); ++j) gp2[j] += g[off + j];
                        }
                        off += p->numel();
                    }
                } else {
                    const int rows = s.out->dims[0], total = s.out->dims[1];
                    int col0 = 0;
                    for (const auto& p : s.in) {
                        const int pc = p->dims[1];
                        if (tracked(p)) {
                            auto& gp2 = grad_accum(p);
                            for (int i = 0; i < rows; ++i)
                                for (int j = 0; j < pc; ++j)
                                    gp2[static_cast<std::size_t>(i) * pc + j] +=
                                        g[static_cast<std::size_t>(i) * total + col0 + j];
                        }
                        col0 += pc;
                    }
                }
                break;
            }
            case Op::SliceCols: {
                const Value& a = s.in[0];
                if (want(0)) {
                    const int start = s.iaux[0], len = s.iaux[1];
                    const int rows = a->dims[0], cols = a->dims[1];
                    auto& ga = grad_accum(a);
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < len; ++j)
                            ga[static_cast<std::size_t>(i) * cols + start + j] +=
                                g[static_cast<std::size_t>(i) * len + j];
                }
                break;
            }
            case Op::GatherRows: {
                const Value& a = s.in[0];
                if (want(0)) {
                    const int cols = a->dims[1];
                    auto& ga = grad_accum(a);
                    for (std::size_t i = 0; i < s.iaux.size(); ++i) {
                        const int r = s.iaux[i];
                        for (int j = 0; j < cols; ++j)
                            ga[static_cast<std::size_t>(r) * cols + j] += g[i * cols + j];
                    }
                }
                break;
            }
            case Op::SumAll:
            case Op::MeanAll: {
                if (want(0)) {
                    const Value& a = s.in[0];
                    const double w = s.op == Op::SumAll ? g[0] : g[0] / static_cast<double>(a->numel());
                    auto& ga = grad_accum(a);
                    for (std::size_t j = 0; j < ga.size(); ++j) ga[j] += w;
                }
                break;
            }
            case Op::SumAxis0:
            case Op::MeanAxis0: {
                if (want(0)) {
                    const Value& a = s.in[0];
                    const int rows = a->dims[0], cols = a->dims[1];
                    const double w = s.op == Op::SumAxis0 ? 1.0 : 1.0 / rows;
                    auto& ga = grad_accum(a);
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < cols; ++j)
                            ga[static_cast<std::size_t>(i) * cols + j] += g[static_cast<std::size_t>(j)] * w;
                }
                break;
            }
            case Op::SumAxis1:
            case Op::MeanAxis1: {
                if (want(0)) {
                    const Value& a = s.in[0];
                    const int rows = a->dims[0], cols = a->dims[1];
                    const double w = s.op == Op::SumAxis1 ? 1.0 : 1.0 / cols;
                    auto& ga = grad_accum(a);
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < cols; ++j)
                            ga[static_cast<std::size_t>(i) * cols + j] += g[static_cast<std::size_t>(i)] * w;
                }
                break;
            }
            case Op::Relu: {
                if (want(0)) {
                    const Value& a = s.in[0];
                    auto& ga = grad_accum(a);
                    for (std::size_t j = 0; j < g.size(); ++j)
                        if (a->data[j] > 0.0) ga[j] += g[j];
                }
                break;
            }
            case Op::Tanh: {
                if (want(0)) {
                    auto& ga = grad_accum(s.in[0]);
                    const auto& y = s.out->data;
                    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * (1.0 - y[j] * y[j]);
                }
                break;
            }
            case Op::Sigmoid: {
                if (want(0)) {
                    auto& ga = grad_accum(s.in[0]);
                    const auto& y = s.out->data;
                    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * y[j] * (1.0 - y[j]);
                }
                break;
            }
            case Op::Exp: {
                if (want(0)) {
                    auto& ga = grad_accum(s.in[0]);
                    const auto& y = s.out->data;
                    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * y[j];
                }
                break;
            }
            case Op::Log: {
                if (want(0)) {
                    auto& ga = grad_accum(s.in[0]);
                    const auto& x = s.in[0]->data;
                    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] / x[j];
                }
                break;
            }
            case Op::RowSoftmax:
            case Op::MaskedRowSoftmax: {
                if (want(0)) {
                    const Value& a = s.in[0];
                    const int rows = a->dims.size() == 2 ? a->dims[0] : 1;
                    const int cols = a->dims.size() == 2 ? a->dims[1] : static_cast<int>(a->numel());
                    const auto& p = s.out->data;
                    auto& ga = grad_accum(a);
                    for (int i = 0; i < rows; ++i) {
                        const std::size_t off = static_cast<std::size_t>(i) * cols;
                        double dot = 0.0;
                        for (int j = 0; j < cols; ++j) dot += g[off + j] * p[off + j];
                        // p is exactly 0 on masked entries, so no gradient crosses them
                        for (int j = 0; j < cols; ++j) ga[off + j] += p[off + j] * (g[off + j] - dot);
                    }
                }
                break;
            }
        }
    }
}

std::span<const double> Tape::grad(const Value& v) const {
    if (v->node >= 0) {
        if (static_cast<std::size_t>(v->node) < node_grads_.size()) {
            const auto& g = node_grads_[static_cast<std::size_t>(v->node)];
            return {g.data(), g.size()};
        }
        return {};
    }
    auto it = leaf_grads_.find(v.get());
    if (it == leaf_grads_.end()) return {};
    return {it->second.data(), it->second.size()};
}

void central_differences(const std::function<double(const std::vector<double>&)>& f,
                         const std::vector<double>& x, double h, std::vector<double>& out) {
    out.assign(x.size(), 0.0);
    std::vector<double> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        out[i] = (fp - fm) / (2.0 * h);
    }
}

}  // namespace ccoma

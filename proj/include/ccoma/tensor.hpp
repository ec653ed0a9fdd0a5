#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

// Reverse-mode automatic differentiation over small dense row-major tensors.
//
// A Tape owns one differentiation context: ops record onto it in execution
// order (which is a topological order of the graph), backward() sweeps the
// record once in reverse. Tensors produced by tape ops carry the id of the
// recording step in `node`; leaves keep node = -1 and are identified by
// address, so shared parameter tensors are never written to by backward and
// may be read concurrently from many rollout contexts.

namespace ccoma {

struct Tensor {
    std::vector<int> dims;
    std::vector<double> data;
    std::vector<double> grad;  // parameter gradient slot, managed by the trainer
    bool requires_grad = false;
    int node = -1;  // id of the tape step that produced this tensor

    std::size_t numel() const {
        std::size_t n = 1;
        for (int d : dims) n *= static_cast<std::size_t>(d);
        return n;
    }
    int rows() const { return dims.empty() ? 1 : dims[0]; }
    int cols() const { return dims.size() < 2 ? 1 : dims[1]; }

    void ensure_grad() {
        if (grad.size() != numel()) grad.assign(numel(), 0.0);
    }
    void zero_grad() { grad.assign(numel(), 0.0); }

    double scalar() const;
};

using Value = std::shared_ptr<Tensor>;

Value make_tensor(std::vector<int> dims, std::vector<double> data, bool requires_grad = false);
Value zeros(std::vector<int> dims, bool requires_grad = false);
Value scalar_tensor(double v);

std::string shape_str(const std::vector<int>& dims);
bool same_dims(const Tensor& a, const Tensor& b);

class Tape {
  public:
    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }

    // ---- forward primitives ----
    Value matmul(const Value& a, const Value& b);
    Value transpose(const Value& a);
    // add() also accepts a rank-1 (or [1 x n]) bias broadcast over the leading axis
    Value add(const Value& a, const Value& b);
    Value sub(const Value& a, const Value& b);
    Value mul(const Value& a, const Value& b);
    Value scale(const Value& a, double c);
    Value concat(const std::vector<Value>& parts, int axis);
    Value slice_cols(const Value& a, int start, int len);
    Value gather_rows(const Value& a, const std::vector<int>& indices);
    Value sum_all(const Value& a);
    Value mean_all(const Value& a);
    Value sum_axis(const Value& a, int axis);
    Value mean_axis(const Value& a, int axis);
    Value relu(const Value& a);
    Value tanh(const Value& a);
    Value sigmoid(const Value& a);
    Value exp(const Value& a);
    Value log(const Value& a);
    Value row_softmax(const Value& logits);
    // mask entries are {0,1}; masked-out positions get exactly zero probability
    Value masked_row_softmax(const Value& logits, const Value& mask, double neg_fill = -1e9);

    // ---- reverse sweep ----
    // loss must be a scalar produced on this tape.
    void backward(const Value& loss);

    // Gradient of the last backward() w.r.t. v (a leaf or any tape tensor).
    // Returns an empty span when no gradient reached v.
    std::span<const double> grad(const Value& v) const;

    std::size_t num_steps() const { return steps_.size(); }

  private:
    enum class Op {
        Matmul, Transpose, Add, AddBias, Sub, Mul, Scale, Concat, SliceCols,
        GatherRows, SumAll, MeanAll, SumAxis0, SumAxis1, MeanAxis0, MeanAxis1,
        Relu, Tanh, Sigmoid, Exp, Log, RowSoftmax, MaskedRowSoftmax,
    };

    struct Step {
        Op op;
        Value out;
        std::vector<Value> in;
        std::vector<int> iaux;
        double daux = 0.0;
    };

    Value record(Op op, Value out, std::vector<Value> in,
                 std::vector<int> iaux = {}, double daux = 0.0);
    bool tracked(const Value& v) const;

    std::vector<double>* grad_slot(const Value& v);
    std::vector<double>& grad_accum(const Value& v);

    bool recording_;
    std::vector<Step> steps_;
    std::vector<std::vector<double>> node_grads_;                       // by node id
    std::unordered_map<const Tensor*, std::vector<double>> leaf_grads_; // by address
};

// Finite-difference helper used by tests and the acceptance suite: central
// differences of f at x with step h, written into out (same numel as x).
void central_differences(const std::function<double(const std::vector<double>&)>& f,
                         const std::vector<double>& x, double h, std::vector<double>& out);

}  // namespace ccoma

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "icnp/common.hpp"
#include "icnp/rng.hpp"

namespace icnp {

class Tape;

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s);

// Shared storage behind a Tensor handle. `producer_*` records which tape epoch
// created the value, so backward can tell leaves (parameters, inputs) from
// intermediates it owns.
struct TensorData {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until touched by backward / grad()
    bool requires_grad = false;
    const Tape* producer_tape = nullptr;
    std::uint64_t producer_epoch = 0;

    std::size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

// Dense row-major float64 tensor participating in reverse-mode differentiation.
// Copying a Tensor aliases the same storage (shared-handle semantics).
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::size_t numel() const { return d_->value.size(); }
    std::size_t rows() const { return d_->shape.at(0); }
    std::size_t cols() const { return d_->shape.at(1); }
    bool is_scalar() const { return numel() == 1 && d_->shape.size() <= 1; }

    double* data() { return d_->value.data(); }
    const double* data() const { return d_->value.data(); }
    std::vector<double>& values() { return d_->value; }
    const std::vector<double>& values() const { return d_->value; }
    double item() const;

    bool requires_grad() const { return d_->requires_grad; }
    // Gradient buffer, zero-filled on first access.
    std::vector<double>& grad() {
        d_->ensure_grad();
        return d_->grad;
    }
    void zero_grad() {
        if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
    }

    std::shared_ptr<TensorData> ptr() const { return d_; }

   private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;
    friend class Tape;
    friend Tensor make_op_output(Shape shape, std::vector<double> value,
                                 std::vector<std::shared_ptr<TensorData>> inputs,
                                 std::function<void(Tape&, const TensorData&)> backward);
};

// Routes gradient accumulation for leaf tensors into a private buffer instead
// of TensorData::grad, so several tapes can differentiate w.r.t. the same
// parameters concurrently. Merge back in a fixed order for determinism.
class GradSink {
   public:
    double* slot(const std::shared_ptr<TensorData>& t);
    // Adds the collected gradients into the tensors' own grad buffers.
    void merge_into_tensors();

   private:
    std::vector<std::pair<std::shared_ptr<TensorData>, std::vector<double>>> slots_;
};

// Records one entry per differentiable operation, in execution order (which is
// topological by construction). backward() seeds d(loss)/d(loss) = 1 and walks
// the entries in reverse, firing each recorded operation at most once and only
// if its output is reachable from the loss; gradients of unreachable tensors
// are left untouched.
class Tape {
   public:
    struct Entry {
        std::shared_ptr<TensorData> out;
        std::vector<std::shared_ptr<TensorData>> inputs;
        std::function<void(Tape&, const TensorData&)> backward;  // (tape, out)
    };

    static Tape& active();

    bool recording() const { return recording_; }
    void set_recording(bool r) { recording_ = r; }

    void record(Entry e);
    std::size_t size() const { return entries_.size(); }
    std::uint64_t epoch() const { return epoch_; }

    // True when this tape's current epoch produced the tensor.
    bool produced_here(const TensorData& t) const {
        return t.producer_tape == this && t.producer_epoch == epoch_;
    }

    // Accumulation target for d(loss)/d(t): leaves go to the sink when one is
    // installed, everything else to t.grad.
    double* grad_accum(const std::shared_ptr<TensorData>& t);

    void backward(const Tensor& loss, GradSink* sink = nullptr);

    void clear() {
        entries_.clear();
        ++epoch_;
    }

   private:
    std::vector<Entry> entries_;
    std::uint64_t epoch_ = 1;
    bool recording_ = true;
    GradSink* sink_ = nullptr;
};

// Disables tape recording for the current scope (inference, timing).
class NoGradGuard {
   public:
    NoGradGuard() : prev_(Tape::active().recording()) { Tape::active().set_recording(false); }
    ~NoGradGuard() { Tape::active().set_recording(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool prev_;
};

// Shared entry point for every differentiable op: builds the output tensor,
// stamps provenance, and records the backward rule when recording is on and
// some input requires grad.
Tensor make_op_output(Shape shape, std::vector<double> value,
                      std::vector<std::shared_ptr<TensorData>> inputs,
                      std::function<void(Tape&, const TensorData&)> backward);

// Convenience wrapper over Tape::active().backward(loss).
void backward(const Tensor& loss);

}  // namespace icnp

#include "icnp/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace icnp {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto d = std::make_shared<TensorData>();
    d->value.assign(numel_of(shape), 0.0);
    d->shape = std::move(shape);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), v);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel_of(shape) != data.size())
        throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->value = std::move(data);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.values()) x = stddev * rng.normal();
    return t;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() requires a scalar, got shape " + shape_str(shape()));
    return d_->value[0];
}

double* GradSink::slot(const std::shared_ptr<TensorData>& t) {
    for (auto& [ptr, buf] : slots_)
        if (ptr == t) return buf.data();
    slots_.emplace_back(t, std::vector<double>(t->numel(), 0.0));
    return slots_.back().second.data();
}

void GradSink::merge_into_tensors() {
    for (auto& [ptr, buf] : slots_) {
        ptr->ensure_grad();
        for (std::size_t i = 0; i < buf.size(); ++i) ptr->grad[i] += buf[i];
    }
}

Tape& Tape::active() {
    thread_local Tape tape;
    return tape;
}

void Tape::record(Entry e) { entries_.push_back(std::move(e)); }

double* Tape::grad_accum(const std::shared_ptr<TensorData>& t) {
    if (sink_ && !produced_here(*t)) return sink_->slot(t);
    t->ensure_grad();
    return t->grad.data();
}

void Tape::backward(const Tensor& loss, GradSink* sink) {
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward requires a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<null>")));
    sink_ = sink;
    std::unordered_set<const TensorData*> reachable;
    reachable.insert(loss.ptr().get());
    double* seed = grad_accum(loss.ptr());
    seed[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (!reachable.count(it->out.get())) continue;
        for (const auto& in : it->inputs) reachable.insert(in.get());
        it->backward(*this, *it->out);
    }
    sink_ = nullptr;
}

Tensor make_op_output(Shape shape, std::vector<double> value,
                      std::vector<std::shared_ptr<TensorData>> inputs,
                      std::function<void(Tape&, const TensorData&)> backward) {
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->value = std::move(value);

    Tape& tape = Tape::active();
    bool needs_grad = false;
    if (tape.recording())
        for (const auto& in : inputs)
            if (in->requires_grad) needs_grad = true;

    d->requires_grad = needs_grad;
    Tensor out(d);
    if (needs_grad) {
        d->producer_tape = &tape;
        d->producer_epoch = tape.epoch();
        tape.record(Tape::Entry{d, std::move(inputs), std::move(backward)});
    }
    return out;
}

void backward(const Tensor& loss) { Tape::active().backward(loss); }

}  // namespace icnp

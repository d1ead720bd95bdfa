#include "icnp/task.hpp"

#include <string>

namespace icnp {

namespace {

void check_dataset(const Dataset& d, std::size_t d_x, std::size_t d_y, const std::string& which) {
    if (d.d_x != d_x || d.d_y != d_y)
        throw ShapeError("task: " + which + " dims (" + std::to_string(d.d_x) + "," + std::to_string(d.d_y) +
                         ") disagree with task dims (" + std::to_string(d_x) + "," + std::to_string(d_y) + ")");
    if (d.x.size() != d.n * d.d_x || d.y.size() != d.n * d.d_y)
        throw ShapeError("task: " + which + " storage does not match n=" + std::to_string(d.n));
}

}  // namespace

void validate_task(const Task& task) {
    if (task.n_t < 1) throw ShapeError("task: needs at least one target point");
    check_dataset(task.context, task.d_x, task.d_y, "context");
    for (std::size_t j = 0; j < task.in_context.size(); ++j) {
        const Dataset& d = task.in_context[j];
        if (d.n == 0)
            throw ShapeError("task: in-context dataset " + std::to_string(j) + " is empty");
        check_dataset(d, task.d_x, task.d_y, "in-context dataset " + std::to_string(j));
    }
    if (task.target_x.size() != task.n_t * task.d_x)
        throw ShapeError("task: target_x storage does not match n_t=" + std::to_string(task.n_t));
    if (!task.target_y.empty() && task.target_y.size() != task.n_t * task.d_y)
        throw ShapeError("task: target_y storage does not match n_t=" + std::to_string(task.n_t));
}

}  // namespace icnp

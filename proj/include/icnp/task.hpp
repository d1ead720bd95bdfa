#pragma once

#include <cstddef>
#include <vector>

#include "icnp/common.hpp"

namespace icnp {

// A set of observed input-output pairs; may be empty.
struct Dataset {
    std::size_t n = 0;
    std::size_t d_x = 1;
    std::size_t d_y = 1;
    std::vector<double> x;  // n * d_x, row-major
    std::vector<double> y;  // n * d_y
};

// One meta-learning instance: a context set, zero or more in-context datasets
// drawn from the same underlying process, and target inputs (with outputs
// present for training/evaluation).
struct Task {
    Dataset context;
    std::vector<Dataset> in_context;
    std::size_t n_t = 0;
    std::size_t d_x = 1;
    std::size_t d_y = 1;
    std::vector<double> target_x;  // n_t * d_x
    std::vector<double> target_y;  // n_t * d_y, may be empty for pure prediction
};

// Throws ShapeError on malformed tasks. In-context datasets must be non-empty;
// the data generators never produce empty ones and attention over an empty key
// set is undefined.
void validate_task(const Task& task);

}  // namespace icnp

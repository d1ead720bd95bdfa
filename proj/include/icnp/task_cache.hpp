#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icnp/kernel.hpp"
#include "icnp/task.hpp"

namespace icnp {

// Materialized task set: a text header carrying the generating config and its
// hash, followed by a little-endian binary payload. Round-trips are exact.
struct TaskCache {
    std::string config_text;  // canonical config snapshot
    std::vector<Task> tasks;
    std::vector<std::optional<KernelSpec>> specs;  // ground truth when known, aligned with tasks

    std::uint64_t config_hash() const { return fnv1a64(config_text); }
};

void save_task_cache(const std::string& path, const TaskCache& cache);

// Loads a cache; when expect_config is given, refuses to load if the stored
// hash does not match the expected config's hash.
TaskCache load_task_cache(const std::string& path,
                          const std::optional<std::string>& expect_config = std::nullopt);

}  // namespace icnp

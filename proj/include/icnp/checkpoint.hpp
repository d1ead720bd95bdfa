#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "icnp/nn.hpp"

namespace icnp {

// Single-file checkpoint: a UTF-8 text manifest (one line per entry with name,
// shape and byte offset, plus key=value metadata lines) terminated by a blank
// line, followed by raw little-endian float64 data. Round-trips are bit-exact.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<std::string> order;  // entry names in file order
    std::map<std::string, std::pair<Shape, std::vector<double>>> entries;

    void put(const std::string& name, const Shape& shape, std::vector<double> data);
    const std::vector<double>& get(const std::string& name) const;
    bool has(const std::string& name) const { return entries.count(name) > 0; }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Helpers for reading/writing little-endian binary scalars and arrays.
namespace wire {
void put_u64(std::string& out, std::uint64_t v);
void put_f64(std::string& out, double v);
std::uint64_t get_u64(const unsigned char* p);
double get_f64(const unsigned char* p);
}  // namespace wire

}  // namespace icnp

#include "icnp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace icnp {

namespace wire {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

double get_f64(const unsigned char* p) { return std::bit_cast<double>(get_u64(p)); }

}  // namespace wire

void Checkpoint::put(const std::string& name, const Shape& shape, std::vector<double> data) {
    if (!entries.count(name)) order.push_back(name);
    entries[name] = {shape, std::move(data)};
}

const std::vector<double>& Checkpoint::get(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw DataError("checkpoint: missing entry '" + name + "'");
    return it->second.second;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ostringstream manifest;
    manifest << "icnp-checkpoint 1\n";
    for (const auto& [k, v] : ckpt.meta) manifest << "meta " << k << "=" << v << "\n";
    std::uint64_t offset = 0;
    for (const auto& name : ckpt.order) {
        const auto& [shape, data] = ckpt.entries.at(name);
        manifest << "entry " << name << " shape";
        for (auto e : shape) manifest << " " << e;
        manifest << " offset " << offset << " count " << data.size() << "\n";
        offset += data.size() * 8;
    }
    manifest << "\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    const std::string head = manifest.str();
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    std::string payload;
    for (const auto& name : ckpt.order)
        for (double v : ckpt.entries.at(name).second) wire::put_f64(payload, v);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) throw DataError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open '" + path + "'");
    std::string contents((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    const std::size_t head_end = contents.find("\n\n");
    if (head_end == std::string::npos) throw DataError("checkpoint: truncated manifest in '" + path + "'");
    std::istringstream head(contents.substr(0, head_end + 1));
    const char* base = contents.data() + head_end + 2;
    const std::size_t payload_len = contents.size() - (head_end + 2);

    std::string line;
    if (!std::getline(head, line) || line != "icnp-checkpoint 1")
        throw DataError("checkpoint: bad magic in '" + path + "'");

    Checkpoint ckpt;
    while (std::getline(head, line)) {
        if (line.empty()) break;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "meta") {
            std::string rest;
            std::getline(ls, rest);
            if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
            const auto eq = rest.find('=');
            if (eq == std::string::npos) throw DataError("checkpoint: bad meta line '" + line + "'");
            ckpt.meta[rest.substr(0, eq)] = rest.substr(eq + 1);
        } else if (tag == "entry") {
            std::string name, word;
            ls >> name;
            Shape shape;
            ls >> word;  // "shape"
            std::uint64_t offset = 0, count = 0;
            while (ls >> word) {
                if (word == "offset") {
                    ls >> offset >> word >> count;  // word == "count"
                    break;
                }
                shape.push_back(static_cast<std::size_t>(std::stoull(word)));
            }
            if (offset + count * 8 > payload_len)
                throw DataError("checkpoint: entry '" + name + "' exceeds payload in '" + path + "'");
            std::vector<double> data(count);
            for (std::uint64_t i = 0; i < count; ++i)
                data[i] = wire::get_f64(reinterpret_cast<const unsigned char*>(base + offset + i * 8));
            ckpt.put(name, shape, std::move(data));
        } else {
            throw DataError("checkpoint: unknown manifest line '" + line + "'");
        }
    }
    return ckpt;
}

}  // namespace icnp

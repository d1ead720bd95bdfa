#include "icnp/task_cache.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "icnp/checkpoint.hpp"

namespace icnp {

namespace {

std::string escape_newlines(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '\n')
            out += "\\n";
        else if (c == '\\')
            out += "\\\\";
        else
            out += c;
    }
    return out;
}

std::string unescape_newlines(const std::string& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            out += s[i + 1] == 'n' ? '\n' : s[i + 1];
            ++i;
        } else {
            out += s[i];
        }
    }
    return out;
}

void put_dataset(std::string& out, const Dataset& d) {
    wire::put_u64(out, d.n);
    wire::put_u64(out, d.d_x);
    wire::put_u64(out, d.d_y);
    for (double v : d.x) wire::put_f64(out, v);
    for (double v : d.y) wire::put_f64(out, v);
}

struct Reader {
    const unsigned char* p;
    const unsigned char* end;
    std::uint64_t u64() {
        if (p + 8 > end) throw DataError("task cache: truncated payload");
        auto v = wire::get_u64(p);
        p += 8;
        return v;
    }
    double f64() {
        if (p + 8 > end) throw DataError("task cache: truncated payload");
        auto v = wire::get_f64(p);
        p += 8;
        return v;
    }
};

Dataset get_dataset(Reader& r) {
    Dataset d;
    d.n = r.u64();
    d.d_x = r.u64();
    d.d_y = r.u64();
    d.x.resize(d.n * d.d_x);
    for (double& v : d.x) v = r.f64();
    d.y.resize(d.n * d.d_y);
    for (double& v : d.y) v = r.f64();
    return d;
}

}  // namespace

void save_task_cache(const std::string& path, const TaskCache& cache) {
    if (cache.specs.size() != cache.tasks.size())
        throw ShapeError("task cache: specs not aligned with tasks");
    std::ostringstream head;
    head << "icnp-task-cache 1\n";
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(cache.config_hash()));
    head << "config-hash " << hex << "\n";
    head << "config " << escape_newlines(cache.config_text) << "\n";
    head << "tasks " << cache.tasks.size() << "\n\n";

    std::string payload;
    for (std::size_t t = 0; t < cache.tasks.size(); ++t) {
        const Task& task = cache.tasks[t];
        wire::put_u64(payload, task.n_t);
        wire::put_u64(payload, task.d_x);
        wire::put_u64(payload, task.d_y);
        const auto& spec = cache.specs[t];
        wire::put_u64(payload, spec ? 1 : 0);
        wire::put_u64(payload, spec ? static_cast<std::uint64_t>(spec->family) : 0);
        wire::put_f64(payload, spec ? spec->ell : 0.0);
        put_dataset(payload, task.context);
        wire::put_u64(payload, task.in_context.size());
        for (const auto& d : task.in_context) put_dataset(payload, d);
        for (double v : task.target_x) wire::put_f64(payload, v);
        wire::put_u64(payload, task.target_y.empty() ? 0 : 1);
        for (double v : task.target_y) wire::put_f64(payload, v);
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("task cache: cannot open '" + path + "' for writing");
    const std::string h = head.str();
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) throw DataError("task cache: write failed for '" + path + "'");
}

TaskCache load_task_cache(const std::string& path, const std::optional<std::string>& expect_config) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("task cache: cannot open '" + path + "'");
    std::string contents((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::size_t head_end = contents.find("\n\n");
    if (head_end == std::string::npos) throw DataError("task cache: truncated header in '" + path + "'");

    std::istringstream head(contents.substr(0, head_end + 1));
    std::string line;
    if (!std::getline(head, line) || line != "icnp-task-cache 1")
        throw DataError("task cache: bad magic in '" + path + "'");

    TaskCache cache;
    std::string stored_hash;
    std::size_t n_tasks = 0;
    while (std::getline(head, line)) {
        if (line.empty()) break;
        const auto sp = line.find(' ');
        const std::string key = line.substr(0, sp);
        const std::string val = sp == std::string::npos ? "" : line.substr(sp + 1);
        if (key == "config-hash")
            stored_hash = val;
        else if (key == "config")
            cache.config_text = unescape_newlines(val);
        else if (key == "tasks")
            n_tasks = std::stoull(val);
        else
            throw DataError("task cache: unknown header line '" + line + "'");
    }

    {
        char hex[32];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(cache.config_hash()));
        if (stored_hash != hex) throw DataError("task cache: header hash does not match stored config");
    }
    if (expect_config && *expect_config != cache.config_text)
        throw DataError("task cache: config mismatch; refusing to load '" + path +
                        "' (regenerate with the current config)");

    Reader r{reinterpret_cast<const unsigned char*>(contents.data()) + head_end + 2,
             reinterpret_cast<const unsigned char*>(contents.data()) + contents.size()};
    for (std::size_t t = 0; t < n_tasks; ++t) {
        Task task;
        task.n_t = r.u64();
        task.d_x = r.u64();
        task.d_y = r.u64();
        const bool has_spec = r.u64() != 0;
        const auto family = static_cast<KernelFamily>(r.u64());
        const double ell = r.f64();
        task.context = get_dataset(r);
        const std::uint64_t n_ic = r.u64();
        for (std::uint64_t j = 0; j < n_ic; ++j) task.in_context.push_back(get_dataset(r));
        task.target_x.resize(task.n_t * task.d_x);
        for (double& v : task.target_x) v = r.f64();
        if (r.u64() != 0) {
            task.target_y.resize(task.n_t * task.d_y);
            for (double& v : task.target_y) v = r.f64();
        }
        validate_task(task);
        cache.tasks.push_back(std::move(task));
        cache.specs.push_back(has_spec ? std::optional<KernelSpec>(KernelSpec{family, ell}) : std::nullopt);
    }
    return cache;
}

}  // namespace icnp

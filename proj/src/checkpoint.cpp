#include "ccoma/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>
#include <vector>

namespace ccoma::checkpoint {

namespace {

constexpr char kMagic[6] = {'C', 'C', 'O', 'M', 'A', '\x01'};

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
        (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

template <typename T>
void put_raw(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    // little-endian host assumed; static_assert would need std::endian checks
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

void save(std::ostream& os, const ParamStore& params, Dtype dtype) {
    os.write(kMagic, sizeof(kMagic));
    for (const auto& [name, p] : params.items) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(dtype));
        os.put(static_cast<char>(p->dims.size()));
        for (int d : p->dims) put_u32(os, static_cast<std::uint32_t>(d));
        if (dtype == Dtype::F64) {
            for (double v : p->data) put_raw(os, v);
        } else {
            for (double v : p->data) put_raw(os, static_cast<float>(v));
        }
    }
    if (!os) throw std::runtime_error("checkpoint: write failed");
}

void save_file(const std::string& path, const ParamStore& params, Dtype dtype) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    save(f, params, dtype);
}

Dtype load(std::istream& is, ParamStore& params) {
    char magic[6];
    if (!is.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
        throw std::runtime_error("checkpoint: bad magic bytes");
    std::set<std::string> seen;
    Dtype last = Dtype::F64;
    while (true) {
        std::uint32_t name_len;
        if (!get_u32(is, name_len)) break;  // clean EOF
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw std::runtime_error("checkpoint: truncated name");
        const int dt = is.get();
        const int rank = is.get();
        if (dt == EOF || rank == EOF) throw std::runtime_error("checkpoint: truncated header");
        if (dt != 0 && dt != 1)
            throw std::runtime_error("checkpoint: unknown dtype code " + std::to_string(dt) +
                                     " for '" + name + "'");
        std::vector<int> dims(static_cast<std::size_t>(rank));
        std::size_t count = 1;
        for (auto& d : dims) {
            std::uint32_t u;
            if (!get_u32(is, u)) throw std::runtime_error("checkpoint: truncated dims");
            d = static_cast<int>(u);
            count *= u;
        }
        Value p = params.find(name);  // throws for unknown names
        if (p->dims != dims)
            throw std::runtime_error("checkpoint: '" + name + "' has dims " + shape_str(dims) +
                                     ", expected " + shape_str(p->dims));
        if (dt == 1) {
            std::vector<double> buf(count);
            if (!is.read(reinterpret_cast<char*>(buf.data()),
                         static_cast<std::streamsize>(count * sizeof(double))))
                throw std::runtime_error("checkpoint: truncated values for '" + name + "'");
            p->data = std::move(buf);
            last = Dtype::F64;
        } else {
            std::vector<float> buf(count);
            if (!is.read(reinterpret_cast<char*>(buf.data()),
                         static_cast<std::streamsize>(count * sizeof(float))))
                throw std::runtime_error("checkpoint: truncated values for '" + name + "'");
            for (std::size_t i = 0; i < count; ++i) p->data[i] = static_cast<double>(buf[i]);
            last = Dtype::F32;
        }
        if (!seen.insert(name).second)
            throw std::runtime_error("checkpoint: duplicate record for '" + name + "'");
    }
    if (seen.size() != params.items.size())
        throw std::runtime_error("checkpoint: file covers " + std::to_string(seen.size()) +
                                 " of " + std::to_string(params.items.size()) + " parameters");
    return last;
}

Dtype load_file(const std::string& path, ParamStore& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    return load(f, params);
}

}  // namespace ccoma::checkpoint

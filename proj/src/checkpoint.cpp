#include "svt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

namespace svt {

namespace {
constexpr char kMagic[8] = {'S', 'V', 'T', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const ParamStore& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ArgumentError("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, sizeof(kMagic));
    const uint64_t count = params.entries().size();
    os.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& [name, t] : params.entries()) {
        const uint32_t nlen = static_cast<uint32_t>(name.size());
        os.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
        os.write(name.data(), nlen);
        const uint32_t ndim = static_cast<uint32_t>(t.shape().size());
        os.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
        for (int64_t d : t.shape()) {
            const uint64_t ud = static_cast<uint64_t>(d);
            os.write(reinterpret_cast<const char*>(&ud), sizeof(ud));
        }
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
    }
    if (!os) throw ArgumentError("checkpoint: write to " + path + " failed");
}

void load_checkpoint(ParamStore& params, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ArgumentError("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ArgumentError("checkpoint: " + path + " is not a checkpoint file");
    uint64_t count = 0;
    is.read(reinterpret_cast<char*>(&count), sizeof(count));
    std::set<std::string> seen;
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t nlen = 0;
        is.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        uint32_t ndim = 0;
        is.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) {
            uint64_t ud = 0;
            is.read(reinterpret_cast<char*>(&ud), sizeof(ud));
            shape[d] = static_cast<int64_t>(ud);
        }
        if (!is) throw ArgumentError("checkpoint: truncated file " + path);
        if (!params.contains(name)) throw ArgumentError("checkpoint: unknown parameter '" + name + "'");
        Tensor& t = params.get(name);
        if (t.shape() != shape)
            throw ArgumentError("checkpoint: shape mismatch for '" + name + "': file has " + shape_str(shape) +
                                ", model has " + shape_str(t.shape()));
        is.read(reinterpret_cast<char*>(t.data_mut().data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
        if (!is) throw ArgumentError("checkpoint: truncated payload in " + path);
        seen.insert(name);
    }
    for (const auto& [name, t] : params.entries())
        if (!seen.count(name)) throw ArgumentError("checkpoint: parameter '" + name + "' missing from " + path);
}

}  // namespace svt

#include "steerkit/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "steerkit/errors.hpp"

namespace steerkit {

namespace {

constexpr char kMagic[5] = {'H', 'S', 'T', 'R', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
    const std::uint8_t* p;
    const std::uint8_t* end;

    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end - p) < n)
            throw ArchiveError("checkpoint: truncated archive");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        p += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        p += 8;
        return v;
    }
};

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::vector<std::uint8_t> serialize_checkpoint(const NamedTensors& tensors) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 5);
    put_u32(out, kVersion);
    put_u64(out, tensors.entries.size());
    for (const auto& [name, t] : tensors.entries) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, 0);  // dtype f32
        put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
        for (std::size_t d : t.shape()) put_u64(out, d);
        std::size_t off = out.size();
        out.resize(off + t.numel() * sizeof(float));
        std::memcpy(out.data() + off, t.value().data(), t.numel() * sizeof(float));
    }
    put_u64(out, fnv1a64(out.data(), out.size()));
    return out;
}

NamedTensors deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 5 + 4 + 8 + 8) throw ArchiveError("checkpoint: file too small");
    if (std::memcmp(bytes.data(), kMagic, 5) != 0)
        throw BadMagicError("checkpoint: bad magic");
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
    if (fnv1a64(bytes.data(), bytes.size() - 8) != stored)
        throw ChecksumError("checkpoint: checksum mismatch");

    Reader r{bytes.data() + 5, bytes.data() + bytes.size() - 8};
    std::uint32_t version = r.u32();
    if (version != kVersion) throw BadVersionError("checkpoint: unsupported version");

    NamedTensors result;
    std::uint64_t count = r.u64();
    for (std::uint64_t e = 0; e < count; ++e) {
        std::uint32_t name_len = r.u32();
        r.need(name_len);
        std::string name(reinterpret_cast<const char*>(r.p), name_len);
        r.p += name_len;
        std::uint32_t dtype = r.u32();
        if (dtype != 0) throw ArchiveError("checkpoint: unsupported dtype code");
        std::uint32_t rank = r.u32();
        std::vector<std::size_t> shape(rank);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<std::size_t>(r.u64());
            numel *= shape[d];
        }
        r.need(numel * sizeof(float));
        std::vector<float> data(numel);
        std::memcpy(data.data(), r.p, numel * sizeof(float));
        r.p += numel * sizeof(float);
        result.entries.emplace(std::move(name),
                               TensorF::from(std::move(data), std::move(shape)));
    }
    if (r.p != r.end) throw ArchiveError("checkpoint: trailing bytes");
    return result;
}

void save_checkpoint(const NamedTensors& tensors, const std::string& path) {
    auto bytes = serialize_checkpoint(tensors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("checkpoint: write failed: " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw DataError("checkpoint: cannot open: " + path);
    std::streamsize n = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw DataError("checkpoint: read failed: " + path);
    return deserialize_checkpoint(bytes);
}

}  // namespace steerkit

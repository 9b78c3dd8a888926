#include <cstring>
#include <fstream>

#include "nnc/error.hpp"
#include "nnc/ingest.hpp"

namespace nnc::ingest {

namespace {

constexpr char kMagic[4] = {'S', 'O', 'L', 'W'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct Reader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;
    std::string context = "header";

    void need(size_t n) {
        if (pos + n > bytes.size())
            throw Error(Error::Code::TruncatedTensor, "truncated container at " + context);
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
};

} // namespace

std::vector<uint8_t> save_weights(const WeightStore& store) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(store.tensors.size()));
    put_u32(out, 0);  // reserved
    for (const auto& [name, t] : store.tensors) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<uint8_t>(t.dtype()));
        put_u32(out, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.dims()) put_u64(out, static_cast<uint64_t>(d));
        out.insert(out.end(), t.data(), t.data() + t.byte_size());
    }
    return out;
}

WeightStore load_weights(const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw Error(Error::Code::BadMagic, "not a SOLW container");
    r.pos = 4;
    uint32_t version = r.u32();
    if (version != kVersion)
        throw Error(Error::Code::BadMagic, "unsupported SOLW version " + std::to_string(version));
    uint32_t count = r.u32();
    r.u32();  // reserved

    WeightStore store;
    for (uint32_t i = 0; i < count; ++i) {
        r.context = "tensor " + std::to_string(i);
        uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        r.context = name;
        uint8_t dtype_code = r.u8();
        if (dtype_code > 1)
            throw Error(Error::Code::BadMagic, name + ": unknown dtype code");
        DType dt = static_cast<DType>(dtype_code);
        uint32_t rank = r.u32();
        std::vector<int64_t> dims;
        for (uint32_t d = 0; d < rank; ++d) dims.push_back(static_cast<int64_t>(r.u64()));
        Tensor t(dt, dims);
        r.need(t.byte_size());
        std::memcpy(t.data(), bytes.data() + r.pos, t.byte_size());
        r.pos += t.byte_size();
        if (!store.tensors.emplace(name, std::move(t)).second)
            throw Error(Error::Code::DuplicateName, "duplicate tensor " + name);
    }
    return store;
}

WeightStore load_weights_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Error::Code::BadDocument, "cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return load_weights(bytes);
}

void save_weights_file(const WeightStore& store, const std::string& path) {
    auto bytes = save_weights(store);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Error::Code::BadDocument, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
}

} // namespace nnc::ingest

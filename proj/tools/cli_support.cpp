#include "cli_support.hpp"

#include <fstream>
#include <sstream>

#include "nnc/error.hpp"
#include "nnc/ingest.hpp"

namespace nnc::cli {

passes::VdimBinding parse_vdims_flag(const std::string& text) {
    passes::VdimBinding binding;
    size_t pos = 0;
    auto fail = [&](size_t at) {
        throw Error(Error::Code::BadToken,
                    "--vdims: bad token at position " + std::to_string(at) + " in \"" + text +
                        "\"");
    };
    while (pos < text.size()) {
        size_t start = pos;
        size_t comma = text.find(',', pos);
        std::string token = text.substr(pos, comma == std::string::npos ? std::string::npos
                                                                        : comma - pos);
        pos = comma == std::string::npos ? text.size() : comma + 1;
        if (token.empty()) fail(start);
        if (token[0] != '#') fail(start);
        size_t eq = token.find('=');
        if (eq == std::string::npos || eq < 2) fail(start);
        int32_t id = 0;
        try {
            size_t used = 0;
            id = std::stoi(token.substr(1, eq - 1), &used);
            if (used != eq - 1 || id < 0) fail(start);
        } catch (const std::exception&) {
            fail(start);
        }
        std::string rhs = token.substr(eq + 1);
        passes::VdimBinding::Item item;
        if (rhs == "true") {
            item.action = passes::VdimBinding::Action::Enable;
        } else if (rhs == "false") {
            item.action = passes::VdimBinding::Action::Disable;
        } else {
            try {
                size_t used = 0;
                long long v = std::stoll(rhs, &used);
                if (used != rhs.size() || v < 1) fail(start + eq + 1);
                item.action = passes::VdimBinding::Action::Override;
                item.extent = v;
            } catch (const Error&) {
                throw;
            } catch (const std::exception&) {
                fail(start + eq + 1);
            }
        }
        binding.items[id] = item;
    }
    return binding;
}

uint64_t weight_content_hash(const Tensor& t) {
    uint64_t h = 14695981039346656037ull;
    auto mix = [&](const uint8_t* p, size_t n) {
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    uint8_t dt = static_cast<uint8_t>(t.dtype());
    mix(&dt, 1);
    for (int64_t d : t.dims()) {
        uint64_t v = static_cast<uint64_t>(d);
        mix(reinterpret_cast<const uint8_t*>(&v), sizeof(v));
    }
    mix(t.data(), t.byte_size());
    return h;
}

std::map<std::string, uint64_t> load_device_state(const std::string& path) {
    std::map<std::string, uint64_t> state;
    std::ifstream in(path);
    if (!in) return state;  // absent state = cold device
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string hex, name;
        if (!(ls >> hex >> name)) continue;
        state[name] = std::stoull(hex, nullptr, 16);
    }
    return state;
}

void save_device_state(const std::string& path, const runtime::HostModel& model) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(Error::Code::BadDocument, "cannot write " + path);
    for (const auto& [name, t] : model.weights) {
        std::ostringstream hex;
        hex << std::hex << weight_content_hash(t);
        out << hex.str() << ' ' << name << '\n';
    }
}

} // namespace nnc::cli

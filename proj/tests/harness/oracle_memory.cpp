#include <map>

#include "oracles.hpp"

namespace nnc::testing {

OracleMemory oracle_replay(const std::vector<OracleEvent>& events) {
    OracleMemory m;
    long long total = 0;
    std::map<std::string, long long> live;
    for (const OracleEvent& e : events) {
        if (e.alloc) {
            live[e.value] += e.bytes;
            total += e.bytes;
            m.alloc_total += e.bytes;
        } else {
            auto it = live.find(e.value);
            if (it == live.end() || it->second < e.bytes) {
                m.balanced = false;
                continue;
            }
            it->second -= e.bytes;
            if (it->second == 0) live.erase(it);
            total -= e.bytes;
            m.free_total += e.bytes;
        }
        if (total > m.peak) m.peak = total;
    }
    m.resident_end = total;
    return m;
}

} // namespace nnc::testing

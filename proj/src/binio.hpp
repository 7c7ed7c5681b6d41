#pragma once

#include <cstring>
#include <fstream>
#include <type_traits>

namespace handpose::detail {

// Little-endian scalar I/O; memcpy keeps it alias-safe and the project
// only targets little-endian hosts (asserted by the format docs).
template <typename T>
void write_le(std::ofstream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
    char buf[sizeof(T)] = {};
    in.read(buf, sizeof(T));
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

}  // namespace handpose::detail

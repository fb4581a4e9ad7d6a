#include "chrep/warnings.hpp"

#include <utility>

namespace chrep {

namespace {
thread_local std::vector<std::string> g_warnings;
}

void warn(std::string message) {
    // Avoid unbounded growth from per-batch warnings in long runs.
    if (g_warnings.size() < 10000) g_warnings.push_back(std::move(message));
}

std::vector<std::string> take_warnings() {
    return std::exchange(g_warnings, {});
}

std::size_t warning_count() {
    return g_warnings.size();
}

} // namespace chrep

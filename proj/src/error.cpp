#include "lepde/error.hpp"

#include <atomic>
#include <iostream>

namespace lepde {

namespace {
std::atomic<long> g_warnings{0};
std::atomic<bool> g_quiet{false};
}  // namespace

void warn(const std::string& msg) {
    ++g_warnings;
    if (!g_quiet) std::cerr << "[lepde] warning: " << msg << '\n';
}

long warning_count() { return g_warnings.load(); }

void set_warnings_quiet(bool quiet) { g_quiet = quiet; }

}  // namespace lepde

#include "breathscan/util.hpp"

#include <cstdlib>
#include <cstring>
#include <mutex>

namespace breathscan {

namespace {

LogLevel g_level = [] {
    const char* env = std::getenv("BREATHSCAN_LOG");
    if (!env) return LogLevel::Info;
    std::string s(env);
    if (s == "error") return LogLevel::Error;
    if (s == "warn") return LogLevel::Warn;
    if (s == "info") return LogLevel::Info;
    if (s == "debug") return LogLevel::Debug;
    return LogLevel::Info;
}();

std::mutex g_log_mutex;

const char* level_tag(LogLevel lv) {
    switch (lv) {
        case LogLevel::Error: return "E";
        case LogLevel::Warn: return "W";
        case LogLevel::Info: return "I";
        case LogLevel::Debug: return "D";
    }
    return "?";
}

std::string vformat(const char* fmt, va_list ap) {
    va_list ap2;
    va_copy(ap2, ap);
    int n = std::vsnprintf(nullptr, 0, fmt, ap2);
    va_end(ap2);
    if (n < 0) return fmt;
    std::string out(static_cast<std::size_t>(n), '\0');
    std::vsnprintf(out.data(), out.size() + 1, fmt, ap);
    return out;
}

}  // namespace

LogLevel log_level() { return g_level; }
void set_log_level(LogLevel lv) { g_level = lv; }

void log_msg(LogLevel lv, const char* fmt, ...) {
    if (static_cast<int>(lv) > static_cast<int>(g_level)) return;
    va_list ap;
    va_start(ap, fmt);
    std::string msg = vformat(fmt, ap);
    va_end(ap);
    std::lock_guard<std::mutex> lock(g_log_mutex);
    std::fprintf(stderr, "[breathscan %s] %s\n", level_tag(lv), msg.c_str());
}

std::string format_str(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    std::string out = vformat(fmt, ap);
    va_end(ap);
    return out;
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

namespace {
void write_bytes_le(FILE* f, const void* p, std::size_t n) {
    if (std::fwrite(p, 1, n, f) != n) throw RuntimeAbort("short write");
}
void read_bytes_le(FILE* f, void* p, std::size_t n, const char* what) {
    if (std::fread(p, 1, n, f) != n)
        throw FormatError(format_str("unexpected end of file while reading %s", what));
}
}  // namespace

// The build targets little-endian hosts; serialization is raw IEEE/uint bytes.
static_assert(sizeof(float) == 4);

void write_u32(FILE* f, std::uint32_t v) { write_bytes_le(f, &v, 4); }
void write_i32(FILE* f, std::int32_t v) { write_bytes_le(f, &v, 4); }
void write_f32(FILE* f, float v) { write_bytes_le(f, &v, 4); }
void write_f32_array(FILE* f, const float* p, std::size_t n) { write_bytes_le(f, p, 4 * n); }

std::uint32_t read_u32(FILE* f, const char* what) {
    std::uint32_t v;
    read_bytes_le(f, &v, 4, what);
    return v;
}
std::int32_t read_i32(FILE* f, const char* what) {
    std::int32_t v;
    read_bytes_le(f, &v, 4, what);
    return v;
}
float read_f32(FILE* f, const char* what) {
    float v;
    read_bytes_le(f, &v, 4, what);
    return v;
}
void read_f32_array(FILE* f, float* p, std::size_t n, const char* what) {
    read_bytes_le(f, p, 4 * n, what);
}

std::string read_text_file(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw FormatError("cannot open file: " + path);
    std::string out;
    char buf[65536];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) out.append(buf, n);
    std::fclose(f);
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw RuntimeAbort("cannot open file for writing: " + path);
    if (!content.empty() && std::fwrite(content.data(), 1, content.size(), f) != content.size()) {
        std::fclose(f);
        throw RuntimeAbort("short write: " + path);
    }
    std::fclose(f);
}

std::string format_double(double v) {
    // %.17g round-trips any double; trim to the shortest form that re-parses
    // to the same bits so artifacts stay compact and stable.
    for (int prec = 1; prec <= 17; ++prec) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace breathscan

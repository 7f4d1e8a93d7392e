#pragma once

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace breathscan {

// Error taxonomy. The CLI maps these onto exit codes; library code throws.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Malformed input file (bad RIFF header, truncated payload, bad magic).
struct FormatError : Error {
    using Error::Error;
};
// Input that parses but violates a documented contract (overlapping pauses,
// label sets out of range, length mismatches).
struct ValidationError : Error {
    using Error::Error;
};
// Bad configuration (invalid FrameConfig, missing paths, threshold ordering).
struct ConfigError : Error {
    using Error::Error;
};
// Unrecoverable runtime failure (NaN loss, I/O failure mid-run).
struct RuntimeAbort : Error {
    using Error::Error;
};

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Verbosity comes from the BREATHSCAN_LOG env var (error|warn|info|debug),
// default info. Messages go to stderr.
LogLevel log_level();
void set_log_level(LogLevel lv);
void log_msg(LogLevel lv, const char* fmt, ...);

#define BS_LOG_ERROR(...) ::breathscan::log_msg(::breathscan::LogLevel::Error, __VA_ARGS__)
#define BS_LOG_WARN(...) ::breathscan::log_msg(::breathscan::LogLevel::Warn, __VA_ARGS__)
#define BS_LOG_INFO(...) ::breathscan::log_msg(::breathscan::LogLevel::Info, __VA_ARGS__)
#define BS_LOG_DEBUG(...) ::breathscan::log_msg(::breathscan::LogLevel::Debug, __VA_ARGS__)

std::string format_str(const char* fmt, ...);

// FNV-1a 64-bit. Used for checkpoint/config hashes recorded in manifests and
// run history; stable across platforms.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Little-endian binary I/O helpers for the .bsft/.bsck/.bslb containers.
void write_u32(FILE* f, std::uint32_t v);
void write_i32(FILE* f, std::int32_t v);
void write_f32(FILE* f, float v);
void write_f32_array(FILE* f, const float* p, std::size_t n);
std::uint32_t read_u32(FILE* f, const char* what);
std::int32_t read_i32(FILE* f, const char* what);
float read_f32(FILE* f, const char* what);
void read_f32_array(FILE* f, float* p, std::size_t n, const char* what);

// Whole-file helpers (text artifacts, byte-compare in tests).
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Shortest round-trip decimal formatting; keeps serialized floats stable for
// the byte-identical reproducibility contract.
std::string format_double(double v);

}  // namespace breathscan

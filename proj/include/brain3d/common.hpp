#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace brain3d {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Structured-text / binary container parse failure, carries the source line.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, const std::string& path, int line)
        : Error(path + ":" + std::to_string(line) + ": " + msg), path_(path), line_(line) {}
    const std::string& path() const { return path_; }
    int line() const { return line_; }

private:
    std::string path_;
    int line_ = 0;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

// Provider could not be reached or answered malformed; retryable.
class TransportError : public Error {
public:
    using Error::Error;
};

// Numeric blow-up in an iterative procedure (training or sampling).
class DivergenceError : public Error {
public:
    using Error::Error;
};

// Wraps a failure with the pipeline stage it happened in.
class StageError : public Error {
public:
    StageError(const std::string& stage, const std::string& msg)
        : Error("stage " + stage + ": " + msg), stage_(stage) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

std::vector<uint8_t> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

// Writes via a temp file in the same directory followed by rename.
void write_file_atomic(const std::filesystem::path& path, const void* data, size_t size);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
void write_file_atomic(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);

std::string base64_encode(const uint8_t* data, size_t size);
std::string base64_encode(const std::vector<uint8_t>& bytes);
std::string base64_encode(const std::string& text);
std::vector<uint8_t> base64_decode(const std::string& text);

// SHA-256 hex digest (lowercase).
std::string sha256_hex(const void* data, size_t size);
std::string sha256_hex(const std::string& text);
std::string sha256_hex(const std::vector<uint8_t>& bytes);

// First 8 bytes of SHA-256, big-endian; handy for deriving seeds from labels.
uint64_t sha256_seed(const std::string& text);

inline void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v & 0xff));
    out.push_back(uint8_t((v >> 8) & 0xff));
    out.push_back(uint8_t((v >> 16) & 0xff));
    out.push_back(uint8_t((v >> 24) & 0xff));
}

inline uint32_t get_u32le(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

void put_f32le(std::vector<uint8_t>& out, float v);
float get_f32le(const uint8_t* p);

// Deterministic seeded RNG used across the project. std::mt19937_64 is the
// bit source (its output sequence is pinned by the standard); the
// uniform/normal transforms are hand-rolled so streams are identical on
// every standard library.
class Rng {
public:
    explicit Rng(uint64_t seed);

    // Uniform in [0, 1).
    double uniform();
    // Standard normal via Box-Muller.
    double normal();
    // Uniform integer in [0, n), n > 0, rejection sampled.
    uint64_t uniform_int(uint64_t n);

    // Independent child stream derived from (seed, stream index).
    Rng fork(uint64_t stream) const;

    uint64_t next_raw();

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace brain3d

#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "brain3d/common.hpp"

using namespace brain3d;

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex(std::string("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex(std::string("")) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("base64 round trip") {
    Rng rng(7);
    for (int len = 0; len < 40; ++len) {
        std::vector<uint8_t> bytes;
        for (int i = 0; i < len; ++i) bytes.push_back(uint8_t(rng.uniform_int(256)));
        CHECK(base64_decode(base64_encode(bytes)) == bytes);
    }
    CHECK(base64_encode(std::string("hello")) == "aGVsbG8=");
}

TEST_CASE("rng determinism and fork independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_raw() == b.next_raw());

    Rng c(42);
    Rng f1 = c.fork(1), f2 = c.fork(2);
    CHECK(f1.next_raw() != f2.next_raw());

    Rng n(3);
    double mean = 0.0;
    const int samples = 20000;
    for (int i = 0; i < samples; ++i) mean += n.normal();
    mean /= samples;
    CHECK(std::abs(mean) < 0.05);
}

TEST_CASE("atomic write leaves no temp file") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "brain3d_common_test";
    fs::remove_all(dir);
    fs::path p = dir / "x.bin";
    write_file_atomic(p, std::string("payload"));
    CHECK(read_text_file(p) == "payload");
    int leftovers = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().filename() != "x.bin") ++leftovers;
    CHECK(leftovers == 0);
    fs::remove_all(dir);
}

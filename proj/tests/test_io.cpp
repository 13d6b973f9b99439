#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "mindkit/ppm.hpp"
#include "mindkit/tnsr.hpp"

using namespace mindkit;

namespace {
std::string tmpdir() {
    auto dir = std::filesystem::temp_directory_path() / "mindkit_io_test";
    std::filesystem::create_directories(dir);
    return dir.string();
}
}  // namespace

TEST_CASE("tnsr round trip preserves shape and bits", "[io]") {
    Rng rng(2);
    for (int rep = 0; rep < 10; ++rep) {
        Shape shape;
        int rank = 1 + rng.uniform_int(3);
        for (int i = 0; i < rank; ++i) shape.push_back(1 + rng.uniform_int(6));
        Tensor t = Tensor::randn(shape, rng);
        std::string path = tmpdir() + "/t.tnsr";
        write_tnsr(path, t);
        Tensor back = read_tnsr(path);
        CHECK(back.shape == t.shape);
        CHECK(back.data == t.data);  // bitwise
    }
}

TEST_CASE("tnsr header layout is stable", "[io]") {
    // pinned byte layout: magic, version, rank, extents (LE u32), f32 payload
    Tensor t({1, 2}, {1.0f, -2.0f});
    std::string path = tmpdir() + "/h.tnsr";
    write_tnsr(path, t);
    std::ifstream in(path, std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() == 4 + 1 + 1 + 8 + 8);
    CHECK(bytes[0] == 'T');
    CHECK(bytes[1] == 'N');
    CHECK(bytes[2] == 'S');
    CHECK(bytes[3] == 'R');
    CHECK(bytes[4] == 1);  // version
    CHECK(bytes[5] == 2);  // rank
    CHECK(bytes[6] == 1);  // extent[0] LE
    CHECK(bytes[7] == 0);
    CHECK(bytes[10] == 2);  // extent[1] LE
}

TEST_CASE("ppm round trip is exact on the 1/255 grid", "[io]") {
    Rng rng(3);
    std::vector<float> px(8 * 8 * 3);
    for (auto& v : px) v = static_cast<float>(rng.uniform_int(256)) / 255.0f;
    Tensor img({8, 8, 3}, px);
    std::string path = tmpdir() + "/img.ppm";
    write_ppm(path, img);
    Tensor back = read_ppm(path);
    CHECK(back.shape == img.shape);
    CHECK(back.data == img.data);
}

TEST_CASE("ppm rejects wrong shapes", "[io]") {
    CHECK_THROWS_AS(write_ppm(tmpdir() + "/bad.ppm", Tensor::zeros({8, 8})), BadResolution);
}

TEST_CASE("tensor bundle saves, loads and hashes", "[io]") {
    Rng rng(4);
    TensorBundle b;
    b["weight"] = Tensor::randn({3, 3}, rng);
    b["bias"] = Tensor::randn({3}, rng);
    std::string dir = tmpdir() + "/bundle";
    b.save(dir);
    TensorBundle back = TensorBundle::load(dir);
    CHECK(back.at("weight").data == b.at("weight").data);
    CHECK(back.content_hash() == b.content_hash());
    CHECK_THROWS_AS(back.at("missing"), IOFailure);
}

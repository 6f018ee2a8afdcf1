#include "doctest.h"

#include <filesystem>

#include "brain3d/geometry.hpp"
#include "oracles.hpp"

using namespace brain3d;
using namespace brain3d::geom;

namespace {
const char* kCubeObj =
    "v -0.5 -0.5 -0.5\nv 0.5 -0.5 -0.5\nv 0.5 -0.5 0.5\nv -0.5 -0.5 0.5\n"
    "v -0.5 0.5 -0.5\nv 0.5 0.5 -0.5\nv 0.5 0.5 0.5\nv -0.5 0.5 0.5\n"
    "f 1 2 3 4\nf 5 8 7 6\nf 1 5 6 2\nf 3 7 8 4\nf 2 6 7 3\nf 4 8 5 1\n";

Image flat_image(int side, uint8_t value) {
    return Image(side, side, {value, value, value});
}
}  // namespace

TEST_CASE("cube OBJ fixture parses to 8 vertices and 12 triangles") {
    TriMesh mesh = parse_obj(kCubeObj);
    CHECK(mesh.vertices.size() == 8);
    CHECK(mesh.triangles.size() == 12);
}

TEST_CASE("quad faces fan-triangulate as (1,2,3),(1,3,4)") {
    TriMesh mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
    REQUIRE(mesh.triangles.size() == 2);
    CHECK(mesh.triangles[0] == std::array<int, 3>{0, 1, 2});
    CHECK(mesh.triangles[1] == std::array<int, 3>{0, 2, 3});
}

TEST_CASE("obj parser reports malformed records with line numbers") {
    try {
        parse_obj("v 0 0 0\nv 1 0\nf 1 2 3\n", "bad.obj");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\n"), ParseError);  // zero faces
}

TEST_CASE("obj parser skips unknown records with a count") {
    ObjReadStats stats;
    parse_obj("vn 0 0 1\nvt 0 0\nv 0 0 0\nv 1 0 0\nv 0 1 0\nusemtl none\nf 1 2 3\n", "<obj>", &stats);
    CHECK(stats.ignored_records == 3);
}

TEST_CASE("obj faces accept slash forms and negative indices") {
    TriMesh mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2/2 -1//3\n");
    CHECK(mesh.triangles.size() == 1);
    CHECK(mesh.triangles[0] == std::array<int, 3>{0, 1, 2});
}

TEST_CASE("mesh validation names the offending index") {
    TriMesh mesh;
    for (int i = 0; i < 8; ++i) mesh.vertices.emplace_back(i, 0, 0);
    mesh.triangles.push_back({0, 1, 99});
    CHECK_THROWS_WITH_AS(mesh.validate(), doctest::Contains("99"), ValidationError);

    mesh.triangles[0] = {1, 1, 2};
    CHECK_THROWS_WITH_AS(mesh.validate(), doctest::Contains("repeats"), ValidationError);

    mesh.triangles[0] = {0, 1, 2};
    mesh.vertex_colors.assign(3, {1, 2, 3});
    CHECK_THROWS_AS(mesh.validate(), ValidationError);  // color count != vertex count
}

TEST_CASE("500-triangle mesh round trips through OBJ text") {
    Rng rng(4);
    TriMesh m;
    for (int t = 0; t < 500; ++t) {
        int base = int(m.vertices.size());
        for (int i = 0; i < 3; ++i)
            m.vertices.emplace_back(rng.uniform() * 4 - 2, rng.uniform() * 4 - 2, rng.uniform() * 4 - 2);
        m.triangles.push_back({base, base + 1, base + 2});
    }
    std::string s1 = obj_text(m);
    TriMesh m2 = parse_obj(s1);
    std::string s2 = obj_text(m2);
    CHECK(s1 == s2);
    CHECK(m2.triangles == m.triangles);
    REQUIRE(m2.vertices.size() == m.vertices.size());
    for (size_t i = 0; i < m.vertices.size(); ++i)
        CHECK((m2.vertices[i] - m.vertices[i]).norm() < 1e-6);
}

TEST_CASE("vertex colors round trip") {
    TriMesh m = parse_obj("v 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nf 1 2 3\n");
    REQUIRE(m.vertex_colors.size() == 3);
    CHECK(m.vertex_colors[0] == std::array<uint8_t, 3>{255, 0, 0});
    TriMesh m2 = parse_obj(obj_text(m));
    CHECK(m2.vertex_colors == m.vertex_colors);
}

TEST_CASE("normalize_to_unit_sphere centers and scales") {
    TriMesh m = parse_obj(kCubeObj);
    for (auto& v : m.vertices) v += Eigen::Vector3d(3, -2, 1);  // shift away from origin
    TriMesh n = normalize_to_unit_sphere(m);
    CHECK(n.centroid().norm() < 1e-12);
    double maxr = 0;
    for (const auto& v : n.vertices) maxr = std::max(maxr, v.norm());
    CHECK(maxr == doctest::Approx(1.0).epsilon(1e-12));
    // aspect preserved: all pairwise distances scale by one factor
    double scale = (n.vertices[1] - n.vertices[0]).norm() / (m.vertices[1] - m.vertices[0]).norm();
    for (size_t i = 1; i < m.vertices.size(); ++i) {
        double s = (n.vertices[i] - n.vertices[0]).norm() / (m.vertices[i] - m.vertices[0]).norm();
        CHECK(s == doctest::Approx(scale).epsilon(1e-9));
    }
}

TEST_CASE("text_to_image mock determinism and provenance") {
    providers::MockTextToImage provider;
    reason::SemanticDescription desc;
    desc.text = "A tall blue ceramic vase with a narrow neck, rendered as a 3D model on a white background.";
    desc.source_image_id = "img0";
    GenStageConfig cfg;
    GeneratedImage a = text_to_image(desc, cfg, provider);
    GeneratedImage b = text_to_image(desc, cfg, provider);
    CHECK(a.image.same_pixels(b.image));
    CHECK(a.prov.stage == "t2i");
    CHECK(a.prov.prompt_hash == sha256_hex(desc.text));
    CHECK(a.prov.provider_id == provider.id());
}

TEST_CASE("empty prompt fails before any provider call") {
    providers::MockTextToImage provider;
    reason::SemanticDescription desc;  // empty text
    GenStageConfig cfg;
    CHECK_THROWS_AS(text_to_image(desc, cfg, provider), ValidationError);
    CHECK(provider.call_count() == 0);
}

TEST_CASE("image_to_mesh validates provider output") {
    GenStageConfig cfg;
    providers::MockImageToMesh good;
    GeneratedMesh m = image_to_mesh(flat_image(8, 128), cfg, good);
    CHECK(m.mesh.vertices.size() == 8);
    CHECK(m.mesh.triangles.size() == 12);
    CHECK(m.prov.mode == "full");

    providers::ScriptedImageToMesh bad("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 100\n");
    CHECK_THROWS_WITH_AS(image_to_mesh(flat_image(8, 128), cfg, bad),
                         doctest::Contains("invalid mesh"), ValidationError);
}

TEST_CASE("mock mesh edge length follows brightness, diagonal is sqrt(3) of it") {
    GenStageConfig cfg;
    providers::MockImageToMesh provider;
    struct Case {
        double brightness;
        double edge;
    };
    // brightness 0, 0.5, 1 -> edges 0.5, 1.0, 2.0
    for (const auto& c : {Case{0.0, 0.5}, Case{0.5, 1.0}, Case{1.0, 2.0}}) {
        Image img(2, 1);
        if (c.brightness == 0.5) {
            for (int i = 0; i < 3; ++i) {
                img.at(0, 0)[i] = 127;
                img.at(1, 0)[i] = 128;
            }
        } else {
            uint8_t v = uint8_t(c.brightness * 255.0);
            img = Image(2, 1, {v, v, v});
        }
        GeneratedMesh m = image_to_mesh(img, cfg, provider);
        Eigen::Vector3d lo, hi;
        m.mesh.bounds(lo, hi);
        CHECK((hi - lo).norm() == doctest::Approx(std::sqrt(3.0) * c.edge).epsilon(1e-9));
    }
}

TEST_CASE("ablation bypass shares the contract and tags the mode") {
    GenStageConfig cfg;
    providers::MockImageToMesh provider;
    Image img = flat_image(8, 90);
    GeneratedMesh full = image_to_mesh(img, cfg, provider);
    GeneratedMesh direct = ablation_bypass(img, cfg, provider);
    CHECK(full.mesh.triangles == direct.mesh.triangles);
    REQUIRE(full.mesh.vertices.size() == direct.mesh.vertices.size());
    for (size_t i = 0; i < full.mesh.vertices.size(); ++i)
        CHECK(testsupport::exact_equal(full.mesh.vertices[i], direct.mesh.vertices[i]));
    CHECK(full.prov.mode == "full");
    CHECK(direct.prov.mode == "direct");
}

TEST_CASE("gen config validation and hash") {
    GenStageConfig cfg;
    CHECK(cfg.t2i_steps == 30);
    CHECK(cfg.t2i_guidance == 4.5);
    CHECK(cfg.texture_resolution == 1024);
    GenStageConfig bad = cfg;
    bad.t2i_steps = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    GenStageConfig other = cfg;
    other.seed = 1;
    CHECK(gen_config_hash(cfg) != gen_config_hash(other));
    CHECK(gen_config_hash(cfg) == gen_config_hash(GenStageConfig{}));
}

TEST_CASE("obj file io") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "b3d_obj";
    fs::remove_all(dir);
    TriMesh m = parse_obj(kCubeObj);
    write_obj(m, dir / "cube.obj");
    TriMesh r = load_obj(dir / "cube.obj");
    CHECK(r.triangles == m.triangles);
    fs::remove_all(dir);
}

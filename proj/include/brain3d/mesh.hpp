#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "brain3d/common.hpp"

namespace brain3d::geom {

struct TriMesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<std::array<uint8_t, 3>> vertex_colors;  // empty or one per vertex

    void validate() const;
    // Axis-aligned bounds; mesh must be non-empty.
    void bounds(Eigen::Vector3d& lo, Eigen::Vector3d& hi) const;
    Eigen::Vector3d centroid() const;
};

// Uniform scale + translation so the mesh fits the unit sphere centered at
// the origin (max vertex distance from centroid becomes 1).
TriMesh normalize_to_unit_sphere(const TriMesh& mesh);

struct ObjReadStats {
    int ignored_records = 0;
};

// OBJ subset: "v x y z [r g b]" and "f ..." with fan triangulation of
// polygons; everything else is counted and skipped.
TriMesh parse_obj(const std::string& text, const std::string& origin = "<obj>",
                  ObjReadStats* stats = nullptr);
TriMesh load_obj(const std::filesystem::path& path, ObjReadStats* stats = nullptr);
std::string obj_text(const TriMesh& mesh);
void write_obj(const TriMesh& mesh, const std::filesystem::path& path);

// Configuration of the semantic-to-geometry stage, passed through to the
// text-to-image and image-to-3D providers.
struct GenStageConfig {
    int t2i_steps = 30;
    double t2i_guidance = 4.5;
    int texture_resolution = 1024;
    uint64_t seed = 0;

    void validate() const;
};

// Attached to every generated artifact.
struct Provenance {
    std::string stage;
    std::string provider_id;
    std::string config_hash;
    uint64_t seed = 0;
    std::string upstream_hash;
    std::string prompt_hash;  // t2i only
    std::string mode;         // "full" or "direct" where applicable
};

}  // namespace brain3d::geom

#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "brain3d/image.hpp"
#include "brain3d/mesh.hpp"

namespace brain3d::render {

// One evaluation camera. Axis convention: right-handed, +y up, front is the
// camera on +z; azimuth rotates counterclockwise viewed from +y.
struct ViewSpec {
    std::string label;
    double azimuth_deg = 0.0;    // wrapped into [0, 360)
    double elevation_deg = 0.0;
    double distance = 2.5;
    double fov_deg = 40.0;       // vertical field of view
    int width = 512;
    int height = 512;

    void validate() const;
    // Wraps azimuth into [0, 360).
    ViewSpec normalized() const;
};

struct ViewSetConfig {
    double azimuth_start = 0.0;
    double azimuth_step = 60.0;  // uniform coverage default; 30 reproduces the cited rig text
    double elevation = 20.0;
    double distance = 2.5;
    double fov = 40.0;
    int width = 512;
    int height = 512;
};

extern const std::array<const char*, 6> kCanonicalLabels;

// The six labeled views on a circular trajectory at fixed elevation.
std::vector<ViewSpec> canonical_views(const ViewSetConfig& cfg = {});

struct CameraPose {
    Eigen::Vector3d position;
    Eigen::Vector3d target;  // origin
    Eigen::Vector3d up;      // +y
    double fov_deg;
    int width;
    int height;
};

CameraPose camera_from_view(const ViewSpec& view);

// Screen-space triangle after near-clipping, projection and flat shading.
struct ScreenTriangle {
    double x[3];
    double y[3];
    double z[3];  // camera-space depth, smaller is nearer
    uint8_t r, g, b;
};

// Shared front end of both the production rasterizer and the brute-force
// reference: world -> camera -> near clip -> screen, headlight flat shade.
std::vector<ScreenTriangle> project_mesh(const geom::TriMesh& mesh, const CameraPose& pose);

// Z-buffered fill over per-triangle bounding boxes. tri_index, when given,
// receives the winning triangle per pixel (-1 for background).
Image rasterize(const std::vector<ScreenTriangle>& tris, int width, int height,
                std::vector<int32_t>* tri_index = nullptr);

struct RenderedView {
    Image image;
    ViewSpec view;
    std::string object_id;
};

RenderedView render(const geom::TriMesh& mesh, const ViewSpec& view, const std::string& object_id = "");

std::vector<RenderedView> render_all(const geom::TriMesh& mesh, const std::vector<ViewSpec>& views,
                                     const std::string& object_id = "");

// Line-delimited camera export, one view per line:
// label pos(x y z) lookat(x y z) up(x y z) fov width height, 9 significant
// digits for reals.
std::string camera_config_text(const std::vector<ViewSpec>& views);
void export_camera_config(const std::vector<ViewSpec>& views, const std::filesystem::path& path);

// Stable content hash of a view set (participates in report settings).
std::string view_set_hash(const std::vector<ViewSpec>& views);

}  // namespace brain3d::render

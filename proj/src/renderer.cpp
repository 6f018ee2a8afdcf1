#include "brain3d/renderer.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>

namespace brain3d::render {

namespace {
constexpr double kNear = 1e-4;
constexpr double kDeg = M_PI / 180.0;
}  // namespace

const std::array<const char*, 6> kCanonicalLabels = {"front", "front-left", "left",
                                                     "back",  "right",      "front-right"};

void ViewSpec::validate() const {
    if (label.empty()) throw ValidationError("view label must be non-empty");
    if (distance <= 0) throw ValidationError("view '" + label + "': distance must be positive");
    if (!(fov_deg > 0 && fov_deg < 180))
        throw ValidationError("view '" + label + "': fov must lie in (0, 180)");
    if (width <= 0 || height <= 0)
        throw ValidationError("view '" + label + "': resolution must be positive");
    if (!std::isfinite(azimuth_deg) || !std::isfinite(elevation_deg))
        throw ValidationError("view '" + label + "': angles must be finite");
}

ViewSpec ViewSpec::normalized() const {
    ViewSpec v = *this;
    v.azimuth_deg = std::fmod(v.azimuth_deg, 360.0);
    if (v.azimuth_deg < 0) v.azimuth_deg += 360.0;
    return v;
}

std::vector<ViewSpec> canonical_views(const ViewSetConfig& cfg) {
    std::vector<ViewSpec> views;
    for (size_t i = 0; i < kCanonicalLabels.size(); ++i) {
        ViewSpec v;
        v.label = kCanonicalLabels[i];
        v.azimuth_deg = cfg.azimuth_start + cfg.azimuth_step * double(i);
        v.elevation_deg = cfg.elevation;
        v.distance = cfg.distance;
        v.fov_deg = cfg.fov;
        v.width = cfg.width;
        v.height = cfg.height;
        v = v.normalized();
        v.validate();
        views.push_back(v);
    }
    return views;
}

CameraPose camera_from_view(const ViewSpec& view) {
    ViewSpec v = view.normalized();
    v.validate();
    double az = v.azimuth_deg * kDeg;
    double el = v.elevation_deg * kDeg;
    CameraPose pose;
    pose.position = Eigen::Vector3d(v.distance * std::cos(el) * std::sin(az), v.distance * std::sin(el),
                                    v.distance * std::cos(el) * std::cos(az));
    pose.target = Eigen::Vector3d::Zero();
    pose.up = Eigen::Vector3d(0, 1, 0);
    pose.fov_deg = v.fov_deg;
    pose.width = v.width;
    pose.height = v.height;
    return pose;
}

namespace {
struct CamVertex {
    Eigen::Vector3d p;  // camera space
};

// Clips a camera-space triangle against z >= kNear; appends 0..2 triangles.
void clip_near(const Eigen::Vector3d tri[3], std::vector<std::array<Eigen::Vector3d, 3>>& out) {
    Eigen::Vector3d poly[4];
    int n = 0;
    for (int i = 0; i < 3; ++i) {
        const Eigen::Vector3d& a = tri[i];
        const Eigen::Vector3d& b = tri[(i + 1) % 3];
        bool ain = a.z() >= kNear;
        bool bin = b.z() >= kNear;
        if (ain) poly[n++] = a;
        if (ain != bin) {
            double t = (kNear - a.z()) / (b.z() - a.z());
            poly[n++] = a + t * (b - a);
        }
    }
    for (int k = 1; k + 1 < n; ++k) out.push_back({poly[0], poly[k], poly[k + 1]});
}
}  // namespace

std::vector<ScreenTriangle> project_mesh(const geom::TriMesh& mesh, const CameraPose& pose) {
    mesh.validate();
    Eigen::Vector3d fwd = (pose.target - pose.position).normalized();
    Eigen::Vector3d right = fwd.cross(pose.up).normalized();
    Eigen::Vector3d up = right.cross(fwd);

    double half_h = std::tan(pose.fov_deg * kDeg / 2.0);
    double aspect = double(pose.width) / double(pose.height);
    double half_w = half_h * aspect;

    std::vector<ScreenTriangle> out;
    std::vector<std::array<Eigen::Vector3d, 3>> clipped;
    for (const auto& tri : mesh.triangles) {
        const Eigen::Vector3d& a = mesh.vertices[size_t(tri[0])];
        const Eigen::Vector3d& b = mesh.vertices[size_t(tri[1])];
        const Eigen::Vector3d& c = mesh.vertices[size_t(tri[2])];

        // Two-sided headlight flat shading: light travels down the camera
        // axis, so coplanar triangles of one face shade identically.
        Eigen::Vector3d n = (b - a).cross(c - a);
        double nn = n.norm();
        if (nn < 1e-15) continue;  // degenerate face
        double intensity = std::abs(n.dot(fwd) / nn);
        intensity = std::min(1.0, std::max(0.0, intensity));

        double base[3] = {0.7, 0.7, 0.7};
        if (!mesh.vertex_colors.empty()) {
            for (int k = 0; k < 3; ++k) {
                base[k] = (mesh.vertex_colors[size_t(tri[0])][size_t(k)] +
                           mesh.vertex_colors[size_t(tri[1])][size_t(k)] +
                           mesh.vertex_colors[size_t(tri[2])][size_t(k)]) /
                          (3.0 * 255.0);
            }
        }

        Eigen::Vector3d cam[3];
        const Eigen::Vector3d* world[3] = {&a, &b, &c};
        for (int i = 0; i < 3; ++i) {
            Eigen::Vector3d d = *world[i] - pose.position;
            cam[i] = Eigen::Vector3d(d.dot(right), d.dot(up), d.dot(fwd));
        }
        clipped.clear();
        clip_near(cam, clipped);
        for (const auto& ct : clipped) {
            ScreenTriangle st;
            for (int i = 0; i < 3; ++i) {
                double ndc_x = ct[size_t(i)].x() / (ct[size_t(i)].z() * half_w);
                double ndc_y = ct[size_t(i)].y() / (ct[size_t(i)].z() * half_h);
                st.x[i] = (ndc_x + 1.0) * double(pose.width) / 2.0;
                st.y[i] = (1.0 - ndc_y) * double(pose.height) / 2.0;
                st.z[i] = ct[size_t(i)].z();
            }
            st.r = clamp_channel(base[0] * intensity * 255.0);
            st.g = clamp_channel(base[1] * intensity * 255.0);
            st.b = clamp_channel(base[2] * intensity * 255.0);
            out.push_back(st);
        }
    }
    return out;
}

Image rasterize(const std::vector<ScreenTriangle>& tris, int width, int height,
                std::vector<int32_t>* tri_index) {
    Image img(width, height, {255, 255, 255});
    std::vector<double> zbuf(size_t(width) * height, std::numeric_limits<double>::infinity());
    if (tri_index) tri_index->assign(size_t(width) * height, -1);

    for (size_t t = 0; t < tris.size(); ++t) {
        const ScreenTriangle& tr = tris[t];
        double area = (tr.x[1] - tr.x[0]) * (tr.y[2] - tr.y[0]) - (tr.y[1] - tr.y[0]) * (tr.x[2] - tr.x[0]);
        if (area == 0.0) continue;
        int x_lo = std::max(0, int(std::floor(std::min({tr.x[0], tr.x[1], tr.x[2]}))));
        int x_hi = std::min(width - 1, int(std::ceil(std::max({tr.x[0], tr.x[1], tr.x[2]}))));
        int y_lo = std::max(0, int(std::floor(std::min({tr.y[0], tr.y[1], tr.y[2]}))));
        int y_hi = std::min(height - 1, int(std::ceil(std::max({tr.y[0], tr.y[1], tr.y[2]}))));
        for (int py = y_lo; py <= y_hi; ++py) {
            double sy = py + 0.5;
            for (int px = x_lo; px <= x_hi; ++px) {
                double sx = px + 0.5;
                double w0 = (tr.x[2] - tr.x[1]) * (sy - tr.y[1]) - (tr.y[2] - tr.y[1]) * (sx - tr.x[1]);
                double w1 = (tr.x[0] - tr.x[2]) * (sy - tr.y[2]) - (tr.y[0] - tr.y[2]) * (sx - tr.x[2]);
                double w2 = (tr.x[1] - tr.x[0]) * (sy - tr.y[0]) - (tr.y[1] - tr.y[0]) * (sx - tr.x[0]);
                bool inside = (w0 >= 0 && w1 >= 0 && w2 >= 0) || (w0 <= 0 && w1 <= 0 && w2 <= 0);
                if (!inside) continue;
                double wsum = w0 + w1 + w2;
                if (wsum == 0.0) continue;
                double depth = (w0 * tr.z[0] + w1 * tr.z[1] + w2 * tr.z[2]) / wsum;
                size_t idx = size_t(py) * width + px;
                if (depth < zbuf[idx]) {
                    zbuf[idx] = depth;
                    img.set(px, py, tr.r, tr.g, tr.b);
                    if (tri_index) (*tri_index)[idx] = int32_t(t);
                }
            }
        }
    }
    return img;
}

RenderedView render(const geom::TriMesh& mesh, const ViewSpec& view, const std::string& object_id) {
    ViewSpec v = view.normalized();
    v.validate();
    CameraPose pose = camera_from_view(v);
    RenderedView rv;
    rv.image = rasterize(project_mesh(mesh, pose), v.width, v.height);
    rv.image.image_id = object_id.empty() ? v.label : object_id + "_" + v.label;
    rv.view = v;
    rv.object_id = object_id;
    return rv;
}

std::vector<RenderedView> render_all(const geom::TriMesh& mesh, const std::vector<ViewSpec>& views,
                                     const std::string& object_id) {
    std::vector<RenderedView> out;
    out.reserve(views.size());
    for (const auto& v : views) {
        try {
            out.push_back(render(mesh, v, object_id));
        } catch (const std::exception& e) {
            throw StageError("render", "view '" + v.label + "': " + e.what());
        }
    }
    return out;
}

std::string camera_config_text(const std::vector<ViewSpec>& views) {
    std::string out;
    char buf[512];
    for (const auto& view : views) {
        ViewSpec v = view.normalized();
        v.validate();
        CameraPose pose = camera_from_view(v);
        std::snprintf(buf, sizeof buf, "%s %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %d %d\n",
                      v.label.c_str(), pose.position.x(), pose.position.y(), pose.position.z(),
                      pose.target.x(), pose.target.y(), pose.target.z(), pose.up.x(), pose.up.y(),
                      pose.up.z(), v.fov_deg, v.width, v.height);
        out += buf;
    }
    return out;
}

void export_camera_config(const std::vector<ViewSpec>& views, const std::filesystem::path& path) {
    write_file_atomic(path, camera_config_text(views));
}

std::string view_set_hash(const std::vector<ViewSpec>& views) {
    return sha256_hex(camera_config_text(views));
}

}  // namespace brain3d::render

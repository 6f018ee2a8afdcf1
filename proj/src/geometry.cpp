#include "brain3d/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace brain3d::geom {

void TriMesh::validate() const {
    if (triangles.empty()) throw ValidationError("mesh has no triangles");
    for (const auto& v : vertices)
        if (!v.allFinite()) throw ValidationError("mesh has non-finite vertex coordinates");
    int n = int(vertices.size());
    for (size_t t = 0; t < triangles.size(); ++t) {
        const auto& tri = triangles[t];
        for (int i : tri)
            if (i < 0 || i >= n)
                throw ValidationError("triangle " + std::to_string(t) + " references vertex " +
                                      std::to_string(i) + " of " + std::to_string(n));
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
            throw ValidationError("triangle " + std::to_string(t) + " repeats a vertex index");
    }
    if (!vertex_colors.empty() && vertex_colors.size() != vertices.size())
        throw ValidationError("vertex color count != vertex count");
}

void TriMesh::bounds(Eigen::Vector3d& lo, Eigen::Vector3d& hi) const {
    if (vertices.empty()) throw ValidationError("mesh has no vertices");
    lo = hi = vertices[0];
    for (const auto& v : vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
}

Eigen::Vector3d TriMesh::centroid() const {
    if (vertices.empty()) throw ValidationError("mesh has no vertices");
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const auto& v : vertices) c += v;
    return c / double(vertices.size());
}

TriMesh normalize_to_unit_sphere(const TriMesh& mesh) {
    mesh.validate();
    Eigen::Vector3d c = mesh.centroid();
    double r = 0.0;
    for (const auto& v : mesh.vertices) r = std::max(r, (v - c).norm());
    TriMesh out = mesh;
    if (r < 1e-12) {
        for (auto& v : out.vertices) v -= c;
        return out;
    }
    for (auto& v : out.vertices) v = (v - c) / r;
    return out;
}

TriMesh parse_obj(const std::string& text, const std::string& origin, ObjReadStats* stats) {
    TriMesh mesh;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    ObjReadStats local;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = line;
        while (!t.empty() && (t.back() == '\r' || t.back() == ' ')) t.pop_back();
        if (t.empty() || t[0] == '#') continue;
        std::istringstream ls(t);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            double x, y, z;
            if (!(ls >> x >> y >> z)) throw ParseError("malformed vertex record", origin, lineno);
            mesh.vertices.emplace_back(x, y, z);
            double r, g, b;
            if (ls >> r >> g >> b) {
                mesh.vertex_colors.push_back({clamp_channel(r * 255.0), clamp_channel(g * 255.0),
                                              clamp_channel(b * 255.0)});
            } else if (!mesh.vertex_colors.empty()) {
                throw ParseError("mixed colored and uncolored vertices", origin, lineno);
            }
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ls >> tok) {
                // "i", "i/j", "i/j/k", "i//k"
                size_t slash = tok.find('/');
                std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
                int i;
                try {
                    i = std::stoi(head);
                } catch (const std::exception&) {
                    throw ParseError("malformed face index '" + tok + "'", origin, lineno);
                }
                if (i < 0) i = int(mesh.vertices.size()) + i + 1;  // negative = relative
                if (i < 1) throw ParseError("face index out of range", origin, lineno);
                idx.push_back(i - 1);
            }
            if (idx.size() < 3) throw ParseError("face with fewer than 3 vertices", origin, lineno);
            for (size_t k = 1; k + 1 < idx.size(); ++k)
                mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
        } else {
            ++local.ignored_records;
        }
    }
    if (mesh.triangles.empty()) throw ParseError("OBJ contains no faces", origin, lineno);
    if (!mesh.vertex_colors.empty() && mesh.vertex_colors.size() != mesh.vertices.size())
        throw ParseError("vertex color count != vertex count", origin, lineno);
    mesh.validate();
    if (stats) *stats = local;
    return mesh;
}

TriMesh load_obj(const std::filesystem::path& path, ObjReadStats* stats) {
    return parse_obj(read_text_file(path), path.string(), stats);
}

std::string obj_text(const TriMesh& mesh) {
    mesh.validate();
    std::string out;
    char buf[160];
    bool colored = !mesh.vertex_colors.empty();
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        const auto& v = mesh.vertices[i];
        if (colored) {
            const auto& c = mesh.vertex_colors[i];
            std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g %.9g %.9g %.9g\n", v.x(), v.y(), v.z(),
                          c[0] / 255.0, c[1] / 255.0, c[2] / 255.0);
        } else {
            std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
        }
        out += buf;
    }
    for (const auto& t : mesh.triangles) {
        std::snprintf(buf, sizeof buf, "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
        out += buf;
    }
    return out;
}

void write_obj(const TriMesh& mesh, const std::filesystem::path& path) {
    write_file_atomic(path, obj_text(mesh));
}

void GenStageConfig::validate() const {
    if (t2i_steps < 1) throw ValidationError("t2i_steps must be >= 1");
    if (t2i_guidance < 0) throw ValidationError("t2i_guidance must be >= 0");
    if (texture_resolution < 1) throw ValidationError("texture_resolution must be >= 1");
}

std::string gen_config_hash(const GenStageConfig& cfg) {
    nlohmann::json j;
    j["t2i_steps"] = cfg.t2i_steps;
    j["t2i_guidance"] = cfg.t2i_guidance;
    j["texture_resolution"] = cfg.texture_resolution;
    j["seed"] = cfg.seed;
    return sha256_hex(j.dump());
}

GeneratedImage text_to_image(const reason::SemanticDescription& desc, const GenStageConfig& cfg,
                             providers::TextToImageProvider& provider) {
    cfg.validate();
    desc.validate();
    GeneratedImage out;
    out.image = provider.generate(desc.text, cfg);
    out.image.validate();
    if (out.image.width == 0 || out.image.height == 0)
        throw ValidationError("t2i provider returned an empty image");
    out.prov.stage = "t2i";
    out.prov.provider_id = provider.id();
    out.prov.config_hash = gen_config_hash(cfg);
    out.prov.seed = cfg.seed;
    out.prov.prompt_hash = sha256_hex(desc.text);
    out.prov.upstream_hash = out.prov.prompt_hash;
    out.prov.mode = "full";
    return out;
}

namespace {
GeneratedMesh to_mesh(const Image& image, const GenStageConfig& cfg,
                      providers::ImageToMeshProvider& provider, const std::string& mode) {
    cfg.validate();
    image.validate();
    std::string obj = provider.generate_obj(image, cfg);
    GeneratedMesh out;
    try {
        out.mesh = parse_obj(obj, provider.id());
    } catch (const ParseError& e) {
        throw ValidationError(std::string("provider returned invalid mesh: ") + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(std::string("provider returned invalid mesh: ") + e.what());
    }
    out.prov.stage = "to3d";
    out.prov.provider_id = provider.id();
    out.prov.config_hash = gen_config_hash(cfg);
    out.prov.seed = cfg.seed;
    out.prov.upstream_hash = sha256_hex(ppm_bytes(image));
    out.prov.mode = mode;
    return out;
}
}  // namespace

GeneratedMesh image_to_mesh(const Image& image, const GenStageConfig& cfg,
                            providers::ImageToMeshProvider& provider) {
    return to_mesh(image, cfg, provider, "full");
}

GeneratedMesh ablation_bypass(const Image& decoded, const GenStageConfig& cfg,
                              providers::ImageToMeshProvider& provider) {
    return to_mesh(decoded, cfg, provider, "direct");
}

}  // namespace brain3d::geom

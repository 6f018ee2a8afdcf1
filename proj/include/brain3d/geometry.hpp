#pragma once

#include "brain3d/mesh.hpp"
#include "brain3d/providers.hpp"
#include "brain3d/reasoning.hpp"

namespace brain3d::geom {

struct GeneratedImage {
    Image image;
    Provenance prov;
};

struct GeneratedMesh {
    TriMesh mesh;
    Provenance prov;
};

std::string gen_config_hash(const GenStageConfig& cfg);

// Refined object-centric image from a validated semantic description.
GeneratedImage text_to_image(const reason::SemanticDescription& desc, const GenStageConfig& cfg,
                             providers::TextToImageProvider& provider);

// Provider mesh, parsed and validated (providers are untrusted). The mesh
// is returned in provider units; normalize_to_unit_sphere happens on ingest
// to the renderer.
GeneratedMesh image_to_mesh(const Image& image, const GenStageConfig& cfg,
                            providers::ImageToMeshProvider& provider);

// Same contract as image_to_mesh on the decoded image, provenance mode
// tagged "direct".
GeneratedMesh ablation_bypass(const Image& decoded, const GenStageConfig& cfg,
                              providers::ImageToMeshProvider& provider);

}  // namespace brain3d::geom

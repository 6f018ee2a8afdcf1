#pragma once

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "brain3d/dataset.hpp"
#include "brain3d/image.hpp"
#include "brain3d/mesh.hpp"

namespace brain3d::providers {

// All providers count their calls through the non-virtual entry points so
// tests (and the warm-cache contract) can assert zero invocations.
class ProviderBase {
public:
    virtual ~ProviderBase() = default;
    virtual std::string id() const = 0;
    long call_count() const { return calls_.load(); }

protected:
    void record_call() const { calls_.fetch_add(1); }

private:
    mutable std::atomic<long> calls_{0};
};

struct ReasonRequest {
    std::string system;
    std::string user;
    const Image* image = nullptr;
};

// Text-generation endpoint taking (system, user, image) and returning text.
class ReasonerProvider : public ProviderBase {
public:
    std::string generate(const ReasonRequest& req) {
        record_call();
        return do_generate(req);
    }

protected:
    virtual std::string do_generate(const ReasonRequest& req) = 0;
};

class TextToImageProvider : public ProviderBase {
public:
    Image generate(const std::string& prompt, const geom::GenStageConfig& cfg) {
        record_call();
        return do_generate(prompt, cfg);
    }

protected:
    virtual Image do_generate(const std::string& prompt, const geom::GenStageConfig& cfg) = 0;
};

// Image bytes in, OBJ bytes out.
class ImageToMeshProvider : public ProviderBase {
public:
    std::string generate_obj(const Image& image, const geom::GenStageConfig& cfg) {
        record_call();
        return do_generate_obj(image, cfg);
    }

protected:
    virtual std::string do_generate_obj(const Image& image, const geom::GenStageConfig& cfg) = 0;
};

// Stand-in for the EEG-to-image backbones (GWIT, BrainVis, DreamDiffusion,
// EEG-CLIP): one interface, trial in, decoded image out.
class EegDecodeProvider : public ProviderBase {
public:
    Image decode(const data::EegTrial& trial) {
        record_call();
        return do_decode(trial);
    }

protected:
    virtual Image do_decode(const data::EegTrial& trial) = 0;
};

// ---------------------------------------------------------------------------
// Deterministic mocks.

// Fixed-response reasoner; optionally a scripted sequence of responses.
class MockReasoner : public ReasonerProvider {
public:
    explicit MockReasoner(std::string response, std::string id = "mock-reasoner");
    explicit MockReasoner(std::vector<std::string> script, std::string id = "mock-reasoner");
    std::string id() const override { return id_; }

protected:
    std::string do_generate(const ReasonRequest& req) override;

private:
    std::vector<std::string> script_;
    std::string id_;
    std::atomic<size_t> cursor_{0};
};

// Embeds the image id in a fixed sentence; provenance plumbing checks.
class EchoReasoner : public ReasonerProvider {
public:
    std::string id() const override { return "echo-reasoner"; }

protected:
    std::string do_generate(const ReasonRequest& req) override;
};

// Long single-paragraph description keyed on the image's dominant color and
// content hash; always passes the output validators.
class ProceduralReasoner : public ReasonerProvider {
public:
    explicit ProceduralReasoner(std::string id = "mock-reasoner");
    std::string id() const override { return id_; }

protected:
    std::string do_generate(const ReasonRequest& req) override;

private:
    std::string id_;
};

// Procedural image derived from (prompt hash, seed); steps/guidance are
// recorded on the image id for request inspection in tests.
class MockTextToImage : public TextToImageProvider {
public:
    explicit MockTextToImage(int image_size = 64, std::string id = "mock-t2i");
    std::string id() const override { return id_; }

protected:
    Image do_generate(const std::string& prompt, const geom::GenStageConfig& cfg) override;

private:
    int image_size_;
    std::string id_;
};

// Cube whose edge length follows image mean brightness: edge = 0.5 * 4^b,
// so brightness 0 / 0.5 / 1 map to 0.5 / 1.0 / 2.0. Vertex colors take the
// image mean color.
class MockImageToMesh : public ImageToMeshProvider {
public:
    explicit MockImageToMesh(std::string id = "mock-to3d");
    std::string id() const override { return id_; }

protected:
    std::string do_generate_obj(const Image& image, const geom::GenStageConfig& cfg) override;

private:
    std::string id_;
};

// Returns scripted OBJ bytes; for invalid-mesh error paths.
class ScriptedImageToMesh : public ImageToMeshProvider {
public:
    explicit ScriptedImageToMesh(std::string obj, std::string id = "scripted-to3d");
    std::string id() const override { return id_; }

protected:
    std::string do_generate_obj(const Image&, const geom::GenStageConfig&) override { return obj_; }

private:
    std::string obj_;
    std::string id_;
};

// Ideal decoder: returns the class glyph image for the trial's label,
// mimicking a backbone that always decodes the right category.
class MockEegDecode : public EegDecodeProvider {
public:
    MockEegDecode(std::vector<Image> class_images, std::string id = "mock-decode");
    std::string id() const override { return id_; }

protected:
    Image do_decode(const data::EegTrial& trial) override;

private:
    std::vector<Image> class_images_;
    std::string id_;
};

// ---------------------------------------------------------------------------
// HTTP adapters. Wire contract: POST JSON, image/mesh payloads base64.
//   reason : {system, user, image_b64, mime} -> {text}
//   t2i    : {prompt, steps, guidance, texture_resolution, seed} -> {image_b64}
//   to3d   : {image_b64, mime, texture_resolution, seed} -> {obj_b64}
//   decode : {eeg_b64} -> {image_b64}

class HttpReasonerProvider : public ReasonerProvider {
public:
    HttpReasonerProvider(std::string endpoint, std::string id = "http-reasoner");
    std::string id() const override { return id_; }

protected:
    std::string do_generate(const ReasonRequest& req) override;

private:
    std::string endpoint_, id_;
};

class HttpTextToImageProvider : public TextToImageProvider {
public:
    HttpTextToImageProvider(std::string endpoint, std::string id = "http-t2i");
    std::string id() const override { return id_; }

protected:
    Image do_generate(const std::string& prompt, const geom::GenStageConfig& cfg) override;

private:
    std::string endpoint_, id_;
};

class HttpImageToMeshProvider : public ImageToMeshProvider {
public:
    HttpImageToMeshProvider(std::string endpoint, std::string id = "http-to3d");
    std::string id() const override { return id_; }

protected:
    std::string do_generate_obj(const Image& image, const geom::GenStageConfig& cfg) override;

private:
    std::string endpoint_, id_;
};

class HttpEegDecodeProvider : public EegDecodeProvider {
public:
    HttpEegDecodeProvider(std::string endpoint, std::string id = "http-decode");
    std::string id() const override { return id_; }

protected:
    Image do_decode(const data::EegTrial& trial) override;

private:
    std::string endpoint_, id_;
};

// Bounds concurrent calls per provider.
class InflightLimiter {
public:
    explicit InflightLimiter(int limit);
    void acquire();
    void release();

    class Guard {
    public:
        explicit Guard(InflightLimiter& l) : l_(l) { l_.acquire(); }
        ~Guard() { l_.release(); }
        Guard(const Guard&) = delete;
        Guard& operator=(const Guard&) = delete;

    private:
        InflightLimiter& l_;
    };

private:
    std::mutex mu_;
    std::condition_variable cv_;
    int available_;
};

}  // namespace brain3d::providers

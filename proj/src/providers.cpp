#include "brain3d/providers.hpp"

#include <cmath>

#include "httplib.h"
#include "json.hpp"

namespace brain3d::providers {

using nlohmann::json;

MockReasoner::MockReasoner(std::string response, std::string id)
    : script_{std::move(response)}, id_(std::move(id)) {}

MockReasoner::MockReasoner(std::vector<std::string> script, std::string id)
    : script_(std::move(script)), id_(std::move(id)) {
    if (script_.empty()) throw ValidationError("MockReasoner script must be non-empty");
}

std::string MockReasoner::do_generate(const ReasonRequest&) {
    size_t i = cursor_.fetch_add(1);
    return script_[std::min(i, script_.size() - 1)];
}

std::string EchoReasoner::do_generate(const ReasonRequest& req) {
    std::string id = req.image ? req.image->image_id : "unknown";
    return "A studio photograph of object " + id + " rendered as an isolated 3D model on a white background.";
}

namespace {
const char* color_word(const std::array<double, 3>& rgb) {
    double r = rgb[0], g = rgb[1], b = rgb[2];
    double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    if (mx - mn < 0.08) return mx > 0.66 ? "white" : (mx < 0.33 ? "black" : "gray");
    if (r >= g && r >= b) return g > b ? "orange" : "red";
    if (g >= r && g >= b) return b > r ? "teal" : "green";
    return r > g ? "purple" : "blue";
}
}  // namespace

ProceduralReasoner::ProceduralReasoner(std::string id) : id_(std::move(id)) {}

std::string ProceduralReasoner::do_generate(const ReasonRequest& req) {
    if (!req.image) throw TransportError("mock reasoner received no image");
    auto rgb = mean_rgb(*req.image);
    std::string color = color_word(rgb);
    std::string token = sha256_hex(ppm_bytes(*req.image)).substr(0, 8);
    return std::string("A highly detailed 3D model of a single ") + color +
           " object with a smooth matte surface, compact solid body, clearly defined silhouette and"
           " crisp geometric edges, studio lighting, centered composition, signature " +
           token + ", isolated on a pure white background.";
}

MockTextToImage::MockTextToImage(int image_size, std::string id)
    : image_size_(image_size), id_(std::move(id)) {}

Image MockTextToImage::do_generate(const std::string& prompt, const geom::GenStageConfig& cfg) {
    cfg.validate();
    if (prompt.empty()) throw TransportError("t2i provider received empty prompt");
    uint64_t h = sha256_seed(prompt + ":" + std::to_string(cfg.seed));
    Rng rng(h);
    uint8_t base[3] = {uint8_t(64 + rng.uniform_int(128)), uint8_t(64 + rng.uniform_int(128)),
                       uint8_t(64 + rng.uniform_int(128))};
    Image img(image_size_, image_size_);
    double cx = (image_size_ - 1) / 2.0;
    double r = image_size_ * (0.25 + 0.15 * rng.uniform());
    for (int y = 0; y < image_size_; ++y)
        for (int x = 0; x < image_size_; ++x) {
            double dx = x - cx, dy = y - cx;
            if (dx * dx + dy * dy <= r * r) img.set(x, y, base[0], base[1], base[2]);
        }
    img.image_id = "t2i_" + sha256_hex(prompt).substr(0, 12);
    return img;
}

MockImageToMesh::MockImageToMesh(std::string id) : id_(std::move(id)) {}

namespace {
std::string cube_obj(double edge, std::array<uint8_t, 3> color) {
    double h = edge / 2.0;
    char buf[128];
    std::string out;
    const double cs[3] = {color[0] / 255.0, color[1] / 255.0, color[2] / 255.0};
    const int sx[8] = {-1, 1, 1, -1, -1, 1, 1, -1};
    const int sy[8] = {-1, -1, -1, -1, 1, 1, 1, 1};
    const int sz[8] = {-1, -1, 1, 1, -1, -1, 1, 1};
    for (int i = 0; i < 8; ++i) {
        std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g %.9g %.9g %.9g\n", sx[i] * h, sy[i] * h, sz[i] * h,
                      cs[0], cs[1], cs[2]);
        out += buf;
    }
    // quad faces, fan-triangulated by the loader
    out += "f 1 2 3 4\n";   // bottom
    out += "f 5 8 7 6\n";   // top
    out += "f 1 5 6 2\n";   // -z
    out += "f 3 7 8 4\n";   // +z
    out += "f 2 6 7 3\n";   // +x
    out += "f 4 8 5 1\n";   // -x
    return out;
}
}  // namespace

std::string MockImageToMesh::do_generate_obj(const Image& image, const geom::GenStageConfig& cfg) {
    cfg.validate();
    image.validate();
    double b = mean_brightness(image);
    double edge = 0.5 * std::pow(4.0, b);
    auto rgb = mean_rgb(image);
    return cube_obj(edge, {clamp_channel(rgb[0] * 255.0), clamp_channel(rgb[1] * 255.0),
                           clamp_channel(rgb[2] * 255.0)});
}

ScriptedImageToMesh::ScriptedImageToMesh(std::string obj, std::string id)
    : obj_(std::move(obj)), id_(std::move(id)) {}

MockEegDecode::MockEegDecode(std::vector<Image> class_images, std::string id)
    : class_images_(std::move(class_images)), id_(std::move(id)) {
    if (class_images_.empty()) throw ValidationError("MockEegDecode needs class images");
}

Image MockEegDecode::do_decode(const data::EegTrial& trial) {
    trial.validate();
    if (trial.class_label < 0 || trial.class_label >= int(class_images_.size()))
        throw TransportError("mock decoder has no image for class " + std::to_string(trial.class_label));
    Image img = class_images_[size_t(trial.class_label)];
    img.image_id = "decoded_" + trial.trial_id;
    return img;
}

// ---------------------------------------------------------------------------
// HTTP adapters.

namespace {
// endpoint "host:port/path" or "http://host:port/path" -> (base, path)
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    std::string e = endpoint;
    if (e.rfind("http://", 0) == 0) e = e.substr(7);
    auto slash = e.find('/');
    if (slash == std::string::npos) return {e, "/"};
    return {e.substr(0, slash), e.substr(slash)};
}

json post_json(const std::string& endpoint, const json& body, const char* what) {
    auto [base, path] = split_endpoint(endpoint);
    httplib::Client client(("http://" + base).c_str());
    client.set_connection_timeout(10);
    client.set_read_timeout(120);
    auto res = client.Post(path.c_str(), body.dump(), "application/json");
    if (!res)
        throw TransportError(std::string(what) + ": no response from " + endpoint);
    if (res->status != 200)
        throw TransportError(std::string(what) + ": HTTP " + std::to_string(res->status) + " from " +
                             endpoint);
    try {
        return json::parse(res->body);
    } catch (const json::exception& ex) {
        throw TransportError(std::string(what) + ": malformed response: " + ex.what());
    }
}
}  // namespace

HttpReasonerProvider::HttpReasonerProvider(std::string endpoint, std::string id)
    : endpoint_(std::move(endpoint)), id_(std::move(id)) {}

std::string HttpReasonerProvider::do_generate(const ReasonRequest& req) {
    if (!req.image) throw ValidationError("reason request has no image");
    json body;
    body["system"] = req.system;
    body["user"] = req.user;
    body["image_b64"] = base64_encode(ppm_bytes(*req.image));
    body["mime"] = "image/x-portable-pixmap";
    json res = post_json(endpoint_, body, "reason");
    if (!res.contains("text")) throw TransportError("reason: response missing 'text'");
    return res["text"].get<std::string>();
}

HttpTextToImageProvider::HttpTextToImageProvider(std::string endpoint, std::string id)
    : endpoint_(std::move(endpoint)), id_(std::move(id)) {}

Image HttpTextToImageProvider::do_generate(const std::string& prompt, const geom::GenStageConfig& cfg) {
    json body;
    body["prompt"] = prompt;
    body["steps"] = cfg.t2i_steps;
    body["guidance"] = cfg.t2i_guidance;
    body["texture_resolution"] = cfg.texture_resolution;
    body["seed"] = cfg.seed;
    json res = post_json(endpoint_, body, "t2i");
    if (!res.contains("image_b64")) throw TransportError("t2i: response missing 'image_b64'");
    auto bytes = base64_decode(res["image_b64"].get<std::string>());
    return parse_ppm(bytes, endpoint_);
}

HttpImageToMeshProvider::HttpImageToMeshProvider(std::string endpoint, std::string id)
    : endpoint_(std::move(endpoint)), id_(std::move(id)) {}

std::string HttpImageToMeshProvider::do_generate_obj(const Image& image, const geom::GenStageConfig& cfg) {
    json body;
    body["image_b64"] = base64_encode(ppm_bytes(image));
    body["mime"] = "image/x-portable-pixmap";
    body["texture_resolution"] = cfg.texture_resolution;
    body["seed"] = cfg.seed;
    json res = post_json(endpoint_, body, "to3d");
    if (!res.contains("obj_b64")) throw TransportError("to3d: response missing 'obj_b64'");
    auto bytes = base64_decode(res["obj_b64"].get<std::string>());
    return std::string(bytes.begin(), bytes.end());
}

HttpEegDecodeProvider::HttpEegDecodeProvider(std::string endpoint, std::string id)
    : endpoint_(std::move(endpoint)), id_(std::move(id)) {}

Image HttpEegDecodeProvider::do_decode(const data::EegTrial& trial) {
    json body;
    body["eeg_b64"] = base64_encode(data::eeg_bytes(trial));
    json res = post_json(endpoint_, body, "decode");
    if (!res.contains("image_b64")) throw TransportError("decode: response missing 'image_b64'");
    auto bytes = base64_decode(res["image_b64"].get<std::string>());
    return parse_ppm(bytes, endpoint_);
}

InflightLimiter::InflightLimiter(int limit) : available_(limit) {
    if (limit < 1) throw ValidationError("in-flight limit must be >= 1");
}

void InflightLimiter::acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return available_ > 0; });
    --available_;
}

void InflightLimiter::release() {
    std::lock_guard lock(mu_);
    ++available_;
    cv_.notify_one();
}

}  // namespace brain3d::providers

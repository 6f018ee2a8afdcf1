#include "brain3d/reasoning.hpp"

#include <algorithm>
#include <chrono>
#include <thread>

namespace brain3d::reason {

namespace {
const char* kSystemV1 = "You are an expert in generating prompts for text-to-2D diffusion models.";
const char* kUserV1 =
    "Create a prompt to be fed to the text-to-image model. The prompt should describe only the single "
    "main object in the image in high details. Focus on every aspect of the main object, such as the "
    "shape, color, material, and style. The prompt should be long. The prompt should describe the main "
    "object as a 3D model. Do not describe anything else other than the main object. The object needs "
    "to be the only element in the prompt. Force a white background. Do not use bullet points. Return "
    "only the prompt text. No introduction, explanations or formatting.";
}  // namespace

const char* const kDefaultTemplateHash =
    "7ed72cb7752772501d2e78206b81418847f4e50c2b211a314e56a57871e8babb";

void PromptTemplate::validate() const {
    if (system_text.empty() || user_text.empty())
        throw ValidationError("prompt template sections must be non-empty");
}

PromptTemplate PromptTemplate::default_v1() {
    return PromptTemplate{kSystemV1, kUserV1, "v1"};
}

PromptTemplate load_template(const std::filesystem::path& path, const std::string& version) {
    std::string text = read_text_file(path);
    auto pos = text.find("\n---\n");
    if (pos == std::string::npos) throw ParseError("missing '---' section delimiter", path.string(), 1);
    PromptTemplate tpl;
    tpl.system_text = text.substr(0, pos);
    tpl.user_text = text.substr(pos + 5);
    if (!tpl.user_text.empty() && tpl.user_text.back() == '\n') tpl.user_text.pop_back();
    tpl.version = version;
    tpl.validate();
    return tpl;
}

void save_template(const PromptTemplate& tpl, const std::filesystem::path& path) {
    tpl.validate();
    write_file_atomic(path, tpl.system_text + "\n---\n" + tpl.user_text + "\n");
}

std::string template_hash(const PromptTemplate& tpl) {
    return sha256_hex(tpl.system_text + "\n---\n" + tpl.user_text + "\n");
}

namespace {
bool starts_with_ci(const std::string& text, const std::string& prefix) {
    if (text.size() < prefix.size()) return false;
    for (size_t i = 0; i < prefix.size(); ++i)
        if (std::tolower(text[i]) != std::tolower(prefix[i])) return false;
    return true;
}

std::string trimmed(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}
}  // namespace

std::optional<std::string> describe_validation_failure(const std::string& raw) {
    std::string text = trimmed(raw);
    if (text.empty()) return "empty output";
    if (text.size() > 4096) return "output exceeds 4096 characters";
    if (text.find('\n') != std::string::npos) return "output is not a single paragraph";
    if (text.find("```") != std::string::npos) return "output contains a markdown fence";
    for (const char* bullet : {"- ", "* ", "•"}) {
        if (text.rfind(bullet, 0) == 0) return std::string("output starts with bullet marker '") + bullet + "'";
    }
    for (const char* preamble : {"here is", "here's", "sure"}) {
        if (starts_with_ci(text, preamble))
            return std::string("output starts with conversational preamble '") + preamble + "'";
    }
    return std::nullopt;
}

void SemanticDescription::validate() const {
    if (auto why = describe_validation_failure(text))
        throw ValidationError("invalid semantic description: " + *why);
}

void RetryPolicy::sleep(double seconds) const {
    if (sleeper) {
        sleeper(seconds);
    } else {
        std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    }
}

SemanticDescription reason(const Image& image, const PromptTemplate& tpl,
                           providers::ReasonerProvider& provider, const RetryPolicy& policy) {
    image.validate();
    tpl.validate();
    providers::ReasonRequest req{tpl.system_text, tpl.user_text, &image};

    std::string last_raw;
    int validation_attempts = 0;
    size_t transport_failures = 0;
    while (true) {
        std::string raw;
        try {
            raw = provider.generate(req);
        } catch (const TransportError& e) {
            if (transport_failures >= policy.transport_backoff_s.size()) throw;
            policy.sleep(policy.transport_backoff_s[transport_failures]);
            ++transport_failures;
            continue;
        }
        ++validation_attempts;
        last_raw = raw;
        auto why = describe_validation_failure(raw);
        if (!why) {
            SemanticDescription desc;
            desc.text = trimmed(raw);
            desc.source_image_id = image.image_id;
            desc.provider_id = provider.id();
            desc.attempt = validation_attempts;
            return desc;
        }
        if (validation_attempts >= policy.max_retries)
            throw ReasonValidationError("semantic description rejected after " +
                                            std::to_string(validation_attempts) + " attempts: " + *why,
                                        last_raw);
    }
}

SemanticDescription compose_pipeline_description(const data::EegTrial& trial,
                                                 providers::EegDecodeProvider& decoder,
                                                 const PromptTemplate& tpl,
                                                 providers::ReasonerProvider& reasoner, ComposeCache* cache,
                                                 const RetryPolicy& policy) {
    if (cache) {
        auto hit = cache->described.find(trial.trial_id);
        if (hit != cache->described.end()) return hit->second;
    }
    Image decoded;
    bool have_decoded = false;
    if (cache) {
        auto hit = cache->decoded.find(trial.trial_id);
        if (hit != cache->decoded.end()) {
            decoded = hit->second;
            have_decoded = true;
        }
    }
    if (!have_decoded) {
        try {
            decoded = decoder.decode(trial);
        } catch (const std::exception& e) {
            throw StageError("decode", e.what());
        }
        if (cache) cache->decoded[trial.trial_id] = decoded;
    }
    SemanticDescription desc;
    try {
        desc = reason(decoded, tpl, reasoner, policy);
    } catch (const std::exception& e) {
        throw StageError("reason", e.what());
    }
    if (cache) cache->described[trial.trial_id] = desc;
    return desc;
}

}  // namespace brain3d::reason

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>

#include "brain3d/providers.hpp"

namespace brain3d::reason {

// System/user instruction pair for the describing MLLM. The default
// instance is the pinned v1 asset.
struct PromptTemplate {
    std::string system_text;
    std::string user_text;
    std::string version;

    void validate() const;
    static PromptTemplate default_v1();
};

// Asset file: system text, a line containing only "---", user text.
PromptTemplate load_template(const std::filesystem::path& path, const std::string& version = "v1");
void save_template(const PromptTemplate& tpl, const std::filesystem::path& path);
std::string template_hash(const PromptTemplate& tpl);

// SHA-256 of the default v1 asset; drift fails the checksum test.
extern const char* const kDefaultTemplateHash;

struct SemanticDescription {
    std::string text;
    std::string source_image_id;
    std::string provider_id;
    int attempt = 0;

    void validate() const;
};

// Returns std::nullopt when the text is acceptable, else the reason it is
// not: non-empty, single paragraph, no bullets, no markdown fences, no
// conversational preamble, at most 4096 characters.
std::optional<std::string> describe_validation_failure(const std::string& text);

struct RetryPolicy {
    int max_retries = 3;                                // attempts for validation failures
    std::vector<double> transport_backoff_s = {1, 2, 4};  // retries after transport failures
    std::function<void(double)> sleeper;                // injectable; default real sleep

    void sleep(double seconds) const;
};

class ReasonValidationError : public Error {
public:
    ReasonValidationError(const std::string& msg, std::string last_raw)
        : Error(msg), last_raw_(std::move(last_raw)) {}
    const std::string& last_raw() const { return last_raw_; }

private:
    std::string last_raw_;
};

// MLLM call with validation and retry; transport failures back off,
// validation failures retry immediately up to max_retries attempts.
SemanticDescription reason(const Image& image, const PromptTemplate& tpl,
                           providers::ReasonerProvider& provider, const RetryPolicy& policy = {});

// Per-run memo for compose_pipeline_description: a warm rerun with the same
// trial performs zero provider calls.
struct ComposeCache {
    std::map<std::string, Image> decoded;
    std::map<std::string, SemanticDescription> described;
};

// The full EEG -> description composition: reason(decode(trial)).
SemanticDescription compose_pipeline_description(const data::EegTrial& trial,
                                                 providers::EegDecodeProvider& decoder,
                                                 const PromptTemplate& tpl,
                                                 providers::ReasonerProvider& reasoner,
                                                 ComposeCache* cache = nullptr,
                                                 const RetryPolicy& policy = {});

}  // namespace brain3d::reason

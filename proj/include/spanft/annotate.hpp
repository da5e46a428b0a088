#pragma once

#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spanft/corpus.hpp"
#include "spanft/error.hpp"

// Span-level hallucination annotation through a chat-completion endpoint.
namespace spanft::annotate {

enum class Role { system, user, assistant };

std::string_view to_string(Role role) noexcept;

struct ChatMessage {
    Role role = Role::user;
    std::string content;

    friend bool operator==(const ChatMessage &, const ChatMessage &) = default;
};

struct DemoExample {
    std::string_view source;
    std::string_view summary;
    std::string_view response;
};

std::string_view system_prompt() noexcept;
// The closing "Respond with the corresponding output fields ..." paragraph.
std::string_view response_instruction() noexcept;
std::span<const DemoExample> demo_examples() noexcept;

std::string render_user_message(std::string_view source, std::string_view summary);
std::string render_demo_message(const DemoExample & demo);

struct RenderedPrompt {
    std::string system_prompt;
    std::vector<std::pair<std::string, std::string>> demos;  // (user, assistant) pairs
    std::string user_message;

    // Demo turns followed by the final user message; the system prompt is separate.
    std::vector<ChatMessage> messages() const;
};

RenderedPrompt render_annotation_prompt(std::string_view source, std::string_view summary);

// Formats an annotator response in the same field layout as the demos.
std::string render_response(std::string_view reasoning, std::span<const std::string> spans);

struct AnnotationRequest {
    std::string source;
    std::string summary;
    std::string model_tag = "gpt-4o";
    double temperature = 0.0;
    int max_retries = 2;
};

struct CompletionOptions {
    std::string model_tag;
    double temperature = 0.0;
};

class AnnotatorEndpoint {
public:
    virtual ~AnnotatorEndpoint() = default;

    // Throws Error(TransportError) for network or server faults.
    virtual std::string complete(std::string_view system_prompt, std::span<const ChatMessage> messages,
                                 const CompletionOptions & options) = 0;
};

struct Annotated {
    corpus::SpanAnnotation annotation;
    std::string raw_response;
    int attempts = 0;
};

// Calls the endpoint and parses the reply. A reply that fails to parse or
// validate is answered with a repair turn and retried; transport faults are
// retried with the same conversation. Throws AnnotationFailed (or
// TransportError when the last failure was a transport fault) once
// max_retries + 1 attempts are used.
Annotated annotate(const AnnotationRequest & request, AnnotatorEndpoint & endpoint);

struct BatchOutcome {
    std::optional<Annotated> result;
    std::optional<ErrorKind> error;
    std::string error_message;
};

// Annotates requests on `workers` threads; outcomes are returned in input order.
std::vector<BatchOutcome> annotate_batch(std::span<const AnnotationRequest> requests, AnnotatorEndpoint & endpoint,
                                         std::size_t workers);

// Deterministic stand-in for a live annotator: answers with the ground-truth
// spans of each known (source, summary) pair. Thread-safe.
class MockAnnotator final : public AnnotatorEndpoint {
public:
    using GroundTruth = std::map<std::pair<std::string, std::string>, std::vector<std::string>>;

    explicit MockAnnotator(GroundTruth ground_truth);

    std::string complete(std::string_view system_prompt, std::span<const ChatMessage> messages,
                         const CompletionOptions & options) override;

    std::size_t calls() const;

private:
    GroundTruth truth_;
    mutable std::mutex mutex_;
    std::size_t calls_ = 0;
};

std::unique_ptr<AnnotatorEndpoint> mock_annotator(MockAnnotator::GroundTruth ground_truth);

// Recovers (source, summary) from a rendered final user message.
std::optional<std::pair<std::string, std::string>> extract_pair(std::string_view user_message);

// Token bucket limiter; acquire() blocks until a token is available.
class RateLimiter {
public:
    RateLimiter(double requests_per_second, double burst);

    void acquire();

private:
    using Clock = std::chrono::steady_clock;

    double rate_;
    double burst_;
    double tokens_;
    Clock::time_point last_;
    std::mutex mutex_;
};

// Provider-specific request/response shapes.
class ChatAdapter {
public:
    virtual ~ChatAdapter() = default;

    virtual std::string request_body(std::string_view system_prompt, std::span<const ChatMessage> messages,
                                     const CompletionOptions & options) const = 0;
    virtual std::string parse_response(std::string_view body) const = 0;
};

// {"model", "temperature", "messages": [{"role", "content"}...]} -> choices[0].message.content
class OpenAIChatAdapter final : public ChatAdapter {
public:
    std::string request_body(std::string_view system_prompt, std::span<const ChatMessage> messages,
                             const CompletionOptions & options) const override;
    std::string parse_response(std::string_view body) const override;
};

struct EndpointConfig {
    std::string base_url = "https://api.openai.com";
    std::string path = "/v1/chat/completions";
    std::string provider = "openai";
    std::string api_key_env = "SPANFT_API_KEY";
    double timeout_seconds = 60.0;
    double requests_per_second = 2.0;

    // Reads a JSON object with the field names above; missing fields keep defaults.
    static EndpointConfig load(const std::string & path);
};

class HttpChatEndpoint final : public AnnotatorEndpoint {
public:
    // The API key is read from the environment variable named in the config;
    // an unset variable sends no Authorization header.
    explicit HttpChatEndpoint(EndpointConfig config);

    std::string complete(std::string_view system_prompt, std::span<const ChatMessage> messages,
                         const CompletionOptions & options) override;

private:
    EndpointConfig config_;
    std::unique_ptr<ChatAdapter> adapter_;
    std::string api_key_;
    RateLimiter limiter_;
};

} // namespace spanft::annotate

#include "spanft/annotate.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace spanft::annotate {

using nlohmann::json;

std::string_view to_string(Role role) noexcept {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

std::vector<ChatMessage> RenderedPrompt::messages() const {
    std::vector<ChatMessage> out;
    for (const auto & [user, assistant] : demos) {
        out.push_back({Role::user, user});
        out.push_back({Role::assistant, assistant});
    }
    out.push_back({Role::user, user_message});
    return out;
}

RenderedPrompt render_annotation_prompt(std::string_view source, std::string_view summary) {
    RenderedPrompt prompt;
    prompt.system_prompt = std::string(system_prompt());
    for (const auto & demo : demo_examples()) {
        prompt.demos.emplace_back(render_demo_message(demo), std::string(demo.response));
    }
    prompt.user_message = render_user_message(source, summary);
    return prompt;
}

std::string render_response(std::string_view reasoning, std::span<const std::string> spans) {
    std::string list = "[";
    for (std::size_t i = 0; i < spans.size(); ++i) {
        if (i > 0) {
            list += ", ";
        }
        list += json(spans[i]).dump();
    }
    list += "]";
    std::string out;
    out += corpus::kReasoningMarker;
    out += "\n";
    out += reasoning;
    out += "\n\n";
    out += corpus::kSpansMarker;
    out += "\n";
    out += list;
    out += "\n\n";
    out += corpus::kCompletedMarker;
    return out;
}

namespace {

bool is_parse_failure(ErrorKind kind) {
    return kind == ErrorKind::MissingMarker || kind == ErrorKind::MalformedList || kind == ErrorKind::SpanNotFound ||
           kind == ErrorKind::OrderViolation;
}

std::string repair_message(const Error & error) {
    return "Your previous response could not be used (" + std::string(to_string(error.kind())) + ": " +
           error.what() + "). " + std::string(response_instruction());
}

} // namespace

Annotated annotate(const AnnotationRequest & request, AnnotatorEndpoint & endpoint) {
    if (request.max_retries < 0) {
        fail(ErrorKind::InvalidArgument, "max_retries must be >= 0");
    }
    const auto prompt = render_annotation_prompt(request.source, request.summary);
    auto conversation = prompt.messages();
    const CompletionOptions options{request.model_tag, request.temperature};

    std::optional<Error> last_error;
    const int attempts = request.max_retries + 1;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        std::string raw;
        try {
            raw = endpoint.complete(prompt.system_prompt, conversation, options);
        } catch (const Error & e) {
            if (e.kind() != ErrorKind::TransportError) {
                throw;
            }
            last_error = e;
            continue;
        }
        try {
            auto annotation = corpus::parse_annotation_response(raw, request.summary);
            return {std::move(annotation), std::move(raw), attempt};
        } catch (const Error & e) {
            if (!is_parse_failure(e.kind())) {
                throw;
            }
            last_error = e;
            conversation.push_back({Role::assistant, raw});
            conversation.push_back({Role::user, repair_message(e)});
        }
    }
    if (last_error && last_error->kind() == ErrorKind::TransportError) {
        fail(ErrorKind::TransportError,
             "transport failed after " + std::to_string(attempts) + " attempts: " + last_error->what());
    }
    fail(ErrorKind::AnnotationFailed, "no valid annotation after " + std::to_string(attempts) +
                                          " attempts; last error: " + (last_error ? last_error->what() : "none"));
}

std::vector<BatchOutcome> annotate_batch(std::span<const AnnotationRequest> requests, AnnotatorEndpoint & endpoint,
                                         std::size_t workers) {
    std::vector<BatchOutcome> outcomes(requests.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < requests.size(); i = next++) {
            try {
                outcomes[i].result = annotate(requests[i], endpoint);
            } catch (const Error & e) {
                outcomes[i].error = e.kind();
                outcomes[i].error_message = e.what();
            }
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, requests.size()));
    if (workers == 1) {
        work();
        return outcomes;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back(work);
    }
    for (auto & t : pool) {
        t.join();
    }
    return outcomes;
}

std::optional<std::pair<std::string, std::string>> extract_pair(std::string_view user_message) {
    constexpr std::string_view source_head = "[[ ## source ## ]]\n";
    constexpr std::string_view summary_head = "\n\n[[ ## summary ## ]]\n";
    const std::string tail = "\n\n" + std::string(response_instruction());
    if (!user_message.starts_with(source_head) || !user_message.ends_with(tail)) {
        return std::nullopt;
    }
    const auto body = user_message.substr(0, user_message.size() - tail.size());
    const auto split = body.rfind(summary_head);
    if (split == std::string_view::npos || split < source_head.size()) {
        return std::nullopt;
    }
    return std::make_pair(std::string(body.substr(source_head.size(), split - source_head.size())),
                          std::string(body.substr(split + summary_head.size())));
}

MockAnnotator::MockAnnotator(GroundTruth ground_truth) : truth_(std::move(ground_truth)) {}

std::string MockAnnotator::complete(std::string_view, std::span<const ChatMessage> messages,
                                    const CompletionOptions &) {
    {
        std::lock_guard lock(mutex_);
        ++calls_;
    }
    std::optional<std::pair<std::string, std::string>> pair;
    for (auto it = messages.rbegin(); it != messages.rend() && !pair; ++it) {
        if (it->role == Role::user) {
            pair = extract_pair(it->content);
        }
    }
    if (!pair) {
        fail(ErrorKind::UnknownPair, "conversation carries no source/summary user message");
    }
    const auto found = truth_.find(*pair);
    if (found == truth_.end()) {
        fail(ErrorKind::UnknownPair, "no ground truth for the requested (source, summary) pair");
    }
    const auto & spans = found->second;
    const std::string reasoning = spans.empty()
        ? "Every statement in the summary is supported by the source."
        : "The summary contains " + std::to_string(spans.size()) +
              " statement(s) that contradict or are absent from the source.";
    return render_response(reasoning, spans);
}

std::size_t MockAnnotator::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::unique_ptr<AnnotatorEndpoint> mock_annotator(MockAnnotator::GroundTruth ground_truth) {
    return std::make_unique<MockAnnotator>(std::move(ground_truth));
}

RateLimiter::RateLimiter(double requests_per_second, double burst)
    : rate_(requests_per_second), burst_(burst), tokens_(burst), last_(Clock::now()) {
    if (!(requests_per_second > 0.0) || !(burst >= 1.0)) {
        fail(ErrorKind::InvalidArgument, "rate limiter needs rate > 0 and burst >= 1");
    }
}

void RateLimiter::acquire() {
    std::unique_lock lock(mutex_);
    for (;;) {
        const auto now = Clock::now();
        tokens_ = std::min(burst_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
        last_ = now;
        if (tokens_ >= 1.0) {
            tokens_ -= 1.0;
            return;
        }
        const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
        lock.unlock();
        std::this_thread::sleep_for(wait);
        lock.lock();
    }
}

std::string OpenAIChatAdapter::request_body(std::string_view system_prompt, std::span<const ChatMessage> messages,
                                            const CompletionOptions & options) const {
    json body;
    body["model"] = options.model_tag;
    body["temperature"] = options.temperature;
    json list = json::array();
    list.push_back({{"role", "system"}, {"content", std::string(system_prompt)}});
    for (const auto & message : messages) {
        list.push_back({{"role", to_string(message.role)}, {"content", message.content}});
    }
    body["messages"] = std::move(list);
    return body.dump();
}

std::string OpenAIChatAdapter::parse_response(std::string_view body) const {
    const json parsed = json::parse(body.begin(), body.end(), nullptr, false);
    if (parsed.is_discarded()) {
        fail(ErrorKind::TransportError, "response body is not JSON");
    }
    try {
        return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception & e) {
        fail(ErrorKind::TransportError, std::string("unexpected response shape: ") + e.what());
    }
}

EndpointConfig EndpointConfig::load(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open endpoint config: " + path);
    }
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        fail(ErrorKind::SchemaError, "endpoint config is not a JSON object: " + path);
    }
    EndpointConfig config;
    try {
        config.base_url = j.value("base_url", config.base_url);
        config.path = j.value("path", config.path);
        config.provider = j.value("provider", config.provider);
        config.api_key_env = j.value("api_key_env", config.api_key_env);
        config.timeout_seconds = j.value("timeout_seconds", config.timeout_seconds);
        config.requests_per_second = j.value("requests_per_second", config.requests_per_second);
    } catch (const json::exception & e) {
        fail(ErrorKind::SchemaError, std::string("endpoint config: ") + e.what());
    }
    return config;
}

namespace {

std::unique_ptr<ChatAdapter> make_adapter(const std::string & provider) {
    if (provider == "openai") {
        return std::make_unique<OpenAIChatAdapter>();
    }
    fail(ErrorKind::InvalidArgument, "unknown endpoint provider: " + provider);
}

} // namespace

HttpChatEndpoint::HttpChatEndpoint(EndpointConfig config)
    : config_(std::move(config)), adapter_(make_adapter(config_.provider)),
      limiter_(config_.requests_per_second, 1.0) {
    if (const char * key = std::getenv(config_.api_key_env.c_str())) {
        api_key_ = key;
    }
}

std::string HttpChatEndpoint::complete(std::string_view system_prompt, std::span<const ChatMessage> messages,
                                       const CompletionOptions & options) {
    limiter_.acquire();
    httplib::Client client(config_.base_url);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(config_.timeout_seconds));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    httplib::Headers headers;
    if (!api_key_.empty()) {
        headers.emplace("Authorization", "Bearer " + api_key_);
    }
    const auto body = adapter_->request_body(system_prompt, messages, options);
    const auto response = client.Post(config_.path, headers, body, "application/json");
    if (!response) {
        fail(ErrorKind::TransportError, "request to " + config_.base_url + config_.path +
                                            " failed: " + httplib::to_string(response.error()));
    }
    if (response->status != 200) {
        fail(ErrorKind::TransportError, "endpoint returned HTTP " + std::to_string(response->status));
    }
    return adapter_->parse_response(response->body);
}

} // namespace spanft::annotate

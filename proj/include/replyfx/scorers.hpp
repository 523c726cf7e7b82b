#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "replyfx/errors.hpp"

namespace replyfx::scorers {

// ---------------------------------------------------------------------------
// Configuration and result envelope
// ---------------------------------------------------------------------------

struct RetryPolicy {
    int max_retries = 2;                      // retries after the first attempt
    std::vector<int> backoff_ms = {100, 400}; // per-retry sleep; last entry repeats
};

struct ScorerConfig {
    std::string endpoint;            // e.g. http://host:port/path
    std::string auth_token_env;      // name of env var holding the token; value never logged
    int max_in_flight = 4;
    RetryPolicy retry;
    double timeout_s = 10.0;
    std::string toxicity_attribute = "TOXICITY"; // pinned attribute name
};

template <typename T>
struct ScoreResult {
    std::string item_id;
    T value{};
    double latency_s = 0.0;
    int attempts = 1;
};

using WarnFn = std::function<void(const std::string&)>;
WarnFn stderr_warn();

// ---------------------------------------------------------------------------
// Service interfaces
// ---------------------------------------------------------------------------

class ToxicityScorer {
public:
    virtual ~ToxicityScorer() = default;
    // Probability in [0,1]; throws InputError on empty text.
    virtual double score_toxicity(std::string_view text) = 0;
};

class EmbeddingScorer {
public:
    virtual ~EmbeddingScorer() = default;
    // Unit-normalized vector of dim() components.
    virtual std::vector<double> embed_text(std::string_view text) = 0;
    virtual int dim() const = 0;
};

class SentimentScorer {
public:
    virtual ~SentimentScorer() = default;
    // Valence in [-1,1]; provider values outside the range are clamped with a warning.
    virtual double score_sentiment(std::string_view text) = 0;
};

class TextGenerator {
public:
    virtual ~TextGenerator() = default;
    // Raw completion text. Temperature must lie in [0,2]; the seed selects the
    // sample within an ensemble and is ignored at temperature 0.
    virtual std::string generate_label(std::string_view prompt, double temperature,
                                       std::uint64_t seed) = 0;
};

// ---------------------------------------------------------------------------
// Deterministic in-process stubs
//
// Stub values derive from a stable hash of the text. Synthetic corpora may
// embed explicit tags (@tox:0.8@, @sent:-0.3@, @emb:0.1,0.2@, @votes:cchoo@)
// which take precedence, so tests control scores without any model.
// ---------------------------------------------------------------------------

std::optional<double> parse_numeric_tag(std::string_view text, std::string_view key);
std::optional<std::vector<double>> parse_vector_tag(std::string_view text, std::string_view key);
std::optional<std::string> parse_string_tag(std::string_view text, std::string_view key);

class StubToxicityScorer : public ToxicityScorer {
public:
    explicit StubToxicityScorer(WarnFn warn = stderr_warn()) : warn_(std::move(warn)) {}
    double score_toxicity(std::string_view text) override;

private:
    WarnFn warn_;
};

class StubEmbedder : public EmbeddingScorer {
public:
    explicit StubEmbedder(int dim = 768) : dim_(dim) {}
    std::vector<double> embed_text(std::string_view text) override;
    int dim() const override { return dim_; }

private:
    int dim_;
};

class StubSentimentScorer : public SentimentScorer {
public:
    explicit StubSentimentScorer(WarnFn warn = stderr_warn()) : warn_(std::move(warn)) {}
    double score_sentiment(std::string_view text) override;

private:
    WarnFn warn_;
};

class StubGenerator : public TextGenerator {
public:
    std::string generate_label(std::string_view prompt, double temperature,
                               std::uint64_t seed) override;
};

// ---------------------------------------------------------------------------
// HTTP clients
//
// One JSON-over-POST shape per service; request/response bodies are documented
// in docs/scorers.md. The transport is injectable so fault handling is testable
// without a network.
// ---------------------------------------------------------------------------

struct HttpResponse {
    int status = 0;
    std::string body;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse post(const std::string& endpoint, const std::string& json_body,
                              const std::string& auth_token, double timeout_s) = 0;
};

// Default transport backed by cpp-httplib.
std::unique_ptr<HttpTransport> make_httplib_transport();

// Counting semaphore bounding in-flight requests per client.
class Semaphore {
public:
    explicit Semaphore(int count) : count_(count) {}
    void acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return count_ > 0; });
        --count_;
    }
    void release() {
        {
            std::lock_guard lock(mu_);
            ++count_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    int count_;
};

// Shared retry/backoff/concurrency plumbing for the HTTP scorers.
class HttpClientBase {
public:
    HttpClientBase(ScorerConfig config, std::shared_ptr<HttpTransport> transport,
                   WarnFn warn = stderr_warn());
    virtual ~HttpClientBase() = default;
    int last_attempts() const { return last_attempts_; }

protected:
    // POSTs the body, retrying per policy; throws ScorerError after exhaustion.
    std::string request(const std::string& json_body);
    const ScorerConfig& config() const { return config_; }
    void warn(const std::string& msg) { warn_(msg); }

private:
    ScorerConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    std::string token_;
    Semaphore semaphore_;
    WarnFn warn_;
    int last_attempts_ = 0;
};

class HttpToxicityScorer : public HttpClientBase, public ToxicityScorer {
public:
    using HttpClientBase::HttpClientBase;
    double score_toxicity(std::string_view text) override;
};

class HttpEmbeddingScorer : public HttpClientBase, public EmbeddingScorer {
public:
    HttpEmbeddingScorer(ScorerConfig config, std::shared_ptr<HttpTransport> transport,
                        int dim = 768, WarnFn warn = stderr_warn())
        : HttpClientBase(std::move(config), std::move(transport), std::move(warn)), dim_(dim) {}
    std::vector<double> embed_text(std::string_view text) override;
    int dim() const override { return dim_; }

private:
    int dim_;
};

class HttpSentimentScorer : public HttpClientBase, public SentimentScorer {
public:
    using HttpClientBase::HttpClientBase;
    double score_sentiment(std::string_view text) override;
};

class HttpTextGenerator : public HttpClientBase, public TextGenerator {
public:
    using HttpClientBase::HttpClientBase;
    std::string generate_label(std::string_view prompt, double temperature,
                               std::uint64_t seed) override;
};

// ---------------------------------------------------------------------------
// Cache: append-only JSONL records (scorer, digest, value), keyed by
// (scorer name, content digest). Safe under concurrent access.
// ---------------------------------------------------------------------------

class ScoreCache {
public:
    ScoreCache() = default;                       // in-memory only
    explicit ScoreCache(const std::string& path); // loads existing entries, appends new ones
    std::optional<std::string> lookup(const std::string& scorer, const std::string& digest) const;
    void insert(const std::string& scorer, const std::string& digest, const std::string& value);
    std::size_t size() const;

private:
    mutable std::mutex mu_;
    std::string path_;
    std::unordered_map<std::string, std::string> entries_;
};

// ---------------------------------------------------------------------------
// Hub: the four services plus optional cache, as consumed by the pipeline.
// ---------------------------------------------------------------------------

class ScorerHub {
public:
    ScorerHub(std::shared_ptr<ToxicityScorer> tox, std::shared_ptr<EmbeddingScorer> emb,
              std::shared_ptr<SentimentScorer> sent, std::shared_ptr<TextGenerator> gen,
              std::shared_ptr<ScoreCache> cache = nullptr);

    static ScorerHub stubs(std::shared_ptr<ScoreCache> cache = nullptr);

    double toxicity(std::string_view text);
    std::vector<double> embedding(std::string_view text);
    double sentiment(std::string_view text);
    std::string generate(std::string_view prompt, double temperature, std::uint64_t seed);
    int embedding_dim() const { return emb_->dim(); }
    TextGenerator& generator() { return *gen_; }

private:
    std::shared_ptr<ToxicityScorer> tox_;
    std::shared_ptr<EmbeddingScorer> emb_;
    std::shared_ptr<SentimentScorer> sent_;
    std::shared_ptr<TextGenerator> gen_;
    std::shared_ptr<ScoreCache> cache_;
};

// Runs fn(i) for i in [0,n) on at most max_in_flight workers. Results are
// ordered by index regardless of scheduling, keeping outputs deterministic.
void parallel_for(std::size_t n, int max_in_flight, const std::function<void(std::size_t)>& fn);

}  // namespace replyfx::scorers

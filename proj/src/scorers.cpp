#include "replyfx/scorers.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "replyfx/hash.hpp"

// httplib is header-only and heavy; keep it out of every other TU.
#include <httplib.h>

namespace replyfx::scorers {

using nlohmann::json;

WarnFn stderr_warn() {
    return [](const std::string& msg) { std::cerr << "[scorer] " << msg << "\n"; };
}

// ---------------------------------------------------------------------------
// Tag parsing
// ---------------------------------------------------------------------------

namespace {

// Finds "@key:...@" in text and returns the raw payload between ':' and '@'.
std::optional<std::string_view> find_tag(std::string_view text, std::string_view key) {
    std::string marker = "@" + std::string(key) + ":";
    auto pos = text.find(marker);
    if (pos == std::string_view::npos) return std::nullopt;
    auto start = pos + marker.size();
    auto end = text.find('@', start);
    if (end == std::string_view::npos) return std::nullopt;
    return text.substr(start, end - start);
}

double clamp_with_warning(double v, double lo, double hi, const char* what, const WarnFn& warn) {
    if (v < lo || v > hi) {
        std::ostringstream os;
        os << what << " value " << v << " outside [" << lo << "," << hi << "]; clamped";
        if (warn) warn(os.str());
        return std::clamp(v, lo, hi);
    }
    return v;
}

void require_text(std::string_view text, const char* op) {
    if (text.empty()) throw InputError(std::string(op) + ": empty text");
}

}  // namespace

std::optional<double> parse_numeric_tag(std::string_view text, std::string_view key) {
    auto raw = find_tag(text, key);
    if (!raw) return std::nullopt;
    try {
        std::size_t used = 0;
        double v = std::stod(std::string(*raw), &used);
        if (used != raw->size()) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::optional<std::vector<double>> parse_vector_tag(std::string_view text, std::string_view key) {
    auto raw = find_tag(text, key);
    if (!raw) return std::nullopt;
    std::vector<double> out;
    std::stringstream ss{std::string(*raw)};
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            out.push_back(std::stod(part));
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }
    if (out.empty()) return std::nullopt;
    return out;
}

std::optional<std::string> parse_string_tag(std::string_view text, std::string_view key) {
    auto raw = find_tag(text, key);
    if (!raw) return std::nullopt;
    return std::string(*raw);
}

// ---------------------------------------------------------------------------
// Stubs
// ---------------------------------------------------------------------------

double StubToxicityScorer::score_toxicity(std::string_view text) {
    require_text(text, "score_toxicity");
    if (auto tag = parse_numeric_tag(text, "tox"))
        return clamp_with_warning(*tag, 0.0, 1.0, "toxicity", warn_);
    return hash_to_unit(fnv1a64(text, fnv1a64("toxicity")));
}

std::vector<double> StubEmbedder::embed_text(std::string_view text) {
    require_text(text, "embed_text");
    std::vector<double> v(static_cast<std::size_t>(dim_));
    const std::uint64_t base = fnv1a64(text, fnv1a64("embedding"));
    for (int i = 0; i < dim_; ++i)
        v[static_cast<std::size_t>(i)] =
            2.0 * hash_to_unit(mix64(base ^ static_cast<std::uint64_t>(i + 1))) - 1.0;
    if (auto tag = parse_vector_tag(text, "emb")) {
        // Tagged coordinates carry the signal; hash noise is attenuated so
        // synthetic covariates dominate distances.
        for (auto& x : v) x *= 0.05;
        for (std::size_t i = 0; i < tag->size() && i < v.size(); ++i) v[i] = (*tag)[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0)
        for (auto& x : v) x /= norm;
    return v;
}

double StubSentimentScorer::score_sentiment(std::string_view text) {
    require_text(text, "score_sentiment");
    if (auto tag = parse_numeric_tag(text, "sent"))
        return clamp_with_warning(*tag, -1.0, 1.0, "sentiment", warn_);
    return 2.0 * hash_to_unit(fnv1a64(text, fnv1a64("sentiment"))) - 1.0;
}

namespace {

// The labeling prompt places the target texts in its final two sections:
//   Newcomer: <text>
//   Reply: <text>
// The stub reads any @votes:...@ tags from those sections and answers in the
// exact format the parser expects.
std::pair<std::string_view, std::string_view> split_roles(std::string_view prompt) {
    auto n_pos = prompt.rfind("Newcomer:");
    if (n_pos == std::string_view::npos) return {{}, {}};
    auto tail = prompt.substr(n_pos + 9);
    auto r_pos = tail.find("Reply:");
    if (r_pos == std::string_view::npos) return {tail, {}};
    return {tail.substr(0, r_pos), tail.substr(r_pos + 6)};
}

const char* vote_letter_label(char c) {
    switch (c) {
        case 'c': return "counterspeech";
        case 'h': return "hate speech";
        default: return "other";
    }
}

std::string stub_role_label(std::string_view section, double temperature, std::uint64_t seed,
                            const char* role_salt) {
    if (auto votes = parse_string_tag(section, "votes"); votes && !votes->empty()) {
        std::size_t idx = 0;
        if (temperature > 0.0 && seed > 0)
            idx = static_cast<std::size_t>((seed - 1) % votes->size());
        return vote_letter_label((*votes)[idx]);
    }
    std::uint64_t h = fnv1a64(section, fnv1a64(role_salt));
    if (temperature > 0.0) h = mix64(h ^ mix64(seed + 1));
    double u = hash_to_unit(h);
    if (u < 0.2) return "counterspeech";
    if (u < 0.4) return "hate speech";
    return "other";
}

}  // namespace

std::string StubGenerator::generate_label(std::string_view prompt, double temperature,
                                          std::uint64_t seed) {
    if (temperature < 0.0 || temperature > 2.0)
        throw InputError("generate_label: temperature outside [0,2]");
    auto [newcomer, reply] = split_roles(prompt);
    std::string a = stub_role_label(newcomer, temperature, seed, "vote-newcomer");
    std::string b = stub_role_label(reply, temperature, seed, "vote-reply");
    return "(newcomer: " + a + ", reply: " + b + ")";
}

// ---------------------------------------------------------------------------
// HTTP transport and clients
// ---------------------------------------------------------------------------

namespace {

class HttplibTransport : public HttpTransport {
public:
    HttpResponse post(const std::string& endpoint, const std::string& json_body,
                      const std::string& auth_token, double timeout_s) override {
        auto scheme_end = endpoint.find("://");
        if (scheme_end == std::string::npos)
            throw ConfigError("scorer endpoint missing scheme: " + endpoint);
        auto path_start = endpoint.find('/', scheme_end + 3);
        std::string origin =
            path_start == std::string::npos ? endpoint : endpoint.substr(0, path_start);
        std::string path = path_start == std::string::npos ? "/" : endpoint.substr(path_start);

        httplib::Client client(origin);
        auto seconds = static_cast<time_t>(timeout_s);
        auto micros = static_cast<time_t>((timeout_s - static_cast<double>(seconds)) * 1e6);
        client.set_connection_timeout(seconds, micros);
        client.set_read_timeout(seconds, micros);
        httplib::Headers headers;
        if (!auth_token.empty()) headers.emplace("Authorization", "Bearer " + auth_token);
        auto res = client.Post(path, headers, json_body, "application/json");
        if (!res) return {0, "transport error: " + httplib::to_string(res.error())};
        return {res->status, res->body};
    }
};

}  // namespace

std::unique_ptr<HttpTransport> make_httplib_transport() {
    return std::make_unique<HttplibTransport>();
}

HttpClientBase::HttpClientBase(ScorerConfig config, std::shared_ptr<HttpTransport> transport,
                               WarnFn warn)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      semaphore_(std::max(1, config_.max_in_flight)),
      warn_(std::move(warn)) {
    if (!config_.auth_token_env.empty()) {
        if (const char* tok = std::getenv(config_.auth_token_env.c_str())) token_ = tok;
    }
}

std::string HttpClientBase::request(const std::string& json_body) {
    semaphore_.acquire();
    struct Release {
        Semaphore& s;
        ~Release() { s.release(); }
    } release{semaphore_};

    int attempts = 0;
    std::string last_error;
    int last_status = 0;
    for (int attempt = 0; attempt <= config_.retry.max_retries; ++attempt) {
        ++attempts;
        HttpResponse res = transport_->post(config_.endpoint, json_body, token_, config_.timeout_s);
        if (res.status == 200) {
            last_attempts_ = attempts;
            return res.body;
        }
        last_status = res.status;
        last_error = res.body;
        // 4xx other than 429 will not improve on retry.
        if (res.status >= 400 && res.status < 500 && res.status != 429) break;
        if (attempt < config_.retry.max_retries) {
            const auto& backoff = config_.retry.backoff_ms;
            int ms = backoff.empty()
                         ? 0
                         : backoff[std::min<std::size_t>(static_cast<std::size_t>(attempt),
                                                         backoff.size() - 1)];
            warn("retrying after status " + std::to_string(res.status));
            if (ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(ms));
        }
    }
    last_attempts_ = attempts;
    throw ScorerError("scorer request failed: " + last_error.substr(0, 200), last_status, attempts);
}

double HttpToxicityScorer::score_toxicity(std::string_view text) {
    require_text(text, "score_toxicity");
    json req = {{"comment", {{"text", std::string(text)}}},
                {"requestedAttributes", {{config().toxicity_attribute, json::object()}}}};
    json res = json::parse(request(req.dump()));
    double v = res.at("attributeScores")
                   .at(config().toxicity_attribute)
                   .at("summaryScore")
                   .at("value")
                   .get<double>();
    return clamp_with_warning(v, 0.0, 1.0, "toxicity", [this](const std::string& m) { warn(m); });
}

std::vector<double> HttpEmbeddingScorer::embed_text(std::string_view text) {
    require_text(text, "embed_text");
    json req = {{"text", std::string(text)}};
    json res = json::parse(request(req.dump()));
    auto v = res.at("embedding").get<std::vector<double>>();
    if (static_cast<int>(v.size()) != dim_)
        throw ScorerError("embedding dimension mismatch: got " + std::to_string(v.size()) +
                              ", expected " + std::to_string(dim_),
                          200, last_attempts());
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0)
        for (auto& x : v) x /= norm;
    return v;
}

double HttpSentimentScorer::score_sentiment(std::string_view text) {
    require_text(text, "score_sentiment");
    json req = {{"text", std::string(text)}};
    json res = json::parse(request(req.dump()));
    double v = res.at("score").get<double>();
    return clamp_with_warning(v, -1.0, 1.0, "sentiment", [this](const std::string& m) { warn(m); });
}

std::string HttpTextGenerator::generate_label(std::string_view prompt, double temperature,
                                              std::uint64_t seed) {
    if (temperature < 0.0 || temperature > 2.0)
        throw InputError("generate_label: temperature outside [0,2]");
    json req = {{"prompt", std::string(prompt)}, {"temperature", temperature}, {"seed", seed}};
    json res = json::parse(request(req.dump()));
    return res.at("completion").get<std::string>();
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

namespace {
std::string cache_key(const std::string& scorer, const std::string& digest) {
    return scorer + "\x1f" + digest;
}
}  // namespace

ScoreCache::ScoreCache(const std::string& path) : path_(path) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("scorer") || !rec.contains("digest") ||
            !rec.contains("value"))
            continue;  // partial trailing writes are skipped, not fatal
        entries_[cache_key(rec["scorer"].get<std::string>(), rec["digest"].get<std::string>())] =
            rec["value"].dump();
    }
}

std::optional<std::string> ScoreCache::lookup(const std::string& scorer,
                                              const std::string& digest) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(cache_key(scorer, digest));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void ScoreCache::insert(const std::string& scorer, const std::string& digest,
                        const std::string& value) {
    std::lock_guard lock(mu_);
    auto [it, inserted] = entries_.emplace(cache_key(scorer, digest), value);
    if (!inserted) return;
    if (!path_.empty()) {
        json rec = {{"scorer", scorer}, {"digest", digest}, {"value", json::parse(value)}};
        std::ofstream out(path_, std::ios::app);
        out << rec.dump() << "\n";
    }
}

std::size_t ScoreCache::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

// ---------------------------------------------------------------------------
// Hub
// ---------------------------------------------------------------------------

ScorerHub::ScorerHub(std::shared_ptr<ToxicityScorer> tox, std::shared_ptr<EmbeddingScorer> emb,
                     std::shared_ptr<SentimentScorer> sent, std::shared_ptr<TextGenerator> gen,
                     std::shared_ptr<ScoreCache> cache)
    : tox_(std::move(tox)),
      emb_(std::move(emb)),
      sent_(std::move(sent)),
      gen_(std::move(gen)),
      cache_(std::move(cache)) {}

ScorerHub ScorerHub::stubs(std::shared_ptr<ScoreCache> cache) {
    return ScorerHub(std::make_shared<StubToxicityScorer>(), std::make_shared<StubEmbedder>(),
                     std::make_shared<StubSentimentScorer>(), std::make_shared<StubGenerator>(),
                     std::move(cache));
}

double ScorerHub::toxicity(std::string_view text) {
    if (cache_) {
        auto digest = text_digest(text);
        if (auto hit = cache_->lookup("toxicity", digest)) return json::parse(*hit).get<double>();
        double v = tox_->score_toxicity(text);
        cache_->insert("toxicity", digest, json(v).dump());
        return v;
    }
    return tox_->score_toxicity(text);
}

std::vector<double> ScorerHub::embedding(std::string_view text) {
    if (cache_) {
        auto digest = text_digest(text);
        if (auto hit = cache_->lookup("embedding", digest))
            return json::parse(*hit).get<std::vector<double>>();
        auto v = emb_->embed_text(text);
        cache_->insert("embedding", digest, json(v).dump());
        return v;
    }
    return emb_->embed_text(text);
}

double ScorerHub::sentiment(std::string_view text) {
    if (cache_) {
        auto digest = text_digest(text);
        if (auto hit = cache_->lookup("sentiment", digest)) return json::parse(*hit).get<double>();
        double v = sent_->score_sentiment(text);
        cache_->insert("sentiment", digest, json(v).dump());
        return v;
    }
    return sent_->score_sentiment(text);
}

std::string ScorerHub::generate(std::string_view prompt, double temperature, std::uint64_t seed) {
    if (cache_) {
        std::ostringstream key;
        key << prompt << "\x1f" << temperature << "\x1f" << seed;
        auto digest = text_digest(key.str());
        if (auto hit = cache_->lookup("generate", digest))
            return json::parse(*hit).get<std::string>();
        auto v = gen_->generate_label(prompt, temperature, seed);
        cache_->insert("generate", digest, json(v).dump());
        return v;
    }
    return gen_->generate_label(prompt, temperature, seed);
}

// ---------------------------------------------------------------------------
// Bounded fan-out
// ---------------------------------------------------------------------------

void parallel_for(std::size_t n, int max_in_flight, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    int workers = std::max(1, std::min<int>(max_in_flight, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> threads;
    std::mutex err_mu;
    std::exception_ptr first_error;
    threads.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace replyfx::scorers

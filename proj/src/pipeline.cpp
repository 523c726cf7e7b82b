#include "replyfx/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "replyfx/balance.hpp"
#include "replyfx/errors.hpp"
#include "replyfx/hash.hpp"
#include "replyfx/stats.hpp"

namespace replyfx::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Small file and JSON helpers
// ---------------------------------------------------------------------------

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write file: " + path);
    out << content;
}

json parse_json(const std::string& text, const std::string& what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ParseError("malformed JSON in " + what);
    return j;
}

// Non-finite doubles have no JSON representation; they become tagged strings
// so artifacts stay lossless.
json json_num(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

double num_from_json(const json& j) {
    if (j.is_number()) return j.get<double>();
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    return std::numeric_limits<double>::quiet_NaN();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (key == a) known = true;
        if (!known) throw ConfigError("unknown key \"" + key + "\" in " + where);
    }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

// ---------------------------------------------------------------------------
// Config serialization
// ---------------------------------------------------------------------------

json scorer_config_to_json(const scorers::ScorerConfig& c) {
    return {{"endpoint", c.endpoint},
            {"auth_token_env", c.auth_token_env},
            {"max_in_flight", c.max_in_flight},
            {"max_retries", c.retry.max_retries},
            {"backoff_ms", c.retry.backoff_ms},
            {"timeout_s", c.timeout_s},
            {"toxicity_attribute", c.toxicity_attribute}};
}

scorers::ScorerConfig scorer_config_from_json(const json& j, const std::string& where) {
    check_keys(j,
               {"endpoint", "auth_token_env", "max_in_flight", "max_retries", "backoff_ms",
                "timeout_s", "toxicity_attribute"},
               where);
    scorers::ScorerConfig c;
    maybe(j, "endpoint", c.endpoint);
    maybe(j, "auth_token_env", c.auth_token_env);
    maybe(j, "max_in_flight", c.max_in_flight);
    maybe(j, "max_retries", c.retry.max_retries);
    maybe(j, "backoff_ms", c.retry.backoff_ms);
    maybe(j, "timeout_s", c.timeout_s);
    maybe(j, "toxicity_attribute", c.toxicity_attribute);
    return c;
}

}  // namespace

void PipelineConfig::validate() const {
    auto near = [](double a, double b) { return std::abs(a - b) < 1e-9; };
    for (double t : {cs_threshold, hs_threshold})
        if (!(near(t, 0.6) || near(t, 0.8) || near(t, 1.0)))
            throw ConfigError("label confidence thresholds must be 0.6, 0.8, or 1.0");
    if (!(toxicity_threshold > 0.0 && toxicity_threshold < 1.0))
        throw ConfigError("toxicity_threshold must lie in (0,1)");
    if (smd_threshold <= 0.0) throw ConfigError("smd_threshold must be positive");
    if (vif_threshold <= 1.0) throw ConfigError("vif_threshold must exceed 1");
    if (min_pairs < 0) throw ConfigError("min_pairs must be nonnegative");
    if (ordinal < 1) throw ConfigError("ordinal must be at least 1");
    if (ensemble.k < 1) throw ConfigError("ensemble k must be positive");
    if (pca_components < 1) throw ConfigError("pca_components must be positive");
    if (starting_pairs.empty()) throw ConfigError("at least one starting pair is required");
    if (caliper && *caliper <= 0.0) throw ConfigError("caliper must be positive when set");
    if (outcome != "binary" && outcome != "count")
        throw ConfigError("outcome must be \"binary\" or \"count\"");
    if (n_boot < 1) throw ConfigError("n_boot must be positive");
    if (min_triplets < 1) throw ConfigError("min_triplets must be positive");
    if (followup_bins < 1) throw ConfigError("followup_bins must be positive");
    if (scorers.embedding_dim < 1) throw ConfigError("embedding_dim must be positive");
    if (scorers.max_in_flight < 1) throw ConfigError("max_in_flight must be positive");
    if (!scorers.stub)
        for (const auto* c :
             {&scorers.toxicity, &scorers.embedding, &scorers.sentiment, &scorers.generator})
            if (c->endpoint.empty())
                throw ConfigError("HTTP scorer mode requires all four endpoints");
}

std::string config_to_json_text(const PipelineConfig& c) {
    json pairs = json::array();
    for (auto p : c.starting_pairs) pairs.push_back(matcher::starting_pair_name(p));
    json j = {
        {"paths",
         {{"corpus", c.paths.corpus},
          {"gold_labels", c.paths.gold_labels},
          {"slurs", c.paths.slurs},
          {"stopwords", c.paths.stopwords},
          {"prompt_template", c.paths.prompt_template},
          {"cache", c.paths.cache},
          {"run_dir", c.paths.run_dir}}},
        {"cohort", {{"ordinal", c.ordinal}, {"min_pairs", c.min_pairs}}},
        {"thresholds",
         {{"counterspeech", c.cs_threshold},
          {"hate", c.hs_threshold},
          {"toxicity", c.toxicity_threshold},
          {"smd", c.smd_threshold},
          {"vif", c.vif_threshold}}},
        {"labeling",
         {{"k", c.ensemble.k},
          {"temperature", c.ensemble.temperature},
          {"max_resamples", c.ensemble.max_resamples},
          {"seed_start", c.ensemble.seed_start}}},
        {"matching",
         {{"metric", represent::metric_name(c.metric)},
          {"pca_components", c.pca_components},
          {"starting_pairs", pairs},
          {"caliper", c.caliper ? json(*c.caliper) : json(nullptr)}}},
        {"estimation",
         {{"outcome", c.outcome},
          {"n_boot", c.n_boot},
          {"min_triplets", c.min_triplets},
          {"random_intercept", c.random_intercept}}},
        {"followups", {{"bins", c.followup_bins}}},
        {"scorers",
         {{"mode", c.scorers.stub ? "stub" : "http"},
          {"embedding_dim", c.scorers.embedding_dim},
          {"max_in_flight", c.scorers.max_in_flight},
          {"toxicity", scorer_config_to_json(c.scorers.toxicity)},
          {"embedding", scorer_config_to_json(c.scorers.embedding)},
          {"sentiment", scorer_config_to_json(c.scorers.sentiment)},
          {"generator", scorer_config_to_json(c.scorers.generator)}}},
        {"seed", c.seed}};
    return j.dump(2) + "\n";
}

PipelineConfig config_from_json_text(const std::string& text) {
    json j = parse_json(text, "pipeline config");
    check_keys(j,
               {"paths", "cohort", "thresholds", "labeling", "matching", "estimation", "followups",
                "scorers", "seed"},
               "pipeline config");
    PipelineConfig c;
    if (auto it = j.find("paths"); it != j.end()) {
        check_keys(*it,
                   {"corpus", "gold_labels", "slurs", "stopwords", "prompt_template", "cache",
                    "run_dir"},
                   "paths");
        maybe(*it, "corpus", c.paths.corpus);
        maybe(*it, "gold_labels", c.paths.gold_labels);
        maybe(*it, "slurs", c.paths.slurs);
        maybe(*it, "stopwords", c.paths.stopwords);
        maybe(*it, "prompt_template", c.paths.prompt_template);
        maybe(*it, "cache", c.paths.cache);
        maybe(*it, "run_dir", c.paths.run_dir);
    }
    if (auto it = j.find("cohort"); it != j.end()) {
        check_keys(*it, {"ordinal", "min_pairs"}, "cohort");
        maybe(*it, "ordinal", c.ordinal);
        maybe(*it, "min_pairs", c.min_pairs);
    }
    if (auto it = j.find("thresholds"); it != j.end()) {
        check_keys(*it, {"counterspeech", "hate", "toxicity", "smd", "vif"}, "thresholds");
        maybe(*it, "counterspeech", c.cs_threshold);
        maybe(*it, "hate", c.hs_threshold);
        maybe(*it, "toxicity", c.toxicity_threshold);
        maybe(*it, "smd", c.smd_threshold);
        maybe(*it, "vif", c.vif_threshold);
    }
    if (auto it = j.find("labeling"); it != j.end()) {
        check_keys(*it, {"k", "temperature", "max_resamples", "seed_start"}, "labeling");
        maybe(*it, "k", c.ensemble.k);
        maybe(*it, "temperature", c.ensemble.temperature);
        maybe(*it, "max_resamples", c.ensemble.max_resamples);
        maybe(*it, "seed_start", c.ensemble.seed_start);
    }
    if (auto it = j.find("matching"); it != j.end()) {
        check_keys(*it, {"metric", "pca_components", "starting_pairs", "caliper"}, "matching");
        if (auto m = it->find("metric"); m != it->end()) {
            auto metric = represent::metric_from_name(m->get<std::string>());
            if (!metric) throw ConfigError("unknown matching metric: " + m->get<std::string>());
            c.metric = *metric;
        }
        maybe(*it, "pca_components", c.pca_components);
        if (auto p = it->find("starting_pairs"); p != it->end()) {
            c.starting_pairs.clear();
            for (const auto& name : *p) {
                const std::string s = name.get<std::string>();
                bool found = false;
                for (auto sp : {matcher::StartingPair::AB, matcher::StartingPair::AC,
                                matcher::StartingPair::BC})
                    if (s == matcher::starting_pair_name(sp)) {
                        c.starting_pairs.push_back(sp);
                        found = true;
                    }
                if (!found) throw ConfigError("unknown starting pair: " + s);
            }
        }
        if (auto cal = it->find("caliper"); cal != it->end() && !cal->is_null())
            c.caliper = cal->get<double>();
    }
    if (auto it = j.find("estimation"); it != j.end()) {
        check_keys(*it, {"outcome", "n_boot", "min_triplets", "random_intercept"}, "estimation");
        maybe(*it, "outcome", c.outcome);
        maybe(*it, "n_boot", c.n_boot);
        maybe(*it, "min_triplets", c.min_triplets);
        maybe(*it, "random_intercept", c.random_intercept);
    }
    if (auto it = j.find("followups"); it != j.end()) {
        check_keys(*it, {"bins"}, "followups");
        maybe(*it, "bins", c.followup_bins);
    }
    if (auto it = j.find("scorers"); it != j.end()) {
        check_keys(*it,
                   {"mode", "embedding_dim", "max_in_flight", "toxicity", "embedding", "sentiment",
                    "generator"},
                   "scorers");
        if (auto m = it->find("mode"); m != it->end()) {
            const std::string mode = m->get<std::string>();
            if (mode != "stub" && mode != "http")
                throw ConfigError("scorers.mode must be \"stub\" or \"http\"");
            c.scorers.stub = mode == "stub";
        }
        maybe(*it, "embedding_dim", c.scorers.embedding_dim);
        maybe(*it, "max_in_flight", c.scorers.max_in_flight);
        if (auto s = it->find("toxicity"); s != it->end())
            c.scorers.toxicity = scorer_config_from_json(*s, "scorers.toxicity");
        if (auto s = it->find("embedding"); s != it->end())
            c.scorers.embedding = scorer_config_from_json(*s, "scorers.embedding");
        if (auto s = it->find("sentiment"); s != it->end())
            c.scorers.sentiment = scorer_config_from_json(*s, "scorers.sentiment");
        if (auto s = it->find("generator"); s != it->end())
            c.scorers.generator = scorer_config_from_json(*s, "scorers.generator");
    }
    maybe(j, "seed", c.seed);
    c.validate();
    return c;
}

PipelineConfig load_config_file(const std::string& path) {
    return config_from_json_text(read_file(path));
}

std::string config_digest(const PipelineConfig& config) {
    return text_digest(config_to_json_text(config));
}

// ---------------------------------------------------------------------------
// Synth spec serialization
// ---------------------------------------------------------------------------

namespace {

json range_to_json(const synth::Range& r) { return {{"lo", r.lo}, {"hi", r.hi}}; }

synth::Range range_from_json(const json& j, const std::string& where) {
    check_keys(j, {"lo", "hi"}, where);
    synth::Range r;
    maybe(j, "lo", r.lo);
    maybe(j, "hi", r.hi);
    return r;
}

}  // namespace

std::string synth_spec_to_json_text(const synth::SynthSpec& s) {
    json j = {{"n_clusters", s.n_clusters},
              {"units_per_cluster", s.units_per_cluster},
              {"seed", s.seed},
              {"sigma2", s.sigma2},
              {"p_no_reply", s.p_no_reply},
              {"p_counterspeech", s.p_counterspeech},
              {"p_hate_reply", s.p_hate_reply},
              {"p_other_reply", s.p_other_reply},
              {"confounder_to_treatment", s.confounder_to_treatment},
              {"ate_counterspeech", s.ate_counterspeech},
              {"ate_hate_reply", s.ate_hate_reply},
              {"base_rate", s.base_rate},
              {"outcome_sentiment", s.outcome_sentiment},
              {"outcome_embedding", s.outcome_embedding},
              {"outcome_prior", s.outcome_prior},
              {"outcome_toxicity", s.outcome_toxicity},
              {"cs_toxic_fraction", s.cs_toxic_fraction},
              {"cs_nontoxic_range", range_to_json(s.cs_nontoxic_range)},
              {"cs_toxic_range", range_to_json(s.cs_toxic_range)},
              {"hate_range", range_to_json(s.hate_range)},
              {"other_range", range_to_json(s.other_range)},
              {"followup_rate", s.followup_rate},
              {"followup_toxic_base", s.followup_toxic_base},
              {"followup_toxic_slope", s.followup_toxic_slope},
              {"followup_toxic_range", range_to_json(s.followup_toxic_range)},
              {"followup_clean_range", range_to_json(s.followup_clean_range)},
              {"effect_only_nontoxic", s.effect_only_nontoxic},
              {"nontoxic_cutoff", s.nontoxic_cutoff}};
    return j.dump(2) + "\n";
}

synth::SynthSpec synth_spec_from_json_text(const std::string& text) {
    json j = parse_json(text, "synth spec");
    check_keys(j,
               {"n_clusters",        "units_per_cluster",    "seed",
                "sigma2",            "p_no_reply",           "p_counterspeech",
                "p_hate_reply",      "p_other_reply",        "confounder_to_treatment",
                "ate_counterspeech", "ate_hate_reply",       "base_rate",
                "outcome_sentiment", "outcome_embedding",    "outcome_prior",
                "outcome_toxicity",  "cs_toxic_fraction",    "cs_nontoxic_range",
                "cs_toxic_range",    "hate_range",           "other_range",
                "followup_rate",     "followup_toxic_base",  "followup_toxic_slope",
                "followup_toxic_range", "followup_clean_range", "effect_only_nontoxic",
                "nontoxic_cutoff"},
               "synth spec");
    synth::SynthSpec s;
    maybe(j, "n_clusters", s.n_clusters);
    maybe(j, "units_per_cluster", s.units_per_cluster);
    maybe(j, "seed", s.seed);
    maybe(j, "sigma2", s.sigma2);
    maybe(j, "p_no_reply", s.p_no_reply);
    maybe(j, "p_counterspeech", s.p_counterspeech);
    maybe(j, "p_hate_reply", s.p_hate_reply);
    maybe(j, "p_other_reply", s.p_other_reply);
    maybe(j, "confounder_to_treatment", s.confounder_to_treatment);
    maybe(j, "ate_counterspeech", s.ate_counterspeech);
    maybe(j, "ate_hate_reply", s.ate_hate_reply);
    maybe(j, "base_rate", s.base_rate);
    maybe(j, "outcome_sentiment", s.outcome_sentiment);
    maybe(j, "outcome_embedding", s.outcome_embedding);
    maybe(j, "outcome_prior", s.outcome_prior);
    maybe(j, "outcome_toxicity", s.outcome_toxicity);
    maybe(j, "cs_toxic_fraction", s.cs_toxic_fraction);
    if (auto it = j.find("cs_nontoxic_range"); it != j.end())
        s.cs_nontoxic_range = range_from_json(*it, "cs_nontoxic_range");
    if (auto it = j.find("cs_toxic_range"); it != j.end())
        s.cs_toxic_range = range_from_json(*it, "cs_toxic_range");
    if (auto it = j.find("hate_range"); it != j.end())
        s.hate_range = range_from_json(*it, "hate_range");
    if (auto it = j.find("other_range"); it != j.end())
        s.other_range = range_from_json(*it, "other_range");
    maybe(j, "followup_rate", s.followup_rate);
    maybe(j, "followup_toxic_base", s.followup_toxic_base);
    maybe(j, "followup_toxic_slope", s.followup_toxic_slope);
    if (auto it = j.find("followup_toxic_range"); it != j.end())
        s.followup_toxic_range = range_from_json(*it, "followup_toxic_range");
    if (auto it = j.find("followup_clean_range"); it != j.end())
        s.followup_clean_range = range_from_json(*it, "followup_clean_range");
    maybe(j, "effect_only_nontoxic", s.effect_only_nontoxic);
    maybe(j, "nontoxic_cutoff", s.nontoxic_cutoff);
    s.validate();
    return s;
}

std::string ground_truth_to_json_text(const synth::GroundTruth& t) {
    json j = {{"delta_counterspeech", t.delta_counterspeech},
              {"delta_hate", t.delta_hate},
              {"ate_counterspeech", t.ate_counterspeech},
              {"ate_hate_reply", t.ate_hate_reply},
              {"sigma2", t.sigma2},
              {"naive_counterspeech", t.naive_counterspeech},
              {"arm_counts", t.arm_counts},
              {"hate_reply_count", t.hate_reply_count},
              {"clusters", t.clusters}};
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Stage and axis names
// ---------------------------------------------------------------------------

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::Label: return "label";
        case Stage::Ingest: return "ingest";
        case Stage::Match: return "match";
        case Stage::Balance: return "balance";
        case Stage::Estimate: return "estimate";
        case Stage::Followups: return "followups";
        case Stage::Adjust: return "adjust";
        default: return "all";
    }
}

std::optional<Stage> stage_from_name(std::string_view name) {
    for (Stage s : {Stage::Label, Stage::Ingest, Stage::Match, Stage::Balance, Stage::Estimate,
                    Stage::Followups, Stage::Adjust, Stage::All})
        if (name == stage_name(s)) return s;
    return std::nullopt;
}

const char* sweep_axis_name(SweepAxis a) {
    switch (a) {
        case SweepAxis::Threshold: return "threshold";
        case SweepAxis::MatchingType: return "matching-type";
        case SweepAxis::MinPairs: return "min-pairs";
        case SweepAxis::Outcome: return "outcome";
        default: return "ordinal";
    }
}

std::optional<SweepAxis> sweep_axis_from_name(std::string_view name) {
    for (SweepAxis a : {SweepAxis::Threshold, SweepAxis::MatchingType, SweepAxis::MinPairs,
                        SweepAxis::Outcome, SweepAxis::Ordinal})
        if (name == sweep_axis_name(a)) return a;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Services
// ---------------------------------------------------------------------------

Services make_services(const PipelineConfig& config, const scorers::WarnFn& warn) {
    std::shared_ptr<scorers::ScoreCache> cache;
    if (!config.paths.cache.empty())
        cache = std::make_shared<scorers::ScoreCache>(config.paths.cache);
    if (config.scorers.stub) {
        auto tox = std::make_shared<scorers::StubToxicityScorer>(warn);
        auto emb = std::make_shared<scorers::StubEmbedder>(config.scorers.embedding_dim);
        auto sent = std::make_shared<scorers::StubSentimentScorer>(warn);
        auto gen = std::make_shared<scorers::StubGenerator>();
        return {tox, emb, sent, gen, cache, scorers::ScorerHub(tox, emb, sent, gen, cache)};
    }
    auto transport = std::shared_ptr<scorers::HttpTransport>(scorers::make_httplib_transport());
    auto tox = std::make_shared<scorers::HttpToxicityScorer>(config.scorers.toxicity, transport,
                                                             warn);
    auto emb = std::make_shared<scorers::HttpEmbeddingScorer>(
        config.scorers.embedding, transport, config.scorers.embedding_dim, warn);
    auto sent = std::make_shared<scorers::HttpSentimentScorer>(config.scorers.sentiment, transport,
                                                               warn);
    auto gen = std::make_shared<scorers::HttpTextGenerator>(config.scorers.generator, transport,
                                                            warn);
    return {tox, emb, sent, gen, cache, scorers::ScorerHub(tox, emb, sent, gen, cache)};
}

// ---------------------------------------------------------------------------
// Labeling
// ---------------------------------------------------------------------------

LabelStore label_events(const std::vector<ingest::NewcomerEvent>& events,
                        const ingest::Corpus& corpus, scorers::ScorerHub& hub,
                        const labeler::EnsembleConfig& config, const std::string& prompt_template,
                        int max_in_flight, const scorers::WarnFn& warn) {
    std::vector<const ingest::NewcomerEvent*> replied;
    for (const auto& e : events)
        if (e.first_reply_id) replied.push_back(&e);

    std::vector<labeler::EnsembleResult> results(replied.size());
    std::mutex warn_mu;
    scorers::WarnFn locked_warn = [&](const std::string& msg) {
        std::lock_guard lock(warn_mu);
        warn(msg);
    };
    scorers::parallel_for(replied.size(), max_in_flight, [&](std::size_t i) {
        const auto& e = *replied[i];
        labeler::LabelPairInput pair;
        pair.item_id = *e.first_reply_id;
        const auto& comment = corpus.at(e.comment_id);
        if (const auto* root = corpus.find(comment.link_id)) pair.context = root->body;
        pair.newcomer = comment.body;
        pair.reply = corpus.at(*e.first_reply_id).body;
        results[i] = labeler::ensemble_label(hub.generator(), pair, prompt_template, config,
                                             locked_warn);
    });

    LabelStore store;
    for (std::size_t i = 0; i < replied.size(); ++i) {
        auto& res = results[i];
        res.newcomer.item_id = replied[i]->comment_id;
        res.reply.item_id = *replied[i]->first_reply_id;
        store.newcomer[res.newcomer.item_id] = res.newcomer;
        store.reply[res.reply.item_id] = res.reply;
        store.resamples_used += res.resamples_used;
        store.counted_as_other += res.counted_as_other;
    }
    return store;
}

void write_labels(std::ostream& out, const std::vector<ingest::NewcomerEvent>& events,
                  const LabelStore& store) {
    for (const auto& e : events) {
        if (!e.first_reply_id) continue;
        auto n = store.newcomer.find(e.comment_id);
        auto r = store.reply.find(*e.first_reply_id);
        if (n == store.newcomer.end() || r == store.reply.end()) continue;
        json j = {{"newcomer_id", e.comment_id},
                  {"reply_id", *e.first_reply_id},
                  {"newcomer_votes", n->second.votes},
                  {"reply_votes", r->second.votes}};
        out << j.dump() << "\n";
    }
}

LabelStore read_labels(std::istream& in) {
    LabelStore store;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError("malformed label record", line_no);
        const auto newcomer_id = j.at("newcomer_id").get<std::string>();
        const auto reply_id = j.at("reply_id").get<std::string>();
        const auto nv = j.at("newcomer_votes").get<std::array<int, labeler::kNumClasses>>();
        const auto rv = j.at("reply_votes").get<std::array<int, labeler::kNumClasses>>();
        store.newcomer[newcomer_id] = labeler::make_confidence_record(newcomer_id, nv);
        store.reply[reply_id] = labeler::make_confidence_record(reply_id, rv);
    }
    return store;
}

// ---------------------------------------------------------------------------
// Cohort construction
// ---------------------------------------------------------------------------

CohortBuild build_cohort(const ingest::Corpus& corpus, const ingest::ThreadIndex& index,
                         const LabelStore& labels, const PipelineConfig& config,
                         scorers::ScorerHub& hub, const scorers::WarnFn& warn) {
    CohortBuild out;
    auto events = ingest::extract_newcomers(index, corpus, config.ordinal, std::nullopt, warn);
    out.events_total = static_cast<int>(events.size());

    // Arms are cheap; assigning them first lets cluster filtering run before
    // any covariate scoring.
    std::vector<std::pair<ingest::Arm, bool>> arms(events.size());
    std::unordered_map<std::string, int> cs_per_cluster;
    for (std::size_t i = 0; i < events.size(); ++i) {
        arms[i] = events[i].first_reply_id
                      ? ingest::assign_treatment(events[i], labels.reply, config.cs_threshold,
                                                 config.hs_threshold)
                      : std::pair<ingest::Arm, bool>{ingest::Arm::NoReply, false};
        if (arms[i].first == ingest::Arm::Counterspeech)
            ++cs_per_cluster[events[i].subreddit];
    }
    std::set<std::string> retained;
    for (const auto& [sub, n] : cs_per_cluster)
        if (n > config.min_pairs) retained.insert(sub);
    if (retained.empty())
        throw InsufficientSampleError(
            "no cluster holds more than " + std::to_string(config.min_pairs) +
            " counterspeech units");

    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < events.size(); ++i)
        if (retained.count(events[i].subreddit)) kept.push_back(i);
    out.events_scored = static_cast<int>(kept.size());

    const auto spans = ingest::subreddit_spans(corpus);
    const ingest::PriorActivityStore history(corpus);
    std::int64_t corpus_end = 0;
    for (const auto& c : corpus.comments) corpus_end = std::max(corpus_end, c.created_utc);

    std::vector<ingest::UnitRecord> units(kept.size());
    scorers::parallel_for(kept.size(), config.scorers.max_in_flight, [&](std::size_t k) {
        const auto& e = events[kept[k]];
        ingest::UnitRecord u;
        u.event = e;
        u.covariates = ingest::compute_covariates(e, index, corpus, history, spans, hub);
        u.arm = arms[kept[k]].first;
        u.hate_reply_flag = arms[kept[k]].second;
        if (u.arm != ingest::Arm::NoReply)
            u.reply_toxicity = hub.toxicity(corpus.at(*e.first_reply_id).body);
        auto [engaged, threads] =
            ingest::compute_outcome(e, corpus, ingest::kDefaultOutcomeWindow, corpus_end);
        u.outcome_engaged = engaged;
        u.outcome_thread_count = threads;
        u.cluster_id = e.subreddit;
        units[k] = std::move(u);
    });

    std::vector<ingest::NewcomerEvent> kept_events;
    kept_events.reserve(kept.size());
    for (std::size_t i : kept) kept_events.push_back(events[i]);
    out.p90_return = ingest::p90_return_time(kept_events, corpus);

    auto censored = ingest::apply_censoring(units, {corpus_end, out.p90_return});
    out.dropped_censoring = static_cast<int>(units.size() - censored.size());

    // Censoring can only shrink clusters, so the filter is re-applied to the
    // final cohort to keep the retention invariant exact.
    out.clusters = ingest::filter_subreddits(censored, config.min_pairs);
    if (out.clusters.empty())
        throw InsufficientSampleError(
            "censoring left no cluster with more than " + std::to_string(config.min_pairs) +
            " counterspeech units");
    out.units = ingest::keep_clusters(censored, out.clusters);
    return out;
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

MatchedCohort match_cohort(const std::vector<ingest::UnitRecord>& units,
                           const PipelineConfig& config, const scorers::WarnFn& warn) {
    if (units.empty()) throw SizeError("matching requires a non-empty cohort");
    MatchedCohort out;
    std::vector<int> arms(units.size());
    for (std::size_t i = 0; i < units.size(); ++i) {
        arms[i] = static_cast<int>(units[i].arm);
        out.arm_units[static_cast<std::size_t>(arms[i])].push_back(static_cast<int>(i));
    }

    std::vector<int> keep(ingest::CovariateVector::scalar_names().size());
    for (std::size_t k = 0; k < keep.size(); ++k) keep[k] = static_cast<int>(k);
    const auto assembled = represent::assemble_features(units, keep);
    const auto standardized = represent::standardize(assembled.X);

    // PCA scores always feed the balance report; they double as the matching
    // representation under the Mahalanobis metric.
    const auto pca = represent::fit_pca(standardized.X, config.pca_components, warn);
    out.pca_scores = represent::project(pca, standardized.X);

    Eigen::MatrixXd rep;
    Eigen::MatrixXd pooled;
    const Eigen::MatrixXd* pooled_ptr = nullptr;
    if (config.metric == represent::Metric::MahalanobisOnPca) {
        rep = out.pca_scores;
        pooled = represent::covariance(rep);
        pooled_ptr = &pooled;
    } else {
        const auto propensity = represent::fit_propensity(standardized.X, arms);
        rep = represent::propensity_score_matrix(propensity, standardized.X);
    }

    std::array<Eigen::MatrixXd, 3> groups;
    for (int a = 0; a < 3; ++a) {
        const auto& idx = out.arm_units[static_cast<std::size_t>(a)];
        groups[static_cast<std::size_t>(a)].resize(static_cast<Eigen::Index>(idx.size()),
                                                   rep.cols());
        for (std::size_t r = 0; r < idx.size(); ++r)
            groups[static_cast<std::size_t>(a)].row(static_cast<Eigen::Index>(r)) =
                rep.row(idx[r]);
    }
    const auto d_ab = represent::distance_matrix(groups[0], groups[1], config.metric, pooled_ptr);
    const auto d_ac = represent::distance_matrix(groups[0], groups[2], config.metric, pooled_ptr);
    const auto d_bc = represent::distance_matrix(groups[1], groups[2], config.metric, pooled_ptr);

    matcher::TripletMatchOptions options;
    options.caliper = config.caliper;
    for (auto sp : config.starting_pairs) {
        auto run = matcher::triplet_match(d_ab, d_ac, d_bc, sp, options);
        run.balance = balance::balance_report(units, out.arm_units, run.triplets.triplets,
                                              config.smd_threshold, &out.pca_scores);
        out.runs.push_back(std::move(run));
    }
    const auto& best = matcher::select_best_run(out.runs, config.smd_threshold);
    out.best = static_cast<std::size_t>(&best - out.runs.data());
    return out;
}

// ---------------------------------------------------------------------------
// Estimation
// ---------------------------------------------------------------------------

namespace {

estimator::EffectEstimate wald_effect(const estimator::FitResult& fit, const std::string& column,
                                      const std::string& contrast, int n) {
    const auto* coef = fit.find(column);
    if (!coef) throw FitError("column missing from fit: " + column);
    const double zq = stats::normal_quantile(0.975);
    estimator::EffectEstimate e;
    e.contrast = contrast;
    e.ate = coef->estimate;
    e.lo = coef->estimate - zq * coef->se;
    e.hi = coef->estimate + zq * coef->se;
    e.p = coef->p;
    e.n = n;
    return e;
}

}  // namespace

EffectsResult estimate_cohort(const std::vector<ingest::UnitRecord>& units,
                              const MatchedCohort& match, const PipelineConfig& config) {
    const auto& triplets = match.best_run().triplets.triplets;
    estimator::EstimationOptions options;
    options.vif_threshold = config.vif_threshold;
    options.n_boot = config.n_boot;
    options.seed = config.seed;
    options.min_triplets = config.min_triplets;
    options.random_intercept = config.random_intercept;

    EffectsResult out;
    out.outcome = config.outcome;
    out.n_triplets = static_cast<int>(triplets.size());
    if (config.outcome == "binary") {
        auto estimate = estimator::estimate_effects(units, match.arm_units, triplets, options);
        out.fit = std::move(estimate.fit);
        out.counterspeech = estimate.counterspeech;
        out.hate_reply = estimate.hate_reply;
    } else {
        if (out.n_triplets < config.min_triplets)
            throw InsufficientSampleError(
                "matched sample has " + std::to_string(out.n_triplets) +
                " triplets; at least " + std::to_string(config.min_triplets) + " required");
        auto assembled =
            estimator::build_design(units, match.arm_units, triplets, config.vif_threshold);
        estimator::NbOptions nb;
        out.fit = estimator::fit_negative_binomial(assembled.design, assembled.count_outcomes, nb);
        const int n = assembled.design.rows();
        out.counterspeech = wald_effect(out.fit, "counterspeech", "counterspeech log rate ratio",
                                        n);
        out.hate_reply = wald_effect(out.fit, "hate_reply", "hate reply log rate ratio", n);
    }

    // Toxicity subsets re-estimate the binary outcome; failures are reported
    // alongside the headline numbers instead of aborting the stage.
    for (auto mode : {estimator::SubsetMode::NontoxicOnly, estimator::SubsetMode::ToxicOnly}) {
        try {
            auto estimate = estimator::subset_effect(units, match.arm_units, triplets,
                                                     config.toxicity_threshold, mode, options);
            (mode == estimator::SubsetMode::NontoxicOnly ? out.nontoxic_only : out.toxic_only) =
                estimate;
        } catch (const Error& e) {
            (mode == estimator::SubsetMode::NontoxicOnly ? out.nontoxic_error : out.toxic_error) =
                e.what();
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Follow-ups and text adjustment
// ---------------------------------------------------------------------------

std::vector<estimator::ReplyObs> collect_reply_obs(const std::vector<ingest::UnitRecord>& units,
                                                   const ingest::Corpus& corpus,
                                                   const ingest::ThreadIndex& index,
                                                   scorers::ScorerHub& hub) {
    std::vector<estimator::ReplyObs> out;
    for (const auto& u : units) {
        if (u.arm == ingest::Arm::NoReply || !u.event.first_reply_id) continue;
        estimator::ReplyObs obs;
        obs.toxicity = u.reply_toxicity.value_or(0.0);
        obs.label = u.hate_reply_flag ? labeler::LabelClass::HateSpeech
                    : u.arm == ingest::Arm::Counterspeech ? labeler::LabelClass::Counterspeech
                                                          : labeler::LabelClass::Other;
        if (auto it = index.children.find(*u.event.first_reply_id); it != index.children.end())
            for (const auto& child_id : it->second)
                obs.followup_toxicities.push_back(hub.toxicity(corpus.at(child_id).body));
        out.push_back(std::move(obs));
    }
    return out;
}

AdjustResult adjust_cohort(const std::vector<ingest::UnitRecord>& units,
                           const ingest::Corpus& corpus, const PipelineConfig& config,
                           scorers::ToxicityScorer& scorer) {
    std::array<std::vector<std::string>, labeler::kNumClasses> replies_by_class;
    for (const auto& u : units) {
        if (u.arm == ingest::Arm::NoReply || !u.event.first_reply_id) continue;
        const auto cls = u.hate_reply_flag ? labeler::LabelClass::HateSpeech
                         : u.arm == ingest::Arm::Counterspeech
                             ? labeler::LabelClass::Counterspeech
                             : labeler::LabelClass::Other;
        replies_by_class[static_cast<std::size_t>(cls)].push_back(
            corpus.at(*u.event.first_reply_id).body);
    }
    const auto slurs = textadjust::SlurList::load(config.paths.slurs);
    AdjustResult out;
    out.comparison = textadjust::adjusted_toxicity_comparison(replies_by_class, slurs, scorer);

    std::vector<std::string> background;
    for (auto cls : {labeler::LabelClass::HateSpeech, labeler::LabelClass::Other})
        for (const auto& text : replies_by_class[static_cast<std::size_t>(cls)])
            background.push_back(text);
    const auto stopwords = config.paths.stopwords.empty()
                               ? std::unordered_set<std::string>{}
                               : textadjust::load_stopwords(config.paths.stopwords);
    out.keywords = textadjust::tfidf_keywords(
        replies_by_class[static_cast<std::size_t>(labeler::LabelClass::Counterspeech)], background,
        50, stopwords);
    return out;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

std::string file_digest(const std::string& path) { return text_digest(read_file(path)); }

Manifest load_manifest(const std::string& run_dir) {
    Manifest m;
    const auto path = (fs::path(run_dir) / "manifest.json").string();
    if (!fs::exists(path)) return m;
    json j = parse_json(read_file(path), "manifest");
    m.config_digest = j.value("config_digest", "");
    m.seed = j.value("seed", std::uint64_t{0});
    if (auto it = j.find("artifacts"); it != j.end())
        for (const auto& [name, digest] : it->items())
            m.artifacts[name] = digest.get<std::string>();
    return m;
}

void save_manifest(const std::string& run_dir, const Manifest& manifest) {
    json artifacts = json::object();
    for (const auto& [name, digest] : manifest.artifacts) artifacts[name] = digest;
    json j = {{"config_digest", manifest.config_digest},
              {"seed", manifest.seed},
              {"artifacts", artifacts}};
    write_file((fs::path(run_dir) / "manifest.json").string(), j.dump(2) + "\n");
}

namespace {

struct Session {
    const PipelineConfig& config;
    scorers::WarnFn warn;
    std::string digest;
    Manifest manifest;
    std::optional<Services> services;
    std::unique_ptr<ingest::Corpus> corpus;
    std::unique_ptr<ingest::ThreadIndex> index;

    Session(const PipelineConfig& c, const scorers::WarnFn& w)
        : config(c), warn(w), digest(config_digest(c)) {
        fs::create_directories(config.paths.run_dir);
        manifest = load_manifest(config.paths.run_dir);
        // A manifest from another configuration means the run directory holds
        // foreign artifacts; they are ignored and overwritten.
        if (manifest.config_digest != digest) {
            manifest = Manifest{};
            manifest.config_digest = digest;
            manifest.seed = config.seed;
        }
    }

    std::string artifact_path(const std::string& name) const {
        return (fs::path(config.paths.run_dir) / name).string();
    }

    Services& svc() {
        if (!services) services = make_services(config, warn);
        return *services;
    }

    const ingest::Corpus& load_corpus() {
        if (!corpus) {
            if (config.paths.corpus.empty())
                throw ConfigError("paths.corpus is required for this stage");
            corpus = std::make_unique<ingest::Corpus>(
                ingest::Corpus::from_comments(ingest::load_comments_file(config.paths.corpus)));
        }
        return *corpus;
    }

    const ingest::ThreadIndex& load_index() {
        if (!index)
            index = std::make_unique<ingest::ThreadIndex>(
                ingest::build_thread_index(load_corpus(), ingest::OrphanPolicy::Drop, warn));
        return *index;
    }

    void record(const std::string& name, const std::string& content) {
        write_file(artifact_path(name), content);
        manifest.artifacts[name] = text_digest(content);
        save_manifest(config.paths.run_dir, manifest);
    }

    json stamp() const { return {{"config_digest", digest}, {"seed", config.seed}}; }

    void record_json(const std::string& name, json j, int indent = -1) {
        j["meta"] = stamp();
        record(name, j.dump(indent) + "\n");
    }

    // Dependency gate: the artifact must exist, belong to this configuration,
    // and match its recorded digest.
    std::string require(const std::string& name, const char* producer) {
        const auto path = artifact_path(name);
        auto it = manifest.artifacts.find(name);
        if (it == manifest.artifacts.end() || !fs::exists(path))
            throw DependencyError(std::string(stage_name_of(producer)) + " artifacts missing: " +
                                  name + "; run the " + producer + " stage first");
        auto content = read_file(path);
        if (text_digest(content) != it->second)
            throw IntegrityError("artifact " + name +
                                 " does not match its recorded digest; re-run the " +
                                 std::string(producer) + " stage");
        return content;
    }

    static const char* stage_name_of(const char* producer) { return producer; }
};

json effect_to_json(const estimator::EffectEstimate& e) {
    return {{"contrast", e.contrast}, {"ate", e.ate},     {"lo", e.lo}, {"hi", e.hi},
            {"level", e.level},       {"p", json_num(e.p)}, {"n", e.n}};
}

json fit_to_json(const estimator::FitResult& fit) {
    json coefficients = json::array();
    for (const auto& c : fit.coefficients)
        coefficients.push_back({{"name", c.name},
                                {"estimate", c.estimate},
                                {"se", c.se},
                                {"z", json_num(c.z)},
                                {"p", json_num(c.p)}});
    json j = {{"coefficients", coefficients},
              {"random_intercept", fit.random_intercept},
              {"sigma2", fit.sigma2},
              {"log_likelihood", fit.log_likelihood},
              {"converged", fit.converged},
              {"iterations", fit.iterations},
              {"warning", fit.warning}};
    if (std::isfinite(fit.dispersion)) j["dispersion"] = fit.dispersion;
    return j;
}

// ---------------------------------------------------------------------------
// Stage bodies
// ---------------------------------------------------------------------------

void run_label(Session& s) {
    const auto& corpus = s.load_corpus();
    const auto& index = s.load_index();
    auto events =
        ingest::extract_newcomers(index, corpus, s.config.ordinal, std::nullopt, s.warn);
    const auto prompt = read_file(s.config.paths.prompt_template);
    auto store = label_events(events, corpus, s.svc().hub, s.config.ensemble, prompt,
                              s.config.scorers.max_in_flight, s.warn);
    std::ostringstream out;
    write_labels(out, events, store);
    s.record("labels.jsonl", out.str());
    s.record_json("labels_meta.json",
                  {{"ordinal", s.config.ordinal},
                   {"events", events.size()},
                   {"labeled", store.reply.size()},
                   {"resamples_used", store.resamples_used},
                   {"counted_as_other", store.counted_as_other}},
                  2);
}

void run_ingest(Session& s) {
    std::istringstream labels_in(s.require("labels.jsonl", "label"));
    const auto labels = read_labels(labels_in);
    auto build = build_cohort(s.load_corpus(), s.load_index(), labels, s.config, s.svc().hub,
                              s.warn);
    std::ostringstream units_out;
    ingest::write_units(units_out, build.units);
    s.record("cohort.jsonl", units_out.str());

    std::array<int, 3> arm_counts{};
    int hate = 0;
    for (const auto& u : build.units) {
        ++arm_counts[static_cast<std::size_t>(u.arm)];
        hate += u.hate_reply_flag ? 1 : 0;
    }
    s.record_json("ingest_meta.json",
                  {{"events_total", build.events_total},
                   {"events_scored", build.events_scored},
                   {"units", build.units.size()},
                   {"dropped_censoring", build.dropped_censoring},
                   {"p90_return_seconds", build.p90_return},
                   {"clusters", build.clusters},
                   {"arm_counts", arm_counts},
                   {"hate_replies", hate}},
                  2);
}

std::vector<ingest::UnitRecord> load_cohort(Session& s, const char* consumer) {
    (void)consumer;
    std::istringstream in(s.require("cohort.jsonl", "ingest"));
    return ingest::read_units(in);
}

void run_match(Session& s) {
    const auto units = load_cohort(s, "match");
    auto matched = match_cohort(units, s.config, s.warn);

    json runs = json::array();
    for (const auto& run : matched.runs)
        runs.push_back({{"starting_pair", matcher::starting_pair_name(run.starting_pair)},
                        {"triplets", run.triplets.triplets.size()},
                        {"total_cost", run.triplets.total_cost},
                        {"improvement_passes", run.iterations},
                        {"pre_pass", run.balance.pre_pass_count},
                        {"post_pass", run.balance.post_pass_count},
                        {"cells", run.balance.cells.size()}});
    json triplets = json::array();
    for (const auto& t : matched.best_run().triplets.triplets)
        triplets.push_back({t[0], t[1], t[2]});
    json pca = json::array();
    for (Eigen::Index r = 0; r < matched.pca_scores.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < matched.pca_scores.cols(); ++c)
            row.push_back(matched.pca_scores(r, c));
        pca.push_back(std::move(row));
    }
    s.record_json("match.json", {{"metric", represent::metric_name(s.config.metric)},
                                 {"runs", runs},
                                 {"best", matched.best},
                                 {"arm_units", matched.arm_units},
                                 {"best_triplets", triplets},
                                 {"pca_scores", pca}});
}

struct MatchArtifact {
    std::array<std::vector<int>, 3> arm_units;
    std::vector<std::array<int, 3>> triplets;
    Eigen::MatrixXd pca_scores;
    json raw;
};

MatchArtifact load_match(Session& s) {
    MatchArtifact out;
    out.raw = parse_json(s.require("match.json", "match"), "match.json");
    out.arm_units = out.raw.at("arm_units").get<std::array<std::vector<int>, 3>>();
    for (const auto& t : out.raw.at("best_triplets"))
        out.triplets.push_back({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>()});
    const auto& pca = out.raw.at("pca_scores");
    const auto rows = static_cast<Eigen::Index>(pca.size());
    const auto cols = rows > 0 ? static_cast<Eigen::Index>(pca.at(0).size()) : 0;
    out.pca_scores.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            out.pca_scores(r, c) = pca.at(static_cast<std::size_t>(r))
                                       .at(static_cast<std::size_t>(c))
                                       .get<double>();
    return out;
}

void run_balance(Session& s) {
    const auto units = load_cohort(s, "balance");
    auto match = load_match(s);
    const auto report = balance::balance_report(units, match.arm_units, match.triplets,
                                                s.config.smd_threshold, &match.pca_scores);
    json cells = json::array();
    for (const auto& cell : report.cells)
        cells.push_back({{"covariate", cell.covariate},
                         {"arm_a", cell.arm_a},
                         {"arm_b", cell.arm_b},
                         {"pre", json_num(cell.pre)},
                         {"post", json_num(cell.post)}});
    json cosine = json::array();
    for (double v : report.matched_cosine) cosine.push_back(json_num(v));
    s.record_json("balance.json", {{"threshold", report.threshold},
                                   {"cells", cells},
                                   {"matched_cosine", cosine},
                                   {"pre_pass", report.pre_pass_count},
                                   {"post_pass", report.post_pass_count}});
    s.record("balance.txt", balance::format_report(report));
}

void run_estimate(Session& s) {
    const auto units = load_cohort(s, "estimate");
    auto match_artifact = load_match(s);
    MatchedCohort matched;
    matched.arm_units = match_artifact.arm_units;
    matched.pca_scores = std::move(match_artifact.pca_scores);
    matcher::MatchRun run;
    run.triplets.triplets = std::move(match_artifact.triplets);
    matched.runs.push_back(std::move(run));
    matched.best = 0;

    auto effects = estimate_cohort(units, matched, s.config);
    json subsets = json::object();
    subsets["nontoxic_only"] = effects.nontoxic_only ? effect_to_json(*effects.nontoxic_only)
                                                     : json{{"error", effects.nontoxic_error}};
    subsets["toxic_only"] = effects.toxic_only ? effect_to_json(*effects.toxic_only)
                                               : json{{"error", effects.toxic_error}};
    s.record_json("effects.json", {{"outcome", effects.outcome},
                                   {"n_triplets", effects.n_triplets},
                                   {"fit", fit_to_json(effects.fit)},
                                   {"counterspeech", effect_to_json(effects.counterspeech)},
                                   {"hate_reply", effect_to_json(effects.hate_reply)},
                                   {"subsets", subsets}},
                  2);
}

void run_followups(Session& s) {
    const auto units = load_cohort(s, "followups");
    const auto obs = collect_reply_obs(units, s.load_corpus(), s.load_index(), s.svc().hub);
    const auto curve =
        estimator::toxic_followup_curve(obs, s.config.followup_bins, s.config.toxicity_threshold);
    json classes = json::object();
    for (int c = 0; c < labeler::kNumClasses; ++c) {
        json bins = json::array();
        for (const auto& bin : curve.per_class[static_cast<std::size_t>(c)])
            bins.push_back({{"lo", bin.lo},
                            {"hi", bin.hi},
                            {"n", bin.n},
                            {"p", json_num(bin.p)},
                            {"se", json_num(bin.se)},
                            {"empty", bin.empty}});
        classes[labeler::label_name(static_cast<labeler::LabelClass>(c))] = std::move(bins);
    }
    s.record_json("followups.json",
                  {{"threshold", curve.threshold}, {"replies", obs.size()}, {"classes", classes}},
                  2);
}

void run_adjust(Session& s) {
    const auto units = load_cohort(s, "adjust");
    auto result = adjust_cohort(units, s.load_corpus(), s.config, *s.svc().toxicity);
    json per_class = json::object();
    for (int c = 0; c < labeler::kNumClasses; ++c) {
        const auto& t = result.comparison.per_class[static_cast<std::size_t>(c)];
        per_class[labeler::label_name(static_cast<labeler::LabelClass>(c))] = {
            {"n", t.n},
            {"raw_mean", json_num(t.raw_mean)},
            {"raw_se", json_num(t.raw_se)},
            {"adjusted_mean", json_num(t.adjusted_mean)},
            {"adjusted_se", json_num(t.adjusted_se)},
            {"raw_pct_vs_other",
             json_num(result.comparison.raw_pct_vs_other[static_cast<std::size_t>(c)])},
            {"adjusted_pct_vs_other",
             json_num(result.comparison.adjusted_pct_vs_other[static_cast<std::size_t>(c)])}};
    }
    json keywords = json::array();
    for (const auto& k : result.keywords)
        keywords.push_back({{"term", k.term}, {"score", k.score}});
    s.record_json("adjust.json", {{"per_class", per_class}, {"keywords", keywords}}, 2);
}

}  // namespace

void run(const PipelineConfig& config, Stage stage, const scorers::WarnFn& warn) {
    config.validate();
    Session session(config, warn);
    switch (stage) {
        case Stage::Label: run_label(session); break;
        case Stage::Ingest: run_ingest(session); break;
        case Stage::Match: run_match(session); break;
        case Stage::Balance: run_balance(session); break;
        case Stage::Estimate: run_estimate(session); break;
        case Stage::Followups: run_followups(session); break;
        case Stage::Adjust: run_adjust(session); break;
        case Stage::All:
            run_label(session);
            run_ingest(session);
            run_match(session);
            run_balance(session);
            run_estimate(session);
            run_followups(session);
            run_adjust(session);
            emit_report(config, ReportFormat::Both, warn);
            break;
    }
}

// ---------------------------------------------------------------------------
// Robustness sweep
// ---------------------------------------------------------------------------

SweepReport robustness_sweep(const PipelineConfig& config, SweepAxis axis,
                             const scorers::WarnFn& warn) {
    config.validate();
    Session session(config, warn);
    std::istringstream labels_in(session.require("labels.jsonl", "label"));
    const auto base_labels = read_labels(labels_in);
    const auto& corpus = session.load_corpus();
    const auto& index = session.load_index();
    const auto prompt = axis == SweepAxis::Ordinal
                            ? read_file(config.paths.prompt_template)
                            : std::string();

    struct Point {
        std::string setting;
        PipelineConfig config;
    };
    std::vector<Point> points;
    auto variant = [&](const std::string& setting, auto&& mutate) {
        PipelineConfig c = config;
        mutate(c);
        points.push_back({setting, std::move(c)});
    };
    switch (axis) {
        case SweepAxis::Threshold:
            for (double t : {1.0, 0.8, 0.6})
                variant(json(t).dump(), [t](PipelineConfig& c) {
                    c.cs_threshold = t;
                    c.hs_threshold = t;
                });
            break;
        case SweepAxis::MatchingType:
            for (auto m :
                 {represent::Metric::PropensityEuclidean, represent::Metric::MahalanobisOnPca})
                variant(represent::metric_name(m), [m](PipelineConfig& c) { c.metric = m; });
            break;
        case SweepAxis::MinPairs:
            for (int n : {0, 10, 100})
                variant(std::to_string(n), [n](PipelineConfig& c) { c.min_pairs = n; });
            break;
        case SweepAxis::Outcome:
            for (const char* o : {"binary", "count"})
                variant(o, [o](PipelineConfig& c) { c.outcome = o; });
            break;
        case SweepAxis::Ordinal:
            for (int n : {1, 2, 3})
                variant(std::to_string(n), [n](PipelineConfig& c) { c.ordinal = n; });
            break;
    }

    SweepReport report;
    report.axis = axis;
    for (const auto& point : points) {
        SweepPoint result;
        result.setting = point.setting;
        try {
            const LabelStore* labels = &base_labels;
            LabelStore relabeled;
            if (point.config.ordinal != config.ordinal) {
                auto events = ingest::extract_newcomers(index, corpus, point.config.ordinal,
                                                        std::nullopt, warn);
                relabeled = label_events(events, corpus, session.svc().hub, config.ensemble,
                                         prompt, config.scorers.max_in_flight, warn);
                labels = &relabeled;
            }
            auto build =
                build_cohort(corpus, index, *labels, point.config, session.svc().hub, warn);
            auto matched = match_cohort(build.units, point.config, warn);
            auto effects = estimate_cohort(build.units, matched, point.config);
            result.ok = true;
            result.counterspeech = effects.counterspeech;
            result.hate_reply = effects.hate_reply;
            result.n_triplets = effects.n_triplets;
        } catch (const std::exception& e) {
            result.error = e.what();
        }
        report.points.push_back(std::move(result));
    }

    json points_json = json::array();
    for (const auto& p : report.points) {
        json j = {{"setting", p.setting}, {"ok", p.ok}};
        if (p.ok) {
            j["counterspeech"] = effect_to_json(p.counterspeech);
            j["hate_reply"] = effect_to_json(p.hate_reply);
            j["n_triplets"] = p.n_triplets;
        } else {
            j["error"] = p.error;
        }
        points_json.push_back(std::move(j));
    }
    session.record_json(std::string("sweep_") + sweep_axis_name(axis) + ".json",
                        {{"axis", sweep_axis_name(axis)}, {"points", points_json}}, 2);
    return report;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string render_table(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> widths;
    for (const auto& row : rows) {
        if (widths.size() < row.size()) widths.resize(row.size(), 0);
        for (std::size_t c = 0; c < row.size(); ++c)
            widths[c] = std::max(widths[c], row[c].size());
    }
    std::ostringstream out;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            if (c) out << "  ";
            out << rows[r][c];
            if (c + 1 < rows[r].size())
                out << std::string(widths[c] - rows[r][c].size(), ' ');
        }
        out << "\n";
        if (r == 0) {
            std::size_t total = 0;
            for (std::size_t c = 0; c < widths.size(); ++c)
                total += widths[c] + (c ? 2 : 0);
            out << std::string(total, '-') << "\n";
        }
    }
    return out.str();
}

std::string effect_line(const json& e) {
    return fmt("%.4f", e.value("ate", 0.0)) + " [" + fmt("%.4f", e.value("lo", 0.0)) + ", " +
           fmt("%.4f", e.value("hi", 0.0)) + "]";
}

struct GoldEntry {
    std::optional<labeler::LabelClass> newcomer, reply;
};

std::map<std::string, GoldEntry> load_gold(const std::string& path) {
    std::map<std::string, GoldEntry> out;
    std::ifstream in(path);
    if (!in) throw InputError("cannot open gold labels: " + path);
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError("malformed gold record", line_no);
        GoldEntry entry;
        if (auto it = j.find("newcomer"); it != j.end())
            entry.newcomer = labeler::label_from_name(it->get<std::string>());
        if (auto it = j.find("reply"); it != j.end())
            entry.reply = labeler::label_from_name(it->get<std::string>());
        out[j.at("reply_id").get<std::string>()] = entry;
    }
    return out;
}

}  // namespace

void emit_report(const PipelineConfig& config, ReportFormat format, const scorers::WarnFn& warn) {
    config.validate();
    Session session(config, warn);
    const auto& manifest = session.manifest;

    auto load_if_present = [&](const std::string& name) -> std::optional<json> {
        auto it = manifest.artifacts.find(name);
        const auto path = session.artifact_path(name);
        if (it == manifest.artifacts.end() || !fs::exists(path)) return std::nullopt;
        auto content = read_file(path);
        if (text_digest(content) != it->second) return std::nullopt;
        return parse_json(content, name);
    };

    std::vector<std::string> missing;
    auto effects = load_if_present("effects.json");
    auto balance_art = load_if_present("balance.json");
    auto followups = load_if_present("followups.json");
    auto adjust = load_if_present("adjust.json");
    auto sweep_threshold = load_if_present("sweep_threshold.json");
    auto match = load_if_present("match.json");
    for (const auto& [name, artifact] :
         std::initializer_list<std::pair<const char*, const std::optional<json>*>>{
             {"effects.json", &effects},
             {"balance.json", &balance_art},
             {"followups.json", &followups},
             {"adjust.json", &adjust},
             {"match.json", &match}})
        if (!*artifact) missing.push_back(name);

    json report;
    report["missing"] = missing;
    std::ostringstream text;
    text << "pipeline report (config " << session.digest << ", seed " << config.seed << ")\n\n";

    // Precision by confidence threshold, with the matched-triplet counts the
    // thresholds produce.
    {
        const bool have_gold =
            !config.paths.gold_labels.empty() && manifest.artifacts.count("labels.jsonl") > 0;
        std::vector<labeler::ConfidenceRecord> records;
        std::vector<labeler::LabelClass> gold_cs, gold_hs;
        if (have_gold) {
            std::istringstream labels_in(session.require("labels.jsonl", "label"));
            const auto labels = read_labels(labels_in);
            const auto gold = load_gold(config.paths.gold_labels);
            for (const auto& [reply_id, entry] : gold) {
                auto it = labels.reply.find(reply_id);
                if (it == labels.reply.end() || !entry.reply) continue;
                records.push_back(it->second);
                gold_cs.push_back(*entry.reply);
            }
            gold_hs = gold_cs;
        }
        json table = json::array();
        std::vector<std::vector<std::string>> rows
            {{"confidence", "cs precision", "hs precision", "matched triplets"}};
        for (double threshold : {1.0, 0.8, 0.6}) {
            json row = {{"confidence", threshold}};
            std::vector<std::string> cells{fmt("%.1f", threshold), "-", "-", "-"};
            if (have_gold && !records.empty()) {
                const auto cs = labeler::precision_at_threshold(
                    records, gold_cs, labeler::LabelClass::Counterspeech, threshold);
                const auto hs = labeler::precision_at_threshold(
                    records, gold_hs, labeler::LabelClass::HateSpeech, threshold);
                auto cell = [&](const labeler::PrecisionResult& r, json& out_row,
                                const char* key) -> std::string {
                    if (!r.precision) {
                        out_row[key] = nullptr;
                        return "-";
                    }
                    const double se = r.n_predicted > 0
                                          ? std::sqrt(*r.precision * (1.0 - *r.precision) /
                                                      static_cast<double>(r.n_predicted))
                                          : 0.0;
                    out_row[key] = {{"precision", *r.precision},
                                    {"se", se},
                                    {"n_predicted", r.n_predicted}};
                    return fmt("%.2f", *r.precision) + " +/- " + fmt("%.2f", se);
                };
                cells[1] = cell(cs, row, "counterspeech");
                cells[2] = cell(hs, row, "hate");
            }
            std::optional<int> triplets;
            if (sweep_threshold)
                for (const auto& p : sweep_threshold->at("points"))
                    if (p.value("setting", "") == json(threshold).dump() && p.value("ok", false))
                        triplets = p.value("n_triplets", 0);
            if (!triplets && match && std::abs(threshold - config.cs_threshold) < 1e-9)
                triplets = static_cast<int>(match->at("best_triplets").size());
            if (triplets) {
                row["triplets"] = *triplets;
                cells[3] = std::to_string(*triplets);
            } else {
                row["triplets"] = nullptr;
            }
            table.push_back(std::move(row));
            rows.push_back(std::move(cells));
        }
        report["precision_by_confidence"] = table;
        text << "precision by confidence\n" << render_table(rows) << "\n";
    }

    if (effects) {
        report["effects"] = *effects;
        std::vector<std::vector<std::string>> rows{{"contrast", "estimate", "p"}};
        for (const char* key : {"counterspeech", "hate_reply"}) {
            const auto& e = effects->at(key);
            rows.push_back({e.value("contrast", key), effect_line(e),
                            e.at("p").is_number() ? fmt("%.4f", e.at("p").get<double>()) : "-"});
        }
        for (const char* column : {"reply_toxicity", "toxicity_x_counterspeech", "score"})
            for (const auto& c : effects->at("fit").at("coefficients"))
                if (c.value("name", "") == column) {
                    const double estimate = c.value("estimate", 0.0);
                    const double se = c.value("se", 0.0);
                    const double zq = stats::normal_quantile(0.975);
                    json wald = {{"ate", estimate},
                                 {"lo", estimate - zq * se},
                                 {"hi", estimate + zq * se}};
                    rows.push_back({std::string(column) + " (coefficient)", effect_line(wald),
                                    c.at("p").is_number() ? fmt("%.4f", c.at("p").get<double>())
                                                          : "-"});
                }
        const auto& subsets = effects->at("subsets");
        for (const char* key : {"nontoxic_only", "toxic_only"}) {
            const auto& subset = subsets.at(key);
            if (subset.contains("error"))
                rows.push_back({key, subset.value("error", ""), "-"});
            else
                rows.push_back({subset.value("contrast", key), effect_line(subset),
                                subset.at("p").is_number()
                                    ? fmt("%.4f", subset.at("p").get<double>())
                                    : "-"});
        }
        text << "treatment effects (" << effects->value("outcome", "binary") << " outcome, "
             << effects->value("n_triplets", 0) << " triplets)\n"
             << render_table(rows) << "\n";
    }

    if (balance_art) {
        report["balance"] = {{"pre_pass", balance_art->value("pre_pass", 0)},
                             {"post_pass", balance_art->value("post_pass", 0)},
                             {"cells", balance_art->at("cells").size()},
                             {"threshold", balance_art->value("threshold", 0.1)}};
        text << "covariate balance: " << balance_art->value("post_pass", 0) << "/"
             << balance_art->at("cells").size() << " cells under "
             << fmt("%.2f", balance_art->value("threshold", 0.1)) << " post-matching (pre: "
             << balance_art->value("pre_pass", 0) << ")\n\n";
    }

    if (adjust) {
        report["toxicity_by_class"] = *adjust;
        std::vector<std::vector<std::string>> rows{
            {"class", "n", "raw mean", "adjusted mean", "raw % vs other", "adj % vs other"}};
        for (int c = 0; c < labeler::kNumClasses; ++c) {
            const char* name = labeler::label_name(static_cast<labeler::LabelClass>(c));
            const auto& t = adjust->at("per_class").at(name);
            auto pct = [&](const char* key) {
                const auto& v = t.at(key);
                return v.is_number() ? fmt("%.0f%%", v.get<double>()) : std::string("-");
            };
            rows.push_back({name, std::to_string(t.value("n", 0)),
                            fmt("%.4f", num_from_json(t.at("raw_mean"))),
                            fmt("%.4f", num_from_json(t.at("adjusted_mean"))),
                            pct("raw_pct_vs_other"), pct("adjusted_pct_vs_other")});
        }
        text << "mean reply toxicity\n" << render_table(rows) << "\n";
    }

    if (followups) {
        report["followup_curve"] = *followups;
        std::vector<std::vector<std::string>> rows{{"reply toxicity", "class", "P(toxic follow-up)",
                                                    "se", "follow-ups"}};
        for (int c = 0; c < labeler::kNumClasses; ++c) {
            const char* name = labeler::label_name(static_cast<labeler::LabelClass>(c));
            for (const auto& bin : followups->at("classes").at(name)) {
                if (bin.value("empty", true)) continue;
                rows.push_back({fmt("%.2f", bin.value("lo", 0.0)) + "-" +
                                    fmt("%.2f", bin.value("hi", 0.0)),
                                name, fmt("%.3f", num_from_json(bin.at("p"))),
                                fmt("%.3f", num_from_json(bin.at("se"))),
                                std::to_string(bin.value("n", 0))});
            }
        }
        text << "toxic follow-up probability (threshold "
             << fmt("%.2f", followups->value("threshold", 0.7)) << ")\n"
             << render_table(rows) << "\n";
    }

    for (SweepAxis axis : {SweepAxis::Threshold, SweepAxis::MatchingType, SweepAxis::MinPairs,
                           SweepAxis::Outcome, SweepAxis::Ordinal}) {
        const std::string name = std::string("sweep_") + sweep_axis_name(axis) + ".json";
        auto sweep = load_if_present(name);
        if (!sweep) continue;
        report["sweeps"][sweep_axis_name(axis)] = *sweep;
        std::vector<std::vector<std::string>> rows{
            {"setting", "counterspeech", "hate reply", "triplets"}};
        for (const auto& p : sweep->at("points")) {
            if (p.value("ok", false))
                rows.push_back({p.value("setting", ""), effect_line(p.at("counterspeech")),
                                effect_line(p.at("hate_reply")),
                                std::to_string(p.value("n_triplets", 0))});
            else
                rows.push_back({p.value("setting", ""), p.value("error", ""), "", ""});
        }
        text << "robustness sweep: " << sweep_axis_name(axis) << "\n"
             << render_table(rows) << "\n";
    }

    if (!missing.empty()) {
        text << "missing artifacts:";
        for (const auto& name : missing) text << " " << name;
        text << "\n";
    }

    if (format == ReportFormat::Structured || format == ReportFormat::Both)
        session.record_json("report.json", report, 2);
    if (format == ReportFormat::PlainTable || format == ReportFormat::Both)
        session.record("report.txt", text.str());
}

}  // namespace replyfx::pipeline

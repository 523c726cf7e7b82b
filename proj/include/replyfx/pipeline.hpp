#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "replyfx/estimator.hpp"
#include "replyfx/ingest.hpp"
#include "replyfx/labeler.hpp"
#include "replyfx/matcher.hpp"
#include "replyfx/represent.hpp"
#include "replyfx/scorers.hpp"
#include "replyfx/synth.hpp"
#include "replyfx/textadjust.hpp"

namespace replyfx::pipeline {

// Defaults mirror the headline analysis configuration: 0.8 label confidence,
// 0.7 toxicity cutoff, 0.1 SMD target, VIF limit 5, and clusters kept only
// when they hold more than 10 counterspeech units.
struct PipelineConfig {
    struct Paths {
        std::string corpus;
        std::string gold_labels; // optional per-item gold classes for evaluation
        std::string slurs = "assets/test_slurs.txt";
        std::string stopwords = "assets/stopwords.txt";
        std::string prompt_template = "assets/prompt_template.txt";
        std::string cache;           // optional scorer cache file
        std::string run_dir = "run"; // artifacts land here
    } paths;

    int ordinal = 1;
    int min_pairs = 10; // clusters need strictly more counterspeech units

    double cs_threshold = 0.8; // allowed values: 0.6, 0.8, 1.0
    double hs_threshold = 0.8;
    double toxicity_threshold = 0.7;
    double smd_threshold = 0.1;
    double vif_threshold = 5.0;

    labeler::EnsembleConfig ensemble;

    represent::Metric metric = represent::Metric::PropensityEuclidean;
    int pca_components = 5; // balance cells always report this many components
    std::vector<matcher::StartingPair> starting_pairs = {
        matcher::StartingPair::AB, matcher::StartingPair::AC, matcher::StartingPair::BC};
    std::optional<double> caliper;

    std::string outcome = "binary"; // binary | count
    int n_boot = 1000;
    int min_triplets = 50;
    bool random_intercept = true;

    int followup_bins = 5;

    struct Scorers {
        bool stub = true; // tag-driven local scorers instead of HTTP services
        int embedding_dim = 768;
        int max_in_flight = 4;
        scorers::ScorerConfig toxicity, embedding, sentiment, generator;
    } scorers;

    std::uint64_t seed = 1;

    void validate() const; // throws ConfigError
};

// Canonical JSON round-trip; unknown keys are rejected so typos fail loudly.
PipelineConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const PipelineConfig& config);
PipelineConfig load_config_file(const std::string& path);

// Digest of the canonical serialization; stamped onto every artifact.
std::string config_digest(const PipelineConfig& config);

synth::SynthSpec synth_spec_from_json_text(const std::string& text);
std::string synth_spec_to_json_text(const synth::SynthSpec& spec);
std::string ground_truth_to_json_text(const synth::GroundTruth& truth);

enum class Stage { Label, Ingest, Match, Balance, Estimate, Followups, Adjust, All };
const char* stage_name(Stage s);
std::optional<Stage> stage_from_name(std::string_view name);

// The four scoring services as configured (stubs or HTTP), plus the shared
// hub. The raw toxicity scorer stays visible for adjusted re-scoring.
struct Services {
    std::shared_ptr<scorers::ToxicityScorer> toxicity;
    std::shared_ptr<scorers::EmbeddingScorer> embedding;
    std::shared_ptr<scorers::SentimentScorer> sentiment;
    std::shared_ptr<scorers::TextGenerator> generator;
    std::shared_ptr<scorers::ScoreCache> cache;
    scorers::ScorerHub hub;
};
Services make_services(const PipelineConfig& config,
                       const scorers::WarnFn& warn = scorers::stderr_warn());

// Ensemble labels for every newcomer event that has a first reply, keyed by
// the newcomer comment id (newcomer role) and the reply id (reply role).
struct LabelStore {
    std::unordered_map<std::string, labeler::ConfidenceRecord> newcomer;
    std::unordered_map<std::string, labeler::ConfidenceRecord> reply;
    int resamples_used = 0;
    int counted_as_other = 0;
};

LabelStore label_events(const std::vector<ingest::NewcomerEvent>& events,
                        const ingest::Corpus& corpus, scorers::ScorerHub& hub,
                        const labeler::EnsembleConfig& config, const std::string& prompt_template,
                        int max_in_flight = 1,
                        const scorers::WarnFn& warn = scorers::stderr_warn());

// Line-delimited records in event order (schema in docs/formats.md).
void write_labels(std::ostream& out, const std::vector<ingest::NewcomerEvent>& events,
                  const LabelStore& store);
LabelStore read_labels(std::istream& in);

struct CohortBuild {
    std::vector<ingest::UnitRecord> units;
    std::vector<std::string> clusters; // retained, sorted
    std::int64_t p90_return = 0;
    int events_total = 0;   // extracted at the configured ordinal
    int events_scored = 0;  // in retained clusters, before censoring
    int dropped_censoring = 0;
};

// Arms, covariates, outcomes, cluster filtering, and censoring in one pass.
// Covariates are only scored for events inside retained clusters.
CohortBuild build_cohort(const ingest::Corpus& corpus, const ingest::ThreadIndex& index,
                         const LabelStore& labels, const PipelineConfig& config,
                         scorers::ScorerHub& hub,
                         const scorers::WarnFn& warn = scorers::stderr_warn());

struct MatchedCohort {
    std::array<std::vector<int>, 3> arm_units; // positions into the unit vector
    std::vector<matcher::MatchRun> runs;       // one per starting pair, balance attached
    std::size_t best = 0;
    Eigen::MatrixXd pca_scores; // units x pca_components, for balance cells

    const matcher::MatchRun& best_run() const { return runs[best]; }
};

// Representation, distances, and one triplet match per starting pair; the
// winner is chosen by post-match balance.
MatchedCohort match_cohort(const std::vector<ingest::UnitRecord>& units,
                           const PipelineConfig& config,
                           const scorers::WarnFn& warn = scorers::stderr_warn());

struct EffectsResult {
    std::string outcome;
    estimator::FitResult fit;
    estimator::EffectEstimate counterspeech;
    estimator::EffectEstimate hate_reply;
    int n_triplets = 0;
    // Counterspeech-toxicity subsets; the error string is set when a subset
    // cannot be estimated (usually too few triplets).
    std::optional<estimator::EffectEstimate> nontoxic_only, toxic_only;
    std::string nontoxic_error, toxic_error;
};

// Headline estimate plus both toxicity subsets. For the count outcome the
// effect fields carry log rate ratios with Wald intervals instead of
// probability-scale differences.
EffectsResult estimate_cohort(const std::vector<ingest::UnitRecord>& units,
                              const MatchedCohort& match, const PipelineConfig& config);

// One observation per replied unit: reply class, reply toxicity, and the
// toxicity of every direct follow-up to that reply.
std::vector<estimator::ReplyObs> collect_reply_obs(const std::vector<ingest::UnitRecord>& units,
                                                   const ingest::Corpus& corpus,
                                                   const ingest::ThreadIndex& index,
                                                   scorers::ScorerHub& hub);

struct AdjustResult {
    textadjust::ToxicityComparison comparison;
    std::vector<textadjust::Keyword> keywords; // counterspeech-characteristic terms
};

// Quote-stripped, slur-replaced re-scoring of counterspeech replies, with the
// TF-IDF terms that distinguish counterspeech from the other reply classes.
AdjustResult adjust_cohort(const std::vector<ingest::UnitRecord>& units,
                           const ingest::Corpus& corpus, const PipelineConfig& config,
                           scorers::ToxicityScorer& scorer);

// Executes one stage (or all of them in dependency order), writing artifacts
// into run_dir and updating the manifest. Individual stages require their
// upstream artifacts and throw DependencyError naming the missing stage.
void run(const PipelineConfig& config, Stage stage,
         const scorers::WarnFn& warn = scorers::stderr_warn());

enum class SweepAxis { Threshold, MatchingType, MinPairs, Outcome, Ordinal };
const char* sweep_axis_name(SweepAxis a);
std::optional<SweepAxis> sweep_axis_from_name(std::string_view name);

struct SweepPoint {
    std::string setting;
    bool ok = false;
    std::string error; // set when the point could not be estimated
    estimator::EffectEstimate counterspeech, hate_reply;
    int n_triplets = 0;
};

struct SweepReport {
    SweepAxis axis = SweepAxis::Threshold;
    std::vector<SweepPoint> points;
};

// Re-runs cohort -> match -> estimate per sweep point, reusing the corpus and
// the labeling artifacts where the point leaves them valid. Failures are
// recorded per point instead of aborting the sweep.
SweepReport robustness_sweep(const PipelineConfig& config, SweepAxis axis,
                             const scorers::WarnFn& warn = scorers::stderr_warn());

enum class ReportFormat { Structured, PlainTable, Both };

// Renders whatever artifacts exist in run_dir into report.json / report.txt:
// the precision-by-confidence table, the effect panel, the mean-toxicity
// comparison, and the follow-up curve. Missing artifacts are listed in the
// report manifest rather than failing.
void emit_report(const PipelineConfig& config, ReportFormat format,
                 const scorers::WarnFn& warn = scorers::stderr_warn());

// Artifact bookkeeping: name -> content digest, stamped with the producing
// configuration. Stages refuse artifacts from a different configuration.
struct Manifest {
    std::string config_digest;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> artifacts;
};

Manifest load_manifest(const std::string& run_dir); // empty manifest when absent
void save_manifest(const std::string& run_dir, const Manifest& manifest);
std::string file_digest(const std::string& path); // fnv1a64 hex of the bytes

}  // namespace replyfx::pipeline

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "replyfx/ingest.hpp"

namespace replyfx::synth {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

// Generator settings for a synthetic comment corpus with known ground truth.
// The same settings drive two outputs that must agree: generate_cohort builds
// unit records directly from the internal plan, and generate_threads renders
// that plan as raw comments which the ingestion stages reproduce field for
// field.
struct SynthSpec {
    int n_clusters = 8;
    int units_per_cluster = 300;
    std::uint64_t seed = 0; // must be set explicitly; 0 is rejected as unset

    double sigma2 = 0.25; // cluster intercept variance

    // First-reply class mixture per newcomer. The no-reply pool is kept
    // several times the counterspeech arm so matching without replacement has
    // candidates to draw from.
    double p_no_reply = 0.50;
    double p_counterspeech = 0.13;
    double p_hate_reply = 0.185;
    double p_other_reply = 0.185;

    // Confounding strength: a latent trait raises counterspeech odds, lowers
    // no-reply odds, and leaks into sentiment, one embedding coordinate, and
    // prior activity, all of which also drive the outcome below.
    double confounder_to_treatment = 0.26;

    // Probability-scale effects to plant. The counterspeech target is the mean
    // return-probability shift over counterspeech-arm units; the hate target
    // is the shift over hate-replied units.
    double ate_counterspeech = -0.02;
    double ate_hate_reply = 0.03;

    // Outcome model: logit(base_rate) plus centered observed-channel terms.
    double base_rate = 0.35;
    double outcome_sentiment = 0.8;
    double outcome_embedding = 0.4;
    double outcome_prior = 0.35;
    double outcome_toxicity = -0.3;

    // Reply toxicity process.
    double cs_toxic_fraction = 0.25;
    Range cs_nontoxic_range{0.05, 0.55};
    Range cs_toxic_range{0.75, 0.95};
    Range hate_range{0.75, 0.98};
    Range other_range{0.10, 0.60};

    // Follow-up process: replies attract Poisson(followup_rate) follow-ups
    // whose toxicity odds rise with the parent reply's toxicity.
    double followup_rate = 0.8;
    double followup_toxic_base = 0.15;
    double followup_toxic_slope = 0.6;
    Range followup_toxic_range{0.75, 0.97};
    Range followup_clean_range{0.05, 0.50};

    // When set, the counterspeech effect applies only to units whose reply
    // toxicity is at or below nontoxic_cutoff; toxic counterspeech has none.
    bool effect_only_nontoxic = false;
    double nontoxic_cutoff = 0.7;

    void validate() const; // throws InputError on bad sizes or probabilities
    std::string cluster_name(int g) const;
    std::vector<std::string> cluster_names() const;
};

// Solved and realized quantities alongside the planted targets.
struct GroundTruth {
    double delta_counterspeech = 0.0; // logit shift achieving ate_counterspeech
    double delta_hate = 0.0;          // logit shift achieving ate_hate_reply
    double ate_counterspeech = 0.0;
    double ate_hate_reply = 0.0;
    double sigma2 = 0.0;
    // Unadjusted outcome-rate gap (counterspeech minus no-reply) in the draw;
    // confounding pushes this away from the planted effect.
    double naive_counterspeech = 0.0;
    std::array<int, 3> arm_counts{}; // no reply, counterspeech, other reply
    int hate_reply_count = 0;
    std::vector<std::string> clusters;
};

struct Cohort {
    std::vector<ingest::UnitRecord> units; // ordered by (author, subreddit)
    GroundTruth truth;
};

Cohort generate_cohort(const SynthSpec& spec);
std::vector<ingest::Comment> generate_threads(const SynthSpec& spec);

} // namespace replyfx::synth

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "replyfx/errors.hpp"
#include "replyfx/labeler.hpp"
#include "replyfx/scorers.hpp"

namespace replyfx::ingest {

struct Comment {
    std::string id;
    std::string author;
    std::string subreddit;
    std::string body;
    int score = 0;
    std::int64_t created_utc = 0;
    std::optional<std::string> parent_id; // absent iff is_submission
    std::string link_id;                  // thread root id
    bool is_submission = false;
};

// Comment list plus the id lookup every stage needs.
struct Corpus {
    std::vector<Comment> comments;
    std::unordered_map<std::string, std::size_t> by_id;

    static Corpus from_comments(std::vector<Comment> comments);
    const Comment* find(const std::string& id) const;
    const Comment& at(const std::string& id) const;
};

struct ThreadIndex {
    // Reply lists ordered by (created_utc, id).
    std::unordered_map<std::string, std::vector<std::string>> children;
    std::unordered_map<std::string, std::string> root;
    // Submissions have depth 0; a top-level comment has depth 1.
    std::unordered_map<std::string, int> depth;
    std::vector<std::string> dropped_orphans;
};

enum class OrphanPolicy { Drop, Strict };

struct NewcomerEvent {
    std::string comment_id;
    std::string author;
    std::string subreddit;
    int ordinal = 1; // 1 = first comment by this author in this subreddit
    std::optional<std::string> first_reply_id;
    std::int64_t created_utc = 0; // copied from the comment for censoring math
};

struct CovariateVector {
    std::vector<double> embedding; // unit-normalized
    int nest_level = 1;
    double sentiment = 0.0;
    double score = 0.0;
    double relative_timestamp = 0.0; // position within the subreddit's lifetime
    // Thread activity strictly before the event timestamp.
    double thread_comments = 0.0;
    double thread_unique_commenters = 0.0;
    double thread_toplevel_comments = 0.0;
    double thread_unique_toplevel_commenters = 0.0;
    // Author history strictly before the event timestamp.
    double prior_comments = 0.0;
    double prior_submissions = 0.0;
    double prior_unique_threads = 0.0;
    double prior_net_score = 0.0;

    static const std::vector<std::string>& scalar_names(); // the 12 non-embedding confounders
    std::vector<double> scalars() const;                   // same order as scalar_names()
};

enum class Arm : int { NoReply = 0, Counterspeech = 1, OtherReply = 2 };
const char* arm_name(Arm a);

struct UnitRecord {
    NewcomerEvent event;
    CovariateVector covariates;
    Arm arm = Arm::NoReply;
    bool hate_reply_flag = false;
    std::optional<double> reply_toxicity; // present iff arm != NoReply
    bool outcome_engaged = false;
    int outcome_thread_count = 0;
    std::string cluster_id; // subreddit
};

struct CensorRule {
    std::int64_t ban_date = 0;
    std::int64_t p90_return = 0; // seconds
};

struct SubredditSpan {
    std::int64_t first = 0;
    std::int64_t last = 0;
};
using SubredditSpans = std::unordered_map<std::string, SubredditSpan>;

// Spans come from the full corpus once and stay fixed so that covariates never
// shift when the corpus is truncated for leakage checks.
SubredditSpans subreddit_spans(const Corpus& corpus);

// Per-author activity lookups, all strictly before a cutoff timestamp.
class PriorActivityStore {
public:
    explicit PriorActivityStore(const Corpus& corpus);
    struct Summary {
        double comments = 0;
        double submissions = 0;
        double unique_threads = 0;
        double net_score = 0;
    };
    Summary before(const std::string& author, std::int64_t cutoff) const;

private:
    struct Post {
        std::int64_t created_utc;
        bool is_submission;
        std::uint64_t thread_hash;
        int score;
    };
    std::unordered_map<std::string, std::vector<Post>> posts_;
};

// Line-delimited JSON records; throws ParseError with the offending line
// number, IntegrityError on duplicate ids.
std::vector<Comment> load_comments(std::istream& in);
std::vector<Comment> load_comments_file(const std::string& path);
void write_comments(std::ostream& out, const std::vector<Comment>& comments);

ThreadIndex build_thread_index(const Corpus& corpus, OrphanPolicy policy = OrphanPolicy::Drop,
                               const scorers::WarnFn& warn = scorers::stderr_warn());

struct LabelFilter {
    labeler::LabelClass cls = labeler::LabelClass::HateSpeech;
    double threshold = 0.8;
    // Newcomer-role confidence records keyed by comment id.
    const std::unordered_map<std::string, labeler::ConfidenceRecord>* labels = nullptr;
};

std::vector<NewcomerEvent> extract_newcomers(const ThreadIndex& index, const Corpus& corpus,
                                             int ordinal,
                                             const std::optional<LabelFilter>& label_filter = {},
                                             const scorers::WarnFn& warn = scorers::stderr_warn());

CovariateVector compute_covariates(const NewcomerEvent& event, const ThreadIndex& index,
                                   const Corpus& corpus, const PriorActivityStore& history,
                                   const SubredditSpans& spans, scorers::ScorerHub& hub);

// Reply-role confidence records keyed by comment id.
std::pair<Arm, bool> assign_treatment(
    const NewcomerEvent& event,
    const std::unordered_map<std::string, labeler::ConfidenceRecord>& reply_labels,
    double cs_threshold, double hs_threshold);

inline constexpr std::int64_t kDefaultOutcomeWindow = 28LL * 24 * 3600;

// engaged: any later post in the subreddit outside the event's thread, up to
// censor_end when given; thread_count: distinct other threads within `window`.
std::pair<bool, int> compute_outcome(const NewcomerEvent& event, const Corpus& corpus,
                                     std::int64_t window = kDefaultOutcomeWindow,
                                     std::optional<std::int64_t> censor_end = {});

// Nearest-rank 90th percentile of second-post latency; throws
// InsufficientSampleError when nobody returned.
std::int64_t p90_return_time(const std::vector<NewcomerEvent>& events, const Corpus& corpus);

std::vector<UnitRecord> apply_censoring(const std::vector<UnitRecord>& units,
                                        const CensorRule& rule);

struct RetentionPoint {
    int n = 0;
    double probability = 0.0;
    double standard_error = 0.0;
    int at_risk = 0; // users with >= n posts
};

// P(posting an (n+1)-th time | posted n times) for the unit authors.
std::vector<RetentionPoint> retention_curve(const std::vector<UnitRecord>& units,
                                            const Corpus& corpus);

// Clusters with strictly more than min_pairs counterspeech-replied units,
// sorted for determinism.
std::vector<std::string> filter_subreddits(const std::vector<UnitRecord>& units, int min_pairs);
std::vector<UnitRecord> keep_clusters(const std::vector<UnitRecord>& units,
                                      const std::vector<std::string>& clusters);

// Cohort file round-trip (line-delimited JSON, schema in docs/formats.md).
void write_units(std::ostream& out, const std::vector<UnitRecord>& units);
std::vector<UnitRecord> read_units(std::istream& in);

}  // namespace replyfx::ingest

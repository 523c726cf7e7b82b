#include "replyfx/ingest.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "replyfx/hash.hpp"
#include "replyfx/stats.hpp"

namespace replyfx::ingest {

using nlohmann::json;

const char* arm_name(Arm a) {
    switch (a) {
        case Arm::NoReply: return "no_reply";
        case Arm::Counterspeech: return "counterspeech";
        default: return "other_reply";
    }
}

const std::vector<std::string>& CovariateVector::scalar_names() {
    static const std::vector<std::string> names = {
        "nest_level",
        "sentiment",
        "score",
        "relative_timestamp",
        "thread_comments",
        "thread_unique_commenters",
        "thread_toplevel_comments",
        "thread_unique_toplevel_commenters",
        "prior_comments",
        "prior_submissions",
        "prior_unique_threads",
        "prior_net_score",
    };
    return names;
}

std::vector<double> CovariateVector::scalars() const {
    return {static_cast<double>(nest_level),
            sentiment,
            score,
            relative_timestamp,
            thread_comments,
            thread_unique_commenters,
            thread_toplevel_comments,
            thread_unique_toplevel_commenters,
            prior_comments,
            prior_submissions,
            prior_unique_threads,
            prior_net_score};
}

Corpus Corpus::from_comments(std::vector<Comment> comments) {
    Corpus corpus;
    corpus.comments = std::move(comments);
    corpus.by_id.reserve(corpus.comments.size());
    for (std::size_t i = 0; i < corpus.comments.size(); ++i) {
        auto [it, inserted] = corpus.by_id.emplace(corpus.comments[i].id, i);
        if (!inserted) throw IntegrityError("duplicate comment id: " + corpus.comments[i].id);
    }
    return corpus;
}

const Comment* Corpus::find(const std::string& id) const {
    auto it = by_id.find(id);
    return it == by_id.end() ? nullptr : &comments[it->second];
}

const Comment& Corpus::at(const std::string& id) const {
    const Comment* c = find(id);
    if (!c) throw IntegrityError("unknown comment id: " + id);
    return *c;
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

namespace {

Comment parse_comment(const json& rec, std::size_t line_no) {
    auto need = [&](const char* field) -> const json& {
        auto it = rec.find(field);
        if (it == rec.end())
            throw ParseError("missing field '" + std::string(field) + "'", line_no);
        return *it;
    };
    Comment c;
    try {
        c.id = need("id").get<std::string>();
        c.author = need("author").get<std::string>();
        c.subreddit = need("subreddit").get<std::string>();
        c.body = need("body").get<std::string>();
        c.score = need("score").get<int>();
        c.created_utc = need("created_utc").get<std::int64_t>();
        c.link_id = need("link_id").get<std::string>();
        c.is_submission = need("is_submission").get<bool>();
        if (rec.contains("parent_id") && !rec["parent_id"].is_null())
            c.parent_id = rec["parent_id"].get<std::string>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad field type: ") + e.what(), line_no);
    }
    if (c.created_utc < 0) throw ParseError("created_utc must be >= 0", line_no);
    if (c.is_submission == c.parent_id.has_value())
        throw ParseError("parent_id must be absent exactly for submissions", line_no);
    return c;
}

}  // namespace

std::vector<Comment> load_comments(std::istream& in) {
    std::vector<Comment> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object())
            throw ParseError("malformed record", line_no);
        Comment c = parse_comment(rec, line_no);
        if (!seen.insert(c.id).second) throw IntegrityError("duplicate comment id: " + c.id);
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<Comment> load_comments_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open corpus file: " + path);
    return load_comments(in);
}

void write_comments(std::ostream& out, const std::vector<Comment>& comments) {
    for (const auto& c : comments) {
        json rec = {{"id", c.id},
                    {"author", c.author},
                    {"subreddit", c.subreddit},
                    {"body", c.body},
                    {"score", c.score},
                    {"created_utc", c.created_utc},
                    {"link_id", c.link_id},
                    {"is_submission", c.is_submission}};
        if (c.parent_id) rec["parent_id"] = *c.parent_id;
        out << rec.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// Thread index
// ---------------------------------------------------------------------------

ThreadIndex build_thread_index(const Corpus& corpus, OrphanPolicy policy,
                               const scorers::WarnFn& warn) {
    ThreadIndex index;
    std::unordered_map<std::string, std::vector<std::string>> raw_children;
    std::deque<std::string> frontier;

    for (const auto& c : corpus.comments) {
        if (c.is_submission) {
            index.depth[c.id] = 0;
            index.root[c.id] = c.id;
            frontier.push_back(c.id);
        } else {
            raw_children[*c.parent_id].push_back(c.id);
        }
    }
    auto by_time_then_id = [&](const std::string& a, const std::string& b) {
        const Comment& ca = corpus.at(a);
        const Comment& cb = corpus.at(b);
        if (ca.created_utc != cb.created_utc) return ca.created_utc < cb.created_utc;
        return a < b;
    };
    for (auto& [parent, kids] : raw_children)
        std::sort(kids.begin(), kids.end(), by_time_then_id);

    // BFS from submissions; anything unreached hangs off a missing parent.
    while (!frontier.empty()) {
        std::string id = frontier.front();
        frontier.pop_front();
        auto it = raw_children.find(id);
        if (it == raw_children.end()) continue;
        for (const auto& child : it->second) {
            index.depth[child] = index.depth[id] + 1;
            index.root[child] = index.root[id];
            frontier.push_back(child);
        }
        index.children[id] = it->second;
    }

    for (const auto& c : corpus.comments) {
        if (index.depth.count(c.id)) continue;
        if (policy == OrphanPolicy::Strict)
            throw IntegrityError("comment " + c.id + " references missing parent " +
                                 (c.parent_id ? *c.parent_id : std::string("<none>")));
        index.dropped_orphans.push_back(c.id);
    }
    if (!index.dropped_orphans.empty() && warn)
        warn("dropped " + std::to_string(index.dropped_orphans.size()) +
             " orphaned comment(s) with missing ancestors");
    return index;
}

// ---------------------------------------------------------------------------
// Newcomer extraction
// ---------------------------------------------------------------------------

std::vector<NewcomerEvent> extract_newcomers(const ThreadIndex& index, const Corpus& corpus,
                                             int ordinal,
                                             const std::optional<LabelFilter>& label_filter,
                                             const scorers::WarnFn& warn) {
    if (ordinal < 1) throw InputError("extract_newcomers: ordinal must be >= 1");
    // (author, subreddit) -> comment ids ordered by (created_utc, id).
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < corpus.comments.size(); ++i) {
        const Comment& c = corpus.comments[i];
        if (c.is_submission) continue;
        if (!index.depth.count(c.id)) continue; // orphan subtree
        groups[{c.author, c.subreddit}].push_back(i);
    }

    std::vector<NewcomerEvent> events;
    for (auto& [key, ids] : groups) {
        std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
            const Comment& ca = corpus.comments[a];
            const Comment& cb = corpus.comments[b];
            if (ca.created_utc != cb.created_utc) return ca.created_utc < cb.created_utc;
            return ca.id < cb.id;
        });
        if (static_cast<std::size_t>(ordinal) > ids.size()) continue;
        const Comment& c = corpus.comments[ids[static_cast<std::size_t>(ordinal) - 1]];
        if (c.body.empty()) {
            if (warn) warn("newcomer comment " + c.id + " has empty body; excluded");
            continue;
        }
        if (label_filter) {
            if (!label_filter->labels)
                throw InputError("label filter supplied without labels");
            auto it = label_filter->labels->find(c.id);
            if (it == label_filter->labels->end()) {
                if (warn) warn("newcomer comment " + c.id + " unlabeled; excluded");
                continue;
            }
            if (it->second.conf(label_filter->cls) < label_filter->threshold) continue;
        }
        NewcomerEvent event;
        event.comment_id = c.id;
        event.author = c.author;
        event.subreddit = c.subreddit;
        event.ordinal = ordinal;
        event.created_utc = c.created_utc;
        auto kids = index.children.find(c.id);
        if (kids != index.children.end() && !kids->second.empty())
            event.first_reply_id = kids->second.front(); // earliest (created_utc, id)
        events.push_back(std::move(event));
    }
    return events;
}

// ---------------------------------------------------------------------------
// Covariates
// ---------------------------------------------------------------------------

SubredditSpans subreddit_spans(const Corpus& corpus) {
    SubredditSpans spans;
    for (const auto& c : corpus.comments) {
        auto [it, inserted] = spans.emplace(c.subreddit, SubredditSpan{c.created_utc, c.created_utc});
        if (!inserted) {
            it->second.first = std::min(it->second.first, c.created_utc);
            it->second.last = std::max(it->second.last, c.created_utc);
        }
    }
    return spans;
}

PriorActivityStore::PriorActivityStore(const Corpus& corpus) {
    for (const auto& c : corpus.comments)
        posts_[c.author].push_back({c.created_utc, c.is_submission, fnv1a64(c.link_id), c.score});
    for (auto& [author, posts] : posts_)
        std::sort(posts.begin(), posts.end(),
                  [](const Post& a, const Post& b) { return a.created_utc < b.created_utc; });
}

PriorActivityStore::Summary PriorActivityStore::before(const std::string& author,
                                                       std::int64_t cutoff) const {
    Summary out;
    auto it = posts_.find(author);
    if (it == posts_.end()) return out;
    std::unordered_set<std::uint64_t> threads;
    for (const Post& p : it->second) {
        if (p.created_utc >= cutoff) break;
        if (p.is_submission)
            out.submissions += 1;
        else
            out.comments += 1;
        out.net_score += p.score;
        threads.insert(p.thread_hash);
    }
    out.unique_threads = static_cast<double>(threads.size());
    return out;
}

CovariateVector compute_covariates(const NewcomerEvent& event, const ThreadIndex& index,
                                   const Corpus& corpus, const PriorActivityStore& history,
                                   const SubredditSpans& spans, scorers::ScorerHub& hub) {
    const Comment& comment = corpus.at(event.comment_id);
    CovariateVector cov;
    try {
        cov.embedding = hub.embedding(comment.body);
        cov.sentiment = hub.sentiment(comment.body);
    } catch (const ScorerError& e) {
        throw ScorerError(std::string(e.what()) + " (comment " + comment.id + ")", e.status(),
                          e.attempts());
    }
    auto depth_it = index.depth.find(comment.id);
    if (depth_it == index.depth.end())
        throw IntegrityError("event comment " + comment.id + " not in thread index");
    cov.nest_level = depth_it->second;
    cov.score = comment.score;

    auto span_it = spans.find(comment.subreddit);
    if (span_it == spans.end())
        throw InputError("no subreddit span for " + comment.subreddit);
    const auto& span = span_it->second;
    cov.relative_timestamp =
        span.last > span.first
            ? static_cast<double>(comment.created_utc - span.first) /
                  static_cast<double>(span.last - span.first)
            : 0.0;

    std::unordered_set<std::string> commenters, toplevel_commenters;
    for (const auto& other : corpus.comments) {
        if (other.is_submission || other.link_id != comment.link_id) continue;
        if (other.created_utc >= comment.created_utc) continue;
        auto d = index.depth.find(other.id);
        if (d == index.depth.end()) continue;
        cov.thread_comments += 1;
        commenters.insert(other.author);
        if (d->second == 1) {
            cov.thread_toplevel_comments += 1;
            toplevel_commenters.insert(other.author);
        }
    }
    cov.thread_unique_commenters = static_cast<double>(commenters.size());
    cov.thread_unique_toplevel_commenters = static_cast<double>(toplevel_commenters.size());

    auto prior = history.before(event.author, comment.created_utc);
    cov.prior_comments = prior.comments;
    cov.prior_submissions = prior.submissions;
    cov.prior_unique_threads = prior.unique_threads;
    cov.prior_net_score = prior.net_score;
    return cov;
}

// ---------------------------------------------------------------------------
// Treatment, outcomes, censoring
// ---------------------------------------------------------------------------

std::pair<Arm, bool> assign_treatment(
    const NewcomerEvent& event,
    const std::unordered_map<std::string, labeler::ConfidenceRecord>& reply_labels,
    double cs_threshold, double hs_threshold) {
    if (cs_threshold < 0 || cs_threshold > 1 || hs_threshold < 0 || hs_threshold > 1)
        throw InputError("treatment thresholds must lie in [0,1]");
    if (!event.first_reply_id) return {Arm::NoReply, false};
    auto it = reply_labels.find(*event.first_reply_id);
    if (it == reply_labels.end())
        throw InputError("first reply " + *event.first_reply_id + " has no label");
    const auto& rec = it->second;
    if (rec.conf(labeler::LabelClass::Counterspeech) >= cs_threshold)
        return {Arm::Counterspeech, false};
    return {Arm::OtherReply, rec.conf(labeler::LabelClass::HateSpeech) >= hs_threshold};
}

std::pair<bool, int> compute_outcome(const NewcomerEvent& event, const Corpus& corpus,
                                     std::int64_t window, std::optional<std::int64_t> censor_end) {
    const Comment& comment = corpus.at(event.comment_id);
    bool engaged = false;
    std::set<std::string> other_threads;
    for (const auto& other : corpus.comments) {
        if (other.author != event.author || other.subreddit != event.subreddit) continue;
        if (other.created_utc <= comment.created_utc) continue;
        if (censor_end && other.created_utc > *censor_end) continue;
        if (other.link_id == comment.link_id) continue;
        engaged = true;
        if (other.created_utc - comment.created_utc <= window)
            other_threads.insert(other.link_id);
    }
    return {engaged, static_cast<int>(other_threads.size())};
}

std::int64_t p90_return_time(const std::vector<NewcomerEvent>& events, const Corpus& corpus) {
    std::vector<std::int64_t> return_times;
    for (const auto& event : events) {
        std::optional<std::int64_t> next;
        for (const auto& c : corpus.comments) {
            if (c.author != event.author || c.subreddit != event.subreddit) continue;
            if (c.created_utc <= event.created_utc) continue;
            if (!next || c.created_utc < *next) next = c.created_utc;
        }
        if (next) return_times.push_back(*next - event.created_utc);
    }
    if (return_times.empty())
        throw InsufficientSampleError("no newcomer posted a second time");
    return stats::nearest_rank_percentile(return_times, 0.9);
}

std::vector<UnitRecord> apply_censoring(const std::vector<UnitRecord>& units,
                                        const CensorRule& rule) {
    std::vector<UnitRecord> out;
    for (const auto& u : units)
        if (u.event.created_utc <= rule.ban_date - rule.p90_return) out.push_back(u);
    return out;
}

std::vector<RetentionPoint> retention_curve(const std::vector<UnitRecord>& units,
                                            const Corpus& corpus) {
    // Posts per unit author in the unit's subreddit (comments and submissions).
    std::unordered_map<std::string, int> post_counts;
    std::unordered_set<std::string> seen_authors;
    std::vector<std::pair<std::string, std::string>> author_subs;
    for (const auto& u : units) {
        std::string key = u.event.author + "\x1f" + u.event.subreddit;
        if (seen_authors.insert(key).second) author_subs.emplace_back(u.event.author, u.event.subreddit);
    }
    for (const auto& c : corpus.comments) {
        std::string key = c.author + "\x1f" + c.subreddit;
        if (seen_authors.count(key)) ++post_counts[key];
    }

    int max_posts = 0;
    std::vector<int> counts;
    counts.reserve(author_subs.size());
    for (const auto& [author, sub] : author_subs) {
        int m = post_counts[author + "\x1f" + sub];
        counts.push_back(m);
        max_posts = std::max(max_posts, m);
    }

    std::vector<RetentionPoint> curve;
    for (int n = 1; n < max_posts; ++n) {
        int at_risk = 0, continued = 0;
        for (int m : counts) {
            if (m >= n) ++at_risk;
            if (m >= n + 1) ++continued;
        }
        if (at_risk == 0) break;
        RetentionPoint pt;
        pt.n = n;
        pt.at_risk = at_risk;
        pt.probability = static_cast<double>(continued) / at_risk;
        pt.standard_error = stats::binomial_se(pt.probability, at_risk);
        curve.push_back(pt);
    }
    if (curve.empty() && !counts.empty()) {
        // Everyone stopped after one post: report the zero at n=1.
        int at_risk = static_cast<int>(std::count_if(counts.begin(), counts.end(),
                                                     [](int m) { return m >= 1; }));
        if (at_risk > 0) curve.push_back({1, 0.0, 0.0, at_risk});
    }
    return curve;
}

std::vector<std::string> filter_subreddits(const std::vector<UnitRecord>& units, int min_pairs) {
    std::map<std::string, int> pairs;
    for (const auto& u : units) {
        pairs.try_emplace(u.cluster_id, 0);
        if (u.arm == Arm::Counterspeech) ++pairs[u.cluster_id];
    }
    std::vector<std::string> retained;
    for (const auto& [cluster, count] : pairs)
        if (count > min_pairs) retained.push_back(cluster);
    return retained;
}

std::vector<UnitRecord> keep_clusters(const std::vector<UnitRecord>& units,
                                      const std::vector<std::string>& clusters) {
    std::unordered_set<std::string> keep(clusters.begin(), clusters.end());
    std::vector<UnitRecord> out;
    for (const auto& u : units)
        if (keep.count(u.cluster_id)) out.push_back(u);
    return out;
}

// ---------------------------------------------------------------------------
// Cohort serialization
// ---------------------------------------------------------------------------

void write_units(std::ostream& out, const std::vector<UnitRecord>& units) {
    for (const auto& u : units) {
        json rec;
        rec["comment_id"] = u.event.comment_id;
        rec["author"] = u.event.author;
        rec["subreddit"] = u.event.subreddit;
        rec["ordinal"] = u.event.ordinal;
        rec["created_utc"] = u.event.created_utc;
        if (u.event.first_reply_id) rec["first_reply_id"] = *u.event.first_reply_id;
        rec["arm"] = arm_name(u.arm);
        rec["hate_reply_flag"] = u.hate_reply_flag;
        if (u.reply_toxicity) rec["reply_toxicity"] = *u.reply_toxicity;
        rec["outcome_engaged"] = u.outcome_engaged;
        rec["outcome_thread_count"] = u.outcome_thread_count;
        rec["cluster_id"] = u.cluster_id;
        rec["embedding"] = u.covariates.embedding;
        rec["nest_level"] = u.covariates.nest_level;
        rec["sentiment"] = u.covariates.sentiment;
        rec["score"] = u.covariates.score;
        rec["relative_timestamp"] = u.covariates.relative_timestamp;
        rec["thread_comments"] = u.covariates.thread_comments;
        rec["thread_unique_commenters"] = u.covariates.thread_unique_commenters;
        rec["thread_toplevel_comments"] = u.covariates.thread_toplevel_comments;
        rec["thread_unique_toplevel_commenters"] = u.covariates.thread_unique_toplevel_commenters;
        rec["prior_comments"] = u.covariates.prior_comments;
        rec["prior_submissions"] = u.covariates.prior_submissions;
        rec["prior_unique_threads"] = u.covariates.prior_unique_threads;
        rec["prior_net_score"] = u.covariates.prior_net_score;
        out << rec.dump() << "\n";
    }
}

std::vector<UnitRecord> read_units(std::istream& in) {
    std::vector<UnitRecord> units;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded()) throw ParseError("malformed unit record", line_no);
        try {
            UnitRecord u;
            u.event.comment_id = rec.at("comment_id").get<std::string>();
            u.event.author = rec.at("author").get<std::string>();
            u.event.subreddit = rec.at("subreddit").get<std::string>();
            u.event.ordinal = rec.at("ordinal").get<int>();
            u.event.created_utc = rec.at("created_utc").get<std::int64_t>();
            if (rec.contains("first_reply_id"))
                u.event.first_reply_id = rec["first_reply_id"].get<std::string>();
            std::string arm = rec.at("arm").get<std::string>();
            if (arm == "no_reply")
                u.arm = Arm::NoReply;
            else if (arm == "counterspeech")
                u.arm = Arm::Counterspeech;
            else if (arm == "other_reply")
                u.arm = Arm::OtherReply;
            else
                throw ParseError("unknown arm '" + arm + "'", line_no);
            u.hate_reply_flag = rec.at("hate_reply_flag").get<bool>();
            if (rec.contains("reply_toxicity"))
                u.reply_toxicity = rec["reply_toxicity"].get<double>();
            u.outcome_engaged = rec.at("outcome_engaged").get<bool>();
            u.outcome_thread_count = rec.at("outcome_thread_count").get<int>();
            u.cluster_id = rec.at("cluster_id").get<std::string>();
            u.covariates.embedding = rec.at("embedding").get<std::vector<double>>();
            u.covariates.nest_level = rec.at("nest_level").get<int>();
            u.covariates.sentiment = rec.at("sentiment").get<double>();
            u.covariates.score = rec.at("score").get<double>();
            u.covariates.relative_timestamp = rec.at("relative_timestamp").get<double>();
            u.covariates.thread_comments = rec.at("thread_comments").get<double>();
            u.covariates.thread_unique_commenters =
                rec.at("thread_unique_commenters").get<double>();
            u.covariates.thread_toplevel_comments =
                rec.at("thread_toplevel_comments").get<double>();
            u.covariates.thread_unique_toplevel_commenters =
                rec.at("thread_unique_toplevel_commenters").get<double>();
            u.covariates.prior_comments = rec.at("prior_comments").get<double>();
            u.covariates.prior_submissions = rec.at("prior_submissions").get<double>();
            u.covariates.prior_unique_threads = rec.at("prior_unique_threads").get<double>();
            u.covariates.prior_net_score = rec.at("prior_net_score").get<double>();
            units.push_back(std::move(u));
        } catch (const json::exception& e) {
            throw ParseError(std::string("bad unit record: ") + e.what(), line_no);
        }
    }
    return units;
}

}  // namespace replyfx::ingest

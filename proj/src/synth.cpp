#include "replyfx/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <cstdlib>
#include <sstream>

#include "replyfx/errors.hpp"
#include "replyfx/rng.hpp"

namespace replyfx::synth {
namespace {

constexpr std::int64_t kDay = 86400;
constexpr std::int64_t kHour = 3600;
constexpr std::int64_t kSpanStart = 1'500'000'000; // shared study window
constexpr std::int64_t kSpanLen = 120 * kDay;
// Events live in [start+5d, start+70d) and every outcome post lands within
// 26 days of its event, so the span anchors stay strict extremes and a ban at
// span end censors nothing (the p90 return time is at most 12 days).
constexpr std::int64_t kEventLo = 5 * kDay;
constexpr std::int64_t kEventHi = 70 * kDay;
constexpr std::int64_t kFirstReturnMax = 12 * kDay;
constexpr std::int64_t kLaterReturnMax = 26 * kDay;
constexpr int kSinkThreads = 8; // outcome posts spread over these threads
constexpr int kStaffPerCluster = 40;
constexpr int kMaxFillers = 7;
constexpr int kMaxFollowups = 3;

enum Status { kNone = 0, kCs = 1, kHate = 2, kOther = 3 };

double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Round to what the printed tag parses back to, so planned covariates match
// scored ones bit for bit.
double tag_round(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::strtod(buf, nullptr);
}

std::string num_tag(const char* key, double v) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "@%s:%.6f@", key, v);
    return buf;
}

const char* const kWords[] = {"still",  "around", "here",  "reading", "posted", "again",
                              "this",   "mostly", "quiet", "same",    "group",  "talk",
                              "new",    "folks",  "keep",  "coming",  "back",   "see",
                              "what",   "happens", "every", "week",   "more",   "less"};
constexpr int kWordCount = static_cast<int>(sizeof(kWords) / sizeof(kWords[0]));

std::string filler_words(Rng& rng, int lo, int hi) {
    const int n = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (!out.empty()) out += ' ';
        out += kWords[rng.uniform_int(kWordCount)];
    }
    return out;
}

struct Filler {
    int staff = 0;
    bool nested = false; // child of the first filler instead of the submission
};

struct PlannedUnit {
    int cluster = 0;
    int idx = 0;
    std::string author;
    std::string sub_id, comment_id, reply_id;
    std::int64_t t_event = 0;
    int status = kNone;
    bool nested = false; // unit comment sits under the first filler (depth 2)
    std::vector<Filler> fillers;
    int score = 0;
    double sentiment = 0.0; // tag value, equals the scored value
    std::array<double, 3> emb{};
    double tox = 0.0;
    int prior_comments = 0;
    int prior_subs = 0;
    std::vector<int> prior_scores; // comments first, then submissions
    std::vector<double> fu_tox;
    bool engaged = false;
    int k_threads = 0;
    std::vector<std::int64_t> delays;
    std::string body, reply_body;
    std::vector<std::string> fu_bodies;
    double b = 0.0;     // observed-channel linear predictor, no intercepts
    double delta = 0.0; // planted arm shift on the logit scale
};

struct Plan {
    std::vector<PlannedUnit> units; // cluster-major, index order
    std::vector<double> u_cluster;
    GroundTruth truth;
};

std::string cluster_prefix(int g) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%03d", g);
    return buf;
}

std::string staff_name(int g, int i) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s_staff_%02d", cluster_prefix(g).c_str(), i);
    return buf;
}

// Mean probability shift over the subpopulation b when its logit moves by
// delta; solved against the planted target by bisection.
double solve_delta(const std::vector<double>& b, double target) {
    if (b.empty() || target == 0.0) return 0.0;
    auto shift = [&](double d) {
        double s = 0.0;
        for (double bi : b) s += sigmoid(bi + d) - sigmoid(bi);
        return s / static_cast<double>(b.size()) - target;
    };
    double lo = -12.0, hi = 12.0;
    if (shift(lo) > 0.0 || shift(hi) < 0.0)
        throw InputError("planted effect target is unreachable from the base rate");
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        const double mid = 0.5 * (lo + hi);
        (shift(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

void standardize(std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / n);
    for (double& x : v) x = sd > 1e-12 ? (x - mean) / sd : 0.0;
}

void check_range(const Range& r, const char* name) {
    if (!(r.lo >= 0.0 && r.lo <= r.hi && r.hi <= 1.0))
        throw InputError(std::string("synth spec: ") + name + " must satisfy 0 <= lo <= hi <= 1");
}

void check_prob(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0))
        throw InputError(std::string("synth spec: ") + name + " must lie in [0,1]");
}

Plan plan_cohort(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    Plan plan;
    plan.u_cluster.resize(static_cast<std::size_t>(spec.n_clusters));
    const double sigma = std::sqrt(spec.sigma2);
    for (auto& u : plan.u_cluster) u = sigma > 0 ? rng.normal(0.0, sigma) : 0.0;

    plan.units.reserve(static_cast<std::size_t>(spec.n_clusters * spec.units_per_cluster));
    for (int g = 0; g < spec.n_clusters; ++g) {
        const std::string prefix = cluster_prefix(g);
        int duty = 0; // rotates filler work through the cluster's regulars
        for (int i = 0; i < spec.units_per_cluster; ++i) {
            PlannedUnit u;
            u.cluster = g;
            u.idx = i;
            char buf[64];
            std::snprintf(buf, sizeof buf, "%s_a_%04d", prefix.c_str(), i);
            u.author = buf;
            std::snprintf(buf, sizeof buf, "%s_sub_%04d", prefix.c_str(), i);
            u.sub_id = buf;
            std::snprintf(buf, sizeof buf, "%s_u_%04d", prefix.c_str(), i);
            u.comment_id = buf;

            const double c = rng.normal();
            u.sentiment = tag_round(std::clamp(0.55 * c + 0.35 * rng.normal(), -0.99, 0.99));
            u.emb = {1.0, tag_round(0.8 * c + 0.4 * rng.normal()), tag_round(0.5 * rng.normal())};
            u.score = std::clamp(static_cast<int>(std::lround(rng.normal(1.0 + 0.6 * c, 2.0))), -3, 15);
            u.t_event = kSpanStart + kEventLo +
                        static_cast<std::int64_t>(rng.uniform() * static_cast<double>(kEventHi - kEventLo));
            const int n_fillers = std::min(rng.poisson(2.5), kMaxFillers);
            for (int j = 0; j < n_fillers; ++j) {
                Filler f;
                const bool repeat = j > 0 && rng.uniform() < 0.20;
                f.staff = repeat ? u.fillers.back().staff : duty++ % kStaffPerCluster;
                f.nested = j > 0 && rng.uniform() < 0.35;
                u.fillers.push_back(f);
            }
            u.nested = !u.fillers.empty() && rng.uniform() < 0.15;

            u.prior_comments = std::min(rng.poisson(std::exp(0.5 + 0.45 * c)), 15);
            u.prior_subs = std::min(rng.poisson(0.35), 4);
            for (int j = 0; j < u.prior_comments + u.prior_subs; ++j)
                u.prior_scores.push_back(
                    std::clamp(static_cast<int>(std::lround(rng.normal(2.0, 2.0))), -5, 9));

            const double tilt = spec.confounder_to_treatment * c;
            const std::array<double, 4> w = {spec.p_no_reply * std::exp(-tilt),
                                             spec.p_counterspeech * std::exp(tilt),
                                             spec.p_hate_reply, spec.p_other_reply};
            const double wsum = w[0] + w[1] + w[2] + w[3];
            double pick = rng.uniform() * wsum;
            u.status = kOther;
            for (int s = 0; s < 4; ++s) {
                if (pick < w[static_cast<std::size_t>(s)]) {
                    u.status = s;
                    break;
                }
                pick -= w[static_cast<std::size_t>(s)];
            }

            if (u.status != kNone) {
                std::snprintf(buf, sizeof buf, "%s_r_%04d", prefix.c_str(), i);
                u.reply_id = buf;
                Range r;
                if (u.status == kCs)
                    r = rng.uniform() < spec.cs_toxic_fraction ? spec.cs_toxic_range
                                                               : spec.cs_nontoxic_range;
                else if (u.status == kHate)
                    r = spec.hate_range;
                else
                    r = spec.other_range;
                u.tox = tag_round(rng.uniform(r.lo, r.hi));

                const int n_fu = std::min(rng.poisson(spec.followup_rate), kMaxFollowups);
                for (int j = 0; j < n_fu; ++j) {
                    const double p_toxic = std::clamp(
                        spec.followup_toxic_base + spec.followup_toxic_slope * u.tox, 0.0, 1.0);
                    const Range fr = rng.uniform() < p_toxic ? spec.followup_toxic_range
                                                             : spec.followup_clean_range;
                    u.fu_tox.push_back(tag_round(rng.uniform(fr.lo, fr.hi)));
                }
            }

            std::ostringstream body;
            body << "@votes:hhhhh@ " << num_tag("sent", u.sentiment) << ' ';
            char emb_tag[128];
            std::snprintf(emb_tag, sizeof emb_tag, "@emb:%.6f,%.6f,%.6f@", u.emb[0], u.emb[1],
                          u.emb[2]);
            body << emb_tag << ' ' << filler_words(rng, 3, 7);
            u.body = body.str();

            if (u.status != kNone) {
                const char* votes = u.status == kCs ? "ccccc" : (u.status == kHate ? "hhhhh" : "ooooo");
                u.reply_body = std::string("@votes:") + votes + "@ " + num_tag("tox", u.tox) + ' ' +
                               filler_words(rng, 3, 6);
                for (double ft : u.fu_tox)
                    u.fu_bodies.push_back(num_tag("tox", ft) + (' ' + filler_words(rng, 2, 5)));
            }
            plan.units.push_back(std::move(u));
        }
    }

    // Observed-channel linear predictor. The embedding coordinate is read off
    // the scored vector, not the tag, because normalization rescales it.
    auto hub = scorers::ScorerHub::stubs();
    const std::size_t n = plan.units.size();
    std::vector<double> z_sent(n), z_emb(n), z_prior(n), z_tox(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& u = plan.units[i];
        z_sent[i] = u.sentiment;
        z_emb[i] = hub.embedding(u.body)[1];
        z_prior[i] = static_cast<double>(u.prior_comments);
        z_tox[i] = u.tox;
    }
    standardize(z_sent);
    standardize(z_emb);
    standardize(z_prior);
    standardize(z_tox);
    const double intercept = std::log(spec.base_rate / (1.0 - spec.base_rate));
    for (std::size_t i = 0; i < n; ++i)
        plan.units[i].b = intercept + spec.outcome_sentiment * z_sent[i] +
                          spec.outcome_embedding * z_emb[i] + spec.outcome_prior * z_prior[i] +
                          spec.outcome_toxicity * z_tox[i];

    // Solve the logit shifts hitting the probability-scale targets on the
    // subpopulations that carry them.
    std::vector<double> b_cs, b_hate;
    for (const auto& u : plan.units) {
        if (u.status == kCs && (!spec.effect_only_nontoxic || u.tox <= spec.nontoxic_cutoff))
            b_cs.push_back(u.b);
        if (u.status == kHate) b_hate.push_back(u.b);
    }
    plan.truth.delta_counterspeech = solve_delta(b_cs, spec.ate_counterspeech);
    plan.truth.delta_hate = solve_delta(b_hate, spec.ate_hate_reply);
    plan.truth.ate_counterspeech = spec.ate_counterspeech;
    plan.truth.ate_hate_reply = spec.ate_hate_reply;
    plan.truth.sigma2 = spec.sigma2;
    plan.truth.clusters = spec.cluster_names();

    double y_cs = 0.0, n_cs = 0.0, y_none = 0.0, n_none = 0.0;
    for (auto& u : plan.units) {
        if (u.status == kCs)
            u.delta = (!spec.effect_only_nontoxic || u.tox <= spec.nontoxic_cutoff)
                          ? plan.truth.delta_counterspeech
                          : 0.0;
        else if (u.status == kHate)
            u.delta = plan.truth.delta_hate;
        const double p = sigmoid(u.b + plan.u_cluster[static_cast<std::size_t>(u.cluster)] + u.delta);
        u.engaged = rng.uniform() < p;
        if (u.engaged) {
            u.k_threads =
                1 + std::min(rng.poisson(std::exp(0.1 + 0.4 * u.sentiment)), kSinkThreads - 1);
            u.delays.push_back(kHour + static_cast<std::int64_t>(
                                           rng.uniform() * static_cast<double>(kFirstReturnMax - kHour)));
            for (int j = 1; j < u.k_threads; ++j)
                u.delays.push_back(kHour + static_cast<std::int64_t>(
                                               rng.uniform() *
                                               static_cast<double>(kLaterReturnMax - kHour)));
        }

        const int arm = u.status == kNone ? 0 : (u.status == kCs ? 1 : 2);
        plan.truth.arm_counts[static_cast<std::size_t>(arm)] += 1;
        if (u.status == kHate) plan.truth.hate_reply_count += 1;
        if (u.status == kCs) {
            y_cs += u.engaged ? 1.0 : 0.0;
            n_cs += 1.0;
        } else if (u.status == kNone) {
            y_none += u.engaged ? 1.0 : 0.0;
            n_none += 1.0;
        }
    }
    plan.truth.naive_counterspeech =
        (n_cs > 0 ? y_cs / n_cs : 0.0) - (n_none > 0 ? y_none / n_none : 0.0);
    return plan;
}

} // namespace

void SynthSpec::validate() const {
    if (n_clusters < 1 || units_per_cluster < 1)
        throw InputError("synth spec: sizes must be positive");
    if (seed == 0) throw InputError("synth spec: seed must be set explicitly");
    if (sigma2 < 0.0) throw InputError("synth spec: sigma2 must be nonnegative");
    check_prob(p_no_reply, "p_no_reply");
    check_prob(p_counterspeech, "p_counterspeech");
    check_prob(p_hate_reply, "p_hate_reply");
    check_prob(p_other_reply, "p_other_reply");
    const double total = p_no_reply + p_counterspeech + p_hate_reply + p_other_reply;
    if (std::abs(total - 1.0) > 1e-9)
        throw InputError("synth spec: reply mixture must sum to 1");
    check_prob(cs_toxic_fraction, "cs_toxic_fraction");
    check_prob(nontoxic_cutoff, "nontoxic_cutoff");
    if (!(base_rate > 0.0 && base_rate < 1.0))
        throw InputError("synth spec: base_rate must lie in (0,1)");
    if (followup_rate < 0.0) throw InputError("synth spec: followup_rate must be nonnegative");
    check_range(cs_nontoxic_range, "cs_nontoxic_range");
    check_range(cs_toxic_range, "cs_toxic_range");
    check_range(hate_range, "hate_range");
    check_range(other_range, "other_range");
    check_range(followup_toxic_range, "followup_toxic_range");
    check_range(followup_clean_range, "followup_clean_range");
}

std::string SynthSpec::cluster_name(int g) const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth_%03d", g);
    return buf;
}

std::vector<std::string> SynthSpec::cluster_names() const {
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(n_clusters));
    for (int g = 0; g < n_clusters; ++g) out.push_back(cluster_name(g));
    return out;
}

Cohort generate_cohort(const SynthSpec& spec) {
    Plan plan = plan_cohort(spec);
    auto hub = scorers::ScorerHub::stubs();

    Cohort out;
    out.truth = plan.truth;
    out.units.reserve(plan.units.size());
    for (const auto& u : plan.units) {
        ingest::UnitRecord rec;
        rec.event.comment_id = u.comment_id;
        rec.event.author = u.author;
        rec.event.subreddit = spec.cluster_name(u.cluster);
        rec.event.ordinal = 1;
        rec.event.created_utc = u.t_event;
        if (u.status != kNone) rec.event.first_reply_id = u.reply_id;

        auto& cov = rec.covariates;
        cov.embedding = hub.embedding(u.body);
        cov.sentiment = hub.sentiment(u.body);
        cov.nest_level = u.nested ? 2 : 1;
        cov.score = u.score;
        cov.relative_timestamp =
            static_cast<double>(u.t_event - kSpanStart) / static_cast<double>(kSpanLen);
        std::set<int> commenters, toplevel_commenters;
        int toplevel = 0;
        for (const auto& f : u.fillers) {
            commenters.insert(f.staff);
            if (!f.nested) {
                ++toplevel;
                toplevel_commenters.insert(f.staff);
            }
        }
        cov.thread_comments = static_cast<double>(u.fillers.size());
        cov.thread_unique_commenters = static_cast<double>(commenters.size());
        cov.thread_toplevel_comments = toplevel;
        cov.thread_unique_toplevel_commenters = static_cast<double>(toplevel_commenters.size());
        cov.prior_comments = u.prior_comments;
        cov.prior_submissions = u.prior_subs;
        cov.prior_unique_threads = u.prior_comments + u.prior_subs;
        double net = 0.0;
        for (int s : u.prior_scores) net += s;
        cov.prior_net_score = net;

        rec.arm = u.status == kNone ? ingest::Arm::NoReply
                                    : (u.status == kCs ? ingest::Arm::Counterspeech
                                                       : ingest::Arm::OtherReply);
        rec.hate_reply_flag = u.status == kHate;
        if (u.status != kNone) rec.reply_toxicity = u.tox;
        rec.outcome_engaged = u.engaged;
        rec.outcome_thread_count = u.k_threads;
        rec.cluster_id = rec.event.subreddit;
        out.units.push_back(std::move(rec));
    }
    std::sort(out.units.begin(), out.units.end(),
              [](const ingest::UnitRecord& a, const ingest::UnitRecord& b) {
                  if (a.event.author != b.event.author) return a.event.author < b.event.author;
                  return a.event.subreddit < b.event.subreddit;
              });
    return out;
}

std::vector<ingest::Comment> generate_threads(const SynthSpec& spec) {
    Plan plan = plan_cohort(spec);
    std::vector<ingest::Comment> out;
    // Second-comment replies draw from their own stream so the main plan is
    // unchanged whether or not anyone consumes them.
    Rng reply2_rng(spec.seed ^ 0x9E3779B97F4A7C15ULL);

    auto submission = [&](std::string id, std::string author, std::string subreddit,
                          std::string body, std::int64_t t, int score) {
        ingest::Comment c;
        c.id = id;
        c.link_id = std::move(id);
        c.author = std::move(author);
        c.subreddit = std::move(subreddit);
        c.body = std::move(body);
        c.created_utc = t;
        c.score = score;
        c.is_submission = true;
        out.push_back(std::move(c));
    };
    auto comment = [&](std::string id, std::string author, std::string subreddit, std::string body,
                       std::int64_t t, int score, std::string parent, std::string link) {
        ingest::Comment c;
        c.id = std::move(id);
        c.author = std::move(author);
        c.subreddit = std::move(subreddit);
        c.body = std::move(body);
        c.created_utc = t;
        c.score = score;
        c.parent_id = std::move(parent);
        c.link_id = std::move(link);
        out.push_back(std::move(c));
    };

    for (int g = 0; g < spec.n_clusters; ++g) {
        const std::string prefix = cluster_prefix(g);
        const std::string sub = spec.cluster_name(g);
        const std::string mod = prefix + "_mod";

        submission(prefix + "_span_a", mod, sub, "opening sticky", kSpanStart, 1);
        const std::string intake = prefix + "_intake";
        submission(intake, mod, sub, "introduction thread", kSpanStart + 1800, 1);
        // Empty bodies keep the regulars out of the newcomer cohort while
        // letting them reply and pad threads later.
        for (int i = 0; i < kStaffPerCluster; ++i) {
            char id[48];
            std::snprintf(id, sizeof id, "%s_staff_c_%02d", prefix.c_str(), i);
            comment(id, staff_name(g, i), sub, "", kSpanStart + 1800 + 60 * (i + 1), 1, intake,
                    intake);
        }
        std::vector<std::string> sinks;
        for (int j = 0; j < kSinkThreads; ++j) {
            char id[48];
            std::snprintf(id, sizeof id, "%s_sink_%02d", prefix.c_str(), j);
            sinks.push_back(id);
            submission(id, mod, sub, "weekly open thread", kSpanStart + 2 * kDay + j * kHour, 2);
        }

        int duty = 0;  // rotates replier work through the regulars
        int duty2 = 0; // same rotation for second-comment replies
        for (const auto& u : plan.units) {
            if (u.cluster != g) continue;
            submission(u.sub_id, mod, sub, "discussion " + u.sub_id, u.t_event - 2 * kDay, 2);
            std::vector<std::string> filler_ids;
            for (std::size_t j = 0; j < u.fillers.size(); ++j) {
                char id[64];
                std::snprintf(id, sizeof id, "%s_f_%04d_%zu", prefix.c_str(), u.idx, j);
                filler_ids.push_back(id);
                const std::string parent = u.fillers[j].nested ? filler_ids.front() : u.sub_id;
                comment(id, staff_name(g, u.fillers[j].staff), sub, "filler " + std::string(id),
                        u.t_event - kDay + 300 * static_cast<std::int64_t>(j), 0, parent, u.sub_id);
            }
            const std::string parent = u.nested ? filler_ids.front() : u.sub_id;
            comment(u.comment_id, u.author, sub, u.body, u.t_event, u.score, parent, u.sub_id);
            if (u.status != kNone) {
                comment(u.reply_id, staff_name(g, duty++ % kStaffPerCluster), sub, u.reply_body,
                        u.t_event + kHour, 1, u.comment_id, u.sub_id);
                for (std::size_t j = 0; j < u.fu_bodies.size(); ++j) {
                    char id[64];
                    std::snprintf(id, sizeof id, "%s_w_%04d_%zu", prefix.c_str(), u.idx, j);
                    comment(id, staff_name(g, duty++ % kStaffPerCluster), sub, u.fu_bodies[j],
                            u.t_event + 2 * kHour + 600 * static_cast<std::int64_t>(j), 0,
                            u.reply_id, u.sub_id);
                }
            }
            for (int j = 0; j < u.k_threads; ++j) {
                char id[64];
                std::snprintf(id, sizeof id, "%s_o_%04d_%d", prefix.c_str(), u.idx, j);
                const std::string& sink = sinks[static_cast<std::size_t>((u.idx + j) % kSinkThreads)];
                comment(id, u.author, sub, "checking in " + std::string(id),
                        u.t_event + u.delays[static_cast<std::size_t>(j)], 1, sink, sink);
            }
            // Some returning posters pick up a reply on their earliest one or
            // two return comments. This gives later-ordinal cohorts populated
            // arms while staying effect-free: engagement was drawn above.
            if (u.engaged) {
                std::vector<std::size_t> order(u.delays.size());
                for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
                std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    return u.delays[a] != u.delays[b] ? u.delays[a] < u.delays[b] : a < b;
                });
                for (std::size_t rank = 0; rank < std::min<std::size_t>(2, order.size()); ++rank) {
                    if (reply2_rng.uniform() >= 0.35) continue;
                    const std::size_t j = order[rank];
                    char post_id[64];
                    std::snprintf(post_id, sizeof post_id, "%s_o_%04d_%zu", prefix.c_str(), u.idx,
                                  j);
                    const std::string& sink =
                        sinks[(static_cast<std::size_t>(u.idx) + j) % kSinkThreads];
                    const double pick = reply2_rng.uniform();
                    const char* votes = pick < 0.5 ? "ccccc" : (pick < 0.75 ? "hhhhh" : "ooooo");
                    const Range r = pick < 0.5 ? spec.cs_nontoxic_range
                                               : (pick < 0.75 ? spec.hate_range : spec.other_range);
                    const double tox = tag_round(reply2_rng.uniform(r.lo, r.hi));
                    char id[64];
                    std::snprintf(id, sizeof id, "%s_q_%04d_%zu", prefix.c_str(), u.idx, rank);
                    comment(id, staff_name(g, duty2++ % kStaffPerCluster), sub,
                            std::string("@votes:") + votes + "@ " + num_tag("tox", tox) + ' ' +
                                filler_words(reply2_rng, 3, 6),
                            u.t_event + u.delays[j] + 1800, 0, post_id, sink);
                }
            }
        }
        submission(prefix + "_span_b", mod, sub, "closing sticky", kSpanStart + kSpanLen, 1);
    }

    // Author history lives in its own subreddit: it feeds the prior-activity
    // covariates without adding newcomer events to any study cluster.
    std::int64_t t_hist = kSpanStart - 40 * kDay;
    for (const auto& u : plan.units) {
        for (int j = 0; j < u.prior_comments + u.prior_subs; ++j) {
            const int score = u.prior_scores[static_cast<std::size_t>(j)];
            char id[80];
            if (j < u.prior_comments) {
                std::snprintf(id, sizeof id, "h_%s_%d", u.author.c_str(), j);
                const std::string anchor = std::string("ha_") + id;
                submission(anchor, "hist_mod", "synth_history", "archive " + anchor, t_hist - 60, 1);
                comment(id, u.author, "synth_history", "history note " + std::string(id), t_hist,
                        score, anchor, anchor);
            } else {
                std::snprintf(id, sizeof id, "hs_%s_%d", u.author.c_str(), j - u.prior_comments);
                submission(id, u.author, "synth_history", "history post " + std::string(id), t_hist,
                           score);
            }
            t_hist += 120;
        }
    }
    return out;
}

} // namespace replyfx::synth

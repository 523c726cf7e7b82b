#include "replyfx/labeler.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "replyfx/rng.hpp"
#include "replyfx/stats.hpp"

namespace replyfx::labeler {

const char* label_name(LabelClass c) {
    switch (c) {
        case LabelClass::Counterspeech: return "counterspeech";
        case LabelClass::HateSpeech: return "hate speech";
        default: return "other";
    }
}

namespace {

std::string fold(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char ch : s) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    return out;
}

}  // namespace

std::optional<LabelClass> label_from_name(std::string_view name) {
    std::string f = fold(name);
    if (f == "counterspeech" || f == "counter speech") return LabelClass::Counterspeech;
    if (f == "hate speech" || f == "hatespeech") return LabelClass::HateSpeech;
    if (f == "other") return LabelClass::Other;
    return std::nullopt;
}

ConfidenceRecord make_confidence_record(std::string item_id,
                                        const std::array<int, kNumClasses>& votes) {
    ConfidenceRecord rec;
    rec.item_id = std::move(item_id);
    rec.votes = votes;
    rec.k = votes[0] + votes[1] + votes[2];
    if (rec.k <= 0) throw InputError("confidence record with zero votes");
    int best = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        rec.confidence[c] = static_cast<double>(votes[c]) / rec.k;
        if (votes[c] > votes[best]) best = c; // strict: first max wins on ties
    }
    rec.argmax_label = static_cast<LabelClass>(best);
    return rec;
}

std::string render_prompt(std::string_view prompt_template, std::string_view context,
                          std::string_view newcomer, std::string_view reply) {
    std::string out(prompt_template);
    auto substitute = [&out](std::string_view slot, std::string_view value) {
        std::string needle = "{{" + std::string(slot) + "}}";
        auto pos = out.find(needle);
        if (pos == std::string::npos)
            throw InputError("prompt template missing slot " + needle);
        do {
            out.replace(pos, needle.size(), value);
            pos = out.find(needle, pos + value.size());
        } while (pos != std::string::npos);
    };
    substitute("context", context);
    substitute("newcomer", newcomer);
    substitute("reply", reply);
    return out;
}

std::pair<LabelClass, LabelClass> parse_model_reply(std::string_view text) {
    std::string f = fold(text);
    // Scan every "newcomer:" occurrence so chatter before the answer is skipped.
    for (std::size_t pos = f.find("newcomer:"); pos != std::string::npos;
         pos = f.find("newcomer:", pos + 1)) {
        auto rest = std::string_view(f).substr(pos + 9);
        auto comma = rest.find(',');
        if (comma == std::string_view::npos) continue;
        auto first = label_from_name(rest.substr(0, comma));
        if (!first) continue;
        auto after = rest.substr(comma + 1);
        auto reply_pos = after.find("reply:");
        if (reply_pos == std::string_view::npos) continue;
        auto reply_text = after.substr(reply_pos + 6);
        auto close = reply_text.find(')');
        if (close != std::string_view::npos) reply_text = reply_text.substr(0, close);
        auto second = label_from_name(reply_text);
        if (!second) continue;
        return {*first, *second};
    }
    throw ParseError("no parseable (newcomer: ..., reply: ...) answer");
}

EnsembleResult ensemble_label(scorers::TextGenerator& generator, const LabelPairInput& pair,
                              std::string_view prompt_template, const EnsembleConfig& config,
                              const scorers::WarnFn& warn) {
    if (config.k < 1) throw InputError("ensemble_label: k must be >= 1");
    std::string prompt = render_prompt(prompt_template, pair.context, pair.newcomer, pair.reply);

    std::array<int, kNumClasses> newcomer_votes{};
    std::array<int, kNumClasses> reply_votes{};
    EnsembleResult result;

    std::uint64_t next_seed = config.seed_start;
    int resample_budget = config.max_resamples;
    for (int i = 0; i < config.k; ++i) {
        std::optional<std::pair<LabelClass, LabelClass>> parsed;
        for (;;) {
            std::string completion = generator.generate_label(prompt, config.temperature,
                                                              next_seed++);
            try {
                parsed = parse_model_reply(completion);
                break;
            } catch (const ParseError&) {
                if (resample_budget <= 0) break;
                --resample_budget;
                ++result.resamples_used;
                warn("unparseable completion for " + pair.item_id + "; re-sampling");
            }
        }
        if (!parsed) {
            // Budget exhausted: count the sample as Other rather than dropping
            // it, so vote totals stay at k.
            parsed = {LabelClass::Other, LabelClass::Other};
            ++result.counted_as_other;
            warn("completion for " + pair.item_id + " unparseable after retries; counted as other");
        }
        ++newcomer_votes[static_cast<int>(parsed->first)];
        ++reply_votes[static_cast<int>(parsed->second)];
    }

    result.newcomer = make_confidence_record(pair.item_id + "/newcomer", newcomer_votes);
    result.reply = make_confidence_record(pair.item_id + "/reply", reply_votes);
    return result;
}

MajorityVote majority_vote(const AnnotationTable& table) {
    MajorityVote out;
    out.labels.reserve(table.rows.size());
    out.tie.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        if (row.empty()) throw InputError("majority_vote: empty rater row");
        std::array<int, kNumClasses> counts{};
        for (auto c : row) ++counts[static_cast<int>(c)];
        int best = 0;
        for (int c = 1; c < kNumClasses; ++c)
            if (counts[c] > counts[best]) best = c;
        bool tied = false;
        for (int c = 0; c < kNumClasses; ++c)
            if (c != best && counts[c] == counts[best]) tied = true;
        out.labels.push_back(static_cast<LabelClass>(best));
        out.tie.push_back(tied);
    }
    return out;
}

std::optional<double> fleiss_kappa(const AnnotationTable& table) {
    const std::size_t n_items = table.rows.size();
    if (n_items < 2) throw InputError("fleiss_kappa: need at least 2 items");
    const int n = table.raters();
    if (n < 2) throw InputError("fleiss_kappa: need at least 2 raters");
    for (const auto& row : table.rows)
        if (static_cast<int>(row.size()) != n)
            throw InputError("fleiss_kappa: ragged annotation table");

    std::array<double, kNumClasses> totals{};
    double p_bar = 0.0;
    for (const auto& row : table.rows) {
        std::array<int, kNumClasses> counts{};
        for (auto c : row) ++counts[static_cast<int>(c)];
        double agree = 0.0;
        for (int c = 0; c < kNumClasses; ++c) {
            agree += static_cast<double>(counts[c]) * (counts[c] - 1);
            totals[c] += counts[c];
        }
        p_bar += agree / (static_cast<double>(n) * (n - 1));
    }
    p_bar /= static_cast<double>(n_items);

    double pe = 0.0;
    const double total_ratings = static_cast<double>(n_items) * n;
    for (int c = 0; c < kNumClasses; ++c) {
        double pj = totals[c] / total_ratings;
        pe += pj * pj;
    }
    if (pe >= 1.0 - 1e-15) return std::nullopt; // all ratings in one category
    return (p_bar - pe) / (1.0 - pe);
}

namespace {
void check_gold(const std::vector<ConfidenceRecord>& records, const std::vector<LabelClass>& gold) {
    if (records.size() != gold.size())
        throw InputError("gold labels must cover all records");
}
}  // namespace

PrecisionResult precision_at_threshold(const std::vector<ConfidenceRecord>& records,
                                       const std::vector<LabelClass>& gold, LabelClass cls,
                                       double threshold) {
    check_gold(records, gold);
    int predicted = 0, correct = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].conf(cls) >= threshold) {
            ++predicted;
            if (gold[i] == cls) ++correct;
        }
    }
    PrecisionResult out;
    out.n_predicted = predicted;
    if (predicted > 0) out.precision = static_cast<double>(correct) / predicted;
    return out;
}

double select_threshold(const std::vector<ConfidenceRecord>& records,
                        const std::vector<LabelClass>& gold, LabelClass cls, int min_positives) {
    check_gold(records, gold);
    std::vector<double> candidates;
    for (const auto& r : records) candidates.push_back(r.conf(cls));
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    bool found = false;
    double best_threshold = 0.0, best_precision = -1.0;
    for (double t : candidates) { // ascending, so precision ties keep the lowest
        auto res = precision_at_threshold(records, gold, cls, t);
        if (res.n_predicted < min_positives || !res.precision) continue;
        if (*res.precision > best_precision + 1e-12) {
            best_precision = *res.precision;
            best_threshold = t;
            found = true;
        }
    }
    if (!found)
        throw InfeasibleError("no threshold keeps at least " + std::to_string(min_positives) +
                              " predicted positives");
    return best_threshold;
}

std::optional<double> roc_auc(const std::vector<ConfidenceRecord>& records,
                              const std::vector<LabelClass>& gold, LabelClass cls) {
    check_gold(records, gold);
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < records.size(); ++i)
        (gold[i] == cls ? pos : neg).push_back(records[i].conf(cls));
    if (pos.empty() || neg.empty()) return std::nullopt;
    double wins = 0.0;
    for (double p : pos)
        for (double q : neg) {
            if (p > q)
                wins += 1.0;
            else if (p == q)
                wins += 0.5;
        }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

Interval bootstrap_ci(
    const std::function<std::optional<double>(const std::vector<std::size_t>&)>& metric,
    std::size_t n_items, int n_resamples, double level, std::uint64_t seed) {
    if (n_items == 0) throw InputError("bootstrap_ci: empty data");
    if (n_resamples < 1) throw InputError("bootstrap_ci: need at least 1 resample");
    Rng rng(seed);
    std::vector<double> draws;
    draws.reserve(static_cast<std::size_t>(n_resamples));
    int undefined = 0;
    std::vector<std::size_t> idx(n_items);
    for (int b = 0; b < n_resamples; ++b) {
        for (auto& j : idx) j = rng.uniform_int(n_items);
        if (auto v = metric(idx))
            draws.push_back(*v);
        else
            ++undefined;
    }
    if (undefined * 2 > n_resamples)
        throw InstabilityError("metric undefined on " + std::to_string(undefined) + " of " +
                               std::to_string(n_resamples) + " resamples");
    double alpha = (1.0 - level) / 2.0;
    return {stats::quantile(draws, alpha), stats::quantile(draws, 1.0 - alpha)};
}

EvalReport evaluate(const std::vector<ConfidenceRecord>& records,
                    const std::vector<LabelClass>& gold, int min_positives, int n_resamples,
                    std::uint64_t seed) {
    check_gold(records, gold);
    EvalReport report;
    report.n_items = static_cast<int>(records.size());
    for (int c = 0; c < kNumClasses; ++c) {
        auto cls = static_cast<LabelClass>(c);
        ClassEval& eval = report.per_class[c];
        eval.n_gold = static_cast<int>(std::count(gold.begin(), gold.end(), cls));
        try {
            eval.threshold = select_threshold(records, gold, cls, min_positives);
        } catch (const InfeasibleError&) {
            continue; // class too rare to evaluate; leave empty
        }
        auto pres = precision_at_threshold(records, gold, cls, eval.threshold);
        eval.precision = pres.precision;
        eval.n_predicted = pres.n_predicted;
        eval.auc = roc_auc(records, gold, cls);

        auto take = [&](const std::vector<std::size_t>& idx,
                        auto&& fn) -> std::optional<double> {
            std::vector<ConfidenceRecord> rs;
            std::vector<LabelClass> gs;
            rs.reserve(idx.size());
            gs.reserve(idx.size());
            for (auto j : idx) {
                rs.push_back(records[j]);
                gs.push_back(gold[j]);
            }
            return fn(rs, gs);
        };
        eval.precision_ci = bootstrap_ci(
            [&](const std::vector<std::size_t>& idx) {
                return take(idx, [&](const auto& rs, const auto& gs) {
                    return precision_at_threshold(rs, gs, cls, eval.threshold).precision;
                });
            },
            records.size(), n_resamples, 0.95, seed + static_cast<std::uint64_t>(c));
        if (eval.auc) {
            eval.auc_ci = bootstrap_ci(
                [&](const std::vector<std::size_t>& idx) {
                    return take(idx, [&](const auto& rs, const auto& gs) {
                        return roc_auc(rs, gs, cls);
                    });
                },
                records.size(), n_resamples, 0.95,
                seed + 100 + static_cast<std::uint64_t>(c));
        }
    }
    return report;
}

std::vector<double> default_temperatures() {
    std::vector<double> out;
    for (int i = 1; i <= 20; ++i) out.push_back(i / 10.0);
    return out;
}

SweepResult temperature_sweep(scorers::TextGenerator& generator,
                              const std::vector<LabelPairInput>& pairs,
                              const std::vector<LabelClass>& reply_gold,
                              std::string_view prompt_template,
                              const std::vector<double>& temperatures, int k, int min_positives,
                              const scorers::WarnFn& warn) {
    if (temperatures.empty()) throw InputError("temperature_sweep: empty temperature list");
    if (pairs.size() != reply_gold.size())
        throw InputError("temperature_sweep: gold labels must cover all pairs");

    SweepResult result;
    double best_precision = -1.0;
    for (double temp : temperatures) {
        EnsembleConfig config;
        config.k = k;
        config.temperature = temp;
        std::vector<ConfidenceRecord> records;
        records.reserve(pairs.size());
        for (const auto& pair : pairs)
            records.push_back(ensemble_label(generator, pair, prompt_template, config, warn).reply);

        TempReport row;
        row.temperature = temp;
        try {
            row.threshold =
                select_threshold(records, reply_gold, LabelClass::Counterspeech, min_positives);
            auto pres =
                precision_at_threshold(records, reply_gold, LabelClass::Counterspeech, row.threshold);
            row.precision = pres.precision;
            row.n_predicted = pres.n_predicted;
        } catch (const InfeasibleError&) {
            // temperature yields too few positives; report row without scores
        }
        result.table.push_back(row);

        if (row.precision) {
            if (*row.precision > best_precision + 1e-12) {
                best_precision = *row.precision;
                result.best_temperature = temp;
                result.tie = false;
            } else if (std::abs(*row.precision - best_precision) <= 1e-12) {
                result.tie = true; // earlier (lower) temperature kept
            }
        }
    }
    if (best_precision < 0.0)
        throw InfeasibleError("no temperature produced enough predicted positives");
    return result;
}

}  // namespace replyfx::labeler

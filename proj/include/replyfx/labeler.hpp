#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "replyfx/errors.hpp"
#include "replyfx/scorers.hpp"

namespace replyfx::labeler {

// Enum order doubles as the tie-break order for argmax and majority votes.
enum class LabelClass : int { Counterspeech = 0, HateSpeech = 1, Other = 2 };
inline constexpr int kNumClasses = 3;

const char* label_name(LabelClass c);
std::optional<LabelClass> label_from_name(std::string_view name);

// Vote tallies for one labeled item. votes[class] sums to k and
// confidence[class] = votes[class] / k.
struct ConfidenceRecord {
    std::string item_id;
    std::array<int, kNumClasses> votes{};
    int k = 0;
    std::array<double, kNumClasses> confidence{};
    LabelClass argmax_label = LabelClass::Other;

    double conf(LabelClass c) const { return confidence[static_cast<int>(c)]; }
};

ConfidenceRecord make_confidence_record(std::string item_id,
                                        const std::array<int, kNumClasses>& votes);

// Rectangular items x raters matrix.
struct AnnotationTable {
    std::vector<std::vector<LabelClass>> rows;
    int raters() const { return rows.empty() ? 0 : static_cast<int>(rows.front().size()); }
};

struct EnsembleConfig {
    int k = 5;
    double temperature = 0.7;
    int max_resamples = 5;        // extra generations allowed for unparseable completions
    std::uint64_t seed_start = 1; // sample i uses seed seed_start + i
};

struct EnsembleResult {
    ConfidenceRecord newcomer;
    ConfidenceRecord reply;
    int resamples_used = 0;
    int counted_as_other = 0; // completions that stayed unparseable
};

struct LabelPairInput {
    std::string item_id;
    std::string context;
    std::string newcomer;
    std::string reply;
};

// Fills {{context}}, {{newcomer}}, {{reply}} slots; all three must be present.
std::string render_prompt(std::string_view prompt_template, std::string_view context,
                          std::string_view newcomer, std::string_view reply);

// Extracts "(newcomer: X, reply: Y)" from a completion, case- and
// whitespace-insensitively. Throws ParseError when no answer is found.
std::pair<LabelClass, LabelClass> parse_model_reply(std::string_view text);

EnsembleResult ensemble_label(scorers::TextGenerator& generator, const LabelPairInput& pair,
                              std::string_view prompt_template, const EnsembleConfig& config = {},
                              const scorers::WarnFn& warn = scorers::stderr_warn());

struct MajorityVote {
    std::vector<LabelClass> labels;
    std::vector<bool> tie; // true where the modal label was not unique
};
MajorityVote majority_vote(const AnnotationTable& table);

// Returns nullopt when expected agreement is 1 (kappa undefined).
std::optional<double> fleiss_kappa(const AnnotationTable& table);

struct PrecisionResult {
    std::optional<double> precision; // nullopt when nothing is predicted
    int n_predicted = 0;
};
PrecisionResult precision_at_threshold(const std::vector<ConfidenceRecord>& records,
                                       const std::vector<LabelClass>& gold, LabelClass cls,
                                       double threshold);

// Highest-precision threshold among observed confidence values subject to
// n_predicted >= min_positives; precision ties resolved toward the lowest
// threshold. Throws InfeasibleError when no threshold qualifies.
double select_threshold(const std::vector<ConfidenceRecord>& records,
                        const std::vector<LabelClass>& gold, LabelClass cls,
                        int min_positives = 10);

// Mann-Whitney AUC with ties counted 1/2; nullopt when gold is single-class.
std::optional<double> roc_auc(const std::vector<ConfidenceRecord>& records,
                              const std::vector<LabelClass>& gold, LabelClass cls);

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
};

// Percentile bootstrap over index resamples. The metric may return nullopt on
// a degenerate resample; more than half undefined raises InstabilityError.
Interval bootstrap_ci(const std::function<std::optional<double>(const std::vector<std::size_t>&)>& metric,
                      std::size_t n_items, int n_resamples = 1000, double level = 0.95,
                      std::uint64_t seed = 1);

struct ClassEval {
    double threshold = 0.0;
    std::optional<double> precision;
    Interval precision_ci;
    std::optional<double> auc;
    Interval auc_ci;
    int n_predicted = 0;
    int n_gold = 0;
};

struct EvalReport {
    std::array<ClassEval, kNumClasses> per_class;
    int n_items = 0;
};

EvalReport evaluate(const std::vector<ConfidenceRecord>& records,
                    const std::vector<LabelClass>& gold, int min_positives = 10,
                    int n_resamples = 1000, std::uint64_t seed = 1);

struct TempReport {
    double temperature = 0.0;
    double threshold = 0.0;
    std::optional<double> precision;
    int n_predicted = 0;
};

struct SweepResult {
    double best_temperature = 0.0;
    bool tie = false; // best precision shared by several temperatures
    std::vector<TempReport> table;
};

std::vector<double> default_temperatures(); // 0.1 .. 2.0 step 0.1

// Maximizes counterspeech precision of the reply role over temperatures.
SweepResult temperature_sweep(scorers::TextGenerator& generator,
                              const std::vector<LabelPairInput>& pairs,
                              const std::vector<LabelClass>& reply_gold,
                              std::string_view prompt_template,
                              const std::vector<double>& temperatures = default_temperatures(),
                              int k = 5, int min_positives = 10,
                              const scorers::WarnFn& warn = scorers::stderr_warn());

}  // namespace replyfx::labeler

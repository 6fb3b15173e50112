#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ebp/harness.hpp"
#include "ebp/poisson.hpp"

namespace ebp::real {

/// One real-data record: counts in the observed section, horizon ratio, and
/// counts in the held-out section.
struct PredictionTask {
    std::vector<int> xs;
    double n_y = 1.0;
    std::vector<int> ys;
    std::string task_id;
};

struct ScoreRow {
    std::string task_id;
    std::string estimator_id;
    double rmse_norm = 0.0;  // RMSE(n_y * theta_hat, ys) / n_y
    double mae_norm = 0.0;
    double rmse_ratio_vs_mle = 1.0;
    double mae_ratio_vs_mle = 1.0;
};

enum class NhlPosition { All, Defender, Center, Winger };
NhlPosition nhl_position_from(const std::string& s);

/// CSV schema: season,player_id,position,goals (see docs/data-formats.md).
/// One task per consecutive-season pair over players present in both.
std::vector<PredictionTask> load_nhl(const std::string& csv_path, NhlPosition filter);

/// CSV schema: date,player_id,role,count with role in {bat,pitch}. Per season
/// and role: xs = counts up to the calendar midpoint, ys = the rest.
struct MlbTasks {
    std::vector<PredictionTask> batting;
    std::vector<PredictionTask> pitching;
};
MlbTasks load_mlb(const std::string& csv_path);

/// Head section = leading sentences holding ~head_tokens kept tokens;
/// vocabulary spans the whole document; n_y = tail/head sentence ratio.
struct WordFreqResult {
    std::optional<PredictionTask> task;
    std::string skip_reason;  // set when the text is too short
};
WordFreqResult load_wordfreq(const std::string& text, std::size_t head_tokens = 2000,
                             const std::vector<std::string>* stopwords = nullptr);

const std::vector<std::string>& english_stopwords();

/// Estimates from xs alone, then scores Y_hat = n_y * theta_hat against ys.
ScoreRow score_task(const PredictionTask& task, const Estimator& estimator,
                    const std::string& estimator_id);

std::vector<ScoreRow> score_tasks(const std::vector<PredictionTask>& tasks,
                                  const std::vector<std::string>& estimator_ids,
                                  const EstimatorContext& ctx, int threads = 0);

struct AggregateRow {
    std::string estimator_id;
    double rmse_improvement = 0.0;  // mean 100*(1 - ratio)
    double rmse_ci95 = 0.0;
    double mae_improvement = 0.0;
    double mae_ci95 = 0.0;
    std::size_t tasks = 0;
};

struct AggregateResult {
    std::vector<AggregateRow> rows;
    std::vector<harness::PairTest> ttests;  // on rmse_norm vs mle
    harness::PlFit pl_rmse;
};

AggregateResult aggregate_scores(const std::vector<ScoreRow>& rows);

void write_scores_csv(const std::vector<ScoreRow>& rows, const std::string& path);
void write_aggregate_csv(const AggregateResult& agg, const std::string& path);

}  // namespace ebp::real

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "iotid/csv.hpp"
#include "iotid/ml/metrics.hpp"
#include "iotid/ml/models.hpp"
#include "iotid/prng.hpp"

namespace iotid {

inline constexpr double kWeekSeconds = 604800.0;

struct Period {
    std::string label;
    int start_week = 1;  // inclusive
    int end_week = 1;    // inclusive
};

struct PeriodSpec {
    std::vector<Period> periods;
    double week_origin = 0.0;  // timestamp where week 1 starts

    // The paper's layout: three 9-week periods over a 27-week capture.
    static PeriodSpec default_27_weeks(double origin) {
        return PeriodSpec{{{"weeks1-9", 1, 9}, {"weeks10-18", 10, 18}, {"weeks19-27", 19, 27}},
                          origin};
    }

    bool in_period(const Period& p, int week) const {
        return week >= p.start_week && week <= p.end_week;
    }
};

inline int assign_week(double timestamp, double week_origin) {
    if (timestamp < week_origin)
        throw std::invalid_argument("timestamp precedes the week origin");
    return 1 + static_cast<int>(std::floor((timestamp - week_origin) / kWeekSeconds));
}

// Per-class seeded shuffle; round(fraction * n_c) rows go to train.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<int>& labels, double fraction, std::uint64_t seed) {
    if (labels.empty()) throw std::invalid_argument("stratified_split: empty input");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    Prng rng(seed ^ 0x5851f42d4c957f2dULL);
    std::vector<std::size_t> train, test;
    for (auto& [cls, indices] : by_class) {
        rng.shuffle(indices);
        std::size_t n_train = static_cast<std::size_t>(
            std::llround(fraction * static_cast<double>(indices.size())));
        for (std::size_t k = 0; k < indices.size(); ++k)
            (k < n_train ? train : test).push_back(indices[k]);
    }
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {train, test};
}

struct WeeklyScore {
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;
    std::size_t samples = 0;
};

struct EvalReport {
    std::string model;
    std::string schema;
    std::string period;
    std::uint64_t seed = 0;
    std::map<int, WeeklyScore> weekly;            // weeks with samples only
    std::optional<double> in_period_f1;           // mean macro over training weeks
    std::optional<double> out_period_f1;          // mean macro over remaining weeks
    std::optional<double> degradation_pp;         // (in - out) * 100
};

struct ExperimentResult {
    EvalReport report;
    std::unique_ptr<Model> model;
    std::vector<std::size_t> train_indices;              // dataset indices used to train
    std::map<int, std::vector<std::size_t>> eval_indices;  // dataset indices per week
};

// Trains on one period's 80% split and scores every week of the dataset.
// Training-period weeks are scored on that period's held-out 20% only.
inline ExperimentResult run_experiment_period(const Dataset& ds, ModelKind kind,
                                              const PeriodSpec& spec, const Period& period,
                                              int class_count, const TrainOptions& opts) {
    std::vector<std::size_t> period_rows;
    std::vector<int> period_labels;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        int week = assign_week(ds.timestamp(i), spec.week_origin);
        if (spec.in_period(period, week)) {
            period_rows.push_back(i);
            period_labels.push_back(ds.label(i));
        }
    }
    if (period_rows.empty())
        throw std::runtime_error("period '" + period.label + "' has no data");

    auto [train_local, test_local] = stratified_split(period_labels, 0.8, opts.seed);
    std::vector<std::size_t> train_idx, heldout_idx;
    for (auto k : train_local) train_idx.push_back(period_rows[k]);
    for (auto k : test_local) heldout_idx.push_back(period_rows[k]);

    ExperimentResult result;
    result.model = Model::train(kind, ds, train_idx, heldout_idx, class_count, opts);
    result.train_indices = train_idx;

    std::vector<bool> heldout(ds.size(), false);
    for (auto i : heldout_idx) heldout[i] = true;

    EvalReport& rep = result.report;
    rep.model = model_kind_name(kind);
    rep.schema = schema_name(ds.schema);
    rep.period = period.label;
    rep.seed = opts.seed;

    std::map<int, std::vector<std::size_t>> by_week;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        int week = assign_week(ds.timestamp(i), spec.week_origin);
        if (spec.in_period(period, week) && !heldout[i]) continue;  // never score training rows
        by_week[week].push_back(i);
    }

    double in_sum = 0.0, out_sum = 0.0;
    std::size_t in_n = 0, out_n = 0;
    for (auto& [week, rows] : by_week) {
        if (rows.empty()) continue;
        std::vector<int> pred, truth;
        pred.reserve(rows.size());
        for (auto i : rows) {
            pred.push_back(result.model->predict(ds, i).class_index);
            truth.push_back(ds.label(i));
        }
        auto f1 = f1_scores(pred, truth, class_count);
        rep.weekly[week] = WeeklyScore{f1.macro_f1, f1.weighted_f1, rows.size()};
        result.eval_indices[week] = std::move(rows);
        if (spec.in_period(period, week)) {
            in_sum += f1.macro_f1;
            ++in_n;
        } else {
            out_sum += f1.macro_f1;
            ++out_n;
        }
    }
    if (in_n > 0) rep.in_period_f1 = in_sum / static_cast<double>(in_n);
    if (out_n > 0) rep.out_period_f1 = out_sum / static_cast<double>(out_n);
    if (rep.in_period_f1 && rep.out_period_f1)
        rep.degradation_pp = (*rep.in_period_f1 - *rep.out_period_f1) * 100.0;
    return result;
}

inline std::vector<ExperimentResult> run_experiment(const Dataset& ds, ModelKind kind,
                                                    const PeriodSpec& spec, int class_count,
                                                    const TrainOptions& opts) {
    std::vector<ExperimentResult> results;
    for (const auto& p : spec.periods) {
        TrainOptions per = opts;
        per.training_period = p.label;
        results.push_back(run_experiment_period(ds, kind, spec, p, class_count, per));
    }
    return results;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json report_to_json(const EvalReport& rep) {
    nlohmann::json weekly = nlohmann::json::object();
    for (const auto& [week, score] : rep.weekly)
        weekly[std::to_string(week)] = {{"macro_f1", score.macro_f1},
                                        {"weighted_f1", score.weighted_f1},
                                        {"samples", score.samples}};
    nlohmann::json j = {{"model", rep.model}, {"schema", rep.schema},
                        {"period", rep.period}, {"seed", rep.seed},
                        {"weekly", weekly}};
    if (rep.in_period_f1) j["in_period_f1"] = *rep.in_period_f1;
    if (rep.out_period_f1) j["out_period_f1"] = *rep.out_period_f1;
    if (rep.degradation_pp) j["degradation_pp"] = *rep.degradation_pp;
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport rep;
    rep.model = j.at("model").get<std::string>();
    rep.schema = j.at("schema").get<std::string>();
    rep.period = j.at("period").get<std::string>();
    rep.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [key, val] : j.at("weekly").items())
        rep.weekly[std::stoi(key)] =
            WeeklyScore{val.at("macro_f1").get<double>(), val.at("weighted_f1").get<double>(),
                        val.at("samples").get<std::size_t>()};
    if (j.contains("in_period_f1")) rep.in_period_f1 = j["in_period_f1"].get<double>();
    if (j.contains("out_period_f1")) rep.out_period_f1 = j["out_period_f1"].get<double>();
    if (j.contains("degradation_pp")) rep.degradation_pp = j["degradation_pp"].get<double>();
    return rep;
}

inline void write_report_csv(const std::string& path, const EvalReport& rep) {
    CsvWriter w(path);
    w.row({"week", "macro_f1", "weighted_f1", "samples"});
    for (const auto& [week, score] : rep.weekly)
        w.row({std::to_string(week), fmt_double(score.macro_f1), fmt_double(score.weighted_f1),
               std::to_string(score.samples)});
}

struct DegradationRow {
    std::string model, schema, period;
    std::optional<double> in_f1, out_f1, degradation_pp;
};

// One row per report plus a cross-period mean of the defined degradations.
inline std::vector<DegradationRow> degradation_summary(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("degradation_summary: no reports");
    std::vector<DegradationRow> rows;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : reports) {
        rows.push_back({r.model, r.schema, r.period, r.in_period_f1, r.out_period_f1,
                        r.degradation_pp});
        if (r.degradation_pp) {
            sum += *r.degradation_pp;
            ++n;
        }
    }
    DegradationRow mean{"mean", "", "", std::nullopt, std::nullopt, std::nullopt};
    if (n > 0) mean.degradation_pp = sum / static_cast<double>(n);
    rows.push_back(std::move(mean));
    return rows;
}

inline void write_degradation_csv(const std::string& path,
                                  const std::vector<DegradationRow>& rows) {
    CsvWriter w(path);
    w.row({"model", "schema", "period", "in_f1", "out_f1", "degradation_pp"});
    auto opt = [](const std::optional<double>& v) {
        return v ? fmt_double(*v) : std::string{};
    };
    for (const auto& r : rows)
        w.row({r.model, r.schema, r.period, opt(r.in_f1), opt(r.out_f1), opt(r.degradation_pp)});
}

} // namespace iotid

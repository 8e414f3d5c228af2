#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "iotid/eval.hpp"
#include "iotid/prng.hpp"

using namespace iotid;

namespace {

// Flow rows spread over `weeks`, strongly separable by dest_port/bytes except
// where a caller remaps labels afterwards.
Dataset make_weekly_flows(int classes, int weeks, int per_class_week, double origin) {
    Dataset ds;
    ds.schema = Schema::Flow;
    Prng rng(404);
    for (int w = 0; w < weeks; ++w)
        for (int c = 0; c < classes; ++c)
            for (int i = 0; i < per_class_week; ++i) {
                FlowFeatureRow r;
                r.device_id = c;
                r.start_time = origin + w * kWeekSeconds + rng.uniform(0, kWeekSeconds - 1);
                r.dest_port = 8000 + c;
                r.src_port = 40000 + rng.next_below(20000);
                r.bytes_out = rng.gaussian(500.0 * (c + 1), 25.0);
                r.bytes_in = rng.gaussian(200.0 * (c + 1), 10.0);
                r.pkts_out = 5;
                r.pkts_in = 4;
                r.ipt = {0.2, 0.01, 0.0001, 0, 2};
                r.bytes = {100.0 * (c + 1), 5, 25, 0, 2};
                r.duration = 1.5;
                r.domain = "d" + std::to_string(c) + ".com";
                ds.flow.push_back(std::move(r));
            }
    return ds;
}

} // namespace

TEST_CASE("experiment never scores training rows and keeps splits disjoint") {
    const double origin = 2.0e9;
    auto ds = make_weekly_flows(3, 4, 20, origin);
    PeriodSpec spec{{{"weeks1-2", 1, 2}, {"weeks3-4", 3, 4}}, origin};
    TrainOptions opts;
    opts.seed = 6;
    opts.forest.n_trees = 10;
    opts.training_period = "weeks1-2";

    auto res = run_experiment_period(ds, ModelKind::Rf, spec, spec.periods[0], 3, opts);

    std::set<std::size_t> trained(res.train_indices.begin(), res.train_indices.end());
    std::set<std::size_t> scored;
    for (const auto& [week, rows] : res.eval_indices)
        for (auto i : rows) {
            REQUIRE(trained.count(i) == 0);  // leakage audit
            REQUIRE(scored.insert(i).second);  // each row scored at most once
            REQUIRE(assign_week(ds.timestamp(i), origin) == week);
        }
    // everything not trained on is scored exactly once
    REQUIRE(trained.size() + scored.size() == ds.size());

    // 3 classes x 2 weeks x 20 rows in-period, 80% to train
    REQUIRE(trained.size() == 96);
    REQUIRE(res.report.weekly.size() == 4);
    REQUIRE(res.report.weekly.at(1).samples + res.report.weekly.at(2).samples == 24);
    REQUIRE(res.report.weekly.at(3).samples == 60);
    REQUIRE(res.report.in_period_f1.has_value());
    REQUIRE(res.report.out_period_f1.has_value());
    REQUIRE(*res.report.in_period_f1 > 0.95);  // separable data
    REQUIRE(*res.report.out_period_f1 > 0.95);  // stationary: no degradation
    REQUIRE(std::abs(*res.report.degradation_pp) < 5.0);
    REQUIRE(res.report.period == "weeks1-2");
}

TEST_CASE("a label swap after the training period shows up as degradation") {
    const double origin = 2.0e9;
    auto ds = make_weekly_flows(2, 4, 25, origin);
    // from week 3 on, the two devices trade behavior
    for (auto& r : ds.flow)
        if (assign_week(r.start_time, origin) >= 3) r.device_id = 1 - r.device_id;
    PeriodSpec spec{{{"weeks1-2", 1, 2}, {"weeks3-4", 3, 4}}, origin};
    TrainOptions opts;
    opts.seed = 1;
    opts.forest.n_trees = 10;
    auto res = run_experiment_period(ds, ModelKind::Rf, spec, spec.periods[0], 2, opts);
    REQUIRE(*res.report.in_period_f1 > 0.95);
    REQUIRE(*res.report.out_period_f1 < 0.1);
    REQUIRE(*res.report.degradation_pp > 85.0);
}

TEST_CASE("experiments are reproducible for a fixed seed") {
    const double origin = 2.0e9;
    auto ds = make_weekly_flows(2, 2, 15, origin);
    PeriodSpec spec{{{"weeks1-2", 1, 2}}, origin};
    TrainOptions opts;
    opts.seed = 33;
    opts.forest.n_trees = 8;
    auto a = run_experiment_period(ds, ModelKind::Rf, spec, spec.periods[0], 2, opts);
    auto b = run_experiment_period(ds, ModelKind::Rf, spec, spec.periods[0], 2, opts);
    REQUIRE(a.train_indices == b.train_indices);
    REQUIRE(a.report.weekly.size() == b.report.weekly.size());
    for (const auto& [week, score] : a.report.weekly) {
        REQUIRE(score.macro_f1 == b.report.weekly.at(week).macro_f1);
        REQUIRE(score.weighted_f1 == b.report.weekly.at(week).weighted_f1);
    }

    opts.seed = 34;
    auto c = run_experiment_period(ds, ModelKind::Rf, spec, spec.periods[0], 2, opts);
    REQUIRE(a.train_indices != c.train_indices);
}

TEST_CASE("an empty period is an error") {
    const double origin = 2.0e9;
    auto ds = make_weekly_flows(2, 2, 5, origin);
    PeriodSpec spec{{{"weeks5-6", 5, 6}}, origin};
    TrainOptions opts;
    REQUIRE_THROWS_WITH(run_experiment_period(ds, ModelKind::Dt, spec, spec.periods[0], 2, opts),
                        Catch::Matchers::ContainsSubstring("no data"));
}

TEST_CASE("run_experiment trains one model per period with its own label") {
    const double origin = 2.0e9;
    auto ds = make_weekly_flows(2, 4, 10, origin);
    PeriodSpec spec{{{"weeks1-2", 1, 2}, {"weeks3-4", 3, 4}}, origin};
    TrainOptions opts;
    opts.seed = 2;
    opts.forest.n_trees = 5;
    auto results = run_experiment(ds, ModelKind::Dt, spec, 2, opts);
    REQUIRE(results.size() == 2);
    REQUIRE(results[0].report.period == "weeks1-2");
    REQUIRE(results[1].report.period == "weeks3-4");
    REQUIRE(results[0].model->training_period() == "weeks1-2");
    REQUIRE(results[1].model->training_period() == "weeks3-4");
}

TEST_CASE("default 27-week layout") {
    auto spec = PeriodSpec::default_27_weeks(1000.0);
    REQUIRE(spec.week_origin == 1000.0);
    REQUIRE(spec.periods.size() == 3);
    REQUIRE(spec.periods[0].label == "weeks1-9");
    REQUIRE(spec.periods[1].start_week == 10);
    REQUIRE(spec.periods[2].end_week == 27);
    REQUIRE(spec.in_period(spec.periods[1], 10));
    REQUIRE(spec.in_period(spec.periods[1], 18));
    REQUIRE_FALSE(spec.in_period(spec.periods[1], 19));
}

TEST_CASE("report json round-trip") {
    EvalReport rep;
    rep.model = "rf";
    rep.schema = "flow";
    rep.period = "weeks1-9";
    rep.seed = 123456789012345ULL;
    rep.weekly[1] = {0.9125, 0.93, 40};
    rep.weekly[10] = {0.5, 0.5625, 38};
    rep.in_period_f1 = 0.9125;
    rep.out_period_f1 = 0.5;
    rep.degradation_pp = 41.25;

    auto back = report_from_json(report_to_json(rep));
    REQUIRE(back.model == rep.model);
    REQUIRE(back.schema == rep.schema);
    REQUIRE(back.period == rep.period);
    REQUIRE(back.seed == rep.seed);
    REQUIRE(back.weekly.size() == 2);
    REQUIRE(back.weekly.at(1).macro_f1 == 0.9125);
    REQUIRE(back.weekly.at(10).weighted_f1 == 0.5625);
    REQUIRE(back.weekly.at(10).samples == 38);
    REQUIRE(back.in_period_f1 == rep.in_period_f1);
    REQUIRE(back.degradation_pp == rep.degradation_pp);

    EvalReport sparse;
    sparse.model = "dt";
    sparse.schema = "second";
    sparse.period = "p";
    auto sback = report_from_json(report_to_json(sparse));
    REQUIRE_FALSE(sback.in_period_f1.has_value());
    REQUIRE_FALSE(sback.degradation_pp.has_value());
}

TEST_CASE("degradation summary appends a mean row") {
    auto mk = [](double pp) {
        EvalReport r;
        r.model = "dt";
        r.schema = "flow";
        r.period = "p";
        r.in_period_f1 = 0.9;
        r.out_period_f1 = 0.9 - pp / 100.0;
        r.degradation_pp = pp;
        return r;
    };
    auto rows = degradation_summary({mk(12), mk(18), mk(21)});
    REQUIRE(rows.size() == 4);
    REQUIRE(rows.back().model == "mean");
    REQUIRE(rows.back().degradation_pp.has_value());
    REQUIRE(*rows.back().degradation_pp == Catch::Approx(17.0));

    EvalReport no_deg;
    no_deg.model = "dt";
    no_deg.schema = "flow";
    no_deg.period = "p";
    auto only = degradation_summary({no_deg});
    REQUIRE(only.size() == 2);
    REQUIRE_FALSE(only.back().degradation_pp.has_value());

    REQUIRE_THROWS_AS(degradation_summary({}), std::invalid_argument);
}

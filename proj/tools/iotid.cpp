// iotid — IoT device identification from network captures.
//
// Pipeline: synth (optional fixtures) -> ingest -> extract -> train ->
// evaluate -> report. See README.md for the file formats each step produces.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "iotid/eval.hpp"
#include "iotid/pipeline.hpp"
#include "iotid/synth.hpp"

namespace fs = std::filesystem;
using namespace iotid;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

int log_level() {
    const char* env = std::getenv("IOTID_LOG");
    if (!env) return 1;
    std::string v = env;
    if (v == "quiet" || v == "error") return 0;
    if (v == "debug") return 2;
    return 1;
}

void info(const std::string& msg) {
    if (log_level() >= 1) std::cout << msg << "\n";
}

void require_writable(const fs::path& path, bool force) {
    if (fs::exists(path) && !force)
        throw CLI::ValidationError("output exists (use --force to overwrite): " + path.string());
}

void write_meta(const fs::path& out, std::uint64_t seed, const std::string& command) {
    nlohmann::json j = {{"seed", seed}, {"command", command}};
    std::ofstream f(out.string() + ".meta.json");
    f << j.dump(2) << "\n";
}

std::vector<Period> parse_periods(const std::string& text) {
    // "1-9,10-18,19-27" -> three periods labeled by their week ranges
    std::vector<Period> periods;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t comma = text.find(',', pos);
        std::string part = text.substr(pos, comma == std::string::npos ? std::string::npos
                                                                       : comma - pos);
        std::size_t dash = part.find('-');
        if (dash == std::string::npos)
            throw CLI::ValidationError("bad period '" + part + "' (expected START-END)");
        Period p;
        p.start_week = std::stoi(part.substr(0, dash));
        p.end_week = std::stoi(part.substr(dash + 1));
        p.label = "weeks" + part;
        if (p.start_week < 1 || p.end_week < p.start_week)
            throw CLI::ValidationError("bad period '" + part + "'");
        periods.push_back(std::move(p));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (periods.empty()) throw CLI::ValidationError("no periods given");
    return periods;
}

Dataset load_dataset(Schema schema, const fs::path& dir) {
    Dataset ds;
    ds.schema = schema;
    switch (schema) {
        case Schema::Hour: ds.hour = read_hour_csv((dir / "hour.csv").string()); break;
        case Schema::Second: ds.second = read_second_csv((dir / "second.csv").string()); break;
        case Schema::Grid:
            ds.grids = read_grids((dir / "grids.bin").string(), (dir / "grids.idx.csv").string());
            break;
        case Schema::Flow: ds.flow = read_flow_feature_csv((dir / "flow.csv").string()); break;
    }
    if (ds.size() == 0) throw std::runtime_error("feature set is empty: " + dir.string());
    return ds;
}

double dataset_week_origin(const Dataset& ds, std::optional<double> flag) {
    if (flag) return *flag;
    double origin = ds.timestamp(0);
    for (std::size_t i = 1; i < ds.size(); ++i) origin = std::min(origin, ds.timestamp(i));
    return origin;
}

int class_count_of(const Dataset& ds, const std::optional<std::string>& manifest_path) {
    if (manifest_path) return static_cast<int>(DeviceManifest::load(*manifest_path).device_count());
    int mx = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) mx = std::max(mx, ds.label(i));
    return mx + 1;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& scenario_path, const std::string& out_dir, bool force) {
    Scenario scenario = load_scenario(scenario_path);
    fs::create_directories(out_dir);
    fs::path pcap_path = fs::path(out_dir) / "synth.pcap";
    fs::path manifest_path = fs::path(out_dir) / "manifest.json";
    fs::path labels_path = fs::path(out_dir) / "labels.csv";
    for (const auto& p : {pcap_path, manifest_path, labels_path}) require_writable(p, force);

    SynthOutput out = generate(scenario);
    std::ofstream pcap(pcap_path, std::ios::binary);
    pcap.write(reinterpret_cast<const char*>(out.pcap.data()),
               static_cast<std::streamsize>(out.pcap.size()));
    out.manifest.save(manifest_path.string());
    write_labels_csv(labels_path.string(), out.labels);
    write_meta(pcap_path, scenario.seed, "synth");
    info("wrote " + std::to_string(out.labels.size()) + " packets for " +
         std::to_string(scenario.profiles.size()) + " devices to " + out_dir);
    return kOk;
}

int cmd_ingest(const std::vector<std::string>& pcaps, const std::string& manifest_path,
               const std::string& out_dir, bool force, std::uint64_t seed) {
    DeviceManifest manifest = DeviceManifest::load(manifest_path);
    fs::create_directories(out_dir);
    fs::path store_path = fs::path(out_dir) / "packets.bin";
    require_writable(store_path, force);

    IngestStore store;
    for (const auto& path : pcaps) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open pcap: " + path);
        store.consume_pcap(in, manifest);
    }
    save_packet_store(store_path.string(), store);
    write_meta(store_path, seed, "ingest");

    std::map<int, std::uint64_t> per_device;
    for (const auto& p : store.packets) ++per_device[p.device_id];
    info(std::to_string(store.counters.emitted) + " packets (" +
         std::to_string(store.counters.skipped) + " skipped, " +
         std::to_string(store.counters.malformed) + " malformed)");
    for (const auto& e : manifest.entries())
        info("  device " + std::to_string(e.device_id) + " (" + e.name + "): " +
             std::to_string(per_device.count(e.device_id) ? per_device[e.device_id] : 0) +
             " packets");
    info("dns observations: " + std::to_string(store.dns.size()) +
         ", tls client hellos: " + std::to_string(store.tls.size()));
    return kOk;
}

int cmd_extract(const std::string& schema_name_arg, const std::string& store_path,
                const std::string& out_dir, bool force, std::uint64_t seed) {
    Schema schema = schema_from_name(schema_name_arg);
    IngestStore store = load_packet_store(store_path);
    ExtractedFeatures features = extract_all(store);
    fs::create_directories(out_dir);
    fs::path out = fs::path(out_dir);
    std::size_t rows = 0;
    switch (schema) {
        case Schema::Hour:
            require_writable(out / "hour.csv", force);
            write_hour_csv((out / "hour.csv").string(), features.hour);
            rows = features.hour.size();
            write_meta(out / "hour.csv", seed, "extract");
            break;
        case Schema::Second:
            require_writable(out / "second.csv", force);
            write_second_csv((out / "second.csv").string(), features.second);
            rows = features.second.size();
            write_meta(out / "second.csv", seed, "extract");
            break;
        case Schema::Grid:
            require_writable(out / "grids.bin", force);
            write_grids((out / "grids.bin").string(), (out / "grids.idx.csv").string(),
                        features.grids);
            rows = features.grids.size();
            write_meta(out / "grids.bin", seed, "extract");
            break;
        case Schema::Flow:
            require_writable(out / "flow.csv", force);
            write_flow_feature_csv((out / "flow.csv").string(), features.flow);
            rows = features.flow.size();
            write_meta(out / "flow.csv", seed, "extract");
            break;
    }
    info(std::string(schema_name(schema)) + ": " + std::to_string(rows) + " rows");
    return kOk;
}

int cmd_train(const std::string& schema_arg, const std::string& model_arg,
              const std::string& features_dir, const std::optional<std::string>& manifest_path,
              const std::string& periods_arg, std::size_t train_period_index,
              std::optional<double> week_origin_flag, std::uint64_t seed, unsigned workers,
              const std::string& out_path, bool force, int epochs) {
    Schema schema = schema_from_name(schema_arg);
    ModelKind kind = model_kind_from_name(model_arg);
    Dataset ds = load_dataset(schema, features_dir);
    int classes = class_count_of(ds, manifest_path);

    PeriodSpec spec;
    spec.periods = parse_periods(periods_arg);
    spec.week_origin = dataset_week_origin(ds, week_origin_flag);
    if (train_period_index >= spec.periods.size())
        throw CLI::ValidationError("--train-period index out of range");
    const Period& period = spec.periods[train_period_index];

    require_writable(out_path, force);
    std::vector<std::size_t> period_rows;
    std::vector<int> period_labels;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        int week = assign_week(ds.timestamp(i), spec.week_origin);
        if (spec.in_period(period, week)) {
            period_rows.push_back(i);
            period_labels.push_back(ds.label(i));
        }
    }
    if (period_rows.empty()) throw std::runtime_error("period '" + period.label + "' has no data");
    auto [train_local, test_local] = stratified_split(period_labels, 0.8, seed);
    std::vector<std::size_t> train_idx, val_idx;
    for (auto k : train_local) train_idx.push_back(period_rows[k]);
    for (auto k : test_local) val_idx.push_back(period_rows[k]);

    TrainOptions opts;
    opts.seed = seed;
    opts.training_period = period.label;
    opts.workers = workers;
    opts.network.epochs = epochs;
    auto model = Model::train(kind, ds, train_idx, val_idx, classes, opts);
    model->save(out_path);
    write_meta(out_path, seed, "train");

    // Training-row sidecar: lets `evaluate` keep training rows out of
    // in-period weekly scores.
    nlohmann::json side = {{"seed", seed},
                           {"period", period.label},
                           {"week_origin", spec.week_origin},
                           {"train_rows", train_idx}};
    std::ofstream sf(out_path + ".trainrows.json");
    sf << side.dump() << "\n";
    info("trained " + model_arg + " on " + std::to_string(train_idx.size()) + " rows (period " +
         period.label + "), saved to " + out_path);
    return kOk;
}

int cmd_evaluate(const std::string& model_path, const std::string& features_dir,
                 const std::string& periods_arg, std::optional<double> week_origin_flag,
                 const std::optional<std::string>& manifest_path, const std::string& out_path,
                 bool force) {
    if (!fs::exists(model_path))
        throw std::runtime_error("model file not found: " + model_path +
                                 " (run `iotid train` first)");
    auto model = Model::load(model_path);
    Dataset ds = load_dataset(model->schema(), features_dir);
    int classes = class_count_of(ds, manifest_path);
    if (classes != model->class_count())
        throw std::runtime_error("model expects " + std::to_string(model->class_count()) +
                                 " classes, dataset has " + std::to_string(classes));

    PeriodSpec spec;
    spec.periods = parse_periods(periods_arg);
    spec.week_origin = dataset_week_origin(ds, week_origin_flag);

    std::vector<bool> is_training_row(ds.size(), false);
    std::uint64_t seed = 0;
    const Period* train_period = nullptr;
    std::ifstream side(model_path + ".trainrows.json");
    if (side) {
        nlohmann::json j;
        side >> j;
        seed = j.value("seed", 0ULL);
        if (j.contains("week_origin")) spec.week_origin = j["week_origin"].get<double>();
        for (auto idx : j.at("train_rows").get<std::vector<std::size_t>>())
            if (idx < ds.size()) is_training_row[idx] = true;
    }
    for (const auto& p : spec.periods)
        if (p.label == model->training_period()) train_period = &p;

    EvalReport rep;
    rep.model = model_kind_name(model->kind());
    rep.schema = schema_name(model->schema());
    rep.period = model->training_period();
    rep.seed = seed;
    std::map<int, std::vector<std::size_t>> by_week;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (is_training_row[i]) continue;
        by_week[assign_week(ds.timestamp(i), spec.week_origin)].push_back(i);
    }
    double in_sum = 0, out_sum = 0;
    std::size_t in_n = 0, out_n = 0;
    for (const auto& [week, rows] : by_week) {
        std::vector<int> pred, truth;
        for (auto i : rows) {
            pred.push_back(model->predict(ds, i).class_index);
            truth.push_back(ds.label(i));
        }
        auto f1 = f1_scores(pred, truth, classes);
        rep.weekly[week] = WeeklyScore{f1.macro_f1, f1.weighted_f1, rows.size()};
        bool in_period = train_period && week >= train_period->start_week &&
                         week <= train_period->end_week;
        if (in_period) {
            in_sum += f1.macro_f1;
            ++in_n;
        } else {
            out_sum += f1.macro_f1;
            ++out_n;
        }
    }
    if (in_n) rep.in_period_f1 = in_sum / static_cast<double>(in_n);
    if (out_n) rep.out_period_f1 = out_sum / static_cast<double>(out_n);
    if (rep.in_period_f1 && rep.out_period_f1)
        rep.degradation_pp = (*rep.in_period_f1 - *rep.out_period_f1) * 100.0;

    require_writable(out_path, force);
    // Atomic report write: temp file then rename.
    fs::path tmp = fs::path(out_path).string() + ".tmp";
    {
        std::ofstream f(tmp);
        f << report_to_json(rep).dump(2) << "\n";
    }
    fs::rename(tmp, out_path);
    std::string csv_path = fs::path(out_path).replace_extension(".csv").string();
    write_report_csv(csv_path, rep);
    info("report written to " + out_path + " and " + csv_path);
    if (rep.degradation_pp)
        info("degradation: " + fmt_double(*rep.degradation_pp) + " pp");
    return kOk;
}

int cmd_report(const std::vector<std::string>& report_paths, const std::string& out_dir,
               bool force) {
    std::vector<EvalReport> reports;
    for (const auto& path : report_paths) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open report: " + path);
        nlohmann::json j;
        in >> j;
        reports.push_back(report_from_json(j));
    }
    fs::create_directories(out_dir);
    fs::path degr = fs::path(out_dir) / "degradation.csv";
    require_writable(degr, force);
    write_degradation_csv(degr.string(), degradation_summary(reports));

    // One figure CSV per (model, schema): weekly series, one column per
    // training period.
    std::map<std::pair<std::string, std::string>, std::vector<const EvalReport*>> panels;
    for (const auto& r : reports) panels[{r.model, r.schema}].push_back(&r);
    for (const auto& [key, group] : panels) {
        fs::path fig = fs::path(out_dir) / ("fig_" + key.first + "_" + key.second + ".csv");
        require_writable(fig, force);
        CsvWriter w(fig.string());
        std::vector<std::string> header = {"week"};
        std::set<int> weeks;
        for (const auto* r : group) {
            header.push_back("macro_f1_" + r->period);
            for (const auto& [wk, s] : r->weekly) weeks.insert(wk);
        }
        w.row(header);
        for (int wk : weeks) {
            std::vector<std::string> row = {std::to_string(wk)};
            for (const auto* r : group) {
                auto it = r->weekly.find(wk);
                row.push_back(it == r->weekly.end() ? std::string{}
                                                    : fmt_double(it->second.macro_f1));
            }
            w.row(row);
        }
    }
    info("degradation table and " + std::to_string(panels.size()) + " figure series in " +
         out_dir);
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"IoT device identification from network traffic"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    unsigned workers = 0;
    bool force = false;
    app.add_option("--seed", seed, "deterministic seed recorded in outputs")->capture_default_str();
    app.add_option("--workers", workers, "worker threads (0 = hardware)")->capture_default_str();
    app.add_flag("--force", force, "overwrite existing outputs");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic capture from a scenario");
    std::string scenario_path, out_dir = "out";
    synth->add_option("--scenario", scenario_path, "scenario JSON")->required();
    synth->add_option("--out", out_dir, "output directory")->capture_default_str();

    // ingest
    auto* ingest = app.add_subcommand("ingest", "parse pcaps into a packet store");
    std::vector<std::string> pcaps;
    std::string manifest_path;
    std::string ingest_out = "out";
    ingest->add_option("pcaps", pcaps, "pcap files")->required();
    ingest->add_option("--manifest", manifest_path, "device manifest JSON")
        ->required()
        ->check(CLI::ExistingFile);
    ingest->add_option("--out", ingest_out, "output directory")->capture_default_str();

    // extract
    auto* extract = app.add_subcommand("extract", "build one feature schema from a packet store");
    std::string schema_arg, store_path, extract_out = "out";
    extract->add_option("--schema", schema_arg, "hour | second | grid | flow")->required();
    extract->add_option("--store", store_path, "packets.bin from ingest")
        ->required()
        ->check(CLI::ExistingFile);
    extract->add_option("--out", extract_out, "output directory")->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "train a model on one period");
    std::string train_schema, model_arg, features_dir, model_out = "model.bin";
    std::string periods_arg = "1-9,10-18,19-27";
    std::size_t train_period_index = 0;
    std::optional<std::string> manifest_opt;
    std::optional<double> week_origin;
    int epochs = 50;
    train->add_option("--schema", train_schema, "hour | second | grid | flow")->required();
    train->add_option("--model", model_arg, "nbm | dt | rf | fcnn | cnn | two-stage")->required();
    train->add_option("--features", features_dir, "directory with extracted features")->required();
    train->add_option("--manifest", manifest_opt, "device manifest (fixes class count)");
    train->add_option("--periods", periods_arg, "week ranges, e.g. 1-9,10-18,19-27")
        ->capture_default_str();
    train->add_option("--train-period", train_period_index, "index into --periods")
        ->capture_default_str();
    train->add_option("--week-origin", week_origin, "timestamp of week 1 (default: first row)");
    train->add_option("--epochs", epochs, "training epochs for fcnn/cnn")->capture_default_str();
    train->add_option("--out", model_out, "model file")->capture_default_str();

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "weekly F1 series for a trained model");
    std::string eval_model, eval_features, report_out = "report.json";
    std::string eval_periods = "1-9,10-18,19-27";
    std::optional<std::string> eval_manifest;
    std::optional<double> eval_origin;
    evaluate->add_option("--model", eval_model, "trained model file")->required();
    evaluate->add_option("--features", eval_features, "directory with extracted features")
        ->required();
    evaluate->add_option("--periods", eval_periods, "week ranges")->capture_default_str();
    evaluate->add_option("--manifest", eval_manifest, "device manifest (fixes class count)");
    evaluate->add_option("--week-origin", eval_origin, "timestamp of week 1");
    evaluate->add_option("--out", report_out, "report JSON path")->capture_default_str();

    // report
    auto* report = app.add_subcommand("report", "merge reports into the degradation table");
    std::vector<std::string> report_inputs;
    std::string report_dir = "out";
    report->add_option("reports", report_inputs, "report JSON files")->required();
    report->add_option("--out", report_dir, "output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kOk : kUsage;  // --help exits 0, bad usage exits 1
    }

    try {
        if (*synth) return cmd_synth(scenario_path, out_dir, force);
        if (*ingest) return cmd_ingest(pcaps, manifest_path, ingest_out, force, seed);
        if (*extract) return cmd_extract(schema_arg, store_path, extract_out, force, seed);
        if (*train)
            return cmd_train(train_schema, model_arg, features_dir, manifest_opt, periods_arg,
                             train_period_index, week_origin, seed, workers, model_out, force,
                             epochs);
        if (*evaluate)
            return cmd_evaluate(eval_model, eval_features, eval_periods, eval_origin,
                                eval_manifest, report_out, force);
        if (*report) return cmd_report(report_inputs, report_dir, force);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const PcapFormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kUsage;
}

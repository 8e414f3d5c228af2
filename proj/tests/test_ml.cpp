#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "iotid/eval.hpp"
#include "iotid/ml/models.hpp"
#include "iotid/prng.hpp"

using namespace iotid;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "iotid-ml-tests";
    fs::create_directories(dir);
    return dir;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace

// --- Naive Bayes ---

TEST_CASE("nbm matches a hand-computed two-class posterior") {
    // class A doc {x,x,y}, class B doc {y,y,x}; query {x,y,y}.
    // With add-one smoothing over a 3-token vocabulary (incl. <unk>):
    //   P(q|A)P(A) = 1/2 * 1/2 * (1/3)^2 = 1/36
    //   P(q|B)P(B) = 1/2 * 1/3 * (1/2)^2 = 1/24
    // so P(B|q) = (1/24) / (1/36 + 1/24) = 3/5.
    Vocabulary vocab;
    int x = vocab.add("x"), y = vocab.add("y");
    std::vector<std::vector<std::pair<int, double>>> bags = {{{x, 2.0}, {y, 1.0}},
                                                             {{x, 1.0}, {y, 2.0}}};
    auto nbm = NaiveBayesMultinomial::train(bags, {0, 1}, 2, vocab.size());

    std::vector<std::pair<int, double>> query = {{x, 1.0}, {y, 2.0}};
    auto post = nbm.posterior(query);
    REQUIRE(post[0] == Catch::Approx(0.4));
    REQUIRE(post[1] == Catch::Approx(0.6));
    auto pred = nbm.predict(query);
    REQUIRE(pred.class_index == 1);
    REQUIRE(pred.confidence == Catch::Approx(0.6));
}

TEST_CASE("nbm with one class predicts it with full confidence") {
    Vocabulary vocab;
    int x = vocab.add("x");
    auto nbm = NaiveBayesMultinomial::train({{{x, 3.0}}}, {0}, 1, vocab.size());
    auto pred = nbm.predict({{x, 1.0}});
    REQUIRE(pred.class_index == 0);
    REQUIRE(pred.confidence == Catch::Approx(1.0));
}

TEST_CASE("nbm posterior ties resolve to the lowest class index") {
    Vocabulary vocab;
    int x = vocab.add("x"), y = vocab.add("y");
    auto nbm = NaiveBayesMultinomial::train({{{x, 1.0}}, {{y, 1.0}}}, {0, 1}, 2, vocab.size());
    auto pred = nbm.predict({});  // empty bag -> priors only -> exact tie
    REQUIRE(pred.class_index == 0);
    REQUIRE(pred.confidence == Catch::Approx(0.5));
}

// --- Decision tree ---

TEST_CASE("decision tree splits a separable 1-D set at the midpoint") {
    FeatureMatrix rows = {{1}, {2}, {3}, {10}, {11}, {12}};
    std::vector<int> labels = {0, 0, 0, 1, 1, 1};
    auto tree = DecisionTree::train(rows, labels, 2);
    REQUIRE(tree.node_count() == 3);  // one split, two leaves
    REQUIRE(tree.predict({2.5}).class_index == 0);
    REQUIRE(tree.predict({6.4}).class_index == 0);   // threshold at 6.5
    REQUIRE(tree.predict({6.6}).class_index == 1);
    REQUIRE(tree.predict({100}).class_index == 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto p = tree.predict(rows[i]);
        REQUIRE(p.class_index == labels[i]);
        REQUIRE(p.confidence == 1.0);
    }
}

TEST_CASE("decision tree stops at a pure node") {
    auto tree = DecisionTree::train({{1, 5}, {2, 6}, {3, 7}}, {1, 1, 1}, 2);
    REQUIRE(tree.node_count() == 1);
    REQUIRE(tree.predict({50, 50}).class_index == 1);
}

TEST_CASE("decision tree grows depth 2 for three ordered classes") {
    FeatureMatrix rows = {{1}, {1.1}, {2}, {2.1}, {3}, {3.1}};
    std::vector<int> labels = {0, 0, 1, 1, 2, 2};
    auto tree = DecisionTree::train(rows, labels, 3);
    for (std::size_t i = 0; i < rows.size(); ++i)
        REQUIRE(tree.predict(rows[i]).class_index == labels[i]);
    REQUIRE(tree.node_count() == 5);
}

TEST_CASE("constant features cannot split") {
    auto tree = DecisionTree::train({{7}, {7}, {7}}, {0, 1, 0}, 2);
    REQUIRE(tree.node_count() == 1);
    REQUIRE(tree.predict({7}).class_index == 0);  // majority
}

// --- Random forest ---

TEST_CASE("a degenerate forest is equivalent to a single decision tree") {
    Prng rng(555);
    for (int fixture = 0; fixture < 20; ++fixture) {
        std::size_t n = 30 + rng.next_below(30);
        std::size_t d = 3 + rng.next_below(4);
        FeatureMatrix rows(n, std::vector<double>(d));
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (auto& v : rows[i]) v = rng.uniform(-10, 10);
            labels[i] = (rows[i][0] + 0.3 * rows[i][1] > 0 ? 1 : 0) +
                        (rows[i][2] > 5 ? 1 : 0);  // 3 classes
        }
        auto tree = DecisionTree::train(rows, labels, 3);
        ForestConfig fc;
        fc.n_trees = 5;
        fc.bootstrap = false;
        fc.features_per_split = d;  // all features -> no randomness left
        fc.seed = rng.next_u64();
        fc.workers = 2;
        auto forest = RandomForest::train(rows, labels, 3, fc);

        for (int q = 0; q < 50; ++q) {
            std::vector<double> query(d);
            for (auto& v : query) v = rng.uniform(-12, 12);
            REQUIRE(forest.predict(query).class_index == tree.predict(query).class_index);
        }
    }
}

TEST_CASE("random forest training is deterministic and parallel-stable") {
    Prng rng(9);
    FeatureMatrix rows(80, std::vector<double>(4));
    std::vector<int> labels(80);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (auto& v : rows[i]) v = rng.uniform(0, 1);
        labels[i] = rows[i][1] > 0.5 ? 1 : 0;
    }
    ForestConfig fc;
    fc.n_trees = 12;
    fc.seed = 77;

    auto save_bytes = [](const RandomForest& f) {
        BinWriter w;
        f.save(w);
        return w.bytes();
    };
    fc.workers = 1;
    auto sequential = save_bytes(RandomForest::train(rows, labels, 2, fc));
    fc.workers = 4;
    auto parallel = save_bytes(RandomForest::train(rows, labels, 2, fc));
    auto again = save_bytes(RandomForest::train(rows, labels, 2, fc));
    REQUIRE(sequential == parallel);
    REQUIRE(parallel == again);

    fc.seed = 78;
    REQUIRE(save_bytes(RandomForest::train(rows, labels, 2, fc)) != sequential);
}

TEST_CASE("random forest fits noisy blobs well") {
    Prng rng(13);
    FeatureMatrix rows;
    std::vector<int> labels;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 60; ++i) {
            rows.push_back({rng.gaussian(c * 3.0, 1.0), rng.gaussian(-c * 2.0, 1.0)});
            labels.push_back(c);
        }
    ForestConfig fc;
    fc.n_trees = 40;
    fc.seed = 5;
    auto forest = RandomForest::train(rows, labels, 3, fc);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < rows.size(); ++i)
        correct += forest.predict(rows[i]).class_index == labels[i];
    REQUIRE(static_cast<double>(correct) / rows.size() > 0.9);
}

// --- Gradient checks ---

namespace {

// Central finite differences of the batch loss over every parameter.
template <typename Net>
void check_gradients(Net& net, const std::vector<std::vector<double>>& xs,
                     const std::vector<int>& ys) {
    auto analytic = net.flat_gradients(xs, ys);
    auto weights = net.snapshot();
    REQUIRE(analytic.size() == weights.size());
    const double eps = 1e-5;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        auto w = weights;
        w[k] = weights[k] + eps;
        net.restore(w);
        double up = net.mean_loss(xs, ys);
        w[k] = weights[k] - eps;
        net.restore(w);
        double down = net.mean_loss(xs, ys);
        double fd = (up - down) / (2 * eps);
        double denom = std::max({1.0, std::abs(fd), std::abs(analytic[k])});
        REQUIRE(std::abs(fd - analytic[k]) / denom < 1e-4);
    }
    net.restore(weights);
}

} // namespace

TEST_CASE("fcnn gradients match central finite differences") {
    Prng rng(21);
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (int i = 0; i < 7; ++i) {
        std::vector<double> x(5);
        for (auto& v : x) v = rng.uniform(-1, 1);
        xs.push_back(x);
        ys.push_back(static_cast<int>(rng.next_below(3)));
    }
    DenseNetwork net(5, {4, 3}, 3, 99);
    check_gradients(net, xs, ys);
}

TEST_CASE("cnn gradients match central finite differences on a toy grid") {
    ConvNetConfig cfg;
    cfg.in_h = 10;
    cfg.in_w = 14;
    cfg.conv1_filters = 2;
    cfg.conv2_filters = 2;
    cfg.dropout = 0.0;
    cfg.seed = 3;
    ConvNetwork net(cfg, 3);
    REQUIRE(net.flattened_width() == 4);

    Prng rng(22);
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (int i = 0; i < 4; ++i) {
        std::vector<double> x(cfg.in_h * cfg.in_w);
        for (auto& v : x) v = rng.uniform(0, 1);
        xs.push_back(x);
        ys.push_back(static_cast<int>(rng.next_below(3)));
    }
    check_gradients(net, xs, ys);
}

TEST_CASE("network outputs are proper distributions") {
    DenseNetwork dense(6, {8}, 4, 1);
    Prng rng(2);
    for (int i = 0; i < 20; ++i) {
        std::vector<double> x(6);
        for (auto& v : x) v = rng.uniform(-3, 3);
        auto p = dense.forward(x);
        double sum = 0;
        for (double v : p) {
            REQUIRE(v >= 0.0);
            sum += v;
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
    }

    ConvNetConfig cfg;  // default 10x250 stack
    ConvNetwork cnn(cfg, 6);
    REQUIRE(cnn.flattened_width() == 976);
    std::vector<double> img(kGridCells);
    for (auto& v : img) v = rng.uniform(0, 1);
    auto p = cnn.forward(img);
    double sum = 0;
    for (double v : p) sum += v;
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
    REQUIRE_THROWS_AS(ConvNetwork(ConvNetConfig{4, 6}, 3), std::invalid_argument);
}

TEST_CASE("cnn inference ignores dropout and is repeatable") {
    ConvNetConfig cfg;
    cfg.in_h = 10;
    cfg.in_w = 20;
    cfg.conv1_filters = 2;
    cfg.conv2_filters = 2;
    cfg.dropout = 0.5;
    ConvNetwork net(cfg, 2);
    Prng rng(8);
    std::vector<std::vector<double>> xs(6, std::vector<double>(cfg.in_h * cfg.in_w));
    std::vector<int> ys;
    for (auto& x : xs)
        for (auto& v : x) v = rng.uniform(0, 1);
    for (std::size_t i = 0; i < xs.size(); ++i) ys.push_back(static_cast<int>(i % 2));
    net.train_batch(xs, ys, 0.01, 0.9);  // exercises the dropout path

    auto p1 = net.forward(xs[0]);
    auto p2 = net.forward(xs[0]);
    REQUIRE(p1 == p2);
}

TEST_CASE("mini-batch training restores the best epoch") {
    Prng rng(30);
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 40; ++i) {
            xs.push_back({rng.gaussian(c * 4.0, 1.0), rng.gaussian(-c * 4.0, 1.0)});
            ys.push_back(c);
        }
    DenseNetwork net(2, {8}, 2, 17);
    TrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 16;
    tc.seed = 17;
    auto result = train_network(net, xs, ys, xs, ys, tc);
    REQUIRE(result.epoch_accuracy.size() == 10);
    REQUIRE(result.best_accuracy > 0.95);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        correct += net.predict(xs[i]).class_index == ys[i];
    // restored weights must reproduce the reported best accuracy
    REQUIRE(static_cast<double>(correct) / xs.size() == Catch::Approx(result.best_accuracy));
}

// --- Model container ---

namespace {

Dataset make_hour_ds(int classes, int per_class, double origin = 1.0e9) {
    Dataset ds;
    ds.schema = Schema::Hour;
    Prng rng(42);
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            HourWindowRow r;
            r.device_id = c;
            r.window_start = origin + (i * classes + c) * 3600.0;
            r.bag_of_ports = {static_cast<std::uint16_t>(1000 + c)};
            r.bag_of_domains = {"vendor-" + std::to_string(c) + ".com"};
            if (i % 4 != 0) r.bag_of_ciphers = {static_cast<std::uint16_t>(100 + c)};
            r.flow_volume = rng.gaussian(1000.0 * (c + 1), 50.0);
            r.flow_duration = rng.uniform(1, 5);
            r.flow_rate = r.flow_volume / 3600.0;
            r.sleep_time = rng.uniform(100, 3000);
            ds.hour.push_back(std::move(r));
        }
    return ds;
}

Dataset make_second_ds(int classes, int per_class, double origin = 1.0e9) {
    Dataset ds;
    ds.schema = Schema::Second;
    Prng rng(43);
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            double avg = rng.gaussian(120.0 * (c + 1), 8.0);
            double n = 1 + rng.next_below(5);
            ds.second.push_back(
                {c, origin + (i * classes + c) * 1.0, avg * n, avg, rng.uniform(0, 10)});
        }
    return ds;
}

Dataset make_flow_ds(int classes, int per_class, double origin = 1.0e9) {
    Dataset ds;
    ds.schema = Schema::Flow;
    Prng rng(44);
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            FlowFeatureRow r;
            r.device_id = c;
            r.start_time = origin + (i * classes + c) * 60.0;
            r.src_port = 40000 + rng.next_below(20000);
            r.dest_port = 8000 + c;
            r.bytes_out = rng.gaussian(800.0 * (c + 1), 40.0);
            r.bytes_in = rng.gaussian(300.0 * (c + 1), 20.0);
            r.pkts_out = 4 + rng.next_below(4);
            r.pkts_in = 3 + rng.next_below(4);
            r.ipt = {0.3, 0.05, 0.0025, 0.0, 2.0};
            r.bytes = {100.0 * (c + 1), 10, 100, 0, 2.5};
            r.duration = rng.uniform(1, 3);
            r.protocol = 6.0;
            r.domain = "vendor-" + std::to_string(c) + ".com";
            ds.flow.push_back(std::move(r));
        }
    return ds;
}

Dataset make_grid_ds(int classes, int per_class, double origin = 1.0e9) {
    Dataset ds;
    ds.schema = Schema::Grid;
    Prng rng(45);
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            PacketGrid g;
            g.device_id = c;
            g.start_time = origin + (i * classes + c) * 60.0;
            g.key = {0x0a000001, 0x08080808, static_cast<std::uint16_t>(40000 + i), 443,
                     Transport::Tcp};
            for (std::size_t cell = 0; cell < kGridCells; ++cell)
                g.cells[cell] = static_cast<std::uint8_t>(
                    (cell % 250) < 80 ? 60 * (c + 1) + rng.next_below(8) : 0);
            ds.grids.push_back(std::move(g));
        }
    return ds;
}

std::vector<std::size_t> all_indices(const Dataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

void roundtrip_and_determinism(ModelKind kind, const Dataset& ds, int classes) {
    auto dir = temp_dir();
    TrainOptions opts;
    opts.seed = 11;
    opts.training_period = "weeks1-2";
    opts.forest.n_trees = 15;
    opts.network.epochs = 4;
    opts.workers = 2;
    auto idx = all_indices(ds);
    std::vector<std::size_t> train(idx.begin(), idx.begin() + idx.size() * 4 / 5);
    std::vector<std::size_t> val(idx.begin() + idx.size() * 4 / 5, idx.end());

    auto model = Model::train(kind, ds, train, val, classes, opts);
    fs::path p1 = dir / (std::string(model_kind_name(kind)) + "-a.bin");
    fs::path p2 = dir / (std::string(model_kind_name(kind)) + "-b.bin");
    model->save(p1.string());

    auto model2 = Model::train(kind, ds, train, val, classes, opts);
    model2->save(p2.string());
    REQUIRE(file_bytes(p1) == file_bytes(p2));  // same seed -> identical bytes

    auto loaded = Model::load(p1.string());
    REQUIRE(loaded->kind() == kind);
    REQUIRE(loaded->schema() == ds.schema);
    REQUIRE(loaded->class_count() == classes);
    REQUIRE(loaded->training_period() == "weeks1-2");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto a = model->predict(ds, i);
        auto b = loaded->predict(ds, i);
        REQUIRE(a.class_index == b.class_index);
        REQUIRE(a.confidence == b.confidence);
    }

    // the trained model should fit its clearly separable training data
    std::size_t correct = 0;
    for (auto i : train) correct += model->predict(ds, i).class_index == ds.label(i);
    REQUIRE(static_cast<double>(correct) / train.size() > 0.85);
}

} // namespace

TEST_CASE("all model kinds round-trip through their files deterministically") {
    roundtrip_and_determinism(ModelKind::Nbm, make_hour_ds(3, 30), 3);
    roundtrip_and_determinism(ModelKind::TwoStage, make_hour_ds(3, 30), 3);
    roundtrip_and_determinism(ModelKind::Dt, make_second_ds(3, 40), 3);
    roundtrip_and_determinism(ModelKind::Rf, make_flow_ds(3, 40), 3);
    roundtrip_and_determinism(ModelKind::Fcnn, make_second_ds(3, 40), 3);
    roundtrip_and_determinism(ModelKind::Cnn, make_grid_ds(2, 12), 2);
}

TEST_CASE("model files are validated on load") {
    auto dir = temp_dir();
    auto ds = make_second_ds(2, 10);
    TrainOptions opts;
    auto model = Model::train(ModelKind::Dt, ds, all_indices(ds), {}, 2, opts);
    fs::path p = dir / "validate.bin";
    model->save(p.string());

    auto bytes = file_bytes(p);
    {
        auto bad = bytes;
        bad[0] = 'X';
        std::ofstream(dir / "badmagic.bin", std::ios::binary) << bad;
        REQUIRE_THROWS_WITH(Model::load((dir / "badmagic.bin").string()),
                            Catch::Matchers::ContainsSubstring("not a model file"));
    }
    {
        auto bad = bytes;
        bad[5] = 99;  // format version
        std::ofstream(dir / "badver.bin", std::ios::binary) << bad;
        REQUIRE_THROWS_WITH(Model::load((dir / "badver.bin").string()),
                            Catch::Matchers::ContainsSubstring("version"));
    }
}

TEST_CASE("models reject datasets of the wrong schema") {
    auto hour = make_hour_ds(2, 10);
    auto second = make_second_ds(2, 10);
    TrainOptions opts;
    REQUIRE_THROWS_AS(Model::train(ModelKind::Nbm, second, all_indices(second), {}, 2, opts),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(Model::train(ModelKind::Cnn, hour, all_indices(hour), {}, 2, opts),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(Model::train(ModelKind::Dt, hour, all_indices(hour), {}, 2, opts),
                      std::invalid_argument);
}

TEST_CASE("two-stage handles empty and all-unknown bags with a uniform posterior") {
    auto ds = make_hour_ds(4, 20);
    TrainOptions opts;
    opts.forest.n_trees = 10;
    auto model = Model::train(ModelKind::TwoStage, ds, all_indices(ds), {}, 4, opts);

    Dataset probe;
    probe.schema = Schema::Hour;
    HourWindowRow empty_row;  // no bags at all
    empty_row.device_id = 0;
    probe.hour.push_back(empty_row);
    HourWindowRow unknown_row = empty_row;
    unknown_row.bag_of_ports = {9};                 // never seen in training
    unknown_row.bag_of_domains = {"never.seen"};
    probe.hour.push_back(unknown_row);
    for (std::size_t i = 0; i < probe.hour.size(); ++i)
        REQUIRE_NOTHROW(model->predict(probe, i));

    auto* two_stage = dynamic_cast<TwoStageModel*>(model.get());
    REQUIRE(two_stage != nullptr);
    auto vec = two_stage->stage2_vector(probe.hour[1]);
    REQUIRE(vec.size() == 12);
    REQUIRE(vec[6] == 0.0);                         // ports stage: class 0 ...
    REQUIRE(vec[7] == Catch::Approx(0.25));         // ... with uniform confidence 1/4
    REQUIRE(vec[8] == 0.0);
    REQUIRE(vec[9] == Catch::Approx(0.25));
}

TEST_CASE("nbm model predicts unseen-token rows without failing") {
    auto ds = make_hour_ds(3, 20);
    TrainOptions opts;
    auto model = Model::train(ModelKind::Nbm, ds, all_indices(ds), {}, 3, opts);
    Dataset probe;
    probe.schema = Schema::Hour;
    HourWindowRow r;
    r.bag_of_ports = {7777};
    probe.hour.push_back(r);
    auto pred = model->predict(probe, 0);
    REQUIRE(pred.class_index == 0);  // all tokens unknown -> uniform -> lowest index
    REQUIRE(pred.confidence == Catch::Approx(1.0 / 3.0));
}

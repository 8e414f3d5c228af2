#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "iotid/binio.hpp"
#include "iotid/features.hpp"
#include "iotid/ml/cnn.hpp"
#include "iotid/ml/forest.hpp"
#include "iotid/ml/nbm.hpp"
#include "iotid/ml/nn.hpp"
#include "iotid/ml/tree.hpp"

namespace iotid {

enum class Schema : std::uint8_t { Hour = 1, Second = 2, Grid = 3, Flow = 4 };
enum class ModelKind : std::uint8_t { Nbm = 1, Dt = 2, Rf = 3, Fcnn = 4, Cnn = 5, TwoStage = 6 };

inline const char* schema_name(Schema s) {
    switch (s) {
        case Schema::Hour: return "hour";
        case Schema::Second: return "second";
        case Schema::Grid: return "grid";
        case Schema::Flow: return "flow";
    }
    return "?";
}

inline Schema schema_from_name(const std::string& name) {
    if (name == "hour") return Schema::Hour;
    if (name == "second") return Schema::Second;
    if (name == "grid") return Schema::Grid;
    if (name == "flow") return Schema::Flow;
    throw std::invalid_argument("unknown schema '" + name + "' (valid: hour, second, grid, flow)");
}

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::Nbm: return "nbm";
        case ModelKind::Dt: return "dt";
        case ModelKind::Rf: return "rf";
        case ModelKind::Fcnn: return "fcnn";
        case ModelKind::Cnn: return "cnn";
        case ModelKind::TwoStage: return "two-stage";
    }
    return "?";
}

inline ModelKind model_kind_from_name(const std::string& name) {
    if (name == "nbm") return ModelKind::Nbm;
    if (name == "dt") return ModelKind::Dt;
    if (name == "rf") return ModelKind::Rf;
    if (name == "fcnn") return ModelKind::Fcnn;
    if (name == "cnn") return ModelKind::Cnn;
    if (name == "two-stage") return ModelKind::TwoStage;
    throw std::invalid_argument("unknown model '" + name +
                                "' (valid: nbm, dt, rf, fcnn, cnn, two-stage)");
}

// All four feature schemas behind one indexable view.
struct Dataset {
    Schema schema = Schema::Flow;
    std::vector<HourWindowRow> hour;
    std::vector<SecondWindowRow> second;
    std::vector<PacketGrid> grids;
    std::vector<FlowFeatureRow> flow;

    std::size_t size() const {
        switch (schema) {
            case Schema::Hour: return hour.size();
            case Schema::Second: return second.size();
            case Schema::Grid: return grids.size();
            case Schema::Flow: return flow.size();
        }
        return 0;
    }

    int label(std::size_t i) const {
        switch (schema) {
            case Schema::Hour: return hour[i].device_id;
            case Schema::Second: return second[i].device_id;
            case Schema::Grid: return grids[i].device_id;
            case Schema::Flow: return flow[i].device_id;
        }
        return 0;
    }

    double timestamp(std::size_t i) const {
        switch (schema) {
            case Schema::Hour: return hour[i].window_start;
            case Schema::Second: return second[i].second_start;
            case Schema::Grid: return grids[i].start_time;
            case Schema::Flow: return flow[i].start_time;
        }
        return 0.0;
    }
};

struct TrainOptions {
    std::uint64_t seed = 0;
    std::string training_period = "all";
    ForestConfig forest;       // n_trees/bootstrap defaults mirror library defaults
    TrainConfig network;       // 50 epochs, batch 128, SGD momentum
    unsigned workers = 0;
};

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr char kModelMagic[5] = {'I', 'O', 'T', 'I', 'D'};

// A trained, serializable classifier bound to one feature schema.
class Model {
public:
    virtual ~Model() = default;

    ModelKind kind() const { return kind_; }
    Schema schema() const { return schema_; }
    int class_count() const { return class_count_; }
    const std::string& training_period() const { return training_period_; }

    virtual Prediction predict(const Dataset& ds, std::size_t i) const = 0;

    void save(const std::string& path) const {
        BinWriter w;
        w.raw(kModelMagic, 5);
        w.u32(kModelFormatVersion);
        w.u8(static_cast<std::uint8_t>(kind_));
        w.u8(static_cast<std::uint8_t>(schema_));
        w.i32(class_count_);
        w.str(training_period_);
        save_payload(w);
        w.save(path);
    }

    static std::unique_ptr<Model> load(const std::string& path);

    static std::unique_ptr<Model> train(ModelKind kind, const Dataset& ds,
                                        const std::vector<std::size_t>& train_idx,
                                        const std::vector<std::size_t>& val_idx, int class_count,
                                        const TrainOptions& opts);

protected:
    Model(ModelKind kind, Schema schema, int class_count, std::string training_period)
        : kind_(kind), schema_(schema), class_count_(class_count),
          training_period_(std::move(training_period)) {}

    virtual void save_payload(BinWriter& w) const = 0;

    ModelKind kind_;
    Schema schema_;
    int class_count_;
    std::string training_period_;
};

// ---------------------------------------------------------------------------
// Bag encoding

using Bag = std::vector<std::pair<int, double>>;  // (token index, count)

namespace model_detail {

// Counts tokens, dropping unseen-vocabulary tokens: an all-unknown bag thus
// degrades to the empty bag and yields the uniform-posterior path.
inline Bag encode_bag(const Vocabulary& vocab, const std::vector<std::string>& tokens) {
    std::map<int, double> counts;
    for (const auto& t : tokens) {
        int idx = vocab.lookup(t);
        if (idx != 0) counts[idx] += 1.0;
    }
    return Bag(counts.begin(), counts.end());
}

inline std::vector<std::string> port_tokens(const std::vector<std::uint16_t>& v) {
    std::vector<std::string> out;
    out.reserve(v.size());
    for (auto p : v) out.push_back(std::to_string(p));
    return out;
}

// Uniform posterior fallback for empty bags; ties resolve to class 0.
inline Prediction nbm_predict_or_uniform(const NaiveBayesMultinomial& nbm, const Bag& bag) {
    if (bag.empty()) return {0, 1.0 / static_cast<double>(nbm.class_count())};
    return nbm.predict(bag);
}

inline std::vector<double> second_features(const SecondWindowRow& r) {
    return {r.bytes_sum, r.bytes_avg, r.bytes_std};
}

inline std::vector<double> grid_features(const PacketGrid& g) {
    std::vector<double> v(kGridCells);
    for (std::size_t i = 0; i < kGridCells; ++i) v[i] = g.cells[i] / 255.0;
    return v;
}

} // namespace model_detail

// ---------------------------------------------------------------------------
// Hour-window models

// Single NBM over the union of the three bags (tokens are type-prefixed).
class NbmModel final : public Model {
public:
    NbmModel(int class_count, std::string period, Vocabulary vocab, NaiveBayesMultinomial nbm)
        : Model(ModelKind::Nbm, Schema::Hour, class_count, std::move(period)),
          vocab_(std::move(vocab)), nbm_(std::move(nbm)) {}

    static std::vector<std::string> tokens(const HourWindowRow& r) {
        std::vector<std::string> out;
        for (auto p : r.bag_of_ports) out.push_back("p:" + std::to_string(p));
        for (const auto& d : r.bag_of_domains) out.push_back("d:" + d);
        for (auto c : r.bag_of_ciphers) out.push_back("c:" + std::to_string(c));
        return out;
    }

    Prediction predict(const Dataset& ds, std::size_t i) const override {
        Bag bag = model_detail::encode_bag(vocab_, tokens(ds.hour[i]));
        return model_detail::nbm_predict_or_uniform(nbm_, bag);
    }

    void save_payload(BinWriter& w) const override {
        vocab_.save(w);
        nbm_.save(w);
    }

private:
    Vocabulary vocab_;
    NaiveBayesMultinomial nbm_;
};

// Stage 1: one NBM per bag type; stage 2: RF over 6 numeric window features
// plus the three (class, confidence) pairs.
class TwoStageModel final : public Model {
public:
    TwoStageModel(int class_count, std::string period)
        : Model(ModelKind::TwoStage, Schema::Hour, class_count, std::move(period)) {}

    std::vector<double> stage2_vector(const HourWindowRow& r) const {
        auto ports = model_detail::nbm_predict_or_uniform(
            nbm_ports_, model_detail::encode_bag(vocab_ports_,
                                                 model_detail::port_tokens(r.bag_of_ports)));
        auto domains = model_detail::nbm_predict_or_uniform(
            nbm_domains_, model_detail::encode_bag(vocab_domains_, r.bag_of_domains));
        auto ciphers = model_detail::nbm_predict_or_uniform(
            nbm_ciphers_, model_detail::encode_bag(vocab_ciphers_,
                                                   model_detail::port_tokens(r.bag_of_ciphers)));
        return {r.flow_volume,
                r.flow_duration,
                r.flow_rate,
                r.sleep_time,
                r.dns_interval,
                r.ntp_interval,
                static_cast<double>(ports.class_index),
                ports.confidence,
                static_cast<double>(domains.class_index),
                domains.confidence,
                static_cast<double>(ciphers.class_index),
                ciphers.confidence};
    }

    Prediction predict(const Dataset& ds, std::size_t i) const override {
        return forest_.predict(stage2_vector(ds.hour[i]));
    }

    void save_payload(BinWriter& w) const override {
        vocab_ports_.save(w);
        vocab_domains_.save(w);
        vocab_ciphers_.save(w);
        nbm_ports_.save(w);
        nbm_domains_.save(w);
        nbm_ciphers_.save(w);
        forest_.save(w);
    }

    Vocabulary vocab_ports_, vocab_domains_, vocab_ciphers_;
    NaiveBayesMultinomial nbm_ports_, nbm_domains_, nbm_ciphers_;
    RandomForest forest_;
};

// ---------------------------------------------------------------------------
// Numeric-feature models (second and flow schemas)

class NumericModel final : public Model {
public:
    NumericModel(ModelKind kind, Schema schema, int class_count, std::string period)
        : Model(kind, schema, class_count, std::move(period)) {}

    std::vector<double> features(const Dataset& ds, std::size_t i) const {
        std::vector<double> v;
        if (schema_ == Schema::Second) {
            v = model_detail::second_features(ds.second[i]);
        } else {
            v = ds.flow[i].numeric();
            v.push_back(static_cast<double>(domain_vocab_.lookup(ds.flow[i].domain)));
        }
        if (kind_ == ModelKind::Fcnn) v = standardizer_.transform(v);
        return v;
    }

    Prediction predict(const Dataset& ds, std::size_t i) const override {
        auto v = features(ds, i);
        switch (kind_) {
            case ModelKind::Dt: return tree_.predict(v);
            case ModelKind::Rf: return forest_.predict(v);
            case ModelKind::Fcnn: return net_.predict(v);
            default: throw std::logic_error("numeric model with wrong kind");
        }
    }

    void save_payload(BinWriter& w) const override {
        domain_vocab_.save(w);
        switch (kind_) {
            case ModelKind::Dt: tree_.save(w); break;
            case ModelKind::Rf: forest_.save(w); break;
            case ModelKind::Fcnn:
                standardizer_.save(w);
                net_.save(w);
                break;
            default: throw std::logic_error("numeric model with wrong kind");
        }
    }

    Vocabulary domain_vocab_;
    DecisionTree tree_;
    RandomForest forest_;
    Standardizer standardizer_;
    DenseNetwork net_;
};

class CnnModel final : public Model {
public:
    CnnModel(int class_count, std::string period, ConvNetwork net)
        : Model(ModelKind::Cnn, Schema::Grid, class_count, std::move(period)),
          net_(std::move(net)) {}

    Prediction predict(const Dataset& ds, std::size_t i) const override {
        return net_.predict(model_detail::grid_features(ds.grids[i]));
    }

    void save_payload(BinWriter& w) const override { net_.save(w); }

    ConvNetwork net_;
};

// ---------------------------------------------------------------------------
// Training dispatch

inline std::unique_ptr<Model> Model::train(ModelKind kind, const Dataset& ds,
                                           const std::vector<std::size_t>& train_idx,
                                           const std::vector<std::size_t>& val_idx,
                                           int class_count, const TrainOptions& opts) {
    if (train_idx.empty()) throw std::invalid_argument("train: no training rows");
    auto require_schema = [&](Schema s) {
        if (ds.schema != s)
            throw std::invalid_argument(std::string("model '") + model_kind_name(kind) +
                                        "' requires schema '" + schema_name(s) + "', got '" +
                                        schema_name(ds.schema) + "'");
    };
    std::vector<int> labels;
    labels.reserve(train_idx.size());
    for (auto i : train_idx) labels.push_back(ds.label(i));

    switch (kind) {
        case ModelKind::Nbm: {
            require_schema(Schema::Hour);
            Vocabulary vocab;
            std::vector<Bag> bags;
            for (auto i : train_idx) {
                std::map<int, double> counts;
                for (const auto& t : NbmModel::tokens(ds.hour[i])) counts[vocab.add(t)] += 1.0;
                bags.emplace_back(counts.begin(), counts.end());
            }
            auto nbm = NaiveBayesMultinomial::train(bags, labels, class_count, vocab.size());
            return std::make_unique<NbmModel>(class_count, opts.training_period, std::move(vocab),
                                              std::move(nbm));
        }
        case ModelKind::TwoStage: {
            require_schema(Schema::Hour);
            auto m = std::make_unique<TwoStageModel>(class_count, opts.training_period);
            auto train_nbm = [&](Vocabulary& vocab, auto&& token_fn) {
                std::vector<Bag> bags;
                for (auto i : train_idx) {
                    std::map<int, double> counts;
                    for (const auto& t : token_fn(ds.hour[i])) counts[vocab.add(t)] += 1.0;
                    bags.emplace_back(counts.begin(), counts.end());
                }
                return NaiveBayesMultinomial::train(bags, labels, class_count, vocab.size());
            };
            m->nbm_ports_ = train_nbm(m->vocab_ports_, [](const HourWindowRow& r) {
                return model_detail::port_tokens(r.bag_of_ports);
            });
            m->nbm_domains_ = train_nbm(m->vocab_domains_,
                                        [](const HourWindowRow& r) { return r.bag_of_domains; });
            m->nbm_ciphers_ = train_nbm(m->vocab_ciphers_, [](const HourWindowRow& r) {
                return model_detail::port_tokens(r.bag_of_ciphers);
            });
            FeatureMatrix rows;
            for (auto i : train_idx) rows.push_back(m->stage2_vector(ds.hour[i]));
            ForestConfig fc = opts.forest;
            fc.seed = opts.seed;
            fc.workers = opts.workers;
            m->forest_ = RandomForest::train(rows, labels, class_count, fc);
            return m;
        }
        case ModelKind::Dt:
        case ModelKind::Rf:
        case ModelKind::Fcnn: {
            if (ds.schema != Schema::Second && ds.schema != Schema::Flow)
                throw std::invalid_argument(
                    std::string("model '") + model_kind_name(kind) +
                    "' requires schema 'second' or 'flow', got '" + schema_name(ds.schema) + "'");
            auto m = std::make_unique<NumericModel>(kind, ds.schema, class_count,
                                                    opts.training_period);
            if (ds.schema == Schema::Flow)
                for (auto i : train_idx) m->domain_vocab_.add(ds.flow[i].domain);
            FeatureMatrix rows;
            for (auto i : train_idx) {
                if (ds.schema == Schema::Second) {
                    rows.push_back(model_detail::second_features(ds.second[i]));
                } else {
                    auto v = ds.flow[i].numeric();
                    v.push_back(static_cast<double>(m->domain_vocab_.lookup(ds.flow[i].domain)));
                    rows.push_back(std::move(v));
                }
            }
            if (kind == ModelKind::Dt) {
                m->tree_ = DecisionTree::train(rows, labels, class_count);
            } else if (kind == ModelKind::Rf) {
                ForestConfig fc = opts.forest;
                fc.seed = opts.seed;
                fc.workers = opts.workers;
                m->forest_ = RandomForest::train(rows, labels, class_count, fc);
            } else {
                m->standardizer_ = Standardizer::fit(rows);
                for (auto& r : rows) r = m->standardizer_.transform(r);
                m->net_ = DenseNetwork(rows[0].size(), {128, 64}, class_count, opts.seed);
                std::vector<std::vector<double>> val_rows;
                std::vector<int> val_labels;
                for (auto i : val_idx) {
                    auto v = ds.schema == Schema::Second
                                 ? model_detail::second_features(ds.second[i])
                                 : ds.flow[i].numeric();
                    if (ds.schema == Schema::Flow)
                        v.push_back(
                            static_cast<double>(m->domain_vocab_.lookup(ds.flow[i].domain)));
                    val_rows.push_back(m->standardizer_.transform(v));
                    val_labels.push_back(ds.label(i));
                }
                TrainConfig tc = opts.network;
                tc.seed = opts.seed;
                train_network(m->net_, rows, labels, val_rows, val_labels, tc);
            }
            return m;
        }
        case ModelKind::Cnn: {
            require_schema(Schema::Grid);
            ConvNetConfig cc;
            cc.seed = opts.seed;
            ConvNetwork net(cc, class_count);
            if (net.flattened_width() != 976)
                throw std::logic_error("cnn: flattened width must be 976 for 10x250 grids");
            std::vector<std::vector<double>> xs, val_xs;
            std::vector<int> val_ys;
            for (auto i : train_idx) xs.push_back(model_detail::grid_features(ds.grids[i]));
            for (auto i : val_idx) {
                val_xs.push_back(model_detail::grid_features(ds.grids[i]));
                val_ys.push_back(ds.label(i));
            }
            TrainConfig tc = opts.network;
            tc.seed = opts.seed;
            train_network(net, xs, labels, val_xs, val_ys, tc);
            return std::make_unique<CnnModel>(class_count, opts.training_period, std::move(net));
        }
    }
    throw std::logic_error("unreachable model kind");
}

inline std::unique_ptr<Model> Model::load(const std::string& path) {
    BinReader r = BinReader::load(path);
    char magic[5];
    r.raw(magic, 5);
    if (std::memcmp(magic, kModelMagic, 5) != 0)
        throw std::runtime_error("not a model file: " + path);
    std::uint32_t version = r.u32();
    if (version != kModelFormatVersion)
        throw std::runtime_error("unsupported model format version " + std::to_string(version));
    auto kind = static_cast<ModelKind>(r.u8());
    auto schema = static_cast<Schema>(r.u8());
    int class_count = r.i32();
    std::string period = r.str();

    switch (kind) {
        case ModelKind::Nbm: {
            auto vocab = Vocabulary::load(r);
            auto nbm = NaiveBayesMultinomial::load(r);
            return std::make_unique<NbmModel>(class_count, period, std::move(vocab),
                                              std::move(nbm));
        }
        case ModelKind::TwoStage: {
            auto m = std::make_unique<TwoStageModel>(class_count, period);
            m->vocab_ports_ = Vocabulary::load(r);
            m->vocab_domains_ = Vocabulary::load(r);
            m->vocab_ciphers_ = Vocabulary::load(r);
            m->nbm_ports_ = NaiveBayesMultinomial::load(r);
            m->nbm_domains_ = NaiveBayesMultinomial::load(r);
            m->nbm_ciphers_ = NaiveBayesMultinomial::load(r);
            m->forest_ = RandomForest::load(r);
            return m;
        }
        case ModelKind::Dt:
        case ModelKind::Rf:
        case ModelKind::Fcnn: {
            auto m = std::make_unique<NumericModel>(kind, schema, class_count, period);
            m->domain_vocab_ = Vocabulary::load(r);
            if (kind == ModelKind::Dt) {
                m->tree_ = DecisionTree::load(r);
            } else if (kind == ModelKind::Rf) {
                m->forest_ = RandomForest::load(r);
            } else {
                m->standardizer_ = Standardizer::load(r);
                m->net_ = DenseNetwork::load(r);
            }
            return m;
        }
        case ModelKind::Cnn:
            return std::make_unique<CnnModel>(class_count, period, ConvNetwork::load(r));
    }
    throw std::runtime_error("model file carries unknown kind tag");
}

} // namespace iotid

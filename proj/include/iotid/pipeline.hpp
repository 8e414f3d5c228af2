#pragma once

#include <map>
#include <string>
#include <vector>

#include "iotid/binio.hpp"
#include "iotid/dns.hpp"
#include "iotid/features.hpp"
#include "iotid/flow.hpp"
#include "iotid/ml/models.hpp"
#include "iotid/pcap.hpp"
#include "iotid/tls.hpp"

namespace iotid {

// Everything ingested from one or more captures, in arrival order.
struct IngestStore {
    std::vector<AttributedPacket> packets;
    std::vector<DnsObservation> dns;
    std::vector<TlsClientHelloObservation> tls;
    IngestCounters counters;

    void consume_pcap(std::istream& in, const DeviceManifest& manifest) {
        DnsExtractor dns_ex;
        TlsExtractor tls_ex;
        IngestCounters c = parse_pcap(in, manifest, [&](const AttributedPacket& pkt) {
            dns_ex.consume(pkt);
            tls_ex.consume(pkt);
            packets.push_back(pkt);
        });
        dns.insert(dns.end(), dns_ex.observations.begin(), dns_ex.observations.end());
        tls.insert(tls.end(), tls_ex.observations.begin(), tls_ex.observations.end());
        counters.total += c.total;
        counters.emitted += c.emitted;
        counters.skipped += c.skipped;
        counters.malformed += c.malformed;
    }
};

// Runs per-device flow tables over the store and exports every segment.
inline std::vector<FlowRecord> build_flows(const IngestStore& store, const DomainMap& domains) {
    std::map<int, FlowTable> tables;
    std::vector<FlowRecord> flows;
    for (const auto& pkt : store.packets) {
        if (pkt.record.transport == Transport::Other) continue;
        auto it = tables.find(pkt.device_id);
        if (it == tables.end())
            it = tables.emplace(pkt.device_id, FlowTable(pkt.device_id, &domains)).first;
        for (auto& rec : it->second.advance(pkt.record, pkt.originated))
            flows.push_back(std::move(rec));
    }
    for (auto& [dev, table] : tables)
        for (auto& rec : table.flush()) flows.push_back(std::move(rec));
    std::stable_sort(flows.begin(), flows.end(),
                     [](const FlowRecord& a, const FlowRecord& b) {
                         return a.start_time < b.start_time;
                     });
    return flows;
}

struct ExtractedFeatures {
    std::vector<HourWindowRow> hour;
    std::vector<SecondWindowRow> second;
    std::vector<PacketGrid> grids;
    std::vector<FlowFeatureRow> flow;
};

inline ExtractedFeatures extract_all(const IngestStore& store) {
    DomainMap domains;
    domains.add_all(store.dns);
    auto flows = build_flows(store, domains);

    ExtractedFeatures out;
    for (const auto& f : flows) out.flow.push_back(extract_flow_features(f));

    GridBuilder grids;
    std::map<int, std::vector<std::pair<double, std::uint32_t>>> per_device;
    std::map<int, HourWindowInputs> hour_inputs;
    for (const auto& pkt : store.packets) {
        grids.consume(pkt);
        per_device[pkt.device_id].emplace_back(pkt.record.timestamp, pkt.record.wire_len);
        hour_inputs[pkt.device_id].packets.push_back(
            {pkt.record.timestamp, pkt.record.dst_port, pkt.record.transport, pkt.originated});
    }
    out.grids = grids.finish();
    for (auto& [dev, pkts] : per_device) {
        std::stable_sort(pkts.begin(), pkts.end());
        auto rows = extract_second_window(dev, pkts);
        out.second.insert(out.second.end(), rows.begin(), rows.end());
    }
    for (const auto& f : flows) hour_inputs[f.device_id].flows.push_back(f);
    for (const auto& t : store.tls) hour_inputs[t.device_id].tls.push_back(t);
    for (auto& [dev, inputs] : hour_inputs) {
        std::stable_sort(inputs.packets.begin(), inputs.packets.end(),
                         [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
        auto rows = extract_hour_window(dev, inputs);
        out.hour.insert(out.hour.end(), rows.begin(), rows.end());
    }
    return out;
}

inline Dataset dataset_for(Schema schema, ExtractedFeatures features) {
    Dataset ds;
    ds.schema = schema;
    ds.hour = std::move(features.hour);
    ds.second = std::move(features.second);
    ds.grids = std::move(features.grids);
    ds.flow = std::move(features.flow);
    return ds;
}

// ---------------------------------------------------------------------------
// Packet store file (binary), used between `ingest` and `extract`.

inline constexpr char kPacketStoreMagic[5] = {'I', 'O', 'T', 'P', 'K'};

inline void save_packet_store(const std::string& path, const IngestStore& store) {
    BinWriter w;
    w.raw(kPacketStoreMagic, 5);
    w.u32(1);  // format version
    w.u64(store.counters.total);
    w.u64(store.counters.emitted);
    w.u64(store.counters.skipped);
    w.u64(store.counters.malformed);
    w.u64(store.packets.size());
    for (const auto& p : store.packets) {
        w.i32(p.device_id);
        w.u8(p.originated ? 1 : 0);
        w.f64(p.record.timestamp);
        w.raw(p.record.src_mac.data(), 6);
        w.raw(p.record.dst_mac.data(), 6);
        w.u32(p.record.src_ip);
        w.u32(p.record.dst_ip);
        w.u32(p.record.src_port);
        w.u32(p.record.dst_port);
        w.u8(static_cast<std::uint8_t>(p.record.transport));
        w.u32(p.record.wire_len);
        w.u32(static_cast<std::uint32_t>(p.record.bytes.size()));
        w.raw(p.record.bytes.data(), p.record.bytes.size());
    }
    w.u64(store.dns.size());
    for (const auto& d : store.dns) {
        w.f64(d.timestamp);
        w.str(d.queried_name);
        w.u32(d.resolved_ip);
        w.i32(d.device_id);
    }
    w.u64(store.tls.size());
    for (const auto& t : store.tls) {
        w.f64(t.timestamp);
        w.i32(t.device_id);
        w.u64(t.cipher_suites.size());
        for (auto c : t.cipher_suites) w.u32(c);
    }
    w.save(path);
}

inline IngestStore load_packet_store(const std::string& path) {
    BinReader r = BinReader::load(path);
    char magic[5];
    r.raw(magic, 5);
    if (std::memcmp(magic, kPacketStoreMagic, 5) != 0)
        throw std::runtime_error("not a packet store: " + path);
    if (r.u32() != 1) throw std::runtime_error("unsupported packet store version");
    IngestStore store;
    store.counters.total = r.u64();
    store.counters.emitted = r.u64();
    store.counters.skipped = r.u64();
    store.counters.malformed = r.u64();
    std::uint64_t np = r.u64();
    store.packets.resize(np);
    for (auto& p : store.packets) {
        p.device_id = r.i32();
        p.originated = r.u8() != 0;
        p.record.timestamp = r.f64();
        r.raw(p.record.src_mac.data(), 6);
        r.raw(p.record.dst_mac.data(), 6);
        p.record.src_ip = r.u32();
        p.record.dst_ip = r.u32();
        p.record.src_port = static_cast<std::uint16_t>(r.u32());
        p.record.dst_port = static_cast<std::uint16_t>(r.u32());
        p.record.transport = static_cast<Transport>(r.u8());
        p.record.wire_len = r.u32();
        p.record.bytes.resize(r.u32());
        r.raw(p.record.bytes.data(), p.record.bytes.size());
    }
    std::uint64_t nd = r.u64();
    store.dns.resize(nd);
    for (auto& d : store.dns) {
        d.timestamp = r.f64();
        d.queried_name = r.str();
        d.resolved_ip = r.u32();
        d.device_id = r.i32();
    }
    std::uint64_t nt = r.u64();
    store.tls.resize(nt);
    for (auto& t : store.tls) {
        t.timestamp = r.f64();
        t.device_id = r.i32();
        t.cipher_suites.resize(r.u64());
        for (auto& c : t.cipher_suites) c = static_cast<std::uint16_t>(r.u32());
    }
    return store;
}

} // namespace iotid

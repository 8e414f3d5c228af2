#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iotid/csv.hpp"
#include "iotid/dns.hpp"
#include "iotid/net.hpp"

namespace iotid {

inline constexpr std::size_t kFlowPacketCap = 50;     // first N packets kept
inline constexpr double kInactivityTimeout = 10.0;    // strict: gap > 10 s exports
inline constexpr double kActiveSpanLimit = 30.0;      // strict: span > 30 s exports

// Last two labels of an FQDN; single-label names pass through.
inline std::string sld_of(const std::string& fqdn) {
    std::size_t last = fqdn.rfind('.');
    if (last == std::string::npos) return fqdn;
    std::size_t prev = fqdn.rfind('.', last - 1);
    return prev == std::string::npos ? fqdn : fqdn.substr(prev + 1);
}

// Device-centric 5-tuple: src_* is always the device side, so replies map to
// the same key as requests.
struct FlowKey {
    std::uint32_t src_ip = 0;
    std::uint32_t dst_ip = 0;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    Transport transport = Transport::Tcp;

    auto operator<=>(const FlowKey&) const = default;

    static FlowKey from_packet(const PacketRecord& rec, bool originated) {
        if (originated)
            return FlowKey{rec.src_ip, rec.dst_ip, rec.src_port, rec.dst_port, rec.transport};
        return FlowKey{rec.dst_ip, rec.src_ip, rec.dst_port, rec.src_port, rec.transport};
    }
};

struct FlowRecord {
    FlowKey key;
    int device_id = 0;
    double start_time = 0.0;
    double end_time = 0.0;
    std::uint64_t bytes_out = 0;
    std::uint64_t bytes_in = 0;
    std::uint32_t pkts_out = 0;
    std::uint32_t pkts_in = 0;
    std::vector<std::uint32_t> pkt_sizes;  // first up to 50, both directions
    std::vector<double> pkt_times;
    std::string remote_domain;             // SLD or empty
    std::uint32_t continuation_index = 0;

    double duration() const { return end_time - start_time; }
};

// Per-device mapping IP -> SLD with observation timestamps; lookups are
// most-recent-wins at a given time.
class DomainMap {
public:
    void add(const DnsObservation& obs) {
        entries_[{obs.device_id, obs.resolved_ip}].push_back(
            {obs.timestamp, sld_of(obs.queried_name)});
    }

    void add_all(const std::vector<DnsObservation>& observations) {
        for (const auto& o : observations) add(o);
    }

    // Most recent SLD observed by `device_id` for `ip` at or before `at_time`.
    std::string resolve(int device_id, std::uint32_t ip, double at_time) const {
        auto it = entries_.find({device_id, ip});
        if (it == entries_.end()) return {};
        const std::string* best = nullptr;
        double best_ts = 0.0;
        for (const auto& [ts, sld] : it->second) {
            if (ts <= at_time && (!best || ts >= best_ts)) {
                best = &sld;
                best_ts = ts;
            }
        }
        return best ? *best : std::string{};
    }

private:
    std::map<std::pair<int, std::uint32_t>, std::vector<std::pair<double, std::string>>> entries_;
};

// One table per device. Segments export when a flow has been inactive for
// more than 10 s or has been active for more than 30 s; both checks run
// before the arriving packet is appended, so no exported segment spans
// more than 30 s and no intra-segment gap exceeds 10 s.
class FlowTable {
public:
    explicit FlowTable(int device_id, const DomainMap* domains = nullptr)
        : device_id_(device_id), domains_(domains) {}

    std::vector<FlowRecord> advance(const PacketRecord& rec, bool originated) {
        std::vector<FlowRecord> exported;
        FlowKey key = FlowKey::from_packet(rec, originated);
        auto it = segments_.find(key);
        if (it != segments_.end()) {
            Segment& seg = it->second;
            if (rec.timestamp - seg.last_activity > kInactivityTimeout ||
                rec.timestamp - seg.record.start_time > kActiveSpanLimit) {
                std::uint32_t next_index = seg.record.continuation_index + 1;
                exported.push_back(finish(seg));
                segments_.erase(it);
                it = segments_.end();
                next_index_[key] = next_index;
            }
        }
        if (it == segments_.end()) {
            Segment seg;
            seg.record.key = key;
            seg.record.device_id = device_id_;
            seg.record.start_time = rec.timestamp;
            seg.record.end_time = rec.timestamp;
            seg.record.continuation_index = next_index_.count(key) ? next_index_[key] : 0;
            seg.last_activity = rec.timestamp;
            it = segments_.emplace(key, std::move(seg)).first;
        }
        append(it->second, rec, originated);
        return exported;
    }

    std::vector<FlowRecord> flush() {
        std::vector<FlowRecord> exported;
        for (auto& [key, seg] : segments_) exported.push_back(finish(seg));
        segments_.clear();
        next_index_.clear();
        return exported;
    }

    std::size_t open_flows() const { return segments_.size(); }

private:
    struct Segment {
        FlowRecord record;
        double last_activity = 0.0;
    };

    void append(Segment& seg, const PacketRecord& rec, bool originated) {
        FlowRecord& r = seg.record;
        if (originated) {
            r.bytes_out += rec.wire_len;
            ++r.pkts_out;
        } else {
            r.bytes_in += rec.wire_len;
            ++r.pkts_in;
        }
        if (r.pkt_sizes.size() < kFlowPacketCap) {
            r.pkt_sizes.push_back(rec.wire_len);
            r.pkt_times.push_back(rec.timestamp);
        }
        // Out-of-order timestamps are tolerated; activity tracks max(seen).
        r.end_time = std::max(r.end_time, rec.timestamp);
        seg.last_activity = std::max(seg.last_activity, rec.timestamp);
    }

    FlowRecord finish(Segment& seg) {
        FlowRecord r = std::move(seg.record);
        if (domains_) r.remote_domain = domains_->resolve(device_id_, r.key.dst_ip, r.start_time);
        return r;
    }

    int device_id_;
    const DomainMap* domains_;
    std::map<FlowKey, Segment> segments_;
    std::map<FlowKey, std::uint32_t> next_index_;
};

inline std::vector<std::string> flow_csv_header() {
    std::vector<std::string> h = {"device_id", "src_ip",  "src_port", "dst_ip",
                                  "dst_port",  "proto",   "continuation",
                                  "start_time", "end_time", "bytes_out", "bytes_in",
                                  "pkts_out",  "pkts_in", "domain"};
    for (std::size_t i = 0; i < kFlowPacketCap; ++i) h.push_back("size_" + std::to_string(i));
    for (std::size_t i = 0; i < kFlowPacketCap; ++i) h.push_back("time_" + std::to_string(i));
    return h;
}

inline std::vector<std::string> flow_csv_row(const FlowRecord& r) {
    std::vector<std::string> row = {
        std::to_string(r.device_id),
        ip_to_string(r.key.src_ip),
        std::to_string(r.key.src_port),
        ip_to_string(r.key.dst_ip),
        std::to_string(r.key.dst_port),
        std::to_string(r.key.transport == Transport::Tcp ? 6 : 17),
        std::to_string(r.continuation_index),
        fmt_double(r.start_time),
        fmt_double(r.end_time),
        std::to_string(r.bytes_out),
        std::to_string(r.bytes_in),
        std::to_string(r.pkts_out),
        std::to_string(r.pkts_in),
        r.remote_domain};
    for (std::size_t i = 0; i < kFlowPacketCap; ++i)
        row.push_back(i < r.pkt_sizes.size() ? std::to_string(r.pkt_sizes[i]) : std::string{});
    for (std::size_t i = 0; i < kFlowPacketCap; ++i)
        row.push_back(i < r.pkt_times.size() ? fmt_double(r.pkt_times[i]) : std::string{});
    return row;
}

inline FlowRecord flow_from_csv_row(const std::vector<std::string>& row) {
    FlowRecord r;
    r.device_id = std::stoi(row[0]);
    r.key.src_ip = ip_from_string(row[1]);
    r.key.src_port = static_cast<std::uint16_t>(std::stoi(row[2]));
    r.key.dst_ip = ip_from_string(row[3]);
    r.key.dst_port = static_cast<std::uint16_t>(std::stoi(row[4]));
    r.key.transport = row[5] == "6" ? Transport::Tcp : Transport::Udp;
    r.continuation_index = static_cast<std::uint32_t>(std::stoul(row[6]));
    r.start_time = std::stod(row[7]);
    r.end_time = std::stod(row[8]);
    r.bytes_out = std::stoull(row[9]);
    r.bytes_in = std::stoull(row[10]);
    r.pkts_out = static_cast<std::uint32_t>(std::stoul(row[11]));
    r.pkts_in = static_cast<std::uint32_t>(std::stoul(row[12]));
    r.remote_domain = row[13];
    for (std::size_t i = 0; i < kFlowPacketCap; ++i) {
        const std::string& s = row[14 + i];
        if (s.empty()) break;
        r.pkt_sizes.push_back(static_cast<std::uint32_t>(std::stoul(s)));
        r.pkt_times.push_back(std::stod(row[14 + kFlowPacketCap + i]));
    }
    return r;
}

} // namespace iotid

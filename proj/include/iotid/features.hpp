#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "iotid/csv.hpp"
#include "iotid/flow.hpp"
#include "iotid/stats.hpp"
#include "iotid/tls.hpp"

namespace iotid {

inline constexpr std::size_t kGridRows = 10;     // packets per grid
inline constexpr std::size_t kGridCols = 250;    // bytes per packet
inline constexpr std::size_t kGridCells = kGridRows * kGridCols;
inline constexpr double kHourSeconds = 3600.0;

// ---------------------------------------------------------------------------
// Schemas

struct HourWindowRow {
    int device_id = 0;
    double window_start = 0.0;  // aligned to 3600 s
    std::vector<std::uint16_t> bag_of_ports;
    std::vector<std::string> bag_of_domains;
    std::vector<std::uint16_t> bag_of_ciphers;
    double flow_volume = 0.0;
    double flow_duration = 0.0;  // mean segment duration
    double flow_rate = 0.0;      // volume / 3600
    double sleep_time = 0.0;     // longest intra-window gap
    double dns_interval = 0.0;
    double ntp_interval = 0.0;
};

struct SecondWindowRow {
    int device_id = 0;
    double second_start = 0.0;
    double bytes_sum = 0.0;
    double bytes_avg = 0.0;
    double bytes_std = 0.0;
};

struct PacketGrid {
    int device_id = 0;
    FlowKey key;
    double start_time = 0.0;
    std::array<std::uint8_t, kGridCells> cells{};
};

struct FlowFeatureRow {
    int device_id = 0;
    double start_time = 0.0;
    double src_port = 0.0;
    double dest_port = 0.0;
    double bytes_out = 0.0;
    double bytes_in = 0.0;
    double pkts_out = 0.0;
    double pkts_in = 0.0;
    Moments ipt;
    Moments bytes;
    double duration = 0.0;
    double protocol = 6.0;  // TCP=6, UDP=17
    std::string domain;

    // Numeric columns in the persisted order, domain excluded.
    std::vector<double> numeric() const {
        return {src_port,  dest_port, bytes_out, bytes_in,  pkts_out,     pkts_in,
                ipt.mean,  ipt.std,   ipt.var,   ipt.skew,  ipt.kurtosis, bytes.mean,
                bytes.std, bytes.var, bytes.skew, bytes.kurtosis, duration, protocol};
    }
};

// ---------------------------------------------------------------------------
// Extraction

inline FlowFeatureRow extract_flow_features(const FlowRecord& flow, const DomainMap* map = nullptr) {
    FlowFeatureRow row;
    row.device_id = flow.device_id;
    row.start_time = flow.start_time;
    row.src_port = flow.key.src_port;
    row.dest_port = flow.key.dst_port;
    row.bytes_out = static_cast<double>(flow.bytes_out);
    row.bytes_in = static_cast<double>(flow.bytes_in);
    row.pkts_out = flow.pkts_out;
    row.pkts_in = flow.pkts_in;
    std::vector<double> sizes(flow.pkt_sizes.begin(), flow.pkt_sizes.end());
    std::vector<double> gaps;
    for (std::size_t i = 1; i < flow.pkt_times.size(); ++i)
        gaps.push_back(flow.pkt_times[i] - flow.pkt_times[i - 1]);
    row.bytes = moments(sizes);
    row.ipt = moments(gaps);
    row.duration = flow.duration();
    row.protocol = flow.key.transport == Transport::Tcp ? 6.0 : 17.0;
    row.domain = map ? map->resolve(flow.device_id, flow.key.dst_ip, flow.start_time)
                     : flow.remote_domain;
    if (row.domain.empty()) row.domain = flow.remote_domain;
    return row;
}

// Packets of one device, sorted by timestamp; one row per nonempty second.
inline std::vector<SecondWindowRow> extract_second_window(
    int device_id, const std::vector<std::pair<double, std::uint32_t>>& packets) {
    std::vector<SecondWindowRow> rows;
    std::size_t i = 0;
    while (i < packets.size()) {
        double second = std::floor(packets[i].first);
        std::vector<double> sizes;
        while (i < packets.size() && std::floor(packets[i].first) == second) {
            sizes.push_back(packets[i].second);
            ++i;
        }
        Moments m = moments(sizes);
        rows.push_back(SecondWindowRow{device_id, second,
                                       m.mean * static_cast<double>(sizes.size()), m.mean, m.std});
    }
    return rows;
}

// Accumulates one 10x250 grid per flow key over the whole capture (not per
// 30-s segment). MAC bytes and IPv4 address bytes are zeroed in every row.
class GridBuilder {
public:
    void consume(const AttributedPacket& pkt) {
        const auto& rec = pkt.record;
        if (rec.transport == Transport::Other) return;
        FlowKey key = FlowKey::from_packet(rec, pkt.originated);
        auto [it, fresh] = grids_.try_emplace({pkt.device_id, key});
        State& st = it->second;
        if (fresh) {
            st.grid.device_id = pkt.device_id;
            st.grid.key = key;
            st.grid.start_time = rec.timestamp;
        }
        if (st.rows_filled >= kGridRows) return;
        std::uint8_t* row = st.grid.cells.data() + st.rows_filled * kGridCols;
        std::size_t n = std::min(rec.bytes.size(), kGridCols);
        std::copy(rec.bytes.begin(), rec.bytes.begin() + static_cast<std::ptrdiff_t>(n), row);
        anonymize(row, n, rec);
        ++st.rows_filled;
    }

    std::vector<PacketGrid> finish() {
        std::vector<PacketGrid> out;
        out.reserve(grids_.size());
        for (auto& [k, st] : grids_) out.push_back(std::move(st.grid));
        grids_.clear();
        return out;
    }

private:
    static void anonymize(std::uint8_t* row, std::size_t n, const PacketRecord& rec) {
        for (std::size_t i = 0; i < std::min<std::size_t>(12, n); ++i) row[i] = 0;
        if (rec.bytes.size() >= 14 && detail::be16(rec.bytes.data() + 12) == 0x0800) {
            // IPv4 src/dst addresses sit in the fixed part of the IP header.
            for (std::size_t i = 26; i < std::min<std::size_t>(34, n); ++i) row[i] = 0;
        }
    }

    struct State {
        PacketGrid grid;
        std::size_t rows_filled = 0;
    };
    std::map<std::pair<int, FlowKey>, State> grids_;
};

struct HourWindowInputs {
    // (timestamp, dst_port, transport, originated) for every packet of the device
    struct Packet {
        double timestamp;
        std::uint16_t dst_port;
        Transport transport;
        bool originated;
    };
    std::vector<Packet> packets;            // time-sorted
    std::vector<FlowRecord> flows;          // this device's exported segments
    std::vector<TlsClientHelloObservation> tls;
};

namespace feat_detail {

inline double mean_gap(const std::vector<double>& times) {
    if (times.size() < 2) return 0.0;
    return (times.back() - times.front()) / static_cast<double>(times.size() - 1);
}

} // namespace feat_detail

inline std::vector<HourWindowRow> extract_hour_window(int device_id,
                                                      const HourWindowInputs& in) {
    std::map<double, HourWindowRow> rows;
    auto row_for = [&](double ts) -> HourWindowRow& {
        double start = std::floor(ts / kHourSeconds) * kHourSeconds;
        auto [it, fresh] = rows.try_emplace(start);
        if (fresh) {
            it->second.device_id = device_id;
            it->second.window_start = start;
        }
        return it->second;
    };

    // Hours exist only where the device sent or received at least one packet.
    std::map<double, std::vector<double>> packet_times;
    std::map<double, std::vector<double>> dns_times;
    std::map<double, std::vector<double>> ntp_times;
    for (const auto& p : in.packets) {
        HourWindowRow& row = row_for(p.timestamp);
        packet_times[row.window_start].push_back(p.timestamp);
        if (p.originated && p.transport == Transport::Udp) {
            if (p.dst_port == 53) dns_times[row.window_start].push_back(p.timestamp);
            if (p.dst_port == 123) ntp_times[row.window_start].push_back(p.timestamp);
        }
    }
    for (const auto& f : in.flows) {
        if (rows.find(std::floor(f.start_time / kHourSeconds) * kHourSeconds) == rows.end())
            continue;  // flow without packets in-window cannot happen; guard anyway
        HourWindowRow& row = row_for(f.start_time);
        row.bag_of_ports.push_back(f.key.dst_port);
        if (!f.remote_domain.empty()) row.bag_of_domains.push_back(f.remote_domain);
        row.flow_volume += static_cast<double>(f.bytes_out + f.bytes_in);
        row.flow_duration += f.duration();  // turned into a mean below
    }
    for (const auto& t : in.tls) {
        if (rows.find(std::floor(t.timestamp / kHourSeconds) * kHourSeconds) == rows.end())
            continue;
        HourWindowRow& row = row_for(t.timestamp);
        for (std::uint16_t c : t.cipher_suites) row.bag_of_ciphers.push_back(c);
    }

    std::vector<HourWindowRow> out;
    for (auto& [start, row] : rows) {
        auto pt = packet_times.find(start);
        if (pt == packet_times.end() || pt->second.empty()) continue;
        std::size_t segs = row.bag_of_ports.size();
        if (segs > 0) row.flow_duration /= static_cast<double>(segs);
        row.flow_rate = row.flow_volume / kHourSeconds;
        // Longest gap, with the window edges acting as virtual events.
        const auto& times = pt->second;
        double gap = times.front() - start;
        for (std::size_t i = 1; i < times.size(); ++i)
            gap = std::max(gap, times[i] - times[i - 1]);
        gap = std::max(gap, start + kHourSeconds - times.back());
        row.sleep_time = std::min(gap, kHourSeconds);
        auto dt = dns_times.find(start);
        if (dt != dns_times.end()) row.dns_interval = feat_detail::mean_gap(dt->second);
        auto nt = ntp_times.find(start);
        if (nt != ntp_times.end()) row.ntp_interval = feat_detail::mean_gap(nt->second);
        out.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace feat_detail {

template <typename T>
std::string join_bag(const std::vector<T>& bag) {
    std::string out;
    for (std::size_t i = 0; i < bag.size(); ++i) {
        if (i) out += ';';
        if constexpr (std::is_same_v<T, std::string>)
            out += bag[i];
        else
            out += std::to_string(bag[i]);
    }
    return out;
}

inline std::vector<std::string> split_bag(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size() && !s.empty()) {
        std::size_t next = s.find(';', pos);
        if (next == std::string::npos) {
            out.push_back(s.substr(pos));
            break;
        }
        out.push_back(s.substr(pos, next - pos));
        pos = next + 1;
    }
    return out;
}

} // namespace feat_detail

inline void write_hour_csv(const std::string& path, const std::vector<HourWindowRow>& rows) {
    CsvWriter w(path);
    w.row({"device_id", "window_start", "bag_of_ports", "bag_of_domains", "bag_of_ciphers",
           "flow_volume", "flow_duration", "flow_rate", "sleep_time", "dns_interval",
           "ntp_interval"});
    for (const auto& r : rows) {
        w.row({std::to_string(r.device_id), fmt_double(r.window_start),
               feat_detail::join_bag(r.bag_of_ports), feat_detail::join_bag(r.bag_of_domains),
               feat_detail::join_bag(r.bag_of_ciphers), fmt_double(r.flow_volume),
               fmt_double(r.flow_duration), fmt_double(r.flow_rate), fmt_double(r.sleep_time),
               fmt_double(r.dns_interval), fmt_double(r.ntp_interval)});
    }
}

inline std::vector<HourWindowRow> read_hour_csv(const std::string& path) {
    auto raw = csv_read(path);
    std::vector<HourWindowRow> rows;
    for (std::size_t i = 1; i < raw.size(); ++i) {
        const auto& f = raw[i];
        HourWindowRow r;
        r.device_id = std::stoi(f[0]);
        r.window_start = std::stod(f[1]);
        for (const auto& t : feat_detail::split_bag(f[2]))
            r.bag_of_ports.push_back(static_cast<std::uint16_t>(std::stoi(t)));
        r.bag_of_domains = feat_detail::split_bag(f[3]);
        for (const auto& t : feat_detail::split_bag(f[4]))
            r.bag_of_ciphers.push_back(static_cast<std::uint16_t>(std::stoi(t)));
        r.flow_volume = std::stod(f[5]);
        r.flow_duration = std::stod(f[6]);
        r.flow_rate = std::stod(f[7]);
        r.sleep_time = std::stod(f[8]);
        r.dns_interval = std::stod(f[9]);
        r.ntp_interval = std::stod(f[10]);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void write_second_csv(const std::string& path, const std::vector<SecondWindowRow>& rows) {
    CsvWriter w(path);
    w.row({"device_id", "second_start", "bytes_sum", "bytes_avg", "bytes_std"});
    for (const auto& r : rows)
        w.row({std::to_string(r.device_id), fmt_double(r.second_start), fmt_double(r.bytes_sum),
               fmt_double(r.bytes_avg), fmt_double(r.bytes_std)});
}

inline std::vector<SecondWindowRow> read_second_csv(const std::string& path) {
    auto raw = csv_read(path);
    std::vector<SecondWindowRow> rows;
    for (std::size_t i = 1; i < raw.size(); ++i) {
        const auto& f = raw[i];
        rows.push_back(SecondWindowRow{std::stoi(f[0]), std::stod(f[1]), std::stod(f[2]),
                                       std::stod(f[3]), std::stod(f[4])});
    }
    return rows;
}

inline void write_flow_feature_csv(const std::string& path,
                                   const std::vector<FlowFeatureRow>& rows) {
    CsvWriter w(path);
    w.row({"device_id", "start_time", "src_port", "dest_port", "bytes_out", "bytes_in",
           "pkts_out", "pkts_in", "ipt_mean", "ipt_std", "ipt_var", "ipt_skew", "ipt_kurtosis",
           "b_mean", "b_std", "b_var", "b_skew", "b_kurtosis", "duration", "protocol", "domain"});
    for (const auto& r : rows) {
        std::vector<std::string> row = {std::to_string(r.device_id), fmt_double(r.start_time)};
        for (double v : r.numeric()) row.push_back(fmt_double(v));
        row.push_back(r.domain);
        w.row(row);
    }
}

inline std::vector<FlowFeatureRow> read_flow_feature_csv(const std::string& path) {
    auto raw = csv_read(path);
    std::vector<FlowFeatureRow> rows;
    for (std::size_t i = 1; i < raw.size(); ++i) {
        const auto& f = raw[i];
        FlowFeatureRow r;
        r.device_id = std::stoi(f[0]);
        r.start_time = std::stod(f[1]);
        r.src_port = std::stod(f[2]);
        r.dest_port = std::stod(f[3]);
        r.bytes_out = std::stod(f[4]);
        r.bytes_in = std::stod(f[5]);
        r.pkts_out = std::stod(f[6]);
        r.pkts_in = std::stod(f[7]);
        r.ipt = {std::stod(f[8]), std::stod(f[9]), std::stod(f[10]), std::stod(f[11]),
                 std::stod(f[12])};
        r.bytes = {std::stod(f[13]), std::stod(f[14]), std::stod(f[15]), std::stod(f[16]),
                   std::stod(f[17])};
        r.duration = std::stod(f[18]);
        r.protocol = std::stod(f[19]);
        r.domain = f[20];
        rows.push_back(std::move(r));
    }
    return rows;
}

// Grids persist as consecutive 2500-byte records plus a sidecar index CSV.
inline void write_grids(const std::string& bin_path, const std::string& index_path,
                        const std::vector<PacketGrid>& grids) {
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open for writing: " + bin_path);
    CsvWriter idx(index_path);
    idx.row({"device_id", "src_ip", "src_port", "dst_ip", "dst_port", "proto", "start_time",
             "offset"});
    std::uint64_t offset = 0;
    for (const auto& g : grids) {
        bin.write(reinterpret_cast<const char*>(g.cells.data()), kGridCells);
        idx.row({std::to_string(g.device_id), ip_to_string(g.key.src_ip),
                 std::to_string(g.key.src_port), ip_to_string(g.key.dst_ip),
                 std::to_string(g.key.dst_port),
                 std::to_string(g.key.transport == Transport::Tcp ? 6 : 17),
                 fmt_double(g.start_time), std::to_string(offset)});
        offset += kGridCells;
    }
}

inline std::vector<PacketGrid> read_grids(const std::string& bin_path,
                                          const std::string& index_path) {
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open for reading: " + bin_path);
    auto raw = csv_read(index_path);
    std::vector<PacketGrid> grids;
    for (std::size_t i = 1; i < raw.size(); ++i) {
        const auto& f = raw[i];
        PacketGrid g;
        g.device_id = std::stoi(f[0]);
        g.key.src_ip = ip_from_string(f[1]);
        g.key.src_port = static_cast<std::uint16_t>(std::stoi(f[2]));
        g.key.dst_ip = ip_from_string(f[3]);
        g.key.dst_port = static_cast<std::uint16_t>(std::stoi(f[4]));
        g.key.transport = f[5] == "6" ? Transport::Tcp : Transport::Udp;
        g.start_time = std::stod(f[6]);
        bin.seekg(static_cast<std::streamoff>(std::stoull(f[7])));
        bin.read(reinterpret_cast<char*>(g.cells.data()), kGridCells);
        if (bin.gcount() != static_cast<std::streamsize>(kGridCells))
            throw std::runtime_error("grid file truncated: " + bin_path);
        grids.push_back(std::move(g));
    }
    return grids;
}

} // namespace iotid

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "iotid/csv.hpp"
#include "iotid/net.hpp"
#include "iotid/pcap.hpp"
#include "iotid/prng.hpp"
#include "iotid/tls.hpp"

namespace iotid {

inline constexpr double kSynthWeekOrigin = 1.0e9;  // week 1 starts here
inline constexpr std::uint32_t kSynthMinFrame = 60;
inline constexpr std::uint32_t kSynthMaxFrame = 1514;

struct RemoteEndpoint {
    std::string domain;   // FQDN the device resolves before connecting
    std::uint32_t ip = 0;
    std::uint16_t port = 0;
    Transport protocol = Transport::Tcp;
};

struct DeviceProfile {
    int device_id = 0;
    MacAddress mac{};
    std::string name;
    double flows_per_hour = 1.0;
    std::vector<RemoteEndpoint> endpoints;
    double size_mean = 200.0, size_std = 20.0;   // wire bytes
    double pkts_mean = 6.0, pkts_std = 1.0;      // packets per flow
    double gap_mean = 0.3, gap_std = 0.05;       // seconds between packets
    bool dns_before_flow = true;
    std::vector<std::uint16_t> tls_cipher_suites;
};

struct DriftEvent {
    enum class Kind { ShiftSizes, ChangeEndpoints, ChangeRate, ChangeGap, ChangeCiphers };
    int at_week = 1;      // effective from the start of this week
    int device_id = 0;
    Kind kind = Kind::ShiftSizes;
    double factor = 1.0;
    std::vector<RemoteEndpoint> new_endpoints;
    std::vector<std::uint16_t> new_ciphers;
};

struct Scenario {
    std::vector<DeviceProfile> profiles;
    int weeks = 1;
    std::vector<DriftEvent> drift;
    std::uint64_t seed = 0;
};

struct SynthOutput {
    std::vector<std::uint8_t> pcap;
    DeviceManifest manifest;
    std::vector<std::pair<double, int>> labels;  // (timestamp, device_id) per packet
};

namespace synth_detail {

struct RawPacket {
    double ts = 0.0;
    int device_id = 0;
    std::vector<std::uint8_t> bytes;
};

inline void push_be16(std::vector<std::uint8_t>& v, std::uint16_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x & 0xff));
}

inline void push_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    push_be16(v, static_cast<std::uint16_t>(x >> 16));
    push_be16(v, static_cast<std::uint16_t>(x & 0xffff));
}

// Ethernet + IPv4 + TCP/UDP frame. Checksums stay zero; nothing in the
// pipeline verifies them.
inline std::vector<std::uint8_t> build_frame(const MacAddress& src_mac, const MacAddress& dst_mac,
                                             std::uint32_t src_ip, std::uint32_t dst_ip,
                                             std::uint16_t src_port, std::uint16_t dst_port,
                                             Transport proto,
                                             const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> f;
    f.insert(f.end(), dst_mac.begin(), dst_mac.end());
    f.insert(f.end(), src_mac.begin(), src_mac.end());
    push_be16(f, 0x0800);
    std::size_t l4_len = (proto == Transport::Tcp ? 20 : 8) + payload.size();
    f.push_back(0x45);
    f.push_back(0);
    push_be16(f, static_cast<std::uint16_t>(20 + l4_len));
    push_be16(f, 0);       // id
    push_be16(f, 0x4000);  // DF
    f.push_back(64);       // ttl
    f.push_back(proto == Transport::Tcp ? 6 : 17);
    push_be16(f, 0);       // checksum
    push_be32(f, src_ip);
    push_be32(f, dst_ip);
    if (proto == Transport::Tcp) {
        push_be16(f, src_port);
        push_be16(f, dst_port);
        push_be32(f, 0);   // seq
        push_be32(f, 0);   // ack
        f.push_back(5 << 4);
        f.push_back(0x18);  // PSH|ACK
        push_be16(f, 0xffff);
        push_be16(f, 0);
        push_be16(f, 0);
    } else {
        push_be16(f, src_port);
        push_be16(f, dst_port);
        push_be16(f, static_cast<std::uint16_t>(8 + payload.size()));
        push_be16(f, 0);
    }
    f.insert(f.end(), payload.begin(), payload.end());
    return f;
}

inline std::vector<std::uint8_t> encode_dns_name(const std::string& fqdn) {
    std::vector<std::uint8_t> out;
    std::size_t pos = 0;
    while (pos <= fqdn.size()) {
        std::size_t dot = fqdn.find('.', pos);
        std::size_t end = dot == std::string::npos ? fqdn.size() : dot;
        out.push_back(static_cast<std::uint8_t>(end - pos));
        for (std::size_t i = pos; i < end; ++i) out.push_back(static_cast<std::uint8_t>(fqdn[i]));
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    out.push_back(0);
    return out;
}

inline std::vector<std::uint8_t> build_dns_query(const std::string& fqdn, std::uint16_t id) {
    std::vector<std::uint8_t> m;
    push_be16(m, id);
    push_be16(m, 0x0100);  // RD
    push_be16(m, 1);       // QD
    push_be16(m, 0);
    push_be16(m, 0);
    push_be16(m, 0);
    auto name = encode_dns_name(fqdn);
    m.insert(m.end(), name.begin(), name.end());
    push_be16(m, 1);  // A
    push_be16(m, 1);  // IN
    return m;
}

inline std::vector<std::uint8_t> build_dns_response(const std::string& fqdn, std::uint32_t ip,
                                                    std::uint16_t id) {
    std::vector<std::uint8_t> m;
    push_be16(m, id);
    push_be16(m, 0x8180);  // QR|RD|RA
    push_be16(m, 1);
    push_be16(m, 1);  // one answer
    push_be16(m, 0);
    push_be16(m, 0);
    auto name = encode_dns_name(fqdn);
    m.insert(m.end(), name.begin(), name.end());
    push_be16(m, 1);
    push_be16(m, 1);
    push_be16(m, 0xc00c);  // pointer to the question name
    push_be16(m, 1);
    push_be16(m, 1);
    push_be32(m, 300);     // ttl
    push_be16(m, 4);
    push_be32(m, ip);
    return m;
}

inline std::uint8_t endpoint_fill(const RemoteEndpoint& ep) {
    std::uint32_t h = 2166136261u;
    for (char c : ep.domain) h = (h ^ static_cast<std::uint8_t>(c)) * 16777619u;
    h = (h ^ ep.port) * 16777619u;
    return static_cast<std::uint8_t>(h >> 8);
}

inline DeviceProfile effective_profile(const DeviceProfile& base,
                                       const std::vector<DriftEvent>& drift, int week) {
    DeviceProfile p = base;
    for (const auto& d : drift) {
        if (d.device_id != base.device_id || week < d.at_week) continue;
        switch (d.kind) {
            case DriftEvent::Kind::ShiftSizes: p.size_mean *= d.factor; p.size_std *= d.factor; break;
            case DriftEvent::Kind::ChangeEndpoints: p.endpoints = d.new_endpoints; break;
            case DriftEvent::Kind::ChangeRate: p.flows_per_hour *= d.factor; break;
            case DriftEvent::Kind::ChangeGap: p.gap_mean *= d.factor; p.gap_std *= d.factor; break;
            case DriftEvent::Kind::ChangeCiphers: p.tls_cipher_suites = d.new_ciphers; break;
        }
    }
    return p;
}

} // namespace synth_detail

// Seeded, reproducible fleet capture. Same inputs give byte-identical pcaps.
inline SynthOutput generate(const Scenario& scenario) {
    using namespace synth_detail;
    if (scenario.profiles.size() < 2)
        throw std::invalid_argument("synth: at least 2 device profiles required");
    if (scenario.weeks < 1) throw std::invalid_argument("synth: weeks must be >= 1");

    std::vector<ManifestEntry> entries;
    for (const auto& p : scenario.profiles)
        entries.push_back(ManifestEntry{p.mac, p.device_id, p.name});
    DeviceManifest manifest(entries);  // rejects duplicate MACs / bad IDs

    const MacAddress gateway_mac = {0xaa, 0x00, 0x00, 0x00, 0x00, 0xfe};
    std::vector<RawPacket> packets;
    Prng master(scenario.seed ^ 0x7b1f0a3c59e2d841ULL);

    for (const auto& base : scenario.profiles) {
        Prng rng = master.fork(static_cast<std::uint64_t>(base.device_id) + 1);
        std::uint32_t device_ip = ip_from_string("192.168.1.10") + static_cast<std::uint32_t>(base.device_id);
        int total_hours = scenario.weeks * 7 * 24;
        for (int hour = 0; hour < total_hours; ++hour) {
            int week = 1 + hour / (7 * 24);
            DeviceProfile prof = effective_profile(base, scenario.drift, week);
            if (prof.endpoints.empty()) continue;
            int n_flows = rng.poisson(prof.flows_per_hour);
            for (int fl = 0; fl < n_flows; ++fl) {
                double start = kSynthWeekOrigin + hour * 3600.0 + rng.uniform(1.0, 3500.0);
                const RemoteEndpoint& ep =
                    prof.endpoints[rng.next_below(prof.endpoints.size())];
                std::uint16_t sport = static_cast<std::uint16_t>(20000 + rng.next_below(40000));
                std::uint8_t fill = endpoint_fill(ep);

                if (prof.dns_before_flow) {
                    std::uint16_t dns_id = static_cast<std::uint16_t>(rng.next_below(65536));
                    std::uint16_t dns_sport =
                        static_cast<std::uint16_t>(20000 + rng.next_below(40000));
                    packets.push_back({start - 0.05, prof.device_id,
                                       build_frame(prof.mac, gateway_mac, device_ip,
                                                   ip_from_string("192.168.1.1"), dns_sport, 53,
                                                   Transport::Udp,
                                                   build_dns_query(ep.domain, dns_id))});
                    packets.push_back({start - 0.04, prof.device_id,
                                       build_frame(gateway_mac, prof.mac,
                                                   ip_from_string("192.168.1.1"), device_ip, 53,
                                                   dns_sport, Transport::Udp,
                                                   build_dns_response(ep.domain, ep.ip, dns_id))});
                }

                int n_pkts = static_cast<int>(
                    std::llround(rng.gaussian(prof.pkts_mean, prof.pkts_std)));
                n_pkts = std::clamp(n_pkts, 2, 50);
                double ts = start;
                std::size_t header = ep.protocol == Transport::Tcp ? 54 : 42;
                for (int k = 0; k < n_pkts; ++k) {
                    bool outbound = k % 2 == 0;
                    std::vector<std::uint8_t> payload;
                    if (k == 0 && ep.protocol == Transport::Tcp &&
                        !prof.tls_cipher_suites.empty()) {
                        payload = build_client_hello(prof.tls_cipher_suites, fill);
                    } else {
                        std::uint32_t wire = static_cast<std::uint32_t>(std::clamp(
                            std::llround(rng.gaussian(prof.size_mean, prof.size_std)),
                            static_cast<long long>(kSynthMinFrame),
                            static_cast<long long>(kSynthMaxFrame)));
                        std::size_t plen = wire > header ? wire - header : 0;
                        payload.assign(plen, static_cast<std::uint8_t>(fill + k));
                    }
                    auto frame = outbound
                                     ? build_frame(prof.mac, gateway_mac, device_ip, ep.ip, sport,
                                                   ep.port, ep.protocol, payload)
                                     : build_frame(gateway_mac, prof.mac, ep.ip, device_ip,
                                                   ep.port, sport, ep.protocol, payload);
                    packets.push_back({ts, prof.device_id, std::move(frame)});
                    ts += std::max(0.001, rng.gaussian(prof.gap_mean, prof.gap_std));
                }
            }
        }
    }

    std::stable_sort(packets.begin(), packets.end(),
                     [](const RawPacket& a, const RawPacket& b) { return a.ts < b.ts; });

    SynthOutput out;
    out.manifest = std::move(manifest);
    std::ostringstream pcap_stream(std::ios::binary);
    PcapWriter writer(pcap_stream);
    for (const auto& p : packets) {
        writer.write(p.ts, p.bytes);
        out.labels.emplace_back(p.ts, p.device_id);
    }
    std::string s = pcap_stream.str();
    out.pcap.assign(s.begin(), s.end());
    return out;
}

inline void write_labels_csv(const std::string& path,
                             const std::vector<std::pair<double, int>>& labels) {
    CsvWriter w(path);
    w.row({"timestamp", "device_id"});
    for (const auto& [ts, dev] : labels) w.row({fmt_double(ts), std::to_string(dev)});
}

// ---------------------------------------------------------------------------
// Scenario files

inline nlohmann::json endpoint_to_json(const RemoteEndpoint& ep) {
    return {{"domain", ep.domain},
            {"ip", ip_to_string(ep.ip)},
            {"port", ep.port},
            {"protocol", ep.protocol == Transport::Tcp ? "tcp" : "udp"}};
}

inline RemoteEndpoint endpoint_from_json(const nlohmann::json& j) {
    RemoteEndpoint ep;
    ep.domain = j.at("domain").get<std::string>();
    ep.ip = ip_from_string(j.at("ip").get<std::string>());
    ep.port = j.at("port").get<std::uint16_t>();
    ep.protocol = j.at("protocol").get<std::string>() == "udp" ? Transport::Udp : Transport::Tcp;
    return ep;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
    Scenario sc;
    sc.weeks = j.at("weeks").get<int>();
    sc.seed = j.value("seed", 0ULL);
    for (const auto& pj : j.at("profiles")) {
        DeviceProfile p;
        p.device_id = pj.at("device_id").get<int>();
        p.mac = mac_from_string(pj.at("mac").get<std::string>());
        p.name = pj.value("name", "device-" + std::to_string(p.device_id));
        p.flows_per_hour = pj.at("flows_per_hour").get<double>();
        for (const auto& ej : pj.at("endpoints")) p.endpoints.push_back(endpoint_from_json(ej));
        p.size_mean = pj.at("size_mean").get<double>();
        p.size_std = pj.at("size_std").get<double>();
        p.pkts_mean = pj.value("pkts_mean", 6.0);
        p.pkts_std = pj.value("pkts_std", 1.0);
        p.gap_mean = pj.value("gap_mean", 0.3);
        p.gap_std = pj.value("gap_std", 0.05);
        p.dns_before_flow = pj.value("dns_before_flow", true);
        for (const auto& c : pj.value("cipher_suites", std::vector<int>{}))
            p.tls_cipher_suites.push_back(static_cast<std::uint16_t>(c));
        if (p.size_mean <= 0 || p.pkts_mean <= 0 || p.gap_mean <= 0)
            throw std::invalid_argument("profile means must be positive");
        sc.profiles.push_back(std::move(p));
    }
    for (const auto& dj : j.value("drift", nlohmann::json::array())) {
        DriftEvent d;
        d.at_week = dj.at("at_week").get<int>();
        d.device_id = dj.at("device_id").get<int>();
        std::string kind = dj.at("mutation").get<std::string>();
        if (kind == "shift_sizes") {
            d.kind = DriftEvent::Kind::ShiftSizes;
            d.factor = dj.at("factor").get<double>();
        } else if (kind == "change_endpoints") {
            d.kind = DriftEvent::Kind::ChangeEndpoints;
            for (const auto& ej : dj.at("endpoints"))
                d.new_endpoints.push_back(endpoint_from_json(ej));
        } else if (kind == "change_rate") {
            d.kind = DriftEvent::Kind::ChangeRate;
            d.factor = dj.at("factor").get<double>();
        } else if (kind == "change_gap") {
            d.kind = DriftEvent::Kind::ChangeGap;
            d.factor = dj.at("factor").get<double>();
        } else if (kind == "change_ciphers") {
            d.kind = DriftEvent::Kind::ChangeCiphers;
            for (const auto& c : dj.at("cipher_suites"))
                d.new_ciphers.push_back(c.get<std::uint16_t>());
        } else {
            throw std::invalid_argument("unknown drift mutation: " + kind);
        }
        if (d.at_week < 1 || d.at_week > sc.weeks)
            throw std::invalid_argument("drift at_week outside the generated span");
        sc.drift.push_back(std::move(d));
    }
    return sc;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario: " + path);
    nlohmann::json j;
    in >> j;
    return scenario_from_json(j);
}

} // namespace iotid

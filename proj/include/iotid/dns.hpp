#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iotid/pcap.hpp"

namespace iotid {

struct DnsObservation {
    double timestamp = 0.0;
    std::string queried_name;  // lowercase FQDN
    std::uint32_t resolved_ip = 0;
    int device_id = 0;

    bool operator==(const DnsObservation&) const = default;
};

namespace dns_detail {

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// Reads one possibly-compressed name. Returns false on malformed input;
// advances `pos` past the name (past the pointer when compressed).
inline bool read_name(const std::uint8_t* msg, std::size_t len, std::size_t& pos,
                      std::string& out) {
    std::size_t p = pos;
    bool jumped = false;
    int hops = 0;
    out.clear();
    while (true) {
        if (p >= len || ++hops > 128) return false;
        std::uint8_t l = msg[p];
        if ((l & 0xc0) == 0xc0) {
            if (p + 1 >= len) return false;
            std::size_t target = ((l & 0x3f) << 8) | msg[p + 1];
            if (!jumped) pos = p + 2;
            if (target >= p) return false;  // forward pointers are invalid
            p = target;
            jumped = true;
            continue;
        }
        if (l == 0) {
            if (!jumped) pos = p + 1;
            if (!out.empty()) out.pop_back();
            return true;
        }
        if ((l & 0xc0) != 0 || p + 1 + l > len) return false;
        for (std::size_t i = 0; i < l; ++i)
            out += static_cast<char>(std::tolower(msg[p + 1 + i]));
        out += '.';
        p += 1 + l;
    }
}

} // namespace dns_detail

// Parses a DNS response payload; emits one observation per answer A record,
// with CNAME chains walked back to the original question name.
// Returns false when the payload is malformed.
inline bool parse_dns_response(const std::uint8_t* msg, std::size_t len, double timestamp,
                               int device_id, std::vector<DnsObservation>& out) {
    if (len < 12) return false;
    bool is_response = (msg[2] & 0x80) != 0;
    if (!is_response) return true;  // queries carry no answers; not an error
    std::uint16_t qdcount = detail::be16(msg + 4);
    std::uint16_t ancount = detail::be16(msg + 6);
    if (qdcount == 0) return true;

    std::size_t pos = 12;
    std::string question;
    for (std::uint16_t q = 0; q < qdcount; ++q) {
        std::string name;
        if (!dns_detail::read_name(msg, len, pos, name)) return false;
        if (q == 0) question = name;
        if (pos + 4 > len) return false;
        pos += 4;  // qtype + qclass
    }
    if (question.empty()) return false;

    // owner -> target for CNAME answers, plus (owner, ip) for A answers
    std::map<std::string, std::string> cname;
    std::vector<std::pair<std::string, std::uint32_t>> a_records;
    for (std::uint16_t a = 0; a < ancount; ++a) {
        std::string owner;
        if (!dns_detail::read_name(msg, len, pos, owner)) return false;
        if (pos + 10 > len) return false;
        std::uint16_t rtype = detail::be16(msg + pos);
        std::uint16_t rdlen = detail::be16(msg + pos + 8);
        pos += 10;
        if (pos + rdlen > len) return false;
        if (rtype == 1 && rdlen == 4) {
            a_records.emplace_back(owner, detail::be32(msg + pos));
            pos += rdlen;
        } else if (rtype == 5) {
            std::size_t rp = pos;
            std::string target;
            if (!dns_detail::read_name(msg, len, rp, target)) return false;
            cname[owner] = target;
            pos += rdlen;
        } else {
            pos += rdlen;
        }
    }

    // target -> owner, to walk A-record owners back toward the question
    std::map<std::string, std::string> reverse;
    for (const auto& [owner, target] : cname) reverse[target] = owner;

    for (const auto& [owner, ip] : a_records) {
        std::string name = owner;
        for (int hops = 0; hops < 32; ++hops) {
            auto it = reverse.find(name);
            if (it == reverse.end()) break;
            name = it->second;
        }
        out.push_back(DnsObservation{timestamp, name == owner ? owner : name, ip, device_id});
    }
    return true;
}

struct DnsExtractor {
    std::vector<DnsObservation> observations;
    std::uint64_t malformed = 0;

    void consume(const AttributedPacket& pkt) {
        const auto& rec = pkt.record;
        if (rec.transport != Transport::Udp || rec.src_port != 53) return;
        auto [payload, len] = transport_payload(rec);
        if (!payload) {
            ++malformed;
            return;
        }
        if (!parse_dns_response(payload, len, rec.timestamp, pkt.device_id, observations))
            ++malformed;
    }
};

inline std::vector<DnsObservation> extract_dns(const std::vector<AttributedPacket>& packets) {
    DnsExtractor ex;
    for (const auto& p : packets) ex.consume(p);
    return std::move(ex.observations);
}

} // namespace iotid

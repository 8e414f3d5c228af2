#pragma once

#include <cstdint>
#include <vector>

#include "iotid/pcap.hpp"

namespace iotid {

struct TlsClientHelloObservation {
    double timestamp = 0.0;
    int device_id = 0;
    std::vector<std::uint16_t> cipher_suites;  // wire order

    bool operator==(const TlsClientHelloObservation&) const = default;
};

// Extracts the cipher-suite vector from a TLS ClientHello at the start of a
// TCP payload. Detection is stateless: only the first segment of a direction
// is examined, no reassembly. Returns false when the payload declares a
// ClientHello but the suite vector is incomplete.
inline bool parse_client_hello(const std::uint8_t* p, std::size_t len,
                               std::vector<std::uint16_t>& suites) {
    // TLS record header: type 0x16 (handshake), version major 0x03
    if (len < 5 || p[0] != 0x16 || p[1] != 0x03) return true;  // not a hello; no error
    std::size_t pos = 5;
    if (pos + 4 > len || p[pos] != 0x01) return true;  // not ClientHello
    pos += 4;           // handshake type + 24-bit length
    pos += 2 + 32;      // client version + random
    if (pos + 1 > len) return false;
    pos += 1 + p[pos];  // session id
    if (pos + 2 > len) return false;
    std::size_t suites_len = detail::be16(p + pos);
    pos += 2;
    if (suites_len % 2 != 0 || pos + suites_len > len) return false;
    suites.clear();
    for (std::size_t i = 0; i + 1 < suites_len; i += 2)
        suites.push_back(detail::be16(p + pos + i));
    return !suites.empty();
}

struct TlsExtractor {
    std::vector<TlsClientHelloObservation> observations;
    std::uint64_t malformed = 0;

    void consume(const AttributedPacket& pkt) {
        const auto& rec = pkt.record;
        if (rec.transport != Transport::Tcp) return;
        auto [payload, len] = transport_payload(rec);
        if (!payload || len < 5) return;
        if (payload[0] != 0x16 || payload[1] != 0x03) return;
        if (len < 9 || payload[5] != 0x01) return;
        std::vector<std::uint16_t> suites;
        if (!parse_client_hello(payload, len, suites) || suites.empty()) {
            ++malformed;
            return;
        }
        observations.push_back(
            TlsClientHelloObservation{rec.timestamp, pkt.device_id, std::move(suites)});
    }
};

inline std::vector<TlsClientHelloObservation> extract_tls_ciphers(
    const std::vector<AttributedPacket>& packets) {
    TlsExtractor ex;
    for (const auto& p : packets) ex.consume(p);
    return std::move(ex.observations);
}

// Builds a minimal ClientHello record for fixtures and the traffic generator.
inline std::vector<std::uint8_t> build_client_hello(const std::vector<std::uint16_t>& suites,
                                                    std::uint8_t random_fill = 0x5a) {
    std::vector<std::uint8_t> body;
    body.push_back(0x03); body.push_back(0x03);          // client version TLS 1.2
    body.insert(body.end(), 32, random_fill);            // random
    body.push_back(0);                                   // empty session id
    std::size_t sl = suites.size() * 2;
    body.push_back(static_cast<std::uint8_t>(sl >> 8));
    body.push_back(static_cast<std::uint8_t>(sl & 0xff));
    for (std::uint16_t s : suites) {
        body.push_back(static_cast<std::uint8_t>(s >> 8));
        body.push_back(static_cast<std::uint8_t>(s & 0xff));
    }
    body.push_back(1); body.push_back(0);                // compression: null only

    std::vector<std::uint8_t> hs;
    hs.push_back(0x01);                                  // ClientHello
    hs.push_back(static_cast<std::uint8_t>(body.size() >> 16));
    hs.push_back(static_cast<std::uint8_t>((body.size() >> 8) & 0xff));
    hs.push_back(static_cast<std::uint8_t>(body.size() & 0xff));
    hs.insert(hs.end(), body.begin(), body.end());

    std::vector<std::uint8_t> rec;
    rec.push_back(0x16); rec.push_back(0x03); rec.push_back(0x03);
    rec.push_back(static_cast<std::uint8_t>(hs.size() >> 8));
    rec.push_back(static_cast<std::uint8_t>(hs.size() & 0xff));
    rec.insert(rec.end(), hs.begin(), hs.end());
    return rec;
}

} // namespace iotid

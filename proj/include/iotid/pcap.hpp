#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include "iotid/net.hpp"

namespace iotid {

inline constexpr std::uint32_t kPcapMagic = 0xa1b2c3d4;
inline constexpr std::uint32_t kPcapMagicSwapped = 0xd4c3b2a1;
inline constexpr std::uint32_t kLinktypeEthernet = 1;

struct IngestCounters {
    std::uint64_t total = 0;        // records seen in the file
    std::uint64_t emitted = 0;      // attributed to a manifest device
    std::uint64_t skipped = 0;      // unknown MAC or non-IPv4 frame
    std::uint64_t malformed = 0;    // truncated or undecodable
};

class PcapFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint32_t load_u32(const std::uint8_t* p, bool swap) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    if (swap) v = __builtin_bswap32(v);
    return v;
}

inline std::uint16_t be16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

inline std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

} // namespace detail

// Decodes Ethernet/IPv4/TCP|UDP headers into the record's address fields.
// Returns false for non-Ethernet-IPv4 frames (left undecoded).
inline bool decode_ethernet_ipv4(PacketRecord& rec) {
    const auto& b = rec.bytes;
    if (b.size() < 14) return false;
    std::copy(b.begin(), b.begin() + 6, rec.dst_mac.begin());
    std::copy(b.begin() + 6, b.begin() + 12, rec.src_mac.begin());
    std::uint16_t ethertype = detail::be16(b.data() + 12);
    if (ethertype != 0x0800) return false;
    if (b.size() < 14 + 20) return false;
    const std::uint8_t* ip = b.data() + 14;
    if ((ip[0] >> 4) != 4) return false;
    std::size_t ihl = (ip[0] & 0x0f) * 4u;
    if (ihl < 20 || b.size() < 14 + ihl) return false;
    rec.src_ip = detail::be32(ip + 12);
    rec.dst_ip = detail::be32(ip + 16);
    std::uint8_t proto = ip[9];
    const std::uint8_t* l4 = ip + ihl;
    std::size_t l4_avail = b.size() - 14 - ihl;
    if (proto == 6 && l4_avail >= 4) {
        rec.transport = Transport::Tcp;
    } else if (proto == 17 && l4_avail >= 4) {
        rec.transport = Transport::Udp;
    } else {
        rec.transport = Transport::Other;
        rec.src_port = rec.dst_port = 0;
        return true;
    }
    rec.src_port = detail::be16(l4);
    rec.dst_port = detail::be16(l4 + 2);
    return true;
}

// Payload of the transport layer, empty when absent or not TCP/UDP.
inline std::pair<const std::uint8_t*, std::size_t> transport_payload(const PacketRecord& rec) {
    const auto& b = rec.bytes;
    if (b.size() < 34) return {nullptr, 0};
    std::size_t ihl = (b[14] & 0x0f) * 4u;
    std::size_t l4_off = 14 + ihl;
    if (rec.transport == Transport::Udp) {
        if (b.size() < l4_off + 8) return {nullptr, 0};
        return {b.data() + l4_off + 8, b.size() - l4_off - 8};
    }
    if (rec.transport == Transport::Tcp) {
        if (b.size() < l4_off + 20) return {nullptr, 0};
        std::size_t doff = (b[l4_off + 12] >> 4) * 4u;
        if (doff < 20 || b.size() < l4_off + doff) return {nullptr, 0};
        return {b.data() + l4_off + doff, b.size() - l4_off - doff};
    }
    return {nullptr, 0};
}

// Reads classic pcap (linktype 1). Byte-swapped headers are handled; pcapng is not.
class PcapReader {
public:
    explicit PcapReader(std::istream& in) : in_(in) {
        std::uint8_t hdr[24];
        in_.read(reinterpret_cast<char*>(hdr), 24);
        if (in_.gcount() != 24) throw PcapFormatError("pcap global header truncated");
        std::uint32_t magic;
        std::memcpy(&magic, hdr, 4);
        if (magic == kPcapMagic) {
            swap_ = false;
        } else if (magic == kPcapMagicSwapped) {
            swap_ = true;
        } else {
            throw PcapFormatError("not a pcap file (bad magic)");
        }
        std::uint32_t linktype = detail::load_u32(hdr + 20, swap_);
        if (linktype != kLinktypeEthernet)
            throw PcapFormatError("unsupported linktype " + std::to_string(linktype));
    }

    // Returns false at clean EOF; throws nothing for a truncated record, the
    // caller sees truncated() instead.
    bool next(double& timestamp, std::uint32_t& orig_len, std::vector<std::uint8_t>& data) {
        std::uint8_t rh[16];
        in_.read(reinterpret_cast<char*>(rh), 16);
        if (in_.gcount() == 0) return false;
        if (in_.gcount() != 16) {
            truncated_ = true;
            return false;
        }
        std::uint32_t ts_sec = detail::load_u32(rh, swap_);
        std::uint32_t ts_usec = detail::load_u32(rh + 4, swap_);
        std::uint32_t incl_len = detail::load_u32(rh + 8, swap_);
        orig_len = detail::load_u32(rh + 12, swap_);
        if (incl_len > 0x40000) {
            truncated_ = true;
            return false;
        }
        data.resize(incl_len);
        in_.read(reinterpret_cast<char*>(data.data()), incl_len);
        if (static_cast<std::uint32_t>(in_.gcount()) != incl_len) {
            truncated_ = true;
            return false;
        }
        timestamp = static_cast<double>(ts_sec) + static_cast<double>(ts_usec) * 1e-6;
        return true;
    }

    bool truncated() const { return truncated_; }

private:
    std::istream& in_;
    bool swap_ = false;
    bool truncated_ = false;
};

class PcapWriter {
public:
    explicit PcapWriter(std::ostream& out) : out_(out) {
        std::uint8_t hdr[24] = {};
        std::uint32_t magic = kPcapMagic;
        std::memcpy(hdr, &magic, 4);
        hdr[4] = 2;   // version 2.4
        hdr[6] = 4;
        std::uint32_t snaplen = 65535;
        std::memcpy(hdr + 16, &snaplen, 4);
        std::uint32_t linktype = kLinktypeEthernet;
        std::memcpy(hdr + 20, &linktype, 4);
        out_.write(reinterpret_cast<const char*>(hdr), 24);
    }

    void write(double timestamp, const std::vector<std::uint8_t>& data, std::uint32_t orig_len = 0) {
        if (orig_len == 0) orig_len = static_cast<std::uint32_t>(data.size());
        std::uint32_t ts_sec = static_cast<std::uint32_t>(timestamp);
        std::uint32_t ts_usec =
            static_cast<std::uint32_t>((timestamp - static_cast<double>(ts_sec)) * 1e6 + 0.5);
        if (ts_usec >= 1000000) {
            ts_sec += 1;
            ts_usec -= 1000000;
        }
        std::uint32_t incl_len = static_cast<std::uint32_t>(data.size());
        std::uint8_t rh[16];
        std::memcpy(rh, &ts_sec, 4);
        std::memcpy(rh + 4, &ts_usec, 4);
        std::memcpy(rh + 8, &incl_len, 4);
        std::memcpy(rh + 12, &orig_len, 4);
        out_.write(reinterpret_cast<const char*>(rh), 16);
        out_.write(reinterpret_cast<const char*>(data.data()),
                   static_cast<std::streamsize>(data.size()));
    }

private:
    std::ostream& out_;
};

struct AttributedPacket {
    int device_id = 0;
    bool originated = false;  // true iff src_mac is the device's MAC
    PacketRecord record;
};

using PacketSink = std::function<void(const AttributedPacket&)>;

// Demultiplexes a capture by manifest MAC. Device-to-device frames go to the
// source device only.
inline IngestCounters parse_pcap(std::istream& in, const DeviceManifest& manifest,
                                 const PacketSink& sink) {
    if (manifest.entries().empty()) throw std::invalid_argument("empty manifest");
    PcapReader reader(in);
    IngestCounters counters;
    double ts;
    std::uint32_t orig_len;
    std::vector<std::uint8_t> data;
    while (reader.next(ts, orig_len, data)) {
        ++counters.total;
        PacketRecord rec;
        rec.timestamp = ts;
        rec.wire_len = orig_len;
        rec.bytes = data;
        if (!decode_ethernet_ipv4(rec)) {
            ++counters.skipped;
            continue;
        }
        int src_dev = manifest.lookup(rec.src_mac);
        int dst_dev = manifest.lookup(rec.dst_mac);
        if (src_dev >= 0) {
            sink(AttributedPacket{src_dev, true, std::move(rec)});
            ++counters.emitted;
        } else if (dst_dev >= 0) {
            sink(AttributedPacket{dst_dev, false, std::move(rec)});
            ++counters.emitted;
        } else {
            ++counters.skipped;
        }
    }
    if (reader.truncated()) {
        ++counters.total;
        ++counters.malformed;
    }
    return counters;
}

inline IngestCounters parse_pcap_file(const std::string& path, const DeviceManifest& manifest,
                                      const PacketSink& sink) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open pcap: " + path);
    return parse_pcap(in, manifest, sink);
}

} // namespace iotid

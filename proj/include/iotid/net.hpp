#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace iotid {

using MacAddress = std::array<std::uint8_t, 6>;

enum class Transport : std::uint8_t { Tcp, Udp, Other };

inline std::string mac_to_string(const MacAddress& mac) {
    char buf[18];
    std::snprintf(buf, sizeof(buf), "%02x:%02x:%02x:%02x:%02x:%02x",
                  mac[0], mac[1], mac[2], mac[3], mac[4], mac[5]);
    return buf;
}

inline MacAddress mac_from_string(const std::string& text) {
    MacAddress mac{};
    unsigned v[6];
    if (std::sscanf(text.c_str(), "%2x:%2x:%2x:%2x:%2x:%2x",
                    &v[0], &v[1], &v[2], &v[3], &v[4], &v[5]) != 6)
        throw std::runtime_error("bad MAC address: " + text);
    for (int i = 0; i < 6; ++i) mac[i] = static_cast<std::uint8_t>(v[i]);
    return mac;
}

// IPv4 addresses are kept as host-order u32.
inline std::string ip_to_string(std::uint32_t ip) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%u.%u.%u.%u",
                  (ip >> 24) & 0xff, (ip >> 16) & 0xff, (ip >> 8) & 0xff, ip & 0xff);
    return buf;
}

inline std::uint32_t ip_from_string(const std::string& text) {
    unsigned a, b, c, d;
    if (std::sscanf(text.c_str(), "%u.%u.%u.%u", &a, &b, &c, &d) != 4 ||
        a > 255 || b > 255 || c > 255 || d > 255)
        throw std::runtime_error("bad IPv4 address: " + text);
    return (a << 24) | (b << 16) | (c << 8) | d;
}

struct PacketRecord {
    double timestamp = 0.0;
    MacAddress src_mac{};
    MacAddress dst_mac{};
    std::uint32_t src_ip = 0;
    std::uint32_t dst_ip = 0;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    Transport transport = Transport::Other;
    std::uint32_t wire_len = 0;
    std::vector<std::uint8_t> bytes;  // as captured, from the Ethernet header

    bool operator==(const PacketRecord&) const = default;
};

struct ManifestEntry {
    MacAddress mac{};
    int device_id = 0;
    std::string name;
};

class DeviceManifest {
public:
    DeviceManifest() = default;

    explicit DeviceManifest(std::vector<ManifestEntry> entries) : entries_(std::move(entries)) {
        validate();
        for (const auto& e : entries_) by_mac_[e.mac] = e.device_id;
    }

    static DeviceManifest load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open manifest: " + path);
        nlohmann::json j;
        in >> j;
        std::vector<ManifestEntry> entries;
        for (const auto& item : j) {
            ManifestEntry e;
            e.mac = mac_from_string(item.at("mac").get<std::string>());
            e.device_id = item.at("device_id").get<int>();
            e.name = item.at("name").get<std::string>();
            entries.push_back(std::move(e));
        }
        return DeviceManifest(std::move(entries));
    }

    void save(const std::string& path) const {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& e : entries_) {
            j.push_back({{"mac", mac_to_string(e.mac)},
                         {"device_id", e.device_id},
                         {"name", e.name}});
        }
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write manifest: " + path);
        out << j.dump(2) << '\n';
    }

    const std::vector<ManifestEntry>& entries() const { return entries_; }
    std::size_t device_count() const { return entries_.size(); }

    // Returns -1 when the MAC is not listed.
    int lookup(const MacAddress& mac) const {
        auto it = by_mac_.find(mac);
        return it == by_mac_.end() ? -1 : it->second;
    }

private:
    void validate() const {
        if (entries_.empty()) throw std::runtime_error("manifest has no entries");
        std::map<MacAddress, int> macs;
        std::vector<bool> seen(entries_.size(), false);
        for (const auto& e : entries_) {
            if (!macs.emplace(e.mac, e.device_id).second)
                throw std::runtime_error("duplicate MAC in manifest: " + mac_to_string(e.mac));
            if (e.device_id < 0 || static_cast<std::size_t>(e.device_id) >= entries_.size() ||
                seen[static_cast<std::size_t>(e.device_id)])
                throw std::runtime_error("device IDs must be unique and contiguous from 0");
            seen[static_cast<std::size_t>(e.device_id)] = true;
        }
    }

    std::vector<ManifestEntry> entries_;
    std::map<MacAddress, int> by_mac_;
};

} // namespace iotid

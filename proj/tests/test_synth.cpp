#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

#include "iotid/pipeline.hpp"
#include "iotid/synth.hpp"

using namespace iotid;

namespace {

Scenario two_device_scenario() {
    Scenario sc;
    sc.weeks = 1;
    sc.seed = 99;
    DeviceProfile a;
    a.device_id = 0;
    a.mac = mac_from_string("aa:00:00:00:00:00");
    a.name = "thermostat";
    a.flows_per_hour = 0.2;
    a.endpoints = {{"api.thermo.com", ip_from_string("52.1.1.1"), 8443, Transport::Tcp}};
    a.size_mean = 120;
    a.size_std = 10;
    a.tls_cipher_suites = {0x1301, 0x1302};
    DeviceProfile b = a;
    b.device_id = 1;
    b.mac = mac_from_string("aa:00:00:00:00:01");
    b.name = "camera";
    b.endpoints = {{"up.cam.net", ip_from_string("52.2.2.2"), 9000, Transport::Udp}};
    b.size_mean = 600;
    b.tls_cipher_suites.clear();
    sc.profiles = {a, b};
    return sc;
}

} // namespace

TEST_CASE("synthesis is reproducible per seed") {
    auto sc = two_device_scenario();
    auto out1 = generate(sc);
    auto out2 = generate(sc);
    REQUIRE_FALSE(out1.pcap.empty());
    REQUIRE(out1.pcap == out2.pcap);
    REQUIRE(out1.labels == out2.labels);

    sc.seed = 100;
    auto out3 = generate(sc);
    REQUIRE(out1.pcap != out3.pcap);
}

TEST_CASE("synthetic captures survive a full ingest round-trip") {
    auto sc = two_device_scenario();
    auto out = generate(sc);

    std::string pcap(out.pcap.begin(), out.pcap.end());
    std::istringstream in(pcap, std::ios::binary);
    IngestStore store;
    store.consume_pcap(in, out.manifest);

    REQUIRE(store.counters.malformed == 0);
    REQUIRE(store.counters.skipped == 0);
    REQUIRE(store.counters.total == out.labels.size());
    REQUIRE(store.counters.emitted == out.labels.size());
    REQUIRE(store.packets.size() == out.labels.size());
    for (std::size_t i = 0; i < store.packets.size(); ++i) {
        REQUIRE(store.packets[i].device_id == out.labels[i].second);
        REQUIRE(store.packets[i].record.timestamp ==
                Catch::Approx(out.labels[i].first).margin(1e-6));
    }

    // both devices appear, with DNS/TLS observations from their flows
    bool seen0 = false, seen1 = false;
    for (const auto& p : store.packets) {
        seen0 |= p.device_id == 0;
        seen1 |= p.device_id == 1;
    }
    REQUIRE(seen0);
    REQUIRE(seen1);
    REQUIRE_FALSE(store.dns.empty());
    for (const auto& d : store.dns)
        REQUIRE((d.queried_name == "api.thermo.com" || d.queried_name == "up.cam.net"));
    REQUIRE_FALSE(store.tls.empty());
    for (const auto& t : store.tls) {
        REQUIRE(t.device_id == 0);  // only device 0 speaks TLS
        REQUIRE(t.cipher_suites == std::vector<std::uint16_t>{0x1301, 0x1302});
    }

    // all four schemas fall out of the same store
    auto features = extract_all(store);
    REQUIRE_FALSE(features.hour.empty());
    REQUIRE_FALSE(features.second.empty());
    REQUIRE_FALSE(features.grids.empty());
    REQUIRE_FALSE(features.flow.empty());
    for (const auto& h : features.hour) REQUIRE(h.window_start >= kSynthWeekOrigin);
}

TEST_CASE("packet store files round-trip") {
    auto out = generate(two_device_scenario());
    std::string pcap(out.pcap.begin(), out.pcap.end());
    std::istringstream in(pcap, std::ios::binary);
    IngestStore store;
    store.consume_pcap(in, out.manifest);

    auto path = (std::filesystem::temp_directory_path() / "iotid-store-test.bin").string();
    save_packet_store(path, store);
    auto loaded = load_packet_store(path);
    REQUIRE(loaded.packets.size() == store.packets.size());
    REQUIRE(loaded.counters.total == store.counters.total);
    REQUIRE(loaded.dns.size() == store.dns.size());
    REQUIRE(loaded.tls.size() == store.tls.size());
    for (std::size_t i = 0; i < store.packets.size(); ++i) {
        REQUIRE(loaded.packets[i].device_id == store.packets[i].device_id);
        REQUIRE(loaded.packets[i].record.timestamp == store.packets[i].record.timestamp);
        REQUIRE(loaded.packets[i].record.bytes == store.packets[i].record.bytes);
    }
}

TEST_CASE("drift mutations change the traffic after their activation week") {
    auto sc = two_device_scenario();
    sc.weeks = 2;
    DriftEvent d;
    d.at_week = 2;
    d.device_id = 1;
    d.kind = DriftEvent::Kind::ShiftSizes;
    d.factor = 2.0;
    sc.drift = {d};

    auto drifted = generate(sc);
    sc.drift.clear();
    auto steady = generate(sc);
    REQUIRE(drifted.pcap != steady.pcap);

    // week 1 of both captures is identical: drift starts at week 2
    auto week1 = [](const SynthOutput& out) {
        std::string pcap(out.pcap.begin(), out.pcap.end());
        std::istringstream in(pcap, std::ios::binary);
        PcapReader r(in);
        double ts = 0;
        std::uint32_t orig_len = 0;
        std::vector<std::uint8_t> data;
        double sum = 0;
        while (r.next(ts, orig_len, data))
            if (ts < kSynthWeekOrigin + 7 * 24 * 3600.0) sum += orig_len;
        return sum;
    };
    REQUIRE(week1(drifted) == week1(steady));
}

TEST_CASE("scenario json loads every mutation kind") {
    auto j = nlohmann::json::parse(R"({
        "weeks": 3,
        "seed": 5,
        "profiles": [
            {"device_id": 0, "mac": "aa:00:00:00:00:00", "name": "a", "flows_per_hour": 1.0,
             "endpoints": [{"domain": "x.com", "ip": "1.2.3.4", "port": 443, "protocol": "tcp"}],
             "size_mean": 100, "size_std": 10, "cipher_suites": [4865]},
            {"device_id": 1, "mac": "aa:00:00:00:00:01", "name": "b", "flows_per_hour": 0.5,
             "endpoints": [{"domain": "y.com", "ip": "1.2.3.5", "port": 123, "protocol": "udp"}],
             "size_mean": 90, "size_std": 5, "dns_before_flow": false}
        ],
        "drift": [
            {"at_week": 2, "device_id": 0, "mutation": "shift_sizes", "factor": 3.0},
            {"at_week": 2, "device_id": 0, "mutation": "change_rate", "factor": 0.5},
            {"at_week": 3, "device_id": 1, "mutation": "change_gap", "factor": 2.0},
            {"at_week": 2, "device_id": 0, "mutation": "change_ciphers", "cipher_suites": [4866]},
            {"at_week": 3, "device_id": 1, "mutation": "change_endpoints",
             "endpoints": [{"domain": "z.com", "ip": "9.9.9.9", "port": 53, "protocol": "udp"}]}
        ]
    })");
    auto sc = scenario_from_json(j);
    REQUIRE(sc.weeks == 3);
    REQUIRE(sc.seed == 5);
    REQUIRE(sc.profiles.size() == 2);
    REQUIRE(sc.profiles[0].tls_cipher_suites == std::vector<std::uint16_t>{4865});
    REQUIRE(sc.profiles[1].endpoints[0].protocol == Transport::Udp);
    REQUIRE_FALSE(sc.profiles[1].dns_before_flow);
    REQUIRE(sc.drift.size() == 5);
    REQUIRE(sc.drift[0].kind == DriftEvent::Kind::ShiftSizes);
    REQUIRE(sc.drift[0].factor == 3.0);
    REQUIRE(sc.drift[1].kind == DriftEvent::Kind::ChangeRate);
    REQUIRE(sc.drift[2].kind == DriftEvent::Kind::ChangeGap);
    REQUIRE(sc.drift[3].kind == DriftEvent::Kind::ChangeCiphers);
    REQUIRE(sc.drift[3].new_ciphers == std::vector<std::uint16_t>{4866});
    REQUIRE(sc.drift[4].kind == DriftEvent::Kind::ChangeEndpoints);
    REQUIRE(sc.drift[4].new_endpoints[0].domain == "z.com");

    j["drift"][0]["at_week"] = 4;  // beyond the generated span
    REQUIRE_THROWS_WITH(scenario_from_json(j),
                        Catch::Matchers::ContainsSubstring("at_week"));
    j["drift"][0]["at_week"] = 2;
    j["drift"][0]["mutation"] = "mystery";
    REQUIRE_THROWS_WITH(scenario_from_json(j),
                        Catch::Matchers::ContainsSubstring("unknown drift mutation"));
}

TEST_CASE("degenerate scenarios are rejected") {
    Scenario sc = two_device_scenario();
    sc.profiles.pop_back();
    REQUIRE_THROWS_AS(generate(sc), std::invalid_argument);
    sc = two_device_scenario();
    sc.weeks = 0;
    REQUIRE_THROWS_AS(generate(sc), std::invalid_argument);
}

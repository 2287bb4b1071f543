#pragma once

#include <json.hpp>

#include "virmsim/domain.hpp"

// JSON field names follow the scenario schema: machine, domains, jobs,
// perf_params, heartbeat at the top level; memory in MiB, bandwidth in Mb/s,
// dataset sizes in GB.

namespace virmsim {

using nlohmann::json;

inline void to_json(json& j, const MachineSpec& m) {
    j = json{{"pcpus", m.pcpus},
             {"total_memory", m.total_memory_mib},
             {"dom0_memory", m.dom0_memory_mib},
             {"nic_bandwidth", m.nic_bandwidth_mbps}};
}

inline void from_json(const json& j, MachineSpec& m) {
    m.pcpus = j.value("pcpus", 4);
    m.total_memory_mib = j.value("total_memory", 8192);
    m.dom0_memory_mib = j.value("dom0_memory", 2048);
    m.nic_bandwidth_mbps = j.value("nic_bandwidth", 1000.0);
}

inline void to_json(json& j, const DomainConfig& d) {
    j = json{{"domain_id", d.domain_id}, {"vcpus", d.vcpus},   {"memory", d.memory_mib},
             {"weight", d.weight},       {"cap", d.cap_percent}};
    if (d.pinned_pcpus) {
        j["pinning"] = *d.pinned_pcpus;
    } else {
        j["pinning"] = "fair_share";
    }
}

inline void from_json(const json& j, DomainConfig& d) {
    d.domain_id = j.value("domain_id", "");
    d.vcpus = j.value("vcpus", 1);
    d.memory_mib = j.value("memory", 2048);
    d.weight = j.value("weight", 256);
    d.cap_percent = j.value("cap", 0);
    d.pinned_pcpus.reset();
    if (j.contains("pinning") && j["pinning"].is_array()) {
        d.pinned_pcpus = j["pinning"].get<std::vector<int>>();
    }
}

inline void to_json(json& j, const JobSpec& s) {
    j = json{{"cpu_work", s.cpu_work_s},
             {"event_count", s.event_count},
             {"mem_base", s.mem_base_mib},
             {"mem_per_event", s.mem_per_event_mib},
             {"input_size", s.input_size_gb},
             {"output_size", s.output_size_gb}};
}

inline void from_json(const json& j, JobSpec& s) {
    s.cpu_work_s = j.value("cpu_work", 0.0);
    s.event_count = j.value("event_count", 1);
    s.mem_base_mib = j.value("mem_base", 0.0);
    s.mem_per_event_mib = j.value("mem_per_event", 0.0);
    s.input_size_gb = j.value("input_size", 0.0);
    s.output_size_gb = j.value("output_size", 0.0);
}

inline void to_json(json& j, const HeartbeatPolicy& h) {
    j = json{{"interval", h.interval_s},
             {"miss_threshold", h.miss_threshold},
             {"sweep_period", h.sweep_period_s}};
}

inline void from_json(const json& j, HeartbeatPolicy& h) {
    h.interval_s = j.value("interval", 30.0);
    h.miss_threshold = j.value("miss_threshold", 3);
    h.sweep_period_s = j.value("sweep_period", 10.0);
}

inline void to_json(json& j, const CurvePoint& p) { j = json::array({p.x, p.y}); }

inline void from_json(const json& j, CurvePoint& p) {
    p.x = j.at(0).get<double>();
    p.y = j.at(1).get<double>();
}

inline void to_json(json& j, const TransferRoute& r) {
    j = json{{"parallel", r.parallel},
             {"src", to_string(r.src)},
             {"dst", to_string(r.dst)},
             {"throughput", r.throughput_mbps}};
}

inline void from_json(const json& j, TransferRoute& r) {
    r.parallel = j.value("parallel", 0);
    auto src = endpoint_from_string(j.value("src", ""));
    auto dst = endpoint_from_string(j.value("dst", ""));
    if (!src || !dst) {
        throw Error(ErrorCode::UNKNOWN_ENDPOINT_KIND,
                    "transfer matrix endpoint must be PHYSICAL, VIRTUAL or DOM0");
    }
    r.src = *src;
    r.dst = *dst;
    r.throughput_mbps = j.value("throughput", 0.0);
}

inline void to_json(json& j, const PerfParams& p) {
    j = json{{"k_setup_shutdown", p.k_setup_shutdown_s},
             {"mem_curve", p.mem_curve},
             {"dom0_throughput_curve", p.dom0_throughput_curve},
             {"transfer_matrix", p.transfer_matrix},
             {"cpu_curve", p.cpu_curve},
             {"cpu_bound_fraction", p.cpu_bound_fraction},
             {"balloon_base_rate", p.balloon_base_rate_mib_s}};
}

inline void from_json(const json& j, PerfParams& p) {
    p.k_setup_shutdown_s = j.value("k_setup_shutdown", 180.0);
    p.mem_curve = j.value("mem_curve", std::vector<CurvePoint>{});
    p.dom0_throughput_curve = j.value("dom0_throughput_curve", std::vector<CurvePoint>{});
    p.transfer_matrix = j.value("transfer_matrix", std::vector<TransferRoute>{});
    p.cpu_curve = j.value("cpu_curve", std::vector<CurvePoint>{});
    p.cpu_bound_fraction = j.value("cpu_bound_fraction", 1.0);
    p.balloon_base_rate_mib_s = j.value("balloon_base_rate", 256.0);
}

} // namespace virmsim

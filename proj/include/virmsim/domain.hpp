#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace virmsim {

// Unit conventions used across the project: memory in MiB, bandwidth in
// Mb/s, dataset sizes in GB with 1 GB = 8192 Mb for transfer arithmetic.
constexpr double kMbPerGb = 8192.0;

enum class ErrorCode {
    OVER_COMMIT_MEMORY,
    BAD_PINNING,
    EMPTY_SCENARIO,
    BAD_JOB_COUNT,
    INVALID_FIELD,
    NON_POSITIVE_BASELINE,
    ZERO_CAPACITY,
    UNKNOWN_ENDPOINT_KIND,
    NO_BASELINE_ROW,
    FIT_DIVERGED,
    WINDOW_TOO_LARGE,
    UNKNOWN_IMAGE,
    INSUFFICIENT_CAPACITY,
    BAD_STATE,
    UNKNOWN_WORKSPACE,
    WORKDIR_UNWRITABLE,
    TRANSFER_FAILED,
    JOB_FAILED,
    HEARTBEAT_REJECTED,
    VALIDATION_FAILED,
    IO_FAILED,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::OVER_COMMIT_MEMORY: return "OVER_COMMIT_MEMORY";
        case ErrorCode::BAD_PINNING: return "BAD_PINNING";
        case ErrorCode::EMPTY_SCENARIO: return "EMPTY_SCENARIO";
        case ErrorCode::BAD_JOB_COUNT: return "BAD_JOB_COUNT";
        case ErrorCode::INVALID_FIELD: return "INVALID_FIELD";
        case ErrorCode::NON_POSITIVE_BASELINE: return "NON_POSITIVE_BASELINE";
        case ErrorCode::ZERO_CAPACITY: return "ZERO_CAPACITY";
        case ErrorCode::UNKNOWN_ENDPOINT_KIND: return "UNKNOWN_ENDPOINT_KIND";
        case ErrorCode::NO_BASELINE_ROW: return "NO_BASELINE_ROW";
        case ErrorCode::FIT_DIVERGED: return "FIT_DIVERGED";
        case ErrorCode::WINDOW_TOO_LARGE: return "WINDOW_TOO_LARGE";
        case ErrorCode::UNKNOWN_IMAGE: return "UNKNOWN_IMAGE";
        case ErrorCode::INSUFFICIENT_CAPACITY: return "INSUFFICIENT_CAPACITY";
        case ErrorCode::BAD_STATE: return "BAD_STATE";
        case ErrorCode::UNKNOWN_WORKSPACE: return "UNKNOWN_WORKSPACE";
        case ErrorCode::WORKDIR_UNWRITABLE: return "WORKDIR_UNWRITABLE";
        case ErrorCode::TRANSFER_FAILED: return "TRANSFER_FAILED";
        case ErrorCode::JOB_FAILED: return "JOB_FAILED";
        case ErrorCode::HEARTBEAT_REJECTED: return "HEARTBEAT_REJECTED";
        case ErrorCode::VALIDATION_FAILED: return "VALIDATION_FAILED";
        case ErrorCode::IO_FAILED: return "IO_FAILED";
    }
    return "UNKNOWN";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail),
          code_(code),
          detail_(std::move(detail)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

/// Physical host. Defaults mirror the benchmark testbed: dual-core SMP with
/// two sockets (4 pCPUs), 8 GiB RAM, gigabit NIC, 2 GiB reserved for Dom_0.
struct MachineSpec {
    int pcpus = 4;
    int total_memory_mib = 8192;
    int dom0_memory_mib = 2048;
    double nic_bandwidth_mbps = 1000.0;
};

/// One guest domain. cap_percent is a hard ceiling in percent of one pCPU
/// (0 = uncapped); weight follows the Xen convention with 256 as default.
/// pinned_pcpus empty/absent means fair-share placement on any pCPU.
struct DomainConfig {
    std::string domain_id;
    int vcpus = 1;
    int memory_mib = 2048;
    int weight = 256;
    int cap_percent = 0;
    std::optional<std::vector<int>> pinned_pcpus;

    bool fair_share() const { return !pinned_pcpus.has_value(); }
    bool capped() const { return cap_percent > 0; }
    /// Hard ceiling in pCPU units implied by cap and vcpu count.
    double cap_cpus() const {
        return capped() ? cap_percent / 100.0 : static_cast<double>(vcpus);
    }
};

/// Reserved identifier for the privileged domain.
inline const std::string kDom0Id = "Domain-0";

/// Workload description. mem_per_event models the observed per-event memory
/// growth; demand can legitimately exceed DomainConfig.memory, which drives
/// the balloon / out-of-memory path.
struct JobSpec {
    double cpu_work_s = 0.0; // CPU-seconds at one fully provisioned reference core
    int event_count = 1;
    double mem_base_mib = 0.0;
    double mem_per_event_mib = 0.0;
    double input_size_gb = 0.0;
    double output_size_gb = 0.0;

    double peak_demand_mib() const {
        return mem_base_mib + event_count * mem_per_event_mib;
    }
};

struct HeartbeatPolicy {
    double interval_s = 30.0;
    int miss_threshold = 3;
    double sweep_period_s = 10.0;

    double lease_s() const { return interval_s * miss_threshold; }
};

enum class EndpointKind { Physical, Virtual, Dom0 };

inline const char* to_string(EndpointKind k) {
    switch (k) {
        case EndpointKind::Physical: return "PHYSICAL";
        case EndpointKind::Virtual: return "VIRTUAL";
        case EndpointKind::Dom0: return "DOM0";
    }
    return "UNKNOWN";
}

inline std::optional<EndpointKind> endpoint_from_string(const std::string& s) {
    if (s == "PHYSICAL") return EndpointKind::Physical;
    if (s == "VIRTUAL") return EndpointKind::Virtual;
    if (s == "DOM0") return EndpointKind::Dom0;
    return std::nullopt;
}

struct CurvePoint {
    double x = 0.0;
    double y = 0.0;
};

/// Measured throughput for a (source kind, destination kind, parallel guest
/// count) combination. Kept as an ordered list: the benchmark contains
/// repeated keys and the first matching entry wins.
struct TransferRoute {
    int parallel = 0;
    EndpointKind src = EndpointKind::Physical;
    EndpointKind dst = EndpointKind::Physical;
    double throughput_mbps = 0.0;
};

/// Calibrated performance parameters.
///
/// mem_curve maps domain memory to a compute slowdown factor (>= 1,
/// non-increasing in memory). dom0_throughput_curve maps Dom_0 memory to its
/// network throughput (non-decreasing). cpu_curve maps weight*vcpus to a
/// work factor capturing how vCPU scarcity inflates the job, normalized to
/// 1.0 at one default-weight vCPU. cpu_bound_fraction is the fraction of the
/// job that actually needs CPU; the remainder is stall time that a CPU cap
/// cannot stretch.
struct PerfParams {
    double k_setup_shutdown_s = 180.0;
    std::vector<CurvePoint> mem_curve;
    std::vector<CurvePoint> dom0_throughput_curve;
    std::vector<TransferRoute> transfer_matrix;
    std::vector<CurvePoint> cpu_curve;
    double cpu_bound_fraction = 1.0;
    double balloon_base_rate_mib_s = 256.0;
};

struct Violation {
    ErrorCode code;
    std::string detail;
};

struct ValidationResult {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    bool has(ErrorCode code) const {
        return std::any_of(violations.begin(), violations.end(),
                           [&](const Violation& v) { return v.code == code; });
    }
    std::string message() const {
        std::string out;
        for (const auto& v : violations) {
            if (!out.empty()) out += "; ";
            out += to_string(v.code);
            out += ": ";
            out += v.detail;
        }
        return out;
    }
};

namespace detail {

inline void check_machine(const MachineSpec& m, ValidationResult& r) {
    if (m.pcpus < 1) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, "machine.pcpus must be >= 1"});
    }
    if (m.dom0_memory_mib <= 0) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, "machine.dom0_memory must be > 0"});
    }
    if (m.dom0_memory_mib >= m.total_memory_mib) {
        r.violations.push_back(
            {ErrorCode::INVALID_FIELD, "machine.dom0_memory must be < total_memory"});
    }
    if (m.nic_bandwidth_mbps <= 0) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, "machine.nic_bandwidth must be > 0"});
    }
}

inline void check_domain(const MachineSpec& m, const DomainConfig& d, ValidationResult& r) {
    const std::string tag = "domain '" + d.domain_id + "'";
    if (d.domain_id.empty() || d.domain_id == kDom0Id) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, tag + ": reserved or empty id"});
    }
    if (d.vcpus < 1) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, tag + ": vcpus must be >= 1"});
    }
    if (d.memory_mib <= 0) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, tag + ": memory must be > 0"});
    }
    if (d.weight < 1) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, tag + ": weight must be >= 1"});
    }
    if (d.cap_percent < 0 || d.cap_percent > 100 * std::max(d.vcpus, 1)) {
        r.violations.push_back(
            {ErrorCode::INVALID_FIELD, tag + ": cap must lie in [0, 100*vcpus]"});
    }
    if (d.pinned_pcpus) {
        if (d.pinned_pcpus->empty()) {
            r.violations.push_back({ErrorCode::BAD_PINNING, tag + ": explicit pin list is empty"});
        }
        for (int p : *d.pinned_pcpus) {
            if (p < 0 || p >= m.pcpus) {
                r.violations.push_back(
                    {ErrorCode::BAD_PINNING,
                     tag + ": pinned pCPU " + std::to_string(p) + " out of range"});
            }
        }
    }
}

inline void check_job(const JobSpec& j, std::size_t idx, ValidationResult& r) {
    const std::string tag = "job[" + std::to_string(idx) + "]";
    if (j.cpu_work_s <= 0) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, tag + ": cpu_work must be > 0"});
    }
    if (j.event_count < 1) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, tag + ": event_count must be >= 1"});
    }
    if (j.mem_base_mib < 0 || j.mem_per_event_mib < 0) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, tag + ": memory terms must be >= 0"});
    }
    if (j.input_size_gb < 0 || j.output_size_gb < 0) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, tag + ": dataset sizes must be >= 0"});
    }
}

} // namespace detail

/// Validates one domain against a machine, outside any scenario context.
inline ValidationResult validate_domain(const MachineSpec& machine, const DomainConfig& domain) {
    ValidationResult r;
    detail::check_machine(machine, r);
    detail::check_domain(machine, domain, r);
    return r;
}

/// Validates a whole scenario. Returns every violated constraint rather than
/// stopping at the first one.
inline ValidationResult validate_scenario(const MachineSpec& machine,
                                          const std::vector<DomainConfig>& domains,
                                          const std::vector<JobSpec>& jobs) {
    ValidationResult r;
    if (domains.empty() && jobs.empty()) {
        r.violations.push_back({ErrorCode::EMPTY_SCENARIO, "no domains and no jobs"});
        return r;
    }
    detail::check_machine(machine, r);

    std::set<std::string> ids;
    long long committed = 0;
    for (const auto& d : domains) {
        detail::check_domain(machine, d, r);
        if (!ids.insert(d.domain_id).second) {
            r.violations.push_back(
                {ErrorCode::INVALID_FIELD, "duplicate domain id '" + d.domain_id + "'"});
        }
        committed += d.memory_mib;
    }
    if (!domains.empty() && committed + machine.dom0_memory_mib > machine.total_memory_mib) {
        r.violations.push_back(
            {ErrorCode::OVER_COMMIT_MEMORY,
             std::to_string(committed) + " MiB of guests + " +
                 std::to_string(machine.dom0_memory_mib) + " MiB Dom_0 exceeds " +
                 std::to_string(machine.total_memory_mib) + " MiB"});
    }

    for (std::size_t i = 0; i < jobs.size(); ++i) {
        detail::check_job(jobs[i], i, r);
    }
    // One pilot per domain; a single job may be replicated across all
    // domains, otherwise jobs and domains pair up index-wise.
    if (!domains.empty() && !(jobs.size() == 1 || jobs.size() == domains.size())) {
        r.violations.push_back(
            {ErrorCode::BAD_JOB_COUNT,
             std::to_string(jobs.size()) + " jobs for " + std::to_string(domains.size()) +
                 " domains (expected 1 or one per domain)"});
    }
    return r;
}

inline ValidationResult validate_heartbeat(const HeartbeatPolicy& hb) {
    ValidationResult r;
    if (hb.interval_s <= 0) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, "heartbeat.interval must be > 0"});
    }
    if (hb.miss_threshold < 1) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, "heartbeat.miss_threshold must be >= 1"});
    }
    if (hb.sweep_period_s <= 0 || hb.sweep_period_s > hb.interval_s) {
        r.violations.push_back(
            {ErrorCode::INVALID_FIELD, "heartbeat.sweep_period must lie in (0, interval]"});
    }
    return r;
}

inline ValidationResult validate_perf_params(const PerfParams& p) {
    ValidationResult r;
    if (p.k_setup_shutdown_s < 0) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, "k_setup_shutdown must be >= 0"});
    }
    auto sorted_x = [](const std::vector<CurvePoint>& c) {
        for (std::size_t i = 1; i < c.size(); ++i) {
            if (c[i].x <= c[i - 1].x) return false;
        }
        return true;
    };
    if (!sorted_x(p.mem_curve) || !sorted_x(p.dom0_throughput_curve) || !sorted_x(p.cpu_curve)) {
        r.violations.push_back(
            {ErrorCode::INVALID_FIELD, "curve abscissae must be strictly increasing"});
    }
    for (std::size_t i = 0; i < p.mem_curve.size(); ++i) {
        if (p.mem_curve[i].y < 1.0) {
            r.violations.push_back({ErrorCode::INVALID_FIELD, "mem_curve factors must be >= 1"});
            break;
        }
        if (i > 0 && p.mem_curve[i].y > p.mem_curve[i - 1].y) {
            r.violations.push_back(
                {ErrorCode::INVALID_FIELD, "mem_curve must be non-increasing in memory"});
            break;
        }
    }
    for (std::size_t i = 1; i < p.dom0_throughput_curve.size(); ++i) {
        if (p.dom0_throughput_curve[i].y < p.dom0_throughput_curve[i - 1].y) {
            r.violations.push_back(
                {ErrorCode::INVALID_FIELD, "dom0_throughput_curve must be non-decreasing"});
            break;
        }
    }
    for (const auto& route : p.transfer_matrix) {
        if (route.throughput_mbps <= 0) {
            r.violations.push_back(
                {ErrorCode::INVALID_FIELD, "transfer matrix throughput must be > 0"});
            break;
        }
    }
    if (p.cpu_bound_fraction < 0.0 || p.cpu_bound_fraction > 1.0) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, "cpu_bound_fraction must lie in [0,1]"});
    }
    if (p.balloon_base_rate_mib_s <= 0) {
        r.violations.push_back({ErrorCode::INVALID_FIELD, "balloon_base_rate must be > 0"});
    }
    return r;
}

/// Relative slowdown of a measurement against a baseline, in percent.
/// Unrounded; display_overhead_percent applies the nearest-integer rule.
inline double overhead_percent(double t_measured_s, double t_baseline_s) {
    if (t_baseline_s <= 0) {
        throw Error(ErrorCode::NON_POSITIVE_BASELINE,
                    "baseline " + std::to_string(t_baseline_s) + " s");
    }
    return 100.0 * (t_measured_s - t_baseline_s) / t_baseline_s;
}

inline long display_overhead_percent(double overhead_pct) {
    return std::lround(overhead_pct);
}

} // namespace virmsim

#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "virmsim/clock.hpp"
#include "virmsim/domain.hpp"
#include "virmsim/engine.hpp"

namespace virmsim {

enum class WsState { Requested, Provisioned, Mounted, Unmounted, Running, Stopped, Removed };

inline const char* to_string(WsState s) {
    switch (s) {
        case WsState::Requested: return "REQUESTED";
        case WsState::Provisioned: return "PROVISIONED";
        case WsState::Mounted: return "MOUNTED";
        case WsState::Unmounted: return "UNMOUNTED";
        case WsState::Running: return "RUNNING";
        case WsState::Stopped: return "STOPPED";
        case WsState::Removed: return "REMOVED";
    }
    return "?";
}

/// One VIRM-managed sandbox: a provisioned volume plus at most one VM
/// lifecycle. Provisioning charges half of K before the workspace becomes
/// PROVISIONED; stopping charges the other half before removal is allowed.
struct WorkspaceRecord {
    std::string workspace_id;
    WsState state = WsState::Requested;
    DomainConfig domain;
    std::string image_id;
    double volume_size_gb = 0.0;
    Micros created_at = 0;
    Micros ready_at = 0;
    Micros last_heartbeat = -1;
    Micros shutdown_done_at = -1;
    bool swept = false;
    std::string volume_id;
    std::string domain_handle;
    JobStatus job; // snapshot; live-refreshed while RUNNING
};

/// Public view of a workspace.
struct WorkspaceInfo {
    std::string workspace_id;
    WsState state;
    DomainConfig domain;
    double last_heartbeat_s = -1.0;
    double created_at_s = 0.0;
    double ready_at_s = 0.0;
    double shutdown_done_at_s = -1.0;
    bool swept = false;
    JobStatus job;
};

struct LifecycleCall {
    std::string op;
    std::string workspace_id;
    Micros at;
};

/// The VIRM service core: workspace lifecycle over a deployment engine,
/// heartbeat leases, capacity accounting, and the clock-advance entry point
/// that interleaves lease sweeps at every sweep-period boundary. All public
/// methods serialize on one mutex; the clock is advanced only through
/// advance_clock_to, never by request handlers.
class WorkspaceService {
public:
    WorkspaceService(MachineSpec machine, HeartbeatPolicy policy, PerfParams params,
                     VirtualClock& clock, SimulatedHypervisor& engine)
        : machine_(machine),
          policy_(policy),
          params_(std::move(params)),
          clock_(clock),
          engine_(engine) {}

    const HeartbeatPolicy& policy() const { return policy_; }
    const MachineSpec& machine() const { return machine_; }
    const PerfParams& params() const { return params_; }
    VirtualClock& clock() { return clock_; }
    SimulatedHypervisor& engine() { return engine_; }

    std::string request_diskspace(const std::string& image_id, double size_gb,
                                  const DomainConfig& domain) {
        std::lock_guard lock(mu_);
        auto v = validate_domain(machine_, domain);
        if (!v.ok()) {
            throw Error(ErrorCode::VALIDATION_FAILED, v.message());
        }
        if (committed_memory_locked() + domain.memory_mib + machine_.dom0_memory_mib >
            machine_.total_memory_mib) {
            throw Error(ErrorCode::INSUFFICIENT_CAPACITY,
                        "domain memory " + std::to_string(domain.memory_mib) +
                            " MiB does not fit the remaining host memory");
        }
        for (const auto& [id, rec] : records_) {
            if (rec.state != WsState::Removed && rec.domain.domain_id == domain.domain_id) {
                throw Error(ErrorCode::VALIDATION_FAILED,
                            "domain id '" + domain.domain_id + "' already in use");
            }
        }
        WorkspaceRecord rec;
        rec.workspace_id = "ws-" + std::to_string(++seq_); // ids are never reused
        rec.domain = domain;
        rec.image_id = image_id;
        rec.volume_size_gb = size_gb;
        rec.created_at = clock_.now();
        rec.ready_at = clock_.now() + seconds_to_micros(params_.k_setup_shutdown_s / 2.0);
        rec.volume_id = engine_.provision_volume(image_id, size_gb);
        const std::string id = rec.workspace_id;
        records_.emplace(id, std::move(rec));
        record_call("request", id);
        return id;
    }

    void mount_diskspace(const std::string& id) {
        std::lock_guard lock(mu_);
        auto& rec = live(id);
        require_state(rec, {WsState::Provisioned, WsState::Unmounted}, "mount");
        engine_.attach(rec.volume_id);
        rec.state = WsState::Mounted;
        record_call("mount", id);
    }

    void unmount_diskspace(const std::string& id) {
        std::lock_guard lock(mu_);
        auto& rec = live(id);
        require_state(rec, {WsState::Mounted}, "unmount");
        engine_.detach(rec.volume_id);
        rec.state = WsState::Unmounted;
        record_call("unmount", id);
    }

    /// Contextualization write; only legal while the workspace is MOUNTED.
    void write_context(const std::string& id, const std::string& key, const std::string& value) {
        std::lock_guard lock(mu_);
        auto& rec = live(id);
        require_state(rec, {WsState::Mounted}, "context write");
        engine_.write_context(rec.volume_id, key, value);
        record_call("context", id);
    }

    std::map<std::string, std::string> read_context(const std::string& id) {
        std::lock_guard lock(mu_);
        auto& rec = live(id);
        require_state(rec, {WsState::Mounted}, "context read");
        return engine_.read_context(rec.volume_id);
    }

    void start_vm(const std::string& id) {
        std::lock_guard lock(mu_);
        auto& rec = live(id);
        require_state(rec, {WsState::Unmounted}, "start");
        rec.domain_handle = engine_.boot(rec.domain, rec.volume_id);
        rec.state = WsState::Running;
        rec.last_heartbeat = clock_.now();
        rec.job = engine_.job_status(rec.domain_handle);
        record_call("start", id);
    }

    void stop_vm(const std::string& id) {
        std::lock_guard lock(mu_);
        auto& rec = live(id);
        require_state(rec, {WsState::Running}, "stop");
        stop_locked(rec, false);
        record_call("stop", id);
    }

    void remove_diskspace(const std::string& id) {
        std::lock_guard lock(mu_);
        auto& rec = live(id);
        require_state(rec, {WsState::Stopped, WsState::Provisioned, WsState::Unmounted}, "remove");
        if (rec.state == WsState::Stopped && clock_.now() < rec.shutdown_done_at) {
            throw Error(ErrorCode::BAD_STATE,
                        "shutdown in progress until t=" +
                            std::to_string(micros_to_seconds(rec.shutdown_done_at)) + " s");
        }
        engine_.destroy_volume(rec.volume_id);
        rec.state = WsState::Removed;
        record_call("remove", id);
    }

    /// Refreshes the lease. Returns the new expiry timestamp.
    Micros heartbeat(const std::string& id) {
        std::lock_guard lock(mu_);
        auto& rec = live(id);
        require_state(rec, {WsState::Running}, "heartbeat");
        rec.last_heartbeat = clock_.now();
        record_call("heartbeat", id);
        return rec.last_heartbeat + seconds_to_micros(policy_.lease_s());
    }

    WorkspaceInfo get(const std::string& id) {
        std::lock_guard lock(mu_);
        auto& rec = live(id);
        WorkspaceInfo info;
        info.workspace_id = rec.workspace_id;
        info.state = rec.state;
        info.domain = rec.domain;
        info.created_at_s = micros_to_seconds(rec.created_at);
        info.ready_at_s = micros_to_seconds(rec.ready_at);
        info.last_heartbeat_s =
            rec.last_heartbeat < 0 ? -1.0 : micros_to_seconds(rec.last_heartbeat);
        info.shutdown_done_at_s =
            rec.shutdown_done_at < 0 ? -1.0 : micros_to_seconds(rec.shutdown_done_at);
        info.swept = rec.swept;
        if (rec.state == WsState::Running) {
            rec.job = engine_.job_status(rec.domain_handle);
        }
        info.job = rec.job;
        return info;
    }

    /// Stops every RUNNING workspace whose lease lapsed. Returns their ids.
    std::vector<std::string> lease_sweep(Micros now) {
        std::lock_guard lock(mu_);
        return lease_sweep_locked(now);
    }

    /// Advances the virtual clock to t, running a lease sweep at every
    /// sweep-period boundary crossed on the way.
    void advance_clock_to(Micros t) {
        std::lock_guard lock(mu_);
        const Micros period = seconds_to_micros(policy_.sweep_period_s);
        while (clock_.now() < t) {
            const Micros boundary = (clock_.now() / period + 1) * period;
            const Micros step = std::min(t, boundary);
            clock_.advance_to(step);
            if (step == boundary) {
                lease_sweep_locked(step);
            }
        }
    }

    void advance_clock_by_s(double s) { advance_clock_to(clock_.now() + seconds_to_micros(s)); }

    // --- introspection (tests and metrics, not part of the wire API) -------

    std::optional<WsState> raw_state(const std::string& id) const {
        std::lock_guard lock(mu_);
        auto it = records_.find(id);
        if (it == records_.end()) return std::nullopt;
        return effective_state(it->second);
    }

    const std::vector<LifecycleCall>& lifecycle_trace() const { return lifecycle_trace_; }

    long long committed_memory_mib() const {
        std::lock_guard lock(mu_);
        return committed_memory_locked();
    }

    std::vector<std::string> active_ids() const {
        std::lock_guard lock(mu_);
        std::vector<std::string> out;
        for (const auto& [id, rec] : records_) {
            if (rec.state != WsState::Removed) out.push_back(id);
        }
        return out;
    }

private:
    /// REQUESTED workspaces become PROVISIONED once the setup half of K has
    /// elapsed; the promotion is applied lazily on access.
    WsState effective_state(const WorkspaceRecord& rec) const {
        if (rec.state == WsState::Requested && clock_.now() >= rec.ready_at) {
            return WsState::Provisioned;
        }
        return rec.state;
    }

    WorkspaceRecord& live(const std::string& id) {
        auto it = records_.find(id);
        if (it == records_.end() || it->second.state == WsState::Removed) {
            throw Error(ErrorCode::UNKNOWN_WORKSPACE, "workspace '" + id + "'");
        }
        it->second.state = effective_state(it->second);
        return it->second;
    }

    void require_state(const WorkspaceRecord& rec, std::initializer_list<WsState> allowed,
                       const char* op) {
        for (WsState s : allowed) {
            if (rec.state == s) return;
        }
        throw Error(ErrorCode::BAD_STATE, std::string(op) + " not allowed in state " +
                                              to_string(rec.state) + " for " + rec.workspace_id);
    }

    void stop_locked(WorkspaceRecord& rec, bool swept) {
        rec.job = engine_.job_status(rec.domain_handle);
        engine_.shutdown(rec.domain_handle);
        rec.state = WsState::Stopped;
        rec.swept = swept;
        rec.shutdown_done_at = clock_.now() + seconds_to_micros(params_.k_setup_shutdown_s / 2.0);
    }

    std::vector<std::string> lease_sweep_locked(Micros now) {
        const Micros lease = seconds_to_micros(policy_.lease_s());
        std::vector<std::string> expired;
        for (auto& [id, rec] : records_) {
            if (rec.state == WsState::Running && now - rec.last_heartbeat > lease) {
                stop_locked(rec, true);
                record_call("sweep", id);
                expired.push_back(id);
            }
        }
        return expired;
    }

    long long committed_memory_locked() const {
        long long total = 0;
        for (const auto& [id, rec] : records_) {
            if (rec.state != WsState::Removed) total += rec.domain.memory_mib;
        }
        return total;
    }

    void record_call(const char* op, const std::string& id) {
        lifecycle_trace_.push_back({op, id, clock_.now()});
    }

    MachineSpec machine_;
    HeartbeatPolicy policy_;
    PerfParams params_;
    VirtualClock& clock_;
    SimulatedHypervisor& engine_;
    mutable std::mutex mu_;
    std::map<std::string, WorkspaceRecord> records_;
    std::vector<LifecycleCall> lifecycle_trace_;
    int seq_ = 0;
};

} // namespace virmsim

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "virmsim/clock.hpp"
#include "virmsim/credit_scheduler.hpp"
#include "virmsim/json_codec.hpp"
#include "virmsim/perf_model.hpp"

namespace virmsim {

/// Timestamped simulation trace event; detail is a rendered JSON object.
struct TraceEvent {
    Micros at = 0;
    std::string kind;
    std::string detail;
};

using TraceSink = std::function<void(const TraceEvent&)>;

/// Contract every VM deployment backend provides: volume provisioning,
/// attach/detach for contextualization, boot/shutdown, destruction.
/// boot requires a volume that went through an attach/detach cycle and is
/// currently detached; destroy requires any booted domain to be shut down.
class DeploymentEngine {
public:
    virtual ~DeploymentEngine() = default;

    virtual std::string provision_volume(const std::string& image_id, double size_gb) = 0;
    virtual void attach(const std::string& volume_id) = 0;
    virtual void detach(const std::string& volume_id) = 0;
    virtual void write_context(const std::string& volume_id, const std::string& key,
                               const std::string& value) = 0;
    virtual std::map<std::string, std::string> read_context(const std::string& volume_id) = 0;
    virtual std::string boot(const DomainConfig& domain, const std::string& volume_id) = 0;
    virtual void shutdown(const std::string& domain_handle) = 0;
    virtual void destroy_volume(const std::string& volume_id) = 0;
};

struct EngineCall {
    std::string op;
    std::string handle;
    Micros at;
};

/// Result snapshot of a contextualized job running inside a domain.
struct JobStatus {
    bool present = false;
    int events_done = 0;
    int event_count = 0;
    bool completed = false;
    bool failed = false;
    std::string fail_reason;
    Micros started_at = -1;
    Micros completed_at = -1;
};

/// Simulated hypervisor: the default deployment engine. Booted domains run
/// on the credit scheduler; a contextualized job (context key "job") executes
/// as a single worker vCPU alternating CPU bursts with stalls, growing its
/// memory per event through balloon requests that Dom_0 services at a rate
/// scaled by the domain's CPU share.
class SimulatedHypervisor : public DeploymentEngine {
public:
    SimulatedHypervisor(MachineSpec machine, PerfParams params, VirtualClock& clock,
                        std::set<std::string> images = {"slc4", "cernvm"})
        : machine_(machine),
          params_(std::move(params)),
          clock_(clock),
          images_(std::move(images)),
          sched_(machine) {
        clock_.on_advance([this](Micros, Micros to) { step(to); });
    }

    SimulatedHypervisor(const SimulatedHypervisor&) = delete;
    SimulatedHypervisor& operator=(const SimulatedHypervisor&) = delete;

    const MachineSpec& machine() const { return machine_; }
    const PerfParams& params() const { return params_; }
    sched::CreditScheduler& scheduler() { return sched_; }
    const sched::CreditScheduler& scheduler() const { return sched_; }

    void set_trace(TraceSink sink) { trace_ = std::move(sink); }
    const std::vector<EngineCall>& calls() const { return calls_; }

    bool knows_image(const std::string& image_id) const { return images_.count(image_id) != 0; }

    // --- DeploymentEngine -------------------------------------------------

    std::string provision_volume(const std::string& image_id, double size_gb) override {
        if (!knows_image(image_id)) {
            throw Error(ErrorCode::UNKNOWN_IMAGE, "image '" + image_id + "' is not cached");
        }
        if (size_gb <= 0) {
            throw Error(ErrorCode::INVALID_FIELD, "volume size must be > 0");
        }
        Volume v;
        v.id = "vol-" + std::to_string(++volume_seq_);
        v.image_id = image_id;
        v.size_gb = size_gb;
        const std::string id = v.id;
        volumes_.emplace(id, std::move(v));
        record("provision_volume", id);
        return id;
    }

    void attach(const std::string& volume_id) override {
        auto& v = volume(volume_id);
        if (v.attached) {
            throw Error(ErrorCode::BAD_STATE, "volume already attached");
        }
        v.attached = true;
        v.was_attached = true;
        record("attach", volume_id);
    }

    void detach(const std::string& volume_id) override {
        auto& v = volume(volume_id);
        if (!v.attached) {
            throw Error(ErrorCode::BAD_STATE, "volume not attached");
        }
        v.attached = false;
        record("detach", volume_id);
    }

    void write_context(const std::string& volume_id, const std::string& key,
                       const std::string& value) override {
        auto& v = volume(volume_id);
        if (!v.attached) {
            throw Error(ErrorCode::BAD_STATE, "contextualization requires an attached volume");
        }
        v.context[key] = value;
    }

    std::map<std::string, std::string> read_context(const std::string& volume_id) override {
        return volume(volume_id).context;
    }

    std::string boot(const DomainConfig& domain, const std::string& volume_id) override {
        auto& v = volume(volume_id);
        if (v.attached || !v.was_attached) {
            throw Error(ErrorCode::BAD_STATE, "boot requires a detached, contextualized volume");
        }
        if (v.booted_handle) {
            throw Error(ErrorCode::BAD_STATE, "volume already hosted a domain");
        }
        if (sched_.has_domain(domain.domain_id)) {
            throw Error(ErrorCode::INVALID_FIELD,
                        "domain id '" + domain.domain_id + "' already active");
        }
        Domain d;
        d.handle = "dom-" + std::to_string(++domain_seq_);
        d.cfg = domain;
        d.volume_id = volume_id;
        sched_.add_domain(domain);
        if (auto it = v.context.find("job"); it != v.context.end()) {
            d.job = make_job_runtime(domain, it->second);
        }
        v.booted_handle = d.handle;
        const std::string handle = d.handle;
        domains_.emplace(handle, std::move(d));
        record("boot", handle);
        if (auto& dom = domains_.at(handle); dom.job) {
            start_job(dom);
        }
        return handle;
    }

    void shutdown(const std::string& domain_handle) override {
        auto it = domains_.find(domain_handle);
        if (it == domains_.end()) {
            throw Error(ErrorCode::BAD_STATE, "unknown domain handle");
        }
        auto& d = it->second;
        if (d.shut_down) {
            throw Error(ErrorCode::BAD_STATE, "domain already shut down");
        }
        if (d.job && !d.job->done()) {
            d.job->failed = true;
            d.job->fail_reason = "aborted by shutdown";
            d.job->completed_at = clock_.now();
        }
        sched_.remove_domain(d.cfg.domain_id);
        d.shut_down = true;
        refresh_dom0_pending();
        record("shutdown", domain_handle);
    }

    void destroy_volume(const std::string& volume_id) override {
        auto& v = volume(volume_id);
        if (v.attached) {
            throw Error(ErrorCode::BAD_STATE, "cannot destroy an attached volume");
        }
        if (v.booted_handle && !domains_.at(*v.booted_handle).shut_down) {
            throw Error(ErrorCode::BAD_STATE, "destroy requires shutdown");
        }
        record("destroy_volume", volume_id);
        volumes_.erase(volume_id);
    }

    // --- job introspection --------------------------------------------------

    JobStatus job_status(const std::string& domain_handle) const {
        auto it = domains_.find(domain_handle);
        if (it == domains_.end()) {
            throw Error(ErrorCode::BAD_STATE, "unknown domain handle");
        }
        const auto& d = it->second;
        JobStatus st;
        if (!d.job) return st;
        const auto& j = *d.job;
        st.present = true;
        st.events_done = j.events_done;
        st.event_count = j.spec.event_count;
        st.completed = j.completed();
        st.failed = j.failed;
        st.fail_reason = j.fail_reason;
        st.started_at = j.started_at;
        st.completed_at = j.completed_at;
        return st;
    }

    double domain_cpu_time_s(const std::string& domain_id) const {
        return sched_.cpu_time_s(domain_id);
    }

private:
    enum class JobPhase { BalloonWait, CpuBurst, Stall, Finished };

    struct JobRuntime {
        JobSpec spec;
        DomainConfig dom;
        double burst_cpu_ms_per_event = 0.0;
        Micros stall_us_per_event = 0;
        int current_event = 1;
        int events_done = 0;
        JobPhase phase = JobPhase::CpuBurst;
        double cpu_needed_ms = 0.0;
        std::int64_t last_cpu_ms_seen = 0;
        Micros stall_until = -1;
        Micros grant_at = -1;
        Micros balloon_requested_at = -1;
        double alloc_mib = 0.0;
        bool failed = false;
        std::string fail_reason;
        Micros started_at = -1;
        Micros completed_at = -1;

        bool completed() const { return phase == JobPhase::Finished && !failed; }
        bool done() const { return phase == JobPhase::Finished; }
    };

    struct Volume {
        std::string id;
        std::string image_id;
        double size_gb = 0.0;
        bool attached = false;
        bool was_attached = false;
        std::map<std::string, std::string> context;
        std::optional<std::string> booted_handle;
    };

    struct Domain {
        std::string handle;
        DomainConfig cfg;
        std::string volume_id;
        std::optional<JobRuntime> job;
        bool shut_down = false;
    };

    Volume& volume(const std::string& id) {
        auto it = volumes_.find(id);
        if (it == volumes_.end()) {
            throw Error(ErrorCode::BAD_STATE, "unknown volume '" + id + "'");
        }
        return it->second;
    }

    void record(const char* op, const std::string& handle) {
        calls_.push_back({op, handle, clock_.now()});
    }

    void emit(const char* kind, const json& detail) {
        if (trace_) {
            trace_(TraceEvent{clock_.now(), kind, detail.dump()});
        }
    }

    JobRuntime make_job_runtime(const DomainConfig& dom, const std::string& payload) const {
        JobSpec spec;
        try {
            from_json(json::parse(payload), spec);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::INVALID_FIELD, std::string("bad job payload: ") + e.what());
        }
        JobRuntime j;
        j.spec = spec;
        j.dom = dom;
        const double s = perf::mem_slowdown(params_, dom.memory_mib);
        const double f =
            perf::cpu_work_factor(params_, static_cast<double>(dom.weight) * dom.vcpus);
        const double total = s * f * perf::reference_duration_s(machine_, spec);
        const double chi = params_.cpu_bound_fraction;
        j.burst_cpu_ms_per_event = total * chi * 1000.0 / spec.event_count;
        j.stall_us_per_event = seconds_to_micros(total * (1.0 - chi) / spec.event_count);
        j.alloc_mib = std::min<double>(spec.mem_base_mib, dom.memory_mib);
        return j;
    }

    void start_job(Domain& d) {
        auto& j = *d.job;
        j.started_at = clock_.now();
        j.last_cpu_ms_seen = 0;
        begin_event(j);
    }

    /// Enters event state: checks the event's memory demand, queues a
    /// balloon request when the allocation is short, or fails the job when
    /// the demand cannot fit the domain at all.
    void begin_event(JobRuntime& j) {
        const double demand = j.spec.mem_base_mib + j.current_event * j.spec.mem_per_event_mib;
        if (demand > j.dom.memory_mib) {
            fail_job(j, "OOM: demand " + std::to_string(demand) + " MiB exceeds " +
                            std::to_string(j.dom.memory_mib) + " MiB");
            return;
        }
        if (demand > j.alloc_mib) {
            const double pending = demand - j.alloc_mib;
            const double rate = perf::balloon_drain_rate(params_, j.dom, pending);
            j.balloon_requested_at = clock_eng_now();
            j.grant_at = j.balloon_requested_at + seconds_to_micros(pending / rate);
            j.phase = JobPhase::BalloonWait;
            sched_.set_vcpu_runnable(j.dom.domain_id, 0, false);
            refresh_dom0_pending();
            emit("balloon", json{{"domain", j.dom.domain_id},
                                 {"mib", pending},
                                 {"requested_at_s", micros_to_seconds(j.balloon_requested_at)},
                                 {"granted_at_s", micros_to_seconds(j.grant_at)},
                                 {"wait_s", micros_to_seconds(j.grant_at - j.balloon_requested_at)}});
            return;
        }
        enter_burst(j);
    }

    void enter_burst(JobRuntime& j) {
        j.phase = JobPhase::CpuBurst;
        j.cpu_needed_ms += j.burst_cpu_ms_per_event; // surplus from the last slice carries over
        sched_.set_vcpu_runnable(j.dom.domain_id, 0, true);
    }

    void fail_job(JobRuntime& j, std::string reason) {
        j.failed = true;
        j.fail_reason = std::move(reason);
        j.phase = JobPhase::Finished;
        j.completed_at = clock_eng_now();
        if (sched_.has_domain(j.dom.domain_id)) {
            sched_.set_domain_runnable(j.dom.domain_id, false);
        }
        refresh_dom0_pending();
        emit("job_failed", json{{"domain", j.dom.domain_id}, {"reason", j.fail_reason}});
    }

    void finish_job(JobRuntime& j) {
        j.phase = JobPhase::Finished;
        j.completed_at = clock_eng_now();
        if (sched_.has_domain(j.dom.domain_id)) {
            sched_.set_domain_runnable(j.dom.domain_id, false);
        }
        emit("job_done", json{{"domain", j.dom.domain_id},
                              {"t_compute_s", micros_to_seconds(j.completed_at - j.started_at)},
                              {"events", j.events_done}});
    }

    Micros clock_eng_now() const { return now_; }

    void refresh_dom0_pending() {
        bool pending = false;
        for (const auto& [handle, d] : domains_) {
            if (!d.shut_down && d.job && d.job->phase == JobPhase::BalloonWait) {
                pending = true;
                break;
            }
        }
        sched_.set_dom0_pending(pending);
    }

    /// Advances internal simulation to `to`, interleaving scheduler slices
    /// with job phase transitions. Runs in slice quanta only while some job
    /// burns CPU; otherwise jumps straight to the next wake-up event.
    void step(Micros to) {
        while (now_ < to) {
            Micros next = to;
            bool any_burst = false;
            for (auto& [handle, d] : domains_) {
                if (d.shut_down || !d.job) continue;
                auto& j = *d.job;
                switch (j.phase) {
                    case JobPhase::BalloonWait:
                        next = std::min(next, j.grant_at);
                        break;
                    case JobPhase::Stall:
                        next = std::min(next, j.stall_until);
                        break;
                    case JobPhase::CpuBurst:
                        any_burst = true;
                        break;
                    case JobPhase::Finished:
                        break;
                }
            }
            if (any_burst) {
                const Micros slice_us = sched_.clock().slice_ms * kMicrosPerMilli;
                const Micros boundary = (now_ / slice_us + 1) * slice_us;
                next = std::min(next, boundary);
            }
            if (next <= now_) {
                next = now_ + 1; // degenerate wake in the past; nudge forward
            }
            now_ = std::min(next, to);
            sched_.run_until_ms(now_ / kMicrosPerMilli);
            process_transitions();
        }
    }

    void process_transitions() {
        for (auto& [handle, d] : domains_) {
            if (d.shut_down || !d.job) continue;
            auto& j = *d.job;
            bool progressed = true;
            while (progressed && j.phase != JobPhase::Finished) {
                progressed = false;
                switch (j.phase) {
                    case JobPhase::BalloonWait:
                        if (now_ >= j.grant_at) {
                            j.alloc_mib =
                                j.spec.mem_base_mib + j.current_event * j.spec.mem_per_event_mib;
                            j.grant_at = -1;
                            refresh_dom0_pending();
                            enter_burst(j);
                            progressed = true;
                        }
                        break;
                    case JobPhase::CpuBurst: {
                        const std::int64_t cum = sched_.cpu_time_ms(j.dom.domain_id);
                        const std::int64_t delta = cum - j.last_cpu_ms_seen;
                        if (delta > 0) {
                            j.last_cpu_ms_seen = cum;
                            j.cpu_needed_ms -= static_cast<double>(delta);
                        }
                        if (j.cpu_needed_ms <= 1e-9) {
                            sched_.set_vcpu_runnable(j.dom.domain_id, 0, false);
                            if (j.stall_us_per_event > 0) {
                                j.phase = JobPhase::Stall;
                                j.stall_until = now_ + j.stall_us_per_event;
                            } else {
                                complete_event(j);
                            }
                            progressed = true;
                        }
                        break;
                    }
                    case JobPhase::Stall:
                        if (now_ >= j.stall_until) {
                            j.stall_until = -1;
                            complete_event(j);
                            progressed = true;
                        }
                        break;
                    case JobPhase::Finished:
                        break;
                }
            }
        }
    }

    void complete_event(JobRuntime& j) {
        j.events_done = j.current_event;
        ++j.current_event;
        if (j.events_done >= j.spec.event_count) {
            finish_job(j);
        } else {
            begin_event(j);
        }
    }

    MachineSpec machine_;
    PerfParams params_;
    VirtualClock& clock_;
    std::set<std::string> images_;
    sched::CreditScheduler sched_;
    std::map<std::string, Volume> volumes_;
    std::map<std::string, Domain> domains_;
    std::vector<EngineCall> calls_;
    TraceSink trace_;
    Micros now_ = 0;
    int volume_seq_ = 0;
    int domain_seq_ = 0;
};

} // namespace virmsim

#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "virmsim/domain.hpp"

namespace virmsim::sched {

enum class Priority { Under, Over, Parked };

inline const char* to_string(Priority p) {
    switch (p) {
        case Priority::Under: return "UNDER";
        case Priority::Over: return "OVER";
        case Priority::Parked: return "PARKED";
    }
    return "?";
}

/// One virtual CPU as seen by the scheduler. priority is derived from the
/// credit balance: UNDER while credits > 0, OVER once they are spent, and
/// PARKED when the owning domain is capped and has exhausted its allowance
/// for the current accounting period.
struct VcpuState {
    std::string owner;
    int index = 0;
    double credits_ms = 0.0;
    bool runnable = false;
    bool capped = false;
    std::optional<std::vector<int>> pinned;
    std::int64_t cpu_time_ms = 0;
    std::uint64_t last_run_slice = 0; // 0 = never ran; round-robin key

    Priority priority() const {
        if (credits_ms > 0.0) return Priority::Under;
        return capped ? Priority::Parked : Priority::Over;
    }

    bool eligible_on(int pcpu) const {
        if (!pinned) return true;
        return std::find(pinned->begin(), pinned->end(), pcpu) != pinned->end();
    }
};

struct SchedulerClock {
    std::int64_t now_ms = 0;
    int slice_ms = 10;
    int accounting_ms = 30; // must be an integer multiple of slice_ms
};

/// Row emitted per executed slice when tracing is enabled.
struct SliceTraceRow {
    std::int64_t time_ms;
    int pcpu;
    std::string domain_id;
    int vcpu;
    Priority priority;
};

/// Deterministic model of the Xen credit scheduler: weights and optional
/// caps, 10 ms slices, credit accounting every 30 ms, fair-share or pinned
/// placement. Dom_0 is registered implicitly with one vCPU per pCPU and
/// becomes runnable only while it has pending proxy/balloon work.
class CreditScheduler {
public:
    explicit CreditScheduler(MachineSpec machine, std::vector<DomainConfig> domains = {})
        : machine_(std::move(machine)) {
        DomainConfig dom0;
        dom0.domain_id = kDom0Id;
        dom0.vcpus = machine_.pcpus;
        dom0.weight = 256;
        dom0.cap_percent = 0;
        register_domain(dom0);
        for (const auto& d : domains) {
            register_domain(d);
        }
    }

    const MachineSpec& machine() const { return machine_; }
    std::int64_t now_ms() const { return clock_.now_ms; }
    const SchedulerClock& clock() const { return clock_; }

    void add_domain(const DomainConfig& d) {
        if (d.domain_id == kDom0Id || domains_.count(d.domain_id)) {
            throw Error(ErrorCode::INVALID_FIELD, "domain id '" + d.domain_id + "' already registered");
        }
        register_domain(d);
    }

    void remove_domain(const std::string& id) {
        if (id == kDom0Id) {
            throw Error(ErrorCode::INVALID_FIELD, "cannot remove Domain-0");
        }
        domains_.erase(id);
        std::erase_if(vcpus_, [&](const VcpuState& v) { return v.owner == id; });
    }

    bool has_domain(const std::string& id) const { return domains_.count(id) != 0; }

    void set_domain_runnable(const std::string& id, bool runnable) {
        for (auto& v : vcpus_) {
            if (v.owner == id) v.runnable = runnable;
        }
    }

    void set_vcpu_runnable(const std::string& id, int index, bool runnable) {
        for (auto& v : vcpus_) {
            if (v.owner == id && v.index == index) {
                v.runnable = runnable;
                return;
            }
        }
        throw Error(ErrorCode::INVALID_FIELD, "no vcpu " + std::to_string(index) + " in '" + id + "'");
    }

    /// Dom_0 wakes while the hypervisor has queued work for it.
    void set_dom0_pending(bool pending) { set_domain_runnable(kDom0Id, pending); }

    /// Advances through slice and accounting boundaries up to exactly t_ms.
    /// Slices execute atomically; a partial tail shorter than one slice
    /// stays idle until a later call crosses the boundary.
    void run_until_ms(std::int64_t t_ms) {
        if (t_ms < clock_.now_ms) {
            throw Error(ErrorCode::INVALID_FIELD, "scheduler cannot run backward");
        }
        for (;;) {
            if (next_acct_ms_ <= next_slice_ms_ && next_acct_ms_ <= t_ms) {
                account_credits();
                next_acct_ms_ += clock_.accounting_ms;
                continue;
            }
            if (next_slice_ms_ + clock_.slice_ms <= t_ms) {
                run_slice();
                next_slice_ms_ += clock_.slice_ms;
                continue;
            }
            break;
        }
        clock_.now_ms = t_ms;
    }

    void run_until_s(double t_s) { run_until_ms(static_cast<std::int64_t>(std::llround(t_s * 1000.0))); }

    std::int64_t cpu_time_ms(const std::string& id) const {
        std::int64_t ms = 0;
        for (const auto& v : vcpus_) {
            if (v.owner == id) ms += v.cpu_time_ms;
        }
        return ms;
    }

    double cpu_time_s(const std::string& id) const { return cpu_time_ms(id) / 1000.0; }

    /// Per-domain pCPU share over the trailing window, in [0, pcpus].
    std::map<std::string, double> cpu_share_report(double window_s) const {
        const auto window_ms = static_cast<std::int64_t>(std::llround(window_s * 1000.0));
        if (window_ms <= 0 || window_ms > clock_.now_ms) {
            throw Error(ErrorCode::WINDOW_TOO_LARGE,
                        "window " + std::to_string(window_s) + " s exceeds elapsed time");
        }
        const std::int64_t start = clock_.now_ms - window_ms;
        const History* base = nullptr;
        for (const auto& h : history_) { // history is recorded at accounting boundaries
            if (h.at_ms <= start) base = &h;
            else break;
        }
        if (!base) {
            throw Error(ErrorCode::WINDOW_TOO_LARGE, "window precedes retained share history");
        }
        std::map<std::string, double> shares;
        for (const auto& [id, dom] : domains_) {
            std::int64_t cum = 0;
            for (const auto& v : vcpus_) {
                if (v.owner == id) cum += v.cpu_time_ms;
            }
            auto it = base->cpu_ms.find(id);
            const std::int64_t before = it == base->cpu_ms.end() ? 0 : it->second;
            shares[id] = static_cast<double>(cum - before) / static_cast<double>(window_ms);
        }
        return shares;
    }

    const std::vector<VcpuState>& vcpus() const { return vcpus_; }

    std::vector<const VcpuState*> domain_vcpus(const std::string& id) const {
        std::vector<const VcpuState*> out;
        for (const auto& v : vcpus_) {
            if (v.owner == id) out.push_back(&v);
        }
        return out;
    }

    /// Credit granted to the domain at the most recent accounting boundary.
    double last_grant_ms(const std::string& id) const {
        auto it = domains_.find(id);
        return it == domains_.end() ? 0.0 : it->second.last_grant_ms;
    }

    /// pCPU assignment chosen in the most recent slice (-1 = idle), indexed
    /// by pCPU; entries are indices into vcpus().
    const std::vector<int>& last_assignment() const { return last_assignment_; }

    void set_slice_trace(std::function<void(const SliceTraceRow&)> sink) {
        trace_ = std::move(sink);
    }

    /// How long the windowed share history is retained (seconds).
    void set_history_span_s(double span_s) { history_span_ms_ = static_cast<std::int64_t>(span_s * 1000.0); }

    /// Long-run pCPU share each domain converges to when every listed domain
    /// is CPU-bound: progressive filling proportional to weight, bounded per
    /// domain by min(vcpus, cap). Pinning is ignored here.
    static std::vector<double> expected_shares(const MachineSpec& machine,
                                               const std::vector<DomainConfig>& domains) {
        const std::size_t n = domains.size();
        std::vector<double> share(n, 0.0);
        std::vector<bool> fixed(n, false);
        double remaining = machine.pcpus;
        for (;;) {
            double sum_w = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!fixed[i]) sum_w += domains[i].weight;
            }
            if (sum_w <= 0.0) break;
            bool clamped = false;
            for (std::size_t i = 0; i < n; ++i) {
                if (fixed[i]) continue;
                const double fair = remaining * domains[i].weight / sum_w;
                const double limit = std::min<double>(domains[i].vcpus, domains[i].cap_cpus());
                if (limit <= fair) {
                    share[i] = limit;
                    fixed[i] = true;
                    remaining -= limit;
                    clamped = true;
                }
            }
            if (!clamped) {
                for (std::size_t i = 0; i < n; ++i) {
                    if (!fixed[i]) {
                        share[i] = remaining * domains[i].weight / sum_w;
                    }
                }
                break;
            }
        }
        return share;
    }

    /// expected_shares specialized to n_vm identical contending domains.
    static double expected_share_identical(const MachineSpec& machine, const DomainConfig& dom,
                                           int n_vm) {
        if (n_vm < 1) n_vm = 1;
        const double fair = static_cast<double>(machine.pcpus) / n_vm;
        return std::min({static_cast<double>(dom.vcpus), dom.cap_cpus(), fair});
    }

private:
    struct DomainEntry {
        DomainConfig cfg;
        double last_grant_ms = 0.0;
    };

    struct History {
        std::int64_t at_ms;
        std::map<std::string, std::int64_t> cpu_ms;
    };

    void register_domain(const DomainConfig& d) {
        domains_.emplace(d.domain_id, DomainEntry{d, 0.0});
        for (int i = 0; i < d.vcpus; ++i) {
            VcpuState v;
            v.owner = d.domain_id;
            v.index = i;
            v.capped = d.capped();
            v.pinned = d.pinned_pcpus;
            vcpus_.push_back(std::move(v));
        }
        std::sort(vcpus_.begin(), vcpus_.end(), [](const VcpuState& a, const VcpuState& b) {
            return std::tie(a.owner, a.index) < std::tie(b.owner, b.index);
        });
    }

    /// Splits one accounting period's pCPU capacity among runnable domains
    /// proportionally to weight, clamps capped domains to cap percent of one
    /// pCPU-period, and clamps each vCPU balance to one period's worth.
    void account_credits() {
        double sum_w = 0.0;
        std::map<std::string, std::vector<VcpuState*>> runnable;
        for (auto& v : vcpus_) {
            if (v.runnable) runnable[v.owner].push_back(&v);
        }
        for (const auto& [id, vs] : runnable) {
            sum_w += domains_.at(id).cfg.weight;
        }
        for (auto& [id, dom] : domains_) {
            dom.last_grant_ms = 0.0;
        }
        if (sum_w <= 0.0) {
            record_history();
            return;
        }
        const double capacity_ms = static_cast<double>(machine_.pcpus) * clock_.accounting_ms;
        const double clamp_ms = static_cast<double>(clock_.accounting_ms);
        for (auto& [id, vs] : runnable) {
            auto& dom = domains_.at(id);
            double grant = capacity_ms * dom.cfg.weight / sum_w;
            if (dom.cfg.capped()) {
                grant = std::min(grant, dom.cfg.cap_percent / 100.0 * clock_.accounting_ms);
            }
            dom.last_grant_ms = grant;
            const double per_vcpu = grant / static_cast<double>(vs.size());
            for (VcpuState* v : vs) {
                v->credits_ms = std::min(v->credits_ms + per_vcpu, clamp_ms);
            }
        }
        record_history();
    }

    void record_history() {
        History h;
        h.at_ms = next_acct_ms_;
        for (const auto& [id, dom] : domains_) {
            std::int64_t cum = 0;
            for (const auto& v : vcpus_) {
                if (v.owner == id) cum += v.cpu_time_ms;
            }
            h.cpu_ms.emplace(id, cum);
        }
        history_.push_back(std::move(h));
        while (history_.size() > 1 && history_.front().at_ms + history_span_ms_ < next_acct_ms_) {
            history_.pop_front();
        }
    }

    /// Assigns at most one vCPU per pCPU for one slice. UNDER beats OVER;
    /// within a class the least recently run vCPU goes first, ties broken by
    /// ascending (domain_id, vcpu index). PARKED vCPUs never run.
    void run_slice() {
        ++slice_counter_;
        last_assignment_.assign(machine_.pcpus, -1);
        std::vector<bool> taken(vcpus_.size(), false);
        for (int p = 0; p < machine_.pcpus; ++p) {
            int best = -1;
            for (std::size_t i = 0; i < vcpus_.size(); ++i) {
                const auto& v = vcpus_[i];
                if (taken[i] || !v.runnable || v.priority() == Priority::Parked ||
                    !v.eligible_on(p)) {
                    continue;
                }
                if (best < 0 || better_candidate(v, vcpus_[best])) {
                    best = static_cast<int>(i);
                }
            }
            if (best >= 0) {
                taken[best] = true;
                last_assignment_[p] = best;
            }
        }
        const double floor_ms = -static_cast<double>(clock_.accounting_ms);
        for (int p = 0; p < machine_.pcpus; ++p) {
            const int idx = last_assignment_[p];
            if (idx < 0) continue;
            auto& v = vcpus_[idx];
            if (trace_) {
                trace_(SliceTraceRow{next_slice_ms_, p, v.owner, v.index, v.priority()});
            }
            v.credits_ms = std::max(v.credits_ms - clock_.slice_ms, floor_ms);
            v.cpu_time_ms += clock_.slice_ms;
            v.last_run_slice = slice_counter_;
        }
    }

    static bool better_candidate(const VcpuState& a, const VcpuState& b) {
        const int pa = a.priority() == Priority::Under ? 0 : 1;
        const int pb = b.priority() == Priority::Under ? 0 : 1;
        if (pa != pb) return pa < pb;
        if (a.last_run_slice != b.last_run_slice) return a.last_run_slice < b.last_run_slice;
        return std::tie(a.owner, a.index) < std::tie(b.owner, b.index);
    }

    MachineSpec machine_;
    SchedulerClock clock_;
    std::map<std::string, DomainEntry> domains_;
    std::vector<VcpuState> vcpus_;
    std::vector<int> last_assignment_;
    std::uint64_t slice_counter_ = 0;
    std::int64_t next_slice_ms_ = 0;
    std::int64_t next_acct_ms_ = 0;
    std::int64_t history_span_ms_ = 120'000;
    std::deque<History> history_;
    std::function<void(const SliceTraceRow&)> trace_;
};

} // namespace virmsim::sched

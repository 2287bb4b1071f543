#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace virmsim {

/// Virtual time is kept in integer microseconds so that repeated runs are
/// bit-identical regardless of how callers slice their waits.
using Micros = std::int64_t;

constexpr Micros kMicrosPerSecond = 1'000'000;
constexpr Micros kMicrosPerMilli = 1'000;

inline Micros seconds_to_micros(double s) {
    return static_cast<Micros>(std::llround(s * 1e6));
}

inline double micros_to_seconds(Micros us) {
    return static_cast<double>(us) / 1e6;
}

/// Simulation-wide virtual clock. Exactly one owner advances it; observers
/// (the simulated hypervisor, lease sweeps) run synchronously inside
/// advance_to() and must never advance the clock themselves.
class VirtualClock {
public:
    using Observer = std::function<void(Micros from, Micros to)>;

    Micros now() const { return now_; }
    double now_s() const { return micros_to_seconds(now_); }

    void on_advance(Observer obs) { observers_.push_back(std::move(obs)); }

    void advance_to(Micros t) {
        if (t < now_) {
            throw std::logic_error("virtual clock cannot run backward");
        }
        if (t == now_) {
            return;
        }
        const Micros from = now_;
        now_ = t;
        for (auto& obs : observers_) {
            obs(from, t);
        }
    }

    void advance_by_seconds(double s) { advance_to(now_ + seconds_to_micros(s)); }

private:
    Micros now_ = 0;
    std::vector<Observer> observers_;
};

} // namespace virmsim

#include <catch_amalgamated.hpp>

#include <random>

#include "virmsim/domain.hpp"

using namespace virmsim;

namespace {

DomainConfig guest(const std::string& id, int vcpus, int memory_mib, int cap = 0,
                   int weight = 256) {
    DomainConfig d;
    d.domain_id = id;
    d.vcpus = vcpus;
    d.memory_mib = memory_mib;
    d.cap_percent = cap;
    d.weight = weight;
    return d;
}

JobSpec benchmark_job() {
    JobSpec j;
    j.cpu_work_s = 28320.0;
    j.event_count = 200;
    j.mem_base_mib = 512.0;
    j.mem_per_event_mib = 7.0;
    j.input_size_gb = 3.0;
    j.output_size_gb = 1.0;
    return j;
}

} // namespace

TEST_CASE("three 2 GiB guests plus a 2 GiB Dom_0 fit the default host") {
    MachineSpec m;
    std::vector<DomainConfig> domains = {guest("d1", 1, 2048), guest("d2", 1, 2048),
                                         guest("d3", 1, 2048)};
    auto r = validate_scenario(m, domains, {benchmark_job()});
    CAPTURE(r.message());
    CHECK(r.ok());
}

TEST_CASE("empty scenario is rejected") {
    auto r = validate_scenario(MachineSpec{}, {}, {});
    REQUIRE_FALSE(r.ok());
    CHECK(r.has(ErrorCode::EMPTY_SCENARIO));
}

TEST_CASE("memory over-commit is rejected") {
    MachineSpec m;
    m.dom0_memory_mib = 1024;
    std::vector<DomainConfig> domains;
    for (int i = 0; i < 4; ++i) {
        domains.push_back(guest("d" + std::to_string(i), 1, 2048));
    }
    auto r = validate_scenario(m, domains, {benchmark_job()});
    REQUIRE_FALSE(r.ok());
    CHECK(r.has(ErrorCode::OVER_COMMIT_MEMORY));
}

TEST_CASE("pinning outside the machine is rejected") {
    MachineSpec m; // 4 pCPUs
    auto d = guest("d1", 1, 2048);
    d.pinned_pcpus = std::vector<int>{4};
    auto r = validate_scenario(m, {d}, {benchmark_job()});
    CHECK(r.has(ErrorCode::BAD_PINNING));

    d.pinned_pcpus = std::vector<int>{};
    r = validate_scenario(m, {d}, {benchmark_job()});
    CHECK(r.has(ErrorCode::BAD_PINNING));
}

TEST_CASE("every published benchmark configuration validates on the default host") {
    MachineSpec m;
    auto job = benchmark_job();

    // Conf_1: physical baseline, no guests.
    CHECK(validate_scenario(m, {}, {job}).ok());
    // Conf_2: one 4-vCPU guest.
    CHECK(validate_scenario(m, {guest("d1", 4, 2048)}, {job}).ok());
    // Conf_5: two 2-vCPU guests.
    CHECK(validate_scenario(m, {guest("d1", 2, 2048), guest("d2", 2, 2048)}, {job}).ok());
    // Conf_9: three 1-vCPU guests.
    CHECK(validate_scenario(m, {guest("d1", 1, 2048), guest("d2", 1, 2048), guest("d3", 1, 2048)},
                            {job})
              .ok());
    // Conf_10.1: three 1-vCPU guests capped at half a pCPU.
    CHECK(validate_scenario(
              m, {guest("d1", 1, 2048, 50), guest("d2", 1, 2048, 50), guest("d3", 1, 2048, 50)},
              {job})
              .ok());
}

TEST_CASE("job/domain pairing requires one job or one per domain") {
    MachineSpec m;
    std::vector<DomainConfig> domains = {guest("d1", 1, 1024), guest("d2", 1, 1024),
                                         guest("d3", 1, 1024)};
    auto job = benchmark_job();
    CHECK(validate_scenario(m, domains, {job}).ok());
    CHECK(validate_scenario(m, domains, {job, job, job}).ok());
    auto r = validate_scenario(m, domains, {job, job});
    CHECK(r.has(ErrorCode::BAD_JOB_COUNT));
}

TEST_CASE("field invariants are all reported") {
    MachineSpec m;
    auto d = guest("d1", 0, 0, -5, 0);
    auto j = benchmark_job();
    j.cpu_work_s = 0;
    j.event_count = 0;
    auto r = validate_scenario(m, {d}, {j});
    REQUIRE_FALSE(r.ok());
    CHECK(r.violations.size() >= 5);
}

TEST_CASE("reserved Dom_0 id is rejected for guests") {
    auto r = validate_scenario(MachineSpec{}, {guest(kDom0Id, 1, 1024)}, {benchmark_job()});
    CHECK_FALSE(r.ok());
}

TEST_CASE("heartbeat policy validation") {
    CHECK(validate_heartbeat(HeartbeatPolicy{}).ok());
    HeartbeatPolicy hb;
    hb.sweep_period_s = 40.0; // larger than the interval
    CHECK_FALSE(validate_heartbeat(hb).ok());
    hb = HeartbeatPolicy{};
    hb.interval_s = 0;
    CHECK_FALSE(validate_heartbeat(hb).ok());
}

TEST_CASE("overhead percent matches the published rows") {
    const double conf2 = overhead_percent(7130, 7080);
    CHECK(conf2 == Catch::Approx(0.70621469).epsilon(1e-6));
    CHECK(display_overhead_percent(conf2) == 1);

    CHECK(overhead_percent(7080, 7080) == 0.0);

    const double conf101 = overhead_percent(12926, 7080);
    CHECK(conf101 == Catch::Approx(82.5706215).epsilon(1e-6));
    CHECK(display_overhead_percent(conf101) == 83);
}

TEST_CASE("overhead percent rejects a non-positive baseline") {
    CHECK_THROWS_AS(overhead_percent(100, 0), Error);
    CHECK_THROWS_AS(overhead_percent(100, -5), Error);
}

TEST_CASE("overhead percent is antisymmetric around the baseline") {
    std::mt19937 rng(42);
    std::uniform_real_distribution<double> base(1.0, 20000.0);
    std::uniform_real_distribution<double> delta(0.0, 5000.0);
    for (int i = 0; i < 200; ++i) {
        const double b = base(rng);
        const double d = delta(rng);
        const double up = overhead_percent(b + d, b);
        const double down = overhead_percent(b - d, b);
        CHECK(up == Catch::Approx(-down).margin(1e-9));
    }
    CHECK(overhead_percent(1234.5, 1234.5) == 0.0);
}

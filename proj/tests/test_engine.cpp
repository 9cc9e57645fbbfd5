// ============================================================================
// test_engine.cpp — toppling rules, schedules, invariants, checkpoints
// ============================================================================
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sandpile/engine.hpp"

using namespace sandpile;

namespace {

// Largest |u_a − u_b| over the union of both boxes.
double sup_u_diff(const SandpileState& a, const SandpileState& b) {
    const LatticeField& big = a.u.radius() >= b.u.radius() ? a.u : b.u;
    double worst = 0.0;
    for (std::size_t i = 0; i < big.size(); ++i) {
        const Site x = big.site_of(i);
        worst = std::max(worst, std::fabs(a.u.at(x) - b.u.at(x)));
    }
    return worst;
}

double max_u(const SandpileState& s) {
    double m = 0.0;
    for (const double v : s.u.raw()) m = std::max(m, v);
    return m;
}

// Verifies the structural invariants that must hold for any valid state.
void check_state_invariants(const SandpileState& s) {
    // Mass conservation.
    CHECK(std::fabs(field_sum(s.mu) - s.n) <= 1e-9 * s.n);
    // Odometer identity Δ¹u = μ − μ₀ at every site of the box.
    const double tol = 1e-9 * std::max(s.m, 1.0);
    for (std::size_t i = 0; i < s.u.size(); ++i) {
        const Site x = s.u.site_of(i);
        const double lhs = discrete_laplacian(s.u, x);
        const double rhs = s.mu.at(x) - s.mu0.at(x);
        REQUIRE(std::fabs(lhs - rhs) <= tol);
    }
    // u ≥ 0 and u > 0 only inside the visited set.
    for (std::size_t i = 0; i < s.u.size(); ++i) {
        REQUIRE(s.u.raw()[i] >= 0.0);
        if (s.u.raw()[i] > 0.0) REQUIRE(s.visited.raw()[i] == 1);
    }
}

void check_stabilized(const SandpileState& s, double eps_stop) {
    for (std::size_t i = 0; i < s.mu.size(); ++i) {
        const Site x = s.mu.site_of(i);
        REQUIRE(excess(s, x) <= eps_stop);
        REQUIRE(s.mu.raw()[i] <= s.m + eps_stop);
        if (s.u.raw()[i] > s.kappa) REQUIRE(s.mu.raw()[i] <= 2 * s.d * eps_stop);
    }
}

}  // namespace

TEST_CASE("new_state: cutoff formula, visited support, validation") {
    const SandpileState s6 = new_state(2, {{{0, 0}, 1e6}}, 10.0);
    CHECK(s6.n == 1e6);
    CHECK(s6.kappa == doctest::Approx(1e5).epsilon(1e-15));

    const SandpileState s3 = new_state(3, {{{0, 0, 0}, 8.0}}, 2.0);
    CHECK(s3.kappa == doctest::Approx(2.0).epsilon(1e-14));

    // Two-source configuration; total mass adds up.
    const SandpileState s2 =
        new_state(2, {{{-47, 0}, 50000.0}, {{47, 0}, 50000.0}}, 10.0);
    CHECK(s2.n == 1e5);
    CHECK(s2.mu0.at(Site{-47, 0}) == 50000.0);
    CHECK(s2.visited.at(Site{47, 0}) == 1);
    CHECK(s2.visited.at(Site{0, 0}) == 0);
    CHECK(s2.u.at(Site{47, 0}) == 0.0);

    // Duplicate sources accumulate.
    const SandpileState dup = new_state(2, {{{1, 1}, 3.0}, {{1, 1}, 4.0}}, 1.0);
    CHECK(dup.mu0.at(Site{1, 1}) == 7.0);
    CHECK(dup.n == 7.0);

    CHECK_THROWS_AS(new_state(2, {}, 10.0), ConfigError);
    CHECK_THROWS_AS(new_state(2, {{{0, 0}, -1.0}}, 10.0), ConfigError);
    CHECK_THROWS_AS(new_state(2, {{{0, 0}, 1.0}}, 0.0), ConfigError);
    CHECK_THROWS_AS(new_state(1, {{{0}, 1.0}}, 1.0), ConfigError);
    CHECK_THROWS_AS(new_state(3, {{{0, 0}, 1.0}}, 1.0), ConfigError);
}

TEST_CASE("excess: the two instability rules and their strictness") {
    SandpileState s = new_state(2, {{{0, 0}, 100.0}}, 10.0);  // kappa = 10
    const Site x{2, 0};

    s.mu.ref(x) = 15.0;
    s.u.ref(x) = 0.0;
    CHECK(excess(s, x) == 15.0 - 10.0);  // rule (a)

    s.mu.ref(x) = 7.0;
    s.u.ref(x) = s.kappa + 1.0;
    CHECK(excess(s, x) == 7.0);  // rule (b)

    s.u.ref(x) = s.kappa;  // strict inequality: u must exceed kappa
    CHECK(excess(s, x) == 0.0);

    s.mu.ref(x) = 0.0;
    s.u.ref(x) = s.kappa + 1.0;  // rule (b) needs positive mass
    CHECK(excess(s, x) == 0.0);

    CHECK(excess(s, Site{1000000, 0}) == 0.0);  // far outside the box
}

TEST_CASE("topple: redistribution arithmetic, idleness, conservation") {
    SandpileState s = new_state(2, {{{0, 0}, 100.0}}, 10.0);
    const double e = topple(s, Site{0, 0});
    CHECK(e == 90.0);
    CHECK(s.mu.at(Site{0, 0}) == 10.0);
    for (const Site& y : neighbors(Site{0, 0}, 2)) {
        CHECK(s.mu.at(y) == 22.5);
        CHECK(s.visited.at(y) == 1);
    }
    CHECK(s.u.at(Site{0, 0}) == 90.0);
    CHECK(std::fabs(field_sum(s.mu) - 100.0) <= 1e-12 * 100.0);

    // The odometer identity holds after a manual toppling.
    CHECK(discrete_laplacian(s.u, Site{0, 0}) ==
          doctest::Approx(s.mu.at(Site{0, 0}) - 100.0).epsilon(1e-14));
    CHECK(discrete_laplacian(s.u, Site{1, 0}) == doctest::Approx(22.5).epsilon(1e-14));

    // Toppling a stable site is idle.
    SandpileState before = s;
    CHECK(topple(s, Site{5, 5}) == 0.0);
    CHECK(s.mu.raw() == before.mu.raw());
    CHECK(s.u.raw() == before.u.raw());

    CHECK_THROWS_AS(topple(s, Site{0, 0, 0}), ConfigError);
}

TEST_CASE("topple at the box edge grows the backing storage") {
    SandpileState s = new_state(2, {{{0, 0}, 16.0}}, 1.0);
    const int r0 = static_cast<int>(s.u.radius());
    const Site edge{r0, 0};
    s.mu.ref(edge) = 5.0;  // plant an unstable site at the boundary
    const double before = field_sum(s.mu);
    CHECK(topple(s, edge) == 4.0);
    CHECK(s.u.radius() > r0);
    CHECK(s.mu.at(Site{r0 + 1, 0}) == 1.0);
    CHECK(std::fabs(field_sum(s.mu) - before) <= 1e-12 * before);
}

TEST_CASE("stabilize: already-stable configurations need zero sweeps") {
    for (const ScheduleKind kind :
         {ScheduleKind::sweep, ScheduleKind::random_infinitive, ScheduleKind::priority_excess}) {
        CAPTURE(to_string(kind));
        SandpileState s = new_state(2, {{{0, 0}, 5.0}}, 10.0);  // n ≤ m
        const StabilizeOutcome out = stabilize(s, {kind, 1}, default_eps_stop(s.n));
        CHECK(out.sweeps == 0);
        CHECK(out.topplings == 0);
        CHECK(out.total_toppled_mass == 0.0);
        CHECK(max_u(s) == 0.0);
        CHECK(s.mu.at(Site{0, 0}) == 5.0);
        CHECK(std::fabs(field_sum(s.mu) - 5.0) <= 1e-12);
    }
}

TEST_CASE("stabilize: small single-source run satisfies every invariant") {
    SandpileState s = new_state(2, {{{0, 0}, 100.0}}, 10.0);
    const double eps = default_eps_stop(s.n);
    const StabilizeOutcome out = stabilize(s, {ScheduleKind::sweep, 0}, eps);

    CHECK(out.sweeps > 0);
    CHECK(out.topplings > 0);
    CHECK(out.total_toppled_mass > 0.0);
    CHECK(out.residual_excess <= eps);
    CHECK(out.elapsed_seconds >= 0.0);

    check_state_invariants(s);
    check_stabilized(s, eps);

    // The origin keeps exactly the threshold mass... only until rule (b)
    // kicks in; for n=100, kappa=10 the origin ends mass-free.
    CHECK(s.u.at(Site{0, 0}) > s.kappa);
    CHECK(s.mu.at(Site{0, 0}) <= 4 * eps);
}

TEST_CASE("stabilize: d=3 run with invariants and regions") {
    SandpileState s = new_state(3, {{{0, 0, 0}, 1000.0}}, 5.0);
    CHECK(s.kappa == doctest::Approx(20.0).epsilon(1e-14));
    const double eps = default_eps_stop(s.n);
    stabilize(s, {ScheduleKind::sweep, 0}, eps);
    check_state_invariants(s);
    check_stabilized(s, eps);

    const Regions reg = regions(s);
    CHECK(!reg.V.empty());
    CHECK(!reg.V0.empty());
    CHECK(!reg.V1.empty());
    CHECK(reg.V0.size() + reg.V1.size() == reg.V.size());
    for (const std::size_t i : reg.V0) CHECK(s.u.raw()[i] > s.kappa);
    for (const std::size_t i : reg.V1) CHECK(s.u.raw()[i] <= s.kappa);

    double v1_mass = 0.0;
    for (const std::size_t i : reg.V1) v1_mass += s.mu.raw()[i];
    CHECK(std::fabs(v1_mass - s.n) <= 1e-9 * s.n);
}

TEST_CASE("schedules agree on the final odometer (abelian property)") {
    const double m = 10.0;

    SandpileState sweep_s = new_state(2, {{{0, 0}, 1e4}}, m);
    const double eps = default_eps_stop(sweep_s.n);
    stabilize(sweep_s, {ScheduleKind::sweep, 0}, eps, {.max_topplings = 4'000'000'000});

    SandpileState random_s = new_state(2, {{{0, 0}, 1e4}}, m);
    stabilize(random_s, {ScheduleKind::random_infinitive, 12345}, eps,
              {.max_topplings = 4'000'000'000});

    const double scale = std::max(max_u(sweep_s), max_u(random_s));
    CHECK(sup_u_diff(sweep_s, random_s) <= 1e-6 * scale);

    // Priority schedule at a smaller n (it topples one site at a time).
    SandpileState a = new_state(2, {{{0, 0}, 1000.0}}, m);
    SandpileState b = new_state(2, {{{0, 0}, 1000.0}}, m);
    stabilize(a, {ScheduleKind::sweep, 0}, default_eps_stop(1000.0));
    const StabilizeOutcome out_b =
        stabilize(b, {ScheduleKind::priority_excess, 0}, default_eps_stop(1000.0));
    CHECK(out_b.sweeps == 0);  // no pass structure to count
    CHECK(out_b.topplings > 0);
    CHECK(sup_u_diff(a, b) <= 1e-6 * std::max(max_u(a), max_u(b)));
    check_state_invariants(b);
}

TEST_CASE("regions and the boundary-count bound at n = 10^4") {
    SandpileState s = new_state(2, {{{0, 0}, 1e4}}, 10.0);
    stabilize(s, {ScheduleKind::sweep, 0}, default_eps_stop(s.n),
              {.max_topplings = 4'000'000'000});

    const Regions reg = regions(s);
    CHECK(!reg.V0.empty());
    double v1_mass = 0.0;
    for (const std::size_t i : reg.V1) v1_mass += s.mu.raw()[i];
    CHECK(std::fabs(v1_mass - s.n) <= 1e-9 * s.n);

    const auto [count, bound] = boundary_count_bound(s);
    CHECK(bound == doctest::Approx(16.0 * 1e4 / 10.0));
    CHECK(count > 0);
    CHECK(static_cast<double>(count) <= bound);
}

TEST_CASE("odometer grows monotonically as the stop threshold tightens") {
    SandpileState s = new_state(2, {{{0, 0}, 2000.0}}, 10.0);
    stabilize(s, {ScheduleKind::sweep, 0}, 1e-3);
    const LatticeField coarse = s.u;

    stabilize(s, {ScheduleKind::sweep, 0}, 1e-10);  // resume from the same state
    for (std::size_t i = 0; i < coarse.size(); ++i) {
        const Site x = coarse.site_of(i);
        CHECK(s.u.at(x) >= coarse.at(x));  // toppling only ever adds to u
    }
    check_state_invariants(s);
    check_stabilized(s, 1e-10);
}

TEST_CASE("box growth mid-run: low threshold pushes mass past the initial box") {
    SandpileState s = new_state(2, {{{0, 0}, 2000.0}}, 0.5);
    const long r0 = s.u.radius();
    stabilize(s, {ScheduleKind::sweep, 0}, default_eps_stop(s.n),
              {.max_topplings = 4'000'000'000});
    CHECK(s.u.radius() > r0);  // the run outgrew its initial allocation
    check_state_invariants(s);
    check_stabilized(s, default_eps_stop(s.n));

    long reach = 0;
    for (std::size_t i = 0; i < s.u.size(); ++i) {
        if (s.u.raw()[i] > 0.0) {
            for (const int c : s.u.site_of(i)) reach = std::max(reach, std::abs(long(c)));
        }
    }
    CHECK(reach > r0);  // support genuinely extends past the old boundary
}

TEST_CASE("toppling cap: throws mid-run, state stays valid, resume completes") {
    SandpileState s = new_state(2, {{{0, 0}, 1e4}}, 10.0);
    const double eps = default_eps_stop(s.n);
    bool threw = false;
    try {
        stabilize(s, {ScheduleKind::sweep, 0}, eps, {.max_topplings = 1000});
    } catch (const NonConvergenceError& e) {
        threw = true;
        CHECK(e.topplings >= 1000);
        CHECK(e.residual_excess > 0.0);
        CHECK(std::string(e.what()).find("cap exceeded") != std::string::npos);
    }
    REQUIRE(threw);
    check_state_invariants(s);  // partially stabilized but structurally sound

    // Resuming with a real budget reaches the same fixed point as a fresh
    // run (abelian property holds across interruptions).
    stabilize(s, {ScheduleKind::sweep, 0}, eps, {.max_topplings = 4'000'000'000});
    SandpileState fresh = new_state(2, {{{0, 0}, 1e4}}, 10.0);
    stabilize(fresh, {ScheduleKind::sweep, 0}, eps, {.max_topplings = 4'000'000'000});
    CHECK(sup_u_diff(s, fresh) <= 1e-6 * std::max(max_u(s), max_u(fresh)));
}

TEST_CASE("parallel sweep workers produce the identical odometer") {
    SandpileState seq = new_state(2, {{{0, 0}, 1e4}}, 10.0);
    stabilize(seq, {ScheduleKind::sweep, 0}, default_eps_stop(1e4),
              {.max_topplings = 4'000'000'000, .threads = 1});
    SandpileState par = new_state(2, {{{0, 0}, 1e4}}, 10.0);
    const StabilizeOutcome out_par = stabilize(par, {ScheduleKind::sweep, 0},
                                               default_eps_stop(1e4),
                                               {.max_topplings = 4'000'000'000, .threads = 4});
    CHECK(seq.u.raw() == par.u.raw());  // bit-identical, not merely close
    CHECK(out_par.sweeps > 0);
}

TEST_CASE("stabilize input validation") {
    SandpileState s = new_state(2, {{{0, 0}, 100.0}}, 10.0);
    CHECK_THROWS_AS(stabilize(s, {ScheduleKind::sweep, 0}, 0.0), ConfigError);
    CHECK_THROWS_AS(stabilize(s, {ScheduleKind::sweep, 0}, -1.0), ConfigError);
    CHECK_THROWS_AS(stabilize(s, {ScheduleKind::sweep, 0}, 1e-10, {.max_topplings = 0}),
                    ConfigError);
    CHECK_THROWS_AS(stabilize(s, {ScheduleKind::sweep, 0}, 1e-10, {.threads = 0}), ConfigError);
}

TEST_CASE("schedule names round-trip and aliases parse") {
    for (const ScheduleKind k :
         {ScheduleKind::sweep, ScheduleKind::random_infinitive, ScheduleKind::priority_excess})
        CHECK(schedule_from_string(to_string(k)) == k);
    CHECK(schedule_from_string("random") == ScheduleKind::random_infinitive);
    CHECK(schedule_from_string("priority") == ScheduleKind::priority_excess);
    CHECK_THROWS_AS(schedule_from_string("gauss-seidel"), ConfigError);
}

TEST_CASE("checkpoint: CSV + sidecar round-trips the stabilized state") {
    SandpileState s = new_state(2, {{{0, 0}, 400.0}}, 10.0);
    const double eps = default_eps_stop(s.n);
    const Schedule sched{ScheduleKind::sweep, 0};
    const StabilizeOutcome out = stabilize(s, sched, eps);

    const std::string csv = "engine_ckpt_test.csv";
    const std::string json = "engine_ckpt_test.json";
    write_checkpoint(s, out, sched, eps, csv, json);

    // Sidecar carries exactly the expected keys, in order.
    {
        std::ifstream f(json);
        std::stringstream ss;
        ss << f.rdbuf();
        const std::string text = ss.str();
        std::size_t pos = 0;
        for (const std::string key : {"\"d\"", "\"n\"", "\"m\"", "\"kappa\"", "\"eps_stop\"",
                                      "\"schedule\"", "\"sweeps\"", "\"residual_excess\""}) {
            const std::size_t at = text.find(key, pos);
            REQUIRE(at != std::string::npos);
            pos = at;
        }
        CHECK(text.find("\"sweep\"") != std::string::npos);
    }

    const SandpileState back = read_checkpoint(csv, json);
    std::remove(csv.c_str());
    std::remove(json.c_str());

    CHECK(back.d == s.d);
    CHECK(back.n == s.n);
    CHECK(back.m == s.m);
    CHECK(back.kappa == s.kappa);

    // Field values at visited sites survive the 17-digit round trip exactly.
    for (std::size_t i = 0; i < s.visited.size(); ++i) {
        if (s.visited.raw()[i] == 0) continue;
        const Site x = s.visited.site_of(i);
        REQUIRE(back.u.at(x) == s.u.at(x));
        REQUIRE(back.mu.at(x) == s.mu.at(x));
        REQUIRE(back.visited.at(x) == 1);
    }
    // μ₀ reconstruction finds the single source and nothing else.
    CHECK(back.mu0.at(Site{0, 0}) == doctest::Approx(400.0).epsilon(1e-9));
    double total_mu0 = 0.0;
    for (const double v : back.mu0.raw()) total_mu0 += v;
    CHECK(total_mu0 == doctest::Approx(400.0).epsilon(1e-9));

    CHECK_THROWS_AS(read_checkpoint("missing.csv", json), IoError);
    CHECK_THROWS_AS(read_checkpoint(csv, "missing.json"), IoError);
}

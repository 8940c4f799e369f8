// Acceptance runner: one PASS/FAIL line per criterion; exit status is the
// number of failed criteria.

#include "saber/beacon.hpp"
#include "saber/ethembed.hpp"
#include "saber/harness/experiment.hpp"
#include "saber/membership.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace
{
    using namespace saber;
    using namespace saber::harness;
    using Clock = std::chrono::steady_clock;

    constexpr double throughput_tolerance = 0.10;
    constexpr double group_failure_target = 1e-6;
    constexpr std::size_t monte_carlo_samples = 10'000'000;
    constexpr double monte_carlo_sigmas = 3.0;
    constexpr double c1_runtime_s = 5.0;
    constexpr double c2_runtime_s = 120.0;
    constexpr std::size_t livelock_interleavings = 100;
    constexpr std::size_t byzantine_random_seeds = 1000;
    constexpr std::size_t queued_complex = 10'000;
    constexpr std::size_t embedding_sequences = 1000;

    double seconds_since(Clock::time_point t0)
    {
        return std::chrono::duration<double>(Clock::now() - t0).count();
    }

    bool within(double value, double expected, double tol = throughput_tolerance)
    {
        return std::abs(value - expected) <= tol * expected;
    }

    std::string fmt(double v, int prec = 1)
    {
        std::ostringstream o;
        o.setf(std::ios::fixed);
        o.precision(prec);
        o << v;
        return o.str();
    }

    ExperimentConfig base_config(double rps, std::size_t batch, std::size_t groups)
    {
        ExperimentConfig c;
        c.seed = 42;
        c.consensus.rounds_per_second = rps;
        c.consensus.tx_per_block = batch;
        c.group_count = groups;
        c.group_size = 5;
        c.exec_cost_ms = 10;
        c.workload.kind = WorkloadKind::all_complex;
        return c;
    }

    // Saturating workload: enough transactions to keep the bottleneck busy for
    // at least `min_rounds` consensus rounds and `min_seconds` of virtual time.
    std::size_t saturating_total(const ExperimentConfig &c, double min_seconds, double min_rounds)
    {
        const double exec_tps = static_cast<double>(c.group_count) * 1000.0 / c.exec_cost_ms;
        const double cons_tps = c.consensus.rounds_per_second * static_cast<double>(c.consensus.tx_per_block);
        const double duration = std::max(min_seconds, min_rounds / c.consensus.rounds_per_second);
        return static_cast<std::size_t>(std::min(exec_tps, cons_tps) * duration);
    }

    struct Verdict
    {
        bool pass = false;
        std::string detail;
    };

    // Monte Carlo estimate of P(at least `threshold` of n nodes are adversarial).
    std::pair<double, double> monte_carlo(std::size_t n, double alpha, std::size_t threshold, std::uint64_t seed)
    {
        std::mt19937_64 gen(seed);
        std::binomial_distribution<std::size_t> dist(n, alpha);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < monte_carlo_samples; ++i)
        {
            hits += dist(gen) >= threshold ? 1 : 0;
        }
        const double p = static_cast<double>(hits) / static_cast<double>(monte_carlo_samples);
        const double se = std::sqrt(std::max(p * (1 - p), 1.0 / static_cast<double>(monte_carlo_samples)) /
                                    static_cast<double>(monte_carlo_samples));
        return {p, se};
    }

    Verdict c1_group_size()
    {
        const auto t0 = Clock::now();
        struct Case
        {
            std::size_t n;
            membership::ThresholdFamily family;
            const char *name;
        };
        const Case cases[] = {{600, membership::ThresholdFamily::one_third, "n=600 third"},
                              {70, membership::ThresholdFamily::majority, "n=70 majority"}};
        bool below = true;
        bool agree = true;
        std::ostringstream d;
        std::uint64_t seed = 7;
        for (const auto &c : cases)
        {
            const double exact = membership::group_failure_prob(c.n, 0.25, c.family);
            const auto [mc, se] = monte_carlo(c.n, 0.25, membership::failure_threshold(c.n, c.family), seed++);
            below = below && exact < group_failure_target;
            agree = agree && std::abs(mc - exact) <= monte_carlo_sigmas * se;
            d << c.name << ": exact " << exact << " mc " << mc << " (se " << se << "); ";
        }
        const double elapsed = seconds_since(t0);
        d << "below 1e-6: " << (below ? "yes" : "no") << ", mc agrees: " << (agree ? "yes" : "no") << ", "
          << fmt(elapsed, 2) << " s";
        return {below && agree && elapsed < c1_runtime_s, d.str()};
    }

    Verdict c2_linear()
    {
        const auto t0 = Clock::now();
        bool ok = true;
        std::ostringstream d;
        for (std::size_t m : {1, 2, 4, 8, 16, 64, 81})
        {
            auto c = base_config(10, 2000, m);
            c.workload.total = saturating_total(c, 20, 20);
            auto r = run_experiment(c);
            const double expected = 100.0 * static_cast<double>(m);
            ok = ok && within(r.throughput_tps, expected);
            d << "m=" << m << ":" << fmt(r.throughput_tps) << "/" << fmt(expected, 0) << " ";
        }
        const double elapsed = seconds_since(t0);
        d << "in " << fmt(elapsed) << " s";
        return {ok && elapsed < c2_runtime_s, d.str()};
    }

    Verdict c3_saturation()
    {
        bool ok = true;
        std::ostringstream d;
        for (std::size_t m : {32, 64})
        {
            auto c = base_config(1, 2000, m);
            c.workload.total = saturating_total(c, 40, 20);
            auto r = run_experiment(c);
            ok = ok && within(r.throughput_tps, 2000);
            d << "1rps m=" << m << ":" << fmt(r.throughput_tps) << " ";
        }
        for (std::size_t m : {4, 8, 16})
        {
            auto c = base_config(0.1, 2000, m);
            c.workload.total = saturating_total(c, 40, 20);
            auto r = run_experiment(c);
            ok = ok && within(r.throughput_tps, 200);
            d << "0.1rps m=" << m << ":" << fmt(r.throughput_tps) << " ";
        }
        return {ok, d.str()};
    }

    Verdict c4_batch()
    {
        bool ok = true;
        std::ostringstream d;
        for (std::size_t batch = 1000; batch <= 9000; batch += 1000)
        {
            auto c = base_config(0.1, batch, 44);
            c.workload.total = saturating_total(c, 40, 20);
            auto r = run_experiment(c);
            const double expected = 0.1 * static_cast<double>(batch);
            ok = ok && within(r.throughput_tps, expected);
            d << "0.1rps b=" << batch << ":" << fmt(r.throughput_tps) << " ";
        }
        for (std::size_t batch = 5000; batch <= 9000; batch += 1000)
        {
            auto c = base_config(1, batch, 44);
            c.workload.total = saturating_total(c, 40, 20);
            auto r = run_experiment(c);
            ok = ok && within(r.throughput_tps, 4400);
            d << "1rps b=" << batch << ":" << fmt(r.throughput_tps) << " ";
        }
        return {ok, d.str()};
    }

    Verdict c5_mixed()
    {
        bool ok = true;
        std::ostringstream d;
        const std::vector<std::size_t> ms{1, 2, 4, 8, 16, 32, 64};
        std::vector<double> times;
        for (auto m : ms)
        {
            auto c = base_config(1, 2000, m);
            c.workload.total = 50'000;
            c.workload.contract_population = 10'000;
            auto complex = run_experiment(c);
            c.workload.kind = WorkloadKind::mixed;
            auto mixed = run_experiment(c);
            ok = ok && mixed.throughput_tps > complex.throughput_tps;
            times.push_back(mixed.processing_time_s);
            d << "m=" << m << ":" << fmt(mixed.throughput_tps) << ">" << fmt(complex.throughput_tps) << " t="
              << fmt(mixed.processing_time_s) << "s ";
        }
        // Strictly decreasing while execution capacity is below the consensus
        // rate for complex transactions, non-increasing after.
        const double cap = 2000;
        for (std::size_t i = 0; i + 1 < ms.size(); ++i)
        {
            const bool below_cap = 100.0 * static_cast<double>(ms[i + 1]) <= cap;
            if (below_cap ? !(times[i + 1] < times[i]) : times[i + 1] > times[i])
            {
                ok = false;
                d << "[monotonicity broken at m=" << ms[i + 1] << "] ";
            }
        }
        return {ok, d.str()};
    }

    std::vector<Transaction> adversarial_pair(Rng &rng)
    {
        auto a = make_complex(1, 0, 1, 10);
        a.touched = {1, 2};
        auto b = make_complex(2, 1, 2, 10);
        b.touched = {2, 1};
        std::vector<Transaction> txs{a, b};
        if (rng.below(2) == 1)
        {
            std::swap(txs[0], txs[1]);
        }
        for (auto &t : txs)
        {
            t.submitted_us = static_cast<std::int64_t>(rng.below(500'000));
        }
        std::stable_sort(txs.begin(), txs.end(),
                         [](const Transaction &x, const Transaction &y) { return x.submitted_us < y.submitted_us; });
        return txs;
    }

    Verdict c6_livelock()
    {
        std::size_t baseline_both_abort = 0;
        std::size_t saber_consecutive = 0;
        for (std::size_t i = 0; i < livelock_interleavings; ++i)
        {
            Rng rng(mix64(1000 + i));
            auto txs = adversarial_pair(rng);

            auto c = base_config(1, 2000, 2);
            c.seed = 1000 + i;
            c.group_size = 3;
            c.shard_count = 2;
            c.epoch.length_rounds = 0;
            c.workload.kind = WorkloadKind::trace;
            c.mode = Mode::baseline_2pl;
            auto base = run_baseline_2pl(c, txs);
            if (base.metrics.aborts == 2 && base.metrics.confirmed == 0)
            {
                ++baseline_both_abort;
            }

            c.mode = Mode::saber;
            auto sab = run_saber(c, txs);
            const auto &oa = sab.outcomes.at(1);
            const auto &ob = sab.outcomes.at(2);
            if (sab.metrics.aborts == 0 && oa.confirm_round >= 0 && ob.confirm_round >= 0 &&
                std::abs(oa.confirm_round - ob.confirm_round) == 1)
            {
                ++saber_consecutive;
            }
        }
        std::ostringstream d;
        d << "baseline both-abort " << baseline_both_abort << "/" << livelock_interleavings
          << ", saber consecutive commits " << saber_consecutive << "/" << livelock_interleavings;
        return {baseline_both_abort == livelock_interleavings && saber_consecutive == livelock_interleavings, d.str()};
    }

    ExperimentConfig byzantine_config(std::size_t groups, std::size_t size, std::uint64_t seed, std::size_t total)
    {
        auto c = base_config(10, 50, groups);
        c.seed = seed;
        c.group_size = size;
        c.epoch.length_rounds = 0;
        c.workload.kind = WorkloadKind::mixed;
        c.workload.total = total;
        c.workload.contract_population = 8;
        c.workload.accounts = 20;
        c.fault_budget = 1.0;
        return c;
    }

    struct ByzantineTally
    {
        std::size_t rejected_results = 0;
        std::size_t failovers = 0;
        std::size_t confirmed = 0;
    };

    bool safe_run(const ExperimentConfig &c, ByzantineTally &tally, std::string &why)
    {
        auto r = run_saber(c, workload_for(c));
        tally.rejected_results += r.metrics.rejected_results;
        tally.failovers += r.metrics.failovers;
        tally.confirmed += r.metrics.confirmed;
        for (const auto &[key, digest] : r.accepted_digests)
        {
            auto h = r.honest_digests.find(key);
            if (h == r.honest_digests.end() || h->second != digest)
            {
                why = "accepted digest differs from honest execution at group " + std::to_string(key.first) +
                      " sn " + std::to_string(key.second);
                return false;
            }
        }
        if (r.metrics.divergent_objects != 0)
        {
            why = std::to_string(r.metrics.divergent_objects) + " divergent objects";
            return false;
        }
        if (r.metrics.confirmed + r.metrics.rejected + r.metrics.in_flight != r.metrics.submitted)
        {
            why = "transaction accounting does not balance";
            return false;
        }
        return true;
    }

    Verdict c7_byzantine()
    {
        std::size_t runs = 0;
        std::string why;
        ByzantineTally tally;
        // Size 3: every placement of one byzantine node in each of three groups.
        const std::size_t groups = 3;
        for (std::size_t code = 0; code < 27; ++code)
        {
            auto c = byzantine_config(groups, 3, 500 + code, 120);
            std::size_t x = code;
            for (std::uint32_t g = 0; g < groups; ++g, x /= 3)
            {
                c.faults.push_back({g, static_cast<std::uint32_t>(x % 3), simnet::FaultMode::byzantine, 0});
            }
            ++runs;
            if (!safe_run(c, tally, why))
            {
                return {false, "size 3 placement " + std::to_string(code) + ": " + why};
            }
        }
        // Size 5: f' in {1, 2} byzantine nodes per group at random ranks.
        for (std::size_t s = 0; s < byzantine_random_seeds; ++s)
        {
            auto c = byzantine_config(2, 5, 10'000 + s, 60);
            const std::size_t fprime = 1 + s % 2;
            Rng rng(mix64(s * 31 + 7));
            for (std::uint32_t g = 0; g < 2; ++g)
            {
                std::vector<std::uint32_t> ranks{0, 1, 2, 3, 4};
                for (std::size_t i = 0; i < fprime; ++i)
                {
                    std::swap(ranks[i], ranks[i + rng.below(ranks.size() - i)]);
                    c.faults.push_back({g, ranks[i], simnet::FaultMode::byzantine, 0});
                }
            }
            ++runs;
            if (!safe_run(c, tally, why))
            {
                return {false, "size 5 seed " + std::to_string(s) + ": " + why};
            }
        }
        return {true, std::to_string(runs) + " runs, honest digests only, no divergence; " +
                          std::to_string(tally.confirmed) + " confirmed, " + std::to_string(tally.rejected_results) +
                          " corrupt results rejected, " + std::to_string(tally.failovers) + " failovers"};
    }

    Verdict c8_starvation()
    {
        auto c = base_config(10, 2000, 4);
        c.group_size = 3;
        c.workload.kind = WorkloadKind::mixed;
        c.workload.simple_ratio = 1.0;
        c.workload.total = 2000;
        c.workload.arrival_rate_tps = 500;
        auto simple = generate_workload(c.workload, c.exec_cost_ms, c.seed);

        auto quiet = run_saber(c, simple);
        auto busy_txs = simple;
        for (std::size_t i = 0; i < queued_complex; ++i)
        {
            busy_txs.push_back(make_complex(100'000 + i, i % c.workload.accounts, 1 + i, c.exec_cost_ms));
        }
        std::stable_sort(busy_txs.begin(), busy_txs.end(), [](const Transaction &a, const Transaction &b) {
            return a.submitted_us < b.submitted_us;
        });
        auto busy = run_saber(c, busy_txs);

        const double round_ms = 1000.0 / c.consensus.rounds_per_second;
        const double dmean = std::abs(busy.metrics.simple_latency_ms - quiet.metrics.simple_latency_ms);
        const double dmax = std::abs(busy.metrics.max_simple_latency_ms - quiet.metrics.max_simple_latency_ms);
        std::ostringstream d;
        d << "mean " << fmt(quiet.metrics.simple_latency_ms) << " vs " << fmt(busy.metrics.simple_latency_ms)
          << " ms, max " << fmt(quiet.metrics.max_simple_latency_ms) << " vs "
          << fmt(busy.metrics.max_simple_latency_ms) << " ms, round " << fmt(round_ms) << " ms, queued complex confirmed by run end "
          << busy.metrics.confirmed_complex << "/" << queued_complex;
        const bool all_simple = quiet.metrics.confirmed_simple == simple.size() &&
                                busy.metrics.confirmed_simple == simple.size();
        return {all_simple && dmean <= round_ms && dmax <= round_ms, d.str()};
    }

    Verdict c9_beacon()
    {
        auto scheme = crypto::make_scheme("ed25519");
        std::vector<crypto::PublicKey> nodes;
        for (std::uint64_t i = 0; i < 4; ++i)
        {
            nodes.push_back(crypto::key_gen(*scheme, 900 + i).public_key);
        }
        bool ok = true;
        std::size_t sets = 0;
        for (std::uint64_t seed : {1, 2, 3})
        {
            const auto reference = beacon::run_beacon(nodes, 1, {}, seed).output;
            for (std::size_t w = 0; w < 4; ++w)
            {
                auto t = beacon::run_beacon(nodes, 1, {w}, seed);
                ok = ok && t.output == reference && beacon::verify_transcript(t);
                ++sets;
            }
        }
        return {ok, std::to_string(sets) + " withholding sets across 3 seeds"};
    }

    std::string slurp(const std::filesystem::path &p)
    {
        std::ifstream in(p, std::ios::binary);
        return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    }

    Verdict c10_determinism()
    {
        auto c = base_config(10, 500, 4);
        c.group_size = 5;
        c.caching = true;
        c.workload.kind = WorkloadKind::mixed;
        c.workload.total = 3000;
        c.workload.contract_population = 50;
        c.workload.arrival_rate_tps = 2000;
        c.epoch.length_rounds = 5;
        c.faults.push_back({0, 1, simnet::FaultMode::byzantine, 0});
        c.faults.push_back({2, 0, simnet::FaultMode::crash, 300});
        const auto root = std::filesystem::temp_directory_path() / ("saber_accept_" + std::to_string(::getpid()));
        std::vector<std::string> digests, csvs;
        for (int i = 0; i < 2; ++i)
        {
            auto dir = root / std::to_string(i);
            write_artifacts(dir, {c}, {run_experiment(c)});
            digests.push_back(slurp(dir / "trace_digest.txt"));
            csvs.push_back(slurp(dir / "metrics.csv"));
        }
        std::filesystem::remove_all(root);
        const bool ok = !digests[0].empty() && digests[0] == digests[1] && csvs[0] == csvs[1];
        return {ok, "trace digest " + digests[0].substr(0, 16) + "..."};
    }

    struct Embedding
    {
        ethembed::KittiesState kitties;
        ethembed::ExecutionManagerState ems{4};
        ethembed::Keyring keys;
    };

    Embedding make_embedding(crypto::SignatureScheme &scheme, std::uint64_t seed)
    {
        Embedding e;
        for (std::uint64_t i = 0; i < 24; ++i)
        {
            auto kp = crypto::key_gen(scheme, seed * 100 + i);
            e.keys[kp.public_key] = kp;
            e.ems = ethembed::em_register(std::move(e.ems), kp.public_key, 10 + i);
        }
        std::vector<crypto::PublicKey> cns;
        for (std::uint64_t i = 0; i < 4; ++i)
        {
            cns.push_back(crypto::key_gen(scheme, seed * 100 + 50 + i).public_key);
        }
        auto t = beacon::run_beacon(cns, 1, {}, seed);
        if (ethembed::em_shuffle(e.ems, t.output, t) != ethembed::ShuffleStatus::applied)
        {
            throw Error(ErrorKind::membership, "shuffle rejected");
        }
        for (const auto &g : e.ems.groups)
        {
            if (g.empty())
            {
                throw Error(ErrorKind::membership, "shuffle left an execution group empty");
            }
        }
        return e;
    }

    Verdict c11_embedding()
    {
        auto scheme = crypto::make_scheme("digest");
        std::size_t equal = 0;
        for (std::size_t s = 0; s < embedding_sequences; ++s)
        {
            auto e = make_embedding(*scheme, s % 8 + 1);
            Rng rng(mix64(0xe7b + s));
            const std::size_t kitties = 4 + rng.below(8);
            for (std::size_t k = 0; k < kitties; ++k)
            {
                ethembed::Kitty kitty;
                kitty.genes = crypto::hash("kitty/" + std::to_string(s) + "/" + std::to_string(k));
                if (k > 0 && rng.below(4) != 0)
                {
                    kitty.siring_with_id = rng.below(k);
                    kitty.due_at_block = 0;
                }
                e.kitties.kitties.push_back(kitty);
            }
            std::vector<ethembed::TimedRequest> reqs;
            const std::size_t count = 1 + rng.below(24);
            for (std::size_t i = 0; i < count; ++i)
            {
                reqs.push_back({{1000 * s + i, rng.below(kitties + 2)}, rng.below(40)});
            }
            if (ethembed::equivalence_check(e.kitties, reqs, e.ems, e.keys, *scheme))
            {
                ++equal;
            }
        }

        // Confirmation guard at diff 12 and 13.
        auto e = make_embedding(*scheme, 99);
        e.kitties.kitties = {ethembed::Kitty{crypto::hash("sire"), std::nullopt, 0},
                             ethembed::Kitty{crypto::hash("matron"), 0, 0}};
        ethembed::GiveBirthRequest req{7, 1};
        ethembed::give_birth_lock(e.kitties, e.ems, req, 100);
        auto [child, msig] = ethembed::group_sign(e.kitties, e.ems, *e.kitties.lock_of(1), e.keys, *scheme);
        const auto at12 = ethembed::give_birth_unlock(e.kitties, e.ems, 1, child, msig, 112, *scheme);
        const auto at13 = ethembed::give_birth_unlock(e.kitties, e.ems, 1, child, msig, 113, *scheme);
        const bool guard = at12 == ethembed::UnlockStatus::rejected_confirmations &&
                           at13 == ethembed::UnlockStatus::applied;
        std::ostringstream d;
        d << equal << "/" << embedding_sequences << " sequences equal; diff 12 -> " << ethembed::to_string(at12)
          << ", diff 13 -> " << ethembed::to_string(at13);
        return {equal == embedding_sequences && guard, d.str()};
    }
} // namespace

int main(int argc, char **argv)
{
    const std::vector<std::pair<const char *, std::function<Verdict()>>> criteria{
        {"group-size claims", c1_group_size},
        {"linear scaling (10 rounds/s)", c2_linear},
        {"consensus saturation", c3_saturation},
        {"batch scaling", c4_batch},
        {"mixed workload", c5_mixed},
        {"livelock freedom", c6_livelock},
        {"byzantine safety", c7_byzantine},
        {"simple-tx starvation freedom", c8_starvation},
        {"beacon unbiasability", c9_beacon},
        {"determinism", c10_determinism},
        {"embedding equivalence", c11_embedding},
    };
    std::vector<std::size_t> selected;
    for (int a = 1; a < argc; ++a)
    {
        selected.push_back(std::stoul(argv[a]) - 1);
    }
    if (selected.empty())
    {
        for (std::size_t i = 0; i < criteria.size(); ++i)
        {
            selected.push_back(i);
        }
    }
    int failed = 0;
    for (auto i : selected)
    {
        Verdict v;
        const auto t0 = Clock::now();
        try
        {
            v = criteria[i].second();
        }
        catch (const std::exception &e)
        {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += v.pass ? 0 : 1;
        std::cout << (v.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << v.detail
                  << " [" << fmt(seconds_since(t0), 1) << " s]" << std::endl;
    }
    std::cout << (selected.size() - static_cast<std::size_t>(failed)) << "/" << selected.size() << " criteria passed"
              << std::endl;
    return failed;
}

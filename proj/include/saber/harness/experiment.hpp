#pragma once

#include "saber/harness/config.hpp"
#include "saber/harness/metrics.hpp"
#include "saber/harness/simulation.hpp"
#include "saber/harness/workload.hpp"
#include "saber/membership.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace saber::harness
{
    struct BaselineOutcome
    {
        TxId id = 0;
        bool committed = false;
        std::size_t aborts = 0;
        std::size_t commit_round = 0;
    };

    struct BaselineResult
    {
        MetricsRecord metrics;
        std::vector<BaselineOutcome> outcomes;
    };

    // Sharded two-phase locking without a central lock manager. Each round
    // every active transaction attempts its next lock in declared order on the
    // owning shard; attempts within a round are processed in a seeded random
    // order. A transaction that finds its next object held aborts, and its
    // locks are released at the start of the next round, as are the locks of
    // committed transactions.
    inline BaselineResult run_baseline_2pl(const ExperimentConfig &cfg, const std::vector<Transaction> &txs)
    {
        struct Active
        {
            std::size_t index = 0;
            std::size_t step = 0;
            std::size_t start_round = 0;
            std::vector<ObjectId> held;
        };
        const std::size_t shards = std::max<std::size_t>(cfg.shard_count, 1);
        std::vector<std::map<ObjectId, std::size_t>> lock_tables(shards);
        auto shard_of = [&](ObjectId id) {
            Bytes b;
            append_u64_be(b, id);
            return membership::digest_mod(crypto::hash(b), shards);
        };
        const double round_s = 1.0 / cfg.consensus.rounds_per_second;

        BaselineResult out;
        out.outcomes.resize(txs.size());
        std::vector<Active> active;
        std::vector<std::pair<std::size_t, std::size_t>> waiting;
        for (std::size_t i = 0; i < txs.size(); ++i)
        {
            out.outcomes[i].id = txs[i].id;
            auto start = static_cast<std::size_t>(static_cast<double>(txs[i].submitted_us) / 1e6 / round_s);
            waiting.emplace_back(start, i);
        }
        std::stable_sort(waiting.begin(), waiting.end());
        std::size_t next_wait = 0;
        std::vector<std::size_t> release_next;
        std::vector<std::vector<ObjectId>> release_sets;
        Rng rng(mix64(cfg.seed ^ 0x32706cULL));
        std::size_t round = 0;
        std::size_t last_commit_round = 0;
        std::size_t committed = 0;
        double confirm_sum_ms = 0;

        while (next_wait < waiting.size() || !active.empty() || !release_sets.empty())
        {
            for (auto &set : release_sets)
            {
                for (auto id : set)
                {
                    lock_tables[shard_of(id)].erase(id);
                }
            }
            release_sets.clear();
            while (next_wait < waiting.size() && waiting[next_wait].first <= round)
            {
                active.push_back(Active{waiting[next_wait].second, 0, round, {}});
                ++next_wait;
            }
            std::vector<std::size_t> order(active.size());
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t i = order.size(); i > 1; --i)
            {
                std::swap(order[i - 1], order[rng.below(i)]);
            }
            std::vector<bool> done(active.size(), false);
            for (auto a : order)
            {
                auto &t = active[a];
                const auto &tx = txs[t.index];
                if (tx.touched.empty())
                {
                    done[a] = true;
                    continue;
                }
                const auto id = tx.touched[t.step];
                auto &table = lock_tables[shard_of(id)];
                auto holder = table.find(id);
                if (holder != table.end() && holder->second != t.index)
                {
                    ++out.outcomes[t.index].aborts;
                    ++out.metrics.aborts;
                    release_sets.push_back(t.held);
                    if (out.outcomes[t.index].aborts <= cfg.max_retries)
                    {
                        // Restart after the release round.
                        waiting.emplace_back(round + 2, t.index);
                        std::stable_sort(waiting.begin() + static_cast<std::ptrdiff_t>(next_wait), waiting.end());
                    }
                    done[a] = true;
                    continue;
                }
                table[id] = t.index;
                t.held.push_back(id);
                if (++t.step == tx.touched.size())
                {
                    out.outcomes[t.index].committed = true;
                    out.outcomes[t.index].commit_round = round;
                    ++committed;
                    last_commit_round = round;
                    confirm_sum_ms += (static_cast<double>(round + 1) * round_s * 1e3) -
                                      static_cast<double>(tx.submitted_us) / 1e3;
                    release_sets.push_back(t.held);
                    done[a] = true;
                }
            }
            std::vector<Active> still;
            for (std::size_t a = 0; a < active.size(); ++a)
            {
                if (!done[a])
                {
                    still.push_back(std::move(active[a]));
                }
            }
            active = std::move(still);
            ++round;
        }

        auto &m = out.metrics;
        m.m = cfg.group_count;
        m.group_size = cfg.group_size;
        m.consensus_tps = cfg.consensus.rounds_per_second * static_cast<double>(cfg.consensus.tx_per_block);
        m.workload = to_string(cfg.workload.kind);
        m.submitted = txs.size();
        m.confirmed = committed;
        m.confirmed_complex = committed;
        m.rounds = round;
        m.processing_time_s = committed ? static_cast<double>(last_commit_round + 1) * round_s : 0;
        m.throughput_tps = m.processing_time_s > 0 ? static_cast<double>(committed) / m.processing_time_s : 0;
        m.complex_latency_ms = committed ? confirm_sum_ms / static_cast<double>(committed) : 0;
        crypto::Sha256 h;
        h.update("baseline");
        for (const auto &o : out.outcomes)
        {
            h.update_u64(o.id).update_u64(o.committed ? 1 : 0).update_u64(o.aborts).update_u64(o.commit_round);
        }
        m.trace_digest = to_hex(h.finish());
        return out;
    }

    inline std::vector<Transaction> workload_for(const ExperimentConfig &cfg)
    {
        if (cfg.workload.kind == WorkloadKind::trace)
        {
            if (cfg.workload.trace_path.empty())
            {
                throw Error(ErrorKind::config, "trace workload needs workload.trace_path");
            }
            return ingest_trace(cfg.workload.trace_path);
        }
        return generate_workload(cfg.workload, cfg.exec_cost_ms, cfg.seed);
    }

    inline MetricsRecord run_transactions(const ExperimentConfig &cfg, std::vector<Transaction> txs)
    {
        if (cfg.mode == Mode::baseline_2pl)
        {
            return run_baseline_2pl(cfg, txs).metrics;
        }
        return run_saber(cfg, std::move(txs)).metrics;
    }

    inline MetricsRecord run_experiment(const ExperimentConfig &cfg)
    {
        auto m = run_transactions(cfg, workload_for(cfg));
        if (m.run_id.empty())
        {
            m.run_id = "seed=" + std::to_string(cfg.seed);
        }
        return m;
    }

    struct SweepParam
    {
        std::string name;
        std::vector<std::string> values;
    };

    inline SweepParam parse_sweep_param(const std::string &text)
    {
        auto eq = text.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
        {
            throw Error(ErrorKind::config, "sweep parameter must look like name=v1,v2,...: '" + text + "'");
        }
        SweepParam p{text.substr(0, eq), {}};
        std::stringstream ss(text.substr(eq + 1));
        std::string v;
        while (std::getline(ss, v, ','))
        {
            if (v.empty())
            {
                throw Error(ErrorKind::config, "empty value in sweep parameter '" + text + "'");
            }
            p.values.push_back(v);
        }
        return p;
    }

    inline void apply_param(ExperimentConfig &cfg, const std::string &name, const std::string &value)
    {
        auto as_size = [&] {
            try
            {
                std::size_t used = 0;
                auto v = std::stoull(value, &used);
                if (used != value.size())
                {
                    throw std::invalid_argument("trailing");
                }
                return static_cast<std::size_t>(v);
            }
            catch (const std::exception &)
            {
                throw Error(ErrorKind::config, "bad integer '" + value + "' for " + name);
            }
        };
        auto as_double = [&] {
            try
            {
                std::size_t used = 0;
                auto v = std::stod(value, &used);
                if (used != value.size())
                {
                    throw std::invalid_argument("trailing");
                }
                return v;
            }
            catch (const std::exception &)
            {
                throw Error(ErrorKind::config, "bad number '" + value + "' for " + name);
            }
        };
        if (name == "groups" || name == "m")
        {
            cfg.group_count = as_size();
        }
        else if (name == "group_size")
        {
            cfg.group_size = as_size();
        }
        else if (name == "batch" || name == "tx_per_block")
        {
            cfg.consensus.tx_per_block = as_size();
        }
        else if (name == "rps" || name == "rounds_per_second")
        {
            cfg.consensus.rounds_per_second = as_double();
        }
        else if (name == "exec_cost_ms")
        {
            cfg.exec_cost_ms = as_double();
        }
        else if (name == "seed")
        {
            cfg.seed = as_size();
        }
        else if (name == "total")
        {
            cfg.workload.total = as_size();
        }
        else if (name == "simple_ratio")
        {
            cfg.workload.simple_ratio = as_double();
        }
        else if (name == "contract_population")
        {
            cfg.workload.contract_population = as_size();
        }
        else if (name == "workload")
        {
            cfg.workload.kind = parse_workload_kind(value);
        }
        else
        {
            throw Error(ErrorKind::config, "unknown sweep parameter '" + name + "'");
        }
    }

    struct SweepRun
    {
        ExperimentConfig config;
        MetricsRecord metrics;
    };

    // Cartesian product over the parameters, first parameter varying slowest.
    inline std::vector<SweepRun> sweep(const ExperimentConfig &base, const std::vector<SweepParam> &grid)
    {
        if (grid.empty())
        {
            throw Error(ErrorKind::config, "sweep grid is empty");
        }
        std::vector<std::pair<ExperimentConfig, std::string>> points{{base, ""}};
        for (const auto &p : grid)
        {
            if (p.values.empty())
            {
                throw Error(ErrorKind::config, "sweep parameter '" + p.name + "' has no values");
            }
            std::vector<std::pair<ExperimentConfig, std::string>> next;
            for (const auto &[cfg, id] : points)
            {
                for (const auto &v : p.values)
                {
                    auto c = cfg;
                    apply_param(c, p.name, v);
                    next.emplace_back(c, id.empty() ? p.name + "=" + v : id + ";" + p.name + "=" + v);
                }
            }
            points = std::move(next);
        }
        std::vector<SweepRun> out;
        for (auto &[cfg, id] : points)
        {
            cfg.validate();
            auto m = run_experiment(cfg);
            m.run_id = id;
            out.push_back({cfg, std::move(m)});
        }
        return out;
    }
} // namespace saber::harness

#pragma once

#include "saber/blocks.hpp"
#include "saber/common.hpp"
#include "saber/ordering.hpp"
#include "saber/simnet.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>
#include <vector>

namespace saber::harness
{
    using nlohmann::json;

    enum class Mode
    {
        saber,
        baseline_2pl,
    };

    enum class WorkloadKind
    {
        all_complex,
        mixed,
        trace,
    };

    inline const char *to_string(WorkloadKind k)
    {
        switch (k)
        {
        case WorkloadKind::all_complex: return "all_complex";
        case WorkloadKind::mixed: return "mixed";
        case WorkloadKind::trace: return "trace";
        }
        return "unknown";
    }

    struct WorkloadSpec
    {
        WorkloadKind kind = WorkloadKind::all_complex;
        std::size_t total = 1000;
        double simple_ratio = 0.47;
        // Distinct contracts complex calls draw from; 0 gives every call its own.
        std::size_t contract_population = 0;
        std::size_t accounts = 1000;
        // Client submission rate; 0 submits everything at time zero.
        double arrival_rate_tps = 0;
        std::string trace_path;
    };

    struct FaultSpec
    {
        std::uint32_t group = 0;
        std::uint32_t rank = 0;
        simnet::FaultMode mode = simnet::FaultMode::crash;
        double at_ms = 0;
    };

    struct EpochSpec
    {
        // 0 disables rotation.
        std::size_t length_rounds = 10;
        double rotation_fraction = 1.0 / 3.0;
    };

    struct ExperimentConfig
    {
        std::uint64_t seed = 1;
        Mode mode = Mode::saber;
        ordering::ConsensusModel consensus;
        // Per-certificate verification work at the consensus layer, serialised.
        double verify_cost_ms = 0;
        std::size_t group_count = 4;
        std::size_t group_size = 3;
        DecisionThreshold decision_threshold = DecisionThreshold::majority;
        std::size_t shard_count = 4;
        std::size_t shard_size = 3;
        bool caching = false;
        double exec_cost_ms = 10;
        WorkloadSpec workload;
        std::vector<FaultSpec> faults;
        EpochSpec epoch;
        simnet::LatencyParams latency;
        ordering::AssignmentPolicy assignment = ordering::AssignmentPolicy::round_robin;
        std::string crypto_backend = "digest";
        // Budget for faulty execution nodes as a fraction of all of them.
        double fault_budget = 0.25;
        double max_time_s = 36000;
        // Retries after an abort in the 2PL baseline.
        std::size_t max_retries = 0;

        std::size_t group_fault_bound() const { return (group_size - 1) / 2; }

        void validate() const
        {
            consensus.validate();
            if (group_count == 0)
            {
                throw Error(ErrorKind::config, "groups.count must be positive");
            }
            if (group_size == 0 || group_size % 2 == 0)
            {
                throw Error(ErrorKind::config, "groups.size must be odd and at least 1");
            }
            if (shard_count == 0 || shard_size == 0)
            {
                throw Error(ErrorKind::config, "storage needs at least one shard of one node");
            }
            if (exec_cost_ms < 0 || verify_cost_ms < 0)
            {
                throw Error(ErrorKind::config, "costs must be non-negative");
            }
            if (workload.simple_ratio < 0 || workload.simple_ratio > 1)
            {
                throw Error(ErrorKind::config, "workload.simple_ratio must lie in [0, 1]");
            }
            if (workload.kind != WorkloadKind::trace && workload.accounts < 2)
            {
                throw Error(ErrorKind::config, "workload.accounts must be at least 2");
            }
            if (workload.arrival_rate_tps < 0)
            {
                throw Error(ErrorKind::config, "workload.arrival_rate_tps must be non-negative");
            }
            if (epoch.length_rounds > 0 && !(epoch.rotation_fraction > 0 && epoch.rotation_fraction <= 1))
            {
                throw Error(ErrorKind::config, "epoch.rotation_fraction must lie in (0, 1]");
            }
            latency.validate();
            std::vector<std::size_t> per_group(group_count, 0);
            std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
            for (const auto &f : faults)
            {
                if (f.group >= group_count || f.rank >= group_size)
                {
                    throw Error(ErrorKind::config, "fault targets group " + std::to_string(f.group) + " rank " +
                                                       std::to_string(f.rank) + ", which does not exist");
                }
                if (f.at_ms < 0)
                {
                    throw Error(ErrorKind::config, "fault times must be non-negative");
                }
                if (f.mode != simnet::FaultMode::honest && seen.insert({f.group, f.rank}).second)
                {
                    ++per_group[f.group];
                }
            }
            for (std::size_t g = 0; g < group_count; ++g)
            {
                if (per_group[g] > group_fault_bound())
                {
                    throw Error(ErrorKind::config, "group " + std::to_string(g) + " has " +
                                                       std::to_string(per_group[g]) + " faulty nodes, above f' = " +
                                                       std::to_string(group_fault_bound()));
                }
            }
            const double total_nodes = static_cast<double>(group_count * group_size);
            if (static_cast<double>(seen.size()) > fault_budget * total_nodes + 1e-9)
            {
                throw Error(ErrorKind::config, "fault schedule exceeds the global fault budget");
            }
        }
    };

    namespace detail
    {
        template <typename T>
        void read(const json &j, const char *key, T &out)
        {
            if (j.contains(key))
            {
                try
                {
                    out = j.at(key).get<T>();
                }
                catch (const json::exception &e)
                {
                    throw Error(ErrorKind::config, std::string("bad value for '") + key + "': " + e.what());
                }
            }
        }

        inline void reject_unknown(const json &j, std::initializer_list<const char *> keys, const char *where)
        {
            for (auto it = j.begin(); it != j.end(); ++it)
            {
                bool known = false;
                for (const auto *k : keys)
                {
                    known = known || it.key() == k;
                }
                if (!known)
                {
                    throw Error(ErrorKind::config, std::string("unknown key '") + it.key() + "' in " + where);
                }
            }
        }

        inline const json &section(const json &j, const char *key)
        {
            static const json empty = json::object();
            if (!j.contains(key))
            {
                return empty;
            }
            if (!j.at(key).is_object())
            {
                throw Error(ErrorKind::config, std::string("'") + key + "' must be an object");
            }
            return j.at(key);
        }
    } // namespace detail

    inline WorkloadKind parse_workload_kind(std::string_view s)
    {
        if (s == "all_complex" || s == "all-complex" || s == "complex")
        {
            return WorkloadKind::all_complex;
        }
        if (s == "mixed")
        {
            return WorkloadKind::mixed;
        }
        if (s == "trace")
        {
            return WorkloadKind::trace;
        }
        throw Error(ErrorKind::config, "unknown workload kind '" + std::string(s) + "'");
    }

    inline ExperimentConfig config_from_json(const json &j)
    {
        using detail::read;
        if (!j.is_object())
        {
            throw Error(ErrorKind::config, "config must be a JSON object");
        }
        detail::reject_unknown(j,
                               {"seed", "mode", "consensus", "groups", "storage", "exec_cost_ms", "workload", "faults",
                                "epoch", "latency", "assignment", "crypto_backend", "fault_budget", "max_time_s",
                                "max_retries"},
                               "config");
        ExperimentConfig c;
        read(j, "seed", c.seed);
        std::string mode = "saber";
        read(j, "mode", mode);
        if (mode == "saber")
        {
            c.mode = Mode::saber;
        }
        else if (mode == "baseline_2pl" || mode == "baseline-2pl")
        {
            c.mode = Mode::baseline_2pl;
        }
        else
        {
            throw Error(ErrorKind::config, "unknown mode '" + mode + "'");
        }

        const auto &cons = detail::section(j, "consensus");
        detail::reject_unknown(cons,
                               {"rounds_per_second", "tx_per_block", "block_payload_bytes", "nodes", "faults",
                                "verify_cost_ms"},
                               "consensus");
        read(cons, "rounds_per_second", c.consensus.rounds_per_second);
        read(cons, "tx_per_block", c.consensus.tx_per_block);
        read(cons, "block_payload_bytes", c.consensus.block_payload_bytes);
        read(cons, "nodes", c.consensus.n);
        read(cons, "faults", c.consensus.f);
        read(cons, "verify_cost_ms", c.verify_cost_ms);

        const auto &groups = detail::section(j, "groups");
        detail::reject_unknown(groups, {"count", "size", "decision_threshold"}, "groups");
        read(groups, "count", c.group_count);
        read(groups, "size", c.group_size);
        std::string threshold = "majority";
        read(groups, "decision_threshold", threshold);
        if (threshold == "majority")
        {
            c.decision_threshold = DecisionThreshold::majority;
        }
        else if (threshold == "all")
        {
            c.decision_threshold = DecisionThreshold::all;
        }
        else
        {
            throw Error(ErrorKind::config, "unknown decision_threshold '" + threshold + "'");
        }

        const auto &st = detail::section(j, "storage");
        detail::reject_unknown(st, {"shard_count", "shard_size", "caching"}, "storage");
        read(st, "shard_count", c.shard_count);
        read(st, "shard_size", c.shard_size);
        read(st, "caching", c.caching);

        read(j, "exec_cost_ms", c.exec_cost_ms);

        const auto &wl = detail::section(j, "workload");
        detail::reject_unknown(wl,
                               {"kind", "total", "simple_ratio", "contract_population", "accounts",
                                "arrival_rate_tps", "trace_path"},
                               "workload");
        std::string kind = "all_complex";
        read(wl, "kind", kind);
        c.workload.kind = parse_workload_kind(kind);
        read(wl, "total", c.workload.total);
        read(wl, "simple_ratio", c.workload.simple_ratio);
        read(wl, "contract_population", c.workload.contract_population);
        read(wl, "accounts", c.workload.accounts);
        read(wl, "arrival_rate_tps", c.workload.arrival_rate_tps);
        read(wl, "trace_path", c.workload.trace_path);

        if (j.contains("faults"))
        {
            if (!j.at("faults").is_array())
            {
                throw Error(ErrorKind::config, "'faults' must be an array");
            }
            for (const auto &f : j.at("faults"))
            {
                detail::reject_unknown(f, {"group", "rank", "mode", "at_ms"}, "fault");
                FaultSpec fs;
                read(f, "group", fs.group);
                read(f, "rank", fs.rank);
                std::string m = "crash";
                read(f, "mode", m);
                fs.mode = simnet::parse_fault_mode(m);
                read(f, "at_ms", fs.at_ms);
                c.faults.push_back(fs);
            }
        }

        const auto &ep = detail::section(j, "epoch");
        detail::reject_unknown(ep, {"length_rounds", "rotation_fraction"}, "epoch");
        read(ep, "length_rounds", c.epoch.length_rounds);
        read(ep, "rotation_fraction", c.epoch.rotation_fraction);

        const auto &lat = detail::section(j, "latency");
        detail::reject_unknown(lat,
                               {"client_cn_ms", "cn_en_ms", "intra_group_ms", "en_storage_ms", "jitter_ms",
                                "delta_bound_ms"},
                               "latency");
        read(lat, "client_cn_ms", c.latency.client_cn_ms);
        read(lat, "cn_en_ms", c.latency.cn_en_ms);
        read(lat, "intra_group_ms", c.latency.intra_group_ms);
        read(lat, "en_storage_ms", c.latency.en_storage_ms);
        read(lat, "jitter_ms", c.latency.jitter_ms);
        read(lat, "delta_bound_ms", c.latency.delta_bound_ms);

        std::string assignment = "round_robin";
        read(j, "assignment", assignment);
        if (assignment == "round_robin" || assignment == "round-robin")
        {
            c.assignment = ordering::AssignmentPolicy::round_robin;
        }
        else if (assignment == "hash")
        {
            c.assignment = ordering::AssignmentPolicy::hash;
        }
        else
        {
            throw Error(ErrorKind::config, "unknown assignment policy '" + assignment + "'");
        }
        read(j, "crypto_backend", c.crypto_backend);
        read(j, "fault_budget", c.fault_budget);
        read(j, "max_time_s", c.max_time_s);
        read(j, "max_retries", c.max_retries);
        c.validate();
        return c;
    }

    inline json config_to_json(const ExperimentConfig &c)
    {
        json faults = json::array();
        for (const auto &f : c.faults)
        {
            faults.push_back({{"group", f.group}, {"rank", f.rank}, {"mode", simnet::to_string(f.mode)}, {"at_ms", f.at_ms}});
        }
        return json{
            {"seed", c.seed},
            {"mode", c.mode == Mode::saber ? "saber" : "baseline_2pl"},
            {"consensus",
             {{"rounds_per_second", c.consensus.rounds_per_second},
              {"tx_per_block", c.consensus.tx_per_block},
              {"block_payload_bytes", c.consensus.block_payload_bytes},
              {"nodes", c.consensus.n},
              {"faults", c.consensus.f},
              {"verify_cost_ms", c.verify_cost_ms}}},
            {"groups",
             {{"count", c.group_count},
              {"size", c.group_size},
              {"decision_threshold", c.decision_threshold == DecisionThreshold::majority ? "majority" : "all"}}},
            {"storage", {{"shard_count", c.shard_count}, {"shard_size", c.shard_size}, {"caching", c.caching}}},
            {"exec_cost_ms", c.exec_cost_ms},
            {"workload",
             {{"kind", to_string(c.workload.kind)},
              {"total", c.workload.total},
              {"simple_ratio", c.workload.simple_ratio},
              {"contract_population", c.workload.contract_population},
              {"accounts", c.workload.accounts},
              {"arrival_rate_tps", c.workload.arrival_rate_tps},
              {"trace_path", c.workload.trace_path}}},
            {"faults", faults},
            {"epoch", {{"length_rounds", c.epoch.length_rounds}, {"rotation_fraction", c.epoch.rotation_fraction}}},
            {"latency",
             {{"client_cn_ms", c.latency.client_cn_ms},
              {"cn_en_ms", c.latency.cn_en_ms},
              {"intra_group_ms", c.latency.intra_group_ms},
              {"en_storage_ms", c.latency.en_storage_ms},
              {"jitter_ms", c.latency.jitter_ms},
              {"delta_bound_ms", c.latency.delta_bound_ms}}},
            {"assignment", c.assignment == ordering::AssignmentPolicy::round_robin ? "round_robin" : "hash"},
            {"crypto_backend", c.crypto_backend},
            {"fault_budget", c.fault_budget},
            {"max_time_s", c.max_time_s},
            {"max_retries", c.max_retries},
        };
    }

    inline ExperimentConfig load_config(const std::string &path)
    {
        std::ifstream in(path);
        if (!in)
        {
            throw Error(ErrorKind::config, "cannot open config file " + path);
        }
        json j;
        try
        {
            in >> j;
        }
        catch (const json::exception &e)
        {
            throw Error(ErrorKind::parse, "config " + path + " is not valid JSON: " + e.what());
        }
        return config_from_json(j);
    }
} // namespace saber::harness

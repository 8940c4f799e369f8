#pragma once

#include "saber/common.hpp"
#include "saber/harness/config.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace saber::harness
{
    struct MetricsRecord
    {
        std::string run_id;
        std::size_t m = 0;
        std::size_t group_size = 0;
        double consensus_tps = 0;
        std::string workload;
        double throughput_tps = 0;
        double simple_latency_ms = 0;
        double complex_latency_ms = 0;
        double max_simple_latency_ms = 0;
        double processing_time_s = 0;
        std::size_t aborts = 0;

        std::size_t submitted = 0;
        std::size_t confirmed = 0;
        std::size_t confirmed_simple = 0;
        std::size_t confirmed_complex = 0;
        std::size_t rejected = 0;
        std::size_t in_flight = 0;
        std::size_t cached_events = 0;
        std::size_t deferred_events = 0;
        std::size_t rounds = 0;
        std::size_t blocks = 0;
        std::size_t failovers = 0;
        std::size_t disputes = 0;
        std::size_t rejected_results = 0;
        std::size_t writebacks = 0;
        std::size_t epochs = 0;
        std::size_t fault_budget_violations = 0;
        std::size_t divergent_objects = 0;
        std::vector<double> group_utilization;
        std::map<std::string, std::size_t> rejection_reasons;
        std::string trace_digest;
        std::string state_digest;
    };

    inline const char *csv_header()
    {
        return "run_id,m,group_size,consensus_tps,workload,throughput_tps,simple_latency_ms,complex_latency_ms,"
               "processing_time_s,aborts";
    }

    inline std::string format_number(double v)
    {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return buf;
    }

    inline std::string csv_row(const MetricsRecord &r)
    {
        return r.run_id + "," + std::to_string(r.m) + "," + std::to_string(r.group_size) + "," +
               format_number(r.consensus_tps) + "," + r.workload + "," + format_number(r.throughput_tps) + "," +
               format_number(r.simple_latency_ms) + "," + format_number(r.complex_latency_ms) + "," +
               format_number(r.processing_time_s) + "," + std::to_string(r.aborts);
    }

    inline nlohmann::json metrics_to_json(const MetricsRecord &r)
    {
        return nlohmann::json{
            {"run_id", r.run_id},
            {"m", r.m},
            {"group_size", r.group_size},
            {"consensus_tps", r.consensus_tps},
            {"workload", r.workload},
            {"throughput_tps", r.throughput_tps},
            {"simple_latency_ms", r.simple_latency_ms},
            {"complex_latency_ms", r.complex_latency_ms},
            {"max_simple_latency_ms", r.max_simple_latency_ms},
            {"processing_time_s", r.processing_time_s},
            {"aborts", r.aborts},
            {"submitted", r.submitted},
            {"confirmed", r.confirmed},
            {"confirmed_simple", r.confirmed_simple},
            {"confirmed_complex", r.confirmed_complex},
            {"rejected", r.rejected},
            {"in_flight", r.in_flight},
            {"cached_events", r.cached_events},
            {"deferred_events", r.deferred_events},
            {"rounds", r.rounds},
            {"blocks", r.blocks},
            {"failovers", r.failovers},
            {"disputes", r.disputes},
            {"rejected_results", r.rejected_results},
            {"writebacks", r.writebacks},
            {"epochs", r.epochs},
            {"fault_budget_violations", r.fault_budget_violations},
            {"divergent_objects", r.divergent_objects},
            {"group_utilization", r.group_utilization},
            {"rejection_reasons", r.rejection_reasons},
            {"trace_digest", r.trace_digest},
            {"state_digest", r.state_digest},
        };
    }

    inline void write_text(const std::filesystem::path &p, const std::string &content)
    {
        std::ofstream out(p, std::ios::binary);
        if (!out)
        {
            throw Error(ErrorKind::not_found, "cannot write " + p.string());
        }
        out << content;
    }

    inline void write_csv(const std::filesystem::path &p, const std::vector<MetricsRecord> &rows)
    {
        std::string s = std::string(csv_header()) + "\n";
        for (const auto &r : rows)
        {
            s += csv_row(r) + "\n";
        }
        write_text(p, s);
    }

    // Writes metrics.csv, summary.json and trace_digest.txt into `dir`.
    inline void write_artifacts(const std::filesystem::path &dir, const std::vector<ExperimentConfig> &configs,
                                const std::vector<MetricsRecord> &rows)
    {
        std::filesystem::create_directories(dir);
        write_csv(dir / "metrics.csv", rows);
        nlohmann::json runs = nlohmann::json::array();
        std::string digests;
        for (std::size_t i = 0; i < rows.size(); ++i)
        {
            nlohmann::json entry = metrics_to_json(rows[i]);
            if (i < configs.size())
            {
                entry["config"] = config_to_json(configs[i]);
            }
            runs.push_back(std::move(entry));
            digests += rows.size() == 1 ? rows[i].trace_digest + "\n" : rows[i].run_id + " " + rows[i].trace_digest + "\n";
        }
        nlohmann::json summary = rows.size() == 1 ? runs.front() : nlohmann::json{{"runs", runs}};
        write_text(dir / "summary.json", summary.dump(2) + "\n");
        write_text(dir / "trace_digest.txt", digests);
    }
} // namespace saber::harness

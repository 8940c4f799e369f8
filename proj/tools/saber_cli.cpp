#include "saber/harness/experiment.hpp"
#include "saber/membership.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace
{
    using namespace saber;
    using namespace saber::harness;

    void print_summary(const MetricsRecord &m)
    {
        std::cout << csv_header() << "\n" << csv_row(m) << "\n";
    }

    int cmd_run(const std::string &config_path, std::optional<std::uint64_t> seed, const std::string &out)
    {
        auto cfg = load_config(config_path);
        if (seed)
        {
            cfg.seed = *seed;
        }
        cfg.validate();
        auto m = run_experiment(cfg);
        write_artifacts(out, {cfg}, {m});
        print_summary(m);
        return 0;
    }

    int cmd_sweep(const std::string &config_path, const std::vector<std::string> &params, const std::string &out)
    {
        auto cfg = load_config(config_path);
        std::vector<SweepParam> grid;
        for (const auto &p : params)
        {
            grid.push_back(parse_sweep_param(p));
        }
        auto runs = sweep(cfg, grid);
        std::vector<ExperimentConfig> configs;
        std::vector<MetricsRecord> rows;
        for (auto &r : runs)
        {
            configs.push_back(r.config);
            rows.push_back(r.metrics);
        }
        write_artifacts(out, configs, rows);
        std::cout << csv_header() << "\n";
        for (const auto &r : rows)
        {
            std::cout << csv_row(r) << "\n";
        }
        return 0;
    }

    int cmd_prob(std::size_t n, double alpha, const std::string &family_name, std::optional<double> target)
    {
        const auto family = membership::parse_family(family_name);
        const auto p = membership::group_failure_prob_hp(n, alpha, family);
        std::cout << "group_failure_prob " << p.str(12) << "\n";
        if (target)
        {
            std::cout << "min_group_size " << membership::min_group_size(alpha, family, *target) << "\n";
        }
        return 0;
    }

    int cmd_trace(const std::string &file, const std::string &config_path, std::optional<std::uint64_t> seed,
                  const std::string &out)
    {
        auto cfg = load_config(config_path);
        if (seed)
        {
            cfg.seed = *seed;
        }
        cfg.workload.kind = WorkloadKind::trace;
        cfg.workload.trace_path = file;
        cfg.validate();
        auto m = run_transactions(cfg, ingest_trace(file));
        m.run_id = "trace";
        if (!out.empty())
        {
            write_artifacts(out, {cfg}, {m});
        }
        print_summary(m);
        return 0;
    }
} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"saber protocol simulator"};
    app.require_subcommand(1);

    std::string config, out, family, file;
    std::vector<std::string> params;
    std::optional<std::uint64_t> seed;
    std::optional<double> target;
    std::size_t group_size = 0;
    double alpha = 0;

    auto *run = app.add_subcommand("run", "run one experiment");
    run->add_option("--config", config)->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed);
    run->add_option("--out", out)->required();

    auto *sw = app.add_subcommand("sweep", "run a parameter grid");
    sw->add_option("--config", config)->required()->check(CLI::ExistingFile);
    sw->add_option("--param", params, "name=v1,v2,... (repeatable)")->required();
    sw->add_option("--out", out)->required();

    auto *prob = app.add_subcommand("prob", "exact group failure probability");
    prob->add_option("--group-size", group_size)->required();
    prob->add_option("--alpha", alpha)->required();
    prob->add_option("--family", family)->required()->check(CLI::IsMember({"third", "majority"}));
    prob->add_option("--target", target);

    auto *tr = app.add_subcommand("trace", "replay a transaction trace file");
    tr->add_option("--file", file)->required()->check(CLI::ExistingFile);
    tr->add_option("--config", config)->required()->check(CLI::ExistingFile);
    tr->add_option("--seed", seed);
    tr->add_option("--out", out);

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*run)
        {
            return cmd_run(config, seed, out);
        }
        if (*sw)
        {
            return cmd_sweep(config, params, out);
        }
        if (*prob)
        {
            return cmd_prob(group_size, alpha, family, target);
        }
        return cmd_trace(file, config, seed, out);
    }
    catch (const saber::Error &e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

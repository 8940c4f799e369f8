#pragma once

#include "saber/blocks.hpp"
#include "saber/common.hpp"
#include "saber/harness/config.hpp"
#include "saber/simnet.hpp"

#include <charconv>
#include <fstream>
#include <string>
#include <vector>

namespace saber::harness
{
    // Complex calls on contract c touch object contract_object(c).
    inline constexpr ObjectId contract_object(ObjectId contract) { return contract; }

    inline Transaction make_simple(TxId id, AccountId from, AccountId to, std::uint64_t amount)
    {
        Transaction tx;
        tx.id = id;
        tx.kind = TxKind::simple;
        tx.sender = from;
        tx.receiver = to;
        tx.amount = amount;
        return tx;
    }

    inline Transaction make_complex(TxId id, AccountId from, ObjectId contract, double cost_ms)
    {
        Transaction tx;
        tx.id = id;
        tx.kind = TxKind::complex;
        tx.sender = from;
        tx.contract_id = contract;
        append_u64_be(tx.payload, id);
        tx.touched = {contract_object(contract)};
        tx.exec_cost_ms = cost_ms;
        return tx;
    }

    // Unsigned transactions in submission order; ids start at 1, accounts at 0
    // and contracts at 1.
    inline std::vector<Transaction> generate_workload(const WorkloadSpec &spec, double exec_cost_ms,
                                                      std::uint64_t seed)
    {
        if (spec.kind == WorkloadKind::trace)
        {
            throw Error(ErrorKind::parameter, "trace workloads are ingested, not generated");
        }
        if (spec.accounts < 2)
        {
            throw Error(ErrorKind::parameter, "workloads need at least two accounts");
        }
        Rng rng(mix64(seed ^ 0x776f726b6c6f6164ULL));
        const double ratio = spec.kind == WorkloadKind::all_complex ? 0.0 : spec.simple_ratio;
        const auto n_simple = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(spec.total)));
        std::vector<bool> is_simple(spec.total, false);
        std::fill(is_simple.begin(), is_simple.begin() + static_cast<std::ptrdiff_t>(n_simple), true);
        for (std::size_t i = spec.total; i > 1; --i)
        {
            auto j = static_cast<std::size_t>(rng.below(i));
            std::swap(is_simple[i - 1], is_simple[j]);
        }

        std::vector<Transaction> out;
        out.reserve(spec.total);
        ObjectId next_unique = 1;
        for (std::size_t i = 0; i < spec.total; ++i)
        {
            const TxId id = i + 1;
            const AccountId sender = rng.below(spec.accounts);
            Transaction tx;
            if (is_simple[i])
            {
                AccountId receiver = rng.below(spec.accounts - 1);
                if (receiver >= sender)
                {
                    ++receiver;
                }
                tx = make_simple(id, sender, receiver, 1 + rng.below(10));
            }
            else
            {
                ObjectId contract = spec.contract_population == 0 ? next_unique++ : 1 + rng.below(spec.contract_population);
                tx = make_complex(id, sender, contract, exec_cost_ms);
            }
            if (spec.arrival_rate_tps > 0)
            {
                tx.submitted_us = simnet::ms_to_us(1000.0 * static_cast<double>(i) / spec.arrival_rate_tps);
            }
            out.push_back(std::move(tx));
        }
        return out;
    }

    namespace detail
    {
        inline std::vector<std::string_view> split_fields(std::string_view line)
        {
            std::vector<std::string_view> f;
            std::size_t start = 0;
            while (true)
            {
                auto pos = line.find(',', start);
                auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
                while (!field.empty() && (field.front() == ' ' || field.front() == '\t'))
                {
                    field.remove_prefix(1);
                }
                while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
                {
                    field.remove_suffix(1);
                }
                f.push_back(field);
                if (pos == std::string_view::npos)
                {
                    break;
                }
                start = pos + 1;
            }
            return f;
        }

        inline std::uint64_t parse_u64(std::string_view s, std::size_t line, const char *what)
        {
            std::uint64_t v = 0;
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size() || s.empty())
            {
                throw Error(ErrorKind::parse, "line " + std::to_string(line) + ": bad " + what + " '" + std::string(s) + "'");
            }
            return v;
        }

        inline double parse_double(std::string_view s, std::size_t line, const char *what)
        {
            try
            {
                std::size_t used = 0;
                std::string str(s);
                double v = std::stod(str, &used);
                if (used != str.size() || v < 0 || !std::isfinite(v))
                {
                    throw std::invalid_argument("trailing");
                }
                return v;
            }
            catch (const std::exception &)
            {
                throw Error(ErrorKind::parse, "line " + std::to_string(line) + ": bad " + what + " '" + std::string(s) + "'");
            }
        }
    } // namespace detail

    // Lines of `tx_id,kind,sender,receiver_or_contract,amount_or_cost_ms`.
    // Blank lines and lines starting with '#' are skipped, as is a header row.
    inline std::vector<Transaction> parse_trace(std::istream &in)
    {
        std::vector<Transaction> out;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line))
        {
            ++lineno;
            std::string_view v(line);
            while (!v.empty() && (v.back() == '\r' || v.back() == ' '))
            {
                v.remove_suffix(1);
            }
            if (v.empty() || v.front() == '#')
            {
                continue;
            }
            auto f = detail::split_fields(v);
            if (out.empty() && !f.empty() && f[0] == "tx_id")
            {
                continue;
            }
            if (f.size() != 5)
            {
                throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": expected 5 fields, found " +
                                                  std::to_string(f.size()));
            }
            const auto id = detail::parse_u64(f[0], lineno, "tx_id");
            const auto sender = detail::parse_u64(f[2], lineno, "sender");
            const auto target = detail::parse_u64(f[3], lineno, "receiver_or_contract");
            if (f[1] == "simple")
            {
                out.push_back(make_simple(id, sender, target, detail::parse_u64(f[4], lineno, "amount")));
            }
            else if (f[1] == "complex")
            {
                out.push_back(make_complex(id, sender, target, detail::parse_double(f[4], lineno, "cost_ms")));
            }
            else
            {
                throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": unknown kind '" + std::string(f[1]) + "'");
            }
        }
        return out;
    }

    inline std::vector<Transaction> ingest_trace(const std::string &path)
    {
        std::ifstream in(path);
        if (!in)
        {
            throw Error(ErrorKind::not_found, "cannot open trace file " + path);
        }
        return parse_trace(in);
    }
} // namespace saber::harness

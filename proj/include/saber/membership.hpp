#pragma once

#include "saber/common.hpp"
#include "saber/crypto.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

namespace saber::membership
{
    struct Identity
    {
        crypto::PublicKey public_key;
        std::uint64_t deposit = 0;
        bool consensus_eligible = false;
        bool execution_eligible = true;
    };

    // Deposit-descending; equal deposits fall back to public-key order.
    inline bool ranks_before(const crypto::PublicKey &a_pk, std::uint64_t a_dep, const crypto::PublicKey &b_pk,
                             std::uint64_t b_dep)
    {
        if (a_dep != b_dep)
        {
            return a_dep > b_dep;
        }
        return a_pk < b_pk;
    }

    struct IdentityLedger
    {
        std::vector<Identity> identities;

        const Identity *find(const crypto::PublicKey &pk) const
        {
            for (const auto &id : identities)
            {
                if (id.public_key == pk)
                {
                    return &id;
                }
            }
            return nullptr;
        }

        std::size_t size() const { return identities.size(); }
    };

    inline IdentityLedger register_identity(IdentityLedger ledger, crypto::PublicKey pk, std::uint64_t deposit,
                                            bool consensus_eligible = false, bool execution_eligible = true)
    {
        if (deposit == 0)
        {
            throw Error(ErrorKind::parameter, "deposit must be positive");
        }
        if (ledger.find(pk) != nullptr)
        {
            throw Error(ErrorKind::registration, "public key already registered");
        }
        Identity id{std::move(pk), deposit, consensus_eligible, execution_eligible};
        auto pos = std::find_if(ledger.identities.begin(), ledger.identities.end(), [&](const Identity &other) {
            return ranks_before(id.public_key, id.deposit, other.public_key, other.deposit);
        });
        ledger.identities.insert(pos, std::move(id));
        return ledger;
    }

    struct Member
    {
        crypto::PublicKey public_key;
        std::uint64_t deposit = 0;

        bool operator==(const Member &) const = default;
    };

    // groups[i][0] leads group i.
    struct GroupAssignment
    {
        std::uint64_t epoch = 0;
        std::vector<std::vector<Member>> groups;

        std::size_t group_count() const { return groups.size(); }

        std::vector<crypto::PublicKey> keys_of(std::size_t g) const
        {
            std::vector<crypto::PublicKey> out;
            for (const auto &m : groups.at(g))
            {
                out.push_back(m.public_key);
            }
            return out;
        }

        bool operator==(const GroupAssignment &) const = default;
    };

    enum class ThresholdFamily
    {
        one_third,
        majority,
    };

    inline Digest placement_hash(const Digest &r, const crypto::PublicKey &pk)
    {
        return crypto::Sha256().update(r).update(pk.bytes).finish();
    }

    // The 256-bit digest read big-endian, reduced mod m.
    inline std::size_t digest_mod(const Digest &d, std::size_t m)
    {
        unsigned __int128 acc = 0;
        for (auto b : d)
        {
            acc = ((acc << 8U) | b) % m;
        }
        return static_cast<std::size_t>(acc);
    }

    inline std::size_t group_of(const Digest &r, const crypto::PublicKey &pk, std::size_t m)
    {
        return digest_mod(placement_hash(r, pk), m);
    }

    inline void sort_group(std::vector<Member> &g)
    {
        std::sort(g.begin(), g.end(), [](const Member &a, const Member &b) {
            return ranks_before(a.public_key, a.deposit, b.public_key, b.deposit);
        });
    }

    inline std::vector<Member> execution_members(const IdentityLedger &ledger)
    {
        std::vector<Member> out;
        for (const auto &id : ledger.identities)
        {
            if (id.execution_eligible)
            {
                out.push_back({id.public_key, id.deposit});
            }
        }
        return out;
    }

    inline GroupAssignment shuffle(std::span<const Member> members, std::size_t m, const Digest &r)
    {
        if (m == 0)
        {
            throw Error(ErrorKind::parameter, "group count must be at least 1");
        }
        GroupAssignment out;
        out.groups.resize(m);
        for (const auto &mem : members)
        {
            out.groups[group_of(r, mem.public_key, m)].push_back(mem);
        }
        for (auto &g : out.groups)
        {
            sort_group(g);
        }
        return out;
    }

    namespace detail
    {
        inline std::size_t rotation_count(double fraction, std::size_t total)
        {
            if (!(fraction > 0.0) || fraction > 1.0)
            {
                throw Error(ErrorKind::parameter, "rotation fraction must lie in (0, 1]");
            }
            if (total == 0)
            {
                return 0;
            }
            auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(total) - 1e-9));
            return std::clamp<std::size_t>(k, 1, total);
        }

        // The k members with the smallest placement hash.
        inline std::set<crypto::PublicKey> rotation_set(std::span<const Member> members, const Digest &r,
                                                         std::size_t k)
        {
            std::vector<std::pair<Digest, crypto::PublicKey>> ranked;
            for (const auto &m : members)
            {
                ranked.emplace_back(placement_hash(r, m.public_key), m.public_key);
            }
            std::sort(ranked.begin(), ranked.end());
            std::set<crypto::PublicKey> out;
            for (std::size_t i = 0; i < k && i < ranked.size(); ++i)
            {
                out.insert(ranked[i].second);
            }
            return out;
        }
    } // namespace detail

    inline GroupAssignment rotate_epoch(const GroupAssignment &assignment, const IdentityLedger &ledger,
                                        const Digest &r, double rotation_fraction)
    {
        const std::size_t m = assignment.group_count();
        if (m == 0)
        {
            throw Error(ErrorKind::parameter, "assignment has no groups");
        }
        auto members = execution_members(ledger);
        auto k = detail::rotation_count(rotation_fraction, members.size());
        auto moving = detail::rotation_set(members, r, k);

        std::map<crypto::PublicKey, std::size_t> current;
        for (std::size_t g = 0; g < m; ++g)
        {
            for (const auto &mem : assignment.groups[g])
            {
                current.emplace(mem.public_key, g);
            }
        }

        GroupAssignment out;
        out.epoch = assignment.epoch + 1;
        out.groups.resize(m);
        for (const auto &mem : members)
        {
            auto it = current.find(mem.public_key);
            std::size_t g = (moving.contains(mem.public_key) || it == current.end())
                                ? group_of(r, mem.public_key, m)
                                : it->second;
            out.groups[g].push_back(mem);
        }
        for (auto &g : out.groups)
        {
            sort_group(g);
        }
        return out;
    }

    // Equal-size variant: members ordered by placement hash are dealt into
    // consecutive blocks of group_size. Used where every group must hold
    // exactly 2f'+1 members.
    inline GroupAssignment balanced_shuffle(std::span<const Member> members, std::size_t m, std::size_t group_size,
                                            const Digest &r)
    {
        if (m == 0 || group_size == 0)
        {
            throw Error(ErrorKind::parameter, "group count and size must be at least 1");
        }
        if (members.size() < m * group_size)
        {
            throw Error(ErrorKind::parameter, "not enough members for the requested groups");
        }
        std::vector<std::pair<Digest, std::size_t>> order;
        for (std::size_t i = 0; i < members.size(); ++i)
        {
            order.emplace_back(placement_hash(r, members[i].public_key), i);
        }
        std::sort(order.begin(), order.end());
        GroupAssignment out;
        out.groups.resize(m);
        for (std::size_t i = 0; i < m * group_size; ++i)
        {
            out.groups[i / group_size].push_back(members[order[i].second]);
        }
        for (auto &g : out.groups)
        {
            sort_group(g);
        }
        return out;
    }

    // Size-preserving rotation: the selected members vacate their slots and are
    // re-dealt into the vacated slots by a second hash.
    inline GroupAssignment balanced_rotate(const GroupAssignment &assignment, const Digest &r,
                                           double rotation_fraction)
    {
        std::vector<Member> all;
        for (const auto &g : assignment.groups)
        {
            all.insert(all.end(), g.begin(), g.end());
        }
        auto k = detail::rotation_count(rotation_fraction, all.size());
        auto moving = detail::rotation_set(all, r, k);

        GroupAssignment out;
        out.epoch = assignment.epoch + 1;
        out.groups.resize(assignment.group_count());
        std::vector<std::size_t> vacated;
        std::vector<std::pair<Digest, Member>> movers;
        for (std::size_t g = 0; g < assignment.group_count(); ++g)
        {
            for (const auto &mem : assignment.groups[g])
            {
                if (moving.contains(mem.public_key))
                {
                    vacated.push_back(g);
                    movers.emplace_back(crypto::Sha256().update("saber/slot").update(r).update(mem.public_key.bytes).finish(),
                                        mem);
                }
                else
                {
                    out.groups[g].push_back(mem);
                }
            }
        }
        std::sort(movers.begin(), movers.end(),
                  [](const auto &a, const auto &b) { return a.first < b.first; });
        for (std::size_t i = 0; i < movers.size(); ++i)
        {
            out.groups[vacated[i]].push_back(movers[i].second);
        }
        for (auto &g : out.groups)
        {
            sort_group(g);
        }
        return out;
    }

    using HighPrecision = boost::multiprecision::cpp_bin_float_50;

    // Smallest fault count at which a group of n is considered lost.
    inline std::size_t failure_threshold(std::size_t n, ThresholdFamily family)
    {
        return family == ThresholdFamily::one_third ? (n + 2) / 3 : (n + 1) / 2;
    }

    inline double family_fraction(ThresholdFamily family)
    {
        return family == ThresholdFamily::one_third ? 1.0 / 3.0 : 0.5;
    }

    // P[X >= T] for X ~ Binomial(n, alpha), summed term by term in 50-digit
    // binary floating point (the upper tail directly, avoiding 1 - (1 - eps)).
    inline HighPrecision group_failure_prob_hp(std::size_t n, double alpha, ThresholdFamily family)
    {
        if (!(alpha >= 0.0 && alpha <= 1.0))
        {
            throw Error(ErrorKind::parameter, "alpha must lie in [0, 1]");
        }
        if (n == 0)
        {
            throw Error(ErrorKind::parameter, "group size must be at least 1");
        }
        const std::size_t t = failure_threshold(n, family);
        if (alpha == 0.0)
        {
            return HighPrecision(0);
        }
        if (alpha == 1.0)
        {
            return HighPrecision(1);
        }
        const HighPrecision a(alpha);
        const HighPrecision q = HighPrecision(1) - a;
        const HighPrecision ratio = a / q;
        // term_k = C(n,k) a^k q^(n-k), stepped from k = 0.
        HighPrecision term = boost::multiprecision::pow(q, static_cast<int>(n));
        for (std::size_t k = 1; k <= t; ++k)
        {
            term *= HighPrecision(n - k + 1) / HighPrecision(k) * ratio;
        }
        if (t == 0)
        {
            return HighPrecision(1);
        }
        HighPrecision sum = term;
        for (std::size_t k = t + 1; k <= n; ++k)
        {
            term *= HighPrecision(n - k + 1) / HighPrecision(k) * ratio;
            sum += term;
        }
        return sum;
    }

    inline double group_failure_prob(std::size_t n, double alpha, ThresholdFamily family)
    {
        return group_failure_prob_hp(n, alpha, family).convert_to<double>();
    }

    inline std::size_t min_group_size(double alpha, ThresholdFamily family, double target_prob,
                                      std::size_t search_limit = 10000)
    {
        if (!(target_prob > 0.0 && target_prob < 1.0))
        {
            throw Error(ErrorKind::parameter, "target probability must lie in (0, 1)");
        }
        if (!(alpha >= 0.0 && alpha <= 1.0))
        {
            throw Error(ErrorKind::parameter, "alpha must lie in [0, 1]");
        }
        if (alpha >= family_fraction(family))
        {
            throw Error(ErrorKind::unreachable_target, "adversarial power at or above the family threshold");
        }
        const HighPrecision target(target_prob);
        for (std::size_t n = 1; n <= search_limit; ++n)
        {
            if (group_failure_prob_hp(n, alpha, family) < target)
            {
                return n;
            }
        }
        throw Error(ErrorKind::unreachable_target, "no group size up to the search limit meets the target");
    }

    inline ThresholdFamily parse_family(std::string_view s)
    {
        if (s == "third" || s == "one_third" || s == "one-third")
        {
            return ThresholdFamily::one_third;
        }
        if (s == "majority")
        {
            return ThresholdFamily::majority;
        }
        throw Error(ErrorKind::parameter, "unknown threshold family '" + std::string(s) + "'");
    }
} // namespace saber::membership

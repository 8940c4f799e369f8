#pragma once

// Commit-then-reveal randomness beacon with Shamir-shared secrets, so that a
// participant that withholds its reveal cannot bias or stall the output.

#include "saber/common.hpp"
#include "saber/crypto.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <set>
#include <vector>

namespace saber::beacon
{
    // Secrets are split into sixteen 16-bit limbs, each shared over GF(65537).
    inline constexpr std::uint32_t field_prime = 65537;
    inline constexpr std::size_t limb_count = 16;

    using FieldElement = std::uint32_t;
    using Secret = Digest;

    struct Share
    {
        std::uint32_t x = 0;
        std::array<FieldElement, limb_count> limbs{};

        bool operator==(const Share &) const = default;
    };

    namespace detail
    {
        constexpr FieldElement mul(FieldElement a, FieldElement b) noexcept
        {
            return static_cast<FieldElement>((static_cast<std::uint64_t>(a) * b) % field_prime);
        }

        constexpr FieldElement add(FieldElement a, FieldElement b) noexcept { return (a + b) % field_prime; }

        constexpr FieldElement sub(FieldElement a, FieldElement b) noexcept
        {
            return (a + field_prime - b) % field_prime;
        }

        constexpr FieldElement pow(FieldElement base, std::uint32_t exp) noexcept
        {
            FieldElement result = 1;
            while (exp > 0)
            {
                if (exp & 1U)
                {
                    result = mul(result, base);
                }
                base = mul(base, base);
                exp >>= 1U;
            }
            return result;
        }

        constexpr FieldElement inverse(FieldElement a) noexcept { return pow(a, field_prime - 2); }

        inline std::array<FieldElement, limb_count> split_limbs(const Secret &s)
        {
            std::array<FieldElement, limb_count> out{};
            for (std::size_t i = 0; i < limb_count; ++i)
            {
                out[i] = (static_cast<FieldElement>(s[2 * i]) << 8U) | s[2 * i + 1];
            }
            return out;
        }

        inline Secret join_limbs(const std::array<FieldElement, limb_count> &limbs)
        {
            Secret s{};
            for (std::size_t i = 0; i < limb_count; ++i)
            {
                if (limbs[i] > 0xffffU)
                {
                    throw Error(ErrorKind::reconstruction, "reconstructed limb exceeds 16 bits");
                }
                s[2 * i] = static_cast<std::uint8_t>(limbs[i] >> 8U);
                s[2 * i + 1] = static_cast<std::uint8_t>(limbs[i] & 0xffU);
            }
            return s;
        }
    } // namespace detail

    inline Digest commit(const Secret &secret) { return crypto::hash(secret); }

    // Evaluations of a random degree-(threshold-1) polynomial at x = 1..n.
    inline std::vector<FieldElement> share_secret(FieldElement secret, std::size_t n, std::size_t threshold,
                                                  std::uint64_t rng_seed)
    {
        if (threshold < 1 || threshold > n)
        {
            throw Error(ErrorKind::parameter, "threshold must satisfy 1 <= threshold <= n");
        }
        if (n >= field_prime)
        {
            throw Error(ErrorKind::parameter, "share count must be below the field prime");
        }
        if (secret >= field_prime)
        {
            throw Error(ErrorKind::parameter, "secret is not a field element");
        }
        Rng rng(rng_seed);
        std::vector<FieldElement> coeffs{secret};
        for (std::size_t i = 1; i < threshold; ++i)
        {
            coeffs.push_back(static_cast<FieldElement>(rng.below(field_prime)));
        }
        std::vector<FieldElement> shares;
        shares.reserve(n);
        for (std::size_t x = 1; x <= n; ++x)
        {
            FieldElement acc = 0;
            for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it)
            {
                acc = detail::add(detail::mul(acc, static_cast<FieldElement>(x)), *it);
            }
            shares.push_back(acc);
        }
        return shares;
    }

    // Lagrange interpolation at zero over the given (x, y) points.
    inline FieldElement reconstruct(std::span<const std::pair<std::uint32_t, FieldElement>> points)
    {
        if (points.empty())
        {
            throw Error(ErrorKind::reconstruction, "no shares");
        }
        FieldElement acc = 0;
        for (std::size_t i = 0; i < points.size(); ++i)
        {
            FieldElement num = 1;
            FieldElement den = 1;
            for (std::size_t j = 0; j < points.size(); ++j)
            {
                if (i == j)
                {
                    continue;
                }
                if (points[i].first == points[j].first)
                {
                    throw Error(ErrorKind::reconstruction, "duplicate share abscissa");
                }
                num = detail::mul(num, points[j].first % field_prime);
                den = detail::mul(den, detail::sub(points[j].first % field_prime, points[i].first % field_prime));
            }
            acc = detail::add(acc, detail::mul(points[i].second, detail::mul(num, detail::inverse(den))));
        }
        return acc;
    }

    inline std::vector<Share> share_bytes(const Secret &secret, std::size_t n, std::size_t threshold,
                                          std::uint64_t rng_seed)
    {
        auto limbs = detail::split_limbs(secret);
        std::vector<Share> shares(n);
        for (std::size_t j = 0; j < n; ++j)
        {
            shares[j].x = static_cast<std::uint32_t>(j + 1);
        }
        for (std::size_t l = 0; l < limb_count; ++l)
        {
            auto ys = share_secret(limbs[l], n, threshold, mix64(rng_seed ^ mix64(l + 1)));
            for (std::size_t j = 0; j < n; ++j)
            {
                shares[j].limbs[l] = ys[j];
            }
        }
        return shares;
    }

    inline Secret reconstruct_bytes(std::span<const Share> shares)
    {
        std::array<FieldElement, limb_count> limbs{};
        std::vector<std::pair<std::uint32_t, FieldElement>> pts(shares.size());
        for (std::size_t l = 0; l < limb_count; ++l)
        {
            for (std::size_t j = 0; j < shares.size(); ++j)
            {
                pts[j] = {shares[j].x, shares[j].limbs[l]};
            }
            limbs[l] = reconstruct(pts);
        }
        return detail::join_limbs(limbs);
    }

    struct BeaconTranscript
    {
        std::vector<crypto::PublicKey> participants;
        std::size_t threshold = 1;
        std::vector<Digest> commitments;
        // shares[i][j]: node j's share of secret i; empty when node j withheld.
        std::vector<std::vector<std::optional<Share>>> shares;
        std::vector<std::optional<Secret>> reveals;
        Digest output{};
    };

    namespace detail
    {
        inline std::optional<Secret> recover_from_transcript(const BeaconTranscript &t, std::size_t i)
        {
            std::vector<Share> avail;
            for (const auto &s : t.shares[i])
            {
                if (s)
                {
                    avail.push_back(*s);
                }
                if (avail.size() == t.threshold)
                {
                    break;
                }
            }
            if (avail.size() < t.threshold)
            {
                return std::nullopt;
            }
            try
            {
                return reconstruct_bytes(avail);
            }
            catch (const Error &)
            {
                return std::nullopt;
            }
        }
    } // namespace detail

    inline BeaconTranscript run_beacon(std::span<const crypto::PublicKey> nodes, std::size_t f,
                                       const std::set<std::size_t> &withholding, std::uint64_t rng_seed)
    {
        const std::size_t n = nodes.size();
        if (n == 0)
        {
            throw Error(ErrorKind::parameter, "beacon needs at least one participant");
        }
        const std::size_t threshold = f + 1;
        if (threshold > n)
        {
            throw Error(ErrorKind::parameter, "f must be smaller than the participant count");
        }
        for (auto w : withholding)
        {
            if (w >= n)
            {
                throw Error(ErrorKind::parameter, "withholding index out of range");
            }
        }

        BeaconTranscript t;
        t.participants.assign(nodes.begin(), nodes.end());
        t.threshold = threshold;
        t.commitments.resize(n);
        t.shares.assign(n, std::vector<std::optional<Share>>(n));
        t.reveals.resize(n);

        std::vector<Secret> secrets(n);
        for (std::size_t i = 0; i < n; ++i)
        {
            secrets[i] = crypto::Sha256()
                             .update("saber/beacon/secret")
                             .update_u64(rng_seed)
                             .update_u64(i)
                             .update(nodes[i].bytes)
                             .finish();
            t.commitments[i] = commit(secrets[i]);
            auto row = share_bytes(secrets[i], n, threshold, mix64(rng_seed + 0x5151 * (i + 1)));
            for (std::size_t j = 0; j < n; ++j)
            {
                if (!withholding.contains(j))
                {
                    t.shares[i][j] = row[j];
                }
            }
            if (!withholding.contains(i))
            {
                t.reveals[i] = secrets[i];
            }
        }

        Digest out{};
        for (std::size_t i = 0; i < n; ++i)
        {
            Secret s;
            if (t.reveals[i])
            {
                s = *t.reveals[i];
            }
            else
            {
                auto rec = detail::recover_from_transcript(t, i);
                if (!rec)
                {
                    throw Error(ErrorKind::reconstruction,
                                "not enough released shares to recover secret " + std::to_string(i));
                }
                if (commit(*rec) != t.commitments[i])
                {
                    throw Error(ErrorKind::reconstruction, "recovered secret does not match its commitment");
                }
                s = *rec;
            }
            for (std::size_t b = 0; b < s.size(); ++b)
            {
                out[b] ^= s[b];
            }
        }
        t.output = out;
        return t;
    }

    inline bool verify_transcript(const BeaconTranscript &t)
    {
        const std::size_t n = t.participants.size();
        if (n == 0 || t.commitments.size() != n || t.reveals.size() != n || t.shares.size() != n ||
            t.threshold < 1 || t.threshold > n)
        {
            return false;
        }
        Digest acc{};
        for (std::size_t i = 0; i < n; ++i)
        {
            if (t.shares[i].size() != n)
            {
                return false;
            }
            auto recovered = detail::recover_from_transcript(t, i);
            Secret s;
            if (t.reveals[i])
            {
                s = *t.reveals[i];
                // Published shares must open to the revealed secret.
                if (recovered && *recovered != s)
                {
                    return false;
                }
            }
            else if (recovered)
            {
                s = *recovered;
            }
            else
            {
                return false;
            }
            if (commit(s) != t.commitments[i])
            {
                return false;
            }
            for (std::size_t b = 0; b < s.size(); ++b)
            {
                acc[b] ^= s[b];
            }
        }
        return acc == t.output;
    }
} // namespace saber::beacon

#pragma once

#include <array>
#include <random>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace saber
{
    using Bytes = std::vector<std::uint8_t>;
    using ByteView = std::span<const std::uint8_t>;
    using Digest = std::array<std::uint8_t, 32>;

    using TxId = std::uint64_t;
    using AccountId = std::uint64_t;
    using ObjectId = std::uint64_t;
    using GroupIndex = std::uint32_t;
    using SequenceNumber = std::uint64_t;
    using Round = std::uint64_t;

    // Every failure raised by the library derives from saber::Error; the kind
    // lets callers branch without a cascade of catch clauses.
    enum class ErrorKind
    {
        parameter,
        membership,
        duplicate,
        shape,
        registration,
        reconstruction,
        unreachable_target,
        not_found,
        availability,
        block_rejected,
        dispute,
        scheduling,
        parse,
        config,
    };

    inline const char *to_string(ErrorKind k) noexcept
    {
        switch (k)
        {
        case ErrorKind::parameter: return "parameter";
        case ErrorKind::membership: return "membership";
        case ErrorKind::duplicate: return "duplicate";
        case ErrorKind::shape: return "shape";
        case ErrorKind::registration: return "registration";
        case ErrorKind::reconstruction: return "reconstruction";
        case ErrorKind::unreachable_target: return "unreachable-target";
        case ErrorKind::not_found: return "not-found";
        case ErrorKind::availability: return "availability";
        case ErrorKind::block_rejected: return "block-rejected";
        case ErrorKind::dispute: return "dispute";
        case ErrorKind::scheduling: return "scheduling";
        case ErrorKind::parse: return "parse";
        case ErrorKind::config: return "config";
        }
        return "unknown";
    }

    class Error : public std::runtime_error
    {
    public:
        Error(ErrorKind kind, const std::string &what)
            : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind)
        {
        }

        ErrorKind kind() const noexcept { return kind_; }

    private:
        ErrorKind kind_;
    };

    inline void append_u64_be(Bytes &out, std::uint64_t v)
    {
        for (int shift = 56; shift >= 0; shift -= 8)
        {
            out.push_back(static_cast<std::uint8_t>(v >> shift));
        }
    }

    inline void append_bytes(Bytes &out, ByteView v) { out.insert(out.end(), v.begin(), v.end()); }

    inline void append_str(Bytes &out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

    inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

    inline std::string to_hex(ByteView v)
    {
        static constexpr char digits[] = "0123456789abcdef";
        std::string s;
        s.reserve(v.size() * 2);
        for (auto b : v)
        {
            s.push_back(digits[b >> 4]);
            s.push_back(digits[b & 0x0f]);
        }
        return s;
    }

    // splitmix64: stream-independent mixing used to derive per-entity seeds.
    constexpr std::uint64_t mix64(std::uint64_t x) noexcept
    {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    // Deterministic generator with a portable output sequence. The standard
    // distributions differ between library vendors, so ranges are mapped here.
    class Rng
    {
    public:
        explicit Rng(std::uint64_t seed) noexcept : engine_(seed) {}

        std::uint64_t next() noexcept { return engine_(); }

        // Uniform in [0, bound) by rejection; bound must be non-zero.
        std::uint64_t below(std::uint64_t bound) noexcept
        {
            const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
            std::uint64_t v;
            do
            {
                v = next();
            } while (v >= limit);
            return v % bound;
        }

        double uniform01() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

        // Uniform in [lo, hi] for signed ranges.
        std::int64_t between(std::int64_t lo, std::int64_t hi) noexcept
        {
            return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
        }

    private:
        std::mt19937_64 engine_;
    };
} // namespace saber

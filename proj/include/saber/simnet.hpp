#pragma once

// Discrete-event core: virtual clock, ordered event queue, link latencies and
// the per-node fault schedule.

#include "saber/common.hpp"
#include "saber/crypto.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <map>
#include <queue>
#include <string>
#include <unordered_set>
#include <vector>

namespace saber::simnet
{
    using TimeUs = std::int64_t;

    inline TimeUs ms_to_us(double ms) { return static_cast<TimeUs>(std::llround(ms * 1000.0)); }

    struct Event
    {
        TimeUs time = 0;
        std::uint64_t tiebreak = 0;
        std::uint64_t target = 0;
        std::string kind;
        std::function<void()> action;
    };

    class EventQueue
    {
    public:
        TimeUs now() const { return now_; }
        bool empty() const { return heap_.size() == cancelled_.size(); }
        std::size_t size() const { return heap_.size() - cancelled_.size(); }

        std::uint64_t schedule(TimeUs time, std::uint64_t target, std::string kind, std::function<void()> action)
        {
            if (time < now_)
            {
                throw Error(ErrorKind::scheduling, "event '" + kind + "' at " + std::to_string(time) +
                                                       "us precedes current time " + std::to_string(now_) + "us");
            }
            const auto id = next_id_++;
            heap_.push(Event{time, id, target, std::move(kind), std::move(action)});
            return id;
        }

        void cancel(std::uint64_t id)
        {
            if (id < next_id_)
            {
                cancelled_.insert(id);
            }
        }

        // Removes and returns the earliest live event, advancing the clock to it.
        Event pop()
        {
            while (!heap_.empty())
            {
                Event e = heap_.top();
                heap_.pop();
                if (cancelled_.erase(e.tiebreak) > 0)
                {
                    continue;
                }
                now_ = e.time;
                return e;
            }
            throw Error(ErrorKind::scheduling, "pop from an empty event queue");
        }

        const Event *peek()
        {
            while (!heap_.empty() && cancelled_.contains(heap_.top().tiebreak))
            {
                cancelled_.erase(heap_.top().tiebreak);
                heap_.pop();
            }
            return heap_.empty() ? nullptr : &heap_.top();
        }

    private:
        struct Later
        {
            bool operator()(const Event &a, const Event &b) const
            {
                if (a.time != b.time)
                {
                    return a.time > b.time;
                }
                return a.tiebreak > b.tiebreak;
            }
        };

        std::priority_queue<Event, std::vector<Event>, Later> heap_;
        std::unordered_set<std::uint64_t> cancelled_;
        TimeUs now_ = 0;
        std::uint64_t next_id_ = 0;
    };

    class Simulator
    {
    public:
        EventQueue &queue() { return queue_; }
        TimeUs now() const { return queue_.now(); }
        std::uint64_t processed() const { return processed_; }

        std::uint64_t at(TimeUs time, std::uint64_t target, std::string kind, std::function<void()> action)
        {
            return queue_.schedule(time, target, std::move(kind), std::move(action));
        }

        std::uint64_t after(TimeUs delay, std::uint64_t target, std::string kind, std::function<void()> action)
        {
            return at(now() + delay, target, std::move(kind), std::move(action));
        }

        // Fires `action` at `time` unless `satisfied` already holds by then.
        std::uint64_t timeout(TimeUs time, std::uint64_t target, std::string kind, std::function<bool()> satisfied,
                              std::function<void()> action)
        {
            return at(time, target, std::move(kind), [satisfied = std::move(satisfied), action = std::move(action)] {
                if (!satisfied())
                {
                    action();
                }
            });
        }

        // Mixes an extra record into the trace, for outcomes events produce.
        void note(std::string_view record)
        {
            trace_.update_u64(record.size());
            trace_.update(record);
        }

        // Processes events until the queue drains or the next event lies past
        // `horizon`; returns the final virtual time.
        TimeUs run_until(TimeUs horizon = std::numeric_limits<TimeUs>::max())
        {
            while (true)
            {
                const Event *next = queue_.peek();
                if (next == nullptr || next->time > horizon)
                {
                    break;
                }
                Event e = queue_.pop();
                trace_.update_u64(static_cast<std::uint64_t>(e.time))
                    .update_u64(e.tiebreak)
                    .update_u64(e.target)
                    .update_u64(e.kind.size())
                    .update(e.kind);
                ++processed_;
                if (e.action)
                {
                    e.action();
                }
            }
            return queue_.now();
        }

        // Digest of everything processed so far; the running state is untouched.
        Digest trace_digest() const
        {
            auto copy = trace_;
            return copy.finish();
        }

    private:
        EventQueue queue_;
        crypto::Sha256 trace_;
        std::uint64_t processed_ = 0;
    };

    enum class LinkClass
    {
        client_cn,
        cn_en,
        intra_group,
        en_storage,
    };

    struct LatencyParams
    {
        double client_cn_ms = 50;
        double cn_en_ms = 50;
        double intra_group_ms = 50;
        double en_storage_ms = 50;
        double jitter_ms = 20;
        double delta_bound_ms = 200;

        double base(LinkClass c) const
        {
            switch (c)
            {
            case LinkClass::client_cn: return client_cn_ms;
            case LinkClass::cn_en: return cn_en_ms;
            case LinkClass::intra_group: return intra_group_ms;
            case LinkClass::en_storage: return en_storage_ms;
            }
            return 0;
        }

        void validate() const
        {
            for (auto c : {LinkClass::client_cn, LinkClass::cn_en, LinkClass::intra_group, LinkClass::en_storage})
            {
                if (base(c) < 0)
                {
                    throw Error(ErrorKind::config, "link latencies must be non-negative");
                }
            }
            if (jitter_ms < 0 || delta_bound_ms <= 0)
            {
                throw Error(ErrorKind::config, "jitter must be non-negative and the delivery bound positive");
            }
        }
    };

    // Seeded latencies, capped at the delivery bound, FIFO per directed link.
    class LatencyModel
    {
    public:
        LatencyModel(LatencyParams p, std::uint64_t seed) : params_(p), rng_(seed) { params_.validate(); }

        const LatencyParams &params() const { return params_; }

        TimeUs delta_us() const { return ms_to_us(params_.delta_bound_ms); }

        TimeUs sample(LinkClass c)
        {
            const double base = params_.base(c);
            const double j = params_.jitter_ms;
            double ms = j > 0 ? base - j + 2.0 * j * rng_.uniform01() : base;
            ms = std::clamp(ms, 0.0, params_.delta_bound_ms);
            return ms_to_us(ms);
        }

        // Arrival time of a message sent now on link (from, to).
        TimeUs deliver(TimeUs now, LinkClass c, std::uint64_t from, std::uint64_t to)
        {
            auto &last = last_[{from, to}];
            TimeUs t = std::max(now + sample(c), last);
            last = t;
            return t;
        }

    private:
        LatencyParams params_;
        Rng rng_;
        std::map<std::pair<std::uint64_t, std::uint64_t>, TimeUs> last_;
    };

    enum class FaultMode
    {
        honest,
        crash,
        byzantine,
    };

    inline const char *to_string(FaultMode m)
    {
        switch (m)
        {
        case FaultMode::honest: return "honest";
        case FaultMode::crash: return "crash";
        case FaultMode::byzantine: return "byzantine";
        }
        return "unknown";
    }

    inline FaultMode parse_fault_mode(std::string_view s)
    {
        if (s == "crash" || s == "crashed")
        {
            return FaultMode::crash;
        }
        if (s == "byzantine")
        {
            return FaultMode::byzantine;
        }
        if (s == "honest")
        {
            return FaultMode::honest;
        }
        throw Error(ErrorKind::config, "unknown fault mode '" + std::string(s) + "'");
    }

    struct NodeId
    {
        std::uint32_t group = 0;
        std::uint32_t rank = 0;

        auto operator<=>(const NodeId &) const = default;
    };

    class FaultRegistry
    {
    public:
        FaultRegistry() = default;

        FaultRegistry(std::size_t groups, std::size_t group_size)
        {
            for (std::uint32_t g = 0; g < groups; ++g)
            {
                for (std::uint32_t r = 0; r < group_size; ++r)
                {
                    schedule_[NodeId{g, r}];
                }
            }
        }

        bool exists(NodeId n) const { return schedule_.contains(n); }

        FaultMode mode_at(NodeId n, TimeUs t) const
        {
            auto it = schedule_.find(n);
            if (it == schedule_.end())
            {
                throw Error(ErrorKind::not_found, "no such node");
            }
            FaultMode m = FaultMode::honest;
            for (const auto &[at, mode] : it->second)
            {
                if (at <= t)
                {
                    m = mode;
                }
            }
            return m;
        }

        // Most severe mode the node ever takes, for budget accounting.
        FaultMode worst(NodeId n) const
        {
            FaultMode m = FaultMode::honest;
            for (const auto &[_, mode] : schedule_.at(n))
            {
                if (mode != FaultMode::honest)
                {
                    m = mode;
                }
            }
            return m;
        }

        std::size_t faulty_in_group(std::uint32_t g) const
        {
            std::size_t c = 0;
            for (const auto &[n, _] : schedule_)
            {
                if (n.group == g && worst(n) != FaultMode::honest)
                {
                    ++c;
                }
            }
            return c;
        }

        std::size_t faulty_total() const
        {
            std::size_t c = 0;
            for (const auto &[n, _] : schedule_)
            {
                c += worst(n) != FaultMode::honest ? 1 : 0;
            }
            return c;
        }

        std::size_t node_count() const { return schedule_.size(); }

        friend void inject_fault(FaultRegistry &reg, NodeId n, FaultMode mode, TimeUs at);

    private:
        std::map<NodeId, std::vector<std::pair<TimeUs, FaultMode>>> schedule_;
    };

    inline void inject_fault(FaultRegistry &reg, NodeId n, FaultMode mode, TimeUs at)
    {
        auto it = reg.schedule_.find(n);
        if (it == reg.schedule_.end())
        {
            throw Error(ErrorKind::not_found, "fault target group " + std::to_string(n.group) + " rank " +
                                                  std::to_string(n.rank) + " does not exist");
        }
        auto &v = it->second;
        auto pos = std::upper_bound(v.begin(), v.end(), at,
                                    [](TimeUs t, const std::pair<TimeUs, FaultMode> &e) { return t < e.first; });
        v.insert(pos, {at, mode});
    }
} // namespace saber::simnet

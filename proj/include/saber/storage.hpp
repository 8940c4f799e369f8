#pragma once

#include "saber/common.hpp"
#include "saber/crypto.hpp"
#include "saber/membership.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace saber::storage
{
    struct StateObject
    {
        ObjectId id = 0;
        std::uint64_t version = 0;
        Bytes value;
        Digest digest{};

        bool operator==(const StateObject &) const = default;
    };

    inline StateObject make_object(ObjectId id, std::uint64_t version, Bytes value)
    {
        Digest d = crypto::hash(value);
        return StateObject{id, version, std::move(value), d};
    }

    enum class NodeMode
    {
        honest,
        crashed,
        // Answers reads with fabricated state; all such nodes fabricate the same
        // bytes, which is the worst case for a quorum read.
        garbage,
    };

    struct StateNode
    {
        crypto::PublicKey key;
        NodeMode mode = NodeMode::honest;
        std::map<ObjectId, StateObject> objects;
    };

    struct StateShard
    {
        std::size_t index = 0;
        std::vector<StateNode> nodes;

        // f'' for a shard of 2f''+1 nodes.
        std::size_t fault_bound() const { return nodes.empty() ? 0 : (nodes.size() - 1) / 2; }
    };

    struct ReadResult
    {
        Bytes value;
        std::uint64_t version = 0;
        std::size_t attestations = 0;
    };

    namespace detail
    {
        inline std::optional<StateObject> respond(const StateNode &node, ObjectId id)
        {
            if (node.mode == NodeMode::garbage)
            {
                return make_object(id, 0xdeadULL, to_bytes("garbage"));
            }
            auto it = node.objects.find(id);
            if (it == node.objects.end())
            {
                return StateObject{id, 0, {}, {}};
            }
            return it->second;
        }
    } // namespace detail

    // Returns the state attested by at least f''+1 identical replies.
    inline ReadResult read_state(const StateShard &shard, ObjectId id)
    {
        std::vector<std::pair<StateObject, std::size_t>> tallies;
        for (const auto &node : shard.nodes)
        {
            if (node.mode == NodeMode::crashed)
            {
                continue;
            }
            auto r = detail::respond(node, id);
            auto it = std::find_if(tallies.begin(), tallies.end(), [&](const auto &t) { return t.first == *r; });
            if (it == tallies.end())
            {
                tallies.emplace_back(*r, 1);
            }
            else
            {
                ++it->second;
            }
        }
        const std::size_t quorum = shard.fault_bound() + 1;
        std::sort(tallies.begin(), tallies.end(), [](const auto &a, const auto &b) { return a.second > b.second; });
        if (tallies.empty() || tallies.front().second < quorum ||
            (tallies.size() > 1 && tallies[1].second == tallies.front().second))
        {
            throw Error(ErrorKind::availability, "no " + std::to_string(quorum) + "-consistent reply set for object " +
                                                     std::to_string(id));
        }
        const auto &winner = tallies.front().first;
        if (winner.version == 0 && winner.value.empty())
        {
            throw Error(ErrorKind::not_found, "object " + std::to_string(id) + " does not exist");
        }
        return ReadResult{winner.value, winner.version, tallies.front().second};
    }

    inline Bytes write_message(ObjectId id, std::uint64_t version, const Digest &value_digest)
    {
        Bytes msg;
        append_str(msg, "saber/write");
        append_u64_be(msg, id);
        append_u64_be(msg, version);
        append_bytes(msg, value_digest);
        return msg;
    }

    enum class WriteStatus
    {
        accepted,
        rejected_sequence,
        rejected_auth,
    };

    struct WriteAuthority
    {
        std::vector<crypto::PublicKey> signers;
        std::size_t threshold = 1;
    };

    inline WriteStatus write_state(StateShard &shard, ObjectId id, const Bytes &value, std::uint64_t version,
                                   const crypto::MultiSignature &msig, const WriteAuthority &authority,
                                   const crypto::SignatureScheme &scheme)
    {
        auto obj = make_object(id, version, value);
        if (!crypto::verify_threshold(scheme, authority.signers, msig, write_message(id, version, obj.digest),
                                      authority.threshold))
        {
            return WriteStatus::rejected_auth;
        }
        // Honest members hold identical maps, so any one of them decides sequencing.
        const StateNode *reference = nullptr;
        for (const auto &n : shard.nodes)
        {
            if (n.mode == NodeMode::honest)
            {
                reference = &n;
                break;
            }
        }
        std::uint64_t stored = 0;
        if (reference != nullptr)
        {
            auto it = reference->objects.find(id);
            stored = it == reference->objects.end() ? 0 : it->second.version;
        }
        if (version != stored + 1)
        {
            return WriteStatus::rejected_sequence;
        }
        for (auto &n : shard.nodes)
        {
            if (n.mode == NodeMode::honest)
            {
                n.objects[id] = obj;
            }
        }
        return WriteStatus::accepted;
    }

    class ShardedStore
    {
    public:
        ShardedStore() = default;

        ShardedStore(std::size_t shard_count, std::size_t shard_size, crypto::SignatureScheme &scheme,
                     std::uint64_t key_seed)
        {
            if (shard_count == 0 || shard_size == 0)
            {
                throw Error(ErrorKind::parameter, "storage needs at least one shard of one node");
            }
            shards_.resize(shard_count);
            for (std::size_t s = 0; s < shard_count; ++s)
            {
                shards_[s].index = s;
                for (std::size_t i = 0; i < shard_size; ++i)
                {
                    auto kp = scheme.key_gen(mix64(key_seed ^ mix64(s * 1000003 + i)));
                    shards_[s].nodes.push_back(StateNode{kp.public_key, NodeMode::honest, {}});
                }
            }
        }

        std::size_t shard_index(ObjectId id) const
        {
            Bytes b;
            append_u64_be(b, id);
            return membership::digest_mod(crypto::hash(b), shards_.size());
        }

        StateShard &shard_for(ObjectId id) { return shards_.at(shard_index(id)); }
        const StateShard &shard_for(ObjectId id) const { return shards_.at(shard_index(id)); }

        std::vector<StateShard> &shards() { return shards_; }
        const std::vector<StateShard> &shards() const { return shards_; }

        // Genesis placement, bypassing write authorisation.
        void seed(ObjectId id, const Bytes &value)
        {
            auto obj = make_object(id, 1, value);
            for (auto &n : shard_for(id).nodes)
            {
                n.objects[id] = obj;
            }
        }

        ReadResult read(ObjectId id) const { return read_state(shard_for(id), id); }

    private:
        std::vector<StateShard> shards_;
    };

    struct CacheDirectory
    {
        std::map<ObjectId, GroupIndex> cached_by;

        std::optional<GroupIndex> lookup(ObjectId id) const
        {
            auto it = cached_by.find(id);
            if (it == cached_by.end())
            {
                return std::nullopt;
            }
            return it->second;
        }
    };

    struct CacheRoute
    {
        enum class Kind
        {
            none,
            pinned,
            writeback_required,
        };

        Kind kind = Kind::none;
        GroupIndex group = 0;
        std::set<GroupIndex> groups;
    };

    inline CacheRoute cache_route(const CacheDirectory &directory, std::span<const ObjectId> touched)
    {
        std::set<GroupIndex> holders;
        for (auto id : touched)
        {
            if (auto g = directory.lookup(id))
            {
                holders.insert(*g);
            }
        }
        CacheRoute route;
        if (holders.empty())
        {
            return route;
        }
        if (holders.size() == 1)
        {
            route.kind = CacheRoute::Kind::pinned;
            route.group = *holders.begin();
            route.groups = holders;
            return route;
        }
        route.kind = CacheRoute::Kind::writeback_required;
        route.groups = std::move(holders);
        return route;
    }

    struct PendingWrite
    {
        std::uint64_t version = 0;
        Bytes value;
        crypto::MultiSignature msig;
        // Roster that produced the write; membership may have rotated since.
        WriteAuthority authority;
    };

    // Updates a group has produced but not yet flushed, oldest first per object.
    struct GroupCache
    {
        std::map<ObjectId, std::vector<PendingWrite>> writes;

        void record(ObjectId id, PendingWrite w) { writes[id].push_back(std::move(w)); }

        std::optional<StateObject> latest(ObjectId id) const
        {
            auto it = writes.find(id);
            if (it == writes.end() || it->second.empty())
            {
                return std::nullopt;
            }
            const auto &w = it->second.back();
            return make_object(id, w.version, w.value);
        }

        bool empty() const { return writes.empty(); }
    };

    struct WriteBackReport
    {
        std::size_t applied = 0;
        std::size_t rejected = 0;
    };

    inline WriteBackReport write_back(GroupIndex group, GroupCache &cache, CacheDirectory &directory,
                                      ShardedStore &store, const crypto::SignatureScheme &scheme)
    {
        WriteBackReport report;
        for (auto &[id, pending] : cache.writes)
        {
            std::sort(pending.begin(), pending.end(),
                      [](const PendingWrite &a, const PendingWrite &b) { return a.version < b.version; });
            for (const auto &w : pending)
            {
                auto status = write_state(store.shard_for(id), id, w.value, w.version, w.msig, w.authority, scheme);
                if (status == WriteStatus::accepted)
                {
                    ++report.applied;
                }
                else
                {
                    ++report.rejected;
                }
            }
            auto it = directory.cached_by.find(id);
            if (it != directory.cached_by.end() && it->second == group)
            {
                directory.cached_by.erase(it);
            }
        }
        cache.writes.clear();
        return report;
    }
} // namespace saber::storage

#include "saber/storage.hpp"

#include <gtest/gtest.h>

using namespace saber;
using namespace saber::storage;

namespace
{
    struct Writers
    {
        crypto::DigestScheme scheme;
        std::vector<crypto::KeyPair> keys;
        WriteAuthority authority;

        explicit Writers(std::size_t n)
        {
            for (std::size_t i = 0; i < n; ++i)
            {
                keys.push_back(scheme.key_gen(700 + i));
            }
            authority.signers = crypto::public_keys(keys);
            authority.threshold = n / 2 + 1;
        }

        crypto::MultiSignature sign(ObjectId id, std::uint64_t version, const Bytes &value, std::size_t count)
        {
            auto msg = write_message(id, version, crypto::hash(value));
            std::vector<crypto::Signature> sigs;
            for (std::size_t i = 0; i < count; ++i)
            {
                sigs.push_back(crypto::sign(scheme, keys[i], msg));
            }
            return crypto::aggregate(sigs, authority.signers);
        }
    };

    ErrorKind kind_of(const std::function<void()> &f)
    {
        try
        {
            f();
        }
        catch (const Error &e)
        {
            return e.kind();
        }
        ADD_FAILURE() << "no error thrown";
        return ErrorKind::parameter;
    }
} // namespace

TEST(ReadState, QuorumSurvivesFaultBound)
{
    Writers w(1);
    ShardedStore store(1, 5, w.scheme, 1);
    store.seed(9, to_bytes("v"));
    auto &nodes = store.shards()[0].nodes;
    nodes[0].mode = NodeMode::garbage;
    nodes[1].mode = NodeMode::crashed;
    auto r = store.read(9);
    EXPECT_EQ(r.value, to_bytes("v"));
    EXPECT_EQ(r.version, 1U);
    EXPECT_EQ(r.attestations, 3U);
}

TEST(ReadState, FailsBeyondFaultBound)
{
    Writers w(1);
    ShardedStore store(1, 3, w.scheme, 1);
    store.seed(9, to_bytes("v"));
    auto &nodes = store.shards()[0].nodes;
    nodes[0].mode = NodeMode::garbage;
    nodes[1].mode = NodeMode::crashed;
    EXPECT_EQ(kind_of([&] { store.read(9); }), ErrorKind::availability);
    nodes[0].mode = NodeMode::crashed;
    EXPECT_EQ(kind_of([&] { store.read(9); }), ErrorKind::availability);
}

TEST(ReadState, MissingObject)
{
    Writers w(1);
    ShardedStore store(2, 3, w.scheme, 1);
    EXPECT_EQ(kind_of([&] { store.read(12345); }), ErrorKind::not_found);
}

TEST(WriteState, VersionAndAuthorisation)
{
    Writers w(3);
    ShardedStore store(1, 3, w.scheme, 1);
    store.seed(4, to_bytes("a"));
    auto &shard = store.shard_for(4);
    const auto v2 = to_bytes("b");
    EXPECT_EQ(write_state(shard, 4, v2, 2, w.sign(4, 2, v2, 1), w.authority, w.scheme), WriteStatus::rejected_auth);
    EXPECT_EQ(write_state(shard, 4, v2, 3, w.sign(4, 3, v2, 2), w.authority, w.scheme),
              WriteStatus::rejected_sequence);
    // Signatures bind the version, so a relabelled write is unauthorised.
    EXPECT_EQ(write_state(shard, 4, v2, 3, w.sign(4, 2, v2, 2), w.authority, w.scheme), WriteStatus::rejected_auth);
    EXPECT_EQ(write_state(shard, 4, v2, 2, w.sign(4, 2, v2, 2), w.authority, w.scheme), WriteStatus::accepted);
    EXPECT_EQ(write_state(shard, 4, v2, 2, w.sign(4, 2, v2, 2), w.authority, w.scheme),
              WriteStatus::rejected_sequence);
    auto r = store.read(4);
    EXPECT_EQ(r.version, 2U);
    EXPECT_EQ(r.value, v2);
}

TEST(WriteState, FirstWriteCreatesVersionOne)
{
    Writers w(1);
    ShardedStore store(1, 3, w.scheme, 1);
    const auto v = to_bytes("new");
    EXPECT_EQ(write_state(store.shard_for(8), 8, v, 1, w.sign(8, 1, v, 1), w.authority, w.scheme),
              WriteStatus::accepted);
    EXPECT_EQ(store.read(8).version, 1U);
}

TEST(ShardedStore, PlacementIsStableAndSpread)
{
    Writers w(1);
    ShardedStore a(4, 3, w.scheme, 2);
    ShardedStore b(4, 3, w.scheme, 3);
    std::vector<std::size_t> counts(4, 0);
    for (ObjectId id = 0; id < 400; ++id)
    {
        EXPECT_EQ(a.shard_index(id), b.shard_index(id));
        ++counts[a.shard_index(id)];
    }
    for (auto c : counts)
    {
        EXPECT_GT(c, 60U);
    }
    EXPECT_EQ(kind_of([&] { ShardedStore(0, 3, w.scheme, 1); }), ErrorKind::parameter);
}

TEST(CacheRoute, Kinds)
{
    CacheDirectory dir;
    dir.cached_by[1] = 0;
    dir.cached_by[2] = 0;
    dir.cached_by[3] = 1;
    std::vector<ObjectId> none{7, 8};
    std::vector<ObjectId> pinned{1, 2, 7};
    std::vector<ObjectId> split{1, 3};
    EXPECT_EQ(cache_route(dir, none).kind, CacheRoute::Kind::none);
    auto p = cache_route(dir, pinned);
    EXPECT_EQ(p.kind, CacheRoute::Kind::pinned);
    EXPECT_EQ(p.group, 0U);
    auto s = cache_route(dir, split);
    EXPECT_EQ(s.kind, CacheRoute::Kind::writeback_required);
    EXPECT_EQ(s.groups, (std::set<GroupIndex>{0, 1}));
}

TEST(WriteBack, FlushesInVersionOrder)
{
    Writers w(3);
    ShardedStore store(2, 3, w.scheme, 1);
    store.seed(5, to_bytes("g"));
    CacheDirectory dir;
    dir.cached_by[5] = 2;
    GroupCache cache;
    for (std::uint64_t v : {4U, 2U, 3U})
    {
        auto value = to_bytes("v" + std::to_string(v));
        cache.record(5, PendingWrite{v, value, w.sign(5, v, value, 2), w.authority});
    }
    EXPECT_EQ(cache.latest(5)->version, 3U);
    auto report = write_back(2, cache, dir, store, w.scheme);
    EXPECT_EQ(report.applied, 3U);
    EXPECT_EQ(report.rejected, 0U);
    EXPECT_TRUE(cache.empty());
    EXPECT_FALSE(dir.lookup(5).has_value());
    auto r = store.read(5);
    EXPECT_EQ(r.version, 4U);
    EXPECT_EQ(r.value, to_bytes("v4"));
}

TEST(WriteBack, UsesRecordedAuthorityAndKeepsOtherGroupsEntries)
{
    Writers old_roster(3);
    auto &scheme = old_roster.scheme;
    ShardedStore store(1, 3, scheme, 1);
    store.seed(5, to_bytes("g"));
    CacheDirectory dir;
    dir.cached_by[5] = 1;
    GroupCache cache;
    auto value = to_bytes("x");
    cache.record(5, PendingWrite{2, value, old_roster.sign(5, 2, value, 2), old_roster.authority});
    auto report = write_back(0, cache, dir, store, scheme);
    EXPECT_EQ(report.applied, 1U);
    EXPECT_EQ(dir.lookup(5), std::optional<GroupIndex>{1});

    GroupCache forged;
    auto bad = to_bytes("y");
    forged.record(5, PendingWrite{3, bad, old_roster.sign(5, 3, bad, 1), old_roster.authority});
    EXPECT_EQ(write_back(1, forged, dir, store, scheme).rejected, 1U);
    EXPECT_EQ(store.read(5).value, value);
}

#include "saber/ethembed.hpp"

#include <gtest/gtest.h>

using namespace saber;
using namespace saber::ethembed;

namespace
{
    struct Embed
    {
        crypto::DigestScheme scheme;
        ExecutionManagerState ems;
        KittiesState ks;
        Keyring keys;
        beacon::BeaconTranscript transcript;

        explicit Embed(std::size_t groups, std::size_t ens = 24, std::uint64_t seed = 3) : ems(groups)
        {
            for (std::uint64_t i = 0; i < ens; ++i)
            {
                auto kp = scheme.key_gen(seed * 100 + i);
                keys[kp.public_key] = kp;
                ems = em_register(std::move(ems), kp.public_key, 10 + i);
            }
            std::vector<crypto::PublicKey> cns;
            for (std::uint64_t i = 0; i < 4; ++i)
            {
                cns.push_back(scheme.key_gen(seed * 100 + 50 + i).public_key);
            }
            transcript = beacon::run_beacon(cns, 1, {}, seed);
            // Matron 1 is siring with sire 0; kitty 2 is not pregnant; kitty 3 is due later.
            ks.kitties = {Kitty{crypto::hash("sire"), std::nullopt, 0}, Kitty{crypto::hash("matron"), 0, 0},
                          Kitty{crypto::hash("idle"), std::nullopt, 0}, Kitty{crypto::hash("late"), 0, 50}};
        }

        void shuffle() { ASSERT_EQ(em_shuffle(ems, transcript.output, transcript), ShuffleStatus::applied); }
    };
} // namespace

TEST(EmShuffle, AcceptsOnlyMatchingVerifiedTranscript)
{
    Embed e(3);
    auto other = e.transcript.output;
    other[0] ^= 1;
    EXPECT_EQ(em_shuffle(e.ems, other, e.transcript), ShuffleStatus::rejected);
    auto forged = e.transcript;
    forged.output = other;
    EXPECT_EQ(em_shuffle(e.ems, other, forged), ShuffleStatus::rejected);
    EXPECT_TRUE(e.ems.groups[0].empty());
    e.shuffle();
    std::size_t total = 0;
    for (const auto &g : e.ems.groups)
    {
        total += g.size();
    }
    EXPECT_EQ(total, 24U);
}

TEST(GiveBirthLock, RotatesGroupsAndCachesLockedMatron)
{
    Embed e(3);
    e.shuffle();
    e.ks.kitties.push_back(Kitty{crypto::hash("m2"), 0, 0});
    e.ks.kitties.push_back(Kitty{crypto::hash("m3"), 0, 0});
    EXPECT_EQ(give_birth_lock(e.ks, e.ems, {1, 1}, 0), LockStatus::locked);
    EXPECT_EQ(give_birth_lock(e.ks, e.ems, {2, 4}, 0), LockStatus::locked);
    EXPECT_EQ(give_birth_lock(e.ks, e.ems, {3, 5}, 0), LockStatus::locked);
    EXPECT_EQ(e.ks.lock_of(1)->group_id, 0U);
    EXPECT_EQ(e.ks.lock_of(4)->group_id, 1U);
    EXPECT_EQ(e.ks.lock_of(5)->group_id, 2U);
    EXPECT_EQ(e.ems.sid, 0U);
    EXPECT_EQ(give_birth_lock(e.ks, e.ems, {4, 1}, 0), LockStatus::cached);
    ASSERT_EQ(e.ks.cached.size(), 1U);
    EXPECT_EQ(e.ks.cached.front().nonce, 4U);
    EXPECT_EQ(e.ems.tasks[0].size(), 1U);
}

TEST(GiveBirthLock, RejectsInvalidMatrons)
{
    Embed e(2);
    e.shuffle();
    EXPECT_EQ(give_birth_lock(e.ks, e.ems, {1, 2}, 0), LockStatus::rejected);
    EXPECT_EQ(give_birth_lock(e.ks, e.ems, {2, 3}, 49), LockStatus::rejected);
    EXPECT_EQ(give_birth_lock(e.ks, e.ems, {3, 3}, 50), LockStatus::locked);
    EXPECT_EQ(give_birth_lock(e.ks, e.ems, {4, 99}, 0), LockStatus::rejected);
    EXPECT_EQ(e.ems.sid, 1U);
}

TEST(GiveBirthUnlock, GuardAndAuthorisation)
{
    Embed e(2);
    e.shuffle();
    EXPECT_EQ(give_birth_unlock(e.ks, e.ems, 1, {}, {}, 0, e.scheme), UnlockStatus::ignored);
    GiveBirthRequest req{7, 1};
    ASSERT_EQ(give_birth_lock(e.ks, e.ems, req, 100), LockStatus::locked);
    auto [child, msig] = group_sign(e.ks, e.ems, *e.ks.lock_of(1), e.keys, e.scheme);
    EXPECT_EQ(give_birth_unlock(e.ks, e.ems, 1, child, msig, 112, e.scheme), UnlockStatus::rejected_confirmations);

    auto wrong_child = child;
    wrong_child[0] ^= 1;
    EXPECT_EQ(give_birth_unlock(e.ks, e.ems, 1, wrong_child, msig, 113, e.scheme), UnlockStatus::rejected_auth);

    // A minority of the group is not enough.
    const auto &signers = e.ems.groups[0];
    ASSERT_GE(signers.size(), 3U);
    std::vector<crypto::Signature> few;
    for (std::size_t i = 0; i < signers.size() / 2; ++i)
    {
        few.push_back(crypto::sign(e.scheme, e.keys.at(signers[i]), unlock_message(child, req)));
    }
    EXPECT_EQ(give_birth_unlock(e.ks, e.ems, 1, child, crypto::aggregate(few, signers), 113, e.scheme),
              UnlockStatus::rejected_auth);

    EXPECT_EQ(give_birth_unlock(e.ks, e.ems, 1, child, msig, 113, e.scheme), UnlockStatus::applied);
    EXPECT_EQ(e.ks.kitties.back().genes, execution::mix_genes(crypto::hash("matron"), crypto::hash("sire"), 7));
    EXPECT_TRUE(e.ks.locks.empty());
    EXPECT_TRUE(e.ems.tasks[0].empty());
    EXPECT_EQ(give_birth_unlock(e.ks, e.ems, 1, child, msig, 114, e.scheme), UnlockStatus::ignored);
}

TEST(GiveBirthUnlock, WrongGroupSignaturesRejected)
{
    Embed e(2);
    e.shuffle();
    give_birth_lock(e.ks, e.ems, {7, 1}, 0);
    auto lock = *e.ks.lock_of(1);
    lock.group_id = 1;
    auto [child, msig] = group_sign(e.ks, e.ems, lock, e.keys, e.scheme);
    EXPECT_EQ(give_birth_unlock(e.ks, e.ems, 1, child, msig, 20, e.scheme), UnlockStatus::rejected_auth);
}

TEST(Pipeline, TenRequestsMatchSequentialReference)
{
    Embed e(3);
    e.shuffle();
    std::vector<TimedRequest> reqs;
    for (std::uint64_t i = 0; i < 10; ++i)
    {
        // Mix of the pregnant matron, a non-pregnant kitty and an unknown id.
        const std::uint64_t matron = std::array<std::uint64_t, 4>{1, 1, 2, 9}[i % 4];
        reqs.push_back({{100 + i, matron}, i * 3});
    }
    EXPECT_TRUE(equivalence_check(e.ks, reqs, e.ems, e.keys, e.scheme));

    auto ks = e.ks;
    auto ems = e.ems;
    auto rep = run_pipeline(ks, ems, reqs, e.keys, e.scheme);
    EXPECT_EQ(rep.applied, 6U);
    EXPECT_EQ(rep.rejected, 4U);
    EXPECT_EQ(rep.stuck_locks, 0U);
    EXPECT_EQ(ks.kitties.size(), 4U + 6U);
}

TEST(Pipeline, SameMatronTwiceIsCachedThenServed)
{
    Embed e(2);
    e.shuffle();
    std::vector<TimedRequest> reqs{{{1, 1}, 0}, {{2, 1}, 0}};
    auto ks = e.ks;
    auto ems = e.ems;
    auto rep = run_pipeline(ks, ems, reqs, e.keys, e.scheme);
    EXPECT_EQ(rep.applied, 2U);
    EXPECT_EQ(rep.cached_events, 13U);
    EXPECT_EQ(ks.kitties.size(), 6U);
    EXPECT_EQ(ks.kitties[4].genes, execution::mix_genes(crypto::hash("matron"), crypto::hash("sire"), 1));
    EXPECT_EQ(ks.kitties[5].genes, execution::mix_genes(crypto::hash("matron"), crypto::hash("sire"), 2));
    EXPECT_TRUE(equivalence_check(e.ks, reqs, e.ems, e.keys, e.scheme));
}

TEST(Pipeline, EmptyGroupLeavesStuckLockInsteadOfLooping)
{
    Embed e(2);
    e.shuffle();
    e.ems.groups[1].clear();
    std::vector<TimedRequest> reqs{{{1, 1}, 0}, {{2, 3}, 60}};
    auto rep = run_pipeline(e.ks, e.ems, reqs, e.keys, e.scheme);
    EXPECT_EQ(rep.applied, 1U);
    EXPECT_EQ(rep.stuck_locks, 1U);
    EXPECT_NE(e.ks.lock_of(3), nullptr);
}

TEST(Pipeline, RandomSequencesMatchReference)
{
    Rng rng(11);
    for (int s = 0; s < 60; ++s)
    {
        Embed e(1 + rng.below(4), 24, 1 + s % 5);
        e.shuffle();
        bool empty = false;
        for (const auto &g : e.ems.groups)
        {
            empty = empty || g.empty();
        }
        if (empty)
        {
            continue;
        }
        std::vector<TimedRequest> reqs;
        const auto n = 1 + rng.below(15);
        for (std::uint64_t i = 0; i < n; ++i)
        {
            reqs.push_back({{1000 + i, rng.below(5)}, rng.below(30)});
        }
        EXPECT_TRUE(equivalence_check(e.ks, reqs, e.ems, e.keys, e.scheme)) << "sequence " << s;
    }
}

#include "saber/beacon.hpp"

#include <gtest/gtest.h>

using namespace saber;
using namespace saber::beacon;

namespace
{
    std::vector<crypto::PublicKey> participants(std::size_t n)
    {
        crypto::DigestScheme s;
        std::vector<crypto::PublicKey> out;
        for (std::size_t i = 0; i < n; ++i)
        {
            out.push_back(s.key_gen(300 + i).public_key);
        }
        return out;
    }

    Secret secret_of(std::string_view tag) { return crypto::hash(tag); }
} // namespace

TEST(Commit, DeterministicAndBinding)
{
    auto s1 = secret_of("a");
    auto s2 = secret_of("b");
    EXPECT_EQ(commit(s1), commit(s1));
    EXPECT_NE(commit(s1), commit(s2));
    EXPECT_EQ(crypto::hash(s1), commit(s1));
}

TEST(ShareSecret, SingleShareIsTheSecret)
{
    auto shares = share_secret(1234, 1, 1, 9);
    ASSERT_EQ(shares.size(), 1U);
    EXPECT_EQ(shares[0], 1234U);
    std::vector<std::pair<std::uint32_t, FieldElement>> pts{{1, shares[0]}};
    EXPECT_EQ(reconstruct(pts), 1234U);
}

TEST(ShareSecret, AnyTwoOfFourReconstructSeven)
{
    auto shares = share_secret(7, 4, 2, 11);
    for (std::uint32_t i = 0; i < 4; ++i)
    {
        for (std::uint32_t j = i + 1; j < 4; ++j)
        {
            std::vector<std::pair<std::uint32_t, FieldElement>> pts{{i + 1, shares[i]}, {j + 1, shares[j]}};
            EXPECT_EQ(reconstruct(pts), 7U) << i << "," << j;
        }
    }
}

TEST(ShareSecret, ThresholdAboveCountRejected)
{
    try
    {
        share_secret(1, 3, 4, 0);
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::parameter);
    }
}

TEST(ShareSecret, CorruptedShareGivesWrongValue)
{
    Rng rng(77);
    int wrong = 0;
    for (int trial = 0; trial < 500; ++trial)
    {
        const auto secret = static_cast<FieldElement>(rng.below(field_prime));
        auto shares = share_secret(secret, 5, 3, rng.next());
        std::vector<std::pair<std::uint32_t, FieldElement>> pts{
            {1, shares[0]}, {2, shares[1]}, {3, (shares[2] + 1 + static_cast<FieldElement>(rng.below(field_prime - 1))) % field_prime}};
        wrong += reconstruct(pts) != secret ? 1 : 0;
    }
    EXPECT_EQ(wrong, 500);
}

TEST(ShareSecret, BelowThresholdIsConsistentWithEverySecret)
{
    // With threshold-1 known shares, each candidate secret is matched by some
    // completion, so the known shares reveal nothing.
    auto shares = share_secret(4242, 4, 3, 5);
    for (FieldElement candidate : {0U, 1U, 4242U, 65000U})
    {
        std::vector<std::pair<std::uint32_t, FieldElement>> pts{{0, candidate}, {1, shares[0]}, {2, shares[1]}};
        // The unique degree-2 polynomial through these points yields a valid
        // third share; reconstructing from shares 1, 2 and it returns the candidate.
        FieldElement y3 = 0;
        for (std::size_t i = 0; i < pts.size(); ++i)
        {
            std::uint64_t num = 1;
            std::uint64_t den = 1;
            for (std::size_t j = 0; j < pts.size(); ++j)
            {
                if (i == j)
                {
                    continue;
                }
                num = num * ((3 + field_prime - pts[j].first) % field_prime) % field_prime;
                den = den * ((pts[i].first + field_prime - pts[j].first) % field_prime) % field_prime;
            }
            std::uint64_t inv = 1;
            std::uint64_t b = den;
            for (std::uint32_t e = field_prime - 2; e > 0; e >>= 1U, b = b * b % field_prime)
            {
                if (e & 1U)
                {
                    inv = inv * b % field_prime;
                }
            }
            y3 = static_cast<FieldElement>((y3 + pts[i].second * num % field_prime * inv) % field_prime);
        }
        std::vector<std::pair<std::uint32_t, FieldElement>> full{{1, shares[0]}, {2, shares[1]}, {3, y3}};
        EXPECT_EQ(reconstruct(full), candidate);
    }
}

TEST(ShareBytes, RoundTrip)
{
    auto s = secret_of("bytes");
    auto shares = share_bytes(s, 5, 3, 99);
    std::vector<Share> pick{shares[4], shares[0], shares[2]};
    EXPECT_EQ(reconstruct_bytes(pick), s);
}

TEST(RunBeacon, SingleParticipantOutputIsItsSecret)
{
    auto nodes = participants(1);
    auto t = run_beacon(nodes, 0, {}, 3);
    ASSERT_TRUE(t.reveals[0].has_value());
    EXPECT_EQ(t.output, *t.reveals[0]);
    EXPECT_TRUE(verify_transcript(t));
}

TEST(RunBeacon, OutputIsXorOfFourSecrets)
{
    auto nodes = participants(4);
    auto t = run_beacon(nodes, 1, {}, 8);
    Digest x{};
    for (const auto &r : t.reveals)
    {
        ASSERT_TRUE(r.has_value());
        for (std::size_t b = 0; b < x.size(); ++b)
        {
            x[b] ^= (*r)[b];
        }
    }
    EXPECT_EQ(t.output, x);
}

TEST(RunBeacon, WithholdingDoesNotChangeOutput)
{
    auto nodes = participants(4);
    for (std::uint64_t seed = 0; seed < 20; ++seed)
    {
        auto reference = run_beacon(nodes, 1, {}, seed);
        for (std::size_t w = 0; w < 4; ++w)
        {
            auto t = run_beacon(nodes, 1, {w}, seed);
            EXPECT_EQ(t.output, reference.output);
            EXPECT_FALSE(t.reveals[w].has_value());
            EXPECT_TRUE(verify_transcript(t));
        }
    }
}

TEST(RunBeacon, SevenNodesTwoWithholders)
{
    auto nodes = participants(7);
    auto reference = run_beacon(nodes, 2, {}, 4);
    for (std::size_t a = 0; a < 7; ++a)
    {
        for (std::size_t b = a + 1; b < 7; ++b)
        {
            EXPECT_EQ(run_beacon(nodes, 2, {a, b}, 4).output, reference.output);
        }
    }
}

TEST(RunBeacon, TooManyWithholdersFailsReconstruction)
{
    auto nodes = participants(4);
    try
    {
        run_beacon(nodes, 1, {0, 1, 2}, 1);
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::reconstruction);
    }
}

TEST(RunBeacon, Deterministic)
{
    auto nodes = participants(4);
    auto a = run_beacon(nodes, 1, {2}, 12);
    auto b = run_beacon(nodes, 1, {2}, 12);
    EXPECT_EQ(a.output, b.output);
    EXPECT_EQ(a.commitments, b.commitments);
    EXPECT_NE(run_beacon(nodes, 1, {}, 13).output, a.output);
}

TEST(VerifyTranscript, DetectsTampering)
{
    auto nodes = participants(4);
    auto t = run_beacon(nodes, 1, {1}, 21);
    EXPECT_TRUE(verify_transcript(t));

    auto flipped = t;
    flipped.output[5] ^= 0x80;
    EXPECT_FALSE(verify_transcript(flipped));

    auto recommitted = t;
    recommitted.commitments[0] = commit(secret_of("other"));
    EXPECT_FALSE(verify_transcript(recommitted));

    auto withheld_commit = t;
    withheld_commit.commitments[1] = commit(secret_of("other"));
    EXPECT_FALSE(verify_transcript(withheld_commit));
}

#include "saber/execution.hpp"

#include <gtest/gtest.h>

using namespace saber;
using namespace saber::execution;

namespace
{
    struct Group
    {
        crypto::DigestScheme scheme;
        ordering::ConsensusCommittee committee;
        std::vector<ExecNodeState> nodes;
        std::vector<crypto::PublicKey> roster;

        explicit Group(std::size_t size, GroupIndex g = 0)
        {
            committee = ordering::make_committee(scheme, 4, 1, 5);
            for (std::size_t i = 0; i < size; ++i)
            {
                ExecNodeState n;
                n.keys = scheme.key_gen(500 + i);
                n.group_index = g;
                n.rank = i;
                nodes.push_back(n);
                roster.push_back(n.keys.public_key);
            }
        }

        TransactionBlock block(SequenceNumber sn, std::vector<ObjectId> touched, TxId id = 1, GroupIndex g = 0)
        {
            Transaction tx;
            tx.id = id;
            tx.kind = TxKind::complex;
            tx.touched = std::move(touched);
            tx.payload = to_bytes("sire");
            TransactionBlock b;
            b.group_index = g;
            b.sequence_number = sn;
            b.transactions.push_back(tx);
            b.commit_certificate = committee.certify(scheme, certificate_message(g, sn, b.digest()));
            return b;
        }

        std::vector<SignedResult> run(const TransactionBlock &b, const StateView &view)
        {
            std::vector<SignedResult> out;
            for (auto &n : nodes)
            {
                auto r = execute_block(n, b, view, committee, scheme);
                if (r.result)
                {
                    out.push_back(*r.result);
                }
            }
            return out;
        }
    };

    StateView view_of(std::initializer_list<std::pair<ObjectId, std::string>> objs)
    {
        StateView v;
        for (const auto &[id, s] : objs)
        {
            v[id] = storage::make_object(id, 1, to_bytes(s));
        }
        return v;
    }
} // namespace

TEST(MixGenes, ZeroInputsGolden)
{
    EXPECT_EQ(to_hex(mix_genes(Genes{}, Genes{}, 0)),
              "834a709ba2534ebe3ee1397fd4f7bd288b2acc1d20a08d6c862dcd99b6f04400");
}

TEST(RunContracts, BreedFromPayloadSire)
{
    Group g(1);
    auto updates = run_contracts(g.block(0, {3}, 5), view_of({{3, "init"}}));
    ASSERT_EQ(updates.size(), 1U);
    EXPECT_EQ(updates[0].id, 3U);
    EXPECT_EQ(updates[0].version, 2U);
    EXPECT_EQ(to_hex(updates[0].value), "5b1d0aab13b4f25ff0d0cb2e648eaf5301c423d1accb09e28bf41f376ef72265");
}

TEST(RunContracts, PaymentsAndOverdraft)
{
    TransactionBlock b;
    Transaction ok;
    ok.id = 1;
    ok.sender = 0;
    ok.receiver = 1;
    ok.amount = 4;
    Transaction overdraft = ok;
    overdraft.id = 2;
    overdraft.amount = 100;
    b.transactions = {ok, overdraft};
    StateView v;
    v[balance_object(0)] = storage::make_object(balance_object(0), 1, encode_balance(10));
    auto updates = run_contracts(b, v);
    ASSERT_EQ(updates.size(), 2U);
    std::map<ObjectId, std::uint64_t> bal;
    for (const auto &u : updates)
    {
        bal[u.id] = decode_balance(u.value);
    }
    EXPECT_EQ(bal[balance_object(0)], 6U);
    EXPECT_EQ(bal[balance_object(1)], 4U);
}

TEST(RunContracts, VersionsAdvancePerWrite)
{
    Group g(1);
    auto b = g.block(0, {3}, 1);
    auto second = b.transactions[0];
    second.id = 2;
    b.transactions.push_back(second);
    auto updates = run_contracts(b, view_of({{3, "init"}}));
    ASSERT_EQ(updates.size(), 1U);
    EXPECT_EQ(updates[0].version, 3U);
}

TEST(ExecuteBlock, RejectsBadCertificate)
{
    Group g(1);
    auto b = g.block(0, {1});
    b.transactions[0].id = 99;
    try
    {
        execute_block(g.nodes[0], b, view_of({{1, "x"}}), g.committee, g.scheme);
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::block_rejected);
    }
}

TEST(ExecuteBlock, SequenceHandling)
{
    Group g(1);
    auto &node = g.nodes[0];
    auto view = view_of({{1, "x"}});
    EXPECT_EQ(execute_block(node, g.block(1, {1}), view, g.committee, g.scheme).status, ExecStatus::gap);
    auto first = execute_block(node, g.block(0, {1}), view, g.committee, g.scheme);
    ASSERT_EQ(first.status, ExecStatus::signed_result);
    EXPECT_EQ(node.next_sn, 1U);
    auto again = execute_block(node, g.block(0, {1}), view, g.committee, g.scheme);
    EXPECT_EQ(again.status, ExecStatus::duplicate);
    ASSERT_TRUE(again.result.has_value());
    EXPECT_EQ(again.result->digest, first.result->digest);
}

TEST(ExecuteBlock, LocalStateSupersedesStaleView)
{
    Group g(1);
    auto &node = g.nodes[0];
    auto view = view_of({{1, "x"}});
    auto r0 = execute_block(node, g.block(0, {1}, 1), view, g.committee, g.scheme);
    // Same stale view again: the node uses its own newer copy.
    auto r1 = execute_block(node, g.block(1, {1}, 2), view, g.committee, g.scheme);
    ASSERT_TRUE(r0.result && r1.result);
    EXPECT_EQ(r1.result->updates[0].version, 3U);
}

TEST(ExecuteBlock, ModesAndWriteSignatures)
{
    Group g(3);
    g.nodes[1].mode = NodeMode::crashed;
    g.nodes[2].mode = NodeMode::byzantine;
    auto b = g.block(0, {1});
    auto view = view_of({{1, "x"}});
    auto honest = execute_block(g.nodes[0], b, view, g.committee, g.scheme);
    EXPECT_EQ(execute_block(g.nodes[1], b, view, g.committee, g.scheme).status, ExecStatus::no_output);
    auto bad = execute_block(g.nodes[2], b, view, g.committee, g.scheme);
    ASSERT_TRUE(honest.result && bad.result);
    EXPECT_NE(honest.result->digest, bad.result->digest);
    ASSERT_EQ(honest.result->write_signatures.size(), 1U);
    const auto &u = honest.result->updates[0];
    EXPECT_TRUE(crypto::verify(g.scheme, g.roster[0], storage::write_message(u.id, u.version, crypto::hash(u.value)),
                               honest.result->write_signatures[0]));
}

TEST(Aggregation, HonestDigestWinsForEveryByzantinePlacement)
{
    for (std::size_t fp : {1U, 2U})
    {
        const std::size_t size = 2 * fp + 1;
        const auto view = view_of({{1, "x"}});
        Group ref(size);
        const auto honest_digest = ref.run(ref.block(0, {1}), view).front().digest;
        for (unsigned mask = 0; mask < (1U << size); ++mask)
        {
            if (static_cast<std::size_t>(std::popcount(mask)) > fp)
            {
                continue;
            }
            Group g(size);
            for (std::size_t i = 0; i < size; ++i)
            {
                g.nodes[i].mode = (mask >> i) & 1U ? NodeMode::byzantine : NodeMode::honest;
            }
            auto results = g.run(g.block(0, {1}), view);
            auto rb = leader_aggregate(g.roster, results, fp + 1, &g.scheme);
            EXPECT_EQ(rb.digest, honest_digest) << "fp " << fp << " mask " << mask;
            EXPECT_TRUE(crypto::verify_threshold(g.scheme, g.roster, rb.msig, rb.digest, fp + 1));
            for (const auto &u : rb.updates)
            {
                EXPECT_TRUE(crypto::verify_threshold(g.scheme, g.roster, u.write_msig,
                                                     storage::write_message(u.id, u.version, crypto::hash(u.value)),
                                                     fp + 1));
            }
        }
    }
}

TEST(Aggregation, DisputeWithoutQuorum)
{
    Group g(3);
    g.nodes[1].mode = NodeMode::crashed;
    g.nodes[2].mode = NodeMode::byzantine;
    auto results = g.run(g.block(0, {1}), view_of({{1, "x"}}));
    ASSERT_EQ(results.size(), 2U);
    EXPECT_FALSE(try_aggregate(g.roster, results, 2).has_value());
    try
    {
        leader_aggregate(g.roster, results, 2);
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::dispute);
    }
}

TEST(Aggregation, FiltersForgeriesAndRepeats)
{
    Group g(3);
    auto results = g.run(g.block(0, {1}), view_of({{1, "x"}}));
    auto forged = results[1];
    forged.signature.bytes[0] ^= 1;
    auto outsider = results[2];
    outsider.signature.signer = g.scheme.key_gen(9999).public_key;
    std::vector<SignedResult> mixed{results[0], results[0], forged, outsider};
    EXPECT_FALSE(try_aggregate(g.roster, mixed, 2, &g.scheme).has_value());
    mixed.push_back(results[2]);
    auto rb = try_aggregate(g.roster, mixed, 2, &g.scheme);
    ASSERT_TRUE(rb.has_value());
    EXPECT_EQ(rb->msig.signer_count(), 2U);
}

TEST(Aggregation, MismatchedBlocksRejected)
{
    Group g(2);
    auto a = g.run(g.block(0, {1}), view_of({{1, "x"}}));
    auto b = g.run(g.block(1, {1}), view_of({{1, "x"}}));
    std::vector<SignedResult> mixed{a[0], b[1]};
    try
    {
        leader_aggregate(g.roster, mixed, 1);
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::parameter);
    }
}

TEST(Failover, WalksRanksUpToGroupEnd)
{
    EXPECT_EQ(failover(0, 5, false), 0U);
    std::size_t rank = 0;
    for (std::size_t step = 1; step <= 4; ++step)
    {
        rank = failover(rank, 5, true);
        EXPECT_EQ(rank, step);
    }
    try
    {
        failover(rank, 5, true);
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::unreachable_target);
    }
}

TEST(Failover, FPrimeCrashedLeadersStillYieldResult)
{
    // Leaders 0..f'-1 crash; rank f' is honest and aggregates.
    const std::size_t fp = 2;
    Group g(2 * fp + 1);
    for (std::size_t i = 0; i < fp; ++i)
    {
        g.nodes[i].mode = NodeMode::crashed;
    }
    std::size_t leader = 0;
    while (g.nodes[leader].mode == NodeMode::crashed)
    {
        leader = failover(leader, g.nodes.size(), true);
    }
    EXPECT_EQ(leader, fp);
    auto results = g.run(g.block(0, {1}), view_of({{1, "x"}}));
    EXPECT_NO_THROW(leader_aggregate(g.roster, results, fp + 1, &g.scheme));
}

TEST(FillGap, LeaderThenConsensus)
{
    Group g(1);
    std::map<SequenceNumber, TransactionBlock> all;
    for (SequenceNumber sn = 0; sn < 6; ++sn)
    {
        all[sn] = g.block(sn, {1}, sn + 1);
    }
    BlockSource leader = [&](SequenceNumber sn) -> std::optional<TransactionBlock> {
        if (sn % 2 == 0)
        {
            return all.at(sn);
        }
        return std::nullopt;
    };
    BlockSource consensus = [&](SequenceNumber sn) -> std::optional<TransactionBlock> { return all.at(sn); };
    auto rec = fill_gap(g.nodes[0], 5, leader, consensus);
    ASSERT_EQ(rec.blocks.size(), 5U);
    EXPECT_EQ(rec.from_leader, 3U);
    EXPECT_EQ(rec.from_consensus, 2U);
    for (SequenceNumber sn = 0; sn < 5; ++sn)
    {
        EXPECT_EQ(rec.blocks[sn].sequence_number, sn);
    }
    EXPECT_TRUE(fill_gap(g.nodes[0], 0, leader, consensus).blocks.empty());
}

TEST(FillGap, Failures)
{
    Group g(1);
    BlockSource none = [](SequenceNumber) -> std::optional<TransactionBlock> { return std::nullopt; };
    try
    {
        fill_gap(g.nodes[0], 2, none, none);
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::not_found);
    }
    BlockSource wrong = [&](SequenceNumber) -> std::optional<TransactionBlock> { return g.block(7, {1}); };
    try
    {
        fill_gap(g.nodes[0], 2, wrong, none);
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::block_rejected);
    }
}

TEST(CatchUp, ExecutesGapInOrder)
{
    Group lagging(1);
    Group upto(1);
    std::vector<TransactionBlock> blocks;
    for (SequenceNumber sn = 0; sn < 4; ++sn)
    {
        blocks.push_back(lagging.block(sn, {1}, sn + 10));
    }
    auto view = [](const TransactionBlock &) { return view_of({{1, "x"}}); };
    std::vector<Digest> expected;
    for (const auto &b : blocks)
    {
        expected.push_back(execute_block(upto.nodes[0], b, view(b), upto.committee, upto.scheme).result->digest);
    }
    BlockSource consensus = [&](SequenceNumber sn) -> std::optional<TransactionBlock> { return blocks.at(sn); };
    auto out = catch_up(lagging.nodes[0], blocks[3], nullptr, consensus, view, lagging.committee, lagging.scheme);
    ASSERT_EQ(out.size(), 4U);
    for (std::size_t i = 0; i < 4; ++i)
    {
        ASSERT_EQ(out[i].status, ExecStatus::signed_result);
        EXPECT_EQ(out[i].result->digest, expected[i]);
    }
    EXPECT_EQ(lagging.nodes[0].next_sn, 4U);
}

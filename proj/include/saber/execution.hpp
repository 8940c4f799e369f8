#pragma once

// Execution-node behaviour: the deterministic contract engine, result signing,
// leader aggregation, failover and sequence-gap recovery.

#include "saber/blocks.hpp"
#include "saber/common.hpp"
#include "saber/crypto.hpp"
#include "saber/ordering.hpp"
#include "saber/storage.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <vector>

namespace saber::execution
{
    using Genes = Digest;

    inline Genes mix_genes(const Genes &matron, const Genes &sire, std::uint64_t block_number)
    {
        return crypto::Sha256().update(matron).update(sire).update_u64(block_number).finish();
    }

    // Account balances live in the object space under the top bit.
    inline constexpr ObjectId balance_object(AccountId a) { return (ObjectId{1} << 63U) | a; }

    inline Bytes encode_balance(std::uint64_t v)
    {
        Bytes b;
        append_u64_be(b, v);
        return b;
    }

    inline std::uint64_t decode_balance(const Bytes &b)
    {
        if (b.size() != 8)
        {
            return 0;
        }
        std::uint64_t v = 0;
        for (auto x : b)
        {
            v = (v << 8U) | x;
        }
        return v;
    }

    inline Genes genes_of(const Bytes &value)
    {
        if (value.size() == 32)
        {
            Genes g{};
            std::copy(value.begin(), value.end(), g.begin());
            return g;
        }
        return crypto::hash(value);
    }

    using StateView = std::map<ObjectId, storage::StateObject>;

    // Applies the block's transactions in order and reports the final value of
    // every object written. Versions advance once per write.
    inline std::vector<StateUpdate> run_contracts(const TransactionBlock &tb, StateView view)
    {
        std::map<ObjectId, std::uint64_t> written;
        auto write = [&](ObjectId id, Bytes value) {
            auto &obj = view[id];
            obj = storage::make_object(id, obj.version + 1, std::move(value));
            written[id] = obj.version;
        };
        for (const auto &tx : tb.transactions)
        {
            if (tx.kind == TxKind::simple)
            {
                auto from = balance_object(tx.sender);
                auto to = balance_object(tx.receiver);
                auto have = view.contains(from) ? decode_balance(view[from].value) : 0;
                if (have < tx.amount || from == to)
                {
                    continue;
                }
                auto recv = view.contains(to) ? decode_balance(view[to].value) : 0;
                write(from, encode_balance(have - tx.amount));
                write(to, encode_balance(recv + tx.amount));
                continue;
            }
            if (tx.touched.empty())
            {
                continue;
            }
            const ObjectId target = tx.touched.front();
            Genes matron = genes_of(view[target].value);
            Genes sire = tx.touched.size() > 1 ? genes_of(view[tx.touched[1]].value) : crypto::hash(tx.payload);
            Genes child = mix_genes(matron, sire, tx.id);
            write(target, Bytes(child.begin(), child.end()));
        }
        std::vector<StateUpdate> out;
        for (const auto &[id, version] : written)
        {
            out.push_back(StateUpdate{id, version, view[id].value, {}});
        }
        return out;
    }

    enum class NodeMode
    {
        honest,
        crashed,
        // Signs a wrong result; every such node produces the same wrong result.
        byzantine,
    };

    inline const char *to_string(NodeMode m)
    {
        switch (m)
        {
        case NodeMode::honest: return "honest";
        case NodeMode::crashed: return "crashed";
        case NodeMode::byzantine: return "byzantine";
        }
        return "unknown";
    }

    struct SignedResult
    {
        GroupIndex group_index = 0;
        SequenceNumber sequence_number = 0;
        std::size_t rank = 0;
        std::vector<StateUpdate> updates;
        Digest digest{};
        crypto::Signature signature;
        // One signature per update, over the storage write message, same order.
        std::vector<crypto::Signature> write_signatures;
    };

    struct ExecNodeState
    {
        crypto::KeyPair keys;
        GroupIndex group_index = 0;
        std::size_t rank = 0;
        SequenceNumber next_sn = 0;
        StateView local;
        NodeMode mode = NodeMode::honest;
        // Everything this node has signed, so a repeated request gets the same answer.
        std::map<SequenceNumber, SignedResult> signed_results;
    };

    enum class ExecStatus
    {
        signed_result,
        no_output,
        gap,
        duplicate,
    };

    struct ExecOutcome
    {
        ExecStatus status = ExecStatus::no_output;
        std::optional<SignedResult> result;
    };

    inline std::vector<StateUpdate> corrupt(std::vector<StateUpdate> updates)
    {
        for (auto &u : updates)
        {
            Digest d = crypto::Sha256().update("corrupt").update(u.value).finish();
            u.value.assign(d.begin(), d.end());
        }
        return updates;
    }

    inline SignedResult sign_updates(const ExecNodeState &node, SequenceNumber sn, std::vector<StateUpdate> updates,
                                     const crypto::SignatureScheme &scheme)
    {
        SignedResult r;
        r.group_index = node.group_index;
        r.sequence_number = sn;
        r.rank = node.rank;
        r.digest = result_digest(node.group_index, sn, updates);
        r.signature = crypto::sign(scheme, node.keys, r.digest);
        for (const auto &u : updates)
        {
            r.write_signatures.push_back(
                crypto::sign(scheme, node.keys, storage::write_message(u.id, u.version, crypto::hash(u.value))));
        }
        r.updates = std::move(updates);
        return r;
    }

    // `view` supplies every object the block touches at the versions the block
    // declares; objects missing from it start empty at version 0.
    inline ExecOutcome execute_block(ExecNodeState &node, const TransactionBlock &tb, const StateView &view,
                                     const ordering::ConsensusCommittee &committee,
                                     const crypto::SignatureScheme &scheme)
    {
        if (!committee.verify(scheme, tb.commit_certificate,
                              certificate_message(tb.group_index, tb.sequence_number, tb.digest())))
        {
            throw Error(ErrorKind::block_rejected, "commit certificate does not verify for group " +
                                                       std::to_string(tb.group_index) + " sn " +
                                                       std::to_string(tb.sequence_number));
        }
        if (node.mode == NodeMode::crashed)
        {
            return {ExecStatus::no_output, std::nullopt};
        }
        if (tb.sequence_number < node.next_sn)
        {
            auto it = node.signed_results.find(tb.sequence_number);
            if (it == node.signed_results.end())
            {
                return {ExecStatus::duplicate, std::nullopt};
            }
            return {ExecStatus::duplicate, it->second};
        }
        if (tb.sequence_number > node.next_sn)
        {
            return {ExecStatus::gap, std::nullopt};
        }

        StateView merged = view;
        for (const auto &[id, obj] : node.local)
        {
            auto it = merged.find(id);
            if (it != merged.end() && obj.version > it->second.version)
            {
                it->second = obj;
            }
        }
        auto updates = run_contracts(tb, merged);
        if (node.mode == NodeMode::honest)
        {
            for (const auto &u : updates)
            {
                node.local[u.id] = storage::make_object(u.id, u.version, u.value);
            }
        }
        else
        {
            updates = corrupt(std::move(updates));
        }
        auto result = sign_updates(node, tb.sequence_number, std::move(updates), scheme);
        node.signed_results.emplace(tb.sequence_number, result);
        ++node.next_sn;
        return {ExecStatus::signed_result, std::move(result)};
    }

    namespace detail
    {
        struct Bucket
        {
            Digest digest{};
            std::vector<const SignedResult *> results;
        };

        inline std::vector<Bucket> bucket_by_digest(std::span<const SignedResult> results)
        {
            std::vector<Bucket> buckets;
            for (const auto &r : results)
            {
                auto it = std::find_if(buckets.begin(), buckets.end(),
                                       [&](const Bucket &b) { return b.digest == r.digest; });
                if (it == buckets.end())
                {
                    buckets.push_back(Bucket{r.digest, {&r}});
                }
                else
                {
                    it->results.push_back(&r);
                }
            }
            std::sort(buckets.begin(), buckets.end(), [](const Bucket &a, const Bucket &b) {
                if (a.results.size() != b.results.size())
                {
                    return a.results.size() > b.results.size();
                }
                return a.digest < b.digest;
            });
            return buckets;
        }

        inline ResultBlock build(const Bucket &b, std::span<const crypto::PublicKey> roster)
        {
            const SignedResult &first = *b.results.front();
            ResultBlock rb;
            rb.group_index = first.group_index;
            rb.sequence_number = first.sequence_number;
            rb.updates = first.updates;
            rb.digest = b.digest;
            std::vector<crypto::Signature> sigs;
            for (const auto *r : b.results)
            {
                sigs.push_back(r->signature);
            }
            rb.msig = crypto::aggregate(sigs, roster);
            for (std::size_t u = 0; u < rb.updates.size(); ++u)
            {
                std::vector<crypto::Signature> ws;
                for (const auto *r : b.results)
                {
                    if (u < r->write_signatures.size())
                    {
                        ws.push_back(r->write_signatures[u]);
                    }
                }
                rb.updates[u].write_msig = crypto::aggregate(ws, roster);
            }
            return rb;
        }

        inline std::vector<SignedResult> valid_results(std::span<const SignedResult> results,
                                                       std::span<const crypto::PublicKey> roster,
                                                       const crypto::SignatureScheme *scheme)
        {
            std::vector<SignedResult> out;
            for (const auto &r : results)
            {
                if (std::find(roster.begin(), roster.end(), r.signature.signer) == roster.end())
                {
                    continue;
                }
                if (std::any_of(out.begin(), out.end(),
                                [&](const SignedResult &o) { return o.signature.signer == r.signature.signer; }))
                {
                    continue;
                }
                if (result_digest(r.group_index, r.sequence_number, r.updates) != r.digest)
                {
                    continue;
                }
                if (scheme != nullptr && !crypto::verify(*scheme, r.signature.signer, r.digest, r.signature))
                {
                    continue;
                }
                out.push_back(r);
            }
            return out;
        }
    } // namespace detail

    // Returns a ResultBlock as soon as one digest has `threshold` signatures,
    // nothing otherwise.
    inline std::optional<ResultBlock> try_aggregate(std::span<const crypto::PublicKey> roster,
                                                    std::span<const SignedResult> results, std::size_t threshold,
                                                    const crypto::SignatureScheme *scheme = nullptr)
    {
        auto valid = detail::valid_results(results, roster, scheme);
        auto buckets = detail::bucket_by_digest(valid);
        if (buckets.empty() || buckets.front().results.size() < threshold)
        {
            return std::nullopt;
        }
        return detail::build(buckets.front(), roster);
    }

    inline ResultBlock leader_aggregate(std::span<const crypto::PublicKey> roster,
                                        std::span<const SignedResult> results, std::size_t threshold,
                                        const crypto::SignatureScheme *scheme = nullptr)
    {
        if (!results.empty())
        {
            for (const auto &r : results)
            {
                if (r.group_index != results.front().group_index ||
                    r.sequence_number != results.front().sequence_number)
                {
                    throw Error(ErrorKind::parameter, "results refer to different blocks");
                }
            }
        }
        auto rb = try_aggregate(roster, results, threshold, scheme);
        if (!rb)
        {
            throw Error(ErrorKind::dispute, "no result digest reached " + std::to_string(threshold) + " signatures");
        }
        return *rb;
    }

    // Acting leader after a timeout. Rank f' is the last one ever needed.
    inline std::size_t failover(std::size_t acting_rank, std::size_t group_size, bool timeout_elapsed)
    {
        if (!timeout_elapsed)
        {
            return acting_rank;
        }
        if (acting_rank + 1 >= group_size)
        {
            throw Error(ErrorKind::unreachable_target, "no member left to take over as leader");
        }
        return acting_rank + 1;
    }

    using BlockSource = std::function<std::optional<TransactionBlock>(SequenceNumber)>;

    struct GapRecovery
    {
        std::vector<TransactionBlock> blocks;
        std::size_t from_leader = 0;
        std::size_t from_consensus = 0;
    };

    // Fetches the blocks in [node.next_sn, observed_sn), leader first.
    inline GapRecovery fill_gap(const ExecNodeState &node, SequenceNumber observed_sn, const BlockSource &leader,
                                const BlockSource &consensus)
    {
        GapRecovery out;
        for (SequenceNumber sn = node.next_sn; sn < observed_sn; ++sn)
        {
            std::optional<TransactionBlock> b;
            if (leader)
            {
                b = leader(sn);
            }
            if (b)
            {
                ++out.from_leader;
            }
            else
            {
                if (consensus)
                {
                    b = consensus(sn);
                }
                if (!b)
                {
                    throw Error(ErrorKind::not_found, "block " + std::to_string(sn) + " unavailable for recovery");
                }
                ++out.from_consensus;
            }
            if (b->group_index != node.group_index || b->sequence_number != sn)
            {
                throw Error(ErrorKind::block_rejected, "recovered block does not match the requested slot");
            }
            out.blocks.push_back(std::move(*b));
        }
        return out;
    }

    // Recovers the gap, executes it in order, then executes `observed`.
    inline std::vector<ExecOutcome> catch_up(ExecNodeState &node, const TransactionBlock &observed,
                                             const BlockSource &leader, const BlockSource &consensus,
                                             const std::function<StateView(const TransactionBlock &)> &view_for,
                                             const ordering::ConsensusCommittee &committee,
                                             const crypto::SignatureScheme &scheme)
    {
        std::vector<ExecOutcome> out;
        if (observed.sequence_number > node.next_sn)
        {
            auto rec = fill_gap(node, observed.sequence_number, leader, consensus);
            for (const auto &b : rec.blocks)
            {
                out.push_back(execute_block(node, b, view_for(b), committee, scheme));
            }
        }
        out.push_back(execute_block(node, observed, view_for(observed), committee, scheme));
        return out;
    }
} // namespace saber::execution

#pragma once

// Wire-level records shared by the consensus and execution layers.

#include "saber/common.hpp"
#include "saber/crypto.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace saber
{
    enum class TxKind
    {
        simple,
        complex,
    };

    inline const char *to_string(TxKind k) { return k == TxKind::simple ? "simple" : "complex"; }

    struct Transaction
    {
        TxId id = 0;
        TxKind kind = TxKind::simple;
        AccountId sender = 0;
        // Payment recipient for simple transactions.
        AccountId receiver = 0;
        std::uint64_t amount = 0;
        ObjectId contract_id = 0;
        Bytes payload;
        std::vector<ObjectId> touched;
        double exec_cost_ms = 0.0;
        Bytes client_signature;
        // Virtual time (us) at which the client submitted it.
        std::int64_t submitted_us = 0;

        Bytes signing_bytes() const
        {
            Bytes b;
            append_str(b, "saber/tx");
            append_u64_be(b, id);
            b.push_back(kind == TxKind::simple ? 0 : 1);
            append_u64_be(b, sender);
            append_u64_be(b, receiver);
            append_u64_be(b, amount);
            append_u64_be(b, contract_id);
            append_u64_be(b, payload.size());
            append_bytes(b, payload);
            append_u64_be(b, touched.size());
            for (auto o : touched)
            {
                append_u64_be(b, o);
            }
            append_u64_be(b, static_cast<std::uint64_t>(std::llround(exec_cost_ms * 1000.0)));
            return b;
        }
    };

    inline Transaction sign_transaction(Transaction tx, const crypto::SignatureScheme &scheme,
                                        const crypto::KeyPair &client)
    {
        tx.client_signature = scheme.sign_bytes(client, tx.signing_bytes());
        return tx;
    }

    struct ReadVersion
    {
        ObjectId id = 0;
        std::uint64_t version = 0;

        bool operator==(const ReadVersion &) const = default;
    };

    struct TransactionBlock
    {
        GroupIndex group_index = 0;
        SequenceNumber sequence_number = 0;
        std::uint64_t epoch = 0;
        Round round = 0;
        std::vector<Transaction> transactions;
        // Versions the consensus layer expects executors to read.
        std::vector<ReadVersion> read_versions;
        // Group membership the block was dispatched to, leader first.
        std::vector<crypto::PublicKey> signers;
        crypto::MultiSignature commit_certificate;

        Digest digest() const
        {
            crypto::Sha256 h;
            h.update("saber/block").update_u64(group_index).update_u64(sequence_number).update_u64(epoch);
            h.update_u64(transactions.size());
            for (const auto &tx : transactions)
            {
                h.update(tx.signing_bytes());
            }
            for (const auto &rv : read_versions)
            {
                h.update_u64(rv.id).update_u64(rv.version);
            }
            for (const auto &pk : signers)
            {
                h.update(pk.bytes);
            }
            return h.finish();
        }

        double total_cost_ms() const
        {
            double c = 0;
            for (const auto &tx : transactions)
            {
                c += tx.exec_cost_ms;
            }
            return c;
        }
    };

    inline Bytes certificate_message(GroupIndex group, SequenceNumber sn, const Digest &block_digest)
    {
        Bytes m;
        append_str(m, "saber/cc");
        append_u64_be(m, group);
        append_u64_be(m, sn);
        append_bytes(m, block_digest);
        return m;
    }

    struct StateUpdate
    {
        ObjectId id = 0;
        std::uint64_t version = 0;
        Bytes value;
        // Group authorisation for the storage write of this version.
        crypto::MultiSignature write_msig;
    };

    inline Digest result_digest(GroupIndex group, SequenceNumber sn, const std::vector<StateUpdate> &updates)
    {
        crypto::Sha256 h;
        h.update("saber/result").update_u64(group).update_u64(sn).update_u64(updates.size());
        for (const auto &u : updates)
        {
            h.update_u64(u.id).update_u64(u.version).update(crypto::hash(u.value));
        }
        return h.finish();
    }

    struct ResultBlock
    {
        GroupIndex group_index = 0;
        SequenceNumber sequence_number = 0;
        std::vector<StateUpdate> updates;
        Digest digest{};
        crypto::MultiSignature msig;
    };

    enum class DecisionThreshold
    {
        majority,
        all,
    };

    // Matching signatures needed from a group of the given size.
    inline std::size_t decision_quorum(std::size_t group_size, DecisionThreshold t)
    {
        if (t == DecisionThreshold::all)
        {
            return group_size;
        }
        return group_size / 2 + 1;
    }
} // namespace saber

#pragma once

// Consensus-node layer. The agreement protocol itself is abstracted to a fixed
// round cadence; everything a consensus node decides per round lives here.

#include "saber/blocks.hpp"
#include "saber/common.hpp"
#include "saber/crypto.hpp"
#include "saber/storage.hpp"

#include <algorithm>
#include <deque>
#include <list>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

namespace saber::ordering
{
    enum class Classification
    {
        simple,
        complex,
    };

    // simple iff t1 > (k/m)·t2; equality goes to complex.
    inline Classification classify(double t1_s, double t2_s, std::size_t k, std::size_t m)
    {
        if (k == 0 || m == 0)
        {
            throw Error(ErrorKind::parameter, "batch size and group count must be positive");
        }
        if (!(t1_s > 0.0) || t2_s < 0.0)
        {
            throw Error(ErrorKind::parameter, "round latency must be positive and execution time non-negative");
        }
        // Compare t1·m against k·t2 to keep the boundary exact for decimal inputs
        // such as t1=1, k=2000, m=20, t2=0.01.
        const long double lhs = static_cast<long double>(t1_s) * static_cast<long double>(m);
        const long double rhs = static_cast<long double>(k) * static_cast<long double>(t2_s);
        const long double scale = std::max<long double>({1.0L, lhs, rhs});
        if (lhs - rhs > scale * 1e-12L)
        {
            return Classification::simple;
        }
        return Classification::complex;
    }

    struct Account
    {
        crypto::PublicKey key;
        std::uint64_t balance = 0;
    };

    struct ObjectRecord
    {
        std::uint64_t version = 1;
        Bytes value;
        Digest digest{};
        // Only this account may invoke calls that touch the object, when set.
        std::optional<AccountId> owner;
    };

    struct LedgerState
    {
        std::map<AccountId, Account> accounts;
        std::map<ObjectId, ObjectRecord> objects;

        std::uint64_t total_balance() const
        {
            std::uint64_t s = 0;
            for (const auto &[_, a] : accounts)
            {
                s += a.balance;
            }
            return s;
        }
    };

    enum class InvalidReason
    {
        none,
        bad_signature,
        unknown_account,
        insufficient_balance,
        unknown_object,
        unauthorized,
        malformed,
    };

    inline const char *to_string(InvalidReason r)
    {
        switch (r)
        {
        case InvalidReason::none: return "valid";
        case InvalidReason::bad_signature: return "bad-signature";
        case InvalidReason::unknown_account: return "unknown-account";
        case InvalidReason::insufficient_balance: return "insufficient-balance";
        case InvalidReason::unknown_object: return "unknown-object";
        case InvalidReason::unauthorized: return "unauthorized";
        case InvalidReason::malformed: return "malformed";
        }
        return "unknown";
    }

    struct Validity
    {
        InvalidReason reason = InvalidReason::none;

        bool valid() const { return reason == InvalidReason::none; }
    };

    struct LockRecord
    {
        TxId holder = 0;
        GroupIndex group = 0;
        Round acquired = 0;
    };

    class LockTable
    {
    public:
        bool is_held(ObjectId id) const { return held_.contains(id); }

        const LockRecord *holder_of(ObjectId id) const
        {
            auto it = held_.find(id);
            return it == held_.end() ? nullptr : &it->second;
        }

        std::size_t held_count() const { return held_.size(); }

        const std::unordered_map<ObjectId, LockRecord> &held() const { return held_; }

        const std::deque<TxId> *cache_queue(ObjectId id) const
        {
            auto it = cache_.find(id);
            return it == cache_.end() ? nullptr : &it->second;
        }

        // Atomic over the whole touched set: either every object is taken or none.
        bool try_lock(const Transaction &tx, Round round)
        {
            for (auto id : tx.touched)
            {
                if (held_.contains(id))
                {
                    park(tx.id, id);
                    return false;
                }
            }
            unpark(tx.id);
            for (auto id : tx.touched)
            {
                held_.emplace(id, LockRecord{tx.id, 0, round});
            }
            return true;
        }

        void set_group(const Transaction &tx, GroupIndex g)
        {
            for (auto id : tx.touched)
            {
                auto it = held_.find(id);
                if (it != held_.end() && it->second.holder == tx.id)
                {
                    it->second.group = g;
                }
            }
        }

        void release(const Transaction &tx)
        {
            for (auto id : tx.touched)
            {
                auto it = held_.find(id);
                if (it != held_.end() && it->second.holder == tx.id)
                {
                    held_.erase(it);
                }
            }
        }

        void forget(TxId tx) { unpark(tx); }

    private:
        void park(TxId tx, ObjectId id)
        {
            auto p = parked_.find(tx);
            if (p != parked_.end())
            {
                if (p->second == id)
                {
                    return;
                }
                unpark(tx);
            }
            cache_[id].push_back(tx);
            parked_[tx] = id;
        }

        void unpark(TxId tx)
        {
            auto p = parked_.find(tx);
            if (p == parked_.end())
            {
                return;
            }
            auto &q = cache_[p->second];
            q.erase(std::remove(q.begin(), q.end(), tx), q.end());
            if (q.empty())
            {
                cache_.erase(p->second);
            }
            parked_.erase(p);
        }

        std::unordered_map<ObjectId, LockRecord> held_;
        std::map<ObjectId, std::deque<TxId>> cache_;
        std::unordered_map<TxId, ObjectId> parked_;
    };

    inline Validity check_validity(const Transaction &tx, const LedgerState &ledger, const LockTable &,
                                   const crypto::SignatureScheme &scheme)
    {
        auto sender = ledger.accounts.find(tx.sender);
        if (sender == ledger.accounts.end())
        {
            return {InvalidReason::unknown_account};
        }
        if (!scheme.verify_bytes(sender->second.key, tx.signing_bytes(), tx.client_signature))
        {
            return {InvalidReason::bad_signature};
        }
        if (tx.kind == TxKind::simple)
        {
            if (!ledger.accounts.contains(tx.receiver))
            {
                return {InvalidReason::unknown_account};
            }
            if (sender->second.balance < tx.amount)
            {
                return {InvalidReason::insufficient_balance};
            }
            return {};
        }
        if (tx.touched.empty())
        {
            return {InvalidReason::malformed};
        }
        for (auto id : tx.touched)
        {
            auto it = ledger.objects.find(id);
            if (it == ledger.objects.end())
            {
                return {InvalidReason::unknown_object};
            }
            if (it->second.owner && *it->second.owner != tx.sender)
            {
                return {InvalidReason::unauthorized};
            }
        }
        return {};
    }

    // Balance and account checks only, for transactions already validated once.
    inline Validity check_balance(const Transaction &tx, const LedgerState &ledger)
    {
        auto sender = ledger.accounts.find(tx.sender);
        if (sender == ledger.accounts.end() || !ledger.accounts.contains(tx.receiver))
        {
            return {InvalidReason::unknown_account};
        }
        if (sender->second.balance < tx.amount)
        {
            return {InvalidReason::insufficient_balance};
        }
        return {};
    }

    enum class LockOutcome
    {
        locked,
        cached,
    };

    inline LockOutcome acquire_locks(const Transaction &tx, LockTable &table, Round round)
    {
        return table.try_lock(tx, round) ? LockOutcome::locked : LockOutcome::cached;
    }

    struct ConsensusModel
    {
        double rounds_per_second = 1.0;
        std::size_t block_payload_bytes = 1'000'000;
        std::size_t tx_per_block = 2000;
        std::size_t n = 4;
        std::size_t f = 1;

        double round_seconds() const { return 1.0 / rounds_per_second; }

        void validate() const
        {
            if (!(rounds_per_second > 0.0))
            {
                throw Error(ErrorKind::config, "rounds_per_second must be positive");
            }
            if (tx_per_block < 1 || tx_per_block > 9000)
            {
                throw Error(ErrorKind::config, "tx_per_block must lie in [1, 9000]");
            }
            if (n < 3 * f + 1)
            {
                throw Error(ErrorKind::config, "consensus needs n >= 3f+1 nodes");
            }
        }
    };

    // Keys of the simulated consensus committee; certificates carry 2f+1 of them.
    struct ConsensusCommittee
    {
        std::vector<crypto::KeyPair> keys;
        std::size_t f = 0;

        std::vector<crypto::PublicKey> public_keys() const { return crypto::public_keys(keys); }

        std::size_t quorum() const { return 2 * f + 1; }

        crypto::MultiSignature certify(const crypto::SignatureScheme &scheme, ByteView msg) const
        {
            std::vector<crypto::Signature> sigs;
            for (std::size_t i = 0; i < quorum() && i < keys.size(); ++i)
            {
                sigs.push_back(crypto::sign(scheme, keys[i], msg));
            }
            auto pks = public_keys();
            return crypto::aggregate(sigs, pks);
        }

        bool verify(const crypto::SignatureScheme &scheme, const crypto::MultiSignature &cc, ByteView msg) const
        {
            auto pks = public_keys();
            return crypto::verify_threshold(scheme, pks, cc, msg, quorum());
        }
    };

    inline ConsensusCommittee make_committee(crypto::SignatureScheme &scheme, std::size_t n, std::size_t f,
                                             std::uint64_t seed)
    {
        ConsensusCommittee c;
        c.f = f;
        for (std::size_t i = 0; i < n; ++i)
        {
            c.keys.push_back(scheme.key_gen(mix64(seed ^ (0xc0ffee00ULL + i))));
        }
        return c;
    }

    enum class AssignmentPolicy
    {
        round_robin,
        hash,
    };

    struct OrderingState
    {
        LedgerState ledger;
        LockTable locks;
        std::vector<SequenceNumber> next_sn;
        std::vector<std::deque<TransactionBlock>> outstanding;
        storage::CacheDirectory directory;
        bool caching = false;
        // Groups asked to flush their caches and not yet acknowledged.
        std::set<GroupIndex> writeback_pending;
        std::uint64_t rr_cursor = 0;
        AssignmentPolicy policy = AssignmentPolicy::round_robin;

        explicit OrderingState(std::size_t m = 1) : next_sn(m, 0), outstanding(m) {}

        std::size_t group_count() const { return next_sn.size(); }
    };

    struct PendingTx
    {
        Transaction tx;
        bool cached = false;
        bool deferred = false;
        // Signature and object checks passed in an earlier round.
        bool validated = false;
    };

    using PendingQueue = std::list<PendingTx>;

    struct Rejection
    {
        Transaction tx;
        InvalidReason reason = InvalidReason::none;
    };

    struct RoundOutput
    {
        Round round = 0;
        std::vector<Transaction> simple_block;
        std::vector<TransactionBlock> blocks;
        std::vector<Rejection> rejected;
        std::vector<TxId> cached;
        std::vector<TxId> deferred;
        std::set<GroupIndex> writeback_requests;
    };

    // Current membership of every group, leader first, as seen by the consensus layer.
    using GroupRoster = std::vector<std::vector<crypto::PublicKey>>;

    inline RoundOutput build_round(OrderingState &state, PendingQueue &pending, const GroupRoster &groups,
                                   const ConsensusModel &cm, Round round, std::uint64_t epoch,
                                   const ConsensusCommittee &committee, const crypto::SignatureScheme &scheme)
    {
        const std::size_t m = groups.size();
        if (m == 0 || state.group_count() != m)
        {
            throw Error(ErrorKind::parameter, "group roster does not match the ordering state");
        }
        RoundOutput out;
        out.round = round;
        std::vector<std::vector<Transaction>> per_group(m);
        std::size_t complex_taken = 0;

        for (auto it = pending.begin(); it != pending.end();)
        {
            if (out.simple_block.size() >= cm.tx_per_block && complex_taken >= cm.tx_per_block)
            {
                break;
            }
            const Transaction &tx = it->tx;
            if (tx.kind == TxKind::simple)
            {
                if (out.simple_block.size() >= cm.tx_per_block)
                {
                    ++it;
                    continue;
                }
                auto v = it->validated ? check_balance(tx, state.ledger)
                                       : check_validity(tx, state.ledger, state.locks, scheme);
                if (!v.valid())
                {
                    out.rejected.push_back({tx, v.reason});
                    it = pending.erase(it);
                    continue;
                }
                state.ledger.accounts[tx.sender].balance -= tx.amount;
                state.ledger.accounts[tx.receiver].balance += tx.amount;
                out.simple_block.push_back(tx);
                it = pending.erase(it);
                continue;
            }

            if (complex_taken >= cm.tx_per_block)
            {
                ++it;
                continue;
            }
            if (!it->validated)
            {
                auto v = check_validity(tx, state.ledger, state.locks, scheme);
                it->validated = true;
                if (!v.valid())
                {
                    out.rejected.push_back({tx, v.reason});
                    it = pending.erase(it);
                    continue;
                }
            }
            std::optional<GroupIndex> pinned;
            if (state.caching)
            {
                auto route = storage::cache_route(state.directory, tx.touched);
                bool blocked = route.kind == storage::CacheRoute::Kind::writeback_required;
                for (auto g : route.groups)
                {
                    blocked = blocked || state.writeback_pending.contains(g);
                }
                if (blocked)
                {
                    if (route.kind == storage::CacheRoute::Kind::writeback_required)
                    {
                        for (auto g : route.groups)
                        {
                            if (!state.writeback_pending.contains(g))
                            {
                                out.writeback_requests.insert(g);
                            }
                        }
                    }
                    it->deferred = true;
                    out.deferred.push_back(tx.id);
                    ++it;
                    continue;
                }
                if (route.kind == storage::CacheRoute::Kind::pinned)
                {
                    pinned = route.group;
                }
            }

            if (acquire_locks(tx, state.locks, round) == LockOutcome::cached)
            {
                it->cached = true;
                out.cached.push_back(tx.id);
                ++it;
                continue;
            }

            GroupIndex g;
            if (pinned)
            {
                g = *pinned;
            }
            else if (state.policy == AssignmentPolicy::round_robin)
            {
                g = static_cast<GroupIndex>(state.rr_cursor % m);
                state.rr_cursor = (state.rr_cursor + 1) % m;
            }
            else
            {
                Bytes b;
                append_u64_be(b, tx.id);
                g = static_cast<GroupIndex>(membership::digest_mod(crypto::hash(b), m));
            }
            state.locks.set_group(tx, g);
            per_group[g].push_back(tx);
            ++complex_taken;
            it = pending.erase(it);
        }
        // Requests issued this round are outstanding until acknowledged.
        state.writeback_pending.insert(out.writeback_requests.begin(), out.writeback_requests.end());

        for (GroupIndex g = 0; g < m; ++g)
        {
            if (per_group[g].empty())
            {
                continue;
            }
            TransactionBlock b;
            b.group_index = g;
            b.sequence_number = state.next_sn[g]++;
            b.epoch = epoch;
            b.round = round;
            b.transactions = std::move(per_group[g]);
            b.signers = groups[g];
            std::set<ObjectId> seen;
            for (const auto &tx : b.transactions)
            {
                for (auto id : tx.touched)
                {
                    if (seen.insert(id).second)
                    {
                        b.read_versions.push_back({id, state.ledger.objects.at(id).version});
                    }
                }
            }
            b.commit_certificate =
                committee.certify(scheme, certificate_message(g, b.sequence_number, b.digest()));
            state.outstanding[g].push_back(b);
            out.blocks.push_back(std::move(b));
        }
        return out;
    }

    enum class AcceptStatus
    {
        applied,
        rejected_insufficient_votes,
        rejected_sequence,
        rejected_invalid,
    };

    inline const char *to_string(AcceptStatus s)
    {
        switch (s)
        {
        case AcceptStatus::applied: return "applied";
        case AcceptStatus::rejected_insufficient_votes: return "insufficient-votes";
        case AcceptStatus::rejected_sequence: return "sequence";
        case AcceptStatus::rejected_invalid: return "invalid";
        }
        return "unknown";
    }

    struct AcceptOutcome
    {
        AcceptStatus status = AcceptStatus::rejected_invalid;
        // Set for sequence rejections that are ahead of the oldest outstanding block.
        bool future = false;
        std::vector<TxId> confirmed;
    };

    inline AcceptOutcome accept_result(const ResultBlock &rb, OrderingState &state, DecisionThreshold threshold,
                                       const crypto::SignatureScheme &scheme,
                                       const storage::ShardedStore *store = nullptr)
    {
        AcceptOutcome out;
        if (rb.group_index >= state.group_count())
        {
            return out;
        }
        auto &queue = state.outstanding[rb.group_index];
        if (queue.empty() || rb.sequence_number != queue.front().sequence_number)
        {
            out.status = AcceptStatus::rejected_sequence;
            out.future = !queue.empty() && rb.sequence_number > queue.front().sequence_number;
            return out;
        }
        const TransactionBlock &block = queue.front();
        if (result_digest(rb.group_index, rb.sequence_number, rb.updates) != rb.digest)
        {
            return out;
        }
        const auto quorum = decision_quorum(block.signers.size(), threshold);
        if (rb.msig.bitmap.size() != block.signers.size() ||
            !crypto::verify_threshold(scheme, block.signers, rb.msig, rb.digest, quorum))
        {
            out.status = AcceptStatus::rejected_insufficient_votes;
            return out;
        }
        std::set<ObjectId> declared;
        for (const auto &tx : block.transactions)
        {
            declared.insert(tx.touched.begin(), tx.touched.end());
        }
        for (const auto &u : rb.updates)
        {
            auto obj = state.ledger.objects.find(u.id);
            if (!declared.contains(u.id) || obj == state.ledger.objects.end() || u.version != obj->second.version + 1)
            {
                return out;
            }
            // Uncached writes must already be visible at storage.
            if (store != nullptr && !state.caching && store->read(u.id).version != u.version)
            {
                return out;
            }
        }

        for (const auto &u : rb.updates)
        {
            auto &obj = state.ledger.objects.at(u.id);
            obj.version = u.version;
            obj.value = u.value;
            obj.digest = crypto::hash(u.value);
            if (state.caching)
            {
                state.directory.cached_by[u.id] = rb.group_index;
            }
        }
        for (const auto &tx : block.transactions)
        {
            state.locks.release(tx);
            out.confirmed.push_back(tx.id);
        }
        queue.pop_front();
        out.status = AcceptStatus::applied;
        return out;
    }
} // namespace saber::ordering

#pragma once

// ExecutionManager and the lock/unlock CryptoKitties contract as plain state
// machines, driven by a block height supplied by the caller.

#include "saber/beacon.hpp"
#include "saber/blocks.hpp"
#include "saber/crypto.hpp"
#include "saber/execution.hpp"
#include "saber/membership.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace saber::ethembed
{
    inline constexpr std::uint64_t required_confirmations = 13;

    struct GiveBirthRequest
    {
        // Unique per request; also the block-number input to gene mixing.
        std::uint64_t nonce = 0;
        std::uint64_t matron_id = 0;

        bool operator==(const GiveBirthRequest &) const = default;
    };

    struct ExecutionManagerState
    {
        membership::IdentityLedger ens;
        std::vector<std::vector<crypto::PublicKey>> groups;
        std::vector<std::vector<GiveBirthRequest>> tasks;
        std::size_t sid = 0;
        std::size_t m = 1;

        explicit ExecutionManagerState(std::size_t group_count = 1) : groups(group_count), tasks(group_count), m(group_count)
        {
            if (group_count == 0)
            {
                throw Error(ErrorKind::parameter, "group count must be positive");
            }
        }
    };

    inline ExecutionManagerState em_register(ExecutionManagerState state, const crypto::PublicKey &caller,
                                             std::uint64_t deposit)
    {
        state.ens = membership::register_identity(std::move(state.ens), caller, deposit);
        return state;
    }

    enum class ShuffleStatus
    {
        applied,
        rejected,
    };

    inline ShuffleStatus em_shuffle(ExecutionManagerState &state, const Digest &r,
                                    const beacon::BeaconTranscript &transcript)
    {
        if (transcript.output != r || !beacon::verify_transcript(transcript))
        {
            return ShuffleStatus::rejected;
        }
        auto members = membership::execution_members(state.ens);
        auto assignment = membership::shuffle(members, state.m, r);
        for (std::size_t g = 0; g < state.m; ++g)
        {
            state.groups[g] = assignment.keys_of(g);
        }
        return ShuffleStatus::applied;
    }

    struct Kitty
    {
        execution::Genes genes{};
        std::optional<std::uint64_t> siring_with_id;
        std::uint64_t due_at_block = std::numeric_limits<std::uint64_t>::max();
    };

    struct LockEntry
    {
        std::uint64_t matron_id = 0;
        std::size_t group_id = 0;
        std::uint64_t block_num = 0;
        GiveBirthRequest request;
    };

    struct KittiesState
    {
        std::vector<Kitty> kitties;
        std::vector<LockEntry> locks;
        // Requests that hit a locked matron, retried at the next block.
        std::deque<GiveBirthRequest> cached;

        const LockEntry *lock_of(std::uint64_t matron) const
        {
            auto it = std::find_if(locks.begin(), locks.end(), [&](const LockEntry &l) { return l.matron_id == matron; });
            return it == locks.end() ? nullptr : &*it;
        }
    };

    inline bool matron_valid(const KittiesState &ks, std::uint64_t matron_id, std::uint64_t current_block)
    {
        if (matron_id >= ks.kitties.size())
        {
            return false;
        }
        const auto &k = ks.kitties[matron_id];
        return k.siring_with_id && *k.siring_with_id < ks.kitties.size() && k.due_at_block <= current_block;
    }

    inline execution::Genes child_genes(const KittiesState &ks, const GiveBirthRequest &req)
    {
        const auto &matron = ks.kitties.at(req.matron_id);
        const auto &sire = ks.kitties.at(*matron.siring_with_id);
        return execution::mix_genes(matron.genes, sire.genes, req.nonce);
    }

    inline Bytes unlock_message(const execution::Genes &child, const GiveBirthRequest &req)
    {
        Bytes m;
        m.reserve(96);
        append_str(m, "saber/kitties/unlock");
        append_bytes(m, child);
        append_u64_be(m, req.nonce);
        append_u64_be(m, req.matron_id);
        return m;
    }

    enum class LockStatus
    {
        locked,
        cached,
        rejected,
    };

    inline LockStatus give_birth_lock(KittiesState &ks, ExecutionManagerState &ems, const GiveBirthRequest &req,
                                      std::uint64_t current_block)
    {
        if (ks.lock_of(req.matron_id) != nullptr)
        {
            ks.cached.push_back(req);
            return LockStatus::cached;
        }
        if (!matron_valid(ks, req.matron_id, current_block))
        {
            return LockStatus::rejected;
        }
        const std::size_t group = ems.sid;
        ems.sid = (ems.sid + 1) % ems.m;
        ks.locks.push_back(LockEntry{req.matron_id, group, current_block, req});
        ems.tasks[group].push_back(req);
        return LockStatus::locked;
    }

    enum class UnlockStatus
    {
        applied,
        ignored,
        rejected_confirmations,
        rejected_auth,
    };

    inline const char *to_string(UnlockStatus s)
    {
        switch (s)
        {
        case UnlockStatus::applied: return "applied";
        case UnlockStatus::ignored: return "ignored";
        case UnlockStatus::rejected_confirmations: return "confirmations";
        case UnlockStatus::rejected_auth: return "auth";
        }
        return "unknown";
    }

    inline UnlockStatus give_birth_unlock(KittiesState &ks, ExecutionManagerState &ems, std::uint64_t matron_id,
                                          const execution::Genes &child, const crypto::MultiSignature &msig,
                                          std::uint64_t current_block, const crypto::SignatureScheme &scheme,
                                          DecisionThreshold threshold = DecisionThreshold::majority)
    {
        auto it =
            std::find_if(ks.locks.begin(), ks.locks.end(), [&](const LockEntry &l) { return l.matron_id == matron_id; });
        if (it == ks.locks.end())
        {
            return UnlockStatus::ignored;
        }
        if (current_block < it->block_num || current_block - it->block_num < required_confirmations)
        {
            return UnlockStatus::rejected_confirmations;
        }
        const auto &signers = ems.groups.at(it->group_id);
        if (signers.empty() || msig.bitmap.size() != signers.size() ||
            !crypto::verify_threshold(scheme, signers, msig, unlock_message(child, it->request),
                                      decision_quorum(signers.size(), threshold)))
        {
            return UnlockStatus::rejected_auth;
        }
        ks.kitties.push_back(Kitty{child, std::nullopt, std::numeric_limits<std::uint64_t>::max()});
        auto &task = ems.tasks[it->group_id];
        auto t = std::find(task.begin(), task.end(), it->request);
        if (t != task.end())
        {
            task.erase(t);
        }
        ks.locks.erase(it);
        return UnlockStatus::applied;
    }

    // Monolithic reference: check, mix and append in one call.
    inline bool give_birth(KittiesState &ks, const GiveBirthRequest &req, std::uint64_t current_block)
    {
        if (!matron_valid(ks, req.matron_id, current_block))
        {
            return false;
        }
        ks.kitties.push_back(Kitty{child_genes(ks, req), std::nullopt, std::numeric_limits<std::uint64_t>::max()});
        return true;
    }

    using Keyring = std::map<crypto::PublicKey, crypto::KeyPair>;

    // Off-chain group work: every member computes and signs; the leader aggregates.
    inline std::pair<execution::Genes, crypto::MultiSignature>
    group_sign(const KittiesState &ks, const ExecutionManagerState &ems, const LockEntry &lock, const Keyring &keys,
               const crypto::SignatureScheme &scheme)
    {
        const auto &signers = ems.groups.at(lock.group_id);
        auto child = child_genes(ks, lock.request);
        auto msg = unlock_message(child, lock.request);
        std::vector<crypto::Signature> sigs;
        for (const auto &pk : signers)
        {
            sigs.push_back(crypto::sign(scheme, keys.at(pk), msg));
        }
        return {child, crypto::aggregate(sigs, signers)};
    }

    struct TimedRequest
    {
        GiveBirthRequest request;
        std::uint64_t submit_block = 0;
    };

    struct PipelineReport
    {
        std::size_t applied = 0;
        std::size_t cached_events = 0;
        std::size_t rejected = 0;
        // Locks whose group could not produce an accepted unlock.
        std::size_t stuck_locks = 0;
        std::uint64_t final_block = 0;
    };

    // Runs requests through lock/unlock block by block until nothing is
    // outstanding. Unlocks are submitted as soon as the guard allows.
    inline PipelineReport run_pipeline(KittiesState &ks, ExecutionManagerState &ems,
                                       std::vector<TimedRequest> requests, const Keyring &keys,
                                       const crypto::SignatureScheme &scheme, std::uint64_t start_block = 0)
    {
        std::stable_sort(requests.begin(), requests.end(),
                         [](const TimedRequest &a, const TimedRequest &b) { return a.submit_block < b.submit_block; });
        PipelineReport rep;
        std::size_t next = 0;
        std::uint64_t block = start_block;
        std::set<std::uint64_t> stuck;
        while (next < requests.size() || ks.locks.size() > stuck.size())
        {
            std::vector<std::uint64_t> ready;
            for (const auto &l : ks.locks)
            {
                if (block - l.block_num >= required_confirmations && !stuck.contains(l.matron_id))
                {
                    ready.push_back(l.matron_id);
                }
            }
            for (auto matron : ready)
            {
                const auto *l = ks.lock_of(matron);
                auto [child, msig] = group_sign(ks, ems, *l, keys, scheme);
                if (give_birth_unlock(ks, ems, matron, child, msig, block, scheme) == UnlockStatus::applied)
                {
                    ++rep.applied;
                }
                else
                {
                    stuck.insert(matron);
                }
            }
            std::deque<GiveBirthRequest> retry;
            retry.swap(ks.cached);
            auto submit = [&](const GiveBirthRequest &r) {
                switch (give_birth_lock(ks, ems, r, block))
                {
                case LockStatus::cached: ++rep.cached_events; break;
                case LockStatus::rejected: ++rep.rejected; break;
                case LockStatus::locked: break;
                }
            };
            for (const auto &r : retry)
            {
                submit(r);
            }
            while (next < requests.size() && requests[next].submit_block <= block)
            {
                submit(requests[next++].request);
            }
            ++block;
        }
        rep.stuck_locks = stuck.size();
        rep.final_block = block;
        return rep;
    }

    inline std::vector<execution::Genes> gene_multiset(const KittiesState &ks)
    {
        std::vector<execution::Genes> out;
        for (const auto &k : ks.kitties)
        {
            out.push_back(k.genes);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    // Lock/unlock pipeline versus sequential giveBirth over the same requests;
    // true iff the resulting kitties agree as multisets.
    inline bool equivalence_check(const KittiesState &ks0, const std::vector<TimedRequest> &requests,
                                  const ExecutionManagerState &ems0, const Keyring &keys,
                                  const crypto::SignatureScheme &scheme)
    {
        KittiesState pipeline = ks0;
        ExecutionManagerState ems = ems0;
        run_pipeline(pipeline, ems, requests, keys, scheme);

        KittiesState oracle = ks0;
        auto ordered = requests;
        std::stable_sort(ordered.begin(), ordered.end(),
                         [](const TimedRequest &a, const TimedRequest &b) { return a.submit_block < b.submit_block; });
        for (const auto &r : ordered)
        {
            give_birth(oracle, r.request, r.submit_block);
        }
        return gene_multiset(pipeline) == gene_multiset(oracle);
    }
} // namespace saber::ethembed

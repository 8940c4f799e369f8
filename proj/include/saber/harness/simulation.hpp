#pragma once

// End-to-end run: clients, the modelled consensus layer, execution groups and
// sharded storage wired together on one virtual clock.

#include "saber/beacon.hpp"
#include "saber/blocks.hpp"
#include "saber/crypto.hpp"
#include "saber/execution.hpp"
#include "saber/harness/config.hpp"
#include "saber/harness/metrics.hpp"
#include "saber/harness/workload.hpp"
#include "saber/membership.hpp"
#include "saber/ordering.hpp"
#include "saber/simnet.hpp"
#include "saber/storage.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

namespace saber::harness
{
    inline constexpr std::uint64_t initial_balance = 1'000'000;

    inline Bytes initial_object_value(ObjectId id)
    {
        Digest g = crypto::Sha256().update("saber/genesis").update_u64(id).finish();
        return Bytes(g.begin(), g.end());
    }

    struct TxOutcome
    {
        TxKind kind = TxKind::simple;
        std::int64_t submitted_us = 0;
        std::int64_t arrived_us = -1;
        std::int64_t confirmed_us = -1;
        // Consensus round that confirmed a simple tx or dispatched a complex one.
        std::int64_t dispatch_round = -1;
        std::int64_t confirm_round = -1;
        std::int64_t group = -1;
        ordering::InvalidReason rejected = ordering::InvalidReason::none;
    };

    struct RunResult
    {
        MetricsRecord metrics;
        ordering::LedgerState ledger;
        std::map<TxId, TxOutcome> outcomes;
        // Digests of every accepted result block, keyed by (group, sn).
        std::map<std::pair<GroupIndex, SequenceNumber>, Digest> accepted_digests;
        // Digests of what honest execution produced for each (group, sn).
        std::map<std::pair<GroupIndex, SequenceNumber>, Digest> honest_digests;
    };

    class SaberSimulation
    {
    public:
        SaberSimulation(ExperimentConfig cfg, std::vector<Transaction> txs)
            : cfg_(std::move(cfg)),
              scheme_(crypto::make_scheme(cfg_.crypto_backend)),
              lat_(cfg_.latency, mix64(cfg_.seed ^ 0x6c6174656e6379ULL)),
              ord_(cfg_.group_count),
              txs_(std::move(txs))
        {
            cfg_.validate();
            ord_.caching = cfg_.caching;
            ord_.policy = cfg_.assignment;
            quorum_ = decision_quorum(cfg_.group_size, cfg_.decision_threshold);
            setup_consensus();
            setup_state();
            setup_groups();
            group_expected_.assign(cfg_.group_count, 0);
            group_busy_us_.assign(cfg_.group_count, 0.0);
            caches_.resize(cfg_.group_count);
        }

        RunResult run()
        {
            schedule_tick(0);
            sim_.run_until();
            finish();
            return std::move(result_);
        }

    private:
        static constexpr std::uint64_t cn_endpoint = 0;
        static constexpr std::uint64_t client_base = 1ULL << 40;
        static constexpr std::uint64_t storage_endpoint = (1ULL << 40) - 1;

        struct PhysNode
        {
            crypto::KeyPair keys;
            simnet::NodeId origin;
            simnet::TimeUs busy_until = 0;
            std::map<GroupIndex, execution::ExecNodeState> per_group;
        };

        struct BlockTrack
        {
            TransactionBlock block;
            execution::StateView view;
            std::vector<std::size_t> node_of_rank;
            std::size_t acting_rank = 0;
            std::vector<std::optional<execution::SignedResult>> produced;
            std::vector<std::vector<execution::SignedResult>> inbox;
            std::vector<bool> emitted;
            bool resolved = false;
            bool stuck = false;
            std::uint64_t timer = 0;
        };

        using Key = std::pair<GroupIndex, SequenceNumber>;

        void setup_consensus()
        {
            committee_ = ordering::make_committee(*scheme_, cfg_.consensus.n, cfg_.consensus.f, mix64(cfg_.seed ^ 0xc0ULL));
        }

        void setup_state()
        {
            store_ = storage::ShardedStore(cfg_.shard_count, cfg_.shard_size, *scheme_, mix64(cfg_.seed ^ 0x5707ULL));
            std::set<AccountId> accounts;
            std::set<ObjectId> objects;
            std::set<TxId> ids;
            if (cfg_.workload.kind != WorkloadKind::trace)
            {
                for (AccountId a = 0; a < cfg_.workload.accounts; ++a)
                {
                    accounts.insert(a);
                }
            }
            for (const auto &tx : txs_)
            {
                if (!ids.insert(tx.id).second)
                {
                    throw Error(ErrorKind::parse, "duplicate transaction id " + std::to_string(tx.id));
                }
                accounts.insert(tx.sender);
                if (tx.kind == TxKind::simple)
                {
                    accounts.insert(tx.receiver);
                }
                for (auto o : tx.touched)
                {
                    if (o >= (ObjectId{1} << 63U))
                    {
                        throw Error(ErrorKind::parse, "object id " + std::to_string(o) + " is reserved for balances");
                    }
                    objects.insert(o);
                }
            }
            for (auto a : accounts)
            {
                auto kp = scheme_->key_gen(mix64(cfg_.seed ^ (0xacc0000000000000ULL + a)));
                ord_.ledger.accounts[a] = ordering::Account{kp.public_key, initial_balance};
                client_keys_.emplace(a, std::move(kp));
                store_.seed(execution::balance_object(a), execution::encode_balance(initial_balance));
                balance_version_[a] = 1;
            }
            for (auto o : objects)
            {
                auto v = initial_object_value(o);
                ord_.ledger.objects[o] = ordering::ObjectRecord{1, v, crypto::hash(v), std::nullopt};
                store_.seed(o, v);
                history_[o].push_back(crypto::hash(v));
            }
            for (auto &tx : txs_)
            {
                tx = sign_transaction(std::move(tx), *scheme_, client_keys_.at(tx.sender));
                auto &o = result_.outcomes[tx.id];
                o.kind = tx.kind;
                o.submitted_us = tx.submitted_us;
            }
            // Arrival at the consensus layer, FIFO per client.
            for (std::size_t i = 0; i < txs_.size(); ++i)
            {
                const auto &tx = txs_[i];
                auto t = lat_.deliver(tx.submitted_us, simnet::LinkClass::client_cn, client_base + tx.sender, cn_endpoint);
                arrivals_.emplace_back(t, i);
                result_.outcomes[tx.id].arrived_us = t;
            }
            std::stable_sort(arrivals_.begin(), arrivals_.end(),
                             [](const auto &a, const auto &b) { return a.first < b.first; });
        }

        void setup_groups()
        {
            Rng rng(mix64(cfg_.seed ^ 0x67726f7570ULL));
            const std::size_t count = cfg_.group_count * cfg_.group_size;
            membership::IdentityLedger ledger;
            std::vector<crypto::KeyPair> keys;
            for (std::size_t i = 0; i < count; ++i)
            {
                keys.push_back(scheme_->key_gen(mix64(cfg_.seed ^ (0xe0000000ULL + i))));
                ledger = membership::register_identity(std::move(ledger), keys.back().public_key, 1 + rng.below(1000));
            }
            auto r = beacon_output(0);
            auto members = membership::execution_members(ledger);
            assignment_ = membership::balanced_shuffle(members, cfg_.group_count, cfg_.group_size, r);
            std::map<crypto::PublicKey, std::size_t> by_key;
            for (std::size_t i = 0; i < count; ++i)
            {
                by_key[keys[i].public_key] = i;
            }
            nodes_.resize(count);
            for (std::size_t g = 0; g < cfg_.group_count; ++g)
            {
                for (std::size_t rank = 0; rank < cfg_.group_size; ++rank)
                {
                    auto i = by_key.at(assignment_.groups[g][rank].public_key);
                    nodes_[i].keys = keys[i];
                    nodes_[i].origin = simnet::NodeId{static_cast<std::uint32_t>(g), static_cast<std::uint32_t>(rank)};
                }
            }
            node_by_key_ = std::move(by_key);
            faults_ = simnet::FaultRegistry(cfg_.group_count, cfg_.group_size);
            for (const auto &f : cfg_.faults)
            {
                simnet::inject_fault(faults_, simnet::NodeId{f.group, f.rank}, f.mode, simnet::ms_to_us(f.at_ms));
            }
            refresh_roster();
        }

        Digest beacon_output(std::uint64_t epoch)
        {
            auto pks = committee_.public_keys();
            auto t = beacon::run_beacon(pks, cfg_.consensus.f, {}, mix64(cfg_.seed ^ mix64(0xbeac0000ULL + epoch)));
            if (!beacon::verify_transcript(t))
            {
                throw Error(ErrorKind::reconstruction, "beacon transcript failed verification");
            }
            return t.output;
        }

        void refresh_roster()
        {
            roster_.assign(cfg_.group_count, {});
            for (std::size_t g = 0; g < cfg_.group_count; ++g)
            {
                roster_[g] = assignment_.keys_of(g);
            }
        }

        simnet::FaultMode mode_of(std::size_t node, simnet::TimeUs t) const
        {
            return faults_.mode_at(nodes_[node].origin, t);
        }

        simnet::TimeUs round_us() const { return simnet::ms_to_us(1000.0 / cfg_.consensus.rounds_per_second); }

        simnet::TimeUs delta() const { return lat_.delta_us(); }

        void schedule_tick(Round k)
        {
            sim_.at(static_cast<simnet::TimeUs>(k + 1) * round_us(), cn_endpoint, "round", [this, k] { tick(k); });
        }

        // One consensus round: results, epoch change, intake, new blocks.
        void tick(Round k)
        {
            const auto now = sim_.now();
            ++result_.metrics.rounds;
            bool progress = false;

            progress |= accept_inbox(k);

            if (cfg_.epoch.length_rounds > 0 && k > 0 && k % cfg_.epoch.length_rounds == 0)
            {
                change_epoch();
            }

            while (next_arrival_ < arrivals_.size() && arrivals_[next_arrival_].first <= now)
            {
                pending_.push_back(ordering::PendingTx{txs_[arrivals_[next_arrival_].second]});
                ++next_arrival_;
            }

            const std::size_t before_pending = pending_.size();
            auto out = build_round_checked(k);
            progress |= pending_.size() != before_pending;

            std::set<AccountId> touched_accounts;
            for (const auto &tx : out.simple_block)
            {
                confirm(tx.id, now, k);
                result_.outcomes[tx.id].dispatch_round = static_cast<std::int64_t>(k);
                touched_accounts.insert(tx.sender);
                touched_accounts.insert(tx.receiver);
            }
            persist_balances(touched_accounts);
            for (const auto &rej : out.rejected)
            {
                result_.outcomes[rej.tx.id].rejected = rej.reason;
                ++result_.metrics.rejection_reasons[ordering::to_string(rej.reason)];
                ++result_.metrics.rejected;
            }
            result_.metrics.cached_events += out.cached.size();
            result_.metrics.deferred_events += out.deferred.size();
            for (auto g : out.writeback_requests)
            {
                request_writeback(g);
            }
            for (auto &b : out.blocks)
            {
                dispatch(std::move(b), k);
            }
            sim_.note("round " + std::to_string(k) + " simple " + std::to_string(out.simple_block.size()) +
                      " blocks " + std::to_string(out.blocks.size()) + " rejected " +
                      std::to_string(out.rejected.size()));

            const bool more = next_arrival_ < arrivals_.size() || live_blocks() > 0 || !cn_inbox_.empty() ||
                              in_transit_results_ > 0 || !ord_.writeback_pending.empty() ||
                              (!pending_.empty() && progress);
            if (more && static_cast<double>(sim_.now()) / 1e6 < cfg_.max_time_s)
            {
                schedule_tick(k + 1);
            }
        }

        ordering::RoundOutput build_round_checked(Round k)
        {
            return ordering::build_round(ord_, pending_, roster_, cfg_.consensus, k, assignment_.epoch, committee_,
                                         *scheme_);
        }

        std::size_t live_blocks() const
        {
            std::size_t n = 0;
            for (const auto &[_, t] : tracks_)
            {
                n += t->stuck ? 0 : 1;
            }
            return n;
        }

        void persist_balances(const std::set<AccountId> &accounts)
        {
            if (accounts.empty())
            {
                return;
            }
            auto pks = committee_.public_keys();
            storage::WriteAuthority auth{pks, committee_.quorum()};
            for (auto a : accounts)
            {
                const auto id = execution::balance_object(a);
                const auto value = execution::encode_balance(ord_.ledger.accounts.at(a).balance);
                const auto version = balance_version_[a] + 1;
                auto msg = storage::write_message(id, version, crypto::hash(value));
                auto msig = committee_.certify(*scheme_, msg);
                if (storage::write_state(store_.shard_for(id), id, value, version, msig, auth, *scheme_) ==
                    storage::WriteStatus::accepted)
                {
                    balance_version_[a] = version;
                }
            }
        }

        execution::StateView prefetch(const TransactionBlock &b) const
        {
            execution::StateView view;
            for (const auto &rv : b.read_versions)
            {
                std::optional<storage::StateObject> obj;
                if (ord_.caching)
                {
                    if (auto g = ord_.directory.lookup(rv.id); g && *g == b.group_index)
                    {
                        obj = caches_[b.group_index].latest(rv.id);
                    }
                }
                if (!obj)
                {
                    auto r = store_.read(rv.id);
                    obj = storage::make_object(rv.id, r.version, r.value);
                }
                view[rv.id] = *obj;
            }
            return view;
        }

        void dispatch(TransactionBlock b, Round k)
        {
            const auto now = sim_.now();
            ++result_.metrics.blocks;
            auto track = std::make_shared<BlockTrack>();
            track->view = prefetch(b);
            for (const auto &pk : b.signers)
            {
                track->node_of_rank.push_back(node_by_key_.at(pk));
            }
            const auto size = b.signers.size();
            track->produced.resize(size);
            track->inbox.resize(size);
            track->emitted.assign(size, false);
            for (const auto &tx : b.transactions)
            {
                auto &o = result_.outcomes[tx.id];
                o.dispatch_round = static_cast<std::int64_t>(k);
                o.group = b.group_index;
            }
            const auto g = b.group_index;
            const auto cost = simnet::ms_to_us(b.total_cost_ms());
            group_busy_us_[g] += static_cast<double>(cost);
            group_expected_[g] = std::max(group_expected_[g], now + delta()) + cost;
            track->block = std::move(b);
            const Key key{g, track->block.sequence_number};
            tracks_[key] = track;
            arm_timer(track);
            for (std::size_t rank = 0; rank < size; ++rank)
            {
                const auto node = track->node_of_rank[rank];
                auto at = lat_.deliver(now, simnet::LinkClass::cn_en, cn_endpoint, node + 1);
                sim_.at(at, node + 1, "block", [this, track, rank] { on_block(track, rank); });
            }
        }

        void arm_timer(const std::shared_ptr<BlockTrack> &track)
        {
            const auto g = track->block.group_index;
            const auto at = std::max(sim_.now(), group_expected_[g]) + 4 * delta();
            track->timer = sim_.timeout(
                at, cn_endpoint, "timeout", [track] { return track->resolved || track->stuck; },
                [this, track] { on_timeout(track); });
        }

        void on_block(const std::shared_ptr<BlockTrack> &track, std::size_t rank)
        {
            const auto node = track->node_of_rank[rank];
            const auto now = sim_.now();
            if (mode_of(node, now) == simnet::FaultMode::crash)
            {
                return;
            }
            auto &pn = nodes_[node];
            const auto cost = simnet::ms_to_us(track->block.total_cost_ms());
            const auto start = std::max(now, pn.busy_until);
            pn.busy_until = start + cost;
            sim_.at(pn.busy_until, node + 1, "exec", [this, track, rank] { on_executed(track, rank); });
        }

        void on_executed(const std::shared_ptr<BlockTrack> &track, std::size_t rank)
        {
            const auto node = track->node_of_rank[rank];
            const auto now = sim_.now();
            const auto mode = mode_of(node, now);
            if (mode == simnet::FaultMode::crash)
            {
                return;
            }
            auto &pn = nodes_[node];
            const auto &b = track->block;
            auto it = pn.per_group.find(b.group_index);
            if (it == pn.per_group.end())
            {
                execution::ExecNodeState st;
                st.keys = pn.keys;
                st.group_index = b.group_index;
                st.next_sn = b.sequence_number;
                it = pn.per_group.emplace(b.group_index, std::move(st)).first;
            }
            auto &st = it->second;
            st.rank = rank;
            st.mode = mode == simnet::FaultMode::byzantine ? execution::NodeMode::byzantine : execution::NodeMode::honest;
            // A node that rejoins a group resumes from the group's current position.
            if (b.sequence_number > st.next_sn)
            {
                st.next_sn = b.sequence_number;
            }
            auto out = execution::execute_block(st, b, track->view, committee_, *scheme_);
            st.signed_results.erase(st.signed_results.begin(),
                                    st.signed_results.lower_bound(st.next_sn > 4 ? st.next_sn - 4 : 0));
            if (!out.result)
            {
                return;
            }
            if (st.mode == execution::NodeMode::honest)
            {
                result_.honest_digests[{b.group_index, b.sequence_number}] = out.result->digest;
            }
            track->produced[rank] = *out.result;
            send_to_leader(track, rank);
        }

        void send_to_leader(const std::shared_ptr<BlockTrack> &track, std::size_t rank)
        {
            const auto leader_rank = track->acting_rank;
            const auto from = track->node_of_rank[rank];
            const auto to = track->node_of_rank[leader_rank];
            const auto now = sim_.now();
            const auto at = from == to ? now : lat_.deliver(now, simnet::LinkClass::intra_group, from + 1, to + 1);
            auto result = *track->produced[rank];
            sim_.at(at, to + 1, "signature", [this, track, leader_rank, result = std::move(result)] {
                on_signature(track, leader_rank, result);
            });
        }

        void on_signature(const std::shared_ptr<BlockTrack> &track, std::size_t leader_rank,
                          const execution::SignedResult &r)
        {
            if (track->emitted[leader_rank] || track->stuck)
            {
                return;
            }
            const auto leader = track->node_of_rank[leader_rank];
            const auto now = sim_.now();
            const auto mode = mode_of(leader, now);
            if (mode == simnet::FaultMode::crash)
            {
                return;
            }
            const auto &signers = track->block.signers;
            if (r.group_index != track->block.group_index || r.sequence_number != track->block.sequence_number ||
                result_digest(r.group_index, r.sequence_number, r.updates) != r.digest ||
                std::find(signers.begin(), signers.end(), r.signature.signer) == signers.end() ||
                !crypto::verify(*scheme_, r.signature.signer, r.digest, r.signature))
            {
                return;
            }
            auto &inbox = track->inbox[leader_rank];
            for (const auto &prev : inbox)
            {
                if (prev.signature.signer == r.signature.signer)
                {
                    return;
                }
            }
            inbox.push_back(r);

            if (mode == simnet::FaultMode::byzantine)
            {
                // Pushes its own result no matter how many agree with it.
                const auto &own = track->produced[leader_rank];
                if (!own)
                {
                    return;
                }
                std::vector<execution::SignedResult> same;
                for (const auto &x : inbox)
                {
                    if (x.digest == own->digest)
                    {
                        same.push_back(x);
                    }
                }
                auto rb = execution::try_aggregate(signers, same, 1);
                if (rb)
                {
                    emit(track, leader_rank, std::move(*rb));
                }
                return;
            }

            std::size_t matching = 0;
            for (const auto &x : inbox)
            {
                matching += x.digest == r.digest ? 1 : 0;
            }
            if (matching >= quorum_)
            {
                std::vector<execution::SignedResult> same;
                for (const auto &x : inbox)
                {
                    if (x.digest == r.digest)
                    {
                        same.push_back(x);
                    }
                }
                emit(track, leader_rank, execution::leader_aggregate(signers, same, quorum_));
                return;
            }
            if (inbox.size() == signers.size())
            {
                try
                {
                    execution::leader_aggregate(signers, inbox, quorum_);
                }
                catch (const Error &e)
                {
                    if (e.kind() != ErrorKind::dispute)
                    {
                        throw;
                    }
                    ++result_.metrics.disputes;
                    track->stuck = true;
                    sim_.note("dispute group " + std::to_string(track->block.group_index) + " sn " +
                              std::to_string(track->block.sequence_number));
                }
            }
        }

        void emit(const std::shared_ptr<BlockTrack> &track, std::size_t leader_rank, ResultBlock rb)
        {
            track->emitted[leader_rank] = true;
            const auto leader = track->node_of_rank[leader_rank];
            auto send_at = sim_.now();
            if (!cfg_.caching)
            {
                storage::WriteAuthority auth{track->block.signers, quorum_};
                for (const auto &u : rb.updates)
                {
                    auto status = storage::write_state(store_.shard_for(u.id), u.id, u.value, u.version, u.write_msig,
                                                       auth, *scheme_);
                    if (status == storage::WriteStatus::accepted)
                    {
                        storage_history_[u.id].push_back(crypto::hash(u.value));
                    }
                }
                send_at = lat_.deliver(send_at, simnet::LinkClass::en_storage, leader + 1, storage_endpoint);
            }
            auto arrive = lat_.deliver(send_at, simnet::LinkClass::cn_en, leader + 1, cn_endpoint);
            if (cfg_.verify_cost_ms > 0)
            {
                arrive = std::max(arrive, cn_verify_busy_) + simnet::ms_to_us(cfg_.verify_cost_ms);
                cn_verify_busy_ = arrive;
            }
            ++in_transit_results_;
            sim_.at(arrive, cn_endpoint, "result", [this, rb = std::move(rb)]() mutable {
                --in_transit_results_;
                cn_inbox_.push_back(std::move(rb));
            });
        }

        void on_timeout(const std::shared_ptr<BlockTrack> &track)
        {
            const auto size = track->block.signers.size();
            std::size_t next;
            try
            {
                next = execution::failover(track->acting_rank, size, true);
            }
            catch (const Error &)
            {
                track->stuck = true;
                sim_.note("no leader left for group " + std::to_string(track->block.group_index));
                return;
            }
            ++result_.metrics.failovers;
            track->acting_rank = next;
            sim_.note("failover group " + std::to_string(track->block.group_index) + " sn " +
                      std::to_string(track->block.sequence_number) + " rank " + std::to_string(next));
            const auto now = sim_.now();
            for (std::size_t rank = 0; rank < size; ++rank)
            {
                if (track->produced[rank] && mode_of(track->node_of_rank[rank], now) != simnet::FaultMode::crash)
                {
                    send_to_leader(track, rank);
                }
            }
            arm_timer(track);
        }

        bool accept_inbox(Round k)
        {
            bool progress = false;
            auto inbox = std::move(cn_inbox_);
            cn_inbox_.clear();
            for (auto &rb : inbox)
            {
                progress |= accept_one(rb, k);
                // Results that overtook an earlier one for the same group.
                auto &buf = future_[rb.group_index];
                while (true)
                {
                    auto &q = ord_.outstanding[rb.group_index];
                    if (q.empty())
                    {
                        break;
                    }
                    auto it = buf.find(q.front().sequence_number);
                    if (it == buf.end())
                    {
                        break;
                    }
                    auto next = std::move(it->second);
                    buf.erase(it);
                    if (!accept_one(next, k))
                    {
                        break;
                    }
                }
            }
            return progress;
        }

        bool accept_one(const ResultBlock &rb, Round k)
        {
            const auto now = sim_.now();
            const auto g = rb.group_index;
            if (g >= ord_.group_count() || ord_.outstanding[g].empty())
            {
                ++result_.metrics.rejected_results;
                return false;
            }
            const auto signers = ord_.outstanding[g].front().signers;
            auto out = ordering::accept_result(rb, ord_, cfg_.decision_threshold, *scheme_,
                                               cfg_.caching ? nullptr : &store_);
            if (out.status != ordering::AcceptStatus::applied)
            {
                if (out.status == ordering::AcceptStatus::rejected_sequence && out.future)
                {
                    future_[g].emplace(rb.sequence_number, rb);
                }
                else
                {
                    ++result_.metrics.rejected_results;
                }
                return false;
            }
            const Key key{g, rb.sequence_number};
            result_.accepted_digests[key] = rb.digest;
            for (const auto &u : rb.updates)
            {
                history_[u.id].push_back(crypto::hash(u.value));
                if (cfg_.caching)
                {
                    caches_[g].record(u.id, storage::PendingWrite{u.version, u.value, u.write_msig,
                                                                  storage::WriteAuthority{signers, quorum_}});
                }
            }
            for (auto id : out.confirmed)
            {
                confirm(id, now, k);
            }
            if (auto it = tracks_.find(key); it != tracks_.end())
            {
                it->second->resolved = true;
                sim_.queue().cancel(it->second->timer);
                tracks_.erase(it);
            }
            sim_.note("accept group " + std::to_string(g) + " sn " + std::to_string(rb.sequence_number));
            return true;
        }

        void confirm(TxId id, simnet::TimeUs now, Round k)
        {
            auto &o = result_.outcomes[id];
            o.confirmed_us = now;
            o.confirm_round = static_cast<std::int64_t>(k);
            last_confirm_us_ = std::max(last_confirm_us_, now);
        }

        void request_writeback(GroupIndex g)
        {
            const auto now = sim_.now();
            const auto leader = node_by_key_.at(roster_[g].front());
            const auto at = lat_.deliver(now, simnet::LinkClass::cn_en, cn_endpoint, leader + 1);
            sim_.at(at, leader + 1, "writeback", [this, g, leader] {
                flush(g);
                const auto ack = lat_.deliver(sim_.now(), simnet::LinkClass::cn_en, leader + 1, cn_endpoint);
                sim_.at(ack, cn_endpoint, "writeback-ack", [this, g] { ord_.writeback_pending.erase(g); });
            });
        }

        void flush(GroupIndex g)
        {
            if (caches_[g].empty())
            {
                return;
            }
            auto before = caches_[g].writes;
            auto rep = storage::write_back(g, caches_[g], ord_.directory, store_, *scheme_);
            for (auto &[id, writes] : before)
            {
                std::sort(writes.begin(), writes.end(),
                          [](const auto &a, const auto &b) { return a.version < b.version; });
                for (const auto &w : writes)
                {
                    storage_history_[id].push_back(crypto::hash(w.value));
                }
            }
            result_.metrics.writebacks += rep.applied;
            if (rep.rejected > 0)
            {
                sim_.note("write-back rejected " + std::to_string(rep.rejected));
            }
        }

        void change_epoch()
        {
            if (cfg_.caching)
            {
                for (GroupIndex g = 0; g < cfg_.group_count; ++g)
                {
                    flush(g);
                }
            }
            auto r = beacon_output(assignment_.epoch + 1);
            assignment_ = membership::balanced_rotate(assignment_, r, cfg_.epoch.rotation_fraction);
            refresh_roster();
            ++result_.metrics.epochs;
            const auto now = sim_.now();
            for (std::size_t g = 0; g < cfg_.group_count; ++g)
            {
                std::size_t faulty = 0;
                for (const auto &pk : roster_[g])
                {
                    faulty += mode_of(node_by_key_.at(pk), now) != simnet::FaultMode::honest ? 1 : 0;
                }
                if (faulty > cfg_.group_fault_bound())
                {
                    ++result_.metrics.fault_budget_violations;
                }
            }
            sim_.note("epoch " + std::to_string(assignment_.epoch));
        }

        void finish()
        {
            if (cfg_.caching)
            {
                for (GroupIndex g = 0; g < cfg_.group_count; ++g)
                {
                    flush(g);
                }
            }
            auto &m = result_.metrics;
            m.m = cfg_.group_count;
            m.group_size = cfg_.group_size;
            m.consensus_tps = cfg_.consensus.rounds_per_second * static_cast<double>(cfg_.consensus.tx_per_block);
            m.workload = to_string(cfg_.workload.kind);
            m.submitted = txs_.size();
            double simple_sum = 0;
            double complex_sum = 0;
            for (const auto &[id, o] : result_.outcomes)
            {
                if (o.confirmed_us < 0)
                {
                    if (o.rejected == ordering::InvalidReason::none)
                    {
                        ++m.in_flight;
                    }
                    continue;
                }
                ++m.confirmed;
                const double lat_ms = static_cast<double>(o.confirmed_us - o.submitted_us) / 1000.0;
                if (o.kind == TxKind::simple)
                {
                    ++m.confirmed_simple;
                    simple_sum += lat_ms;
                    m.max_simple_latency_ms = std::max(m.max_simple_latency_ms, lat_ms);
                }
                else
                {
                    ++m.confirmed_complex;
                    complex_sum += lat_ms;
                }
            }
            m.simple_latency_ms = m.confirmed_simple ? simple_sum / static_cast<double>(m.confirmed_simple) : 0;
            m.complex_latency_ms = m.confirmed_complex ? complex_sum / static_cast<double>(m.confirmed_complex) : 0;
            m.processing_time_s = static_cast<double>(last_confirm_us_) / 1e6;
            m.throughput_tps = m.processing_time_s > 0 ? static_cast<double>(m.confirmed) / m.processing_time_s : 0;
            for (auto busy : group_busy_us_)
            {
                m.group_utilization.push_back(last_confirm_us_ > 0 ? busy / static_cast<double>(last_confirm_us_) : 0);
            }
            m.divergent_objects = count_divergence();

            crypto::Sha256 state;
            for (const auto &[id, obj] : ord_.ledger.objects)
            {
                state.update_u64(id).update_u64(obj.version).update(obj.digest);
            }
            for (const auto &[id, acct] : ord_.ledger.accounts)
            {
                state.update_u64(id).update_u64(acct.balance);
            }
            m.state_digest = to_hex(state.finish());
            m.trace_digest = to_hex(sim_.trace_digest());
            result_.ledger = ord_.ledger;
        }

        // Objects whose history differs between the consensus ledger, storage
        // and any honest executor's local view.
        std::size_t count_divergence() const
        {
            std::set<ObjectId> bad;
            for (const auto &[id, obj] : ord_.ledger.objects)
            {
                auto r = store_.read(id);
                if (r.version != obj.version || crypto::hash(r.value) != obj.digest)
                {
                    bad.insert(id);
                }
                const auto &hist = history_.at(id);
                if (hist.size() != obj.version || hist.back() != obj.digest)
                {
                    bad.insert(id);
                }
                if (auto it = storage_history_.find(id); it != storage_history_.end())
                {
                    if (!std::equal(it->second.begin(), it->second.end(), hist.begin() + 1))
                    {
                        bad.insert(id);
                    }
                }
            }
            for (std::size_t i = 0; i < nodes_.size(); ++i)
            {
                if (faults_.worst(nodes_[i].origin) != simnet::FaultMode::honest)
                {
                    continue;
                }
                for (const auto &[g, st] : nodes_[i].per_group)
                {
                    for (const auto &[id, obj] : st.local)
                    {
                        auto h = history_.find(id);
                        if (h == history_.end() || obj.version == 0 || obj.version > h->second.size() ||
                            h->second[obj.version - 1] != obj.digest)
                        {
                            bad.insert(id);
                        }
                    }
                }
            }
            return bad.size();
        }

        ExperimentConfig cfg_;
        std::unique_ptr<crypto::SignatureScheme> scheme_;
        simnet::Simulator sim_;
        simnet::LatencyModel lat_;
        simnet::FaultRegistry faults_;
        ordering::OrderingState ord_;
        ordering::PendingQueue pending_;
        ordering::ConsensusCommittee committee_;
        ordering::GroupRoster roster_;
        storage::ShardedStore store_;
        std::vector<storage::GroupCache> caches_;
        membership::GroupAssignment assignment_;
        std::vector<PhysNode> nodes_;
        std::map<crypto::PublicKey, std::size_t> node_by_key_;
        std::map<AccountId, crypto::KeyPair> client_keys_;
        std::map<AccountId, std::uint64_t> balance_version_;
        std::vector<Transaction> txs_;
        std::vector<std::pair<simnet::TimeUs, std::size_t>> arrivals_;
        std::size_t next_arrival_ = 0;
        std::map<Key, std::shared_ptr<BlockTrack>> tracks_;
        std::vector<ResultBlock> cn_inbox_;
        std::map<GroupIndex, std::map<SequenceNumber, ResultBlock>> future_;
        std::size_t in_transit_results_ = 0;
        simnet::TimeUs cn_verify_busy_ = 0;
        std::vector<simnet::TimeUs> group_expected_;
        std::vector<double> group_busy_us_;
        std::map<ObjectId, std::vector<Digest>> history_;
        std::map<ObjectId, std::vector<Digest>> storage_history_;
        std::size_t quorum_ = 1;
        simnet::TimeUs last_confirm_us_ = 0;
        RunResult result_;
    };

    inline RunResult run_saber(const ExperimentConfig &cfg, std::vector<Transaction> txs)
    {
        SaberSimulation sim(cfg, std::move(txs));
        return sim.run();
    }
} // namespace saber::harness

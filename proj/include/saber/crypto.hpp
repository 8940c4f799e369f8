#pragma once

#include "saber/common.hpp"

#include <sodium.h>

#include <algorithm>
#include <compare>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace saber::crypto
{
    namespace detail
    {
        inline void ensure_sodium()
        {
            static const int rc = sodium_init();
            if (rc < 0)
            {
                throw std::runtime_error("libsodium initialisation failed");
            }
        }
    } // namespace detail

    // Incremental SHA-256; the only hash used anywhere in the protocol.
    class Sha256
    {
    public:
        Sha256()
        {
            detail::ensure_sodium();
            crypto_hash_sha256_init(&state_);
        }

        Sha256 &update(ByteView data)
        {
            crypto_hash_sha256_update(&state_, data.data(), data.size());
            return *this;
        }

        Sha256 &update(std::string_view s)
        {
            return update(ByteView(reinterpret_cast<const std::uint8_t *>(s.data()), s.size()));
        }

        Sha256 &update_u64(std::uint64_t v)
        {
            std::uint8_t buf[8];
            for (int i = 0; i < 8; ++i)
            {
                buf[i] = static_cast<std::uint8_t>(v >> (56 - 8 * i));
            }
            return update(ByteView(buf, 8));
        }

        Digest finish()
        {
            Digest d{};
            crypto_hash_sha256_final(&state_, d.data());
            return d;
        }

    private:
        crypto_hash_sha256_state state_{};
    };

    inline Digest hash(ByteView data) { return Sha256().update(data).finish(); }

    inline Digest hash(std::string_view s) { return Sha256().update(s).finish(); }

    struct PublicKey
    {
        Bytes bytes;

        auto operator<=>(const PublicKey &) const = default;
        bool operator==(const PublicKey &) const = default;
    };

    struct KeyPair
    {
        PublicKey public_key;
        Bytes secret_key;
    };

    struct Signature
    {
        Bytes bytes;
        PublicKey signer;
    };

    // Constituent signatures in signer-list order plus the participation bitmap.
    struct MultiSignature
    {
        std::vector<Bytes> parts;
        std::vector<bool> bitmap;

        std::size_t signer_count() const
        {
            return static_cast<std::size_t>(std::count(bitmap.begin(), bitmap.end(), true));
        }

        bool operator==(const MultiSignature &) const = default;
    };

    class SignatureScheme
    {
    public:
        virtual ~SignatureScheme() = default;

        virtual std::string_view name() const noexcept = 0;
        virtual KeyPair key_gen(std::uint64_t seed) = 0;
        virtual Bytes sign_bytes(const KeyPair &kp, ByteView msg) const = 0;
        virtual bool verify_bytes(const PublicKey &pk, ByteView msg, ByteView sig) const = 0;
    };

    // Keyed-digest backend. Signatures are SHA-256(secret ‖ msg); verification
    // re-derives them through the directory of keys this instance generated, so
    // a key that was never produced by key_gen verifies nothing.
    class DigestScheme final : public SignatureScheme
    {
    public:
        std::string_view name() const noexcept override { return "digest"; }

        KeyPair key_gen(std::uint64_t seed) override
        {
            Digest sk = Sha256().update("saber/digest/sk").update_u64(seed).finish();
            Digest pk = Sha256().update("saber/digest/pk").update(sk).finish();
            KeyPair kp{PublicKey{Bytes(pk.begin(), pk.end())}, Bytes(sk.begin(), sk.end())};
            std::unique_lock lock(mutex_);
            directory_.emplace(kp.public_key.bytes, kp.secret_key);
            return kp;
        }

        Bytes sign_bytes(const KeyPair &kp, ByteView msg) const override
        {
            Digest d = Sha256().update("saber/digest/sig").update(kp.secret_key).update(msg).finish();
            return Bytes(d.begin(), d.end());
        }

        bool verify_bytes(const PublicKey &pk, ByteView msg, ByteView sig) const override
        {
            std::shared_lock lock(mutex_);
            auto it = directory_.find(pk.bytes);
            if (it == directory_.end())
            {
                return false;
            }
            Digest d = Sha256().update("saber/digest/sig").update(it->second).update(msg).finish();
            return sig.size() == d.size() && std::equal(d.begin(), d.end(), sig.begin());
        }

    private:
        mutable std::shared_mutex mutex_;
        std::map<Bytes, Bytes> directory_;
    };

    // Ed25519 via libsodium; keys are derived from SHA-256 of the seed.
    class Ed25519Scheme final : public SignatureScheme
    {
    public:
        Ed25519Scheme() { detail::ensure_sodium(); }

        std::string_view name() const noexcept override { return "ed25519"; }

        KeyPair key_gen(std::uint64_t seed) override
        {
            Digest s = Sha256().update("saber/ed25519/seed").update_u64(seed).finish();
            Bytes pk(crypto_sign_PUBLICKEYBYTES);
            Bytes sk(crypto_sign_SECRETKEYBYTES);
            crypto_sign_seed_keypair(pk.data(), sk.data(), s.data());
            return KeyPair{PublicKey{std::move(pk)}, std::move(sk)};
        }

        Bytes sign_bytes(const KeyPair &kp, ByteView msg) const override
        {
            Bytes sig(crypto_sign_BYTES);
            crypto_sign_detached(sig.data(), nullptr, msg.data(), msg.size(), kp.secret_key.data());
            return sig;
        }

        bool verify_bytes(const PublicKey &pk, ByteView msg, ByteView sig) const override
        {
            if (sig.size() != crypto_sign_BYTES || pk.bytes.size() != crypto_sign_PUBLICKEYBYTES)
            {
                return false;
            }
            return crypto_sign_verify_detached(sig.data(), msg.data(), msg.size(), pk.bytes.data()) == 0;
        }
    };

    inline std::unique_ptr<SignatureScheme> make_scheme(std::string_view backend)
    {
        if (backend == "digest")
        {
            return std::make_unique<DigestScheme>();
        }
        if (backend == "ed25519")
        {
            return std::make_unique<Ed25519Scheme>();
        }
        throw Error(ErrorKind::parameter, "unknown signature backend '" + std::string(backend) + "'");
    }

    inline KeyPair key_gen(SignatureScheme &scheme, std::uint64_t seed) { return scheme.key_gen(seed); }

    inline Signature sign(const SignatureScheme &scheme, const KeyPair &kp, ByteView msg)
    {
        return Signature{scheme.sign_bytes(kp, msg), kp.public_key};
    }

    inline bool verify(const SignatureScheme &scheme, const PublicKey &pk, ByteView msg, const Signature &sig)
    {
        return sig.signer == pk && scheme.verify_bytes(pk, msg, sig.bytes);
    }

    inline MultiSignature aggregate(std::span<const Signature> sigs, std::span<const PublicKey> signer_list)
    {
        MultiSignature out;
        out.bitmap.assign(signer_list.size(), false);
        std::vector<const Bytes *> slot(signer_list.size(), nullptr);
        for (const auto &s : sigs)
        {
            auto it = std::find(signer_list.begin(), signer_list.end(), s.signer);
            if (it == signer_list.end())
            {
                throw Error(ErrorKind::membership, "signer is not in the signer list");
            }
            auto idx = static_cast<std::size_t>(it - signer_list.begin());
            if (out.bitmap[idx])
            {
                throw Error(ErrorKind::duplicate, "signer contributed twice");
            }
            out.bitmap[idx] = true;
            slot[idx] = &s.bytes;
        }
        for (auto *p : slot)
        {
            if (p != nullptr)
            {
                out.parts.push_back(*p);
            }
        }
        return out;
    }

    inline bool verify_aggregate(const SignatureScheme &scheme, std::span<const PublicKey> signer_list,
                                 const MultiSignature &msig, ByteView msg)
    {
        if (msig.bitmap.size() != signer_list.size())
        {
            throw Error(ErrorKind::shape, "bitmap length " + std::to_string(msig.bitmap.size()) +
                                              " != signer list length " + std::to_string(signer_list.size()));
        }
        if (msig.parts.size() != msig.signer_count() || msig.parts.empty())
        {
            return false;
        }
        std::size_t part = 0;
        for (std::size_t i = 0; i < signer_list.size(); ++i)
        {
            if (!msig.bitmap[i])
            {
                continue;
            }
            if (!scheme.verify_bytes(signer_list[i], msg, msig.parts[part++]))
            {
                return false;
            }
        }
        return true;
    }

    // verify_aggregate plus a minimum participation count.
    inline bool verify_threshold(const SignatureScheme &scheme, std::span<const PublicKey> signer_list,
                                 const MultiSignature &msig, ByteView msg, std::size_t min_signers)
    {
        if (msig.bitmap.size() != signer_list.size())
        {
            return false;
        }
        return msig.signer_count() >= min_signers && verify_aggregate(scheme, signer_list, msig, msg);
    }

    inline std::vector<PublicKey> public_keys(std::span<const KeyPair> kps)
    {
        std::vector<PublicKey> out;
        out.reserve(kps.size());
        for (const auto &kp : kps)
        {
            out.push_back(kp.public_key);
        }
        return out;
    }
} // namespace saber::crypto

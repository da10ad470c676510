//! secp256k1 accounts and ECDSA over 32-byte digests (RFC 6979 nonces).

use std::fmt;

use k256::ecdsa::signature::hazmat::{PrehashSigner, PrehashVerifier};
use k256::ecdsa::{Signature as EcdsaSignature, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::corpus::SourceId;
use crate::{Error, Result};

/// Compressed SEC1 public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; 33]);

/// Fixed-width `r || s` ECDSA signature.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

macro_rules! hex_bytes {
    ($ty:ident, $n:expr) => {
        impl $ty {
            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self> {
                let v = hex::decode(s).map_err(|e| Error::validation(format!("bad hex: {e}")))?;
                let arr: [u8; $n] = v
                    .try_into()
                    .map_err(|v: Vec<u8>| Error::validation(format!("expected {} bytes, got {}", $n, v.len())))?;
                Ok($ty(arr))
            }
        }

        impl fmt::Debug for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($ty), self.to_hex())
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                $ty::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_bytes!(PublicKey, 33);
hex_bytes!(Signature, 64);

/// 32-byte hash rendered as hex in serialized form.
pub mod hex32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        v.try_into().map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

impl PublicKey {
    pub fn is_valid(&self) -> bool {
        VerifyingKey::from_sec1_bytes(&self.0).is_ok()
    }
}

/// A data source's key pair.
#[derive(Clone)]
pub struct Account {
    key: SigningKey,
}

impl fmt::Debug for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Account({})", self.public_key())
    }
}

impl Account {
    pub fn from_secret_bytes(bytes: &[u8; 32]) -> Result<Self> {
        SigningKey::from_slice(bytes)
            .map(|key| Account { key })
            .map_err(|_| Error::validation("secret key is zero or not below the group order"))
    }

    /// Deterministic key for `source` under `seed`; rehashes with a counter
    /// until the candidate scalar is valid.
    pub fn derive(seed: u64, source: SourceId) -> Self {
        for counter in 0u32.. {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(b"account");
            h.update(source.0.to_le_bytes());
            h.update(counter.to_le_bytes());
            let bytes: [u8; 32] = h.finalize().into();
            if let Ok(acct) = Account::from_secret_bytes(&bytes) {
                return acct;
            }
        }
        unreachable!("key derivation exhausted its counter")
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.key.to_bytes().into()
    }

    pub fn public_key(&self) -> PublicKey {
        let point = self.key.verifying_key().to_encoded_point(true);
        let mut out = [0u8; 33];
        out.copy_from_slice(point.as_bytes());
        PublicKey(out)
    }

    pub fn sign(&self, digest: &[u8; 32]) -> Signature {
        let sig: EcdsaSignature = self
            .key
            .sign_prehash(digest)
            .expect("signing a 32-byte prehash cannot fail");
        Signature(sig.to_bytes().into())
    }
}

pub fn sign_state(account: &Account, digest: &[u8; 32]) -> Signature {
    account.sign(digest)
}

/// False for malformed keys or signatures as well as for mismatches.
pub fn verify(public_key: &PublicKey, digest: &[u8; 32], signature: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_sec1_bytes(&public_key.0) else {
        return false;
    };
    let Ok(sig) = EcdsaSignature::from_slice(&signature.0) else {
        return false;
    };
    vk.verify_prehash(digest, &sig).is_ok()
}

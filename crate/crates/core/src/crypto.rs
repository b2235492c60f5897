//! Signatures sized by digest class, and the identity directory that maps
//! each node to its verification material.
//!
//! Signing is a keyed digest `H(message || signing_key)` where `H` is the
//! genuine MD5, SHA-1 or SHA-256 function, so every signature is exactly
//! `digest_size` bytes. Verification goes through the [`Directory`], which
//! plays the trusted key-distribution role: a [`VerifyingKey`] wraps material
//! that never leaves this module, so code outside it can neither read nor
//! forge another node's signature.

use std::collections::BTreeMap;
use std::fmt;

use md5::Md5;
use rand::RngCore;
use sha1::Sha1;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("cannot sign an empty message")]
    EmptyMessage,
    #[error("node {0} is already registered")]
    DuplicateIdentity(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DigestAlgo {
    Md5,
    Sha1,
    Sha256,
}

impl DigestAlgo {
    pub const ALL: [DigestAlgo; 3] = [DigestAlgo::Md5, DigestAlgo::Sha1, DigestAlgo::Sha256];

    pub const fn digest_size(self) -> usize {
        match self {
            DigestAlgo::Md5 => 16,
            DigestAlgo::Sha1 => 20,
            DigestAlgo::Sha256 => 32,
        }
    }

    pub fn from_digest_size(size: usize) -> Option<Self> {
        DigestAlgo::ALL.into_iter().find(|a| a.digest_size() == size)
    }

    /// Wire code used in packet headers.
    pub const fn code(self) -> u8 {
        match self {
            DigestAlgo::Md5 => 1,
            DigestAlgo::Sha1 => 2,
            DigestAlgo::Sha256 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        DigestAlgo::ALL.into_iter().find(|a| a.code() == code)
    }

    pub const fn name(self) -> &'static str {
        match self {
            DigestAlgo::Md5 => "MD5",
            DigestAlgo::Sha1 => "SHA-1",
            DigestAlgo::Sha256 => "SHA-256",
        }
    }

    /// Accepts the display name or a lowercase short form (`md5`, `sha1`, `sha256`).
    pub fn parse(s: &str) -> Option<Self> {
        let norm: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "md5" => Some(DigestAlgo::Md5),
            "sha1" => Some(DigestAlgo::Sha1),
            "sha256" => Some(DigestAlgo::Sha256),
            _ => None,
        }
    }

    fn keyed_digest(self, message: &[u8], key: &[u8; KEY_LEN]) -> Vec<u8> {
        match self {
            DigestAlgo::Md5 => Md5::new()
                .chain_update(message)
                .chain_update(key)
                .finalize()
                .to_vec(),
            DigestAlgo::Sha1 => Sha1::new()
                .chain_update(message)
                .chain_update(key)
                .finalize()
                .to_vec(),
            DigestAlgo::Sha256 => Sha256::new()
                .chain_update(message)
                .chain_update(key)
                .finalize()
                .to_vec(),
        }
    }
}

impl fmt::Display for DigestAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

const KEY_LEN: usize = 32;

#[derive(Clone, PartialEq, Eq)]
pub struct SigningKey([u8; KEY_LEN]);

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SigningKey(..)")
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct VerifyingKey([u8; KEY_LEN]);

impl fmt::Debug for VerifyingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("VerifyingKey(..)")
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    node: NodeId,
    signing_key: SigningKey,
    verifying_key: VerifyingKey,
}

impl KeyPair {
    pub fn generate<R: RngCore + ?Sized>(node: NodeId, rng: &mut R) -> Self {
        let mut seed = [0u8; KEY_LEN];
        rng.fill_bytes(&mut seed);
        KeyPair::from_seed(node, seed)
    }

    pub fn from_seed(node: NodeId, seed: [u8; KEY_LEN]) -> Self {
        KeyPair {
            node,
            signing_key: SigningKey(seed),
            verifying_key: VerifyingKey(seed),
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn verifying_key(&self) -> &VerifyingKey {
        &self.verifying_key
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    pub signer: NodeId,
    pub bytes: Vec<u8>,
}

impl Signature {
    /// Digest class implied by the signature length, if it is a valid one.
    pub fn algo(&self) -> Option<DigestAlgo> {
        DigestAlgo::from_digest_size(self.bytes.len())
    }
}

pub fn sign(key: &KeyPair, message: &[u8], algo: DigestAlgo) -> Result<Signature, CryptoError> {
    if message.is_empty() {
        return Err(CryptoError::EmptyMessage);
    }
    Ok(Signature {
        signer: key.node,
        bytes: algo.keyed_digest(message, &key.signing_key.0),
    })
}

/// Result of checking one signature against the directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigCheck {
    Valid,
    Invalid,
    UnknownSigner,
}

impl SigCheck {
    pub fn is_valid(self) -> bool {
        self == SigCheck::Valid
    }
}

pub fn check(dir: &Directory, sig: &Signature, message: &[u8], algo: DigestAlgo) -> SigCheck {
    let Some(vk) = dir.get(sig.signer) else {
        return SigCheck::UnknownSigner;
    };
    if sig.bytes.len() != algo.digest_size() || message.is_empty() {
        return SigCheck::Invalid;
    }
    if algo.keyed_digest(message, &vk.0) == sig.bytes {
        SigCheck::Valid
    } else {
        SigCheck::Invalid
    }
}

/// `true` iff `sig` was made by the key registered for `sig.signer` over
/// exactly `message`. Use [`check`] to tell an unknown signer from a bad
/// signature.
pub fn verify(dir: &Directory, sig: &Signature, message: &[u8], algo: DigestAlgo) -> bool {
    check(dir, sig, message, algo).is_valid()
}

/// One verification key per node; registration of an existing id fails.
#[derive(Debug, Clone, Default)]
pub struct Directory {
    keys: BTreeMap<NodeId, VerifyingKey>,
}

impl Directory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, node: NodeId, key: VerifyingKey) -> Result<(), CryptoError> {
        if self.keys.contains_key(&node) {
            return Err(CryptoError::DuplicateIdentity(node));
        }
        self.keys.insert(node, key);
        Ok(())
    }

    pub fn enroll(&mut self, keys: &KeyPair) -> Result<(), CryptoError> {
        self.register(keys.node, keys.verifying_key.clone())
    }

    pub fn get(&self, node: NodeId) -> Option<&VerifyingKey> {
        self.keys.get(&node)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.keys.contains_key(&node)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.keys.keys().copied()
    }
}

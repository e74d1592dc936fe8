//! Prime-order groups, Diffie-Hellman key pairs and the 32-bit pairwise
//! masks used for zero-sum blinding.
//!
//! Two groups are wired in: Ristretto255 (the prime-order group built on
//! Curve25519, 32-byte encodings) for the blinding protocol, and NIST P-224
//! (29-byte compressed encodings) for the homomorphic scheme. Both are used
//! through [`CryptoGroup`], so every protocol is generic over the choice.

use std::fmt::Debug;

use ff::{Field, PrimeField};
use group::{Group, GroupEncoding};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use curve25519_dalek::ristretto::RistrettoPoint as Ristretto255;
pub use p224::ProjectivePoint as P224;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("point encoding has {got} bytes, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("bytes do not encode a valid {0} element")]
    InvalidPoint(&'static str),
}

/// Largest encoded point length across supported groups; fixed-size lookup
/// keys are zero-padded to this.
pub const MAX_ENCODED_LEN: usize = 32;

/// Fixed-width, zero-padded canonical encoding of a group element.
pub type PointKey = [u8; MAX_ENCODED_LEN];

pub trait CryptoGroup: Group + GroupEncoding + Debug + Send + Sync + 'static {
    const NAME: &'static str;
    /// Length of the canonical compressed encoding.
    const ENCODED_LEN: usize;

    /// Little-endian bytes of a scalar, zero-padded to 32 bytes.
    fn scalar_le_bytes(s: &Self::Scalar) -> [u8; 32];

}

impl CryptoGroup for Ristretto255 {
    const NAME: &'static str = "ristretto255";
    const ENCODED_LEN: usize = 32;

    fn scalar_le_bytes(s: &Self::Scalar) -> [u8; 32] {
        s.to_bytes()
    }
}

impl CryptoGroup for P224 {
    const NAME: &'static str = "p224";
    const ENCODED_LEN: usize = 29;

    fn scalar_le_bytes(s: &Self::Scalar) -> [u8; 32] {
        let be = s.to_repr();
        let mut out = [0u8; 32];
        for (o, b) in out.iter_mut().zip(be.iter().rev()) {
            *o = *b;
        }
        out
    }
}

/// Canonical compressed encoding.
pub fn encode_point<G: CryptoGroup>(p: &G) -> Vec<u8> {
    p.to_bytes().as_ref().to_vec()
}

pub fn point_key<G: CryptoGroup>(p: &G) -> PointKey {
    let repr = p.to_bytes();
    let mut key = [0u8; MAX_ENCODED_LEN];
    key[..G::ENCODED_LEN].copy_from_slice(repr.as_ref());
    key
}

pub fn decode_point<G: CryptoGroup>(bytes: &[u8]) -> Result<G, GroupError> {
    let mut repr = G::Repr::default();
    if repr.as_ref().len() != bytes.len() {
        return Err(GroupError::Length { expected: repr.as_ref().len(), got: bytes.len() });
    }
    repr.as_mut().copy_from_slice(bytes);
    Option::from(G::from_bytes(&repr)).ok_or(GroupError::InvalidPoint(G::NAME))
}

/// Scalar for a signed small integer.
pub fn scalar_from_i64<S: PrimeField>(v: i64) -> S {
    let mag = S::from(v.unsigned_abs());
    if v < 0 {
        -mag
    } else {
        mag
    }
}

pub fn random_nonzero_scalar<S: Field>(rng: &mut (impl RngCore + CryptoRng)) -> S {
    loop {
        let s = S::random(&mut *rng);
        if !bool::from(s.is_zero()) {
            return s;
        }
    }
}

/// Deterministic map from a domain-separation string to a group element
/// whose discrete log nobody knows: hash `domain ∥ counter` until the digest
/// bytes decode to a non-identity point.
pub fn hash_to_group<G: CryptoGroup>(domain: &[u8]) -> G {
    let len = G::ENCODED_LEN;
    for counter in 0u32.. {
        let mut bytes = Vec::with_capacity(len + 32);
        let mut block = 0u8;
        while bytes.len() < len {
            let mut h = Sha256::new();
            h.update(domain);
            h.update(counter.to_be_bytes());
            h.update([block]);
            bytes.extend_from_slice(&h.finalize());
            block += 1;
        }
        if let Ok(p) = decode_point::<G>(&bytes[..len]) {
            if !bool::from(p.is_identity()) {
                return p;
            }
        }
    }
    unreachable!("counter space exhausted")
}

/// Windowed precomputation for repeated multiplication of one fixed point:
/// `rows[i][j] = j · 256^i · P`, so a product costs at most 32 additions.
#[derive(Debug, Clone)]
pub struct FixedBase<G: CryptoGroup> {
    rows: Vec<Vec<G>>,
}

impl<G: CryptoGroup> FixedBase<G> {
    pub fn new(base: G) -> Self {
        let mut rows = Vec::with_capacity(32);
        let mut b = base;
        for _ in 0..32 {
            let mut row = Vec::with_capacity(256);
            let mut acc = G::identity();
            for _ in 0..256 {
                row.push(acc);
                acc += b;
            }
            rows.push(row);
            b = acc;
        }
        FixedBase { rows }
    }

    pub fn base(&self) -> G {
        self.rows[0][1]
    }

    pub fn mul(&self, s: &G::Scalar) -> G {
        let bytes = G::scalar_le_bytes(s);
        let mut acc = G::identity();
        for (row, &byte) in self.rows.iter().zip(bytes.iter()) {
            if byte != 0 {
                acc += row[byte as usize];
            }
        }
        acc
    }
}

/// A private scalar `x ∈ [1, q−1]` and its public element `g^x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyPair<G: CryptoGroup> {
    secret: G::Scalar,
    public: G,
}

impl<G: CryptoGroup> KeyPair<G> {
    pub fn generate(rng: &mut (impl RngCore + CryptoRng)) -> Self {
        Self::from_secret(random_nonzero_scalar(rng)).expect("nonzero by construction")
    }

    /// `None` for the zero scalar.
    pub fn from_secret(secret: G::Scalar) -> Option<Self> {
        if bool::from(secret.is_zero()) {
            return None;
        }
        Some(KeyPair { secret, public: G::generator() * secret })
    }

    pub fn secret(&self) -> &G::Scalar {
        &self.secret
    }

    pub fn public(&self) -> G {
        self.public
    }

    /// `their_public^x`; symmetric between the two parties.
    pub fn shared_point(&self, their_public: &G) -> G {
        *their_public * self.secret
    }

    /// [`shared_point`](Self::shared_point) on a received encoding.
    pub fn shared_point_from_bytes(&self, their_public: &[u8]) -> Result<G, GroupError> {
        Ok(self.shared_point(&decode_point::<G>(their_public)?))
    }
}

pub fn keygen<G: CryptoGroup>(rng: &mut (impl RngCore + CryptoRng)) -> KeyPair<G> {
    KeyPair::generate(rng)
}

/// `H(shared ∥ ℓ ∥ s)` reduced to 32 bits: SHA-256 over the compressed point,
/// then the big-endian 4-byte cell index and round, keeping the low 32 bits
/// (the last four digest bytes, big-endian).
pub fn mask32<G: CryptoGroup>(shared: &G, ell: u32, round: u32) -> u32 {
    MaskDeriver::new(shared).mask(ell, round)
}

/// [`mask32`] with the point encoding done once per peer.
///
/// Encodings of up to 47 bytes leave the message in one padded block, which
/// is compressed directly from the initial state.
#[derive(Debug, Clone)]
pub struct MaskDeriver {
    inner: Deriver,
}

#[derive(Debug, Clone)]
enum Deriver {
    Block { block: [u8; 64], at: usize },
    Stream(Sha256),
}

const SHA256_IV: [u32; 8] = [
    0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
];

impl MaskDeriver {
    pub fn new<G: CryptoGroup>(shared: &G) -> Self {
        Self::from_encoded(shared.to_bytes().as_ref())
    }

    pub fn from_encoded(shared: &[u8]) -> Self {
        let n = shared.len();
        let inner = if n + 8 + 9 <= 64 {
            let mut block = [0u8; 64];
            block[..n].copy_from_slice(shared);
            block[n + 8] = 0x80;
            block[56..].copy_from_slice(&(((n + 8) * 8) as u64).to_be_bytes());
            Deriver::Block { block, at: n }
        } else {
            let mut h = Sha256::new();
            h.update(shared);
            Deriver::Stream(h)
        };
        MaskDeriver { inner }
    }

    pub fn mask(&self, ell: u32, round: u32) -> u32 {
        match &self.inner {
            Deriver::Block { block, at } => {
                let mut b = *block;
                b[*at..*at + 4].copy_from_slice(&ell.to_be_bytes());
                b[*at + 4..*at + 8].copy_from_slice(&round.to_be_bytes());
                let mut state = SHA256_IV;
                sha2::compress256(&mut state, &[b.into()]);
                state[7]
            }
            Deriver::Stream(prefix) => {
                let mut h = prefix.clone();
                h.update(ell.to_be_bytes());
                h.update(round.to_be_bytes());
                let d = h.finalize();
                u32::from_be_bytes([d[28], d[29], d[30], d[31]])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn dh_laws<G: CryptoGroup>() {
        let a = KeyPair::<G>::generate(&mut rng(1));
        let b = KeyPair::<G>::generate(&mut rng(2));
        let c = KeyPair::<G>::generate(&mut rng(3));
        assert_eq!(a.shared_point(&b.public()), b.shared_point(&a.public()));
        assert_eq!(a.public(), G::generator() * a.secret());
        assert_ne!(a.secret(), b.secret());

        let ab = a.shared_point(&b.public());
        let ac = a.shared_point(&c.public());
        let bc = b.shared_point(&c.public());
        assert!(ab != ac && ab != bc && ac != bc);

        // Peer whose private key is 1 publishes g itself.
        let one = KeyPair::<G>::from_secret(G::Scalar::ONE).unwrap();
        assert_eq!(a.shared_point(&one.public()), a.public());
        assert!(KeyPair::<G>::from_secret(G::Scalar::ZERO).is_none());
    }

    #[test]
    fn ristretto_dh() {
        dh_laws::<Ristretto255>();
    }

    #[test]
    fn p224_dh() {
        dh_laws::<P224>();
    }

    #[test]
    fn keygen_is_deterministic_under_seed() {
        let a = keygen::<Ristretto255>(&mut rng(42));
        let b = keygen::<Ristretto255>(&mut rng(42));
        assert_eq!(a, b);
    }

    fn encoding_round_trip<G: CryptoGroup>() {
        let k = KeyPair::<G>::generate(&mut rng(5));
        let bytes = encode_point(&k.public());
        assert_eq!(bytes.len(), G::ENCODED_LEN);
        assert_eq!(decode_point::<G>(&bytes).unwrap(), k.public());
        assert!(matches!(decode_point::<G>(&bytes[1..]), Err(GroupError::Length { .. })));
        let shared = k.shared_point_from_bytes(&bytes).unwrap();
        assert_eq!(shared, k.public() * k.secret());
    }

    #[test]
    fn encodings() {
        encoding_round_trip::<Ristretto255>();
        encoding_round_trip::<P224>();
        assert!(decode_point::<Ristretto255>(&[0xff; 32]).is_err());
        let mut bad = [0u8; 29];
        bad[0] = 0x07;
        assert!(decode_point::<P224>(&bad).is_err());
    }

    fn fixed_base_agrees<G: CryptoGroup>() {
        let k = KeyPair::<G>::generate(&mut rng(9));
        let table = FixedBase::new(k.public());
        assert_eq!(table.base(), k.public());
        let mut r = rng(10);
        for _ in 0..20 {
            let s = G::Scalar::random(&mut r);
            assert_eq!(table.mul(&s), k.public() * s);
        }
        assert_eq!(table.mul(&G::Scalar::ZERO), G::identity());
        assert_eq!(table.mul(&-G::Scalar::ONE), -k.public());
    }

    #[test]
    fn fixed_base_tables() {
        fixed_base_agrees::<Ristretto255>();
        fixed_base_agrees::<P224>();
    }

    #[test]
    fn hash_to_group_is_stable_and_independent_of_generator() {
        let a = hash_to_group::<P224>(b"test-domain");
        assert_eq!(a, hash_to_group::<P224>(b"test-domain"));
        assert_ne!(a, hash_to_group::<P224>(b"other-domain"));
        assert_ne!(a, P224::generator());
        let r = hash_to_group::<Ristretto255>(b"test-domain");
        assert_ne!(r, Ristretto255::generator());
    }

    #[test]
    fn signed_scalars() {
        let g = P224::generator();
        assert_eq!(g * scalar_from_i64::<p224::Scalar>(-3) + g * scalar_from_i64::<p224::Scalar>(3), P224::identity());
        assert_eq!(g * scalar_from_i64::<p224::Scalar>(0), P224::identity());
    }

    #[test]
    fn mask_properties() {
        let a = KeyPair::<Ristretto255>::generate(&mut rng(1));
        let b = KeyPair::<Ristretto255>::generate(&mut rng(2));
        let shared = a.shared_point(&b.public());
        assert_eq!(mask32(&shared, 7, 3), mask32(&shared, 7, 3));
        assert_ne!(mask32(&shared, 0, 3), mask32(&shared, 1, 3));
        let d = MaskDeriver::new(&shared);
        let changed = (0..4896u32).filter(|&l| d.mask(l, 3) != d.mask(l, 4)).count();
        assert_eq!(changed, 4896);
    }

    #[test]
    fn mask_golden_vector() {
        // Secrets 2 and 3: shared point is 6·B, whose encoding is the published
        // Ristretto255 test vector. Digest recomputed
        // over the canonical encoding ∥ be32(ℓ) ∥ be32(s).
        let a = KeyPair::<Ristretto255>::from_secret(curve25519_dalek::Scalar::from(2u64)).unwrap();
        let b = KeyPair::<Ristretto255>::from_secret(curve25519_dalek::Scalar::from(3u64)).unwrap();
        let shared = a.shared_point(&b.public());
        let mut msg = encode_point(&shared);
        msg.extend_from_slice(&5u32.to_be_bytes());
        msg.extend_from_slice(&9u32.to_be_bytes());
        let digest = Sha256::digest(&msg);
        let expected = u32::from_be_bytes(digest[28..32].try_into().unwrap());
        assert_eq!(mask32(&shared, 5, 9), expected);
        assert_eq!(
            hex_encode(&encode_point(&shared)),
            "f64746d3c92b13050ed8d80236a7f0007c3b3f962f5ba793d19a601ebb1df403"
        );
    }

    #[test]
    fn block_path_matches_digest() {
        for n in [0usize, 1, 29, 32, 47, 48, 64, 100] {
            let shared: Vec<u8> = (0..n as u8).map(|i| i.wrapping_mul(37)).collect();
            let d = MaskDeriver::from_encoded(&shared);
            for (ell, round) in [(0u32, 0u32), (1, 2), (4895, 7), (u32::MAX, u32::MAX)] {
                let mut msg = shared.clone();
                msg.extend_from_slice(&ell.to_be_bytes());
                msg.extend_from_slice(&round.to_be_bytes());
                let digest = Sha256::digest(&msg);
                assert_eq!(d.mask(ell, round), u32::from_be_bytes(digest[28..32].try_into().unwrap()), "len {n}");
            }
        }
    }

    fn hex_encode(b: &[u8]) -> String {
        b.iter().map(|x| format!("{x:02x}")).collect()
    }
}

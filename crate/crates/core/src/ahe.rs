//! Additively homomorphic EC-ElGamal with threshold decryption.
//!
//! A plaintext `m` is encrypted under public key `pk` as
//! `(A, B) = (r·g1, r·pk + m·g2)` (additive notation). Adding ciphertexts
//! adds plaintexts. Each authority `i` holds `x_i` with `pk_i = x_i·g1`; the
//! encryption key is `pk = Σ pk_i`, and decryption needs every partial
//! `x_i·A`. The result `m·g2` is mapped back to `m` with a precomputed table
//! over `[−B, B]`.

use std::collections::HashMap;
use std::ops::{Add, AddAssign, Neg, Sub};

use ff::Field;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::group_crypto::{
    decode_point, encode_point, hash_to_group, point_key, random_nonzero_scalar, scalar_from_i64, CryptoGroup,
    FixedBase, GroupError, KeyPair, PointKey,
};
use crate::sketch::{SketchKind, SketchParams, SketchTable};

/// Domain string hashed to obtain the second generator.
pub const G2_DOMAIN: &[u8] = b"sketchagg ahe g2 v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AheError {
    #[error("decrypted point is outside the table range [-{bound}, {bound}]")]
    DecodeFailure { bound: u64 },
    #[error("expected {expected} items, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("sketch metadata differs between contributions")]
    MetadataMismatch,
    #[error("need at least one authority")]
    NoAuthorities,
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("malformed encrypted sketch: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, AheError>;

/// Public parameters: the two generators and the decryption table bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AheParams<G: CryptoGroup> {
    pub g1: G,
    pub g2: G,
    pub bound: u64,
}

impl<G: CryptoGroup> AheParams<G> {
    /// `g1` is the standard generator, `g2` is hashed from [`G2_DOMAIN`].
    pub fn new(bound: u64) -> Self {
        AheParams { g1: G::generator(), g2: hash_to_group(G2_DOMAIN), bound }
    }

    /// Bound `d · contributors · cap` for a table of depth `d` summed over
    /// `contributors` sketches whose cells are at most `cap` in magnitude.
    pub fn for_workload(depth: usize, contributors: usize, cap: u64) -> Self {
        Self::new(depth as u64 * contributors as u64 * cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ciphertext<G: CryptoGroup> {
    pub a: G,
    pub b: G,
}

impl<G: CryptoGroup> Ciphertext<G> {
    /// The trivial encryption of 0.
    pub fn zero() -> Self {
        Ciphertext { a: G::identity(), b: G::identity() }
    }

    /// Encryption of `k·m`.
    pub fn scale(&self, k: i64) -> Self {
        match k {
            0 => Self::zero(),
            1 => *self,
            -1 => -*self,
            _ => {
                let s = scalar_from_i64::<G::Scalar>(k);
                Ciphertext { a: self.a * s, b: self.b * s }
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = encode_point(&self.a);
        out.extend_from_slice(&encode_point(&self.b));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 2 * G::ENCODED_LEN {
            return Err(GroupError::Length { expected: 2 * G::ENCODED_LEN, got: bytes.len() }.into());
        }
        let (a, b) = bytes.split_at(G::ENCODED_LEN);
        Ok(Ciphertext { a: decode_point(a)?, b: decode_point(b)? })
    }
}

impl<G: CryptoGroup> Add for Ciphertext<G> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Ciphertext { a: self.a + o.a, b: self.b + o.b }
    }
}

impl<G: CryptoGroup> AddAssign for Ciphertext<G> {
    fn add_assign(&mut self, o: Self) {
        self.a += o.a;
        self.b += o.b;
    }
}

impl<G: CryptoGroup> Sub for Ciphertext<G> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Ciphertext { a: self.a - o.a, b: self.b - o.b }
    }
}

impl<G: CryptoGroup> Neg for Ciphertext<G> {
    type Output = Self;
    fn neg(self) -> Self {
        Ciphertext { a: -self.a, b: -self.b }
    }
}

/// Encrypts one value without precomputation.
pub fn encrypt<G: CryptoGroup>(
    params: &AheParams<G>,
    pk: &G,
    m: i64,
    rng: &mut (impl RngCore + CryptoRng),
) -> Ciphertext<G> {
    let r: G::Scalar = random_nonzero_scalar(rng);
    Ciphertext { a: params.g1 * r, b: *pk * r + params.g2 * scalar_from_i64::<G::Scalar>(m) }
}

/// Encryption under one key with fixed-base tables for `g1`, `pk` and `g2`,
/// plus direct lookups of `m·g2` for small `|m|`.
#[derive(Debug, Clone)]
pub struct Encryptor<G: CryptoGroup> {
    params: AheParams<G>,
    g1: FixedBase<G>,
    pk: FixedBase<G>,
    g2: FixedBase<G>,
    small: Vec<G>,
}

const SMALL_PLAINTEXTS: i64 = 64;

impl<G: CryptoGroup> Encryptor<G> {
    pub fn new(params: AheParams<G>, pk: G) -> Self {
        let mut small = Vec::with_capacity(2 * SMALL_PLAINTEXTS as usize + 1);
        let mut p = -(params.g2 * G::Scalar::from(SMALL_PLAINTEXTS as u64));
        for _ in -SMALL_PLAINTEXTS..=SMALL_PLAINTEXTS {
            small.push(p);
            p += params.g2;
        }
        Encryptor { params, g1: FixedBase::new(params.g1), pk: FixedBase::new(pk), g2: FixedBase::new(params.g2), small }
    }

    pub fn params(&self) -> &AheParams<G> {
        &self.params
    }

    pub fn public_key(&self) -> G {
        self.pk.base()
    }

    fn message_point(&self, m: i64) -> G {
        if (-SMALL_PLAINTEXTS..=SMALL_PLAINTEXTS).contains(&m) {
            self.small[(m + SMALL_PLAINTEXTS) as usize]
        } else {
            self.g2.mul(&scalar_from_i64(m))
        }
    }

    pub fn encrypt(&self, m: i64, rng: &mut (impl RngCore + CryptoRng)) -> Ciphertext<G> {
        let r: G::Scalar = random_nonzero_scalar(rng);
        Ciphertext { a: self.g1.mul(&r), b: self.pk.mul(&r) + self.message_point(m) }
    }
}

/// Encryption of `Σ coeffs[k]·m_k`.
pub fn homomorphic_combine<G: CryptoGroup>(cts: &[Ciphertext<G>], coeffs: &[i64]) -> Result<Ciphertext<G>> {
    if cts.len() != coeffs.len() {
        return Err(AheError::LengthMismatch { expected: cts.len(), got: coeffs.len() });
    }
    let mut acc = Ciphertext::zero();
    for (ct, &k) in cts.iter().zip(coeffs) {
        match k {
            0 => {}
            1 => acc += *ct,
            -1 => acc = acc - *ct,
            _ => acc += ct.scale(k),
        }
    }
    Ok(acc)
}

/// Authority `i`'s contribution `x_i·A`.
pub fn partial_decrypt<G: CryptoGroup>(ct: &Ciphertext<G>, secret: &G::Scalar) -> G {
    ct.a * *secret
}

/// Per-authority key pairs and the combined public key.
#[derive(Debug, Clone)]
pub struct ThresholdKeyMaterial<G: CryptoGroup> {
    authorities: Vec<KeyPair<G>>,
    combined: G,
}

impl<G: CryptoGroup> ThresholdKeyMaterial<G> {
    pub fn generate(n: usize, rng: &mut (impl RngCore + CryptoRng)) -> Result<Self> {
        Self::from_authorities((0..n).map(|_| KeyPair::generate(rng)).collect())
    }

    pub fn from_authorities(authorities: Vec<KeyPair<G>>) -> Result<Self> {
        if authorities.is_empty() {
            return Err(AheError::NoAuthorities);
        }
        let combined = authorities.iter().map(|k| k.public()).sum();
        Ok(ThresholdKeyMaterial { authorities, combined })
    }

    pub fn authorities(&self) -> &[KeyPair<G>] {
        &self.authorities
    }

    pub fn public_key(&self) -> G {
        self.combined
    }

    /// `x = Σ x_i`, which no single authority knows.
    pub fn virtual_secret(&self) -> G::Scalar {
        self.authorities.iter().fold(G::Scalar::ZERO, |acc, k| acc + k.secret())
    }

    pub fn partial_decryptions(&self, ct: &Ciphertext<G>) -> Vec<G> {
        self.authorities.iter().map(|k| partial_decrypt(ct, k.secret())).collect()
    }

    /// Joint decryption with every authority online.
    pub fn decrypt(&self, ct: &Ciphertext<G>, table: &DlogTable<G>) -> Result<i64> {
        combine_and_decode(ct, &self.partial_decryptions(ct), table)
    }
}

/// Map from `m·g2` to `m` for `m ∈ [−B, B]`.
#[derive(Debug, Clone)]
pub struct DlogTable<G: CryptoGroup> {
    g2: G,
    bound: u64,
    entries: HashMap<PointKey, i64>,
}

impl<G: CryptoGroup> DlogTable<G> {
    pub fn new(params: &AheParams<G>) -> Self {
        let mut entries = HashMap::with_capacity(2 * params.bound as usize + 1);
        entries.insert(point_key(&G::identity()), 0);
        let mut p = G::identity();
        for m in 1..=params.bound as i64 {
            p += params.g2;
            entries.insert(point_key(&p), m);
            entries.insert(point_key(&-p), -m);
        }
        DlogTable { g2: params.g2, bound: params.bound, entries }
    }

    pub fn bound(&self) -> u64 {
        self.bound
    }

    pub fn g2(&self) -> G {
        self.g2
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, p: &G) -> Result<i64> {
        self.entries.get(&point_key(p)).copied().ok_or(AheError::DecodeFailure { bound: self.bound })
    }
}

/// `B − Σ parts = m·g2`, then a table lookup.
pub fn combine_and_decode<G: CryptoGroup>(ct: &Ciphertext<G>, parts: &[G], table: &DlogTable<G>) -> Result<i64> {
    let shared: G = parts.iter().copied().sum();
    table.lookup(&(ct.b - shared))
}

/// Ordinary single-key decryption.
pub fn decrypt_with_secret<G: CryptoGroup>(ct: &Ciphertext<G>, secret: &G::Scalar, table: &DlogTable<G>) -> Result<i64> {
    table.lookup(&(ct.b - ct.a * *secret))
}

/// A Count Sketch (or Count-Min) table with every cell encrypted. The
/// dimensions and hash seed travel in the clear.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedSketch<G: CryptoGroup> {
    kind: SketchKind,
    params: SketchParams,
    cells: Vec<Ciphertext<G>>,
}

const MAGIC: &[u8; 4] = b"AHE1";

impl<G: CryptoGroup> EncryptedSketch<G> {
    pub fn encrypt(table: &SketchTable, enc: &Encryptor<G>, rng: &mut (impl RngCore + CryptoRng)) -> Self {
        EncryptedSketch {
            kind: table.kind(),
            params: *table.params(),
            cells: table.cells().iter().map(|&c| enc.encrypt(c, rng)).collect(),
        }
    }

    /// Encryption of an all-zero table; a neutral starting point for sums.
    pub fn zero(kind: SketchKind, params: SketchParams) -> Self {
        EncryptedSketch { kind, params, cells: vec![Ciphertext::zero(); params.len()] }
    }

    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    pub fn params(&self) -> &SketchParams {
        &self.params
    }

    pub fn cells(&self) -> &[Ciphertext<G>] {
        &self.cells
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.params.depth == other.params.depth
            && self.params.width == other.params.width
            && self.params.seed == other.params.seed
    }

    /// Cell-wise homomorphic addition.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(AheError::MetadataMismatch);
        }
        for (c, o) in self.cells.iter_mut().zip(&other.cells) {
            *c += *o;
        }
        Ok(())
    }

    /// Sum of all contributions; they must share dimensions and hash seed.
    pub fn aggregate<'a>(parts: impl IntoIterator<Item = &'a Self>) -> Result<Option<Self>> {
        let mut total: Option<Self> = None;
        for p in parts {
            match total.as_mut() {
                None => total = Some(p.clone()),
                Some(t) => t.add_assign(p)?,
            }
        }
        Ok(total)
    }

    /// Encryption of `Σ coeffs[ℓ]·X[ℓ]`.
    pub fn combine(&self, coeffs: &[i64]) -> Result<Ciphertext<G>> {
        homomorphic_combine(&self.cells, coeffs)
    }

    /// Decrypts every cell back into a plaintext table.
    pub fn decrypt(&self, keys: &ThresholdKeyMaterial<G>, table: &DlogTable<G>) -> Result<SketchTable> {
        let cells = self.cells.iter().map(|c| keys.decrypt(c, table)).collect::<Result<Vec<_>>>()?;
        SketchTable::from_cells(self.kind, self.params, cells).map_err(|e| AheError::Format(e.to_string()))
    }

    /// `"AHE1"`, kind byte, depth u32, width u32, seed u64, then two
    /// compressed points per cell. All integers big-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + self.cells.len() * 2 * G::ENCODED_LEN);
        out.extend_from_slice(MAGIC);
        out.push(match self.kind {
            SketchKind::CountMin => 0,
            SketchKind::Count => 1,
        });
        out.extend_from_slice(&(self.params.depth as u32).to_be_bytes());
        out.extend_from_slice(&(self.params.width as u32).to_be_bytes());
        out.extend_from_slice(&self.params.seed.to_be_bytes());
        for c in &self.cells {
            out.extend_from_slice(&c.encode());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| AheError::Format(m.to_string());
        if bytes.len() < 21 || &bytes[..4] != MAGIC {
            return Err(bad("missing header"));
        }
        let kind = match bytes[4] {
            0 => SketchKind::CountMin,
            1 => SketchKind::Count,
            _ => return Err(bad("unknown sketch kind")),
        };
        let depth = u32::from_be_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let width = u32::from_be_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let seed = u64::from_be_bytes(bytes[13..21].try_into().unwrap());
        let params = SketchParams::with_dims(depth, width, seed).map_err(|e| AheError::Format(e.to_string()))?;
        let body = &bytes[21..];
        let ct_len = 2 * G::ENCODED_LEN;
        if body.len() != params.len() * ct_len {
            return Err(AheError::LengthMismatch { expected: params.len() * ct_len, got: body.len() });
        }
        let cells = body.chunks_exact(ct_len).map(Ciphertext::decode).collect::<Result<Vec<_>>>()?;
        Ok(EncryptedSketch { kind, params, cells })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_crypto::{Ristretto255, P224};
    use crate::sketch::ItemKey;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    type G = Ristretto255;

    fn setup(bound: u64, n: usize, seed: u64) -> (AheParams<G>, ThresholdKeyMaterial<G>, DlogTable<G>, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params = AheParams::<G>::new(bound);
        let keys = ThresholdKeyMaterial::generate(n, &mut rng).unwrap();
        let table = DlogTable::new(&params);
        (params, keys, table, rng)
    }

    #[test]
    fn basic_identities() {
        let (params, keys, table, mut rng) = setup(100, 1, 1);
        let pk = keys.public_key();
        let dec = |c: &Ciphertext<G>| keys.decrypt(c, &table).unwrap();
        assert_eq!(dec(&encrypt(&params, &pk, 0, &mut rng)), 0);
        let a = encrypt(&params, &pk, 3, &mut rng);
        let b = encrypt(&params, &pk, 4, &mut rng);
        assert_eq!(dec(&(a + b)), 7);
        assert_eq!(dec(&(a + encrypt(&params, &pk, -3, &mut rng))), 0);
        assert_eq!(dec(&(a - b)), -1);
        assert_eq!(dec(&a.scale(-5)), -15);
        assert_eq!(dec(&Ciphertext::zero()), 0);
    }

    #[test]
    fn table_edges() {
        let (params, keys, table, mut rng) = setup(500, 3, 2);
        assert_eq!(table.len(), 1001);
        let enc = Encryptor::new(params, keys.public_key());
        for m in [-500, -499, -65, -64, 0, 64, 65, 499, 500] {
            assert_eq!(keys.decrypt(&enc.encrypt(m, &mut rng), &table).unwrap(), m);
        }
        assert_eq!(keys.decrypt(&enc.encrypt(501, &mut rng), &table), Err(AheError::DecodeFailure { bound: 500 }));
        assert!(keys.decrypt(&enc.encrypt(-501, &mut rng), &table).is_err());
    }

    #[test]
    fn fresh_randomness() {
        let (params, keys, _, mut rng) = setup(1, 1, 3);
        let enc = Encryptor::new(params, keys.public_key());
        let a = enc.encrypt(5, &mut rng);
        let b = enc.encrypt(5, &mut rng);
        assert_ne!(a.a, b.a);
        assert_ne!(a.b, b.b);
    }

    #[test]
    fn encryptor_matches_plain_encryption() {
        let (params, keys, _, _) = setup(1, 2, 4);
        let enc = Encryptor::new(params, keys.public_key());
        for m in [-1000, -3, 0, 1, 64, 65, 99_999] {
            let c1 = enc.encrypt(m, &mut ChaCha20Rng::seed_from_u64(9));
            let c2 = encrypt(&params, &keys.public_key(), m, &mut ChaCha20Rng::seed_from_u64(9));
            assert_eq!(c1, c2);
        }
    }

    #[test]
    fn threshold_matches_virtual_key() {
        let (params, keys, table, mut rng) = setup(1000, 3, 5);
        let x = keys.virtual_secret();
        assert_eq!(params.g1 * x, keys.public_key());
        let enc = Encryptor::new(params, keys.public_key());
        for _ in 0..50 {
            let m = rng.gen_range(-1000..=1000);
            let c = enc.encrypt(m, &mut rng);
            let parts = keys.partial_decryptions(&c);
            assert_eq!(parts.iter().copied().sum::<G>(), c.a * x);
            assert_eq!(combine_and_decode(&c, &parts, &table).unwrap(), m);
            assert_eq!(decrypt_with_secret(&c, &x, &table).unwrap(), m);
        }
    }

    #[test]
    fn missing_partial_fails() {
        let (params, keys, table, mut rng) = setup(1000, 3, 6);
        let enc = Encryptor::new(params, keys.public_key());
        let c = enc.encrypt(17, &mut rng);
        let parts = keys.partial_decryptions(&c);
        assert!(matches!(combine_and_decode(&c, &parts[..2], &table), Err(AheError::DecodeFailure { .. })));
    }

    #[test]
    fn combine_edge_cases() {
        let (params, keys, table, mut rng) = setup(100, 1, 7);
        let enc = Encryptor::new(params, keys.public_key());
        let cts: Vec<_> = (1..=4).map(|m| enc.encrypt(m, &mut rng)).collect();
        let z = homomorphic_combine(&cts, &[0, 0, 0, 0]).unwrap();
        assert_eq!(keys.decrypt(&z, &table).unwrap(), 0);
        let one = homomorphic_combine(&cts[..1], &[1]).unwrap();
        assert_eq!(keys.decrypt(&one, &table).unwrap(), 1);
        let mixed = homomorphic_combine(&cts, &[2, -1, 0, 3]).unwrap();
        assert_eq!(keys.decrypt(&mixed, &table).unwrap(), 2 - 2 + 12);
        assert!(matches!(homomorphic_combine(&cts, &[1]), Err(AheError::LengthMismatch { .. })));
        assert!(ThresholdKeyMaterial::<G>::from_authorities(vec![]).is_err());
    }

    #[test]
    fn encrypted_sketch_aggregate_and_range_query() {
        let (params, keys, table, mut rng) = setup(2000, 2, 8);
        let enc = Encryptor::new(params, keys.public_key());
        let sp = SketchParams::with_dims(3, 8, 42).unwrap();
        let mut plain = SketchTable::count_sketch(sp).unwrap();
        let mut parts = Vec::new();
        for r in 0..5 {
            let mut t = SketchTable::count_sketch(sp).unwrap();
            for v in 0..(r + 3) {
                t.update(&ItemKey::value(v * 3 % 16), 1).unwrap();
            }
            plain.merge_from(&t).unwrap();
            parts.push(EncryptedSketch::encrypt(&t, &enc, &mut rng));
        }
        let agg = EncryptedSketch::aggregate(&parts).unwrap().unwrap();
        assert_eq!(agg.decrypt(&keys, &table).unwrap(), plain);

        let coeffs = plain.range_coefficients(2, 11).unwrap();
        let s = keys.decrypt(&agg.combine(&coeffs).unwrap(), &table).unwrap();
        assert_eq!(s, plain.apply(&coeffs));

        let other = EncryptedSketch::<G>::zero(SketchKind::Count, sp.with_seed(43));
        assert_eq!(agg.clone().add_assign(&other), Err(AheError::MetadataMismatch));
    }

    #[test]
    fn empty_submission_decrypts_to_zeros() {
        let (params, keys, table, mut rng) = setup(10, 3, 9);
        let enc = Encryptor::new(params, keys.public_key());
        let t = SketchTable::count_sketch(SketchParams::with_dims(2, 4, 0).unwrap()).unwrap();
        let e = EncryptedSketch::encrypt(&t, &enc, &mut rng);
        assert!(e.decrypt(&keys, &table).unwrap().cells().iter().all(|&c| c == 0));
    }

    #[test]
    fn wire_format() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let params = AheParams::<P224>::new(10);
        let keys = ThresholdKeyMaterial::generate(3, &mut rng).unwrap();
        let enc = Encryptor::new(params, keys.public_key());
        let t = SketchTable::count_sketch(SketchParams::with_dims(3, 56, 7).unwrap()).unwrap();
        let e = EncryptedSketch::encrypt(&t, &enc, &mut rng);
        let bytes = e.encode();
        assert_eq!(bytes.len(), 21 + 168 * 58);
        assert_eq!(EncryptedSketch::<P224>::decode(&bytes).unwrap(), e);
        assert!(EncryptedSketch::<P224>::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(EncryptedSketch::<Ristretto255>::decode(&bytes).is_err());
    }

    #[test]
    fn p224_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let params = AheParams::<P224>::new(50);
        let keys = ThresholdKeyMaterial::generate(3, &mut rng).unwrap();
        let table = DlogTable::new(&params);
        let enc = Encryptor::new(params, keys.public_key());
        for m in [-50, -1, 0, 1, 50] {
            assert_eq!(keys.decrypt(&enc.encrypt(m, &mut rng), &table).unwrap(), m);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn homomorphism(ms in proptest::collection::vec(-40i64..40, 1..8),
                        ks in proptest::collection::vec(-3i64..4, 8),
                        seed in any::<u64>()) {
            let (params, keys, table, mut rng) = setup(1000, 2, seed % 4);
            let enc = Encryptor::new(params, keys.public_key());
            let cts: Vec<_> = ms.iter().map(|&m| enc.encrypt(m, &mut rng)).collect();
            let ks = &ks[..ms.len()];
            let want: i64 = ms.iter().zip(ks).map(|(m, k)| m * k).sum();
            let got = keys.decrypt(&homomorphic_combine(&cts, ks).unwrap(), &table).unwrap();
            prop_assert_eq!(got, want);
            let sum = cts.iter().fold(Ciphertext::zero(), |a, c| a + *c);
            prop_assert_eq!(keys.decrypt(&sum, &table).unwrap(), ms.iter().sum::<i64>());
        }
    }
}

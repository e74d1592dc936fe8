//! Median estimation over encrypted Count Sketches by repeated halving of
//! the value domain.
//!
//! Every reporter inserts its values into a Count Sketch and submits the
//! table encrypted cell by cell. The authorities sum the submissions, then
//! repeatedly decrypt a single linear combination: the number of values in
//! the left half of the current range. The rank target moves into whichever
//! half holds it, until one value remains.
//!
//! The domain `[lo, hi)` is treated as `[lo, lo + 2^ξ)` with
//! `ξ = ⌈log2(hi − lo)⌉`, so every run makes exactly `ξ` decryptions. Query
//! ranges are clipped to `[lo, hi)`.

use rand::{CryptoRng, Rng, RngCore};
use thiserror::Error;

use crate::ahe::{AheError, DlogTable, EncryptedSketch, Encryptor, ThresholdKeyMaterial};
use crate::group_crypto::CryptoGroup;
use crate::sketch::{ItemKey, SketchError, SketchKind, SketchParams, SketchTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MedianError {
    #[error("value {value} outside domain [{lo}, {hi})")]
    OutOfDomain { value: i64, lo: i64, hi: i64 },
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("differential privacy epsilon must be positive, got {0}")]
    DpEpsilon(f64),
    #[error(transparent)]
    Ahe(#[from] AheError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

pub type Result<T> = std::result::Result<T, MedianError>;

/// Values lie in `[lo, hi)`; `n` of them were contributed in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MedianDomain {
    pub lo: i64,
    pub hi: i64,
    pub n: u64,
}

impl MedianDomain {
    pub fn new(lo: i64, hi: i64, n: u64) -> Result<Self> {
        if hi <= lo {
            return Err(MedianError::Domain(format!("empty range [{lo}, {hi})")));
        }
        if n == 0 {
            return Err(MedianError::Domain("no values".into()));
        }
        Ok(MedianDomain { lo, hi, n })
    }

    /// `⌈log2(hi − lo)⌉`.
    pub fn iterations(&self) -> u32 {
        let size = (self.hi - self.lo) as u64;
        if size <= 1 {
            0
        } else {
            64 - (size - 1).leading_zeros()
        }
    }

    /// Rank of the lower median, `⌈n/2⌉`.
    pub fn rank(&self) -> u64 {
        self.n.div_ceil(2)
    }

    pub fn contains(&self, v: i64) -> bool {
        (self.lo..self.hi).contains(&v)
    }

    pub fn check(&self, v: i64) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(MedianError::OutOfDomain { value: v, lo: self.lo, hi: self.hi })
        }
    }
}

/// Laplace noise on every decrypted count, with scale `ξ·d/ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    pub epsilon: f64,
    pub xi: u32,
    pub depth: usize,
}

impl DpConfig {
    pub fn new(epsilon: f64, xi: u32, depth: usize) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(MedianError::DpEpsilon(epsilon));
        }
        Ok(DpConfig { epsilon, xi, depth })
    }

    pub fn for_domain(epsilon: f64, domain: &MedianDomain, depth: usize) -> Result<Self> {
        Self::new(epsilon, domain.iterations(), depth)
    }

    pub fn scale(&self) -> f64 {
        self.xi as f64 * self.depth as f64 / self.epsilon
    }
}

/// One draw from `Lap(scale)` by inverting the CDF.
pub fn laplace(scale: f64, rng: &mut impl Rng) -> f64 {
    // Uniform on (-1/2, 1/2); the open interval keeps ln finite.
    let u = loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        if u != -0.5 {
            break u;
        }
    };
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Source of raw range sums `S`, where `S / d` estimates the number of
/// values in `[lo, hi)`.
pub trait RangeSum {
    fn depth(&self) -> usize;
    fn range_sum(&mut self, lo: i64, hi: i64) -> Result<i64>;
}

/// Homomorphic range sums over an aggregate, decrypted jointly by every
/// authority.
pub struct EncryptedRangeSum<'a, G: CryptoGroup> {
    agg: &'a EncryptedSketch<G>,
    keys: &'a ThresholdKeyMaterial<G>,
    table: &'a DlogTable<G>,
    shape: SketchTable,
    decryptions: usize,
}

impl<'a, G: CryptoGroup> EncryptedRangeSum<'a, G> {
    pub fn new(agg: &'a EncryptedSketch<G>, keys: &'a ThresholdKeyMaterial<G>, table: &'a DlogTable<G>) -> Result<Self> {
        let shape = SketchTable::new(agg.kind(), *agg.params())?;
        Ok(EncryptedRangeSum { agg, keys, table, shape, decryptions: 0 })
    }

    /// Joint decryptions performed so far.
    pub fn decryptions(&self) -> usize {
        self.decryptions
    }
}

impl<G: CryptoGroup> RangeSum for EncryptedRangeSum<'_, G> {
    fn depth(&self) -> usize {
        self.shape.depth()
    }

    fn range_sum(&mut self, lo: i64, hi: i64) -> Result<i64> {
        let coeffs = self.shape.range_coefficients(lo, hi)?;
        let ct = self.agg.combine(&coeffs)?;
        self.decryptions += 1;
        Ok(self.keys.decrypt(&ct, self.table)?)
    }
}

/// The same linear functional evaluated on a plaintext aggregate.
pub struct PlainRangeSum<'a> {
    table: &'a SketchTable,
}

impl<'a> PlainRangeSum<'a> {
    pub fn new(table: &'a SketchTable) -> Result<Self> {
        if table.kind() != SketchKind::Count {
            return Err(SketchError::KindMismatch { expected: SketchKind::Count, found: table.kind() }.into());
        }
        Ok(PlainRangeSum { table })
    }
}

impl RangeSum for PlainRangeSum<'_> {
    fn depth(&self) -> usize {
        self.table.depth()
    }

    fn range_sum(&mut self, lo: i64, hi: i64) -> Result<i64> {
        Ok(self.table.apply(&self.table.range_coefficients(lo, hi)?))
    }
}

/// Exact counts, scaled by `d` to look like a sketch sum.
pub struct ExactRangeSum {
    sorted: Vec<i64>,
    depth: usize,
}

impl ExactRangeSum {
    pub fn new(values: &[i64], depth: usize) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        ExactRangeSum { sorted, depth }
    }
}

impl RangeSum for ExactRangeSum {
    fn depth(&self) -> usize {
        self.depth
    }

    fn range_sum(&mut self, lo: i64, hi: i64) -> Result<i64> {
        let a = self.sorted.partition_point(|&v| v < lo);
        let b = self.sorted.partition_point(|&v| v < hi);
        Ok((b.saturating_sub(a) * self.depth) as i64)
    }
}

/// `S/d`, plus Laplace noise when `dp` is set. Returns `(estimate, noise)`.
pub fn range_count(
    source: &mut impl RangeSum,
    lo: i64,
    hi: i64,
    dp: Option<&DpConfig>,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let s = source.range_sum(lo, hi)?;
    let noise = dp.map_or(0.0, |c| laplace(c.scale(), rng));
    Ok((s as f64 / source.depth() as f64 + noise, noise))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BisectionStep {
    /// Queried range after clipping to the domain.
    pub query: (i64, i64),
    pub estimate: f64,
    pub noise: f64,
    /// Estimate rounded and clamped to `[0, m]`.
    pub count: u64,
    pub rank: u64,
    pub remaining: u64,
    pub went_left: bool,
}

/// Current range `[a, a + size)`, rank target and remaining count.
#[derive(Debug, Clone, PartialEq)]
pub struct BisectionState {
    pub a: i64,
    pub size: u64,
    pub rank: u64,
    pub remaining: u64,
    pub transcript: Vec<BisectionStep>,
}

/// Runs the halving protocol and returns the estimate with its state.
pub fn bisect_median(
    source: &mut impl RangeSum,
    domain: &MedianDomain,
    dp: Option<&DpConfig>,
    rng: &mut impl Rng,
) -> Result<(i64, BisectionState)> {
    let xi = domain.iterations();
    let mut st = BisectionState {
        a: domain.lo,
        size: 1u64 << xi,
        rank: domain.rank(),
        remaining: domain.n,
        transcript: Vec::with_capacity(xi as usize),
    };
    for _ in 0..xi {
        let half = st.size / 2;
        let mid = st.a + half as i64;
        let query = (st.a.min(domain.hi), mid.min(domain.hi));
        let (estimate, noise) = range_count(source, query.0, query.1, dp, rng)?;
        let count = estimate.round().clamp(0.0, st.remaining as f64) as u64;
        let went_left = st.rank <= count;
        if went_left {
            st.remaining = count;
        } else {
            st.rank -= count;
            st.remaining -= count;
            st.a = mid;
        }
        st.size = half;
        st.transcript.push(BisectionStep {
            query,
            estimate,
            noise,
            count,
            rank: st.rank,
            remaining: st.remaining,
            went_left,
        });
    }
    Ok((st.a.min(domain.hi - 1), st))
}

/// Plaintext Count Sketch of one reporter's values.
pub fn sketch_values(values: &[i64], domain: &MedianDomain, params: SketchParams) -> Result<SketchTable> {
    let mut t = SketchTable::count_sketch(params)?;
    for &v in values {
        domain.check(v)?;
        t.update(&ItemKey::value(v), 1)?;
    }
    Ok(t)
}

/// A reporter's encrypted submission.
pub fn submit<G: CryptoGroup>(
    values: &[i64],
    domain: &MedianDomain,
    params: SketchParams,
    enc: &Encryptor<G>,
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<EncryptedSketch<G>> {
    Ok(EncryptedSketch::encrypt(&sketch_values(values, domain, params)?, enc, rng))
}

/// The rank-`⌈n/2⌉` order statistic.
pub fn lower_median(values: &[i64]) -> Option<i64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let k = v.len().div_ceil(2) - 1;
    Some(*v.select_nth_unstable(k).1)
}

//! Count-Min Sketch and Count Sketch tables.
//!
//! Both sketch kinds share one `d × w` table layout and one update rule: an
//! item adds its count to a single cell per row, chosen by a row hash
//! `h_j(x) = ((a_j·x + b_j) mod p) mod w`. They differ only in estimation:
//!
//! * Count-Min takes the minimum over the `d` touched cells and never
//!   underestimates on nonnegative streams.
//! * Count Sketch takes, per row, the touched cell minus its *partner* cell
//!   and combines the row estimates with a median. Columns are paired
//!   `(0,1), (2,3), …`, so the partner of column `c` is `c ^ 1` and the width
//!   of a Count Sketch is always even.
//!
//! Tables are linear: the cell-wise sum of two tables built with the same
//! parameters is the table of the concatenated streams. Everything the
//! aggregation protocols do relies on that.

use std::fmt;

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Smallest prime above `2^31`; the modulus of every row hash.
pub const HASH_PRIME: u64 = 2_147_483_659;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SketchError {
    #[error("invalid sketch parameter: {0}")]
    Parameter(String),
    #[error("operation requires a {expected} sketch, got {found}")]
    KindMismatch { expected: SketchKind, found: SketchKind },
    #[error("sketches are not mergeable: {0}")]
    NotMergeable(&'static str),
    #[error("counter overflow in cell {0}")]
    Overflow(usize),
    #[error("malformed sketch encoding: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, SketchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SketchKind {
    CountMin,
    Count,
}

impl SketchKind {
    fn tag(self) -> &'static str {
        match self {
            SketchKind::CountMin => "count-min",
            SketchKind::Count => "count",
        }
    }
}

impl fmt::Display for SketchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// How the table depth follows from the failure probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthRule {
    /// `d = ⌈ln(T/δ)⌉` for `T` counted items.
    CountItems(u64),
    /// `d = ⌈ln(1/δ)⌉`.
    FailureOnly,
}

/// Dimensions and hash seed of a sketch table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchParams {
    pub epsilon: f64,
    pub delta: f64,
    pub depth_rule: DepthRule,
    pub width: usize,
    pub depth: usize,
    pub seed: u64,
}

/// Derives `(d, w)` from the accuracy parameters, with `w = ⌈e/ε⌉`.
///
/// ```
/// use sketchagg::sketch::{derive_params, DepthRule};
///
/// let p = derive_params(0.01, 0.01, DepthRule::CountItems(245_000)).unwrap();
/// assert_eq!((p.depth, p.width, p.len()), (18, 272, 4896));
/// ```
pub fn derive_params(epsilon: f64, delta: f64, depth_rule: DepthRule) -> Result<SketchParams> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SketchError::Parameter(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SketchError::Parameter(format!("delta must lie in (0,1), got {delta}")));
    }
    let log_arg = match depth_rule {
        DepthRule::CountItems(0) => {
            return Err(SketchError::Parameter("item count T must be at least 1".into()))
        }
        DepthRule::CountItems(t) => t as f64 / delta,
        DepthRule::FailureOnly => 1.0 / delta,
    };
    let depth = (log_arg.ln().ceil() as usize).max(1);
    let width = (std::f64::consts::E / epsilon).ceil() as usize;
    Ok(SketchParams { epsilon, delta, depth_rule, width: width.max(2), depth, seed: 0 })
}

impl SketchParams {
    /// Explicit dimensions, bypassing the `(ε, δ)` formulas. The recorded
    /// `epsilon`/`delta` are the values those formulas would invert to.
    pub fn with_dims(depth: usize, width: usize, seed: u64) -> Result<Self> {
        if depth == 0 || width < 2 {
            return Err(SketchError::Parameter(format!(
                "need depth >= 1 and width >= 2, got d={depth} w={width}"
            )));
        }
        Ok(SketchParams {
            epsilon: std::f64::consts::E / width as f64,
            delta: (-(depth as f64)).exp(),
            depth_rule: DepthRule::FailureOnly,
            width,
            depth,
            seed,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Number of cells `L = d·w`.
    pub fn len(&self) -> usize {
        self.depth * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The parameters a table of `kind` actually uses: Count Sketch rounds
    /// the width up to the next even number so every column has a partner.
    pub fn for_kind(mut self, kind: SketchKind) -> Self {
        if kind == SketchKind::Count && self.width % 2 == 1 {
            self.width += 1;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowHash {
    pub a: u64,
    pub b: u64,
}

/// The `d` row hashes `((a·x + b) mod p) mod w`, sampled deterministically
/// from a seed.
///
/// Coefficients come from a SplitMix64 stream seeded with the sketch seed:
/// for each row, `a = 1 + next() mod (p − 1)` then `b = next() mod p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashFamily {
    prime: u64,
    rows: Vec<RowHash>,
}

impl HashFamily {
    pub fn sample(seed: u64, depth: usize) -> Self {
        let mut stream = SplitMix64::seed_from_u64(seed);
        let rows = (0..depth)
            .map(|_| {
                let a = 1 + stream.next_u64() % (HASH_PRIME - 1);
                let b = stream.next_u64() % HASH_PRIME;
                RowHash { a, b }
            })
            .collect();
        HashFamily { prime: HASH_PRIME, rows }
    }

    pub fn prime(&self) -> u64 {
        self.prime
    }

    pub fn rows(&self) -> &[RowHash] {
        &self.rows
    }

    /// Column of universe element `x` in `row` for a table of `width`.
    pub fn column(&self, row: usize, x: u64, width: usize) -> usize {
        let RowHash { a, b } = self.rows[row];
        let p = self.prime as u128;
        let v = (a as u128 * (x as u128 % p) + b as u128) % p;
        (v % width as u128) as usize
    }
}

/// Opaque item identifier. Structured constructors carry a one-byte category
/// tag, so keys from different categories never coincide.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemKey(Vec<u8>);

impl ItemKey {
    const TAG_ITEM: u8 = 0x01;
    const TAG_PAIR: u8 = 0x02;
    const TAG_CELL: u8 = 0x03;
    const TAG_VALUE: u8 = 0x04;

    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        ItemKey(bytes.into())
    }

    /// A plain numbered item.
    pub fn item(id: u64) -> Self {
        let mut v = vec![Self::TAG_ITEM];
        v.extend_from_slice(&id.to_be_bytes());
        ItemKey(v)
    }

    /// An unordered pair; `pair(a, b) == pair(b, a)`.
    pub fn pair(a: u32, b: u32) -> Self {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut v = vec![Self::TAG_PAIR];
        v.extend_from_slice(&lo.to_be_bytes());
        v.extend_from_slice(&hi.to_be_bytes());
        ItemKey(v)
    }

    /// A grid cell `(row, col)`.
    pub fn cell(row: u32, col: u32) -> Self {
        let mut v = vec![Self::TAG_CELL];
        v.extend_from_slice(&row.to_be_bytes());
        v.extend_from_slice(&col.to_be_bytes());
        ItemKey(v)
    }

    /// An integer value of a bounded numeric domain.
    pub fn value(v: i64) -> Self {
        let mut out = vec![Self::TAG_VALUE];
        out.extend_from_slice(&v.to_be_bytes());
        ItemKey(out)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// The integer the row hashes operate on: the first eight bytes of
    /// SHA-256 over the key, big-endian.
    pub fn universe_index(&self) -> u64 {
        let digest = Sha256::digest(&self.0);
        u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }
}

/// A `d × w` table of signed 64-bit counters, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchTable {
    kind: SketchKind,
    params: SketchParams,
    hashes: HashFamily,
    cells: Vec<i64>,
}

impl SketchTable {
    pub fn new(kind: SketchKind, params: SketchParams) -> Result<Self> {
        Self::from_cells(kind, params, vec![0; params.for_kind(kind).len()])
    }

    pub fn count_min(params: SketchParams) -> Result<Self> {
        Self::new(SketchKind::CountMin, params)
    }

    pub fn count_sketch(params: SketchParams) -> Result<Self> {
        Self::new(SketchKind::Count, params)
    }

    /// Wraps existing cells, e.g. a decrypted aggregate.
    pub fn from_cells(kind: SketchKind, params: SketchParams, cells: Vec<i64>) -> Result<Self> {
        let params = params.for_kind(kind);
        if params.depth == 0 || params.width < 2 {
            return Err(SketchError::Parameter(format!(
                "need depth >= 1 and width >= 2, got d={} w={}",
                params.depth, params.width
            )));
        }
        if cells.len() != params.len() {
            return Err(SketchError::Parameter(format!(
                "expected {} cells, got {}",
                params.len(),
                cells.len()
            )));
        }
        let hashes = HashFamily::sample(params.seed, params.depth);
        Ok(SketchTable { kind, params, hashes, cells })
    }

    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    pub fn params(&self) -> &SketchParams {
        &self.params
    }

    pub fn hashes(&self) -> &HashFamily {
        &self.hashes
    }

    pub fn depth(&self) -> usize {
        self.params.depth
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn cells(&self) -> &[i64] {
        &self.cells
    }

    pub fn into_cells(self) -> Vec<i64> {
        self.cells
    }

    pub fn cell(&self, row: usize, col: usize) -> i64 {
        self.cells[row * self.params.width + col]
    }

    /// Flat cell index touched by `key` in each row.
    pub fn locate(&self, key: &ItemKey) -> Vec<usize> {
        let x = key.universe_index();
        let w = self.params.width;
        (0..self.params.depth).map(|j| j * w + self.hashes.column(j, x, w)).collect()
    }

    pub fn update(&mut self, key: &ItemKey, count: i64) -> Result<()> {
        let cells = self.locate(key);
        self.update_located(&cells, count)
    }

    /// Update with indices precomputed by [`locate`](Self::locate).
    pub fn update_located(&mut self, located: &[usize], count: i64) -> Result<()> {
        for &idx in located {
            self.cells[idx] = self.cells[idx].checked_add(count).ok_or(SketchError::Overflow(idx))?;
        }
        Ok(())
    }

    /// Count-Min estimate: minimum over the touched cells.
    pub fn estimate_cms(&self, key: &ItemKey) -> Result<i64> {
        self.require(SketchKind::CountMin)?;
        Ok(self.min_at(&self.locate(key)))
    }

    pub fn min_at(&self, located: &[usize]) -> i64 {
        located.iter().map(|&i| self.cells[i]).min().unwrap_or(0)
    }

    /// Count Sketch estimate: lower median over rows of `X[j,c] − X[j,c^1]`.
    pub fn estimate_cs(&self, key: &ItemKey) -> Result<i64> {
        self.require(SketchKind::Count)?;
        let mut rows: Vec<i64> = self
            .locate(key)
            .into_iter()
            .map(|i| self.cells[i] - self.cells[i ^ 1])
            .collect();
        rows.sort_unstable();
        Ok(rows[(rows.len() - 1) / 2])
    }

    /// Estimate with the estimator matching the table kind.
    pub fn estimate(&self, key: &ItemKey) -> i64 {
        match self.kind {
            SketchKind::CountMin => self.estimate_cms(key),
            SketchKind::Count => self.estimate_cs(key),
        }
        .expect("estimator chosen by kind")
    }

    pub fn is_mergeable(&self, other: &SketchTable) -> bool {
        self.kind == other.kind && self.params == other.params && self.hashes == other.hashes
    }

    fn check_mergeable(&self, other: &SketchTable) -> Result<()> {
        if self.kind != other.kind {
            return Err(SketchError::NotMergeable("kinds differ"));
        }
        if self.params != other.params {
            return Err(SketchError::NotMergeable("parameters differ"));
        }
        if self.hashes != other.hashes {
            return Err(SketchError::NotMergeable("hash families differ"));
        }
        Ok(())
    }

    /// Cell-wise sum; the sketch of the union of both streams.
    pub fn merge(&self, other: &SketchTable) -> Result<SketchTable> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn merge_from(&mut self, other: &SketchTable) -> Result<()> {
        self.check_mergeable(other)?;
        for (i, (c, o)) in self.cells.iter_mut().zip(&other.cells).enumerate() {
            *c = c.checked_add(*o).ok_or(SketchError::Overflow(i))?;
        }
        Ok(())
    }

    /// Linear functional over the cells that sums the per-row Count Sketch
    /// estimates of every value in `[lo, hi)` across all rows.
    ///
    /// Applying the result with [`apply`](Self::apply) gives `d` times the
    /// summed unbiased row estimates; dividing by `d` is left to the caller.
    pub fn range_coefficients(&self, lo: i64, hi: i64) -> Result<Vec<i64>> {
        self.require(SketchKind::Count)?;
        if lo > hi {
            return Err(SketchError::Parameter(format!("empty-or-inverted range [{lo}, {hi})")));
        }
        let mut coeffs = vec![0i64; self.cells.len()];
        for v in lo..hi {
            for idx in self.locate(&ItemKey::value(v)) {
                coeffs[idx] += 1;
                coeffs[idx ^ 1] -= 1;
            }
        }
        Ok(coeffs)
    }

    /// `Σ coeffs[ℓ] · cells[ℓ]`.
    pub fn apply(&self, coeffs: &[i64]) -> i64 {
        assert_eq!(coeffs.len(), self.cells.len(), "coefficient vector length");
        coeffs.iter().zip(&self.cells).map(|(c, x)| c * x).sum()
    }

    fn require(&self, expected: SketchKind) -> Result<()> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(SketchError::KindMismatch { expected, found: self.kind })
        }
    }

    /// Binary encoding: `"SKT1"`, a big-endian `u32` header length, an ASCII
    /// header of `key=value` fields, then `d·w` big-endian `i64` cells.
    pub fn encode(&self) -> Vec<u8> {
        let p = &self.params;
        let rule = match p.depth_rule {
            DepthRule::CountItems(t) => format!("items:{t}"),
            DepthRule::FailureOnly => "failure-only".to_string(),
        };
        let header = format!(
            "kind={} d={} w={} seed={} epsilon={} delta={} rule={}",
            self.kind, p.depth, p.width, p.seed, p.epsilon, p.delta, rule
        );
        let mut out = Vec::with_capacity(8 + header.len() + 8 * self.cells.len());
        out.extend_from_slice(b"SKT1");
        out.extend_from_slice(&(header.len() as u32).to_be_bytes());
        out.extend_from_slice(header.as_bytes());
        for c in &self.cells {
            out.extend_from_slice(&c.to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<SketchTable> {
        let err = |m: &str| SketchError::Decode(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != b"SKT1" {
            return Err(err("missing SKT1 magic"));
        }
        let hlen = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header = bytes.get(8..8 + hlen).ok_or_else(|| err("truncated header"))?;
        let header = std::str::from_utf8(header).map_err(|_| err("header is not UTF-8"))?;

        let mut kind = None;
        let (mut d, mut w, mut seed, mut eps, mut delta, mut rule) = (None, None, None, None, None, None);
        for field in header.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| err("header field without '='"))?;
            let bad = |_| SketchError::Decode(format!("bad value for {k}: {v}"));
            match k {
                "kind" => {
                    kind = Some(match v {
                        "count-min" => SketchKind::CountMin,
                        "count" => SketchKind::Count,
                        _ => return Err(err("unknown sketch kind")),
                    })
                }
                "d" => d = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "w" => w = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                "epsilon" => eps = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "delta" => delta = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "rule" => {
                    rule = Some(match v.strip_prefix("items:") {
                        Some(t) => DepthRule::CountItems(t.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?),
                        None if v == "failure-only" => DepthRule::FailureOnly,
                        None => return Err(err("unknown depth rule")),
                    })
                }
                _ => {}
            }
        }
        let missing = |f: &str| SketchError::Decode(format!("header lacks {f}"));
        let params = SketchParams {
            epsilon: eps.ok_or_else(|| missing("epsilon"))?,
            delta: delta.ok_or_else(|| missing("delta"))?,
            depth_rule: rule.unwrap_or(DepthRule::FailureOnly),
            width: w.ok_or_else(|| missing("w"))?,
            depth: d.ok_or_else(|| missing("d"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        };
        let kind = kind.ok_or_else(|| missing("kind"))?;
        let body = &bytes[8 + hlen..];
        if body.len() != 8 * params.len() {
            return Err(err("cell array length does not match d·w"));
        }
        let cells = body.chunks_exact(8).map(|c| i64::from_be_bytes(c.try_into().unwrap())).collect();
        SketchTable::from_cells(kind, params, cells)
    }
}

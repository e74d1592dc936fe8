//! Zero-sum blinded aggregation of Count-Min Sketch tables.
//!
//! Every pair of users `(i, j)` in a roster shares the Diffie-Hellman point
//! `y_j^{x_i} = y_i^{x_j}`. For cell `ℓ` of round `s`, user `i` derives the
//! blinding factor
//!
//! ```text
//! k_iℓ = Σ_{j ≠ i} H(y_j^{x_i} ∥ ℓ ∥ s) · (−1)^{i > j}   (mod 2^32)
//! ```
//!
//! where `i > j` compares positions in the round's roster. Each pair's mask
//! appears once with `+` and once with `−`, so the factors of all users sum
//! to zero and the tally's cell-wise sum of blinded tables is exactly the sum
//! of the plaintext tables.
//!
//! If some users never submit, the tally announces the online set `U_on` and
//! every online user returns a recovery share: the same sum restricted to
//! peers outside `U_on`. Subtracting the shares removes the masks that no
//! longer cancel.

pub mod wire;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::group_crypto::{CryptoGroup, KeyPair, MaskDeriver};
use crate::sketch::{SketchError, SketchKind, SketchParams, SketchTable};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserId(pub String);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UserId {
    fn from(s: &str) -> Self {
        UserId(s.to_string())
    }
}

impl From<String> for UserId {
    fn from(s: String) -> Self {
        UserId(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZeroSumError {
    #[error("user {0} is not in the roster")]
    NotInRoster(UserId),
    #[error("roster lists user {0} twice")]
    DuplicateId(UserId),
    #[error("key pair of {0} does not match its roster entry")]
    KeyMismatch(UserId),
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("message for group {got_group} round {got_round}, tally is at group {group} round {round}")]
    WrongRound { group: u32, round: u32, got_group: u32, got_round: u32 },
    #[error("user {0} already submitted")]
    DuplicateSubmission(UserId),
    #[error("round incomplete: {} online, missing {missing:?}", online.len())]
    IncompleteRound { online: Vec<UserId>, missing: Vec<UserId> },
    #[error("recovery stalled, no share from {missing:?}")]
    RecoveryStalled { missing: Vec<UserId> },
    #[error("recovery has not been started for this round")]
    NotRecovering,
    #[error("user {0} is not in the announced online set")]
    NotOnline(UserId),
    #[error("group size must be at least 2, got {0}")]
    GroupSize(usize),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error("malformed message: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, ZeroSumError>;

/// The ordered members of one group for one round. Positions fix the sign of
/// every pairwise mask.
#[derive(Debug, Clone)]
pub struct Roster<G: CryptoGroup> {
    group_id: u32,
    round: u32,
    members: Vec<(UserId, G)>,
    positions: HashMap<UserId, usize>,
}

impl<G: CryptoGroup> Roster<G> {
    pub fn new(group_id: u32, round: u32, members: Vec<(UserId, G)>) -> Result<Self> {
        let mut positions = HashMap::with_capacity(members.len());
        for (i, (id, _)) in members.iter().enumerate() {
            if positions.insert(id.clone(), i).is_some() {
                return Err(ZeroSumError::DuplicateId(id.clone()));
            }
        }
        Ok(Roster { group_id, round, members, positions })
    }

    pub fn group_id(&self) -> u32 {
        self.group_id
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    /// The same members for another round.
    pub fn with_round(&self, round: u32) -> Self {
        Roster { round, ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[(UserId, G)] {
        &self.members
    }

    pub fn ids(&self) -> impl Iterator<Item = &UserId> {
        self.members.iter().map(|(id, _)| id)
    }

    pub fn position(&self, id: &UserId) -> Option<usize> {
        self.positions.get(id).copied()
    }

    fn require(&self, id: &UserId) -> Result<usize> {
        self.position(id).ok_or_else(|| ZeroSumError::NotInRoster(id.clone()))
    }
}

/// Entries `b_iℓ = X_iℓ + k_iℓ mod 2^32` sent by one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlindedSketch {
    pub group_id: u32,
    pub round: u32,
    pub user: UserId,
    pub entries: Vec<u32>,
}

/// Factors `k'_iℓ` over the peers that dropped out, sent during recovery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryShare {
    pub group_id: u32,
    pub round: u32,
    pub user: UserId,
    pub entries: Vec<u32>,
}

/// Blinding factors of `me` over `len` cells: the signed sum of pairwise
/// masks with every roster peer not in `exclude`.
///
/// With an empty `exclude` these are the factors used to blind a table; with
/// `exclude = U_on` they form the recovery share.
pub fn blinding_factors<G: CryptoGroup>(
    me: &KeyPair<G>,
    my_id: &UserId,
    roster: &Roster<G>,
    exclude: &HashSet<UserId>,
    len: usize,
) -> Result<Vec<u32>> {
    let i = roster.require(my_id)?;
    if roster.members[i].1 != me.public() {
        return Err(ZeroSumError::KeyMismatch(my_id.clone()));
    }
    let mut factors = vec![0u32; len];
    for (j, (peer, peer_pk)) in roster.members.iter().enumerate() {
        if j == i || exclude.contains(peer) {
            continue;
        }
        let deriver = MaskDeriver::new(&me.shared_point(peer_pk));
        accumulate_masks(&mut factors, &deriver, roster.round, i > j);
    }
    Ok(factors)
}

fn accumulate_masks(factors: &mut [u32], deriver: &MaskDeriver, round: u32, negate: bool) {
    for (ell, f) in factors.iter_mut().enumerate() {
        let m = deriver.mask(ell as u32, round);
        *f = if negate { f.wrapping_sub(m) } else { f.wrapping_add(m) };
    }
}

/// Factors for every roster member at once, deriving each pair's mask stream
/// a single time. Equal to calling [`blinding_factors`] per member with an
/// empty exclusion set; `keys[i]` must belong to roster position `i`.
pub fn cohort_blinding_factors<G: CryptoGroup>(
    keys: &[KeyPair<G>],
    roster: &Roster<G>,
    len: usize,
) -> Result<Vec<Vec<u32>>> {
    if keys.len() != roster.len() {
        return Err(ZeroSumError::LengthMismatch { expected: roster.len(), got: keys.len() });
    }
    for (k, (id, pk)) in keys.iter().zip(&roster.members) {
        if k.public() != *pk {
            return Err(ZeroSumError::KeyMismatch(id.clone()));
        }
    }
    let n = keys.len();
    let mut factors = vec![vec![0u32; len]; n];
    let mut stream = vec![0u32; len];
    for i in 0..n {
        for j in (i + 1)..n {
            let deriver = MaskDeriver::new(&keys[i].shared_point(&roster.members[j].1));
            for (ell, m) in stream.iter_mut().enumerate() {
                *m = deriver.mask(ell as u32, roster.round);
            }
            // i < j: user i adds the mask, user j subtracts it.
            for (f, m) in factors[i].iter_mut().zip(&stream) {
                *f = f.wrapping_add(*m);
            }
            for (f, m) in factors[j].iter_mut().zip(&stream) {
                *f = f.wrapping_sub(*m);
            }
        }
    }
    Ok(factors)
}

/// `(cells + factors) mod 2^32`, with cells truncated to their low 32 bits.
pub fn encrypt_sketch(sketch: &SketchTable, factors: &[u32]) -> Result<Vec<u32>> {
    if sketch.cells().len() != factors.len() {
        return Err(ZeroSumError::LengthMismatch { expected: sketch.cells().len(), got: factors.len() });
    }
    Ok(sketch.cells().iter().zip(factors).map(|(&c, &k)| (c as u32).wrapping_add(k)).collect())
}

/// One protocol participant.
#[derive(Debug, Clone)]
pub struct User<G: CryptoGroup> {
    pub id: UserId,
    pub keys: KeyPair<G>,
}

impl<G: CryptoGroup> User<G> {
    pub fn new(id: impl Into<UserId>, keys: KeyPair<G>) -> Self {
        User { id: id.into(), keys }
    }

    pub fn blinding_factors(&self, roster: &Roster<G>, len: usize) -> Result<Vec<u32>> {
        blinding_factors(&self.keys, &self.id, roster, &HashSet::new(), len)
    }

    pub fn blind(&self, sketch: &SketchTable, roster: &Roster<G>) -> Result<BlindedSketch> {
        let factors = self.blinding_factors(roster, sketch.cells().len())?;
        self.blind_with(sketch, roster, &factors)
    }

    /// Blind with factors computed elsewhere, e.g. by [`cohort_blinding_factors`].
    pub fn blind_with(&self, sketch: &SketchTable, roster: &Roster<G>, factors: &[u32]) -> Result<BlindedSketch> {
        Ok(BlindedSketch {
            group_id: roster.group_id,
            round: roster.round,
            user: self.id.clone(),
            entries: encrypt_sketch(sketch, factors)?,
        })
    }

    /// Share for the announced online set; only online users answer.
    pub fn recovery_share(&self, roster: &Roster<G>, online: &[UserId], len: usize) -> Result<RecoveryShare> {
        let online: HashSet<UserId> = online.iter().cloned().collect();
        if !online.contains(&self.id) {
            return Err(ZeroSumError::NotOnline(self.id.clone()));
        }
        Ok(RecoveryShare {
            group_id: roster.group_id,
            round: roster.round,
            user: self.id.clone(),
            entries: blinding_factors(&self.keys, &self.id, roster, &online, len)?,
        })
    }
}

/// Tally-side state for one group and round.
///
/// Submissions are applied one at a time; [`aggregate`](Self::aggregate)
/// succeeds only once every member has submitted, otherwise it reports the
/// online set so the caller can run recovery.
#[derive(Debug, Clone)]
pub struct Tally<G: CryptoGroup> {
    roster: Roster<G>,
    params: SketchParams,
    submissions: BTreeMap<usize, Vec<u32>>,
    online: Option<Vec<usize>>,
    shares: BTreeMap<usize, Vec<u32>>,
}

impl<G: CryptoGroup> Tally<G> {
    pub fn new(roster: Roster<G>, params: SketchParams) -> Self {
        Tally { roster, params, submissions: BTreeMap::new(), online: None, shares: BTreeMap::new() }
    }

    pub fn roster(&self) -> &Roster<G> {
        &self.roster
    }

    fn check_header(&self, group_id: u32, round: u32, user: &UserId, len: usize) -> Result<usize> {
        if group_id != self.roster.group_id || round != self.roster.round {
            return Err(ZeroSumError::WrongRound {
                group: self.roster.group_id,
                round: self.roster.round,
                got_group: group_id,
                got_round: round,
            });
        }
        let pos = self.roster.require(user)?;
        if len != self.params.len() {
            return Err(ZeroSumError::LengthMismatch { expected: self.params.len(), got: len });
        }
        Ok(pos)
    }

    pub fn submit(&mut self, blinded: BlindedSketch) -> Result<()> {
        let pos = self.check_header(blinded.group_id, blinded.round, &blinded.user, blinded.entries.len())?;
        if self.online.is_some() {
            // Late submissions after the online set was fixed are ignored by
            // the protocol; reject them explicitly.
            return Err(ZeroSumError::NotOnline(blinded.user));
        }
        if self.submissions.contains_key(&pos) {
            return Err(ZeroSumError::DuplicateSubmission(blinded.user));
        }
        self.submissions.insert(pos, blinded.entries);
        Ok(())
    }

    fn ids(&self, positions: impl IntoIterator<Item = usize>) -> Vec<UserId> {
        positions.into_iter().map(|p| self.roster.members[p].0.clone()).collect()
    }

    pub fn online(&self) -> Vec<UserId> {
        self.ids(self.submissions.keys().copied())
    }

    pub fn missing(&self) -> Vec<UserId> {
        self.ids((0..self.roster.len()).filter(|p| !self.submissions.contains_key(p)))
    }

    /// `C_ℓ = Σ_i b_iℓ mod 2^32`, re-wrapped as a Count-Min table.
    pub fn aggregate(&self) -> Result<SketchTable> {
        if self.submissions.len() != self.roster.len() {
            return Err(ZeroSumError::IncompleteRound { online: self.online(), missing: self.missing() });
        }
        let mut sum = vec![0u32; self.params.len()];
        for entries in self.submissions.values() {
            add_into(&mut sum, entries);
        }
        to_table(self.params, sum)
    }

    /// Freezes and returns the online set `U_on`.
    pub fn begin_recovery(&mut self) -> Vec<UserId> {
        let online: Vec<usize> = self.submissions.keys().copied().collect();
        self.online = Some(online);
        self.online()
    }

    pub fn submit_share(&mut self, share: RecoveryShare) -> Result<()> {
        let pos = self.check_header(share.group_id, share.round, &share.user, share.entries.len())?;
        let online = self.online.as_ref().ok_or(ZeroSumError::NotRecovering)?;
        if !online.contains(&pos) {
            return Err(ZeroSumError::NotOnline(share.user));
        }
        if self.shares.contains_key(&pos) {
            return Err(ZeroSumError::DuplicateSubmission(share.user));
        }
        self.shares.insert(pos, share.entries);
        Ok(())
    }

    /// `C'_ℓ = (Σ_{U_on} b_iℓ − Σ_{U_on} k'_iℓ) mod 2^32`. A missing share
    /// aborts the round.
    pub fn recover(&self) -> Result<SketchTable> {
        let online = self.online.as_ref().ok_or(ZeroSumError::NotRecovering)?;
        let missing: Vec<usize> = online.iter().copied().filter(|p| !self.shares.contains_key(p)).collect();
        if !missing.is_empty() {
            return Err(ZeroSumError::RecoveryStalled { missing: self.ids(missing) });
        }
        let mut sum = vec![0u32; self.params.len()];
        for p in online {
            add_into(&mut sum, &self.submissions[p]);
            for (s, k) in sum.iter_mut().zip(&self.shares[p]) {
                *s = s.wrapping_sub(*k);
            }
        }
        to_table(self.params, sum)
    }
}

fn add_into(acc: &mut [u32], entries: &[u32]) {
    for (a, e) in acc.iter_mut().zip(entries) {
        *a = a.wrapping_add(*e);
    }
}

fn to_table(params: SketchParams, sum: Vec<u32>) -> Result<SketchTable> {
    Ok(SketchTable::from_cells(SketchKind::CountMin, params, sum.into_iter().map(i64::from).collect())?)
}

/// Aggregates a complete round in one call.
pub fn aggregate<G: CryptoGroup>(
    roster: &Roster<G>,
    blinded: impl IntoIterator<Item = BlindedSketch>,
    params: SketchParams,
) -> Result<SketchTable> {
    let mut tally = Tally::new(roster.clone(), params);
    for b in blinded {
        tally.submit(b)?;
    }
    tally.aggregate()
}

/// Recovers the aggregate of the users who submitted, given a share from
/// each of them.
pub fn recover<G: CryptoGroup>(
    roster: &Roster<G>,
    blinded_online: impl IntoIterator<Item = BlindedSketch>,
    shares: impl IntoIterator<Item = RecoveryShare>,
    params: SketchParams,
) -> Result<SketchTable> {
    let mut tally = Tally::new(roster.clone(), params);
    for b in blinded_online {
        tally.submit(b)?;
    }
    tally.begin_recovery();
    for s in shares {
        tally.submit_share(s)?;
    }
    tally.recover()
}

/// Splits members, in order, into consecutive rosters of at most
/// `group_size`.
pub fn partition_groups<G: CryptoGroup>(
    members: &[(UserId, G)],
    group_size: usize,
    round: u32,
) -> Result<Vec<Roster<G>>> {
    if group_size < 2 {
        return Err(ZeroSumError::GroupSize(group_size));
    }
    members
        .chunks(group_size)
        .enumerate()
        .map(|(g, chunk)| Roster::new(g as u32, round, chunk.to_vec()))
        .collect()
}

/// Sums per-group aggregates in the clear, with full 64-bit counters.
pub fn combine_groups<'a>(tables: impl IntoIterator<Item = &'a SketchTable>) -> Result<Option<SketchTable>> {
    let mut total: Option<SketchTable> = None;
    for t in tables {
        match total.as_mut() {
            None => total = Some(t.clone()),
            Some(acc) => acc.merge_from(t)?,
        }
    }
    Ok(total)
}

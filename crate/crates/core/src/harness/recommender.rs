use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Zipf};

use super::{stream_rng, AtStage, ErrorReport, ExperimentConfig, HarnessError, Result, Stage};
use crate::analytics::{build_model, history_sketch, neighbor_overlap, CoViewAggregate, ExactCoView, SimilarityModel, SketchCoView};
use crate::group_crypto::{CryptoGroup, KeyPair, Ristretto255};
use crate::sketch::{derive_params, DepthRule, ItemKey, SketchParams, SketchTable};
use crate::zerosum::{cohort_blinding_factors, combine_groups, partition_groups, Roster, Tally, User, UserId};

pub(super) const DATA: u64 = 1;
pub(super) const HASH: u64 = 2;
pub(super) const KEYS: u64 = 3;
pub(super) const DROPOUT: u64 = 4;

/// Sum of the online users' tables across all groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedAggregate {
    pub total: SketchTable,
    pub online: usize,
    pub dropped: usize,
    pub groups: usize,
    pub recovered_groups: usize,
}

/// Runs one zero-sum round per group of `group_size` consecutive users and
/// combines the group totals. Offline users never submit; a group with any
/// offline member, or every group when `force_recovery` is set, goes
/// through recovery. With `users = None` the plaintext tables of online
/// users are summed directly.
pub fn aggregate_groups<G: CryptoGroup>(
    users: Option<&[User<G>]>,
    sketches: &[SketchTable],
    online: &[bool],
    group_size: usize,
    round: u32,
    force_recovery: bool,
    params: SketchParams,
) -> Result<GroupedAggregate> {
    if sketches.len() != online.len() {
        return Err(HarnessError::new(Stage::Aggregate, "one online flag per sketch required"));
    }
    let n_online = online.iter().filter(|&&o| o).count();
    let groups = sketches.len().div_ceil(group_size);
    let mut out = GroupedAggregate {
        total: SketchTable::count_min(params).at(Stage::Aggregate)?,
        online: n_online,
        dropped: sketches.len() - n_online,
        groups,
        recovered_groups: 0,
    };
    let Some(users) = users else {
        for (s, _) in sketches.iter().zip(online).filter(|(_, &o)| o) {
            out.total.merge_from(s).at(Stage::Aggregate)?;
        }
        wrap_u32(&mut out.total)?;
        return Ok(out);
    };

    if users.len() != sketches.len() {
        return Err(HarnessError::new(Stage::Aggregate, "one user per sketch required"));
    }
    let members: Vec<(UserId, G)> = users.iter().map(|u| (u.id.clone(), u.keys.public())).collect();
    let rosters = partition_groups(&members, group_size, round).at(Stage::Aggregate)?;
    let mut totals = Vec::with_capacity(rosters.len());
    for (g, roster) in rosters.iter().enumerate() {
        let base = g * group_size;
        let range = base..base + roster.len();
        let (agg, recovered) = group_round(&users[range.clone()], &sketches[range.clone()], &online[range], roster, force_recovery, params)?;
        if let Some(t) = agg {
            totals.push(t);
        }
        out.recovered_groups += recovered as usize;
    }
    if let Some(t) = combine_groups(&totals).at(Stage::Aggregate)? {
        out.total = t;
    }
    Ok(out)
}

fn group_round<G: CryptoGroup>(
    users: &[User<G>],
    sketches: &[SketchTable],
    online: &[bool],
    roster: &Roster<G>,
    force_recovery: bool,
    params: SketchParams,
) -> Result<(Option<SketchTable>, bool)> {
    if !online.iter().any(|&o| o) {
        return Ok((None, false));
    }
    let keys: Vec<KeyPair<G>> = users.iter().map(|u| u.keys).collect();
    let factors = cohort_blinding_factors(&keys, roster, params.len()).at(Stage::Encrypt)?;
    let mut tally = Tally::new(roster.clone(), params);
    for i in (0..users.len()).filter(|&i| online[i]) {
        let b = users[i].blind_with(&sketches[i], roster, &factors[i]).at(Stage::Encrypt)?;
        tally.submit(b).at(Stage::Aggregate)?;
    }
    let complete = online.iter().all(|&o| o);
    if complete && !force_recovery {
        return Ok((Some(tally.aggregate().at(Stage::Aggregate)?), false));
    }
    let on = tally.begin_recovery();
    for i in (0..users.len()).filter(|&i| online[i]) {
        let share = users[i].recovery_share(roster, &on, params.len()).at(Stage::Recover)?;
        tally.submit_share(share).at(Stage::Recover)?;
    }
    Ok((Some(tally.recover().at(Stage::Recover)?), true))
}

/// Plaintext counters reduced mod 2^32, as the blinded path delivers them.
fn wrap_u32(t: &mut SketchTable) -> Result<()> {
    let cells: Vec<i64> = t.cells().iter().map(|&c| i64::from(c as u32)).collect();
    *t = SketchTable::from_cells(t.kind(), *t.params(), cells).at(Stage::Aggregate)?;
    Ok(())
}

/// Users with fresh key pairs and ids `u0, u1, …`.
pub(super) fn make_users(n: usize, seed: u64) -> Vec<User<Ristretto255>> {
    let mut rng = stream_rng(seed, KEYS, 0);
    (0..n).map(|i| User::new(format!("u{i}"), KeyPair::generate(&mut rng))).collect()
}

pub(super) fn online_flags(n: usize, rate: f64, seed: u64, round: u64) -> Vec<bool> {
    let mut rng = stream_rng(seed, DROPOUT, round);
    (0..n).map(|_| !rng.gen_bool(rate)).collect()
}

/// Watch histories: per user a length uniform in `[1, 2·mean − 1]`, filled
/// with distinct Zipf-distributed programs.
pub fn gen_histories(users: usize, programs: usize, mean_len: usize, exponent: f64, seed: u64) -> Vec<Vec<u32>> {
    let zipf = Zipf::new(programs as u64, exponent).expect("valid zipf parameters");
    let mut rng = stream_rng(seed, DATA, 0);
    let max_len = (2 * mean_len - 1).min(programs);
    (0..users)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            let mut seen = HashSet::with_capacity(len);
            let mut h = Vec::with_capacity(len);
            while h.len() < len {
                let p = zipf.sample(&mut rng) as u32 - 1;
                if seen.insert(p) {
                    h.push(p);
                }
            }
            h
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommenderTrial {
    pub trial: usize,
    pub online: usize,
    pub dropped: usize,
    pub recovered_groups: usize,
    pub pair_updates: usize,
    pub top_avg_error: f64,
    pub neighbor_overlap: f64,
}

#[derive(Debug, Clone)]
pub struct RecommenderRun {
    pub params: SketchParams,
    pub trials: Vec<RecommenderTrial>,
    pub report: ErrorReport,
    /// Model built from the last trial's aggregate.
    pub model: SimilarityModel,
    /// Aggregate of the last trial.
    pub aggregate: SketchTable,
}

impl RecommenderRun {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["trial", "online_users", "dropped_users", "recovered_groups", "pair_updates", "top_avg_error", "neighbor_overlap"])
            .at(Stage::Output)?;
        for t in &self.trials {
            out.write_record([
                t.trial.to_string(),
                t.online.to_string(),
                t.dropped.to_string(),
                t.recovered_groups.to_string(),
                t.pair_updates.to_string(),
                format!("{:.9e}", t.top_avg_error),
                format!("{:.6}", t.neighbor_overlap),
            ])
            .at(Stage::Output)?;
        }
        out.flush().at(Stage::Output)
    }
}

/// Watch histories → per-user pair sketches → grouped zero-sum aggregation
/// → item-to-item model, scored against the exact co-view counts of the
/// users that stayed online.
pub fn run_recommender(cfg: &ExperimentConfig) -> Result<RecommenderRun> {
    cfg.validate()?;
    let m = cfg.programs;
    let base = derive_params(cfg.epsilon, cfg.delta, DepthRule::CountItems((m * m / 2) as u64)).at(Stage::Sketch)?;
    let mut trials = Vec::with_capacity(cfg.trials);
    let mut last = None;
    for trial in 0..cfg.trials {
        let tseed = stream_rng(cfg.seed, DATA, trial as u64).gen::<u64>();
        let params = base.with_seed(stream_rng(tseed, HASH, 0).gen());
        let histories = gen_histories(cfg.users, m, cfg.history_len, cfg.zipf_exponent, tseed);
        let sketches = histories.iter().map(|h| history_sketch(h, params)).collect::<std::result::Result<Vec<_>, _>>().at(Stage::Sketch)?;
        let online = online_flags(cfg.users, cfg.dropout_rate, tseed, 0);
        let users = cfg.crypto.then(|| make_users(cfg.users, tseed));
        let agg = aggregate_groups(users.as_deref(), &sketches, &online, cfg.group_size, 0, cfg.force_recovery, params)?;

        let exact = ExactCoView::from_histories(m, histories.iter().zip(&online).filter(|(_, &o)| o).map(|(h, _)| h));
        let sketched = SketchCoView::new(&agg.total, m);
        let (pairs, truth): (Vec<(u32, u32)>, Vec<f64>) = (0..m as u32)
            .flat_map(|a| (a..m as u32).map(move |b| (a, b)))
            .map(|(a, b)| ((a, b), exact.co_views(a, b)))
            .unzip();
        let top_avg_error = super::top_k_error_with(&truth, cfg.top_items, |i| {
            agg.total.estimate(&ItemKey::pair(pairs[i].0, pairs[i].1)) as f64
        });
        let exact_model = build_model(&exact, cfg.neighbors).at(Stage::Model)?;
        let sketch_model = build_model(&sketched, cfg.neighbors).at(Stage::Model)?;
        let mut popular: Vec<u32> = (0..m as u32).collect();
        popular.sort_by(|&a, &b| exact.co_views(b, b).total_cmp(&exact.co_views(a, a)).then(a.cmp(&b)));
        popular.truncate(20);

        trials.push(RecommenderTrial {
            trial,
            online: agg.online,
            dropped: agg.dropped,
            recovered_groups: agg.recovered_groups,
            pair_updates: truth.iter().sum::<f64>() as usize,
            top_avg_error,
            neighbor_overlap: neighbor_overlap(&sketch_model, &exact_model, &popular),
        });
        last = Some((sketch_model, agg.total));
    }
    let (model, aggregate) = last.expect("at least one trial");
    let n = trials.len() as f64;
    let report = ErrorReport {
        scenario: "recommender".into(),
        trials: trials.len(),
        avg_error: Some(trials.iter().map(|t| t.top_avg_error).sum::<f64>() / n),
        bytes_per_user: Some(crate::zerosum::wire::payload_bytes(base.len())),
        extra: vec![
            ("sketch_depth".into(), base.depth as f64),
            ("sketch_width".into(), base.width as f64),
            ("neighbor_overlap".into(), trials.iter().map(|t| t.neighbor_overlap).sum::<f64>() / n),
            ("key_download_bytes".into(), crate::zerosum::wire::key_download_bytes::<Ristretto255>(cfg.group_size) as f64),
        ],
        ..Default::default()
    };
    Ok(RecommenderRun { params: base, trials, report, model, aggregate })
}

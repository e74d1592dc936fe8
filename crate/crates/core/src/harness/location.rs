use std::io::Write;

use rand::Rng;

use super::generate::gen_mobility_with;
use super::recommender::{make_users, online_flags, DATA, HASH};
use super::{aggregate_groups, stream_rng, top_k_error_with, AtStage, ErrorReport, ExperimentConfig, Result, Stage};
use crate::analytics::{ewma_grid, heatmap_mae, HeatGrid};
use crate::sketch::{derive_params, DepthRule, ItemKey, SketchParams, SketchTable};

/// Per-slot results of a location run.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRow {
    pub trial: usize,
    pub slot: usize,
    pub reports: usize,
    pub online: usize,
    pub top_avg_error: f64,
    /// EWMA prediction of this slot from earlier slots, scored on the most
    /// popular cells; `None` for the first slot.
    pub mae_exact: Option<f64>,
    pub mae_sketch: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LocationRun {
    pub params: SketchParams,
    pub rows: Vec<SlotRow>,
    pub report: ErrorReport,
    /// Sketch-estimated grids of the last trial.
    pub sketch_grids: Vec<HeatGrid>,
    pub exact_grids: Vec<HeatGrid>,
}

impl LocationRun {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["trial", "slot", "reports", "online", "top_avg_error", "mae_exact", "mae_sketch"]).at(Stage::Output)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            out.write_record([
                r.trial.to_string(),
                r.slot.to_string(),
                r.reports.to_string(),
                r.online.to_string(),
                format!("{:.9e}", r.top_avg_error),
                opt(r.mae_exact),
                opt(r.mae_sketch),
            ])
            .at(Stage::Output)?;
        }
        out.flush().at(Stage::Output)
    }
}

fn entity_sketch(positions: &[(u32, u32)], params: SketchParams) -> Result<SketchTable> {
    let mut t = SketchTable::count_min(params).at(Stage::Sketch)?;
    for &(r, c) in positions {
        t.update(&ItemKey::cell(r, c), 1).at(Stage::Sketch)?;
    }
    Ok(t)
}

/// Synthetic mobility → per-entity, per-slot cell sketches → one zero-sum
/// round per slot → heat maps, scored against exact grids, and EWMA
/// predictions from sketched versus exact history.
pub fn run_location(cfg: &ExperimentConfig) -> Result<LocationRun> {
    cfg.validate()?;
    let p = cfg.grid;
    let base = derive_params(cfg.epsilon, cfg.delta, DepthRule::CountItems((p * p) as u64)).at(Stage::Sketch)?;
    let mut rows = Vec::new();
    let mut last = (Vec::new(), Vec::new());
    for trial in 0..cfg.trials {
        let tseed = stream_rng(cfg.seed, DATA, trial as u64).gen::<u64>();
        let params = base.with_seed(stream_rng(tseed, HASH, 0).gen());
        let mob = gen_mobility_with(cfg.entities, p, cfg.slots, cfg.reports_per_slot, tseed);
        let users = cfg.crypto.then(|| make_users(cfg.entities, tseed));
        let mut exact_grids = Vec::with_capacity(cfg.slots);
        let mut sketch_grids = Vec::with_capacity(cfg.slots);
        for slot in 0..cfg.slots {
            let sketches = (0..cfg.entities).map(|e| entity_sketch(mob.positions(e, slot), params)).collect::<Result<Vec<_>>>()?;
            let online = online_flags(cfg.entities, cfg.dropout_rate, tseed, slot as u64);
            let agg = aggregate_groups(users.as_deref(), &sketches, &online, cfg.group_size, slot as u32, cfg.force_recovery, params)?;

            let mut truth = HeatGrid::new(p);
            for e in (0..cfg.entities).filter(|&e| online[e]) {
                for &(r, c) in mob.positions(e, slot) {
                    truth.add(r as usize, c as usize, 1.0);
                }
            }
            let sketched = HeatGrid::from_sketch(&agg.total, p);
            let top_avg_error = top_k_error_with(truth.cells(), cfg.top_items, |i| sketched.cells()[i]);
            let (mae_exact, mae_sketch) = if slot == 0 {
                (None, None)
            } else {
                let pe = ewma_grid(&exact_grids, cfg.alpha, false).at(Stage::Model)?;
                let ps = ewma_grid(&sketch_grids, cfg.alpha, false).at(Stage::Model)?;
                (
                    Some(heatmap_mae(&pe, &truth, cfg.top_items).at(Stage::Evaluate)?),
                    Some(heatmap_mae(&ps, &truth, cfg.top_items).at(Stage::Evaluate)?),
                )
            };
            rows.push(SlotRow {
                trial,
                slot,
                reports: truth.total() as usize,
                online: agg.online,
                top_avg_error,
                mae_exact,
                mae_sketch,
            });
            exact_grids.push(truth);
            sketch_grids.push(sketched);
        }
        last = (sketch_grids, exact_grids);
    }
    let mean = |f: &dyn Fn(&SlotRow) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter_map(f).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let report = ErrorReport {
        scenario: "location".into(),
        trials: cfg.trials,
        avg_error: Some(mean(&|r| Some(r.top_avg_error))),
        mae: Some(mean(&|r| r.mae_sketch)),
        bytes_per_user: Some(crate::zerosum::wire::payload_bytes(base.len())),
        extra: vec![
            ("sketch_depth".into(), base.depth as f64),
            ("sketch_width".into(), base.width as f64),
            ("mae_exact".into(), mean(&|r| r.mae_exact)),
        ],
        ..Default::default()
    };
    Ok(LocationRun { params: base, rows, report, sketch_grids: last.0, exact_grids: last.1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Scenario;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(Scenario::Location);
        c.entities = 12;
        c.grid = 10;
        c.slots = 4;
        c.group_size = 5;
        c.top_items = 10;
        c
    }

    #[test]
    fn crypto_matches_bypass() {
        let mut c = small();
        c.dropout_rate = 0.2;
        let enc = run_location(&c).unwrap();
        c.crypto = false;
        let plain = run_location(&c).unwrap();
        assert_eq!(enc.rows, plain.rows);
        assert_eq!(enc.sketch_grids, plain.sketch_grids);
        assert!(enc.rows[0].mae_exact.is_none() && enc.rows[1].mae_sketch.is_some());
    }

    #[test]
    fn forced_recovery_changes_nothing() {
        let c = small();
        let a = run_location(&c).unwrap();
        let mut f = small();
        f.force_recovery = true;
        let b = run_location(&f).unwrap();
        assert_eq!(a.rows, b.rows);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}

//! Models trained on aggregate counts: item-to-item cosine neighbours for
//! recommendation and exponentially weighted prediction over heat-map grids.

use std::collections::HashSet;
use std::io::{Read, Write};

use thiserror::Error;

use crate::sketch::{ItemKey, SketchParams, SketchTable};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("grid dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Sketch(#[from] crate::sketch::SketchError),
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;

/// Co-view counts over `M` items. `co_views(a, a)` is the number of viewers
/// of `a`.
pub trait CoViewAggregate {
    fn num_items(&self) -> usize;
    fn co_views(&self, a: u32, b: u32) -> f64;
}

/// Every unordered pair of a user's watched items, diagonal included.
pub fn history_pairs(history: &[u32]) -> Vec<ItemKey> {
    let mut items: Vec<u32> = history.to_vec();
    items.sort_unstable();
    items.dedup();
    let mut out = Vec::with_capacity(items.len() * (items.len() + 1) / 2);
    for (i, &a) in items.iter().enumerate() {
        for &b in &items[i..] {
            out.push(ItemKey::pair(a, b));
        }
    }
    out
}

/// One user's Count-Min table of watched pairs.
pub fn history_sketch(history: &[u32], params: SketchParams) -> Result<SketchTable> {
    let mut t = SketchTable::count_min(params)?;
    for k in history_pairs(history) {
        t.update(&k, 1)?;
    }
    Ok(t)
}

/// Co-view counts read from an aggregate Count-Min table.
#[derive(Debug, Clone)]
pub struct SketchCoView<'a> {
    table: &'a SketchTable,
    items: usize,
}

impl<'a> SketchCoView<'a> {
    pub fn new(table: &'a SketchTable, items: usize) -> Self {
        SketchCoView { table, items }
    }
}

impl CoViewAggregate for SketchCoView<'_> {
    fn num_items(&self) -> usize {
        self.items
    }

    fn co_views(&self, a: u32, b: u32) -> f64 {
        self.table.estimate(&ItemKey::pair(a, b)).max(0) as f64
    }
}

/// Exact symmetric co-view matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactCoView {
    items: usize,
    counts: Vec<f64>,
}

impl ExactCoView {
    pub fn new(items: usize) -> Self {
        ExactCoView { items, counts: vec![0.0; items * items] }
    }

    pub fn from_histories<'h>(items: usize, histories: impl IntoIterator<Item = &'h Vec<u32>>) -> Self {
        let mut m = Self::new(items);
        for h in histories {
            m.add_history(h);
        }
        m
    }

    pub fn add_history(&mut self, history: &[u32]) {
        let mut items: Vec<u32> = history.to_vec();
        items.sort_unstable();
        items.dedup();
        for (i, &a) in items.iter().enumerate() {
            for &b in &items[i..] {
                self.add(a, b, 1.0);
            }
        }
    }

    pub fn add(&mut self, a: u32, b: u32, c: f64) {
        let (a, b) = (a as usize, b as usize);
        self.counts[a * self.items + b] += c;
        if a != b {
            self.counts[b * self.items + a] += c;
        }
    }

    /// Every count multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        ExactCoView { items: self.items, counts: self.counts.iter().map(|c| c * k).collect() }
    }
}

impl CoViewAggregate for ExactCoView {
    fn num_items(&self) -> usize {
        self.items
    }

    fn co_views(&self, a: u32, b: u32) -> f64 {
        self.counts[a as usize * self.items + b as usize]
    }
}

fn cosine_from(cab: f64, caa: f64, cbb: f64) -> f64 {
    if caa <= 0.0 || cbb <= 0.0 {
        return 0.0;
    }
    (cab / (caa * cbb).sqrt()).clamp(0.0, 1.0)
}

/// `C_ab / √(C_aa·C_bb)`, clamped to `[0, 1]`; 0 when a marginal is 0.
pub fn cosine_similarity(agg: &impl CoViewAggregate, a: u32, b: u32) -> f64 {
    cosine_from(agg.co_views(a, b), agg.co_views(a, a), agg.co_views(b, b))
}

/// Per item, its top-`K` neighbours by similarity, heaviest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityModel {
    k: usize,
    neighbors: Vec<Vec<(u32, f64)>>,
}

impl SimilarityModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_items(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, item: u32) -> &[(u32, f64)] {
        &self.neighbors[item as usize]
    }

    pub fn from_neighbors(k: usize, neighbors: Vec<Vec<(u32, f64)>>) -> Self {
        SimilarityModel { k, neighbors }
    }

    /// Rows `item,neighbor,weight`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["item", "neighbor", "weight"])?;
        for (i, list) in self.neighbors.iter().enumerate() {
            for (j, wt) in list {
                out.write_record([i.to_string(), j.to_string(), wt.to_string()])?;
            }
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Top-`k` similarity neighbours of every item. Ties go to the lower index.
pub fn build_model(agg: &impl CoViewAggregate, k: usize) -> Result<SimilarityModel> {
    if k == 0 {
        return Err(AnalyticsError::Parameter("K must be at least 1".into()));
    }
    let m = agg.num_items();
    let diag: Vec<f64> = (0..m as u32).map(|a| agg.co_views(a, a)).collect();
    let mut sim = vec![0.0; m * m];
    for a in 0..m {
        for b in (a + 1)..m {
            let s = cosine_from(agg.co_views(a as u32, b as u32), diag[a], diag[b]);
            sim[a * m + b] = s;
            sim[b * m + a] = s;
        }
    }
    let neighbors = (0..m)
        .map(|a| {
            let mut row: Vec<(u32, f64)> =
                (0..m).filter(|&b| b != a).map(|b| (b as u32, sim[a * m + b])).collect();
            row.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            row.truncate(k);
            row
        })
        .collect();
    Ok(SimilarityModel { k, neighbors })
}

/// Scores unwatched items by the summed weights of their watched
/// neighbours and returns the best `k_out` with nonzero score.
pub fn recommend(model: &SimilarityModel, watched: &[u32], k_out: usize) -> Vec<(u32, f64)> {
    let seen: HashSet<u32> = watched.iter().copied().collect();
    let mut scored: Vec<(u32, f64)> = (0..model.num_items() as u32)
        .filter(|i| !seen.contains(i))
        .map(|i| {
            let s: f64 = model.neighbors(i).iter().filter(|(j, _)| seen.contains(j)).map(|(_, w)| w).sum();
            (i, s)
        })
        .filter(|&(_, s)| s > 0.0)
        .collect();
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    scored.truncate(k_out);
    scored
}

/// Mean Jaccard overlap of the neighbour sets of `items` in two models.
pub fn neighbor_overlap(a: &SimilarityModel, b: &SimilarityModel, items: &[u32]) -> f64 {
    if items.is_empty() {
        return 1.0;
    }
    let total: f64 = items
        .iter()
        .map(|&i| {
            let x: HashSet<u32> = a.neighbors(i).iter().map(|n| n.0).collect();
            let y: HashSet<u32> = b.neighbors(i).iter().map(|n| n.0).collect();
            let union = x.union(&y).count();
            if union == 0 {
                1.0
            } else {
                x.intersection(&y).count() as f64 / union as f64
            }
        })
        .sum();
    total / items.len() as f64
}

/// `Σ_{t'=1..t} α(1−α)^{t−t'} r(t')`.
pub fn ewma_predict(series: &[f64], alpha: f64) -> f64 {
    ewma_predict_with(series, alpha, false)
}

/// As [`ewma_predict`]; with `normalized` the result is divided by the
/// weight total `1 − (1−α)^t`.
pub fn ewma_predict_with(series: &[f64], alpha: f64, normalized: bool) -> f64 {
    let mut acc = 0.0;
    for r in series {
        acc = (1.0 - alpha) * acc + alpha * r;
    }
    if normalized && !series.is_empty() {
        acc / (1.0 - (1.0 - alpha).powi(series.len() as i32))
    } else {
        acc
    }
}

/// A `p × p` grid of counts for one time slot.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatGrid {
    p: usize,
    cells: Vec<f64>,
}

impl HeatGrid {
    pub fn new(p: usize) -> Self {
        HeatGrid { p, cells: vec![0.0; p * p] }
    }

    pub fn from_cells(p: usize, cells: Vec<f64>) -> Result<Self> {
        if cells.len() != p * p {
            return Err(AnalyticsError::DimensionMismatch(p * p, cells.len()));
        }
        Ok(HeatGrid { p, cells })
    }

    /// Estimates of every cell from a Count-Min aggregate of cell keys.
    pub fn from_sketch(table: &SketchTable, p: usize) -> Self {
        let mut g = Self::new(p);
        for r in 0..p {
            for c in 0..p {
                g.cells[r * p + c] = table.estimate(&ItemKey::cell(r as u32, c as u32)).max(0) as f64;
            }
        }
        g
    }

    pub fn side(&self) -> usize {
        self.p
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.p + col]
    }

    pub fn add(&mut self, row: usize, col: usize, c: f64) {
        self.cells[row * self.p + col] += c;
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }

    /// Flat indices of the `n` largest cells, ties to the lower index.
    pub fn top_cells(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.cells.len()).collect();
        idx.sort_by(|&a, &b| self.cells[b].total_cmp(&self.cells[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }
}

/// Cell-wise EWMA prediction of the next grid.
pub fn ewma_grid(series: &[HeatGrid], alpha: f64, normalized: bool) -> Result<HeatGrid> {
    let first = series.first().ok_or_else(|| AnalyticsError::Parameter("empty grid series".into()))?;
    let p = first.p;
    let mut out = HeatGrid::new(p);
    let mut column = Vec::with_capacity(series.len());
    for i in 0..p * p {
        column.clear();
        for g in series {
            if g.p != p {
                return Err(AnalyticsError::DimensionMismatch(p, g.p));
            }
            column.push(g.cells[i]);
        }
        out.cells[i] = ewma_predict_with(&column, alpha, normalized);
    }
    Ok(out)
}

/// Mean `|pred − truth|` over the `top_n` most popular cells of `truth`.
pub fn heatmap_mae(predicted: &HeatGrid, truth: &HeatGrid, top_n: usize) -> Result<f64> {
    if predicted.p != truth.p {
        return Err(AnalyticsError::DimensionMismatch(predicted.p, truth.p));
    }
    let top = truth.top_cells(top_n);
    if top.is_empty() {
        return Ok(0.0);
    }
    Ok(top.iter().map(|&i| (predicted.cells[i] - truth.cells[i]).abs()).sum::<f64>() / top.len() as f64)
}

/// Rows `slot,row,col,count`, nonzero cells only.
pub fn write_grid_series(series: &[HeatGrid], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["slot", "row", "col", "count"])?;
    for (s, g) in series.iter().enumerate() {
        for r in 0..g.p {
            for c in 0..g.p {
                let v = g.get(r, c);
                if v != 0.0 {
                    out.write_record([s.to_string(), r.to_string(), c.to_string(), v.to_string()])?;
                }
            }
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Inverse of [`write_grid_series`] for a `p × p` grid; slots run up to the
/// largest one listed.
pub fn read_grid_series(r: impl Read, p: usize) -> Result<Vec<HeatGrid>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut series: Vec<HeatGrid> = Vec::new();
    for rec in rdr.deserialize::<(usize, usize, usize, f64)>() {
        let (slot, row, col, count) = rec?;
        if row >= p || col >= p {
            return Err(AnalyticsError::Parameter(format!("cell ({row}, {col}) outside a {p}x{p} grid")));
        }
        while series.len() <= slot {
            series.push(HeatGrid::new(p));
        }
        series[slot].add(row, col, count);
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rel_close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
    }

    fn random_histories(m: u32, users: usize, seed: u64) -> Vec<Vec<u32>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..users).map(|_| (0..m).filter(|_| rng.gen_bool(0.3)).collect()).collect()
    }

    #[test]
    fn cosine_edge_cases() {
        let mut c = ExactCoView::new(3);
        assert_eq!(cosine_similarity(&c, 0, 1), 0.0);
        for _ in 0..5 {
            c.add_history(&[0, 1]);
        }
        assert_eq!(cosine_similarity(&c, 0, 1), 1.0);
        assert_eq!(cosine_similarity(&c, 0, 2), 0.0);
        c.add(0, 1, 100.0);
        assert_eq!(cosine_similarity(&c, 0, 1), 1.0);
    }

    #[test]
    fn cosine_matches_direct_formula() {
        let hist = random_histories(10, 40, 1);
        let c = ExactCoView::from_histories(10, &hist);
        for a in 0..10u32 {
            for b in 0..10u32 {
                if a == b {
                    continue;
                }
                let both = hist.iter().filter(|h| h.contains(&a) && h.contains(&b)).count() as f64;
                let na = hist.iter().filter(|h| h.contains(&a)).count() as f64;
                let nb = hist.iter().filter(|h| h.contains(&b)).count() as f64;
                let want = if na == 0.0 || nb == 0.0 { 0.0 } else { both / (na * nb).sqrt() };
                assert!(rel_close(cosine_similarity(&c, a, b), want));
            }
        }
    }

    #[test]
    fn sketch_coview_reads_pair_counts() {
        let hist = random_histories(12, 30, 2);
        let p = SketchParams::with_dims(4, 4096, 3).unwrap();
        let mut agg = SketchTable::count_min(p).unwrap();
        for h in &hist {
            agg.merge_from(&history_sketch(h, p).unwrap()).unwrap();
        }
        let exact = ExactCoView::from_histories(12, &hist);
        let sk = SketchCoView::new(&agg, 12);
        for a in 0..12 {
            for b in 0..12 {
                assert!(sk.co_views(a, b) >= exact.co_views(a, b));
                assert_eq!(sk.co_views(a, b), sk.co_views(b, a));
            }
        }
        assert_eq!(history_pairs(&[3, 1, 3]).len(), 3);
    }

    #[test]
    fn model_shapes() {
        let mut c = ExactCoView::new(2);
        c.add_history(&[0, 1]);
        let m = build_model(&c, 5).unwrap();
        assert_eq!(m.neighbors(0), &[(1, 1.0)]);
        assert_eq!(m.neighbors(1), &[(0, 1.0)]);
        assert!(build_model(&c, 0).is_err());

        let hist = random_histories(8, 20, 3);
        let c = ExactCoView::from_histories(8, &hist);
        let full = build_model(&c, 100).unwrap();
        assert!((0..8).all(|i| full.neighbors(i).len() == 7));
        let top2 = build_model(&c, 2).unwrap();
        for i in 0..8 {
            assert_eq!(top2.neighbors(i), &full.neighbors(i)[..2]);
            let w: Vec<f64> = full.neighbors(i).iter().map(|n| n.1).collect();
            assert!(w.windows(2).all(|p| p[0] >= p[1]));
        }
    }

    #[test]
    fn ties_break_to_lower_index() {
        let mut c = ExactCoView::new(4);
        c.add_history(&[0, 1, 2, 3]);
        let m = build_model(&c, 2).unwrap();
        assert_eq!(m.neighbors(3), &[(0, 1.0), (1, 1.0)]);
        assert_eq!(m.neighbors(0), &[(1, 1.0), (2, 1.0)]);
    }

    #[test]
    fn recommend_hand_model() {
        let model = SimilarityModel::from_neighbors(
            2,
            vec![
                vec![(1, 0.5), (2, 0.25)],
                vec![(0, 0.5), (3, 0.125)],
                vec![(3, 0.75), (0, 0.25)],
                vec![(2, 0.75), (1, 0.125)],
            ],
        );
        assert_eq!(recommend(&model, &[], 3), vec![]);
        assert_eq!(recommend(&model, &[0, 1, 2, 3], 3), vec![]);
        assert_eq!(recommend(&model, &[0], 3), vec![(1, 0.5), (2, 0.25)]);
        assert_eq!(recommend(&model, &[0, 3], 3), vec![(2, 1.0), (1, 0.625)]);
        assert_eq!(recommend(&model, &[0, 3], 1), vec![(2, 1.0)]);
    }

    #[test]
    fn ewma_formula() {
        assert!(rel_close(ewma_predict(&[7.0], 0.3), 2.1));
        for &alpha in &[0.1f64, 0.5, 0.9] {
            for &t in &[1usize, 10, 100] {
                let weights: f64 = (1..=t).map(|tp| alpha * (1.0 - alpha).powi((t - tp) as i32)).sum();
                assert!((weights - (1.0 - (1.0 - alpha).powi(t as i32))).abs() < 1e-12);
                let c = ewma_predict(&vec![4.0; t], alpha);
                assert!((c - 4.0 * (1.0 - (1.0 - alpha).powi(t as i32))).abs() < 1e-12);
                assert!((ewma_predict_with(&vec![4.0; t], alpha, true) - 4.0).abs() < 1e-12);
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let series: Vec<f64> = (0..24).map(|_| rng.gen_range(0.0..500.0)).collect();
        let t = series.len();
        let direct: f64 = (1..=t).map(|tp| 0.1 * 0.9f64.powi((t - tp) as i32) * series[tp - 1]).sum();
        assert!(rel_close(ewma_predict(&series, 0.1), direct));
    }

    #[test]
    fn mae_cases() {
        let mut truth = HeatGrid::new(3);
        for i in 0..9 {
            truth.add(i / 3, i % 3, i as f64);
        }
        assert_eq!(heatmap_mae(&truth, &truth, 4).unwrap(), 0.0);
        let shifted = HeatGrid::from_cells(3, truth.cells().iter().map(|c| c + 2.5).collect()).unwrap();
        assert_eq!(heatmap_mae(&shifted, &truth, 4).unwrap(), 2.5);
        assert_eq!(truth.top_cells(2), vec![8, 7]);
        assert!(heatmap_mae(&HeatGrid::new(2), &truth, 1).is_err());
        assert!(HeatGrid::from_cells(2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn grid_csv_round_trip() {
        let mut a = HeatGrid::new(4);
        a.add(1, 2, 3.0);
        a.add(3, 3, 1.0);
        let mut b = HeatGrid::new(4);
        b.add(0, 0, 7.0);
        let mut buf = Vec::new();
        write_grid_series(&[a.clone(), b.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("slot,row,col,count\n0,1,2,3\n"));
        assert_eq!(read_grid_series(&buf[..], 4).unwrap(), vec![a, b]);
        assert!(read_grid_series(&buf[..], 2).is_err());
    }

    #[test]
    fn model_csv() {
        let model = SimilarityModel::from_neighbors(1, vec![vec![(1, 0.5)], vec![(0, 0.5)]]);
        let mut buf = Vec::new();
        model.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "item,neighbor,weight\n0,1,0.5\n1,0,0.5\n");
    }

    #[test]
    fn ewma_grid_per_cell() {
        let g1 = HeatGrid::from_cells(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g2 = HeatGrid::from_cells(2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let pred = ewma_grid(&[g1, g2], 0.5, false).unwrap();
        assert_eq!(pred.cells(), &[0.25 + 2.5, 0.5 + 3.0, 0.75 + 3.5, 1.0 + 4.0]);
        assert!(ewma_grid(&[], 0.5, false).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn similarity_symmetric_and_scale_invariant(seed in any::<u64>(), k in 0.5f64..50.0, j in -6i32..10) {
            let hist = random_histories(9, 25, seed);
            let c = ExactCoView::from_histories(9, &hist);
            for a in 0..9u32 {
                for b in 0..9u32 {
                    prop_assert_eq!(cosine_similarity(&c, a, b), cosine_similarity(&c, b, a));
                    let s = cosine_similarity(&c, a, b);
                    prop_assert!((0.0..=1.0).contains(&s));
                }
            }
            let ck = c.scaled(k);
            for a in 0..9u32 {
                for b in 0..9u32 {
                    prop_assert!((cosine_similarity(&c, a, b) - cosine_similarity(&ck, a, b)).abs() < 1e-12);
                }
            }
            // Power-of-two scales are exact, so ties stay ties.
            let m1 = build_model(&c, 4).unwrap();
            let m2 = build_model(&c.scaled(2f64.powi(j)), 4).unwrap();
            for i in 0..9u32 {
                let o1: Vec<u32> = m1.neighbors(i).iter().map(|n| n.0).collect();
                let o2: Vec<u32> = m2.neighbors(i).iter().map(|n| n.0).collect();
                prop_assert_eq!(o1, o2);
            }
        }

        #[test]
        fn recommendations_exclude_watched(seed in any::<u64>(), k_out in 0usize..6) {
            let hist = random_histories(8, 20, seed);
            let model = build_model(&ExactCoView::from_histories(8, &hist), 3).unwrap();
            let watched = &hist[0];
            let recs = recommend(&model, watched, k_out);
            prop_assert!(recs.len() <= k_out);
            prop_assert!(recs.iter().all(|(i, s)| !watched.contains(i) && *s > 0.0));
        }
    }
}

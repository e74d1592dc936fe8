use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, Zipf};

use super::stream_rng;
use crate::analytics::HeatGrid;
use crate::sketch::ItemKey;

const ZIPF_STREAM: u64 = 10;
const MIXTURE_STREAM: u64 = 11;
const MOBILITY_STREAM: u64 = 12;

/// `num_draws` zero-based ranks from a Zipf law over `num_items` with the
/// given exponent; rank 0 is the most frequent.
pub fn zipf_ranks(num_items: u64, num_draws: usize, exponent: f64, seed: u64) -> Vec<u64> {
    assert!(exponent > 0.0, "zipf exponent must be positive");
    if num_draws == 0 || num_items == 0 {
        return Vec::new();
    }
    let dist = Zipf::new(num_items, exponent).expect("valid zipf parameters");
    let mut rng = stream_rng(seed, ZIPF_STREAM, 0);
    (0..num_draws).map(|_| dist.sample(&mut rng) as u64 - 1).collect()
}

/// [`zipf_ranks`] as item keys.
pub fn gen_zipf(num_items: u64, num_draws: usize, exponent: f64, seed: u64) -> Vec<ItemKey> {
    zipf_ranks(num_items, num_draws, exponent, seed).into_iter().map(ItemKey::item).collect()
}

/// The reference 1,200-value mixture: 1,000 draws from N(300, 5²) and 200
/// from N(500, 200), rounded and clipped to `[0, 1000)`.
pub fn gen_mixture(seed: u64) -> Vec<i64> {
    gen_mixture_n(1200, seed)
}

/// The same mixture with `n` values in the same 5:1 proportion.
pub fn gen_mixture_n(n: usize, seed: u64) -> Vec<i64> {
    let first = (n as f64 * 5.0 / 6.0).round() as usize;
    let mut rng = stream_rng(seed, MIXTURE_STREAM, 0);
    let a = Normal::new(300.0, 5.0).expect("valid normal");
    let b = Normal::new(500.0, 200f64.sqrt()).expect("valid normal");
    let clip = |x: f64| (x.round() as i64).clamp(0, 999);
    let mut out: Vec<i64> = (0..first).map(|_| clip(a.sample(&mut rng))).collect();
    out.extend((first..n).map(|_| clip(b.sample(&mut rng))));
    out
}

/// Position reports of every entity in every slot on a `p × p` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mobility {
    p: usize,
    slots: usize,
    traces: Vec<Vec<Vec<(u32, u32)>>>,
}

impl Mobility {
    pub fn side(&self) -> usize {
        self.p
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn entities(&self) -> usize {
        self.traces.len()
    }

    pub fn positions(&self, entity: usize, slot: usize) -> &[(u32, u32)] {
        &self.traces[entity][slot]
    }

    /// Exact per-cell report counts of one slot.
    pub fn slot_grid(&self, slot: usize) -> HeatGrid {
        let mut g = HeatGrid::new(self.p);
        for t in &self.traces {
            for &(r, c) in &t[slot] {
                g.add(r as usize, c as usize, 1.0);
            }
        }
        g
    }

    pub fn total_reports(&self) -> usize {
        self.traces.iter().flatten().map(Vec::len).sum()
    }
}

/// [`gen_mobility_with`] at six reports per entity per slot.
pub fn gen_mobility(num_entities: usize, p: usize, slots: usize, seed: u64) -> Mobility {
    gen_mobility_with(num_entities, p, slots, 6, seed)
}

/// Random walks pulled towards a handful of hotspots. Slots are hours; the
/// chance that a step is reported follows a daily cycle peaking mid-afternoon.
pub fn gen_mobility_with(num_entities: usize, p: usize, slots: usize, reports: usize, seed: u64) -> Mobility {
    assert!(p >= 2, "grid side must be at least 2");
    let mut rng = stream_rng(seed, MOBILITY_STREAM, 0);
    let hotspots: Vec<(f64, f64)> = (0..6).map(|_| (rng.gen_range(0.0..p as f64), rng.gen_range(0.0..p as f64))).collect();
    let spread = Normal::new(0.0, p as f64 / 12.0).expect("valid normal");
    let clamp = |x: f64| x.round().clamp(0.0, (p - 1) as f64);

    let mut traces = Vec::with_capacity(num_entities);
    for _ in 0..num_entities {
        let home = hotspots[rng.gen_range(0..hotspots.len())];
        let mut pos = (clamp(home.0 + spread.sample(&mut rng)), clamp(home.1 + spread.sample(&mut rng)));
        let mut per_slot = Vec::with_capacity(slots);
        for slot in 0..slots {
            let hour = (slot % 24) as f64;
            let activity = 0.55 + 0.4 * (2.0 * PI * (hour - 9.0) / 24.0).sin();
            let mut logged = Vec::new();
            for _ in 0..reports {
                if rng.gen_bool(0.2) {
                    pos.0 += (home.0 - pos.0).signum();
                    pos.1 += (home.1 - pos.1).signum();
                } else {
                    pos.0 += rng.gen_range(-1i32..=1) as f64;
                    pos.1 += rng.gen_range(-1i32..=1) as f64;
                }
                pos = (clamp(pos.0), clamp(pos.1));
                if rng.gen_bool(activity) {
                    logged.push((pos.0 as u32, pos.1 as u32));
                }
            }
            per_slot.push(logged);
        }
        traces.push(per_slot);
    }
    Mobility { p, slots, traces }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zipf_shapes() {
        assert!(gen_zipf(700, 0, 1.0, 1).is_empty());
        let r = zipf_ranks(700, 100_000, 1.0, 2);
        let c0 = r.iter().filter(|&&x| x == 0).count() as f64;
        let c1 = r.iter().filter(|&&x| x == 1).count() as f64;
        assert!((c0 / c1 - 2.0).abs() < 0.2, "ratio {}", c0 / c1);
        let steep = zipf_ranks(700, 10_000, 30.0, 3);
        assert!(steep.iter().filter(|&&x| x == 0).count() > 9_990);
        assert_eq!(zipf_ranks(700, 50, 1.0, 4), zipf_ranks(700, 50, 1.0, 4));
        assert!(r.iter().all(|&x| x < 700));
    }

    #[test]
    fn mixture_shape() {
        for seed in 0..20 {
            let v = gen_mixture(seed);
            assert_eq!(v.len(), 1200);
            assert!(v.iter().all(|x| (0..1000).contains(x)));
            let mean = v[..1000].iter().sum::<i64>() as f64 / 1000.0;
            assert!((mean - 300.0).abs() < 1.0, "mean {mean}");
            let m = crate::median::lower_median(&v).unwrap();
            assert!((295..=320).contains(&m), "median {m}");
        }
        assert_eq!(gen_mixture(5), gen_mixture(5));
        assert_eq!(gen_mixture_n(12, 1).len(), 12);
    }

    #[test]
    fn mobility_conservation() {
        let m = gen_mobility(1, 8, 1, 7);
        let g = m.slot_grid(0);
        assert_eq!(g.total() as usize, m.positions(0, 0).len());
        for &(r, c) in m.positions(0, 0) {
            assert!(g.get(r as usize, c as usize) >= 1.0);
        }
        let m = gen_mobility(40, 20, 30, 8);
        let per_slot: f64 = (0..30).map(|s| m.slot_grid(s).total()).sum();
        assert_eq!(per_slot as usize, m.total_reports());
        assert_eq!(m, gen_mobility(40, 20, 30, 8));
        let night = m.slot_grid(3).total();
        let day = m.slot_grid(15).total();
        assert!(day > night, "day {day} night {night}");
    }
}

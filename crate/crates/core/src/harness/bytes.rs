use std::io::Write;

use super::{AtStage, Result, Stage};
use crate::ahe::EncryptedSketch;
use crate::group_crypto::{CryptoGroup, Ristretto255, P224};
use crate::sketch::{derive_params, DepthRule, SketchKind};
use crate::zerosum::wire::{key_download_bytes, payload_bytes};

/// One line of the communication table: a group of `users` paired with a
/// sketch built at `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct ByteRow {
    pub users: usize,
    /// Public keys a user downloads from the tally.
    pub tally_to_user: usize,
    pub epsilon: f64,
    pub sketch_cells: usize,
    /// Blinded sketch payload a user uploads.
    pub user_to_tally: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ByteTable {
    pub programs: usize,
    pub delta: f64,
    pub rows: Vec<ByteRow>,
    /// Upload size of an uncompressed vector of all program pairs.
    pub dense_pairs_bytes: usize,
    /// Encoded encrypted Count Sketch for the median protocol at
    /// `median_epsilon`, over P-224.
    pub median_epsilon: f64,
    pub median_ciphertexts: usize,
    pub median_sketch_bytes: usize,
}

/// Byte counts for `users[i]` paired with `epsilons[i]`, pairs of `programs`
/// items, failure probability `delta`.
pub fn bench_bytes(programs: usize, delta: f64, users: &[usize], epsilons: &[f64], median_epsilon: f64) -> Result<ByteTable> {
    let t = (programs * programs / 2) as u64;
    let mut rows = Vec::with_capacity(users.len());
    for (&n, &eps) in users.iter().zip(epsilons) {
        let p = derive_params(eps, delta, DepthRule::CountItems(t)).at(Stage::Sketch)?;
        rows.push(ByteRow {
            users: n,
            tally_to_user: key_download_bytes::<Ristretto255>(n),
            epsilon: eps,
            sketch_cells: p.len(),
            user_to_tally: payload_bytes(p.len()),
        });
    }
    let mp = derive_params(median_epsilon, median_epsilon, DepthRule::FailureOnly)
        .at(Stage::Sketch)?
        .for_kind(SketchKind::Count);
    let median_sketch_bytes = EncryptedSketch::<P224>::zero(SketchKind::Count, mp).encode().len();
    Ok(ByteTable {
        programs,
        delta,
        rows,
        dense_pairs_bytes: programs * (programs + 1) / 2 * 4,
        median_epsilon,
        median_ciphertexts: mp.len(),
        median_sketch_bytes,
    })
}

impl ByteTable {
    /// Groups of 100 to 1000 users against ε = 0.01 to 0.1, 700 programs.
    pub fn reference() -> Result<Self> {
        let users: Vec<usize> = (1..=10).map(|k| 100 * k).collect();
        let eps: Vec<f64> = (1..=10).map(|k| k as f64 / 100.0).collect();
        bench_bytes(700, 0.01, &users, &eps, 0.05)
    }
}

/// Columns `users,tally_to_user,epsilon,sketch_cells,user_to_tally`.
pub fn write_bytes_csv(table: &ByteTable, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["users", "tally_to_user", "epsilon", "sketch_cells", "user_to_tally"]).at(Stage::Output)?;
    for r in &table.rows {
        out.write_record([
            r.users.to_string(),
            r.tally_to_user.to_string(),
            r.epsilon.to_string(),
            r.sketch_cells.to_string(),
            r.user_to_tally.to_string(),
        ])
        .at(Stage::Output)?;
    }
    out.flush().at(Stage::Output)
}

impl std::fmt::Display for ByteTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:>6} {:>14} {:>8} {:>12} {:>14}", "users", "tally->user", "epsilon", "sketch_size", "user->tally")?;
        for r in &self.rows {
            writeln!(f, "{:>6} {:>14} {:>8} {:>12} {:>14}", r.users, r.tally_to_user, r.epsilon, r.sketch_cells, r.user_to_tally)?;
        }
        writeln!(f, "dense pair vector for {} programs: {} bytes", self.programs, self.dense_pairs_bytes)?;
        writeln!(
            f,
            "encrypted median sketch at epsilon {}: {} ciphertexts, {} bytes ({} per point)",
            self.median_epsilon,
            self.median_ciphertexts,
            self.median_sketch_bytes,
            P224::ENCODED_LEN
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_first_row() {
        let t = ByteTable::reference().unwrap();
        assert_eq!(t.rows[0].sketch_cells, 4896);
        assert_eq!(t.rows[0].user_to_tally, 19_584);
        assert_eq!(t.rows[0].tally_to_user, 3_200);
        assert_eq!(t.rows[9].tally_to_user, 32_000);
        assert_eq!(t.rows[1].sketch_cells, 2448);
        assert_eq!(t.median_ciphertexts, 168);
        assert_eq!(t.median_sketch_bytes, 21 + 168 * 58);
        let mut buf = Vec::new();
        write_bytes_csv(&t, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("\n100,3200,0.01,4896,19584\n"));
    }
}

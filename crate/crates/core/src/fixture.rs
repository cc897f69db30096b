//! Seeded synthetic datasets for exercising the analysis pipeline.
//!
//! [`generate`] draws participant rows from a ChaCha stream and computes the
//! statistics [`crate::analysis::analyze`] should report for them under its
//! default options. The expected values come from a separate, deliberately
//! plain implementation in this module (Welford accumulation, positional
//! quantiles) so the two can be checked against each other.

use crate::analysis::{
    self, AnalysisError, AnalysisOptions, ParticipantRow, Preference, SelectionStats,
    MIN_OUTLIER_ROWS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Draws that put a value this close to a decision boundary are redrawn.
const BOUNDARY_MARGIN: f64 = 1e-6;
const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedStats {
    pub seed: u64,
    pub n_total: usize,
    pub n: usize,
    pub excluded_ids: Vec<String>,
    pub non_dichoptic_mean: f64,
    pub non_dichoptic_sd: f64,
    pub midpoint_mean: f64,
    pub midpoint_sd: f64,
    pub range_mean: f64,
    pub range_sd: f64,
    pub range_q1: f64,
    pub range_q2: f64,
    pub range_q3: f64,
    pub preference_proportion: f64,
}

impl ExpectedStats {
    /// Describe every field of `stats` that differs from `self` by more than `tol`.
    pub fn mismatches(&self, stats: &SelectionStats, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        if stats.n_total != self.n_total || stats.n != self.n {
            out.push(format!(
                "counts: got {}/{}, expected {}/{}",
                stats.n, stats.n_total, self.n, self.n_total
            ));
        }
        let mut got_ids: Vec<&str> = stats.excluded_ids();
        got_ids.sort_unstable();
        let mut want_ids: Vec<&str> = self.excluded_ids.iter().map(String::as_str).collect();
        want_ids.sort_unstable();
        if got_ids != want_ids {
            out.push(format!("excluded: got {got_ids:?}, expected {want_ids:?}"));
        }
        let pairs = [
            (
                "non_dichoptic_mean",
                stats.non_dichoptic.mean,
                self.non_dichoptic_mean,
            ),
            (
                "non_dichoptic_sd",
                stats.non_dichoptic.sd,
                self.non_dichoptic_sd,
            ),
            ("midpoint_mean", stats.midpoint.mean, self.midpoint_mean),
            ("midpoint_sd", stats.midpoint.sd, self.midpoint_sd),
            ("range_mean", stats.range.mean, self.range_mean),
            ("range_sd", stats.range.sd, self.range_sd),
            ("range_q1", stats.range_quartiles.q1, self.range_q1),
            ("range_q2", stats.range_quartiles.q2, self.range_q2),
            ("range_q3", stats.range_quartiles.q3, self.range_q3),
            (
                "preference_proportion",
                stats.preference_proportion,
                self.preference_proportion,
            ),
        ];
        for (name, got, want) in pairs {
            // NaN on either side counts as a mismatch.
            let close = (got - want).abs() <= tol;
            if !close {
                out.push(format!("{name}: got {got}, expected {want}"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub rows: Vec<ParticipantRow>,
    pub expected: ExpectedStats,
}

fn round2(x: f64) -> f64 {
    (x.clamp(0.0, 1.0) * 100.0).round() / 100.0
}

fn draw_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<ParticipantRow> {
    let non = Normal::new(0.5, 0.08).expect("valid normal");
    let mid = Normal::new(0.49, 0.05).expect("valid normal");
    let spread = Normal::<f64>::new(0.0, 0.3).expect("valid normal");
    let mut rows: Vec<ParticipantRow> = (0..n)
        .map(|i| {
            let m: f64 = mid.sample(rng);
            let half = spread.sample(rng).abs().min(m).min(1.0 - m) / 2.0;
            let (l, r) = if rng.gen_bool(0.5) {
                (m - half, m + half)
            } else {
                (m + half, m - half)
            };
            ParticipantRow {
                participant_id: format!("F{:03}", i + 1),
                non_dichoptic_alpha: round2(non.sample(rng)),
                dichoptic_left: round2(l),
                dichoptic_right: round2(r),
                preference: if rng.gen_bool(0.7) {
                    Preference::Dichoptic
                } else {
                    Preference::NonDichoptic
                },
            }
        })
        .collect();
    if n >= 8 && rng.gen_bool(0.5) {
        let k = rng.gen_range(0..n);
        rows[k].non_dichoptic_alpha = round2(rng.gen_range(0.93..0.99));
    }
    rows
}

/// Generate `n` rows from `seed` together with their expected statistics.
pub fn generate(seed: u64, n: usize) -> Result<Fixture, AnalysisError> {
    if n < MIN_OUTLIER_ROWS {
        return Err(AnalysisError::InsufficientData {
            needed: MIN_OUTLIER_ROWS,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let rows = draw_rows(&mut rng, n);
        if let Some(expected) = oracle(seed, &rows) {
            return Ok(Fixture { rows, expected });
        }
    }
    Err(AnalysisError::InsufficientData { needed: n, got: 0 })
}

/// Path of the expected-statistics file written next to `csv`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("expected.json")
}

/// Write the rows to `csv` and the expected statistics beside it.
pub fn write(fixture: &Fixture, csv: &Path) -> std::io::Result<PathBuf> {
    std::fs::write(csv, analysis::write_csv(&fixture.rows))?;
    let sidecar = sidecar_path(csv);
    let json = serde_json::to_string_pretty(&fixture.expected).expect("stats serialize");
    std::fs::write(&sidecar, json + "\n")?;
    Ok(sidecar)
}

pub fn read_expected(path: &Path) -> std::io::Result<ExpectedStats> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

// ---------------------------------------------------------------------------
// Reference computation, default options only: sample SD, type-7 quartiles,
// |z| > 2 and 1.5 x IQR fences, exclusion when both fire.

struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut w = Welford {
            n: 0,
            mean: 0.0,
            m2: 0.0,
        };
        for x in values {
            w.n += 1;
            let d = x - w.mean;
            w.mean += d / w.n as f64;
            w.m2 += d * (x - w.mean);
        }
        w
    }

    fn sample_sd(&self) -> f64 {
        (self.m2 / (self.n - 1) as f64).sqrt()
    }
}

fn positional_quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Expected statistics, or `None` when a value sits too close to a boundary
/// for the result to be robust to rounding.
fn oracle(seed: u64, rows: &[ParticipantRow]) -> Option<ExpectedStats> {
    let opts = AnalysisOptions::default();
    let xs: Vec<f64> = rows.iter().map(|r| r.non_dichoptic_alpha).collect();
    let constant = xs.iter().all(|&x| x == xs[0]);
    let w = Welford::of(xs.iter().copied());
    let sd = w.sample_sd();
    let q1 = positional_quantile(&xs, 0.25);
    let q3 = positional_quantile(&xs, 0.75);
    let lo = q1 - opts.fence_k * (q3 - q1);
    let hi = q3 + opts.fence_k * (q3 - q1);

    let mut kept = Vec::new();
    let mut excluded_ids = Vec::new();
    for r in rows {
        let x = r.non_dichoptic_alpha;
        if !constant {
            let z = (x - w.mean) / sd;
            if (z.abs() - opts.z_threshold).abs() < BOUNDARY_MARGIN
                || (x - lo).abs() < BOUNDARY_MARGIN
                || (x - hi).abs() < BOUNDARY_MARGIN
            {
                return None;
            }
            if z.abs() > opts.z_threshold && (x < lo || x > hi) {
                excluded_ids.push(r.participant_id.clone());
                continue;
            }
        }
        kept.push(r);
    }
    if kept.len() < 2 {
        return None;
    }

    let non = Welford::of(kept.iter().map(|r| r.non_dichoptic_alpha));
    let mids = Welford::of(
        kept.iter()
            .map(|r| 0.5 * r.dichoptic_left + 0.5 * r.dichoptic_right),
    );
    let ranges: Vec<f64> = kept
        .iter()
        .map(|r| {
            let d = r.dichoptic_left - r.dichoptic_right;
            if d < 0.0 {
                -d
            } else {
                d
            }
        })
        .collect();
    let rw = Welford::of(ranges.iter().copied());
    let preferred = kept
        .iter()
        .filter(|r| r.preference == Preference::Dichoptic)
        .count();

    Some(ExpectedStats {
        seed,
        n_total: rows.len(),
        n: kept.len(),
        excluded_ids,
        non_dichoptic_mean: non.mean,
        non_dichoptic_sd: non.sample_sd(),
        midpoint_mean: mids.mean,
        midpoint_sd: mids.sample_sd(),
        range_mean: rw.mean,
        range_sd: rw.sample_sd(),
        range_q1: positional_quantile(&ranges, 0.25),
        range_q2: positional_quantile(&ranges, 0.5),
        range_q3: positional_quantile(&ranges, 0.75),
        preference_proportion: preferred as f64 / kept.len() as f64,
    })
}

//! Analysis of per-participant selections.
//!
//! Input is a CSV with the header
//! `participant_id,non_dichoptic_alpha,dichoptic_left,dichoptic_right,preference`
//! where `preference` is `Dichoptic` or `NonDichoptic`. Files with other column
//! names can be read through an [`IngestMapping`].
//!
//! [`analyze`] screens the non-dichoptic column for outliers (z-score and
//! Tukey fences), drops the flagged participants, and summarises what is left:
//! non-dichoptic mean/SD, per-participant midpoint and range of the two eye
//! values with their mean/SD, quartiles of the ranges, and the share of
//! participants preferring the dichoptic setting.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

pub const CSV_HEADER: [&str; 5] = [
    "participant_id",
    "non_dichoptic_alpha",
    "dichoptic_left",
    "dichoptic_right",
    "preference",
];

/// Minimum rows for outlier screening and for [`analyze`].
pub const MIN_OUTLIER_ROWS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("parse error at line {line}{}: {message}", column_note(.column))]
    Parse {
        line: usize,
        column: String,
        message: String,
    },
    #[error("insufficient data: need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("io error: {0}")]
    Io(String),
    #[error("invalid mapping: {0}")]
    Mapping(String),
}

fn column_note(column: &str) -> String {
    if column.is_empty() {
        String::new()
    } else {
        format!(", column `{column}`")
    }
}

impl AnalysisError {
    fn parse(line: usize, column: &str, message: impl Into<String>) -> Self {
        AnalysisError::Parse {
            line,
            column: column.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preference {
    Dichoptic,
    NonDichoptic,
}

impl Preference {
    pub fn as_str(self) -> &'static str {
        match self {
            Preference::Dichoptic => "Dichoptic",
            Preference::NonDichoptic => "NonDichoptic",
        }
    }
}

impl fmt::Display for Preference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preference {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "Dichoptic" => Ok(Preference::Dichoptic),
            "NonDichoptic" => Ok(Preference::NonDichoptic),
            other => Err(format!("expected Dichoptic or NonDichoptic, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRow {
    pub participant_id: String,
    pub non_dichoptic_alpha: f64,
    pub dichoptic_left: f64,
    pub dichoptic_right: f64,
    pub preference: Preference,
}

impl ParticipantRow {
    pub fn midpoint(&self) -> f64 {
        midpoint(self.dichoptic_left, self.dichoptic_right)
    }

    pub fn range(&self) -> f64 {
        range(self.dichoptic_left, self.dichoptic_right)
    }
}

/// Centre of the two eye values (the median of two numbers is their mean).
pub fn midpoint(left: f64, right: f64) -> f64 {
    (left + right) / 2.0
}

/// Absolute difference between the two eye values.
pub fn range(left: f64, right: f64) -> f64 {
    (left - right).abs()
}

// ---------------------------------------------------------------------------
// CSV

/// Maps a foreign CSV layout onto [`ParticipantRow`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestMapping {
    pub participant_id: String,
    pub non_dichoptic_alpha: String,
    pub dichoptic_left: String,
    pub dichoptic_right: String,
    pub preference: String,
    /// Cell values (case-insensitive) meaning the dichoptic setting was preferred.
    pub dichoptic_values: Vec<String>,
    /// Cell values (case-insensitive) meaning the non-dichoptic setting was preferred.
    pub non_dichoptic_values: Vec<String>,
    /// Stored alphas are divided by this (e.g. 100 for percentages).
    pub alpha_scale: f64,
}

impl Default for IngestMapping {
    fn default() -> Self {
        Self {
            participant_id: CSV_HEADER[0].into(),
            non_dichoptic_alpha: CSV_HEADER[1].into(),
            dichoptic_left: CSV_HEADER[2].into(),
            dichoptic_right: CSV_HEADER[3].into(),
            preference: CSV_HEADER[4].into(),
            dichoptic_values: vec!["Dichoptic".into()],
            non_dichoptic_values: vec!["NonDichoptic".into()],
            alpha_scale: 1.0,
        }
    }
}

impl IngestMapping {
    pub fn from_toml_str(text: &str) -> Result<Self, AnalysisError> {
        let m: IngestMapping =
            toml::from_str(text).map_err(|e| AnalysisError::Mapping(e.to_string()))?;
        if !(m.alpha_scale.is_finite() && m.alpha_scale > 0.0) {
            return Err(AnalysisError::Mapping(
                "alpha_scale must be positive".into(),
            ));
        }
        Ok(m)
    }

    fn is_default_schema(&self) -> bool {
        *self == IngestMapping::default()
    }
}

/// Parse CSV in the native schema.
pub fn parse_csv(text: &str) -> Result<Vec<ParticipantRow>, AnalysisError> {
    parse_csv_with(text, &IngestMapping::default())
}

pub fn parse_csv_with(
    text: &str,
    mapping: &IngestMapping,
) -> Result<Vec<ParticipantRow>, AnalysisError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if text.trim().is_empty() {
        return Err(AnalysisError::parse(1, "", "empty input"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| AnalysisError::parse(1, "", e.to_string()))?
        .clone();
    if mapping.is_default_schema() {
        let got: Vec<&str> = headers.iter().collect();
        if got != CSV_HEADER {
            return Err(AnalysisError::parse(
                1,
                "",
                format!(
                    "header must be `{}`, got `{}`",
                    CSV_HEADER.join(","),
                    got.join(",")
                ),
            ));
        }
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AnalysisError::parse(1, name, "column missing from header"))
    };
    let cols = [
        find(&mapping.participant_id)?,
        find(&mapping.non_dichoptic_alpha)?,
        find(&mapping.dichoptic_left)?,
        find(&mapping.dichoptic_right)?,
        find(&mapping.preference)?,
    ];
    let names = [
        &mapping.participant_id,
        &mapping.non_dichoptic_alpha,
        &mapping.dichoptic_left,
        &mapping.dichoptic_right,
        &mapping.preference,
    ];

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| AnalysisError::parse(line, "", e.to_string()))?;
        if record.len() != headers.len() {
            return Err(AnalysisError::parse(
                line,
                "",
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let cell = |k: usize| record.get(cols[k]).unwrap_or("");
        let alpha = |k: usize| -> Result<f64, AnalysisError> {
            let raw = cell(k);
            let v: f64 = raw.parse().map_err(|_| {
                AnalysisError::parse(line, names[k], format!("`{raw}` is not a number"))
            })?;
            let v = v / mapping.alpha_scale;
            if !(0.0..=1.0).contains(&v) {
                return Err(AnalysisError::parse(
                    line,
                    names[k],
                    format!("alpha {v} outside [0, 1]"),
                ));
            }
            Ok(v)
        };
        let id = cell(0).to_string();
        if id.is_empty() {
            return Err(AnalysisError::parse(line, names[0], "empty participant id"));
        }
        if !seen.insert(id.clone()) {
            return Err(AnalysisError::parse(
                line,
                names[0],
                format!("duplicate participant `{id}`"),
            ));
        }
        let pref_raw = cell(4);
        let matches = |set: &[String]| set.iter().any(|v| v.eq_ignore_ascii_case(pref_raw));
        let preference = if matches(&mapping.dichoptic_values) {
            Preference::Dichoptic
        } else if matches(&mapping.non_dichoptic_values) {
            Preference::NonDichoptic
        } else {
            return Err(AnalysisError::parse(
                line,
                names[4],
                format!("unrecognised preference `{pref_raw}`"),
            ));
        };
        rows.push(ParticipantRow {
            participant_id: id,
            non_dichoptic_alpha: alpha(1)?,
            dichoptic_left: alpha(2)?,
            dichoptic_right: alpha(3)?,
            preference,
        });
    }
    if rows.is_empty() {
        return Err(AnalysisError::parse(2, "", "no data rows"));
    }
    Ok(rows)
}

pub fn load_csv(
    path: &Path,
    mapping: &IngestMapping,
) -> Result<Vec<ParticipantRow>, AnalysisError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AnalysisError::Io(format!("{}: {e}", path.display())))?;
    parse_csv_with(&text, mapping)
}

/// Serialise rows in the native schema.
pub fn write_csv(rows: &[ParticipantRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.participant_id.clone(),
            r.non_dichoptic_alpha.to_string(),
            r.dichoptic_left.to_string(),
            r.dichoptic_right.to_string(),
            r.preference.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SdConvention {
    /// Divide by `n - 1`.
    #[default]
    Sample,
    /// Divide by `n`.
    Population,
}

impl SdConvention {
    pub const ALL: [SdConvention; 2] = [SdConvention::Sample, SdConvention::Population];
}

impl fmt::Display for SdConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SdConvention::Sample => "sample (n-1)",
            SdConvention::Population => "population (n)",
        })
    }
}

/// Sample quantile definitions (Hyndman & Fan numbering where applicable).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMethod {
    /// Type 7: linear interpolation between order statistics, `h = (n-1)p`.
    #[default]
    Linear,
    /// Type 5: piecewise linear with knots at `(k - 0.5) / n`.
    Hazen,
    /// Type 6: `h = (n+1)p`.
    Weibull,
    /// Type 8: approximately median-unbiased.
    MedianUnbiased,
    /// Type 9: approximately unbiased for normal data.
    NormalUnbiased,
    /// Tukey's hinges: medians of the lower and upper halves (median included when `n` is odd).
    TukeyHinges,
}

impl QuantileMethod {
    pub const ALL: [QuantileMethod; 6] = [
        QuantileMethod::Linear,
        QuantileMethod::Hazen,
        QuantileMethod::Weibull,
        QuantileMethod::MedianUnbiased,
        QuantileMethod::NormalUnbiased,
        QuantileMethod::TukeyHinges,
    ];

    /// Plotting-position offset `m` in `j = floor(np + m)`.
    fn offset(self, p: f64) -> Option<f64> {
        let (a, b) = match self {
            QuantileMethod::Linear => (1.0, 1.0),
            QuantileMethod::Hazen => (0.5, 0.5),
            QuantileMethod::Weibull => (0.0, 0.0),
            QuantileMethod::MedianUnbiased => (1.0 / 3.0, 1.0 / 3.0),
            QuantileMethod::NormalUnbiased => (3.0 / 8.0, 3.0 / 8.0),
            QuantileMethod::TukeyHinges => return None,
        };
        Some(a + p * (1.0 - a - b))
    }
}

impl fmt::Display for QuantileMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantileMethod::Linear => "linear interpolation (type 7)",
            QuantileMethod::Hazen => "Hazen (type 5)",
            QuantileMethod::Weibull => "Weibull (type 6)",
            QuantileMethod::MedianUnbiased => "median-unbiased (type 8)",
            QuantileMethod::NormalUnbiased => "normal-unbiased (type 9)",
            QuantileMethod::TukeyHinges => "Tukey hinges",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean and standard deviation. Requires at least two values.
pub fn descriptive(values: &[f64], convention: SdConvention) -> Result<Descriptive, AnalysisError> {
    if values.len() < 2 {
        return Err(AnalysisError::InsufficientData {
            needed: 2,
            got: values.len(),
        });
    }
    let n = values.len();
    if values.iter().all(|&v| v == values[0]) {
        return Ok(Descriptive {
            n,
            mean: values[0],
            sd: 0.0,
        });
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    let denom = match convention {
        SdConvention::Sample => (n - 1) as f64,
        SdConvention::Population => n as f64,
    };
    Ok(Descriptive {
        n,
        mean: m,
        sd: (ss / denom).sqrt(),
    })
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn median_sorted(s: &[f64]) -> f64 {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// The `p`-quantile of `values`, `p` in `[0, 1]`.
pub fn quantile(values: &[f64], p: f64, method: QuantileMethod) -> Result<f64, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::InsufficientData { needed: 1, got: 0 });
    }
    let s = sorted(values);
    Ok(quantile_sorted(&s, p, method))
}

fn quantile_sorted(s: &[f64], p: f64, method: QuantileMethod) -> f64 {
    let n = s.len();
    let Some(m) = method.offset(p) else {
        return tukey_hinge(s, p);
    };
    let np = n as f64 * p + m;
    let j = np.floor();
    let gamma = np - j;
    // 1-based order statistic, clamped to the sample.
    let at = |k: f64| s[(k.max(1.0).min(n as f64) as usize) - 1];
    (1.0 - gamma) * at(j) + gamma * at(j + 1.0)
}

fn tukey_hinge(s: &[f64], p: f64) -> f64 {
    let n = s.len();
    if p <= 0.0 {
        return s[0];
    }
    if p >= 1.0 {
        return s[n - 1];
    }
    if (p - 0.5).abs() < 1e-12 {
        return median_sorted(s);
    }
    let half = n.div_ceil(2);
    if p < 0.5 {
        median_sorted(&s[..half])
    } else {
        median_sorted(&s[n - half..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

pub fn quartiles(values: &[f64], method: QuantileMethod) -> Result<Quartiles, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::InsufficientData { needed: 1, got: 0 });
    }
    let s = sorted(values);
    Ok(Quartiles {
        q1: quantile_sorted(&s, 0.25, method),
        q2: quantile_sorted(&s, 0.5, method),
        q3: quantile_sorted(&s, 0.75, method),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierFlag {
    pub value: f64,
    /// Zero when the data has no variance.
    pub z_score: f64,
    pub z_flag: bool,
    pub iqr_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub flags: Vec<OutlierFlag>,
    pub mean: f64,
    pub sd: f64,
    pub no_variance: bool,
    pub quartiles: Quartiles,
    pub lower_fence: f64,
    pub upper_fence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionRule {
    /// Exclude only values flagged by both the z-score and the fences.
    #[default]
    Both,
    /// Exclude values flagged by either rule.
    Either,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub sd: SdConvention,
    pub quantile: QuantileMethod,
    /// `|z|` strictly above this is flagged.
    pub z_threshold: f64,
    /// Tukey fence multiplier on the IQR.
    pub fence_k: f64,
    pub exclusion: ExclusionRule,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            sd: SdConvention::Sample,
            quantile: QuantileMethod::Linear,
            z_threshold: 2.0,
            fence_k: 1.5,
            exclusion: ExclusionRule::Both,
        }
    }
}

/// Flag each value by z-score over the whole input and by Tukey fences.
pub fn detect_outliers(
    values: &[f64],
    options: &AnalysisOptions,
) -> Result<OutlierReport, AnalysisError> {
    if values.len() < MIN_OUTLIER_ROWS {
        return Err(AnalysisError::InsufficientData {
            needed: MIN_OUTLIER_ROWS,
            got: values.len(),
        });
    }
    let d = descriptive(values, options.sd)?;
    let no_variance = d.sd == 0.0;
    let q = quartiles(values, options.quantile)?;
    let lower_fence = q.q1 - options.fence_k * q.iqr();
    let upper_fence = q.q3 + options.fence_k * q.iqr();
    let flags = values
        .iter()
        .map(|&v| {
            let z = if no_variance {
                0.0
            } else {
                (v - d.mean) / d.sd
            };
            OutlierFlag {
                value: v,
                z_score: z,
                z_flag: !no_variance && z.abs() > options.z_threshold,
                iqr_flag: !no_variance && (v < lower_fence || v > upper_fence),
            }
        })
        .collect();
    Ok(OutlierReport {
        flags,
        mean: d.mean,
        sd: d.sd,
        no_variance,
        quartiles: q,
        lower_fence,
        upper_fence,
    })
}

/// Share of rows preferring the dichoptic setting.
pub fn preference_proportion(rows: &[ParticipantRow]) -> Result<f64, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::InsufficientData { needed: 1, got: 0 });
    }
    let k = rows
        .iter()
        .filter(|r| r.preference == Preference::Dichoptic)
        .count();
    Ok(k as f64 / rows.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub participant_id: String,
    pub value: f64,
    pub z_score: f64,
    pub z_flag: bool,
    pub iqr_flag: bool,
}

impl Exclusion {
    pub fn reason(&self) -> String {
        let mut parts = Vec::new();
        if self.z_flag {
            parts.push(format!("z = {:.2}", self.z_score));
        }
        if self.iqr_flag {
            parts.push("outside Tukey fences".to_string());
        }
        parts.join(", ")
    }
}

/// One line of the per-participant chart, ordered by dichoptic range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartRow {
    pub participant_id: String,
    pub non_dichoptic: f64,
    pub left: f64,
    pub right: f64,
    pub midpoint: f64,
    pub range: f64,
    pub preference: Preference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub options: AnalysisOptions,
    pub n_total: usize,
    /// Rows retained after exclusion.
    pub n: usize,
    pub non_dichoptic: Descriptive,
    pub midpoint: Descriptive,
    pub range: Descriptive,
    /// Per retained participant, ordered by participant id.
    pub participant_ids: Vec<String>,
    pub midpoints: Vec<f64>,
    pub ranges: Vec<f64>,
    pub range_quartiles: Quartiles,
    pub screening: OutlierReport,
    pub excluded: Vec<Exclusion>,
    pub dichoptic_preferred: usize,
    pub preference_proportion: f64,
    pub chart: Vec<ChartRow>,
}

impl SelectionStats {
    pub fn excluded_ids(&self) -> Vec<&str> {
        self.excluded
            .iter()
            .map(|e| e.participant_id.as_str())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats always serialize")
    }
}

/// Screen, exclude and summarise a dataset.
pub fn analyze(
    rows: &[ParticipantRow],
    options: &AnalysisOptions,
) -> Result<SelectionStats, AnalysisError> {
    if rows.len() < MIN_OUTLIER_ROWS {
        return Err(AnalysisError::InsufficientData {
            needed: MIN_OUTLIER_ROWS,
            got: rows.len(),
        });
    }
    // Fixed order makes every floating-point sum independent of input order.
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));

    let column: Vec<f64> = rows.iter().map(|r| r.non_dichoptic_alpha).collect();
    let screening = detect_outliers(&column, options)?;
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (row, flag) in rows.iter().zip(&screening.flags) {
        let drop = match options.exclusion {
            ExclusionRule::Both => flag.z_flag && flag.iqr_flag,
            ExclusionRule::Either => flag.z_flag || flag.iqr_flag,
        };
        if drop {
            excluded.push(Exclusion {
                participant_id: row.participant_id.clone(),
                value: flag.value,
                z_score: flag.z_score,
                z_flag: flag.z_flag,
                iqr_flag: flag.iqr_flag,
            });
        } else {
            kept.push(row.clone());
        }
    }

    let non: Vec<f64> = kept.iter().map(|r| r.non_dichoptic_alpha).collect();
    let midpoints: Vec<f64> = kept.iter().map(ParticipantRow::midpoint).collect();
    let ranges: Vec<f64> = kept.iter().map(ParticipantRow::range).collect();
    let dichoptic_preferred = kept
        .iter()
        .filter(|r| r.preference == Preference::Dichoptic)
        .count();

    let mut chart: Vec<ChartRow> = kept
        .iter()
        .map(|r| ChartRow {
            participant_id: r.participant_id.clone(),
            non_dichoptic: r.non_dichoptic_alpha,
            left: r.dichoptic_left,
            right: r.dichoptic_right,
            midpoint: r.midpoint(),
            range: r.range(),
            preference: r.preference,
        })
        .collect();
    chart.sort_by(|a, b| {
        a.range
            .total_cmp(&b.range)
            .then(a.participant_id.cmp(&b.participant_id))
    });

    Ok(SelectionStats {
        options: *options,
        n_total: rows.len(),
        n: kept.len(),
        non_dichoptic: descriptive(&non, options.sd)?,
        midpoint: descriptive(&midpoints, options.sd)?,
        range: descriptive(&ranges, options.sd)?,
        participant_ids: kept.iter().map(|r| r.participant_id.clone()).collect(),
        range_quartiles: quartiles(&ranges, options.quantile)?,
        midpoints,
        ranges,
        screening,
        excluded,
        dichoptic_preferred,
        preference_proportion: preference_proportion(&kept)?,
        chart,
    })
}

/// Human-readable summary.
pub fn render_report(stats: &SelectionStats) -> String {
    let mut s = String::new();
    let o = &stats.options;
    let _ = writeln!(s, "Selection analysis");
    let _ = writeln!(s, "  SD convention:   {}", o.sd);
    let _ = writeln!(s, "  quantile method: {}", o.quantile);
    let _ = writeln!(
        s,
        "  outlier rule:    |z| > {} {} outside Q1/Q3 -/+ {} x IQR",
        o.z_threshold,
        match o.exclusion {
            ExclusionRule::Both => "and",
            ExclusionRule::Either => "or",
        },
        o.fence_k
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Participants: {} ({} after exclusion)",
        stats.n_total, stats.n
    );
    if stats.screening.no_variance {
        let _ = writeln!(
            s,
            "Screening: no variance in non-dichoptic selections; nothing flagged"
        );
    }
    if stats.excluded.is_empty() {
        let _ = writeln!(s, "Excluded: none");
    } else {
        for e in &stats.excluded {
            let _ = writeln!(
                s,
                "Excluded: {} (value {:.3}; {})",
                e.participant_id,
                e.value,
                e.reason()
            );
        }
    }
    let _ = writeln!(s);
    let row = |s: &mut String, name: &str, d: &Descriptive| {
        let _ = writeln!(s, "{name:<22} M = {:.3} (SD = {:.4})", d.mean, d.sd);
    };
    row(&mut s, "Non-dichoptic alpha", &stats.non_dichoptic);
    row(&mut s, "Dichoptic midpoint", &stats.midpoint);
    row(&mut s, "Dichoptic range", &stats.range);
    let q = &stats.range_quartiles;
    let _ = writeln!(
        s,
        "Range quartiles        Q1 = {:.4}, Q2 = {:.4}, Q3 = {:.4}",
        q.q1, q.q2, q.q3
    );
    let _ = writeln!(
        s,
        "Preference             {} of {} preferred dichoptic ({:.0}%)",
        stats.dichoptic_preferred,
        stats.n,
        stats.preference_proportion * 100.0
    );
    s
}

/// Plot-ready table: one row per retained participant, ordered by range.
pub fn chart_table_csv(stats: &SelectionStats) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "participant_id",
        "non_dichoptic",
        "left",
        "right",
        "midpoint",
        "range",
        "preference",
    ])
    .expect("in-memory write");
    for r in &stats.chart {
        w.write_record([
            r.participant_id.clone(),
            r.non_dichoptic.to_string(),
            r.left.to_string(),
            r.right.to_string(),
            r.midpoint.to_string(),
            r.range.to_string(),
            r.preference.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Reference summary values a dataset is expected to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportedStats {
    pub non_dichoptic_mean: f64,
    pub non_dichoptic_sd: f64,
    pub midpoint_mean: f64,
    pub midpoint_sd: f64,
    pub range_mean: f64,
    pub range_sd: f64,
    pub excluded_z: f64,
    pub range_q1: f64,
    pub tolerance: f64,
    pub z_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub sd: SdConvention,
    pub quantile: QuantileMethod,
    pub sd_matches: bool,
    pub q1_matches: bool,
    pub z_matches: bool,
}

/// Try every SD convention and quantile method and report which reproduce `target`.
pub fn calibrate(
    rows: &[ParticipantRow],
    target: &ReportedStats,
) -> Result<Vec<CalibrationOutcome>, AnalysisError> {
    let mut out = Vec::new();
    for sd in SdConvention::ALL {
        for quantile in QuantileMethod::ALL {
            let options = AnalysisOptions {
                sd,
                quantile,
                ..AnalysisOptions::default()
            };
            let stats = analyze(rows, &options)?;
            let near = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;
            let tol = target.tolerance;
            let sd_matches = near(stats.non_dichoptic.sd, target.non_dichoptic_sd, tol)
                && near(stats.midpoint.sd, target.midpoint_sd, tol)
                && near(stats.range.sd, target.range_sd, tol);
            let z_matches = stats.excluded.len() == 1
                && near(
                    stats.excluded[0].z_score,
                    target.excluded_z,
                    target.z_tolerance,
                );
            out.push(CalibrationOutcome {
                sd,
                quantile,
                sd_matches,
                q1_matches: near(stats.range_quartiles.q1, target.range_q1, tol),
                z_matches,
            });
        }
    }
    Ok(out)
}

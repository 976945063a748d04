//! Run-to-failure datasets: ingestion, normalization, operating-condition
//! discretization, synthetic generation and unit-level splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::doc;
use crate::error::{Error, Result};
use crate::stats::{self, SeededRng};

/// One equipment instance from its first cycle to its failure cycle `T_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTrajectory {
    pub unit_id: u32,
    /// `[T_j][d_y]`
    pub sensors: Vec<Vec<f64>>,
    /// `[T_j][d_u]`
    pub op_settings: Vec<Vec<f64>>,
    /// Discrete operating condition per cycle, filled by discretization.
    pub input_symbols: Option<Vec<usize>>,
}

impl UnitTrajectory {
    /// Failure cycle `T_j` (cycles are numbered `1..=T_j`).
    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    /// Input symbols, or an error naming the unit when discretization has not run.
    pub fn symbols(&self) -> Result<&[usize]> {
        self.input_symbols.as_deref().ok_or_else(|| {
            Error::MissingPrerequisite(format!(
                "unit {} has no input symbols; discretize operating conditions first",
                self.unit_id
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunToFailureDataset {
    pub units: Vec<UnitTrajectory>,
    pub sensor_names: Vec<String>,
    pub op_setting_names: Vec<String>,
}

impl RunToFailureDataset {
    pub fn n_sensors(&self) -> usize {
        self.sensor_names.len()
    }

    pub fn n_op_settings(&self) -> usize {
        self.op_setting_names.len()
    }

    pub fn total_cycles(&self) -> usize {
        self.units.iter().map(|u| u.len()).sum()
    }

    pub fn failure_cycles(&self) -> Vec<usize> {
        self.units.iter().map(|u| u.len()).collect()
    }

    /// Checks the dataset invariants: `T_j >= 2`, consistent row widths and
    /// in-range input symbols when `n_inputs` is given.
    pub fn validate(&self, n_inputs: Option<usize>) -> Result<()> {
        let dy = self.n_sensors();
        let du = self.n_op_settings();
        for u in &self.units {
            if u.len() < 2 {
                return Err(Error::InvariantViolation(format!(
                    "unit {} has T_j = {} (< 2)",
                    u.unit_id,
                    u.len()
                )));
            }
            if u.op_settings.len() != u.len() {
                return Err(Error::InvariantViolation(format!(
                    "unit {}: {} sensor rows but {} operating-setting rows",
                    u.unit_id,
                    u.len(),
                    u.op_settings.len()
                )));
            }
            for (row, (s, o)) in u.sensors.iter().zip(&u.op_settings).enumerate() {
                if s.len() != dy || o.len() != du {
                    return Err(Error::InvariantViolation(format!(
                        "unit {} cycle {}: expected {dy} sensors / {du} settings, got {} / {}",
                        u.unit_id,
                        row + 1,
                        s.len(),
                        o.len()
                    )));
                }
            }
            if let Some(sym) = &u.input_symbols {
                if sym.len() != u.len() {
                    return Err(Error::InvariantViolation(format!(
                        "unit {}: {} input symbols for {} cycles",
                        u.unit_id,
                        sym.len(),
                        u.len()
                    )));
                }
                if let Some(k) = n_inputs {
                    if let Some(bad) = sym.iter().find(|&&s| s >= k) {
                        return Err(Error::InvariantViolation(format!(
                            "unit {}: input symbol {bad} outside [0, {k})",
                            u.unit_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Keeps only the named sensors, in the given order.
    pub fn select_sensors(&self, names: &[String]) -> Result<Self> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.sensor_names
                    .iter()
                    .position(|s| s == n)
                    .ok_or_else(|| Error::invalid(format!("unknown sensor `{n}`")))
            })
            .collect::<Result<_>>()?;
        let mut out = self.clone();
        out.sensor_names = names.to_vec();
        for u in &mut out.units {
            for row in &mut u.sensors {
                *row = idx.iter().map(|&i| row[i]).collect();
            }
        }
        Ok(out)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        RunToFailureDataset {
            units: indices.iter().map(|&i| self.units[i].clone()).collect(),
            sensor_names: self.sensor_names.clone(),
            op_setting_names: self.op_setting_names.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// Whitespace separated: unit, cycle, 3 operating settings, 21 sensors.
    CmapssTxt,
    /// Header row with `unit`, `cycle`, `op_*` and `s_*` columns.
    Csv,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cmapss_txt" | "cmapss" | "txt" => Ok(DatasetFormat::CmapssTxt),
            "csv" => Ok(DatasetFormat::Csv),
            other => Err(Error::invalid(format!("unknown dataset format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvLayout {
    pub op_prefix: String,
    pub sensor_prefix: String,
}

impl Default for CsvLayout {
    fn default() -> Self {
        CsvLayout {
            op_prefix: "op_".into(),
            sensor_prefix: "s_".into(),
        }
    }
}

const CMAPSS_COLUMNS: usize = 26;

pub fn load_run_to_failure(path: &Path, format: DatasetFormat) -> Result<RunToFailureDataset> {
    load_with_layout(path, format, &CsvLayout::default())
}

pub fn load_with_layout(
    path: &Path,
    format: DatasetFormat,
    layout: &CsvLayout,
) -> Result<RunToFailureDataset> {
    if !path.exists() {
        return Err(Error::DatasetNotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    match format {
        DatasetFormat::CmapssTxt => parse_cmapss(&text),
        DatasetFormat::Csv => parse_csv(&text, layout),
    }
}

struct RawRow {
    line: usize,
    unit: u32,
    cycle: i64,
    ops: Vec<f64>,
    sensors: Vec<f64>,
    symbol: Option<usize>,
}

const SYMBOL_COLUMN: &str = "input_symbol";

fn parse_num(field: &str, unit: u32, line: usize, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Load {
        unit,
        row: line,
        message: format!("non-numeric {what} field `{field}`"),
    })
}

fn parse_unit_cycle(unit: &str, cycle: &str, line: usize) -> Result<(u32, i64)> {
    let u = unit
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.fract() == 0.0 && *v >= 0.0);
    let Some(u) = u else {
        return Err(Error::Load {
            unit: 0,
            row: line,
            message: format!("non-numeric unit id `{unit}`"),
        });
    };
    let u = u as u32;
    let c = cycle
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.fract() == 0.0)
        .ok_or_else(|| Error::Load {
            unit: u,
            row: line,
            message: format!("non-integer cycle `{cycle}`"),
        })?;
    Ok((u, c as i64))
}

fn parse_cmapss(text: &str) -> Result<RunToFailureDataset> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let (unit, cycle) =
            parse_unit_cycle(fields[0], fields.get(1).copied().unwrap_or(""), line_no)?;
        if fields.len() != CMAPSS_COLUMNS {
            return Err(Error::Load {
                unit,
                row: line_no,
                message: format!("expected {CMAPSS_COLUMNS} columns, found {}", fields.len()),
            });
        }
        let ops = fields[2..5]
            .iter()
            .map(|f| parse_num(f, unit, line_no, "operating setting"))
            .collect::<Result<_>>()?;
        let sensors = fields[5..]
            .iter()
            .map(|f| parse_num(f, unit, line_no, "sensor"))
            .collect::<Result<_>>()?;
        rows.push(RawRow {
            line: line_no,
            unit,
            cycle,
            ops,
            sensors,
            symbol: None,
        });
    }
    let op_names = (1..=3).map(|i| format!("op_{i}")).collect();
    let sensor_names = (1..=21).map(|i| format!("s_{i}")).collect();
    assemble(rows, sensor_names, op_names)
}

fn parse_csv(text: &str, layout: &CsvLayout) -> Result<RunToFailureDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let unit_col = find("unit").ok_or_else(|| Error::invalid("CSV header lacks `unit` column"))?;
    let symbol_col = find(SYMBOL_COLUMN);
    let cycle_col =
        find("cycle").ok_or_else(|| Error::invalid("CSV header lacks `cycle` column"))?;
    let op_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with(&layout.op_prefix))
        .map(|(i, _)| i)
        .collect();
    let sensor_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with(&layout.sensor_prefix) && !h.starts_with(&layout.op_prefix))
        .map(|(i, _)| i)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line_no = i + 2;
        let record = record.map_err(|e| Error::Load {
            unit: 0,
            row: line_no,
            message: e.to_string(),
        })?;
        let (unit, cycle) = parse_unit_cycle(
            record.get(unit_col).unwrap_or(""),
            record.get(cycle_col).unwrap_or(""),
            line_no,
        )?;
        if record.len() != headers.len() {
            return Err(Error::Load {
                unit,
                row: line_no,
                message: format!("expected {} columns, found {}", headers.len(), record.len()),
            });
        }
        let ops = op_cols
            .iter()
            .map(|&c| parse_num(&record[c], unit, line_no, "operating setting"))
            .collect::<Result<_>>()?;
        let sensors = sensor_cols
            .iter()
            .map(|&c| parse_num(&record[c], unit, line_no, "sensor"))
            .collect::<Result<_>>()?;
        let symbol = match symbol_col {
            Some(c) => Some(record[c].parse::<usize>().map_err(|_| Error::Load {
                unit,
                row: line_no,
                message: format!(
                    "input symbol `{}` is not a non-negative integer",
                    &record[c]
                ),
            })?),
            None => None,
        };
        rows.push(RawRow {
            line: line_no,
            unit,
            cycle,
            ops,
            sensors,
            symbol,
        });
    }
    let op_names = op_cols.iter().map(|&c| headers[c].to_string()).collect();
    let sensor_names = sensor_cols
        .iter()
        .map(|&c| headers[c].to_string())
        .collect();
    assemble(rows, sensor_names, op_names)
}

fn assemble(
    rows: Vec<RawRow>,
    sensor_names: Vec<String>,
    op_setting_names: Vec<String>,
) -> Result<RunToFailureDataset> {
    let mut by_unit: BTreeMap<u32, Vec<RawRow>> = BTreeMap::new();
    for r in rows {
        by_unit.entry(r.unit).or_default().push(r);
    }
    let mut units = Vec::with_capacity(by_unit.len());
    for (unit_id, mut rows) in by_unit {
        rows.sort_by_key(|r| r.cycle);
        for (expected, r) in (1i64..).zip(&rows) {
            if r.cycle != expected {
                let message = if r.cycle < expected {
                    format!("duplicate cycle {}", r.cycle)
                } else {
                    format!("cycle gap: expected cycle {expected}, found {}", r.cycle)
                };
                return Err(Error::Load {
                    unit: unit_id,
                    row: r.line,
                    message,
                });
            }
        }
        if rows.len() < 2 {
            return Err(Error::Load {
                unit: unit_id,
                row: rows[0].line,
                message: "a unit needs at least 2 cycles".into(),
            });
        }
        let input_symbols = rows.iter().map(|r| r.symbol).collect::<Option<Vec<_>>>();
        let (sensors, op_settings) = rows.into_iter().map(|r| (r.sensors, r.ops)).unzip();
        units.push(UnitTrajectory {
            unit_id,
            sensors,
            op_settings,
            input_symbols,
        });
    }
    let ds = RunToFailureDataset {
        units,
        sensor_names,
        op_setting_names,
    };
    ds.validate(None)?;
    Ok(ds)
}

fn prefixed(name: &str, prefix: &str) -> String {
    if name.starts_with(prefix) {
        name.to_string()
    } else {
        format!("{prefix}{name}")
    }
}

/// Writes the dataset in the CSV layout (`unit,cycle,op_*,s_*`), plus an
/// `input_symbol` column when symbols are present.
pub fn write_csv(data: &RunToFailureDataset, path: &Path) -> Result<()> {
    let layout = CsvLayout::default();
    let mut w = csv::Writer::from_path(path)?;
    let with_sym = data.units.iter().all(|u| u.input_symbols.is_some()) && !data.units.is_empty();
    let mut header = vec!["unit".to_string(), "cycle".to_string()];
    header.extend(
        data.op_setting_names
            .iter()
            .map(|n| prefixed(n, &layout.op_prefix)),
    );
    header.extend(
        data.sensor_names
            .iter()
            .map(|n| prefixed(n, &layout.sensor_prefix)),
    );
    if with_sym {
        header.push(SYMBOL_COLUMN.into());
    }
    w.write_record(&header)?;
    for u in &data.units {
        for t in 0..u.len() {
            let mut rec = vec![u.unit_id.to_string(), (t + 1).to_string()];
            rec.extend(u.op_settings[t].iter().map(|v| v.to_string()));
            rec.extend(u.sensors[t].iter().map(|v| v.to_string()));
            if with_sym {
                rec.push(u.input_symbols.as_ref().unwrap()[t].to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    MinMax,
    ZScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Sensors,
    SensorsAndOps,
}

/// Per-feature affine statistics: `(min, max)` for min-max, `(mean, std)` for z-score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mode: NormMode,
    pub feature_set: FeatureSet,
    pub sensors: Vec<FeatureStats>,
    pub ops: Vec<FeatureStats>,
    /// Constant features that were mapped to 0.
    pub warnings: Vec<String>,
}

fn fit_column(values: impl Iterator<Item = f64> + Clone, mode: NormMode) -> FeatureStats {
    match mode {
        NormMode::MinMax => {
            let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
            FeatureStats { a: lo, b: hi }
        }
        NormMode::ZScore => {
            let (n, sum) = values
                .clone()
                .fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
            let mean = sum / n as f64;
            let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            FeatureStats {
                a: mean,
                b: var.sqrt(),
            }
        }
    }
}

fn is_degenerate(stats: &FeatureStats, mode: NormMode) -> bool {
    match mode {
        NormMode::MinMax => stats.b - stats.a <= 0.0,
        NormMode::ZScore => stats.b <= 0.0,
    }
}

pub fn fit_normalizer(
    data: &RunToFailureDataset,
    mode: NormMode,
    feature_set: FeatureSet,
) -> Result<NormalizationSpec> {
    if data.total_cycles() == 0 {
        return Err(Error::invalid(
            "cannot fit a normalizer on an empty dataset",
        ));
    }
    let mut warnings = Vec::new();
    let mut fit_block = |names: &[String], get: &dyn Fn(&UnitTrajectory) -> &Vec<Vec<f64>>| {
        (0..names.len())
            .map(|j| {
                let col = data
                    .units
                    .iter()
                    .flat_map(move |u| get(u).iter().map(move |r| r[j]));
                let st = fit_column(col, mode);
                if is_degenerate(&st, mode) {
                    warnings.push(format!("feature `{}` is constant; mapped to 0", names[j]));
                }
                st
            })
            .collect::<Vec<_>>()
    };
    let sensors = fit_block(&data.sensor_names, &|u| &u.sensors);
    let ops = match feature_set {
        FeatureSet::Sensors => Vec::new(),
        FeatureSet::SensorsAndOps => fit_block(&data.op_setting_names, &|u| &u.op_settings),
    };
    Ok(NormalizationSpec {
        mode,
        feature_set,
        sensors,
        ops,
        warnings,
    })
}

impl NormalizationSpec {
    fn transform(&self, stats: &[FeatureStats], row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(stats)
            .map(|(&v, st)| {
                if is_degenerate(st, self.mode) {
                    0.0
                } else {
                    match self.mode {
                        NormMode::MinMax => (v - st.a) / (st.b - st.a),
                        NormMode::ZScore => (v - st.a) / st.b,
                    }
                }
            })
            .collect()
    }

    pub fn transform_sensors(&self, row: &[f64]) -> Vec<f64> {
        self.transform(&self.sensors, row)
    }

    /// Operating settings are passed through unchanged when the spec only covers sensors.
    pub fn transform_ops(&self, row: &[f64]) -> Vec<f64> {
        match self.feature_set {
            FeatureSet::Sensors => row.to_vec(),
            FeatureSet::SensorsAndOps => self.transform(&self.ops, row),
        }
    }

    pub fn apply(&self, data: &RunToFailureDataset) -> Result<RunToFailureDataset> {
        if data.n_sensors() != self.sensors.len() {
            return Err(Error::dims(format!(
                "normalizer fit on {} sensors, dataset has {}",
                self.sensors.len(),
                data.n_sensors()
            )));
        }
        if self.feature_set == FeatureSet::SensorsAndOps && data.n_op_settings() != self.ops.len() {
            return Err(Error::dims(format!(
                "normalizer fit on {} settings, dataset has {}",
                self.ops.len(),
                data.n_op_settings()
            )));
        }
        let mut out = data.clone();
        for u in &mut out.units {
            for row in &mut u.sensors {
                *row = self.transform_sensors(row);
            }
            for row in &mut u.op_settings {
                *row = self.transform_ops(row);
            }
        }
        Ok(out)
    }
}

pub fn apply_normalizer(
    spec: &NormalizationSpec,
    data: &RunToFailureDataset,
) -> Result<RunToFailureDataset> {
    spec.apply(data)
}

// ---------------------------------------------------------------------------
// Operating-condition discretization
// ---------------------------------------------------------------------------

/// Learned input alphabet: one centroid per operating-condition symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub alphabet: Vec<Vec<f64>>,
    /// Per-column distance scale `max(1, range)` used for assignment.
    pub scale: Vec<f64>,
}

impl Discretization {
    pub fn n_inputs(&self) -> usize {
        self.alphabet.len()
    }

    pub fn assign(&self, row: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.alphabet.iter().enumerate() {
            let d: f64 = row
                .iter()
                .zip(c)
                .zip(&self.scale)
                .map(|((x, y), s)| ((x - y) / s).powi(2))
                .sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Labels every cycle of `data` with its nearest symbol.
    pub fn apply(&self, data: &RunToFailureDataset) -> Result<RunToFailureDataset> {
        if let Some(c) = self.alphabet.first() {
            if c.len() != data.n_op_settings() {
                return Err(Error::dims(format!(
                    "alphabet has {} settings, dataset has {}",
                    c.len(),
                    data.n_op_settings()
                )));
            }
        }
        let mut out = data.clone();
        for u in &mut out.units {
            u.input_symbols = Some(u.op_settings.iter().map(|r| self.assign(r)).collect());
        }
        Ok(out)
    }
}

fn column_scales(rows: &[&Vec<f64>], d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let (lo, hi) = rows
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[j]), hi.max(r[j]))
                });
            (hi - lo).max(1.0)
        })
        .collect()
}

/// Assigns each cycle an input symbol.
///
/// With `k = None`, each setting column is clustered by splitting its sorted
/// values wherever consecutive values differ by more than `tol * max(1, range)`;
/// a symbol is a distinct combination of per-column clusters, so regimes that
/// are discrete up to sensor jitter collapse to one symbol each. With
/// `k = Some(k)`, seeded k-means on range-scaled settings is used instead.
pub fn discretize_operating_conditions(
    data: &RunToFailureDataset,
    k: Option<usize>,
    tol: f64,
    seed: u64,
) -> Result<(RunToFailureDataset, Discretization)> {
    let d = data.n_op_settings();
    let rows: Vec<&Vec<f64>> = data
        .units
        .iter()
        .flat_map(|u| u.op_settings.iter())
        .collect();
    if rows.is_empty() {
        return Err(Error::invalid("no operating-setting rows to discretize"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    let scale = column_scales(&rows, d);
    let alphabet = match k {
        None => {
            // Per-column 1-D single-linkage clustering.
            let mut col_breaks: Vec<Vec<f64>> = Vec::with_capacity(d);
            for j in 0..d {
                let mut vals: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                vals.sort_by(f64::total_cmp);
                vals.dedup();
                let thr = tol * scale[j];
                let breaks = vals
                    .windows(2)
                    .filter(|w| w[1] - w[0] > thr)
                    .map(|w| (w[0] + w[1]) / 2.0)
                    .collect();
                col_breaks.push(breaks);
            }
            let key = |r: &Vec<f64>| -> Vec<usize> {
                (0..d)
                    .map(|j| col_breaks[j].iter().filter(|&&b| r[j] > b).count())
                    .collect()
            };
            let mut groups: BTreeMap<Vec<usize>, (usize, Vec<f64>)> = BTreeMap::new();
            for r in &rows {
                let e = groups.entry(key(r)).or_insert_with(|| (0, vec![0.0; d]));
                e.0 += 1;
                for (s, v) in e.1.iter_mut().zip(r.iter()) {
                    *s += v;
                }
            }
            groups
                .into_values()
                .map(|(n, s)| s.into_iter().map(|v| v / n as f64).collect())
                .collect::<Vec<Vec<f64>>>()
        }
        Some(k) => {
            let distinct: BTreeSet<Vec<i64>> = rows
                .iter()
                .map(|r| r.iter().map(|v| (v / tol).round() as i64).collect())
                .collect();
            if k == 0 || k > distinct.len() {
                return Err(Error::invalid(format!(
                    "k = {k} but only {} distinct operating-setting rows",
                    distinct.len()
                )));
            }
            let scaled: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.iter().zip(&scale).map(|(v, s)| v / s).collect())
                .collect();
            let mut rng = stats::seeded(seed);
            let km = stats::kmeans(&scaled, k, 300, &mut rng)?;
            let mut centroids: Vec<Vec<f64>> = km
                .centroids
                .into_iter()
                .map(|c| c.iter().zip(&scale).map(|(v, s)| v * s).collect())
                .collect();
            centroids.sort_by(|a, b| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            centroids
        }
    };
    let disc = Discretization { alphabet, scale };
    let out = disc.apply(data)?;
    Ok((out, disc))
}

// ---------------------------------------------------------------------------
// Synthetic run-to-failure data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Generative IOHMM used to produce oracle datasets with known hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_states: usize,
    pub n_inputs: usize,
    pub initial: Vec<f64>,
    /// `[input][from][to]`
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `[state][input]`
    pub emissions: Vec<Vec<GaussianSpec>>,
    /// Distribution the per-cycle operating condition is drawn from.
    pub input_probs: Vec<f64>,
    /// Operating-setting row emitted for each input symbol.
    pub op_levels: Vec<Vec<f64>>,
    pub failure_state: usize,
    pub n_units: usize,
    pub max_horizon: usize,
}

/// Parameters of a left-to-right degradation chain whose last state is the
/// absorbing failure state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationChain {
    pub n_states: usize,
    /// Probability of advancing from state `i` to `i + 1`, one per non-failure state.
    pub forward: Vec<f64>,
    pub n_inputs: usize,
    /// Multiplier applied to the forward probabilities under each input.
    pub input_speed: Vec<f64>,
    pub n_sensors: usize,
    /// Distance between consecutive state means along each sensor.
    pub separation: f64,
    pub noise_std: f64,
    /// Sensor offset added per input symbol (operating-regime shift).
    pub regime_offset: f64,
    pub n_units: usize,
    pub max_horizon: usize,
}

impl DegradationChain {
    pub fn uniform(n_states: usize, forward: f64, n_units: usize) -> Self {
        DegradationChain {
            n_states,
            forward: vec![forward; n_states - 1],
            n_inputs: 1,
            input_speed: vec![1.0],
            n_sensors: 4,
            separation: 1.0,
            noise_std: 0.2,
            regime_offset: 0.0,
            n_units,
            max_horizon: 100_000,
        }
    }

    pub fn build(&self) -> Result<SyntheticConfig> {
        let n = self.n_states;
        if n < 2 || self.forward.len() != n - 1 {
            return Err(Error::invalid(
                "degradation chain needs n_states >= 2 and n_states - 1 forward probabilities",
            ));
        }
        if self.input_speed.len() != self.n_inputs {
            return Err(Error::invalid("input_speed needs one entry per input"));
        }
        let transitions = (0..self.n_inputs)
            .map(|u| {
                (0..n)
                    .map(|i| {
                        let mut row = vec![0.0; n];
                        if i + 1 == n {
                            row[i] = 1.0;
                        } else {
                            let p = (self.forward[i] * self.input_speed[u]).clamp(0.0, 1.0);
                            row[i] = 1.0 - p;
                            row[i + 1] = p;
                        }
                        row
                    })
                    .collect()
            })
            .collect();
        // Sensor k drifts with direction (-1)^k and a sensor-specific slope so
        // that no two states share a mean vector.
        let emissions = (0..n)
            .map(|s| {
                (0..self.n_inputs)
                    .map(|u| GaussianSpec {
                        mean: (0..self.n_sensors)
                            .map(|k| {
                                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                                let slope = 1.0 + 0.25 * k as f64;
                                sign * slope * self.separation * s as f64
                                    + self.regime_offset * u as f64
                            })
                            .collect(),
                        std: vec![self.noise_std; self.n_sensors],
                    })
                    .collect()
            })
            .collect();
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        Ok(SyntheticConfig {
            n_states: n,
            n_inputs: self.n_inputs,
            initial,
            transitions,
            emissions,
            input_probs: vec![1.0 / self.n_inputs as f64; self.n_inputs],
            op_levels: (0..self.n_inputs).map(|u| vec![10.0 * u as f64]).collect(),
            failure_state: n - 1,
            n_units: self.n_units,
            max_horizon: self.max_horizon,
        })
    }
}

/// Per-unit hidden state labels produced alongside a synthetic dataset.
pub type GroundTruth = Vec<Vec<usize>>;

fn sample_categorical(p: &[f64], rng: &mut SeededRng) -> usize {
    let mut r = rng.gen::<f64>();
    for (i, &w) in p.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    // Rounding slack: last index with positive mass.
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

pub const SYNTHETIC_KIND: &str = "synthetic-config";
pub const SYNTHETIC_VERSION: u32 = 1;

impl SyntheticConfig {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        doc::write(path, SYNTHETIC_KIND, SYNTHETIC_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::DatasetNotFound(path.to_path_buf()));
        }
        let c: SyntheticConfig = doc::read(path, SYNTHETIC_KIND, SYNTHETIC_VERSION)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states;
        let k = self.n_inputs;
        let stoch =
            |v: &[f64]| v.iter().all(|&p| p >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if n < 2 || k < 1 {
            return Err(Error::invalid(
                "synthetic config needs n_states >= 2 and n_inputs >= 1",
            ));
        }
        if self.initial.len() != n || !stoch(&self.initial) {
            return Err(Error::invalid(
                "initial distribution must be a probability vector of length n_states",
            ));
        }
        if self.input_probs.len() != k || !stoch(&self.input_probs) {
            return Err(Error::invalid(
                "input_probs must be a probability vector of length n_inputs",
            ));
        }
        if self.op_levels.len() != k {
            return Err(Error::invalid("op_levels needs one row per input"));
        }
        if self.transitions.len() != k
            || self
                .transitions
                .iter()
                .any(|a| a.len() != n || a.iter().any(|r| r.len() != n || !stoch(r)))
        {
            return Err(Error::invalid(
                "transitions must be n_inputs row-stochastic n_states x n_states matrices",
            ));
        }
        if self.emissions.len() != n || self.emissions.iter().any(|e| e.len() != k) {
            return Err(Error::invalid("emissions must be indexed [state][input]"));
        }
        let d = self.emissions[0][0].mean.len();
        for e in self.emissions.iter().flatten() {
            if e.mean.len() != d || e.std.len() != d || e.std.iter().any(|&s| !(s >= 0.0)) {
                return Err(Error::invalid(
                    "emission means/stds must share one dimension and stds be >= 0",
                ));
            }
        }
        let f = self.failure_state;
        if f >= n {
            return Err(Error::invalid("failure_state out of range"));
        }
        for (u, a) in self.transitions.iter().enumerate() {
            let outgoing: f64 = a[f]
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != f)
                .map(|(_, p)| p)
                .sum();
            if outgoing > 0.0 {
                return Err(Error::invalid(format!(
                    "failure state {f} is not absorbing under input {u} (outgoing mass {outgoing})"
                )));
            }
        }
        if self.initial[f] > 0.0 {
            return Err(Error::invalid(
                "failure state must have zero initial probability",
            ));
        }
        Ok(())
    }
}

/// Simulates `config.n_units` units, each until it enters the failure state.
/// The failure cycle `T_j` is the first cycle spent in the failure state.
pub fn generate_synthetic(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(RunToFailureDataset, GroundTruth)> {
    config.validate()?;
    let mut rng = stats::seeded(seed);
    let d = config.emissions[0][0].mean.len();
    let mut units = Vec::with_capacity(config.n_units);
    let mut truth = Vec::with_capacity(config.n_units);
    let emit = |s: usize, u: usize, rng: &mut SeededRng| -> Vec<f64> {
        let g = &config.emissions[s][u];
        (0..d)
            .map(|k| {
                let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
                g.mean[k] + g.std[k] * z
            })
            .collect()
    };
    for j in 0..config.n_units {
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        let mut sensors = Vec::new();
        let mut u = sample_categorical(&config.input_probs, &mut rng);
        let mut s = sample_categorical(&config.initial, &mut rng);
        loop {
            states.push(s);
            inputs.push(u);
            sensors.push(emit(s, u, &mut rng));
            if s == config.failure_state {
                break;
            }
            if states.len() >= config.max_horizon {
                return Err(Error::invalid(format!(
                    "unit {} did not fail within max_horizon = {}",
                    j + 1,
                    config.max_horizon
                )));
            }
            u = sample_categorical(&config.input_probs, &mut rng);
            s = sample_categorical(&config.transitions[u][s], &mut rng);
        }
        units.push(UnitTrajectory {
            unit_id: j as u32 + 1,
            op_settings: inputs
                .iter()
                .map(|&u| config.op_levels[u].clone())
                .collect(),
            sensors,
            input_symbols: Some(inputs),
        });
        truth.push(states);
    }
    let nd = config.op_levels[0].len();
    let ds = RunToFailureDataset {
        units,
        sensor_names: (1..=d).map(|i| format!("s_{i}")).collect(),
        op_setting_names: (1..=nd).map(|i| format!("op_{i}")).collect(),
    };
    Ok((ds, truth))
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Seeded unit-level split; `round(ratio * n)` units go to training, clamped
/// so that both sides are nonempty.
pub fn split(
    data: &RunToFailureDataset,
    ratio: f64,
    seed: u64,
) -> Result<(RunToFailureDataset, RunToFailureDataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} not in (0, 1)")));
    }
    let n = data.units.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 units to split"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stats::seeded(seed));
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let (tr, te) = idx.split_at(n_train);
    let mut tr = tr.to_vec();
    let mut te = te.to_vec();
    tr.sort_unstable();
    te.sort_unstable();
    Ok((data.subset(&tr), data.subset(&te)))
}

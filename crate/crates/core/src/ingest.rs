//! Loading GPVS-style waveform CSV files.
//!
//! Each file holds one operating state: a time column followed by the thirteen
//! recorded signals. Columns are located by header name, so their order in the
//! file does not matter. The time column is always dropped.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, N_CLASSES, N_SIGNALS, SIGNAL_NAMES};

/// Sample period of the laboratory recordings (100 µs).
pub const DEFAULT_SAMPLE_PERIOD_S: f64 = 1e-4;

/// Maps canonical signal names to CSV header strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub time: String,
    /// Header for each signal, in [`SIGNAL_NAMES`] order.
    pub signals: Vec<String>,
}

impl Default for ColumnMap {
    /// Headers used by the published GPVS-Faults release.
    fn default() -> Self {
        let headers = [
            "Vpv", "Ipv", "Vdc", "ia", "ib", "ic", "va", "vb", "vc", "Iabc", "Vabc", "If", "Vf",
        ];
        ColumnMap {
            time: "Time".to_string(),
            signals: headers.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ColumnMap {
    fn validate(&self) -> Result<()> {
        if self.signals.len() != N_SIGNALS {
            return Err(Error::InvalidConfig(format!(
                "column map lists {} signals, expected {N_SIGNALS}",
                self.signals.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub columns: ColumnMap,
    pub sample_period_s: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            columns: ColumnMap::default(),
            sample_period_s: DEFAULT_SAMPLE_PERIOD_S,
        }
    }
}

/// Time-aligned multi-channel record of one operating state.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecordTable {
    signals: Vec<Vec<f64>>,
    sample_period_s: f64,
    label: usize,
    source_name: String,
}

impl RawRecordTable {
    pub fn new(
        signals: Vec<Vec<f64>>,
        sample_period_s: f64,
        label: usize,
        source_name: impl Into<String>,
    ) -> Result<Self> {
        if signals.len() != N_SIGNALS {
            return Err(Error::Schema(format!(
                "expected {N_SIGNALS} signals, got {}",
                signals.len()
            )));
        }
        let len = signals[0].len();
        if let Some(bad) = signals.iter().find(|s| s.len() != len) {
            return Err(Error::LengthMismatch(len, bad.len()));
        }
        if sample_period_s.is_nan() || sample_period_s <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "sample period must be positive, got {sample_period_s}"
            )));
        }
        if label >= N_CLASSES {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: N_CLASSES,
            });
        }
        Ok(RawRecordTable {
            signals,
            sample_period_s,
            label,
            source_name: source_name.into(),
        })
    }

    /// Samples per signal.
    pub fn len(&self) -> usize {
        self.signals[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All signals in canonical order.
    pub fn signals(&self) -> &[Vec<f64>] {
        &self.signals
    }

    pub fn signal(&self, name: &str) -> Option<&[f64]> {
        SIGNAL_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.signals[i].as_slice())
    }

    pub fn sample_period_s(&self) -> f64 {
        self.sample_period_s
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    /// Returns a copy with every signal replaced by `f(signal)`.
    pub fn map_signals<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        use rayon::prelude::*;
        let signals = self
            .signals
            .par_iter()
            .map(|s| f(s))
            .collect::<Result<Vec<_>>>()?;
        RawRecordTable::new(
            signals,
            self.sample_period_s,
            self.label,
            self.source_name.clone(),
        )
    }
}

pub fn load_gpvs_csv(path: &Path, label: usize, options: &LoadOptions) -> Result<RawRecordTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_gpvs_csv(std::io::BufReader::new(file), label, name, options)
}

pub fn read_gpvs_csv<R: Read>(
    reader: R,
    label: usize,
    source_name: impl Into<String>,
    options: &LoadOptions,
) -> Result<RawRecordTable> {
    options.columns.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile);
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    if find(&options.columns.time).is_none() {
        return Err(Error::MissingColumn(options.columns.time.clone()));
    }
    let mut positions = Vec::with_capacity(N_SIGNALS);
    for header in &options.columns.signals {
        positions.push(find(header).ok_or_else(|| Error::MissingColumn(header.clone()))?);
    }

    let mut signals: Vec<Vec<f64>> = vec![Vec::new(); N_SIGNALS];
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        for (signal, (&col, header)) in positions.iter().zip(&options.columns.signals).enumerate() {
            let cell = record.get(col).unwrap_or("");
            let value = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumericCell {
                    row,
                    column: header.clone(),
                    value: cell.to_string(),
                })?;
            signals[signal].push(value);
        }
    }
    if signals[0].is_empty() {
        return Err(Error::EmptyFile);
    }
    RawRecordTable::new(signals, options.sample_period_s, label, source_name)
}

/// Writes `table` in the same layout [`read_gpvs_csv`] reads, with a
/// synthetic time column `i * sample_period`.
pub fn write_gpvs_csv<W: Write>(table: &RawRecordTable, writer: W, columns: &ColumnMap) -> Result<()> {
    columns.validate()?;
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![columns.time.as_str()];
    header.extend(columns.signals.iter().map(String::as_str));
    wtr.write_record(&header)?;
    let mut line = Vec::with_capacity(N_SIGNALS + 1);
    for i in 0..table.len() {
        line.clear();
        line.push(format!("{:?}", i as f64 * table.sample_period_s));
        for s in &table.signals {
            line.push(format!("{:?}", s[i]));
        }
        wtr.write_record(&line)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_gpvs_csv(table: &RawRecordTable, path: &Path, columns: &ColumnMap) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_gpvs_csv(table, std::io::BufWriter::new(file), columns)
}

/// Guesses a state label from a file name such as `F3M.csv` or `f5_run2.csv`.
pub fn label_from_file_name(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let mut chars = stem.chars();
    match (chars.next(), chars.next()) {
        (Some('F' | 'f'), Some(d)) => d.to_digit(10).map(|d| d as usize).filter(|&d| d < N_CLASSES),
        _ => None,
    }
}

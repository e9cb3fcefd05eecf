//! Per-cycle statistical signatures.
//!
//! A record is cut into contiguous, non-overlapping windows of `batch_len`
//! samples (one power cycle at 10 kHz / 50 Hz is 200 samples). Each window of
//! the 13 signals becomes 52 features: mean, population standard deviation,
//! maximum and minimum of every signal, in signal-major order.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::ingest::RawRecordTable;
use crate::{Error, Result, N_CLASSES, N_SIGNALS, SIGNAL_NAMES};

pub const DEFAULT_BATCH_LEN: usize = 200;
pub const STAT_NAMES: [&str; 4] = ["mean", "std", "max", "min"];
pub const N_FEATURES: usize = N_SIGNALS * STAT_NAMES.len();

/// `<signal>_<stat>` names in canonical order.
pub fn feature_names() -> Vec<String> {
    SIGNAL_NAMES
        .iter()
        .flat_map(|sig| STAT_NAMES.iter().map(move |st| format!("{sig}_{st}")))
        .collect()
}

/// One window: a slice of `batch_len` samples per signal.
pub type Window<'a> = Vec<&'a [f64]>;

/// Splits `table` into `floor(len / batch_len)` windows; the remainder is dropped.
pub fn window(table: &RawRecordTable, batch_len: usize) -> Vec<Window<'_>> {
    assert!(batch_len >= 2, "batch length must be at least 2");
    let count = table.len() / batch_len;
    (0..count)
        .map(|w| {
            let range = w * batch_len..(w + 1) * batch_len;
            table.signals().iter().map(|s| &s[range.clone()]).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesStats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
}

/// Mean, population standard deviation (divisor N), max and min.
pub fn series_stats(x: &[f64]) -> SeriesStats {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let (min, max) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    // Rounding in the sum can push the mean a hair outside [min, max].
    SeriesStats {
        mean: mean.clamp(min, max),
        std: var.sqrt(),
        max,
        min,
    }
}

/// Signature features of one window.
pub fn batch_stats(window: &[&[f64]]) -> Vec<f64> {
    window
        .iter()
        .flat_map(|s| {
            let st = series_stats(s);
            [st.mean, st.std, st.max, st.min]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureVector {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureTable {
    feature_names: Vec<String>,
    rows: Vec<SignatureVector>,
}

impl SignatureTable {
    pub fn new(feature_names: Vec<String>, rows: Vec<SignatureVector>) -> Result<Self> {
        for row in &rows {
            if row.features.len() != feature_names.len() {
                return Err(Error::FeatureCountMismatch {
                    expected: feature_names.len(),
                    got: row.features.len(),
                });
            }
            if row.label >= N_CLASSES {
                return Err(Error::LabelOutOfRange {
                    label: row.label,
                    n_classes: N_CLASSES,
                });
            }
        }
        Ok(SignatureTable {
            feature_names,
            rows,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[SignatureVector] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for r in &self.rows {
            counts[r.label] += 1;
        }
        counts
    }

    /// Whether the columns are exactly the 52 canonical signature features.
    pub fn has_canonical_features(&self) -> bool {
        self.feature_names == feature_names()
    }

    /// SHA-256 over feature names, values (as bits) and labels.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.feature_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for row in &self.rows {
            for v in &row.features {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update((row.label as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("label");
        wtr.write_record(&header)?;
        let mut line = Vec::with_capacity(header.len());
        for row in &self.rows {
            line.clear();
            line.extend(row.features.iter().map(|v| format!("{v:?}")));
            line.push(row.label.to_string());
            wtr.write_record(&line)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let label_col = headers
            .iter()
            .position(|h| h == "label")
            .ok_or_else(|| Error::MissingColumn("label".into()))?;
        let names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_col)
            .map(|(_, h)| h.to_string())
            .collect();
        let mut rows = Vec::new();
        let mut record = csv::StringRecord::new();
        while rdr.read_record(&mut record)? {
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let mut features = Vec::with_capacity(names.len());
            let mut label = 0;
            for (i, cell) in record.iter().enumerate() {
                let bad = || Error::NonNumericCell {
                    row: line,
                    column: headers.get(i).unwrap_or("").to_string(),
                    value: cell.to_string(),
                };
                if i == label_col {
                    label = cell.parse::<usize>().map_err(|_| bad())?;
                } else {
                    let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad)?;
                    features.push(v);
                }
            }
            rows.push(SignatureVector { features, label });
        }
        if rows.is_empty() {
            return Err(Error::EmptyFile);
        }
        SignatureTable::new(names, rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Signatures of every window of every table, concatenated in label order
/// (stable for tables sharing a label).
pub fn build_signature_dataset(tables: &[RawRecordTable], batch_len: usize) -> Result<SignatureTable> {
    if tables.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut order: Vec<usize> = (0..tables.len()).collect();
    order.sort_by_key(|&i| tables[i].label());
    let per_table: Vec<Vec<SignatureVector>> = order
        .par_iter()
        .map(|&i| {
            let table = &tables[i];
            window(table, batch_len)
                .iter()
                .map(|w| SignatureVector {
                    features: batch_stats(w),
                    label: table.label(),
                })
                .collect()
        })
        .collect();
    SignatureTable::new(feature_names(), per_table.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(len: usize, label: usize) -> RawRecordTable {
        let signals = (0..N_SIGNALS)
            .map(|s| (0..len).map(|i| (s * 1000 + i) as f64).collect())
            .collect();
        RawRecordTable::new(signals, 1e-4, label, "t").unwrap()
    }

    #[test]
    fn names_are_signal_major() {
        let names = feature_names();
        assert_eq!(names.len(), 52);
        assert_eq!(&names[..5], ["Vpv_mean", "Vpv_std", "Vpv_max", "Vpv_min", "Ipv_mean"]);
        assert_eq!(names[51], "f_v_min");
    }

    #[test]
    fn window_counts() {
        assert_eq!(window(&table(141014, 0), 200).len(), 705);
        assert_eq!(window(&table(69967, 3), 200).len(), 349);
        assert_eq!(window(&table(199, 0), 200).len(), 0);
        assert_eq!(window(&table(400, 0), 200).len(), 2);
        assert_eq!(window(&table(0, 0), 200).len(), 0);
    }

    #[test]
    fn windows_are_contiguous() {
        let t = table(450, 0);
        let ws = window(&t, 200);
        assert_eq!(ws[0][0][0], 0.0);
        assert_eq!(ws[0][0][199], 199.0);
        assert_eq!(ws[1][0][0], 200.0);
        assert_eq!(ws[1][2][0], 2200.0);
    }

    #[test]
    fn stats_fixtures() {
        let s = series_stats(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!((s.mean, s.std), (5.0, 2.0));
        let s = series_stats(&[5.0; 200]);
        assert_eq!(s, SeriesStats { mean: 5.0, std: 0.0, max: 5.0, min: 5.0 });
        let s = series_stats(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sqrt(1.25) = 1.118033988749895
        assert!((s.std - 1.25f64.sqrt()).abs() <= 1e-12);
        assert!((s.std - 1.1180340).abs() <= 1e-7);
        assert_eq!((s.max, s.min), (4.0, 1.0));
    }

    #[test]
    fn batch_stats_layout() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0; 4];
        let out = batch_stats(&[&a, &b]);
        assert_eq!(out.len(), 8);
        assert_eq!(&out[4..], &[5.0, 0.0, 5.0, 5.0]);
        assert_eq!(out[2], 4.0);
        assert_eq!(out[3], 1.0);
    }

    #[test]
    fn dataset_concatenates_in_label_order() {
        let tables = vec![table(600, 5), table(400, 1), table(250, 5)];
        let ds = build_signature_dataset(&tables, 200).unwrap();
        assert_eq!(ds.len(), 2 + 3 + 1);
        assert_eq!(ds.labels(), vec![1, 1, 5, 5, 5, 5]);
        assert_eq!(ds.class_counts()[5], 4);
        assert!(ds.has_canonical_features());
        assert!(matches!(build_signature_dataset(&[], 200), Err(Error::EmptyInput)));
    }

    #[test]
    fn csv_round_trip() {
        let ds = build_signature_dataset(&[table(600, 2), table(400, 0)], 200).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = SignatureTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.fingerprint(), ds.fingerprint());
    }

    #[test]
    fn csv_without_label_column() {
        let err = SignatureTable::read_csv("a,b\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "label"));
    }

    proptest! {
        #[test]
        fn stats_invariants(
            x in proptest::collection::vec(-1e3f64..1e3, 2..300),
            c in -1e3f64..1e3,
            k in 0.0f64..10.0,
            rot in 0usize..300,
        ) {
            let s = series_stats(&x);
            prop_assert!(s.min <= s.mean && s.mean <= s.max && s.std >= 0.0);

            let mut perm = x.clone();
            perm.rotate_left(rot % x.len());
            perm.reverse();
            let p = series_stats(&perm);
            prop_assert!((p.mean - s.mean).abs() <= 1e-9);
            prop_assert!((p.std - s.std).abs() <= 1e-9);
            prop_assert_eq!((p.max, p.min), (s.max, s.min));

            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let t = series_stats(&shifted);
            prop_assert!((t.mean - (s.mean + c)).abs() <= 1e-12);
            prop_assert!((t.max - (s.max + c)).abs() <= 1e-12);
            prop_assert!((t.min - (s.min + c)).abs() <= 1e-12);
            prop_assert!((t.std - s.std).abs() <= 1e-12);

            let scaled: Vec<f64> = x.iter().map(|v| v * k).collect();
            let u = series_stats(&scaled);
            prop_assert!((u.mean - k * s.mean).abs() <= 1e-9 * (1.0 + k * s.mean.abs()));
            prop_assert!((u.std - k * s.std).abs() <= 1e-9 * (1.0 + k * s.std));
            prop_assert_eq!(u.max, k * s.max);
            prop_assert_eq!(u.min, k * s.min);
        }

        #[test]
        fn row_count_is_sum_of_windows(lens in proptest::collection::vec(0usize..1000, 1..5)) {
            let tables: Vec<_> = lens.iter().enumerate().map(|(i, &l)| table(l, i % 8)).collect();
            let ds = build_signature_dataset(&tables, 200).unwrap();
            prop_assert_eq!(ds.len(), lens.iter().map(|l| l / 200).sum::<usize>());
        }
    }
}

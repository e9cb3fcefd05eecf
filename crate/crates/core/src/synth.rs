//! Synthetic GPVS-like records for the eight operating states.
//!
//! The waveforms are a test scaffold, not a physical PV model. Every state
//! starts from the same balanced three-phase baseline, applies one simple
//! perturbation per cycle, then adds independent Gaussian noise per channel.
//! Cycles are aligned to the signature window, so with zero noise every
//! window of a state (other than the randomized dips of F3) is identical.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{save_gpvs_csv, ColumnMap, RawRecordTable};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::signatures::DEFAULT_BATCH_LEN;
use crate::{Error, Result, N_CLASSES, N_SIGNALS, STATE_NAMES};

const VPV: f64 = 250.0;
const IPV: f64 = 10.0;
const VDC: f64 = 500.0;
const I_AMP: f64 = 5.0;
const V_AMP: f64 = 1.0;

// channel indices in canonical order
const C_VPV: usize = 0;
const C_IPV: usize = 1;
const C_VDC: usize = 2;
const C_IA: usize = 3;
const C_VA: usize = 6;
const C_IABC: usize = 9;
const C_VABC: usize = 10;
const C_FI: usize = 11;
const C_FV: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSeverity {
    /// F2: DC offset added to `vb`.
    pub sensor_offset: f64,
    /// F3: dip depth range, as a fraction of the phase voltages.
    pub dip_depth: (f64, f64),
    /// F3: dip length range in samples.
    pub dip_len: (usize, usize),
    /// F4: factor on `Ipv`.
    pub shading_factor: f64,
    /// F5: factor on `Ipv`.
    pub open_circuit_factor: f64,
    /// F6: `Vdc` oscillation amplitude as a fraction of nominal.
    pub ripple_fraction: f64,
    pub ripple_hz: f64,
    /// F7: initial `Vdc` deficit as a fraction of nominal, decaying each cycle.
    pub settle_fraction: f64,
    pub settle_tau_s: f64,
}

impl Default for FaultSeverity {
    fn default() -> Self {
        FaultSeverity {
            sensor_offset: 0.2,
            dip_depth: (0.3, 0.6),
            dip_len: (20, 60),
            shading_factor: 0.75,
            open_circuit_factor: 0.85,
            ripple_fraction: 0.05,
            ripple_hz: 100.0,
            settle_fraction: 0.1,
            settle_tau_s: 0.003,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_cycles: usize,
    pub sample_rate_hz: f64,
    pub fundamental_hz: f64,
    /// Must equal `sample_rate_hz / fundamental_hz`.
    pub batch_len: usize,
    /// Gaussian noise standard deviation per channel, canonical order.
    pub noise_std: [f64; N_SIGNALS],
    pub seed: u64,
    pub severity: FaultSeverity,
}

/// One percent of each channel's nominal level.
pub const DEFAULT_NOISE_STD: [f64; N_SIGNALS] = [
    0.01 * VPV,
    0.01 * IPV,
    0.01 * VDC,
    0.01 * I_AMP,
    0.01 * I_AMP,
    0.01 * I_AMP,
    0.01 * V_AMP,
    0.01 * V_AMP,
    0.01 * V_AMP,
    0.01 * I_AMP,
    0.01 * V_AMP,
    0.01 * 50.0,
    0.01 * 50.0,
];

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_cycles: 300,
            sample_rate_hz: 10_000.0,
            fundamental_hz: 50.0,
            batch_len: DEFAULT_BATCH_LEN,
            noise_std: DEFAULT_NOISE_STD,
            seed: 42,
            severity: FaultSeverity::default(),
        }
    }
}

impl SynthConfig {
    pub fn noiseless(mut self) -> Self {
        self.noise_std = [0.0; N_SIGNALS];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_cycles == 0 {
            return bad("n_cycles must be at least 1".into());
        }
        if !(self.sample_rate_hz > 0.0 && self.fundamental_hz > 0.0) {
            return bad("sample rate and fundamental must be positive".into());
        }
        let per_cycle = self.sample_rate_hz / self.fundamental_hz;
        if (per_cycle - self.batch_len as f64).abs() > 1e-9 {
            return bad(format!(
                "sample_rate_hz / fundamental_hz = {per_cycle} but batch_len is {}",
                self.batch_len
            ));
        }
        if self.noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise_std entries must be finite and non-negative".into());
        }
        let s = &self.severity;
        let (lo, hi) = s.dip_len;
        if lo == 0 || lo > hi || hi > self.batch_len {
            return bad(format!("dip length range {lo}..={hi} must lie in 1..={}", self.batch_len));
        }
        let (dlo, dhi) = s.dip_depth;
        if !(0.0 < dlo && dlo <= dhi && dhi <= 1.0) {
            return bad(format!("dip depth range {dlo}..={dhi} must lie in (0, 1]"));
        }
        if !(s.settle_tau_s > 0.0 && s.ripple_hz > 0.0) {
            return bad("settle time constant and ripple frequency must be positive".into());
        }
        Ok(())
    }
}

fn magnitude(a: f64, b: f64, c: f64) -> f64 {
    (2.0 / 3.0 * (a * a + b * b + c * c)).sqrt()
}

/// Generates the record for `state` (0 is normal operation, 1..=7 faults).
pub fn generate(config: &SynthConfig, state: usize) -> Result<RawRecordTable> {
    config.validate()?;
    if state >= N_CLASSES {
        return Err(Error::LabelOutOfRange {
            label: state,
            n_classes: N_CLASSES,
        });
    }
    let n = config.n_cycles * config.batch_len;
    let fs = config.sample_rate_hz;
    let s = &config.severity;
    let mut rng = stream_rng(derive_seed(config.seed, state as u64), stream::SYNTH);
    let mut sig = vec![vec![0.0; n]; N_SIGNALS];

    let ipv = match state {
        4 => IPV * s.shading_factor,
        5 => IPV * s.open_circuit_factor,
        _ => IPV,
    };

    for cycle in 0..config.n_cycles {
        let dip = (state == 3).then(|| {
            let len = rng.random_range(s.dip_len.0..=s.dip_len.1);
            let start = rng.random_range(0..=config.batch_len - len);
            let depth = rng.random_range(s.dip_depth.0..=s.dip_depth.1);
            (start, start + len, depth)
        });
        for k in 0..config.batch_len {
            let i = cycle * config.batch_len + k;
            let t = i as f64 / fs;
            let tc = k as f64 / fs;
            let theta = 2.0 * PI * config.fundamental_hz * t;
            let mut v = [0.0; 3];
            let mut cur = [0.0; 3];
            for p in 0..3 {
                let phase = theta - 2.0 * PI * p as f64 / 3.0;
                v[p] = V_AMP * phase.sin();
                cur[p] = I_AMP * phase.sin();
            }
            match state {
                1 => cur[0] = cur[0].min(0.0),
                2 => v[1] += s.sensor_offset,
                3 => {
                    if let Some((a, b, depth)) = dip {
                        if (a..b).contains(&k) {
                            v.iter_mut().for_each(|x| *x *= 1.0 - depth);
                        }
                    }
                }
                _ => {}
            }
            let vdc = match state {
                6 => VDC * (1.0 + s.ripple_fraction * (2.0 * PI * s.ripple_hz * t).sin()),
                7 => VDC * (1.0 - s.settle_fraction * (-tc / s.settle_tau_s).exp()),
                _ => VDC,
            };
            sig[C_VPV][i] = VPV;
            sig[C_IPV][i] = ipv;
            sig[C_VDC][i] = vdc;
            for p in 0..3 {
                sig[C_IA + p][i] = cur[p];
                sig[C_VA + p][i] = v[p];
            }
            sig[C_IABC][i] = magnitude(cur[0], cur[1], cur[2]);
            sig[C_VABC][i] = magnitude(v[0], v[1], v[2]);
            sig[C_FI][i] = config.fundamental_hz;
            sig[C_FV][i] = config.fundamental_hz;
        }
    }

    for (channel, &std) in sig.iter_mut().zip(&config.noise_std) {
        if std > 0.0 {
            let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            channel.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
        }
    }
    RawRecordTable::new(sig, 1.0 / fs, state, STATE_NAMES[state])
}

/// All eight states, in label order.
pub fn generate_all(config: &SynthConfig) -> Result<Vec<RawRecordTable>> {
    (0..N_CLASSES).into_par_iter().map(|s| generate(config, s)).collect()
}

/// Writes `F0M.csv` .. `F7M.csv` into `dir` and returns the paths.
pub fn write_all(config: &SynthConfig, dir: &Path, columns: &ColumnMap) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tables = generate_all(config)?;
    tables
        .par_iter()
        .map(|t| {
            let path = dir.join(format!("{}.csv", t.source_name()));
            save_gpvs_csv(t, &path, columns)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signatures::{batch_stats, window};
    use proptest::prelude::*;

    fn small(n_cycles: usize) -> SynthConfig {
        SynthConfig {
            n_cycles,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn lengths_and_labels() {
        let t = generate(&small(10), 0).unwrap();
        assert_eq!(t.len(), 2000);
        assert_eq!(t.label(), 0);
        assert_eq!(t.source_name(), "F0M");
        assert_eq!(window(&t, 200).len(), 10);
    }

    #[test]
    fn open_circuit_scales_ipv_mean() {
        let cfg = small(4).noiseless();
        let mean = |state| {
            let t = generate(&cfg, state).unwrap();
            let w = window(&t, 200);
            batch_stats(&w[0])[C_IPV * 4]
        };
        assert_eq!(mean(5) / mean(0), 0.85);
        assert_eq!(mean(4) / mean(0), 0.75);
    }

    #[test]
    fn deterministic() {
        let cfg = small(3);
        for s in 0..N_CLASSES {
            assert_eq!(generate(&cfg, s).unwrap(), generate(&cfg, s).unwrap());
        }
        let other = SynthConfig { seed: 7, ..small(3) };
        assert_ne!(generate(&cfg, 3).unwrap(), generate(&other, 3).unwrap());
    }

    #[test]
    fn igbt_fault_removes_positive_ia() {
        let t = generate(&small(2).noiseless(), 1).unwrap();
        assert!(t.signal("ia").unwrap().iter().all(|&v| v <= 0.0));
        let normal = generate(&small(2).noiseless(), 0).unwrap();
        let mag = normal.signal("Vabc_mag").unwrap();
        assert!(mag.iter().all(|&m| (m - 1.0).abs() < 1e-12));
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SynthConfig { n_cycles: 0, ..small(1) },
            SynthConfig { fundamental_hz: 60.0, ..small(1) },
            SynthConfig {
                severity: FaultSeverity { dip_len: (0, 10), ..FaultSeverity::default() },
                ..small(1)
            },
            SynthConfig {
                noise_std: [-1.0; N_SIGNALS],
                ..small(1)
            },
        ];
        for cfg in bad {
            assert!(matches!(generate(&cfg, 0), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
        assert!(matches!(generate(&small(1), 8), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn csv_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(2);
        let cols = ColumnMap::default();
        let paths = write_all(&cfg, dir.path(), &cols).unwrap();
        assert_eq!(paths.len(), 8);
        let opts = crate::ingest::LoadOptions::default();
        for (s, p) in paths.iter().enumerate() {
            assert_eq!(crate::ingest::label_from_file_name(p), Some(s));
            let back = crate::ingest::load_gpvs_csv(p, s, &opts).unwrap();
            assert_eq!(back.signals(), generate(&cfg, s).unwrap().signals());
        }
    }

    proptest! {
        #[test]
        fn windows_match_cycles(n in 1usize..12, state in 0usize..8) {
            let t = generate(&small(n), state).unwrap();
            prop_assert_eq!(window(&t, 200).len(), n);
        }

        #[test]
        fn noiseless_windows_are_constant(n in 2usize..6, state in (0usize..8).prop_filter("dips are random", |s| *s != 3)) {
            let t = generate(&small(n).noiseless(), state).unwrap();
            let w = window(&t, 200);
            let first = batch_stats(&w[0]);
            for win in &w[1..] {
                for (a, b) in batch_stats(win).iter().zip(&first) {
                    prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
                }
            }
        }
    }
}

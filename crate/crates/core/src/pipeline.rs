//! End-to-end stages over file-friendly artifacts: prepare (filter and
//! windowing), train (split, normalize, select, optionally search, fit,
//! summarize), evaluate (forest and kNN metrics on the held-out split) and
//! explain (local attributions with a credibility score).

use serde::{Deserialize, Serialize};

use crate::dataset::{
    fit_normalization, select_top_features, stratified_split, Dataset, FeatureMask, NormalizationParams, SplitIndices,
};
use crate::dsp::{design_butterworth, filter_zero_phase, FilterSpec};
use crate::eval::{evaluate_predictions, format_metrics_table, knn_predict, Metrics};
use crate::forest::{randomized_search, train_forest, CvResult, ForestModel, ForestParams, SearchSpace};
use crate::ingest::RawRecordTable;
use crate::rng::{derive_seed, stream};
use crate::shap::{credibility_check, forest_shap, global_summary, waterfall_for_class, Explanation, GlobalSummary, Waterfall};
use crate::signatures::{build_signature_dataset, window, SignatureTable, N_FEATURES};
use crate::{Error, Result, N_CLASSES, STATE_NAMES};

pub const SCHEMA_VERSION: u32 = 1;

/// Samples kept per record in the raw-versus-filtered preview.
pub const PREVIEW_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub source: String,
    pub label: usize,
    pub samples: usize,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPreview {
    pub source: String,
    pub signal: String,
    pub sample_period_s: f64,
    pub raw: Vec<f64>,
    pub filtered: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub filter: FilterSpec,
    pub batch_len: usize,
    pub records: Vec<RecordSummary>,
    pub class_counts: Vec<usize>,
    pub fingerprint: String,
}

impl PrepareReport {
    /// One line per record, then per-class totals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out += &format!("{:<12} label {} samples {:>8} windows {:>6}\n", r.source, r.label, r.samples, r.windows);
        }
        for (c, n) in self.class_counts.iter().enumerate() {
            out += &format!("{} {n}\n", STATE_NAMES[c]);
        }
        out
    }
}

/// Filters every record with the designed Butterworth cascade and windows the
/// result into signature rows. Also returns a short raw-versus-filtered
/// preview of `preview_signal` for each record.
pub fn prepare(
    tables: &[RawRecordTable],
    filter: &FilterSpec,
    batch_len: usize,
    preview_signal: &str,
) -> Result<(SignatureTable, PrepareReport, Vec<FilterPreview>)> {
    if tables.is_empty() {
        return Err(Error::EmptyInput);
    }
    if batch_len == 0 {
        return Err(Error::InvalidConfig("batch length must be at least 1".into()));
    }
    let coeffs = design_butterworth(filter)?;
    for t in tables {
        let fs = 1.0 / t.sample_period_s();
        if (fs - filter.sample_rate_hz).abs() > 1e-6 * filter.sample_rate_hz {
            return Err(Error::InvalidConfig(format!(
                "{} is sampled at {fs} Hz but the filter is designed for {} Hz",
                t.source_name(),
                filter.sample_rate_hz
            )));
        }
    }
    let filtered = tables
        .iter()
        .map(|t| t.map_signals(|s| filter_zero_phase(&coeffs, s)))
        .collect::<Result<Vec<_>>>()?;
    let signatures = build_signature_dataset(&filtered, batch_len)?;

    let records = filtered
        .iter()
        .map(|t| RecordSummary {
            source: t.source_name().to_string(),
            label: t.label(),
            samples: t.len(),
            windows: window(t, batch_len).len(),
        })
        .collect();
    let previews = tables
        .iter()
        .zip(&filtered)
        .filter_map(|(raw, filt)| {
            let r = raw.signal(preview_signal)?;
            let f = filt.signal(preview_signal)?;
            let n = PREVIEW_SAMPLES.min(r.len());
            Some(FilterPreview {
                source: raw.source_name().to_string(),
                signal: preview_signal.to_string(),
                sample_period_s: raw.sample_period_s(),
                raw: r[..n].to_vec(),
                filtered: f[..n].to_vec(),
            })
        })
        .collect();
    let report = PrepareReport {
        filter: *filter,
        batch_len,
        records,
        class_counts: signatures.class_counts().to_vec(),
        fingerprint: signatures.fingerprint(),
    };
    Ok((signatures, report, previews))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub n_candidates: usize,
    pub folds: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            space: SearchSpace::default(),
            n_candidates: 30,
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub train_fraction: f64,
    pub top_k: usize,
    /// Used as is when `search` is `None`.
    pub forest: ForestParams,
    pub search: Option<SearchConfig>,
    /// Parameters of the forest that ranks features for selection.
    pub selection_forest: ForestParams,
    /// Recorded in the bundle metadata when set; left out otherwise so
    /// repeated runs stay byte-identical.
    pub created_unix: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            train_fraction: 0.7,
            top_k: 30,
            forest: ForestParams::tuned(),
            search: None,
            selection_forest: ForestParams::default(),
            created_unix: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub created_unix: Option<u64>,
    pub dataset_fingerprint: String,
    pub n_rows: usize,
    pub class_counts: Vec<usize>,
    pub train_fraction: f64,
    pub top_k: usize,
    pub searched: bool,
}

/// Everything needed to evaluate or explain from raw signature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub filter: FilterSpec,
    pub batch_len: usize,
    pub normalization: NormalizationParams,
    pub feature_mask: FeatureMask,
    pub forest: ForestModel,
    pub split: SplitIndices,
    pub metadata: TrainingMetadata,
    pub global_ranking: GlobalSummary,
}

impl ModelBundle {
    /// Structural checks after loading from disk.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "bundle schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let d = self.normalization.min.len();
        if self.normalization.max.len() != d || self.feature_mask.importance.len() != d {
            return Err(Error::Schema("bundle feature dimensions disagree".into()));
        }
        if self.feature_mask.selected.iter().any(|&j| j >= d) {
            return Err(Error::Schema("feature mask selects a column out of range".into()));
        }
        if self.forest.n_features() != self.feature_mask.selected.len() {
            return Err(Error::FeatureCountMismatch {
                expected: self.feature_mask.selected.len(),
                got: self.forest.n_features(),
            });
        }
        self.forest.validate()
    }

    /// Normalized, feature-selected view of `table`, checked against the
    /// fingerprint recorded at training time.
    pub fn project(&self, table: &SignatureTable) -> Result<Dataset> {
        let fp = table.fingerprint();
        if fp != self.metadata.dataset_fingerprint {
            return Err(Error::Schema(format!(
                "signature table fingerprint {fp} does not match the bundle's {}",
                self.metadata.dataset_fingerprint
            )));
        }
        Ok(Dataset::from_table(table)
            .normalized(&self.normalization)
            .select_features(&self.feature_mask.selected))
    }
}

/// Per-instance attributions over the training rows, for summary plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSummaryReport {
    pub summary: GlobalSummary,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Row indices into the signature table.
    pub rows: Vec<usize>,
    pub labels: Vec<usize>,
    /// `phi[instance][feature][class]`.
    pub phi: Vec<Vec<Vec<f64>>>,
    /// Normalized feature values, `values[instance][feature]`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportanceReport {
    pub feature_names: Vec<String>,
    pub importance: Vec<f64>,
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArtifacts {
    pub bundle: ModelBundle,
    pub global: GlobalSummaryReport,
    pub cv: Option<CvResult>,
    pub importance: FeatureImportanceReport,
}

fn class_names() -> Vec<String> {
    STATE_NAMES.iter().map(|s| s.to_string()).collect()
}

pub fn train(table: &SignatureTable, filter: &FilterSpec, batch_len: usize, config: &TrainConfig) -> Result<TrainArtifacts> {
    if !table.has_canonical_features() {
        return Err(Error::Schema("signature table does not have the canonical 52 feature columns".into()));
    }
    let data = Dataset::from_table(table);
    let split = stratified_split(&data.y, config.train_fraction, config.seed)?;
    let normalization = fit_normalization(&data, &split.train)?;
    let train_norm = data.normalized(&normalization).subset(&split.train);
    let mask = select_top_features(
        &train_norm,
        config.top_k,
        &config.selection_forest,
        derive_seed(config.seed, stream::SELECT),
    )?;
    let train_sel = train_norm.select_features(&mask.selected);

    let (params, cv) = match &config.search {
        Some(s) => {
            let (p, cv) = randomized_search(
                &train_sel,
                &s.space,
                s.n_candidates,
                s.folds,
                derive_seed(config.seed, stream::SEARCH),
            )?;
            (p, Some(cv))
        }
        None => (config.forest, None),
    };
    let forest = train_forest(&train_sel, &params, derive_seed(config.seed, stream::TRAIN))?;
    let (summary, explanations) = global_summary(&forest, &train_sel.x)?;

    let all_names = data.feature_names.clone();
    let importance = FeatureImportanceReport {
        selected_names: mask.selected.iter().map(|&j| all_names[j].clone()).collect(),
        selected: mask.selected.clone(),
        importance: mask.importance.clone(),
        feature_names: all_names,
    };
    let global = GlobalSummaryReport {
        summary: summary.clone(),
        feature_names: train_sel.feature_names.clone(),
        class_names: class_names(),
        rows: split.train.clone(),
        labels: train_sel.y.clone(),
        phi: explanations.into_iter().map(|e| e.phi).collect(),
        values: train_sel.x.clone(),
    };
    let bundle = ModelBundle {
        schema_version: SCHEMA_VERSION,
        filter: *filter,
        batch_len,
        normalization,
        feature_mask: mask,
        forest,
        metadata: TrainingMetadata {
            seed: config.seed,
            created_unix: config.created_unix,
            dataset_fingerprint: table.fingerprint(),
            n_rows: table.len(),
            class_counts: table.class_counts().to_vec(),
            train_fraction: config.train_fraction,
            top_k: config.top_k,
            searched: cv.is_some(),
        },
        split,
        global_ranking: summary,
    };
    Ok(TrainArtifacts {
        bundle,
        global,
        cv,
        importance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnReport {
    pub k: usize,
    pub predictions: Vec<usize>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub dataset_fingerprint: String,
    pub test_rows: Vec<usize>,
    pub y_true: Vec<usize>,
    pub predictions: Vec<usize>,
    pub forest: Metrics,
    pub knn: Option<KnnReport>,
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let names: Vec<&str> = self.class_names.iter().map(String::as_str).collect();
        let mut models = vec![("forest", &self.forest)];
        if let Some(k) = &self.knn {
            models.push(("knn", &k.metrics));
        }
        format_metrics_table(&models, &names)
    }

    /// Macro and overall figures per model, for bar charts.
    pub fn plot_data(&self) -> MetricsPlotData {
        let entry = |name: &str, m: &Metrics| MetricsPlotEntry {
            model: name.to_string(),
            macro_precision: m.macro_precision,
            macro_recall: m.macro_recall,
            macro_f1: m.macro_f1,
            macro_accuracy: m.macro_accuracy,
            overall_accuracy: m.overall_accuracy,
        };
        let mut models = vec![entry("forest", &self.forest)];
        if let Some(k) = &self.knn {
            models.push(entry("knn", &k.metrics));
        }
        MetricsPlotData { models }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsPlotEntry {
    pub model: String,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_accuracy: f64,
    pub overall_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsPlotData {
    pub models: Vec<MetricsPlotEntry>,
}

/// Scores the bundle's forest, and optionally a kNN baseline in the same
/// feature space, on the held-out rows recorded at training time.
pub fn evaluate(bundle: &ModelBundle, table: &SignatureTable, knn_k: Option<usize>) -> Result<MetricsReport> {
    bundle.validate()?;
    let data = bundle.project(table)?;
    let test = data.subset(&bundle.split.test);
    let predictions = bundle.forest.predict_all(&test.x)?;
    let forest = evaluate_predictions(&test.y, &predictions, N_CLASSES)?;
    let knn = knn_k
        .map(|k| -> Result<KnnReport> {
            let train = data.subset(&bundle.split.train);
            let predictions = knn_predict(&train, &test.x, k, N_CLASSES)?;
            let metrics = evaluate_predictions(&test.y, &predictions, N_CLASSES)?;
            Ok(KnnReport { k, predictions, metrics })
        })
        .transpose()?;
    Ok(MetricsReport {
        class_names: class_names(),
        dataset_fingerprint: table.fingerprint(),
        test_rows: bundle.split.test.clone(),
        y_true: test.y,
        predictions,
        forest,
        knn,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceExplanation {
    pub row: usize,
    pub label: usize,
    pub explanation: Explanation,
    pub waterfall: Waterfall,
    /// The two most probable classes, highest first.
    pub top_classes: Vec<usize>,
    pub credibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub top_k: usize,
    pub instances: Vec<InstanceExplanation>,
}

/// Explains the given signature-table rows and scores each against the
/// bundle's global ranking.
pub fn explain(bundle: &ModelBundle, table: &SignatureTable, rows: &[usize], top_k: usize) -> Result<ExplainReport> {
    use rayon::prelude::*;
    bundle.validate()?;
    let data = bundle.project(table)?;
    if let Some(&bad) = rows.iter().find(|&&r| r >= data.len()) {
        return Err(Error::InvalidConfig(format!(
            "row index {bad} is out of range for {} rows",
            data.len()
        )));
    }
    let instances = rows
        .par_iter()
        .map(|&row| {
            let explanation = forest_shap(&bundle.forest, &data.x[row], row.to_string())?;
            let waterfall = waterfall_for_class(&explanation, explanation.predicted_class);
            let credibility = credibility_check(&explanation, &bundle.global_ranking, top_k);
            let top_classes = explanation.ranked_classes().into_iter().take(2).collect();
            Ok(InstanceExplanation {
                row,
                label: data.y[row],
                explanation,
                waterfall,
                top_classes,
                credibility,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExplainReport { top_k, instances })
}

/// Sanity bound used by callers that accept a feature count from users.
pub fn check_top_k(k: usize) -> Result<()> {
    if k == 0 || k > N_FEATURES {
        return Err(Error::InvalidConfig(format!("top-k must be in 1..={N_FEATURES}, got {k}")));
    }
    Ok(())
}

//! Metrics and experiment harnesses.
//!
//! The harnesses are small-scale versions of three experiments: the
//! train/test loss gap over training, AUC as the training set shrinks, and
//! AUC against the size of the residual part.

use std::path::Path;

use ndarray::Axis;
use serde::Serialize;

use crate::embedding::{residual_scale_ratio, EmbedParams, EmbeddingTable, PartitionSpec};
use crate::error::{Error, Result};
use crate::graph::{build_interest_graph, CooccurrenceGraph, FusionMatrix};
use crate::optim::{train, CurvePoint, FusionMode, Structure, TrainConfig, TrainOutcome};
use crate::synth::{sample_histories, Sample};
use crate::theory::envelope_radius;

/// Area under the ROC curve of `(score, label)` pairs: the chance a random
/// positive outscores a random negative, ties counting one half.
///
/// Computed from rank sums over tied groups in integer arithmetic, so the
/// result is exactly the pair-count ratio.
pub fn auc(scored: &[(f64, u8)]) -> Result<f64> {
    if let Some(&(s, y)) = scored.iter().find(|(s, y)| s.is_nan() || *y > 1) {
        return Err(Error::invalid(format!("bad scored pair ({s}, {y})")));
    }
    let mut sorted: Vec<(f64, u8)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = sorted.iter().filter(|p| p.1 == 1).count() as u128;
    let n_neg = sorted.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(
            "AUC needs at least one positive and one negative",
        ));
    }
    // Twice the number of (pos, neg) pairs won by the positive.
    let mut twice_wins: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut k = 0;
    while k < sorted.len() {
        let mut end = k;
        let (mut pos, mut neg) = (0u128, 0u128);
        while end < sorted.len() && sorted[end].0 == sorted[k].0 {
            if sorted[end].1 == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            end += 1;
        }
        twice_wins += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        k = end;
    }
    Ok(twice_wins as f64 / (2 * n_pos * n_neg) as f64)
}

/// How tightly embeddings cluster by interest domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregationStats {
    /// Envelope radius per domain; `None` for empty domains.
    pub domain_radii: Vec<Option<f64>>,
    pub r_max: f64,
    /// Mean over domains of the mean pairwise distance inside the domain.
    pub mean_intra_distance: f64,
    /// Mean distance between domain centroids.
    pub mean_inter_distance: f64,
    /// `mean_intra_distance / mean_inter_distance`, when the latter is positive.
    pub intra_inter_ratio: Option<f64>,
    pub residual_scale_ratio: Option<f64>,
}

pub fn aggregation_stats(
    table: &EmbeddingTable,
    partition: &PartitionSpec,
    params: &EmbedParams,
    fusion: Option<&FusionMatrix>,
) -> Result<AggregationStats> {
    if partition.n_items() != table.n_items() {
        return Err(Error::invalid(format!(
            "partition covers {} items, table has {}",
            partition.n_items(),
            table.n_items()
        )));
    }
    let mut radii = Vec::with_capacity(partition.n_domains());
    let mut centroids = Vec::new();
    let mut intra = Vec::new();
    for (dom, members) in partition.members().iter().enumerate() {
        if members.is_empty() {
            log::warn!("domain {dom} has no items; skipped");
            radii.push(None);
            continue;
        }
        let pts = table.table.select(Axis(0), members);
        radii.push(Some(envelope_radius(pts.view())?));
        centroids.push(pts.mean_axis(Axis(0)).expect("non-empty domain"));
        if members.len() > 1 {
            let mut total = 0.0;
            let mut count = 0usize;
            for a in 0..pts.nrows() {
                for b in a + 1..pts.nrows() {
                    let diff = &pts.row(a) - &pts.row(b);
                    total += diff.dot(&diff).sqrt();
                    count += 1;
                }
            }
            intra.push(total / count as f64);
        }
    }
    let mut inter = Vec::new();
    for a in 0..centroids.len() {
        for b in a + 1..centroids.len() {
            let diff = &centroids[a] - &centroids[b];
            inter.push(diff.dot(&diff).sqrt());
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mean_intra = mean(&intra);
    let mean_inter = mean(&inter);
    Ok(AggregationStats {
        r_max: radii.iter().flatten().copied().fold(0.0, f64::max),
        domain_radii: radii,
        mean_intra_distance: mean_intra,
        mean_inter_distance: mean_inter,
        intra_inter_ratio: (mean_inter > 0.0).then(|| mean_intra / mean_inter),
        residual_scale_ratio: residual_scale_ratio(fusion, params),
    })
}

/// Aggregation statistics of a trained model against a reference partition.
pub fn model_aggregation(
    outcome: &TrainOutcome,
    partition: &PartitionSpec,
) -> Result<AggregationStats> {
    let model = &outcome.model;
    let fusion = model.fusion_matrix()?;
    aggregation_stats(
        &model.embedding_table()?,
        partition,
        &model.embed,
        fusion.as_ref(),
    )
}

/// Training data plus what is needed to build each method's structure.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub n_items: usize,
    /// Interest graph window and top-K; the graph is built from the
    /// training histories in use.
    pub window: usize,
    pub top_k: usize,
    /// Item → domain assignment for oracle runs.
    pub partition: Option<PartitionSpec>,
}

impl ExperimentData {
    pub fn graph(&self, train: &[Sample]) -> Result<CooccurrenceGraph> {
        build_interest_graph(
            &sample_histories(train)?,
            self.window,
            self.top_k,
            self.n_items,
        )
    }

    pub fn structure(&self, mode: FusionMode, train: &[Sample]) -> Result<Structure> {
        Ok(match mode {
            FusionMode::None => Structure::None,
            FusionMode::Oracle => {
                Structure::Partition(self.partition.clone().ok_or_else(|| {
                    Error::config("fusion_mode", "oracle mode needs a domain file")
                })?)
            }
            _ => Structure::Graph(self.graph(train)?),
        })
    }

    /// Trains one configuration on a prefix of the training set.
    pub fn run(&self, cfg: &TrainConfig, n_train: usize) -> Result<TrainOutcome> {
        let subset = &self.train[..n_train.min(self.train.len())];
        train(
            subset,
            &self.test,
            self.n_items,
            self.structure(cfg.fusion_mode, subset)?,
            cfg,
        )
    }
}

fn final_gap(out: &TrainOutcome) -> Option<f64> {
    let m = out.final_metrics()?;
    Some(m.test_loss? - m.train_loss)
}

/// Loss curves of a baseline and a residual-embedding run.
#[derive(Debug, Clone)]
pub struct OverfitReport {
    pub baseline_curve: Vec<CurvePoint>,
    pub residual_curve: Vec<CurvePoint>,
    /// Final `test_loss − train_loss`; `None` without a test set or epochs.
    pub baseline_gap: Option<f64>,
    pub residual_gap: Option<f64>,
}

/// Trains both configurations on the same data, sampling losses every
/// `curve_interval` steps (100 when unset).
pub fn overfit_gap_experiment(
    data: &ExperimentData,
    baseline: &TrainConfig,
    residual: &TrainConfig,
) -> Result<OverfitReport> {
    let with_curve = |cfg: &TrainConfig| TrainConfig {
        curve_interval: cfg.curve_interval.or(Some(100)),
        ..cfg.clone()
    };
    let b = data.run(&with_curve(baseline), data.train.len())?;
    let r = data.run(&with_curve(residual), data.train.len())?;
    Ok(OverfitReport {
        baseline_gap: final_gap(&b),
        residual_gap: final_gap(&r),
        baseline_curve: b.curve,
        residual_curve: r.curve,
    })
}

pub fn write_overfit_csv(path: &Path, report: &OverfitReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "step", "train_loss", "test_loss"])?;
    for (name, curve) in [
        ("baseline", &report.baseline_curve),
        ("residual", &report.residual_curve),
    ] {
        for p in curve {
            w.write_record([
                name.to_string(),
                p.step.to_string(),
                p.train_loss.to_string(),
                p.test_loss.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub fraction: f64,
    pub method: String,
    pub auc: f64,
}

/// Number of training samples used at `fraction`.
pub fn decay_size(fraction: f64, n: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(
            "fractions",
            format!("{fraction} is outside (0, 1]"),
        ));
    }
    let k = (fraction * n as f64).ceil() as usize;
    if k == 0 {
        return Err(Error::config(
            "fractions",
            format!("{fraction} selects no samples"),
        ));
    }
    Ok(k.min(n))
}

/// Trains every method on the first `⌈f·N⌉` training samples for each
/// fraction `f` and records test AUC. The sample order is the dataset's own
/// (already random) order, so `f = 1` reproduces a plain run exactly.
pub fn decay_experiment(
    data: &ExperimentData,
    fractions: &[f64],
    methods: &[(String, TrainConfig)],
) -> Result<Vec<DecayRow>> {
    let sizes: Vec<usize> = fractions
        .iter()
        .map(|&f| decay_size(f, data.train.len()))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (&fraction, &n) in fractions.iter().zip(&sizes) {
        for (name, cfg) in methods {
            let out = data.run(cfg, n)?;
            let auc = out
                .final_metrics()
                .and_then(|m| m.test_auc)
                .ok_or_else(|| Error::invalid("decay experiment needs a two-class test set"))?;
            rows.push(DecayRow {
                fraction,
                method: name.clone(),
                auc,
            });
        }
    }
    Ok(rows)
}

pub fn write_decay_csv(path: &Path, rows: &[DecayRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fraction", "method", "auc"])?;
    for r in rows {
        w.write_record([r.fraction.to_string(), r.method.clone(), r.auc.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRow {
    /// `None` marks the run with `R` frozen at zero.
    pub lambda: Option<f64>,
    pub res_scale_ratio: Option<f64>,
    pub auc: Option<f64>,
}

/// One run per `λ`, plus a final run with the residual frozen at zero.
pub fn residual_scale_sweep(
    data: &ExperimentData,
    lambdas: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<ScaleRow>> {
    if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::config(
            "lambdas",
            format!("{bad} is not a non-negative number"),
        ));
    }
    if cfg.fusion_mode == FusionMode::None {
        return Err(Error::config(
            "fusion_mode",
            "the residual sweep needs a fusion mode",
        ));
    }
    let mut runs: Vec<(Option<f64>, TrainConfig)> = lambdas
        .iter()
        .map(|&l| {
            (
                Some(l),
                TrainConfig {
                    lambda: l,
                    ..cfg.clone()
                },
            )
        })
        .collect();
    runs.push((
        None,
        TrainConfig {
            freeze_residual: true,
            ..cfg.clone()
        },
    ));
    runs.into_iter()
        .map(|(lambda, c)| {
            let out = data.run(&c, data.train.len())?;
            let m = out.final_metrics();
            Ok(ScaleRow {
                lambda,
                res_scale_ratio: out.model.residual_scale_ratio()?,
                auc: m.and_then(|m| m.test_auc),
            })
        })
        .collect()
}

pub fn write_scale_csv(path: &Path, rows: &[ScaleRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "res_scale_ratio", "auc"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let lambda = r
            .lambda
            .map_or_else(|| "inf".to_string(), |l| l.to_string());
        w.write_record([lambda, opt(r.res_scale_ratio), opt(r.auc)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

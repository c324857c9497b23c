//! Adam with stepwise exponential decay and the minibatch training loop for
//! the objective `mean cross-entropy + λ‖R‖²_F`.
//!
//! Embedding rows are resolved lazily: a step only touches the items that
//! appear in its batch (plus their graph neighbours' basis rows), and Adam
//! updates only those rows. Untouched rows keep their moments undecayed.

use std::borrow::Cow;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    att_score_backward, residual_scale_ratio, resolve, resolve_row, EmbedParams, EmbeddingTable,
    PartitionSpec, DEFAULT_DIM,
};
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::graph::{
    att_row, fuse_att, fuse_avg, fuse_gcn, CooccurrenceGraph, FusionMatrix, ItemId,
};
use crate::nets::{cross_entropy, features, features_backward, Backend, MlpParams, Prediction};
use crate::synth::Sample;

const EVAL_CHUNK: usize = 1024;
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

/// How item embeddings are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Plain lookup table, `E = R`.
    None,
    /// Domain prototypes from a known partition, `E = P·C + R`.
    Oracle,
    #[default]
    Avg,
    Gcn,
    Att,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Oracle => "oracle",
            FusionMode::Avg => "avg",
            FusionMode::Gcn => "gcn",
            FusionMode::Att => "att",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FusionMode::None),
            "oracle" => Ok(FusionMode::Oracle),
            "avg" => Ok(FusionMode::Avg),
            "gcn" => Ok(FusionMode::Gcn),
            "att" => Ok(FusionMode::Att),
            other => Err(Error::config(
                "fusion_mode",
                format!("unknown mode `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_gamma: f64,
    pub decay_interval: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub fusion_mode: FusionMode,
    pub backend: Backend,
    pub dim: usize,
    pub hidden: Vec<usize>,
    /// Differentiate through the attention softmax instead of treating the
    /// refreshed coefficients as constants.
    pub att_full_grad: bool,
    /// Keep `R` at zero for the whole run.
    pub freeze_residual: bool,
    /// Record train/test loss every this many steps.
    pub curve_interval: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.1,
            decay_gamma: 0.9,
            decay_interval: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
            lambda: 0.006,
            epochs: 5,
            seed: 1,
            fusion_mode: FusionMode::Avg,
            backend: Backend::Mlp,
            dim: DEFAULT_DIM,
            hidden: crate::nets::DEFAULT_HIDDEN.to_vec(),
            att_full_grad: false,
            freeze_residual: false,
            curve_interval: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::config("lr0", "must be a positive number"));
        }
        if !(self.decay_gamma.is_finite() && self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            return Err(Error::config("decay_gamma", "must lie in (0, 1]"));
        }
        if self.decay_interval == 0 {
            return Err(Error::config("decay_interval", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta2", "must lie in [0, 1)"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda", "must be a non-negative number"));
        }
        if self.dim == 0 {
            return Err(Error::config("d", "must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be positive"));
        }
        if self.curve_interval == Some(0) {
            return Err(Error::config("curve_interval", "must be at least 1"));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.backend.feature_dim(self.dim)];
        w.extend(&self.hidden);
        w.push(1);
        w
    }
}

/// `lr0 · γ^⌊step / interval⌋`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    let k = (step / cfg.decay_interval) as i32;
    cfg.lr0 * cfg.decay_gamma.powi(k)
}

/// Adam moments for one flat tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Constants shared by every Adam update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConsts {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConsts {
    fn default() -> Self {
        AdamConsts {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl From<&TrainConfig> for AdamConsts {
    fn from(cfg: &TrainConfig) -> Self {
        AdamConsts {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }
}

/// One Adam step on a flat tensor; advances `state.t`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    consts: AdamConsts,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::invalid(
            "adam: parameter, gradient and state shapes differ",
        ));
    }
    check_finite(grads, "params", state.t as usize)?;
    state.t += 1;
    adam_update(
        params,
        grads,
        &mut state.m,
        &mut state.v,
        state.t,
        lr,
        consts,
    );
    Ok(())
}

fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    c: AdamConsts,
) {
    let bc1 = 1.0 - c.beta1.powi(t as i32);
    let bc2 = 1.0 - c.beta2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + c.eps);
    }
}

fn check_finite(values: &[f64], tensor: &str, step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            tensor: tensor.to_string(),
            step,
        })
    }
}

/// The graph or partition an embedding layer is built on.
#[derive(Debug, Clone, PartialEq)]
pub enum Structure {
    None,
    Partition(PartitionSpec),
    Graph(CooccurrenceGraph),
}

/// Gradient restricted to a set of table rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrad {
    /// Ascending row indices.
    pub rows: Vec<usize>,
    /// One gradient row per entry of `rows`.
    pub values: Array2<f64>,
}

impl RowGrad {
    fn empty(dim: usize) -> Self {
        RowGrad {
            rows: Vec::new(),
            values: Array2::zeros((0, dim)),
        }
    }

    /// Expands to a full `n_rows × dim` matrix.
    pub fn to_dense(&self, n_rows: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n_rows, self.values.ncols()));
        for (k, &r) in self.rows.iter().enumerate() {
            out.row_mut(r).assign(&self.values.row(k));
        }
        out
    }
}

/// Gradients of one batch objective.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub mlp: MlpParams,
    pub central: RowGrad,
    pub residual: RowGrad,
}

/// Embedding layer plus CTR network.
#[derive(Debug, Clone)]
pub struct Model {
    pub fusion_mode: FusionMode,
    pub backend: Backend,
    pub embed: EmbedParams,
    pub mlp: MlpParams,
    pub structure: Structure,
    fixed: Option<FusionMatrix>,
}

impl Model {
    pub fn init(cfg: &TrainConfig, n_items: usize, structure: Structure) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(INIT_STREAM);
        let n_basis = basis_rows(cfg.fusion_mode, n_items, &structure)?;
        let mut embed = EmbedParams::init(n_basis, n_items, cfg.dim, &mut rng);
        if cfg.freeze_residual {
            embed.residual.fill(0.0);
        }
        let mlp = MlpParams::init(&cfg.widths(), &mut rng)?;
        Self::from_parts(cfg.fusion_mode, cfg.backend, embed, mlp, structure)
    }

    pub fn from_parts(
        fusion_mode: FusionMode,
        backend: Backend,
        embed: EmbedParams,
        mlp: MlpParams,
        structure: Structure,
    ) -> Result<Self> {
        let n_items = embed.n_items();
        let n_basis = basis_rows(fusion_mode, n_items, &structure)?;
        if embed.central.nrows() != n_basis {
            return Err(Error::invalid(format!(
                "{} mode needs {n_basis} basis rows, got {}",
                fusion_mode.name(),
                embed.central.nrows()
            )));
        }
        if mlp.input_dim() != backend.feature_dim(embed.dim()) {
            return Err(Error::invalid(format!(
                "network input {} does not fit backend features {}",
                mlp.input_dim(),
                backend.feature_dim(embed.dim())
            )));
        }
        let fixed = match (&structure, fusion_mode) {
            (Structure::Partition(p), FusionMode::Oracle) => Some(p.to_fusion()),
            (Structure::Graph(g), FusionMode::Avg) => Some(fuse_avg(g)),
            (Structure::Graph(g), FusionMode::Gcn) => Some(fuse_gcn(g)),
            _ => None,
        };
        Ok(Model {
            fusion_mode,
            backend,
            embed,
            mlp,
            structure,
            fixed,
        })
    }

    pub fn n_items(&self) -> usize {
        self.embed.n_items()
    }

    pub fn dim(&self) -> usize {
        self.embed.dim()
    }

    fn graph(&self) -> Option<&CooccurrenceGraph> {
        match &self.structure {
            Structure::Graph(g) => Some(g),
            _ => None,
        }
    }

    /// The full fusion matrix at the current parameters.
    pub fn fusion_matrix(&self) -> Result<Option<FusionMatrix>> {
        match self.fusion_mode {
            FusionMode::None => Ok(None),
            FusionMode::Att => {
                let g = self.graph().expect("att mode has a graph");
                fuse_att(g, &self.embed.central).map(Some)
            }
            _ => Ok(self.fixed.clone()),
        }
    }

    pub fn embedding_table(&self) -> Result<EmbeddingTable> {
        resolve(self.fusion_matrix()?.as_ref(), &self.embed)
    }

    pub fn residual_scale_ratio(&self) -> Result<Option<f64>> {
        Ok(residual_scale_ratio(
            self.fusion_matrix()?.as_ref(),
            &self.embed,
        ))
    }

    fn coeff_row(&self, item: usize) -> Cow<'_, [(ItemId, f64)]> {
        match self.fusion_mode {
            FusionMode::None => Cow::Borrowed(&[]),
            FusionMode::Att => Cow::Owned(att_row(
                self.graph().expect("att mode has a graph"),
                &self.embed.central,
                item,
            )),
            _ => Cow::Borrowed(self.fixed.as_ref().expect("fixed fusion").row(item)),
        }
    }

    fn check_samples(&self, samples: &[Sample]) -> Result<()> {
        samples.iter().try_for_each(|s| s.validate(self.n_items()))
    }

    /// Logits for every sample.
    pub fn predict_logits(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        self.check_samples(samples)?;
        let table = self.embedding_table()?;
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EVAL_CHUNK) {
            let x = self.feature_matrix(chunk, |i| table.row(i))?.0;
            out.extend(self.mlp.forward(x.view())?.logits.iter().copied());
        }
        Ok(out)
    }

    /// Mean cross-entropy and AUC (when both classes are present).
    pub fn evaluate(&self, samples: &[Sample]) -> Result<(f64, Option<f64>)> {
        if samples.is_empty() {
            return Err(Error::invalid("cannot evaluate on an empty sample set"));
        }
        let logits = self.predict_logits(samples)?;
        let mut total = 0.0;
        let mut scored = Vec::with_capacity(samples.len());
        for (&z, s) in logits.iter().zip(samples) {
            total += cross_entropy(Prediction::from_logit(z), s.label).0;
            scored.push((z, s.label));
        }
        let has_both = scored.iter().any(|p| p.1 == 1) && scored.iter().any(|p| p.1 == 0);
        let a = if has_both { Some(auc(&scored)?) } else { None };
        Ok((total / samples.len() as f64, a))
    }

    fn feature_matrix<'a>(
        &self,
        samples: &[Sample],
        row: impl Fn(usize) -> ArrayView1<'a, f64>,
    ) -> Result<(Array2<f64>, Vec<crate::nets::PoolCache>)> {
        let width = self.backend.feature_dim(self.dim());
        let mut x = Array2::zeros((samples.len(), width));
        let mut caches = Vec::with_capacity(samples.len());
        for (k, s) in samples.iter().enumerate() {
            let hist: Vec<ArrayView1<f64>> = s.history.iter().map(|&i| row(i as usize)).collect();
            let (f, cache) = features(self.backend, &hist, row(s.target as usize))?;
            x.row_mut(k).assign(&f);
            caches.push(cache);
        }
        Ok((x, caches))
    }

    /// Batch objective `mean CE + λ Σ_{touched} ‖R_i‖²` and its gradient.
    ///
    /// With `full_reg` the penalty and its gradient cover every row of `R`.
    /// In attention mode the coefficients are recomputed from the current
    /// basis; `att_full_grad` also differentiates through them.
    pub fn batch_gradient(
        &self,
        batch: &[Sample],
        lambda: f64,
        att_full_grad: bool,
        full_reg: bool,
    ) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let dim = self.dim();
        let n_items = self.n_items();

        // Items needed by this batch, with local slots.
        let mut slot = vec![usize::MAX; n_items];
        let mut items = Vec::new();
        for s in batch {
            for &i in s.history.iter().chain(std::iter::once(&s.target)) {
                let i = i as usize;
                if i >= n_items {
                    return Err(Error::invalid(format!("item {i} out of range")));
                }
                if slot[i] == usize::MAX {
                    slot[i] = 0;
                    items.push(i);
                }
            }
        }
        items.sort_unstable();
        for (k, &i) in items.iter().enumerate() {
            slot[i] = k;
        }

        let coeffs: Vec<Cow<[(ItemId, f64)]>> = items.iter().map(|&i| self.coeff_row(i)).collect();
        let mut local = Array2::zeros((items.len(), dim));
        for (k, &i) in items.iter().enumerate() {
            local
                .row_mut(k)
                .assign(&resolve_row(&coeffs[k], &self.embed, i));
        }

        let (x, caches) = self.feature_matrix(batch, |i| local.row(slot[i]))?;
        let cache = self.mlp.forward(x.view())?;
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut dlogits = Array1::zeros(batch.len());
        for (k, s) in batch.iter().enumerate() {
            let (l, g) = cross_entropy(Prediction::from_logit(cache.logits[k]), s.label);
            loss += l;
            dlogits[k] = g * scale;
        }
        loss *= scale;
        let (mlp_grads, dx) = self.mlp.backward(&cache, dlogits.view());

        let mut grad_e: Array2<f64> = Array2::zeros((items.len(), dim));
        for (k, s) in batch.iter().enumerate() {
            let hist: Vec<ArrayView1<f64>> = s
                .history
                .iter()
                .map(|&i| local.row(slot[i as usize]))
                .collect();
            let target = local.row(slot[s.target as usize]);
            let (g_hist, g_target) =
                features_backward(self.backend, dx.row(k), &caches[k], &hist, target);
            for (&i, g) in s.history.iter().zip(&g_hist) {
                grad_e.row_mut(slot[i as usize]).scaled_add(1.0, g);
            }
            grad_e
                .row_mut(slot[s.target as usize])
                .scaled_add(1.0, &g_target);
        }

        // Residual rows.
        let residual = if full_reg {
            let mut g = self.embed.residual.mapv(|r| 2.0 * lambda * r);
            for (k, &i) in items.iter().enumerate() {
                g.row_mut(i).scaled_add(1.0, &grad_e.row(k));
            }
            loss += lambda * self.embed.residual.iter().map(|r| r * r).sum::<f64>();
            RowGrad {
                rows: (0..n_items).collect(),
                values: g,
            }
        } else {
            let mut values = grad_e.clone();
            for (k, &i) in items.iter().enumerate() {
                let r = self.embed.residual.row(i);
                values.row_mut(k).scaled_add(2.0 * lambda, &r);
                loss += lambda * r.dot(&r);
            }
            RowGrad {
                rows: items.clone(),
                values,
            }
        };

        // Central basis rows: G_C = Wᵀ G_E over the touched coefficients.
        let central = if self.fusion_mode == FusionMode::None {
            RowGrad::empty(dim)
        } else {
            let n_basis = self.embed.central.nrows();
            let mut acc: Array2<f64> = Array2::zeros((n_basis, dim));
            let mut touched = vec![false; n_basis];
            for (k, row) in coeffs.iter().enumerate() {
                for &(j, w) in row.iter() {
                    let j = j as usize;
                    acc.row_mut(j).scaled_add(w, &grad_e.row(k));
                    touched[j] = true;
                }
            }
            if self.fusion_mode == FusionMode::Att && att_full_grad {
                let g = self.graph().expect("att mode has a graph");
                for (k, &i) in items.iter().enumerate() {
                    att_score_backward(
                        g,
                        &self.embed.central,
                        i,
                        &coeffs[k],
                        grad_e.row(k),
                        |r, s, v| {
                            acc.row_mut(r).scaled_add(s, &v);
                            touched[r] = true;
                        },
                    );
                }
            }
            let rows: Vec<usize> = (0..n_basis).filter(|&j| touched[j]).collect();
            let values = acc.select(Axis(0), &rows);
            RowGrad { rows, values }
        };

        Ok((
            loss,
            Gradients {
                mlp: mlp_grads,
                central,
                residual,
            },
        ))
    }
}

fn basis_rows(mode: FusionMode, n_items: usize, structure: &Structure) -> Result<usize> {
    match (mode, structure) {
        (FusionMode::None, _) => Ok(0),
        (FusionMode::Oracle, Structure::Partition(p)) => {
            if p.n_items() != n_items {
                return Err(Error::invalid(format!(
                    "partition covers {} items, data has {n_items}",
                    p.n_items()
                )));
            }
            Ok(p.n_domains())
        }
        (FusionMode::Avg | FusionMode::Gcn | FusionMode::Att, Structure::Graph(g)) => {
            if g.n_items() != n_items {
                return Err(Error::invalid(format!(
                    "graph covers {} items, data has {n_items}",
                    g.n_items()
                )));
            }
            Ok(n_items)
        }
        (FusionMode::Oracle, _) => Err(Error::config(
            "fusion_mode",
            "oracle mode needs a partition",
        )),
        (mode, _) => Err(Error::config(
            "fusion_mode",
            format!("{} mode needs an interest graph", mode.name()),
        )),
    }
}

/// Adam state for every trainable tensor of a [`Model`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    consts: AdamConsts,
    t: u64,
    mlp: Vec<(AdamState, AdamState)>,
    central: AdamState,
    residual: AdamState,
}

impl Optimizer {
    pub fn new(model: &Model, consts: AdamConsts) -> Self {
        Optimizer {
            consts,
            t: 0,
            mlp: model
                .mlp
                .layers
                .iter()
                .map(|l| (AdamState::new(l.weight.len()), AdamState::new(l.bias.len())))
                .collect(),
            central: AdamState::new(model.embed.central.len()),
            residual: AdamState::new(model.embed.residual.len()),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update; `step` is only used in error reports.
    pub fn apply(
        &mut self,
        model: &mut Model,
        grads: &Gradients,
        lr: f64,
        step: usize,
        freeze_residual: bool,
    ) -> Result<()> {
        for (t, g) in grads.mlp.layers.iter().enumerate() {
            check_finite(flat(&g.weight), &format!("mlp.layers[{t}].weight"), step)?;
            check_finite(flat(&g.bias), &format!("mlp.layers[{t}].bias"), step)?;
        }
        check_finite(flat(&grads.central.values), "central", step)?;
        if !freeze_residual {
            check_finite(flat(&grads.residual.values), "residual", step)?;
        }

        self.t += 1;
        let (t, c) = (self.t, self.consts);
        for ((layer, g), (sw, sb)) in model
            .mlp
            .layers
            .iter_mut()
            .zip(&grads.mlp.layers)
            .zip(&mut self.mlp)
        {
            adam_update(
                flat_mut(&mut layer.weight),
                flat(&g.weight),
                &mut sw.m,
                &mut sw.v,
                t,
                lr,
                c,
            );
            adam_update(
                flat_mut(&mut layer.bias),
                flat(&g.bias),
                &mut sb.m,
                &mut sb.v,
                t,
                lr,
                c,
            );
        }
        update_rows(
            &mut model.embed.central,
            &grads.central,
            &mut self.central,
            t,
            lr,
            c,
        );
        if !freeze_residual {
            update_rows(
                &mut model.embed.residual,
                &grads.residual,
                &mut self.residual,
                t,
                lr,
                c,
            );
        }
        Ok(())
    }
}

fn update_rows(
    table: &mut Array2<f64>,
    grad: &RowGrad,
    state: &mut AdamState,
    t: u64,
    lr: f64,
    c: AdamConsts,
) {
    let dim = table.ncols();
    let params = flat_mut(table);
    for (k, &r) in grad.rows.iter().enumerate() {
        let span = r * dim..(r + 1) * dim;
        let g = grad.values.row(k);
        adam_update(
            &mut params[span.clone()],
            g.as_slice().expect("row-major gradient"),
            &mut state.m[span.clone()],
            &mut state.v[span],
            t,
            lr,
            c,
        );
    }
}

fn flat<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn flat_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

/// End-of-epoch metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_auc: Option<f64>,
    pub lr: f64,
    pub res_scale_ratio: Option<f64>,
}

/// Losses sampled during training.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
    pub curve: Vec<CurvePoint>,
}

impl TrainOutcome {
    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.metrics.last()
    }
}

/// Trains a fresh model on `train`, reporting on `test` after every epoch.
pub fn train(
    train: &[Sample],
    test: &[Sample],
    n_items: usize,
    structure: Structure,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut model = Model::init(cfg, n_items, structure)?;
    model.check_samples(train)?;
    model.check_samples(test)?;
    let mut opt = Optimizer::new(&model, AdamConsts::from(cfg));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut curve = Vec::new();
    let mut step = 0usize;
    let mut batch = Vec::with_capacity(cfg.batch_size);

    let loss_on = |m: &Model, s: &[Sample]| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            m.evaluate(s).map(|r| Some(r.0))
        }
    };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| train[k].clone()));
            let lr = lr_schedule(step, cfg);
            let (loss, grads) =
                model.batch_gradient(&batch, cfg.lambda, cfg.att_full_grad, false)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    tensor: "loss".into(),
                    step,
                });
            }
            opt.apply(&mut model, &grads, lr, step, cfg.freeze_residual)?;
            step += 1;
            if let Some(every) = cfg.curve_interval {
                if step.is_multiple_of(every) {
                    curve.push(CurvePoint {
                        step,
                        train_loss: model.evaluate(train)?.0,
                        test_loss: loss_on(&model, test)?,
                    });
                }
            }
        }
        let train_loss = model.evaluate(train)?.0;
        let (test_loss, test_auc) = if test.is_empty() {
            (None, None)
        } else {
            let (l, a) = model.evaluate(test)?;
            (Some(l), a)
        };
        let m = EpochMetrics {
            epoch,
            step,
            train_loss,
            test_loss,
            test_auc,
            lr: lr_schedule(step, cfg),
            res_scale_ratio: model.residual_scale_ratio()?,
        };
        log::info!(
            "epoch {epoch} step {step} train_loss {train_loss:.5} test_auc {:?}",
            m.test_auc
        );
        metrics.push(m);
    }
    // The curve always ends at the final step.
    if let (Some(_), Some(last)) = (cfg.curve_interval, metrics.last()) {
        if curve.last().is_none_or(|p: &CurvePoint| p.step != step) {
            curve.push(CurvePoint {
                step,
                train_loss: last.train_loss,
                test_loss: last.test_loss,
            });
        }
    }
    Ok(TrainOutcome {
        model,
        metrics,
        curve,
    })
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "step",
        "train_loss",
        "test_loss",
        "test_auc",
        "lr",
        "res_scale_ratio",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in metrics {
        w.write_record([
            m.epoch.to_string(),
            m.step.to_string(),
            m.train_loss.to_string(),
            opt(m.test_loss),
            opt(m.test_auc),
            m.lr.to_string(),
            opt(m.res_scale_ratio),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    fusion_mode: FusionMode,
    backend: Backend,
    n_items: usize,
    central: Array2<f64>,
    residual: Array2<f64>,
    mlp: MlpParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    assignment: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_edges: Option<Vec<(u32, u32, f64)>>,
}

impl Model {
    /// Writes a self-contained JSON checkpoint (shapes plus row-major data).
    pub fn save(&self, path: &Path) -> Result<()> {
        let (assignment, graph_edges) = match &self.structure {
            Structure::None => (None, None),
            Structure::Partition(p) => (Some(p.assignment().to_vec()), None),
            Structure::Graph(g) => (
                None,
                Some(g.edges().map(|(i, j, w)| (i as u32, j as u32, w)).collect()),
            ),
        };
        let ck = Checkpoint {
            fusion_mode: self.fusion_mode,
            backend: self.backend,
            n_items: self.n_items(),
            central: self.embed.central.clone(),
            residual: self.embed.residual.clone(),
            mlp: self.mlp.clone(),
            assignment,
            graph_edges,
        };
        crate::synth::write_json(path, &ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        let structure = match (ck.assignment, ck.graph_edges) {
            (Some(a), None) => Structure::Partition(PartitionSpec::from_assignment(a)?),
            (None, Some(edges)) => Structure::Graph(CooccurrenceGraph::from_edges(
                ck.n_items,
                edges
                    .into_iter()
                    .map(|(i, j, w)| (i as usize, j as usize, w)),
            )?),
            (None, None) => Structure::None,
            (Some(_), Some(_)) => {
                return Err(Error::invalid(
                    "checkpoint has both a partition and a graph",
                ))
            }
        };
        let mlp = MlpParams::new(ck.mlp.layers)?;
        let embed = EmbedParams::new(ck.central, ck.residual)?;
        Model::from_parts(ck.fusion_mode, ck.backend, embed, mlp, structure)
    }
}

/// Outcome of comparing one analytic gradient coordinate with a central
/// finite difference.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Finite-difference step used by [`grad_check`].
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Denominator floor for relative errors of near-zero gradients.
pub const GRADCHECK_FLOOR: f64 = 1e-7;
/// Coordinates whose perturbation moves a ReLU pre-activation this close to
/// zero are skipped.
pub const GRADCHECK_KINK: f64 = 1e-6;

/// Compares every coordinate of the batch gradient (or up to
/// `max_per_tensor` evenly spaced coordinates per tensor) with central
/// finite differences of the full objective `mean CE + λ‖R‖²_F`.
///
/// In attention mode without `att_full_grad` the coefficients are frozen at
/// their current values for the finite differences, matching the
/// stop-gradient training rule.
pub fn grad_check(
    model: &Model,
    batch: &[Sample],
    lambda: f64,
    att_full_grad: bool,
    max_per_tensor: usize,
) -> Result<Vec<GradCheckEntry>> {
    let (_, grads) = model.batch_gradient(batch, lambda, att_full_grad, true)?;

    // Objective with attention optionally frozen.
    let mut probe = model.clone();
    if model.fusion_mode == FusionMode::Att && !att_full_grad {
        probe.fixed = model.fusion_matrix()?;
        probe.fusion_mode = FusionMode::Avg;
    }
    let objective = |m: &Model| -> Result<(f64, Vec<Array2<f64>>)> {
        let table = m.embedding_table()?;
        let (x, _) = m.feature_matrix(batch, |i| table.row(i))?;
        let cache = m.mlp.forward(x.view())?;
        let ce: f64 = cache
            .logits
            .iter()
            .zip(batch)
            .map(|(&z, s)| cross_entropy(Prediction::from_logit(z), s.label).0)
            .sum::<f64>()
            / batch.len() as f64;
        let reg = lambda * m.embed.residual.iter().map(|r| r * r).sum::<f64>();
        Ok((ce + reg, cache.inputs[1..].to_vec()))
    };
    let (_, base_acts) = objective(&probe)?;

    let mut tensors: Vec<(String, Array2<f64>)> = Vec::new();
    for (t, g) in grads.mlp.layers.iter().enumerate() {
        tensors.push((format!("mlp.layers[{t}].weight"), g.weight.clone()));
        tensors.push((
            format!("mlp.layers[{t}].bias"),
            g.bias.clone().insert_axis(Axis(1)),
        ));
    }
    if model.fusion_mode != FusionMode::None {
        tensors.push((
            "central".into(),
            grads.central.to_dense(model.embed.central.nrows()),
        ));
    }
    tensors.push(("residual".into(), grads.residual.to_dense(model.n_items())));

    let mut out = Vec::new();
    for (name, analytic) in &tensors {
        let flat_a = analytic.as_slice().expect("standard layout");
        let n = flat_a.len();
        let stride = if max_per_tensor == 0 || n <= max_per_tensor {
            1
        } else {
            n.div_ceil(max_per_tensor)
        };
        for index in (0..n).step_by(stride) {
            let eval_at = |delta: f64| -> Result<(f64, Vec<Array2<f64>>)> {
                let mut m = probe.clone();
                *param_mut(&mut m, name, index) += delta;
                objective(&m)
            };
            let (plus, acts_p) = eval_at(GRADCHECK_STEP)?;
            let (minus, acts_m) = eval_at(-GRADCHECK_STEP)?;
            if near_kink(&base_acts, &acts_p, &acts_m) {
                continue;
            }
            let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
            out.push(GradCheckEntry {
                tensor: name.clone(),
                index,
                analytic: flat_a[index],
                numeric,
                rel_err: relative_error(flat_a[index], numeric, GRADCHECK_FLOOR),
            });
        }
    }
    Ok(out)
}

fn param_mut<'a>(m: &'a mut Model, name: &str, index: usize) -> &'a mut f64 {
    if name == "central" {
        return &mut flat_mut(&mut m.embed.central)[index];
    }
    if name == "residual" {
        return &mut flat_mut(&mut m.embed.residual)[index];
    }
    let t: usize = name["mlp.layers[".len()..name.find(']').expect("layer name")]
        .parse()
        .expect("layer index");
    if name.ends_with("weight") {
        &mut flat_mut(&mut m.mlp.layers[t].weight)[index]
    } else {
        &mut flat_mut(&mut m.mlp.layers[t].bias)[index]
    }
}

/// True when some hidden unit is (or becomes) within the kink tolerance of
/// zero or changes its ReLU state between the two perturbations.
fn near_kink(base: &[Array2<f64>], plus: &[Array2<f64>], minus: &[Array2<f64>]) -> bool {
    base.iter().zip(plus).zip(minus).any(|((b, p), m)| {
        b.iter().zip(p).zip(m).any(|((&b, &p), &m)| {
            let on = |v: f64| v > 0.0;
            on(b) != on(p) || on(b) != on(m) || (on(b) && b.min(p).min(m) < GRADCHECK_KINK)
        })
    })
}

/// Result of one configuration in [`gradcheck_suite`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckCase {
    pub backend: Backend,
    pub fusion_mode: FusionMode,
    pub att_full_grad: bool,
    pub lambda: f64,
    pub checked: usize,
    pub max_rel_err: f64,
}

/// End-to-end finite-difference checks on a toy problem (8 items, `d = 3`,
/// depth 3) for every backend, fusion mode and `λ ∈ {0, 0.006}`.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheckCase>> {
    use crate::synth::{
        oracle_partition, sample_histories, SynthConfig, SyntheticWorld, WorldConfig,
    };
    let n_items = 8;
    let world = SyntheticWorld::generate(&WorldConfig {
        n_items,
        n_domains: 2,
        n_sequences: 3,
        n_test: 0,
        within: crate::synth::WithinDomain::Uniform,
        synth: SynthConfig {
            steps_per_period: 2,
            periods: 2,
            n_samples: 6,
            seed,
            ..SynthConfig::default()
        },
    })?;
    let graph =
        crate::graph::build_interest_graph(&sample_histories(&world.train)?, 2, 3, n_items)?;
    let partition = oracle_partition(&world.domains);
    let modes = [
        (FusionMode::None, false),
        (FusionMode::Oracle, false),
        (FusionMode::Avg, false),
        (FusionMode::Gcn, false),
        (FusionMode::Att, false),
        (FusionMode::Att, true),
    ];
    let mut out = Vec::new();
    for backend in [Backend::Mlp, Backend::Pnn, Backend::Din] {
        for &(mode, full) in &modes {
            for lambda in [0.0, 0.006] {
                let structure = match mode {
                    FusionMode::None => Structure::None,
                    FusionMode::Oracle => Structure::Partition(partition.clone()),
                    _ => Structure::Graph(graph.clone()),
                };
                let cfg = TrainConfig {
                    fusion_mode: mode,
                    backend,
                    dim: 3,
                    hidden: vec![5, 4],
                    seed,
                    ..TrainConfig::default()
                };
                let mut model = Model::init(&cfg, n_items, structure)?;
                // Larger embeddings than the default init keep the
                // attention and product paths well away from degenerate.
                model.embed.central *= 10.0;
                model.embed.residual *= 10.0;
                let checks = grad_check(&model, &world.train, lambda, full, 0)?;
                out.push(GradCheckCase {
                    backend,
                    fusion_mode: mode,
                    att_full_grad: full,
                    lambda,
                    checked: checks.len(),
                    max_rel_err: checks.iter().map(|c| c.rel_err).fold(0.0, f64::max),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_interest_graph;
    use crate::synth::{
        oracle_partition, sample_histories, SyntheticWorld, WithinDomain, WorldConfig,
    };
    use approx::assert_abs_diff_eq;

    #[test]
    fn lr_schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 0.1);
        assert_eq!(lr_schedule(999, &cfg), 0.1);
        assert_abs_diff_eq!(lr_schedule(1000, &cfg), 0.09, epsilon = 1e-15);
        assert_abs_diff_eq!(
            lr_schedule(3000, &cfg),
            0.1 * 0.9f64.powi(3),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(lr_schedule(3000, &cfg), 0.0729, epsilon = 1e-15);
    }

    #[test]
    fn adam_examples() {
        let c = AdamConsts::default();
        let mut p = [0.0, 1.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, c).unwrap();
        assert_eq!(p, [0.0, 1.0]);

        let mut theta = [0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut theta, &[1.0], &mut s, 0.1, c).unwrap();
        assert_abs_diff_eq!(theta[0], -0.1 / (1.0 + 1e-8), epsilon = 1e-16);
        let one = theta[0];
        adam_step(&mut theta, &[1.0], &mut s, 0.1, c).unwrap();
        assert!(theta[0] < one);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        let err = adam_step(&mut p, &[f64::NAN], &mut s, 0.1, AdamConsts::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn config_validation_names_field() {
        let bad = TrainConfig {
            lambda: -1.0,
            ..TrainConfig::default()
        };
        match bad.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "lambda"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn tiny_world(seed: u64) -> SyntheticWorld {
        SyntheticWorld::generate(&WorldConfig {
            n_items: 60,
            n_domains: 4,
            n_sequences: 6,
            n_test: 300,
            within: WithinDomain::Uniform,
            synth: crate::synth::SynthConfig {
                steps_per_period: 2,
                periods: 3,
                n_samples: 1200,
                seed,
                ..Default::default()
            },
        })
        .unwrap()
    }

    fn tiny_cfg(mode: FusionMode) -> TrainConfig {
        TrainConfig {
            lr0: 0.01,
            epochs: 3,
            fusion_mode: mode,
            dim: 6,
            hidden: vec![16, 8],
            batch_size: 64,
            ..TrainConfig::default()
        }
    }

    fn structure(world: &SyntheticWorld, mode: FusionMode) -> Structure {
        match mode {
            FusionMode::None => Structure::None,
            FusionMode::Oracle => Structure::Partition(oracle_partition(&world.domains)),
            _ => {
                let seqs = sample_histories(&world.train).unwrap();
                Structure::Graph(build_interest_graph(&seqs, 2, 8, 60).unwrap())
            }
        }
    }

    #[test]
    fn deterministic_training() {
        let world = tiny_world(3);
        for mode in [FusionMode::None, FusionMode::Att] {
            let cfg = tiny_cfg(mode);
            let run =
                || train(&world.train, &world.test, 60, structure(&world, mode), &cfg).unwrap();
            let (a, b) = (run(), run());
            assert_eq!(a.metrics, b.metrics);
            assert_eq!(a.model.embed, b.model.embed);
        }
    }

    #[test]
    fn baseline_loss_decreases() {
        let world = tiny_world(4);
        let out = train(
            &world.train,
            &world.test,
            60,
            Structure::None,
            &tiny_cfg(FusionMode::None),
        )
        .unwrap();
        assert!(out.metrics[2].train_loss < out.metrics[0].train_loss);
        assert!(out.metrics.iter().all(|m| m.res_scale_ratio.is_none()));
    }

    #[test]
    fn huge_lambda_shrinks_residual() {
        let world = tiny_world(5);
        let cfg = TrainConfig {
            lambda: 1e3,
            epochs: 1,
            ..tiny_cfg(FusionMode::Avg)
        };
        let init = Model::init(&cfg, 60, structure(&world, FusionMode::Avg)).unwrap();
        let out = train(
            &world.train,
            &[],
            60,
            structure(&world, FusionMode::Avg),
            &cfg,
        )
        .unwrap();
        let norm = |r: &Array2<f64>| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm(&out.model.embed.residual) < norm(&init.embed.residual));
    }

    #[test]
    fn frozen_residual_stays_zero() {
        let world = tiny_world(6);
        let cfg = TrainConfig {
            freeze_residual: true,
            epochs: 1,
            ..tiny_cfg(FusionMode::Gcn)
        };
        let out = train(
            &world.train,
            &world.test,
            60,
            structure(&world, FusionMode::Gcn),
            &cfg,
        )
        .unwrap();
        assert!(out.model.embed.residual.iter().all(|&v| v == 0.0));
        assert_eq!(out.metrics[0].res_scale_ratio, Some(0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let world = tiny_world(7);
        let dir = tempfile::tempdir().unwrap();
        for mode in [FusionMode::None, FusionMode::Oracle, FusionMode::Att] {
            let cfg = TrainConfig {
                epochs: 1,
                ..tiny_cfg(mode)
            };
            let out = train(&world.train, &[], 60, structure(&world, mode), &cfg).unwrap();
            let path = dir.path().join(format!("{}.json", mode.name()));
            out.model.save(&path).unwrap();
            let back = Model::load(&path).unwrap();
            assert_eq!(back.embed, out.model.embed);
            assert_eq!(back.mlp, out.model.mlp);
            assert_eq!(
                back.predict_logits(&world.test).unwrap(),
                out.model.predict_logits(&world.test).unwrap()
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_six_items() {
        let world = SyntheticWorld::generate(&WorldConfig {
            n_items: 6,
            n_domains: 2,
            n_sequences: 2,
            n_test: 0,
            within: WithinDomain::Uniform,
            synth: crate::synth::SynthConfig {
                steps_per_period: 2,
                periods: 2,
                n_samples: 8,
                seed: 2,
                ..Default::default()
            },
        })
        .unwrap();
        let cfg = TrainConfig {
            fusion_mode: FusionMode::None,
            lambda: 0.0,
            dim: 3,
            hidden: vec![5],
            ..TrainConfig::default()
        };
        let model = Model::init(&cfg, 6, Structure::None).unwrap();
        let checks = grad_check(&model, &world.train, 0.0, false, 0).unwrap();
        assert!(!checks.is_empty());
        for c in checks {
            assert!(c.rel_err < 1e-4, "{c:?}");
        }
    }
}

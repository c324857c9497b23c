//! Generalization-bound evaluators and an exact check of the island
//! averaging identity.
//!
//! Covering numbers like `(2R√d/r)^{d(Tp+1)}` overflow f64 for realistic
//! dimensions, so every bound is assembled in log space.

use ndarray::{Array1, Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{fuse_avg, CooccurrenceGraph};

/// A positive quantity held as its natural log, with the plain value when it
/// fits in an f64.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogValue {
    pub ln: f64,
    pub value: Option<f64>,
}

impl LogValue {
    fn from_ln(ln: f64) -> Self {
        let v = ln.exp();
        LogValue {
            ln,
            value: v.is_finite().then_some(v),
        }
    }
}

/// Which bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Bound without the interest delay assumption.
    Thm1,
    /// Bound under the interest delay model.
    Thm2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct BoundParams {
    /// MLP depth `D`.
    pub depth: u32,
    /// Embedding dimension `d`.
    pub dim: u32,
    /// Steps per period `T`.
    pub steps_per_period: u32,
    /// Periods `p`.
    pub periods: u32,
    /// Sample count `N`.
    pub n_samples: f64,
    /// Interest domains `N_z`.
    pub n_domains: f64,
    /// Hidden sequences `N_S`.
    pub n_sequences: f64,
    pub r_max: f64,
    /// Mean layer spectral norm `‖W‖₂`.
    pub w_norm: f64,
    /// Loss upper bound `l_M`.
    pub l_m: f64,
    pub delta: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        BoundParams {
            depth: 3,
            dim: 18,
            steps_per_period: 5,
            periods: 4,
            n_samples: 20_000.0,
            n_domains: 8.0,
            n_sequences: 24.0,
            r_max: 1.0,
            w_norm: 1.0,
            l_m: 1.0,
            delta: 0.05,
        }
    }
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let ints = [
            ("D", self.depth),
            ("d", self.dim),
            ("T", self.steps_per_period),
            ("p", self.periods),
        ];
        if let Some((name, _)) = ints.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(name, "must be at least 1"));
        }
        let reals = [
            ("N", self.n_samples),
            ("N_z", self.n_domains),
            ("N_S", self.n_sequences),
            ("R_max", self.r_max),
            ("W_norm", self.w_norm),
            ("l_M", self.l_m),
        ];
        if let Some((name, _)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config(name, "must be a positive number"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", "confidence must lie in (0, 1)"));
        }
        Ok(())
    }

    /// History length plus the target, `Tp + 1`.
    fn inputs(&self) -> f64 {
        f64::from(self.steps_per_period) * f64::from(self.periods) + 1.0
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn ln_cell_ratio(r_max: f64, dim: f64, r: f64) -> f64 {
    (2.0 * r_max * dim.sqrt() / r).ln()
}

/// Number of cells of diameter `r` covering a `d`-ball of radius `R`:
/// `(2R√d / r)^d`.
pub fn covering_count(radius: f64, dim: u32, r: f64) -> Result<LogValue> {
    if !(radius > 0.0 && r > 0.0) || dim == 0 {
        return Err(Error::invalid("covering_count needs R > 0, r > 0, d >= 1"));
    }
    let d = f64::from(dim);
    Ok(LogValue::from_ln(d * ln_cell_ratio(radius, d, r)))
}

/// Multinomial concentration radius `√((2K ln2 + 2 ln(1/δ)) / n)`.
pub fn bhc_bound(k: f64, n: f64, delta: f64) -> Result<f64> {
    if !(k >= 1.0 && n > 0.0 && delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(
            "bhc_bound needs K >= 1, n > 0, delta in (0, 1]",
        ));
    }
    Ok(((2.0 * k * std::f64::consts::LN_2 + 2.0 * (1.0 / delta).ln()) / n).sqrt())
}

/// `(ε, ln L)` robustness pair of a depth-`D` ReLU network over `n` inputs:
/// `ε = ‖W‖₂^D·r·√n`, `L = 2(2R√d/r)^{nd}`.
pub fn mlp_robustness(
    w_norm: f64,
    depth: u32,
    n_inputs: u32,
    r: f64,
    r_max: f64,
    dim: u32,
) -> Result<(f64, f64)> {
    if !(w_norm > 0.0 && r > 0.0 && r_max > 0.0) || depth == 0 || n_inputs == 0 || dim == 0 {
        return Err(Error::invalid("mlp_robustness needs positive arguments"));
    }
    let n = f64::from(n_inputs);
    let d = f64::from(dim);
    let eps = w_norm.powi(depth as i32) * r * n.sqrt();
    let ln_l = std::f64::consts::LN_2 + n * d * ln_cell_ratio(r_max, d, r);
    Ok((eps, ln_l))
}

/// Bound value at cell diameter `r`; `+∞` when it is not representable.
pub fn theorem_bound_at_r(params: &BoundParams, r: f64, variant: Variant) -> Result<f64> {
    if !r.is_finite() || r <= 0.0 {
        return Err(Error::invalid(format!(
            "cell diameter r must be positive, got {r}"
        )));
    }
    params.validate()?;
    Ok(bound_unchecked(params, r, variant))
}

fn bound_unchecked(p: &BoundParams, r: f64, variant: Variant) -> f64 {
    let d = f64::from(p.dim);
    let ln_ratio = ln_cell_ratio(p.r_max, d, r);
    let ln_w = f64::from(p.depth) * p.w_norm.ln();
    let (ln_first_coef, ln_count) = match variant {
        Variant::Thm2 => {
            let k = p.inputs();
            (
                0.5 * k.ln(),
                p.n_domains.ln() + p.n_sequences.ln() + d * k * ln_ratio,
            )
        }
        Variant::Thm1 => (0.5 * 2f64.ln(), 2.0 * p.n_domains.ln() + 2.0 * d * ln_ratio),
    };
    let first = (ln_first_coef + ln_w + r.ln()).exp();
    let ln_a = 4f64.ln() + ln_count + std::f64::consts::LN_2.ln();
    let ln_b = (2.0 * (1.0 / p.delta).ln()).ln();
    let ln_second = p.l_m.ln() + 0.5 * (log_sum_exp(ln_a, ln_b) - p.n_samples.ln());
    let total = first + ln_second.exp();
    if total.is_nan() {
        f64::INFINITY
    } else {
        total
    }
}

/// Log grid used by [`theorem_bound_inf`].
pub const INF_GRID_POINTS: usize = 2000;
pub const INF_GRID_RANGE: (f64, f64) = (1e-6, 1e6);
const REFINE_ITERS: usize = 200;

/// Minimizes the bound over `r`: log-spaced grid, then ternary refinement
/// in `ln r` around the best grid point. Returns `(r*, bound)`.
pub fn theorem_bound_inf(params: &BoundParams, variant: Variant) -> Result<(f64, f64)> {
    params.validate()?;
    let (lo, hi) = (INF_GRID_RANGE.0.ln(), INF_GRID_RANGE.1.ln());
    let step = (hi - lo) / (INF_GRID_POINTS - 1) as f64;
    let at = |ln_r: f64| bound_unchecked(params, ln_r.exp(), variant);
    let mut best = (0usize, f64::INFINITY);
    for k in 0..INF_GRID_POINTS {
        let v = at(lo + step * k as f64);
        if v < best.1 {
            best = (k, v);
        }
    }
    let center = lo + step * best.0 as f64;
    let (mut a, mut b) = ((center - step).max(lo), (center + step).min(hi));
    for _ in 0..REFINE_ITERS {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if at(m1) <= at(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let refined = 0.5 * (a + b);
    let v = at(refined);
    if v <= best.1 {
        Ok((refined.exp(), v))
    } else {
        Ok((center.exp(), best.1))
    }
}

/// Largest distance from the centroid to any row of `points`.
pub fn envelope_radius(points: ArrayView2<f64>) -> Result<f64> {
    if points.nrows() == 0 {
        return Err(Error::invalid("envelope radius of an empty point set"));
    }
    let c = centroid(points);
    Ok(points
        .rows()
        .into_iter()
        .map(|x| distance(x.iter(), c.iter()))
        .fold(0.0, f64::max))
}

fn centroid(points: ArrayView2<f64>) -> Array1<f64> {
    points.sum_axis(ndarray::Axis(0)) / points.nrows() as f64
}

fn distance<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Before/after statistics for one island.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IslandStats {
    pub members: Vec<usize>,
    pub size: usize,
    /// Mean distance to the island centre before averaging.
    pub internal_before: f64,
    pub internal_after: f64,
    /// `internal_after / internal_before`, absent when the island is a point.
    pub ratio: Option<f64>,
    /// Relative deviation of `internal_after·(m−1)` from `internal_before`.
    pub deviation: f64,
}

/// Centre distance between two islands before and after averaging.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairStats {
    pub first: usize,
    pub second: usize,
    pub center_distance_before: f64,
    pub center_distance_after: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IslandReport {
    pub islands: Vec<IslandStats>,
    pub pairs: Vec<PairStats>,
    pub max_deviation: f64,
}

/// Splits `graph` into its islands, failing unless every connected
/// component is a complete graph on at least two items.
pub fn islands(graph: &CooccurrenceGraph) -> Result<Vec<Vec<usize>>> {
    let n = graph.n_items();
    let mut comp = vec![usize::MAX; n];
    let mut out: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut k = 0;
        while k < members.len() {
            let i = members[k];
            for &(j, _) in graph.row(i) {
                let j = j as usize;
                if comp[j] == usize::MAX {
                    comp[j] = id;
                    members.push(j);
                }
            }
            k += 1;
        }
        members.sort_unstable();
        out.push(members);
    }
    for members in &out {
        if members.len() < 2 {
            return Err(Error::Structure(format!(
                "item {} has no neighbours; islands need at least two items",
                members[0]
            )));
        }
        for &i in members {
            for &j in members {
                if i != j && graph.weight(i, j) <= 0.0 {
                    return Err(Error::Structure(format!(
                        "island containing {i} and {j} is not complete: edge ({i}, {j}) is missing"
                    )));
                }
            }
        }
    }
    Ok(out)
}

/// Applies `X' = g_AVG(Z)·X` and measures how island spreads and centre
/// distances change. Deviations are relative to the predicted value, with a
/// floor of `1e-12·(1 + max|X|)` so coincident points compare absolutely.
pub fn prop1_verify(graph: &CooccurrenceGraph, x: &Array2<f64>) -> Result<IslandReport> {
    if x.nrows() != graph.n_items() {
        return Err(Error::invalid(format!(
            "embedding has {} rows, graph has {} items",
            x.nrows(),
            graph.n_items()
        )));
    }
    let parts = islands(graph)?;
    let x_after = fuse_avg(graph).coeffs().matmul(x);
    let scale = 1e-12 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(scale);

    let spread = |m: &Array2<f64>, members: &[usize]| {
        let pts = m.select(ndarray::Axis(0), members);
        let c = centroid(pts.view());
        let s = pts
            .rows()
            .into_iter()
            .map(|p| distance(p.iter(), c.iter()))
            .sum::<f64>()
            / members.len() as f64;
        (c, s)
    };

    let mut islands_out = Vec::with_capacity(parts.len());
    let mut centers = Vec::with_capacity(parts.len());
    let mut max_dev = 0.0f64;
    for members in &parts {
        let (c0, before) = spread(x, members);
        let (c1, after) = spread(&x_after, members);
        let m = members.len() as f64;
        let deviation = rel(after * (m - 1.0), before);
        max_dev = max_dev.max(deviation);
        islands_out.push(IslandStats {
            members: members.clone(),
            size: members.len(),
            internal_before: before,
            internal_after: after,
            ratio: (before > 0.0).then(|| after / before),
            deviation,
        });
        centers.push((c0, c1));
    }

    let mut pairs = Vec::new();
    for a in 0..parts.len() {
        for b in a + 1..parts.len() {
            let before = distance(centers[a].0.iter(), centers[b].0.iter());
            let after = distance(centers[a].1.iter(), centers[b].1.iter());
            let deviation = rel(after, before);
            max_dev = max_dev.max(deviation);
            pairs.push(PairStats {
                first: parts[a][0],
                second: parts[b][0],
                center_distance_before: before,
                center_distance_after: after,
                deviation,
            });
        }
    }
    Ok(IslandReport {
        islands: islands_out,
        pairs,
        max_deviation: max_dev,
    })
}

/// A graph made of complete islands with the given sizes, items numbered
/// consecutively.
pub fn island_graph(sizes: &[usize]) -> Result<CooccurrenceGraph> {
    let n: usize = sizes.iter().sum();
    let mut edges = Vec::new();
    let mut start = 0;
    for &m in sizes {
        for i in start..start + m {
            for j in start..start + m {
                if i != j {
                    edges.push((i, j, 1.0));
                }
            }
        }
        start += m;
    }
    CooccurrenceGraph::from_edges(n, edges)
}

/// One row of a bound sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub r_star: f64,
    pub bound: f64,
}

/// Sweeps one named parameter over `values`, reporting the infimum each time.
pub fn bound_sweep(
    base: &BoundParams,
    param: &str,
    values: &[f64],
    variant: Variant,
) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&v| {
            let mut p = *base;
            set_param(&mut p, param, v)?;
            let (r_star, bound) = theorem_bound_inf(&p, variant)?;
            Ok(SweepRow {
                param: param.to_string(),
                value: v,
                r_star,
                bound,
            })
        })
        .collect()
}

fn set_param(p: &mut BoundParams, name: &str, v: f64) -> Result<()> {
    let as_int = |v: f64| -> Result<u32> {
        if v.fract() == 0.0 && v >= 1.0 && v <= f64::from(u32::MAX) {
            Ok(v as u32)
        } else {
            Err(Error::config(
                name,
                format!("needs a positive integer, got {v}"),
            ))
        }
    };
    match name {
        "D" => p.depth = as_int(v)?,
        "d" => p.dim = as_int(v)?,
        "T" => p.steps_per_period = as_int(v)?,
        "p" => p.periods = as_int(v)?,
        "N" => p.n_samples = v,
        "N_z" => p.n_domains = v,
        "N_S" => p.n_sequences = v,
        "R_max" => p.r_max = v,
        "W_norm" => p.w_norm = v,
        "l_M" => p.l_m = v,
        "delta" => p.delta = v,
        other => {
            return Err(Error::config(
                "param",
                format!("unknown bound parameter `{other}`"),
            ))
        }
    }
    Ok(())
}

pub fn write_sweep_csv(path: &std::path::Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["param", "value", "r_star", "bound"])?;
    for r in rows {
        w.write_record([
            r.param.clone(),
            r.value.to_string(),
            r.r_star.to_string(),
            r.bound.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

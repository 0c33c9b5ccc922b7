//! Critical-connection search over a hypergraph.
//!
//! The mask is parameterized as `W = I ∘ σ(W′)`, so `0 ≤ W ≤ I` holds for
//! every `W′` and the optimizer can run plain gradient descent on `W′`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::hypergraph::Hypergraph;
use crate::matrix::Matrix;
use crate::seed;

/// Floor applied to both arguments of the logarithm in the discrete
/// divergence.
pub const KL_EPS: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-9;

/// Shape of a model's output vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Consecutive probability distributions of the given sizes.
    Discrete { segments: Vec<usize> },
    Continuous,
}

/// Which argument leads the discrete divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `Σ Y_W ln(Y_W / Y_I)`.
    #[default]
    MaskedFirst,
    /// `Σ Y_I ln(Y_I / Y_W)`.
    ReferenceFirst,
}

/// Evaluator of a fixed decision model under a connection mask.
pub trait MaskableModel: Sync {
    fn output_kind(&self) -> OutputKind;

    /// Output for mask `w` (same shape as the incidence matrix).
    fn evaluate(&self, hypergraph: &Hypergraph, w: &Matrix) -> Result<Vec<f64>>;

    /// Vector-Jacobian product `(∂Y/∂W)ᵀ g`, if the model can provide it.
    fn vjp(&self, _hypergraph: &Hypergraph, _w: &Matrix, _g: &[f64]) -> Option<Result<Matrix>> {
        None
    }

    /// Whether concurrent `evaluate` calls are safe and worthwhile.
    fn reentrant(&self) -> bool {
        true
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn gate(incidence: &Matrix, w_prime: &Matrix) -> Result<Matrix> {
    if !incidence.same_shape(w_prime) {
        return domain(format!("mask parameters are {:?}, incidence is {:?}", w_prime.shape(), incidence.shape()));
    }
    let data = incidence.as_slice().iter().zip(w_prime.as_slice()).map(|(&i, &x)| i * sigmoid(x)).collect();
    Matrix::from_vec(incidence.rows(), incidence.cols(), data)
}

fn check_segments(y: &[f64], segments: &[usize], what: &str) -> Result<()> {
    if segments.iter().sum::<usize>() != y.len() {
        return domain(format!("{what} has {} entries but segments cover {}", y.len(), segments.iter().sum::<usize>()));
    }
    let mut at = 0;
    for (k, &n) in segments.iter().enumerate() {
        let row = &y[at..at + n];
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| p < 0.0) {
            return domain(format!("{what} distribution {k} is not normalized (sums to {s})"));
        }
        at += n;
    }
    Ok(())
}

fn kl_term(p: f64, q: f64) -> f64 {
    p * (p.max(KL_EPS) / q.max(KL_EPS)).ln()
}

/// `D(Y_W, Y_I)`: KL divergence for discrete outputs, summed squared error
/// for continuous ones.
pub fn divergence(y_w: &[f64], y_i: &[f64], kind: &OutputKind, direction: KlDirection) -> Result<f64> {
    if y_w.len() != y_i.len() {
        return domain(format!("outputs have lengths {} and {}", y_w.len(), y_i.len()));
    }
    match kind {
        OutputKind::Continuous => Ok(y_w.iter().zip(y_i).map(|(a, b)| (a - b).powi(2)).sum()),
        OutputKind::Discrete { segments } => {
            check_segments(y_w, segments, "masked output")?;
            check_segments(y_i, segments, "reference output")?;
            Ok(y_w
                .iter()
                .zip(y_i)
                .map(|(&w, &i)| match direction {
                    KlDirection::MaskedFirst => kl_term(w, i),
                    KlDirection::ReferenceFirst => kl_term(i, w),
                })
                .sum())
        }
    }
}

/// `∂D/∂Y_W`, consistent with the ε-floored divergence.
fn divergence_grad(y_w: &[f64], y_i: &[f64], kind: &OutputKind, direction: KlDirection) -> Vec<f64> {
    match kind {
        OutputKind::Continuous => y_w.iter().zip(y_i).map(|(a, b)| 2.0 * (a - b)).collect(),
        OutputKind::Discrete { .. } => y_w
            .iter()
            .zip(y_i)
            .map(|(&w, &i)| match direction {
                KlDirection::MaskedFirst if w > KL_EPS => (w / i.max(KL_EPS)).ln() + 1.0,
                KlDirection::MaskedFirst => (KL_EPS / i.max(KL_EPS)).ln(),
                KlDirection::ReferenceFirst if w > KL_EPS => -i / w,
                KlDirection::ReferenceFirst => 0.0,
            })
            .collect(),
    }
}

/// `‖W‖ = Σ |W_ev|`.
pub fn norm(w: &Matrix) -> f64 {
    w.as_slice().iter().map(|x| x.abs()).sum()
}

fn binary_entropy(p: f64) -> f64 {
    let h = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    h(p) + h(1.0 - p)
}

/// Sum of binary entropies (nats) over the entries with `I = 1`.
pub fn entropy(w: &Matrix, incidence: &Matrix) -> f64 {
    w.as_slice()
        .iter()
        .zip(incidence.as_slice())
        .filter(|(_, &i)| i == 1.0)
        .map(|(&p, _)| binary_entropy(p))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub divergence: f64,
    pub norm: f64,
    pub entropy: f64,
    /// `divergence + λ1 norm + λ2 entropy`.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskOptions {
    pub lambda1: f64,
    pub lambda2: f64,
    pub steps: usize,
    pub learning_rate: f64,
    /// Starting mask value on every connection, in (0, 1).
    pub init_mask: f64,
    /// Half-width of the uniform draw added to the initial `W′`.
    pub init_jitter: f64,
    pub seed: u64,
    pub fd_step: f64,
    pub kl_direction: KlDirection,
    /// Use finite differences even when the model has an analytic gradient.
    pub force_finite_differences: bool,
}

impl Default for MaskOptions {
    fn default() -> Self {
        Self {
            lambda1: 0.25,
            lambda2: 1.0,
            steps: 2000,
            learning_rate: 0.05,
            init_mask: 0.5,
            init_jitter: 0.0,
            seed: 0,
            fd_step: 1e-4,
            kl_direction: KlDirection::MaskedFirst,
            force_finite_differences: false,
        }
    }
}

impl MaskOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| Err(Error::Config { path: path.into(), message: message.into() });
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return bad("lambda1", "must be a non-negative number");
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return bad("lambda2", "must be a non-negative number");
        }
        if self.steps == 0 {
            return bad("steps", "must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.init_mask > 0.0 && self.init_mask < 1.0) {
            return bad("init_mask", "must lie strictly between 0 and 1");
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return bad("init_jitter", "must be non-negative");
        }
        if !(self.fd_step > 0.0) {
            return bad("fd_step", "must be positive");
        }
        Ok(())
    }
}

/// Mask objective bound to a model, a hypergraph and the cached reference
/// output `Y_I`.
pub struct Objective<'a, M: MaskableModel + ?Sized> {
    model: &'a M,
    hypergraph: &'a Hypergraph,
    kind: OutputKind,
    y_ref: Vec<f64>,
    lambda1: f64,
    lambda2: f64,
    direction: KlDirection,
}

impl<'a, M: MaskableModel + ?Sized> Objective<'a, M> {
    pub fn new(model: &'a M, hypergraph: &'a Hypergraph, lambda1: f64, lambda2: f64, direction: KlDirection) -> Result<Self> {
        let y_ref = model.evaluate(hypergraph, hypergraph.incidence())?;
        Ok(Self { model, hypergraph, kind: model.output_kind(), y_ref, lambda1, lambda2, direction })
    }

    pub fn reference_output(&self) -> &[f64] {
        &self.y_ref
    }

    pub fn loss(&self, w: &Matrix) -> Result<LossBreakdown> {
        let y = self.model.evaluate(self.hypergraph, w)?;
        let divergence = divergence(&y, &self.y_ref, &self.kind, self.direction)?;
        let norm = norm(w);
        let entropy = entropy(w, self.hypergraph.incidence());
        let total = divergence + self.lambda1 * norm + self.lambda2 * entropy;
        for (term, v) in [("divergence", divergence), ("norm", norm), ("entropy", entropy)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { term });
            }
        }
        Ok(LossBreakdown { divergence, norm, entropy, total })
    }

    pub fn loss_at(&self, w_prime: &Matrix) -> Result<LossBreakdown> {
        self.loss(&gate(self.hypergraph.incidence(), w_prime)?)
    }

    /// Analytic `∂ℓ/∂W′`, or `None` when the model has no Jacobian.
    pub fn analytic_gradient(&self, w_prime: &Matrix) -> Option<Result<Matrix>> {
        let inc = self.hypergraph.incidence();
        let w = match gate(inc, w_prime) {
            Ok(w) => w,
            Err(e) => return Some(Err(e)),
        };
        let y = match self.model.evaluate(self.hypergraph, &w) {
            Ok(y) => y,
            Err(e) => return Some(Err(e)),
        };
        let g = divergence_grad(&y, &self.y_ref, &self.kind, self.direction);
        let dw = match self.model.vjp(self.hypergraph, &w, &g)? {
            Ok(m) => m,
            Err(e) => return Some(Err(e)),
        };
        let mut out = Matrix::zeros(inc.rows(), inc.cols());
        for k in 0..inc.as_slice().len() {
            if inc.as_slice()[k] != 1.0 {
                continue;
            }
            let x = w_prime.as_slice()[k];
            let s = sigmoid(x);
            let ds = s * (1.0 - s);
            // ∂H/∂W = ln((1-W)/W) = -W′ on connections
            let dl_dw = dw.as_slice()[k] + self.lambda1;
            out.as_mut_slice()[k] = dl_dw * ds - self.lambda2 * x * ds;
        }
        Some(Ok(out))
    }

    /// Central differences of the total loss in every connection of `W′`.
    pub fn numeric_gradient(&self, w_prime: &Matrix, h: f64) -> Result<Matrix> {
        let inc = self.hypergraph.incidence();
        let idx: Vec<usize> = (0..inc.as_slice().len()).filter(|&k| inc.as_slice()[k] == 1.0).collect();
        let probe = |k: usize| -> Result<f64> {
            let mut plus = w_prime.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = w_prime.clone();
            minus.as_mut_slice()[k] -= h;
            Ok((self.loss_at(&plus)?.total - self.loss_at(&minus)?.total) / (2.0 * h))
        };
        let grads: Vec<f64> = if self.model.reentrant() {
            idx.par_iter().map(|&k| probe(k)).collect::<Result<_>>()?
        } else {
            idx.iter().map(|&k| probe(k)).collect::<Result<_>>()?
        };
        let mut out = Matrix::zeros(inc.rows(), inc.cols());
        for (k, g) in idx.into_iter().zip(grads) {
            out.as_mut_slice()[k] = g;
        }
        Ok(out)
    }
}

/// One optimizer step's record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: LossBreakdown,
    /// Lowest total seen up to and including this step.
    pub best_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub w_prime: Matrix,
    pub w: Matrix,
    pub loss: LossBreakdown,
    /// Step 0 is the initial mask.
    pub trace: Vec<TraceRow>,
}

impl Mask {
    /// `hyperedge_id,vertex_id,mask_value` rows for every connection.
    pub fn to_csv(&self, incidence: &Matrix) -> String {
        let mut out = String::from("hyperedge_id,vertex_id,mask_value\n");
        for e in 0..incidence.rows() {
            for v in 0..incidence.cols() {
                if incidence.get(e, v) == 1.0 {
                    out.push_str(&format!("{e},{v},{}\n", self.w.get(e, v)));
                }
            }
        }
        out
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,divergence,norm,entropy,total,best_total\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.loss.divergence, r.loss.norm, r.loss.entropy, r.loss.total, r.best_total
            ));
        }
        out
    }
}

/// Gradient descent on `W′`. Every iterate is gated, so the returned mask and
/// all intermediate ones satisfy `0 ≤ W ≤ I`.
pub fn optimize<M: MaskableModel + ?Sized>(model: &M, hypergraph: &Hypergraph, opts: &MaskOptions) -> Result<Mask> {
    optimize_with(model, hypergraph, opts, |_, _| {})
}

/// [`optimize`] with a callback observing each gated iterate.
pub fn optimize_with<M: MaskableModel + ?Sized>(
    model: &M,
    hypergraph: &Hypergraph,
    opts: &MaskOptions,
    mut observe: impl FnMut(usize, &Matrix),
) -> Result<Mask> {
    opts.validate()?;
    let objective = Objective::new(model, hypergraph, opts.lambda1, opts.lambda2, opts.kl_direction)?;
    let inc = hypergraph.incidence();
    let mut w_prime = Matrix::zeros(inc.rows(), inc.cols());
    let logit = (opts.init_mask / (1.0 - opts.init_mask)).ln();
    let mut rng = seed::rng(opts.seed, 0x3a5c);
    for k in 0..w_prime.as_slice().len() {
        if inc.as_slice()[k] == 1.0 {
            let jitter = if opts.init_jitter > 0.0 { rng.gen_range(-opts.init_jitter..=opts.init_jitter) } else { 0.0 };
            w_prime.as_mut_slice()[k] = logit + jitter;
        }
    }
    let use_fd = opts.force_finite_differences || objective.analytic_gradient(&w_prime).is_none();
    let mut trace = Vec::with_capacity(opts.steps + 1);
    let mut best = f64::INFINITY;
    for step in 0..=opts.steps {
        let w = gate(inc, &w_prime)?;
        observe(step, &w);
        let loss = objective.loss(&w)?;
        best = best.min(loss.total);
        trace.push(TraceRow { step, loss, best_total: best });
        if step == opts.steps {
            return Ok(Mask { w_prime, w, loss, trace });
        }
        let grad = if use_fd {
            objective.numeric_gradient(&w_prime, opts.fd_step)?
        } else {
            objective.analytic_gradient(&w_prime).expect("checked above")?
        };
        for (x, g) in w_prime.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *x -= opts.learning_rate * g;
        }
    }
    unreachable!("loop returns on the last step")
}

/// Relative disagreement `‖a − n‖ / max(‖a‖, ‖n‖)` between analytic and
/// finite-difference gradients at `w_prime`.
pub fn gradient_check<M: MaskableModel + ?Sized>(
    model: &M,
    hypergraph: &Hypergraph,
    w_prime: &Matrix,
    lambda1: f64,
    lambda2: f64,
    h: f64,
) -> Result<f64> {
    let objective = Objective::new(model, hypergraph, lambda1, lambda2, KlDirection::MaskedFirst)?;
    let analytic = objective
        .analytic_gradient(w_prime)
        .ok_or_else(|| Error::Domain("model has no analytic gradient".into()))??;
    let numeric = objective.numeric_gradient(w_prime, h)?;
    let l2 = |m: &Matrix| m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic.as_slice().iter().zip(numeric.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = l2(&analytic).max(l2(&numeric));
    Ok(if scale == 0.0 { 0.0 } else { diff / scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedConnection {
    pub hyperedge: usize,
    pub vertex: usize,
    pub value: f64,
}

/// Connections by descending mask value; ties by hyperedge then vertex id.
pub fn rank_connections(w: &Matrix, incidence: &Matrix, top_k: usize) -> Vec<RankedConnection> {
    let mut all: Vec<RankedConnection> = (0..incidence.rows())
        .flat_map(|e| (0..incidence.cols()).map(move |v| (e, v)))
        .filter(|&(e, v)| incidence.get(e, v) == 1.0)
        .map(|(e, v)| RankedConnection { hyperedge: e, vertex: v, value: w.get(e, v) })
        .collect();
    all.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.hyperedge.cmp(&b.hyperedge)).then(a.vertex.cmp(&b.vertex)));
    all.truncate(top_k);
    all
}

/// Continuous toy model `Y = A·vec(W) + c ∘ vec(W)²` with a closed-form
/// Jacobian, for exercising the optimizer and the gradient check.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    pub a: Matrix,
    pub c: Vec<f64>,
}

impl QuadraticModel {
    /// Seeded coefficients for an incidence of `n_entries` cells and `n_out`
    /// outputs.
    pub fn random(n_entries: usize, n_out: usize, seed_value: u64) -> Self {
        let mut rng = seed::rng(seed_value, 0x9a4d);
        let a = (0..n_out * n_entries).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = (0..n_out.min(n_entries)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { a: Matrix::from_vec(n_out, n_entries, a).expect("sized"), c }
    }
}

impl MaskableModel for QuadraticModel {
    fn output_kind(&self) -> OutputKind {
        OutputKind::Continuous
    }

    fn evaluate(&self, _h: &Hypergraph, w: &Matrix) -> Result<Vec<f64>> {
        let x = w.as_slice();
        if x.len() != self.a.cols() {
            return domain("mask size does not match the model");
        }
        Ok((0..self.a.rows())
            .map(|r| {
                let lin: f64 = self.a.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
                lin + self.c.get(r).map_or(0.0, |c| c * x[r] * x[r])
            })
            .collect())
    }

    fn vjp(&self, _h: &Hypergraph, w: &Matrix, g: &[f64]) -> Option<Result<Matrix>> {
        let x = w.as_slice();
        let mut out = vec![0.0; x.len()];
        for (r, &gr) in g.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.a.row(r)) {
                *o += gr * a;
            }
            if let Some(c) = self.c.get(r) {
                out[r] += gr * 2.0 * c * x[r];
            }
        }
        Some(Matrix::from_vec(w.rows(), w.cols(), out))
    }
}

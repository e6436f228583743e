//! Contrast recovery: regularized Born inversion of complex scattered fields
//! and phaseless (amplitude-only) optimization producing pre-images.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::greens::{OperatorSet, ToneOperators};
use crate::linalg::{ComplexMatrix, LuFactor, C64};
use crate::measure::AmplitudeData;

const BCE_EPS: f64 = 1e-12;
const ADAM_EPS: f64 = 1e-8;
const DIVERGENCE_FACTOR: f64 = 10.0;
/// Rising iterations above the divergence threshold tolerated before aborting.
const DIVERGENCE_PATIENCE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Lbfgs,
}

/// Adam step-size schedule over `max_iters` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// `step_size · (1 + cos(π (it − 1) / max_iters)) / 2`.
    #[default]
    Cosine,
}

impl LrSchedule {
    fn rate(self, step_size: f64, it: usize, max_iters: usize) -> f64 {
        match self {
            LrSchedule::Constant => step_size,
            LrSchedule::Cosine => step_size * 0.5 * (1.0 + (std::f64::consts::PI * (it - 1) as f64 / max_iters as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    /// Weight of the position regularizer (phaseless) or ridge term (Born).
    pub alpha: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub schedule: LrSchedule,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    /// Stop once the relative objective decrease over one step falls below
    /// this value; 0 runs every iteration.
    pub tolerance: f64,
    /// L-BFGS history length.
    pub memory: usize,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            max_iters: 500,
            step_size: 1e-2,
            schedule: LrSchedule::Cosine,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            tolerance: 0.0,
            memory: 10,
            seed: 0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig("alpha must be finite and non-negative".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig("step_size must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.tolerance >= 0.0) || self.memory == 0 {
            return Err(Error::InvalidConfig("tolerance must be non-negative and memory positive".into()));
        }
        Ok(())
    }

    /// Short SHA-256 digest of the serialized configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(json)[..8])
    }
}

/// Stacked Born operator: row `p·Q + q` is `G_O[q, :] ∘ E_i^p`.
fn born_operator(tone: &ToneOperators) -> ComplexMatrix {
    let (p, q, cells) = (tone.n_tx(), tone.n_rx(), tone.go.cols());
    let mut b = ComplexMatrix::zeros(p * q, cells);
    for tx in 0..p {
        let ei = tone.e_i_cells.row(tx);
        for rx in 0..q {
            let g = tone.go.row(rx);
            for ((v, a), e) in b.row_mut(tx * q + rx).iter_mut().zip(g).zip(ei) {
                *v = a * e;
            }
        }
    }
    b
}

/// `min_chi Σ_p ‖G_O diag(E_i^p) chi − E_s^p‖² + alpha ‖chi‖²` for one tone.
///
/// `e_s` is `P × Q`. Overdetermined problems use the normal equations;
/// underdetermined ones with `alpha > 0` use the equivalent dual form
/// `chi = Bᴴ (B Bᴴ + alpha I)⁻¹ e`.
pub fn born_invert(e_s: &ComplexMatrix, tone: &ToneOperators, alpha: f64) -> Result<Vec<C64>> {
    if e_s.rows() != tone.n_tx() || e_s.cols() != tone.n_rx() {
        return Err(Error::Shape(format!(
            "scattered data is {}×{}, operators expect {}×{}",
            e_s.rows(),
            e_s.cols(),
            tone.n_tx(),
            tone.n_rx()
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig("alpha must be finite and non-negative".into()));
    }
    let b = born_operator(tone);
    let (rows, cols) = (b.rows(), b.cols());
    let rhs = e_s.as_slice();
    let singular = |e: Error| match e {
        Error::Singular { .. } if alpha == 0.0 => Error::RankDeficient,
        other => other,
    };
    if rows >= cols {
        let mut normal = ComplexMatrix::zeros(cols, cols);
        for r in 0..rows {
            let row = b.row(r);
            for i in 0..cols {
                let ci = row[i].conj();
                let out = normal.row_mut(i);
                for (o, v) in out.iter_mut().zip(row) {
                    *o += ci * v;
                }
            }
        }
        for i in 0..cols {
            normal[(i, i)] += alpha;
        }
        let lu = LuFactor::new(normal).map_err(singular)?;
        Ok(lu.solve(&b.matvec_adjoint(rhs)))
    } else {
        if alpha == 0.0 {
            return Err(Error::RankDeficient);
        }
        let mut gram = ComplexMatrix::zeros(rows, rows);
        for i in 0..rows {
            for j in 0..=i {
                let v: C64 = b.row(i).iter().zip(b.row(j)).map(|(a, c)| a * c.conj()).sum();
                gram[(i, j)] = v;
                gram[(j, i)] = v.conj();
            }
            gram[(i, i)] += alpha;
        }
        let lu = LuFactor::new(gram)?;
        Ok(b.matvec_adjoint(&lu.solve(rhs)))
    }
}

/// Value of the Born least-squares objective (used to check optimality).
pub fn born_objective(chi: &[C64], e_s: &ComplexMatrix, tone: &ToneOperators, alpha: f64) -> f64 {
    let pred = born_operator(tone).matvec(chi);
    let misfit: f64 = pred.iter().zip(e_s.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum();
    misfit + alpha * chi.iter().map(|c| c.norm_sqr()).sum::<f64>()
}

fn bce_normalized(chi: &[C64]) -> (Vec<f64>, f64) {
    let mags: Vec<f64> = chi.iter().map(|c| c.norm()).collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo + BCE_EPS;
    (mags.iter().map(|m| (m - lo) / span).collect(), span)
}

/// Binary cross entropy between min-max normalized `|chi|` and the indicator
/// `labels`, averaged over cells. Normalized values are clamped to
/// `[1e-12, 1 − 1e-12]`.
pub fn bce_regularizer(chi: &[C64], labels: &[f64]) -> f64 {
    let (f, _) = bce_normalized(chi);
    let total: f64 = f
        .iter()
        .zip(labels)
        .map(|(&x, &i)| {
            let x = x.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(i * x.ln() + (1.0 - i) * (1.0 - x).ln())
        })
        .sum();
    total / chi.len() as f64
}

/// Gradient of [`bce_regularizer`] with the min-max scaling held fixed;
/// layout `[∂/∂Re; ∂/∂Im]`.
fn bce_gradient(chi: &[C64], labels: &[f64], grad: &mut [f64]) {
    let n = chi.len();
    let (f, span) = bce_normalized(chi);
    for k in 0..n {
        let x = f[k];
        if !(BCE_EPS..=1.0 - BCE_EPS).contains(&x) {
            continue;
        }
        let mag = chi[k].norm();
        if mag == 0.0 {
            continue;
        }
        let i = labels[k];
        let d_mag = -(i / x - (1.0 - i) / (1.0 - x)) / (span * n as f64);
        grad[k] += d_mag * chi[k].re / mag;
        grad[n + k] += d_mag * chi[k].im / mag;
    }
}

/// Amplitude-only data-fit problem for a single tone.
pub struct PhaselessProblem<'a> {
    tone: &'a ToneOperators,
    /// Per transmitter: measured squared amplitudes divided by their mean.
    m_hat: Vec<Vec<f64>>,
    labels: Option<&'a [f64]>,
    alpha: f64,
}

impl<'a> PhaselessProblem<'a> {
    /// `measured_sq` is `P × Q` row-major squared amplitudes.
    pub fn new(tone: &'a ToneOperators, measured_sq: &[f64], alpha: f64, labels: Option<&'a [f64]>) -> Result<Self> {
        let (p, q) = (tone.n_tx(), tone.n_rx());
        if measured_sq.len() != p * q {
            return Err(Error::Shape(format!("expected {} squared amplitudes, got {}", p * q, measured_sq.len())));
        }
        if let Some(l) = labels {
            if l.len() != tone.go.cols() {
                return Err(Error::Shape("indicator length differs from cell count".into()));
            }
        }
        let mut m_hat = Vec::with_capacity(p);
        for (tx, row) in measured_sq.chunks(q).enumerate() {
            if row.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig("squared amplitudes must be finite and non-negative".into()));
            }
            let mean = row.iter().sum::<f64>() / q as f64;
            if mean <= 0.0 {
                return Err(Error::ZeroAmplitude { tx, rx: 0, tone: 0 });
            }
            m_hat.push(row.iter().map(|v| v / mean).collect());
        }
        Ok(Self { tone, m_hat, labels, alpha })
    }

    pub fn n_cells(&self) -> usize {
        self.tone.go.cols()
    }

    fn model_field(&self, chi: &[C64], tx: usize) -> Vec<C64> {
        let ei = self.tone.e_i_cells.row(tx);
        let j: Vec<C64> = chi.iter().zip(ei).map(|(c, e)| c * e).collect();
        let mut z = self.tone.go.matvec(&j);
        for (v, e) in z.iter_mut().zip(self.tone.e_i_rx.row(tx)) {
            *v += e;
        }
        z
    }

    fn data_term(&self, chi: &[C64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        let n = chi.len();
        let q = self.tone.n_rx() as f64;
        let mut total = 0.0;
        for (tx, m_hat) in self.m_hat.iter().enumerate() {
            let z = self.model_field(chi, tx);
            let a: Vec<f64> = z.iter().map(|v| v.norm_sqr()).collect();
            let s = a.iter().sum::<f64>() / q;
            if !(s > 0.0) {
                return Err(Error::ZeroModelPower { tx });
            }
            let r: Vec<f64> = a.iter().zip(m_hat).map(|(ak, mk)| ak / s - mk).collect();
            total += r.iter().map(|v| v * v).sum::<f64>();
            if let Some(g) = grad.as_deref_mut() {
                let coupling = r.iter().zip(&a).map(|(rk, ak)| rk * ak).sum::<f64>() / (q * s * s);
                let wz: Vec<C64> = r.iter().zip(&z).map(|(rk, zk)| zk * (2.0 * (rk / s - coupling))).collect();
                let back = self.tone.go.matvec_adjoint(&wz);
                let ei = self.tone.e_i_cells.row(tx);
                for k in 0..n {
                    let v = back[k] * ei[k].conj();
                    g[k] += 2.0 * v.re;
                    g[n + k] += 2.0 * v.im;
                }
            }
        }
        Ok(total)
    }

    pub fn objective(&self, chi: &[C64]) -> Result<f64> {
        let mut f = self.data_term(chi, None)?;
        if let (Some(l), true) = (self.labels, self.alpha > 0.0) {
            f += self.alpha * bce_regularizer(chi, l);
        }
        Ok(f)
    }

    /// Objective and gradient `[∂/∂Re chi; ∂/∂Im chi]`.
    pub fn objective_and_gradient(&self, chi: &[C64]) -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; 2 * chi.len()];
        let mut f = self.data_term(chi, Some(&mut g))?;
        if let (Some(l), true) = (self.labels, self.alpha > 0.0) {
            f += self.alpha * bce_regularizer(chi, l);
            let mut gb = vec![0.0; g.len()];
            bce_gradient(chi, l, &mut gb);
            for (a, b) in g.iter_mut().zip(gb) {
                *a += self.alpha * b;
            }
        }
        Ok((f, g))
    }
}

/// Phaseless objective: `Σ_p ‖A^p/mean(A^p) − M^p/mean(M^p)‖² + alpha·BCE`.
pub fn phaseless_objective(
    chi: &[C64],
    measured_sq: &[f64],
    tone: &ToneOperators,
    alpha: f64,
    labels: Option<&[f64]>,
) -> Result<f64> {
    PhaselessProblem::new(tone, measured_sq, alpha, labels)?.objective(chi)
}

/// Analytic gradient of [`phaseless_objective`] w.r.t. `(Re chi, Im chi)`.
pub fn phaseless_gradient(
    chi: &[C64],
    measured_sq: &[f64],
    tone: &ToneOperators,
    alpha: f64,
    labels: Option<&[f64]>,
) -> Result<Vec<f64>> {
    Ok(PhaselessProblem::new(tone, measured_sq, alpha, labels)?.objective_and_gradient(chi)?.1)
}

fn pack(x: &[f64]) -> Vec<C64> {
    let n = x.len() / 2;
    (0..n).map(|k| C64::new(x[k], x[n + k])).collect()
}

/// Result of one per-tone optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneInversion {
    pub chi: Vec<C64>,
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
}

/// Counts iterations in which the objective rises while above `10 × f0`.
/// Adam's first, sign-like steps can overshoot before settling; an objective
/// that keeps climbing past the threshold, or turns non-finite, diverges.
struct DivergenceGuard {
    tone: usize,
    f0: f64,
    floor: f64,
    patience: usize,
    prev: f64,
    rising: usize,
}

impl DivergenceGuard {
    fn new(tone: usize, f0: f64, floor: f64, patience: usize) -> Self {
        Self { tone, f0, floor, patience, prev: f0, rising: 0 }
    }

    fn check(&mut self, iteration: usize, f: f64) -> Result<()> {
        let above = f > DIVERGENCE_FACTOR * self.f0 && f > self.floor;
        if !above {
            self.rising = 0;
        } else if f > self.prev {
            self.rising += 1;
        }
        self.prev = f;
        if !f.is_finite() || self.rising > self.patience {
            return Err(Error::Divergence { tone: self.tone, iteration, objective: f, initial: self.f0 });
        }
        Ok(())
    }
}

fn converged(prev: f64, f: f64, tol: f64) -> bool {
    tol > 0.0 && (prev - f).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE)
}

fn run_adam(problem: &PhaselessProblem, cfg: &InversionConfig, tone: usize) -> Result<ToneInversion> {
    let dim = 2 * problem.n_cells();
    let mut x = vec![0.0; dim];
    let (mut m, mut v) = (vec![0.0; dim], vec![0.0; dim]);
    let (f0, mut g) = problem.objective_and_gradient(&pack(&x))?;
    let floor = 1e-12 * problem.tone.n_tx() as f64 * problem.tone.n_rx() as f64;
    let mut guard = DivergenceGuard::new(tone, f0, floor, DIVERGENCE_PATIENCE);
    if f0 <= floor {
        // data already fit; Adam would otherwise amplify rounding-level gradients
        return Ok(ToneInversion { chi: pack(&x), history: vec![f0] });
    }
    let mut history = vec![f0];
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for it in 1..=cfg.max_iters {
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        let lr = cfg.schedule.rate(cfg.step_size, it, cfg.max_iters);
        for k in 0..dim {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let mh = m[k] / (1.0 - b1t);
            let vh = v[k] / (1.0 - b2t);
            x[k] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
        let (f, g_new) = problem.objective_and_gradient(&pack(&x))?;
        guard.check(it, f)?;
        let prev = *history.last().unwrap();
        history.push(f);
        g = g_new;
        if converged(prev, f, cfg.tolerance) {
            break;
        }
    }
    Ok(ToneInversion { chi: pack(&x), history })
}

fn dotr(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn run_lbfgs(problem: &PhaselessProblem, cfg: &InversionConfig, tone: usize) -> Result<ToneInversion> {
    let dim = 2 * problem.n_cells();
    let mut x = vec![0.0; dim];
    let (f0, mut g) = problem.objective_and_gradient(&pack(&x))?;
    let mut f = f0;
    let mut history = vec![f0];
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    for it in 1..=cfg.max_iters {
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dotr(s, &d);
            for (dk, yk) in d.iter_mut().zip(y) {
                *dk -= a * yk;
            }
            alphas.push(a);
        }
        let gamma = match pairs.back() {
            Some((s, y, _)) => dotr(s, y) / dotr(y, y),
            None => {
                let gmax = g.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                if gmax == 0.0 {
                    break;
                }
                cfg.step_size / gmax
            }
        };
        for dk in d.iter_mut() {
            *dk *= gamma;
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dotr(y, &d);
            for (dk, sk) in d.iter_mut().zip(s) {
                *dk += (a - b) * sk;
            }
        }
        let mut slope = dotr(&g, &d);
        if slope >= 0.0 {
            pairs.clear();
            d = g.iter().map(|v| -v * cfg.step_size).collect();
            slope = dotr(&g, &d);
            if slope >= 0.0 {
                break;
            }
        }
        // Armijo backtracking
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let (ft, gt) = problem.objective_and_gradient(&pack(&trial))?;
            if ft.is_finite() && ft <= f + 1e-4 * t * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else { break };
        DivergenceGuard::new(tone, f0, f64::INFINITY, 0).check(it, f_new)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dotr(&s, &y);
        if sy > 1e-300 {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let prev = f;
        x = x_new;
        f = f_new;
        g = g_new;
        history.push(f);
        if converged(prev, f, cfg.tolerance) || f == 0.0 {
            break;
        }
    }
    Ok(ToneInversion { chi: pack(&x), history })
}

/// Minimize the phaseless objective for one tone starting from `chi = 0`.
/// `tone_index` only labels diagnostics.
pub fn invert_tone(problem: &PhaselessProblem, cfg: &InversionConfig, tone_index: usize) -> Result<ToneInversion> {
    cfg.validate()?;
    match cfg.optimizer {
        Optimizer::Adam => run_adam(problem, cfg, tone_index),
        Optimizer::Lbfgs => run_lbfgs(problem, cfg, tone_index),
    }
}

/// Per-tone contrast estimates stacked as `n_tone × n × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreImage {
    pub n_tone: usize,
    pub n: usize,
    /// Tone-major, then row-major cells.
    pub chi: Vec<C64>,
    #[serde(default)]
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_id: Option<String>,
}

impl PreImage {
    pub fn new(n_tone: usize, n: usize, chi: Vec<C64>) -> Result<Self> {
        if n_tone == 0 || n == 0 || chi.len() != n_tone * n * n {
            return Err(Error::Shape(format!("pre-image of {} values cannot be {n_tone}×{n}×{n}", chi.len())));
        }
        if chi.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::InvalidConfig("pre-image contains non-finite values".into()));
        }
        Ok(Self { n_tone, n, chi, config_hash: String::new(), measurement_id: None })
    }

    pub fn tone(&self, t: usize) -> &[C64] {
        let len = self.n * self.n;
        &self.chi[t * len..(t + 1) * len]
    }
}

/// Phaseless inversion of every tone independently (in parallel).
///
/// `amps` holds the normalized total-field amplitudes; `labels` is the
/// target indicator used by the position regularizer when `alpha > 0`.
pub fn pre_identify(amps: &AmplitudeData, ops: &OperatorSet, cfg: &InversionConfig, labels: Option<&[f64]>) -> Result<PreImage> {
    cfg.validate()?;
    if amps.n_tone != ops.tones.len() || amps.n_tx != ops.n_tx() || amps.n_rx != ops.n_rx() {
        return Err(Error::Shape(format!(
            "amplitudes are {}×{}×{}, operators {}×{}×{}",
            amps.n_tone,
            amps.n_tx,
            amps.n_rx,
            ops.tones.len(),
            ops.n_tx(),
            ops.n_rx()
        )));
    }
    let per_tone = ops
        .tones
        .par_iter()
        .enumerate()
        .map(|(t, tone)| {
            let sq: Vec<f64> = (0..amps.n_tx).flat_map(|p| amps.link_row(t, p).iter().map(|a| a * a)).collect();
            let problem = PhaselessProblem::new(tone, &sq, cfg.alpha, labels).map_err(|e| match e {
                Error::ZeroAmplitude { tx, rx, .. } => Error::ZeroAmplitude { tx, rx, tone: t },
                other => other,
            })?;
            Ok(invert_tone(&problem, cfg, t)?.chi)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pre = PreImage::new(ops.tones.len(), ops.domain.n, per_tone.concat())?;
    pre.config_hash = cfg.hash();
    Ok(pre)
}

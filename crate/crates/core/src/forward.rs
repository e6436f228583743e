//! Total-field solves, received fields and the MIMO sweep.
//!
//! Only cells with non-zero contrast carry current, so the system
//! `(I - G_S diag(chi)) E_t = E_i` is solved on the support `S` and then
//! extended to every cell with `E_t = E_i + G_S[:, S] (chi_S ∘ E_S)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::{AntennaModel, ArrayLayout, OperatorSet, ToneOperators};
use crate::linalg::{bicgstab, ComplexMatrix, LuFactor, ToeplitzConvolver, C64};
use crate::scene::{rasterize, ContrastGrid, Scene};

pub mod cylinder;

pub use cylinder::cylinder_oracle;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Above this many cell-pair products the full-grid extension uses FFTs.
const DIRECT_EXTENSION_LIMIT: usize = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Dense LU for small supports, BiCGSTAB otherwise.
    #[default]
    Auto,
    Dense,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub kind: SolverKind,
    /// Largest support solved densely under `Auto`.
    pub dense_limit: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { kind: SolverKind::Auto, dense_limit: 1500, tol: 1e-12, max_iter: 20_000 }
    }
}

enum Backend {
    Empty,
    Dense(LuFactor),
    Iterative { r0: usize, c0: usize, rows: usize, cols: usize, chi_box: Vec<C64>, conv: ToeplitzConvolver },
}

/// Factorized (or preconditioned-free iterative) solver for one tone and one
/// contrast, reused across transmitters.
pub struct ToneSolver<'a> {
    tone: &'a ToneOperators,
    chi: &'a [C64],
    support: Vec<usize>,
    backend: Backend,
    full_conv: Option<ToeplitzConvolver>,
    opts: SolverOptions,
}

impl<'a> ToneSolver<'a> {
    pub fn new(chi: &'a [C64], tone: &'a ToneOperators, opts: &SolverOptions) -> Result<Self> {
        let n = tone.gs.n();
        if chi.len() != n * n {
            return Err(Error::Shape(format!("contrast has {} cells, operators have {}", chi.len(), n * n)));
        }
        if chi.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::InvalidConfig("contrast contains non-finite values".into()));
        }
        let support: Vec<usize> = (0..chi.len()).filter(|&i| chi[i] != ZERO).collect();
        let use_dense = match opts.kind {
            SolverKind::Dense => true,
            SolverKind::Iterative => false,
            SolverKind::Auto => support.len() <= opts.dense_limit,
        };
        let backend = if support.is_empty() {
            Backend::Empty
        } else if use_dense {
            let s = support.len();
            let mut a = ComplexMatrix::zeros(s, s);
            for (i, &m) in support.iter().enumerate() {
                let row = a.row_mut(i);
                for (j, &k) in support.iter().enumerate() {
                    row[j] = -tone.gs.entry(m, k) * chi[k];
                }
                row[i] += C64::new(1.0, 0.0);
            }
            Backend::Dense(LuFactor::new(a)?)
        } else {
            let (mut r0, mut r1, mut c0, mut c1) = (n, 0, n, 0);
            for &i in &support {
                let (r, c) = (i / n, i % n);
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
            let (rows, cols) = (r1 - r0 + 1, c1 - c0 + 1);
            let mut chi_box = Vec::with_capacity(rows * cols);
            for r in r0..=r1 {
                chi_box.extend_from_slice(&chi[r * n + c0..=r * n + c1]);
            }
            Backend::Iterative { r0, c0, rows, cols, chi_box, conv: tone.gs.convolver(rows, cols) }
        };
        let full_conv = (!support.is_empty() && n * n * support.len() > DIRECT_EXTENSION_LIMIT)
            .then(|| tone.gs.convolver(n, n));
        Ok(Self { tone, chi, support, backend, full_conv, opts: *opts })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Total field at every cell for the incident field `e_i` (length `N²`).
    pub fn solve(&self, e_i: &[C64]) -> Result<Vec<C64>> {
        let n = self.tone.gs.n();
        if e_i.len() != n * n {
            return Err(Error::Shape(format!("incident field has {} cells, expected {}", e_i.len(), n * n)));
        }
        let e_support: Vec<C64> = match &self.backend {
            Backend::Empty => return Ok(e_i.to_vec()),
            Backend::Dense(lu) => {
                let rhs: Vec<C64> = self.support.iter().map(|&i| e_i[i]).collect();
                lu.solve(&rhs)
            }
            Backend::Iterative { r0, c0, rows, cols, chi_box, conv } => {
                let mut rhs = Vec::with_capacity(rows * cols);
                for r in *r0..r0 + rows {
                    rhs.extend_from_slice(&e_i[r * n + c0..r * n + c0 + cols]);
                }
                let apply = |x: &[C64]| {
                    let j: Vec<C64> = x.iter().zip(chi_box).map(|(a, b)| a * b).collect();
                    let gj = conv.apply(&j);
                    x.iter().zip(gj).map(|(a, b)| a - b).collect::<Vec<_>>()
                };
                let (x, _) = bicgstab(apply, &rhs, Some(&rhs), self.opts.tol, self.opts.max_iter)?;
                self.support
                    .iter()
                    .map(|&i| {
                        let (r, c) = (i / n, i % n);
                        x[(r - r0) * cols + (c - c0)]
                    })
                    .collect()
            }
        };
        let j_support: Vec<C64> = self.support.iter().zip(&e_support).map(|(&i, e)| self.chi[i] * e).collect();
        let mut e_t = e_i.to_vec();
        match &self.full_conv {
            Some(conv) => {
                let mut j = vec![ZERO; n * n];
                for (&i, v) in self.support.iter().zip(&j_support) {
                    j[i] = *v;
                }
                for (e, g) in e_t.iter_mut().zip(conv.apply(&j)) {
                    *e += g;
                }
            }
            None => {
                for (m, e) in e_t.iter_mut().enumerate() {
                    let mut acc = ZERO;
                    for (&k, v) in self.support.iter().zip(&j_support) {
                        acc += self.tone.gs.entry(m, k) * v;
                    }
                    *e += acc;
                }
            }
        }
        Ok(e_t)
    }
}

/// Total field at the cells for transmitter `tx` on tone index `tone`.
pub fn solve_total_field(chi: &ContrastGrid, ops: &OperatorSet, tx: usize, tone: usize) -> Result<Vec<C64>> {
    solve_total_field_with(chi, ops, tx, tone, &SolverOptions::default())
}

pub fn solve_total_field_with(
    chi: &ContrastGrid,
    ops: &OperatorSet,
    tx: usize,
    tone: usize,
    opts: &SolverOptions,
) -> Result<Vec<C64>> {
    check_domain(chi, ops)?;
    let t = ops.tones.get(tone).ok_or_else(|| Error::InvalidConfig(format!("tone index {tone} out of range")))?;
    if tx >= t.n_tx() {
        return Err(Error::InvalidConfig(format!("transmitter index {tx} out of range")));
    }
    ToneSolver::new(&chi.chi, t, opts)?.solve(t.e_i_cells.row(tx))
}

/// `E_s = G_O (chi ∘ E_t)` at the receivers.
pub fn scattered_at_rx(chi: &[C64], e_t: &[C64], tone: &ToneOperators) -> Vec<C64> {
    let j: Vec<C64> = chi.iter().zip(e_t).map(|(a, b)| a * b).collect();
    tone.go.matvec(&j)
}

/// Born prediction `G_O (chi ∘ E_i)` for transmitter `tx`.
pub fn born_scattered_at_rx(chi: &[C64], tone: &ToneOperators, tx: usize) -> Vec<C64> {
    scattered_at_rx(chi, tone.e_i_cells.row(tx), tone)
}

/// `‖E_t − E_i − G_S(chi ∘ E_t)‖ / ‖E_i‖`, evaluated with an independent FFT product.
pub fn total_field_residual(chi: &[C64], tone: &ToneOperators, e_i: &[C64], e_t: &[C64]) -> f64 {
    let n = tone.gs.n();
    let conv = tone.gs.convolver(n, n);
    let j: Vec<C64> = chi.iter().zip(e_t).map(|(a, b)| a * b).collect();
    let gj = conv.apply(&j);
    let r: Vec<C64> = (0..e_t.len()).map(|i| e_t[i] - e_i[i] - gj[i]).collect();
    crate::linalg::norm2(&r) / crate::linalg::norm2(e_i)
}

/// Fields for one tone; rows index transmitters.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneFields {
    pub freq_hz: f64,
    /// `P × N²`
    pub e_t_cells: ComplexMatrix,
    /// `P × N²`, `chi ∘ E_t`
    pub j_cells: ComplexMatrix,
    /// `P × Q`
    pub e_s_rx: ComplexMatrix,
    /// `P × Q`, `E_i + E_s`
    pub e_total_rx: ComplexMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    pub n: usize,
    pub tones: Vec<ToneFields>,
}

impl FieldSet {
    pub fn n_tx(&self) -> usize {
        self.tones.first().map_or(0, |t| t.e_s_rx.rows())
    }

    pub fn n_rx(&self) -> usize {
        self.tones.first().map_or(0, |t| t.e_s_rx.cols())
    }
}

fn check_domain(chi: &ContrastGrid, ops: &OperatorSet) -> Result<()> {
    if chi.domain != ops.domain {
        return Err(Error::Shape("contrast grid and operators use different domains".into()));
    }
    Ok(())
}

/// Fields for a single tone, all transmitters, reusing one factorization.
pub fn sweep_tone(chi: &[C64], tone: &ToneOperators, opts: &SolverOptions) -> Result<ToneFields> {
    let solver = ToneSolver::new(chi, tone, opts)?;
    let (p, q, cells) = (tone.n_tx(), tone.n_rx(), chi.len());
    let mut fields = ToneFields {
        freq_hz: tone.freq_hz,
        e_t_cells: ComplexMatrix::zeros(p, cells),
        j_cells: ComplexMatrix::zeros(p, cells),
        e_s_rx: ComplexMatrix::zeros(p, q),
        e_total_rx: ComplexMatrix::zeros(p, q),
    };
    for tx in 0..p {
        let e_t = solver.solve(tone.e_i_cells.row(tx))?;
        let j: Vec<C64> = chi.iter().zip(&e_t).map(|(a, b)| a * b).collect();
        let e_s = tone.go.matvec(&j);
        for (k, (tot, s)) in fields.e_total_rx.row_mut(tx).iter_mut().zip(&e_s).enumerate() {
            *tot = tone.e_i_rx[(tx, k)] + s;
        }
        fields.e_s_rx.row_mut(tx).copy_from_slice(&e_s);
        fields.e_t_cells.row_mut(tx).copy_from_slice(&e_t);
        fields.j_cells.row_mut(tx).copy_from_slice(&j);
    }
    Ok(fields)
}

/// Fields over every (transmitter, receiver, tone) for a prebuilt operator set.
pub fn sweep(chi: &ContrastGrid, ops: &OperatorSet, opts: &SolverOptions) -> Result<FieldSet> {
    check_domain(chi, ops)?;
    let tones = ops.tones.par_iter().map(|t| sweep_tone(&chi.chi, t, opts)).collect::<Result<Vec<_>>>()?;
    Ok(FieldSet { n: ops.domain.n, tones })
}

/// Rasterize `scene`, build operators and run the full sweep.
pub fn mimo_sweep(scene: &Scene, layout: &ArrayLayout, antenna: &AntennaModel) -> Result<FieldSet> {
    let (chi, _) = rasterize(scene)?;
    let ops = OperatorSet::build(&scene.domain, layout, antenna)?;
    sweep(&chi, &ops, &SolverOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::{default_layout, wifi_tones};
    use crate::linalg::{norm2, rel_diff};
    use crate::scene::{Point, SensingDomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_setup(n: usize, antenna: AntennaModel) -> OperatorSet {
        let d = SensingDomain::new(Point::new(0.0, 0.0), 0.4, n).unwrap();
        let layout = ArrayLayout {
            tx: vec![Point::new(-0.5, 0.2), Point::new(0.2, 0.9)],
            rx: vec![Point::new(0.9, 0.1), Point::new(0.9, 0.3), Point::new(0.2, -0.3)],
            tones_hz: wifi_tones(2),
        };
        OperatorSet::build(&d, &layout, &antenna).unwrap()
    }

    fn random_chi(n: usize, fill: f64, scale: f64, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * n)
            .map(|_| {
                if rng.gen::<f64>() < fill {
                    C64::new(rng.gen::<f64>() * scale, -rng.gen::<f64>() * 0.1 * scale)
                } else {
                    ZERO
                }
            })
            .collect()
    }

    #[test]
    fn zero_contrast_returns_incident_exactly() {
        let ops = small_setup(10, AntennaModel::default());
        let chi = ContrastGrid::zeros(ops.domain);
        let e = solve_total_field(&chi, &ops, 1, 0).unwrap();
        assert_eq!(e, ops.tones[0].e_i_cells.row(1));
        assert!(scattered_at_rx(&chi.chi, &e, &ops.tones[0]).iter().all(|v| *v == ZERO));
    }

    #[test]
    fn residual_is_tiny_for_dense_and_iterative() {
        let ops = small_setup(12, AntennaModel::default());
        let chi = random_chi(12, 0.4, 1.5, 3);
        let t = &ops.tones[1];
        for kind in [SolverKind::Dense, SolverKind::Iterative] {
            let opts = SolverOptions { kind, ..SolverOptions::default() };
            let e_i = t.e_i_cells.row(0);
            let e_t = ToneSolver::new(&chi, t, &opts).unwrap().solve(e_i).unwrap();
            assert!(total_field_residual(&chi, t, e_i, &e_t) < 1e-10, "{kind:?}");
        }
    }

    #[test]
    fn iterative_matches_dense() {
        let ops = small_setup(14, AntennaModel::default());
        let chi = random_chi(14, 0.3, 1.0, 9);
        let t = &ops.tones[0];
        let dense = ToneSolver::new(&chi, t, &SolverOptions { kind: SolverKind::Dense, ..Default::default() }).unwrap();
        let iter =
            ToneSolver::new(&chi, t, &SolverOptions { kind: SolverKind::Iterative, ..Default::default() }).unwrap();
        for tx in 0..2 {
            let a = dense.solve(t.e_i_cells.row(tx)).unwrap();
            let b = iter.solve(t.e_i_cells.row(tx)).unwrap();
            assert!(rel_diff(&b, &a) < 1e-8);
        }
    }

    #[test]
    fn one_cell_perturbation_is_small_but_nonzero() {
        let ops = small_setup(10, AntennaModel::default());
        let mut chi = ContrastGrid::zeros(ops.domain);
        chi.chi[37] = C64::new(1e-6, 0.0);
        let e_t = solve_total_field(&chi, &ops, 0, 0).unwrap();
        let e_i = ops.tones[0].e_i_cells.row(0);
        let r = rel_diff(&e_t, e_i);
        assert!(r > 0.0 && r < 1e-4, "{r}");
    }

    #[test]
    fn scattered_is_linear_in_injected_current() {
        let ops = small_setup(8, AntennaModel::default());
        let t = &ops.tones[0];
        let ones = vec![C64::new(1.0, 0.0); 64];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let j: Vec<C64> = (0..64).map(|_| C64::new(rng.gen(), rng.gen())).collect();
        let j2: Vec<C64> = j.iter().map(|v| v * 2.0).collect();
        let a = scattered_at_rx(&ones, &j, t);
        let b = scattered_at_rx(&ones, &j2, t);
        for (x, y) in a.iter().zip(&b) {
            assert!((x * 2.0 - y).norm() <= 1e-15 * y.norm());
        }
    }

    #[test]
    fn single_link_sweep_matches_composition() {
        let d = SensingDomain::new(Point::new(0.0, 0.0), 0.3, 10).unwrap();
        let layout = ArrayLayout { tx: vec![Point::new(-0.4, 0.1)], rx: vec![Point::new(0.6, 0.2)], tones_hz: vec![2.462e9] };
        let mut scene = Scene::empty(d);
        scene.targets.push(crate::scene::Target::rect(2, Point::new(0.15, 0.15), 0.05, 0.05));
        let fs = mimo_sweep(&scene, &layout, &AntennaModel::default()).unwrap();
        let (chi, _) = rasterize(&scene).unwrap();
        let ops = OperatorSet::build(&d, &layout, &AntennaModel::default()).unwrap();
        let e_t = solve_total_field(&chi, &ops, 0, 0).unwrap();
        let e_s = scattered_at_rx(&chi.chi, &e_t, &ops.tones[0]);
        assert_eq!(fs.tones[0].e_s_rx[(0, 0)], e_s[0]);
        assert_eq!(fs.tones[0].e_total_rx[(0, 0)], ops.tones[0].e_i_rx[(0, 0)] + e_s[0]);
    }

    #[test]
    fn empty_scene_sweep_is_incident() {
        let d = SensingDomain::new(Point::new(0.0, 0.0), 0.5, 10).unwrap();
        let layout = default_layout(&d, 3);
        let fs = mimo_sweep(&Scene::empty(d), &layout, &AntennaModel::default()).unwrap();
        let ops = OperatorSet::build(&d, &layout, &AntennaModel::default()).unwrap();
        for (f, t) in fs.tones.iter().zip(&ops.tones) {
            assert_eq!(f.e_total_rx, t.e_i_rx);
        }
    }

    #[test]
    fn field_set_invariants() {
        let ops = small_setup(10, AntennaModel::default());
        let chi = ContrastGrid::from_vec(ops.domain, random_chi(10, 0.2, 0.8, 4)).unwrap();
        let fs = sweep(&chi, &ops, &SolverOptions::default()).unwrap();
        for (f, t) in fs.tones.iter().zip(&ops.tones) {
            for p in 0..2 {
                for q in 0..3 {
                    assert_eq!(f.e_total_rx[(p, q)], t.e_i_rx[(p, q)] + f.e_s_rx[(p, q)]);
                }
                for i in 0..100 {
                    assert_eq!(f.j_cells[(p, i)], chi.chi[i] * f.e_t_cells[(p, i)]);
                }
            }
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let ops = small_setup(10, AntennaModel::default());
        let chi = ContrastGrid::from_vec(ops.domain, random_chi(10, 0.5, 1.0, 5)).unwrap();
        let a = sweep(&chi, &ops, &SolverOptions::default()).unwrap();
        let b = sweep(&chi, &ops, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nonfinite_contrast_is_rejected() {
        let ops = small_setup(6, AntennaModel::default());
        let mut chi = vec![ZERO; 36];
        chi[3] = C64::new(f64::NAN, 0.0);
        assert!(ToneSolver::new(&chi, &ops.tones[0], &SolverOptions::default()).is_err());
    }

    #[test]
    fn fft_extension_matches_direct() {
        let ops = small_setup(12, AntennaModel::default());
        let chi = random_chi(12, 0.5, 1.0, 6);
        let t = &ops.tones[0];
        let mut s = ToneSolver::new(&chi, t, &SolverOptions::default()).unwrap();
        let direct = s.solve(t.e_i_cells.row(0)).unwrap();
        s.full_conv = Some(t.gs.convolver(12, 12));
        let fft = s.solve(t.e_i_cells.row(0)).unwrap();
        assert!(rel_diff(&fft, &direct) < 1e-12);
        assert!(norm2(&direct) > 0.0);
    }
}

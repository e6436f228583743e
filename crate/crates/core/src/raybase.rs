//! Ray-tracing amplitude baseline and its comparison against the full-wave
//! model for a single dielectric slab between a transmitter and a receiver.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::{green_2d, self_term, wavelength, wavenumber, AntennaModel};
use crate::linalg::{gmres, ComplexMatrix, LuFactor, ToeplitzConvolver, C64};
use crate::scene::{Point, Scene, Shape};

const ONE: C64 = C64::new(1.0, 0.0);

/// Normal-incidence transmission through a slab of relative permittivity
/// `eps` and thickness `w`, relative to free-space propagation over `w`.
pub fn slab_transmission(eps: C64, k0: f64, w: f64) -> C64 {
    let n = eps.sqrt();
    let r1 = (ONE - n) / (ONE + n);
    let t1 = 2.0 / (ONE + n);
    let r2 = (n - ONE) / (n + ONE);
    let t2 = 2.0 * n / (ONE + n);
    let k = n * k0;
    let jw = C64::new(0.0, -w);
    t1 * t2 * ((k - k0) * jw).exp() / (ONE + r1 * r2 * (k * 2.0 * jw).exp())
}

/// Length of the part of segment `a → b` inside `shape`.
pub fn chord_length(shape: &Shape, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len = (dx * dx + dy * dy).sqrt();
    let (t0, t1) = match *shape {
        Shape::Rect { center, w, h } => {
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for (p, d, c, half) in [(a.x, dx, center.x, w / 2.0), (a.y, dy, center.y, h / 2.0)] {
                if d == 0.0 {
                    if (p - c).abs() > half {
                        return 0.0;
                    }
                    continue;
                }
                let (s0, s1) = ((c - half - p) / d, (c + half - p) / d);
                lo = lo.max(s0.min(s1));
                hi = hi.min(s0.max(s1));
            }
            (lo, hi)
        }
        Shape::Circle { center, r } => {
            let (fx, fy) = (a.x - center.x, a.y - center.y);
            let qa = dx * dx + dy * dy;
            let qb = 2.0 * (fx * dx + fy * dy);
            let qc = fx * fx + fy * fy - r * r;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc <= 0.0 || qa == 0.0 {
                return 0.0;
            }
            let s = disc.sqrt();
            (((-qb - s) / (2.0 * qa)).max(0.0), ((-qb + s) / (2.0 * qa)).min(1.0))
        }
    };
    (t1 - t0).max(0.0) * len
}

/// `p` inside `shape` or within rounding distance of its boundary.
fn touches(shape: &Shape, p: &Point) -> bool {
    const EPS: f64 = 1e-9;
    match *shape {
        Shape::Rect { center, w, h } => (p.x - center.x).abs() <= w / 2.0 + EPS && (p.y - center.y).abs() <= h / 2.0 + EPS,
        Shape::Circle { center, r } => center.distance(p) <= r + EPS,
    }
}

/// Ray prediction of the field at `rx`: the free-space field of `antenna`
/// over the straight path, times one slab transmission per intersected target
/// (chord length as thickness). No reflection or diffraction paths.
pub fn ray_predict(scene: &Scene, antenna: &AntennaModel, tx: Point, rx: Point, k0: f64) -> Result<C64> {
    antenna.validate()?;
    if !(k0 > 0.0 && k0.is_finite()) {
        return Err(Error::InvalidConfig(format!("wavenumber must be positive, got {k0}")));
    }
    let r = tx.distance(&rx);
    if r == 0.0 {
        return Err(Error::Domain { what: "receiver coincides with the transmitter", value: r });
    }
    let mut field = antenna.field_at_distance(k0, r);
    for t in &scene.targets {
        if touches(&t.shape, &rx) || touches(&t.shape, &tx) {
            return Err(Error::InvalidScene("ray end point lies on or inside a target".into()));
        }
        let eps = scene
            .material(t.label)
            .ok_or_else(|| Error::InvalidScene(format!("target label {} has no material", t.label)))?
            .eps;
        let w = chord_length(&t.shape, tx, rx);
        if w > 0.0 {
            field *= slab_transmission(eps, k0, w);
        }
    }
    Ok(field)
}

/// Geometry of the ray-versus-field experiment: transmitter, slab and
/// receiver on the x axis; the slab is `width` thick along x and `l` long
/// across it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RayComparisonConfig {
    pub freq_hz: f64,
    pub eps_r: f64,
    pub width: f64,
    pub tx: Point,
    /// x coordinate of the slab center.
    pub target_x: f64,
    /// Slab lengths in free-space wavelengths.
    pub l_over_lambda: Vec<f64>,
    /// Receiver distances behind the slab, m.
    pub d_values: Vec<f64>,
    /// Cells per wavelength inside the slab.
    pub cells_per_wavelength: f64,
    pub tol: f64,
    /// GMRES restart length.
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for RayComparisonConfig {
    fn default() -> Self {
        Self {
            freq_hz: 5e9,
            eps_r: 10.0,
            width: 0.1,
            tx: Point::new(0.0, 0.0),
            target_x: 3.0,
            l_over_lambda: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 7.5, 10.0, 12.5, 15.0],
            d_values: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            cells_per_wavelength: 32.0,
            tol: 1e-6,
            restart: 200,
            max_iter: 20_000,
        }
    }
}

impl RayComparisonConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.freq_hz) && pos(self.eps_r) && pos(self.width) && pos(self.cells_per_wavelength) && pos(self.tol)) {
            return Err(Error::InvalidConfig("frequency, permittivity, width, sampling and tolerance must be positive".into()));
        }
        if self.l_over_lambda.is_empty() || self.d_values.is_empty() {
            return Err(Error::InvalidConfig("l and d grids must be non-empty".into()));
        }
        if !self.l_over_lambda.iter().chain(&self.d_values).all(|&v| pos(v)) {
            return Err(Error::InvalidConfig("l and d values must be positive".into()));
        }
        if self.target_x - self.width / 2.0 <= self.tx.x {
            return Err(Error::InvalidConfig("slab must lie to the right of the transmitter".into()));
        }
        Ok(())
    }

    fn rx(&self, d: f64) -> Point {
        Point::new(self.target_x + self.width / 2.0 + d, self.tx.y)
    }
}

/// Relative amplitude error `| |E_ray| − |E_field| | / |E_field|` indexed
/// `[l][d]`, with both amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayComparison {
    pub l_over_lambda: Vec<f64>,
    pub d_m: Vec<f64>,
    pub rel_err: Vec<Vec<f64>>,
    pub ray_amp: Vec<Vec<f64>>,
    pub field_amp: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaySummary {
    /// Largest error over d at the smallest l.
    pub max_err_at_halflambda: f64,
    /// Mean error over d at the largest l.
    pub err_at_15lambda: f64,
    pub mean_err_by_l: Vec<f64>,
}

impl RayComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("l_over_lambda,d_m,rel_err\n");
        for (l, row) in self.l_over_lambda.iter().zip(&self.rel_err) {
            for (d, e) in self.d_m.iter().zip(row) {
                s.push_str(&format!("{l},{d},{e}\n"));
            }
        }
        s
    }

    pub fn summary(&self) -> RaySummary {
        let mean = |r: &Vec<f64>| r.iter().sum::<f64>() / r.len() as f64;
        let mean_err_by_l: Vec<f64> = self.rel_err.iter().map(mean).collect();
        RaySummary {
            max_err_at_halflambda: self.rel_err[0].iter().copied().fold(0.0, f64::max),
            err_at_15lambda: *mean_err_by_l.last().unwrap(),
            mean_err_by_l,
        }
    }
}

/// Inverse of the circulant (in y) approximation of `I − χ G` on an
/// `ny × nx` strip: exact for a slab that is periodic along its length, so
/// only the end effects are left to the Krylov solver.
struct StripPreconditioner {
    ny: usize,
    nx: usize,
    blocks: Vec<LuFactor>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl StripPreconditioner {
    fn new(ny: usize, nx: usize, chi: C64, kernel: impl Fn(usize, usize) -> C64) -> Result<Self> {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(ny);
        let ifft = planner.plan_fft_inverse(ny);
        // symbol per column offset: Σ_d C_d ω^{kd} with wrapped row offsets
        let symbols: Vec<Vec<C64>> = (0..nx)
            .map(|dc| {
                let mut v: Vec<C64> = (0..ny).map(|d| -chi * kernel(d.min(ny - d), dc)).collect();
                if dc == 0 {
                    v[0] += ONE;
                }
                fft.process(&mut v);
                v
            })
            .collect();
        let blocks = (0..ny)
            .into_par_iter()
            .map(|k| {
                let mut m = ComplexMatrix::zeros(nx, nx);
                for a in 0..nx {
                    for b in 0..nx {
                        m[(a, b)] = symbols[a.abs_diff(b)][k];
                    }
                }
                LuFactor::new(m)
            })
            .collect::<Result<_>>()?;
        Ok(Self { ny, nx, blocks, fft, ifft })
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        let (ny, nx) = (self.ny, self.nx);
        let mut cols: Vec<Vec<C64>> = (0..nx).map(|c| (0..ny).map(|r| x[r * nx + c]).collect()).collect();
        for col in cols.iter_mut() {
            self.fft.process(col);
        }
        for (k, lu) in self.blocks.iter().enumerate() {
            let rhs: Vec<C64> = cols.iter().map(|c| c[k]).collect();
            for (col, v) in cols.iter_mut().zip(lu.solve(&rhs)) {
                col[k] = v;
            }
        }
        let mut out = vec![C64::new(0.0, 0.0); ny * nx];
        let scale = 1.0 / ny as f64;
        for (c, col) in cols.iter_mut().enumerate() {
            self.ifft.process(col);
            for (r, v) in col.iter().enumerate() {
                out[r * nx + c] = v * scale;
            }
        }
        out
    }
}

/// Full-wave field at `rx` points for a homogeneous `l × width` slab under
/// unit line-source illumination from `cfg.tx`.
fn slab_field(cfg: &RayComparisonConfig, l: f64, rx: &[Point]) -> Result<Vec<C64>> {
    let k0 = wavenumber(cfg.freq_hz);
    let lambda_d = wavelength(cfg.freq_hz) / cfg.eps_r.sqrt();
    let nx = (cfg.width * cfg.cells_per_wavelength / lambda_d).ceil().max(1.0) as usize;
    let delta = cfg.width / nx as f64;
    let ny = (l / delta).round().max(1.0) as usize;
    let chi = C64::new(cfg.eps_r - 1.0, 0.0);
    if chi.norm() == 0.0 {
        return Ok(rx.iter().map(|p| green_2d(k0, cfg.tx.distance(p))).collect());
    }
    let area = delta * delta;
    let scale = k0 * k0 * area;
    let self_val = self_term(k0, delta / PI.sqrt());
    let kernel = |dr: usize, dc: usize| {
        if dr == 0 && dc == 0 {
            self_val
        } else {
            scale * green_2d(k0, delta * ((dr * dr + dc * dc) as f64).sqrt())
        }
    };
    let x0 = cfg.target_x - cfg.width / 2.0 + delta / 2.0;
    let y0 = cfg.tx.y - ny as f64 * delta / 2.0 + delta / 2.0;
    let centers: Vec<Point> = (0..ny)
        .flat_map(|r| (0..nx).map(move |c| Point::new(x0 + c as f64 * delta, y0 + r as f64 * delta)))
        .collect();
    let e_i: Vec<C64> = centers.iter().map(|p| green_2d(k0, cfg.tx.distance(p))).collect();
    let conv = ToeplitzConvolver::new(ny, nx, kernel);
    let apply = |x: &[C64]| {
        let j: Vec<C64> = x.iter().map(|v| v * chi).collect();
        x.iter().zip(conv.apply(&j)).map(|(a, b)| a - b).collect::<Vec<_>>()
    };
    let pre = StripPreconditioner::new(ny, nx, chi, kernel)?;
    let (u, _) = gmres(|u| apply(&pre.apply(u)), &e_i, None, cfg.restart, cfg.tol, cfg.max_iter)?;
    let e_t = pre.apply(&u);
    Ok(rx
        .iter()
        .map(|p| {
            let scattered: C64 = centers.iter().zip(&e_t).map(|(c, e)| scale * green_2d(k0, p.distance(c)) * chi * e).sum();
            green_2d(k0, cfg.tx.distance(p)) + scattered
        })
        .collect())
}

/// Sweep slab length and receiver distance, comparing the ray prediction
/// with the full-wave field (one solve per length). Both use the 2D line
/// source so that their spreading laws agree.
pub fn compare_models(cfg: &RayComparisonConfig) -> Result<RayComparison> {
    cfg.validate()?;
    let lambda = wavelength(cfg.freq_hz);
    let k0 = wavenumber(cfg.freq_hz);
    let antenna = AntennaModel::line2d();
    let rx: Vec<Point> = cfg.d_values.iter().map(|&d| cfg.rx(d)).collect();
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = cfg
        .l_over_lambda
        .par_iter()
        .map(|&lol| {
            let l = lol * lambda;
            let w = cfg.width;
            let t = slab_transmission(C64::new(cfg.eps_r, 0.0), k0, w);
            let field = slab_field(cfg, l, &rx)?;
            let mut out = (Vec::new(), Vec::new(), Vec::new());
            for (p, f) in rx.iter().zip(field) {
                let ray = (antenna.field_at_distance(k0, cfg.tx.distance(p)) * t).norm();
                out.0.push((ray - f.norm()).abs() / f.norm());
                out.1.push(ray);
                out.2.push(f.norm());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut res = RayComparison {
        l_over_lambda: cfg.l_over_lambda.clone(),
        d_m: cfg.d_values.clone(),
        rel_err: Vec::new(),
        ray_amp: Vec::new(),
        field_amp: Vec::new(),
    };
    for (e, r, f) in rows {
        res.rel_err.push(e);
        res.ray_amp.push(r);
        res.field_amp.push(f);
    }
    Ok(res)
}

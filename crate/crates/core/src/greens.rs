//! Discretized scattering operators and incident fields.
//!
//! Time convention is `e^{+jωt}`; the 2D outgoing Green's function is
//! `g(R) = -(j/4) H0^(2)(k0 R)`. Domain couplings are
//! `G_S[m, n] = k0² A g(|r_m - r_n|)` with the singular self-cell replaced by
//! the integral of `g` over the equal-area disc of radius `a = Δ/√π`.

use std::f64::consts::PI;
use std::path::Path;

use log::warn;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, ToeplitzConvolver, C64};
use crate::scene::{Point, SensingDomain};
use crate::specfun::{h0_2, h1_2};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const MINUS_J_QUARTER: C64 = C64::new(0.0, -0.25);

pub fn wavenumber(freq_hz: f64) -> f64 {
    2.0 * PI * freq_hz / SPEED_OF_LIGHT
}

pub fn wavelength(freq_hz: f64) -> f64 {
    SPEED_OF_LIGHT / freq_hz
}

/// Outgoing 2D free-space Green's function `-(j/4) H0^(2)(k0 R)`, `R > 0`.
#[inline]
pub fn green_2d(k0: f64, r: f64) -> C64 {
    MINUS_J_QUARTER * h0_2(k0 * r)
}

/// `k0² ∫_disc g dA` over the disc of radius `a`:
/// `-(j/2) [π k0 a H1^(2)(k0 a) - 2j]`.
pub fn self_term(k0: f64, a: f64) -> C64 {
    let ka = k0 * a;
    C64::new(0.0, -0.5) * (PI * ka * h1_2(ka) - C64::new(0.0, 2.0))
}

/// Transmitter and receiver positions plus the probed tones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayLayout {
    pub tx: Vec<Point>,
    pub rx: Vec<Point>,
    pub tones_hz: Vec<f64>,
}

impl ArrayLayout {
    pub fn validate(&self, domain: &SensingDomain) -> Result<()> {
        if self.tx.is_empty() || self.rx.is_empty() {
            return Err(Error::InvalidArray("need at least one transmitter and one receiver".into()));
        }
        if self.tones_hz.is_empty() {
            return Err(Error::InvalidArray("no tones".into()));
        }
        if self.tones_hz.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidArray("tones must be positive".into()));
        }
        if self.tones_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArray("tones must be strictly increasing".into()));
        }
        for (role, points) in [("transmitter", &self.tx), ("receiver", &self.rx)] {
            if let Some(p) = points.iter().find(|p| domain.contains(p)) {
                return Err(Error::InvalidArray(format!("{role} at ({}, {}) lies inside the sensing domain", p.x, p.y)));
            }
        }
        Ok(())
    }

    pub fn wavenumbers(&self) -> Vec<f64> {
        self.tones_hz.iter().map(|&f| wavenumber(f)).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncidentMode {
    /// Thin-antenna far field `C e^{-j k0 r} / r`.
    #[default]
    Antenna3d,
    /// 2D line source `C · (-(j/4) H0^(2)(k0 r))`, consistent with the domain kernel.
    Line2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaModel {
    pub mode: IncidentMode,
    pub amplitude: Complex64,
}

impl Default for AntennaModel {
    fn default() -> Self {
        Self { mode: IncidentMode::Antenna3d, amplitude: C64::new(1.0, 0.0) }
    }
}

impl AntennaModel {
    pub fn line2d() -> Self {
        Self { mode: IncidentMode::Line2d, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitude.norm() == 0.0 || !self.amplitude.norm().is_finite() {
            return Err(Error::InvalidConfig("antenna amplitude C must be non-zero and finite".into()));
        }
        Ok(())
    }

    /// Field at distance `r > 0`.
    #[inline]
    pub fn field_at_distance(&self, k0: f64, r: f64) -> C64 {
        match self.mode {
            IncidentMode::Antenna3d => self.amplitude * C64::from_polar(1.0 / r, -k0 * r),
            IncidentMode::Line2d => self.amplitude * green_2d(k0, r),
        }
    }
}

/// Incident field radiated from `source`, evaluated at `points`.
pub fn incident_field(model: &AntennaModel, source: Point, points: &[Point], k0: f64) -> Result<Vec<C64>> {
    model.validate()?;
    points
        .iter()
        .map(|p| {
            let r = source.distance(p);
            if r == 0.0 {
                Err(Error::Domain { what: "evaluation point coincides with the source", value: r })
            } else {
                Ok(model.field_at_distance(k0, r))
            }
        })
        .collect()
}

/// `G_S` stored compactly: on a uniform grid the entry only depends on the
/// absolute row and column offsets between the two cells.
#[derive(Debug, Clone)]
pub struct DomainKernel {
    n: usize,
    values: Vec<C64>,
}

impl DomainKernel {
    pub fn new(domain: &SensingDomain, k0: f64) -> Result<Self> {
        domain.validate()?;
        if !(k0 > 0.0 && k0.is_finite()) {
            return Err(Error::InvalidConfig(format!("wavenumber must be positive, got {k0}")));
        }
        let delta = domain.cell_size();
        let lambda = 2.0 * PI / k0;
        if delta >= lambda / 4.0 {
            warn!("cell size {delta:.4} m is not below lambda/4 = {:.4} m", lambda / 4.0);
        }
        let n = domain.n;
        let area = domain.cell_area();
        let scale = k0 * k0 * area;
        let mut values = vec![C64::new(0.0, 0.0); n * n];
        for dr in 0..n {
            for dc in 0..n {
                values[dr * n + dc] = if dr == 0 && dc == 0 {
                    self_term(k0, delta / PI.sqrt())
                } else {
                    let r = delta * ((dr * dr + dc * dc) as f64).sqrt();
                    scale * green_2d(k0, r)
                };
            }
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn by_offset(&self, drow: usize, dcol: usize) -> C64 {
        self.values[drow * self.n + dcol]
    }

    /// `G_S[m, n]` for cell indices.
    #[inline]
    pub fn entry(&self, m: usize, n: usize) -> C64 {
        let (rm, cm) = (m / self.n, m % self.n);
        let (rn, cn) = (n / self.n, n % self.n);
        self.by_offset(rm.abs_diff(rn), cm.abs_diff(cn))
    }

    pub fn self_term(&self) -> C64 {
        self.values[0]
    }

    /// Dense `N² × N²` matrix.
    pub fn to_matrix(&self) -> ComplexMatrix {
        let cells = self.n * self.n;
        let mut m = ComplexMatrix::zeros(cells, cells);
        for i in 0..cells {
            let row = m.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.entry(i, j);
            }
        }
        m
    }

    /// FFT convolver over the sub-grid `rows × cols` (both ≤ n).
    pub fn convolver(&self, rows: usize, cols: usize) -> ToeplitzConvolver {
        ToeplitzConvolver::new(rows, cols, |dr, dc| self.by_offset(dr, dc))
    }
}

/// Dense `G_S` (`N² × N²`).
pub fn assemble_gs(domain: &SensingDomain, k0: f64) -> Result<ComplexMatrix> {
    Ok(DomainKernel::new(domain, k0)?.to_matrix())
}

/// `G_O[q, n] = k0² A g(|r_rx_q - r_n|)`; receivers must lie outside the domain.
pub fn assemble_go(domain: &SensingDomain, rx: &[Point], k0: f64) -> Result<ComplexMatrix> {
    domain.validate()?;
    if let Some(p) = rx.iter().find(|p| domain.contains(p)) {
        return Err(Error::InvalidArray(format!("receiver at ({}, {}) lies inside the sensing domain", p.x, p.y)));
    }
    let centers = domain.cell_centers();
    let scale = k0 * k0 * domain.cell_area();
    let mut m = ComplexMatrix::zeros(rx.len(), centers.len());
    for (q, p) in rx.iter().enumerate() {
        for (v, c) in m.row_mut(q).iter_mut().zip(&centers) {
            *v = scale * green_2d(k0, p.distance(c));
        }
    }
    Ok(m)
}

/// Operators for one tone.
#[derive(Debug, Clone)]
pub struct ToneOperators {
    pub freq_hz: f64,
    pub k0: f64,
    pub gs: DomainKernel,
    /// `Q × N²`
    pub go: ComplexMatrix,
    /// `P × N²` incident field at cell centers.
    pub e_i_cells: ComplexMatrix,
    /// `P × Q` incident field at receivers.
    pub e_i_rx: ComplexMatrix,
}

impl ToneOperators {
    pub fn build(domain: &SensingDomain, layout: &ArrayLayout, antenna: &AntennaModel, freq_hz: f64) -> Result<Self> {
        let k0 = wavenumber(freq_hz);
        let gs = DomainKernel::new(domain, k0)?;
        let go = assemble_go(domain, &layout.rx, k0)?;
        let centers = domain.cell_centers();
        let mut e_i_cells = ComplexMatrix::zeros(layout.tx.len(), centers.len());
        let mut e_i_rx = ComplexMatrix::zeros(layout.tx.len(), layout.rx.len());
        for (p, &src) in layout.tx.iter().enumerate() {
            e_i_cells.row_mut(p).copy_from_slice(&incident_field(antenna, src, &centers, k0)?);
            e_i_rx.row_mut(p).copy_from_slice(&incident_field(antenna, src, &layout.rx, k0)?);
        }
        Ok(Self { freq_hz, k0, gs, go, e_i_cells, e_i_rx })
    }

    pub fn n_tx(&self) -> usize {
        self.e_i_cells.rows()
    }

    pub fn n_rx(&self) -> usize {
        self.go.rows()
    }
}

/// All operators for a domain, array and antenna model.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub domain: SensingDomain,
    pub layout: ArrayLayout,
    pub antenna: AntennaModel,
    pub tones: Vec<ToneOperators>,
}

impl OperatorSet {
    pub fn build(domain: &SensingDomain, layout: &ArrayLayout, antenna: &AntennaModel) -> Result<Self> {
        layout.validate(domain)?;
        antenna.validate()?;
        let tones = layout
            .tones_hz
            .par_iter()
            .map(|&f| ToneOperators::build(domain, layout, antenna, f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { domain: *domain, layout: layout.clone(), antenna: *antenna, tones })
    }

    pub fn n_tx(&self) -> usize {
        self.layout.tx.len()
    }

    pub fn n_rx(&self) -> usize {
        self.layout.rx.len()
    }
}

/// WiFi channel 11 (2.462 GHz) subcarrier indices reported by common CSI
/// tools for a 20 MHz channel: 30 groups spanning -28..=28.
pub const CSI_SUBCARRIER_INDICES: [i32; 30] = [
    -28, -26, -24, -22, -20, -18, -16, -14, -12, -10, -8, -6, -4, -2, -1, 1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25,
    27, 28,
];

pub const CHANNEL11_CENTER_HZ: f64 = 2.462e9;
pub const SUBCARRIER_SPACING_HZ: f64 = 312.5e3;

/// The first `count` (≤ 30) CSI tone frequencies, evenly decimated from the
/// 30-index list.
pub fn wifi_tones(count: usize) -> Vec<f64> {
    let count = count.clamp(1, CSI_SUBCARRIER_INDICES.len());
    let picks: Vec<usize> = if count == 1 {
        vec![CSI_SUBCARRIER_INDICES.len() / 2]
    } else {
        (0..count).map(|i| i * (CSI_SUBCARRIER_INDICES.len() - 1) / (count - 1)).collect()
    };
    picks
        .into_iter()
        .map(|i| CHANNEL11_CENTER_HZ + CSI_SUBCARRIER_INDICES[i] as f64 * SUBCARRIER_SPACING_HZ)
        .collect()
}

/// Default 4-transmitter / 40-receiver layout around `domain`: one transmitter
/// 0.5 m outside the middle of each side, ten receivers per side on a square
/// ring 0.1 m outside the domain.
pub fn default_layout(domain: &SensingDomain, n_tones: usize) -> ArrayLayout {
    let (x0, y0, l) = (domain.origin.x, domain.origin.y, domain.side);
    let mid = l / 2.0;
    let tx = vec![
        Point::new(x0 + mid, y0 - 0.5),
        Point::new(x0 + l + 0.5, y0 + mid),
        Point::new(x0 + mid, y0 + l + 0.5),
        Point::new(x0 - 0.5, y0 + mid),
    ];
    let gap = 0.1;
    let per_side = 10;
    let span = l + 2.0 * gap;
    let step = span / per_side as f64;
    let mut rx = Vec::with_capacity(4 * per_side);
    for i in 0..per_side {
        let t = -gap + (i as f64 + 0.5) * step;
        rx.push(Point::new(x0 + t, y0 - gap));
    }
    for i in 0..per_side {
        let t = -gap + (i as f64 + 0.5) * step;
        rx.push(Point::new(x0 + l + gap, y0 + t));
    }
    for i in 0..per_side {
        let t = -gap + (i as f64 + 0.5) * step;
        rx.push(Point::new(x0 + l - t, y0 + l + gap));
    }
    for i in 0..per_side {
        let t = -gap + (i as f64 + 0.5) * step;
        rx.push(Point::new(x0 - gap, y0 + l - t));
    }
    ArrayLayout { tx, rx, tones_hz: wifi_tones(n_tones) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{j0, y0};

    #[test]
    fn antenna3d_unit_distance_and_inverse_law() {
        let m = AntennaModel::default();
        let src = Point::new(0.0, 0.0);
        for &k0 in &[1.0, 51.5, 300.0] {
            let e = incident_field(&m, src, &[Point::new(1.0, 0.0), Point::new(0.0, 2.0)], k0).unwrap();
            assert!((e[0].norm() - 1.0).abs() < 1e-15);
            assert!((e[1].norm() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn antenna3d_phase_at_one_wavelength() {
        let m = AntennaModel::default();
        let k0 = wavenumber(2.462e9);
        let lambda = 2.0 * PI / k0;
        let e = incident_field(&m, Point::new(0.0, 0.0), &[Point::new(lambda, 0.0)], k0).unwrap()[0];
        let undone = e * C64::from_polar(1.0, k0 * lambda);
        assert!(undone.arg().abs() < 1e-12);
    }

    #[test]
    fn line2d_at_unit_argument() {
        let m = AntennaModel::line2d();
        let k0 = 2.0;
        let e = incident_field(&m, Point::new(0.0, 0.0), &[Point::new(0.0, 0.5)], k0).unwrap()[0];
        let want = C64::new(0.0, -0.25) * C64::new(j0(1.0), -y0(1.0));
        assert!((e - want).norm() < 1e-15);
    }

    #[test]
    fn zero_distance_is_an_error() {
        let m = AntennaModel::default();
        assert!(incident_field(&m, Point::new(0.3, 0.3), &[Point::new(0.3, 0.3)], 10.0).is_err());
    }

    fn small_domain() -> SensingDomain {
        SensingDomain::new(Point::new(0.0, 0.0), 0.3, 12).unwrap()
    }

    #[test]
    fn gs_is_symmetric_and_matches_definition() {
        let d = small_domain();
        let k0 = wavenumber(2.462e9);
        let gs = assemble_gs(&d, k0).unwrap();
        let scale = k0 * k0 * d.cell_area();
        for m in 0..d.n_cells() {
            for n in 0..d.n_cells() {
                assert_eq!(gs[(m, n)], gs[(n, m)]);
                if m != n {
                    let r = d.cell_center(m).distance(&d.cell_center(n));
                    let want = scale * C64::new(0.0, -0.25) * crate::specfun::hankel2(0, k0 * r).unwrap();
                    assert!((gs[(m, n)] - want).norm() <= 1e-12 * want.norm());
                }
            }
        }
        assert!(gs.is_finite());
    }

    #[test]
    fn self_term_is_small_for_fine_cells() {
        let d = SensingDomain::default();
        let k0 = wavenumber(2.462e9);
        assert!(d.cell_size() <= 2.0 * PI / k0 / 4.0);
        let kern = DomainKernel::new(&d, k0).unwrap();
        let s = kern.self_term();
        assert!(s.re.is_finite() && s.im.is_finite());
        // 2.625 cm cells are coarser than lambda/10; a lambda/10 grid must be < 1
        let fine = SensingDomain::new(Point::new(0.0, 0.0), 0.12, 10).unwrap();
        assert!(DomainKernel::new(&fine, k0).unwrap().self_term().norm() < 1.0);
    }

    #[test]
    fn self_term_matches_small_disc_limit() {
        // small ka: k0² ∫ g dA ≈ (ka)²/2 · (−j π/2 ... ) ; compare against midpoint-refined quadrature
        let k0 = 50.0;
        let a = 0.004;
        let exact = self_term(k0, a);
        // polar quadrature with the log singularity integrated radially by substitution
        let nr = 4000;
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..nr {
            let rho = (i as f64 + 0.5) * a / nr as f64;
            acc += green_2d(k0, rho) * rho * (a / nr as f64);
        }
        let quad = k0 * k0 * 2.0 * PI * acc;
        assert!((quad - exact).norm() < 1e-6 * exact.norm().max(1e-3), "{quad} vs {exact}");
    }

    #[test]
    fn gs_far_field_decay() {
        let k0 = wavenumber(2.462e9);
        let lambda = 2.0 * PI / k0;
        let d = SensingDomain::new(Point::new(0.0, 0.0), 12.0 * lambda, 120).unwrap();
        let kern = DomainKernel::new(&d, k0).unwrap();
        let delta = d.cell_size();
        let samples: Vec<f64> = (50..=100)
            .map(|dc| kern.by_offset(0, dc).norm() * (dc as f64 * delta).sqrt())
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        for s in samples {
            assert!((s - mean).abs() / mean < 0.02);
        }
    }

    #[test]
    fn go_entries_and_monotone_decay() {
        let d = small_domain();
        let k0 = wavenumber(2.462e9);
        let rx = vec![Point::new(-0.05, 0.1), Point::new(-0.1, 0.1), Point::new(-0.2, 0.1)];
        let go = assemble_go(&d, &rx, k0).unwrap();
        let scale = k0 * k0 * d.cell_area();
        for n in [0usize, 17, 143] {
            let c = d.cell_center(n);
            assert!((go[(0, n)] - scale * green_2d(k0, rx[0].distance(&c))).norm() < 1e-15);
            assert!(go[(0, n)].norm() > go[(1, n)].norm());
            assert!(go[(1, n)].norm() > go[(2, n)].norm());
        }
    }

    #[test]
    fn go_rejects_receiver_inside() {
        let d = small_domain();
        assert!(assemble_go(&d, &[Point::new(0.1, 0.1)], 10.0).is_err());
    }

    #[test]
    fn go_row_at_lattice_extension_matches_gs_row() {
        let d = small_domain();
        let k0 = wavenumber(2.462e9);
        let delta = d.cell_size();
        // one pitch left of cell (5, 0): the lattice point of column -1
        let row = 5;
        let rx = d.cell_center_rc(row, 0);
        let rx = Point::new(rx.x - delta, rx.y);
        let go = assemble_go(&d, &[rx], k0).unwrap();
        let gs = assemble_gs(&d, k0).unwrap();
        let m = d.index(row, 0);
        for i in 0..d.n {
            for j in 0..d.n - 1 {
                let a = go[(0, d.index(i, j))];
                let b = gs[(m, d.index(i, j + 1))];
                if d.index(i, j + 1) != m {
                    assert!((a - b).norm() <= 1e-12 * b.norm(), "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn operator_assembly_is_deterministic() {
        let d = small_domain();
        let mut layout = default_layout(&d, 2);
        layout.tx.truncate(2);
        let a = OperatorSet::build(&d, &layout, &AntennaModel::default()).unwrap();
        let b = OperatorSet::build(&d, &layout, &AntennaModel::default()).unwrap();
        for (x, y) in a.tones.iter().zip(&b.tones) {
            assert_eq!(x.go, y.go);
            assert_eq!(x.e_i_cells, y.e_i_cells);
            assert_eq!(x.gs.to_matrix(), y.gs.to_matrix());
        }
    }

    #[test]
    fn layout_validation() {
        let d = SensingDomain::default();
        let mut layout = default_layout(&d, 30);
        assert!(layout.validate(&d).is_ok());
        assert_eq!(layout.tx.len(), 4);
        assert_eq!(layout.rx.len(), 40);
        assert_eq!(layout.tones_hz.len(), 30);
        layout.rx[3] = Point::new(0.5, 0.5);
        assert!(layout.validate(&d).is_err());
        let mut layout = default_layout(&d, 3);
        layout.tones_hz.swap(0, 1);
        assert!(layout.validate(&d).is_err());
    }

    #[test]
    fn csi_tones_span_channel_11() {
        let tones = wifi_tones(30);
        assert_eq!(tones.len(), 30);
        assert_eq!(tones[0], 2.462e9 - 28.0 * 312.5e3);
        assert_eq!(tones[29], 2.462e9 + 28.0 * 312.5e3);
        assert!(tones.windows(2).all(|w| w[1] > w[0]));
    }
}

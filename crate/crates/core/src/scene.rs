//! Sensing domain, materials and targets, and their rasterization onto the
//! cell grid as permittivity contrast and material labels.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on targets per scene.
pub const MAX_TARGETS: usize = 8;

/// Label reserved for air.
pub const AIR_LABEL: u8 = 0;

/// 2D point in metres; serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub label: u8,
    /// Relative permittivity, `e^{+jωt}` convention (imaginary part ≤ 0).
    pub eps: Complex64,
}

impl Material {
    pub fn new(name: &str, label: u8, eps: Complex64) -> Self {
        Self { name: name.to_string(), label, eps }
    }

    pub fn air() -> Self {
        Self::new("air", AIR_LABEL, Complex64::new(1.0, 0.0))
    }

    pub fn contrast(&self) -> Complex64 {
        self.eps - 1.0
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps.re.is_finite() && self.eps.im.is_finite()) {
            return Err(Error::InvalidScene(format!("material {} has non-finite permittivity", self.name)));
        }
        if self.eps.im > 0.0 {
            return Err(Error::InvalidScene(format!(
                "material {} has Im(eps) > 0, which is active under e^(+jwt)",
                self.name
            )));
        }
        if self.label == AIR_LABEL && self.eps != Complex64::new(1.0, 0.0) {
            return Err(Error::InvalidScene("label 0 is reserved for air (eps = 1)".into()));
        }
        Ok(())
    }
}

/// Default synthetic material table: air, wood, glass, rubber (labels 0..=3).
///
/// The permittivities are configurable inputs, not measured values.
pub fn default_materials() -> Vec<Material> {
    vec![
        Material::air(),
        Material::new("wood", 1, Complex64::new(2.2, -0.1)),
        Material::new("glass", 2, Complex64::new(5.5, -0.05)),
        Material::new("rubber", 3, Complex64::new(3.0, -0.3)),
    ]
}

/// Square sensing domain `[origin, origin + side]²` split into `n × n` cells.
///
/// Cell `i` maps row-major to `(row, col) = (i / n, i % n)`; rows advance
/// along `y`, columns along `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingDomain {
    pub origin: Point,
    pub side: f64,
    pub n: usize,
}

impl Default for SensingDomain {
    fn default() -> Self {
        Self { origin: Point::new(0.0, 0.0), side: 1.05, n: 40 }
    }
}

impl SensingDomain {
    pub fn new(origin: Point, side: f64, n: usize) -> Result<Self> {
        let d = Self { origin, side, n };
        d.validate()?;
        Ok(d)
    }

    /// Domain of side `side` centered on `center`.
    pub fn centered(center: Point, side: f64, n: usize) -> Result<Self> {
        Self::new(Point::new(center.x - side / 2.0, center.y - side / 2.0), side, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidScene(format!("grid needs n >= 2, got {}", self.n)));
        }
        if !(self.side > 0.0 && self.side.is_finite()) {
            return Err(Error::InvalidScene(format!("side length must be positive, got {}", self.side)));
        }
        if !(self.origin.x.is_finite() && self.origin.y.is_finite()) {
            return Err(Error::InvalidScene("non-finite domain origin".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.n * self.n
    }

    pub fn cell_size(&self) -> f64 {
        self.side / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        let d = self.cell_size();
        d * d
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n + col
    }

    pub fn row_col(&self, i: usize) -> (usize, usize) {
        (i / self.n, i % self.n)
    }

    pub fn cell_center_rc(&self, row: usize, col: usize) -> Point {
        let d = self.cell_size();
        Point::new(self.origin.x + (col as f64 + 0.5) * d, self.origin.y + (row as f64 + 0.5) * d)
    }

    pub fn cell_center(&self, i: usize) -> Point {
        let (r, c) = self.row_col(i);
        self.cell_center_rc(r, c)
    }

    pub fn cell_centers(&self) -> Vec<Point> {
        (0..self.n_cells()).map(|i| self.cell_center(i)).collect()
    }

    /// Closed-square membership.
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.origin.x
            && p.x <= self.origin.x + self.side
            && p.y >= self.origin.y
            && p.y <= self.origin.y + self.side
    }

    pub fn center(&self) -> Point {
        Point::new(self.origin.x + self.side / 2.0, self.origin.y + self.side / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rect { center: Point, w: f64, h: f64 },
    Circle { center: Point, r: f64 },
}

impl Shape {
    pub fn contains(&self, p: &Point) -> bool {
        match *self {
            Shape::Rect { center, w, h } => (p.x - center.x).abs() <= w / 2.0 && (p.y - center.y).abs() <= h / 2.0,
            Shape::Circle { center, r } => center.distance(p) <= r,
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        match *self {
            Shape::Rect { center, w, h } => (
                Point::new(center.x - w / 2.0, center.y - h / 2.0),
                Point::new(center.x + w / 2.0, center.y + h / 2.0),
            ),
            Shape::Circle { center, r } => {
                (Point::new(center.x - r, center.y - r), Point::new(center.x + r, center.y + r))
            }
        }
    }

    pub fn center(&self) -> Point {
        match *self {
            Shape::Rect { center, .. } | Shape::Circle { center, .. } => center,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Shape {
        match *self {
            Shape::Rect { center, w, h } => Shape::Rect { center: Point::new(center.x + dx, center.y + dy), w, h },
            Shape::Circle { center, r } => Shape::Circle { center: Point::new(center.x + dx, center.y + dy), r },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Rect { w, h, .. } => w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite(),
            Shape::Circle { r, .. } => r > 0.0 && r.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScene(format!("degenerate shape {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub label: u8,
    #[serde(flatten)]
    pub shape: Shape,
}

impl Target {
    pub fn rect(label: u8, center: Point, w: f64, h: f64) -> Self {
        Self { label, shape: Shape::Rect { center, w, h } }
    }

    pub fn circle(label: u8, center: Point, r: f64) -> Self {
        Self { label, shape: Shape::Circle { center, r } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub domain: SensingDomain,
    pub materials: Vec<Material>,
    #[serde(default)]
    pub targets: Vec<Target>,
}

impl Scene {
    pub fn empty(domain: SensingDomain) -> Self {
        Self { domain, materials: default_materials(), targets: Vec::new() }
    }

    pub fn material(&self, label: u8) -> Option<&Material> {
        self.materials.iter().find(|m| m.label == label)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        for (i, m) in self.materials.iter().enumerate() {
            m.validate()?;
            if self.materials[..i].iter().any(|o| o.label == m.label) {
                return Err(Error::InvalidScene(format!("duplicate material label {}", m.label)));
            }
        }
        if self.targets.len() > MAX_TARGETS {
            return Err(Error::InvalidScene(format!(
                "{} targets exceed the maximum of {MAX_TARGETS}",
                self.targets.len()
            )));
        }
        for t in &self.targets {
            t.shape.validate()?;
            if t.label == AIR_LABEL {
                return Err(Error::InvalidScene("targets cannot use the air label".into()));
            }
            if self.material(t.label).is_none() {
                return Err(Error::InvalidScene(format!("target label {} has no material", t.label)));
            }
            let (lo, hi) = t.shape.bounds();
            if !(self.domain.contains(&lo) && self.domain.contains(&hi)) {
                return Err(Error::InvalidScene(format!("target {:?} extends outside the sensing domain", t.shape)));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Permittivity contrast `χ = ε − 1` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastGrid {
    pub domain: SensingDomain,
    pub chi: Vec<Complex64>,
}

impl ContrastGrid {
    pub fn zeros(domain: SensingDomain) -> Self {
        Self { chi: vec![Complex64::new(0.0, 0.0); domain.n_cells()], domain }
    }

    pub fn uniform(domain: SensingDomain, value: Complex64) -> Self {
        Self { chi: vec![value; domain.n_cells()], domain }
    }

    pub fn from_vec(domain: SensingDomain, chi: Vec<Complex64>) -> Result<Self> {
        if chi.len() != domain.n_cells() {
            return Err(Error::Shape(format!("{} contrast values for {} cells", chi.len(), domain.n_cells())));
        }
        if chi.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidScene("non-finite contrast".into()));
        }
        Ok(Self { domain, chi })
    }

    /// Indices of cells with non-zero contrast.
    pub fn support(&self) -> Vec<usize> {
        self.chi.iter().enumerate().filter(|(_, z)| **z != Complex64::new(0.0, 0.0)).map(|(i, _)| i).collect()
    }
}

/// Material label per cell (0 = air).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    pub n: usize,
    pub labels: Vec<u8>,
}

impl LabelGrid {
    pub fn air(n: usize) -> Self {
        Self { n, labels: vec![AIR_LABEL; n * n] }
    }

    /// Binary target indicator (1 where not air).
    pub fn indicator(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| if l == AIR_LABEL { 0.0 } else { 1.0 }).collect()
    }

    pub fn occupied(&self) -> usize {
        self.labels.iter().filter(|&&l| l != AIR_LABEL).count()
    }
}

/// Cell-center rasterization. Later targets overwrite earlier ones.
pub fn rasterize(scene: &Scene) -> Result<(ContrastGrid, LabelGrid)> {
    scene.validate()?;
    let domain = scene.domain;
    let mut grid = ContrastGrid::zeros(domain);
    let mut labels = LabelGrid::air(domain.n);
    for t in &scene.targets {
        let chi = scene.material(t.label).map(Material::contrast).expect("validated label");
        let (lo, hi) = t.shape.bounds();
        let d = domain.cell_size();
        // candidate index window, clamped; membership is decided per center
        let col_lo = (((lo.x - domain.origin.x) / d - 0.5).floor().max(0.0)) as usize;
        let col_hi = ((((hi.x - domain.origin.x) / d - 0.5).ceil()).max(0.0) as usize).min(domain.n - 1);
        let row_lo = (((lo.y - domain.origin.y) / d - 0.5).floor().max(0.0)) as usize;
        let row_hi = ((((hi.y - domain.origin.y) / d - 0.5).ceil()).max(0.0) as usize).min(domain.n - 1);
        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                if t.shape.contains(&domain.cell_center_rc(row, col)) {
                    let i = domain.index(row, col);
                    grid.chi[i] = chi;
                    labels.labels[i] = t.label;
                }
            }
        }
    }
    Ok((grid, labels))
}

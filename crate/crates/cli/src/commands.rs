use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use wifield::dataset::{build_dataset, DatasetConfig};
use wifield::forward::{cylinder_oracle, mimo_sweep, sweep, SolverOptions};
use wifield::greens::{default_layout, wavelength, AntennaModel, ArrayLayout, IncidentMode, OperatorSet, ToneOperators};
use wifield::invert::{born_invert, pre_identify, InversionConfig, Optimizer, PreImage};
use wifield::io::{read_wfld, read_wlbl, write_pgm, write_wfld, FieldsJson};
use wifield::linalg::{rel_diff, ComplexMatrix};
use wifield::measure::*;
use wifield::raybase::{compare_models, RayComparisonConfig};
use wifield::scene::{rasterize, Material, Point, Scene, SensingDomain, Target};
use wifield::{Complex64, Error, Result};

#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub metrics: BTreeMap<String, f64>,
}

impl Outcome {
    fn output(mut self, p: &Path) -> Self {
        self.outputs.push(p.to_path_buf());
        self
    }

    fn metric(mut self, name: &str, v: f64) -> Self {
        self.metrics.insert(name.to_string(), v);
        self
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Antenna {
    Antenna3d,
    Line2d,
}

impl From<Antenna> for AntennaModel {
    fn from(a: Antenna) -> Self {
        match a {
            Antenna::Antenna3d => AntennaModel { mode: IncidentMode::Antenna3d, ..AntennaModel::default() },
            Antenna::Line2d => AntennaModel::line2d(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ArrayArgs {
    /// Array layout JSON; without it the default ring around the domain is used.
    #[arg(long)]
    pub array: Option<PathBuf>,
    /// Number of WiFi tones for the default layout.
    #[arg(long, default_value_t = 30)]
    pub tones: usize,
    #[arg(long, value_enum, default_value_t = Antenna::Antenna3d)]
    pub antenna: Antenna,
}

impl ArrayArgs {
    fn layout(&self, domain: &SensingDomain) -> Result<ArrayLayout> {
        let layout = match &self.array {
            Some(p) => ArrayLayout::load(p)?,
            None => {
                if !(1..=30).contains(&self.tones) {
                    return Err(Error::InvalidConfig(format!("--tones must be in 1..=30, got {}", self.tones)));
                }
                default_layout(domain, self.tones)
            }
        };
        layout.validate(domain)?;
        Ok(layout)
    }
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn domain_of(scene: &Option<PathBuf>) -> Result<SensingDomain> {
    match scene {
        Some(p) => Ok(Scene::load(p)?.domain),
        None => Ok(SensingDomain::default()),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ForwardArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub array: ArrayArgs,
    /// Also write the total field in every cell.
    #[arg(long)]
    pub cells: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn forward(a: &ForwardArgs) -> Result<Outcome> {
    let scene = Scene::load(&a.scene)?;
    let layout = a.array.layout(&scene.domain)?;
    let fields = mimo_sweep(&scene, &layout, &a.array.antenna.into())?;
    let json = FieldsJson::from_fields(&fields, a.cells);
    save_json(&a.out, &json)?;
    let max_es = json.e_s_rx.iter().flatten().flatten().map(|v| v.norm()).fold(0.0, f64::max);
    Ok(Outcome::default().output(&a.out).metric("tones", fields.tones.len() as f64).metric("max_abs_scattered", max_es))
}

#[derive(Debug, Args, Serialize)]
pub struct CylinderArgs {
    /// Cylinder radius in wavelengths.
    #[arg(long, default_value_t = 0.25)]
    pub radius_wl: f64,
    #[arg(long, default_value_t = 2.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 2.462e9)]
    pub freq: f64,
    /// Cells per side of the MoM grid over the cylinder's bounding square.
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    /// Receivers on the observation circle.
    #[arg(long, default_value_t = 40)]
    pub receivers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

const CYLINDER_LABEL: u8 = 200;

#[derive(Serialize)]
struct CylinderReport {
    source: Point,
    rx: Vec<Point>,
    series: Vec<Complex64>,
    mom: Vec<Complex64>,
    rel_err: f64,
}

pub fn oracle_cylinder(a: &CylinderArgs) -> Result<Outcome> {
    if a.receivers == 0 {
        return Err(Error::InvalidConfig("--receivers must be positive".into()));
    }
    let lambda = wavelength(a.freq);
    let radius = a.radius_wl * lambda;
    let center = Point::new(0.0, 0.0);
    let ring = (1.5 * lambda).max(3.0 * radius);
    let source = Point::new(-(2.0 * lambda).max(4.0 * radius), 0.3 * lambda);
    let rx: Vec<Point> = (0..a.receivers)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / a.receivers as f64;
            Point::new(ring * t.cos(), ring * t.sin())
        })
        .collect();
    let series = cylinder_oracle(radius, a.eps, 2.0 * PI / lambda, center, source, &rx)?;

    let domain = SensingDomain::centered(center, 2.0 * radius, a.n)?;
    let mut scene = Scene::empty(domain);
    scene.materials.push(Material::new("cylinder", CYLINDER_LABEL, Complex64::new(a.eps, 0.0)));
    scene.targets.push(Target::circle(CYLINDER_LABEL, center, radius));
    let layout = ArrayLayout { tx: vec![source], rx: rx.clone(), tones_hz: vec![a.freq] };
    let ops = OperatorSet::build(&domain, &layout, &AntennaModel::line2d())?;
    let (chi, _) = rasterize(&scene)?;
    let fields = sweep(&chi, &ops, &SolverOptions::default())?;
    let mom = fields.tones[0].e_s_rx.row(0).to_vec();
    let rel_err = rel_diff(&mom, &series);
    save_json(&a.out, &CylinderReport { source, rx, series, mom, rel_err })?;
    Ok(Outcome::default().output(&a.out).metric("rel_err", rel_err))
}

#[derive(Debug, Args, Serialize)]
pub struct RayArgs {
    #[arg(long, default_value_t = 5e9)]
    pub freq: f64,
    #[arg(long, default_value_t = 10.0)]
    pub eps: f64,
    /// Slab lengths in wavelengths (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub l: Option<Vec<f64>>,
    /// Receiver distances behind the slab in metres (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<f64>>,
    /// Mesh density inside the slab, cells per dielectric wavelength.
    #[arg(long)]
    pub cpw: Option<f64>,
    /// Summary JSON (defaults to the CSV path with a .summary.json suffix).
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn compare_ray(a: &RayArgs) -> Result<Outcome> {
    let mut cfg = RayComparisonConfig { freq_hz: a.freq, eps_r: a.eps, ..RayComparisonConfig::default() };
    if let Some(l) = &a.l {
        cfg.l_over_lambda = l.clone();
    }
    if let Some(d) = &a.d {
        cfg.d_values = d.clone();
    }
    if let Some(c) = a.cpw {
        cfg.cells_per_wavelength = c;
    }
    let cmp = compare_models(&cfg)?;
    std::fs::write(&a.out, cmp.to_csv())?;
    let summary = cmp.summary();
    let summary_path = a.summary.clone().unwrap_or_else(|| a.out.with_extension("summary.json"));
    save_json(&summary_path, &summary)?;
    let mut out = Outcome::default()
        .output(&a.out)
        .output(&summary_path)
        .metric("max_rel_err_first_l", cmp.rel_err[0].iter().copied().fold(0.0, f64::max))
        .metric("mean_rel_err_last_l", *summary.mean_err_by_l.last().unwrap_or(&f64::NAN));
    if cfg.l_over_lambda.contains(&0.5) {
        out = out.metric("max_err_at_halflambda", summary.max_err_at_halflambda);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    Complex,
    Amplitude,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub array: ArrayArgs,
    /// Link gain table JSON; unit gains when omitted.
    #[arg(long)]
    pub gains: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Standard deviation of the additive noise.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = Noise::Complex)]
    pub noise_model: Noise,
    /// Keep the packet phase fixed instead of drawing it per packet.
    #[arg(long)]
    pub fixed_phase: bool,
    #[arg(long, default_value_t = 0.0)]
    pub agc_jitter: f64,
    /// Store amplitudes only.
    #[arg(long)]
    pub amplitude_only: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn simulate(a: &SimulateArgs, seed: u64) -> Result<Outcome> {
    let scene = Scene::load(&a.scene)?;
    let layout = a.array.layout(&scene.domain)?;
    let fields = mimo_sweep(&scene, &layout, &a.array.antenna.into())?;
    let gains = match &a.gains {
        Some(p) => GainTable::load(p)?,
        None => GainTable::uniform(layout.tx.len(), layout.rx.len(), 1.0),
    };
    let noise = NoiseConfig {
        amp_noise_sigma: a.sigma,
        noise_model: match a.noise_model {
            Noise::Complex => NoiseModel::Complex,
            Noise::Amplitude => NoiseModel::Amplitude,
        },
        packet_phase: if a.fixed_phase { PacketPhase::None } else { PacketPhase::UniformRandom },
        agc_jitter: a.agc_jitter,
        seed,
    };
    let mut meas = simulate_csi(&fields, &gains, &noise, a.samples)?;
    meas.empty_scene = scene.targets.is_empty();
    if a.amplitude_only {
        meas = meas.to_amplitude_only();
    }
    meas.save(&a.out)?;
    Ok(Outcome::default().output(&a.out).metric("links", meas.links.len() as f64).metric("samples", a.samples as f64))
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Empty-scene measurements.
    #[arg(long)]
    pub meas: PathBuf,
    /// Scene whose domain positions the default array.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[command(flatten)]
    pub array: ArrayArgs,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn calibrate(a: &CalibrateArgs) -> Result<Outcome> {
    let meas = MeasurementSet::load(&a.meas)?;
    let layout = a.array.layout(&domain_of(&a.scene)?)?;
    let gains = calibrate_gains(&meas, &layout, &a.array.antenna.into(), &PreprocessConfig::default())?;
    gains.save(&a.out)?;
    let lo = gains.gains.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = gains.gains.iter().copied().fold(0.0, f64::max);
    Ok(Outcome::default().output(&a.out).metric("min_gain", lo).metric("max_gain", hi))
}

#[derive(Debug, Args, Serialize)]
pub struct BornArgs {
    /// Fields JSON as written by `forward`.
    #[arg(long)]
    pub fields: PathBuf,
    /// Scene providing the domain (and the ground truth for the error metric).
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub array: ArrayArgs,
    #[arg(long, default_value_t = 0)]
    pub tone: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn invert_born(a: &BornArgs) -> Result<Outcome> {
    let fields: FieldsJson = serde_json::from_slice(&std::fs::read(&a.fields)?)?;
    let scene = Scene::load(&a.scene)?;
    let layout = a.array.layout(&scene.domain)?;
    let freq = *fields
        .tones_hz
        .get(a.tone)
        .ok_or_else(|| Error::InvalidConfig(format!("tone {} not in fields file ({} tones)", a.tone, fields.tones_hz.len())))?;
    let rows = &fields.e_s_rx[a.tone];
    let (p, q) = (rows.len(), rows.first().map_or(0, |r| r.len()));
    if p != layout.tx.len() || q != layout.rx.len() {
        return Err(Error::Shape(format!("fields are {p}×{q}, array is {}×{}", layout.tx.len(), layout.rx.len())));
    }
    let e_s = ComplexMatrix::from_vec(p, q, rows.iter().flatten().copied().collect())?;
    let ops = ToneOperators::build(&scene.domain, &layout, &a.array.antenna.into(), freq)?;
    let chi = born_invert(&e_s, &ops, a.alpha)?;
    let mut out = Outcome::default().output(&a.out);
    if !scene.targets.is_empty() {
        let (truth, _) = rasterize(&scene)?;
        out = out.metric("rel_err", rel_diff(&chi, &truth.chi));
    }
    write_wfld(&a.out, &PreImage::new(1, scene.domain.n, chi)?)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Adam,
    Lbfgs,
}

#[derive(Debug, Args, Serialize)]
pub struct PhaselessArgs {
    #[arg(long)]
    pub meas: PathBuf,
    #[arg(long)]
    pub gains: PathBuf,
    /// Scene providing the domain.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[command(flatten)]
    pub array: ArrayArgs,
    /// Inversion configuration JSON; individual flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Label grid used as the position prior.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn invert_phaseless(a: &PhaselessArgs, seed: u64) -> Result<Outcome> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_slice(&std::fs::read(p)?)?,
        None => InversionConfig::default(),
    };
    if let Some(o) = a.optimizer {
        cfg.optimizer = match o {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Lbfgs => Optimizer::Lbfgs,
        };
    }
    cfg.alpha = a.alpha.unwrap_or(cfg.alpha);
    cfg.max_iters = a.iters.unwrap_or(cfg.max_iters);
    cfg.step_size = a.lr.unwrap_or(cfg.step_size);
    cfg.seed = seed;

    let domain = domain_of(&a.scene)?;
    let layout = a.array.layout(&domain)?;
    let ops = OperatorSet::build(&domain, &layout, &a.array.antenna.into())?;
    let meas = MeasurementSet::load(&a.meas)?;
    let gains = GainTable::load(&a.gains)?;
    let amps = normalize_total_field(&meas, &gains, &PreprocessConfig::default())?;
    let prior = match &a.labels {
        Some(p) => {
            let grid = read_wlbl(p)?;
            if grid.n != domain.n {
                return Err(Error::Shape(format!("label grid is {0}×{0}, domain is {1}×{1}", grid.n, domain.n)));
            }
            Some(grid.indicator())
        }
        None => None,
    };
    let pre = pre_identify(&amps, &ops, &cfg, prior.as_deref())?;
    write_wfld(&a.out, &pre)?;
    let peak = pre.chi.iter().map(|c| c.norm()).fold(0.0, f64::max);
    Ok(Outcome::default().output(&a.out).metric("tones", pre.n_tone as f64).metric("max_abs_chi", peak))
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    /// Dataset configuration JSON; defaults reproduce the full 197-combination table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stop after this many records (the manifest is then marked incomplete).
    #[arg(long)]
    pub limit: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn gen_dataset(a: &DatasetArgs, seed: u64) -> Result<Outcome> {
    let mut cfg: DatasetConfig = match &a.config {
        Some(p) => serde_json::from_slice(&std::fs::read(p)?)?,
        None => DatasetConfig::default(),
    };
    cfg.seed = seed;
    let manifest = build_dataset(&cfg, &a.out, a.limit)?;
    Ok(Outcome::default()
        .output(&a.out.join("manifest.json"))
        .metric("records", manifest.records.len() as f64)
        .metric("planned_records", manifest.planned_records as f64)
        .metric("failures", manifest.failures.len() as f64)
        .metric("complete", if manifest.complete { 1.0 } else { 0.0 }))
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    /// Pre-image file; renders |chi| of one tone.
    #[arg(long, required_unless_present = "labels")]
    pub chi: Option<PathBuf>,
    /// Label grid file; renders the class indices.
    #[arg(long, conflicts_with = "chi")]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub tone: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn render(a: &RenderArgs) -> Result<Outcome> {
    let (n, values) = if let Some(p) = &a.chi {
        let pre = read_wfld(p)?;
        if a.tone >= pre.n_tone {
            return Err(Error::InvalidConfig(format!("tone {} out of range ({} tones)", a.tone, pre.n_tone)));
        }
        (pre.n, pre.tone(a.tone).iter().map(|c| c.norm()).collect::<Vec<_>>())
    } else {
        let grid = read_wlbl(a.labels.as_ref().expect("clap enforces one source"))?;
        (grid.n, grid.labels.iter().map(|&l| l as f64).collect())
    };
    write_pgm(&a.out, &values, n, n)?;
    Ok(Outcome::default().output(&a.out).metric("pixels", (n * n) as f64))
}

//! Synthetic training data: scene sampling, the simulate → preprocess →
//! pre-identify pipeline, and the on-disk dataset layout.
//!
//! Directory layout:
//!
//! ```text
//! manifest.json
//! scenes/cNNN.json      one scene per position combination
//! labels/cNNN.wlbl      its label grid
//! pre/cNNN_rRR.wfld     one pre-image per repetition
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{sweep, FieldSet, SolverOptions};
use crate::greens::{default_layout, AntennaModel, ArrayLayout, OperatorSet};
use crate::invert::{pre_identify, InversionConfig, PreImage};
use crate::io::{write_wfld, write_wlbl};
use crate::measure::{calibrate_gains, normalize_total_field, simulate_csi, GainTable, NoiseConfig, PreprocessConfig};
use crate::scene::{default_materials, rasterize, ContrastGrid, LabelGrid, Material, Point, Scene, SensingDomain, Shape, Target};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
pub const MANIFEST_VERSION: u32 = 1;

/// One row of the combination table: a multiset of materials and how many
/// random placements to draw for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboSpec {
    pub materials: Vec<String>,
    pub positions: usize,
}

impl ComboSpec {
    fn new(materials: &[&str], positions: usize) -> Self {
        Self { materials: materials.iter().map(|s| s.to_string()).collect(), positions }
    }
}

/// The measured material combinations: 197 position combinations in total.
pub fn default_combos() -> Vec<ComboSpec> {
    vec![
        ComboSpec::new(&["wood"], 15),
        ComboSpec::new(&["rubber"], 15),
        ComboSpec::new(&["glass"], 15),
        ComboSpec::new(&["rubber", "rubber"], 15),
        ComboSpec::new(&["glass", "wood"], 15),
        ComboSpec::new(&["glass", "rubber"], 15),
        ComboSpec::new(&["glass", "glass"], 15),
        ComboSpec::new(&["wood", "wood"], 20),
        ComboSpec::new(&["rubber", "wood"], 15),
        ComboSpec::new(&["rubber", "rubber", "rubber"], 15),
        ComboSpec::new(&["wood", "wood", "wood"], 22),
        ComboSpec::new(&["rubber", "wood", "glass"], 20),
    ]
}

/// Rectangular footprint of a material's sample (m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub material: String,
    pub w: f64,
    pub h: f64,
}

pub fn default_footprints() -> Vec<Footprint> {
    vec![
        Footprint { material: "wood".into(), w: 0.05, h: 0.10 },
        Footprint { material: "rubber".into(), w: 0.05, h: 0.10 },
        Footprint { material: "glass".into(), w: 0.05, h: 0.05 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitConfig {
    /// Every record is assigned independently.
    Iid { train_fraction: f64 },
    /// All repetitions of a position combination share a split.
    PositionHeldOut { train_fraction: f64 },
}

impl SplitConfig {
    pub fn train_fraction(&self) -> f64 {
        match *self {
            SplitConfig::Iid { train_fraction } | SplitConfig::PositionHeldOut { train_fraction } => train_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// Everything needed to go from a scene to a noisy pre-image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// CSI samples per link and repetition (one second at 100 Hz).
    pub n_samples: usize,
    pub csi_noise: NoiseConfig,
    pub preprocess: PreprocessConfig,
    pub inversion: InversionConfig,
    /// Feed the ground-truth indicator to the position regularizer
    /// (only meaningful with `inversion.alpha > 0`).
    pub use_label_prior: bool,
    /// Variance of the complex Gaussian noise added to every pre-image value.
    pub preimage_noise_var: f64,
    /// Transmitter and receiver gains are drawn uniformly from this range.
    pub gain_range: (f64, f64),
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            csi_noise: NoiseConfig { amp_noise_sigma: 0.01, ..NoiseConfig::default() },
            preprocess: PreprocessConfig::default(),
            inversion: InversionConfig { alpha: 1e-2, ..InversionConfig::default() },
            use_label_prior: true,
            preimage_noise_var: 0.2,
            gain_range: (0.5, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub combos: Vec<ComboSpec>,
    pub reps: usize,
    pub n_tone: usize,
    pub n_class: usize,
    pub split: SplitConfig,
    pub seed: u64,
    pub domain: SensingDomain,
    pub materials: Vec<Material>,
    pub footprints: Vec<Footprint>,
    /// Randomly swap a footprint's width and height.
    pub random_orientation: bool,
    pub antenna: AntennaModel,
    pub pipeline: PipelineConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            combos: default_combos(),
            reps: 20,
            n_tone: 30,
            n_class: 4,
            split: SplitConfig::Iid { train_fraction: 0.8 },
            seed: 0,
            domain: SensingDomain::default(),
            materials: default_materials(),
            footprints: default_footprints(),
            random_orientation: true,
            antenna: AntennaModel::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let f = self.split.train_fraction();
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidConfig(format!("train fraction must lie in (0, 1), got {f}")));
        }
        if self.reps == 0 || self.n_tone == 0 || self.n_tone > 30 {
            return Err(Error::InvalidConfig("reps must be positive and n_tone within 1..=30".into()));
        }
        if self.combos.is_empty() {
            return Err(Error::InvalidConfig("combination table is empty".into()));
        }
        let mut labels = BTreeSet::new();
        for (i, c) in self.combos.iter().enumerate() {
            if c.materials.is_empty() {
                return Err(Error::InvalidConfig(format!("combination {i} has no targets")));
            }
            if c.positions == 0 {
                return Err(Error::InvalidConfig(format!("combination {i} has no positions")));
            }
            for name in &c.materials {
                let m = self.material(name)?;
                if m.label == 0 {
                    return Err(Error::InvalidConfig(format!("combination {i} places air as a target")));
                }
                self.footprint(name)?;
                labels.insert(m.label);
            }
        }
        if self.n_class != labels.len() + 1 {
            return Err(Error::InvalidConfig(format!(
                "n_class is {} but the table uses {} materials plus air",
                self.n_class,
                labels.len()
            )));
        }
        if self.pipeline.preimage_noise_var < 0.0 || self.pipeline.n_samples == 0 {
            return Err(Error::InvalidConfig("noise variance must be non-negative and n_samples positive".into()));
        }
        let (lo, hi) = self.pipeline.gain_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidConfig("gain range must be positive".into()));
        }
        self.pipeline.inversion.validate()?;
        self.pipeline.csi_noise.validate()
    }

    fn material(&self, name: &str) -> Result<&Material> {
        self.materials
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown material {name}")))
    }

    fn footprint(&self, name: &str) -> Result<&Footprint> {
        self.footprints
            .iter()
            .find(|f| f.material == name)
            .ok_or_else(|| Error::InvalidConfig(format!("no footprint for material {name}")))
    }

    pub fn total_combinations(&self) -> usize {
        self.combos.iter().map(|c| c.positions).sum()
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(json)[..8])
    }
}

/// A sampled placement for one position combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub combo_id: usize,
    pub table_row: usize,
    pub scene: Scene,
}

fn separated(a: &Shape, b: &Shape, gap: f64) -> bool {
    let (a0, a1) = a.bounds();
    let (b0, b1) = b.bounds();
    a1.x + gap <= b0.x || b1.x + gap <= a0.x || a1.y + gap <= b0.y || b1.y + gap <= a0.y
}

/// Uniform non-overlapping placements for every combination, at least one
/// cell apart; combinations are numbered consecutively across table rows.
pub fn sample_scenes(cfg: &DatasetConfig, rng: &mut impl Rng) -> Result<Vec<SceneRecord>> {
    cfg.validate()?;
    let d = cfg.domain;
    let gap = d.cell_size();
    let mut out = Vec::with_capacity(cfg.total_combinations());
    for (row, combo) in cfg.combos.iter().enumerate() {
        for _ in 0..combo.positions {
            let mut targets: Vec<Target> = Vec::with_capacity(combo.materials.len());
            for name in &combo.materials {
                let m = cfg.material(name)?;
                let fp = cfg.footprint(name)?;
                let mut placed = None;
                for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                    let (w, h) = if cfg.random_orientation && rng.gen::<bool>() { (fp.h, fp.w) } else { (fp.w, fp.h) };
                    if w >= d.side || h >= d.side {
                        return Err(Error::InvalidConfig(format!("{name} does not fit in the domain")));
                    }
                    let cx = d.origin.x + w / 2.0 + rng.gen::<f64>() * (d.side - w);
                    let cy = d.origin.y + h / 2.0 + rng.gen::<f64>() * (d.side - h);
                    let t = Target::rect(m.label, Point::new(cx, cy), w, h);
                    if targets.iter().all(|o| separated(&o.shape, &t.shape, gap)) {
                        placed = Some(t);
                        break;
                    }
                }
                let t = placed.ok_or_else(|| {
                    Error::InvalidConfig(format!("could not place {name} after {MAX_PLACEMENT_ATTEMPTS} attempts"))
                })?;
                targets.push(t);
            }
            let scene = Scene { domain: d, materials: cfg.materials.clone(), targets };
            scene.validate()?;
            out.push(SceneRecord { combo_id: out.len(), table_row: row, scene });
        }
    }
    Ok(out)
}

/// Split tag for every (combo, rep), index `combo * reps + rep`.
pub fn assign_splits(cfg: &DatasetConfig, n_combos: usize, rng: &mut impl Rng) -> Vec<SplitTag> {
    let reps = cfg.reps;
    match cfg.split {
        SplitConfig::Iid { train_fraction } => {
            let total = n_combos * reps;
            let mut order: Vec<usize> = (0..total).collect();
            order.shuffle(rng);
            let n_train = (train_fraction * total as f64).round() as usize;
            let mut tags = vec![SplitTag::Test; total];
            for &i in &order[..n_train] {
                tags[i] = SplitTag::Train;
            }
            tags
        }
        SplitConfig::PositionHeldOut { train_fraction } => {
            let mut order: Vec<usize> = (0..n_combos).collect();
            order.shuffle(rng);
            let n_train = (train_fraction * n_combos as f64).round() as usize;
            let mut combo_tags = vec![SplitTag::Test; n_combos];
            for &c in &order[..n_train] {
                combo_tags[c] = SplitTag::Train;
            }
            (0..n_combos * reps).map(|i| combo_tags[i / reps]).collect()
        }
    }
}

/// Operators, array and gains shared by every record of a dataset.
pub struct SensingSetup {
    pub ops: OperatorSet,
    pub antenna: AntennaModel,
    pub true_gains: GainTable,
    pub calibrated: GainTable,
}

fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

impl SensingSetup {
    /// Builds operators for `layout`, draws the true gains and calibrates them
    /// from a simulated empty-scene capture.
    pub fn new(domain: &SensingDomain, layout: &ArrayLayout, antenna: &AntennaModel, pipeline: &PipelineConfig, seed: u64) -> Result<Self> {
        let ops = OperatorSet::build(domain, layout, antenna)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x6761_696e]));
        let (lo, hi) = pipeline.gain_range;
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| if hi > lo { rng.gen_range(lo..hi) } else { lo }).collect() };
        let g_tx = draw(layout.tx.len());
        let g_rx = draw(layout.rx.len());
        let true_gains = GainTable::from_factors(&g_tx, &g_rx);
        let empty = sweep(&ContrastGrid::zeros(ops.domain), &ops, &SolverOptions::default())?;
        let noise = NoiseConfig { seed: derive_seed(seed, &[0x656d_7074]), ..pipeline.csi_noise };
        let mut meas = simulate_csi(&empty, &true_gains, &noise, pipeline.n_samples.max(pipeline.preprocess.window))?;
        meas.empty_scene = true;
        let calibrated = calibrate_gains(&meas, layout, antenna, &pipeline.preprocess)?;
        Ok(Self { ops, antenna: *antenna, true_gains, calibrated })
    }

    pub fn fields(&self, scene: &Scene) -> Result<FieldSet> {
        if scene.domain != self.ops.domain {
            return Err(Error::Shape("scene domain differs from the sensing setup".into()));
        }
        let (chi, _) = rasterize(scene)?;
        sweep(&chi, &self.ops, &SolverOptions::default())
    }

    /// One repetition: CSI capture, preprocessing and phaseless inversion
    /// (without the pre-image noise).
    pub fn preimage(&self, fields: &FieldSet, labels: &LabelGrid, pipeline: &PipelineConfig, seed: u64) -> Result<PreImage> {
        let noise = NoiseConfig { seed, ..pipeline.csi_noise };
        let meas = simulate_csi(fields, &self.true_gains, &noise, pipeline.n_samples)?;
        let amps = normalize_total_field(&meas, &self.calibrated, &pipeline.preprocess)?;
        let indicator = labels.indicator();
        let prior = (pipeline.use_label_prior && pipeline.inversion.alpha > 0.0).then_some(indicator.as_slice());
        pre_identify(&amps, &self.ops, &pipeline.inversion, prior)
    }
}

/// Adds circular complex Gaussian noise of total variance `var` to every value.
pub fn add_preimage_noise(pre: &mut PreImage, var: f64, rng: &mut impl Rng) {
    if var <= 0.0 {
        return;
    }
    let s = (var / 2.0).sqrt();
    for c in pre.chi.iter_mut() {
        let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        c.re += s * a;
        c.im += s * b;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub scene: String,
    pub preimage: String,
    pub label: String,
    pub combo_id: usize,
    pub rep_id: usize,
    pub split: SplitTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub combo_id: usize,
    pub rep_id: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub n_tone: usize,
    pub n: usize,
    pub n_class: usize,
    pub class_names: Vec<String>,
    pub split: SplitConfig,
    pub tones_hz: Vec<f64>,
    pub combinations: usize,
    pub reps: usize,
    pub planned_records: usize,
    /// False when generation was limited or any record failed.
    pub complete: bool,
    pub records: Vec<ManifestRecord>,
    pub failures: Vec<RecordFailure>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// The full generation plan: scenes, split tags and the array layout.
pub struct DatasetPlan {
    pub scenes: Vec<SceneRecord>,
    pub splits: Vec<SplitTag>,
    pub layout: ArrayLayout,
}

pub fn plan_dataset(cfg: &DatasetConfig) -> Result<DatasetPlan> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scenes = sample_scenes(cfg, &mut rng)?;
    let splits = assign_splits(cfg, scenes.len(), &mut rng);
    Ok(DatasetPlan { layout: default_layout(&cfg.domain, cfg.n_tone), scenes, splits })
}

/// Generate the dataset into `out_dir`. `limit` caps the number of
/// (combination, repetition) records actually built, in plan order.
pub fn build_dataset(cfg: &DatasetConfig, out_dir: impl AsRef<Path>, limit: Option<usize>) -> Result<DatasetManifest> {
    let plan = plan_dataset(cfg)?;
    let out = out_dir.as_ref();
    for sub in ["scenes", "labels", "pre"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    let setup = SensingSetup::new(&cfg.domain, &plan.layout, &cfg.antenna, &cfg.pipeline, cfg.seed)?;
    let planned = plan.scenes.len() * cfg.reps;
    let budget = limit.unwrap_or(planned).min(planned);
    let mut records = Vec::with_capacity(budget);
    let mut failures = Vec::new();
    let mut built = 0;
    'scenes: for rec in &plan.scenes {
        if built >= budget {
            break;
        }
        let c = rec.combo_id;
        let scene_rel = format!("scenes/c{c:03}.json");
        let label_rel = format!("labels/c{c:03}.wlbl");
        let prepared = (|| -> Result<(FieldSet, LabelGrid)> {
            rec.scene.save(out.join(&scene_rel))?;
            let (_, labels) = rasterize(&rec.scene)?;
            write_wlbl(out.join(&label_rel), &labels)?;
            Ok((setup.fields(&rec.scene)?, labels))
        })();
        let (fields, labels) = match prepared {
            Ok(v) => v,
            Err(e) => {
                for rep in 0..cfg.reps.min(budget - built) {
                    failures.push(RecordFailure { combo_id: c, rep_id: rep, error: e.to_string() });
                }
                built += cfg.reps.min(budget - built);
                continue;
            }
        };
        for rep in 0..cfg.reps {
            if built >= budget {
                break 'scenes;
            }
            built += 1;
            let pre_rel = format!("pre/c{c:03}_r{rep:02}.wfld");
            let result = (|| -> Result<()> {
                let seed = derive_seed(cfg.seed, &[c as u64, rep as u64]);
                let mut pre = setup.preimage(&fields, &labels, &cfg.pipeline, seed)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x6e6f_6973]));
                add_preimage_noise(&mut pre, cfg.pipeline.preimage_noise_var, &mut rng);
                pre.config_hash = cfg.hash();
                pre.measurement_id = Some(format!("c{c:03}_r{rep:02}"));
                write_wfld(out.join(&pre_rel), &pre)
            })();
            match result {
                Ok(()) => records.push(ManifestRecord {
                    scene: scene_rel.clone(),
                    preimage: pre_rel,
                    label: label_rel.clone(),
                    combo_id: c,
                    rep_id: rep,
                    split: plan.splits[c * cfg.reps + rep],
                }),
                Err(e) => failures.push(RecordFailure { combo_id: c, rep_id: rep, error: e.to_string() }),
            }
        }
    }
    let mut class_names = vec![String::new(); cfg.n_class];
    for m in &cfg.materials {
        if let Some(slot) = class_names.get_mut(m.label as usize) {
            *slot = m.name.clone();
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        n_tone: cfg.n_tone,
        n: cfg.domain.n,
        n_class: cfg.n_class,
        class_names,
        split: cfg.split,
        tones_hz: plan.layout.tones_hz.clone(),
        combinations: plan.scenes.len(),
        reps: cfg.reps,
        planned_records: planned,
        complete: failures.is_empty() && records.len() == planned,
        records,
        failures,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

use wifield::forward::{mimo_sweep, FieldSet};
use wifield::greens::{default_layout, AntennaModel, OperatorSet};
use wifield::invert::{pre_identify, InversionConfig, Optimizer, PreImage};
use wifield::measure::*;
use wifield::scene::{Material, Point, Scene, SensingDomain, Target};
use wifield::Complex64 as C64;

fn setup(with_target: bool) -> (OperatorSet, FieldSet) {
    let domain = SensingDomain::new(Point::new(0.0, 0.0), 1.0, 16).unwrap();
    let layout = default_layout(&domain, 2);
    let mut scene = Scene::empty(domain);
    if with_target {
        scene.materials.push(Material::new("block", 4, C64::new(2.5, -0.1)));
        scene.targets.push(Target::rect(4, Point::new(0.4, 0.55), 0.15, 0.1));
    }
    let antenna = AntennaModel::default();
    let fields = mimo_sweep(&scene, &layout, &antenna).unwrap();
    (OperatorSet::build(&domain, &layout, &antenna).unwrap(), fields)
}

fn config() -> InversionConfig {
    InversionConfig { max_iters: 60, ..InversionConfig::default() }
}

fn preimage(ops: &OperatorSet, meas: &MeasurementSet, gains: &GainTable, cfg: &InversionConfig) -> PreImage {
    let amps = normalize_total_field(meas, gains, &PreprocessConfig::default()).unwrap();
    pre_identify(&amps, ops, cfg, None).unwrap()
}

fn max_diff(a: &PreImage, b: &PreImage) -> f64 {
    a.chi.iter().zip(&b.chi).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn empty_scene_gives_empty_preimage() {
    let (ops, fields) = setup(false);
    let gains = GainTable::uniform(ops.n_tx(), ops.n_rx(), 1.0);
    let meas = simulate_csi(&fields, &gains, &NoiseConfig::noiseless(), 50).unwrap();
    for optimizer in [Optimizer::Adam, Optimizer::Lbfgs] {
        let pre = preimage(&ops, &meas, &gains, &InversionConfig { optimizer, ..config() });
        let inf = pre.chi.iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(inf < 1e-3, "{optimizer:?}: {inf}");
    }
}

#[test]
fn preimage_ignores_packet_phase() {
    let (ops, fields) = setup(true);
    let gains = GainTable::uniform(ops.n_tx(), ops.n_rx(), 1.0);
    let clean = simulate_csi(&fields, &gains, &NoiseConfig::noiseless(), 50).unwrap();
    let scrambled = simulate_csi(&fields, &gains, &NoiseConfig { seed: 31, packet_phase: PacketPhase::UniformRandom, ..NoiseConfig::noiseless() }, 50).unwrap();
    let (a, b) = (preimage(&ops, &clean, &gains, &config()), preimage(&ops, &scrambled, &gains, &config()));
    assert!(max_diff(&a, &b) <= 1e-9, "{}", max_diff(&a, &b));
    assert!(a.chi.iter().any(|c| c.norm() > 1e-3));
}

#[test]
fn preimage_ignores_per_transmitter_and_global_scaling() {
    let (ops, fields) = setup(true);
    let unit = GainTable::uniform(ops.n_tx(), ops.n_rx(), 1.0);
    let base = simulate_csi(&fields, &unit, &NoiseConfig::noiseless(), 50).unwrap();
    let reference = preimage(&ops, &base, &unit, &config());

    // transmitter gains the calibration does not know about
    let tx_scaled = GainTable::from_factors(&[0.7, 1.9, 1.2, 0.55], &vec![1.0; ops.n_rx()]);
    let meas = simulate_csi(&fields, &tx_scaled, &NoiseConfig::noiseless(), 50).unwrap();
    let got = preimage(&ops, &meas, &unit, &config());
    assert!(max_diff(&reference, &got) <= 1e-9, "per-tx: {}", max_diff(&reference, &got));

    // a global AGC change
    let mut agc = unit.clone();
    agc.agc = vec![2.0; ops.n_rx()];
    let meas = simulate_csi(&fields, &agc, &NoiseConfig::noiseless(), 50).unwrap();
    let got = preimage(&ops, &meas, &unit, &config());
    assert!(max_diff(&reference, &got) <= 1e-9, "agc: {}", max_diff(&reference, &got));
}

#[test]
fn preimage_records_its_configuration() {
    let (ops, fields) = setup(true);
    let gains = GainTable::uniform(ops.n_tx(), ops.n_rx(), 1.0);
    let meas = simulate_csi(&fields, &gains, &NoiseConfig::noiseless(), 20).unwrap();
    let cfg = config();
    let pre = preimage(&ops, &meas, &gains, &cfg);
    assert_eq!(pre.config_hash, cfg.hash());
    assert_eq!((pre.n_tone, pre.n), (2, 16));
    assert_eq!(pre.tone(1).len(), 256);
}

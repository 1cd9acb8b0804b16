//! The static experiment world: deployment geometry, large-scale fading,
//! pilot book and sparse activity draws.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{complex_normal, streams, RngStream};

/// Scalar system parameters.
///
/// Powers are linear and normalized so that `noise_var = 1` corresponds to
/// the receiver noise floor; the default `tx_power` is 125 dB above it
/// (100 mW into a 1 MHz band with a 9 dB noise figure).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub area_side_km: f64,
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_devices: usize,
    pub pilot_len: usize,
    pub activation_prob: f64,
    pub tx_power: f64,
    pub noise_var: f64,
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub cluster_size: usize,
    pub master_seed: u64,
    /// Path loss at 1 m, in dB (negative).
    pub pathloss_intercept_db: f64,
    /// Path loss slope in dB per decade of distance.
    pub pathloss_slope_db: f64,
    pub min_distance_m: f64,
    /// Log-normal shadowing standard deviation in dB; 0 disables it.
    pub shadowing_std_db: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area_side_km: 1.0,
            num_aps: 20,
            antennas_per_ap: 2,
            num_devices: 100,
            pilot_len: 40,
            activation_prob: 0.1,
            tx_power: 10f64.powf(12.5),
            noise_var: 1.0,
            hidden_units: 512,
            hidden_layers: 1,
            cluster_size: 4,
            master_seed: 1,
            pathloss_intercept_db: -30.5,
            pathloss_slope_db: 36.7,
            min_distance_m: 10.0,
            shadowing_std_db: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_aps", self.num_aps),
            ("antennas_per_ap", self.antennas_per_ap),
            ("num_devices", self.num_devices),
            ("pilot_len", self.pilot_len),
            ("hidden_units", self.hidden_units),
            ("hidden_layers", self.hidden_layers),
            ("cluster_size", self.cluster_size),
        ];
        for (key, value) in counts {
            if value < 1 {
                return Err(Error::invalid(key, "must be at least 1"));
            }
        }
        if self.hidden_layers != 1 {
            return Err(Error::invalid("hidden_layers", "only a single hidden layer is supported"));
        }
        if self.cluster_size > self.num_aps {
            return Err(Error::invalid(
                "cluster_size",
                format!("cluster size T = {} exceeds num_aps M = {}", self.cluster_size, self.num_aps),
            ));
        }
        if !(0.0..=1.0).contains(&self.activation_prob) {
            return Err(Error::invalid("activation_prob", "must lie in [0, 1]"));
        }
        if !(self.tx_power > 0.0 && self.tx_power.is_finite()) {
            return Err(Error::invalid("tx_power", "must be positive and finite"));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::invalid("noise_var", "must be nonnegative and finite"));
        }
        if !(self.area_side_km > 0.0 && self.area_side_km.is_finite()) {
            return Err(Error::invalid("area_side_km", "must be positive and finite"));
        }
        if !(self.min_distance_m > 0.0 && self.min_distance_m.is_finite()) {
            return Err(Error::invalid("min_distance_m", "must be positive and finite"));
        }
        if !self.pathloss_intercept_db.is_finite() || !self.pathloss_slope_db.is_finite() {
            return Err(Error::invalid("pathloss_intercept_db", "path-loss parameters must be finite"));
        }
        if self.pathloss_slope_db < 0.0 {
            return Err(Error::invalid("pathloss_slope_db", "must be nonnegative"));
        }
        if !(self.shadowing_std_db >= 0.0 && self.shadowing_std_db.is_finite()) {
            return Err(Error::invalid("shadowing_std_db", "must be nonnegative and finite"));
        }
        Ok(())
    }

    /// Length of one AP's real feature vector, 2·L·N.
    pub fn feature_len(&self) -> usize {
        2 * self.pilot_len * self.antennas_per_ap
    }

    pub fn path_gain_db(&self, distance_m: f64) -> f64 {
        let d = distance_m.max(self.min_distance_m);
        self.pathloss_intercept_db - self.pathloss_slope_db * d.log10()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    /// AP positions in km.
    pub ap_positions: Vec<(f64, f64)>,
    /// Device positions in km.
    pub device_positions: Vec<(f64, f64)>,
}

impl Geometry {
    pub fn distance_m(&self, ap: usize, device: usize) -> f64 {
        let (ax, ay) = self.ap_positions[ap];
        let (dx, dy) = self.device_positions[device];
        1000.0 * (ax - dx).hypot(ay - dy)
    }
}

/// β_mk, indexed `[ap, device]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LargeScaleMatrix {
    pub beta: Array2<f64>,
}

impl LargeScaleMatrix {
    pub fn new(beta: Array2<f64>) -> Result<Self> {
        if beta.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::invalid("beta", "large-scale gains must be positive and finite"));
        }
        Ok(Self { beta })
    }

    pub fn num_aps(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_devices(&self) -> usize {
        self.beta.ncols()
    }
}

/// Column k holds the unit-norm pilot s_k.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotBook {
    pub pilots: Array2<Complex64>,
}

impl PilotBook {
    pub fn pilot_len(&self) -> usize {
        self.pilots.nrows()
    }

    pub fn num_devices(&self) -> usize {
        self.pilots.ncols()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActivityVector {
    pub active: Vec<bool>,
}

impl ActivityVector {
    pub fn new(active: Vec<bool>) -> Self {
        Self { active }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn count_active(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect()
    }

    pub fn support(&self) -> Vec<usize> {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(k, &a)| a.then_some(k))
            .collect()
    }
}

pub fn generate_geometry(config: &ScenarioConfig, stream: &RngStream) -> Geometry {
    let mut rng = stream.rng();
    let side = config.area_side_km;
    let mut draw = |n: usize| -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| (rng.random::<f64>() * side, rng.random::<f64>() * side))
            .collect()
    };
    let ap_positions = draw(config.num_aps);
    let device_positions = draw(config.num_devices);
    Geometry {
        ap_positions,
        device_positions,
    }
}

/// Log-distance path loss with a distance floor, optionally with i.i.d.
/// log-normal shadowing drawn from `shadowing` when enabled in the config.
pub fn large_scale_fading(
    geometry: &Geometry,
    config: &ScenarioConfig,
    shadowing: Option<&RngStream>,
) -> LargeScaleMatrix {
    let m = geometry.ap_positions.len();
    let k = geometry.device_positions.len();
    let mut beta_db =
        Array2::from_shape_fn((m, k), |(ap, dev)| config.path_gain_db(geometry.distance_m(ap, dev)));
    if config.shadowing_std_db > 0.0 {
        if let Some(stream) = shadowing {
            let normal = Normal::new(0.0, config.shadowing_std_db).expect("validated std");
            let mut rng = stream.rng();
            beta_db.iter_mut().for_each(|b| *b += normal.sample(&mut rng));
        }
    }
    LargeScaleMatrix {
        beta: beta_db.mapv(|db| 10f64.powf(db / 10.0)),
    }
}

pub fn generate_pilots(config: &ScenarioConfig, stream: &RngStream) -> PilotBook {
    let mut rng = stream.rng();
    let (l, k) = (config.pilot_len, config.num_devices);
    // Draw column by column so each pilot depends only on its own draws.
    let mut pilots = Array2::<Complex64>::zeros((l, k));
    for mut col in pilots.columns_mut() {
        col.iter_mut().for_each(|z| *z = complex_normal(&mut rng));
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        col.mapv_inplace(|z| z / norm);
    }
    PilotBook { pilots }
}

pub fn sample_activity<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> ActivityVector {
    let eps = config.activation_prob;
    ActivityVector::new((0..config.num_devices).map(|_| rng.random::<f64>() < eps).collect())
}

/// Everything that stays fixed across detection events.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub geometry: Geometry,
    pub beta: LargeScaleMatrix,
    pub pilots: PilotBook,
}

impl Scenario {
    pub fn generate(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let root = RngStream::root(config.master_seed);
        let geometry = generate_geometry(config, &root.named(streams::GEOMETRY));
        let beta = large_scale_fading(&geometry, config, Some(&root.named(streams::SHADOWING)));
        let pilots = generate_pilots(config, &root.named(streams::PILOTS));
        Ok(Self {
            config: config.clone(),
            geometry,
            beta,
            pilots,
        })
    }

    pub fn root_stream(&self) -> RngStream {
        RngStream::root(self.config.master_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            num_aps: 4,
            num_devices: 10,
            pilot_len: 6,
            cluster_size: 2,
            hidden_units: 8,
            ..Default::default()
        }
    }

    #[test]
    fn defaults_validate() {
        ScenarioConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_cluster_larger_than_network() {
        let cfg = ScenarioConfig {
            num_aps: 8,
            cluster_size: 99,
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::InvalidConfig { key, .. }) => assert_eq!(key, "cluster_size"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_scalars() {
        for (cfg, key) in [
            (ScenarioConfig { activation_prob: 1.5, ..Default::default() }, "activation_prob"),
            (ScenarioConfig { tx_power: 0.0, ..Default::default() }, "tx_power"),
            (ScenarioConfig { noise_var: -1.0, ..Default::default() }, "noise_var"),
            (ScenarioConfig { area_side_km: 0.0, ..Default::default() }, "area_side_km"),
            (ScenarioConfig { num_devices: 0, ..Default::default() }, "num_devices"),
            (ScenarioConfig { hidden_layers: 2, ..Default::default() }, "hidden_layers"),
        ] {
            match cfg.validate() {
                Err(Error::InvalidConfig { key: got, .. }) => assert_eq!(got, key),
                other => panic!("expected error on {key}, got {other:?}"),
            }
        }
    }

    #[test]
    fn geometry_in_range_and_deterministic() {
        let cfg = small();
        let s = RngStream::root(3).named(streams::GEOMETRY);
        let g = generate_geometry(&cfg, &s);
        assert_eq!(g.ap_positions.len(), 4);
        assert_eq!(g.device_positions.len(), 10);
        for &(x, y) in g.ap_positions.iter().chain(&g.device_positions) {
            assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
        }
        assert_eq!(g, generate_geometry(&cfg, &s));
    }

    #[test]
    fn geometry_coordinates_are_uniform() {
        let cfg = ScenarioConfig {
            num_aps: 10_000,
            cluster_size: 1,
            ..small()
        };
        let g = generate_geometry(&cfg, &RngStream::root(11).named(streams::GEOMETRY));
        let n = g.ap_positions.len() as f64;
        let tol = 3.0 / (12.0 * n).sqrt();
        let mx = g.ap_positions.iter().map(|p| p.0).sum::<f64>() / n;
        let my = g.ap_positions.iter().map(|p| p.1).sum::<f64>() / n;
        assert!((mx - 0.5).abs() < tol, "mean x {mx}");
        assert!((my - 0.5).abs() < tol, "mean y {my}");
    }

    #[test]
    fn path_loss_values() {
        let cfg = ScenarioConfig::default();
        assert!((cfg.path_gain_db(100.0) - -103.9).abs() < 1e-12);
        assert!((cfg.path_gain_db(1.0) - -67.2).abs() < 1e-12);
        let geo = Geometry {
            ap_positions: vec![(0.0, 0.0)],
            device_positions: vec![(0.1, 0.0), (0.0, 0.0), (1.0, 1.0)],
        };
        let beta = large_scale_fading(&geo, &cfg, None).beta;
        assert!((beta[[0, 0]] - 10f64.powf(-10.39)).abs() < 1e-24);
        assert!((10.0 * beta[[0, 1]].log10() - -67.2).abs() < 1e-9);
        assert!(beta[[0, 1]] >= beta[[0, 0]] && beta[[0, 0]] >= beta[[0, 2]]);
        assert!(beta.iter().all(|b| *b > 0.0));
    }

    #[test]
    fn beta_monotone_in_distance() {
        let cfg = ScenarioConfig::default();
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let g = cfg.path_gain_db(i as f64 * 7.5);
            assert!(g <= prev);
            prev = g;
        }
    }

    #[test]
    fn shadowing_hook_is_off_by_default() {
        let cfg = small();
        let root = RngStream::root(5);
        let geo = generate_geometry(&cfg, &root.named(streams::GEOMETRY));
        let plain = large_scale_fading(&geo, &cfg, None);
        let hooked = large_scale_fading(&geo, &cfg, Some(&root.named(streams::SHADOWING)));
        assert_eq!(plain, hooked);
        let shadowed_cfg = ScenarioConfig { shadowing_std_db: 8.0, ..cfg };
        let shadowed = large_scale_fading(&geo, &shadowed_cfg, Some(&root.named(streams::SHADOWING)));
        assert_ne!(plain, shadowed);
        assert!(LargeScaleMatrix::new(shadowed.beta).is_ok());
    }

    #[test]
    fn pilots_unit_norm_and_deterministic() {
        let cfg = ScenarioConfig {
            num_devices: 100,
            pilot_len: 40,
            ..small()
        };
        let s = RngStream::root(9).named(streams::PILOTS);
        let book = generate_pilots(&cfg, &s);
        for col in book.pilots.columns() {
            let n = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        let tiny = ScenarioConfig {
            num_devices: 2,
            pilot_len: 2,
            ..small()
        };
        assert_eq!(generate_pilots(&tiny, &s), generate_pilots(&tiny, &s));
    }

    fn complex_rank(mut a: Array2<Complex64>, tol: f64) -> usize {
        let (rows, cols) = a.dim();
        let mut rank = 0;
        for c in 0..cols {
            if rank == rows {
                break;
            }
            let pivot = (rank..rows)
                .max_by(|&i, &j| a[[i, c]].norm().total_cmp(&a[[j, c]].norm()))
                .unwrap();
            if a[[pivot, c]].norm() < tol {
                continue;
            }
            for j in 0..cols {
                a.swap([rank, j], [pivot, j]);
            }
            for i in rank + 1..rows {
                let f = a[[i, c]] / a[[rank, c]];
                for j in c..cols {
                    let v = a[[rank, j]];
                    a[[i, j]] -= f * v;
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn pilot_book_has_full_row_rank() {
        let cfg = ScenarioConfig {
            num_devices: 100,
            pilot_len: 40,
            ..small()
        };
        let book = generate_pilots(&cfg, &RngStream::root(4).named(streams::PILOTS));
        assert_eq!(complex_rank(book.pilots, 1e-9), 40);
    }

    #[test]
    fn pilots_are_non_orthogonal_when_overloaded() {
        let cfg = ScenarioConfig {
            num_devices: 12,
            pilot_len: 6,
            ..small()
        };
        let s = generate_pilots(&cfg, &RngStream::root(2).named(streams::PILOTS)).pilots;
        let gram = s.t().mapv(|z| z.conj()).dot(&s);
        let max_off = (0..12)
            .flat_map(|i| (0..12).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| gram[[i, j]].norm())
            .fold(0.0, f64::max);
        assert!(max_off > 0.0);
    }

    #[test]
    fn activity_degenerate_and_mean() {
        let mut rng = RngStream::root(1).rng();
        let zero = ScenarioConfig { activation_prob: 0.0, ..small() };
        assert_eq!(sample_activity(&zero, &mut rng).count_active(), 0);
        let one = ScenarioConfig { activation_prob: 1.0, ..small() };
        assert_eq!(sample_activity(&one, &mut rng).count_active(), 10);

        let cfg = ScenarioConfig {
            num_devices: 100,
            activation_prob: 0.1,
            ..small()
        };
        let draws = 10_000;
        let mean = (0..draws)
            .map(|_| sample_activity(&cfg, &mut rng).count_active() as f64)
            .sum::<f64>()
            / draws as f64;
        // standard error of the mean count is sqrt(100 * 0.1 * 0.9 / 1e4) = 0.03
        assert!((mean - 10.0).abs() < 0.09, "mean active {mean}");
    }

    #[test]
    fn scenario_generation_is_reproducible() {
        let cfg = small();
        let a = Scenario::generate(&cfg).unwrap();
        let b = Scenario::generate(&cfg).unwrap();
        assert_eq!(a.geometry, b.geometry);
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.pilots, b.pilots);
    }
}

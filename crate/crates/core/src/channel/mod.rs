//! Spatially correlated channels for a 2D fluid-antenna port grid.
//!
//! Ports are laid out on an `n_x × n_y` grid spanning `w_x × w_y`
//! wavelengths. Port correlation follows a zero-order Bessel kernel of the
//! normalized distance, and user channels are coloured i.i.d. Gaussian
//! vectors scaled by large-scale path loss.

mod fchan;
pub mod special;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::rng;

pub use fchan::{read_fchan, write_fchan, FCHAN_VERSION};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrelationKernel {
    /// `sin(x)/x`
    #[serde(rename = "spherical_j0")]
    SphericalJ0,
    /// First-kind `J0(x)`
    #[serde(rename = "bessel_J0")]
    BesselJ0,
}

impl CorrelationKernel {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            CorrelationKernel::SphericalJ0 => special::spherical_j0(x),
            CorrelationKernel::BesselJ0 => special::bessel_j0(x),
        }
    }
}

fn default_kernel() -> CorrelationKernel {
    CorrelationKernel::SphericalJ0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_x: usize,
    pub n_y: usize,
    /// Aperture along x in wavelengths.
    pub w_x: f64,
    pub w_y: f64,
    pub carrier_hz: f64,
    #[serde(default = "default_kernel")]
    pub correlation_kernel: CorrelationKernel,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            n_x: 8,
            n_y: 8,
            w_x: 2.0,
            w_y: 2.0,
            carrier_hz: 2e9,
            correlation_kernel: CorrelationKernel::SphericalJ0,
        }
    }
}

impl ArrayConfig {
    pub fn square(ports_per_axis: usize, aperture: f64) -> Self {
        ArrayConfig {
            n_x: ports_per_axis,
            n_y: ports_per_axis,
            w_x: aperture,
            w_y: aperture,
            ..Default::default()
        }
    }

    pub fn num_ports(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x < 2 || self.n_y < 2 {
            return Err(Error::Config(format!(
                "port grid {}x{} needs at least 2 ports per axis",
                self.n_x, self.n_y
            )));
        }
        if !(self.w_x > 0.0 && self.w_y > 0.0 && self.w_x.is_finite() && self.w_y.is_finite()) {
            return Err(Error::Config(format!(
                "aperture ({}, {}) must be positive",
                self.w_x, self.w_y
            )));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return Err(Error::Config(format!(
                "carrier {} Hz must be positive",
                self.carrier_hz
            )));
        }
        Ok(())
    }

    /// 0-based grid coordinate of a 0-based port index.
    pub fn coord(&self, port: usize) -> PortCoord {
        PortCoord {
            x: port % self.n_x,
            y: port / self.n_x,
        }
    }
}

/// 0-based position of a port on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortCoord {
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Fading {
    Rayleigh,
    /// Rician fading with an all-ones line-of-sight component.
    Rician {
        kappa_db: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub users_k: usize,
    pub selected_n: usize,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    /// One distance per user, in meters.
    pub distance_m: Vec<f64>,
    pub fading: Fading,
    pub master_seed: u64,
}

impl ScenarioConfig {
    /// Defaults used throughout the evaluation: 20 dBm, -174 dBm/Hz over
    /// 10 MHz, every user at 200 m, Rayleigh fading, `n = K`.
    pub fn with_users(users_k: usize) -> Self {
        ScenarioConfig {
            users_k,
            selected_n: users_k,
            tx_power_dbm: 20.0,
            noise_psd_dbm_hz: -174.0,
            bandwidth_hz: 10e6,
            distance_m: vec![200.0; users_k],
            fading: Fading::Rayleigh,
            master_seed: 0,
        }
    }

    pub fn power_mw(&self) -> f64 {
        10f64.powf(self.tx_power_dbm / 10.0)
    }

    pub fn noise_mw(&self) -> f64 {
        10f64.powf((self.noise_psd_dbm_hz + 10.0 * self.bandwidth_hz.log10()) / 10.0)
    }

    pub fn validate(&self, array: &ArrayConfig) -> Result<()> {
        let n_ports = array.num_ports();
        if self.users_k == 0 {
            return Err(Error::Config("users_k must be at least 1".into()));
        }
        if self.selected_n < self.users_k || self.selected_n > n_ports {
            return Err(Error::Config(format!(
                "selected_n = {} must lie in [K, N] = [{}, {}]",
                self.selected_n, self.users_k, n_ports
            )));
        }
        if self.distance_m.len() != self.users_k {
            return Err(Error::Config(format!(
                "distance_m has {} entries for {} users",
                self.distance_m.len(),
                self.users_k
            )));
        }
        if let Some(d) = self.distance_m.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::Config(format!("user distance {d} m must be positive")));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::Config(format!(
                "bandwidth {} Hz must be positive",
                self.bandwidth_hz
            )));
        }
        if !self.tx_power_dbm.is_finite() || !self.noise_psd_dbm_hz.is_finite() {
            return Err(Error::Config("power and noise levels must be finite".into()));
        }
        if let Fading::Rician { kappa_db } = self.fading {
            if !kappa_db.is_finite() {
                return Err(Error::Config("Rician factor must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Maps a 1-based grid coordinate to a 1-based linear port index,
/// row by row along x.
pub fn map_port(x: usize, y: usize, n_x_total: usize) -> Result<usize> {
    if x == 0 || x > n_x_total || y == 0 {
        return Err(Error::Domain(format!(
            "port coordinate ({x}, {y}) outside a grid with {n_x_total} ports per row"
        )));
    }
    Ok((y - 1) * n_x_total + x)
}

/// Distance between two ports in wavelengths.
pub fn port_distance(a: PortCoord, b: PortCoord, cfg: &ArrayConfig) -> f64 {
    let dx = a.x.abs_diff(b.x) as f64 / (cfg.n_x - 1) as f64 * cfg.w_x;
    let dy = a.y.abs_diff(b.y) as f64 / (cfg.n_y - 1) as f64 * cfg.w_y;
    dx.hypot(dy)
}

pub fn correlation(a: PortCoord, b: PortCoord, cfg: &ArrayConfig) -> f64 {
    cfg.correlation_kernel.eval(2.0 * PI * port_distance(a, b, cfg))
}

/// Correlation matrix of the port grid with its eigendecomposition.
#[derive(Debug, Clone)]
pub struct CorrelationModel {
    pub matrix_j: DMatrix<f64>,
    /// Columns are eigenvectors, ordered like `eigvals_lambda`.
    pub eigvecs_u: DMatrix<f64>,
    /// Descending, clamped at zero.
    pub eigvals_lambda: DVector<f64>,
    /// Largest magnitude removed by clamping.
    pub clamped_mass: f64,
}

impl CorrelationModel {
    pub fn num_ports(&self) -> usize {
        self.matrix_j.nrows()
    }

    /// `U · sqrt(Λ)`, the colouring transform applied to white fading.
    pub fn coloring(&self) -> DMatrix<f64> {
        let mut a = self.eigvecs_u.clone();
        for (mut col, lam) in a.column_iter_mut().zip(self.eigvals_lambda.iter()) {
            col *= lam.sqrt();
        }
        a
    }

    /// `U · Λ · Uᵀ` with the clamped eigenvalues.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let a = self.coloring();
        &a * a.transpose()
    }
}

pub fn build_correlation(cfg: &ArrayConfig) -> Result<CorrelationModel> {
    cfg.validate()?;
    let n = cfg.num_ports();
    let mut j = DMatrix::<f64>::identity(n, n);
    for a in 0..n {
        for b in (a + 1)..n {
            let c = correlation(cfg.coord(a), cfg.coord(b), cfg);
            j[(a, b)] = c;
            j[(b, a)] = c;
        }
    }

    let eig = nalgebra::SymmetricEigen::try_new(j.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric(format!("eigendecomposition did not converge for {cfg:?}")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut eigvecs = DMatrix::<f64>::zeros(n, n);
    let mut eigvals = DVector::<f64>::zeros(n);
    let mut clamped_mass = 0.0f64;
    for (dst, &src) in order.iter().enumerate() {
        let lam = eig.eigenvalues[src];
        if !lam.is_finite() {
            return Err(Error::Numeric(format!("non-finite eigenvalue for {cfg:?}")));
        }
        if lam < 0.0 {
            clamped_mass = clamped_mass.max(-lam);
        }
        eigvals[dst] = lam.max(0.0);
        eigvecs.set_column(dst, &eig.eigenvectors.column(src));
    }

    Ok(CorrelationModel {
        matrix_j: j,
        eigvecs_u: eigvecs,
        eigvals_lambda: eigvals,
        clamped_mass,
    })
}

/// Large-scale path loss in dB at `distance_m` meters.
pub fn path_loss_db(distance_m: f64) -> Result<f64> {
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(Error::Domain(format!("distance {distance_m} m must be positive")));
    }
    Ok(128.1 + 37.6 * (distance_m / 1000.0).log10())
}

/// Linear power gain corresponding to [`path_loss_db`].
pub fn path_gain(distance_m: f64) -> Result<f64> {
    Ok(10f64.powf(-path_loss_db(distance_m)? / 10.0))
}

/// `B` realizations of the `N × K` channel matrix (column `k` is user `k`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBatch {
    pub array: ArrayConfig,
    pub scenario: ScenarioConfig,
    pub realizations: Vec<DMatrix<Complex64>>,
}

impl ChannelBatch {
    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    pub fn num_ports(&self) -> usize {
        self.array.num_ports()
    }

    pub fn users(&self) -> usize {
        self.scenario.users_k
    }

    pub fn selected_n(&self) -> usize {
        self.scenario.selected_n
    }

    pub fn realization(&self, b: usize) -> &DMatrix<Complex64> {
        &self.realizations[b]
    }

    /// Same channels with a different transmit power, for power sweeps.
    pub fn with_tx_power(mut self, tx_power_dbm: f64) -> Self {
        self.scenario.tx_power_dbm = tx_power_dbm;
        self
    }
}

/// White fading vector for user `k` of realization `b`.
fn draw_fading(scen: &ScenarioConfig, n: usize, b: usize, k: usize) -> DVector<Complex64> {
    let mut rng = rng::stream(scen.master_seed, &[b as u64, k as u64]);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let nlos = DVector::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * scale, im * scale)
    });
    match scen.fading {
        Fading::Rayleigh => nlos,
        Fading::Rician { kappa_db } => {
            let kappa = 10f64.powf(kappa_db / 10.0);
            let los = (kappa / (1.0 + kappa)).sqrt();
            let diffuse = (1.0 / (1.0 + kappa)).sqrt();
            nlos.map(|g| Complex64::new(los, 0.0) + g * diffuse)
        }
    }
}

pub fn generate_batch(cfg: &ArrayConfig, scen: &ScenarioConfig, batch_size: usize) -> Result<ChannelBatch> {
    let model = build_correlation(cfg)?;
    generate_batch_with(&model, cfg, scen, batch_size, ExecMode::default())
}

/// Generates a batch from a prebuilt correlation model.
///
/// Realization `b`, user `k` draws from its own stream keyed by
/// `(master_seed, b, k)`, so the result is identical in every [`ExecMode`].
pub fn generate_batch_with(
    model: &CorrelationModel,
    cfg: &ArrayConfig,
    scen: &ScenarioConfig,
    batch_size: usize,
    mode: ExecMode,
) -> Result<ChannelBatch> {
    cfg.validate()?;
    scen.validate(cfg)?;
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let n = cfg.num_ports();
    if model.num_ports() != n {
        return Err(Error::Config(format!(
            "correlation model has {} ports, array has {n}",
            model.num_ports()
        )));
    }
    let coloring = model.coloring().map(|x| Complex64::new(x, 0.0));
    let gains: Vec<f64> = scen
        .distance_m
        .iter()
        .map(|&d| path_gain(d).map(f64::sqrt))
        .collect::<Result<_>>()?;

    let realizations = exec::map_range(mode, batch_size, |b| {
        let mut h = DMatrix::<Complex64>::zeros(n, scen.users_k);
        for (k, &amp) in gains.iter().enumerate() {
            let g = draw_fading(scen, n, b, k);
            let col = &coloring * g * Complex64::new(amp, 0.0);
            h.set_column(k, &col);
        }
        h
    });

    Ok(ChannelBatch {
        array: cfg.clone(),
        scenario: scen.clone(),
        realizations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_port_examples() {
        assert_eq!(map_port(1, 1, 8).unwrap(), 1);
        assert_eq!(map_port(8, 8, 8).unwrap(), 64);
        assert_eq!(map_port(3, 2, 8).unwrap(), 11);
        assert!(map_port(0, 1, 8).is_err());
        assert!(map_port(9, 1, 8).is_err());
        assert!(map_port(1, 0, 8).is_err());
    }

    #[test]
    fn coord_inverts_map_port() {
        let cfg = ArrayConfig::default();
        for p in 0..cfg.num_ports() {
            let c = cfg.coord(p);
            assert_eq!(map_port(c.x + 1, c.y + 1, cfg.n_x).unwrap(), p + 1);
        }
    }

    #[test]
    fn distance_examples() {
        let cfg = ArrayConfig::default();
        let o = PortCoord { x: 0, y: 0 };
        assert_eq!(port_distance(o, o, &cfg), 0.0);
        assert_eq!(port_distance(o, PortCoord { x: 7, y: 0 }, &cfg), 2.0);
        assert!((port_distance(o, PortCoord { x: 1, y: 0 }, &cfg) - 2.0 / 7.0).abs() < 1e-15);
        let diag = port_distance(o, PortCoord { x: 7, y: 7 }, &cfg);
        assert!((diag - 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn correlation_examples() {
        let cfg = ArrayConfig::default();
        let o = PortCoord { x: 0, y: 0 };
        assert_eq!(correlation(o, o, &cfg), 1.0);
        let c = correlation(o, PortCoord { x: 1, y: 0 }, &cfg);
        assert!((c - 0.543_076_087_336_994_6).abs() < 1e-15);
        // half a wavelength apart: first zero of sin(x)/x
        let half = ArrayConfig::square(2, 0.5);
        assert!(correlation(o, PortCoord { x: 1, y: 0 }, &half).abs() < 1e-15);
    }

    #[test]
    fn small_grid_matches_scalar_oracle() {
        let cfg = ArrayConfig::square(2, 0.5);
        let model = build_correlation(&cfg).unwrap();
        // ports: 0=(0,0) 1=(1,0) 2=(0,1) 3=(1,1)
        let sinc = |d: f64| {
            let x = 2.0 * PI * d;
            x.sin() / x
        };
        let diag = (0.5f64 * 0.5 + 0.5 * 0.5).sqrt();
        let expect = [
            ((0, 1), sinc(0.5)),
            ((0, 2), sinc(0.5)),
            ((0, 3), sinc(diag)),
            ((1, 2), sinc(diag)),
            ((1, 3), sinc(0.5)),
            ((2, 3), sinc(0.5)),
        ];
        for ((a, b), want) in expect {
            assert!((model.matrix_j[(a, b)] - want).abs() < 1e-15, "({a},{b})");
        }
    }

    #[test]
    fn correlation_structure() {
        for kernel in [CorrelationKernel::SphericalJ0, CorrelationKernel::BesselJ0] {
            let cfg = ArrayConfig {
                correlation_kernel: kernel,
                ..ArrayConfig::default()
            };
            let m = build_correlation(&cfg).unwrap();
            let n = m.num_ports();
            for i in 0..n {
                assert_eq!(m.matrix_j[(i, i)], 1.0);
                for j in 0..n {
                    assert_eq!(m.matrix_j[(i, j)], m.matrix_j[(j, i)]);
                }
            }
            assert!(m.eigvals_lambda.iter().all(|&l| l >= 0.0));
            assert!(m.eigvals_lambda.as_slice().windows(2).all(|w| w[0] >= w[1]));
            let rel = (m.reconstruct() - &m.matrix_j).norm() / m.matrix_j.norm();
            assert!(rel <= 1e-8, "{kernel:?}: reconstruction error {rel:e}");
            assert!(m.clamped_mass <= 1e-10 * m.eigvals_lambda[0]);
        }
    }

    #[test]
    fn degenerate_axis_rejected() {
        let cfg = ArrayConfig {
            n_x: 1,
            ..ArrayConfig::default()
        };
        assert!(matches!(build_correlation(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn path_loss_examples() {
        assert_eq!(path_loss_db(1000.0).unwrap(), 128.1);
        assert!((path_loss_db(100.0).unwrap() - (128.1 - 37.6)).abs() < 1e-12);
        assert!((path_loss_db(200.0).unwrap() - 101.818_727_836_965_69).abs() < 1e-10);
        assert!(path_loss_db(0.0).is_err());
        assert!(path_loss_db(-5.0).is_err());
    }

    #[test]
    fn scenario_power_units() {
        let s = ScenarioConfig::with_users(4);
        assert!((s.power_mw() - 100.0).abs() < 1e-12);
        // -174 dBm/Hz + 70 dB = -104 dBm
        assert!((s.noise_mw() - 10f64.powf(-10.4)).abs() < 1e-24);
    }

    #[test]
    fn generation_is_deterministic_across_modes() {
        let cfg = ArrayConfig::square(4, 2.0);
        let mut scen = ScenarioConfig::with_users(3);
        scen.master_seed = 99;
        let model = build_correlation(&cfg).unwrap();
        let a = generate_batch_with(&model, &cfg, &scen, 5, ExecMode::Sequential).unwrap();
        let b = generate_batch_with(&model, &cfg, &scen, 5, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
        scen.master_seed = 100;
        let c = generate_batch_with(&model, &cfg, &scen, 5, ExecMode::Sequential).unwrap();
        assert_ne!(a.realizations[0], c.realizations[0]);
        assert!(a
            .realizations
            .iter()
            .all(|h| h.iter().all(|z| z.re.is_finite() && z.im.is_finite())));
    }

    #[test]
    fn scenario_validation() {
        let cfg = ArrayConfig::square(2, 1.0);
        let mut s = ScenarioConfig::with_users(2);
        assert!(s.validate(&cfg).is_ok());
        s.selected_n = 5;
        assert!(s.validate(&cfg).is_err());
        s.selected_n = 1;
        assert!(s.validate(&cfg).is_err());
        s.selected_n = 2;
        s.distance_m = vec![200.0];
        assert!(s.validate(&cfg).is_err());
    }
}

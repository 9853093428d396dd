//! Configuration-driven experiment sweeps.

mod table;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::channel::{generate_batch, read_fchan, ArrayConfig, ChannelBatch, ScenarioConfig};
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::exec::{self, ExecMode};
use crate::heuristics::{
    autoport_on, binomial, exhaustive_search_on, random_selection, run_ga_on, GaConfig, GraspConfig, ENUMERATION_CAP,
};
use crate::rng;

pub use table::{
    convergence_csv, convergence_curve, convergence_from_log, emit_csv, emit_realizations_csv, parse_csv, render_table,
    to_csv_string, to_realizations_csv_string, ConvergencePoint, RealizationRow, ResultRow, ResultTable, CSV_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Exhaustive,
    Random,
    BasicGa,
    GaC,
    GaCm,
    Autoport,
}

impl AlgorithmName {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmName::Exhaustive => "exhaustive",
            AlgorithmName::Random => "random",
            AlgorithmName::BasicGa => "basic_ga",
            AlgorithmName::GaC => "ga_c",
            AlgorithmName::GaCm => "ga_cm",
            AlgorithmName::Autoport => "autoport",
        }
    }
}

/// An algorithm entry; `config` overrides individual fields of the preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: AlgorithmName,
    /// Row key; defaults to the algorithm name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub config: Option<Value>,
}

impl AlgorithmSpec {
    pub fn named(name: AlgorithmName) -> Self {
        AlgorithmSpec {
            name,
            label: None,
            config: None,
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    Exhaustive,
    Random,
    Ga(GaConfig),
    Autoport(GraspConfig),
}

fn overlay<T: Serialize + serde::de::DeserializeOwned>(preset: T, patch: &Option<Value>, what: &str) -> Result<T> {
    let Some(patch) = patch else { return Ok(preset) };
    let Value::Object(fields) = patch else {
        return Err(Error::Config(format!("{what} config must be an object")));
    };
    let mut base = serde_json::to_value(preset)?;
    for (k, v) in fields {
        base[k] = v.clone();
    }
    serde_json::from_value(base).map_err(|e| Error::Config(format!("{what} config: {e}")))
}

impl AlgorithmSpec {
    pub fn resolve(&self) -> Result<Algorithm> {
        let empty = |a: Algorithm| match &self.config {
            Some(Value::Object(m)) if !m.is_empty() => {
                Err(Error::Config(format!("{} takes no configuration", self.name.as_str())))
            }
            _ => Ok(a),
        };
        match self.name {
            AlgorithmName::Exhaustive => empty(Algorithm::Exhaustive),
            AlgorithmName::Random => empty(Algorithm::Random),
            AlgorithmName::BasicGa | AlgorithmName::GaC | AlgorithmName::GaCm => {
                let preset = match self.name {
                    AlgorithmName::BasicGa => GaConfig::basic(),
                    AlgorithmName::GaC => GaConfig::ga_c(),
                    _ => GaConfig::ga_cm(),
                };
                let cfg = overlay(preset, &self.config, self.name.as_str())?;
                cfg.validate()?;
                Ok(Algorithm::Ga(cfg))
            }
            AlgorithmName::Autoport => {
                let cfg = overlay(GraspConfig::default(), &self.config, "autoport")?;
                if cfg.num_candidates_c == 0 {
                    return Err(Error::Config("autoport needs at least one start".into()));
                }
                Ok(Algorithm::Autoport(cfg))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    TxPowerDbm,
    PortsPerAxis,
    ApertureW,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::TxPowerDbm => "tx_power_dbm",
            SweepParam::PortsPerAxis => "ports_per_axis",
            SweepParam::ApertureW => "aperture_w",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    VsExhaustive,
    VsBasicGa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub array: ArrayConfig,
    pub scenario: ScenarioConfig,
    pub algorithms: Vec<AlgorithmSpec>,
    /// Defaults to the scenario's transmit power as a single point.
    #[serde(default)]
    pub sweep: Option<Sweep>,
    pub realizations: usize,
    #[serde(default)]
    pub normalization: Normalization,
    /// Master seed of every algorithm stream.
    #[serde(default)]
    pub seed: u64,
    /// Channel file to use instead of generating channels.
    #[serde(default)]
    pub channels: Option<PathBuf>,
    #[serde(default = "yes")]
    pub record_timing: bool,
}

fn yes() -> bool {
    true
}

/// A validated spec, ready to run.
#[derive(Debug, Clone)]
pub struct Plan {
    pub spec: ExperimentSpec,
    pub sweep: Sweep,
    pub algorithms: Vec<(String, Algorithm)>,
    pub reference: Option<usize>,
    base: Option<ChannelBatch>,
}

impl ExperimentSpec {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn sweep(&self) -> Sweep {
        self.sweep.clone().unwrap_or(Sweep {
            parameter: SweepParam::TxPowerDbm,
            values: vec![self.scenario.tx_power_dbm],
        })
    }

    fn point(
        &self,
        base: &Option<ChannelBatch>,
        param: SweepParam,
        value: f64,
    ) -> Result<(ArrayConfig, ScenarioConfig)> {
        let (mut array, mut scen) = match base {
            Some(b) => (b.array.clone(), b.scenario.clone()),
            None => (self.array.clone(), self.scenario.clone()),
        };
        match param {
            SweepParam::TxPowerDbm => scen.tx_power_dbm = value,
            SweepParam::PortsPerAxis => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::Config(format!(
                        "ports per axis {value} is not a positive integer"
                    )));
                }
                array.n_x = value as usize;
                array.n_y = value as usize;
            }
            SweepParam::ApertureW => {
                array.w_x = value;
                array.w_y = value;
            }
        }
        array.validate()?;
        scen.validate(&array)?;
        Ok((array, scen))
    }

    /// Checks everything that can be checked before any channel is drawn
    /// or any solver runs.
    pub fn plan(&self) -> Result<Plan> {
        if self.realizations == 0 {
            return Err(Error::Config("at least one realization is required".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms listed".into()));
        }
        let mut algorithms = Vec::with_capacity(self.algorithms.len());
        for a in &self.algorithms {
            let label = a.label().to_owned();
            if label.is_empty() || label.contains([',', '"', '\n']) {
                return Err(Error::Config(format!("algorithm label `{label}` is not a plain name")));
            }
            if algorithms.iter().any(|(l, _)| *l == label) {
                return Err(Error::Config(format!("algorithm `{label}` listed twice")));
            }
            algorithms.push((label, a.resolve()?));
        }
        let reference = match self.normalization {
            Normalization::None => None,
            Normalization::VsExhaustive => Some(
                algorithms
                    .iter()
                    .position(|(_, a)| *a == Algorithm::Exhaustive)
                    .ok_or_else(|| Error::Config("vs_exhaustive normalization needs an exhaustive entry".into()))?,
            ),
            Normalization::VsBasicGa => Some(
                self.algorithms
                    .iter()
                    .position(|a| a.name == AlgorithmName::BasicGa)
                    .ok_or_else(|| Error::Config("vs_basic_ga normalization needs a basic_ga entry".into()))?,
            ),
        };

        let sweep = self.sweep();
        if sweep.values.is_empty() {
            return Err(Error::Config("sweep has no values".into()));
        }
        if sweep.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sweep values must be finite".into()));
        }

        let base = match &self.channels {
            Some(path) => {
                if sweep.parameter != SweepParam::TxPowerDbm {
                    return Err(Error::Config(format!(
                        "a channel file fixes the array; cannot sweep {}",
                        sweep.parameter.as_str()
                    )));
                }
                let b = read_fchan(path)?;
                if b.len() < self.realizations {
                    return Err(Error::Config(format!(
                        "{} holds {} realizations, {} requested",
                        path.display(),
                        b.len(),
                        self.realizations
                    )));
                }
                Some(b)
            }
            None => None,
        };

        let has_exhaustive = algorithms.iter().any(|(_, a)| *a == Algorithm::Exhaustive);
        for &v in &sweep.values {
            let (array, scen) = self.point(&base, sweep.parameter, v)?;
            let subsets = binomial(array.num_ports(), scen.selected_n);
            if has_exhaustive && subsets > ENUMERATION_CAP {
                return Err(Error::Refused(format!(
                    "exhaustive search over C({}, {}) = {subsets} subsets exceeds the cap of {ENUMERATION_CAP}",
                    array.num_ports(),
                    scen.selected_n
                )));
            }
        }

        Ok(Plan {
            spec: self.clone(),
            sweep,
            algorithms,
            reference,
            base,
        })
    }
}

/// Outcome of one algorithm on one realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub gamma: f64,
    pub evals: usize,
    pub wall_time_s: f64,
}

/// Runs `alg` on one realization. `seed` keys the algorithm's stream
/// together with the realization index.
pub fn run_algorithm(alg: &Algorithm, batch: &ChannelBatch, r: usize, seed: u64) -> Result<Trial> {
    let start = Instant::now();
    let mut ev = Evaluator::new(batch, r)?;
    let mut rng = rng::stream(seed, &[r as u64]);
    let gamma = match alg {
        Algorithm::Exhaustive => exhaustive_search_on(&mut ev, ENUMERATION_CAP)?.1,
        Algorithm::Random => {
            let sel = random_selection(ev.selected_n(), ev.num_ports(), &mut rng)?;
            ev.evaluate(&sel)?
        }
        Algorithm::Ga(cfg) => run_ga_on(&mut ev, cfg, &mut rng)?.gamma,
        Algorithm::Autoport(cfg) => autoport_on(&mut ev, cfg, &mut rng)?.gamma,
    };
    Ok(Trial {
        gamma,
        evals: ev.evals(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

impl Plan {
    /// Stream seed of the algorithm with row key `label`.
    pub fn algorithm_seed(&self, label: &str) -> u64 {
        rng::derive_seed(self.spec.seed, &[rng::name_tag(label)])
    }

    /// Channel batch of one sweep point.
    pub fn batch_for(&self, value: f64) -> Result<ChannelBatch> {
        let spec = &self.spec;
        let (array, scen) = spec.point(&self.base, self.sweep.parameter, value)?;
        match &self.base {
            Some(b) => Ok(ChannelBatch {
                realizations: b.realizations[..spec.realizations].to_vec(),
                ..b.clone()
            }
            .with_tx_power(scen.tx_power_dbm)),
            None => generate_batch(&array, &scen, spec.realizations),
        }
    }

    pub fn run(&self, mode: ExecMode) -> Result<ResultTable> {
        let mut rows = Vec::new();
        let mut per_realization = Vec::new();
        let timing = self.spec.record_timing;
        let param = self.sweep.parameter.as_str();

        for &value in &self.sweep.values {
            let batch = self.batch_for(value)?;
            let seeds: Vec<u64> = self.algorithms.iter().map(|(l, _)| self.algorithm_seed(l)).collect();
            let trials: Vec<Vec<Trial>> = exec::try_map_range(mode, batch.len(), |r| {
                self.algorithms
                    .iter()
                    .zip(&seeds)
                    .map(|((_, alg), &seed)| run_algorithm(alg, &batch, r, seed))
                    .collect::<Result<Vec<_>>>()
            })?;

            for (a, (label, _)) in self.algorithms.iter().enumerate() {
                let gammas: Vec<f64> = trials.iter().map(|t| t[a].gamma).collect();
                let ratios: Option<Vec<f64>> = self
                    .reference
                    .map(|ref_i| trials.iter().map(|t| t[a].gamma / t[ref_i].gamma).collect());
                for (r, t) in trials.iter().enumerate() {
                    per_realization.push(RealizationRow {
                        algorithm: label.clone(),
                        sweep_param: param.to_owned(),
                        sweep_value: value,
                        realization: r,
                        gamma_linear: t[a].gamma,
                        normalized: ratios.as_ref().map(|v| v[r]),
                        eval_count: t[a].evals as u64,
                        wall_time_s: if timing { t[a].wall_time_s } else { 0.0 },
                    });
                }
                let avg = mean(&gammas);
                rows.push(ResultRow {
                    algorithm: label.clone(),
                    sweep_param: param.to_owned(),
                    sweep_value: value,
                    mean_gamma_db: 10.0 * avg.log10(),
                    mean_gamma_linear: avg,
                    normalized: ratios.as_deref().map(mean),
                    std: sample_std(&gammas),
                    eval_count: trials.iter().map(|t| t[a].evals as u64).sum(),
                    wall_time_s: if timing {
                        trials.iter().map(|t| t[a].wall_time_s).sum()
                    } else {
                        0.0
                    },
                });
            }
        }
        Ok(ResultTable::new(rows, per_realization))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for a single value.
fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Validates and runs an experiment.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.plan()?.run(ExecMode::default())
}

pub fn run_experiment_with(spec: &ExperimentSpec, mode: ExecMode) -> Result<ResultTable> {
    spec.plan()?.run(mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn desk_spec(algs: &[AlgorithmName], norm: Normalization) -> ExperimentSpec {
        let mut scenario = ScenarioConfig::with_users(2);
        scenario.selected_n = 2;
        scenario.master_seed = 3;
        ExperimentSpec {
            array: ArrayConfig::square(3, 2.0),
            scenario,
            algorithms: algs.iter().map(|&a| AlgorithmSpec::named(a)).collect(),
            sweep: None,
            realizations: 3,
            normalization: norm,
            seed: 1,
            channels: None,
            record_timing: false,
        }
    }

    #[test]
    fn exhaustive_normalizes_to_one() {
        let t = run_experiment(&desk_spec(&[AlgorithmName::Exhaustive], Normalization::VsExhaustive)).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].normalized, Some(1.0));
        assert_eq!(t.rows[0].eval_count, 3 * 36);
    }

    #[test]
    fn validation_happens_first() {
        let mut s = desk_spec(&[AlgorithmName::Random], Normalization::VsExhaustive);
        assert!(matches!(s.plan(), Err(Error::Config(_))));
        s.normalization = Normalization::None;
        s.realizations = 0;
        assert!(s.plan().is_err());

        let mut s = desk_spec(&[AlgorithmName::Exhaustive], Normalization::VsExhaustive);
        s.array = ArrayConfig::square(8, 2.0);
        s.scenario.selected_n = 8;
        let err = s.plan().unwrap_err();
        assert!(
            matches!(err, Error::Refused(_)) && err.to_string().contains("4426165368"),
            "{err}"
        );

        let mut s = desk_spec(&[AlgorithmName::Random, AlgorithmName::Random], Normalization::None);
        assert!(s.plan().is_err());
        s.algorithms[1].label = Some("random2".into());
        assert!(s.plan().is_ok());
        s.algorithms[1].config = Some(serde_json::json!({"x": 1}));
        assert!(s.plan().is_err());
    }

    #[test]
    fn config_overlays_preset() {
        let a = AlgorithmSpec {
            name: AlgorithmName::GaCm,
            label: None,
            config: Some(serde_json::json!({"iterations_i": 7})),
        };
        match a.resolve().unwrap() {
            Algorithm::Ga(cfg) => {
                assert_eq!(cfg.iterations_i, 7);
                assert_eq!(
                    cfg,
                    GaConfig {
                        iterations_i: 7,
                        ..GaConfig::ga_cm()
                    }
                );
            }
            other => panic!("{other:?}"),
        }
        let bad = AlgorithmSpec {
            config: Some(serde_json::json!({"populaton_m": 8})),
            ..a
        };
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn sweeps_and_modes_agree() {
        let mut s = desk_spec(
            &[
                AlgorithmName::Exhaustive,
                AlgorithmName::Random,
                AlgorithmName::Autoport,
            ],
            Normalization::VsExhaustive,
        );
        s.sweep = Some(Sweep {
            parameter: SweepParam::PortsPerAxis,
            values: vec![2.0, 3.0],
        });
        let seq = run_experiment_with(&s, ExecMode::Sequential).unwrap();
        let par = run_experiment_with(&s, ExecMode::Parallel).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq.rows.len(), 6);
        for row in &seq.rows {
            let n = row.normalized.unwrap();
            assert!(n > 0.0 && n <= 1.0 + 1e-9);
        }
        s.sweep = Some(Sweep {
            parameter: SweepParam::PortsPerAxis,
            values: vec![2.5],
        });
        assert!(s.plan().is_err());
    }
}

//! AutoPort: multi-start GRASP with gain-weighted construction and
//! first-improvement single-port exchange.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PortSelection;
use crate::channel::ChannelBatch;
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspConfig {
    pub num_candidates_c: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GraspConfig {
    fn default() -> Self {
        GraspConfig {
            num_candidates_c: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspOutcome {
    pub selection: PortSelection,
    pub gamma: f64,
    /// Index of the winning start.
    pub start: usize,
    /// Balanced SINR of the winning start's constructed (pre-search) selection.
    pub initial_gamma: f64,
    pub evals: usize,
}

/// Draws `n` distinct indices with probability proportional to `weights`,
/// renormalizing over the remaining indices after every draw. Once only
/// zero-weight indices remain they are drawn uniformly.
pub fn weighted_draw<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n > weights.len() {
        return Err(Error::Domain(format!("cannot draw {n} of {} ports", weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Domain("weights must be finite and nonnegative".into()));
    }
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let pos = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (pos, &i) in remaining.iter().enumerate() {
                acc += weights[i];
                if target < acc && weights[i] > 0.0 {
                    chosen = Some(pos);
                    break;
                }
            }
            // rounding can leave target == acc at the end; take the last positive weight
            chosen.unwrap_or_else(|| remaining.iter().rposition(|&i| weights[i] > 0.0).unwrap_or(0))
        } else {
            rng.random_range(0..remaining.len())
        };
        out.push(remaining.remove(pos));
    }
    Ok(out)
}

/// Per-port construction weights: row norms of the channel, normalized to
/// sum to one (uniform when every row is zero).
pub fn port_weights(ev: &Evaluator<'_>) -> Vec<f64> {
    let norms: Vec<f64> = ev.channel().row_iter().map(|r| r.norm()).collect();
    let total: f64 = norms.iter().sum();
    if total > 0.0 {
        norms.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / norms.len() as f64; norms.len()]
    }
}

/// First-improvement exchange: sweep positions and, for each, every absent
/// port in ascending order, accepting any strict improvement immediately.
/// Sweeps repeat until one passes without an improvement.
pub fn local_search(ev: &mut Evaluator<'_>, mut candidate: Vec<usize>) -> Result<(Vec<usize>, f64)> {
    let big_n = ev.num_ports();
    let mut current = ev.evaluate(&PortSelection::new(candidate.clone(), big_n)?)?;
    let mut improved = true;
    while improved {
        improved = false;
        for j in 0..candidate.len() {
            for alt in 0..big_n {
                if candidate.contains(&alt) {
                    continue;
                }
                let mut trial = candidate.clone();
                trial[j] = alt;
                let g = ev.evaluate(&PortSelection::new(trial.clone(), big_n)?)?;
                if g > current {
                    candidate = trial;
                    current = g;
                    improved = true;
                }
            }
        }
    }
    Ok((candidate, current))
}

pub fn autoport_on<R: Rng + ?Sized>(ev: &mut Evaluator<'_>, cfg: &GraspConfig, rng: &mut R) -> Result<GraspOutcome> {
    if cfg.num_candidates_c == 0 {
        return Err(Error::Config("GRASP needs at least one start".into()));
    }
    let (big_n, n) = (ev.num_ports(), ev.selected_n());
    let weights = port_weights(ev);

    let mut best: Option<GraspOutcome> = None;
    for start in 0..cfg.num_candidates_c {
        let initial = weighted_draw(&weights, n, rng)?;
        let initial_gamma = ev.evaluate(&PortSelection::new(initial.clone(), big_n)?)?;
        let (found, gamma) = local_search(ev, initial)?;
        if best.as_ref().is_none_or(|b| gamma > b.gamma) {
            best = Some(GraspOutcome {
                selection: PortSelection::new(found, big_n)?,
                gamma,
                start,
                initial_gamma,
                evals: 0,
            });
        }
    }
    let mut out = best.expect("at least one start");
    out.evals = ev.evals();
    Ok(out)
}

/// AutoPort on one realization with its stream keyed by
/// `(cfg.seed, realization)`.
pub fn autoport(batch: &ChannelBatch, realization: usize, cfg: &GraspConfig) -> Result<GraspOutcome> {
    let mut ev = Evaluator::new(batch, realization)?;
    let mut rng = rng::stream(cfg.seed, &[realization as u64]);
    autoport_on(&mut ev, cfg, &mut rng)
}

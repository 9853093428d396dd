//! Port-selection algorithms.

mod ga;
mod grasp;

use std::collections::HashSet;

use rand::Rng;

use crate::channel::ChannelBatch;
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::rng;

pub use ga::{
    crossover_basic, crossover_frequency, mutation_basic, mutation_swap_noise, repair, run_ga, run_ga_on,
    CrossoverKind, GaConfig, GaOutcome, MutationKind,
};
pub use grasp::{autoport, autoport_on, weighted_draw, GraspConfig, GraspOutcome};

/// Default cap on the number of subsets exhaustive search will enumerate.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// `n` distinct 0-based port indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PortSelection(Vec<usize>);

impl PortSelection {
    pub fn new(ports: Vec<usize>, num_ports: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(ports.len());
        for &p in &ports {
            if p >= num_ports {
                return Err(Error::Domain(format!("port {p} out of range [0, {num_ports})")));
            }
            if !seen.insert(p) {
                return Err(Error::Domain(format!("port {p} selected twice")));
            }
        }
        if ports.is_empty() {
            return Err(Error::Domain("empty port selection".into()));
        }
        Ok(PortSelection(ports))
    }

    pub fn ports(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sorted(&self) -> Vec<usize> {
        let mut v = self.0.clone();
        v.sort_unstable();
        v
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

/// Uniform `n`-subset of `0..num_ports`, in random order.
pub fn random_selection<R: Rng + ?Sized>(n: usize, num_ports: usize, rng: &mut R) -> Result<PortSelection> {
    if n == 0 || n > num_ports {
        return Err(Error::Domain(format!("cannot select {n} of {num_ports} ports")));
    }
    let ports = rand::seq::index::sample(rng, num_ports, n).into_vec();
    Ok(PortSelection(ports))
}

/// Random baseline on one realization; the stream is keyed by
/// `(seed, realization)`.
pub fn random_baseline(batch: &ChannelBatch, realization: usize, seed: u64) -> Result<(PortSelection, f64)> {
    let mut ev = Evaluator::new(batch, realization)?;
    let mut rng = rng::stream(seed, &[realization as u64]);
    let sel = random_selection(ev.selected_n(), ev.num_ports(), &mut rng)?;
    let g = ev.evaluate(&sel)?;
    Ok((sel, g))
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        match acc.checked_mul((n - i) as u128) {
            Some(v) => acc = v / (i as u128 + 1),
            None => return u128::MAX,
        }
    }
    acc
}

/// Lexicographic `k`-subsets of `0..n`.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in (i + 1)..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Full enumeration of `n`-subsets; ties go to the lexicographically
/// smallest subset.
pub fn exhaustive_search_on(ev: &mut Evaluator<'_>, cap: u128) -> Result<(PortSelection, f64)> {
    let (big_n, n) = (ev.num_ports(), ev.selected_n());
    let count = binomial(big_n, n);
    if count > cap {
        return Err(Error::Refused(format!(
            "exhaustive search over C({big_n}, {n}) = {count} subsets exceeds the cap of {cap}"
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for ports in Combinations::new(big_n, n) {
        let sel = PortSelection(ports);
        let g = ev.evaluate_transient(&sel)?;
        if best.as_ref().is_none_or(|(_, bg)| g > *bg) {
            best = Some((sel.into_vec(), g));
        }
    }
    let (ports, g) = best.ok_or_else(|| Error::Domain("no subsets to enumerate".into()))?;
    Ok((PortSelection(ports), g))
}

pub fn exhaustive_search(batch: &ChannelBatch, realization: usize) -> Result<(PortSelection, f64)> {
    exhaustive_search_on(&mut Evaluator::new(batch, realization)?, ENUMERATION_CAP)
}

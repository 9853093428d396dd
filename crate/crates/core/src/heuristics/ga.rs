//! Genetic algorithm over port selections and its operators.
//!
//! Individuals are rows of `n` port indices. Operators work on raw rows and
//! may produce duplicates; [`repair`] restores validity before merging.

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{random_selection, PortSelection};
use crate::channel::ChannelBatch;
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossoverKind {
    Basic,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    Basic,
    SwapNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    pub population_m: usize,
    pub elite_fraction_p: f64,
    pub iterations_i: usize,
    pub crossover_kind: CrossoverKind,
    pub mutation_kind: MutationKind,
    #[serde(default)]
    pub seed: u64,
}

impl GaConfig {
    /// Basic GA: M = 20, 20 % elites, 100 iterations.
    pub fn basic() -> Self {
        GaConfig {
            population_m: 20,
            elite_fraction_p: 0.2,
            iterations_i: 100,
            crossover_kind: CrossoverKind::Basic,
            mutation_kind: MutationKind::Basic,
            seed: 0,
        }
    }

    /// Frequency crossover with basic mutation, 50 iterations.
    pub fn ga_c() -> Self {
        GaConfig {
            iterations_i: 50,
            crossover_kind: CrossoverKind::Frequency,
            ..Self::basic()
        }
    }

    /// Frequency crossover with swap-and-noise mutation, 50 iterations.
    pub fn ga_cm() -> Self {
        GaConfig {
            mutation_kind: MutationKind::SwapNoise,
            ..Self::ga_c()
        }
    }

    pub fn elite_count(&self) -> usize {
        (self.population_m as f64 * self.elite_fraction_p).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.population_m;
        if m < 4 || !m.is_multiple_of(2) {
            return Err(Error::Config(format!("population {m} must be even and at least 4")));
        }
        if !(self.elite_fraction_p > 0.0 && self.elite_fraction_p < 1.0) {
            return Err(Error::Config(format!(
                "elite fraction {} must lie in (0, 1)",
                self.elite_fraction_p
            )));
        }
        let elites = self.elite_count();
        if elites < 1 || elites >= m {
            return Err(Error::Config(format!("elite count {elites} must lie in [1, {m})")));
        }
        if self.iterations_i == 0 {
            return Err(Error::Config("at least one GA iteration is required".into()));
        }
        Ok(())
    }
}

fn check_parents(parents: &[Vec<usize>]) -> Result<usize> {
    if parents.len() < 2 {
        return Err(Error::Domain(format!(
            "crossover needs at least 2 parents, got {}",
            parents.len()
        )));
    }
    let n = parents[0].len();
    if n == 0 || parents.iter().any(|p| p.len() != n) {
        return Err(Error::Domain("parents must be nonempty rows of equal length".into()));
    }
    Ok(n)
}

/// Head/tail recombination: the first `⌈n/2⌉` genes come from one uniformly
/// chosen parent, the rest from another, independently chosen.
pub fn crossover_basic<R: Rng + ?Sized>(
    parents: &[Vec<usize>],
    offspring_count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let n = check_parents(parents)?;
    let split = n.div_ceil(2);
    Ok((0..offspring_count)
        .map(|_| {
            let head = &parents[rng.random_range(0..parents.len())];
            let tail = &parents[rng.random_range(0..parents.len())];
            head[..split].iter().chain(&tail[split..]).copied().collect()
        })
        .collect())
}

/// Gene-frequency crossover.
///
/// Each offspring draws two distinct parents; at every position it inherits
/// the value that is more frequent at that position across all parents, and
/// flips a fair coin when the frequencies are equal.
pub fn crossover_frequency<R: Rng + ?Sized>(
    parents: &[Vec<usize>],
    offspring_count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let n = check_parents(parents)?;
    let total = parents.len() as f64;
    let freq: Vec<HashMap<usize, f64>> = (0..n)
        .map(|j| {
            let mut counts = HashMap::new();
            for p in parents {
                *counts.entry(p[j]).or_insert(0.0) += 1.0;
            }
            counts.into_iter().map(|(v, c)| (v, c / total)).collect()
        })
        .collect();

    let mut out = Vec::with_capacity(offspring_count);
    for _ in 0..offspring_count {
        let pair = index::sample(rng, parents.len(), 2);
        let (p1, p2) = (&parents[pair.index(0)], &parents[pair.index(1)]);
        let child = (0..n)
            .map(|j| {
                let (f1, f2) = (freq[j][&p1[j]], freq[j][&p2[j]]);
                if f1 > f2 {
                    p1[j]
                } else if f1 < f2 {
                    p2[j]
                } else if rng.random::<f64>() < 0.5 {
                    p1[j]
                } else {
                    p2[j]
                }
            })
            .collect();
        out.push(child);
    }
    Ok(out)
}

/// Replaces one uniformly chosen gene of every individual with a different,
/// uniformly chosen port.
pub fn mutation_basic<R: Rng + ?Sized>(population: &[Vec<usize>], num_ports: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut out = population.to_vec();
    if num_ports < 2 {
        return out;
    }
    for row in out.iter_mut().filter(|r| !r.is_empty()) {
        let pos = rng.random_range(0..row.len());
        let draw = rng.random_range(0..num_ports - 1);
        row[pos] = if draw >= row[pos] { draw + 1 } else { draw };
    }
    out
}

/// Swap-and-noise mutation.
///
/// Per individual: with probability 0.7, and if `n > 1`, a further coin with
/// probability 0.5 decides whether two distinct positions are swapped. Then
/// `max(1, ⌊0.15 n⌋)` distinct positions receive uniform noise in
/// `[-N/5, N/5]`, are rounded half-to-even and clipped to `[0, N-1]`.
pub fn mutation_swap_noise<R: Rng + ?Sized>(
    population: &[Vec<usize>],
    num_ports: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut out = population.to_vec();
    let spread = num_ports as f64 / 5.0;
    let top = num_ports.saturating_sub(1) as f64;
    for row in out.iter_mut().filter(|r| !r.is_empty()) {
        let n = row.len();
        // Draw order mirrors short-circuit evaluation of the reference operator.
        if rng.random::<f64>() < 0.7 && n > 1 && rng.random::<f64>() < 0.5 {
            let pair = index::sample(rng, n, 2);
            row.swap(pair.index(0), pair.index(1));
        }
        let count = ((n as f64 * 0.15) as usize).max(1);
        let positions = index::sample(rng, n, count);
        for pos in positions.iter() {
            let noise = if spread > 0.0 {
                rng.random_range(-spread..spread)
            } else {
                0.0
            };
            let moved = (row[pos] as f64 + noise).round_ties_even().clamp(0.0, top);
            row[pos] = moved as usize;
        }
    }
    out
}

/// Keeps the first occurrence of every port and replaces later duplicates
/// with uniformly chosen ports absent from the row.
pub fn repair<R: Rng + ?Sized>(selection: &[usize], num_ports: usize, rng: &mut R) -> Result<PortSelection> {
    if selection.len() > num_ports {
        return Err(Error::Domain(format!(
            "cannot repair {} genes into distinct ports of {num_ports}",
            selection.len()
        )));
    }
    if let Some(&p) = selection.iter().find(|&&p| p >= num_ports) {
        return Err(Error::Domain(format!("port {p} out of range [0, {num_ports})")));
    }
    let mut present: HashSet<usize> = selection.iter().copied().collect();
    let mut seen = HashSet::with_capacity(selection.len());
    let mut out = selection.to_vec();
    for slot in out.iter_mut() {
        if seen.insert(*slot) {
            continue;
        }
        let free: Vec<usize> = (0..num_ports).filter(|p| !present.contains(p)).collect();
        let pick = free[rng.random_range(0..free.len())];
        *slot = pick;
        present.insert(pick);
        seen.insert(pick);
    }
    PortSelection::new(out, num_ports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub selection: PortSelection,
    pub gamma: f64,
    /// Best-so-far balanced SINR after each iteration.
    pub history: Vec<f64>,
    pub evals: usize,
}

fn score_all(ev: &mut Evaluator<'_>, pop: &[PortSelection]) -> Result<Vec<f64>> {
    pop.iter().map(|s| ev.evaluate(s)).collect()
}

/// Indices sorted by score, best first; ties keep population order.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

pub fn run_ga_on<R: Rng + ?Sized>(ev: &mut Evaluator<'_>, cfg: &GaConfig, rng: &mut R) -> Result<GaOutcome> {
    cfg.validate()?;
    let (big_n, n) = (ev.num_ports(), ev.selected_n());
    let m = cfg.population_m;
    let elites = cfg.elite_count();

    let mut pop: Vec<PortSelection> = (0..m).map(|_| random_selection(n, big_n, rng)).collect::<Result<_>>()?;
    let mut scores = score_all(ev, &pop)?;
    let first = ranking(&scores)[0];
    let (mut best_sel, mut best) = (pop[first].clone(), scores[first]);
    let mut history = Vec::with_capacity(cfg.iterations_i);

    for _ in 0..cfg.iterations_i {
        let order = ranking(&scores);
        let parents: Vec<Vec<usize>> = order[..m / 2].iter().map(|&i| pop[i].ports().to_vec()).collect();

        let children = match cfg.crossover_kind {
            CrossoverKind::Basic => crossover_basic(&parents, m - elites, rng)?,
            CrossoverKind::Frequency => crossover_frequency(&parents, m - elites, rng)?,
        };
        let children = match cfg.mutation_kind {
            MutationKind::Basic => mutation_basic(&children, big_n, rng),
            MutationKind::SwapNoise => mutation_swap_noise(&children, big_n, rng),
        };

        let mut next: Vec<PortSelection> = order[..elites].iter().map(|&i| pop[i].clone()).collect();
        for child in &children {
            next.push(repair(child, big_n, rng)?);
        }
        pop = next;
        scores = score_all(ev, &pop)?;

        let top = ranking(&scores)[0];
        if scores[top] > best {
            best = scores[top];
            best_sel = pop[top].clone();
        }
        history.push(best);
    }

    Ok(GaOutcome {
        selection: best_sel,
        gamma: best,
        history,
        evals: ev.evals(),
    })
}

/// GA on one realization with its stream keyed by `(cfg.seed, realization)`.
pub fn run_ga(batch: &ChannelBatch, realization: usize, cfg: &GaConfig) -> Result<GaOutcome> {
    let mut ev = Evaluator::new(batch, realization)?;
    let mut rng = rng::stream(cfg.seed, &[realization as u64]);
    run_ga_on(&mut ev, cfg, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_batch, ArrayConfig, ScenarioConfig};
    use proptest::prelude::*;

    fn rng(seed: u64) -> rng::StreamRng {
        rng::stream(seed, &[])
    }

    #[test]
    fn config_validation() {
        assert!(GaConfig::basic().validate().is_ok());
        assert_eq!(GaConfig::basic().elite_count(), 4);
        let bad = |f: fn(&mut GaConfig)| {
            let mut c = GaConfig::basic();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.population_m = 7));
        assert!(bad(|c| c.population_m = 2));
        assert!(bad(|c| c.elite_fraction_p = 0.0));
        assert!(bad(|c| c.elite_fraction_p = 0.01));
        assert!(bad(|c| c.iterations_i = 0));
    }

    #[test]
    fn basic_crossover_shapes_and_halves() {
        let mut r = rng(1);
        let same = vec![vec![1, 2, 3, 4]; 3];
        assert!(crossover_basic(&same, 5, &mut r).unwrap().iter().all(|c| c == &same[0]));

        let parents = vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]];
        for c in crossover_basic(&parents, 200, &mut r).unwrap() {
            assert!(c[..2] == [0, 1] || c[..2] == [4, 5]);
            assert!(c[2..] == [2, 3] || c[2..] == [6, 7]);
        }

        let ten: Vec<Vec<usize>> = (0..10).map(|i| vec![i, i + 1, i + 2, i + 3]).collect();
        let out = crossover_basic(&ten, 16, &mut r).unwrap();
        assert_eq!(out.len(), 16);
        assert!(out.iter().all(|c| c.len() == 4));

        // odd n splits at ceil(n/2)
        let odd = vec![vec![0, 1, 2], vec![5, 6, 7]];
        for c in crossover_basic(&odd, 50, &mut r).unwrap() {
            assert!(c[..2] == [0, 1] || c[..2] == [5, 6]);
        }
        assert!(crossover_basic(&odd[..1], 1, &mut r).is_err());
    }

    #[test]
    fn frequency_crossover_fixtures() {
        let mut r = rng(2);
        let parents = vec![vec![0, 1], vec![0, 2]];
        let out = crossover_frequency(&parents, 20_000, &mut r).unwrap();
        assert!(out.iter().all(|c| c[0] == 0));
        let ones = out.iter().filter(|c| c[1] == 1).count() as f64 / out.len() as f64;
        assert!((ones - 0.5).abs() < 0.02, "tie split {ones}");

        // Hand trace: parents [[3,1],[3,1],[5,2]]. Position 0 has freq(3)=2/3,
        // freq(5)=1/3; position 1 has freq(1)=2/3, freq(2)=1/3. Any drawn pair
        // holding a row with 3/1 therefore yields [3,1] with no coin flip; only
        // the pair (row0,row1) ties, and it also yields [3,1].
        let parents = vec![vec![3, 1], vec![3, 1], vec![5, 2]];
        for c in crossover_frequency(&parents, 500, &mut r).unwrap() {
            assert_eq!(c, vec![3, 1]);
        }
    }

    #[test]
    fn basic_mutation_changes_exactly_one_gene() {
        let mut r = rng(3);
        let pop = vec![vec![0, 0, 0, 0]; 50];
        let out = mutation_basic(&pop, 2, &mut r);
        for row in &out {
            assert_eq!(row.iter().filter(|&&g| g == 1).count(), 1);
        }
        let pop: Vec<Vec<usize>> = (0..50).map(|i| vec![i % 9, (i + 3) % 9, (i + 5) % 9]).collect();
        let out = mutation_basic(&pop, 9, &mut r);
        for (a, b) in pop.iter().zip(&out) {
            assert_eq!(a.iter().zip(b).filter(|(x, y)| x != y).count(), 1);
        }
        assert_eq!(mutation_basic(&pop, 1, &mut r), pop);
    }

    #[test]
    fn swap_noise_single_gene() {
        let mut r = rng(4);
        let pop = vec![vec![5]; 1000];
        let out = mutation_swap_noise(&pop, 10, &mut r);
        assert!(out.iter().all(|row| row.len() == 1 && row[0] <= 9));
        // noise spread is 2, so values stay within [3, 7]
        assert!(out.iter().all(|row| (3..=7).contains(&row[0])));
        assert!(out.iter().any(|row| row[0] != 5));
    }

    #[test]
    fn swap_noise_bounds_at_n64() {
        // N = 64, n = 8: one noisy position, |noise| <= 12.8 so the rounded
        // displacement is at most 13. Constant rows make the swap invisible.
        let mut r = rng(5);
        let pop = vec![vec![30; 8]; 2000];
        let out = mutation_swap_noise(&pop, 64, &mut r);
        let mut max_disp = 0;
        for row in &out {
            let changed: Vec<usize> = row.iter().filter(|&&g| g != 30).copied().collect();
            assert!(changed.len() <= 1);
            for g in changed {
                max_disp = max_disp.max(g.abs_diff(30));
            }
        }
        assert!(max_disp <= 13);
        assert!(max_disp >= 10, "noise never reached the tail: {max_disp}");
    }

    #[test]
    fn swap_probability_is_035() {
        let mut r = rng(6);
        let mut swapped = 0;
        let trials = 20_000;
        for _ in 0..trials {
            let row = vec![vec![0usize, 1usize]];
            let out = mutation_swap_noise(&row, 2, &mut r);
            // noise in [-0.4, 0.4] rounds back to the original value
            if out[0] == vec![1, 0] {
                swapped += 1;
            }
        }
        let f = swapped as f64 / trials as f64;
        assert!((f - 0.35).abs() < 0.015, "swap frequency {f}");
    }

    #[test]
    fn repair_fixtures() {
        let mut r = rng(7);
        let fixed = repair(&[3, 3, 5], 8, &mut r).unwrap();
        assert_eq!(fixed.ports()[0], 3);
        assert_eq!(fixed.ports()[2], 5);
        assert!(fixed.ports()[1] != 3 && fixed.ports()[1] != 5);

        assert_eq!(repair(&[2, 0, 7], 8, &mut r).unwrap().ports(), &[2, 0, 7]);
        assert_eq!(repair(&[0, 0, 0, 0], 4, &mut r).unwrap().sorted(), vec![0, 1, 2, 3]);
        assert!(repair(&[0, 0, 0], 2, &mut r).is_err());
        assert!(repair(&[0, 9], 4, &mut r).is_err());
    }

    fn batch(n_axis: usize, users: usize, n: usize, seed: u64, b: usize) -> ChannelBatch {
        let mut scen = ScenarioConfig::with_users(users);
        scen.selected_n = n;
        scen.master_seed = seed;
        generate_batch(&ArrayConfig::square(n_axis, 2.0), &scen, b).unwrap()
    }

    #[test]
    fn ga_with_all_ports_selected() {
        let b = batch(2, 2, 4, 1, 1);
        let cfg = GaConfig {
            population_m: 4,
            iterations_i: 3,
            elite_fraction_p: 0.25,
            ..GaConfig::basic()
        };
        let out = run_ga(&b, 0, &cfg).unwrap();
        assert_eq!(out.selection.sorted(), vec![0, 1, 2, 3]);
        assert_eq!(out.history, vec![out.gamma; 3]);
        assert_eq!(out.evals, 1);
    }

    #[test]
    fn ga_history_is_monotone_and_deterministic() {
        let b = batch(3, 2, 3, 2, 1);
        for cfg in [GaConfig::basic(), GaConfig::ga_c(), GaConfig::ga_cm()] {
            let cfg = GaConfig {
                iterations_i: 15,
                ..cfg
            };
            let a = run_ga(&b, 0, &cfg).unwrap();
            assert!(a.history.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(*a.history.last().unwrap(), a.gamma);
            assert_eq!(a, run_ga(&b, 0, &cfg).unwrap());
        }
    }

    proptest! {
        #[test]
        fn operators_then_repair_yield_valid_rows(seed in any::<u64>(), big_n in 2usize..40, n_raw in 1usize..8, rows in 2usize..8) {
            let n = n_raw.min(big_n);
            let mut r = rng(seed);
            let parents: Vec<Vec<usize>> = (0..rows)
                .map(|_| random_selection(n, big_n, &mut r).unwrap().into_vec())
                .collect();
            for kids in [crossover_basic(&parents, 6, &mut r).unwrap(), crossover_frequency(&parents, 6, &mut r).unwrap()] {
                for mutated in [mutation_basic(&kids, big_n, &mut r), mutation_swap_noise(&kids, big_n, &mut r)] {
                    prop_assert_eq!(mutated.len(), kids.len());
                    for row in mutated {
                        prop_assert!(row.iter().all(|&g| g < big_n));
                        let fixed = repair(&row, big_n, &mut r).unwrap();
                        prop_assert_eq!(fixed.len(), n);
                        // valid input passes through untouched
                        let again = repair(fixed.ports(), big_n, &mut r).unwrap();
                        prop_assert_eq!(again, fixed);
                    }
                }
            }
        }
    }
}

//! Evolution of heuristics with a language-model provider in the loop.
//!
//! A population of candidate heuristics is evolved by asking a provider for
//! new code, scoring each candidate on a channel batch and keeping the
//! fittest. Candidates are either guest source (run by a [`GuestRunner`])
//! or references to built-in heuristics, so the engine runs end to end
//! without any guest runtime or network access.

mod fitness;
mod prompt;
mod provider;

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelBatch;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::rng;

pub use fitness::{evaluate_candidate, GuestRunner};
pub use prompt::{build_prompt, parse_response, signature, template};
pub use provider::{
    FixtureProvider, HttpProvider, HttpProviderConfig, MockProvider, PromptRequest, Provider, ProviderConfig,
    SYSTEM_PROMPT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    CrossoverOp,
    MutationOp,
    FullPortSelector,
}

/// Built-in heuristics addressable from a candidate payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NativeId {
    RandomSelection,
    Autoport,
    BasicGa,
    GaC,
    GaCm,
    Exhaustive,
    CrossoverBasic,
    CrossoverFrequency,
    MutationBasic,
    MutationSwapNoise,
}

impl NativeId {
    pub const ALL: [NativeId; 10] = [
        NativeId::RandomSelection,
        NativeId::Autoport,
        NativeId::BasicGa,
        NativeId::GaC,
        NativeId::GaCm,
        NativeId::Exhaustive,
        NativeId::CrossoverBasic,
        NativeId::CrossoverFrequency,
        NativeId::MutationBasic,
        NativeId::MutationSwapNoise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NativeId::RandomSelection => "random_selection",
            NativeId::Autoport => "autoport",
            NativeId::BasicGa => "basic_ga",
            NativeId::GaC => "ga_c",
            NativeId::GaCm => "ga_cm",
            NativeId::Exhaustive => "exhaustive",
            NativeId::CrossoverBasic => "crossover_basic",
            NativeId::CrossoverFrequency => "crossover_frequency",
            NativeId::MutationBasic => "mutation_basic",
            NativeId::MutationSwapNoise => "mutation_swap_noise",
        }
    }

    /// The task this heuristic can fill.
    pub fn task(self) -> Task {
        match self {
            NativeId::CrossoverBasic | NativeId::CrossoverFrequency => Task::CrossoverOp,
            NativeId::MutationBasic | NativeId::MutationSwapNoise => Task::MutationOp,
            _ => Task::FullPortSelector,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            NativeId::RandomSelection => "Select n ports uniformly at random.",
            NativeId::Autoport => {
                "Draw several gain-weighted random selections and refine each by single-port exchange."
            }
            NativeId::BasicGa => "Run a genetic algorithm with head-tail crossover and single-gene mutation.",
            NativeId::GaC => "Run a genetic algorithm with gene-frequency crossover.",
            NativeId::GaCm => "Run a genetic algorithm with gene-frequency crossover and swap-noise mutation.",
            NativeId::Exhaustive => "Enumerate every subset of n ports.",
            NativeId::CrossoverBasic => "Join the first half of one parent with the second half of another.",
            NativeId::CrossoverFrequency => "Inherit at each position the gene more common among all parents.",
            NativeId::MutationBasic => "Replace one random gene with a different random port.",
            NativeId::MutationSwapNoise => "Swap two genes at random and add bounded noise to a few positions.",
        }
    }
}

impl fmt::Display for NativeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NativeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NativeId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown native heuristic `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    GuestSource(String),
    #[serde(rename = "native_id")]
    Native(NativeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Ok,
    RuntimeError,
    Timeout,
    InvalidOutput,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub parents: Vec<String>,
    pub generation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicCandidate {
    pub id: String,
    pub idea_text: String,
    pub payload: Payload,
    /// Present iff the evaluation completed without error.
    pub fitness: Option<f64>,
    /// `None` until evaluated.
    pub status: Option<EvalStatus>,
    pub lineage: Lineage,
}

impl HeuristicCandidate {
    pub fn new(id: String, idea_text: String, payload: Payload, lineage: Lineage) -> Self {
        HeuristicCandidate {
            id,
            idea_text,
            payload,
            fitness: None,
            status: None,
            lineage,
        }
    }

    /// Ranking score: the fitness, or −∞ for failed candidates.
    pub fn score(&self) -> f64 {
        self.fitness.unwrap_or(f64::NEG_INFINITY)
    }

    pub fn is_evaluated(&self) -> bool {
        self.status.is_some()
    }

    pub fn apply(&mut self, report: &FitnessReport) {
        self.status = Some(report.status);
        self.fitness = (report.status == EvalStatus::Ok).then_some(report.mean_min_sinr);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    /// Mean balanced SINR over the batch; −∞ unless `status` is ok.
    pub mean_min_sinr: f64,
    pub per_instance: Vec<f64>,
    pub wall_time_s: f64,
    pub status: EvalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl FitnessReport {
    pub fn ok(per_instance: Vec<f64>, wall_time_s: f64) -> Self {
        let mean = per_instance.iter().sum::<f64>() / per_instance.len() as f64;
        FitnessReport {
            mean_min_sinr: mean,
            per_instance,
            wall_time_s,
            status: EvalStatus::Ok,
            message: None,
        }
    }

    pub fn failed(status: EvalStatus, message: impl Into<String>, wall_time_s: f64) -> Self {
        FitnessReport {
            mean_min_sinr: f64::NEG_INFINITY,
            per_instance: Vec::new(),
            wall_time_s,
            status,
            message: Some(message.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population_m: usize,
    pub generations_g: usize,
    pub eval_budget_f: usize,
    /// Channel realizations per fitness evaluation.
    pub batch_b: usize,
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    /// Offspring evaluated concurrently; 1 keeps everything on one thread.
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default = "yes")]
    pub record_timing: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            population_m: 10,
            generations_g: 30,
            eval_budget_f: 300,
            batch_b: 50,
            task: Task::FullPortSelector,
            seed: 0,
            parallelism: 1,
            record_timing: true,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self, batch: &ChannelBatch) -> Result<()> {
        if self.population_m < 2 {
            return Err(Error::Config(format!(
                "population {} must be at least 2",
                self.population_m
            )));
        }
        if self.eval_budget_f < self.population_m {
            return Err(Error::Config(format!(
                "budget {} cannot cover the initial population of {}",
                self.eval_budget_f, self.population_m
            )));
        }
        if self.batch_b == 0 || self.batch_b > batch.len() {
            return Err(Error::Config(format!(
                "batch size {} must lie in [1, {}]",
                self.batch_b,
                batch.len()
            )));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        Ok(())
    }

    /// Evaluations the run will charge when every reply parses.
    pub fn planned_evaluations(&self) -> usize {
        self.eval_budget_f.min(self.population_m * (1 + self.generations_g))
    }
}

/// Selection weights `1/(r + m)` for ranks `r = 1..=m`, normalized.
pub fn rank_probabilities(m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=m).map(|r| 1.0 / (r + m) as f64).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Indices ordered by score, best first; ties keep input order.
fn rank_order(pop: &[HeuristicCandidate]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| pop[b].score().total_cmp(&pop[a].score()));
    order
}

/// Draws one candidate index with probability proportional to
/// `1/(rank + m)`.
pub fn rank_select<R: Rng + ?Sized>(pop: &[HeuristicCandidate], rng: &mut R) -> Result<usize> {
    if pop.is_empty() {
        return Err(Error::Domain("cannot select from an empty population".into()));
    }
    if let Some(c) = pop.iter().find(|c| !c.is_evaluated()) {
        return Err(Error::Domain(format!("candidate {} has not been evaluated", c.id)));
    }
    let order = rank_order(pop);
    let probs = rank_probabilities(pop.len());
    let dist = WeightedIndex::new(&probs).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(order[dist.sample(rng)])
}

/// Keeps the `m` fittest of `current ∪ offspring`; ties favour current
/// members, then earlier entries.
pub fn manage(
    current: Vec<HeuristicCandidate>,
    offspring: Vec<HeuristicCandidate>,
    m: usize,
) -> Vec<HeuristicCandidate> {
    let mut all = current;
    all.extend(offspring);
    let order = rank_order(&all);
    let keep: Vec<usize> = order.into_iter().take(m).collect();
    let mut slots: Vec<Option<HeuristicCandidate>> = all.into_iter().map(Some).collect();
    keep.into_iter().filter_map(|i| slots[i].take()).collect()
}

/// One line of the evolution log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub generation: usize,
    pub candidate_id: String,
    pub parent_ids: Vec<String>,
    pub status: EvalStatus,
    /// `null` for failed candidates.
    pub fitness: Option<f64>,
    pub wall_time_s: f64,
    #[serde(default = "one")]
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generation: usize,
    pub best_fitness: Option<f64>,
    pub mean_fitness: Option<f64>,
    pub best_ever: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionOutcome {
    pub best: HeuristicCandidate,
    pub population: Vec<HeuristicCandidate>,
    pub generations: Vec<GenerationSummary>,
    pub records: Vec<EvalRecord>,
    pub evaluations: usize,
    pub parse_failures: usize,
    /// Set when a provider failure cut the run short.
    pub partial: bool,
}

struct Run<'a> {
    cfg: &'a EvolutionConfig,
    batch: &'a ChannelBatch,
    guest: Option<&'a dyn GuestRunner>,
    charged: usize,
    parse_failures: usize,
    records: Vec<EvalRecord>,
    best: Option<HeuristicCandidate>,
}

impl Run<'_> {
    fn remaining(&self) -> usize {
        self.cfg.eval_budget_f - self.charged
    }

    /// Scores candidates in order, charging one evaluation each, until the
    /// budget runs out; unscored leftovers are dropped.
    fn evaluate(&mut self, mut cands: Vec<HeuristicCandidate>) -> Vec<HeuristicCandidate> {
        cands.truncate(self.remaining());
        self.charged += cands.len();
        let mode = if self.cfg.parallelism > 1 {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        };
        let (cfg, batch, guest) = (self.cfg, self.batch, self.guest);
        let reports = exec::map_range(mode, cands.len(), |i| evaluate_candidate(&cands[i], batch, cfg, guest));
        for (c, rep) in cands.iter_mut().zip(&reports) {
            c.apply(rep);
            self.records.push(EvalRecord {
                generation: c.lineage.generation,
                candidate_id: c.id.clone(),
                parent_ids: c.lineage.parents.clone(),
                status: rep.status,
                fitness: c.fitness,
                wall_time_s: rep.wall_time_s,
                parallelism: cfg.parallelism,
            });
            if self.best.as_ref().is_none_or(|b| c.score() > b.score()) {
                self.best = Some(c.clone());
            }
        }
        cands
    }

    fn summary(&self, generation: usize, pop: &[HeuristicCandidate]) -> GenerationSummary {
        let ok: Vec<f64> = pop.iter().filter_map(|c| c.fitness).collect();
        GenerationSummary {
            generation,
            best_fitness: ok.iter().copied().reduce(f64::max),
            mean_fitness: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
            best_ever: self.best.as_ref().and_then(|b| b.fitness),
        }
    }
}

/// Runs the evolutionary search.
///
/// Generation 0 asks for `m` fresh candidates; each later generation asks
/// for `m` offspring, alternating two-parent (even slots) and one-parent
/// (odd slots) prompts, and keeps the `m` fittest. Stops after `G`
/// generations or when the evaluation budget is spent. Replies that fail to
/// parse are dropped without charging the budget.
pub fn evolve(
    cfg: &EvolutionConfig,
    batch: &ChannelBatch,
    provider: &mut dyn Provider,
    guest: Option<&dyn GuestRunner>,
) -> Result<EvolutionOutcome> {
    cfg.validate(batch)?;
    let m = cfg.population_m;
    let mut rng = rng::stream(cfg.seed, &[rng::name_tag("eoh")]);
    let mut run = Run {
        cfg,
        batch,
        guest,
        charged: 0,
        parse_failures: 0,
        records: Vec::new(),
        best: None,
    };
    let mut generations = Vec::new();
    let mut partial = false;

    let mut initial = Vec::with_capacity(m);
    let init_prompt = build_prompt(cfg.task, &[]);
    for slot in 0..m {
        let req = PromptRequest {
            task: cfg.task,
            generation: 0,
            slot,
            system: SYSTEM_PROMPT,
            prompt: &init_prompt,
        };
        match provider.complete(&req) {
            Ok(raw) => match parse_response(&raw, format!("g0-{slot}"), Lineage::default()) {
                Ok(c) => initial.push(c),
                Err(_) => run.parse_failures += 1,
            },
            Err(e) => {
                if initial.is_empty() {
                    return Err(e);
                }
                partial = true;
                break;
            }
        }
    }
    let initial = run.evaluate(initial);
    let mut population = manage(Vec::new(), initial, m);
    generations.push(run.summary(0, &population));

    for generation in 1..=cfg.generations_g {
        if partial || run.remaining() == 0 || population.is_empty() {
            break;
        }
        let wanted = m.min(run.remaining());
        let mut offspring = Vec::with_capacity(wanted);
        for slot in 0..wanted {
            let arity = if slot % 2 == 0 && population.len() >= 2 { 2 } else { 1 };
            let picks: Vec<usize> = (0..arity)
                .map(|_| rank_select(&population, &mut rng))
                .collect::<Result<_>>()?;
            let parents: Vec<&HeuristicCandidate> = picks.iter().map(|&i| &population[i]).collect();
            let prompt = build_prompt(cfg.task, &parents);
            let req = PromptRequest {
                task: cfg.task,
                generation,
                slot,
                system: SYSTEM_PROMPT,
                prompt: &prompt,
            };
            let lineage = Lineage {
                parents: parents.iter().map(|p| p.id.clone()).collect(),
                generation,
            };
            match provider.complete(&req) {
                Ok(raw) => match parse_response(&raw, format!("g{generation}-{slot}"), lineage) {
                    Ok(c) => offspring.push(c),
                    Err(_) => run.parse_failures += 1,
                },
                Err(_) => {
                    partial = true;
                    break;
                }
            }
        }
        let offspring = run.evaluate(offspring);
        population = manage(population, offspring, m);
        generations.push(run.summary(generation, &population));
    }

    let best = run
        .best
        .clone()
        .ok_or_else(|| Error::Provider("no candidate could be evaluated".into()))?;
    Ok(EvolutionOutcome {
        best,
        population,
        generations,
        evaluations: run.charged,
        parse_failures: run.parse_failures,
        records: run.records,
        partial,
    })
}

/// Writes records as JSON lines.
pub fn write_log(records: &[EvalRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<EvalRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_batch, ArrayConfig, ScenarioConfig};

    fn scored(id: &str, f: Option<f64>) -> HeuristicCandidate {
        let mut c = HeuristicCandidate::new(
            id.into(),
            String::new(),
            Payload::Native(NativeId::RandomSelection),
            Lineage::default(),
        );
        c.status = Some(if f.is_some() {
            EvalStatus::Ok
        } else {
            EvalStatus::RuntimeError
        });
        c.fitness = f;
        c
    }

    #[test]
    fn rank_probability_values() {
        assert_eq!(rank_probabilities(1), vec![1.0]);
        assert!((rank_probabilities(2)[0] - 4.0 / 7.0).abs() < 1e-15);
        assert!((rank_probabilities(10)[0] - 0.135934476978891).abs() < 1e-14);
    }

    #[test]
    fn rank_select_contract() {
        let mut r = rng::stream(1, &[]);
        assert!(rank_select(&[], &mut r).is_err());
        let pending = HeuristicCandidate::new(
            "p".into(),
            String::new(),
            Payload::Native(NativeId::Autoport),
            Lineage::default(),
        );
        assert!(rank_select(&[scored("a", Some(1.0)), pending], &mut r).is_err());
        assert_eq!(rank_select(&[scored("a", None)], &mut r).unwrap(), 0);
    }

    #[test]
    fn rank_select_frequencies() {
        let pop: Vec<_> = (0..10).map(|i| scored(&i.to_string(), Some(i as f64))).collect();
        let mut r = rng::stream(2, &[]);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            counts[rank_select(&pop, &mut r).unwrap()] += 1;
        }
        let probs = rank_probabilities(10);
        // candidate i has rank 10 - i
        for (i, c) in counts.iter().enumerate() {
            assert!((*c as f64 / draws as f64 - probs[9 - i]).abs() < 0.01);
        }
    }

    #[test]
    fn manage_examples() {
        let cur = vec![scored("a", Some(5.0)), scored("b", Some(3.0)), scored("c", Some(1.0))];
        let off = vec![scored("d", Some(4.0)), scored("e", Some(2.0)), scored("f", Some(0.0))];
        let ids: Vec<_> = manage(cur.clone(), off, 3).into_iter().map(|c| c.id).collect();
        assert_eq!(ids, ["a", "d", "b"]);

        let failed = vec![scored("x", None), scored("y", None), scored("z", None)];
        assert_eq!(manage(cur.clone(), failed, 3), cur);

        let strong = vec![scored("u", Some(9.0)), scored("v", Some(8.0)), scored("w", Some(7.0))];
        assert_eq!(manage(cur, strong.clone(), 3), strong);

        let tie = manage(vec![scored("old", Some(1.0))], vec![scored("new", Some(1.0))], 1);
        assert_eq!(tie[0].id, "old");
    }

    fn batch() -> ChannelBatch {
        let mut scen = ScenarioConfig::with_users(2);
        scen.selected_n = 2;
        scen.master_seed = 5;
        generate_batch(&ArrayConfig::square(3, 2.0), &scen, 4).unwrap()
    }

    fn small_cfg(g: usize, f: usize) -> EvolutionConfig {
        EvolutionConfig {
            population_m: 3,
            generations_g: g,
            eval_budget_f: f,
            batch_b: 4,
            record_timing: false,
            ..EvolutionConfig::default()
        }
    }

    #[test]
    fn budget_truncates_and_zero_generations() {
        let b = batch();
        let mut p = MockProvider::for_task(Task::FullPortSelector);
        let out = evolve(&small_cfg(5, 7), &b, &mut p, None).unwrap();
        assert_eq!(out.evaluations, 7);
        assert_eq!(out.records.len(), 7);

        let mut p = MockProvider::for_task(Task::FullPortSelector);
        let out = evolve(&small_cfg(0, 100), &b, &mut p, None).unwrap();
        assert_eq!(out.evaluations, 3);
        assert_eq!(out.generations.len(), 1);

        let mut p = MockProvider::for_task(Task::FullPortSelector);
        assert!(evolve(&small_cfg(1, 2), &b, &mut p, None).is_err());
    }

    struct Flaky {
        calls: usize,
        fail_after: usize,
    }

    impl Provider for Flaky {
        fn complete(&mut self, req: &PromptRequest<'_>) -> Result<String> {
            self.calls += 1;
            if self.calls > self.fail_after {
                return Err(Error::Provider("down".into()));
            }
            if req.slot == 1 {
                return Ok("no code here".into());
            }
            Ok("Random.\n```native\nrandom_selection\n```".into())
        }
    }

    #[test]
    fn parse_failures_uncharged_and_provider_failure_is_partial() {
        let b = batch();
        let mut p = Flaky {
            calls: 0,
            fail_after: 4,
        };
        let out = evolve(&small_cfg(3, 100), &b, &mut p, None).unwrap();
        assert!(out.partial);
        assert_eq!(out.parse_failures, 1);
        // 2 parsed initial candidates, then the 1 offspring received before the failure
        assert_eq!(out.evaluations, 3);

        let mut p = Flaky {
            calls: 0,
            fail_after: 0,
        };
        assert!(matches!(
            evolve(&small_cfg(3, 100), &b, &mut p, None),
            Err(Error::Provider(_))
        ));
    }

    #[test]
    fn log_roundtrip() {
        let b = batch();
        let mut p = MockProvider::for_task(Task::FullPortSelector);
        let out = evolve(&small_cfg(1, 100), &b, &mut p, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_log(&out.records, &path).unwrap();
        assert_eq!(read_log(&path).unwrap(), out.records);
    }
}

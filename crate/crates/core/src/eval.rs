//! Scoring port selections against one channel realization.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::ChannelBatch;
use crate::error::{Error, Result};
use crate::heuristics::PortSelection;
use crate::sinr::{self, EffectiveChannel};

/// Balanced-SINR oracle for one realization, memoized on the sorted
/// selection.
///
/// The cache lives as long as the evaluator, i.e. one heuristic run on one
/// realization. `evals` counts solver invocations only; cache hits are free.
#[derive(Debug)]
pub struct Evaluator<'a> {
    batch: &'a ChannelBatch,
    realization: usize,
    power_mw: f64,
    noise_mw: f64,
    cache: HashMap<Vec<usize>, f64>,
    evals: usize,
    hits: usize,
    trace: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(batch: &'a ChannelBatch, realization: usize) -> Result<Self> {
        if realization >= batch.len() {
            return Err(Error::Domain(format!(
                "realization {realization} out of range for a batch of {}",
                batch.len()
            )));
        }
        Ok(Evaluator {
            batch,
            realization,
            power_mw: batch.scenario.power_mw(),
            noise_mw: batch.scenario.noise_mw(),
            cache: HashMap::new(),
            evals: 0,
            hits: 0,
            trace: Vec::new(),
        })
    }

    pub fn batch(&self) -> &'a ChannelBatch {
        self.batch
    }

    pub fn realization(&self) -> usize {
        self.realization
    }

    /// `N × K` channel of this realization.
    pub fn channel(&self) -> &'a DMatrix<Complex64> {
        self.batch.realization(self.realization)
    }

    pub fn num_ports(&self) -> usize {
        self.batch.num_ports()
    }

    pub fn selected_n(&self) -> usize {
        self.batch.selected_n()
    }

    pub fn users(&self) -> usize {
        self.batch.users()
    }

    /// Solver invocations so far.
    pub fn evals(&self) -> usize {
        self.evals
    }

    pub fn cache_hits(&self) -> usize {
        self.hits
    }

    /// Balanced SINR of every solver invocation, in call order.
    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn effective_channel(&self, ports: &[usize]) -> Result<EffectiveChannel> {
        let h = self.channel();
        let sel = DMatrix::from_fn(ports.len(), h.ncols(), |i, k| h[(ports[i], k)]);
        EffectiveChannel::new(sel, self.power_mw, self.noise_mw)
    }

    /// Balanced SINR of `sel`.
    pub fn evaluate(&mut self, sel: &PortSelection) -> Result<f64> {
        self.evaluate_ports(sel.ports(), true)
    }

    /// Like [`evaluate`](Self::evaluate) but leaves the cache untouched on a
    /// miss; used by full enumeration, which never revisits a subset.
    pub fn evaluate_transient(&mut self, sel: &PortSelection) -> Result<f64> {
        self.evaluate_ports(sel.ports(), false)
    }

    /// Validates raw port indices and scores them.
    pub fn evaluate_raw(&mut self, ports: &[usize]) -> Result<f64> {
        let sel = PortSelection::new(ports.to_vec(), self.num_ports())?;
        if sel.len() != self.selected_n() {
            return Err(Error::Domain(format!(
                "selection has {} ports, expected {}",
                sel.len(),
                self.selected_n()
            )));
        }
        self.evaluate(&sel)
    }

    fn evaluate_ports(&mut self, ports: &[usize], store: bool) -> Result<f64> {
        let mut key = ports.to_vec();
        key.sort_unstable();
        if let Some(&g) = self.cache.get(&key) {
            self.hits += 1;
            return Ok(g);
        }
        let ch = self.effective_channel(&key)?;
        let gamma = sinr::balance_default(&ch)?.gamma;
        self.evals += 1;
        self.trace.push(gamma);
        if store {
            self.cache.insert(key, gamma);
        }
        Ok(gamma)
    }
}

/// Balanced SINR of `sel` on one realization, without memoization.
pub fn evaluate_selection(batch: &ChannelBatch, realization: usize, sel: &PortSelection) -> Result<f64> {
    Evaluator::new(batch, realization)?.evaluate(sel)
}

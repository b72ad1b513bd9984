use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Completion, Outcome, PromptRequest, Provider, ProviderError};

/// Presentation order for a run: `(round, question_id)` with rounds numbered
/// from 1 and question order shuffled independently per round.
pub fn schedule(question_ids: &[u32], rounds: u32, seed: u64) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(question_ids.len() * rounds as usize);
    for round in 1..=rounds {
        let mut ids = question_ids.to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(round as u64));
        ids.shuffle(&mut rng);
        out.extend(ids.into_iter().map(|q| (round, q)));
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatchSummary {
    pub ok: usize,
    pub refused: usize,
    pub failed: usize,
    /// Requests never delivered because the sink stopped the batch.
    pub skipped: usize,
}

impl BatchSummary {
    pub fn delivered(&self) -> usize {
        self.ok + self.refused + self.failed
    }

    fn count(&mut self, r: &Result<Completion, ProviderError>) {
        match r {
            Ok(c) if c.outcome == Outcome::Refused => self.refused += 1,
            Ok(c) if c.outcome == Outcome::Failed => self.failed += 1,
            Ok(_) => self.ok += 1,
            Err(_) => self.failed += 1,
        }
    }
}

/// Sends every request with at most `max_in_flight` outstanding and hands each
/// result to `sink` on the calling thread, in arrival order. Per-request errors
/// go to the sink; only preflight (configuration) errors fail the batch. A sink
/// error stops further requests and is returned.
pub fn run_batch<E, F>(
    provider: &dyn Provider,
    requests: &[PromptRequest],
    max_in_flight: usize,
    mut sink: F,
) -> Result<BatchSummary, BatchError<E>>
where
    F: FnMut(&PromptRequest, Result<Completion, ProviderError>) -> Result<(), E>,
{
    provider.preflight(requests).map_err(BatchError::Config)?;
    let mut summary = BatchSummary::default();
    if requests.is_empty() {
        return Ok(summary);
    }

    if max_in_flight <= 1 {
        for (i, req) in requests.iter().enumerate() {
            let r = provider.complete(req);
            summary.count(&r);
            if let Err(e) = sink(req, r) {
                summary.skipped = requests.len() - i - 1;
                return Err(BatchError::Sink(e, summary));
            }
        }
        return Ok(summary);
    }

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let workers = max_in_flight.min(requests.len());
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop) = (&next, &stop);
            scope.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = requests.get(i) else { break };
                if tx.send((i, provider.complete(req))).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut failure = None;
        for (i, r) in rx {
            if failure.is_some() {
                continue;
            }
            summary.count(&r);
            if let Err(e) = sink(&requests[i], r) {
                stop.store(true, Ordering::Relaxed);
                failure = Some(e);
            }
        }
        match failure {
            Some(e) => {
                summary.skipped = requests.len() - summary.delivered();
                Err(BatchError::Sink(e, summary))
            }
            None => Ok(summary),
        }
    })
}

#[derive(Debug)]
pub enum BatchError<E> {
    Config(ProviderError),
    /// The sink failed; carries the counts delivered up to that point.
    Sink(E, BatchSummary),
}

impl<E: std::fmt::Display> std::fmt::Display for BatchError<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BatchError::Config(e) => write!(f, "{e}"),
            BatchError::Sink(e, s) => write!(f, "batch stopped after {} responses: {e}", s.delivered()),
        }
    }
}

impl<E: std::fmt::Debug + std::fmt::Display> std::error::Error for BatchError<E> {}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::pruning::ThresholdVector;

/// Global thresholds of the current and previous round plus the sampling RNG.
#[derive(Debug, Clone)]
pub struct ServerState {
    global: ThresholdVector,
    previous: ThresholdVector,
    round: usize,
    pub(crate) rng: ChaCha8Rng,
}

impl ServerState {
    pub fn new(initial: ThresholdVector, sampling_seed: u64) -> Self {
        ServerState {
            previous: initial.clone(),
            global: initial,
            round: 0,
            rng: ChaCha8Rng::seed_from_u64(sampling_seed),
        }
    }

    pub fn global(&self) -> &ThresholdVector {
        &self.global
    }

    pub fn previous(&self) -> &ThresholdVector {
        &self.previous
    }

    /// Number of completed rounds.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Installs the aggregate of the round just finished.
    pub fn advance(&mut self, aggregated: ThresholdVector) {
        self.previous = std::mem::replace(&mut self.global, aggregated);
        self.round += 1;
    }

    /// Counts a round that did not change the global thresholds.
    pub(crate) fn skip_round(&mut self) {
        self.previous = self.global.clone();
        self.round += 1;
    }
}

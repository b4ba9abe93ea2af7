use crate::accounting::BITS_PER_SCALAR;
use crate::pruning::ThresholdVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Downlink,
    Uplink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Thresholds,
    DenseParams,
}

/// One recorded message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transfer {
    pub round: usize,
    pub client: usize,
    pub direction: Direction,
    pub kind: PayloadKind,
    pub scalars: u64,
}

impl Transfer {
    pub fn bits(&self) -> u64 {
        self.scalars * BITS_PER_SCALAR
    }
}

/// Every byte exchanged between server and clients passes through here, so
/// the communication cost is measured rather than computed from formulas.
#[derive(Debug, Clone, Default)]
pub struct Channel {
    log: Vec<Transfer>,
}

impl Channel {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&mut self, round: usize, client: usize, direction: Direction, kind: PayloadKind, scalars: usize) {
        self.log.push(Transfer {
            round,
            client,
            direction,
            kind,
            scalars: scalars as u64,
        });
    }

    pub fn send_thresholds(
        &mut self,
        round: usize,
        client: usize,
        direction: Direction,
        payload: ThresholdVector,
    ) -> ThresholdVector {
        self.record(round, client, direction, PayloadKind::Thresholds, payload.len());
        payload
    }

    pub fn send_params(&mut self, round: usize, client: usize, direction: Direction, payload: Vec<f64>) -> Vec<f64> {
        self.record(round, client, direction, PayloadKind::DenseParams, payload.len());
        payload
    }

    pub fn transfers(&self) -> &[Transfer] {
        &self.log
    }

    pub fn round_bits(&self, round: usize, direction: Direction) -> u64 {
        self.log
            .iter()
            .filter(|t| t.round == round && t.direction == direction)
            .map(Transfer::bits)
            .sum()
    }

    pub fn total_bits(&self) -> u64 {
        self.log.iter().map(Transfer::bits).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_scalars_and_bits() {
        let mut ch = Channel::new();
        let tau = ThresholdVector::from_layers(vec![vec![0.1; 3], vec![0.0; 2]]).unwrap();
        let got = ch.send_thresholds(0, 4, Direction::Downlink, tau.clone());
        assert_eq!(got, tau);
        ch.send_params(0, 4, Direction::Uplink, vec![0.0; 10]);
        ch.send_thresholds(1, 2, Direction::Uplink, tau);
        assert_eq!(ch.round_bits(0, Direction::Downlink), 5 * 32);
        assert_eq!(ch.round_bits(0, Direction::Uplink), 10 * 32);
        assert_eq!(ch.round_bits(1, Direction::Uplink), 5 * 32);
        assert_eq!(ch.total_bits(), 20 * 32);
        assert_eq!(ch.transfers()[1].kind, PayloadKind::DenseParams);
    }
}

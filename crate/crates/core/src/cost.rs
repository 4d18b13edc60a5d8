//! Transport-cost accounting.
//!
//! The cost unit is one full-model transmission between one client and the
//! server. The analytic per-round mean upload cost for a decayed schedule
//! with masking is
//!
//! ```text
//! f = (gamma / R) * sum_t C * exp(-beta * t)
//! ```
//!
//! with `t` running over `R` rounds from the configured origin. The measured
//! counterpart divides the scalars actually uploaded by
//! `model_numel * M * R`, the cost of the whole population uploading full
//! models every round, so the two quantities are directly comparable.
//! Downloads (the full global model to each selected client) are counted
//! separately; the analytic formula covers uploads only.

use crate::sampling::RoundOrigin;

/// Scalar-upload/download counters for one run. Counters only grow.
#[derive(Debug, Clone)]
pub struct CostLedger {
    uploaded_scalars: u64,
    downloaded_scalars: u64,
    model_numel: u64,
    num_clients: u64,
}

impl CostLedger {
    pub fn new(model_numel: u64, num_clients: u64) -> CostLedger {
        assert!(model_numel > 0 && num_clients > 0);
        CostLedger {
            uploaded_scalars: 0,
            downloaded_scalars: 0,
            model_numel,
            num_clients,
        }
    }

    pub fn record_upload(&mut self, scalars: u64) {
        self.uploaded_scalars += scalars;
    }

    pub fn record_download(&mut self, scalars: u64) {
        self.downloaded_scalars += scalars;
    }

    pub fn uploaded_scalars(&self) -> u64 {
        self.uploaded_scalars
    }

    pub fn downloaded_scalars(&self) -> u64 {
        self.downloaded_scalars
    }

    pub fn model_numel(&self) -> u64 {
        self.model_numel
    }

    pub fn num_clients(&self) -> u64 {
        self.num_clients
    }
}

/// Analytic mean per-round upload cost in full-population units.
pub fn analytic_cost(
    initial_rate: f64,
    decay: f64,
    keep_fraction: f64,
    rounds: usize,
    origin: RoundOrigin,
) -> f64 {
    assert!(rounds >= 1, "cost is defined for at least one round");
    let offset = origin.offset() as usize;
    // sum the bare decay factors first so that beta = 0 reduces to exactly
    // keep_fraction * initial_rate
    let sum: f64 = (0..rounds)
        .map(|r| (-decay * (r + offset) as f64).exp())
        .sum();
    keep_fraction * initial_rate * (sum / rounds as f64)
}

/// Measured mean per-round upload cost:
/// `uploaded / (model_numel * M * R)`.
pub fn normalized_upload_cost(ledger: &CostLedger, rounds: usize) -> f64 {
    assert!(rounds >= 1, "cost is defined for at least one round");
    ledger.uploaded_scalars as f64
        / (ledger.model_numel as f64 * ledger.num_clients as f64 * rounds as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_masking_no_decay_equals_initial_rate() {
        for rounds in [1, 5, 50] {
            for origin in [RoundOrigin::Zero, RoundOrigin::One] {
                assert_eq!(analytic_cost(0.8, 0.0, 1.0, rounds, origin), 0.8);
            }
        }
    }

    #[test]
    fn zero_keep_fraction_costs_nothing() {
        assert_eq!(analytic_cost(1.0, 0.3, 0.0, 20, RoundOrigin::One), 0.0);
    }

    #[test]
    fn summation_matches_geometric_closed_form() {
        // independent algebraic route: gamma/R * C * r * (1 - r^R) / (1 - r)
        let (c, beta, gamma, rounds) = (1.0, 0.1f64, 0.5, 10);
        let got = analytic_cost(c, beta, gamma, rounds, RoundOrigin::One);
        let r = (-beta).exp();
        let closed = gamma / rounds as f64 * c * r * (1.0 - r.powi(rounds as i32)) / (1.0 - r);
        assert!((got - closed).abs() < 1e-15);
        assert!((got - 0.30052060512293155).abs() < 1e-12);
    }

    #[test]
    fn origin_zero_includes_undecayed_round() {
        let got = analytic_cost(1.0, 0.1, 1.0, 31, RoundOrigin::Zero);
        assert!((got - 0.32370774103794153).abs() < 1e-12);
        // cumulative over the 31 rounds lands near 10 full-cohort uploads
        assert!((got * 31.0 - 10.034939972176188).abs() < 1e-9);
    }

    #[test]
    fn full_uploads_measure_population_fraction() {
        // m of M clients upload full models for R rounds -> m/M
        let numel = 44;
        let clients = 10;
        let m = 4;
        let rounds = 6;
        let mut ledger = CostLedger::new(numel, clients);
        for _ in 0..rounds {
            ledger.record_upload(m * numel);
        }
        let cost = normalized_upload_cost(&ledger, rounds as usize);
        assert!((cost - m as f64 / clients as f64).abs() < 1e-15);
    }

    #[test]
    fn half_masking_halves_the_cost() {
        let numel = 40;
        let clients = 8;
        let mut full = CostLedger::new(numel, clients);
        let mut half = CostLedger::new(numel, clients);
        for _ in 0..5 {
            full.record_upload(clients * numel);
            half.record_upload(clients * numel / 2);
        }
        assert!(
            (normalized_upload_cost(&half, 5) - normalized_upload_cost(&full, 5) / 2.0).abs()
                < 1e-15
        );
    }

    #[test]
    fn counters_accumulate() {
        let mut ledger = CostLedger::new(10, 2);
        ledger.record_upload(3);
        ledger.record_download(20);
        ledger.record_upload(4);
        assert_eq!(ledger.uploaded_scalars(), 7);
        assert_eq!(ledger.downloaded_scalars(), 20);
    }
}

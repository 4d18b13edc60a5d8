//! Weighted federated averaging of client models.
//!
//! The default `Weighted` mode computes `sum_i (n_i / n) * theta_i` with `n`
//! summed over the listed clients, the standard sample-count-weighted
//! average. `Uniform` is the plain mean `(1/m) * sum_i theta_i`.
//! `PaperLiteral` applies both factors, `(1/m) * sum_i (n_i / n) * theta_i`,
//! which shrinks the model whenever more than one client reports; it exists
//! so that reading can be compared experimentally rather than silently
//! corrected. Updates are summed in ascending client id order, so the result
//! does not depend on arrival order.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::ParamSet;

/// One client's contribution to a round.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// Possibly masked trained parameters.
    pub params: ParamSet,
    /// Training instances on the client, the aggregation weight.
    pub num_samples: u64,
    /// Scalars actually uploaded after masking.
    pub transmitted_scalars: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Weighted,
    Uniform,
    PaperLiteral,
}

/// Average client models into the next global model.
pub fn fedavg(updates: &[ClientUpdate], mode: AggregationMode) -> Result<ParamSet> {
    if updates.is_empty() {
        return Err(Error::EmptyUpdates);
    }
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);

    let m = order.len() as f64;
    let total_samples: u64 = order.iter().map(|u| u.num_samples).sum();
    let n = total_samples as f64;

    let mut result = order[0].params.zeros_like();
    for update in order {
        let weight = match mode {
            AggregationMode::Weighted => update.num_samples as f64 / n,
            AggregationMode::Uniform => 1.0 / m,
            AggregationMode::PaperLiteral => update.num_samples as f64 / n / m,
        };
        result.axpy(weight, &update.params)?;
    }
    Ok(result)
}

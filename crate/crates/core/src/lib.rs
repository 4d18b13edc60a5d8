//! Deterministic single-process simulator for communication-efficient
//! federated averaging.
//!
//! The crate models one server and a population of clients holding IID
//! shards of a dataset. Each round the server samples a client fraction
//! (fixed, or decaying exponentially), ships the global model, runs local
//! SGD on every selected client, masks the uploads (random or top-k
//! selective), and aggregates by weighted averaging. Every scalar moved in
//! either direction is counted, so measured transport cost can be compared
//! against the closed-form schedule cost.
//!
//! Everything is a pure function of the [`engine::RunConfig`]: reruns and
//! concurrent client execution produce byte-identical metrics.

pub mod aggregation;
pub mod cost;
pub mod data;
pub mod engine;
pub mod error;
pub mod masking;
pub mod model;
pub mod params;
pub mod report;
pub mod rng;
pub mod sampling;

pub use aggregation::{fedavg, AggregationMode, ClientUpdate};
pub use cost::{analytic_cost, normalized_upload_cost, CostLedger};
pub use data::{
    generate_blobs, load_csv, partition_iid, save_csv, split_dataset, Dataset, Partition,
};
pub use engine::{
    run, run_with_workers, sweep, sweep_with_workers, DataSource, RoundRecord, RunConfig,
    RunOutput, SweepAxis, SweepRun,
};
pub use error::{Error, Result};
pub use masking::{
    apply_mask, mask_model, random_mask, selective_mask, LayerMask, MaskFill, MaskingPolicy,
};
pub use model::{Activation, Model, ModelKind, ModelSpec, TrainConfig};
pub use params::{Matrix, ParamSet};
pub use sampling::{select_clients, RoundOrigin, SamplingSchedule, ScheduleKind};

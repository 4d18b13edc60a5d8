//! The per-round server loop: sample clients, dispatch local training, mask
//! uploads, aggregate, evaluate, and account for every scalar moved.
//!
//! Runs are bit-reproducible in the configuration alone. Client tasks within
//! a round may execute on any number of worker threads: each task draws from
//! its own `(seed, role, round, client)` stream, results are collected in
//! selection order, and aggregation sums in ascending client id order, so
//! scheduling cannot influence a single bit of the output.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use crate::aggregation::{fedavg, AggregationMode, ClientUpdate};
use crate::cost::{normalized_upload_cost, CostLedger};
use crate::data::{generate_blobs, load_csv, partition_iid, split_dataset, Dataset};
use crate::error::{Error, Result};
use crate::masking::{mask_model, MaskingPolicy};
use crate::model::{Model, ModelSpec, TrainConfig};
use crate::params::ParamSet;
use crate::rng::{mix64, role, stream};
use crate::sampling::{select_clients, SamplingSchedule};

use rand::Rng;

/// Where the train and test datasets come from.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    /// Synthetic Gaussian blobs; one pool of `train_examples +
    /// test_examples` rows is generated and split by a seeded shuffle, so
    /// both sides share the class means.
    Blobs {
        train_examples: usize,
        test_examples: usize,
        dims: usize,
        classes: usize,
        spread: f64,
    },
    /// `label,f1,...,fd` files, gzip-compressed when the extension is `.gz`.
    Csv {
        train_path: PathBuf,
        test_path: PathBuf,
    },
}

/// Everything a run depends on. Two runs with equal configs produce
/// byte-identical metrics.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub num_clients: usize,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub sampling: SamplingSchedule,
    pub masking: MaskingPolicy,
    pub aggregation: AggregationMode,
    pub rounds: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Probability that a selected client drops out of the round. Off by
    /// default; when every selected client would drop, the round keeps the
    /// original selection rather than stalling.
    pub dropout_prob: f64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.sampling.validate()?;
        self.masking.validate()?;
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be positive".into()));
        }
        if self.num_clients < self.sampling.min_clients {
            return Err(Error::InvalidConfig(format!(
                "clients={} is below sampling.min_clients={}",
                self.num_clients, self.sampling.min_clients
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout_prob
            )));
        }
        if let DataSource::Blobs {
            train_examples,
            test_examples,
            dims,
            classes,
            spread,
        } = self.data
        {
            if classes == 0 || train_examples < classes.max(self.num_clients) {
                return Err(Error::InvalidConfig(format!(
                    "data.n={train_examples} cannot cover {classes} classes and {} clients",
                    self.num_clients
                )));
            }
            if test_examples == 0 {
                return Err(Error::InvalidConfig("data.test_n must be positive".into()));
            }
            if dims != self.model.input_dim {
                return Err(Error::InvalidConfig(format!(
                    "data.d={dims} does not match model.input_dim={}",
                    self.model.input_dim
                )));
            }
            if classes > self.model.num_classes {
                return Err(Error::InvalidConfig(format!(
                    "data.classes={classes} exceeds model.classes={}",
                    self.model.num_classes
                )));
            }
            if !(spread.is_finite() && spread >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "data.spread must be non-negative, got {spread}"
                )));
            }
        }
        Ok(())
    }
}

/// One row of the per-round metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Sampling rate `c` the schedule produced for this round.
    pub sample_rate: f64,
    /// Number of clients that actually participated.
    pub m: usize,
    pub selected: Vec<usize>,
    /// Mean post-training loss of the participating clients on their own
    /// shards.
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    /// Scalars uploaded this round.
    pub uploaded: u64,
    /// Scalars downloaded this round.
    pub downloaded: u64,
    /// Cumulative normalized upload cost over the whole run length.
    pub cum_cost: f64,
}

/// Metrics plus the final global model.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub final_params: ParamSet,
}

impl RunOutput {
    pub fn final_record(&self) -> &RoundRecord {
        self.records.last().expect("runs have at least one round")
    }
}

/// Observation point for test builds; invoked sequentially after each
/// round's client work completes.
pub(crate) trait RoundHook: Send {
    fn on_client_trained(&mut self, _round: usize, _client_id: usize, _shard: &[usize]) {}
}

pub(crate) struct NoopHook;

impl RoundHook for NoopHook {}

/// Run with the global rayon pool.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    run_with_workers(config, 0)
}

/// Run with a dedicated pool of `workers` threads (0 means the global
/// pool). The worker count never changes the output bytes.
pub fn run_with_workers(config: &RunConfig, workers: usize) -> Result<RunOutput> {
    run_with_hook(config, workers, &mut NoopHook)
}

pub(crate) fn run_with_hook(
    config: &RunConfig,
    workers: usize,
    hook: &mut dyn RoundHook,
) -> Result<RunOutput> {
    config.validate()?;
    if workers == 0 {
        run_rounds(config, hook)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::ThreadPool(e.to_string()))?;
        pool.install(|| run_rounds(config, hook))
    }
}

fn load_data(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    match &config.data {
        DataSource::Blobs {
            train_examples,
            test_examples,
            dims,
            classes,
            spread,
        } => {
            let pool = generate_blobs(
                train_examples + test_examples,
                *dims,
                *classes,
                *spread,
                mix64(&[config.seed, role::DATA]),
            )?;
            split_dataset(
                &pool,
                *train_examples,
                mix64(&[config.seed, role::DATA_SPLIT]),
            )
        }
        DataSource::Csv {
            train_path,
            test_path,
        } => Ok((load_csv(train_path)?, load_csv(test_path)?)),
    }
}

fn run_rounds(config: &RunConfig, hook: &mut dyn RoundHook) -> Result<RunOutput> {
    let (train, test) = load_data(config)?;
    let model = Model::new(config.model.clone())?;
    model.ensure_data_shape(&train)?;
    model.ensure_data_shape(&test)?;

    let partition = partition_iid(
        &train,
        config.num_clients,
        mix64(&[config.seed, role::PARTITION]),
    )?;
    let mut global = model.init(mix64(&[config.seed, role::INIT]));
    let numel = global.numel() as u64;
    let mut ledger = CostLedger::new(numel, config.num_clients as u64);
    let mut records = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        let sample_rate = config.sampling.rate_at(round);
        let m = config.sampling.clients_at(round, config.num_clients);
        let mut selected = select_clients(
            m,
            config.num_clients,
            mix64(&[config.seed, role::SELECT, round as u64]),
        );
        if config.dropout_prob > 0.0 {
            let mut rng = stream(&[config.seed, role::DROPOUT, round as u64]);
            let survivors: Vec<usize> = selected
                .iter()
                .copied()
                .filter(|_| rng.gen::<f64>() >= config.dropout_prob)
                .collect();
            if !survivors.is_empty() {
                selected = survivors;
            }
        }
        ledger.record_download(selected.len() as u64 * numel);

        let results: Vec<(ClientUpdate, f64)> = selected
            .par_iter()
            .map(|&client_id| {
                let shard = partition.shard(client_id);
                let trained = model.local_train(
                    &global,
                    &train,
                    shard,
                    &config.train,
                    mix64(&[config.seed, role::LOCAL_TRAIN, round as u64, client_id as u64]),
                )?;
                let shard_loss = model.batch_loss(&trained, &train, shard)?;
                let (masked, transmitted) = mask_model(
                    &global,
                    &trained,
                    &config.masking,
                    mix64(&[config.seed, role::MASK, round as u64, client_id as u64]),
                )?;
                Ok((
                    ClientUpdate {
                        client_id,
                        params: masked,
                        num_samples: shard.len() as u64,
                        transmitted_scalars: transmitted,
                    },
                    shard_loss,
                ))
            })
            .collect::<Result<Vec<_>>>()?;

        for &client_id in &selected {
            hook.on_client_trained(round, client_id, partition.shard(client_id));
        }

        let uploaded: u64 = results.iter().map(|(u, _)| u.transmitted_scalars).sum();
        ledger.record_upload(uploaded);
        // selection order is ascending client id, which fixes this sum
        let train_loss =
            results.iter().map(|(_, l)| l).sum::<f64>() / results.len() as f64;
        let updates: Vec<ClientUpdate> = results.into_iter().map(|(u, _)| u).collect();

        global = fedavg(&updates, config.aggregation)?;
        global
            .check_finite()
            .map_err(|_| Error::NonFiniteRound { round })?;

        let do_eval = (round + 1) % config.eval_every == 0 || round + 1 == config.rounds;
        let (test_loss, test_acc) = if do_eval {
            let (l, a) = model.evaluate(&global, &test)?;
            (Some(l), Some(a))
        } else {
            (None, None)
        };

        records.push(RoundRecord {
            round,
            sample_rate,
            m: selected.len(),
            downloaded: selected.len() as u64 * numel,
            selected,
            train_loss,
            test_loss,
            test_acc,
            uploaded,
            cum_cost: normalized_upload_cost(&ledger, config.rounds),
        });
    }
    Ok(RunOutput {
        records,
        final_params: global,
    })
}

/// Which configuration knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Decay coefficient of a dynamic schedule.
    Decay,
    /// Masking keep fraction.
    KeepFraction,
    /// Initial sampling rate.
    InitialRate,
}

/// One sweep point.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub value: f64,
    pub config: RunConfig,
    pub records: Vec<RoundRecord>,
}

impl SweepRun {
    pub fn final_record(&self) -> &RoundRecord {
        self.records.last().expect("runs have at least one round")
    }
}

fn apply_axis(base: &RunConfig, axis: SweepAxis, value: f64) -> Result<RunConfig> {
    let mut config = base.clone();
    match axis {
        SweepAxis::Decay => {
            config.sampling.kind = crate::sampling::ScheduleKind::Dynamic { decay: value };
        }
        SweepAxis::InitialRate => {
            config.sampling.initial_rate = value;
        }
        SweepAxis::KeepFraction => {
            config.masking = match config.masking {
                MaskingPolicy::None => {
                    return Err(Error::InvalidConfig(
                        "masking.gamma sweep requires masking.kind of random or selective".into(),
                    ))
                }
                MaskingPolicy::Random { fill, .. } => MaskingPolicy::Random {
                    keep_fraction: value,
                    fill,
                },
                MaskingPolicy::Selective { fill, .. } => MaskingPolicy::Selective {
                    keep_fraction: value,
                    fill,
                },
            };
        }
    }
    Ok(config)
}

/// One run per value, all sharing the base seed so data partition and model
/// initialization are paired across values.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRun>> {
    sweep_with_workers(base, axis, values, 0)
}

pub fn sweep_with_workers(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    workers: usize,
) -> Result<Vec<SweepRun>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&value| {
            let config = apply_axis(base, axis, value)?;
            let output = run_with_workers(&config, workers)?;
            Ok(SweepRun {
                value,
                config,
                records: output.records,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::MaskFill;
    use crate::model::{Activation, ModelKind};

    fn base_config() -> RunConfig {
        RunConfig {
            data: DataSource::Blobs {
                train_examples: 120,
                test_examples: 40,
                dims: 4,
                classes: 3,
                spread: 1.0,
            },
            num_clients: 6,
            model: ModelSpec::logreg(4, 3),
            train: TrainConfig {
                epochs: 1,
                batch_size: 16,
                learning_rate: 0.1,
            },
            sampling: SamplingSchedule::fixed(0.5),
            masking: MaskingPolicy::None,
            aggregation: AggregationMode::Weighted,
            rounds: 4,
            eval_every: 1,
            seed: 7,
            dropout_prob: 0.0,
        }
    }

    #[test]
    fn zero_decay_dynamic_equals_static() {
        let fixed = base_config();
        let mut dynamic = base_config();
        dynamic.sampling = SamplingSchedule::decaying(0.5, 0.0);
        let a = run(&fixed).unwrap();
        let b = run(&dynamic).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn full_keep_selective_equals_no_masking() {
        let plain = base_config();
        let mut masked = base_config();
        masked.masking = MaskingPolicy::Selective {
            keep_fraction: 1.0,
            fill: MaskFill::Zero,
        };
        let a = run(&plain).unwrap();
        let b = run(&masked).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let config = base_config();
        let serial = run_with_workers(&config, 1).unwrap();
        let parallel = run_with_workers(&config, 4).unwrap();
        assert_eq!(serial.records, parallel.records);
        assert_eq!(serial.final_params, parallel.final_params);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let config = base_config();
        assert_eq!(run(&config).unwrap().records, run(&config).unwrap().records);
    }

    #[test]
    fn cumulative_cost_tracks_ledger_at_every_prefix() {
        let mut config = base_config();
        config.masking = MaskingPolicy::Random {
            keep_fraction: 0.3,
            fill: MaskFill::ServerFill,
        };
        config.rounds = 6;
        let output = run(&config).unwrap();
        let numel = 4 * 3 + 3;
        let mut uploaded_so_far = 0u64;
        let mut last_cost = 0.0;
        for record in &output.records {
            uploaded_so_far += record.uploaded;
            let expected = uploaded_so_far as f64
                / (numel as f64 * config.num_clients as f64 * config.rounds as f64);
            assert!((record.cum_cost - expected).abs() < 1e-15);
            assert!(record.cum_cost >= last_cost);
            last_cost = record.cum_cost;
            assert_eq!(record.downloaded, record.m as u64 * numel as u64);
            assert_eq!(record.m, record.selected.len());
        }
    }

    #[test]
    fn eval_cadence_skips_and_hits_final_round() {
        let mut config = base_config();
        config.rounds = 5;
        config.eval_every = 2;
        let output = run(&config).unwrap();
        let evaluated: Vec<bool> = output
            .records
            .iter()
            .map(|r| r.test_acc.is_some())
            .collect();
        // rounds are 0-based: evals after the 2nd and 4th rounds plus the last
        assert_eq!(evaluated, vec![false, true, false, true, true]);
    }

    #[test]
    fn every_client_trains_on_its_own_shard() {
        struct Recorder {
            seen: Vec<(usize, usize, Vec<usize>)>,
        }
        impl RoundHook for Recorder {
            fn on_client_trained(&mut self, round: usize, client_id: usize, shard: &[usize]) {
                self.seen.push((round, client_id, shard.to_vec()));
            }
        }
        let config = base_config();
        let mut hook = Recorder { seen: Vec::new() };
        run_with_hook(&config, 0, &mut hook).unwrap();

        let (train, _) = load_data(&config).unwrap();
        let partition = partition_iid(
            &train,
            config.num_clients,
            mix64(&[config.seed, role::PARTITION]),
        )
        .unwrap();
        assert!(!hook.seen.is_empty());
        for (_, client_id, shard) in &hook.seen {
            assert_eq!(shard, partition.shard(*client_id));
        }
    }

    #[test]
    fn dropout_filters_deterministically() {
        let mut config = base_config();
        config.dropout_prob = 0.5;
        config.sampling = SamplingSchedule::fixed(1.0);
        let a = run(&config).unwrap();
        let b = run(&config).unwrap();
        assert_eq!(a.records, b.records);
        // with six clients at 50% dropout some round should lose someone
        assert!(a.records.iter().any(|r| r.m < config.num_clients));
        for r in &a.records {
            assert!(r.m >= 1);
        }
    }

    #[test]
    fn numeric_blowup_reports_round() {
        let mut config = base_config();
        // one step at this rate pushes weights to ~1e308, so the next
        // forward pass overflows its logit products
        config.train.learning_rate = 1e308;
        config.train.epochs = 2;
        config.rounds = 5;
        match run(&config) {
            Err(Error::NonFiniteRound { round }) => assert!(round < 5),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn mlp_runs_end_to_end() {
        let mut config = base_config();
        config.model = ModelSpec::mlp(4, 8, 3, Activation::Tanh);
        let output = run(&config).unwrap();
        assert_eq!(output.records.len(), config.rounds);
        assert_eq!(output.final_params.numel(), 4 * 8 + 8 + 8 * 3 + 3);
        assert!(matches!(config.model.kind, ModelKind::Mlp));
    }

    #[test]
    fn sweep_singleton_matches_single_run() {
        let mut config = base_config();
        config.masking = MaskingPolicy::Selective {
            keep_fraction: 0.7,
            fill: MaskFill::Zero,
        };
        let swept = sweep(&config, SweepAxis::KeepFraction, &[0.7]).unwrap();
        assert_eq!(swept.len(), 1);
        assert_eq!(swept[0].records, run(&config).unwrap().records);
    }

    #[test]
    fn sweep_zero_decay_point_equals_static_baseline() {
        let config = base_config();
        let swept = sweep(&config, SweepAxis::Decay, &[0.0, 0.01]).unwrap();
        let baseline = run(&config).unwrap();
        assert_eq!(swept[0].records, baseline.records);
        assert_ne!(swept[1].records, baseline.records);
    }

    #[test]
    fn sweep_gamma_scales_uploads_proportionally() {
        let mut config = base_config();
        config.masking = MaskingPolicy::Selective {
            keep_fraction: 1.0,
            fill: MaskFill::Zero,
        };
        let swept = sweep(&config, SweepAxis::KeepFraction, &[0.2, 0.9]).unwrap();
        // per-layer keep counts: w 12 -> {2.4 -> 2, 10.8 -> 11}, b 3 -> {0.6 -> 1, 2.7 -> 3}
        let per_client = [3u64, 14u64];
        for (swept_run, expected) in swept.iter().zip(per_client) {
            for record in &swept_run.records {
                assert_eq!(record.uploaded, record.m as u64 * expected);
            }
        }
        let ratio = per_client[0] as f64 / per_client[1] as f64;
        assert!((ratio - 2.0 / 9.0_f64).abs() < 0.05);
    }

    #[test]
    fn sweep_gamma_requires_masking_enabled() {
        let config = base_config();
        assert!(matches!(
            sweep(&config, SweepAxis::KeepFraction, &[0.5]),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn sweep_rejects_empty_values() {
        let config = base_config();
        assert!(sweep(&config, SweepAxis::Decay, &[]).is_err());
    }

    #[test]
    fn validation_rejects_inconsistent_dims() {
        let mut config = base_config();
        config.model = ModelSpec::logreg(5, 3);
        assert!(matches!(run(&config), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn validation_rejects_population_below_min_clients() {
        let mut config = base_config();
        config.num_clients = 1;
        assert!(matches!(run(&config), Err(Error::InvalidConfig(_))));
    }
}

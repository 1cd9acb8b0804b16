//! Federated training of the shared detector and cluster-based fusion of
//! per-AP scores at the CPU.
//!
//! A round is: broadcast the global model, train locally at every AP on its
//! own shard, aggregate the returned parameters by weighted averaging, then
//! apply the server step. Only parameter tensors and a scalar weight travel
//! from an AP to the CPU; see [`wire`].

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{build_dataset, Dataset, FeatureScaler, Shard};
use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};
use crate::scenario::{ActivityVector, LargeScaleMatrix, Scenario};
use crate::slp::{
    adam_step, bce_loss_batch, forward, forward_batch, init_params, loss_and_grad_batch, AdamConfig, AdamState,
    DetectionScores, SlpParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServerMode {
    PlainAverage,
    ServerAdam,
}

/// How each AP's update is weighted in the average.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationWeighting {
    /// Local shard size.
    ShardSize,
    /// Shard size times the AP's summed large-scale gain over all devices.
    LargeScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub server_mode: ServerMode,
    /// Training events; every AP gets one sample per event.
    pub train_samples: usize,
    /// Held-out events used for the per-round loss.
    pub eval_samples: usize,
    pub local_adam: AdamConfig,
    pub server_adam: AdamConfig,
    pub weighting: AggregationWeighting,
    pub regenerate_each_round: bool,
    pub standardize_features: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            local_epochs: 2,
            batch_size: 32,
            server_mode: ServerMode::ServerAdam,
            train_samples: 4000,
            eval_samples: 200,
            local_adam: AdamConfig::default(),
            server_adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            weighting: AggregationWeighting::ShardSize,
            regenerate_each_round: false,
            standardize_features: false,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("rounds", self.rounds),
            ("batch_size", self.batch_size),
            ("train_samples", self.train_samples),
            ("eval_samples", self.eval_samples),
        ] {
            if v < 1 {
                return Err(Error::invalid(key, "must be at least 1"));
            }
        }
        self.local_adam.validate("local_adam")?;
        self.server_adam.validate("server_adam")?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate {
    pub params: SlpParams,
    pub weight: f64,
    pub ap_index: usize,
}

/// Normalized aggregation weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationWeights {
    pub weights: Vec<f64>,
}

impl AggregationWeights {
    pub fn normalize(raw: &[f64]) -> Result<Self> {
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weight", "aggregation weights must be finite and nonnegative"));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroWeights);
        }
        Ok(Self {
            weights: raw.iter().map(|w| w / total).collect(),
        })
    }
}

/// Run `epochs` passes of shuffled mini-batch Adam from a copy of `global`.
///
/// The shuffle for epoch e comes from `stream.child("epoch", e)`. A fresh
/// Adam state is used, and the returned weight is the shard size.
pub fn local_train(
    global: &SlpParams,
    shard: &Shard,
    epochs: usize,
    batch_size: usize,
    adam: AdamConfig,
    stream: &RngStream,
) -> Result<LocalUpdate> {
    if shard.is_empty() {
        return Err(Error::EmptyShard {
            ap_index: shard.ap_index,
        });
    }
    let batch_size = batch_size.max(1);
    let mut params = global.clone();
    let mut state = AdamState::new(adam, &params);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut stream.child("epoch", epoch as u64).rng());
        for chunk in order.chunks(batch_size) {
            let x = shard.features.select(Axis(0), chunk);
            let y = shard.labels.select(Axis(0), chunk);
            let (_, grads) = loss_and_grad_batch(&params, x.view(), y.view())?;
            adam_step(&mut params, &grads, &mut state)?;
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite { stage: "local training" });
    }
    Ok(LocalUpdate {
        params,
        weight: shard.len() as f64,
        ap_index: shard.ap_index,
    })
}

/// Parameter-wise weighted mean of the updates.
///
/// Updates are sorted by `ap_index` first and summed in that order, so the
/// result does not depend on the order of `updates`. Copies of one model
/// aggregate to that model exactly.
pub fn aggregate(updates: &[LocalUpdate]) -> Result<SlpParams> {
    let first = updates.first().ok_or(Error::NoUpdates)?;
    if updates.iter().any(|u| !u.params.same_shape(&first.params)) {
        return Err(Error::DimensionMismatch {
            what: "aggregated update shapes",
            expected: first.params.num_params(),
            got: updates
                .iter()
                .find(|u| !u.params.same_shape(&first.params))
                .map_or(0, |u| u.params.num_params()),
        });
    }
    let mut sorted: Vec<&LocalUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.ap_index);
    let raw: Vec<f64> = sorted.iter().map(|u| u.weight).collect();
    let weights = AggregationWeights::normalize(&raw)?;

    // Accumulate offsets from the lowest-index update so that identical
    // inputs come back unchanged.
    let reference = &sorted[0].params;
    let mut offset = reference.zeros_like();
    for (update, w) in sorted.iter().zip(&weights.weights) {
        for ((acc, src), base) in offset
            .tensors_mut()
            .into_iter()
            .zip(update.params.tensors())
            .zip(reference.tensors())
        {
            acc.iter_mut().zip(src).zip(base).for_each(|((a, s), b)| *a += w * (s - b));
        }
    }
    let mut out = reference.clone();
    for (o, d) in out.tensors_mut().into_iter().zip(offset.tensors()) {
        o.iter_mut().zip(d).for_each(|(o, d)| *o += d);
    }
    Ok(out)
}

/// The CPU's global step.
///
/// In server-Adam mode the difference `current − aggregated` is treated as a
/// pseudo-gradient for one Adam step on `current`.
pub fn server_step(
    current: &SlpParams,
    aggregated: &SlpParams,
    state: &mut AdamState,
    mode: ServerMode,
) -> Result<SlpParams> {
    if !current.same_shape(aggregated) {
        return Err(Error::DimensionMismatch {
            what: "server step shapes",
            expected: current.num_params(),
            got: aggregated.num_params(),
        });
    }
    match mode {
        ServerMode::PlainAverage => Ok(aggregated.clone()),
        ServerMode::ServerAdam => {
            let mut delta = current.clone();
            for (d, a) in delta.tensors_mut().into_iter().zip(aggregated.tensors()) {
                d.iter_mut().zip(a).for_each(|(d, a)| *d -= a);
            }
            let mut next = current.clone();
            adam_step(&mut next, &delta, state)?;
            Ok(next)
        }
    }
}

/// Per-round learning record.
///
/// Wall-clock timings are informational and excluded from equality.
#[derive(Clone, Debug)]
pub struct TrainingHistory {
    pub initial_heldout_bce: f64,
    /// Held-out BCE of the global model after each round.
    pub heldout_bce: Vec<f64>,
    pub round_seconds: Vec<f64>,
    pub master_seed: u64,
}

impl PartialEq for TrainingHistory {
    fn eq(&self, other: &Self) -> bool {
        self.initial_heldout_bce.to_bits() == other.initial_heldout_bce.to_bits()
            && self.heldout_bce.len() == other.heldout_bce.len()
            && self
                .heldout_bce
                .iter()
                .zip(&other.heldout_bce)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.master_seed == other.master_seed
    }
}

/// The trained global detector plus the per-AP input transforms it expects.
#[derive(Clone, Debug)]
pub struct TrainedDetector {
    pub params: SlpParams,
    /// One scaler per AP when standardization is enabled.
    pub scalers: Option<Vec<FeatureScaler>>,
}

impl TrainedDetector {
    /// Per-AP scores for one event, rows are APs.
    pub fn per_ap_scores(&self, features_per_ap: &[Vec<f64>]) -> Result<Array2<f64>> {
        let k = self.params.dims().2;
        let mut out = Array2::zeros((features_per_ap.len(), k));
        for (ap, features) in features_per_ap.iter().enumerate() {
            let scores = match &self.scalers {
                Some(scalers) => {
                    let mut x = features.clone();
                    scalers[ap].transform_in_place(&mut x);
                    forward(&self.params, &x)?.0
                }
                None => forward(&self.params, features)?.0,
            };
            out.row_mut(ap).assign(&ndarray::ArrayView1::from(&scores.0));
        }
        Ok(out)
    }
}

fn shards_of(dataset: &Dataset, num_aps: usize, scalers: Option<&[FeatureScaler]>) -> Vec<Shard> {
    (0..num_aps)
        .map(|ap| {
            let mut shard = dataset.shard(ap);
            if let Some(scalers) = scalers {
                scalers[ap].transform_rows(&mut shard.features);
            }
            shard
        })
        .collect()
}

fn heldout_bce(params: &SlpParams, shards: &[Shard]) -> Result<f64> {
    let mut total = 0.0;
    for shard in shards {
        let scores = forward_batch(params, shard.features.view())?;
        total += bce_loss_batch(scores.view(), shard.labels.view());
    }
    Ok(total / shards.len() as f64)
}

fn aggregation_weight(
    weighting: AggregationWeighting,
    shard_len: usize,
    beta: &LargeScaleMatrix,
    ap_index: usize,
) -> f64 {
    match weighting {
        AggregationWeighting::ShardSize => shard_len as f64,
        AggregationWeighting::LargeScale => shard_len as f64 * beta.beta.row(ap_index).sum(),
    }
}

/// Full federated training loop.
///
/// Training and held-out events are drawn once from children of `stream`
/// (training events are redrawn every round when `regenerate_each_round`
/// is set). Local trainings within a round run in parallel; results are
/// collected in AP order so the outcome is independent of the schedule.
pub fn run_training(
    scenario: &Scenario,
    fed: &FederationConfig,
    stream: &RngStream,
) -> Result<(TrainedDetector, TrainingHistory)> {
    fed.validate()?;
    let cfg = &scenario.config;
    let m = cfg.num_aps;
    let train_set = build_dataset(
        cfg,
        &scenario.beta,
        &scenario.pilots,
        fed.train_samples,
        &stream.named(streams::TRAINING),
    )?;
    let heldout_set = build_dataset(
        cfg,
        &scenario.beta,
        &scenario.pilots,
        fed.eval_samples,
        &stream.named(streams::HELDOUT),
    )?;

    let scalers: Option<Vec<FeatureScaler>> = fed
        .standardize_features
        .then(|| (0..m).map(|ap| FeatureScaler::fit(&train_set.shard(ap).features)).collect());
    let mut train_shards = shards_of(&train_set, m, scalers.as_deref());
    let heldout_shards = shards_of(&heldout_set, m, scalers.as_deref());

    let root = scenario.root_stream();
    let mut global = init_params(
        cfg.feature_len(),
        cfg.hidden_units,
        cfg.num_devices,
        &mut root.named(streams::MODEL_INIT).rng(),
    );
    let mut server_state = AdamState::new(fed.server_adam, &global);
    let initial = heldout_bce(&global, &heldout_shards)?;
    let mut history = TrainingHistory {
        initial_heldout_bce: initial,
        heldout_bce: Vec::with_capacity(fed.rounds),
        round_seconds: Vec::with_capacity(fed.rounds),
        master_seed: cfg.master_seed,
    };

    for round in 0..fed.rounds {
        let started = Instant::now();
        if fed.regenerate_each_round && round > 0 {
            let fresh = build_dataset(
                cfg,
                &scenario.beta,
                &scenario.pilots,
                fed.train_samples,
                &stream.child(streams::TRAINING, round as u64),
            )?;
            train_shards = shards_of(&fresh, m, scalers.as_deref());
        }
        let round_stream = stream.child(streams::LOCAL, round as u64);
        let updates = train_shards
            .par_iter()
            .map(|shard| {
                let mut update = local_train(
                    &global,
                    shard,
                    fed.local_epochs,
                    fed.batch_size,
                    fed.local_adam,
                    &round_stream.child("ap", shard.ap_index as u64),
                )?;
                update.weight = aggregation_weight(fed.weighting, shard.len(), &scenario.beta, shard.ap_index);
                Ok(update)
            })
            .collect::<Result<Vec<_>>>()?;
        let aggregated = aggregate(&updates)?;
        global = server_step(&global, &aggregated, &mut server_state, fed.server_mode)?;
        if !global.is_finite() {
            return Err(Error::NonFinite { stage: "server step" });
        }
        history.heldout_bce.push(heldout_bce(&global, &heldout_shards)?);
        history.round_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok((TrainedDetector { params: global, scalers }, history))
}

/// For each device, the indices of the T APs with the largest β, ties going
/// to the lower AP index.
pub fn reliability_clusters(beta: &LargeScaleMatrix, cluster_size: usize) -> Result<Vec<Vec<usize>>> {
    let m = beta.num_aps();
    if cluster_size == 0 || cluster_size > m {
        return Err(Error::invalid(
            "cluster_size",
            format!("cluster size {cluster_size} must lie in 1..={m}"),
        ));
    }
    Ok(beta
        .beta
        .columns()
        .into_iter()
        .map(|col| {
            let mut aps: Vec<usize> = (0..m).collect();
            // stable sort keeps ascending AP index among equal gains
            aps.sort_by(|&a, &b| col[b].total_cmp(&col[a]));
            aps.truncate(cluster_size);
            aps
        })
        .collect())
}

/// Average each device's score over its cluster of most reliable APs.
pub fn ponderate_scores(
    per_ap_scores: ArrayView2<f64>,
    beta: &LargeScaleMatrix,
    cluster_size: usize,
) -> Result<DetectionScores> {
    let clusters = reliability_clusters(beta, cluster_size)?;
    ponderate_with_clusters(per_ap_scores, &clusters)
}

pub fn ponderate_with_clusters(per_ap_scores: ArrayView2<f64>, clusters: &[Vec<usize>]) -> Result<DetectionScores> {
    if per_ap_scores.ncols() != clusters.len() {
        return Err(Error::DimensionMismatch {
            what: "per-AP score columns",
            expected: clusters.len(),
            got: per_ap_scores.ncols(),
        });
    }
    Ok(DetectionScores(
        clusters
            .iter()
            .enumerate()
            .map(|(k, cluster)| {
                cluster.iter().map(|&ap| per_ap_scores[[ap, k]]).sum::<f64>() / cluster.len() as f64
            })
            .collect(),
    ))
}

/// â_k = 1 iff ã_k ≥ θ.
pub fn threshold_detect(scores: &DetectionScores, theta: f64) -> ActivityVector {
    ActivityVector::new(scores.0.iter().map(|&s| s >= theta).collect())
}

/// Binary layout of an AP → CPU update.
///
/// Header (little-endian): magic `FLUP`, `u32` version, `u64` round,
/// `u64` ap_index, `f64` weight, then `u64` input, hidden and output sizes.
/// Body: w1 (hidden × input, row-major), b1, w2 (outputs × hidden), b2, all
/// as little-endian `f64`.
pub mod wire {
    use super::*;

    pub const MAGIC: &[u8; 4] = b"FLUP";
    pub const VERSION: u32 = 1;
    const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8 + 3 * 8;

    /// A named field of the payload and its length in elements.
    #[derive(Clone, Debug, PartialEq, Eq)]
    pub struct SchemaField {
        pub name: &'static str,
        pub len: usize,
    }

    pub fn schema(input: usize, hidden: usize, outputs: usize) -> Vec<SchemaField> {
        let f = |name, len| SchemaField { name, len };
        vec![
            f("magic", 1),
            f("version", 1),
            f("round", 1),
            f("ap_index", 1),
            f("weight", 1),
            f("input_dim", 1),
            f("hidden_dim", 1),
            f("output_dim", 1),
            f("w1", hidden * input),
            f("b1", hidden),
            f("w2", outputs * hidden),
            f("b2", outputs),
        ]
    }

    pub fn encode(update: &LocalUpdate, round: u64) -> Vec<u8> {
        let (input, hidden, outputs) = update.params.dims();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * update.params.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&round.to_le_bytes());
        out.extend_from_slice(&(update.ap_index as u64).to_le_bytes());
        out.extend_from_slice(&update.weight.to_le_bytes());
        for d in [input, hidden, outputs] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for tensor in update.params.tensors() {
            for v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    struct Reader<'a> {
        bytes: &'a [u8],
        pos: usize,
    }

    impl Reader<'_> {
        fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
            let end = self.pos + N;
            let slice = self
                .bytes
                .get(self.pos..end)
                .ok_or_else(|| Error::MalformedUpdate(format!("truncated at byte {}", self.pos)))?;
            self.pos = end;
            Ok(slice.try_into().expect("length checked"))
        }

        fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take()?))
        }

        fn f64(&mut self) -> Result<f64> {
            Ok(f64::from_le_bytes(self.take()?))
        }
    }

    /// Decode a payload into `(round, update)`.
    pub fn decode(bytes: &[u8]) -> Result<(u64, LocalUpdate)> {
        let mut r = Reader { bytes, pos: 0 };
        if &r.take::<4>()? != MAGIC {
            return Err(Error::MalformedUpdate("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take()?);
        if version != VERSION {
            return Err(Error::MalformedUpdate(format!("unsupported version {version}")));
        }
        let round = r.u64()?;
        let ap_index = r.u64()? as usize;
        let weight = r.f64()?;
        let input = r.u64()? as usize;
        let hidden = r.u64()? as usize;
        let outputs = r.u64()? as usize;
        let expected = HEADER_LEN + 8 * (hidden * input + hidden + outputs * hidden + outputs);
        if bytes.len() != expected {
            return Err(Error::MalformedUpdate(format!(
                "expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let mut params = SlpParams::zeros(input, hidden, outputs);
        for tensor in params.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = r.f64()?;
            }
        }
        Ok((
            round,
            LocalUpdate {
                params,
                weight,
                ap_index,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slp::backward;
    use ndarray::array;

    fn scalar(v: f64) -> SlpParams {
        let mut p = SlpParams::zeros(1, 1, 1);
        p.w1[[0, 0]] = v;
        p.b1[0] = v;
        p.w2[[0, 0]] = v;
        p.b2[0] = v;
        p
    }

    fn upd(v: f64, weight: f64, ap_index: usize) -> LocalUpdate {
        LocalUpdate {
            params: scalar(v),
            weight,
            ap_index,
        }
    }

    fn toy_shard(ap_index: usize, seed: u64, n: usize) -> Shard {
        let mut rng = RngStream::root(seed).rng();
        let features = Array2::from_shape_simple_fn((n, 4), || rand::Rng::random_range(&mut rng, -1.0..1.0));
        let labels = Array2::from_shape_fn((n, 3), |(i, j)| ((i + j) % 2) as f64);
        Shard {
            ap_index,
            features,
            labels,
        }
    }

    #[test]
    fn aggregate_weighted_mean() {
        assert_eq!(aggregate(&[upd(0.0, 1.0, 0), upd(4.0, 3.0, 1)]).unwrap(), scalar(3.0));
        assert_eq!(aggregate(&[upd(1.7, 5.0, 3)]).unwrap(), scalar(1.7));
        assert_eq!(aggregate(&[upd(0.3, 2.0, 0), upd(0.3, 2.0, 1)]).unwrap(), scalar(0.3));
    }

    #[test]
    fn aggregate_errors() {
        assert_eq!(aggregate(&[]), Err(Error::NoUpdates));
        assert_eq!(aggregate(&[upd(1.0, 0.0, 0), upd(2.0, 0.0, 1)]), Err(Error::ZeroWeights));
        let mut bad = upd(1.0, 1.0, 1);
        bad.params = SlpParams::zeros(2, 1, 1);
        assert!(aggregate(&[upd(1.0, 1.0, 0), bad]).is_err());
    }

    #[test]
    fn aggregation_weights_sum_to_one() {
        let w = AggregationWeights::normalize(&[3.0, 1.0, 6.0]).unwrap();
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn server_modes() {
        let cur = scalar(1.0);
        let agg = scalar(0.9);
        let mut st = AdamState::new(AdamConfig::default(), &cur);
        assert_eq!(server_step(&cur, &agg, &mut st, ServerMode::PlainAverage).unwrap(), agg);
        let same = server_step(&cur, &cur, &mut st, ServerMode::ServerAdam).unwrap();
        assert_eq!(same, cur);

        let mut fresh = AdamState::new(AdamConfig::default(), &cur);
        let next = server_step(&cur, &agg, &mut fresh, ServerMode::ServerAdam).unwrap();
        // Δ = 0.1 > 0, so the step is −lr.
        let moved = next.b2[0] - cur.b2[0];
        assert!((moved + 1e-3).abs() <= 1e-6, "moved {moved}");
    }

    #[test]
    fn zero_epochs_return_global() {
        let global = init_params(4, 5, 3, &mut RngStream::root(1).rng());
        let u = local_train(&global, &toy_shard(2, 3, 10), 0, 4, AdamConfig::default(), &RngStream::root(9)).unwrap();
        assert_eq!(u.params, global);
        assert_eq!(u.weight, 10.0);
        assert_eq!(u.ap_index, 2);
    }

    #[test]
    fn empty_shard_rejected() {
        let global = SlpParams::zeros(4, 2, 3);
        let shard = Shard {
            ap_index: 5,
            features: Array2::zeros((0, 4)),
            labels: Array2::zeros((0, 3)),
        };
        assert_eq!(
            local_train(&global, &shard, 1, 4, AdamConfig::default(), &RngStream::root(1)),
            Err(Error::EmptyShard { ap_index: 5 })
        );
    }

    #[test]
    fn one_sample_one_epoch_is_one_adam_step() {
        let global = init_params(4, 5, 3, &mut RngStream::root(2).rng());
        let shard = toy_shard(0, 4, 1);
        let u = local_train(&global, &shard, 1, 32, AdamConfig::default(), &RngStream::root(5)).unwrap();

        let x = shard.features.row(0).to_vec();
        let y = shard.labels.row(0).to_vec();
        let g = backward(&global, &x, &y).unwrap();
        let mut manual = global.clone();
        let mut st = AdamState::new(AdamConfig::default(), &manual);
        adam_step(&mut manual, &g, &mut st).unwrap();
        for (a, b) in u.params.tensors().iter().zip(manual.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_shards_identical_updates() {
        let global = init_params(4, 5, 3, &mut RngStream::root(2).rng());
        let s = RngStream::root(77);
        let a = local_train(&global, &toy_shard(0, 4, 20), 2, 8, AdamConfig::default(), &s).unwrap();
        let b = local_train(&global, &toy_shard(0, 4, 20), 2, 8, AdamConfig::default(), &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clusters_and_ponderation() {
        let beta = LargeScaleMatrix::new(array![[1.0, 5.0], [3.0, 5.0], [2.0, 1.0], [9.0, 0.5]]).unwrap();
        let clusters = reliability_clusters(&beta, 2).unwrap();
        assert_eq!(clusters, vec![vec![3, 1], vec![0, 1]]);
        let scores = array![[0.1, 0.9], [0.2, 0.1], [0.3, 0.3], [0.8, 0.4]];
        let fused = ponderate_scores(scores.view(), &beta, 2).unwrap();
        assert!((fused.0[0] - 0.5).abs() < 1e-15);
        assert!((fused.0[1] - 0.5).abs() < 1e-15);

        let single = ponderate_scores(scores.view(), &beta, 1).unwrap();
        assert_eq!(single.0, vec![0.8, 0.9]);
        let full = ponderate_scores(scores.view(), &beta, 4).unwrap();
        assert!((full.0[0] - 1.4 / 4.0).abs() < 1e-15);
        assert!(ponderate_scores(scores.view(), &beta, 5).is_err());
    }

    #[test]
    fn thresholding() {
        let s = DetectionScores(vec![0.7, 0.2, 0.5, 0.0]);
        assert_eq!(threshold_detect(&s, 0.5).active, vec![true, false, true, false]);
        assert_eq!(threshold_detect(&s, 0.0).count_active(), 4);
        assert_eq!(threshold_detect(&s, 1.01).count_active(), 0);
    }

    #[test]
    fn wire_round_trip_and_rejects_garbage() {
        let update = LocalUpdate {
            params: init_params(4, 3, 2, &mut RngStream::root(3).rng()),
            weight: 12.5,
            ap_index: 7,
        };
        let bytes = wire::encode(&update, 42);
        let expected_len: usize = 4 + 4 + 8 * 6 + 8 * update.params.num_params();
        assert_eq!(bytes.len(), expected_len);
        let (round, back) = wire::decode(&bytes).unwrap();
        assert_eq!(round, 42);
        assert_eq!(back, update);
        assert!(wire::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(wire::decode(&bad).is_err());
    }
}

//! End-to-end experiment pipeline.

use std::time::Instant;

use fedact_core::baselines::{amp, colocate, fista, ista, MmvProblem, SparseEstimate};
use fedact_core::channel::{flatten_features, simulate_event};
use fedact_core::eval::{mac_count_iterative, mac_count_slp, roc_curve, MacConvention, RocCurve, ScoredTrials};
use fedact_core::federation::{ponderate_with_clusters, reliability_clusters, run_training, wire, LocalUpdate, TrainingHistory};
use fedact_core::rng::streams;
use fedact_core::scenario::Scenario;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Architecture, Detector, ExperimentConfig};

pub fn version_string() -> String {
    format!("fedact-v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Error)]
#[error("{stage} failed: {source}")]
pub struct RunError {
    pub stage: &'static str,
    #[source]
    pub source: fedact_core::Error,
}

fn at(stage: &'static str) -> impl Fn(fedact_core::Error) -> RunError {
    move |source| RunError { stage, source }
}

#[derive(Clone, Debug)]
pub struct DetectorResult {
    pub detector: Detector,
    pub roc: RocCurve,
    pub macs_complex1: u64,
    pub macs_real4: u64,
    /// Iteration knob behind the MAC count (1 for a single forward pass).
    pub iters: u64,
    pub runtime_s: f64,
}

#[derive(Clone, Debug)]
pub struct ResultBundle {
    pub architecture: Architecture,
    pub detectors: Vec<DetectorResult>,
    pub history: Option<TrainingHistory>,
    /// Final global model in the update wire format.
    pub checkpoint: Option<Vec<u8>>,
    pub config_echo: ExperimentConfig,
    pub seed: u64,
    pub version: String,
}

impl ResultBundle {
    pub fn get(&self, detector: Detector) -> Option<&DetectorResult> {
        self.detectors.iter().find(|d| d.detector == detector)
    }
}

/// Per-event scores of every requested detector, plus solver iteration counts.
struct EventScores {
    truth: fedact_core::scenario::ActivityVector,
    scores: Vec<Vec<f64>>,
    iterations: Vec<usize>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultBundle, RunError> {
    let detectors = config.detector_set();
    let base = Scenario::generate(&config.scenario).map_err(at("scenario generation"))?;
    let scenario = match config.architecture {
        Architecture::Cellfree => base,
        Architecture::Colocated => colocate(&base).map_err(at("colocated transform"))?,
    };
    let cfg = &scenario.config;
    let root = scenario.root_stream();

    let mut timings = vec![0.0; detectors.len()];
    let mut trained = None;
    let mut history = None;
    if detectors.contains(&Detector::Fl) {
        let started = Instant::now();
        let (detector, hist) =
            run_training(&scenario, &config.federation, &root.named(streams::TRAINING)).map_err(at("federated training"))?;
        timings[detectors.iter().position(|d| *d == Detector::Fl).unwrap()] += started.elapsed().as_secs_f64();
        trained = Some(detector);
        history = Some(hist);
    }
    let clusters = reliability_clusters(&scenario.beta, cfg.cluster_size).map_err(at("cluster selection"))?;

    let eval_root = root.named(streams::EVAL);
    let per_event = (0..config.eval_trials)
        .into_par_iter()
        .map(|i| {
            let event = simulate_event(cfg, &scenario.beta, &scenario.pilots, &eval_root.child("event", i as u64))
                .map_err(at("event synthesis"))?;
            let mut scores = Vec::with_capacity(detectors.len());
            let mut iterations = Vec::with_capacity(detectors.len());
            let mut elapsed = Vec::with_capacity(detectors.len());
            let problem = MmvProblem::from_received(&scenario.pilots, &event.received, cfg.tx_power)
                .map_err(at("MMV problem assembly"))?;
            for det in &detectors {
                let started = Instant::now();
                let (s, it) = match det {
                    Detector::Fl => {
                        let model = trained.as_ref().expect("trained when requested");
                        let features: Vec<Vec<f64>> = event.received.y.iter().map(flatten_features).collect();
                        let per_ap = model.per_ap_scores(&features).map_err(at("FL inference"))?;
                        let fused = ponderate_with_clusters(per_ap.view(), &clusters).map_err(at("ponderation"))?;
                        (fused.0, 1)
                    }
                    Detector::Ista => stat(ista(&problem, &config.solver, cfg.noise_var).map_err(at("ISTA solve"))?),
                    Detector::Fista => stat(fista(&problem, &config.solver, cfg.noise_var).map_err(at("FISTA solve"))?),
                    Detector::Amp => stat(amp(&problem, &config.solver).map_err(at("AMP solve"))?),
                };
                elapsed.push(started.elapsed().as_secs_f64());
                scores.push(s);
                iterations.push(it);
            }
            Ok((
                EventScores {
                    truth: event.activity,
                    scores,
                    iterations,
                },
                elapsed,
            ))
        })
        .collect::<Result<Vec<_>, RunError>>()?;

    let mut results = Vec::with_capacity(detectors.len());
    for (j, &det) in detectors.iter().enumerate() {
        let mut trials = ScoredTrials::new(det.name());
        let mut iter_sum = 0usize;
        let mut runtime = timings[j];
        for (ev, elapsed) in &per_event {
            trials.push_trial(&ev.scores[j], &ev.truth);
            iter_sum += ev.iterations[j];
            runtime += elapsed[j];
        }
        let roc = roc_curve(&trials, config.roc_points).map_err(at("ROC evaluation"))?;
        let (macs_complex1, macs_real4, iters) = match det {
            Detector::Fl => {
                let m = mac_count_slp(cfg).macs;
                (m, m, 1)
            }
            Detector::Amp => {
                let it = config.solver.amp_iters as u64;
                (
                    mac_count_iterative(cfg, it, MacConvention::Complex1).macs,
                    mac_count_iterative(cfg, it, MacConvention::Real4).macs,
                    it,
                )
            }
            Detector::Ista | Detector::Fista => {
                let it = (iter_sum as u64).div_ceil(config.eval_trials as u64);
                (
                    mac_count_iterative(cfg, it, MacConvention::Complex1).macs,
                    mac_count_iterative(cfg, it, MacConvention::Real4).macs,
                    it,
                )
            }
        };
        results.push(DetectorResult {
            detector: det,
            roc,
            macs_complex1,
            macs_real4,
            iters,
            runtime_s: runtime,
        });
    }

    let checkpoint = trained.as_ref().map(|t| {
        wire::encode(
            &LocalUpdate {
                params: t.params.clone(),
                weight: 1.0,
                ap_index: 0,
            },
            config.federation.rounds as u64,
        )
    });

    Ok(ResultBundle {
        architecture: config.architecture,
        detectors: results,
        history,
        checkpoint,
        config_echo: config.clone(),
        seed: config.scenario.master_seed,
        version: version_string(),
    })
}

fn stat(est: SparseEstimate) -> (Vec<f64>, usize) {
    (est.activity_stat, est.iterations_used)
}

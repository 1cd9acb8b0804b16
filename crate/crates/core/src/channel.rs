//! Small-scale fading, received-signal synthesis and labeled datasets.

use ndarray::{Array2, Array3, ArrayView1, Axis};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{complex_normal, streams, RngStream};
use crate::scenario::{sample_activity, ActivityVector, LargeScaleMatrix, PilotBook, ScenarioConfig};

/// Fading coefficients indexed `[ap, device, antenna]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTensor {
    pub h: Array3<Complex64>,
    pub g: Array3<Complex64>,
}

impl ChannelTensor {
    /// Build from given small-scale coefficients; g = √β · h.
    pub fn from_small_scale(beta: &LargeScaleMatrix, h: Array3<Complex64>) -> Result<Self> {
        let (m, k, _) = h.dim();
        if beta.beta.dim() != (m, k) {
            return Err(Error::DimensionMismatch {
                what: "channel tensor vs beta",
                expected: beta.num_aps() * beta.num_devices(),
                got: m * k,
            });
        }
        let mut g = h.clone();
        for ((ap, dev, _), z) in g.indexed_iter_mut() {
            *z *= beta.beta[[ap, dev]].sqrt();
        }
        Ok(Self { h, g })
    }

    pub fn num_aps(&self) -> usize {
        self.h.dim().0
    }

    pub fn num_antennas(&self) -> usize {
        self.h.dim().2
    }
}

pub fn draw_channels<R: Rng + ?Sized>(
    beta: &LargeScaleMatrix,
    antennas_per_ap: usize,
    rng: &mut R,
) -> ChannelTensor {
    let (m, k) = beta.beta.dim();
    let h = Array3::from_shape_simple_fn((m, k, antennas_per_ap), || complex_normal(rng));
    ChannelTensor::from_small_scale(beta, h).expect("shapes agree by construction")
}

/// Per-AP observations Y_m, each L×N.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedSignal {
    pub y: Vec<Array2<Complex64>>,
}

/// Evaluate y_mn = Σ_k a_k √ρ g_mk^(n) s_k + w_mn at every AP and antenna.
///
/// Noise is always drawn (and scaled by σ) so the stream is consumed the
/// same way whatever the noise level.
pub fn synthesize_received<R: Rng + ?Sized>(
    activity: &ActivityVector,
    channels: &ChannelTensor,
    pilots: &PilotBook,
    tx_power: f64,
    noise_var: f64,
    rng: &mut R,
) -> Result<ReceivedSignal> {
    let (m, k, n) = channels.g.dim();
    if activity.len() != k {
        return Err(Error::DimensionMismatch {
            what: "activity vs channels",
            expected: k,
            got: activity.len(),
        });
    }
    if pilots.num_devices() != k {
        return Err(Error::DimensionMismatch {
            what: "pilot book vs channels",
            expected: k,
            got: pilots.num_devices(),
        });
    }
    let l = pilots.pilot_len();
    let amp = tx_power.sqrt();
    let sigma = noise_var.sqrt();
    let support = activity.support();
    let mut y = Vec::with_capacity(m);
    for ap in 0..m {
        let mut ym = Array2::<Complex64>::zeros((l, n));
        for &dev in &support {
            let s = pilots.pilots.column(dev);
            for ant in 0..n {
                let coeff = channels.g[[ap, dev, ant]] * amp;
                ym.column_mut(ant).zip_mut_with(&s, |acc, &sl| *acc += coeff * sl);
            }
        }
        for ant in 0..n {
            for row in 0..l {
                ym[[row, ant]] += complex_normal(rng) * sigma;
            }
        }
        y.push(ym);
    }
    Ok(ReceivedSignal { y })
}

/// Real parts then imaginary parts of the column-major flattening of Y_m.
pub fn flatten_features(ym: &Array2<Complex64>) -> Vec<f64> {
    let (l, n) = ym.dim();
    let mut out = vec![0.0; 2 * l * n];
    let (re, im) = out.split_at_mut(l * n);
    for ant in 0..n {
        for row in 0..l {
            let z = ym[[row, ant]];
            re[ant * l + row] = z.re;
            im[ant * l + row] = z.im;
        }
    }
    out
}

pub fn unflatten_features(features: &[f64], pilot_len: usize, antennas: usize) -> Result<Array2<Complex64>> {
    let half = pilot_len * antennas;
    if features.len() != 2 * half {
        return Err(Error::DimensionMismatch {
            what: "feature vector",
            expected: 2 * half,
            got: features.len(),
        });
    }
    Ok(Array2::from_shape_fn((pilot_len, antennas), |(row, ant)| {
        let idx = ant * pilot_len + row;
        Complex64::new(features[idx], features[half + idx])
    }))
}

/// One physical transmission event as seen by every AP.
#[derive(Clone, Debug)]
pub struct DetectionEvent {
    pub activity: ActivityVector,
    pub channels: ChannelTensor,
    pub received: ReceivedSignal,
}

/// Draw one event: activity, fresh fading and noise, each from its own
/// child of `stream`.
pub fn simulate_event(
    config: &ScenarioConfig,
    beta: &LargeScaleMatrix,
    pilots: &PilotBook,
    stream: &RngStream,
) -> Result<DetectionEvent> {
    let activity = sample_activity(config, &mut stream.named(streams::ACTIVITY).rng());
    let channels = draw_channels(beta, config.antennas_per_ap, &mut stream.named(streams::CHANNELS).rng());
    let received = synthesize_received(
        &activity,
        &channels,
        pilots,
        config.tx_power,
        config.noise_var,
        &mut stream.named(streams::NOISE).rng(),
    )?;
    Ok(DetectionEvent {
        activity,
        channels,
        received,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub features_per_ap: Vec<Vec<f64>>,
    pub label: ActivityVector,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    /// Stream the samples were drawn from; sample i uses `provenance.child("sample", i)`.
    pub provenance: RngStream,
}

/// A single AP's slice of a dataset as dense matrices (rows are samples).
#[derive(Clone, Debug, PartialEq)]
pub struct Shard {
    pub ap_index: usize,
    pub features: Array2<f64>,
    pub labels: Array2<f64>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

pub fn build_dataset(
    config: &ScenarioConfig,
    beta: &LargeScaleMatrix,
    pilots: &PilotBook,
    n_samples: usize,
    stream: &RngStream,
) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples", "must be at least 1"));
    }
    let samples = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let event = simulate_event(config, beta, pilots, &stream.child("sample", i as u64))?;
            Ok(LabeledSample {
                features_per_ap: event.received.y.iter().map(flatten_features).collect(),
                label: event.activity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        provenance: *stream,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn shard(&self, ap_index: usize) -> Shard {
        let n = self.samples.len();
        let f = self.samples.first().map_or(0, |s| s.features_per_ap[ap_index].len());
        let k = self.samples.first().map_or(0, |s| s.label.len());
        let mut features = Array2::zeros((n, f));
        let mut labels = Array2::zeros((n, k));
        for (i, sample) in self.samples.iter().enumerate() {
            features
                .row_mut(i)
                .assign(&ArrayView1::from(&sample.features_per_ap[ap_index]));
            labels.row_mut(i).assign(&ArrayView1::from(&sample.label.as_f64()));
        }
        Shard {
            ap_index,
            features,
            labels,
        }
    }
}

/// Per-feature standardization fitted on one AP's local training shard.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(features: &Array2<f64>) -> Self {
        let n = features.nrows().max(1) as f64;
        let mean = features.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default();
        let std = features
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(col, mu)| {
                let var = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn transform_in_place(&self, x: &mut [f64]) {
        for ((xi, mu), sd) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *xi = (*xi - mu) / sd;
        }
    }

    pub fn transform_rows(&self, features: &mut Array2<f64>) {
        for mut row in features.rows_mut() {
            self.transform_in_place(row.as_slice_mut().expect("standard layout"));
        }
    }
}

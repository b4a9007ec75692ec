//! Windows of aligned packet triples become 75×30×6 labelled tensors.
//!
//! Row `r = packet * 3 + antenna` within a 25-packet window, column is the
//! subcarrier, and channel `2 * ap` / `2 * ap + 1` hold the amplitude and the
//! sanitized phase seen by access point `ap`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csi_record::{self, CsiSession, RecordError, RX_ANTENNAS, SUBCARRIERS};

pub const WINDOW_PACKETS: usize = 25;
pub const ROWS: usize = WINDOW_PACKETS * RX_ANTENNAS;
pub const COLS: usize = SUBCARRIERS;
pub const CHANNELS: usize = 6;
pub const TENSOR_LEN: usize = ROWS * COLS * CHANNELS;
pub const AMPLITUDE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TensorizeError {
    #[error("non-finite phase at subcarrier {0}")]
    NonFinitePhase(usize),
    #[error("expected exactly 5 session ids, got {0}")]
    Cardinality(usize),
    #[error("fold {0} outside [0, 5)")]
    Fold(usize),
    #[error("session ids must be distinct")]
    DuplicateIds,
    #[error("window must be >= 1")]
    EmptyWindow,
    #[error("window of {0} packets does not give {ROWS} tensor rows")]
    WindowShape(usize),
    #[error(transparent)]
    Record(#[from] RecordError),
}

fn wrap(x: f64) -> f64 {
    let w = (x + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π.
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Unwraps phases across subcarriers, removes the least-squares line over
/// the subcarrier index, and re-wraps to `[-π, π)`.
pub fn sanitize_phase(raw: &[f64; SUBCARRIERS]) -> Result<[f64; SUBCARRIERS], TensorizeError> {
    if let Some(i) = raw.iter().position(|p| !p.is_finite()) {
        return Err(TensorizeError::NonFinitePhase(i));
    }
    let mut unwrapped = *raw;
    for i in 1..SUBCARRIERS {
        let d = raw[i] - raw[i - 1];
        unwrapped[i] = unwrapped[i - 1] + wrap(d);
    }
    let n = SUBCARRIERS as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = unwrapped.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in unwrapped.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let mut out = [0.0; SUBCARRIERS];
    for (i, (o, y)) in out.iter_mut().zip(&unwrapped).enumerate() {
        *o = wrap(y - (mean_y + slope * (i as f64 - mean_x)));
    }
    Ok(out)
}

/// A `75 × 30 × 6` tensor stored row-major (`[row][col][channel]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTensor {
    values: Vec<f32>,
}

impl SampleTensor {
    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; TENSOR_LEN],
        }
    }

    pub fn from_vec(values: Vec<f32>) -> Option<Self> {
        (values.len() == TENSOR_LEN).then_some(Self { values })
    }

    #[inline]
    pub fn index(row: usize, col: usize, channel: usize) -> usize {
        (row * COLS + col) * CHANNELS + channel
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.values[Self::index(row, col, channel)]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, v: f32) {
        self.values[Self::index(row, col, channel)] = v;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    /// Channel-major copy (`[channel][row][col]`), the layout the network consumes.
    pub fn to_channel_major(&self) -> Vec<f32> {
        let mut out = vec![0.0; TENSOR_LEN];
        for r in 0..ROWS {
            for c in 0..COLS {
                for ch in 0..CHANNELS {
                    out[(ch * ROWS + r) * COLS + c] = self.values[Self::index(r, c, ch)];
                }
            }
        }
        out
    }

    pub fn is_amplitude_channel(channel: usize) -> bool {
        channel.is_multiple_of(2)
    }

    /// Finite everywhere, phases in `[-π, π]`.
    pub fn check(&self) -> bool {
        self.values.iter().enumerate().all(|(i, v)| {
            v.is_finite() && (Self::is_amplitude_channel(i % CHANNELS) || v.abs() <= std::f32::consts::PI)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub tensor: SampleTensor,
    /// `(x, y)` in meters.
    pub label: [f32; 2],
    pub t_center: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BuildOutput {
    /// Samples with amplitude channels in raw dB, not yet normalized.
    pub samples: Vec<LabeledSample>,
    pub aligned_triples: usize,
    /// Windows dropped because no ground truth covered their center.
    pub skipped_windows: usize,
}

/// Cuts the aligned packet stream into non-overlapping windows of `window`
/// triples and builds one labelled tensor per window. Only
/// [`WINDOW_PACKETS`]-packet windows produce the 75-row network input.
pub fn build_samples(session: &CsiSession, window: usize, tolerance: f64) -> Result<BuildOutput, TensorizeError> {
    if window == 0 {
        return Err(TensorizeError::EmptyWindow);
    }
    if window != WINDOW_PACKETS {
        return Err(TensorizeError::WindowShape(window));
    }
    let triples = csi_record::align_streams(session, tolerance)?;
    let mut out = BuildOutput {
        aligned_triples: triples.len(),
        ..BuildOutput::default()
    };
    let rows = window * RX_ANTENNAS;
    for chunk in triples.chunks_exact(window) {
        let t_center = 0.5 * (chunk[0].t() + chunk[window - 1].t());
        let Some((x, y)) = csi_record::interpolate_track(&session.track, t_center) else {
            out.skipped_windows += 1;
            continue;
        };
        let mut values = vec![0.0f32; rows * COLS * CHANNELS];
        for (k, triple) in chunk.iter().enumerate() {
            for (ap, packet) in triple.packets.iter().enumerate() {
                for antenna in 0..RX_ANTENNAS {
                    let row = k * RX_ANTENNAS + antenna;
                    let mut phases = [0.0f64; SUBCARRIERS];
                    for (sc, g) in packet.gains[antenna].iter().enumerate() {
                        let amp_db = 20.0 * (g.norm() as f64 + AMPLITUDE_EPS).log10();
                        values[(row * COLS + sc) * CHANNELS + 2 * ap] = amp_db as f32;
                        phases[sc] = (g.im as f64).atan2(g.re as f64);
                    }
                    let clean = sanitize_phase(&phases)?;
                    for (sc, p) in clean.iter().enumerate() {
                        values[(row * COLS + sc) * CHANNELS + 2 * ap + 1] = *p as f32;
                    }
                }
            }
        }
        out.samples.push(LabeledSample {
            tensor: SampleTensor { values },
            label: [x as f32, y as f32],
            t_center,
        });
    }
    Ok(out)
}

/// Dataset-level min-max scaling of the dB amplitude channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeScaler {
    pub min_db: f32,
    pub max_db: f32,
}

impl AmplitudeScaler {
    /// Fits on the amplitude channels of `samples`. `None` for an empty set.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a LabeledSample>) -> Option<Self> {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for s in samples {
            for (i, v) in s.tensor.values.iter().enumerate() {
                if SampleTensor::is_amplitude_channel(i % CHANNELS) {
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
            }
        }
        (lo <= hi).then_some(Self { min_db: lo, max_db: hi })
    }

    /// Maps dB amplitudes to `[0, 1]`, clamping values outside the fitted range.
    pub fn apply(&self, sample: &mut LabeledSample) {
        let span = (self.max_db - self.min_db).max(f32::MIN_POSITIVE);
        for (i, v) in sample.tensor.values.iter_mut().enumerate() {
            if SampleTensor::is_amplitude_channel(i % CHANNELS) {
                *v = ((*v - self.min_db) / span).clamp(0.0, 1.0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: String,
    pub test: String,
}

/// Fold rotation: test = `ids[fold]`, val = `ids[fold + 1 mod 5]`, train = the
/// remaining three in their original order.
pub fn split_sessions(ids: &[String], fold: usize) -> Result<DatasetSplit, TensorizeError> {
    if ids.len() != 5 {
        return Err(TensorizeError::Cardinality(ids.len()));
    }
    if fold >= 5 {
        return Err(TensorizeError::Fold(fold));
    }
    for (i, a) in ids.iter().enumerate() {
        if ids[i + 1..].contains(a) {
            return Err(TensorizeError::DuplicateIds);
        }
    }
    let val = (fold + 1) % 5;
    Ok(DatasetSplit {
        train: (0..5)
            .filter(|&i| i != fold && i != val)
            .map(|i| ids[i].clone())
            .collect(),
        val: ids[val].clone(),
        test: ids[fold].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi_record::{ComplexGain, CsiPacket, GroundTruthFix};

    fn ids() -> Vec<String> {
        (0..5).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn zero_phases_stay_zero() {
        assert_eq!(sanitize_phase(&[0.0; 30]).unwrap(), [0.0; 30]);
    }

    #[test]
    fn linear_phases_vanish() {
        let mut p = [0.0; 30];
        for (i, v) in p.iter_mut().enumerate() {
            *v = wrap(0.5 + 0.2 * i as f64);
        }
        let out = sanitize_phase(&p).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-9), "{out:?}");
    }

    #[test]
    fn non_finite_phase_rejected() {
        let mut p = [0.0; 30];
        p[4] = f64::NAN;
        assert_eq!(sanitize_phase(&p), Err(TensorizeError::NonFinitePhase(4)));
    }

    #[test]
    fn fold_rotation() {
        let s0 = split_sessions(&ids(), 0).unwrap();
        assert_eq!(s0.test, "s0");
        assert_eq!(s0.val, "s1");
        assert_eq!(s0.train, vec!["s2", "s3", "s4"]);
        let s4 = split_sessions(&ids(), 4).unwrap();
        assert_eq!(s4.test, "s4");
        assert_eq!(s4.val, "s0");
        assert_eq!(s4.train, vec!["s1", "s2", "s3"]);
        assert_eq!(split_sessions(&ids()[..4], 0), Err(TensorizeError::Cardinality(4)));
    }

    #[test]
    fn every_session_is_tested_once() {
        let mut tested: Vec<String> = (0..5).map(|f| split_sessions(&ids(), f).unwrap().test).collect();
        tested.sort();
        assert_eq!(tested, ids());
    }

    fn stationary_session(packets: usize, at: (f32, f32)) -> CsiSession {
        let mut s = CsiSession::empty("st", 3, 500.0);
        for ap in 0..3u8 {
            for k in 0..packets {
                let mut p = CsiPacket::new(k as f64 / 500.0, ap);
                for (i, g) in p.gains.iter_mut().flatten().enumerate() {
                    *g = ComplexGain::from_polar(0.01 * (1.0 + i as f32 / 90.0), 0.1 * i as f32);
                }
                s.packets[ap as usize].push(p);
            }
        }
        s.track = (0..=(packets as f64 / 500.0 * 120.0).ceil() as usize)
            .map(|i| GroundTruthFix {
                t: i as f64 / 120.0,
                x: at.0,
                y: at.1,
            })
            .collect();
        s
    }

    #[test]
    fn single_window_stationary_label() {
        let out = build_samples(&stationary_session(25, (2.0, 1.0)), 25, 2e-3).unwrap();
        assert_eq!(out.samples.len(), 1);
        assert_eq!(out.samples[0].label, [2.0, 1.0]);
        assert!(out.samples[0].tensor.check());
    }

    #[test]
    fn partial_window_yields_nothing() {
        let out = build_samples(&stationary_session(24, (2.0, 1.0)), 25, 2e-3).unwrap();
        assert!(out.samples.is_empty());
        assert_eq!(out.aligned_triples, 24);
    }

    #[test]
    fn windows_without_ground_truth_are_skipped() {
        let mut s = stationary_session(100, (1.0, 1.0));
        s.track.truncate(3);
        let out = build_samples(&s, 25, 2e-3).unwrap();
        assert_eq!(out.samples.len(), 0);
        assert_eq!(out.skipped_windows, 4);
    }

    #[test]
    fn scaler_maps_training_range_to_unit_interval() {
        let out = build_samples(&stationary_session(50, (1.0, 1.0)), 25, 2e-3).unwrap();
        let scaler = AmplitudeScaler::fit(&out.samples).unwrap();
        let mut s = out.samples[0].clone();
        scaler.apply(&mut s);
        let amps: Vec<f32> = s.tensor.as_slice().iter().step_by(2).cloned().collect();
        assert!(amps.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(amps.contains(&0.0) && amps.contains(&1.0));
    }
}

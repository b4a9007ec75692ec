//! Synthetic multipath CSI for a tag moving inside a rectangular room.
//!
//! Each access point carries a three-element linear array with half-wavelength
//! spacing. The channel to every antenna is the sum of a direct path and the
//! first-order wall images of the transmitter:
//!
//! `H_i = Σ_p a_p · exp(-j 2π f_i τ_p)`, with `a_p = ρ^n λ_i / (4π d_p)` and
//! `τ_p = d_p / c`, where `n` is the number of wall bounces and `ρ` the wall
//! reflectivity. Hardware distortion is a random common phase per packet and
//! receiver noise is complex AWGN.

use std::f64::consts::PI;

use num_complex::{Complex, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csi_record::{ComplexGain, CsiPacket, CsiSession, GroundTruthFix, RX_ANTENNAS, SUBCARRIERS};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const DEFAULT_CARRIER_HZ: f64 = 5.32e9;
pub const DEFAULT_SUBCARRIER_SPACING_HZ: f64 = 312.5e3;
pub const DEFAULT_TRACK_RATE_HZ: f64 = 120.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Bounds {
    pub fn room(width: f64, depth: f64) -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            x1: width,
            y1: depth,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    fn validate(&self) -> Result<(), SimError> {
        let ok = [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite())
            && self.x1 > self.x0
            && self.y1 > self.y0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidSpec(format!("bounds {self:?} have no positive area")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub width: f64,
    pub depth: f64,
    /// Access point positions `(x, y, z)` in meters.
    pub ap_positions: [[f64; 3]; 3],
    /// Direction of each AP's antenna array in the horizontal plane, radians from +x.
    #[serde(default)]
    pub array_orientation_rad: [f64; 3],
    pub wall_reflectivity: f64,
    pub obstacle_extra_loss_db: f64,
}

impl RoomSpec {
    pub fn bounds(&self) -> Bounds {
        Bounds::room(self.width, self.depth)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.width.is_finite() && self.depth.is_finite() && self.width > 0.0 && self.depth > 0.0) {
            return Err(SimError::InvalidSpec(format!(
                "room {} x {} must have positive finite size",
                self.width, self.depth
            )));
        }
        for (i, p) in self.ap_positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) || !self.bounds().contains(p[0], p[1]) {
                return Err(SimError::InvalidSpec(format!("AP {i} at {p:?} is outside the room")));
            }
        }
        if !(0.0..=1.0).contains(&self.wall_reflectivity) {
            return Err(SimError::InvalidSpec(format!(
                "wall_reflectivity {} outside [0, 1]",
                self.wall_reflectivity
            )));
        }
        if !(self.obstacle_extra_loss_db.is_finite() && self.obstacle_extra_loss_db >= 0.0) {
            return Err(SimError::InvalidSpec(format!(
                "obstacle_extra_loss_db {} must be >= 0",
                self.obstacle_extra_loss_db
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrajectoryKind {
    Stationary {
        at: [f64; 2],
    },
    Linear {
        from: [f64; 2],
        to: [f64; 2],
    },
    /// Smooth curve through random waypoints drawn inside the bounds.
    WaypointCurve {
        #[serde(default = "default_waypoint_interval")]
        waypoint_interval_s: f64,
        #[serde(default = "default_margin")]
        margin_m: f64,
    },
}

fn default_waypoint_interval() -> f64 {
    1.5
}

fn default_margin() -> f64 {
    0.2
}

fn default_track_rate() -> f64 {
    DEFAULT_TRACK_RATE_HZ
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    #[serde(flatten)]
    pub kind: TrajectoryKind,
    pub duration: f64,
    #[serde(default = "default_track_rate")]
    pub rate_hz: f64,
    pub bounds: Bounds,
    #[serde(default)]
    pub seed: u64,
}

/// Fixes at exactly `rate_hz` spacing, `round(duration * rate_hz)` of them.
pub fn gen_trajectory(spec: &TrajectorySpec) -> Result<Vec<GroundTruthFix>, SimError> {
    spec.bounds.validate()?;
    if !(spec.duration.is_finite() && spec.duration > 0.0) {
        return Err(SimError::InvalidSpec(format!("duration {} must be > 0", spec.duration)));
    }
    if !(spec.rate_hz.is_finite() && spec.rate_hz > 0.0) {
        return Err(SimError::InvalidSpec(format!("rate_hz {} must be > 0", spec.rate_hz)));
    }
    let n = (spec.duration * spec.rate_hz).round().max(1.0) as usize;
    let b = spec.bounds;
    let time = |i: usize| i as f64 / spec.rate_hz;
    let fix = |t: f64, x: f64, y: f64| GroundTruthFix {
        t,
        x: x.clamp(b.x0, b.x1) as f32,
        y: y.clamp(b.y0, b.y1) as f32,
    };
    let check_inside = |p: [f64; 2], what: &str| {
        if b.contains(p[0], p[1]) {
            Ok(())
        } else {
            Err(SimError::InvalidSpec(format!("{what} {p:?} outside bounds")))
        }
    };
    match &spec.kind {
        TrajectoryKind::Stationary { at } => {
            check_inside(*at, "stationary point")?;
            Ok((0..n).map(|i| fix(time(i), at[0], at[1])).collect())
        }
        TrajectoryKind::Linear { from, to } => {
            check_inside(*from, "start")?;
            check_inside(*to, "end")?;
            Ok((0..n)
                .map(|i| {
                    let w = time(i) / spec.duration;
                    fix(
                        time(i),
                        from[0] + w * (to[0] - from[0]),
                        from[1] + w * (to[1] - from[1]),
                    )
                })
                .collect())
        }
        TrajectoryKind::WaypointCurve {
            waypoint_interval_s,
            margin_m,
        } => {
            if !(waypoint_interval_s.is_finite() && *waypoint_interval_s > 0.0) {
                return Err(SimError::InvalidSpec("waypoint_interval_s must be > 0".into()));
            }
            let (mx, my) = (
                margin_m.min((b.x1 - b.x0) / 2.0 - 1e-9).max(0.0),
                margin_m.min((b.y1 - b.y0) / 2.0 - 1e-9).max(0.0),
            );
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let segments = (spec.duration / waypoint_interval_s).ceil() as usize + 1;
            let waypoints: Vec<[f64; 2]> = (0..segments + 2)
                .map(|_| {
                    [
                        rng.gen_range(b.x0 + mx..=b.x1 - mx),
                        rng.gen_range(b.y0 + my..=b.y1 - my),
                    ]
                })
                .collect();
            Ok((0..n)
                .map(|i| {
                    let t = time(i);
                    let s = t / waypoint_interval_s;
                    let k = s.floor() as usize;
                    let u = s - k as f64;
                    let p = catmull_rom(waypoints[k], waypoints[k + 1], waypoints[k + 2], waypoints[k + 3], u);
                    fix(t, p[0], p[1])
                })
                .collect())
        }
    }
}

fn catmull_rom(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], u: f64) -> [f64; 2] {
    let (u2, u3) = (u * u, u * u * u);
    let mut out = [0.0; 2];
    for d in 0..2 {
        out[d] = 0.5
            * (2.0 * p1[d]
                + (-p0[d] + p2[d]) * u
                + (2.0 * p0[d] - 5.0 * p1[d] + 4.0 * p2[d] - p3[d]) * u2
                + (-p0[d] + 3.0 * p1[d] - 3.0 * p2[d] + p3[d]) * u3);
    }
    out
}

/// The 30-group tone layout of 20 MHz CSI reports: -28..=28 thinned to 30.
fn default_subcarrier_indices() -> [i32; SUBCARRIERS] {
    [
        -28, -26, -24, -22, -20, -18, -16, -14, -12, -10, -8, -6, -4, -2, -1, 1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21,
        23, 25, 27, 28,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub subcarrier_indices: [i32; SUBCARRIERS],
    pub packet_rate_hz: f64,
    /// 0 disables wall images; 1 adds the four first-order images.
    pub max_reflections: u32,
    pub direct_path: bool,
    pub per_packet_phase_offset: bool,
    /// `None` disables receiver noise.
    pub awgn_snr_db: Option<f64>,
    pub tag_height_m: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            carrier_hz: DEFAULT_CARRIER_HZ,
            subcarrier_spacing_hz: DEFAULT_SUBCARRIER_SPACING_HZ,
            subcarrier_indices: default_subcarrier_indices(),
            packet_rate_hz: 500.0,
            max_reflections: 1,
            direct_path: true,
            per_packet_phase_offset: true,
            awgn_snr_db: Some(25.0),
            tag_height_m: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn subcarrier_freqs(&self) -> [f64; SUBCARRIERS] {
        self.subcarrier_indices
            .map(|k| self.carrier_hz + k as f64 * self.subcarrier_spacing_hz)
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return Err(SimError::InvalidSpec("carrier_hz must be > 0".into()));
        }
        if !(self.packet_rate_hz.is_finite() && self.packet_rate_hz > 0.0) {
            return Err(SimError::InvalidSpec("packet_rate_hz must be > 0".into()));
        }
        if !self.subcarrier_spacing_hz.is_finite() {
            return Err(SimError::InvalidSpec("subcarrier_spacing_hz must be finite".into()));
        }
        if self.max_reflections > 1 {
            return Err(SimError::InvalidSpec(format!(
                "max_reflections {} unsupported; only first-order images are modeled",
                self.max_reflections
            )));
        }
        if let Some(snr) = self.awgn_snr_db {
            if !snr.is_finite() {
                return Err(SimError::InvalidSpec("awgn_snr_db must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Position of antenna `a` of access point `ap`.
pub fn antenna_position(room: &RoomSpec, cfg: &SimConfig, ap: usize, a: usize) -> [f64; 3] {
    let spacing = cfg.wavelength() / 2.0;
    let offset = (a as f64 - (RX_ANTENNAS as f64 - 1.0) / 2.0) * spacing;
    let angle = room.array_orientation_rad[ap];
    let p = room.ap_positions[ap];
    [p[0] + offset * angle.cos(), p[1] + offset * angle.sin(), p[2]]
}

#[derive(Debug, Clone, Copy)]
struct Path {
    /// Distance-independent amplitude factor (reflectivity, obstacle loss).
    gain: f64,
    distance: f64,
}

fn paths_to(room: &RoomSpec, cfg: &SimConfig, tx: [f64; 3], rx: [f64; 3]) -> Vec<Path> {
    let dist = |p: [f64; 3]| ((p[0] - rx[0]).powi(2) + (p[1] - rx[1]).powi(2) + (p[2] - rx[2]).powi(2)).sqrt();
    let mut paths = Vec::with_capacity(5);
    if cfg.direct_path {
        paths.push(Path {
            gain: 10f64.powf(-room.obstacle_extra_loss_db / 20.0),
            distance: dist(tx),
        });
    }
    if cfg.max_reflections >= 1 && room.wall_reflectivity > 0.0 {
        let images = [
            [-tx[0], tx[1], tx[2]],
            [2.0 * room.width - tx[0], tx[1], tx[2]],
            [tx[0], -tx[1], tx[2]],
            [tx[0], 2.0 * room.depth - tx[1], tx[2]],
        ];
        for img in images {
            paths.push(Path {
                gain: room.wall_reflectivity,
                distance: dist(img),
            });
        }
    }
    paths
}

/// Noise-free channel response from a transmitter at `tx` to a receiver at `rx`.
pub fn channel_response(room: &RoomSpec, cfg: &SimConfig, tx: [f64; 3], rx: [f64; 3]) -> [Complex64; SUBCARRIERS] {
    let freqs = cfg.subcarrier_freqs();
    let paths = paths_to(room, cfg, tx, rx);
    let mut h = [Complex64::new(0.0, 0.0); SUBCARRIERS];
    for (hi, &f) in h.iter_mut().zip(&freqs) {
        let lambda = SPEED_OF_LIGHT / f;
        for p in &paths {
            let amp = p.gain * lambda / (4.0 * PI * p.distance);
            let tau = p.distance / SPEED_OF_LIGHT;
            *hi += Complex64::from_polar(amp, -2.0 * PI * f * tau);
        }
    }
    h
}

fn position_at(track: &[GroundTruthFix], t: f64) -> (f64, f64) {
    crate::csi_record::interpolate_track(track, t).unwrap_or_else(|| {
        let last = if t < track[0].t {
            track[0]
        } else {
            track[track.len() - 1]
        };
        (last.x as f64, last.y as f64)
    })
}

/// Sounding instants covered by a track: the track span extended by one fix
/// period, sampled at the packet rate starting at the first fix.
pub fn sounding_times(track: &[GroundTruthFix], packet_rate_hz: f64) -> Vec<f64> {
    let n = track.len();
    if n == 0 {
        return Vec::new();
    }
    let span = if n == 1 {
        0.0
    } else {
        let raw = track[n - 1].t - track[0].t;
        raw * n as f64 / (n as f64 - 1.0)
    };
    let count = ((span * packet_rate_hz + 1e-6).floor() as usize).max(1);
    (0..count).map(|k| track[0].t + k as f64 / packet_rate_hz).collect()
}

fn stream_rng(seed: u64, ap: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ap as u64 * 2 + purpose);
    rng
}

/// Simulates one labelled session for the given track.
pub fn simulate_csi(
    session_id: &str,
    room: &RoomSpec,
    track: &[GroundTruthFix],
    cfg: &SimConfig,
) -> Result<CsiSession, SimError> {
    room.validate()?;
    cfg.validate()?;
    if track.is_empty() {
        return Err(SimError::InvalidSpec("track is empty".into()));
    }
    let has_images = cfg.max_reflections >= 1 && room.wall_reflectivity > 0.0;
    if !cfg.direct_path && !has_images {
        return Err(SimError::Degenerate(
            "direct path disabled and no wall reflections configured".into(),
        ));
    }
    let times = sounding_times(track, cfg.packet_rate_hz);
    let positions: Vec<(f64, f64)> = times.iter().map(|&t| position_at(track, t)).collect();

    let mut session = CsiSession::empty(session_id, 3, cfg.packet_rate_hz as f32);
    session.track = track.to_vec();
    for ap in 0..3 {
        let antennas: Vec<[f64; 3]> = (0..RX_ANTENNAS).map(|a| antenna_position(room, cfg, ap, a)).collect();
        let mut noise_rng = stream_rng(cfg.seed, ap, 0);
        let mut phase_rng = stream_rng(cfg.seed, ap, 1);
        let stream = &mut session.packets[ap];
        stream.reserve(times.len());
        for (&t, &(x, y)) in times.iter().zip(&positions) {
            let tx = [x, y, cfg.tag_height_m];
            let mut clean = [[Complex64::new(0.0, 0.0); SUBCARRIERS]; RX_ANTENNAS];
            for (row, rx) in clean.iter_mut().zip(&antennas) {
                *row = channel_response(room, cfg, tx, *rx);
            }
            let noise_sigma = cfg.awgn_snr_db.map(|snr| {
                let power =
                    clean.iter().flatten().map(|h| h.norm_sqr()).sum::<f64>() / (RX_ANTENNAS * SUBCARRIERS) as f64;
                (power / 10f64.powf(snr / 10.0) / 2.0).sqrt()
            });
            let rotation = if cfg.per_packet_phase_offset {
                Complex64::from_polar(1.0, phase_rng.gen_range(-PI..PI))
            } else {
                Complex64::new(1.0, 0.0)
            };
            let mut packet = CsiPacket::new(t, ap as u8);
            for (out_row, row) in packet.gains.iter_mut().zip(&clean) {
                for (g, h) in out_row.iter_mut().zip(row) {
                    let mut v = *h;
                    if let Some(sigma) = noise_sigma {
                        let n_re: f64 = StandardNormal.sample(&mut noise_rng);
                        let n_im: f64 = StandardNormal.sample(&mut noise_rng);
                        v += Complex::new(n_re * sigma, n_im * sigma);
                    }
                    v *= rotation;
                    *g = ComplexGain::new(v.re as f32, v.im as f32);
                }
            }
            stream.push(packet);
        }
    }
    Ok(session)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn office() -> RoomSpec {
        RoomSpec {
            width: 6.5,
            depth: 2.5,
            ap_positions: [[0.2, 0.2, 1.5], [6.3, 0.3, 1.5], [3.2, 2.3, 1.5]],
            array_orientation_rad: [0.0, 0.0, 0.0],
            wall_reflectivity: 0.4,
            obstacle_extra_loss_db: 0.0,
        }
    }

    fn traj(kind: TrajectoryKind, duration: f64) -> TrajectorySpec {
        TrajectorySpec {
            kind,
            duration,
            rate_hz: 120.0,
            bounds: Bounds::room(6.5, 2.5),
            seed: 7,
        }
    }

    #[test]
    fn stationary_track() {
        let fixes = gen_trajectory(&traj(TrajectoryKind::Stationary { at: [2.0, 1.0] }, 1.0)).unwrap();
        assert_eq!(fixes.len(), 120);
        assert!(fixes.iter().all(|f| f.x == 2.0 && f.y == 1.0));
    }

    #[test]
    fn linear_track_midpoint() {
        let fixes = gen_trajectory(&traj(
            TrajectoryKind::Linear {
                from: [0.0, 0.0],
                to: [1.2, 0.0],
            },
            1.0,
        ))
        .unwrap();
        assert_eq!(fixes[60].t, 0.5);
        assert!((fixes[60].x - 0.6).abs() < 1e-6);
        assert_eq!(fixes[60].y, 0.0);
    }

    #[test]
    fn waypoint_curve_is_deterministic_and_bounded() {
        let spec = traj(
            TrajectoryKind::WaypointCurve {
                waypoint_interval_s: 1.5,
                margin_m: 0.2,
            },
            20.0,
        );
        let a = gen_trajectory(&spec).unwrap();
        let b = gen_trajectory(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|f| spec.bounds.contains(f.x as f64, f.y as f64)));
        assert!(a.windows(2).all(|w| (w[1].t - w[0].t - 1.0 / 120.0).abs() < 1e-9));
    }

    #[test]
    fn zero_area_bounds_rejected() {
        let mut spec = traj(TrajectoryKind::Stationary { at: [0.0, 0.0] }, 1.0);
        spec.bounds = Bounds {
            x0: 0.0,
            y0: 0.0,
            x1: 0.0,
            y1: 1.0,
        };
        assert!(matches!(gen_trajectory(&spec), Err(SimError::InvalidSpec(_))));
    }

    #[test]
    fn no_paths_is_degenerate() {
        let mut room = office();
        room.wall_reflectivity = 0.0;
        let cfg = SimConfig {
            direct_path: false,
            ..SimConfig::default()
        };
        let track = [GroundTruthFix { t: 0.0, x: 1.0, y: 1.0 }];
        assert!(matches!(
            simulate_csi("d", &room, &track, &cfg),
            Err(SimError::Degenerate(_))
        ));
    }

    #[test]
    fn zero_reflectivity_matches_no_reflections() {
        let mut room = office();
        room.wall_reflectivity = 0.0;
        let track = gen_trajectory(&traj(
            TrajectoryKind::Linear {
                from: [1.0, 1.0],
                to: [5.0, 2.0],
            },
            0.2,
        ))
        .unwrap();
        let one = SimConfig {
            max_reflections: 1,
            seed: 3,
            ..SimConfig::default()
        };
        let zero = SimConfig {
            max_reflections: 0,
            ..one.clone()
        };
        assert_eq!(
            simulate_csi("z", &room, &track, &one).unwrap(),
            simulate_csi("z", &room, &track, &zero).unwrap()
        );
    }

    #[test]
    fn sounding_covers_full_duration() {
        let fixes = gen_trajectory(&traj(TrajectoryKind::Stationary { at: [1.0, 1.0] }, 120.0)).unwrap();
        assert_eq!(fixes.len(), 14_400);
        assert_eq!(sounding_times(&fixes, 500.0).len(), 60_000);
    }

    #[test]
    fn default_grid_spans_20mhz_group() {
        let idx = default_subcarrier_indices();
        assert_eq!(idx[0], -28);
        assert_eq!(idx[SUBCARRIERS - 1], 28);
        assert!(idx.windows(2).all(|w| w[1] > w[0]));
    }
}

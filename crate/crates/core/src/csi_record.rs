//! CSI data model and the CSIR1 session container.
//!
//! A session holds one packet stream per access point plus the ground-truth
//! track of the transmitting tag. The on-disk layout is little-endian:
//!
//! ```text
//! magic "CSIR" | version u16 (=1) | id_len u16 | id bytes (UTF-8)
//! ap_count u8 | rx_antennas u8 (=3) | subcarriers u8 (=30)
//! packet_rate_hz f32 | 16 reserved zero bytes
//! track:   count u32, then count × (t f64, x f32, y f32)
//! packets: count u32, then count × (t f64, ap_id u8, 3×30 × (re f32, im f32))
//! ```
//!
//! Packets are stored merged across access points in `(t, ap_id)` order,
//! antenna-major with ascending subcarrier index. The parser only accepts
//! that canonical order, which keeps `write(parse(bytes)) == bytes`.

use num_complex::Complex32;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CSIR";
pub const FORMAT_VERSION: u16 = 1;
pub const RX_ANTENNAS: usize = 3;
pub const SUBCARRIERS: usize = 30;
pub const DEFAULT_AP_COUNT: u8 = 3;
pub const DEFAULT_PACKET_RATE_HZ: f32 = 500.0;
/// One sounding period at 500 Hz.
pub const DEFAULT_ALIGN_TOLERANCE_S: f64 = 2e-3;

const RESERVED_BYTES: usize = 16;
const FIX_BYTES: usize = 8 + 4 + 4;
const PACKET_BYTES: usize = 8 + 1 + RX_ANTENNAS * SUBCARRIERS * 8;

/// Complex subcarrier gain `|H| e^{j∠H}` as reported for one antenna.
pub type ComplexGain = Complex32;

/// Per-antenna, per-subcarrier gains of one sounding report.
pub type GainMatrix = [[ComplexGain; SUBCARRIERS]; RX_ANTENNAS];

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("bad magic {found:?}, expected \"CSIR\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated {what} at byte offset {offset}")]
    Truncated { what: &'static str, offset: usize },
    #[error("malformed {field} at byte offset {offset}: {reason}")]
    Malformed {
        field: &'static str,
        offset: usize,
        reason: String,
    },
    #[error("invalid session field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("alignment needs exactly 3 access points, session has {0}")]
    UnsupportedTopology(u8),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiPacket {
    /// Seconds since session start.
    pub t: f64,
    pub ap_id: u8,
    pub gains: GainMatrix,
}

impl CsiPacket {
    pub fn new(t: f64, ap_id: u8) -> Self {
        Self {
            t,
            ap_id,
            gains: [[ComplexGain::new(0.0, 0.0); SUBCARRIERS]; RX_ANTENNAS],
        }
    }

    pub fn amplitudes(&self, antenna: usize) -> [f32; SUBCARRIERS] {
        let mut out = [0.0; SUBCARRIERS];
        for (o, g) in out.iter_mut().zip(&self.gains[antenna]) {
            *o = g.norm();
        }
        out
    }

    /// Raw phases in `[-π, π]`.
    pub fn phases(&self, antenna: usize) -> [f32; SUBCARRIERS] {
        let mut out = [0.0; SUBCARRIERS];
        for (o, g) in out.iter_mut().zip(&self.gains[antenna]) {
            *o = g.arg();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthFix {
    pub t: f64,
    pub x: f32,
    pub y: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiSession {
    pub session_id: String,
    pub ap_count: u8,
    pub packet_rate_hz: f32,
    /// `packets[ap]` is the time-ordered stream received at access point `ap`.
    pub packets: Vec<Vec<CsiPacket>>,
    pub track: Vec<GroundTruthFix>,
}

impl CsiSession {
    /// An empty session with `ap_count` empty streams.
    pub fn empty(session_id: impl Into<String>, ap_count: u8, packet_rate_hz: f32) -> Self {
        Self {
            session_id: session_id.into(),
            ap_count,
            packet_rate_hz,
            packets: vec![Vec::new(); ap_count as usize],
            track: Vec::new(),
        }
    }

    pub fn packet_count(&self) -> usize {
        self.packets.iter().map(Vec::len).sum()
    }

    /// Time span `[first, last]` covered by the ground-truth track.
    pub fn track_span(&self) -> Option<(f64, f64)> {
        Some((self.track.first()?.t, self.track.last()?.t))
    }

    /// Checks every invariant the file format relies on.
    pub fn validate(&self) -> Result<(), RecordError> {
        let invalid = |field: &str, reason: String| RecordError::Invalid {
            field: field.to_string(),
            reason,
        };
        if self.session_id.len() > u16::MAX as usize {
            return Err(invalid("session_id", "longer than 65535 bytes".into()));
        }
        if !(self.packet_rate_hz.is_finite() && self.packet_rate_hz > 0.0) {
            return Err(invalid(
                "packet_rate_hz",
                format!("must be finite and > 0, got {}", self.packet_rate_hz),
            ));
        }
        if self.packets.len() != self.ap_count as usize {
            return Err(invalid(
                "packets",
                format!("{} streams for ap_count {}", self.packets.len(), self.ap_count),
            ));
        }
        for (ap, stream) in self.packets.iter().enumerate() {
            let mut prev = 0.0f64;
            for (i, p) in stream.iter().enumerate() {
                if p.ap_id as usize != ap {
                    return Err(invalid(
                        "ap_id",
                        format!("packet {i} of stream {ap} carries ap_id {}", p.ap_id),
                    ));
                }
                if !p.t.is_finite() || p.t < prev {
                    return Err(invalid("t", format!("packet {i} of stream {ap}: {} after {prev}", p.t)));
                }
                prev = p.t;
                if p.gains
                    .iter()
                    .flatten()
                    .any(|g| !(g.re.is_finite() && g.im.is_finite()))
                {
                    return Err(invalid(
                        "gains",
                        format!("packet {i} of stream {ap} has a non-finite gain"),
                    ));
                }
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, fix) in self.track.iter().enumerate() {
            if !fix.t.is_finite() || fix.t <= prev {
                return Err(invalid(
                    "track",
                    format!("fix {i}: t = {} not strictly after {prev}", fix.t),
                ));
            }
            if !(fix.x.is_finite() && fix.y.is_finite()) {
                return Err(invalid("track", format!("fix {i} has a non-finite coordinate")));
            }
            prev = fix.t;
        }
        Ok(())
    }

    /// Packets of all streams merged in `(t, ap_id)` order.
    pub fn merged_packets(&self) -> Vec<&CsiPacket> {
        let mut cursors = vec![0usize; self.packets.len()];
        let mut out = Vec::with_capacity(self.packet_count());
        loop {
            let mut best: Option<usize> = None;
            for (ap, stream) in self.packets.iter().enumerate() {
                if let Some(p) = stream.get(cursors[ap]) {
                    match best {
                        Some(b) if self.packets[b][cursors[b]].t <= p.t => {}
                        _ => best = Some(ap),
                    }
                }
            }
            match best {
                Some(ap) => {
                    out.push(&self.packets[ap][cursors[ap]]);
                    cursors[ap] += 1;
                }
                None => return out,
            }
        }
    }
}

/// Linearly interpolates the track at `t`. Returns `None` outside the track span.
pub fn interpolate_track(track: &[GroundTruthFix], t: f64) -> Option<(f64, f64)> {
    let first = track.first()?;
    let last = track.last()?;
    if !(t >= first.t && t <= last.t) {
        return None;
    }
    let hi = track.partition_point(|f| f.t < t);
    if hi == 0 {
        return Some((first.x as f64, first.y as f64));
    }
    let (a, b) = (&track[hi - 1], &track[hi]);
    let w = (t - a.t) / (b.t - a.t);
    Some((
        a.x as f64 + w * (b.x as f64 - a.x as f64),
        a.y as f64 + w * (b.y as f64 - a.y as f64),
    ))
}

/// Serializes a session into CSIR1 bytes.
pub fn write_session(session: &CsiSession) -> Result<Vec<u8>, RecordError> {
    session.validate()?;
    let id = session.session_id.as_bytes();
    let mut out =
        Vec::with_capacity(39 + id.len() + session.track.len() * FIX_BYTES + session.packet_count() * PACKET_BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(id.len() as u16).to_le_bytes());
    out.extend_from_slice(id);
    out.push(session.ap_count);
    out.push(RX_ANTENNAS as u8);
    out.push(SUBCARRIERS as u8);
    out.extend_from_slice(&session.packet_rate_hz.to_le_bytes());
    out.extend_from_slice(&[0u8; RESERVED_BYTES]);

    out.extend_from_slice(&(session.track.len() as u32).to_le_bytes());
    for fix in &session.track {
        out.extend_from_slice(&fix.t.to_le_bytes());
        out.extend_from_slice(&fix.x.to_le_bytes());
        out.extend_from_slice(&fix.y.to_le_bytes());
    }

    let merged = session.merged_packets();
    out.extend_from_slice(&(merged.len() as u32).to_le_bytes());
    for p in merged {
        out.extend_from_slice(&p.t.to_le_bytes());
        out.push(p.ap_id);
        for g in p.gains.iter().flatten() {
            out.extend_from_slice(&g.re.to_le_bytes());
            out.extend_from_slice(&g.im.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str, record_start: usize) -> Result<&'a [u8], RecordError> {
        if self.bytes.len() - self.pos < n {
            return Err(RecordError::Truncated {
                what,
                offset: record_start,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str, start: usize) -> Result<[u8; N], RecordError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N, what, start)?);
        Ok(a)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, RecordError> {
        let start = self.pos;
        Ok(self.array::<1>(what, start)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, RecordError> {
        let start = self.pos;
        Ok(u16::from_le_bytes(self.array(what, start)?))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, RecordError> {
        let start = self.pos;
        Ok(u32::from_le_bytes(self.array(what, start)?))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, RecordError> {
        let start = self.pos;
        Ok(f32::from_le_bytes(self.array(what, start)?))
    }
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn le_f64(b: &[u8]) -> f64 {
    let mut a = [0u8; 8];
    a.copy_from_slice(&b[..8]);
    f64::from_le_bytes(a)
}

/// Parses CSIR1 bytes in a single forward pass.
pub fn parse_session(bytes: &[u8]) -> Result<CsiSession, RecordError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.array("magic", 0)?;
    if &magic != MAGIC {
        return Err(RecordError::BadMagic { found: magic });
    }
    let version = cur.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(RecordError::UnsupportedVersion(version));
    }
    let id_len = cur.u16("session id length")? as usize;
    let id_start = cur.pos;
    let id_bytes = cur.take(id_len, "session id", id_start)?;
    let session_id = std::str::from_utf8(id_bytes)
        .map_err(|e| RecordError::Malformed {
            field: "session_id",
            offset: id_start,
            reason: e.to_string(),
        })?
        .to_string();
    let ap_count = cur.u8("ap_count")?;
    let rx_pos = cur.pos;
    let rx = cur.u8("rx_antennas")?;
    if rx as usize != RX_ANTENNAS {
        return Err(RecordError::Malformed {
            field: "rx_antennas",
            offset: rx_pos,
            reason: format!("expected {RX_ANTENNAS}, found {rx}"),
        });
    }
    let sc_pos = cur.pos;
    let sc = cur.u8("subcarriers")?;
    if sc as usize != SUBCARRIERS {
        return Err(RecordError::Malformed {
            field: "subcarriers",
            offset: sc_pos,
            reason: format!("expected {SUBCARRIERS}, found {sc}"),
        });
    }
    let rate_pos = cur.pos;
    let packet_rate_hz = cur.f32("packet_rate_hz")?;
    if !(packet_rate_hz.is_finite() && packet_rate_hz > 0.0) {
        return Err(RecordError::Malformed {
            field: "packet_rate_hz",
            offset: rate_pos,
            reason: format!("must be finite and > 0, found {packet_rate_hz}"),
        });
    }
    let reserved_pos = cur.pos;
    let reserved = cur.take(RESERVED_BYTES, "reserved header bytes", reserved_pos)?;
    if reserved.iter().any(|&b| b != 0) {
        return Err(RecordError::Malformed {
            field: "reserved",
            offset: reserved_pos,
            reason: "reserved bytes must be zero".into(),
        });
    }

    let fix_count = cur.u32("track count")? as usize;
    let mut track = Vec::with_capacity(fix_count.min((bytes.len() - cur.pos) / FIX_BYTES));
    let mut prev_t = f64::NEG_INFINITY;
    for _ in 0..fix_count {
        let start = cur.pos;
        let rec = cur.take(FIX_BYTES, "ground-truth fix", start)?;
        let fix = GroundTruthFix {
            t: le_f64(&rec[0..8]),
            x: le_f32(&rec[8..12]),
            y: le_f32(&rec[12..16]),
        };
        if !fix.t.is_finite() || fix.t <= prev_t || !fix.x.is_finite() || !fix.y.is_finite() {
            return Err(RecordError::Malformed {
                field: "track",
                offset: start,
                reason: "fix times must be finite and strictly increasing, coordinates finite".into(),
            });
        }
        prev_t = fix.t;
        track.push(fix);
    }

    let packet_count = cur.u32("packet count")? as usize;
    let mut packets: Vec<Vec<CsiPacket>> = vec![Vec::new(); ap_count as usize];
    let mut prev: Option<(f64, u8)> = None;
    for _ in 0..packet_count {
        let start = cur.pos;
        let rec = cur.take(PACKET_BYTES, "packet", start)?;
        let t = le_f64(&rec[0..8]);
        let ap_id = rec[8];
        if !t.is_finite() || t < 0.0 {
            return Err(RecordError::Malformed {
                field: "packet.t",
                offset: start,
                reason: format!("timestamp {t} must be finite and non-negative"),
            });
        }
        if ap_id >= ap_count {
            return Err(RecordError::Malformed {
                field: "packet.ap_id",
                offset: start + 8,
                reason: format!("ap_id {ap_id} >= ap_count {ap_count}"),
            });
        }
        if let Some((pt, pap)) = prev {
            if t < pt || (t == pt && ap_id < pap) {
                return Err(RecordError::Malformed {
                    field: "packet order",
                    offset: start,
                    reason: format!("packet (t={t}, ap={ap_id}) precedes (t={pt}, ap={pap})"),
                });
            }
        }
        prev = Some((t, ap_id));
        let mut packet = CsiPacket::new(t, ap_id);
        for (k, g) in packet.gains.iter_mut().flatten().enumerate() {
            let off = 9 + k * 8;
            let re = le_f32(&rec[off..off + 4]);
            let im = le_f32(&rec[off + 4..off + 8]);
            if !(re.is_finite() && im.is_finite()) {
                return Err(RecordError::Malformed {
                    field: "packet.gains",
                    offset: start + off,
                    reason: "non-finite gain".into(),
                });
            }
            *g = ComplexGain::new(re, im);
        }
        packets[ap_id as usize].push(packet);
    }
    if cur.pos != bytes.len() {
        return Err(RecordError::Malformed {
            field: "trailer",
            offset: cur.pos,
            reason: format!("{} unexpected trailing bytes", bytes.len() - cur.pos),
        });
    }
    Ok(CsiSession {
        session_id,
        ap_count,
        packet_rate_hz,
        packets,
        track,
    })
}

/// One packet from each of the three access points, matched in time.
#[derive(Debug, Clone, Copy)]
pub struct PacketTriple<'a> {
    pub packets: [&'a CsiPacket; 3],
}

impl PacketTriple<'_> {
    /// Timestamp of the AP 0 packet, which anchors the match.
    pub fn t(&self) -> f64 {
        self.packets[0].t
    }

    pub fn span(&self) -> f64 {
        let ts = self.packets.map(|p| p.t);
        let hi = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = ts.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo
    }
}

/// Greedy nearest-timestamp matching of the three AP streams.
///
/// Every AP 0 packet anchors a candidate triple; for each other AP the
/// closest not-yet-consumed packet within `tolerance` is chosen, ties going
/// to the earlier packet. Anchors without a partner on both streams are
/// dropped, as are skipped-over packets of the other streams.
pub fn align_streams(session: &CsiSession, tolerance: f64) -> Result<Vec<PacketTriple<'_>>, RecordError> {
    if session.ap_count != 3 || session.packets.len() != 3 {
        return Err(RecordError::UnsupportedTopology(session.ap_count));
    }
    let [s0, s1, s2] = [&session.packets[0], &session.packets[1], &session.packets[2]];
    let mut cursors = [0usize; 2];
    let mut out = Vec::with_capacity(s0.len().min(s1.len()).min(s2.len()));
    for anchor in s0 {
        let mut matched = [0usize; 2];
        let mut ok = true;
        for (j, stream) in [s1, s2].into_iter().enumerate() {
            let mut i = cursors[j];
            while i < stream.len() && stream[i].t < anchor.t - tolerance {
                i += 1;
            }
            cursors[j] = i;
            let mut best: Option<(usize, f64)> = None;
            while i < stream.len() && stream[i].t <= anchor.t + tolerance {
                let d = (stream[i].t - anchor.t).abs();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
                i += 1;
            }
            match best {
                Some((i, _)) => matched[j] = i,
                None => ok = false,
            }
        }
        if ok {
            cursors = [matched[0] + 1, matched[1] + 1];
            out.push(PacketTriple {
                packets: [anchor, &s1[matched[0]], &s2[matched[1]]],
            });
        }
    }
    Ok(out)
}

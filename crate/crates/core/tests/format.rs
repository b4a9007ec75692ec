use csiloc::csi_record::{parse_session, write_session, CsiPacket, CsiSession, GroundTruthFix, RecordError};
use num_complex::Complex32;
use proptest::prelude::*;

fn packet_stream(ap: u8) -> impl Strategy<Value = Vec<CsiPacket>> {
    prop::collection::vec((0.0f64..0.01, prop::array::uniform3(any::<u32>())), 0..6).prop_map(move |steps| {
        let mut t = 0.0;
        steps
            .into_iter()
            .map(|(dt, seeds)| {
                t += dt;
                let mut p = CsiPacket::new(t, ap);
                for (a, s) in seeds.iter().enumerate() {
                    for (k, g) in p.gains[a].iter_mut().enumerate() {
                        let v = s.wrapping_mul(2_654_435_761).wrapping_add(k as u32 * 40_503);
                        *g = Complex32::new(f32::from_bits(v & 0x3fff_ffff), -f32::from_bits((v >> 1) & 0x3fff_ffff));
                    }
                }
                p
            })
            .collect()
    })
}

prop_compose! {
    fn session()(
        id in "[a-z0-9_-]{0,12}",
        ap_count in 0u8..5,
        rate in 1.0f32..1000.0,
        fixes in prop::collection::vec((1e-3f64..0.5, -50.0f32..50.0, -50.0f32..50.0), 0..8),
    )(
        streams in (0..ap_count).map(packet_stream).collect::<Vec<_>>(),
        id in Just(id),
        ap_count in Just(ap_count),
        rate in Just(rate),
        fixes in Just(fixes),
    ) -> CsiSession {
        let mut t = 0.0;
        let track = fixes
            .into_iter()
            .map(|(dt, x, y)| {
                t += dt;
                GroundTruthFix { t, x, y }
            })
            .collect();
        CsiSession { session_id: id, ap_count, packet_rate_hz: rate, packets: streams, track }
    }
}

proptest! {
    #[test]
    fn write_parse_write_is_bit_exact(s in session()) {
        let bytes = write_session(&s).unwrap();
        let parsed = parse_session(&bytes).unwrap();
        prop_assert_eq!(&parsed, &s);
        prop_assert_eq!(write_session(&parsed).unwrap(), bytes);
    }

    #[test]
    fn corrupted_files_yield_typed_errors(s in session(), cut in any::<prop::sample::Index>(), flip in any::<prop::sample::Index>()) {
        let bytes = write_session(&s).unwrap();
        let n = cut.index(bytes.len());
        prop_assert!(parse_session(&bytes[..n]).is_err());
        let mut flipped = bytes.clone();
        let bit = flip.index(bytes.len() * 8);
        flipped[bit / 8] ^= 1 << (bit % 8);
        // A flip inside a payload may still parse; it must never panic, and
        // anything it parses to must re-serialize to the flipped bytes.
        if let Ok(p) = parse_session(&flipped) {
            prop_assert_eq!(write_session(&p).unwrap(), flipped);
        }
    }
}

#[test]
fn trailing_bytes_are_rejected() {
    let mut bytes = write_session(&CsiSession::empty("x", 3, 500.0)).unwrap();
    bytes.push(0);
    assert!(matches!(parse_session(&bytes), Err(RecordError::Malformed { .. })));
}

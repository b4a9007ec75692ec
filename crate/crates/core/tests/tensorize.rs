use std::f64::consts::PI;

use csiloc::tensorize::{sanitize_phase, split_sessions};
use proptest::prelude::*;

fn wrap(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

fn phases() -> impl Strategy<Value = [f64; 30]> {
    (-PI..PI, prop::array::uniform29(-1.0f64..1.0)).prop_map(|(start, steps)| {
        let mut p = [0.0; 30];
        let mut acc = start;
        p[0] = wrap(acc);
        for (i, s) in steps.iter().enumerate() {
            acc += s;
            p[i + 1] = wrap(acc);
        }
        p
    })
}

proptest! {
    #[test]
    fn output_is_wrapped(p in phases()) {
        for v in sanitize_phase(&p).unwrap() {
            prop_assert!((-PI..PI).contains(&v));
        }
    }

    #[test]
    fn invariant_to_offset_and_linear_ramp(p in phases(), a in -10.0f64..10.0, b in -1.5f64..1.5) {
        let mut shifted = p;
        for (i, v) in shifted.iter_mut().enumerate() {
            *v = wrap(*v + a + b * i as f64);
        }
        let x = sanitize_phase(&p).unwrap();
        let y = sanitize_phase(&shifted).unwrap();
        for (u, v) in x.iter().zip(&y) {
            prop_assert!(wrap(u - v).abs() < 1e-9, "{} vs {}", u, v);
        }
    }

    #[test]
    fn folds_partition_sessions(fold in 0usize..5) {
        let ids: Vec<String> = (0..5).map(|i| format!("id{i}")).collect();
        let s = split_sessions(&ids, fold).unwrap();
        let mut all: Vec<String> = s.train.clone();
        all.push(s.val.clone());
        all.push(s.test.clone());
        all.sort();
        prop_assert_eq!(all, ids.clone());
        prop_assert_eq!(&s.test, &ids[fold]);
        prop_assert_eq!(&s.val, &ids[(fold + 1) % 5]);
    }
}

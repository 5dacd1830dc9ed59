//! The McCormick rows the bilinear builder emits, checked by interval
//! propagation over the rows themselves.

mod common;

use common::product_range;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn binary_indicator_pins_the_product(p_max in 1.0f64..500.0, frac in 0.0f64..=1.0, z in any::<bool>()) {
        let p = frac * p_max;
        let z = if z { 1.0 } else { 0.0 };
        let (lo, hi) = product_range(p_max, p, z);
        let tol = 1e-9 * p_max;
        prop_assert!((lo - p * z).abs() <= tol, "lower {lo} vs {}", p * z);
        prop_assert!((hi - p * z).abs() <= tol, "upper {hi} vs {}", p * z);
    }

    #[test]
    fn fractional_indicator_gives_the_envelope(p_max in 1.0f64..500.0, frac in 0.0f64..=1.0, z in 0.001f64..0.999) {
        let p = frac * p_max;
        let (lo, hi) = product_range(p_max, p, z);
        let tol = 1e-9 * p_max;
        prop_assert!(lo <= p * z + tol && p * z <= hi + tol);
        // convex and concave envelopes of P z over [0, p_max] x [0, 1]
        prop_assert!((lo - (p + p_max * z - p_max).max(0.0)).abs() <= tol);
        prop_assert!((hi - p.min(p_max * z)).abs() <= tol);
    }
}

#[test]
fn envelope_is_exact_at_the_vertices() {
    let p_max = 80.0;
    for p in [0.0, p_max] {
        for z in [0.0, 1.0] {
            let (lo, hi) = product_range(p_max, p, z);
            assert!(
                (lo - p * z).abs() < 1e-9 && (hi - p * z).abs() < 1e-9,
                "({p}, {z}): [{lo}, {hi}]"
            );
        }
    }
}

//! Replaying a simulated cohort against its own generating parameters must
//! reproduce the repeat-frequency histogram up to Monte Carlo noise.

use btyd::bgnbd::BgnbdCoefs;
use btyd::evaluate::repeat_frequency_comparison;
use btyd::simulate::{simulate, SimulationConfig};

#[test]
fn replayed_histogram_matches_its_own_generator() {
    let coefs = BgnbdCoefs { r: 0.25, alpha: 4.5, a: 0.8, b: 2.4 };
    let base = simulate(&SimulationConfig {
        n_customers: 80_000,
        horizon: 39.0,
        coefs,
        spend: None,
        seed: 17,
    })
    .unwrap();
    let rfm = base.rfm_rows();
    let cmp = repeat_frequency_comparison(&rfm, &coefs, 29, 10, 4).unwrap();
    assert_eq!(cmp.bins, ["0", "1", "2", "3", "4+"]);
    for ((bin, act), pred) in cmp.bins.iter().zip(&cmp.actual).zip(&cmp.predicted) {
        if *act >= 100.0 {
            let gap = (act - pred).abs() / act;
            assert!(
                gap < 0.05,
                "bin {bin}: actual {act}, predicted {pred}, gap {gap:.4}"
            );
        }
    }
}

use manifold_mix::geometry::{generate_dataset, ManifoldSpec, NoiseModel, NoiseSpec};
use manifold_mix::linalg::orthogonality_error;
use manifold_mix::map::{fit_map, gradient_check, orthogonal_from_skew, MapParams, MapSettings};
use manifold_mix::model::{Mixture, PriorConfig, ScaleMode};
use manifold_mix::{Points, RngStream};
use proptest::prelude::*;

fn data(n: usize) -> Points {
    let noise = NoiseSpec::new(NoiseModel::Orthonormal, 0.1);
    generate_dataset(&ManifoldSpec::two_circles(), &noise, n, &mut RngStream::new(11, 0))
        .unwrap()
        .points
}

fn quick(k: usize) -> MapSettings {
    MapSettings {
        k,
        epochs: 300,
        restarts: 2,
        learning_rate: 0.05,
        ..MapSettings::default()
    }
}

#[test]
fn single_component_recovers_moments() {
    let d = data(400);
    let fit = fit_map(&d, &PriorConfig::default_for(2), &quick(1), &mut RngStream::new(1, 2)).unwrap();
    assert_eq!(fit.snapshot.len(), 1);
    let mean = d.mean();
    let c = &fit.snapshot.components[0];
    // prior pulls a little toward zero; the data mean dominates at n = 400
    assert!((&c.mu - &mean).amax() < 0.05, "{} vs {}", c.mu, mean);
}

#[test]
fn objective_trace_is_recorded() {
    let fit = fit_map(&data(100), &PriorConfig::default_for(2), &quick(3), &mut RngStream::new(2, 2)).unwrap();
    assert!(!fit.trace.is_empty());
    assert!(fit.objective.is_finite());
    let last = fit.trace.last().unwrap().1;
    assert!(last >= fit.trace[0].1);
}

#[test]
fn mfm_sweeps_component_counts() {
    let mut prior = PriorConfig::default_for(2);
    prior.mixture = Mixture::Mfm { r: 0, scale: 0.5 };
    let settings = MapSettings {
        k_max: 3,
        ..quick(3)
    };
    let fit = fit_map(&data(80), &prior, &settings, &mut RngStream::new(3, 2)).unwrap();
    assert!((1..=3).contains(&fit.k));
    assert_eq!(fit.snapshot.len(), fit.k);
}

#[test]
fn k_above_truncation_is_a_config_error() {
    let mut prior = PriorConfig::default_for(2);
    prior.truncation = 2;
    assert!(fit_map(&data(20), &prior, &quick(3), &mut RngStream::new(0, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cayley_is_orthogonal(p in proptest::collection::vec(-50.0f64..50.0, 6)) {
        let o = orthogonal_from_skew(&p, 4).unwrap();
        prop_assert!(orthogonality_error(&o) < 1e-12);
        prop_assert!((o.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradients_agree_with_differences(seed in any::<u64>(), hybrid in any::<bool>()) {
        use rand::Rng;
        let mode = if hybrid { ScaleMode::Hybrid } else { ScaleMode::Partial };
        let mut prior = PriorConfig::default_for(2);
        prior.scale_mode = mode;
        let mut p = MapParams::zeros(2, 2, mode);
        let mut rng = RngStream::new(seed, 0);
        for v in p.theta.iter_mut() {
            *v = rng.random::<f64>() - 0.5;
        }
        for (block, err) in gradient_check(&p, &data(25), &prior).unwrap() {
            prop_assert!(err < 1e-5, "{:?}: {}", block, err);
        }
    }
}

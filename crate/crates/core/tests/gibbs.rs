use manifold_mix::geometry::{generate_dataset, ManifoldSpec, NoiseModel, NoiseSpec};
use manifold_mix::gibbs::{read_trace, run_chain, write_trace, GibbsConfig, GibbsSampler};
use manifold_mix::model::{BPrior, PriorConfig, ScaleMode};
use manifold_mix::{Points, RngStream};
use proptest::prelude::*;

fn data(n: usize, seed: u64) -> Points {
    let noise = NoiseSpec::new(NoiseModel::Orthonormal, 0.1);
    generate_dataset(&ManifoldSpec::spiral_2d(), &noise, n, &mut RngStream::new(seed, 0))
        .unwrap()
        .points
}

#[test]
fn trace_length_and_thinning() {
    let mut c = GibbsConfig::new(PriorConfig::default_for(2), 60, 1);
    c.burn_in = 10;
    c.thin = 7;
    let t = run_chain(&data(40, 1), &c).unwrap();
    assert_eq!(t.len(), c.kept_records());
    assert_eq!(t.len(), 50 / 7);
}

#[test]
fn chains_are_reproducible() {
    let c = GibbsConfig::new(PriorConfig::default_for(2), 40, 9);
    let d = data(60, 2);
    assert_eq!(run_chain(&d, &c).unwrap().records, run_chain(&d, &c).unwrap().records);
}

#[test]
fn fixed_b_never_moves() {
    let mut prior = PriorConfig::default_for(2);
    prior.b = BPrior::Fixed { values: vec![1.0, 1.0] };
    let t = run_chain(&data(50, 3), &GibbsConfig::new(prior, 40, 3)).unwrap();
    assert!(t.records.iter().all(|r| r.b == vec![1.0, 1.0]));
}

#[test]
fn hybrid_records_carry_cluster_scales() {
    let mut prior = PriorConfig::default_for(2);
    prior.scale_mode = ScaleMode::Hybrid;
    let t = run_chain(&data(50, 4), &GibbsConfig::new(prior, 30, 4)).unwrap();
    assert!(t.records.iter().all(|r| r.clusters.iter().all(|c| c.lambda.is_some())));
}

#[test]
fn trace_file_round_trip() {
    let t = run_chain(&data(30, 5), &GibbsConfig::new(PriorConfig::default_for(2), 20, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("trace.ndjson");
    write_trace(&t, &p).unwrap();
    assert_eq!(read_trace(&p).unwrap().records, t.records);
}

#[test]
fn burn_in_must_leave_records() {
    let mut c = GibbsConfig::new(PriorConfig::default_for(2), 10, 0);
    c.burn_in = 10;
    assert!(run_chain(&data(10, 0), &c).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sweeps_keep_state_consistent(seed in any::<u64>()) {
        let prior = PriorConfig::default_for(2);
        let d = data(40, seed);
        let mut rng = RngStream::new(seed, 2);
        let init = GibbsSampler::initial_state(&d, &prior, 5, &mut rng).unwrap();
        let mut s = GibbsSampler::new(&prior, init, &d).unwrap();
        for it in 0..15 {
            s.sweep(&d, it, &mut rng).unwrap();
            prop_assert!(s.state.validate().is_ok());
            // labels are compact and ordered by first member
            let mut next = 0;
            for &c in &s.state.alloc {
                prop_assert!(c <= next);
                if c == next {
                    next += 1;
                }
            }
            prop_assert_eq!(next, s.state.n_clusters());
            let (cached, scratch) = s.residual_check(&d);
            prop_assert!((cached - scratch).amax() < 1e-8);
        }
    }
}

use manifold_mix::geometry::{ManifoldSpec, NoiseModel, NoiseSpec, SmoothnessSpec};
use manifold_mix::kernel_approx::{
    apply_kernel_operator, approximation_error_scan, sigma_at, write_scan_csv, AnisotropicScale, ScanTarget,
};
use manifold_mix::target::PointMass;
use manifold_mix::{DVector, RngStream};
use proptest::prelude::*;

fn smooth() -> SmoothnessSpec {
    SmoothnessSpec::new(2.0, 6.0, 1, 2).unwrap()
}

#[test]
fn validity_threshold() {
    // α0 − α⊥ = 1: valid exactly when σ ≤ δ
    assert!(AnisotropicScale::new(0.1, 0.1, smooth()).unwrap().is_valid());
    assert!(!AnisotropicScale::new(0.11, 0.1, smooth()).unwrap().is_valid());
    assert!(AnisotropicScale::new(0.0, 0.1, smooth()).is_err());
}

#[test]
fn point_mass_operator_is_the_kernel() {
    let spec = ManifoldSpec::FlatLine;
    let scale = AnisotropicScale::new(0.3, 0.5, smooth()).unwrap();
    let g = PointMass(DVector::from_column_slice(&[0.0, 0.0]));
    let x = DVector::from_column_slice(&[0.2, 0.1]);
    let est = apply_kernel_operator(&g, &x, &spec, &scale, 10, &mut RngStream::new(0, 0)).unwrap();
    let (vt, vn) = (0.3f64.powf(3.0), 0.25 * 0.3f64);
    let exact = (-0.5 * (0.04 / vt + 0.01 / vn)).exp() / (2.0 * std::f64::consts::PI * (vt * vn).sqrt());
    assert!((est.value - exact).abs() < 1e-12 * exact);
}

#[test]
fn scan_csv_has_one_row_per_sigma() {
    let target = ScanTarget::Manifold {
        spec: ManifoldSpec::two_circles(),
        noise: NoiseSpec::new(NoiseModel::Orthonormal, 0.1),
    };
    let table = approximation_error_scan(&target, &[0.3, 0.1], 60, 50, &mut RngStream::new(1, 6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("scan.csv");
    write_scan_csv(&table, &p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sigma,sup_error,hellinger_sq,mc_se,valid_flag");
    assert_eq!(lines.len(), 3);
}

#[test]
fn scan_requires_decreasing_sigmas() {
    let target = ScanTarget::FlatGaussian {
        sd: [1.0, 0.3],
        delta: 0.5,
        beta0: 2.0,
        beta_perp: 6.0,
    };
    assert!(approximation_error_scan(&target, &[0.1, 0.2], 40, 10, &mut RngStream::new(0, 0)).is_err());
}

#[test]
fn isotropic_and_3d_scans_are_rejected() {
    let iso = ScanTarget::Manifold {
        spec: ManifoldSpec::spiral_2d(),
        noise: NoiseSpec::new(NoiseModel::Isotropic, 0.1),
    };
    assert!(approximation_error_scan(&iso, &[0.2], 40, 10, &mut RngStream::new(0, 0)).is_err());
    let torus = ScanTarget::Manifold {
        spec: ManifoldSpec::torus(),
        noise: NoiseSpec::new(NoiseModel::Orthonormal, 0.1),
    };
    assert!(approximation_error_scan(&torus, &[0.2], 40, 10, &mut RngStream::new(0, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sigma_eigenvalues_follow_the_frame(t in 0.05f64..0.95, e in -0.5f64..0.5, sigma in 0.01f64..1.0) {
        let spec = ManifoldSpec::spiral_2d();
        let scale = AnisotropicScale::new(sigma, 0.1, smooth()).unwrap();
        let c = manifold_mix::geometry::Coord::curve(t);
        let (tan, nor) = spec.frame(&c).unwrap();
        let x = spec.embed(&c).unwrap() + nor.column(0) * (0.1 * e);
        let s = sigma_at(&x, &spec, &scale).unwrap();
        let vt = (tan.transpose() * &s * &tan)[(0, 0)];
        let vn = (nor.transpose() * &s * &nor)[(0, 0)];
        let cross = (tan.transpose() * &s * &nor)[(0, 0)];
        prop_assert!((vt - sigma.powf(3.0)).abs() < 1e-12);
        prop_assert!((vn - 0.01 * sigma).abs() < 1e-12);
        prop_assert!(cross.abs() < 1e-12);
    }
}

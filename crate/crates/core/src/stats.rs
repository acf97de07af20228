//! Numerical and statistical utilities shared by the samplers, the
//! evaluation harness and the test oracles.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    (
        x.iter().map(|t| c + h * t).collect(),
        w.iter().map(|v| v * h).collect(),
    )
}

/// Composite Simpson weights for `n_intervals` (even) equal intervals of width `h`.
pub fn simpson_weights(n_intervals: usize, h: f64) -> Vec<f64> {
    assert!(n_intervals >= 2 && n_intervals % 2 == 0);
    (0..=n_intervals)
        .map(|i| {
            let c = if i == 0 || i == n_intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Asymptotic Kolmogorov survival function `P(K > x)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d),
    }
}

/// Two-sample Kolmogorov–Smirnov test. Ties are handled by advancing both
/// samples past equal values before measuring the gap.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0_f64;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sn = ne.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d),
    }
}

/// Pearson chi-square goodness of fit; returns `(statistic, p_value)`.
/// Bins with expected count below 5 are merged into their right neighbour.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> (f64, f64) {
    let mut stat = 0.0;
    let mut bins = 0usize;
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            stat += (o_acc - e_acc) * (o_acc - e_acc) / e_acc;
            bins += 1;
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 {
        stat += (o_acc - e_acc) * (o_acc - e_acc) / e_acc;
        bins += 1;
    }
    let dof = (bins.max(2) - 1) as f64;
    let p = 1.0 - ChiSquared::new(dof).expect("dof > 0").cdf(stat);
    (stat, p)
}

/// Total-variation distance between two histograms given as counts or masses.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    0.5 * p
        .iter()
        .zip(q)
        .map(|(a, b)| (a / sp - b / sq).abs())
        .sum::<f64>()
}

/// `log(sum(exp(xs)))`, robust to `-inf` entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log I0(x)` for `x ≥ 0`.
pub fn log_bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x < 20.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= q / (k as f64 * k as f64);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        sum.ln()
    } else {
        // asymptotic expansion
        let mut series = 1.0;
        let mut term = 1.0;
        for k in 1..12 {
            let kf = (2 * k - 1) as f64;
            term *= kf * kf / (8.0 * x * k as f64);
            series += term;
        }
        x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + series.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_on(6, 0.0, 2.0);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(11)).sum();
        assert!((v - 2f64.powi(12) / 12.0).abs() < 1e-10);
    }

    #[test]
    fn simpson_exact_for_cubics() {
        let w = simpson_weights(4, 0.25);
        let v: f64 = w
            .iter()
            .enumerate()
            .map(|(i, w)| w * (i as f64 * 0.25).powi(3))
            .sum();
        assert!((v - 0.25).abs() < 1e-14);
    }

    #[test]
    fn kolmogorov_tail_reference() {
        // P(K > 1.36) ≈ 0.0494
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 5e-4);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn bessel_branches_agree() {
        // log I0(20) = 17.589610428244274; the series and asymptotic branches meet there
        assert!((log_bessel_i0(20.0) - 17.589_610_428_244_274).abs() < 1e-10);
        assert!((log_bessel_i0(19.999_999) - 17.589_610_428_244_274).abs() < 2e-6);
        assert!((log_bessel_i0(0.0)).abs() < 1e-15);
        // I0(1) = 1.2660658777520082
        assert!((log_bessel_i0(1.0) - 1.266_065_877_752_008_2_f64.ln()).abs() < 1e-14);
    }
}

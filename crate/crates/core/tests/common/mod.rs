//! Independent numerical oracles shared by the integration tests.
//!
//! Nothing in here calls into the code paths under test.

#![allow(dead_code)]

/// Logistic survival written out by hand.
pub fn logistic_sf(y: f64, scale: f64) -> f64 {
    1.0 / (1.0 + (y / scale).exp())
}

pub fn logistic_cdf(y: f64, scale: f64) -> f64 {
    1.0 / (1.0 + (-y / scale).exp())
}

/// `P[Z >= z]` by composite Simpson quadrature of the normal density on
/// `[z, z + 40]`.
pub fn normal_sf_quadrature(z: f64) -> f64 {
    normal_sf_quadrature_with(z, 400_000, 40.0)
}

/// Cheaper variant for statistics where 1e-8 accuracy is plenty.
pub fn normal_sf_coarse(z: f64) -> f64 {
    if z < 0.0 {
        return 1.0 - normal_sf_coarse(-z);
    }
    normal_sf_quadrature_with(z, 2_000, 12.0)
}

fn normal_sf_quadrature_with(z: f64, n: usize, width: f64) -> f64 {
    let (a, b) = (z, z + width);
    let h = (b - a) / n as f64;
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut sum = pdf(a) + pdf(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(x);
    }
    sum * h / 3.0
}

/// Plain bisection for a sign change of `f` on `[a, b]`.
pub fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    assert!(fa * f(b) <= 0.0, "no sign change on [{a}, {b}]");
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// `exp(q t)` by scaling and squaring of a 30-term Taylor series.
pub fn expm(q: &[Vec<f64>], t: f64) -> Vec<Vec<f64>> {
    let n = q.len();
    let norm: f64 = q
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        * t.abs();
    let mut squarings = 0;
    while norm / 2f64.powi(squarings) > 0.5 {
        squarings += 1;
    }
    let scale = t / 2f64.powi(squarings);
    let a: Vec<Vec<f64>> = q.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..30 {
        term = matmul(&term, &a);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

pub fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for k in 0..b.len() {
            for j in 0..m {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Row vector times matrix.
pub fn vecmat(v: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    (0..m[0].len())
        .map(|j| v.iter().zip(m).map(|(a, row)| a * row[j]).sum())
        .collect()
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            f64::max(f - i as f64 / n, (i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Critical KS value at alpha ~ 0.01.
pub fn ks_critical(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

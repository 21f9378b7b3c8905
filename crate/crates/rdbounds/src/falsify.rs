//! Parallel-trend falsification diagnostics for two-cutoff designs: a global
//! polynomial interaction test and a local-polynomial derivative equality
//! test. Diagnostics only; nothing here feeds back into bound computation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::data::{DesignSpec, ObservationTable};
use crate::error::{Error, Result};
use crate::regress::{local_poly_derivative, LocalDerivEstimate};

/// One estimated regression term of the global test.
#[derive(Debug, Clone, Serialize)]
pub struct CoefEstimate {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
}

/// Global polynomial interaction test: OLS of Y on an intercept, the
/// high-cutoff indicator, powers of X, and indicator-power interactions,
/// restricted to x below the low cutoff; HC1-robust Wald test that all
/// interaction coefficients are jointly zero.
#[derive(Debug, Clone, Serialize)]
pub struct GlobalTestResult {
    pub coefficients: Vec<CoefEstimate>,
    pub wald_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub n: usize,
    pub r_squared: f64,
    pub adj_r_squared: f64,
}

pub fn global_parallel_test(
    table: &ObservationTable,
    design: &DesignSpec,
    p: usize,
) -> Result<GlobalTestResult> {
    let (low, high) = match *design {
        DesignSpec::Multi { low, high, .. } => (low, high),
        DesignSpec::Single { .. } => {
            return Err(Error::Design(
                "parallel-trend tests require a two-cutoff design".into(),
            ))
        }
    };
    if p < 1 {
        return Err(Error::InvalidArgument("polynomial order p must be >= 1".into()));
    }

    // Regression sample: everything strictly below the low cutoff.
    let rows: Vec<&crate::data::Observation> =
        table.rows().iter().filter(|r| r.x < low).collect();
    let n = rows.len();
    let k = 2 * (p + 1); // 1, powers, indicator, interactions
    if n <= k + 1 {
        return Err(Error::InsufficientData(format!(
            "global test with p = {p} needs n > {}, have n = {n} below the low cutoff",
            k + 1
        )));
    }
    let n_low = rows.iter().filter(|r| r.c == low).count();
    if n_low == 0 || n_low == n {
        return Err(Error::InsufficientData(
            "both subpopulations need untreated data below the low cutoff".into(),
        ));
    }

    let mut design_m = DMatrix::zeros(n, k);
    let mut y = DVector::zeros(n);
    for (i, r) in rows.iter().enumerate() {
        let z = if r.c == high { 1.0 } else { 0.0 };
        design_m[(i, 0)] = 1.0;
        for j in 1..=p {
            design_m[(i, j)] = r.x.powi(j as i32);
        }
        design_m[(i, p + 1)] = z;
        for j in 1..=p {
            design_m[(i, p + 1 + j)] = z * r.x.powi(j as i32);
        }
        y[i] = r.y;
    }

    let svd = design_m.clone().svd(true, true);
    let tol = svd.singular_values.max() * n as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < k {
        return Err(Error::Numerical(format!(
            "global test design matrix rank deficient (rank {rank} < {k}); p = {p} too large for the cells"
        )));
    }
    let beta = svd
        .solve(&y, tol)
        .map_err(|e| Error::Numerical(format!("OLS solve failed: {e}")))?;
    let resid = &y - &design_m * &beta;

    // HC1 sandwich covariance.
    let xtx_inv = (design_m.transpose() * &design_m)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("X'X singular".into()))?;
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let xi = design_m.row(i).transpose();
        meat += &xi * xi.transpose() * resid[i] * resid[i];
    }
    let scale = n as f64 / (n - k) as f64;
    let cov = (&xtx_inv * meat * &xtx_inv) * scale;

    // Wald test of the interaction block (last p coefficients).
    let delta = DVector::from_iterator(p, (0..p).map(|j| beta[p + 2 + j]));
    let v_delta = cov.view((p + 2, p + 2), (p, p)).into_owned();
    // With a numerically exact fit both delta and its covariance are rounding
    // noise; their ratio is meaningless. Report zero evidence instead.
    let exact_fit = resid.norm() <= 1e-9 * y.norm().max(1e-300);
    let wald = if exact_fit {
        0.0
    } else {
        match v_delta.clone().try_inverse() {
            Some(v_inv) => (delta.transpose() * v_inv * &delta)[(0, 0)].max(0.0),
            None => {
                if delta.norm() <= 1e-8 * beta.norm().max(1.0) {
                    0.0
                } else {
                    return Err(Error::Numerical(
                        "interaction covariance block singular with nonzero interactions".into(),
                    ));
                }
            }
        }
    };
    let chi = ChiSquared::new(p as f64)
        .map_err(|e| Error::Numerical(format!("chi-squared df error: {e}")))?;
    let p_value = (1.0 - chi.cdf(wald)).clamp(0.0, 1.0);

    let normal = Normal::new(0.0, 1.0).unwrap();
    let names: Vec<String> = {
        let mut v = vec!["(Intercept)".to_string()];
        v.extend((1..=p).map(|j| format!("X^{j}")));
        v.push("1{C=h}".to_string());
        v.extend((1..=p).map(|j| format!("1{{C=h}} x X^{j}")));
        v
    };
    let coefficients: Vec<CoefEstimate> = (0..k)
        .map(|j| {
            let se = cov[(j, j)].max(0.0).sqrt();
            let z = if se > 0.0 { beta[j] / se } else { f64::INFINITY };
            CoefEstimate {
                name: names[j].clone(),
                estimate: beta[j],
                std_error: se,
                p_value: 2.0 * (1.0 - normal.cdf(z.abs())),
            }
        })
        .collect();

    let y_mean = y.sum() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let rss: f64 = resid.iter().map(|e| e * e).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - k as f64);

    Ok(GlobalTestResult {
        coefficients,
        wald_statistic: wald,
        degrees_of_freedom: p,
        p_value,
        n,
        r_squared: r2,
        adj_r_squared: adj_r2,
    })
}

/// Local-polynomial derivative equality test: left-side slope estimates at
/// each subpopulation's own cutoff, compared with a two-sided z-test.
#[derive(Debug, Clone, Serialize)]
pub struct LocalTestResult {
    pub low_estimate: f64,
    pub low_std_error: f64,
    pub low_bandwidth: f64,
    pub low_p_value: f64,
    pub low_ci95: (f64, f64),
    pub high_estimate: f64,
    pub high_std_error: f64,
    pub high_bandwidth: f64,
    pub high_p_value: f64,
    pub high_ci95: (f64, f64),
    pub difference: f64,
    pub difference_std_error: f64,
    pub p_value: f64,
    pub ci95: (f64, f64),
}

pub fn local_derivative_test(
    table: &ObservationTable,
    design: &DesignSpec,
    bandwidths: Option<(f64, f64)>,
) -> Result<LocalTestResult> {
    let (low, high) = match *design {
        DesignSpec::Multi { low, high, .. } => (low, high),
        DesignSpec::Single { .. } => {
            return Err(Error::Design(
                "parallel-trend tests require a two-cutoff design".into(),
            ))
        }
    };
    let side = |cutoff: f64| -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in table.rows() {
            if r.c == cutoff && r.x < cutoff {
                xs.push(r.x);
                ys.push(r.y);
            }
        }
        (xs, ys)
    };
    let (lx, ly) = side(low);
    let (hx, hy) = side(high);
    let d_low = local_poly_derivative(&lx, &ly, low, bandwidths.map(|b| b.0))?;
    let d_high = local_poly_derivative(&hx, &hy, high, bandwidths.map(|b| b.1))?;

    let normal = Normal::new(0.0, 1.0).unwrap();
    let zcrit = 1.959963984540054; // two-sided 95%
    let ztest = |est: &LocalDerivEstimate| -> (f64, (f64, f64)) {
        let z = if est.std_error > 0.0 {
            est.estimate / est.std_error
        } else {
            f64::INFINITY
        };
        let p = 2.0 * (1.0 - normal.cdf(z.abs()));
        (
            p,
            (
                est.estimate - zcrit * est.std_error,
                est.estimate + zcrit * est.std_error,
            ),
        )
    };
    let (low_p, low_ci) = ztest(&d_low);
    let (high_p, high_ci) = ztest(&d_high);

    let diff = d_low.estimate - d_high.estimate;
    // Independent subpopulations: variances add.
    let diff_se = (d_low.std_error.powi(2) + d_high.std_error.powi(2)).sqrt();
    let z = if diff_se > 0.0 { diff / diff_se } else { 0.0 };
    let p_value = 2.0 * (1.0 - normal.cdf(z.abs()));

    Ok(LocalTestResult {
        low_estimate: d_low.estimate,
        low_std_error: d_low.std_error,
        low_bandwidth: d_low.bandwidth,
        low_p_value: low_p,
        low_ci95: low_ci,
        high_estimate: d_high.estimate,
        high_std_error: d_high.std_error,
        high_bandwidth: d_high.bandwidth,
        high_p_value: high_p,
        high_ci95: high_ci,
        difference: diff,
        difference_std_error: diff_se,
        p_value,
        ci95: (diff - zcrit * diff_se, diff + zcrit * diff_se),
    })
}

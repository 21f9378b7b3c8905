//! Series (global polynomial) regression with LOOCV order selection, analytic
//! derivatives, and a local-polynomial derivative estimator.
//!
//! The power basis is built on an affine rescaling of x to [-1, 1]; raw powers
//! of running variables with |x| up to 100 are too ill-conditioned.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_J_MAX: usize = 8;

/// Fitted polynomial of order J (J basis terms, powers 0..J-1) on one cell.
#[derive(Debug, Clone)]
pub struct SeriesFit {
    order: usize,
    center: f64,
    scale: f64,
    /// Coefficients in the scaled coordinate t = (x - center) / scale.
    coeffs: Vec<f64>,
    residuals: Vec<f64>,
    leverages: Vec<f64>,
    x_lo: f64,
    x_hi: f64,
}

impl SeriesFit {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn leverages(&self) -> &[f64] {
        &self.leverages
    }

    pub fn fit_region(&self) -> (f64, f64) {
        (self.x_lo, self.x_hi)
    }

    /// True when `x` lies outside the data the fit was built on.
    pub fn is_extrapolation(&self, x: f64) -> bool {
        x < self.x_lo || x > self.x_hi
    }

    /// Polynomial value at `x` in original coordinates.
    pub fn predict(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.scale;
        horner(&self.coeffs, t)
    }

    /// s-th analytic derivative at `x` in original coordinates.
    pub fn derivative(&self, x: f64, s: usize) -> Result<f64> {
        if s >= self.order {
            return Err(Error::InvalidArgument(format!(
                "derivative order {s} >= basis order J = {}",
                self.order
            )));
        }
        let mut d = self.coeffs.clone();
        for _ in 0..s {
            d = poly_derivative(&d);
        }
        let t = (x - self.center) / self.scale;
        Ok(horner(&d, t) / self.scale.powi(s as i32))
    }

    /// Leave-one-out CV criterion from residuals and leverages.
    /// Returns None when some leverage is numerically 1 (degenerate).
    pub fn loocv(&self) -> Option<f64> {
        let mut total = 0.0;
        for (e, h) in self.residuals.iter().zip(&self.leverages) {
            let denom = 1.0 - h;
            if denom < 1e-10 {
                return None;
            }
            total += (e / denom).powi(2);
        }
        Some(total / self.residuals.len() as f64)
    }
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, c)| j as f64 * c)
        .collect()
}

/// Least-squares polynomial fit of order `j` (j coefficients) via SVD.
pub fn fit_poly(xs: &[f64], ys: &[f64], j: usize) -> Result<SeriesFit> {
    let n = xs.len();
    if j < 1 {
        return Err(Error::InvalidArgument("order J must be >= 1".into()));
    }
    if n <= j {
        return Err(Error::InsufficientData(format!(
            "series fit with J = {j} needs n > J, have n = {n}"
        )));
    }
    if ys.len() != n {
        return Err(Error::InvalidArgument("x/y length mismatch".into()));
    }
    let x_lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if x_lo == x_hi && j > 1 {
        return Err(Error::Numerical(
            "all x values identical; design matrix rank deficient".into(),
        ));
    }
    let center = 0.5 * (x_lo + x_hi);
    let scale = if x_hi > x_lo { 0.5 * (x_hi - x_lo) } else { 1.0 };

    let mut design = DMatrix::zeros(n, j);
    for (i, &x) in xs.iter().enumerate() {
        let t = (x - center) / scale;
        let mut p = 1.0;
        for k in 0..j {
            design[(i, k)] = p;
            p *= t;
        }
    }
    let y = DVector::from_column_slice(ys);

    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (n.max(j) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < j {
        return Err(Error::Numerical(format!(
            "rank-deficient design matrix: rank {rank} < J = {j} with n = {n}"
        )));
    }
    let coeffs = svd
        .solve(&y, tol)
        .map_err(|e| Error::Numerical(format!("least squares solve failed: {e}")))?;

    let fitted = &design * &coeffs;
    let residuals: Vec<f64> = (0..n).map(|i| ys[i] - fitted[i]).collect();

    // Leverages h_ii from the left singular vectors of the full-rank design.
    let u = svd.u.as_ref().expect("svd computed with u");
    let leverages: Vec<f64> = (0..n)
        .map(|i| (0..j).map(|k| u[(i, k)].powi(2)).sum())
        .collect();

    Ok(SeriesFit {
        order: j,
        center,
        scale,
        coeffs: coeffs.iter().cloned().collect(),
        residuals,
        leverages,
        x_lo,
        x_hi,
    })
}

/// Picks the order minimizing CV(J) over J in 1..=j_max; ties toward smaller J.
/// Orders whose leverages degenerate (h_ii = 1) are ineligible.
pub fn loocv_select(xs: &[f64], ys: &[f64], j_max: usize) -> Result<usize> {
    if j_max < 1 {
        return Err(Error::InvalidArgument("J_max must be >= 1".into()));
    }
    if xs.len() <= j_max {
        return Err(Error::InsufficientData(format!(
            "LOOCV with J_max = {j_max} needs n > J_max, have n = {}",
            xs.len()
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for j in 1..=j_max {
        let cv = match fit_poly(xs, ys, j) {
            Ok(fit) => match fit.loocv() {
                Some(cv) => cv,
                None => continue,
            },
            Err(_) => continue,
        };
        let better = match best {
            None => true,
            Some((_, best_cv)) => cv < best_cv && (best_cv - cv) > 1e-12 * best_cv.max(1e-300),
        };
        if better {
            best = Some((j, cv));
        }
    }
    best.map(|(j, _)| j)
        .ok_or_else(|| Error::Numerical("no eligible order J in LOOCV".into()))
}

/// Convenience: select J* by LOOCV then fit it.
pub fn fit_with_loocv(xs: &[f64], ys: &[f64], j_max: usize) -> Result<SeriesFit> {
    let j = loocv_select(xs, ys, j_max)?;
    fit_poly(xs, ys, j)
}

/// First-derivative estimate from a local quadratic fit.
#[derive(Debug, Clone)]
pub struct LocalDerivEstimate {
    pub point: f64,
    pub bandwidth: f64,
    pub estimate: f64,
    /// Heteroskedasticity-robust standard error.
    pub std_error: f64,
    pub effective_n: usize,
}

/// Rule-of-thumb bandwidth in the style of Fan and Gijbels: a global quartic
/// pilot fit supplies the residual variance and the third derivative that
/// drive the asymptotic MSE of the local-quadratic slope estimator.
pub fn rule_of_thumb_bandwidth(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len();
    let x_lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = x_hi - x_lo;
    if range <= 0.0 {
        return Err(Error::Numerical("degenerate x range for bandwidth".into()));
    }
    let pilot_order = 5.min(n.saturating_sub(1)); // quartic when data allows
    let pilot = fit_poly(xs, ys, pilot_order.max(2))?;
    let sigma2 = pilot.residuals().iter().map(|e| e * e).sum::<f64>()
        / (n.saturating_sub(pilot.order())) as f64;
    let curv: f64 = if pilot.order() >= 4 {
        xs.iter()
            .map(|&x| pilot.derivative(x, 3).unwrap_or(0.0).powi(2))
            .sum()
    } else {
        0.0
    };
    let n_f = n as f64;
    let y_mean = ys.iter().sum::<f64>() / n_f;
    let var_y = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n_f;
    let h = if curv > 1e-12 && sigma2 > 1e-12 * var_y.max(1e-300) {
        // For estimating the first derivative with a local quadratic the MSE
        // rate gives h ~ (sigma^2 * range / sum m'''(x_i)^2)^(1/7).
        2.0 * (sigma2 * range / curv).powf(1.0 / 7.0)
    } else {
        // Flat pilot curvature or zero noise: fall back to a fixed share of
        // the support.
        0.25 * range
    };
    Ok(h.min(range).max(range * 1e-3))
}

/// First derivative at `point` from a local quadratic fit with a triangular
/// kernel, with a heteroskedasticity-robust (HC0 sandwich) standard error.
pub fn local_poly_derivative(
    xs: &[f64],
    ys: &[f64],
    point: f64,
    bandwidth: Option<f64>,
) -> Result<LocalDerivEstimate> {
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(h) => {
            return Err(Error::InvalidArgument(format!("bandwidth {h} must be > 0")))
        }
        None => rule_of_thumb_bandwidth(xs, ys)?,
    };

    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut lw = Vec::new();
    for (&x, &y) in xs.iter().zip(ys) {
        let u = (x - point) / h;
        if u.abs() < 1.0 {
            lx.push(x - point);
            ly.push(y);
            lw.push(1.0 - u.abs()); // triangular kernel
        }
    }
    let m = lx.len();
    if m < 20 {
        return Err(Error::InsufficientData(format!(
            "local fit at {point} has only {m} in-window observations (need >= 20)"
        )));
    }

    // Weighted least squares y ~ b0 + b1*u + b2*u^2, u = x - point.
    let k = 3;
    let mut design = DMatrix::zeros(m, k);
    let mut wy = DVector::zeros(m);
    for i in 0..m {
        let sw = lw[i].sqrt();
        design[(i, 0)] = sw;
        design[(i, 1)] = sw * lx[i];
        design[(i, 2)] = sw * lx[i] * lx[i];
        wy[i] = sw * ly[i];
    }
    let svd = design.clone().svd(true, true);
    let tol = svd.singular_values.max() * m as f64 * f64::EPSILON;
    let beta = svd
        .solve(&wy, tol)
        .map_err(|e| Error::Numerical(format!("local fit solve failed: {e}")))?;

    // Sandwich covariance in the weighted coordinates:
    // (X'X)^-1 X' diag(e^2) X (X'X)^-1 with X the sqrt-weighted design.
    let xtx = design.transpose() * &design;
    let xtx_inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular local design".into()))?;
    let resid = &wy - &design * &beta;
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..m {
        let xi = design.row(i).transpose();
        meat += &xi * xi.transpose() * resid[i] * resid[i];
    }
    let cov = &xtx_inv * meat * &xtx_inv;
    let se = cov[(1, 1)].max(0.0).sqrt();

    Ok(LocalDerivEstimate {
        point,
        bandwidth: h,
        estimate: beta[1],
        std_error: se,
        effective_n: m,
    })
}

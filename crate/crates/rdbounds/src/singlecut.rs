//! Identified intervals in single-cutoff designs: Lipschitz continuity,
//! bounded second derivative, and bounded Kolmogorov-Smirnov deviation from
//! conditional independence.

use std::collections::BTreeMap;

use crate::data::{silverman_bandwidth, ObservationTable};
use crate::error::{Error, Result};
use crate::interval::IdentifiedInterval;
use crate::regress::{fit_with_loocv, SeriesFit};

/// Lipschitz envelope: the counterfactual at `x_star` must be reachable from
/// every fitted value below the cutoff at slope at most kappa. The envelope
/// scans the fitted curve on a grid rather than raw data points (raw-point
/// envelopes are noise-dominated).
pub fn bounds_lipschitz(
    untreated: &SeriesFit,
    treated: &SeriesFit,
    c0: f64,
    x_star: f64,
    kappa: f64,
    grid_size: usize,
) -> Result<IdentifiedInterval> {
    if x_star <= c0 {
        return Err(Error::InvalidArgument(format!(
            "target x* = {x_star} must exceed the cutoff {c0}"
        )));
    }
    if kappa < 0.0 {
        return Err(Error::InvalidArgument("kappa must be >= 0".into()));
    }
    if grid_size < 2 {
        return Err(Error::InvalidArgument("grid_size must be >= 2".into()));
    }
    let grid_lo = untreated.fit_region().0;
    let grid_hi = untreated.fit_region().1.min(c0);
    if grid_lo >= grid_hi {
        return Err(Error::InsufficientData(
            "untreated fit has no support below the cutoff".into(),
        ));
    }

    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for i in 0..grid_size {
        let xt = grid_lo + (grid_hi - grid_lo) * i as f64 / (grid_size - 1) as f64;
        let m = untreated.predict(xt);
        let d = kappa * (x_star - xt);
        lower = lower.max(m - d);
        upper = upper.min(m + d);
    }
    if lower > upper {
        return Err(Error::Numerical(format!(
            "Lipschitz envelope empty: fitted untreated curve violates the kappa = {kappa} bound below the cutoff"
        )));
    }
    // theta = mu_1(x*) - mu_0(x*): subtract with endpoints swapped.
    let mu1 = treated.predict(x_star);
    Ok(IdentifiedInterval::new(
        mu1 - upper,
        mu1 - lower,
        "LIP",
        vec![kappa],
        x_star,
    ))
}

/// Bounded-second-derivative envelope anchored at the cutoff: linear
/// extrapolation from the untreated fit's left limit plus a worst-case
/// quadratic remainder.
pub fn bounds_smoothness_single(
    untreated: &SeriesFit,
    treated: &SeriesFit,
    c0: f64,
    x_star: f64,
    kappa: f64,
) -> Result<IdentifiedInterval> {
    if x_star <= c0 {
        return Err(Error::InvalidArgument(format!(
            "target x* = {x_star} must exceed the cutoff {c0}"
        )));
    }
    if kappa < 0.0 {
        return Err(Error::InvalidArgument("kappa must be >= 0".into()));
    }
    if untreated.order() < 2 {
        return Err(Error::InvalidArgument(
            "smoothness bound needs untreated fit order J* >= 2 (no slope available)".into(),
        ));
    }
    let dx = x_star - c0;
    let level = untreated.predict(c0);
    let slope = untreated.derivative(c0, 1)?;
    let center = level + slope * dx;
    let half = 0.5 * kappa * dx * dx;
    let mu1 = treated.predict(x_star);
    Ok(IdentifiedInterval::new(
        mu1 - (center + half),
        mu1 - (center - half),
        "SD1",
        vec![kappa],
        x_star,
    ))
}

/// Per-covariate-cell ingredients for the bounded-KS-deviation bounds.
#[derive(Debug, Clone)]
pub struct KsCell {
    /// Covariate values keying the cell.
    pub w: Vec<String>,
    /// Untreated outcomes (x <= c0) in the cell, sorted.
    pub y0_sorted: Vec<f64>,
    /// Share of cell observations with x <= c0.
    pub propensity: f64,
    /// Kernel weight of the cell at the target point; weights sum to 1.
    pub weight: f64,
    /// Treated outcome fit within the cell, for mu_1(x*, w).
    pub treated_fit: SeriesFit,
}

/// Empirical CDFs, propensities, and cell weights for the KS-deviation class.
#[derive(Debug, Clone)]
pub struct KsModel {
    pub cells: Vec<KsCell>,
    pub y_min: f64,
    pub y_max: f64,
    pub c0: f64,
    pub x_star: f64,
}

impl KsModel {
    /// Builds the model from the table, a user-declared outcome support, and
    /// the target point. Cell weights at x* come from a Gaussian kernel with
    /// Silverman bandwidth over the running variable.
    pub fn build(
        table: &ObservationTable,
        c0: f64,
        y_min: f64,
        y_max: f64,
        x_star: f64,
        j_max: usize,
    ) -> Result<KsModel> {
        if y_min >= y_max {
            return Err(Error::InvalidArgument(format!(
                "outcome support [{y_min}, {y_max}] must have y_min < y_max"
            )));
        }
        for (i, r) in table.rows().iter().enumerate() {
            if r.y < y_min || r.y > y_max {
                return Err(Error::InvalidArgument(format!(
                    "observed y = {} at row {} outside declared support [{y_min}, {y_max}]",
                    r.y,
                    i + 1
                )));
            }
        }
        let xs: Vec<f64> = table.rows().iter().map(|r| r.x).collect();
        let bw = silverman_bandwidth(&xs);
        if bw <= 0.0 {
            return Err(Error::Numerical("zero kernel bandwidth".into()));
        }

        let mut groups: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
        for (i, r) in table.rows().iter().enumerate() {
            groups.entry(r.w.clone()).or_default().push(i);
        }

        let mut cells = Vec::new();
        let mut total_weight = 0.0;
        for (w, idx) in groups {
            let rows = table.rows();
            let mut y0: Vec<f64> = idx
                .iter()
                .filter(|&&i| rows[i].x <= c0)
                .map(|&i| rows[i].y)
                .collect();
            let treated: Vec<usize> = idx
                .iter()
                .copied()
                .filter(|&i| rows[i].x > c0)
                .collect();
            if y0.is_empty() {
                return Err(Error::InsufficientData(format!(
                    "covariate cell {w:?} has no untreated observations"
                )));
            }
            if treated.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "covariate cell {w:?} has too few treated observations for a fit"
                )));
            }
            y0.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let propensity = y0.len() as f64 / idx.len() as f64;
            let tx: Vec<f64> = treated.iter().map(|&i| rows[i].x).collect();
            let ty: Vec<f64> = treated.iter().map(|&i| rows[i].y).collect();
            let j_cap = j_max.min(tx.len().saturating_sub(1)).max(1);
            let treated_fit = fit_with_loocv(&tx, &ty, j_cap)?;
            let weight: f64 = idx
                .iter()
                .map(|&i| (-0.5 * ((rows[i].x - x_star) / bw).powi(2)).exp())
                .sum();
            total_weight += weight;
            cells.push(KsCell {
                w,
                y0_sorted: y0,
                propensity,
                weight,
                treated_fit,
            });
        }
        if total_weight <= 0.0 {
            return Err(Error::Numerical("all kernel weights vanish at x*".into()));
        }
        for c in &mut cells {
            c.weight /= total_weight;
        }
        Ok(KsModel {
            cells,
            y_min,
            y_max,
            c0,
            x_star,
        })
    }
}

/// CDF band for F_{Y(0)|w} under a kappa-bounded KS deviation:
/// F in [a F0(y), a F0(y) + (1-P) kappa] with a = 1 + kappa (P - 1).
/// Since a + (1-P) kappa = 1 the band never escapes [0, 1]; clipping is kept
/// as a guard.
#[derive(Debug, Clone)]
pub struct KsBand<'a> {
    pub factor: f64,
    pub shift: f64,
    y0_sorted: &'a [f64],
}

impl KsBand<'_> {
    fn ecdf(&self, y: f64) -> f64 {
        let n = self.y0_sorted.len();
        let k = self.y0_sorted.partition_point(|&v| v <= y);
        k as f64 / n as f64
    }

    pub fn lower(&self, y: f64) -> f64 {
        (self.factor * self.ecdf(y)).clamp(0.0, 1.0)
    }

    pub fn upper(&self, y: f64) -> f64 {
        (self.factor * self.ecdf(y) + self.shift).clamp(0.0, 1.0)
    }
}

/// Law-of-total-probability CDF bounds for one covariate cell.
pub fn ks_cdf_bounds<'a>(cell: &'a KsCell, kappa: f64) -> Result<KsBand<'a>> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::InvalidArgument(format!(
            "kappa = {kappa} outside [0, 1]; the mixture-weight interpretation requires it"
        )));
    }
    if cell.y0_sorted.is_empty() {
        return Err(Error::InsufficientData("empty covariate cell".into()));
    }
    Ok(KsBand {
        factor: 1.0 + kappa * (cell.propensity - 1.0),
        shift: (1.0 - cell.propensity) * kappa,
        y0_sorted: &cell.y0_sorted,
    })
}

/// Mean bounds from the CDF band over the declared support:
/// E = y_min + integral of (1 - F) over [y_min, y_max], evaluated at the
/// band's lower CDF (upper mean) and upper CDF (lower mean).
pub fn ks_mean_bounds(model: &KsModel, cell: &KsCell, kappa: f64) -> Result<(f64, f64)> {
    let band = ks_cdf_bounds(cell, kappa)?;
    // Integration nodes: support endpoints plus the step locations.
    let mut nodes = vec![model.y_min];
    nodes.extend(cell.y0_sorted.iter().copied());
    nodes.push(model.y_max);
    nodes.dedup_by(|a, b| a == b);
    let mut upper_mean = model.y_min;
    let mut lower_mean = model.y_min;
    for pair in nodes.windows(2) {
        let len = pair[1] - pair[0];
        if len <= 0.0 {
            continue;
        }
        // The band is constant on [pair[0], pair[1]): evaluate at the left node.
        upper_mean += len * (1.0 - band.lower(pair[0]));
        lower_mean += len * (1.0 - band.upper(pair[0]));
    }
    Ok((lower_mean, upper_mean))
}

/// Treatment-effect bounds at x* under the KS-deviation class, aggregated
/// across covariate cells with the kernel weights:
/// theta = sum_w w-hat(x*) (mu_1(x*, w) - bound_w), endpoints swapped.
pub fn ks_tau_bounds(model: &KsModel, kappa: f64) -> Result<IdentifiedInterval> {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for cell in &model.cells {
        let (mean_lo, mean_hi) = ks_mean_bounds(model, cell, kappa)?;
        let mu1 = cell.treated_fit.predict(model.x_star);
        lo += cell.weight * (mu1 - mean_hi);
        hi += cell.weight * (mu1 - mean_lo);
    }
    Ok(IdentifiedInterval::new(lo, hi, "KS", vec![kappa], model.x_star))
}

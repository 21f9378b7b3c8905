//! Identified intervals in two-cutoff designs: the observable difference
//! curve, the bias model below the low cutoff, and the bounded-variation
//! restriction classes (absolute magnitude, relative magnitude, smoothness,
//! polynomial expansion, and intersections).

use crate::data::{DensityEstimate, DesignSpec, ObservationTable, Partition, Subpop};
use crate::error::{Error, Result};
use crate::interval::{bounds_intersect, IdentifiedInterval};
use crate::regress::{fit_with_loocv, SeriesFit};

pub const DEFAULT_GRID_SIZE: usize = 1000;

/// The three series fits a two-cutoff extrapolation needs.
///
/// The treated low-subpopulation fit uses all observations with x >= low
/// (not only x < high): the treated regime is one function over its whole
/// region. The untreated high-subpopulation fit covers all x < high and is
/// evaluated both below the low cutoff and at the target.
#[derive(Debug, Clone)]
pub struct MultiFits {
    pub low: f64,
    pub high: f64,
    /// mu_{0,low}: low subpopulation, x < low.
    pub mu0_low: SeriesFit,
    /// mu_{1,low}: low subpopulation, x >= low.
    pub mu1_low: SeriesFit,
    /// mu_{0,high}: high subpopulation, x < high.
    pub mu0_high: SeriesFit,
}

impl MultiFits {
    /// Fits each required cell with its own LOOCV-selected order.
    pub fn from_partition(
        table: &ObservationTable,
        design: &DesignSpec,
        partition: &Partition,
        j_max: usize,
    ) -> Result<MultiFits> {
        let (low, high) = match *design {
            DesignSpec::Multi { low, high, .. } => (low, high),
            DesignSpec::Single { .. } => {
                return Err(Error::Design(
                    "multi-cutoff fits require a two-cutoff design".into(),
                ))
            }
        };
        let fit_cell = |subpop: Subpop, treated: bool| -> Result<SeriesFit> {
            let key = crate::data::CellKey { subpop, treated };
            let (xs, ys) = partition.cell_xy(table, key);
            let j_cap = j_max.min(xs.len().saturating_sub(1)).max(1);
            fit_with_loocv(&xs, &ys, j_cap).map_err(|e| {
                Error::InsufficientData(format!("cell {}: {e}", key.label()))
            })
        };
        Ok(MultiFits {
            low,
            high,
            mu0_low: fit_cell(Subpop::Low, false)?,
            mu1_low: fit_cell(Subpop::Low, true)?,
            mu0_high: fit_cell(Subpop::High, false)?,
        })
    }
}

/// Estimated observable difference curve: mu_{0,low} - mu_{0,high} below the
/// low cutoff, mu_{1,low} - mu_{0,high} between the cutoffs. Above the high
/// cutoff both subpopulations are treated and the decomposition no longer
/// isolates the target effect.
pub fn estimate_gamma(fits: &MultiFits, x: f64) -> Result<f64> {
    if x >= fits.high {
        return Err(Error::InvalidArgument(format!(
            "gamma undefined at x = {x} >= high cutoff {}; extrapolation target must lie in ({}, {})",
            fits.high, fits.low, fits.high
        )));
    }
    if x <= fits.low {
        Ok(fits.mu0_low.predict(x) - fits.mu0_high.predict(x))
    } else {
        Ok(fits.mu1_low.predict(x) - fits.mu0_high.predict(x))
    }
}

/// Estimated bias function below the low cutoff with derivative suprema.
#[derive(Debug, Clone)]
pub struct BiasModel {
    low: f64,
    grid_lo: f64,
    grid_size: usize,
    /// Anchor derivatives B^(s)(low), s = 0..=p.
    anchors: Vec<f64>,
    /// Grid suprema sup |B^(s)| over [grid_lo, low], s = 0..=p.
    sups: Vec<f64>,
    /// User overrides of the suprema (imposes a constant derivative bound).
    overrides: Vec<Option<f64>>,
}

impl BiasModel {
    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn max_order(&self) -> usize {
        self.anchors.len() - 1
    }

    /// Anchor derivative B^(s)(low).
    pub fn anchor(&self, s: usize) -> Result<f64> {
        self.anchors
            .get(s)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("anchor order {s} > p")))
    }

    /// Supremum bound used for order s (override wins over the grid scan).
    pub fn sup(&self, s: usize) -> Result<f64> {
        let base = self
            .sups
            .get(s)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("supremum order {s} > p")))?;
        Ok(self.overrides[s].unwrap_or(base))
    }

    /// Grid-scan supremum before any override.
    pub fn grid_sup(&self, s: usize) -> Option<f64> {
        self.sups.get(s).copied()
    }

    /// Imposes a constant bound for the s-th derivative, replacing the
    /// estimated supremum (set to 1.0 to read kappa_s as an absolute bound).
    pub fn set_sup_override(&mut self, s: usize, value: f64) -> Result<()> {
        if s >= self.overrides.len() {
            return Err(Error::InvalidArgument(format!("override order {s} > p")));
        }
        if value < 0.0 {
            return Err(Error::InvalidArgument("supremum override must be >= 0".into()));
        }
        self.overrides[s] = Some(value);
        Ok(())
    }

    pub fn grid_range(&self) -> (f64, f64, usize) {
        (self.grid_lo, self.low, self.grid_size)
    }

    /// R-squared of a straight-line fit to B on the scan grid; a diagnostic
    /// for whether the observed bias is approximately linear.
    pub fn linear_r2(&self, fits: &MultiFits) -> Result<f64> {
        let n = self.grid_size;
        let xs: Vec<f64> = (0..n)
            .map(|i| self.grid_lo + (self.low - self.grid_lo) * i as f64 / (n - 1) as f64)
            .collect();
        let bs: Vec<f64> = xs
            .iter()
            .map(|&x| fits.mu0_low.predict(x) - fits.mu0_high.predict(x))
            .collect();
        let line = crate::regress::fit_poly(&xs, &bs, 2)?;
        let mean = bs.iter().sum::<f64>() / n as f64;
        let tss: f64 = bs.iter().map(|b| (b - mean).powi(2)).sum();
        let rss: f64 = line.residuals().iter().map(|e| e * e).sum();
        if tss <= 0.0 {
            return Ok(1.0);
        }
        Ok(1.0 - rss / tss)
    }
}

/// Builds the bias model by scanning B-hat and its analytic derivatives over
/// an even grid on the common untreated support below the low cutoff.
pub fn build_bias_model(
    fits: &MultiFits,
    p: usize,
    grid_size: usize,
) -> Result<BiasModel> {
    let j_min = fits.mu0_low.order().min(fits.mu0_high.order());
    if p >= j_min {
        return Err(Error::InvalidArgument(format!(
            "max derivative order p = {p} >= smallest untreated fit order J* = {j_min}; derivative undefined"
        )));
    }
    if grid_size < 2 {
        return Err(Error::InvalidArgument("grid_size must be >= 2".into()));
    }
    let grid_lo = fits.mu0_low.fit_region().0.max(fits.mu0_high.fit_region().0);
    let low = fits.low;
    if grid_lo >= low {
        return Err(Error::InsufficientData(
            "no common untreated support below the low cutoff".into(),
        ));
    }

    let deriv = |x: f64, s: usize| -> Result<f64> {
        Ok(fits.mu0_low.derivative(x, s)? - fits.mu0_high.derivative(x, s)?)
    };

    let mut anchors = Vec::with_capacity(p + 1);
    let mut sups = Vec::with_capacity(p + 1);
    for s in 0..=p {
        let anchor = deriv(low, s)?;
        let mut sup = 0.0f64;
        for i in 0..grid_size {
            let x = grid_lo + (low - grid_lo) * i as f64 / (grid_size - 1) as f64;
            let v = deriv(x, s)?;
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "bias derivative order {s} non-finite at x = {x}"
                )));
            }
            sup = sup.max(v.abs());
        }
        // The anchor is the grid's right endpoint; keep the invariant exact.
        sup = sup.max(anchor.abs());
        anchors.push(anchor);
        sups.push(sup);
    }

    Ok(BiasModel {
        low,
        grid_lo,
        grid_size,
        anchors,
        sups,
        overrides: vec![None; p + 1],
    })
}

/// Backward-induction envelope for the bias at `x_star` when only the s-th
/// derivative is restricted: the Taylor polynomial anchored at the low cutoff
/// plus/minus the worst-case remainder.
///
/// B(x*) in sum_{j<s} B^(j)(low) (x*-low)^j / j!  +-  kappa * sup_s / s! * (x*-low)^s
pub fn taylor_envelope(
    bias: &BiasModel,
    x_star: f64,
    s: usize,
    kappa: f64,
) -> Result<(f64, f64)> {
    if kappa < 0.0 {
        return Err(Error::InvalidArgument("kappa must be >= 0".into()));
    }
    if s > bias.max_order() {
        return Err(Error::InvalidArgument(format!(
            "envelope order {s} exceeds bias model order {}",
            bias.max_order()
        )));
    }
    let dx = x_star - bias.low;
    let mut center = 0.0;
    let mut fact = 1.0;
    for j in 0..s {
        if j > 0 {
            fact *= j as f64;
        }
        center += bias.anchor(j)? * dx.powi(j as i32) / fact;
    }
    let s_fact = (1..=s).map(|k| k as f64).product::<f64>();
    let half = kappa * bias.sup(s)? / s_fact * dx.powi(s as i32);
    Ok((center - half, center + half))
}

fn theta_from_bias_envelope(
    gamma: f64,
    env: (f64, f64),
    label: &str,
    kappa: Vec<f64>,
    x_star: f64,
) -> IdentifiedInterval {
    // theta = gamma(x*) - B(x*): endpoints swap.
    IdentifiedInterval::new(gamma - env.1, gamma - env.0, label, kappa, x_star)
}

fn check_target(fits: &MultiFits, x_star: f64) -> Result<()> {
    if x_star <= fits.low || x_star >= fits.high {
        return Err(Error::InvalidArgument(format!(
            "target x* = {x_star} must lie strictly inside ({}, {})",
            fits.low, fits.high
        )));
    }
    Ok(())
}

/// Bounded absolute magnitude: |B(x)| <= kappa * sup|B| below the low cutoff.
pub fn bounds_bam(
    fits: &MultiFits,
    bias: &BiasModel,
    x_star: f64,
    kappa: f64,
) -> Result<IdentifiedInterval> {
    check_target(fits, x_star)?;
    let gamma = estimate_gamma(fits, x_star)?;
    let env = taylor_envelope(bias, x_star, 0, kappa)?;
    Ok(theta_from_bias_envelope(gamma, env, "BAM", vec![kappa], x_star))
}

/// Bounded relative magnitude: |B'(x)| <= kappa * sup|B'| below the low cutoff.
pub fn bounds_brm(
    fits: &MultiFits,
    bias: &BiasModel,
    x_star: f64,
    kappa: f64,
) -> Result<IdentifiedInterval> {
    check_target(fits, x_star)?;
    let gamma = estimate_gamma(fits, x_star)?;
    let env = taylor_envelope(bias, x_star, 1, kappa)?;
    Ok(theta_from_bias_envelope(gamma, env, "BRM", vec![kappa], x_star))
}

/// Smoothness: |B''(x)| <= kappa * sup|B''| below the low cutoff.
pub fn bounds_sd(
    fits: &MultiFits,
    bias: &BiasModel,
    x_star: f64,
    kappa: f64,
) -> Result<IdentifiedInterval> {
    check_target(fits, x_star)?;
    let gamma = estimate_gamma(fits, x_star)?;
    let env = taylor_envelope(bias, x_star, 2, kappa)?;
    Ok(theta_from_bias_envelope(gamma, env, "SD", vec![kappa], x_star))
}

/// Bounded polynomial expansion: every derivative order s = 0..=p restricted
/// at its own kappa_s; the identified set is the intersection across orders.
/// An empty intersection is reported, never clipped.
pub fn bounds_bpe(
    fits: &MultiFits,
    bias: &BiasModel,
    x_star: f64,
    kappas: &[f64],
) -> Result<IdentifiedInterval> {
    check_target(fits, x_star)?;
    if kappas.is_empty() {
        return Err(Error::InvalidArgument("BPE needs at least kappa_0".into()));
    }
    let p = kappas.len() - 1;
    if p > bias.max_order() {
        return Err(Error::InvalidArgument(format!(
            "BPE order p = {p} exceeds bias model order {}",
            bias.max_order()
        )));
    }
    let gamma = estimate_gamma(fits, x_star)?;
    let mut parts = Vec::with_capacity(p + 1);
    for (s, &k) in kappas.iter().enumerate() {
        let env = taylor_envelope(bias, x_star, s, k)?;
        parts.push(theta_from_bias_envelope(
            gamma,
            env,
            &format!("BPE[s={s}]"),
            vec![k],
            x_star,
        ));
    }
    let mut out = bounds_intersect(&parts)?;
    out.restriction = if out.empty {
        format!("BPE(p={p}) [{}]", out.restriction)
    } else {
        format!("BPE(p={p})")
    };
    out.kappa = kappas.to_vec();
    Ok(out)
}

/// Constant-bias point estimate: gamma(x*) - B(low).
pub fn point_estimate_constant_bias(
    fits: &MultiFits,
    bias: &BiasModel,
    x_star: f64,
) -> Result<f64> {
    check_target(fits, x_star)?;
    Ok(estimate_gamma(fits, x_star)? - bias.anchor(0)?)
}

/// Conservative outer interval for the averaged target: integrates pointwise
/// lower and upper bounds against the (renormalized) density over the grid.
pub fn aggregate_bounds(
    grid: &[f64],
    pointwise: &[IdentifiedInterval],
    density: &DensityEstimate,
) -> Result<IdentifiedInterval> {
    if grid.len() != pointwise.len() || grid.is_empty() {
        return Err(Error::InvalidArgument(
            "grid and pointwise bounds must be nonempty and aligned".into(),
        ));
    }
    if let Some(bad) = pointwise.iter().find(|iv| iv.empty) {
        let mut out = bad.clone();
        out.restriction = format!("aggregate[{}]", bad.restriction);
        out.x_star = None;
        out.outer_region = true;
        return Ok(out);
    }
    let label = format!("aggregate[{}]", pointwise[0].restriction);
    let kappa = pointwise[0].kappa.clone();
    if grid.len() == 1 {
        // Degenerate [a, a]: the average is the pointwise interval.
        let mut out = pointwise[0].clone();
        out.restriction = label;
        out.x_star = None;
        out.outer_region = true;
        return Ok(out);
    }
    let w: Vec<f64> = grid.iter().map(|&x| density.at(x)).collect();
    let mass = crate::data::trapezoid(grid, &w);
    if mass <= 0.0 {
        return Err(Error::Numerical("density has zero mass over target grid".into()));
    }
    let lo_vals: Vec<f64> = pointwise
        .iter()
        .zip(&w)
        .map(|(iv, wi)| iv.lower * wi / mass)
        .collect();
    let hi_vals: Vec<f64> = pointwise
        .iter()
        .zip(&w)
        .map(|(iv, wi)| iv.upper * wi / mass)
        .collect();
    let mut out = IdentifiedInterval::new(
        crate::data::trapezoid(grid, &lo_vals),
        crate::data::trapezoid(grid, &hi_vals),
        &label,
        kappa,
        f64::NAN,
    );
    out.x_star = None;
    out.outer_region = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition, ObservationTable, Observation};
    use crate::simgen;
    use approx::assert_relative_eq;

    /// Noiseless population-scale draw from the simulation design: fitting
    /// an exact cubic recovers the true mean functions to machine precision.
    fn population_fits() -> (MultiFits, BiasModel) {
        let n = 4000;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let x = 100.0 * i as f64 / (n - 1) as f64;
            for &(c, subl) in &[(33.0f64, true), (66.0f64, false)] {
                let d = if x >= c { 1 } else { 0 };
                let y = if subl {
                    simgen::true_mu(d, simgen::Cutoff::Low, x)
                } else {
                    simgen::true_mu(d, simgen::Cutoff::High, x)
                };
                rows.push(Observation {
                    y,
                    x,
                    c,
                    w: vec![],
                });
            }
        }
        let table = ObservationTable::new(rows, vec![]).unwrap();
        let design = table.design().unwrap();
        let part = partition(&table, &design).unwrap();
        let fits = MultiFits::from_partition(&table, &design, &part, 8).unwrap();
        let bias = build_bias_model(&fits, 2, 1000).unwrap();
        (fits, bias)
    }

    #[test]
    fn gamma_population_values() {
        let (fits, _) = population_fits();
        assert_relative_eq!(estimate_gamma(&fits, 50.0).unwrap(), -500.0, epsilon = 0.05);
        assert_relative_eq!(estimate_gamma(&fits, 0.0).unwrap(), -975.0, epsilon = 0.05);
        assert!(estimate_gamma(&fits, 66.0).is_err());
    }

    #[test]
    fn bias_model_population_suprema() {
        let (_, bias) = population_fits();
        assert_relative_eq!(bias.sup(0).unwrap(), 999.0174, epsilon = 0.05);
        assert_relative_eq!(bias.sup(1).unwrap(), 1.5, epsilon = 0.01);
        assert_relative_eq!(bias.sup(2).unwrap(), 0.06, epsilon = 0.001);
        // Anchor is in the grid, so the supremum dominates it.
        for s in 0..=2 {
            assert!(bias.sup(s).unwrap() >= bias.anchor(s).unwrap().abs());
        }
    }

    #[test]
    fn bias_model_grid_refinement_stable() {
        let (fits, bias) = population_fits();
        let fine = build_bias_model(&fits, 2, 2000).unwrap();
        for s in 0..=2 {
            let a = bias.sup(s).unwrap();
            let b = fine.sup(s).unwrap();
            assert!((a - b).abs() / b.abs().max(1e-12) < 1e-3, "order {s}: {a} vs {b}");
        }
    }

    #[test]
    fn constant_bias_data_has_zero_slope_sup() {
        // Two parallel noiseless lines offset by -5; jump +7 for treatment.
        let mut rows = Vec::new();
        for i in 0..200 {
            let x = i as f64 / 2.0; // [0, 99.5]
            let base = 2.0 * x + 1.0;
            rows.push(Observation {
                y: base + if x >= 33.0 { 7.0 } else { 0.0 },
                x,
                c: 33.0,
                w: vec![],
            });
            rows.push(Observation {
                y: base + 5.0 + if x >= 66.0 { 7.0 } else { 0.0 },
                x,
                c: 66.0,
                w: vec![],
            });
        }
        let table = ObservationTable::new(rows, vec![]).unwrap();
        let design = table.design().unwrap();
        let part = partition(&table, &design).unwrap();
        let fits = MultiFits::from_partition(&table, &design, &part, 6).unwrap();
        let bias = build_bias_model(&fits, 1, 500).unwrap();
        assert!(bias.sup(1).unwrap() < 1e-6);
        assert_relative_eq!(bias.sup(0).unwrap(), 5.0, epsilon = 1e-6);
        // Constant bias holds exactly: point estimate recovers the jump.
        let pe = point_estimate_constant_bias(&fits, &bias, 50.0).unwrap();
        assert_relative_eq!(pe, 7.0, epsilon = 1e-6);
    }

    #[test]
    fn taylor_envelope_population() {
        let (_, bias) = population_fits();
        let (l0, u0) = taylor_envelope(&bias, 50.0, 0, 1.0).unwrap();
        assert_relative_eq!(l0, -999.02, epsilon = 0.05);
        assert_relative_eq!(u0, 999.02, epsilon = 0.05);
        let (l1, u1) = taylor_envelope(&bias, 50.0, 1, 1.0).unwrap();
        assert_relative_eq!(l1, -1024.52, epsilon = 0.05);
        assert_relative_eq!(u1, -973.52, epsilon = 0.05);
        assert!(l1 <= -1000.0 && -1000.0 <= u1, "must contain true B(50)");
        let (l2, u2) = taylor_envelope(&bias, 50.0, 2, 1.0).unwrap();
        assert_relative_eq!(l2, -1010.64, epsilon = 0.05);
        assert_relative_eq!(u2, -993.30, epsilon = 0.05);
    }

    #[test]
    fn bam_brm_sd_population_intervals() {
        let (fits, bias) = population_fits();
        let bam = bounds_bam(&fits, &bias, 50.0, 1.0).unwrap();
        assert_relative_eq!(bam.lower, -1499.02, epsilon = 0.1);
        assert_relative_eq!(bam.upper, 499.02, epsilon = 0.1);
        assert!(bam.contains(0.0));

        let brm1 = bounds_brm(&fits, &bias, 50.0, 1.0).unwrap();
        assert_relative_eq!(brm1.lower, 473.52, epsilon = 0.1);
        assert_relative_eq!(brm1.upper, 524.52, epsilon = 0.1);
        assert!(brm1.lower > 0.0 && brm1.contains(500.0));

        let brm3 = bounds_brm(&fits, &bias, 50.0, 3.0).unwrap();
        assert_relative_eq!(brm3.lower, 422.52, epsilon = 0.2);
        assert_relative_eq!(brm3.upper, 575.52, epsilon = 0.2);
        assert!(brm3.lower > 0.0);

        let sd = bounds_sd(&fits, &bias, 50.0, 1.0).unwrap();
        assert_relative_eq!(sd.lower, 493.30, epsilon = 0.1);
        assert_relative_eq!(sd.upper, 510.64, epsilon = 0.1);
        assert!(sd.contains(500.0));
    }

    #[test]
    fn bam_kappa_zero_degenerates_to_gamma() {
        let (fits, bias) = population_fits();
        let iv = bounds_bam(&fits, &bias, 50.0, 0.0).unwrap();
        let g = estimate_gamma(&fits, 50.0).unwrap();
        assert_eq!(iv.lower, iv.upper);
        assert_relative_eq!(iv.lower, g, epsilon = 1e-12);
    }

    #[test]
    fn brm_kappa_zero_equals_constant_bias_point() {
        let (fits, bias) = population_fits();
        let iv = bounds_brm(&fits, &bias, 50.0, 0.0).unwrap();
        let pe = point_estimate_constant_bias(&fits, &bias, 50.0).unwrap();
        assert_eq!(iv.lower, iv.upper);
        assert_eq!(iv.lower, pe);
        assert_relative_eq!(pe, 499.02, epsilon = 0.1);
    }

    #[test]
    fn bpe_ones_equals_intersection_of_orders() {
        let (fits, bias) = population_fits();
        let bpe = bounds_bpe(&fits, &bias, 50.0, &[1.0, 1.0]).unwrap();
        let bam = bounds_bam(&fits, &bias, 50.0, 1.0).unwrap();
        let brm = bounds_brm(&fits, &bias, 50.0, 1.0).unwrap();
        let ib = bounds_intersect(&[bam, brm]).unwrap();
        assert_eq!(bpe.lower, ib.lower);
        assert_eq!(bpe.upper, ib.upper);
        assert_relative_eq!(bpe.lower, 473.52, epsilon = 0.1);
        assert_relative_eq!(bpe.upper, 499.02, epsilon = 0.1);
    }

    #[test]
    fn bpe_zero_kappas_is_constant_bias_point() {
        let (fits, bias) = population_fits();
        let bpe = bounds_bpe(&fits, &bias, 50.0, &[0.0, 0.0]).unwrap();
        // kappa_0 = 0 pins B(x*) = 0 while kappa_1 = 0 pins B(x*) = B(low);
        // those disagree here, so the set is empty -- reported, not clipped.
        assert!(bpe.empty);
        let pe = point_estimate_constant_bias(&fits, &bias, 50.0).unwrap();
        // With only s = 1 restricted, kappa = 0 gives the point estimate.
        let brm0 = bounds_brm(&fits, &bias, 50.0, 0.0).unwrap();
        assert_eq!(brm0.lower, pe);
    }

    #[test]
    fn nesting_in_kappa() {
        let (fits, bias) = population_fits();
        let kappas = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0];
        for pair in kappas.windows(2) {
            for f in [bounds_bam, bounds_brm, bounds_sd] {
                let a = f(&fits, &bias, 50.0, pair[0]).unwrap();
                let b = f(&fits, &bias, 50.0, pair[1]).unwrap();
                assert!(a.is_subset_of(&b));
            }
        }
    }

    #[test]
    fn widths_linear_in_kappa() {
        let (fits, bias) = population_fits();
        let w1 = bounds_bam(&fits, &bias, 50.0, 1.0).unwrap().width();
        let w2 = bounds_bam(&fits, &bias, 50.0, 2.0).unwrap().width();
        assert_relative_eq!(w2, 2.0 * w1, max_relative = 1e-10);
        assert_relative_eq!(w1, 2.0 * bias.sup(0).unwrap(), max_relative = 1e-10);
        let b1 = bounds_brm(&fits, &bias, 50.0, 1.0).unwrap().width();
        let b3 = bounds_brm(&fits, &bias, 50.0, 3.0).unwrap().width();
        assert_relative_eq!(b3, 3.0 * b1, max_relative = 1e-10);
        assert_relative_eq!(
            b1,
            2.0 * bias.sup(1).unwrap() * (50.0 - 33.0),
            max_relative = 1e-10
        );
    }

    #[test]
    fn sup_override_applies() {
        let (fits, mut bias) = population_fits();
        bias.set_sup_override(1, 1.0).unwrap();
        let iv = bounds_brm(&fits, &bias, 50.0, 2.0).unwrap();
        assert_relative_eq!(iv.width(), 2.0 * 2.0 * 17.0, max_relative = 1e-10);
    }

    #[test]
    fn aggregate_constant_bounds_passthrough() {
        let (fits, bias) = population_fits();
        let grid: Vec<f64> = (0..101).map(|i| 40.0 + 20.0 * i as f64 / 100.0).collect();
        // Flat density over [40, 60].
        let density = DensityEstimate {
            grid: grid.clone(),
            density: vec![1.0 / 20.0; grid.len()],
        };
        let ivs: Vec<IdentifiedInterval> = grid
            .iter()
            .map(|_| bounds_bam(&fits, &bias, 50.0, 1.0).unwrap())
            .collect();
        let agg = aggregate_bounds(&grid, &ivs, &density).unwrap();
        assert_relative_eq!(agg.lower, ivs[0].lower, max_relative = 1e-9);
        assert_relative_eq!(agg.upper, ivs[0].upper, max_relative = 1e-9);
        assert!(agg.outer_region);
    }

    #[test]
    fn aggregate_matches_numeric_integration_oracle() {
        let (fits, bias) = population_fits();
        let grid: Vec<f64> = (0..201).map(|i| 40.0 + 20.0 * i as f64 / 200.0).collect();
        let density = DensityEstimate {
            grid: grid.clone(),
            density: vec![1.0 / 20.0; grid.len()],
        };
        let ivs: Vec<IdentifiedInterval> = grid
            .iter()
            .map(|&x| bounds_brm(&fits, &bias, x, 1.0).unwrap())
            .collect();
        let agg = aggregate_bounds(&grid, &ivs, &density).unwrap();
        // Independent trapezoid oracle over the same pointwise bounds.
        let mut lo = 0.0;
        let mut hi = 0.0;
        for k in 1..grid.len() {
            let dx = grid[k] - grid[k - 1];
            lo += 0.5 * (ivs[k - 1].lower + ivs[k].lower) * dx / 20.0;
            hi += 0.5 * (ivs[k - 1].upper + ivs[k].upper) * dx / 20.0;
        }
        assert_relative_eq!(agg.lower, lo, max_relative = 1e-9);
        assert_relative_eq!(agg.upper, hi, max_relative = 1e-9);
        assert!(agg.lower <= 500.0 && 500.0 <= agg.upper);
    }

    #[test]
    fn aggregate_degenerate_interval_is_pointwise() {
        let (fits, bias) = population_fits();
        let iv = bounds_brm(&fits, &bias, 50.0, 1.0).unwrap();
        let density = DensityEstimate {
            grid: vec![40.0, 60.0],
            density: vec![0.05, 0.05],
        };
        let agg = aggregate_bounds(&[50.0], &[iv.clone()], &density).unwrap();
        assert_eq!(agg.lower, iv.lower);
        assert_eq!(agg.upper, iv.upper);
    }
}

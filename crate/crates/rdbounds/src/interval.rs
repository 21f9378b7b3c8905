//! Identified intervals and their intersection algebra.

use serde::Serialize;

use crate::error::{Error, Result};

/// A partially identified set for the treatment effect: either an interval
/// `[lower, upper]` or empty (only producible by intersection).
#[derive(Debug, Clone, Serialize)]
pub struct IdentifiedInterval {
    pub lower: f64,
    pub upper: f64,
    pub empty: bool,
    /// Restriction class that produced the interval (diagnostic only).
    pub restriction: String,
    pub kappa: Vec<f64>,
    /// Extrapolation point; None for averaged (outer-region) intervals.
    pub x_star: Option<f64>,
    /// Set when the interval is a conservative outer region (averaged target).
    pub outer_region: bool,
}

impl IdentifiedInterval {
    pub fn new(lower: f64, upper: f64, restriction: &str, kappa: Vec<f64>, x_star: f64) -> Self {
        debug_assert!(lower <= upper, "non-empty interval must have lower <= upper");
        IdentifiedInterval {
            lower,
            upper,
            empty: false,
            restriction: restriction.to_string(),
            kappa,
            x_star: Some(x_star),
            outer_region: false,
        }
    }

    pub fn empty_at(restriction: &str, kappa: Vec<f64>, x_star: f64) -> Self {
        IdentifiedInterval {
            lower: f64::NAN,
            upper: f64::NAN,
            empty: true,
            restriction: restriction.to_string(),
            kappa,
            x_star: Some(x_star),
            outer_region: false,
        }
    }

    pub fn width(&self) -> f64 {
        if self.empty {
            0.0
        } else {
            self.upper - self.lower
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        !self.empty && self.lower <= v && v <= self.upper
    }

    /// Set containment (empty set is a subset of everything).
    pub fn is_subset_of(&self, other: &IdentifiedInterval) -> bool {
        self.empty || (!other.empty && other.lower <= self.lower && self.upper <= other.upper)
    }
}

/// Intersection of identified intervals for the same target. `[max of
/// lowers, min of uppers]`, flagged empty when they do not overlap. Mixed
/// targets are an error.
pub fn bounds_intersect(intervals: &[IdentifiedInterval]) -> Result<IdentifiedInterval> {
    let first = intervals
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty interval list".into()))?;
    let x_star = first.x_star;
    let mut members = Vec::new();
    let mut kappas = Vec::new();
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    let mut any_empty = false;
    let mut binding_lower = first.restriction.clone();
    let mut binding_upper = first.restriction.clone();
    for iv in intervals {
        if iv.x_star != x_star {
            return Err(Error::InvalidArgument(format!(
                "cannot intersect intervals at mixed targets {:?} and {:?}",
                x_star, iv.x_star
            )));
        }
        members.push(iv.restriction.clone());
        kappas.extend(iv.kappa.iter().cloned());
        if iv.empty {
            any_empty = true;
            continue;
        }
        if iv.lower > lower {
            lower = iv.lower;
            binding_lower = iv.restriction.clone();
        }
        if iv.upper < upper {
            upper = iv.upper;
            binding_upper = iv.restriction.clone();
        }
    }
    let label = format!("IB({})", members.join(","));
    if any_empty || lower > upper {
        let mut out = IdentifiedInterval {
            lower: f64::NAN,
            upper: f64::NAN,
            empty: true,
            restriction: format!("{label}; binding pair: {binding_lower} vs {binding_upper}"),
            kappa: kappas,
            x_star,
            outer_region: false,
        };
        out.outer_region = intervals.iter().any(|i| i.outer_region);
        return Ok(out);
    }
    Ok(IdentifiedInterval {
        lower,
        upper,
        empty: false,
        restriction: label,
        kappa: kappas,
        x_star,
        outer_region: intervals.iter().any(|i| i.outer_region),
    })
}

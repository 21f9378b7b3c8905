//! Reference two-cutoff simulation design with analytic oracles.
//!
//! Running variable Uniform[0, 100]; cutoffs {33, 66}; cubic mean functions
//! with standard-normal noise on the unit scale, everything multiplied by
//! 100. The RNG is ChaCha8 seeded explicitly, so generation is reproducible
//! across runs and platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Observation, ObservationTable};
use crate::error::{Error, Result};

pub const LOW_CUTOFF: f64 = 33.0;
pub const HIGH_CUTOFF: f64 = 66.0;
const SCALE: f64 = 100.0;

/// Which cutoff a unit faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cutoff {
    Low,
    High,
}

/// Generator parameters. The mean-function constants are fixed; this type
/// reproduces one specific design.
#[derive(Debug, Clone, Copy)]
pub struct DgpSpec {
    pub n: usize,
    pub seed: u64,
}

/// True conditional mean of the potential outcome: d selects the treatment
/// arm, c the subpopulation.
pub fn true_mu(d: u8, c: Cutoff, x: f64) -> f64 {
    let t = x / SCALE - 0.5;
    let (base, cubic, jump) = match c {
        Cutoff::Low => (10.0, 18.0, 5.0),
        Cutoff::High => (20.0, 20.0, 3.0),
    };
    SCALE * (base + cubic * t.powi(3) + 0.6 * t + if d == 1 { jump } else { 0.0 })
}

/// True bias: difference of the untreated means across subpopulations,
/// 100 (-10 - 2 (x/100 - 0.5)^3).
pub fn true_bias(x: f64) -> f64 {
    true_mu(0, Cutoff::Low, x) - true_mu(0, Cutoff::High, x)
}

/// True treatment effect for the low subpopulation: constant 500.
pub fn true_tau_ell(_x: f64) -> f64 {
    SCALE * 5.0
}

/// Draws `spec.n` observations. The first half of the draws faces the low
/// cutoff, the rest the high cutoff, so per-cutoff counts are exact.
pub fn generate(spec: &DgpSpec) -> Result<ObservationTable> {
    if spec.n < 2 {
        return Err(Error::InvalidArgument(format!(
            "n = {} too small; need at least 2 draws",
            spec.n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let x: f64 = rng.gen::<f64>() * SCALE;
        let (c, cutoff) = if i < spec.n / 2 {
            (LOW_CUTOFF, Cutoff::Low)
        } else {
            (HIGH_CUTOFF, Cutoff::High)
        };
        let d = u8::from(x >= c);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let y = true_mu(d, cutoff, x) + SCALE * eps;
        rows.push(Observation {
            y,
            x,
            c,
            w: vec![],
        });
    }
    ObservationTable::new(rows, vec![])
}

//! Observational RD data: loading, validation, partitioning, and density
//! estimation. Treatment status is always derived from the sharp rule
//! `d = 1{x >= c}`, never read from file.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One row of an RD data set. Covariates are kept as strings; only discrete
/// covariates (integers or short labels) are supported.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub x: f64,
    pub c: f64,
    pub w: Vec<String>,
}

impl Observation {
    /// Sharp treatment rule.
    pub fn d(&self) -> bool {
        self.x >= self.c
    }
}

/// Immutable table of observations with named covariate columns.
#[derive(Debug, Clone)]
pub struct ObservationTable {
    rows: Vec<Observation>,
    covariate_names: Vec<String>,
}

/// Single- vs. two-cutoff design, with the observed running-variable support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesignSpec {
    Single { c0: f64, x_min: f64, x_max: f64 },
    Multi { low: f64, high: f64, x_min: f64, x_max: f64 },
}

impl DesignSpec {
    pub fn x_min(&self) -> f64 {
        match *self {
            DesignSpec::Single { x_min, .. } | DesignSpec::Multi { x_min, .. } => x_min,
        }
    }

    pub fn x_max(&self) -> f64 {
        match *self {
            DesignSpec::Single { x_max, .. } | DesignSpec::Multi { x_max, .. } => x_max,
        }
    }
}

/// What to extrapolate: the effect at a point, or the average over a range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetSpec {
    Point { x_star: f64 },
    Average { a: f64, b: f64 },
}

impl TargetSpec {
    /// Checks the target lies strictly inside the extrapolation region:
    /// `(c0, x_max]` for single designs, `(low, high)` for multi designs.
    pub fn validate(&self, design: &DesignSpec) -> Result<()> {
        let (lo, hi, hi_closed) = match *design {
            DesignSpec::Single { c0, x_max, .. } => (c0, x_max, true),
            DesignSpec::Multi { low, high, .. } => (low, high, false),
        };
        let check = |v: f64| -> Result<()> {
            let inside = v > lo && if hi_closed { v <= hi } else { v < hi };
            if inside {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "target {v} outside extrapolation region ({lo}, {hi}{}",
                    if hi_closed { "]" } else { ")" }
                )))
            }
        };
        match *self {
            TargetSpec::Point { x_star } => check(x_star),
            TargetSpec::Average { a, b } => {
                if a > b {
                    return Err(Error::InvalidArgument(format!(
                        "average target has a = {a} > b = {b}"
                    )));
                }
                check(a)?;
                check(b)
            }
        }
    }
}

impl ObservationTable {
    pub fn new(rows: Vec<Observation>, covariate_names: Vec<String>) -> Result<Self> {
        let table = ObservationTable {
            rows,
            covariate_names,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::InsufficientData("table has no rows".into()));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if !r.y.is_finite() || !r.x.is_finite() || !r.c.is_finite() {
                return Err(Error::Csv {
                    line: i + 2,
                    msg: "non-finite value".into(),
                });
            }
            if r.w.len() != self.covariate_names.len() {
                return Err(Error::Csv {
                    line: i + 2,
                    msg: "covariate count mismatch".into(),
                });
            }
        }
        self.cutoffs().map(|_| ())
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Distinct cutoff values, sorted. Errors if there are more than two.
    pub fn cutoffs(&self) -> Result<Vec<f64>> {
        let mut cs: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !cs.iter().any(|&c| c == r.c) {
                cs.push(r.c);
            }
        }
        cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if cs.len() > 2 {
            return Err(Error::Design(format!(
                "{} distinct cutoffs found; only 1 (single) or 2 (multi) supported",
                cs.len()
            )));
        }
        Ok(cs)
    }

    /// Derives the design from the distinct cutoffs and observed support.
    pub fn design(&self) -> Result<DesignSpec> {
        let cs = self.cutoffs()?;
        let x_min = self.rows.iter().map(|r| r.x).fold(f64::INFINITY, f64::min);
        let x_max = self
            .rows
            .iter()
            .map(|r| r.x)
            .fold(f64::NEG_INFINITY, f64::max);
        match cs.as_slice() {
            [c0] => Ok(DesignSpec::Single {
                c0: *c0,
                x_min,
                x_max,
            }),
            [low, high] => {
                if low >= high {
                    return Err(Error::Design("cutoffs not strictly ordered".into()));
                }
                Ok(DesignSpec::Multi {
                    low: *low,
                    high: *high,
                    x_min,
                    x_max,
                })
            }
            _ => unreachable!("cutoffs() enforces cardinality"),
        }
    }

    /// Writes the table in the standard `y,x,c[,w...]` schema.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let mut header = vec!["y".to_string(), "x".to_string(), "c".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        writeln!(f, "{}", header.join(","))?;
        for r in &self.rows {
            let mut fields = vec![fmt_num(r.y), fmt_num(r.x), fmt_num(r.c)];
            fields.extend(r.w.iter().cloned());
            writeln!(f, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

fn fmt_num(v: f64) -> String {
    // Rust's shortest float formatting round-trips f64 exactly.
    format!("{v}")
}

/// Loads the standard CSV schema `y,x,c[,w1,...]`. Lines starting with `#`
/// are ignored. The covariate columns to keep are named explicitly; columns
/// not listed are dropped.
pub fn load_csv(path: &Path, covariate_columns: &[String]) -> Result<ObservationTable> {
    let content = std::fs::read_to_string(path)?;
    load_csv_str(&content, covariate_columns)
}

pub fn load_csv_str(content: &str, covariate_columns: &[String]) -> Result<ObservationTable> {
    let mut lines = content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#') && !l.trim().is_empty());

    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::Csv {
            line: 1,
            msg: "empty file".into(),
        })?;
    let cols: Vec<&str> = header.split(',').map(|s| s.trim()).collect();
    let find = |name: &str| -> Result<usize> {
        cols.iter().position(|&c| c == name).ok_or_else(|| Error::Csv {
            line: hline + 1,
            msg: format!("header missing required column `{name}`"),
        })
    };
    let iy = find("y")?;
    let ix = find("x")?;
    let ic = find("c")?;
    let iw: Vec<usize> = covariate_columns
        .iter()
        .map(|n| find(n))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        if fields.len() != cols.len() {
            return Err(Error::Csv {
                line: lineno + 1,
                msg: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let parse = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = fields[i].parse().map_err(|_| Error::Csv {
                line: lineno + 1,
                msg: format!("cannot parse `{}` as number for column {name}", fields[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    line: lineno + 1,
                    msg: format!("non-finite value for column {name}"),
                });
            }
            Ok(v)
        };
        rows.push(Observation {
            y: parse(iy, "y")?,
            x: parse(ix, "x")?,
            c: parse(ic, "c")?,
            w: iw.iter().map(|&i| fields[i].to_string()).collect(),
        });
    }
    ObservationTable::new(rows, covariate_columns.to_vec())
}

/// Which subpopulation a partition cell belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subpop {
    /// The only subpopulation of a single-cutoff design.
    Single,
    /// Units facing the low cutoff in a multi design.
    Low,
    /// Units facing the high cutoff in a multi design.
    High,
}

/// Partition cell: subpopulation crossed with treatment side of its own cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellKey {
    pub subpop: Subpop,
    pub treated: bool,
}

impl CellKey {
    pub fn label(&self) -> String {
        let pop = match self.subpop {
            Subpop::Single => "single",
            Subpop::Low => "low",
            Subpop::High => "high",
        };
        format!(
            "({pop}-subpop, {})",
            if self.treated { "treated" } else { "untreated" }
        )
    }
}

/// Disjoint, exhaustive partition of the table by cell; holds row indices.
#[derive(Debug, Clone)]
pub struct Partition {
    cells: HashMap<CellKey, Vec<usize>>,
    pub warnings: Vec<String>,
}

impl Partition {
    pub fn indices(&self, key: CellKey) -> &[usize] {
        self.cells.get(&key).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// (x, y) vectors for a cell, in table order.
    pub fn cell_xy(&self, table: &ObservationTable, key: CellKey) -> (Vec<f64>, Vec<f64>) {
        let idx = self.indices(key);
        let xs = idx.iter().map(|&i| table.rows()[i].x).collect();
        let ys = idx.iter().map(|&i| table.rows()[i].y).collect();
        (xs, ys)
    }

    pub fn keys(&self) -> impl Iterator<Item = &CellKey> {
        self.cells.keys()
    }
}

/// Splits the table into the design's cells. Multi designs yield four cells
/// (each subpopulation on each side of its own cutoff), single designs two.
/// Empty required cells are errors; one-observation cells only warn.
pub fn partition(table: &ObservationTable, design: &DesignSpec) -> Result<Partition> {
    let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
    let keys: Vec<CellKey> = match design {
        DesignSpec::Single { .. } => vec![
            CellKey {
                subpop: Subpop::Single,
                treated: false,
            },
            CellKey {
                subpop: Subpop::Single,
                treated: true,
            },
        ],
        DesignSpec::Multi { .. } => vec![
            CellKey {
                subpop: Subpop::Low,
                treated: false,
            },
            CellKey {
                subpop: Subpop::Low,
                treated: true,
            },
            CellKey {
                subpop: Subpop::High,
                treated: false,
            },
            CellKey {
                subpop: Subpop::High,
                treated: true,
            },
        ],
    };
    for k in &keys {
        cells.insert(*k, Vec::new());
    }

    for (i, r) in table.rows().iter().enumerate() {
        let subpop = match design {
            DesignSpec::Single { .. } => Subpop::Single,
            DesignSpec::Multi { low, .. } => {
                if r.c == *low {
                    Subpop::Low
                } else {
                    Subpop::High
                }
            }
        };
        let key = CellKey {
            subpop,
            treated: r.d(),
        };
        cells.get_mut(&key).unwrap().push(i);
    }

    let mut warnings = Vec::new();
    for k in &keys {
        match cells[k].len() {
            0 => {
                return Err(Error::InsufficientData(format!(
                    "partition cell {} is empty",
                    k.label()
                )))
            }
            1 => warnings.push(format!(
                "partition cell {} has a single observation; insufficient for a fit",
                k.label()
            )),
            _ => {}
        }
    }

    Ok(Partition { cells, warnings })
}

/// Kernel density of the running variable on an even grid.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl DensityEstimate {
    /// Trapezoid integral of the density over its grid.
    pub fn total_mass(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Restriction to `[a, b]`, renormalized to integrate to one.
    pub fn restrict(&self, a: f64, b: f64) -> Result<DensityEstimate> {
        if a >= b {
            return Err(Error::InvalidArgument(format!(
                "degenerate restriction interval [{a}, {b}]"
            )));
        }
        let pts: Vec<(f64, f64)> = self
            .grid
            .iter()
            .zip(&self.density)
            .filter(|(x, _)| **x >= a && **x <= b)
            .map(|(x, d)| (*x, *d))
            .collect();
        if pts.len() < 2 {
            return Err(Error::InvalidArgument(
                "restriction interval contains fewer than 2 grid points".into(),
            ));
        }
        let grid: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let mut density: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let mass = trapezoid(&grid, &density);
        if mass <= 0.0 {
            return Err(Error::Numerical("zero mass on restriction interval".into()));
        }
        for d in &mut density {
            *d /= mass;
        }
        Ok(DensityEstimate { grid, density })
    }

    /// Linear interpolation of the density at `x`; zero outside the grid.
    pub fn at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x < g[0] || x > g[g.len() - 1] {
            return 0.0;
        }
        let i = match g.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.density[i],
            Err(i) => i,
        };
        let (x0, x1) = (g[i - 1], g[i]);
        let t = (x - x0) / (x1 - x0);
        self.density[i - 1] * (1.0 - t) + self.density[i] * t
    }
}

pub(crate) fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
        .sum()
}

/// Silverman's rule-of-thumb bandwidth.
pub(crate) fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> f64 {
        let idx = p * (sorted.len() - 1) as f64;
        let lo = idx.floor() as usize;
        let hi = idx.ceil() as usize;
        let t = idx - lo as f64;
        sorted[lo] * (1.0 - t) + sorted[hi] * t
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel density with Silverman bandwidth, normalized over the grid.
pub fn estimate_density(table: &ObservationTable, grid_size: usize) -> Result<DensityEstimate> {
    if grid_size < 50 {
        return Err(Error::InvalidArgument(format!(
            "grid_size {grid_size} too coarse; minimum 50"
        )));
    }
    if table.len() < 30 {
        return Err(Error::InsufficientData(format!(
            "density estimation needs >= 30 observations, have {}",
            table.len()
        )));
    }
    let xs: Vec<f64> = table.rows().iter().map(|r| r.x).collect();
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if x_min == x_max {
        return Err(Error::Numerical("degenerate running variable (all equal)".into()));
    }
    let bw = silverman_bandwidth(&xs);
    if bw <= 0.0 {
        return Err(Error::Numerical("zero Silverman bandwidth".into()));
    }

    let grid: Vec<f64> = (0..grid_size)
        .map(|i| x_min + (x_max - x_min) * i as f64 / (grid_size - 1) as f64)
        .collect();
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * bw * xs.len() as f64);
    let mut density: Vec<f64> = grid
        .iter()
        .map(|&g| {
            xs.iter()
                .map(|&x| (-0.5 * ((g - x) / bw).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    // Renormalize so the trapezoid integral over the observed support is 1.
    let mass = trapezoid(&grid, &density);
    for d in &mut density {
        *d /= mass;
    }
    Ok(DensityEstimate { grid, density })
}

/// Counts of each covariate value combination (cells keyed by joined values).
pub fn covariate_cells(table: &ObservationTable) -> BTreeMap<Vec<String>, Vec<usize>> {
    let mut map: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
    for (i, r) in table.rows().iter().enumerate() {
        map.entry(r.w.clone()).or_default().push(i);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(y: f64, x: f64, c: f64) -> Observation {
        Observation {
            y,
            x,
            c,
            w: vec![],
        }
    }

    #[test]
    fn sharp_rule_derived() {
        let csv = "y,x,c\n1.0,-1.0,0.0\n2.0,0.5,0.0\n3.0,2.0,0.0\n";
        let t = load_csv_str(csv, &[]).unwrap();
        let d: Vec<bool> = t.rows().iter().map(|r| r.d()).collect();
        assert_eq!(d, vec![false, true, true]);
    }

    #[test]
    fn two_cutoffs_gives_multi_design() {
        let csv = "y,x,c\n1,10,33\n2,40,33\n3,20,66\n4,70,66\n";
        let t = load_csv_str(csv, &[]).unwrap();
        match t.design().unwrap() {
            DesignSpec::Multi { low, high, .. } => {
                assert_eq!(low, 33.0);
                assert_eq!(high, 66.0);
            }
            _ => panic!("expected multi design"),
        }
    }

    #[test]
    fn three_cutoffs_rejected() {
        let csv = "y,x,c\n1,1,0\n2,2,1\n3,3,2\n";
        let err = load_csv_str(csv, &[]).unwrap_err();
        assert!(matches!(err, Error::Design(_)));
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "y,x,c\n1,2,0\nbad,2,0\n";
        match load_csv_str(csv, &[]).unwrap_err() {
            Error::Csv { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn nonfinite_rejected() {
        let csv = "y,x,c\n1,2,0\ninf,2,0\n";
        assert!(load_csv_str(csv, &[]).is_err());
    }

    #[test]
    fn comments_ignored() {
        let csv = "# generated\ny,x,c\n# mid comment\n1,2,0\n";
        let t = load_csv_str(csv, &[]).unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn roundtrip_preserves_fields() {
        let rows = vec![row(1.25, -3.5, 0.0), row(-2.0, 7.125, 0.0)];
        let t = ObservationTable::new(rows.clone(), vec![]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.write_csv(&path).unwrap();
        let t2 = load_csv(&path, &[]).unwrap();
        assert_eq!(t2.rows(), rows.as_slice());
    }

    #[test]
    fn partition_single_empty_treated_cell_errors() {
        let rows = vec![row(1.0, -1.0, 0.0), row(2.0, -0.5, 0.0)];
        let t = ObservationTable::new(rows, vec![]).unwrap();
        let d = t.design().unwrap();
        assert!(partition(&t, &d).is_err());
    }

    #[test]
    fn partition_cells_disjoint_exhaustive() {
        let rows = vec![
            row(1.0, 10.0, 33.0),
            row(2.0, 40.0, 33.0),
            row(3.0, 50.0, 66.0),
            row(4.0, 70.0, 66.0),
        ];
        let t = ObservationTable::new(rows, vec![]).unwrap();
        let d = t.design().unwrap();
        let p = partition(&t, &d).unwrap();
        let mut all: Vec<usize> = p.keys().flat_map(|k| p.indices(*k).to_vec()).collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_obs_cell_warns() {
        let rows = vec![
            row(1.0, 10.0, 33.0),
            row(2.0, 40.0, 33.0),
            row(2.5, 45.0, 33.0),
            row(3.0, 50.0, 66.0),
            row(3.5, 55.0, 66.0),
            row(4.0, 70.0, 66.0),
        ];
        let t = ObservationTable::new(rows, vec![]).unwrap();
        let d = t.design().unwrap();
        let p = partition(&t, &d).unwrap();
        assert!(!p.warnings.is_empty());
    }

    #[test]
    fn density_uniform_close_to_flat() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Observation> = (0..50_000)
            .map(|_| row(0.0, rng.gen::<f64>() * 100.0, 200.0))
            .collect();
        let t = ObservationTable::new(rows, vec![]).unwrap();
        let dens = estimate_density(&t, 200).unwrap();
        for (g, d) in dens.grid.iter().zip(&dens.density) {
            if *g >= 5.0 && *g <= 95.0 {
                assert!(
                    (d - 0.01).abs() < 0.001,
                    "density {d} at {g} outside +-10% of 0.01"
                );
            }
        }
    }

    #[test]
    fn density_grid_too_coarse() {
        let rows: Vec<Observation> = (0..40).map(|i| row(0.0, i as f64, 100.0)).collect();
        let t = ObservationTable::new(rows, vec![]).unwrap();
        assert!(estimate_density(&t, 2).is_err());
    }

    #[test]
    fn density_restriction_normalized() {
        let rows: Vec<Observation> = (0..1000).map(|i| row(0.0, i as f64 / 10.0, 200.0)).collect();
        let t = ObservationTable::new(rows, vec![]).unwrap();
        let dens = estimate_density(&t, 200).unwrap();
        let r = dens.restrict(20.0, 80.0).unwrap();
        assert!((r.total_mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn density_invariant_to_row_order() {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut rows: Vec<Observation> = (0..500).map(|i| row(0.0, (i as f64).sin() * 10.0, 100.0)).collect();
        let t1 = ObservationTable::new(rows.clone(), vec![]).unwrap();
        let d1 = estimate_density(&t1, 100).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        rows.shuffle(&mut rng);
        let t2 = ObservationTable::new(rows, vec![]).unwrap();
        let d2 = estimate_density(&t2, 100).unwrap();
        for (a, b) in d1.density.iter().zip(&d2.density) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn target_validation() {
        let d = DesignSpec::Multi {
            low: 33.0,
            high: 66.0,
            x_min: 0.0,
            x_max: 100.0,
        };
        assert!(TargetSpec::Point { x_star: 50.0 }.validate(&d).is_ok());
        assert!(TargetSpec::Point { x_star: 66.0 }.validate(&d).is_err());
        assert!(TargetSpec::Point { x_star: 33.0 }.validate(&d).is_err());
        assert!(TargetSpec::Average { a: 40.0, b: 60.0 }.validate(&d).is_ok());
    }
}

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::hessian::{dot, norm};
use super::objective::{ArchObjective, HessianBasis};
use super::AnalysisError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub x: f64,
    pub y: f64,
    pub val_loss: f64,
    pub val_acc: Option<f64>,
}

/// Loss/accuracy on a square slice through the architecture point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub radius: f64,
    pub grid_n: usize,
    /// Normalized validation gradient (or a random unit vector, see `gradient_fallback`).
    pub direction_1: Vec<f64>,
    /// Random unit vector orthogonal to `direction_1`.
    pub direction_2: Vec<f64>,
    pub basis: HessianBasis,
    /// Set when the gradient vanished and `direction_1` is random.
    pub gradient_fallback: bool,
    /// Row-major: `y` index outer, `x` index inner.
    pub cells: Vec<GridCell>,
}

/// Everything of a [`LandscapeGrid`] except the cells; the CSV sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeMeta {
    pub radius: f64,
    pub grid_n: usize,
    pub direction_1: Vec<f64>,
    pub direction_2: Vec<f64>,
    pub basis: HessianBasis,
    pub gradient_fallback: bool,
}

/// Grid coordinate `i` of `n` over `[-radius, radius]`.
///
/// Computed as `radius * (2i - (n-1)) / (n-1)` so that scans at `r` and
/// `r / 2` produce bit-identical shared points.
pub fn grid_coordinate(radius: f64, i: usize, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let t = ((2 * i) as f64 - (n - 1) as f64) / (n - 1) as f64;
    radius * t
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Scans the objective on `point + x d1 + y d2` for an odd `grid_n`.
///
/// `d1` is the normalized gradient at `point`; `d2` is a random direction
/// Gram-Schmidt orthogonalized against it.
pub fn landscape_scan<O: ArchObjective + ?Sized, R: Rng + ?Sized>(
    objective: &O,
    point: &[f64],
    radius: f64,
    grid_n: usize,
    basis: HessianBasis,
    rng: &mut R,
) -> Result<LandscapeGrid, AnalysisError> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(AnalysisError::InvalidConfig(format!("radius must be >= 0, got {radius}")));
    }
    if grid_n % 2 == 0 {
        return Err(AnalysisError::InvalidConfig(format!(
            "grid_n must be odd so the center is scanned, got {grid_n}"
        )));
    }
    let dim = objective.dim();
    if dim < 2 {
        return Err(AnalysisError::InvalidConfig("landscape needs dimension >= 2".into()));
    }
    let grad = objective.gradient(point)?;
    let gnorm = norm(&grad);
    let (d1, gradient_fallback) = if gnorm > 0.0 {
        (grad.iter().map(|g| g / gnorm).collect::<Vec<_>>(), false)
    } else {
        (random_unit(dim, rng), true)
    };
    let d2 = loop {
        let r = random_unit(dim, rng);
        let proj = dot(&r, &d1);
        let ortho: Vec<f64> = r.iter().zip(&d1).map(|(a, b)| a - proj * b).collect();
        let n = norm(&ortho);
        if n > 1e-6 {
            let mut unit: Vec<f64> = ortho.into_iter().map(|x| x / n).collect();
            // one more pass keeps |d1 . d2| at rounding level
            let p2 = dot(&unit, &d1);
            unit.iter_mut().zip(&d1).for_each(|(u, b)| *u -= p2 * b);
            let n2 = norm(&unit);
            break unit.into_iter().map(|x| x / n2).collect::<Vec<_>>();
        }
    };

    let mut cells = Vec::with_capacity(grid_n * grid_n);
    let mut probe = vec![0.0; dim];
    for iy in 0..grid_n {
        let y = grid_coordinate(radius, iy, grid_n);
        for ix in 0..grid_n {
            let x = grid_coordinate(radius, ix, grid_n);
            for k in 0..dim {
                probe[k] = point[k] + x * d1[k] + y * d2[k];
            }
            let (val_loss, val_acc) = objective.loss_and_accuracy(&probe)?;
            cells.push(GridCell {
                x,
                y,
                val_loss,
                val_acc,
            });
        }
    }
    Ok(LandscapeGrid {
        radius,
        grid_n,
        direction_1: d1,
        direction_2: d2,
        basis,
        gradient_fallback,
        cells,
    })
}

impl LandscapeGrid {
    pub fn center(&self) -> &GridCell {
        let c = self.grid_n / 2;
        &self.cells[c * self.grid_n + c]
    }

    /// Largest drop of accuracy below the center value over the grid.
    pub fn max_accuracy_drop(&self) -> Option<f64> {
        let center = self.center().val_acc?;
        self.cells
            .iter()
            .filter_map(|c| c.val_acc)
            .map(|a| center - a)
            .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d))))
    }

    pub fn meta(&self) -> LandscapeMeta {
        LandscapeMeta {
            radius: self.radius,
            grid_n: self.grid_n,
            direction_1: self.direction_1.clone(),
            direction_2: self.direction_2.clone(),
            basis: self.basis,
            gradient_fallback: self.gradient_fallback,
        }
    }

    /// CSV with header `x,y,val_loss,val_acc`; a missing accuracy is empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,val_loss,val_acc\n");
        for c in &self.cells {
            let acc = c.val_acc.map(|a| format!("{a:?}")).unwrap_or_default();
            writeln!(out, "{:?},{:?},{:?},{}", c.x, c.y, c.val_loss, acc).expect("string write");
        }
        out
    }

    pub fn from_csv(meta: LandscapeMeta, csv: &str) -> Result<Self, AnalysisError> {
        let mut lines = csv.lines();
        if lines.next() != Some("x,y,val_loss,val_acc") {
            return Err(AnalysisError::Parse("missing landscape CSV header".into()));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| AnalysisError::Parse(format!("bad number `{s}`")))
        };
        let mut cells = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(AnalysisError::Parse(format!("expected 4 fields in `{line}`")));
            }
            cells.push(GridCell {
                x: parse(fields[0])?,
                y: parse(fields[1])?,
                val_loss: parse(fields[2])?,
                val_acc: if fields[3].is_empty() {
                    None
                } else {
                    Some(parse(fields[3])?)
                },
            });
        }
        if cells.len() != meta.grid_n * meta.grid_n {
            return Err(AnalysisError::Parse(format!(
                "expected {} cells, found {}",
                meta.grid_n * meta.grid_n,
                cells.len()
            )));
        }
        Ok(Self {
            radius: meta.radius,
            grid_n: meta.grid_n,
            direction_1: meta.direction_1,
            direction_2: meta.direction_2,
            basis: meta.basis,
            gradient_fallback: meta.gradient_fallback,
            cells,
        })
    }
}

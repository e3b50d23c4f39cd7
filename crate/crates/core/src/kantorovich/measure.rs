use ndarray::Array2;

use super::OtError;

/// Weighted point masses in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self, OtError> {
        if points.len() != weights.len() {
            return Err(OtError::Invalid(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points.first().map_or(1, Vec::len);
        if dim == 0 {
            return Err(OtError::Invalid("points must have at least one coordinate".into()));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(OtError::Invalid(format!(
                    "point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, weights)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self, OtError> {
        if dim == 0 || coords.len() != dim * weights.len() {
            return Err(OtError::Invalid("coordinate array does not match weights".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(OtError::Invalid(format!(
                "weight {w} is not a finite nonnegative number"
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(OtError::Invalid("non-finite coordinate".into()));
        }
        Ok(Self { dim, coords, weights })
    }

    /// Uniform weights `total / n` on the given points.
    pub fn uniform(points: Vec<Vec<f64>>, total: f64) -> Result<Self, OtError> {
        let n = points.len().max(1);
        let w = vec![total / n as f64; points.len()];
        Self::new(points, w)
    }

    /// Points on the real line.
    pub fn on_line(xs: &[f64], weights: &[f64]) -> Result<Self, OtError> {
        Self::from_flat(1, xs.to_vec(), weights.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self, OtError> {
        Self::from_flat(self.dim, self.coords.clone(), weights)
    }

    /// Parses lines `point <x> [<y> ...] <weight>`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, OtError> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            if toks[0] != "point" || toks.len() < 3 {
                return Err(OtError::Parse {
                    line: k + 1,
                    message: "expected `point <x> [<y> ...] <weight>`".into(),
                });
            }
            let nums: Result<Vec<f64>, _> = toks[1..].iter().map(|t| t.parse::<f64>()).collect();
            let nums = nums.map_err(|_| OtError::Parse {
                line: k + 1,
                message: "bad number".into(),
            })?;
            let (w, x) = nums.split_last().expect("at least two numbers");
            points.push(x.to_vec());
            weights.push(*w);
        }
        Self::new(points, weights)
    }
}

pub fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Cost `c(x, y) = |x - y|^p` with the Euclidean norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerCost {
    pub p: f64,
}

impl PowerCost {
    pub fn new(p: f64) -> Self {
        Self { p }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        if self.p == 2.0 {
            x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
        } else if self.p == 1.0 {
            euclidean(x, y)
        } else {
            euclidean(x, y).powf(self.p)
        }
    }

    pub fn matrix(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Array2<f64> {
        Array2::from_shape_fn((mu.len(), nu.len()), |(i, j)| self.eval(mu.point(i), nu.point(j)))
    }
}

/// Parses a dense cost matrix: one CSV row per source point.
pub fn parse_cost_csv(text: &str) -> Result<Array2<f64>, OtError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|_| OtError::Parse {
            line: k + 1,
            message: "bad number".into(),
        })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(OtError::Parse {
                    line: k + 1,
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((m, n), flat).map_err(|e| OtError::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_measure_file() {
        let m = DiscreteMeasure::parse("# two atoms\npoint 0 0 0.5\npoint 1 2 0.5\n").unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.point(1), &[1.0, 2.0]);
        assert_eq!(m.total_mass(), 1.0);
    }

    #[test]
    fn mixed_dimensions_are_rejected() {
        assert!(DiscreteMeasure::parse("point 0 1\npoint 0 0 1\n").is_err());
        assert!(DiscreteMeasure::on_line(&[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn parse_cost_matrix() {
        let c = parse_cost_csv("0,1,2\n3,4,5\n").unwrap();
        assert_eq!(c.dim(), (2, 3));
        assert_eq!(c[[1, 2]], 5.0);
        assert!(parse_cost_csv("0,1\n2\n").is_err());
    }

    #[test]
    fn power_cost_values() {
        let c = PowerCost::new(2.0);
        assert_eq!(c.eval(&[0.0, 0.0], &[3.0, 4.0]), 25.0);
        assert_eq!(PowerCost::new(1.0).eval(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert!((PowerCost::new(3.0).eval(&[0.0], &[2.0]) - 8.0).abs() < 1e-12);
    }
}

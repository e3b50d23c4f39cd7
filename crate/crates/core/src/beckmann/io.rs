//! CSV grid files: one row per `j` (from `y = 0` upward), one column per `i`,
//! with a sidecar line `grid <nx> <ny> <h>`.

use ndarray::Array2;

use super::{BeckmannError, Grid, ScalarField, VectorField};

fn parse_err(line: usize, message: impl Into<String>) -> BeckmannError {
    BeckmannError::Parse {
        line,
        message: message.into(),
    }
}

fn rows_to_csv(a: &Array2<f64>) -> String {
    let (ni, nj) = a.dim();
    let mut out = String::new();
    for j in 0..nj {
        let row: Vec<String> = (0..ni).map(|i| format!("{}", a[[i, j]])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Sidecar header for `grid`.
pub fn grid_sidecar(grid: &Grid) -> String {
    format!("grid {} {} {}\n", grid.nx, grid.ny, grid.h)
}

/// `(csv, sidecar)` for a cell field.
pub fn write_scalar_field(field: &ScalarField, grid: &Grid) -> (String, String) {
    (rows_to_csv(&field.values), grid_sidecar(grid))
}

/// `(vx csv, vy csv, sidecar)`; `vx` has `nx + 1` columns, `vy` has `ny + 1`
/// rows.
pub fn write_vector_field(v: &VectorField, grid: &Grid) -> (String, String, String) {
    (rows_to_csv(&v.vx), rows_to_csv(&v.vy), grid_sidecar(grid))
}

pub fn parse_sidecar(text: &str) -> Result<Grid, BeckmannError> {
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 4 || t[0] != "grid" {
            return Err(parse_err(k + 1, "expected 'grid <nx> <ny> <h>'"));
        }
        let nx = t[1].parse().map_err(|_| parse_err(k + 1, "bad nx"))?;
        let ny = t[2].parse().map_err(|_| parse_err(k + 1, "bad ny"))?;
        let h = t[3].parse().map_err(|_| parse_err(k + 1, "bad h"))?;
        return Grid::new(nx, ny, h);
    }
    Err(parse_err(1, "missing grid line"))
}

/// Reads a cell field written by [`write_scalar_field`].
pub fn read_scalar_field(csv: &str, sidecar: &str) -> Result<(Grid, ScalarField), BeckmannError> {
    let grid = parse_sidecar(sidecar)?;
    let mut values = Array2::zeros((grid.nx, grid.ny));
    let mut j = 0;
    for (k, line) in csv.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if j >= grid.ny {
            return Err(parse_err(k + 1, format!("more than {} rows", grid.ny)));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != grid.nx {
            return Err(parse_err(
                k + 1,
                format!("{} columns, expected {}", cells.len(), grid.nx),
            ));
        }
        for (i, c) in cells.iter().enumerate() {
            let v: f64 = c
                .trim()
                .parse()
                .map_err(|_| parse_err(k + 1, format!("bad number '{c}'")))?;
            if !v.is_finite() {
                return Err(parse_err(k + 1, "non-finite value"));
            }
            values[[i, j]] = v;
        }
        j += 1;
    }
    if j != grid.ny {
        return Err(parse_err(j + 1, format!("{j} rows, expected {}", grid.ny)));
    }
    Ok((grid, ScalarField { values }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let g = Grid::new(3, 2, 0.5).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| x * 10.0 + y / 3.0);
        let (csv, side) = write_scalar_field(&f, &g);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(side, "grid 3 2 0.5\n");
        let (g2, f2) = read_scalar_field(&csv, &side).unwrap();
        assert_eq!(g2, g);
        assert_eq!(f2, f);
    }

    #[test]
    fn vector_shapes() {
        let g = Grid::new(3, 2, 0.5).unwrap();
        let (vx, vy, _) = write_vector_field(&VectorField::zeros(&g), &g);
        assert_eq!(vx.lines().count(), 2);
        assert_eq!(vx.lines().next().unwrap().split(',').count(), 4);
        assert_eq!(vy.lines().count(), 3);
    }

    #[test]
    fn malformed_input() {
        assert!(parse_sidecar("grid 3 x 1").is_err());
        assert!(read_scalar_field("1,2\n", "grid 3 1 1.0").is_err());
        assert!(read_scalar_field("1,2,3\n", "grid 3 2 1.0").is_err());
    }
}

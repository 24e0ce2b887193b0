use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};

/// Uniform time grid `t_i = i * horizon / n_steps` on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n_steps: usize,
    horizon: f64,
}

impl Grid {
    pub fn new(n_steps: usize, horizon: f64) -> Result<Self> {
        if n_steps < 2 {
            return argument(format!("grid needs at least 2 steps, got {n_steps}"));
        }
        if !(horizon > 0.0 && horizon <= 1.0) {
            return argument(format!("grid horizon {horizon} outside (0, 1]"));
        }
        Ok(Self { n_steps, horizon })
    }

    /// Grid on `[0, 1]`.
    pub fn unit(n_steps: usize) -> Result<Self> {
        Self::new(n_steps, 1.0)
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|i| self.node(i))
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return argument(format!("grid mismatch: {self:?} vs {other:?}"));
        }
        Ok(())
    }
}

/// Real values sampled on every node of a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return argument(format!(
                "{} values for a grid with {} nodes",
                values.len(),
                grid.n_nodes()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at node {i}",
                values[i]
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().map(f).collect())
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_nodes()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n_nodes()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sup_i |self_i - other_i|`.
    pub fn sup_distance(&self, other: &GridFunction) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `sup |self - reference| / sup |reference|`.
    pub fn relative_sup_error(&self, reference: &GridFunction) -> Result<f64> {
        let scale = reference.sup_norm();
        let d = self.sup_distance(reference)?;
        Ok(if scale > 0.0 { d / scale } else { d })
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &GridFunction, b: f64) -> Result<GridFunction> {
        self.grid.ensure_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        GridFunction::new(self.grid, values)
    }

    /// Composite trapezoid rule over the whole grid.
    pub fn trapezoid(&self) -> f64 {
        let v = &self.values;
        let n = v.len();
        let inner: f64 = v[1..n - 1].iter().sum();
        self.grid.step() * (inner + 0.5 * (v[0] + v[n - 1]))
    }
}

impl std::ops::Index<usize> for GridFunction {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_are_uniform_and_end_on_horizon() {
        let g = Grid::new(8, 0.7).unwrap();
        let nodes: Vec<f64> = g.nodes().collect();
        assert_eq!(nodes.len(), 9);
        assert_eq!(nodes[0], 0.0);
        assert_eq!(nodes[8], 0.7);
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        assert!((g.step() - 0.0875).abs() < 1e-15);
    }

    #[test]
    fn invalid_grids() {
        assert!(Grid::new(1, 1.0).is_err());
        assert!(Grid::new(4, 0.0).is_err());
        assert!(Grid::new(4, 1.5).is_err());
    }

    #[test]
    fn grid_function_checks_length_and_finiteness() {
        let g = Grid::unit(4).unwrap();
        assert!(GridFunction::new(g, vec![0.0; 4]).is_err());
        assert!(GridFunction::new(g, vec![0.0, 1.0, f64::NAN, 0.0, 0.0]).is_err());
        let f = GridFunction::from_fn(g, |t| t * t).unwrap();
        assert_eq!(f[2], 0.25);
    }

    #[test]
    fn trapezoid_is_exact_for_linear_functions() {
        let g = Grid::unit(16).unwrap();
        let f = GridFunction::from_fn(g, |t| 3.0 * t - 1.0).unwrap();
        assert!((f.trapezoid() - 0.5).abs() < 1e-15);
    }
}

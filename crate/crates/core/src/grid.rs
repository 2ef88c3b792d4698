//! Regular survey grids shared by scenes, surveys and maps.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Node layout of a rectangular survey grid.
///
/// `nx` nodes run along the scene length (x), `ny` across its width (y).
/// Node `(i, j)` sits at `(i·step, j·step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub nx: usize,
    pub ny: usize,
    pub step: f64,
}

impl GridShape {
    /// Grid covering `[0, length] × [0, width]`:
    /// `(floor(length/step)+1) × (floor(width/step)+1)` nodes.
    pub fn from_extent(length: f64, width: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::invalid(format!("grid step must be positive, got {step}")));
        }
        if !(length >= 0.0) || !(width >= 0.0) || !length.is_finite() || !width.is_finite() {
            return Err(Error::invalid(format!(
                "scene extent must be finite and non-negative, got {length} x {width}"
            )));
        }
        // Guard against 50/0.25 landing a hair below an integer.
        let count = |extent: f64| ((extent / step) + 1e-9).floor() as usize + 1;
        Ok(GridShape {
            nx: count(length),
            ny: count(width),
            step,
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index (rows are constant y).
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn position(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.step, j as f64 * self.step)
    }

    /// Nearest node to `(x, y)` if it lies within half a step of it.
    pub fn snap(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let half = 0.5 * self.step + 1e-9;
        let i = (x / self.step).round();
        let j = (y / self.step).round();
        if i < 0.0 || j < 0.0 || i as usize >= self.nx || j as usize >= self.ny {
            return None;
        }
        let (px, py) = self.position(i as usize, j as usize);
        ((x - px).abs() <= half && (y - py).abs() <= half).then_some((i as usize, j as usize))
    }
}

/// Values laid out on a [`GridShape`], row-major with rows of constant y.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    shape: GridShape,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(shape: GridShape, value: T) -> Self {
        Grid {
            shape,
            data: vec![value; shape.len()],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_fn(shape: GridShape, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for j in 0..shape.ny {
            for i in 0..shape.nx {
                data.push(f(i, j));
            }
        }
        Grid { shape, data }
    }

    pub fn from_vec(shape: GridShape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                expected: shape.len(),
                got: data.len(),
            });
        }
        Ok(Grid { shape, data })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[self.shape.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        let k = self.shape.index(i, j);
        self.data[k] = value;
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, j: usize) -> &[T] {
        &self.data[j * self.shape.nx..(j + 1) * self.shape.nx]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            shape: self.shape,
            data: self.data.iter().map(f).collect(),
        }
    }
}

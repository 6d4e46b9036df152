use crate::error::{Error, Result};

/// Binary validity map of a circular field of view.
///
/// Pixel `(i, j)` (column, row) is valid iff
/// `(i - W/2)^2 + (j - H/2)^2 <= r^2`, i.e. the step function is taken as 1 at 0.
/// The center is exactly `(W/2, H/2)`, so odd sizes put it between pixels and
/// even sizes put it on pixel `(W/2, H/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FovMask {
    width: usize,
    height: usize,
    radius: f64,
    grid: Vec<bool>,
}

/// The inside predicate shared by masks, patch grids and preprocessing.
#[inline]
pub fn inside(i: f64, j: f64, width: usize, height: usize, radius: f64) -> bool {
    let dx = i - width as f64 / 2.0;
    let dy = j - height as f64 / 2.0;
    radius * radius - dy * dy - dx * dx >= 0.0
}

pub fn compute_fov_mask(width: usize, height: usize, radius: f64) -> Result<FovMask> {
    if width == 0 || height == 0 {
        return Err(Error::Geometry(format!("empty grid {width}x{height}")));
    }
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::Geometry(format!("invalid radius {radius}")));
    }
    let grid = (0..height)
        .flat_map(|j| (0..width).map(move |i| inside(i as f64, j as f64, width, height, radius)))
        .collect();
    Ok(FovMask {
        width,
        height,
        radius,
        grid,
    })
}

impl FovMask {
    /// Wraps an explicit map, e.g. a random mask for pooling tests.
    pub fn from_grid(width: usize, height: usize, grid: Vec<bool>) -> Result<FovMask> {
        if grid.len() != width * height {
            return Err(Error::Geometry(format!(
                "mask of {} cells for {width}x{height} grid",
                grid.len()
            )));
        }
        Ok(FovMask {
            width,
            height,
            radius: f64::NAN,
            grid,
        })
    }

    pub fn all_ones(width: usize, height: usize) -> FovMask {
        FovMask {
            width,
            height,
            radius: f64::INFINITY,
            grid: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Radius the mask was computed from; NaN for explicit maps.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Row-major, index `j * width + i`.
    pub fn grid(&self) -> &[bool] {
        &self.grid
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.grid[j * self.width + i]
    }

    pub fn count(&self) -> usize {
        self.grid.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn transpose(&self) -> FovMask {
        let grid = (0..self.width)
            .flat_map(|i| (0..self.height).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        FovMask {
            width: self.height,
            height: self.width,
            radius: self.radius,
            grid,
        }
    }
}

use crate::error::{Error, Result};

/// Predicted classes on a square lattice, row-major with the top row at `ymax`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassGrid {
    pub resolution: usize,
    pub classes: usize,
    pub cells: Vec<u32>,
}

/// Axis-aligned plotting window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Bounds {
    pub fn square(half: f64) -> Self {
        Bounds { xmin: -half, xmax: half, ymin: -half, ymax: half }
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.xmin, self.xmax, self.ymin, self.ymax].iter().all(|v| v.is_finite())
            && self.xmin < self.xmax
            && self.ymin < self.ymax;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("degenerate bounds {self:?}")))
        }
    }
}

/// Lattice points in grid order.
pub fn lattice(bounds: Bounds, resolution: usize) -> Result<Vec<[f64; 2]>> {
    bounds.validate()?;
    if resolution < 2 {
        return Err(Error::validation(format!("resolution must be at least 2, got {resolution}")));
    }
    let step = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / (resolution - 1) as f64;
    let mut pts = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        let y = step(bounds.ymax, bounds.ymin, i);
        for j in 0..resolution {
            pts.push([step(bounds.xmin, bounds.xmax, j), y]);
        }
    }
    Ok(pts)
}

/// Classifies every lattice point with a per-point predictor.
pub fn render_decision_surface(
    predict: impl Fn([f64; 2]) -> u32,
    bounds: Bounds,
    resolution: usize,
    classes: usize,
) -> Result<ClassGrid> {
    render_decision_surface_batch(|pts| Ok(pts.iter().map(|&p| predict(p)).collect()), bounds, resolution, classes)
}

/// Like [`render_decision_surface`], classifying all lattice points in one call.
pub fn render_decision_surface_batch(
    predict: impl FnOnce(&[[f64; 2]]) -> Result<Vec<u32>>,
    bounds: Bounds,
    resolution: usize,
    classes: usize,
) -> Result<ClassGrid> {
    if classes < 2 {
        return Err(Error::validation("a decision surface needs at least 2 classes"));
    }
    let pts = lattice(bounds, resolution)?;
    let cells = predict(&pts)?;
    if cells.len() != pts.len() {
        return Err(Error::validation("predictor returned the wrong number of classes"));
    }
    if let Some(bad) = cells.iter().find(|&&c| c as usize >= classes) {
        return Err(Error::validation(format!("predicted class {bad} out of range")));
    }
    Ok(ClassGrid { resolution, classes, cells })
}

impl ClassGrid {
    /// Binary greyscale image, pixel value `class * 255 / (classes - 1)`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.resolution, self.resolution).into_bytes();
        let denom = (self.classes - 1) as u32;
        out.extend(self.cells.iter().map(|&c| (c * 255 / denom) as u8));
        out
    }
}

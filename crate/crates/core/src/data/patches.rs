use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Top-left corners along one axis: `round(i·(size − patch)/(grid − 1))`,
/// or the centred corner when `grid == 1`.
pub fn grid_offsets(size: usize, grid: usize, patch: usize) -> Result<Vec<usize>> {
    if grid == 0 {
        return Err(Error::InvalidArgument(
            "patch grid must be at least 1×1".into(),
        ));
    }
    if patch == 0 || patch > size {
        return Err(shape_err(
            "sample_patch_grid",
            format!("{patch}-pixel patch does not fit a {size}-pixel axis"),
        ));
    }
    let span = (size - patch) as f64;
    if grid == 1 {
        return Ok(vec![(span / 2.0).round() as usize]);
    }
    Ok((0..grid)
        .map(|i| (i as f64 * span / (grid - 1) as f64).round() as usize)
        .collect())
}

/// Row-major `(y, x)` corners of a `grid × grid` patch layout.
pub fn patch_corners(h: usize, w: usize, grid: usize, patch: usize) -> Result<Vec<(usize, usize)>> {
    let ys = grid_offsets(h, grid, patch)?;
    let xs = grid_offsets(w, grid, patch)?;
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
        .collect())
}

pub fn crop(image: &Tensor, y: usize, x: usize, size: usize) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    if y + size > h || x + size > w {
        return Err(shape_err(
            "crop",
            format!("{size}×{size} at ({y}, {x}) exceeds {h}×{w}"),
        ));
    }
    let d = image.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for row in y..y + size {
            let start = (ch * h + row) * w + x;
            out.extend_from_slice(&d[start..start + size]);
        }
    }
    Tensor::new(vec![c, size, size], out)
}

/// Cuts `grid²` square patches from a C×H×W image in row-major grid order.
pub fn sample_patch_grid(image: &Tensor, grid: usize, patch: usize) -> Result<Vec<Tensor>> {
    let (_, h, w) = image.chw()?;
    patch_corners(h, w, grid, patch)?
        .into_iter()
        .map(|(y, x)| crop(image, y, x, patch))
        .collect()
}

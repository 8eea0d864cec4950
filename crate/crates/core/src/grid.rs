//! Deterministic sampling grids over balls, annuli and input boxes.

use crate::dynamics::{norm, ControlInput, InputBox};

/// `points` uniformly spaced values on `[lo, hi]` (both ends included).
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Cartesian product of per-axis value lists, last axis fastest.
pub fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![vec![]], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

/// Unit directions from the surface of the cube `[-1, 1]^n` sampled with
/// `density` points per edge, normalized.
pub fn directions(dim: usize, density: usize) -> Vec<Vec<f64>> {
    let density = density.max(2);
    let axis = linspace(-1.0, 1.0, density);
    cartesian(&vec![axis; dim])
        .into_iter()
        .filter(|p| p.iter().any(|c| c.abs() == 1.0))
        .map(|p| {
            let n = norm(&p);
            p.into_iter().map(|c| c / n).collect()
        })
        .collect()
}

/// Cube grid with `density` points per axis clipped to the closed ball of
/// `radius`, plus the sphere of `radius` sampled along [`directions`].
pub fn ball_grid(dim: usize, radius: f64, density: usize, dir_density: usize) -> Vec<Vec<f64>> {
    let axis = linspace(-radius, radius, density.max(2));
    let mut pts: Vec<Vec<f64>> = cartesian(&vec![axis; dim])
        .into_iter()
        .filter(|p| norm(p) <= radius)
        .collect();
    pts.extend(
        directions(dim, dir_density)
            .into_iter()
            .map(|d| d.into_iter().map(|c| c * radius).collect()),
    );
    pts
}

/// Shells with geometrically spaced radii from `inner` to `outer` (both
/// included), each sampled along [`directions`]. Inner shells come first.
pub fn annulus_grid(
    dim: usize,
    inner: f64,
    outer: f64,
    shells: usize,
    dir_density: usize,
) -> Vec<Vec<f64>> {
    let dirs = directions(dim, dir_density);
    let radii: Vec<f64> = match shells {
        0 => vec![],
        1 => vec![inner],
        _ => (0..shells)
            .map(|i| inner * (outer / inner).powf(i as f64 / (shells - 1) as f64))
            .collect(),
    };
    radii
        .iter()
        .flat_map(|&r| dirs.iter().map(move |d| d.iter().map(|c| c * r).collect()))
        .collect()
}

/// Per-axis grid of the input box with `resolution` points per axis. The zero
/// input is added when the box contains it and the grid misses it.
pub fn control_grid(input_box: &InputBox, resolution: usize) -> Vec<ControlInput> {
    let axes: Vec<Vec<f64>> = input_box
        .bounds
        .iter()
        .map(|&(lo, hi)| linspace(lo, hi, resolution.max(2)))
        .collect();
    let mut grid: Vec<ControlInput> = cartesian(&axes).into_iter().map(ControlInput).collect();
    let zero = vec![0.0; input_box.dim()];
    if input_box.contains(&zero) && !grid.iter().any(|u| u.0 == zero) {
        grid.push(ControlInput(zero));
    }
    grid
}

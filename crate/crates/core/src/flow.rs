//! Dense flow sampling, point propagation, and block-matching estimation.
//!
//! The estimator exists so the test suite and the synthetic harness do not
//! need an external flow network; real runs normally ingest precomputed
//! `.flo` files instead.

use crate::error::{Error, Result};
use crate::types::{FlowField, GrayFrame};

/// Block-matching parameters: SSD window radius and displacement search radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowParams {
    pub block_radius: usize,
    pub search_radius: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            block_radius: 2,
            search_radius: 3,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.block_radius == 0 || self.search_radius == 0 {
            return Err(Error::validation(
                "block_radius and search_radius must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Bilinearly interpolated displacement at a continuous location.
///
/// Out-of-range coordinates clamp to the field boundary; values at integer
/// coordinates reproduce the stored pixels exactly.
pub fn sample_flow(field: &FlowField, x: f64, y: f64) -> Result<(f64, f64)> {
    if field.is_empty() {
        return Err(Error::validation("cannot sample an empty flow field"));
    }
    let w = field.width();
    let h = field.height();
    let cx = x.clamp(0.0, (w - 1) as f64);
    let cy = y.clamp(0.0, (h - 1) as f64);
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = cx - x0 as f64;
    let fy = cy - y0 as f64;
    let (d00x, d00y) = field.at(x0, y0);
    let (d10x, d10y) = field.at(x1, y0);
    let (d01x, d01y) = field.at(x0, y1);
    let (d11x, d11y) = field.at(x1, y1);
    let lerp2 = |a: f64, b: f64, c: f64, d: f64| {
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    };
    Ok((lerp2(d00x, d10x, d01x, d11x), lerp2(d00y, d10y, d01y, d11y)))
}

/// Map each point to `(x + dx, y + dy)` with the displacement sampled at it.
pub fn propagate_points(points: &[(f64, f64)], field: &FlowField) -> Result<Vec<(f64, f64)>> {
    points
        .iter()
        .map(|&(x, y)| {
            let (dx, dy) = sample_flow(field, x, y)?;
            Ok((x + dx, y + dy))
        })
        .collect()
}

/// Integer block-matching flow between two frames of identical size.
///
/// For every pixel far enough from the border, the displacement minimizing
/// the sum of squared block differences within the search radius is chosen;
/// ties go to the smallest displacement magnitude and then to `(dy, dx)`
/// lexicographic order, so output is bit-reproducible. Border pixels copy the
/// nearest interior pixel's flow.
pub fn estimate_flow(a: &GrayFrame, b: &GrayFrame, p: &FlowParams) -> Result<FlowField> {
    p.validate()?;
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::validation(format!(
            "frame dimensions differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let margin = p.block_radius + p.search_radius;
    if a.width() <= 2 * margin || a.height() <= 2 * margin {
        return Err(Error::validation(format!(
            "frame {}x{} too small for block radius {} + search radius {}",
            a.width(),
            a.height(),
            p.block_radius,
            p.search_radius
        )));
    }
    let w = a.width();
    let h = a.height();
    let br = p.block_radius as isize;
    let sr = p.search_radius as isize;
    let mut field = FlowField::zeros(w, h);

    let lo_x = margin;
    let hi_x = w - 1 - margin;
    let lo_y = margin;
    let hi_y = h - 1 - margin;

    for y in lo_y..=hi_y {
        for x in lo_x..=hi_x {
            let mut best = (f64::INFINITY, i64::MAX, (0isize, 0isize));
            for dy in -sr..=sr {
                for dx in -sr..=sr {
                    let mut ssd = 0.0f64;
                    for v in -br..=br {
                        for u in -br..=br {
                            let ax = (x as isize + u) as usize;
                            let ay = (y as isize + v) as usize;
                            let bx = (x as isize + dx + u) as usize;
                            let by = (y as isize + dy + v) as usize;
                            let diff = a.at(ax, ay) as f64 - b.at(bx, by) as f64;
                            ssd += diff * diff;
                        }
                    }
                    let mag = (dx * dx + dy * dy) as i64;
                    let key = (ssd, mag, (dy, dx));
                    if key < best {
                        best = key;
                    }
                }
            }
            field.set(x, y, best.2 .1 as f32, best.2 .0 as f32);
        }
    }

    // border pixels copy their nearest valid neighbor
    for y in 0..h {
        for x in 0..w {
            if x < lo_x || x > hi_x || y < lo_y || y > hi_y {
                let nx = x.clamp(lo_x, hi_x);
                let ny = y.clamp(lo_y, hi_y);
                let (dx, dy) = field.at(nx, ny);
                field.set(x, y, dx as f32, dy as f32);
            }
        }
    }
    Ok(field)
}

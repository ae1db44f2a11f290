//! Motion-invariant appearance augmentation, applied in a fixed order:
//! per-channel color jitter, uniform scale about the canvas center, then a
//! piecewise-affine warp over a 4x4 control grid. The spatial part exposes a
//! forward point map so keypoint/box consistency is testable and drive-frame
//! crop boxes can follow the warp.

use serde::{Deserialize, Serialize};
use xum_core::{Frame, RandomStream, Scalar};

pub const GRID_N: usize = 4;
/// Control-vertex jitter bound as a fraction of the image size.
pub const WARP_JITTER_FRAC: f64 = 0.04;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AugmentParams {
    pub gain: [f64; 3],
    pub bias: [f64; 3],
    pub scale: f64,
    /// Displaced control grid, row-major (GRID_N x GRID_N), image coords.
    pub grid: Vec<(f64, f64)>,
    pub size: usize,
}

fn base_grid(size: usize) -> Vec<(f64, f64)> {
    let step = (size as f64 - 1.0) / (GRID_N as f64 - 1.0);
    let mut g = Vec::with_capacity(GRID_N * GRID_N);
    for i in 0..GRID_N {
        for j in 0..GRID_N {
            g.push((j as f64 * step, i as f64 * step));
        }
    }
    g
}

impl AugmentParams {
    pub fn identity(size: usize) -> Self {
        AugmentParams {
            gain: [1.0; 3],
            bias: [0.0; 3],
            scale: 1.0,
            grid: base_grid(size),
            size,
        }
    }

    pub fn is_spatial_identity(&self) -> bool {
        self.scale == 1.0 && self.grid == base_grid(self.size)
    }
}

pub fn sample_augment(rng: &mut RandomStream, size: usize) -> AugmentParams {
    let mut gain = [0.0; 3];
    let mut bias = [0.0; 3];
    for c in 0..3 {
        gain[c] = rng.uniform_in(0.7, 1.3);
        bias[c] = rng.uniform_in(-0.15, 0.15);
    }
    let scale = rng.uniform_in(0.7, 1.3);
    let jit = WARP_JITTER_FRAC * size as f64;
    let grid = base_grid(size)
        .into_iter()
        .map(|(x, y)| (x + rng.uniform_in(-jit, jit), y + rng.uniform_in(-jit, jit)))
        .collect();
    AugmentParams { gain, bias, scale, grid, size }
}

/// Affine map taking base triangle (a,b,c) onto (a2,b2,c2), evaluated at p
/// via barycentric coordinates (valid outside the triangle too, giving the
/// natural affine extrapolation).
fn tri_map(
    p: (f64, f64),
    a: (f64, f64),
    b: (f64, f64),
    c: (f64, f64),
    a2: (f64, f64),
    b2: (f64, f64),
    c2: (f64, f64),
) -> (f64, f64) {
    let det = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
    let wb = ((p.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (p.1 - a.1)) / det;
    let wc = ((b.0 - a.0) * (p.1 - a.1) - (p.0 - a.0) * (b.1 - a.1)) / det;
    let wa = 1.0 - wb - wc;
    (
        wa * a2.0 + wb * b2.0 + wc * c2.0,
        wa * a2.1 + wb * b2.1 + wc * c2.1,
    )
}

/// The two triangles of cell (ci, cj) as grid-node indices (tl,tr,bl,br).
fn cell_tris(ci: usize, cj: usize) -> [[usize; 3]; 2] {
    let tl = ci * GRID_N + cj;
    let tr = tl + 1;
    let bl = tl + GRID_N;
    let br = bl + 1;
    [[tl, tr, bl], [tr, br, bl]]
}

/// Forward warp: locate p's base-grid cell (clamped, so points outside the
/// canvas extrapolate affinely) and apply that triangle's map.
fn warp_forward(params: &AugmentParams, p: (f64, f64)) -> (f64, f64) {
    let base = base_grid(params.size);
    let step = (params.size as f64 - 1.0) / (GRID_N as f64 - 1.0);
    let cj = ((p.0 / step).floor() as isize).clamp(0, GRID_N as isize - 2) as usize;
    let ci = ((p.1 / step).floor() as isize).clamp(0, GRID_N as isize - 2) as usize;
    let u = p.0 / step - cj as f64;
    let v = p.1 / step - ci as f64;
    let tris = cell_tris(ci, cj);
    let t = if u + v <= 1.0 { tris[0] } else { tris[1] };
    tri_map(
        p,
        base[t[0]],
        base[t[1]],
        base[t[2]],
        params.grid[t[0]],
        params.grid[t[1]],
        params.grid[t[2]],
    )
}

/// Inverse warp: search displaced triangles for the best-containing one
/// (exact when p lies inside it) and invert its affine map.
fn warp_inverse(params: &AugmentParams, p: (f64, f64)) -> (f64, f64) {
    let base = base_grid(params.size);
    let mut best: Option<(f64, [usize; 3])> = None;
    for ci in 0..GRID_N - 1 {
        for cj in 0..GRID_N - 1 {
            for t in cell_tris(ci, cj) {
                let (a, b, c) = (params.grid[t[0]], params.grid[t[1]], params.grid[t[2]]);
                let det = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
                if det.abs() < 1e-9 {
                    continue;
                }
                let wb = ((p.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (p.1 - a.1)) / det;
                let wc = ((b.0 - a.0) * (p.1 - a.1) - (p.0 - a.0) * (b.1 - a.1)) / det;
                let wa = 1.0 - wb - wc;
                let score = wa.min(wb).min(wc);
                if best.map_or(true, |(s, _)| score > s) {
                    best = Some((score, t));
                }
            }
        }
    }
    let (_, t) = best.expect("non-degenerate grid");
    tri_map(
        p,
        params.grid[t[0]],
        params.grid[t[1]],
        params.grid[t[2]],
        base[t[0]],
        base[t[1]],
        base[t[2]],
    )
}

/// Forward map of the spatial component (scale about center, then warp).
pub fn map_point(params: &AugmentParams, p: (f64, f64)) -> (f64, f64) {
    let c = (params.size as f64 - 1.0) / 2.0;
    let q = (c + params.scale * (p.0 - c), c + params.scale * (p.1 - c));
    if params.is_spatial_identity() {
        return q;
    }
    warp_forward(params, q)
}

pub fn apply_augment<S: Scalar>(frame: &Frame<S>, params: &AugmentParams) -> Frame<S> {
    let (h, w) = (frame.height(), frame.width());
    assert_eq!(h, params.size);
    assert_eq!(w, params.size);
    // 1) color jitter, clamped
    let mut jittered = frame.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = frame.pixels[(y, x, ch)].to_f();
                jittered.pixels[(y, x, ch)] =
                    S::from_f((params.gain[ch] * v + params.bias[ch]).clamp(0.0, 1.0));
            }
        }
    }
    if params.is_spatial_identity() {
        return jittered;
    }
    // 2+3) geometric resample through the inverse of (warp . scale)
    let c = (params.size as f64 - 1.0) / 2.0;
    let inv_s = 1.0 / params.scale;
    let mut out = Frame::<S>::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let q = warp_inverse(params, (x as f64, y as f64));
            let sx = c + inv_s * (q.0 - c);
            let sy = c + inv_s * (q.1 - c);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            for ch in 0..3 {
                let mut acc = 0.0;
                for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                        let (px, py) = (x0 + dx, y0 + dy);
                        if px >= 0.0 && px <= w as f64 - 1.0 && py >= 0.0 && py <= h as f64 - 1.0 {
                            acc += wy * wx * jittered.pixels[(py as usize, px as usize, ch)].to_f();
                        }
                    }
                }
                out.pixels[(y, x, ch)] = S::from_f(acc);
            }
        }
    }
    out
}

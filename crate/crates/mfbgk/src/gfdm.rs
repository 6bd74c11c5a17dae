//! Weighted least-squares derivative operators on the point cloud, the
//! positive upwind flux in 2D and 3D, and scattered-data interpolation.
//!
//! Derivatives come from first-order Taylor expansions around the center
//! solved in the weighted least-squares sense, a = (M^T W M)^{-1} (M^T W) b.
//! The upwind flux rotates the per-neighbor derivative coefficients into the
//! neighbor-aligned frame (n, t[, b]) and adds sign-matched dissipation, so
//! every neighbor's effective coefficient on (f_j - f_i) is nonpositive and
//! the explicit update is a convex combination whenever dt stays below the
//! exposed stability bound.

use crate::error::{Error, Result};

/// Gaussian weight exponent, w = exp(-alpha r^2 / h^2) inside the support.
pub const WEIGHT_ALPHA: f64 = 6.0;

/// M^T W M counts as singular when its smallest eigenvalue drops below this
/// fraction of the largest (scale-free rank test).
pub const SINGULAR_TOL: f64 = 1e-12;

/// Truncated Gaussian weight over the interaction radius h.
pub fn weight(dist: f64, h: f64) -> f64 {
    debug_assert!(dist >= 0.0 && h > 0.0);
    if dist <= h {
        (-WEIGHT_ALPHA * dist * dist / (h * h)).exp()
    } else {
        0.0
    }
}

/// Right-handed orthonormal frame attached to one neighbor direction. In 2D
/// the binormal is unused and zero.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub normal: [f64; 3],
    pub tangent: [f64; 3],
    pub binormal: [f64; 3],
}

/// Per-particle least-squares geometry: weights, S = (M^T W M)^{-1},
/// per-neighbor derivative coefficients and their rotated (upwind) versions.
#[derive(Debug, Clone)]
pub struct LsOperator {
    pub center: usize,
    pub dims: usize,
    /// Global indices of the neighbors kept after weight truncation.
    pub neighbor_ids: Vec<u32>,
    pub weights: Vec<f64>,
    pub offsets: Vec<[f64; 3]>,
    /// (M^T W M)^{-1}; only the leading dims x dims block is meaningful.
    pub s_matrix: [[f64; 3]; 3],
    /// Per-neighbor (alpha, beta[, gamma]) = w_j S d_j.
    pub deriv_coeffs: Vec<[f64; 3]>,
    pub frames: Vec<Frame>,
    /// Per-neighbor (alpha_bar, beta_bar[, gamma_bar]), the derivative
    /// coefficients expressed in the neighbor frame.
    pub rotated_coeffs: Vec<[f64; 3]>,
}

impl LsOperator {
    pub fn neighbor_count(&self) -> usize {
        self.neighbor_ids.len()
    }
}

macro_rules! spd_inverse {
    ($name:ident, $n:expr, $mat:ty) => {
        /// Invert a symmetric positive-definite matrix through its
        /// eigendecomposition; None when rank-deficient to tolerance.
        fn $name(a: &[[f64; $n]; $n]) -> Option<[[f64; $n]; $n]> {
            let m = <$mat>::from_fn(|r, c| a[r][c]);
            let eig = m.symmetric_eigen();
            let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
            let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
            if !(max > 0.0) || min < SINGULAR_TOL * max {
                return None;
            }
            let inv_diag = <$mat>::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
            let inv = eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
            let mut out = [[0.0; $n]; $n];
            for r in 0..$n {
                for c in 0..$n {
                    out[r][c] = inv[(r, c)];
                }
            }
            Some(out)
        }
    };
}

spd_inverse!(spd_inverse2, 2, nalgebra::Matrix2<f64>);
spd_inverse!(spd_inverse3, 3, nalgebra::Matrix3<f64>);
spd_inverse!(spd_inverse4, 4, nalgebra::Matrix4<f64>);

fn frame_for_offset(d: [f64; 3], dims: usize) -> Frame {
    if dims == 2 {
        let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let (c, s) = (d[0] / r, d[1] / r); // (cos phi, sin phi)
        Frame {
            normal: [c, s, 0.0],
            tangent: [-s, c, 0.0],
            binormal: [0.0, 0.0, 0.0],
        }
    } else {
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let r_xy = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let cos_t = (d[2] / r).clamp(-1.0, 1.0);
        let sin_t = r_xy / r;
        let (cos_p, sin_p) = if r_xy > 0.0 {
            (d[0] / r_xy, d[1] / r_xy)
        } else {
            (1.0, 0.0)
        };
        Frame {
            normal: [sin_t * cos_p, sin_t * sin_p, cos_t],
            tangent: [cos_t * cos_p, cos_t * sin_p, -sin_t],
            binormal: [-sin_p, cos_p, 0.0],
        }
    }
}

/// Build the least-squares operator of particle `center` over `neighbors`.
///
/// Fails with a deficient-stencil error when fewer than dims + 2 neighbors
/// survive the weight truncation or M^T W M is singular to tolerance; the
/// caller routes that to particle management.
pub fn build_ls_operator(
    positions: &[[f64; 3]],
    dims: usize,
    h: f64,
    center: usize,
    neighbors: &[u32],
) -> Result<LsOperator> {
    debug_assert!(dims == 2 || dims == 3);
    let cp = positions[center];

    let mut neighbor_ids = Vec::with_capacity(neighbors.len());
    let mut weights = Vec::with_capacity(neighbors.len());
    let mut offsets = Vec::with_capacity(neighbors.len());
    for &j in neighbors {
        let q = positions[j as usize];
        let mut d = [0.0; 3];
        let mut r_sq = 0.0;
        for a in 0..dims {
            d[a] = q[a] - cp[a];
            r_sq += d[a] * d[a];
        }
        let w = weight(r_sq.sqrt(), h);
        if w > 0.0 {
            neighbor_ids.push(j);
            weights.push(w);
            offsets.push(d);
        }
    }
    let m = neighbor_ids.len();
    if m < dims + 2 {
        return Err(Error::DeficientStencil { particle: center });
    }

    // Assemble M^T W M in h-scaled offsets so the rank test sees O(1) entries.
    let inv_h = 1.0 / h;
    let mut a = [[0.0; 3]; 3];
    for (w, d) in weights.iter().zip(&offsets) {
        for r in 0..dims {
            for c in 0..dims {
                a[r][c] += w * d[r] * inv_h * (d[c] * inv_h);
            }
        }
    }
    let s_scaled: [[f64; 3]; 3] = if dims == 2 {
        let a2 = [[a[0][0], a[0][1]], [a[1][0], a[1][1]]];
        match spd_inverse2(&a2) {
            Some(s) => [
                [s[0][0], s[0][1], 0.0],
                [s[1][0], s[1][1], 0.0],
                [0.0, 0.0, 0.0],
            ],
            None => return Err(Error::DeficientStencil { particle: center }),
        }
    } else {
        match spd_inverse3(&a) {
            Some(s) => s,
            None => return Err(Error::DeficientStencil { particle: center }),
        }
    };
    // Undo the scaling: S_physical = S_scaled / h^2.
    let mut s_matrix = [[0.0; 3]; 3];
    for r in 0..dims {
        for c in 0..dims {
            s_matrix[r][c] = s_scaled[r][c] * inv_h * inv_h;
        }
    }

    let mut deriv_coeffs = Vec::with_capacity(m);
    let mut frames = Vec::with_capacity(m);
    let mut rotated_coeffs = Vec::with_capacity(m);
    for (w, d) in weights.iter().zip(&offsets) {
        let mut coeff = [0.0; 3];
        for r in 0..dims {
            let mut acc = 0.0;
            for c in 0..dims {
                acc += s_matrix[r][c] * d[c];
            }
            coeff[r] = w * acc;
        }
        let frame = frame_for_offset(*d, dims);
        let dot = |v: &[f64; 3]| v[0] * coeff[0] + v[1] * coeff[1] + v[2] * coeff[2];
        rotated_coeffs.push([dot(&frame.normal), dot(&frame.tangent), dot(&frame.binormal)]);
        deriv_coeffs.push(coeff);
        frames.push(frame);
    }

    Ok(LsOperator {
        center,
        dims,
        neighbor_ids,
        weights,
        offsets,
        s_matrix,
        deriv_coeffs,
        frames,
        rotated_coeffs,
    })
}

/// Least-squares gradient; `f_neighbors` is ordered like `op.neighbor_ids`.
pub fn gradient(op: &LsOperator, f_center: f64, f_neighbors: &[f64]) -> [f64; 3] {
    debug_assert_eq!(f_neighbors.len(), op.neighbor_count());
    let mut g = [0.0; 3];
    for (coeff, f) in op.deriv_coeffs.iter().zip(f_neighbors) {
        let df = f - f_center;
        for a in 0..op.dims {
            g[a] += coeff[a] * df;
        }
    }
    g
}

/// Effective upwind coefficient of one neighbor on (f_j - f_i) in 2D:
/// alpha_bar [(c.n) - |c.n|] + beta_bar (c.t) - |beta_bar| |c.t|.
/// Nonpositive by construction (alpha_bar >= 0 since S is SPD).
#[inline]
pub fn upwind_coeff_2d(rotated: &[f64; 3], frame: &Frame, c: &[f64; 3]) -> f64 {
    let cn = c[0] * frame.normal[0] + c[1] * frame.normal[1];
    let ct = c[0] * frame.tangent[0] + c[1] * frame.tangent[1];
    rotated[0] * (cn - cn.abs()) + rotated[1] * ct - rotated[1].abs() * ct.abs()
}

/// 3D version with the binormal dissipation term.
#[inline]
pub fn upwind_coeff_3d(rotated: &[f64; 3], frame: &Frame, c: &[f64; 3]) -> f64 {
    let cn = c[0] * frame.normal[0] + c[1] * frame.normal[1] + c[2] * frame.normal[2];
    let ct = c[0] * frame.tangent[0] + c[1] * frame.tangent[1] + c[2] * frame.tangent[2];
    let cb = c[0] * frame.binormal[0] + c[1] * frame.binormal[1] + c[2] * frame.binormal[2];
    rotated[0] * (cn - cn.abs())
        + (rotated[1] * ct - rotated[1].abs() * ct.abs())
        + (rotated[2] * cb - rotated[2].abs() * cb.abs())
}

/// Upwind approximation of (v - U) . grad f at the operator's center, 2D.
pub fn upwind_flux_2d(op: &LsOperator, c: [f64; 3], f_center: f64, f_neighbors: &[f64]) -> f64 {
    debug_assert_eq!(op.dims, 2);
    debug_assert_eq!(f_neighbors.len(), op.neighbor_count());
    let mut q = 0.0;
    for ((rot, frame), f) in op
        .rotated_coeffs
        .iter()
        .zip(&op.frames)
        .zip(f_neighbors)
    {
        q += upwind_coeff_2d(rot, frame, &c) * (f - f_center);
    }
    q
}

/// Upwind approximation of (v - U) . grad f at the operator's center, 3D.
pub fn upwind_flux_3d(op: &LsOperator, c: [f64; 3], f_center: f64, f_neighbors: &[f64]) -> f64 {
    debug_assert_eq!(op.dims, 3);
    debug_assert_eq!(f_neighbors.len(), op.neighbor_count());
    let mut q = 0.0;
    for ((rot, frame), f) in op
        .rotated_coeffs
        .iter()
        .zip(&op.frames)
        .zip(f_neighbors)
    {
        q += upwind_coeff_3d(rot, frame, &c) * (f - f_center);
    }
    q
}

/// Per-neighbor effective coefficients q_j with Q = sum q_j (f_j - f_i).
pub fn flux_coefficients(op: &LsOperator, c: [f64; 3]) -> Vec<f64> {
    op.rotated_coeffs
        .iter()
        .zip(&op.frames)
        .map(|(rot, frame)| {
            if op.dims == 2 {
                upwind_coeff_2d(rot, frame, &c)
            } else {
                upwind_coeff_3d(rot, frame, &c)
            }
        })
        .collect()
}

/// Sum of |q_j| for a given convective velocity. The explicit update
/// f - dt Q stays a convex combination while dt <= 1 / max of this sum, so
/// 1 / max over particles and velocity nodes is the exposed stable_dt.
pub fn abs_coeff_sum(op: &LsOperator, c: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for (rot, frame) in op.rotated_coeffs.iter().zip(&op.frames) {
        let q = if op.dims == 2 {
            upwind_coeff_2d(rot, frame, &c)
        } else {
            upwind_coeff_3d(rot, frame, &c)
        };
        acc += q.abs();
    }
    acc
}

/// Scattered-data interpolation at an arbitrary target: weighted LS fit of
/// f ~ a0 + a . (x - target); applying the operator returns a0. Built once
/// per target, then applied per velocity node.
#[derive(Debug, Clone)]
pub struct InterpolationOperator {
    /// Global indices of the neighbors kept after weight truncation.
    pub neighbor_ids: Vec<u32>,
    /// value = sum coeffs_j f_j; the coefficients sum to 1.
    pub coeffs: Vec<f64>,
}

impl InterpolationOperator {
    pub fn apply(&self, f_neighbors: &[f64]) -> f64 {
        debug_assert_eq!(f_neighbors.len(), self.coeffs.len());
        self.coeffs
            .iter()
            .zip(f_neighbors)
            .map(|(c, f)| c * f)
            .sum()
    }
}

/// Build the interpolation operator at `target` from the given neighbors.
/// `tag` identifies the associated particle in deficient-stencil errors.
pub fn build_interpolation(
    target: [f64; 3],
    positions: &[[f64; 3]],
    dims: usize,
    h: f64,
    neighbors: &[u32],
    tag: usize,
) -> Result<InterpolationOperator> {
    debug_assert!(dims == 2 || dims == 3);
    let inv_h = 1.0 / h;

    let mut neighbor_ids = Vec::with_capacity(neighbors.len());
    let mut weights = Vec::with_capacity(neighbors.len());
    let mut offsets = Vec::with_capacity(neighbors.len());
    for &j in neighbors {
        let q = positions[j as usize];
        let mut d = [0.0; 3];
        let mut r_sq = 0.0;
        for a in 0..dims {
            d[a] = (q[a] - target[a]) * inv_h; // h-scaled offsets
            r_sq += d[a] * d[a];
        }
        let w = weight(r_sq.sqrt(), 1.0);
        if w > 0.0 {
            neighbor_ids.push(j);
            weights.push(w);
            offsets.push(d);
        }
    }
    let m = neighbor_ids.len();
    if m < dims + 2 {
        return Err(Error::DeficientStencil { particle: tag });
    }

    // Normal matrix over the basis (1, d_1, .., d_dims).
    let k = dims + 1;
    let mut b = [[0.0; 4]; 4];
    for (w, d) in weights.iter().zip(&offsets) {
        let phi = [1.0, d[0], d[1], d[2]];
        for r in 0..k {
            for c in 0..k {
                b[r][c] += w * phi[r] * phi[c];
            }
        }
    }
    let inv: [[f64; 4]; 4] = if dims == 2 {
        let b3 = [
            [b[0][0], b[0][1], b[0][2]],
            [b[1][0], b[1][1], b[1][2]],
            [b[2][0], b[2][1], b[2][2]],
        ];
        match spd_inverse3(&b3) {
            Some(s) => [
                [s[0][0], s[0][1], s[0][2], 0.0],
                [s[1][0], s[1][1], s[1][2], 0.0],
                [s[2][0], s[2][1], s[2][2], 0.0],
                [0.0, 0.0, 0.0, 0.0],
            ],
            None => return Err(Error::DeficientStencil { particle: tag }),
        }
    } else {
        match spd_inverse4(&b) {
            Some(s) => s,
            None => return Err(Error::DeficientStencil { particle: tag }),
        }
    };

    // a0 = e0^T B^{-1} (sum w f phi)  =>  coeff_j = w_j (B^{-1} row 0) . phi_j
    let row0 = inv[0];
    let coeffs = weights
        .iter()
        .zip(&offsets)
        .map(|(w, d)| {
            let phi = [1.0, d[0], d[1], d[2]];
            let mut acc = 0.0;
            for (r, p) in phi.iter().enumerate().take(k) {
                acc += row0[r] * p;
            }
            w * acc
        })
        .collect();

    Ok(InterpolationOperator {
        neighbor_ids,
        coeffs,
    })
}

/// One-shot interpolation of a scalar field at `target`.
pub fn interpolate_value(
    target: [f64; 3],
    positions: &[[f64; 3]],
    dims: usize,
    h: f64,
    neighbors: &[u32],
    values: &[f64],
    tag: usize,
) -> Result<f64> {
    let op = build_interpolation(target, positions, dims, h, neighbors, tag)?;
    let gathered: Vec<f64> = op
        .neighbor_ids
        .iter()
        .map(|&j| {
            let pos = neighbors.iter().position(|&n| n == j).unwrap();
            values[pos]
        })
        .collect();
    Ok(op.apply(&gathered))
}

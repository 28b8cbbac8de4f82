//! Uniform box grid, piecewise-bilinear nodal fields, coefficient
//! descriptors, and the extension operators that move data between Γ, Ω*,
//! and the box Ω: constant normal extension, reflection extension, and the
//! Dirichlet/Neumann liftings.

use crate::geometry::{SignedGeometry, Vec2};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid spacing is not uniform: hx = {hx}, hy = {hy}")]
    NonUniformSpacing { hx: f64, hy: f64 },
    #[error("point ({x}, {y}) lies outside the box")]
    PointOutsideBox { x: f64, y: f64 },
    #[error("field contains a non-finite value at node {node}")]
    NonFiniteValue { node: usize },
    #[error("Γ clearance {clearance} is below 4h = {four_h}")]
    ClearanceTooSmall { clearance: f64, four_h: f64 },
    #[error("descriptor has no gradient closure")]
    MissingGradient,
}

/// Uniform tensor grid over the box Ω with square cells.
#[derive(Clone, Debug)]
pub struct BoxGrid {
    pub bbox: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

impl BoxGrid {
    pub fn new(bbox: [f64; 4], nx: usize, ny: usize) -> Result<Self, FieldError> {
        let hx = (bbox[1] - bbox[0]) / nx as f64;
        let hy = (bbox[3] - bbox[2]) / ny as f64;
        if (hx - hy).abs() > 1e-12 {
            return Err(FieldError::NonUniformSpacing { hx, hy });
        }
        Ok(BoxGrid { bbox, nx, ny, h: hx })
    }

    /// Grid with spacing as close to `h_target` as the box allows.
    pub fn with_spacing(bbox: [f64; 4], h_target: f64) -> Result<Self, FieldError> {
        let nx = ((bbox[1] - bbox[0]) / h_target).round().max(1.0) as usize;
        let ny = ((bbox[3] - bbox[2]) / h_target).round().max(1.0) as usize;
        Self::new(bbox, nx, ny)
    }

    /// Γ must sit inside Ω with at least 4h of clearance.
    pub fn check_clearance(&self, geom: &SignedGeometry) -> Result<(), FieldError> {
        let c = geom.clearance();
        if c < 4.0 * self.h {
            return Err(FieldError::ClearanceTooSmall {
                clearance: c,
                four_h: 4.0 * self.h,
            });
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_point(&self, idx: usize) -> Vec2 {
        let i = idx % (self.nx + 1);
        let j = idx / (self.nx + 1);
        Vec2::new(
            self.bbox[0] + i as f64 * self.h,
            self.bbox[2] + j as f64 * self.h,
        )
    }

    /// Corner nodes of cell (cx, cy): [bl, br, tl, tr].
    pub fn cell_nodes(&self, cx: usize, cy: usize) -> [usize; 4] {
        [
            self.node_index(cx, cy),
            self.node_index(cx + 1, cy),
            self.node_index(cx, cy + 1),
            self.node_index(cx + 1, cy + 1),
        ]
    }

    pub fn cell_origin(&self, cx: usize, cy: usize) -> Vec2 {
        Vec2::new(
            self.bbox[0] + cx as f64 * self.h,
            self.bbox[2] + cy as f64 * self.h,
        )
    }

    pub fn contains(&self, x: Vec2) -> bool {
        x.x >= self.bbox[0] - 1e-12
            && x.x <= self.bbox[1] + 1e-12
            && x.y >= self.bbox[2] - 1e-12
            && x.y <= self.bbox[3] + 1e-12
    }

    /// Cell containing x and local coordinates in [0, 1]^2.
    pub fn locate(&self, x: Vec2) -> Result<(usize, usize, f64, f64), FieldError> {
        if !self.contains(x) {
            return Err(FieldError::PointOutsideBox { x: x.x, y: x.y });
        }
        let fx = ((x.x - self.bbox[0]) / self.h).clamp(0.0, self.nx as f64 - 1e-9);
        let fy = ((x.y - self.bbox[2]) / self.h).clamp(0.0, self.ny as f64 - 1e-9);
        let cx = (fx as usize).min(self.nx - 1);
        let cy = (fy as usize).min(self.ny - 1);
        Ok((cx, cy, fx - cx as f64, fy - cy as f64))
    }
}

/// Q1 shape functions on the reference cell, ordered [bl, br, tl, tr].
pub fn q1_shape(xi: f64, eta: f64) -> [f64; 4] {
    [
        (1.0 - xi) * (1.0 - eta),
        xi * (1.0 - eta),
        (1.0 - xi) * eta,
        xi * eta,
    ]
}

/// Reference gradients of the Q1 shape functions; divide by h for physical.
pub fn q1_shape_grad(xi: f64, eta: f64) -> [Vec2; 4] {
    [
        Vec2::new(-(1.0 - eta), -(1.0 - xi)),
        Vec2::new(1.0 - eta, -xi),
        Vec2::new(-eta, 1.0 - xi),
        Vec2::new(eta, xi),
    ]
}

/// Scalar field with one value per grid node, interpolated bilinearly.
#[derive(Clone, Debug)]
pub struct NodalField {
    pub grid: Arc<BoxGrid>,
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn new(grid: Arc<BoxGrid>, values: Vec<f64>) -> Result<Self, FieldError> {
        assert_eq!(values.len(), grid.n_nodes());
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFiniteValue { node });
        }
        Ok(NodalField { grid, values })
    }

    pub fn zeros(grid: Arc<BoxGrid>) -> Self {
        let n = grid.n_nodes();
        NodalField {
            grid,
            values: vec![0.0; n],
        }
    }

    /// Sample a descriptor at the grid nodes.
    pub fn inject(grid: Arc<BoxGrid>, geom: &SignedGeometry, data: &ScalarData) -> Self {
        let values = (0..grid.n_nodes())
            .map(|i| data.eval_bulk(grid.node_point(i), geom))
            .collect();
        NodalField { grid, values }
    }

    pub fn interpolate(&self, x: Vec2) -> Result<f64, FieldError> {
        let (cx, cy, xi, eta) = self.grid.locate(x)?;
        let nodes = self.grid.cell_nodes(cx, cy);
        let n = q1_shape(xi, eta);
        Ok((0..4).map(|k| n[k] * self.values[nodes[k]]).sum())
    }

    /// Exact gradient of the bilinear patch containing x.
    pub fn gradient(&self, x: Vec2) -> Result<Vec2, FieldError> {
        let (cx, cy, xi, eta) = self.grid.locate(x)?;
        let nodes = self.grid.cell_nodes(cx, cy);
        let dn = q1_shape_grad(xi, eta);
        let mut g = Vec2::new(0.0, 0.0);
        for k in 0..4 {
            g = g + dn[k].scale(self.values[nodes[k]] / self.grid.h);
        }
        Ok(g)
    }
}

/// Radial profile R(r), polynomial or constant, with analytic derivatives.
#[derive(Clone, Debug)]
pub enum RadialFn {
    Const(f64),
    /// Coefficients by ascending power of r.
    Poly(Vec<f64>),
}

impl RadialFn {
    pub fn from_name(name: &str) -> Option<RadialFn> {
        match name {
            "one" => Some(RadialFn::Const(1.0)),
            "zero" => Some(RadialFn::Const(0.0)),
            _ => None,
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            RadialFn::Const(c) => *c,
            RadialFn::Poly(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * r + ck),
        }
    }

    pub fn deriv(&self, r: f64) -> f64 {
        match self {
            RadialFn::Const(_) => 0.0,
            RadialFn::Poly(c) => {
                let mut acc = 0.0;
                for k in (1..c.len()).rev() {
                    acc = acc * r + k as f64 * c[k];
                }
                acc
            }
        }
    }

    pub fn deriv2(&self, r: f64) -> f64 {
        match self {
            RadialFn::Const(_) => 0.0,
            RadialFn::Poly(c) => {
                let mut acc = 0.0;
                for k in (2..c.len()).rev() {
                    acc = acc * r + (k * (k - 1)) as f64 * c[k];
                }
                acc
            }
        }
    }
}

pub type BulkFn = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>;

/// Pointwise closure with an optional gradient closure.
#[derive(Clone)]
pub struct ClosureData {
    pub f: BulkFn,
    pub grad: Option<GradFn>,
}

/// Coefficient or data field, evaluable in the bulk or on Γ as appropriate.
#[derive(Clone)]
pub enum ScalarData {
    Constant(f64),
    /// Σ_k R_k(r) cos(kθ) about the geometry center.
    RadialModes(Vec<(u32, RadialFn)>),
    /// Surface data on Γ: Σ_k amp_k cos(kθ) in the boundary parameter angle.
    AngularFourier(Vec<(u32, f64)>),
    Closure(ClosureData),
}

impl std::fmt::Debug for ScalarData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScalarData::Constant(c) => write!(f, "Constant({c})"),
            ScalarData::RadialModes(m) => write!(f, "RadialModes({m:?})"),
            ScalarData::AngularFourier(m) => write!(f, "AngularFourier({m:?})"),
            ScalarData::Closure(c) => {
                write!(f, "Closure(grad: {})", if c.grad.is_some() { "yes" } else { "no" })
            }
        }
    }
}

impl ScalarData {
    pub fn radial(f: RadialFn) -> Self {
        ScalarData::RadialModes(vec![(0, f)])
    }

    pub fn closure(f: impl Fn(Vec2) -> f64 + Send + Sync + 'static, grad: Option<GradFn>) -> Self {
        ScalarData::Closure(ClosureData {
            f: Arc::new(f),
            grad,
        })
    }

    pub fn eval_bulk(&self, x: Vec2, geom: &SignedGeometry) -> f64 {
        match self {
            ScalarData::Constant(c) => *c,
            ScalarData::RadialModes(modes) => {
                let rel = x - geom.center;
                let r = rel.norm();
                let theta = rel.y.atan2(rel.x);
                modes
                    .iter()
                    .map(|(k, rf)| rf.eval(r) * (*k as f64 * theta).cos())
                    .sum()
            }
            ScalarData::AngularFourier(_) => {
                panic!("surface data must be extended before bulk evaluation")
            }
            ScalarData::Closure(c) => (c.f)(x),
        }
    }

    pub fn gradient_bulk(&self, x: Vec2, geom: &SignedGeometry) -> Result<Vec2, FieldError> {
        match self {
            ScalarData::Constant(_) => Ok(Vec2::new(0.0, 0.0)),
            ScalarData::RadialModes(_) => {
                let rel = x - geom.center;
                let r = rel.norm();
                if r < 1e-10 {
                    // central differences at the polar singularity
                    let h = 1e-7;
                    return Ok(Vec2::new(
                        (self.eval_bulk(x + Vec2::new(h, 0.0), geom)
                            - self.eval_bulk(x - Vec2::new(h, 0.0), geom))
                            / (2.0 * h),
                        (self.eval_bulk(x + Vec2::new(0.0, h), geom)
                            - self.eval_bulk(x - Vec2::new(0.0, h), geom))
                            / (2.0 * h),
                    ));
                }
                let modes = match self {
                    ScalarData::RadialModes(m) => m,
                    _ => unreachable!(),
                };
                let theta = rel.y.atan2(rel.x);
                let er = rel.scale(1.0 / r);
                let et = er.perp();
                let mut g = Vec2::new(0.0, 0.0);
                for (k, rf) in modes {
                    let kf = *k as f64;
                    let dr = rf.deriv(r) * (kf * theta).cos();
                    let dt = -rf.eval(r) * kf * (kf * theta).sin() / r;
                    g = g + er.scale(dr) + et.scale(dt);
                }
                Ok(g)
            }
            ScalarData::AngularFourier(_) => Err(FieldError::MissingGradient),
            ScalarData::Closure(c) => c
                .grad
                .as_ref()
                .map(|g| g(x))
                .ok_or(FieldError::MissingGradient),
        }
    }

    /// Value at a point of Γ.
    pub fn eval_on_surface(&self, p: Vec2, geom: &SignedGeometry) -> f64 {
        match self {
            ScalarData::AngularFourier(modes) => {
                let theta = geom.param_angle(p);
                modes
                    .iter()
                    .map(|(k, amp)| amp * (*k as f64 * theta).cos())
                    .sum()
            }
            _ => self.eval_bulk(p, geom),
        }
    }

    /// Derivative in the boundary parameter angle at a point of Γ.
    pub fn dtheta_on_surface(&self, p: Vec2, geom: &SignedGeometry) -> f64 {
        let theta = geom.param_angle(p);
        match self {
            ScalarData::Constant(_) => 0.0,
            ScalarData::AngularFourier(modes) => modes
                .iter()
                .map(|(k, amp)| -amp * *k as f64 * (*k as f64 * theta).sin())
                .sum(),
            _ => {
                let h = 1e-6;
                let f = |t: f64| self.eval_on_surface(geom.boundary_point(t), geom);
                (f(theta + h) - f(theta - h)) / (2.0 * h)
            }
        }
    }

    /// Surface gradient ∇_Γ at a point of Γ (tangential vector).
    pub fn surface_gradient(&self, p: Vec2, geom: &SignedGeometry) -> Vec2 {
        let dtheta = self.dtheta_on_surface(p, geom);
        let speed = geom.boundary_speed(geom.param_angle(p));
        let tau = geom.normal(p).perp();
        tau.scale(dtheta / speed)
    }

    /// Check a pointwise lower bound on a dense sampling grid.
    pub fn validate_min(
        &self,
        geom: &SignedGeometry,
        threshold: f64,
        samples: usize,
    ) -> Result<(), String> {
        let [xmin, xmax, ymin, ymax] = geom.bbox;
        let n = (samples as f64).sqrt().ceil() as usize;
        for j in 0..=n {
            for i in 0..=n {
                let x = Vec2::new(
                    xmin + (xmax - xmin) * i as f64 / n as f64,
                    ymin + (ymax - ymin) * j as f64 / n as f64,
                );
                let v = self.eval_bulk(x, geom);
                if !(v >= threshold) {
                    return Err(format!(
                        "value {v} at ({}, {}) is below the bound {threshold}",
                        x.x, x.y
                    ));
                }
            }
        }
        Ok(())
    }
}

/// 2x2 matrix coefficient; `Iso` is α(x)·I.
#[derive(Clone, Debug)]
pub enum MatrixData {
    Iso(ScalarData),
    Full([[f64; 2]; 2]),
}

impl MatrixData {
    pub fn identity() -> Self {
        MatrixData::Iso(ScalarData::Constant(1.0))
    }

    pub fn eval(&self, x: Vec2, geom: &SignedGeometry) -> [[f64; 2]; 2] {
        match self {
            MatrixData::Iso(a) => {
                let v = a.eval_bulk(x, geom);
                [[v, 0.0], [0.0, v]]
            }
            MatrixData::Full(m) => *m,
        }
    }

    /// ν·Aν at a surface point.
    pub fn normal_quadratic(&self, p: Vec2, geom: &SignedGeometry) -> f64 {
        let nu = geom.normal(p);
        let m = self.eval(p, geom);
        nu.x * (m[0][0] * nu.x + m[0][1] * nu.y) + nu.y * (m[1][0] * nu.x + m[1][1] * nu.y)
    }
}

/// C1 cutoff: 1 on [0, 1-w], 0 on [1, ∞), cubic smoothstep between.
pub fn cutoff(t: f64, w: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 - w {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        let u = (t - (1.0 - w)) / w;
        1.0 - (3.0 * u * u - 2.0 * u * u * u)
    }
}

/// d(cutoff)/dt, odd in t.
pub fn cutoff_deriv(t: f64, w: f64) -> f64 {
    let s = if t < 0.0 { -1.0 } else { 1.0 };
    let t = t.abs();
    if t <= 1.0 - w || t >= 1.0 {
        0.0
    } else {
        let u = (t - (1.0 - w)) / w;
        s * (-(6.0 * u - 6.0 * u * u) / w)
    }
}

/// d²(cutoff)/dt², even in t.
pub fn cutoff_deriv2(t: f64, w: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 - w || t >= 1.0 {
        0.0
    } else {
        let u = (t - (1.0 - w)) / w;
        -(6.0 - 12.0 * u) / (w * w)
    }
}

const DEFAULT_CUTOFF_WIDTH: f64 = 0.5;

/// Default tubular half-width for extensions: safely inside the reach and
/// the box clearance for every ε in a sweep.
pub fn default_eta(geom: &SignedGeometry) -> f64 {
    (geom.reach() / 2.0).min(0.25 * geom.clearance())
}

/// Constant extension in the normal direction: g^Ec(x) = ζ(|d|/η) g(p(x)).
///
/// Constants extend globally as themselves (the far field of the extension
/// is arbitrary, and this choice keeps compatible constant data exact).
/// The returned closure carries the analytic gradient
/// ζ'·sgn(d)/η·g(p)·ν + ζ·(I - dH)∇_Γ g(p).
pub fn constant_normal_extension(
    g: &ScalarData,
    geom: &Arc<SignedGeometry>,
    eta: f64,
    cutoff_width: Option<f64>,
) -> ScalarData {
    if let ScalarData::Constant(c) = g {
        return ScalarData::Constant(*c);
    }
    let w = cutoff_width.unwrap_or(DEFAULT_CUTOFF_WIDTH);
    let gm = geom.clone();
    let g1 = g.clone();
    let gm2 = geom.clone();
    let g2 = g.clone();
    let f = move |x: Vec2| -> f64 {
        let d = gm.sdf(x);
        if d.abs() >= eta {
            return 0.0;
        }
        let p = gm.closest_point_unchecked(x);
        cutoff(d.abs() / eta, w) * g1.eval_on_surface(p, &gm)
    };
    let grad = move |x: Vec2| -> Vec2 {
        let d = gm2.sdf(x);
        if d.abs() >= eta {
            return Vec2::new(0.0, 0.0);
        }
        let p = gm2.closest_point_unchecked(x);
        let nu = gm2.normal(p);
        let z = cutoff(d.abs() / eta, w);
        let dz = cutoff_deriv(d / eta, w) / eta;
        let gp = g2.eval_on_surface(p, &gm2);
        let surf = g2.surface_gradient(p, &gm2);
        let kappa = gm2.curvature(p);
        // (I - dH) ∇_Γ g = ∇_Γ g / (1 + dκ) since ∇_Γ g is tangent
        nu.scale(dz * gp) + surf.scale(z / (1.0 + d * kappa))
    };
    ScalarData::Closure(ClosureData {
        f: Arc::new(f),
        grad: Some(Arc::new(grad)),
    })
}

/// Extension by reflection across Γ: u(x) inside, u(p(x) - min(d, η)ν)
/// outside (the reflection depth is clamped at η so the mirror point stays
/// inside the closure of Ω*). Continuous across Γ.
pub fn reflection_extension(u: &ScalarData, geom: &Arc<SignedGeometry>, eta: f64) -> ScalarData {
    if let ScalarData::Constant(c) = u {
        return ScalarData::Constant(*c);
    }
    let gm = geom.clone();
    let u1 = u.clone();
    let f = move |x: Vec2| -> f64 {
        let d = gm.sdf(x);
        if d <= 0.0 {
            return u1.eval_bulk(x, &gm);
        }
        let p = gm.closest_point_unchecked(x);
        let nu = gm.normal(p);
        let depth = d.min(eta);
        u1.eval_bulk(p + nu.scale(-depth), &gm)
    };
    ScalarData::Closure(ClosureData {
        f: Arc::new(f),
        grad: None,
    })
}

/// Lifting of Dirichlet data: g̃(x) = ζ(|d|/η) g(p(x)), supported in Tub^η,
/// with trace g on Γ. Unlike the constant normal extension this always
/// applies the cutoff, so the lifting is compactly supported.
pub fn dirichlet_lifting(g: &ScalarData, geom: &Arc<SignedGeometry>, eta: f64) -> ScalarData {
    let gated = match g.clone() {
        // keep the cutoff even for constants
        ScalarData::Constant(c) => ScalarData::AngularFourier(vec![(0, c)]),
        other => other,
    };
    constant_normal_extension(&gated, geom, eta, None)
}

/// Lifting of Neumann (conormal) data: h(x) = d·ζ(|d|/η)·[g/(ν·Aν)](p(x)),
/// which satisfies A∇h·ν = g on Γ. Value and gradient come from the chain
/// rule pieces (d, ν, κ, ζ); the tangential derivative of the coefficient
/// is differenced in the boundary parameter.
pub fn neumann_lifting(
    g: &ScalarData,
    a_mat: &MatrixData,
    geom: &Arc<SignedGeometry>,
    eta: f64,
) -> ScalarData {
    let w = DEFAULT_CUTOFF_WIDTH;
    fn coeff(p: Vec2, gm: &SignedGeometry, g: &ScalarData, a: &MatrixData) -> f64 {
        g.eval_on_surface(p, gm) / a.normal_quadratic(p, gm)
    }
    let gm = geom.clone();
    let g1 = g.clone();
    let a1 = a_mat.clone();
    let gm2 = geom.clone();
    let g2 = g.clone();
    let a2 = a_mat.clone();
    let f = move |x: Vec2| -> f64 {
        let d = gm.sdf(x);
        if d.abs() >= eta {
            return 0.0;
        }
        let p = gm.closest_point_unchecked(x);
        d * cutoff(d.abs() / eta, w) * coeff(p, &gm, &g1, &a1)
    };
    let grad = move |x: Vec2| -> Vec2 {
        let d = gm2.sdf(x);
        if d.abs() >= eta {
            return Vec2::new(0.0, 0.0);
        }
        let p = gm2.closest_point_unchecked(x);
        let nu = gm2.normal(p);
        let z = cutoff(d.abs() / eta, w);
        let dz = cutoff_deriv(d / eta, w) / eta;
        let cp = coeff(p, &gm2, &g2, &a2);
        let theta = gm2.param_angle(p);
        let hq = 1e-6;
        let cm = coeff(gm2.boundary_point(theta - hq), &gm2, &g2, &a2);
        let cl = coeff(gm2.boundary_point(theta + hq), &gm2, &g2, &a2);
        let ds_c = (cl - cm) / (2.0 * hq * gm2.boundary_speed(theta));
        let tau = nu.perp();
        let kappa = gm2.curvature(p);
        nu.scale((z + d * dz) * cp) + tau.scale(d * z * ds_c / (1.0 + d * kappa))
    };
    ScalarData::Closure(ClosureData {
        f: Arc::new(f),
        grad: Some(Arc::new(grad)),
    })
}

/// ∇·(A∇h) at x by fourth-order central differences of the analytic flux
/// A∇h. The flux is smooth, so the only error is the O(step^4) truncation.
pub fn flux_divergence(
    h_grad: &GradFn,
    a_mat: &MatrixData,
    geom: &SignedGeometry,
    x: Vec2,
    step: f64,
) -> f64 {
    let flux = |y: Vec2| -> Vec2 {
        let g = h_grad(y);
        let m = a_mat.eval(y, geom);
        Vec2::new(m[0][0] * g.x + m[0][1] * g.y, m[1][0] * g.x + m[1][1] * g.y)
    };
    let s = step;
    let fx = |t: f64| flux(Vec2::new(x.x + t, x.y)).x;
    let fy = |t: f64| flux(Vec2::new(x.x, x.y + t)).y;
    let d4 = |f: &dyn Fn(f64) -> f64| (-f(2.0 * s) + 8.0 * f(s) - 8.0 * f(-s) + f(-2.0 * s)) / (12.0 * s);
    d4(&fx) + d4(&fy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const BOX: [f64; 4] = [-2.0, 2.0, -2.0, 2.0];

    fn circle() -> Arc<SignedGeometry> {
        Arc::new(SignedGeometry::circle(Vec2::new(0.0, 0.0), 1.0, BOX).unwrap())
    }

    fn cos_theta() -> ScalarData {
        ScalarData::AngularFourier(vec![(1, 1.0)])
    }

    #[test]
    fn grid_spacing_must_be_uniform() {
        assert!(BoxGrid::new(BOX, 10, 10).is_ok());
        assert!(matches!(
            BoxGrid::new(BOX, 10, 20),
            Err(FieldError::NonUniformSpacing { .. })
        ));
    }

    #[test]
    fn clearance_check() {
        let g = circle();
        let grid = BoxGrid::new(BOX, 16, 16).unwrap(); // h = 0.25, 4h = 1.0 = clearance
        assert!(grid.check_clearance(&g).is_ok());
        let coarse = BoxGrid::new(BOX, 8, 8).unwrap();
        assert!(coarse.check_clearance(&g).is_err());
    }

    #[test]
    fn interpolation_reproduces_constants_and_coordinates() {
        let grid = Arc::new(BoxGrid::new(BOX, 37, 37).unwrap());
        let g = circle();
        let c = NodalField::inject(grid.clone(), &g, &ScalarData::Constant(3.25));
        let xf = NodalField::inject(grid.clone(), &g, &ScalarData::closure(|p| p.x, None));
        let mut rng = SplitMix64::new(5);
        for _ in 0..200 {
            let x = Vec2::new(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
            assert!((c.interpolate(x).unwrap() - 3.25).abs() < 1e-13);
            assert!((xf.interpolate(x).unwrap() - x.x).abs() < 1e-13);
        }
        assert!(c.interpolate(Vec2::new(2.5, 0.0)).is_err());
    }

    #[test]
    fn interpolation_second_order_for_smooth_fields() {
        let g = circle();
        let mut errs = Vec::new();
        for n in [100usize, 200, 400] {
            let grid = Arc::new(BoxGrid::new(BOX, n, n).unwrap());
            let f = NodalField::inject(grid, &g, &ScalarData::closure(|p| p.x.sin(), None));
            let mut worst: f64 = 0.0;
            let mut rng = SplitMix64::new(77);
            for _ in 0..500 {
                let x = Vec2::new(rng.uniform(-1.9, 1.9), rng.uniform(-1.9, 1.9));
                worst = worst.max((f.interpolate(x).unwrap() - x.x.sin()).abs());
            }
            errs.push(worst);
        }
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
        assert!(errs[1] / errs[2] > 3.0, "{errs:?}");
    }

    #[test]
    fn constant_extension_examples() {
        let g = circle();
        let eta = 0.2;
        let one = constant_normal_extension(&ScalarData::Constant(1.0), &g, eta, None);
        assert_eq!(one.eval_bulk(Vec2::new(1.05, 0.0), &g), 1.0);
        assert_eq!(one.eval_bulk(Vec2::new(0.0, 0.0), &g), 1.0);

        let ext = constant_normal_extension(&cos_theta(), &g, eta, None);
        assert!((ext.eval_bulk(Vec2::new(1.05, 0.0), &g) - 1.0).abs() < 1e-12);
        assert_eq!(ext.eval_bulk(Vec2::new(1.5, 0.0), &g), 0.0);
    }

    #[test]
    fn constant_extension_normal_derivative_vanishes() {
        let g = circle();
        let eta = 0.2;
        let ext = constant_normal_extension(&cos_theta(), &g, eta, None);
        let mut rng = SplitMix64::new(1234);
        for _ in 0..100 {
            let t = rng.uniform(0.0, 2.0 * PI);
            let s = rng.uniform(-eta / 2.0 + 1e-4, eta / 2.0 - 1e-4);
            let p = g.boundary_point(t);
            let x = p + g.normal(p).scale(s);
            let h = 1e-5;
            let nu = g.normal(p);
            let fd = (ext.eval_bulk(x + nu.scale(h), &g) - ext.eval_bulk(x + nu.scale(-h), &g))
                / (2.0 * h);
            assert!(fd.abs() < 1e-5, "normal derivative {fd} at t={t}, s={s}");
            let ga = ext.gradient_bulk(x, &g).unwrap();
            let fdx = (ext.eval_bulk(x + Vec2::new(h, 0.0), &g)
                - ext.eval_bulk(x - Vec2::new(h, 0.0), &g))
                / (2.0 * h);
            let fdy = (ext.eval_bulk(x + Vec2::new(0.0, h), &g)
                - ext.eval_bulk(x - Vec2::new(0.0, h), &g))
                / (2.0 * h);
            assert!((ga.x - fdx).abs() < 1e-6 && (ga.y - fdy).abs() < 1e-6);
        }
    }

    #[test]
    fn reflection_examples() {
        let g = circle();
        let usq = ScalarData::closure(|p| p.dot(p), None);
        let refl = reflection_extension(&usq, &g, 0.5);
        assert!((refl.eval_bulk(Vec2::new(1.2, 0.0), &g) - 0.64).abs() < 1e-12);
        let c = reflection_extension(&ScalarData::Constant(3.0), &g, 0.5);
        assert_eq!(c.eval_bulk(Vec2::new(1.9, 1.9), &g), 3.0);
        for i in 0..64 {
            let t = 2.0 * PI * i as f64 / 64.0;
            let p = g.boundary_point(t);
            let nu = g.normal(p);
            let inner = refl.eval_bulk(p + nu.scale(-1e-9), &g);
            let outer = refl.eval_bulk(p + nu.scale(1e-9), &g);
            assert!((inner - outer).abs() < 1e-7);
        }
        // clamped depth far outside: reflection of the η-level point
        let far = refl.eval_bulk(Vec2::new(1.9, 0.0), &g);
        assert!((far - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_lifting_examples() {
        let g = circle();
        let eta = 0.25;
        let lift = dirichlet_lifting(&ScalarData::Constant(1.0), &g, eta);
        for i in 0..16 {
            let t = 2.0 * PI * i as f64 / 16.0;
            let p = g.boundary_point(t);
            assert!((lift.eval_bulk(p, &g) - 1.0).abs() < 1e-13);
        }
        assert_eq!(lift.eval_bulk(Vec2::new(1.3, 0.0), &g), 0.0);
        assert_eq!(lift.eval_bulk(Vec2::new(0.0, 0.0), &g), 0.0);
    }

    #[test]
    fn dirichlet_lifting_h1_norm_stabilizes_under_refinement() {
        let g = circle();
        let lift = dirichlet_lifting(&cos_theta(), &g, 0.25);
        let mut norms = Vec::new();
        for n in [200usize, 400, 800] {
            let grid = Arc::new(BoxGrid::new(BOX, n, n).unwrap());
            let f = NodalField::inject(grid.clone(), &g, &lift);
            let mut acc = 0.0;
            for cy in 0..grid.ny {
                for cx in 0..grid.nx {
                    let o = grid.cell_origin(cx, cy);
                    let m = o + Vec2::new(grid.h / 2.0, grid.h / 2.0);
                    let v = f.interpolate(m).unwrap();
                    let gr = f.gradient(m).unwrap();
                    acc += (v * v + gr.dot(gr)) * grid.h * grid.h;
                }
            }
            norms.push(acc.sqrt());
        }
        let r1 = norms[1] / norms[0];
        let r2 = norms[2] / norms[1];
        assert!((r1 - 1.0).abs() < 0.02, "{norms:?}");
        assert!((r2 - 1.0).abs() < 0.02, "{norms:?}");
    }

    #[test]
    fn neumann_lifting_examples() {
        let g = circle();
        let eta = 0.25;
        let a = MatrixData::identity();
        let h = neumann_lifting(&ScalarData::Constant(1.0), &a, &g, eta);
        let e = 1e-4;
        let fd = (h.eval_bulk(Vec2::new(1.0 + e, 0.0), &g) - h.eval_bulk(Vec2::new(1.0 - e, 0.0), &g))
            / (2.0 * e);
        assert!((fd - 1.0).abs() < 1e-6, "dh/dr = {fd}");
        assert!(h.eval_bulk(Vec2::new(1.0, 0.0), &g).abs() < 1e-14);
        let z = neumann_lifting(&ScalarData::Constant(0.0), &a, &g, eta);
        assert_eq!(z.eval_bulk(Vec2::new(1.1, 0.3), &g), 0.0);
    }

    #[test]
    fn neumann_lifting_gradient_and_divergence() {
        let g = circle();
        let eta = 0.25;
        let a = MatrixData::identity();
        let h = neumann_lifting(&cos_theta(), &a, &g, eta);
        let grad = match &h {
            ScalarData::Closure(c) => c.grad.clone().unwrap(),
            _ => unreachable!(),
        };
        let mut rng = SplitMix64::new(8);
        for _ in 0..50 {
            let t = rng.uniform(0.0, 2.0 * PI);
            let s = rng.uniform(-0.9 * eta, 0.9 * eta);
            let p = g.boundary_point(t);
            let x = p + g.normal(p).scale(s);
            let e = 1e-5;
            let fdx = (h.eval_bulk(x + Vec2::new(e, 0.0), &g) - h.eval_bulk(x - Vec2::new(e, 0.0), &g))
                / (2.0 * e);
            let fdy = (h.eval_bulk(x + Vec2::new(0.0, e), &g) - h.eval_bulk(x - Vec2::new(0.0, e), &g))
                / (2.0 * e);
            let ga = grad(x);
            assert!((ga.x - fdx).abs() < 2e-6, "at t={t} s={s}: {} vs {fdx}", ga.x);
            assert!((ga.y - fdy).abs() < 2e-6);
        }
        // polar closed form for mode-1 data inside the flat-cutoff zone:
        // h = (r-1) cos θ, so ∇·∇h = (ρ'' + ρ'/r - ρ/r²) cos θ with ρ = r-1
        let x = Vec2::new(1.05, 0.0);
        let div = flux_divergence(&grad, &a, &g, x, 1e-3);
        let r: f64 = 1.05;
        let exact = 1.0 / r - (r - 1.0) / (r * r);
        assert!((div - exact).abs() < 1e-8, "{div} vs {exact}");
    }

    #[test]
    fn radial_poly_eval_and_deriv() {
        let f = RadialFn::Poly(vec![0.0, 9.0, 0.0, -1.0]); // 9r - r^3
        assert!((f.eval(2.0) - 10.0).abs() < 1e-14);
        assert!((f.deriv(2.0) - (9.0 - 12.0)).abs() < 1e-14);
    }

    #[test]
    fn validate_min_detects_violation() {
        let g = circle();
        assert!(ScalarData::Constant(1.0).validate_min(&g, 0.5, 10_000).is_ok());
        let bad = ScalarData::closure(|p| p.x, None);
        assert!(bad.validate_min(&g, 0.0, 10_000).is_err());
    }

    proptest! {
        #[test]
        fn bilinear_reproduces_affine(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64,
                                      px in -1.99..1.99f64, py in -1.99..1.99f64) {
            let grid = Arc::new(BoxGrid::new(BOX, 23, 23).unwrap());
            let g = circle();
            let data = ScalarData::closure(move |p| a + b * p.x + c * p.y, None);
            let f = NodalField::inject(grid, &g, &data);
            let x = Vec2::new(px, py);
            let exact = a + b * px + c * py;
            prop_assert!((f.interpolate(x).unwrap() - exact).abs() < 1e-11);
            let gr = f.gradient(x).unwrap();
            prop_assert!((gr.x - b).abs() < 1e-10 && (gr.y - c).abs() < 1e-10);
        }
    }
}

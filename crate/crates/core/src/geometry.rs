//! Analytic signed-distance geometry of a closed curve Γ inside a box Ω.
//!
//! Provides the signed distance d (negative inside Ω*), the closest point
//! operator p(x), outward normals, the distance Hessian, and quadrature
//! rules over the tubular band |d| < η and over Γ itself.

use thiserror::Error;

/// 2D point / vector with just the arithmetic the solver needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
    /// Counterclockwise 90-degree rotation.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("curve does not lie strictly inside the box (clearance {clearance})")]
    GammaTouchesBoundary { clearance: f64 },
    #[error("geometry parameters are degenerate: {0}")]
    DegenerateParameters(String),
    #[error("query at signed distance {d} is within 1e-9 of the medial axis")]
    MedialAxis { d: f64 },
    #[error("query at signed distance {d} exceeds 0.99 * reach = {limit}")]
    BeyondReach { d: f64, limit: f64 },
    #[error("tubular half-width {eta} is not below the reach {reach}")]
    EtaExceedsReach { eta: f64, reach: f64 },
    #[error("closest-point iteration did not converge after {iters} iterations")]
    NonConvergence { iters: usize },
}

#[derive(Clone, Copy, Debug)]
pub enum GeomKind {
    Circle { radius: f64 },
    Ellipse { radii: (f64, f64) },
}

/// Analytic description of Γ: a circle or an axis-aligned ellipse centered
/// at `center`, embedded in the box `bbox = [xmin, xmax, ymin, ymax]`.
#[derive(Clone, Debug)]
pub struct SignedGeometry {
    pub kind: GeomKind,
    pub center: Vec2,
    pub bbox: [f64; 4],
}

const ELLIPSE_TOL: f64 = 1e-13;
const ELLIPSE_MAX_ITER: usize = 50;

impl SignedGeometry {
    pub fn circle(center: Vec2, radius: f64, bbox: [f64; 4]) -> Result<Self, GeometryError> {
        if !(radius > 0.0) {
            return Err(GeometryError::DegenerateParameters(format!(
                "radius {radius} must be positive"
            )));
        }
        let g = Self {
            kind: GeomKind::Circle { radius },
            center,
            bbox,
        };
        g.validate_clearance()?;
        Ok(g)
    }

    pub fn ellipse(center: Vec2, radii: (f64, f64), bbox: [f64; 4]) -> Result<Self, GeometryError> {
        if !(radii.0 > 0.0 && radii.1 > 0.0) {
            return Err(GeometryError::DegenerateParameters(format!(
                "radii {radii:?} must be positive"
            )));
        }
        let g = Self {
            kind: GeomKind::Ellipse { radii },
            center,
            bbox,
        };
        g.validate_clearance()?;
        Ok(g)
    }

    fn validate_clearance(&self) -> Result<(), GeometryError> {
        let c = self.clearance();
        if c <= 0.0 {
            return Err(GeometryError::GammaTouchesBoundary { clearance: c });
        }
        Ok(())
    }

    /// Minimal distance from Γ to the box boundary (exact for axis-aligned Γ).
    pub fn clearance(&self) -> f64 {
        let (ax, ay) = match self.kind {
            GeomKind::Circle { radius } => (radius, radius),
            GeomKind::Ellipse { radii } => radii,
        };
        let [xmin, xmax, ymin, ymax] = self.bbox;
        let dx = (self.center.x - ax - xmin).min(xmax - (self.center.x + ax));
        let dy = (self.center.y - ay - ymin).min(ymax - (self.center.y + ay));
        dx.min(dy)
    }

    /// Largest η for which the closest-point projection is single-valued.
    pub fn reach(&self) -> f64 {
        match self.kind {
            GeomKind::Circle { radius } => radius,
            GeomKind::Ellipse { radii: (a, b) } => {
                let lo = a.min(b);
                let hi = a.max(b);
                lo * lo / hi
            }
        }
    }

    /// Signed distance to Γ: negative inside Ω*, zero on Γ, positive outside.
    pub fn sdf(&self, x: Vec2) -> f64 {
        match self.kind {
            GeomKind::Circle { radius } => (x - self.center).norm() - radius,
            GeomKind::Ellipse { radii } => {
                let (d, _) = self.ellipse_signed_distance(radii, x);
                d
            }
        }
    }

    /// Closest point p(x) on Γ. Interior queries are refused beyond
    /// 0.99 * reach (that is where the medial axis lives); exterior queries
    /// are always valid because Γ is convex.
    pub fn closest_point(&self, x: Vec2) -> Result<Vec2, GeometryError> {
        let d = self.sdf(x);
        self.guard_projection(d)?;
        Ok(self.closest_point_unchecked(x))
    }

    fn guard_projection(&self, d: f64) -> Result<(), GeometryError> {
        let limit = 0.99 * self.reach();
        if d < 0.0 && -d >= limit {
            return Err(GeometryError::BeyondReach { d, limit });
        }
        Ok(())
    }

    pub(crate) fn closest_point_unchecked(&self, x: Vec2) -> Vec2 {
        match self.kind {
            GeomKind::Circle { radius } => {
                let r = x - self.center;
                let n = r.norm();
                if n < 1e-300 {
                    // center: arbitrary direction, callers guard against this
                    return self.center + Vec2::new(radius, 0.0);
                }
                self.center + r.scale(radius / n)
            }
            GeomKind::Ellipse { radii } => {
                let (_, p) = self.ellipse_signed_distance(radii, x);
                p
            }
        }
    }

    /// Outward unit normal at a point of Γ.
    pub fn normal(&self, p: Vec2) -> Vec2 {
        let r = p - self.center;
        match self.kind {
            GeomKind::Circle { .. } => {
                let n = r.norm();
                r.scale(1.0 / n)
            }
            GeomKind::Ellipse { radii: (a, b) } => {
                let g = Vec2::new(r.x / (a * a), r.y / (b * b));
                g.scale(1.0 / g.norm())
            }
        }
    }

    /// Curvature of Γ at a boundary point (positive for our convex curves).
    pub fn curvature(&self, p: Vec2) -> f64 {
        match self.kind {
            GeomKind::Circle { radius } => 1.0 / radius,
            GeomKind::Ellipse { radii: (a, b) } => {
                let r = p - self.center;
                // p = (a cos t, b sin t)
                let ct = r.x / a;
                let st = r.y / b;
                a * b / (a * a * st * st + b * b * ct * ct).powf(1.5)
            }
        }
    }

    /// Parameter angle of a boundary point: p = center + (a cos t, b sin t).
    pub fn param_angle(&self, p: Vec2) -> f64 {
        let r = p - self.center;
        match self.kind {
            GeomKind::Circle { .. } => r.y.atan2(r.x),
            GeomKind::Ellipse { radii: (a, b) } => (r.y / b).atan2(r.x / a),
        }
    }

    /// Boundary point at parameter angle t.
    pub fn boundary_point(&self, t: f64) -> Vec2 {
        let (a, b) = match self.kind {
            GeomKind::Circle { radius } => (radius, radius),
            GeomKind::Ellipse { radii } => radii,
        };
        self.center + Vec2::new(a * t.cos(), b * t.sin())
    }

    /// Arclength speed |q'(t)| of the parameterization at angle t.
    pub fn boundary_speed(&self, t: f64) -> f64 {
        let (a, b) = match self.kind {
            GeomKind::Circle { radius } => (radius, radius),
            GeomKind::Ellipse { radii } => radii,
        };
        let (s, c) = t.sin_cos();
        (a * a * s * s + b * b * c * c).sqrt()
    }

    /// Hessian of the signed distance at x (symmetric 2x2).
    ///
    /// In 2D the only nonzero eigenvalue is κ(p)/(1 + d·κ(p)) with
    /// eigenvector tangent to Γ at p = p(x).
    pub fn sdf_hessian(&self, x: Vec2) -> Result<[[f64; 2]; 2], GeometryError> {
        let d = self.sdf(x);
        self.guard_projection(d)?;
        let p = self.closest_point_unchecked(x);
        let nu = self.normal(p);
        let tau = nu.perp();
        let kappa = self.curvature(p);
        let lam = kappa / (1.0 + d * kappa);
        Ok([
            [lam * tau.x * tau.x, lam * tau.x * tau.y],
            [lam * tau.x * tau.y, lam * tau.y * tau.y],
        ])
    }

    /// Tensor quadrature rule over the band Tub^η(Γ): n_p boundary points
    /// times n_t Gauss points across the band, each node carrying the
    /// parallel-curve Jacobian |1 + t κ(p)|.
    pub fn tubular_rule(&self, eta: f64, n_t: usize, n_p: usize) -> Result<TubularRule, GeometryError> {
        let reach = self.reach();
        if !(eta < reach) {
            return Err(GeometryError::EtaExceedsReach { eta, reach });
        }
        let surf = self.surface_rule(n_p);
        let (gt, gw) = gauss_legendre(n_t);
        let mut nodes = Vec::with_capacity(n_p * n_t);
        for (i, &(p, wp)) in surf.nodes.iter().enumerate() {
            let nu = surf
                .tangents[i]
                .perp()
                .scale(-1.0); // tangent is nu.perp(), so nu = -tangent.perp()
            let kappa = self.curvature(p);
            for k in 0..n_t {
                let t = eta * gt[k];
                let wt = eta * gw[k];
                let jac = (1.0 + t * kappa).abs();
                nodes.push(TubNode {
                    point: p + nu.scale(t),
                    weight: wp * wt * jac,
                    jacobian: jac,
                });
            }
        }
        Ok(TubularRule { eta, nodes })
    }

    /// Quadrature rule over Γ: parameter-uniform trapezoid with arclength
    /// weights (exact for the circle, spectrally accurate for the ellipse).
    pub fn surface_rule(&self, n_p: usize) -> SurfaceRule {
        assert!(n_p >= 8, "surface rule needs at least 8 points");
        let dt = 2.0 * std::f64::consts::PI / n_p as f64;
        let mut nodes = Vec::with_capacity(n_p);
        let mut tangents = Vec::with_capacity(n_p);
        for i in 0..n_p {
            let t = i as f64 * dt;
            let p = self.boundary_point(t);
            nodes.push((p, self.boundary_speed(t) * dt));
            tangents.push(self.normal(p).perp());
        }
        SurfaceRule { nodes, tangents }
    }

    /// Solve for the closest boundary parameter by safeguarded Newton on the
    /// stationarity condition (x - q(t)) . q'(t) = 0, folded into the first
    /// quadrant. Returns (signed distance, closest point).
    fn ellipse_signed_distance(&self, (a, b): (f64, f64), x: Vec2) -> (f64, Vec2) {
        let rel = x - self.center;
        let u = rel.x.abs();
        let v = rel.y.abs();
        let inside = (rel.x / a) * (rel.x / a) + (rel.y / b) * (rel.y / b) < 1.0;
        let scale = a.max(b);

        let theta = if v <= 1e-15 * scale {
            // On the x-axis: either the axis point or the analytic off-axis foot.
            if a > b && u * a < a * a - b * b {
                ((u * a) / (a * a - b * b)).acos()
            } else {
                0.0
            }
        } else if u <= 1e-15 * scale {
            if b > a && v * b < b * b - a * a {
                ((v * b) / (b * b - a * a)).asin()
            } else {
                std::f64::consts::FRAC_PI_2
            }
        } else {
            self.ellipse_newton((a, b), u, v)
        };

        let (st, ct) = theta.sin_cos();
        let q = Vec2::new(a * ct, b * st);
        let dist = (Vec2::new(u, v) - q).norm();
        let d = if inside { -dist } else { dist };
        // unfold the quadrant
        let px = if rel.x < 0.0 { -q.x } else { q.x };
        let py = if rel.y < 0.0 { -q.y } else { q.y };
        (d, self.center + Vec2::new(px, py))
    }

    fn ellipse_newton(&self, (a, b): (f64, f64), u: f64, v: f64) -> f64 {
        // Bracket: G(0) = v b > 0, G(pi/2) = -u a < 0.
        let g = |t: f64| {
            let (st, ct) = t.sin_cos();
            (u - a * ct) * (-a * st) + (v - b * st) * (b * ct)
        };
        let dg = |t: f64| {
            let (st, ct) = t.sin_cos();
            let qp = Vec2::new(-a * st, b * ct);
            let qpp = Vec2::new(-a * ct, -b * st);
            -qp.dot(qp) + (Vec2::new(u, v) - Vec2::new(a * ct, b * st)).dot(qpp)
        };
        let mut lo = 0.0_f64;
        let mut hi = std::f64::consts::FRAC_PI_2;
        // angular-scaling seed
        let mut t = (v / b).atan2(u / a).clamp(lo, hi);
        // residual scale of G = (x - q) . q'; rescues the near-double-root
        // regime around the evolute, where dG vanishes at the minimum
        let g_tol = ELLIPSE_TOL * (a.max(b) + (u * u + v * v).sqrt()).powi(2);
        for _ in 0..ELLIPSE_MAX_ITER {
            let gt = g(t);
            if gt == 0.0 || gt.abs() <= g_tol {
                return t;
            }
            if gt > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let dgt = dg(t);
            let mut next = if dgt != 0.0 { t - gt / dgt } else { 0.5 * (lo + hi) };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() < ELLIPSE_TOL {
                return next;
            }
            t = next;
        }
        // Bisection guarantees the bracket shrinks below tolerance well
        // within the cap; reaching this indicates degenerate parameters.
        panic!(
            "{}",
            GeometryError::NonConvergence {
                iters: ELLIPSE_MAX_ITER
            }
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TubNode {
    pub point: Vec2,
    pub weight: f64,
    /// Parallel-curve Jacobian factor |1 + t κ(p)| at this node.
    pub jacobian: f64,
}

/// Quadrature rule for integrals over the tubular band Tub^η(Γ).
#[derive(Clone, Debug)]
pub struct TubularRule {
    pub eta: f64,
    pub nodes: Vec<TubNode>,
}

impl TubularRule {
    pub fn integrate(&self, f: impl Fn(Vec2) -> f64) -> f64 {
        self.nodes.iter().map(|n| n.weight * f(n.point)).sum()
    }
    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }
}

/// Quadrature rule for integrals over Γ, with a tangent frame per node.
#[derive(Clone, Debug)]
pub struct SurfaceRule {
    pub nodes: Vec<(Vec2, f64)>,
    pub tangents: Vec<Vec2>,
}

impl SurfaceRule {
    pub fn integrate(&self, f: impl Fn(Vec2) -> f64) -> f64 {
        self.nodes.iter().map(|&(p, w)| w * f(p)).sum()
    }
    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|&(_, w)| w).sum()
    }
}

/// Gauss-Legendre nodes and weights on (-1, 1).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (pn, dpn) = legendre(n, z);
            let dz = pn / dpn;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, dpn) = legendre(n, z);
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dpn * dpn);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Value and derivative of the Legendre polynomial P_n by recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

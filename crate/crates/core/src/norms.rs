//! Weighted norms and δ_ε functionals.
//!
//! Everything the convergence theory measures: the ξ_ε- and δ_ε-weighted
//! L²/H¹ norms, the penalty norm with weight δ_ε/ε, H¹ errors restricted to
//! Ω*, exact H¹(Γ) norms via the surface rule, and the linear functionals
//! ∫ δ_ε f that act as a Dirac sequence on Γ.

use crate::assembly::{build_quad_table, QuadSpec};
use crate::fields::{BoxGrid, FieldError, NodalField, ScalarData};
use crate::geometry::{SignedGeometry, Vec2};
use crate::profiles::ScaledWeights;
use crate::sparse::det_sum_indexed;
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weight {
    /// ξ_ε
    Xi,
    /// δ_ε
    Delta,
    /// δ_ε / ε (the penalty weight)
    DeltaPenalty,
    /// Unweighted Lebesgue measure on Ω
    One,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    L2,
    H1,
}

/// What is being measured: a nodal field, an evaluable descriptor, or the
/// difference field - descriptor.
#[derive(Clone, Copy)]
pub enum Expr<'a> {
    Field(&'a NodalField),
    Data(&'a ScalarData),
    Diff(&'a NodalField, &'a ScalarData),
}

struct PointEval {
    value: f64,
    grad: Vec2,
}

fn eval_expr(
    expr: &Expr,
    geom: &SignedGeometry,
    x: Vec2,
    shape: &[f64; 4],
    grad_ref: &[Vec2; 4],
    nodes: &[usize; 4],
    h: f64,
    need_grad: bool,
) -> Result<PointEval, FieldError> {
    let field_at = |f: &NodalField| -> (f64, Vec2) {
        let mut v = 0.0;
        let mut g = Vec2::new(0.0, 0.0);
        for k in 0..4 {
            let nv = f.values[nodes[k]];
            v += shape[k] * nv;
            if need_grad {
                g = g + grad_ref[k].scale(nv / h);
            }
        }
        (v, g)
    };
    Ok(match expr {
        Expr::Field(f) => {
            let (v, g) = field_at(f);
            PointEval { value: v, grad: g }
        }
        Expr::Data(d) => PointEval {
            value: d.eval_bulk(x, geom),
            grad: if need_grad {
                d.gradient_bulk(x, geom)?
            } else {
                Vec2::new(0.0, 0.0)
            },
        },
        Expr::Diff(f, d) => {
            let (v, g) = field_at(f);
            let dv = d.eval_bulk(x, geom);
            let dg = if need_grad {
                d.gradient_bulk(x, geom)?
            } else {
                Vec2::new(0.0, 0.0)
            };
            PointEval {
                value: v - dv,
                grad: g - dg,
            }
        }
    })
}

/// Subdivided-Gauss quadrature of ∫ w (|f|² [+ |∇f|²]), square-rooted.
pub fn weighted_norm(
    expr: Expr,
    weight: Weight,
    order: Order,
    weights: &ScaledWeights,
    grid: &Arc<BoxGrid>,
    quad: &QuadSpec,
) -> Result<f64, FieldError> {
    let sq = weighted_square(expr, weight, order, weights, grid, quad)?;
    Ok(sq.max(0.0).sqrt())
}

fn weighted_square(
    expr: Expr,
    weight: Weight,
    order: Order,
    weights: &ScaledWeights,
    grid: &Arc<BoxGrid>,
    quad: &QuadSpec,
) -> Result<f64, FieldError> {
    let ns = quad.subdivisions(grid.h, weights.epsilon);
    let table = build_quad_table(quad.order, ns);
    let geom = weights.geom.clone();
    let need_grad = order == Order::H1;
    // flush descriptor errors before the parallel sum
    {
        let probe = grid.cell_origin(grid.nx / 2, grid.ny / 2);
        let nodes = grid.cell_nodes(grid.nx / 2, grid.ny / 2);
        eval_expr(
            &expr,
            &geom,
            probe,
            &table[0].shape,
            &table[0].grad,
            &nodes,
            grid.h,
            need_grad,
        )?;
    }
    let total = det_sum_indexed(grid.n_cells(), |cell| {
        let cx = cell % grid.nx;
        let cy = cell / grid.nx;
        let origin = grid.cell_origin(cx, cy);
        let nodes = grid.cell_nodes(cx, cy);
        let mut acc = 0.0;
        for qp in &table {
            let x = Vec2::new(origin.x + qp.xi * grid.h, origin.y + qp.eta * grid.h);
            let wq = qp.w_frac * grid.h * grid.h;
            let d = geom.sdf(x);
            let w = match weight {
                Weight::Xi => weights.xi_of_d(d),
                Weight::Delta => weights.delta_of_d(d),
                Weight::DeltaPenalty => weights.delta_of_d(d) / weights.epsilon,
                Weight::One => 1.0,
            };
            if w == 0.0 {
                continue;
            }
            let pe = eval_expr(&expr, &geom, x, &qp.shape, &qp.grad, &nodes, grid.h, need_grad)
                .expect("descriptor errors are flushed above");
            let mut val = pe.value * pe.value;
            if need_grad {
                val += pe.grad.dot(pe.grad);
            }
            acc += wq * w * val;
        }
        acc
    });
    Ok(total)
}

/// ∫_Ω δ_ε f dx (signed).
pub fn delta_functional(
    expr: Expr,
    weights: &ScaledWeights,
    grid: &Arc<BoxGrid>,
    quad: &QuadSpec,
) -> Result<f64, FieldError> {
    let ns = quad.subdivisions(grid.h, weights.epsilon);
    let table = build_quad_table(quad.order, ns);
    let geom = weights.geom.clone();
    {
        let probe = grid.cell_origin(grid.nx / 2, grid.ny / 2);
        let nodes = grid.cell_nodes(grid.nx / 2, grid.ny / 2);
        eval_expr(
            &expr,
            &geom,
            probe,
            &table[0].shape,
            &table[0].grad,
            &nodes,
            grid.h,
            false,
        )?;
    }
    Ok(det_sum_indexed(grid.n_cells(), |cell| {
        let cx = cell % grid.nx;
        let cy = cell / grid.nx;
        let origin = grid.cell_origin(cx, cy);
        let nodes = grid.cell_nodes(cx, cy);
        let mut acc = 0.0;
        for qp in &table {
            let x = Vec2::new(origin.x + qp.xi * grid.h, origin.y + qp.eta * grid.h);
            let d = geom.sdf(x);
            let w = weights.delta_of_d(d);
            if w == 0.0 {
                continue;
            }
            let pe = eval_expr(&expr, &geom, x, &qp.shape, &qp.grad, &nodes, grid.h, false)
                .expect("descriptor errors are flushed above");
            acc += qp.w_frac * grid.h * grid.h * w * pe.value;
        }
        acc
    }))
}

/// H¹ error restricted to Ω*: quadrature with the indicator d < 0, with 4x
/// extra subdivision in cells cut by Γ.
pub fn restricted_h1_error(
    u_h: &NodalField,
    u_ref: &ScalarData,
    geom: &Arc<SignedGeometry>,
    quad: &QuadSpec,
    eps_hint: f64,
) -> Result<f64, FieldError> {
    restricted_error(u_h, u_ref, geom, quad, eps_hint, true)
}

/// L² part only of the restricted error (squared value integral).
pub fn restricted_l2_square(
    u_h: &NodalField,
    u_ref: &ScalarData,
    geom: &Arc<SignedGeometry>,
    quad: &QuadSpec,
    eps_hint: f64,
) -> Result<f64, FieldError> {
    let e = restricted_error(u_h, u_ref, geom, quad, eps_hint, false)?;
    Ok(e * e)
}

fn restricted_error(
    u_h: &NodalField,
    u_ref: &ScalarData,
    geom: &Arc<SignedGeometry>,
    quad: &QuadSpec,
    eps_hint: f64,
    with_grad: bool,
) -> Result<f64, FieldError> {
    let grid = &u_h.grid;
    let ns = quad.subdivisions(grid.h, eps_hint);
    let table = build_quad_table(quad.order, ns);
    let table_cut = build_quad_table(quad.order, ns * 4);
    // flush descriptor errors
    u_ref.eval_bulk(geom.center, geom);
    if with_grad {
        u_ref.gradient_bulk(geom.center, geom)?;
    }
    let sq = det_sum_indexed(grid.n_cells(), |cell| {
        let cx = cell % grid.nx;
        let cy = cell / grid.nx;
        let origin = grid.cell_origin(cx, cy);
        let nodes = grid.cell_nodes(cx, cy);
        // classify: fully outside cells are skipped, cut cells refined
        let h = grid.h;
        let corners = [
            origin,
            origin + Vec2::new(h, 0.0),
            origin + Vec2::new(0.0, h),
            origin + Vec2::new(h, h),
        ];
        let ds = corners.map(|c| geom.sdf(c));
        let all_out = ds.iter().all(|&d| d > 0.0);
        let any_out = ds.iter().any(|&d| d > 0.0);
        let margin = 1.5 * h;
        if all_out && ds.iter().all(|&d| d > margin) {
            return 0.0;
        }
        let tbl = if any_out { &table_cut } else { &table };
        let mut acc = 0.0;
        for qp in tbl.iter() {
            let x = Vec2::new(origin.x + qp.xi * h, origin.y + qp.eta * h);
            if geom.sdf(x) >= 0.0 {
                continue;
            }
            let pe = eval_expr(
                &Expr::Diff(u_h, u_ref),
                geom,
                x,
                &qp.shape,
                &qp.grad,
                &nodes,
                h,
                with_grad,
            )
            .expect("descriptor errors are flushed above");
            let mut val = pe.value * pe.value;
            if with_grad {
                val += pe.grad.dot(pe.grad);
            }
            acc += qp.w_frac * h * h * val;
        }
        acc
    });
    Ok(sq.max(0.0).sqrt())
}

/// Exact surface norm on Γ via the arclength rule: ‖v‖_{L²(Γ)} or
/// ‖v‖_{H¹(Γ)} with the surface gradient from the angular derivative.
/// Closures without a gradient are rejected for the H¹ order.
pub fn surface_norm_exact(
    v: &ScalarData,
    geom: &SignedGeometry,
    order: Order,
    n_p: usize,
) -> Result<f64, FieldError> {
    if order == Order::H1 {
        if let ScalarData::Closure(c) = v {
            if c.grad.is_none() {
                return Err(FieldError::MissingGradient);
            }
        }
    }
    let rule = geom.surface_rule(n_p);
    let mut acc = 0.0;
    for &(p, w) in &rule.nodes {
        let val = v.eval_on_surface(p, geom);
        let mut s = val * val;
        if order == Order::H1 {
            let sg = match v {
                // tangential projection of the bulk gradient
                ScalarData::Closure(c) => {
                    let g = c.grad.as_ref().unwrap()(p);
                    let tau = geom.normal(p).perp();
                    tau.scale(g.dot(tau))
                }
                _ => v.surface_gradient(p, geom),
            };
            s += sg.dot(sg);
        }
        acc += w * s;
    }
    Ok(acc.max(0.0).sqrt())
}

/// Named norm values with the discretization metadata of the run.
#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    pub values: BTreeMap<String, f64>,
    pub epsilon: f64,
    pub h: f64,
    pub quad: String,
}

impl NormReport {
    pub fn new(epsilon: f64, h: f64, quad: &QuadSpec) -> Self {
        NormReport {
            values: BTreeMap::new(),
            epsilon,
            h,
            quad: format!(
                "gauss{}x{} subdiv {:?}",
                quad.order, quad.order, quad.subdiv
            ),
        }
    }

    /// Insert a norm value; norms are finite and non-negative.
    pub fn insert(&mut self, name: &str, value: f64) {
        assert!(
            value.is_finite() && value >= 0.0,
            "norm {name} = {value} is not a finite non-negative number"
        );
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

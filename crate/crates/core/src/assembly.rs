//! Assembly of the weighted bilinear forms on the box grid.
//!
//! The five problem variants share two building blocks: the ξ_ε-weighted
//! bulk form ∫ ξ_ε (A∇u·∇φ + a u φ) and the δ_ε-weighted surface form
//! ∫ δ_ε (B∇v·∇ψ + b v ψ), plus δ_ε-weighted mass couplings. Bilinear (Q1)
//! elements on square cells; the weights are resolved by subdividing each
//! cell into ns x ns Gauss panels. The natural boundary condition on ∂Ω is
//! imposed by doing nothing there.

use crate::fields::{
    constant_normal_extension, dirichlet_lifting, flux_divergence, neumann_lifting, q1_shape,
    q1_shape_grad, BoxGrid, BulkFn, GradFn, MatrixData, NodalField, ScalarData,
};
use crate::geometry::{gauss_legendre, Vec2};
use crate::profiles::ScaledWeights;
use crate::rng::SplitMix64;
use crate::sparse::{par_map_indexed, CsrMatrix};
use std::collections::VecDeque;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("coefficient bound violated: {0}")]
    CoefficientBound(String),
    #[error("coupled problem needs theta3 >= K, got min b = {theta3} < K = {k}")]
    CoercivityViolation { theta3: f64, k: f64 },
    #[error("penalty exponent m = {0} outside (0, 1]")]
    InvalidM(f64),
    #[error("grid too coarse: h = {h} > eps = {eps} (set allow_coarse to override)")]
    ResolutionGuard { h: f64, eps: f64 },
    #[error("active set is empty after elimination")]
    EmptyActiveSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Cdd,
    Sdd,
    Rdd,
    Dddh,
    Nddh,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Cdd => "cdd",
            Variant::Sdd => "sdd",
            Variant::Rdd => "rdd",
            Variant::Dddh => "dddh",
            Variant::Nddh => "nddh",
        }
    }
}

/// Unknown blocks: `U` is the bulk quantity (ξ_ε weight), `V` the surface
/// quantity (δ_ε weight).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    U,
    V,
}

/// A diffuse domain problem with its coefficient data and scaled weights.
#[derive(Clone)]
pub struct ProblemSpec {
    pub variant: Variant,
    pub a_mat: MatrixData,
    pub a_low: ScalarData,
    pub f: ScalarData,
    pub b_mat: MatrixData,
    pub b_low: ScalarData,
    pub g: ScalarData,
    pub coupling: f64,
    pub beta: f64,
    pub m: f64,
    pub weights: ScaledWeights,
    pub eta: f64,
    /// g extended constantly in the normal direction (CDD, SDD, RDD).
    pub g_ec: Option<ScalarData>,
    /// Dirichlet lifting of g (DDDH).
    pub g_lift: Option<ScalarData>,
    /// Neumann lifting of g (NDDH).
    pub h_lift: Option<ScalarData>,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn cdd(
        a_mat: MatrixData,
        a_low: ScalarData,
        f: ScalarData,
        b_mat: MatrixData,
        b_low: ScalarData,
        g: ScalarData,
        coupling: f64,
        beta: f64,
        weights: ScaledWeights,
        eta: f64,
    ) -> Self {
        let g_ec = constant_normal_extension(&g, &weights.geom, eta, None);
        ProblemSpec {
            variant: Variant::Cdd,
            a_mat,
            a_low,
            f,
            b_mat,
            b_low,
            g,
            coupling,
            beta,
            m: 1.0,
            weights,
            eta,
            g_ec: Some(g_ec),
            g_lift: None,
            h_lift: None,
        }
    }

    pub fn sdd(
        b_mat: MatrixData,
        b_low: ScalarData,
        g: ScalarData,
        weights: ScaledWeights,
        eta: f64,
    ) -> Self {
        let g_ec = constant_normal_extension(&g, &weights.geom, eta, None);
        ProblemSpec {
            variant: Variant::Sdd,
            a_mat: MatrixData::identity(),
            a_low: ScalarData::Constant(1.0),
            f: ScalarData::Constant(0.0),
            b_mat,
            b_low,
            g,
            coupling: 0.0,
            beta: 1.0,
            m: 1.0,
            weights,
            eta,
            g_ec: Some(g_ec),
            g_lift: None,
            h_lift: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn rdd(
        a_mat: MatrixData,
        a_low: ScalarData,
        f: ScalarData,
        beta: f64,
        g: ScalarData,
        weights: ScaledWeights,
        eta: f64,
    ) -> Self {
        let g_ec = constant_normal_extension(&g, &weights.geom, eta, None);
        ProblemSpec {
            variant: Variant::Rdd,
            a_mat,
            a_low,
            f,
            b_mat: MatrixData::identity(),
            b_low: ScalarData::Constant(1.0),
            g,
            coupling: 0.0,
            beta,
            m: 1.0,
            weights,
            eta,
            g_ec: Some(g_ec),
            g_lift: None,
            h_lift: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn dddh(
        a_mat: MatrixData,
        a_low: ScalarData,
        f: ScalarData,
        g: ScalarData,
        m: f64,
        weights: ScaledWeights,
        eta: f64,
    ) -> Self {
        let g_lift = dirichlet_lifting(&g, &weights.geom, eta);
        ProblemSpec {
            variant: Variant::Dddh,
            a_mat,
            a_low,
            f,
            b_mat: MatrixData::identity(),
            b_low: ScalarData::Constant(1.0),
            g,
            coupling: 0.0,
            beta: 1.0,
            m,
            weights,
            eta,
            g_ec: None,
            g_lift: Some(g_lift),
            h_lift: None,
        }
    }

    pub fn nddh(
        a_mat: MatrixData,
        a_low: ScalarData,
        f: ScalarData,
        g: ScalarData,
        weights: ScaledWeights,
        eta: f64,
    ) -> Self {
        let h_lift = neumann_lifting(&g, &a_mat, &weights.geom, eta);
        ProblemSpec {
            variant: Variant::Nddh,
            a_mat,
            a_low,
            f,
            b_mat: MatrixData::identity(),
            b_low: ScalarData::Constant(1.0),
            g,
            coupling: 0.0,
            beta: 1.0,
            m: 1.0,
            weights,
            eta,
            g_ec: None,
            g_lift: None,
            h_lift: Some(h_lift),
        }
    }

    pub fn blocks(&self) -> Vec<Block> {
        match self.variant {
            Variant::Cdd => vec![Block::U, Block::V],
            Variant::Sdd => vec![Block::V],
            _ => vec![Block::U],
        }
    }

    /// Sampled data-assumption checks (lower bounds, coercivity, m range).
    pub fn validate(&self) -> Result<(), AssemblyError> {
        let geom = &self.weights.geom;
        let has_bulk = self.variant != Variant::Sdd;
        let has_surf = matches!(self.variant, Variant::Cdd | Variant::Sdd);
        if has_bulk {
            self.a_low
                .validate_min(geom, 1e-12, 10_000)
                .map_err(|e| AssemblyError::CoefficientBound(format!("a: {e}")))?;
            if let MatrixData::Iso(alpha) = &self.a_mat {
                alpha
                    .validate_min(geom, 1e-12, 10_000)
                    .map_err(|e| AssemblyError::CoefficientBound(format!("A: {e}")))?;
            }
        }
        if has_surf {
            let theta3 = self.min_b_on_gamma();
            if !(theta3 > 0.0) {
                return Err(AssemblyError::CoefficientBound(format!(
                    "b: min over Γ is {theta3}, must be positive"
                )));
            }
            if self.variant == Variant::Cdd && theta3 < self.coupling {
                return Err(AssemblyError::CoercivityViolation {
                    theta3,
                    k: self.coupling,
                });
            }
        }
        if self.variant == Variant::Dddh && !(self.m > 0.0 && self.m <= 1.0) {
            return Err(AssemblyError::InvalidM(self.m));
        }
        Ok(())
    }

    fn min_b_on_gamma(&self) -> f64 {
        let geom = &self.weights.geom;
        let mut min = f64::INFINITY;
        for i in 0..4096 {
            let t = 2.0 * std::f64::consts::PI * i as f64 / 4096.0;
            let p = geom.boundary_point(t);
            min = min.min(self.b_low.eval_on_surface(p, geom));
        }
        min
    }

    /// Factor in front of the δ_ε mass term acting on the bulk block.
    fn u_mass_delta_factor(&self) -> f64 {
        match self.variant {
            Variant::Cdd => self.coupling,
            Variant::Rdd => self.beta,
            Variant::Dddh => self.weights.epsilon.powf(-self.m),
            _ => 0.0,
        }
    }
}

/// Quadrature prescription: tensor Gauss of the given order on ns x ns
/// panels per cell; ns defaults to max(1, ceil(2h/ε)).
#[derive(Clone, Copy, Debug)]
pub struct QuadSpec {
    pub order: usize,
    pub subdiv: Option<usize>,
    pub allow_coarse: bool,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            order: 3,
            subdiv: None,
            allow_coarse: false,
        }
    }
}

impl QuadSpec {
    pub fn subdivisions(&self, h: f64, eps: f64) -> usize {
        self.subdiv
            .unwrap_or_else(|| ((2.0 * h / eps).ceil() as usize).max(1))
    }
}

/// Reference quadrature point within a cell.
pub(crate) struct QuadPoint {
    pub xi: f64,
    pub eta: f64,
    pub shape: [f64; 4],
    pub grad: [Vec2; 4],
    /// Weight as a fraction of the cell area.
    pub w_frac: f64,
}

pub(crate) fn build_quad_table(order: usize, ns: usize) -> Vec<QuadPoint> {
    let (gx, gw) = gauss_legendre(order);
    let mut pts = Vec::with_capacity(ns * ns * order * order);
    for sj in 0..ns {
        for si in 0..ns {
            for (j, &wy) in gw.iter().enumerate() {
                for (i, &wx) in gw.iter().enumerate() {
                    let xi = (si as f64 + 0.5 + 0.5 * gx[i]) / ns as f64;
                    let eta = (sj as f64 + 0.5 + 0.5 * gx[j]) / ns as f64;
                    pts.push(QuadPoint {
                        xi,
                        eta,
                        shape: q1_shape(xi, eta),
                        grad: q1_shape_grad(xi, eta),
                        w_frac: wx * wy / (4.0 * ns as f64 * ns as f64),
                    });
                }
            }
        }
    }
    pts
}

/// Per-block degrees of freedom with their weight measures.
#[derive(Clone, Debug)]
pub struct BlockDofs {
    pub block: Block,
    /// ∫ weight over the basis support, per grid node.
    pub measure: Vec<f64>,
    pub active_of_node: Vec<Option<u32>>,
    pub node_of_active: Vec<u32>,
    /// First matrix index of this block.
    pub offset: usize,
}

impl BlockDofs {
    pub fn n_active(&self) -> usize {
        self.node_of_active.len()
    }
}

#[derive(Clone, Debug)]
pub struct DofMap {
    pub grid: Arc<BoxGrid>,
    pub blocks: Vec<BlockDofs>,
}

impl DofMap {
    pub fn n_dofs(&self) -> usize {
        self.blocks.iter().map(|b| b.n_active()).sum()
    }

    pub fn block(&self, b: Block) -> Option<&BlockDofs> {
        self.blocks.iter().find(|bd| bd.block == b)
    }

    /// Reconstitute a nodal field from a solution vector: eliminated bulk
    /// nodes become 0, eliminated surface nodes take the value of the
    /// nearest active node (breadth-first over the grid graph, so the fill
    /// is deterministic).
    pub fn field(&self, block: Block, solution: &[f64]) -> NodalField {
        let bd = self.block(block).expect("block not present");
        let n = self.grid.n_nodes();
        let mut values = vec![0.0; n];
        let mut dist = vec![u32::MAX; n];
        let mut queue = VecDeque::new();
        for (a, &node) in bd.node_of_active.iter().enumerate() {
            values[node as usize] = solution[bd.offset + a];
            dist[node as usize] = 0;
            queue.push_back(node as usize);
        }
        if block == Block::V {
            let nxp = self.grid.nx + 1;
            while let Some(idx) = queue.pop_front() {
                let i = idx % nxp;
                let j = idx / nxp;
                let mut neighbors = [usize::MAX; 4];
                let mut nn = 0;
                if i > 0 {
                    neighbors[nn] = idx - 1;
                    nn += 1;
                }
                if i + 1 < nxp {
                    neighbors[nn] = idx + 1;
                    nn += 1;
                }
                if j > 0 {
                    neighbors[nn] = idx - nxp;
                    nn += 1;
                }
                if j + 1 <= self.grid.ny {
                    neighbors[nn] = idx + nxp;
                    nn += 1;
                }
                for &nb in &neighbors[..nn] {
                    if dist[nb] == u32::MAX {
                        dist[nb] = dist[idx] + 1;
                        values[nb] = values[idx];
                        queue.push_back(nb);
                    }
                }
            }
        }
        NodalField {
            grid: self.grid.clone(),
            values,
        }
    }
}

/// Assembled symmetric system with its degree-of-freedom map.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dof_map: DofMap,
}

struct CellLocal {
    uu: Option<[f64; 16]>,
    vv: Option<[f64; 16]>,
    /// δ_ε mass matrix for the CDD coupling block.
    uv: Option<[f64; 16]>,
    rhs_u: [f64; 4],
    rhs_v: [f64; 4],
    xi_measure: f64,
    delta_measure: f64,
}

/// Assemble the weighted system for `spec` on `grid`. All grid nodes are
/// kept as degrees of freedom; run [`eliminate_degenerate_dofs`] afterwards
/// to drop nodes whose weight measure vanishes.
pub fn assemble(
    spec: &ProblemSpec,
    grid: &Arc<BoxGrid>,
    quad: &QuadSpec,
) -> Result<SparseSystem, AssemblyError> {
    spec.validate()?;
    let eps = spec.weights.epsilon;
    if grid.h > eps + 1e-14 && !quad.allow_coarse {
        return Err(AssemblyError::ResolutionGuard { h: grid.h, eps });
    }
    let ns = quad.subdivisions(grid.h, eps);
    let table = build_quad_table(quad.order, ns);
    let geom = spec.weights.geom.clone();

    let has_u = spec.blocks().contains(&Block::U);
    let has_v = spec.blocks().contains(&Block::V);
    let is_cdd = spec.variant == Variant::Cdd;
    let u_mass_delta = spec.u_mass_delta_factor();

    let h_grad: Option<GradFn> = spec.h_lift.as_ref().map(|h| match h {
        ScalarData::Closure(c) => c.grad.clone().expect("lifting carries a gradient"),
        _ => unreachable!("neumann lifting is a closure"),
    });
    let h_val: Option<BulkFn> = spec.h_lift.as_ref().map(|h| match h {
        ScalarData::Closure(c) => c.f.clone(),
        _ => unreachable!(),
    });

    // pass 1: local matrices, cell by cell in parallel
    let locals: Vec<CellLocal> = par_map_indexed(grid.n_cells(), |cell| {
        let cx = cell % grid.nx;
        let cy = cell / grid.nx;
        let origin = grid.cell_origin(cx, cy);
        let h = grid.h;
        let area = h * h;
        let mut uu = [0.0; 16];
        let mut vv = [0.0; 16];
        let mut uv = [0.0; 16];
        let mut rhs_u = [0.0; 4];
        let mut rhs_v = [0.0; 4];
        let mut xi_measure = 0.0;
        let mut delta_measure = 0.0;
        for qp in &table {
            let x = Vec2::new(origin.x + qp.xi * h, origin.y + qp.eta * h);
            let w = qp.w_frac * area;
            let d = geom.sdf(x);
            let (xi_w, delta_w) = spec.weights.weights_of_d(d);
            xi_measure += w * xi_w;
            delta_measure += w * delta_w;
            if has_u && xi_w > 0.0 {
                let am = spec.a_mat.eval(x, &geom);
                let al = spec.a_low.eval_bulk(x, &geom);
                let wxi = w * xi_w;
                // fill the lower triangle and mirror: exact symmetry
                for i in 0..4 {
                    let gi = Vec2::new(qp.grad[i].x / h, qp.grad[i].y / h);
                    let agi = Vec2::new(
                        am[0][0] * gi.x + am[0][1] * gi.y,
                        am[1][0] * gi.x + am[1][1] * gi.y,
                    );
                    for j in 0..=i {
                        let gj = Vec2::new(qp.grad[j].x / h, qp.grad[j].y / h);
                        let v = wxi * (agi.dot(gj) + al * qp.shape[i] * qp.shape[j]);
                        uu[4 * i + j] += v;
                        if i != j {
                            uu[4 * j + i] += v;
                        }
                    }
                }
                // right-hand side under l_B
                let mut fval = spec.f.eval_bulk(x, &geom);
                if spec.variant == Variant::Nddh {
                    let hx = h_val.as_ref().unwrap()(x);
                    let div =
                        flux_divergence(h_grad.as_ref().unwrap(), &spec.a_mat, &geom, x, 1e-3);
                    fval += div - al * hx;
                }
                for i in 0..4 {
                    rhs_u[i] += wxi * fval * qp.shape[i];
                }
                // DDDH moves the lifting to the right: -a_B^ε(g_lift, Φ)
                if spec.variant == Variant::Dddh && d.abs() < spec.eta {
                    let gl = spec.g_lift.as_ref().unwrap();
                    let gval = gl.eval_bulk(x, &geom);
                    let ggrad = gl.gradient_bulk(x, &geom).unwrap();
                    let ag = Vec2::new(
                        am[0][0] * ggrad.x + am[0][1] * ggrad.y,
                        am[1][0] * ggrad.x + am[1][1] * ggrad.y,
                    );
                    for i in 0..4 {
                        let gi = Vec2::new(qp.grad[i].x / h, qp.grad[i].y / h);
                        rhs_u[i] -= wxi * (ag.dot(gi) + al * gval * qp.shape[i]);
                    }
                }
            }
            if delta_w > 0.0 {
                let wdelta = w * delta_w;
                if has_u && u_mass_delta != 0.0 {
                    for i in 0..4 {
                        for j in 0..=i {
                            let v = u_mass_delta * wdelta * qp.shape[i] * qp.shape[j];
                            uu[4 * i + j] += v;
                            if i != j {
                                uu[4 * j + i] += v;
                            }
                        }
                    }
                }
                if has_v {
                    let bm = spec.b_mat.eval(x, &geom);
                    // surface coefficients enter through their constant
                    // normal extension: evaluate at the closest point
                    let bl = match &spec.b_low {
                        ScalarData::Constant(c) => *c,
                        other => {
                            let p = geom.closest_point_unchecked(x);
                            other.eval_on_surface(p, &geom)
                        }
                    };
                    let reaction = bl + if is_cdd { spec.coupling } else { 0.0 };
                    for i in 0..4 {
                        let gi = Vec2::new(qp.grad[i].x / h, qp.grad[i].y / h);
                        let bgi = Vec2::new(
                            bm[0][0] * gi.x + bm[0][1] * gi.y,
                            bm[1][0] * gi.x + bm[1][1] * gi.y,
                        );
                        for j in 0..=i {
                            let gj = Vec2::new(qp.grad[j].x / h, qp.grad[j].y / h);
                            let v = wdelta * (bgi.dot(gj) + reaction * qp.shape[i] * qp.shape[j]);
                            vv[4 * i + j] += v;
                            if i != j {
                                vv[4 * j + i] += v;
                            }
                        }
                    }
                }
                if is_cdd {
                    for i in 0..4 {
                        for j in 0..=i {
                            let v = wdelta * qp.shape[i] * qp.shape[j];
                            uv[4 * i + j] += v;
                            if i != j {
                                uv[4 * j + i] += v;
                            }
                        }
                    }
                }
                match spec.variant {
                    Variant::Sdd => {
                        let gec = spec.g_ec.as_ref().unwrap().eval_bulk(x, &geom);
                        for i in 0..4 {
                            rhs_v[i] += wdelta * gec * qp.shape[i];
                        }
                    }
                    Variant::Cdd => {
                        let gec = spec.g_ec.as_ref().unwrap().eval_bulk(x, &geom);
                        for i in 0..4 {
                            rhs_v[i] += spec.beta * wdelta * gec * qp.shape[i];
                        }
                    }
                    Variant::Rdd => {
                        let gec = spec.g_ec.as_ref().unwrap().eval_bulk(x, &geom);
                        for i in 0..4 {
                            rhs_u[i] += spec.beta * wdelta * gec * qp.shape[i];
                        }
                    }
                    _ => {}
                }
            }
        }
        CellLocal {
            uu: has_u.then_some(uu),
            vv: has_v.then_some(vv),
            uv: is_cdd.then_some(uv),
            rhs_u,
            rhs_v,
            xi_measure,
            delta_measure,
        }
    });

    // per-node weight measures over the basis support
    let n_nodes = grid.n_nodes();
    let mut xi_node = vec![0.0; n_nodes];
    let mut delta_node = vec![0.0; n_nodes];
    for cy in 0..grid.ny {
        for cx in 0..grid.nx {
            let loc = &locals[cy * grid.nx + cx];
            for node in grid.cell_nodes(cx, cy) {
                xi_node[node] += loc.xi_measure;
                delta_node[node] += loc.delta_measure;
            }
        }
    }

    let mut blocks = Vec::new();
    let mut offset = 0usize;
    for block in spec.blocks() {
        let measure = match block {
            Block::U => xi_node.clone(),
            Block::V => delta_node.clone(),
        };
        blocks.push(BlockDofs {
            block,
            measure,
            active_of_node: (0..n_nodes as u32).map(Some).collect(),
            node_of_active: (0..n_nodes as u32).collect(),
            offset,
        });
        offset += n_nodes;
    }
    let dof_map = DofMap {
        grid: grid.clone(),
        blocks,
    };

    // sparsity pattern: 9-point stencil per block, plus the u-v coupling
    let n_dofs = dof_map.n_dofs();
    let nxp = grid.nx + 1;
    let neighbors = |node: usize| -> Vec<u32> {
        let i = node % nxp;
        let j = node / nxp;
        let mut out = Vec::with_capacity(9);
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                let ni = i as i64 + di;
                let nj = j as i64 + dj;
                if ni >= 0 && ni <= grid.nx as i64 && nj >= 0 && nj <= grid.ny as i64 {
                    out.push((nj as usize * nxp + ni as usize) as u32);
                }
            }
        }
        out.sort_unstable();
        out
    };
    let mut rows: Vec<Vec<u32>> = Vec::with_capacity(n_dofs);
    for block in &dof_map.blocks {
        for node in 0..n_nodes {
            let mut cols = Vec::with_capacity(18);
            let nb = neighbors(node);
            for other in &dof_map.blocks {
                if other.block == block.block || is_cdd {
                    cols.extend(nb.iter().map(|&c| c + other.offset as u32));
                }
            }
            cols.sort_unstable();
            rows.push(cols);
        }
    }
    let mut matrix = CsrMatrix::from_rows(rows);
    let mut rhs = vec![0.0; n_dofs];

    // pass 2: deterministic scatter in cell order
    let u_off = dof_map.block(Block::U).map(|b| b.offset);
    let v_off = dof_map.block(Block::V).map(|b| b.offset);
    for cy in 0..grid.ny {
        for cx in 0..grid.nx {
            let loc = &locals[cy * grid.nx + cx];
            let nodes = grid.cell_nodes(cx, cy);
            if let (Some(uu), Some(off)) = (&loc.uu, u_off) {
                for i in 0..4 {
                    for j in 0..4 {
                        let v = uu[4 * i + j];
                        if v != 0.0 {
                            matrix.add(off + nodes[i], (off + nodes[j]) as u32, v);
                        }
                    }
                    rhs[off + nodes[i]] += loc.rhs_u[i];
                }
            }
            if let (Some(vv), Some(off)) = (&loc.vv, v_off) {
                for i in 0..4 {
                    for j in 0..4 {
                        let v = vv[4 * i + j];
                        if v != 0.0 {
                            matrix.add(off + nodes[i], (off + nodes[j]) as u32, v);
                        }
                    }
                    rhs[off + nodes[i]] += loc.rhs_v[i];
                }
            }
            if let (Some(uv), Some(uo), Some(vo)) = (&loc.uv, u_off, v_off) {
                let k = spec.coupling;
                if k != 0.0 {
                    for i in 0..4 {
                        for j in 0..4 {
                            let v = -k * uv[4 * i + j];
                            if v != 0.0 {
                                matrix.add(uo + nodes[i], (vo + nodes[j]) as u32, v);
                                matrix.add(vo + nodes[i], (uo + nodes[j]) as u32, v);
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(SparseSystem {
        matrix,
        rhs,
        dof_map,
    })
}

#[derive(Clone, Debug)]
pub struct EliminationReport {
    pub removed: Vec<(Block, usize)>,
    pub kept: Vec<(Block, usize)>,
}

/// Drop degrees of freedom whose basis support carries weight measure below
/// floor·h². With the double-well profile every measure is strictly
/// positive; pass floor = 0 there so nothing is eliminated.
pub fn eliminate_degenerate_dofs(
    system: &SparseSystem,
    floor: f64,
) -> Result<(SparseSystem, EliminationReport), AssemblyError> {
    let grid = &system.dof_map.grid;
    let threshold = floor * grid.h * grid.h;
    let n_nodes = grid.n_nodes();

    let mut new_blocks = Vec::new();
    let mut removed = Vec::new();
    let mut kept = Vec::new();
    let mut offset = 0usize;
    for bd in &system.dof_map.blocks {
        let mut active_of_node = vec![None; n_nodes];
        let mut node_of_active = Vec::new();
        for node in 0..n_nodes {
            let keep = bd.active_of_node[node].is_some() && !(bd.measure[node] < threshold);
            if keep {
                active_of_node[node] = Some(node_of_active.len() as u32);
                node_of_active.push(node as u32);
            }
        }
        removed.push((bd.block, n_nodes - node_of_active.len()));
        kept.push((bd.block, node_of_active.len()));
        if node_of_active.is_empty() {
            return Err(AssemblyError::EmptyActiveSet);
        }
        new_blocks.push(BlockDofs {
            block: bd.block,
            measure: bd.measure.clone(),
            active_of_node,
            node_of_active,
            offset,
        });
        offset = new_blocks.iter().map(|b| b.n_active()).sum();
    }

    // old dof -> new dof
    let mut old_to_new = vec![None::<u32>; system.matrix.n];
    for (old_bd, new_bd) in system.dof_map.blocks.iter().zip(&new_blocks) {
        for (node, &old_active) in old_bd.active_of_node.iter().enumerate() {
            if let (Some(oa), Some(na)) = (old_active, new_bd.active_of_node[node]) {
                old_to_new[old_bd.offset + oa as usize] = Some(new_bd.offset as u32 + na);
            }
        }
    }

    let n_new: usize = new_blocks.iter().map(|b| b.n_active()).sum();
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n_new];
    let mut vals: Vec<Vec<f64>> = vec![Vec::new(); n_new];
    let mut rhs = vec![0.0; n_new];
    for old_row in 0..system.matrix.n {
        if let Some(new_row) = old_to_new[old_row] {
            let lo = system.matrix.row_ptr[old_row];
            let hi = system.matrix.row_ptr[old_row + 1];
            for k in lo..hi {
                if let Some(new_col) = old_to_new[system.matrix.col_idx[k] as usize] {
                    rows[new_row as usize].push(new_col);
                    vals[new_row as usize].push(system.matrix.values[k]);
                }
            }
            rhs[new_row as usize] = system.rhs[old_row];
        }
    }
    let mut matrix = CsrMatrix::from_rows(rows);
    let mut pos = 0usize;
    for r in vals {
        for v in r {
            matrix.values[pos] = v;
            pos += 1;
        }
    }

    Ok((
        SparseSystem {
            matrix,
            rhs,
            dof_map: DofMap {
                grid: grid.clone(),
                blocks: new_blocks,
            },
        },
        EliminationReport { removed, kept },
    ))
}

#[derive(Clone, Debug)]
pub struct SpdReport {
    pub max_asymmetry: f64,
    pub trials: usize,
    pub min_quadratic_form: f64,
    /// Trial index and witness-vector hash of a non-positive quadratic form.
    pub failure: Option<(usize, u64)>,
}

impl SpdReport {
    pub fn passed(&self) -> bool {
        self.max_asymmetry == 0.0 && self.failure.is_none()
    }
}

/// Verify exact symmetry and x^T M x > 0 for seeded random vectors.
pub fn spd_probe(system: &SparseSystem, trials: usize, seed: u64) -> SpdReport {
    let max_asymmetry = system.matrix.max_asymmetry();
    let n = system.matrix.n;
    let mut rng = SplitMix64::new(seed);
    let mut y = vec![0.0; n];
    let mut min_q = f64::INFINITY;
    let mut failure = None;
    for trial in 0..trials {
        let x: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        system.matrix.matvec(&x, &mut y);
        let q: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        min_q = min_q.min(q);
        if q <= 0.0 && failure.is_none() {
            let mut hash = 0xcbf29ce484222325u64;
            for v in &x {
                hash ^= v.to_bits();
                hash = hash.wrapping_mul(0x100000001b3);
            }
            failure = Some((trial, hash));
        }
    }
    SpdReport {
        max_asymmetry,
        trials,
        min_quadratic_form: min_q,
        failure,
    }
}

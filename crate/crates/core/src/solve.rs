//! Preconditioned conjugate gradients for the assembled SPD systems.
//!
//! All inner products go through the chunk-ordered deterministic reductions
//! in [`crate::sparse`], so repeated runs and any thread count produce
//! bit-identical iterates.

use crate::assembly::SparseSystem;
use crate::sparse::det_dot;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Precond {
    None,
    Jacobi,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final true relative residual ‖b - Mx‖ / ‖b‖.
    pub rel_residual: f64,
    pub converged: bool,
    /// Iteration index at which p^T M p <= 0 signalled indefiniteness.
    pub breakdown: Option<usize>,
    /// Energy 1/2 x^T M x - b^T x per iteration (monotone for CG).
    #[serde(skip)]
    pub energy_history: Vec<f64>,
}

/// Solve M x = b to the requested relative residual. Breakdown and maxit
/// are reported through the stats rather than panicking; callers decide.
pub fn cg_solve(
    system: &SparseSystem,
    tol: f64,
    maxit: usize,
    precond: Precond,
) -> (Vec<f64>, SolveStats) {
    assert!(tol > 0.0 && tol < 1.0, "tolerance must be in (0, 1)");
    let m = &system.matrix;
    let b = &system.rhs;
    let n = m.n;
    let inv_diag: Option<Vec<f64>> = match precond {
        Precond::None => None,
        Precond::Jacobi => Some(
            m.diagonal()
                .iter()
                .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
                .collect(),
        ),
    };
    let apply_p = |r: &[f64], z: &mut Vec<f64>| match &inv_diag {
        None => z.copy_from_slice(r),
        Some(inv) => {
            for i in 0..n {
                z[i] = inv[i] * r[i];
            }
        }
    };

    let b_norm = det_dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return (
            x,
            SolveStats {
                iterations: 0,
                rel_residual: 0.0,
                converged: true,
                breakdown: None,
                energy_history: vec![0.0],
            },
        );
    }

    let mut r = b.clone();
    let mut z = vec![0.0; n];
    apply_p(&r, &mut z);
    let mut p = z.clone();
    let mut rz = det_dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut energy_history = vec![0.0];
    let mut breakdown = None;
    let mut iterations = 0;

    for it in 1..=maxit {
        m.matvec(&p, &mut ap);
        let pap = det_dot(&p, &ap);
        if pap <= 0.0 {
            breakdown = Some(it);
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
        }
        for i in 0..n {
            r[i] -= alpha * ap[i];
        }
        iterations = it;
        // energy 1/2 x^T M x - b^T x = -1/2 x^T (b + r)
        let e = -0.5 * (det_dot(&x, b) + det_dot(&x, &r));
        energy_history.push(e);
        let r_norm = det_dot(&r, &r).sqrt();
        if r_norm <= tol * b_norm {
            // the recursive residual drifts; stop only once the true
            // residual meets the tolerance
            m.matvec(&x, &mut ap);
            let mut true_sq = 0.0;
            for i in 0..n {
                let d = b[i] - ap[i];
                true_sq += d * d;
            }
            if true_sq.sqrt() <= tol * b_norm {
                break;
            }
        }
        apply_p(&r, &mut z);
        let rz_new = det_dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    // recompute the true residual for the final report
    m.matvec(&x, &mut ap);
    let mut true_res = 0.0;
    for i in 0..n {
        let d = b[i] - ap[i];
        true_res += d * d;
    }
    let rel_residual = true_res.sqrt() / b_norm;
    let converged = breakdown.is_none() && rel_residual <= tol * 1.001;
    (
        x,
        SolveStats {
            iterations,
            rel_residual,
            converged,
            breakdown,
            energy_history,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, eliminate_degenerate_dofs, DofMap, ProblemSpec, QuadSpec};
    use crate::fields::{BoxGrid, MatrixData, ScalarData};
    use crate::geometry::{SignedGeometry, Vec2};
    use crate::profiles::{Profile, ScaledWeights};
    use crate::sparse::CsrMatrix;
    use std::sync::Arc;

    const BOX: [f64; 4] = [-2.0, 2.0, -2.0, 2.0];

    fn system_from_matrix(m: CsrMatrix, rhs: Vec<f64>) -> SparseSystem {
        SparseSystem {
            matrix: m,
            rhs,
            dof_map: DofMap {
                grid: Arc::new(BoxGrid::new(BOX, 4, 4).unwrap()),
                blocks: vec![],
            },
        }
    }

    fn identity(n: usize) -> CsrMatrix {
        let mut m = CsrMatrix::from_rows((0..n as u32).map(|i| vec![i]).collect());
        for i in 0..n {
            m.add(i, i as u32, 1.0);
        }
        m
    }

    #[test]
    fn identity_system_solved_in_one_iteration() {
        let sys = system_from_matrix(identity(5), vec![1.0, -2.0, 3.0, 0.5, 4.0]);
        let (x, stats) = cg_solve(&sys, 1e-12, 10, Precond::None);
        assert!(stats.iterations <= 1);
        assert!(stats.converged);
        for (xi, bi) in x.iter().zip(&sys.rhs) {
            assert!((xi - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_two_by_two() {
        let mut m = CsrMatrix::from_rows(vec![vec![0], vec![1]]);
        m.add(0, 0, 2.0);
        m.add(1, 1, 8.0);
        let sys = system_from_matrix(m, vec![2.0, 8.0]);
        let (x, stats) = cg_solve(&sys, 1e-14, 10, Precond::Jacobi);
        assert!(stats.converged);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    fn rdd_system(eps: f64) -> SparseSystem {
        let g = Arc::new(SignedGeometry::circle(Vec2::new(0.0, 0.0), 1.0, BOX).unwrap());
        let w = ScaledWeights::new(Profile::double_well(), eps, g.clone()).unwrap();
        let eta = crate::fields::default_eta(&g);
        let spec = ProblemSpec::rdd(
            MatrixData::identity(),
            ScalarData::Constant(1.0),
            ScalarData::Constant(0.0),
            1.0,
            ScalarData::Constant(1.0),
            w,
            eta,
        );
        let grid = Arc::new(BoxGrid::with_spacing(BOX, eps / 4.0).unwrap());
        let sys = assemble(&spec, &grid, &QuadSpec::default()).unwrap();
        eliminate_degenerate_dofs(&sys, 0.0).unwrap().0
    }

    #[test]
    fn rdd_disc_problem_converges_within_pilot_bound() {
        // 160^2 grid
        let sys = rdd_system(0.1);
        assert_eq!(sys.dof_map.grid.nx, 160);
        let (_, stats) = cg_solve(&sys, 1e-10, 5000, Precond::Jacobi);
        assert!(stats.converged, "{stats:?}");
        assert!(stats.iterations <= 3000, "took {} iterations", stats.iterations);
    }

    #[test]
    fn energy_decay_is_monotone() {
        let sys = rdd_system(0.2);
        let (_, stats) = cg_solve(&sys, 1e-10, 5000, Precond::Jacobi);
        assert!(stats.converged);
        for w in stats.energy_history.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()),
                "energy increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn preconditioner_choice_does_not_move_the_solution() {
        // diagonally dominant SPD system with a varying diagonal, so the
        // Jacobi and plain iterates genuinely differ
        let n = 500usize;
        let rows: Vec<Vec<u32>> = (0..n)
            .map(|i| {
                let mut r = vec![i as u32];
                if i > 0 {
                    r.insert(0, i as u32 - 1);
                }
                if i + 1 < n {
                    r.push(i as u32 + 1);
                }
                r
            })
            .collect();
        let mut m = CsrMatrix::from_rows(rows);
        for i in 0..n {
            m.add(i, i as u32, 3.0 + (i as f64 * 0.37).sin());
            if i > 0 {
                m.add(i, i as u32 - 1, -1.0);
            }
            if i + 1 < n {
                m.add(i, i as u32 + 1, -1.0);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.11).cos()).collect();
        let sys = system_from_matrix(m, b);
        let tol = 1e-12;
        let (xa, sa) = cg_solve(&sys, tol, 10_000, Precond::Jacobi);
        let (xb, sb) = cg_solve(&sys, tol, 10_000, Precond::None);
        assert!(sa.converged && sb.converged);
        let xmax = xa.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dmax = xa
            .iter()
            .zip(&xb)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dmax <= 10.0 * tol * xmax, "dmax = {dmax}, xmax = {xmax}");
    }

    #[test]
    fn deterministic_across_runs_and_thread_counts() {
        let sys = rdd_system(0.2);
        let solve = || cg_solve(&sys, 1e-10, 5000, Precond::Jacobi).0;
        let x1 = solve();
        let x2 = solve();
        assert_eq!(x1, x2);
        #[cfg(feature = "parallel")]
        {
            let with_threads = |n: usize| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .unwrap()
                    .install(|| cg_solve(&sys, 1e-10, 5000, Precond::Jacobi).0)
            };
            let xa = with_threads(1);
            let xb = with_threads(8);
            assert_eq!(xa, xb);
            assert_eq!(xa, x1);
        }
    }

    #[test]
    fn breakdown_reported_for_indefinite_matrix() {
        let mut m = CsrMatrix::from_rows(vec![vec![0], vec![1]]);
        m.add(0, 0, 1.0);
        m.add(1, 1, -1.0);
        let sys = system_from_matrix(m, vec![0.0, 1.0]);
        let (_, stats) = cg_solve(&sys, 1e-10, 100, Precond::None);
        assert!(stats.breakdown.is_some());
        assert!(!stats.converged);
    }

    #[test]
    fn maxit_reported() {
        let sys = rdd_system(0.2);
        let (_, stats) = cg_solve(&sys, 1e-14, 3, Precond::None);
        assert!(!stats.converged);
        assert_eq!(stats.iterations, 3);
    }
}

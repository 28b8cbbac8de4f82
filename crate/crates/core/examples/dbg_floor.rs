use dd_core::assembly::{QuadSpec, Variant};
use dd_core::fields::*;
use dd_core::geometry::{SignedGeometry, Vec2};
use dd_core::harness::*;
use dd_core::norms::*;
use std::sync::Arc;

fn main() {
    let geom = Arc::new(SignedGeometry::circle(Vec2::new(0.0, 0.0), 1.0, [-2.0, 2.0, -2.0, 2.0]).unwrap());
    let mut case = Case::new(geom.clone(), ProfileChoice::DoubleObstacle, Variant::Rdd);
    case.f = ScalarData::Constant(0.0);
    case.g = ScalarData::Constant(1.0);
    case.reference = Reference::Oracle;
    let sharp = case.oracle_solution().unwrap();
    let u_ref = sharp.bulk_data();

    for (eps, rho) in [(0.05, 4.0), (0.025, 4.0), (0.05, 8.0), (0.025, 8.0), (0.05, 16.0), (0.025, 16.0)] {
        let res = run_single(&case, eps, eps / rho).unwrap();
        let u = res.u_field.as_ref().unwrap();
        // split: full restricted error vs interior-only (d < -2eps)
        let full = restricted_h1_error(u, &u_ref, &geom, &case.quad, eps).unwrap();
        // interior proxy: evaluate on a shifted geometry? crude: mask via closure comparison on coarse sampling
        let grid = &u.grid;
        let mut band = 0.0;
        let mut interior = 0.0;
        let m = 1200usize;
        let hh = 4.0 / m as f64;
        for j in 0..m {
            for i in 0..m {
                let x = Vec2::new(-2.0 + (i as f64 + 0.5) * hh, -2.0 + (j as f64 + 0.5) * hh);
                let d = geom.sdf(x);
                if d >= 0.0 { continue; }
                let gv = u.gradient(x).unwrap() - u_ref.gradient_bulk(x, &geom).unwrap();
                let vv = u.interpolate(x).unwrap() - u_ref.eval_bulk(x, &geom);
                let e = vv * vv + gv.dot(gv);
                if d > -2.0 * eps { band += e * hh * hh; } else { interior += e * hh * hh; }
            }
        }
        let _ = grid;
        println!("eps={eps} rho={rho}: full={full:.5e} band={:.5e} interior={:.5e}", band.sqrt(), interior.sqrt());
    }
}

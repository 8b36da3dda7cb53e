use std::time::Instant;
use dgsolve::envelope::*;
use dgsolve::games::*;
use dgsolve::grid::*;
use dgsolve::solver::*;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    if which == "p1" {
        // Criterion 3 prototype: P1 m=2 full 3D [-2,2]^3 h=0.05 vs envelope of 2D h=0.02
        let t0 = Instant::now();
        let params = P1Params::new(vec![0.5, 0.5], 1.0, 0.1).with_control_res(3);
        let fam = make_p1(&params).unwrap();
        let grid3 = Grid::cube(-2.0, 2.0, 81, 3).unwrap();
        let full = solve(&fam.full, &grid3, &SolverConfig::default()).unwrap();
        println!("full: converged {} iters {} wall {:?}", full.converged, full.iterations, t0.elapsed());
        let grid2 = Grid::cube(-2.0, 2.0, 201, 2).unwrap();
        let mut comps = Vec::new();
        for (i, spec) in fam.reduced.iter().enumerate() {
            let t1 = Instant::now();
            let r = solve(spec, &grid2, &SolverConfig::default()).unwrap();
            println!("reduced {i}: converged {} iters {} wall {:?}", r.converged, r.iterations, t1.elapsed());
            comps.push(EnvelopeComponent::from_solve(spec, Projection::Coords(vec![i, 2]), &r).unwrap());
        }
        let env = EnvelopeField::new(3, comps, 0.1).unwrap();
        // compare on nodes >= 3h from targets
        let t2 = Instant::now();
        let time_full = full.time_field();
        let src = FieldSource { field: &time_full, spec: Some(&fam.full) };
        let margin = 0.1 + 3.0 * 0.05;
        let filter = |x: &[f64]| (x[2] - x[0]).abs() > margin && (x[2] - x[1]).abs() > margin;
        let stats = compare_fields(&src, &env, &grid3, Some(&filter));
        println!("compare: {:?} wall {:?}", stats, t2.elapsed());
    } else if which == "p3" {
        // Criterion 4 prototype: P3 full 3D h=0.05 on [-3,3], oracle comparison on [-2,2]
        let t0 = Instant::now();
        let fam = make_p3(&P3Params::new(0.5).with_eps_target(0.05).with_control_res(3)).unwrap();
        let grid3 = Grid::new(&[(-3.0, 3.0); 3], &[121; 3]).unwrap();
        let full = solve(&fam.full, &grid3, &SolverConfig::default()).unwrap();
        println!("full: converged {} iters {} wall {:?}", full.converged, full.iterations, t0.elapsed());
        let oracle = fam.oracle;
        let time_full = full.time_field();
        let mut x = [0.0; 3];
        let mut worst = (0.0f64, [0.0; 3], 0.0, 0.0);
        let h = 0.05;
        let query = Grid::cube(-2.0, 2.0, 81, 3).unwrap();
        let mut compared = 0u64;
        for i in 0..query.len() {
            query.node_coords(i, &mut x);
            let d2 = (x[1] - x[0]).abs();
            let d3 = (x[2] - x[0]).abs();
            // >= 3h from thickened targets
            if d2 < 0.05 + 3.0 * h || d3 < 0.05 + 3.0 * h { continue; }
            // >= 3h from the boundary of D: in_d constant over +-3h box corners
            let base = oracle.in_d(&x);
            let mut clear = true;
            for c in 0..27u32 {
                let dx = [(c % 3) as f64 - 1.0, ((c / 3) % 3) as f64 - 1.0, ((c / 9) % 3) as f64 - 1.0];
                let y = [x[0] + 3.0*h*dx[0], x[1] + 3.0*h*dx[1], x[2] + 3.0*h*dx[2]];
                if oracle.in_d(&y) != base { clear = false; break; }
            }
            if !clear { continue; }
            compared += 1;
            let got = kruzkov(time_full.interpolate(&x).max(0.0));
            let want = kruzkov(oracle.values(&x).true_u);
            let err = (got - want).abs();
            if err > worst.0 { worst = (err, x, got, want); }
        }
        println!("compared {compared} nodes; worst kruzkov err {} at {:?} (got {} want {})", worst.0, worst.1, worst.2, worst.3);
        println!("total wall {:?}", t0.elapsed());
    }
}

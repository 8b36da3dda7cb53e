use dgsolve::games::{make_p3, P3Params};
use dgsolve::grid::build_grid;
use dgsolve::solver::{solve, SolverConfig};

fn main() {
    let fam = make_p3(&P3Params::new(0.5).with_eps_target(0.05).with_control_res(3)).unwrap();
    let spec = &fam.reduced[0];
    let grid = build_grid(&[(-2.0, 2.0), (-2.0, 2.0)], &[81, 81]).unwrap();
    let res = solve(spec, &grid, &SolverConfig::default()).unwrap();
    println!("converged {} iters {}", res.converged, res.iterations);
    let time = res.time_field();
    let mut x = [0.0; 2];
    let mut worst = (0.0f64, [0.0; 2], 0.0, 0.0);
    for i in 0..grid.len() {
        grid.node_coords(i, &mut x);
        let gap = (x[1] - x[0]).abs();
        let wall = if x[1] > x[0] { x[0] + 2.0 } else { 2.0 - x[0] };
        if gap < 0.2 || gap > wall { continue; }
        let oracle = 2.0 * gap;
        let got = time.values()[i];
        let err = (got - oracle).abs();
        if err > worst.0 { worst = (err, x, got, oracle); }
    }
    println!("worst err {} at {:?}: got {} oracle {}", worst.0, worst.1, worst.2, worst.3);
    // error profile vs gap at x0 = -1 (pursuer above)
    for k in [5, 10, 20, 30, 40, 50, 60] {
        let x0 = -1.0;
        let x1 = x0 + k as f64 * 0.05;
        let v = time.interpolate(&[x0, x1]);
        println!("gap {:.2}: solver {:.4} oracle {:.4} (thickened {:.4})", x1 - x0, v, 2.0*(x1-x0), 2.0*(x1-x0-0.05));
    }
}

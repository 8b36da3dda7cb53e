//! Feedback strategies from value fields and closed-loop simulation.
//!
//! Optimal play is approximated by re-solving the discrete Isaacs operator's
//! `max_a min_b` at the current state each step, reading values from a
//! solved field or an envelope of reduced fields. Trajectories are forward
//! Euler rollouts that stop at first target entry.

use std::io::Write;

use crate::envelope::EnvelopeField;
use crate::error::{DgError, Result};
use crate::grid::{FieldScale, ValueField};
use crate::model::{GameSpec, MAX_STATE_DIM};
use crate::solver::kruzkov;

/// Kruzkov-scale lookups for feedback evaluation.
pub trait PolicyValue: Sync {
    fn kruzkov_at(&self, x: &[f64]) -> f64;
    /// Characteristic step used in the feedback bracket (the solver's
    /// coupling of time step to grid spacing).
    fn grid_step(&self) -> f64;
}

impl PolicyValue for ValueField {
    fn kruzkov_at(&self, x: &[f64]) -> f64 {
        match self.scale {
            FieldScale::Kruzkov => self.interpolate(x),
            FieldScale::Time => kruzkov(self.interpolate(x).max(0.0)),
        }
    }

    fn grid_step(&self) -> f64 {
        self.grid().max_spacing()
    }
}

impl PolicyValue for EnvelopeField {
    fn kruzkov_at(&self, x: &[f64]) -> f64 {
        kruzkov(self.value(x).max(0.0))
    }

    fn grid_step(&self) -> f64 {
        self.components()
            .iter()
            .map(|c| c.reduced.field.grid().max_spacing())
            .fold(0.0, f64::max)
    }
}

/// Controls achieving the `max_a min_b` of the discrete Isaacs bracket at
/// `x`; ties break to the lowest control-grid index. Errors inside the
/// target (the game is over there).
pub fn feedback_controls(
    value: &dyn PolicyValue,
    spec: &GameSpec,
    x: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if spec.in_any_target(x) {
        return Err(DgError::PointInTarget);
    }
    let dim = spec.state_dim();
    if x.len() != dim || dim > MAX_STATE_DIM {
        return Err(DgError::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    let h_t = value.grid_step();
    let min_time = spec.discount == 0.0;
    let kappa = if min_time { 1.0 } else { 0.0 };
    let gamma = (-h_t * (spec.discount + kappa)).exp();
    let mut vel = [0.0f64; MAX_STATE_DIM];
    let mut foot = [0.0f64; MAX_STATE_DIM];
    let mut best_a = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_b = 0usize;
    for (ai, a) in spec.control_a().points().iter().enumerate() {
        let mut worst_val = f64::INFINITY;
        let mut worst_b = 0usize;
        for (bi, b) in spec.control_b().points().iter().enumerate() {
            spec.dynamics_into(x, a, b, &mut vel[..dim]);
            for d in 0..dim {
                foot[d] = x[d] + h_t * vel[d];
            }
            let stage = if min_time {
                1.0 - gamma
            } else {
                (1.0 - gamma) * spec.payoff(x, a, b)
            };
            let cand = stage + gamma * value.kruzkov_at(&foot[..dim]);
            if cand < worst_val {
                worst_val = cand;
                worst_b = bi;
            }
        }
        if worst_val > best_val {
            best_val = worst_val;
            best_a = ai;
            best_b = worst_b;
        }
    }
    Ok((
        spec.control_a().points()[best_a].clone(),
        spec.control_b().points()[best_b].clone(),
    ))
}

/// How a rollout ended.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// First entry into target `target_id` at time `tau`.
    Captured { target_id: usize, tau: f64 },
    Timeout,
}

/// A forward Euler rollout. States satisfy the discrete dynamics
/// step-by-step; `controls_a/b` hold the per-step controls (one fewer entry
/// than `times`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls_a: Vec<Vec<f64>>,
    pub controls_b: Vec<Vec<f64>>,
    pub outcome: Outcome,
}

impl Trajectory {
    /// CSV dump: `t, x1..xn, a.., b.., event`; the final row carries the
    /// outcome event.
    pub fn write_csv<W: Write>(&self, w: &mut W, spec: &GameSpec) -> Result<()> {
        let n = spec.state_dim();
        let ma = spec.control_a().dim();
        let mb = spec.control_b().dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|d| format!("x{d}")));
        header.extend((1..=ma).map(|d| format!("a{d}")));
        header.extend((1..=mb).map(|d| format!("b{d}")));
        header.push("event".into());
        writeln!(w, "{}", header.join(","))?;
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            write!(w, "{t:.16e}")?;
            for xi in x {
                write!(w, ",{xi:.16e}")?;
            }
            if k < self.controls_a.len() {
                for c in &self.controls_a[k] {
                    write!(w, ",{c:.16e}")?;
                }
                for c in &self.controls_b[k] {
                    write!(w, ",{c:.16e}")?;
                }
            } else {
                for _ in 0..(ma + mb) {
                    write!(w, ",")?;
                }
            }
            let event = if k + 1 == self.times.len() {
                match &self.outcome {
                    Outcome::Captured { target_id, .. } => format!("CAPTURED:{target_id}"),
                    Outcome::Timeout => "TIMEOUT".into(),
                }
            } else {
                String::new()
            };
            writeln!(w, ",{event}")?;
        }
        Ok(())
    }
}

/// Control source for a rollout.
pub enum Policy<'a> {
    /// Re-evaluate feedback from a value source every step.
    Feedback(&'a dyn PolicyValue),
    /// Explicit open-loop controls of time.
    OpenLoop {
        a: &'a (dyn Fn(f64) -> Vec<f64> + Sync),
        b: &'a (dyn Fn(f64) -> Vec<f64> + Sync),
    },
}

/// Forward-Euler rollout from `x0` until first target entry or `t_max`.
/// Deterministic: identical inputs replay bit-identically.
pub fn simulate(
    spec: &GameSpec,
    policy: &Policy<'_>,
    x0: &[f64],
    dt: f64,
    t_max: f64,
) -> Result<Trajectory> {
    if dt <= 0.0 {
        return Err(DgError::InvalidParameter("dt must be positive".into()));
    }
    let dim = spec.state_dim();
    if x0.len() != dim {
        return Err(DgError::DimensionMismatch {
            expected: dim,
            got: x0.len(),
        });
    }
    let mut times = vec![0.0];
    let mut states = vec![x0.to_vec()];
    let mut controls_a = Vec::new();
    let mut controls_b = Vec::new();
    if let Some(j) = spec.target_hit(x0) {
        return Ok(Trajectory {
            times,
            states,
            controls_a,
            controls_b,
            outcome: Outcome::Captured {
                target_id: spec.targets()[j].id,
                tau: 0.0,
            },
        });
    }
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut vel = vec![0.0; dim];
    let steps = (t_max / dt).ceil() as usize;
    for _ in 0..steps {
        let (a, b) = match policy {
            Policy::Feedback(v) => feedback_controls(*v, spec, &x)?,
            Policy::OpenLoop { a, b } => ((a)(t), (b)(t)),
        };
        spec.dynamics_into(&x, &a, &b, &mut vel);
        for d in 0..dim {
            x[d] += dt * vel[d];
        }
        t += dt;
        times.push(t);
        states.push(x.clone());
        controls_a.push(a);
        controls_b.push(b);
        if let Some(j) = spec.target_hit(&x) {
            return Ok(Trajectory {
                times,
                states,
                controls_a,
                controls_b,
                outcome: Outcome::Captured {
                    target_id: spec.targets()[j].id,
                    tau: t,
                },
            });
        }
    }
    Ok(Trajectory {
        times,
        states,
        controls_a,
        controls_b,
        outcome: Outcome::Timeout,
    })
}

/// Result of the evader-dominance experiment.
#[derive(Debug, Clone)]
pub struct DominanceReport {
    /// Smallest position gap observed over all strategies and sample times.
    pub min_gap: f64,
    pub per_strategy_min: Vec<f64>,
    pub pass: bool,
}

/// Dominance tolerance: the shared integrator makes the comparison exact up
/// to roundoff.
pub const DOMINANCE_TOL: f64 = -1e-9;

/// Compare the evader position under full forward thrust from `z_prime`
/// against arbitrary strategies from `z`, on the damped double-integrator
/// dynamics `(dy1, dy2) = (y2, -d(y2) + a)`. Both runs share one Euler
/// integrator and step size, so discretization effects cancel.
///
/// Requires `z' >= z` componentwise. Strategy values are clamped to
/// `[-alpha, alpha]`.
pub fn lemma1_dominance(
    params: &crate::games::P2Params,
    z: [f64; 2],
    z_prime: [f64; 2],
    strategies: &[&(dyn Fn(f64) -> f64 + Sync)],
    dt: f64,
    t_max: f64,
) -> Result<DominanceReport> {
    if !(z_prime[0] >= z[0] && z_prime[1] >= z[1]) {
        return Err(DgError::InvalidParameter(
            "dominance needs z' >= z componentwise".into(),
        ));
    }
    if dt <= 0.0 || t_max <= 0.0 {
        return Err(DgError::InvalidParameter("dt and t_max must be positive".into()));
    }
    let d = params.damping_fn();
    let alpha = params.alpha;
    let steps = (t_max / dt).ceil() as usize;
    let euler = |y: &mut [f64; 2], a: f64| {
        let (y1, y2) = (y[0], y[1]);
        y[0] = y1 + dt * y2;
        y[1] = y2 + dt * (-d(y2) + a);
    };
    let mut per_strategy_min = Vec::with_capacity(strategies.len());
    let mut min_gap = f64::INFINITY;
    for s in strategies {
        let mut ref_state = z_prime;
        let mut cand = z;
        let mut gap_min = ref_state[0] - cand[0];
        let mut t = 0.0;
        for _ in 0..steps {
            euler(&mut ref_state, alpha);
            euler(&mut cand, s(t).clamp(-alpha, alpha));
            t += dt;
            gap_min = gap_min.min(ref_state[0] - cand[0]);
        }
        min_gap = min_gap.min(gap_min);
        per_strategy_min.push(gap_min);
    }
    Ok(DominanceReport {
        min_gap,
        per_strategy_min,
        pass: min_gap >= DOMINANCE_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{make_p2, make_p3, P2Params, P3Params};
    use crate::grid::{build_grid, Projection, ReducedField};
    use crate::solver::{solve, SolverConfig};

    fn p3_reduced_field(alpha: f64, eps: f64, n: usize) -> ValueField {
        // closed-form reduced value sampled on the pair grid, time scale
        let g = 1.0 / (1.0 - alpha);
        let grid = build_grid(&[(-3.0, 3.0), (-3.0, 3.0)], &[n, n]).unwrap();
        ValueField::from_fn(grid, FieldScale::Time, move |y| {
            g * ((y[1] - y[0]).abs() - eps).max(0.0)
        })
    }

    #[test]
    fn feedback_flees_and_chases_in_p3_pair() {
        let fam = make_p3(&P3Params::new(0.5).with_eps_target(0.02).with_control_res(3)).unwrap();
        let spec = &fam.reduced[0];
        let field = p3_reduced_field(0.5, 0.02, 121);
        let (a, b) = feedback_controls(&field, spec, &[0.0, 1.0]).unwrap();
        assert_eq!(a, vec![-0.5], "evader moves away from the pursuer");
        assert_eq!(b, vec![-1.0], "pursuer moves towards the evader");
    }

    #[test]
    fn feedback_ties_break_to_lowest_index() {
        // symmetric pure-control game, symmetric field: both b = -1 and
        // b = +1 reach equal values; the first grid point (-1) wins
        let spec = {
            use crate::model::{ControlGrid, DynamicsFn, GameSpec, PayoffFn, TargetSet};
            use std::sync::Arc;
            let dyn_fn: DynamicsFn = Arc::new(|_x, _a, b, out| out[0] = b[0]);
            let payoff: PayoffFn = Arc::new(|_, _, _| 1.0);
            GameSpec::new(
                "sym",
                1,
                dyn_fn,
                ControlGrid::singleton(vec![0.0]),
                ControlGrid::interval(-1.0, 1.0, 3).unwrap(),
                payoff,
                0.0,
                vec![TargetSet::new(1, "|x| >= 1", Arc::new(|x: &[f64]| x[0].abs() >= 1.0))],
            )
            .unwrap()
        };
        let grid = build_grid(&[(-1.0, 1.0)], &[41]).unwrap();
        let field = ValueField::from_fn(grid, FieldScale::Time, |x| 1.0 - x[0].abs());
        let (a, b) = feedback_controls(&field, &spec, &[0.0]).unwrap();
        assert_eq!(a, vec![0.0]);
        assert_eq!(b, vec![-1.0]);
    }

    #[test]
    fn feedback_errors_inside_target() {
        let fam = make_p3(&P3Params::new(0.5).with_eps_target(0.1).with_control_res(3)).unwrap();
        let field = p3_reduced_field(0.5, 0.1, 61);
        assert!(matches!(
            feedback_controls(&field, &fam.reduced[0], &[0.0, 0.05]),
            Err(DgError::PointInTarget)
        ));
    }

    #[test]
    fn p2_evader_max_thrust_when_ahead_at_rest() {
        let params = P2Params {
            control_res: 3,
            ..P2Params::default()
        };
        let fam = make_p2(&params).unwrap();
        let spec = &fam.reduced_relative[0];
        let grid = build_grid(&[(-0.5, 3.0), (-2.0, 2.0)], &[71, 81]).unwrap();
        let res = solve(spec, &grid, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        let field = res.field;
        // evader ahead (y1 > 0) and at rest: push away at full thrust
        let (a, _b) = feedback_controls(&field, spec, &[1.0, 0.0]).unwrap();
        assert_eq!(a, vec![0.4]);
    }

    #[test]
    fn simulate_capture_at_origin_time_zero() {
        let fam = make_p3(&P3Params::new(0.5).with_eps_target(0.1).with_control_res(3)).unwrap();
        let field = p3_reduced_field(0.5, 0.1, 61);
        let traj = simulate(
            &fam.reduced[0],
            &Policy::Feedback(&field),
            &[0.0, 0.05],
            0.01,
            1.0,
        )
        .unwrap();
        assert_eq!(
            traj.outcome,
            Outcome::Captured {
                target_id: 2,
                tau: 0.0
            }
        );
    }

    #[test]
    fn simulate_p3_capture_time_matches_value() {
        // x0 = (0, 1, 5): both pursuers to the right, value = 2
        let fam = make_p3(&P3Params::new(0.5).with_eps_target(0.02).with_control_res(3)).unwrap();
        let mut components = Vec::new();
        for (id, j) in [(2usize, 1usize), (3, 2)] {
            let field = p3_reduced_field(0.5, 0.02, 301);
            let proj = Projection::Coords(vec![0, j]);
            let reduced = ReducedField::new(field, proj.clone()).unwrap();
            components.push(
                crate::envelope::EnvelopeComponent::new(id, reduced)
                    .with_target(fam.reduced[j - 1].targets()[0].clone(), proj),
            );
        }
        let env = crate::envelope::EnvelopeField::new(3, components, 0.04).unwrap();
        let dt = 0.01;
        let traj = simulate(&fam.full, &Policy::Feedback(&env), &[0.0, 1.0, 5.0], dt, 10.0).unwrap();
        match traj.outcome {
            Outcome::Captured { target_id, tau } => {
                assert_eq!(target_id, 2);
                assert!((tau - 2.0).abs() <= 0.05 * 2.0 + 2.0 * dt, "tau = {tau}");
            }
            Outcome::Timeout => panic!("expected capture"),
        }
    }

    #[test]
    fn simulate_replays_bit_identically() {
        let fam = make_p3(&P3Params::new(0.5).with_eps_target(0.02).with_control_res(3)).unwrap();
        let field = p3_reduced_field(0.5, 0.02, 121);
        let run = || {
            simulate(
                &fam.reduced[0],
                &Policy::Feedback(&field),
                &[0.3, -0.9],
                0.01,
                5.0,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn simulate_value_consistency_on_reduced_pair() {
        let fam = make_p3(&P3Params::new(0.5).with_eps_target(0.04).with_control_res(3)).unwrap();
        let spec = &fam.reduced[0];
        let grid = build_grid(&[(-2.0, 2.0), (-2.0, 2.0)], &[101, 101]).unwrap();
        let res = solve(spec, &grid, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        let time = res.time_field();
        let dt = 0.02;
        for x0 in [[0.0, 1.0], [0.5, -0.5], [-0.3, 0.6]] {
            let traj = simulate(spec, &Policy::Feedback(&res.field), &x0, dt, 20.0).unwrap();
            let u = time.interpolate(&x0);
            match traj.outcome {
                Outcome::Captured { tau, .. } => {
                    assert!(
                        (tau - u).abs() <= 0.05 * u + 2.0 * dt,
                        "tau {tau} vs value {u} at {x0:?}"
                    );
                }
                Outcome::Timeout => panic!("expected capture at {x0:?}"),
            }
        }
    }

    #[test]
    fn trajectory_csv_has_event_row() {
        let fam = make_p3(&P3Params::new(0.5).with_eps_target(0.05).with_control_res(3)).unwrap();
        let field = p3_reduced_field(0.5, 0.05, 121);
        let traj = simulate(
            &fam.reduced[0],
            &Policy::Feedback(&field),
            &[0.0, 0.5],
            0.01,
            5.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, &fam.reduced[0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,x2,a1,b1,event"));
        assert!(text.trim_end().ends_with("CAPTURED:2"));
    }

    #[test]
    fn dominance_identical_runs_gap_zero() {
        let params = P2Params::default();
        let strat: &(dyn Fn(f64) -> f64 + Sync) = &|_t| params.alpha;
        let report = lemma1_dominance(&params, [0.0, 0.0], [0.0, 0.0], &[strat], 0.01, 5.0).unwrap();
        assert_eq!(report.min_gap, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn dominance_strict_for_opposite_thrust() {
        let params = P2Params::default();
        let strat: &(dyn Fn(f64) -> f64 + Sync) = &|_t| -1.0;
        let report = lemma1_dominance(&params, [0.0, 0.0], [0.0, 0.0], &[strat], 0.01, 5.0).unwrap();
        assert!(report.pass);
        assert!(report.min_gap >= 0.0);
        // a velocity head start keeps the gap nonnegative (zero at t = 0)
        let strat_pos: Vec<&(dyn Fn(f64) -> f64 + Sync)> = vec![&|_t| -1.0];
        let r2 = lemma1_dominance(&params, [0.0, 0.0], [0.0, 0.1], &strat_pos, 0.01, 5.0).unwrap();
        assert!(r2.pass && r2.min_gap >= 0.0);
        // a position head start keeps it strictly positive throughout
        let r3 = lemma1_dominance(&params, [0.0, 0.0], [0.1, 0.0], &strat_pos, 0.01, 5.0).unwrap();
        assert!(r3.min_gap > 0.0);
    }

    #[test]
    fn dominance_rejects_bad_ordering() {
        let params = P2Params::default();
        let strat: &(dyn Fn(f64) -> f64 + Sync) = &|_t| 0.0;
        assert!(lemma1_dominance(&params, [0.0, 0.2], [0.0, 0.0], &[strat], 0.01, 1.0).is_err());
    }
}

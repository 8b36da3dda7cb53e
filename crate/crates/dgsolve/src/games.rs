//! Registered constructors for the pursuit/evasion game families and the
//! closed-form oracles of the two-pursuer counterexample game.
//!
//! Three families are provided:
//!
//! * `P1` — single pursuer, `m` evaders, simple motion in 1D; capture when
//!   the pursuer is within radius `r` of some evader.
//! * `P2` — single evader, `m` pursuers, double-integrator agents in 1D with
//!   saturating damping; capture when a pursuer overtakes the evader.
//! * `P3` — single evader between two pursuers, simple motion in 1D; capture
//!   when either pursuer meets the evader. This family has closed-form
//!   reduced values and a known region where the lower-envelope
//!   decomposition fails.

use std::sync::Arc;

use crate::error::{DgError, Result};
use crate::model::{
    Agent, AgentDynamicsFn, ControlGrid, GameSpec, PayoffFn, Player, TargetSet,
};

fn min_time_payoff() -> PayoffFn {
    Arc::new(|_x, _a, _b| 1.0)
}

fn simple_motion() -> AgentDynamicsFn {
    Arc::new(|_x, c, out| out[0] = c[0])
}

// ---------------------------------------------------------------------------
// P1: single pursuer / multiple evaders, simple motion
// ---------------------------------------------------------------------------

/// Parameters of the single-pursuer/multiple-evaders family.
#[derive(Debug, Clone)]
pub struct P1Params {
    /// Evader count `m >= 1`.
    pub m: usize,
    /// Per-evader speed bounds.
    pub alphas: Vec<f64>,
    /// Pursuer speed bound.
    pub beta: f64,
    /// Capture radius `r >= 0`.
    pub capture_radius: f64,
    /// Require `beta > max(alpha_i)` so all reduced values are finite.
    pub enforce_capture: bool,
    /// Samples per control dimension.
    pub control_res: usize,
}

impl P1Params {
    pub fn new(alphas: Vec<f64>, beta: f64, capture_radius: f64) -> Self {
        Self {
            m: alphas.len(),
            alphas,
            beta,
            capture_radius,
            enforce_capture: true,
            control_res: 21,
        }
    }

    pub fn with_control_res(mut self, n: usize) -> Self {
        self.control_res = n;
        self
    }

    /// Replace every evader control set by the singleton `{0}` (pure-control
    /// degenerate case).
    pub fn frozen_evaders(mut self) -> Self {
        self.alphas.iter_mut().for_each(|a| *a = 0.0);
        self.enforce_capture = false;
        self
    }
}

/// A constructed P1 family: the full game plus one reduced game per target.
pub struct P1Family {
    pub full: GameSpec,
    pub reduced: Vec<GameSpec>,
    pub params: P1Params,
}

fn speed_grid(bound: f64, n: usize) -> Result<ControlGrid> {
    if bound == 0.0 {
        Ok(ControlGrid::singleton(vec![0.0]))
    } else {
        ControlGrid::interval(-bound, bound, n)
    }
}

/// Build the full `m+1`-state game and the per-target 2-state reduced games.
/// State layout: `(x_1, ..., x_m, x_pursuer)`.
pub fn make_p1(params: &P1Params) -> Result<P1Family> {
    let m = params.m;
    if m < 1 || params.alphas.len() != m {
        return Err(DgError::InvalidParameter(format!(
            "P1 needs m >= 1 evader bounds, got {}",
            params.alphas.len()
        )));
    }
    if params.capture_radius < 0.0 {
        return Err(DgError::InvalidParameter("capture radius must be >= 0".into()));
    }
    if params.enforce_capture {
        for &a in &params.alphas {
            if params.beta <= a {
                return Err(DgError::InvalidParameter(format!(
                    "pursuer bound {} must exceed evader bound {a}",
                    params.beta
                )));
            }
        }
    }
    let r = params.capture_radius;
    let mut agents = Vec::with_capacity(m + 1);
    for (i, &a) in params.alphas.iter().enumerate() {
        agents.push(Agent {
            player: Player::Evader,
            state_indices: vec![i],
            control: speed_grid(a, params.control_res)?,
            dynamics: simple_motion(),
            label: format!("evader {}", i + 1),
        });
    }
    agents.push(Agent {
        player: Player::Pursuer,
        state_indices: vec![m],
        control: speed_grid(params.beta, params.control_res)?,
        dynamics: simple_motion(),
        label: "pursuer".into(),
    });
    let targets: Vec<TargetSet> = (0..m)
        .map(|i| {
            TargetSet::new(
                i + 1,
                format!("|x_p - x_{}| <= {r}", i + 1),
                Arc::new(move |x: &[f64]| (x[x.len() - 1] - x[i]).abs() <= r),
            )
            .with_signed_distance(Arc::new(move |x: &[f64]| {
                (x[x.len() - 1] - x[i]).abs() - r
            }))
        })
        .collect();
    let full = GameSpec::decoupled("P1", agents.clone(), min_time_payoff(), 0.0, targets)?;

    let mut reduced = Vec::with_capacity(m);
    for i in 0..m {
        let pair = vec![
            Agent {
                state_indices: vec![0],
                ..agents[i].clone()
            },
            Agent {
                state_indices: vec![1],
                ..agents[m].clone()
            },
        ];
        let target = TargetSet::new(
            i + 1,
            format!("|x_p - x_{}| <= {r}", i + 1),
            Arc::new(move |x: &[f64]| (x[1] - x[0]).abs() <= r),
        )
        .with_signed_distance(Arc::new(move |x: &[f64]| (x[1] - x[0]).abs() - r));
        reduced.push(GameSpec::decoupled(
            format!("P1 reduced {}", i + 1),
            pair,
            min_time_payoff(),
            0.0,
            vec![target],
        )?);
    }
    Ok(P1Family {
        full,
        reduced,
        params: params.clone(),
    })
}

/// Closed-form reduced value for a P1 pair: the gap closes at the relative
/// speed `beta - alpha_i` under optimal play.
pub fn p1_reduced_value(params: &P1Params, i: usize, x_i: f64, x_p: f64) -> f64 {
    let gap = (x_p - x_i).abs() - params.capture_radius;
    gap.max(0.0) / (params.beta - params.alphas[i])
}

// ---------------------------------------------------------------------------
// P2: multiple pursuers / single evader, damped double integrators
// ---------------------------------------------------------------------------

/// Damping nonlinearity applied to each agent's velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DampingKind {
    /// `d(y) = clamp(y, -c_d, c_d)`; bounded and 1-Lipschitz by construction.
    Clamp,
    /// `d(y) = y`; the linear case violates the boundedness assumption and
    /// is registered for reproducing the reduced-coordinate computation only.
    Linear,
}

/// Parameters of the multiple-pursuers/single-evader family.
#[derive(Debug, Clone)]
pub struct P2Params {
    /// Pursuer count `m >= 1`.
    pub m: usize,
    /// Evader thrust bound.
    pub alpha: f64,
    /// Per-pursuer thrust bounds.
    pub betas: Vec<f64>,
    pub damping: DampingKind,
    /// Damping saturation level `c_d` (also the bound constant in the
    /// family's standing assumptions).
    pub c_d: f64,
    /// Enforce `beta_i > alpha + 2 c_d`.
    pub enforce_constraints: bool,
    pub control_res: usize,
}

impl Default for P2Params {
    fn default() -> Self {
        Self {
            m: 2,
            alpha: 0.4,
            betas: vec![1.0, 1.0],
            damping: DampingKind::Clamp,
            c_d: 0.2,
            enforce_constraints: true,
            control_res: 21,
        }
    }
}

impl P2Params {
    /// Lipschitz constant of the damping (1 for both registered kinds).
    pub fn k_d(&self) -> f64 {
        1.0
    }

    pub fn damping_fn(&self) -> impl Fn(f64) -> f64 + Copy {
        let c = self.c_d;
        let kind = self.damping;
        move |y: f64| match kind {
            DampingKind::Clamp => y.clamp(-c, c),
            DampingKind::Linear => y,
        }
    }

    pub fn check_constraints(&self) -> Result<()> {
        for &b in &self.betas {
            if b <= self.alpha + 2.0 * self.c_d {
                return Err(DgError::InvalidParameter(format!(
                    "need beta_i > alpha + 2 c_d, got {b} <= {}",
                    self.alpha + 2.0 * self.c_d
                )));
            }
        }
        Ok(())
    }
}

/// A constructed P2 family.
pub struct P2Family {
    /// Full `2(m+1)`-state game; layout `(x^1_1, x^1_2, x^2_1, x^2_2, ...)`
    /// with the evader first.
    pub full: GameSpec,
    /// Per-pursuer reduced games on `(x^1, x^i)` (4 states).
    pub reduced_pairs: Vec<GameSpec>,
    /// Per-pursuer 2-state relative-coordinate games on
    /// `(y1, y2) = (x^1_1 - x^i_1, x^1_2 - x^i_2)`.
    pub reduced_relative: Vec<GameSpec>,
    /// Projection rows mapping full states to each pursuer's `(y1, y2)`.
    pub relative_projections: Vec<Vec<Vec<f64>>>,
    pub params: P2Params,
    pub warnings: Vec<String>,
}

fn damped_thrust_agent(d: impl Fn(f64) -> f64 + Copy + Send + Sync + 'static) -> AgentDynamicsFn {
    Arc::new(move |x, c, out| {
        out[0] = x[1];
        out[1] = -d(x[1]) + c[0];
    })
}

/// Build the full game, the per-pursuer 4-state reduced games, and the
/// 2-state relative-coordinate games. In relative coordinates the dynamics
/// are `(dy1, dy2) = (y2, -d(y2) + a - b)`, exact for linear damping.
pub fn make_p2(params: &P2Params) -> Result<P2Family> {
    let m = params.m;
    if m < 1 || params.betas.len() != m {
        return Err(DgError::InvalidParameter(format!(
            "P2 needs m >= 1 pursuer bounds, got {}",
            params.betas.len()
        )));
    }
    if params.enforce_constraints {
        params.check_constraints()?;
    }
    let mut warnings = Vec::new();
    if params.damping == DampingKind::Linear {
        warnings.push("linear damping d(y) = y violates the boundedness assumption d(y) <= c_d".into());
    }
    let d = params.damping_fn();
    let mut agents = Vec::with_capacity(m + 1);
    agents.push(Agent {
        player: Player::Evader,
        state_indices: vec![0, 1],
        control: speed_grid(params.alpha, params.control_res)?,
        dynamics: damped_thrust_agent(d),
        label: "evader".into(),
    });
    for (i, &b) in params.betas.iter().enumerate() {
        agents.push(Agent {
            player: Player::Pursuer,
            state_indices: vec![2 * (i + 1), 2 * (i + 1) + 1],
            control: speed_grid(b, params.control_res)?,
            dynamics: damped_thrust_agent(d),
            label: format!("pursuer {}", i + 2),
        });
    }
    // Target i: pursuer i overtakes the evader (x^i_1 >= x^1_1). Labels
    // follow the agent numbering, so pursuers are 2..=m+1.
    let targets: Vec<TargetSet> = (0..m)
        .map(|i| {
            let pos = 2 * (i + 1);
            TargetSet::new(
                i + 2,
                format!("x^{}_1 >= x^1_1", i + 2),
                Arc::new(move |x: &[f64]| x[pos] >= x[0]),
            )
            .with_signed_distance(Arc::new(move |x: &[f64]| x[0] - x[pos]))
        })
        .collect();
    let full = GameSpec::decoupled("P2", agents.clone(), min_time_payoff(), 0.0, targets)?;

    let mut reduced_pairs = Vec::with_capacity(m);
    let mut reduced_relative = Vec::with_capacity(m);
    let mut relative_projections = Vec::with_capacity(m);
    for i in 0..m {
        let pair = vec![
            Agent {
                state_indices: vec![0, 1],
                ..agents[0].clone()
            },
            Agent {
                state_indices: vec![2, 3],
                ..agents[i + 1].clone()
            },
        ];
        let target = TargetSet::new(
            i + 2,
            format!("x^{}_1 >= x^1_1", i + 2),
            Arc::new(move |x: &[f64]| x[2] >= x[0]),
        )
        .with_signed_distance(Arc::new(move |x: &[f64]| x[0] - x[2]));
        reduced_pairs.push(GameSpec::decoupled(
            format!("P2 reduced pair {}", i + 2),
            pair,
            min_time_payoff(),
            0.0,
            vec![target],
        )?);

        let rel_dynamics: crate::model::DynamicsFn = Arc::new(move |y, a, b, out| {
            out[0] = y[1];
            out[1] = -d(y[1]) + a[0] - b[0];
        });
        let rel_target = TargetSet::new(
            i + 2,
            "y1 <= 0".to_string(),
            Arc::new(move |y: &[f64]| y[0] <= 0.0),
        )
        .with_signed_distance(Arc::new(move |y: &[f64]| y[0]));
        reduced_relative.push(GameSpec::new(
            format!("P2 relative {}", i + 2),
            2,
            rel_dynamics,
            speed_grid(params.alpha, params.control_res)?,
            speed_grid(params.betas[i], params.control_res)?,
            min_time_payoff(),
            0.0,
            vec![rel_target],
        )?);

        let n = 2 * (m + 1);
        let mut row1 = vec![0.0; n];
        let mut row2 = vec![0.0; n];
        row1[0] = 1.0;
        row1[2 * (i + 1)] = -1.0;
        row2[1] = 1.0;
        row2[2 * (i + 1) + 1] = -1.0;
        relative_projections.push(vec![row1, row2]);
    }
    Ok(P2Family {
        full,
        reduced_pairs,
        reduced_relative,
        relative_projections,
        params: params.clone(),
        warnings,
    })
}

// ---------------------------------------------------------------------------
// P3: two pursuers / single evader with closed-form values
// ---------------------------------------------------------------------------

/// Parameters of the counterexample family.
#[derive(Debug, Clone)]
pub struct P3Params {
    /// Evader speed bound `alpha` in `(0, 1)`; pursuer bounds are 1.
    pub alpha: f64,
    /// Grid thickening of the point-capture targets: `|x_1 - x_j| <= eps`.
    /// Pick the grid spacing when solving on a lattice.
    pub eps_target: f64,
    pub control_res: usize,
}

impl P3Params {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            eps_target: 0.0,
            control_res: 21,
        }
    }

    pub fn with_eps_target(mut self, eps: f64) -> Self {
        self.eps_target = eps;
        self
    }

    pub fn with_control_res(mut self, n: usize) -> Self {
        self.control_res = n;
        self
    }
}

/// A constructed P3 family.
pub struct P3Family {
    /// Full 3-state game `(x_1, x_2, x_3)` with the evader first.
    pub full: GameSpec,
    /// Reduced games on `(x_1, x_2)` and `(x_1, x_3)`.
    pub reduced: Vec<GameSpec>,
    pub oracle: P3Oracle,
}

/// Build the 3-state game, the two reduced pair games, and the closed-form
/// oracle. Targets are labelled 2 and 3 after the pursuing agents.
pub fn make_p3(params: &P3Params) -> Result<P3Family> {
    let alpha = params.alpha;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DgError::InvalidParameter(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    if params.eps_target < 0.0 {
        return Err(DgError::InvalidParameter("eps_target must be >= 0".into()));
    }
    let eps = params.eps_target;
    let agents = vec![
        Agent {
            player: Player::Evader,
            state_indices: vec![0],
            control: speed_grid(alpha, params.control_res)?,
            dynamics: simple_motion(),
            label: "evader".into(),
        },
        Agent {
            player: Player::Pursuer,
            state_indices: vec![1],
            control: speed_grid(1.0, params.control_res)?,
            dynamics: simple_motion(),
            label: "pursuer 2".into(),
        },
        Agent {
            player: Player::Pursuer,
            state_indices: vec![2],
            control: speed_grid(1.0, params.control_res)?,
            dynamics: simple_motion(),
            label: "pursuer 3".into(),
        },
    ];
    let target = |j: usize| {
        TargetSet::new(
            j + 1,
            format!("|x_1 - x_{}| <= {eps}", j + 1),
            Arc::new(move |x: &[f64]| (x[j] - x[0]).abs() <= eps),
        )
        .with_signed_distance(Arc::new(move |x: &[f64]| (x[j] - x[0]).abs() - eps))
    };
    let full = GameSpec::decoupled(
        "P3",
        agents.clone(),
        min_time_payoff(),
        0.0,
        vec![target(1), target(2)],
    )?;

    let mut reduced = Vec::with_capacity(2);
    for j in 1..=2 {
        let pair = vec![
            Agent {
                state_indices: vec![0],
                ..agents[0].clone()
            },
            Agent {
                state_indices: vec![1],
                ..agents[j].clone()
            },
        ];
        let t = TargetSet::new(
            j + 1,
            format!("|x_1 - x_{}| <= {eps}", j + 1),
            Arc::new(move |x: &[f64]| (x[1] - x[0]).abs() <= eps),
        )
        .with_signed_distance(Arc::new(move |x: &[f64]| (x[1] - x[0]).abs() - eps));
        reduced.push(GameSpec::decoupled(
            format!("P3 reduced {}", j + 1),
            pair,
            min_time_payoff(),
            0.0,
            vec![t],
        )?);
    }
    Ok(P3Family {
        full,
        reduced,
        oracle: P3Oracle { alpha },
    })
}

/// Closed forms for the counterexample game.
#[derive(Debug, Clone, Copy)]
pub struct P3Oracle {
    pub alpha: f64,
}

/// Values returned by [`P3Oracle::values`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct P3Values {
    pub u2: f64,
    pub u3: f64,
    pub envelope: f64,
    pub true_u: f64,
    pub in_d: bool,
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

impl P3Oracle {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(DgError::InvalidParameter(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    /// The region where the evader sits between the pursuers at comparable
    /// distances and the decomposition fails (strict inequalities).
    pub fn in_d(&self, x: &[f64]) -> bool {
        let d2 = x[1] - x[0];
        let d3 = x[2] - x[0];
        if sign(d2) != -sign(d3) || sign(d2) == 0 {
            return false;
        }
        let (d2, d3) = (d2.abs(), d3.abs());
        let lo = (1.0 - self.alpha) / (1.0 + self.alpha) * d3;
        let hi = (1.0 + self.alpha) / (1.0 - self.alpha) * d3;
        lo < d2 && d2 < hi
    }

    /// All closed-form quantities at a state.
    pub fn values(&self, x: &[f64]) -> P3Values {
        let g = 1.0 / (1.0 - self.alpha);
        let d2 = (x[1] - x[0]).abs();
        let d3 = (x[2] - x[0]).abs();
        let u2 = g * d2;
        let u3 = g * d3;
        let envelope = u2.min(u3);
        let in_d = self.in_d(x);
        let true_u = if in_d { 0.5 * (d2 + d3) } else { envelope };
        P3Values {
            u2,
            u3,
            envelope,
            true_u,
            in_d,
        }
    }

    /// Gradients of the reduced values at the symmetric crossing states
    /// `(0, z, -z)`, `z > 0`, embedded in the full space.
    pub fn crossing_gradients(&self) -> (Vec<f64>, Vec<f64>) {
        let g = 1.0 / (1.0 - self.alpha);
        (vec![-g, g, 0.0], vec![g, 0.0, -g])
    }
}

/// Residual of condition (E) at the symmetric crossing states of the
/// counterexample, for the convex combination `lambda * grad(u2) +
/// (1 - lambda) * grad(u3)`. Closed form `2 alpha min(lambda, 1-lambda)
/// / (1 - alpha)`; positive for every interior weight, which is exactly how
/// the decomposition fails.
pub fn p3_condition_e_residual(lambda: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(DgError::InvalidParameter(format!(
            "lambda must lie in [0,1], got {lambda}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DgError::InvalidParameter(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    Ok(2.0 * alpha * lambda.min(1.0 - lambda) / (1.0 - alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::hamiltonian_upper;

    #[test]
    fn p3_values_examples() {
        let oracle = P3Oracle::new(0.5).unwrap();
        let v = oracle.values(&[0.0, 1.0, -1.0]);
        assert_eq!(v.u2, 2.0);
        assert_eq!(v.u3, 2.0);
        assert_eq!(v.envelope, 2.0);
        assert!(v.in_d);
        assert_eq!(v.true_u, 1.0);

        let v = oracle.values(&[0.0, 1.0, 5.0]);
        assert_eq!(v.u2, 2.0);
        assert_eq!(v.u3, 10.0);
        assert_eq!(v.envelope, 2.0);
        assert!(!v.in_d); // both pursuers on the same side
        assert_eq!(v.true_u, 2.0);

        let v = oracle.values(&[0.0, 2.0, -1.0]);
        assert!(v.in_d); // 1/3 < 2 < 3
        assert_eq!(v.true_u, 1.5);
        assert_eq!(v.envelope, 2.0);
    }

    #[test]
    fn p3_envelope_dominates_true_value() {
        let oracle = P3Oracle::new(0.3).unwrap();
        let mut state = 1234567u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        for _ in 0..500 {
            let x = [next(), next(), next()];
            let v = oracle.values(&x);
            assert!(v.envelope >= v.true_u - 1e-12);
            if v.in_d {
                assert!(v.envelope > v.true_u + 1e-12, "strict gap expected on D at {x:?}");
            } else {
                assert_eq!(v.envelope, v.true_u);
            }
        }
    }

    #[test]
    fn p3_condition_e_residual_examples() {
        assert_eq!(p3_condition_e_residual(0.5, 0.5).unwrap(), 1.0);
        assert_eq!(p3_condition_e_residual(0.0, 0.5).unwrap(), 0.0);
        assert_eq!(p3_condition_e_residual(0.25, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn p3_condition_e_residual_matches_hamiltonian_on_lattice() {
        for &alpha in &[0.2, 0.5, 0.8] {
            let fam = make_p3(&P3Params::new(alpha)).unwrap();
            let (g2, g3) = fam.oracle.crossing_gradients();
            let x = [0.0, 1.0, -1.0];
            for k in 0..=20 {
                let lambda = k as f64 / 20.0;
                let p: Vec<f64> = g2
                    .iter()
                    .zip(&g3)
                    .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                    .collect();
                let f = hamiltonian_upper(&fam.full, &x, 0.0, &p).unwrap();
                let closed = p3_condition_e_residual(lambda, alpha).unwrap();
                assert!(
                    (f - closed).abs() < 1e-12,
                    "alpha={alpha} lambda={lambda}: {f} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn p3_target_membership() {
        let fam = make_p3(&P3Params::new(0.5)).unwrap();
        // (1,1,7) lies on target 2 (x1 == x2)
        assert_eq!(fam.full.target_hit(&[1.0, 1.0, 7.0]), Some(0));
        assert_eq!(fam.full.targets()[0].id, 2);
        assert!(!fam.full.targets()[1].contains(&[1.0, 1.0, 7.0]));
        // reduced game 2 ignores x3 by construction
        assert_eq!(fam.reduced[0].state_dim(), 2);
    }

    #[test]
    fn p3_rejects_bad_alpha() {
        assert!(make_p3(&P3Params::new(0.0)).is_err());
        assert!(make_p3(&P3Params::new(1.0)).is_err());
        assert!(p3_condition_e_residual(0.5, 1.5).is_err());
        assert!(p3_condition_e_residual(1.5, 0.5).is_err());
    }

    #[test]
    fn p1_reduced_oracle_example() {
        let params = P1Params::new(vec![0.5, 0.5], 1.0, 0.1);
        assert!((p1_reduced_value(&params, 0, 0.0, 1.0) - 1.8).abs() < 1e-12);
        // already within the capture radius
        assert_eq!(p1_reduced_value(&params, 1, 0.0, 0.05), 0.0);
    }

    #[test]
    fn p1_construction() {
        let params = P1Params::new(vec![0.5, 0.5], 1.0, 0.1).with_control_res(3);
        let fam = make_p1(&params).unwrap();
        assert_eq!(fam.full.state_dim(), 3);
        assert_eq!(fam.reduced.len(), 2);
        assert_eq!(fam.reduced[0].state_dim(), 2);
        assert_eq!(fam.full.targets()[1].id, 2);
        // m = 1: the full game and the reduced game share dynamics shape
        let single = make_p1(&P1Params::new(vec![0.5], 1.0, 0.1)).unwrap();
        assert_eq!(single.full.state_dim(), 2);
        assert_eq!(single.reduced[0].state_dim(), 2);
        // evader faster than pursuer is rejected when enforcement is on
        assert!(make_p1(&P1Params::new(vec![1.5], 1.0, 0.1)).is_err());
        assert!(make_p1(&P1Params {
            m: 0,
            alphas: vec![],
            beta: 1.0,
            capture_radius: 0.1,
            enforce_capture: true,
            control_res: 3
        })
        .is_err());
    }

    #[test]
    fn p2_damping_bounds_hold_by_construction() {
        let params = P2Params::default();
        let d = params.damping_fn();
        let mut state = 97531u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(99);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 10.0 - 5.0
        };
        for _ in 0..1000 {
            let (y, yp) = (next(), next());
            assert!((d(y) - d(yp)).abs() <= params.k_d() * (y - yp).abs() + 1e-15);
            assert!(d(y) <= params.c_d + 1e-15);
        }
    }

    #[test]
    fn p2_constraint_check() {
        // alpha=0.4, beta=1.0, c_d=0.2: 1.0 > 0.8 passes
        P2Params::default().check_constraints().unwrap();
        let bad = P2Params {
            betas: vec![0.7, 1.0],
            ..P2Params::default()
        };
        assert!(bad.check_constraints().is_err());
        assert!(make_p2(&bad).is_err());
    }

    #[test]
    fn p2_relative_target_matches_overtake() {
        let fam = make_p2(&P2Params::default()).unwrap();
        // y1 <= 0 iff x^i_1 >= x^1_1
        let rel = &fam.reduced_relative[0];
        assert!(rel.targets()[0].contains(&[0.0, 1.0]));
        assert!(rel.targets()[0].contains(&[-0.3, 1.0]));
        assert!(!rel.targets()[0].contains(&[0.2, -1.0]));
        // full-state projection produces the same classification
        let proj = &fam.relative_projections[0];
        let x = [1.0, 0.0, 1.5, 0.0, -9.0, 0.0]; // pursuer 2 ahead of evader
        let y1: f64 = proj[0].iter().zip(&x).map(|(c, xi)| c * xi).sum();
        assert!(y1 <= 0.0);
        assert!(fam.full.targets()[0].contains(&x));
    }

    #[test]
    fn p2_linear_damping_is_flagged() {
        let params = P2Params {
            damping: DampingKind::Linear,
            enforce_constraints: false,
            ..P2Params::default()
        };
        let fam = make_p2(&params).unwrap();
        assert_eq!(fam.warnings.len(), 1);
    }

    #[test]
    fn target_consistency_sampled() {
        let fam = make_p3(&P3Params::new(0.5).with_eps_target(0.05)).unwrap();
        let samples: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let t = i as f64 / 199.0 * 4.0 - 2.0;
                vec![t, -t * 0.5, t * 0.25 + 0.3]
            })
            .collect();
        for t in fam.full.targets() {
            t.check_consistency(&samples).unwrap();
        }
    }
}

//! Game definitions and Hamiltonians.
//!
//! A [`GameSpec`] bundles everything that defines a two-player zero-sum
//! differential game terminated on a union of targets: the dynamics
//! `ẋ = f(x, a, b)`, the discretized control sets `A` and `B`, the payoff
//! integrand `l`, the discount rate, and the ordered target family. The
//! upper and lower Hamiltonians are evaluated by brute-force min/max over
//! the finite control grids:
//!
//! ```text
//! F(x, u, p) = λu + min_a max_b { -p·f(x,a,b) - l(x,a,b) }
//! G(x, u, p) = λu + max_b min_a { -p·f(x,a,b) - l(x,a,b) }
//! ```
//!
//! Games whose agents have decoupled dynamics additionally expose the
//! per-agent Hamiltonian `H^i(x_i, p_i) = sup p_i·f_i(x_i, ·)`, the building
//! block of the decomposition analysis.

use std::fmt;
use std::sync::Arc;

use crate::error::{DgError, Result};

/// Joint dynamics closure: writes `f(x, a, b)` into `out`.
pub type DynamicsFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Payoff integrand closure `l(x, a, b)`.
pub type PayoffFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
/// Set membership predicate over full states.
pub type MembershipFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
/// Signed distance to a set (negative inside).
pub type SignedDistFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Per-agent dynamics closure: writes `f_i(x_i, c)` into `out`.
pub type AgentDynamicsFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// A finite sampling of a control set.
#[derive(Clone)]
pub struct ControlGrid {
    points: Vec<Vec<f64>>,
    /// Human-readable description, e.g. `"interval [-1,1], 21 samples"`.
    pub description: String,
}

impl ControlGrid {
    /// Explicit point list. Points must be non-empty, share a dimension,
    /// and contain no duplicates.
    pub fn from_points(points: Vec<Vec<f64>>, description: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(DgError::InvalidParameter("empty control grid".into()));
        }
        let dim = points[0].len();
        for p in &points {
            if p.len() != dim {
                return Err(DgError::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if points[i] == points[j] {
                    return Err(DgError::InvalidParameter(format!(
                        "duplicate control point {:?}",
                        points[i]
                    )));
                }
            }
        }
        Ok(Self {
            points,
            description: description.into(),
        })
    }

    /// Uniform sampling of an interval, endpoints included.
    pub fn interval(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo < hi) || n < 2 {
            if lo == hi && n == 1 {
                return Self::from_points(vec![vec![lo]], format!("singleton {{{lo}}}"));
            }
            return Err(DgError::InvalidParameter(format!(
                "bad control interval [{lo},{hi}] with {n} samples"
            )));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let points = (0..n).map(|i| vec![lo + i as f64 * h]).collect();
        Self::from_points(points, format!("interval [{lo},{hi}], {n} samples"))
    }

    /// Single fixed control value (pure-control games).
    pub fn singleton(value: Vec<f64>) -> Self {
        let desc = format!("singleton {value:?}");
        Self::from_points(vec![value], desc).expect("singleton is always valid")
    }

    /// Cartesian product of several grids, components concatenated.
    pub fn product(grids: &[ControlGrid]) -> Result<Self> {
        if grids.is_empty() {
            return Err(DgError::InvalidParameter("empty grid product".into()));
        }
        let mut points: Vec<Vec<f64>> = vec![Vec::new()];
        for g in grids {
            let mut next = Vec::with_capacity(points.len() * g.points.len());
            for prefix in &points {
                for p in &g.points {
                    let mut q = prefix.clone();
                    q.extend_from_slice(p);
                    next.push(q);
                }
            }
            points = next;
        }
        let description = grids
            .iter()
            .map(|g| g.description.clone())
            .collect::<Vec<_>>()
            .join(" x ");
        Self::from_points(points, description)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl fmt::Debug for ControlGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ControlGrid({}, {} points)", self.description, self.len())
    }
}

/// One closed target component `T_j`.
#[derive(Clone)]
pub struct TargetSet {
    membership: MembershipFn,
    signed_distance: Option<SignedDistFn>,
    /// Identifier used in reports; game constructors use the paper-style
    /// agent labels (P3 targets are labelled 2 and 3).
    pub id: usize,
    pub description: String,
}

impl TargetSet {
    pub fn new(id: usize, description: impl Into<String>, membership: MembershipFn) -> Self {
        Self {
            membership,
            signed_distance: None,
            id,
            description: description.into(),
        }
    }

    pub fn with_signed_distance(mut self, sd: SignedDistFn) -> Self {
        self.signed_distance = Some(sd);
        self
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (self.membership)(x)
    }

    pub fn signed_distance(&self, x: &[f64]) -> Option<f64> {
        self.signed_distance.as_ref().map(|f| f(x))
    }

    /// Membership and signed distance must agree wherever both are defined.
    pub fn check_consistency(&self, samples: &[Vec<f64>]) -> Result<()> {
        if let Some(sd) = &self.signed_distance {
            for x in samples {
                let inside = (self.membership)(x);
                let d = sd(x);
                if inside != (d <= 0.0) {
                    return Err(DgError::InvalidParameter(format!(
                        "target {} membership/signed-distance disagree at {:?} (d = {d})",
                        self.id, x
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for TargetSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TargetSet(id={}, {})", self.id, self.description)
    }
}

/// Which player owns an agent in a decoupled game.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    /// Maximizer (the `a`-player).
    Evader,
    /// Minimizer (the `b`-player).
    Pursuer,
}

/// One agent of an agent-decoupled game: a state block driven by a private
/// control through private dynamics.
#[derive(Clone)]
pub struct Agent {
    pub player: Player,
    /// Indices of the agent's block in the full state vector.
    pub state_indices: Vec<usize>,
    pub control: ControlGrid,
    pub dynamics: AgentDynamicsFn,
    pub label: String,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Agent({}, {:?}, state {:?})", self.label, self.player, self.state_indices)
    }
}

/// A fully assembled game definition. Immutable after construction and
/// safe to share across parallel workers.
#[derive(Clone)]
pub struct GameSpec {
    pub name: String,
    state_dim: usize,
    dynamics: DynamicsFn,
    control_a: ControlGrid,
    control_b: ControlGrid,
    payoff: PayoffFn,
    /// Discount rate λ ≥ 0; zero selects the minimum-time formulation.
    pub discount: f64,
    targets: Vec<TargetSet>,
    agents: Option<Vec<Agent>>,
}

impl fmt::Debug for GameSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "GameSpec({}, n={}, |A|={}, |B|={}, {} targets)",
            self.name,
            self.state_dim,
            self.control_a.len(),
            self.control_b.len(),
            self.targets.len()
        )
    }
}

impl GameSpec {
    /// Assemble a game from a raw dynamics closure (the in-code extension
    /// point; the paper families live in [`crate::games`]).
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        dynamics: DynamicsFn,
        control_a: ControlGrid,
        control_b: ControlGrid,
        payoff: PayoffFn,
        discount: f64,
        targets: Vec<TargetSet>,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(DgError::InvalidParameter("target list is empty".into()));
        }
        if discount < 0.0 {
            return Err(DgError::InvalidParameter("discount must be >= 0".into()));
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            dynamics,
            control_a,
            control_b,
            payoff,
            discount,
            targets,
            agents: None,
        })
    }

    /// Assemble an agent-decoupled game from per-agent blocks. The joint
    /// dynamics, control grids, and evader/pursuer control splits are all
    /// derived from the blocks, so the decoupled structure is consistent
    /// by construction.
    pub fn decoupled(
        name: impl Into<String>,
        agents: Vec<Agent>,
        payoff: PayoffFn,
        discount: f64,
        targets: Vec<TargetSet>,
    ) -> Result<Self> {
        let state_dim = agents.iter().map(|a| a.state_indices.len()).sum();
        let mut seen = vec![false; state_dim];
        for a in &agents {
            for &i in &a.state_indices {
                if i >= state_dim || seen[i] {
                    return Err(DgError::InvalidParameter(format!(
                        "agent state blocks must partition 0..{state_dim}"
                    )));
                }
                seen[i] = true;
            }
        }
        let evader_grids: Vec<_> = agents
            .iter()
            .filter(|a| a.player == Player::Evader)
            .map(|a| a.control.clone())
            .collect();
        let pursuer_grids: Vec<_> = agents
            .iter()
            .filter(|a| a.player == Player::Pursuer)
            .map(|a| a.control.clone())
            .collect();
        if evader_grids.is_empty() || pursuer_grids.is_empty() {
            return Err(DgError::InvalidParameter(
                "decoupled game needs at least one agent per player".into(),
            ));
        }
        let control_a = ControlGrid::product(&evader_grids)?;
        let control_b = ControlGrid::product(&pursuer_grids)?;

        let blocks = agents.clone();
        let dynamics: DynamicsFn = Arc::new(move |x, a, b, out| {
            let mut a_off = 0;
            let mut b_off = 0;
            let mut xi = [0.0f64; MAX_STATE_DIM];
            let mut vi = [0.0f64; MAX_STATE_DIM];
            for agent in &blocks {
                let k = agent.state_indices.len();
                let cdim = agent.control.dim();
                for (s, &idx) in agent.state_indices.iter().enumerate() {
                    xi[s] = x[idx];
                }
                let ctrl = match agent.player {
                    Player::Evader => &a[a_off..a_off + cdim],
                    Player::Pursuer => &b[b_off..b_off + cdim],
                };
                (agent.dynamics)(&xi[..k], ctrl, &mut vi[..k]);
                for (s, &idx) in agent.state_indices.iter().enumerate() {
                    out[idx] = vi[s];
                }
                match agent.player {
                    Player::Evader => a_off += cdim,
                    Player::Pursuer => b_off += cdim,
                }
            }
        });

        let mut spec = Self::new(name, state_dim, dynamics, control_a, control_b, payoff, discount, targets)?;
        spec.agents = Some(agents);
        Ok(spec)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_a(&self) -> &ControlGrid {
        &self.control_a
    }

    pub fn control_b(&self) -> &ControlGrid {
        &self.control_b
    }

    pub fn targets(&self) -> &[TargetSet] {
        &self.targets
    }

    pub fn agents(&self) -> Option<&[Agent]> {
        self.agents.as_deref()
    }

    pub fn in_any_target(&self, x: &[f64]) -> bool {
        self.targets.iter().any(|t| t.contains(x))
    }

    /// Index (into the target list) of the first target containing `x`.
    pub fn target_hit(&self, x: &[f64]) -> Option<usize> {
        self.targets.iter().position(|t| t.contains(x))
    }

    pub fn payoff(&self, x: &[f64], a: &[f64], b: &[f64]) -> f64 {
        (self.payoff)(x, a, b)
    }

    /// Raw dynamics evaluation into a caller-provided buffer (hot path).
    #[inline]
    pub fn dynamics_into(&self, x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        (self.dynamics)(x, a, b, out);
    }

    /// Sample the dynamics over a state box and both control grids and
    /// verify the velocity stays finite.
    pub fn check_bounded(&self, lo: &[f64], hi: &[f64], samples_per_axis: usize) -> Result<()> {
        if lo.len() != self.state_dim || hi.len() != self.state_dim {
            return Err(DgError::DimensionMismatch {
                expected: self.state_dim,
                got: lo.len(),
            });
        }
        let n = samples_per_axis.max(2);
        let total: usize = n.pow(self.state_dim.min(4) as u32);
        let mut x = vec![0.0; self.state_dim];
        let mut v = vec![0.0; self.state_dim];
        for s in 0..total {
            let mut rem = s;
            for d in 0..self.state_dim {
                let i = if d < 4 { rem % n } else { s % n };
                if d < 4 {
                    rem /= n;
                }
                x[d] = lo[d] + (hi[d] - lo[d]) * i as f64 / (n - 1) as f64;
            }
            for a in self.control_a.points() {
                for b in self.control_b.points() {
                    self.dynamics_into(&x, a, b, &mut v);
                    if v.iter().any(|c| !c.is_finite()) {
                        return Err(DgError::Numerical(format!(
                            "dynamics unbounded at x={x:?}, a={a:?}, b={b:?}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Largest supported state dimension for stack-allocated scratch space.
pub const MAX_STATE_DIM: usize = 8;

/// Evaluate `f(x, a, b)`.
pub fn eval_dynamics(spec: &GameSpec, x: &[f64], a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.state_dim() {
        return Err(DgError::DimensionMismatch {
            expected: spec.state_dim(),
            got: x.len(),
        });
    }
    if a.len() != spec.control_a().dim() {
        return Err(DgError::DimensionMismatch {
            expected: spec.control_a().dim(),
            got: a.len(),
        });
    }
    if b.len() != spec.control_b().dim() {
        return Err(DgError::DimensionMismatch {
            expected: spec.control_b().dim(),
            got: b.len(),
        });
    }
    let mut out = vec![0.0; spec.state_dim()];
    spec.dynamics_into(x, a, b, &mut out);
    Ok(out)
}

#[inline]
fn negated_running_term(spec: &GameSpec, x: &[f64], a: &[f64], b: &[f64], p: &[f64]) -> f64 {
    let mut v = [0.0f64; MAX_STATE_DIM];
    let mut vec_buf;
    let vel: &mut [f64] = if spec.state_dim() <= MAX_STATE_DIM {
        &mut v[..spec.state_dim()]
    } else {
        vec_buf = vec![0.0; spec.state_dim()];
        &mut vec_buf
    };
    spec.dynamics_into(x, a, b, vel);
    let mut dot = 0.0;
    for d in 0..spec.state_dim() {
        dot += p[d] * vel[d];
    }
    -dot - spec.payoff(x, a, b)
}

/// Upper Hamiltonian `F(x, u, p) = λu + min_a max_b { -p·f - l }`.
pub fn hamiltonian_upper(spec: &GameSpec, x: &[f64], u: f64, p: &[f64]) -> Result<f64> {
    if p.len() != spec.state_dim() {
        return Err(DgError::DimensionMismatch {
            expected: spec.state_dim(),
            got: p.len(),
        });
    }
    let mut outer = f64::INFINITY;
    for a in spec.control_a().points() {
        let mut inner = f64::NEG_INFINITY;
        for b in spec.control_b().points() {
            inner = inner.max(negated_running_term(spec, x, a, b, p));
        }
        outer = outer.min(inner);
    }
    Ok(spec.discount * u + outer)
}

/// Lower Hamiltonian `G(x, u, p) = λu + max_b min_a { -p·f - l }`.
pub fn hamiltonian_lower(spec: &GameSpec, x: &[f64], u: f64, p: &[f64]) -> Result<f64> {
    if p.len() != spec.state_dim() {
        return Err(DgError::DimensionMismatch {
            expected: spec.state_dim(),
            got: p.len(),
        });
    }
    let mut outer = f64::NEG_INFINITY;
    for b in spec.control_b().points() {
        let mut inner = f64::INFINITY;
        for a in spec.control_a().points() {
            inner = inner.min(negated_running_term(spec, x, a, b, p));
        }
        outer = outer.max(inner);
    }
    Ok(spec.discount * u + outer)
}

/// Per-agent Hamiltonian `H^i(x_i, p_i) = sup p_i·f_i(x_i, ·)` over that
/// agent's control samples. Only defined for agent-decoupled games.
pub fn decoupled_hamiltonian(
    spec: &GameSpec,
    agent_index: usize,
    x_i: &[f64],
    p_i: &[f64],
) -> Result<f64> {
    let agents = spec.agents().ok_or(DgError::NotDecoupled)?;
    let agent = agents
        .get(agent_index)
        .ok_or(DgError::AgentIndexOutOfRange(agent_index))?;
    let k = agent.state_indices.len();
    if x_i.len() != k || p_i.len() != k {
        return Err(DgError::DimensionMismatch {
            expected: k,
            got: x_i.len().max(p_i.len()),
        });
    }
    let mut v = vec![0.0; k];
    let mut best = f64::NEG_INFINITY;
    for c in agent.control.points() {
        (agent.dynamics)(x_i, c, &mut v);
        let dot: f64 = p_i.iter().zip(&v).map(|(p, f)| p * f).sum();
        best = best.max(dot);
    }
    Ok(best)
}

/// `F - G` at `(x, 0, p)`; nonnegative up to control-grid discretization,
/// zero for control-decoupled games.
pub fn isaacs_gap(spec: &GameSpec, x: &[f64], p: &[f64]) -> Result<f64> {
    Ok(hamiltonian_upper(spec, x, 0.0, p)? - hamiltonian_lower(spec, x, 0.0, p)?)
}

//! Lower-envelope decomposition and viscosity-solution checks.
//!
//! Given reduced value functions `u_j` (one per target subset), the envelope
//! `ū(x) = min_j u_j(x)` is always a supersolution of the HJI equation. It
//! is a subsolution — and hence the value of the original game — when, at
//! every crossing point, convex combinations of active-branch supergradients
//! satisfy either
//!
//! ```text
//! (C)  F(x, ū, Σ λ_j p_j) <= Σ λ_j F(x, u_j, p_j)        or
//! (E)  F(x, ū, Σ λ_j p_j) <= 0
//! ```
//!
//! This module locates the crossing set, estimates branch supergradients
//! from the numeric fields, enumerates convex weights, and reports the worst
//! residual of each inequality.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{DgError, Result};
use crate::grid::{
    estimate_limiting_superdiff, mask_for, FieldScale, Grid, NodeMask, Projection, ReducedField,
    ValueField,
};
use crate::model::{hamiltonian_upper, GameSpec, MembershipFn, TargetSet};
use crate::solver::{kruzkov, SolveResult};

/// One branch of an envelope: a reduced value function, its embedding, and
/// (optionally) the full-state membership test of its target.
#[derive(Clone)]
pub struct EnvelopeComponent {
    /// Report label; game constructors use the paper-style agent numbering.
    pub id: usize,
    /// Time-scale reduced field.
    pub reduced: ReducedField,
    pub target: Option<MembershipFn>,
}

impl EnvelopeComponent {
    pub fn new(id: usize, reduced: ReducedField) -> Self {
        Self {
            id,
            reduced,
            target: None,
        }
    }

    /// Attach the component's target set, composed with the projection.
    pub fn with_target(mut self, target: TargetSet, projection: Projection) -> Self {
        let k = projection.reduced_dim();
        self.target = Some(std::sync::Arc::new(move |x: &[f64]| {
            let mut y = [0.0f64; crate::model::MAX_STATE_DIM];
            projection.apply(x, &mut y[..k]);
            target.contains(&y[..k])
        }));
        self
    }

    /// Build a component from a converged reduced solve.
    pub fn from_solve(spec: &GameSpec, projection: Projection, result: &SolveResult) -> Result<Self> {
        let reduced = ReducedField::new(result.time_field(), projection.clone())?;
        let target = spec.targets()[0].clone();
        let id = target.id;
        Ok(Self::new(id, reduced).with_target(target, projection))
    }
}

/// A family of reduced fields with the active-index machinery of the
/// decomposition. Immutable and shareable across threads.
#[derive(Clone)]
pub struct EnvelopeField {
    components: Vec<EnvelopeComponent>,
    /// Two components count as jointly active when their values are within
    /// this tolerance of the minimum.
    pub tol_eq: f64,
    full_dim: usize,
    /// Active-index map cached for one query grid.
    cache: Option<(Grid, Vec<Vec<usize>>)>,
}

/// Default equality tolerance: twice the first-order scheme-error estimate
/// `C h`. The convergence study on the closed-form pair games measured
/// `C ≈ 1` in time scale at moderate values, so this is `2 h`.
pub fn auto_tol_eq(max_spacing: f64) -> f64 {
    2.0 * max_spacing
}

impl EnvelopeField {
    pub fn new(full_dim: usize, components: Vec<EnvelopeComponent>, tol_eq: f64) -> Result<Self> {
        if components.is_empty() {
            return Err(DgError::Incompatible("envelope needs components".into()));
        }
        if tol_eq <= 0.0 {
            return Err(DgError::InvalidParameter("tol_eq must be positive".into()));
        }
        for c in &components {
            if c.reduced.field.scale != FieldScale::Time {
                return Err(DgError::Incompatible(
                    "envelope components must be time-scale fields".into(),
                ));
            }
            match &c.reduced.projection {
                Projection::Coords(ix) => {
                    if ix.iter().any(|&i| i >= full_dim) {
                        return Err(DgError::Incompatible(format!(
                            "projection index out of range for state dim {full_dim}"
                        )));
                    }
                }
                Projection::Linear(rows) => {
                    if rows.iter().any(|r| r.len() != full_dim) {
                        return Err(DgError::Incompatible(format!(
                            "linear projection rows must have length {full_dim}"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            components,
            tol_eq,
            full_dim,
            cache: None,
        })
    }

    pub fn components(&self) -> &[EnvelopeComponent] {
        &self.components
    }

    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    pub fn component_values(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.reduced.value_at(x)).collect()
    }

    /// `ū(x) = min_j u_j(x)`; zero inside any component's target by
    /// convention (the envelope extends continuously to the target, where
    /// it vanishes).
    pub fn value(&self, x: &[f64]) -> f64 {
        if self.in_any_target(x) {
            return 0.0;
        }
        self.component_values(x).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn in_any_target(&self, x: &[f64]) -> bool {
        self.components
            .iter()
            .any(|c| c.target.as_ref().map_or(false, |t| t(x)))
    }

    /// Component ids whose value is within `tol_eq` of the minimum.
    pub fn active_set(&self, x: &[f64]) -> Vec<usize> {
        let vals = self.component_values(x);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        self.components
            .iter()
            .zip(&vals)
            .filter(|(_, &v)| v <= min + self.tol_eq)
            .map(|(c, _)| c.id)
            .collect()
    }

    /// Id of the strictly smallest component (ties to the first).
    pub fn argmin_id(&self, x: &[f64]) -> usize {
        let vals = self.component_values(x);
        let mut best = 0;
        for (i, v) in vals.iter().enumerate() {
            if *v < vals[best] {
                best = i;
            }
        }
        self.components[best].id
    }

    /// Query nodes outside all targets where at least two components are
    /// active (the crossing set, thickened by `tol_eq`).
    pub fn sigma_set(&self, query: &Grid) -> Vec<Vec<f64>> {
        let map = self.active_map(query);
        let mut x = vec![0.0; query.dim()];
        let mut out = Vec::new();
        for (i, active) in map.iter().enumerate() {
            if active.len() >= 2 {
                query.node_coords(i, &mut x);
                out.push(x.clone());
            }
        }
        out
    }

    /// Active sets per query node; empty set marks target nodes.
    pub fn active_map(&self, query: &Grid) -> Vec<Vec<usize>> {
        if let Some((g, map)) = &self.cache {
            if g == query {
                return map.clone();
            }
        }
        self.compute_active_map(query)
    }

    fn compute_active_map(&self, query: &Grid) -> Vec<Vec<usize>> {
        let dim = query.dim();
        (0..query.len())
            .into_par_iter()
            .map(|i| {
                let mut x = vec![0.0; dim];
                query.node_coords(i, &mut x);
                if self.in_any_target(&x) {
                    Vec::new()
                } else {
                    self.active_set(&x)
                }
            })
            .collect()
    }

    /// Precompute and cache the active map for a query grid.
    pub fn with_active_cache(mut self, query: &Grid) -> Self {
        let map = self.compute_active_map(query);
        self.cache = Some((query.clone(), map));
        self
    }
}

// ---------------------------------------------------------------------------
// Condition (C)/(E) checks
// ---------------------------------------------------------------------------

/// Knobs shared by the condition and viscosity checkers.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CheckConfig {
    /// Estimate of the numeric error scale; zero derives `2 h` from the
    /// component grids. Enters the violation threshold.
    pub tol_numeric: f64,
    /// Simplex-lattice subdivisions for convex weights.
    pub weights_per_axis: usize,
    /// Random convex weights drawn when more than four components are
    /// active at once.
    pub dirichlet_samples: usize,
    /// Supergradient sampling radius as a multiple of the grid spacing.
    pub radius_factor: f64,
    /// Supergradient sample count.
    pub samples: usize,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            tol_numeric: 0.0,
            weights_per_axis: 10,
            dirichlet_samples: 200,
            radius_factor: 4.0,
            samples: 64,
            seed: 0,
        }
    }
}

impl CheckConfig {
    fn resolved_tol_numeric(&self, max_spacing: f64) -> f64 {
        if self.tol_numeric > 0.0 {
            self.tol_numeric
        } else {
            2.0 * max_spacing
        }
    }

    /// Residuals above this are reported as violations rather than
    /// discretization noise.
    pub fn violation_threshold(&self, max_spacing: f64, f_scale: f64) -> f64 {
        (10.0 * self.resolved_tol_numeric(max_spacing)).max(0.05 * (1.0 + f_scale.abs()))
    }
}

/// Verdict of one condition check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "HOLDS")]
    Holds,
    #[serde(rename = "VIOLATED")]
    Violated,
    #[serde(rename = "INCONCLUSIVE")]
    Inconclusive,
}

/// Supergradient candidates attached to a report, embedded in the full
/// state space.
#[derive(Debug, Clone, Serialize)]
pub struct GradientSamples {
    pub id: usize,
    pub vectors: Vec<Vec<f64>>,
}

/// Per-point residuals of hypotheses (C) and (E) with verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub point: Vec<f64>,
    pub active: Vec<usize>,
    #[serde(rename = "residual_C")]
    pub residual_c: f64,
    #[serde(rename = "residual_E")]
    pub residual_e: f64,
    pub verdict: Verdict,
    pub samples: Vec<GradientSamples>,
    #[serde(skip)]
    pub verdict_c: Verdict,
    #[serde(skip)]
    pub verdict_e: Verdict,
    #[serde(skip)]
    pub threshold: f64,
}

/// All convex-weight vectors on the `k`-simplex with `subdivisions` steps.
pub fn simplex_lattice(k: usize, subdivisions: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, subdivisions: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for take in 0..=left {
            prefix.push(take);
            rec(k - 1, left - take, subdivisions, prefix, out);
            prefix.pop();
        }
    }
    let mut raw = Vec::new();
    rec(k, subdivisions, subdivisions, &mut Vec::new(), &mut raw);
    raw.into_iter()
        .map(|c| c.into_iter().map(|i| i as f64 / subdivisions as f64).collect())
        .collect()
}

fn dirichlet_weights(k: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| -rng.gen_range(1e-12..1.0f64).ln()).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect()
        })
        .collect()
}

fn sanitize_u(spec: &GameSpec, u: f64) -> f64 {
    // F carries u only through the λu term; keep ∞ values out of 0·∞.
    if spec.discount == 0.0 || !u.is_finite() {
        0.0
    } else {
        u
    }
}

/// Worst residuals of (C) and (E) over all convex weights and all gradient
/// choices. `branches` holds, per active component, the value `u_j(x)` and
/// its candidate supergradients (full-dimensional).
///
/// Returns `(residual_C, residual_E, f_scale)` where `f_scale` is the
/// largest branch Hamiltonian magnitude encountered.
pub fn condition_residuals(
    spec: &GameSpec,
    x: &[f64],
    u_bar: f64,
    branches: &[(f64, Vec<Vec<f64>>)],
    cfg: &CheckConfig,
) -> Result<(f64, f64, f64)> {
    let k = branches.len();
    debug_assert!(k >= 2);
    let weights = if k <= 4 {
        simplex_lattice(k, cfg.weights_per_axis.max(1))
    } else {
        dirichlet_weights(k, cfg.dirichlet_samples, cfg.seed)
    };
    // enumerate gradient choices per branch (cartesian product, capped)
    let mut choices: Vec<Vec<usize>> = vec![Vec::new()];
    for (_, vecs) in branches {
        let mut next = Vec::new();
        for prefix in &choices {
            for vi in 0..vecs.len() {
                let mut c = prefix.clone();
                c.push(vi);
                next.push(c);
                if next.len() >= 256 {
                    break;
                }
            }
            if next.len() >= 256 {
                break;
            }
        }
        choices = next;
    }
    let n = spec.state_dim();
    let mut residual_c = f64::NEG_INFINITY;
    let mut residual_e = f64::NEG_INFINITY;
    let mut f_scale = 0.0f64;
    let mut combo = vec![0.0; n];
    for choice in &choices {
        // branch Hamiltonians for this choice
        let mut branch_f = Vec::with_capacity(k);
        for (j, &vi) in choice.iter().enumerate() {
            let (u_j, vecs) = &branches[j];
            let f = hamiltonian_upper(spec, x, sanitize_u(spec, *u_j), &vecs[vi])?;
            f_scale = f_scale.max(f.abs());
            branch_f.push(f);
        }
        for w in &weights {
            combo.iter_mut().for_each(|c| *c = 0.0);
            for (j, &vi) in choice.iter().enumerate() {
                let p = &branches[j].1[vi];
                for d in 0..n {
                    combo[d] += w[j] * p[d];
                }
            }
            let f_combo = hamiltonian_upper(spec, x, sanitize_u(spec, u_bar), &combo)?;
            let rhs: f64 = w.iter().zip(&branch_f).map(|(wi, fi)| wi * fi).sum();
            residual_c = residual_c.max(f_combo - rhs);
            residual_e = residual_e.max(f_combo);
        }
    }
    Ok((residual_c, residual_e, f_scale))
}

fn report_from_branches(
    env: &EnvelopeField,
    spec: &GameSpec,
    x: &[f64],
    active: Vec<usize>,
    branches: Vec<(f64, Vec<Vec<f64>>)>,
    samples: Vec<GradientSamples>,
    cfg: &CheckConfig,
    max_spacing: f64,
) -> Result<ConditionReport> {
    let (residual_c, residual_e, f_scale) =
        condition_residuals(spec, x, env.value(x), &branches, cfg)?;
    let threshold = cfg.violation_threshold(max_spacing, f_scale);
    let verdict_c = if residual_c > threshold {
        Verdict::Violated
    } else {
        Verdict::Holds
    };
    let verdict_e = if residual_e > threshold {
        Verdict::Violated
    } else {
        Verdict::Holds
    };
    let verdict = if verdict_c == Verdict::Violated || verdict_e == Verdict::Violated {
        Verdict::Violated
    } else {
        Verdict::Holds
    };
    Ok(ConditionReport {
        point: x.to_vec(),
        active,
        residual_c,
        residual_e,
        verdict,
        samples,
        verdict_c,
        verdict_e,
        threshold,
    })
}

fn component_spacing(env: &EnvelopeField) -> f64 {
    env.components()
        .iter()
        .map(|c| c.reduced.field.grid().max_spacing())
        .fold(0.0, f64::max)
}

/// Test hypotheses (C) and (E) at one point with supergradients estimated
/// from the component fields. Points with a singleton active set hold
/// vacuously; empty gradient estimates give an inconclusive verdict.
pub fn check_conditions(
    env: &EnvelopeField,
    spec: &GameSpec,
    x: &[f64],
    cfg: &CheckConfig,
) -> Result<ConditionReport> {
    let active = env.active_set(x);
    if active.len() < 2 {
        return Ok(ConditionReport {
            point: x.to_vec(),
            active,
            residual_c: 0.0,
            residual_e: 0.0,
            verdict: Verdict::Holds,
            samples: Vec::new(),
            verdict_c: Verdict::Holds,
            verdict_e: Verdict::Holds,
            threshold: cfg.violation_threshold(component_spacing(env), 0.0),
        });
    }
    let mut branches = Vec::with_capacity(active.len());
    let mut samples = Vec::with_capacity(active.len());
    for &id in &active {
        let comp = env
            .components()
            .iter()
            .find(|c| c.id == id)
            .expect("active ids come from the component list");
        let k = comp.reduced.reduced_dim();
        let mut y = vec![0.0; k];
        comp.reduced.projection.apply(x, &mut y);
        let h = comp.reduced.field.grid().max_spacing();
        let est = estimate_limiting_superdiff(
            &comp.reduced.field,
            &y,
            cfg.radius_factor * h,
            cfg.samples,
            cfg.seed.wrapping_add(id as u64).wrapping_mul(0x9E3779B97F4A7C15),
        );
        if est.vectors.is_empty() {
            return Ok(ConditionReport {
                point: x.to_vec(),
                active,
                residual_c: f64::NAN,
                residual_e: f64::NAN,
                verdict: Verdict::Inconclusive,
                samples,
                verdict_c: Verdict::Inconclusive,
                verdict_e: Verdict::Inconclusive,
                threshold: cfg.violation_threshold(component_spacing(env), 0.0),
            });
        }
        let embedded: Vec<Vec<f64>> = est
            .vectors
            .iter()
            .map(|g| comp.reduced.projection.embed_gradient(g, env.full_dim()))
            .collect();
        branches.push((comp.reduced.value_at(x), embedded.clone()));
        samples.push(GradientSamples { id, vectors: embedded });
    }
    report_from_branches(env, spec, x, active, branches, samples, cfg, component_spacing(env))
}

/// Same check with caller-provided supergradients (full-dimensional), one
/// list per active component in active-set order.
pub fn check_conditions_with_gradients(
    env: &EnvelopeField,
    spec: &GameSpec,
    x: &[f64],
    gradients: &[Vec<Vec<f64>>],
    cfg: &CheckConfig,
) -> Result<ConditionReport> {
    let active = env.active_set(x);
    if gradients.len() != active.len() {
        return Err(DgError::Incompatible(format!(
            "expected {} gradient lists (active set), got {}",
            active.len(),
            gradients.len()
        )));
    }
    let mut branches = Vec::new();
    let mut samples = Vec::new();
    for (&id, vecs) in active.iter().zip(gradients) {
        let comp = env.components().iter().find(|c| c.id == id).unwrap();
        branches.push((comp.reduced.value_at(x), vecs.clone()));
        samples.push(GradientSamples {
            id,
            vectors: vecs.clone(),
        });
    }
    report_from_branches(env, spec, x, active, branches, samples, cfg, component_spacing(env))
}

// ---------------------------------------------------------------------------
// Value sources and field comparison
// ---------------------------------------------------------------------------

/// Uniform read interface over solved fields, envelopes, and closed-form
/// oracles, always in time scale.
pub trait ValueSource: Sync {
    fn time_value(&self, x: &[f64]) -> f64;
    fn is_target(&self, _x: &[f64]) -> bool {
        false
    }
    /// Index of the minimizing branch, when the source decomposes.
    fn argmin_index(&self, _x: &[f64]) -> Option<usize> {
        None
    }
}

impl ValueSource for EnvelopeField {
    fn time_value(&self, x: &[f64]) -> f64 {
        self.value(x)
    }

    fn is_target(&self, x: &[f64]) -> bool {
        self.in_any_target(x)
    }

    fn argmin_index(&self, x: &[f64]) -> Option<usize> {
        Some(self.argmin_id(x))
    }
}

/// A solved field paired with its game (for target exclusion).
pub struct FieldSource<'a> {
    pub field: &'a ValueField,
    pub spec: Option<&'a GameSpec>,
}

impl ValueSource for FieldSource<'_> {
    fn time_value(&self, x: &[f64]) -> f64 {
        match self.field.scale {
            FieldScale::Time => self.field.interpolate(x),
            FieldScale::Kruzkov => crate::solver::kruzkov_inverse(self.field.interpolate(x)),
        }
    }

    fn is_target(&self, x: &[f64]) -> bool {
        self.spec.map_or(false, |s| s.in_any_target(x))
    }
}

/// Closed-form source.
pub struct FnSource<'a> {
    pub value: Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>,
    pub target: Option<Box<dyn Fn(&[f64]) -> bool + Sync + 'a>>,
    pub argmin: Option<Box<dyn Fn(&[f64]) -> usize + Sync + 'a>>,
}

impl ValueSource for FnSource<'_> {
    fn time_value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn is_target(&self, x: &[f64]) -> bool {
        self.target.as_ref().map_or(false, |t| t(x))
    }

    fn argmin_index(&self, x: &[f64]) -> Option<usize> {
        self.argmin.as_ref().map(|f| f(x))
    }
}

/// Error statistics between two value sources over a query grid.
#[derive(Debug, Clone, Serialize)]
pub struct FieldStats {
    /// Nodes compared (outside targets, passing the filter).
    pub count: usize,
    /// Nodes where both values were finite.
    pub finite_count: usize,
    /// Sup/mean absolute difference in time scale over finite pairs.
    pub linf_time: f64,
    pub l1_time: f64,
    /// Sup/mean absolute difference in Kruzkov scale over all compared
    /// nodes (evasion regions map to 1).
    pub linf_kruzkov: f64,
    pub l1_kruzkov: f64,
    /// Fraction of nodes where both sources name the same minimizing
    /// branch, when both expose one.
    pub argmin_agreement: Option<f64>,
}

/// Compare two sources over the nodes of `query`, skipping targets and
/// nodes rejected by `filter`.
pub fn compare_fields(
    a: &dyn ValueSource,
    b: &dyn ValueSource,
    query: &Grid,
    filter: Option<&(dyn Fn(&[f64]) -> bool + Sync)>,
) -> FieldStats {
    let dim = query.dim();
    let mut x = vec![0.0; dim];
    let mut count = 0usize;
    let mut finite_count = 0usize;
    let mut linf_time = 0.0f64;
    let mut l1_time = 0.0f64;
    let mut linf_k = 0.0f64;
    let mut l1_k = 0.0f64;
    let mut argmin_total = 0usize;
    let mut argmin_match = 0usize;
    for i in 0..query.len() {
        query.node_coords(i, &mut x);
        if a.is_target(&x) || b.is_target(&x) {
            continue;
        }
        if let Some(f) = filter {
            if !f(&x) {
                continue;
            }
        }
        let va = a.time_value(&x);
        let vb = b.time_value(&x);
        count += 1;
        let ka = kruzkov(va.max(0.0));
        let kb = kruzkov(vb.max(0.0));
        let dk = (ka - kb).abs();
        linf_k = linf_k.max(dk);
        l1_k += dk;
        if va.is_finite() && vb.is_finite() {
            finite_count += 1;
            let dt = (va - vb).abs();
            linf_time = linf_time.max(dt);
            l1_time += dt;
        }
        if let (Some(ia), Some(ib)) = (a.argmin_index(&x), b.argmin_index(&x)) {
            argmin_total += 1;
            if ia == ib {
                argmin_match += 1;
            }
        }
    }
    FieldStats {
        count,
        finite_count,
        linf_time,
        l1_time: if finite_count > 0 { l1_time / finite_count as f64 } else { 0.0 },
        linf_kruzkov: linf_k,
        l1_kruzkov: if count > 0 { l1_k / count as f64 } else { 0.0 },
        argmin_agreement: if argmin_total > 0 {
            Some(argmin_match as f64 / argmin_total as f64)
        } else {
            None
        },
    }
}

// ---------------------------------------------------------------------------
// Viscosity verification
// ---------------------------------------------------------------------------

/// Classification of one query node in a viscosity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NodeKind {
    Smooth,
    Kink,
    Skipped,
}

/// Per-node record of a viscosity check.
#[derive(Debug, Clone, Serialize)]
pub struct ViscosityRecord {
    pub point: Vec<f64>,
    pub kind: NodeKind,
    /// Largest `F` over the tested supergradient vectors; a subsolution
    /// violation when above the threshold.
    pub sub_residual: Option<f64>,
    /// Smallest `F` over the tested subgradient vectors; a supersolution
    /// violation when below minus the threshold.
    pub super_residual: Option<f64>,
    pub sub_violation: bool,
    pub super_violation: bool,
}

/// Summary of [`verify_viscosity`].
#[derive(Debug, Clone, Serialize)]
pub struct ViscosityReport {
    pub records: Vec<ViscosityRecord>,
    pub smooth_checked: usize,
    pub kink_checked: usize,
    pub skipped: usize,
    pub sub_violations: usize,
    pub super_violations: usize,
    pub max_sub_residual: f64,
    pub min_super_residual: f64,
    pub threshold: f64,
}

impl ViscosityReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let dim = self.records.first().map_or(0, |r| r.point.len());
        let header: Vec<String> = (1..=dim).map(|d| format!("x{d}")).collect();
        writeln!(w, "{},kind,sub_residual,super_residual,sub_violation,super_violation", header.join(","))?;
        for r in &self.records {
            for xi in &r.point {
                write!(w, "{xi:.16e},")?;
            }
            let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.16e}"));
            writeln!(
                w,
                "{:?},{},{},{},{}",
                r.kind,
                fmt(r.sub_residual),
                fmt(r.super_residual),
                r.sub_violation,
                r.super_violation
            )?;
        }
        Ok(())
    }
}

/// Nodes within `steps` lattice steps of a TARGET node.
fn dilate_targets(grid: &Grid, mask: &[NodeMask], steps: usize) -> Vec<bool> {
    let dim = grid.dim();
    let mut near: Vec<bool> = mask.iter().map(|m| *m == NodeMask::Target).collect();
    let mut idxs = vec![0usize; dim];
    for _ in 0..steps {
        let prev = near.clone();
        for i in 0..grid.len() {
            if prev[i] {
                continue;
            }
            grid.unflatten(i, &mut idxs);
            'axes: for d in 0..dim {
                let a = &grid.axes()[d];
                if a.n < 2 {
                    continue;
                }
                let s = grid.strides()[d];
                if idxs[d] > 0 && prev[i - s] {
                    near[i] = true;
                    break 'axes;
                }
                if idxs[d] + 1 < a.n && prev[i + s] {
                    near[i] = true;
                    break 'axes;
                }
            }
        }
    }
    near
}

/// Check the viscosity sub/supersolution inequalities of a source over a
/// query grid.
///
/// At smooth nodes both inequalities reduce to `|F(x, u, ∇u)| <= tol`. At
/// kinks, the subsolution inequality is tested on convex combinations of the
/// estimated superdifferential clusters (for a lower envelope of smooth
/// branches, the superdifferential at a kink is the convex hull of the
/// branch gradients), and the supersolution inequality on the clusters
/// estimated from the negated field.
pub fn verify_viscosity(
    source: &dyn ValueSource,
    spec: &GameSpec,
    query: &Grid,
    cfg: &CheckConfig,
) -> Result<ViscosityReport> {
    let dim = query.dim();
    // materialize the source on the query lattice
    let mask = mask_for(query, |x| source.is_target(x));
    let mut values = Vec::with_capacity(query.len());
    {
        let mut x = vec![0.0; dim];
        for i in 0..query.len() {
            query.node_coords(i, &mut x);
            values.push(if mask[i] == NodeMask::Target {
                0.0
            } else {
                source.time_value(&x)
            });
        }
    }
    let field = ValueField::new(query.clone(), values, mask, FieldScale::Time)?;
    let neg_values: Vec<f64> = field.values().iter().map(|v| -v).collect();
    let neg_field = ValueField::new(query.clone(), neg_values, field.mask().to_vec(), FieldScale::Time)?;
    let h = query.max_spacing();
    let threshold = cfg.violation_threshold(h, 0.0);
    let radius = cfg.radius_factor * h;
    // Kinks this close to a target are boundary effects of the free
    // boundary, not interior nonsmoothness; the differential estimators
    // would mix in data from across the target. Two coordinate
    // perturbations can add up in a difference coordinate, hence the
    // factor 2 on the sampling reach.
    let near_target = dilate_targets(query, field.mask(), 2 * cfg.radius_factor.ceil() as usize);

    let records: Vec<ViscosityRecord> = (0..query.len())
        .into_par_iter()
        .map(|i| -> Result<ViscosityRecord> {
            let mut x = vec![0.0; dim];
            let mut idxs = vec![0usize; dim];
            query.node_coords(i, &mut x);
            query.unflatten(i, &mut idxs);
            let skip = ViscosityRecord {
                point: x.clone(),
                kind: NodeKind::Skipped,
                sub_residual: None,
                super_residual: None,
                sub_violation: false,
                super_violation: false,
            };
            if field.mask()[i] != NodeMask::Interior || !field.values()[i].is_finite() {
                return Ok(skip);
            }
            let (slope, residual) = field.linear_fit(&idxs);
            if !slope.iter().all(|s| s.is_finite()) || !residual.is_finite() {
                return Ok(skip);
            }
            let u = field.values()[i];
            if residual <= field.smoothness_threshold() {
                let f = hamiltonian_upper(spec, &x, sanitize_u(spec, u), &slope)?;
                return Ok(ViscosityRecord {
                    point: x,
                    kind: NodeKind::Smooth,
                    sub_residual: Some(f),
                    super_residual: Some(f),
                    sub_violation: f > threshold,
                    super_violation: f < -threshold,
                });
            }
            if near_target[i] {
                return Ok(skip);
            }
            // kink: superdifferential hull for the subsolution side
            let est = estimate_limiting_superdiff(&field, &x, radius, cfg.samples, cfg.seed);
            if est.vectors.is_empty() {
                return Ok(skip);
            }
            let mut sub_res = f64::NEG_INFINITY;
            let weights = simplex_lattice(est.vectors.len().min(4), cfg.weights_per_axis.max(1));
            let mut combo = vec![0.0; dim];
            for w in &weights {
                combo.iter_mut().for_each(|c| *c = 0.0);
                for (j, wj) in w.iter().enumerate() {
                    for d in 0..dim {
                        combo[d] += wj * est.vectors[j][d];
                    }
                }
                sub_res = sub_res.max(hamiltonian_upper(spec, &x, sanitize_u(spec, u), &combo)?);
            }
            // subdifferential candidates from the negated field
            let est_neg = estimate_limiting_superdiff(&neg_field, &x, radius, cfg.samples, cfg.seed);
            let mut super_res = f64::INFINITY;
            for q in &est_neg.vectors {
                let p: Vec<f64> = q.iter().map(|c| -c).collect();
                super_res = super_res.min(hamiltonian_upper(spec, &x, sanitize_u(spec, u), &p)?);
            }
            let super_residual = if est_neg.vectors.is_empty() { None } else { Some(super_res) };
            Ok(ViscosityRecord {
                point: x,
                kind: NodeKind::Kink,
                sub_residual: Some(sub_res),
                super_residual,
                sub_violation: sub_res > threshold,
                super_violation: super_residual.map_or(false, |r| r < -threshold),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut smooth_checked = 0;
    let mut kink_checked = 0;
    let mut skipped = 0;
    let mut sub_violations = 0;
    let mut super_violations = 0;
    let mut max_sub = f64::NEG_INFINITY;
    let mut min_super = f64::INFINITY;
    for r in &records {
        match r.kind {
            NodeKind::Smooth => smooth_checked += 1,
            NodeKind::Kink => kink_checked += 1,
            NodeKind::Skipped => skipped += 1,
        }
        if r.sub_violation {
            sub_violations += 1;
        }
        if r.super_violation {
            super_violations += 1;
        }
        if let Some(v) = r.sub_residual {
            max_sub = max_sub.max(v);
        }
        if let Some(v) = r.super_residual {
            min_super = min_super.min(v);
        }
    }
    Ok(ViscosityReport {
        records,
        smooth_checked,
        kink_checked,
        skipped,
        sub_violations,
        super_violations,
        max_sub_residual: max_sub,
        min_super_residual: min_super,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{make_p3, p3_condition_e_residual, P3Oracle, P3Params};
    use crate::grid::build_grid;

    /// Closed-form P3 envelope components sampled on pair grids.
    fn analytic_p3_envelope(alpha: f64, n: usize, tol_eq: f64) -> EnvelopeField {
        let g = 1.0 / (1.0 - alpha);
        let mut components = Vec::new();
        for (id, j) in [(2usize, 1usize), (3, 2)] {
            let grid = build_grid(&[(-2.0, 2.0), (-2.0, 2.0)], &[n, n]).unwrap();
            let field = ValueField::from_fn(grid, FieldScale::Time, move |y| g * (y[1] - y[0]).abs());
            let reduced = ReducedField::new(field, Projection::Coords(vec![0, j])).unwrap();
            components.push(EnvelopeComponent::new(id, reduced));
        }
        EnvelopeField::new(3, components, tol_eq).unwrap()
    }

    #[test]
    fn envelope_value_examples() {
        let env = analytic_p3_envelope(0.5, 81, 0.05);
        assert!((env.value(&[0.0, 1.0, 5.0]) - 2.0).abs() < 1e-12);
        assert!((env.value(&[0.0, 1.0, -1.0]) - 2.0).abs() < 1e-12);
        // identical components: envelope equals either
        let grid = build_grid(&[(-1.0, 1.0)], &[11]).unwrap();
        let f = ValueField::from_fn(grid, FieldScale::Time, |x| x[0].abs());
        let mk = |id| EnvelopeComponent::new(id, ReducedField::new(f.clone(), Projection::Coords(vec![0])).unwrap());
        let env = EnvelopeField::new(1, vec![mk(1), mk(2)], 0.01).unwrap();
        assert!((env.value(&[0.5]) - 0.5).abs() < 1e-12);
        assert_eq!(env.active_set(&[0.5]), vec![1, 2]);
    }

    #[test]
    fn envelope_vanishes_on_targets() {
        let fam = make_p3(&P3Params::new(0.5).with_eps_target(0.05)).unwrap();
        let g = 2.0;
        let mut components = Vec::new();
        for (k, j) in [(0usize, 1usize), (1, 2)] {
            let grid = build_grid(&[(-2.0, 2.0), (-2.0, 2.0)], &[41, 41]).unwrap();
            let field = ValueField::from_fn(grid, FieldScale::Time, move |y| g * (y[1] - y[0]).abs());
            let proj = Projection::Coords(vec![0, j]);
            let reduced = ReducedField::new(field, proj.clone()).unwrap();
            components.push(
                EnvelopeComponent::new(j + 1, reduced)
                    .with_target(fam.reduced[k].targets()[0].clone(), proj),
            );
        }
        let env = EnvelopeField::new(3, components, 0.05).unwrap();
        assert_eq!(env.value(&[1.0, 1.0, 7.0]), 0.0);
        assert!(env.in_any_target(&[1.0, 1.02, 7.0]));
    }

    #[test]
    fn active_set_examples() {
        let env = analytic_p3_envelope(0.5, 81, 0.05);
        assert_eq!(env.active_set(&[0.0, 1.0, 5.0]), vec![2]);
        assert_eq!(env.active_set(&[0.0, 1.0, -1.0]), vec![2, 3]);
        let single = analytic_p3_envelope(0.5, 81, 0.05);
        let one = EnvelopeField::new(3, vec![single.components()[0].clone()], 0.05).unwrap();
        assert_eq!(one.active_set(&[0.0, 1.0, -1.0]), vec![2]);
    }

    #[test]
    fn sigma_set_examples() {
        let env = analytic_p3_envelope(0.5, 81, 0.05);
        // plane x1 = 0: crossings sit on x2 = -x3
        let query = build_grid(&[(0.0, 0.0), (-1.5, 1.5), (-1.5, 1.5)], &[1, 31, 31]).unwrap();
        let sigma = env.sigma_set(&query);
        assert!(!sigma.is_empty());
        // crossings on the plane x1 = 0 lie where |x2| = |x3|
        for x in &sigma {
            assert!(
                (x[1].abs() - x[2].abs()).abs() <= 0.2,
                "crossing off |x2|=|x3|: {x:?}"
            );
        }
        // the opposite-side family (0, z, -z) is detected
        assert!(sigma.iter().any(|x| (x[1] - 1.0).abs() < 1e-9 && (x[2] + 1.0).abs() < 1e-9));

        // disjoint-range components: empty crossing set
        let grid = build_grid(&[(-1.0, 1.0)], &[11]).unwrap();
        let f0 = ValueField::from_fn(grid.clone(), FieldScale::Time, |_| 0.0);
        let f5 = ValueField::from_fn(grid.clone(), FieldScale::Time, |_| 5.0);
        let env2 = EnvelopeField::new(
            1,
            vec![
                EnvelopeComponent::new(1, ReducedField::new(f0, Projection::Coords(vec![0])).unwrap()),
                EnvelopeComponent::new(2, ReducedField::new(f5, Projection::Coords(vec![0])).unwrap()),
            ],
            0.01,
        )
        .unwrap();
        assert!(env2.sigma_set(&grid).is_empty());

        // min(x, -x) in 1D: crossing at 0
        let fx = ValueField::from_fn(grid.clone(), FieldScale::Time, |x| x[0]);
        let fnegx = ValueField::from_fn(grid.clone(), FieldScale::Time, |x| -x[0]);
        let env3 = EnvelopeField::new(
            1,
            vec![
                EnvelopeComponent::new(1, ReducedField::new(fx, Projection::Coords(vec![0])).unwrap()),
                EnvelopeComponent::new(2, ReducedField::new(fnegx, Projection::Coords(vec![0])).unwrap()),
            ],
            0.01,
        )
        .unwrap();
        let sigma = env3.sigma_set(&grid);
        assert_eq!(sigma.len(), 1);
        assert_eq!(sigma[0], vec![0.0]);
    }

    #[test]
    fn envelope_never_exceeds_components() {
        let env = analytic_p3_envelope(0.4, 41, 0.05);
        let mut state = 7u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(11);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 3.0 - 1.5
        };
        for _ in 0..200 {
            let x = [next(), next(), next()];
            let vals = env.component_values(&x);
            let v = env.value(&x);
            for c in vals {
                assert!(v <= c + 1e-12);
            }
            for id in env.active_set(&x) {
                let comp = env.components().iter().find(|c| c.id == id).unwrap();
                assert!((comp.reduced.value_at(&x) - v).abs() <= env.tol_eq + 1e-12);
            }
        }
    }

    /// Components sampled from closed forms are exact, so the numeric
    /// tolerance entering the violation threshold is tiny.
    fn analytic_check_cfg() -> CheckConfig {
        CheckConfig {
            tol_numeric: 1e-3,
            ..CheckConfig::default()
        }
    }

    #[test]
    fn condition_check_p3_with_analytic_gradients() {
        let fam = make_p3(&P3Params::new(0.5)).unwrap();
        let env = analytic_p3_envelope(0.5, 81, 0.05);
        let (g2, g3) = fam.oracle.crossing_gradients();
        let x = [0.0, 1.0, -1.0];
        let cfg = analytic_check_cfg();
        let report =
            check_conditions_with_gradients(&env, &fam.full, &x, &[vec![g2], vec![g3]], &cfg).unwrap();
        assert_eq!(report.active, vec![2, 3]);
        assert_eq!(report.verdict, Verdict::Violated);
        // worst over the weight lattice is attained at lambda = 1/2
        assert!((report.residual_e - 1.0).abs() < 1e-12, "{}", report.residual_e);
        assert!((report.residual_c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn condition_residuals_match_closed_form_per_weight() {
        for &alpha in &[0.25, 0.5, 0.75] {
            let fam = make_p3(&P3Params::new(alpha)).unwrap();
            let (g2, g3) = fam.oracle.crossing_gradients();
            let x = [0.0, 1.0, -1.0];
            for k in 0..=10 {
                let lambda = k as f64 / 10.0;
                let p: Vec<f64> = g2.iter().zip(&g3).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
                let f = hamiltonian_upper(&fam.full, &x, 0.0, &p).unwrap();
                let closed = p3_condition_e_residual(lambda, alpha).unwrap();
                assert!((f - closed).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn condition_check_singleton_holds_vacuously() {
        let fam = make_p3(&P3Params::new(0.5)).unwrap();
        let env = analytic_p3_envelope(0.5, 81, 0.05);
        let report = check_conditions(&env, &fam.full, &[0.0, 1.0, 5.0], &CheckConfig::default()).unwrap();
        assert_eq!(report.active, vec![2]);
        assert_eq!(report.verdict, Verdict::Holds);
        assert_eq!(report.residual_e, 0.0);
    }

    #[test]
    fn condition_check_p3_with_estimated_gradients() {
        let fam = make_p3(&P3Params::new(0.5)).unwrap();
        let env = analytic_p3_envelope(0.5, 161, 0.02);
        let report = check_conditions(&env, &fam.full, &[0.0, 1.0, -1.0], &analytic_check_cfg()).unwrap();
        assert_eq!(report.verdict, Verdict::Violated);
        assert!((report.residual_e - 1.0).abs() < 0.3, "{}", report.residual_e);
    }

    #[test]
    fn condition_json_schema() {
        let fam = make_p3(&P3Params::new(0.5)).unwrap();
        let env = analytic_p3_envelope(0.5, 41, 0.05);
        let report = check_conditions(&env, &fam.full, &[0.0, 1.0, -1.0], &analytic_check_cfg()).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        let obj = json.as_object().unwrap();
        let keys: Vec<&String> = obj.keys().collect();
        for k in ["point", "active", "residual_C", "residual_E", "verdict", "samples"] {
            assert!(obj.contains_key(k), "missing {k}");
        }
        assert_eq!(keys.len(), 6);
        assert_eq!(obj["verdict"], "VIOLATED");
    }

    #[test]
    fn compare_fields_self_is_zero() {
        let env = analytic_p3_envelope(0.5, 41, 0.05);
        let query = Grid::cube(-1.5, 1.5, 11, 3).unwrap();
        let stats = compare_fields(&env, &env, &query, None);
        assert!(stats.count > 0);
        assert_eq!(stats.linf_time, 0.0);
        assert_eq!(stats.linf_kruzkov, 0.0);
        assert_eq!(stats.argmin_agreement, Some(1.0));
    }

    #[test]
    fn compare_envelope_to_truth_shows_gap_on_d() {
        let oracle = P3Oracle::new(0.5).unwrap();
        let env = analytic_p3_envelope(0.5, 161, 0.02);
        let truth = FnSource {
            value: Box::new(move |x: &[f64]| oracle.values(x).true_u),
            target: None,
            argmin: None,
        };
        // interior of D around (0, 1, -1)
        let query = build_grid(&[(0.0, 0.0), (0.9, 1.1), (-1.1, -0.9)], &[1, 5, 5]).unwrap();
        let stats = compare_fields(&env, &truth, &query, None);
        // the gap 2 min(d2,d3) - (d2+d3)/2 peaks at 1.1 on this box corner
        assert!(stats.linf_time > 0.9 && stats.linf_time < 1.2, "{}", stats.linf_time);
        let at_point = env.value(&[0.0, 1.0, -1.0]) - oracle.values(&[0.0, 1.0, -1.0]).true_u;
        assert!((at_point - 1.0).abs() < 1e-9);
    }

    #[test]
    fn viscosity_p3_truth_passes_off_kinks() {
        let fam = make_p3(&P3Params::new(0.5)).unwrap();
        let oracle = fam.oracle;
        let truth = FnSource {
            value: Box::new(move |x: &[f64]| oracle.values(x).true_u),
            target: Some(Box::new(|x: &[f64]| {
                (x[1] - x[0]).abs() <= 0.05 || (x[2] - x[0]).abs() <= 0.05
            })),
            argmin: None,
        };
        let query = Grid::cube(-1.6, 1.6, 33, 3).unwrap();
        let report = verify_viscosity(&truth, &fam.full, &query, &analytic_check_cfg()).unwrap();
        assert!(report.smooth_checked > 1000);
        assert_eq!(report.sub_violations, 0, "max sub residual {}", report.max_sub_residual);
        assert_eq!(report.super_violations, 0, "min super residual {}", report.min_super_residual);
    }

    #[test]
    fn viscosity_p3_envelope_fails_subsolution_on_d() {
        let fam = make_p3(&P3Params::new(0.5)).unwrap();
        let oracle = fam.oracle;
        let envelope_fn = FnSource {
            value: Box::new(move |x: &[f64]| oracle.values(x).envelope),
            target: Some(Box::new(|x: &[f64]| {
                (x[1] - x[0]).abs() <= 0.05 || (x[2] - x[0]).abs() <= 0.05
            })),
            argmin: None,
        };
        let query = Grid::cube(-1.6, 1.6, 33, 3).unwrap();
        let report = verify_viscosity(&envelope_fn, &fam.full, &query, &analytic_check_cfg()).unwrap();
        assert!(report.sub_violations > 0, "expected subsolution violations on the crossing set");
        assert_eq!(report.super_violations, 0);
        // violations sit on the opposite-side crossing set x2 ~ -x3
        for r in &report.records {
            if r.sub_violation {
                let x = &r.point;
                assert!(
                    (x[1] - x[0]) * (x[2] - x[0]) < 0.0,
                    "violation off D at {x:?}"
                );
            }
        }
    }

    #[test]
    fn viscosity_affine_eikonal_solution_is_exact() {
        let spec = {
            use crate::model::{ControlGrid, DynamicsFn, GameSpec, PayoffFn, TargetSet};
            use std::sync::Arc;
            let dyn_fn: DynamicsFn = Arc::new(|_x, _a, b, out| out[0] = b[0]);
            let payoff: PayoffFn = Arc::new(|_, _, _| 1.0);
            GameSpec::new(
                "1d eikonal",
                1,
                dyn_fn,
                ControlGrid::singleton(vec![0.0]),
                ControlGrid::interval(-1.0, 1.0, 3).unwrap(),
                payoff,
                0.0,
                vec![TargetSet::new(1, "|x| <= 0.1", Arc::new(|x: &[f64]| x[0].abs() <= 0.1))],
            )
            .unwrap()
        };
        let source = FnSource {
            value: Box::new(|x: &[f64]| (x[0].abs() - 0.1).max(0.0)),
            target: Some(Box::new(|x: &[f64]| x[0].abs() <= 0.1)),
            argmin: None,
        };
        let query = build_grid(&[(-1.0, 1.0)], &[201]).unwrap();
        let report = verify_viscosity(&source, &spec, &query, &analytic_check_cfg()).unwrap();
        assert_eq!(report.sub_violations, 0);
        assert_eq!(report.super_violations, 0);
        for r in &report.records {
            if r.kind == NodeKind::Smooth {
                assert!(r.sub_residual.unwrap().abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn simplex_lattice_covers_weights() {
        let w = simplex_lattice(2, 10);
        assert_eq!(w.len(), 11);
        assert!(w.iter().any(|v| v == &vec![0.5, 0.5]));
        for v in &w {
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let w3 = simplex_lattice(3, 4);
        assert_eq!(w3.len(), 15); // C(6,2)
    }
}

//! Rectangular lattices, value storage, multilinear interpolation, and
//! numerical differential estimation.
//!
//! Nodes are ordered lexicographically by axis index (axis 0 slowest), and
//! node coordinates are always recomputed from `(bounds, counts)` so layouts
//! are reproducible bit-exactly. Interpolation clamps out-of-box queries to
//! the box and reports the clamp through a flag.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DgError, Result};

/// One axis of a rectangular lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// Node spacing; zero for a degenerate single-node axis.
    pub h: f64,
}

/// Rectangular lattice over a box. Degenerate axes (`n = 1`, `lo = hi`) are
/// allowed so lower-dimensional slices can be expressed as grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
    strides: Vec<usize>,
    len: usize,
}

/// Build a grid from per-axis intervals and node counts.
pub fn build_grid(bounds: &[(f64, f64)], resolution: &[usize]) -> Result<Grid> {
    Grid::new(bounds, resolution)
}

impl Grid {
    pub fn new(bounds: &[(f64, f64)], resolution: &[usize]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != resolution.len() {
            return Err(DgError::InvalidGrid(format!(
                "bounds/resolution rank mismatch: {} vs {}",
                bounds.len(),
                resolution.len()
            )));
        }
        let mut axes = Vec::with_capacity(bounds.len());
        for (&(lo, hi), &n) in bounds.iter().zip(resolution) {
            if n == 0 {
                return Err(DgError::InvalidGrid("zero node count".into()));
            }
            if n == 1 {
                if lo != hi {
                    return Err(DgError::InvalidGrid(format!(
                        "single-node axis must have lo == hi, got [{lo},{hi}]"
                    )));
                }
                axes.push(Axis { lo, hi, n, h: 0.0 });
                continue;
            }
            if !(hi > lo) {
                return Err(DgError::InvalidGrid(format!("inverted bounds [{lo},{hi}]")));
            }
            let h = (hi - lo) / (n - 1) as f64;
            axes.push(Axis { lo, hi, n, h });
        }
        let dim = axes.len();
        let mut strides = vec![0usize; dim];
        let mut acc = 1usize;
        for d in (0..dim).rev() {
            strides[d] = acc;
            acc = acc
                .checked_mul(axes[d].n)
                .ok_or_else(|| DgError::InvalidGrid("grid too large".into()))?;
        }
        Ok(Self {
            axes,
            strides,
            len: acc,
        })
    }

    /// Uniform cube helper: same interval and count on every axis.
    pub fn cube(lo: f64, hi: f64, n: usize, dim: usize) -> Result<Self> {
        Self::new(&vec![(lo, hi); dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn max_spacing(&self) -> f64 {
        self.axes.iter().map(|a| a.h).fold(0.0, f64::max)
    }

    /// Coordinate of node `i` on axis `d`.
    #[inline]
    pub fn coord(&self, d: usize, i: usize) -> f64 {
        self.axes[d].lo + i as f64 * self.axes[d].h
    }

    /// Decode a flat index into per-axis indices.
    #[inline]
    pub fn unflatten(&self, mut idx: usize, out: &mut [usize]) {
        for d in 0..self.dim() {
            out[d] = idx / self.strides[d];
            idx %= self.strides[d];
        }
    }

    #[inline]
    pub fn flatten(&self, indices: &[usize]) -> usize {
        indices
            .iter()
            .zip(&self.strides)
            .map(|(i, s)| i * s)
            .sum()
    }

    /// Coordinates of the node with flat index `idx`.
    pub fn node_coords(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for d in 0..self.dim() {
            let i = rem / self.strides[d];
            rem %= self.strides[d];
            out[d] = self.coord(d, i);
        }
    }

    /// Whether the node lies on a face of the box.
    pub fn on_face(&self, indices: &[usize]) -> bool {
        indices
            .iter()
            .zip(&self.axes)
            .any(|(&i, a)| a.n > 1 && (i == 0 || i == a.n - 1))
    }

    /// Nearest node (by rounding per axis) to a point.
    pub fn nearest_node(&self, x: &[f64]) -> Vec<usize> {
        self.axes
            .iter()
            .enumerate()
            .map(|(d, a)| {
                if a.n == 1 || a.h == 0.0 {
                    0
                } else {
                    let t = ((x[d] - a.lo) / a.h).round();
                    (t.max(0.0) as usize).min(a.n - 1)
                }
            })
            .collect()
    }

    /// Whether `x` lies inside the box (inclusive).
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.axes)
            .all(|(&xi, a)| xi >= a.lo - 1e-12 && xi <= a.hi + 1e-12)
    }
}

/// Node classification used by the solver and the checkers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeMask {
    Target,
    Interior,
    Boundary,
}

impl NodeMask {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeMask::Target => "TARGET",
            NodeMask::Interior => "INTERIOR",
            NodeMask::Boundary => "BOUNDARY",
        }
    }
}

/// Scale in which a field's values live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldScale {
    /// Raw time/payoff values (`+inf` allowed in evasion regions).
    Time,
    /// Kruzkov-transformed values in `[0, 1]`.
    Kruzkov,
}

/// Scalar values on a grid plus per-node masks. Immutable snapshot once
/// built; all reads are parallel-safe.
#[derive(Debug, Clone)]
pub struct ValueField {
    grid: Grid,
    values: Vec<f64>,
    mask: Vec<NodeMask>,
    pub scale: FieldScale,
    lipschitz: f64,
}

impl ValueField {
    pub fn new(grid: Grid, values: Vec<f64>, mask: Vec<NodeMask>, scale: FieldScale) -> Result<Self> {
        if values.len() != grid.len() || mask.len() != grid.len() {
            return Err(DgError::InvalidGrid(format!(
                "field length {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        for (v, m) in values.iter().zip(&mask) {
            if *m == NodeMask::Target && *v != 0.0 {
                return Err(DgError::InvalidGrid(
                    "target nodes must hold exactly 0".into(),
                ));
            }
        }
        let lipschitz = observed_lipschitz(&grid, &values);
        Ok(Self {
            grid,
            values,
            mask,
            scale,
            lipschitz,
        })
    }

    /// Sample a closure over all nodes (no targets). Used for analytic fields.
    pub fn from_fn(grid: Grid, scale: FieldScale, f: impl Fn(&[f64]) -> f64) -> Self {
        let dim = grid.dim();
        let mut x = vec![0.0; dim];
        let mut values = Vec::with_capacity(grid.len());
        let mut mask = Vec::with_capacity(grid.len());
        let mut idxs = vec![0usize; dim];
        for i in 0..grid.len() {
            grid.node_coords(i, &mut x);
            grid.unflatten(i, &mut idxs);
            values.push(f(&x));
            mask.push(if grid.on_face(&idxs) {
                NodeMask::Boundary
            } else {
                NodeMask::Interior
            });
        }
        let lipschitz = observed_lipschitz(&grid, &values);
        Self {
            grid,
            values,
            mask,
            scale,
            lipschitz,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[NodeMask] {
        &self.mask
    }

    /// Largest one-sided difference quotient observed on the lattice.
    pub fn observed_lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Multilinear interpolation, exact at nodes and on affine fields.
    /// Out-of-box points are clamped to the box.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        self.interpolate_flagged(x).0
    }

    /// Interpolation plus a flag marking out-of-box (clamped) queries.
    pub fn interpolate_flagged(&self, x: &[f64]) -> (f64, bool) {
        interpolate_raw(&self.grid, &self.values, x)
    }

    /// Central-difference gradient at a node (one-sided on box faces).
    pub fn central_gradient(&self, indices: &[usize]) -> Vec<f64> {
        let dim = self.grid.dim();
        let mut grad = vec![0.0; dim];
        let flat = self.grid.flatten(indices);
        for d in 0..dim {
            let a = &self.grid.axes[d];
            if a.n < 2 {
                continue;
            }
            let i = indices[d];
            let s = self.grid.strides[d];
            grad[d] = if i == 0 {
                (self.values[flat + s] - self.values[flat]) / a.h
            } else if i == a.n - 1 {
                (self.values[flat] - self.values[flat - s]) / a.h
            } else {
                (self.values[flat + s] - self.values[flat - s]) / (2.0 * a.h)
            };
        }
        grad
    }

    /// Least-squares linear fit over the 3^n stencil centered at (or shifted
    /// inside from) `indices`. Returns the fitted slope and the RMS residual.
    pub fn linear_fit(&self, indices: &[usize]) -> (Vec<f64>, f64) {
        let dim = self.grid.dim();
        // shift the window so the full stencil lies inside the box
        let base: Vec<usize> = indices
            .iter()
            .zip(&self.grid.axes)
            .map(|(&i, a)| if a.n < 3 { i.min(a.n - 1) } else { i.clamp(1, a.n - 2) })
            .collect();
        let mut offsets_per_axis: Vec<Vec<isize>> = Vec::with_capacity(dim);
        for a in &self.grid.axes {
            offsets_per_axis.push(if a.n >= 3 { vec![-1, 0, 1] } else { vec![0] });
        }
        let mut count = 1usize;
        for o in &offsets_per_axis {
            count *= o.len();
        }
        // The stencil is a centered lattice, so the normal equations are
        // diagonal: each slope is sum(v*dx)/sum(dx^2) and the intercept is
        // the mean.
        let mut mean = 0.0;
        let mut sum_vd = vec![0.0; dim];
        let mut sum_dd = vec![0.0; dim];
        let mut stencil_vals = Vec::with_capacity(count);
        let mut stencil_offs = Vec::with_capacity(count);
        for c in 0..count {
            let mut rem = c;
            let mut idxs = base.clone();
            let mut offs = vec![0.0; dim];
            for d in 0..dim {
                let options = &offsets_per_axis[d];
                let o = options[rem % options.len()];
                rem /= options.len();
                idxs[d] = (idxs[d] as isize + o) as usize;
                offs[d] = o as f64 * self.grid.axes[d].h;
            }
            let v = self.values[self.grid.flatten(&idxs)];
            mean += v;
            for d in 0..dim {
                sum_vd[d] += v * offs[d];
                sum_dd[d] += offs[d] * offs[d];
            }
            stencil_vals.push(v);
            stencil_offs.push(offs);
        }
        mean /= count as f64;
        let slope: Vec<f64> = (0..dim)
            .map(|d| if sum_dd[d] > 0.0 { sum_vd[d] / sum_dd[d] } else { 0.0 })
            .collect();
        let mut rss = 0.0;
        for (v, offs) in stencil_vals.iter().zip(&stencil_offs) {
            let fit: f64 = mean + slope.iter().zip(offs).map(|(s, o)| s * o).sum::<f64>();
            rss += (v - fit) * (v - fit);
        }
        (slope, (rss / count as f64).sqrt())
    }

    /// Whether the field looks locally smooth at a node: linear-fit residual
    /// below `0.1 * h * Lip` with `Lip` the observed Lipschitz constant.
    pub fn is_smooth_at(&self, indices: &[usize]) -> bool {
        let (_, residual) = self.linear_fit(indices);
        residual <= self.smoothness_threshold()
    }

    pub fn smoothness_threshold(&self) -> f64 {
        0.1 * self.grid.max_spacing() * self.lipschitz.max(1e-300)
    }

    /// Dump in the grid CSV format: `x1,...,xn,value,mask`, lexicographic
    /// node order, 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let dim = self.grid.dim();
        let header: Vec<String> = (1..=dim).map(|d| format!("x{d}")).collect();
        writeln!(w, "{},value,mask", header.join(","))?;
        let mut x = vec![0.0; dim];
        for i in 0..self.grid.len() {
            self.grid.node_coords(i, &mut x);
            for xi in &x {
                write!(w, "{xi:.16e},")?;
            }
            writeln!(w, "{:.16e},{}", self.values[i], self.mask[i].as_str())?;
        }
        Ok(())
    }
}

fn observed_lipschitz(grid: &Grid, values: &[f64]) -> f64 {
    let mut lip: f64 = 0.0;
    for d in 0..grid.dim() {
        let a = &grid.axes[d];
        if a.n < 2 || a.h == 0.0 {
            continue;
        }
        let s = grid.strides[d];
        let block = s * a.n;
        for i in 0..values.len() {
            if (i % block) + s < block {
                let q = values[i + s] - values[i];
                if q.is_finite() {
                    lip = lip.max((q / a.h).abs());
                }
            }
        }
    }
    lip
}

/// Locate a coordinate on an axis: cell index, fraction, clamp flag.
#[inline(always)]
fn locate(a: &Axis, xd: f64) -> (usize, f64, bool) {
    if a.n == 1 || a.h == 0.0 {
        return (0, 0.0, (xd - a.lo).abs() > 1e-12);
    }
    let mut t = (xd - a.lo) / a.h;
    let mut clamped = false;
    if t < 0.0 {
        t = 0.0;
        clamped = true;
    }
    let max_t = (a.n - 1) as f64;
    if t > max_t {
        t = max_t;
        clamped = true;
    }
    // t >= 0, so the cast truncates like floor
    let i = (t as usize).min(a.n - 2);
    (i, t - i as f64, clamped)
}

#[inline(always)]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Multilinear interpolation over raw storage; shared with the solver's
/// hot loop. Returns `(value, clamped)`. Out-of-box points clamp to the
/// box per coordinate.
#[inline]
pub fn interpolate_raw(grid: &Grid, values: &[f64], x: &[f64]) -> (f64, bool) {
    debug_assert_eq!(x.len(), grid.dim());
    let axes = &grid.axes;
    match grid.dim() {
        1 => {
            let (i, f, c) = locate(&axes[0], x[0]);
            let e = if axes[0].n > 1 { 1 } else { 0 };
            (lerp(values[i], values[i + e], f), c)
        }
        2 => {
            let (i0, f0, c0) = locate(&axes[0], x[0]);
            let (i1, f1, c1) = locate(&axes[1], x[1]);
            let s0 = grid.strides[0];
            let e0 = if axes[0].n > 1 { s0 } else { 0 };
            let e1 = if axes[1].n > 1 { 1 } else { 0 };
            let b = i0 * s0 + i1;
            let lo = lerp(values[b], values[b + e1], f1);
            let hi = lerp(values[b + e0], values[b + e0 + e1], f1);
            (lerp(lo, hi, f0), c0 | c1)
        }
        3 => {
            let (i0, f0, c0) = locate(&axes[0], x[0]);
            let (i1, f1, c1) = locate(&axes[1], x[1]);
            let (i2, f2, c2) = locate(&axes[2], x[2]);
            let s0 = grid.strides[0];
            let s1 = grid.strides[1];
            let e0 = if axes[0].n > 1 { s0 } else { 0 };
            let e1 = if axes[1].n > 1 { s1 } else { 0 };
            let e2 = if axes[2].n > 1 { 1 } else { 0 };
            let b = i0 * s0 + i1 * s1 + i2;
            let v00 = lerp(values[b], values[b + e2], f2);
            let v01 = lerp(values[b + e1], values[b + e1 + e2], f2);
            let v10 = lerp(values[b + e0], values[b + e0 + e2], f2);
            let v11 = lerp(values[b + e0 + e1], values[b + e0 + e1 + e2], f2);
            (lerp(lerp(v00, v01, f1), lerp(v10, v11, f1), f0), c0 | c1 | c2)
        }
        dim => {
            let mut base = [0usize; crate::model::MAX_STATE_DIM];
            let mut frac = [0.0f64; crate::model::MAX_STATE_DIM];
            let mut clamped = false;
            for d in 0..dim {
                let (i, f, c) = locate(&axes[d], x[d]);
                base[d] = i;
                frac[d] = f;
                clamped |= c;
            }
            let mut acc = 0.0;
            let corners = 1usize << dim;
            for c in 0..corners {
                let mut w = 1.0;
                let mut idx = 0usize;
                for d in 0..dim {
                    let hi = (c >> d) & 1 == 1;
                    let a = &axes[d];
                    if a.n == 1 {
                        if hi {
                            w = 0.0;
                        }
                        continue;
                    }
                    w *= if hi { frac[d] } else { 1.0 - frac[d] };
                    idx += (base[d] + hi as usize) * grid.strides[d];
                }
                if w != 0.0 {
                    acc += w * values[idx];
                }
            }
            (acc, clamped)
        }
    }
}

/// How a reduced field maps into the full state space.
#[derive(Debug, Clone)]
pub enum Projection {
    /// Select these full-state coordinates (distinct, `< n`).
    Coords(Vec<usize>),
    /// Linear reduction `y = M x`, rows of length `n`.
    Linear(Vec<Vec<f64>>),
}

impl Projection {
    pub fn reduced_dim(&self) -> usize {
        match self {
            Projection::Coords(ix) => ix.len(),
            Projection::Linear(rows) => rows.len(),
        }
    }

    pub fn full_dim_hint(&self) -> Option<usize> {
        match self {
            Projection::Coords(_) => None,
            Projection::Linear(rows) => rows.first().map(|r| r.len()),
        }
    }

    /// Project a full state into reduced coordinates.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Projection::Coords(ix) => {
                for (o, &i) in out.iter_mut().zip(ix) {
                    *o = x[i];
                }
            }
            Projection::Linear(rows) => {
                for (o, row) in out.iter_mut().zip(rows) {
                    *o = row.iter().zip(x).map(|(c, xi)| c * xi).sum();
                }
            }
        }
    }

    /// Embed a reduced-space gradient into the full space (zeros on
    /// coordinates outside the projection; transpose map in the linear case).
    pub fn embed_gradient(&self, g: &[f64], full_dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; full_dim];
        match self {
            Projection::Coords(ix) => {
                for (&i, &gi) in ix.iter().zip(g) {
                    out[i] = gi;
                }
            }
            Projection::Linear(rows) => {
                for (row, &gi) in rows.iter().zip(g) {
                    for (o, &c) in out.iter_mut().zip(row) {
                        *o += c * gi;
                    }
                }
            }
        }
        out
    }
}

/// A value field on a coordinate subspace plus the map embedding it into
/// the full state space.
#[derive(Debug, Clone)]
pub struct ReducedField {
    pub field: ValueField,
    pub projection: Projection,
}

impl ReducedField {
    pub fn new(field: ValueField, projection: Projection) -> Result<Self> {
        if projection.reduced_dim() != field.grid().dim() {
            return Err(DgError::DimensionMismatch {
                expected: field.grid().dim(),
                got: projection.reduced_dim(),
            });
        }
        if let Projection::Coords(ix) = &projection {
            for (k, &i) in ix.iter().enumerate() {
                if ix[..k].contains(&i) {
                    return Err(DgError::InvalidParameter(
                        "projection indices must be distinct".into(),
                    ));
                }
            }
        }
        Ok(Self { field, projection })
    }

    /// A full-dimensional field embeds through the identity.
    pub fn identity(field: ValueField) -> Self {
        let dim = field.grid().dim();
        Self {
            field,
            projection: Projection::Coords((0..dim).collect()),
        }
    }

    pub fn reduced_dim(&self) -> usize {
        self.field.grid().dim()
    }

    /// Interpolated value at a full state.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        let mut y = [0.0f64; crate::model::MAX_STATE_DIM];
        let k = self.reduced_dim();
        self.projection.apply(x, &mut y[..k]);
        self.field.interpolate(&y[..k])
    }

    pub fn value_at_flagged(&self, x: &[f64]) -> (f64, bool) {
        let mut y = [0.0f64; crate::model::MAX_STATE_DIM];
        let k = self.reduced_dim();
        self.projection.apply(x, &mut y[..k]);
        self.field.interpolate_flagged(&y[..k])
    }
}

/// Candidate limiting supergradients at a point, with the sampling metadata
/// needed to re-run the estimate at other radii.
#[derive(Debug, Clone)]
pub struct SuperdiffSample {
    pub point: Vec<f64>,
    /// Cluster centroids of gradients sampled at nearby smooth points.
    pub vectors: Vec<Vec<f64>>,
    pub radius: f64,
    pub samples_requested: usize,
    pub samples_accepted: usize,
}

/// Estimate the limiting superdifferential of `field` at `x`: sample
/// gradients at nearby points where the field passes the local smoothness
/// test, then cluster them (centroid linkage). For a field that is a minimum
/// of finitely many smooth functions the centroids approximate the gradients
/// of the active branches.
pub fn estimate_limiting_superdiff(
    field: &ValueField,
    x: &[f64],
    radius: f64,
    samples: usize,
    seed: u64,
) -> SuperdiffSample {
    let grid = field.grid();
    let dim = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grads: Vec<Vec<f64>> = Vec::new();
    let mut y = vec![0.0; dim];
    for s in 0..samples {
        if s == 0 {
            y.copy_from_slice(x);
        } else {
            for d in 0..dim {
                y[d] = x[d] + rng.gen_range(-radius..=radius);
            }
        }
        if !grid.contains(&y) {
            continue;
        }
        let node = grid.nearest_node(&y);
        let (slope, residual) = field.linear_fit(&node);
        if residual <= field.smoothness_threshold() && slope.iter().all(|g| g.is_finite()) {
            grads.push(slope);
        }
    }
    let accepted = grads.len();
    let vectors = cluster_centroid_linkage(grads);
    SuperdiffSample {
        point: x.to_vec(),
        vectors,
        radius,
        samples_requested: samples,
        samples_accepted: accepted,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Greedy agglomerative clustering with centroid linkage. Two clusters merge
/// while their centroids are within `0.15 * (||p|| + 1)`.
fn cluster_centroid_linkage(vectors: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut clusters: Vec<(Vec<f64>, usize)> = vectors.into_iter().map(|v| (v, 1)).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let d = dist(&clusters[i].0, &clusters[j].0);
                let tol = 0.15 * (norm(&clusters[i].0).max(norm(&clusters[j].0)) + 1.0);
                if d <= tol && best.map_or(true, |(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        match best {
            Some((i, j, _)) => {
                let (cj, wj) = clusters.remove(j);
                let (ci, wi) = &mut clusters[i];
                let total = (*wi + wj) as f64;
                for (a, b) in ci.iter_mut().zip(&cj) {
                    *a = (*a * *wi as f64 + b * wj as f64) / total;
                }
                *wi += wj;
            }
            None => break,
        }
    }
    let mut out: Vec<Vec<f64>> = clusters.into_iter().map(|(c, _)| c).collect();
    out.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    out
}

/// Build the solver-facing mask for a grid: TARGET where a target contains
/// the node, BOUNDARY on other box-face nodes, INTERIOR elsewhere.
pub fn mask_for(grid: &Grid, in_target: impl Fn(&[f64]) -> bool) -> Vec<NodeMask> {
    let dim = grid.dim();
    let mut x = vec![0.0; dim];
    let mut idxs = vec![0usize; dim];
    (0..grid.len())
        .map(|i| {
            grid.node_coords(i, &mut x);
            if in_target(&x) {
                NodeMask::Target
            } else {
                grid.unflatten(i, &mut idxs);
                if grid.on_face(&idxs) {
                    NodeMask::Boundary
                } else {
                    NodeMask::Interior
                }
            }
        })
        .collect()
}

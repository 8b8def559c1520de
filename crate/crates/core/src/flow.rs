//! Flows of frame vector fields with their Jacobians, push-forward densities,
//! and characteristic solvers for the transport and continuity equations.

use std::sync::Arc;

use rayon::prelude::*;

use crate::contact::{ScaledField, VectorField};
use crate::error::{LabError, Result};
use crate::field::{frame_apply, ScalarField, Smooth1D};
use crate::grid::{boundary_sup, BoxRegion, Extension, GridField};
use crate::group::{frame_components, frame_t_coeff, frame_vector, FrameKind, HPoint};
use crate::jet::Jet;
use crate::report::ConvergenceReport;
use crate::scalar::Scalar;

/// Jets of the Euclidean velocity Σ b_j Z_j(p).
pub fn velocity_jets<T: Scalar, B: VectorField<T> + ?Sized>(b: &B, tau: T, p: &HPoint<T>, order: usize) -> Vec<Jet<T>> {
    let n = b.n();
    let big = 2 * n;
    let dim = big + 1;
    let bj = b.jets(tau, p, order);
    let mut vt = bj[big].clone();
    for (j, bjet) in bj.iter().enumerate().take(big) {
        // the ∂_t coefficient of Z_j is ±2 times one coordinate
        let k = if j < n { n + j } else { j - n };
        let slope = if j < n { T::lit(2.0) } else { T::lit(-2.0) };
        let coef = Jet::variable(dim, order, k, p.coord(k)).scale(slope);
        vt = &vt + &(bjet * &coef);
    }
    let mut v = bj;
    v[big] = vt;
    v
}

/// Euclidean velocity and div b at (τ, p).
pub fn velocity<T: Scalar, B: VectorField<T> + ?Sized>(b: &B, tau: T, p: &HPoint<T>) -> (Vec<T>, T) {
    let n = b.n();
    let (mut comps, div) = b.sample(tau, p);
    let mut vt = comps[2 * n];
    for j in 0..2 * n {
        vt += comps[j] * frame_t_coeff(FrameKind::Left, n, j, p.coords());
    }
    comps[2 * n] = vt;
    (comps, div)
}

/// A reaction coefficient c(τ, p).
#[derive(Clone)]
pub struct Reaction<T: Scalar> {
    pub name: String,
    f: Arc<dyn Fn(T, &HPoint<T>) -> T + Send + Sync>,
    autonomous: bool,
}

impl<T: Scalar> std::fmt::Debug for Reaction<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Reaction({})", self.name)
    }
}

impl<T: Scalar> Reaction<T> {
    pub fn zero() -> Self {
        Self { name: "zero".into(), f: Arc::new(|_, _| T::zero()), autonomous: true }
    }

    pub fn field(field: Arc<dyn ScalarField<T>>) -> Self {
        Self { name: "field".into(), f: Arc::new(move |_, p| field.value(p)), autonomous: true }
    }

    pub fn time_dependent(name: impl Into<String>, f: impl Fn(T, &HPoint<T>) -> T + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f), autonomous: false }
    }

    pub fn value(&self, tau: T, p: &HPoint<T>) -> T {
        (self.f)(tau, p)
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    /// Named presets: `zero`, `constant(κ)`, `bump`, `linear-time`.
    pub fn preset(name: &str, n: usize) -> Result<Self> {
        let name = name.trim();
        match name {
            "zero" => Ok(Self::zero()),
            "bump" => {
                let mut r = Self::field(crate::contact::standard_bump(n).into_arc());
                r.name = name.into();
                Ok(r)
            }
            "linear-time" => Ok(Self::time_dependent(name, |tau, _| tau)),
            _ if name.starts_with("constant(") && name.ends_with(')') => {
                let k: f64 = name["constant(".len()..name.len() - 1]
                    .trim()
                    .parse()
                    .map_err(|_| LabError::InvalidParameter(format!("bad constant in `{name}`")))?;
                let k = T::lit(k);
                Ok(Self { name: name.into(), f: Arc::new(move |_, _| k), autonomous: true })
            }
            other => Err(LabError::InvalidParameter(format!("unknown reaction preset `{other}`"))),
        }
    }
}

/// One integrated trajectory with its tracks, indexed like the time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Scalar> {
    pub states: Vec<HPoint<T>>,
    /// Row-major N×N matrices D_pΦ; empty when not requested.
    pub jacobians: Vec<Vec<T>>,
    /// ∫ div b along the trajectory.
    pub div_integral: Vec<T>,
    /// ∫ c along the trajectory.
    pub reaction_integral: Vec<T>,
}

/// Trajectories of many initial points on a common time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMap<T: Scalar> {
    pub n: usize,
    pub times: Vec<T>,
    pub trajectories: Vec<Trajectory<T>>,
}

impl<T: Scalar> FlowMap<T> {
    /// det D_pΦ for trajectory `k` at time index `i`.
    pub fn det(&self, k: usize, i: usize) -> Option<T> {
        let m = self.trajectories[k].jacobians.get(i)?;
        Some(determinant(m, 2 * self.n + 1))
    }

    /// max |log det D_pΦ − ∫ div b ∘ Φ|.
    pub fn logdet_gap(&self) -> T {
        let mut worst = T::zero();
        for (k, tr) in self.trajectories.iter().enumerate() {
            for i in 0..tr.jacobians.len() {
                let d = self.det(k, i).expect("jacobian");
                worst = worst.max((d.ln() - tr.div_integral[i]).abs());
            }
        }
        worst
    }

    /// Smallest det D_pΦ over all trajectories and times.
    pub fn min_det(&self) -> Option<T> {
        let mut best: Option<T> = None;
        for (k, tr) in self.trajectories.iter().enumerate() {
            for i in 0..tr.jacobians.len() {
                let d = self.det(k, i)?;
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best
    }
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant<T: Scalar>(m: &[T], dim: usize) -> T {
    let mut a = m.to_vec();
    let mut det = T::one();
    for c in 0..dim {
        let piv = (c..dim).max_by(|&i, &j| a[i * dim + c].abs().partial_cmp(&a[j * dim + c].abs()).unwrap()).unwrap();
        if a[piv * dim + c] == T::zero() {
            return T::zero();
        }
        if piv != c {
            for k in 0..dim {
                a.swap(c * dim + k, piv * dim + k);
            }
            det = -det;
        }
        let d = a[c * dim + c];
        det *= d;
        for r in c + 1..dim {
            let f = a[r * dim + c] / d;
            for k in c..dim {
                let v = a[c * dim + k];
                a[r * dim + k] -= f * v;
            }
        }
    }
    det
}

/// What to integrate besides the trajectory.
#[derive(Clone, Debug, Default)]
pub struct FlowOptions<T: Scalar> {
    pub jacobian: bool,
    pub bounds: Option<BoxRegion<T>>,
    pub reaction: Option<Reaction<T>>,
}

struct Deriv<T> {
    dx: Vec<T>,
    dj: Vec<T>,
    ddiv: T,
    dc: T,
}

fn rhs<T: Scalar, B: VectorField<T> + ?Sized>(b: &B, opts: &FlowOptions<T>, tau: T, x: &HPoint<T>, jac: &[T]) -> Deriv<T> {
    let dim = x.dim();
    let dc = opts.reaction.as_ref().map_or(T::zero(), |c| c.value(tau, x));
    if opts.jacobian {
        let v = velocity_jets(b, tau, x, 1);
        let dx: Vec<T> = v.iter().map(|j| j.value()).collect();
        let mut dj = vec![T::zero(); dim * dim];
        let mut ddiv = T::zero();
        for i in 0..dim {
            ddiv += v[i].grad(i);
            for k in 0..dim {
                let mut s = T::zero();
                for l in 0..dim {
                    s += v[i].grad(l) * jac[l * dim + k];
                }
                dj[i * dim + k] = s;
            }
        }
        Deriv { dx, dj, ddiv, dc }
    } else {
        let (dx, ddiv) = velocity(b, tau, x);
        Deriv { dx, dj: Vec::new(), ddiv, dc }
    }
}

fn axpy<T: Scalar>(base: &[T], h: T, d: &[T]) -> Vec<T> {
    base.iter().zip(d).map(|(&a, &b)| a + h * b).collect()
}

/// Integrates dΦ/dτ = b(τ, Φ) from τ = t0 to t1 in `steps` classical RK4 steps,
/// together with the variational equation and the div and reaction tracks.
pub fn integrate_flow_with<T: Scalar, B: VectorField<T> + ?Sized>(
    b: &B,
    initials: &[HPoint<T>],
    t0: T,
    t1: T,
    steps: usize,
    opts: &FlowOptions<T>,
) -> Result<FlowMap<T>> {
    let n = b.n();
    if steps == 0 {
        return Err(LabError::InvalidParameter("flow needs at least one step".into()));
    }
    if let Some(p) = initials.iter().find(|p| p.n() != n) {
        return Err(LabError::DimensionMismatch { expected: n, found: p.n() });
    }
    let h = (t1 - t0) / T::of(steps);
    let times: Vec<T> = (0..=steps).map(|i| t0 + h * T::of(i)).collect();
    let dim = 2 * n + 1;
    let trajectories = initials
        .par_iter()
        .map(|p0| {
            let mut x = p0.clone();
            let mut jac: Vec<T> = if opts.jacobian {
                (0..dim * dim).map(|k| if k / dim == k % dim { T::one() } else { T::zero() }).collect()
            } else {
                Vec::new()
            };
            let (mut ell, mut cint) = (T::zero(), T::zero());
            let mut tr = Trajectory {
                states: vec![x.clone()],
                jacobians: if opts.jacobian { vec![jac.clone()] } else { Vec::new() },
                div_integral: vec![ell],
                reaction_integral: vec![cint],
            };
            let half = h * T::lit(0.5);
            for i in 0..steps {
                let tau = times[i];
                let pt = |c: Vec<T>| HPoint::from_coords(n, &c);
                let k1 = rhs(b, opts, tau, &x, &jac);
                let x2 = pt(axpy(x.coords(), half, &k1.dx))?;
                let j2 = axpy(&jac, half, &k1.dj);
                let k2 = rhs(b, opts, tau + half, &x2, &j2);
                let x3 = pt(axpy(x.coords(), half, &k2.dx))?;
                let j3 = axpy(&jac, half, &k2.dj);
                let k3 = rhs(b, opts, tau + half, &x3, &j3);
                let x4 = pt(axpy(x.coords(), h, &k3.dx))?;
                let j4 = axpy(&jac, h, &k3.dj);
                let k4 = rhs(b, opts, tau + h, &x4, &j4);
                let six = h / T::lit(6.0);
                let two = T::lit(2.0);
                let comb = |a: &[T], b2: &[T], c: &[T], d: &[T], base: &[T]| -> Vec<T> {
                    (0..base.len()).map(|k| base[k] + six * (a[k] + two * b2[k] + two * c[k] + d[k])).collect()
                };
                x = pt(comb(&k1.dx, &k2.dx, &k3.dx, &k4.dx, x.coords()))?;
                if opts.jacobian {
                    jac = comb(&k1.dj, &k2.dj, &k3.dj, &k4.dj, &jac);
                }
                ell += six * (k1.ddiv + two * k2.ddiv + two * k3.ddiv + k4.ddiv);
                cint += six * (k1.dc + two * k2.dc + two * k3.dc + k4.dc);
                if x.coords().iter().any(|v| !v.is_finite()) || opts.bounds.as_ref().is_some_and(|bx| !bx.contains(&x)) {
                    return Err(LabError::CharacteristicEscape(x.to_f64()));
                }
                tr.states.push(x.clone());
                if opts.jacobian {
                    tr.jacobians.push(jac.clone());
                }
                tr.div_integral.push(ell);
                tr.reaction_integral.push(cint);
            }
            Ok(tr)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowMap { n, times, trajectories })
}

/// Number of steps of size about `dt` covering |span|.
pub fn step_count<T: Scalar>(span: T, dt: T) -> Result<usize> {
    if !(dt > T::zero()) {
        return Err(LabError::NonPositiveScale(dt.to_f64_lossy()));
    }
    Ok(((span.abs() / dt).round().to_usize().unwrap_or(1)).max(1))
}

/// Flow from τ = 0 to `horizon` with step about `dt`, Jacobians included.
pub fn integrate_flow<T: Scalar, B: VectorField<T> + ?Sized>(b: &B, initials: &[HPoint<T>], horizon: T, dt: T) -> Result<FlowMap<T>> {
    let steps = step_count(horizon, dt)?;
    integrate_flow_with(b, initials, T::zero(), horizon, steps, &FlowOptions { jacobian: true, ..Default::default() })
}

/// Measured and theoretical push-forward constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PushforwardBound<T> {
    pub measured: T,
    pub theory: T,
}

impl<T: Scalar> PushforwardBound<T> {
    pub fn holds(&self, tol: T) -> bool {
        self.measured <= self.theory * (T::one() + tol)
    }
}

/// C_measured = max exp(−∫div b∘Φ), C_theory = exp(∫‖(div b)⁻‖_∞ dτ) with the
/// sup taken over midpoint samples of `region` and the trajectory points.
pub fn pushforward_bound<T: Scalar, B: VectorField<T> + ?Sized>(
    flow: &FlowMap<T>,
    b: &B,
    region: &BoxRegion<T>,
    cells: usize,
) -> PushforwardBound<T> {
    let measured = flow
        .trajectories
        .iter()
        .flat_map(|t| t.div_integral.iter())
        .map(|&l| (-l).exp())
        .fold(T::zero(), T::max);
    let (pts, _) = region.midpoints(&vec![cells; region.dim()]);
    let neg = |tau: T, p: &HPoint<T>| (-b.sample(tau, p).1).max(T::zero());
    let region_sup = |tau: T| pts.par_iter().map(|p| neg(tau, p)).reduce(|| T::zero(), T::max);
    let auto_sup = if b.is_autonomous() { Some(region_sup(T::zero())) } else { None };
    let sups: Vec<T> = flow
        .times
        .iter()
        .enumerate()
        .map(|(i, &tau)| {
            let r = auto_sup.unwrap_or_else(|| region_sup(tau));
            flow.trajectories.iter().map(|t| neg(tau, &t.states[i])).fold(r, T::max)
        })
        .collect();
    let mut integral = T::zero();
    for i in 1..flow.times.len() {
        integral += (flow.times[i] - flow.times[i - 1]).abs() * T::lit(0.5) * (sups[i] + sups[i - 1]);
    }
    PushforwardBound { measured, theory: integral.exp() }
}

/// Largest T-component of D_pΦ·Z_j(p), expanded in the frame at Φ(τ, p).
pub fn horizontality_defect<T: Scalar>(flow: &FlowMap<T>) -> Result<T> {
    let n = flow.n;
    let dim = 2 * n + 1;
    let mut worst = T::zero();
    for tr in &flow.trajectories {
        if tr.jacobians.is_empty() {
            return Err(LabError::InvalidParameter("horizontality needs the Jacobian track".into()));
        }
        let p0 = &tr.states[0];
        for (i, jac) in tr.jacobians.iter().enumerate() {
            for j in 0..2 * n {
                let v0 = frame_vector(FrameKind::Left, j, p0)?;
                let v: Vec<T> = (0..dim).map(|r| (0..dim).map(|k| jac[r * dim + k] * v0[k]).sum()).collect();
                let comps = frame_components(&tr.states[i], &v);
                worst = worst.max(comps[2 * n].abs());
            }
        }
    }
    Ok(worst)
}

/// Snapshots of a scalar field on a common grid, linear in τ between them.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeField<T: Scalar> {
    times: Vec<T>,
    snapshots: Vec<GridField<T>>,
}

impl<T: Scalar> TimeField<T> {
    pub fn new(times: Vec<T>, snapshots: Vec<GridField<T>>) -> Result<Self> {
        if times.is_empty() || times.len() != snapshots.len() {
            return Err(LabError::InvalidParameter("times and snapshots must pair up".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(LabError::InvalidParameter("snapshot times must increase strictly".into()));
        }
        let first = &snapshots[0];
        if snapshots.iter().any(|s| s.region() != first.region() || s.shape() != first.shape()) {
            return Err(LabError::InvalidParameter("snapshots must share one grid".into()));
        }
        Ok(Self { times, snapshots })
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn snapshots(&self) -> &[GridField<T>] {
        &self.snapshots
    }

    pub fn region(&self) -> &BoxRegion<T> {
        self.snapshots[0].region()
    }

    /// u(τ, p), linear in τ and multilinear in p.
    pub fn value(&self, tau: T, p: &HPoint<T>) -> Result<T> {
        let m = self.times.len();
        let (t0, t1) = (self.times[0], self.times[m - 1]);
        if tau < t0 || tau > t1 {
            return Err(LabError::InvalidParameter(format!("τ = {tau} outside [{t0}, {t1}]")));
        }
        if m == 1 {
            return self.snapshots[0].interp(p);
        }
        let k = (self.times.partition_point(|&s| s <= tau).max(1) - 1).min(m - 2);
        let th = (tau - self.times[k]) / (self.times[k + 1] - self.times[k]);
        let a = self.snapshots[k].interp(p)?;
        let b = self.snapshots[k + 1].interp(p)?;
        Ok(a + th * (b - a))
    }

    /// Pointwise extremes over all snapshots.
    pub fn range(&self) -> (T, T) {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for s in &self.snapshots {
            for &v in s.values() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }
}

/// Sign convention of the transport equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportForm {
    /// ∂_τu − ⟨b, ∇u⟩ + cu = 0
    Minus,
    /// ∂_τu + ⟨b, ∇u⟩ + cu = 0
    Plus,
}

impl TransportForm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "minus" => Ok(Self::Minus),
            "plus" => Ok(Self::Plus),
            _ => Err(LabError::InvalidParameter(format!("unknown transport form `{s}`"))),
        }
    }

    fn sign<T: Scalar>(self) -> T {
        match self {
            Self::Minus => T::one(),
            Self::Plus => -T::one(),
        }
    }
}

/// How the reaction enters along characteristics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReactionMode {
    /// cu: u = u₀ · exp(−∫c)
    Multiplicative,
    /// c: u = u₀ − ∫c
    Additive,
}

impl ReactionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "multiplicative" => Ok(Self::Multiplicative),
            "additive" => Ok(Self::Additive),
            _ => Err(LabError::InvalidParameter(format!("unknown reaction mode `{s}`"))),
        }
    }
}

/// A transport problem solved by characteristics onto a grid.
#[derive(Clone)]
pub struct TransportProblem<T: Scalar> {
    pub b: Arc<dyn VectorField<T>>,
    pub c: Reaction<T>,
    pub u0: Arc<dyn ScalarField<T>>,
    pub form: TransportForm,
    pub mode: ReactionMode,
    pub horizon: T,
    pub dt: T,
    pub out_box: BoxRegion<T>,
    pub h: T,
    /// Region in which characteristics must stay.
    pub bounds: Option<BoxRegion<T>>,
}

fn characteristic_field<T: Scalar>(b: &Arc<dyn VectorField<T>>, form: TransportForm) -> Arc<dyn VectorField<T>> {
    match form {
        TransportForm::Plus => b.clone(),
        TransportForm::Minus => Arc::new(ScaledField { inner: b.clone(), factor: -T::one() }),
    }
}

/// For each snapshot time τ_i and node q, the foot X(0) of the characteristic
/// through (τ_i, q) and the integrals of c and of the Jacobian determinant.
struct Feet<T: Scalar> {
    times: Vec<T>,
    probe: GridField<T>,
    /// [node][time] → (foot, ∫_{τ_i}^0 c, det of the backward Jacobian)
    data: Vec<Vec<(HPoint<T>, T, T)>>,
}

fn backward_feet<T: Scalar>(
    field: &Arc<dyn VectorField<T>>,
    reaction: Option<&Reaction<T>>,
    horizon: T,
    dt: T,
    out_box: &BoxRegion<T>,
    h: T,
    bounds: Option<&BoxRegion<T>>,
    jacobian: bool,
) -> Result<Feet<T>> {
    if !(horizon > T::zero()) {
        return Err(LabError::NonPositiveScale(horizon.to_f64_lossy()));
    }
    let steps = step_count(horizon, dt)?;
    let times: Vec<T> = (0..=steps).map(|i| horizon * T::of(i) / T::of(steps)).collect();
    let probe = GridField::sample(out_box.clone(), h, Extension::Error, |_| T::zero())?;
    let nodes: Vec<HPoint<T>> = (0..probe.values().len()).map(|k| probe.node_point(k)).collect();
    let opts = FlowOptions { jacobian, bounds: bounds.cloned(), reaction: reaction.cloned() };
    let dim = out_box.dim();
    let det_of = |tr: &Trajectory<T>, i: usize| if jacobian { determinant(&tr.jacobians[i], dim) } else { T::one() };
    let autonomous = field.is_autonomous() && reaction.map_or(true, |c| c.is_autonomous());
    let data = if autonomous {
        let flow = integrate_flow_with(field.as_ref(), &nodes, T::zero(), -horizon, steps, &opts)?;
        flow.trajectories
            .iter()
            .map(|tr| (0..=steps).map(|i| (tr.states[i].clone(), tr.reaction_integral[i], det_of(tr, i))).collect())
            .collect()
    } else {
        let mut per_node: Vec<Vec<(HPoint<T>, T, T)>> =
            nodes.iter().map(|q| vec![(q.clone(), T::zero(), T::one())]).collect();
        for (i, &tau) in times.iter().enumerate().skip(1) {
            let flow = integrate_flow_with(field.as_ref(), &nodes, tau, T::zero(), i, &opts)?;
            for (k, tr) in flow.trajectories.iter().enumerate() {
                per_node[k].push((tr.states[i].clone(), tr.reaction_integral[i], det_of(tr, i)));
            }
        }
        per_node
    };
    Ok(Feet { times, probe, data })
}

fn assemble<T: Scalar>(feet: &Feet<T>, value: impl Fn(&(HPoint<T>, T, T)) -> Result<T> + Sync) -> Result<TimeField<T>> {
    let m = feet.times.len();
    let mut snaps = Vec::with_capacity(m);
    for i in 0..m {
        let vals = feet.data.par_iter().map(|d| value(&d[i])).collect::<Result<Vec<T>>>()?;
        snaps.push(GridField::from_values(
            feet.probe.region().clone(),
            feet.probe.shape().to_vec(),
            vals,
            Extension::Error,
        )?);
    }
    TimeField::new(feet.times.clone(), snaps)
}

/// Method of characteristics for the transport equation.
pub fn solve_transport<T: Scalar>(pr: &TransportProblem<T>) -> Result<TimeField<T>> {
    let field = characteristic_field(&pr.b, pr.form);
    let feet = backward_feet(&field, Some(&pr.c), pr.horizon, pr.dt, &pr.out_box, pr.h, pr.bounds.as_ref(), false)?;
    let u0 = pr.u0.clone();
    let mode = pr.mode;
    assemble(&feet, move |(foot, cint, _)| {
        let v = u0.value(foot);
        Ok(match mode {
            ReactionMode::Multiplicative => v * cint.exp(),
            ReactionMode::Additive => v + *cint,
        })
    })
}

/// u(s, Φ(s, p)) = u₀(p) / det D_pΦ(s, p), evaluated at grid nodes Φ(s, p).
pub fn solve_continuity<T: Scalar>(
    b: &Arc<dyn VectorField<T>>,
    u0: &Arc<dyn ScalarField<T>>,
    horizon: T,
    dt: T,
    out_box: &BoxRegion<T>,
    h: T,
    bounds: Option<&BoxRegion<T>>,
) -> Result<TimeField<T>> {
    let feet = backward_feet(b, None, horizon, dt, out_box, h, bounds, true)?;
    let u0 = u0.clone();
    let tiny = T::lit(1e-12);
    assemble(&feet, move |(foot, _, det_back)| {
        // det D_pΦ(s, p) is the reciprocal of the backward determinant
        if det_back.abs() < tiny || det_back.abs() > T::one() / tiny {
            return Err(LabError::DegenerateJacobian((T::one() / *det_back).to_f64_lossy()));
        }
        Ok(u0.value(foot) * *det_back)
    })
}

/// Node-sum mass ∫u(τ_i, ·) of each snapshot (exact for fields vanishing at the boundary).
pub fn snapshot_masses<T: Scalar>(u: &TimeField<T>) -> Vec<T> {
    u.snapshots()
        .iter()
        .map(|g| {
            let vol: T = g.spacing().iter().copied().fold(T::one(), |a, b| a * b);
            g.values().iter().copied().sum::<T>() * vol
        })
        .collect()
}

/// φ(τ, p) = ζ(τ)χ(p) with ζ(τ) = exp(1 − 1/(1 − τ/H)) on [0, H), zero after.
#[derive(Clone)]
pub struct TestFunction<T: Scalar> {
    pub horizon: T,
    pub chi: Arc<dyn ScalarField<T>>,
}

impl<T: Scalar> TestFunction<T> {
    /// ζ(τ) and ζ'(τ).
    pub fn zeta(&self, tau: T) -> (T, T) {
        let s = tau / self.horizon;
        if s >= T::one() || s < T::zero() {
            return (T::zero(), T::zero());
        }
        let d = T::one() - s;
        let z = (T::one() - T::one() / d).exp();
        (z, -z / (d * d) / self.horizon)
    }

    /// χ vanishes on the faces of `region` and H does not exceed `t_max`.
    pub fn check_support(&self, region: &BoxRegion<T>, t_max: T) -> Result<()> {
        if !(self.horizon > T::zero()) || self.horizon > t_max {
            return Err(LabError::SupportViolation(format!("test horizon {} outside (0, {t_max}]", self.horizon)));
        }
        if boundary_sup(self.chi.as_ref(), region, 9) > T::lit(1e-12) {
            return Err(LabError::SupportViolation("test function nonzero on the box boundary".into()));
        }
        Ok(())
    }
}

/// Weak-form pairing of β(u) with φ:
/// −∫β(u₀)φ(0) + ∫∫ β(u)[−∂_τφ ± (⟨b, ∇φ⟩ + φ div b)] + R φ,
/// sign + for the minus form, R = c u β'(u) (multiplicative) or c β'(u) (additive).
#[allow(clippy::too_many_arguments)]
pub fn renormalization_residual<T: Scalar>(
    u: &TimeField<T>,
    beta: &Smooth1D<T>,
    u0: &dyn ScalarField<T>,
    b: &dyn VectorField<T>,
    c: &Reaction<T>,
    phi: &TestFunction<T>,
    form: TransportForm,
    mode: ReactionMode,
) -> Result<T> {
    let times = u.times();
    phi.check_support(u.region(), times[times.len() - 1])?;
    let g = &u.snapshots()[0];
    let cells: Vec<usize> = g.shape().iter().map(|&s| s.saturating_sub(1).max(1)).collect();
    let (pts, vol) = u.region().midpoints(&cells);
    let n = b.n();
    let sgn: T = form.sign();
    // spatial factors χ, ⟨b, ∇χ⟩, div b at one time
    let spatial = |tau: T| -> Vec<(T, T, T)> {
        pts.par_iter()
            .map(|p| {
                let jc = phi.chi.jet(p, 1);
                let (bc, div) = b.sample(tau, p);
                let bdot: T = (0..=2 * n).map(|j| bc[j] * frame_apply(&jc, FrameKind::Left, n, j, p.coords()).value()).sum();
                (jc.value(), bdot, div)
            })
            .collect()
    };
    let auto = if b.is_autonomous() { Some(spatial(T::zero())) } else { None };
    let (z0, _) = phi.zeta(T::zero());
    let init: T = pts.par_iter().map(|p| beta.value(u0.value(p)) * phi.chi.value(p)).sum::<T>() * vol;
    let mut total = -z0 * init;
    for w in times.windows(2) {
        let tau = (w[0] + w[1]) * T::lit(0.5);
        let dtau = w[1] - w[0];
        let (z, dz) = phi.zeta(tau);
        if z == T::zero() && dz == T::zero() {
            continue;
        }
        let owned;
        let sp = match &auto {
            Some(s) => s,
            None => {
                owned = spatial(tau);
                &owned
            }
        };
        let slice = pts
            .par_iter()
            .zip(sp.par_iter())
            .map(|(p, &(chi, bdot, div))| {
                let uv = u.value(tau, p)?;
                let bu = beta.derivatives(uv);
                let react = match mode {
                    ReactionMode::Multiplicative => c.value(tau, p) * uv * bu[1],
                    ReactionMode::Additive => c.value(tau, p) * bu[1],
                };
                Ok(bu[0] * (-dz * chi + sgn * z * (bdot + chi * div)) + react * z * chi)
            })
            .collect::<Result<Vec<T>>>()?;
        total += slice.into_iter().sum::<T>() * vol * dtau;
    }
    Ok(total)
}

/// The distributional pairing (β = identity).
#[allow(clippy::too_many_arguments)]
pub fn distributional_residual<T: Scalar>(
    u: &TimeField<T>,
    u0: &dyn ScalarField<T>,
    b: &dyn VectorField<T>,
    c: &Reaction<T>,
    phi: &TestFunction<T>,
    form: TransportForm,
    mode: ReactionMode,
) -> Result<T> {
    renormalization_residual(u, &Smooth1D::identity(), u0, b, c, phi, form, mode)
}

/// u(τ, ·) ≡ u₀ on the grid of `like`: the frozen control.
pub fn frozen_solution<T: Scalar>(like: &TimeField<T>, u0: &dyn ScalarField<T>) -> Result<TimeField<T>> {
    let g = &like.snapshots()[0];
    let vals: Vec<T> = (0..g.values().len()).into_par_iter().map(|k| u0.value(&g.node_point(k))).collect();
    let snap = GridField::from_values(g.region().clone(), g.shape().to_vec(), vals, Extension::Error)?;
    TimeField::new(like.times().to_vec(), vec![snap; like.times().len()])
}

/// Residuals of the characteristic solution and of the frozen control under
/// simultaneous refinement of h and Δτ by factors of two.
pub fn transport_study(pr: &TransportProblem<f64>, phi: &TestFunction<f64>, beta: &Smooth1D<f64>, levels: usize) -> Result<ConvergenceReport> {
    if levels < 2 {
        return Err(LabError::InvalidParameter("refinement needs at least two levels".into()));
    }
    let mut rep = ConvergenceReport::new(
        "transport",
        "h",
        &["h", "dt", "distributional", "renormalized", "frozen_distributional", "frozen_renormalized", "min_u", "max_u"],
    );
    let (ratio_lo, ratio_hi, control) = (3.0, 5.0, 10.0);
    rep.tolerances.insert("ratio_low".into(), ratio_lo);
    rep.tolerances.insert("ratio_high".into(), ratio_hi);
    rep.tolerances.insert("frozen_factor".into(), control);
    for l in 0..levels {
        let f = 0.5f64.powi(l as i32);
        let mut p = pr.clone();
        p.h = pr.h * f;
        p.dt = pr.dt * f;
        let u = solve_transport(&p)?;
        let frozen = frozen_solution(&u, p.u0.as_ref())?;
        let id = Smooth1D::identity();
        let r = |v: &TimeField<f64>, bt: &Smooth1D<f64>| {
            renormalization_residual(v, bt, p.u0.as_ref(), p.b.as_ref(), &p.c, phi, p.form, p.mode).map(f64::abs)
        };
        let (lo, hi) = u.range();
        rep.push_row(vec![p.h, p.dt, r(&u, &id)?, r(&u, beta)?, r(&frozen, &id)?, r(&frozen, beta)?, lo, hi]);
    }
    let col = |name: &str| rep.column(name).expect("column");
    let (d, rn, fd, fr) = (col("distributional"), col("renormalized"), col("frozen_distributional"), col("frozen_renormalized"));
    let ratios = |v: &[f64]| v.windows(2).map(|w| w[0] / w[1]).collect::<Vec<f64>>();
    let within = |r: &[f64]| r.iter().all(|&x| (ratio_lo..=ratio_hi).contains(&x));
    let (rd, rr) = (ratios(&d), ratios(&rn));
    rep.check("distributional_ratio", within(&rd), format!("successive ratios {rd:?} in [{ratio_lo}, {ratio_hi}]"));
    rep.check("renormalized_ratio", within(&rr), format!("successive ratios {rr:?} in [{ratio_lo}, {ratio_hi}]"));
    let last = levels - 1;
    rep.check(
        "frozen_control",
        fd[last] >= control * d[last] && fr[last] >= control * rn[last],
        format!("frozen {:.3e}/{:.3e} vs true {:.3e}/{:.3e}", fd[last], fr[last], d[last], rn[last]),
    );
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{contact_from_psi, FrameField, GeneratingFunction};
    use crate::field::ClosedForm;

    fn contact(name: &str) -> Arc<dyn VectorField<f64>> {
        Arc::new(contact_from_psi(GeneratingFunction::preset(name, 1).unwrap()))
    }

    #[test]
    fn determinant_matches_cofactor() {
        let m: [f64; 9] = [2.0, 1.0, 0.5, -1.0, 3.0, 2.0, 0.0, 1.0, 4.0];
        let cof: f64 = 2.0 * (12.0 - 2.0) - 1.0 * (-4.0 - 0.0) + 0.5 * (-1.0 - 0.0);
        assert!((determinant(&m, 3) - cof).abs() < 1e-12);
    }

    #[test]
    fn linear_x_flow_is_exact() {
        let b = contact("linear-x");
        let p = HPoint::h1(0.3, -0.2, 0.7);
        let f = integrate_flow(b.as_ref(), &[p.clone()], 1.0, 0.1).unwrap();
        let end = f.trajectories[0].states.last().unwrap();
        assert!((end.x(0) - 0.3).abs() < 1e-12);
        assert!((end.y(0) + 1.2).abs() < 1e-12);
        assert!((end.t() - (0.7 - 0.6)).abs() < 1e-12);
        assert!(horizontality_defect(&f).unwrap() < 1e-12);
    }

    #[test]
    fn zero_field_is_identity() {
        let b: Arc<dyn VectorField<f64>> = Arc::new(FrameField::zero(1));
        let p = HPoint::h1(0.3, -0.2, 0.7);
        let f = integrate_flow(b.as_ref(), &[p.clone()], 1.0, 0.25).unwrap();
        assert_eq!(f.trajectories[0].states.last().unwrap(), &p);
        assert_eq!(f.det(0, 4).unwrap(), 1.0);
    }

    #[test]
    fn time_only_reaction() {
        let b: Arc<dyn VectorField<f64>> = Arc::new(FrameField::zero(1));
        let pr = TransportProblem {
            b,
            c: Reaction::preset("linear-time", 1).unwrap(),
            u0: ClosedForm::coordinate(1, 0).into_arc(),
            form: TransportForm::Plus,
            mode: ReactionMode::Multiplicative,
            horizon: 1.0,
            dt: 0.1,
            out_box: BoxRegion::cube(1, -1.0, 1.0).unwrap(),
            h: 0.5,
            bounds: None,
        };
        let u = solve_transport(&pr).unwrap();
        let p = HPoint::h1(0.5, 0.0, 0.0);
        // u = x · exp(−τ²/2)
        assert!((u.value(1.0, &p).unwrap() - 0.5 * (-0.5f64).exp()).abs() < 1e-12);
    }
}

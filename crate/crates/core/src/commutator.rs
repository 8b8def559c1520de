//! The commutator C_ε of mollification with transport, its decomposition and
//! ε-ladder studies.

use std::sync::Arc;

use rayon::prelude::*;

use crate::contact::VectorField;
use crate::error::{LabError, Result};
use crate::field::{frame_apply, PointJetField, ScalarField};
use crate::grid::{BoxRegion, Extension, GridField};
use crate::group::{FrameKind, HPoint};
use crate::jet::Jet;
use crate::mollifier::{convolution_margins, KernelLattice, LatticeRule, Mollifier};
use crate::report::ConvergenceReport;
use crate::scalar::Scalar;

pub const VERDICT_VANISHING: &str = "CONTACT-VANISHING";
pub const VERDICT_BLOWUP: &str = "NONCONTACT-BLOWUP";
pub const VERDICT_INCONCLUSIVE: &str = "INCONCLUSIVE";

/// Snapshot u, field b, reaction c, kernel, ladder and evaluation region K.
#[derive(Clone)]
pub struct CommutatorInput<T: Scalar> {
    pub u: Arc<dyn ScalarField<T>>,
    /// Box on which u is known; `None` for closed-form snapshots.
    pub u_box: Option<BoxRegion<T>>,
    pub b: Arc<dyn VectorField<T>>,
    pub c: Arc<dyn ScalarField<T>>,
    pub rho: Mollifier<T>,
    pub ladder: Vec<T>,
    pub region: BoxRegion<T>,
    /// Midpoint cells per axis of K.
    pub k_cells: usize,
    /// Kernel quadrature.
    pub lattice: LatticeRule,
    /// Cheaper quadrature used for the noise floor.
    pub coarse: LatticeRule,
    pub tau: T,
}

impl<T: Scalar> CommutatorInput<T> {
    pub fn n(&self) -> usize {
        self.region.n()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.b.n() != n || self.u.n() != n || self.c.n() != n || self.rho.n() != n {
            return Err(LabError::DimensionMismatch { expected: n, found: self.b.n() });
        }
        if self.ladder.is_empty() || self.ladder.iter().any(|&e| !(e > T::zero())) {
            return Err(LabError::InvalidParameter("ε ladder must be nonempty and positive".into()));
        }
        if self.ladder.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(LabError::InvalidParameter("ε ladder must be strictly decreasing".into()));
        }
        if self.k_cells == 0 {
            return Err(LabError::InvalidParameter("K needs at least one cell per axis".into()));
        }
        if let Some(ub) = &self.u_box {
            let allowed = admissible_region(ub, &self.rho, self.ladder[0])?;
            if !allowed.contains_box(&self.region) {
                return Err(LabError::RegionOutsideBox(format!(
                    "K must lie in {:?}..{:?} for ε = {}",
                    allowed.lower(),
                    allowed.upper(),
                    self.ladder[0]
                )));
            }
        }
        Ok(())
    }
}

/// The largest box K whose convolution stencils at scale ε stay in `u_box`.
pub fn admissible_region<T: Scalar>(u_box: &BoxRegion<T>, rho: &Mollifier<T>, eps: T) -> Result<BoxRegion<T>> {
    u_box.shrink(&convolution_margins(rho, eps, u_box))
}

/// A grid snapshot as a scalar field: multilinear values, centered-difference
/// first partials; NaN outside the box.
pub fn grid_snapshot<T: Scalar>(g: Arc<GridField<T>>) -> PointJetField<T> {
    let n = g.n();
    PointJetField::new(n, move |p, order| {
        let dim = p.dim();
        let v = g.interp(p).unwrap_or_else(|_| T::nan());
        let mut j = Jet::constant(dim, order.min(1), v);
        if order >= 1 {
            let mut out = Jet::constant(dim, 1, v);
            for k in 0..dim {
                let d = g.partial(k, p).unwrap_or_else(|_| T::nan());
                out = &out + &Jet::variable(dim, 1, k, T::zero()).scale(d);
            }
            j = out;
        }
        j
    })
}

/// All commutator terms at one point p.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointTerms<T> {
    /// C_ε¹ from the direct formula.
    pub c1_direct: T,
    /// C_ε² (reaction term).
    pub c2: T,
    /// ((u·div b) * ρ_ε)(p).
    pub conv_div: T,
    pub a1: T,
    pub b1: T,
    pub b2: T,
    /// Pointwise limits used for the A₁ and B₁ errors.
    pub a1_limit: T,
    pub b1_limit: T,
}

impl<T: Scalar> PointTerms<T> {
    pub fn total(&self) -> T {
        self.c1_direct + self.c2
    }

    /// −C¹ rebuilt from the breakdown.
    pub fn c1_decomposed(&self) -> T {
        -(self.conv_div + self.a1 + self.b1 + self.b2)
    }
}

/// Evaluates every term at p. All integrals run over the same symmetric
/// lattice: for q = δ_ε(w_k) the point p·q⁻¹ is p·δ_ε(w_m) with m the mirror of k.
pub fn terms_at<T: Scalar>(input: &CommutatorInput<T>, eps: T, lat: &KernelLattice<T>, p: &HPoint<T>) -> Result<PointTerms<T>> {
    let n = input.n();
    let big = 2 * n;
    let tau = input.tau;
    let pj = input.b.jets(tau, p, 1);
    let bp: Vec<T> = pj.iter().map(|j| j.value()).collect();
    let grad_bn: Vec<T> = (0..big).map(|j| frame_apply(&pj[big], FrameKind::Left, n, j, p.coords()).value()).collect();
    let t_bn = frame_apply(&pj[big], FrameKind::Left, n, big, p.coords()).value();
    let (_, div_p) = input.b.sample(tau, p);
    let u_p = input.u.value(p);
    let c_p = input.c.value(p);
    let four = T::lit(4.0);
    // ∇^H b_N + 4J(b) at p
    let resid: Vec<T> =
        (0..big).map(|j| grad_bn[j] + four * if j < n { -bp[n + j] } else { bp[j - n] }).collect();
    let len = lat.len();
    let mut vals = Vec::with_capacity(len);
    for k in 0..len {
        let q = p.mul(&lat.nodes[k].dilate_unchecked(eps))?;
        let (bq, div_q) = input.b.sample(tau, &q);
        let uq = input.u.value(&q);
        let cq = input.c.value(&q);
        vals.push((bq, div_q, uq, cq));
    }
    let e2 = eps * eps;
    let mut t = PointTerms::<T>::default();
    let (mut conv, mut second, mut c2) = (T::zero(), T::zero(), T::zero());
    let (mut a1, mut b1, mut b2) = (T::zero(), T::zero(), T::zero());
    for k in 0..len {
        let m = lat.mirror[k];
        let w = &lat.nodes[k];
        let wh = w.w_h();
        let (bq, _, uq, _) = &vals[k];
        let (bm, div_m, um, cm) = &vals[m];
        let rho_k = lat.rho[k];
        let wk = lat.weights[k];
        // direct form, q = δ_ε(w_k), p·q⁻¹ = p·δ_ε(w_m)
        conv += *um * *div_m * rho_k * wk;
        let mut s = T::zero();
        for j in 0..=big {
            let scale = if j == big { e2 } else { eps };
            s += (bp[j] * lat.left[k][j] - bm[j] * lat.right[k][j]) / scale;
        }
        second += *um * s * wk;
        c2 += *um * rho_k * (c_p - *cm) * wk;
        // decomposed form at p·δ_ε(w_k)
        let mut a = T::zero();
        for j in 0..big {
            a += (bq[j] - bp[j]) / eps * lat.left[k][j];
        }
        a1 += a * *uq * wk;
        let lin: T = (0..big).map(|j| grad_bn[j] * wh[j]).sum();
        let tr = lat.left[k][big];
        b1 += (bq[big] - bp[big] - eps * lin) / e2 * *uq * tr * wk;
        let rw: T = (0..big).map(|j| resid[j] * wh[j]).sum();
        b2 += rw / eps * *uq * tr * wk;
    }
    t.conv_div = conv;
    t.c1_direct = -conv - second;
    t.c2 = c2;
    t.a1 = a1;
    t.b1 = b1;
    t.b2 = b2;
    t.a1_limit = -u_p * div_p + u_p * t_bn;
    t.b1_limit = -t_bn * u_p;
    Ok(t)
}

fn sample_k<T: Scalar>(
    input: &CommutatorInput<T>,
    eps: T,
    lat: &KernelLattice<T>,
    h: T,
    pick: impl Fn(&PointTerms<T>) -> T + Sync,
) -> Result<GridField<T>> {
    let probe = GridField::sample(input.region.clone(), h, Extension::Error, |_| T::zero())?;
    let m = probe.values().len();
    let vals = (0..m)
        .into_par_iter()
        .map(|k| terms_at(input, eps, lat, &probe.node_point(k)).map(|t| pick(&t)))
        .collect::<Result<Vec<T>>>()?;
    GridField::from_values(input.region.clone(), probe.shape().to_vec(), vals, Extension::Error)
}

/// C_ε = C_ε¹ + C_ε² sampled on K with node spacing `h`.
pub fn commutator_direct<T: Scalar>(input: &CommutatorInput<T>, eps: T, h: T) -> Result<GridField<T>> {
    input.validate()?;
    let lat = KernelLattice::with_rule(&input.rho, input.lattice)?;
    sample_k(input, eps, &lat, h, |t| t.total())
}

/// Breakdown terms over K and their L¹(K) norms.
#[derive(Clone, Debug)]
pub struct CommutatorBreakdown<T: Scalar> {
    pub a1: GridField<T>,
    pub b1: GridField<T>,
    pub b2: GridField<T>,
    pub conv_div: GridField<T>,
    pub c2: GridField<T>,
    pub norms: BreakdownNorms<T>,
}

/// L¹(K) norms of the breakdown terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BreakdownNorms<T> {
    pub a1: T,
    pub b1: T,
    pub b2: T,
    pub conv_div: T,
    pub c2: T,
}

pub fn commutator_decomposed<T: Scalar>(input: &CommutatorInput<T>, eps: T, h: T) -> Result<CommutatorBreakdown<T>> {
    input.validate()?;
    let lat = KernelLattice::with_rule(&input.rho, input.lattice)?;
    let probe = GridField::sample(input.region.clone(), h, Extension::Error, |_| T::zero())?;
    let m = probe.values().len();
    let terms =
        (0..m).into_par_iter().map(|k| terms_at(input, eps, &lat, &probe.node_point(k))).collect::<Result<Vec<_>>>()?;
    let grid = |f: &dyn Fn(&PointTerms<T>) -> T| {
        GridField::from_values(input.region.clone(), probe.shape().to_vec(), terms.iter().map(f).collect(), Extension::Error)
    };
    let (a1, b1, b2) = (grid(&|t| t.a1)?, grid(&|t| t.b1)?, grid(&|t| t.b2)?);
    let (conv_div, c2) = (grid(&|t| t.conv_div)?, grid(&|t| t.c2)?);
    let spec = crate::grid::NormSpec::new(T::one(), input.region.clone())?;
    let norms = BreakdownNorms {
        a1: a1.lp_norm(&spec)?,
        b1: b1.lp_norm(&spec)?,
        b2: b2.lp_norm(&spec)?,
        conv_div: conv_div.lp_norm(&spec)?,
        c2: c2.lp_norm(&spec)?,
    };
    Ok(CommutatorBreakdown { a1, b1, b2, conv_div, c2, norms })
}

/// L¹(K) norms of one ε evaluation by the midpoint rule on K.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LadderPoint {
    pub eps: f64,
    pub total: f64,
    pub a1_err: f64,
    pub b1_err: f64,
    pub b2_norm: f64,
    pub b2_max: f64,
    pub c2_norm: f64,
    pub identity_gap: f64,
    pub noise_floor: f64,
}

fn k_points(input: &CommutatorInput<f64>) -> (Vec<HPoint<f64>>, f64) {
    input.region.midpoints(&vec![input.k_cells; input.region.dim()])
}

/// Evaluates one ladder point with both lattices.
pub fn ladder_point(input: &CommutatorInput<f64>, eps: f64, fine: &KernelLattice<f64>, coarse: &KernelLattice<f64>) -> Result<LadderPoint> {
    let (pts, vol) = k_points(input);
    let rows = pts
        .par_iter()
        .map(|p| {
            let t = terms_at(input, eps, fine, p)?;
            let tc = terms_at(input, eps, coarse, p)?;
            Ok((t, tc.total()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut lp = LadderPoint { eps, ..Default::default() };
    for (t, coarse_total) in &rows {
        lp.total += t.total().abs();
        lp.a1_err += (t.a1 - t.a1_limit).abs();
        lp.b1_err += (t.b1 - t.b1_limit).abs();
        lp.b2_norm += t.b2.abs();
        lp.b2_max = lp.b2_max.max(t.b2.abs());
        lp.c2_norm += t.c2.abs();
        lp.identity_gap += (t.c1_direct - t.c1_decomposed()).abs();
        lp.noise_floor += (t.total() - coarse_total).abs();
    }
    for v in [&mut lp.total, &mut lp.a1_err, &mut lp.b1_err, &mut lp.b2_norm, &mut lp.c2_norm, &mut lp.identity_gap, &mut lp.noise_floor] {
        *v *= vol;
    }
    Ok(lp)
}

/// Right side of ‖C_ε²‖_{L¹(K)} ≤ ‖u‖_{L¹(K_ε)}·∫ρ(w) sup_K |c − c(·δ_ε(w)⁻¹)| dw.
pub fn c2_bound(input: &CommutatorInput<f64>, eps: f64, lat: &KernelLattice<f64>) -> Result<f64> {
    let (pts, _) = k_points(input);
    let grown = input.region.expand(&convolution_margins(&input.rho, eps, &input.region));
    let (gpts, gvol) = grown.midpoints(&vec![input.k_cells; grown.dim()]);
    let u_norm: f64 = gpts.par_iter().map(|p| input.u.value(p).abs()).sum::<f64>() * gvol;
    let sups = (0..lat.len())
        .into_par_iter()
        .map(|k| {
            let winv = lat.nodes[k].dilate_unchecked(eps).inverse();
            let mut m: f64 = 0.0;
            for p in &pts {
                m = m.max((input.c.value(p) - input.c.value(&p.mul(&winv)?)).abs());
            }
            Ok(m * lat.rho[k] * lat.weights[k])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(u_norm * sups.into_iter().sum::<f64>())
}

/// Moments ∫Z_j(w_iρ) dw (i, j horizontal) and ∫T(w_Nρ) dw on the lattice;
/// returns the largest magnitude.
pub fn moment_cancellation<T: Scalar>(lat: &KernelLattice<T>) -> T {
    let n = lat.n;
    let big = 2 * n;
    let mut worst = T::zero();
    let mut eval = |i: usize, j: usize| {
        let mut s = T::zero();
        for k in 0..lat.len() {
            let w = &lat.nodes[k];
            // Z_j(w_i) for the coordinate function w_i
            let zw = if i == j { T::one() } else if i == big && j < big { crate::group::frame_t_coeff(FrameKind::Left, n, j, w.coords()) } else { T::zero() };
            s += (zw * lat.rho[k] + w.coord(i) * lat.left[k][j]) * lat.weights[k];
        }
        worst = worst.max(s.abs());
    };
    for i in 0..big {
        for j in 0..big {
            eval(i, j);
        }
    }
    eval(big, big);
    worst
}

/// The ε-ladder study with fitted rates, noise floor, checks and verdict.
pub fn commutator_study(input: &CommutatorInput<f64>) -> Result<ConvergenceReport> {
    input.validate()?;
    if input.ladder.len() < 4 {
        return Err(LabError::InvalidParameter("commutator study needs at least 4 ladder points".into()));
    }
    let fine = KernelLattice::with_rule(&input.rho, input.lattice)?;
    let coarse = KernelLattice::with_rule(&input.rho, input.coarse)?;
    let mut rep = ConvergenceReport::new(
        "commutator",
        "eps",
        &["eps", "C_total", "A1_err", "B1_err", "B2_norm", "noise_floor", "B2_max", "C2_norm", "C2_bound", "identity_gap"],
    );
    let mut points = Vec::new();
    for &eps in &input.ladder {
        let lp = ladder_point(input, eps, &fine, &coarse)?;
        let bound = c2_bound(input, eps, &coarse)?;
        points.push((lp, bound));
    }
    for (lp, bound) in &points {
        rep.push_row(vec![
            lp.eps,
            lp.total,
            lp.a1_err,
            lp.b1_err,
            lp.b2_norm,
            lp.noise_floor,
            lp.b2_max,
            lp.c2_norm,
            *bound,
            lp.identity_gap,
        ]);
    }
    let floor = points.iter().map(|(p, _)| p.noise_floor).fold(0.0, f64::max);
    rep.noise_floor = Some(floor);
    let moments = moment_cancellation(&fine);
    rep.tolerances.insert("moment_cancellation".into(), 1e-6);
    rep.tolerances.insert("b2_contact".into(), 1e-10);
    rep.tolerances.insert("noise_ratio".into(), 10.0);
    rep.tolerances.insert("rate_vanishing".into(), 0.8);
    rep.tolerances.insert("rate_blowup".into(), -0.8);
    rep.check("moment_cancellation", moments <= 1e-6, format!("max |moment| = {moments:.3e}"));
    let gap_ok = points.iter().all(|(p, _)| p.identity_gap <= 2.0 * p.noise_floor + 1e-12);
    rep.check("direct_vs_decomposed", gap_ok, "‖C¹_direct − C¹_decomposed‖ ≤ 2 × quadrature tolerance");
    let bound_ok = points.iter().all(|(p, b)| p.c2_norm <= b + 2.0 * p.noise_floor + 1e-12);
    rep.check("c2_bound", bound_ok, "reaction term below its translation-continuity bound");
    if input.b.is_contact() {
        let worst = points.iter().map(|(p, _)| p.b2_max).fold(0.0, f64::max);
        rep.check("b2_contact", worst <= 1e-10, format!("max |B₂| = {worst:.3e}"));
    }
    let last = points.last().expect("ladder").0;
    if last.total < 10.0 * last.noise_floor {
        return Err(LabError::NoiseFloor(format!(
            "‖C_ε‖ = {:.3e} at ε = {} is below 10 × noise floor {:.3e}",
            last.total, last.eps, last.noise_floor
        )));
    }
    let totals: Vec<f64> = points.iter().map(|(p, _)| p.total).collect();
    let fit = rep.fit("C_total")?;
    if points.iter().all(|(p, _)| p.b2_norm > 0.0) {
        rep.fit("B2_norm")?;
    }
    let decreasing = totals.windows(2).all(|w| w[1] < w[0]);
    let increasing = totals.windows(2).all(|w| w[1] > w[0]);
    let verdict = if decreasing && fit.rate > 0.0 {
        VERDICT_VANISHING
    } else if increasing && fit.rate < 0.0 {
        VERDICT_BLOWUP
    } else {
        VERDICT_INCONCLUSIVE
    };
    rep.verdict = Some(verdict.to_string());
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{contact_from_psi, FrameField, GeneratingFunction};
    use crate::field::ClosedForm;

    fn input(b: Arc<dyn VectorField<f64>>, u: ClosedForm<f64>, c: ClosedForm<f64>) -> CommutatorInput<f64> {
        CommutatorInput {
            u: u.into_arc(),
            u_box: None,
            b,
            c: c.into_arc(),
            rho: Mollifier::new(1).unwrap(),
            ladder: vec![0.2, 0.1],
            region: BoxRegion::cube(1, -0.5, 0.5).unwrap(),
            k_cells: 3,
            lattice: LatticeRule::Midpoint { cells: 12 },
            coarse: LatticeRule::Midpoint { cells: 8 },
            tau: 0.0,
        }
    }

    #[test]
    fn constants_annihilate() {
        let b: Arc<dyn VectorField<f64>> = Arc::new(FrameField::zero(1));
        let inp = input(b, ClosedForm::constant(1, 2.0), ClosedForm::constant(1, 3.0));
        let lat = KernelLattice::new(&inp.rho, 12).unwrap();
        let t = terms_at(&inp, 0.1, &lat, &HPoint::h1(0.1, 0.2, 0.3)).unwrap();
        assert!(t.total().abs() < 1e-10);
        assert!(t.c2.abs() < 1e-10);
    }

    #[test]
    fn identity_and_contact_b2() {
        let psi = GeneratingFunction::from_closed(ClosedForm::bump(1, vec![0.0; 3], vec![1.5; 3]));
        let b: Arc<dyn VectorField<f64>> = Arc::new(contact_from_psi(psi));
        let u = ClosedForm::bump(1, vec![0.1, 0.0, 0.0], vec![1.2; 3]);
        let inp = input(b, u, ClosedForm::zero(1));
        let lat = KernelLattice::new(&inp.rho, 12).unwrap();
        let t = terms_at(&inp, 0.1, &lat, &HPoint::h1(0.2, -0.1, 0.3)).unwrap();
        assert!((t.c1_direct - t.c1_decomposed()).abs() < 1e-9, "{t:?}");
        assert!(t.b2.abs() < 1e-10);
    }
}

//! Difference quotients along dilated left translations and their Taylor limits.

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::field::Differentiable;
use crate::grid::{lp_norm_fn, BoxRegion, Extension, GridField, NormSpec};
use crate::group::{cc_distance_upper, FrameKind, HPoint};
use crate::report::ConvergenceReport;
use crate::scalar::Scalar;

/// Which quotient to form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuotientOrder {
    /// (f(p·δ_ε w) − f(p))/ε
    First,
    /// (f(p·δ_ε w) − f(p) − ε⟨∇^H f(p), w_H⟩)/ε²
    Second,
    /// (f(p·δ_ε w) − f(p·δ_ε(w_H, 0)))/ε
    Vertical1,
    /// (f(p·δ_ε w) − f(p·δ_ε(w_H, 0)))/ε²
    Vertical2,
}

impl QuotientOrder {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" | "first" => Ok(Self::First),
            "2" | "second" => Ok(Self::Second),
            "vertical1" => Ok(Self::Vertical1),
            "vertical2" => Ok(Self::Vertical2),
            _ => Err(LabError::InvalidParameter(format!("unknown quotient order `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::First => "first",
            Self::Second => "second",
            Self::Vertical1 => "vertical1",
            Self::Vertical2 => "vertical2",
        }
    }
}

/// Gauge |w_H| + 2√|w_N| of a direction.
pub fn direction_gauge<T: Scalar>(w: &HPoint<T>) -> T {
    w.gauge()
}

fn horizontal_part<T: Scalar>(w: &HPoint<T>) -> HPoint<T> {
    let mut c = w.clone();
    let k = 2 * w.n();
    c.coords_mut()[k] = T::zero();
    c
}

/// Checks ε(|w_H| + 2√|w_N|) < dist(A, ∂Ω) through the CC-neighbourhood box of A.
pub fn check_admissible<T: Scalar>(a: &BoxRegion<T>, omega: &BoxRegion<T>, w: &HPoint<T>, eps: T) -> Result<()> {
    if !(eps > T::zero()) {
        return Err(LabError::NonPositiveScale(eps.to_f64_lossy()));
    }
    let r = eps * direction_gauge(w);
    if !omega.contains_box(&a.cc_neighbourhood(r)) {
        return Err(LabError::Admissibility(format!(
            "ε = {eps} with gauge {} needs margin {r} around A inside Ω",
            direction_gauge(w)
        )));
    }
    Ok(())
}

/// Pointwise quotient of the given order.
pub fn quotient_at<T: Scalar, F: Differentiable<T> + ?Sized>(
    f: &F,
    order: QuotientOrder,
    w: &HPoint<T>,
    eps: T,
    p: &HPoint<T>,
) -> Result<T> {
    let shifted = f.value_at(&p.mul(&w.dilate_unchecked(eps))?)?;
    match order {
        QuotientOrder::First => Ok((shifted - f.value_at(p)?) / eps),
        QuotientOrder::Second => {
            let g = f.horizontal_gradient(p)?;
            let lin: T = g.iter().zip(w.w_h()).map(|(&a, &b)| a * b).sum();
            Ok((shifted - f.value_at(p)? - eps * lin) / (eps * eps))
        }
        QuotientOrder::Vertical1 | QuotientOrder::Vertical2 => {
            let base = f.value_at(&p.mul(&horizontal_part(w).dilate_unchecked(eps))?)?;
            let d = if order == QuotientOrder::Vertical1 { eps } else { eps * eps };
            Ok((shifted - base) / d)
        }
    }
}

/// Pointwise limit as ε → 0.
pub fn limit_at<T: Scalar, F: Differentiable<T> + ?Sized>(f: &F, order: QuotientOrder, w: &HPoint<T>, p: &HPoint<T>) -> Result<T> {
    let n = w.n();
    let wh = w.w_h();
    match order {
        QuotientOrder::First => Ok(f.horizontal_gradient(p)?.iter().zip(wh).map(|(&a, &b)| a * b).sum()),
        QuotientOrder::Second => {
            let h = f.horizontal_hessian(p)?;
            let mut q = T::zero();
            for i in 0..2 * n {
                for j in 0..2 * n {
                    q += h[i][j] * wh[i] * wh[j];
                }
            }
            Ok(T::lit(0.5) * q + w.w_n() * f.z_at(FrameKind::Left, 2 * n, p)?)
        }
        QuotientOrder::Vertical1 => Ok(T::zero()),
        QuotientOrder::Vertical2 => Ok(w.w_n() * f.z_at(FrameKind::Left, 2 * n, p)?),
    }
}

fn grid_over<T: Scalar>(a: &BoxRegion<T>, h: T, f: impl Fn(&HPoint<T>) -> Result<T> + Sync) -> Result<GridField<T>> {
    let probe = GridField::sample(a.clone(), h, Extension::Error, |_| T::zero())?;
    let m = probe.values().len();
    let vals = (0..m).into_par_iter().map(|k| f(&probe.node_point(k))).collect::<Result<Vec<T>>>()?;
    GridField::from_values(a.clone(), probe.shape().to_vec(), vals, Extension::Error)
}

/// First-order quotient sampled over A with spacing `h`.
pub fn quotient1<T: Scalar, F: Differentiable<T> + Sync + ?Sized>(
    f: &F,
    w: &HPoint<T>,
    eps: T,
    a: &BoxRegion<T>,
    omega: &BoxRegion<T>,
    h: T,
) -> Result<GridField<T>> {
    check_admissible(a, omega, w, eps)?;
    grid_over(a, h, |p| quotient_at(f, QuotientOrder::First, w, eps, p))
}

/// Second-order quotient sampled over A with spacing `h`.
pub fn quotient2<T: Scalar, F: Differentiable<T> + Sync + ?Sized>(
    f: &F,
    w: &HPoint<T>,
    eps: T,
    a: &BoxRegion<T>,
    omega: &BoxRegion<T>,
    h: T,
) -> Result<GridField<T>> {
    check_admissible(a, omega, w, eps)?;
    grid_over(a, h, |p| quotient_at(f, QuotientOrder::Second, w, eps, p))
}

/// Direction, ladder, order and the regions A ⊂ Ω.
#[derive(Clone, Debug)]
pub struct QuotientSpec<T: Scalar> {
    pub w: HPoint<T>,
    pub ladder: Vec<T>,
    pub order: QuotientOrder,
    pub norm: NormSpec<T>,
    pub omega: BoxRegion<T>,
    /// Midpoint cells per axis over A.
    pub cells: usize,
}

impl<T: Scalar> QuotientSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() || self.ladder.windows(2).any(|p| !(p[0] > p[1])) {
            return Err(LabError::InvalidParameter("ε ladder must be strictly decreasing".into()));
        }
        for &e in &self.ladder {
            check_admissible(&self.norm.region, &self.omega, &self.w, e)?;
        }
        Ok(())
    }
}

/// Right-hand side of the a-priori estimate for the given order, with norms
/// over the CC r-neighbourhood of A, r = ε·gauge(w).
pub fn a_priori_bound<T: Scalar, F: Differentiable<T> + Sync + ?Sized>(
    f: &F,
    order: QuotientOrder,
    w: &HPoint<T>,
    eps: T,
    spec: &NormSpec<T>,
    cells: usize,
) -> Result<T> {
    let n = w.n();
    let region = spec.region.cc_neighbourhood(eps * direction_gauge(w));
    let cells = vec![cells; region.dim()];
    let wh: T = w.w_h().iter().map(|&v| v * v).sum::<T>().sqrt();
    let wn = w.w_n().abs();
    let grad = || {
        lp_norm_fn(&region, &cells, spec.s, |p| Ok(f.horizontal_gradient(p)?.iter().map(|&v| v * v).sum::<T>().sqrt()))
    };
    let tf = || lp_norm_fn(&region, &cells, spec.s, |p| f.z_at(FrameKind::Left, 2 * n, p));
    match order {
        QuotientOrder::First => Ok(direction_gauge(w) * grad()?),
        QuotientOrder::Vertical1 => Ok(T::lit(2.0) * wn.sqrt() * grad()?),
        QuotientOrder::Vertical2 => Ok(wn * tf()?),
        QuotientOrder::Second => {
            let hess = lp_norm_fn(&region, &cells, spec.s, |p| {
                Ok(f.horizontal_hessian(p)?.iter().flatten().map(|&v| v * v).sum::<T>().sqrt())
            })?;
            Ok(wn * tf()? + wh * wh * hess)
        }
    }
}

/// Error table along the ladder: ‖quotient − limit‖_{L^s(A)}, the quotient
/// norm and its a-priori bound with 5% slack.
pub fn quotient_limit_error<F: Differentiable<f64> + Sync + ?Sized>(f: &F, spec: &QuotientSpec<f64>) -> Result<ConvergenceReport> {
    spec.validate()?;
    let slack = 0.05;
    let mut rep = ConvergenceReport::new("quotients", "eps", &["eps", "error", "quotient_norm", "bound", "pass"]);
    rep.tolerances.insert("bound_slack".into(), slack);
    rep.tolerances.insert("rate_low".into(), 0.9);
    rep.tolerances.insert("rate_high".into(), 1.1);
    let region = &spec.norm.region;
    let cells = vec![spec.cells; region.dim()];
    let rows = spec
        .ladder
        .par_iter()
        .map(|&eps| {
            let err = lp_norm_fn(region, &cells, spec.norm.s, |p| {
                Ok(quotient_at(f, spec.order, &spec.w, eps, p)? - limit_at(f, spec.order, &spec.w, p)?)
            })?;
            let qn = lp_norm_fn(region, &cells, spec.norm.s, |p| quotient_at(f, spec.order, &spec.w, eps, p))?;
            let bound = a_priori_bound(f, spec.order, &spec.w, eps, &spec.norm, spec.cells)?;
            Ok((eps, err, qn, bound))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all = true;
    for (eps, err, qn, bound) in rows {
        let pass = qn <= bound * (1.0 + slack) + 1e-12;
        all &= pass;
        rep.push_row(vec![eps, err, qn, bound, if pass { 1.0 } else { 0.0 }]);
    }
    rep.check("a_priori_bound", all, format!("‖quotient‖ ≤ bound·(1 + {slack}) at every ε"));
    let errs = rep.column("error").expect("column");
    if errs.iter().all(|&e| e > 1e-12) && errs.len() >= 4 {
        rep.fit("error")?;
    }
    rep.check("eventually_monotone", eventually_monotone(&errs), "error sequence is eventually nonincreasing");
    Ok(rep)
}

/// True if the tail after the first descent is nonincreasing, up to round-off.
pub fn eventually_monotone(v: &[f64]) -> bool {
    if v.len() < 2 {
        return true;
    }
    let tol = |a: f64| 1e-12 + 1e-9 * a.abs();
    let last = v.len() - 1;
    let mut start = last;
    while start > 0 && v[start] <= v[start - 1] + tol(v[start - 1]) {
        start -= 1;
    }
    start < last
}

/// Sup over horizontal Hessians (Frobenius) of f on samples of `region`:
/// an upper estimate of Lip(∇^H f) for the CC distance.
pub fn lipschitz_estimate<F: Differentiable<f64> + Sync + ?Sized>(f: &F, region: &BoxRegion<f64>, cells: usize) -> Result<f64> {
    let (pts, _) = region.midpoints(&vec![cells; region.dim()]);
    let vals = pts
        .par_iter()
        .map(|p| Ok(f.horizontal_hessian(p)?.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// Pointwise |quotient2| ≤ Lip(∇^H f)·U(0, w)² on the given samples.
/// Returns the number of violations.
pub fn linfty_bound_check<F: Differentiable<f64> + Sync + ?Sized>(
    f: &F,
    samples: &[HPoint<f64>],
    w: &HPoint<f64>,
    eps: f64,
    lip: f64,
) -> Result<usize> {
    let u = cc_distance_upper(&HPoint::origin(w.n()), w)?;
    let rhs = lip * u * u;
    let bad = samples
        .par_iter()
        .map(|p| Ok(quotient_at(f, QuotientOrder::Second, w, eps, p)?.abs() > rhs * (1.0 + 1e-9) + 1e-12))
        .collect::<Result<Vec<bool>>>()?;
    Ok(bad.into_iter().filter(|&b| b).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ClosedForm;

    fn w(x: f64, y: f64, t: f64) -> HPoint<f64> {
        HPoint::h1(x, y, t)
    }

    #[test]
    fn closed_forms() {
        let t = ClosedForm::<f64>::coordinate(1, 2);
        let x2 = ClosedForm::<f64>::polynomial(1, vec![(1.0, vec![2, 0, 0])]);
        let p = w(0.3, -0.7, 0.2);
        for eps in [0.5, 0.1, 0.01] {
            let q = quotient_at(&t, QuotientOrder::First, &w(1.0, 0.0, 0.0), eps, &p).unwrap();
            assert!((q - 2.0 * p.y(0)).abs() < 1e-12);
            let q = quotient_at(&t, QuotientOrder::First, &w(0.0, 0.0, 1.0), eps, &p).unwrap();
            assert!((q - eps).abs() < 1e-12);
            let q = quotient_at(&t, QuotientOrder::Second, &w(0.0, 0.0, 1.0), eps, &p).unwrap();
            assert!((q - 1.0).abs() < 1e-10);
            let q = quotient_at(&x2, QuotientOrder::Second, &w(1.0, 0.0, 0.0), eps, &p).unwrap();
            assert!((q - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn admissibility_enforced() {
        let a = BoxRegion::cube(1, -0.5, 0.5).unwrap();
        let omega = BoxRegion::cube(1, -1.0, 1.0).unwrap();
        assert!(check_admissible(&a, &omega, &w(1.0, 0.0, 0.0), 0.2).is_ok());
        assert!(check_admissible(&a, &omega, &w(1.0, 0.0, 0.0), 0.6).is_err());
    }

    #[test]
    fn monotone_tail() {
        assert!(eventually_monotone(&[1.0, 2.0, 1.0, 0.5]));
        assert!(!eventually_monotone(&[1.0, 0.5, 0.7]));
    }
}

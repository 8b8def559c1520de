//! Oscillating generating functions ψ(w, t) = φ(w/β) g(t/δ) and their norm scalings.

use rayon::prelude::*;

use crate::contact::{contact_from_psi, GeneratingFunction, VectorField};
use crate::error::{LabError, Result};
use crate::field::{frame_apply, ClosedForm, ScalarField};
use crate::grid::BoxRegion;
use crate::group::{FrameKind, HPoint};
use crate::jet::Jet;
use crate::report::ConvergenceReport;
use crate::scalar::Scalar;
use std::sync::Arc;

/// ∫₋₁¹ (1 − u²)⁴ du.
const QUARTIC_MASS: f64 = 256.0 / 315.0;

/// The profile h(s) = c (1 − (s/a)²)⁴ on (−a, a) with unit mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuarticProfile<T: Scalar> {
    pub a: T,
}

impl<T: Scalar> QuarticProfile<T> {
    pub fn height(&self) -> T {
        T::one() / (self.a * T::lit(QUARTIC_MASS))
    }

    /// [h, h', h'', h'''] at s.
    pub fn derivs(&self, s: T) -> [T; 4] {
        let u = s / self.a;
        if u.abs() >= T::one() {
            return [T::zero(); 4];
        }
        let c = self.height();
        let a = self.a;
        let v = T::one() - u * u;
        let (v2, v3) = (v * v, v * v * v);
        let h = c * v2 * v2;
        let h1 = T::lit(-8.0) * c * u * v3 / a;
        let h2 = T::lit(-8.0) * c * v2 * (T::one() - T::lit(7.0) * u * u) / (a * a);
        // d/du of v²(1 − 7u²) = −4u v (1 − 7u²) − 14 u v²
        let dv = T::lit(-4.0) * u * v * (T::one() - T::lit(7.0) * u * u) - T::lit(14.0) * u * v2;
        let h3 = T::lit(-8.0) * c * dv / (a * a * a);
        [h, h1, h2, h3]
    }

    pub fn jet(&self, x: &Jet<T>) -> Jet<T> {
        x.compose(self.derivs(x.value()))
    }

    /// ‖h'‖_{L¹} = 2 h(0).
    pub fn d1_l1(&self) -> T {
        T::lit(2.0) * self.height()
    }

    /// ‖h''‖_{L¹} = 4 max|h'|, attained at s = a/√7.
    pub fn d2_l1(&self) -> T {
        let u = T::one() / T::lit(7.0).sqrt();
        let v = T::one() - u * u;
        T::lit(4.0) * T::lit(8.0) * self.height() * u * v * v * v / self.a
    }
}

/// Parameters of the oscillating family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OscillationParams<T: Scalar> {
    pub n: usize,
    /// Distinguished horizontal index i (0-based: X's then Y's).
    pub i: usize,
    /// φ(w) = Π_k h(w_k) with half-width `phi.a`.
    pub phi: QuarticProfile<T>,
    /// g(t) with support (−1, 1).
    pub g: QuarticProfile<T>,
    pub beta: T,
    pub delta: T,
}

impl<T: Scalar> OscillationParams<T> {
    /// φ supported in the cube of half-width 0.95/√(2n) (inside the unit ball), i = 0.
    pub fn standard(n: usize, beta: T, delta: T) -> Result<Self> {
        let a = T::lit(0.95) / T::of(2 * n).sqrt();
        let p = Self { n, i: 0, phi: QuarticProfile { a }, g: QuarticProfile { a: T::one() }, beta, delta };
        p.validate()?;
        Ok(p)
    }

    /// The coupled choice δ = Mβ².
    pub fn coupled(n: usize, beta: T) -> Result<Self> {
        let mut p = Self::standard(n, beta, T::lit(0.5))?;
        p.delta = p.m() * beta * beta;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.i >= 2 * self.n {
            return Err(LabError::InvalidParameter(format!("index i = {} invalid for n = {}", self.i, self.n)));
        }
        if !(self.beta > T::zero()) || !(self.delta > T::zero()) {
            return Err(LabError::NonPositiveScale(self.beta.min(self.delta).to_f64_lossy()));
        }
        if self.beta * self.phi.a * T::of(2 * self.n).sqrt() >= T::one() || self.delta >= T::one() {
            return Err(LabError::SupportViolation(format!(
                "scaled support β = {}, δ = {} leaves B(0,1) × (−1,1)",
                self.beta, self.delta
            )));
        }
        Ok(())
    }

    /// ‖∂_{w_j} φ‖_{L¹}.
    pub fn dphi_l1(&self) -> T {
        self.phi.d1_l1()
    }

    /// ‖∂_{w_k}∂_{w_j} φ‖_{L¹}.
    pub fn ddphi_l1(&self, j: usize, k: usize) -> T {
        if j == k {
            self.phi.d2_l1()
        } else {
            self.phi.d1_l1() * self.phi.d1_l1()
        }
    }

    pub fn f1(&self) -> T {
        T::one() + T::of(2 * self.n) * self.dphi_l1()
    }

    pub fn f2(&self) -> T {
        let m = 2 * self.n;
        let mut s = self.f1();
        for j in 0..m {
            for k in 0..m {
                s += self.ddphi_l1(j, k);
            }
        }
        s
    }

    pub fn g1(&self) -> T {
        self.g.d1_l1()
    }

    pub fn g2(&self) -> T {
        self.g.d2_l1()
    }

    /// M = 4G₂ / (‖∂_{w_i}φ‖ G₁).
    pub fn m(&self) -> T {
        T::lit(4.0) * self.g2() / (self.dphi_l1() * self.g1())
    }

    /// The support box [−βa, βa]^{2n} × [−δ, δ].
    pub fn support(&self) -> BoxRegion<T> {
        let m = 2 * self.n;
        let r = self.beta * self.phi.a;
        let mut lo = vec![-r; m + 1];
        let mut hi = vec![r; m + 1];
        lo[m] = -self.delta;
        hi[m] = self.delta;
        BoxRegion::new(lo, hi).expect("positive scales")
    }

    fn scaled(&self, p: &HPoint<T>) -> (Vec<[T; 4]>, [T; 4]) {
        let m = 2 * self.n;
        let phis = (0..m).map(|k| self.phi.derivs(p.coord(k) / self.beta)).collect();
        (phis, self.g.derivs(p.t() / self.delta))
    }

    fn jw(&self, p: &HPoint<T>, j: usize) -> T {
        let n = self.n;
        if j < n {
            -p.coord(n + j)
        } else {
            p.coord(j - n)
        }
    }

    fn dphi(phis: &[[T; 4]], orders: &[usize]) -> T {
        let mut v = T::one();
        for (k, d) in phis.iter().enumerate() {
            let o = orders.iter().filter(|&&x| x == k).count();
            v *= d[o];
        }
        v
    }

    fn c_jk(&self, j: usize, k: usize) -> T {
        let n = self.n;
        if j < n && k == j + n {
            -T::one()
        } else if j >= n && j < 2 * n && k + n == j {
            T::one()
        } else {
            T::zero()
        }
    }

    /// Z_jψ from the closed-form chain-rule expression.
    pub fn z_formula(&self, j: usize, p: &HPoint<T>) -> T {
        let (phis, g) = self.scaled(p);
        let two = T::lit(2.0);
        Self::dphi(&phis, &[j]) * g[0] / self.beta - two / self.delta * self.jw(p, j) * Self::dphi(&phis, &[]) * g[1]
    }

    /// Z_kZ_jψ from the closed-form chain-rule expression.
    pub fn zz_formula(&self, k: usize, j: usize, p: &HPoint<T>) -> T {
        let (phis, g) = self.scaled(p);
        let (b, d) = (self.beta, self.delta);
        let two = T::lit(2.0);
        let phi0 = Self::dphi(&phis, &[]);
        Self::dphi(&phis, &[k, j]) * g[0] / (b * b) - two / d * self.c_jk(j, k) * phi0 * g[1]
            - two / (b * d) * self.jw(p, j) * Self::dphi(&phis, &[k]) * g[1]
            - two / (b * d) * self.jw(p, k) * Self::dphi(&phis, &[j]) * g[1]
            + T::lit(4.0) / (d * d) * self.jw(p, j) * self.jw(p, k) * phi0 * g[2]
    }

    /// TZ_iψ from the closed-form chain-rule expression.
    pub fn tz_formula(&self, i: usize, p: &HPoint<T>) -> T {
        let (phis, g) = self.scaled(p);
        let (b, d) = (self.beta, self.delta);
        Self::dphi(&phis, &[i]) * g[1] / (b * d) - T::lit(2.0) / (d * d) * self.jw(p, i) * Self::dphi(&phis, &[]) * g[2]
    }
}

/// ψ(w, t) = φ(w/β) g(t/δ) as a jet-evaluable field.
pub fn oscillating_psi<T: Scalar>(params: &OscillationParams<T>) -> ClosedForm<T> {
    let p = *params;
    ClosedForm::new(p.n, format!("oscillating({},{})", p.beta, p.delta), move |x| {
        let m = 2 * p.n;
        let mut acc = p.g.jet(&(&x[m] / p.delta));
        for xk in x.iter().take(m) {
            acc = &acc * &p.phi.jet(&(xk / p.beta));
        }
        acc
    })
}

/// The frame component of b(ψ) carrying X_iψ (or Y_iψ) for horizontal index i.
pub fn carrier_component(n: usize, i: usize) -> usize {
    if i < n {
        n + i
    } else {
        i - n
    }
}

/// ∫_K |∇_{R^N} b_c(ψ)| for the contact field of ψ (the total variation of a smooth field).
pub fn bv_lower_bound<T: Scalar>(psi: Arc<dyn ScalarField<T>>, c: usize, region: &BoxRegion<T>, cells: &[usize]) -> Result<T> {
    let n = psi.n();
    if c > 2 * n {
        return Err(LabError::IndexOutOfRange { index: c, bound: 2 * n + 1 });
    }
    let b = contact_from_psi(GeneratingFunction::new("psi", psi));
    crate::grid::lp_norm_fn(region, cells, T::one(), |p| {
        let j = b.jets(T::zero(), p, 1).swap_remove(c);
        Ok((0..p.dim()).map(|k| j.grad(k) * j.grad(k)).sum::<T>().sqrt())
    })
}

/// All L¹ quantities of one ladder point.
#[derive(Clone, Debug, PartialEq)]
pub struct OscillationNorms<T: Scalar> {
    pub l1: T,
    pub z: Vec<T>,
    pub zz: Vec<Vec<T>>,
    pub tz: T,
    pub bv: T,
}

impl<T: Scalar> OscillationNorms<T> {
    pub fn w1(&self) -> T {
        self.z.iter().copied().sum()
    }

    pub fn w2(&self) -> T {
        self.zz.iter().flatten().copied().sum()
    }

    /// ‖ψ‖_{W^{2,1}_H}.
    pub fn sobolev2(&self) -> T {
        self.l1 + self.w1() + self.w2()
    }
}

/// Midpoint quadrature of every norm over the support box with `cells` per axis.
pub fn oscillation_norms<T: Scalar>(params: &OscillationParams<T>, cells: usize) -> Result<OscillationNorms<T>> {
    params.validate()?;
    let n = params.n;
    let m = 2 * n;
    let psi = oscillating_psi(params);
    let region = params.support();
    let (pts, vol) = region.midpoints(&vec![cells; m + 1]);
    let carrier = carrier_component(n, params.i);
    let rows: Vec<Vec<T>> = pts
        .par_iter()
        .map(|p| {
            let c = p.coords();
            let jp = psi.jet(p, 2);
            let mut out = Vec::with_capacity(3 + m + m * m);
            out.push(jp.value().abs());
            let zj: Vec<Jet<T>> = (0..=m).map(|j| frame_apply(&jp, FrameKind::Left, n, j, c)).collect();
            for z in zj.iter().take(m) {
                out.push(z.value().abs());
            }
            for k in 0..m {
                for z in zj.iter().take(m) {
                    out.push(frame_apply(z, FrameKind::Left, n, k, c).value().abs());
                }
            }
            out.push(frame_apply(&zj[params.i], FrameKind::Left, n, m, c).value().abs());
            // b_carrier is Y_iψ or −X_iψ; its Euclidean gradient
            let src = if carrier < n { n + carrier } else { carrier - n };
            let bj = frame_apply(&jp, FrameKind::Left, n, src, c);
            out.push((0..=m).map(|k| bj.grad(k) * bj.grad(k)).sum::<T>().sqrt());
            out
        })
        .collect();
    let width = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut sums = vec![T::zero(); width];
    for r in &rows {
        for (s, v) in sums.iter_mut().zip(r) {
            *s += *v;
        }
    }
    for s in sums.iter_mut() {
        *s *= vol;
    }
    let z = sums[1..1 + m].to_vec();
    let zz = (0..m).map(|k| sums[1 + m + k * m..1 + m + (k + 1) * m].to_vec()).collect();
    Ok(OscillationNorms { l1: sums[0], z, zz, tz: sums[1 + m + m * m], bv: sums[2 + m + m * m] })
}

/// The β-ladder study with δ = Mβ².
pub fn scaling_study(n: usize, betas: &[f64], cells: usize) -> Result<ConvergenceReport> {
    if betas.len() < 4 || betas.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(LabError::InvalidParameter("β ladder needs at least 4 strictly decreasing values".into()));
    }
    let nn = n as i32;
    let mut rep = ConvergenceReport::new(
        "counterexample",
        "beta",
        &[
            "beta", "delta", "L1", "W1", "W2", "TZ_i", "bv_lower", "sobolev2", "tz_lower", "bound_pass", "tz_exponent",
            "sobolev2_exponent",
        ],
    );
    let slack = 0.05;
    rep.tolerances.insert("bound_slack".into(), slack);
    let mut all_bounds = true;
    let mut half_ok = true;
    let mut mass_ok = true;
    for &b in betas {
        let p = OscillationParams::<f64>::coupled(n, b)?;
        let r = oscillation_norms(&p, cells)?;
        let (beta, delta) = (p.beta, p.delta);
        let m = 2 * n;
        let mut pass = (r.l1 - beta.powi(2 * nn) * delta).abs() <= 1e-3 * r.l1;
        mass_ok &= pass;
        let zb = beta.powi(2 * nn - 1) * delta * p.f1() + 2.0 * beta.powi(2 * nn + 1) * p.g1();
        let zzb = beta.powi(2 * nn - 2) * delta * p.f2()
            + 2.0 * beta.powi(2 * nn) * (p.g1() + 2.0 * p.f1() * p.g1())
            + 4.0 * beta.powi(2 * nn + 2) / delta * p.g2();
        let lead = beta.powi(2 * nn - 1) * p.dphi_l1() * p.g1();
        let neg = 2.0 * beta.powi(2 * nn + 1) / delta * p.g2();
        let tz_lower = lead - neg;
        half_ok &= ((neg / lead) - 0.5).abs() <= 0.5 * slack;
        for j in 0..m {
            pass &= r.z[j] <= zb * (1.0 + slack);
            for k in 0..m {
                pass &= r.zz[k][j] <= zzb * (1.0 + slack);
            }
        }
        pass &= r.tz >= tz_lower * (1.0 - slack);
        pass &= r.bv >= r.tz * (1.0 - 1e-9);
        all_bounds &= pass;
        rep.push_row(vec![
            beta,
            delta,
            r.l1,
            r.w1(),
            r.w2(),
            r.tz,
            r.bv,
            r.sobolev2(),
            tz_lower,
            if pass { 1.0 } else { 0.0 },
            f64::NAN,
            f64::NAN,
        ]);
    }
    let tz = rep.fit("TZ_i")?;
    let sob = rep.fit("sobolev2")?;
    rep.fit("L1")?;
    rep.fit("W2")?;
    rep.fit("bv_lower")?;
    let (ti, si) = (rep.columns.len() - 2, rep.columns.len() - 1);
    for row in rep.rows.iter_mut() {
        row[ti] = tz.rate;
        row[si] = sob.rate;
    }
    let target = (2 * n - 1) as f64;
    rep.check(
        "tz_exponent",
        (tz.rate - target).abs() <= 0.1,
        format!("fitted exponent {:.6}, target {target} ± 0.1", tz.rate),
    );
    rep.check(
        "sobolev2_exponent",
        sob.rate >= (2 * n) as f64 - 0.1,
        format!("fitted exponent {:.6} ≥ {}", sob.rate, (2 * n) as f64 - 0.1),
    );
    rep.check("mass", mass_ok, "‖ψ‖₁ = β^{2n}δ within 1e-3 relative");
    rep.check("norm_bounds", all_bounds, "displayed inequalities with 5% slack at every β");
    rep.check("half_lead", half_ok, "negative term equals half the leading term");
    let ratio = |r: &Vec<f64>| r[6] / r[7];
    let increasing = rep.rows.windows(2).all(|w| ratio(&w[1]) > ratio(&w[0]));
    rep.check("bv_ratio_increasing", increasing, "bv_lower / ‖ψ‖_{W^{2,1}_H} increases as β decreases");
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Differentiable;

    #[test]
    fn profile_constants() {
        let h = QuarticProfile { a: 0.6f64 };
        let cells = 4000;
        let dx = 1.2 / cells as f64;
        let (mut m, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for k in 0..cells {
            let s = -0.6 + (k as f64 + 0.5) * dx;
            let d = h.derivs(s);
            m += d[0] * dx;
            d1 += d[1].abs() * dx;
            d2 += d[2].abs() * dx;
        }
        assert!((m - 1.0).abs() < 1e-8);
        assert!((d1 - h.d1_l1()).abs() < 1e-5 * d1);
        assert!((d2 - h.d2_l1()).abs() < 1e-4 * d2);
        let s = 0.17;
        let e = 1e-5;
        assert!(((h.derivs(s + e)[2] - h.derivs(s - e)[2]) / (2.0 * e) - h.derivs(s)[3]).abs() < 1e-3);
    }

    #[test]
    fn formulas_match_jets() {
        let p = OscillationParams::<f64>::coupled(1, 0.3).unwrap();
        let psi = oscillating_psi(&p);
        let q = HPoint::h1(0.05, -0.08, 0.1);
        for j in 0..2 {
            let a = psi.z_at(FrameKind::Left, j, &q).unwrap();
            assert!((a - p.z_formula(j, &q)).abs() < 1e-10 * (1.0 + a.abs()));
            for k in 0..2 {
                let a = psi.zz_at(k, j, &q).unwrap();
                assert!((a - p.zz_formula(k, j, &q)).abs() < 1e-9 * (1.0 + a.abs()));
            }
            let a = psi.zz_at(2, j, &q).unwrap();
            assert!((a - p.tz_formula(j, &q)).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn support_is_enforced() {
        assert!(OscillationParams::<f64>::standard(1, 2.0, 0.1).is_err());
        let p = OscillationParams::<f64>::standard(1, 0.3, 0.2).unwrap();
        assert_eq!(oscillating_psi(&p).value(&HPoint::h1(0.3, 0.0, 0.0)), 0.0);
    }
}

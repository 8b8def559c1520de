//! The symmetrized deformation of a field: defining and explicit integral
//! formulas, the J-term, and the (r, s) bound for contact fields.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::{contact_from_psi, FrameField, GeneratingFunction, VectorField};
use crate::error::{LabError, Result};
use crate::field::{frame_apply, ClosedForm, ScalarField};
use crate::grid::{boundary_sup, conjugate, BoxRegion};
use crate::group::{FrameKind, HPoint};
use crate::mollifier::gauss_legendre;
use crate::scalar::Scalar;

/// b, f, g and the quadrature used for the deformation integrals.
#[derive(Clone)]
pub struct DeformationInput<T: Scalar> {
    pub b: Arc<dyn VectorField<T>>,
    pub f: Arc<dyn ScalarField<T>>,
    pub g: Arc<dyn ScalarField<T>>,
    pub region: BoxRegion<T>,
    /// Cells per axis of the composite Gauss–Legendre rule.
    pub cells: usize,
    /// Nodes per cell and axis.
    pub order: usize,
}

impl<T: Scalar> DeformationInput<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.region.n();
        if self.b.n() != n || self.f.n() != n || self.g.n() != n {
            return Err(LabError::DimensionMismatch { expected: n, found: self.b.n() });
        }
        if self.cells == 0 || self.order == 0 {
            return Err(LabError::InvalidParameter("quadrature needs positive cells and order".into()));
        }
        for (name, h) in [("f", &self.f), ("g", &self.g)] {
            if boundary_sup(h.as_ref(), &self.region, 13) > T::lit(1e-12) {
                return Err(LabError::SupportViolation(format!("{name} does not vanish on the box boundary")));
            }
        }
        Ok(())
    }

    fn with_cells(&self, cells: usize) -> Self {
        Self { cells, ..self.clone() }
    }
}

/// Composite tensor Gauss–Legendre nodes and weights over `region`.
pub fn gauss_rule<T: Scalar>(region: &BoxRegion<T>, cells: usize, order: usize) -> (Vec<HPoint<T>>, Vec<T>) {
    let dim = region.dim();
    let gl = gauss_legendre(order);
    let axes: Vec<Vec<(T, T)>> = (0..dim)
        .map(|k| {
            let h = region.side(k) / T::of(cells);
            let mut v = Vec::with_capacity(cells * order);
            for c in 0..cells {
                let left = region.lower()[k] + h * T::of(c);
                for &(x, w) in &gl {
                    v.push((left + h * T::lit(0.5 * (x + 1.0)), h * T::lit(0.5 * w)));
                }
            }
            v
        })
        .collect();
    let per = cells * order;
    let total = per.pow(dim as u32);
    let mut pts = Vec::with_capacity(total);
    let mut wts = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut c = vec![T::zero(); dim];
        let mut w = T::one();
        for k in (0..dim).rev() {
            let (x, wk) = axes[k][idx % per];
            idx /= per;
            c[k] = x;
            w *= wk;
        }
        pts.push(HPoint::from_coords(region.n(), &c).expect("box dimension"));
        wts.push(w);
    }
    (pts, wts)
}

/// Pointwise frame data of b, f, g.
struct Local<T> {
    zf: Vec<T>,
    zg: Vec<T>,
    lap_f: T,
    lap_g: T,
    b: Vec<T>,
    /// zb[i][j] = Z_i b_j for i, j < N.
    zb: Vec<Vec<T>>,
}

fn local<T: Scalar>(inp: &DeformationInput<T>, p: &HPoint<T>) -> Local<T> {
    let n = inp.region.n();
    let big = 2 * n + 1;
    let c = p.coords();
    let firsts = |h: &Arc<dyn ScalarField<T>>| {
        let jet = h.jet(p, 2);
        let z: Vec<_> = (0..big).map(|i| frame_apply(&jet, FrameKind::Left, n, i, c)).collect();
        let lap = (0..2 * n).map(|i| frame_apply(&z[i], FrameKind::Left, n, i, c).value()).sum();
        (z.iter().map(|j| j.value()).collect::<Vec<T>>(), lap)
    };
    let (zf, lap_f) = firsts(&inp.f);
    let (zg, lap_g) = firsts(&inp.g);
    let bj = inp.b.jets(T::zero(), p, 1);
    let b = bj.iter().map(|j| j.value()).collect();
    let zb = (0..big).map(|i| bj.iter().map(|j| frame_apply(j, FrameKind::Left, n, i, c).value()).collect()).collect();
    Local { zf, zg, lap_f, lap_g, b, zb }
}

/// Integrands at one point: (defining, symmetric part, J-term).
fn integrands<T: Scalar>(n: usize, l: &Local<T>) -> (T, T, T) {
    let h = 2 * n;
    let half = T::lit(0.5);
    let df_b: T = (0..=h).map(|j| l.b[j] * l.zf[j]).sum();
    let dg_b: T = (0..=h).map(|j| l.b[j] * l.zg[j]).sum();
    let div: T = (0..h).map(|j| l.zb[j][j]).sum::<T>() + l.zb[h][h];
    let dot: T = (0..h).map(|i| l.zf[i] * l.zg[i]).sum();
    let defining = -half * (df_b * l.lap_g + dg_b * l.lap_f - div * dot);
    let mut sym = T::zero();
    for i in 0..h {
        for j in 0..h {
            sym += half * (l.zb[i][j] + l.zb[j][i]) * l.zf[i] * l.zg[j];
        }
    }
    let four = T::lit(4.0);
    let mut jt = T::zero();
    for i in 0..h {
        let jb = if i < n { -l.b[n + i] } else { l.b[i - n] };
        let res = l.zb[i][h] + four * jb;
        jt += res * (l.zg[h] * l.zf[i] + l.zf[h] * l.zg[i]);
    }
    (defining, sym, half * jt)
}

/// Quadrature sums of the defining formula, the symmetric part, the J-term and ∫|J-term|.
fn sums<T: Scalar>(inp: &DeformationInput<T>) -> [T; 4] {
    let n = inp.region.n();
    let (pts, wts) = gauss_rule(&inp.region, inp.cells, inp.order);
    let parts: Vec<[T; 4]> = pts
        .par_iter()
        .zip(wts.par_iter())
        .map(|(p, &w)| {
            let (d, s, j) = integrands(n, &local(inp, p));
            [w * d, w * s, w * j, w * j.abs()]
        })
        .collect();
    parts.into_iter().fold([T::zero(); 4], |mut acc, v| {
        for k in 0..4 {
            acc[k] += v[k];
        }
        acc
    })
}

/// −½∫[df(b)Δ^H g + dg(b)Δ^H f − div b ⟨∇^H f, ∇^H g⟩].
pub fn dsym_defining<T: Scalar>(inp: &DeformationInput<T>) -> Result<T> {
    inp.validate()?;
    Ok(sums(inp)[0])
}

/// The explicit formula split into its symmetric-gradient and J parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExplicitParts<T> {
    pub symmetric: T,
    pub j_term: T,
    /// ∫ of the absolute J integrand.
    pub j_term_norm: T,
}

impl<T: Scalar> ExplicitParts<T> {
    pub fn total(&self) -> T {
        self.symmetric + self.j_term
    }
}

/// ∫Σ ½(Z_ib_j + Z_jb_i)Z_if Z_jg + ½∫⟨∇^H b_N + 4J(b), Tg∇^H f + Tf∇^H g⟩.
pub fn dsym_explicit<T: Scalar>(inp: &DeformationInput<T>) -> Result<ExplicitParts<T>> {
    inp.validate()?;
    let s = sums(inp);
    Ok(ExplicitParts { symmetric: s[1], j_term: s[2], j_term_norm: s[3] })
}

/// L^p norm over the quadrature rule (max for p = ∞).
fn weighted_norm<T: Scalar>(vals: &[T], wts: &[T], p: T) -> T {
    if p.is_infinite() {
        return vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    }
    vals.iter().zip(wts).map(|(v, &w)| w * v.abs().powf(p)).sum::<T>().powf(T::one() / p)
}

/// c = Σ_{i,j} ‖Z_ib_j‖_{L^{s'}} and ‖|∇^H f|‖_{L^r}, ‖|∇^H g|‖_{L^r} with r = 2(s')'.
pub fn deformation_bound_terms<T: Scalar>(inp: &DeformationInput<T>, s_dual: T) -> Result<(T, T, T)> {
    if !(s_dual >= T::one()) {
        return Err(LabError::InvalidParameter(format!("exponent s' = {s_dual} must be at least 1")));
    }
    let n = inp.region.n();
    let h = 2 * n;
    let r = T::lit(2.0) * conjugate(s_dual);
    let (pts, wts) = gauss_rule(&inp.region, inp.cells, inp.order);
    let locs: Vec<Local<T>> = pts.par_iter().map(|p| local(inp, p)).collect();
    let mut c = T::zero();
    for i in 0..h {
        for j in 0..h {
            let v: Vec<T> = locs.iter().map(|l| l.zb[i][j]).collect();
            c += weighted_norm(&v, &wts, s_dual);
        }
    }
    let grad = |pick: &dyn Fn(&Local<T>) -> &Vec<T>| -> Vec<T> {
        locs.iter().map(|l| pick(l)[..h].iter().map(|v| *v * *v).sum::<T>().sqrt()).collect()
    };
    let nf = weighted_norm(&grad(&|l| &l.zf), &wts, r);
    let ng = weighted_norm(&grad(&|l| &l.zg), &wts, r);
    Ok((c, nf, ng))
}

/// |dsym| ≤ c‖|∇^H f|‖_{L^r}‖|∇^H g|‖_{L^r} with 5% slack; refuses non-contact b.
pub fn deformation_bound_check<T: Scalar>(inp: &DeformationInput<T>, s_dual: T) -> Result<bool> {
    if !inp.b.is_contact() {
        return Err(LabError::NotContact);
    }
    let value = dsym_explicit(inp)?.total();
    let (c, nf, ng) = deformation_bound_terms(inp, s_dual)?;
    Ok(value.abs() <= c * nf * ng * T::lit(1.05))
}

/// One evaluation of both formulas with a quadrature-error estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformationRecord {
    pub value_defining: f64,
    pub value_explicit: f64,
    pub symmetric_part: f64,
    pub j_term: f64,
    pub j_term_norm: f64,
    /// Largest change of either formula between the rule and one with half the cells.
    pub quadrature_tol: f64,
    pub contact: bool,
    /// c‖|∇^H f|‖‖|∇^H g|‖, present for contact b.
    pub bound_rhs: Option<f64>,
    pub formulas_agree: bool,
    pub bound_holds: Option<bool>,
    pub pass: bool,
}

/// Evaluates both formulas, the quadrature tolerance and, for contact b, the bound.
pub fn deformation_record<T: Scalar>(inp: &DeformationInput<T>, s_dual: T) -> Result<DeformationRecord> {
    inp.validate()?;
    let fine = sums(inp);
    let coarse = sums(&inp.with_cells(inp.cells.div_ceil(2)));
    let f64_of = |v: T| v.to_f64_lossy();
    let (def, expl) = (f64_of(fine[0]), f64_of(fine[1] + fine[2]));
    let tol = f64_of((fine[0] - coarse[0]).abs().max((fine[1] + fine[2] - coarse[1] - coarse[2]).abs()));
    let scale = def.abs().max(expl.abs());
    let formulas_agree = (def - expl).abs() <= 2.0 * tol + 1e-13 * scale.max(1e-300);
    let contact = inp.b.is_contact();
    let (bound_rhs, bound_holds) = if contact {
        let (c, nf, ng) = deformation_bound_terms(inp, s_dual)?;
        let rhs = f64_of(c * nf * ng);
        (Some(rhs), Some(expl.abs() <= 1.05 * rhs))
    } else {
        (None, None)
    };
    Ok(DeformationRecord {
        value_defining: def,
        value_explicit: expl,
        symmetric_part: f64_of(fine[1]),
        j_term: f64_of(fine[2]),
        j_term_norm: f64_of(fine[3]),
        quadrature_tol: tol,
        contact,
        bound_rhs,
        formulas_agree,
        bound_holds,
        pass: formulas_agree && bound_holds.unwrap_or(true),
    })
}

fn random_smooth(rng: &mut ChaCha8Rng, n: usize) -> ClosedForm<f64> {
    let dim = 2 * n + 1;
    let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let radii: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..0.9)).collect();
    let mut terms = vec![(rng.gen_range(0.5..1.5), vec![0u32; dim])];
    for k in 0..dim {
        let mut e = vec![0u32; dim];
        e[k] = 1;
        terms.push((rng.gen_range(-1.0..1.0), e));
    }
    ClosedForm::bump(n, center, radii).product(&ClosedForm::polynomial(n, terms))
}

/// Seeded random triples (b, f, g) on [−1.5, 1.5]^N; b contact or generic.
pub fn random_battery(seed: u64, count: usize, n: usize, contact: bool, cells: usize, order: usize) -> Vec<DeformationInput<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region = BoxRegion::cube(n, -1.5, 1.5).expect("valid box");
    (0..count)
        .map(|_| {
            let b: Arc<dyn VectorField<f64>> = if contact {
                Arc::new(contact_from_psi(GeneratingFunction::from_closed(random_smooth(&mut rng, n))))
            } else {
                let comps = (0..2 * n + 1).map(|_| random_smooth(&mut rng, n).into_arc()).collect();
                Arc::new(FrameField::new(comps).expect("component count"))
            };
            let f = random_smooth(&mut rng, n).into_arc();
            let g = random_smooth(&mut rng, n).into_arc();
            DeformationInput { b, f, g, region: region.clone(), cells, order }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_integrates_cubics_exactly() {
        let region: BoxRegion<f64> = BoxRegion::cube(1, -1.0, 2.0).unwrap();
        let (pts, wts) = gauss_rule(&region, 2, 2);
        let s: f64 = pts.iter().zip(&wts).map(|(p, w)| w * p.x(0).powi(3) * p.t().powi(2)).sum();
        // ∫x³ = 15/4, ∫t² = 3, ∫dy = 3
        assert!((s - 15.0 / 4.0 * 3.0 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_field_gives_zero() {
        let mut inp = random_battery(3, 1, 1, false, 6, 3).pop().unwrap();
        inp.b = Arc::new(FrameField::zero(1));
        assert_eq!(dsym_defining(&inp).unwrap(), 0.0);
        assert_eq!(dsym_explicit(&inp).unwrap().total(), 0.0);
    }
}

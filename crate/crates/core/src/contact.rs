//! Vector fields in the left-invariant frame, contact fields and their controls.

use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::field::{frame_apply, ClosedForm, PointJetField, ScalarField};
use crate::grid::{lp_norm_fn, BoxRegion};
use crate::group::{FrameKind, HPoint};
use crate::jet::Jet;
use crate::scalar::Scalar;

/// A (possibly time-dependent) vector field b = Σ b_j Z_j given by its frame components.
pub trait VectorField<T: Scalar>: Send + Sync {
    fn n(&self) -> usize;

    /// Coordinate jets of the frame components b_1..b_N at (τ, p).
    fn jets(&self, tau: T, p: &HPoint<T>, order: usize) -> Vec<Jet<T>>;

    fn is_contact(&self) -> bool {
        false
    }

    /// True when b does not depend on τ.
    fn is_autonomous(&self) -> bool {
        true
    }

    /// λ in b_N = −λψ for generated fields (4 for contact fields).
    fn vertical_factor(&self) -> Option<T> {
        None
    }

    fn components(&self, tau: T, p: &HPoint<T>) -> Vec<T> {
        self.jets(tau, p, 0).iter().map(|j| j.value()).collect()
    }

    /// Frame components and div b at (τ, p).
    fn sample(&self, tau: T, p: &HPoint<T>) -> (Vec<T>, T) {
        let n = self.n();
        let jets = self.jets(tau, p, 1);
        let div = jets.iter().enumerate().map(|(j, bj)| frame_apply(bj, FrameKind::Left, n, j, p.coords()).value()).sum();
        (jets.iter().map(|j| j.value()).collect(), div)
    }

    /// |b|² = Σ b_j² (the frame is orthonormal).
    fn norm_sq(&self, tau: T, p: &HPoint<T>) -> T {
        self.components(tau, p).iter().map(|&v| v * v).sum()
    }
}

/// A generating function ψ.
#[derive(Clone)]
pub struct GeneratingFunction<T: Scalar> {
    pub name: String,
    pub psi: Arc<dyn ScalarField<T>>,
}

impl<T: Scalar> std::fmt::Debug for GeneratingFunction<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GeneratingFunction({})", self.name)
    }
}

impl<T: Scalar> GeneratingFunction<T> {
    pub fn new(name: impl Into<String>, psi: Arc<dyn ScalarField<T>>) -> Self {
        Self { name: name.into(), psi }
    }

    pub fn from_closed(psi: ClosedForm<T>) -> Self {
        Self { name: psi.name().to_string(), psi: Arc::new(psi) }
    }

    /// Named presets: `linear-x`, `vertical-t`, `bump`, `oscillating(β,δ)`.
    pub fn preset(name: &str, n: usize) -> Result<Self> {
        let name = name.trim();
        match name {
            "linear-x" => Ok(Self::new(name, ClosedForm::coordinate(n, 0).into_arc())),
            "vertical-t" => Ok(Self::new(name, ClosedForm::coordinate(n, 2 * n).into_arc())),
            "bump" => Ok(Self::new(name, standard_bump(n).into_arc())),
            _ if name.starts_with("oscillating(") && name.ends_with(')') => {
                let inner = &name["oscillating(".len()..name.len() - 1];
                let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(LabError::InvalidParameter(format!("`{name}` needs two parameters")));
                }
                let parse = |s: &str| {
                    s.parse::<f64>().map_err(|_| LabError::InvalidParameter(format!("bad number `{s}` in `{name}`")))
                };
                let (beta, delta) = (parse(parts[0])?, parse(parts[1])?);
                let params = crate::counterexample::OscillationParams::standard(n, T::lit(beta), T::lit(delta))?;
                Ok(Self::new(name, Arc::new(crate::counterexample::oscillating_psi(&params))))
            }
            other => Err(LabError::InvalidParameter(format!("unknown generating-function preset `{other}`"))),
        }
    }
}

/// The smooth bump supported in the ellipsoid with semi-axes (1, …, 1, 1) around the origin.
pub fn standard_bump<T: Scalar>(n: usize) -> ClosedForm<T> {
    ClosedForm::bump(n, vec![T::zero(); 2 * n + 1], vec![T::one(); 2 * n + 1])
}

/// b = −λψT − J(∇^Hψ); contact exactly when λ = 4.
#[derive(Clone, Debug)]
pub struct GeneratedField<T: Scalar> {
    pub psi: GeneratingFunction<T>,
    pub lambda: T,
}

impl<T: Scalar> VectorField<T> for GeneratedField<T> {
    fn n(&self) -> usize {
        self.psi.psi.n()
    }

    fn jets(&self, _tau: T, p: &HPoint<T>, order: usize) -> Vec<Jet<T>> {
        let n = self.n();
        let c = p.coords();
        let jp = self.psi.psi.jet(p, order + 1);
        let mut out = Vec::with_capacity(2 * n + 1);
        for j in 0..n {
            out.push(frame_apply(&jp, FrameKind::Left, n, n + j, c));
        }
        for j in 0..n {
            out.push(-frame_apply(&jp, FrameKind::Left, n, j, c));
        }
        out.push(jp.truncate(order).scale(-self.lambda));
        out
    }

    fn is_contact(&self) -> bool {
        self.lambda == T::lit(4.0)
    }

    /// div b = −(4n + λ)Tψ, from a first-order jet of ψ.
    fn sample(&self, _tau: T, p: &HPoint<T>) -> (Vec<T>, T) {
        let n = self.n();
        let c = p.coords();
        let jp = self.psi.psi.jet(p, 1);
        let mut out = Vec::with_capacity(2 * n + 1);
        for j in 0..n {
            out.push(frame_apply(&jp, FrameKind::Left, n, n + j, c).value());
        }
        for j in 0..n {
            out.push(-frame_apply(&jp, FrameKind::Left, n, j, c).value());
        }
        out.push(-self.lambda * jp.value());
        let div = -(T::of(4 * n) + self.lambda) * jp.grad(2 * n);
        (out, div)
    }

    fn vertical_factor(&self) -> Option<T> {
        Some(self.lambda)
    }
}

/// The contact field generated by ψ.
pub fn contact_from_psi<T: Scalar>(psi: GeneratingFunction<T>) -> GeneratedField<T> {
    GeneratedField { psi, lambda: T::lit(4.0) }
}

/// The control b = −λψT − J(∇^Hψ).
pub fn perturbed_vertical<T: Scalar>(psi: GeneratingFunction<T>, lambda: T) -> GeneratedField<T> {
    GeneratedField { psi, lambda }
}

/// A field given directly by scalar frame components.
#[derive(Clone)]
pub struct FrameField<T: Scalar> {
    pub comps: Vec<Arc<dyn ScalarField<T>>>,
}

impl<T: Scalar> FrameField<T> {
    pub fn new(comps: Vec<Arc<dyn ScalarField<T>>>) -> Result<Self> {
        let n = comps.first().map(|c| c.n()).unwrap_or(0);
        if n == 0 || comps.len() != 2 * n + 1 || comps.iter().any(|c| c.n() != n) {
            return Err(LabError::InvalidParameter("frame field needs 2n+1 components on H^n".into()));
        }
        Ok(Self { comps })
    }

    pub fn zero(n: usize) -> Self {
        Self { comps: (0..2 * n + 1).map(|_| ClosedForm::zero(n).into_arc()).collect() }
    }
}

impl<T: Scalar> VectorField<T> for FrameField<T> {
    fn n(&self) -> usize {
        self.comps[0].n()
    }

    fn jets(&self, _tau: T, p: &HPoint<T>, order: usize) -> Vec<Jet<T>> {
        self.comps.iter().map(|c| c.jet(p, order)).collect()
    }
}

/// s · b.
#[derive(Clone)]
pub struct ScaledField<T: Scalar> {
    pub inner: Arc<dyn VectorField<T>>,
    pub factor: T,
}

impl<T: Scalar> VectorField<T> for ScaledField<T> {
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn jets(&self, tau: T, p: &HPoint<T>, order: usize) -> Vec<Jet<T>> {
        self.inner.jets(tau, p, order).into_iter().map(|j| j.scale(self.factor)).collect()
    }

    fn is_contact(&self) -> bool {
        self.inner.is_contact()
    }

    fn is_autonomous(&self) -> bool {
        self.inner.is_autonomous()
    }
}

/// Time snapshots b(τ_k) joined piecewise linearly in τ (constant outside the range).
#[derive(Clone)]
pub struct SnapshotField<T: Scalar> {
    times: Vec<T>,
    fields: Vec<Arc<dyn VectorField<T>>>,
}

impl<T: Scalar> SnapshotField<T> {
    pub fn new(times: Vec<T>, fields: Vec<Arc<dyn VectorField<T>>>) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(LabError::InvalidParameter("snapshot times and fields must pair up".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(LabError::InvalidParameter("snapshot times must increase strictly".into()));
        }
        Ok(Self { times, fields })
    }

    fn bracket(&self, tau: T) -> (usize, usize, T) {
        let m = self.times.len();
        if m == 1 || tau <= self.times[0] {
            return (0, 0, T::zero());
        }
        if tau >= self.times[m - 1] {
            return (m - 1, m - 1, T::zero());
        }
        let k = self.times.partition_point(|&s| s <= tau) - 1;
        let th = (tau - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (k, k + 1, th)
    }
}

impl<T: Scalar> VectorField<T> for SnapshotField<T> {
    fn n(&self) -> usize {
        self.fields[0].n()
    }

    fn jets(&self, tau: T, p: &HPoint<T>, order: usize) -> Vec<Jet<T>> {
        let (a, b, th) = self.bracket(tau);
        let ja = self.fields[a].jets(tau, p, order);
        if a == b || th == T::zero() {
            return ja;
        }
        let jb = self.fields[b].jets(tau, p, order);
        ja.iter().zip(&jb).map(|(x, y)| &x.scale(T::one() - th) + &y.scale(th)).collect()
    }

    fn is_contact(&self) -> bool {
        self.fields.iter().all(|f| f.is_contact())
    }

    fn is_autonomous(&self) -> bool {
        self.fields.len() == 1
    }
}

/// div b = Σ Z_j b_j at (τ, p) from first-order component jets.
pub fn divergence_at<T: Scalar, B: VectorField<T> + ?Sized>(b: &B, tau: T, p: &HPoint<T>) -> T {
    let n = b.n();
    b.jets(tau, p, 1)
        .iter()
        .enumerate()
        .map(|(j, bj)| frame_apply(bj, FrameKind::Left, n, j, p.coords()).value())
        .sum()
}

/// div b as a scalar field (autonomous view at time τ, usable up to order 2).
pub fn divergence<T: Scalar>(b: Arc<dyn VectorField<T>>, tau: T) -> PointJetField<T> {
    let n = b.n();
    PointJetField::new(n, move |p, order| {
        let jets = b.jets(tau, p, order + 1);
        let mut acc = Jet::constant(p.dim(), order, T::zero());
        for (j, bj) in jets.iter().enumerate() {
            acc = &acc + &frame_apply(bj, FrameKind::Left, n, j, p.coords());
        }
        acc
    })
}

/// The frame component b_j as a scalar field at time τ.
pub fn component_field<T: Scalar>(b: Arc<dyn VectorField<T>>, j: usize, tau: T) -> PointJetField<T> {
    let n = b.n();
    PointJetField::new(n, move |p, order| b.jets(tau, p, order).swap_remove(j))
}

/// The 2n-vector ∇^H b_N + 4 (J b)_H at (τ, p), J acting on frame components.
pub fn contact_residual_at<T: Scalar, B: VectorField<T> + ?Sized>(b: &B, tau: T, p: &HPoint<T>) -> Vec<T> {
    let n = b.n();
    let jets = b.jets(tau, p, 1);
    let four = T::lit(4.0);
    (0..2 * n)
        .map(|j| {
            let grad = frame_apply(&jets[2 * n], FrameKind::Left, n, j, p.coords()).value();
            let jb = if j < n { -jets[n + j].value() } else { jets[j - n].value() };
            grad + four * jb
        })
        .collect()
}

/// L^s(K) norm of |∇^H b_N + 4 J(b)_H|.
pub fn contact_residual<T: Scalar, B: VectorField<T> + ?Sized>(
    b: &B,
    tau: T,
    region: &BoxRegion<T>,
    s: T,
    cells: &[usize],
) -> Result<T> {
    lp_norm_fn(region, cells, s, |p| Ok(contact_residual_at(b, tau, p).iter().map(|&v| v * v).sum::<T>().sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h1(x: f64, y: f64, t: f64) -> HPoint<f64> {
        HPoint::h1(x, y, t)
    }

    #[test]
    fn contact_examples() {
        let p = h1(0.7, -0.3, 1.2);
        let b = contact_from_psi(GeneratingFunction::<f64>::preset("linear-x", 1).unwrap());
        let c = b.components(0.0, &p);
        assert_eq!(c, vec![0.0, -1.0, -4.0 * 0.7]);
        let b = contact_from_psi(GeneratingFunction::<f64>::preset("vertical-t", 1).unwrap());
        let c = b.components(0.0, &p);
        for (a, e) in c.iter().zip([-2.0 * 0.7, -2.0 * -0.3, -4.0 * 1.2]) {
            assert!((a - e).abs() < 1e-14);
        }
        assert!((divergence_at(&b, 0.0, &p) + 8.0).abs() < 1e-14);
        let zero = contact_from_psi(GeneratingFunction::from_closed(ClosedForm::<f64>::zero(1)));
        assert!(zero.components(0.0, &p).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_of_controls() {
        let k = BoxRegion::cube(1, -1.0, 1.0).unwrap();
        let psi = GeneratingFunction::<f64>::preset("linear-x", 1).unwrap();
        let b1 = perturbed_vertical(psi.clone(), 1.0);
        let r = contact_residual(&b1, 0.0, &k, f64::INFINITY, &[4, 4, 4]).unwrap();
        assert!((r - 3.0).abs() < 1e-14);
        assert_eq!(contact_residual_at(&b1, 0.0, &h1(0.2, 0.3, 0.4)), vec![3.0, 0.0]);
        let b0 = perturbed_vertical(psi.clone(), 0.0);
        assert_eq!(contact_residual_at(&b0, 0.0, &h1(0.2, 0.3, 0.4)), vec![4.0, 0.0]);
        assert!(perturbed_vertical(psi.clone(), 4.0).is_contact());
        assert!(!b1.is_contact());
    }

    #[test]
    fn snapshot_interpolates_linearly() {
        let a: Arc<dyn VectorField<f64>> = Arc::new(contact_from_psi(GeneratingFunction::preset("linear-x", 1).unwrap()));
        let b: Arc<dyn VectorField<f64>> = Arc::new(FrameField::zero(1));
        let s = SnapshotField::new(vec![0.0, 1.0], vec![a, b]).unwrap();
        let p = h1(1.0, 0.0, 0.0);
        assert_eq!(s.components(0.25, &p), vec![0.0, -0.75, -3.0]);
        assert!(SnapshotField::<f64>::new(vec![1.0, 1.0], vec![]).is_err());
    }
}

//! Closed-form scalar fields evaluated through jets, and horizontal calculus on them.

use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::group::{frame_t_coeff, FrameKind, HPoint};
use crate::jet::Jet;
use crate::scalar::Scalar;

/// A smooth scalar function on H^n that can be evaluated on jets of its
/// coordinates, giving analytic Euclidean partials up to order 3.
pub trait ScalarField<T: Scalar>: Send + Sync {
    fn n(&self) -> usize;

    /// Evaluates the field with the coordinates replaced by jets.
    fn eval(&self, x: &[Jet<T>]) -> Jet<T>;

    fn value(&self, p: &HPoint<T>) -> T {
        let dim = p.dim();
        let x: Vec<Jet<T>> = p.coords().iter().map(|&v| Jet::constant(dim, 0, v)).collect();
        self.eval(&x).value()
    }

    /// Taylor jet at `p` in the Euclidean coordinates.
    fn jet(&self, p: &HPoint<T>, order: usize) -> Jet<T> {
        self.eval(&Jet::seed(p.coords(), order))
    }
}

/// Applies the frame field Z_j (or Z_j^r) to a coordinate jet taken at `coords`.
/// The result has one order less.
pub fn frame_apply<T: Scalar>(f: &Jet<T>, kind: FrameKind, n: usize, j: usize, coords: &[T]) -> Jet<T> {
    let big_n = 2 * n + 1;
    let d = f.partial(j);
    if j == 2 * n {
        return d;
    }
    let dt = f.partial(2 * n);
    let c = frame_t_coeff(kind, n, j, coords);
    if d.order() == 0 {
        return d.add_scalar(c * dt.value());
    }
    // the ∂_t coefficient is ±2 times a coordinate
    let k = if j < n { n + j } else { j - n };
    let slope = frame_t_coeff(kind, n, j, &unit(big_n, k));
    let a = Jet::variable(big_n, d.order(), k, coords[k]).scale(slope);
    &d + &(&a * &dt)
}

fn unit<T: Scalar>(dim: usize, k: usize) -> Vec<T> {
    let mut v = vec![T::zero(); dim];
    v[k] = T::one();
    v
}

fn check_index(j: usize, bound: usize) -> Result<()> {
    if j >= bound {
        return Err(LabError::IndexOutOfRange { index: j, bound });
    }
    Ok(())
}

/// Horizontal and vertical derivatives, analytic or discrete.
pub trait Differentiable<T: Scalar> {
    fn n_dim(&self) -> usize;
    fn value_at(&self, p: &HPoint<T>) -> Result<T>;
    /// Z_j f(p) with `j ∈ 0..2n+1`.
    fn z_at(&self, kind: FrameKind, j: usize, p: &HPoint<T>) -> Result<T>;
    /// Z_i Z_j f(p).
    fn zz_at(&self, i: usize, j: usize, p: &HPoint<T>) -> Result<T>;

    fn horizontal_gradient(&self, p: &HPoint<T>) -> Result<Vec<T>> {
        (0..2 * self.n_dim()).map(|j| self.z_at(FrameKind::Left, j, p)).collect()
    }

    /// Unsymmetrized horizontal Hessian, row i = Z_i applied to Z_j f.
    fn horizontal_hessian(&self, p: &HPoint<T>) -> Result<Vec<Vec<T>>> {
        let m = 2 * self.n_dim();
        (0..m).map(|i| (0..m).map(|j| self.zz_at(i, j, p)).collect()).collect()
    }
}

macro_rules! jet_differentiable {
    ($($ty:ty),*) => {$(
        impl<T: Scalar> Differentiable<T> for $ty {
            fn n_dim(&self) -> usize {
                self.n()
            }

            fn value_at(&self, p: &HPoint<T>) -> Result<T> {
                Ok(self.value(p))
            }

            fn z_at(&self, kind: FrameKind, j: usize, p: &HPoint<T>) -> Result<T> {
                jet_z(self, kind, j, p)
            }

            fn zz_at(&self, i: usize, j: usize, p: &HPoint<T>) -> Result<T> {
                jet_zz(self, i, j, p)
            }
        }
    )*};
}

jet_differentiable!(ClosedForm<T>, PointJetField<T>, dyn ScalarField<T>);

/// Z_j f(p) from a first-order jet.
pub fn jet_z<T: Scalar, F: ScalarField<T> + ?Sized>(f: &F, kind: FrameKind, j: usize, p: &HPoint<T>) -> Result<T> {
    check_index(j, p.dim())?;
    Ok(frame_apply(&f.jet(p, 1), kind, p.n(), j, p.coords()).value())
}

/// Z_i Z_j f(p) from a second-order jet.
pub fn jet_zz<T: Scalar, F: ScalarField<T> + ?Sized>(f: &F, i: usize, j: usize, p: &HPoint<T>) -> Result<T> {
    check_index(i, p.dim())?;
    check_index(j, p.dim())?;
    let n = p.n();
    let zj = frame_apply(&f.jet(p, 2), FrameKind::Left, n, j, p.coords());
    Ok(frame_apply(&zj, FrameKind::Left, n, i, p.coords()).value())
}

type JetFn<T> = dyn Fn(&[Jet<T>]) -> Jet<T> + Send + Sync;

/// A closed-form field defined by a jet-valued closure.
#[derive(Clone)]
pub struct ClosedForm<T: Scalar> {
    n: usize,
    name: String,
    f: Arc<JetFn<T>>,
}

impl<T: Scalar> std::fmt::Debug for ClosedForm<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ClosedForm({}, n={})", self.name, self.n)
    }
}

impl<T: Scalar> ScalarField<T> for ClosedForm<T> {
    fn n(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[Jet<T>]) -> Jet<T> {
        (self.f)(x)
    }
}

impl<T: Scalar> ClosedForm<T> {
    pub fn new(n: usize, name: impl Into<String>, f: impl Fn(&[Jet<T>]) -> Jet<T> + Send + Sync + 'static) -> Self {
        Self { n, name: name.into(), f: Arc::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn into_arc(self) -> Arc<dyn ScalarField<T>> {
        Arc::new(self)
    }

    pub fn constant(n: usize, c: T) -> Self {
        Self::new(n, format!("const({c})"), move |x| Jet::constant(x[0].dim(), x[0].order(), c))
    }

    pub fn zero(n: usize) -> Self {
        Self::constant(n, T::zero())
    }

    /// The coordinate function with index `k` (x's, then y's, then t).
    pub fn coordinate(n: usize, k: usize) -> Self {
        Self::new(n, format!("coord{k}"), move |x| x[k].clone())
    }

    /// Σ c · Π x_k^{e_k} over the given terms.
    pub fn polynomial(n: usize, terms: Vec<(T, Vec<u32>)>) -> Self {
        Self::new(n, "polynomial", move |x| {
            let mut acc = Jet::constant(x[0].dim(), x[0].order(), T::zero());
            for (c, e) in &terms {
                let mut m = Jet::constant(x[0].dim(), x[0].order(), *c);
                for (k, &ek) in e.iter().enumerate() {
                    if ek > 0 {
                        m = &m * &x[k].powi(ek as i32);
                    }
                }
                acc = &acc + &m;
            }
            acc
        })
    }

    /// exp(−1/(1−s)) with s = Σ ((x_k − c_k)/r_k)², zero for s ≥ 1.
    pub fn bump(n: usize, center: Vec<T>, radii: Vec<T>) -> Self {
        Self::new(n, "bump", move |x| {
            let mut s = Jet::constant(x[0].dim(), x[0].order(), T::zero());
            for k in 0..x.len() {
                let d = (&x[k] - center[k]) / radii[k];
                s = &s + &d.square();
            }
            s.compose(bump_profile(s.value()))
        })
    }

    /// Π_k (1 − ((x_k − c_k)/r_k)²)^m, zero outside the box.
    pub fn poly_bump(n: usize, center: Vec<T>, radii: Vec<T>, m: i32) -> Self {
        Self::new(n, "poly_bump", move |x| {
            let mut acc = Jet::constant(x[0].dim(), x[0].order(), T::one());
            for k in 0..x.len() {
                let d = (&x[k] - center[k]) / radii[k];
                let one_minus = (-d.square()).add_scalar(T::one());
                let f = if one_minus.value() > T::zero() {
                    one_minus.powi(m)
                } else {
                    Jet::constant(x[0].dim(), x[0].order(), T::zero())
                };
                acc = &acc * &f;
            }
            acc
        })
    }

    pub fn sum(&self, other: &Self) -> Self {
        let (a, b) = (self.f.clone(), other.f.clone());
        Self::new(self.n, format!("({} + {})", self.name, other.name), move |x| &a(x) + &b(x))
    }

    pub fn product(&self, other: &Self) -> Self {
        let (a, b) = (self.f.clone(), other.f.clone());
        Self::new(self.n, format!("({} * {})", self.name, other.name), move |x| &a(x) * &b(x))
    }

    pub fn scaled(&self, c: T) -> Self {
        let a = self.f.clone();
        Self::new(self.n, format!("{c}*{}", self.name), move |x| a(x).scale(c))
    }

    /// β ∘ f.
    pub fn then(&self, beta: &Smooth1D<T>) -> Self {
        let a = self.f.clone();
        let b = beta.clone();
        Self::new(self.n, format!("{}({})", beta.name, self.name), move |x| b.apply(&a(x)))
    }

    /// f ∘ ι, ι(p) = p⁻¹.
    pub fn compose_inverse(&self) -> Self {
        let a = self.f.clone();
        Self::new(self.n, format!("{}∘ι", self.name), move |x| {
            let neg: Vec<Jet<T>> = x.iter().map(|j| -j).collect();
            a(&neg)
        })
    }
}

/// [f, f', f'', f'''] of s ↦ exp(−1/(1−s)).
pub fn bump_profile<T: Scalar>(s: T) -> [T; 4] {
    if s >= T::one() {
        return [T::zero(); 4];
    }
    let u = T::one() / (T::one() - s);
    let e = (-u).exp();
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u2 * u2;
    [e, -u2 * e, e * (u4 - T::lit(2.0) * u3), e * (-u4 * u2 + T::lit(6.0) * u4 * u - T::lit(6.0) * u4)]
}

type UniFn<T> = dyn Fn(T) -> [T; 4] + Send + Sync;

/// A smooth map R → R with derivatives up to order 3.
#[derive(Clone)]
pub struct Smooth1D<T: Scalar> {
    pub name: String,
    f: Arc<UniFn<T>>,
}

impl<T: Scalar> std::fmt::Debug for Smooth1D<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Smooth1D({})", self.name)
    }
}

impl<T: Scalar> Smooth1D<T> {
    pub fn new(name: impl Into<String>, f: impl Fn(T) -> [T; 4] + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    pub fn derivatives(&self, r: T) -> [T; 4] {
        (self.f)(r)
    }

    pub fn value(&self, r: T) -> T {
        (self.f)(r)[0]
    }

    pub fn derivative(&self, r: T) -> T {
        (self.f)(r)[1]
    }

    pub fn apply(&self, j: &Jet<T>) -> Jet<T> {
        j.compose((self.f)(j.value()))
    }

    pub fn identity() -> Self {
        Self::new("id", |r| [r, T::one(), T::zero(), T::zero()])
    }

    pub fn square() -> Self {
        Self::new("square", |r| [r * r, r + r, T::lit(2.0), T::zero()])
    }

    pub fn sin() -> Self {
        Self::new("sin", |r: T| {
            let (s, c) = r.sin_cos();
            [s, c, -s, -c]
        })
    }

    pub fn arctan() -> Self {
        Self::new("arctan", |r: T| {
            let q = T::one() / (T::one() + r * r);
            [r.atan(), q, T::lit(-2.0) * r * q * q, (T::lit(6.0) * r * r - T::lit(2.0)) * q * q * q]
        })
    }

    /// Parses a named preset: `id`, `square`, `sin`, `arctan`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "id" | "identity" => Ok(Self::identity()),
            "square" => Ok(Self::square()),
            "sin" => Ok(Self::sin()),
            "arctan" => Ok(Self::arctan()),
            other => Err(LabError::InvalidParameter(format!("unknown map preset `{other}`"))),
        }
    }
}

type PointJetFn<T> = dyn Fn(&HPoint<T>, usize) -> Jet<T> + Send + Sync;

/// A field defined pointwise by its coordinate jet; composition with general
/// input jets goes through the multivariate chain rule.
#[derive(Clone)]
pub struct PointJetField<T: Scalar> {
    n: usize,
    f: Arc<PointJetFn<T>>,
}

impl<T: Scalar> PointJetField<T> {
    pub fn new(n: usize, f: impl Fn(&HPoint<T>, usize) -> Jet<T> + Send + Sync + 'static) -> Self {
        Self { n, f: Arc::new(f) }
    }
}

impl<T: Scalar> ScalarField<T> for PointJetField<T> {
    fn n(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[Jet<T>]) -> Jet<T> {
        let coords: Vec<T> = x.iter().map(|j| j.value()).collect();
        let p = HPoint::from_coords(self.n, &coords).expect("field dimension");
        let order = x[0].order();
        let own = (self.f)(&p, order);
        if order == 0 {
            return own;
        }
        own.compose_multi(x)
    }

    fn jet(&self, p: &HPoint<T>, order: usize) -> Jet<T> {
        (self.f)(p, order)
    }
}

/// The field Z_j f (or Z_j^r f) as a new scalar field (usable up to order 2).
pub fn frame_derivative_field<T: Scalar>(f: Arc<dyn ScalarField<T>>, kind: FrameKind, j: usize) -> PointJetField<T> {
    let n = f.n();
    PointJetField::new(n, move |p, order| frame_apply(&f.jet(p, order + 1), kind, n, j, p.coords()))
}

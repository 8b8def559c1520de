//! Forward-mode truncated Taylor jets up to third order.
//!
//! A jet stores the value, gradient, Hessian and third-derivative tensor of a
//! function of `dim` variables at a point, in full (unsymmetrized) layout.

use std::ops::{Add, Div, Mul, Neg, Sub};

use smallvec::SmallVec;

use crate::scalar::Scalar;

pub const MAX_ORDER: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Jet<T: Scalar> {
    dim: usize,
    order: usize,
    d: SmallVec<[T; 13]>,
}

fn len_for(dim: usize, order: usize) -> usize {
    let mut len = 1;
    let mut p = 1;
    for _ in 0..order {
        p *= dim;
        len += p;
    }
    len
}

impl<T: Scalar> Jet<T> {
    pub fn constant(dim: usize, order: usize, v: T) -> Self {
        assert!(order <= MAX_ORDER, "jet order {order} exceeds {MAX_ORDER}");
        let mut d = SmallVec::from_elem(T::zero(), len_for(dim, order));
        d[0] = v;
        Self { dim, order, d }
    }

    /// The coordinate function `x_i` at value `v`.
    pub fn variable(dim: usize, order: usize, i: usize, v: T) -> Self {
        let mut j = Self::constant(dim, order, v);
        if order >= 1 {
            j.d[1 + i] = T::one();
        }
        j
    }

    /// Identity jets of all coordinates at `coords`.
    pub fn seed(coords: &[T], order: usize) -> Vec<Self> {
        let dim = coords.len();
        coords.iter().enumerate().map(|(i, &v)| Self::variable(dim, order, i, v)).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn value(&self) -> T {
        self.d[0]
    }

    #[inline]
    fn o2(&self) -> usize {
        1 + self.dim
    }

    #[inline]
    fn o3(&self) -> usize {
        1 + self.dim + self.dim * self.dim
    }

    #[inline]
    pub fn grad(&self, i: usize) -> T {
        if self.order < 1 {
            return T::zero();
        }
        self.d[1 + i]
    }

    #[inline]
    pub fn hess(&self, i: usize, j: usize) -> T {
        if self.order < 2 {
            return T::zero();
        }
        self.d[self.o2() + i * self.dim + j]
    }

    #[inline]
    pub fn third(&self, i: usize, j: usize, k: usize) -> T {
        if self.order < 3 {
            return T::zero();
        }
        self.d[self.o3() + (i * self.dim + j) * self.dim + k]
    }

    pub fn truncate(&self, order: usize) -> Self {
        let order = order.min(self.order);
        let len = len_for(self.dim, order);
        Self { dim: self.dim, order, d: SmallVec::from_slice(&self.d[..len]) }
    }

    fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.dim, other.dim, "jet dimension mismatch");
        let order = self.order.min(other.order);
        let len = len_for(self.dim, order);
        let d = self.d[..len].iter().zip(&other.d[..len]).map(|(&a, &b)| f(a, b)).collect();
        Self { dim: self.dim, order, d }
    }

    pub fn scale(&self, a: T) -> Self {
        Self { dim: self.dim, order: self.order, d: self.d.iter().map(|&v| v * a).collect() }
    }

    pub fn add_scalar(&self, a: T) -> Self {
        let mut r = self.clone();
        r.d[0] += a;
        r
    }

    /// Leibniz rule.
    pub fn product(&self, b: &Self) -> Self {
        let a = self;
        assert_eq!(a.dim, b.dim, "jet dimension mismatch");
        let dim = a.dim;
        let order = a.order.min(b.order);
        let mut r = Self::constant(dim, order, a.d[0] * b.d[0]);
        let (av, bv) = (a.d[0], b.d[0]);
        if order >= 1 {
            for i in 0..dim {
                r.d[1 + i] = a.d[1 + i] * bv + av * b.d[1 + i];
            }
        }
        if order >= 2 {
            let o2 = r.o2();
            for i in 0..dim {
                for j in 0..dim {
                    let k = o2 + i * dim + j;
                    r.d[k] = a.d[k] * bv + a.d[1 + i] * b.d[1 + j] + a.d[1 + j] * b.d[1 + i] + av * b.d[k];
                }
            }
        }
        if order >= 3 {
            let o2 = r.o2();
            let o3 = r.o3();
            let h = |x: &Self, i: usize, j: usize| x.d[o2 + i * dim + j];
            let g = |x: &Self, i: usize| x.d[1 + i];
            for i in 0..dim {
                for j in 0..dim {
                    for k in 0..dim {
                        let idx = o3 + (i * dim + j) * dim + k;
                        r.d[idx] = a.d[idx] * bv
                            + h(a, i, j) * g(b, k)
                            + h(a, i, k) * g(b, j)
                            + h(a, j, k) * g(b, i)
                            + g(a, i) * h(b, j, k)
                            + g(a, j) * h(b, i, k)
                            + g(a, k) * h(b, i, j)
                            + av * b.d[idx];
                    }
                }
            }
        }
        r
    }

    /// Composition with a univariate function given `[f, f', f'', f''']` at the value.
    pub fn compose(&self, f: [T; 4]) -> Self {
        let a = self;
        let dim = a.dim;
        let order = a.order;
        let mut r = Self::constant(dim, order, f[0]);
        if order >= 1 {
            for i in 0..dim {
                r.d[1 + i] = f[1] * a.d[1 + i];
            }
        }
        if order >= 2 {
            let o2 = r.o2();
            for i in 0..dim {
                for j in 0..dim {
                    let k = o2 + i * dim + j;
                    r.d[k] = f[2] * a.d[1 + i] * a.d[1 + j] + f[1] * a.d[k];
                }
            }
        }
        if order >= 3 {
            let o2 = r.o2();
            let o3 = r.o3();
            let h = |i: usize, j: usize| a.d[o2 + i * dim + j];
            let g = |i: usize| a.d[1 + i];
            for i in 0..dim {
                for j in 0..dim {
                    for k in 0..dim {
                        let idx = o3 + (i * dim + j) * dim + k;
                        r.d[idx] = f[3] * g(i) * g(j) * g(k)
                            + f[2] * (h(i, j) * g(k) + h(i, k) * g(j) + h(j, k) * g(i))
                            + f[1] * a.d[idx];
                    }
                }
            }
        }
        r
    }

    /// Composition `F ∘ (inner_0, …, inner_{m−1})` where `self` is the jet of F at
    /// the values of the inner jets.
    pub fn compose_multi(&self, inner: &[Self]) -> Self {
        let outer = self;
        let m = outer.dim;
        assert_eq!(inner.len(), m, "compose_multi arity mismatch");
        let dim = inner[0].dim;
        let order = inner.iter().map(|j| j.order).min().unwrap_or(0).min(outer.order);
        let mut r = Self::constant(dim, order, outer.d[0]);
        if order == 0 {
            return r;
        }
        let fa = |a: usize| outer.grad(a);
        let fab = |a: usize, b: usize| outer.hess(a, b);
        let fabc = |a: usize, b: usize, c: usize| outer.third(a, b, c);
        for i in 0..dim {
            r.d[1 + i] = (0..m).map(|a| fa(a) * inner[a].grad(i)).sum();
        }
        if order >= 2 {
            let o2 = r.o2();
            for i in 0..dim {
                for j in 0..dim {
                    let mut s = T::zero();
                    for a in 0..m {
                        s += fa(a) * inner[a].hess(i, j);
                        for b in 0..m {
                            s += fab(a, b) * inner[a].grad(i) * inner[b].grad(j);
                        }
                    }
                    r.d[o2 + i * dim + j] = s;
                }
            }
        }
        if order >= 3 {
            let o3 = r.o3();
            for i in 0..dim {
                for j in 0..dim {
                    for k in 0..dim {
                        let mut s = T::zero();
                        for a in 0..m {
                            let xa = &inner[a];
                            s += fa(a) * xa.third(i, j, k);
                            for b in 0..m {
                                let xb = &inner[b];
                                s += fab(a, b)
                                    * (xa.hess(i, j) * xb.grad(k) + xa.hess(i, k) * xb.grad(j) + xa.hess(j, k) * xb.grad(i));
                                for c in 0..m {
                                    s += fabc(a, b, c) * xa.grad(i) * xb.grad(j) * inner[c].grad(k);
                                }
                            }
                        }
                        r.d[o3 + (i * dim + j) * dim + k] = s;
                    }
                }
            }
        }
        r
    }

    /// Jet of ∂f/∂x_l, one order lower.
    pub fn partial(&self, l: usize) -> Self {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let dim = self.dim;
        let order = self.order - 1;
        let mut r = Self::constant(dim, order, self.grad(l));
        if order >= 1 {
            for i in 0..dim {
                r.d[1 + i] = self.hess(l, i);
            }
        }
        if order >= 2 {
            let o2 = r.o2();
            for i in 0..dim {
                for j in 0..dim {
                    r.d[o2 + i * dim + j] = self.third(l, i, j);
                }
            }
        }
        r
    }

    pub fn recip(&self) -> Self {
        let x = self.value();
        let r = T::one() / x;
        let r2 = r * r;
        self.compose([r, -r2, T::lit(2.0) * r2 * r, T::lit(-6.0) * r2 * r2])
    }

    pub fn exp(&self) -> Self {
        let e = self.value().exp();
        self.compose([e; 4])
    }

    pub fn ln(&self) -> Self {
        let x = self.value();
        let r = T::one() / x;
        self.compose([x.ln(), r, -r * r, T::lit(2.0) * r * r * r])
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.value().sin_cos();
        self.compose([s, c, -s, -c])
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.value().sin_cos();
        self.compose([c, -s, -c, s])
    }

    pub fn sqrt(&self) -> Self {
        let x = self.value();
        let s = x.sqrt();
        let h = T::lit(0.5);
        self.compose([s, h / s, -h * h / (s * x), T::lit(0.375) / (s * x * x)])
    }

    pub fn powi(&self, k: i32) -> Self {
        let x = self.value();
        let kf = T::lit(k as f64);
        let p = |e: i32| if k - e < 0 && x == T::zero() { T::zero() } else { x.powi(k - e) };
        self.compose([
            p(0),
            kf * p(1),
            kf * (kf - T::one()) * p(2),
            kf * (kf - T::one()) * (kf - T::lit(2.0)) * p(3),
        ])
    }

    pub fn square(&self) -> Self {
        self.product(self)
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $body:expr) => {
        impl<'a, T: Scalar> $tr<&'a Jet<T>> for &'a Jet<T> {
            type Output = Jet<T>;
            fn $m(self, rhs: &'a Jet<T>) -> Jet<T> {
                let f: fn(&Jet<T>, &Jet<T>) -> Jet<T> = $body;
                f(self, rhs)
            }
        }
        impl<T: Scalar> $tr<Jet<T>> for Jet<T> {
            type Output = Jet<T>;
            fn $m(self, rhs: Jet<T>) -> Jet<T> {
                (&self).$m(&rhs)
            }
        }
        impl<'a, T: Scalar> $tr<&'a Jet<T>> for Jet<T> {
            type Output = Jet<T>;
            fn $m(self, rhs: &'a Jet<T>) -> Jet<T> {
                (&self).$m(rhs)
            }
        }
        impl<'a, T: Scalar> $tr<Jet<T>> for &'a Jet<T> {
            type Output = Jet<T>;
            fn $m(self, rhs: Jet<T>) -> Jet<T> {
                self.$m(&rhs)
            }
        }
    };
}

binop!(Add, add, |a, b| a.zip(b, |x, y| x + y));
binop!(Sub, sub, |a, b| a.zip(b, |x, y| x - y));
binop!(Mul, mul, |a, b| a.product(b));
binop!(Div, div, |a, b| a.product(&b.recip()));

macro_rules! scalar_op {
    ($tr:ident, $m:ident, $body:expr) => {
        impl<T: Scalar> $tr<T> for Jet<T> {
            type Output = Jet<T>;
            fn $m(self, rhs: T) -> Jet<T> {
                let f: fn(&Jet<T>, T) -> Jet<T> = $body;
                f(&self, rhs)
            }
        }
        impl<'a, T: Scalar> $tr<T> for &'a Jet<T> {
            type Output = Jet<T>;
            fn $m(self, rhs: T) -> Jet<T> {
                let f: fn(&Jet<T>, T) -> Jet<T> = $body;
                f(self, rhs)
            }
        }
    };
}

scalar_op!(Add, add, |a, s| a.add_scalar(s));
scalar_op!(Sub, sub, |a, s| a.add_scalar(-s));
scalar_op!(Mul, mul, |a, s| a.scale(s));
scalar_op!(Div, div, |a, s| a.scale(T::one() / s));

impl<T: Scalar> Neg for Jet<T> {
    type Output = Jet<T>;
    fn neg(self) -> Jet<T> {
        self.scale(-T::one())
    }
}

impl<'a, T: Scalar> Neg for &'a Jet<T> {
    type Output = Jet<T>;
    fn neg(self) -> Jet<T> {
        self.scale(-T::one())
    }
}

//! The Heisenberg group H^n in exponential coordinates (x, y, t).

use std::fmt;

use smallvec::SmallVec;

use crate::error::{LabError, Result};
use crate::scalar::Scalar;

/// Inline storage for the coordinates of a point (enough for n ≤ 3 without allocation).
pub type Coords<T> = SmallVec<[T; 7]>;

/// Dimension bookkeeping for H^n.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GroupParams {
    pub n: usize,
}

impl GroupParams {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(LabError::InvalidParameter("n must be positive".into()));
        }
        Ok(Self { n })
    }

    /// Topological dimension 2n + 1.
    pub fn big_n(&self) -> usize {
        2 * self.n + 1
    }

    /// Homogeneous dimension 2n + 2.
    pub fn q(&self) -> usize {
        2 * self.n + 2
    }
}

/// A point of H^n stored as `[x_1..x_n, y_1..y_n, t]`.
#[derive(Clone, PartialEq)]
pub struct HPoint<T: Scalar> {
    n: usize,
    c: Coords<T>,
}

impl<T: Scalar> fmt::Debug for HPoint<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HPoint{:?}", self.c.as_slice())
    }
}

impl<T: Scalar> HPoint<T> {
    pub fn new(x: &[T], y: &[T], t: T) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(LabError::DimensionMismatch { expected: x.len(), found: y.len() });
        }
        let mut c: Coords<T> = SmallVec::with_capacity(2 * x.len() + 1);
        c.extend_from_slice(x);
        c.extend_from_slice(y);
        c.push(t);
        Ok(Self { n: x.len(), c })
    }

    /// Builds a point from its `2n + 1` coordinates.
    pub fn from_coords(n: usize, coords: &[T]) -> Result<Self> {
        if n == 0 || coords.len() != 2 * n + 1 {
            return Err(LabError::DimensionMismatch { expected: n, found: coords.len().saturating_sub(1) / 2 });
        }
        Ok(Self { n, c: SmallVec::from_slice(coords) })
    }

    /// Convenience constructor for H^1.
    pub fn h1(x: T, y: T, t: T) -> Self {
        Self { n: 1, c: SmallVec::from_slice(&[x, y, t]) }
    }

    pub fn origin(n: usize) -> Self {
        Self { n, c: SmallVec::from_elem(T::zero(), 2 * n + 1) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of coordinates, N = 2n + 1.
    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    pub fn coords(&self) -> &[T] {
        &self.c
    }

    pub fn coords_mut(&mut self) -> &mut [T] {
        &mut self.c
    }

    pub fn coord(&self, i: usize) -> T {
        self.c[i]
    }

    pub fn x(&self, j: usize) -> T {
        self.c[j]
    }

    pub fn y(&self, j: usize) -> T {
        self.c[self.n + j]
    }

    pub fn t(&self) -> T {
        self.c[2 * self.n]
    }

    /// Horizontal part w_H (first 2n coordinates).
    pub fn w_h(&self) -> &[T] {
        &self.c[..2 * self.n]
    }

    /// Vertical part w_N = t.
    pub fn w_n(&self) -> T {
        self.t()
    }

    fn check(&self, q: &Self) -> Result<()> {
        if self.n != q.n {
            return Err(LabError::DimensionMismatch { expected: self.n, found: q.n });
        }
        Ok(())
    }

    /// Group law p·q.
    pub fn mul(&self, q: &Self) -> Result<Self> {
        self.check(q)?;
        let n = self.n;
        let mut c = self.c.clone();
        let mut s = T::zero();
        for j in 0..n {
            c[j] += q.c[j];
            c[n + j] += q.c[n + j];
            s += q.c[j] * self.c[n + j] - self.c[j] * q.c[n + j];
        }
        c[2 * n] = self.c[2 * n] + q.c[2 * n] + (s + s);
        Ok(Self { n, c })
    }

    /// The inverse p⁻¹ = −p.
    pub fn inverse(&self) -> Self {
        Self { n: self.n, c: self.c.iter().map(|&v| -v).collect() }
    }

    /// Intrinsic dilation δ_λ.
    pub fn dilate(&self, lambda: T) -> Result<Self> {
        if lambda < T::zero() {
            return Err(LabError::NegativeDilation(lambda.to_f64_lossy()));
        }
        Ok(self.dilate_unchecked(lambda))
    }

    pub(crate) fn dilate_unchecked(&self, lambda: T) -> Self {
        let n = self.n;
        let mut c = self.c.clone();
        for v in c.iter_mut().take(2 * n) {
            *v *= lambda;
        }
        c[2 * n] *= lambda * lambda;
        Self { n, c }
    }

    /// J(x, y, t) = (−y, x, 0).
    pub fn jmap(&self) -> Self {
        let n = self.n;
        let mut c: Coords<T> = SmallVec::from_elem(T::zero(), 2 * n + 1);
        for j in 0..n {
            c[j] = -self.c[n + j];
            c[n + j] = self.c[j];
        }
        Self { n, c }
    }

    /// Euclidean inner product of all coordinates.
    pub fn dot(&self, q: &Self) -> T {
        self.c.iter().zip(q.c.iter()).map(|(&a, &b)| a * b).sum()
    }

    /// |w_H|.
    pub fn h_norm(&self) -> T {
        self.w_h().iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// The gauge |w_H| + 2√|w_N|.
    pub fn gauge(&self) -> T {
        self.h_norm() + T::lit(2.0) * self.t().abs().sqrt()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.c.iter().map(|v| v.to_f64_lossy()).collect()
    }
}

/// Left- or right-invariant frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum FrameKind {
    Left,
    Right,
}

/// Coefficient of `∂_t` in the frame field `j` at `p` (zero for T).
///
/// Indices: `0..n` are X_j, `n..2n` are Y_j, `2n` is T.
#[inline]
pub(crate) fn frame_t_coeff<T: Scalar>(kind: FrameKind, n: usize, j: usize, coords: &[T]) -> T {
    let two = T::lit(2.0);
    let sign = match kind {
        FrameKind::Left => T::one(),
        FrameKind::Right => -T::one(),
    };
    if j < n {
        sign * two * coords[n + j]
    } else if j < 2 * n {
        -sign * two * coords[j - n]
    } else {
        T::zero()
    }
}

/// Euclidean coordinates of Z_j(p) (left) or Z_j^r(p) (right).
pub fn frame_vector<T: Scalar>(kind: FrameKind, j: usize, p: &HPoint<T>) -> Result<Coords<T>> {
    let big_n = p.dim();
    if j >= big_n {
        return Err(LabError::IndexOutOfRange { index: j, bound: big_n });
    }
    let mut v: Coords<T> = SmallVec::from_elem(T::zero(), big_n);
    v[j] = T::one();
    if j < big_n - 1 {
        v[big_n - 1] = frame_t_coeff(kind, p.n(), j, p.coords());
    }
    Ok(v)
}

/// Expands a Euclidean tangent vector `v` at `p` in the left-invariant frame.
pub fn frame_components<T: Scalar>(p: &HPoint<T>, v: &[T]) -> Coords<T> {
    let n = p.n();
    let mut out: Coords<T> = SmallVec::from_slice(v);
    let mut tt = v[2 * n];
    for j in 0..2 * n {
        tt -= v[j] * frame_t_coeff(FrameKind::Left, n, j, p.coords());
    }
    out[2 * n] = tt;
    out
}

/// Upper bound U(p, q) = |w_H| + 2√|w_N|, w = p⁻¹q, for the CC distance.
pub fn cc_distance_upper<T: Scalar>(p: &HPoint<T>, q: &HPoint<T>) -> Result<T> {
    Ok(p.inverse().mul(q)?.gauge())
}

/// Waypoints of the commutator square realizing exp(ε² w_N T) from `start`.
///
/// The path follows Y₁, X₁, −Y₁, −X₁ (X₁ first when w_N < 0) for times
/// τ̃ = (ε/2)√|w_N|.
pub fn bch_square_path<T: Scalar>(start: &HPoint<T>, w_n: T, eps: T) -> Result<Vec<HPoint<T>>> {
    if !(eps > T::zero()) {
        return Err(LabError::NonPositiveScale(eps.to_f64_lossy()));
    }
    let n = start.n();
    let tau = eps * T::lit(0.5) * w_n.abs().sqrt();
    let step = |idx: usize, sign: T| {
        let mut c: Coords<T> = SmallVec::from_elem(T::zero(), 2 * n + 1);
        c[idx] = sign * tau;
        HPoint { n, c }
    };
    let (a, b) = if w_n >= T::zero() { (n, 0) } else { (0, n) };
    let moves = [step(a, T::one()), step(b, T::one()), step(a, -T::one()), step(b, -T::one())];
    let mut out = Vec::with_capacity(5);
    out.push(start.clone());
    for m in &moves {
        let next = out.last().expect("nonempty").mul(m)?;
        out.push(next);
    }
    Ok(out)
}

/// Horizontal length of a piecewise-horizontal path given by its waypoints.
pub fn horizontal_path_length<T: Scalar>(path: &[HPoint<T>]) -> T {
    path.windows(2)
        .map(|w| {
            w[0].w_h()
                .iter()
                .zip(w[1].w_h())
                .map(|(&a, &b)| (b - a) * (b - a))
                .sum::<T>()
                .sqrt()
        })
        .sum()
}

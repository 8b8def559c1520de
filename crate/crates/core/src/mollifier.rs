//! Even, unit-mass mollifier on H^n, its dilates and group convolution.

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::field::{bump_profile, frame_apply, ClosedForm};
#[cfg(test)]
use crate::field::ScalarField;
use crate::grid::{BoxRegion, Extension, GridField};
use crate::group::{FrameKind, HPoint};
use crate::jet::Jet;
use crate::scalar::Scalar;

/// Default semi-axes of the ellipsoidal support.
pub const DEFAULT_R0: f64 = 0.5;
pub const DEFAULT_S0: f64 = 0.1;

/// ρ(w) = C exp(−1/(1 − G(w)²)), G² = |w_H|²/r₀² + w_N²/s₀².
#[derive(Clone, Debug, PartialEq)]
pub struct Mollifier<T: Scalar> {
    n: usize,
    r0: T,
    s0: T,
    norm: T,
}

fn gamma_half_odd(n: usize) -> f64 {
    // Γ(n + 1/2)
    let mut g = std::f64::consts::PI.sqrt();
    for k in 0..n {
        g *= k as f64 + 0.5;
    }
    g
}

/// ∫₀¹ r^{d−1} exp(−1/(1−r²)) dr by composite Simpson.
fn radial_integral(d: usize) -> f64 {
    let m = 20_000;
    let h = 1.0 / m as f64;
    let f = |r: f64| if r >= 1.0 { 0.0 } else { r.powi(d as i32 - 1) * (-1.0 / (1.0 - r * r)).exp() };
    let mut s = f(0.0) + f(1.0);
    for k in 1..m {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    s * h / 3.0
}

impl<T: Scalar> Mollifier<T> {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_axes(n, T::lit(DEFAULT_R0), T::lit(DEFAULT_S0))
    }

    /// Support semi-axes r₀ (horizontal) and s₀ (vertical); the ellipsoid must
    /// lie inside {|w_H| + 2√|w_N| < 1}.
    pub fn with_axes(n: usize, r0: T, s0: T) -> Result<Self> {
        if n == 0 || !(r0 > T::zero()) || !(s0 > T::zero()) {
            return Err(LabError::InvalidParameter("mollifier needs n ≥ 1 and positive axes".into()));
        }
        let big_n = 2 * n + 1;
        let sphere = 2.0 * std::f64::consts::PI.powf(big_n as f64 / 2.0) / gamma_half_odd(n);
        let mass = r0.to_f64_lossy().powi(2 * n as i32) * s0.to_f64_lossy() * sphere * radial_integral(big_n);
        let m = Self { n, r0, s0, norm: T::lit(1.0 / mass) };
        if m.max_gauge_on_support() >= T::one() {
            return Err(LabError::SupportViolation("ellipsoid leaves the unit gauge ball".into()));
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn axes(&self) -> (T, T) {
        (self.r0, self.s0)
    }

    pub fn normalization(&self) -> T {
        self.norm
    }

    /// Homogeneous dimension Q = 2n + 2.
    pub fn q(&self) -> i32 {
        2 * self.n as i32 + 2
    }

    /// sup of |w_H| + 2√|w_N| over the boundary of the support ellipsoid.
    pub fn max_gauge_on_support(&self) -> T {
        let steps = 20_000;
        (0..=steps)
            .map(|k| {
                let th = T::FRAC_PI_2() * T::of(k) / T::of(steps);
                self.r0 * th.cos() + T::lit(2.0) * (self.s0 * th.sin()).sqrt()
            })
            .fold(T::zero(), T::max)
    }

    fn gauge_sq<J>(&self, x: &[J], sq: impl Fn(&J) -> J, add: impl Fn(J, J) -> J, scale: impl Fn(J, T) -> J) -> J {
        let m = 2 * self.n;
        let mut acc = scale(sq(&x[m]), T::one() / (self.s0 * self.s0));
        for xk in x.iter().take(m) {
            acc = add(acc, scale(sq(xk), T::one() / (self.r0 * self.r0)));
        }
        acc
    }

    pub fn value(&self, w: &HPoint<T>) -> T {
        let s = self.gauge_sq(w.coords(), |v| *v * *v, |a, b| a + b, |a, c| a * c);
        self.norm * bump_profile(s)[0]
    }

    /// Coordinate jet of ρ at `w`.
    pub fn jet(&self, x: &[Jet<T>]) -> Jet<T> {
        let s = self.gauge_sq(x, |v| v.square(), |a, b| &a + &b, |a, c| a.scale(c));
        s.compose(bump_profile(s.value())).scale(self.norm)
    }

    pub fn as_field(&self) -> ClosedForm<T> {
        let m = self.clone();
        ClosedForm::new(self.n, "rho", move |x| m.jet(x))
    }

    /// Z_jρ(w) or Z_j^rρ(w).
    pub fn derivative(&self, kind: FrameKind, j: usize, w: &HPoint<T>) -> T {
        let jt = self.jet(&Jet::seed(w.coords(), 1));
        frame_apply(&jt, kind, self.n, j, w.coords()).value()
    }

    pub fn scale(&self, eps: T) -> Result<ScaledMollifier<T>> {
        if !(eps > T::zero()) {
            return Err(LabError::NonPositiveScale(eps.to_f64_lossy()));
        }
        Ok(ScaledMollifier { base: self.clone(), eps })
    }

    /// Euclidean half-widths of the support box (r₀ on horizontal axes, s₀ on t).
    pub fn support_half_widths(&self) -> Vec<T> {
        let mut v = vec![self.r0; 2 * self.n + 1];
        v[2 * self.n] = self.s0;
        v
    }
}

/// ρ_ε(p) = ε^{−Q} ρ(δ_{1/ε} p).
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledMollifier<T: Scalar> {
    pub base: Mollifier<T>,
    pub eps: T,
}

impl<T: Scalar> ScaledMollifier<T> {
    pub fn value(&self, p: &HPoint<T>) -> T {
        let e = self.eps;
        self.base.value(&p.dilate_unchecked(T::one() / e)) / e.powi(self.base.q())
    }

    /// Coordinate jet of ρ_ε through the chain rule of δ_{1/ε}.
    pub fn jet(&self, x: &[Jet<T>]) -> Jet<T> {
        let e = self.eps;
        let m = 2 * self.base.n;
        let y: Vec<Jet<T>> =
            x.iter().enumerate().map(|(k, j)| if k < m { j.scale(T::one() / e) } else { j.scale(T::one() / (e * e)) }).collect();
        self.base.jet(&y).scale(T::one() / e.powi(self.base.q()))
    }

    /// Z_jρ_ε(p) from the generic chain rule.
    pub fn derivative(&self, kind: FrameKind, j: usize, p: &HPoint<T>) -> T {
        let jt = self.jet(&Jet::seed(p.coords(), 1));
        frame_apply(&jt, kind, self.base.n, j, p.coords()).value()
    }

    /// Z_jρ_ε(p) from the homogeneity scalings ε^{−(Q+1)} (horizontal) and ε^{−(Q+2)} (T).
    pub fn derivative_by_homogeneity(&self, kind: FrameKind, j: usize, p: &HPoint<T>) -> T {
        let e = self.eps;
        let extra = if j == 2 * self.base.n { 2 } else { 1 };
        self.base.derivative(kind, j, &p.dilate_unchecked(T::one() / e)) / e.powi(self.base.q() + extra)
    }

    pub fn as_field(&self) -> ClosedForm<T> {
        let m = self.clone();
        ClosedForm::new(self.base.n, "rho_eps", move |x| m.jet(x))
    }
}

/// Quadrature rule for integrals against ρ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LatticeRule {
    /// Midpoints of a uniform subdivision of the support box, any n.
    Midpoint { cells: usize },
    /// Ellipsoidal spherical coordinates (n = 1): Gauss–Legendre in r and cos θ,
    /// midpoint trapezoid in φ.
    Spherical { radial: usize, polar: usize, azimuthal: usize },
}

impl LatticeRule {
    /// Working rule for the commutator studies.
    pub fn default_for(n: usize) -> Self {
        if n == 1 {
            Self::Spherical { radial: 32, polar: 12, azimuthal: 16 }
        } else {
            Self::Midpoint { cells: 12 }
        }
    }

    /// A cheaper rule of the same family, used to estimate the quadrature error.
    pub fn coarse(&self) -> Self {
        match *self {
            Self::Midpoint { cells } => Self::Midpoint { cells: (cells * 2 / 3).max(2) },
            Self::Spherical { radial, polar, azimuthal } => {
                Self::Spherical { radial: (radial * 3 / 4).max(2), polar: (polar * 3 / 4).max(2), azimuthal }
            }
        }
    }
}

/// Symmetrized Gauss–Legendre rule on [−1, 1].
pub(crate) fn gauss_legendre(m: usize) -> Vec<(f64, f64)> {
    let rule = gauss_quad::legendre::GaussLegendre::new(std::num::NonZeroUsize::new(m).expect("positive degree"));
    let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let raw = pairs.clone();
    for k in 0..m {
        let j = m - 1 - k;
        pairs[k] = (0.5 * (raw[k].0 - raw[j].0), 0.5 * (raw[k].1 + raw[j].1));
    }
    pairs
}

/// Quadrature nodes in the support of ρ with precomputed kernel values.
#[derive(Clone, Debug)]
pub struct KernelLattice<T: Scalar> {
    pub n: usize,
    pub rule: LatticeRule,
    pub nodes: Vec<HPoint<T>>,
    pub weights: Vec<T>,
    pub rho: Vec<T>,
    /// Z_jρ at each node, j = 0..N.
    pub left: Vec<Vec<T>>,
    /// Z_j^rρ at each node.
    pub right: Vec<Vec<T>>,
    /// Index of the node −w_k.
    pub mirror: Vec<usize>,
    /// Quadrature sum of the analytically normalized ρ before rescaling.
    pub raw_mass: T,
}

impl<T: Scalar> KernelLattice<T> {
    /// Midpoint rule with `cells` subdivisions per axis.
    pub fn new(rho: &Mollifier<T>, cells: usize) -> Result<Self> {
        Self::with_rule(rho, LatticeRule::Midpoint { cells })
    }

    pub fn with_rule(rho: &Mollifier<T>, rule: LatticeRule) -> Result<Self> {
        let n = rho.n();
        let (nodes, weights, mirror) = match rule {
            LatticeRule::Midpoint { cells } => {
                if cells < 2 {
                    return Err(LabError::InvalidParameter("kernel lattice needs at least 2 cells per axis".into()));
                }
                let hw = rho.support_half_widths();
                let region = BoxRegion::new(hw.iter().map(|&v| -v).collect(), hw.clone())?;
                let (mut pts, weight) = region.midpoints(&vec![cells; hw.len()]);
                let len = pts.len();
                for i in len / 2..len {
                    pts[i] = pts[len - 1 - i].inverse();
                }
                // lexicographic midpoints: the mirror of index i is len − 1 − i
                (pts, vec![weight; len], (0..len).rev().collect())
            }
            LatticeRule::Spherical { radial, polar, azimuthal } => {
                if n != 1 {
                    return Err(LabError::InvalidParameter("the spherical rule is implemented for n = 1".into()));
                }
                if radial < 1 || polar < 1 || azimuthal < 2 || azimuthal % 2 != 0 {
                    return Err(LabError::InvalidParameter("spherical rule needs an even azimuthal count".into()));
                }
                spherical_nodes(rho, radial, polar, azimuthal)
            }
        };
        let data: Vec<(T, Vec<T>, Vec<T>)> = nodes
            .par_iter()
            .map(|w| {
                let jt = rho.jet(&Jet::seed(w.coords(), 1));
                let l = (0..=2 * n).map(|j| frame_apply(&jt, FrameKind::Left, n, j, w.coords()).value()).collect();
                let r = (0..=2 * n).map(|j| frame_apply(&jt, FrameKind::Right, n, j, w.coords()).value()).collect();
                (jt.value(), l, r)
            })
            .collect();
        // drop nodes outside supp ρ, keeping the set closed under inversion
        let live = |k: usize| data[k].0 != T::zero() || data[k].1.iter().chain(&data[k].2).any(|&v| v != T::zero());
        let keep: Vec<bool> = (0..nodes.len()).map(|k| live(k) || live(mirror[k])).collect();
        let mut new_index = vec![usize::MAX; nodes.len()];
        let mut count = 0;
        for k in 0..nodes.len() {
            if keep[k] {
                new_index[k] = count;
                count += 1;
            }
        }
        let mirror: Vec<usize> = (0..nodes.len()).filter(|&k| keep[k]).map(|k| new_index[mirror[k]]).collect();
        let nodes: Vec<HPoint<T>> = nodes.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| p).collect();
        let weights: Vec<T> = weights.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(w, _)| w).collect();
        let data: Vec<(T, Vec<T>, Vec<T>)> = data.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(d, _)| d).collect();
        let mut lat = Self {
            n,
            rule,
            nodes,
            weights,
            rho: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            mirror,
            raw_mass: T::one(),
        };
        for (v, l, r) in data {
            lat.rho.push(v);
            lat.left.push(l);
            lat.right.push(r);
        }
        // discrete normalization: the quadrature sum of ρ is exactly one
        let mass = lat.mass();
        for k in 0..lat.rho.len() {
            lat.rho[k] /= mass;
            for j in 0..=2 * n {
                lat.left[k][j] /= mass;
                lat.right[k][j] /= mass;
            }
        }
        lat.raw_mass = mass;
        Ok(lat)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mass(&self) -> T {
        self.rho.iter().zip(&self.weights).map(|(&r, &w)| r * w).sum()
    }

    /// Σ_k f(k) · weight_k.
    pub fn sum<F>(&self, f: F) -> Result<T>
    where
        F: Fn(usize) -> Result<T>,
    {
        let mut acc = T::zero();
        for k in 0..self.nodes.len() {
            acc += f(k)? * self.weights[k];
        }
        Ok(acc)
    }
}

type NodeSet<T> = (Vec<HPoint<T>>, Vec<T>, Vec<usize>);

fn spherical_nodes<T: Scalar>(rho: &Mollifier<T>, radial: usize, polar: usize, azimuthal: usize) -> NodeSet<T> {
    let (r0, s0) = rho.axes();
    let (r0, s0) = (r0.to_f64_lossy(), s0.to_f64_lossy());
    let gr = gauss_legendre(radial);
    let gc = gauss_legendre(polar);
    let half = azimuthal / 2;
    let dphi = 2.0 * std::f64::consts::PI / azimuthal as f64;
    let trig: Vec<(f64, f64)> = (0..half).map(|k| {
        let phi = (k as f64 + 0.5) * dphi;
        (phi.cos(), phi.sin())
    }).collect();
    let idx = |a: usize, b: usize, c: usize| (a * polar + b) * azimuthal + c;
    let mut nodes = Vec::with_capacity(radial * polar * azimuthal);
    let mut weights = Vec::with_capacity(nodes.capacity());
    let mut mirror = Vec::with_capacity(nodes.capacity());
    for (ai, &(xr, wr)) in gr.iter().enumerate() {
        let r = 0.5 * (xr + 1.0);
        let wr = 0.5 * wr * r * r * r0 * r0 * s0;
        for (b, &(ct, wc)) in gc.iter().enumerate() {
            let st = (1.0 - ct * ct).sqrt();
            for c in 0..azimuthal {
                let (cp, sp) = if c < half { trig[c] } else { (-trig[c - half].0, -trig[c - half].1) };
                let w = HPoint::h1(T::lit(r0 * r * st * cp), T::lit(r0 * r * st * sp), T::lit(s0 * r * ct));
                nodes.push(w);
                weights.push(T::lit(wr * wc * dphi));
                mirror.push(idx(ai, polar - 1 - b, (c + half) % azimuthal));
            }
        }
    }
    (nodes, weights, mirror)
}

/// Margins such that p·q⁻¹ stays in `region` for q ∈ supp ρ_ε when p lies in
/// the region shrunk by these margins.
pub fn convolution_margins<T: Scalar>(rho: &Mollifier<T>, eps: T, region: &BoxRegion<T>) -> Vec<T> {
    let (r0, s0) = rho.axes();
    let n = rho.n();
    let mut m = vec![eps * r0; 2 * n + 1];
    m[2 * n] = eps * eps * s0 + T::lit(2.0) * eps * r0 * region.max_h_norm();
    m
}

/// (f * ρ_ε)(p) = ∫ f(p·δ_ε(w)⁻¹) ρ(w) dw.
pub fn convolve_at<T: Scalar>(
    f: &(dyn Fn(&HPoint<T>) -> Result<T> + Sync),
    p: &HPoint<T>,
    eps: T,
    lat: &KernelLattice<T>,
) -> Result<T> {
    lat.sum(|k| Ok(f(&p.mul(&lat.nodes[k].dilate_unchecked(eps).inverse())?)? * lat.rho[k]))
}

/// (f * Z_jρ_ε)(p) for the left-invariant Z_j.
pub fn convolve_derivative_at<T: Scalar>(
    f: &(dyn Fn(&HPoint<T>) -> Result<T> + Sync),
    j: usize,
    p: &HPoint<T>,
    eps: T,
    lat: &KernelLattice<T>,
) -> Result<T> {
    let pow = if j == 2 * lat.n { eps * eps } else { eps };
    Ok(lat.sum(|k| Ok(f(&p.mul(&lat.nodes[k].dilate_unchecked(eps).inverse())?)? * lat.left[k][j]))? / pow)
}

/// u * ρ_ε sampled on the shrunken region with the spacing of `u`.
pub fn group_convolve<T: Scalar>(u: &GridField<T>, rho: &Mollifier<T>, eps: T, lat: &KernelLattice<T>) -> Result<GridField<T>> {
    if !(eps > T::zero()) {
        return Err(LabError::NonPositiveScale(eps.to_f64_lossy()));
    }
    let margins = convolution_margins(rho, eps, u.region());
    let out = u.region().shrink(&margins)?;
    let h = u.spacing().iter().copied().fold(T::infinity(), T::min);
    let f = |q: &HPoint<T>| u.interp(q);
    let probe = GridField::sample(out, h, Extension::Error, |_| T::zero())?;
    let vals = (0..probe.values().len())
        .into_par_iter()
        .map(|k| convolve_at(&f, &probe.node_point(k), eps, lat))
        .collect::<Result<Vec<T>>>()?;
    GridField::from_values(probe.region().clone(), probe.shape().to_vec(), vals, Extension::Error)
}

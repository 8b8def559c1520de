//! Boxes, midpoint quadrature, grid-sampled fields and horizontal norms.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::field::{frame_apply, Differentiable, ScalarField, Smooth1D};
use crate::group::{frame_t_coeff, FrameKind, HPoint};
use crate::scalar::Scalar;

/// An axis-aligned box in the Euclidean coordinates of H^n.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxRegion<T: Scalar> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> BoxRegion<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() % 2 == 0 {
            return Err(LabError::InvalidBox(format!("corner lengths {} and {}", lower.len(), upper.len())));
        }
        for (k, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) {
                return Err(LabError::InvalidBox(format!("axis {k}: lower {l} is not below upper {u}")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube [a, b]^{2n+1}.
    pub fn cube(n: usize, a: T, b: T) -> Result<Self> {
        Self::new(vec![a; 2 * n + 1], vec![b; 2 * n + 1])
    }

    pub fn n(&self) -> usize {
        (self.lower.len() - 1) / 2
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn side(&self, k: usize) -> T {
        self.upper[k] - self.lower[k]
    }

    pub fn volume(&self) -> T {
        (0..self.dim()).map(|k| self.side(k)).fold(T::one(), |a, b| a * b)
    }

    pub fn contains_coords(&self, c: &[T], tol: T) -> bool {
        c.iter().enumerate().all(|(k, &v)| v >= self.lower[k] - tol && v <= self.upper[k] + tol)
    }

    pub fn contains(&self, p: &HPoint<T>) -> bool {
        self.contains_coords(p.coords(), T::zero())
    }

    pub fn contains_box(&self, other: &Self) -> bool {
        let tol = T::lit(1e-12);
        (0..self.dim()).all(|k| other.lower[k] >= self.lower[k] - tol && other.upper[k] <= self.upper[k] + tol)
    }

    /// Moves every face inward by the given per-axis margins.
    pub fn shrink(&self, margins: &[T]) -> Result<Self> {
        let lower: Vec<T> = self.lower.iter().zip(margins).map(|(&l, &m)| l + m).collect();
        let upper: Vec<T> = self.upper.iter().zip(margins).map(|(&u, &m)| u - m).collect();
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(LabError::EmptyRegion(format!("margins {:?} exceed the box", margins)));
        }
        Ok(Self { lower, upper })
    }

    pub fn expand(&self, margins: &[T]) -> Self {
        Self {
            lower: self.lower.iter().zip(margins).map(|(&l, &m)| l - m).collect(),
            upper: self.upper.iter().zip(margins).map(|(&u, &m)| u + m).collect(),
        }
    }

    /// max |p_H| over the box.
    pub fn max_h_norm(&self) -> T {
        let n = self.n();
        (0..2 * n)
            .map(|k| {
                let m = self.lower[k].abs().max(self.upper[k].abs());
                m * m
            })
            .sum::<T>()
            .sqrt()
    }

    /// Euclidean margins of a box containing every CC ball B(p, r), p in `self`.
    ///
    /// A horizontal curve of length r moves w_H by at most r and, by the
    /// isoperimetric inequality, w_t by at most r²/π.
    pub fn cc_margins(&self, r: T) -> Vec<T> {
        let n = self.n();
        let mut m = vec![r; 2 * n + 1];
        m[2 * n] = r * r / T::PI() + T::lit(2.0) * r * self.max_h_norm();
        m
    }

    pub fn cc_neighbourhood(&self, r: T) -> Self {
        self.expand(&self.cc_margins(r))
    }

    /// Number of cells per axis for spacing at most `h`.
    pub fn cells_for(&self, h: T) -> Vec<usize> {
        (0..self.dim()).map(|k| (self.side(k) / h).ceil().to_usize().unwrap_or(1).max(1)).collect()
    }

    /// Cell midpoints of a uniform subdivision and the cell volume.
    pub fn midpoints(&self, cells: &[usize]) -> (Vec<HPoint<T>>, T) {
        let n = self.n();
        let dim = self.dim();
        let h: Vec<T> = (0..dim).map(|k| self.side(k) / T::of(cells[k])).collect();
        let total: usize = cells.iter().product();
        let pts = (0..total)
            .map(|mut idx| {
                let mut c = vec![T::zero(); dim];
                for k in (0..dim).rev() {
                    let i = idx % cells[k];
                    idx /= cells[k];
                    c[k] = self.lower[k] + (T::of(i) + T::lit(0.5)) * h[k];
                }
                HPoint::from_coords(n, &c).expect("box dimension")
            })
            .collect();
        (pts, h.iter().fold(T::one(), |a, &b| a * b))
    }
}

/// Largest |f| over an m-point lattice on each face of `region`.
pub fn boundary_sup<T: Scalar, F: ScalarField<T> + ?Sized>(f: &F, region: &BoxRegion<T>, m: usize) -> T {
    let dim = region.dim();
    let m = m.max(2);
    let mut worst = T::zero();
    for axis in 0..dim {
        for side in [region.lower()[axis], region.upper()[axis]] {
            let total = m.pow(dim as u32 - 1);
            for mut idx in 0..total {
                let mut c = vec![T::zero(); dim];
                for k in (0..dim).rev() {
                    if k == axis {
                        c[k] = side;
                        continue;
                    }
                    let i = idx % m;
                    idx /= m;
                    c[k] = region.lower()[k] + region.side(k) * T::of(i) / T::of(m - 1);
                }
                let p = HPoint::from_coords(region.n(), &c).expect("box dimension");
                worst = worst.max(f.value(&p).abs());
            }
        }
    }
    worst
}

/// Midpoint-rule integral of `f` over `region` with `cells` subdivisions.
pub fn integrate<T: Scalar>(region: &BoxRegion<T>, cells: &[usize], f: impl Fn(&HPoint<T>) -> T + Sync) -> T {
    let (pts, vol) = region.midpoints(cells);
    let vals: Vec<T> = pts.par_iter().map(&f).collect();
    vals.into_iter().sum::<T>() * vol
}

pub fn try_integrate<T: Scalar>(
    region: &BoxRegion<T>,
    cells: &[usize],
    f: impl Fn(&HPoint<T>) -> Result<T> + Sync,
) -> Result<T> {
    let (pts, vol) = region.midpoints(cells);
    let vals: Vec<T> = pts.par_iter().map(&f).collect::<Result<Vec<T>>>()?;
    Ok(vals.into_iter().sum::<T>() * vol)
}

/// Exponent s ∈ [1, ∞] and region K.
#[derive(Clone, Debug, PartialEq)]
pub struct NormSpec<T: Scalar> {
    pub s: T,
    pub region: BoxRegion<T>,
}

impl<T: Scalar> NormSpec<T> {
    pub fn new(s: T, region: BoxRegion<T>) -> Result<Self> {
        if !(s >= T::one()) {
            return Err(LabError::InvalidParameter(format!("norm exponent {s} must be at least 1")));
        }
        Ok(Self { s, region })
    }

    /// Hölder conjugate s' with 1/s + 1/s' = 1.
    pub fn conjugate(&self) -> T {
        conjugate(self.s)
    }
}

pub fn conjugate<T: Scalar>(s: T) -> T {
    if s == T::one() {
        T::infinity()
    } else if s.is_infinite() {
        T::one()
    } else {
        s / (s - T::one())
    }
}

/// Combines sampled values into an L^s norm (max for s = ∞).
pub fn norm_from_samples<T: Scalar>(vals: &[T], cell_volume: T, s: T) -> T {
    if s.is_infinite() {
        return vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    }
    if s == T::one() {
        return vals.iter().map(|v| v.abs()).sum::<T>() * cell_volume;
    }
    (vals.iter().map(|v| v.abs().powf(s)).sum::<T>() * cell_volume).powf(T::one() / s)
}

/// L^s norm of a pointwise function by the midpoint rule.
pub fn lp_norm_fn<T: Scalar>(
    region: &BoxRegion<T>,
    cells: &[usize],
    s: T,
    f: impl Fn(&HPoint<T>) -> Result<T> + Sync,
) -> Result<T> {
    let (pts, vol) = region.midpoints(cells);
    let vals: Vec<T> = pts.par_iter().map(&f).collect::<Result<Vec<T>>>()?;
    Ok(norm_from_samples(&vals, vol, s))
}

/// Horizontal Sobolev norm ‖u‖ + Σ‖Z_j u‖ (+ Σ‖Z_iZ_j u‖ when k = 2), horizontal indices only.
pub fn sobolev_h_norm<T: Scalar, F: Differentiable<T> + Sync + ?Sized>(
    f: &F,
    k: usize,
    spec: &NormSpec<T>,
    cells: &[usize],
) -> Result<T> {
    if !(1..=2).contains(&k) {
        return Err(LabError::InvalidParameter(format!("Sobolev order {k} must be 1 or 2")));
    }
    let m = 2 * f.n_dim();
    let mut total = lp_norm_fn(&spec.region, cells, spec.s, |p| f.value_at(p))?;
    for j in 0..m {
        total += lp_norm_fn(&spec.region, cells, spec.s, |p| f.z_at(FrameKind::Left, j, p))?;
    }
    if k == 2 {
        for i in 0..m {
            for j in 0..m {
                total += lp_norm_fn(&spec.region, cells, spec.s, |p| f.zz_at(i, j, p))?;
            }
        }
    }
    Ok(total)
}

/// Behaviour of a grid field outside its box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extension {
    Zero,
    Error,
}

/// A field sampled on a uniform lattice with multilinear interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField<T: Scalar> {
    region: BoxRegion<T>,
    shape: Vec<usize>,
    spacing: Vec<T>,
    values: Vec<T>,
    policy: Extension,
}

const SNAP: f64 = 1e-9;

impl<T: Scalar> GridField<T> {
    /// Samples `f` with ⌈L/h⌉ + 1 nodes per axis (spacing adjusted down to fit).
    pub fn sample(region: BoxRegion<T>, h: T, policy: Extension, f: impl Fn(&HPoint<T>) -> T + Sync) -> Result<Self> {
        if !(h > T::zero()) {
            return Err(LabError::NonPositiveScale(h.to_f64_lossy()));
        }
        let shape: Vec<usize> = region.cells_for(h).into_iter().map(|c| c + 1).collect();
        let mut g = Self::from_values(region, shape, Vec::new(), policy)?;
        let total: usize = g.shape.iter().product();
        g.values = (0..total).into_par_iter().map(|i| f(&g.node_point(i))).collect();
        Ok(g)
    }

    pub fn from_values(region: BoxRegion<T>, shape: Vec<usize>, values: Vec<T>, policy: Extension) -> Result<Self> {
        if shape.len() != region.dim() || shape.iter().any(|&s| s < 2) {
            return Err(LabError::InvalidParameter(format!("grid shape {:?} is invalid", shape)));
        }
        let total: usize = shape.iter().product();
        if !values.is_empty() && values.len() != total {
            return Err(LabError::InvalidParameter(format!("expected {total} values, found {}", values.len())));
        }
        let spacing = (0..region.dim()).map(|k| region.side(k) / T::of(shape[k] - 1)).collect();
        Ok(Self { region, shape, spacing, values, policy })
    }

    pub fn region(&self) -> &BoxRegion<T> {
        &self.region
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[T] {
        &self.spacing
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn policy(&self) -> Extension {
        self.policy
    }

    pub fn n(&self) -> usize {
        self.region.n()
    }

    /// Maps the stored values through `f`.
    pub fn map(&self, f: impl Fn(T) -> T + Sync) -> Self {
        let mut g = self.clone();
        g.values = self.values.par_iter().map(|&v| f(v)).collect();
        g
    }

    pub fn node_point(&self, mut idx: usize) -> HPoint<T> {
        let dim = self.shape.len();
        let mut c = vec![T::zero(); dim];
        for k in (0..dim).rev() {
            let i = idx % self.shape[k];
            idx /= self.shape[k];
            c[k] = self.region.lower[k] + T::of(i) * self.spacing[k];
        }
        HPoint::from_coords(self.n(), &c).expect("grid dimension")
    }

    pub fn node_value(&self, multi: &[usize]) -> T {
        let mut idx = 0;
        for (k, &i) in multi.iter().enumerate() {
            idx = idx * self.shape[k] + i;
        }
        self.values[idx]
    }

    /// Multilinear interpolation; exact at nodes and on affine functions.
    pub fn interp(&self, p: &HPoint<T>) -> Result<T> {
        self.interp_coords(p.coords())
    }

    fn interp_coords(&self, c: &[T]) -> Result<T> {
        let dim = self.shape.len();
        let snap = T::lit(SNAP);
        let mut base = [0usize; 7];
        let mut frac = [T::zero(); 7];
        let mut big_base = vec![0usize; if dim > 7 { dim } else { 0 }];
        let mut big_frac = vec![T::zero(); if dim > 7 { dim } else { 0 }];
        for k in 0..dim {
            let r = (c[k] - self.region.lower[k]) / self.spacing[k];
            let last = T::of(self.shape[k] - 1);
            if r < -snap || r > last + snap || r.is_nan() {
                return match self.policy {
                    Extension::Zero => Ok(T::zero()),
                    Extension::Error => Err(LabError::OutsideBox(c.iter().map(|v| v.to_f64_lossy()).collect())),
                };
            }
            let r = r.max(T::zero()).min(last);
            let mut i = r.floor().to_usize().unwrap_or(0);
            let mut f = r - T::of(i);
            if f > T::one() - snap {
                i += 1;
                f = T::zero();
            } else if f < snap {
                f = T::zero();
            }
            if i >= self.shape[k] - 1 && f > T::zero() {
                i = self.shape[k] - 2;
                f = T::one();
            }
            if dim > 7 {
                big_base[k] = i;
                big_frac[k] = f;
            } else {
                base[k] = i;
                frac[k] = f;
            }
        }
        let (base, frac): (&[usize], &[T]) = if dim > 7 { (&big_base, &big_frac) } else { (&base[..dim], &frac[..dim]) };
        let mut acc = T::zero();
        for corner in 0..(1usize << dim) {
            let mut w = T::one();
            let mut idx = 0;
            let mut skip = false;
            for k in 0..dim {
                let bit = (corner >> k) & 1;
                let wk = if bit == 1 { frac[k] } else { T::one() - frac[k] };
                if wk == T::zero() {
                    skip = true;
                    break;
                }
                w *= wk;
                idx = idx * self.shape[k] + base[k] + bit;
            }
            if !skip {
                acc += w * self.values[idx];
            }
        }
        Ok(acc)
    }

    fn inside(&self, c: &[T]) -> bool {
        self.region.contains_coords(c, T::lit(SNAP) * self.spacing[0])
    }

    /// Second-order first derivative ∂_k g at `c`, central inside and one-sided at faces.
    fn d1(&self, k: usize, c: &[T], g: &dyn Fn(&[T]) -> Result<T>) -> Result<T> {
        let h = self.spacing[k];
        let at = |s: T| -> Result<T> {
            let mut q = c.to_vec();
            q[k] += s * h;
            g(&q)
        };
        let mut plus = c.to_vec();
        plus[k] += h;
        let mut minus = c.to_vec();
        minus[k] -= h;
        let two = T::lit(2.0);
        match (self.inside(&plus), self.inside(&minus)) {
            (true, true) => Ok((at(T::one())? - at(-T::one())?) / (two * h)),
            (true, false) => Ok((T::lit(-3.0) * at(T::zero())? + T::lit(4.0) * at(T::one())? - at(two)?) / (two * h)),
            (false, true) => Ok((T::lit(3.0) * at(T::zero())? - T::lit(4.0) * at(-T::one())? + at(-two)?) / (two * h)),
            (false, false) => Err(LabError::OutsideBox(c.iter().map(|v| v.to_f64_lossy()).collect())),
        }
    }

    fn d2(&self, k: usize, l: usize, c: &[T]) -> Result<T> {
        let f = |q: &[T]| self.interp_coords(q);
        if k != l {
            return self.d1(k, c, &|q: &[T]| self.d1(l, q, &f));
        }
        let h = self.spacing[k];
        let at = |s: T| -> Result<T> {
            let mut q = c.to_vec();
            q[k] += s * h;
            f(&q)
        };
        let mut plus = c.to_vec();
        plus[k] += h;
        let mut minus = c.to_vec();
        minus[k] -= h;
        let (two, h2) = (T::lit(2.0), h * h);
        match (self.inside(&plus), self.inside(&minus)) {
            (true, true) => Ok((at(T::one())? - two * at(T::zero())? + at(-T::one())?) / h2),
            (true, false) => Ok((two * at(T::zero())? - T::lit(5.0) * at(T::one())? + T::lit(4.0) * at(two)?
                - at(T::lit(3.0))?)
                / h2),
            (false, true) => Ok((two * at(T::zero())? - T::lit(5.0) * at(-T::one())? + T::lit(4.0) * at(-two)?
                - at(T::lit(-3.0))?)
                / h2),
            (false, false) => Err(LabError::OutsideBox(c.iter().map(|v| v.to_f64_lossy()).collect())),
        }
    }

    /// Euclidean partial ∂_k by finite differences.
    pub fn partial(&self, k: usize, p: &HPoint<T>) -> Result<T> {
        self.d1(k, p.coords(), &|q: &[T]| self.interp_coords(q))
    }

    /// L^s norm over `spec.region` with one quadrature cell per grid cell.
    pub fn lp_norm(&self, spec: &NormSpec<T>) -> Result<T> {
        self.check_region(&spec.region)?;
        let cells = self.cells_over(&spec.region);
        lp_norm_fn(&spec.region, &cells, spec.s, |p| self.interp(p))
    }

    pub fn sobolev_h_norm(&self, k: usize, spec: &NormSpec<T>) -> Result<T> {
        self.check_region(&spec.region)?;
        let cells = self.cells_over(&spec.region);
        sobolev_h_norm(self, k, spec, &cells)
    }

    pub fn cells_over(&self, region: &BoxRegion<T>) -> Vec<usize> {
        (0..region.dim())
            .map(|k| (region.side(k) / self.spacing[k] - T::lit(1e-9)).ceil().to_usize().unwrap_or(1).max(1))
            .collect()
    }

    pub fn check_region(&self, region: &BoxRegion<T>) -> Result<()> {
        if !self.region.contains_box(region) {
            return Err(LabError::RegionOutsideBox(format!(
                "{:?}..{:?} not inside {:?}..{:?}",
                region.lower, region.upper, self.region.lower, self.region.upper
            )));
        }
        Ok(())
    }

    /// Writes the versioned text format: header lines then one value per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let join = |v: &[T]| v.iter().map(|x| format!("{:.16e}", x.to_f64_lossy())).collect::<Vec<_>>().join(" ");
        writeln!(w, "HGRID v1")?;
        writeln!(w, "n {}", self.n())?;
        writeln!(w, "lower {}", join(&self.region.lower))?;
        writeln!(w, "upper {}", join(&self.region.upper))?;
        writeln!(w, "shape {}", self.shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "))?;
        writeln!(w, "policy {}", if self.policy == Extension::Zero { "zero" } else { "error" })?;
        for v in &self.values {
            writeln!(w, "{:.16e}", v.to_f64_lossy())?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().map(|l| l.map_err(|e| LabError::Parse(e.to_string())));
        let mut next = |what: &str| -> Result<String> {
            lines.next().ok_or_else(|| LabError::Parse(format!("missing {what}")))?
        };
        if next("header")?.trim() != "HGRID v1" {
            return Err(LabError::Parse("unsupported grid header".into()));
        }
        let field = |line: String, key: &str| -> Result<Vec<String>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(LabError::Parse(format!("expected `{key}`")));
            }
            Ok(it.map(|s| s.to_string()).collect())
        };
        let num = |s: &str| -> Result<T> { s.parse::<f64>().map(T::lit).map_err(|e| LabError::Parse(e.to_string())) };
        let _n = field(next("n")?, "n")?;
        let lower = field(next("lower")?, "lower")?.iter().map(|s| num(s)).collect::<Result<Vec<T>>>()?;
        let upper = field(next("upper")?, "upper")?.iter().map(|s| num(s)).collect::<Result<Vec<T>>>()?;
        let shape = field(next("shape")?, "shape")?
            .iter()
            .map(|s| s.parse::<usize>().map_err(|e| LabError::Parse(e.to_string())))
            .collect::<Result<Vec<usize>>>()?;
        let policy = match field(next("policy")?, "policy")?.first().map(String::as_str) {
            Some("zero") => Extension::Zero,
            Some("error") => Extension::Error,
            _ => return Err(LabError::Parse("unknown policy".into())),
        };
        let mut values = Vec::new();
        for l in lines {
            let l = l?;
            if !l.trim().is_empty() {
                values.push(num(l.trim())?);
            }
        }
        Self::from_values(BoxRegion::new(lower, upper)?, shape, values, policy)
    }
}

impl<T: Scalar> Differentiable<T> for GridField<T> {
    fn n_dim(&self) -> usize {
        self.n()
    }

    fn value_at(&self, p: &HPoint<T>) -> Result<T> {
        self.interp(p)
    }

    fn z_at(&self, kind: FrameKind, j: usize, p: &HPoint<T>) -> Result<T> {
        let n = self.n();
        let big_n = 2 * n + 1;
        if j >= big_n {
            return Err(LabError::IndexOutOfRange { index: j, bound: big_n });
        }
        let dj = self.partial(j, p)?;
        if j == 2 * n {
            return Ok(dj);
        }
        let c = frame_t_coeff(kind, n, j, p.coords());
        Ok(dj + c * self.partial(2 * n, p)?)
    }

    fn zz_at(&self, i: usize, j: usize, p: &HPoint<T>) -> Result<T> {
        let n = self.n();
        let big_n = 2 * n + 1;
        for &k in &[i, j] {
            if k >= big_n {
                return Err(LabError::IndexOutOfRange { index: k, bound: big_n });
            }
        }
        let tn = 2 * n;
        let c = p.coords();
        let ai = frame_t_coeff(FrameKind::Left, n, i, c);
        let aj = frame_t_coeff(FrameKind::Left, n, j, c);
        let h = |k: usize, l: usize| self.d2(k, l, c);
        let mut v = h(i, j)?;
        if j != tn {
            v += aj * h(i, tn)?;
        }
        if i != tn {
            v += ai * h(tn, j)?;
        }
        if i != tn && j != tn {
            v += ai * aj * h(tn, tn)?;
            // Z_i applied to the coefficient of ∂_t in Z_j
            let kj = if j < n { n + j } else { j - n };
            if i == kj {
                let mut e = vec![T::zero(); big_n];
                e[kj] = T::one();
                v += frame_t_coeff(FrameKind::Left, n, j, &e) * self.partial(tn, p)?;
            }
        }
        Ok(v)
    }
}

/// How derivatives are evaluated in [`chain_rule_residual`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DerivativeMode<T: Scalar> {
    /// Analytic partials from jets, midpoint quadrature with this many cells per axis.
    Analytic { cells: usize },
    /// Finite differences on a grid of spacing `h` covering K.
    Grid { h: T },
}

/// ‖Z_j(β(u)) − β'(u) Z_j u‖_{L¹(K)}.
pub fn chain_rule_residual<T: Scalar, F: ScalarField<T> + ?Sized>(
    u: &F,
    beta: &Smooth1D<T>,
    j: usize,
    region: &BoxRegion<T>,
    mode: DerivativeMode<T>,
) -> Result<T> {
    let n = u.n();
    if j > 2 * n {
        return Err(LabError::IndexOutOfRange { index: j, bound: 2 * n + 1 });
    }
    match mode {
        DerivativeMode::Analytic { cells } => {
            let cells = vec![cells; region.dim()];
            lp_norm_fn(region, &cells, T::one(), |p| {
                let ju = u.jet(p, 1);
                let lhs = frame_apply(&beta.apply(&ju), FrameKind::Left, n, j, p.coords()).value();
                let rhs = beta.derivative(ju.value()) * frame_apply(&ju, FrameKind::Left, n, j, p.coords()).value();
                Ok(lhs - rhs)
            })
        }
        DerivativeMode::Grid { h } => {
            let gu = GridField::sample(region.clone(), h, Extension::Error, |p| u.value(p))?;
            let gb = gu.map(|v| beta.value(v));
            let cells = gu.cells_over(region);
            lp_norm_fn(region, &cells, T::one(), |p| {
                let lhs = gb.z_at(FrameKind::Left, j, p)?;
                let rhs = beta.derivative(gu.interp(p)?) * gu.z_at(FrameKind::Left, j, p)?;
                Ok(lhs - rhs)
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ClosedForm;

    fn cube(a: f64, b: f64) -> BoxRegion<f64> {
        BoxRegion::cube(1, a, b).unwrap()
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoxRegion::new(vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]).is_err());
        assert!(cube(-1.0, 1.0).shrink(&[1.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn interp_affine_and_nodes() {
        let g = GridField::sample(cube(-1.0, 1.0), 0.13, Extension::Error, |p| 2.0 * p.x(0) + p.t()).unwrap();
        let v = g.interp(&HPoint::h1(0.3, 0.1, 0.7)).unwrap();
        assert!((v - 1.3).abs() < 1e-14);
        for idx in [0, 17, 301, g.values().len() - 1] {
            assert_eq!(g.interp(&g.node_point(idx)).unwrap(), g.values()[idx]);
        }
        assert!(g.interp(&HPoint::h1(1.5, 0.0, 0.0)).is_err());
        let z = GridField::from_values(g.region().clone(), g.shape().to_vec(), g.values().to_vec(), Extension::Zero).unwrap();
        assert_eq!(z.interp(&HPoint::h1(1.5, 0.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn grid_shape_rule() {
        let g = GridField::sample(cube(0.0, 1.0), 0.3, Extension::Error, |_| 0.0).unwrap();
        assert_eq!(g.shape(), &[5, 5, 5]);
        assert!((g.spacing()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lp_norm_examples() {
        let g = GridField::sample(cube(-1.0, 1.0), 0.1, Extension::Error, |_| 1.0).unwrap();
        let spec = NormSpec::new(1.0, cube(-1.0, 1.0)).unwrap();
        assert!((g.lp_norm(&spec).unwrap() - 8.0).abs() < 1e-12);
        let u = GridField::sample(cube(0.0, 1.0), 0.05, Extension::Error, |p| p.x(0)).unwrap();
        let spec = NormSpec::new(2.0, cube(0.0, 1.0)).unwrap();
        assert!((u.lp_norm(&spec).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-3);
        let bad = NormSpec::new(1.0, cube(-2.0, 1.0)).unwrap();
        assert!(u.lp_norm(&bad).is_err());
    }

    #[test]
    fn sobolev_norm_of_t() {
        let spec = NormSpec::new(1.0, cube(-1.0, 1.0)).unwrap();
        let t = ClosedForm::<f64>::coordinate(1, 2);
        let v = sobolev_h_norm(&t, 1, &spec, &[40, 40, 40]).unwrap();
        assert!((v - 20.0).abs() < 1e-9);
        let g = GridField::sample(cube(-1.0, 1.0), 0.05, Extension::Error, |p| p.t()).unwrap();
        assert!((g.sobolev_h_norm(1, &spec).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn grid_derivatives_exact_on_quadratics() {
        let f = |p: &HPoint<f64>| p.x(0) * p.x(0) - 3.0 * p.x(0) * p.t() + 0.5 * p.y(0) * p.t() + p.t() * p.t() + p.y(0);
        let cf = ClosedForm::<f64>::polynomial(
            1,
            vec![(1.0, vec![2, 0, 0]), (-3.0, vec![1, 0, 1]), (0.5, vec![0, 1, 1]), (1.0, vec![0, 0, 2]), (1.0, vec![0, 1, 0])],
        );
        let g = GridField::sample(cube(-1.0, 1.0), 0.1, Extension::Error, f).unwrap();
        for p in [HPoint::h1(0.33, -0.41, 0.27), HPoint::h1(-0.97, 0.99, 0.05)] {
            for j in 0..3 {
                let a = g.z_at(FrameKind::Left, j, &p).unwrap();
                let b = cf.z_at(FrameKind::Left, j, &p).unwrap();
                assert!((a - b).abs() < 1e-10, "Z{j}: {a} vs {b}");
                for i in 0..3 {
                    let a = g.zz_at(i, j, &p).unwrap();
                    let b = cf.zz_at(i, j, &p).unwrap();
                    assert!((a - b).abs() < 1e-8, "Z{i}Z{j}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let g = GridField::sample(cube(-1.0, 1.0), 0.5, Extension::Zero, |p| (p.x(0) * 3.1).sin() + p.t()).unwrap();
        let mut buf = Vec::new();
        g.write_text(&mut buf).unwrap();
        let back = GridField::<f64>::read_text(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn chain_rule_identity_and_square() {
        let k = cube(-1.0, 1.0);
        let u = ClosedForm::<f64>::coordinate(1, 0);
        let r = chain_rule_residual(&u, &Smooth1D::square(), 0, &k, DerivativeMode::Analytic { cells: 10 }).unwrap();
        assert!(r <= 1e-10);
        let s = ClosedForm::<f64>::new(1, "sin x cos t", |x| &x[0].sin() * &x[2].cos());
        let r = chain_rule_residual(&s, &Smooth1D::identity(), 1, &k, DerivativeMode::Grid { h: 0.1 }).unwrap();
        assert_eq!(r, 0.0);
    }
}

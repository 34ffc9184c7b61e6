//! Polynomial algebra on phase space `(X, P)`, the normal-coordinate series
//! of the metric and Hamiltonian, Killing vector fields, the order-by-order
//! Killing recursion, the compact/noncompact coefficient duality, closed-form
//! rank-one Hamiltonians, and numerical geodesic conservation checks.

use crate::ratio::{cot_coeff, hamiltonian_coeff, metric_coeff, rat, rat_int, rat_to_f64, Rat, Series};
use crate::space_catalog::SymmetricSpaceModel;
use crate::tensor_core::{SymPairTensor, SymTensorRankD};
use num::{One, Zero};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum FlowError {
    #[error("dimension mismatch")]
    Dimension,
    #[error("recursion equation fails first at order {0}")]
    RecursionOrder(usize),
    #[error("space is not a normalized rank-one model (Jacobi spectrum must be {{|X|^2, 4|X|^2}})")]
    NotNormalizedRankOne,
    #[error("position norm {0:.4} left the chart (limit pi/2) at s = {1:.4}")]
    ChartExit(f64, f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coefficient `c_m` of `<R_X^m P, P>` in the Hamiltonian expansion.
pub fn bernoulli_c(m: usize) -> Rat {
    hamiltonian_coeff(m)
}

// ---------------------------------------------------------------------------
// sparse polynomials in (X, P)
// ---------------------------------------------------------------------------

/// Monomial key: exponents of `x_0..x_{n-1}` followed by `p_0..p_{n-1}`.
type Mono = Box<[u8]>;

/// Sparse polynomial in the `2n` phase-space variables with exact rational
/// coefficients. No zero coefficients are stored; the bidegree grading is
/// recoverable from the keys.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyXP {
    pub n: usize,
    terms: BTreeMap<Mono, Rat>,
}

impl PolyXP {
    pub fn zero(n: usize) -> Self {
        PolyXP { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: Rat) -> Self {
        let mut p = Self::zero(n);
        if !c.is_zero() {
            p.terms.insert(vec![0u8; 2 * n].into_boxed_slice(), c);
        }
        p
    }

    pub fn x(n: usize, i: usize) -> Self {
        let mut key = vec![0u8; 2 * n];
        key[i] = 1;
        let mut p = Self::zero(n);
        p.terms.insert(key.into_boxed_slice(), Rat::one());
        p
    }

    pub fn p(n: usize, i: usize) -> Self {
        let mut key = vec![0u8; 2 * n];
        key[n + i] = 1;
        let mut p = Self::zero(n);
        p.terms.insert(key.into_boxed_slice(), Rat::one());
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u8], &Rat)> {
        self.terms.iter().map(|(k, v)| (k.as_ref(), v))
    }

    fn insert(&mut self, key: Mono, v: Rat) {
        if v.is_zero() {
            return;
        }
        match self.terms.entry(key) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(v);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() += v;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn add(&self, o: &PolyXP) -> PolyXP {
        assert_eq!(self.n, o.n);
        let mut out = self.clone();
        for (k, v) in &o.terms {
            out.insert(k.clone(), v.clone());
        }
        out
    }

    pub fn sub(&self, o: &PolyXP) -> PolyXP {
        assert_eq!(self.n, o.n);
        let mut out = self.clone();
        for (k, v) in &o.terms {
            out.insert(k.clone(), -v.clone());
        }
        out
    }

    pub fn scale(&self, c: &Rat) -> PolyXP {
        if c.is_zero() {
            return PolyXP::zero(self.n);
        }
        PolyXP { n: self.n, terms: self.terms.iter().map(|(k, v)| (k.clone(), v * c)).collect() }
    }

    pub fn mul(&self, o: &PolyXP) -> PolyXP {
        assert_eq!(self.n, o.n);
        let mut out = PolyXP::zero(self.n);
        for (ka, va) in &self.terms {
            for (kb, vb) in &o.terms {
                let key: Vec<u8> = ka.iter().zip(kb.iter()).map(|(a, b)| a + b).collect();
                out.insert(key.into_boxed_slice(), va * vb);
            }
        }
        out
    }

    pub fn d_dx(&self, i: usize) -> PolyXP {
        self.derive(i)
    }

    pub fn d_dp(&self, i: usize) -> PolyXP {
        self.derive(self.n + i)
    }

    fn derive(&self, slot: usize) -> PolyXP {
        let mut out = PolyXP::zero(self.n);
        for (k, v) in &self.terms {
            let e = k[slot];
            if e == 0 {
                continue;
            }
            let mut key = k.clone().into_vec();
            key[slot] -= 1;
            out.insert(key.into_boxed_slice(), v * rat_int(e as i64));
        }
        out
    }

    fn xdeg(&self, k: &Mono) -> usize {
        k[..self.n].iter().map(|&e| e as usize).sum()
    }

    /// Component of exact X-degree `d`.
    pub fn x_component(&self, d: usize) -> PolyXP {
        PolyXP {
            n: self.n,
            terms: self
                .terms
                .iter()
                .filter(|(k, _)| self.xdeg(k) == d)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn max_x_degree(&self) -> usize {
        self.terms.keys().map(|k| self.xdeg(k)).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[Rat], p: &[Rat]) -> Rat {
        let mut acc = Rat::zero();
        for (k, v) in &self.terms {
            let mut term = v.clone();
            for (i, &e) in k.iter().enumerate() {
                for _ in 0..e {
                    term *= if i < self.n { &x[i] } else { &p[i - self.n] };
                }
            }
            acc += term;
        }
        acc
    }

    /// Compiles to a float evaluator for the numeric flows.
    pub fn to_f64_eval(&self) -> PolyEvalF64 {
        PolyEvalF64 {
            n: self.n,
            terms: self.terms.iter().map(|(k, v)| (k.clone(), rat_to_f64(v))).collect(),
        }
    }
}

/// Float-compiled polynomial.
#[derive(Clone, Debug)]
pub struct PolyEvalF64 {
    n: usize,
    terms: Vec<(Mono, f64)>,
}

impl PolyEvalF64 {
    pub fn eval(&self, x: &[f64], p: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (k, c) in &self.terms {
            let mut t = *c;
            for (i, &e) in k.iter().enumerate() {
                let v = if i < self.n { x[i] } else { p[i - self.n] };
                for _ in 0..e {
                    t *= v;
                }
            }
            acc += t;
        }
        acc
    }
}

/// Poisson bracket `{f, g} = sum_i (df/dx_i dg/dp_i - dg/dx_i df/dp_i)`.
pub fn poisson(f: &PolyXP, g: &PolyXP) -> PolyXP {
    assert_eq!(f.n, g.n);
    let n = f.n;
    let mut out = PolyXP::zero(n);
    for i in 0..n {
        let fx = f.d_dx(i);
        let gp = g.d_dp(i);
        if !fx.is_zero() && !gp.is_zero() {
            out = out.add(&fx.mul(&gp));
        }
        let gx = g.d_dx(i);
        let fp = f.d_dp(i);
        if !gx.is_zero() && !fp.is_zero() {
            out = out.sub(&gx.mul(&fp));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// model series
// ---------------------------------------------------------------------------

/// `R_X` applied to a polynomial vector field:
/// `(R_X v)_l = sum_i v_i x_b x_c <R(e_i, e_b) e_c, e_l>`.
pub fn jacobi_apply(space: &SymmetricSpaceModel, v: &[PolyXP]) -> Vec<PolyXP> {
    let n = space.n;
    let mut out = vec![PolyXP::zero(n); n];
    for i in 0..n {
        if v[i].is_zero() {
            continue;
        }
        for b in 0..n {
            for c in 0..n {
                for &(l, ref coeff) in space.curvature.vector(i, b, c) {
                    let term = v[i].mul(&PolyXP::x(n, b)).mul(&PolyXP::x(n, c)).scale(coeff);
                    out[l as usize] = out[l as usize].add(&term);
                }
            }
        }
    }
    out
}

/// `<R_X^m P, P>` as exact polynomials for `m = 0..=order`.
pub fn jacobi_power_forms(space: &SymmetricSpaceModel, order: usize) -> Vec<PolyXP> {
    let n = space.n;
    let mut v: Vec<PolyXP> = (0..n).map(|i| PolyXP::p(n, i)).collect();
    let mut out = Vec::with_capacity(order + 1);
    for m in 0..=order {
        let mut form = PolyXP::zero(n);
        for (i, vi) in v.iter().enumerate() {
            form = form.add(&vi.mul(&PolyXP::p(n, i)));
        }
        out.push(form);
        if m < order {
            v = jacobi_apply(space, &v);
        }
    }
    out
}

/// Hamiltonian series `sum_{m <= order} c_m <R_X^m P, P>`.
pub fn hamiltonian_series(space: &SymmetricSpaceModel, order: usize) -> PolyXP {
    let forms = jacobi_power_forms(space, order);
    let mut h = PolyXP::zero(space.n);
    for (m, f) in forms.iter().enumerate() {
        h = h.add(&f.scale(&hamiltonian_coeff(m)));
    }
    h
}

/// Normal-coordinate metric series as a matrix of polynomials, truncated at
/// `order` curvature powers.
pub fn metric_series(space: &SymmetricSpaceModel, order: usize) -> Vec<Vec<PolyXP>> {
    let n = space.n;
    let mut g = vec![vec![PolyXP::zero(n); n]; n];
    for j in 0..n {
        let mut v: Vec<PolyXP> = (0..n)
            .map(|i| PolyXP::constant(n, if i == j { Rat::one() } else { Rat::zero() }))
            .collect();
        for m in 0..=order {
            let cm = metric_coeff(m);
            for (i, vi) in v.iter().enumerate() {
                g[i][j] = g[i][j].add(&vi.scale(&cm));
            }
            if m < order {
                v = jacobi_apply(space, &v);
            }
        }
    }
    g
}

/// Even Killing vector field `<A X, P>` of an isotropy generator.
pub fn killing_vector_even(space: &SymmetricSpaceModel, a: &crate::space_catalog::IMat) -> PolyXP {
    let n = space.n;
    let mut out = PolyXP::zero(n);
    for r in 0..n {
        for c in 0..n {
            if a[r][c] != 0 {
                out = out.add(&PolyXP::x(n, c).mul(&PolyXP::p(n, r)).scale(&rat_int(a[r][c])));
            }
        }
    }
    out
}

/// Odd Killing vector field `<v, P - 1/3 R_X P - 1/45 R_X^2 P - ...>`,
/// truncated at `order` curvature powers.
pub fn killing_vector_odd(space: &SymmetricSpaceModel, v: &[Rat], order: usize) -> PolyXP {
    let n = space.n;
    let mut w: Vec<PolyXP> = (0..n).map(|i| PolyXP::p(n, i)).collect();
    let mut out = PolyXP::zero(n);
    for m in 0..=order {
        let cm = cot_coeff(m);
        for (i, wi) in w.iter().enumerate() {
            if !v[i].is_zero() {
                out = out.add(&wi.scale(&(cm.clone() * &v[i])));
            }
        }
        if m < order {
            w = jacobi_apply(space, &w);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// the Killing recursion
// ---------------------------------------------------------------------------

/// Taylor coefficient list of a candidate Killing series: `coeffs[s]` is the
/// polynomial `K_{b+2s}(X^{b+2s}, P^d)` of bidegree `(b+2s, d)`; entries past
/// the end are zero.
#[derive(Clone, Debug)]
pub struct CoeffSeries {
    pub n: usize,
    pub d: usize,
    pub b: usize,
    pub coeffs: Vec<PolyXP>,
}

impl CoeffSeries {
    fn at_degree(&self, nn: usize) -> PolyXP {
        if nn < self.b || (nn - self.b) % 2 != 0 {
            return PolyXP::zero(self.n);
        }
        let s = (nn - self.b) / 2;
        self.coeffs.get(s).cloned().unwrap_or_else(|| PolyXP::zero(self.n))
    }

    /// Sum of the stored coefficients (the truncated series itself).
    pub fn series_sum(&self) -> PolyXP {
        let mut out = PolyXP::zero(self.n);
        for c in &self.coeffs {
            out = out.add(c);
        }
        out
    }
}

fn half_momentum_sq(n: usize) -> PolyXP {
    let mut h = PolyXP::zero(n);
    for i in 0..n {
        let pi = PolyXP::p(n, i);
        h = h.add(&pi.mul(&pi));
    }
    h.scale(&rat(1, 2))
}

/// Order-by-order form of `{H, K} = 0`: for every `N <= order`,
/// `{|P|^2/2, K_N} = -sum_{m=1}^{N/2} c_m {<R_X^m P, P>, K_{N-2m}}`.
/// Fails with the first violated order.
pub fn killing_recursion_check(
    space: &SymmetricSpaceModel,
    series: &CoeffSeries,
    order: usize,
) -> Result<(), FlowError> {
    let n = space.n;
    for (s, c) in series.coeffs.iter().enumerate() {
        if !c.is_zero() {
            let expect = series.b + 2 * s;
            for (k, _) in c.terms() {
                let xd: usize = k[..n].iter().map(|&e| e as usize).sum();
                let pd: usize = k[n..].iter().map(|&e| e as usize).sum();
                if xd != expect || pd != series.d {
                    return Err(FlowError::Dimension);
                }
            }
        }
    }
    let forms = jacobi_power_forms(space, order / 2 + 1);
    let hp = half_momentum_sq(n);
    for nn in 1..=order {
        let lhs = poisson(&hp, &series.at_degree(nn));
        let mut rhs = PolyXP::zero(n);
        for m in 1..=nn / 2 {
            let knm = series.at_degree(nn - 2 * m);
            if knm.is_zero() {
                continue;
            }
            rhs = rhs.sub(&poisson(&forms[m], &knm).scale(&hamiltonian_coeff(m)));
        }
        if lhs != rhs {
            return Err(FlowError::RecursionOrder(nn));
        }
    }
    Ok(())
}

/// Coefficient-level duality: multiplies the `s`-th coefficient by `(-1)^s`,
/// the series form of passing to the dual space.
pub fn dualize(series: &CoeffSeries) -> CoeffSeries {
    CoeffSeries {
        n: series.n,
        d: series.d,
        b: series.b,
        coeffs: series
            .coeffs
            .iter()
            .enumerate()
            .map(|(s, c)| if s % 2 == 0 { c.clone() } else { c.scale(&rat_int(-1)) })
            .collect(),
    }
}

/// Product of two coefficient series (symmetric products of Killing fields),
/// regraded by X-degree.
pub fn series_product(a: &CoeffSeries, b: &CoeffSeries) -> CoeffSeries {
    assert_eq!(a.n, b.n);
    let d = a.d + b.d;
    let bb = (a.b + b.b) % 2;
    let mut coeffs: Vec<PolyXP> = Vec::new();
    for (sa, ca) in a.coeffs.iter().enumerate() {
        for (sb, cb) in b.coeffs.iter().enumerate() {
            let deg = a.b + 2 * sa + b.b + 2 * sb;
            let s = (deg - bb) / 2;
            while coeffs.len() <= s {
                coeffs.push(PolyXP::zero(a.n));
            }
            coeffs[s] = coeffs[s].add(&ca.mul(cb));
        }
    }
    CoeffSeries { n: a.n, d, b: bb, coeffs }
}

/// Quadratic phase-space polynomial `K(X, X, P, P)` of a pair tensor.
pub fn sym_pair_poly(t: &SymPairTensor) -> PolyXP {
    let n = t.n;
    let np = crate::tensor_core::pair_count(n);
    let mut out = PolyXP::zero(n);
    for (id, v) in t.iter_nonzero() {
        let (i, j) = crate::tensor_core::pair_unrank(n, (id as usize) / np);
        let (k, l) = crate::tensor_core::pair_unrank(n, (id as usize) % np);
        let mult = rat_int(if i == j { 1 } else { 2 }) * rat_int(if k == l { 1 } else { 2 });
        let term = PolyXP::x(n, i)
            .mul(&PolyXP::x(n, j))
            .mul(&PolyXP::p(n, k))
            .mul(&PolyXP::p(n, l))
            .scale(&(v * mult));
        out = out.add(&term);
    }
    out
}

/// `K(X^d, P^d)` of a rank-`d` tensor.
pub fn rank_d_poly(t: &SymTensorRankD) -> PolyXP {
    let n = t.n;
    let mut out = PolyXP::zero(n);
    for ((a, b), v) in &t.coeffs {
        let mult = rat_int((crate::tensor_core::orderings(a) * crate::tensor_core::orderings(b)) as i64);
        let mut term = PolyXP::constant(n, v * mult);
        for &i in a.iter() {
            term = term.mul(&PolyXP::x(n, i as usize));
        }
        for &i in b.iter() {
            term = term.mul(&PolyXP::p(n, i as usize));
        }
        out = out.add(&term);
    }
    out
}

// ---------------------------------------------------------------------------
// closed-form rank-one Hamiltonian
// ---------------------------------------------------------------------------

/// Exact series branches (in `u = |X|^2`) of the removable-singularity
/// profiles. The closed forms lose precision to cancellation for small `u`,
/// so the series branch covers `|X| < 1/2` with a degree-24 expansion
/// (truncation below 1e-24 there).
fn phi_psi_series() -> (Series, Series, Series, Series) {
    let t = 30usize;
    let sin2 = Series::sin_sq(t);
    let cos2 = Series::cos_sq(t);
    let u = {
        let mut c = vec![Rat::zero(); t];
        c[1] = Rat::one();
        Series::new(c)
    };
    // phi = [3 cos^2 (sin^2 - u) + u sin^2] / [6 u cos^2 sin^2]
    let num = cos2
        .mul(&sin2.add(&u.scale(&rat_int(-1))), t)
        .scale(&rat_int(3))
        .add(&u.mul(&sin2, t));
    let den = u.mul(&cos2, t).mul(&sin2, t).scale(&rat_int(6));
    let phi = num.shift_down(2).div(&den.shift_down(2), 25);
    // psi = (u - sin^2) / (2 u sin^2)
    let num2 = u.add(&sin2.scale(&rat_int(-1)));
    let den2 = u.mul(&sin2, t).scale(&rat_int(2));
    let psi = num2.shift_down(2).div(&den2.shift_down(2), 25);
    let dphi = phi.derivative();
    let dpsi = psi.derivative();
    (phi, dphi, psi, dpsi)
}

fn eval_f64_poly(c: &[f64], u: f64) -> f64 {
    let mut acc = 0.0;
    for &ck in c.iter().rev() {
        acc = acc * u + ck;
    }
    acc
}

/// Profile `phi` of the closed-form Hamiltonian and its `u`-derivative; the
/// series branch covers `|X| < 1e-2`.
pub fn phi_profile(u: f64) -> (f64, f64) {
    use once_cell::sync::Lazy;
    static SERIES: Lazy<(Vec<f64>, Vec<f64>)> = Lazy::new(|| {
        let (phi, dphi, _, _) = phi_psi_series();
        (phi.c.iter().map(rat_to_f64).collect(), dphi.c.iter().map(rat_to_f64).collect())
    });
    let r = u.sqrt();
    if r < 0.5 {
        return (eval_f64_poly(&SERIES.0, u), eval_f64_poly(&SERIES.1, u));
    }
    let (s, c) = (r.sin(), r.cos());
    let (s2, c2) = (s * s, c * c);
    let num = 3.0 * c2 * (s2 - u) + u * s2;
    let den = 6.0 * u * c2 * s2;
    let phi = num / den;
    let dn = -6.0 * s * c * (s2 - u) + 3.0 * c2 * (2.0 * s * c - 2.0 * r) + 2.0 * r * s2 + 2.0 * u * s * c;
    let dd = 12.0 * r * c2 * s2 + 12.0 * u * s * c * (c2 - s2);
    let dphi_dr = (dn * den - num * dd) / (den * den);
    (phi, dphi_dr / (2.0 * r))
}

/// Profile `psi = (u - sin^2 r) / (2 u sin^2 r)` and its `u`-derivative.
pub fn psi_profile(u: f64) -> (f64, f64) {
    use once_cell::sync::Lazy;
    static SERIES: Lazy<(Vec<f64>, Vec<f64>)> = Lazy::new(|| {
        let (_, _, psi, dpsi) = phi_psi_series();
        (psi.c.iter().map(rat_to_f64).collect(), dpsi.c.iter().map(rat_to_f64).collect())
    });
    let r = u.sqrt();
    if r < 0.5 {
        return (eval_f64_poly(&SERIES.0, u), eval_f64_poly(&SERIES.1, u));
    }
    let s2 = r.sin() * r.sin();
    let num = u - s2;
    let den = 2.0 * u * s2;
    let psi = num / den;
    let dn = 2.0 * r - 2.0 * r.sin() * r.cos();
    let dd = 4.0 * r * s2 + 4.0 * u * r.sin() * r.cos();
    let dpsi_dr = (dn * den - num * dd) / (den * den);
    (psi, dpsi_dr / (2.0 * r))
}

/// Float geodesic flow of the closed-form Hamiltonian of a normalized
/// rank-one model.
pub struct Rank1Flow {
    pub n: usize,
    r4: Vec<f64>,
}

impl Rank1Flow {
    pub fn new(space: &SymmetricSpaceModel) -> Result<Self, FlowError> {
        if !space.is_normalized_rank_one() {
            return Err(FlowError::NotNormalizedRankOne);
        }
        Ok(Rank1Flow { n: space.n, r4: space.curvature.to_f64() })
    }

    #[inline]
    fn r(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.r4[((a * self.n + b) * self.n + c) * self.n + d]
    }

    /// `(R_X P)_i = R(P, X, X, e_i)`.
    fn jacobi_p(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for a in 0..n {
            if p[a] == 0.0 {
                continue;
            }
            for b in 0..n {
                if x[b] == 0.0 {
                    continue;
                }
                let w = p[a] * x[b];
                for c in 0..n {
                    if x[c] == 0.0 {
                        continue;
                    }
                    let w2 = w * x[c];
                    for i in 0..n {
                        let rv = self.r(a, b, c, i);
                        if rv != 0.0 {
                            out[i] += rv * w2;
                        }
                    }
                }
            }
        }
        out
    }

    /// Closed-form Hamiltonian value; `|X|` must stay below `pi/2`.
    pub fn hamiltonian(&self, x: &[f64], p: &[f64]) -> Result<f64, FlowError> {
        let u: f64 = x.iter().map(|v| v * v).sum();
        let rr = u.sqrt();
        if rr >= std::f64::consts::FRAC_PI_2 {
            return Err(FlowError::ChartExit(rr, 0.0));
        }
        let pp: f64 = p.iter().map(|v| v * v).sum();
        let xp: f64 = x.iter().zip(p).map(|(a, b)| a * b).sum();
        let g1 = u * pp - xp * xp;
        let jac = self.jacobi_p(x, p);
        let g2: f64 = jac.iter().zip(p).map(|(a, b)| a * b).sum();
        let (phi, _) = phi_profile(u);
        let sec2 = 1.0 / (rr.cos() * rr.cos());
        Ok(0.5 * pp - phi * g1 + sec2 / 6.0 * g2)
    }

    /// Hamilton equations `(dx, dp) = (dH/dp, -dH/dx)`.
    fn rhs(&self, x: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let u: f64 = x.iter().map(|v| v * v).sum();
        let rr = u.sqrt();
        let pp: f64 = p.iter().map(|v| v * v).sum();
        let xp: f64 = x.iter().zip(p).map(|(a, b)| a * b).sum();
        let g1 = u * pp - xp * xp;
        let jac = self.jacobi_p(x, p);
        let g2: f64 = jac.iter().zip(p).map(|(a, b)| a * b).sum();
        let (phi, dphi) = phi_profile(u);
        let cosr = rr.cos();
        let sec2 = 1.0 / (cosr * cosr);
        let tan_over_r = if rr < 1e-4 { 1.0 + u / 3.0 } else { rr.tan() / rr };
        let dsec_factor = sec2 * tan_over_r / 3.0; // d(sec^2/6)/dx_i = x_i * this
        let mut dh_dp = vec![0.0; n];
        for i in 0..n {
            dh_dp[i] = p[i] - phi * (2.0 * u * p[i] - 2.0 * xp * x[i]) + sec2 / 3.0 * jac[i];
        }
        // dG2/dx_i = sum R(a,i,c,d) p_a x_c p_d + sum R(a,b,i,d) p_a x_b p_d
        let mut dg2 = vec![0.0; n];
        for a in 0..n {
            if p[a] == 0.0 {
                continue;
            }
            for d in 0..n {
                if p[d] == 0.0 {
                    continue;
                }
                let w = p[a] * p[d];
                for b in 0..n {
                    if x[b] == 0.0 {
                        continue;
                    }
                    let wb = w * x[b];
                    for i in 0..n {
                        let rv = self.r(a, i, b, d);
                        if rv != 0.0 {
                            dg2[i] += rv * wb;
                        }
                        let rv2 = self.r(a, b, i, d);
                        if rv2 != 0.0 {
                            dg2[i] += rv2 * wb;
                        }
                    }
                }
            }
        }
        let mut dh_dx = vec![0.0; n];
        for i in 0..n {
            dh_dx[i] = -dphi * 2.0 * x[i] * g1 - phi * (2.0 * x[i] * pp - 2.0 * xp * p[i])
                + x[i] * dsec_factor * g2
                + sec2 / 6.0 * dg2[i];
        }
        (dh_dp, dh_dx.iter().map(|v| -v).collect())
    }
}

// ---------------------------------------------------------------------------
// RKF78 integration
// ---------------------------------------------------------------------------

/// Classical 13-stage Fehlberg 7(8) pair.
struct Rkf78;

impl Rkf78 {
    fn a() -> [[f64; 12]; 13] {
        let mut a = [[0.0; 12]; 13];
        a[1][0] = 2.0 / 27.0;
        a[2][0] = 1.0 / 36.0;
        a[2][1] = 1.0 / 12.0;
        a[3][0] = 1.0 / 24.0;
        a[3][2] = 1.0 / 8.0;
        a[4][0] = 5.0 / 12.0;
        a[4][2] = -25.0 / 16.0;
        a[4][3] = 25.0 / 16.0;
        a[5][0] = 1.0 / 20.0;
        a[5][3] = 1.0 / 4.0;
        a[5][4] = 1.0 / 5.0;
        a[6][0] = -25.0 / 108.0;
        a[6][3] = 125.0 / 108.0;
        a[6][4] = -65.0 / 27.0;
        a[6][5] = 125.0 / 54.0;
        a[7][0] = 31.0 / 300.0;
        a[7][4] = 61.0 / 225.0;
        a[7][5] = -2.0 / 9.0;
        a[7][6] = 13.0 / 900.0;
        a[8][0] = 2.0;
        a[8][3] = -53.0 / 6.0;
        a[8][4] = 704.0 / 45.0;
        a[8][5] = -107.0 / 9.0;
        a[8][6] = 67.0 / 90.0;
        a[8][7] = 3.0;
        a[9][0] = -91.0 / 108.0;
        a[9][3] = 23.0 / 108.0;
        a[9][4] = -976.0 / 135.0;
        a[9][5] = 311.0 / 54.0;
        a[9][6] = -19.0 / 60.0;
        a[9][7] = 17.0 / 6.0;
        a[9][8] = -1.0 / 12.0;
        a[10][0] = 2383.0 / 4100.0;
        a[10][3] = -341.0 / 164.0;
        a[10][4] = 4496.0 / 1025.0;
        a[10][5] = -301.0 / 82.0;
        a[10][6] = 2133.0 / 4100.0;
        a[10][7] = 45.0 / 82.0;
        a[10][8] = 45.0 / 164.0;
        a[10][9] = 18.0 / 41.0;
        a[11][0] = 3.0 / 205.0;
        a[11][5] = -6.0 / 41.0;
        a[11][6] = -3.0 / 205.0;
        a[11][7] = -3.0 / 41.0;
        a[11][8] = 3.0 / 41.0;
        a[11][9] = 6.0 / 41.0;
        a[12][0] = -1777.0 / 4100.0;
        a[12][3] = -341.0 / 164.0;
        a[12][4] = 4496.0 / 1025.0;
        a[12][5] = -289.0 / 82.0;
        a[12][6] = 2193.0 / 4100.0;
        a[12][7] = 51.0 / 82.0;
        a[12][8] = 33.0 / 164.0;
        a[12][9] = 12.0 / 41.0;
        a[12][11] = 1.0;
        a
    }

    const B8: [f64; 13] = [
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        34.0 / 105.0,
        9.0 / 35.0,
        9.0 / 35.0,
        9.0 / 280.0,
        9.0 / 280.0,
        0.0,
        41.0 / 840.0,
        41.0 / 840.0,
    ];
}

/// One RKF78 step with the embedded error estimate; shrinks the step until
/// the estimate meets `tol` and returns `(taken, proposed_next)`.
fn rkf78_step(f: &dyn Fn(&[f64]) -> Vec<f64>, y: &mut Vec<f64>, h0: f64, tol: f64) -> (f64, f64) {
    let a = Rkf78::a();
    let mut h = h0;
    loop {
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(13);
        for i in 0..13 {
            let mut yi = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let aij = a[i][j];
                if aij != 0.0 {
                    for (yv, kv) in yi.iter_mut().zip(kj.iter()) {
                        *yv += h * aij * kv;
                    }
                }
            }
            k.push(f(&yi));
        }
        let mut err: f64 = 0.0;
        for d in 0..y.len() {
            let e = h * 41.0 / 840.0 * (k[0][d] + k[10][d] - k[11][d] - k[12][d]);
            err = err.max(e.abs());
        }
        if err <= tol || h.abs() < 1e-12 {
            for (i, ki) in k.iter().enumerate() {
                let b = Rkf78::B8[i];
                if b != 0.0 {
                    for (yv, kv) in y.iter_mut().zip(ki.iter()) {
                        *yv += h * b * kv;
                    }
                }
            }
            let grow = if err > 0.0 { 0.9 * (tol / err).powf(1.0 / 8.0) } else { 2.0 };
            return (h, h * grow.clamp(0.2, 2.0));
        }
        h *= (0.9 * (tol / err).powf(1.0 / 8.0)).clamp(0.1, 0.9);
    }
}

/// One trajectory sample.
#[derive(Clone, Debug)]
pub struct GeodesicState {
    pub s: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub value: f64,
}

/// Result of one conservation run.
pub struct ConservationRun {
    pub max_deviation: f64,
    pub energy_drift: f64,
    pub states: Vec<GeodesicState>,
}

/// Integrates Hamilton's equations of the closed-form rank-one Hamiltonian
/// with the adaptive 8th-order integrator and reports the maximal deviation
/// of the candidate invariant.
pub fn integrate_and_check(
    space: &SymmetricSpaceModel,
    invariant: &PolyEvalF64,
    x0: &[f64],
    p0: &[f64],
    s_max: f64,
    steps: usize,
    tol: f64,
) -> Result<ConservationRun, FlowError> {
    let flow = Rank1Flow::new(space)?;
    let n = space.n;
    let mut y: Vec<f64> = x0.iter().chain(p0.iter()).cloned().collect();
    let f = |yv: &[f64]| -> Vec<f64> {
        let (dx, dp) = flow.rhs(&yv[..n], &yv[n..]);
        dx.into_iter().chain(dp).collect()
    };
    let value0 = invariant.eval(x0, p0);
    let h0 = flow.hamiltonian(x0, p0)?;
    let mut s = 0.0f64;
    let mut h = s_max / steps.max(8) as f64;
    let mut max_dev = 0.0f64;
    let mut energy_drift = 0.0f64;
    let mut states = vec![GeodesicState { s, x: x0.to_vec(), p: p0.to_vec(), value: value0 }];
    while s < s_max {
        if s + h > s_max {
            h = s_max - s;
        }
        let (taken, next) = rkf78_step(&f, &mut y, h, tol);
        s += taken;
        h = next.min(s_max / 8.0);
        let (x, p) = y.split_at(n);
        let rnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm >= std::f64::consts::FRAC_PI_2 {
            return Err(FlowError::ChartExit(rnorm, s));
        }
        let val = invariant.eval(x, p);
        max_dev = max_dev.max((val - value0).abs());
        energy_drift = energy_drift.max((flow.hamiltonian(x, p)? - h0).abs());
        states.push(GeodesicState { s, x: x.to_vec(), p: p.to_vec(), value: val });
    }
    Ok(ConservationRun { max_deviation: max_dev, energy_drift, states })
}

/// Writes a trajectory as CSV: `s, x..., p..., value`.
pub fn dump_trajectory_csv<P: AsRef<std::path::Path>>(
    path: P,
    n: usize,
    states: &[GeodesicState],
) -> Result<(), FlowError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let xs: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    let ps: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
    writeln!(f, "s,{},{},value", xs.join(","), ps.join(","))?;
    for st in states {
        let xs: Vec<String> = st.x.iter().map(|v| format!("{v:.17e}")).collect();
        let ps: Vec<String> = st.p.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(f, "{:.17e},{},{},{:.17e}", st.s, xs.join(","), ps.join(","), st.value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space_catalog::{make_cpm, make_sphere};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_poly(rng: &mut ChaCha8Rng, n: usize, deg: usize) -> PolyXP {
        let mut out = PolyXP::zero(n);
        for _ in 0..6 {
            let mut term = PolyXP::constant(n, rat_int(rng.gen_range(-3..=3)));
            for _ in 0..rng.gen_range(0..=deg) {
                let v = rng.gen_range(0..2 * n);
                term = term.mul(&if v < n { PolyXP::x(n, v) } else { PolyXP::p(n, v - n) });
            }
            out = out.add(&term);
        }
        out
    }

    #[test]
    fn poisson_canonical_pairs() {
        let n = 3;
        for i in 0..n {
            for j in 0..n {
                let b = poisson(&PolyXP::x(n, i), &PolyXP::p(n, j));
                let expect = PolyXP::constant(n, if i == j { Rat::one() } else { Rat::zero() });
                assert_eq!(b, expect);
            }
        }
        // {|P|^2/2, <v, X>} = -<v, P>
        let v = [rat_int(2), rat_int(-1), rat_int(5)];
        let mut vx = PolyXP::zero(n);
        let mut vp = PolyXP::zero(n);
        for i in 0..n {
            vx = vx.add(&PolyXP::x(n, i).scale(&v[i]));
            vp = vp.add(&PolyXP::p(n, i).scale(&v[i]));
        }
        assert_eq!(poisson(&half_momentum_sq(n), &vx), vp.scale(&rat_int(-1)));
        // {H, H} = 0
        let s = make_sphere(3, &Rat::one()).unwrap();
        let h = hamiltonian_series(&s, 2);
        assert!(poisson(&h, &h).is_zero());
    }

    #[test]
    fn poisson_antisymmetry_bilinearity_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2;
        for _ in 0..8 {
            let f = rand_poly(&mut rng, n, 2);
            let g = rand_poly(&mut rng, n, 2);
            let h = rand_poly(&mut rng, n, 2);
            assert_eq!(poisson(&f, &g), poisson(&g, &f).scale(&rat_int(-1)));
            let sum = f.add(&g);
            assert_eq!(poisson(&sum, &h), poisson(&f, &h).add(&poisson(&g, &h)));
            let j = poisson(&f, &poisson(&g, &h))
                .add(&poisson(&g, &poisson(&h, &f)))
                .add(&poisson(&h, &poisson(&f, &g)));
            assert!(j.is_zero());
        }
    }

    #[test]
    fn hamiltonian_series_orders() {
        let s = make_sphere(4, &rat(3, 2)).unwrap();
        let h0 = hamiltonian_series(&s, 0);
        assert_eq!(h0, half_momentum_sq(4));
        // order 1 on the sphere: 1/2 |P|^2 + kappa/6 (|X|^2 |P|^2 - <X,P>^2)
        let h1 = hamiltonian_series(&s, 1);
        let n = 4;
        let mut xx = PolyXP::zero(n);
        let mut pp = PolyXP::zero(n);
        let mut xp = PolyXP::zero(n);
        for i in 0..n {
            xx = xx.add(&PolyXP::x(n, i).mul(&PolyXP::x(n, i)));
            pp = pp.add(&PolyXP::p(n, i).mul(&PolyXP::p(n, i)));
            xp = xp.add(&PolyXP::x(n, i).mul(&PolyXP::p(n, i)));
        }
        let expect = half_momentum_sq(n)
            .add(&xx.mul(&pp).sub(&xp.mul(&xp)).scale(&(rat(1, 6) * rat(3, 2))));
        assert_eq!(h1, expect);
    }

    #[test]
    fn metric_series_coefficients() {
        // g to order 2 = Id - 1/3 R_X + 2/45 R_X^2
        let s = make_sphere(3, &Rat::one()).unwrap();
        let g = metric_series(&s, 2);
        let n = 3;
        for j in 0..n {
            let mut col: Vec<PolyXP> = (0..n)
                .map(|i| PolyXP::constant(n, if i == j { Rat::one() } else { Rat::zero() }))
                .collect();
            let mut acc = col.clone();
            col = jacobi_apply(&s, &col);
            for (i, c) in col.iter().enumerate() {
                acc[i] = acc[i].add(&c.scale(&rat(-1, 3)));
            }
            let col2 = jacobi_apply(&s, &col);
            for (i, c) in col2.iter().enumerate() {
                acc[i] = acc[i].add(&c.scale(&rat(2, 45)));
            }
            for i in 0..n {
                assert_eq!(g[i][j], acc[i]);
            }
        }
    }

    #[test]
    fn even_killing_fields_commute_with_the_hamiltonian() {
        let s = make_sphere(2, &Rat::one()).unwrap();
        let h = hamiltonian_series(&s, 6);
        for a in &s.isotropy_gens {
            let v = killing_vector_even(&s, a);
            assert!(v.x_component(0).is_zero()); // top-slot value at the origin
            assert!(poisson(&h, &v).is_zero());
        }
        let zero_gen = vec![vec![0i64; 2]; 2];
        assert!(killing_vector_even(&s, &zero_gen).is_zero());
    }

    #[test]
    fn odd_killing_fields_commute_to_truncation_order() {
        let s = make_sphere(2, &Rat::one()).unwrap();
        let order = 3;
        let h = hamiltonian_series(&s, order);
        let v = killing_vector_odd(&s, &[Rat::one(), rat_int(2)], order);
        let br = poisson(&h, &v);
        for d in 0..=(2 * order - 1) {
            assert!(br.x_component(d).is_zero(), "degree {d} fails");
        }
        // flat model: exactly <v, P>
        let flat = {
            let v = serde_json::json!({"h_dim": 0, "m_dim": 2, "brackets": [], "inner_product": ["1","1"]});
            let f = crate::space_catalog::SpaceFile::from_json(&v).unwrap();
            crate::space_catalog::make_from_structure_constants(&f, "flat").unwrap()
        };
        let vf = killing_vector_odd(&flat, &[Rat::one(), rat_int(2)], 5);
        let expect = PolyXP::p(2, 0).add(&PolyXP::p(2, 1).scale(&rat_int(2)));
        assert_eq!(vf, expect);
    }

    #[test]
    fn a_operator_identity() {
        // {|P|^2/2, .}^(2q-1) applied to <R_X^q P, P> vanishes
        for space in [make_sphere(3, &Rat::one()).unwrap(), make_cpm(2).unwrap()] {
            let hp = half_momentum_sq(space.n);
            for q in [1usize, 2] {
                let forms = jacobi_power_forms(&space, q);
                let mut cur = forms[q].clone();
                for _ in 0..(2 * q - 1) {
                    cur = poisson(&hp, &cur);
                }
                assert!(cur.is_zero(), "{} q={q}", space.name);
            }
        }
    }

    #[test]
    fn hamiltonian_partials_match_closed_expansion() {
        let s = make_cpm(2).unwrap();
        let n = s.n;
        let order = 3usize;
        let h = hamiltonian_series(&s, order);
        let mut rpow: Vec<Vec<PolyXP>> = vec![(0..n).map(|i| PolyXP::p(n, i)).collect()];
        for _ in 0..order {
            rpow.push(jacobi_apply(&s, rpow.last().unwrap()));
        }
        for i in 0..n {
            let direct = h.d_dx(i);
            let mut closed = PolyXP::zero(n);
            for a in 0..order {
                for b in 0..order {
                    if a + b + 1 > order {
                        continue;
                    }
                    let mut term = PolyXP::zero(n);
                    for aa in 0..n {
                        for bb in 0..n {
                            for cc in 0..n {
                                let rv = s.curvature.value(aa, bb, cc, i);
                                if rv.is_zero() {
                                    continue;
                                }
                                term = term.add(
                                    &PolyXP::x(n, aa).mul(&rpow[a][bb]).mul(&rpow[b][cc]).scale(&rv),
                                );
                            }
                        }
                    }
                    closed = closed.add(&term.scale(&(rat_int(2) * hamiltonian_coeff(a + b + 1))));
                }
            }
            let diff = direct.sub(&closed);
            for d in 0..=(2 * order - 1) {
                assert!(diff.x_component(d).is_zero(), "partial x_{i} at degree {d}");
            }
            let direct_p = h.d_dp(i);
            let mut closed_p = PolyXP::p(n, i);
            for (m, rp) in rpow.iter().enumerate().skip(1) {
                closed_p = closed_p.add(&rp[i].scale(&(rat_int(2) * hamiltonian_coeff(m))));
            }
            assert_eq!(direct_p, closed_p);
        }
    }

    fn odd_field_series(s: &SymmetricSpaceModel, v: &[Rat], order: usize) -> CoeffSeries {
        let n = s.n;
        let mut w: Vec<PolyXP> = (0..n).map(|i| PolyXP::p(n, i)).collect();
        let mut coeffs = Vec::new();
        for m in 0..=order {
            let mut c = PolyXP::zero(n);
            for (i, wi) in w.iter().enumerate() {
                if !v[i].is_zero() {
                    c = c.add(&wi.scale(&(cot_coeff(m) * &v[i])));
                }
            }
            coeffs.push(c);
            w = jacobi_apply(s, &w);
        }
        CoeffSeries { n, d: 1, b: 0, coeffs }
    }

    #[test]
    fn recursion_accepts_squared_odd_fields_and_rejects_perturbations() {
        let s = make_sphere(2, &Rat::one()).unwrap();
        let n = 2;
        let sa = odd_field_series(&s, &[Rat::one(), Rat::zero()], 7);
        let sb = odd_field_series(&s, &[Rat::zero(), Rat::one()], 7);
        let prod = series_product(&sa, &sb);
        killing_recursion_check(&s, &prod, 8).expect("squared odd field is a Killing series");
        // negative control: a perturbed coefficient must fail with the order reported
        let mut bad = prod.clone();
        bad.coeffs[1] = bad.coeffs[1].add(
            &PolyXP::x(n, 0)
                .mul(&PolyXP::x(n, 0))
                .mul(&PolyXP::p(n, 0))
                .mul(&PolyXP::p(n, 1))
                .scale(&rat_int(2)),
        );
        match killing_recursion_check(&s, &bad, 8).unwrap_err() {
            FlowError::RecursionOrder(o) => assert!(o >= 2, "order {o}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn dualize_flips_against_sign_flipped_curvature() {
        let s = make_sphere(3, &Rat::one()).unwrap();
        let neg = s.rescaled(&rat_int(-1));
        let order = 6usize;
        let odd = odd_field_series(&s, &[Rat::one(), rat_int(2), Rat::zero()], order);
        let sq = series_product(&odd, &odd);
        killing_recursion_check(&s, &sq, order).unwrap();
        let dual = dualize(&sq);
        killing_recursion_check(&neg, &dual, order)
            .expect("dualized series must solve the sign-flipped model");
        assert!(killing_recursion_check(&neg, &sq, order).is_err());
        // single-term series: dualizing negates the s = 1 coefficient only
        let single = CoeffSeries {
            n: 3,
            d: 2,
            b: 0,
            coeffs: vec![PolyXP::zero(3), half_momentum_sq(3).mul(&PolyXP::x(3, 0)).mul(&PolyXP::x(3, 1))],
        };
        let dual_single = dualize(&single);
        assert_eq!(dual_single.coeffs[1], single.coeffs[1].scale(&rat_int(-1)));
        let const_only = CoeffSeries { n: 3, d: 2, b: 0, coeffs: vec![half_momentum_sq(3).mul(&half_momentum_sq(3))] };
        assert_eq!(dualize(&const_only).coeffs[0], const_only.coeffs[0]);
    }

    #[test]
    fn profile_functions() {
        let (phi0, _) = phi_profile(0.0);
        assert!(phi0.abs() < 1e-15);
        let (psi0, _) = psi_profile(0.0);
        assert!((psi0 - 1.0 / 6.0).abs() < 1e-15);
        // exact identity: on the unit sphere the same profile arises as
        // 1/(2u) - 1/(2 sin^2 r) + 1/(6 cos^2 r); compare series exactly
        let (phi, _, _, _) = phi_psi_series();
        let t = 30usize;
        let sin2 = Series::sin_sq(t);
        let cos2 = Series::cos_sq(t);
        let u_over_sin2 = {
            // u / sin^2 = 1 / (sin^2 / u)
            let one = Series::new(vec![Rat::one()]);
            one.div(&sin2.shift_down(1), t)
        };
        let inv_cos2 = Series::new(vec![Rat::one()]).div(&cos2, t);
        // (1 - u/sin^2) / (2u) + 1/(6 cos^2)
        let mut one_minus = u_over_sin2.scale(&rat_int(-1));
        one_minus.c[0] += Rat::one();
        let alt = one_minus.shift_down(1).scale(&rat(1, 2)).add(&inv_cos2.scale(&rat(1, 6)));
        for k in 0..20 {
            assert_eq!(phi.c[k], alt.c[k], "phi coefficient {k}");
        }
        // branches agree where the closed form is well conditioned
        for u in [0.26f64, 0.3, 0.4, 0.2401] {
            let r: f64 = u.sqrt();
            let (s, c) = (r.sin(), r.cos());
            let phi_closed = (3.0 * c * c * (s * s - u) + u * s * s) / (6.0 * u * c * c * s * s);
            let (phi_here, _) = phi_profile(u);
            assert!(
                (phi_here - phi_closed).abs() <= 2e-13 * phi_closed.abs().max(1e-2),
                "u={u}: {phi_here} vs {phi_closed}"
            );
        }
        for u in [0.01f64, 0.3, 1.2] {
            let d = 1e-6;
            let (_, dphi) = phi_profile(u);
            let (pp, _) = phi_profile(u + d);
            let (pm, _) = phi_profile(u - d);
            assert!((dphi - (pp - pm) / (2.0 * d)).abs() < 1e-6, "u={u}");
            let (_, dpsi) = psi_profile(u);
            let (qp, _) = psi_profile(u + d);
            let (qm, _) = psi_profile(u - d);
            assert!((dpsi - (qp - qm) / (2.0 * d)).abs() < 1e-6, "u={u}");
        }
    }

    #[test]
    fn closed_form_matches_series_on_cpm() {
        let s = make_cpm(2).unwrap();
        let flow = Rank1Flow::new(&s).unwrap();
        let h3 = hamiltonian_series(&s, 3).to_f64_eval();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let scale = 0.03 / (s.n as f64).sqrt();
            let x: Vec<f64> = (0..s.n).map(|_| rng.gen_range(-1.0f64..1.0) * scale).collect();
            let p: Vec<f64> = (0..s.n).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
            let closed = flow.hamiltonian(&x, &p).unwrap();
            let series = h3.eval(&x, &p);
            assert!((closed - series).abs() < 1e-12, "closed {closed} vs series {series}");
        }
        // the truncation error scales like |X|^8: doubling the radius grows
        // the defect by about 2^8
        let dir: Vec<f64> = vec![0.6, -0.3, 0.55, 0.2];
        let nrm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let p = vec![0.8, 0.3, -0.5, 0.7];
        let defect = |radius: f64| -> f64 {
            let x: Vec<f64> = dir.iter().map(|v| v * radius / nrm).collect();
            (flow.hamiltonian(&x, &p).unwrap() - h3.eval(&x, &p)).abs()
        };
        let e1 = defect(0.1);
        let e2 = defect(0.05);
        let ratio = e1 / e2;
        assert!((100.0..500.0).contains(&ratio), "X^8 scaling violated: ratio {ratio}");
        let p0 = vec![1.0, 2.0, 0.5, -1.0];
        let h = flow.hamiltonian(&[0.0; 4], &p0).unwrap();
        let pp: f64 = p0.iter().map(|v| v * v).sum();
        assert!((h - 0.5 * pp).abs() < 1e-14);
        assert!(flow.hamiltonian(&[1.6, 0.0, 0.0, 0.0], &p0).is_err());
        // specialized psi-form agrees with the generic closed form on cpm
        let j = crate::space_catalog::complex_structure(2);
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.4f64..0.4)).collect();
            let p: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
            let u: f64 = x.iter().map(|v| v * v).sum();
            let ppv: f64 = p.iter().map(|v| v * v).sum();
            let xp: f64 = x.iter().zip(&p).map(|(a, b)| a * b).sum();
            let jx: Vec<f64> = (0..4)
                .map(|r| (0..4).map(|c| j[r][c] as f64 * x[c]).sum())
                .collect();
            let jxp: f64 = jx.iter().zip(&p).map(|(a, b)| a * b).sum();
            let (psi, _) = psi_profile(u);
            let r = u.sqrt();
            let spec = 0.5 * ppv + psi * (u * ppv - xp * xp) + jxp * jxp / (2.0 * r.cos() * r.cos());
            let gen = flow.hamiltonian(&x, &p).unwrap();
            assert!((spec - gen).abs() < 1e-13, "{spec} vs {gen}");
        }
    }

    #[test]
    fn integrator_conserves_energy_and_isotropy_fields() {
        let s = make_cpm(2).unwrap();
        let j = crate::space_catalog::complex_structure(2);
        let vj = killing_vector_even(&s, &j).to_f64_eval();
        let x0 = [0.12, -0.2, 0.05, 0.08];
        let p0 = [0.9, 0.1, -0.4, 0.7];
        let run = integrate_and_check(&s, &vj, &x0, &p0, 1.0, 64, 1e-12).unwrap();
        assert!(run.max_deviation <= 1e-9, "deviation {}", run.max_deviation);
        assert!(run.energy_drift <= 1e-10, "energy drift {}", run.energy_drift);
    }

    #[test]
    fn rkf78_is_high_order_on_the_oscillator() {
        let f = |y: &[f64]| vec![y[1], -y[0]];
        let run = |steps: usize| -> f64 {
            let mut y = vec![1.0, 0.0];
            let h = 2.0 * std::f64::consts::PI / steps as f64;
            for _ in 0..steps {
                rkf78_step(&f, &mut y, h, f64::INFINITY);
            }
            ((y[0] - 1.0).powi(2) + y[1].powi(2)).sqrt()
        };
        let e1 = run(10);
        let e2 = run(20);
        assert!(e1 / e2 > 60.0, "order too low: e1={e1:.3e} e2={e2:.3e}");
        assert!(e2 < 1e-8, "e2={e2:.3e}");
    }

    #[test]
    fn trajectory_dump_format() {
        let states = vec![
            GeodesicState { s: 0.0, x: vec![0.0, 0.1], p: vec![1.0, 0.0], value: 0.5 },
            GeodesicState { s: 0.5, x: vec![0.2, 0.1], p: vec![0.9, 0.1], value: 0.5 },
        ];
        let path = std::env::temp_dir().join("kl_traj_test.csv");
        dump_trajectory_csv(&path, 2, &states).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("s,x0,x1,p0,p1,value"));
        assert_eq!(text.lines().count(), 3);
        std::fs::remove_file(path).ok();
    }
}

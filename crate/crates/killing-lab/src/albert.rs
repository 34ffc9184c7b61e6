//! Octonions, the 27-dimensional Jordan algebra of Hermitian 3x3 octonion
//! matrices, the embedded Cayley plane, and a geodesic conservation verifier
//! that works directly on the embedded submanifold (independent of normal
//! coordinates).

use crate::ratio::Rat;
use num::{One, Zero};
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum AlbertError {
    #[error("expected a trace-free element, got trace {0}")]
    NonzeroTrace(String),
    #[error("point violates the Cayley-plane constraints (residual {0:.3e})")]
    ConstraintViolation(f64),
    #[error("constraint drift {0:.3e} exceeded the abort threshold {1:.3e} at s = {2:.4}")]
    ConstraintDrift(f64, f64, f64),
}

// ---------------------------------------------------------------------------
// octonions
// ---------------------------------------------------------------------------

/// Multiplication table for the basis `1, e1, ..., e7`: `TABLE[i][j] = (sign,
/// index)` with the cyclic convention `e_i e_{i+1} = e_{i+3}` (indices mod 7).
fn octonion_table() -> &'static [[(i8, u8); 8]; 8] {
    use once_cell::sync::Lazy;
    static TABLE: Lazy<[[(i8, u8); 8]; 8]> = Lazy::new(|| {
        let mut t = [[(0i8, 0u8); 8]; 8];
        for i in 0..8 {
            t[0][i] = (1, i as u8);
            t[i][0] = (1, i as u8);
        }
        for i in 1..8 {
            t[i][i] = (-1, 0);
        }
        // triples (a, a+1, a+3) over 1..7, cyclically closed
        for a in 1..=7u8 {
            let b = (a % 7) + 1;
            let c = ((a + 2) % 7) + 1;
            for (x, y, z) in [(a, b, c), (b, c, a), (c, a, b)] {
                t[x as usize][y as usize] = (1, z);
                t[y as usize][x as usize] = (-1, z);
            }
        }
        t
    });
    &TABLE
}

/// Scalar interface shared by exact rational and floating octonion algebra.
pub trait Scalar:
    Clone + PartialEq + Zero + One + Sub<Output = Self> + Neg<Output = Self>
{
}

impl<T> Scalar for T where
    T: Clone + PartialEq + Zero + One + Sub<Output = T> + Neg<Output = T>
{
}

/// Octonion over a scalar type, components on the basis `1, e1..e7`.
#[derive(Clone, Debug, PartialEq)]
pub struct Octonion<T: Scalar> {
    pub c: [T; 8],
}

impl<T: Scalar> Octonion<T> {
    pub fn zero() -> Self {
        Octonion { c: std::array::from_fn(|_| T::zero()) }
    }

    pub fn one() -> Self {
        let mut o = Self::zero();
        o.c[0] = T::one();
        o
    }

    pub fn basis(i: usize) -> Self {
        let mut o = Self::zero();
        o.c[i] = T::one();
        o
    }

    pub fn conj(&self) -> Self {
        let mut o = self.clone();
        for i in 1..8 {
            o.c[i] = -o.c[i].clone();
        }
        o
    }

    pub fn re(&self) -> T {
        self.c[0].clone()
    }

    pub fn norm_sq(&self) -> T {
        self.c.iter().fold(T::zero(), |acc, x| acc + x.clone() * x.clone())
    }

    pub fn scale(&self, k: &T) -> Self {
        Octonion { c: std::array::from_fn(|i| self.c[i].clone() * k.clone()) }
    }
}

impl<T: Scalar> Add for Octonion<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Octonion { c: std::array::from_fn(|i| self.c[i].clone() + rhs.c[i].clone()) }
    }
}

impl<T: Scalar> Sub for Octonion<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Octonion { c: std::array::from_fn(|i| self.c[i].clone() - rhs.c[i].clone()) }
    }
}

impl<T: Scalar> Neg for Octonion<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Octonion { c: self.c.map(|x| -x) }
    }
}

impl<T: Scalar> Mul for Octonion<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        oct_mul(&self, &rhs)
    }
}

/// Product under the fixed basis table; norm-multiplicative.
pub fn oct_mul<T: Scalar>(a: &Octonion<T>, b: &Octonion<T>) -> Octonion<T> {
    let table = octonion_table();
    let mut out = Octonion::<T>::zero();
    for i in 0..8 {
        if a.c[i].is_zero() {
            continue;
        }
        for j in 0..8 {
            if b.c[j].is_zero() {
                continue;
            }
            let (s, k) = table[i][j];
            let term = a.c[i].clone() * b.c[j].clone();
            let cur = out.c[k as usize].clone();
            out.c[k as usize] = if s > 0 { cur + term } else { cur - term };
        }
    }
    out
}

pub fn oct_inner<T: Scalar>(a: &Octonion<T>, b: &Octonion<T>) -> T {
    let mut acc = T::zero();
    for i in 0..8 {
        acc = acc + a.c[i].clone() * b.c[i].clone();
    }
    acc
}

// ---------------------------------------------------------------------------
// Albert algebra H3(O)
// ---------------------------------------------------------------------------

/// Hermitian 3x3 octonion matrix `(r1, r2, r3; x1, x2, x3)`:
/// diagonal `r1, r2, r3`, entries `x1 = A_{23}`, `x2 = A_{31}`, `x3 = A_{12}`
/// (conjugates mirrored).
#[derive(Clone, Debug, PartialEq)]
pub struct AlbertElement<T: Scalar> {
    pub r: [T; 3],
    pub x: [Octonion<T>; 3],
}

pub const ALBERT_DIM: usize = 27;

impl<T: Scalar> AlbertElement<T> {
    pub fn zero() -> Self {
        AlbertElement {
            r: std::array::from_fn(|_| T::zero()),
            x: std::array::from_fn(|_| Octonion::zero()),
        }
    }

    /// The rank-one idempotent `diag(1, 0, 0)`.
    pub fn base_point() -> Self {
        let mut e = Self::zero();
        e.r[0] = T::one();
        e
    }

    /// Coordinates on the 27-dimensional basis: `r1, r2, r3`, then the three
    /// octonion components.
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(ALBERT_DIM);
        for ri in &self.r {
            v.push(ri.clone());
        }
        for xi in &self.x {
            for c in &xi.c {
                v.push(c.clone());
            }
        }
        v
    }

    pub fn from_vec(v: &[T]) -> Self {
        assert_eq!(v.len(), ALBERT_DIM);
        let mut out = Self::zero();
        out.r = [v[0].clone(), v[1].clone(), v[2].clone()];
        for i in 0..3 {
            for c in 0..8 {
                out.x[i].c[c] = v[3 + 8 * i + c].clone();
            }
        }
        out
    }

    pub fn basis(k: usize) -> Self {
        let mut v = vec![T::zero(); ALBERT_DIM];
        v[k] = T::one();
        Self::from_vec(&v)
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            out.r[i] = self.r[i].clone() + o.r[i].clone();
            out.x[i] = self.x[i].clone() + o.x[i].clone();
        }
        out
    }

    pub fn sub(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            out.r[i] = self.r[i].clone() - o.r[i].clone();
            out.x[i] = self.x[i].clone() - o.x[i].clone();
        }
        out
    }

    pub fn scale(&self, k: &T) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            out.r[i] = self.r[i].clone() * k.clone();
            out.x[i] = self.x[i].scale(k);
        }
        out
    }

    pub fn trace(&self) -> T {
        self.r[0].clone() + self.r[1].clone() + self.r[2].clone()
    }

    /// `det = r1 r2 r3 + 2 Re(x1 x2 x3) - r1|x1|^2 - r2|x2|^2 - r3|x3|^2`.
    pub fn det(&self) -> T {
        let prod = oct_mul(&oct_mul(&self.x[0], &self.x[1]), &self.x[2]);
        let two_re = prod.re().clone() + prod.re();
        self.r[0].clone() * self.r[1].clone() * self.r[2].clone() + two_re
            - self.r[0].clone() * self.x[0].norm_sq()
            - self.r[1].clone() * self.x[1].norm_sq()
            - self.r[2].clone() * self.x[2].norm_sq()
    }

    /// Jordan product `A o B = (AB + BA)/2` computed componentwise from the
    /// Hermitian representation; the result is Hermitian again.
    pub fn jordan_mul(&self, o: &Self) -> Self
    where
        T: ScalarDiv2,
    {
        let (a, b) = (self, o);
        // matrix entries: A = [[r1, x3*, x2], [x3, r2, x1*], ... ] -- we fix
        // the layout A_{12} = x3*, A_{13} = x2*, A_{23} = x1 with Hermitian
        // mirrors, matching the determinant formula above.
        // Work with full 3x3 octonion matrices to avoid sign slips.
        let am = a.to_matrix();
        let bm = b.to_matrix();
        let mut sym = [[Octonion::<T>::zero(), Octonion::zero(), Octonion::zero()],
            [Octonion::zero(), Octonion::zero(), Octonion::zero()],
            [Octonion::zero(), Octonion::zero(), Octonion::zero()]];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = Octonion::zero();
                for k in 0..3 {
                    acc = acc + oct_mul(&am[i][k], &bm[k][j]) + oct_mul(&bm[i][k], &am[k][j]);
                }
                sym[i][j] = acc.scale(&T::half());
            }
        }
        Self::from_matrix(&sym)
    }

    fn to_matrix(&self) -> [[Octonion<T>; 3]; 3] {
        let r = |i: usize| {
            let mut o = Octonion::<T>::zero();
            o.c[0] = self.r[i].clone();
            o
        };
        [
            [r(0), self.x[2].conj(), self.x[1].clone()],
            [self.x[2].clone(), r(1), self.x[0].conj()],
            [self.x[1].conj(), self.x[0].clone(), r(2)],
        ]
    }

    fn from_matrix(m: &[[Octonion<T>; 3]; 3]) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            out.r[i] = m[i][i].re();
        }
        out.x[0] = m[2][1].clone();
        out.x[1] = m[0][2].conj().clone();
        out.x[2] = m[1][0].clone();
        out
    }

    /// Inner product `<A, B> = Tr(A o B)`, computed directly.
    pub fn inner(&self, o: &Self) -> T {
        // Tr(A o B) = sum r_i s_i + 2 sum <x_i, y_i>
        let mut acc = T::zero();
        for i in 0..3 {
            acc = acc + self.r[i].clone() * o.r[i].clone();
            let d = oct_inner(&self.x[i], &o.x[i]);
            acc = acc + d.clone() + d;
        }
        acc
    }

    pub fn norm_sq(&self) -> T {
        self.inner(self)
    }
}

/// Division by two, needed only for the Jordan product.
pub trait ScalarDiv2: Scalar {
    fn half() -> Self;
}

impl ScalarDiv2 for Rat {
    fn half() -> Self {
        crate::ratio::rat(1, 2)
    }
}

impl ScalarDiv2 for f64 {
    fn half() -> Self {
        0.5
    }
}

// ---------------------------------------------------------------------------
// trilinear form
// ---------------------------------------------------------------------------

/// `Phi(A, A, A) = det A`; the symmetric trilinear polarization of the
/// determinant. Exact for rational arguments.
pub fn phi<T: Scalar + ScalarDiv2>(a: &AlbertElement<T>, b: &AlbertElement<T>, c: &AlbertElement<T>) -> T
where
    T: std::ops::Div<Output = T>,
{
    // 6 Phi(A,B,C) = det(A+B+C) - det(A+B) - det(B+C) - det(A+C)
    //               + det(A) + det(B) + det(C)
    let abc = a.add(b).add(c).det();
    let ab = a.add(b).det();
    let bc = b.add(c).det();
    let ac = a.add(c).det();
    let six = T::one() + T::one() + T::one() + T::one() + T::one() + T::one();
    (abc - ab - bc - ac + a.det() + b.det() + c.det()) / six
}

/// `Phi(Y, Y, A)` without the full 6-term polarization:
/// `3 Phi(Y,Y,A) = (det(Y+A) - det(Y-A))/2 - det(A)`.
pub fn phi_yya<T: Scalar + ScalarDiv2>(y: &AlbertElement<T>, a: &AlbertElement<T>) -> T
where
    T: std::ops::Div<Output = T>,
{
    let p = y.add(a).det();
    let m = y.sub(a).det();
    let three = T::one() + T::one() + T::one();
    ((p - m) * T::half() - a.det()) / three
}

/// The value `K_A(Y, Z) = Phi(Y, Z, A)` of the quadratic family attached to a
/// trace-free element `A`.
pub fn k_a(a: &AlbertElement<Rat>, y: &AlbertElement<Rat>, z: &AlbertElement<Rat>) -> Result<Rat, AlbertError> {
    if !a.trace().is_zero() {
        return Err(AlbertError::NonzeroTrace(a.trace().to_string()));
    }
    Ok(phi(y, z, a))
}

// ---------------------------------------------------------------------------
// Cayley plane
// ---------------------------------------------------------------------------

/// A point of the embedded Cayley plane: `Tr X = 1`, `Phi(A, X, X) = 0` for
/// all `A`.
#[derive(Clone, Debug)]
pub struct CayleyPoint(pub AlbertElement<f64>);

impl CayleyPoint {
    pub fn base() -> Self {
        CayleyPoint(AlbertElement::base_point())
    }

    pub fn constraint_residual(x: &AlbertElement<f64>) -> f64 {
        let mut worst: f64 = (x.trace() - 1.0).abs();
        for k in 0..ALBERT_DIM {
            let b = AlbertElement::<f64>::basis(k);
            worst = worst.max(phi_yya(x, &b).abs());
        }
        worst
    }

    pub fn new(x: AlbertElement<f64>, tol: f64) -> Result<Self, AlbertError> {
        let res = Self::constraint_residual(&x);
        if res > tol {
            return Err(AlbertError::ConstraintViolation(res));
        }
        Ok(CayleyPoint(x))
    }
}

/// The 16 tangent elements at the base point: vanishing diagonal, `x1 = 0`,
/// and `(x3, x2) = (y, z)` running over the octonion basis.
pub fn tangent_basis_at_base<T: Scalar>() -> Vec<AlbertElement<T>> {
    let mut out = Vec::with_capacity(16);
    for slot in [2usize, 1] {
        for i in 0..8 {
            let mut v = AlbertElement::<T>::zero();
            v.x[slot] = Octonion::basis(i);
            out.push(v);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Clifford system on R^16 = O + O
// ---------------------------------------------------------------------------

/// Nine symmetric 16x16 integer matrices with `S_i S_j + S_j S_i = 2 delta_ij`:
/// `S_0 (x1, x2) = (x1, -x2)` and `S_i (x1, x2) = (e_i x2*, x1* e_i)` over the
/// octonion basis (index 1 = real unit).
pub fn clifford_system() -> Vec<Vec<Vec<i64>>> {
    let mut mats = Vec::with_capacity(9);
    // S_0
    let mut s0 = vec![vec![0i64; 16]; 16];
    for k in 0..8 {
        s0[k][k] = 1;
        s0[8 + k][8 + k] = -1;
    }
    mats.push(s0);
    // S_i for the 8 basis octonions e
    for e in 0..8usize {
        let eb = Octonion::<Rat>::basis(e);
        let mut s = vec![vec![0i64; 16]; 16];
        for src in 0..16usize {
            let (x1, x2) = if src < 8 {
                (Octonion::<Rat>::basis(src), Octonion::zero())
            } else {
                (Octonion::zero(), Octonion::basis(src - 8))
            };
            let out1 = oct_mul(&eb, &x2.conj());
            let out2 = oct_mul(&x1.conj(), &eb);
            for k in 0..8 {
                let v1 = &out1.c[k];
                if !v1.is_zero() {
                    s[k][src] = rat_to_i64(v1);
                }
                let v2 = &out2.c[k];
                if !v2.is_zero() {
                    s[8 + k][src] = rat_to_i64(v2);
                }
            }
        }
        mats.push(s);
    }
    mats
}

fn rat_to_i64(r: &Rat) -> i64 {
    use num::ToPrimitive;
    debug_assert!(r.denom() == &num::BigInt::from(1));
    r.numer().to_i64().unwrap()
}

// ---------------------------------------------------------------------------
// embedded geodesic verifier
// ---------------------------------------------------------------------------

/// Result of one conservation run.
#[derive(Clone, Debug)]
pub struct EmbeddedRun {
    pub max_deviation: f64,
    pub max_constraint_drift: f64,
    pub samples: Vec<(f64, f64)>,
}

/// Integrates the intrinsic geodesic equation of the embedded Cayley plane
/// (acceleration normal to the tangent space, tangent-projected RK4 with
/// per-step constraint renormalisation) and reports the maximal deviation of
/// `Phi(gamma', gamma', A)` from its initial value.
pub fn embedded_geodesic_check(
    a: &AlbertElement<f64>,
    x0: &CayleyPoint,
    v0: &[f64],
    s_max: f64,
    steps: usize,
) -> Result<EmbeddedRun, AlbertError> {
    if a.trace().abs() > 1e-12 {
        return Err(AlbertError::NonzeroTrace(format!("{}", a.trace())));
    }
    let drift_abort = 1e-9;
    let h = s_max / steps as f64;
    let mut x = x0.0.to_vec();
    let mut v = v0.to_vec();
    project_to_constraints(&mut x);
    project_tangent(&x, &mut v);
    let value0 = phi_vec(&v, &v, a);
    let mut max_dev = 0.0f64;
    let mut max_drift = 0.0f64;
    let mut samples = Vec::with_capacity(steps / 16 + 2);
    for step in 0..steps {
        let s = step as f64 * h;
        let val = phi_vec(&v, &v, a);
        let dev = (val - value0).abs();
        max_dev = max_dev.max(dev);
        if step % 16 == 0 {
            samples.push((s, val));
        }
        rk4_step(&mut x, &mut v, h);
        // constraint renormalisation
        project_to_constraints(&mut x);
        project_tangent(&x, &mut v);
        let drift = CayleyPoint::constraint_residual(&AlbertElement::from_vec(&x));
        max_drift = max_drift.max(drift);
        if drift > drift_abort {
            return Err(AlbertError::ConstraintDrift(drift, drift_abort, s));
        }
    }
    let val = phi_vec(&v, &v, a);
    max_dev = max_dev.max((val - value0).abs());
    samples.push((s_max, val));
    Ok(EmbeddedRun { max_deviation: max_dev, max_constraint_drift: max_drift, samples })
}

fn phi_vec(y: &[f64], z: &[f64], a: &AlbertElement<f64>) -> f64 {
    let ye = AlbertElement::from_vec(y);
    let ze = AlbertElement::from_vec(z);
    phi(&ye, &ze, a)
}

/// Constraint Jacobian rows at `x`: the trace row and the 27 rows
/// `2 Phi(b_k, x, .)`.
fn constraint_jacobian(x: &[f64]) -> nalgebra::DMatrix<f64> {
    let xe = AlbertElement::from_vec(x);
    let mut j = nalgebra::DMatrix::<f64>::zeros(28, ALBERT_DIM);
    for c in 0..ALBERT_DIM {
        let bc = AlbertElement::<f64>::basis(c);
        j[(0, c)] = bc.trace();
    }
    for k in 0..ALBERT_DIM {
        let bk = AlbertElement::<f64>::basis(k);
        for c in 0..ALBERT_DIM {
            let bc = AlbertElement::<f64>::basis(c);
            // d/dt Phi(b_k, x + t b_c, x + t b_c) = 2 Phi(b_k, x, b_c)
            j[(k + 1, c)] = 2.0 * phi(&bk, &xe, &bc);
        }
    }
    j
}

fn constraint_values(x: &[f64]) -> nalgebra::DVector<f64> {
    let xe = AlbertElement::from_vec(x);
    let mut g = nalgebra::DVector::<f64>::zeros(28);
    g[0] = xe.trace() - 1.0;
    for k in 0..ALBERT_DIM {
        let bk = AlbertElement::<f64>::basis(k);
        g[k + 1] = phi_yya(&xe, &bk);
    }
    g
}

fn pseudo_solve(j: &nalgebra::DMatrix<f64>, rhs: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    let svd = j.clone().svd(true, true);
    svd.solve(rhs, 1e-10).expect("svd solve")
}

/// Newton projection of `x` onto the constraint set.
fn project_to_constraints(x: &mut [f64]) {
    for _ in 0..4 {
        let g = constraint_values(x);
        if g.amax() < 1e-14 {
            break;
        }
        let j = constraint_jacobian(x);
        let dx = pseudo_solve(&j, &g);
        for (xi, di) in x.iter_mut().zip(dx.iter()) {
            *xi -= di;
        }
    }
}

/// Orthogonal projection of `v` onto the tangent space at `x` (kernel of the
/// constraint Jacobian).
fn project_tangent(x: &[f64], v: &mut [f64]) {
    let j = constraint_jacobian(x);
    let jv = &j * nalgebra::DVector::from_column_slice(v);
    let corr = pseudo_solve(&j, &jv);
    for (vi, ci) in v.iter_mut().zip(corr.iter()) {
        *vi -= ci;
    }
}

/// Geodesic acceleration of the embedded submanifold. Differentiating the
/// constraints twice along the curve gives `J x'' = -h(v)` with
/// `h_k = v^T Hess(g_k) v`; a geodesic has normal acceleration, so
/// `x'' = -J^+ h(v)` (minimal-norm least-squares solution).
fn acceleration(x: &[f64], v: &[f64]) -> Vec<f64> {
    let j = constraint_jacobian(x);
    let ve = AlbertElement::from_vec(v);
    let mut h = nalgebra::DVector::<f64>::zeros(28);
    for k in 0..ALBERT_DIM {
        let bk = AlbertElement::<f64>::basis(k);
        // Hess of Phi(b_k, x, x) is 2 Phi(b_k, ., .); the trace row is linear
        h[k + 1] = 2.0 * phi(&bk, &ve, &ve);
    }
    let y = pseudo_solve(&j, &h);
    y.iter().map(|c| -c).collect()
}

fn rk4_step(x: &mut Vec<f64>, v: &mut Vec<f64>, h: f64) {
    let n = x.len();
    let f = |xs: &[f64], vs: &[f64]| -> (Vec<f64>, Vec<f64>) { (vs.to_vec(), acceleration(xs, vs)) };
    let (k1x, k1v) = f(x, v);
    let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1x[i]).collect();
    let v2: Vec<f64> = (0..n).map(|i| v[i] + 0.5 * h * k1v[i]).collect();
    let (k2x, k2v) = f(&x2, &v2);
    let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k2x[i]).collect();
    let v3: Vec<f64> = (0..n).map(|i| v[i] + 0.5 * h * k2v[i]).collect();
    let (k3x, k3v) = f(&x3, &v3);
    let x4: Vec<f64> = (0..n).map(|i| x[i] + h * k3x[i]).collect();
    let v4: Vec<f64> = (0..n).map(|i| v[i] + h * k3v[i]).collect();
    let (k4x, k4v) = f(&x4, &v4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
        v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
    }
}

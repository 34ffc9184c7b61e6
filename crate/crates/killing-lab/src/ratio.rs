//! Exact rational scalars and the Bernoulli-derived series coefficients shared
//! by the metric, Hamiltonian and Killing-field expansions.

use num::bigint::Sign;
use num::{BigInt, BigRational, One, Signed, Zero};
use std::str::FromStr;

pub type Rat = BigRational;

/// `p/q` from machine integers.
pub fn rat(p: i64, q: i64) -> Rat {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

pub fn rat_int(p: i64) -> Rat {
    BigRational::from(BigInt::from(p))
}

/// Parses `"p/q"` or `"p"` (used by the tensor exchange and space files).
pub fn parse_rat(s: &str) -> Result<Rat, String> {
    let s = s.trim();
    match s.split_once('/') {
        Some((p, q)) => {
            let p = BigInt::from_str(p.trim()).map_err(|e| e.to_string())?;
            let q = BigInt::from_str(q.trim()).map_err(|e| e.to_string())?;
            if q.is_zero() {
                return Err(format!("zero denominator in `{s}`"));
            }
            Ok(BigRational::new(p, q))
        }
        None => {
            let p = BigInt::from_str(s).map_err(|e| e.to_string())?;
            Ok(BigRational::from(p))
        }
    }
}

/// Renders a rational in the `"p/q"` (or `"p"` when integral) form used by the
/// exchange formats.
pub fn format_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    // Good enough for the magnitudes appearing here; BigRational has no
    // built-in conversion that handles large numerators gracefully.
    let n = bigint_to_f64(r.numer());
    let d = bigint_to_f64(r.denom());
    n / d
}

pub fn bigint_to_f64(b: &BigInt) -> f64 {
    let (sign, digits) = b.to_u64_digits();
    let mut v = 0.0f64;
    for &d in digits.iter().rev() {
        v = v * 1.8446744073709552e19 + d as f64;
    }
    if sign == Sign::Minus {
        -v
    } else {
        v
    }
}

/// Bernoulli numbers `B_0, B_1, ..., B_n` (with `B_1 = -1/2`), by the standard
/// recurrence `sum_{j=0}^{m} C(m+1, j) B_j = 0`.
pub fn bernoulli_numbers(n: usize) -> Vec<Rat> {
    let mut b: Vec<Rat> = Vec::with_capacity(n + 1);
    for m in 0..=n {
        if m == 0 {
            b.push(Rat::one());
            continue;
        }
        // B_m = -1/(m+1) * sum_{j<m} C(m+1, j) B_j
        let mut acc = Rat::zero();
        let mut binom = BigInt::one(); // C(m+1, 0)
        for (j, bj) in b.iter().enumerate() {
            acc += Rat::from(binom.clone()) * bj;
            // C(m+1, j+1) = C(m+1, j) * (m+1-j) / (j+1)
            binom = binom * BigInt::from((m + 1 - j) as u64) / BigInt::from((j + 1) as u64);
        }
        b.push(-acc / rat_int((m + 1) as i64));
    }
    b
}

fn factorial(n: usize) -> BigInt {
    let mut f = BigInt::one();
    for k in 2..=n {
        f *= BigInt::from(k as u64);
    }
    f
}

/// Coefficient `c_m` of `<R_X^m P, P>` in the Hamiltonian expansion:
/// `c_m = (-1)^{m+1} (2m-1) 2^{2m-1} B_{2m} / (2m)!`.
pub fn hamiltonian_coeff(m: usize) -> Rat {
    let b = bernoulli_numbers(2 * m);
    let b2m = b[2 * m].clone();
    let sign = if m % 2 == 0 { -Rat::one() } else { Rat::one() };
    let two_pow = if m == 0 {
        rat(1, 2) // 2^{-1}
    } else {
        Rat::from(BigInt::from(2u32).pow(2 * m as u32 - 1))
    };
    sign * rat_int(2 * m as i64 - 1) * two_pow * b2m / Rat::from(factorial(2 * m))
}

/// Coefficient of `R_X^m` in the normal-coordinate metric series
/// `2^{2m+1} (-1)^m / (2m+2)!`.
pub fn metric_coeff(m: usize) -> Rat {
    let sign = if m % 2 == 0 { Rat::one() } else { -Rat::one() };
    sign * Rat::from(BigInt::from(2u32).pow(2 * m as u32 + 1)) / Rat::from(factorial(2 * m + 2))
}

/// Coefficient of `t^m` in `sqrt(t) cot(sqrt(t))`:
/// `(-1)^m B_{2m} 4^m / (2m)!` — the odd Killing-field expansion.
pub fn cot_coeff(m: usize) -> Rat {
    let b = bernoulli_numbers(2 * m);
    let sign = if m % 2 == 0 { Rat::one() } else { -Rat::one() };
    sign * b[2 * m].clone() * Rat::from(BigInt::from(4u32).pow(m as u32))
        / Rat::from(factorial(2 * m))
}

/// Truncated power series with exact rational coefficients, used to generate
/// the removable-singularity branches of the closed-form Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    /// Coefficients of `u^0, u^1, ...`.
    pub c: Vec<Rat>,
}

impl Series {
    pub fn new(c: Vec<Rat>) -> Self {
        Series { c }
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// `sin^2(r)` as a series in `u = r^2`, truncated to `terms` coefficients.
    /// sin^2 r = sum_{k>=1} (-1)^{k+1} 2^{2k-1} u^k / (2k)!
    pub fn sin_sq(terms: usize) -> Series {
        let mut c = vec![Rat::zero(); terms];
        for (k, ck) in c.iter_mut().enumerate().skip(1) {
            let sign = if k % 2 == 1 { Rat::one() } else { -Rat::one() };
            *ck = sign * Rat::from(BigInt::from(2u32).pow(2 * k as u32 - 1))
                / Rat::from(factorial(2 * k));
        }
        Series::new(c)
    }

    /// `cos^2(r) = 1 - sin^2(r)` as a series in `u = r^2`.
    pub fn cos_sq(terms: usize) -> Series {
        let mut s = Series::sin_sq(terms);
        for ck in s.c.iter_mut() {
            *ck = -ck.clone();
        }
        s.c[0] += Rat::one();
        s
    }

    pub fn mul(&self, other: &Series, terms: usize) -> Series {
        let mut c = vec![Rat::zero(); terms];
        for i in 0..self.c.len().min(terms) {
            if self.c[i].is_zero() {
                continue;
            }
            for j in 0..other.c.len().min(terms - i) {
                if other.c[j].is_zero() {
                    continue;
                }
                let prod = self.c[i].clone() * &other.c[j];
                c[i + j] += prod;
            }
        }
        Series::new(c)
    }

    pub fn add(&self, other: &Series) -> Series {
        let n = self.c.len().max(other.c.len());
        let mut c = vec![Rat::zero(); n];
        for (i, ci) in self.c.iter().enumerate() {
            c[i] += ci;
        }
        for (i, ci) in other.c.iter().enumerate() {
            c[i] += ci;
        }
        Series::new(c)
    }

    pub fn scale(&self, k: &Rat) -> Series {
        Series::new(self.c.iter().map(|ci| ci * k).collect())
    }

    /// Division by a series with nonzero constant term.
    pub fn div(&self, other: &Series, terms: usize) -> Series {
        assert!(!other.c.is_empty() && !other.c[0].is_zero(), "division by series with zero constant term");
        let mut q = vec![Rat::zero(); terms];
        for i in 0..terms {
            let mut acc = if i < self.c.len() { self.c[i].clone() } else { Rat::zero() };
            for j in 0..i {
                if j + 1 <= i && !q[j].is_zero() {
                    let k = i - j;
                    if k < other.c.len() {
                        acc -= q[j].clone() * &other.c[k];
                    }
                }
            }
            q[i] = acc / &other.c[0];
        }
        Series::new(q)
    }

    /// Drops the leading `k` coefficients (division by `u^k`); they must vanish.
    pub fn shift_down(&self, k: usize) -> Series {
        for i in 0..k.min(self.c.len()) {
            assert!(self.c[i].is_zero(), "shift_down would drop a nonzero coefficient");
        }
        Series::new(self.c.iter().skip(k).cloned().collect())
    }

    pub fn eval_f64(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for ck in self.c.iter().rev() {
            acc = acc * u + rat_to_f64(ck);
        }
        acc
    }

    /// Term-wise derivative with respect to the series variable.
    pub fn derivative(&self) -> Series {
        let mut c = Vec::with_capacity(self.c.len().saturating_sub(1));
        for (k, ck) in self.c.iter().enumerate().skip(1) {
            c.push(ck * rat_int(k as i64));
        }
        Series::new(c)
    }
}

/// Integer gcd helper for row normalisation.
pub fn gcd_i64(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.unsigned_abs(), b.unsigned_abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a as i64
}

/// Least common multiple of denominators of a rational slice.
pub fn denom_lcm(vals: &[Rat]) -> BigInt {
    let mut l = BigInt::one();
    for v in vals {
        let d = v.denom().abs();
        let g = num::Integer::gcd(&l, &d);
        l = l / g * d;
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_values() {
        let b = bernoulli_numbers(12);
        assert_eq!(b[0], rat_int(1));
        assert_eq!(b[1], rat(-1, 2));
        assert_eq!(b[2], rat(1, 6));
        assert_eq!(b[4], rat(-1, 30));
        assert_eq!(b[6], rat(1, 42));
        assert_eq!(b[8], rat(-1, 30));
        assert_eq!(b[10], rat(5, 66));
        assert_eq!(b[12], rat(-691, 2730));
    }

    #[test]
    fn hamiltonian_coeffs_match_expansion() {
        assert_eq!(hamiltonian_coeff(0), rat(1, 2));
        assert_eq!(hamiltonian_coeff(1), rat(1, 6));
        assert_eq!(hamiltonian_coeff(2), rat(1, 30));
        assert_eq!(hamiltonian_coeff(3), rat(1, 189));
    }

    #[test]
    fn metric_coeffs() {
        assert_eq!(metric_coeff(0), rat_int(1));
        assert_eq!(metric_coeff(1), rat(-1, 3));
        assert_eq!(metric_coeff(2), rat(2, 45));
    }

    #[test]
    fn cot_coeffs() {
        assert_eq!(cot_coeff(0), rat_int(1));
        assert_eq!(cot_coeff(1), rat(-1, 3));
        assert_eq!(cot_coeff(2), rat(-1, 45));
        assert_eq!(cot_coeff(3), rat(-2, 945));
    }

    #[test]
    fn series_division_reproduces_tangent_like_quotient() {
        // sin^2 / cos^2 should start u + 2/3 u^2 + ...
        let s = Series::sin_sq(6);
        let c = Series::cos_sq(6);
        let t = s.div(&c, 6);
        assert_eq!(t.c[0], Rat::zero());
        assert_eq!(t.c[1], rat_int(1));
        assert_eq!(t.c[2], rat(2, 3));
    }

    #[test]
    fn parse_and_format_roundtrip() {
        for s in ["3/4", "-7/2", "5", "0"] {
            let r = parse_rat(s).unwrap();
            assert_eq!(format_rat(&r), s);
        }
        assert!(parse_rat("1/0").is_err());
    }
}

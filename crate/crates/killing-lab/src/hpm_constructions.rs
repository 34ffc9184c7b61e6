//! Quaternionic ambient tensor families, their invariance properties, the
//! Hopf-projection kernel, and the explicit top-slot generator families used
//! for span comparisons on the quaternionic projective models.

use crate::ratio::{rat, rat_int, Rat};
use crate::space_catalog::{imat_is_skew, imat_mul, quaternion_right, quaternion_structures, symplectic_isotropy, IMat};
use crate::tensor_core::SymPairTensor;
use num::{One, Zero};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum HpmError {
    #[error("matrix is not of symplectic type (skew and commuting with the quaternion structures)")]
    NotSpType,
    #[error("matrix is not of V type (symmetric and commuting with the quaternion structures)")]
    NotVType,
}

/// Basis of the symmetric matrices on `R^{4m}` commuting with the three
/// quaternion structures: one real identity block per slot and four
/// right-multiplication blocks per unordered slot pair.
pub fn v_basis(m: usize) -> Vec<IMat> {
    let n = 4 * m;
    let mut out = Vec::new();
    let place4 = |block: &[[i64; 4]; 4], bi: usize, bj: usize, g: &mut IMat| {
        for r in 0..4 {
            for c in 0..4 {
                g[4 * bi + r][4 * bj + c] += block[r][c];
            }
        }
    };
    for i in 0..m {
        let mut g = crate::space_catalog::imat_zero(n);
        place4(&quaternion_right(0), i, i, &mut g);
        out.push(g);
    }
    for i in 0..m {
        for j in i + 1..m {
            for q in 0..=3 {
                let rq = quaternion_right(q);
                let mut rt = [[0i64; 4]; 4];
                for r in 0..4 {
                    for c in 0..4 {
                        rt[r][c] = rq[c][r];
                    }
                }
                let mut g = crate::space_catalog::imat_zero(n);
                place4(&rq, i, j, &mut g);
                place4(&rt, j, i, &mut g);
                out.push(g);
            }
        }
    }
    out
}

/// Basis of the skew matrices commuting with the structures (`sp(m)`).
pub fn sp_basis(m: usize) -> Vec<IMat> {
    symplectic_isotropy(m)
}

fn commutes_with_structures(a: &IMat, m: usize) -> bool {
    let js = quaternion_structures(m);
    js.iter().all(|j| imat_mul(a, j) == imat_mul(j, a))
}

pub fn is_sp_type(a: &IMat, m: usize) -> bool {
    a.len() == 4 * m && imat_is_skew(a) && commutes_with_structures(a, m)
}

pub fn is_v_type(a: &IMat, m: usize) -> bool {
    let n = 4 * m;
    a.len() == n
        && (0..n).all(|r| (0..n).all(|c| a[r][c] == a[c][r]))
        && commutes_with_structures(a, m)
}

/// The symmetrised product tensor with diagonal `<A X, P><B X, P>`.
pub fn pair_product_tensor(a: &IMat, b: &IMat) -> SymPairTensor {
    let n = a.len();
    let quarter = rat(1, 4);
    let mut ordered: std::collections::HashMap<(usize, usize, usize, usize), Rat> =
        std::collections::HashMap::new();
    for k1 in 0..n {
        for i1 in 0..n {
            if a[k1][i1] == 0 {
                continue;
            }
            let v1 = rat_int(a[k1][i1]);
            for k2 in 0..n {
                for i2 in 0..n {
                    if b[k2][i2] == 0 {
                        continue;
                    }
                    let v = v1.clone() * rat_int(b[k2][i2]) * &quarter;
                    for key in [(i1, i2, k1, k2), (i2, i1, k1, k2), (i1, i2, k2, k1), (i2, i1, k2, k1)] {
                        let e = ordered.entry(key).or_insert_with(Rat::zero);
                        *e += v.clone();
                    }
                }
            }
        }
    }
    let mut t = SymPairTensor::zero(n);
    for ((x1, x2, p1, p2), v) in ordered {
        if x1 <= x2 && p1 <= p2 && !v.is_zero() {
            t.add_to(x1, x2, p1, p2, v);
        }
    }
    t
}

/// `T^1_{A,B}(X,X,P,P) = <A X, P><B X, P>` for symplectic-type `A, B` on the
/// ambient `R^{4m+4}` (pass `m + 1` slots).
pub fn t1(a: &IMat, b: &IMat, slots: usize) -> Result<SymPairTensor, HpmError> {
    if !is_sp_type(a, slots) || !is_sp_type(b, slots) {
        return Err(HpmError::NotSpType);
    }
    Ok(pair_product_tensor(a, b))
}

/// `T^2_{S,Q}(X,X,P,P) = sum_a <S J_a X, P><Q J_a X, P>` for V-type `S, Q`.
pub fn t2(s: &IMat, q: &IMat, slots: usize) -> Result<SymPairTensor, HpmError> {
    if !is_v_type(s, slots) || !is_v_type(q, slots) {
        return Err(HpmError::NotVType);
    }
    let js = quaternion_structures(slots);
    let mut acc = SymPairTensor::zero(4 * slots);
    for j in &js {
        let sj = imat_mul(s, j);
        let qj = imat_mul(q, j);
        acc = acc.add(&pair_product_tensor(&sj, &qj));
    }
    Ok(acc)
}

/// Kernel of the projection to fields on the quaternionic base:
/// `{ t2(S, Id) : S in a basis of V_{m+1} }`; every member vanishes on all
/// horizontal pairs.
pub fn hopf_kernel_basis(m: usize) -> Vec<SymPairTensor> {
    let slots = m + 1;
    let n = 4 * slots;
    let id: IMat = (0..n).map(|r| (0..n).map(|c| i64::from(r == c)).collect()).collect();
    v_basis(slots)
        .iter()
        .map(|s| t2(s, &id, slots).expect("V basis members are V-type"))
        .collect()
}

/// Family tags of the explicit top-slot generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// pair products of isotropy generators (decomposables)
    Decomposable,
    /// structure-only products `<J_b X, P><J_c X, P>`
    StructurePairs,
    /// mixed products `<N X, P><J_a X, P>` with `N` symplectic
    MixedPairs,
    /// lower-level ambient tensors realised on the tangent space
    LowerLevel,
}

/// The four explicit generator families on the tangent space `R^{4m}`.
pub fn topslot_generators(m: usize) -> Vec<(Family, SymPairTensor)> {
    assert!(m >= 2, "generator families need m >= 2");
    let js = quaternion_structures(m);
    let spm = sp_basis(m);
    let mut gens: Vec<IMat> = spm.clone();
    gens.extend(js.iter().cloned());
    let mut out = Vec::new();
    // (i) decomposables: all unordered pair products of isotropy generators
    for i in 0..gens.len() {
        for j in i..gens.len() {
            out.push((Family::Decomposable, pair_product_tensor(&gens[i], &gens[j])));
        }
    }
    // (ii) structure pair family
    for b in 0..3 {
        for c in b..3 {
            out.push((Family::StructurePairs, pair_product_tensor(&js[b], &js[c])));
        }
    }
    // (iii) mixed family
    for nmat in &spm {
        for j in &js {
            out.push((Family::MixedPairs, pair_product_tensor(nmat, j)));
        }
    }
    // (iv) lower-level families built directly on R^{4m}
    let spm1 = sp_basis(m - 1 + 1); // sp(m) again: T^1 at the lower level
    for i in 0..spm1.len() {
        for j in i..spm1.len() {
            out.push((Family::LowerLevel, pair_product_tensor(&spm1[i], &spm1[j])));
        }
    }
    let vm = v_basis(m);
    for i in 0..vm.len() {
        for j in i..vm.len() {
            out.push((Family::LowerLevel, t2(&vm[i], &vm[j], m).expect("V-type")));
        }
    }
    out
}

/// Exactly projects `p` onto the orthogonal complement of
/// `{J_1 x, J_2 x, J_3 x}` (and of `x` itself when `tangent` is set); the
/// frame is orthogonal with norms `|x|^2`, so the projection is rational.
pub fn horizontal_projection(m: usize, x: &[Rat], p: &[Rat], tangent: bool) -> Vec<Rat> {
    let js = quaternion_structures(m);
    let n = 4 * m;
    let xx: Rat = x.iter().map(|v| v * v).sum();
    let mut out = p.to_vec();
    let apply = |mat: &IMat, v: &[Rat]| -> Vec<Rat> {
        (0..n)
            .map(|r| {
                let mut acc = Rat::zero();
                for c in 0..n {
                    if mat[r][c] != 0 {
                        acc += rat_int(mat[r][c]) * &v[c];
                    }
                }
                acc
            })
            .collect()
    };
    let mut frame: Vec<Vec<Rat>> = js.iter().map(|j| apply(j, x)).collect();
    if tangent {
        frame.push(x.to_vec());
    }
    for f in &frame {
        let dot: Rat = f.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
        let coef = dot / &xx;
        for (o, fi) in out.iter_mut().zip(f.iter()) {
            *o -= coef.clone() * fi;
        }
    }
    out
}

/// Reproduces the diagonal block-reduction identity on the ambient `R^12`:
/// with `mu_i + mu_j = a_i a_j`, `S = diag(a_i I_4)` and `S' = diag(mu_i I_4)`,
/// `T^2_{S,S} = 2 T^2_{I,S'} + sum_{i,a} (a_i^2 - 2 mu_i) T^1(A_{ia}, A_{ia})`
/// where `A_{ia}` has the right-multiplication block at slot `i`. Verified at
/// random rational triples (both sides are polynomial in the `a_i`).
pub fn hp2_reduction_check() -> bool {
    let slots = 3usize; // ambient of the m = 2 model
    let n = 4 * slots;
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    // the norm identity sum_a <L_a z, z'>^2 = sum_a <R_a z, z'>^2 on random
    // quaternion pairs
    for _ in 0..50 {
        let z: Vec<Rat> = (0..4).map(|_| rat_int(rng.gen_range(-5..=5))).collect();
        let w: Vec<Rat> = (0..4).map(|_| rat_int(rng.gen_range(-5..=5))).collect();
        let mut left = Rat::zero();
        let mut right = Rat::zero();
        for alpha in 1..=3 {
            let l = crate::space_catalog::quaternion_left(alpha);
            let r = quaternion_right(alpha);
            let mut lv = Rat::zero();
            let mut rv = Rat::zero();
            for i in 0..4 {
                for j in 0..4 {
                    if l[i][j] != 0 {
                        lv += rat_int(l[i][j]) * &z[j] * &w[i];
                    }
                    if r[i][j] != 0 {
                        rv += rat_int(r[i][j]) * &z[j] * &w[i];
                    }
                }
            }
            left += lv.clone() * lv;
            right += rv.clone() * rv;
        }
        if left != right {
            return false;
        }
    }
    // the reduction identity at 10 random rational triples (a1, a2, a3)
    let id: IMat = (0..n).map(|r| (0..n).map(|c| i64::from(r == c)).collect()).collect();
    let mut triples: Vec<[i64; 3]> = vec![[1, 1, 1], [1, 0, 0]];
    while triples.len() < 10 {
        triples.push([rng.gen_range(-4..=4), rng.gen_range(-4..=4), rng.gen_range(-4..=4)]);
    }
    for a in triples {
        let av = [rat_int(a[0]), rat_int(a[1]), rat_int(a[2])];
        // mu_1 = (a1 a2 + a3 a1 - a2 a3) / 2 and cyclic
        let mu = [
            (av[0].clone() * &av[1] + av[2].clone() * &av[0] - av[1].clone() * &av[2]) * rat(1, 2),
            (av[1].clone() * &av[2] + av[0].clone() * &av[1] - av[2].clone() * &av[0]) * rat(1, 2),
            (av[2].clone() * &av[0] + av[1].clone() * &av[2] - av[0].clone() * &av[1]) * rat(1, 2),
        ];
        // build S and S' as rational multiples of integer block matrices;
        // scale by 2 to stay integral
        let diag_blocks = |vals: &[Rat; 3], scale: i64| -> Option<IMat> {
            let mut g = crate::space_catalog::imat_zero(n);
            for (i, v) in vals.iter().enumerate() {
                let scaled = v * rat_int(scale);
                if !scaled.denom().is_one() {
                    return None;
                }
                use num::ToPrimitive;
                let vi = scaled.numer().to_i64()?;
                for r in 0..4 {
                    g[4 * i + r][4 * i + r] = vi;
                }
            }
            Some(g)
        };
        let s_mat = diag_blocks(&av, 1).unwrap();
        let sp_mat = diag_blocks(&mu, 2).unwrap(); // 2 S'
        let lhs = t2(&s_mat, &s_mat, slots).unwrap();
        // 2 T^2_{I, S'} = T^2_{I, 2S'}
        let term1 = t2(&id, &sp_mat, slots).unwrap();
        let mut rhs = term1;
        for i in 0..3 {
            let coef = av[i].clone() * &av[i] - mu[i].clone() * rat_int(2);
            if coef.is_zero() {
                continue;
            }
            for alpha in 1..=3 {
                let mut aia = crate::space_catalog::imat_zero(n);
                let rq = quaternion_right(alpha);
                for r in 0..4 {
                    for c in 0..4 {
                        aia[4 * i + r][4 * i + c] = rq[r][c];
                    }
                }
                rhs = rhs.add(&pair_product_tensor(&aia, &aia).scaled(&coef));
            }
        }
        if lhs != rhs {
            return false;
        }
    }
    true
}

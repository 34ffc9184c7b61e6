//! Assembly of the integrability linear systems for quadratic and top-slot
//! Killing tensors, exact solution spaces, decomposable spans, and
//! indecomposability certificates.
//!
//! Unknowns are coordinates in the triple-symmetrisation-free basis (for the
//! quadratic system) or raw pair-of-multi-index coordinates (for rank-`d`
//! top-slot systems). Every polynomial identity in `(X, P)` is expanded
//! exactly over the monomial basis; each monomial coefficient is one integer
//! row, tagged with its provenance.

use crate::linalg::{self, SolveOptions, SparseIntMatrix};
use crate::ratio::{denom_lcm, rat_int, Rat};
use crate::space_catalog::SymmetricSpaceModel;
use crate::tensor_core::{
    bianchi_basis, multi_indices, orderings, pair_count, pair_unrank, MultiIdx, SymPairTensor,
    SymTensorRankD,
};
use num::{BigInt, One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum SystemError {
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error("rank-one shortcut requested on a space without the [1,4] normal form: {0}")]
    NotRankOne(String),
    #[error("certification failure: {0}")]
    Certification(String),
}

// ---------------------------------------------------------------------------
// curvature coefficient tables
// ---------------------------------------------------------------------------

/// Integer expansion tables of the two curvature vectors entering the
/// identities, with a common denominator cleared:
/// `W = R(X, P) P` (linear in X, quadratic in P) and
/// `U = R(P, X) X = R_X P` (quadratic in X, linear in P).
pub struct CurvatureTables {
    pub n: usize,
    /// per output component l: entries (a, b <= c, value) of x_a p_b p_c
    pub w: Vec<Vec<(u8, u8, u8, i64)>>,
    /// per output component l: entries (a, b <= c, value) of p_a x_b x_c
    pub u: Vec<Vec<(u8, u8, u8, i64)>>,
    /// the cleared denominator (rows of an identity with k curvature factors
    /// are scaled by denom^k, which does not change the solution space)
    pub denom: BigInt,
}

pub fn curvature_tables(space: &SymmetricSpaceModel) -> CurvatureTables {
    let n = space.n;
    let mut all_vals: Vec<Rat> = Vec::new();
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for &(_, ref v) in space.curvature.vector(a, b, c) {
                    all_vals.push(v.clone());
                }
            }
        }
    }
    let denom = denom_lcm(&all_vals);
    let scale = Rat::from(denom.clone());
    let to_int = |v: &Rat| -> i64 {
        let s = v * &scale;
        debug_assert!(s.denom().is_one());
        s.numer().to_i64().expect("curvature coefficient fits i64")
    };
    let mut w: Vec<Vec<(u8, u8, u8, i64)>> = vec![Vec::new(); n];
    let mut u: Vec<Vec<(u8, u8, u8, i64)>> = vec![Vec::new(); n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for &(l, ref v) in space.curvature.vector(a, b, c) {
                    let vi = to_int(v);
                    if vi == 0 {
                        continue;
                    }
                    // W_l gets x_a p_b p_c from R(e_a, e_b) e_c; merge (b, c)
                    if b <= c {
                        push_merged(&mut w[l as usize], (a as u8, b as u8, c as u8), vi);
                    } else {
                        push_merged(&mut w[l as usize], (a as u8, c as u8, b as u8), vi);
                    }
                    // U_l gets p_a x_b x_c
                    if b <= c {
                        push_merged(&mut u[l as usize], (a as u8, b as u8, c as u8), vi);
                    } else {
                        push_merged(&mut u[l as usize], (a as u8, c as u8, b as u8), vi);
                    }
                }
            }
        }
    }
    for list in w.iter_mut().chain(u.iter_mut()) {
        list.retain(|&(_, _, _, v)| v != 0);
        list.sort_unstable_by_key(|&(a, b, c, _)| (a, b, c));
    }
    CurvatureTables { n, w, u, denom }
}

fn push_merged(list: &mut Vec<(u8, u8, u8, i64)>, key: (u8, u8, u8), v: i64) {
    if let Some(e) = list.iter_mut().find(|&&mut (a, b, c, _)| (a, b, c) == key) {
        e.3 += v;
    } else {
        list.push((key.0, key.1, key.2, v));
    }
}

// ---------------------------------------------------------------------------
// monomial indexers
// ---------------------------------------------------------------------------

/// Ranks sorted degree-`d` multisets over `n` symbols by table lookup.
pub struct MonomialIndexer {
    pub n: usize,
    pub d: usize,
    pub count: usize,
    list: Vec<MultiIdx>,
    table: HashMap<MultiIdx, u32>,
}

impl MonomialIndexer {
    pub fn new(n: usize, d: usize) -> Self {
        let list = multi_indices(n, d);
        let table = list.iter().enumerate().map(|(i, m)| (m.clone(), i as u32)).collect();
        MonomialIndexer { n, d, count: list.len(), list, table }
    }

    #[inline]
    pub fn rank(&self, sorted: &[u8]) -> u32 {
        debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        self.table[sorted]
    }

    pub fn unrank(&self, r: u32) -> &MultiIdx {
        &self.list[r as usize]
    }
}

#[inline]
fn sorted3(a: u8, b: u8, c: u8) -> [u8; 3] {
    let mut t = [a, b, c];
    t.sort_unstable();
    t
}

// ---------------------------------------------------------------------------
// linear systems
// ---------------------------------------------------------------------------

/// Which identity a row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EquationId {
    /// the cubic identity of bidegree (3,3)
    Quad21,
    /// the quartic identity of bidegree (4,4)
    Quad22,
    /// top-slot identity `s`
    TopInt(u8),
    /// rank-one identity `K(X^{d-1}, P^{d+1}) = 0`
    Rank1Sym,
    /// rank-one bracket identity of bidegree (d+1, d+1)
    Rank1Bracket,
}

/// Row provenance: identity id and the `(X, P)` monomial indices.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RowTag {
    pub eq: EquationId,
    pub alpha: u32,
    pub beta: u32,
}

/// Sparse integer system over the unknown coordinates, with per-row tags.
pub struct LinearSystem {
    pub matrix: SparseIntMatrix,
    pub tags: Vec<RowTag>,
    pub unknown_dim: usize,
    pub raw_row_count: usize,
}

impl LinearSystem {
    /// True iff every row annihilates the vector exactly.
    pub fn membership(&self, v: &[BigInt]) -> bool {
        self.matrix.annihilates(v)
    }
}

/// Normalises rows (content gcd, sign), merges duplicates keeping the first
/// tag, and assembles the final system.
fn finish_system(
    width: usize,
    raw: Vec<(RowTag, Vec<(u32, i64)>)>,
) -> LinearSystem {
    let raw_row_count = raw.len();
    let mut matrix = SparseIntMatrix::new(width);
    let mut tags: Vec<RowTag> = Vec::new();
    let mut seen: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut kept_rows: Vec<Vec<(u32, i64)>> = Vec::new();
    for (tag, row) in raw {
        let row = normalize_entries(row);
        if row.is_empty() {
            continue;
        }
        let h = hash_entries(&row);
        let bucket = seen.entry(h).or_default();
        if bucket.iter().any(|&i| kept_rows[i] == row) {
            continue;
        }
        bucket.push(kept_rows.len());
        kept_rows.push(row.clone());
        tags.push(tag);
        matrix.push_row(row);
    }
    debug_assert_eq!(matrix.nrows(), tags.len());
    LinearSystem { matrix, tags, unknown_dim: width, raw_row_count }
}

fn normalize_entries(mut row: Vec<(u32, i64)>) -> Vec<(u32, i64)> {
    row.sort_unstable_by_key(|&(c, _)| c);
    let mut merged: Vec<(u32, i64)> = Vec::with_capacity(row.len());
    for (c, v) in row {
        match merged.last_mut() {
            Some(last) if last.0 == c => last.1 += v,
            _ => merged.push((c, v)),
        }
    }
    merged.retain(|&(_, v)| v != 0);
    if merged.is_empty() {
        return merged;
    }
    let mut g = 0i64;
    for &(_, v) in &merged {
        g = crate::ratio::gcd_i64(g, v);
    }
    let sign = if merged[0].1 < 0 { -1 } else { 1 };
    let d = g * sign;
    if d != 1 {
        for e in merged.iter_mut() {
            e.1 /= d;
        }
    }
    merged
}

fn hash_entries(row: &[(u32, i64)]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &(c, v) in row {
        h ^= c as u64;
        h = h.wrapping_mul(0x100000001b3);
        h ^= v as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

// ---------------------------------------------------------------------------
// quadratic system
// ---------------------------------------------------------------------------

/// Assembles the quadratic integrability system over the symmetry-class
/// basis coordinates: monomial rows of the cubic identity
/// `K(X,X,P,R(X,P)P) = K(P,P,X,R(P,X)X)` (bidegree (3,3)) and optionally the
/// quartic identity (bidegree (4,4)).
pub fn build_quadratic_system(space: &SymmetricSpaceModel, include_eq22: bool) -> LinearSystem {
    let n = space.n;
    let basis = bianchi_basis(n);
    let width = basis.dim();
    let tables = curvature_tables(space);
    let idx3 = MonomialIndexer::new(n, 3);
    let nb3 = idx3.count as u32;
    let np = pair_count(n);

    // per basis element: coefficients of G(X,P) = K(X,X,P,W(X,P)), keyed by
    // (alpha, beta); the identity row is G[alpha][beta] - G[beta][alpha]
    let per_elem: Vec<Vec<(u32, i64)>> = (0..width)
        .into_par_iter()
        .map(|t| {
            let mut acc: HashMap<u32, i64> = HashMap::new();
            for &(coord, ref bigval) in basis.vectors[t].iter() {
                let val = bigval.to_i64().expect("basis coefficient fits i64");
                let (i, j) = pair_unrank(n, (coord as usize) / np);
                let (k, l) = pair_unrank(n, (coord as usize) % np);
                let m_ij = if i == j { 1 } else { 2 };
                // second pair: (slot3, slot4) over distinct orders of {k, l}
                let orders: &[(usize, usize)] = if k == l { &[(k, l)] } else { &[(k, l), (l, k)] };
                for &(s3, s4) in orders {
                    // term m_ij * val * x_i x_j p_{s3} W_{s4}
                    for &(a, b, c, wv) in &tables.w[s4] {
                        let alpha = idx3.rank(&sorted3(i as u8, j as u8, a));
                        let beta = idx3.rank(&sorted3(s3 as u8, b, c));
                        if alpha == beta {
                            continue; // cancels in the antisymmetrised identity
                        }
                        let contribution = m_ij * val * wv;
                        let (key, signed) = if alpha < beta {
                            (alpha * nb3 + beta, contribution)
                        } else {
                            (beta * nb3 + alpha, -contribution)
                        };
                        *acc.entry(key).or_insert(0) += signed;
                    }
                }
            }
            let mut v: Vec<(u32, i64)> = acc.into_iter().filter(|&(_, v)| v != 0).collect();
            v.sort_unstable_by_key(|&(k, _)| k);
            v
        })
        .collect();

    // transpose into rows
    let mut triplets: Vec<(u32, u32, i64)> = Vec::new();
    for (t, entries) in per_elem.iter().enumerate() {
        for &(key, v) in entries {
            triplets.push((key, t as u32, v));
        }
    }
    drop(per_elem);
    triplets.par_sort_unstable_by_key(|&(k, t, _)| ((k as u64) << 32) | t as u64);
    let mut raw: Vec<(RowTag, Vec<(u32, i64)>)> = Vec::new();
    let mut pos = 0usize;
    while pos < triplets.len() {
        let key = triplets[pos].0;
        let mut row = Vec::new();
        while pos < triplets.len() && triplets[pos].0 == key {
            row.push((triplets[pos].1, triplets[pos].2));
            pos += 1;
        }
        raw.push((RowTag { eq: EquationId::Quad21, alpha: key / nb3, beta: key % nb3 }, row));
    }
    drop(triplets);

    if include_eq22 {
        raw.extend(quad22_rows(space, &tables, &basis));
    }
    finish_system(width, raw)
}

/// Monomial rows of the quartic identity `K(X,X,W,W) = K(P,P,U,U)`-type
/// (bidegree (4,4)), antisymmetrised in the variable swap.
fn quad22_rows(
    space: &SymmetricSpaceModel,
    tables: &CurvatureTables,
    basis: &crate::tensor_core::BianchiBasis,
) -> Vec<(RowTag, Vec<(u32, i64)>)> {
    let n = space.n;
    let width = basis.dim();
    let idx4 = MonomialIndexer::new(n, 4);
    let nb4 = idx4.count as u32;
    let np = pair_count(n);
    let per_elem: Vec<Vec<(u32, i64)>> = (0..width)
        .into_par_iter()
        .map(|t| {
            let mut acc: HashMap<u32, i64> = HashMap::new();
            for &(coord, ref bigval) in basis.vectors[t].iter() {
                let val = bigval.to_i64().expect("basis coefficient fits i64");
                let (i, j) = pair_unrank(n, (coord as usize) / np);
                let (k, l) = pair_unrank(n, (coord as usize) % np);
                let m_ij = if i == j { 1 } else { 2 };
                let m_kl = if k == l { 1 } else { 2 };
                // G2 = m_ij m_kl x_i x_j W_k W_l
                for &(a1, b1, c1, w1) in &tables.w[k] {
                    for &(a2, b2, c2, w2) in &tables.w[l] {
                        let mut am = [i as u8, j as u8, a1, a2];
                        am.sort_unstable();
                        let mut bm = [b1, c1, b2, c2];
                        bm.sort_unstable();
                        let alpha = idx4.rank(&am);
                        let beta = idx4.rank(&bm);
                        if alpha == beta {
                            continue;
                        }
                        let contribution = m_ij * m_kl * val * w1 * w2;
                        let (key, signed) = if alpha < beta {
                            (alpha * nb4 + beta, contribution)
                        } else {
                            (beta * nb4 + alpha, -contribution)
                        };
                        *acc.entry(key).or_insert(0) += signed;
                    }
                }
            }
            let mut v: Vec<(u32, i64)> = acc.into_iter().filter(|&(_, v)| v != 0).collect();
            v.sort_unstable_by_key(|&(k, _)| k);
            v
        })
        .collect();
    let mut triplets: Vec<(u32, u32, i64)> = Vec::new();
    for (t, entries) in per_elem.iter().enumerate() {
        for &(key, v) in entries {
            triplets.push((key, t as u32, v));
        }
    }
    triplets.par_sort_unstable_by_key(|&(k, t, _)| ((k as u64) << 32) | t as u64);
    let mut raw = Vec::new();
    let mut pos = 0usize;
    while pos < triplets.len() {
        let key = triplets[pos].0;
        let mut row = Vec::new();
        while pos < triplets.len() && triplets[pos].0 == key {
            row.push((triplets[pos].1, triplets[pos].2));
            pos += 1;
        }
        raw.push((RowTag { eq: EquationId::Quad22, alpha: key / nb4, beta: key % nb4 }, row));
    }
    raw
}

// ---------------------------------------------------------------------------
// top-slot systems (general rank)
// ---------------------------------------------------------------------------

/// Unknown coordinates of the rank-`d` system, in the deterministic order of
/// `SymTensorRankD::coord_space`.
pub struct TopSlotCoords {
    pub n: usize,
    pub d: usize,
    pub idx: MonomialIndexer,
    pub coords: Vec<(MultiIdx, MultiIdx)>,
}

impl TopSlotCoords {
    pub fn new(n: usize, d: usize) -> Self {
        let idx = MonomialIndexer::new(n, d);
        TopSlotCoords { n, d, coords: SymTensorRankD::coord_space(n, d), idx }
    }

    pub fn width(&self) -> usize {
        self.coords.len()
    }

    pub fn coord_id(&self, a: &[u8], b: &[u8]) -> u32 {
        self.idx.rank(a) * self.idx.count as u32 + self.idx.rank(b)
    }

    pub fn tensor_from_vec(&self, v: &[BigInt]) -> SymTensorRankD {
        let mut t = SymTensorRankD::zero(self.n, self.d);
        for (i, x) in v.iter().enumerate() {
            if !x.is_zero() {
                let (a, b) = self.coords[i].clone();
                t.add_to(a, b, Rat::from(x.clone()));
            }
        }
        t
    }
}

/// All sub-multisets of the sorted multiset `b` of size `take`, with the
/// complement.
fn sub_multisets(b: &[u8], take: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut out = Vec::new();
    let mut chosen = Vec::new();
    fn rec(b: &[u8], pos: usize, take: usize, chosen: &mut Vec<u8>, out: &mut Vec<(Vec<u8>, Vec<u8>)>) {
        if chosen.len() == take {
            let mut rest = b.to_vec();
            for c in chosen.iter() {
                let p = rest.iter().position(|x| x == c).unwrap();
                rest.remove(p);
            }
            out.push((chosen.clone(), rest));
            return;
        }
        if pos >= b.len() || b.len() - pos < take - chosen.len() {
            return;
        }
        // take b[pos]
        chosen.push(b[pos]);
        rec(b, pos + 1, take, chosen, out);
        chosen.pop();
        // skip all copies of b[pos]
        let mut next = pos + 1;
        while next < b.len() && b[next] == b[pos] {
            next += 1;
        }
        rec(b, next, take, chosen, out);
    }
    rec(b, 0, take, &mut chosen, &mut out);
    out
}

/// Monomial rows of the `d + 1` top-slot identities: for `s = 0..=d`,
/// `d K(X^{d-1}, P, P^{d-s}, U^s) + s K(X^d, P^{d-s}, U^{s-1}, W) = 0`
/// with `U = R(P,X)X` and `W = R(X,P)P`.
pub fn build_topslot_system(space: &SymmetricSpaceModel, d: usize) -> LinearSystem {
    assert!(d >= 1);
    let n = space.n;
    let tables = curvature_tables(space);
    let coords = TopSlotCoords::new(n, d);
    let width = coords.width();
    let mut raw: Vec<(RowTag, Vec<(u32, i64)>)> = Vec::new();
    for s in 0..=d {
        let rows = topslot_identity_rows(space, &tables, &coords, d, s);
        raw.extend(rows);
    }
    finish_system(width, raw)
}

/// Rows of the single identity `s` (used by both the full system and the
/// certified nullspace route).
pub fn topslot_identity_rows(
    _space: &SymmetricSpaceModel,
    tables: &CurvatureTables,
    coords: &TopSlotCoords,
    d: usize,
    s: usize,
) -> Vec<(RowTag, Vec<(u32, i64)>)> {
    let n = coords.n;
    // bidegree: s = 0 -> (d-1, d+1); s >= 1 -> (d+2s-1, d+1)
    let ax = MonomialIndexer::new(n, if s == 0 { d - 1 } else { d + 2 * s - 1 });
    let bx = MonomialIndexer::new(n, d + 1);
    let nbx = bx.count as u32;
    // accumulate coefficient of x^alpha p^beta per unknown coordinate
    let per_coord: Vec<Vec<(u32, i64)>> = (0..coords.width())
        .into_par_iter()
        .map(|ci| {
            let (a_idx, b_idx) = &coords.coords[ci];
            let mut acc: HashMap<u32, i64> = HashMap::new();
            // term 1: d * K(X^{d-1}, P; P^{d-s}, U^s)
            // first group: one slot of A takes P, the rest take X
            let mut seen_a: Vec<u8> = Vec::new();
            for drop in 0..a_idx.len() {
                let pa = a_idx[drop];
                if seen_a.contains(&pa) {
                    continue;
                }
                seen_a.push(pa);
                let mut a_rest = a_idx.clone();
                a_rest.remove(drop);
                let w_a = orderings(&a_rest) as i64;
                // second group: which sub-multiset of B goes to the U slots
                for (bu, bp) in sub_multisets(b_idx, s) {
                    let w_b = (orderings(&bp) * orderings(&bu)) as i64;
                    // expand U^{bu}: product over the chosen components
                    let mut partials: Vec<(Vec<u8>, Vec<u8>, i64)> =
                        vec![(a_rest.clone(), {
                            let mut v = bp.clone();
                            v.push(pa);
                            v
                        }, d as i64 * w_a * w_b)];
                    for &ul in bu.iter() {
                        let mut next = Vec::new();
                        for (xs, ps, val) in partials.iter() {
                            for &(ua, ub, uc, uv) in &tables.u[ul as usize] {
                                let mut xs2 = xs.clone();
                                xs2.push(ub);
                                xs2.push(uc);
                                let mut ps2 = ps.clone();
                                ps2.push(ua);
                                next.push((xs2, ps2, val * uv));
                            }
                        }
                        partials = next;
                    }
                    for (mut xs, mut ps, val) in partials {
                        if val == 0 {
                            continue;
                        }
                        xs.sort_unstable();
                        ps.sort_unstable();
                        let key = ax.rank(&xs) * nbx + bx.rank(&ps);
                        *acc.entry(key).or_insert(0) += val;
                    }
                }
            }
            // term 2: s * K(X^d; P^{d-s}, U^{s-1}, W)
            if s >= 1 {
                let w_a = orderings(a_idx) as i64;
                for (brest, bp) in sub_multisets(b_idx, s) {
                    // brest: s slots split into (s-1) U's and one W slot
                    let mut seen_w: Vec<u8> = Vec::new();
                    for widx in 0..brest.len() {
                        let wl = brest[widx];
                        if seen_w.contains(&wl) {
                            continue;
                        }
                        seen_w.push(wl);
                        let mut bu = brest.clone();
                        bu.remove(widx);
                        let w_b = (orderings(&bp) * orderings(&bu)) as i64;
                        let mut partials: Vec<(Vec<u8>, Vec<u8>, i64)> =
                            vec![(a_idx.clone(), bp.clone(), s as i64 * w_a * w_b)];
                        // U factors
                        for &ul in bu.iter() {
                            let mut next = Vec::new();
                            for (xs, ps, val) in partials.iter() {
                                for &(ua, ub, uc, uv) in &tables.u[ul as usize] {
                                    let mut xs2 = xs.clone();
                                    xs2.push(ub);
                                    xs2.push(uc);
                                    let mut ps2 = ps.clone();
                                    ps2.push(ua);
                                    next.push((xs2, ps2, val * uv));
                                }
                            }
                            partials = next;
                        }
                        // the single W factor
                        let mut next = Vec::new();
                        for (xs, ps, val) in partials.iter() {
                            for &(wa, wb, wc, wv) in &tables.w[wl as usize] {
                                let mut xs2 = xs.clone();
                                xs2.push(wa);
                                let mut ps2 = ps.clone();
                                ps2.push(wb);
                                ps2.push(wc);
                                next.push((xs2, ps2, val * wv));
                            }
                        }
                        for (mut xs, mut ps, val) in next {
                            if val == 0 {
                                continue;
                            }
                            xs.sort_unstable();
                            ps.sort_unstable();
                            let key = ax.rank(&xs) * nbx + bx.rank(&ps);
                            *acc.entry(key).or_insert(0) += val;
                        }
                    }
                }
            }
            let mut v: Vec<(u32, i64)> = acc.into_iter().filter(|&(_, v)| v != 0).collect();
            v.sort_unstable_by_key(|&(k, _)| k);
            v
        })
        .collect();
    let mut triplets: Vec<(u32, u32, i64)> = Vec::new();
    for (ci, entries) in per_coord.iter().enumerate() {
        for &(key, v) in entries {
            triplets.push((key, ci as u32, v));
        }
    }
    triplets.par_sort_unstable_by_key(|&(k, t, _)| ((k as u64) << 32) | t as u64);
    let mut raw = Vec::new();
    let mut pos = 0usize;
    while pos < triplets.len() {
        let key = triplets[pos].0;
        let mut row = Vec::new();
        while pos < triplets.len() && triplets[pos].0 == key {
            row.push((triplets[pos].1, triplets[pos].2));
            pos += 1;
        }
        raw.push((
            RowTag { eq: EquationId::TopInt(s as u8), alpha: key / nbx, beta: key % nbx },
            row,
        ));
    }
    raw
}

/// Rows of the two rank-one identities:
/// `K(X^{d-1}, P, P^d) = 0` and
/// `K(X^{d-1}, U, P^d) - K(X^d, P^{d-1}, W) = 0`.
pub fn build_rank1_system(space: &SymmetricSpaceModel, d: usize) -> Result<LinearSystem, SystemError> {
    if !space.is_normalized_rank_one() {
        return Err(SystemError::NotRankOne(space.name.clone()));
    }
    let n = space.n;
    let tables = curvature_tables(space);
    let coords = TopSlotCoords::new(n, d);
    let width = coords.width();
    let mut raw: Vec<(RowTag, Vec<(u32, i64)>)> = Vec::new();

    // identity A: bidegree (d-1, d+1)
    {
        let ax = MonomialIndexer::new(n, d - 1);
        let bx = MonomialIndexer::new(n, d + 1);
        let nbx = bx.count as u32;
        let mut acc: HashMap<u32, Vec<(u32, i64)>> = HashMap::new();
        for (ci, (a_idx, b_idx)) in coords.coords.iter().enumerate() {
            let mut seen_a: Vec<u8> = Vec::new();
            for drop in 0..a_idx.len() {
                let pa = a_idx[drop];
                if seen_a.contains(&pa) {
                    continue;
                }
                seen_a.push(pa);
                let mut a_rest = a_idx.clone();
                a_rest.remove(drop);
                let mut ps = b_idx.clone();
                ps.push(pa);
                ps.sort_unstable();
                let val = (orderings(&a_rest) * orderings(b_idx)) as i64;
                let key = ax.rank(&a_rest) * nbx + bx.rank(&ps);
                acc.entry(key).or_default().push((ci as u32, val));
            }
        }
        let mut keys: Vec<u32> = acc.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            raw.push((
                RowTag { eq: EquationId::Rank1Sym, alpha: key / nbx, beta: key % nbx },
                acc.remove(&key).unwrap(),
            ));
        }
    }

    // identity B: bidegree (d+1, d+1)
    {
        let ax = MonomialIndexer::new(n, d + 1);
        let bx = MonomialIndexer::new(n, d + 1);
        let nbx = bx.count as u32;
        let mut acc: HashMap<u32, Vec<(u32, i64)>> = HashMap::new();
        for (ci, (a_idx, b_idx)) in coords.coords.iter().enumerate() {
            // K(X^{d-1}, U, P^d): a slot of A takes U
            let mut seen_a: Vec<u8> = Vec::new();
            for drop in 0..a_idx.len() {
                let ul = a_idx[drop];
                if seen_a.contains(&ul) {
                    continue;
                }
                seen_a.push(ul);
                let mut a_rest = a_idx.clone();
                a_rest.remove(drop);
                let base = (orderings(&a_rest) * orderings(b_idx)) as i64;
                for &(ua, ub, uc, uv) in &tables.u[ul as usize] {
                    let mut xs = a_rest.clone();
                    xs.push(ub);
                    xs.push(uc);
                    xs.sort_unstable();
                    let mut ps = b_idx.clone();
                    ps.push(ua);
                    ps.sort_unstable();
                    let key = ax.rank(&xs) * nbx + bx.rank(&ps);
                    acc.entry(key).or_default().push((ci as u32, base * uv));
                }
            }
            // minus K(X^d, P^{d-1}, W): a slot of B takes W
            let mut seen_b: Vec<u8> = Vec::new();
            for drop in 0..b_idx.len() {
                let wl = b_idx[drop];
                if seen_b.contains(&wl) {
                    continue;
                }
                seen_b.push(wl);
                let mut b_rest = b_idx.clone();
                b_rest.remove(drop);
                let base = (orderings(a_idx) * orderings(&b_rest)) as i64;
                for &(wa, wb, wc, wv) in &tables.w[wl as usize] {
                    let mut xs = a_idx.clone();
                    xs.push(wa);
                    xs.sort_unstable();
                    let mut ps = b_rest.clone();
                    ps.push(wb);
                    ps.push(wc);
                    ps.sort_unstable();
                    let key = ax.rank(&xs) * nbx + bx.rank(&ps);
                    acc.entry(key).or_default().push((ci as u32, -base * wv));
                }
            }
        }
        let mut keys: Vec<u32> = acc.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            raw.push((
                RowTag { eq: EquationId::Rank1Bracket, alpha: key / nbx, beta: key % nbx },
                acc.remove(&key).unwrap(),
            ));
        }
    }
    Ok(finish_system(width, raw))
}

/// Exact check that a rank-`d` tensor satisfies the top-slot identity `s` as
/// a polynomial identity (expansion with the given tensor, no matrices).
pub fn topslot_identity_holds(
    space: &SymmetricSpaceModel,
    tensor: &SymTensorRankD,
    s: usize,
) -> bool {
    let tables = curvature_tables(space);
    let d = tensor.d;
    let mut acc: HashMap<(Vec<u8>, Vec<u8>), Rat> = HashMap::new();
    for ((a_idx, b_idx), val) in &tensor.coeffs {
        let scaled = val.clone();
        // term 1
        let mut seen_a: Vec<u8> = Vec::new();
        for drop in 0..a_idx.len() {
            let pa = a_idx[drop];
            if seen_a.contains(&pa) {
                continue;
            }
            seen_a.push(pa);
            let mut a_rest = a_idx.clone();
            a_rest.remove(drop);
            let w_a = orderings(&a_rest) as i64;
            for (bu, bp) in sub_multisets(b_idx, s) {
                let w_b = (orderings(&bp) * orderings(&bu)) as i64;
                let mut partials: Vec<(Vec<u8>, Vec<u8>, Rat)> = vec![(a_rest.clone(), {
                    let mut v = bp.clone();
                    v.push(pa);
                    v
                }, scaled.clone() * rat_int(d as i64 * w_a * w_b))];
                for &ul in bu.iter() {
                    let mut next = Vec::new();
                    for (xs, ps, v) in partials.iter() {
                        for &(ua, ub, uc, uv) in &tables.u[ul as usize] {
                            let mut xs2 = xs.clone();
                            xs2.push(ub);
                            xs2.push(uc);
                            let mut ps2 = ps.clone();
                            ps2.push(ua);
                            next.push((xs2, ps2, v.clone() * rat_int(uv)));
                        }
                    }
                    partials = next;
                }
                for (mut xs, mut ps, v) in partials {
                    xs.sort_unstable();
                    ps.sort_unstable();
                    add_rat(&mut acc, (xs, ps), v);
                }
            }
        }
        // term 2
        if s >= 1 {
            let w_a = orderings(a_idx) as i64;
            for (brest, bp) in sub_multisets(b_idx, s) {
                let mut seen_w: Vec<u8> = Vec::new();
                for widx in 0..brest.len() {
                    let wl = brest[widx];
                    if seen_w.contains(&wl) {
                        continue;
                    }
                    seen_w.push(wl);
                    let mut bu = brest.clone();
                    bu.remove(widx);
                    let w_b = (orderings(&bp) * orderings(&bu)) as i64;
                    let mut partials: Vec<(Vec<u8>, Vec<u8>, Rat)> =
                        vec![(a_idx.clone(), bp.clone(), scaled.clone() * rat_int(s as i64 * w_a * w_b))];
                    for &ul in bu.iter() {
                        let mut next = Vec::new();
                        for (xs, ps, v) in partials.iter() {
                            for &(ua, ub, uc, uv) in &tables.u[ul as usize] {
                                let mut xs2 = xs.clone();
                                xs2.push(ub);
                                xs2.push(uc);
                                let mut ps2 = ps.clone();
                                ps2.push(ua);
                                next.push((xs2, ps2, v.clone() * rat_int(uv)));
                            }
                        }
                        partials = next;
                    }
                    for (xs, ps, v) in partials.iter() {
                        for &(wa, wb, wc, wv) in &tables.w[wl as usize] {
                            let mut xs2 = xs.clone();
                            xs2.push(wa);
                            let mut ps2 = ps.clone();
                            ps2.push(wb);
                            ps2.push(wc);
                            xs2.sort_unstable();
                            ps2.sort_unstable();
                            add_rat(&mut acc, (xs2, ps2), v.clone() * rat_int(wv));
                        }
                    }
                }
            }
        }
    }
    acc.values().all(|v| v.is_zero())
}

fn add_rat(acc: &mut HashMap<(Vec<u8>, Vec<u8>), Rat>, key: (Vec<u8>, Vec<u8>), v: Rat) {
    if v.is_zero() {
        return;
    }
    let entry = acc.entry(key).or_insert_with(Rat::zero);
    *entry += v;
}

// ---------------------------------------------------------------------------
// solving and spans
// ---------------------------------------------------------------------------

/// Exact solution of a system: certified nullspace basis plus the rank
/// witnessed by the modular pivot minor.
pub struct SolveOutcome {
    pub nullspace: Vec<Vec<BigInt>>,
    pub rank: usize,
    pub primes_used: Vec<u64>,
    pub pivot_cols: Vec<u32>,
}

pub fn solve(system: &LinearSystem, opts: SolveOptions) -> Result<SolveOutcome, SystemError> {
    let ns = linalg::nullspace(&system.matrix, opts)?;
    debug_assert_eq!(ns.basis.len() + ns.rank, system.unknown_dim);
    Ok(SolveOutcome {
        nullspace: ns.basis,
        rank: ns.rank,
        primes_used: ns.primes_used,
        pivot_cols: ns.pivot_cols,
    })
}

/// The decomposable span: for every unordered pair of isotropy generators,
/// the symmetrised product of their linear momentum forms, projected to the
/// symmetry-class coordinates.
pub struct DecomposableSpan {
    pub tensors: Vec<SymPairTensor>,
    pub coord_vecs: Vec<Vec<BigInt>>,
    pub dim: usize,
}

pub fn decomposable_span(space: &SymmetricSpaceModel, opts: SolveOptions) -> Result<DecomposableSpan, SystemError> {
    let n = space.n;
    let basis = bianchi_basis(n);
    let gens = &space.isotropy_gens;
    // momentum forms v_A(i, k) = <A e_i, e_k> in the model inner product
    let forms: Vec<Vec<(usize, usize, Rat)>> = gens
        .iter()
        .map(|g| {
            let mut f = Vec::new();
            for k in 0..n {
                for i in 0..n {
                    if g[k][i] != 0 {
                        f.push((i, k, rat_int(g[k][i]) * &space.inner[k]));
                    }
                }
            }
            f
        })
        .collect();
    let mut tensors = Vec::new();
    let mut coord_vecs = Vec::new();
    for gi in 0..gens.len() {
        for gj in gi..gens.len() {
            let mut ordered: HashMap<(usize, usize, usize, usize), Rat> = HashMap::new();
            for &(i1, k1, ref v1) in &forms[gi] {
                for &(i2, k2, ref v2) in &forms[gj] {
                    let v = v1.clone() * v2 * rat_int(1) / rat_int(4);
                    // the four pair-symmetrisation terms as ordered tuples
                    for key in [(i1, i2, k1, k2), (i2, i1, k1, k2), (i1, i2, k2, k1), (i2, i1, k2, k1)] {
                        let e = ordered.entry(key).or_insert_with(Rat::zero);
                        *e += v.clone();
                    }
                }
            }
            let mut t = SymPairTensor::zero(n);
            for ((a, b, c, d), v) in ordered {
                if a <= b && c <= d && !v.is_zero() {
                    t.add_to(a, b, c, d, v);
                }
            }
            let coords = basis
                .project(&t)
                .ok_or_else(|| SystemError::Certification(format!(
                    "decomposable generator ({gi},{gj}) is outside the symmetry class"
                )))?;
            let lcm = denom_lcm(&coords);
            let vec: Vec<BigInt> = coords
                .iter()
                .map(|c| (c * Rat::from(lcm.clone())).numer().clone())
                .collect();
            tensors.push(t);
            coord_vecs.push(vec);
        }
    }
    let dim = linalg::span_rank(&coord_vecs, basis.dim(), opts)?;
    Ok(DecomposableSpan { tensors, coord_vecs, dim })
}

/// True iff every row of the system annihilates the coordinate vector.
pub fn membership(system: &LinearSystem, v: &[BigInt]) -> bool {
    system.membership(v)
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

/// Summary of one solve-and-certify run.
#[derive(Clone, Debug, Serialize)]
pub struct SolutionReport {
    pub schema: u32,
    pub space_name: String,
    pub n: usize,
    pub rank_d: usize,
    pub unknown_dim: usize,
    pub row_count: usize,
    pub raw_row_count: usize,
    pub system_rank: usize,
    pub solution_dim: usize,
    pub decomposable_dim: usize,
    pub indecomposable_dim: usize,
    pub scale_factor: String,
    pub arithmetic_mode: String,
    pub prime_seed: u64,
    pub primes_used: Vec<u64>,
    pub include_eq22: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

/// Full quadratic pipeline: build, solve, decompose, certify membership of
/// the decomposable generators, and count the indecomposable complement.
pub struct QuadraticRun {
    pub report: SolutionReport,
    pub system: LinearSystem,
    pub outcome: SolveOutcome,
    pub span: DecomposableSpan,
}

pub fn indecomposability_report(
    space: &SymmetricSpaceModel,
    include_eq22: Option<bool>,
    opts: SolveOptions,
    with_timing: bool,
) -> Result<QuadraticRun, SystemError> {
    let started = std::time::Instant::now();
    let include_eq22 = include_eq22.unwrap_or(!space.rank_one);
    let system = build_quadratic_system(space, include_eq22);
    let outcome = solve(&system, opts)?;
    let span = decomposable_span(space, opts)?;
    // every decomposable generator must solve the system exactly
    for (k, v) in span.coord_vecs.iter().enumerate() {
        if !system.membership(v) {
            return Err(SystemError::Certification(format!(
                "decomposable generator {k} fails the integrability system"
            )));
        }
    }
    let solution_dim = outcome.nullspace.len();
    if span.dim > solution_dim {
        return Err(SystemError::Certification(
            "decomposable span exceeds the solution space".into(),
        ));
    }
    let report = SolutionReport {
        schema: 1,
        space_name: space.name.clone(),
        n: space.n,
        rank_d: 2,
        unknown_dim: system.unknown_dim,
        row_count: system.matrix.nrows(),
        raw_row_count: system.raw_row_count,
        system_rank: outcome.rank,
        solution_dim,
        decomposable_dim: span.dim,
        indecomposable_dim: solution_dim - span.dim,
        scale_factor: crate::ratio::format_rat(&space.scale_factor),
        arithmetic_mode: "multi-modular exact (CRT + rational reconstruction, residuals verified)".into(),
        prime_seed: opts.seed,
        primes_used: outcome.primes_used.clone(),
        include_eq22,
        elapsed_ms: with_timing.then(|| started.elapsed().as_millis() as u64),
    };
    Ok(QuadraticRun { report, system, outcome, span })
}

/// Nullspace of the full top-slot system, certified without materialising
/// the expensive high-`s` identities: the nullspace of the cheap subsystem
/// (`s <= 1`) is computed exactly, then every basis vector is verified
/// against the remaining identities by exact polynomial expansion. Since the
/// subsystem nullspace always contains the full one, all-pass certifies
/// equality.
pub fn topslot_nullspace_certified(
    space: &SymmetricSpaceModel,
    d: usize,
    opts: SolveOptions,
) -> Result<(TopSlotCoords, SolveOutcome), SystemError> {
    let n = space.n;
    let coords = TopSlotCoords::new(n, d);
    let tables = curvature_tables(space);
    let mut raw = Vec::new();
    for s in 0..=1usize.min(d) {
        raw.extend(topslot_identity_rows(space, &tables, &coords, d, s));
    }
    let system = finish_system(coords.width(), raw);
    let outcome = solve(&system, opts)?;
    for (k, v) in outcome.nullspace.iter().enumerate() {
        let tensor = coords.tensor_from_vec(v);
        for s in 2..=d {
            if !topslot_identity_holds(space, &tensor, s) {
                return Err(SystemError::Certification(format!(
                    "subsystem nullspace vector {k} violates top-slot identity s = {s}"
                )));
            }
        }
    }
    Ok((coords, outcome))
}

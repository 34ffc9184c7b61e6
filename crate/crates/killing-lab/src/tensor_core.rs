//! Symmetric tensor representations housing the unknown coefficients of
//! quadratic and rank-`d` top-slot Killing tensors.
//!
//! A [`SymPairTensor`] is a type-(0,4) tensor symmetric in its first and in
//! its second pair of slots, stored on canonical indices `(i<=j, k<=l)`. The
//! subspace cut out by `K(X,X,X,P) = 0` (equivalently, vanishing triple
//! symmetrisation) is spanned by [`BianchiBasis`]; it has dimension
//! `n^2(n^2-1)/12` and carries the same slot symmetries as algebraic
//! curvature tensors.

use crate::ratio::{format_rat, parse_rat, rat_int, Rat};
use num::{BigInt, One, Zero};
use once_cell::sync::Lazy;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum TensorError {
    #[error("dimension mismatch: expected vectors of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("slot-count mismatch: tensor has {slots} slots, symmetriser wants {wanted}")]
    SlotMismatch { slots: usize, wanted: usize },
    #[error("malformed tensor exchange data: {0}")]
    Exchange(String),
    #[error("non-canonical index quadruple ({0}, {1}, {2}, {3})")]
    NonCanonical(usize, usize, usize, usize),
}

/// Number of unordered pairs `(i<=j)` over `n` indices.
pub fn pair_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Rank of the pair `(i<=j)` in lexicographic order, `0`-based.
#[inline]
pub fn pair_rank(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < n);
    i * n - i * (i + 1) / 2 + j
}

/// Inverse of [`pair_rank`].
pub fn pair_unrank(n: usize, mut r: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - i;
        if r < row {
            return (i, i + r);
        }
        r -= row;
    }
    unreachable!("pair rank out of range")
}

/// Dimension of the triple-symmetrisation-free subspace: `n^2(n^2-1)/12`.
pub fn k2_space_dim(n: usize) -> usize {
    n * n * (n * n - 1) / 12
}

// ---------------------------------------------------------------------------
// SymPairTensor
// ---------------------------------------------------------------------------

/// Type-(0,4) tensor symmetric under slot swaps 1<->2 and 3<->4, stored by
/// canonical index quadruples. Dense vector storage for `n <= 8`, sparse map
/// above.
#[derive(Clone, Debug, PartialEq)]
pub struct SymPairTensor {
    pub n: usize,
    storage: Storage,
}

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Dense(Vec<Rat>),
    Sparse(BTreeMap<u32, Rat>),
}

impl SymPairTensor {
    pub fn zero(n: usize) -> Self {
        let storage = if n <= 8 {
            Storage::Dense(vec![Rat::zero(); pair_count(n) * pair_count(n)])
        } else {
            Storage::Sparse(BTreeMap::new())
        };
        SymPairTensor { n, storage }
    }

    /// Canonical coordinate id of the quadruple `(i<=j, k<=l)`.
    #[inline]
    pub fn coord_id(&self, i: usize, j: usize, k: usize, l: usize) -> u32 {
        let np = pair_count(self.n);
        (pair_rank(self.n, i, j) * np + pair_rank(self.n, k, l)) as u32
    }

    pub fn coord_count(&self) -> usize {
        pair_count(self.n) * pair_count(self.n)
    }

    /// Tensor value on basis vectors, slots in any order.
    pub fn value(&self, a: usize, b: usize, c: usize, d: usize) -> Rat {
        let (i, j) = if a <= b { (a, b) } else { (b, a) };
        let (k, l) = if c <= d { (c, d) } else { (d, c) };
        let id = self.coord_id(i, j, k, l);
        match &self.storage {
            Storage::Dense(v) => v[id as usize].clone(),
            Storage::Sparse(m) => m.get(&id).cloned().unwrap_or_else(Rat::zero),
        }
    }

    pub fn add_to(&mut self, a: usize, b: usize, c: usize, d: usize, v: Rat) {
        if v.is_zero() {
            return;
        }
        let (i, j) = if a <= b { (a, b) } else { (b, a) };
        let (k, l) = if c <= d { (c, d) } else { (d, c) };
        let id = self.coord_id(i, j, k, l);
        match &mut self.storage {
            Storage::Dense(vals) => vals[id as usize] += v,
            Storage::Sparse(m) => {
                let e = m.entry(id).or_insert_with(Rat::zero);
                *e += v;
                if e.is_zero() {
                    m.remove(&id);
                }
            }
        }
    }

    /// Iterates canonical nonzero coordinates as `(coord_id, value)`.
    pub fn iter_nonzero(&self) -> Box<dyn Iterator<Item = (u32, Rat)> + '_> {
        match &self.storage {
            Storage::Dense(v) => Box::new(
                v.iter()
                    .enumerate()
                    .filter(|(_, x)| !x.is_zero())
                    .map(|(i, x)| (i as u32, x.clone())),
            ),
            Storage::Sparse(m) => Box::new(m.iter().map(|(&i, x)| (i, x.clone()))),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.iter_nonzero().next().is_none()
    }

    pub fn scaled(&self, k: &Rat) -> SymPairTensor {
        let mut out = SymPairTensor::zero(self.n);
        for (id, v) in self.iter_nonzero() {
            let np = pair_count(self.n);
            let (p1, p2) = ((id as usize) / np, (id as usize) % np);
            let (i, j) = pair_unrank(self.n, p1);
            let (k2, l) = pair_unrank(self.n, p2);
            out.add_to(i, j, k2, l, v * k);
        }
        out
    }

    pub fn add(&self, other: &SymPairTensor) -> SymPairTensor {
        assert_eq!(self.n, other.n);
        let mut out = self.clone();
        let np = pair_count(self.n);
        for (id, v) in other.iter_nonzero() {
            let (p1, p2) = ((id as usize) / np, (id as usize) % np);
            let (i, j) = pair_unrank(self.n, p1);
            let (k, l) = pair_unrank(self.n, p2);
            out.add_to(i, j, k, l, v);
        }
        out
    }

    /// Diagonal evaluation `K(X,X,P,P)` with exact rationals.
    pub fn eval(&self, x: &[Rat], p: &[Rat]) -> Result<Rat, TensorError> {
        if x.len() != self.n || p.len() != self.n {
            return Err(TensorError::DimensionMismatch { expected: self.n, got: x.len().max(p.len()) });
        }
        let np = pair_count(self.n);
        let mut acc = Rat::zero();
        for (id, v) in self.iter_nonzero() {
            let (p1, p2) = ((id as usize) / np, (id as usize) % np);
            let (i, j) = pair_unrank(self.n, p1);
            let (k, l) = pair_unrank(self.n, p2);
            let mx = if i == j { &x[i] * &x[j] } else { rat_int(2) * &x[i] * &x[j] };
            let mp = if k == l { &p[k] * &p[l] } else { rat_int(2) * &p[k] * &p[l] };
            acc += v * mx * mp;
        }
        Ok(acc)
    }

    /// The polynomial identity `K(X,X,X,P) = 0` tested at one point.
    pub fn eval_xxp(&self, x: &[Rat], p: &[Rat]) -> Result<Rat, TensorError> {
        if x.len() != self.n || p.len() != self.n {
            return Err(TensorError::DimensionMismatch { expected: self.n, got: x.len().max(p.len()) });
        }
        // K(X,X,X,P) = sum over slots with (X,X) pair and (X,P) second pair
        let np = pair_count(self.n);
        let mut acc = Rat::zero();
        for (id, v) in self.iter_nonzero() {
            let (p1, p2) = ((id as usize) / np, (id as usize) % np);
            let (i, j) = pair_unrank(self.n, p1);
            let (k, l) = pair_unrank(self.n, p2);
            let mx = if i == j { &x[i] * &x[j] } else { rat_int(2) * &x[i] * &x[j] };
            // second pair slots take (X, P) in every distinct order
            let cross = if k == l {
                &x[k] * &p[k]
            } else {
                &x[k] * &p[l] + &x[l] * &p[k]
            };
            acc += v * mx * cross;
        }
        Ok(acc)
    }

    /// Pair-exchange symmetry `K(X1,X2,X3,X4) = K(X3,X4,X1,X2)` as a
    /// coefficient test.
    pub fn is_pair_exchange_symmetric(&self) -> bool {
        let np = pair_count(self.n);
        self.iter_nonzero().all(|(id, v)| {
            let (p1, p2) = ((id as usize) / np, (id as usize) % np);
            let (i, j) = pair_unrank(self.n, p1);
            let (k, l) = pair_unrank(self.n, p2);
            self.value(k, l, i, j) == v
        })
    }

    /// Dense coordinate vector over canonical ids.
    pub fn to_coord_vec(&self) -> Vec<Rat> {
        let mut v = vec![Rat::zero(); self.coord_count()];
        for (id, val) in self.iter_nonzero() {
            v[id as usize] = val;
        }
        v
    }

    pub fn from_coord_vec(n: usize, v: &[Rat]) -> Self {
        let np = pair_count(n);
        assert_eq!(v.len(), np * np);
        let mut t = SymPairTensor::zero(n);
        for (id, val) in v.iter().enumerate() {
            if !val.is_zero() {
                let (i, j) = pair_unrank(n, id / np);
                let (k, l) = pair_unrank(n, id % np);
                t.add_to(i, j, k, l, val.clone());
            }
        }
        t
    }

    /// Serialises as `{"n": int, "entries": [[i,j,k,l,"p/q"], ...]}` with
    /// canonical indices only.
    pub fn to_exchange_json(&self) -> Value {
        let np = pair_count(self.n);
        let entries: Vec<Value> = self
            .iter_nonzero()
            .map(|(id, v)| {
                let (i, j) = pair_unrank(self.n, (id as usize) / np);
                let (k, l) = pair_unrank(self.n, (id as usize) % np);
                json!([i, j, k, l, format_rat(&v)])
            })
            .collect();
        json!({"n": self.n, "entries": entries})
    }

    /// Reads the exchange format, rejecting non-canonical quadruples.
    pub fn from_exchange_json(v: &Value) -> Result<Self, TensorError> {
        let n = v
            .get("n")
            .and_then(Value::as_u64)
            .ok_or_else(|| TensorError::Exchange("missing `n`".into()))? as usize;
        let entries = v
            .get("entries")
            .and_then(Value::as_array)
            .ok_or_else(|| TensorError::Exchange("missing `entries`".into()))?;
        let mut t = SymPairTensor::zero(n);
        for e in entries {
            let a = e.as_array().ok_or_else(|| TensorError::Exchange("entry is not an array".into()))?;
            if a.len() != 5 {
                return Err(TensorError::Exchange("entry must be [i,j,k,l,\"p/q\"]".into()));
            }
            let idx: Vec<usize> = a[..4]
                .iter()
                .map(|x| x.as_u64().map(|u| u as usize).ok_or_else(|| TensorError::Exchange("bad index".into())))
                .collect::<Result<_, _>>()?;
            let (i, j, k, l) = (idx[0], idx[1], idx[2], idx[3]);
            if j >= n || l >= n {
                return Err(TensorError::Exchange(format!("index out of range in ({i},{j},{k},{l})")));
            }
            if i > j || k > l {
                return Err(TensorError::NonCanonical(i, j, k, l));
            }
            let val = parse_rat(a[4].as_str().ok_or_else(|| TensorError::Exchange("value must be a string".into()))?)
                .map_err(TensorError::Exchange)?;
            t.add_to(i, j, k, l, val);
        }
        Ok(t)
    }
}

// ---------------------------------------------------------------------------
// Bianchi-type subspace
// ---------------------------------------------------------------------------

/// Basis of the subspace of [`SymPairTensor`] cut out by `K(X,X,X,P)=0`,
/// produced by rational elimination with a deterministic smallest-index pivot
/// rule. Basis vectors have integer coefficients and are in reduced
/// free-column form: basis vector `t` has coefficient equal to its (positive)
/// scale at `free_cols[t]` and support only on pivot columns of its block.
#[derive(Clone, Debug)]
pub struct BianchiBasis {
    pub n: usize,
    /// canonical coord ids of free columns, ascending; one basis vector each
    pub free_cols: Vec<u32>,
    /// sparse basis vectors over canonical coord ids (sorted by column)
    pub vectors: Vec<Vec<(u32, BigInt)>>,
    /// for membership/projection: pivot columns with their expression over
    /// free columns: `coeff[pivot] = sum_f expr[pivot][f] * coeff[f]`
    pivot_expr: HashMap<u32, Vec<(u32, Rat)>>,
}

static BIANCHI_CACHE: Lazy<Mutex<HashMap<usize, Arc<BianchiBasis>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Cached deterministic basis of the `K(X,X,X,P)=0` subspace.
pub fn bianchi_basis(n: usize) -> Arc<BianchiBasis> {
    let mut cache = BIANCHI_CACHE.lock().unwrap();
    cache.entry(n).or_insert_with(|| Arc::new(BianchiBasis::build(n))).clone()
}

impl BianchiBasis {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    fn build(n: usize) -> BianchiBasis {
        let np = pair_count(n);
        // Group constraint rows and columns by the multiset of the four
        // indices; blocks share no columns so per-block elimination equals a
        // global run with the smallest-index pivot rule.
        let mut blocks: BTreeMap<[u8; 4], Vec<u32>> = BTreeMap::new();
        for p1 in 0..np {
            let (i, j) = pair_unrank(n, p1);
            for p2 in 0..np {
                let (k, l) = pair_unrank(n, p2);
                let mut key = [i as u8, j as u8, k as u8, l as u8];
                key.sort_unstable();
                blocks.entry(key).or_default().push((p1 * np + p2) as u32);
            }
        }
        let mut free_cols: Vec<u32> = Vec::new();
        let mut vectors: Vec<Vec<(u32, BigInt)>> = Vec::new();
        let mut pivot_expr: HashMap<u32, Vec<(u32, Rat)>> = HashMap::new();
        for (key, cols) in blocks {
            let rows = constraint_rows_for_multiset(n, &key, &cols);
            let (pivots, block_free, rref) = rref_rational(&cols, rows);
            for (p_col, expr) in pivots.iter().zip(rref.iter()) {
                // pivot coefficient = -sum over free of rref entry
                let e: Vec<(u32, Rat)> = block_free
                    .iter()
                    .zip(expr.iter())
                    .filter(|(_, v)| !v.is_zero())
                    .map(|(&f, v)| (f, -v.clone()))
                    .collect();
                pivot_expr.insert(*p_col, e);
            }
            for (fi, &f) in block_free.iter().enumerate() {
                // nullspace vector: 1 at f, -rref[k][fi] at pivot k
                let mut entries: Vec<(u32, Rat)> = vec![(f, Rat::one())];
                for (k, &pc) in pivots.iter().enumerate() {
                    let v = &rref[k][fi];
                    if !v.is_zero() {
                        entries.push((pc, -v.clone()));
                    }
                }
                entries.sort_by_key(|&(c, _)| c);
                let lcm = crate::ratio::denom_lcm(&entries.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>());
                let mut int_entries: Vec<(u32, BigInt)> = entries
                    .into_iter()
                    .map(|(c, v)| {
                        let scaled = v * Rat::from(lcm.clone());
                        debug_assert!(scaled.denom().is_one());
                        (c, scaled.numer().clone())
                    })
                    .collect();
                let mut content = BigInt::zero();
                for (_, x) in &int_entries {
                    content = num::Integer::gcd(&content, x);
                }
                if !content.is_one() && !content.is_zero() {
                    for (_, x) in int_entries.iter_mut() {
                        *x = &*x / &content;
                    }
                }
                free_cols.push(f);
                vectors.push(int_entries);
            }
        }
        // deterministic order by free column
        let mut order: Vec<usize> = (0..free_cols.len()).collect();
        order.sort_by_key(|&i| free_cols[i]);
        let free_cols = order.iter().map(|&i| free_cols[i]).collect();
        let vectors = order.iter().map(|&i| vectors[i].clone()).collect();
        BianchiBasis { n, free_cols, vectors, pivot_expr }
    }

    pub fn basis_tensor(&self, t: usize) -> SymPairTensor {
        let np = pair_count(self.n);
        let mut out = SymPairTensor::zero(self.n);
        for &(c, ref v) in &self.vectors[t] {
            let (i, j) = pair_unrank(self.n, (c as usize) / np);
            let (k, l) = pair_unrank(self.n, (c as usize) % np);
            out.add_to(i, j, k, l, Rat::from(v.clone()));
        }
        out
    }

    /// Projects a subspace member onto basis coordinates; returns `None` when
    /// the tensor does not satisfy the symmetry-class constraints.
    pub fn project(&self, t: &SymPairTensor) -> Option<Vec<Rat>> {
        assert_eq!(t.n, self.n);
        let free_index: HashMap<u32, usize> =
            self.free_cols.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        // free coordinates: tensor coefficient at the free column divided by
        // that basis vector's own scale at its free column
        let mut coords = vec![Rat::zero(); self.dim()];
        for (id, v) in t.iter_nonzero() {
            if let Some(&fi) = free_index.get(&id) {
                let scale = self.vectors[fi]
                    .iter()
                    .find(|&&(c, _)| c == id)
                    .map(|(_, s)| Rat::from(s.clone()))
                    .unwrap();
                coords[fi] = v / scale;
            }
        }
        // consistency at pivot columns
        for (id, v) in t.iter_nonzero() {
            if free_index.contains_key(&id) {
                continue;
            }
            match self.pivot_expr.get(&id) {
                None => return None, // nonzero outside the subspace support
                Some(expr) => {
                    let mut acc = Rat::zero();
                    for (f, c) in expr {
                        let fi = free_index[f];
                        // expression is over raw free coefficients
                        let scale = self.vectors[fi]
                            .iter()
                            .find(|&&(cc, _)| cc == *f)
                            .map(|(_, s)| Rat::from(s.clone()))
                            .unwrap();
                        acc += c.clone() * &coords[fi] * scale;
                    }
                    if acc != v {
                        return None;
                    }
                }
            }
        }
        // zero pivot columns whose expression is nonzero must also check out
        for (pc, expr) in &self.pivot_expr {
            if t.value_by_id(*pc).is_zero() {
                let mut acc = Rat::zero();
                for (f, c) in expr {
                    let fi = free_index[f];
                    let scale = self.vectors[fi]
                        .iter()
                        .find(|&&(cc, _)| cc == *f)
                        .map(|(_, s)| Rat::from(s.clone()))
                        .unwrap();
                    acc += c.clone() * &coords[fi] * scale;
                }
                if !acc.is_zero() {
                    return None;
                }
            }
        }
        Some(coords)
    }

    /// Linear combination of basis vectors as a tensor.
    pub fn combine(&self, coords: &[Rat]) -> SymPairTensor {
        assert_eq!(coords.len(), self.dim());
        let np = pair_count(self.n);
        let mut out = SymPairTensor::zero(self.n);
        for (t, c) in coords.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            for &(id, ref v) in &self.vectors[t] {
                let (i, j) = pair_unrank(self.n, (id as usize) / np);
                let (k, l) = pair_unrank(self.n, (id as usize) % np);
                out.add_to(i, j, k, l, c.clone() * Rat::from(v.clone()));
            }
        }
        out
    }
}

impl SymPairTensor {
    fn value_by_id(&self, id: u32) -> Rat {
        match &self.storage {
            Storage::Dense(v) => v[id as usize].clone(),
            Storage::Sparse(m) => m.get(&id).cloned().unwrap_or_else(Rat::zero),
        }
    }
}

/// Constraint rows of `K(X,X,X,P)=0` whose index multiset equals `key`.
fn constraint_rows_for_multiset(n: usize, key: &[u8; 4], _cols: &[u32]) -> Vec<Vec<(u32, Rat)>> {
    let np = pair_count(n);
    let coord = |a: usize, b: usize, c: usize, d: usize| -> u32 {
        let (i, j) = if a <= b { (a, b) } else { (b, a) };
        let (k, l) = if c <= d { (c, d) } else { (d, c) };
        (pair_rank(n, i, j) * np + pair_rank(n, k, l)) as u32
    };
    let mut rows = Vec::new();
    let key_ms: Vec<usize> = key.iter().map(|&x| x as usize).collect();
    let mut seen_l: Vec<usize> = Vec::new();
    for &l in key_ms.iter() {
        if seen_l.contains(&l) {
            continue;
        }
        seen_l.push(l);
        // triple = multiset minus one copy of l (stays sorted)
        let mut triple = key_ms.clone();
        let pos = triple.iter().position(|&x| x == l).unwrap();
        triple.remove(pos);
        let (a, b, c) = (triple[0], triple[1], triple[2]);
        let mut row: Vec<(u32, Rat)> = Vec::new();
        let push = |row: &mut Vec<(u32, Rat)>, id: u32, w: i64| {
            if let Some(e) = row.iter_mut().find(|(c, _)| *c == id) {
                e.1 += rat_int(w);
            } else {
                row.push((id, rat_int(w)));
            }
        };
        // coefficient of x_a x_b x_c p_l: one term per distinct ordered triple
        if a < b && b < c {
            push(&mut row, coord(a, b, c, l), 2);
            push(&mut row, coord(a, c, b, l), 2);
            push(&mut row, coord(b, c, a, l), 2);
        } else if a == b && b == c {
            push(&mut row, coord(a, a, a, l), 1);
        } else {
            // exactly two equal: multiset {x, x, z}
            let (x, z) = if a == b { (a, c) } else { (b, a) };
            push(&mut row, coord(x, x, z, l), 1);
            push(&mut row, coord(x, z, x, l), 2);
        }
        row.retain(|(_, v)| !v.is_zero());
        row.sort_by_key(|&(c, _)| c);
        if !row.is_empty() {
            rows.push(row);
        }
    }
    rows
}

/// Exact RREF over the rationals on a small column window. Returns
/// `(pivot_cols, free_cols, rref_entries_at_free)` with pivots ascending.
#[allow(clippy::type_complexity)]
fn rref_rational(cols: &[u32], rows: Vec<Vec<(u32, Rat)>>) -> (Vec<u32>, Vec<u32>, Vec<Vec<Rat>>) {
    let local: HashMap<u32, usize> = cols.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let width = cols.len();
    let mut mat: Vec<Vec<Rat>> = rows
        .into_iter()
        .map(|r| {
            let mut dense = vec![Rat::zero(); width];
            for (c, v) in r {
                dense[local[&c]] = v;
            }
            dense
        })
        .collect();
    let mut pivot_rows: Vec<(usize, usize)> = Vec::new(); // (col, row)
    let mut next_row = 0usize;
    for col in 0..width {
        let mut found = None;
        for r in next_row..mat.len() {
            if !mat[r][col].is_zero() {
                found = Some(r);
                break;
            }
        }
        let Some(r) = found else { continue };
        mat.swap(next_row, r);
        let inv = mat[next_row][col].clone();
        for v in mat[next_row].iter_mut() {
            *v = v.clone() / &inv;
        }
        for rr in 0..mat.len() {
            if rr != next_row && !mat[rr][col].is_zero() {
                let f = mat[rr][col].clone();
                let (head, tail) = if rr < next_row {
                    let (a, b) = mat.split_at_mut(next_row);
                    (&mut a[rr], &b[0])
                } else {
                    let (a, b) = mat.split_at_mut(rr);
                    (&mut b[0], &a[next_row])
                };
                for (x, y) in head.iter_mut().zip(tail.iter()) {
                    *x -= f.clone() * y;
                }
            }
        }
        pivot_rows.push((col, next_row));
        next_row += 1;
    }
    let pivot_local: Vec<usize> = pivot_rows.iter().map(|&(c, _)| c).collect();
    let free_local: Vec<usize> = (0..width).filter(|c| !pivot_local.contains(c)).collect();
    let pivots: Vec<u32> = pivot_local.iter().map(|&c| cols[c]).collect();
    let free: Vec<u32> = free_local.iter().map(|&c| cols[c]).collect();
    let rref = pivot_rows
        .iter()
        .map(|&(_, r)| free_local.iter().map(|&f| mat[r][f].clone()).collect())
        .collect();
    (pivots, free, rref)
}

// ---------------------------------------------------------------------------
// BianchiTensor
// ---------------------------------------------------------------------------

/// Coefficient vector in the fixed [`BianchiBasis`] of its dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct BianchiTensor {
    pub n: usize,
    pub coords: Vec<Rat>,
}

impl BianchiTensor {
    pub fn new(n: usize, coords: Vec<Rat>) -> Self {
        assert_eq!(coords.len(), bianchi_basis(n).dim());
        BianchiTensor { n, coords }
    }

    pub fn to_sym_pair(&self) -> SymPairTensor {
        bianchi_basis(self.n).combine(&self.coords)
    }

    pub fn eval(&self, x: &[Rat], p: &[Rat]) -> Result<Rat, TensorError> {
        self.to_sym_pair().eval(x, p)
    }
}

// ---------------------------------------------------------------------------
// rank-d tensors
// ---------------------------------------------------------------------------

/// Sorted multi-index of length `d` over `n` symbols.
pub type MultiIdx = Vec<u8>;

/// All sorted multi-indices of length `d` in lexicographic order.
pub fn multi_indices(n: usize, d: usize) -> Vec<MultiIdx> {
    let mut out = Vec::new();
    let mut cur = vec![0u8; d];
    loop {
        out.push(cur.clone());
        // next multiset
        let mut pos = d;
        while pos > 0 {
            if (cur[pos - 1] as usize) < n - 1 {
                cur[pos - 1] += 1;
                for q in pos..d {
                    cur[q] = cur[pos - 1];
                }
                break;
            }
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
    }
    out
}

/// Number of distinct orderings of a sorted multi-index (multinomial).
pub fn orderings(idx: &[u8]) -> u64 {
    let d = idx.len();
    let mut fact = vec![1u64; d + 1];
    for k in 1..=d {
        fact[k] = fact[k - 1] * k as u64;
    }
    let mut denom = 1u64;
    let mut run = 1usize;
    for w in 1..=d {
        if w < d && idx[w] == idx[w - 1] {
            run += 1;
        } else {
            denom *= fact[run];
            run = 1;
        }
    }
    fact[d] / denom
}

/// Constant tensor symmetric in its first `d` and last `d` slots, the
/// coefficient object of a rank-`d` top-slot field.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorRankD {
    pub n: usize,
    pub d: usize,
    /// values on canonical (sorted, sorted) index pairs
    pub coeffs: BTreeMap<(MultiIdx, MultiIdx), Rat>,
}

impl SymTensorRankD {
    pub fn zero(n: usize, d: usize) -> Self {
        SymTensorRankD { n, d, coeffs: BTreeMap::new() }
    }

    pub fn coord_space(n: usize, d: usize) -> Vec<(MultiIdx, MultiIdx)> {
        let idxs = multi_indices(n, d);
        let mut out = Vec::with_capacity(idxs.len() * idxs.len());
        for a in &idxs {
            for b in &idxs {
                out.push((a.clone(), b.clone()));
            }
        }
        out
    }

    pub fn add_to(&mut self, a: MultiIdx, b: MultiIdx, v: Rat) {
        if v.is_zero() {
            return;
        }
        debug_assert!(a.windows(2).all(|w| w[0] <= w[1]));
        debug_assert!(b.windows(2).all(|w| w[0] <= w[1]));
        let key = (a, b);
        let e = self.coeffs.entry(key.clone()).or_insert_with(Rat::zero);
        *e += v;
        if e.is_zero() {
            self.coeffs.remove(&key);
        }
    }

    /// Value on basis slots `(first group sorted, second group sorted)`.
    pub fn value(&self, a: &[u8], b: &[u8]) -> Rat {
        let mut sa = a.to_vec();
        let mut sb = b.to_vec();
        sa.sort_unstable();
        sb.sort_unstable();
        self.coeffs.get(&(sa, sb)).cloned().unwrap_or_else(Rat::zero)
    }

    /// Diagonal evaluation `K(X^d, P^d)`.
    pub fn eval(&self, x: &[Rat], p: &[Rat]) -> Result<Rat, TensorError> {
        if x.len() != self.n || p.len() != self.n {
            return Err(TensorError::DimensionMismatch { expected: self.n, got: x.len().max(p.len()) });
        }
        let mut acc = Rat::zero();
        for ((a, b), v) in &self.coeffs {
            let ma = orderings(a);
            let mb = orderings(b);
            let mut term = v.clone() * rat_int((ma * mb) as i64);
            for &i in a {
                term *= &x[i as usize];
            }
            for &i in b {
                term *= &p[i as usize];
            }
            acc += term;
        }
        Ok(acc)
    }
}

// ---------------------------------------------------------------------------
// dense small tensors and symmetrisation
// ---------------------------------------------------------------------------

/// Dense type-(0,k) tensor on a small dimension, for symmetriser tests and
/// derivation actions.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    pub n: usize,
    pub slots: usize,
    pub vals: Vec<Rat>,
}

impl DenseTensor {
    pub fn zeros(n: usize, slots: usize) -> Self {
        DenseTensor { n, slots, vals: vec![Rat::zero(); n.pow(slots as u32)] }
    }

    #[inline]
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.slots);
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn get(&self, idx: &[usize]) -> &Rat {
        &self.vals[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: Rat) {
        let o = self.offset(idx);
        self.vals[o] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.vals.iter().all(Rat::is_zero)
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(k - 1) {
        for pos in 0..k {
            let mut p = rest.clone();
            p.insert(pos, k - 1);
            out.push(p);
        }
    }
    out
}

/// `S_{a,b}`: symmetrises a type-(0,a+b) tensor by its first `a` and last `b`
/// slots. Idempotent and linear.
pub fn symmetrize(t: &DenseTensor, a: usize, b: usize) -> Result<DenseTensor, TensorError> {
    if a + b != t.slots || a == 0 || b == 0 {
        return Err(TensorError::SlotMismatch { slots: t.slots, wanted: a + b });
    }
    let perms_a = permutations(a);
    let perms_b = permutations(b);
    let total = rat_int((perms_a.len() * perms_b.len()) as i64);
    let mut out = DenseTensor::zeros(t.n, t.slots);
    let mut idx = vec![0usize; t.slots];
    let count = t.vals.len();
    for flat in 0..count {
        // decode flat index
        let mut f = flat;
        for s in (0..t.slots).rev() {
            idx[s] = f % t.n;
            f /= t.n;
        }
        let mut acc = Rat::zero();
        let mut src = vec![0usize; t.slots];
        for pa in &perms_a {
            for pb in &perms_b {
                for s in 0..a {
                    src[s] = idx[pa[s]];
                }
                for s in 0..b {
                    src[a + s] = idx[a + pb[s]];
                }
                acc += t.get(&src).clone();
            }
        }
        out.vals[flat] = acc / &total;
    }
    Ok(out)
}

/// Derivation action of a matrix on a type-(0,4) tensor:
/// `(A.T)(Y1..Y4) = sum_s T(Y1, .., A Ys, .., Y4)`.
pub fn derivation_apply(t: &DenseTensor, a: &[Vec<Rat>]) -> DenseTensor {
    assert_eq!(t.slots, 4);
    let n = t.n;
    let mut out = DenseTensor::zeros(n, 4);
    let mut idx = [0usize; 4];
    for flat in 0..t.vals.len() {
        let mut f = flat;
        for s in (0..4).rev() {
            idx[s] = f % n;
            f /= n;
        }
        let mut acc = Rat::zero();
        for s in 0..4 {
            for m in 0..n {
                if a[m][idx[s]].is_zero() {
                    continue;
                }
                let mut src = idx;
                src[s] = m;
                acc += a[m][idx[s]].clone() * t.get(&src);
            }
        }
        out.vals[flat] = acc;
    }
    out
}

impl SymPairTensor {
    pub fn to_dense(&self) -> DenseTensor {
        let n = self.n;
        let mut out = DenseTensor::zeros(n, 4);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        out.set(&[a, b, c, d], self.value(a, b, c, d));
                    }
                }
            }
        }
        out
    }

    pub fn from_dense(t: &DenseTensor) -> Self {
        assert_eq!(t.slots, 4);
        let n = t.n;
        let mut out = SymPairTensor::zero(n);
        for i in 0..n {
            for j in i..n {
                for k in 0..n {
                    for l in k..n {
                        let v = t.get(&[i, j, k, l]).clone();
                        if !v.is_zero() {
                            out.add_to(i, j, k, l, v);
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio::rat;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Rat> {
        (0..n).map(|_| rat_int(rng.gen_range(-5..=5))).collect()
    }

    #[test]
    fn dimension_formula() {
        assert_eq!(k2_space_dim(1), 0);
        assert_eq!(k2_space_dim(2), 1);
        assert_eq!(k2_space_dim(3), 6);
        assert_eq!(k2_space_dim(4), 20);
        assert_eq!(k2_space_dim(16), 5440);
    }

    #[test]
    fn basis_length_matches_formula_small_n() {
        for n in 1..=5 {
            assert_eq!(bianchi_basis(n).dim(), k2_space_dim(n), "n = {n}");
        }
    }

    /// Independent oracle: brute-force the constraint nullspace with Bareiss
    /// elimination over the full dense constraint matrix.
    #[test]
    fn basis_length_matches_bruteforce_nullity() {
        for n in 2..=3 {
            let np = pair_count(n);
            let width = np * np;
            let mut dense: Vec<Vec<BigInt>> = Vec::new();
            // rows: coefficient of x^{a,b,c} p_l in K(X,X,X,P)
            for a in 0..n {
                for b in a..n {
                    for c in b..n {
                        for l in 0..n {
                            let mut row = vec![BigInt::zero(); width];
                            // sum over ordered triples with multiset {a,b,c}
                            let triples = [
                                [a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a],
                            ];
                            let mut seen: Vec<[usize; 3]> = Vec::new();
                            for t in triples {
                                // count every ordered triple once: skip dupes
                                // generated by repeated indices by keeping all
                                // (each ordered triple may repeat in the list)
                                seen.push(t);
                            }
                            // count multiplicity of each ordered triple among
                            // the 6 listed permutations
                            let mut done: Vec<[usize; 3]> = Vec::new();
                            for t in seen.iter() {
                                if done.contains(t) {
                                    continue;
                                }
                                done.push(*t);
                                let mult = seen.iter().filter(|&&u| u == *t).count() as i64;
                                // distinct permutations of a multiset appear
                                // `6 / orderings` times each; we want each
                                // ordered triple exactly once
                                let _ = mult;
                                let (s1, s2, s3) = (t[0], t[1], t[2]);
                                let (i, j) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
                                let (k, m) = if s3 <= l { (s3, l) } else { (l, s3) };
                                let id = pair_rank(n, i, j) * np + pair_rank(n, k, m);
                                row[id] += BigInt::one();
                            }
                            dense.push(row);
                        }
                    }
                }
            }
            let rank = crate::linalg::bareiss_rank(dense);
            assert_eq!(width - rank, k2_space_dim(n), "n = {n}");
        }
    }

    #[test]
    fn basis_elements_satisfy_defining_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=4 {
            let basis = bianchi_basis(n);
            for t in 0..basis.dim() {
                let tensor = basis.basis_tensor(t);
                for _ in 0..if n == 2 { 100 } else { 10 } {
                    let x = rand_vec(&mut rng, n);
                    let p = rand_vec(&mut rng, n);
                    assert!(tensor.eval_xxp(&x, &p).unwrap().is_zero());
                }
                assert!(tensor.is_pair_exchange_symmetric());
            }
        }
    }

    #[test]
    fn basis_is_deterministic() {
        let a = BianchiBasis::build(3);
        let b = BianchiBasis::build(3);
        assert_eq!(a.free_cols, b.free_cols);
        assert_eq!(a.vectors, b.vectors);
    }

    #[test]
    fn eval_matches_naive_contraction() {
        // independent four-fold loop on the basis element of n = 2
        let basis = bianchi_basis(2);
        assert_eq!(basis.dim(), 1);
        let t = basis.basis_tensor(0);
        let x = vec![rat_int(1), rat_int(0)];
        let p = vec![rat_int(0), rat_int(1)];
        let mut naive = Rat::zero();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    for d in 0..2 {
                        naive += t.value(a, b, c, d) * &x[a] * &x[b] * &p[c] * &p[d];
                    }
                }
            }
        }
        assert_eq!(t.eval(&x, &p).unwrap(), naive);
    }

    #[test]
    fn eval_linearity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = bianchi_basis(3);
        let t = basis.basis_tensor(2);
        let x = rand_vec(&mut rng, 3);
        let p = rand_vec(&mut rng, 3);
        let zero = vec![Rat::zero(); 3];
        assert!(t.eval(&zero, &p).unwrap().is_zero());
        let scaled = t.scaled(&rat(7, 3));
        assert_eq!(scaled.eval(&x, &p).unwrap(), t.eval(&x, &p).unwrap() * rat(7, 3));
    }

    #[test]
    fn project_roundtrip_and_rejection() {
        let basis = bianchi_basis(3);
        let coords: Vec<Rat> = (0..basis.dim()).map(|i| rat_int((i as i64 % 5) - 2)).collect();
        let t = basis.combine(&coords);
        let back = basis.project(&t).unwrap();
        assert_eq!(back, coords);
        // a tensor violating the symmetry class must be rejected
        let mut bad = SymPairTensor::zero(3);
        bad.add_to(0, 0, 0, 1, rat_int(1));
        assert!(basis.project(&bad).is_none());
    }

    #[test]
    fn symmetrize_is_projection_and_fixes_symmetric_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 3;
        let mut t = DenseTensor::zeros(n, 4);
        for v in t.vals.iter_mut() {
            *v = rat_int(rng.gen_range(-4..=4));
        }
        let s = symmetrize(&t, 3, 1).unwrap();
        let ss = symmetrize(&s, 3, 1).unwrap();
        assert_eq!(s, ss);
        // rank-one u (x) u (x) v (x) v is (2,2)-symmetric already
        let u = rand_vec(&mut rng, n);
        let v = rand_vec(&mut rng, n);
        let mut r1 = DenseTensor::zeros(n, 4);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        r1.set(&[a, b, c, d], u[a].clone() * &u[b] * &v[c] * &v[d]);
                    }
                }
            }
        }
        assert_eq!(symmetrize(&r1, 2, 2).unwrap(), r1);
        assert!(symmetrize(&t, 2, 1).is_err());
    }

    /// Young-symmetriser injectivity: as linear maps on (0,4) tensors over
    /// n = 3, `rank(S_{a',b'} compose S_{3,1}) = rank(S_{3,1})` for every
    /// admissible `(a',b')`, which is the brute-force form of the kernel
    /// statement.
    #[test]
    fn young_composition_preserves_rank_n3() {
        let n = 3usize;
        let dim = n.pow(4);
        let mut s31_cols: Vec<Vec<BigInt>> = Vec::new();
        let mut comp_cols: HashMap<(usize, usize), Vec<Vec<BigInt>>> = HashMap::new();
        let pairs = [(3usize, 1usize), (2, 2)];
        for p in pairs {
            comp_cols.insert(p, Vec::new());
        }
        for e in 0..dim {
            let mut t = DenseTensor::zeros(n, 4);
            t.vals[e] = rat_int(1);
            let s = symmetrize(&t, 3, 1).unwrap();
            s31_cols.push(to_int_vec(&s.vals));
            for &(a2, b2) in &pairs {
                let c = symmetrize(&s, a2, b2).unwrap();
                comp_cols.get_mut(&(a2, b2)).unwrap().push(to_int_vec(&c.vals));
            }
        }
        let opts = crate::linalg::SolveOptions { primes: 2, seed: 17 };
        let r_s = crate::linalg::span_rank(&s31_cols, dim, opts).unwrap();
        for &(a2, b2) in &pairs {
            let r_c = crate::linalg::span_rank(&comp_cols[&(a2, b2)], dim, opts).unwrap();
            assert_eq!(r_s, r_c, "S_{{{a2},{b2}}} after S_{{3,1}}");
        }
    }

    fn to_int_vec(vals: &[Rat]) -> Vec<BigInt> {
        let lcm = crate::ratio::denom_lcm(vals);
        vals.iter()
            .map(|v| {
                let s = v * Rat::from(lcm.clone());
                s.numer().clone()
            })
            .collect()
    }

    #[test]
    fn rank_d_sign_symmetry_under_first_group_constraint() {
        // with K_d(X^{d+1}, P^{d-1}) = 0 imposed, K_d(P^d, X^d) =
        // (-1)^d K_d(X^d, P^d)
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for (n, d) in [(3usize, 2usize), (3, 3)] {
            let coords = SymTensorRankD::coord_space(n, d);
            let width = coords.len();
            let col: HashMap<(MultiIdx, MultiIdx), usize> =
                coords.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
            // constraint rows: coefficient of x^alpha p^beta in K(X^{d+1}, P^{d-1})
            // hits canonical coords via the symmetrised split of alpha.
            let alphas = multi_indices(n, d + 1);
            let betas = multi_indices(n, d - 1);
            let mut m = crate::linalg::SparseIntMatrix::new(width);
            for alpha in &alphas {
                for beta in &betas {
                    let mut row: HashMap<usize, i64> = HashMap::new();
                    // one element of alpha joins the second group; the other d
                    // fill the first group diagonally
                    let mut seen = Vec::new();
                    for drop in 0..alpha.len() {
                        if seen.contains(&alpha[drop]) {
                            continue;
                        }
                        seen.push(alpha[drop]);
                        let mut first: MultiIdx = alpha.clone();
                        first.remove(drop);
                        let mut second: MultiIdx = beta.clone();
                        second.push(alpha[drop]);
                        second.sort_unstable();
                        let id = col[&(first.clone(), second.clone())];
                        // orderings of the first group times arrangements of
                        // the remaining momenta in the second group
                        let mult = (orderings(&first) * orderings(beta)) as i64;
                        *row.entry(id).or_insert(0) += mult;
                    }
                    m.push_row(row.into_iter().map(|(c, v)| (c as u32, v)).collect());
                }
            }
            let ns = crate::linalg::nullspace(&m, crate::linalg::SolveOptions { primes: 2, seed: 3 }).unwrap();
            assert!(!ns.basis.is_empty());
            // pick a random element of the nullspace and test the sign rule
            for _ in 0..5 {
                let mut k = SymTensorRankD::zero(n, d);
                for v in &ns.basis {
                    let c: i64 = rng.gen_range(-3..=3);
                    if c == 0 {
                        continue;
                    }
                    for (i, x) in v.iter().enumerate() {
                        if !x.is_zero() {
                            let (a, b) = coords[i].clone();
                            k.add_to(a, b, Rat::from(x.clone()) * rat_int(c));
                        }
                    }
                }
                let x = rand_vec(&mut rng, n);
                let p = rand_vec(&mut rng, n);
                let forward = k.eval(&x, &p).unwrap();
                let swapped = k.eval(&p, &x).unwrap();
                let sign = if d % 2 == 0 { forward.clone() } else { -forward.clone() };
                assert_eq!(swapped, sign, "n={n} d={d}");
            }
        }
    }

    #[test]
    fn exchange_format_roundtrip_and_rejection() {
        let basis = bianchi_basis(3);
        let t = basis.basis_tensor(1);
        let j = t.to_exchange_json();
        let t2 = SymPairTensor::from_exchange_json(&j).unwrap();
        assert_eq!(t, t2);
        let bad = json!({"n": 3, "entries": [[1, 0, 0, 0, "1"]]});
        assert!(matches!(
            SymPairTensor::from_exchange_json(&bad),
            Err(TensorError::NonCanonical(..))
        ));
    }
}

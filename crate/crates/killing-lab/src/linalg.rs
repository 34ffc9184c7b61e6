//! Exact sparse integer linear algebra: rank and nullspace over the rationals
//! at the scale of the largest catalog systems.
//!
//! Strategy: the matrix is split into connected components of its
//! column-incidence graph; each component is eliminated modulo several
//! word-size primes (delayed-reduction dense kernels); the per-prime reduced
//! echelon forms are combined by CRT and rational reconstruction into an exact
//! integer nullspace basis, which is then verified by exact residuals. The
//! verified nullspace gives `rank <= width - dim`; the modular pivot minor
//! gives `rank >= width - dim`; together the dimension is certified.

use num::{BigInt, Integer, One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum LinalgError {
    #[error("modular ranks disagreed across primes after {0} retries")]
    RankDisagreement(usize),
    #[error("rational reconstruction of the nullspace failed with {0} primes")]
    ReconstructionFailed(usize),
    #[error("nullspace verification failed: basis vector {0} has nonzero residual")]
    VerificationFailed(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Sparse integer matrix in row-major form. Rows hold `(column, value)` pairs
/// sorted by column with no explicit zeros.
#[derive(Clone, Debug, Default)]
pub struct SparseIntMatrix {
    pub width: usize,
    rows: Vec<Vec<(u32, i64)>>,
}

impl SparseIntMatrix {
    pub fn new(width: usize) -> Self {
        SparseIntMatrix { width, rows: Vec::new() }
    }

    /// Adds a row given as unsorted `(col, val)` pairs; duplicates are merged
    /// and zeros dropped. Zero rows are kept out.
    pub fn push_row(&mut self, mut entries: Vec<(u32, i64)>) {
        entries.sort_unstable_by_key(|&(c, _)| c);
        let mut merged: Vec<(u32, i64)> = Vec::with_capacity(entries.len());
        for (c, v) in entries {
            debug_assert!((c as usize) < self.width);
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => merged.push((c, v)),
            }
        }
        merged.retain(|&(_, v)| v != 0);
        if !merged.is_empty() {
            self.rows.push(merged);
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(u32, i64)>] {
        &self.rows
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    /// Divides each row by its content gcd, fixes the sign of the leading
    /// entry, and merges rows that became identical. Returns the number of
    /// rows removed.
    pub fn dedup_scaled(&mut self) -> usize {
        let before = self.rows.len();
        let mut seen: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut kept: Vec<Vec<(u32, i64)>> = Vec::with_capacity(before);
        for row in self.rows.drain(..) {
            let row = normalize_row(row);
            if row.is_empty() {
                continue;
            }
            let h = hash_row(&row);
            let bucket = seen.entry(h).or_default();
            if bucket.iter().any(|&i| kept[i] == row) {
                continue;
            }
            bucket.push(kept.len());
            kept.push(row);
        }
        self.rows = kept;
        before - self.rows.len()
    }

    /// Exact residual `M . v` test for an integer vector.
    pub fn annihilates(&self, v: &[BigInt]) -> bool {
        assert_eq!(v.len(), self.width);
        if let Some(small) = to_i64_vec(v) {
            return self
                .rows
                .par_iter()
                .all(|row| row.iter().map(|&(c, a)| a as i128 * small[c as usize] as i128).sum::<i128>() == 0);
        }
        self.rows.par_iter().all(|row| {
            let mut acc = BigInt::zero();
            for &(c, a) in row {
                acc += BigInt::from(a) * &v[c as usize];
            }
            acc.is_zero()
        })
    }

    /// Writes the `(width, row-count, nnz, triplets...)` binary snapshot.
    pub fn save_triplets<P: AsRef<Path>>(&self, path: P) -> Result<(), LinalgError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"KLM1")?;
        f.write_all(&(self.width as u64).to_le_bytes())?;
        f.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        f.write_all(&(self.nnz() as u64).to_le_bytes())?;
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                f.write_all(&(i as u64).to_le_bytes())?;
                f.write_all(&(c as u64).to_le_bytes())?;
                f.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load_triplets<P: AsRef<Path>>(path: P) -> Result<Self, LinalgError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != b"KLM1" {
            return Err(LinalgError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "bad matrix snapshot magic",
            )));
        }
        let width = read_u64(&mut f)? as usize;
        let nrows = read_u64(&mut f)? as usize;
        let nnz = read_u64(&mut f)? as usize;
        let mut rows: Vec<Vec<(u32, i64)>> = vec![Vec::new(); nrows];
        for _ in 0..nnz {
            let r = read_u64(&mut f)? as usize;
            let c = read_u64(&mut f)? as u32;
            let mut vb = [0u8; 8];
            f.read_exact(&mut vb)?;
            rows[r].push((c, i64::from_le_bytes(vb)));
        }
        let mut m = SparseIntMatrix::new(width);
        for row in rows {
            m.push_row(row);
        }
        Ok(m)
    }
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn normalize_row(mut row: Vec<(u32, i64)>) -> Vec<(u32, i64)> {
    row.retain(|&(_, v)| v != 0);
    if row.is_empty() {
        return row;
    }
    let mut g: i64 = 0;
    for &(_, v) in &row {
        g = crate::ratio::gcd_i64(g, v);
    }
    let sign = if row[0].1 < 0 { -1 } else { 1 };
    let d = g * sign;
    if d != 1 {
        for e in row.iter_mut() {
            e.1 /= d;
        }
    }
    row
}

fn hash_row(row: &[(u32, i64)]) -> u64 {
    // FxHash-style mix; collisions are resolved by exact comparison.
    let mut h: u64 = 0xcbf29ce484222325;
    for &(c, v) in row {
        h ^= c as u64;
        h = h.wrapping_mul(0x100000001b3);
        h ^= v as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn to_i64_vec(v: &[BigInt]) -> Option<Vec<i64>> {
    use num::ToPrimitive;
    let bound = 1i64 << 40;
    let mut out = Vec::with_capacity(v.len());
    for x in v {
        let xi = x.to_i64()?;
        if xi.abs() >= bound {
            return None;
        }
        out.push(xi);
    }
    Some(out)
}

/// Options for the multi-modular solver.
#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    /// Number of primes used initially (grown automatically if rational
    /// reconstruction needs more).
    pub primes: usize,
    /// Seed for the deterministic prime stream.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { primes: 3, seed: 0x4b49_4c4c }
    }
}

/// Certified nullspace: integer basis vectors with exact zero residuals.
#[derive(Clone, Debug)]
pub struct Nullspace {
    pub basis: Vec<Vec<BigInt>>,
    pub rank: usize,
    pub pivot_cols: Vec<u32>,
    pub primes_used: Vec<u64>,
}

// ---------------------------------------------------------------------------
// primes
// ---------------------------------------------------------------------------

fn mulmod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn powmod(mut a: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1u64;
    a %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mulmod(r, a, m);
        }
        a = mulmod(a, a, m);
        e >>= 1;
    }
    r
}

fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n % p == 0 {
            return n == p;
        }
    }
    let d = n - 1;
    let s = d.trailing_zeros();
    let d = d >> s;
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = powmod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Deterministic stream of distinct primes in `[2^25, 2^26)`; the bound keeps
/// delayed-reduction products inside `u64`.
pub fn prime_stream(seed: u64, count: usize, skip: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut produced = 0usize;
    while out.len() < count {
        let cand = rng.gen_range((1u64 << 25)..(1u64 << 26)) | 1;
        if is_prime_u64(cand) {
            produced += 1;
            if produced > skip && !out.contains(&cand) {
                out.push(cand);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// connected components
// ---------------------------------------------------------------------------

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n as u32).collect() }
    }
    fn find(&mut self, x: u32) -> u32 {
        let mut r = x;
        while self.parent[r as usize] != r {
            r = self.parent[r as usize];
        }
        let mut c = x;
        while self.parent[c as usize] != r {
            let next = self.parent[c as usize];
            self.parent[c as usize] = r;
            c = next;
        }
        r
    }
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb as usize] = ra.min(rb);
            self.parent[ra as usize] = ra.min(rb);
        }
    }
}

#[derive(Debug)]
struct Component {
    cols: Vec<u32>,
    rows: Vec<usize>,
}

fn split_components(m: &SparseIntMatrix) -> Vec<Component> {
    let mut ds = DisjointSet::new(m.width);
    for row in &m.rows {
        for w in row.windows(2) {
            ds.union(w[0].0, w[1].0);
        }
    }
    let mut by_root: HashMap<u32, Component> = HashMap::new();
    for c in 0..m.width as u32 {
        let r = ds.find(c);
        by_root.entry(r).or_insert_with(|| Component { cols: Vec::new(), rows: Vec::new() }).cols.push(c);
    }
    for (i, row) in m.rows.iter().enumerate() {
        let r = ds.find(row[0].0);
        by_root.get_mut(&r).unwrap().rows.push(i);
    }
    let mut comps: Vec<Component> = by_root.into_values().collect();
    comps.sort_by_key(|c| c.cols[0]);
    comps
}

// ---------------------------------------------------------------------------
// modular elimination kernel
// ---------------------------------------------------------------------------

/// Row-echelon eliminator mod `p` over a dense local column window, with
/// delayed reduction (entries accumulate in `u64` and are renormalised before
/// they can overflow).
struct ModElim {
    p: u64,
    width: usize,
    /// pivot row index per column, or NONE
    pivot_of_col: Vec<u32>,
    /// pivot rows, normalised so the leading entry is 1
    rows: Vec<Vec<u32>>,
    pivot_cols: Vec<u32>,
}

const NONE_U32: u32 = u32::MAX;
// Each axpy adds < 2^52 per entry; starting below 2^26 this keeps u64 safe.
const AXPY_BUDGET: usize = 1900;

impl ModElim {
    fn new(p: u64, width: usize) -> Self {
        ModElim {
            p,
            width,
            pivot_of_col: vec![NONE_U32; width],
            rows: Vec::new(),
            pivot_cols: Vec::new(),
        }
    }

    fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Reduces `w` (values < p after renormalisation) against current pivots;
    /// if a nonzero remainder survives, installs it as a new pivot and returns
    /// true.
    fn add_row(&mut self, w: &mut [u64]) -> bool {
        let p = self.p;
        let mut axpys = 0usize;
        let mut col = 0usize;
        while col < self.width {
            let v = w[col] % p;
            if v == 0 {
                w[col] = 0;
                col += 1;
                continue;
            }
            let pr = self.pivot_of_col[col];
            if pr == NONE_U32 {
                // new pivot: renormalise, scale leading to 1
                for x in w.iter_mut() {
                    *x %= p;
                }
                let inv = powmod(v, p - 2, p);
                let mut stored = vec![0u32; self.width];
                for (s, &x) in stored.iter_mut().zip(w.iter()) {
                    *s = mulmod(x, inv, p) as u32;
                }
                debug_assert_eq!(stored[col], 1);
                self.pivot_of_col[col] = self.rows.len() as u32;
                self.rows.push(stored);
                self.pivot_cols.push(col as u32);
                return true;
            }
            // w += (p - v) * pivot_row
            let q = p - v;
            if axpys >= AXPY_BUDGET {
                for x in w.iter_mut() {
                    *x %= p;
                }
                axpys = 0;
            }
            let prow = &self.rows[pr as usize];
            for (x, &pe) in w[col..].iter_mut().zip(prow[col..].iter()) {
                *x += q * pe as u64;
            }
            axpys += 1;
            debug_assert_eq!(w[col] % p, 0);
            w[col] = 0;
            col += 1;
        }
        false
    }

    /// Back-substitutes to reduced row echelon form (each pivot column has a
    /// single 1). Rows are processed in decreasing pivot-column order so every
    /// row used for elimination is already fully reduced.
    fn to_rref(&mut self) {
        let p = self.p;
        let order: Vec<usize> = {
            let mut idx: Vec<usize> = (0..self.rows.len()).collect();
            idx.sort_by_key(|&i| self.pivot_cols[i]);
            idx
        };
        for k in (0..order.len()).rev() {
            let i = order[k];
            for &j in order[k + 1..].iter() {
                let cj = self.pivot_cols[j] as usize;
                let f = self.rows[i][cj] as u64;
                if f == 0 {
                    continue;
                }
                let q = p - f;
                let (head, tail) = if i < j {
                    let (a, b) = self.rows.split_at_mut(j);
                    (&mut a[i], &b[0])
                } else {
                    let (a, b) = self.rows.split_at_mut(i);
                    (&mut b[0], &a[j])
                };
                for (x, &pe) in head[cj..].iter_mut().zip(tail[cj..].iter()) {
                    let nv = *x as u64 + q * pe as u64;
                    *x = (nv % p) as u32;
                }
            }
        }
    }
}

/// Per-component, per-prime elimination result.
struct CompModResult {
    pivot_cols: Vec<u32>, // local indices, sorted
    /// RREF entries at free columns: entry[(pivot_idx, free_idx)]
    rref_at_free: Vec<Vec<u32>>,
}

fn eliminate_component(
    m: &SparseIntMatrix,
    comp: &Component,
    p: u64,
    need_rref: bool,
) -> CompModResult {
    let local_of: HashMap<u32, usize> = comp.cols.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let width = comp.cols.len();
    let mut elim = ModElim::new(p, width);
    let mut w = vec![0u64; width];
    for &ri in &comp.rows {
        for x in w.iter_mut() {
            *x = 0;
        }
        for &(c, v) in &m.rows[ri] {
            let lc = local_of[&c];
            let r = v.rem_euclid(p as i64) as u64;
            w[lc] = r;
        }
        elim.add_row(&mut w);
        if elim.rank() == width {
            break; // full column rank: nullspace empty, nothing more to learn
        }
    }
    let mut pivot_sorted: Vec<(u32, usize)> =
        elim.pivot_cols.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    pivot_sorted.sort_unstable();
    let pivot_cols: Vec<u32> = pivot_sorted.iter().map(|&(c, _)| c).collect();
    if !need_rref {
        return CompModResult { pivot_cols, rref_at_free: Vec::new() };
    }
    elim.to_rref();
    let is_pivot: Vec<bool> = {
        let mut v = vec![false; width];
        for &c in &pivot_cols {
            v[c as usize] = true;
        }
        v
    };
    let free_cols: Vec<usize> = (0..width).filter(|&c| !is_pivot[c]).collect();
    let rref_at_free = pivot_sorted
        .iter()
        .map(|&(_, row_idx)| free_cols.iter().map(|&f| elim.rows[row_idx][f]).collect())
        .collect();
    CompModResult { pivot_cols, rref_at_free }
}

// ---------------------------------------------------------------------------
// CRT + rational reconstruction
// ---------------------------------------------------------------------------

fn crt_combine(residues: &[u64], primes: &[u64]) -> (BigInt, BigInt) {
    let mut x = BigInt::zero();
    let mut m = BigInt::one();
    for (&r, &p) in residues.iter().zip(primes) {
        let pb = BigInt::from(p);
        // solve x' = x mod m, x' = r mod p
        let inv = mod_inverse(&m, &pb);
        let diff = (BigInt::from(r) - &x).mod_floor(&pb);
        let t = (diff * inv).mod_floor(&pb);
        x += &m * t;
        m *= pb;
    }
    (x, m)
}

fn mod_inverse(a: &BigInt, m: &BigInt) -> BigInt {
    let e = a.extended_gcd(m);
    debug_assert!(e.gcd.is_one());
    e.x.mod_floor(m)
}

/// Wang-style rational reconstruction: finds `n/d = x mod m` with
/// `|n|, d <= sqrt(m/2)`, if it exists.
fn rational_reconstruct(x: &BigInt, m: &BigInt) -> Option<(BigInt, BigInt)> {
    let bound: BigInt = (m / BigInt::from(2u32)).sqrt();
    let (mut r0, mut r1) = (m.clone(), x.mod_floor(m));
    let (mut t0, mut t1) = (BigInt::zero(), BigInt::one());
    while r1 > bound {
        let q = &r0 / &r1;
        let r2 = &r0 - &q * &r1;
        let t2 = &t0 - &q * &t1;
        r0 = r1;
        r1 = r2;
        t0 = t1;
        t1 = t2;
    }
    if t1.is_zero() || t1.abs() > bound {
        return None;
    }
    let (n, d) = if t1.is_negative() { (-r1, -t1) } else { (r1, t1) };
    if !num::Integer::gcd(&n, &d).is_one() {
        return None;
    }
    Some((n, d))
}

// ---------------------------------------------------------------------------
// public solver entry points
// ---------------------------------------------------------------------------

/// Exact rank over the rationals via agreeing modular ranks (with the retry
/// policy for unlucky primes). The returned rank is a lower bound witnessed by
/// a modular nonsingular minor; combined with `nullspace` it is exact.
pub fn rank_modular(m: &SparseIntMatrix, opts: SolveOptions) -> Result<usize, LinalgError> {
    let comps = split_components(m);
    let nprimes = opts.primes.max(2);
    for attempt in 0..3 {
        let primes = prime_stream(opts.seed, nprimes, attempt * nprimes);
        let ranks: Vec<usize> = primes
            .par_iter()
            .map(|&p| {
                comps
                    .iter()
                    .map(|c| eliminate_component(m, c, p, false).pivot_cols.len())
                    .sum()
            })
            .collect();
        if ranks.windows(2).all(|w| w[0] == w[1]) {
            return Ok(ranks[0]);
        }
    }
    Err(LinalgError::RankDisagreement(3))
}

/// Certified integer nullspace basis (reduced-echelon free-column form,
/// scaled to primitive integer vectors, exact residuals verified).
pub fn nullspace(m: &SparseIntMatrix, opts: SolveOptions) -> Result<Nullspace, LinalgError> {
    let comps = split_components(m);
    let mut nprimes = opts.primes.max(2);
    let max_primes = 64usize;
    let mut skip = 0usize;
    let mut retries = 0usize;
    loop {
        let primes = prime_stream(opts.seed, nprimes, skip);
        // (component, prime) tasks in parallel
        let tasks: Vec<(usize, usize)> = (0..comps.len())
            .flat_map(|ci| (0..primes.len()).map(move |pi| (ci, pi)))
            .collect();
        let mut results: Vec<Option<CompModResult>> = Vec::new();
        results.resize_with(tasks.len(), || None);
        let computed: Vec<CompModResult> = tasks
            .par_iter()
            .map(|&(ci, pi)| eliminate_component(m, &comps[ci], primes[pi], true))
            .collect();
        for (slot, r) in results.iter_mut().zip(computed) {
            *slot = Some(r);
        }
        // check pivot agreement per component
        let mut agree = true;
        'comp: for ci in 0..comps.len() {
            let base = &results[ci * primes.len()].as_ref().unwrap().pivot_cols;
            for pi in 1..primes.len() {
                if &results[ci * primes.len() + pi].as_ref().unwrap().pivot_cols != base {
                    agree = false;
                    break 'comp;
                }
            }
        }
        if !agree {
            retries += 1;
            if retries >= 3 {
                return Err(LinalgError::RankDisagreement(retries));
            }
            skip += nprimes;
            continue;
        }
        match assemble_nullspace(m, &comps, &primes, &results) {
            Ok((basis, rank, pivot_cols)) => {
                for (i, v) in basis.iter().enumerate() {
                    if !m.annihilates(v) {
                        return Err(LinalgError::VerificationFailed(i));
                    }
                }
                return Ok(Nullspace { basis, rank, pivot_cols, primes_used: primes });
            }
            Err(_) if nprimes < max_primes => {
                nprimes = (nprimes * 2).min(max_primes);
                continue;
            }
            Err(_) => return Err(LinalgError::ReconstructionFailed(nprimes)),
        }
    }
}

#[allow(clippy::type_complexity)]
fn assemble_nullspace(
    m: &SparseIntMatrix,
    comps: &[Component],
    primes: &[u64],
    results: &[Option<CompModResult>],
) -> Result<(Vec<Vec<BigInt>>, usize, Vec<u32>), ()> {
    let np = primes.len();
    let mut basis: Vec<(u32, Vec<BigInt>)> = Vec::new(); // keyed by global free column
    let mut rank = 0usize;
    let mut pivot_cols_global: Vec<u32> = Vec::new();
    for (ci, comp) in comps.iter().enumerate() {
        let r0 = results[ci * np].as_ref().unwrap();
        let pivots = &r0.pivot_cols;
        rank += pivots.len();
        for &pc in pivots {
            pivot_cols_global.push(comp.cols[pc as usize]);
        }
        let is_pivot: Vec<bool> = {
            let mut v = vec![false; comp.cols.len()];
            for &c in pivots {
                v[c as usize] = true;
            }
            v
        };
        let free_local: Vec<usize> = (0..comp.cols.len()).filter(|&c| !is_pivot[c]).collect();
        for (fi, &f) in free_local.iter().enumerate() {
            // reconstruct rational vector: v[f] = 1, v[pivot c_k] = -rref[k][fi]
            let mut numerators: Vec<(usize, BigInt, BigInt)> = Vec::new(); // (local col, num, den)
            let mut ok = true;
            for (k, &pc) in pivots.iter().enumerate() {
                let residues: Vec<u64> = (0..np)
                    .map(|pi| results[ci * np + pi].as_ref().unwrap().rref_at_free[k][fi] as u64)
                    .collect();
                if residues.iter().all(|&r| r == 0) {
                    continue;
                }
                let (x, modulus) = crt_combine(&residues, primes);
                match rational_reconstruct(&x, &modulus) {
                    Some((n, d)) => numerators.push((pc as usize, -n, d)),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                return Err(());
            }
            // clear denominators
            let mut lcm = BigInt::one();
            for (_, _, d) in &numerators {
                let g = num::Integer::gcd(&lcm, d);
                lcm = &lcm / g * d;
            }
            let mut v = vec![BigInt::zero(); m.width];
            v[comp.cols[f] as usize] = lcm.clone();
            for (c, n, d) in numerators {
                v[comp.cols[c] as usize] = n * (&lcm / d);
            }
            // primitive form, first nonzero positive
            let mut content = BigInt::zero();
            for x in &v {
                if !x.is_zero() {
                    content = num::Integer::gcd(&content, x);
                }
            }
            if !content.is_one() && !content.is_zero() {
                for x in v.iter_mut() {
                    *x = &*x / &content;
                }
            }
            if v.iter().find(|x| !x.is_zero()).map(|x| x.is_negative()).unwrap_or(false) {
                for x in v.iter_mut() {
                    *x = -x.clone();
                }
            }
            basis.push((comp.cols[f], v));
        }
    }
    basis.sort_by_key(|&(c, _)| c);
    pivot_cols_global.sort_unstable();
    Ok((basis.into_iter().map(|(_, v)| v).collect(), rank, pivot_cols_global))
}

/// Rank of the span of integer vectors (rows in dense form).
pub fn span_rank(vectors: &[Vec<BigInt>], width: usize, opts: SolveOptions) -> Result<usize, LinalgError> {
    let mut m = SparseIntMatrix::new(width);
    for v in vectors {
        assert_eq!(v.len(), width);
        let mut content = BigInt::zero();
        for x in v.iter() {
            if !x.is_zero() {
                content = num::Integer::gcd(&content, x);
            }
        }
        if content.is_zero() {
            continue; // zero vector
        }
        let mut entries = Vec::new();
        let mut fits = true;
        for (c, x) in v.iter().enumerate() {
            if x.is_zero() {
                continue;
            }
            match to_i64(&(x / &content)) {
                Some(val) => entries.push((c as u32, val)),
                None => {
                    fits = false;
                    break;
                }
            }
        }
        if !fits {
            return span_rank_big(vectors, width, opts);
        }
        m.push_row(entries);
    }
    rank_modular(&m, opts)
}

fn to_i64(x: &BigInt) -> Option<i64> {
    use num::ToPrimitive;
    x.to_i64()
}

/// Rank of big-integer vectors by direct modular reduction (no i64 staging).
fn span_rank_big(vectors: &[Vec<BigInt>], width: usize, opts: SolveOptions) -> Result<usize, LinalgError> {
    let nprimes = opts.primes.max(2);
    for attempt in 0..3 {
        let primes = prime_stream(opts.seed, nprimes, attempt * nprimes);
        let ranks: Vec<usize> = primes
            .par_iter()
            .map(|&p| {
                let mut elim = ModElim::new(p, width);
                let mut w = vec![0u64; width];
                for v in vectors {
                    for (slot, x) in w.iter_mut().zip(v.iter()) {
                        *slot = bigint_mod_u64(x, p);
                    }
                    elim.add_row(&mut w);
                }
                elim.rank()
            })
            .collect();
        if ranks.windows(2).all(|w| w[0] == w[1]) {
            return Ok(ranks[0]);
        }
    }
    Err(LinalgError::RankDisagreement(3))
}

pub fn bigint_mod_u64(x: &BigInt, p: u64) -> u64 {
    let m = BigInt::from(p);
    let r = x.mod_floor(&m);
    let (_, digits) = r.to_u64_digits();
    digits.first().copied().unwrap_or(0)
}

// ---------------------------------------------------------------------------
// independent oracles
// ---------------------------------------------------------------------------

/// Fraction-free Bareiss elimination rank over exact integers. Quadratic
/// fill-in; intended as an independent oracle on small matrices.
pub fn bareiss_rank(mut m: Vec<Vec<BigInt>>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let ncols = m[0].len();
    let nrows = m.len();
    let mut prev = BigInt::one();
    let mut rank = 0usize;
    let mut row = 0usize;
    for col in 0..ncols {
        if row >= nrows {
            break;
        }
        let piv = (row..nrows).find(|&r| !m[r][col].is_zero());
        let piv = match piv {
            Some(p) => p,
            None => continue,
        };
        m.swap(row, piv);
        for r in row + 1..nrows {
            for c in col + 1..ncols {
                let num = &m[row][col] * &m[r][c] - &m[r][col] * &m[row][c];
                m[r][c] = num / &prev;
            }
            m[r][col] = BigInt::zero();
        }
        prev = m[row][col].clone();
        row += 1;
        rank += 1;
    }
    rank
}

/// Floating SVD rank with tolerance `1e-8 * sigma_max`; a smoke test only,
/// never authoritative. Returns `None` when the system is too large.
pub fn svd_rank_f64(m: &SparseIntMatrix) -> Option<usize> {
    if m.width > 2000 || m.nrows() > 20000 {
        return None;
    }
    if m.nrows() == 0 {
        return Some(0);
    }
    let mut dm = nalgebra::DMatrix::<f64>::zeros(m.nrows(), m.width);
    for (i, row) in m.rows.iter().enumerate() {
        for &(c, v) in row {
            dm[(i, c as usize)] = v as f64;
        }
    }
    let svd = dm.svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return Some(0);
    }
    Some(svd.singular_values.iter().filter(|&&s| s > 1e-8 * smax).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn opts() -> SolveOptions {
        SolveOptions { primes: 3, seed: 42 }
    }

    #[test]
    fn zero_matrix_rank_and_nullspace() {
        let m = SparseIntMatrix::new(5);
        assert_eq!(rank_modular(&m, opts()).unwrap(), 0);
        let ns = nullspace(&m, opts()).unwrap();
        assert_eq!(ns.basis.len(), 5);
        assert_eq!(ns.rank, 0);
    }

    #[test]
    fn identity_block_has_empty_nullspace() {
        let mut m = SparseIntMatrix::new(4);
        for i in 0..4 {
            m.push_row(vec![(i as u32, 1)]);
        }
        let ns = nullspace(&m, opts()).unwrap();
        assert!(ns.basis.is_empty());
        assert_eq!(ns.rank, 4);
    }

    #[test]
    fn single_row_nullspace() {
        let mut m = SparseIntMatrix::new(2);
        m.push_row(vec![(0, 1), (1, 1)]);
        let ns = nullspace(&m, opts()).unwrap();
        assert_eq!(ns.basis.len(), 1);
        let v = &ns.basis[0];
        // primitive, first nonzero positive: (1, -1)
        assert_eq!(v[0], BigInt::from(1));
        assert_eq!(v[1], BigInt::from(-1));
    }

    #[test]
    fn random_ranks_agree_with_bareiss() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..12 {
            let rows = 10 + (trial % 5) * 8;
            let cols = 12 + (trial % 4) * 17;
            let mut m = SparseIntMatrix::new(cols);
            let mut dense = vec![vec![BigInt::zero(); cols]; rows];
            for (_, drow) in (0..rows).zip(dense.iter_mut()) {
                let mut entries = Vec::new();
                for (c, slot) in drow.iter_mut().enumerate() {
                    if rng.gen_bool(0.25) {
                        let v: i64 = rng.gen_range(-9..=9);
                        if v != 0 {
                            entries.push((c as u32, v));
                            *slot = BigInt::from(v);
                        }
                    }
                }
                m.push_row(entries);
            }
            let r1 = rank_modular(&m, opts()).unwrap();
            let r2 = bareiss_rank(dense);
            assert_eq!(r1, r2, "trial {trial}");
            if let Some(r3) = svd_rank_f64(&m) {
                assert_eq!(r1, r3, "svd smoke, trial {trial}");
            }
        }
    }

    #[test]
    fn nullspace_residuals_are_exact_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..6 {
            let cols = 30;
            let mut m = SparseIntMatrix::new(cols);
            for _ in 0..18 {
                let mut entries = Vec::new();
                for c in 0..cols {
                    if rng.gen_bool(0.2) {
                        entries.push((c as u32, rng.gen_range(-5..=5i64)));
                    }
                }
                m.push_row(entries);
            }
            let ns = nullspace(&m, opts()).unwrap();
            assert_eq!(ns.basis.len() + ns.rank, cols);
            for v in &ns.basis {
                assert!(m.annihilates(v));
            }
        }
    }

    #[test]
    fn dedup_merges_scaled_rows() {
        let mut m = SparseIntMatrix::new(3);
        m.push_row(vec![(0, 2), (2, 4)]);
        m.push_row(vec![(0, 3), (2, 6)]);
        m.push_row(vec![(0, -1), (2, -2)]);
        m.push_row(vec![(1, 1)]);
        let removed = m.dedup_scaled();
        assert_eq!(removed, 2);
        assert_eq!(m.nrows(), 2);
    }

    #[test]
    fn duplicated_vectors_do_not_raise_span_rank() {
        let v1: Vec<BigInt> = vec![1, 2, 0, -1].into_iter().map(BigInt::from).collect();
        let v2: Vec<BigInt> = vec![0, 1, 1, 1].into_iter().map(BigInt::from).collect();
        let r = span_rank(&[v1.clone(), v2.clone(), v1.clone(), v2], 4, opts()).unwrap();
        assert_eq!(r, 2);
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut m = SparseIntMatrix::new(6);
        m.push_row(vec![(0, 3), (5, -7)]);
        m.push_row(vec![(2, 11)]);
        let dir = std::env::temp_dir().join("klm_snapshot_test.bin");
        m.save_triplets(&dir).unwrap();
        let m2 = SparseIntMatrix::load_triplets(&dir).unwrap();
        assert_eq!(m.width, m2.width);
        assert_eq!(m.rows(), m2.rows());
        std::fs::remove_file(dir).ok();
    }

    #[test]
    fn prime_stream_is_deterministic_and_prime() {
        let a = prime_stream(1, 8, 0);
        let b = prime_stream(1, 8, 0);
        assert_eq!(a, b);
        for &p in &a {
            assert!(is_prime_u64(p));
            assert!(p >= (1 << 25) && p < (1 << 26));
        }
        let c = prime_stream(1, 4, 8);
        assert!(c.iter().all(|x| !a.contains(x)));
    }
}

//! Least squares through Householder QR with column pivoting on the largest
//! remaining column norm. Columns whose pivot falls below a relative threshold
//! are treated as aliased and get a zero coefficient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALIAS_TOLERANCE: f64 = 1e-10;

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut d = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "ragged design rows");
            for (j, &v) in r.iter().enumerate() {
                d.set(i, j, v);
            }
        }
        d
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstsqSolution {
    pub coefficients: Vec<f64>,
    pub aliased: Vec<bool>,
    pub rank: usize,
}

/// A reusable factorization: the design is decomposed once and any number of
/// right-hand sides can then be solved against it.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    m: usize,
    n: usize,
    /// R on and above the diagonal, Householder tails below.
    a: Vec<f64>,
    /// Leading entry of each Householder vector.
    v_head: Vec<f64>,
    beta: Vec<f64>,
    /// `perm[k]` is the original column placed at position `k`.
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(design: &Design, alias_tolerance: f64) -> Result<Self> {
        let (m, n) = (design.rows, design.cols);
        if m == 0 {
            return Err(Error::EmptyDesign);
        }
        let mut a = design.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let steps = m.min(n);
        let mut v_head = Vec::with_capacity(steps);
        let mut beta = Vec::with_capacity(steps);
        let mut norms: Vec<f64> = (0..n).map(|j| sq_norm(design.col(j))).collect();
        let mut reference = norms.clone();
        let mut leading = 0.0;
        let mut rank = 0;

        for k in 0..steps {
            // Pivot: largest remaining norm, lowest index on ties.
            let mut p = k;
            for j in k + 1..n {
                if norms[j] > norms[p] {
                    p = j;
                }
            }
            if p != k {
                swap_cols(&mut a, m, k, p);
                perm.swap(k, p);
                norms.swap(k, p);
                reference.swap(k, p);
            }

            let col = &mut a[k * m..(k + 1) * m];
            let x = &mut col[k..];
            let norm = sq_norm(x).sqrt();
            if k == 0 {
                leading = norm;
            }
            if norm == 0.0 || norm <= alias_tolerance * leading {
                break;
            }
            let x0 = x[0];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let head = x0 - alpha;
            let b = 1.0 / (norm * (norm + x0.abs()));
            x[0] = alpha;
            v_head.push(head);
            beta.push(b);
            rank += 1;

            // Apply the reflector to the trailing columns.
            let (left, right) = a.split_at_mut((k + 1) * m);
            let v_tail = &left[k * m + k + 1..(k + 1) * m];
            for j in k + 1..n {
                let cj = &mut right[(j - k - 1) * m..(j - k) * m];
                let mut s = head * cj[k];
                for (vi, ci) in v_tail.iter().zip(&cj[k + 1..]) {
                    s += vi * ci;
                }
                s *= b;
                cj[k] -= s * head;
                for (vi, ci) in v_tail.iter().zip(cj[k + 1..].iter_mut()) {
                    *ci -= s * vi;
                }
                // Downdate the remaining norm, recomputing on cancellation.
                norms[j] -= cj[k] * cj[k];
                if norms[j] <= 1e-8 * reference[j] {
                    norms[j] = sq_norm(&cj[k + 1..]);
                    reference[j] = norms[j];
                }
            }
        }
        Ok(Self {
            m,
            n,
            a,
            v_head,
            beta,
            perm,
            rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_cols(&self) -> usize {
        self.n
    }

    /// Columns left out of the leading full-rank block.
    pub fn aliased(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n];
        for &c in &self.perm[self.rank..] {
            mask[c] = true;
        }
        mask
    }

    /// Basic least-squares solution; aliased coefficients are exactly zero.
    pub fn solve(&self, targets: &[f64]) -> Vec<f64> {
        assert_eq!(targets.len(), self.m, "target length must match design rows");
        let m = self.m;
        let mut y = targets.to_vec();
        for k in 0..self.rank {
            let tail = &self.a[k * m + k + 1..(k + 1) * m];
            let head = self.v_head[k];
            let mut s = head * y[k];
            for (vi, yi) in tail.iter().zip(&y[k + 1..]) {
                s += vi * yi;
            }
            s *= self.beta[k];
            y[k] -= s * head;
            for (vi, yi) in tail.iter().zip(y[k + 1..].iter_mut()) {
                *yi -= s * vi;
            }
        }
        let mut z = vec![0.0; self.rank];
        for k in (0..self.rank).rev() {
            let mut s = y[k];
            for j in k + 1..self.rank {
                s -= self.a[j * m + k] * z[j];
            }
            z[k] = s / self.a[k * m + k];
        }
        let mut coef = vec![0.0; self.n];
        for (k, &zk) in z.iter().enumerate() {
            coef[self.perm[k]] = zk;
        }
        coef
    }
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn swap_cols(a: &mut [f64], m: usize, i: usize, j: usize) {
    let (lo, hi) = (i.min(j), i.max(j));
    let (left, right) = a.split_at_mut(hi * m);
    left[lo * m..(lo + 1) * m].swap_with_slice(&mut right[..m]);
}

pub fn solve_least_squares(design: &Design, targets: &[f64]) -> Result<LstsqSolution> {
    let qr = PivotedQr::new(design, DEFAULT_ALIAS_TOLERANCE)?;
    Ok(LstsqSolution {
        coefficients: qr.solve(targets),
        aliased: qr.aliased(),
        rank: qr.rank(),
    })
}

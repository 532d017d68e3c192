//! Matrix storage used on the hot paths of the integrators.
//!
//! Operators keep a dense matrix for algebra; right before time stepping each
//! operator is converted into a [`Kernel`], which is stored in compressed-row
//! form when its fill ratio is at most [`SPARSE_FILL_THRESHOLD`].

use nalgebra::DMatrix;

use crate::C64;

/// Fill ratio (non-zeros / entries) at or below which sparse storage is used.
pub const SPARSE_FILL_THRESHOLD: f64 = 0.25;

/// Which storage a [`Kernel`] ended up with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageKind {
    Dense,
    Sparse,
}

#[derive(Clone, Debug)]
pub(crate) struct Csr {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<C64>,
}

impl Csr {
    fn from_dense(m: &DMatrix<C64>) -> Self {
        let (rows, cols) = m.shape();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..rows {
            for j in 0..cols {
                let v = m[(i, j)];
                if v.re != 0.0 || v.im != 0.0 {
                    col_idx.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Csr { rows, cols, row_ptr, col_idx, vals }
    }
}

/// Dense or sparse matrix with accumulate-style products on column-major data.
#[derive(Clone, Debug)]
pub enum Kernel {
    Dense(DMatrix<C64>),
    #[allow(private_interfaces)]
    Sparse(Csr),
}

pub(crate) fn nnz(m: &DMatrix<C64>) -> usize {
    m.iter().filter(|v| v.re != 0.0 || v.im != 0.0).count()
}

impl Kernel {
    pub fn from_matrix(m: &DMatrix<C64>) -> Self {
        let total = (m.nrows() * m.ncols()).max(1);
        if (nnz(m) as f64) / (total as f64) <= SPARSE_FILL_THRESHOLD {
            Kernel::Sparse(Csr::from_dense(m))
        } else {
            Kernel::Dense(m.clone())
        }
    }

    pub fn kind(&self) -> StorageKind {
        match self {
            Kernel::Dense(_) => StorageKind::Dense,
            Kernel::Sparse(_) => StorageKind::Sparse,
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            Kernel::Dense(m) => m.nrows(),
            Kernel::Sparse(c) => c.rows,
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Kernel::Dense(m) => m.ncols(),
            Kernel::Sparse(c) => c.cols,
        }
    }

    /// `out += alpha * A * X` where `X` is `ncols x k` column-major and `out`
    /// is `nrows x k` column-major.
    pub fn gemm_left(&self, alpha: C64, x: &[C64], k: usize, out: &mut [C64]) {
        let (r, c) = (self.nrows(), self.ncols());
        debug_assert_eq!(x.len(), c * k);
        debug_assert_eq!(out.len(), r * k);
        match self {
            Kernel::Dense(a) => {
                for j in 0..k {
                    let xc = &x[j * c..(j + 1) * c];
                    let oc = &mut out[j * r..(j + 1) * r];
                    for (l, &xv) in xc.iter().enumerate() {
                        if xv.re == 0.0 && xv.im == 0.0 {
                            continue;
                        }
                        let s = alpha * xv;
                        let acol = a.column(l);
                        for (o, &av) in oc.iter_mut().zip(acol.iter()) {
                            *o += av * s;
                        }
                    }
                }
            }
            Kernel::Sparse(a) => {
                for j in 0..k {
                    let xc = &x[j * c..(j + 1) * c];
                    let oc = &mut out[j * r..(j + 1) * r];
                    for (i, o) in oc.iter_mut().enumerate() {
                        let mut acc = C64::new(0.0, 0.0);
                        for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                            acc += a.vals[p] * xc[a.col_idx[p]];
                        }
                        *o += alpha * acc;
                    }
                }
            }
        }
    }

    /// `out += alpha * X * A` where `X` is `m x nrows` column-major and `out`
    /// is `m x ncols` column-major.
    pub fn gemm_right(&self, alpha: C64, x: &[C64], m: usize, out: &mut [C64]) {
        let (r, c) = (self.nrows(), self.ncols());
        debug_assert_eq!(x.len(), m * r);
        debug_assert_eq!(out.len(), m * c);
        match self {
            Kernel::Dense(a) => {
                for j in 0..c {
                    let oc = &mut out[j * m..(j + 1) * m];
                    for l in 0..r {
                        let av = a[(l, j)];
                        if av.re == 0.0 && av.im == 0.0 {
                            continue;
                        }
                        let s = alpha * av;
                        let xc = &x[l * m..(l + 1) * m];
                        for (o, &xv) in oc.iter_mut().zip(xc.iter()) {
                            *o += xv * s;
                        }
                    }
                }
            }
            Kernel::Sparse(a) => {
                for l in 0..r {
                    let xc = &x[l * m..(l + 1) * m];
                    for p in a.row_ptr[l]..a.row_ptr[l + 1] {
                        let j = a.col_idx[p];
                        let s = alpha * a.vals[p];
                        let oc = &mut out[j * m..(j + 1) * m];
                        for (o, &xv) in oc.iter_mut().zip(xc.iter()) {
                            *o += xv * s;
                        }
                    }
                }
            }
        }
    }

    /// `out += alpha * A * v`.
    pub fn matvec(&self, alpha: C64, v: &[C64], out: &mut [C64]) {
        self.gemm_left(alpha, v, 1, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, fill_every: usize) -> DMatrix<C64> {
        DMatrix::from_fn(n, n, |i, j| {
            if (i * n + j) % fill_every == 0 {
                C64::new(i as f64 + 0.5, j as f64 - 1.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    #[test]
    fn storage_follows_fill_threshold() {
        assert_eq!(Kernel::from_matrix(&sample(8, 5)).kind(), StorageKind::Sparse);
        assert_eq!(Kernel::from_matrix(&sample(8, 2)).kind(), StorageKind::Dense);
    }

    #[test]
    fn sparse_and_dense_products_agree() {
        let n = 7;
        let a = sample(n, 3);
        let x = DMatrix::from_fn(n, n, |i, j| C64::new((i + 2 * j) as f64, 1.0 - i as f64));
        let alpha = C64::new(0.3, -1.2);
        let sparse = Kernel::Sparse(Csr::from_dense(&a));
        let dense = Kernel::Dense(a.clone());
        for k in [&sparse, &dense] {
            let mut left = vec![C64::new(0.0, 0.0); n * n];
            k.gemm_left(alpha, x.as_slice(), n, &mut left);
            let expect = (&a * &x) * alpha;
            for (l, e) in left.iter().zip(expect.iter()) {
                assert!((l - e).norm() < 1e-12);
            }
            let mut right = vec![C64::new(0.0, 0.0); n * n];
            k.gemm_right(alpha, x.as_slice(), n, &mut right);
            let expect = (&x * &a) * alpha;
            for (r, e) in right.iter().zip(expect.iter()) {
                assert!((r - e).norm() < 1e-12);
            }
        }
    }
}

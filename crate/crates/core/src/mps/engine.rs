use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use ndarray_linalg::{JobSvd, Lapack, Scalar, QR, SVD, SVDDC};

use super::TruncationPolicy;
use crate::error::{Error, Result};

/// Hard ceiling on any bond when the policy sets no cap.
pub const BOND_BUDGET: usize = 4096;

pub trait Field: Scalar<Real = f64> + Lapack {}

impl Field for f64 {}
impl Field for num_complex::Complex64 {}

/// Open-boundary MPS; tensors are indexed `(left, physical, right)`.
#[derive(Clone, Debug)]
pub struct Mps<T> {
    tensors: Vec<Array3<T>>,
    center: usize,
    phys: usize,
    discarded: f64,
}

fn to_matrix<T: Clone>(a: Array3<T>, rows: usize, cols: usize) -> Array2<T> {
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, cols))
        .expect("reshape")
}

fn to_tensor<T: Clone>(a: Array2<T>, shape: (usize, usize, usize)) -> Array3<T> {
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order(shape)
        .expect("reshape")
}

fn adjoint<T: Field>(a: ArrayView2<T>) -> Array2<T> {
    a.t().mapv(|x| x.conj())
}

fn svd_checked<T: Field>(m: &Array2<T>) -> Result<(Array2<T>, Array1<f64>, Array2<T>)> {
    match m.svddc(JobSvd::Some) {
        Ok((Some(u), s, Some(vt))) if s.iter().all(|x| x.is_finite()) => Ok((u, s, vt)),
        _ => {
            // divide-and-conquer occasionally fails to converge; fall back to QR iteration
            let (u, s, vt) = m.svd(true, true)?;
            let (u, vt) = (u.unwrap(), vt.unwrap());
            let k = s.len();
            Ok((
                u.slice(s![.., ..k]).to_owned(),
                s,
                vt.slice(s![..k, ..]).to_owned(),
            ))
        }
    }
}

impl<T: Field> Mps<T> {
    /// Product state from one local vector per site.
    pub fn product(site_vectors: &[Vec<T>]) -> Self {
        assert!(!site_vectors.is_empty());
        let phys = site_vectors[0].len();
        let tensors = site_vectors
            .iter()
            .map(|v| {
                assert_eq!(v.len(), phys);
                Array3::from_shape_vec((1, phys, 1), v.clone()).unwrap()
            })
            .collect();
        Self {
            tensors,
            center: 0,
            phys,
            discarded: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn phys(&self) -> usize {
        self.phys
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn tensor(&self, p: usize) -> &Array3<T> {
        &self.tensors[p]
    }

    /// Mutable access to a site tensor. Any non-isometric change breaks the
    /// canonical form; call [`Mps::recompress`] afterwards.
    pub fn tensor_mut(&mut self, p: usize) -> &mut Array3<T> {
        &mut self.tensors[p]
    }

    /// Right dimension of each bond, `len() - 1` entries.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.len() - 1]
            .iter()
            .map(|t| t.dim().2)
            .collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Largest discarded weight since the last call.
    pub fn take_discarded(&mut self) -> f64 {
        std::mem::replace(&mut self.discarded, 0.0)
    }

    pub fn scale(&mut self, factor: T) {
        let c = self.center;
        self.tensors[c].mapv_inplace(|x| x * factor);
    }

    /// Squared norm of the centre tensor; equals the state norm in canonical form.
    pub fn center_norm_sq(&self) -> f64 {
        self.tensors[self.center].iter().map(|x| x.square()).sum()
    }

    /// Squared norm by full contraction.
    pub fn norm_sq(&self) -> f64 {
        let mut env = Array2::<T>::eye(1);
        for a in &self.tensors {
            let (_, d, r) = a.dim();
            let mut next = Array2::<T>::zeros((r, r));
            for x in 0..d {
                let ax = a.index_axis(Axis(1), x);
                next = next + adjoint(ax).dot(&env).dot(&ax);
            }
            env = next;
        }
        env[[0, 0]].re()
    }

    fn qr_right(&mut self) -> Result<()> {
        let c = self.center;
        let (l, d, r) = self.tensors[c].dim();
        let m = to_matrix(self.tensors[c].clone(), l * d, r);
        let (q, rr) = m.qr()?;
        let k = q.ncols();
        self.tensors[c] = to_tensor(q, (l, d, k));
        let (_, d2, r2) = self.tensors[c + 1].dim();
        let next = to_matrix(self.tensors[c + 1].clone(), r, d2 * r2);
        self.tensors[c + 1] = to_tensor(rr.dot(&next), (k, d2, r2));
        self.center += 1;
        Ok(())
    }

    fn qr_left(&mut self) -> Result<()> {
        let c = self.center;
        let (l, d, r) = self.tensors[c].dim();
        let m = to_matrix(self.tensors[c].clone(), l, d * r);
        let (q, rr) = adjoint(m.view()).qr()?;
        let k = q.ncols();
        self.tensors[c] = to_tensor(adjoint(q.view()), (k, d, r));
        let (l2, d2, _) = self.tensors[c - 1].dim();
        let prev = to_matrix(self.tensors[c - 1].clone(), l2 * d2, l);
        self.tensors[c - 1] = to_tensor(prev.dot(&adjoint(rr.view())), (l2, d2, k));
        self.center -= 1;
        Ok(())
    }

    pub fn move_center(&mut self, target: usize) -> Result<()> {
        assert!(target < self.len());
        while self.center < target {
            self.qr_right()?;
        }
        while self.center > target {
            self.qr_left()?;
        }
        Ok(())
    }

    fn split(
        &mut self,
        m: &Array2<T>,
        policy: &TruncationPolicy,
        bond: usize,
    ) -> Result<(Array2<T>, Array2<T>)> {
        let (u, s, vt) = svd_checked(m)?;
        let (keep, w) = policy.keep(s.as_slice().unwrap());
        if policy.max_bond.is_none() && keep > BOND_BUDGET {
            return Err(Error::BondBudget {
                bond,
                dim: keep,
                budget: BOND_BUDGET,
            });
        }
        self.discarded = self.discarded.max(w);
        let left = u.slice(s![.., ..keep]).to_owned();
        let mut right = vt.slice(s![..keep, ..]).to_owned();
        for (mut row, sv) in right.rows_mut().into_iter().zip(s.iter()) {
            row.mapv_inplace(|x| x * T::from_real(*sv));
        }
        Ok((left, right))
    }

    /// Apply `gate` (dimension `phys^w`) to sites `lo..lo+w`, truncating the
    /// `w-1` internal bonds with `policy`. Leaves the centre at `lo+w-1`.
    pub fn apply_block(
        &mut self,
        lo: usize,
        gate: &Array2<T>,
        policy: &TruncationPolicy,
    ) -> Result<()> {
        let d = self.phys;
        let mut w = 0;
        let mut dim = 1;
        while dim < gate.nrows() {
            dim *= d;
            w += 1;
        }
        assert_eq!(
            dim,
            gate.nrows(),
            "gate dimension is not a power of the local dimension"
        );
        let hi = lo + w - 1;
        assert!(hi < self.len(), "gate outside the chain");
        if self.center < lo {
            self.move_center(lo)?;
        } else if self.center > hi {
            self.move_center(hi)?;
        }

        let chi_l = self.tensors[lo].dim().0;
        let r0 = self.tensors[lo].dim().2;
        let mut theta = to_matrix(self.tensors[lo].clone(), chi_l * d, r0);
        for p in lo + 1..=hi {
            let (l, _, r) = self.tensors[p].dim();
            let next = to_matrix(self.tensors[p].clone(), l, d * r);
            theta = to_matrix(
                to_tensor(theta.dot(&next), (1, theta.nrows() * d, r)),
                theta.nrows() * d,
                r,
            );
        }
        let chi_r = theta.ncols();
        let theta = to_tensor(theta, (chi_l, dim, chi_r));

        let mut out = Array3::<T>::zeros((chi_l, dim, chi_r));
        for l in 0..chi_l {
            let block = gate.dot(&theta.index_axis(Axis(0), l));
            out.index_axis_mut(Axis(0), l).assign(&block);
        }

        let mut rest = out;
        let mut left_dim = chi_l;
        let mut remaining = dim;
        for p in lo..hi {
            remaining /= d;
            let m = to_matrix(rest, left_dim * d, remaining * chi_r);
            let (u, v) = self.split(&m, policy, p)?;
            let k = u.ncols();
            self.tensors[p] = to_tensor(u, (left_dim, d, k));
            rest = to_tensor(v, (k, remaining, chi_r));
            left_dim = k;
        }
        self.tensors[hi] = rest;
        self.center = hi;
        Ok(())
    }

    /// `A[l, a, r] <- Σ_b map[a, b] A[l, b, r]` on one site. Breaks the
    /// canonical form unless `map` is an isometry.
    pub fn apply_site_map(&mut self, p: usize, map: &Array2<T>) {
        let (l, d, r) = self.tensors[p].dim();
        assert_eq!(map.ncols(), d);
        let mut out = Array3::<T>::zeros((l, map.nrows(), r));
        for a in 0..l {
            out.index_axis_mut(Axis(0), a)
                .assign(&map.dot(&self.tensors[p].index_axis(Axis(0), a)));
        }
        self.tensors[p] = out;
    }

    /// `self + coeff * other` with block-diagonal bonds; not canonical.
    pub fn sum(&self, other: &Self, coeff: T) -> Self {
        assert_eq!(self.len(), other.len());
        assert_eq!(self.phys, other.phys);
        let n = self.len();
        let d = self.phys;
        let mut tensors = Vec::with_capacity(n);
        for p in 0..n {
            let a = &self.tensors[p];
            let b = other.tensors[p].mapv(|x| if p == 0 { x * coeff } else { x });
            let (al, _, ar) = a.dim();
            let (bl, _, br) = b.dim();
            let (l, r) = (
                if p == 0 { 1 } else { al + bl },
                if p == n - 1 { 1 } else { ar + br },
            );
            let mut t = Array3::<T>::zeros((l, d, r));
            let (bl0, br0) = (if p == 0 { 0 } else { al }, if p == n - 1 { 0 } else { ar });
            if n == 1 {
                t.assign(&(a + &b));
            } else {
                t.slice_mut(s![..al, .., ..ar]).assign(a);
                let mut view = t.slice_mut(s![bl0..bl0 + bl, .., br0..br0 + br]);
                view += &b;
            }
            tensors.push(t);
        }
        Self {
            tensors,
            center: 0,
            phys: d,
            discarded: 0.0,
        }
    }

    /// Restore canonical form after arbitrary local edits and truncate every
    /// bond with `policy`. Leaves the centre at site 0.
    pub fn recompress(&mut self, policy: &TruncationPolicy) -> Result<()> {
        let n = self.len();
        self.center = 0;
        self.move_center(n - 1)?;
        for c in (1..n).rev() {
            let (l, d, r) = self.tensors[c].dim();
            let m = to_matrix(self.tensors[c].clone(), l, d * r);
            let (u, s, vt) = svd_checked(&m)?;
            let (keep, w) = policy.keep(s.as_slice().unwrap());
            self.discarded = self.discarded.max(w);
            self.tensors[c] = to_tensor(vt.slice(s![..keep, ..]).to_owned(), (keep, d, r));
            let mut us = u.slice(s![.., ..keep]).to_owned();
            for (mut col, sv) in us.columns_mut().into_iter().zip(s.iter()) {
                col.mapv_inplace(|x| x * T::from_real(*sv));
            }
            let (l2, d2, _) = self.tensors[c - 1].dim();
            let prev = to_matrix(self.tensors[c - 1].clone(), l2 * d2, l);
            self.tensors[c - 1] = to_tensor(prev.dot(&us), (l2, d2, keep));
            self.center = c - 1;
        }
        Ok(())
    }

    /// `Σ Π_p w_p[x_p] A_p[x_p]`: contraction with one covector per site.
    pub fn contract_with(&self, covectors: &[&[T]]) -> T {
        let mut v = Array1::<T>::ones(1);
        for (a, w) in self.tensors.iter().zip(covectors) {
            let (_, d, r) = a.dim();
            let mut m = Array2::<T>::zeros((a.dim().0, r));
            for x in 0..d {
                if w[x] != T::zero() {
                    m.scaled_add(w[x], &a.index_axis(Axis(1), x));
                }
            }
            v = v.dot(&m);
        }
        v[0]
    }

    /// Full state vector (first site most significant); small chains only.
    pub fn to_dense(&self) -> Vec<T> {
        let mut acc = Array2::<T>::ones((1, 1));
        for a in &self.tensors {
            let (l, d, r) = a.dim();
            let m = to_matrix(a.clone(), l, d * r);
            let rows = acc.nrows();
            acc = to_matrix(to_tensor(acc.dot(&m), (1, rows * d, r)), rows * d, r);
        }
        acc.column(0).to_vec()
    }
}

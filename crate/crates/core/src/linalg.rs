//! Dense linear algebra helpers built on `nalgebra`'s SVD.
//!
//! Singular values returned by `nalgebra` are not guaranteed to be ordered,
//! so everything here sorts explicitly.

use nalgebra::{DMatrix, DVector};

/// Sorted singular values together with a full orthonormal basis whose
/// leading columns pair with them.
pub struct SortedBasis {
    pub basis: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

fn square_pad(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (r, c) = a.shape();
    let mut padded = DMatrix::zeros(k.max(r), k.max(c));
    padded.view_mut((0, 0), (r, c)).copy_from(a);
    padded
}

fn sorted(basis: DMatrix<f64>, values: &DVector<f64>, keep: usize) -> SortedBasis {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let mut out = DMatrix::zeros(basis.nrows(), basis.ncols());
    for (dst, &src) in order.iter().enumerate() {
        out.set_column(dst, &basis.column(src));
    }
    let mut singular_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    singular_values.truncate(keep);
    SortedBasis {
        basis: out,
        singular_values,
    }
}

/// Full `rows x rows` basis of left singular vectors.
///
/// Columns past the rank complete the basis of the column space's
/// orthogonal complement. The input is zero padded to square, which leaves
/// `A A^T` unchanged.
pub fn left_basis(a: &DMatrix<f64>) -> SortedBasis {
    let (r, c) = a.shape();
    let svd = square_pad(a, r).svd(true, false);
    sorted(svd.u.expect("requested u"), &svd.singular_values, r.min(c))
}

/// Full `cols x cols` basis of right singular vectors; trailing columns
/// span the null space.
pub fn right_basis(a: &DMatrix<f64>) -> SortedBasis {
    let (r, c) = a.shape();
    let svd = square_pad(a, c).svd(false, true);
    let v = svd.v_t.expect("requested v_t").transpose();
    sorted(v, &svd.singular_values, r.min(c))
}

/// Singular values in decreasing order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Count of singular values above `rel_tol * sigma_max` (zero for a zero matrix).
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    rank_of(&singular_values(a), rel_tol, 0.0)
}

/// Rank with the threshold `rel_tol * max(sigma_max, scale)`.
pub fn rank_of(values: &[f64], rel_tol: f64, scale: f64) -> usize {
    let top = values.first().copied().unwrap_or(0.0).max(scale);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&s| s > rel_tol * top).count()
}

pub fn smallest_singular_value(a: &DMatrix<f64>) -> f64 {
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// `sigma_max / sigma_min`, infinite for singular matrices.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Orthonormal basis of the orthogonal complement of the leading `rank`
/// left singular directions of `g` (`n x (n - rank)`).
pub fn range_complement(g: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let n = g.nrows();
    left_basis(g).basis.columns(rank, n - rank).into_owned()
}

/// Orthonormal basis of the null space of `a` with a relative rank cut.
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let c = a.ncols();
    let svd = right_basis(a);
    let rank = rank_of(&svd.singular_values, rel_tol, 0.0);
    svd.basis.columns(rank, c - rank).into_owned()
}

/// Minimum-norm least-squares solution of `a x = b`, truncating singular
/// values below `rel_tol * sigma_max`.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested u");
    let v_t = svd.v_t.as_ref().expect("requested v_t");
    let top = svd.singular_values.iter().fold(0.0_f64, |m, &s| m.max(s));
    let mut x = DVector::zeros(a.ncols());
    if top == 0.0 {
        return x;
    }
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * top {
            let coef = u.column(k).dot(b) / s;
            x += v_t.row(k).transpose() * coef;
        }
    }
    x
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

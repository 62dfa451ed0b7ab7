//! Dense matrix multiply and its adjoints, row-major.

use super::axpy;
use crate::scalar::Scalar;

/// `out[m,p] = a[m,k] * b[k,p]`. `out` is overwritten.
pub fn matmul<T: Scalar>(m: usize, k: usize, p: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(out.len(), m * p);
    out.fill(T::zero());
    for i in 0..m {
        let out_row = &mut out[i * p..(i + 1) * p];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            axpy(out_row, &b[kk * p..(kk + 1) * p], a_ik);
        }
    }
}

/// `da[m,k] += g[m,p] * b[k,p]^T` — gradient w.r.t. the left factor.
pub fn matmul_grad_a<T: Scalar>(m: usize, k: usize, p: usize, g: &[T], b: &[T], da: &mut [T]) {
    debug_assert_eq!(g.len(), m * p);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(da.len(), m * k);
    for i in 0..m {
        let g_row = &g[i * p..(i + 1) * p];
        let da_row = &mut da[i * k..(i + 1) * k];
        for kk in 0..k {
            da_row[kk] += super::dot(g_row, &b[kk * p..(kk + 1) * p]);
        }
    }
}

/// `db[k,p] += a[m,k]^T * g[m,p]` — gradient w.r.t. the right factor.
pub fn matmul_grad_b<T: Scalar>(m: usize, k: usize, p: usize, a: &[T], g: &[T], db: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * p);
    debug_assert_eq!(db.len(), k * p);
    for i in 0..m {
        let g_row = &g[i * p..(i + 1) * p];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            axpy(&mut db[kk * p..(kk + 1) * p], g_row, a_ik);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_hand_computed_product() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        matmul(2, 2, 2, &a, &b, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        // <A*B, G> must equal <A, G*B^T> and <B, A^T*G>.
        let (m, k, p) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * p).map(|i| (i as f64 * 0.71).cos()).collect();
        let g: Vec<f64> = (0..m * p).map(|i| (i as f64 * 0.13).sin()).collect();

        let mut c = vec![0.0; m * p];
        matmul(m, k, p, &a, &b, &mut c);
        let lhs: f64 = c.iter().zip(&g).map(|(x, y)| x * y).sum();

        let mut da = vec![0.0; m * k];
        matmul_grad_a(m, k, p, &g, &b, &mut da);
        let rhs_a: f64 = da.iter().zip(&a).map(|(x, y)| x * y).sum();

        let mut db = vec![0.0; k * p];
        matmul_grad_b(m, k, p, &a, &g, &mut db);
        let rhs_b: f64 = db.iter().zip(&b).map(|(x, y)| x * y).sum();

        assert!((lhs - rhs_a).abs() < 1e-12, "{lhs} vs {rhs_a}");
        assert!((lhs - rhs_b).abs() < 1e-12, "{lhs} vs {rhs_b}");
    }
}

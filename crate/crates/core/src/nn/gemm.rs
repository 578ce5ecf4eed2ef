//! Row-major wrapper over the dgemm kernel.

use matrixmultiply::dgemm;

/// C = alpha * op(A) * op(B) + beta * C.
///
/// All matrices are row-major. op(A) is m x k; when `trans_a`, A is stored
/// k x m and used transposed (likewise op(B) is k x n, stored n x k when
/// `trans_b`). C is always m x n.
pub fn gemm(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "A length");
    assert_eq!(b.len(), k * n, "B length");
    assert_eq!(c.len(), m * n, "C length");
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        b: &[f64],
    ) -> Vec<f64> {
        let get_a = |i: usize, j: usize| if trans_a { a[j * m + i] } else { a[i * k + j] };
        let get_b = |i: usize, j: usize| if trans_b { b[j * k + i] } else { b[i * n + j] };
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|l| get_a(i, l) * get_b(l, j)).sum();
            }
        }
        c
    }

    #[test]
    fn two_by_three_times_three_by_two() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = vec![0.0; 4];
        gemm(false, false, 2, 3, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_operands_match_naive() {
        let mut vals = (0..).map(|k| ((k * 37 + 11) % 23) as f64 - 11.0);
        let (m, k, n) = (4, 5, 3);
        let a: Vec<f64> = (&mut vals).take(m * k).collect();
        let b: Vec<f64> = (&mut vals).take(k * n).collect();
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut c = vec![0.0; m * n];
            gemm(ta, tb, m, k, n, 1.0, &a, &b, 0.0, &mut c);
            let want = naive(ta, tb, m, k, n, &a, &b);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12, "trans ({ta}, {tb})");
            }
        }
    }

    #[test]
    fn alpha_and_beta_scale_and_accumulate() {
        let a = [1.0, 0.0, 0.0, 1.0];
        let b = [2.0, 3.0, 4.0, 5.0];
        let mut c = vec![10.0, 10.0, 10.0, 10.0];
        gemm(false, false, 2, 2, 2, 2.0, &a, &b, 1.0, &mut c);
        assert_eq!(c, vec![14.0, 16.0, 18.0, 20.0]);
    }
}

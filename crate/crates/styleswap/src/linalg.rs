//! Small dense linear algebra: symmetric eigendecomposition and the few
//! matrix helpers the analysis code needs.
//!
//! The eigensolver is a cyclic Jacobi sweep. For the matrix sizes this
//! crate produces (embedded dimension squared, feature covariance) it
//! converges in a handful of sweeps and delivers residuals near machine
//! precision, which the semantic-basis invariants lean on.

/// Column-major-free dense matrix view: `n x m` row-major in a flat slice.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * k);
    assert_eq!(b.len(), k * m);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * m..(l + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn matvec(a: &[f64], x: &[f64], n: usize, m: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * m);
    assert_eq!(x.len(), m);
    (0..n)
        .map(|i| {
            a[i * m..(i + 1) * m]
                .iter()
                .zip(x)
                .map(|(av, xv)| av * xv)
                .sum()
        })
        .collect()
}

/// `AᵀA` for a row-major `rows x cols` matrix; result is `cols x cols`.
pub fn gram(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols);
    let mut out = vec![0.0; cols * cols];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        for i in 0..cols {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            let orow = &mut out[i * cols..(i + 1) * cols];
            for (o, rj) in orow.iter_mut().zip(row) {
                *o += ri * rj;
            }
        }
    }
    out
}

/// Eigendecomposition of a symmetric `n x n` matrix.
///
/// Returns eigenvalues in descending order and eigenvectors as the rows of
/// the returned matrix (row `i` pairs with eigenvalue `i`). Vectors are
/// orthonormal; each vector's sign is fixed so its largest-magnitude entry
/// is positive, making the output deterministic.
pub fn symmetric_eigen(mat: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(mat.len(), n * n);
    let mut a = mat.to_vec();
    // Accumulated rotations, row i = eigenvector i.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += a[i * n + j] * a[i * n + j];
            }
        }
        s
    };
    let scale: f64 = mat.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    let tol = scale * 1e-30;

    for _sweep in 0..64 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vpk = v[p * n + k];
                    let vqk = v[q * n + k];
                    v[p * n + k] = c * vpk - s * vqk;
                    v[q * n + k] = s * vpk + c * vqk;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut eigvals = Vec::with_capacity(n);
    let mut eigvecs = vec![0.0; n * n];
    for (rank, &idx) in order.iter().enumerate() {
        eigvals.push(a[idx * n + idx]);
        let row = &v[idx * n..(idx + 1) * n];
        // Sign convention: largest-|entry| positive.
        let mut lead = 0;
        for (k, val) in row.iter().enumerate() {
            if val.abs() > row[lead].abs() {
                lead = k;
            }
        }
        let flip = if row[lead] < 0.0 { -1.0 } else { 1.0 };
        for (k, val) in row.iter().enumerate() {
            eigvecs[rank * n + k] = flip * val;
        }
    }
    (eigvals, eigvecs)
}

/// Trace of the principal square root of `a*b`, both symmetric PSD.
///
/// Uses the similarity `a·b ~ s·b·s` with `s = a^{1/2}`, so only symmetric
/// eigenproblems are solved. Negative eigenvalues from roundoff clamp to 0.
pub fn trace_sqrt_product(a: &[f64], b: &[f64], n: usize) -> f64 {
    let (vals_a, vecs_a) = symmetric_eigen(a, n);
    // s = sum_i sqrt(l_i) u_i u_iᵀ  (vecs_a rows are u_i)
    let mut s = vec![0.0; n * n];
    for (i, &l) in vals_a.iter().enumerate() {
        let root = l.max(0.0).sqrt();
        if root == 0.0 {
            continue;
        }
        let u = &vecs_a[i * n..(i + 1) * n];
        for r in 0..n {
            let ur = root * u[r];
            if ur == 0.0 {
                continue;
            }
            let srow = &mut s[r * n..(r + 1) * n];
            for (sv, uc) in srow.iter_mut().zip(u) {
                *sv += ur * uc;
            }
        }
    }
    let sb = matmul(&s, b, n, n, n);
    let m = matmul(&sb, &s, n, n, n);
    // m is symmetric up to roundoff; symmetrize before the eigensolve.
    let mut msym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            msym[i * n + j] = 0.5 * (m[i * n + j] + m[j * n + i]);
        }
    }
    let (vals_m, _) = symmetric_eigen(&msym, n);
    vals_m.iter().map(|l| l.max(0.0).sqrt()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn eigen_identity() {
        let n = 5;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        let (vals, vecs) = symmetric_eigen(&m, n);
        for v in &vals {
            assert!((v - 1.0).abs() < 1e-14);
        }
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| vecs[i * n + k] * vecs[j * n + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigen_diagonal_ordering() {
        let m = vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        let (vals, vecs) = symmetric_eigen(&m, 3);
        assert!((vals[0] - 3.0).abs() < 1e-14);
        assert!((vals[1] - 2.0).abs() < 1e-14);
        assert!((vals[2] - 1.0).abs() < 1e-14);
        // axis-aligned
        assert!((vecs[0] - 1.0).abs() < 1e-12);
        assert!((vecs[3 + 2] - 1.0).abs() < 1e-12);
        assert!((vecs[6 + 1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_residuals_random() {
        let n = 32;
        let raw = rng::normal_vec(11, n * n);
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = 0.5 * (raw[i * n + j] + raw[j * n + i]);
            }
        }
        let (vals, vecs) = symmetric_eigen(&m, n);
        for i in 0..n {
            let v = &vecs[i * n..(i + 1) * n];
            let mv = matvec(&m, v, n, n);
            let res: f64 = mv
                .iter()
                .zip(v)
                .map(|(a, b)| (a - vals[i] * b) * (a - vals[i] * b))
                .sum::<f64>()
                .sqrt();
            assert!(res < 1e-10, "residual {res} at {i}");
        }
    }

    #[test]
    fn trace_sqrt_product_commuting_case() {
        // diagonal a, b: trace sqrt(ab) = sum sqrt(a_i b_i)
        let a = vec![4.0, 0.0, 0.0, 9.0];
        let b = vec![1.0, 0.0, 0.0, 16.0];
        let t = trace_sqrt_product(&a, &b, 2);
        assert!((t - (2.0 + 12.0)).abs() < 1e-10, "got {t}");
    }
}

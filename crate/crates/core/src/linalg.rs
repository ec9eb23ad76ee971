//! Small dense solves shared by fitting code.

/// Gaussian elimination with full pivoting on a 4x4 system. Near-singular
/// pivots make the corresponding solution component a free variable pinned
/// to zero, which still solves any consistent normal-equation system.
pub(crate) fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    let n = 4;
    let mut col_perm = [0usize, 1, 2, 3];
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = scale.max(1e-300) * 1e-12;
    let mut rank = n;
    for k in 0..n {
        let (mut pr, mut pc, mut pv) = (k, k, 0.0);
        for r in k..n {
            for c in k..n {
                if a[r][c].abs() > pv {
                    pv = a[r][c].abs();
                    pr = r;
                    pc = c;
                }
            }
        }
        if pv <= tol {
            rank = k;
            break;
        }
        a.swap(k, pr);
        b.swap(k, pr);
        if pc != k {
            for row in a.iter_mut() {
                row.swap(k, pc);
            }
            col_perm.swap(k, pc);
        }
        for r in k + 1..n {
            let f = a[r][k] / a[k][k];
            a[r][k] = 0.0;
            for c in k + 1..n {
                a[r][c] -= f * a[k][c];
            }
            b[r] -= f * b[k];
        }
    }
    let mut x = [0.0; 4];
    for k in (0..rank).rev() {
        let mut acc = b[k];
        for c in k + 1..n {
            acc -= a[k][c] * x[c];
        }
        x[k] = acc / a[k][k];
    }
    let mut out = [0.0; 4];
    for k in 0..n {
        out[col_perm[k]] = x[k];
    }
    out
}

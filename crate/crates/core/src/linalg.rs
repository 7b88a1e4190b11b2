//! Dense helpers for the log-domain determinant pipeline.

/// A real number stored as `sign * exp(log_abs)`.
///
/// `sign == 0` marks an exact zero; `log_abs` is then `-inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLog {
    pub sign: f64,
    pub log_abs: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog {
        sign: 0.0,
        log_abs: f64::NEG_INFINITY,
    };

    pub fn from_value(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            SignedLog {
                sign: x.signum(),
                log_abs: x.abs().ln(),
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0.0
    }

    pub fn value(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.sign * self.log_abs.exp()
        }
    }
}

/// `Σ_k sign_k exp(log_k)` without leaving the log domain.
pub fn signed_log_sum_exp(terms: &[SignedLog]) -> SignedLog {
    let max = terms
        .iter()
        .filter(|t| !t.is_zero())
        .map(|t| t.log_abs)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return SignedLog::ZERO;
    }
    let sum: f64 = terms
        .iter()
        .filter(|t| !t.is_zero())
        .map(|t| t.sign * (t.log_abs - max).exp())
        .sum();
    if sum == 0.0 {
        SignedLog::ZERO
    } else {
        SignedLog {
            sign: sum.signum(),
            log_abs: max + sum.abs().ln(),
        }
    }
}

/// In-place LU factorization with partial pivoting of a row-major `n x n`
/// matrix. Returns the row permutation and the permutation parity, or `None`
/// when a pivot is exactly zero.
fn lu_in_place(a: &mut [f64], n: usize) -> Option<(Vec<usize>, f64)> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut parity = 1.0;
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|r| (r, a[r * n + k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot == 0.0 {
            return None;
        }
        if p != k {
            for c in 0..n {
                a.swap(k * n + c, p * n + c);
            }
            perm.swap(k, p);
            parity = -parity;
        }
        let d = a[k * n + k];
        for r in k + 1..n {
            let f = a[r * n + k] / d;
            a[r * n + k] = f;
            if f != 0.0 {
                for c in k + 1..n {
                    a[r * n + c] -= f * a[k * n + c];
                }
            }
        }
    }
    Some((perm, parity))
}

/// Signed log-determinant of a row-major square matrix.
pub fn signed_log_det(matrix: &[f64], n: usize) -> SignedLog {
    if n == 0 {
        return SignedLog { sign: 1.0, log_abs: 0.0 };
    }
    let mut a = matrix.to_vec();
    let Some((_, parity)) = lu_in_place(&mut a, n) else {
        return SignedLog::ZERO;
    };
    let mut sign = parity;
    let mut log_abs = 0.0;
    for k in 0..n {
        let d = a[k * n + k];
        sign *= d.signum();
        log_abs += d.abs().ln();
    }
    SignedLog { sign, log_abs }
}

/// Signed log-determinant together with the inverse (row-major), or `None`
/// for the inverse when the matrix is exactly singular.
pub fn log_det_and_inverse(matrix: &[f64], n: usize) -> (SignedLog, Option<Vec<f64>>) {
    if n == 0 {
        return (SignedLog { sign: 1.0, log_abs: 0.0 }, Some(Vec::new()));
    }
    let mut a = matrix.to_vec();
    let Some((perm, parity)) = lu_in_place(&mut a, n) else {
        return (SignedLog::ZERO, None);
    };
    let mut sign = parity;
    let mut log_abs = 0.0;
    for k in 0..n {
        let d = a[k * n + k];
        sign *= d.signum();
        log_abs += d.abs().ln();
    }
    // Solve L U X = P I column by column.
    let mut inv = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        for (i, slot) in col.iter_mut().enumerate() {
            *slot = if perm[i] == j { 1.0 } else { 0.0 };
        }
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= a[i * n + k] * col[k];
            }
            col[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= a[i * n + k] * col[k];
            }
            col[i] = s / a[i * n + i];
        }
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    (SignedLog { sign, log_abs }, Some(inv))
}

//! Small dense numerical kernels used by the finite-volume solvers.
//!
//! The discretized transport and momentum operators on a structured tensor
//! grid are banded (bandwidth = number of cells along the fast axis), so a
//! no-pivot banded LU is all the linear algebra the solvers need. The
//! matrices are diagonally dominant M-matrices by construction, which makes
//! factorization without pivoting stable.

/// Banded matrix with `kl` sub- and `ku` super-diagonals, row-major band
/// storage: entry (i, j) lives at `data[i * w + (j - i + kl)]` with
/// `w = kl + ku + 1`.
#[derive(Clone)]
pub struct Banded {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Banded {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    #[inline]
    fn w(&self) -> usize {
        self.kl + self.ku + 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j + self.kl >= i && j <= i + self.ku, "out of band");
        let w = self.w();
        self.data[i * w + (j + self.kl - i)] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j + self.kl >= i && j <= i + self.ku, "out of band");
        let w = self.w();
        self.data[i * w + (j + self.kl - i)] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let w = self.w();
        self.data[i * w + (j + self.kl - i)]
    }

    pub fn clear(&mut self) {
        self.data.fill(0.0);
    }

    /// In-place LU factorization without pivoting. Fill stays inside the band.
    pub fn factor(mut self) -> FactoredBanded {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.w());
        for k in 0..n {
            let piv = self.data[k * w + kl];
            debug_assert!(piv != 0.0, "zero pivot at row {k}");
            let inv = 1.0 / piv;
            let imax = (k + kl).min(n - 1);
            for i in (k + 1)..=imax {
                // column k in row i
                let l = self.data[i * w + (k + kl - i)] * inv;
                self.data[i * w + (k + kl - i)] = l;
                if l != 0.0 {
                    let jmax = (k + ku).min(n - 1);
                    for j in (k + 1)..=jmax {
                        let u = self.data[k * w + (j + kl - k)];
                        self.data[i * w + (j + kl - i)] -= l * u;
                    }
                }
            }
        }
        FactoredBanded { m: self }
    }
}

/// LU factors of a [`Banded`] matrix; supports repeated right-hand sides.
pub struct FactoredBanded {
    m: Banded,
}

impl FactoredBanded {
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.m.n, self.m.kl, self.m.ku);
        let w = kl + ku + 1;
        let d = &self.m.data;
        // forward substitution with unit-diagonal L
        for i in 1..n {
            let jlo = i.saturating_sub(kl);
            let mut acc = 0.0;
            for j in jlo..i {
                acc += d[i * w + (j + kl - i)] * b[j];
            }
            b[i] -= acc;
        }
        // back substitution with U
        for i in (0..n).rev() {
            let jhi = (i + ku).min(n - 1);
            let mut acc = 0.0;
            for j in (i + 1)..=jhi {
                acc += d[i * w + (j + kl - i)] * b[j];
            }
            b[i] = (b[i] - acc) / d[i * w + kl];
        }
    }
}

/// Thomas algorithm for a tridiagonal system; `lo`, `diag`, `up` are the
/// three diagonals (`lo[0]` and `up[n-1]` unused). Overwrites `rhs` with the
/// solution.
pub fn solve_tridiag(lo: &[f64], diag: &[f64], up: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut dd = vec![0.0; n];
    c[0] = up[0] / diag[0];
    dd[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lo[i] * c[i - 1];
        c[i] = if i + 1 < n { up[i] / m } else { 0.0 };
        dd[i] = (rhs[i] - lo[i] * dd[i - 1]) / m;
    }
    rhs[n - 1] = dd[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = dd[i] - c[i] * rhs[i + 1];
    }
}

/// Power-law neighbor coefficient for a convection-diffusion face
/// (Patankar): `cond` is the diffusive conductance D*A/delta, `flow` the
/// signed mass/volume flux leaving the owner cell through the face. Returns
/// the coefficient multiplying the *neighbor* value; owner gets the
/// complementary `a_nb + flow`.
#[inline]
pub fn power_law_coeff(cond: f64, flow: f64) -> f64 {
    if cond <= 0.0 {
        return (-flow).max(0.0);
    }
    let pe = (flow / cond).abs();
    let g = (1.0 - 0.1 * pe).max(0.0);
    let g5 = g * g * g * g * g;
    cond * g5 + (-flow).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banded_solves_poisson_like_system() {
        // -u'' = 1 on [0,1], u(0)=u(1)=0, uniform grid
        let n = 50;
        let h = 1.0 / (n as f64 + 1.0);
        let mut a = Banded::zeros(n, 1, 1);
        let mut b = vec![h * h; n];
        for i in 0..n {
            a.set(i, i, 2.0);
            if i > 0 {
                a.set(i, i - 1, -1.0);
            }
            if i + 1 < n {
                a.set(i, i + 1, -1.0);
            }
        }
        a.factor().solve(&mut b);
        for i in 0..n {
            let x = (i as f64 + 1.0) * h;
            let exact = 0.5 * x * (1.0 - x);
            assert!((b[i] - exact).abs() < 1e-12, "node {i}");
        }
    }

    #[test]
    fn banded_matches_dense_on_random_dominant_matrix() {
        // deterministic pseudo-random fill, diagonally dominant
        let n = 40;
        let (kl, ku) = (3, 5);
        let mut a = Banded::zeros(n, kl, ku);
        let mut dense = vec![vec![0.0; n]; n];
        let mut state = 0x243f6a8885a308d3u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for i in 0..n {
            let mut rowsum = 0.0;
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                if j != i {
                    let v = next();
                    a.set(i, j, v);
                    dense[i][j] = v;
                    rowsum += v.abs();
                }
            }
            let d = rowsum + 1.0;
            a.set(i, i, d);
            dense[i][i] = d;
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                b[i] += dense[i][j] * x_true[j];
            }
        }
        a.factor().solve(&mut b);
        for i in 0..n {
            assert!((b[i] - x_true[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn tridiag_reproduces_linear_solution() {
        let n = 20;
        let lo = vec![-1.0; n];
        let up = vec![-1.0; n];
        let diag = vec![2.0; n];
        // u = i+1 solves the system with rhs from the matrix applied to it
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let u = |k: i64| (k + 1) as f64;
            rhs[i] = 2.0 * u(i as i64)
                - if i > 0 { u(i as i64 - 1) } else { 0.0 }
                - if i + 1 < n { u(i as i64 + 1) } else { 0.0 };
        }
        solve_tridiag(&lo, &diag, &up, &mut rhs);
        for (i, v) in rhs.iter().enumerate() {
            assert!((v - (i as f64 + 1.0)).abs() < 1e-11);
        }
    }

    #[test]
    fn power_law_limits() {
        // no flow: pure diffusion
        assert!((power_law_coeff(2.0, 0.0) - 2.0).abs() < 1e-15);
        // strong outflow: coefficient vanishes
        assert_eq!(power_law_coeff(1.0, 100.0), 0.0);
        // strong inflow: upwind value
        assert!((power_law_coeff(1.0, -100.0) - 100.0).abs() < 1e-12);
    }
}

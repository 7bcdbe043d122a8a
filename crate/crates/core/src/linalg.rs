//! Banded LU with partial pivoting (the `gbtrf`/`gbtrs` scheme), used for the
//! coupled per-step systems. Factor once, then solve with the matrix or its
//! transpose.

use crate::error::{Error, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals. Storage keeps
/// `kl` extra super-diagonals for the fill produced by row interchanges.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ld,
            data: vec![0.0; ld * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(i + self.kl + self.ku >= j && j + self.kl >= i);
        j * self.ld + (self.kl + self.ku + i - j)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i > j + self.kl || j > i + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)`, which must lie inside the declared band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            i <= j + self.kl && j <= i + self.ku,
            "entry ({i}, {j}) outside band ({}, {})",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            *yi = (lo..=hi).map(|j| self.get(i, j) * x[j]).sum();
        }
        y
    }

    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (j, yj) in y.iter_mut().enumerate() {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            *yj = (lo..=hi).map(|i| self.get(i, j) * x[i]).sum();
        }
        y
    }

    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let mut pivots = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = 0;
            let mut best = self.data[self.slot(j, j)].abs();
            for r in 1..=km {
                let v = self.data[self.slot(j + r, j)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            pivots[j] = j + p;
            if best == 0.0 || !best.is_finite() {
                return Err(Error::LinearSolveDivergence { pivot: j });
            }
            ju = ju.max((j + self.ku + p).min(n - 1));
            if p != 0 {
                for c in j..=ju {
                    let a = self.slot(j, c);
                    let b = self.slot(j + p, c);
                    self.data.swap(a, b);
                }
            }
            let d = self.data[self.slot(j, j)];
            for r in 1..=km {
                let s = self.slot(j + r, j);
                self.data[s] /= d;
            }
            for c in j + 1..=ju {
                let t = self.data[self.slot(j, c)];
                if t != 0.0 {
                    for r in 1..=km {
                        let l = self.data[self.slot(j + r, j)];
                        let s = self.slot(j + r, c);
                        self.data[s] -= l * t;
                    }
                }
            }
        }
        Ok(BandLu {
            lu: self,
            pivots,
        })
    }
}

/// LU factors of a [`BandMatrix`].
#[derive(Clone, Debug)]
pub struct BandLu {
    lu: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn size(&self) -> usize {
        self.lu.n
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let m = &self.lu;
        let n = m.n;
        let kuf = m.kl + m.ku;
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                b.swap(j, p);
            }
            let km = m.kl.min(n - 1 - j);
            let bj = b[j];
            for r in 1..=km {
                b[j + r] -= m.data[m.slot(j + r, j)] * bj;
            }
        }
        for j in (0..n).rev() {
            b[j] /= m.data[m.slot(j, j)];
            let bj = b[j];
            for i in j.saturating_sub(kuf)..j {
                b[i] -= m.data[m.slot(i, j)] * bj;
            }
        }
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transpose(&self, b: &mut [f64]) {
        let m = &self.lu;
        let n = m.n;
        let kuf = m.kl + m.ku;
        for j in 0..n {
            let mut acc = b[j];
            for i in j.saturating_sub(kuf)..j {
                acc -= m.data[m.slot(i, j)] * b[i];
            }
            b[j] = acc / m.data[m.slot(j, j)];
        }
        for j in (0..n).rev() {
            let km = m.kl.min(n - 1 - j);
            let mut acc = b[j];
            for r in 1..=km {
                acc -= m.data[m.slot(j + r, j)] * b[j + r];
            }
            b[j] = acc;
            let p = self.pivots[j];
            if p != j {
                b.swap(j, p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, rng: &mut ChaCha8Rng, zero_diag: bool) -> BandMatrix {
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                if zero_diag && i == j {
                    continue;
                }
                let boost = if i == j { 4.0 } else { 0.0 };
                a.add(i, j, boost + rng.gen_range(-1.0..1.0));
            }
        }
        a
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn solves_and_transpose_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, kl, ku) in &[(1, 0, 0), (7, 2, 1), (40, 5, 5), (60, 3, 9), (25, 0, 4)] {
            // zero diagonal forces row interchanges
            let a = random_band(n, kl, ku, &mut rng, kl > 0);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = a.mul_vec(&x);
            let bt = a.mul_transpose_vec(&x);
            let lu = a.clone().factor().unwrap();
            let mut y = b.clone();
            lu.solve(&mut y);
            assert!(max_err(&y, &x) < 1e-9, "n={n} kl={kl} ku={ku}");
            let mut z = bt.clone();
            lu.solve_transpose(&mut z);
            assert!(max_err(&z, &x) < 1e-9, "transpose n={n} kl={kl} ku={ku}");
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = BandMatrix::zeros(4, 1, 1);
        assert!(matches!(a.factor(), Err(Error::LinearSolveDivergence { pivot: 0 })));
    }

    #[test]
    #[should_panic]
    fn entries_outside_band_panic() {
        let mut a = BandMatrix::zeros(5, 1, 1);
        a.add(0, 3, 1.0);
    }
}

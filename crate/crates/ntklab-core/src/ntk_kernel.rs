//! Analytical and empirical neural tangent kernels.
//!
//! The analytical kernel has the closed form
//! `kappa(u) = u (1/2 - arccos(u)/(2 pi))` for `u = x . x'`; the empirical
//! kernel at weights W is `(x . x'/m) sum_j phi'(w_j.x) phi'(w_j.x')`, the
//! Frobenius inner product of the gradient feature maps. Gram assembly uses
//! the Khatri-Rao identity `G^T G = (X X^T) ⊙ (S S^T)/m` with S the 0/1
//! activation matrix, so the heavy product is an exact integer count.

use crate::error::{Error, Result};
use crate::linalg;
use crate::relu_net::{relu_prime, NetworkState};
use crate::rng::{self, Stream};
use crate::sphere_data::sample_sphere_stream;
use ndarray::{Array2, ArrayView1, ArrayView2};
use std::io::Write;

/// Dot products can overshoot [-1, 1] by a few ulps; anything beyond this is
/// a genuine domain error.
pub const DOT_OVERSHOOT_TOL: f64 = 1e-12;

/// Closed-form analytical NTK as a function of the input dot product.
pub fn kappa_analytical(u: f64) -> Result<f64> {
    if u.abs() > 1.0 + DOT_OVERSHOOT_TOL {
        return Err(Error::KernelDomain(u));
    }
    let z = u.clamp(-1.0, 1.0);
    Ok(z * (0.5 - z.acos() / (2.0 * std::f64::consts::PI)))
}

/// Empirical NTK at the given weights.
pub fn kappa_empirical(
    state: &NetworkState,
    x: ArrayView1<'_, f64>,
    x2: ArrayView1<'_, f64>,
) -> Result<f64> {
    if x.len() != state.d() || x2.len() != state.d() {
        return Err(Error::DimensionMismatch { expected: state.d(), got: x.len().min(x2.len()) });
    }
    let za = state.w.dot(&x);
    let zb = state.w.dot(&x2);
    let active: f64 = za
        .iter()
        .zip(zb.iter())
        .map(|(a, b)| relu_prime(*a) * relu_prime(*b))
        .sum();
    Ok(x.dot(&x2) / state.m() as f64 * active)
}

/// Where a Gram matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytical,
    Empirical,
}

/// n x n kernel Gram matrix.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub h: Array2<f64>,
    pub provenance: Provenance,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    /// Symmetry, positive semi-definiteness within tolerance, and the
    /// diagonal law: exactly 1/2 for the analytical kernel, at most 1
    /// (the active fraction) for an empirical one.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.h[[i, j]] - self.h[[j, i]]).abs() > 1e-12 {
                    return Err(Error::NonFinite("gram symmetry"));
                }
            }
        }
        for i in 0..n {
            let diag = self.h[[i, i]];
            let ok = match self.provenance {
                Provenance::Analytical => diag == 0.5,
                Provenance::Empirical => (0.0..=1.0 + 1e-12).contains(&diag),
            };
            if !ok {
                return Err(Error::NonFinite("gram diagonal"));
            }
        }
        let top = linalg::spectral_norm_sym(self.h.view());
        let min = linalg::min_eigenvalue_sym(self.h.view())?;
        if min < -1e-9 * top.max(1.0) {
            return Err(Error::NonFinite("gram positive semi-definiteness"));
        }
        Ok(())
    }

    /// CSV export, n x n, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.n() {
            let line: Vec<String> =
                (0..self.n()).map(|j| format!("{:.16e}", self.h[[i, j]])).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Binary export: magic, n as u64, row-major 64-bit floats.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"NTKG")?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        for v in self.h.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Analytical Gram matrix: entrywise kernel of X X^T, diagonal pinned to
/// kappa(1) = 1/2 exactly.
pub fn gram_analytical(x: ArrayView2<'_, f64>) -> Result<GramMatrix> {
    let n = x.nrows();
    let dots = x.dot(&x.t());
    let mut h = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let v = if i == j { 0.5 } else { kappa_analytical(dots[[i, j]])? };
            h[[i, j]] = v;
            h[[j, i]] = v;
        }
    }
    Ok(GramMatrix { h, provenance: Provenance::Analytical })
}

/// Empirical Gram matrix H_W = G_W^T G_W via the Khatri-Rao identity.
///
/// Antisymmetrically paired states (mirrored weight halves) contribute two
/// identical activation columns per neuron pair, so the dominant count
/// product runs on half the width.
pub fn gram_matrix(state: &NetworkState, x: ArrayView2<'_, f64>) -> Result<GramMatrix> {
    if x.ncols() != state.d() {
        return Err(Error::DimensionMismatch { expected: state.d(), got: x.ncols() });
    }
    let m = state.m();
    let half = m / 2;
    let paired = (0..half).all(|j| state.w.row(j) == state.w.row(half + j));
    let (counts, denom) = if paired {
        let z = x.dot(&state.w.slice(ndarray::s![..half, ..]).t());
        let s = z.mapv(relu_prime);
        (linalg::count_product(s.view(), s.view()) * 2.0, m as f64)
    } else {
        let z = state.preactivations(x)?;
        let s = z.mapv(relu_prime);
        (linalg::count_product(s.view(), s.view()), m as f64)
    };
    let dots = x.dot(&x.t());
    let h = &dots * &counts / denom;
    Ok(GramMatrix { h, provenance: Provenance::Empirical })
}

/// Smallest eigenvalue of a Gram matrix (dense symmetric solve).
pub fn min_eigenvalue(g: &GramMatrix) -> Result<f64> {
    if g.h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gram matrix"));
    }
    linalg::min_eigenvalue_sym(g.h.view())
}

/// Nystrom discretization of the operator-norm difference between two
/// kernels on M fresh probe points: spectral norm of the M x M matrix of
/// kernel differences, divided by M.
pub(crate) fn nystrom_operator_diff(
    probes: ArrayView2<'_, f64>,
    empirical: Option<&NetworkState>,
) -> Result<f64> {
    let m_probes = probes.nrows();
    let dots = probes.dot(&probes.t());
    let mut diff = Array2::zeros((m_probes, m_probes));
    for i in 0..m_probes {
        for j in 0..=i {
            let ana = if i == j { 0.5 } else { kappa_analytical(dots[[i, j]])? };
            diff[[i, j]] = -ana;
            diff[[j, i]] = -ana;
        }
    }
    if let Some(state) = empirical {
        diff += &gram_matrix(state, probes)?.h;
    } else {
        // kappa vs kappa: the difference is identically zero.
        diff.fill(0.0);
    }
    Ok(linalg::spectral_norm_sym(diff.view()) / m_probes as f64)
}

/// Nystrom estimate of ||H_W - H||_2 on `m_probes` fresh sphere points.
pub fn operator_norm_diff(state: &NetworkState, m_probes: usize, seed: u64) -> Result<f64> {
    let mut stream = rng::stream("ntk_kernel.nystrom", seed);
    operator_norm_diff_stream(state, m_probes, &mut stream)
}

/// Same, drawing probes from an existing stream.
pub fn operator_norm_diff_stream(
    state: &NetworkState,
    m_probes: usize,
    stream: &mut Stream,
) -> Result<f64> {
    if m_probes < 64 {
        return Err(Error::InvalidConfig(format!(
            "operator-norm probe count {m_probes} < 64"
        )));
    }
    let probes = sample_sphere_stream(state.d(), m_probes, stream)?;
    nystrom_operator_diff(probes.view(), Some(state))
}

/// Default hyperplane radius 32 sqrt(d/m) from the initialization lemma.
pub fn default_boundary_radius(m: usize, d: usize) -> f64 {
    32.0 * ((d as f64) / m as f64).sqrt()
}

/// For each sample x_i, the number of neurons whose initial weight lies
/// within `radius` of the hyperplane {v : v . x_i = 0}; since ||x_i|| = 1
/// that distance is |w_j . x_i|.
pub fn active_boundary_count(
    state: &NetworkState,
    x: ArrayView2<'_, f64>,
    radius: f64,
) -> Result<Vec<usize>> {
    let z = state.preactivations(x)?;
    Ok(z.rows()
        .into_iter()
        .map(|row| row.iter().filter(|v| v.abs() <= radius).count())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu_net::{gradient_matrix, init_antisymmetric};
    use crate::sphere_data::sample_sphere;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    #[test]
    fn kappa_closed_form_values() {
        assert_eq!(kappa_analytical(1.0).unwrap(), 0.5);
        assert_eq!(kappa_analytical(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(kappa_analytical(-1.0).unwrap(), 0.0, epsilon = 1e-15);
        // arccos(1/2) = pi/3 gives 1/2 (1/2 - 1/6) = 1/6.
        assert_abs_diff_eq!(kappa_analytical(0.5).unwrap(), 1.0 / 6.0, epsilon = 1e-15);
        assert!(kappa_analytical(1.0 + 5e-13).is_ok());
        assert!(matches!(kappa_analytical(1.1), Err(Error::KernelDomain(_))));
    }

    #[test]
    fn empirical_kernel_without_active_units_is_zero() {
        let w = array![[-1.0, 0.0, 0.0], [-2.0, 0.0, 0.0]];
        let s = NetworkState::new(w, array![1.0, -1.0]).unwrap();
        let x = array![1.0, 0.0, 0.0];
        assert_eq!(kappa_empirical(&s, x.view(), x.view()).unwrap(), 0.0);
    }

    #[test]
    fn empirical_kernel_is_gradient_inner_product() {
        let state = init_antisymmetric(16, 4, 40).unwrap();
        let x = sample_sphere(4, 6, 41).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let k = kappa_empirical(&state, x.row(i), x.row(j)).unwrap();
                let gi = state.gradient(x.row(i)).unwrap();
                let gj = state.gradient(x.row(j)).unwrap();
                let frob: f64 = (&gi * &gj).sum();
                assert_abs_diff_eq!(k, frob, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn empirical_kernel_concentrates_on_diagonal() {
        // kappa_W(x, x) -> kappa(x, x) = 1/2 as m grows; at m = 2^14 the
        // deviation is below 0.02 on at least 95 of 100 seeds.
        let d = 8;
        let m = 1 << 14;
        let mut hits = 0;
        for seed in 0..100 {
            let state = init_antisymmetric(m, d, seed).unwrap();
            let x = sample_sphere(d, 1, 1000 + seed).unwrap();
            let k = kappa_empirical(&state, x.row(0), x.row(0)).unwrap();
            if (k - 0.5).abs() <= 0.02 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/100 within 0.02");
    }

    #[test]
    fn analytical_gram_single_point() {
        let x = sample_sphere(5, 1, 3).unwrap();
        let g = gram_analytical(x.view()).unwrap();
        assert_eq!(g.h[[0, 0]], 0.5);
        g.validate().unwrap();
    }

    #[test]
    fn gram_equals_gradient_matrix_product() {
        for seed in 0..20 {
            let state = init_antisymmetric(16, 4, seed).unwrap();
            let x = sample_sphere(4, 20, 500 + seed).unwrap();
            let gm = gradient_matrix(&state, x.view()).unwrap();
            let gtg = gm.g.t().dot(&gm.g);
            let h = gram_matrix(&state, x.view()).unwrap();
            let max = (&gtg - &h.h).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            assert!(max <= 1e-10, "seed {seed}: max abs diff {max}");
            h.validate().unwrap();
        }
    }

    #[test]
    fn gram_entries_match_pointwise_kernel() {
        let state = init_antisymmetric(8, 4, 77).unwrap();
        let x = sample_sphere(4, 9, 78).unwrap();
        let h = gram_matrix(&state, x.view()).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let k = kappa_empirical(&state, x.row(i), x.row(j)).unwrap();
                assert_abs_diff_eq!(h.h[[i, j]], k, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn analytical_gram_depends_only_on_dot_products() {
        // Rotate by a product of Householder reflections; Gram unchanged.
        let d = 6;
        let x = sample_sphere(d, 30, 11).unwrap();
        let mut q = Array2::eye(d);
        let mut rng = crate::rng::stream("ntk_kernel.test.rot", 5);
        for _ in 0..3 {
            let mut v: Array1<f64> = Array1::zeros(d);
            for e in v.iter_mut() {
                *e = rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng);
            }
            let norm = v.dot(&v).sqrt();
            v.mapv_inplace(|t| t / norm);
            let outer = Array2::from_shape_fn((d, d), |(i, j)| v[i] * v[j]);
            q = q.dot(&(Array2::eye(d) - outer * 2.0));
        }
        let xr = x.dot(&q);
        let a = gram_analytical(x.view()).unwrap();
        let b = gram_analytical(xr.view()).unwrap();
        let max = (&a.h - &b.h).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        assert!(max <= 1e-10, "rotation changed gram by {max}");
    }

    #[test]
    fn min_eigenvalue_small_cases() {
        let x = sample_sphere(4, 1, 0).unwrap();
        let g = gram_analytical(x.view()).unwrap();
        assert_abs_diff_eq!(min_eigenvalue(&g).unwrap(), 0.5, epsilon = 1e-12);

        // Two identical points give a singular Gram matrix.
        let row = sample_sphere(4, 1, 1).unwrap();
        let mut x2 = Array2::zeros((2, 4));
        x2.row_mut(0).assign(&row.row(0));
        x2.row_mut(1).assign(&row.row(0));
        let g2 = gram_analytical(x2.view()).unwrap();
        assert_abs_diff_eq!(min_eigenvalue(&g2).unwrap(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn gradient_matrix_spectral_norm_event() {
        // ||G_W||_2 <= 2 sqrt(n/d) on the data spectral-norm event; checked
        // through lambda_max(H_W) = ||G_W||_2^2 over 200 seeds.
        let (d, n, m) = (16, 1024, 64);
        let bound = 4.0 * n as f64 / d as f64;
        let mut hits = 0;
        for seed in 0..200 {
            let x = sample_sphere(d, n, 2000 + seed).unwrap();
            let state = init_antisymmetric(m, d, 3000 + seed).unwrap();
            let h = gram_matrix(&state, x.view()).unwrap();
            if linalg::spectral_norm_sym(h.h.view()) <= bound {
                hits += 1;
            }
        }
        assert!(hits as f64 / 200.0 >= 0.99, "frequency {}", hits as f64 / 200.0);
    }

    #[test]
    fn nystrom_of_identical_kernels_is_zero() {
        let probes = sample_sphere(5, 64, 9).unwrap();
        let est = nystrom_operator_diff(probes.view(), None).unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn nystrom_estimate_is_nonnegative_and_permutation_invariant() {
        let state = init_antisymmetric(128, 5, 4).unwrap();
        let probes = sample_sphere(5, 80, 5).unwrap();
        let est = nystrom_operator_diff(probes.view(), Some(&state)).unwrap();
        assert!(est >= 0.0);
        // Reverse the probe order: permutation similarity preserves spectrum.
        let mut rev = Array2::zeros((80, 5));
        for i in 0..80 {
            rev.row_mut(i).assign(&probes.row(79 - i));
        }
        let est2 = nystrom_operator_diff(rev.view(), Some(&state)).unwrap();
        assert_abs_diff_eq!(est, est2, epsilon = 1e-10);
    }

    #[test]
    fn probe_count_floor_is_enforced() {
        let state = init_antisymmetric(8, 4, 0).unwrap();
        assert!(operator_norm_diff(&state, 32, 0).is_err());
    }

    #[test]
    fn boundary_counts_basic_properties() {
        let state = init_antisymmetric(512, 8, 50).unwrap();
        let x = sample_sphere(8, 40, 51).unwrap();
        // radius 0 catches only exact zeros, which have probability 0.
        let zero = active_boundary_count(&state, x.view(), 0.0).unwrap();
        assert!(zero.iter().all(|c| *c == 0));
        let small = active_boundary_count(&state, x.view(), 0.1).unwrap();
        let large = active_boundary_count(&state, x.view(), 0.5).unwrap();
        for (s, l) in small.iter().zip(large.iter()) {
            assert!(s <= l);
        }
    }

    #[test]
    fn empirical_gram_norm_bound_on_the_event() {
        // ||H_W||_2 <= 4n/d whenever ||X||_2 <= 2 sqrt(n/d).
        let (d, n, m) = (16, 256, 128);
        for seed in 0..10 {
            let x = sample_sphere(d, n, 600 + seed).unwrap();
            let on_event = crate::sphere_data::data_spectral_norm(x.view()).unwrap()
                <= 2.0 * ((n as f64) / d as f64).sqrt();
            let state = init_antisymmetric(m, d, 700 + seed).unwrap();
            let h = gram_matrix(&state, x.view()).unwrap();
            if on_event {
                assert!(linalg::spectral_norm_sym(h.h.view()) <= 4.0 * n as f64 / d as f64);
            }
        }
    }

    #[test]
    fn gram_export_round_trip_binary_header() {
        let x = sample_sphere(4, 3, 2).unwrap();
        let g = gram_analytical(x.view()).unwrap();
        let mut bin = Vec::new();
        g.write_binary(&mut bin).unwrap();
        assert_eq!(&bin[0..4], b"NTKG");
        assert_eq!(u64::from_le_bytes(bin[4..12].try_into().unwrap()), 3);
        assert_eq!(bin.len(), 12 + 9 * 8);
        let mut csv = Vec::new();
        g.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        let first: f64 = text.lines().next().unwrap().split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, 0.5);
    }
}

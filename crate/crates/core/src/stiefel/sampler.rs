//! Exact-kernel Markov chain for the matrix Langevin law.
//!
//! With Y = X V the kernel factors as prod_j exp(d_j m_j^T y_j), so each
//! column given the others is von Mises-Fisher on the unit sphere of the
//! orthogonal complement of the remaining columns. When n = p that
//! complement is a single line, and pairs of columns are refreshed jointly
//! inside their two-dimensional span instead.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::{haar_sample, qr_frame, MLParams, StiefelPoint};
use crate::error::{Error, Result};
use crate::matfn::ln_bessel_i;

/// Column scans used to turn a Haar start into one matrix Langevin draw.
pub const DEFAULT_SCANS: usize = 10;

/// Sweeps taken from a Haar start before the first state is used. Ten is not
/// enough once the concentrations reach a few tens.
pub const BURN_IN_SCANS: usize = 50;

/// Cosine w = mu^T x of a vMF(kappa) draw on S^{m-1}, plus sqrt(1 - w^2).
fn wood<R: Rng + ?Sized>(kappa: f64, m: usize, rng: &mut R) -> (f64, f64) {
    debug_assert!(m >= 2);
    let mm1 = (m - 1) as f64;
    let beta = Beta::new(mm1 / 2.0, mm1 / 2.0).expect("positive shape");
    if !(kappa > 0.0) {
        let z: f64 = beta.sample(rng);
        let w = 1.0 - 2.0 * z;
        return (w, (4.0 * z * (1.0 - z)).max(0.0).sqrt());
    }
    let b = mm1 / (2.0 * kappa + (4.0 * kappa * kappa + mm1 * mm1).sqrt());
    // 1 - x0 and 1 - x0^2 in cancellation-free form
    let one_m_x0 = 2.0 * b / (1.0 + b);
    let x0 = 1.0 - one_m_x0;
    let one_m_x0sq = 4.0 * b / ((1.0 + b) * (1.0 + b));
    loop {
        let z: f64 = beta.sample(rng);
        let denom = 1.0 - (1.0 - b) * z;
        let one_m_w = 2.0 * b * z / denom;
        let w = 1.0 - one_m_w;
        let one_m_x0w = one_m_x0 + x0 * one_m_w;
        let log_acc = kappa * (one_m_x0 - one_m_w) + mm1 * (one_m_x0w / one_m_x0sq).ln();
        let u: f64 = rng.random();
        if u > 0.0 && u.ln() <= log_acc {
            let sin = (one_m_w * (2.0 - one_m_w)).max(0.0).sqrt();
            return (w, sin);
        }
    }
}

/// One draw from vMF(mu, kappa) on the unit sphere in R^m.
pub fn vmf_sample<R: Rng + ?Sized>(mu: &DVector<f64>, kappa: f64, rng: &mut R) -> Result<DVector<f64>> {
    let m = mu.len();
    let norm = mu.norm();
    if m < 2 || !(norm > 0.0) || !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!("vmf needs dimension >= 2, unit mean and kappa >= 0 (m={m}, kappa={kappa})")));
    }
    let mu = mu / norm;
    let (w, s) = wood(kappa, m, rng);
    let mut g = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let along = mu.dot(&g);
    g.axpy(-along, &mu, 1.0);
    let gn = g.norm();
    Ok(&mu * w + g * (s / gn))
}

fn project_out(vec: &mut DVector<f64>, y: &DMatrix<f64>, skip: usize) {
    // twice for numerical orthogonality
    for _ in 0..2 {
        for k in 0..y.ncols() {
            if k != skip {
                let c = y.column(k).dot(vec);
                vec.axpy(-c, &y.column(k), 1.0);
            }
        }
    }
}

fn column_step<R: Rng + ?Sized>(y: &mut DMatrix<f64>, target: &DMatrix<f64>, d: &[f64], j: usize, rng: &mut R) {
    let n = y.nrows();
    let dim = n - y.ncols() + 1;
    let mut a: DVector<f64> = target.column(j).into_owned();
    project_out(&mut a, y, j);
    let r = a.norm();
    let kappa = d[j] * r;
    let mu = if r > 1e-12 && kappa > 0.0 {
        a / r
    } else {
        // flat full conditional: any unit direction in the complement
        loop {
            let mut g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            project_out(&mut g, y, j);
            let gn = g.norm();
            if gn > 1e-8 {
                break g / gn;
            }
        }
    };
    let (w, s) = wood(if r > 1e-12 { kappa } else { 0.0 }, dim, rng);
    let perp = loop {
        let mut g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        project_out(&mut g, y, j);
        let along = mu.dot(&g);
        g.axpy(-along, &mu, 1.0);
        let gn = g.norm();
        if gn > 1e-8 {
            break g / gn;
        }
    };
    y.set_column(j, &(&mu * w + perp * s));
}

fn pair_step<R: Rng + ?Sized>(y: &mut DMatrix<f64>, target: &DMatrix<f64>, d: &[f64], i: usize, j: usize, rng: &mut R) {
    let yi: DVector<f64> = y.column(i).into_owned();
    let yj: DVector<f64> = y.column(j).into_owned();
    let (a1, a2) = (yi.dot(&target.column(i)), yj.dot(&target.column(i)));
    let (b1, b2) = (yi.dot(&target.column(j)), yj.dot(&target.column(j)));
    // new pair = [yi yj] R(theta) diag(1, s); exponent = kappa_s cos(theta - phi_s)
    let mut cand = [(0.0, 0.0, 0.0); 2];
    for (k, s) in [1.0, -1.0].into_iter().enumerate() {
        let a = d[i] * a1 + s * d[j] * b2;
        let b = d[i] * a2 - s * d[j] * b1;
        let kappa = a.hypot(b);
        cand[k] = (kappa, b.atan2(a), ln_bessel_i(0.0, kappa));
    }
    let lw_plus = cand[0].2;
    let lw_minus = cand[1].2;
    let p_plus = 1.0 / (1.0 + (lw_minus - lw_plus).exp());
    let (k, s) = if rng.random::<f64>() < p_plus { (0, 1.0) } else { (1, -1.0) };
    let (kappa, phi, _) = cand[k];
    let (w, sn) = wood(kappa, 2, rng);
    let delta = if rng.random::<bool>() { sn.atan2(w) } else { -sn.atan2(w) };
    let theta = phi + delta;
    let (c, sth) = (theta.cos(), theta.sin());
    y.set_column(i, &(&yi * c + &yj * sth));
    y.set_column(j, &((&yi * (-sth) + &yj * c) * s));
}

fn scan<R: Rng + ?Sized>(y: &mut DMatrix<f64>, target: &DMatrix<f64>, d: &[f64], rng: &mut R) {
    let (n, p) = y.shape();
    if n > p {
        for j in 0..p {
            column_step(y, target, d, j, rng);
        }
    } else if p == 1 {
        // V_{1,1} = {-1, +1}
        let e = d[0] * target[(0, 0)];
        let p_plus = 1.0 / (1.0 + (-2.0 * e).exp());
        y[(0, 0)] = if rng.random::<f64>() < p_plus { 1.0 } else { -1.0 };
    } else {
        for i in 0..p {
            for j in i + 1..p {
                pair_step(y, target, d, i, j, rng);
            }
        }
    }
    *y = qr_frame(std::mem::replace(y, DMatrix::zeros(0, 0)));
}

/// Advance x by `scans` sweeps of the chain targeting ML(m, d, v). Zero
/// concentrations are allowed and give flat directions.
pub(crate) fn ml_update<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    m: &DMatrix<f64>,
    d: &[f64],
    v: &DMatrix<f64>,
    scans: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let mut y = x * v;
    for _ in 0..scans {
        scan(&mut y, m, d, rng);
    }
    qr_frame(y * v.transpose())
}

/// One approximate ML draw: a Haar start followed by `BURN_IN_SCANS` sweeps.
pub fn ml_sample<R: Rng + ?Sized>(theta: &MLParams, rng: &mut R) -> Result<StiefelPoint> {
    let start = haar_sample(theta.n(), theta.p(), rng)?;
    let x = ml_update(start.matrix(), theta.m().matrix(), theta.d().as_slice(), theta.v().matrix(), BURN_IN_SCANS, rng);
    Ok(StiefelPoint::from_trusted(x))
}

/// `count` consecutive states of one chain, `scans` sweeps apart, after a
/// burn-in of `BURN_IN_SCANS` sweeps.
pub fn ml_sample_chain<R: Rng + ?Sized>(
    theta: &MLParams,
    count: usize,
    scans: usize,
    rng: &mut R,
) -> Result<Vec<StiefelPoint>> {
    let (m, d, v) = (theta.m().matrix(), theta.d().as_slice(), theta.v().matrix());
    let mut x = ml_update(haar_sample(theta.n(), theta.p(), rng)?.matrix(), m, d, v, BURN_IN_SCANS, rng);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        x = ml_update(&x, m, d, v, scans.max(1), rng);
        out.push(StiefelPoint::from_trusted(x.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matfn::{h, ConcVector, SeriesControl};
    use crate::stiefel::{ml_mean, orthonormality_error, ORTHO_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(m: &[f64], n: usize, p: usize, d: &[f64], v: DMatrix<f64>) -> MLParams {
        MLParams::new(
            StiefelPoint::new(DMatrix::from_row_slice(n, p, m)).unwrap(),
            ConcVector::new(d.to_vec(), n).unwrap(),
            StiefelPoint::new(v).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn wood_cosine_mean_matches_bessel_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(kappa, m) in &[(0.5, 3usize), (5.0, 3), (40.0, 4), (3.0, 2), (1e4, 5)] {
            let reps = 100_000;
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..reps {
                let (w, sn) = wood(kappa, m, &mut rng);
                assert!((w * w + sn * sn - 1.0).abs() < 1e-12);
                s += w;
                s2 += w * w;
            }
            let mean = s / reps as f64;
            let se = ((s2 / reps as f64 - mean * mean) / reps as f64).sqrt();
            // E[w] = I_{m/2}(k) / I_{m/2-1}(k)
            let half = m as f64 / 2.0;
            let expect = (ln_bessel_i(half, kappa) - ln_bessel_i(half - 1.0, kappa)).exp();
            assert!((mean - expect).abs() < 4.0 * se + 1e-12, "k={kappa} m={m}: {mean} vs {expect}");
        }
    }

    fn mean_check(theta: &MLParams, reps: usize, seed: u64) {
        let ctl = SeriesControl::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = ml_sample_chain(theta, reps, 2, &mut rng).unwrap();
        let mut mean = DMatrix::zeros(theta.n(), theta.p());
        for x in &draws {
            assert!(orthonormality_error(x.matrix()) < ORTHO_TOL);
            mean += x.matrix();
        }
        mean /= reps as f64;
        let expect = ml_mean(theta, &ctl).unwrap();
        let err = (&mean - &expect).amax();
        assert!(err < 0.02, "mean error {err}\n{mean}\n{expect}");
    }

    #[test]
    fn chain_mean_matches_h_map_n_greater_than_p() {
        let v = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        let theta = params(&[0.0, 1.0, 1.0, 0.0, 0.0, 0.0], 3, 2, &[4.0, 2.0], v);
        mean_check(&theta, 20_000, 2);
    }

    #[test]
    fn chain_mean_matches_h_map_square() {
        let theta = params(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 3, 3, &[3.0, 2.0, 0.5], DMatrix::identity(3, 3));
        mean_check(&theta, 20_000, 3);
        let theta = params(&[1.0, 0.0, 0.0, 1.0], 2, 2, &[2.0, 1.0], DMatrix::identity(2, 2));
        mean_check(&theta, 20_000, 4);
    }

    #[test]
    fn one_by_one_is_a_sign() {
        let theta = params(&[1.0], 1, 1, &[0.7], DMatrix::identity(1, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let reps = 50_000;
        let plus = (0..reps).filter(|_| ml_sample(&theta, &mut rng).unwrap().matrix()[(0, 0)] > 0.0).count();
        let expect = 1.0 / (1.0 + (-1.4f64).exp());
        assert!((plus as f64 / reps as f64 - expect).abs() < 0.01);
        let hv = h(1, &[0.7], &SeriesControl::default()).unwrap();
        assert!((2.0 * expect - 1.0 - hv[0]).abs() < 1e-12);
    }

    #[test]
    fn vmf_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(vmf_sample(&DVector::from_vec(vec![1.0]), 1.0, &mut rng).is_err());
        assert!(vmf_sample(&DVector::from_vec(vec![0.0, 0.0]), 1.0, &mut rng).is_err());
        let x = vmf_sample(&DVector::from_vec(vec![0.0, 2.0, 0.0]), 1e6, &mut rng).unwrap();
        assert!((x.norm() - 1.0).abs() < 1e-12 && x[1] > 0.99);
    }
}

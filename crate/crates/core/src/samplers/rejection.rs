//! Exact draws from the one-dimensional full conditional of a concentration,
//! g(x) = exp(nu eta x) / 0F1(n/2, diag(x, d_rest)^2 / 4)^nu on x > 0.
//!
//! The envelope is a step function on (0, M_crit] built from the fact that g
//! is log-concave (so unimodal), followed by a Gamma-shaped tail bound for
//! n >= 3. For n = 2 the Bessel factor in that bound is of order zero, where
//! the bound does not hold, and the tail is the tangent line of log g at
//! M_crit instead.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::matfn::special::ln_upper_gamma;
use crate::matfn::{ln_bessel_i, ln_gamma, log_sum_exp, CoordinateSlice, LogScalar, SeriesControl};
use crate::priors::CCPDParams;

// Bins further than this many nats below the mode are merged into one flat
// piece; their share of the envelope is below exp(-MERGE_GAP) per bin.
const MERGE_GAP: f64 = 25.0;
const MAX_DOUBLINGS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RejectionConfig {
    /// bin width; `None` means 1/sqrt(nu)
    pub delta: Option<f64>,
    /// bound on g(M_crit) / g(mode)
    pub eps_tail: f64,
    /// bound on the tail piece's share of envelope mass
    pub tail_share: f64,
    pub max_rejections: u64,
    /// check the envelope at every bin endpoint and midpoint
    pub verify: bool,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        RejectionConfig { delta: None, eps_tail: 1e-4, tail_share: 1e-15, max_rejections: 1_000_000, verify: true }
    }
}

impl RejectionConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.delta {
            if !(d > 0.0) || !d.is_finite() {
                return domain(format!("bin width must be positive, got {d}"));
            }
        }
        if !(self.eps_tail > 0.0 && self.eps_tail < 1.0) || !(self.tail_share > 0.0 && self.tail_share < 1.0) {
            return domain("eps_tail and tail_share must lie in (0, 1)");
        }
        if self.max_rejections == 0 {
            return domain("max_rejections must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TailKind {
    /// K x^{shape-1} exp(-rate x)
    Gamma,
    /// exp(log_coeff + slope (x - M_crit)), slope = -rate
    Exponential,
}

/// The piecewise envelope: `nbin` bins of width `delta` on (0, m_crit], then
/// one tail piece on (m_crit, inf).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalPieces {
    pub mode: f64,
    pub log_mode_value: f64,
    pub delta: f64,
    pub nbin: usize,
    pub m_crit: f64,
    pub bin_heights: Vec<f64>,
    pub tail: TailKind,
    /// log K for the Gamma tail, log g(M_crit) for the exponential one
    pub tail_log_coeff: f64,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    /// normalized masses of the nbin + 1 pieces
    pub probs: Vec<f64>,
    pub log_total_mass: f64,
    /// log tail mass at each M_crit tried
    pub tail_history: Vec<f64>,
    #[serde(skip)]
    cum: Vec<f64>,
}

impl ProposalPieces {
    /// log of the envelope at x > 0.
    pub fn log_envelope(&self, x: f64) -> f64 {
        if x <= self.m_crit {
            let i = ((x / self.delta).ceil() as usize).clamp(1, self.nbin) - 1;
            // points on a bin boundary belong to the higher neighbour
            let on_edge = (x / self.delta).fract() == 0.0 && i + 1 < self.nbin;
            if on_edge {
                self.bin_heights[i].max(self.bin_heights[i + 1])
            } else {
                self.bin_heights[i]
            }
        } else {
            self.log_tail(x)
        }
    }

    fn log_tail(&self, x: f64) -> f64 {
        match self.tail {
            TailKind::Gamma => self.tail_log_coeff + (self.gamma_shape - 1.0) * x.ln() - self.gamma_rate * x,
            TailKind::Exponential => self.tail_log_coeff - self.gamma_rate * (x - self.m_crit),
        }
    }

    fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let u: f64 = rng.random();
        let piece = self.cum.partition_point(|&c| c < u).min(self.nbin);
        if piece < self.nbin {
            let y = (piece as f64 + rng.random::<f64>()) * self.delta;
            (y, self.bin_heights[piece])
        } else {
            let y = match self.tail {
                TailKind::Gamma => truncated_gamma(self.gamma_shape, self.gamma_rate, self.m_crit, rng),
                TailKind::Exponential => {
                    self.m_crit + Exp::new(self.gamma_rate).expect("positive rate").sample(rng)
                }
            };
            (y, self.log_tail(y))
        }
    }
}

/// Gamma(shape, rate) conditioned on x > lower.
pub(crate) fn truncated_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, lower: f64, rng: &mut R) -> f64 {
    let log_upper = ln_upper_gamma(shape, rate * lower) - ln_gamma(shape);
    if log_upper > 0.1f64.ln() {
        // plain draws survive often enough
        let g = Gamma::new(shape, 1.0 / rate).expect("valid gamma");
        loop {
            let y = g.sample(rng);
            if y > lower {
                return y;
            }
        }
    }
    // lower lies past the mode; the tangent exponential dominates log-concave tails
    let slope = (rate - (shape - 1.0).max(0.0) / lower).max(1e-300);
    let e = Exp::new(slope).expect("positive slope");
    loop {
        let y = lower + e.sample(rng);
        let log_acc = (shape - 1.0) * ((y / lower).ln() - (y - lower) / lower);
        let u: f64 = rng.random();
        if shape <= 1.0 || u.ln() <= log_acc {
            return y;
        }
    }
}

/// The full conditional of one concentration as a one-dimensional target.
#[derive(Debug, Clone)]
pub struct CcpdStar {
    nu: f64,
    eta: f64,
    n: usize,
    p: usize,
    slice: CoordinateSlice,
}

impl CcpdStar {
    /// Coordinate `j` of a CCPD, the other coordinates fixed at `d_rest`.
    pub fn new(j: usize, d_rest: &[f64], prior: &CCPDParams, ctl: &SeriesControl) -> Result<Self> {
        if j >= prior.p() || d_rest.len() + 1 != prior.p() {
            return Err(Error::Shape(format!(
                "coordinate {j} with {} fixed values for a {}-dimensional prior",
                d_rest.len(),
                prior.p()
            )));
        }
        CcpdStar::from_parts(prior.nu(), prior.eta()[j], prior.n(), d_rest, ctl)
    }

    pub(crate) fn from_parts(nu: f64, eta: f64, n: usize, d_rest: &[f64], ctl: &SeriesControl) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() || !eta.is_finite() {
            return domain(format!("need nu > 0 and finite eta (nu={nu}, eta={eta})"));
        }
        // the mode sits near (n-1) / (2 (1 - eta)) once eta approaches one
        let guess = if eta < 1.0 { 1.5 * (n as f64 - 1.0) / (2.0 * (1.0 - eta).max(1e-6)) } else { 1.0 };
        let slice = CoordinateSlice::with_range(n, d_rest, ctl, guess.clamp(2.0, 1e3))?;
        Ok(CcpdStar { nu, eta, n, p: d_rest.len() + 1, slice })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    fn eval(&mut self, x: f64) -> (f64, f64) {
        self.slice.ensure_range(x);
        let (lf, dlf) = self.slice.eval(x);
        (self.nu * (self.eta * x - lf), self.nu * (self.eta - dlf))
    }

    /// log g(x).
    pub fn log_kernel(&mut self, x: f64) -> f64 {
        self.eval(x).0
    }

    /// The maximizer of g on [0, inf); 0 when eta <= 0.
    pub fn mode(&mut self) -> f64 {
        if self.eta <= 0.0 {
            return 0.0;
        }
        if self.eta >= 1.0 {
            return f64::INFINITY;
        }
        // d log 0F1 / dx rises from 0 towards 1, so the root of dlog g is bracketed
        let mut hi = ((self.n as f64 - 1.0) / (2.0 * (1.0 - self.eta))).max(1.0);
        let (mut lo, mut f_lo) = (0.0, self.nu * self.eta);
        let mut f_hi = self.eval(hi).1;
        while f_hi > 0.0 {
            (lo, f_lo) = (hi, f_hi);
            hi *= 2.0;
            f_hi = self.eval(hi).1;
        }
        // Illinois regula falsi on the decreasing slope
        let mut side = 0;
        let tol = 1e-12 * self.nu;
        for _ in 0..200 {
            let mut x = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
            if !(x > lo && x < hi) {
                x = 0.5 * (lo + hi);
            }
            let fx = self.eval(x).1;
            if fx.abs() <= tol {
                return x;
            }
            if fx > 0.0 {
                (lo, f_lo) = (x, fx);
                if side == 1 {
                    f_hi *= 0.5;
                }
                side = 1;
            } else {
                (hi, f_hi) = (x, fx);
                if side == -1 {
                    f_lo *= 0.5;
                }
                side = -1;
            }
            if hi - lo <= 1e-13 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Build the envelope.
    pub fn proposal(&mut self, cfg: &RejectionConfig) -> Result<ProposalPieces> {
        cfg.validate()?;
        if self.eta >= 1.0 {
            return Err(Error::Improper(format!("eta = {} >= 1: the conditional is not integrable", self.eta)));
        }
        let nu = self.nu;
        let delta = cfg.delta.unwrap_or(1.0 / nu.sqrt());
        let m = self.mode();
        let lgm = self.log_kernel(m);
        let slack = 1e-9 * (1.0 + lgm.abs());
        let floor = lgm - MERGE_GAP;
        let k = (m / delta).floor() as usize;

        // left of the mode bin: right endpoints, merging once below the floor
        let mut left = vec![0.0; k];
        let mut i = k;
        let mut merged_left = 0;
        while i > 0 {
            i -= 1;
            let h = self.log_kernel((i + 1) as f64 * delta);
            left[i] = h;
            if h < floor {
                for l in left.iter_mut().take(i) {
                    *l = h;
                }
                merged_left = i;
                break;
            }
        }
        // right of the mode bin: left endpoints until the floor is crossed
        let mut right = Vec::new();
        let mut cut = k + 1;
        loop {
            let h = self.log_kernel(cut as f64 * delta);
            right.push(h);
            if h < floor || right.len() > 10_000_000 {
                break;
            }
            cut += 1;
        }
        let floor_height = *right.last().expect("nonempty");
        let x_reliable = cut as f64 * delta;

        // M_crit: start past the mode, double until both tail tests pass
        let rate = nu * (1.0 - self.eta);
        let shape = (nu * (self.n as f64 - 1.0) + 2.0) / 2.0;
        let mut mc = m + 10.0 / rate;
        let mut near: Vec<f64> = left.clone();
        near.push(lgm);
        near.extend_from_slice(&right);
        let near_mass = log_sum_exp(&near);
        // `near` covers bins 0..=cut; later bins all carry the floor height
        let body_mass = |nbin: usize| {
            let far = nbin.saturating_sub(cut + 1);
            let mass = if far > 0 { log_sum_exp(&[near_mass, floor_height + (far as f64).ln()]) } else { near_mass };
            mass + delta.ln()
        };
        let height_of = |b: usize| -> f64 {
            if b < k {
                left[b]
            } else if b == k {
                lgm
            } else if b < cut {
                right[b - k - 1]
            } else {
                floor_height
            }
        };
        let mut tail_history = Vec::new();
        let mut accepted = None;
        for _ in 0..MAX_DOUBLINGS {
            let nbin = ((mc / delta).ceil() as usize).max(k + 1);
            let mcrit = nbin as f64 * delta;
            let ratio_ok = mcrit >= x_reliable || self.log_kernel(mcrit) - lgm < cfg.eps_tail.ln();
            let (kind, coeff, tail_rate, log_tail_mass) = if self.n >= 3 {
                let a = self.n as f64 / 2.0;
                let log_k = nu
                    * (0.5 * (a - 1.0) * (self.p as f64 / 4.0).ln()
                        - ln_gamma(a)
                        - (0.5 * mcrit.ln() - mcrit + ln_bessel_i(a - 1.0, mcrit)));
                let mass = log_k + ln_upper_gamma(shape, mcrit * rate) - shape * rate.ln();
                (TailKind::Gamma, log_k, rate, mass)
            } else {
                let (lg, slope) = self.eval(mcrit);
                if slope >= 0.0 {
                    (TailKind::Exponential, lg, 0.0, f64::INFINITY)
                } else {
                    (TailKind::Exponential, lg, -slope, lg - (-slope).ln())
                }
            };
            tail_history.push(log_tail_mass);
            let body = if nbin > cut {
                body_mass(nbin)
            } else {
                log_sum_exp(&(0..nbin).map(height_of).collect::<Vec<_>>()) + delta.ln()
            };
            if ratio_ok && log_tail_mass - body <= cfg.tail_share.ln() {
                accepted = Some((nbin, mcrit, kind, coeff, tail_rate, log_tail_mass, body));
                break;
            }
            mc = 2.0 * mcrit;
        }
        let (nbin, m_crit, tail, tail_log_coeff, gamma_rate, log_tail_mass, body) = accepted.ok_or_else(|| {
            Error::Domain(format!("no tail cutoff found after {MAX_DOUBLINGS} doublings (nu={nu}, eta={})", self.eta))
        })?;
        let bin_heights: Vec<f64> = (0..nbin).map(|b| height_of(b) + slack).collect();
        let log_total = log_sum_exp(&[body + slack, log_tail_mass]);
        let mut probs: Vec<f64> = bin_heights.iter().map(|&h| (h + delta.ln() - log_total).exp()).collect();
        probs.push((log_tail_mass - log_total).exp());
        let mut cum = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &q in &probs {
            acc += q;
            cum.push(acc);
        }
        let last = *cum.last().expect("nonempty");
        for c in cum.iter_mut() {
            *c /= last;
        }
        let pieces = ProposalPieces {
            mode: m,
            log_mode_value: lgm,
            delta,
            nbin,
            m_crit,
            bin_heights,
            tail,
            tail_log_coeff,
            gamma_shape: if tail == TailKind::Gamma { shape } else { 1.0 },
            gamma_rate,
            probs,
            log_total_mass: log_total,
            tail_history,
            cum,
        };
        if cfg.verify {
            // g at j * delta for j in merged_left..=cut, NaN where not evaluated
            let mut ends = vec![f64::NAN; cut + 1 - merged_left];
            for j in merged_left + 1..=k {
                ends[j - merged_left] = left[j - 1];
            }
            for (off, &h) in right.iter().enumerate() {
                ends[k + 1 + off - merged_left] = h;
            }
            self.verify(&pieces, merged_left, x_reliable, &ends)?;
        }
        Ok(pieces)
    }

    // Envelope domination at bin endpoints and midpoints, and at a few tail
    // points where the series is evaluated within its cached range. Merged
    // runs are monotone, so their ends and middle suffice.
    fn verify(&mut self, pc: &ProposalPieces, merged_left: usize, x_reliable: f64, ends: &[f64]) -> Result<()> {
        let top = ((pc.nbin as f64).min((x_reliable / pc.delta).ceil()) as usize).min(merged_left + ends.len() - 1);
        let check_known = |x: f64, lg: f64| -> Result<()> {
            let env = pc.log_envelope(x);
            if lg > env + 1e-12 * (1.0 + lg.abs()) {
                return Err(Error::EnvelopeViolation { x, log_g: lg, log_env: env });
            }
            Ok(())
        };
        let check = |x: f64, this: &mut Self| -> Result<()> {
            let lg = this.log_kernel(x);
            let env = pc.log_envelope(x);
            if lg > env + 1e-12 * (1.0 + lg.abs()) {
                return Err(Error::EnvelopeViolation { x, log_g: lg, log_env: env });
            }
            Ok(())
        };
        // the merged run on the left is one flat piece bounded by its right end
        let run = merged_left as f64 * pc.delta;
        for x in [0.5 * run, run] {
            if x > 0.0 {
                check(x, self)?;
            }
        }
        for j in merged_left..=top {
            let x = j as f64 * pc.delta;
            if x > 0.0 {
                let lg = ends[j - merged_left];
                if lg.is_nan() {
                    check(x, self)?;
                } else {
                    check_known(x, lg)?;
                }
            }
            if j < top {
                check(x + 0.5 * pc.delta, self)?;
            }
        }
        if pc.mode > 0.0 {
            check(pc.mode, self)?;
        }
        for f in [1.0 + 1e-9, 1.25, 1.5, 2.0] {
            let x = pc.m_crit * f;
            if self.p <= 2 || x <= x_reliable {
                check(x, self)?;
            }
        }
        Ok(())
    }

    /// One exact draw and the number of proposals it took.
    pub fn draw<R: Rng + ?Sized>(
        &mut self,
        pieces: &ProposalPieces,
        cfg: &RejectionConfig,
        rng: &mut R,
    ) -> Result<(f64, u64)> {
        let mut tries = 0u64;
        loop {
            tries += 1;
            if tries > cfg.max_rejections {
                return Err(Error::TooManyRejections(cfg.max_rejections));
            }
            let (y, log_env) = pieces.propose(rng);
            if !(y > 0.0) || !y.is_finite() {
                continue;
            }
            let lg = self.log_kernel(y);
            if lg > log_env + 1e-9 * (1.0 + lg.abs()) {
                return Err(Error::EnvelopeViolation { x: y, log_g: lg, log_env });
            }
            let u: f64 = rng.random();
            if u.ln() <= lg - log_env {
                return Ok((y, tries));
            }
        }
    }
}

/// nu eta_j x - nu log 0F1(n/2, diag(x, d_rest)^2 / 4).
pub fn ccpd_star_log_kernel(
    x: f64,
    j: usize,
    d_rest: &[f64],
    prior: &CCPDParams,
    ctl: &SeriesControl,
) -> Result<LogScalar> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("x must be positive, got {x}"));
    }
    Ok(LogScalar::new(CcpdStar::new(j, d_rest, prior, ctl)?.log_kernel(x)))
}

pub fn build_proposal(
    j: usize,
    d_rest: &[f64],
    prior: &CCPDParams,
    cfg: &RejectionConfig,
    ctl: &SeriesControl,
) -> Result<ProposalPieces> {
    CcpdStar::new(j, d_rest, prior, ctl)?.proposal(cfg)
}

/// One exact CCPD*_j draw and the number of proposals consumed.
pub fn sample_ccpd_star<R: Rng + ?Sized>(
    j: usize,
    d_rest: &[f64],
    prior: &CCPDParams,
    cfg: &RejectionConfig,
    ctl: &SeriesControl,
    rng: &mut R,
) -> Result<(f64, u64)> {
    let mut target = CcpdStar::new(j, d_rest, prior, ctl)?;
    let pieces = target.proposal(cfg)?;
    target.draw(&pieces, cfg, rng)
}

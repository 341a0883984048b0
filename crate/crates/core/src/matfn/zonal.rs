//! Partition series for 0F1 with a general diagonal argument.
//!
//! Zonal polynomials of a diagonal argument are built one variable at a time
//! with the Jack-polynomial branching rule (alpha = 2):
//!   C_k(x_1..x_i) = sum over horizontal strips mu of kappa of
//!                   C_mu(x_1..x_{i-1}) x_i^{|kappa|-|mu|} b(kappa, mu).
//! The coefficients b depend only on the pair of partitions, so they are
//! tabulated once per number of variables and shared behind a lock.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::special::{ln_gamma, LogAcc};

const ALPHA: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
struct Branch {
    mu: u32,
    strip: u32,
    coef: f64,
}

#[derive(Clone)]
pub(crate) struct ZonalTable {
    p: usize,
    kmax: usize,
    parts: Vec<u16>,
    deg_start: Vec<usize>,
    len: Vec<u8>,
    branch_start: Vec<usize>,
    branches: Vec<Branch>,
    ln_j: Vec<f64>,
    index: HashMap<Vec<u16>, u32>,
    lnt: LnInt,
}

fn conjugate(kappa: &[u16]) -> Vec<u16> {
    let width = kappa.first().copied().unwrap_or(0) as usize;
    (1..=width as u16).map(|col| kappa.iter().filter(|&&k| k >= col).count() as u16).collect()
}

// Hook lengths with alpha = 2 are positive integers, so their logs come from a table.
#[derive(Clone)]
struct LnInt(Vec<f64>);

impl LnInt {
    fn new(top: usize) -> Self {
        LnInt((0..=top).map(|i| (i as f64).ln()).collect())
    }

    #[inline]
    fn get(&self, v: i64) -> f64 {
        self.0[v as usize]
    }
}

const A: i64 = ALPHA as i64;

fn ln_jack_norm(kappa: &[u16], lnt: &LnInt) -> f64 {
    let kc = conjugate(kappa);
    let mut out = 0.0;
    for (i, &ki) in kappa.iter().enumerate() {
        let row = i as i64 + 1;
        for col in 1..=ki as i64 {
            let c = kc[col as usize - 1] as i64;
            let arm = ki as i64 - col;
            out += lnt.get(c - row + A * (arm + 1)) + lnt.get(c - row + 1 + A * arm);
        }
    }
    out
}

// Branching coefficient for the Jack J normalization. Boxes of mu in rows the
// strip does not touch and columns whose length is unchanged cancel against
// the matching boxes of kappa, so only the remaining boxes are visited.
fn ln_beta(kappa: &[u16], kc: &[u16], mu: &[u16], lnt: &LnInt) -> f64 {
    let mc = conjugate(mu);
    let col_len = |v: &[u16], col: usize| -> i64 { v.get(col - 1).copied().unwrap_or(0) as i64 };
    let mut out = 0.0;
    for (i, (&ki, &mi)) in kappa.iter().zip(mu).enumerate() {
        let row = i as i64 + 1;
        let row_changed = ki != mi;
        for col in 1..=ki as usize {
            let kcol = col_len(kc, col);
            let mcol = col_len(&mc, col);
            let same = kcol == mcol;
            if !row_changed && same {
                continue;
            }
            let arm_k = ki as i64 - col as i64;
            out += if same { lnt.get(kcol - row + A * (arm_k + 1)) } else { lnt.get(kcol - row + 1 + A * arm_k) };
            if col <= mi as usize {
                let arm_m = mi as i64 - col as i64;
                out -= if same { lnt.get(mcol - row + A * (arm_m + 1)) } else { lnt.get(mcol - row + 1 + A * arm_m) };
            }
        }
    }
    out
}

fn partitions_of(k: usize, p: usize, out: &mut Vec<Vec<u16>>) {
    fn rec(rem: usize, slots: usize, cap: usize, cur: &mut Vec<u16>, out: &mut Vec<Vec<u16>>) {
        if slots == 0 {
            if rem == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let hi = rem.min(cap);
        // the remaining slots must be able to absorb the rest
        for first in (0..=hi).rev() {
            if first * slots < rem {
                break;
            }
            cur.push(first as u16);
            rec(rem - first, slots - 1, first, cur, out);
            cur.pop();
        }
    }
    let mut cur = Vec::with_capacity(p);
    rec(k, p, k, &mut cur, out);
}

impl ZonalTable {
    fn new(p: usize) -> Self {
        let mut t = ZonalTable {
            p,
            kmax: 0,
            parts: vec![0; p],
            deg_start: vec![0, 1],
            len: vec![0],
            branch_start: vec![0, 1],
            branches: vec![Branch { mu: 0, strip: 0, coef: 1.0 }],
            ln_j: vec![0.0],
            index: HashMap::new(),
            lnt: LnInt::new(0),
        };
        t.index.insert(vec![0; p], 0);
        t
    }

    fn extend_to(&mut self, kmax: usize) {
        let p = self.p;
        self.lnt = LnInt::new((ALPHA as usize + 1) * (kmax + p) + 2);
        for k in self.kmax + 1..=kmax {
            let mut fresh = Vec::new();
            partitions_of(k, p, &mut fresh);
            for kappa in fresh {
                let idx = self.len.len() as u32;
                self.parts.extend_from_slice(&kappa);
                self.len.push(kappa.iter().filter(|&&x| x > 0).count() as u8);
                self.ln_j.push(ln_jack_norm(&kappa, &self.lnt));
                self.index.insert(kappa.clone(), idx);
                self.push_branches(&kappa, k);
                self.branch_start.push(self.branches.len());
            }
            self.deg_start.push(self.len.len());
        }
        self.kmax = self.kmax.max(kmax);
    }

    fn push_branches(&mut self, kappa: &[u16], k: usize) {
        let p = self.p;
        let ln_jk = ln_jack_norm(kappa, &self.lnt);
        let kc = conjugate(kappa);
        let mut mu = vec![0u16; p];
        // interlacing: kappa[r+1] <= mu[r] <= kappa[r], and mu[p-1] = 0
        #[allow(clippy::too_many_arguments)]
        fn rec(r: usize, kappa: &[u16], kc: &[u16], mu: &mut Vec<u16>, t: &mut ZonalTable, k: usize, ln_jk: f64) {
            let p = kappa.len();
            if r == p {
                let m: usize = mu.iter().map(|&x| x as usize).sum();
                let idx = t.index[&mu[..]];
                let ln_b = ln_beta(kappa, kc, mu, &t.lnt) + (k - m) as f64 * ALPHA.ln()
                    + (m + 1..=k).map(|i| t.lnt.get(i as i64)).sum::<f64>()
                    + t.ln_j[idx as usize]
                    - ln_jk;
                t.branches.push(Branch { mu: idx, strip: (k - m) as u32, coef: ln_b.exp() });
                return;
            }
            let lo = if r + 1 < p { kappa[r + 1] } else { 0 };
            let hi = if r + 1 < p { kappa[r] } else { 0 };
            for v in lo..=hi {
                mu[r] = v;
                rec(r + 1, kappa, kc, mu, t, k, ln_jk);
            }
        }
        rec(0, kappa, &kc, &mut mu, self, k, ln_jk);
    }

    fn part(&self, i: usize) -> &[u16] {
        &self.parts[i * self.p..(i + 1) * self.p]
    }

    // Zonal polynomials in the first `levels` variables of y, for degree k, given
    // lower-degree values already stored in c[level][..].
    fn fill_degree(&self, k: usize, levels: usize, pows: &[Vec<f64>], c: &mut [Vec<f64>]) {
        let (lo, hi) = (self.deg_start[k], self.deg_start[k + 1]);
        for i in lo..hi {
            c[0][i] = if self.len[i] <= 1 { pows[0][k] } else { 0.0 };
        }
        for lvl in 1..levels {
            for i in lo..hi {
                if self.len[i] as usize > lvl + 1 {
                    c[lvl][i] = 0.0;
                    continue;
                }
                let mut acc = 0.0;
                for b in &self.branches[self.branch_start[i]..self.branch_start[i + 1]] {
                    if self.len[b.mu as usize] as usize > lvl {
                        continue;
                    }
                    acc += c[lvl - 1][b.mu as usize] * pows[lvl][b.strip as usize] * b.coef;
                }
                c[lvl][i] = acc;
            }
        }
    }
}

fn tables() -> &'static Mutex<HashMap<usize, Arc<ZonalTable>>> {
    static TABLES: OnceLock<Mutex<HashMap<usize, Arc<ZonalTable>>>> = OnceLock::new();
    TABLES.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared table for p variables covering at least total degree kmax.
pub(crate) fn table(p: usize, kmax: usize) -> Arc<ZonalTable> {
    let mut guard = tables().lock().unwrap_or_else(|e| e.into_inner());
    if let Some(t) = guard.get(&p) {
        if t.kmax >= kmax {
            return Arc::clone(t);
        }
    }
    let mut fresh = match guard.get(&p) {
        Some(t) => (**t).clone(),
        None => ZonalTable::new(p),
    };
    let target = kmax.max(fresh.kmax + 8);
    fresh.extend_to(target);
    let arc = Arc::new(fresh);
    guard.insert(p, Arc::clone(&arc));
    arc
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ZonalEval {
    pub log_f: f64,
    pub degree: usize,
    /// largest relative contribution among the last `window` degrees
    pub diagnostic: f64,
    pub stabilized: bool,
}


// Evaluation workspace whose table grows with the degree actually reached.
struct Work {
    t: Arc<ZonalTable>,
    p: usize,
    a: f64,
    kcap: usize,
    c: Vec<Vec<f64>>,
    w: Vec<f64>,
    pows: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Work {
    fn new(p: usize, a: f64, kcap: usize, y: &[f64]) -> Work {
        let mut wk = Work {
            t: table(p, kcap.min(24)),
            p,
            a,
            kcap,
            c: vec![Vec::new(); y.len()],
            w: Vec::new(),
            pows: Vec::new(),
            y: y.to_vec(),
        };
        wk.refresh();
        wk
    }

    fn refresh(&mut self) {
        let k_top = self.t.kmax.min(self.kcap);
        let n = self.t.deg_start[k_top + 1];
        for row in self.c.iter_mut() {
            row.resize(n, 0.0);
        }
        self.pows = powers(&self.y, k_top);
        let mut cum = vec![vec![0.0; k_top + 1]; self.p];
        for (r, row) in cum.iter_mut().enumerate() {
            let base = self.a - r as f64 / 2.0;
            for j in 0..k_top {
                row[j + 1] = row[j] + (base + j as f64).ln();
            }
        }
        let start = self.w.len();
        let mut k = 0;
        for i in start..n {
            while self.t.deg_start[k + 1] <= i {
                k += 1;
            }
            let kap = self.t.part(i);
            let mut v = -ln_gamma(k as f64 + 1.0);
            for r in 0..self.p {
                v -= cum[r][kap[r] as usize];
            }
            self.w.push(v);
        }
    }

    fn ensure(&mut self, k: usize) {
        if k > self.t.kmax {
            self.t = table(self.p, self.kcap.min(k.max(2 * self.t.kmax)));
            self.refresh();
        }
    }
}

fn powers(y: &[f64], kmax: usize) -> Vec<Vec<f64>> {
    y.iter()
        .map(|&v| {
            let mut row = vec![1.0; kmax + 1];
            for m in 1..=kmax {
                row[m] = row[m - 1] * v;
            }
            row
        })
        .collect()
}

struct Stabilizer {
    window: usize,
    tol: f64,
    recent: Vec<f64>,
}

impl Stabilizer {
    fn push(&mut self, rel: f64) -> bool {
        self.recent.push(rel);
        self.recent.len() >= self.window && self.recent[self.recent.len() - self.window..].iter().all(|&r| r < self.tol)
    }

    fn diagnostic(&self) -> f64 {
        let n = self.recent.len();
        self.recent[n.saturating_sub(self.window)..].iter().cloned().fold(0.0, f64::max)
    }
}

/// log 0F1(a; diag(u)) truncated at total degree `kmax`; stops earlier once the
/// last `window` degree contributions are all below `tol` relative when `early`.
pub(crate) fn eval_general(a: f64, u: &[f64], kmax: usize, window: usize, tol: f64, early: bool) -> ZonalEval {
    let p = u.len();
    let s = u.iter().cloned().fold(0.0, f64::max);
    if s == 0.0 {
        return ZonalEval { log_f: 0.0, degree: 0, diagnostic: 0.0, stabilized: true };
    }
    let y: Vec<f64> = u.iter().map(|&v| v / s).collect();
    let mut wk = Work::new(p, a, kmax, &y);
    let ln_s = s.ln();
    let mut total = LogAcc::new();
    let mut stab = Stabilizer { window, tol, recent: Vec::new() };
    let mut degree = 0;
    let mut stabilized = false;
    for k in 0..=kmax {
        wk.ensure(k);
        let Work { t, c, w, pows, .. } = &mut wk;
        t.fill_degree(k, p, pows, c);
        let mut tk = LogAcc::new();
        for i in t.deg_start[k]..t.deg_start[k + 1] {
            let v = c[p - 1][i];
            if v > 0.0 {
                tk.add(v.ln() + w[i] + k as f64 * ln_s);
            }
        }
        total.add(tk.value());
        degree = k;
        let rel = (tk.value() - total.value()).exp();
        if stab.push(rel) {
            stabilized = true;
            if early {
                break;
            }
        } else {
            stabilized = false;
        }
    }
    ZonalEval { log_f: total.value(), degree, diagnostic: stab.diagnostic(), stabilized }
}

/// 0F1(a; diag(rest, u)) as a power series in the free argument u.
#[derive(Debug, Clone)]
pub(crate) struct Slice {
    scale: f64,
    ln_coef: Vec<f64>,
    pub u_max: f64,
}

impl Slice {
    pub(crate) fn build(a: f64, rest: &[f64], u_max: f64, kcap: usize, window: usize, tol: f64) -> Slice {
        let p = rest.len() + 1;
        let scale = rest.iter().cloned().fold(u_max, f64::max).max(f64::MIN_POSITIVE);
        let ln_s = scale.ln();
        let y: Vec<f64> = rest.iter().map(|&v| v / scale).collect();
        let mut wk = Work::new(p, a, kcap, &y);
        let y_free = u_max / scale;
        let ln_y_free = y_free.ln();
        let mut coef: Vec<LogAcc> = vec![LogAcc::new(); kcap + 1];
        let mut total = LogAcc::new();
        let mut stab = Stabilizer { window, tol, recent: Vec::new() };
        let mut degree = 0;
        let mut stabilized = false;
        let mut lin = vec![0.0f64; kcap + 1];
        for k in 0..=kcap {
            wk.ensure(k);
            let Work { t, c, w, pows, .. } = &mut wk;
            if p > 1 {
                t.fill_degree(k, p - 1, pows, c);
            }
            let (lo, hi) = (t.deg_start[k], t.deg_start[k + 1]);
            // one reference per degree keeps the inner loop in linear scale
            let reference = w[lo..hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max) + k as f64 * ln_s;
            lin[..=k].iter_mut().for_each(|x| *x = 0.0);
            for i in lo..hi {
                let e = (w[i] + k as f64 * ln_s - reference).exp();
                if p == 1 {
                    lin[k] += e;
                    continue;
                }
                for b in &t.branches[t.branch_start[i]..t.branch_start[i + 1]] {
                    lin[b.strip as usize] += e * c[p - 2][b.mu as usize] * b.coef;
                }
            }
            let mut tk = LogAcc::new();
            for (m, &v) in lin[..=k].iter().enumerate() {
                if v > 0.0 {
                    let lt = reference + v.ln();
                    coef[m].add(lt);
                    if m == 0 {
                        tk.add(lt);
                    } else if y_free > 0.0 {
                        tk.add(lt + m as f64 * ln_y_free);
                    }
                }
            }
            total.add(tk.value());
            degree = k;
            let rel = (tk.value() - total.value()).exp();
            if stab.push(rel) {
                stabilized = true;
                break;
            }
        }
        if !stabilized {
            log::debug!("slice series not stabilized by degree {degree} (u_max {u_max:.3e})");
        }
        let ln_coef = coef[..=degree].iter().map(|a| a.value()).collect();
        Slice { scale, ln_coef, u_max }
    }

    /// (log F, d log F / du, d^2 log F / du^2) at free argument u.
    pub(crate) fn eval(&self, u: f64) -> (f64, f64, f64) {
        if u == 0.0 {
            let c0 = self.ln_coef[0];
            let d1 = self.ln_coef.get(1).map(|&c| (c - c0).exp() / self.scale).unwrap_or(0.0);
            return (c0, d1, 0.0);
        }
        let ln_y = (u / self.scale).ln();
        let mut acc = LogAcc::new();
        for (m, &c) in self.ln_coef.iter().enumerate() {
            acc.add(c + m as f64 * ln_y);
        }
        let lf = acc.value();
        let (mut e1, mut e2) = (0.0, 0.0);
        for (m, &c) in self.ln_coef.iter().enumerate() {
            let wt = (c + m as f64 * ln_y - lf).exp();
            let mf = m as f64;
            e1 += wt * mf;
            e2 += wt * mf * (mf - 1.0);
        }
        let d1 = e1 / u;
        (lf, d1, e2 / (u * u) - d1 * d1)
    }
}

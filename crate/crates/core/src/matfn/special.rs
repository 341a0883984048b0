//! Scalar helpers shared by the series code: log-gamma, log-sum-exp
//! accumulation and the log upper incomplete gamma integral.

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Running log-sum-exp over a stream of log terms.
#[derive(Debug, Clone, Copy)]
pub struct LogAcc {
    max: f64,
    sum: f64,
}

impl Default for LogAcc {
    fn default() -> Self {
        Self::new()
    }
}

impl LogAcc {
    pub fn new() -> Self {
        LogAcc { max: f64::NEG_INFINITY, sum: 0.0 }
    }

    #[inline]
    pub fn add(&mut self, t: f64) {
        if t == f64::NEG_INFINITY {
            return;
        }
        if t <= self.max {
            self.sum += (t - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - t).exp() + 1.0;
            self.max = t;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut acc = LogAcc::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// log of the upper incomplete gamma integral, int_x^inf t^(s-1) e^(-t) dt.
pub fn ln_upper_gamma(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return ln_gamma(s);
    }
    if x < s + 1.0 {
        // lower series, then complement
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut k = 1.0;
        loop {
            term *= x / (s + k);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
            k += 1.0;
        }
        let ln_lower = s * x.ln() - x + sum.ln();
        let p = (ln_lower - ln_gamma(s)).exp();
        if p < 0.9 {
            ln_gamma(s) + (-p).ln_1p()
        } else {
            // close to one: fall through to the continued fraction which stays accurate
            ln_upper_gamma_cf(s, x)
        }
    } else {
        ln_upper_gamma_cf(s, x)
    }
}

// Modified Lentz evaluation of the Legendre continued fraction.
fn ln_upper_gamma_cf(s: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - s;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..100_000 {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    s * x.ln() - x + h.ln()
}

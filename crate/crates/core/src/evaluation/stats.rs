//! Two-sample and normality tests used to compare response metrics.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal, StudentsT};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("at most {max} samples supported, got {got}")]
    TooManySamples { max: usize, got: usize },
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("both samples have zero variance")]
    BothZeroVariance,
    #[error("sample contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub extra: BTreeMap<String, f64>,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64) -> Self {
        Self {
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            extra: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, v: f64) -> Self {
        self.extra.insert(key.to_string(), v);
        self
    }
}

fn check(xs: &[f64], need: usize) -> Result<(), StatsError> {
    if xs.len() < need {
        return Err(StatsError::TooFewSamples { need, got: xs.len() });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

// ---------------------------------------------------------------------------
// Shapiro-Wilk (Royston's approximation, algorithm AS R94)

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

pub fn shapiro_wilk(xs: &[f64]) -> Result<TestResult, StatsError> {
    check(xs, 3)?;
    let n = xs.len();
    if n > 5000 {
        return Err(StatsError::TooManySamples { max: 5000, got: n });
    }
    let mut x = xs.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let range = x[n - 1] - x[0];
    if range < 1e-19 {
        return Err(StatsError::ZeroVariance);
    }

    const G: [f64; 2] = [-2.273, 0.459];
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];

    // half the coefficient vector, 1-based like the reference routine
    let nn2 = n / 2;
    let an = n as f64;
    let mut a = vec![0.0; nn2 + 1];
    if n == 3 {
        a[1] = 0.5f64.sqrt();
    } else {
        let norm = std_normal();
        let an25 = an + 0.25;
        let mut summ2 = 0.0;
        for (i, ai) in a.iter_mut().enumerate().skip(1) {
            *ai = norm.inverse_cdf((i as f64 - 0.375) / an25);
            summ2 += *ai * *ai;
        }
        summ2 *= 2.0;
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - a[1] / ssumm2;
        let (i1, fac) = if n > 5 {
            let a2 = -a[2] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * a[1] * a[1] - 2.0 * a[2] * a[2]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            a[2] = a2;
            (3, fac)
        } else {
            (2, ((summ2 - 2.0 * a[1] * a[1]) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        a[1] = a1;
        for ai in a.iter_mut().skip(i1) {
            *ai /= -fac;
        }
    }

    let sign = |v: i64| (v > 0) as i64 as f64 - (v < 0) as i64 as f64;
    let mut sx = x[0] / range;
    let mut sa = -a[1];
    let (mut i, mut j) = (1usize, n - 1);
    while i < n {
        sx += x[i] / range;
        i += 1;
        if i != j {
            sa += sign(i as i64 - j as i64) * a[i.min(j)];
        }
        j -= 1;
    }
    sa /= an;
    sx /= an;

    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let j = n - 1 - i;
        let asa = if i != j {
            sign(i as i64 - j as i64) * a[1 + i.min(j)] - sa
        } else {
            -sa
        };
        let xsx = x[i] / range - sx;
        ssa += asa * asa;
        ssx += xsx * xsx;
        sax += asa * xsx;
    }
    // 1 - W, computed this way to keep precision when W is close to 1
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::FRAC_PI_3;
        let p = (pi6 * (w.sqrt().asin() - stqr)).max(0.0);
        return Ok(TestResult::new(w, p).with("n", an));
    }
    let mut y = w1.ln();
    let (m, s) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return Ok(TestResult::new(w, 1e-99).with("n", an));
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        let lx = an.ln();
        (poly(&C5, lx), poly(&C6, lx).exp())
    };
    let p = std_normal().sf((y - m) / s);
    Ok(TestResult::new(w, p).with("n", an))
}

// ---------------------------------------------------------------------------
// Levene

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeveneCenter {
    #[default]
    Mean,
    Median,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Mean-centered Levene test for equal variances.
pub fn levene(xs: &[f64], ys: &[f64]) -> Result<TestResult, StatsError> {
    levene_with(xs, ys, LeveneCenter::Mean)
}

pub fn levene_with(xs: &[f64], ys: &[f64], center: LeveneCenter) -> Result<TestResult, StatsError> {
    check(xs, 2)?;
    check(ys, 2)?;
    let dev = |s: &[f64]| {
        let c = match center {
            LeveneCenter::Mean => mean(s),
            LeveneCenter::Median => median(s),
        };
        s.iter().map(|v| (v - c).abs()).collect::<Vec<_>>()
    };
    let groups = [dev(xs), dev(ys)];
    let total_n = (xs.len() + ys.len()) as f64;
    let k = 2.0;
    let zbar_all = groups.iter().flatten().sum::<f64>() / total_n;
    let mut between = 0.0;
    let mut within = 0.0;
    for g in &groups {
        let zbar = mean(g);
        between += g.len() as f64 * (zbar - zbar_all).powi(2);
        within += g.iter().map(|z| (z - zbar).powi(2)).sum::<f64>();
    }
    let (d1, d2) = (k - 1.0, total_n - k);
    if between == 0.0 {
        return Ok(TestResult::new(0.0, 1.0).with("df1", d1).with("df2", d2));
    }
    if within == 0.0 {
        return Ok(TestResult::new(f64::INFINITY, 0.0).with("df1", d1).with("df2", d2));
    }
    let w = (d2 / d1) * between / within;
    let f = FisherSnedecor::new(d1, d2).expect("positive degrees of freedom");
    Ok(TestResult::new(w, f.sf(w)).with("df1", d1).with("df2", d2))
}

// ---------------------------------------------------------------------------
// Welch

pub fn welch_t(xs: &[f64], ys: &[f64]) -> Result<TestResult, StatsError> {
    check(xs, 2)?;
    check(ys, 2)?;
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (vx, vy) = (var(xs), var(ys));
    if vx == 0.0 && vy == 0.0 {
        return Err(StatsError::BothZeroVariance);
    }
    let (sx, sy) = (vx / nx, vy / ny);
    let se = (sx + sy).sqrt();
    let t = (mean(xs) - mean(ys)) / se;
    let df = (sx + sy).powi(2) / (sx * sx / (nx - 1.0) + sy * sy / (ny - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = 2.0 * dist.sf(t.abs());
    Ok(TestResult::new(t, p).with("df", df))
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

/// Largest combined size that uses the exact null distribution.
pub const MW_EXACT_MAX: usize = 16;

/// Midranks (1-based) of `values` and the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// Number of rank arrangements giving each U in `0..=n1*n2`, for samples of
/// size `n1` and `n2` without ties.
pub fn mw_null_counts(n1: usize, n2: usize) -> Vec<f64> {
    // counts[m][n][u] built bottom-up: the largest value belongs to x
    // (adding n to U) or to y (adding nothing)
    let max_u = n1 * n2;
    let mut prev: Vec<Vec<f64>> = vec![vec![0.0; max_u + 1]; n2 + 1];
    for row in prev.iter_mut() {
        row[0] = 1.0;
    }
    for _m in 1..=n1 {
        let mut cur: Vec<Vec<f64>> = vec![vec![0.0; max_u + 1]; n2 + 1];
        cur[0][0] = 1.0;
        for n in 1..=n2 {
            for u in 0..=max_u {
                let take_x = if u >= n { prev[n][u - n] } else { 0.0 };
                cur[n][u] = take_x + cur[n - 1][u];
            }
        }
        prev = cur;
    }
    prev[n2].clone()
}

/// Exact two-sided p for a tie-free U statistic.
pub fn mw_exact_p(u_min: f64, n1: usize, n2: usize) -> f64 {
    let counts = mw_null_counts(n1, n2);
    let total: f64 = counts.iter().sum();
    let le: f64 = counts.iter().take(u_min.floor() as usize + 1).sum();
    (2.0 * le / total).min(1.0)
}

pub fn mann_whitney_u(xs: &[f64], ys: &[f64]) -> Result<TestResult, StatsError> {
    check(xs, 1)?;
    check(ys, 1)?;
    let (n1, n2) = (xs.len(), ys.len());
    let combined: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let (ranks, ties) = midranks(&combined);
    let r1: f64 = ranks[..n1].iter().sum();
    let u1 = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let nn = (n1 * n2) as f64;
    let u2 = nn - u1;
    let u = u1.min(u2);

    if n1 + n2 <= MW_EXACT_MAX && ties.is_empty() {
        return Ok(TestResult::new(u, mw_exact_p(u, n1, n2)).with("u1", u1).with("exact", 1.0));
    }
    let n = (n1 + n2) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let sigma = (nn / 12.0 * ((n + 1.0) - tie_term)).sqrt();
    let mu = nn / 2.0;
    let p = if sigma == 0.0 {
        1.0
    } else {
        let z = ((u1 - mu).abs() - 0.5) / sigma;
        (2.0 * std_normal().sf(z)).min(1.0)
    };
    Ok(TestResult::new(u, p).with("u1", u1).with("exact", 0.0))
}

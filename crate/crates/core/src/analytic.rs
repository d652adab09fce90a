//! Closed-form changed-bit expectations for random and biased coset coding,
//! with Monte Carlo estimators of the same quantities.

use std::io::Write;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bits::low_mask;
use crate::error::{config_err, Result};

fn ln_factorials(n: u32) -> Vec<f64> {
    let mut t = vec![0.0; n as usize + 1];
    for i in 1..=n as usize {
        t[i] = t[i - 1] + (i as f64).ln();
    }
    t
}

/// `ln(1 - P(X <= m))` for `m = 0..n`, `X ~ Binomial(n, p)`, `0 < p < 1`.
/// Uses the cumulative side while it is small and the tail side otherwise.
fn ln_survival(n: u32, p: f64) -> Vec<f64> {
    let lf = ln_factorials(n);
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let pmf: Vec<f64> = (0..=n as usize)
        .map(|x| (lf[n as usize] - lf[x] - lf[n as usize - x] + x as f64 * lp + (n as usize - x) as f64 * lq).exp())
        .collect();
    let mut tail = vec![0.0; n as usize + 1];
    for m in (0..n as usize).rev() {
        tail[m] = tail[m + 1] + pmf[m + 1];
    }
    let mut cum = 0.0;
    (0..n as usize)
        .map(|m| {
            cum += pmf[m];
            if cum <= 0.5 {
                (-cum).ln_1p()
            } else {
                tail[m].ln()
            }
        })
        .collect()
}

fn check_query(n: u32, cosets: u64, p_bit: f64) -> Result<()> {
    if n == 0 || n > 1024 {
        return config_err(format!("block length {n} not in 1..=1024"));
    }
    if cosets == 0 {
        return config_err("coset count must be at least 1");
    }
    if !(0.0..=1.0).contains(&p_bit) {
        return config_err(format!("bit change probability {p_bit} not in [0, 1]"));
    }
    Ok(())
}

/// Expected minimum number of changed bits over `cosets` independent
/// candidates, each bit changing with probability `p_bit`. Aux bits are not
/// included.
pub fn e_rcc(n: u32, cosets: u64, p_bit: f64) -> Result<f64> {
    check_query(n, cosets, p_bit)?;
    if p_bit == 0.0 || p_bit == 1.0 {
        return Ok(n as f64 * p_bit);
    }
    if cosets == 1 && p_bit == 0.5 && n <= 120 {
        // sum of exact tail counts over 2^n
        let mut c = 1u128;
        let mut tails = vec![0u128; n as usize + 1];
        let mut counts = vec![1u128];
        for x in 1..=n as u128 {
            c = c * (n as u128 + 1 - x) / x;
            counts.push(c);
        }
        for m in (0..n as usize).rev() {
            tails[m] = tails[m + 1] + counts[m + 1];
        }
        let total: u128 = tails.iter().sum();
        return Ok(total as f64 / 2f64.powi(n as i32));
    }
    let big_n = cosets as f64;
    Ok(ln_survival(n, p_bit).iter().map(|&ls| (big_n * ls).exp()).sum())
}

/// Expected changed bits with `k` sections, each written directly or
/// inverted with one flag bit; the flag is included.
pub fn e_bcc(n: u32, k: u32) -> Result<f64> {
    if k == 0 || n == 0 || !n.is_multiple_of(k) {
        return config_err(format!("{k} sections do not divide {n} bits"));
    }
    let s = n / k;
    let bits = s + 1;
    let lf = ln_factorials(bits);
    let half = n / (2 * k);
    let denom = bits as f64 * 2f64.ln();
    let per_section: f64 = (0..=bits)
        .map(|i| {
            let w = (lf[bits as usize] - lf[i as usize] - lf[(bits - i) as usize] - denom).exp();
            let changes = if i <= half { i } else { bits - i };
            changes as f64 * w
        })
        .sum();
    Ok(k as f64 * per_section)
}

/// Fractional reduction in changed bits for random coset coding with
/// `log2(N) / 2` expected aux changes.
pub fn rcc_reduction(n: u32, cosets: u64) -> Result<f64> {
    let half = n as f64 / 2.0;
    let aux = (cosets as f64).log2() / 2.0;
    Ok((half - e_rcc(n, cosets, 0.5)? - aux) / half)
}

pub fn bcc_reduction(n: u32, k: u32) -> Result<f64> {
    let half = n as f64 / 2.0;
    Ok((half - e_bcc(n, k)?) / half)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticRow {
    pub n: u32,
    pub n_or_k: u64,
    pub technique: &'static str,
    pub expected_changed_bits: f64,
    pub reduction_fraction: f64,
}

/// RCC rows at each `N` and BCC rows at `k = log2 N`.
pub fn comparison_rows(n: u32, coset_counts: &[u64]) -> Result<Vec<AnalyticRow>> {
    let mut rows = Vec::new();
    for &big_n in coset_counts {
        if !big_n.is_power_of_two() || big_n < 2 {
            return config_err(format!("coset count {big_n} must be a power of two >= 2"));
        }
        rows.push(AnalyticRow {
            n,
            n_or_k: big_n,
            technique: "rcc",
            expected_changed_bits: e_rcc(n, big_n, 0.5)?,
            reduction_fraction: rcc_reduction(n, big_n)?,
        });
        let k = big_n.trailing_zeros();
        rows.push(AnalyticRow {
            n,
            n_or_k: k as u64,
            technique: "bcc",
            expected_changed_bits: e_bcc(n, k)?,
            reduction_fraction: bcc_reduction(n, k)?,
        });
    }
    Ok(rows)
}

pub fn write_rows_csv<W: Write>(rows: &[AnalyticRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "n,N_or_k,technique,expected_changed_bits,reduction_fraction")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6}",
            r.n, r.n_or_k, r.technique, r.expected_changed_bits, r.reduction_fraction
        )?;
    }
    Ok(())
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stddev: f64,
    pub trials: u64,
}

impl McEstimate {
    pub fn std_error(&self) -> f64 {
        self.stddev / (self.trials as f64).sqrt()
    }

    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn agrees(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error()
    }
}

const CHUNK: u64 = 1 << 15;

/// Runs `trials` integer-valued trials in fixed chunks, each with its own
/// stream of the root seed, so results do not depend on thread count.
fn run_trials<F>(trials: u64, seed: u64, trial: F) -> McEstimate
where
    F: Fn(&mut ChaCha8Rng) -> u64 + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(chunks.max(1) as usize);
    let (sum, sq) = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let trial = &trial;
                s.spawn(move || {
                    let (mut sum, mut sq) = (0u128, 0u128);
                    let mut c = w as u64;
                    while c < chunks {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(c);
                        let len = CHUNK.min(trials - c * CHUNK);
                        for _ in 0..len {
                            let x = trial(&mut rng) as u128;
                            sum += x;
                            sq += x * x;
                        }
                        c += workers as u64;
                    }
                    (sum, sq)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("trial worker"))
            .fold((0u128, 0u128), |a, b| (a.0 + b.0, a.1 + b.1))
    });
    let t = trials as f64;
    let mean = sum as f64 / t;
    let var = if trials > 1 { (sq as f64 - sum as f64 * mean) / (t - 1.0) } else { 0.0 };
    McEstimate { mean, stddev: var.max(0.0).sqrt(), trials }
}

/// Minimum changed bits over `cosets` fresh uniformly random candidates.
pub fn mc_rcc(n: u32, cosets: u64, trials: u64, seed: u64) -> Result<McEstimate> {
    check_query(n, cosets, 0.5)?;
    if n > 64 || trials == 0 {
        return config_err("Monte Carlo needs n <= 64 and at least one trial");
    }
    let mask = low_mask(n);
    Ok(run_trials(trials, seed, |rng| {
        (0..cosets)
            .map(|_| (rng.random::<u64>() & mask).count_ones() as u64)
            .min()
            .expect("at least one coset")
    }))
}

/// Changed bits with `k` sections each written directly or inverted,
/// counting the flag bit of every section.
pub fn mc_bcc(n: u32, k: u32, trials: u64, seed: u64) -> Result<McEstimate> {
    if k == 0 || !n.is_multiple_of(k) || n > 64 || trials == 0 {
        return config_err("Monte Carlo needs k | n, n <= 64 and at least one trial");
    }
    let s = n / k;
    let mask = low_mask(s + 1);
    Ok(run_trials(trials, seed, |rng| {
        (0..k)
            .map(|_| {
                let i = (rng.random::<u64>() & mask).count_ones();
                i.min(s + 1 - i) as u64
            })
            .sum()
    }))
}

/// Outcome of a stuck-at masking estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SawEstimate {
    /// No stuck bits occurred, so a reduction is undefined.
    NoFaults,
    Estimate {
        /// Mean wrong bits per block without coding.
        baseline: McEstimate,
        /// Mean wrong bits per block with the best of `N` cosets.
        coded: McEstimate,
        reduction: f64,
    },
}

/// Best-of-`N` random cosets against bits stuck at random values with
/// probability `fault_rate`.
pub fn expected_saw_reduction_mc(n: u32, cosets: u64, fault_rate: f64, trials: u64, seed: u64) -> Result<SawEstimate> {
    check_query(n, cosets, fault_rate)?;
    if n > 64 || trials == 0 {
        return config_err("Monte Carlo needs n <= 64 and at least one trial");
    }
    let mask = low_mask(n);
    let stuck = |rng: &mut ChaCha8Rng| -> u64 {
        (0..n).fold(0u64, |acc, b| acc | (rng.random_bool(fault_rate) as u64) << b)
    };
    // candidates are data ^ coset ^ frozen; with uniform cosets each is a
    // uniform word, so only its overlap with the stuck set matters
    let baseline = run_trials(trials, seed, |rng| {
        let s = stuck(rng);
        (rng.random::<u64>() & s & mask).count_ones() as u64
    });
    let coded = run_trials(trials, seed, |rng| {
        let s = stuck(rng);
        (0..cosets)
            .map(|_| (rng.random::<u64>() & s & mask).count_ones() as u64)
            .min()
            .expect("at least one coset")
    });
    if baseline.mean == 0.0 {
        return Ok(SawEstimate::NoFaults);
    }
    Ok(SawEstimate::Estimate { baseline, coded, reduction: 1.0 - coded.mean / baseline.mean })
}

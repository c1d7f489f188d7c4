//! Small numerical helpers shared by the estimators.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// `(mean |x_i|^p)^(1/p)` computed through a log-sum-exp so large `p` cannot overflow.
pub fn empirical_pnorm(xs: &[f64], p: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let logs: Vec<f64> = xs.iter().map(|x| p * x.abs().ln()).collect();
    let lse = log_sum_exp(&logs);
    if lse == f64::NEG_INFINITY {
        return 0.0;
    }
    ((lse - (xs.len() as f64).ln()) / p).exp()
}

pub fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s = compensated_sum(logs.iter().map(|l| (l - max).exp()));
    max + s.ln()
}

/// Delete-one-block jackknife for the empirical p-norm.
///
/// Returns `(estimate, standard_error)`. Samples are split into consecutive blocks of
/// `block` values; a trailing partial block is merged into the last full one.
pub fn jackknife_pnorm(xs: &[f64], p: f64, block: usize) -> (f64, f64) {
    let n = xs.len();
    let estimate = empirical_pnorm(xs, p);
    let nblocks = n / block.max(1);
    if nblocks < 2 || estimate == 0.0 {
        return (estimate, 0.0);
    }
    // Work with |x|^p scaled by the global maximum to keep the leave-one-out
    // differences in range.
    let logs: Vec<f64> = xs.iter().map(|x| p * x.abs().ln()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut block_sums = Vec::with_capacity(nblocks);
    let mut block_lens = Vec::with_capacity(nblocks);
    for b in 0..nblocks {
        let lo = b * block;
        let hi = if b + 1 == nblocks { n } else { lo + block };
        block_sums.push(compensated_sum(logs[lo..hi].iter().map(|l| (l - max).exp())));
        block_lens.push(hi - lo);
    }
    let total = compensated_sum(block_sums.iter().copied());
    let loo: Vec<f64> = block_sums
        .iter()
        .zip(&block_lens)
        .map(|(s, len)| {
            let rest = (total - s).max(0.0);
            let count = (n - len) as f64;
            if rest == 0.0 {
                0.0
            } else {
                ((rest.ln() + max - count.ln()) / p).exp()
            }
        })
        .collect();
    let g = nblocks as f64;
    let mean = compensated_sum(loo.iter().copied()) / g;
    let var = compensated_sum(loo.iter().map(|t| (t - mean) * (t - mean))) * (g - 1.0) / g;
    (estimate, var.sqrt())
}

/// SplitMix64 step; used to derive per-sample seeds from a base seed and a counter.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th sample drawn from `base`.
#[inline]
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Formats a float with 17 significant digits, the CSV convention used throughout.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

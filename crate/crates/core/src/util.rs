//! Small numeric helpers shared across modules.

/// Compensated (Kahan) accumulator. Unit-level sums in the estimators run
/// through this in a fixed order, so results do not drift with accumulation
/// order or optimization level.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(self) -> f64 {
        self.sum
    }
}

/// Kahan sum of an iterator, in iteration order.
pub(crate) fn kahan_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Linear-interpolation quantile of already-sorted data (the common
/// "type 7" rule: the p-quantile sits at rank p·(n−1) counted from zero).
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Formats `x` with `digits` significant digits, the way `%.*g` would:
/// plain notation in a moderate exponent range, scientific outside it,
/// trailing zeros trimmed. Used for all tabular text output.
pub fn format_sig(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if exp < -4 || exp >= digits as i32 {
        let mantissa_digits = digits - 1;
        let formatted = format!("{:.*e}", mantissa_digits, x);
        let (mantissa, exponent) = formatted
            .split_once('e')
            .expect("exponential format always contains 'e'");
        let mantissa = trim_trailing_zeros(mantissa);
        format!("{mantissa}e{exponent}")
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_trailing_zeros(&format!("{:.*}", decimals, x)).to_string()
    };
    s
}

fn trim_trailing_zeros(s: &str) -> &str {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.')
}

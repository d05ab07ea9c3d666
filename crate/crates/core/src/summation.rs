//! Compensated summation.

/// Neumaier's improved Kahan summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = NeumaierSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().collect::<NeumaierSum>().value()
}

/// Sum of an alternating or otherwise cancelling series.
///
/// Terms are added in increasing order of magnitude with compensation. Returns
/// the sum and the condition number `sum |t| / |sum t|` (infinite when the sum
/// cancels to exactly zero).
pub fn cancelling_sum(terms: &[f64]) -> (f64, f64) {
    let mut sorted = terms.to_vec();
    sorted.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let total = compensated_sum(sorted.iter().copied());
    let magnitude = compensated_sum(sorted.iter().map(|t| t.abs()));
    let condition = if total == 0.0 {
        if magnitude == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        magnitude / total.abs()
    };
    (total, condition)
}

/// Mean and standard error of the mean of `values`, both compensated.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    let var = ss / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_small_terms() {
        let s = compensated_sum([1.0, 1e100, 1.0, -1e100]);
        assert_eq!(s, 2.0);
    }

    #[test]
    fn cancelling_sum_reports_condition() {
        let (s, cond) = cancelling_sum(&[3.0, -2.0]);
        assert_eq!(s, 1.0);
        assert_eq!(cond, 5.0);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        let (m, se) = mean_and_stderr(&[2.5; 10]);
        assert_eq!(m, 2.5);
        assert_eq!(se, 0.0);
    }
}

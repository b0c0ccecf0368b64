//! Histograms and distances between them.

use super::MetricError;

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_KL_SMOOTHING: f64 = 1e-6;

/// Uniform-bin histogram on `[lo, hi)`. Values outside the range count in the
/// nearest edge bin, so every sample is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    lo: f64,
    hi: f64,
    counts: Vec<f64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self, MetricError> {
        Self::from_counts(lo, hi, vec![0.0; bins])
    }

    pub fn from_counts(lo: f64, hi: f64, counts: Vec<f64>) -> Result<Self, MetricError> {
        if counts.is_empty() || !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(MetricError::InvalidArgument(format!("bad histogram layout [{lo}, {hi}) with {} bins", counts.len())));
        }
        if counts.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(MetricError::InvalidArgument("histogram counts must be finite and non-negative".into()));
        }
        Ok(Self { lo, hi, counts })
    }

    /// Layout over the data's min/max (one unit wide if they coincide).
    pub fn fit(data: &[f64], bins: usize) -> Result<Self, MetricError> {
        let finite = data.iter().copied().filter(|x| x.is_finite());
        let lo = finite.clone().fold(f64::INFINITY, f64::min);
        let hi = finite.fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            return Err(MetricError::Empty);
        }
        // Nudge the top edge so the maximum lands inside the last bin.
        let hi = if hi > lo { hi + (hi - lo) * 1e-9 } else { lo + 1.0 };
        let mut h = Self::new(lo, hi, bins)?;
        h.extend(data);
        Ok(h)
    }

    /// Empty histogram with this layout, filled with `data`.
    pub fn rebin(&self, data: &[f64]) -> Self {
        let mut h = Self { lo: self.lo, hi: self.hi, counts: vec![0.0; self.counts.len()] };
        h.extend(data);
        h
    }

    pub fn bin_of(&self, x: f64) -> usize {
        let n = self.counts.len();
        let pos = ((x - self.lo) / (self.hi - self.lo) * n as f64).floor();
        if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(n - 1)
        }
    }

    /// Adds finite samples; NaN and infinities are skipped.
    pub fn extend(&mut self, data: &[f64]) {
        for &x in data.iter().filter(|x| x.is_finite()) {
            let b = self.bin_of(x);
            self.counts[b] += 1.0;
        }
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64).collect()
    }

    pub fn density(&self) -> Option<Vec<f64>> {
        let t = self.total();
        (t > 0.0).then(|| self.counts.iter().map(|c| c / t).collect())
    }

    fn same_layout(&self, other: &Self) -> Result<(), MetricError> {
        if self.counts.len() == other.counts.len() && self.lo == other.lo && self.hi == other.hi {
            Ok(())
        } else {
            Err(MetricError::BinMismatch)
        }
    }
}

/// `Σ|f_A(i) − f_A'(i)| / Σ f_A(i)`.
pub fn loss_rate(original: &Histogram, sanitized: &Histogram) -> Result<f64, MetricError> {
    original.same_layout(sanitized)?;
    let total = original.total();
    if total <= 0.0 {
        return Err(MetricError::Empty);
    }
    let l1: f64 = original.counts.iter().zip(&sanitized.counts).map(|(a, b)| (a - b).abs()).sum();
    Ok(l1 / total)
}

/// Total-variation distance between the two normalized histograms.
pub fn stat_loss(f: &Histogram, fhat: &Histogram) -> Result<f64, MetricError> {
    f.same_layout(fhat)?;
    let (p, q) = (f.density().ok_or(MetricError::Empty)?, fhat.density().ok_or(MetricError::Empty)?);
    let l1: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * l1).clamp(0.0, 1.0))
}

/// `KL(p‖q)` in nats. Both histograms are normalized, `smoothing` is added
/// to every bin and the result renormalized.
pub fn kl_divergence(p: &Histogram, q: &Histogram, smoothing: f64) -> Result<f64, MetricError> {
    p.same_layout(q)?;
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(MetricError::InvalidArgument(format!("smoothing must be positive, got {smoothing}")));
    }
    let smooth = |h: &Histogram| -> Result<Vec<f64>, MetricError> {
        let d = h.density().ok_or(MetricError::Empty)?;
        let z = 1.0 + smoothing * d.len() as f64;
        Ok(d.into_iter().map(|x| (x + smoothing) / z).collect())
    };
    let (ps, qs) = (smooth(p)?, smooth(q)?);
    let kl: f64 = ps.iter().zip(&qs).map(|(a, b)| a * (a / b).ln()).sum();
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h(counts: &[f64]) -> Histogram {
        Histogram::from_counts(0.0, counts.len() as f64, counts.to_vec()).unwrap()
    }

    #[test]
    fn loss_rate_cases() {
        assert_eq!(loss_rate(&h(&[10.0, 0.0]), &h(&[5.0, 5.0])).unwrap(), 1.0);
        assert_eq!(loss_rate(&h(&[10.0, 10.0]), &h(&[10.0, 0.0])).unwrap(), 0.5);
        assert_eq!(loss_rate(&h(&[3.0, 4.0]), &h(&[3.0, 4.0])).unwrap(), 0.0);
        assert_eq!(loss_rate(&h(&[1.0]), &h(&[1.0, 0.0])), Err(MetricError::BinMismatch));
        assert_eq!(loss_rate(&h(&[0.0]), &h(&[1.0])), Err(MetricError::Empty));
    }

    #[test]
    fn stat_loss_cases() {
        assert_eq!(stat_loss(&h(&[0.5, 0.5]), &h(&[0.25, 0.75])).unwrap(), 0.25);
        assert_eq!(stat_loss(&h(&[1.0, 0.0]), &h(&[0.0, 4.0])).unwrap(), 1.0);
        assert_eq!(stat_loss(&h(&[2.0, 6.0]), &h(&[1.0, 3.0])).unwrap(), 0.0);
    }

    #[test]
    fn kl_cases() {
        let k = kl_divergence(&h(&[0.5, 0.5]), &h(&[0.25, 0.75]), 1e-12).unwrap();
        let exact = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((k - exact).abs() < 1e-9);
        assert!((k - 0.1438).abs() < 1e-3);
        assert_eq!(kl_divergence(&h(&[1.0, 2.0]), &h(&[1.0, 2.0]), DEFAULT_KL_SMOOTHING).unwrap(), 0.0);
        assert!(kl_divergence(&h(&[1.0, 0.0]), &h(&[0.0, 1.0]), DEFAULT_KL_SMOOTHING).unwrap().is_finite());
        assert!(kl_divergence(&h(&[1.0]), &h(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn fit_and_rebin() {
        let data = [0.5, 1.5, 2.5, 3.5, 4.0];
        let f = Histogram::fit(&data, 4).unwrap();
        assert_eq!(f.total(), 5.0);
        assert_eq!(f.counts()[3], 2.0);
        let moved = f.rebin(&[-100.0, 100.0, f64::NAN]);
        assert_eq!(moved.counts(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(Histogram::fit(&[2.0, 2.0], 3).unwrap().counts(), &[2.0, 0.0, 0.0]);
        assert!(Histogram::fit(&[], 3).is_err());
        assert_eq!(f.edges().len(), 5);
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|n| (prop::collection::vec(0.0f64..10.0, n), prop::collection::vec(0.0f64..10.0, n)))
            .prop_filter("non-empty mass", |(a, b)| a.iter().sum::<f64>() > 0.0 && b.iter().sum::<f64>() > 0.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn gibbs_inequality((a, b) in pair()) {
            let (p, q) = (h(&a), h(&b));
            prop_assert!(kl_divergence(&p, &q, DEFAULT_KL_SMOOTHING).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&p, &p, DEFAULT_KL_SMOOTHING).unwrap().abs() < 1e-12);
            let tv = stat_loss(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&tv));
            prop_assert!((tv - stat_loss(&q, &p).unwrap()).abs() < 1e-12);
        }
    }
}

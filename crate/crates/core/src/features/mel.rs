use super::FeatureError;

/// HTK-style Mel scale: `2595 * log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular filter, stored as weights over a contiguous bin range.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilter {
    pub start_bin: usize,
    pub center_bin: usize,
    pub end_bin: usize,
    /// Center frequency of the Mel point before snapping to a bin.
    pub center_hz: f64,
    /// Weights for bins `start_bin..=end_bin`.
    pub weights: Vec<f64>,
}

impl MelFilter {
    pub fn weight(&self, bin: usize) -> f64 {
        if bin < self.start_bin || bin > self.end_bin {
            0.0
        } else {
            self.weights[bin - self.start_bin]
        }
    }

    pub fn apply(&self, spectrum: &[f64]) -> f64 {
        spectrum[self.start_bin..=self.end_bin]
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| p * w)
            .sum()
    }
}

/// Bank of overlapping triangular filters on the Mel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterBank {
    filters: Vec<MelFilter>,
    n_bins: usize,
}

impl MelFilterBank {
    /// `n_filters + 2` points equally spaced in Mel between `fmin` and `fmax`
    /// are snapped to bins `floor((n_fft + 1) * hz / sample_rate)`; filter `i`
    /// rises from point `i` to a peak of 1 at point `i + 1` and falls to zero at
    /// point `i + 2`.
    pub fn new(
        n_filters: usize,
        n_fft: usize,
        sample_rate: u32,
        fmin: f64,
        fmax: f64,
    ) -> Result<Self, FeatureError> {
        let nyquist = f64::from(sample_rate) / 2.0;
        if n_filters == 0 {
            return Err(FeatureError::InvalidConfig("n_mels must be positive".into()));
        }
        if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
            return Err(FeatureError::InvalidConfig(format!(
                "need 0 <= fmin < fmax <= {nyquist} Hz, got fmin={fmin}, fmax={fmax}"
            )));
        }
        let n_bins = n_fft / 2 + 1;
        let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let step = (mel_hi - mel_lo) / (n_filters + 1) as f64;
        let hz: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(mel_lo + step * i as f64))
            .collect();
        let bins: Vec<usize> = hz
            .iter()
            .map(|&f| {
                let b = ((n_fft + 1) as f64 * f / f64::from(sample_rate)).floor() as usize;
                b.min(n_bins - 1)
            })
            .collect();
        if let Some(i) = bins.windows(2).position(|w| w[0] >= w[1]) {
            return Err(FeatureError::FilterbankTooFine {
                n_filters,
                n_fft,
                point: i + 1,
            });
        }
        let filters = (0..n_filters)
            .map(|i| {
                let (lo, mid, hi) = (bins[i], bins[i + 1], bins[i + 2]);
                let weights = (lo..=hi)
                    .map(|k| {
                        if k <= mid {
                            (k - lo) as f64 / (mid - lo) as f64
                        } else {
                            (hi - k) as f64 / (hi - mid) as f64
                        }
                    })
                    .collect();
                MelFilter {
                    start_bin: lo,
                    center_bin: mid,
                    end_bin: hi,
                    center_hz: hz[i + 1],
                    weights,
                }
            })
            .collect();
        Ok(Self { filters, n_bins })
    }

    pub fn filters(&self) -> &[MelFilter] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Number of spectral bins the bank expects (`n_fft / 2 + 1`).
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Filter energies for one power spectrum.
    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        debug_assert_eq!(spectrum.len(), self.n_bins);
        self.filters.iter().map(|f| f.apply(spectrum)).collect()
    }
}

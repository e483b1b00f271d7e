//! Triangular mel filterbank.

use alloc::vec::Vec;

use num_traits::Float;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * Float::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (Float::powf(10.0, mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone)]
struct Triangle {
    first_bin: usize,
    weights: Vec<f64>,
}

/// `n_filters` unit-peak triangles whose edges are uniformly spaced on the mel
/// scale. Filter `m` rises from edge `m` to its apex at edge `m+1` and falls to
/// zero at edge `m+2`, so each apex sits on the neighbours' base corners.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    edges_hz: Vec<f64>,
    filters: Vec<Triangle>,
    n_bins: usize,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, fft_size: usize, sample_rate_hz: f64, low_hz: f64, high_hz: f64) -> Self {
        let lo = hz_to_mel(low_hz);
        let hi = hz_to_mel(high_hz);
        let edges_hz: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_filters + 1) as f64))
            .collect();
        let n_bins = fft_size / 2 + 1;
        let bin_hz = sample_rate_hz / fft_size as f64;
        let filters = (0..n_filters)
            .map(|m| {
                let (left, apex, right) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
                let mut first_bin = None;
                let mut weights = Vec::new();
                for k in 0..n_bins {
                    let f = k as f64 * bin_hz;
                    let w = if f > left && f < apex {
                        (f - left) / (apex - left)
                    } else if f >= apex && f < right {
                        (right - f) / (right - apex)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first_bin.get_or_insert(k);
                        weights.push(w);
                    } else if first_bin.is_some() {
                        break;
                    }
                }
                Triangle { first_bin: first_bin.unwrap_or(0), weights }
            })
            .collect();
        Self { edges_hz, filters, n_bins }
    }

    pub fn n_filters(&self) -> usize {
        self.filters.len()
    }

    /// Apex frequency of filter `m`.
    pub fn center_hz(&self, m: usize) -> f64 {
        self.edges_hz[m + 1]
    }

    /// `(lower edge, apex, upper edge)` of filter `m` in Hz.
    pub fn band_hz(&self, m: usize) -> (f64, f64, f64) {
        (self.edges_hz[m], self.edges_hz[m + 1], self.edges_hz[m + 2])
    }

    /// Raw (non-log) filter energies.
    pub fn energies(&self, spectrum: &[f64]) -> Vec<f64> {
        assert_eq!(spectrum.len(), self.n_bins);
        self.filters
            .iter()
            .map(|t| {
                t.weights.iter().zip(&spectrum[t.first_bin..]).map(|(w, p)| w * p).sum()
            })
            .collect()
    }

    /// `ln(max(energy, floor))` per filter.
    pub fn log_energies(&self, spectrum: &[f64], floor: f64) -> Vec<f64> {
        self.energies(spectrum).into_iter().map(|e| Float::ln(Float::max(e, floor))).collect()
    }
}

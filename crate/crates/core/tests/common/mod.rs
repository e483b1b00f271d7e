//! Brute-force reference implementations used as test oracles. Nothing here
//! calls into the code paths it checks.

#![allow(dead_code)]

use std::f64::consts::PI;

/// `|X[k]|²`, `k ∈ [0, n/2]`, by the O(n²) DFT definition.
pub fn naive_power_spectrum(signal: &[f64], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in signal.iter().enumerate() {
                let a = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// Orthonormal DCT-II by the double-loop definition.
pub fn naive_dct2(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            let mut acc = 0.0;
            for (i, &v) in x.iter().enumerate() {
                acc += v * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos();
            }
            s * acc
        })
        .collect()
}

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Weight of frequency `f` in triangle `m` of `n_filters` mel-spaced triangles on `[lo, hi]`.
pub fn triangle_weight(m: usize, n_filters: usize, lo: f64, hi: f64, f: f64) -> f64 {
    let edge = |i: usize| inv_mel(mel(lo) + (mel(hi) - mel(lo)) * i as f64 / (n_filters + 1) as f64);
    let (l, c, r) = (edge(m), edge(m + 1), edge(m + 2));
    if f > l && f < c {
        (f - l) / (c - l)
    } else if f >= c && f < r {
        (r - f) / (r - c)
    } else {
        0.0
    }
}

pub fn mel_center(m: usize, n_filters: usize, lo: f64, hi: f64) -> f64 {
    inv_mel(mel(lo) + (mel(hi) - mel(lo)) * (m + 1) as f64 / (n_filters + 1) as f64)
}

/// The default 40×49 MFCC front end written out directly: pre-emphasis 0.97,
/// Hamming window, naive 1024-point DFT, 40 mel triangles on [20, 8000] Hz,
/// `ln(max(e, 1e-10))`, naive orthonormal DCT-II. Frame-major output.
pub fn oracle_mfcc(samples: &[f32]) -> Vec<f64> {
    let (frame, stride, nfft, nf) = (640usize, 320usize, 1024usize, 40usize);
    let x: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        y[n] = if n == 0 { x[0] } else { x[n] - 0.97 * x[n - 1] };
    }
    let n_frames = (x.len() - frame) / stride + 1;
    let mut out = Vec::new();
    for t in 0..n_frames {
        let windowed: Vec<f64> = (0..frame)
            .map(|n| y[t * stride + n] * (0.54 - 0.46 * (2.0 * PI * n as f64 / (frame - 1) as f64).cos()))
            .collect();
        let spec = naive_power_spectrum(&windowed, nfft);
        let logmel: Vec<f64> = (0..nf)
            .map(|m| {
                let e: f64 = spec
                    .iter()
                    .enumerate()
                    .map(|(k, p)| p * triangle_weight(m, nf, 20.0, 8000.0, k as f64 * 16000.0 / nfft as f64))
                    .sum();
                e.max(1e-10).ln()
            })
            .collect();
        out.extend(naive_dct2(&logmel));
    }
    out
}

/// Sliding-window 1-D convolution summing over `(c, j)` in order.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv1d(
    x: &[f64],
    w: &[f64],
    (b_n, c_in, len): (usize, usize, usize),
    (c_out, k): (usize, usize),
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Vec<f64> {
    let out_len = (len + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
    let mut y = vec![0.0; b_n * c_out * out_len];
    for b in 0..b_n {
        for o in 0..c_out {
            for t in 0..out_len {
                let mut acc = 0.0;
                for c in 0..c_in {
                    for j in 0..k {
                        let pos = (t * stride + j * dilation) as isize - padding as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += w[(o * c_in + c) * k + j] * x[(b * c_in + c) * len + pos as usize];
                        }
                    }
                }
                y[(b * c_out + o) * out_len + t] = acc;
            }
        }
    }
    y
}

/// `dist[m][c] = Σ (q − p)²` by double loop.
pub fn naive_sq_dist(q: &[f64], p: &[f64], dim: usize) -> Vec<f64> {
    let (m, c) = (q.len() / dim, p.len() / dim);
    let mut out = Vec::with_capacity(m * c);
    for i in 0..m {
        for j in 0..c {
            let mut s = 0.0;
            for d in 0..dim {
                let diff = q[i * dim + d] - p[j * dim + d];
                s += diff * diff;
            }
            out.push(s);
        }
    }
    out
}

/// Per-label mean rows.
pub fn naive_prototypes(x: &[f64], labels: &[usize], way: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; way * dim];
    let mut counts = vec![0usize; way];
    for (r, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for d in 0..dim {
            out[l * dim + d] += x[r * dim + d];
        }
    }
    for l in 0..way {
        for d in 0..dim {
            out[l * dim + d] /= counts[l] as f64;
        }
    }
    out
}

/// Tiny deterministic generator so oracle inputs do not depend on the crate's RNG plumbing.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }
}

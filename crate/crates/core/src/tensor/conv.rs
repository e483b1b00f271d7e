//! Direct (no im2col) convolution kernels over row-major slices.

use super::Real;

/// `floor((len + 2·padding − dilation·(k − 1) − 1) / stride) + 1`, or `None`
/// when the dilated kernel does not fit.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, dilation: usize, padding: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || dilation == 0 {
        return None;
    }
    let span = dilation * (kernel - 1) + 1;
    let padded = len + 2 * padding;
    if padded < span {
        None
    } else {
        Some((padded - span) / stride + 1)
    }
}

/// Output positions `t` for which `t·stride + offset` lands inside `[0, len)`.
#[inline]
fn valid_range(offset: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset < 0 { ((-offset) + s - 1) / s } else { 0 };
    let last = len as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    let lo = lo as usize;
    let hi = (hi as usize).min(out_len);
    (lo, hi.max(lo))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv1dGeom {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub out_len: usize,
}

impl Conv1dGeom {
    #[inline]
    fn offset(&self, j: usize) -> isize {
        (j * self.dilation) as isize - self.padding as isize
    }
}

pub(crate) fn conv1d_forward<T: Real>(g: &Conv1dGeom, x: &[T], w: &[T], y: &mut [T]) {
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let out = &mut y[(b * g.c_out + o) * g.out_len..][..g.out_len];
            for c in 0..g.c_in {
                let xrow = &x[(b * g.c_in + c) * g.len..][..g.len];
                let wrow = &w[(o * g.c_in + c) * g.kernel..][..g.kernel];
                for (j, &wv) in wrow.iter().enumerate() {
                    let off = g.offset(j);
                    let (lo, hi) = valid_range(off, g.stride, g.len, g.out_len);
                    for (t, acc) in out.iter_mut().enumerate().take(hi).skip(lo) {
                        *acc += wv * xrow[((t * g.stride) as isize + off) as usize];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv1d_backward<T: Real>(
    g: &Conv1dGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let grow = &dy[(b * g.c_out + o) * g.out_len..][..g.out_len];
            for c in 0..g.c_in {
                let xbase = (b * g.c_in + c) * g.len;
                let wbase = (o * g.c_in + c) * g.kernel;
                for j in 0..g.kernel {
                    let off = g.offset(j);
                    let (lo, hi) = valid_range(off, g.stride, g.len, g.out_len);
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = w[wbase + j];
                        for (t, &gv) in grow.iter().enumerate().take(hi).skip(lo) {
                            dx[xbase + ((t * g.stride) as isize + off) as usize] += wv * gv;
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        let mut acc = T::zero();
                        for (t, &gv) in grow.iter().enumerate().take(hi).skip(lo) {
                            acc += x[xbase + ((t * g.stride) as isize + off) as usize] * gv;
                        }
                        dw[wbase + j] += acc;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv2dGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) fn conv2d_forward<T: Real>(g: &Conv2dGeom, x: &[T], w: &[T], y: &mut [T]) {
    let plane_in = g.h * g.w;
    let plane_out = g.out_h * g.out_w;
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let out = &mut y[(b * g.c_out + o) * plane_out..][..plane_out];
            for c in 0..g.c_in {
                let xp = &x[(b * g.c_in + c) * plane_in..][..plane_in];
                let wk = &w[(o * g.c_in + c) * g.kh * g.kw..][..g.kh * g.kw];
                for i in 0..g.kh {
                    let off_h = i as isize - g.padding.0 as isize;
                    let (oh_lo, oh_hi) = valid_range(off_h, g.stride.0, g.h, g.out_h);
                    for j in 0..g.kw {
                        let wv = wk[i * g.kw + j];
                        let off_w = j as isize - g.padding.1 as isize;
                        let (ow_lo, ow_hi) = valid_range(off_w, g.stride.1, g.w, g.out_w);
                        for oh in oh_lo..oh_hi {
                            let ih = ((oh * g.stride.0) as isize + off_h) as usize;
                            let xr = &xp[ih * g.w..][..g.w];
                            let orow = &mut out[oh * g.out_w..][..g.out_w];
                            for ow in ow_lo..ow_hi {
                                orow[ow] += wv * xr[((ow * g.stride.1) as isize + off_w) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward<T: Real>(
    g: &Conv2dGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let plane_in = g.h * g.w;
    let plane_out = g.out_h * g.out_w;
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let gp = &dy[(b * g.c_out + o) * plane_out..][..plane_out];
            for c in 0..g.c_in {
                let xbase = (b * g.c_in + c) * plane_in;
                let wbase = (o * g.c_in + c) * g.kh * g.kw;
                for i in 0..g.kh {
                    let off_h = i as isize - g.padding.0 as isize;
                    let (oh_lo, oh_hi) = valid_range(off_h, g.stride.0, g.h, g.out_h);
                    for j in 0..g.kw {
                        let off_w = j as isize - g.padding.1 as isize;
                        let (ow_lo, ow_hi) = valid_range(off_w, g.stride.1, g.w, g.out_w);
                        let wv = w[wbase + i * g.kw + j];
                        let mut acc = T::zero();
                        for oh in oh_lo..oh_hi {
                            let ih = ((oh * g.stride.0) as isize + off_h) as usize;
                            let grow = &gp[oh * g.out_w..][..g.out_w];
                            let row = xbase + ih * g.w;
                            if let Some(dx) = dx.as_deref_mut() {
                                for ow in ow_lo..ow_hi {
                                    dx[row + ((ow * g.stride.1) as isize + off_w) as usize] += wv * grow[ow];
                                }
                            }
                            if dw.is_some() {
                                for ow in ow_lo..ow_hi {
                                    acc += x[row + ((ow * g.stride.1) as isize + off_w) as usize] * grow[ow];
                                }
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[wbase + i * g.kw + j] += acc;
                        }
                    }
                }
            }
        }
    }
}

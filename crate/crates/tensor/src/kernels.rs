//! Raw slice kernels behind the graph operations.

use crate::scalar::Scalar;

/// Output extent of a convolution along one axis, or `None` if the kernel does
/// not fit the padded input.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// out[m×k] += g[m×n] · b[k×n]ᵀ
pub(crate) fn matmul_a_bt_acc<T: Scalar>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                s = s + gv * bv;
            }
            out[i * k + p] = out[i * k + p] + s;
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · g[m×n]
pub(crate) fn matmul_at_b_acc<T: Scalar>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn cin_per_group(&self) -> usize {
        self.c / self.groups
    }
    fn cout_per_group(&self) -> usize {
        self.o / self.groups
    }

    /// Range of output columns whose input column `ow*stride + kj - pad` is in bounds.
    #[inline]
    fn col_range(&self, kj: usize) -> (usize, usize) {
        // need 0 <= ow*s + kj - p < w
        let lo = if kj >= self.pad {
            0
        } else {
            (self.pad - kj).div_ceil(self.stride)
        };
        let hi_excl = if self.w + self.pad > kj {
            ((self.w + self.pad - kj - 1) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi_excl.max(lo))
    }

    #[inline]
    fn in_row(&self, oh: usize, ki: usize) -> Option<usize> {
        let r = oh * self.stride + ki;
        if r < self.pad || r - self.pad >= self.h {
            None
        } else {
            Some(r - self.pad)
        }
    }

    /// Ungrouped 1×1 stride-1 convolution: a matrix product per image.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0 && self.groups == 1
    }
}

/// Cross-correlation forward pass (no kernel flip).
pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.o * g.oh * g.ow];
    if g.is_pointwise() {
        let hw = g.h * g.w;
        for n in 0..g.n {
            let xs = &x[n * g.c * hw..(n + 1) * g.c * hw];
            let os = &mut out[n * g.o * hw..(n + 1) * g.o * hw];
            matmul_acc(k, xs, os, g.o, g.c, hw);
        }
        return out;
    }
    let cpg = g.cin_per_group();
    let opg = g.cout_per_group();
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    for n in 0..g.n {
        for oc in 0..g.o {
            let grp = oc / opg;
            let oplane = &mut out[(n * g.o + oc) * out_plane..(n * g.o + oc + 1) * out_plane];
            for icg in 0..cpg {
                let ic = grp * cpg + icg;
                let iplane = &x[(n * g.c + ic) * in_plane..(n * g.c + ic + 1) * in_plane];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wv = k[((oc * cpg + icg) * g.kh + ki) * g.kw + kj];
                        let (lo, hi) = g.col_range(kj);
                        if lo >= hi {
                            continue;
                        }
                        for oh in 0..g.oh {
                            let Some(ih) = g.in_row(oh, ki) else { continue };
                            let irow = &iplane[ih * g.w..(ih + 1) * g.w];
                            let orow = &mut oplane[oh * g.ow..(oh + 1) * g.ow];
                            if g.stride == 1 {
                                let start = lo + kj - g.pad;
                                let src = &irow[start..start + (hi - lo)];
                                for (o, &iv) in orow[lo..hi].iter_mut().zip(src) {
                                    *o = *o + wv * iv;
                                }
                            } else {
                                for (ow, o) in orow.iter_mut().enumerate().take(hi).skip(lo) {
                                    *o = *o + wv * irow[ow * g.stride + kj - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input and kernel gradients for [`conv2d_forward`].
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    gout: &[T],
    g: &ConvGeom,
    mut gx: Option<&mut [T]>,
    mut gk: Option<&mut [T]>,
) {
    if g.is_pointwise() {
        let hw = g.h * g.w;
        for n in 0..g.n {
            let xs = &x[n * g.c * hw..(n + 1) * g.c * hw];
            let gs = &gout[n * g.o * hw..(n + 1) * g.o * hw];
            if let Some(gk) = gk.as_deref_mut() {
                matmul_a_bt_acc(gs, xs, gk, g.o, g.c, hw);
            }
            if let Some(gx) = gx.as_deref_mut() {
                matmul_at_b_acc(k, gs, &mut gx[n * g.c * hw..(n + 1) * g.c * hw], g.o, g.c, hw);
            }
        }
        return;
    }
    let cpg = g.cin_per_group();
    let opg = g.cout_per_group();
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    for n in 0..g.n {
        for oc in 0..g.o {
            let grp = oc / opg;
            let goplane = &gout[(n * g.o + oc) * out_plane..(n * g.o + oc + 1) * out_plane];
            for icg in 0..cpg {
                let ic = grp * cpg + icg;
                let ibase = (n * g.c + ic) * in_plane;
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let widx = ((oc * cpg + icg) * g.kh + ki) * g.kw + kj;
                        let wv = k[widx];
                        let (lo, hi) = g.col_range(kj);
                        if lo >= hi {
                            continue;
                        }
                        let mut wacc = T::zero();
                        for oh in 0..g.oh {
                            let Some(ih) = g.in_row(oh, ki) else { continue };
                            let grow = &goplane[oh * g.ow..(oh + 1) * g.ow];
                            let rbase = ibase + ih * g.w;
                            if g.stride == 1 {
                                let start = rbase + lo + kj - g.pad;
                                let len = hi - lo;
                                if gk.is_some() {
                                    let irow = &x[start..start + len];
                                    for (&gv, &iv) in grow[lo..hi].iter().zip(irow) {
                                        wacc = wacc + gv * iv;
                                    }
                                }
                                if let Some(gx) = gx.as_deref_mut() {
                                    let dst = &mut gx[start..start + len];
                                    for (d, &gv) in dst.iter_mut().zip(&grow[lo..hi]) {
                                        *d = *d + wv * gv;
                                    }
                                }
                            } else {
                                for (ow, &gv) in grow.iter().enumerate().take(hi).skip(lo) {
                                    let idx = rbase + ow * g.stride + kj - g.pad;
                                    wacc = wacc + gv * x[idx];
                                    if let Some(gx) = gx.as_deref_mut() {
                                        gx[idx] = gx[idx] + wv * gv;
                                    }
                                }
                            }
                        }
                        if let Some(gk) = gk.as_deref_mut() {
                            gk[widx] = gk[widx] + wacc;
                        }
                    }
                }
            }
        }
    }
}

/// Splits `shape` around `axis` into (outer, axis extent, inner) strides.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward<T: Scalar>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = T::neg_infinity();
            for a in 0..len {
                mx = mx.max(x[base + a * inner]);
            }
            let mut sum = T::zero();
            for a in 0..len {
                let e = (x[base + a * inner] - mx).exp();
                out[base + a * inner] = e;
                sum = sum + e;
            }
            for a in 0..len {
                out[base + a * inner] = out[base + a * inner] / sum;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward<T: Scalar>(y: &[T], gy: &[T], shape: &[usize], axis: usize, gx: &mut [T]) {
    let (outer, len, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for a in 0..len {
                dot = dot + y[base + a * inner] * gy[base + a * inner];
            }
            for a in 0..len {
                let idx = base + a * inner;
                gx[idx] = gx[idx] + y[idx] * (gy[idx] - dot);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

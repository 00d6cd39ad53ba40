// Raw forward/backward kernels on row-major slices. Shape checking happens
// in the tape before these are called.

use serde::{Deserialize, Serialize};

/// Boundary handling for temporal convolution. The payload is the number of
/// frames added on each side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    None,
    Replicate(usize),
    Zero(usize),
}

impl Padding {
    pub fn amount(self) -> usize {
        match self {
            Padding::None => 0,
            Padding::Replicate(p) | Padding::Zero(p) => p,
        }
    }

    /// Source frame for padded position `pos` (which is offset by the pad).
    #[inline]
    fn source(self, pos: isize, len: usize) -> Option<usize> {
        let last = len as isize - 1;
        match self {
            Padding::Replicate(_) => Some(pos.clamp(0, last) as usize),
            Padding::None | Padding::Zero(_) => {
                if pos < 0 || pos > last {
                    None
                } else {
                    Some(pos as usize)
                }
            }
        }
    }
}

pub(crate) fn conv_out_len(t: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = t + 2 * pad;
    if k == 0 || stride == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

pub(crate) struct ConvDims {
    pub t_in: usize,
    pub t_out: usize,
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvDims {
    #[inline]
    fn src(&self, t_out: usize, tap: usize) -> Option<usize> {
        let pos = (t_out * self.stride + tap) as isize - self.padding.amount() as isize;
        self.padding.source(pos, self.t_in)
    }
}

/// x [t_in, batch, c_in], kernel [k, c_in, c_out] -> [t_out, batch, c_out].
pub(crate) fn conv_time_forward(x: &[f64], kernel: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.t_out * d.batch * d.c_out];
    for t in 0..d.t_out {
        for j in 0..d.k {
            let Some(s) = d.src(t, j) else { continue };
            let kj = &kernel[j * d.c_in * d.c_out..(j + 1) * d.c_in * d.c_out];
            for b in 0..d.batch {
                let xr = &x[(s * d.batch + b) * d.c_in..(s * d.batch + b + 1) * d.c_in];
                let o = &mut out[(t * d.batch + b) * d.c_out..(t * d.batch + b + 1) * d.c_out];
                for (ci, &xv) in xr.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let kr = &kj[ci * d.c_out..(ci + 1) * d.c_out];
                    for (ov, &kv) in o.iter_mut().zip(kr) {
                        *ov += xv * kv;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_time_backward(
    x: &[f64],
    kernel: &[f64],
    g: &[f64],
    d: &ConvDims,
    dx: Option<&mut [f64]>,
    dk: Option<&mut [f64]>,
) {
    if let Some(dx) = dx {
        for t in 0..d.t_out {
            for j in 0..d.k {
                let Some(s) = d.src(t, j) else { continue };
                let kj = &kernel[j * d.c_in * d.c_out..(j + 1) * d.c_in * d.c_out];
                for b in 0..d.batch {
                    let gr = &g[(t * d.batch + b) * d.c_out..(t * d.batch + b + 1) * d.c_out];
                    let dxr =
                        &mut dx[(s * d.batch + b) * d.c_in..(s * d.batch + b + 1) * d.c_in];
                    for (ci, dv) in dxr.iter_mut().enumerate() {
                        let kr = &kj[ci * d.c_out..(ci + 1) * d.c_out];
                        *dv += kr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
    if let Some(dk) = dk {
        for t in 0..d.t_out {
            for j in 0..d.k {
                let Some(s) = d.src(t, j) else { continue };
                let dkj = &mut dk[j * d.c_in * d.c_out..(j + 1) * d.c_in * d.c_out];
                for b in 0..d.batch {
                    let gr = &g[(t * d.batch + b) * d.c_out..(t * d.batch + b + 1) * d.c_out];
                    let xr = &x[(s * d.batch + b) * d.c_in..(s * d.batch + b + 1) * d.c_in];
                    for (ci, &xv) in xr.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let row = &mut dkj[ci * d.c_out..(ci + 1) * d.c_out];
                        for (dv, &gv) in row.iter_mut().zip(gr) {
                            *dv += xv * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Contiguous near-equal spans of `t` frames into `bins` groups, remainder
/// frames going to the earliest bins. Returns `(start, len)` per bin.
pub fn pool_spans(t: usize, bins: usize) -> Vec<(usize, usize)> {
    let base = t / bins;
    let rem = t % bins;
    let mut start = 0;
    (0..bins)
        .map(|i| {
            let len = base + usize::from(i < rem);
            let span = (start, len);
            start += len;
            span
        })
        .collect()
}

pub(crate) fn avg_pool_forward(x: &[f64], t: usize, inner: usize, bins: usize) -> Vec<f64> {
    let mut out = vec![0.0; bins * inner];
    for (i, (start, len)) in pool_spans(t, bins).into_iter().enumerate() {
        let o = &mut out[i * inner..(i + 1) * inner];
        for s in start..start + len {
            for (ov, xv) in o.iter_mut().zip(&x[s * inner..(s + 1) * inner]) {
                *ov += xv;
            }
        }
        let inv = 1.0 / len as f64;
        o.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

pub(crate) fn avg_pool_backward(g: &[f64], dx: &mut [f64], t: usize, inner: usize, bins: usize) {
    for (i, (start, len)) in pool_spans(t, bins).into_iter().enumerate() {
        let inv = 1.0 / len as f64;
        let gr = &g[i * inner..(i + 1) * inner];
        for s in start..start + len {
            for (dv, gv) in dx[s * inner..(s + 1) * inner].iter_mut().zip(gr) {
                *dv += gv * inv;
            }
        }
    }
}

/// Endpoint-aligned sample position: (low index, high index, weight of high).
#[inline]
pub(crate) fn interp_position(i: usize, t_in: usize, t_out: usize) -> (usize, usize, f64) {
    if t_in == 1 || t_out == 1 {
        return (0, 0, 0.0);
    }
    let num = i * (t_in - 1);
    let den = t_out - 1;
    let lo = num / den;
    let rem = num % den;
    if rem == 0 || lo + 1 >= t_in {
        (lo, lo, 0.0)
    } else {
        (lo, lo + 1, rem as f64 / den as f64)
    }
}

pub(crate) fn interp_forward(x: &[f64], t_in: usize, inner: usize, t_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; t_out * inner];
    for i in 0..t_out {
        let (lo, hi, w) = interp_position(i, t_in, t_out);
        let o = &mut out[i * inner..(i + 1) * inner];
        let a = &x[lo * inner..(lo + 1) * inner];
        if w == 0.0 {
            o.copy_from_slice(a);
        } else {
            let b = &x[hi * inner..(hi + 1) * inner];
            for ((ov, av), bv) in o.iter_mut().zip(a).zip(b) {
                *ov = (1.0 - w) * av + w * bv;
            }
        }
    }
    out
}

pub(crate) fn interp_backward(g: &[f64], dx: &mut [f64], t_in: usize, inner: usize, t_out: usize) {
    for i in 0..t_out {
        let (lo, hi, w) = interp_position(i, t_in, t_out);
        let gr = &g[i * inner..(i + 1) * inner];
        for (j, gv) in gr.iter().enumerate() {
            dx[lo * inner + j] += (1.0 - w) * gv;
            if w != 0.0 {
                dx[hi * inner + j] += w * gv;
            }
        }
    }
}

/// a [m, k] · b [k, n]
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (ov, bv) in o.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *ov += av * bv;
            }
        }
    }
    out
}

/// da += g · bᵀ,  db += aᵀ · g
pub(crate) fn matmul_backward(
    a: &[f64],
    b: &[f64],
    g: &[f64],
    (m, k, n): (usize, usize, usize),
    da: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    if let Some(da) = da {
        for i in 0..m {
            let gr = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let br = &b[p * n..(p + 1) * n];
                da[i * k + p] += gr.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    if let Some(db) = db {
        for i in 0..m {
            let gr = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (dv, gv) in db[p * n..(p + 1) * n].iter_mut().zip(gr) {
                    *dv += av * gv;
                }
            }
        }
    }
}

/// Per frame: y[t] = adj · x[t], adj [v, v], x [t, v, c].
pub(crate) fn propagate(adj: &[f64], x: &[f64], t: usize, v: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; t * v * c];
    for f in 0..t {
        let xf = &x[f * v * c..(f + 1) * v * c];
        let of = &mut out[f * v * c..(f + 1) * v * c];
        for i in 0..v {
            let o = &mut of[i * c..(i + 1) * c];
            for u in 0..v {
                let a = adj[i * v + u];
                if a == 0.0 {
                    continue;
                }
                for (ov, xv) in o.iter_mut().zip(&xf[u * c..(u + 1) * c]) {
                    *ov += a * xv;
                }
            }
        }
    }
    out
}

pub(crate) fn propagate_backward(
    adj: &[f64],
    x: &[f64],
    g: &[f64],
    (t, v, c): (usize, usize, usize),
    dadj: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
) {
    if let Some(dx) = dx {
        for f in 0..t {
            let gf = &g[f * v * c..(f + 1) * v * c];
            let dxf = &mut dx[f * v * c..(f + 1) * v * c];
            for i in 0..v {
                let gr = &gf[i * c..(i + 1) * c];
                for u in 0..v {
                    let a = adj[i * v + u];
                    if a == 0.0 {
                        continue;
                    }
                    for (dv, gv) in dxf[u * c..(u + 1) * c].iter_mut().zip(gr) {
                        *dv += a * gv;
                    }
                }
            }
        }
    }
    if let Some(dadj) = dadj {
        for f in 0..t {
            let gf = &g[f * v * c..(f + 1) * v * c];
            let xf = &x[f * v * c..(f + 1) * v * c];
            for i in 0..v {
                let gr = &gf[i * c..(i + 1) * c];
                for u in 0..v {
                    let xr = &xf[u * c..(u + 1) * c];
                    dadj[i * v + u] += gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }
}

/// Zero-padded k×k patches: x [n, h, w, c] -> [n, h, w, k*k*c], patch order
/// (dy, dx, channel).
pub(crate) fn unfold2d(x: &[f64], (n, h, w, c): (usize, usize, usize, usize), k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let patch = k * k * c;
    let mut out = vec![0.0; n * h * w * patch];
    for img in 0..n {
        for y in 0..h {
            for xpos in 0..w {
                let base = ((img * h + y) * w + xpos) * patch;
                for dy in 0..k {
                    let sy = y as isize + dy as isize - r;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for dx in 0..k {
                        let sx = xpos as isize + dx as isize - r;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = ((img * h + sy as usize) * w + sx as usize) * c;
                        let dst = base + (dy * k + dx) * c;
                        out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn unfold2d_backward(
    g: &[f64],
    dx_buf: &mut [f64],
    (n, h, w, c): (usize, usize, usize, usize),
    k: usize,
) {
    let r = (k / 2) as isize;
    let patch = k * k * c;
    for img in 0..n {
        for y in 0..h {
            for xpos in 0..w {
                let base = ((img * h + y) * w + xpos) * patch;
                for dy in 0..k {
                    let sy = y as isize + dy as isize - r;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for dx in 0..k {
                        let sx = xpos as isize + dx as isize - r;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = ((img * h + sy as usize) * w + sx as usize) * c;
                        let from = base + (dy * k + dx) * c;
                        for ch in 0..c {
                            dx_buf[src + ch] += g[from + ch];
                        }
                    }
                }
            }
        }
    }
}

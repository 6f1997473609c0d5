//! Same-padded 2-D convolution over CHW `f64` planes.
//!
//! Weights are laid out `[out][in][ky][kx]`. Planes are copied into a
//! zero-bordered layout so every kernel tap becomes one contiguous pass.
//! Every loop runs in a fixed order, so results are bit-reproducible.

/// Geometry shared by the forward and backward passes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvShape {
    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Zero-bordered layout. Output rows are computed at the padded stride; the
/// extra `2 * pad` columns of each row are scratch and get dropped.
#[derive(Clone, Copy)]
struct Padded {
    pad: usize,
    stride: usize,
    /// Length of one padded input plane, including tail slack for the last tap.
    len: usize,
    /// Length of one output plane at the padded stride.
    wide: usize,
}

impl Padded {
    fn new(s: &ConvShape) -> Self {
        let pad = s.dilation * (s.kernel / 2);
        let stride = s.width + 2 * pad;
        Padded {
            pad,
            stride,
            len: (s.height + 2 * pad) * stride + 2 * pad,
            wide: s.height * stride,
        }
    }

    /// Source offset of each tap, in `[ky][kx]` order.
    fn offsets(&self, s: &ConvShape) -> Vec<usize> {
        let mut v = Vec::with_capacity(s.kernel * s.kernel);
        for ky in 0..s.kernel {
            for kx in 0..s.kernel {
                v.push(ky * s.dilation * self.stride + kx * s.dilation);
            }
        }
        v
    }

    /// Copies CHW planes into the bordered layout.
    fn embed(&self, s: &ConvShape, planes: &[f64], channels: usize) -> Vec<f64> {
        let mut out = vec![0.0; channels * self.len];
        for c in 0..channels {
            for y in 0..s.height {
                let src = &planes[c * s.plane() + y * s.width..][..s.width];
                let at = c * self.len + (y + self.pad) * self.stride + self.pad;
                out[at..at + s.width].copy_from_slice(src);
            }
        }
        out
    }
}

/// Runs `$body` through a copy compiled for the widest vector unit present,
/// passing a block length that suits its register file.
/// No fused multiply-add is enabled, so every copy rounds identically.
macro_rules! dispatch {
    ($body:ident($($arg:expr),*)) => {{
        #[cfg(target_arch = "x86_64")]
        {
            #[target_feature(enable = "avx512f")]
            unsafe fn wide512(args: Args<'_>) -> Ret { $body::<32>(args) }
            #[target_feature(enable = "avx2")]
            unsafe fn wide256(args: Args<'_>) -> Ret { $body::<16>(args) }
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: the feature was detected at run time
                return unsafe { wide512(($($arg),*)) };
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: as above
                return unsafe { wide256(($($arg),*)) };
            }
        }
        $body::<8>(($($arg),*))
    }};
}

/// Writes `init + sum(w * src[start + j])` over `terms` into every `acc[j]`.
/// Blocks of outputs stay in registers while the terms stream past; each
/// output still sums its terms in list order.
fn gather(acc: &mut [f64], init: f64, src: &[f64], terms: &[(usize, f64)]) {
    type Args<'a> = (&'a mut [f64], f64, &'a [f64], &'a [(usize, f64)]);
    type Ret = ();
    let n = acc.len();
    assert!(terms.iter().all(|&(start, _)| start + n <= src.len()), "tap outside source");
    dispatch!(gather_body(acc, init, src, terms))
}

#[inline(always)]
fn gather_body<const B: usize>((acc, init, src, terms): (&mut [f64], f64, &[f64], &[(usize, f64)])) {
    let full = acc.len() / B * B;
    let (head, tail) = acc.split_at_mut(full);
    for (blk, out) in head.chunks_exact_mut(B).enumerate() {
        let j = blk * B;
        let mut a = [init; B];
        for &(start, w) in terms {
            // SAFETY: `gather` checked start + acc.len() <= src.len()
            let s = unsafe { &*(src.as_ptr().add(start + j) as *const [f64; B]) };
            for l in 0..B {
                a[l] += w * s[l];
            }
        }
        out.copy_from_slice(&a);
    }
    for (t, out) in tail.iter_mut().enumerate() {
        let j = full + t;
        *out = terms.iter().fold(init, |a, &(start, w)| a + w * src[start + j]);
    }
}

/// Dot product over a fixed number of independent lanes so the loop
/// vectorizes; the lane count, and so the rounding, is the same on every
/// machine.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    type Args<'a> = (&'a [f64], &'a [f64]);
    type Ret = f64;
    dispatch!(dot_body(a, b))
}

#[inline(always)]
fn dot_body<const _BLOCK: usize>((a, b): (&[f64], &[f64])) -> f64 {
    const LANES: usize = 32;
    let mut lanes = [0.0; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for l in 0..width {
            lanes[l] += lanes[l + width];
        }
    }
    lanes[0] + ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>()
}

pub(crate) fn forward(s: ConvShape, input: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let plane = s.plane();
    let k2 = s.kernel * s.kernel;
    debug_assert_eq!(input.len(), s.in_ch * plane);
    debug_assert_eq!(out.len(), s.out_ch * plane);
    let geo = Padded::new(&s);
    let offsets = geo.offsets(&s);
    let padded = geo.embed(&s, input, s.in_ch);
    let mut acc = vec![0.0; geo.wide];
    let mut terms = Vec::with_capacity(s.in_ch * k2);
    for o in 0..s.out_ch {
        terms.clear();
        for i in 0..s.in_ch {
            let wrow = &weights[(o * s.in_ch + i) * k2..][..k2];
            for (&w, &off) in wrow.iter().zip(&offsets) {
                if w != 0.0 {
                    terms.push((i * geo.len + off, w));
                }
            }
        }
        gather(&mut acc, bias[o], &padded, &terms);
        for y in 0..s.height {
            out[o * plane + y * s.width..][..s.width].copy_from_slice(&acc[y * geo.stride..][..s.width]);
        }
    }
}

/// Accumulates weight and bias gradients, and (when `grad_input` is given)
/// writes the gradient with respect to the input.
pub(crate) fn backward(
    s: ConvShape,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_input: Option<&mut [f64]>,
) {
    let plane = s.plane();
    let k2 = s.kernel * s.kernel;
    let geo = Padded::new(&s);
    let offsets = geo.offsets(&s);
    let padded = geo.embed(&s, input, s.in_ch);
    // output gradients at the padded stride with scratch columns zero, each
    // shifted by `reach` so that reversed taps never index below zero
    let reach = 2 * geo.pad * (geo.stride + 1);
    let span = geo.wide + 2 * reach;
    let mut go_wide = vec![0.0; s.out_ch * span];
    for o in 0..s.out_ch {
        let go = &grad_out[o * plane..(o + 1) * plane];
        grad_b[o] += go.iter().sum::<f64>();
        for y in 0..s.height {
            go_wide[o * span + reach + y * geo.stride..][..s.width].copy_from_slice(&go[y * s.width..][..s.width]);
        }
        let g = &go_wide[o * span + reach..][..geo.wide];
        for i in 0..s.in_ch {
            let src = &padded[i * geo.len..(i + 1) * geo.len];
            let base = (o * s.in_ch + i) * k2;
            for (t, &off) in offsets.iter().enumerate() {
                grad_w[base + t] += dot(g, &src[off..off + geo.wide]);
            }
        }
    }
    let Some(gi) = grad_input else { return };
    // input cell (y, x) sits at padded index q = (y + pad) * stride + pad + x and
    // receives w * go[q - off] from every tap
    let centre = geo.pad * (geo.stride + 1);
    let mut acc = vec![0.0; geo.wide];
    let mut terms = Vec::with_capacity(s.out_ch * k2);
    for i in 0..s.in_ch {
        terms.clear();
        for o in 0..s.out_ch {
            let base = (o * s.in_ch + i) * k2;
            for (t, &off) in offsets.iter().enumerate() {
                let w = weights[base + t];
                if w != 0.0 {
                    terms.push((o * span + reach + centre - off, w));
                }
            }
        }
        gather(&mut acc, 0.0, &go_wide, &terms);
        for y in 0..s.height {
            gi[i * plane + y * s.width..][..s.width].copy_from_slice(&acc[y * geo.stride..][..s.width]);
        }
    }
}

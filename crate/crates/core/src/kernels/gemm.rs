use super::conv::{activate, ConvSetup};
use super::{KernelArgs, Scratch};

const BLOCK_K: usize = 128;
const BLOCK_N: usize = 512;

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major. Blocked over k and n so a
/// panel of `b` stays in cache while every row of `a` streams past it.
pub fn gemm(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for n0 in (0..n).step_by(BLOCK_N) {
        let n1 = (n0 + BLOCK_N).min(n);
        for k0 in (0..k).step_by(BLOCK_K) {
            let k1 = (k0 + BLOCK_K).min(k);
            for i in 0..m {
                let crow = &mut c[i * n + n0..i * n + n1];
                let arow = &a[i * k..(i + 1) * k];
                for p in k0..k1 {
                    let av = arow[p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b[p * n + n0..p * n + n1];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv += av * *bv;
                    }
                }
            }
        }
    }
}

/// Unfolds the input planes of group `g` into a `(cin_g·kh·kw) × (oh·ow)`
/// patch matrix, zero where the window hangs over the padding.
pub(super) fn im2col<T: Copy + Default>(s: &ConvSetup, x: &[T], g: usize, patch: &mut [T]) {
    let n = s.oh * s.ow;
    for icg in 0..s.cin_g {
        let plane = &x[(g * s.cin_g + icg) * s.h * s.w..];
        for ky in 0..s.kh {
            for kx in 0..s.kw {
                let row = &mut patch[((icg * s.kh + ky) * s.kw + kx) * n..][..n];
                for oy in 0..s.oh {
                    let dst = &mut row[oy * s.ow..(oy + 1) * s.ow];
                    match s.in_row(oy, ky) {
                        None => dst.fill(T::default()),
                        Some(iy) => {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = match s.in_col(ox, kx) {
                                    Some(ix) => plane[iy * s.w + ix],
                                    None => T::default(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn init_bias(out: &mut [f32], bias: Option<&[f32]>, channels: std::ops::Range<usize>, plane: usize) {
    for (i, oc) in channels.enumerate() {
        out[i * plane..(i + 1) * plane].fill(bias.map_or(0.0, |b| b[oc]));
    }
}

pub(super) fn conv_im2col(args: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], scratch: &mut Scratch) {
    let s = ConvSetup::new(args);
    let w = args.weight_f32(0).expect("f32 weights");
    let bias = args.weight_f32(1);
    let k = s.weights_per_filter();
    let n = s.oh * s.ow;
    let patch = scratch.floats(k * n);
    for g in 0..s.groups {
        im2col(&s, inputs[0], g, patch);
        let oc0 = g * s.cout_g;
        let dst = &mut out[oc0 * n..(oc0 + s.cout_g) * n];
        init_bias(dst, bias, oc0..oc0 + s.cout_g, n);
        gemm(s.cout_g, n, k, &w[oc0 * k..(oc0 + s.cout_g) * k], patch, dst);
    }
    if s.relu {
        out.iter_mut().for_each(|v| *v = activate(*v, true));
    }
}

/// 1×1 stride-1 convolution: the input planes already form the right-hand
/// matrix, so no unfolding is needed.
pub(super) fn conv_pointwise(args: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], _: &mut Scratch) {
    let s = ConvSetup::new(args);
    let w = args.weight_f32(0).expect("f32 weights");
    let n = s.h * s.w;
    init_bias(out, args.weight_f32(1), 0..s.cout, n);
    gemm(s.cout, n, s.cin, w, inputs[0], out);
    if s.relu {
        out.iter_mut().for_each(|v| *v = activate(*v, true));
    }
}

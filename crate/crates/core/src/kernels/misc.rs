use super::conv::activate;
use super::gemm::gemm;
use super::{KernelArgs, Scratch};
use crate::graph::{LayerKind, Layout, Shape};

pub fn chw_to_hwc(src: &[f32], dst: &mut [f32], s: Shape) {
    let plane = s.h * s.w;
    for c in 0..s.c {
        for p in 0..plane {
            dst[p * s.c + c] = src[c * plane + p];
        }
    }
}

pub fn hwc_to_chw(src: &[f32], dst: &mut [f32], s: Shape) {
    let plane = s.h * s.w;
    for p in 0..plane {
        for c in 0..s.c {
            dst[c * plane + p] = src[p * s.c + c];
        }
    }
}

pub(super) fn convert(from: Layout, to: Layout, shape: Shape, src: &[f32], dst: &mut [f32]) {
    match (from, to) {
        (Layout::ChannelMajor, Layout::ChannelMinor) => chw_to_hwc(src, dst, shape),
        (Layout::ChannelMinor, Layout::ChannelMajor) => hwc_to_chw(src, dst, shape),
        _ => dst.copy_from_slice(src),
    }
}

pub(super) fn fully_connected(args: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], _: &mut Scratch) {
    let w = args.weight_f32(0).expect("f32 weights");
    let n_in = args.input().numel();
    let n_out = args.output.numel();
    match args.weight_f32(1) {
        Some(b) => out.copy_from_slice(&b[..n_out]),
        None => out.fill(0.0),
    }
    gemm(n_out, 1, n_in, w, inputs[0], out);
    if args.node.fused_relu {
        out.iter_mut().for_each(|v| *v = activate(*v, true));
    }
}

pub(super) fn relu(_: &KernelArgs, data: &mut [f32]) {
    data.iter_mut().for_each(|v| *v = activate(*v, true));
}

fn per_channel(args: &KernelArgs, data: &mut [f32], mul: impl Fn(usize) -> f32, add: impl Fn(usize) -> f32) {
    let s = args.input().shape;
    let plane = s.h * s.w;
    for c in 0..s.c {
        let (m, a) = (mul(c), add(c));
        data[c * plane..(c + 1) * plane]
            .iter_mut()
            .for_each(|v| *v = *v * m + a);
    }
}

pub(super) fn batch_norm(args: &KernelArgs, data: &mut [f32]) {
    let LayerKind::BatchNorm { epsilon } = args.node.kind else {
        unreachable!()
    };
    let mean = args.weight_f32(0).expect("f32 mean");
    let var = args.weight_f32(1).expect("f32 variance");
    let inv = |c: usize| 1.0 / (var[c] + epsilon).sqrt();
    per_channel(args, data, inv, |c| -mean[c] * inv(c));
}

pub(super) fn scale(args: &KernelArgs, data: &mut [f32]) {
    let gamma = args.weight_f32(0).expect("f32 gamma");
    let beta = args.weight_f32(1).expect("f32 beta");
    per_channel(args, data, |c| gamma[c], |c| beta[c]);
}

pub(super) fn average_pool(args: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], _: &mut Scratch) {
    let LayerKind::AveragePool(p) = args.node.kind else {
        unreachable!()
    };
    let s = args.input().shape;
    let o = args.output.shape;
    let x = inputs[0];
    let (kh, kw, sh, sw) = if p.global {
        (s.h, s.w, 1, 1)
    } else {
        (p.kh, p.kw, p.stride_h, p.stride_w)
    };
    let norm = 1.0 / (kh * kw) as f32;
    for c in 0..s.c {
        let plane = &x[c * s.h * s.w..(c + 1) * s.h * s.w];
        for oy in 0..o.h {
            for ox in 0..o.w {
                let mut acc = 0.0f32;
                for ky in 0..kh {
                    let row = &plane[(oy * sh + ky) * s.w + ox * sw..][..kw];
                    acc += row.iter().sum::<f32>();
                }
                out[(c * o.h + oy) * o.w + ox] = acc * norm;
            }
        }
    }
}

pub(super) fn flatten(_: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], _: &mut Scratch) {
    out.copy_from_slice(inputs[0]);
}

/// Softmax over the channel axis at every spatial position.
pub(super) fn softmax(args: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], _: &mut Scratch) {
    let desc = args.input();
    let s = desc.shape;
    let plane = s.h * s.w;
    let (cstride, pstride) = match desc.layout {
        Layout::ChannelMajor => (plane, 1),
        Layout::ChannelMinor => (1, s.c),
    };
    let x = inputs[0];
    for p in 0..plane {
        let idx = |c: usize| p * pstride + c * cstride;
        let max = (0..s.c).map(|c| x[idx(c)]).fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for c in 0..s.c {
            let e = (x[idx(c)] - max).exp();
            out[idx(c)] = e;
            sum += e as f64;
        }
        let inv = 1.0 / sum;
        for c in 0..s.c {
            out[idx(c)] = (out[idx(c)] as f64 * inv) as f32;
        }
    }
}

pub(super) fn add(_: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], _: &mut Scratch) {
    out.copy_from_slice(inputs[0]);
    for x in &inputs[1..] {
        out.iter_mut().zip(x.iter()).for_each(|(o, v)| *o += *v);
    }
}

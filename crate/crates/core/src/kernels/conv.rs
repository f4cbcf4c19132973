use super::{KernelArgs, Scratch};
use crate::graph::{conv_geometry, LayerKind};

/// Resolved convolution geometry shared by all convolution kernels.
#[derive(Debug, Clone, Copy)]
pub(super) struct ConvSetup {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub oh: usize,
    pub ow: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub groups: usize,
    pub cin_g: usize,
    pub cout_g: usize,
    pub relu: bool,
}

impl ConvSetup {
    pub fn new(args: &KernelArgs) -> Self {
        let LayerKind::Convolution(p) = args.node.kind else {
            panic!("convolution kernel bound to {:?}", args.node.kind.op());
        };
        let x = args.input().shape;
        let g = conv_geometry(&p, x, args.node.id).expect("shapes were inferred");
        ConvSetup {
            cin: x.c,
            h: x.h,
            w: x.w,
            cout: p.out_channels,
            oh: g.out_h,
            ow: g.out_w,
            kh: p.kh,
            kw: p.kw,
            sh: p.stride_h,
            sw: p.stride_w,
            pad_top: g.pad_top,
            pad_left: g.pad_left,
            groups: p.groups,
            cin_g: x.c / p.groups,
            cout_g: p.out_channels / p.groups,
            relu: args.node.fused_relu,
        }
    }

    /// Input row for output row `oy` and kernel row `ky`, if inside the image.
    #[inline]
    pub fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.sh + ky).checked_sub(self.pad_top).filter(|r| *r < self.h)
    }

    #[inline]
    pub fn in_col(&self, ox: usize, kx: usize) -> Option<usize> {
        (ox * self.sw + kx).checked_sub(self.pad_left).filter(|c| *c < self.w)
    }

    pub fn weights_per_filter(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }
}

#[inline]
pub(super) fn activate(v: f32, relu: bool) -> f32 {
    if relu && v < 0.0 {
        0.0
    } else {
        v
    }
}

/// Plain nested-loop convolution over CHW tensors.
pub(super) fn direct(args: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], _: &mut Scratch) {
    let s = ConvSetup::new(args);
    let x = inputs[0];
    let w = args.weight_f32(0).expect("f32 weights");
    let bias = args.weight_f32(1);
    let per_filter = s.weights_per_filter();
    for oc in 0..s.cout {
        let g = oc / s.cout_g;
        let filt = &w[oc * per_filter..(oc + 1) * per_filter];
        let b = bias.map_or(0.0, |b| b[oc]);
        for oy in 0..s.oh {
            for ox in 0..s.ow {
                let mut acc = b;
                for icg in 0..s.cin_g {
                    let plane = &x[(g * s.cin_g + icg) * s.h * s.w..];
                    for ky in 0..s.kh {
                        let Some(iy) = s.in_row(oy, ky) else { continue };
                        for kx in 0..s.kw {
                            let Some(ix) = s.in_col(ox, kx) else { continue };
                            acc += filt[(icg * s.kh + ky) * s.kw + kx] * plane[iy * s.w + ix];
                        }
                    }
                }
                out[(oc * s.oh + oy) * s.ow + ox] = activate(acc, s.relu);
            }
        }
    }
}

/// Per-channel convolution for `groups == in == out channels`, accumulating
/// whole output rows per kernel tap.
pub(super) fn depthwise(args: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], _: &mut Scratch) {
    let s = ConvSetup::new(args);
    let x = inputs[0];
    let w = args.weight_f32(0).expect("f32 weights");
    let bias = args.weight_f32(1);
    let taps = s.kh * s.kw;
    for c in 0..s.cout {
        let plane = &x[c * s.h * s.w..(c + 1) * s.h * s.w];
        let dst = &mut out[c * s.oh * s.ow..(c + 1) * s.oh * s.ow];
        dst.fill(bias.map_or(0.0, |b| b[c]));
        let filt = &w[c * taps..(c + 1) * taps];
        for ky in 0..s.kh {
            for kx in 0..s.kw {
                let wv = filt[ky * s.kw + kx];
                for oy in 0..s.oh {
                    let Some(iy) = s.in_row(oy, ky) else { continue };
                    let src = &plane[iy * s.w..(iy + 1) * s.w];
                    let row = &mut dst[oy * s.ow..(oy + 1) * s.ow];
                    for (ox, o) in row.iter_mut().enumerate() {
                        if let Some(ix) = s.in_col(ox, kx) {
                            *o += wv * src[ix];
                        }
                    }
                }
            }
        }
        if s.relu {
            dst.iter_mut().for_each(|v| *v = activate(*v, true));
        }
    }
}

/// Direct convolution over HWC (channel-minor) tensors.
pub(super) fn direct_hwc(args: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], _: &mut Scratch) {
    let s = ConvSetup::new(args);
    let x = inputs[0];
    let w = args.weight_f32(0).expect("f32 weights");
    let bias = args.weight_f32(1);
    let per_filter = s.weights_per_filter();
    for oy in 0..s.oh {
        for ox in 0..s.ow {
            let pix = &mut out[(oy * s.ow + ox) * s.cout..(oy * s.ow + ox + 1) * s.cout];
            for (oc, o) in pix.iter_mut().enumerate() {
                let g = oc / s.cout_g;
                let filt = &w[oc * per_filter..(oc + 1) * per_filter];
                let mut acc = bias.map_or(0.0, |b| b[oc]);
                for ky in 0..s.kh {
                    let Some(iy) = s.in_row(oy, ky) else { continue };
                    for kx in 0..s.kw {
                        let Some(ix) = s.in_col(ox, kx) else { continue };
                        let src = &x[(iy * s.w + ix) * s.cin + g * s.cin_g..];
                        for icg in 0..s.cin_g {
                            acc += filt[(icg * s.kh + ky) * s.kw + kx] * src[icg];
                        }
                    }
                }
                *o = activate(acc, s.relu);
            }
        }
    }
}

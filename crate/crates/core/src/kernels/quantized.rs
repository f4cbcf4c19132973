//! Symmetric integer convolution / fully connected kernels.
//!
//! Activations travel between layers as f32. A quantized layer quantizes its
//! input with `input_scale`, accumulates integer products, requantizes the
//! accumulator with `input_scale·weight_scale/output_scale` to output codes and
//! hands on `code·output_scale`. Int8 accumulates in 32 bits; int16 products
//! can exceed that over large fan-in, so it accumulates in 64 bits.

use std::ops::{AddAssign, Mul};

use super::conv::ConvSetup;
use super::gemm::im2col;
use super::{KernelArgs, Scratch};
use crate::graph::{LayerKind, TensorData};

/// Round half away from zero, then saturate to `±qmax`.
#[inline]
pub fn quantize_value(x: f32, scale: f32, qmax: i32) -> i32 {
    let q = (x as f64 / scale as f64).round();
    q.clamp(-(qmax as f64), qmax as f64) as i32
}

trait Accum: Copy + Default + AddAssign + Mul<Output = Self> + From<i32> + Into<i64> {}
impl Accum for i32 {}
impl Accum for i64 {}

fn run<W, A>(args: &KernelArgs, codes: &[W], inputs: &[&[f32]], out: &mut [f32], scratch: &mut Scratch)
where
    W: Copy + Into<i32>,
    A: Accum,
{
    let (scheme, q) = args.quant.expect("quantized kernel bound without scales");
    let qmax = scheme.qmax();
    let x = inputs[0];
    let bias = args.weight_f32(1);

    let n_in = x.len();
    scratch.i.clear();
    scratch.i.extend(x.iter().map(|v| quantize_value(*v, q.input_scale, qmax)));

    // (rows of weights, columns of the right-hand matrix, reduction length, groups)
    let (cout_g, n, k, groups, conv) = match args.node.kind {
        LayerKind::Convolution(_) => {
            let s = ConvSetup::new(args);
            (s.cout_g, s.oh * s.ow, s.weights_per_filter(), s.groups, Some(s))
        }
        LayerKind::FullyConnected { out_features } => (out_features, 1, n_in, 1, None),
        _ => unreachable!(),
    };

    let mult = q.input_scale as f64 * q.weight_scale as f64 / q.output_scale as f64;
    let relu = args.node.fused_relu;
    let mut patch: Vec<i32> = Vec::new();
    let mut acc: Vec<A> = vec![A::default(); n];
    for g in 0..groups {
        let rhs: &[i32] = match &conv {
            Some(s) => {
                patch.resize(k * n, 0);
                im2col(s, &scratch.i[..n_in], g, &mut patch);
                &patch
            }
            None => &scratch.i[..n_in],
        };
        for ocg in 0..cout_g {
            let oc = g * cout_g + ocg;
            acc.fill(A::default());
            let filt = &codes[oc * k..(oc + 1) * k];
            for (p, wv) in filt.iter().enumerate() {
                let wv = A::from((*wv).into());
                let row = &rhs[p * n..(p + 1) * n];
                for (a, xv) in acc.iter_mut().zip(row) {
                    *a += wv * A::from(*xv);
                }
            }
            let b = bias.map_or(0.0, |b| b[oc] as f64 / q.output_scale as f64);
            for (j, a) in acc.iter().enumerate() {
                let a: i64 = (*a).into();
                let mut code = (a as f64 * mult + b).round();
                if relu && code < 0.0 {
                    code = 0.0;
                }
                let code = code.clamp(-(qmax as f64), qmax as f64);
                out[oc * n + j] = (code * q.output_scale as f64) as f32;
            }
        }
    }
}

pub(super) fn gemm_i8(args: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], scratch: &mut Scratch) {
    match &args.weights[0].data {
        TensorData::I8(codes) => run::<i8, i32>(args, codes, inputs, out, scratch),
        _ => panic!("gemm_i8 bound to non-int8 weights"),
    }
}

pub(super) fn gemm_i16(args: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], scratch: &mut Scratch) {
    match &args.weights[0].data {
        TensorData::I16(codes) => run::<i16, i64>(args, codes, inputs, out, scratch),
        _ => panic!("gemm_i16 bound to non-int16 weights"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_away_from_zero_and_saturates() {
        assert_eq!(quantize_value(2.5, 1.0, 127), 3);
        assert_eq!(quantize_value(-2.5, 1.0, 127), -3);
        assert_eq!(quantize_value(1000.0, 1.0, 127), 127);
        assert_eq!(quantize_value(-1000.0, 1.0, 127), -127);
    }
}

//! Winograd F(2×2, 3×3) convolution.
//!
//! Each 2×2 output tile is computed from a 4×4 input tile as
//! `Y = Aᵀ [Σ_c (G g Gᵀ) ⊙ (Bᵀ d B)] A`. The elementwise products over input
//! channels become 16 independent GEMMs over (out channels × tiles).

use super::conv::{activate, ConvSetup};
use super::gemm::gemm;
use super::{KernelArgs, Scratch};

/// `G g Gᵀ` for one 3×3 filter, row-major 4×4.
pub(super) fn transform_filter(g: &[f32]) -> [f32; 16] {
    // rows of G g (4×3)
    let mut gg = [0.0f32; 12];
    for c in 0..3 {
        let (a, b, d) = (g[c], g[3 + c], g[6 + c]);
        gg[c] = a;
        gg[3 + c] = 0.5 * (a + b + d);
        gg[6 + c] = 0.5 * (a - b + d);
        gg[9 + c] = d;
    }
    let mut u = [0.0f32; 16];
    for r in 0..4 {
        let (a, b, d) = (gg[r * 3], gg[r * 3 + 1], gg[r * 3 + 2]);
        u[r * 4] = a;
        u[r * 4 + 1] = 0.5 * (a + b + d);
        u[r * 4 + 2] = 0.5 * (a - b + d);
        u[r * 4 + 3] = d;
    }
    u
}

/// `Bᵀ d B` for one 4×4 input tile.
pub(super) fn transform_input(d: &[f32; 16]) -> [f32; 16] {
    let mut t = [0.0f32; 16];
    for c in 0..4 {
        let (d0, d1, d2, d3) = (d[c], d[4 + c], d[8 + c], d[12 + c]);
        t[c] = d0 - d2;
        t[4 + c] = d1 + d2;
        t[8 + c] = d2 - d1;
        t[12 + c] = d1 - d3;
    }
    let mut v = [0.0f32; 16];
    for r in 0..4 {
        let (t0, t1, t2, t3) = (t[r * 4], t[r * 4 + 1], t[r * 4 + 2], t[r * 4 + 3]);
        v[r * 4] = t0 - t2;
        v[r * 4 + 1] = t1 + t2;
        v[r * 4 + 2] = t2 - t1;
        v[r * 4 + 3] = t1 - t3;
    }
    v
}

/// `Aᵀ m A`, giving the 2×2 output tile.
pub(super) fn transform_output(m: &[f32; 16]) -> [f32; 4] {
    let mut t = [0.0f32; 8];
    for c in 0..4 {
        let (m0, m1, m2, m3) = (m[c], m[4 + c], m[8 + c], m[12 + c]);
        t[c] = m0 + m1 + m2;
        t[4 + c] = m1 - m2 - m3;
    }
    let mut y = [0.0f32; 4];
    for r in 0..2 {
        let (t0, t1, t2, t3) = (t[r * 4], t[r * 4 + 1], t[r * 4 + 2], t[r * 4 + 3]);
        y[r * 2] = t0 + t1 + t2;
        y[r * 2 + 1] = t1 - t2 - t3;
    }
    y
}

pub(super) fn conv_winograd(args: &KernelArgs, inputs: &[&[f32]], out: &mut [f32], scratch: &mut Scratch) {
    let s = ConvSetup::new(args);
    debug_assert!(s.kh == 3 && s.kw == 3 && s.sh == 1 && s.sw == 1 && s.groups == 1);
    let x = inputs[0];
    let w = args.weight_f32(0).expect("f32 weights");
    let bias = args.weight_f32(1);
    let (tiles_h, tiles_w) = (s.oh.div_ceil(2), s.ow.div_ceil(2));
    let tiles = tiles_h * tiles_w;

    let u_len = 16 * s.cout * s.cin;
    let v_len = 16 * s.cin * tiles;
    let m_len = 16 * s.cout * tiles;
    let buf = scratch.floats(u_len + v_len + m_len);
    let (u, rest) = buf.split_at_mut(u_len);
    let (v, m) = rest.split_at_mut(v_len);

    for oc in 0..s.cout {
        for ic in 0..s.cin {
            let t = transform_filter(&w[(oc * s.cin + ic) * 9..][..9]);
            for (e, val) in t.iter().enumerate() {
                u[(e * s.cout + oc) * s.cin + ic] = *val;
            }
        }
    }

    for ic in 0..s.cin {
        let plane = &x[ic * s.h * s.w..(ic + 1) * s.h * s.w];
        for ty in 0..tiles_h {
            for tx in 0..tiles_w {
                let mut d = [0.0f32; 16];
                for r in 0..4 {
                    let Some(iy) = (2 * ty + r).checked_sub(s.pad_top).filter(|y| *y < s.h) else {
                        continue;
                    };
                    for c in 0..4 {
                        if let Some(ix) = (2 * tx + c).checked_sub(s.pad_left).filter(|x| *x < s.w) {
                            d[r * 4 + c] = plane[iy * s.w + ix];
                        }
                    }
                }
                let t = transform_input(&d);
                let tile = ty * tiles_w + tx;
                for (e, val) in t.iter().enumerate() {
                    v[(e * s.cin + ic) * tiles + tile] = *val;
                }
            }
        }
    }

    m.fill(0.0);
    for e in 0..16 {
        gemm(
            s.cout,
            tiles,
            s.cin,
            &u[e * s.cout * s.cin..(e + 1) * s.cout * s.cin],
            &v[e * s.cin * tiles..(e + 1) * s.cin * tiles],
            &mut m[e * s.cout * tiles..(e + 1) * s.cout * tiles],
        );
    }

    for oc in 0..s.cout {
        let b = bias.map_or(0.0, |b| b[oc]);
        for ty in 0..tiles_h {
            for tx in 0..tiles_w {
                let tile = ty * tiles_w + tx;
                let mut mt = [0.0f32; 16];
                for (e, val) in mt.iter_mut().enumerate() {
                    *val = m[(e * s.cout + oc) * tiles + tile];
                }
                let y = transform_output(&mt);
                for r in 0..2 {
                    let oy = 2 * ty + r;
                    if oy >= s.oh {
                        continue;
                    }
                    for c in 0..2 {
                        let ox = 2 * tx + c;
                        if ox < s.ow {
                            out[(oc * s.oh + oy) * s.ow + ox] = activate(y[r * 2 + c] + b, s.relu);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tile_matches_correlation() {
        let g: Vec<f32> = (0..9).map(|i| i as f32 * 0.25 - 1.0).collect();
        let d: [f32; 16] = std::array::from_fn(|i| ((i * 5) % 7) as f32 - 3.0);
        let u = transform_filter(&g);
        let v = transform_input(&d);
        let mut prod = [0.0f32; 16];
        for i in 0..16 {
            prod[i] = u[i] * v[i];
        }
        let y = transform_output(&prod);
        for oy in 0..2 {
            for ox in 0..2 {
                let mut want = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        want += g[ky * 3 + kx] * d[(oy + ky) * 4 + ox + kx];
                    }
                }
                assert!((y[oy * 2 + ox] - want).abs() < 1e-5, "{} vs {}", y[oy * 2 + ox], want);
            }
        }
    }
}

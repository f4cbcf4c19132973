//! Small random graphs for equivalence and property testing: chains of
//! convolutions (standard, depthwise, 1x1), normalization, activations,
//! residual joins and pooling, with random (non-identity) normalization
//! statistics so folding has something to fold.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{
    infer_shapes, ConvParams, Graph, LayerKind, Padding, PoolParams, Shape, TensorDesc, WeightTensor,
    DEFAULT_BN_EPSILON,
};
use crate::tensor::Tensor;

struct Gen<'r, R: Rng> {
    g: Graph,
    rng: &'r mut R,
    cur: usize,
    shape: Shape,
}

impl<R: Rng> Gen<'_, R> {
    fn vals(&mut self, n: usize, lo: f32, hi: f32) -> Vec<f32> {
        (0..n).map(|_| self.rng.random_range(lo..hi)).collect()
    }

    fn push(&mut self, kind: LayerKind, inputs: Vec<usize>, weights: Vec<WeightTensor>) -> usize {
        let id = self.g.next_id();
        let names = weights.iter().map(|w| w.name.clone()).collect();
        for w in weights {
            self.g.add_weight(w);
        }
        let name = format!("{:?}_{}", kind.op(), id).to_lowercase();
        self.g.push(name, kind, inputs);
        self.g.node_mut(id).expect("just pushed").weights = names;
        infer_shapes(&mut self.g).expect("generator keeps shapes valid");
        self.shape = self.g.node(id).and_then(|n| n.output).expect("inferred").shape;
        self.cur = id;
        id
    }

    fn conv_from(&mut self, input: usize, p: ConvParams, with_bias: bool) -> usize {
        let cin = self.g.node(input).and_then(|n| n.output).expect("inferred").shape.c;
        let id = self.g.next_id();
        let dims = vec![p.out_channels, cin / p.groups, p.kh, p.kw];
        let n = dims.iter().product();
        let mut w = vec![WeightTensor::f32(format!("w{}", id), dims, self.vals(n, -1.0, 1.0))];
        if with_bias {
            let b = self.vals(p.out_channels, -0.5, 0.5);
            w.push(WeightTensor::f32(format!("b{}", id), vec![p.out_channels], b));
        }
        self.push(LayerKind::Convolution(p), vec![input], w)
    }

    fn random_conv(&mut self) {
        let s = self.shape;
        let ks = [1, 2, 3, 5];
        let mut kh = ks[self.rng.random_range(0..ks.len())];
        let mut kw = ks[self.rng.random_range(0..ks.len())];
        let sh = self.rng.random_range(1..=2);
        let sw = self.rng.random_range(1..=2);
        if self.rng.random_bool(0.2) {
            // Winograd-eligible shape
            (kh, kw) = (3, 3);
        }
        let padding = if kh <= s.h && kw <= s.w && self.rng.random_bool(0.3) {
            Padding::Valid
        } else {
            Padding::Same
        };
        let depthwise = s.c > 1 && self.rng.random_bool(0.25);
        let out = if depthwise { s.c } else { self.rng.random_range(1..=6) };
        let mut p = ConvParams::new(kh, kw, out).stride(sh, sw).padding(padding);
        if depthwise {
            p = p.groups(s.c);
        } else if self.rng.random_bool(0.2) {
            p = ConvParams::new(1, 1, out);
        }
        let bias = self.rng.random_bool(0.7);
        self.conv_from(self.cur, p, bias);
    }

    fn bn(&mut self) {
        let c = self.shape.c;
        let id = self.g.next_id();
        let mean = self.vals(c, -0.5, 0.5);
        let var = self.vals(c, 0.5, 1.5);
        self.push(
            LayerKind::BatchNorm {
                epsilon: DEFAULT_BN_EPSILON,
            },
            vec![self.cur],
            vec![
                WeightTensor::f32(format!("mean{}", id), vec![c], mean),
                WeightTensor::f32(format!("var{}", id), vec![c], var),
            ],
        );
    }

    fn scale(&mut self) {
        let c = self.shape.c;
        let id = self.g.next_id();
        let gamma = self.vals(c, 0.5, 1.5);
        let beta = self.vals(c, -0.5, 0.5);
        self.push(
            LayerKind::Scale,
            vec![self.cur],
            vec![
                WeightTensor::f32(format!("gamma{}", id), vec![c], gamma),
                WeightTensor::f32(format!("beta{}", id), vec![c], beta),
            ],
        );
    }

    fn relu(&mut self) {
        self.push(LayerKind::Relu, vec![self.cur], vec![]);
    }

    /// `x → {conv 3x3, relu or 1x1 conv} → add`.
    fn diamond(&mut self) {
        let x = self.cur;
        let c = self.shape.c;
        let a = self.conv_from(x, ConvParams::new(3, 3, c), true);
        let b = if self.rng.random_bool(0.5) {
            self.push(LayerKind::Relu, vec![x], vec![])
        } else {
            self.conv_from(x, ConvParams::new(1, 1, c), false)
        };
        self.push(LayerKind::Add, vec![a, b], vec![]);
    }

    fn pool(&mut self) {
        if self.shape.h >= 2 && self.shape.w >= 2 {
            self.push(LayerKind::AveragePool(PoolParams::window(2, 2, 2, 2)), vec![self.cur], vec![]);
        }
    }

    fn head(&mut self) {
        self.push(LayerKind::AveragePool(PoolParams::global()), vec![self.cur], vec![]);
        self.push(LayerKind::Flatten, vec![self.cur], vec![]);
        let (c, out) = (self.shape.c, self.rng.random_range(2..=6));
        let id = self.g.next_id();
        let w = self.vals(out * c, -1.0, 1.0);
        let b = self.vals(out, -0.5, 0.5);
        self.push(
            LayerKind::FullyConnected { out_features: out },
            vec![self.cur],
            vec![
                WeightTensor::f32(format!("w{}", id), vec![out, c], w),
                WeightTensor::f32(format!("b{}", id), vec![out], b),
            ],
        );
        if self.rng.random_bool(0.5) {
            self.relu();
        }
        self.push(LayerKind::Softmax, vec![self.cur], vec![]);
    }
}

/// A random valid graph with shapes inferred. Input is 1-4 channels of 4-12
/// by 4-12; the body has 2-8 blocks; two thirds of graphs end in a
/// pool/FC/softmax head.
pub fn random_graph<R: Rng>(rng: &mut R) -> Graph {
    let input = TensorDesc::f32(rng.random_range(1..=4), rng.random_range(4..=12), rng.random_range(4..=12));
    let mut gen = Gen {
        g: Graph::new("random", input),
        rng,
        cur: 0,
        shape: input.shape,
    };
    gen.push(LayerKind::Input, vec![], vec![]);
    let blocks = gen.rng.random_range(2..=8);
    for _ in 0..blocks {
        match gen.rng.random_range(0..10) {
            0..=3 => {
                gen.random_conv();
                if gen.rng.random_bool(0.6) {
                    gen.bn();
                }
                if gen.rng.random_bool(0.6) {
                    gen.scale();
                }
                if gen.rng.random_bool(0.7) {
                    gen.relu();
                }
            }
            4 => gen.relu(),
            5 => gen.bn(),
            6 => gen.scale(),
            7 | 8 => gen.diamond(),
            _ => gen.pool(),
        }
    }
    if gen.rng.random_range(0..3) != 0 {
        gen.head();
    }
    gen.g
}

pub fn random_graph_seeded(seed: u64) -> Graph {
    random_graph(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Input tensor with entries uniform in [-1, 1).
pub fn random_input<R: Rng>(desc: TensorDesc, rng: &mut R) -> Tensor {
    let data = (0..desc.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(desc, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate;

    #[test]
    fn generated_graphs_validate() {
        for seed in 0..200 {
            let g = random_graph_seeded(seed);
            let d = validate(&g);
            assert!(d.is_empty(), "seed {}: {:?}", seed, d);
        }
    }
}

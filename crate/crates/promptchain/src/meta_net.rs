//! Per-step meta-nets mapping the image embedding to prompt biases.
//!
//! Each net is a two-layer bottleneck (joint -> joint/16 -> token dim). In
//! chained mode the bias of step j is the running sum of all net outputs up
//! to j; every net still sees the original image embedding. Unchained mode
//! (the ablation) uses each net's output directly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::encoders::EncoderDims;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// One two-layer bias generator.
#[derive(Debug, Clone)]
pub struct MetaNet {
    pub w1: ParamId, // [hidden, joint]
    pub b1: ParamId, // [hidden]
    pub w2: ParamId, // [token, hidden]
    pub b2: ParamId, // [token]
}

fn gaussian_values(rng: &mut ChaCha8Rng, count: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..count).map(|_| normal.sample(rng)).collect()
}

impl MetaNet {
    fn init(index: usize, dims: EncoderDims, rng: &mut ChaCha8Rng, params: &mut ParamSet) -> Result<Self> {
        let hidden = dims.hidden();
        let w1 = Tensor::new(
            vec![hidden, dims.joint],
            gaussian_values(rng, hidden * dims.joint, (1.0 / dims.joint as f64).sqrt()),
        )?;
        let w2 = Tensor::new(
            vec![dims.token, hidden],
            gaussian_values(rng, dims.token * hidden, (1.0 / hidden as f64).sqrt()),
        )?;
        Ok(MetaNet {
            w1: params.insert(format!("meta_net{index}.w1"), w1),
            b1: params.insert(format!("meta_net{index}.b1"), Tensor::zeros(vec![hidden])),
            w2: params.insert(format!("meta_net{index}.w2"), w2),
            b2: params.insert(format!("meta_net{index}.b2"), Tensor::zeros(vec![dims.token])),
        })
    }

    /// layer2(relu(layer1(v))); trainable end to end.
    pub fn forward(&self, graph: &mut Graph, params: &ParamSet, v: NodeId) -> Result<NodeId> {
        let w1 = graph.param(params, self.w1)?;
        let b1 = graph.param(params, self.b1)?;
        let hidden = graph.linear(w1, v, b1)?;
        let hidden = graph.relu(hidden)?;
        let w2 = graph.param(params, self.w2)?;
        let b2 = graph.param(params, self.b2)?;
        graph.linear(w2, hidden, b2)
    }
}

/// The chain of meta-nets.
#[derive(Debug, Clone)]
pub struct MetaNetChain {
    nets: Vec<MetaNet>,
    chained: bool,
}

impl MetaNetChain {
    pub fn init(
        chain_length: usize,
        dims: EncoderDims,
        chained: bool,
        seed: u64,
        params: &mut ParamSet,
    ) -> Result<Self> {
        if chain_length < 1 {
            return Err(Error::Config("meta-net chain needs at least one net".into()));
        }
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = (0..chain_length)
            .map(|i| MetaNet::init(i, dims, &mut rng, params))
            .collect::<Result<Vec<_>>>()?;
        Ok(MetaNetChain { nets, chained })
    }

    pub fn chain_length(&self) -> usize {
        self.nets.len()
    }

    pub fn is_chained(&self) -> bool {
        self.chained
    }

    pub fn nets(&self) -> &[MetaNet] {
        &self.nets
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.nets
            .iter()
            .flat_map(|net| [net.w1, net.b1, net.w2, net.b2])
    }

    /// Per-step biases from the image embedding. Chained: the output of each
    /// net is added onto the running bias, so bias j is the sum of nets 1..=j.
    /// Unchained: each net stands alone.
    pub fn chain_biases(&self, graph: &mut Graph, params: &ParamSet, v: NodeId) -> Result<Vec<NodeId>> {
        let mut biases = Vec::with_capacity(self.nets.len());
        for (j, net) in self.nets.iter().enumerate() {
            let out = net.forward(graph, params, v)?;
            if self.chained && j > 0 {
                let prev = biases[j - 1];
                biases.push(graph.add(out, prev)?);
            } else {
                biases.push(out);
            }
        }
        Ok(biases)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;

    fn small_dims() -> EncoderDims {
        EncoderDims {
            token: 4,
            image_feature: 8,
            joint: 16,
        }
    }

    fn embed(g: &mut Graph, dims: EncoderDims) -> NodeId {
        let data: Vec<f64> = (0..dims.joint).map(|i| (i as f64) * 0.05 - 0.3).collect();
        g.constant(&[dims.joint], &data).unwrap()
    }

    #[test]
    fn zero_second_layer_means_zero_bias() {
        let dims = small_dims();
        let mut params = ParamSet::new();
        let chain = MetaNetChain::init(2, dims, true, 3, &mut params).unwrap();
        for net in chain.nets() {
            for v in params.get_mut(net.w2).data_mut() {
                *v = 0.0;
            }
        }
        let mut g = Graph::new();
        let v = embed(&mut g, dims);
        let biases = chain.chain_biases(&mut g, &params, v).unwrap();
        for &b in &biases {
            assert!(g.value(b).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let dims = small_dims();
        let run = || {
            let mut params = ParamSet::new();
            let chain = MetaNetChain::init(3, dims, true, 5, &mut params).unwrap();
            let mut g = Graph::new();
            let v = embed(&mut g, dims);
            let biases = chain.chain_biases(&mut g, &params, v).unwrap();
            g.value(biases[2]).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_net_chained_equals_unchained() {
        let dims = small_dims();
        let mut p1 = ParamSet::new();
        let mut p2 = ParamSet::new();
        let chained = MetaNetChain::init(1, dims, true, 7, &mut p1).unwrap();
        let unchained = MetaNetChain::init(1, dims, false, 7, &mut p2).unwrap();
        let mut g1 = Graph::new();
        let mut g2 = Graph::new();
        let v1 = embed(&mut g1, dims);
        let v2 = embed(&mut g2, dims);
        let b1 = chained.chain_biases(&mut g1, &p1, v1).unwrap();
        let b2 = unchained.chain_biases(&mut g2, &p2, v2).unwrap();
        assert_eq!(g1.value(b1[0]), g2.value(b2[0]));
    }

    #[test]
    fn constant_nets_accumulate_linearly() {
        // Zero both layers, then set second-layer biases to 0.25 (a power of
        // two, so the running sums are exact): chained bias j must be
        // (j+1) * 0.25 in every coordinate.
        let dims = small_dims();
        let mut params = ParamSet::new();
        let chain = MetaNetChain::init(3, dims, true, 9, &mut params).unwrap();
        for net in chain.nets() {
            for v in params.get_mut(net.w2).data_mut() {
                *v = 0.0;
            }
            for v in params.get_mut(net.b2).data_mut() {
                *v = 0.25;
            }
        }
        let mut g = Graph::new();
        let v = embed(&mut g, dims);
        let biases = chain.chain_biases(&mut g, &params, v).unwrap();
        for (j, &b) in biases.iter().enumerate() {
            let want = 0.25 * (j as f64 + 1.0);
            assert!(g.value(b).iter().all(|&x| x == want), "step {j}");
        }
    }

    #[test]
    fn chained_bias_is_the_sum_of_net_outputs() {
        let dims = small_dims();
        let mut params = ParamSet::new();
        let chain = MetaNetChain::init(3, dims, true, 11, &mut params).unwrap();
        let mut g = Graph::new();
        let v = embed(&mut g, dims);
        let biases = chain.chain_biases(&mut g, &params, v).unwrap();

        // Independent oracle: run each net alone and sum in the same order.
        let mut g2 = Graph::new();
        let v2 = embed(&mut g2, dims);
        let mut total = vec![0.0; dims.token];
        for net in chain.nets() {
            let out = net.forward(&mut g2, &params, v2).unwrap();
            for (acc, x) in total.iter_mut().zip(g2.value(out)) {
                *acc += x;
            }
        }
        for (got, want) in g.value(biases[2]).iter().zip(&total) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_unrolling_holds_per_step() {
        let dims = small_dims();
        let mut params = ParamSet::new();
        let chain = MetaNetChain::init(3, dims, true, 13, &mut params).unwrap();
        let mut g = Graph::new();
        let v = embed(&mut g, dims);
        let biases = chain.chain_biases(&mut g, &params, v).unwrap();
        for j in 1..3 {
            let net_out = chain.nets()[j].forward(&mut g, &params, v).unwrap();
            let expect: Vec<f64> = g
                .value(net_out)
                .iter()
                .zip(g.value(biases[j - 1]))
                .map(|(n, p)| n + p)
                .collect();
            assert_eq!(g.value(biases[j]), expect.as_slice());
        }
    }

    #[test]
    fn first_net_gradient_differs_with_and_without_the_chain() {
        let dims = small_dims();
        let grad_of_first_net = |chained: bool| -> Vec<f64> {
            let mut params = ParamSet::new();
            let chain = MetaNetChain::init(3, dims, chained, 15, &mut params).unwrap();
            let mut g = Graph::new();
            let v = embed(&mut g, dims);
            let biases = chain.chain_biases(&mut g, &params, v).unwrap();
            // Loss touches every step's bias so unchained nets also train.
            let pooled = g.mean_stack(&biases).unwrap();
            let sq = g.mul(pooled, pooled).unwrap();
            let loss = g.sum(sq).unwrap();
            g.backward(loss).unwrap();
            g.accumulate_grads(&mut params).unwrap();
            params.get(chain.nets()[0].w1).grad().unwrap().to_vec()
        };
        let with_chain = grad_of_first_net(true);
        let without_chain = grad_of_first_net(false);
        assert_ne!(with_chain, without_chain);
    }

    #[test]
    fn equal_embeddings_get_equal_biases() {
        let dims = small_dims();
        let mut params = ParamSet::new();
        let chain = MetaNetChain::init(2, dims, true, 17, &mut params).unwrap();
        let mut g = Graph::new();
        let v1 = embed(&mut g, dims);
        let v2 = embed(&mut g, dims);
        let b1 = chain.chain_biases(&mut g, &params, v1).unwrap();
        let b2 = chain.chain_biases(&mut g, &params, v2).unwrap();
        assert_eq!(g.value(b1[1]), g.value(b2[1]));
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let dims = small_dims();
        let mut params = ParamSet::new();
        let chain = MetaNetChain::init(2, dims, true, 19, &mut params).unwrap();
        let v_data: Vec<f64> = (0..dims.joint).map(|i| (i as f64) * 0.07 - 0.5).collect();

        let loss_fn = |params: &mut ParamSet, compute: bool| -> Result<f64> {
            let mut g = Graph::new();
            let v = g.constant(&[dims.joint], &v_data)?;
            let biases = chain.chain_biases(&mut g, params, v)?;
            let pooled = g.mean_stack(&biases)?;
            let sq = g.mul(pooled, pooled)?;
            let loss = g.sum(sq)?;
            if compute {
                g.backward(loss)?;
                g.accumulate_grads(params)?;
            }
            Ok(g.scalar_value(loss))
        };
        let report = grad_check(&mut params, loss_fn, 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "max rel error {}", report.max_rel_error);
    }
}

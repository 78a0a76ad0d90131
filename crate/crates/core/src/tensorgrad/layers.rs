//! Parameter initialisation and the Conv-BN-ReLU block shared by the
//! watermark and embedder networks.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{BnMode, Bound, Graph, NodeId, ParamSet, RunningStats, Tensor, TensorError, BN_EPS, BN_MOMENTUM};

/// He-normal tensor: N(0, 2/fan_in).
pub fn he_normal<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Registers `{prefix}.w` (He) and `{prefix}.b` (zero) for a k×k convolution.
pub fn add_conv<R: Rng>(
    params: &mut ParamSet,
    rng: &mut R,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) -> Result<(), TensorError> {
    params.insert(format!("{prefix}.w"), he_normal(rng, &[c_out, c_in, k, k], c_in * k * k))?;
    params.insert(format!("{prefix}.b"), Tensor::zeros(&[c_out]))
}

/// Registers `{prefix}.w` (G×F, He) and `{prefix}.b` (zero).
pub fn add_affine<R: Rng>(params: &mut ParamSet, rng: &mut R, prefix: &str, f: usize, g: usize) -> Result<(), TensorError> {
    params.insert(format!("{prefix}.w"), he_normal(rng, &[g, f], f))?;
    params.insert(format!("{prefix}.b"), Tensor::zeros(&[g]))
}

/// Registers a 3×3 conv plus batch-norm scale/shift (γ=1, β=0).
pub fn add_conv_block<R: Rng>(
    params: &mut ParamSet,
    rng: &mut R,
    prefix: &str,
    c_in: usize,
    c_out: usize,
) -> Result<(), TensorError> {
    add_conv(params, rng, &format!("{prefix}.conv"), c_in, c_out, 3)?;
    params.insert(format!("{prefix}.bn.gamma"), Tensor::full(&[c_out], 1.0))?;
    params.insert(format!("{prefix}.bn.beta"), Tensor::zeros(&[c_out]))
}

/// Batch-norm statistics handling for a whole network pass.
#[derive(Debug)]
pub enum StatsMode<'a> {
    Train(&'a mut [RunningStats]),
    Infer(&'a [RunningStats]),
}

impl StatsMode<'_> {
    pub(crate) fn bn(&mut self, index: usize) -> Result<BnMode<'_>, TensorError> {
        let missing = || TensorError::InvalidArgument(format!("no running statistics for batch-norm layer {index}"));
        Ok(match self {
            StatsMode::Train(stats) => BnMode::Train {
                stats: stats.get_mut(index).ok_or_else(missing)?,
                momentum: BN_MOMENTUM,
            },
            StatsMode::Infer(stats) => BnMode::Infer(stats.get(index).ok_or_else(missing)?),
        })
    }
}

pub fn conv(graph: &mut Graph, bound: &Bound, prefix: &str, x: NodeId) -> Result<NodeId, TensorError> {
    let w = bound.node(&format!("{prefix}.w"))?;
    let b = bound.node(&format!("{prefix}.b"))?;
    let k = graph.value(w).shape()[2];
    graph.conv2d(x, w, b, 1, k / 2)
}

pub fn affine(graph: &mut Graph, bound: &Bound, prefix: &str, x: NodeId) -> Result<NodeId, TensorError> {
    let w = bound.node(&format!("{prefix}.w"))?;
    let b = bound.node(&format!("{prefix}.b"))?;
    graph.affine(x, w, b)
}

/// 3×3 same-padding conv → batch norm → ReLU.
pub fn conv_block(
    graph: &mut Graph,
    bound: &Bound,
    prefix: &str,
    x: NodeId,
    bn: BnMode<'_>,
) -> Result<NodeId, TensorError> {
    let y = conv(graph, bound, &format!("{prefix}.conv"), x)?;
    let gamma = bound.node(&format!("{prefix}.bn.gamma"))?;
    let beta = bound.node(&format!("{prefix}.bn.beta"))?;
    let y = graph.batchnorm2d(y, gamma, beta, bn, BN_EPS)?;
    Ok(graph.relu(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_normal_has_expected_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = he_normal(&mut rng, &[64, 32, 3, 3], 32 * 9);
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / 288.0;
        assert!(mean.abs() < 0.01);
        assert!((var / expected - 1.0).abs() < 0.05, "variance ratio {}", var / expected);
    }

    #[test]
    fn block_preserves_spatial_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::new();
        add_conv_block(&mut params, &mut rng, "b0", 3, 5).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g).unwrap();
        let x = g.input(he_normal(&mut rng, &[2, 3, 7, 9], 1)).unwrap();
        let mut stats = vec![RunningStats::empty()];
        let mut mode = StatsMode::Train(&mut stats);
        let y = conv_block(&mut g, &bound, "b0", x, mode.bn(0).unwrap()).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 5, 7, 9]);
        assert!(g.value(y).data().iter().all(|v| *v >= 0.0));
        assert!(stats[0].is_populated());
    }
}

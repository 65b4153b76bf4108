//! Central finite-difference verification of analytic gradients.

use super::layers::{LayerSpec, Param, Sequential};
use super::optim::mse_loss;
use super::tensor::Tensor;
use super::Result;
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};

/// A scalar loss over a fixed batch whose parameters can be perturbed.
pub trait Differentiable {
    fn params_mut(&mut self) -> Vec<&mut Param>;
    /// Deterministic loss (dropout disabled).
    fn loss(&mut self) -> Result<f64>;
    /// Same loss, accumulating analytic gradients into zeroed buffers.
    fn loss_and_grad(&mut self) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub total: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with central differences on every trainable
/// parameter, or on a random subset of `max_checked` entries (at least 200)
/// when the model is larger than that. Frozen parameters are skipped.
pub fn grad_check(
    f: &mut dyn Differentiable,
    eps: f64,
    max_checked: usize,
    rng: &mut dyn RngCore,
) -> Result<GradCheckReport> {
    for p in f.params_mut() {
        if !p.frozen {
            p.value.zero_grad();
        }
    }
    f.loss_and_grad()?;
    let mut coords = Vec::new();
    let mut analytic = Vec::new();
    for (pi, p) in f.params_mut().into_iter().enumerate() {
        if p.frozen {
            continue;
        }
        let g = p
            .value
            .grad
            .as_ref()
            .expect("trainable parameter has a gradient");
        for (ei, &gv) in g.iter().enumerate() {
            coords.push((pi, ei));
            analytic.push(gv);
        }
    }
    let total = coords.len();
    let limit = max_checked.max(200);
    let chosen: Vec<usize> = if total <= limit {
        (0..total).collect()
    } else {
        let mut idx = sample(rng, total, limit).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut worst = 0.0f64;
    for &k in &chosen {
        let (pi, ei) = coords[k];
        let orig = f.params_mut()[pi].value.values[ei];
        f.params_mut()[pi].value.values[ei] = orig + eps;
        let up = f.loss()?;
        f.params_mut()[pi].value.values[ei] = orig - eps;
        let down = f.loss()?;
        f.params_mut()[pi].value.values[ei] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[k], numeric));
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        checked: chosen.len(),
        total,
    })
}

/// MSE of a single stack on a fixed batch.
pub struct SequentialProblem<'a> {
    pub net: &'a mut Sequential,
    pub input: Tensor,
    pub target: Tensor,
    pub rng: &'a mut dyn RngCore,
}

impl Differentiable for SequentialProblem<'_> {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        let y = self.net.forward(self.input.clone(), false, self.rng)?;
        self.net.clear_cache();
        Ok(mse_loss(&y, &self.target)?.0)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let y = self.net.forward(self.input.clone(), false, self.rng)?;
        let (l, g) = mse_loss(&y, &self.target)?;
        self.net.backward(g, false)?;
        Ok(l)
    }
}

fn random_tensor(rng: &mut dyn RngCore, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, values).expect("shape product")
}

/// Checks one small random stack against random targets.
pub fn check_stack(
    specs: &[LayerSpec],
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    rng: &mut dyn RngCore,
) -> Result<GradCheckReport> {
    let mut net = Sequential::from_specs(specs, rng)?;
    // nonzero biases keep ReLU units away from their kink at zero input
    for p in net.params_mut() {
        p.value
            .values
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let input = random_tensor(rng, in_shape);
    let target = random_tensor(rng, out_shape);
    let mut eval_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut prob = SequentialProblem {
        net: &mut net,
        input,
        target,
        rng: &mut eval_rng,
    };
    grad_check(&mut prob, 1e-5, 400, rng)
}

/// Name, layer stack, input shape and output shape of one check.
type Case = (&'static str, Vec<LayerSpec>, Vec<usize>, Vec<usize>);

/// One small network per layer kind, each wrapping the kind under test
/// between parameterized layers.
pub fn layer_suite(rng: &mut dyn RngCore) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let conv = |i, o| LayerSpec::Conv3x3 {
        in_channels: i,
        out_channels: o,
    };
    let dense = |i, o| LayerSpec::Dense {
        inputs: i,
        outputs: o,
    };
    let image_tail = [LayerSpec::GlobalAvgPool, dense(2, 3)];
    let cases: Vec<Case> = vec![
        (
            "dense",
            vec![dense(5, 4), dense(4, 3)],
            vec![3, 5],
            vec![3, 3],
        ),
        (
            "conv3x3",
            [vec![conv(2, 3), conv(3, 2)], image_tail.to_vec()].concat(),
            vec![2, 2, 5, 6],
            vec![2, 3],
        ),
        (
            "avgpool2",
            [vec![conv(1, 2), LayerSpec::AvgPool2], image_tail.to_vec()].concat(),
            vec![2, 1, 6, 4],
            vec![2, 3],
        ),
        (
            "globalavgpool",
            [vec![conv(1, 2)], image_tail.to_vec()].concat(),
            vec![2, 1, 4, 4],
            vec![2, 3],
        ),
        (
            "relu",
            vec![dense(5, 8), LayerSpec::Relu, dense(8, 3)],
            vec![4, 5],
            vec![4, 3],
        ),
        (
            "tanh",
            vec![dense(5, 8), LayerSpec::Tanh, dense(8, 3)],
            vec![4, 5],
            vec![4, 3],
        ),
        (
            "dropout",
            vec![dense(5, 8), LayerSpec::Dropout { p: 0.5 }, dense(8, 3)],
            vec![4, 5],
            vec![4, 3],
        ),
    ];
    cases
        .into_iter()
        .map(|(name, specs, i, o)| Ok((name, check_stack(&specs, i, o, rng)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn check(specs: &[LayerSpec], in_shape: Vec<usize>, out_shape: Vec<usize>) -> GradCheckReport {
        check_stack(
            specs,
            in_shape,
            out_shape,
            &mut ChaCha8Rng::seed_from_u64(11),
        )
        .unwrap()
    }

    #[test]
    fn every_layer_kind_passes() {
        for (name, r) in layer_suite(&mut ChaCha8Rng::seed_from_u64(5)).unwrap() {
            assert!(r.max_rel_error <= 1e-4, "{name}: {r:?}");
        }
    }

    #[test]
    fn linear_net_is_exact() {
        let r = check(
            &[LayerSpec::Dense {
                inputs: 3,
                outputs: 2,
            }],
            vec![4, 3],
            vec![4, 2],
        );
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 8);
    }

    #[test]
    fn conv_pool_stack() {
        let specs = [
            LayerSpec::Conv3x3 {
                in_channels: 1,
                out_channels: 3,
            },
            LayerSpec::Tanh,
            LayerSpec::AvgPool2,
            LayerSpec::Conv3x3 {
                in_channels: 3,
                out_channels: 2,
            },
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense {
                inputs: 2,
                outputs: 2,
            },
        ];
        let r = check(&specs, vec![2, 1, 6, 4], vec![2, 2]);
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn frozen_layers_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let specs = [
            LayerSpec::Dense {
                inputs: 2,
                outputs: 3,
            },
            LayerSpec::Tanh,
            LayerSpec::Dense {
                inputs: 3,
                outputs: 1,
            },
        ];
        let mut net = Sequential::from_specs(&specs, &mut rng).unwrap();
        net.layers[0]
            .params_mut()
            .into_iter()
            .for_each(|p| p.set_frozen(true));
        let mut eval_rng = ChaCha8Rng::seed_from_u64(0);
        let mut prob = SequentialProblem {
            net: &mut net,
            input: random_tensor(&mut rng, vec![3, 2]),
            target: random_tensor(&mut rng, vec![3, 1]),
            rng: &mut eval_rng,
        };
        let r = grad_check(&mut prob, 1e-5, 400, &mut rng).unwrap();
        assert_eq!(r.total, 4);
        assert!(r.max_rel_error <= 1e-4);
    }
}

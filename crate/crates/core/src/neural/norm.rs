//! Per-channel batch normalization over (batch, height, width).

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Learnable scale/shift plus running statistics for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Exponential moving average with the unbiased batch variance.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = BN_MOMENTUM;
        let unbias = if stats.count > 1 { stats.count as f64 / (stats.count - 1) as f64 } else { 1.0 };
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * stats.mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * stats.var[c] * unbias;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Values per channel.
    pub count: usize,
}

/// What the backward pass needs from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

fn channel_slices(t: &Tensor) -> impl Iterator<Item = (usize, std::ops::Range<usize>)> + '_ {
    let [b, c, h, w] = t.shape();
    let plane = h * w;
    (0..b * c).map(move |i| (i % c, i * plane..(i + 1) * plane))
}

/// Normalize with batch statistics. Needs at least two batch items.
pub fn batchnorm_train(input: &Tensor, bn: &BatchNorm) -> Result<(Tensor, BatchStats, BatchNormCache)> {
    let [batch, c, h, w] = input.shape();
    if batch < 2 {
        return Err(Error::Shape("train-mode batch normalization needs a batch of at least 2".into()));
    }
    check_channels(c, bn)?;
    let count = batch * h * w;
    let mut mean = vec![0.0; c];
    for (ch, r) in channel_slices(input) {
        mean[ch] += input.data()[r].iter().sum::<f64>();
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; c];
    for (ch, r) in channel_slices(input) {
        var[ch] += input.data()[r].iter().map(|x| (x - mean[ch]).powi(2)).sum::<f64>();
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

    let mut xhat = input.clone();
    let mut out = input.clone();
    for (ch, r) in channel_slices(input) {
        for i in r {
            let n = (input.data()[i] - mean[ch]) * inv_std[ch];
            xhat.data_mut()[i] = n;
            out.data_mut()[i] = bn.gamma[ch] * n + bn.beta[ch];
        }
    }
    Ok((out, BatchStats { mean, var, count }, BatchNormCache { xhat, inv_std }))
}

/// Normalize with the running statistics.
pub fn batchnorm_infer(input: &Tensor, bn: &BatchNorm) -> Result<Tensor> {
    check_channels(input.channels(), bn)?;
    let scale: Vec<f64> = (0..bn.channels()).map(|c| bn.gamma[c] / (bn.running_var[c] + BN_EPS).sqrt()).collect();
    let mut out = input.clone();
    for (ch, r) in channel_slices(input) {
        for i in r {
            out.data_mut()[i] = (input.data()[i] - bn.running_mean[ch]) * scale[ch] + bn.beta[ch];
        }
    }
    Ok(out)
}

/// Mode-dispatching form. In train mode the running statistics are updated.
pub fn batchnorm(input: &Tensor, bn: &mut BatchNorm, mode: Mode) -> Result<Tensor> {
    match mode {
        Mode::Train => {
            let (out, stats, _) = batchnorm_train(input, bn)?;
            bn.update_running(&stats);
            Ok(out)
        }
        Mode::Infer => batchnorm_infer(input, bn),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Gradient of the train-mode forward pass, including the dependence of
/// the batch statistics on every input.
pub fn batchnorm_backward(grad_out: &Tensor, bn: &BatchNorm, cache: &BatchNormCache) -> Result<BatchNormGrads> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match forward shape {:?}",
            grad_out.shape(),
            cache.xhat.shape()
        )));
    }
    let [batch, c, h, w] = grad_out.shape();
    let count = (batch * h * w) as f64;
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for (ch, r) in channel_slices(grad_out) {
        for i in r {
            let dy = grad_out.data()[i];
            sum_dy[ch] += dy;
            sum_dy_xhat[ch] += dy * cache.xhat.data()[i];
        }
    }
    let mut dx = grad_out.clone();
    for (ch, r) in channel_slices(grad_out) {
        let k = bn.gamma[ch] * cache.inv_std[ch] / count;
        for i in r {
            let dy = grad_out.data()[i];
            dx.data_mut()[i] = k * (count * dy - sum_dy[ch] - cache.xhat.data()[i] * sum_dy_xhat[ch]);
        }
    }
    Ok(BatchNormGrads { input: dx, gamma: sum_dy_xhat, beta: sum_dy })
}

fn check_channels(c: usize, bn: &BatchNorm) -> Result<()> {
    if c != bn.channels() {
        return Err(Error::Shape(format!("batch norm has {} channels, input has {c}", bn.channels())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::conv::tests::random_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_maps_to_shift() {
        let x = Tensor::from_fn([3, 2, 4, 2], |_, c, _, _| if c == 0 { 5.0 } else { -1.0 });
        let mut bn = BatchNorm::new(2);
        bn.gamma = vec![2.0, 3.0];
        bn.beta = vec![0.7, -0.2];
        let (y, _, _) = batchnorm_train(&x, &bn).unwrap();
        for b in 0..3 {
            for h in 0..4 {
                for w in 0..2 {
                    assert_eq!(y.at(b, 0, h, w), 0.7);
                    assert_eq!(y.at(b, 1, h, w), -0.2);
                }
            }
        }
    }

    #[test]
    fn standardized_input_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor(&mut rng, [4, 3, 8, 2]);
        let (z, _, _) = batchnorm_train(&x, &BatchNorm::new(3)).unwrap();
        let (y, _, _) = batchnorm_train(&z, &BatchNorm::new(3)).unwrap();
        for (a, b) in z.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = random_tensor(&mut rng, [5, 3, 7, 3]);
        x.data_mut().iter_mut().for_each(|v| *v = 10.0 * *v + 2.0);
        let (y, stats, _) = batchnorm_train(&x, &BatchNorm::new(3)).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..5)
                .flat_map(|b| (0..7).flat_map(move |h| (0..3).map(move |w| (b, h, w))))
                .map(|(b, h, w)| y.at(b, c, h, w))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-10);
            // the eps floor shrinks the variance by var / (var + eps)
            let expected = stats.var[c] / (stats.var[c] + BN_EPS);
            assert!((var - expected).abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_of_one_rejected_in_train_mode() {
        let x = Tensor::zeros([1, 2, 4, 4]);
        let mut bn = BatchNorm::new(2);
        assert!(batchnorm(&x, &mut bn, Mode::Train).is_err());
        assert!(batchnorm(&x, &mut bn, Mode::Infer).is_ok());
    }

    #[test]
    fn running_stats_follow_batches() {
        let x = Tensor::from_fn([2, 1, 2, 1], |b, _, h, _| (b * 2 + h) as f64);
        let mut bn = BatchNorm::new(1);
        for _ in 0..400 {
            batchnorm(&x, &mut bn, Mode::Train).unwrap();
        }
        assert!((bn.running_mean[0] - 1.5).abs() < 1e-9);
        // unbiased variance of 0,1,2,3
        assert!((bn.running_var[0] - 5.0 / 3.0).abs() < 1e-9);
        let y = batchnorm(&x, &mut bn, Mode::Infer).unwrap();
        assert!((y.at(0, 0, 0, 0) + 1.5 / (5.0f64 / 3.0 + BN_EPS).sqrt()).abs() < 1e-9);
    }
}

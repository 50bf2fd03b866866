use super::layers::*;
use super::{Architecture, Model, NnetError, Params, Scalar};
use crate::scoring::softmax;

/// Activations of one sample, kept for the backward pass.
pub(crate) struct Workspace<T> {
    conv1: Vec<T>,
    pool1: Vec<T>,
    arg1: Vec<u8>,
    conv2: Vec<T>,
    pool2: Vec<T>,
    arg2: Vec<u8>,
    hidden: Vec<T>,
    logits: Vec<T>,
    d_logits: Vec<T>,
    d_hidden: Vec<T>,
    d_pool2: Vec<T>,
    d_conv2: Vec<T>,
    d_pool1: Vec<T>,
    d_conv1: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub(crate) fn new(arch: &Architecture) -> Self {
        let l = arch.signal_len;
        let z = |n: usize| vec![T::zero(); n];
        Workspace {
            conv1: z(arch.conv1_filters * l),
            pool1: z(arch.conv1_filters * l / 2),
            arg1: vec![0; arch.conv1_filters * l / 2],
            conv2: z(arch.conv2_filters * l / 2),
            pool2: z(arch.flat_dim()),
            arg2: vec![0; arch.flat_dim()],
            hidden: z(arch.hidden),
            logits: z(arch.num_classes),
            d_logits: z(arch.num_classes),
            d_hidden: z(arch.hidden),
            d_pool2: z(arch.flat_dim()),
            d_conv2: z(arch.conv2_filters * l / 2),
            d_pool1: z(arch.conv1_filters * l / 2),
            d_conv1: z(arch.conv1_filters * l),
        }
    }

    pub(crate) fn logits(&self) -> &[T] {
        &self.logits
    }

    pub(crate) fn features(&self) -> &[T] {
        &self.hidden
    }

    pub(crate) fn forward(&mut self, model: &Model<T>, x: &[T]) -> Result<(), NnetError> {
        let a = &model.arch;
        let p = &model.params;
        if x.len() != a.input_len() {
            return Err(NnetError::ShapeMismatch {
                expected: a.input_len(),
                found: x.len(),
            });
        }
        let l = a.signal_len;
        conv1d_forward(x, a.in_channels, l, &p.conv1_w, &p.conv1_b, a.conv1_filters, a.conv1_kernel, &mut self.conv1);
        relu_in_place(&mut self.conv1);
        maxpool2_forward(&self.conv1, &mut self.pool1, &mut self.arg1);
        conv1d_forward(&self.pool1, a.conv1_filters, l / 2, &p.conv2_w, &p.conv2_b, a.conv2_filters, a.conv2_kernel, &mut self.conv2);
        relu_in_place(&mut self.conv2);
        maxpool2_forward(&self.conv2, &mut self.pool2, &mut self.arg2);
        dense_forward(&self.pool2, &p.fc1_w, &p.fc1_b, &mut self.hidden);
        relu_in_place(&mut self.hidden);
        dense_forward(&self.hidden, &p.fc2_w, &p.fc2_b, &mut self.logits);
        Ok(())
    }

    /// Cross-entropy of the last forward pass; writes `scale * dL/dlogits`.
    fn cross_entropy(&mut self, label: usize, scale: f64) -> f64 {
        let logits: Vec<f64> = self.logits.iter().map(|v| v.as_f64()).collect();
        let probs = softmax(&logits);
        for (j, (d, p)) in self.d_logits.iter_mut().zip(&probs).enumerate() {
            let target = if j == label { 1.0 } else { 0.0 };
            *d = T::of_f64(scale * (p - target));
        }
        // log-sum-exp form keeps the loss finite when p underflows
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        lse - logits[label]
    }

    /// Backpropagate `d_logits` of the last forward pass into `grads`.
    fn backward(&mut self, model: &Model<T>, x: &[T], grads: &mut Params<T>) {
        let a = &model.arch;
        let p = &model.params;
        let l = a.signal_len;
        dense_backward(&self.hidden, &p.fc2_w, &self.d_logits, &mut grads.fc2_w, &mut grads.fc2_b, Some(&mut self.d_hidden));
        relu_backward(&self.hidden, &mut self.d_hidden);
        dense_backward(&self.pool2, &p.fc1_w, &self.d_hidden, &mut grads.fc1_w, &mut grads.fc1_b, Some(&mut self.d_pool2));
        maxpool2_backward(&self.d_pool2, &self.arg2, &mut self.d_conv2);
        relu_backward(&self.conv2, &mut self.d_conv2);
        conv1d_backward(&self.pool1, a.conv1_filters, l / 2, &p.conv2_w, a.conv2_filters, a.conv2_kernel, &self.d_conv2, &mut grads.conv2_w, &mut grads.conv2_b, Some(&mut self.d_pool1));
        maxpool2_backward(&self.d_pool1, &self.arg1, &mut self.d_conv1);
        relu_backward(&self.conv1, &mut self.d_conv1);
        conv1d_backward(x, a.in_channels, l, &p.conv1_w, a.conv1_filters, a.conv1_kernel, &self.d_conv1, &mut grads.conv1_w, &mut grads.conv1_b, None);
    }

    /// Forward, loss and gradient accumulation for one sample whose loss
    /// enters the objective with weight `scale`. Returns the unscaled loss.
    pub(crate) fn accumulate(
        &mut self,
        model: &Model<T>,
        x: &[T],
        label: usize,
        scale: f64,
        grads: &mut Params<T>,
    ) -> Result<f64, NnetError> {
        if label >= model.arch.num_classes {
            return Err(NnetError::LabelOutOfRange {
                label,
                classes: model.arch.num_classes,
            });
        }
        self.forward(model, x)?;
        let loss = self.cross_entropy(label, scale);
        self.backward(model, x, grads);
        Ok(loss)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Output<T> {
    pub logits: Vec<T>,
    /// Post-ReLU fc1 activations.
    pub features: Vec<T>,
}

/// Logits and penultimate features for every input.
pub fn forward<T: Scalar>(model: &Model<T>, batch: &[&[T]]) -> Result<Vec<Output<T>>, NnetError> {
    let mut ws = Workspace::new(&model.arch);
    batch
        .iter()
        .map(|x| {
            ws.forward(model, x)?;
            Ok(Output {
                logits: ws.logits().to_vec(),
                features: ws.features().to_vec(),
            })
        })
        .collect()
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted class; ties resolve to the lowest class id.
pub fn predict<T: Scalar>(model: &Model<T>, x: &[T]) -> Result<usize, NnetError> {
    let mut ws = Workspace::new(&model.arch);
    ws.forward(model, x)?;
    Ok(argmax(ws.logits()))
}

pub fn predict_all<T: Scalar>(model: &Model<T>, batch: &[&[T]]) -> Result<Vec<usize>, NnetError> {
    let mut ws = Workspace::new(&model.arch);
    batch
        .iter()
        .map(|x| {
            ws.forward(model, x)?;
            Ok(argmax(ws.logits()))
        })
        .collect()
}

/// Mean cross-entropy over the batch and its gradient for every parameter.
pub fn loss_and_gradients<T: Scalar>(
    model: &Model<T>,
    batch: &[&[T]],
    labels: &[usize],
) -> Result<(f64, Params<T>), NnetError> {
    if batch.len() != labels.len() {
        return Err(NnetError::BatchMismatch {
            inputs: batch.len(),
            labels: labels.len(),
        });
    }
    if batch.is_empty() {
        return Err(NnetError::EmptyTrainingSet);
    }
    let mut grads = Params::zeros(&model.arch);
    let mut ws = Workspace::new(&model.arch);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (x, &y) in batch.iter().zip(labels) {
        total += ws.accumulate(model, x, y, scale, &mut grads)?;
    }
    Ok((total * scale, grads))
}

/// L2 norm of the single-sample loss gradient over all parameters.
pub fn per_sample_gradient_norm<T: Scalar>(
    model: &Model<T>,
    sample: &[T],
    label: usize,
) -> Result<f64, NnetError> {
    let (_, grads) = loss_and_gradients(model, &[sample], &[label])?;
    Ok(grads.l2_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::init_model;
    use crate::seed;
    use rand::Rng;

    fn random_input(seed: u64, n: usize) -> Vec<f32> {
        let mut rng = seed::rng(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_model_gives_zero_logits_and_ln_c_loss() {
        let mut m = init_model(0, 8);
        for t in m.params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = random_input(1, 256);
        let out = forward(&m, &[&x]).unwrap();
        assert!(out[0].logits.iter().all(|&v| v == 0.0));
        assert_eq!(out[0].features.len(), 64);
        let (loss, _) = loss_and_gradients(&m, &[&x, &x], &[3, 5]).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn doubling_fc2_doubles_logits() {
        let mut m = init_model(2, 8);
        m.params.fc2_b.iter_mut().for_each(|v| *v = 0.0);
        let x = random_input(3, 256);
        let a = forward(&m, &[&x]).unwrap().remove(0).logits;
        m.params.fc2_w.iter_mut().for_each(|v| *v *= 2.0);
        let b = forward(&m, &[&x]).unwrap().remove(0).logits;
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() <= 1e-6 * y.abs().max(1.0));
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = init_model(0, 8);
        let x = vec![0.0f32; 255];
        assert!(matches!(forward(&m, &[&x]), Err(NnetError::ShapeMismatch { expected: 256, found: 255 })));
        let ok = vec![0.0f32; 256];
        assert!(matches!(
            loss_and_gradients(&m, &[&ok], &[8]),
            Err(NnetError::LabelOutOfRange { label: 8, classes: 8 })
        ));
    }

    #[test]
    fn duplicating_the_batch_is_invariant() {
        let m = init_model(4, 8);
        let xs: Vec<Vec<f32>> = (0..3).map(|i| random_input(10 + i, 256)).collect();
        let refs: Vec<&[f32]> = xs.iter().map(|v| v.as_slice()).collect();
        let labels = [0, 4, 7];
        let (l1, g1) = loss_and_gradients(&m, &refs, &labels).unwrap();
        let doubled: Vec<&[f32]> = refs.iter().chain(refs.iter()).copied().collect();
        let (l2, g2) = loss_and_gradients(&m, &doubled, &[0, 4, 7, 0, 4, 7]).unwrap();
        assert!((l1 - l2).abs() < 1e-6);
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-5 * x.abs().max(1e-3), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn confident_correct_sample_has_small_gradient() {
        let mut m = init_model(6, 8);
        let x = random_input(7, 256);
        let label = predict(&m, &x).unwrap();
        let before = per_sample_gradient_norm(&m, &x, label).unwrap();
        // Push the predicted logit far ahead through its bias.
        m.params.fc2_b[label] += 30.0;
        let after = per_sample_gradient_norm(&m, &x, label).unwrap();
        assert!(after < 1e-6 * before.max(1.0), "{after}");
        let (_, g) = loss_and_gradients(&m, &[&x], &[label]).unwrap();
        assert_eq!(g.l2_norm(), per_sample_gradient_norm(&m, &x, label).unwrap());
    }
}

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;

use super::layers::{Cache, Layer, Mode};
use super::loss::bce_loss;
use super::spec::{infer_shapes, Activation, LayerSpec, ModelSpec, Shape};
use super::{sigmoid, NnError, Scalar, Tensor};

/// Everything a forward pass leaves behind for backpropagation.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
    batch: usize,
    mode: Mode,
    /// Output of the layer requested via `capture`, if any.
    pub captured: Option<Tensor<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Fingerprint of every piecewise-linear branch taken: ReLU on/off
    /// patterns and max-pool winners. Two passes with equal signatures lie on
    /// the same smooth piece of the network function.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for cache in &self.caches {
            match cache {
                Cache::Conv { out, .. } | Cache::Dense { out, .. } | Cache::Activation { out } => {
                    for v in out {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Cache::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}

/// Gradients for each trainable array, in [`Network::trainable`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub arrays: Vec<Vec<T>>,
}

/// A model spec with its parameters. The output sigmoid is folded out of the
/// layer stack so that the loss gradient can be taken with respect to the logit.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    spec: ModelSpec,
    shapes: Vec<Shape>,
    layers: Vec<Layer<T>>,
    /// Number of layers executed to produce the logit.
    exec_len: usize,
    pending: Option<(Tape<T>, Vec<T>)>,
}

fn output_layout(spec: &ModelSpec, shapes: &[Shape]) -> Result<usize, NnError> {
    if shapes.last() != Some(&Shape::Flat(1)) {
        return Err(NnError::InvalidSpec("final output must be a single unit".into()));
    }
    match spec.layers.last() {
        Some(LayerSpec::Dense { activation: Activation::Sigmoid, .. }) => Ok(spec.layers.len()),
        Some(LayerSpec::Sigmoid) => Ok(spec.layers.len() - 1),
        _ => Err(NnError::InvalidSpec("final layer must end in a sigmoid".into())),
    }
}

impl<T: Scalar> Network<T> {
    /// Fresh network with seeded Glorot-uniform weights.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, NnError> {
        let shapes = infer_shapes(&spec)?;
        let exec_len = output_layout(&spec, &shapes)?;
        let mut rng = crate::rng::rng_for(seed, &[0x1A1E]);
        let mut input = spec.input_shape();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (ls, &out) in spec.layers.iter().zip(&shapes) {
            layers.push(Layer::init(ls, input, &mut rng));
            input = out;
        }
        let mut net = Network { spec, shapes, layers, exec_len, pending: None };
        net.linearize_output();
        Ok(net)
    }

    /// Builds a network from externally supplied arrays, checking every shape.
    pub fn from_arrays(spec: ModelSpec, arrays: Vec<Vec<T>>) -> Result<Self, NnError> {
        let mut net = Network::new(spec, 0)?;
        let mut slots = net.arrays_mut();
        if slots.len() != arrays.len() {
            return Err(NnError::Format(format!("expected {} arrays, found {}", slots.len(), arrays.len())));
        }
        for ((name, slot, _), values) in slots.iter_mut().zip(arrays) {
            if slot.len() != values.len() {
                return Err(NnError::ShapeMismatch { expected: slot.dims().to_vec(), actual: vec![values.len()] }
                    .context_name(name));
            }
            slot.values = values;
        }
        Ok(net)
    }

    fn linearize_output(&mut self) {
        if self.exec_len == self.layers.len() {
            if let Some(Layer::Dense(d)) = self.layers.last_mut() {
                d.activation = Activation::Linear;
            }
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Output shape of every layer.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Every parameter array as `(name, tensor, trainable)`, named
    /// `layers.{index}.{role}`.
    pub fn arrays(&self) -> Vec<(String, &Tensor<T>, bool)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.arrays().into_iter().map(move |(role, t, tr)| (format!("layers.{i}.{role}"), t, tr)))
            .collect()
    }

    pub fn arrays_mut(&mut self) -> Vec<(String, &mut Tensor<T>, bool)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.arrays_mut().into_iter().map(move |(role, t, tr)| (format!("layers.{i}.{role}"), t, tr))
            })
            .collect()
    }

    /// Trainable arrays in gradient order.
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.arrays_mut().into_iter().filter(|(_, _, tr)| *tr).map(|(_, t, _)| t).collect()
    }

    pub fn trainable(&self) -> Vec<&Tensor<T>> {
        self.arrays().into_iter().filter(|(_, _, tr)| *tr).map(|(_, t, _)| t).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let arrays = self.arrays().into_iter().map(|(_, t, _)| t.cast::<U>().values).collect();
        Network::from_arrays(self.spec.clone(), arrays).expect("same spec")
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        let [h, w, c] = self.spec.input;
        let d = x.dims();
        if d.len() != 4 || d[0] == 0 || d[1..] != [h, w, c] {
            return Err(NnError::ShapeMismatch {
                expected: vec![x.dims().first().copied().unwrap_or(0), h, w, c],
                actual: d.to_vec(),
            });
        }
        Ok(())
    }

    /// Runs the network up to the logit. `capture` keeps a copy of that
    /// layer's output on the tape. Without `keep`, no backward caches are retained.
    pub fn forward_with<R: Rng>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
        keep: bool,
        capture: Option<usize>,
    ) -> Result<(Vec<T>, Tape<T>), NnError> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.exec_len);
        let mut captured = None;
        let mut act: Option<Tensor<T>> = None;
        for (i, layer) in self.layers[..self.exec_len].iter().enumerate() {
            let input = act.as_ref().unwrap_or(x);
            let (out, cache) = layer.forward(input, mode, rng, keep);
            if capture == Some(i) {
                captured = Some(out.clone());
            }
            caches.push(cache);
            act = Some(out);
        }
        let logits = act.expect("network has layers").values;
        Ok((logits, Tape { caches, batch: x.batch(), mode, captured }))
    }

    /// Forward pass keeping caches; returns logits.
    pub fn forward<R: Rng>(&self, x: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<(Vec<T>, Tape<T>), NnError> {
        self.forward_with(x, mode, rng, true, None)
    }

    /// Eval-mode probabilities.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Vec<T>, NnError> {
        let mut rng = crate::rng::rng_for(0, &[]);
        let (logits, _) = self.forward_with(x, Mode::Eval, &mut rng, false, None)?;
        Ok(logits.into_iter().map(sigmoid).collect())
    }

    /// Propagates `dlogits` back through the tape. Returns the gradient with
    /// respect to the output of layer `stop_after` (or `None` when running to
    /// the input) together with parameter gradients of the layers visited.
    fn propagate(
        &self,
        tape: &Tape<T>,
        dlogits: &[T],
        stop_after: Option<usize>,
        need_params: bool,
    ) -> (Option<Tensor<T>>, Vec<Vec<Vec<T>>>) {
        assert_eq!(dlogits.len(), tape.batch, "one logit gradient per sample");
        let lo = stop_after.map_or(0, |s| s + 1);
        let mut grad = Tensor::new(vec![tape.batch, 1], dlogits.to_vec());
        let mut per_layer = vec![Vec::new(); self.exec_len];
        for i in (lo..self.exec_len).rev() {
            let need_input = i > 0 || stop_after.is_some();
            let (dx, params) = self.layers[i].backward(&tape.caches[i], grad, need_input, need_params);
            per_layer[i] = params;
            match dx {
                Some(g) => grad = g,
                None => return (None, per_layer),
            }
        }
        (Some(grad), per_layer)
    }

    /// Parameter gradients for a tape and loss gradient with respect to the logits.
    pub fn backward_tape(&self, tape: &Tape<T>, dlogits: &[T]) -> Gradients<T> {
        let (_, per_layer) = self.propagate(tape, dlogits, None, true);
        let mut arrays = Vec::new();
        for (layer, grads) in self.layers.iter().zip(per_layer.into_iter().chain(std::iter::repeat(Vec::new()))) {
            let n_trainable = layer.arrays().iter().filter(|(_, _, tr)| *tr).count();
            if grads.is_empty() {
                // Layers after the logit (a folded sigmoid) carry no parameters.
                assert_eq!(n_trainable, 0);
            } else {
                arrays.extend(grads);
            }
        }
        Gradients { arrays }
    }

    /// Gradient of the summed logits' weighting `dlogits` with respect to the
    /// output of layer `layer`. Parameter gradients are skipped.
    pub fn grad_wrt_output(&self, tape: &Tape<T>, dlogits: &[T], layer: usize) -> Result<Tensor<T>, NnError> {
        if layer >= self.exec_len {
            return Err(NnError::InvalidSpec(format!("layer {layer} is past the logit")));
        }
        let (g, _) = self.propagate(tape, dlogits, Some(layer), false);
        let g = g.expect("stop layer yields a gradient");
        let dims = self.shapes[layer].batch_dims(tape.batch);
        Ok(g.reshape(dims))
    }

    /// Folds a train-mode tape's batch statistics into the moving averages.
    pub fn commit_batch_statistics(&mut self, tape: &Tape<T>) {
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            if let (Layer::BatchNorm(bn), Cache::BatchNorm { batch_stats: Some((mean, var)), .. }) = (layer, cache) {
                bn.commit(mean, var);
            }
        }
    }

    /// Train-mode forward that also updates moving statistics and keeps the
    /// tape for a following [`Network::backward`]. Returns probabilities.
    pub fn train_forward<R: Rng>(&mut self, x: &Tensor<T>, rng: &mut R) -> Result<Vec<T>, NnError> {
        let (logits, tape) = self.forward(x, Mode::Train, rng)?;
        self.commit_batch_statistics(&tape);
        let probs: Vec<T> = logits.into_iter().map(sigmoid).collect();
        self.pending = Some((tape, probs.clone()));
        Ok(probs)
    }

    /// Binary cross-entropy backward pass for the last [`Network::train_forward`].
    /// Writes into each trainable tensor's `grad` and returns the batch loss.
    pub fn backward(&mut self, labels: &[T]) -> Result<f64, NnError> {
        let (tape, probs) =
            self.pending.take().ok_or(NnError::StateError("backward called without a cached forward pass"))?;
        if labels.len() != probs.len() {
            return Err(NnError::ShapeMismatch { expected: vec![probs.len()], actual: vec![labels.len()] });
        }
        let loss = bce_loss(&probs, labels);
        let n = T::from_f64(probs.len() as f64);
        let dlogits: Vec<T> = probs.iter().zip(labels).map(|(&p, &y)| (p - y) / n).collect();
        let grads = self.backward_tape(&tape, &dlogits);
        for (t, g) in self.trainable_mut().into_iter().zip(grads.arrays) {
            t.grad = Some(g);
        }
        Ok(loss)
    }

    /// Total and trainable scalar counts of the instantiated arrays.
    pub fn param_counts(&self) -> (usize, usize) {
        self.arrays()
            .iter()
            .fold((0, 0), |(tot, tr), (_, t, trainable)| (tot + t.len(), tr + if *trainable { t.len() } else { 0 }))
    }
}

impl NnError {
    fn context_name(self, name: &str) -> NnError {
        match self {
            NnError::ShapeMismatch { expected, actual } => {
                NnError::Format(format!("{name}: expected dims {expected:?}, got {actual:?} values"))
            }
            other => other,
        }
    }
}

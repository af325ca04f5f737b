use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::losses::{BatchOutputs, LossReport};
use crate::rng::seeded;

const MAGIC: &[u8; 5] = b"NLAB1";

/// Affine layer `y = x W^T + b` with `W` stored out × in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self { weight: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients for upstream gradient `g` at input `x`
    /// and returns the gradient with respect to `x`.
    fn backward(&self, x: &Array2<f64>, g: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.weight += &g.t().dot(x);
        grad.bias += &g.sum_axis(Axis(0));
        g.dot(&self.weight)
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Encoder `f` (tanh after every layer), linear classifier `g` and the
/// projection head `h` (one tanh hidden layer).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub encoder: Vec<Dense>,
    pub classifier: Dense,
    pub projection_hidden: Dense,
    pub projection_out: Dense,
}

impl NetworkParams {
    /// Checks that layer sizes compose and all values are finite.
    pub fn from_layers(encoder: Vec<Dense>, classifier: Dense, projection_hidden: Dense, projection_out: Dense) -> Result<Self> {
        let p = Self { encoder, classifier, projection_hidden, projection_out };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers().into_iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::shape(format!("layer {i}: bias length {} for {} outputs", l.bias.len(), l.outputs())));
            }
            if !l.is_finite() {
                return Err(Error::Numerical(format!("layer {i} has non-finite parameters")));
            }
        }
        for w in self.encoder.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::shape(format!("encoder layer widths {} -> {} do not compose", w[0].outputs(), w[1].inputs())));
            }
        }
        let h = self.representation_dim();
        for (name, l) in [("classifier", &self.classifier), ("projection", &self.projection_hidden)] {
            if l.inputs() != h {
                return Err(Error::shape(format!("{name} expects {} inputs, representation has {h}", l.inputs())));
            }
        }
        if self.projection_out.inputs() != self.projection_hidden.outputs() {
            return Err(Error::shape("projection layers do not compose"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.first().unwrap_or(&self.classifier).inputs()
    }

    pub fn representation_dim(&self) -> usize {
        self.encoder.last().map_or(self.classifier.inputs(), Dense::outputs)
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.outputs()
    }

    pub fn projection_dim(&self) -> usize {
        self.projection_out.outputs()
    }

    /// Layers in file order: encoder, classifier, projection hidden, projection out.
    pub fn layers(&self) -> Vec<&Dense> {
        let mut v: Vec<&Dense> = self.encoder.iter().collect();
        v.extend([&self.classifier, &self.projection_hidden, &self.projection_out]);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = self.encoder.iter_mut().collect();
        v.extend([&mut self.classifier, &mut self.projection_hidden, &mut self.projection_out]);
        v
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let z = |l: &Dense| Dense::zeros(l.outputs(), l.inputs());
        Self {
            encoder: self.encoder.iter().map(z).collect(),
            classifier: z(&self.classifier),
            projection_hidden: z(&self.projection_hidden),
            projection_out: z(&self.projection_out),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let layers = self.layers();
        w.write_all(MAGIC)?;
        w.write_all(&(layers.len() as u32).to_le_bytes())?;
        for l in &layers {
            w.write_all(&(l.outputs() as u32).to_le_bytes())?;
            w.write_all(&(l.inputs() as u32).to_le_bytes())?;
        }
        for l in &layers {
            for v in l.weight.iter().chain(l.bias.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("not a model file: {m}"));
        let mut magic = [0u8; 5];
        bytes.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let read_u32 = |b: &mut &[u8]| -> Result<usize> {
            let mut x = [0u8; 4];
            b.read_exact(&mut x).map_err(|_| bad("truncated header"))?;
            Ok(u32::from_le_bytes(x) as usize)
        };
        let count = read_u32(&mut bytes)?;
        if count < 3 {
            return Err(bad("fewer than 3 layers"));
        }
        let mut dims = Vec::with_capacity(count);
        for _ in 0..count {
            let out = read_u32(&mut bytes)?;
            let inp = read_u32(&mut bytes)?;
            dims.push((out, inp));
        }
        let needed: usize = dims.iter().map(|(o, i)| 8 * (o * i + o)).sum();
        if bytes.len() != needed {
            return Err(bad(&format!("expected {needed} bytes of parameters, found {}", bytes.len())));
        }
        let mut floats = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut layers: Vec<Dense> = dims
            .iter()
            .map(|&(o, i)| {
                let weight = Array2::from_shape_fn((o, i), |_| floats.next().unwrap());
                let bias = Array1::from_shape_fn(o, |_| floats.next().unwrap());
                Dense { weight, bias }
            })
            .collect();
        let projection_out = layers.pop().unwrap();
        let projection_hidden = layers.pop().unwrap();
        let classifier = layers.pop().unwrap();
        Self::from_layers(layers, classifier, projection_hidden, projection_out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Builds a network with encoder widths `dims` (`dims[0]` is the input
/// dimension), `k` classes and projection width `p`. The projection hidden
/// layer is as wide as the representation. Weights and biases are drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_network(dims: &[usize], k: usize, p: usize, seed: u64) -> Result<NetworkParams> {
    if dims.is_empty() {
        return Err(Error::invalid("layer-size list is empty"));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(Error::invalid(format!("layer size {pos} is zero")));
    }
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {k}")));
    }
    if p == 0 {
        return Err(Error::invalid("projection dimension must be positive"));
    }
    let mut rng = seeded(seed);
    let mut layer = |out: usize, inp: usize| {
        let a = 1.0 / (inp as f64).sqrt();
        let weight = Array2::from_shape_fn((out, inp), |_| rng.random_range(-a..a));
        let bias = Array1::from_shape_fn(out, |_| rng.random_range(-a..a));
        Dense { weight, bias }
    };
    let encoder: Vec<Dense> = dims.windows(2).map(|w| layer(w[1], w[0])).collect();
    let h = *dims.last().unwrap();
    let classifier = layer(k, h);
    let projection_hidden = layer(h, h);
    let projection_out = layer(p, h);
    NetworkParams::from_layers(encoder, classifier, projection_hidden, projection_out)
}

/// Activations of one input through the encoder and projection head.
#[derive(Debug, Clone)]
struct PathCache {
    /// Input followed by the output of every encoder layer.
    activations: Vec<Array2<f64>>,
    projection_hidden: Array2<f64>,
}

impl PathCache {
    fn representation(&self) -> &Array2<f64> {
        self.activations.last().unwrap()
    }
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    main: PathCache,
    aug: Option<PathCache>,
}

fn encode(params: &NetworkParams, x: &Array2<f64>) -> (PathCache, Array2<f64>) {
    let mut activations = vec![x.clone()];
    for l in &params.encoder {
        let a = l.apply(activations.last().unwrap()).mapv_into(f64::tanh);
        activations.push(a);
    }
    let r = activations.last().unwrap();
    let projection_hidden = params.projection_hidden.apply(r).mapv_into(f64::tanh);
    let t = params.projection_out.apply(&projection_hidden);
    (PathCache { activations, projection_hidden }, t)
}

fn check_input(params: &NetworkParams, x: &Array2<f64>, what: &str) -> Result<()> {
    if x.ncols() != params.input_dim() {
        return Err(Error::shape(format!("{what} has {} columns, network expects {}", x.ncols(), params.input_dim())));
    }
    Ok(())
}

/// Runs `g(f(x))` and `h(f(x))`, plus `h(f(x_aug))` when an augmented view is
/// given. Labels are attached to the returned outputs for the losses.
pub fn forward(
    params: &NetworkParams,
    x: &Array2<f64>,
    aug: Option<&Array2<f64>>,
    labels: &[usize],
) -> Result<(BatchOutputs, ForwardCache)> {
    check_input(params, x, "batch")?;
    let (main, t) = encode(params, x);
    let logits = params.classifier.apply(main.representation());
    let mut outputs = BatchOutputs::new(logits, labels.to_vec())?.with_ssl(t)?;
    let aug = match aug {
        Some(xa) => {
            check_input(params, xa, "augmented batch")?;
            if xa.nrows() != x.nrows() {
                return Err(Error::shape("augmented batch has a different number of rows"));
            }
            let (cache, ta) = encode(params, xa);
            outputs = outputs.with_ssl_aug(ta)?;
            Some(cache)
        }
        None => None,
    };
    Ok((outputs, ForwardCache { main, aug }))
}

/// Logits only, for evaluation.
pub fn predict_logits(params: &NetworkParams, x: &Array2<f64>) -> Result<Array2<f64>> {
    check_input(params, x, "features")?;
    let mut a = x.clone();
    for l in &params.encoder {
        a = l.apply(&a).mapv_into(f64::tanh);
    }
    Ok(params.classifier.apply(&a))
}

fn backward_path(
    params: &NetworkParams,
    cache: &PathCache,
    grad_t: Option<&Array2<f64>>,
    mut grad_r: Array2<f64>,
    grads: &mut NetworkParams,
) {
    if let Some(gt) = grad_t {
        let mut gh = params.projection_out.backward(&cache.projection_hidden, gt, &mut grads.projection_out);
        gh.zip_mut_with(&cache.projection_hidden, |g, &h| *g *= 1.0 - h * h);
        grad_r += &params.projection_hidden.backward(cache.representation(), &gh, &mut grads.projection_hidden);
    }
    for (i, l) in params.encoder.iter().enumerate().rev() {
        grad_r.zip_mut_with(&cache.activations[i + 1], |g, &a| *g *= 1.0 - a * a);
        grad_r = l.backward(&cache.activations[i], &grad_r, &mut grads.encoder[i]);
    }
}

/// Parameter gradients of the loss whose output gradients are in `report`.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, report: &LossReport) -> Result<NetworkParams> {
    let b = cache.main.activations[0].nrows();
    if report.grad_logits.dim() != (b, params.num_classes()) {
        return Err(Error::shape("logit gradient does not match the forward batch"));
    }
    let mut grads = params.zeros_like();
    let grad_r = params.classifier.backward(cache.main.representation(), &report.grad_logits, &mut grads.classifier);
    backward_path(params, &cache.main, report.grad_ssl.as_ref(), grad_r, &mut grads);
    if let Some(g) = &report.grad_ssl_aug {
        let aug = cache
            .aug
            .as_ref()
            .ok_or_else(|| Error::invalid("augmented-view gradient without an augmented forward pass"))?;
        let zero = Array2::zeros((b, params.representation_dim()));
        backward_path(params, aug, Some(g), zero, &mut grads);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn same_seed_same_params() {
        let a = init_network(&[3, 5, 4], 2, 3, 9).unwrap();
        assert_eq!(a, init_network(&[3, 5, 4], 2, 3, 9).unwrap());
        assert_ne!(a, init_network(&[3, 5, 4], 2, 3, 10).unwrap());
    }

    #[test]
    fn init_range_scales_with_fan_in() {
        let p = init_network(&[16, 4], 2, 2, 1).unwrap();
        let w = &p.encoder[0].weight;
        assert!(w.iter().all(|v| v.abs() < 0.25));
        assert!(w.iter().any(|v| v.abs() > 0.2));
    }

    #[test]
    fn invalid_dims() {
        assert!(init_network(&[], 2, 2, 0).is_err());
        assert!(init_network(&[3, 0], 2, 2, 0).is_err());
        let mut p = init_network(&[3, 4, 5], 2, 2, 0).unwrap();
        p.encoder[1] = Dense::zeros(5, 3);
        assert!(p.validate().is_err());
    }

    #[test]
    fn output_shapes() {
        let p = init_network(&[3, 6, 4], 5, 7, 2).unwrap();
        let x = Array2::ones((9, 3));
        let (o, _) = forward(&p, &x, Some(&x), &[0; 9]).unwrap();
        assert_eq!(o.logits.dim(), (9, 5));
        assert_eq!(o.ssl_embeddings.unwrap().dim(), (9, 7));
        assert_eq!(o.ssl_embeddings_aug.unwrap().dim(), (9, 7));
        assert!(forward(&p, &Array2::ones((9, 2)), None, &[0; 9]).is_err());
    }

    #[test]
    fn hand_computed_toy_network() {
        let eye = Dense { weight: array![[1.0, 0.0], [0.0, 1.0]], bias: array![0.0, 0.0] };
        let p = NetworkParams::from_layers(vec![eye.clone()], eye.clone(), eye.clone(), eye).unwrap();
        let x = array![[0.5, -1.0], [0.0, 2.0]];
        let (o, _) = forward(&p, &x, None, &[0, 1]).unwrap();
        let r = x.mapv(f64::tanh);
        assert_eq!(o.logits, r);
        assert_eq!(o.ssl_embeddings.unwrap(), r.mapv(f64::tanh));
        assert!((o.logits[[0, 0]] - 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn no_hidden_layer_is_affine() {
        let p = init_network(&[3], 2, 2, 4).unwrap();
        let f = |x: Array2<f64>| predict_logits(&p, &x).unwrap();
        let (a, b) = (array![[1.0, 2.0, -1.0]], array![[0.5, -3.0, 2.0]]);
        let mid = f((&a + &b) * 0.5);
        let avg = (f(a) + f(b)) * 0.5;
        assert!((mid - avg).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn duplicated_rows_identical_outputs() {
        let p = init_network(&[2, 8, 8], 3, 4, 5).unwrap();
        let x = array![[0.3, -0.7], [0.3, -0.7]];
        let (o, _) = forward(&p, &x, None, &[0, 0]).unwrap();
        assert_eq!(o.logits.row(0), o.logits.row(1));
    }

    #[test]
    fn large_inputs_stay_finite() {
        let p = init_network(&[2, 8, 8], 3, 4, 5).unwrap();
        let x = array![[1e3, -1e3], [-1e3, 1e3]];
        let (o, _) = forward(&p, &x, Some(&x), &[0, 1]).unwrap();
        assert!(o.logits.iter().chain(o.ssl_embeddings.unwrap().iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn binary_round_trip() {
        let p = init_network(&[3, 5, 4], 3, 2, 11).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..5], b"NLAB1");
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 5);
        assert_eq!(bytes.len(), 9 + 5 * 8 + 8 * p.parameter_count());
        assert_eq!(NetworkParams::from_bytes(&bytes).unwrap(), p);
        assert!(NetworkParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(NetworkParams::from_bytes(b"NLAB2").is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        p.save(&path).unwrap();
        assert_eq!(NetworkParams::load(&path).unwrap(), p);
    }
}

//! Neural decoders: a plain MLP and a residual MLP with batch normalization.
//!
//! MLP with depth `l`: `l` hidden affine+ReLU layers and an affine output
//! layer (identity activation); `l = 0` is a single affine map.
//!
//! Residual MLP with `l` blocks:
//!
//! ```text
//! h0 = W0 x + b0
//! h_i = F_{2i}(F_{2i-1}(h_{i-1})) + h_{i-1}      i = 1..l
//! y   = W_{2l+1} relu(BN(h_l)) + b_{2l+1}
//! F_j(h) = W_j relu(BN_j(h)) + b_j
//! ```
//!
//! The output head is its own BN -> ReLU -> affine unit.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{BnMode, Tape, Tensor, Var, BN_EPS};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Exponential moving average factor for batchnorm running statistics.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Mlp,
    ResMlp,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Mlp => "mlp",
            Family::ResMlp => "resmlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mlp" => Some(Family::Mlp),
            "resmlp" => Some(Family::ResMlp),
            _ => None,
        }
    }
}

/// Network shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetArch {
    pub family: Family,
    /// Hidden layers (MLP) or residual blocks (ResMLP).
    pub depth: usize,
    pub hidden: usize,
    /// `2 n L` for a decoder of `n x L` received blocks.
    pub input_width: usize,
    /// `2^k` logits.
    pub output_width: usize,
}

impl NetArch {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.input_width == 0 || self.output_width == 0 {
            return Err(Error::arg("network widths must be positive"));
        }
        if self.family == Family::ResMlp && self.depth == 0 {
            return Err(Error::arg("residual MLP needs at least one block"));
        }
        Ok(())
    }

    /// `(out, in)` shape of every affine layer, in forward order.
    pub fn affine_shapes(&self) -> Vec<(usize, usize)> {
        let (i, h, o, l) = (self.input_width, self.hidden, self.output_width, self.depth);
        match self.family {
            Family::Mlp if l == 0 => vec![(o, i)],
            Family::Mlp => {
                let mut v = vec![(h, i)];
                v.extend(core::iter::repeat_n((h, h), l - 1));
                v.push((o, h));
                v
            }
            Family::ResMlp => {
                let mut v = vec![(h, i)];
                v.extend(core::iter::repeat_n((h, h), 2 * l));
                v.push((o, h));
                v
            }
        }
    }

    /// Feature width of every batchnorm layer.
    pub fn norm_widths(&self) -> Vec<usize> {
        match self.family {
            Family::Mlp => Vec::new(),
            Family::ResMlp => vec![self.hidden; 2 * self.depth + 1],
        }
    }

    /// Trainable scalars (weights, biases, gamma and beta).
    pub fn param_count(&self) -> usize {
        let a: usize = self.affine_shapes().iter().map(|(o, i)| o * i + o).sum();
        let b: usize = self.norm_widths().iter().map(|f| 2 * f).sum();
        a + b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineLayer {
    /// `(out, in)`.
    pub w: Tensor,
    /// `(1, out)`.
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl NormLayer {
    fn new(width: usize) -> Self {
        Self {
            gamma: Tensor::filled(1, width, 1.0),
            beta: Tensor::zeros(1, width),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    /// Fold a batch's mean and biased variance into the running statistics.
    pub fn update(&mut self, mean: &[f64], var: &[f64], batch: usize, momentum: f64) {
        let unbias = if batch > 1 { batch as f64 / (batch - 1) as f64 } else { 1.0 };
        for (r, m) in self.running_mean.iter_mut().zip(mean) {
            *r = momentum * *r + (1.0 - momentum) * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(var) {
            *r = momentum * *r + (1.0 - momentum) * v * unbias;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetWeights {
    pub affine: Vec<AffineLayer>,
    pub norm: Vec<NormLayer>,
}

/// Glorot-uniform weights, zero biases, `gamma = 1`, `beta = 0`.
pub fn init_weights(arch: &NetArch, rng: &mut RngStream) -> Result<NetWeights> {
    arch.validate()?;
    let affine = arch
        .affine_shapes()
        .into_iter()
        .map(|(o, i)| {
            let lim = libm::sqrt(6.0 / (o + i) as f64);
            let data = (0..o * i).map(|_| rng.uniform_range(-lim, lim)).collect();
            AffineLayer { w: Tensor::new(o, i, data).expect("shape"), b: Tensor::zeros(1, o) }
        })
        .collect();
    let norm = arch.norm_widths().into_iter().map(NormLayer::new).collect();
    Ok(NetWeights { affine, norm })
}

/// Forward-pass mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetMode {
    Train,
    Eval,
}

/// Nodes recorded by [`Network::forward`].
#[derive(Clone, Debug)]
pub struct NetForward {
    pub logits: Var,
    /// Parameter nodes in [`Network::tensors`] order.
    pub params: Vec<Var>,
    /// Batchnorm output nodes, one per norm layer.
    pub norms: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: NetArch,
    pub weights: NetWeights,
}

impl Network {
    pub fn new(arch: NetArch, rng: &mut RngStream) -> Result<Self> {
        let weights = init_weights(&arch, rng)?;
        Ok(Self { arch, weights })
    }

    pub fn build_mlp(arch: NetArch, rng: &mut RngStream) -> Result<Self> {
        if arch.family != Family::Mlp {
            return Err(Error::arg("build_mlp needs the MLP family"));
        }
        Self::new(arch, rng)
    }

    pub fn build_resmlp(arch: NetArch, rng: &mut RngStream) -> Result<Self> {
        if arch.family != Family::ResMlp {
            return Err(Error::arg("build_resmlp needs the ResMLP family"));
        }
        Self::new(arch, rng)
    }

    /// Check that stored weights agree with the architecture.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let shapes = self.arch.affine_shapes();
        if shapes.len() != self.weights.affine.len() {
            return Err(Error::arg("affine layer count does not match architecture"));
        }
        for (&(o, i), layer) in shapes.iter().zip(&self.weights.affine) {
            if layer.w.shape() != (o, i) || layer.b.shape() != (1, o) {
                return Err(Error::shape("network affine", layer.w.shape(), (o, i)));
            }
        }
        let widths = self.arch.norm_widths();
        if widths.len() != self.weights.norm.len() {
            return Err(Error::arg("norm layer count does not match architecture"));
        }
        for (&f, n) in widths.iter().zip(&self.weights.norm) {
            if n.gamma.shape() != (1, f)
                || n.beta.shape() != (1, f)
                || n.running_mean.len() != f
                || n.running_var.len() != f
            {
                return Err(Error::arg("norm layer width does not match architecture"));
            }
            if n.running_var.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::arg("running variance must be positive"));
            }
        }
        Ok(())
    }

    /// Trainable tensors: every affine `(W, b)`, then every norm `(gamma, beta)`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for a in &self.weights.affine {
            v.push(&a.w);
            v.push(&a.b);
        }
        for n in &self.weights.norm {
            v.push(&n.gamma);
            v.push(&n.beta);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for a in &mut self.weights.affine {
            v.push(&mut a.w);
            v.push(&mut a.b);
        }
        for n in &mut self.weights.norm {
            v.push(&mut n.gamma);
            v.push(&mut n.beta);
        }
        v
    }

    /// Record the network on `tape` for a batch `x: (batch, input_width)`.
    pub fn forward(&self, tape: &mut Tape, x: Var, mode: NetMode) -> Result<NetForward> {
        let (_, w) = tape.shape(x);
        if w != self.arch.input_width {
            return Err(Error::shape("network input", tape.shape(x), (1, self.arch.input_width)));
        }
        let params: Vec<Var> = self.tensors().into_iter().map(|t| tape.param(t.clone())).collect();
        self.forward_with(tape, x, &params, mode)
    }

    /// Like [`forward`](Network::forward) but with caller-owned parameter
    /// nodes (in [`tensors`](Network::tensors) order).
    pub fn forward_with(&self, tape: &mut Tape, x: Var, params: &[Var], mode: NetMode) -> Result<NetForward> {
        let na = self.weights.affine.len();
        if params.len() != 2 * na + 2 * self.weights.norm.len() {
            return Err(Error::arg("parameter node count does not match network"));
        }
        let aff = |i: usize| (params[2 * i], params[2 * i + 1]);
        let nrm = |i: usize| (params[2 * na + 2 * i], params[2 * na + 2 * i + 1]);
        let mut norms = Vec::new();
        let logits = match self.arch.family {
            Family::Mlp => {
                let mut h = x;
                for i in 0..na {
                    let (w, b) = aff(i);
                    h = tape.affine(h, w, b)?;
                    if i + 1 < na {
                        h = tape.relu(h);
                    }
                }
                h
            }
            Family::ResMlp => {
                let (w0, b0) = aff(0);
                let mut h = tape.affine(x, w0, b0)?;
                let mut unit = |tape: &mut Tape, h: Var, j: usize, a: usize| -> Result<Var> {
                    let (g, be) = nrm(j);
                    let layer = &self.weights.norm[j];
                    let bn_mode = match mode {
                        NetMode::Train => BnMode::Train,
                        NetMode::Eval => BnMode::Eval { mean: &layer.running_mean, var: &layer.running_var },
                    };
                    let n = tape.batchnorm(h, g, be, bn_mode)?;
                    norms.push(n);
                    let r = tape.relu(n);
                    let (w, b) = aff(a);
                    tape.affine(r, w, b)
                };
                for blk in 0..self.arch.depth {
                    let t = unit(tape, h, 2 * blk, 1 + 2 * blk)?;
                    let t = unit(tape, t, 2 * blk + 1, 2 + 2 * blk)?;
                    h = tape.add(t, h)?;
                }
                unit(tape, h, 2 * self.arch.depth, 2 * self.arch.depth + 1)?
            }
        };
        Ok(NetForward { logits, params: params.to_vec(), norms })
    }

    /// Fold the batch statistics of a train-mode forward into the running
    /// statistics.
    pub fn update_running_stats(&mut self, tape: &Tape, fwd: &NetForward, momentum: f64) {
        for (layer, &v) in self.weights.norm.iter_mut().zip(&fwd.norms) {
            if let Some((mean, var)) = tape.batch_stats(v) {
                let batch = tape.shape(v).0;
                layer.update(mean, var, batch, momentum);
            }
        }
    }

    /// Eval-mode forward pass of one input vector, without a tape.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.arch.input_width {
            return Err(Error::shape("network input", (1, x.len()), (1, self.arch.input_width)));
        }
        let a = &self.weights.affine;
        let out = match self.arch.family {
            Family::Mlp => {
                let mut h = x.to_vec();
                for (i, layer) in a.iter().enumerate() {
                    h = affine_vec(layer, &h);
                    if i + 1 < a.len() {
                        relu_in_place(&mut h);
                    }
                }
                h
            }
            Family::ResMlp => {
                let unit = |h: &[f64], j: usize, k: usize| {
                    let mut t = norm_vec(&self.weights.norm[j], h);
                    relu_in_place(&mut t);
                    affine_vec(&a[k], &t)
                };
                let mut h = affine_vec(&a[0], x);
                for blk in 0..self.arch.depth {
                    let t = unit(&h, 2 * blk, 1 + 2 * blk);
                    let t = unit(&t, 2 * blk + 1, 2 + 2 * blk);
                    for (hv, tv) in h.iter_mut().zip(&t) {
                        *hv += tv;
                    }
                }
                unit(&h, 2 * self.arch.depth, 2 * self.arch.depth + 1)
            }
        };
        Ok(out)
    }
}

fn affine_vec(layer: &AffineLayer, x: &[f64]) -> Vec<f64> {
    let (o, i) = layer.w.shape();
    let w = layer.w.data();
    (0..o)
        .map(|r| {
            let row = &w[r * i..(r + 1) * i];
            layer.b.data()[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn norm_vec(layer: &NormLayer, x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(j, v)| {
            let xhat = (v - layer.running_mean[j]) / libm::sqrt(layer.running_var[j] + BN_EPS);
            layer.gamma.data()[j] * xhat + layer.beta.data()[j]
        })
        .collect()
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_sampled;

    fn arch(family: Family, depth: usize, hidden: usize) -> NetArch {
        NetArch { family, depth, hidden, input_width: 8, output_width: 4 }
    }

    fn rand_input(rows: usize, cols: usize, rng: &mut RngStream) -> Tensor {
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    fn zero_weights(net: &mut Network) {
        for t in net.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn mlp_param_count_formula() {
        for (l, h, i, o) in [(1, 256, 8, 4), (2, 500, 16, 256), (3, 1000, 8, 64), (1, 3, 2, 2)] {
            let a = NetArch { family: Family::Mlp, depth: l, hidden: h, input_width: i, output_width: o };
            assert_eq!(a.param_count(), i * h + h + (l - 1) * (h * h + h) + h * o + o);
        }
        let a0 = arch(Family::Mlp, 0, 16);
        assert_eq!(a0.param_count(), 8 * 4 + 4);
    }

    #[test]
    fn resmlp_needs_a_block() {
        assert!(arch(Family::ResMlp, 0, 4).validate().is_err());
        assert!(arch(Family::Mlp, 0, 4).validate().is_ok());
        assert!(arch(Family::Mlp, 1, 0).validate().is_err());
        let mut rng = RngStream::new(0, 0);
        assert!(Network::build_mlp(arch(Family::ResMlp, 1, 4), &mut rng).is_err());
        assert!(Network::build_resmlp(arch(Family::Mlp, 1, 4), &mut rng).is_err());
    }

    #[test]
    fn depth_zero_mlp_is_affine() {
        let mut rng = RngStream::new(1, 0);
        let net = Network::build_mlp(arch(Family::Mlp, 0, 16), &mut rng).unwrap();
        let x: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let y = net.infer(&x).unwrap();
        let layer = &net.weights.affine[0];
        for (r, yv) in y.iter().enumerate() {
            let expect: f64 = (0..8).map(|c| layer.w.get(r, c) * x[c]).sum::<f64>() + layer.b.data()[r];
            assert!((yv - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_weight_mlp_outputs_output_bias() {
        let mut rng = RngStream::new(2, 0);
        let mut net = Network::build_mlp(arch(Family::Mlp, 1, 4), &mut rng).unwrap();
        zero_weights(&mut net);
        net.weights.affine[1].b = Tensor::row(&[0.5, -1.0, 2.0, 0.0]);
        let x: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        assert_eq!(net.infer(&x).unwrap(), vec![0.5, -1.0, 2.0, 0.0]);
    }

    #[test]
    fn init_conventions() {
        let a = arch(Family::ResMlp, 2, 16);
        let w1 = init_weights(&a, &mut RngStream::new(3, 0)).unwrap();
        let w2 = init_weights(&a, &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(w1, w2);
        for n in &w1.norm {
            assert!(n.gamma.data().iter().all(|&g| g == 1.0));
            assert!(n.beta.data().iter().all(|&b| b == 0.0));
        }
        for (layer, (o, i)) in w1.affine.iter().zip(a.affine_shapes()) {
            let lim = libm::sqrt(6.0 / (o + i) as f64);
            assert!(layer.w.data().iter().all(|v| v.abs() <= lim));
            assert!(layer.b.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_blocks_keep_residual_stream() {
        let mut rng = RngStream::new(4, 0);
        let a = arch(Family::ResMlp, 3, 6);
        let mut net = Network::build_resmlp(a, &mut rng).unwrap();
        for k in 1..=6 {
            let layer = &mut net.weights.affine[k];
            layer.w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = rand_input(5, 8, &mut rng);
        let mut tape = Tape::new();
        let xi = tape.input(x);
        let fwd = net.forward(&mut tape, xi, NetMode::Train).unwrap();
        // norms[2*blk] consumes h_{blk}; every block input equals h0.
        let h0 = tape.value(fwd.norms[0]).clone();
        for blk in 1..3 {
            assert_eq!(tape.value(fwd.norms[2 * blk]), &h0);
        }
        assert_eq!(tape.value(fwd.norms[6]), &h0);
    }

    #[test]
    fn tape_and_plain_inference_agree() {
        for family in [Family::Mlp, Family::ResMlp] {
            let mut rng = RngStream::new(5, 0);
            let mut net = Network::new(arch(family, 2, 12), &mut rng).unwrap();
            for layer in &mut net.weights.norm {
                for (j, v) in layer.running_mean.iter_mut().enumerate() {
                    *v = 0.1 * j as f64;
                }
            }
            let x = rand_input(3, 8, &mut rng);
            let mut tape = Tape::new();
            let xi = tape.input(x.clone());
            let fwd = net.forward(&mut tape, xi, NetMode::Eval).unwrap();
            for r in 0..3 {
                let plain = net.infer(x.row_slice(r)).unwrap();
                for (a, b) in plain.iter().zip(tape.value(fwd.logits).row_slice(r)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_batch_gives_beta_driven_output() {
        let mut rng = RngStream::new(6, 0);
        let net = Network::build_resmlp(arch(Family::ResMlp, 1, 5), &mut rng).unwrap();
        let row: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&row);
        }
        let mut tape = Tape::new();
        let xi = tape.input(Tensor::new(4, 8, data).unwrap());
        let fwd = net.forward(&mut tape, xi, NetMode::Train).unwrap();
        // beta = 0 so every normalized activation is zero.
        assert!(tape.value(fwd.norms[0]).data().iter().all(|v| v.abs() < 1e-12));
        let out = tape.value(fwd.logits);
        for r in 1..4 {
            assert_eq!(out.row_slice(r), out.row_slice(0));
        }
    }

    fn net_loss(net: &Network, tape: &mut Tape, p: &[Var], x: &Tensor, labels: &[usize], mode: NetMode) -> Result<Var> {
        let xi = tape.input(x.clone());
        let fwd = net.forward_with(tape, xi, p, mode)?;
        tape.softmax_cross_entropy(fwd.logits, labels)
    }

    #[test]
    fn mlp_two_layers_gradcheck() {
        let mut rng = RngStream::new(7, 0);
        let net = Network::build_mlp(arch(Family::Mlp, 2, 256), &mut rng).unwrap();
        let x = rand_input(8, 8, &mut rng);
        let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
        let params: Vec<Tensor> = net.tensors().into_iter().cloned().collect();
        let err = grad_check_sampled(|t, p| net_loss(&net, t, p, &x, &labels, NetMode::Train), &params, 1e-6, 200, 1)
            .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn resmlp_gradcheck_train_mode() {
        let mut rng = RngStream::new(8, 0);
        let net = Network::build_resmlp(arch(Family::ResMlp, 1, 256), &mut rng).unwrap();
        let x = rand_input(32, 8, &mut rng);
        let labels: Vec<usize> = (0..32).map(|i| i % 4).collect();
        let params: Vec<Tensor> = net.tensors().into_iter().cloned().collect();
        let err =
            grad_check_sampled(|t, p| net_loss(&net, t, p, &x, &labels, NetMode::Train), &params, 1e-6, 60, 2).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn running_stats_converge_to_train_mode() {
        let mut rng = RngStream::new(9, 0);
        let mut net = Network::build_resmlp(arch(Family::ResMlp, 1, 16), &mut rng).unwrap();
        // After t batches the running estimates still carry 0.99^t of their
        // initial values plus an EMA noise floor of about
        // sqrt((1 - momentum) / batch).
        let batch = 1024;
        for _ in 0..1500 {
            let x = rand_input(batch, 8, &mut rng);
            let mut tape = Tape::new();
            let xi = tape.input(x);
            let fwd = net.forward(&mut tape, xi, NetMode::Train).unwrap();
            net.update_running_stats(&tape, &fwd, BN_MOMENTUM);
        }
        // a large comparison batch so its own statistics are close to the
        // population ones
        let batch = 1 << 18;
        let x = rand_input(batch, 8, &mut rng);
        let mut tape = Tape::new();
        let xi = tape.input(x.clone());
        let fwd = net.forward(&mut tape, xi, NetMode::Train).unwrap();
        let train_out = tape.value(fwd.logits);
        for r in 0..16_384 {
            let eval = net.infer(x.row_slice(r)).unwrap();
            for (a, b) in eval.iter().zip(train_out.row_slice(r)) {
                assert!((a - b).abs() < 0.1, "{a} vs {b}");
            }
        }
    }
}

//! Pose encoder (MLP), bidirectional GRU stack and the classification head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::tensor::Tensor;
use crate::rng::{self, Rng};

/// Anything holding trainable tensors in a fixed order.
pub trait Parameters {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// in x out
    pub weight: Tensor,
    /// 1 x out
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Uniform fan-in initialization, bias zero.
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / input.max(1) as f64).sqrt() * 0.5;
        Linear {
            weight: Tensor::random_uniform(input, output, bound, rng),
            bias: Tensor::zeros(1, output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::zeros(input, output),
            bias: Tensor::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundLinear {
        BoundLinear {
            weight: g.leaf(self.weight.clone()),
            bias: g.leaf(self.bias.clone()),
        }
    }
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.weight)?;
        g.add_row(y, self.bias)
    }

    fn vars(&self, out: &mut Vec<Var>) {
        out.push(self.weight);
        out.push(self.bias);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub d_pose: usize,
    pub d_view: usize,
}

impl EncoderConfig {
    /// 2N -> 256 -> 256 -> (32 + 8).
    pub fn for_joints(num_joints: usize) -> Self {
        EncoderConfig {
            input_dim: 2 * num_joints,
            hidden: vec![256, 256],
            d_pose: 32,
            d_view: 8,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.d_pose + self.d_view
    }
}

/// Per-frame pose encoder: affine + ReLU layers and a linear output of
/// width `d_pose + d_view`, split as `z = (z_pose, z_view)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Linear>,
    pub d_pose: usize,
    pub d_view: usize,
}

pub struct BoundEncoder {
    pub layers: Vec<BoundLinear>,
    d_pose: usize,
    d_view: usize,
}

impl EncoderParams {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        if cfg.d_pose == 0 || cfg.d_view == 0 || cfg.input_dim == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        let mut rng = rng::seeded(seed);
        let mut widths = vec![cfg.input_dim];
        widths.extend(&cfg.hidden);
        widths.push(cfg.embedding_dim());
        let layers = widths
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], &mut rng))
            .collect();
        Ok(EncoderParams {
            layers,
            d_pose: cfg.d_pose,
            d_view: cfg.d_view,
        })
    }

    /// Checks the layer chain and the `d = d_pose + d_view` split.
    pub fn from_layers(layers: Vec<Linear>, d_pose: usize, d_view: usize) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::Config("encoder needs at least one layer".into()))?;
        if last.output_dim() != d_pose + d_view {
            return Err(Error::Shape(format!(
                "final width {} != d_pose + d_view = {}",
                last.output_dim(),
                d_pose + d_view
            )));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Shape("encoder layer widths do not chain".into()));
            }
        }
        Ok(EncoderParams {
            layers,
            d_pose,
            d_view,
        })
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            input_dim: self.input_dim(),
            hidden: self.layers[..self.layers.len() - 1]
                .iter()
                .map(Linear::output_dim)
                .collect(),
            d_pose: self.d_pose,
            d_view: self.d_view,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.d_pose + self.d_view
    }

    pub fn bind(&self, g: &mut Graph) -> BoundEncoder {
        BoundEncoder {
            layers: self.layers.iter().map(|l| l.bind(g)).collect(),
            d_pose: self.d_pose,
            d_view: self.d_view,
        }
    }
}

impl Parameters for EncoderParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("encoder.{i}.weight"), &l.weight),
                    (format!("encoder.{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

impl BoundEncoder {
    /// B x 2N -> B x d.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let input = self.layers[0];
        let width = g.shape(input.weight)[0];
        if g.shape(x)[1] != width {
            return Err(Error::Shape(format!(
                "encoder expects width {width}, got {:?}",
                g.shape(x)
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Splits a B x d embedding into `(z_pose, z_view)`.
    pub fn split(&self, g: &mut Graph, z: Var) -> Result<(Var, Var)> {
        let pose = g.slice_cols(z, 0, self.d_pose)?;
        let view = g.slice_cols(z, self.d_pose, self.d_pose + self.d_view)?;
        Ok((pose, view))
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.vars(&mut out);
        }
        out
    }
}

/// Evaluates the encoder on a B x 2N batch.
pub fn encoder_forward(params: &EncoderParams, batch: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let enc = params.bind(&mut g);
    let x = g.constant(batch.clone());
    let z = enc.forward(&mut g, x)?;
    Ok(g.value(z).clone())
}

/// One GRU direction. Gate order in the fused input weights is
/// (update, reset, candidate); the reset gate multiplies the hidden state
/// before the candidate's recurrent affine:
///
/// ```text
/// z  = σ(x Wz + h Uz + bz)
/// r  = σ(x Wr + h Ur + br)
/// n  = tanh(x Wn + (r ⊙ h) Un + bn)
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    /// in x 3H
    pub w_input: Tensor,
    /// 1 x 3H
    pub bias: Tensor,
    /// H x 2H (update, reset)
    pub u_gates: Tensor,
    /// H x H
    pub u_candidate: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundGruCell {
    w_input: Var,
    bias: Var,
    u_gates: Var,
    u_candidate: Var,
}

impl GruCell {
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GruCell {
            w_input: Tensor::random_uniform(input, 3 * hidden, bound, rng),
            bias: Tensor::zeros(1, 3 * hidden),
            u_gates: Tensor::random_uniform(hidden, 2 * hidden, bound, rng),
            u_candidate: Tensor::random_uniform(hidden, hidden, bound, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruCell {
            w_input: Tensor::zeros(input, 3 * hidden),
            bias: Tensor::zeros(1, 3 * hidden),
            u_gates: Tensor::zeros(hidden, 2 * hidden),
            u_candidate: Tensor::zeros(hidden, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u_candidate.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.rows()
    }

    fn bind(&self, g: &mut Graph) -> BoundGruCell {
        BoundGruCell {
            w_input: g.leaf(self.w_input.clone()),
            bias: g.leaf(self.bias.clone()),
            u_gates: g.leaf(self.u_gates.clone()),
            u_candidate: g.leaf(self.u_candidate.clone()),
        }
    }

    fn tensors(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("w_input", &self.w_input),
            ("bias", &self.bias),
            ("u_gates", &self.u_gates),
            ("u_candidate", &self.u_candidate),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.w_input,
            &mut self.bias,
            &mut self.u_gates,
            &mut self.u_candidate,
        ]
    }
}

impl BoundGruCell {
    fn vars(&self, out: &mut Vec<Var>) {
        out.extend([self.w_input, self.bias, self.u_gates, self.u_candidate]);
    }

    /// Runs the recurrence over `steps` (T pieces of B x 3H projected input),
    /// in reverse order when `reverse` is set. Returns B x H states per step,
    /// in time order.
    fn run(&self, g: &mut Graph, projected: &[Var], batch: usize, reverse: bool) -> Result<Vec<Var>> {
        let hidden = g.shape(self.u_candidate)[0];
        let mut h = g.constant(Tensor::zeros(batch, hidden));
        let mut out = vec![h; projected.len()];
        let order: Vec<usize> = if reverse {
            (0..projected.len()).rev().collect()
        } else {
            (0..projected.len()).collect()
        };
        for t in order {
            let xp = projected[t];
            let x_gates = g.slice_cols(xp, 0, 2 * hidden)?;
            let x_cand = g.slice_cols(xp, 2 * hidden, 3 * hidden)?;
            let hu = g.matmul(h, self.u_gates)?;
            let pre = g.add(x_gates, hu)?;
            let gates = g.sigmoid(pre);
            let z = g.slice_cols(gates, 0, hidden)?;
            let r = g.slice_cols(gates, hidden, 2 * hidden)?;
            let rh = g.mul(r, h)?;
            let rhu = g.matmul(rh, self.u_candidate)?;
            let cand_pre = g.add(x_cand, rhu)?;
            let n = g.tanh(cand_pre);
            let diff = g.sub(h, n)?;
            let zd = g.mul(z, diff)?;
            h = g.add(n, zd)?;
            out[t] = h;
        }
        Ok(out)
    }
}

/// Forward and backward GRU cells over the same input.
#[derive(Clone, Debug, PartialEq)]
pub struct BiGruLayer {
    pub forward: GruCell,
    pub backward: GruCell,
}

impl BiGruLayer {
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        BiGruLayer {
            forward: GruCell::init(input, hidden, rng),
            backward: GruCell::init(input, hidden, rng),
        }
    }
}

pub struct BoundBiGru {
    layers: Vec<(BoundGruCell, BoundGruCell)>,
}

impl BoundBiGru {
    /// Input: (T·B) x F stacked time-major. Output: per-step B x 2H states
    /// of the last layer, plus the same stacked as (T·B) x 2H.
    pub fn forward(&self, g: &mut Graph, x: Var, steps: usize) -> Result<(Vec<Var>, Var)> {
        let rows = g.shape(x)[0];
        if steps == 0 || rows % steps != 0 {
            return Err(Error::Shape(format!("{rows} rows do not split into {steps} steps")));
        }
        let batch = rows / steps;
        let mut input = x;
        let mut per_step = Vec::new();
        for (fwd, bwd) in &self.layers {
            let mut outs = Vec::with_capacity(2);
            for (cell, reverse) in [(fwd, false), (bwd, true)] {
                let xw = g.matmul(input, cell.w_input)?;
                let proj = g.add_row(xw, cell.bias)?;
                let pieces = (0..steps)
                    .map(|t| g.slice_rows(proj, t * batch, (t + 1) * batch))
                    .collect::<Result<Vec<_>>>()?;
                outs.push(cell.run(g, &pieces, batch, reverse)?);
            }
            per_step = (0..steps)
                .map(|t| g.concat_cols(&[outs[0][t], outs[1][t]]))
                .collect::<Result<Vec<_>>>()?;
            input = g.concat_rows(&per_step)?;
        }
        Ok((per_step, input))
    }

    fn vars(&self, out: &mut Vec<Var>) {
        for (f, b) in &self.layers {
            f.vars(out);
            b.vars(out);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    /// Hidden units per GRU direction.
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub fc_hidden: usize,
    pub num_classes: usize,
    pub dropout: [f64; 2],
}

impl ClassifierConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        ClassifierConfig {
            input_dim,
            gru_hidden: 128,
            gru_layers: 2,
            fc_hidden: 128,
            num_classes,
            dropout: [0.5, 0.5],
        }
    }
}

/// Two-layer BiGRU, temporal max pooling, FC + dropout + ReLU + dropout + FC.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub gru: Vec<BiGruLayer>,
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: [f64; 2],
}

pub struct BoundClassifier {
    pub gru: BoundBiGru,
    pub fc1: BoundLinear,
    pub fc2: BoundLinear,
    dropout: [f64; 2],
}

impl ClassifierParams {
    pub fn init(cfg: &ClassifierConfig, seed: u64) -> Result<Self> {
        if cfg.gru_layers == 0 || cfg.gru_hidden == 0 || cfg.num_classes < 2 {
            return Err(Error::Config("classifier needs GRU layers and at least 2 classes".into()));
        }
        if cfg.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        let mut rng = rng::seeded(seed);
        let mut gru = Vec::with_capacity(cfg.gru_layers);
        let mut width = cfg.input_dim;
        for _ in 0..cfg.gru_layers {
            gru.push(BiGruLayer::init(width, cfg.gru_hidden, &mut rng));
            width = 2 * cfg.gru_hidden;
        }
        Ok(ClassifierParams {
            gru,
            fc1: Linear::init(width, cfg.fc_hidden, &mut rng),
            fc2: Linear::init(cfg.fc_hidden, cfg.num_classes, &mut rng),
            dropout: cfg.dropout,
        })
    }

    pub fn config(&self) -> ClassifierConfig {
        ClassifierConfig {
            input_dim: self.gru[0].forward.input_dim(),
            gru_hidden: self.gru[0].forward.hidden(),
            gru_layers: self.gru.len(),
            fc_hidden: self.fc1.output_dim(),
            num_classes: self.num_classes(),
            dropout: self.dropout,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.fc2.output_dim()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundClassifier {
        BoundClassifier {
            gru: BoundBiGru {
                layers: self
                    .gru
                    .iter()
                    .map(|l| (l.forward.bind(g), l.backward.bind(g)))
                    .collect(),
            },
            fc1: self.fc1.bind(g),
            fc2: self.fc2.bind(g),
            dropout: self.dropout,
        }
    }
}

impl Parameters for ClassifierParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.gru.iter().enumerate() {
            for (dir, cell) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                for (name, t) in cell.tensors() {
                    out.push((format!("gru.{i}.{dir}.{name}"), t));
                }
            }
        }
        out.push(("fc1.weight".into(), &self.fc1.weight));
        out.push(("fc1.bias".into(), &self.fc1.bias));
        out.push(("fc2.weight".into(), &self.fc2.weight));
        out.push(("fc2.bias".into(), &self.fc2.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.gru {
            out.extend(layer.forward.tensors_mut());
            out.extend(layer.backward.tensors_mut());
        }
        out.extend([
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]);
        out
    }
}

impl BoundClassifier {
    /// `features`: (T·B) x F time-major; returns B x C logits. Dropout masks
    /// are drawn from `dropout_rng` when given, otherwise dropout is identity.
    pub fn forward(
        &self,
        g: &mut Graph,
        features: Var,
        steps: usize,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let (per_step, _) = self.gru.forward(g, features, steps)?;
        let pooled = g.max_of(&per_step)?;
        let mut rng = dropout_rng;
        let h = self.fc1.forward(g, pooled)?;
        let h = dropout(g, h, self.dropout[0], rng.as_deref_mut())?;
        let h = g.relu(h);
        let h = dropout(g, h, self.dropout[1], rng.as_deref_mut())?;
        self.fc2.forward(g, h)
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.gru.vars(&mut out);
        self.fc1.vars(&mut out);
        self.fc2.vars(&mut out);
        out
    }
}

/// Inverted dropout; identity without an RNG or at rate 0.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    use rand::Rng as _;
    let [r, c] = g.shape(x);
    let keep = 1.0 / (1.0 - rate);
    let data = (0..r * c)
        .map(|_| if rng.random_bool(rate) { 0.0 } else { keep })
        .collect();
    let mask = g.constant(Tensor::from_vec(r, c, data)?);
    g.mul(x, mask)
}

/// Runs the bidirectional GRU stack on one T x d sequence: T x 2H.
pub fn gru_sequence_forward(layers: &[BiGruLayer], sequence: &Tensor) -> Result<Tensor> {
    if sequence.rows() == 0 {
        return Err(Error::Shape("empty sequence".into()));
    }
    let width = layers
        .first()
        .ok_or_else(|| Error::Config("no GRU layers".into()))?
        .forward
        .input_dim();
    if sequence.cols() != width {
        return Err(Error::Shape(format!(
            "GRU expects width {width}, got {}",
            sequence.cols()
        )));
    }
    let mut g = Graph::new();
    let bound = BoundBiGru {
        layers: layers
            .iter()
            .map(|l| (l.forward.bind(&mut g), l.backward.bind(&mut g)))
            .collect(),
    };
    let x = g.constant(sequence.clone());
    let (_, stacked) = bound.forward(&mut g, x, sequence.rows())?;
    Ok(g.value(stacked).clone())
}

/// Per-feature maximum over the rows of a T x F sequence.
pub fn temporal_max_pool(sequence: &Tensor) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let x = g.constant(sequence.clone());
    let m = g.max_rows(x)?;
    Ok(g.value(m).data().to_vec())
}

/// Mean softmax cross-entropy.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let l = g.softmax_cross_entropy(x, labels)?;
    Ok(g.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_encoder_outputs_zero() {
        let cfg = EncoderConfig {
            input_dim: 6,
            hidden: vec![5],
            d_pose: 3,
            d_view: 1,
        };
        let mut enc = EncoderParams::init(&cfg, 1).unwrap();
        for t in enc.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let x = Tensor::random_normal(4, 6, 1.0, &mut rng::seeded(0));
        let z = encoder_forward(&enc, &x).unwrap();
        assert_eq!(z.shape(), [4, 4]);
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn identity_single_layer_encoder() {
        let layer = Linear {
            weight: Tensor::identity(6),
            bias: Tensor::zeros(1, 6),
        };
        let enc = EncoderParams::from_layers(vec![layer], 4, 2).unwrap();
        let x = Tensor::random_normal(3, 6, 1.0, &mut rng::seeded(2));
        assert_eq!(encoder_forward(&enc, &x).unwrap(), x);
    }

    #[test]
    fn encoder_rejects_wrong_width() {
        let enc = EncoderParams::init(&EncoderConfig::for_joints(17), 0).unwrap();
        let x = Tensor::zeros(2, 33);
        assert!(matches!(encoder_forward(&enc, &x), Err(Error::Shape(_))));
        assert!(EncoderParams::from_layers(vec![Linear::zeros(4, 5)], 3, 3).is_err());
    }

    #[test]
    fn zero_gru_keeps_zero_state() {
        let layers = vec![
            BiGruLayer {
                forward: GruCell::zeros(3, 4),
                backward: GruCell::zeros(3, 4),
            },
            BiGruLayer {
                forward: GruCell::zeros(8, 4),
                backward: GruCell::zeros(8, 4),
            },
        ];
        let x = Tensor::random_normal(5, 3, 1.0, &mut rng::seeded(0));
        let out = gru_sequence_forward(&layers, &x).unwrap();
        assert_eq!(out.shape(), [5, 8]);
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn single_step_directions_agree_for_shared_weights() {
        let mut rng = rng::seeded(9);
        let cell = GruCell::init(3, 4, &mut rng);
        let layers = vec![BiGruLayer {
            forward: cell.clone(),
            backward: cell,
        }];
        let x = Tensor::random_normal(1, 3, 1.0, &mut rng);
        let out = gru_sequence_forward(&layers, &x).unwrap();
        assert_eq!(&out.row(0)[..4], &out.row(0)[4..]);
    }

    #[test]
    fn gru_step_matches_hand_computation() {
        // H = 1, input width 1, one step from h = 0:
        // z = σ(0.5·2 + 0.1) = σ(1.1), r irrelevant at h = 0,
        // n = tanh(-1·2 + 0.3) = tanh(-1.7), h' = (1 - z) n.
        let cell = GruCell {
            w_input: Tensor::from_rows(&[vec![0.5, 0.2, -1.0]]).unwrap(),
            bias: Tensor::from_rows(&[vec![0.1, 0.0, 0.3]]).unwrap(),
            u_gates: Tensor::from_rows(&[vec![0.7, -0.4]]).unwrap(),
            u_candidate: Tensor::from_rows(&[vec![0.9]]).unwrap(),
        };
        let layers = vec![BiGruLayer {
            forward: cell.clone(),
            backward: cell,
        }];
        let x = Tensor::from_rows(&[vec![2.0], vec![-1.0]]).unwrap();
        let out = gru_sequence_forward(&layers, &x).unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z1 = s(1.1);
        let h1 = (1.0 - z1) * (-1.7f64).tanh();
        assert_abs_diff_eq!(out.get(0, 0), h1, epsilon = 1e-15);
        // Second forward step from h1 with x = -1.
        let z2 = s(0.5 * -1.0 + 0.1 + 0.7 * h1);
        let r2 = s(0.2 * -1.0 + 0.0 - 0.4 * h1);
        let n2 = (-1.0 * -1.0 + 0.3 + 0.9 * (r2 * h1)).tanh();
        let h2 = (1.0 - z2) * n2 + z2 * h1;
        assert_abs_diff_eq!(out.get(1, 0), h2, epsilon = 1e-15);
    }

    #[test]
    fn max_pool_cases() {
        let t = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(temporal_max_pool(&t).unwrap(), vec![3.0, 5.0]);
        let c = Tensor::filled(4, 3, 0.25);
        assert_eq!(temporal_max_pool(&c).unwrap(), vec![0.25; 3]);
        let one = Tensor::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        assert_eq!(temporal_max_pool(&one).unwrap(), vec![-1.0, 2.0]);
        assert!(temporal_max_pool(&Tensor::zeros(0, 2)).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = Tensor::zeros(3, 28);
        assert_abs_diff_eq!(
            cross_entropy(&uniform, &[0, 5, 27]).unwrap(),
            28f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(28f64.ln(), 3.33220, epsilon = 1e-5);
        let mut confident = Tensor::zeros(1, 28);
        confident.set(0, 4, 1000.0);
        let l = cross_entropy(&confident, &[4]).unwrap();
        assert!(l.is_finite() && l <= 1e-6);
        assert!(matches!(
            cross_entropy(&uniform, &[0, 1, 28]),
            Err(Error::Validation(_))
        ));
    }
}

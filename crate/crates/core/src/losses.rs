//! Contrastive objective: Barlow Twins on `z_pose`, cosine view alignment on
//! `z_view`, a variance target and a KL-to-uniform regularizer.
//!
//! Every term is built from [`Graph`] ops so one implementation serves both
//! evaluation and training. The `*_loss` functions on plain tensors are thin
//! wrappers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub w_pose: f64,
    pub w_view: f64,
    pub w_reg: f64,
    pub sigma_target_sq: f64,
    pub bt_lambda: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_pose: 1.0,
            w_view: 10.0,
            w_reg: 1.0,
            sigma_target_sq: 1.0,
            bt_lambda: 5e-3,
            epsilon: 1e-8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_pose, self.w_view, self.w_reg];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if !(self.sigma_target_sq > 0.0) {
            return Err(Error::Config("sigma_target_sq must be > 0".into()));
        }
        if !(self.bt_lambda > 0.0) {
            return Err(Error::Config("bt_lambda must be > 0".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config("epsilon must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

fn require_batch(g: &Graph, z: Var) -> Result<usize> {
    let b = g.shape(z)[0];
    if b < 2 {
        return Err(Error::BatchSize(b));
    }
    Ok(b)
}

/// Column-wise zero mean and unit population variance; the standard
/// deviation is floored at `eps`.
fn standardize(g: &mut Graph, z: Var, eps: f64) -> Result<Var> {
    let b = g.shape(z)[0];
    let mean = g.col_mean(z);
    let mean = g.broadcast_rows(mean, b)?;
    let centered = g.sub(z, mean)?;
    let sq = g.square(centered);
    let var = g.col_mean(sq);
    let std = g.sqrt(var);
    let std = g.clamp_min(std, eps);
    let std = g.broadcast_rows(std, b)?;
    g.div(centered, std)
}

/// `Σ_i (1 − C_ii)² + λ Σ_{i≠j} C_ij²` with `C` the cross-correlation of the
/// standardized inputs.
pub fn barlow_twins_graph(g: &mut Graph, a: Var, b: Var, lambda: f64, eps: f64) -> Result<Var> {
    let n = require_batch(g, a)?;
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape(format!(
            "Barlow Twins inputs {:?} and {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    let d = g.shape(a)[1];
    let an = standardize(g, a, eps)?;
    let bn = standardize(g, b, eps)?;
    let at = g.transpose(an);
    let c = g.matmul(at, bn)?;
    let c = g.scale(c, 1.0 / n as f64);
    let eye = g.constant(Tensor::identity(d));
    let diff = g.sub(c, eye)?;
    let sq = g.square(diff);
    let mut w = Tensor::filled(d, d, lambda);
    for i in 0..d {
        w.set(i, i, 1.0);
    }
    let w = g.constant(w);
    let weighted = g.mul(sq, w)?;
    Ok(g.sum(weighted))
}

/// Row norms floored at `eps`, B x 1.
fn guarded_norms(g: &mut Graph, z: Var, eps: f64) -> Var {
    let sq = g.square(z);
    let s = g.row_sum(sq);
    let n = g.sqrt(s);
    g.clamp_min(n, eps)
}

fn row_cosines(a: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..a.rows())
        .map(|r| {
            let (x, y) = (a.row(r), b.row(r));
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            dot / (nx * ny)
        })
        .collect()
}

/// Mean over rows of `(cos(z_v, z_v') − cos(v, v'))²`. Returns the loss and
/// the number of embedding rows whose norm fell below `eps`.
pub fn view_alignment_graph(
    g: &mut Graph,
    zv: Var,
    zv2: Var,
    v: &Tensor,
    v2: &Tensor,
    eps: f64,
) -> Result<(Var, usize)> {
    let [b, _] = g.shape(zv);
    if g.shape(zv2) != g.shape(zv) || v.shape() != [b, 3] || v2.shape() != [b, 3] {
        return Err(Error::Shape(format!(
            "view loss shapes {:?} {:?} {:?} {:?}",
            g.shape(zv),
            g.shape(zv2),
            v.shape(),
            v2.shape()
        )));
    }
    for t in [v, v2] {
        for r in 0..b {
            let n = t.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "camera direction row {r} has norm {n}, expected 1"
                )));
            }
        }
    }
    let cos_v = Tensor::from_vec(b, 1, row_cosines(v, v2))?;
    let na = guarded_norms(g, zv, eps);
    let nb = guarded_norms(g, zv2, eps);
    let zero_rows = (0..b)
        .filter(|&r| g.value(na).get(r, 0) <= eps || g.value(nb).get(r, 0) <= eps)
        .count();
    let prod = g.mul(zv, zv2)?;
    let dot = g.row_sum(prod);
    let denom = g.mul(na, nb)?;
    let cos_z = g.div(dot, denom)?;
    let target = g.constant(cos_v);
    let diff = g.sub(cos_z, target)?;
    let sq = g.square(diff);
    Ok((g.mean(sq), zero_rows))
}

/// `(1/d) Σ_i (σ_i² − target)²` with population variances over the batch.
pub fn variance_graph(g: &mut Graph, z: Var, target: f64) -> Result<Var> {
    let b = require_batch(g, z)?;
    let mean = g.col_mean(z);
    let mean = g.broadcast_rows(mean, b)?;
    let centered = g.sub(z, mean)?;
    let sq = g.square(centered);
    let var = g.col_mean(sq);
    let diff = g.add_scalar(var, -target);
    let dsq = g.square(diff);
    Ok(g.mean(dsq))
}

/// Mean of `s ln s + (1 − s) ln(1 − s)` over all entries, with
/// `s = clamp(sigmoid(z), eps, 1 − eps)`.
pub fn kl_uniform_graph(g: &mut Graph, z: Var, eps: f64) -> Var {
    let s = g.sigmoid(z);
    kl_uniform_squashed_graph(g, s, eps)
}

/// As [`kl_uniform_graph`] for values already in (0, 1).
pub fn kl_uniform_squashed_graph(g: &mut Graph, s: Var, eps: f64) -> Var {
    let s = g.clamp(s, eps, 1.0 - eps);
    let ls = g.ln(s);
    let a = g.mul(s, ls).expect("same shape");
    let neg = g.scale(s, -1.0);
    let t = g.add_scalar(neg, 1.0);
    let lt = g.ln(t);
    let b = g.mul(t, lt).expect("same shape");
    let sum = g.add(a, b).expect("same shape");
    g.mean(sum)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub pose: f64,
    pub view: f64,
    pub var: f64,
    pub klu: f64,
    pub total: f64,
    /// Embedding rows whose `z_view` norm hit the epsilon guard.
    pub zero_norm_rows: usize,
}

/// One anchor/positive batch: embeddings and camera directions.
pub struct PairBatch<'a> {
    pub z: Var,
    pub z_prime: Var,
    pub v: &'a Tensor,
    pub v_prime: &'a Tensor,
    pub d_pose: usize,
}

/// `w_pose·L_pose + w_view·L_view + w_R·(Var(Z) + Var(Z') + KLU(Z) + KLU(Z'))`.
pub fn total_loss_graph(g: &mut Graph, batch: &PairBatch, cfg: &LossConfig) -> Result<(Var, LossTerms)> {
    cfg.validate()?;
    let [b, d] = g.shape(batch.z);
    if g.shape(batch.z_prime) != [b, d] {
        return Err(Error::Shape("anchor and positive embeddings differ in shape".into()));
    }
    if batch.d_pose == 0 || batch.d_pose >= d {
        return Err(Error::Shape(format!("d_pose {} does not split width {d}", batch.d_pose)));
    }
    require_batch(g, batch.z)?;
    let zp = g.slice_cols(batch.z, 0, batch.d_pose)?;
    let zp2 = g.slice_cols(batch.z_prime, 0, batch.d_pose)?;
    let zv = g.slice_cols(batch.z, batch.d_pose, d)?;
    let zv2 = g.slice_cols(batch.z_prime, batch.d_pose, d)?;

    let l_pose = barlow_twins_graph(g, zp, zp2, cfg.bt_lambda, cfg.epsilon)?;
    let (l_view, zero_rows) = view_alignment_graph(g, zv, zv2, batch.v, batch.v_prime, cfg.epsilon)?;
    let var_a = variance_graph(g, batch.z, cfg.sigma_target_sq)?;
    let var_b = variance_graph(g, batch.z_prime, cfg.sigma_target_sq)?;
    let kl_a = kl_uniform_graph(g, batch.z, cfg.epsilon);
    let kl_b = kl_uniform_graph(g, batch.z_prime, cfg.epsilon);
    let l_var = g.add(var_a, var_b)?;
    let l_kl = g.add(kl_a, kl_b)?;
    let reg = g.add(l_var, l_kl)?;

    let p = g.scale(l_pose, cfg.w_pose);
    let v = g.scale(l_view, cfg.w_view);
    let r = g.scale(reg, cfg.w_reg);
    let pv = g.add(p, v)?;
    let total = g.add(pv, r)?;
    let terms = LossTerms {
        pose: g.value(l_pose).item(),
        view: g.value(l_view).item(),
        var: g.value(l_var).item(),
        klu: g.value(l_kl).item(),
        total: g.value(total).item(),
        zero_norm_rows: zero_rows,
    };
    Ok((total, terms))
}

pub fn barlow_twins_loss(a: &Tensor, b: &Tensor, lambda: f64, eps: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    let l = barlow_twins_graph(&mut g, x, y, lambda, eps)?;
    Ok(g.value(l).item())
}

pub fn view_alignment_loss(zv: &Tensor, zv2: &Tensor, v: &Tensor, v2: &Tensor, eps: f64) -> Result<(f64, usize)> {
    let mut g = Graph::new();
    let (x, y) = (g.constant(zv.clone()), g.constant(zv2.clone()));
    let (l, zero) = view_alignment_graph(&mut g, x, y, v, v2, eps)?;
    Ok((g.value(l).item(), zero))
}

pub fn variance_loss(z: &Tensor, target: f64) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(z.clone());
    let l = variance_graph(&mut g, x, target)?;
    Ok(g.value(l).item())
}

/// KL-uniform term on raw embeddings (squashed internally).
pub fn kl_uniform_loss(z: &Tensor, eps: f64) -> f64 {
    let mut g = Graph::new();
    let x = g.constant(z.clone());
    let l = kl_uniform_graph(&mut g, x, eps);
    g.value(l).item()
}

/// KL-uniform term on values already in (0, 1).
pub fn kl_uniform_loss_squashed(s: &Tensor, eps: f64) -> f64 {
    let mut g = Graph::new();
    let x = g.constant(s.clone());
    let l = kl_uniform_squashed_graph(&mut g, x, eps);
    g.value(l).item()
}

pub fn total_loss(
    z: &Tensor,
    z_prime: &Tensor,
    v: &Tensor,
    v_prime: &Tensor,
    d_pose: usize,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let mut g = Graph::new();
    let batch = PairBatch {
        z: g.constant(z.clone()),
        z_prime: g.constant(z_prime.clone()),
        v,
        v_prime,
        d_pose,
    };
    Ok(total_loss_graph(&mut g, &batch, cfg)?.1)
}

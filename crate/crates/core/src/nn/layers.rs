use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{BufferUpdate, Init, ParamId, ParamKind, ParamStore};
use super::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), &[out_ch, in_ch, k, k], init, ParamKind::Trainable, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), &[out_ch], Init::Zeros, ParamKind::Trainable, rng));
        Self { weight, bias, stride, pad }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Instance,
}

/// Batch or instance normalization with learned per-channel affine.
#[derive(Debug, Clone)]
pub struct Norm {
    pub kind: NormKind,
    pub gamma: ParamId,
    pub beta: ParamId,
    running: Option<(ParamId, ParamId)>,
    eps: f64,
    momentum: f64,
}

impl Norm {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        ch: usize,
        kind: NormKind,
        rng: &mut R,
    ) -> Self {
        let gamma = store.add(format!("{name}.weight"), &[ch], Init::Ones, ParamKind::Trainable, rng);
        let beta = store.add(format!("{name}.bias"), &[ch], Init::Zeros, ParamKind::Trainable, rng);
        let running = (kind == NormKind::Batch).then(|| {
            (
                store.add(format!("{name}.running_mean"), &[ch], Init::Zeros, ParamKind::Buffer, rng),
                store.add(format!("{name}.running_var"), &[ch], Init::Ones, ParamKind::Buffer, rng),
            )
        });
        Self { kind, gamma, beta, running, eps: 1e-5, momentum: 0.1 }
    }

    /// In training mode batch norm uses batch statistics and records a
    /// running-statistics update on the graph; otherwise it uses the stored
    /// running statistics. Instance norm behaves the same in both modes.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, train: bool) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match (self.kind, self.running) {
            (NormKind::Instance, _) => g.norm(x, gamma, beta, true, self.eps, None).0,
            (NormKind::Batch, Some((rm, rv))) if !train => {
                let (m, v) = (store.get(rm).data(), store.get(rv).data());
                g.norm(x, gamma, beta, false, self.eps, Some((m, v))).0
            }
            (NormKind::Batch, Some((rm, rv))) => {
                let (n, _, h, w) = g.value(x).dims4();
                let (y, mean, var) = g.norm(x, gamma, beta, false, self.eps, None);
                let count = (n * h * w) as f64;
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let mom = T::lit(self.momentum);
                let keep = T::one() - mom;
                let new_mean: Vec<T> =
                    store.get(rm).data().iter().zip(&mean).map(|(&r, &m)| keep * r + mom * m).collect();
                let new_var: Vec<T> = store
                    .get(rv)
                    .data()
                    .iter()
                    .zip(&var)
                    .map(|(&r, &v)| keep * r + mom * v * T::lit(unbias))
                    .collect();
                let uid = store.uid();
                let c = new_mean.len();
                g.record_update(BufferUpdate { store: uid, id: rm, value: Tensor::from_vec(&[c], new_mean) });
                g.record_update(BufferUpdate { store: uid, id: rv, value: Tensor::from_vec(&[c], new_var) });
                y
            }
            (NormKind::Batch, None) => unreachable!("batch norm always has running buffers"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let init = Init::UniformFanIn { fan_in: in_dim };
        let weight = store.add(format!("{name}.weight"), &[out_dim, in_dim], init, ParamKind::Trainable, rng);
        let bias = store.add(format!("{name}.bias"), &[out_dim], init, ParamKind::Trainable, rng);
        Self { weight, bias }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }
}

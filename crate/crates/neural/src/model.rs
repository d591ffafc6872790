//! Encoder forward pass, its analytic backward pass, and the mapping from
//! head outputs to mutation distributions.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use axcgp_core::search::{ModelError, MutationModel};
use axcgp_core::{Chromosome, CircuitParams, MutationDistribution};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::config::{ConfigError, ModelConfig};
use crate::params::{
    layer_index, read_checkpoint, top_index, write_checkpoint, CheckpointError, LayerParam as P,
    ParamStore, TopParam as T, EMB_FUNC, EMB_IN1, EMB_IN2, EMB_POS,
};
use crate::tokens::TokenizedChromosome;

const LN_EPS: f64 = 1e-5;

/// Head values for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// `[n_c, |Γ|]`
    pub func_logits: Array2<f64>,
    /// `[n_c, n_i + n_c]`, one head shared by both input genes.
    pub input_logits: Array2<f64>,
    /// `[n_c]`, in (0, 1].
    pub sensitivity: Array1<f64>,
}

impl ModelOutput {
    pub fn all_finite(&self) -> bool {
        self.func_logits.iter().all(|x| x.is_finite())
            && self.input_logits.iter().all(|x| x.is_finite())
            && self.sensitivity.iter().all(|x| x.is_finite())
    }
}

/// Gradient of a scalar loss with respect to every head value.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub func_logits: Array2<f64>,
    pub input_logits: Array2<f64>,
    pub sensitivity: Array1<f64>,
}

impl OutputGrad {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            func_logits: Array2::zeros((cfg.nodes, cfg.func_mask() as usize)),
            input_logits: Array2::zeros((cfg.nodes, cfg.sources())),
            sensitivity: Array1::zeros(cfg.nodes),
        }
    }
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    ln1: LnCache,
    z1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    z2: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

/// Activations kept by [`Transformer::forward_cached`] for the backward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    lnf: LnCache,
    zf: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    cfg: ModelConfig,
    params: ParamStore,
}

fn layer_norm(x: &Array2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|c| c * c).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * &inv_std.view().insert_axis(Axis(1));
    let y = &xhat * &gain + &bias;
    (y, LnCache { xhat, inv_std })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

fn sigmoid(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).max(f64::MIN_POSITIVE)
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Softmax over a slice of logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

impl Transformer {
    pub fn new(cfg: ModelConfig, params: ParamStore) -> Result<Self, ConfigError> {
        cfg.validate()?;
        assert_eq!(
            params.tensors().iter().map(|t| &t.shape).collect::<Vec<_>>(),
            ParamStore::zeros(&cfg).tensors().iter().map(|t| &t.shape).collect::<Vec<_>>(),
            "parameter shapes do not match the config"
        );
        Ok(Self { cfg, params })
    }

    pub fn init<R: Rng + ?Sized>(cfg: ModelConfig, rng: &mut R) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let params = ParamStore::init(&cfg, rng);
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        write_checkpoint(BufWriter::new(File::create(path)?), &self.cfg, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let (cfg, params) = read_checkpoint(BufReader::new(File::open(path)?))?;
        Ok(Self { cfg, params })
    }

    fn linear(&self, x: &Array2<f64>, w: usize, b: usize) -> Array2<f64> {
        let mut y = x.dot(&self.params.m(w));
        y += &self.params.v(b);
        y
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    fn linear_back(
        &self,
        x: &Array2<f64>,
        dy: ArrayView2<f64>,
        w: usize,
        b: usize,
        grads: &mut ParamStore,
    ) -> Array2<f64> {
        grads.m_mut(w).scaled_add(1.0, &x.t().dot(&dy));
        grads.v_mut(b).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        dy.dot(&self.params.m(w).t())
    }

    fn layer_norm_back(
        &self,
        dy: &Array2<f64>,
        cache: &LnCache,
        gain: usize,
        bias: usize,
        grads: &mut ParamStore,
    ) -> Array2<f64> {
        grads.v_mut(gain).scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)));
        grads.v_mut(bias).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        let d = dy.ncols() as f64;
        let dxhat = dy * &self.params.v(gain);
        let mean_d = dxhat.sum_axis(Axis(1)) / d;
        let mean_dx = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
        let mut dx = dxhat - &mean_d.insert_axis(Axis(1)) - &cache.xhat * &mean_dx.insert_axis(Axis(1));
        dx *= &cache.inv_std.view().insert_axis(Axis(1));
        dx
    }

    /// Token embeddings plus positions, then the parent bias
    /// `e'_i = e_i + c_par · mean_{j ∈ parents(i)} e_j`.
    pub fn embed(&self, tc: &TokenizedChromosome) -> Array2<f64> {
        let cfg = &self.cfg;
        let (di, df) = (cfg.input_dim(), cfg.func_dim());
        let mut e = self.params.m(EMB_POS).to_owned();
        let (in1, in2, func) = (
            self.params.m(EMB_IN1),
            self.params.m(EMB_IN2),
            self.params.m(EMB_FUNC),
        );
        for (i, mut row) in e.rows_mut().into_iter().enumerate() {
            row.slice_mut(s![0..di]).scaled_add(1.0, &in1.row(tc.in1[i] as usize));
            row.slice_mut(s![di..2 * di]).scaled_add(1.0, &in2.row(tc.in2[i] as usize));
            row.slice_mut(s![2 * di..2 * di + df])
                .scaled_add(1.0, &func.row(tc.func[i] as usize));
        }
        let mut x = e.clone();
        for i in 0..tc.len() {
            let parents = tc.parents(i, cfg);
            if parents.is_empty() {
                continue;
            }
            let w = cfg.c_par / parents.len() as f64;
            for j in parents {
                x.row_mut(i).scaled_add(w, &e.row(j));
            }
        }
        x
    }

    fn embed_back(&self, tc: &TokenizedChromosome, dx: &Array2<f64>, grads: &mut ParamStore) {
        let cfg = &self.cfg;
        let (di, df) = (cfg.input_dim(), cfg.func_dim());
        let mut de = dx.clone();
        for i in 0..tc.len() {
            let parents = tc.parents(i, cfg);
            if parents.is_empty() {
                continue;
            }
            let w = cfg.c_par / parents.len() as f64;
            for j in parents {
                de.row_mut(j).scaled_add(w, &dx.row(i));
            }
        }
        grads.m_mut(EMB_POS).scaled_add(1.0, &de);
        for (i, row) in de.rows().into_iter().enumerate() {
            grads
                .m_mut(EMB_IN1)
                .row_mut(tc.in1[i] as usize)
                .scaled_add(1.0, &row.slice(s![0..di]));
            grads
                .m_mut(EMB_IN2)
                .row_mut(tc.in2[i] as usize)
                .scaled_add(1.0, &row.slice(s![di..2 * di]));
            grads
                .m_mut(EMB_FUNC)
                .row_mut(tc.func[i] as usize)
                .scaled_add(1.0, &row.slice(s![2 * di..2 * di + df]));
        }
    }

    pub fn forward(&self, tc: &TokenizedChromosome) -> ModelOutput {
        self.forward_cached(tc).0
    }

    pub fn forward_cached(&self, tc: &TokenizedChromosome) -> (ModelOutput, ForwardCache) {
        assert!(tc.fits(&self.cfg), "tokens do not fit the model");
        let cfg = &self.cfg;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let pm = &self.params;

        let mut x = self.embed(tc);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let li = |p| layer_index(l, p);
            let (z1, ln1) = layer_norm(&x, pm.v(li(P::Ln1Gain)), pm.v(li(P::Ln1Bias)));
            let q = self.linear(&z1, li(P::Wq), li(P::Bq));
            let k = self.linear(&z1, li(P::Wk), li(P::Bk));
            let v = self.linear(&z1, li(P::Wv), li(P::Bv));
            let mut o = Array2::zeros(x.raw_dim());
            let mut probs = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                softmax_rows(&mut a);
                o.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
                probs.push(a);
            }
            x += &self.linear(&o, li(P::Wo), li(P::Bo));
            let (z2, ln2) = layer_norm(&x, pm.v(li(P::Ln2Gain)), pm.v(li(P::Ln2Bias)));
            let u = self.linear(&z2, li(P::W1), li(P::B1));
            let g = u.mapv(gelu);
            x += &self.linear(&g, li(P::W2), li(P::B2));
            layers.push(LayerCache {
                ln1,
                z1,
                q,
                k,
                v,
                probs,
                o,
                ln2,
                z2,
                u,
                g,
            });
        }
        let ti = |p| top_index(cfg, p);
        let (zf, lnf) = layer_norm(&x, pm.v(ti(T::LnGain)), pm.v(ti(T::LnBias)));
        let out = ModelOutput {
            func_logits: self.linear(&zf, ti(T::FuncW), ti(T::FuncB)),
            input_logits: self.linear(&zf, ti(T::InputW), ti(T::InputB)),
            sensitivity: self
                .linear(&zf, ti(T::SensW), ti(T::SensB))
                .column(0)
                .mapv(sigmoid),
        };
        (out, ForwardCache { layers, lnf, zf })
    }

    /// Adds the gradient of the loss described by `grad` to `grads`.
    pub fn backward(
        &self,
        tc: &TokenizedChromosome,
        out: &ModelOutput,
        cache: &ForwardCache,
        grad: &OutputGrad,
        grads: &mut ParamStore,
    ) {
        let cfg = &self.cfg;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let ti = |p| top_index(cfg, p);

        let ds = (&grad.sensitivity * &out.sensitivity.mapv(|s| s * (1.0 - s))).insert_axis(Axis(1));
        let mut dz = self.linear_back(&cache.zf, grad.func_logits.view(), ti(T::FuncW), ti(T::FuncB), grads);
        dz += &self.linear_back(&cache.zf, grad.input_logits.view(), ti(T::InputW), ti(T::InputB), grads);
        dz += &self.linear_back(&cache.zf, ds.view(), ti(T::SensW), ti(T::SensB), grads);
        let mut dx = self.layer_norm_back(&dz, &cache.lnf, ti(T::LnGain), ti(T::LnBias), grads);

        for l in (0..cfg.layers).rev() {
            let lc = &cache.layers[l];
            let li = |p| layer_index(l, p);

            let dg = self.linear_back(&lc.g, dx.view(), li(P::W2), li(P::B2), grads);
            let du = dg * &lc.u.mapv(gelu_grad);
            let dz2 = self.linear_back(&lc.z2, du.view(), li(P::W1), li(P::B1), grads);
            dx += &self.layer_norm_back(&dz2, &lc.ln2, li(P::Ln2Gain), li(P::Ln2Bias), grads);

            let d_o = self.linear_back(&lc.o, dx.view(), li(P::Wo), li(P::Bo), grads);
            let mut dq = Array2::zeros(d_o.raw_dim());
            let mut dk = Array2::zeros(d_o.raw_dim());
            let mut dv = Array2::zeros(d_o.raw_dim());
            for h in 0..cfg.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let a = &lc.probs[h];
                let doh = d_o.slice(cols);
                let da = doh.dot(&lc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&a.t().dot(&doh));
                let rows = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
                let dscore = (a * &(da - &rows)) * scale;
                dq.slice_mut(cols).assign(&dscore.dot(&lc.k.slice(cols)));
                dk.slice_mut(cols).assign(&dscore.t().dot(&lc.q.slice(cols)));
            }
            let mut dz1 = self.linear_back(&lc.z1, dq.view(), li(P::Wq), li(P::Bq), grads);
            dz1 += &self.linear_back(&lc.z1, dk.view(), li(P::Wk), li(P::Bk), grads);
            dz1 += &self.linear_back(&lc.z1, dv.view(), li(P::Wv), li(P::Bv), grads);
            dx += &self.layer_norm_back(&dz1, &lc.ln1, li(P::Ln1Gain), li(P::Ln1Bias), grads);
        }
        self.embed_back(tc, &dx, grads);
    }
}

/// Converts head outputs into a guided-mutation plan for `c`.
///
/// Location mass is the sensitivity of each active node, normalized. Input
/// mass for node `p` is the softmax restricted to source IDs `< n_i + p`.
pub fn mutation_distribution(out: &ModelOutput, c: &Chromosome) -> MutationDistribution {
    let params = c.params();
    let n = params.columns;
    let active = c.active();
    let mut location = vec![0.0; n];
    for &p in active.positions() {
        location[p] = out.sensitivity[p].max(0.0);
    }
    let total: f64 = location.iter().sum();
    if total > 0.0 && total.is_finite() {
        for x in &mut location {
            *x /= total;
        }
    } else {
        log::warn!("sensitivity is zero on every active node, using uniform locations");
        location = MutationDistribution::uniform(c).location;
    }
    let function = (0..n)
        .map(|p| {
            let sm = softmax(out.func_logits.row(p).as_slice().expect("contiguous"));
            sm.try_into().expect("one logit per gate function")
        })
        .collect();
    let input = (0..n)
        .map(|p| {
            let support = params.node_id(p) as usize;
            softmax(&out.input_logits.row(p).as_slice().expect("contiguous")[..support])
        })
        .collect();
    MutationDistribution {
        location,
        function,
        input,
    }
}

impl MutationModel for Transformer {
    fn check(&self, params: &CircuitParams) -> Result<(), ModelError> {
        if self.cfg.fits(params) {
            Ok(())
        } else {
            Err(ModelError(format!(
                "model expects {} inputs and {} nodes, chromosome has {} and {}",
                self.cfg.inputs, self.cfg.nodes, params.inputs, params.columns
            )))
        }
    }

    fn distribution(&self, c: &Chromosome) -> Result<MutationDistribution, ModelError> {
        self.check(c.params())?;
        let out = self.forward(&TokenizedChromosome::new(c));
        if !out.all_finite() {
            return Err(ModelError("non-finite model output".into()));
        }
        Ok(mutation_distribution(&out, c))
    }
}

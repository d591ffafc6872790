//! Masked-token objective with confidence penalties and sensitivity MSE.

use axcgp_core::GeneSlot;
use axcgp_neural::{MaskedGene, ModelOutput, OutputGrad, TokenizedChromosome};
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub c_op: f64,
    pub c_in: f64,
    pub c_sens: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            c_op: 0.1,
            c_in: 0.2,
            c_sens: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_op: f64,
    pub l_input: f64,
    pub l_sens: f64,
    pub p_conf_op: f64,
    pub p_conf_in: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn all_finite(&self) -> bool {
        [
            self.l_op,
            self.l_input,
            self.l_sens,
            self.p_conf_op,
            self.p_conf_in,
            self.l_total,
        ]
        .iter()
        .all(|x| x.is_finite())
    }

    pub fn add_scaled(&mut self, o: &LossBreakdown, s: f64) {
        self.l_op += s * o.l_op;
        self.l_input += s * o.l_input;
        self.l_sens += s * o.l_sens;
        self.p_conf_op += s * o.p_conf_op;
        self.p_conf_in += s * o.p_conf_in;
        self.l_total += s * o.l_total;
    }
}

/// Everything the loss needs besides the model output.
#[derive(Debug, Clone)]
pub struct LossTargets {
    /// Unmasked tokens of the chromosome.
    pub truth: TokenizedChromosome,
    pub masked: Vec<MaskedGene>,
    /// Active node positions.
    pub active: Vec<usize>,
    /// Sensitivity label of each entry of `active`.
    pub sensitivity: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// One-vs-all binary cross-entropy summed over classes.
pub fn bce(logits: ArrayView1<f64>, targets: ArrayView1<f64>) -> f64 {
    logits
        .iter()
        .zip(targets)
        .map(|(&o, &y)| softplus(o) - y * o)
        .sum()
}

fn bce_grad(logits: ArrayView1<f64>, targets: ArrayView1<f64>, scale: f64, mut out: ArrayViewMut1<f64>) {
    for ((g, &o), &y) in out.iter_mut().zip(logits).zip(targets) {
        *g += scale * (sigmoid(o) - y);
    }
}

/// `Σ_h Σ_c (σ(o_hc) · (1 − y_hc))²` over the rows of `logits`.
pub fn confidence_penalty(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> f64 {
    logits
        .iter()
        .zip(targets)
        .map(|(&o, &y)| (sigmoid(o) * (1.0 - y)).powi(2))
        .sum()
}

fn confidence_grad(logits: ArrayView1<f64>, targets: ArrayView1<f64>, scale: f64, mut out: ArrayViewMut1<f64>) {
    for ((g, &o), &y) in out.iter_mut().zip(logits).zip(targets) {
        let s = sigmoid(o);
        *g += scale * 2.0 * (1.0 - y).powi(2) * s * s * (1.0 - s);
    }
}

/// Loss of one sample and its gradient with respect to the head outputs.
///
/// `L_total = â (L_op + L_input + c_op P_op + c_in P_in) + c_sens L_sens`.
/// Cross-entropy terms average over the nodes with a masked gene of the
/// respective kind (the input target is the multi-hot set of both
/// sources). Penalties sum over active nodes against the true tokens. The
/// sensitivity MSE averages over active nodes.
pub fn total_loss(
    out: &ModelOutput,
    t: &LossTargets,
    a_hat: f64,
    w: &LossWeights,
) -> (LossBreakdown, OutputGrad) {
    let n = out.func_logits.nrows();
    let n_func = out.func_logits.ncols();
    let n_src = out.input_logits.ncols();
    let mut grad = OutputGrad {
        func_logits: Array2::zeros((n, n_func)),
        input_logits: Array2::zeros((n, n_src)),
        sensitivity: ndarray::Array1::zeros(n),
    };
    let mut b = LossBreakdown::default();

    // Masked-gene targets per node.
    let mut func_target: Vec<Option<u32>> = vec![None; n];
    let mut input_masked = vec![false; n];
    for g in &t.masked {
        match g.slot {
            GeneSlot::Func => func_target[g.position] = Some(g.value),
            GeneSlot::In1 | GeneSlot::In2 => input_masked[g.position] = true,
        }
    }

    let func_rows: Vec<usize> = (0..n).filter(|&p| func_target[p].is_some()).collect();
    if !func_rows.is_empty() {
        let k = 1.0 / func_rows.len() as f64;
        for &p in &func_rows {
            let mut y = ndarray::Array1::zeros(n_func);
            y[func_target[p].unwrap() as usize] = 1.0;
            b.l_op += k * bce(out.func_logits.row(p), y.view());
            bce_grad(out.func_logits.row(p), y.view(), a_hat * k, grad.func_logits.row_mut(p));
        }
    }
    // The shared input head predicts the node's whole source set.
    let input_rows: Vec<usize> = (0..n).filter(|&p| input_masked[p]).collect();
    if !input_rows.is_empty() {
        let k = 1.0 / input_rows.len() as f64;
        for &p in &input_rows {
            let mut y = ndarray::Array1::zeros(n_src);
            y[t.truth.in1[p] as usize] = 1.0;
            y[t.truth.in2[p] as usize] = 1.0;
            b.l_input += k * bce(out.input_logits.row(p), y.view());
            bce_grad(out.input_logits.row(p), y.view(), a_hat * k, grad.input_logits.row_mut(p));
        }
    }

    for (&p, &label) in t.active.iter().zip(&t.sensitivity) {
        let mut yf = ndarray::Array1::zeros(n_func);
        yf[t.truth.func[p] as usize] = 1.0;
        let lf = out.func_logits.row(p);
        b.p_conf_op += confidence_penalty(lf.insert_axis(ndarray::Axis(0)), yf.view().insert_axis(ndarray::Axis(0)));
        confidence_grad(lf, yf.view(), a_hat * w.c_op, grad.func_logits.row_mut(p));

        let mut yi = ndarray::Array1::zeros(n_src);
        yi[t.truth.in1[p] as usize] = 1.0;
        yi[t.truth.in2[p] as usize] = 1.0;
        let li = out.input_logits.row(p);
        b.p_conf_in += confidence_penalty(li.insert_axis(ndarray::Axis(0)), yi.view().insert_axis(ndarray::Axis(0)));
        confidence_grad(li, yi.view(), a_hat * w.c_in, grad.input_logits.row_mut(p));

        let diff = out.sensitivity[p] - label;
        let k = 1.0 / t.active.len() as f64;
        b.l_sens += k * diff * diff;
        grad.sensitivity[p] += w.c_sens * k * 2.0 * diff;
    }

    b.l_total = a_hat * (b.l_op + b.l_input + w.c_op * b.p_conf_op + w.c_in * b.p_conf_in) + w.c_sens * b.l_sens;
    (b, grad)
}

use axcgp_core::search::MutationModel;
use axcgp_core::{Chromosome, CircuitParams, GateFunction, GeneSlot, Node};
use axcgp_neural::{
    mask, mutation_distribution, read_checkpoint, softmax, write_checkpoint, ModelConfig, OutputGrad,
    ParamStore, TokenizedChromosome, Transformer,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        layers: 2,
        ffn_hidden: 16,
        c_par: 0.2,
        inputs: 4,
        nodes: 6,
    }
}

fn toy_params() -> CircuitParams {
    CircuitParams::multiplier(2, 6)
}

/// Random parameters including non-trivial gains and biases.
fn random_model(cfg: ModelConfig, seed: u64) -> Transformer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Transformer::init(cfg, &mut rng).unwrap();
    for t in m.params_mut().tensors_mut() {
        for x in &mut t.data {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
    m
}

fn random_grad(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> OutputGrad {
    let mut g = OutputGrad::zeros(cfg);
    g.func_logits.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    g.input_logits.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    g.sensitivity.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    g
}

fn probe_loss(m: &Transformer, tc: &TokenizedChromosome, g: &OutputGrad) -> f64 {
    let out = m.forward(tc);
    (&out.func_logits * &g.func_logits).sum()
        + (&out.input_logits * &g.input_logits).sum()
        + (&out.sensitivity * &g.sensitivity).sum()
}

#[test]
fn gradients_match_central_differences() {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let c = Chromosome::random(toy_params(), false, &mut rng);
    let (tc, _) = mask(&TokenizedChromosome::new(&c), &cfg, 0.2, &mut rng);
    let g = random_grad(&cfg, &mut rng);
    let mut model = random_model(cfg, 3);

    let (out, cache) = model.forward_cached(&tc);
    let mut analytic = model.params().zeros_like();
    model.backward(&tc, &out, &cache, &g, &mut analytic);

    let h = 1e-4;
    for (ti, at) in analytic.tensors().iter().enumerate() {
        let mut diff = 0.0;
        let mut norm_a = 0.0;
        let mut norm_n = 0.0;
        for k in 0..at.data.len() {
            let orig = model.params().tensors()[ti].data[k];
            model.params_mut().tensors_mut()[ti].data[k] = orig + h;
            let up = probe_loss(&model, &tc, &g);
            model.params_mut().tensors_mut()[ti].data[k] = orig - h;
            let down = probe_loss(&model, &tc, &g);
            model.params_mut().tensors_mut()[ti].data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            diff += (numeric - at.data[k]).powi(2);
            norm_a += at.data[k].powi(2);
            norm_n += numeric.powi(2);
        }
        // The floor covers groups whose true gradient vanishes (the key
        // bias cancels in the softmax), where only rounding noise remains.
        let rel = diff.sqrt() / (norm_a.sqrt() + norm_n.sqrt()).max(1e-6);
        assert!(rel < 1e-4, "{}: relative error {rel:e}", at.name);
    }
}

fn wired_circuit() -> Chromosome {
    let nodes = vec![
        Node::new(0, 1, GateFunction::And),
        Node::new(2, 3, GateFunction::Or),
        Node::new(4, 5, GateFunction::Xor),
        Node::new(6, 6, GateFunction::Inv),
        Node::new(7, 1, GateFunction::Nand),
        Node::new(8, 0, GateFunction::Nor),
    ];
    Chromosome::new(toy_params(), nodes, None).unwrap()
}

#[test]
fn parent_bias_matches_direct_recomputation() {
    let cfg = toy_config();
    let model = random_model(cfg.clone(), 8);
    let plain = Transformer::new(ModelConfig { c_par: 0.0, ..cfg.clone() }, model.params().clone()).unwrap();
    let tc = TokenizedChromosome::new(&wired_circuit());
    assert_eq!(tc.parents(2, &cfg), vec![0, 1]);
    assert_eq!(tc.parents(3, &cfg), vec![2]);
    assert!(tc.parents(0, &cfg).is_empty());

    let e = plain.embed(&tc);
    let biased = model.embed(&tc);
    // Only primary-input sources: unchanged.
    assert_eq!(biased.row(0), e.row(0));
    assert_eq!(biased.row(1), e.row(1));
    let expected = &e.row(2) + &((&e.row(0) + &e.row(1)) * (0.2 / 2.0));
    for (a, b) in biased.row(2).iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
    let expected3 = &e.row(3) + &(&e.row(2) * 0.2);
    for (a, b) in biased.row(3).iter().zip(expected3.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn masked_parent_is_not_a_parent() {
    let cfg = toy_config();
    let mut tc = TokenizedChromosome::new(&wired_circuit());
    tc.in1[2] = cfg.input_mask();
    assert_eq!(tc.parents(2, &cfg), vec![1]);
}

#[test]
fn forward_is_deterministic_and_finite() {
    let cfg = toy_config();
    let model = random_model(cfg, 4);
    let tc = TokenizedChromosome::new(&wired_circuit());
    let a = model.forward(&tc);
    let b = model.forward(&tc);
    assert_eq!(a, b);
    assert!(a.all_finite());
    assert!(a.sensitivity.iter().all(|&s| s > 0.0 && s <= 1.0));
}

#[test]
fn zero_heads_give_uniform_distributions() {
    let cfg = toy_config();
    let mut model = random_model(cfg.clone(), 4);
    for t in model.params_mut().tensors_mut() {
        if t.name.starts_with("head.") {
            t.data.fill(0.0);
        }
    }
    let c = wired_circuit();
    let out = model.forward(&TokenizedChromosome::new(&c));
    let d = mutation_distribution(&out, &c);
    for p in 0..cfg.nodes {
        for &x in &d.function[p] {
            assert!((x - 1.0 / 7.0).abs() < 1e-15);
        }
        let n = d.input[p].len() as f64;
        assert!(d.input[p].iter().all(|&x| (x - 1.0 / n).abs() < 1e-15));
    }
    // Sigmoid(0) everywhere: equal mass over the active nodes.
    let active = c.active();
    for p in 0..cfg.nodes {
        let want = if active.contains(p) { 1.0 / active.len() as f64 } else { 0.0 };
        assert!((d.location[p] - want).abs() < 1e-15);
    }
}

#[test]
fn restricted_input_softmax_keeps_ratios() {
    let cfg = toy_config();
    let model = random_model(cfg.clone(), 9);
    let c = wired_circuit();
    let out = model.forward(&TokenizedChromosome::new(&c));
    let d = mutation_distribution(&out, &c);
    d.check(&c).unwrap();
    for p in 0..cfg.nodes {
        let full = softmax(out.input_logits.row(p).as_slice().unwrap());
        let support = d.input[p].len();
        assert_eq!(support, cfg.inputs + p);
        let mass: f64 = full[..support].iter().sum();
        for i in 0..support {
            assert!((d.input[p][i] - full[i] / mass).abs() < 1e-12);
        }
        assert!((d.input[p].iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn location_mass_stays_on_active_nodes() {
    let nodes = vec![
        Node::new(0, 1, GateFunction::And),
        Node::new(2, 0, GateFunction::Or),
        Node::new(1, 0, GateFunction::Xor),
        Node::new(3, 0, GateFunction::Or),
        Node::new(1, 0, GateFunction::Nand),
        Node::new(0, 1, GateFunction::Nor),
    ];
    // The two output nodes read only primary inputs.
    let c = Chromosome::new(CircuitParams::multiplier(1, 6), nodes, None).unwrap();
    let cfg = ModelConfig::new(c.params());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut small = cfg.clone();
    small.d_model = 8;
    small.heads = 2;
    small.layers = 1;
    small.ffn_hidden = 8;
    let model = Transformer::init(small, &mut rng).unwrap();
    let out = model.forward(&TokenizedChromosome::new(&c));
    let d = mutation_distribution(&out, &c);
    let active = c.active();
    assert_eq!(active.positions(), &[4, 5]);
    assert!((d.location[4] + d.location[5] - 1.0).abs() < 1e-12);

    let mut one = out.clone();
    one.sensitivity = Array1::from_elem(6, 0.4);
    let d = mutation_distribution(&one, &c);
    assert_eq!(d.location, vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
}

#[test]
fn zero_sensitivity_falls_back_to_uniform_locations() {
    let cfg = toy_config();
    let model = random_model(cfg.clone(), 2);
    let c = wired_circuit();
    let mut out = model.forward(&TokenizedChromosome::new(&c));
    out.sensitivity.fill(0.0);
    let d = mutation_distribution(&out, &c);
    d.check(&c).unwrap();
}

#[test]
fn unused_head_rows_get_zero_gradient() {
    let cfg = toy_config();
    let model = random_model(cfg.clone(), 6);
    let tc = TokenizedChromosome::new(&wired_circuit());
    let mut g = OutputGrad::zeros(&cfg);
    g.func_logits[[0, 3]] = 1.0;
    let (out, cache) = model.forward_cached(&tc);
    let mut grads = model.params().zeros_like();
    model.backward(&tc, &out, &cache, &g, &mut grads);
    assert!(grads.get("head.input.w").unwrap().data.iter().all(|&x| x == 0.0));
    assert!(grads.get("head.sens.b").unwrap().data.iter().all(|&x| x == 0.0));
    let fb = &grads.get("head.func.b").unwrap().data;
    assert_eq!(fb, &vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn checkpoint_round_trips_exactly() {
    let cfg = toy_config();
    let model = random_model(cfg.clone(), 12);
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &cfg, model.params()).unwrap();
    let (cfg2, params2) = read_checkpoint(&bytes[..]).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(&params2, model.params());
    let reloaded = Transformer::new(cfg2, params2).unwrap();
    let tc = TokenizedChromosome::new(&wired_circuit());
    assert_eq!(reloaded.forward(&tc), model.forward(&tc));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(read_checkpoint(&bad[..]).is_err());
    let mut long = bytes;
    long.push(0);
    assert!(read_checkpoint(&long[..]).is_err());
}

#[test]
fn swapping_unreferenced_nodes_permutes_heads() {
    // Without position embeddings the encoder is permutation-equivariant;
    // nodes 3 and 4 feed nothing, so swapping them only relabels slots.
    let cfg = toy_config();
    let mut model = random_model(cfg.clone(), 21);
    for t in model.params_mut().tensors_mut() {
        if t.name == "embed.pos" {
            t.data.fill(0.0);
        }
    }
    let nodes = vec![
        Node::new(0, 1, GateFunction::And),
        Node::new(2, 3, GateFunction::Or),
        Node::new(4, 2, GateFunction::Xor),
        Node::new(6, 6, GateFunction::Inv),
        Node::new(5, 1, GateFunction::Nand),
        Node::new(4, 5, GateFunction::Nor),
    ];
    let c = Chromosome::new(toy_params(), nodes, None).unwrap();
    let tc = TokenizedChromosome::new(&c);
    let mut swapped = tc.clone();
    swapped.in1.swap(3, 4);
    swapped.in2.swap(3, 4);
    swapped.func.swap(3, 4);
    let a = model.forward(&tc);
    let b = model.forward(&swapped);
    let map = [0usize, 1, 2, 4, 3, 5];
    for p in 0..cfg.nodes {
        let q = map[p];
        assert!((a.sensitivity[p] - b.sensitivity[q]).abs() < 1e-12);
        for f in 0..7 {
            assert!((a.func_logits[[p, f]] - b.func_logits[[q, f]]).abs() < 1e-12);
        }
    }
}

#[test]
fn model_fits_only_its_shape() {
    let cfg = toy_config();
    let model = random_model(cfg, 1);
    assert!(model.check(&toy_params()).is_ok());
    assert!(model.check(&CircuitParams::multiplier(2, 7)).is_err());
    let c = wired_circuit();
    model.distribution(&c).unwrap().check(&c).unwrap();
    let _ = (GeneSlot::Func, Array2::<f64>::zeros((1, 1)), ParamStore::zeros(model.config()));
}

use dtq_core::autograd::{Tape, Tensor};
use dtq_core::container::{Container, ContainerWriter};
use dtq_core::dt::{action_loss, DecisionTransformer, DtConfig, WindowBatch, STATE_TOKEN, TOKENS_PER_STEP};
use dtq_core::gpt2::{GptConfig, GptParams};
use dtq_core::lora::{LoraConfig, LoraSet};
use dtq_core::params::{ParamGroup, Parameterized};
use dtq_core::training::{loss_and_grads, AdamW, TrainConfig};
use dtq_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_dt(lora: Option<&LoraConfig>, seed: u64) -> DecisionTransformer<f64> {
    let cfg = DtConfig {
        context_len: 8,
        state_dim: 5,
        action_dim: 3,
        max_ep_len: 64,
    };
    DecisionTransformer::init_random(&GptConfig::toy(), cfg, lora, seed).unwrap()
}

fn random_batch(cfg: &DtConfig, b: usize, pad: &[usize], rng: &mut ChaCha8Rng) -> WindowBatch<f64> {
    let k = cfg.context_len;
    let mut pad_mask = Vec::with_capacity(b * k);
    let mut timesteps = Vec::with_capacity(b * k);
    for &p in &pad[..b] {
        let start = rng.random_range(0..cfg.max_ep_len - k);
        for t in 0..k {
            pad_mask.push(t < p);
            timesteps.push(if t < p { 0 } else { start + t });
        }
    }
    WindowBatch {
        rtg: Tensor::randn(&[b, k, 1], 1.0, rng),
        states: Tensor::randn(&[b, k, cfg.state_dim], 1.0, rng),
        actions: Tensor::randn(&[b, k, cfg.action_dim], 0.5, rng),
        timesteps,
        pad_mask,
    }
}

fn randomize_lora_b(model: &mut DecisionTransformer<f64>, rng: &mut ChaCha8Rng) {
    for p in model.params_mut() {
        if p.name.ends_with("lora_B") {
            p.value = Tensor::randn(p.value.shape(), 0.05, rng);
        }
    }
}

#[test]
fn zeroed_output_projections_reduce_to_final_layer_norm() {
    let mut p = GptParams::<f64>::init_random(&GptConfig::toy(), 3).unwrap();
    for b in &mut p.blocks {
        b.attn_out.value = Tensor::zeros(b.attn_out.value.shape());
        b.mlp_out.value = Tensor::zeros(b.mlp_out.value.shape());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = Tensor::randn(&[2, 6, 64], 1.0, &mut rng);
    let out = p.infer(&h, &[false; 12], None).unwrap();

    // Oracle: plain row-wise LayerNorm with the final gain and bias.
    let (g, beta) = (p.ln_f.gain.value.data(), p.ln_f.bias.value.data());
    for (row, got) in h.data().chunks(64).zip(out.data().chunks(64)) {
        let mean = row.iter().sum::<f64>() / 64.0;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 64.0;
        for j in 0..64 {
            let want = (row[j] - mean) / (var + 1e-5).sqrt() * g[j] + beta[j];
            assert!((got[j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn gpt2_small_shape_contract() {
    let p = GptParams::<f32>::init_random(
        &GptConfig {
            vocab_size: 0,
            ..GptConfig::gpt2_small()
        },
        0,
    )
    .unwrap();
    assert_eq!(p.blocks.len(), 12);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h = Tensor::<f32>::randn(&[2, 60, 768], 1.0, &mut rng);
    let out = p.infer(&h, &[false; 120], None).unwrap();
    assert_eq!(out.shape(), &[2, 60, 768]);
    assert!(out.is_finite());
}

#[test]
fn init_random_is_seeded_and_scaled() {
    let c = GptConfig {
        n_layer: 1,
        n_head: 12,
        d_model: 768,
        max_seq_len: 16,
        ..GptConfig::toy()
    };
    let a = GptParams::<f64>::init_random(&c, 20742).unwrap();
    let b = GptParams::<f64>::init_random(&c, 20742).unwrap();
    let other = GptParams::<f64>::init_random(&c, 55230).unwrap();
    for (x, y) in a.params().iter().zip(b.params()) {
        assert!(x.value.bit_eq(&y.value), "{}", x.name);
    }
    assert!(!a.blocks[0].attn_out.value.bit_eq(&other.blocks[0].attn_out.value));

    let w = a.blocks[0].attn_out.value.data();
    assert_eq!(a.blocks[0].attn_out.value.shape(), &[768, 768]);
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((std - 0.02).abs() < 0.002, "std {std}");
    assert!(a.blocks[0].attn_out_bias.value.data().iter().all(|&x| x == 0.0));
    assert!(a.blocks[0].ln_1.gain.value.data().iter().all(|&x| x == 1.0));
}

fn container_without(params: &GptParams<f64>, skip: &str) -> Container {
    let mut w = ContainerWriter::new();
    for p in params.params() {
        if p.name != skip {
            w.insert(p.name.clone(), &p.value);
        }
    }
    w.metadata("n_head", params.config.n_head.to_string());
    Container::from_bytes(&w.to_bytes().unwrap()).unwrap()
}

#[test]
fn import_round_trip_freezes_everything() {
    let c = GptConfig::toy();
    let p = GptParams::<f64>::init_random(&c, 9).unwrap();
    let mut w = ContainerWriter::new();
    p.write_container(&mut w);
    let container = Container::from_bytes(&w.to_bytes().unwrap()).unwrap();
    let discovered = GptConfig::discover(&container).unwrap();
    assert_eq!(discovered.n_layer, 2);
    assert_eq!(discovered.d_model, 64);
    assert_eq!(discovered.n_head, 4);
    let q = GptParams::<f64>::import(&container, &c).unwrap();
    assert_eq!(q.trainable_counts().total(), 0);
    for (x, y) in p.params().iter().zip(q.params()) {
        assert!(x.value.bit_eq(&y.value));
    }
}

#[test]
fn import_names_missing_tensor() {
    let c = GptConfig::toy();
    let p = GptParams::<f64>::init_random(&c, 9).unwrap();
    let container = container_without(&p, "h.1.ln_2.bias");
    let err = GptParams::<f64>::import(&container, &c).unwrap_err();
    assert!(err.to_string().contains("h.1.ln_2.bias"), "{err}");
}

#[test]
fn import_reports_shape_mismatch() {
    let c = GptConfig::toy();
    let p = GptParams::<f64>::init_random(&c, 9).unwrap();
    let mut w = ContainerWriter::new();
    for q in p.params() {
        if q.name == "h.0.mlp.c_fc.weight" {
            w.insert(q.name.clone(), &Tensor::<f64>::zeros(&[64, 256]));
        } else {
            w.insert(q.name.clone(), &q.value);
        }
    }
    let err = GptParams::<f64>::import(&Container::from_bytes(&w.to_bytes().unwrap()).unwrap(), &c).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[256, 64]") && msg.contains("[64, 256]"), "{msg}");
}

#[test]
fn backbone_is_causal_and_masks_padding() {
    let p = GptParams::<f64>::init_random(&GptConfig::toy(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let l = 10;
    let h = Tensor::randn(&[1, l, 64], 1.0, &mut rng);
    let base = p.infer(&h, &vec![false; l], None).unwrap();
    for i in 0..l - 1 {
        let mut h2 = h.clone();
        for x in &mut h2.data_mut()[(i + 1) * 64..] {
            *x += 3.0;
        }
        let out = p.infer(&h2, &vec![false; l], None).unwrap();
        assert_eq!(
            &out.data()[..(i + 1) * 64],
            &base.data()[..(i + 1) * 64],
            "position {i}"
        );
    }

    // Changing a padded position leaves every other position untouched.
    let mut mask = vec![false; l];
    mask[0] = true;
    mask[1] = true;
    let masked = p.infer(&h, &mask, None).unwrap();
    let mut h3 = h.clone();
    for x in &mut h3.data_mut()[64..128] {
        *x = -7.0;
    }
    let out = p.infer(&h3, &mask, None).unwrap();
    assert_eq!(&out.data()[128..], &masked.data()[128..]);
}

#[test]
fn lora_attach_is_transparent_and_counts() {
    let c = GptConfig::toy();
    let base = GptParams::<f64>::init_random(&c, 5).unwrap();
    let mut adapted = base.clone();
    let lora = LoraSet::attach(&mut adapted, &LoraConfig::with_rank(8), 6).unwrap();
    assert_eq!(lora.len(), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = Tensor::randn(&[2, 12, 64], 1.0, &mut rng);
    let mask = vec![false; 24];
    let a = base.infer(&h, &mask, None).unwrap();
    let b = adapted.infer(&h, &mask, Some(&lora)).unwrap();
    assert!(a.bit_eq(&b));

    assert_eq!(adapted.trainable_counts().total(), 0);
    // r·(d+k) per pair: qkv 8·(192+64), out 8·(64+64), two layers.
    assert_eq!(lora.trainable_counts().group(ParamGroup::Lora), 2 * (8 * 256 + 8 * 128));
    assert_eq!(LoraConfig::with_rank(8).trainable_count(&c).unwrap(), 6144);
}

#[test]
fn lora_effective_weight_matches_dense_oracle() {
    let c = GptConfig::toy();
    let mut p = GptParams::<f64>::init_random(&c, 5).unwrap();
    let mut lora = LoraSet::attach(
        &mut p,
        &LoraConfig {
            alpha: Some(4.0),
            ..LoraConfig::with_rank(8)
        },
        6,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for q in lora.params_mut() {
        q.value = Tensor::randn(q.value.shape(), 0.3, &mut rng);
    }
    let base = &p.blocks[1].attn_qkv;
    let pair = lora.pair(&base.name).unwrap();
    let w = pair.effective_weight(&base.value).unwrap();
    let (d, k, r) = (192, 64, 8);
    let (a, b) = (pair.a.value.data(), pair.b.value.data());
    for i in 0..d {
        for j in 0..k {
            let dw: f64 = (0..r).map(|s| b[i * r + s] * a[s * k + j]).sum();
            let want = base.value.data()[i * k + j] + 0.5 * dw;
            assert!((w.data()[i * k + j] - want).abs() < 1e-12);
        }
    }

    lora.reset_updates();
    let h = Tensor::randn(&[1, 5, 64], 1.0, &mut rng);
    let plain = p.infer(&h, &[false; 5], None).unwrap();
    let adapted = p.infer(&h, &[false; 5], Some(&lora)).unwrap();
    assert!(plain.bit_eq(&adapted));
}

#[test]
fn frozen_base_survives_optimizer_steps() {
    let mut model = toy_dt(Some(&LoraConfig::with_rank(8)), 1);
    let before: Vec<Tensor<f64>> = model.backbone.params().iter().map(|p| p.value.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut opt = AdamW::new();
    let cfg = TrainConfig::default();
    for _ in 0..20 {
        let batch = random_batch(&model.config, 4, &[0, 2, 5, 7], &mut rng);
        let (_, grads) = loss_and_grads(&model, &batch).unwrap();
        opt.update(model.params_mut(), &grads, &cfg).unwrap();
    }
    for (p, old) in model.backbone.params().iter().zip(&before) {
        assert!(p.value.bit_eq(old), "{} changed", p.name);
    }
    let b_moved = model
        .lora
        .as_ref()
        .unwrap()
        .pairs()
        .any(|p| p.b.value.data().iter().any(|&x| x != 0.0));
    assert!(b_moved);
}

#[test]
fn gpt2_small_lora_count_is_884736() {
    let c = GptConfig::gpt2_small();
    let n = LoraConfig::default().trainable_count(&c).unwrap();
    assert_eq!(n, 884_736);
    assert_eq!(n, 12 * (16 * (768 + 2304) + 16 * (768 + 768)));
    let frac = n as f64 / c.param_count() as f64;
    assert!((frac - 0.00711).abs() < 5e-5, "{frac}");
}

#[test]
fn window_is_interleaved_with_state_tokens_at_3t_plus_1() {
    let model = toy_dt(None, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = random_batch(&model.config, 2, &[0, 3], &mut rng);
    let mut tape = Tape::inference();
    let (h, mask) = model.embed_window(&mut tape, &batch).unwrap();
    assert_eq!(tape.shape(h), &[2, 24, 64]);
    assert_eq!(mask.len(), 48);
    for (i, m) in mask.iter().enumerate() {
        assert_eq!(*m, batch.pad_mask[i / TOKENS_PER_STEP]);
    }
    assert_eq!(STATE_TOKEN, 1);
    // K = 20 fills the 60-token toy context.
    assert_eq!(
        DtConfig {
            context_len: 20,
            ..model.config.clone()
        }
        .seq_len(),
        60
    );
}

#[test]
fn zeroed_embedder_branches_give_layer_norm_of_lift_plus_timestep() {
    let mut model = toy_dt(None, 3);
    for e in [
        &mut model.embedders.rtg,
        &mut model.embedders.state,
        &mut model.embedders.action,
    ] {
        e.proj.weight.value = Tensor::zeros(e.proj.weight.value.shape());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = random_batch(&model.config, 1, &[0], &mut rng);
    let mut tape = Tape::inference();
    let (h, _) = model.embed_window(&mut tape, &batch).unwrap();
    let h = tape.value(h).clone();

    let d = 64;
    let ln = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / d as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
        v.iter().map(|x| (x - mean) / (var + 1e-5).sqrt()).collect::<Vec<_>>()
    };
    let lift = |w: &Tensor<f64>, b: &Tensor<f64>, x: &[f64]| {
        (0..d)
            .map(|o| {
                b.data()[o]
                    + x.iter()
                        .enumerate()
                        .map(|(i, xi)| w.data()[o * x.len() + i] * xi)
                        .sum::<f64>()
            })
            .collect::<Vec<_>>()
    };
    let e = &model.embedders;
    let t = 4;
    let ts = batch.timesteps[t];
    let p_t = &e.timestep.value.data()[ts * d..(ts + 1) * d];
    let x = &batch.states.data()[t * 5..(t + 1) * 5];
    let y: Vec<f64> = lift(&e.state.lift.weight.value, &e.state.lift.bias.value, x)
        .iter()
        .zip(p_t)
        .map(|(a, b)| a + b)
        .collect();
    let want = ln(&y);
    let row = 3 * t + 1;
    for (got, want) in h.data()[row * d..(row + 1) * d].iter().zip(&want) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn timestep_out_of_table_is_range_error() {
    let model = toy_dt(None, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut batch = random_batch(&model.config, 1, &[0], &mut rng);
    batch.timesteps[7] = 64;
    assert!(matches!(model.infer(&batch), Err(Error::Range(_))));
}

#[test]
fn predictions_are_causal_bounded_and_padding_neutral() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..5 {
        let mut model = toy_dt(Some(&LoraConfig::with_rank(4)), trial);
        randomize_lora_b(&mut model, &mut rng);
        let k = model.config.context_len;
        let batch = random_batch(&model.config, 2, &[0, 2], &mut rng);
        let base = model.infer(&batch).unwrap();
        assert_eq!(base.shape(), &[2, k, 3]);
        assert!(base.data().iter().all(|x| x.abs() < 1.0));
        for t in 0..k {
            let mut b = batch.clone();
            for row in 0..2 {
                for s in 0..k {
                    let cell = row * k + s;
                    if s > t {
                        b.rtg.data_mut()[cell] += 1.0;
                        b.states.data_mut()[cell * 5..(cell + 1) * 5]
                            .iter_mut()
                            .for_each(|x| *x -= 0.7);
                    }
                    if s >= t {
                        // a_t follows s_t in the sequence, so it is invisible too.
                        b.actions.data_mut()[cell * 3..(cell + 1) * 3]
                            .iter_mut()
                            .for_each(|x| *x += 0.9);
                    }
                }
            }
            let out = model.infer(&b).unwrap();
            for row in 0..2 {
                for s in 0..=t {
                    let i = (row * k + s) * 3;
                    assert_eq!(&out.data()[i..i + 3], &base.data()[i..i + 3], "trial {trial} t {t}");
                }
            }
        }
    }
}

#[test]
fn left_padding_does_not_change_real_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model = toy_dt(Some(&LoraConfig::with_rank(4)), 3);
    randomize_lora_b(&mut model, &mut rng);
    let cfg = model.config.clone();
    // Four real steps, once with four padded slots and once with garbage in them.
    let short = random_batch(&cfg, 1, &[4], &mut rng);
    let mut noisy = short.clone();
    for s in 0..4 {
        noisy.rtg.data_mut()[s] = 5.0;
        noisy.states.data_mut()[s * 5..(s + 1) * 5]
            .iter_mut()
            .for_each(|x| *x = -3.0);
        noisy.timesteps[s] = 17;
    }
    let a = model.infer(&short).unwrap();
    let b = model.infer(&noisy).unwrap();
    for i in 12..24 {
        assert!((a.data()[i] - b.data()[i]).abs() < 1e-9);
    }

    // The same four steps in a K = 4 window without any padding.
    let small_cfg = DtConfig { context_len: 4, ..cfg };
    let mut small = model.clone();
    small.config = small_cfg;
    let tight = WindowBatch {
        rtg: Tensor::new(&[1, 4, 1], short.rtg.data()[4..].to_vec()).unwrap(),
        states: Tensor::new(&[1, 4, 5], short.states.data()[20..].to_vec()).unwrap(),
        actions: Tensor::new(&[1, 4, 3], short.actions.data()[12..].to_vec()).unwrap(),
        timesteps: short.timesteps[4..].to_vec(),
        pad_mask: vec![false; 4],
    };
    let c = small.infer(&tight).unwrap();
    for i in 0..12 {
        assert!((a.data()[12 + i] - c.data()[i]).abs() < 1e-9);
    }
}

/// Masked MSE from the raw tensors.
fn loss_oracle(model: &DecisionTransformer<f64>, batch: &WindowBatch<f64>) -> f64 {
    let pred = model.infer(batch).unwrap();
    let d_a = model.config.action_dim;
    let (mut sum, mut n) = (0.0, 0);
    for (cell, &pad) in batch.pad_mask.iter().enumerate() {
        if !pad {
            for j in cell * d_a..(cell + 1) * d_a {
                sum += (pred.data()[j] - batch.actions.data()[j]).powi(2);
                n += 1;
            }
        }
    }
    sum / n as f64
}

fn get(model: &DecisionTransformer<f64>, name: &str, c: usize) -> f64 {
    model
        .params()
        .into_iter()
        .find(|p| p.name == name)
        .unwrap()
        .value
        .data()[c]
}

fn set(model: &mut DecisionTransformer<f64>, name: &str, c: usize, v: f64) {
    model
        .params_mut()
        .into_iter()
        .find(|p| p.name == name)
        .unwrap()
        .value
        .data_mut()[c] = v;
}

fn check_param_gradients(
    model: &mut DecisionTransformer<f64>,
    batch: &WindowBatch<f64>,
    coords: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let (loss, grads) = loss_and_grads(model, batch).unwrap();
    assert!((loss - loss_oracle(model, batch)).abs() < 1e-12);
    let h = 1e-5;
    let names: Vec<String> = model
        .params()
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.name.clone())
        .collect();
    let mut worst: f64 = 0.0;
    for name in names {
        let g = grads
            .get(&name)
            .unwrap_or_else(|| panic!("no gradient for {name}"))
            .clone();
        let n = g.numel();
        let picks: Vec<usize> = (0..coords.min(n)).map(|_| rng.random_range(0..n)).collect();
        // Per-tensor scale: the largest analytic component anywhere in it.
        let (mut err, mut scale) = (0.0f64, g.data().iter().fold(1e-8f64, |m, x| m.max(x.abs())));
        for c in picks {
            let orig = get(model, &name, c);
            set(model, &name, c, orig + h);
            let up = loss_oracle(model, batch);
            set(model, &name, c, orig - h);
            let down = loss_oracle(model, batch);
            set(model, &name, c, orig);
            let numeric = (up - down) / (2.0 * h);
            err = err.max((numeric - g.data()[c]).abs());
            scale = scale.max(numeric.abs()).max(g.data()[c].abs());
        }
        worst = worst.max(err / scale);
        assert!(err / scale < 1e-5, "{name}: rel error {}", err / scale);
    }
    worst
}

#[test]
fn toy_dt_parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut model = toy_dt(Some(&LoraConfig::with_rank(4)), 7);
    randomize_lora_b(&mut model, &mut rng);
    let batch = random_batch(&model.config, 2, &[0, 3], &mut rng);
    check_param_gradients(&mut model, &batch, 3, &mut rng);

    let mut full = toy_dt(None, 8);
    let batch = random_batch(&full.config, 2, &[1, 0], &mut rng);
    check_param_gradients(&mut full, &batch, 2, &mut rng);
}

#[test]
fn lora_factors_receive_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = toy_dt(Some(&LoraConfig::with_rank(4)), 1);
    let batch = random_batch(&model.config, 2, &[0, 0], &mut rng);
    let (_, grads) = loss_and_grads(&model, &batch).unwrap();
    let nonzero = |n: &str| grads[n].data().iter().any(|&x| x != 0.0);
    // With B = 0 only B sees gradient; A follows once B moves.
    assert!(nonzero("h.0.attn.c_attn.weight.lora_B"));
    assert!(!nonzero("h.0.attn.c_attn.weight.lora_A"));
    let mut moved = model.clone();
    randomize_lora_b(&mut moved, &mut rng);
    let (_, grads) = loss_and_grads(&moved, &batch).unwrap();
    assert!(grads["h.0.attn.c_attn.weight.lora_A"].data().iter().any(|&x| x != 0.0));
    assert!(!grads.contains_key("h.0.attn.c_attn.weight"));
}

#[test]
fn action_loss_examples() {
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::new(&[1, 2, 1], vec![0.3, 0.9]).unwrap());
    let t = tape.constant(Tensor::new(&[1, 2, 1], vec![0.3, 0.4]).unwrap());
    let same = action_loss(&mut tape, p, p, &[false, false]).unwrap();
    assert_eq!(tape.value(same).item(), 0.0);
    let one = action_loss(&mut tape, p, t, &[true, false]).unwrap();
    assert!((tape.value(one).item() - 0.25).abs() < 1e-15);
    assert!(matches!(
        action_loss(&mut tape, p, t, &[true, true]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn checkpoint_container_reload_reproduces_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = toy_dt(Some(&LoraConfig::with_rank(4)), 9);
    randomize_lora_b(&mut model, &mut rng);
    let mut w = ContainerWriter::new();
    model.write_container(&mut w);
    let c = Container::from_bytes(&w.to_bytes().unwrap()).unwrap();
    let mut fresh = toy_dt(Some(&LoraConfig::with_rank(4)), 100);
    fresh.load_from(&c).unwrap();
    let batch = random_batch(&model.config, 3, &[0, 1, 7], &mut rng);
    assert!(model.infer(&batch).unwrap().bit_eq(&fresh.infer(&batch).unwrap()));
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{EncodedList, Limits, PaddedList, PaddedSeq, LIST_SIZE, PAD};
use crate::error::Error;
use crate::nn::{Activation, ConvStackConfig};
use crate::tensor::gradcheck::check_params_except;
use crate::tensor::{Graph, ParamStore, Tensor};

const VOCAB: usize = 14;

fn tiny(variant: &str) -> ModelConfig {
    ModelConfig {
        variant: variant.into(),
        vocab_size: VOCAB,
        embedding_dim: 4,
        gru_hidden: 2,
        conv: ConvStackConfig {
            filters: vec![2, 2],
            ..ConvStackConfig::default()
        },
        projection_dim: 4,
        attention_heads: 2,
        attention_blocks: 1,
        ff_mult: 2,
        limits: Limits {
            max_turns: 3,
            max_utterance_len: 6,
            max_candidate_len: 6,
            max_provenance_len: 4,
        },
        mlp_hidden: vec![3],
        mlp_activation: Activation::Tanh,
        readout: Readout::Flatten,
        freeze_embeddings: false,
    }
}

fn random_seq(rng: &mut ChaCha8Rng, max: usize) -> Vec<usize> {
    let len = rng.gen_range(1..=max);
    (0..len).map(|_| rng.gen_range(1..VOCAB)).collect()
}

fn random_list(rng: &mut ChaCha8Rng, limits: &Limits) -> EncodedList {
    let turns = rng.gen_range(1..=limits.max_turns);
    EncodedList {
        context: (0..turns).map(|_| random_seq(rng, limits.max_utterance_len)).collect(),
        candidates: (0..LIST_SIZE).map(|_| random_seq(rng, limits.max_candidate_len)).collect(),
        provenances: (0..LIST_SIZE).map(|_| random_seq(rng, limits.max_provenance_len)).collect(),
        positive: rng.gen_range(0..LIST_SIZE),
    }
}

fn padded(seed: u64, cfg: &ModelConfig) -> PaddedList {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PaddedList::new(&random_list(&mut rng, &cfg.limits), &cfg.limits).unwrap()
}

#[test]
fn interaction_of_orthonormal_rows_is_identity() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let e = g.constant(Tensor::new(vec![3, 3], eye.clone()).unwrap());
    let h = g.constant(Tensor::zeros(vec![3, 2]));
    let (m_e, m_h) = interaction_matrices(&mut g, e, e, h, h).unwrap();
    assert_eq!(g.data(m_e), eye.as_slice());
    assert!(g.data(m_h).iter().all(|&v| v == 0.0));
}

#[test]
fn interaction_shapes_and_padding() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rand_rows = |rows: usize, real: usize, dim: usize| {
        let data = (0..rows * dim)
            .map(|i| if i / dim < real { rng.gen_range(-1.0..1.0) } else { 0.0 })
            .collect();
        Tensor::new(vec![rows, dim], data).unwrap()
    };
    let (u, c, p) = (rand_rows(90, 70, 8), rand_rows(90, 90, 8), rand_rows(30, 30, 8));
    let (hu, hc, hp) = (rand_rows(90, 70, 4), rand_rows(90, 90, 4), rand_rows(30, 30, 4));
    let vars: Vec<_> = [u, c, p, hu, hc, hp].into_iter().map(|t| g.constant(t)).collect();
    let (mc, _) = interaction_matrices(&mut g, vars[0], vars[1], vars[3], vars[4]).unwrap();
    let (mp, mph) = interaction_matrices(&mut g, vars[0], vars[2], vars[3], vars[5]).unwrap();
    assert_eq!(g.shape(mc), [90, 90]);
    assert_eq!(g.shape(mp), [90, 30]);
    for m in [mc, mp, mph] {
        let cols = g.shape(m)[1];
        assert!(g.data(m)[70 * cols..].iter().all(|&v| v == 0.0));
    }
    assert!(matches!(
        interaction_matrices(&mut g, vars[0], vars[3], vars[3], vars[4]),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn variant_registry_resolves_builtins() {
    let r = VariantRegistry::builtin();
    assert_eq!(r.names(), vec!["DMN_ATTENTION", "DMN_GRU", "FCC_ATTENTION", "FCC_GRU"]);
    let fcc = r.resolve("fcc_gru").unwrap();
    assert!(fcc.use_provenance);
    assert_eq!(fcc.encoder, "gru");
    assert!(!r.resolve("DMN_ATTENTION").unwrap().use_provenance);
    let err = r.resolve("IART").unwrap_err().to_string();
    assert!(err.contains("FCC_ATTENTION"), "{err}");
}

#[test]
fn default_config_matches_published_constants() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.embedding_dim, 200);
    assert_eq!(cfg.gru_hidden * 2, cfg.embedding_dim);
    assert_eq!((cfg.attention_heads, cfg.attention_blocks), (2, 2));
    assert_eq!(cfg.limits.max_turns, 10);
    assert_eq!(cfg.conv.output_dim(90, 90).unwrap(), 7744);
    assert_eq!(cfg.conv.output_dim(90, 30).unwrap(), 2464);
    assert_eq!(cfg.mlp_hidden, vec![256, 64]);
}

#[test]
fn scoring_is_pure_and_seeded() {
    for variant in ["DMN_GRU", "DMN_ATTENTION", "FCC_GRU", "FCC_ATTENTION"] {
        let cfg = tiny(variant);
        let list = padded(1, &cfg);
        let a = RankingModel::<f64>::new(&cfg, 5, None).unwrap();
        let b = RankingModel::<f64>::new(&cfg, 5, None).unwrap();
        let s = a.scores(&list).unwrap();
        assert_eq!(s.len(), LIST_SIZE);
        assert_eq!(s, a.scores(&list).unwrap());
        assert_eq!(s, b.scores(&list).unwrap());
        let c = RankingModel::<f64>::new(&cfg, 6, None).unwrap();
        assert_ne!(s, c.scores(&list).unwrap());
    }
}

#[test]
fn dmn_ignores_provenance() {
    let cfg = tiny("DMN_ATTENTION");
    let model = RankingModel::<f64>::new(&cfg, 2, None).unwrap();
    let list = padded(4, &cfg);
    let mut other = list.clone();
    for p in &mut other.provenances {
        *p = PaddedSeq {
            ids: vec![3, 4, 5, PAD],
            mask: vec![true, true, true, false],
        };
    }
    assert_eq!(model.scores(&list).unwrap(), model.scores(&other).unwrap());
    assert!(!model.params.iter().any(|(_, name, _)| name.starts_with("provenance")));
}

#[test]
fn fcc_requires_provenance() {
    let cfg = tiny("FCC_GRU");
    let model = RankingModel::<f64>::new(&cfg, 2, None).unwrap();
    let list = padded(4, &cfg);
    let mut g = Graph::inference(&model.params);
    let ctx = model.network.encode_context(&mut g, &list).unwrap();
    let err = model.network.score_candidate(&mut g, &ctx, &list.candidates[0], None);
    assert!(matches!(err, Err(Error::Contract(_))));
}

/// With the provenance half of the first scorer layer zeroed, a dual-channel
/// model scores exactly like the single-channel model sharing its weights.
#[test]
fn zeroed_provenance_columns_reduce_to_single_channel() {
    for (fcc, dmn) in [("FCC_GRU", "DMN_GRU"), ("FCC_ATTENTION", "DMN_ATTENTION")] {
        let mut full = RankingModel::<f64>::new(&tiny(fcc), 8, None).unwrap();
        let mut single = RankingModel::<f64>::new(&tiny(dmn), 9, None).unwrap();
        let w = full.network.ranker.first_layer_weight();
        let half = full.params.get(w).shape()[0] / 2;
        let width = full.params.get(w).shape()[1];
        full.params.get_mut(w).data_mut()[half * width..].fill(0.0);
        let names: Vec<(String, Tensor<f64>)> = single
            .params
            .iter()
            .map(|(_, name, t)| {
                let src = full.params.get(full.params.find(name).unwrap());
                let value = if name == "ranker.layer0.weight" {
                    Tensor::new(t.shape().to_vec(), src.data()[..half * width].to_vec()).unwrap()
                } else {
                    src.clone()
                };
                (name.to_string(), value)
            })
            .collect();
        single.assign_all(names).unwrap();
        for seed in 0..3 {
            let list = padded(seed, &tiny(fcc));
            let (a, b) = (full.scores(&list).unwrap(), single.scores(&list).unwrap());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12, "{fcc}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn rescaling_the_output_layer_keeps_the_ranking() {
    let cfg = tiny("FCC_ATTENTION");
    let mut model = RankingModel::<f64>::new(&cfg, 3, None).unwrap();
    let list = padded(2, &cfg);
    let before = model.scores(&list).unwrap();
    model.rescale_output(3.5);
    let after = model.scores(&list).unwrap();
    let order = |s: &[f64]| {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        idx
    };
    assert_eq!(order(&before), order(&after));
    for (b, a) in before.iter().zip(&after) {
        assert!((3.5 * b - a).abs() < 1e-12);
    }
}

#[test]
fn single_turn_gru_encoding_is_one_cell_step() {
    let cfg = tiny("FCC_GRU");
    let model = RankingModel::<f64>::new(&cfg, 4, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut list = random_list(&mut rng, &cfg.limits);
    list.context.truncate(1);
    let list = PaddedList::new(&list, &cfg.limits).unwrap();
    let net = &model.network;
    let mut g = Graph::inference(&model.params);
    let ctx = net.encode_context(&mut g, &list).unwrap();
    let text = net.encode_text(&mut g, &list.candidates[0]).unwrap();
    let out = net.channel_forward(&mut g, &net.text, &ctx, text).unwrap();
    assert_eq!(g.shape(out.turn_features)[0], 1);
    assert_eq!(g.shape(out.encoded), [3, 4]);

    let w = g.param(net.text.projection_weight);
    let b = g.param(net.text.projection_bias);
    let x = g.matmul(out.turn_features, w).unwrap();
    let x = g.add_row(x, b).unwrap();
    let h0 = g.constant(Tensor::zeros(vec![1, 4]));
    let encoder = net.text.encoder.as_ref();
    assert_eq!(encoder.name(), "gru");
    let step = {
        let id = model.params.find("text.gru.w_z").unwrap();
        assert_eq!(model.params.get(id).shape(), [4, 4]);
        let gru = crate::nn::Gru {
            w_z: id,
            u_z: model.params.find("text.gru.u_z").unwrap(),
            b_z: model.params.find("text.gru.b_z").unwrap(),
            w_r: model.params.find("text.gru.w_r").unwrap(),
            u_r: model.params.find("text.gru.u_r").unwrap(),
            b_r: model.params.find("text.gru.b_r").unwrap(),
            w_h: model.params.find("text.gru.w_h").unwrap(),
            u_h: model.params.find("text.gru.u_h").unwrap(),
            b_h: model.params.find("text.gru.b_h").unwrap(),
            input_dim: 4,
            hidden_dim: 4,
        };
        gru.step(&mut g, x, h0).unwrap()
    };
    let encoded = g.data(out.encoded).to_vec();
    assert_eq!(&encoded[..4], g.data(step));
    assert!(encoded[4..].iter().all(|&v| v == 0.0));
}

/// Plain-loop `a·bᵀ` over row-major slices.
fn gram(a: &[f64], b: &[f64], rows_a: usize, rows_b: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows_a * rows_b];
    for i in 0..rows_a {
        for j in 0..rows_b {
            out[i * rows_b + j] = (0..dim).map(|k| a[i * dim + k] * b[j * dim + k]).sum();
        }
    }
    out
}

/// Rebuilds a dual-channel attention score from the layer modules, with
/// lookups, interaction matrices, padding and flattening done by hand.
#[test]
fn attention_score_matches_composition_oracle() {
    let cfg = tiny("FCC_ATTENTION");
    let model = RankingModel::<f64>::new(&cfg, 12, None).unwrap();
    let net = &model.network;
    let list = padded(21, &cfg);
    let turns = list.history_len();
    assert!(turns >= 1);
    let table = model.params.get(net.embedding).data().to_vec();
    let dim = cfg.embedding_dim;
    let lookup = |ids: &[usize]| -> Vec<f64> {
        ids.iter().flat_map(|&id| table[id * dim..(id + 1) * dim].to_vec()).collect()
    };

    let expected: Vec<f64> = (0..LIST_SIZE)
        .map(|k| {
            let mut g = Graph::inference(&model.params);
            let hidden = |g: &mut Graph<'_, f64>, seq: &PaddedSeq| -> Vec<f64> {
                let e = g.constant(Tensor::new(vec![seq.ids.len(), dim], lookup(&seq.ids)).unwrap());
                let h = net.bigru.forward(g, e, &seq.mask).unwrap();
                g.data(h).to_vec()
            };
            let mut flat = Vec::new();
            for (channel, text) in [(&net.text, &list.candidates[k]), (net.provenance.as_ref().unwrap(), &list.provenances[k])] {
                let (lx, lu) = (text.ids.len(), cfg.limits.max_utterance_len);
                let (ex, hx) = (lookup(&text.ids), hidden(&mut g, text));
                let mut rows = Vec::new();
                for turn in &list.context[..turns] {
                    let (eu, hu) = (lookup(&turn.ids), hidden(&mut g, turn));
                    let mut image = gram(&eu, &ex, lu, lx, dim);
                    image.extend(gram(&hu, &hx, lu, lx, 2 * cfg.gru_hidden));
                    let m = g.constant(Tensor::new(vec![2, lu, lx], image).unwrap());
                    let f = channel.cnn.features(&mut g, m).unwrap();
                    let w = g.param(channel.projection_weight);
                    let b = g.param(channel.projection_bias);
                    let p = g.matmul(f, w).unwrap();
                    let p = g.add_row(p, b).unwrap();
                    rows.extend_from_slice(g.data(p));
                }
                rows.resize(cfg.limits.max_turns * cfg.projection_dim, 0.0);
                let seq = g.constant(Tensor::new(vec![cfg.limits.max_turns, cfg.projection_dim], rows).unwrap());
                let r = channel.encoder.encode(&mut g, seq, &list.turn_mask).unwrap();
                flat.extend_from_slice(g.data(r));
            }
            let x = g.constant(Tensor::new(vec![1, flat.len()], flat).unwrap());
            let s = net.ranker.score(&mut g, x).unwrap();
            g.value(s).item()
        })
        .collect();
    let got = model.scores(&list).unwrap();
    for (a, b) in got.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn last_state_readout_builds_and_scores() {
    let mut cfg = tiny("FCC_GRU");
    cfg.readout = Readout::Last;
    let model = RankingModel::<f64>::new(&cfg, 1, None).unwrap();
    assert_eq!(model.network.ranker.input_dim(), 2 * cfg.projection_dim);
    assert!(model.scores(&padded(0, &cfg)).unwrap().iter().all(|s| s.is_finite()));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = tiny("FCC_GRU");
    cfg.projection_dim = 5;
    assert!(matches!(RankingModel::<f64>::new(&cfg, 1, None), Err(Error::Config(_))));
    let mut cfg = tiny("FCC_GRU");
    cfg.limits.max_provenance_len = 2;
    assert!(RankingModel::<f64>::new(&cfg, 1, None).is_err());
    let mut cfg = tiny("DAM");
    cfg.vocab_size = 3;
    assert!(matches!(RankingModel::<f64>::new(&cfg, 1, None), Err(Error::Config(_))));
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for variant in ["DMN_GRU", "DMN_ATTENTION", "FCC_GRU", "FCC_ATTENTION"] {
        let mut cfg = tiny(variant);
        cfg.limits.max_turns = 2;
        let model = RankingModel::<f64>::new(&cfg, 31, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut raw = random_list(&mut rng, &cfg.limits);
        raw.context = vec![random_seq(&mut rng, 6), random_seq(&mut rng, 6)];
        let list = PaddedList::new(&raw, &cfg.limits).unwrap();
        let weights: Vec<f64> = (0..LIST_SIZE).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // The padding row is a constant of the forward pass.
        let pad_row = |id, ei: usize| id == model.network.embedding && ei < cfg.embedding_dim;
        let report = check_params_except(&model.params, 1e-6, Some(12), pad_row, |g| {
            let scores = model.network.score_list(g, &list)?;
            let terms: Vec<_> = scores.iter().zip(&weights).map(|(&s, &w)| g.scale(s, w)).collect();
            let all = g.concat(&terms, 1)?;
            Ok(g.sum(all))
        })
        .unwrap();
        assert!(report.passes(1e-5), "{variant}: {report:?}");
        assert!(report.checked > 100, "{variant}: only {} coordinates", report.checked);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let cfg = tiny("FCC_ATTENTION");
    let model = RankingModel::<f64>::new(&cfg, 7, None).unwrap();
    model.save(&path).unwrap();
    let back = RankingModel::<f64>::load(&path, Some("FCC_ATTENTION")).unwrap();
    assert_eq!(back.config(), model.config());
    for ((_, n1, t1), (_, n2, t2)) in model.params.iter().zip(back.params.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(t1, t2);
    }
    let list = padded(3, &cfg);
    assert_eq!(model.scores(&list).unwrap(), back.scores(&list).unwrap());

    let as_f32 = RankingModel::<f32>::load(&path, None).unwrap();
    assert_eq!(as_f32.params.len(), model.params.len());
}

#[test]
fn checkpoint_with_wrong_variant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    RankingModel::<f64>::new(&tiny("FCC_GRU"), 7, None).unwrap().save(&path).unwrap();
    let err = RankingModel::<f64>::load(&path, Some("DMN_GRU")).err().unwrap();
    assert!(err.to_string().contains("FCC_GRU"), "{err}");
}

#[test]
fn corrupt_checkpoints_report_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    RankingModel::<f64>::new(&tiny("DMN_GRU"), 7, None).unwrap().save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let cut = bytes.len() - 5;
    match read_checkpoint(&bytes[..cut]) {
        Err(Error::Checkpoint { offset, msg }) => {
            assert!(offset as usize <= cut && offset > 0, "{offset}");
            assert!(msg.contains("truncated"), "{msg}");
        }
        other => panic!("expected checkpoint error, got {other:?}"),
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Checkpoint { offset: 0, .. })));
    let mut extra = bytes;
    extra.push(0);
    assert!(matches!(read_checkpoint(&extra[..]), Err(Error::Checkpoint { .. })));
}

fn pad_noise(list: &EncodedList, rng: &mut ChaCha8Rng) -> EncodedList {
    let mut noisy = list.clone();
    for seq in noisy
        .context
        .iter_mut()
        .chain(noisy.candidates.iter_mut())
        .chain(noisy.provenances.iter_mut())
    {
        let extra = rng.gen_range(0..4);
        seq.extend(std::iter::repeat_n(PAD, extra));
    }
    for _ in 0..rng.gen_range(1..3) {
        let len = rng.gen_range(1..4);
        let at = rng.gen_range(0..=noisy.context.len());
        noisy.context.insert(at, vec![PAD; len]);
    }
    noisy
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn padding_never_changes_scores(seed in any::<u64>()) {
        let cfg = tiny(["FCC_ATTENTION", "FCC_GRU"][(seed % 2) as usize]);
        let model = RankingModel::<f64>::new(&cfg, seed % 5, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let list = random_list(&mut rng, &cfg.limits);
        let noisy = pad_noise(&list, &mut rng);
        let a = model.scores(&PaddedList::new(&list, &cfg.limits).unwrap()).unwrap();
        let b = model.scores(&PaddedList::new(&noisy, &cfg.limits).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }
}

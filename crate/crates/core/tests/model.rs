use awi::corpus::{Dialogue, Turn, BOS, EOS};
use awi::model::{export_intention, AwiConfig, AwiModel, AwiState, ModelError};
use awi::tensor::{finite_diff_check, Graph, ParamStore, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(vocab: usize, layers: usize, similarity: bool) -> AwiConfig {
    AwiConfig {
        vocab_size: vocab,
        embed_dim: 4,
        encoder_dim: 6,
        intention_dim: 5,
        decoder_dim: 7,
        attention_dim: 3,
        layers,
        use_similarity_feature: similarity,
    }
}

fn randomized<T: Scalar>(config: AwiConfig, seed: u64, scale: f64) -> AwiModel<T> {
    let mut m = AwiModel::<T>::new(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let ids: Vec<_> = m.params().ids().collect();
    for id in ids {
        for x in m.params_mut().get_mut(id).data_mut() {
            *x = T::of(rng.gen_range(-scale..scale));
        }
    }
    m
}

fn zeroed(config: AwiConfig) -> AwiModel<f64> {
    let mut m = AwiModel::<f64>::new(config, 0).unwrap();
    let ids: Vec<_> = m.params().ids().collect();
    for id in ids {
        m.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    m
}

fn set(m: &mut AwiModel<f64>, name: &str, values: &[f64]) {
    let id = m.param_id(name).unwrap();
    m.params_mut()
        .get_mut(id)
        .data_mut()
        .copy_from_slice(values);
}

fn two_turn_dialogue() -> Dialogue {
    Dialogue {
        id: "g".into(),
        turns: vec![
            Turn {
                user: vec![4, 2],
                agent: vec![3, 4, EOS],
            },
            Turn {
                user: vec![3],
                agent: vec![2, EOS],
            },
        ],
    }
}

fn dialogue_nll<T: Scalar>(
    model: &AwiModel<T>,
    params: &ParamStore<T>,
    d: &Dialogue,
) -> Result<(f64, Option<awi::tensor::Gradients<T>>), ModelError> {
    let mut g = Graph::new(params);
    let mut z = model.state_nodes(&mut g, &AwiState::new(model.config()))?;
    let mut losses = Vec::new();
    for k in 0..d.turns.len() {
        let t = &d.turns[k];
        let nodes = model.turn_nll(&mut g, &z, &t.user, d.previous_response(k), &t.agent)?;
        losses.push(nodes.nll);
        z = nodes.intention;
    }
    let loss = g.sum(&losses)?;
    let grads = g.backward(loss)?;
    Ok((g.value(loss).data()[0].as_f64(), Some(grads)))
}

#[test]
fn gradients_match_finite_differences_in_f64() {
    let d = two_turn_dialogue();
    for (layers, sim) in [(2, true), (1, false)] {
        let model = randomized::<f64>(tiny(5, layers, sim), 7, 0.6);
        let (_, grads) = dialogue_nll(&model, model.params(), &d).unwrap();
        let report = finite_diff_check(
            model.params(),
            &grads.unwrap(),
            |p| dialogue_nll(&model, p, &d).map(|(l, _)| l),
            1e-3,
            &[],
        )
        .unwrap();
        assert!(report.passes(1e-6), "layers={layers} {report:?}");
    }
}

#[test]
fn f32_gradients_match_f64_oracle() {
    let d = two_turn_dialogue();
    let model32 = randomized::<f32>(tiny(5, 2, true), 7, 0.6);
    let model64: AwiModel<f64> = model32.cast();
    let (_, grads) = dialogue_nll(&model32, model32.params(), &d).unwrap();
    let report = finite_diff_check(
        model64.params(),
        &grads.unwrap(),
        |p| dialogue_nll(&model64, p, &d).map(|(l, _)| l),
        1e-5,
        &[],
    )
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn zero_embeddings_propagate_biases_only() {
    let c = tiny(5, 2, false);
    let mut m = randomized::<f64>(c.clone(), 3, 0.5);
    let e = m.param_id("embedding").unwrap();
    m.params_mut().get_mut(e).data_mut().fill(0.0);
    let mut g = Graph::new(m.params());
    let enc = m.encode_turn(&mut g, &[4, 2], &[]).unwrap();
    let p = m.params();
    let (w2, b1, b2) = (
        p.get(m.param_id("encoder.w2").unwrap()),
        p.get(m.param_id("encoder.b1").unwrap()),
        p.get(m.param_id("encoder.b2").unwrap()),
    );
    let h1: Vec<f64> = b1.data().iter().map(|x| x.tanh()).collect();
    for i in 0..c.encoder_dim {
        let s: f64 = (0..c.encoder_dim)
            .map(|j| w2.row(i)[j] * h1[j])
            .sum::<f64>()
            + b2.data()[i];
        assert!((g.value(enc.summary).data()[i] - s.tanh()).abs() < 1e-12);
    }
}

#[test]
fn singleton_source_gives_its_embedding_and_similarity_column() {
    let m = randomized::<f64>(tiny(5, 2, true), 4, 0.5);
    let mut g = Graph::new(m.params());
    let enc = m.encode_turn(&mut g, &[3], &[]).unwrap();
    let e = m.params().get(m.param_id("embedding").unwrap());
    let p = m.params().get(m.param_id("similarity").unwrap());
    assert_eq!(g.value(enc.words).row(0), e.row(3));
    assert_eq!(g.value(enc.similarity.unwrap()).data(), p.row(3));
    let h = g.constant(Tensor::zeros(&[7])).unwrap();
    let (w, c) = m.attention(&mut g, h, &enc).unwrap();
    assert_eq!(g.value(w).data(), &[1.0]);
    assert_eq!(g.value(c).data(), e.row(3));
}

#[test]
fn empty_source_is_rejected() {
    let m = randomized::<f64>(tiny(5, 1, false), 4, 0.5);
    let mut g = Graph::new(m.params());
    assert!(matches!(
        m.encode_turn(&mut g, &[], &[]),
        Err(ModelError::EmptySource)
    ));
}

#[test]
fn identical_words_get_uniform_attention() {
    let m = randomized::<f64>(tiny(6, 2, false), 5, 0.8);
    let mut g = Graph::new(m.params());
    let enc = m.encode_turn(&mut g, &[4, 4, 4, 4], &[]).unwrap();
    let h = g.constant(Tensor::vector(vec![0.3; 7])).unwrap();
    let (w, _) = m.attention(&mut g, h, &enc).unwrap();
    for x in g.value(w).data() {
        assert!((x - 0.25).abs() < 1e-12);
    }
}

#[test]
fn scalar_intention_hand_example() {
    let c = AwiConfig {
        vocab_size: 4,
        embed_dim: 1,
        encoder_dim: 1,
        intention_dim: 1,
        decoder_dim: 1,
        attention_dim: 1,
        layers: 1,
        use_similarity_feature: false,
    };
    let mut m = zeroed(c.clone());
    set(&mut m, "intention.0.input", &[1.0]);
    let mut g = Graph::new(m.params());
    let z0 = m.state_nodes(&mut g, &AwiState::new(&c)).unwrap();
    let h = g.constant(Tensor::vector(vec![0.5])).unwrap();
    let z = m.intention_step(&mut g, &z0, h).unwrap();
    assert!((g.value(z[0]).data()[0] - 0.4621).abs() < 1e-4);
}

#[test]
fn zero_weights_keep_intention_zero() {
    let c = tiny(5, 2, true);
    let m = zeroed(c.clone());
    let mut s = AwiState::new(&c);
    for _ in 0..3 {
        s = m.advance(&s, &[4, 3], &[2, EOS]).unwrap();
        assert!(s
            .intention
            .iter()
            .all(|t| t.data().iter().all(|x| *x == 0.0)));
    }
    assert_eq!(s.turn, 3);
}

#[test]
fn identity_init_projection_gives_tanh_of_intention() {
    let mut c = tiny(5, 1, false);
    c.decoder_dim = c.intention_dim;
    let mut m = zeroed(c.clone());
    let d = c.intention_dim;
    let mut eye = vec![0.0; d * d];
    (0..d).for_each(|i| eye[i * d + i] = 1.0);
    set(&mut m, "decoder.0.init", &eye);
    let mut g = Graph::new(m.params());
    let z = g
        .constant(Tensor::vector(vec![0.2, -0.4, 0.9, 0.0, 1.5]))
        .unwrap();
    let h = m.init_decoder(&mut g, z).unwrap();
    let expect: Vec<f64> = [0.2f64, -0.4, 0.9, 0.0, 1.5]
        .iter()
        .map(|x| x.tanh())
        .collect();
    assert_eq!(g.value(h.hidden[0]).data(), expect.as_slice());
}

#[test]
fn uniform_model_likelihoods() {
    let c = tiny(5, 2, true);
    let m = zeroed(c.clone());
    let s = AwiState::new(&c);
    let target = [3, 4, 2, EOS];
    let score = m.turn_log_likelihood(&s, &[4], &[], &target).unwrap();
    assert!((score.log_likelihood + 4.0 * 5f64.ln()).abs() < 1e-12);
    let n1 = m.normalized_llk(&s, &[4], &[], &target).unwrap();
    let n2 = m
        .normalized_llk(&s, &[4], &[], &[3, 4, 2, 3, 4, 2, EOS])
        .unwrap();
    assert!((n1 + 5f64.ln()).abs() < 1e-12);
    assert!((n1 - n2).abs() < 1e-12);
    assert!(matches!(
        m.normalized_llk(&s, &[4], &[], &[]),
        Err(ModelError::EmptyCandidate)
    ));

    let two = zeroed(tiny(2, 1, false));
    let l = two
        .turn_log_likelihood(&AwiState::new(two.config()), &[0], &[], &[EOS])
        .unwrap();
    assert!((l.log_likelihood + 2f64.ln()).abs() < 1e-12);
}

#[test]
fn single_token_normalized_llk_is_its_log_prob() {
    let m = randomized::<f64>(tiny(5, 2, true), 8, 0.5);
    let s = AwiState::new(m.config());
    let score = m.turn_log_likelihood(&s, &[2, 4], &[], &[3]).unwrap();
    let n = m.normalized_llk(&s, &[2, 4], &[], &[3]).unwrap();
    assert_eq!(n, score.token_log_probs[0]);
    assert!(score.log_likelihood <= 0.0);
}

#[test]
fn session_matches_teacher_forcing() {
    let m = randomized::<f64>(tiny(6, 2, true), 9, 0.5);
    let s = AwiState::new(m.config());
    let target = [4, 5, EOS];
    let forced = m
        .turn_log_likelihood(&s, &[3, 4], &[5, EOS], &target)
        .unwrap();
    let (next, mut session) = m.begin_turn(&s, &[3, 4], &[5, EOS]).unwrap();
    assert_eq!(next, forced.next);
    let mut st = session.initial();
    let mut prev = BOS;
    for (i, &y) in target.iter().enumerate() {
        let (ns, lp) = session.step(&st, prev).unwrap();
        assert!((lp[y as usize] - forced.token_log_probs[i]).abs() < 1e-12);
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        st = ns;
        prev = y;
    }
}

#[test]
fn similarity_feature_off_equals_zero_bias() {
    let on = randomized::<f64>(tiny(5, 2, true), 10, 0.5);
    let mut zero_p = on.clone();
    let p = zero_p.param_id("similarity").unwrap();
    zero_p.params_mut().get_mut(p).data_mut().fill(0.0);
    let mut off_cfg = on.config().clone();
    off_cfg.use_similarity_feature = false;
    let mut off_params = ParamStore::new();
    for (_, name, t) in on.params().iter().filter(|(_, n, _)| *n != "similarity") {
        off_params.push(name, t.clone());
    }
    let off = AwiModel::from_params(off_cfg, off_params).unwrap();
    let s = AwiState::new(on.config());
    let a = zero_p
        .turn_log_likelihood(&s, &[3, 2], &[], &[4, EOS])
        .unwrap();
    let b = off
        .turn_log_likelihood(&s, &[3, 2], &[], &[4, EOS])
        .unwrap();
    assert_eq!(a.token_log_probs, b.token_log_probs);
}

#[test]
fn activations_stay_inside_unit_interval() {
    let m = randomized::<f64>(tiny(6, 2, true), 13, 3.0);
    let mut g = Graph::new(m.params());
    let z0 = m.state_nodes(&mut g, &AwiState::new(m.config())).unwrap();
    let enc = m.encode_turn(&mut g, &[2, 3, 4], &[5]).unwrap();
    let z = m.intention_step(&mut g, &z0, enc.summary).unwrap();
    let st = m.init_decoder(&mut g, z[1]).unwrap();
    let out = m.decoder_step(&mut g, &st, BOS, &enc).unwrap();
    let mut nodes = vec![enc.summary];
    nodes.extend(z);
    nodes.extend(st.hidden);
    nodes.extend(out.state.hidden);
    for n in nodes {
        assert!(g.value(n).data().iter().all(|x| x.abs() < 1.0));
    }
}

#[test]
fn repeated_dialogue_scores_are_identical() {
    let m = randomized::<f32>(tiny(5, 2, true), 14, 0.5);
    let d = two_turn_dialogue();
    assert_eq!(
        m.dialogue_log_likelihood(&d).unwrap(),
        m.dialogue_log_likelihood(&d).unwrap()
    );
}

#[test]
fn out_of_range_token_is_an_error() {
    let m = randomized::<f32>(tiny(5, 1, false), 1, 0.5);
    let s = AwiState::new(m.config());
    assert!(matches!(
        m.turn_log_likelihood(&s, &[9], &[], &[EOS]),
        Err(ModelError::TokenOutOfRange(9, 5))
    ));
}

#[test]
fn intention_export_has_one_line_per_turn() {
    let m = randomized::<f32>(tiny(5, 2, true), 15, 0.5);
    let mut d = two_turn_dialogue();
    d.turns.push(d.turns[0].clone());
    let recs = export_intention(&m, &[d.clone()]).unwrap();
    assert_eq!(recs.len(), 3);
    assert!(recs.iter().all(|r| r.vector.len() == 5));
    assert_eq!(recs[2].turn, 3);
    assert_eq!(recs, export_intention(&m, &[d]).unwrap());
    assert!(recs[0].to_line().starts_with("g\t1\t"));
}

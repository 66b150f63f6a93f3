use std::collections::BTreeMap;

use awi::corpus::synth::{synth_generate, SynthConfig};
use awi::corpus::{tokenize, Dialogue, RawDialogue, RawTurn, Turn, Vocabulary, EOS};
use awi::eval::{
    bleu4, build_instances, combine, corpus_idf_metric, perplexity, rank_candidates,
    read_instances, recall_at_k, score_instances, tune_retrieval_weight, write_instances,
    ComponentScores, MetricError, RetrievalMode,
};
use awi::model::{AwiConfig, AwiModel};
use awi::specificity::{DocumentSource, IdfTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synth(n: usize, seed: u64) -> Vec<RawDialogue> {
    synth_generate(seed, n, &SynthConfig::default())
}

/// Dense TF-IDF cosine over an explicit word index.
fn dense_cosine(a: &str, b: &str, idf: &IdfTable) -> f64 {
    let (ta, tb) = (tokenize(a), tokenize(b));
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for w in ta.iter().chain(&tb) {
        let n = index.len();
        index.entry(w.as_str()).or_insert(n);
    }
    let dense = |toks: &[String]| {
        let mut v = vec![0.0; index.len()];
        for w in toks {
            v[index[w.as_str()]] += idf.idf(w);
        }
        v
    };
    let (va, vb) = (dense(&ta), dense(&tb));
    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[test]
fn tfidf_retrieval_matches_dense_oracle() {
    let corpus = synth(60, 21);
    let idf = IdfTable::from_dialogues(&corpus, DocumentSource::Both).unwrap();
    let mut inst = build_instances(&corpus, 9, 4).unwrap();
    inst.truncate(50);
    assert_eq!(inst.len(), 50);
    let scores = score_instances::<f32>(&inst, &idf, None).unwrap();
    for (i, s) in inst.iter().zip(&scores) {
        let oracle: Vec<f64> = i
            .candidates
            .iter()
            .map(|c| dense_cosine(&i.context, c, &idf))
            .collect();
        for (x, y) in s.cosine.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
        assert_eq!(rank_candidates(&s.cosine), rank_candidates(&oracle));
    }
}

#[test]
fn identical_wording_ranks_first() {
    let idf = IdfTable::build(&[vec!["printer", "jam"], vec!["hello"], vec!["thanks"]]).unwrap();
    let scores = ComponentScores {
        cosine: ["hello there", "printer jam", "thanks"]
            .iter()
            .map(|c| dense_cosine("printer jam", c, &idf))
            .collect(),
        llk: None,
        positive_index: 1,
    };
    assert_eq!(
        rank_candidates(&combine(&scores, RetrievalMode::Tfidf, 0).unwrap())[0],
        1
    );
}

#[test]
fn instances_are_reproducible_and_round_trip() {
    let corpus = synth(30, 5);
    let a = build_instances(&corpus, 9, 11).unwrap();
    let b = build_instances(&corpus, 9, 11).unwrap();
    assert_eq!(a, b);
    assert!(a
        .iter()
        .all(|i| i.candidates.len() == 10 && i.positive_index < 10));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.jsonl");
    write_instances(&path, &a).unwrap();
    assert_eq!(read_instances(&path).unwrap(), a);
}

#[test]
fn random_control_is_near_one_in_ten() {
    let corpus = synth(400, 9);
    let mut inst = build_instances(&corpus, 9, 2).unwrap();
    inst.truncate(1000);
    assert_eq!(inst.len(), 1000);
    let idf = IdfTable::from_dialogues(&corpus, DocumentSource::Responses).unwrap();
    let scores = score_instances::<f32>(&inst, &idf, None).unwrap();
    let r = recall_at_k(&scores, RetrievalMode::Random { seed: 7 }, &[1, 5, 10]).unwrap();
    assert!((r[&1] - 0.10).abs() <= 0.03, "{}", r[&1]);
    assert!(r[&5] >= r[&1]);
    assert_eq!(r[&10], 1.0);
}

fn fixture(n: usize, tfidf_perfect: bool, seed: u64) -> Vec<ComponentScores> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = rng.gen_range(0..10);
            let cosine = (0..10)
                .map(|j| {
                    if tfidf_perfect && j == p {
                        0.9
                    } else {
                        rng.gen_range(0.0..0.3)
                    }
                })
                .collect();
            let llk = (0..10).map(|_| rng.gen_range(-3.0..-1.0)).collect();
            ComponentScores {
                cosine,
                llk: Some(llk),
                positive_index: p,
            }
        })
        .collect()
}

#[test]
fn tuning_picks_a_large_weight_when_tfidf_is_perfect() {
    let dev = fixture(200, true, 1);
    let grid: Vec<f64> = (0..=50).map(|i| i as f64).collect();
    let (w, r) = tune_retrieval_weight(&dev, &grid).unwrap();
    // the likelihood spread is 2 and the cosine gap at least 0.6
    assert!(w * 0.6 >= 2.0 - 1e-9, "{w}");
    assert_eq!(r[&1], 1.0);
    let zero = recall_at_k(&dev, RetrievalMode::Interpolated { weight: 0.0 }, &[1]).unwrap();
    assert!(r[&1] >= zero[&1]);
}

#[test]
fn tuning_edge_cases() {
    let dev = fixture(50, false, 2);
    let (w, _) = tune_retrieval_weight(&dev, &[0.0]).unwrap();
    assert_eq!(w, 0.0);
    assert!(tune_retrieval_weight(&dev, &[0.5, 1.0]).is_err());
    // weight 0 reproduces the likelihood ranking
    for (i, s) in dev.iter().enumerate() {
        assert_eq!(
            rank_candidates(&combine(s, RetrievalMode::Interpolated { weight: 0.0 }, i).unwrap()),
            rank_candidates(&combine(s, RetrievalMode::Awi, i).unwrap())
        );
    }
}

#[test]
fn awi_modes_need_a_model() {
    let s = ComponentScores {
        cosine: vec![0.1, 0.2],
        llk: None,
        positive_index: 0,
    };
    assert!(combine(&s, RetrievalMode::Awi, 0).is_err());
    assert!(recall_at_k(&[], RetrievalMode::Tfidf, &[1]).is_err());
}

#[test]
fn awi_scores_use_history() {
    let corpus = synth(12, 3);
    let vocab = Vocabulary::build(&corpus, 1, 1000).unwrap();
    let idf = IdfTable::from_dialogues(&corpus, DocumentSource::Responses).unwrap();
    let m = AwiModel::<f32>::new(AwiConfig::desk(vocab.len()), 3).unwrap();
    let inst = build_instances(&corpus, 9, 1).unwrap();
    let scores = score_instances(&inst, &idf, Some((&m, &vocab))).unwrap();
    for (i, s) in inst.iter().zip(&scores) {
        let llk = s.llk.as_ref().unwrap();
        assert_eq!(llk.len(), 10);
        // the positive's score equals the model's own normalized likelihood
        let d = vocab.encode_dialogue(corpus.iter().find(|d| d.id == i.dialogue_id).unwrap());
        let mut state = awi::model::AwiState::new(m.config());
        for k in 0..i.turn - 1 {
            state = m
                .advance(&state, &d.turns[k].user, d.previous_response(k))
                .unwrap();
        }
        let k = i.turn - 1;
        let own = m
            .normalized_llk(
                &state,
                &d.turns[k].user,
                d.previous_response(k),
                &d.turns[k].agent,
            )
            .unwrap();
        assert_eq!(llk[i.positive_index], own);
    }
}

#[test]
fn uniform_model_perplexity_is_vocab_size() {
    let d = Dialogue {
        id: "x".into(),
        turns: vec![
            Turn {
                user: vec![4, 5],
                agent: vec![6, 7, EOS],
            },
            Turn {
                user: vec![8],
                agent: vec![9, EOS],
            },
        ],
    };
    let mut m = AwiModel::<f64>::new(AwiConfig::desk(17), 1).unwrap();
    let ids: Vec<_> = m.params().ids().collect();
    for id in ids {
        m.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let p = perplexity(&m, &[d]).unwrap();
    assert!((p - 17.0).abs() < 1e-9, "{p}");
    assert!(matches!(perplexity(&m, &[]), Err(MetricError::EmptyCorpus)));
}

#[test]
fn bleu_fixtures() {
    let h = vec![vec!["a", "b", "c", "d"]];
    let r = vec![vec!["a", "b", "c", "d", "e"]];
    assert!((bleu4(&h, &r).unwrap() - 0.7788).abs() < 1e-4);
    let refs = vec![vec![1, 2, 3, 4, 5], vec![6, 7, 8, 9]];
    assert_eq!(bleu4(&refs, &refs).unwrap(), 1.0);
    // reversed order of pairs gives the same corpus score
    let hyps = vec![vec![1, 2, 3, 4, 9], vec![6, 7, 8, 9]];
    let rev_h: Vec<_> = hyps.iter().rev().cloned().collect();
    let rev_r: Vec<_> = refs.iter().rev().cloned().collect();
    let b = bleu4(&hyps, &refs).unwrap();
    assert_eq!(b, bleu4(&rev_h, &rev_r).unwrap());
    assert!((0.0..=1.0).contains(&b));
}

#[test]
fn corpus_idf_separates_generic_from_specific() {
    let corpus = synth(200, 13);
    let idf = IdfTable::from_dialogues(&corpus, DocumentSource::Responses).unwrap();
    let responses: Vec<Vec<String>> = corpus
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| tokenize(&t.agent)))
        .collect();
    let all = corpus_idf_metric(&responses, &idf).unwrap();
    let same = awi::specificity::idf_corpus(&responses, &idf);
    assert_eq!(all, same);
    let generic = vec![tokenize("thank you ."); 10];
    let specific = vec![tokenize("error 0x80070005 on office 2016"); 10];
    assert!(
        corpus_idf_metric(&generic, &idf).unwrap() < corpus_idf_metric(&specific, &idf).unwrap()
    );
    let empty: Vec<Vec<String>> = vec![];
    assert!(corpus_idf_metric(&empty, &idf).is_err());
}

#[test]
fn raw_turn_history_feeds_context() {
    let corpus = vec![
        RawDialogue {
            id: "a".into(),
            turns: vec![
                RawTurn {
                    user: "hi".into(),
                    agent: "hello".into(),
                },
                RawTurn {
                    user: "printer broken".into(),
                    agent: "restart it".into(),
                },
            ],
        },
        RawDialogue {
            id: "b".into(),
            turns: vec![RawTurn {
                user: "x".into(),
                agent: "y".into(),
            }],
        },
    ];
    let inst = build_instances(&corpus, 1, 3).unwrap();
    assert_eq!(inst[1].context, "hi hello printer broken");
    assert_eq!(inst[1].history.len(), 1);
}

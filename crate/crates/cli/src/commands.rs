use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use awi::corpus::synth::{synth_generate, SynthConfig};
use awi::corpus::{tokenize, write_dialogues, RawDialogue, Vocabulary, EOS};
use awi::decoding::{default_grid, mert_tune, read_nbest, write_nbest, NBestList, ScoreKind};
use awi::eval::{
    bleu4, build_instances, combine, corpus_idf_metric, perplexity, rank_candidates,
    read_instances, recall_at_k, score_instances, tune_retrieval_weight, write_instances,
    MetricReport, RetrievalInstance, RetrievalMode,
};
use awi::model::{export_intention, save_checkpoint, AwiModel, AwiState};
use awi::parallel::par_map;
use awi::specificity::{DocumentSource, IdfTable};
use awi::training::{Baseline, Objective, RewardContext};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::data::{self, apply_paths};
use crate::respond::Responder;
use crate::{
    AuxArg, ChatArgs, DecodeArgs, DumpArgs, EvalGenArgs, EvalRetArgs, GenerateArgs, IdfArgs,
    IdfSource, InstanceArgs, ObjectiveArg, RetrieveArgs, RetrieveMode, SynthArgs, TrainArgs,
    TuneArgs, TuneTask, VocabArgs,
};

pub fn synth_corpus(cfg: &ExperimentConfig, a: SynthArgs) -> Result<()> {
    ensure!(a.n >= 1, "--n must be at least 1");
    ensure!(
        1 <= a.min_turns && a.min_turns <= a.max_turns,
        "--min-turns must be at least 1 and at most --max-turns"
    );
    let corpus = synth_generate(
        cfg.seed,
        a.n,
        &SynthConfig {
            min_turns: a.min_turns,
            max_turns: a.max_turns,
        },
    );
    let out = a.out.unwrap_or_else(|| cfg.paths.corpus.clone());
    data::ensure_parent(&out)?;
    write_dialogues(&out, &corpus)?;
    let turns: usize = corpus.iter().map(|d| d.turns.len()).sum();
    println!(
        "wrote {} dialogues ({turns} turns) to {}",
        corpus.len(),
        out.display()
    );
    Ok(())
}

pub fn build_vocab(mut cfg: ExperimentConfig, a: VocabArgs) -> Result<()> {
    if let Some(c) = a.corpus {
        cfg.paths.corpus = c;
    }
    let min_count = a.min_count.unwrap_or(cfg.data.min_count);
    let max_vocab = a.max_vocab.unwrap_or(cfg.data.max_vocab);
    let s = data::splits(&cfg)?;
    let vocab = Vocabulary::build(&s.train, min_count, max_vocab)?;
    let out = a.out.unwrap_or(cfg.paths.vocab);
    data::ensure_parent(&out)?;
    vocab.save(&out)?;
    println!(
        "vocabulary of {} entries from {} dialogues -> {}",
        vocab.len(),
        s.train.len(),
        out.display()
    );
    Ok(())
}

pub fn build_idf(mut cfg: ExperimentConfig, a: IdfArgs) -> Result<()> {
    if let Some(c) = a.corpus {
        cfg.paths.corpus = c;
    }
    let source = match a.source {
        Some(IdfSource::Responses) => DocumentSource::Responses,
        Some(IdfSource::Both) => DocumentSource::Both,
        None => cfg.data.idf_source,
    };
    let s = data::splits(&cfg)?;
    let table = IdfTable::from_dialogues(&s.train, source)?;
    let out = a.out.unwrap_or(cfg.paths.idf);
    data::ensure_parent(&out)?;
    table.save(&out)?;
    println!(
        "IDF over {} documents, {} words -> {}",
        table.n(),
        table.len(),
        out.display()
    );
    Ok(())
}

fn parse_baseline(s: &str) -> Result<Baseline> {
    if s == "mean-train-idf" {
        return Ok(Baseline::MEAN_TRAIN_IDF);
    }
    let v: f64 = s
        .parse()
        .with_context(|| format!("--baseline must be a number or mean-train-idf, got {s:?}"))?;
    ensure!(v.is_finite(), "--baseline must be finite");
    Ok(Baseline::Constant(v))
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::Xent => "xent",
        Objective::IdfReinforce => "idf-reinforce",
        Objective::Rank => "rank",
    }
}

pub fn train(mut cfg: ExperimentConfig, a: TrainArgs) -> Result<()> {
    apply_paths(&mut cfg, &a.paths);
    let t = &mut cfg.train;
    if let Some(o) = a.objective {
        t.objective = match o {
            ObjectiveArg::Xent => Objective::Xent,
            ObjectiveArg::IdfReinforce => Objective::IdfReinforce,
            ObjectiveArg::Rank => Objective::Rank,
        };
    }
    if let Some(e) = a.epochs {
        t.max_epochs = e;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = a.lr {
        t.optimizer.learning_rate = lr;
    }
    if let Some(b) = &a.baseline {
        t.reinforce_baseline = parse_baseline(b)?;
    }
    if a.canonical_reinforce {
        t.canonical_reinforce = true;
    }
    if let Some(n) = a.negatives {
        t.negatives_per_positive = n;
    }
    cfg.validate()?;

    let vocab = data::vocab(&cfg)?;
    let s = data::splits(&cfg)?;
    let swap = |ds: &[RawDialogue]| -> Vec<RawDialogue> {
        if a.swap {
            ds.iter().map(RawDialogue::swapped).collect()
        } else {
            ds.to_vec()
        }
    };
    let train_set = vocab.encode_corpus(&swap(&s.train));
    let dev_set = vocab.encode_corpus(&swap(&s.dev));
    ensure!(
        !dev_set.is_empty(),
        "the dev split is empty; raise data.dev_fraction"
    );

    let mut model = match &a.init {
        Some(p) => data::model(&cfg, p, &vocab)?,
        None => AwiModel::new(cfg.model.awi_config(vocab.len()), cfg.seed)?,
    };
    let idf = match cfg.train.objective {
        Objective::IdfReinforce => Some(data::idf(&cfg)?),
        _ => None,
    };
    let reward = idf.as_ref().map(|idf| RewardContext { idf, vocab: &vocab });
    let report = awi::training::train(&mut model, &train_set, &dev_set, &cfg.train, reward)?;

    let ckpt = &cfg.paths.checkpoint;
    data::ensure_parent(ckpt)?;
    save_checkpoint(ckpt, &model, &vocab.checksum())?;
    let report_path = a.report.unwrap_or_else(|| {
        cfg.paths
            .reports
            .join(format!("{}.jsonl", objective_name(cfg.train.objective)))
    });
    let mut w = data::create(&report_path)?;
    w.write_all(report.to_jsonl().as_bytes())?;
    w.flush()?;
    // the resolved settings, so the run can be repeated with --config
    let settings = report_path.with_extension("toml");
    std::fs::write(&settings, cfg.to_toml())
        .with_context(|| format!("writing {}", settings.display()))?;
    print!("{}", report.summary());
    println!("checkpoint {}", ckpt.display());
    println!("report {}", report_path.display());
    Ok(())
}

fn apply_decode(cfg: &mut ExperimentConfig, d: &DecodeArgs) -> Result<()> {
    let s = &mut cfg.decode;
    if let Some(m) = d.mode {
        s.mode = m;
    }
    if let Some(w) = d.beam_width {
        s.beam_width = w;
    }
    if let Some(l) = d.max_len {
        s.max_len = l;
    }
    if let Some(t) = d.temperature {
        s.temperature = t;
    }
    if d.rerank_idf.is_some() {
        s.rerank_idf = d.rerank_idf;
    }
    cfg.validate()
}

/// Everything a responder borrows.
struct Loaded {
    vocab: Vocabulary,
    idf: IdfTable,
    model: AwiModel<f32>,
    backward: Option<(AwiModel<f32>, f64)>,
}

impl Loaded {
    fn new(cfg: &ExperimentConfig, d: &DecodeArgs) -> Result<Self> {
        let vocab = data::vocab(cfg)?;
        let idf = data::idf(cfg)?;
        let model = data::model(cfg, &cfg.paths.checkpoint, &vocab)?;
        let backward = match &d.backward {
            Some(p) => Some((
                data::model(cfg, p, &vocab)?,
                d.backward_weight.unwrap_or(0.0),
            )),
            None => None,
        };
        Ok(Self {
            vocab,
            idf,
            model,
            backward,
        })
    }

    fn responder(&self, cfg: &ExperimentConfig) -> Responder<'_> {
        Responder {
            model: &self.model,
            vocab: &self.vocab,
            idf: &self.idf,
            backward: self.backward.as_ref().map(|(m, w)| (m, *w)),
            settings: cfg.decode.clone(),
            seed: cfg.seed,
        }
    }
}

fn render_tokens(vocab: &Vocabulary) -> impl Fn(&[u32]) -> String + '_ {
    |ids| {
        ids.iter()
            .map(|&t| vocab.token(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn turn_id(dialogue: &str, turn: usize) -> String {
    format!("{dialogue}:{turn}")
}

pub fn generate(mut cfg: ExperimentConfig, a: GenerateArgs) -> Result<()> {
    apply_paths(&mut cfg, &a.paths);
    apply_decode(&mut cfg, &a.decode)?;
    if let Some(p) = a.prior {
        cfg.decode.prior = p;
    }
    let input = match &a.input {
        Some(p) => data::dialogues(p)?,
        None => data::splits(&cfg)?.test,
    };
    let loaded = Loaded::new(&cfg, &a.decode)?;
    let responder = loaded.responder(&cfg);
    let prior = cfg.decode.prior;
    let results = par_map(&input, |i, d| responder.dialogue(d, i, prior));
    let mut out = Vec::with_capacity(input.len());
    let mut lists = Vec::new();
    for (d, r) in input.iter().zip(results) {
        let (generated, hyps) = r.with_context(|| format!("dialogue {}", d.id))?;
        for (k, h) in hyps.into_iter().enumerate() {
            lists.push(NBestList {
                turn_id: turn_id(&d.id, k + 1),
                hypotheses: h,
            });
        }
        out.push(generated);
    }
    let mut w = data::output(a.out.as_deref())?;
    for d in &out {
        writeln!(w, "{}", serde_json::to_string(d)?)?;
    }
    w.flush()?;
    if let Some(p) = &a.nbest {
        let mut nb = data::create(p)?;
        write_nbest(&mut nb, &lists, render_tokens(&loaded.vocab))?;
        nb.flush()?;
    }
    Ok(())
}

pub fn chat(mut cfg: ExperimentConfig, a: ChatArgs) -> Result<()> {
    apply_paths(&mut cfg, &a.paths);
    apply_decode(&mut cfg, &a.decode)?;
    let transcript = a
        .transcript
        .unwrap_or_else(|| cfg.paths.reports.join("chat.jsonl"));
    let loaded = Loaded::new(&cfg, &a.decode)?;
    let responder = loaded.responder(&cfg);

    let mut sessions: Vec<RawDialogue> = Vec::new();
    let mut current = RawDialogue {
        id: "chat-1".into(),
        turns: Vec::new(),
    };
    let mut state = AwiState::new(loaded.model.config());
    let mut prev: Vec<u32> = Vec::new();
    let save = |sessions: &[RawDialogue], current: &RawDialogue| -> Result<()> {
        let mut all = sessions.to_vec();
        if !current.turns.is_empty() {
            all.push(current.clone());
        }
        data::ensure_parent(&transcript)?;
        write_dialogues(&transcript, &all)?;
        Ok(())
    };

    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    for line in stdin.lock().lines() {
        let line = line?;
        let text = line.trim();
        match text {
            "" => continue,
            "/quit" => break,
            "/reset" => {
                if !current.turns.is_empty() {
                    let n = sessions.len() + 2;
                    sessions.push(std::mem::replace(
                        &mut current,
                        RawDialogue {
                            id: format!("chat-{n}"),
                            turns: Vec::new(),
                        },
                    ));
                }
                state = AwiState::new(loaded.model.config());
                prev.clear();
                writeln!(stdout, "(state reset)")?;
                continue;
            }
            _ => {}
        }
        let turn = current.turns.len();
        match responder.respond(&state, text, &prev, sessions.len(), turn) {
            Ok((next, hyps)) => {
                let best = &hyps[0];
                let reply = responder.render(best);
                writeln!(stdout, "{reply}")?;
                state = next;
                prev = best.tokens.clone();
                current.turns.push(awi::corpus::RawTurn {
                    user: text.to_string(),
                    agent: reply,
                });
                save(&sessions, &current)?;
            }
            Err(e) => writeln!(stdout, "error: {e:#}")?,
        }
        stdout.flush()?;
    }
    save(&sessions, &current)?;
    eprintln!("transcript {}", transcript.display());
    Ok(())
}

/// Reads instances from a file or builds them from a split, seeded by the
/// run seed.
fn instances(cfg: &ExperimentConfig, a: &InstanceArgs) -> Result<Vec<RetrievalInstance>> {
    let mut inst = match &a.instances {
        Some(p) => {
            read_instances(p).with_context(|| format!("reading instances {}", p.display()))?
        }
        None => {
            let s = data::splits(cfg)?;
            let n = a.negatives.unwrap_or(cfg.retrieval.negatives);
            build_instances(s.get(a.split), n, cfg.seed)?
        }
    };
    if let Some(l) = a.limit {
        inst.truncate(l);
    }
    ensure!(!inst.is_empty(), "no retrieval instances");
    Ok(inst)
}

/// Dev-split instances for weight tuning, drawn with a seed distinct from
/// the evaluation instances.
fn dev_instances(
    cfg: &ExperimentConfig,
    negatives: Option<usize>,
    limit: Option<usize>,
) -> Result<Vec<RetrievalInstance>> {
    let s = data::splits(cfg)?;
    let n = negatives.unwrap_or(cfg.retrieval.negatives);
    let mut inst = build_instances(&s.dev, n, cfg.seed.wrapping_add(1))?;
    if let Some(l) = limit {
        inst.truncate(l);
    }
    ensure!(
        !inst.is_empty(),
        "the dev split gives no retrieval instances"
    );
    Ok(inst)
}

fn tuned_weight(
    cfg: &ExperimentConfig,
    model: &AwiModel<f32>,
    vocab: &Vocabulary,
    idf: &IdfTable,
    negatives: Option<usize>,
    limit: Option<usize>,
) -> Result<(f64, BTreeMap<usize, f64>)> {
    let dev = dev_instances(cfg, negatives, limit)?;
    let scores = score_instances(&dev, idf, Some((model, vocab)))?;
    Ok(tune_retrieval_weight(&scores, &cfg.retrieval.weight_grid)?)
}

pub fn retrieve(mut cfg: ExperimentConfig, a: RetrieveArgs) -> Result<()> {
    apply_paths(&mut cfg, &a.paths);
    let inst = instances(&cfg, &a.instances)?;
    if let Some(p) = &a.save_instances {
        data::ensure_parent(p)?;
        write_instances(p, &inst)?;
    }
    let idf = data::idf(&cfg)?;
    let needs_model = matches!(a.mode, RetrieveMode::Awi | RetrieveMode::Interpolated);
    let loaded = if needs_model {
        let vocab = data::vocab(&cfg)?;
        let model = data::model(&cfg, &cfg.paths.checkpoint, &vocab)?;
        Some((model, vocab))
    } else {
        None
    };
    let awi = loaded.as_ref().map(|(m, v)| (m, v));
    let mode = match a.mode {
        RetrieveMode::Tfidf => RetrievalMode::Tfidf,
        RetrieveMode::Awi => RetrievalMode::Awi,
        RetrieveMode::Random => RetrievalMode::Random { seed: cfg.seed },
        RetrieveMode::Interpolated => {
            let (m, v) = awi.expect("model loaded");
            let weight = match a.weight.or(cfg.retrieval.weight) {
                Some(w) => w,
                None => tuned_weight(&cfg, m, v, &idf, a.instances.negatives, None)?.0,
            };
            RetrievalMode::Interpolated { weight }
        }
    };
    let scores = score_instances(&inst, &idf, awi)?;
    let mut w = data::output(a.out.as_deref())?;
    for (i, (x, s)) in inst.iter().zip(&scores).enumerate() {
        let ranking = rank_candidates(&combine(s, mode, i)?);
        let line = json!({
            "dialogue_id": x.dialogue_id,
            "turn": x.turn,
            "ranking": ranking,
            "response": x.candidates[ranking[0]],
            "correct": ranking[0] == x.positive_index,
        });
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn tokens_of(ds: &[RawDialogue]) -> Vec<Vec<String>> {
    ds.iter()
        .flat_map(|d| d.turns.iter().map(|t| tokenize(&t.agent)))
        .collect()
}

pub fn eval_gen(mut cfg: ExperimentConfig, a: EvalGenArgs) -> Result<()> {
    apply_paths(&mut cfg, &a.paths);
    let hyps = data::dialogues(&a.hyps)?;
    let refs = match &a.refs {
        Some(p) => data::dialogues(p)?,
        None => data::splits(&cfg)?.test,
    };
    ensure!(
        hyps.len() == refs.len(),
        "{} has {} dialogues but the references have {}",
        a.hyps.display(),
        hyps.len(),
        refs.len()
    );
    for (h, r) in hyps.iter().zip(&refs) {
        ensure!(
            h.id == r.id && h.turns.len() == r.turns.len(),
            "hypothesis dialogue {} ({} turns) does not line up with reference {} ({} turns)",
            h.id,
            h.turns.len(),
            r.id,
            r.turns.len()
        );
    }
    let (ht, rt) = (tokens_of(&hyps), tokens_of(&refs));
    let idf = data::idf(&cfg)?;
    let mut report = MetricReport {
        bleu4: Some(bleu4(&ht, &rt)?),
        corpus_idf: Some(corpus_idf_metric(&ht, &idf)?),
        ..Default::default()
    };
    if a.perplexity {
        let vocab = data::vocab(&cfg)?;
        let model = data::model(&cfg, &cfg.paths.checkpoint, &vocab)?;
        report.perplexity = Some(perplexity(&model, &vocab.encode_corpus(&refs))?);
    }
    print!("{report}");
    if let Some(p) = &a.out {
        let mut w = data::create(p)?;
        writeln!(w, "{}", serde_json::to_string(&report)?)?;
        w.flush()?;
    }
    Ok(())
}

pub fn eval_ret(mut cfg: ExperimentConfig, a: EvalRetArgs) -> Result<()> {
    apply_paths(&mut cfg, &a.paths);
    let inst = instances(&cfg, &a.instances)?;
    let idf = data::idf(&cfg)?;
    let ks = cfg.retrieval.ks.clone();
    let mut modes: Vec<(&str, RetrievalMode)> = vec![("tfidf", RetrievalMode::Tfidf)];
    let mut weight = None;
    let scores = if a.no_model {
        score_instances::<f32>(&inst, &idf, None)?
    } else {
        let vocab = data::vocab(&cfg)?;
        let model = data::model(&cfg, &cfg.paths.checkpoint, &vocab)?;
        let w = match a.weight.or(cfg.retrieval.weight) {
            Some(w) => w,
            None => tuned_weight(&cfg, &model, &vocab, &idf, a.instances.negatives, None)?.0,
        };
        weight = Some(w);
        modes.push(("awi", RetrievalMode::Awi));
        modes.push(("interpolated", RetrievalMode::Interpolated { weight: w }));
        score_instances(&inst, &idf, Some((&model, &vocab)))?
    };
    modes.push(("random", RetrievalMode::Random { seed: cfg.seed }));

    let header: Vec<String> = ks.iter().map(|k| format!("R@{k}")).collect();
    println!("mode\t{}", header.join("\t"));
    let mut table = BTreeMap::new();
    for (name, mode) in &modes {
        let r = recall_at_k(&scores, *mode, &ks)?;
        let cells: Vec<String> = ks.iter().map(|k| format!("{:.4}", r[k])).collect();
        println!("{name}\t{}", cells.join("\t"));
        table.insert(*name, r);
    }
    println!("instances\t{}", inst.len());
    if let Some(w) = weight {
        println!("weight\t{w}");
    }
    if let Some(p) = &a.out {
        let mut f = data::create(p)?;
        writeln!(
            f,
            "{}",
            json!({"instances": inst.len(), "weight": weight, "recall": table})
        )?;
        f.flush()?;
    }
    Ok(())
}

fn read_nbest_file(path: &Path, vocab: &Vocabulary) -> Result<Vec<NBestList>> {
    let f =
        std::fs::File::open(path).with_context(|| format!("reading n-best {}", path.display()))?;
    let parse = |s: &str| s.split_whitespace().map(|t| vocab.id(t)).collect();
    read_nbest(BufReader::new(f), parse)
        .with_context(|| format!("parsing n-best {}", path.display()))
}

pub fn tune_weight(mut cfg: ExperimentConfig, a: TuneArgs) -> Result<()> {
    apply_paths(&mut cfg, &a.paths);
    let vocab = data::vocab(&cfg)?;
    match a.task {
        TuneTask::Retrieval => {
            let idf = data::idf(&cfg)?;
            let model = data::model(&cfg, &cfg.paths.checkpoint, &vocab)?;
            let (w, r) = tuned_weight(&cfg, &model, &vocab, &idf, a.negatives, a.limit)?;
            println!("weight\t{w}");
            for (k, v) in r {
                println!("dev recall@{k}\t{v:.6}");
            }
        }
        TuneTask::Mert => {
            let Some(nbest) = &a.nbest else {
                bail!("--nbest is required for --task mert");
            };
            let lists = read_nbest_file(nbest, &vocab)?;
            let refs = match &a.refs {
                Some(p) => data::dialogues(p)?,
                None => data::splits(&cfg)?.dev,
            };
            let by_id: HashMap<String, Vec<u32>> = refs
                .iter()
                .flat_map(|d| {
                    d.turns.iter().enumerate().map(|(k, t)| {
                        let mut ids = vocab.encode_target(&t.agent);
                        ids.pop_if(|&mut x| x == EOS);
                        (turn_id(&d.id, k + 1), ids)
                    })
                })
                .collect();
            let references = lists
                .iter()
                .map(|l| {
                    by_id
                        .get(&l.turn_id)
                        .cloned()
                        .with_context(|| format!("no reference for n-best turn {}", l.turn_id))
                })
                .collect::<Result<Vec<_>>>()?;
            let kind = match a.kind {
                AuxArg::Idf => ScoreKind::Idf,
                AuxArg::BackwardLlk => ScoreKind::BackwardLlk,
            };
            let (w, b) = mert_tune(&lists, &references, kind, &default_grid())?;
            println!("weight\t{w}");
            println!("bleu4\t{b:.6}");
        }
    }
    Ok(())
}

pub fn dump_intention(mut cfg: ExperimentConfig, a: DumpArgs) -> Result<()> {
    apply_paths(&mut cfg, &a.paths);
    let vocab = data::vocab(&cfg)?;
    let model = data::model(&cfg, &cfg.paths.checkpoint, &vocab)?;
    let input = match &a.input {
        Some(p) => data::dialogues(p)?,
        None => data::splits(&cfg)?.test,
    };
    let records = export_intention(&model, &vocab.encode_corpus(&input))?;
    let mut w = data::output(a.out.as_deref())?;
    for r in &records {
        writeln!(w, "{}", r.to_line())?;
    }
    w.flush()?;
    Ok(())
}

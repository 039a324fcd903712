use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ilmlab_core::data::{Corpus, Domain, Sentence, SyntheticTask, TextCorpus};
use ilmlab_core::fusion::{
    corpus_errors, decode_corpus, format_nbest, format_table, format_table_kv, grid_search_scales, lm_perplexity,
    FusionConfig, Method, Models, ReportRow,
};
use ilmlab_core::ilm::{
    accumulate_stats, ilm_perplexity_paired, load_estimator, sample_subset, save_estimator, train_mini_lstm,
    ContextSource, Estimator,
};
use ilmlab_core::model::{train, AedModel, LmRole, LossCurve, LstmLm};
use ilmlab_core::{Error, Result};
use log::info;

use crate::config::{ExperimentConfig, TrainRole};
use crate::layout::{ensure_parent, Layout};
use crate::manifest::Manifest;

/// Estimation methods, in table order.
pub const ESTIMATORS: [Method; 5] = [Method::Zero, Method::EdC, Method::EdH, Method::ExH, Method::MiniLstm];

fn start(cfg: &ExperimentConfig) -> Result<Layout> {
    cfg.validate()?;
    Ok(Layout::new(cfg))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

fn write_curve(path: &Path, curve: &LossCurve) -> Result<()> {
    let text: String = curve
        .epoch_loss
        .iter()
        .enumerate()
        .map(|(i, l)| format!("epoch={}\tloss={l:?}\n", i + 1))
        .collect();
    write(path, text)
}

/// Samples the task, source-domain training and held-out corpora,
/// target-domain dev and test corpora and target-domain LM text.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<()> {
    let l = start(cfg)?;
    let task = SyntheticTask::build(cfg.task_config())?;
    let d = &cfg.data;
    let train = task.generate_corpus(d.train, Domain::Source, cfg.corpus_seed("train"))?;
    let heldout = task.generate_corpus(d.heldout, Domain::Source, cfg.corpus_seed("heldout"))?;
    let dev = task.generate_corpus(d.dev, Domain::Target, cfg.corpus_seed("dev"))?;
    let test = task.generate_corpus(d.test, Domain::Target, cfg.corpus_seed("test"))?;
    let text = task.generate_text(d.lm_text, Domain::Target, cfg.corpus_seed("lm_text"))?;
    write(&l.task(), task.config.to_kv())?;
    let mut m = Manifest::new("gen", cfg);
    m.output(&l, &l.task())?;
    let corpora = [
        (l.train_corpus(), &train),
        (l.heldout_corpus(), &heldout),
        (l.dev_corpus(), &dev),
        (l.test_corpus(), &test),
    ];
    for (path, corpus) in corpora {
        write(&path, corpus.to_bytes())?;
        m.output(&l, &path)?;
    }
    write(&l.lm_text(), text.to_bytes())?;
    m.output(&l, &l.lm_text())?;
    m.write(&l, "gen")?;
    info!(
        "gen: {} train, {} held-out, {} dev, {} test utterances, {} LM sentences",
        train.len(),
        heldout.len(),
        dev.len(),
        test.len(),
        text.len()
    );
    Ok(())
}

fn load_corpus(l: &Layout, path: &Path) -> Result<Corpus> {
    l.require(path, "gen")?;
    Corpus::load(path)
}

fn load_aed(l: &Layout) -> Result<AedModel> {
    l.require(&l.aed(), "train-aed")?;
    AedModel::load(&l.aed())
}

pub fn cmd_train_aed(cfg: &ExperimentConfig) -> Result<()> {
    let l = start(cfg)?;
    let corpus = load_corpus(&l, &l.train_corpus())?;
    let started = Instant::now();
    let mut model = AedModel::new(cfg.aed_config())?;
    let curve = train(&mut model, corpus.utterances(), &cfg.train_config(TrainRole::Aed))?;
    ensure_parent(&l.aed())?;
    model.save(&l.aed())?;
    write_curve(&Layout::loss_curve(&l.aed()), &curve)?;
    let mut m = Manifest::new("train-aed", cfg);
    m.input(&l, &l.train_corpus())?;
    m.output(&l, &l.aed())?.output(&l, &Layout::loss_curve(&l.aed()))?;
    m.write(&l, "train-aed")?;
    info!(
        "train-aed: final loss {:.4} in {:.1}s",
        curve.last().unwrap_or(f64::NAN),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// External LM on target text, or the decoder-like LM on the training
/// transcriptions.
pub fn cmd_train_lm(cfg: &ExperimentConfig, role: LmRole) -> Result<()> {
    let l = start(cfg)?;
    let (input, text, output, train_role) = match role {
        LmRole::External => {
            l.require(&l.lm_text(), "gen")?;
            (l.lm_text(), TextCorpus::load(&l.lm_text())?, l.lm(), TrainRole::Lm)
        }
        LmRole::DecoderLike => {
            let corpus = load_corpus(&l, &l.train_corpus())?;
            (l.train_corpus(), corpus.transcripts(), l.dr_lm(), TrainRole::DrLm)
        }
    };
    let started = Instant::now();
    let mut lm = LstmLm::new(cfg.lm_config(role))?;
    let curve = train(&mut lm, &text.sentences, &cfg.train_config(train_role))?;
    ensure_parent(&output)?;
    lm.save(&output)?;
    write_curve(&Layout::loss_curve(&output), &curve)?;
    let mut m = Manifest::new("train-lm", cfg);
    m.arg("role", role.name());
    m.input(&l, &input)?;
    m.output(&l, &output)?.output(&l, &Layout::loss_curve(&output))?;
    m.write(&l, &format!("train-lm-{}", role.name()))?;
    info!(
        "train-lm ({}): final loss {:.4} in {:.1}s",
        role.name(),
        curve.last().unwrap_or(f64::NAN),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Computes the requested ILM estimators (all five when `method` is `None`).
pub fn cmd_estimate(cfg: &ExperimentConfig, method: Option<Method>) -> Result<()> {
    let l = start(cfg)?;
    let methods: Vec<Method> = match method {
        Some(m) if m.is_ilm() => vec![m],
        Some(m) => return Err(Error::Config(format!("{m} is not an ILM estimation method"))),
        None => ESTIMATORS.to_vec(),
    };
    let aed = load_aed(&l)?;
    let corpus = load_corpus(&l, &l.train_corpus())?;
    let aed_hash = aed.content_hash();
    let needs_stats = methods.iter().any(|m| matches!(m, Method::EdC | Method::EdH));
    let stats = if needs_stats {
        Some(accumulate_stats(&corpus, &aed)?)
    } else {
        None
    };
    for &method in &methods {
        let started = Instant::now();
        let estimator = match method {
            Method::Zero => Estimator::Zero,
            Method::EdC => Estimator::GlobalContextAvg(stats.as_ref().expect("stats computed").context_avg()?),
            Method::EdH => Estimator::GlobalEncoderAvg(stats.as_ref().expect("stats computed").encoder_avg()?),
            Method::ExH => Estimator::SeqEncoderAvg,
            _ => {
                let mini = cfg.mini_config();
                let subset: Vec<Sentence> = sample_subset(corpus.len(), mini.subset_fraction, mini.seed)?
                    .into_iter()
                    .map(|i| {
                        let u = &corpus.utterances()[i];
                        Sentence {
                            id: u.id.clone(),
                            labels: u.labels.clone(),
                        }
                    })
                    .collect();
                let (source, curve) = train_mini_lstm(&aed, &subset, &mini, cfg.zero_at_step_zero)?;
                write_curve(&l.estimator(method).with_extension("loss"), &curve)?;
                source.estimator
            }
        };
        let source = ContextSource {
            estimator,
            zero_at_step_zero: cfg.zero_at_step_zero,
        };
        let path = l.estimator(method);
        ensure_parent(&path)?;
        save_estimator(&source, &aed_hash, &path)?;
        let mut m = Manifest::new("estimate", cfg);
        m.arg("method", method.name());
        m.input(&l, &l.aed())?.input(&l, &l.train_corpus())?;
        m.output(&l, &path)?;
        if method == Method::MiniLstm {
            m.output(&l, &path.with_extension("loss"))?;
        }
        m.write(&l, &format!("estimate-{}", method.name()))?;
        info!("estimate {}: {:.1}s", method.name(), started.elapsed().as_secs_f64());
    }
    Ok(())
}

/// Models loaded for one decoding method, with the files they came from.
struct Loaded {
    aed: AedModel,
    lm: Option<LstmLm>,
    dr_lm: Option<LstmLm>,
    ilm: Option<ContextSource>,
    files: Vec<std::path::PathBuf>,
}

impl Loaded {
    fn load(l: &Layout, method: Method) -> Result<Self> {
        let aed = load_aed(l)?;
        let mut files = vec![l.aed()];
        let mut lm = None;
        let mut dr_lm = None;
        let mut ilm = None;
        if method.uses_lm() {
            l.require(&l.lm(), "train-lm --role external")?;
            lm = Some(LstmLm::load(&l.lm())?);
            files.push(l.lm());
        }
        if method == Method::Dr {
            l.require(&l.dr_lm(), "train-lm --role decoder_like")?;
            dr_lm = Some(LstmLm::load(&l.dr_lm())?);
            files.push(l.dr_lm());
        }
        if method.is_ilm() {
            let path = l.estimator(method);
            l.require(&path, &format!("estimate --method {}", method.name()))?;
            ilm = Some(load_estimator(&path, &aed)?);
            files.push(path);
        }
        Ok(Loaded {
            aed,
            lm,
            dr_lm,
            ilm,
            files,
        })
    }

    fn models(&self) -> Models<'_> {
        Models {
            aed: &self.aed,
            lm: self.lm.as_ref(),
            dr_lm: self.dr_lm.as_ref(),
            ilm: self.ilm.as_ref(),
        }
    }
}

/// Tuned scales as stored by `tune`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scales {
    pub lambda1: f64,
    pub lambda2: f64,
    pub errors: usize,
    pub words: usize,
}

impl Scales {
    pub fn wer(&self) -> f64 {
        self.errors as f64 / self.words as f64
    }

    fn render(&self, method: Method) -> String {
        format!(
            "method={}\nlambda1={:?}\nlambda2={:?}\ndev_errors={}\ndev_words={}\ndev_wer={:?}\n",
            method.name(),
            self.lambda1,
            self.lambda2,
            self.errors,
            self.words,
            self.wer()
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let field = |key: &str| -> Result<&str> {
            text.lines()
                .find_map(|line| line.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Config(format!("{}: missing {key}", path.display())))
        };
        let num = |key: &str| -> Result<f64> {
            field(key)?
                .parse()
                .map_err(|_| Error::Config(format!("{}: bad {key}", path.display())))
        };
        let int = |key: &str| -> Result<usize> {
            field(key)?
                .parse()
                .map_err(|_| Error::Config(format!("{}: bad {key}", path.display())))
        };
        Ok(Scales {
            lambda1: num("lambda1")?,
            lambda2: num("lambda2")?,
            errors: int("dev_errors")?,
            words: int("dev_words")?,
        })
    }
}

/// Grid-searches the scales of `cfg.decode.method` on the dev corpus.
pub fn cmd_tune(cfg: &ExperimentConfig) -> Result<Scales> {
    let l = start(cfg)?;
    let method = cfg.decode.method;
    let dev = load_corpus(&l, &l.dev_corpus())?;
    let loaded = Loaded::load(&l, method)?;
    let started = Instant::now();
    let result = grid_search_scales(&dev, loaded.models(), &cfg.decode, &cfg.grid)?;
    let scales = Scales {
        lambda1: result.best.lambda1,
        lambda2: result.best.lambda2,
        errors: result.best.errors,
        words: result.best.words,
    };
    write(&l.scales(method), scales.render(method))?;
    let mut surface = String::new();
    for p in &result.surface {
        writeln!(surface, "lambda1={:?}\tlambda2={:?}\terrors={}", p.lambda1, p.lambda2, p.errors)
            .expect("string write");
    }
    write(&l.surface(method), surface)?;
    let mut m = Manifest::new("tune", cfg);
    m.arg("method", method.name());
    m.input(&l, &l.dev_corpus())?;
    for f in &loaded.files {
        m.input(&l, f)?;
    }
    m.output(&l, &l.scales(method))?.output(&l, &l.surface(method))?;
    m.write(&l, &format!("tune-{}", method.name()))?;
    info!(
        "tune {}: lambda1={} lambda2={} dev WER {:.2}% over {} points in {:.1}s",
        method.name(),
        scales.lambda1,
        scales.lambda2,
        100.0 * scales.wer(),
        result.surface.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(scales)
}

/// Test-set decoding result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeScore {
    pub lambda1: f64,
    pub lambda2: f64,
    pub errors: usize,
    pub words: usize,
}

impl DecodeScore {
    pub fn wer(&self) -> f64 {
        self.errors as f64 / self.words as f64
    }
}

/// Decodes the test corpus with `cfg.decode`; with `tuned`, the scales come
/// from the method's `tune` output instead.
pub fn cmd_decode(cfg: &ExperimentConfig, tuned: bool) -> Result<DecodeScore> {
    let l = start(cfg)?;
    let method = cfg.decode.method;
    let test = load_corpus(&l, &l.test_corpus())?;
    let loaded = Loaded::load(&l, method)?;
    let mut fusion: FusionConfig = cfg.decode.clone();
    if tuned {
        l.require(&l.scales(method), &format!("tune --method {}", method.name()))?;
        let s = Scales::load(&l.scales(method))?;
        fusion.lambda1 = s.lambda1;
        fusion.lambda2 = s.lambda2;
    }
    let fusion = fusion.effective()?;
    let results = decode_corpus(&test, loaded.models(), &fusion)?;
    let (errors, words) = corpus_errors(&results);
    let score = DecodeScore {
        lambda1: fusion.lambda1,
        lambda2: fusion.lambda2,
        errors,
        words,
    };
    write(&l.nbest(method), format_nbest(&results))?;
    write(
        &l.score(method),
        format!(
            "method={}\nlambda1={:?}\nlambda2={:?}\nerrors={errors}\nwords={words}\nwer={:?}\n",
            method.name(),
            score.lambda1,
            score.lambda2,
            score.wer()
        ),
    )?;
    let mut m = Manifest::new("decode", cfg);
    m.arg("method", method.name());
    m.input(&l, &l.test_corpus())?;
    for f in &loaded.files {
        m.input(&l, f)?;
    }
    if tuned {
        m.arg("tuned", "true");
        m.input(&l, &l.scales(method))?;
    }
    m.output(&l, &l.nbest(method))?.output(&l, &l.score(method))?;
    m.write(&l, &format!("decode-{}", method.name()))?;
    info!(
        "decode {}: test WER {:.2}% ({errors}/{words})",
        method.name(),
        100.0 * score.wer()
    );
    Ok(score)
}

/// Perplexity of the subtracted prior on held-out source-domain
/// transcriptions, for methods that subtract one.
fn prior_perplexity(l: &Layout, method: Method, heldout: &Corpus) -> Result<Option<f64>> {
    let loaded = Loaded::load(l, method)?;
    if let Some(src) = &loaded.ilm {
        return ilm_perplexity_paired(&loaded.aed, src, heldout).map(Some);
    }
    if let Some(dr) = &loaded.dr_lm {
        return lm_perplexity(&heldout.transcripts(), dr).map(Some);
    }
    Ok(None)
}

/// Tunes and decodes every method and writes the results table.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let l = start(cfg)?;
    let heldout = load_corpus(&l, &l.heldout_corpus())?;
    let mut rows = Vec::new();
    let mut m = Manifest::new("eval", cfg);
    m.input(&l, &l.heldout_corpus())?;
    for method in Method::ALL {
        let mut c = cfg.clone();
        c.decode.method = method;
        let scales = cmd_tune(&c)?;
        let score = cmd_decode(&c, true)?;
        rows.push(ReportRow {
            method,
            lambda1: score.lambda1,
            lambda2: score.lambda2,
            dev_wer: scales.wer(),
            test_wer: score.wer(),
            ilm_ppl: prior_perplexity(&l, method, &heldout)?,
        });
        m.input(&l, &l.scales(method))?.input(&l, &l.score(method))?;
    }
    let table = format_table(&rows);
    write(&l.table(), &table)?;
    write(&l.table_kv(), format_table_kv(&rows))?;
    m.output(&l, &l.table())?.output(&l, &l.table_kv())?;
    m.write(&l, "eval")?;
    info!("eval:\n{table}");
    Ok(rows)
}

/// Every stage in order: data, models, estimators, tuning and evaluation.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cmd_gen(cfg)?;
    cmd_train_aed(cfg)?;
    cmd_train_lm(cfg, LmRole::External)?;
    cmd_train_lm(cfg, LmRole::DecoderLike)?;
    cmd_estimate(cfg, None)?;
    cmd_eval(cfg)
}

//! The five pipeline commands. Each resolves its knobs, validates inputs
//! up front (exit code 1 territory), then runs the library (failures after
//! that are exit code 2).

use std::collections::HashSet;
use std::path::Path;

use topsum::data::{load_corpus, Pair, Vocabulary};
use topsum::decode::{beam_decode, default_max_len, greedy_decode, sample_decode, Hypothesis};
use topsum::lda::{
    fit_lda, load_topic_model, save_topic_model, topic_embedding_matrix, topic_vocabulary,
    universal_words, LdaConfig, TopicVocabulary,
};
use topsum::model::{
    load_checkpoint, save_checkpoint, ModelConfig, ModelParams, TopicLookup,
};
use topsum::rouge::{rouge_l, rouge_n, IdMapper, RougeScore};
use topsum::train::{
    finetune_scst, train_ml, EpochLine, RewardMetric, StopReason, TrainConfig, TrainError,
};

use crate::args::{
    DecoderKind, EvalLevel, EvalMode, EvaluateArgs, LdaTrainArgs, ModelFlags, RlFinetuneArgs,
    SummarizeArgs, TrainArgs, TrainFlags,
};
use crate::config::{defaults, FileConfig};
use crate::CliError;

// ── shared plumbing ──

fn read_pairs(flag: &str, path: &Path) -> Result<Vec<Pair>, CliError> {
    let load = load_corpus(path)
        .map_err(|e| CliError::validation(format!("{flag} {}: {e}", path.display())))?;
    for (line, reason) in &load.rejected {
        log::warn!("{}: line {line} skipped: {reason:?}", path.display());
    }
    if load.empty_lines > 0 {
        log::info!("{}: {} empty lines skipped", path.display(), load.empty_lines);
    }
    Ok(load.pairs)
}

fn read_topic_vocab(path: &Path) -> Result<TopicVocabulary, CliError> {
    TopicVocabulary::load(path)
        .map_err(|e| CliError::validation(format!("--topic-vocab {}: {e}", path.display())))
}

fn read_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Vocabulary::load(path)
        .map_err(|e| CliError::validation(format!("--vocab {}: {e}", path.display())))
}

/// Loads a checkpoint and proves the supplied vocabulary files are the
/// ones it was trained with. A digest mismatch is a hard error: decoding
/// through a reshuffled token table would silently produce garbage.
fn read_checkpoint(
    path: &Path,
    vocab: &Vocabulary,
    tv: &TopicVocabulary,
) -> Result<ModelParams, CliError> {
    let loaded = load_checkpoint(path)
        .map_err(|e| CliError::validation(format!("--checkpoint {}: {e}", path.display())))?;
    if loaded.vocab_sha256 != vocab.sha256() {
        return Err(CliError::validation(format!(
            "--vocab does not match the checkpoint {}: vocabulary digest differs",
            path.display()
        )));
    }
    if loaded.topic_vocab_sha256 != tv.sha256() {
        return Err(CliError::validation(format!(
            "--topic-vocab does not match the checkpoint {}: topic vocabulary digest differs",
            path.display()
        )));
    }
    Ok(loaded.params)
}

struct ResolvedTrain {
    cfg: TrainConfig,
}

fn resolve_train(
    fc: &FileConfig,
    flags: &TrainFlags,
    seed: u64,
) -> Result<ResolvedTrain, CliError> {
    let reward_raw = fc.get("reward", flags.reward.clone(), "rouge-l".to_string())?;
    let reward: RewardMetric = reward_raw.parse().map_err(CliError::validation)?;
    let clip = fc.get(
        "grad-clip-norm",
        flags.grad_clip_norm,
        defaults::GRAD_CLIP_NORM,
    )?;
    let cfg = TrainConfig {
        lr_ml: fc.get("lr-ml", flags.lr_ml, defaults::LR_ML)?,
        lr_decay: fc.get("lr-decay", flags.lr_decay, defaults::LR_DECAY)?,
        lr_floor: fc.get("lr-floor", flags.lr_floor, defaults::LR_FLOOR)?,
        lr_rl: fc.get("lr-rl", flags.lr_rl, defaults::LR_RL)?,
        momentum: fc.get("momentum", flags.momentum, defaults::MOMENTUM)?,
        batch_size: fc.get("batch-size", flags.batch_size, defaults::BATCH_SIZE)?,
        lambda_mixed: fc.get("lambda-mixed", flags.lambda_mixed, defaults::LAMBDA_MIXED)?,
        grad_clip_norm: if clip == 0.0 { None } else { Some(clip) },
        max_epochs: fc.get("max-epochs", flags.max_epochs, defaults::MAX_EPOCHS)?,
        reward,
        seed,
    };
    cfg.validate()
        .map_err(|e| CliError::validation(e.to_string()))?;
    Ok(ResolvedTrain { cfg })
}

fn stop_label(stop: StopReason) -> &'static str {
    match stop {
        StopReason::MaxEpochs => "max-epochs",
        StopReason::LrFloor => "lr-floor",
    }
}

/// Per-epoch sink shared by both training commands: persist the latest
/// parameters, then emit the machine-readable log line.
fn epoch_sink<'a>(
    path: &'a Path,
    vocab_sha: [u8; 32],
    tv_sha: [u8; 32],
) -> impl FnMut(&ModelParams, &EpochLine) -> Result<(), TrainError> + 'a {
    move |params, line| {
        save_checkpoint(path, params, &vocab_sha, &tv_sha)
            .map_err(|e| TrainError::Sink(format!("{}: {e}", path.display())))?;
        println!("{}", line.to_tsv());
        Ok(())
    }
}

// ── lda-train ──

pub fn lda_train(args: LdaTrainArgs) -> Result<(), CliError> {
    let fc = FileConfig::load(args.common.config.as_deref())?;
    let seed = fc.get("seed", args.common.seed, defaults::SEED)?;
    let lda_cfg = LdaConfig {
        num_topics: fc.get("num-topics", args.num_topics, defaults::NUM_TOPICS)?,
        alpha: fc.get("alpha", args.alpha, defaults::ALPHA)?,
        beta: fc.get("beta", args.beta, defaults::BETA)?,
        iterations: fc.get("iterations", args.iterations, defaults::ITERATIONS)?,
        seed,
    };
    let top_n = fc.get("top-n", args.top_n, defaults::TOP_N)?;
    let threshold = fc.get(
        "universal-threshold",
        args.universal_threshold,
        defaults::UNIVERSAL_THRESHOLD,
    )?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::validation(format!(
            "--universal-threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let pairs = read_pairs("--corpus", &args.corpus)?;

    // topic structure lives in the documents being summarized
    let docs: Vec<Vec<String>> = pairs.into_iter().map(|p| p.source).collect();
    let model =
        fit_lda(&docs, &lda_cfg).map_err(|e| CliError::validation(e.to_string()))?;
    let universal: HashSet<String> = universal_words(&docs, threshold);
    let tv = topic_vocabulary(&model, top_n, &universal);

    save_topic_model(&model, &args.topic_model).map_err(|e| {
        CliError::runtime(format!("--topic-model {}: {e}", args.topic_model.display()))
    })?;
    tv.save(&args.topic_vocab).map_err(|e| {
        CliError::runtime(format!("--topic-vocab {}: {e}", args.topic_vocab.display()))
    })?;

    for (topic, words) in tv.per_topic_top_words.iter().enumerate() {
        for (rank, word) in words.iter().enumerate() {
            println!("{topic}\t{}\t{word}", rank + 1);
        }
    }
    Ok(())
}

// ── train ──

fn resolve_model_config(
    fc: &FileConfig,
    flags: &ModelFlags,
    vocab_size: usize,
    topic_words: usize,
    seed: u64,
) -> Result<ModelConfig, CliError> {
    let config = ModelConfig {
        dim: fc.get("dim", flags.dim, defaults::DIM)?,
        kernel: fc.get("kernel", flags.kernel, defaults::KERNEL)?,
        word_layers: fc.get("word-layers", flags.word_layers, defaults::WORD_LAYERS)?,
        topic_layers: fc.get("topic-layers", flags.topic_layers, defaults::TOPIC_LAYERS)?,
        vocab_size,
        topic_words,
        max_source_len: fc.get(
            "max-source-len",
            flags.max_source_len,
            defaults::MAX_SOURCE_LEN,
        )?,
        max_target_len: fc.get(
            "max-target-len",
            flags.max_target_len,
            defaults::MAX_TARGET_LEN,
        )?,
        init_seed: seed,
    };
    config
        .validate()
        .map_err(|e| CliError::validation(e.to_string()))?;
    Ok(config)
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let fc = FileConfig::load(args.common.config.as_deref())?;
    let seed = fc.get("seed", args.common.seed, defaults::SEED)?;
    let resolved = resolve_train(&fc, &args.train, seed)?;

    let pairs = read_pairs("--corpus", &args.corpus)?;
    let val = match &args.val_corpus {
        Some(p) => read_pairs("--val-corpus", p)?,
        None => Vec::new(),
    };
    let tv = read_topic_vocab(&args.topic_vocab)?;
    let topic_model = load_topic_model(&args.topic_model).map_err(|e| {
        CliError::validation(format!("--topic-model {}: {e}", args.topic_model.display()))
    })?;

    let vocab_size = fc.get("vocab-size", args.vocab_size, defaults::VOCAB_SIZE)?;
    let min_count = fc.get("min-count", args.min_count, defaults::MIN_COUNT)?;
    let vocab = Vocabulary::build(&pairs, vocab_size, min_count);
    vocab
        .save(&args.vocab)
        .map_err(|e| CliError::runtime(format!("--vocab {}: {e}", args.vocab.display())))?;

    let config = resolve_model_config(&fc, &args.model, vocab.len(), tv.len(), seed)?;
    let params =
        ModelParams::init(&config).map_err(|e| CliError::validation(e.to_string()))?;
    let embedding = topic_embedding_matrix(&topic_model, &tv, config.dim)
        .map_err(|e| CliError::validation(e.to_string()))?;
    let mut params = params;
    params
        .load_topic_embedding(&embedding)
        .map_err(|e| CliError::validation(e.to_string()))?;
    let lookup = TopicLookup::build(&vocab, &tv);

    println!("{}", EpochLine::TSV_HEADER);
    let outcome = train_ml(
        &params,
        &lookup,
        &vocab,
        &pairs,
        &val,
        &resolved.cfg,
        epoch_sink(&args.checkpoint, vocab.sha256(), tv.sha256()),
    )
    .map_err(|e| CliError::runtime(e.to_string()))?;
    println!("stop\t{}", stop_label(outcome.stop));
    Ok(())
}

// ── rl-finetune ──

pub fn rl_finetune(args: RlFinetuneArgs) -> Result<(), CliError> {
    let fc = FileConfig::load(args.common.config.as_deref())?;
    let seed = fc.get("seed", args.common.seed, defaults::SEED)?;
    let resolved = resolve_train(&fc, &args.train, seed)?;

    let vocab = read_vocab(&args.vocab)?;
    let tv = read_topic_vocab(&args.topic_vocab)?;
    let params = read_checkpoint(&args.checkpoint, &vocab, &tv)?;
    let lookup = TopicLookup::build(&vocab, &tv);

    let pairs = read_pairs("--corpus", &args.corpus)?;
    let val = match &args.val_corpus {
        Some(p) => read_pairs("--val-corpus", p)?,
        None => Vec::new(),
    };

    println!("{}", EpochLine::TSV_HEADER);
    let outcome = finetune_scst(
        &params,
        &lookup,
        &vocab,
        &pairs,
        &val,
        &resolved.cfg,
        epoch_sink(&args.out, vocab.sha256(), tv.sha256()),
    )
    .map_err(|e| CliError::runtime(e.to_string()))?;
    println!("stop\t{}", stop_label(outcome.stop));
    Ok(())
}

// ── summarize ──

pub fn summarize(args: SummarizeArgs) -> Result<(), CliError> {
    let fc = FileConfig::load(args.common.config.as_deref())?;
    let seed = fc.get("seed", args.common.seed, defaults::SEED)?;
    let beam_size = fc.get("beam-size", args.beam_size, defaults::BEAM_SIZE)?;
    if beam_size == 0 {
        return Err(CliError::validation("--beam-size must be at least 1"));
    }
    let max_len = fc.resolve("max-len", args.max_len)?;
    if max_len == Some(0) {
        return Err(CliError::validation("--max-len must be at least 1"));
    }

    let vocab = read_vocab(&args.vocab)?;
    let tv = read_topic_vocab(&args.topic_vocab)?;
    let params = read_checkpoint(&args.checkpoint, &vocab, &tv)?;
    let lookup = TopicLookup::build(&vocab, &tv);

    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::validation(format!("--input {}: {e}", args.input.display())))?;

    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if tokens.is_empty() {
            println!();
            continue;
        }
        let mut ids = vocab.encode(&tokens);
        ids.truncate(params.config.max_source_len);
        let budget = max_len.unwrap_or_else(|| default_max_len(ids.len()));
        let hyp: Hypothesis = match args.decoder {
            DecoderKind::Greedy => greedy_decode(&params, &lookup, &ids, budget),
            DecoderKind::Beam => beam_decode(&params, &lookup, &ids, beam_size, budget),
            DecoderKind::Sample => {
                sample_decode(&params, &lookup, &ids, budget, seed.wrapping_add(i as u64))
            }
        }
        .map_err(|e| CliError::runtime(format!("input line {}: {e}", i + 1)))?;
        let words = vocab
            .decode(hyp.summary_tokens())
            .map_err(|e| CliError::runtime(format!("input line {}: {e}", i + 1)))?;
        println!("{}", words.join(" "));
    }
    Ok(())
}

// ── evaluate ──

fn read_lines(flag: &str, path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("{flag} {}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Ranking tuple for picking among multiple references. The f1 ordering
/// matches the library's own multi-reference rule exactly; recall mode
/// promotes recall to the primary key.
fn mode_key(mode: EvalMode, s: &RougeScore) -> (f64, f64, f64) {
    match mode {
        EvalMode::F1 => (s.f1, s.recall, s.precision),
        EvalMode::Recall => (s.recall, s.f1, s.precision),
    }
}

fn best_for_mode(mode: EvalMode, scores: &[RougeScore]) -> RougeScore {
    let mut best = scores[0];
    for s in &scores[1..] {
        if mode_key(mode, s) > mode_key(mode, &best) {
            best = *s;
        }
    }
    best
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let hyp_lines = read_lines("--hyp", &args.hyp)?;
    if hyp_lines.is_empty() {
        return Err(CliError::validation(format!(
            "--hyp {} has no lines to score",
            args.hyp.display()
        )));
    }
    let mut ref_files = Vec::new();
    for path in &args.refs {
        let lines = read_lines("--ref", path)?;
        if lines.len() != hyp_lines.len() {
            return Err(CliError::validation(format!(
                "line count mismatch: --hyp {} has {} lines, --ref {} has {}",
                args.hyp.display(),
                hyp_lines.len(),
                path.display(),
                lines.len()
            )));
        }
        ref_files.push(lines);
    }

    let to_ids = |mapper: &mut IdMapper, line: &str| -> Vec<u32> {
        match args.level {
            EvalLevel::Word => {
                let tokens: Vec<&str> = line.split_whitespace().collect();
                mapper.map_tokens(&tokens)
            }
            // written characters only; spacing is not content
            EvalLevel::CharId => {
                let compact: String = line.split_whitespace().collect();
                mapper.map_chars(&compact)
            }
        }
    };

    let mut sums = [[0.0f64; 3]; 3]; // metric x (P, R, F)
    for (i, hyp_line) in hyp_lines.iter().enumerate() {
        let mut mapper = IdMapper::new();
        let hyp = to_ids(&mut mapper, hyp_line);
        let refs: Vec<Vec<u32>> = ref_files
            .iter()
            .map(|f| to_ids(&mut mapper, &f[i]))
            .collect();
        for (m, picked) in [1usize, 2].iter().map(|&n| {
            let per_ref: Vec<RougeScore> = refs
                .iter()
                .map(|r| rouge_n(&hyp, &[&r[..]], n).expect("one reference, order >= 1"))
                .collect();
            (n - 1, best_for_mode(args.mode, &per_ref))
        }) {
            sums[m][0] += picked.precision;
            sums[m][1] += picked.recall;
            sums[m][2] += picked.f1;
        }
        let per_ref: Vec<RougeScore> = refs
            .iter()
            .map(|r| rouge_l(&hyp, &[&r[..]]).expect("one reference"))
            .collect();
        let picked = best_for_mode(args.mode, &per_ref);
        sums[2][0] += picked.precision;
        sums[2][1] += picked.recall;
        sums[2][2] += picked.f1;
    }

    let n = hyp_lines.len() as f64;
    println!("metric\tP\tR\tF");
    for (name, row) in ["RG-1", "RG-2", "RG-L"].iter().zip(&sums) {
        println!(
            "{name}\t{:.4}\t{:.4}\t{:.4}",
            row[0] / n,
            row[1] / n,
            row[2] / n
        );
    }
    Ok(())
}

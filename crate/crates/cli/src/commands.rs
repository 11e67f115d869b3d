use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use pensieve_core::decoder::{analyze_rows, read_breakdown_csv, write_breakdown_csv};
use pensieve_core::eval::read_samples_jsonl;
use pensieve_core::index::{read_records_jsonl, rerank_by_bleu1};
use pensieve_core::{
    decode_sequence, diffuse as forward_diffuse, mme_score, pope_metrics, DecodeConfig,
    DecodeOutput, DiffusionSchedule, Index, LogitTrace, Query, Scorer, Strategy, Tensor, ToyScorer,
    Visual, Visuals, Vocabulary,
};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::{
    fsio, style, AnalyzeArgs, DecodeArgs, DiffuseArgs, EvalArgs, Metric, ScorerKind, SearchArgs,
};

fn load_index(path: &Path) -> CliResult<Index> {
    Index::read_from(fsio::open(path)?).map_err(|e| CliError::at(path, e))
}

fn load_blocklist(path: Option<&Path>) -> CliResult<HashSet<String>> {
    match path {
        Some(p) => Ok(fsio::read_lines(p)?.into_iter().collect()),
        None => Ok(HashSet::new()),
    }
}

pub fn index_build(records: &Path, out: &Path) -> CliResult<()> {
    let manifest = ManifestBuilder::new("index build").input(records);
    let recs = read_records_jsonl(fsio::open(records)?).map_err(|e| CliError::at(records, e))?;
    let index = Index::build(recs).map_err(|e| CliError::at(records, e))?;
    let mut file = fsio::create(out)?;
    index
        .write_to(&mut file)
        .map_err(|e| CliError::at(out, e))?;
    file.flush().map_err(|e| CliError::io(out, e))?;
    drop(file);
    manifest.write(&[out], &fsio::sidecar(out))?;
    println!(
        "indexed {} records (semantic dim {}, appearance dim {})",
        index.len(),
        index.semantic_dim(),
        index.appearance_dim()
    );
    Ok(())
}

pub fn index_search(args: SearchArgs) -> CliResult<()> {
    let index = load_index(&args.index)?;
    let query: Query = fsio::read_json(&args.query)?;
    let blocked = load_blocklist(args.blocklist.as_deref())?;
    let k = usize::try_from(args.k).unwrap_or(usize::MAX);
    let mut hits = index
        .search(&query, k, &blocked)
        .map_err(|e| CliError::at(&args.query, e))?;
    if args.rerank_bleu1 {
        let question = args.query_text.as_deref().unwrap_or_default();
        hits = rerank_by_bleu1(hits, question, &index)
            .map_err(|e| CliError::Data(format!("--query-text: {e}")))?;
    }
    let mut stdout = std::io::stdout().lock();
    for hit in &hits {
        let line = serde_json::to_string(hit).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(stdout, "{line}").map_err(|e| CliError::Io(format!("stdout: {e}")))?;
    }
    Ok(())
}

fn load_config(args: &DecodeArgs) -> CliResult<DecodeConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            toml::from_str(&fsio::read_text(path)?).map_err(|e| CliError::parse(path, e))?
        }
        None => DecodeConfig::captioning(),
    };
    if let Some(t) = args.jsd_threshold {
        cfg.jsd_threshold = Some(t);
    }
    if let Some(s) = &args.strategy {
        cfg.strategy = s
            .parse::<Strategy>()
            .map_err(|e| CliError::Usage(format!("--strategy: {e}")))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.max_tokens {
        cfg.max_tokens = n;
    }
    cfg.baseline |= args.baseline;
    cfg.validate()?;
    Ok(cfg)
}

fn toy_vocabulary(args: &DecodeArgs, cfg: &DecodeConfig) -> CliResult<Vocabulary> {
    if let Some(path) = &args.vocab {
        return Vocabulary::new(fsio::read_lines(path)?).map_err(|e| CliError::at(path, e));
    }
    let size = args.vocab_size.unwrap_or(32) as usize;
    let eos = cfg.eos_token.clone().unwrap_or_else(|| "</s>".into());
    let mut tokens: Vec<String> = (0..size - 1).map(|i| format!("_t{i}")).collect();
    tokens.push(eos);
    Ok(Vocabulary::new(tokens)?)
}

/// Scorer, visuals and the input files they were read from.
fn toy_setup(
    args: &DecodeArgs,
    cfg: &DecodeConfig,
) -> CliResult<(ToyScorer, Visuals, Vec<PathBuf>)> {
    let test_path = args
        .test
        .as_ref()
        .ok_or_else(|| CliError::Usage("--scorer toy requires --test".into()))?;
    let mut inputs = vec![test_path.clone()];
    let test: Tensor = fsio::read_json(test_path)?;
    test.validate().map_err(|e| CliError::at(test_path, e))?;

    let references: Vec<Vec<f64>> = match (&args.references, &args.index) {
        (Some(path), None) => {
            inputs.push(path.clone());
            fsio::read_json(path)?
        }
        (None, Some(path)) => {
            inputs.push(path.clone());
            let index = load_index(path)?;
            if let Some(b) = &args.blocklist {
                inputs.push(b.clone());
            }
            let blocked = load_blocklist(args.blocklist.as_deref())?;
            let query = if index.appearance_dim() > 0 {
                let split = index.semantic_dim().min(test.values.len());
                Query::ensemble(test.values[..split].to_vec(), test.values[split..].to_vec())
            } else {
                Query::text(test.values.clone())
            };
            index
                .search(&query, cfg.k, &blocked)
                .map_err(|e| CliError::at(test_path, e))?
                .iter()
                .filter_map(|hit| index.embedding(&hit.id))
                .collect()
        }
        _ => {
            return Err(CliError::Usage(
                "--scorer toy requires exactly one of --references or --index".into(),
            ))
        }
    };
    if let Some(v) = &args.vocab {
        inputs.push(v.clone());
    }

    let noised = forward_diffuse(
        &test,
        cfg.diffusion_step,
        &DiffusionSchedule::default(),
        cfg.seed,
    )?;
    let scorer = ToyScorer::new(
        toy_vocabulary(args, cfg)?,
        test.values.len(),
        args.scorer_seed,
    );
    let visuals = Visuals {
        test: Visual::Embedding(test.values),
        diffused: Visual::Embedding(noised.values),
        references: references.into_iter().map(Visual::Embedding).collect(),
    };
    Ok((scorer, visuals, inputs))
}

fn trace_setup(
    args: &DecodeArgs,
    cfg: &DecodeConfig,
) -> CliResult<(LogitTrace, Visuals, Vec<PathBuf>)> {
    let path = args
        .trace
        .as_ref()
        .ok_or_else(|| CliError::Usage("--scorer trace requires --trace".into()))?;
    if args.test.is_some() || args.references.is_some() || args.index.is_some() {
        return Err(CliError::Usage(
            "--test, --references and --index apply to --scorer toy only".into(),
        ));
    }
    let trace = LogitTrace::read_jsonl(fsio::open(path)?).map_err(|e| CliError::at(path, e))?;
    let ref_ids = if args.ref_ids.is_empty() {
        (1..=cfg.k).map(|j| format!("knn{j}")).collect()
    } else {
        args.ref_ids.clone()
    };
    let visuals = Visuals {
        test: Visual::Trace(args.test_id.clone()),
        diffused: Visual::Trace(args.diffused_id.clone()),
        references: ref_ids.into_iter().map(Visual::Trace).collect(),
    };
    Ok((trace, visuals, vec![path.clone()]))
}

fn run_decode<S: Scorer>(
    scorer: &S,
    visuals: &Visuals,
    prompt: &str,
    cfg: &DecodeConfig,
) -> CliResult<DecodeOutput> {
    let prompt = scorer
        .vocabulary()
        .encode(prompt)
        .map_err(|e| CliError::Data(format!("--prompt: {e}")))?;
    Ok(decode_sequence(scorer, visuals, &prompt, cfg)?)
}

pub fn decode(args: DecodeArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("decode");
    if let Some(path) = &args.config {
        manifest = manifest.input(path);
    }
    let cfg = load_config(&args)?;
    let (output, vocab, inputs) = match args.scorer {
        ScorerKind::Toy => {
            let (scorer, visuals, inputs) = toy_setup(&args, &cfg)?;
            let out = run_decode(&scorer, &visuals, &args.prompt, &cfg)?;
            (out, scorer.vocabulary().clone(), inputs)
        }
        ScorerKind::Trace => {
            let (trace, visuals, inputs) = trace_setup(&args, &cfg)?;
            let out = run_decode(&trace, &visuals, &args.prompt, &cfg)?;
            (out, trace.vocabulary().clone(), inputs)
        }
    };

    fsio::create_dir(&args.out)?;
    let tokens_path = args.out.join("tokens.txt");
    let csv_path = args.out.join("breakdown.csv");
    let mut tokens = String::new();
    for &t in &output.tokens {
        tokens.push_str(vocab.token(t).unwrap_or_default());
        tokens.push('\n');
    }
    fsio::write(&tokens_path, tokens)?;
    let file = fsio::create(&csv_path)?;
    write_breakdown_csv(&output.breakdown_rows(), cfg.k, file)
        .map_err(|e| CliError::at(&csv_path, e))?;

    let config = toml::to_string(&cfg).map_err(|e| CliError::Data(format!("config: {e}")))?;
    manifest
        .seed(cfg.seed)
        .config(config)
        .inputs(&inputs)
        .parameters(json!({
            "scorer": format!("{:?}", args.scorer).to_lowercase(),
            "prompt": args.prompt,
            "scorer_seed": args.scorer_seed,
        }))
        .write(&[&tokens_path, &csv_path], &args.out.join("manifest.json"))?;
    println!("{}", output.text);
    Ok(())
}

pub fn analyze(args: AnalyzeArgs) -> CliResult<()> {
    let (rows, k) = read_breakdown_csv(fsio::open(&args.breakdown)?)
        .map_err(|e| CliError::at(&args.breakdown, e))?;
    let report = analyze_rows(&rows, k, usize::try_from(args.top).unwrap_or(usize::MAX));
    let markdown = report.to_markdown();
    if let Some(dir) = &args.out {
        fsio::create_dir(dir)?;
        let md_path = dir.join("report.md");
        let csv_path = dir.join("report.csv");
        fsio::write(&md_path, &markdown)?;
        report
            .write_csv(fsio::create(&csv_path)?)
            .map_err(|e| CliError::at(&csv_path, e))?;
        ManifestBuilder::new("analyze")
            .input(&args.breakdown)
            .parameters(json!({ "top": args.top }))
            .write(&[&md_path, &csv_path], &dir.join("manifest.json"))?;
    }
    println!("{}", style::title("Candidate breakdown"));
    print!("{markdown}");
    Ok(())
}

pub fn diffuse(args: DiffuseArgs) -> CliResult<()> {
    if args.t > args.steps {
        return Err(CliError::Usage(format!(
            "--t must be in 1..={}, got {}",
            args.steps, args.t
        )));
    }
    let manifest = ManifestBuilder::new("diffuse").input(&args.input);
    let schedule = DiffusionSchedule::linear(args.steps as usize, args.beta_start, args.beta_end)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let x0: Tensor = fsio::read_json(&args.input)?;
    let noised = forward_diffuse(&x0, args.t as usize, &schedule, args.seed)
        .map_err(|e| CliError::at(&args.input, e))?;
    let mut text = serde_json::to_string(&noised).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    fsio::write(&args.out, text)?;
    manifest
        .seed(args.seed)
        .parameters(json!({
            "t": args.t,
            "steps": args.steps,
            "beta_start": args.beta_start,
            "beta_end": args.beta_end,
            "alpha_bar": schedule.alpha_bar(args.t as usize)?,
        }))
        .write(&[&args.out], &fsio::sidecar(&args.out))?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let samples =
        read_samples_jsonl(fsio::open(&args.input)?).map_err(|e| CliError::at(&args.input, e))?;
    let (title, json, markdown) = match args.metric {
        Metric::Pope => {
            let m = pope_metrics(&samples).map_err(|e| CliError::at(&args.input, e))?;
            ("POPE", serde_json::to_value(m), m.to_markdown())
        }
        Metric::Mme => {
            let s = mme_score(&samples).map_err(|e| CliError::at(&args.input, e))?;
            ("MME", serde_json::to_value(s), s.to_markdown())
        }
    };
    let json = json.map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(dir) = &args.out {
        fsio::create_dir(dir)?;
        let json_path = dir.join("report.json");
        let md_path = dir.join("report.md");
        let mut text =
            serde_json::to_string_pretty(&json).map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        fsio::write(&json_path, text)?;
        fsio::write(&md_path, &markdown)?;
        ManifestBuilder::new("eval")
            .input(&args.input)
            .parameters(json!({ "metric": title.to_lowercase() }))
            .write(&[&json_path, &md_path], &dir.join("manifest.json"))?;
    }
    println!("{}", style::title(title));
    print!("{markdown}");
    Ok(())
}

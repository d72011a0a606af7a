mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use peakend::arc::{build_arcs, load_arcs, save_arcs};
use peakend::causal::{self, load_assessments, save_assessments, CausalLabel, Partition, Subset, TiePolicy};
use peakend::cluster::cluster_arcs;
use peakend::eval::{self, parse_records, random_baseline, records_to_jsonl, CompletionClient, EvalOptions, ParseFailureMode};
use peakend::ingest::{filter_min_sentences, load_reviews, sample_corpus, Corpus, InputFormat};
use peakend::io::{read_to_string, write_atomic};
use peakend::prompts::{find_template, load_templates, render_text, PromptKind};
use peakend::score::ScorerKind;
use peakend::segment::RuleSegmenter;
use peakend::stats::{lambda_utests, lambdas_to_csv, stats_table, stats_to_table};
use peakend::synth::{self, gen_synthetic, parse_truth, validate_recovery, Process, SentenceBank};
use serde_json::json;

use config::{Format, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "peakend",
    version,
    about = "Peak-end causal discovery on review corpora and causal-prompt evaluation of LLM classifiers",
    arg_required_else_help = true
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// lexicon, http or cache.
    #[arg(long, global = true)]
    scorer: Option<ScorerKind>,
    #[arg(long, global = true)]
    scorer_url: Option<String>,
    /// Sentence-score cache for `score`, completion cache for `eval run`.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// to_c1, to_c2 or drop.
    #[arg(long, global = true)]
    tie_policy: Option<TiePolicy>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Record failed completions instead of aborting the run.
    #[arg(long, global = true)]
    keep_going: bool,
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    concurrency: Option<u64>,
    /// Repeat for more log detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, filter and optionally sample a review file into corpus JSONL.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// jsonl or csv; guessed from the extension when absent.
        #[arg(long)]
        input_format: Option<InputFormat>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        min_sentences: Option<usize>,
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Score every sentence of a corpus into an arcs file.
    Score {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label reviews C1/C2 and write the assessments and partition files.
    Discover {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        arcs: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Dataset statistics per subset.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, required_unless_present = "assessments")]
        arcs: Option<PathBuf>,
        #[arg(long)]
        assessments: Option<PathBuf>,
        /// Add Mann-Whitney tests of the lambda distributions between C1 and C2.
        #[arg(long)]
        utest: bool,
        /// Also write per-review lambdas as CSV.
        #[arg(long)]
        lambdas_csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster decile-resampled arcs and name the cluster shapes.
    Cluster {
        #[arg(long)]
        arcs: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prompt template utilities.
    Prompts {
        #[command(subcommand)]
        command: PromptsCommand,
    },
    /// Run or summarize an LLM evaluation.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Synthetic corpora with known generating processes.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
}

#[derive(Subcommand)]
enum PromptsCommand {
    /// Print one template rendered against a review.
    Render {
        #[arg(long)]
        kind: PromptKind,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Review text to insert.
        #[arg(long, conflicts_with_all = ["corpus", "id"])]
        text: Option<String>,
        #[arg(long, requires = "id")]
        corpus: Option<PathBuf>,
        #[arg(long, requires = "corpus")]
        id: Option<String>,
        #[arg(long)]
        max_chars: Option<usize>,
    },
    /// List the loaded templates.
    List,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Query the model for every selected subset, prompt kind and paraphrase.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, required_unless_present = "assessments")]
        arcs: Option<PathBuf>,
        #[arg(long)]
        assessments: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "all,c1,c2")]
        subsets: Vec<Subset>,
        #[arg(long, value_delimiter = ',', default_value = "C0,C1,C2")]
        kinds: Vec<PromptKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a records file into per-subset, per-kind metrics.
    Report {
        #[arg(long)]
        records: PathBuf,
        /// incorrect or exclude.
        #[arg(long)]
        parse_failures: Option<ParseFailureMode>,
        /// Seeds for a uniform random baseline over the records' gold labels.
        #[arg(long, value_delimiter = ',')]
        baseline_seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Write corpus.jsonl, arcs.jsonl and truth.csv for one generating process.
    Gen {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        process: Option<Process>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Measure how often discovery recovers the known process.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        arcs: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().format_timestamp(None).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        scorer: cli.scorer,
        scorer_url: cli.scorer_url.clone(),
        cache: cli.cache.clone(),
        tie_policy: cli.tie_policy,
        format: cli.format,
        keep_going: cli.keep_going,
        concurrency: cli.concurrency.map(|c| c as usize),
    };
    let cfg = RunConfig::load(cli.config.as_deref())?.apply(&overrides);
    log::info!("effective config: {}", serde_json::to_string(&cfg)?);

    match cli.command {
        Command::Ingest { input, input_format, out, min_sentences, sample } => {
            ingest(&cfg, &input, input_format, &out, min_sentences, sample)
        }
        Command::Score { corpus, out } => score(&cfg, &corpus, &out),
        Command::Discover { corpus, arcs, out_dir } => discover(&cfg, &corpus, &arcs, &out_dir),
        Command::Stats { corpus, arcs, assessments, utest, lambdas_csv, out } => stats(
            &cfg,
            &corpus,
            arcs.as_deref(),
            assessments.as_deref(),
            utest,
            lambdas_csv.as_deref(),
            out.as_deref(),
        ),
        Command::Cluster { arcs, k, out } => cluster(&cfg, &arcs, k, out.as_deref()),
        Command::Prompts { command } => prompts(&cfg, command),
        Command::Eval { command } => eval_cmd(&cfg, command),
        Command::Synth { command } => synth_cmd(&cfg, command),
    }
}

/// Writes `json` or `table` to `out`, or to stdout when `out` is absent.
fn emit(format: Format, json: &serde_json::Value, table: &str, out: Option<&Path>) -> Result<()> {
    let text = match format {
        Format::Json => serde_json::to_string_pretty(json)? + "\n",
        Format::Table => table.to_string(),
    };
    match out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            log::info!("wrote {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    load_reviews(path, InputFormat::Jsonl).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_partition(corpus: &Corpus, arcs: Option<&Path>, assessments: Option<&Path>, tie: TiePolicy) -> Result<Partition> {
    let part = match (assessments, arcs) {
        (Some(a), _) => Partition::from_assessments(corpus, load_assessments(a)?, tie)?,
        (None, Some(a)) => causal::partition(corpus, &load_arcs(a)?, tie)?,
        (None, None) => bail!("either --arcs or --assessments is required"),
    };
    Ok(part)
}

fn ingest(
    cfg: &RunConfig,
    input: &Path,
    format: Option<InputFormat>,
    out: &Path,
    min_sentences: Option<usize>,
    sample: Option<usize>,
) -> Result<()> {
    let format = format.unwrap_or_else(|| InputFormat::from_path(input));
    let loaded = load_reviews(input, format).with_context(|| format!("loading {}", input.display()))?;
    let k = min_sentences.unwrap_or(cfg.min_sentences);
    let filtered = filter_min_sentences(&loaded, &RuleSegmenter, k)?;
    let kept = match sample {
        Some(n) => sample_corpus(&filtered, n, cfg.seed)?,
        None => filtered.clone(),
    };
    kept.save(out)?;
    let table = format!(
        "loaded {}\nkept after min-sentences {k}: {}\nwritten: {}\n",
        loaded.len(),
        filtered.len(),
        kept.len()
    );
    let json = json!({ "loaded": loaded.len(), "min_sentences": k, "filtered": filtered.len(), "written": kept.len() });
    emit(cfg.format, &json, &table, None)
}

fn score(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let scorer = cfg.scorer.build()?;
    let arcs = build_arcs(&corpus, &RuleSegmenter, scorer.as_ref(), cfg.concurrency)?;
    save_arcs(&arcs, out)?;
    let sentences: usize = arcs.iter().map(|a| a.len()).sum();
    let json = json!({ "reviews": arcs.len(), "sentences": sentences });
    emit(cfg.format, &json, &format!("scored {} reviews, {sentences} sentences\n", arcs.len()), None)
}

fn discover(cfg: &RunConfig, corpus: &Path, arcs: &Path, out_dir: &Path) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let part = causal::partition(&corpus, &load_arcs(arcs)?, cfg.tie_policy)?;
    save_assessments(&part.assessments, &out_dir.join("assessments.csv"))?;
    part.c1.save(&out_dir.join("c1.jsonl"))?;
    part.c2.save(&out_dir.join("c2.jsonl"))?;

    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    for a in &part.assessments {
        *labels.entry(a.label.to_string()).or_default() += 1;
    }
    let ties = labels.get(&CausalLabel::Tie.to_string()).copied().unwrap_or(0);
    let n = corpus.len();
    let pct = |x: usize| if n == 0 { 0.0 } else { 100.0 * x as f64 / n as f64 };
    let json = json!({
        "reviews": n,
        "labels": labels,
        "tie_policy": cfg.tie_policy,
        "c1": part.c1.len(),
        "c2": part.c2.len(),
        "dropped": n - part.c1.len() - part.c2.len(),
    });
    let table = format!(
        "reviews {n}\nC1 {} ({:.1}%)\nC2 {} ({:.1}%)\nties {ties} (policy {})\n",
        part.c1.len(),
        pct(part.c1.len()),
        part.c2.len(),
        pct(part.c2.len()),
        serde_json::to_value(cfg.tie_policy)?.as_str().unwrap_or_default()
    );
    emit(cfg.format, &json, &table, None)
}

fn stats(
    cfg: &RunConfig,
    corpus: &Path,
    arcs: Option<&Path>,
    assessments: Option<&Path>,
    utest: bool,
    lambdas_csv: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let part = load_partition(&corpus, arcs, assessments, cfg.tie_policy)?;
    let rows = stats_table(&corpus, &part, &RuleSegmenter)?;
    let mut json = json!({ "rows": rows });
    let mut table = stats_to_table(&rows);
    if utest {
        let t = lambda_utests(&part)?;
        json["utest"] = serde_json::to_value(&t)?;
        table.push_str(&format!("\nMann-Whitney U, C1 (n={}) vs C2 (n={}):\n", t.n_c1, t.n_c2));
        for (name, r) in [("lambda1", t.lambda1), ("lambda2", t.lambda2)] {
            match r {
                Some(r) => table.push_str(&format!(
                    "  {name}: U = {:.1}, z = {:.3}, p = {:.3e}\n",
                    r.u_statistic, r.z, r.p_value
                )),
                None => table.push_str(&format!("  {name}: not computed, a subset is empty\n")),
            }
        }
    }
    if let Some(p) = lambdas_csv {
        write_atomic(p, lambdas_to_csv(&part)?.as_bytes())?;
    }
    emit(cfg.format, &json, &table, out)
}

fn cluster(cfg: &RunConfig, arcs: &Path, k: Option<usize>, out: Option<&Path>) -> Result<()> {
    let arcs = load_arcs(arcs)?;
    let mut km = cfg.kmeans.clone();
    if let Some(k) = k {
        km.k = k;
    }
    let report = cluster_arcs(&arcs, &km, cfg.name_threshold)?;
    let mut table = format!("k = {}, inertia = {:.3}\n", report.k, report.inertia);
    for c in &report.clusters {
        let centroid: Vec<String> = c.centroid.iter().map(|v| format!("{v:.2}")).collect();
        table.push_str(&format!(
            "cluster {} {:<22} size {:>6}  first-opposes {:>5.1}%  [{}]\n",
            c.index,
            c.name.to_string(),
            c.size,
            100.0 * c.first_sentence_opposes,
            centroid.join(" ")
        ));
    }
    emit(cfg.format, &serde_json::to_value(&report)?, &table, out)
}

fn prompts(cfg: &RunConfig, command: PromptsCommand) -> Result<()> {
    let templates = load_templates(cfg.templates.as_deref())?;
    match command {
        PromptsCommand::List => {
            let table: String = templates
                .iter()
                .map(|t| format!("{} {} {}\n", t.kind, t.paraphrase_index, t.body.replace('\n', "\\n")))
                .collect();
            emit(cfg.format, &serde_json::to_value(&templates)?, &table, None)
        }
        PromptsCommand::Render { kind, index, text, corpus, id, max_chars } => {
            let t = find_template(&templates, kind, index)
                .with_context(|| format!("no template {kind} paraphrase {index}"))?;
            let review_text = match (text, corpus, id) {
                (Some(text), _, _) => text,
                (None, Some(c), Some(id)) => {
                    let corpus = load_corpus(&c)?;
                    corpus.get(&id).with_context(|| format!("no review {id:?} in corpus"))?.text.clone()
                }
                _ => bail!("give --text, or --corpus with --id"),
            };
            let rendered = render_text(t, &review_text, max_chars);
            emit(cfg.format, &json!({ "kind": kind, "index": index, "prompt": rendered }), &(rendered.clone() + "\n"), None)
        }
    }
}

fn eval_cmd(cfg: &RunConfig, command: EvalCommand) -> Result<()> {
    match command {
        EvalCommand::Run { corpus, arcs, assessments, subsets, kinds, out } => {
            let corpus = load_corpus(&corpus)?;
            let part = load_partition(&corpus, arcs.as_deref(), assessments.as_deref(), cfg.tie_policy)?;
            let templates = load_templates(cfg.templates.as_deref())?;
            let client = CompletionClient::new(cfg.model.clone())?;
            let options = EvalOptions { subsets, kinds, keep_going: cfg.keep_going };
            let records = eval::run_eval(&corpus, &part, &templates, &client, &options)?;
            write_atomic(&out, records_to_jsonl(&records).as_bytes())?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            log::info!("{} records, {failed} failed requests, {} HTTP requests", records.len(), client.requests());
            let rep = eval::report(&records, cfg.parse_failures);
            emit(cfg.format, &serde_json::to_value(&rep)?, &rep.to_table(), None)
        }
        EvalCommand::Report { records, parse_failures, baseline_seeds, out } => {
            let records = parse_records(&read_to_string(&records)?)?;
            if records.is_empty() {
                bail!("no records to report");
            }
            let rep = eval::report(&records, parse_failures.unwrap_or(cfg.parse_failures));
            let mut json = serde_json::to_value(&rep)?;
            let mut table = rep.to_table();
            if !baseline_seeds.is_empty() {
                let mut golds: BTreeMap<&str, u8> = BTreeMap::new();
                for r in &records {
                    golds.insert(&r.review_id, r.gold);
                }
                let golds: Vec<u8> = golds.into_values().collect();
                let row = random_baseline(&golds, &baseline_seeds)?;
                table.push_str(&format!(
                    "random baseline ({} seeds): macro-F1 {:.2} ±{:.2}, accuracy {:.2} ±{:.2}\n",
                    row.seeds, row.macro_f1_mean, row.macro_f1_std, row.accuracy_mean, row.accuracy_std
                ));
                json["random_baseline"] = serde_json::to_value(&row)?;
            }
            emit(cfg.format, &json, &table, out.as_deref())
        }
    }
}

fn synth_cmd(cfg: &RunConfig, command: SynthCommand) -> Result<()> {
    match command {
        SynthCommand::Gen { out_dir, process, n, sigma } => {
            let mut sc = cfg.synth.clone();
            if let Some(p) = process {
                sc.process = p;
            }
            if let Some(n) = n {
                sc.n_reviews = n;
            }
            if let Some(s) = sigma {
                sc.noise_sigma = s;
            }
            let s = gen_synthetic(&sc, &SentenceBank::bundled())?;
            s.corpus.save(&out_dir.join("corpus.jsonl"))?;
            save_arcs(&s.arcs, &out_dir.join("arcs.jsonl"))?;
            write_atomic(&out_dir.join("truth.csv"), synth::truth_to_csv(&s.truth)?.as_bytes())?;
            let json = json!({ "reviews": s.corpus.len(), "process": sc.process, "noise_sigma": sc.noise_sigma, "seed": sc.seed });
            let table = format!(
                "generated {} {} reviews (sigma {}, seed {}) in {}\n",
                s.corpus.len(),
                sc.process,
                sc.noise_sigma,
                sc.seed,
                out_dir.display()
            );
            emit(cfg.format, &json, &table, None)
        }
        SynthCommand::Validate { corpus, arcs, truth } => {
            let corpus = load_corpus(&corpus)?;
            let arcs = load_arcs(&arcs)?;
            let truth = parse_truth(&read_to_string(&truth)?)?;
            let r = validate_recovery(&corpus, &arcs, &truth)?;
            let table = format!(
                "recovery {:.4} ({} of {} non-tie reviews, {} ties)\n",
                r.rate, r.matched, r.evaluated, r.ties
            );
            emit(cfg.format, &serde_json::to_value(r)?, &table, None)
        }
    }
}

//! `tabxcheck`: run each stage of the cross-checking pipeline from the shell.
//!
//! Every stage reads from and writes to one output directory, so running the
//! subcommands in order produces the same files as `run-all`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tabxcheck::cipe::ReferenceEncoder;
use tabxcheck::classifier::BackendConfig;
use tabxcheck::cnap::document_chunks;
use tabxcheck::config::{parse_range, KvFile, RunConfig};
use tabxcheck::contrastive::{train_embedder, Objective};
use tabxcheck::corpus::{generate_corpus, read_gold_dir, GenConfig, SyntheticCorpus};
use tabxcheck::document::NumericalMention;
use tabxcheck::embedder::{AttentionEmbedder, BaselineEmbedder, LayoutMode, MentionEmbedder, ProjectionEmbedder};
use tabxcheck::pipeline::{
    check_corpus, classify_corpus, embed_corpus, evaluate_corpus, extract_corpus, filter_corpus, read_candidates,
    read_embeddings, read_reports, read_verdicts, sweep_corpus, write_candidates, write_embeddings, write_jsonl,
    write_metrics, write_reports, write_sweep, write_verdicts,
};
use tabxcheck::tokenizer::DefaultTokenizer;
use tabxcheck::{Error, Result};

const WEIGHTS: &str = "weights.txem";
const TRAIN_LOG: &str = "train_log.jsonl";
const MENTIONS: &str = "mentions.jsonl";
const EMBEDDINGS: &str = "embeddings";
const CANDIDATES: &str = "candidates.jsonl";
const VERDICTS: &str = "verdicts.jsonl";
const REPORTS: &str = "reports";
const METRICS: &str = "metrics.json";
const SWEEP: &str = "sweep.csv";
const CHUNKS: &str = "chunks.jsonl";

#[derive(Parser)]
#[command(name = "tabxcheck", version, about = "Cross-check numerical facts across the tables of a document")]
struct Cli {
    /// Key-value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (corpus generation, path bridging).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for document-level parallelism. Defaults to all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Io {
    /// Corpus directory with `docs/`, `gold/` and `planted.jsonl`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Gold directory, if not `<corpus>/gold`.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Output directory shared by all stages.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderKind {
    /// Trained projection of hashed features (reads `weights.txem`).
    Projection,
    /// Hashed features without projection.
    Baseline,
    /// Reference attention encoder over the parallel layout.
    Parallel,
    /// Reference attention encoder read at each mention's last context token.
    Extractive,
}

#[derive(Args, Clone)]
struct EmbedArgs {
    #[arg(long, value_enum, default_value = "projection")]
    embedder: EmbedderKind,
    /// Projection weights; defaults to `<out>/weights.txem`.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        docs: Option<usize>,
        /// Fraction of gold groups that receive a perturbed value.
        #[arg(long)]
        inject: Option<f64>,
        /// Generator settings as a key-value file.
        #[arg(long)]
        gen_config: Option<PathBuf>,
    },
    /// List numerical mentions and their contexts.
    Extract {
        #[command(flatten)]
        io: Io,
    },
    /// Train the projection embedder on the corpus gold groups.
    TrainEmbedder {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        objective: Option<Objective>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Embed every mention.
    Embed {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Keep mention pairs above the similarity threshold.
    Filter {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        t: Option<f64>,
        /// Brute-force scan instead of the graph index.
        #[arg(long)]
        exact: bool,
    },
    /// Gold-pair recall and candidates per document over thresholds.
    Sweep {
        #[command(flatten)]
        io: Io,
        /// Threshold range `start:stop:step`.
        #[arg(long)]
        t: Option<String>,
    },
    /// Order tables along a relevance path and pack them into chunks.
    Cnap {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        chunk_size: Option<usize>,
    },
    /// Ask the classifier about every candidate pair.
    Classify {
        #[command(flatten)]
        io: Io,
        /// `oracle`, `noisy:<rate>` or `remote:<url>`.
        #[arg(long)]
        backend: Option<String>,
    },
    /// Compare the values of pairs judged equivalent.
    Check {
        #[command(flatten)]
        io: Io,
    },
    /// Score predicted pairs and detected inconsistencies.
    Eval {
        #[command(flatten)]
        io: Io,
    },
    /// Train (unless weights are given), embed, filter, classify, check, evaluate and sweep.
    RunAll {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        embed: EmbedArgs,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        backend: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &cli.config {
        cfg.apply_kv(&KvFile::load(p)?)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(w) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("workers: {e}")))?;
    }
    Ok(cfg)
}

fn apply_io(cfg: &mut RunConfig, io: &Io) -> Result<()> {
    if let Some(c) = &io.corpus {
        cfg.corpus_dir = c.clone();
    }
    if let Some(g) = &io.gold {
        cfg.gold_dir = Some(g.clone());
    }
    if let Some(o) = &io.out {
        cfg.out_dir = o.clone();
    }
    cfg.check_paths()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

fn load_corpus(cfg: &RunConfig) -> Result<SyntheticCorpus> {
    let mut c = SyntheticCorpus::read_dir(&cfg.corpus_dir)?;
    if let Some(g) = &cfg.gold_dir {
        c.gold = read_gold_dir(g)?;
    }
    Ok(c)
}

fn doc_ids(c: &SyntheticCorpus) -> Vec<String> {
    c.documents.iter().map(|d| d.doc_id.clone()).collect()
}

fn set_backend(cfg: &mut RunConfig, spec: Option<&str>) -> Result<()> {
    if let Some(s) = spec {
        cfg.backend = s.parse::<BackendConfig>()?;
    }
    Ok(())
}

fn set_threshold(cfg: &mut RunConfig, t: Option<f64>) -> Result<()> {
    if let Some(t) = t {
        cfg.filter.threshold = t;
    }
    cfg.validate()
}

fn train(cfg: &RunConfig, corpus: &SyntheticCorpus) -> Result<ProjectionEmbedder> {
    let init = ProjectionEmbedder::random(&cfg.embedder);
    let out = train_embedder(corpus, &init, &cfg.train, &cfg.loss)?;
    for (epoch, loss) in out.epoch_means().iter().enumerate() {
        log::info!("epoch {epoch}: mean loss {loss:.5}");
    }
    write_jsonl(&cfg.out_dir.join(TRAIN_LOG), &out.log)?;
    out.embedder.save(&cfg.out_dir.join(WEIGHTS))?;
    Ok(out.embedder)
}

fn make_embedder(cfg: &RunConfig, args: &EmbedArgs) -> Result<Box<dyn MentionEmbedder>> {
    Ok(match args.embedder {
        EmbedderKind::Projection => {
            let path = args.weights.clone().unwrap_or_else(|| cfg.out_dir.join(WEIGHTS));
            Box::new(ProjectionEmbedder::load(&path)?)
        }
        EmbedderKind::Baseline => Box::new(BaselineEmbedder {
            feature_dim: cfg.embedder.feature_dim,
        }),
        EmbedderKind::Parallel | EmbedderKind::Extractive => {
            let mode = if matches!(args.embedder, EmbedderKind::Parallel) {
                LayoutMode::Parallel
            } else {
                LayoutMode::Extractive
            };
            let mut e = AttentionEmbedder::new(ReferenceEncoder::new(cfg.embedder.dim, cfg.embedder.seed), mode);
            e.prompt = cfg.embed_prompt.clone();
            e.max_len = cfg.max_len;
            Box::new(e)
        }
    })
}

#[derive(Serialize)]
struct MentionRecord<'a> {
    doc_id: &'a str,
    #[serde(flatten)]
    mention: &'a NumericalMention,
    context: String,
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli)?;
    match cli.command {
        Command::Gen {
            out,
            docs,
            inject,
            gen_config,
        } => {
            let mut g = GenConfig {
                rng_seed: cfg.seed,
                ..GenConfig::default()
            };
            if let Some(p) = gen_config {
                g.apply_kv(&KvFile::load(&p)?)?;
            }
            if let Some(n) = docs {
                g.n_docs = n;
            }
            if let Some(s) = cli.seed {
                g.rng_seed = s;
            }
            if let Some(r) = inject {
                g.inconsistency_rate = r;
            }
            let corpus = generate_corpus(&g)?;
            corpus.write_dir(&out)?;
            std::fs::write(out.join("gen.conf"), g.to_kv())?;
            eprintln!(
                "{} documents, {} mentions, {} planted inconsistencies",
                corpus.documents.len(),
                corpus.mention_count(),
                corpus.planted_inconsistencies.len()
            );
        }
        Command::Extract { io } => {
            apply_io(&mut cfg, &io)?;
            let c = load_corpus(&cfg)?;
            extract_corpus(&c.documents)?;
            let mut records = Vec::new();
            for d in &c.documents {
                for (m, ctx) in d.mentions().iter().zip(d.contexts()) {
                    records.push(MentionRecord {
                        doc_id: &d.doc_id,
                        mention: m,
                        context: ctx.text(),
                    });
                }
            }
            write_jsonl(&cfg.out_dir.join(MENTIONS), &records)?;
            eprintln!("{} mentions in {} documents", records.len(), c.documents.len());
        }
        Command::TrainEmbedder {
            io,
            objective,
            epochs,
            lr,
        } => {
            apply_io(&mut cfg, &io)?;
            if let Some(o) = objective {
                cfg.train.objective = o;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(l) = lr {
                cfg.train.lr = l;
            }
            train(&cfg, &load_corpus(&cfg)?)?;
        }
        Command::Embed { io, embed } => {
            apply_io(&mut cfg, &io)?;
            let c = load_corpus(&cfg)?;
            let e = embed_corpus(&c.documents, make_embedder(&cfg, &embed)?.as_ref())?;
            write_embeddings(&cfg.out_dir.join(EMBEDDINGS), &doc_ids(&c), &e)?;
        }
        Command::Filter { io, t, exact } => {
            apply_io(&mut cfg, &io)?;
            set_threshold(&mut cfg, t)?;
            cfg.filter.exact_mode |= exact;
            let c = load_corpus(&cfg)?;
            let ids = doc_ids(&c);
            let e = read_embeddings(&cfg.out_dir.join(EMBEDDINGS), &ids)?;
            let cand = filter_corpus(&e, &cfg.filter)?;
            write_candidates(&cfg.out_dir.join(CANDIDATES), &ids, &cand)?;
            eprintln!("{} candidate pairs", cand.iter().map(|x| x.len()).sum::<usize>());
        }
        Command::Sweep { io, t } => {
            apply_io(&mut cfg, &io)?;
            if let Some(spec) = t {
                cfg.sweep_thresholds = parse_range(&spec)?;
            }
            let c = load_corpus(&cfg)?;
            let e = read_embeddings(&cfg.out_dir.join(EMBEDDINGS), &doc_ids(&c))?;
            let pts = sweep_corpus(&e, &c.gold, &c.documents, &cfg.sweep_thresholds)?;
            write_sweep(&cfg.out_dir.join(SWEEP), &pts)?;
        }
        Command::Cnap { io, chunk_size } => {
            apply_io(&mut cfg, &io)?;
            if let Some(n) = chunk_size {
                cfg.chunk_size = n;
            }
            cfg.validate()?;
            let c = load_corpus(&cfg)?;
            let tok = DefaultTokenizer::default();
            let mut records = Vec::new();
            for (k, d) in c.documents.iter().enumerate() {
                let (_, chunks) = document_chunks(d, cfg.chunk_size, cfg.seed.wrapping_add(k as u64), &tok);
                records.extend(chunks);
            }
            write_jsonl(&cfg.out_dir.join(CHUNKS), &records)?;
        }
        Command::Classify { io, backend } => {
            apply_io(&mut cfg, &io)?;
            set_backend(&mut cfg, backend.as_deref())?;
            let c = load_corpus(&cfg)?;
            let cand = read_candidates(&cfg.out_dir.join(CANDIDATES), &doc_ids(&c))?;
            let b = cfg.backend.instantiate(&c.gold);
            let v = classify_corpus(&c.documents, &cand, b.as_ref(), &cfg.prompts, &cfg.dispatch)?;
            write_verdicts(&cfg.out_dir.join(VERDICTS), &v)?;
        }
        Command::Check { io } => {
            apply_io(&mut cfg, &io)?;
            let c = load_corpus(&cfg)?;
            let v = read_verdicts(&cfg.out_dir.join(VERDICTS), &doc_ids(&c))?;
            write_reports(&cfg.out_dir.join(REPORTS), &check_corpus(&c.documents, &v)?)?;
        }
        Command::Eval { io } => {
            apply_io(&mut cfg, &io)?;
            let c = load_corpus(&cfg)?;
            let r = read_reports(&cfg.out_dir.join(REPORTS), &doc_ids(&c))?;
            let m = evaluate_corpus(&c.gold, &r, &c.planted_inconsistencies)?;
            write_metrics(&cfg.out_dir.join(METRICS), &m)?;
            print_json(&serde_json::json!({"pairs": m.pairs.micro, "inconsistencies": m.inconsistencies}))?;
        }
        Command::RunAll { io, embed, t, backend } => {
            apply_io(&mut cfg, &io)?;
            set_threshold(&mut cfg, t)?;
            set_backend(&mut cfg, backend.as_deref())?;
            let c = load_corpus(&cfg)?;
            let ids = doc_ids(&c);
            extract_corpus(&c.documents)?;
            let embedder: Box<dyn MentionEmbedder> =
                if matches!(embed.embedder, EmbedderKind::Projection) && embed.weights.is_none() {
                    Box::new(train(&cfg, &c)?)
                } else {
                    make_embedder(&cfg, &embed)?
                };
            let e = embed_corpus(&c.documents, embedder.as_ref())?;
            write_embeddings(&cfg.out_dir.join(EMBEDDINGS), &ids, &e)?;
            let cand = filter_corpus(&e, &cfg.filter)?;
            write_candidates(&cfg.out_dir.join(CANDIDATES), &ids, &cand)?;
            let b = cfg.backend.instantiate(&c.gold);
            let v = classify_corpus(&c.documents, &cand, b.as_ref(), &cfg.prompts, &cfg.dispatch)?;
            write_verdicts(&cfg.out_dir.join(VERDICTS), &v)?;
            let r = check_corpus(&c.documents, &v)?;
            write_reports(&cfg.out_dir.join(REPORTS), &r)?;
            let m = evaluate_corpus(&c.gold, &r, &c.planted_inconsistencies)?;
            write_metrics(&cfg.out_dir.join(METRICS), &m)?;
            let pts = sweep_corpus(&e, &c.gold, &c.documents, &cfg.sweep_thresholds)?;
            write_sweep(&cfg.out_dir.join(SWEEP), &pts)?;
            print_json(&serde_json::json!({"pairs": m.pairs.micro, "inconsistencies": m.inconsistencies}))?;
        }
    }
    Ok(())
}

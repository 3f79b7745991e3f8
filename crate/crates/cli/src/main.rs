use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rtlreason::bencheval::mock::{SimProblem, SimulatedReasoner};
use rtlreason::bencheval::{
    golden_sanity, load_benchmark, run_benchmark, run_curve, Benchmark, EvalConfig, Generator, ProblemSetVerifier,
    SimVerifier,
};
use rtlreason::corpus::{curate, CommandValidator, CorpusRecord, CurateConfig, GoldenSet, SyntaxValidator};
use rtlreason::cotgen::{synthesize_dataset, Clock, CotTriple, SynthConfig, SynthMode, SynthTools, Templates};
use rtlreason::llmclient::{HttpBackend, HttpConfig, LlmClient, WireFormat};
use rtlreason::rules::{generate_rules, read_rules_file, write_rules_file, RuleSet, DEFAULT_MAX_RULES};
use rtlreason::sftpack::{load_tokenizer, pack_dataset, PackMode, PackOptions, PackPolicy, Separators, Special};
use rtlreason::ttscale::{run_scaled, CorrectivePrompt, ScaleConfig, DEFAULT_LIMITS, EVAL_TEMPERATURE};
use rtlreason::util::read_jsonl;

#[derive(Parser)]
#[command(name = "rtlreason", version, about = "Reasoning-data toolchain for RTL code generation")]
struct Cli {
    /// Log filter, e.g. `info` or `rtlreason=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a raw RTL corpus: dedup, length, syntax, decontamination, embedding.
    Curate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        goldens: PathBuf,
        /// TOML pipeline configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate problem specifications from curated scripts.
    Genspec(SynthArgs),
    /// Generate (specification, reasoning, solution) triples.
    Gencot(SynthArgs),
    /// Tokenize, loss-mask and pack a triple dataset into fixed-length chunks.
    Pack {
        #[arg(long)]
        dataset: PathBuf,
        /// Tokenizer directory (vocab.json, merges.txt, specials.json) or `toy`.
        #[arg(long, default_value = "toy")]
        tokenizer: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = rtlreason::sftpack::DEFAULT_CHUNK_LEN)]
        chunk: usize,
        #[arg(long, value_enum, default_value = "whole")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "next-fit")]
        policy: PolicyArg,
        /// Concatenate x, r, y without the <think> / </think> separators.
        #[arg(long)]
        no_separators: bool,
    },
    /// Run the corrective test-time scaling loop on every benchmark problem once.
    Scale {
        #[command(flatten)]
        bench: BenchArgs,
        #[command(flatten)]
        endpoint: EndpointArgs,
        #[command(flatten)]
        scaling: ScalingArgs,
        #[arg(long)]
        out: PathBuf,
        /// Only this problem.
        #[arg(long)]
        problem: Option<String>,
    },
    /// n-trial evaluation with pass@k and pass rate.
    Eval {
        #[command(flatten)]
        bench: BenchArgs,
        #[command(flatten)]
        endpoint: EndpointArgs,
        #[command(flatten)]
        scaling: ScalingArgs,
        #[arg(long, value_enum, default_value = "plain")]
        mode: EvalMode,
        #[arg(long, default_value_t = 10)]
        n: u32,
        #[arg(long, value_delimiter = ',', default_value = "1,5")]
        k: Vec<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        transcripts: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate general RTL coding rules from benchmark problem statements.
    Rules {
        #[arg(long)]
        bench: PathBuf,
        #[command(flatten)]
        endpoint: EndpointArgs,
        #[arg(long, default_value_t = DEFAULT_MAX_RULES)]
        max_rules: usize,
        #[arg(long, default_value_t = 4096)]
        max_tokens: u32,
        #[arg(long, default_value_t = EVAL_TEMPERATURE)]
        temperature: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Whole,
    Spill,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    NextFit,
    FirstFit,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Plain,
    Scaled,
    /// Two truncated, one base and two scaled runs; writes curve.csv.
    Curve,
}

#[derive(Args)]
struct EndpointArgs {
    /// Completion endpoint URL, or `mock:golden` for an offline model that
    /// always answers with the benchmark golden.
    #[arg(long = "model-endpoint")]
    endpoint: String,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = "RTLREASON_API_KEY")]
    api_key_env: String,
    /// Talk to a chat-completions endpoint (continuations become new turns).
    #[arg(long)]
    chat: bool,
    #[arg(long, default_value_t = 8)]
    max_in_flight: usize,
    /// Stop once this many generated tokens have been spent.
    #[arg(long)]
    budget_tokens: Option<u64>,
    /// Append every request/response to this line-delimited log.
    #[arg(long)]
    transcript_log: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    bench: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    simulator: SimArg,
    #[arg(long, default_value_t = 60)]
    sim_timeout: u64,
    /// Concurrent simulator processes (defaults to the CPU count).
    #[arg(long)]
    sim_jobs: Option<usize>,
    /// Check every golden against its testbench before running.
    #[arg(long)]
    check_goldens: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimArg {
    Auto,
    Icarus,
    Verilator,
}

#[derive(Args)]
struct ScalingArgs {
    /// Rules file for the corrective prompt; the built-in rule when absent.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    max_iters: u32,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LIMITS.to_vec())]
    limits: Vec<u32>,
    #[arg(long, default_value_t = EVAL_TEMPERATURE)]
    temperature: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Curated corpus (`corpus.jsonl` from `curate`).
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Golden solutions to decontaminate generated data against.
    #[arg(long)]
    goldens: Option<PathBuf>,
    /// Directory with problem.txt / solution.txt overriding the built-in prompts.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Syntax checker command; `{file}` is the script path. Detected when absent.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    validator: Option<Vec<String>>,
    /// TOML overrides for the synthesis settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match cli.cmd {
        Command::Curate { input, goldens, config, out } => cmd_curate(&input, &goldens, config.as_deref(), &out),
        Command::Genspec(a) => cmd_synth(a, SynthMode::SpecOnly),
        Command::Gencot(a) => cmd_synth(a, SynthMode::Full),
        Command::Pack { dataset, tokenizer, out, chunk, mode, policy, no_separators } => {
            cmd_pack(&dataset, &tokenizer, &out, chunk, mode, policy, no_separators)
        }
        Command::Scale { bench, endpoint, scaling, out, problem } => {
            cmd_scale(&bench, &endpoint, &scaling, &out, problem.as_deref())
        }
        Command::Eval { bench, endpoint, scaling, mode, n, k, seed, transcripts, out } => {
            cmd_eval(&bench, &endpoint, &scaling, mode, n, k, seed, transcripts, &out)
        }
        Command::Rules { bench, endpoint, max_rules, max_tokens, temperature, out } => {
            let b = load_benchmark(&bench)?;
            let client = build_client(&endpoint, None)?;
            let (set, report) = generate_rules(&b.markdown_docs(), &client, max_tokens, temperature, max_rules)?;
            write_rules_file(&out, &set)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            println!("wrote {} rules to {}", set.len(), out.display());
            Ok(())
        }
    }
}

fn build_client(e: &EndpointArgs, bench: Option<&Benchmark>) -> Result<LlmClient> {
    let client = if e.endpoint == "mock:golden" {
        let Some(b) = bench else { bail!("mock:golden needs a benchmark") };
        let mut problems = Vec::new();
        for p in &b.problems {
            problems.push(SimProblem::new(p.spec_text.clone(), p.golden()?, String::new(), 0));
        }
        LlmClient::new(SimulatedReasoner::new(problems))
    } else {
        let mut cfg = HttpConfig::new(&e.endpoint).with_api_key_env(&e.api_key_env);
        cfg.model = e.model.clone();
        if e.chat {
            cfg.format = WireFormat::Chat;
        }
        LlmClient::new(HttpBackend::new(cfg))
    };
    let mut client = client.with_budget(e.budget_tokens).with_max_in_flight(e.max_in_flight);
    if let Some(log) = &e.transcript_log {
        client = client.with_transcript_log(log)?;
    }
    Ok(client)
}

fn cmd_curate(input: &Path, goldens: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => CurateConfig::from_toml(&std::fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => CurateConfig::default(),
    };
    let report = curate(input, goldens, &cfg, out)?;
    println!("{:<16} {:>8} {:>8} {:>8}", "stage", "in", "kept", "rejected");
    for s in &report.stats {
        println!("{:<16} {:>8} {:>8} {:>8}", s.stage, s.input_count, s.retained_count, s.rejected_count);
    }
    println!("retained {} of {} scripts -> {}", report.retained.len(), report.input_count, out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs, mode: SynthMode) -> Result<()> {
    let corpus: Vec<CorpusRecord> = read_jsonl(&a.corpus).with_context(|| a.corpus.display().to_string())?;
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
        None => SynthConfig::default(),
    };
    cfg.mode = mode;
    let validator = match &a.validator {
        Some(cmd) => Some(CommandValidator::new(cmd.clone())),
        None => CommandValidator::detect(),
    }
    .context("no syntax checker given and none of iverilog / verilator found")?;
    let goldens = a.goldens.as_deref().map(|g| GoldenSet::load(g, false)).transpose()?;
    let templates = match &a.templates {
        Some(d) => Templates::load_dir(d)?,
        None => Templates::default(),
    };
    let client = build_client(&a.endpoint, None)?;
    let tools = SynthTools {
        client: &client,
        validator: &validator as &dyn SyntaxValidator,
        goldens: goldens.as_ref(),
        templates,
        clock: Clock::system(),
    };
    let report = synthesize_dataset(&corpus, &tools, &cfg, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&report.stats)?);
    Ok(())
}

fn cmd_pack(
    dataset: &Path,
    tokenizer: &str,
    out: &Path,
    chunk: usize,
    mode: ModeArg,
    policy: PolicyArg,
    no_separators: bool,
) -> Result<()> {
    let triples: Vec<CotTriple> = read_jsonl(dataset).with_context(|| dataset.display().to_string())?;
    let tok = load_tokenizer(tokenizer)?;
    let mut opts = PackOptions::new(tok.special(Special::Pad));
    opts.chunk_len = chunk;
    opts.mode = match mode {
        ModeArg::Whole => PackMode::Whole,
        ModeArg::Spill => PackMode::Spill,
    };
    opts.policy = match policy {
        PolicyArg::NextFit => PackPolicy::NextFit,
        PolicyArg::FirstFit => PackPolicy::FirstFit,
    };
    let sep = if no_separators { Separators::None } else { Separators::Template };
    let meta = pack_dataset(&triples, tok.as_ref(), sep, &opts, out)?;
    println!("{}", serde_json::to_string_pretty(&meta)?);
    Ok(())
}

fn load_bench(args: &BenchArgs) -> Result<(Benchmark, ProblemSetVerifier)> {
    let bench = load_benchmark(&args.bench)?;
    let sim = match args.simulator {
        SimArg::Auto => SimVerifier::detect().context("no simulator found (install iverilog or verilator)")?,
        SimArg::Icarus => SimVerifier::icarus(),
        SimArg::Verilator if rtlreason::util::which("verilator") => SimVerifier::verilator("verilator"),
        SimArg::Verilator => SimVerifier::verilator("verilator-cli"),
    };
    let mut sim = sim.with_timeout(Duration::from_secs(args.sim_timeout));
    if let Some(j) = args.sim_jobs {
        sim = sim.with_max_jobs(j);
    }
    if args.check_goldens {
        let bad = golden_sanity(&bench, &sim)?;
        for (id, o) in &bad {
            eprintln!("golden of {id} does not pass: {} {}", o.verdict, o.diagnostics);
        }
        if !bad.is_empty() {
            bail!("{} golden(s) fail their own testbench", bad.len());
        }
    }
    let verifier = ProblemSetVerifier::new(&bench, sim);
    Ok((bench, verifier))
}

fn corrective(s: &ScalingArgs) -> Result<CorrectivePrompt> {
    let rules = match &s.rules {
        Some(p) => read_rules_file(p)?,
        None => RuleSet::default(),
    };
    Ok(CorrectivePrompt::new(rules.texts()))
}

fn scale_config(s: &ScalingArgs) -> ScaleConfig {
    ScaleConfig {
        max_iters: s.max_iters,
        limits: s.limits.clone(),
        temperature: s.temperature,
        ..ScaleConfig::default()
    }
}

fn cmd_scale(b: &BenchArgs, e: &EndpointArgs, s: &ScalingArgs, out: &Path, only: Option<&str>) -> Result<()> {
    let (bench, verifier) = load_bench(b)?;
    let client = build_client(e, Some(&bench))?;
    let prompt = corrective(s)?;
    let cfg = scale_config(s);
    let mut solved = 0;
    let mut ran = 0;
    for p in bench.problems.iter().filter(|p| only.is_none_or(|id| id == p.problem_id)) {
        let o = run_scaled(&p.problem_id, &p.spec_text, &client, &verifier, &prompt, &cfg)?;
        o.write_transcripts(&out.join(&p.problem_id))?;
        let verdicts: Vec<&str> = o.attempts.iter().map(|a| a.verdict.as_str()).collect();
        println!("{:<32} {:<14} passes={} reasoning_tokens={}", p.problem_id, o.final_verdict(), verdicts.join(">"), o.reasoning_tokens());
        ran += 1;
        solved += usize::from(o.correct());
    }
    if ran == 0 {
        bail!("no matching problems");
    }
    println!("solved {solved}/{ran}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    b: &BenchArgs,
    e: &EndpointArgs,
    s: &ScalingArgs,
    mode: EvalMode,
    n: u32,
    ks: Vec<u32>,
    seed: u64,
    transcripts: bool,
    out: &Path,
) -> Result<()> {
    let (bench, verifier) = load_bench(b)?;
    let client = build_client(e, Some(&bench))?;
    let mut cfg = EvalConfig {
        generator: Generator::Plain,
        n,
        ks,
        scale: scale_config(s),
        corrective: corrective(s)?,
        seed,
        write_transcripts: transcripts,
    };
    match mode {
        EvalMode::Curve => {
            for p in run_curve(&bench, &client, &verifier, &cfg, out)? {
                println!(
                    "{:<14} tokens={:>10.1} pass@1={:.4} pass_rate={:.4}",
                    p.variant, p.mean_reasoning_tokens, p.pass_at_1, p.pass_rate
                );
            }
        }
        EvalMode::Plain | EvalMode::Scaled => {
            if matches!(mode, EvalMode::Scaled) {
                cfg.generator = Generator::Scaled { max_iters: s.max_iters };
            }
            let report = run_benchmark(&bench, &client, &verifier, &cfg, out)?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
        }
    }
    Ok(())
}

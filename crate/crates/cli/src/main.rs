mod config;
mod steps;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mbct_core::analysis::{label_chain, run_experiment, AnalysisReport, FieldCorpus, KS_ALPHA};
use mbct_core::group::Digest32;
use mbct_core::ledger::{block_json, tx_json, Ledger};
use mbct_core::monero::{KeyQuad, WalletFile};
use mbct_core::sim::{run_session, NamedScenario, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use config::RunConfig;
use steps::{load_public, load_wallet, write_json, ReceiveArgs, SendArgs, StepReport};

/// Exit status when a receiver finds no authenticated session.
const EXIT_NO_SESSION: u8 = 3;
/// Exit status when a sender gives up waiting for feedback.
const EXIT_TIMED_OUT: u8 = 4;

#[derive(Parser)]
#[command(name = "mbct", version, about = "Covert messaging over a simulated Monero-style ledger")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct Common {
    /// Chain file.
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Private wallet file.
    #[arg(long)]
    wallet: Option<PathBuf>,
    /// Seed for every random choice of this run.
    #[arg(long)]
    seed: Option<u64>,
    /// none | random:P[:SEED] | seqs:A,B,.. | window:START..END
    #[arg(long)]
    drop_policy: Option<String>,
    /// Blocks without feedback before the sender gives up.
    #[arg(long)]
    timeout_blocks: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Create a wallet (view and spend key pairs).
    Keygen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Write the public half of a wallet.
    ExportPub {
        #[arg(long)]
        wallet: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Start or continue sending a message; produces one block per call.
    Send {
        #[command(flatten)]
        common: Common,
        /// Recipient public keys.
        #[arg(long)]
        to: Option<PathBuf>,
        /// Message file (needed to start a session).
        #[arg(long)]
        message: Option<PathBuf>,
        /// Session state file [default: <chain>.send.json].
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Scan the chain for sessions from the given senders and answer them.
    Receive {
        #[command(flatten)]
        common: Common,
        /// Sender public keys (repeatable).
        #[arg(long = "from", required = true)]
        from: Vec<PathBuf>,
        /// Where to write the message (a directory when there are several senders).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Session state file [default: <chain>.recv.json].
        #[arg(long)]
        state: Option<PathBuf>,
        /// Ignore blocks below this height.
        #[arg(long, default_value_t = 0)]
        from_height: u64,
    },
    /// KLD, CDF and KS concealment experiments.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Number of groups.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        groups: Option<u64>,
        /// Transactions per group and kind.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        group_size: Option<u64>,
        /// Sender whose sessions label the chain (chain-sourced analysis only).
        #[arg(long = "from")]
        from: Option<PathBuf>,
        /// Output directory for report.txt, report.json and rows.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run keygen, send and receive in one process under a named loss scenario.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// clean | drop-seq-N | drop-all-forever | random-P
        #[arg(long, default_value = "clean")]
        scenario: String,
        /// Message file [default: 100 seeded random bytes].
        #[arg(long)]
        message: Option<PathBuf>,
        /// Write the transcript here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect a chain file.
    Chain {
        #[arg(long)]
        chain: Option<PathBuf>,
        #[command(subcommand)]
        query: ChainQuery,
    },
}

#[derive(Subcommand)]
enum ChainQuery {
    Height,
    Block { height: u64 },
    Tx { id: String },
    /// Re-check linkage, ids and transaction validity.
    Verify,
    /// Dump the whole chain as JSON.
    Export,
}

fn apply(cfg: &mut RunConfig, common: &Common) {
    if let Some(c) = &common.chain {
        cfg.chain = Some(c.clone());
    }
    if let Some(w) = &common.wallet {
        cfg.wallet = Some(w.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(p) = &common.drop_policy {
        cfg.drop_policy = p.clone();
    }
    if let Some(t) = common.timeout_blocks {
        cfg.timeout_blocks = t;
    }
}

/// Explicit seed, or a fresh one that is reported so the run can be repeated.
fn seed_or_fresh(cfg: &RunConfig) -> u64 {
    cfg.seed.unwrap_or_else(|| {
        let s = rand::thread_rng().gen();
        eprintln!("seed: {s}");
        s
    })
}

fn print_step(report: &StepReport) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for r in &report.records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    writeln!(out, "{}", report.status)?;
    Ok(())
}

fn keygen(out: &Path, seed: Option<u64>, force: bool) -> Result<()> {
    if out.exists() && !force {
        bail!("{} already exists (use --force to overwrite)", out.display());
    }
    let mut rng = match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    };
    let quad = KeyQuad::generate(&mut rng);
    write_json(out, &quad.to_file())?;
    println!("view_pub  {}", quad.view_pub.to_hex());
    println!("spend_pub {}", quad.spend_pub.to_hex());
    Ok(())
}

fn write_report(report: &AnalysisReport, out: Option<&Path>) -> Result<()> {
    let checks = report_checks(report);
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            std::fs::write(dir.join("report.txt"), report.render_text() + &checks)?;
            std::fs::write(dir.join("rows.jsonl"), report.rows_jsonl())?;
            write_json(&dir.join("report.json"), report)?;
            print!("{checks}");
        }
        None => print!("{}{checks}", report.render_text()),
    }
    Ok(())
}

/// Threshold checks appended to every report.
fn report_checks(report: &AnalysisReport) -> String {
    let mut worst: f64 = 0.0;
    for g in 0..report.config.groups {
        for kind in mbct_core::analysis::FieldKind::ALL.into_iter().filter(|k| k.is_special()) {
            if let (Some(s), Some(n)) = (report.kld_of(g, kind), report.kld_of(g, kind.normal_counterpart())) {
                worst = worst.max(s / n);
            }
        }
    }
    let min_frac = report.ks.iter().map(|b| b.fraction_above_alpha).fold(1.0, f64::min);
    format!(
        "\n# Checks\nkld_ratio_max {worst:.3} (limit 3) {}\nks_fraction_min {min_frac:.3} (p > {KS_ALPHA}, limit 0.95) {}\n",
        if worst <= 3.0 { "ok" } else { "exceeded" },
        if min_frac >= 0.95 { "ok" } else { "below" },
    )
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Keygen { out, seed, force } => keygen(&out, seed.or(cfg.seed), force)?,
        Command::ExportPub { wallet, out } => {
            let quad = load_wallet(&wallet)?;
            write_json(&out, &WalletFile::public_only(&quad.public()))?;
        }
        Command::Send { common, to, message, state } => {
            apply(&mut cfg, &common);
            let chain = cfg.chain_path()?.to_path_buf();
            let wallet = load_wallet(cfg.wallet_path()?)?;
            let state = state.unwrap_or_else(|| steps::default_state_path(&chain, ".send.json"));
            let seed = if state.exists() { 0 } else { seed_or_fresh(&cfg) };
            let message = message
                .map(|p| std::fs::read(&p).with_context(|| format!("reading {}", p.display())))
                .transpose()?;
            let report = steps::send_step(SendArgs {
                chain: &chain,
                state: &state,
                wallet: &wallet,
                recipient: to.as_deref().map(load_public).transpose()?,
                message,
                session: cfg.session(),
                policy: cfg.policy()?,
                min_fee: cfg.min_fee,
                seed,
            })?;
            print_step(&report)?;
            if report.status["status"] == "timed_out" {
                eprintln!("{}", report.status["diagnostic"].as_str().unwrap_or("timed out"));
                return Ok(ExitCode::from(EXIT_TIMED_OUT));
            }
        }
        Command::Receive { common, from, out, state, from_height } => {
            apply(&mut cfg, &common);
            let chain = cfg.chain_path()?.to_path_buf();
            let wallet = load_wallet(cfg.wallet_path()?)?;
            let senders = from.iter().map(|p| load_public(p)).collect::<Result<Vec<_>>>()?;
            let state = state.unwrap_or_else(|| steps::default_state_path(&chain, ".recv.json"));
            let seed = if state.exists() { 0 } else { seed_or_fresh(&cfg) };
            let report = steps::receive_step(ReceiveArgs {
                chain: &chain,
                state: &state,
                wallet: &wallet,
                senders: &senders,
                session: cfg.session(),
                policy: cfg.policy()?,
                min_fee: cfg.min_fee,
                seed,
                from_height,
            })?;
            print_step(&report.step)?;
            if let Some(out) = out {
                if senders.len() == 1 {
                    if let Some(m) = &report.messages[0] {
                        std::fs::write(&out, m).with_context(|| format!("writing {}", out.display()))?;
                    }
                } else {
                    std::fs::create_dir_all(&out)?;
                    for (s, m) in senders.iter().zip(&report.messages) {
                        if let Some(m) = m {
                            std::fs::write(out.join(format!("{}.msg", &s.view_pub.to_hex()[..16])), m)?;
                        }
                    }
                }
            }
            if !report.any_session {
                eprintln!("no session: no authenticated AuthTx from the given senders");
                return Ok(ExitCode::from(EXIT_NO_SESSION));
            }
        }
        Command::Analyze { common, groups, group_size, from, out } => {
            apply(&mut cfg, &common);
            if let Some(g) = groups {
                cfg.analysis.groups = g as usize;
            }
            if let Some(s) = group_size {
                cfg.analysis.group_size = s as usize;
            }
            let seed = seed_or_fresh(&cfg);
            let experiment = cfg.experiment(seed);
            experiment.validate()?;
            let corpus = match &cfg.chain {
                Some(chain) => {
                    let ledger = Ledger::load_chain(chain, cfg.min_fee, Default::default())?;
                    let wallet = load_wallet(cfg.wallet_path()?)?;
                    let sender = load_public(from.as_deref().context("--from is required with --chain")?)?;
                    let labels = label_chain(ledger.blocks(), &wallet, &sender);
                    FieldCorpus::from_chain(ledger.blocks(), &labels, experiment.per_kind(), experiment.reference_size)?
                }
                None => FieldCorpus::generate(experiment.per_kind(), experiment.reference_size, seed)?,
            };
            let report = run_experiment(&corpus, &experiment)?;
            write_report(&report, out.as_deref())?;
        }
        Command::Simulate { common, scenario, message, out } => {
            apply(&mut cfg, &common);
            let scenario = NamedScenario::parse(&scenario).map_err(anyhow::Error::msg)?;
            let seed = seed_or_fresh(&cfg);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let alice = KeyQuad::generate(&mut rng);
            let bob = KeyQuad::generate(&mut rng);
            let message = match message {
                Some(p) => std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?,
                None => (0..100).map(|_| rng.gen()).collect(),
            };
            let mut ledger = match &cfg.chain {
                Some(p) => steps::open_chain(p, cfg.min_fee, Default::default(), true)?,
                None => Ledger::new(cfg.min_fee, Default::default()),
            };
            let sim = SimConfig {
                session: cfg.session(),
                policy: scenario.policy(ledger.next_ordinal(), seed),
                disable_drops_after_rounds: Some(10),
                ..SimConfig::default()
            };
            let outcome = run_session(&mut ledger, &alice, &bob, &message, &sim, seed)?;
            if let Some(p) = &cfg.chain {
                ledger.save_chain(p)?;
            }
            let status = serde_json::json!({
                "status": if outcome.integrity_holds(&message) { "integrity_ok" } else { "integrity_failed" },
                "sender_state": outcome.sender_state,
                "feedback_rounds": outcome.feedback_rounds,
                "resends": outcome.resends,
                "dropped": outcome.dropped,
                "blocks": outcome.blocks,
                "diagnostic": outcome.diagnostic,
            });
            let text = format!("{}{status}\n", outcome.transcript_jsonl());
            match &out {
                Some(p) => std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            if !outcome.integrity_holds(&message) {
                eprintln!("message integrity failed: {}", outcome.diagnostic.as_deref().unwrap_or("not delivered"));
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Chain { chain, query } => {
            if let Some(c) = chain {
                cfg.chain = Some(c);
            }
            let ledger = Ledger::load_chain(cfg.chain_path()?, cfg.min_fee, Default::default())?;
            match query {
                ChainQuery::Height => println!("{}", ledger.height()),
                ChainQuery::Block { height } => {
                    let b = ledger.block(height).with_context(|| format!("no block at height {height}"))?;
                    println!("{}", serde_json::to_string_pretty(&block_json(b))?);
                }
                ChainQuery::Tx { id } => {
                    let id = Digest32::from_hex(&id).context("transaction id must be 64 hex characters")?;
                    let (h, tx) = ledger.tx(&id).with_context(|| format!("transaction {id} is not on the chain"))?;
                    let mut v = tx_json(tx);
                    v["height"] = h.into();
                    println!("{}", serde_json::to_string_pretty(&v)?);
                }
                ChainQuery::Verify => {
                    ledger.verify_chain()?;
                    println!("ok: {} blocks", ledger.height());
                }
                ChainQuery::Export => println!("{}", serde_json::to_string_pretty(&ledger.export_json())?),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

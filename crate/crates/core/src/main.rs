use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use flowspace::analysis::{self, behavioral_diff, check_congruence, detect_loops, FlowMod, FlowModOp};
use flowspace::casestudy::{self, CaseStudyConfig};
use flowspace::headers::Header;
use flowspace::properties::run_axioms;
use flowspace::random::{AppGen, Gen, DEFAULT_SEED};
use flowspace::scenario::Scenario;
use flowspace::tables::FlowRule;
use flowspace::transforms::{apply_transform, chain};
use flowspace::{Error, Result};

#[derive(Parser)]
#[command(name = "flowspace", version, about = "Flow-table algebra checks for OpenFlow control applications")]
struct Cli {
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Op {
    Add,
    Delete,
    Modify,
}

#[derive(Subcommand)]
enum Command {
    /// Check the table vector-space laws on random tables.
    Axioms {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
    },
    /// Decide whether two chains have the same composite.
    Congruence {
        file: PathBuf,
        left: String,
        right: String,
        /// Random scenarios searched for a behavioral witness when the
        /// chains differ.
        #[arg(long, default_value_t = 200)]
        scenarios: usize,
    },
    /// Apply a chain's composite to the scenario NIB.
    Apply {
        file: PathBuf,
        chain: String,
        /// Header as JSON; defaults to the scenario's queries for the chain.
        #[arg(long)]
        header: Option<String>,
    },
    /// Report additive-inverse rule pairs.
    Loops { file: PathBuf },
    /// Evaluate a candidate FLOW_MOD without committing it.
    Whatif {
        file: PathBuf,
        #[arg(long, value_enum)]
        op: Op,
        #[arg(long)]
        switch: usize,
        /// Rule as JSON: {"match", "out_port", "ttl", "action"}.
        #[arg(long)]
        rule: String,
        /// Replacement rule for `--op modify`.
        #[arg(long)]
        new_rule: Option<String>,
    },
    /// Run the bundled IDS / load-balancer chains.
    Casestudy {
        /// Print the bundled scenario file instead of the report.
        #[arg(long)]
        emit_scenario: bool,
    },
}

/// Rendered output plus exit status.
struct Outcome {
    text: String,
    json: serde_json::Value,
    negative: bool,
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn parse_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Scenario(format!("bad {what}: {e}")))
}

fn cmd_axioms(seed: u64, cases: usize) -> Outcome {
    let report = run_axioms(seed, cases);
    let mut text = format!("seed {seed}, {cases} cases per law\n");
    for r in &report.results {
        let _ = writeln!(text, "{:<26} {:<22} {:>6}/{:<6} {}", r.name, r.status.label(), r.violations, r.cases, r.law);
        if let Some(ce) = &r.first_counterexample {
            let _ = writeln!(text, "  counterexample: {ce}");
        }
    }
    Outcome { text, json: to_value(&report), negative: !report.all_laws_hold() }
}

fn cmd_congruence(file: &Path, left: &str, right: &str, scenarios: usize, seed: u64) -> Result<Outcome> {
    let s = Scenario::load(file)?;
    let (a, b) = (s.chain(left)?, s.chain(right)?);
    let report = check_congruence(a, b)?;
    let negative = report.verdict == analysis::Verdict::NotCongruent;
    let witness = if negative {
        let gen = AppGen::new(s.nib.topology());
        let cases = gen.scenarios(&mut Gen::new(seed), scenarios);
        behavioral_diff(a, b, &cases)?.into_iter().next()
    } else {
        None
    };
    let mut text = report.to_string();
    match &witness {
        Some(w) => {
            let _ = writeln!(text, "witness: scenario {} of {scenarios} (seed {seed})", w.scenario);
            let _ = writeln!(text, "  header: {}", serde_json::to_string(&w.header).expect("serializes"));
            let _ = writeln!(text, "  left:  {}", serde_json::to_string(&w.left).expect("serializes"));
            let _ = writeln!(text, "  right: {}", serde_json::to_string(&w.right).expect("serializes"));
        }
        None if negative => {
            let _ = writeln!(text, "witness: none in {scenarios} random scenarios (seed {seed})");
        }
        None => {}
    }
    let mut json = to_value(&report);
    json["witness"] = to_value(&witness);
    Ok(Outcome { text, json, negative })
}

fn cmd_apply(file: &Path, chain_name: &str, header: Option<&str>) -> Result<Outcome> {
    let s = Scenario::load(file)?;
    let composite = chain(s.chain(chain_name)?)?;
    let headers: Vec<Header> = match header {
        Some(h) => vec![parse_json("header", h)?],
        None => s.queries.iter().filter(|q| q.chain == chain_name).map(|q| q.header).collect(),
    };
    if headers.is_empty() {
        return Err(Error::Scenario(format!("no --header given and no queries for chain `{chain_name}`")));
    }
    let mut text = String::new();
    let mut results = Vec::new();
    for h in headers {
        let nib = apply_transform(&composite, &s.nib, &h)?;
        let _ = writeln!(text, "header: {}", serde_json::to_string(&h).expect("serializes"));
        for (i, t) in nib.tables().iter().enumerate() {
            let _ = writeln!(text, "switch {i}:");
            let _ = write!(text, "{t}");
            if t.is_empty() {
                text.push('\n');
            }
        }
        results.push(json!({ "header": h, "tables": nib.tables() }));
    }
    Ok(Outcome { text, json: json!({ "chain": chain_name, "results": results }), negative: false })
}

fn cmd_loops(file: &Path) -> Result<Outcome> {
    let s = Scenario::load(file)?;
    let found = detect_loops(&s.nib);
    let mut text = format!("loops: {}\n", found.len());
    for l in &found {
        let _ = writeln!(text, "  {l}");
    }
    Ok(Outcome { text, json: json!({ "loops": found }), negative: !found.is_empty() })
}

fn cmd_whatif(file: &Path, op: Op, switch: usize, rule: &str, new_rule: Option<&str>) -> Result<Outcome> {
    let s = Scenario::load(file)?;
    let rule: FlowRule = parse_json("rule", rule)?;
    let op = match (op, new_rule) {
        (Op::Add, _) => FlowModOp::Add { rule },
        (Op::Delete, _) => FlowModOp::Delete { rule },
        (Op::Modify, Some(n)) => FlowModOp::Modify { old: rule, new: parse_json("new rule", n)? },
        (Op::Modify, None) => return Err(Error::Scenario("--op modify needs --new-rule".into())),
    };
    let report = analysis::what_if(&s.nib, &FlowMod { switch, op })?;
    Ok(Outcome { text: report.to_string(), json: to_value(&report), negative: false })
}

fn cmd_casestudy(seed: u64, emit_scenario: bool) -> Result<Outcome> {
    let cfg = CaseStudyConfig::default();
    let file = cfg.scenario_file()?;
    if emit_scenario {
        return Ok(Outcome { text: file.to_json(), json: to_value(&file), negative: false });
    }
    let (x, y) = (casestudy::build_x_chain(&cfg)?, casestudy::build_y_chain(&cfg)?);
    let report = check_congruence(&x, &y)?;
    let (busy, fresh) = cfg.sample_headers();
    let nib = Scenario::from_file(file)?.nib;
    let mut cases = vec![(nib.clone(), busy), (nib, fresh)];
    cases.extend(AppGen::new(&cfg.topology()).scenarios(&mut Gen::new(seed), 200));
    let diffs = behavioral_diff(&x, &y, &cases)?;
    let mut text = format!("IDS threshold {}, servers {} and {}\n", cfg.nu, cfg.servers.0, cfg.servers.1);
    text.push_str(&report.to_string());
    let _ = writeln!(text, "behavioral differences: {} of {} scenarios", diffs.len(), cases.len());
    if let Some(d) = diffs.first() {
        let _ = writeln!(text, "  first: scenario {} slot {:?}", d.scenario, d.slot);
    }
    let json = json!({ "config": cfg, "report": report, "differences": diffs.len(), "scenarios": cases.len(),
        "first_difference": diffs.first() });
    Ok(Outcome { text, json, negative: false })
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Axioms { cases } => Ok(cmd_axioms(cli.seed, *cases)),
        Command::Congruence { file, left, right, scenarios } => cmd_congruence(file, left, right, *scenarios, cli.seed),
        Command::Apply { file, chain, header } => cmd_apply(file, chain, header.as_deref()),
        Command::Loops { file } => cmd_loops(file),
        Command::Whatif { file, op, switch, rule, new_rule } => {
            cmd_whatif(file, *op, *switch, rule, new_rule.as_deref())
        }
        Command::Casestudy { emit_scenario } => cmd_casestudy(cli.seed, *emit_scenario),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            match cli.format {
                Format::Text => print!("{}", out.text),
                Format::Json => println!("{}", serde_json::to_string_pretty(&out.json).expect("serializes")),
            }
            ExitCode::from(u8::from(out.negative))
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

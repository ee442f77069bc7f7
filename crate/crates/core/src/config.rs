//! The experiment document format.
//!
//! A flat, sectioned key=value text (INI-like) that any language can parse
//! without a library. Grammar:
//!
//! ```text
//! # comment (also ';')
//! [experiment]
//! name    = push-pull-demo     # required, nonempty
//! command = run                # run | spectral | bounds | verify
//! seed    = 42                 # required; no wall-clock defaults
//! samples = 1000               # spectral only (default 1000)
//! trials  = 10000              # verify only (default 10000)
//!
//! [topology]                   # repeatable for spectral/bounds grids
//! kind = hsl                   # hsl | el_local | el_oracle |
//! n_s  = 100                   #   erdos_renyi | torus | fedavg_star
//! n_h  = 5
//! b_hs = 2
//! b_hh = 2
//! b_sh = 2
//!
//! [training]                   # run only
//! rounds      = 500
//! local_steps = 3
//! batch_size  = 64
//! step_size   = 0.05           # positive real, or "derived"
//! eval_every  = 10             # optional, default 1
//! x0          = 0.0            # optional initial coordinate value
//!
//! [objective]                  # run only
//! kind = quadratic             # quadratic | logistic
//! dim = 10
//! spread = 0.5
//! # logistic instead takes: samples, test_samples, dim, separation, alpha
//!
//! [output]                     # optional
//! dir = out
//! ```
//!
//! Unknown sections and unknown keys are errors naming the offender. All
//! topology invariants are enforced at parse time. `serialize_config` emits
//! a canonical form; parse -> serialize -> parse yields an equal spec.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::topology::TopologyConfig;
use crate::{Error, Result};

pub const DEFAULT_SPECTRAL_SAMPLES: usize = 1000;
pub const DEFAULT_VERIFY_TRIALS: usize = 10_000;
pub const DEFAULT_OUTPUT_DIR: &str = "out";

/// What the experiment does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Spectral,
    Bounds,
    Verify,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Spectral => "spectral",
            Command::Bounds => "bounds",
            Command::Verify => "verify",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        match s {
            "run" => Some(Command::Run),
            "spectral" => Some(Command::Spectral),
            "bounds" => Some(Command::Bounds),
            "verify" => Some(Command::Verify),
            _ => None,
        }
    }
}

/// Fixed step size or the closed-form choice derived from the problem
/// constants and contraction factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSizeSpec {
    Fixed(f64),
    Derived,
}

/// The `[training]` block.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBlock {
    pub rounds: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    pub step_size: StepSizeSpec,
    pub eval_every: usize,
    pub x0: f64,
}

/// The `[objective]` block.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveBlock {
    /// Least squares on a shared diagonal design with per-node targets
    /// scattered by `spread`.
    Quadratic { dim: usize, spread: f64 },
    /// Binary logistic regression on a two-class Gaussian mixture split
    /// across nodes by a Dirichlet(alpha) partition.
    Logistic {
        samples: usize,
        test_samples: usize,
        dim: usize,
        separation: f64,
        alpha: f64,
    },
}

/// One fully validated experiment document.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub command: Command,
    pub seed: u64,
    pub spectral_samples: usize,
    pub verify_trials: usize,
    pub topologies: Vec<TopologyConfig>,
    pub training: Option<TrainingBlock>,
    pub objective: Option<ObjectiveBlock>,
    pub output_dir: PathBuf,
}

// ---------------------------------------------------------------------------
// parsing

/// One raw section: ordered key/value pairs plus the line each key came
/// from, for error locations.
#[derive(Debug, Default)]
struct RawSection {
    line: usize,
    entries: BTreeMap<String, (String, usize)>,
}

impl RawSection {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn reject_leftovers(&self, section: &str) -> Result<()> {
        if let Some((key, (_, line))) = self.entries.iter().next() {
            return Err(Error::parse(
                format!("line {line}"),
                format!("unknown key \"{key}\" in [{section}]"),
            ));
        }
        Ok(())
    }
}

fn split_sections(text: &str) -> Result<Vec<(String, RawSection)>> {
    let mut sections: Vec<(String, RawSection)> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find(['#', ';']) {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| {
                Error::parse(format!("line {line_no}"), "unterminated section header")
            })?;
            sections.push((
                name.trim().to_string(),
                RawSection { line: line_no, entries: BTreeMap::new() },
            ));
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse(
                format!("line {line_no}"),
                format!("expected \"key = value\", got \"{line}\""),
            )
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::parse(format!("line {line_no}"), "empty key"));
        }
        let section = sections.last_mut().ok_or_else(|| {
            Error::parse(
                format!("line {line_no}"),
                format!("key \"{key}\" appears before any [section] header"),
            )
        })?;
        if let Some((_, first)) = section.1.entries.get(&key) {
            return Err(Error::parse(
                format!("line {line_no}"),
                format!("key \"{key}\" already set on line {first}"),
            ));
        }
        section.1.entries.insert(key, (value, line_no));
    }
    Ok(sections)
}

fn loc(section: &str, key: &str) -> String {
    format!("[{section}] {key}")
}

fn required(section: &mut RawSection, name: &str, key: &str) -> Result<(String, usize)> {
    section.take(key).ok_or_else(|| {
        Error::parse(loc(name, key), "required key is missing")
    })
}

fn parse_usize(section: &str, key: &str, value: &str) -> Result<usize> {
    value.parse::<usize>().map_err(|_| {
        Error::parse(loc(section, key), format!("expected a nonnegative integer, got \"{value}\""))
    })
}

fn parse_u64(section: &str, key: &str, value: &str) -> Result<u64> {
    value.parse::<u64>().map_err(|_| {
        Error::parse(loc(section, key), format!("expected a 64-bit unsigned integer, got \"{value}\""))
    })
}

fn parse_f64(section: &str, key: &str, value: &str) -> Result<f64> {
    let v = value.parse::<f64>().map_err(|_| {
        Error::parse(loc(section, key), format!("expected a real number, got \"{value}\""))
    })?;
    if !v.is_finite() {
        return Err(Error::parse(loc(section, key), "value must be finite"));
    }
    Ok(v)
}

fn parse_topology(mut raw: RawSection) -> Result<TopologyConfig> {
    const SECTION: &str = "topology";
    let (kind, _) = required(&mut raw, SECTION, "kind")?;
    let mut num = |key: &str| -> Result<usize> {
        let (v, _) = required(&mut raw, SECTION, key)?;
        parse_usize(SECTION, key, &v)
    };
    let cfg = match kind.as_str() {
        "hsl" => TopologyConfig::Hsl {
            n_s: num("n_s")?,
            n_h: num("n_h")?,
            b_hs: num("b_hs")?,
            b_hh: num("b_hh")?,
            b_sh: num("b_sh")?,
        },
        "el_local" => TopologyConfig::ElLocal { n_s: num("n_s")?, k: num("k")? },
        "el_oracle" => TopologyConfig::ElOracle { n_s: num("n_s")?, k: num("k")? },
        "erdos_renyi" => {
            let n_s = num("n_s")?;
            let (v, _) = required(&mut raw, SECTION, "p")?;
            TopologyConfig::ErdosRenyi { n_s, p: parse_f64(SECTION, "p", &v)? }
        }
        "torus" => TopologyConfig::Torus { n_s: num("n_s")? },
        "fedavg_star" => TopologyConfig::FedavgStar { n_s: num("n_s")? },
        other => {
            return Err(Error::parse(
                loc(SECTION, "kind"),
                format!(
                    "unknown kind \"{other}\" (expected hsl, el_local, el_oracle, erdos_renyi, torus, or fedavg_star)"
                ),
            ))
        }
    };
    raw.reject_leftovers(SECTION)?;
    cfg.validate()
        .map_err(|e| Error::parse(format!("[{SECTION}]"), e.to_string()))?;
    Ok(cfg)
}

fn parse_training(mut raw: RawSection) -> Result<TrainingBlock> {
    const SECTION: &str = "training";
    let (rounds, _) = required(&mut raw, SECTION, "rounds")?;
    let (local_steps, _) = required(&mut raw, SECTION, "local_steps")?;
    let (batch_size, _) = required(&mut raw, SECTION, "batch_size")?;
    let (step_size, _) = required(&mut raw, SECTION, "step_size")?;
    let step_size = if step_size == "derived" {
        StepSizeSpec::Derived
    } else {
        let v = parse_f64(SECTION, "step_size", &step_size)?;
        if v <= 0.0 {
            return Err(Error::parse(
                loc(SECTION, "step_size"),
                "step size must be positive (or \"derived\")",
            ));
        }
        StepSizeSpec::Fixed(v)
    };
    let eval_every = match raw.take("eval_every") {
        Some((v, _)) => parse_usize(SECTION, "eval_every", &v)?,
        None => 1,
    };
    let x0 = match raw.take("x0") {
        Some((v, _)) => parse_f64(SECTION, "x0", &v)?,
        None => 0.0,
    };
    raw.reject_leftovers(SECTION)?;
    let block = TrainingBlock {
        rounds: parse_usize(SECTION, "rounds", &rounds)?,
        local_steps: parse_usize(SECTION, "local_steps", &local_steps)?,
        batch_size: parse_usize(SECTION, "batch_size", &batch_size)?,
        step_size,
        eval_every,
        x0,
    };
    if block.rounds == 0 {
        return Err(Error::parse(loc(SECTION, "rounds"), "must be >= 1"));
    }
    if block.local_steps == 0 {
        return Err(Error::parse(loc(SECTION, "local_steps"), "must be >= 1"));
    }
    if block.batch_size == 0 {
        return Err(Error::parse(loc(SECTION, "batch_size"), "must be >= 1"));
    }
    if block.eval_every == 0 {
        return Err(Error::parse(loc(SECTION, "eval_every"), "must be >= 1"));
    }
    Ok(block)
}

fn parse_objective(mut raw: RawSection) -> Result<ObjectiveBlock> {
    const SECTION: &str = "objective";
    let (kind, _) = required(&mut raw, SECTION, "kind")?;
    let block = match kind.as_str() {
        "quadratic" => {
            let (dim, _) = required(&mut raw, SECTION, "dim")?;
            let (spread, _) = required(&mut raw, SECTION, "spread")?;
            ObjectiveBlock::Quadratic {
                dim: parse_usize(SECTION, "dim", &dim)?,
                spread: parse_f64(SECTION, "spread", &spread)?,
            }
        }
        "logistic" => {
            let (samples, _) = required(&mut raw, SECTION, "samples")?;
            let (test_samples, _) = required(&mut raw, SECTION, "test_samples")?;
            let (dim, _) = required(&mut raw, SECTION, "dim")?;
            let (separation, _) = required(&mut raw, SECTION, "separation")?;
            let (alpha, _) = required(&mut raw, SECTION, "alpha")?;
            ObjectiveBlock::Logistic {
                samples: parse_usize(SECTION, "samples", &samples)?,
                test_samples: parse_usize(SECTION, "test_samples", &test_samples)?,
                dim: parse_usize(SECTION, "dim", &dim)?,
                separation: parse_f64(SECTION, "separation", &separation)?,
                alpha: parse_f64(SECTION, "alpha", &alpha)?,
            }
        }
        other => {
            return Err(Error::parse(
                loc(SECTION, "kind"),
                format!("unknown kind \"{other}\" (expected quadratic or logistic)"),
            ))
        }
    };
    raw.reject_leftovers(SECTION)?;
    match &block {
        ObjectiveBlock::Quadratic { dim, spread } => {
            if *dim == 0 {
                return Err(Error::parse(loc(SECTION, "dim"), "must be >= 1"));
            }
            if *spread < 0.0 {
                return Err(Error::parse(loc(SECTION, "spread"), "must be >= 0"));
            }
        }
        ObjectiveBlock::Logistic { samples, test_samples, dim, separation, alpha } => {
            if *samples == 0 {
                return Err(Error::parse(loc(SECTION, "samples"), "must be >= 1"));
            }
            if *test_samples == 0 {
                return Err(Error::parse(loc(SECTION, "test_samples"), "must be >= 1"));
            }
            if *dim == 0 || *dim > 50 {
                return Err(Error::parse(loc(SECTION, "dim"), "must be in 1..=50"));
            }
            if *separation <= 0.0 {
                return Err(Error::parse(loc(SECTION, "separation"), "must be > 0"));
            }
            if *alpha <= 0.0 {
                return Err(Error::parse(loc(SECTION, "alpha"), "must be > 0"));
            }
        }
    }
    Ok(block)
}

/// Parses and fully validates an experiment document.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let mut experiment: Option<RawSection> = None;
    let mut topologies: Vec<RawSection> = Vec::new();
    let mut training: Option<RawSection> = None;
    let mut objective: Option<RawSection> = None;
    let mut output: Option<RawSection> = None;

    for (name, raw) in split_sections(text)? {
        match name.as_str() {
            "experiment" => assign_once(&mut experiment, raw, "experiment")?,
            "topology" => topologies.push(raw),
            "training" => assign_once(&mut training, raw, "training")?,
            "objective" => assign_once(&mut objective, raw, "objective")?,
            "output" => assign_once(&mut output, raw, "output")?,
            other => {
                return Err(Error::parse(
                    format!("line {}", raw.line),
                    format!(
                        "unknown section [{other}] (expected experiment, topology, training, objective, or output)"
                    ),
                ))
            }
        }
    }

    const SECTION: &str = "experiment";
    let mut exp = experiment
        .ok_or_else(|| Error::parse("[experiment]", "section is missing"))?;
    let (name, _) = required(&mut exp, SECTION, "name")?;
    if name.is_empty() {
        return Err(Error::parse(loc(SECTION, "name"), "must be nonempty"));
    }
    let (command, _) = required(&mut exp, SECTION, "command")?;
    let command = Command::parse(&command).ok_or_else(|| {
        Error::parse(
            loc(SECTION, "command"),
            format!("unknown command \"{command}\" (expected run, spectral, bounds, or verify)"),
        )
    })?;
    let (seed, _) = required(&mut exp, SECTION, "seed")?;
    let seed = parse_u64(SECTION, "seed", &seed)?;
    let spectral_samples = match exp.take("samples") {
        Some((v, _)) => {
            if command != Command::Spectral {
                return Err(Error::parse(
                    loc(SECTION, "samples"),
                    "only used by command spectral",
                ));
            }
            let n = parse_usize(SECTION, "samples", &v)?;
            if n == 0 {
                return Err(Error::parse(loc(SECTION, "samples"), "must be >= 1"));
            }
            n
        }
        None => DEFAULT_SPECTRAL_SAMPLES,
    };
    let verify_trials = match exp.take("trials") {
        Some((v, _)) => {
            if command != Command::Verify {
                return Err(Error::parse(
                    loc(SECTION, "trials"),
                    "only used by command verify",
                ));
            }
            let n = parse_usize(SECTION, "trials", &v)?;
            if n < 100 {
                return Err(Error::parse(loc(SECTION, "trials"), "must be >= 100"));
            }
            n
        }
        None => DEFAULT_VERIFY_TRIALS,
    };
    exp.reject_leftovers(SECTION)?;

    let output_dir = match output {
        Some(mut raw) => {
            let (dir, _) = required(&mut raw, "output", "dir")?;
            raw.reject_leftovers("output")?;
            if dir.is_empty() {
                return Err(Error::parse(loc("output", "dir"), "must be nonempty"));
            }
            PathBuf::from(dir)
        }
        None => PathBuf::from(DEFAULT_OUTPUT_DIR),
    };

    let topologies: Vec<TopologyConfig> = topologies
        .into_iter()
        .map(parse_topology)
        .collect::<Result<_>>()?;
    let training = training.map(parse_training).transpose()?;
    let objective = objective.map(parse_objective).transpose()?;

    // block presence per command
    match command {
        Command::Run => {
            if topologies.len() != 1 {
                return Err(Error::parse(
                    "[topology]",
                    format!("command run needs exactly one topology section, found {}", topologies.len()),
                ));
            }
            if training.is_none() {
                return Err(Error::parse("[training]", "command run requires this section"));
            }
            if objective.is_none() {
                return Err(Error::parse("[objective]", "command run requires this section"));
            }
        }
        Command::Spectral | Command::Bounds => {
            if topologies.is_empty() {
                return Err(Error::parse(
                    "[topology]",
                    format!("command {} needs at least one topology section", command.as_str()),
                ));
            }
            reject_block(&training, "training", command)?;
            reject_block(&objective, "objective", command)?;
        }
        Command::Verify => {
            if !topologies.is_empty() {
                return Err(Error::parse(
                    "[topology]",
                    "command verify runs the built-in claim grid; remove topology sections",
                ));
            }
            reject_block(&training, "training", command)?;
            reject_block(&objective, "objective", command)?;
        }
    }

    Ok(ExperimentSpec {
        name,
        command,
        seed,
        spectral_samples,
        verify_trials,
        topologies,
        training,
        objective,
        output_dir,
    })
}

fn assign_once(slot: &mut Option<RawSection>, raw: RawSection, name: &str) -> Result<()> {
    if slot.is_some() {
        return Err(Error::parse(
            format!("line {}", raw.line),
            format!("duplicate [{name}] section"),
        ));
    }
    *slot = Some(raw);
    Ok(())
}

fn reject_block<T>(block: &Option<T>, name: &str, command: Command) -> Result<()> {
    if block.is_some() {
        return Err(Error::parse(
            format!("[{name}]"),
            format!("section not used by command {}", command.as_str()),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// canonical serialization

fn fmt_f64(v: f64) -> String {
    // shortest exact round-trip form
    format!("{v:?}")
}

/// Emits the canonical document for a spec. Parsing the result yields an
/// equal spec.
pub fn serialize_config(spec: &ExperimentSpec) -> String {
    let mut out = String::new();
    out.push_str("[experiment]\n");
    out.push_str(&format!("name = {}\n", spec.name));
    out.push_str(&format!("command = {}\n", spec.command.as_str()));
    out.push_str(&format!("seed = {}\n", spec.seed));
    if spec.command == Command::Spectral {
        out.push_str(&format!("samples = {}\n", spec.spectral_samples));
    }
    if spec.command == Command::Verify {
        out.push_str(&format!("trials = {}\n", spec.verify_trials));
    }
    for t in &spec.topologies {
        out.push_str("\n[topology]\n");
        out.push_str(&format!("kind = {}\n", t.kind_str()));
        match *t {
            TopologyConfig::Hsl { n_s, n_h, b_hs, b_hh, b_sh } => {
                out.push_str(&format!(
                    "n_s = {n_s}\nn_h = {n_h}\nb_hs = {b_hs}\nb_hh = {b_hh}\nb_sh = {b_sh}\n"
                ));
            }
            TopologyConfig::ElLocal { n_s, k } | TopologyConfig::ElOracle { n_s, k } => {
                out.push_str(&format!("n_s = {n_s}\nk = {k}\n"));
            }
            TopologyConfig::ErdosRenyi { n_s, p } => {
                out.push_str(&format!("n_s = {n_s}\np = {}\n", fmt_f64(p)));
            }
            TopologyConfig::Torus { n_s } | TopologyConfig::FedavgStar { n_s } => {
                out.push_str(&format!("n_s = {n_s}\n"));
            }
        }
    }
    if let Some(t) = &spec.training {
        out.push_str("\n[training]\n");
        out.push_str(&format!("rounds = {}\n", t.rounds));
        out.push_str(&format!("local_steps = {}\n", t.local_steps));
        out.push_str(&format!("batch_size = {}\n", t.batch_size));
        match t.step_size {
            StepSizeSpec::Fixed(v) => out.push_str(&format!("step_size = {}\n", fmt_f64(v))),
            StepSizeSpec::Derived => out.push_str("step_size = derived\n"),
        }
        out.push_str(&format!("eval_every = {}\n", t.eval_every));
        out.push_str(&format!("x0 = {}\n", fmt_f64(t.x0)));
    }
    if let Some(o) = &spec.objective {
        out.push_str("\n[objective]\n");
        match o {
            ObjectiveBlock::Quadratic { dim, spread } => {
                out.push_str("kind = quadratic\n");
                out.push_str(&format!("dim = {dim}\n"));
                out.push_str(&format!("spread = {}\n", fmt_f64(*spread)));
            }
            ObjectiveBlock::Logistic { samples, test_samples, dim, separation, alpha } => {
                out.push_str("kind = logistic\n");
                out.push_str(&format!("samples = {samples}\n"));
                out.push_str(&format!("test_samples = {test_samples}\n"));
                out.push_str(&format!("dim = {dim}\n"));
                out.push_str(&format!("separation = {}\n", fmt_f64(*separation)));
                out.push_str(&format!("alpha = {}\n", fmt_f64(*alpha)));
            }
        }
    }
    out.push_str("\n[output]\n");
    out.push_str(&format!("dir = {}\n", spec.output_dir.display()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_RUN: &str = "\
[experiment]
name = minimal
command = run
seed = 1

[topology]
kind = hsl
n_s = 100
n_h = 5
b_hs = 2
b_hh = 2
b_sh = 2

[training]
rounds = 500
local_steps = 3
batch_size = 64
step_size = 0.05

[objective]
kind = quadratic
dim = 10
spread = 0.5
";

    #[test]
    fn minimal_run_doc_parses_with_correct_edges() {
        let spec = parse_config(MINIMAL_RUN).unwrap();
        assert_eq!(spec.name, "minimal");
        assert_eq!(spec.command, Command::Run);
        assert_eq!(spec.seed, 1);
        assert_eq!(spec.topologies.len(), 1);
        assert_eq!(spec.topologies[0].total_edges(), 220);
        let t = spec.training.as_ref().unwrap();
        assert_eq!(t.rounds, 500);
        assert_eq!(t.eval_every, 1);
        assert_eq!(t.x0, 0.0);
        assert_eq!(t.step_size, StepSizeSpec::Fixed(0.05));
        assert_eq!(spec.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn invalid_budget_names_the_violated_bound() {
        let doc = MINIMAL_RUN.replace("b_hh = 2", "b_hh = 5");
        let err = parse_config(&doc).unwrap_err().to_string();
        assert!(err.contains("b_hh"), "{err}");
        assert!(err.contains("n_h - 1"), "{err}");
    }

    #[test]
    fn missing_seed_is_an_error() {
        let doc = MINIMAL_RUN.replace("seed = 1\n", "");
        let err = parse_config(&doc).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
        assert!(err.contains("missing"), "{err}");
    }

    #[test]
    fn unknown_key_and_section_are_named() {
        let doc = MINIMAL_RUN.replace("spread = 0.5", "spread = 0.5\nnoise = 1");
        let err = parse_config(&doc).unwrap_err().to_string();
        assert!(err.contains("noise"), "{err}");

        let doc = format!("{MINIMAL_RUN}\n[plotting]\nstyle = x\n");
        let err = parse_config(&doc).unwrap_err().to_string();
        assert!(err.contains("plotting"), "{err}");
    }

    #[test]
    fn duplicate_key_and_bad_number_are_located() {
        let doc = MINIMAL_RUN.replace("seed = 1", "seed = 1\nseed = 2");
        let err = parse_config(&doc).unwrap_err().to_string();
        assert!(err.contains("already set"), "{err}");

        let doc = MINIMAL_RUN.replace("n_s = 100", "n_s = many");
        let err = parse_config(&doc).unwrap_err().to_string();
        assert!(err.contains("nonnegative integer"), "{err}");
        assert!(err.contains("n_s"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let doc = MINIMAL_RUN.replace(
            "[training]",
            "; comment line\n\n# another\n[training]   # trailing",
        );
        assert!(parse_config(&doc).is_ok());
    }

    #[test]
    fn derived_step_size_and_logistic_block_parse() {
        let doc = MINIMAL_RUN
            .replace("step_size = 0.05", "step_size = derived")
            .replace(
                "kind = quadratic\ndim = 10\nspread = 0.5",
                "kind = logistic\nsamples = 2000\ntest_samples = 500\ndim = 5\nseparation = 2.0\nalpha = 1.0",
            );
        let spec = parse_config(&doc).unwrap();
        assert_eq!(spec.training.unwrap().step_size, StepSizeSpec::Derived);
        match spec.objective.unwrap() {
            ObjectiveBlock::Logistic { samples, alpha, .. } => {
                assert_eq!(samples, 2000);
                assert_eq!(alpha, 1.0);
            }
            other => panic!("wrong objective: {other:?}"),
        }
    }

    #[test]
    fn grid_docs_take_many_topologies() {
        let doc = "\
[experiment]
name = sweep
command = bounds
seed = 7

[topology]
kind = hsl
n_s = 100
n_h = 5
b_hs = 2
b_hh = 2
b_sh = 2

[topology]
kind = el_local
n_s = 100
k = 4

[topology]
kind = el_local
n_s = 100
k = 10
";
        let spec = parse_config(doc).unwrap();
        assert_eq!(spec.topologies.len(), 3);
        assert_eq!(spec.topologies[1].total_edges(), 400);
        assert_eq!(spec.topologies[2].total_edges(), 1000);
    }

    #[test]
    fn run_rejects_topology_grids_and_verify_rejects_topologies() {
        let doc = format!("{MINIMAL_RUN}\n[topology]\nkind = torus\nn_s = 16\n");
        let err = parse_config(&doc).unwrap_err().to_string();
        assert!(err.contains("exactly one topology"), "{err}");

        let doc = "\
[experiment]
name = v
command = verify
seed = 3

[topology]
kind = torus
n_s = 16
";
        let err = parse_config(doc).unwrap_err().to_string();
        assert!(err.contains("built-in"), "{err}");
    }

    #[test]
    fn spectral_rejects_training_block() {
        let doc = "\
[experiment]
name = s
command = spectral
seed = 3
samples = 200

[topology]
kind = torus
n_s = 16

[training]
rounds = 10
local_steps = 1
batch_size = 1
step_size = 0.1
";
        let err = parse_config(doc).unwrap_err().to_string();
        assert!(err.contains("training"), "{err}");
        assert!(err.contains("not used"), "{err}");
    }

    #[test]
    fn parse_serialize_parse_round_trips() {
        let docs = [
            MINIMAL_RUN.to_string(),
            "\
[experiment]
name = gaps
command = spectral
seed = 99
samples = 250

[topology]
kind = erdos_renyi
n_s = 50
p = 0.125

[topology]
kind = fedavg_star
n_s = 50

[output]
dir = results/gaps
"
            .to_string(),
            "\
[experiment]
name = claims
command = verify
seed = 5
trials = 500
"
            .to_string(),
        ];
        for doc in docs {
            let spec = parse_config(&doc).unwrap();
            let canonical = serialize_config(&spec);
            let reparsed = parse_config(&canonical).unwrap();
            assert_eq!(spec, reparsed, "document:\n{canonical}");
            // canonical form is a fixed point
            assert_eq!(canonical, serialize_config(&reparsed));
        }
    }

    #[test]
    fn seed_zero_and_max_are_accepted() {
        let doc = MINIMAL_RUN.replace("seed = 1", &format!("seed = {}", u64::MAX));
        assert_eq!(parse_config(&doc).unwrap().seed, u64::MAX);
        let doc = MINIMAL_RUN.replace("seed = 1", "seed = 0");
        assert_eq!(parse_config(&doc).unwrap().seed, 0);
    }
}

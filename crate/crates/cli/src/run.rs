//! Config resolution, error mapping, and the run manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use macropat::{Corpus, Error};

use crate::{commands, Cli, Command};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_INPUT: u8 = 4;
pub const EXIT_INVALID: u8 = 5;
pub const EXIT_ANALYSIS: u8 = 6;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config keys.
    Usage(String),
    Io(PathBuf, std::io::Error),
    /// Input files that do not parse or violate the corpus schema.
    Input(String),
    /// Parameter values rejected by validation.
    Invalid(String),
    /// The analysis itself failed (no fit, degenerate folds, ...).
    Analysis(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(..) => EXIT_IO,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Analysis(_) => EXIT_ANALYSIS,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Invalid(m) | CliError::Analysis(m) => f.write_str(m),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Schema { .. } | Error::EmptyCorpus => CliError::Input(e.to_string()),
            Error::InvalidArgument(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Analysis(e.to_string()),
        }
    }
}

/// Everything a subcommand produced, written only once it succeeds.
pub struct Ctx {
    pub seed: u64,
    pub corpus_digest: Option<String>,
    pub inputs: BTreeMap<String, String>,
    outputs: Vec<(String, Vec<u8>)>,
}

impl Ctx {
    pub fn emit(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.outputs.push((name.to_string(), bytes.into()));
    }

    pub fn emit_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut s = serde_json::to_string_pretty(value).expect("serializable");
        s.push('\n');
        self.emit(name, s);
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        let digest = sha256_hex(&bytes);
        self.inputs.insert(path.display().to_string(), digest);
        String::from_utf8(bytes).map_err(|_| CliError::Input(format!("{}: not UTF-8", path.display())))
    }

    pub fn load_corpus(&mut self, path: Option<&Path>) -> Result<Corpus, CliError> {
        let path = path.ok_or_else(|| CliError::Usage("--corpus is required".into()))?;
        let text = self.read_input(path)?;
        self.corpus_digest = Some(sha256_hex(text.as_bytes()));
        macropat::corpus::parse_corpus(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    version: &'a str,
    seed: u64,
    config: Value,
    corpus_digest: Option<String>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

fn load_config(path: Option<&Path>) -> Result<Map<String, Value>, CliError> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(from_manifest(m)),
        Ok(_) => Err(CliError::Usage(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
    }
}

/// A previous run's manifest works as a config: its resolved values and seed.
fn from_manifest(mut m: Map<String, Value>) -> Map<String, Value> {
    if !(m.contains_key("subcommand") && m.contains_key("outputs")) {
        return m;
    }
    let seed = m.remove("seed");
    let mut cfg = match m.remove("config") {
        Some(Value::Object(c)) => c,
        _ => Map::new(),
    };
    if let Some(s) = seed {
        cfg.insert("seed".into(), s);
    }
    cfg
}

/// Overlays config values on every flag not given on the command line.
fn resolve<T: Serialize + DeserializeOwned>(
    args: T,
    matches: &ArgMatches,
    config: &Map<String, Value>,
) -> Result<(T, Value), CliError> {
    let mut value = serde_json::to_value(&args).expect("serializable");
    let obj = value.as_object_mut().expect("args serialize to an object");
    for (k, v) in config {
        if k == "seed" {
            continue;
        }
        if !obj.contains_key(k) {
            return Err(CliError::Usage(format!("unknown config key {k:?}")));
        }
        if matches.value_source(k) != Some(ValueSource::CommandLine) {
            obj.insert(k.clone(), v.clone());
        }
    }
    let resolved = serde_json::from_value(value.clone()).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    Ok((resolved, value))
}

fn config_seed(config: &Map<String, Value>) -> Result<Option<u64>, CliError> {
    match config.get("seed") {
        None => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| CliError::Usage("config seed must be a nonnegative integer".into())),
    }
}

pub fn dispatch(cli: Cli, matches: &ArgMatches) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let seed = match cli.seed {
        Some(s) => s,
        None => config_seed(&config)?.unwrap_or(0),
    };
    let mut ctx = Ctx { seed, corpus_digest: None, inputs: BTreeMap::new(), outputs: Vec::new() };

    macro_rules! go {
        ($name:literal, $args:expr, $f:path) => {{
            let (args, resolved) = resolve($args, matches, &config)?;
            $f(&args, &mut ctx)?;
            ($name, resolved)
        }};
    }
    let (name, resolved) = match cli.command {
        Command::SynthTemplate(a) => go!("synth-template", a, commands::synth_template),
        Command::SynthDecision(a) => go!("synth-decision", a, commands::synth_decision),
        Command::Mine(a) => go!("mine", a, commands::mine),
        Command::Bound(a) => go!("bound", a, commands::bound),
        Command::Detect(a) => go!("detect", a, commands::detect),
        Command::RankFeatures(a) => go!("rank-features", a, commands::rank_features),
        Command::Markov(a) => go!("markov", a, commands::markov),
        Command::Phmm(a) => go!("phmm", a, commands::phmm),
        Command::Wrapup(a) => go!("wrapup", a, commands::wrapup),
        Command::Persuade(a) => go!("persuade", a, commands::persuade),
        Command::ScreenWords(a) => go!("screen-words", a, commands::screen_words),
    };

    fs::create_dir_all(&cli.out).map_err(|e| CliError::Io(cli.out.clone(), e))?;
    let mut paths = Vec::new();
    for (file, bytes) in &ctx.outputs {
        let path = cli.out.join(file);
        fs::write(&path, bytes).map_err(|e| CliError::Io(path.clone(), e))?;
        paths.push(path.display().to_string());
    }
    let manifest = Manifest {
        subcommand: name,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config: resolved,
        corpus_digest: ctx.corpus_digest.take(),
        inputs: std::mem::take(&mut ctx.inputs),
        outputs: paths,
    };
    let path = cli.out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::Io(path.clone(), e))?;
    Ok(())
}

mod home;
mod runtime;

use std::fmt;
use std::fs;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use cake_core::abe::{AbeError, SliceInput, UserKey, MESSAGE_ID_LEN};
use cake_core::cas::CasError;
use cake_core::ledger::{verify_ledger_bytes, LedgerError};
use cake_core::policy::{attribute_set, AttributeSet};
use cake_core::protocol::{client_read, serve_tcp};
use cake_core::scenario::{run_scenario, ScenarioReport, ScenarioScript};
use cake_core::{ErrorClass, ProtocolError};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use home::{load_key, Home, ServiceKind};
use runtime::Services;

const EXIT_USAGE: u8 = 64;

#[derive(Debug)]
pub struct CliError {
    /// `None` for usage errors.
    class: Option<ErrorClass>,
    message: String,
}

impl CliError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            class: Some(class),
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            class: None,
            message: message.into(),
        }
    }

    pub fn from_abe(e: AbeError) -> Self {
        ProtocolError::from(e).into()
    }

    fn exit_code(&self) -> u8 {
        self.class.map_or(EXIT_USAGE, |c| c.exit_code() as u8)
    }

    fn class_name(&self) -> String {
        self.class.map_or("Usage".to_string(), |c| format!("{c:?}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        Self::new(e.class(), e.to_string())
    }
}

impl From<LedgerError> for CliError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::Corrupt(h) => {
                Self::new(ErrorClass::ChainInvalid, format!("ledger is invalid at block {h}"))
            }
            e => ProtocolError::from(e).into(),
        }
    }
}

impl From<CasError> for CliError {
    fn from(e: CasError) -> Self {
        ProtocolError::from(e).into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "cake", version, about = "Confidential document sharing with attribute policies")]
struct Cli {
    /// Deployment directory.
    #[arg(long, env = "CAKE_HOME", default_value = ".cake", global = true)]
    home: PathBuf,
    /// Identity to act as.
    #[arg(long = "as", value_name = "IDENTITY", global = true)]
    identity: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Provision a new deployment with one certifier.
    Init {
        #[arg(long, default_value = "certifier")]
        certifier: String,
    },
    #[command(subcommand)]
    Identity(IdentityCommand),
    /// Certify an actor's attributes (acting as a certifier).
    Certify {
        /// Identity name or 0x address.
        actor: String,
        #[arg(required = true)]
        attributes: Vec<String>,
    },
    /// Encrypt and store a document. The first --policy applies to FILE,
    /// each later one to the matching --slice.
    Store {
        #[arg(long = "policy", required = true)]
        policies: Vec<String>,
        #[arg(long = "slice", value_name = "LABEL=FILE")]
        slices: Vec<String>,
        file: PathBuf,
    },
    #[command(subcommand)]
    Key(KeyCommand),
    /// Fetch and decrypt a stored document.
    Read {
        message_id: String,
        /// Use a saved key instead of requesting one.
        #[arg(long)]
        key: Option<PathBuf>,
        /// Write readable slices here instead of printing them.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    #[command(subcommand)]
    Ledger(LedgerCommand),
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Serve SDM, UD and SKM over TCP.
    Serve,
}

#[derive(Debug, Subcommand)]
enum IdentityCommand {
    /// Create and register a new identity.
    New { name: Option<String> },
    List,
}

#[derive(Debug, Subcommand)]
enum KeyCommand {
    /// Request a user key from the key manager.
    Request,
}

#[derive(Debug, Subcommand)]
enum LedgerCommand {
    /// Check every block's hashes, signatures and links.
    Verify,
    /// Show the ledger record for a message.
    Show { message_id: String },
}

#[derive(Debug, Subcommand)]
enum ScenarioCommand {
    /// The customs clearance walkthrough: three actors, four documents.
    Brie,
    /// Run a scenario script.
    Run { file: PathBuf },
}

struct Ctx {
    home: Home,
    identity: Option<String>,
    format: Format,
}

impl Ctx {
    fn me(&self, default: &str) -> String {
        self.identity.clone().unwrap_or_else(|| default.to_string())
    }

    fn emit(&self, text: impl fmt::Display, value: Value) {
        match self.format {
            Format::Text => print!("{text}"),
            Format::Json => println!("{value}"),
        }
    }
}

fn parse_message_id(text: &str) -> Result<[u8; MESSAGE_ID_LEN], CliError> {
    let t = text.strip_prefix("0x").unwrap_or(text);
    hex::decode(t)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| CliError::usage(format!("message id must be {} hex bytes", MESSAGE_ID_LEN)))
}

fn parse_attributes(names: &[String]) -> Result<AttributeSet, CliError> {
    attribute_set(names).map_err(|e| CliError::new(ErrorClass::InvalidInput, e.to_string()))
}

fn read_file(path: &PathBuf) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::new(ErrorClass::Storage, format!("{}: {e}", path.display())))
}

fn attribute_list(attrs: &AttributeSet) -> Vec<String> {
    attrs.iter().map(|a| a.to_string()).collect()
}

fn init(ctx: &Ctx, certifier: &str) -> Result<(), CliError> {
    let id = ctx.home.init(certifier)?;
    ctx.emit(
        format!(
            "initialized {}\ncertifier {certifier} {}\n",
            ctx.home.root().display(),
            id.address()
        ),
        json!({"home": ctx.home.root().display().to_string(), "certifier": {"name": certifier, "address": id.address().to_string()}}),
    );
    Ok(())
}

fn identity_new(ctx: &Ctx, name: Option<String>) -> Result<(), CliError> {
    let name = name.unwrap_or_else(|| ctx.me("default"));
    ctx.home.master()?;
    let id = cake_core::Identity::generate(&mut rand::thread_rng());
    ctx.home.save_identity(&name, &id)?;
    ctx.emit(
        format!("{name} {}\n", id.address()),
        json!({"name": name, "address": id.address().to_string()}),
    );
    Ok(())
}

fn identity_list(ctx: &Ctx) -> Result<(), CliError> {
    let ids = ctx.home.identities()?;
    let text: String = ids.iter().map(|(n, id)| format!("{n} {}\n", id.address())).collect();
    let list: Vec<Value> = ids
        .iter()
        .map(|(n, id)| json!({"name": n, "address": id.address().to_string()}))
        .collect();
    ctx.emit(text, Value::Array(list));
    Ok(())
}

fn certify(ctx: &Ctx, actor: &str, attributes: &[String]) -> Result<(), CliError> {
    let attrs = parse_attributes(attributes)?;
    let me = ctx.home.identity(&ctx.me("certifier"))?;
    let address = ctx.home.resolve_actor(actor)?;
    let (mut conn, _services) = runtime::open(&ctx.home, ServiceKind::Ud, &me)?;
    let locator = conn.certify(&me, address, attrs.clone())?;
    ctx.emit(
        format!("certified {address} [{}]\nmetadata {locator}\n", attribute_list(&attrs).join(", ")),
        json!({"actor": address.to_string(), "attributes": attribute_list(&attrs), "metadata_locator": locator.to_string()}),
    );
    Ok(())
}

fn store(ctx: &Ctx, policies: &[String], slices: &[String], file: &PathBuf) -> Result<(), CliError> {
    if policies.len() != slices.len() + 1 {
        return Err(CliError::usage(format!(
            "expected {} --policy values for {} --slice values",
            slices.len() + 1,
            slices.len()
        )));
    }
    let main_label = file
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("document")
        .to_string();
    let mut inputs = vec![SliceInput::new(main_label, policies[0].clone(), read_file(file)?)];
    for (arg, policy) in slices.iter().zip(&policies[1..]) {
        let (label, path) = arg
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--slice {arg:?} is not LABEL=FILE")))?;
        inputs.push(SliceInput::new(label, policy.clone(), read_file(&PathBuf::from(path))?));
    }
    let me = ctx.home.identity(&ctx.me("default"))?;
    let (mut conn, _services) = runtime::open(&ctx.home, ServiceKind::Sdm, &me)?;
    let labels: Vec<String> = inputs.iter().map(|s| s.label.clone()).collect();
    let (id, locator) = conn.store(inputs)?;
    ctx.emit(
        format!("message {}\nlocator {locator}\n", hex::encode(id)),
        json!({"message_id": hex::encode(id), "locator": locator.to_string(), "slices": labels}),
    );
    Ok(())
}

fn request_key(ctx: &Ctx, name: &str) -> Result<UserKey, CliError> {
    let me = ctx.home.identity(name)?;
    let (mut conn, _services) = runtime::open(&ctx.home, ServiceKind::Skm, &me)?;
    Ok(conn.request_key()?)
}

fn key_request(ctx: &Ctx) -> Result<(), CliError> {
    let name = ctx.me("default");
    let key = request_key(ctx, &name)?;
    let path = ctx.home.save_key(&name, &key)?;
    let attrs = attribute_list(&key.attributes());
    ctx.emit(
        format!(
            "key for {} [{}] issued at {}\nsaved {}\n",
            key.holder,
            attrs.join(", "),
            key.issued_at,
            path.display()
        ),
        json!({"holder": key.holder.to_string(), "attributes": attrs, "issued_at": key.issued_at, "path": path.display().to_string()}),
    );
    Ok(())
}

fn read(ctx: &Ctx, message_id: &str, key: Option<&PathBuf>, out_dir: Option<&PathBuf>) -> Result<(), CliError> {
    let id = parse_message_id(message_id)?;
    let key = match key {
        Some(p) => load_key(p)?,
        None => request_key(ctx, &ctx.me("default"))?,
    };
    let ledger = ctx.home.ledger_snapshot()?;
    let store = ctx.home.store()?;
    let outcomes = client_read(&ledger, &store, &id, &key)?;
    let mut text = String::new();
    let mut slices = Vec::new();
    let mut readable = 0;
    for (label, result) in &outcomes {
        match result {
            Ok(bytes) => {
                readable += 1;
                if let Some(dir) = out_dir {
                    fs::create_dir_all(dir).and_then(|_| fs::write(dir.join(label), bytes)).map_err(
                        |e| CliError::new(ErrorClass::Storage, format!("{}: {e}", dir.display())),
                    )?;
                    text.push_str(&format!("[{label}] {} bytes -> {}\n", bytes.len(), dir.join(label).display()));
                } else {
                    text.push_str(&format!("[{label}] {} bytes\n{}\n", bytes.len(), String::from_utf8_lossy(bytes)));
                }
                slices.push(json!({
                    "label": label,
                    "readable": true,
                    "text": std::str::from_utf8(bytes).ok(),
                    "hex": hex::encode(bytes),
                }));
            }
            Err(e) => {
                text.push_str(&format!("[{label}] denied: {e}\n"));
                slices.push(json!({"label": label, "readable": false, "reason": e.to_string()}));
            }
        }
    }
    ctx.emit(text, json!({"message_id": hex::encode(id), "slices": slices}));
    if readable == 0 {
        return Err(ProtocolError::PolicyNotSatisfied.into());
    }
    Ok(())
}

fn ledger_verify(ctx: &Ctx) -> Result<(), CliError> {
    let v = verify_ledger_bytes(&ctx.home.ledger_bytes()?);
    match v.first_invalid {
        None => {
            ctx.emit(
                format!("ok: {} blocks\n", v.blocks),
                json!({"valid": true, "blocks": v.blocks}),
            );
            Ok(())
        }
        Some(h) => {
            ctx.emit(
                format!("invalid at block {h}\n"),
                json!({"valid": false, "blocks": v.blocks, "first_invalid": h}),
            );
            Err(CliError::new(ErrorClass::ChainInvalid, format!("ledger is invalid at block {h}")))
        }
    }
}

fn ledger_show(ctx: &Ctx, message_id: &str) -> Result<(), CliError> {
    let id = parse_message_id(message_id)?;
    let record = ctx.home.ledger_snapshot()?.message_get(&id)?;
    ctx.emit(
        format!(
            "message {}\nlocator {}\nsender {}\nheight {}\n",
            hex::encode(id),
            record.locator,
            record.sender,
            record.height
        ),
        json!({"message_id": hex::encode(id), "locator": record.locator, "sender": record.sender.to_string(), "height": record.height}),
    );
    Ok(())
}

fn report_json(r: &ScenarioReport) -> Value {
    let access: serde_json::Map<String, Value> = r
        .documents
        .iter()
        .zip(&r.access)
        .map(|(d, row)| {
            let cells: serde_json::Map<String, Value> = r
                .actors
                .iter()
                .zip(row)
                .map(|(a, ok)| (a.clone(), json!(if *ok { "allow" } else { "deny" })))
                .collect();
            (d.clone(), Value::Object(cells))
        })
        .collect();
    json!({
        "actors": r.actors,
        "documents": r.documents,
        "access": access,
        "message_ids": r.message_ids.iter().map(hex::encode).collect::<Vec<_>>(),
        "locators": r.locators.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
        "ledger_height": r.ledger_height,
        "chain_valid": r.chain.is_valid(),
        "matches_expected": r.expected.as_ref().map(|_| r.matches_expected()),
    })
}

fn scenario(ctx: &Ctx, script: ScenarioScript) -> Result<(), CliError> {
    let report = run_scenario(&script).map_err(|e| match e {
        cake_core::scenario::ScenarioError::Step { step, source } => {
            CliError::new(source.class(), format!("{step}: {source}"))
        }
        e => CliError::new(ErrorClass::InvalidInput, e.to_string()),
    })?;
    let mut text = report.render_table();
    text.push('\n');
    for ((d, id), loc) in report.documents.iter().zip(&report.message_ids).zip(&report.locators) {
        text.push_str(&format!("{d}: message {} locator {loc}\n", hex::encode(id)));
    }
    text.push_str(&format!(
        "ledger height {}, chain {}\n",
        report.ledger_height,
        if report.chain.is_valid() { "valid" } else { "INVALID" }
    ));
    ctx.emit(text, report_json(&report));
    if !report.chain.is_valid() {
        return Err(CliError::new(ErrorClass::ChainInvalid, "scenario ledger failed verification"));
    }
    if !report.matches_expected() {
        return Err(CliError::new(ErrorClass::Internal, "access matrix differs from the expected readers"));
    }
    Ok(())
}

fn serve(ctx: &Ctx) -> Result<(), CliError> {
    let services = Services::start(&ctx.home)?;
    let mut handles = Vec::new();
    for kind in ServiceKind::ALL {
        let addr = std::env::var(kind.env_var()).unwrap_or_else(|_| kind.default_addr().to_string());
        let listener = TcpListener::bind(&addr)
            .map_err(|e| CliError::new(ErrorClass::Transport, format!("{}: {addr}: {e}", kind.name())))?;
        eprintln!("{} listening on {}", kind.name(), listener.local_addr().map(|a| a.to_string()).unwrap_or(addr));
        let service = services.service(kind);
        handles.push(std::thread::spawn(move || serve_tcp(listener, service)));
    }
    for h in handles {
        if let Ok(Err(e)) = h.join() {
            return Err(CliError::new(ErrorClass::Transport, e.to_string()));
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx {
        home: Home::new(cli.home),
        identity: cli.identity,
        format: cli.format,
    };
    match cli.command {
        Command::Init { certifier } => init(&ctx, &certifier),
        Command::Identity(IdentityCommand::New { name }) => identity_new(&ctx, name),
        Command::Identity(IdentityCommand::List) => identity_list(&ctx),
        Command::Certify { actor, attributes } => certify(&ctx, &actor, &attributes),
        Command::Store {
            policies,
            slices,
            file,
        } => store(&ctx, &policies, &slices, &file),
        Command::Key(KeyCommand::Request) => key_request(&ctx),
        Command::Read {
            message_id,
            key,
            out_dir,
        } => read(&ctx, &message_id, key.as_ref(), out_dir.as_ref()),
        Command::Ledger(LedgerCommand::Verify) => ledger_verify(&ctx),
        Command::Ledger(LedgerCommand::Show { message_id }) => ledger_show(&ctx, &message_id),
        Command::Scenario(ScenarioCommand::Brie) => scenario(&ctx, ScenarioScript::brie()),
        Command::Scenario(ScenarioCommand::Run { file }) => {
            let text = fs::read_to_string(&file)
                .map_err(|e| CliError::new(ErrorClass::Storage, format!("{}: {e}", file.display())))?;
            let script = ScenarioScript::from_toml(&text)
                .map_err(|e| CliError::new(ErrorClass::InvalidInput, e.to_string()))?;
            scenario(&ctx, script)
        }
        Command::Serve => serve(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let json = cli.format == Format::Json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json {
                println!(
                    "{}",
                    json!({"error": {"class": e.class_name(), "message": e.message, "exit_code": e.exit_code()}})
                );
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

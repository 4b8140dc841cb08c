//! On-disk deployment state.
//!
//! ```text
//! <home>/master.key          authority root key, hex
//! <home>/services/{sdm,ud,skm}.json
//! <home>/identities/<name>.json
//! <home>/keys/<name>.key     last issued user key, hex
//! <home>/ledger.bin          append-only block log
//! <home>/cas/blobs/<digest>
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use cake_core::abe::{self, MasterSecret, UserKey};
use cake_core::cas::ContentStore;
use cake_core::ledger::{Address, Ledger};
use cake_core::protocol::{Identity, KeyDirectory};
use cake_core::ErrorClass;
use serde_json::{json, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceKind {
    Sdm,
    Ud,
    Skm,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 3] = [ServiceKind::Sdm, ServiceKind::Ud, ServiceKind::Skm];

    pub fn name(self) -> &'static str {
        match self {
            ServiceKind::Sdm => "sdm",
            ServiceKind::Ud => "ud",
            ServiceKind::Skm => "skm",
        }
    }

    pub fn env_var(self) -> &'static str {
        match self {
            ServiceKind::Sdm => "CAKE_SDM_ADDR",
            ServiceKind::Ud => "CAKE_UD_ADDR",
            ServiceKind::Skm => "CAKE_SKM_ADDR",
        }
    }

    pub fn default_addr(self) -> &'static str {
        match self {
            ServiceKind::Sdm => "127.0.0.1:7401",
            ServiceKind::Ud => "127.0.0.1:7402",
            ServiceKind::Skm => "127.0.0.1:7403",
        }
    }
}

pub struct Home {
    root: PathBuf,
}

fn storage(e: io::Error, path: &Path) -> CliError {
    CliError::new(ErrorClass::Storage, format!("{}: {e}", path.display()))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 64
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'.')
        && !name.starts_with('.')
}

fn identity_json(id: &Identity) -> Value {
    let (signing, dh) = id.secret_bytes();
    json!({
        "address": id.address().to_string(),
        "signing_key": hex::encode(signing),
        "agreement_key": hex::encode(dh),
    })
}

fn hex32(v: &Value, field: &str) -> Option<[u8; 32]> {
    hex::decode(v.get(field)?.as_str()?).ok()?.try_into().ok()
}

impl Home {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.root.join("ledger.bin")
    }

    fn identity_path(&self, name: &str) -> PathBuf {
        self.root.join("identities").join(format!("{name}.json"))
    }

    fn service_path(&self, kind: ServiceKind) -> PathBuf {
        self.root.join("services").join(format!("{}.json", kind.name()))
    }

    pub fn key_path(&self, name: &str) -> PathBuf {
        self.root.join("keys").join(format!("{name}.key"))
    }

    fn require_initialized(&self) -> Result<(), CliError> {
        if self.root.join("master.key").is_file() {
            Ok(())
        } else {
            Err(CliError::new(
                ErrorClass::NotFound,
                format!("{} is not initialized; run `cake init`", self.root.display()),
            ))
        }
    }

    /// Creates a fresh deployment with one certifier identity.
    pub fn init(&self, certifier: &str) -> Result<Identity, CliError> {
        if !valid_name(certifier) {
            return Err(CliError::usage(format!("invalid identity name {certifier:?}")));
        }
        if self.root.join("master.key").exists() {
            return Err(CliError::new(
                ErrorClass::Storage,
                format!("{} is already initialized", self.root.display()),
            ));
        }
        for dir in ["services", "identities", "keys", "cas"] {
            let p = self.root.join(dir);
            fs::create_dir_all(&p).map_err(|e| storage(e, &p))?;
        }
        let mut rng = rand::thread_rng();
        let master = abe::setup(&mut rng).map_err(CliError::from_abe)?;
        for kind in ServiceKind::ALL {
            self.write_json(&self.service_path(kind), &identity_json(&Identity::generate(&mut rng)))?;
        }
        let cert = Identity::generate(&mut rng);
        self.save_identity(certifier, &cert)?;
        Ledger::create_file(&self.ledger_path(), cert.signing_key(), &[cert.address()])?;
        let p = self.root.join("master.key");
        fs::write(&p, hex::encode(master.expose_bytes())).map_err(|e| storage(e, &p))?;
        Ok(cert)
    }

    fn write_json(&self, path: &Path, v: &Value) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(v).expect("json values serialize");
        fs::write(path, text).map_err(|e| storage(e, path))
    }

    fn read_identity_file(&self, path: &Path) -> Result<Identity, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == io::ErrorKind::NotFound {
                CliError::new(ErrorClass::NotFound, format!("no identity at {}", path.display()))
            } else {
                storage(e, path)
            }
        })?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::new(ErrorClass::Storage, format!("{}: {e}", path.display())))?;
        match (hex32(&v, "signing_key"), hex32(&v, "agreement_key")) {
            (Some(s), Some(d)) => Ok(Identity::from_secret_bytes(s, d)),
            _ => Err(CliError::new(
                ErrorClass::Storage,
                format!("{}: malformed identity", path.display()),
            )),
        }
    }

    pub fn master(&self) -> Result<MasterSecret, CliError> {
        self.require_initialized()?;
        let p = self.root.join("master.key");
        let text = fs::read_to_string(&p).map_err(|e| storage(e, &p))?;
        let bytes: [u8; 32] = hex::decode(text.trim())
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| CliError::new(ErrorClass::Storage, "malformed master.key"))?;
        Ok(MasterSecret::from_bytes(bytes))
    }

    pub fn service(&self, kind: ServiceKind) -> Result<Identity, CliError> {
        self.require_initialized()?;
        self.read_identity_file(&self.service_path(kind))
    }

    pub fn identity(&self, name: &str) -> Result<Identity, CliError> {
        self.require_initialized()?;
        if !valid_name(name) {
            return Err(CliError::usage(format!("invalid identity name {name:?}")));
        }
        self.read_identity_file(&self.identity_path(name))
    }

    pub fn save_identity(&self, name: &str, id: &Identity) -> Result<(), CliError> {
        if !valid_name(name) {
            return Err(CliError::usage(format!("invalid identity name {name:?}")));
        }
        let path = self.identity_path(name);
        if path.exists() {
            return Err(CliError::new(
                ErrorClass::Storage,
                format!("identity {name:?} already exists"),
            ));
        }
        self.write_json(&path, &identity_json(id))
    }

    /// All named identities, sorted by name.
    pub fn identities(&self) -> Result<Vec<(String, Identity)>, CliError> {
        self.require_initialized()?;
        let dir = self.root.join("identities");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| storage(e, &dir))? {
            let path = entry.map_err(|e| storage(e, &dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((name, self.read_identity_file(&path)?));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    /// Name or `0x` address to an address.
    pub fn resolve_actor(&self, actor: &str) -> Result<Address, CliError> {
        if actor.starts_with("0x") {
            return actor
                .parse()
                .map_err(|e: String| CliError::usage(format!("bad address {actor:?}: {e}")));
        }
        Ok(self.identity(actor)?.address())
    }

    pub fn directory(&self) -> Result<KeyDirectory, CliError> {
        let dir = KeyDirectory::new();
        for (_, id) in self.identities()? {
            dir.register(id.signing_key().verifying_key());
        }
        Ok(dir)
    }

    /// Ledger opened for appending.
    pub fn ledger(&self) -> Result<Ledger, CliError> {
        self.require_initialized()?;
        Ok(Ledger::open_file(&self.ledger_path())?)
    }

    /// Ledger replayed from the file without holding it open.
    pub fn ledger_snapshot(&self) -> Result<Ledger, CliError> {
        Ok(Ledger::from_bytes(&self.ledger_bytes()?)?)
    }

    pub fn ledger_bytes(&self) -> Result<Vec<u8>, CliError> {
        self.require_initialized()?;
        let p = self.ledger_path();
        fs::read(&p).map_err(|e| storage(e, &p))
    }

    pub fn store(&self) -> Result<ContentStore, CliError> {
        self.require_initialized()?;
        Ok(ContentStore::open_dir(&self.root.join("cas"))?)
    }

    pub fn save_key(&self, name: &str, key: &UserKey) -> Result<PathBuf, CliError> {
        let p = self.key_path(name);
        fs::write(&p, hex::encode(key.encode())).map_err(|e| storage(e, &p))?;
        Ok(p)
    }
}

pub fn load_key(path: &Path) -> Result<UserKey, CliError> {
    let text = fs::read_to_string(path).map_err(|e| storage(e, path))?;
    hex::decode(text.trim())
        .ok()
        .and_then(|b| UserKey::decode(&b).ok())
        .ok_or_else(|| CliError::new(ErrorClass::Storage, format!("{}: malformed key", path.display())))
}

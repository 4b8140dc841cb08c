//! Scripted end-to-end runs: certify a set of actors, have senders store
//! documents through the data manager, then have every actor fetch a key
//! and try to read every document.
//!
//! Scripts are TOML:
//!
//! ```toml
//! seed = 7
//! instance = "29837"          # optional
//!
//! [[actor]]
//! name = "Courier"
//! attributes = ["29837", "courier"]
//!
//! [[document]]
//! name = "Transport order"
//! sender = "Courier"
//! policy = "29837 and courier"
//! payload = "..."
//! readers = ["Courier"]       # optional expected access
//! ```

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::abe::{self, AbeError, MasterSecret, SliceInput, MESSAGE_ID_LEN};
use crate::cas::{ContentStore, Locator};
use crate::ledger::{Address, ChainVerification, Ledger};
use crate::policy::{attributes_of, parse_policy, AttributeId, AttributeSet};
use crate::protocol::{
    client_read, ActorBlinding, Deployment, FixedClock, Identity, KeyDirectory, LocalNetwork,
    ProtocolError, SecureDataManager, SecureKeyManager, Service, Trace, UserDirectory,
};

pub const BRIE_SCRIPT: &str = include_str!("brie.toml");

/// Logical time at which a scenario starts.
pub const SCENARIO_EPOCH: u64 = 1_700_000_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid script: {0}")]
    Script(String),
    #[error("{step}: {source}")]
    Step {
        step: String,
        #[source]
        source: ProtocolError,
    },
}

impl ScenarioError {
    fn step(step: impl Into<String>) -> impl FnOnce(ProtocolError) -> ScenarioError {
        let step = step.into();
        move |source| ScenarioError::Step { step, source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSpec {
    pub name: String,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentSpec {
    pub name: String,
    pub sender: String,
    pub policy: String,
    pub payload: String,
    #[serde(default)]
    pub readers: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub seed: u64,
    #[serde(default)]
    pub instance: Option<String>,
    #[serde(rename = "actor", default)]
    pub actors: Vec<ActorSpec>,
    #[serde(rename = "document", default)]
    pub documents: Vec<DocumentSpec>,
}

impl ScenarioScript {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let script: Self =
            toml::from_str(text).map_err(|e| ScenarioError::Script(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn brie() -> Self {
        Self::from_toml(BRIE_SCRIPT).expect("built-in script is valid")
    }

    fn actor_index(&self, name: &str) -> Result<usize, ScenarioError> {
        self.actors
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| ScenarioError::Script(format!("unknown actor {name:?}")))
    }

    pub fn actor_attributes(&self, index: usize) -> Result<AttributeSet, ScenarioError> {
        self.actors[index]
            .attributes
            .iter()
            .map(|a| AttributeId::new(a).map_err(|e| ScenarioError::Script(e.to_string())))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut names = BTreeSet::new();
        let mut held = AttributeSet::new();
        for (i, actor) in self.actors.iter().enumerate() {
            if !names.insert(actor.name.as_str()) {
                return Err(ScenarioError::Script(format!("duplicate actor {:?}", actor.name)));
            }
            let attrs = self.actor_attributes(i)?;
            if attrs.is_empty() {
                return Err(ScenarioError::Script(format!("actor {:?} has no attributes", actor.name)));
            }
            held.extend(attrs);
        }
        if let Some(inst) = &self.instance {
            held.insert(AttributeId::new(inst).map_err(|e| ScenarioError::Script(e.to_string()))?);
        }
        let mut docs = BTreeSet::new();
        for doc in &self.documents {
            if !docs.insert(doc.name.as_str()) {
                return Err(ScenarioError::Script(format!("duplicate document {:?}", doc.name)));
            }
            self.actor_index(&doc.sender)?;
            let ast = parse_policy(&doc.policy)
                .map_err(|e| ScenarioError::Script(format!("{}: {e}", doc.name)))?;
            if let Some(missing) = attributes_of(&ast).difference(&held).next() {
                return Err(ScenarioError::Script(format!(
                    "{}: attribute {missing} is held by no actor",
                    doc.name
                )));
            }
            for r in doc.readers.iter().flatten() {
                self.actor_index(r)?;
            }
        }
        Ok(())
    }

    /// Expected matrix, `[document][actor]`, if every document lists its
    /// readers.
    pub fn expected_access(&self) -> Option<Vec<Vec<bool>>> {
        self.documents
            .iter()
            .map(|d| {
                let readers = d.readers.as_ref()?;
                Some(
                    self.actors
                        .iter()
                        .map(|a| readers.contains(&a.name))
                        .collect(),
                )
            })
            .collect()
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub actors: Vec<String>,
    pub actor_addresses: Vec<Address>,
    pub documents: Vec<String>,
    /// `[document][actor]`: whether the actor could read the document.
    pub access: Vec<Vec<bool>>,
    pub expected: Option<Vec<Vec<bool>>>,
    pub message_ids: Vec<[u8; MESSAGE_ID_LEN]>,
    pub locators: Vec<Locator>,
    pub metadata_locators: Vec<Locator>,
    pub ledger_height: u64,
    pub chain: ChainVerification,
    pub ledger_bytes: Vec<u8>,
    pub sdm_address: Address,
    pub certifier_address: Address,
}

impl ScenarioReport {
    /// True when the run matched its expectations, or had none.
    pub fn matches_expected(&self) -> bool {
        self.expected.as_ref().map_or(true, |e| e == &self.access)
    }

    /// Human-readable access matrix.
    pub fn render_table(&self) -> String {
        let first = self
            .documents
            .iter()
            .map(|d| d.len())
            .max()
            .unwrap_or(0)
            .max("Document".len());
        let widths: Vec<usize> = self.actors.iter().map(|a| a.len().max(5)).collect();
        let mut out = format!("{:first$}", "Document");
        for (a, w) in self.actors.iter().zip(&widths) {
            out.push_str(&format!("  {a:w$}"));
        }
        out.push('\n');
        for (d, row) in self.documents.iter().zip(&self.access) {
            out.push_str(&format!("{d:first$}"));
            for (cell, w) in row.iter().zip(&widths) {
                let text = if *cell { "allow" } else { "deny" };
                out.push_str(&format!("  {text:w$}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Runtime pieces of a provisioned deployment, kept for inspection.
pub struct ScenarioWorld {
    pub master: Arc<MasterSecret>,
    pub deployment: Deployment,
    pub network: LocalNetwork,
    pub certifier: Identity,
    pub actors: Vec<Identity>,
    pub rng: ChaCha20Rng,
}

impl ScenarioWorld {
    /// Provisions a fresh in-memory deployment from `seed`: master
    /// secret, service identities, one certifier, and `actor_count`
    /// registered actors.
    pub fn provision(seed: u64, actor_count: usize) -> Self {
        Self::provision_with_store(seed, actor_count, Arc::new(ContentStore::in_memory()))
    }

    pub fn provision_with_store(seed: u64, actor_count: usize, store: Arc<ContentStore>) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let master = Arc::new(abe::setup(&mut rng).expect("seeded rng does not fail"));
        let certifier = Identity::generate(&mut rng);
        let sdm_id = Identity::generate(&mut rng);
        let ud_id = Identity::generate(&mut rng);
        let skm_id = Identity::generate(&mut rng);
        let actors: Vec<Identity> = (0..actor_count).map(|_| Identity::generate(&mut rng)).collect();

        let directory = Arc::new(KeyDirectory::new());
        directory.register(certifier.signing_key().verifying_key());
        for a in &actors {
            directory.register(a.signing_key().verifying_key());
        }
        let deployment = Deployment {
            ledger: Arc::new(Ledger::genesis(certifier.signing_key(), &[certifier.address()])),
            store,
            directory,
            clock: Arc::new(FixedClock::new(SCENARIO_EPOCH)),
        };
        let sdm = SecureDataManager::new(
            sdm_id,
            master.clone(),
            &deployment,
            ChaCha20Rng::from_seed(rng.gen()),
        );
        let ud = UserDirectory::new(
            ud_id,
            ActorBlinding::from_master(&master),
            &deployment,
            ChaCha20Rng::from_seed(rng.gen()),
        );
        let skm = SecureKeyManager::new(
            skm_id,
            master.clone(),
            &deployment,
            ChaCha20Rng::from_seed(rng.gen()),
        );
        let network = LocalNetwork::new(Arc::new(sdm), Arc::new(ud), Arc::new(skm));
        Self {
            master,
            deployment,
            network,
            certifier,
            actors,
            rng,
        }
    }

    pub fn with_trace(mut self, trace: Trace) -> Self {
        self.network = self.network.with_trace(trace);
        self
    }

    pub fn certify(&mut self, actor: usize, attributes: AttributeSet) -> Result<Locator, ProtocolError> {
        let address = self.actors[actor].address();
        let mut conn = self.network.connect_ud(&self.certifier, &mut self.rng)?;
        conn.certify(&self.certifier, address, attributes)
    }

    pub fn store(
        &mut self,
        sender: usize,
        slices: Vec<SliceInput>,
    ) -> Result<([u8; MESSAGE_ID_LEN], Locator), ProtocolError> {
        let mut conn = self.network.connect_sdm(&self.actors[sender], &mut self.rng)?;
        conn.store(slices)
    }

    pub fn request_key(&mut self, actor: usize) -> Result<abe::UserKey, ProtocolError> {
        let mut conn = self.network.connect_skm(&self.actors[actor], &mut self.rng)?;
        conn.request_key()
    }
}

pub fn run_scenario(script: &ScenarioScript) -> Result<ScenarioReport, ScenarioError> {
    run_scenario_traced(script, None)
}

/// Like [`run_scenario`], recording every transport frame into `trace`.
pub fn run_scenario_traced(
    script: &ScenarioScript,
    trace: Option<Trace>,
) -> Result<ScenarioReport, ScenarioError> {
    script.validate()?;
    let mut world = ScenarioWorld::provision(script.seed, script.actors.len());
    if let Some(t) = trace {
        world = world.with_trace(t);
    }

    let mut metadata_locators = Vec::new();
    for (i, actor) in script.actors.iter().enumerate() {
        let attrs = script.actor_attributes(i)?;
        let loc = world
            .certify(i, attrs)
            .map_err(ScenarioError::step(format!("certify {}", actor.name)))?;
        metadata_locators.push(loc);
    }

    let senders: HashMap<&str, usize> = script
        .actors
        .iter()
        .enumerate()
        .map(|(i, a)| (a.name.as_str(), i))
        .collect();
    let mut message_ids = Vec::new();
    let mut locators = Vec::new();
    for doc in &script.documents {
        let slice = SliceInput::new(doc.name.clone(), doc.policy.clone(), doc.payload.as_bytes());
        let (id, loc) = world
            .store(senders[doc.sender.as_str()], vec![slice])
            .map_err(ScenarioError::step(format!("store {}", doc.name)))?;
        message_ids.push(id);
        locators.push(loc);
    }

    let mut access = vec![vec![false; script.actors.len()]; script.documents.len()];
    for (a, actor) in script.actors.iter().enumerate() {
        let key = world
            .request_key(a)
            .map_err(ScenarioError::step(format!("key request {}", actor.name)))?;
        for (d, doc) in script.documents.iter().enumerate() {
            let step = format!("{} reads {}", actor.name, doc.name);
            let outcomes = client_read(
                &world.deployment.ledger,
                &world.deployment.store,
                &message_ids[d],
                &key,
            )
            .map_err(ScenarioError::step(step.clone()))?;
            access[d][a] = match &outcomes[0].1 {
                Ok(bytes) if bytes == doc.payload.as_bytes() => true,
                Ok(_) => {
                    return Err(ScenarioError::Step {
                        step,
                        source: ProtocolError::IntegrityViolation,
                    })
                }
                Err(AbeError::PolicyNotSatisfied) => false,
                Err(e) => {
                    return Err(ScenarioError::Step {
                        step,
                        source: e.clone().into(),
                    })
                }
            };
        }
    }

    let ledger = &world.deployment.ledger;
    Ok(ScenarioReport {
        actors: script.actors.iter().map(|a| a.name.clone()).collect(),
        actor_addresses: world.actors.iter().map(|a| a.address()).collect(),
        documents: script.documents.iter().map(|d| d.name.clone()).collect(),
        access,
        expected: script.expected_access(),
        message_ids,
        locators,
        metadata_locators,
        ledger_height: ledger.height(),
        chain: ledger.verify_chain(),
        ledger_bytes: ledger.to_bytes(),
        sdm_address: world.network.sdm.identity().address(),
        certifier_address: world.certifier.address(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abe::CiphertextContainer;
    use crate::policy::canonicalize;


    #[test]
    fn brie_script_parses() {
        let s = ScenarioScript::brie();
        assert_eq!(s.actors.len(), 3);
        assert_eq!(s.documents.len(), 4);
        assert_eq!(s.documents[2].sender, "Customs");
        let e = s.expected_access().unwrap();
        assert_eq!(e[0], vec![true, true, false]);
        assert_eq!(e[1], vec![true, false, true]);
    }

    #[test]
    fn invalid_scripts_are_rejected() {
        let bad_sender = r#"
            seed = 1
            [[actor]]
            name = "A"
            attributes = ["x"]
            [[document]]
            name = "d"
            sender = "B"
            policy = "x"
            payload = "p"
        "#;
        assert!(ScenarioScript::from_toml(bad_sender).is_err());
        let unknown_attr = bad_sender.replace("\"B\"", "\"A\"").replace("policy = \"x\"", "policy = \"y\"");
        assert!(ScenarioScript::from_toml(&unknown_attr).is_err());
        let ok = bad_sender.replace("\"B\"", "\"A\"");
        assert!(ScenarioScript::from_toml(&ok).is_ok());
        assert!(ScenarioScript::from_toml("seed = 1\nextra = 2").is_err());
    }

    #[test]
    fn brie_reproduces_expected_access() {
        let report = run_scenario(&ScenarioScript::brie()).unwrap();
        assert!(report.matches_expected(), "{}", report.render_table());
        assert!(report.chain.is_valid());
        // genesis, three certifications, four stores
        assert_eq!(report.ledger_height, 7);
    }

    #[test]
    fn single_actor_single_document() {
        let script = ScenarioScript::from_toml(
            r#"
            seed = 4
            [[actor]]
            name = "Solo"
            attributes = ["solo"]
            [[document]]
            name = "Note"
            sender = "Solo"
            policy = "solo"
            payload = "hi"
            readers = ["Solo"]
            "#,
        )
        .unwrap();
        let report = run_scenario(&script).unwrap();
        assert_eq!(report.access, vec![vec![true]]);
    }

    #[test]
    fn stored_policy_headers_are_canonical_table_text() {
        let script = ScenarioScript::brie();
        let mut world = ScenarioWorld::provision(script.seed, 1);
        let attrs = script.actor_attributes(0).unwrap();
        world.certify(0, attrs).unwrap();
        for doc in &script.documents {
            let (_, loc) = world
                .store(0, vec![SliceInput::new(&doc.name, &doc.policy, doc.payload.as_bytes())])
                .unwrap();
            let bytes = world.deployment.store.get(&loc).unwrap();
            let container = CiphertextContainer::decode(&bytes).unwrap();
            assert_eq!(
                container.slice(&doc.name).unwrap().policy_text,
                canonicalize(&doc.policy).unwrap()
            );
        }
        assert!(world.network.sdm.identity().address() != world.actors[0].address());
    }
}

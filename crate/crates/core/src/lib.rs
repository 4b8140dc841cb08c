//! Confidential document sharing with attribute-based access policies.
//!
//! Data owners encrypt document slices under and/or policies over
//! attributes. Ciphertexts live in a content-addressed store, their
//! locators are notarized on a ledger, and readers obtain keys bound to
//! their certified attributes from a key manager.

pub mod abe;
pub mod cas;
pub mod codec;
pub mod crypto;
pub mod ledger;
pub mod policy;
pub mod protocol;
pub mod scenario;
pub mod sss;

pub use abe::{AbeError, CiphertextContainer, MasterSecret, SliceCiphertext, SliceInput, UserKey};
pub use cas::{CasError, ContentStore, Locator};
pub use ledger::{Address, Ledger, LedgerError};
pub use policy::{AccessTree, AttributeId, AttributeSet, PolicyAst, PolicyError};
pub use protocol::{ErrorClass, Identity, ProtocolError, PublicIdentity};
pub use scenario::{run_scenario, ScenarioReport, ScenarioScript};
pub use sss::FieldElement;

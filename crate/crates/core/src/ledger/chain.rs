use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::RwLock;

use ed25519_dalek::SigningKey;

use super::tx::{Block, Contract, Transaction, TxBody, TxReceipt, TxStatus};
use super::{Address, LedgerError, Rejection};
use crate::codec::{Decoder, Encoder};
use crate::crypto::Digest32;

pub const MESSAGE_ID_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageRecord {
    pub locator: String,
    pub sender: Address,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActorRecord {
    pub locator: String,
    pub certifier: Address,
    pub height: u64,
}

#[derive(Debug, Default)]
struct Contracts {
    messages: BTreeMap<[u8; MESSAGE_ID_LEN], MessageRecord>,
    certifiers: Option<BTreeSet<Address>>,
    actors: BTreeMap<Address, ActorRecord>,
}

fn decode_id_and_locator<const N: usize>(args: &[u8]) -> Result<([u8; N], String), Rejection> {
    let mut dec = Decoder::new(args);
    let id = dec.fixed::<N>().map_err(|_| Rejection::BadArguments)?;
    let locator = dec.string().map_err(|_| Rejection::BadArguments)?;
    dec.finish().map_err(|_| Rejection::BadArguments)?;
    Ok((id, locator))
}

impl Contracts {
    fn apply(&mut self, tx: &Transaction, height: u64) -> Result<(), Rejection> {
        let body = &tx.body;
        match (body.contract, body.method.as_str()) {
            (Contract::MessageRegistry, "store") => {
                let (id, locator) = decode_id_and_locator::<MESSAGE_ID_LEN>(&body.args)?;
                if self.messages.contains_key(&id) {
                    return Err(Rejection::AlreadyRecorded);
                }
                self.messages.insert(
                    id,
                    MessageRecord {
                        locator,
                        sender: body.sender,
                        height,
                    },
                );
                Ok(())
            }
            (Contract::ActorRegistry, "deploy") => {
                if self.certifiers.is_some() {
                    return Err(Rejection::AlreadyDeployed);
                }
                let mut dec = Decoder::new(&body.args);
                let list = dec
                    .list(|d| d.fixed().map(Address::from_bytes))
                    .map_err(|_| Rejection::BadArguments)?;
                dec.finish().map_err(|_| Rejection::BadArguments)?;
                self.certifiers = Some(list.into_iter().collect());
                Ok(())
            }
            (Contract::ActorRegistry, "certify") => {
                let certifiers = self.certifiers.as_ref().ok_or(Rejection::NotDeployed)?;
                if !certifiers.contains(&body.sender) {
                    return Err(Rejection::NotCertifier);
                }
                let (actor, locator) = decode_id_and_locator::<20>(&body.args)?;
                self.actors.insert(
                    Address::from_bytes(actor),
                    ActorRecord {
                        locator,
                        certifier: body.sender,
                        height,
                    },
                );
                Ok(())
            }
            (_, method) => Err(Rejection::UnknownMethod(method.to_string())),
        }
    }
}

pub fn message_store_args(message_id: &[u8; MESSAGE_ID_LEN], locator: &str) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.field(message_id).str(locator);
    enc.finish()
}

pub fn actor_certify_args(actor: &Address, locator: &str) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.field(actor.as_bytes()).str(locator);
    enc.finish()
}

pub fn deploy_args(certifiers: &[Address]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.list(certifiers, |a, e| {
        e.field(a.as_bytes());
    });
    enc.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainVerification {
    pub blocks: u64,
    pub first_invalid: Option<u64>,
}

impl ChainVerification {
    pub fn is_valid(&self) -> bool {
        self.first_invalid.is_none()
    }
}

/// Recomputes every block hash, link, signature and per-sender nonce
/// sequence.
pub fn verify_blocks(blocks: &[Block]) -> ChainVerification {
    let mut nonces: HashMap<Address, u64> = HashMap::new();
    let mut prev = [0u8; 32];
    for (i, block) in blocks.iter().enumerate() {
        let height = i as u64;
        let ok = block.height == height
            && block.prev_hash == prev
            && block.compute_hash() == block.block_hash
            && block.txs.iter().all(|tx| {
                let last = nonces.entry(tx.sender()).or_insert(0);
                let fresh = tx.body.sender_nonce == *last + 1;
                *last = tx.body.sender_nonce;
                fresh && tx.verify_signature().is_ok()
            });
        if !ok {
            return ChainVerification {
                blocks: blocks.len() as u64,
                first_invalid: Some(height),
            };
        }
        prev = block.block_hash;
    }
    ChainVerification {
        blocks: blocks.len() as u64,
        first_invalid: None,
    }
}

fn decode_blocks(bytes: &[u8]) -> (Vec<Block>, Option<u64>) {
    let mut dec = Decoder::new(bytes);
    let mut blocks = Vec::new();
    while dec.remaining() > 0 {
        match dec.field().map_err(LedgerError::from).and_then(Block::decode) {
            Ok(b) => blocks.push(b),
            Err(_) => return (blocks.clone(), Some(blocks.len() as u64)),
        }
    }
    (blocks, None)
}

/// Verifies a serialized ledger. Undecodable data fails at the height of
/// the first block that cannot be read.
pub fn verify_ledger_bytes(bytes: &[u8]) -> ChainVerification {
    let (blocks, decode_failure) = decode_blocks(bytes);
    let v = verify_blocks(&blocks);
    if v.first_invalid.is_some() {
        return v;
    }
    // an empty ledger has no genesis and is never valid
    match decode_failure.or(blocks.is_empty().then_some(0)) {
        Some(h) => ChainVerification {
            blocks: h,
            first_invalid: Some(h),
        },
        None => v,
    }
}

#[derive(Default)]
struct State {
    blocks: Vec<Block>,
    pending: Vec<Transaction>,
    // highest nonce accepted per sender, pending included
    nonces: HashMap<Address, u64>,
    contracts: Contracts,
    receipts: HashMap<Digest32, TxStatus>,
    sink: Option<File>,
}

impl State {
    fn accept(&mut self, tx: Transaction) -> Result<TxReceipt, LedgerError> {
        tx.verify_signature()?;
        let expected = self.nonces.get(&tx.sender()).copied().unwrap_or(0) + 1;
        if tx.body.sender_nonce != expected {
            return Err(LedgerError::BadNonce {
                expected,
                got: tx.body.sender_nonce,
            });
        }
        self.nonces.insert(tx.sender(), expected);
        let tx_hash = tx.hash();
        self.receipts.insert(tx_hash, TxStatus::Pending);
        self.pending.push(tx);
        Ok(TxReceipt {
            tx_hash,
            status: TxStatus::Pending,
        })
    }

    fn seal(&mut self) -> Block {
        let height = self.blocks.len() as u64;
        let prev = self.blocks.last().map_or([0; 32], |b| b.block_hash);
        let txs = std::mem::take(&mut self.pending);
        for tx in &txs {
            let status = match self.contracts.apply(tx, height) {
                Ok(()) => TxStatus::Applied { height },
                Err(reason) => TxStatus::Rejected { height, reason },
            };
            self.receipts.insert(tx.hash(), status);
        }
        let block = Block::new(height, prev, txs);
        self.blocks.push(block.clone());
        block
    }

    fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        for b in &self.blocks {
            enc.field(&b.encode());
        }
        enc.finish()
    }
}

/// The ledger. Submissions and sealing take an exclusive lock; queries
/// share a read lock and only see sealed state.
pub struct Ledger {
    state: RwLock<State>,
}

impl Ledger {
    /// A fresh chain whose genesis block deploys the actor registry with
    /// the given certifiers.
    pub fn genesis(deployer: &SigningKey, certifiers: &[Address]) -> Self {
        let mut state = State::default();
        let tx = TxBody::new(
            &deployer.verifying_key(),
            Contract::ActorRegistry,
            "deploy",
            deploy_args(certifiers),
            1,
        )
        .sign(deployer);
        state.accept(tx).expect("genesis deployment is well-formed");
        state.seal();
        Self {
            state: RwLock::new(state),
        }
    }

    /// Genesis backed by an append-only file at `path`, which must not exist.
    pub fn create_file(
        path: &Path,
        deployer: &SigningKey,
        certifiers: &[Address],
    ) -> Result<Self, LedgerError> {
        let ledger = Self::genesis(deployer, certifiers);
        let mut file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(path)
            .map_err(|e| LedgerError::Io(e.to_string()))?;
        let bytes = ledger.to_bytes();
        file.write_all(&bytes)
            .and_then(|_| file.sync_data())
            .map_err(|e| LedgerError::Io(e.to_string()))?;
        ledger.state.write().unwrap().sink = Some(file);
        Ok(ledger)
    }

    pub fn open_file(path: &Path) -> Result<Self, LedgerError> {
        let bytes = std::fs::read(path).map_err(|e| LedgerError::Io(e.to_string()))?;
        let ledger = Self::from_bytes(&bytes)?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| LedgerError::Io(e.to_string()))?;
        ledger.state.write().unwrap().sink = Some(file);
        Ok(ledger)
    }

    /// Rebuilds a ledger by verifying and replaying serialized blocks.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LedgerError> {
        let v = verify_ledger_bytes(bytes);
        if let Some(h) = v.first_invalid {
            return Err(LedgerError::Corrupt(h));
        }
        let (blocks, _) = decode_blocks(bytes);
        let mut state = State::default();
        for block in blocks {
            for tx in block.txs.clone() {
                state.accept(tx).map_err(|_| LedgerError::Corrupt(block.height))?;
            }
            let replayed = state.seal();
            if replayed != block {
                return Err(LedgerError::Corrupt(block.height));
            }
        }
        Ok(Self {
            state: RwLock::new(state),
        })
    }

    /// Canonical serialization: one length-prefixed field per block.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.state.read().unwrap().encode()
    }

    pub fn submit(&self, tx: Transaction) -> Result<TxReceipt, LedgerError> {
        self.state.write().unwrap().accept(tx)
    }

    /// Decodes a wire-format transaction and submits it.
    pub fn submit_encoded(&self, bytes: &[u8]) -> Result<TxReceipt, LedgerError> {
        self.submit(Transaction::decode(bytes)?)
    }

    pub fn seal_block(&self) -> Result<Block, LedgerError> {
        let mut state = self.state.write().unwrap();
        let block = state.seal();
        if let Some(file) = state.sink.as_mut() {
            let mut enc = Encoder::new();
            enc.field(&block.encode());
            file.write_all(&enc.finish())
                .and_then(|_| file.sync_data())
                .map_err(|e| LedgerError::Io(e.to_string()))?;
        }
        Ok(block)
    }

    /// Submits, seals, and maps a contract rejection to an error.
    pub fn submit_and_seal(&self, tx: Transaction) -> Result<TxReceipt, LedgerError> {
        let receipt = self.submit(tx)?;
        self.seal_block()?;
        let status = self.receipt(&receipt.tx_hash).expect("receipt recorded").status;
        match status {
            TxStatus::Rejected { reason, .. } => Err(LedgerError::MethodRejected(reason)),
            status => Ok(TxReceipt {
                tx_hash: receipt.tx_hash,
                status,
            }),
        }
    }

    pub fn receipt(&self, tx_hash: &Digest32) -> Option<TxReceipt> {
        self.state
            .read()
            .unwrap()
            .receipts
            .get(tx_hash)
            .map(|status| TxReceipt {
                tx_hash: *tx_hash,
                status: status.clone(),
            })
    }

    /// Nonce the sender's next transaction must carry.
    pub fn next_nonce(&self, sender: &Address) -> u64 {
        self.state.read().unwrap().nonces.get(sender).copied().unwrap_or(0) + 1
    }

    pub fn message_store(
        &self,
        signer: &SigningKey,
        message_id: &[u8; MESSAGE_ID_LEN],
        locator: &str,
    ) -> Result<TxReceipt, LedgerError> {
        let key = signer.verifying_key();
        let nonce = self.next_nonce(&Address::from_public_key(&key));
        let tx = TxBody::new(
            &key,
            Contract::MessageRegistry,
            "store",
            message_store_args(message_id, locator),
            nonce,
        )
        .sign(signer);
        self.submit(tx)
    }

    pub fn message_get(&self, message_id: &[u8; MESSAGE_ID_LEN]) -> Result<MessageRecord, LedgerError> {
        self.state
            .read()
            .unwrap()
            .contracts
            .messages
            .get(message_id)
            .cloned()
            .ok_or(LedgerError::NotFound)
    }

    /// Unsigned certify call, to be signed by the certifier.
    pub fn prepare_actor_certify(
        &self,
        certifier_key: &ed25519_dalek::VerifyingKey,
        actor: &Address,
        locator: &str,
    ) -> TxBody {
        let nonce = self.next_nonce(&Address::from_public_key(certifier_key));
        TxBody::new(
            certifier_key,
            Contract::ActorRegistry,
            "certify",
            actor_certify_args(actor, locator),
            nonce,
        )
    }

    pub fn actor_certify(
        &self,
        signer: &SigningKey,
        actor: &Address,
        locator: &str,
    ) -> Result<TxReceipt, LedgerError> {
        let tx = self
            .prepare_actor_certify(&signer.verifying_key(), actor, locator)
            .sign(signer);
        self.submit(tx)
    }

    pub fn actor_get(&self, actor: &Address) -> Result<ActorRecord, LedgerError> {
        self.state
            .read()
            .unwrap()
            .contracts
            .actors
            .get(actor)
            .cloned()
            .ok_or(LedgerError::NotFound)
    }

    pub fn certifiers(&self) -> BTreeSet<Address> {
        self.state
            .read()
            .unwrap()
            .contracts
            .certifiers
            .clone()
            .unwrap_or_default()
    }

    pub fn is_certifier(&self, address: &Address) -> bool {
        self.certifiers().contains(address)
    }

    /// Height of the latest sealed block.
    pub fn height(&self) -> u64 {
        self.state.read().unwrap().blocks.len().saturating_sub(1) as u64
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.state.read().unwrap().blocks.clone()
    }

    pub fn block(&self, height: u64) -> Option<Block> {
        self.state.read().unwrap().blocks.get(height as usize).cloned()
    }

    pub fn verify_chain(&self) -> ChainVerification {
        verify_blocks(&self.state.read().unwrap().blocks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(seed: u8) -> SigningKey {
        SigningKey::from_bytes(&[seed; 32])
    }

    fn addr(k: &SigningKey) -> Address {
        Address::from_public_key(&k.verifying_key())
    }

    struct Fixture {
        ledger: Ledger,
        certifier: SigningKey,
        sdm: SigningKey,
    }

    fn fixture() -> Fixture {
        let certifier = key(1);
        let ledger = Ledger::genesis(&certifier, &[addr(&certifier)]);
        Fixture {
            ledger,
            certifier,
            sdm: key(2),
        }
    }

    #[test]
    fn genesis_is_block_zero() {
        let f = fixture();
        let g = f.ledger.block(0).unwrap();
        assert_eq!(g.prev_hash, [0; 32]);
        assert_eq!(g.txs.len(), 1);
        assert_eq!(f.ledger.height(), 0);
        assert!(f.ledger.verify_chain().is_valid());
        assert!(f.ledger.is_certifier(&addr(&f.certifier)));
    }

    #[test]
    fn store_then_get_after_seal() {
        let f = fixture();
        let id = [7u8; 16];
        let receipt = f.ledger.message_store(&f.sdm, &id, "QmX").unwrap();
        assert_eq!(receipt.status, TxStatus::Pending);
        assert_eq!(f.ledger.message_get(&id), Err(LedgerError::NotFound));
        f.ledger.seal_block().unwrap();
        let rec = f.ledger.message_get(&id).unwrap();
        assert_eq!(rec.locator, "QmX");
        assert_eq!(rec.sender, addr(&f.sdm));
        assert_eq!(rec.height, 1);
        assert_eq!(
            f.ledger.receipt(&receipt.tx_hash).unwrap().status,
            TxStatus::Applied { height: 1 }
        );
    }

    #[test]
    fn message_registry_is_write_once() {
        let f = fixture();
        let id = [1u8; 16];
        f.ledger.message_store(&f.sdm, &id, "QmA").unwrap();
        f.ledger.seal_block().unwrap();
        let second = f.ledger.message_store(&f.sdm, &id, "QmB").unwrap();
        f.ledger.seal_block().unwrap();
        assert_eq!(
            f.ledger.receipt(&second.tx_hash).unwrap().status,
            TxStatus::Rejected {
                height: 2,
                reason: Rejection::AlreadyRecorded
            }
        );
        assert_eq!(f.ledger.message_get(&id).unwrap().locator, "QmA");
    }

    #[test]
    fn nonce_and_signature_checks_at_submit() {
        let f = fixture();
        let k = f.sdm.verifying_key();
        let args = message_store_args(&[0; 16], "Qm");
        let bad_nonce = TxBody::new(&k, Contract::MessageRegistry, "store", args.clone(), 2)
            .sign(&f.sdm);
        assert_eq!(
            f.ledger.submit(bad_nonce),
            Err(LedgerError::BadNonce { expected: 1, got: 2 })
        );
        let mut bad_sig =
            TxBody::new(&k, Contract::MessageRegistry, "store", args.clone(), 1).sign(&f.sdm);
        bad_sig.signature[10] ^= 0x40;
        assert_eq!(f.ledger.submit(bad_sig), Err(LedgerError::BadSignature));

        let ok = TxBody::new(&k, Contract::MessageRegistry, "store", args, 1).sign(&f.sdm);
        f.ledger.submit(ok.clone()).unwrap();
        assert!(matches!(f.ledger.submit(ok), Err(LedgerError::BadNonce { .. })));

        let mut bytes = ok_tx_bytes(&f);
        bytes[64] = 0x33;
        assert_eq!(
            f.ledger.submit_encoded(&bytes),
            Err(LedgerError::UnknownContract(0x33))
        );
    }

    fn ok_tx_bytes(f: &Fixture) -> Vec<u8> {
        let k = key(9);
        let _ = f;
        TxBody::new(&k.verifying_key(), Contract::MessageRegistry, "store", vec![], 1)
            .sign(&k)
            .encode()
    }

    #[test]
    fn unknown_method_is_rejected_at_seal() {
        let f = fixture();
        let k = f.sdm.verifying_key();
        let tx = TxBody::new(&k, Contract::MessageRegistry, "erase", vec![], 1).sign(&f.sdm);
        assert_eq!(
            f.ledger.submit_and_seal(tx),
            Err(LedgerError::MethodRejected(Rejection::UnknownMethod("erase".into())))
        );
    }

    #[test]
    fn certifier_gate_and_last_write_wins() {
        let f = fixture();
        let actor = Address::from_bytes([5; 20]);
        let outsider = key(3);
        let r = f.ledger.actor_certify(&outsider, &actor, "QmBad").unwrap();
        f.ledger.seal_block().unwrap();
        assert!(matches!(
            f.ledger.receipt(&r.tx_hash).unwrap().status,
            TxStatus::Rejected { reason: Rejection::NotCertifier, .. }
        ));
        assert_eq!(f.ledger.actor_get(&actor), Err(LedgerError::NotFound));

        f.ledger.actor_certify(&f.certifier, &actor, "QmOne").unwrap();
        f.ledger.seal_block().unwrap();
        assert_eq!(f.ledger.actor_get(&actor).unwrap().locator, "QmOne");
        f.ledger.actor_certify(&f.certifier, &actor, "QmTwo").unwrap();
        f.ledger.seal_block().unwrap();
        let rec = f.ledger.actor_get(&actor).unwrap();
        assert_eq!(rec.locator, "QmTwo");
        assert_eq!(rec.certifier, addr(&f.certifier));
    }

    #[test]
    fn second_deploy_is_rejected() {
        let f = fixture();
        let k = f.certifier.verifying_key();
        let tx = TxBody::new(&k, Contract::ActorRegistry, "deploy", deploy_args(&[]), 2)
            .sign(&f.certifier);
        assert_eq!(
            f.ledger.submit_and_seal(tx),
            Err(LedgerError::MethodRejected(Rejection::AlreadyDeployed))
        );
    }

    #[test]
    fn empty_seals_link_up() {
        let f = fixture();
        let blocks: Vec<Block> = (0..3).map(|_| f.ledger.seal_block().unwrap()).collect();
        for (i, b) in blocks.iter().enumerate() {
            assert!(b.txs.is_empty());
            assert_eq!(b.height, i as u64 + 1);
        }
        assert_eq!(blocks[1].prev_hash, blocks[0].block_hash);
        assert_eq!(blocks[2].prev_hash, blocks[1].block_hash);
        assert!(f.ledger.verify_chain().is_valid());
    }

    #[test]
    fn replay_reproduces_hashes() {
        let run = || {
            let f = fixture();
            for i in 0..4u8 {
                f.ledger.message_store(&f.sdm, &[i; 16], &format!("Qm{i}")).unwrap();
                if i % 2 == 1 {
                    f.ledger.seal_block().unwrap();
                }
            }
            f.ledger
        };
        let a = run();
        let b = run();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let restored = Ledger::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(restored.to_bytes(), a.to_bytes());
        assert_eq!(restored.message_get(&[3; 16]).unwrap().locator, "Qm3");
        assert_eq!(restored.next_nonce(&addr(&key(2))), 5);
    }

    #[test]
    fn tampered_block_fails_at_its_height() {
        let f = fixture();
        f.ledger.message_store(&f.sdm, &[1; 16], "QmA").unwrap();
        f.ledger.seal_block().unwrap();
        f.ledger.seal_block().unwrap();
        let mut blocks = f.ledger.blocks();
        blocks[1].txs[0].body.args[5] ^= 1;
        assert_eq!(verify_blocks(&blocks).first_invalid, Some(1));

        let mut blocks = f.ledger.blocks();
        blocks[2].prev_hash[0] ^= 1;
        assert_eq!(verify_blocks(&blocks).first_invalid, Some(2));
        assert!(Ledger::from_bytes(&[0, 0, 0, 1, 0]).is_err());
    }

    #[test]
    fn file_backed_ledger_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.bin");
        let certifier = key(1);
        {
            let ledger = Ledger::create_file(&path, &certifier, &[addr(&certifier)]).unwrap();
            ledger.message_store(&key(2), &[4; 16], "QmFile").unwrap();
            ledger.seal_block().unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), ledger.to_bytes());
        }
        let reopened = Ledger::open_file(&path).unwrap();
        assert_eq!(reopened.message_get(&[4; 16]).unwrap().locator, "QmFile");
        assert!(Ledger::create_file(&path, &certifier, &[]).is_err());
    }
}

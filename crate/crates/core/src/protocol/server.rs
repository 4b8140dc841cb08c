use std::io::{self, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use ed25519_dalek::VerifyingKey;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::handshake::{server_handshake, ReplayGuard, Session};
use super::identity::{ActorMetadata, Identity, KeyDirectory};
use super::messages::{Request, Response};
use super::wire::Channel;
use super::ProtocolError;
use crate::abe::{self, encrypt_container, MasterSecret, SliceInput, UserKey, MESSAGE_ID_LEN};
use crate::cas::{parse_locator, ContentStore, Locator};
use crate::crypto::{self, KEY_LEN};
use crate::ledger::{Address, Ledger, LedgerError, Rejection, TxStatus};
use crate::policy::AttributeSet;

const HANDLE_LABEL: &[u8] = b"cake/actor-handle/v1";

pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

/// Seconds since the Unix epoch.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Logical clock: returns `start`, then `start + 1`, and so on.
#[derive(Debug, Default)]
pub struct FixedClock {
    next: AtomicU64,
}

impl FixedClock {
    pub fn new(start: u64) -> Self {
        Self {
            next: AtomicU64::new(start),
        }
    }
}

impl Clock for FixedClock {
    fn now(&self) -> u64 {
        self.next.fetch_add(1, Ordering::SeqCst)
    }
}

/// Keyed blinding of actor addresses. The actor registry is indexed by
/// the handle, so the ledger never shows which address holds which
/// attributes.
#[derive(Clone)]
pub struct ActorBlinding {
    key: [u8; KEY_LEN],
}

impl ActorBlinding {
    pub fn from_master(ms: &MasterSecret) -> Self {
        Self {
            key: ms.derive(HANDLE_LABEL),
        }
    }

    pub fn handle(&self, actor: &Address) -> Address {
        let out = crypto::kdf(&self.key, actor.as_bytes());
        let mut h = [0u8; 20];
        h.copy_from_slice(&out[..20]);
        Address::from_bytes(h)
    }
}

/// Registry handle for `actor` under the deployment's master secret.
pub fn actor_handle(ms: &MasterSecret, actor: &Address) -> Address {
    ActorBlinding::from_master(ms).handle(actor)
}

/// Shared infrastructure every service talks to.
#[derive(Clone)]
pub struct Deployment {
    pub ledger: Arc<Ledger>,
    pub store: Arc<ContentStore>,
    pub directory: Arc<KeyDirectory>,
    pub clock: Arc<dyn Clock>,
}

/// Per-service state used by the connection loop.
pub struct ServiceCore {
    identity: Identity,
    directory: Arc<KeyDirectory>,
    replay: ReplayGuard,
    rng: Mutex<ChaCha20Rng>,
}

impl ServiceCore {
    fn new(identity: Identity, directory: Arc<KeyDirectory>, rng: ChaCha20Rng) -> Self {
        Self {
            identity,
            directory,
            replay: ReplayGuard::new(),
            rng: Mutex::new(rng),
        }
    }

    fn fork_rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.rng.lock().unwrap().gen())
    }
}

/// Lets a handler send an interim response and wait for the client's
/// next request within the same session.
pub trait Conversation {
    fn exchange(&mut self, interim: &Response) -> Result<Request, ProtocolError>;
}

struct SessionConversation<'a, S> {
    session: &'a mut Session,
    chan: &'a mut Channel<S>,
}

impl<S: Read + Write> Conversation for SessionConversation<'_, S> {
    fn exchange(&mut self, interim: &Response) -> Result<Request, ProtocolError> {
        self.session.send(self.chan, &interim.encode())?;
        let pt = self.session.recv(self.chan)?;
        Ok(Request::decode(&pt)?)
    }
}

pub trait Service: Send + Sync {
    fn core(&self) -> &ServiceCore;

    fn handle(
        &self,
        peer: Address,
        request: Request,
        conv: &mut dyn Conversation,
    ) -> Result<Response, ProtocolError>;

    fn identity(&self) -> &Identity {
        &self.core().identity
    }
}

/// Runs one connection: handshake, then request/response until the
/// client hangs up. Handler errors go back as error frames; transport
/// and channel integrity errors end the connection.
pub fn serve_connection<S: Read + Write>(
    service: &dyn Service,
    mut chan: Channel<S>,
) -> Result<(), ProtocolError> {
    let core = service.core();
    let mut rng = core.fork_rng();
    let mut session =
        server_handshake(&mut chan, &core.identity, &core.directory, &core.replay, &mut rng)?;
    let peer = session.peer();
    loop {
        let frame = match chan.recv() {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let plaintext = session.open(&frame)?;
        let result = Request::decode(&plaintext)
            .map_err(ProtocolError::from)
            .and_then(|req| {
                let mut conv = SessionConversation {
                    session: &mut session,
                    chan: &mut chan,
                };
                service.handle(peer, req, &mut conv)
            });
        let response = result.unwrap_or_else(|e| Response::Error {
            code: e.code(),
            detail: e.detail(),
        });
        session.send(&mut chan, &response.encode())?;
    }
}

/// Accepts connections forever, one thread each.
pub fn serve_tcp(listener: TcpListener, service: Arc<dyn Service>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let service = service.clone();
        std::thread::spawn(move || {
            let _ = serve_connection(&*service, Channel::new(stream));
        });
    }
    Ok(())
}

fn map_rejection(e: LedgerError) -> ProtocolError {
    match e {
        LedgerError::MethodRejected(Rejection::NotCertifier) => ProtocolError::NotCertifier,
        other => other.into(),
    }
}

/// Encrypts submissions, stores the container, and records its locator
/// on the ledger under a fresh message id.
pub struct SecureDataManager {
    core: ServiceCore,
    master: Arc<MasterSecret>,
    ledger: Arc<Ledger>,
    store: Arc<ContentStore>,
    submit: Mutex<()>,
}

impl SecureDataManager {
    pub fn new(
        identity: Identity,
        master: Arc<MasterSecret>,
        deployment: &Deployment,
        rng: ChaCha20Rng,
    ) -> Self {
        Self {
            core: ServiceCore::new(identity, deployment.directory.clone(), rng),
            master,
            ledger: deployment.ledger.clone(),
            store: deployment.store.clone(),
            submit: Mutex::new(()),
        }
    }

    pub fn store(&self, slices: &[SliceInput]) -> Result<([u8; MESSAGE_ID_LEN], Locator), ProtocolError> {
        if slices.is_empty() {
            return Err(ProtocolError::EmptyContainer);
        }
        // one submitter at a time keeps the SDM's nonces in order
        let _guard = self.submit.lock().unwrap();
        let mut rng = self.core.fork_rng();
        let message_id = loop {
            let id: [u8; MESSAGE_ID_LEN] = rng.gen();
            if matches!(self.ledger.message_get(&id), Err(LedgerError::NotFound)) {
                break id;
            }
        };
        let container = encrypt_container(&self.master, message_id, slices, &mut rng)?;
        let locator = self.store.put(&container.encode())?;
        let receipt = self.ledger.message_store(
            self.core.identity.signing_key(),
            &message_id,
            &locator.to_string(),
        )?;
        self.ledger.seal_block()?;
        match self.ledger.receipt(&receipt.tx_hash).map(|r| r.status) {
            Some(TxStatus::Applied { .. }) => Ok((message_id, locator)),
            Some(TxStatus::Rejected { reason, .. }) => {
                Err(ProtocolError::LedgerRejected(reason.to_string()))
            }
            _ => Err(ProtocolError::Internal("transaction not sealed".into())),
        }
    }
}

impl Service for SecureDataManager {
    fn core(&self) -> &ServiceCore {
        &self.core
    }

    fn handle(
        &self,
        _peer: Address,
        request: Request,
        _conv: &mut dyn Conversation,
    ) -> Result<Response, ProtocolError> {
        match request {
            Request::Store { slices } => {
                let (message_id, locator) = self.store(&slices)?;
                Ok(Response::Stored {
                    message_id,
                    locator,
                })
            }
            _ => Err(ProtocolError::Malformed("unsupported request".into())),
        }
    }
}

/// Records certified attributes. The certifier signs the registry write
/// itself; the directory prepares it and submits it.
pub struct UserDirectory {
    core: ServiceCore,
    blinding: ActorBlinding,
    deployment: Deployment,
    submit: Mutex<()>,
}

impl UserDirectory {
    pub fn new(
        identity: Identity,
        blinding: ActorBlinding,
        deployment: &Deployment,
        rng: ChaCha20Rng,
    ) -> Self {
        Self {
            core: ServiceCore::new(identity, deployment.directory.clone(), rng),
            blinding,
            deployment: deployment.clone(),
            submit: Mutex::new(()),
        }
    }

    fn certify(
        &self,
        certifier: Address,
        actor: Address,
        attributes: AttributeSet,
        conv: &mut dyn Conversation,
    ) -> Result<Response, ProtocolError> {
        let d = &self.deployment;
        if !d.ledger.is_certifier(&certifier) {
            return Err(ProtocolError::NotCertifier);
        }
        if attributes.is_empty() {
            return Err(ProtocolError::EmptyAttributeSet);
        }
        let certifier_key: VerifyingKey = d
            .directory
            .resolve(&certifier)
            .ok_or(ProtocolError::UnknownClient)?;
        let metadata = ActorMetadata {
            actor,
            attributes,
            certified_at: d.clock.now(),
            certifier,
        }
        .encode();
        let locator = d.store.put(&metadata)?;

        let _guard = self.submit.lock().unwrap();
        let body = d.ledger.prepare_actor_certify(
            &certifier_key,
            &self.blinding.handle(&actor),
            &locator.to_string(),
        );
        let reply = conv.exchange(&Response::CertifyPrepared {
            metadata,
            tx_body: body.signing_bytes(),
        })?;
        let Request::CertifySignature { signature } = reply else {
            return Err(ProtocolError::Malformed("expected certify signature".into()));
        };
        let tx = body.with_signature(signature);
        tx.verify_signature().map_err(|_| ProtocolError::AuthFailure)?;
        d.ledger.submit_and_seal(tx).map_err(map_rejection)?;
        Ok(Response::Certified { locator })
    }
}

impl Service for UserDirectory {
    fn core(&self) -> &ServiceCore {
        &self.core
    }

    fn handle(
        &self,
        peer: Address,
        request: Request,
        conv: &mut dyn Conversation,
    ) -> Result<Response, ProtocolError> {
        match request {
            Request::Certify { actor, attributes } => self.certify(peer, actor, attributes, conv),
            _ => Err(ProtocolError::Malformed("unsupported request".into())),
        }
    }
}

/// Issues user keys for exactly the attributes on record for the caller.
pub struct SecureKeyManager {
    core: ServiceCore,
    master: Arc<MasterSecret>,
    blinding: ActorBlinding,
    deployment: Deployment,
}

impl SecureKeyManager {
    pub fn new(
        identity: Identity,
        master: Arc<MasterSecret>,
        deployment: &Deployment,
        rng: ChaCha20Rng,
    ) -> Self {
        Self {
            core: ServiceCore::new(identity, deployment.directory.clone(), rng),
            blinding: ActorBlinding::from_master(&master),
            master,
            deployment: deployment.clone(),
        }
    }

    pub fn issue_key(&self, caller: Address) -> Result<UserKey, ProtocolError> {
        let d = &self.deployment;
        let record = match d.ledger.actor_get(&self.blinding.handle(&caller)) {
            Ok(r) => r,
            Err(LedgerError::NotFound) => return Err(ProtocolError::NotCertified),
            Err(e) => return Err(e.into()),
        };
        let locator =
            parse_locator(&record.locator).map_err(|_| ProtocolError::IntegrityViolation)?;
        let bytes = d.store.get(&locator)?;
        let metadata =
            ActorMetadata::decode(&bytes).map_err(|_| ProtocolError::IntegrityViolation)?;
        if metadata.actor != caller || metadata.certifier != record.certifier {
            return Err(ProtocolError::IntegrityViolation);
        }
        Ok(abe::keygen(
            &self.master,
            caller,
            &metadata.attributes,
            d.clock.now(),
        )?)
    }
}

impl Service for SecureKeyManager {
    fn core(&self) -> &ServiceCore {
        &self.core
    }

    fn handle(
        &self,
        peer: Address,
        request: Request,
        _conv: &mut dyn Conversation,
    ) -> Result<Response, ProtocolError> {
        match request {
            Request::KeyRequest => Ok(Response::Key {
                key: self.issue_key(peer)?,
            }),
            _ => Err(ProtocolError::Malformed("unsupported request".into())),
        }
    }
}

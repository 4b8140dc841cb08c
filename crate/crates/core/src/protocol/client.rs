use std::io::{Read, Write};

use ed25519_dalek::Signer;
use rand::{CryptoRng, RngCore};

use super::handshake::{client_handshake, Session};
use super::identity::{ActorMetadata, Identity, PublicIdentity};
use super::messages::{Request, Response};
use super::wire::Channel;
use super::ProtocolError;
use crate::abe::{decrypt_container, AbeError, CiphertextContainer, SliceInput, UserKey, MESSAGE_ID_LEN};
use crate::cas::{parse_locator, ContentStore, Locator};
use crate::codec::Decoder;
use crate::ledger::{Address, Contract, Ledger, TxBody};
use crate::policy::AttributeSet;

/// A decrypted slice, or why it could not be read.
pub type SliceOutcome = (String, Result<Vec<u8>, AbeError>);

/// An authenticated client connection to one service.
pub struct Connection<S> {
    chan: Channel<S>,
    session: Session,
    me: Address,
}

pub fn connect<S, R>(
    mut chan: Channel<S>,
    me: &Identity,
    server: &PublicIdentity,
    rng: &mut R,
) -> Result<Connection<S>, ProtocolError>
where
    S: Read + Write,
    R: RngCore + CryptoRng + ?Sized,
{
    let session = client_handshake(&mut chan, me, server, rng)?;
    Ok(Connection {
        chan,
        session,
        me: me.address(),
    })
}

impl<S: Read + Write> Connection<S> {
    pub fn session(&self) -> &Session {
        &self.session
    }

    /// Sends one request and returns the reply, turning error frames
    /// into errors.
    pub fn call(&mut self, request: &Request) -> Result<Response, ProtocolError> {
        self.session.send(&mut self.chan, &request.encode())?;
        let pt = self.session.recv(&mut self.chan)?;
        match Response::decode(&pt)? {
            Response::Error { code, detail } => Err(ProtocolError::from_wire(code, detail)),
            r => Ok(r),
        }
    }

    /// Submits a document to the data manager.
    pub fn store(
        &mut self,
        slices: Vec<SliceInput>,
    ) -> Result<([u8; MESSAGE_ID_LEN], Locator), ProtocolError> {
        match self.call(&Request::Store { slices })? {
            Response::Stored {
                message_id,
                locator,
            } => Ok((message_id, locator)),
            _ => Err(ProtocolError::Malformed("expected stored".into())),
        }
    }

    /// Certifies `actor` at the user directory. `me` must be the identity
    /// this connection was opened with; it signs the registry write after
    /// checking that it records exactly the requested metadata.
    pub fn certify(
        &mut self,
        me: &Identity,
        actor: Address,
        attributes: AttributeSet,
    ) -> Result<Locator, ProtocolError> {
        let prepared = self.call(&Request::Certify {
            actor,
            attributes: attributes.clone(),
        })?;
        let Response::CertifyPrepared { metadata, tx_body } = prepared else {
            return Err(ProtocolError::Malformed("expected certify preparation".into()));
        };
        let meta = ActorMetadata::decode(&metadata)?;
        if meta.actor != actor || meta.attributes != attributes || meta.certifier != me.address()
        {
            return Err(ProtocolError::IntegrityViolation);
        }
        let body = TxBody::decode(&tx_body).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let expected = Locator::for_bytes(&metadata);
        if body.sender != me.address()
            || body.sender_key != me.signing_key().verifying_key().to_bytes()
            || body.contract != Contract::ActorRegistry
            || body.method != "certify"
            || certify_args_locator(&body.args) != Some(expected.to_string())
        {
            return Err(ProtocolError::IntegrityViolation);
        }
        let signature = me.signing_key().sign(&tx_body).to_bytes();
        match self.call(&Request::CertifySignature { signature })? {
            Response::Certified { locator } if locator == expected => Ok(locator),
            Response::Certified { .. } => Err(ProtocolError::IntegrityViolation),
            _ => Err(ProtocolError::Malformed("expected certified".into())),
        }
    }

    /// Asks the key manager for this identity's user key.
    pub fn request_key(&mut self) -> Result<UserKey, ProtocolError> {
        match self.call(&Request::KeyRequest)? {
            Response::Key { key } if key.holder == self.me => Ok(key),
            Response::Key { .. } => Err(ProtocolError::IntegrityViolation),
            _ => Err(ProtocolError::Malformed("expected key".into())),
        }
    }
}

fn certify_args_locator(args: &[u8]) -> Option<String> {
    let mut dec = Decoder::new(args);
    dec.fixed::<20>().ok()?;
    let loc = dec.string().ok()?;
    dec.finish().ok()?;
    Some(loc)
}

/// Resolves a message id to its container and decrypts every slice the
/// key allows. Any sign of tampering along the way fails the whole read.
pub fn client_read(
    ledger: &Ledger,
    store: &ContentStore,
    message_id: &[u8; MESSAGE_ID_LEN],
    key: &UserKey,
) -> Result<Vec<SliceOutcome>, ProtocolError> {
    let record = ledger.message_get(message_id)?;
    let locator =
        parse_locator(&record.locator).map_err(|_| ProtocolError::IntegrityViolation)?;
    let bytes = store.get(&locator)?;
    let container =
        CiphertextContainer::decode(&bytes).map_err(|_| ProtocolError::IntegrityViolation)?;
    if &container.message_id != message_id {
        return Err(ProtocolError::IntegrityViolation);
    }
    let outcomes = decrypt_container(key, &container);
    if outcomes
        .iter()
        .any(|(_, r)| matches!(r, Err(AbeError::IntegrityFailure)))
    {
        return Err(ProtocolError::IntegrityViolation);
    }
    Ok(outcomes)
}

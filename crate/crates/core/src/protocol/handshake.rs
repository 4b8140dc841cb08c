//! Mutually authenticated key agreement.
//!
//! ```text
//! C -> S  ClientHello      { address, ephemeral, nonce }
//! S -> C  ServerChallenge  { ephemeral, nonce, sign_S("server" || th) }
//! C -> S  ClientAuth       { sign_C("client" || th) }
//! S -> C  sealed Ready
//! ```
//!
//! `th` hashes the hello, the server's ephemeral and nonce, and both
//! parties' long-term public keys. The session key is
//! `HKDF(salt = th, DH(e_C, e_S) || DH(e_C, s_S))`.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::sync::Mutex;

use ed25519_dalek::{Signature, Signer, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use x25519_dalek::{PublicKey as DhPublic, StaticSecret};

use super::identity::{Identity, KeyDirectory, PublicIdentity};
use super::messages::{
    decode_reject, encode_reject, ClientAuth, ClientHello, Response, ServerChallenge,
    TAG_CLIENT_AUTH, TAG_CLIENT_HELLO,
};
use super::wire::Channel;
use super::ProtocolError;
use crate::codec::Encoder;
use crate::crypto::{self, Digest32, KEY_LEN, NONCE_LEN};
use crate::ledger::Address;

const TRANSCRIPT_LABEL: &[u8] = b"cake/handshake/v1";
const SERVER_SIG_LABEL: &[u8] = b"cake/handshake/server";
const CLIENT_SIG_LABEL: &[u8] = b"cake/handshake/client";
const SESSION_LABEL: &[u8] = b"cake/session/v1";

/// Client nonces seen by a server. Each may open one session only.
#[derive(Debug, Default)]
pub struct ReplayGuard {
    seen: Mutex<HashSet<[u8; 32]>>,
}

impl ReplayGuard {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `nonce`; false if it was already recorded.
    pub fn admit(&self, nonce: &[u8; 32]) -> bool {
        self.seen.lock().unwrap().insert(*nonce)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Client,
    Server,
}

impl Role {
    fn direction(self) -> u32 {
        match self {
            Role::Client => 0,
            Role::Server => 1,
        }
    }

    fn peer(self) -> Role {
        match self {
            Role::Client => Role::Server,
            Role::Server => Role::Client,
        }
    }
}

/// Keys and counters of an established channel.
pub struct Session {
    role: Role,
    peer: Address,
    key: [u8; KEY_LEN],
    transcript: Digest32,
    sent: u64,
    received: u64,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("role", &self.role)
            .field("peer", &self.peer)
            .field("sent", &self.sent)
            .field("received", &self.received)
            .finish()
    }
}

fn frame_nonce(role: Role, counter: u64) -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    n[..4].copy_from_slice(&role.direction().to_be_bytes());
    n[4..].copy_from_slice(&counter.to_be_bytes());
    n
}

impl Session {
    pub fn role(&self) -> Role {
        self.role
    }

    /// Authenticated address of the other end.
    pub fn peer(&self) -> Address {
        self.peer
    }

    pub fn transcript_hash(&self) -> &Digest32 {
        &self.transcript
    }

    pub fn seal(&mut self, plaintext: &[u8]) -> Vec<u8> {
        let nonce = frame_nonce(self.role, self.sent);
        self.sent += 1;
        crypto::seal(&self.key, &nonce, &self.transcript, plaintext)
    }

    /// Opens the next frame from the peer. Reordered, replayed or
    /// modified frames fail.
    pub fn open(&mut self, frame: &[u8]) -> Result<Vec<u8>, ProtocolError> {
        let nonce = frame_nonce(self.role.peer(), self.received);
        let pt = crypto::open(&self.key, &nonce, &self.transcript, frame)
            .ok_or(ProtocolError::IntegrityViolation)?;
        self.received += 1;
        Ok(pt)
    }

    pub fn send<S: Read + Write>(
        &mut self,
        chan: &mut Channel<S>,
        plaintext: &[u8],
    ) -> Result<(), ProtocolError> {
        let frame = self.seal(plaintext);
        chan.send(&frame)?;
        Ok(())
    }

    pub fn recv<S: Read + Write>(&mut self, chan: &mut Channel<S>) -> Result<Vec<u8>, ProtocolError> {
        let frame = chan.recv()?;
        self.open(&frame)
    }
}

fn transcript_hash(
    hello: &[u8],
    server_ephemeral: &[u8; 32],
    server_nonce: &[u8; 32],
    server: &PublicIdentity,
    client_key: &VerifyingKey,
) -> Digest32 {
    let mut enc = Encoder::new();
    enc.field(TRANSCRIPT_LABEL)
        .field(hello)
        .field(server_ephemeral)
        .field(server_nonce)
        .field(server.signing_key.as_bytes())
        .field(server.static_key.as_bytes())
        .field(client_key.as_bytes());
    crypto::sha256(&enc.finish())
}

/// The bytes a client signs for `ClientAuth`, given its encoded hello
/// and the server's challenge.
pub fn client_signing_input(
    hello: &[u8],
    challenge: &ServerChallenge,
    server: &PublicIdentity,
    client_key: &VerifyingKey,
) -> Vec<u8> {
    let th = transcript_hash(hello, &challenge.ephemeral, &challenge.nonce, server, client_key);
    signed_message(CLIENT_SIG_LABEL, &th)
}

fn signed_message(label: &[u8], th: &Digest32) -> Vec<u8> {
    let mut m = label.to_vec();
    m.extend_from_slice(th);
    m
}

fn session_key(th: &Digest32, ee: &[u8; 32], es: &[u8; 32]) -> [u8; KEY_LEN] {
    let mut ikm = [0u8; 64];
    ikm[..32].copy_from_slice(ee);
    ikm[32..].copy_from_slice(es);
    crypto::kdf_salted(th, &ikm, SESSION_LABEL)
}

fn verify(key: &VerifyingKey, msg: &[u8], sig: &[u8; 64]) -> bool {
    key.verify(msg, &Signature::from_bytes(sig)).is_ok()
}

fn reject<S: Read + Write>(chan: &mut Channel<S>, err: ProtocolError) -> ProtocolError {
    // best effort: the peer may already be gone
    let _ = chan.send(&encode_reject(err.code(), &err.detail()));
    err
}

/// Runs the client side and returns the established session.
pub fn client_handshake<S, R>(
    chan: &mut Channel<S>,
    me: &Identity,
    server: &PublicIdentity,
    rng: &mut R,
) -> Result<Session, ProtocolError>
where
    S: Read + Write,
    R: RngCore + CryptoRng + ?Sized,
{
    // used for two exchanges, then dropped
    let eph = StaticSecret::random_from_rng(&mut *rng);
    let hello = ClientHello {
        address: me.address(),
        ephemeral: DhPublic::from(&eph).to_bytes(),
        nonce: crypto::random_bytes(rng),
    };
    let hello_bytes = hello.encode();
    chan.send(&hello_bytes)?;

    let reply = chan.recv()?;
    if let Some((code, detail)) = decode_reject(&reply) {
        return Err(ProtocolError::from_wire(code, detail));
    }
    let challenge = ServerChallenge::decode(&reply)?;
    let th = transcript_hash(
        &hello_bytes,
        &challenge.ephemeral,
        &challenge.nonce,
        server,
        &me.signing_key().verifying_key(),
    );
    if !verify(
        &server.signing_key,
        &signed_message(SERVER_SIG_LABEL, &th),
        &challenge.signature,
    ) {
        return Err(ProtocolError::AuthFailure);
    }

    let sig = me.signing_key().sign(&signed_message(CLIENT_SIG_LABEL, &th));
    chan.send(
        &ClientAuth {
            signature: sig.to_bytes(),
        }
        .encode(),
    )?;

    let server_eph = DhPublic::from(challenge.ephemeral);
    let ee = eph.diffie_hellman(&server_eph).to_bytes();
    let es = eph.diffie_hellman(&server.static_key).to_bytes();
    let mut session = Session {
        role: Role::Client,
        peer: server.address,
        key: session_key(&th, &ee, &es),
        transcript: th,
        sent: 0,
        received: 0,
    };

    let frame = chan.recv()?;
    if let Some((code, detail)) = decode_reject(&frame) {
        return Err(ProtocolError::from_wire(code, detail));
    }
    match Response::decode(&session.open(&frame).map_err(|_| ProtocolError::AuthFailure)?)? {
        Response::Ready => Ok(session),
        Response::Error { code, detail } => Err(ProtocolError::from_wire(code, detail)),
        _ => Err(ProtocolError::Malformed("expected ready".into())),
    }
}

/// Runs the server side. Failures are reported to the client in a
/// plaintext rejection frame before returning.
pub fn server_handshake<S, R>(
    chan: &mut Channel<S>,
    me: &Identity,
    directory: &KeyDirectory,
    replay: &ReplayGuard,
    rng: &mut R,
) -> Result<Session, ProtocolError>
where
    S: Read + Write,
    R: RngCore + CryptoRng + ?Sized,
{
    let hello_bytes = chan.recv()?;
    if hello_bytes.first() != Some(&TAG_CLIENT_HELLO) {
        return Err(reject(chan, ProtocolError::Unauthenticated));
    }
    let hello = match ClientHello::decode(&hello_bytes) {
        Ok(h) => h,
        Err(e) => return Err(reject(chan, e.into())),
    };
    let Some(client_key) = directory.resolve(&hello.address) else {
        return Err(reject(chan, ProtocolError::UnknownClient));
    };
    if !replay.admit(&hello.nonce) {
        return Err(reject(chan, ProtocolError::ReplayDetected));
    }

    let eph = StaticSecret::random_from_rng(&mut *rng);
    let eph_public = DhPublic::from(&eph).to_bytes();
    let nonce: [u8; 32] = crypto::random_bytes(rng);
    let th = transcript_hash(&hello_bytes, &eph_public, &nonce, &me.public(), &client_key);
    let signature = me.signing_key().sign(&signed_message(SERVER_SIG_LABEL, &th));
    chan.send(
        &ServerChallenge {
            ephemeral: eph_public,
            nonce,
            signature: signature.to_bytes(),
        }
        .encode(),
    )?;

    let auth_bytes = chan.recv()?;
    if auth_bytes.first() != Some(&TAG_CLIENT_AUTH) {
        return Err(reject(chan, ProtocolError::Unauthenticated));
    }
    let auth = match ClientAuth::decode(&auth_bytes) {
        Ok(a) => a,
        Err(e) => return Err(reject(chan, e.into())),
    };
    if !verify(&client_key, &signed_message(CLIENT_SIG_LABEL, &th), &auth.signature) {
        return Err(reject(chan, ProtocolError::AuthFailure));
    }

    let client_eph = DhPublic::from(hello.ephemeral);
    let ee = eph.diffie_hellman(&client_eph).to_bytes();
    let es = me.static_secret().diffie_hellman(&client_eph).to_bytes();
    let mut session = Session {
        role: Role::Server,
        peer: hello.address,
        key: session_key(&th, &ee, &es),
        transcript: th,
        sent: 0,
        received: 0,
    };
    session.send(chan, &Response::Ready.encode())?;
    Ok(session)
}

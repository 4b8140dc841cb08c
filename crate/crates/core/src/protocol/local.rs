use std::sync::Arc;
use std::thread;

use rand::{CryptoRng, RngCore};

use super::client::{connect, Connection};
use super::identity::Identity;
use super::server::{serve_connection, SecureDataManager, SecureKeyManager, Service, UserDirectory};
use super::wire::{pipe, Channel, PipeEnd, Trace};
use super::ProtocolError;

/// The three services reachable over in-process pipes. Each connection
/// is served on its own thread until the client drops it.
pub struct LocalNetwork {
    pub sdm: Arc<SecureDataManager>,
    pub ud: Arc<UserDirectory>,
    pub skm: Arc<SecureKeyManager>,
    trace: Option<Trace>,
}

impl LocalNetwork {
    pub fn new(
        sdm: Arc<SecureDataManager>,
        ud: Arc<UserDirectory>,
        skm: Arc<SecureKeyManager>,
    ) -> Self {
        Self {
            sdm,
            ud,
            skm,
            trace: None,
        }
    }

    /// Records every frame sent in either direction on later connections.
    pub fn with_trace(mut self, trace: Trace) -> Self {
        self.trace = Some(trace);
        self
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.trace.as_ref()
    }

    fn channel(&self, end: PipeEnd) -> Channel<PipeEnd> {
        match &self.trace {
            Some(t) => Channel::traced(end, t.clone()),
            None => Channel::new(end),
        }
    }

    /// Starts serving a fresh pipe and returns the client end, with no
    /// handshake done.
    pub fn open_raw(&self, service: Arc<dyn Service>) -> Channel<PipeEnd> {
        let (client, server) = pipe();
        let server = self.channel(server);
        thread::spawn(move || {
            let _ = serve_connection(&*service, server);
        });
        self.channel(client)
    }

    pub fn connect<R: RngCore + CryptoRng + ?Sized>(
        &self,
        service: Arc<dyn Service>,
        me: &Identity,
        rng: &mut R,
    ) -> Result<Connection<PipeEnd>, ProtocolError> {
        let public = service.identity().public();
        connect(self.open_raw(service), me, &public, rng)
    }

    pub fn connect_sdm<R: RngCore + CryptoRng + ?Sized>(
        &self,
        me: &Identity,
        rng: &mut R,
    ) -> Result<Connection<PipeEnd>, ProtocolError> {
        self.connect(self.sdm.clone(), me, rng)
    }

    pub fn connect_ud<R: RngCore + CryptoRng + ?Sized>(
        &self,
        me: &Identity,
        rng: &mut R,
    ) -> Result<Connection<PipeEnd>, ProtocolError> {
        self.connect(self.ud.clone(), me, rng)
    }

    pub fn connect_skm<R: RngCore + CryptoRng + ?Sized>(
        &self,
        me: &Identity,
        rng: &mut R,
    ) -> Result<Connection<PipeEnd>, ProtocolError> {
        self.connect(self.skm.clone(), me, rng)
    }
}

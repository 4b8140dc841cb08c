//! Reaching the services: over TCP when an endpoint variable is set,
//! otherwise by running them in-process against the home directory.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;

use cake_core::protocol::{
    connect, ActorBlinding, Channel, Connection, Deployment, Identity, LocalNetwork,
    SecureDataManager, SecureKeyManager, Service, SystemClock, UserDirectory,
};
use cake_core::ErrorClass;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::home::{Home, ServiceKind};
use crate::CliError;

pub trait Stream: Read + Write + Send {}
impl<T: Read + Write + Send> Stream for T {}

pub type ClientConnection = Connection<Box<dyn Stream>>;

fn fresh_rng() -> ChaCha20Rng {
    ChaCha20Rng::from_seed(rand::random())
}

/// The three services over the home directory's ledger and store.
pub struct Services {
    pub network: LocalNetwork,
}

impl Services {
    pub fn start(home: &Home) -> Result<Self, CliError> {
        let master = Arc::new(home.master()?);
        let deployment = Deployment {
            ledger: Arc::new(home.ledger()?),
            store: Arc::new(home.store()?),
            directory: Arc::new(home.directory()?),
            clock: Arc::new(SystemClock),
        };
        let sdm = SecureDataManager::new(
            home.service(ServiceKind::Sdm)?,
            master.clone(),
            &deployment,
            fresh_rng(),
        );
        let ud = UserDirectory::new(
            home.service(ServiceKind::Ud)?,
            ActorBlinding::from_master(&master),
            &deployment,
            fresh_rng(),
        );
        let skm = SecureKeyManager::new(
            home.service(ServiceKind::Skm)?,
            master,
            &deployment,
            fresh_rng(),
        );
        let network = LocalNetwork::new(Arc::new(sdm), Arc::new(ud), Arc::new(skm));
        Ok(Self { network })
    }

    pub fn service(&self, kind: ServiceKind) -> Arc<dyn Service> {
        match kind {
            ServiceKind::Sdm => self.network.sdm.clone(),
            ServiceKind::Ud => self.network.ud.clone(),
            ServiceKind::Skm => self.network.skm.clone(),
        }
    }
}

/// Opens an authenticated connection to `kind` as `me`.
pub fn open(home: &Home, kind: ServiceKind, me: &Identity) -> Result<(ClientConnection, Option<Services>), CliError> {
    let server = home.service(kind)?.public();
    let mut rng = rand::thread_rng();
    if let Ok(addr) = std::env::var(kind.env_var()) {
        let stream = TcpStream::connect(&addr).map_err(|e| {
            CliError::new(ErrorClass::Transport, format!("{}: {addr}: {e}", kind.name()))
        })?;
        let chan = Channel::new(Box::new(stream) as Box<dyn Stream>);
        return Ok((connect(chan, me, &server, &mut rng)?, None));
    }
    let services = Services::start(home)?;
    let raw = services.network.open_raw(services.service(kind));
    let chan = Channel::new(Box::new(raw.into_inner()) as Box<dyn Stream>);
    Ok((connect(chan, me, &server, &mut rng)?, Some(services)))
}

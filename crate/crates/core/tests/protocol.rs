use std::collections::HashSet;
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use cake_core::abe::{AbeError, CiphertextContainer, SliceInput};
use cake_core::cas::{ContentStore, MemoryBackend};
use cake_core::ledger::{Contract, TxStatus};
use cake_core::policy::attribute_set;
use cake_core::protocol::{
    client_read, connect, Channel, ClientAuth, ClientHello, ProtocolError, Request, Service,
    Trace, TAG_CLIENT_AUTH, TAG_CLIENT_HELLO,
};
use cake_core::scenario::{run_scenario_traced, ScenarioScript, ScenarioWorld};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn attrs(names: &[&str]) -> cake_core::AttributeSet {
    attribute_set(names.iter().copied()).unwrap()
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

#[test]
fn transport_trace_carries_no_plaintext_policy_or_key_material() {
    let trace = Trace::new();
    let script = ScenarioScript::brie();
    let report = run_scenario_traced(&script, Some(trace.clone())).unwrap();
    assert!(report.matches_expected());

    let bytes = trace.bytes();
    assert!(!bytes.is_empty());
    for doc in &script.documents {
        assert!(!contains(&bytes, doc.payload.as_bytes()), "payload of {}", doc.name);
        assert!(!contains(&bytes, doc.policy.as_bytes()), "policy of {}", doc.name);
        let canonical = cake_core::policy::canonicalize(&doc.policy).unwrap();
        assert!(!contains(&bytes, canonical.as_bytes()));
    }
    for name in ["economic_operator", "courier", "customs"] {
        assert!(!contains(&bytes, name.as_bytes()), "attribute {name}");
    }

    // the keys the actors received must not appear either
    let mut world = ScenarioWorld::provision(script.seed, script.actors.len());
    for i in 0..script.actors.len() {
        world.certify(i, script.actor_attributes(i).unwrap()).unwrap();
        let key = world.request_key(i).unwrap();
        for k in key.attribute_keys.values() {
            assert!(!contains(&bytes, k));
        }
    }
}

#[test]
fn requests_without_handshake_are_rejected() {
    let mut world = ScenarioWorld::provision(1, 1);
    world.certify(0, attrs(&["a"])).unwrap();
    let services: [Arc<dyn Service>; 3] = [
        world.network.sdm.clone(),
        world.network.skm.clone(),
        world.network.ud.clone(),
    ];
    let requests = [
        Request::Store {
            slices: vec![SliceInput::new("s", "a", b"x".to_vec())],
        },
        Request::KeyRequest,
        Request::Certify {
            actor: world.actors[0].address(),
            attributes: attrs(&["a"]),
        },
    ];
    for (svc, req) in services.iter().zip(&requests) {
        let mut chan = world.network.open_raw(svc.clone());
        chan.send(&req.encode()).unwrap();
        let reply = chan.recv().unwrap();
        assert_eq!(reply[0], cake_core::protocol::TAG_HANDSHAKE_REJECT);
        // the server hangs up afterwards
        assert!(chan.recv().is_err());
    }
    let h = world.deployment.ledger.height();
    assert_eq!(h, 1, "nothing but the certification was recorded");
}

#[test]
fn replayed_handshake_messages_are_rejected() {
    let mut world = ScenarioWorld::provision(2, 1);
    let trace = Trace::new();
    let skm: Arc<dyn Service> = world.network.skm.clone();
    let public = skm.identity().public();
    let actor = world.actors[0].clone();

    // record an honest handshake
    let raw = world.network.open_raw(skm.clone());
    let recorded = Channel::traced(raw.into_inner(), trace.clone());
    let conn = connect(recorded, &actor, &public, &mut world.rng).unwrap();
    drop(conn);
    let frames: Vec<Vec<u8>> = trace.frames().into_iter().map(|f| f[4..].to_vec()).collect();
    let hello = frames.iter().find(|f| f[0] == TAG_CLIENT_HELLO).unwrap().clone();
    let auth = frames.iter().find(|f| f[0] == TAG_CLIENT_AUTH).unwrap().clone();

    // same hello: the nonce was already used
    let mut chan = world.network.open_raw(skm.clone());
    chan.send(&hello).unwrap();
    let reply = chan.recv().unwrap();
    assert_eq!(
        reply,
        rejection(ProtocolError::ReplayDetected),
        "replayed hello"
    );

    // fresh hello, recorded auth: signed over a different transcript
    let old = ClientHello::decode(&hello).unwrap();
    let fresh = ClientHello {
        nonce: [0x42; 32],
        ..old
    };
    let mut chan = world.network.open_raw(skm);
    chan.send(&fresh.encode()).unwrap();
    chan.recv().unwrap();
    ClientAuth::decode(&auth).unwrap();
    chan.send(&auth).unwrap();
    assert_eq!(chan.recv().unwrap(), rejection(ProtocolError::AuthFailure));
}

fn rejection(e: ProtocolError) -> Vec<u8> {
    let mut enc = cake_core::codec::Encoder::new();
    enc.u32(e.code() as u32).str(&e.detail());
    let mut out = vec![cake_core::protocol::TAG_HANDSHAKE_REJECT];
    out.extend(enc.finish());
    out
}

#[test]
fn certify_and_key_issuance() {
    let mut world = ScenarioWorld::provision(3, 2);
    let courier = attrs(&["29837", "courier"]);
    let loc = world.certify(0, courier.clone()).unwrap();

    // the registry points at metadata holding exactly the certified set
    let handle = cake_core::protocol::actor_handle(&world.master, &world.actors[0].address());
    let record = world.deployment.ledger.actor_get(&handle).unwrap();
    assert_eq!(record.locator, loc.to_string());
    let meta = cake_core::protocol::ActorMetadata::decode(&world.deployment.store.get(&loc).unwrap())
        .unwrap();
    assert_eq!(meta.attributes, courier);
    assert_eq!(meta.actor, world.actors[0].address());
    assert_eq!(meta.certifier, world.certifier.address());

    let key = world.request_key(0).unwrap();
    assert_eq!(key.attributes(), courier);
    assert_eq!(key.holder, world.actors[0].address());

    assert_eq!(world.request_key(1).unwrap_err(), ProtocolError::NotCertified);
    assert_eq!(
        world.certify(1, attrs(&[])).unwrap_err(),
        ProtocolError::EmptyAttributeSet
    );
}

#[test]
fn recertification_changes_the_issued_key() {
    let mut world = ScenarioWorld::provision(4, 1);
    world.certify(0, attrs(&["29837", "courier"])).unwrap();
    let (id, _) = world
        .store(0, vec![SliceInput::new("d", "29837 and customs", b"secret".to_vec())])
        .unwrap();
    let old = world.request_key(0).unwrap();
    let read = |world: &ScenarioWorld, key| {
        client_read(&world.deployment.ledger, &world.deployment.store, &id, key).unwrap()
    };
    assert_eq!(read(&world, &old)[0].1, Err(AbeError::PolicyNotSatisfied));

    world.certify(0, attrs(&["29837", "customs"])).unwrap();
    let new = world.request_key(0).unwrap();
    assert_eq!(new.attributes(), attrs(&["29837", "customs"]));
    assert_eq!(read(&world, &new)[0].1, Ok(b"secret".to_vec()));
}

#[test]
fn only_certifiers_may_certify() {
    let mut world = ScenarioWorld::provision(5, 2);
    world.certify(0, attrs(&["a"])).unwrap();
    let target = world.actors[1].address();
    let me = world.actors[0].clone();
    let mut conn = world.network.connect_ud(&me, &mut world.rng).unwrap();
    assert_eq!(
        conn.certify(&me, target, attrs(&["a"])).unwrap_err(),
        ProtocolError::NotCertifier
    );
}

#[test]
fn tampered_metadata_blocks_key_issuance() {
    let backend = Arc::new(MemoryBackend::new());
    let store = Arc::new(ContentStore::new(Box::new(backend.clone())));
    let mut world = ScenarioWorld::provision_with_store(6, 1, store);
    let loc = world.certify(0, attrs(&["courier"])).unwrap();
    let mut bytes = world.deployment.store.get(&loc).unwrap();
    // flip a byte inside the attribute name
    let pos = bytes.windows(7).position(|w| w == b"courier").unwrap();
    bytes[pos] = b'k';
    backend.overwrite_raw(loc.digest(), bytes);
    assert_eq!(world.request_key(0).unwrap_err(), ProtocolError::IntegrityViolation);
}

#[test]
fn full_path_integrity_conjuncts() {
    let backend = Arc::new(MemoryBackend::new());
    let store = Arc::new(ContentStore::new(Box::new(backend.clone())));
    let mut world = ScenarioWorld::provision_with_store(7, 2, store);
    world.certify(0, attrs(&["x"])).unwrap();
    world.certify(1, attrs(&["y"])).unwrap();
    let (id, loc) = world
        .store(0, vec![SliceInput::new("d", "x", b"body".to_vec())])
        .unwrap();
    let kx = world.request_key(0).unwrap();
    let ky = world.request_key(1).unwrap();
    let ledger = world.deployment.ledger.clone();
    let store = world.deployment.store.clone();

    // all conjuncts hold
    assert_eq!(client_read(&ledger, &store, &id, &kx).unwrap()[0].1, Ok(b"body".to_vec()));
    // policy not satisfied
    assert_eq!(
        client_read(&ledger, &store, &id, &ky).unwrap()[0].1,
        Err(AbeError::PolicyNotSatisfied)
    );
    // no ledger record
    assert_eq!(
        client_read(&ledger, &store, &[0xee; 16], &kx).unwrap_err(),
        ProtocolError::NotFound
    );
    // blob fails verification
    let mut bytes = store.get(&loc).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    backend.overwrite_raw(loc.digest(), bytes);
    assert_eq!(
        client_read(&ledger, &store, &id, &kx).unwrap_err(),
        ProtocolError::IntegrityViolation
    );
}

#[test]
fn message_records_are_sent_by_the_sdm() {
    let mut world = ScenarioWorld::provision(8, 1);
    world.certify(0, attrs(&["x"])).unwrap();
    let (id, loc) = world
        .store(0, vec![SliceInput::new("d", "x", b"body".to_vec())])
        .unwrap();
    let sdm = world.network.sdm.identity().address();
    let record = world.deployment.ledger.message_get(&id).unwrap();
    assert_eq!(record.sender, sdm);
    assert_eq!(record.locator, loc.to_string());
    let block = world.deployment.ledger.block(record.height).unwrap();
    let tx = &block.txs[0];
    assert_eq!(tx.body.contract, Contract::MessageRegistry);
    assert_eq!(tx.sender(), sdm);
    assert_ne!(tx.sender(), world.actors[0].address());
    let receipt = world.deployment.ledger.receipt(&tx.hash()).unwrap();
    assert!(matches!(receipt.status, TxStatus::Applied { .. }));

    let container =
        CiphertextContainer::decode(&world.deployment.store.get(&loc).unwrap()).unwrap();
    assert_eq!(container.message_id, id);
    assert_eq!(
        world.store(0, vec![]).unwrap_err(),
        ProtocolError::EmptyContainer
    );
    assert!(matches!(
        world.store(0, vec![SliceInput::new("d", "x and", b"".to_vec())]),
        Err(ProtocolError::PolicySyntax(_))
    ));
}

#[test]
fn message_ids_are_unique() {
    let mut world = ScenarioWorld::provision(9, 1);
    world.certify(0, attrs(&["x"])).unwrap();
    let mut seen = HashSet::new();
    for i in 0..1000u32 {
        let (id, _) = world
            .network
            .sdm
            .store(&[SliceInput::new("d", "x", i.to_be_bytes().to_vec())])
            .unwrap();
        assert!(seen.insert(id));
    }
    // and across independently seeded deployments
    let mut firsts = HashSet::new();
    for seed in 0..1000u64 {
        let world = ScenarioWorld::provision(seed, 0);
        let (id, _) = world
            .network
            .sdm
            .store(&[SliceInput::new("d", "x", b"same".to_vec())])
            .unwrap();
        assert!(firsts.insert(id));
    }
}

#[test]
fn concurrent_sessions_do_not_interfere() {
    let mut world = ScenarioWorld::provision(10, 4);
    for i in 0..4 {
        world.certify(i, attrs(&["x"])).unwrap();
    }
    let world = Arc::new(world);
    let handles: Vec<_> = (0..4)
        .map(|i| {
            let world = world.clone();
            thread::spawn(move || {
                let mut rng = ChaCha20Rng::seed_from_u64(100 + i as u64);
                let mut ids = Vec::new();
                for n in 0..5u8 {
                    let mut conn = world.network.connect_sdm(&world.actors[i], &mut rng).unwrap();
                    let (id, _) = conn
                        .store(vec![SliceInput::new("d", "x", vec![i as u8, n])])
                        .unwrap();
                    ids.push(id);
                    let mut conn = world.network.connect_skm(&world.actors[i], &mut rng).unwrap();
                    conn.request_key().unwrap();
                }
                ids
            })
        })
        .collect();
    let ids: HashSet<_> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    assert_eq!(ids.len(), 20);
    assert!(world.deployment.ledger.verify_chain().is_valid());
}

#[test]
fn services_work_over_tcp() {
    let mut world = ScenarioWorld::provision(11, 1);
    world.certify(0, attrs(&["x", "y"])).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let skm: Arc<dyn Service> = world.network.skm.clone();
    let public = skm.identity().public();
    thread::spawn(move || cake_core::protocol::serve_tcp(listener, skm));

    let stream = TcpStream::connect(addr).unwrap();
    let mut conn = connect(Channel::new(stream), &world.actors[0], &public, &mut world.rng).unwrap();
    assert_eq!(conn.request_key().unwrap().attributes(), attrs(&["x", "y"]));
    // several requests share one session
    assert!(conn.request_key().is_ok());
}

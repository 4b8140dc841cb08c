use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};

use super::{Address, LedgerError, Rejection};
use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::{sha256, Digest32};

const TX_DOMAIN: &[u8] = b"cake/tx/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Contract {
    MessageRegistry,
    ActorRegistry,
}

impl Contract {
    pub fn tag(self) -> u8 {
        match self {
            Contract::MessageRegistry => 1,
            Contract::ActorRegistry => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, LedgerError> {
        match tag {
            1 => Ok(Contract::MessageRegistry),
            2 => Ok(Contract::ActorRegistry),
            other => Err(LedgerError::UnknownContract(other)),
        }
    }
}

/// Everything in a transaction except the signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxBody {
    pub sender: Address,
    pub sender_key: [u8; 32],
    pub contract: Contract,
    pub method: String,
    pub args: Vec<u8>,
    pub sender_nonce: u64,
}

impl TxBody {
    pub fn new(
        key: &VerifyingKey,
        contract: Contract,
        method: &str,
        args: Vec<u8>,
        sender_nonce: u64,
    ) -> Self {
        Self {
            sender: Address::from_public_key(key),
            sender_key: key.to_bytes(),
            contract,
            method: method.to_string(),
            args,
            sender_nonce,
        }
    }

    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(self.sender.as_bytes())
            .field(&self.sender_key)
            .u8(self.contract.tag())
            .str(&self.method)
            .field(&self.args)
            .u64(self.sender_nonce);
    }

    /// The exact bytes covered by the sender's signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.field(TX_DOMAIN);
        self.encode_into(&mut enc);
        enc.finish()
    }

    pub fn sign(self, key: &SigningKey) -> Transaction {
        let signature = key.sign(&self.signing_bytes()).to_bytes();
        Transaction {
            body: self,
            signature,
        }
    }

    pub fn with_signature(self, signature: [u8; 64]) -> Transaction {
        Transaction {
            body: self,
            signature,
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, LedgerError> {
        let mut dec = Decoder::new(bytes);
        if dec.field()? != TX_DOMAIN {
            return Err(DecodeError::Invalid("not a transaction body".into()).into());
        }
        let body = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(body)
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, LedgerError> {
        let sender = Address::from_bytes(dec.fixed()?);
        let sender_key = dec.fixed()?;
        let contract = Contract::from_tag(dec.u8()?)?;
        let method = dec.string()?;
        let args = dec.field()?.to_vec();
        let sender_nonce = dec.u64()?;
        Ok(Self {
            sender,
            sender_key,
            contract,
            method,
            args,
            sender_nonce,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub body: TxBody,
    pub signature: [u8; 64],
}

impl Transaction {
    pub fn sender(&self) -> Address {
        self.body.sender
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.body.encode_into(&mut enc);
        enc.field(&self.signature);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, LedgerError> {
        let mut dec = Decoder::new(bytes);
        let tx = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(tx)
    }

    pub(crate) fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, LedgerError> {
        let body = TxBody::decode_from(dec)?;
        let signature = dec.fixed()?;
        Ok(Self { body, signature })
    }

    pub fn hash(&self) -> Digest32 {
        sha256(&self.encode())
    }

    /// Checks the key-to-address binding and the signature.
    pub fn verify_signature(&self) -> Result<(), LedgerError> {
        let key =
            VerifyingKey::from_bytes(&self.body.sender_key).map_err(|_| LedgerError::BadSignature)?;
        if Address::from_public_key(&key) != self.body.sender {
            return Err(LedgerError::BadSignature);
        }
        key.verify(
            &self.body.signing_bytes(),
            &Signature::from_bytes(&self.signature),
        )
        .map_err(|_| LedgerError::BadSignature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxStatus {
    Pending,
    Applied { height: u64 },
    Rejected { height: u64, reason: Rejection },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxReceipt {
    pub tx_hash: Digest32,
    pub status: TxStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest32,
    pub txs: Vec<Transaction>,
    pub block_hash: Digest32,
}

impl Block {
    pub fn new(height: u64, prev_hash: Digest32, txs: Vec<Transaction>) -> Self {
        let mut block = Self {
            height,
            prev_hash,
            txs,
            block_hash: [0; 32],
        };
        block.block_hash = block.compute_hash();
        block
    }

    fn header_and_body(&self) -> Encoder {
        let mut enc = Encoder::new();
        enc.u64(self.height)
            .field(&self.prev_hash)
            .list(&self.txs, |tx, e| {
                tx.body.encode_into(e);
                e.field(&tx.signature);
            });
        enc
    }

    pub fn compute_hash(&self) -> Digest32 {
        sha256(&self.header_and_body().finish())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = self.header_and_body();
        enc.field(&self.block_hash);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, LedgerError> {
        let mut dec = Decoder::new(bytes);
        let height = dec.u64()?;
        let prev_hash = dec.fixed()?;
        let count = dec.u32()? as usize;
        if count > dec.remaining() / 4 {
            return Err(DecodeError::Truncated(dec.position()).into());
        }
        let mut txs = Vec::with_capacity(count);
        for _ in 0..count {
            let mut inner = Decoder::new(dec.field()?);
            txs.push(Transaction::decode_from(&mut inner)?);
            inner.finish()?;
        }
        let block_hash = dec.fixed()?;
        dec.finish()?;
        Ok(Self {
            height,
            prev_hash,
            txs,
            block_hash,
        })
    }
}

//! Canonical byte serialization for protocol artifacts.
//!
//! Signing and hashing always operate on these exact byte strings, so the
//! format is part of the protocol:
//!
//! * integers are little-endian fixed width (`u16`/`u32`/`u64`);
//! * variable-length byte fields are length-prefixed with a `u32`;
//! * digests are raw 32 bytes, no prefix;
//! * fields are concatenated in declaration order, no framing or padding.
//!
//! Concretely:
//!
//! ```text
//! Transaction   = bytes(sender) || bytes(receiver) || u64(amount)
//!                 || u64(epoch_tag) || bytes(signature)
//! (signing form = the same without the trailing signature field)
//! BlockHeader   = u64(epoch) || prev_block_hash || last_checkpoint
//!                 || tx_root || account_root
//! Checkpoint    = block_hash || bytes(qc) || u64(index.value) || u16(index.n)
//! Block         = BlockHeader || u32(#txs) || Transaction*
//!                 || u32(#accounts) || (bytes(id) || u64(balance))*
//! ```
//!
//! Account bindings in a block are sorted by account id bytes; decoding
//! enforces this so a block has exactly one valid encoding.

use thiserror::Error;

use crate::chain::{AccountId, Block, BlockHeader, Checkpoint, SignerIndex, Transaction};
use crate::crypto::{AggregateSignature, Signature};
use crate::merkle::Digest;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("input truncated")]
    Truncated,
    #[error("trailing bytes after value")]
    TrailingBytes,
    #[error("length prefix exceeds remaining input")]
    BadLength,
    #[error("account bindings not sorted by id")]
    UnsortedAccounts,
}

pub fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() - self.pos < n {
            return Err(CodecError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn digest(&mut self) -> Result<Digest, CodecError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, CodecError> {
        let len = self.u32()? as usize;
        if self.buf.len() - self.pos < len {
            return Err(CodecError::BadLength);
        }
        Ok(self.take(len)?.to_vec())
    }

    pub fn finish(self) -> Result<(), CodecError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(CodecError::TrailingBytes)
        }
    }
}

pub fn tx_signing_bytes(tx: &Transaction) -> Vec<u8> {
    let mut out = Vec::new();
    put_bytes(&mut out, &tx.sender.0);
    put_bytes(&mut out, &tx.receiver.0);
    out.extend_from_slice(&tx.amount.to_le_bytes());
    out.extend_from_slice(&tx.epoch_tag.to_le_bytes());
    out
}

pub fn tx_bytes(tx: &Transaction) -> Vec<u8> {
    let mut out = tx_signing_bytes(tx);
    put_bytes(&mut out, &tx.signature.0);
    out
}

pub fn read_tx(r: &mut Reader) -> Result<Transaction, CodecError> {
    Ok(Transaction {
        sender: AccountId(r.bytes()?),
        receiver: AccountId(r.bytes()?),
        amount: r.u64()?,
        epoch_tag: r.u64()?,
        signature: Signature(r.bytes()?),
    })
}

pub fn decode_tx(buf: &[u8]) -> Result<Transaction, CodecError> {
    let mut r = Reader::new(buf);
    let tx = read_tx(&mut r)?;
    r.finish()?;
    Ok(tx)
}

pub fn header_bytes(h: &BlockHeader) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 32 * 4);
    out.extend_from_slice(&h.epoch.to_le_bytes());
    out.extend_from_slice(&h.prev_block_hash);
    out.extend_from_slice(&h.last_checkpoint);
    out.extend_from_slice(&h.tx_root);
    out.extend_from_slice(&h.account_root);
    out
}

pub fn read_header(r: &mut Reader) -> Result<BlockHeader, CodecError> {
    Ok(BlockHeader {
        epoch: r.u64()?,
        prev_block_hash: r.digest()?,
        last_checkpoint: r.digest()?,
        tx_root: r.digest()?,
        account_root: r.digest()?,
    })
}

pub fn checkpoint_bytes(cp: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&cp.block_hash);
    put_bytes(&mut out, &cp.qc.0);
    out.extend_from_slice(&cp.index.value.to_le_bytes());
    out.extend_from_slice(&cp.index.n.to_le_bytes());
    out
}

pub fn read_checkpoint(r: &mut Reader) -> Result<Checkpoint, CodecError> {
    Ok(Checkpoint {
        block_hash: r.digest()?,
        qc: AggregateSignature(r.bytes()?),
        index: SignerIndex {
            value: r.u64()?,
            n: r.u16()?,
        },
    })
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint, CodecError> {
    let mut r = Reader::new(buf);
    let cp = read_checkpoint(&mut r)?;
    r.finish()?;
    Ok(cp)
}

pub fn block_bytes(b: &Block) -> Vec<u8> {
    let mut out = header_bytes(&b.header);
    out.extend_from_slice(&(b.txs.len() as u32).to_le_bytes());
    for tx in &b.txs {
        out.extend_from_slice(&tx_bytes(tx));
    }
    out.extend_from_slice(&(b.accounts.len() as u32).to_le_bytes());
    for (id, balance) in &b.accounts {
        put_bytes(&mut out, &id.0);
        out.extend_from_slice(&balance.to_le_bytes());
    }
    out
}

pub fn read_block(r: &mut Reader) -> Result<Block, CodecError> {
    let header = read_header(r)?;
    let ntx = r.u32()? as usize;
    let mut txs = Vec::with_capacity(ntx.min(1 << 16));
    for _ in 0..ntx {
        txs.push(read_tx(r)?);
    }
    let nacc = r.u32()? as usize;
    let mut accounts: Vec<(AccountId, u64)> = Vec::with_capacity(nacc.min(1 << 16));
    for _ in 0..nacc {
        let id = AccountId(r.bytes()?);
        let balance = r.u64()?;
        if let Some((prev, _)) = accounts.last() {
            if *prev >= id {
                return Err(CodecError::UnsortedAccounts);
            }
        }
        accounts.push((id, balance));
    }
    Ok(Block {
        header,
        txs,
        accounts,
    })
}

pub fn decode_block(buf: &[u8]) -> Result<Block, CodecError> {
    let mut r = Reader::new(buf);
    let block = read_block(&mut r)?;
    r.finish()?;
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merkle::ZERO_DIGEST;

    fn sample_block() -> Block {
        let tx = Transaction {
            sender: AccountId(vec![1, 2, 3]),
            receiver: AccountId(vec![4, 5]),
            amount: 7,
            epoch_tag: 2,
            signature: Signature(vec![9; 32]),
        };
        Block {
            header: BlockHeader {
                epoch: 2,
                prev_block_hash: [1; 32],
                last_checkpoint: [2; 32],
                tx_root: [3; 32],
                account_root: [4; 32],
            },
            txs: vec![tx],
            accounts: vec![(AccountId(vec![1, 2, 3]), 3), (AccountId(vec![4, 5]), 7)],
        }
    }

    #[test]
    fn header_encoding_is_fixed_width() {
        let b = sample_block();
        assert_eq!(header_bytes(&b.header).len(), 8 + 4 * 32);
    }

    #[test]
    fn block_round_trip() {
        let b = sample_block();
        let bytes = block_bytes(&b);
        let d = decode_block(&bytes).unwrap();
        assert_eq!(d, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cp = Checkpoint {
            block_hash: [7; 32],
            qc: AggregateSignature(vec![8; 96]),
            index: SignerIndex {
                value: 0b01011,
                n: 5,
            },
        };
        assert_eq!(decode_checkpoint(&checkpoint_bytes(&cp)).unwrap(), cp);
    }

    #[test]
    fn signing_bytes_exclude_signature() {
        let b = sample_block();
        let mut tx = b.txs[0].clone();
        let signing = tx_signing_bytes(&tx);
        tx.signature = Signature(vec![0xAA; 32]);
        assert_eq!(tx_signing_bytes(&tx), signing);
        assert_ne!(tx_bytes(&tx), tx_bytes(&b.txs[0]));
    }

    #[test]
    fn truncated_and_trailing_input_rejected() {
        let b = sample_block();
        let bytes = block_bytes(&b);
        assert_eq!(
            decode_block(&bytes[..bytes.len() - 1]),
            Err(CodecError::Truncated)
        );
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(decode_block(&extra), Err(CodecError::TrailingBytes));
    }

    #[test]
    fn unsorted_accounts_rejected() {
        let mut b = sample_block();
        b.accounts.swap(0, 1);
        assert_eq!(
            decode_block(&block_bytes(&b)),
            Err(CodecError::UnsortedAccounts)
        );
    }

    #[test]
    fn oversized_length_prefix_rejected() {
        let mut out = Vec::new();
        out.extend_from_slice(&u32::MAX.to_le_bytes());
        out.push(1);
        let mut r = Reader::new(&out);
        assert_eq!(r.bytes(), Err(CodecError::BadLength));
        let _ = ZERO_DIGEST;
    }
}

use super::ModelConfig;
use crate::{Error, Result};

/// Per-layer keys and values for the positions seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    kv_dim: usize,
    capacity: usize,
    len: usize,
    prompt_len: usize,
}

impl KvCache {
    pub fn new(config: &ModelConfig) -> Self {
        let kv_dim = config.kv_dim();
        let cap = config.max_seq * kv_dim;
        Self {
            keys: (0..config.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..config.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            kv_dim,
            capacity: config.max_seq,
            len: 0,
            prompt_len: 0,
        }
    }

    /// Number of positions fully written (all layers).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Positions written by prefill.
    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub(crate) fn mark_prompt(&mut self) {
        self.prompt_len = self.len;
    }

    pub(crate) fn ensure_room(&self, extra: usize) -> Result<()> {
        if self.len + extra > self.capacity {
            return Err(Error::CacheOverflow {
                capacity: self.capacity,
            });
        }
        Ok(())
    }

    pub(crate) fn push(&mut self, layer: usize, k: &[f64], v: &[f64]) {
        debug_assert_eq!(k.len(), self.kv_dim);
        self.keys[layer].extend_from_slice(k);
        self.values[layer].extend_from_slice(v);
    }

    /// Commits positions after every layer has pushed them.
    pub(crate) fn advance(&mut self, n: usize) {
        self.len += n;
        debug_assert!(self.keys.iter().all(|k| k.len() == self.len * self.kv_dim));
    }

    /// Drops keys and values pushed since the last `advance`.
    pub(crate) fn rollback(&mut self) {
        let n = self.len * self.kv_dim;
        for k in &mut self.keys {
            k.truncate(n);
        }
        for v in &mut self.values {
            v.truncate(n);
        }
    }

    pub(crate) fn key(&self, layer: usize, pos: usize) -> &[f64] {
        &self.keys[layer][pos * self.kv_dim..(pos + 1) * self.kv_dim]
    }

    pub(crate) fn value(&self, layer: usize, pos: usize) -> &[f64] {
        &self.values[layer][pos * self.kv_dim..(pos + 1) * self.kv_dim]
    }
}

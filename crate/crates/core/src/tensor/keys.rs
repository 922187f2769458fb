use crate::error::{Error, Result};

/// For every query row, the key rows it may attend to, in order. Gathered
/// score matrices are `rows × width`; entries past a row's own list are
/// padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyIndex {
    offsets: Vec<usize>,
    keys: Vec<usize>,
    width: usize,
}

impl KeyIndex {
    /// Fails if any list is empty.
    pub fn new<I, L>(lists: I) -> Result<Self>
    where
        I: IntoIterator<Item = L>,
        L: IntoIterator<Item = usize>,
    {
        let mut offsets = vec![0];
        let mut keys = Vec::new();
        let mut width = 0;
        for list in lists {
            keys.extend(list);
            let len = keys.len() - offsets.last().expect("starts with 0");
            if len == 0 {
                return Err(Error::contract(format!("query row {} has no keys", offsets.len() - 1)));
            }
            width = width.max(len);
            offsets.push(keys.len());
        }
        Ok(Self { offsets, keys, width })
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn keys(&self, row: usize) -> &[usize] {
        &self.keys[self.offsets[row]..self.offsets[row + 1]]
    }

    /// Largest key row referenced, plus one.
    pub fn key_bound(&self) -> usize {
        self.keys.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Row-major `rows × width` mask, true on real (non-padding) entries.
    pub fn keep(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.rows() * self.width);
        for r in 0..self.rows() {
            let n = self.keys(r).len();
            out.extend((0..self.width).map(|j| j < n));
        }
        out
    }
}
